//! Model compact Riemannian manifolds with normalized measure.
//!
//! Two families are implemented:
//!
//! * **`Torus(d)`** — the flat torus `(R / 2πZ)^d` with the Euclidean metric,
//!   so angle coordinates are arc length and the diameter is `π√d`. The
//!   circle is `Torus(1)`.
//! * **`Sphere2`** — the unit sphere `S² ⊂ R³` in colatitude/longitude
//!   coordinates `(θ, φ)`, `θ ∈ [0, π]`, geodesic distance = central angle.
//!
//! Every manifold carries the *normalized* measure `μ(M) = 1` (Lebesgue over
//! `(2π)^d` on tori, solid angle over `4π` on the sphere); all integrals and
//! quadrature rules in this crate are with respect to `μ`.
//!
//! Tangent vectors are stored as components in an orthonormal frame:
//! `(∂/∂θ_1, …, ∂/∂θ_d)` on tori, `(∂θ, ∂φ / sin θ)` on the sphere. At the
//! two sphere poles the frame is the limit along the meridian of the stored
//! longitude, which keeps every first-order operation (gradients, exp, log)
//! finite; see `spectral` for how eigenfunction gradients stay pole-safe.

use crate::error::{Error, Result};
use crate::util::gauss::gauss_legendre;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;

/// Coordinates of a manifold point: `d` angles on `Torus(d)`, `(θ, φ)` on
/// `Sphere2`. Serialized as a plain JSON array.
pub type Point = Vec<f64>;

/// A tangent vector attached to a base point, with components in the
/// manifold's orthonormal frame (see module docs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: Point,
    pub components: Vec<f64>,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector {
            base: self.base.clone(),
            components: self.components.iter().map(|c| c * s).collect(),
        }
    }
}

/// Which model manifold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    /// Flat torus of dimension `d ≥ 1`, side 2π. `Torus(1)` is the circle.
    Torus(u32),
    /// Unit two-sphere.
    Sphere2,
}

impl ManifoldKind {
    /// String tag used by serialization and the command line:
    /// `"torus1"`, `"torus2"`, …, `"sphere2"`; `"circle"` is accepted as an
    /// alias for `"torus1"`.
    pub fn tag(&self) -> String {
        match self {
            ManifoldKind::Torus(d) => format!("torus{d}"),
            ManifoldKind::Sphere2 => "sphere2".to_string(),
        }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        let t = tag.trim().to_ascii_lowercase();
        if t == "circle" {
            return Ok(ManifoldKind::Torus(1));
        }
        if t == "sphere2" {
            return Ok(ManifoldKind::Sphere2);
        }
        if let Some(ds) = t.strip_prefix("torus") {
            let d: u32 = ds
                .parse()
                .map_err(|_| Error::invalid(format!("bad torus dimension in tag '{tag}'")))?;
            if d == 0 {
                return Err(Error::invalid("torus dimension must be >= 1"));
            }
            return Ok(ManifoldKind::Torus(d));
        }
        Err(Error::invalid(format!(
            "unknown manifold tag '{tag}' (expected torus<d>, sphere2, or circle)"
        )))
    }
}

impl Serialize for ManifoldKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.tag())
    }
}

impl<'de> Deserialize<'de> for ManifoldKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ManifoldKind::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Equal-weight quadrature rule for the normalized measure.
///
/// `exactness` is the largest integer `E` certified by construction such
/// that every eigenfunction with `0 < λ_k ≤ E` integrates to zero under the
/// rule (exactly, up to rounding). Both constructions set
/// `exactness = resolution − 1`; the default resolution policy
/// [`ManifoldModel::default_resolution`] makes all products of basis
/// elements of bandwidth `L` exact as well.
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    pub exactness: u32,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// ∫ f dμ by the rule (compensated summation, deterministic order).
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let mut sum = 0.0;
        let mut comp = 0.0;
        for (x, &w) in self.nodes.iter().zip(&self.weights) {
            let term = w * f(x);
            let y = term - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        sum
    }
}

/// Kahan-compensated sum of a slice.
pub fn kahan_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// One row of a ball-measure profile: empirical bounds of `μ(B(x, r)) / r^d`
/// over random centers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BallMeasureRow {
    pub radius: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
}

/// A model manifold with its metric, measure, and quadrature constructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManifoldModel {
    pub kind: ManifoldKind,
}

impl ManifoldModel {
    pub fn new(kind: ManifoldKind) -> Self {
        ManifoldModel { kind }
    }

    pub fn torus(d: u32) -> Self {
        assert!(d >= 1, "torus dimension must be >= 1");
        ManifoldModel { kind: ManifoldKind::Torus(d) }
    }

    /// The circle = `Torus(1)`.
    pub fn circle() -> Self {
        Self::torus(1)
    }

    pub fn sphere2() -> Self {
        ManifoldModel { kind: ManifoldKind::Sphere2 }
    }

    pub fn parse(tag: &str) -> Result<Self> {
        Ok(ManifoldModel { kind: ManifoldKind::parse(tag)? })
    }

    pub fn tag(&self) -> String {
        self.kind.tag()
    }

    /// Riemannian dimension.
    pub fn dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Torus(d) => d as usize,
            ManifoldKind::Sphere2 => 2,
        }
    }

    /// Geodesic diameter: `π√d` on `Torus(d)`, `π` on the sphere.
    pub fn diameter(&self) -> f64 {
        match self.kind {
            ManifoldKind::Torus(d) => PI * (d as f64).sqrt(),
            ManifoldKind::Sphere2 => PI,
        }
    }

    /// Number of frame components of a tangent vector (= `dim`).
    pub fn frame_dim(&self) -> usize {
        self.dim()
    }

    /// Validates raw coordinates and returns the canonical representative.
    ///
    /// Tori: any finite angles, wrapped into `[0, 2π)`. Sphere: either
    /// `(θ, φ)` with `θ ∈ [0, π]` (tolerance 1e-9, then clamped) and finite
    /// `φ` wrapped into `[0, 2π)`, or an embedded `(x, y, z)` triple that
    /// must be unit to within 1e-9.
    pub fn canonicalize(&self, raw: &[f64]) -> Result<Point> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        match self.kind {
            ManifoldKind::Torus(d) => {
                if raw.len() != d as usize {
                    return Err(Error::invalid(format!(
                        "torus{} point needs {} coordinates, got {}",
                        d,
                        d,
                        raw.len()
                    )));
                }
                Ok(raw.iter().map(|&a| wrap_angle(a)).collect())
            }
            ManifoldKind::Sphere2 => match raw.len() {
                2 => {
                    let theta = raw[0];
                    if !(-1e-9..=PI + 1e-9).contains(&theta) {
                        return Err(Error::invalid(format!(
                            "sphere colatitude {theta} out of [0, π]"
                        )));
                    }
                    Ok(vec![theta.clamp(0.0, PI), wrap_angle(raw[1])])
                }
                3 => {
                    let n = (raw[0] * raw[0] + raw[1] * raw[1] + raw[2] * raw[2]).sqrt();
                    if (n - 1.0).abs() > 1e-9 {
                        return Err(Error::invalid(format!(
                            "sphere point has norm {n}, not unit within 1e-9"
                        )));
                    }
                    Ok(xyz_to_sph(&[raw[0] / n, raw[1] / n, raw[2] / n]).to_vec())
                }
                k => Err(Error::invalid(format!(
                    "sphere point needs 2 (θ,φ) or 3 (x,y,z) coordinates, got {k}"
                ))),
            },
        }
    }

    /// Geodesic distance.
    pub fn distance(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.kind {
            ManifoldKind::Torus(_) => {
                let mut s = 0.0;
                for (a, b) in x.iter().zip(y) {
                    let d = wrap_signed(a - b);
                    s += d * d;
                }
                s.sqrt()
            }
            ManifoldKind::Sphere2 => {
                let p = sph_to_xyz(x[0], x[1]);
                let q = sph_to_xyz(y[0], y[1]);
                central_angle(&p, &q)
            }
        }
    }

    /// Unit frame field `e_dir` at `x`.
    pub fn frame_vector(&self, x: &[f64], dir: usize) -> TangentVector {
        let mut components = vec![0.0; self.frame_dim()];
        components[dir] = 1.0;
        TangentVector { base: x.to_vec(), components }
    }

    /// Exponential map: the point at arc length `t · ‖v‖` along the geodesic
    /// leaving `v.base` with initial velocity `v`.
    pub fn exp_map(&self, v: &TangentVector, t: f64) -> Point {
        let x = &v.base;
        match self.kind {
            ManifoldKind::Torus(_) => x
                .iter()
                .zip(&v.components)
                .map(|(a, c)| wrap_angle(a + t * c))
                .collect(),
            ManifoldKind::Sphere2 => {
                let speed = v.norm();
                let s = t * speed;
                if s == 0.0 {
                    return x.clone();
                }
                let p = sph_to_xyz(x[0], x[1]);
                let (et, ep) = sphere_frame(x[0], x[1]);
                let u = [
                    (v.components[0] * et[0] + v.components[1] * ep[0]) / speed,
                    (v.components[0] * et[1] + v.components[1] * ep[1]) / speed,
                    (v.components[0] * et[2] + v.components[1] * ep[2]) / speed,
                ];
                let (cs, sn) = (s.cos(), s.sin());
                let q = [
                    cs * p[0] + sn * u[0],
                    cs * p[1] + sn * u[1],
                    cs * p[2] + sn * u[2],
                ];
                xyz_to_sph(&q).to_vec()
            }
        }
    }

    /// Inverse of the exponential map along a minimizing geodesic.
    ///
    /// Cut-locus convention (deterministic): on tori each coordinate
    /// difference is wrapped into `[-π, π)`; on the sphere the antipode maps
    /// to the `∂θ` direction.
    pub fn log_map(&self, x: &[f64], y: &[f64]) -> TangentVector {
        match self.kind {
            ManifoldKind::Torus(_) => {
                let components = y.iter().zip(x).map(|(b, a)| wrap_signed(b - a)).collect();
                TangentVector { base: x.to_vec(), components }
            }
            ManifoldKind::Sphere2 => {
                let p = sph_to_xyz(x[0], x[1]);
                let q = sph_to_xyz(y[0], y[1]);
                let dot = (p[0] * q[0] + p[1] * q[1] + p[2] * q[2]).clamp(-1.0, 1.0);
                let gamma = central_angle(&p, &q);
                let w = [q[0] - dot * p[0], q[1] - dot * p[1], q[2] - dot * p[2]];
                let wn = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
                let (et, ep) = sphere_frame(x[0], x[1]);
                if wn < 1e-14 {
                    // coincident (γ=0) or antipodal (γ=π): pick ∂θ.
                    return TangentVector { base: x.to_vec(), components: vec![gamma, 0.0] };
                }
                let a = gamma * (w[0] * et[0] + w[1] * et[1] + w[2] * et[2]) / wn;
                let b = gamma * (w[0] * ep[0] + w[1] * ep[1] + w[2] * ep[2]) / wn;
                TangentVector { base: x.to_vec(), components: vec![a, b] }
            }
        }
    }

    /// Parallel transport of `v` (based at `x`) to `y` along the minimizing
    /// geodesic. Identity on tori.
    pub fn transport(&self, v: &TangentVector, y: &[f64]) -> TangentVector {
        match self.kind {
            ManifoldKind::Torus(_) => {
                TangentVector { base: y.to_vec(), components: v.components.clone() }
            }
            ManifoldKind::Sphere2 => {
                let x = &v.base;
                let lg = self.log_map(x, y);
                let gamma = lg.norm();
                if gamma < 1e-15 {
                    return TangentVector { base: y.to_vec(), components: v.components.clone() };
                }
                let p = sph_to_xyz(x[0], x[1]);
                let (etx, epx) = sphere_frame(x[0], x[1]);
                // unit tangent of the geodesic at x, ambient
                let ux = [
                    (lg.components[0] * etx[0] + lg.components[1] * epx[0]) / gamma,
                    (lg.components[0] * etx[1] + lg.components[1] * epx[1]) / gamma,
                    (lg.components[0] * etx[2] + lg.components[1] * epx[2]) / gamma,
                ];
                // ambient form of v
                let va = [
                    v.components[0] * etx[0] + v.components[1] * epx[0],
                    v.components[0] * etx[1] + v.components[1] * epx[1],
                    v.components[0] * etx[2] + v.components[1] * epx[2],
                ];
                let along = va[0] * ux[0] + va[1] * ux[1] + va[2] * ux[2];
                // tangent of the geodesic arriving at y
                let (cg, sg) = (gamma.cos(), gamma.sin());
                let uy = [
                    cg * ux[0] - sg * p[0],
                    cg * ux[1] - sg * p[1],
                    cg * ux[2] - sg * p[2],
                ];
                let wy = [
                    along * uy[0] + (va[0] - along * ux[0]),
                    along * uy[1] + (va[1] - along * ux[1]),
                    along * uy[2] + (va[2] - along * ux[2]),
                ];
                let (ety, epy) = sphere_frame(y[0], y[1]);
                TangentVector {
                    base: y.to_vec(),
                    components: vec![
                        wy[0] * ety[0] + wy[1] * ety[1] + wy[2] * ety[2],
                        wy[0] * epy[0] + wy[1] * epy[1] + wy[2] * epy[2],
                    ],
                }
            }
        }
    }

    /// Point at parameter `s ∈ [0, 1]` along the minimizing geodesic x → y.
    pub fn geodesic_point(&self, x: &[f64], y: &[f64], s: f64) -> Point {
        let v = self.log_map(x, y);
        self.exp_map(&v, s)
    }

    /// μ-uniform random point.
    pub fn random_point(&self, rng: &mut impl Rng) -> Point {
        match self.kind {
            ManifoldKind::Torus(d) => (0..d).map(|_| rng.gen_range(0.0..TAU)).collect(),
            ManifoldKind::Sphere2 => {
                let z: f64 = rng.gen_range(-1.0..1.0);
                let phi: f64 = rng.gen_range(0.0..TAU);
                vec![z.acos(), phi]
            }
        }
    }

    /// Default quadrature resolution for bandwidth-`L` workloads:
    /// `max(⌈4L⌉ + 2, 16)`. At this resolution all products of two basis
    /// elements of bandwidth ≤ L integrate exactly on both manifold families.
    pub fn default_resolution(&self, bandwidth: f64) -> u32 {
        (((4.0 * bandwidth).ceil() as i64) + 2).max(16) as u32
    }

    /// Product quadrature rule for the normalized measure.
    ///
    /// * Tori: the uniform `resolution^d` grid with equal weights; exact for
    ///   every integer frequency not divisible by `resolution`, hence
    ///   `exactness = resolution − 1`.
    /// * Sphere: `resolution`-point Gauss–Legendre in `cos θ` × `resolution`
    ///   uniform longitudes; exact for all spherical harmonics of degree
    ///   `< resolution` (and products of degree `< resolution` harmonics).
    pub fn quadrature(&self, resolution: u32) -> QuadratureRule {
        assert!(resolution >= 1);
        match self.kind {
            ManifoldKind::Torus(d) => {
                let n = resolution as usize;
                let total = n.pow(d);
                let mut nodes = Vec::with_capacity(total);
                let step = TAU / n as f64;
                let mut idx = vec![0usize; d as usize];
                loop {
                    nodes.push(idx.iter().map(|&i| i as f64 * step).collect::<Vec<_>>());
                    // odometer increment
                    let mut k = 0;
                    loop {
                        if k == d as usize {
                            break;
                        }
                        idx[k] += 1;
                        if idx[k] < n {
                            break;
                        }
                        idx[k] = 0;
                        k += 1;
                    }
                    if k == d as usize {
                        break;
                    }
                }
                let w = 1.0 / total as f64;
                QuadratureRule {
                    weights: vec![w; nodes.len()],
                    nodes,
                    exactness: resolution - 1,
                }
            }
            ManifoldKind::Sphere2 => {
                let n = resolution as usize;
                let (z, wz) = gauss_legendre(n);
                let mut nodes = Vec::with_capacity(n * n);
                let mut weights = Vec::with_capacity(n * n);
                let dphi = TAU / n as f64;
                for i in 0..n {
                    let theta = z[i].clamp(-1.0, 1.0).acos();
                    let w = wz[i] / 2.0 / n as f64;
                    for j in 0..n {
                        nodes.push(vec![theta, j as f64 * dphi]);
                        weights.push(w);
                    }
                }
                QuadratureRule { nodes, weights, exactness: resolution - 1 }
            }
        }
    }

    /// Quadrature estimate of `μ(B(x, r))` (indicator integration; accuracy
    /// is O(1/resolution), adequate for profiling measure bounds).
    pub fn ball_measure(&self, x: &[f64], r: f64, rule: &QuadratureRule) -> f64 {
        rule.integrate(|y| if self.distance(x, y) <= r { 1.0 } else { 0.0 })
    }

    /// Empirical Ahlfors-regularity profile: for each radius, the min and max
    /// of `μ(B(x, r)) / r^d` over `centers` random centers.
    pub fn ball_measure_profile(
        &self,
        radii: &[f64],
        centers: usize,
        seed: u64,
        resolution: u32,
    ) -> Vec<BallMeasureRow> {
        let rule = self.quadrature(resolution);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<Point> = (0..centers).map(|_| self.random_point(&mut rng)).collect();
        let d = self.dim() as i32;
        radii
            .iter()
            .map(|&r| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for x in &xs {
                    let ratio = self.ball_measure(x, r, &rule) / r.powi(d);
                    lo = lo.min(ratio);
                    hi = hi.max(ratio);
                }
                BallMeasureRow { radius: r, min_ratio: lo, max_ratio: hi }
            })
            .collect()
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TAU * (a / TAU).floor();
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps a difference of angles into `[-π, π)`.
pub fn wrap_signed(a: f64) -> f64 {
    let w = wrap_angle(a);
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Central angle between unit vectors, well-conditioned at both ends
/// (half-chord `asin` forms instead of `acos`, whose resolution floor near
/// coincident points is ~1.5e-8).
pub fn central_angle(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    let dot = p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
    if dot >= 0.0 {
        let diff = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        2.0 * (diff / 2.0).min(1.0).asin()
    } else {
        let sum = ((p[0] + q[0]).powi(2) + (p[1] + q[1]).powi(2) + (p[2] + q[2]).powi(2)).sqrt();
        PI - 2.0 * (sum / 2.0).min(1.0).asin()
    }
}

/// Embedding `S² → R³`.
pub fn sph_to_xyz(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = (theta.sin(), theta.cos());
    let (sp, cp) = (phi.sin(), phi.cos());
    [st * cp, st * sp, ct]
}

/// Inverse embedding; `φ` from `atan2` wrapped into `[0, 2π)` (0 at poles).
pub fn xyz_to_sph(p: &[f64; 3]) -> [f64; 2] {
    let theta = p[2].clamp(-1.0, 1.0).acos();
    let phi = if p[0] == 0.0 && p[1] == 0.0 { 0.0 } else { wrap_angle(p[1].atan2(p[0])) };
    [theta, phi]
}

/// Orthonormal frame `(e_θ, e_φ)` at `(θ, φ)`, ambient components. Defined
/// for all θ (meridian limit at the poles).
pub fn sphere_frame(theta: f64, phi: f64) -> ([f64; 3], [f64; 3]) {
    let (st, ct) = (theta.sin(), theta.cos());
    let (sp, cp) = (phi.sin(), phi.cos());
    ([ct * cp, ct * sp, -st], [-sp, cp, 0.0])
}
