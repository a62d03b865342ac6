//! Laplace–Beltrami eigenbases, diffusion polynomials, and heat-type sums.
//!
//! Eigenfunctions are orthonormal in `L²(M, μ)` with the *normalized*
//! measure, `Δφ_k = λ_k² φ_k`, `λ_0 = 0`, `φ_0 ≡ 1`.
//!
//! * `Torus(d)`: for each integer frequency `k ∈ Z^d \ {0}` (one canonical
//!   representative per `±k` pair) the pair `√2 cos(k·θ)`, `√2 sin(k·θ)`
//!   with `λ = |k|`; plus the constant.
//! * `Sphere2`: real spherical harmonics with `λ = √(ℓ(ℓ+1))`, normalized to
//!   the probability measure (i.e. `√(4π)` times the unit-`L²(dΩ)` ones):
//!
//!   ```text
//!   φ_{ℓ0}       = √(2ℓ+1) P_ℓ(cos θ)
//!   φ_{ℓ,±m}    = √(2(2ℓ+1)(ℓ−m)!/(ℓ+m)!) P_ℓ^m(cos θ) · {cos, sin}(mφ)
//!   ```
//!
//!   with the Condon–Shortley phase `(−1)^m` *included* in `P_ℓ^m`.
//!
//! Colatitude factors are evaluated through the normalized functions
//! `R̄_{ℓm}(cos θ) = φ-normalization · P_ℓ^m(cos θ) / sin^m θ`, which satisfy
//! the same three-term recurrence as `P_ℓ^m` and stay bounded; every power
//! of `sin θ` is then reassembled explicitly. This makes values and first
//! derivatives finite at the poles (in the meridian-limit frame); the
//! genuinely singular second-order frame combinations are rejected near the
//! poles instead of returning garbage.
//!
//! Heat-type sums `Σ_k e^{−λ_k² t} X₁..X_ℓ φ_k(x) · Y₁..Y_m φ_k(y)` use the
//! exact lattice resummation on tori (Jacobi-theta form, accurate even when
//! the direct eigenfunction sum would cancel catastrophically) and a
//! truncated shell sum with a reported tail estimate on the sphere.

use crate::error::{Error, Result};
use crate::manifold::{wrap_signed, ManifoldKind, ManifoldModel, Point, TangentVector};
use crate::util::fit::{least_squares, linear_fit};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

/// Identifies one eigenfunction.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EigenLabel {
    /// λ = 0, φ ≡ 1.
    #[serde(rename = "const")]
    Constant,
    /// `√2 cos(k·θ)` with canonical `k` (first nonzero component positive).
    #[serde(rename = "cos")]
    TorusCos(Vec<i64>),
    /// `√2 sin(k·θ)`.
    #[serde(rename = "sin")]
    TorusSin(Vec<i64>),
    /// Real spherical harmonic; `m > 0` = cos-type, `m < 0` = sin-type.
    #[serde(rename = "sph")]
    Sphere { l: u32, m: i32 },
}

impl EigenLabel {
    /// Deterministic tie-break key among equal eigenvalues.
    fn rank(&self) -> (u8, Vec<i64>) {
        match self {
            EigenLabel::Constant => (0, vec![]),
            EigenLabel::TorusCos(k) => (1, {
                let mut v = k.clone();
                v.push(0);
                v
            }),
            EigenLabel::TorusSin(k) => (1, {
                let mut v = k.clone();
                v.push(1);
                v
            }),
            EigenLabel::Sphere { l, m } => (1, vec![*l as i64, *m as i64]),
        }
    }
}

/// One eigenpair: position in the basis ordering and eigenvalue `λ_k`
/// (so `Δ φ_k = λ_k² φ_k`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub index: usize,
    pub lambda: f64,
    pub label: EigenLabel,
}

/// All eigenfunctions with `λ_k ≤ bandwidth`, in the deterministic order
/// (ascending λ, then label rank).
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub manifold: ManifoldModel,
    pub bandwidth: f64,
    pairs: Vec<EigenPair>,
    /// Sphere only: maximal degree ℓ in the band.
    lmax: u32,
}

impl SpectralBasis {
    /// Enumerates the basis of `Π_L`. `bandwidth ≥ 0`.
    pub fn new(manifold: ManifoldModel, bandwidth: f64) -> Result<Self> {
        if !bandwidth.is_finite() || bandwidth < 0.0 {
            return Err(Error::invalid("bandwidth must be finite and >= 0"));
        }
        let mut raw: Vec<(f64, EigenLabel)> = vec![(0.0, EigenLabel::Constant)];
        let mut lmax = 0u32;
        match manifold.kind {
            ManifoldKind::Torus(d) => {
                let kmax = bandwidth.floor() as i64;
                let mut k = vec![-kmax; d as usize];
                if kmax >= 1 {
                    'outer: loop {
                        let norm2: i64 = k.iter().map(|v| v * v).sum();
                        let canonical = k.iter().find(|&&v| v != 0).map(|&v| v > 0) == Some(true);
                        if canonical && norm2 as f64 <= bandwidth * bandwidth {
                            let lambda = (norm2 as f64).sqrt();
                            raw.push((lambda, EigenLabel::TorusCos(k.clone())));
                            raw.push((lambda, EigenLabel::TorusSin(k.clone())));
                        }
                        let mut i = 0;
                        loop {
                            if i == d as usize {
                                break 'outer;
                            }
                            k[i] += 1;
                            if k[i] <= kmax {
                                break;
                            }
                            k[i] = -kmax;
                            i += 1;
                        }
                    }
                }
            }
            ManifoldKind::Sphere2 => {
                let mut l = 1u32;
                while (l as f64) * ((l + 1) as f64) <= bandwidth * bandwidth {
                    for m in -(l as i32)..=(l as i32) {
                        raw.push((((l as f64) * ((l + 1) as f64)).sqrt(), EigenLabel::Sphere { l, m }));
                    }
                    lmax = l;
                    l += 1;
                }
            }
        }
        raw.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then_with(|| a.1.rank().cmp(&b.1.rank()))
        });
        let pairs = raw
            .into_iter()
            .enumerate()
            .map(|(index, (lambda, label))| EigenPair { index, lambda, label })
            .collect();
        Ok(SpectralBasis { manifold, bandwidth, pairs, lmax })
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    pub fn pairs(&self) -> &[EigenPair] {
        &self.pairs
    }

    /// Ratio `dim Π_L / L^d` (Weyl-law normalization).
    pub fn weyl_ratio(&self) -> f64 {
        self.dim() as f64 / self.bandwidth.powi(self.manifold.dim() as i32)
    }

    /// Evaluates every basis function at `x` into `out` (length = dim).
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        self.eval_applied_into(x, &[], out).expect("plain evaluation cannot fail");
    }

    /// Evaluates `X₁(X₂(φ_k))` for every basis function, where `ops` lists
    /// unit frame fields outermost first (`ops[0]` applied last). Frame
    /// directions: tori `0..d`; sphere `0 = ∂θ`, `1 = ∂φ/sinθ`.
    ///
    /// Up to two applications are supported. On the sphere the combinations
    /// `φ̂∘θ̂` and `φ̂∘φ̂` are genuinely singular at the poles and return an
    /// error when `|sin θ| < 1e-8`.
    pub fn eval_applied_into(&self, x: &[f64], ops: &[usize], out: &mut [f64]) -> Result<()> {
        assert_eq!(out.len(), self.dim(), "output buffer length mismatch");
        if ops.len() > 2 {
            return Err(Error::invalid("at most two frame-field applications are supported"));
        }
        let fd = self.manifold.frame_dim();
        if ops.iter().any(|&a| a >= fd) {
            return Err(Error::invalid("frame direction out of range"));
        }
        match self.manifold.kind {
            ManifoldKind::Torus(_) => {
                for (p, o) in self.pairs.iter().zip(out.iter_mut()) {
                    *o = torus_apply(&p.label, x, ops);
                }
                Ok(())
            }
            ManifoldKind::Sphere2 => {
                let tab = SphereTables::build(self.lmax, x[0], ops.len().min(2) as u32);
                if tab.needs_pole_guard(ops) {
                    return Err(Error::numerical(
                        "sphere frame combination singular at the pole (|sin θ| < 1e-8)",
                    ));
                }
                let trig = PhiTrig::build(self.lmax, x[1]);
                for (p, o) in self.pairs.iter().zip(out.iter_mut()) {
                    *o = match &p.label {
                        EigenLabel::Constant => {
                            if ops.is_empty() {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        EigenLabel::Sphere { l, m } => tab.apply(*l, *m, ops, &trig),
                        _ => unreachable!("torus label in sphere basis"),
                    };
                }
                Ok(())
            }
        }
    }

    /// Gradient components of every basis function at `x`, laid out as
    /// `out[k * frame_dim + a]` = component of `∇φ_k` along frame field `a`.
    pub fn eval_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let fd = self.manifold.frame_dim();
        let n = self.dim();
        assert_eq!(out.len(), n * fd);
        let mut buf = vec![0.0; n];
        for a in 0..fd {
            self.eval_applied_into(x, &[a], &mut buf)
                .expect("first-order frame derivatives are pole-safe");
            for k in 0..n {
                out[k * fd + a] = buf[k];
            }
        }
    }
}

/// `√2 cos/sin(k·θ)` with `ops` frame derivatives applied (ops commute).
fn torus_apply(label: &EigenLabel, x: &[f64], ops: &[usize]) -> f64 {
    let (k, mut quarter_turns) = match label {
        EigenLabel::Constant => {
            return if ops.is_empty() { 1.0 } else { 0.0 };
        }
        EigenLabel::TorusCos(k) => (k, 0u32),
        EigenLabel::TorusSin(k) => (k, 3u32), // sin(z) = cos(z + 3π/2)
        EigenLabel::Sphere { .. } => unreachable!("sphere label in torus basis"),
    };
    // d/dz cos(z + jπ/2) = cos(z + (j+1)π/2); each ∂_a multiplies by k_a.
    let mut coef = std::f64::consts::SQRT_2;
    for &a in ops {
        coef *= k[a] as f64;
        quarter_turns += 1;
    }
    let z: f64 = k.iter().zip(x).map(|(&ki, &xi)| ki as f64 * xi).sum();
    let c = match quarter_turns % 4 {
        0 => z.cos(),
        1 => -z.sin(),
        2 => -z.cos(),
        _ => z.sin(),
    };
    coef * c
}

/// Tables of `R̄_{ℓm}` and its `c`-derivatives at one colatitude.
struct SphereTables {
    lmax: u32,
    s: f64,
    c: f64,
    /// `spow[j] = s^j`, j = 0..=lmax+2
    spow: Vec<f64>,
    /// r[order][m][l - m], order = 0..=deriv_order
    r: Vec<Vec<Vec<f64>>>,
}

impl SphereTables {
    fn build(lmax: u32, theta: f64, deriv_order: u32) -> Self {
        let c = theta.cos();
        let s = theta.sin();
        let lm = lmax as usize;
        let mut spow = vec![1.0; lm + 3];
        for j in 1..spow.len() {
            spow[j] = spow[j - 1] * s;
        }
        let orders = deriv_order as usize + 1;
        let mut r = vec![vec![Vec::new(); lm + 1]; orders];
        // Diagonal seeds ρ_m = R̄_mm: ρ_0 = 1, ρ_1 = −√3,
        // ρ_m = −ρ_{m−1} √((2m+1)/(2m)) for m ≥ 2.
        let mut rho = vec![0.0; lm + 1];
        rho[0] = 1.0;
        if lm >= 1 {
            rho[1] = -(3.0f64).sqrt();
        }
        for m in 2..=lm {
            let mf = m as f64;
            rho[m] = -rho[m - 1] * ((2.0 * mf + 1.0) / (2.0 * mf)).sqrt();
        }
        for m in 0..=lm {
            let len = lm - m + 1;
            for ord in 0..orders {
                r[ord][m] = vec![0.0; len];
            }
            r[0][m][0] = rho[m];
            if len > 1 {
                let mf = m as f64;
                let a1 = (2.0 * mf + 3.0).sqrt();
                r[0][m][1] = a1 * c * rho[m];
                if orders > 1 {
                    r[1][m][1] = a1 * rho[m];
                }
            }
            for l in (m + 2)..=lm {
                let lf = l as f64;
                let mf = m as f64;
                let alpha = ((2.0 * lf - 1.0) * (2.0 * lf + 1.0) / ((lf - mf) * (lf + mf))).sqrt();
                let beta = ((2.0 * lf + 1.0) * (lf - 1.0 + mf) * (lf - 1.0 - mf)
                    / ((2.0 * lf - 3.0) * (lf + mf) * (lf - mf)))
                    .sqrt();
                let i = l - m;
                r[0][m][i] = alpha * c * r[0][m][i - 1] - beta * r[0][m][i - 2];
                if orders > 1 {
                    r[1][m][i] =
                        alpha * (c * r[1][m][i - 1] + r[0][m][i - 1]) - beta * r[1][m][i - 2];
                }
                if orders > 2 {
                    r[2][m][i] = alpha * (c * r[2][m][i - 1] + 2.0 * r[1][m][i - 1])
                        - beta * r[2][m][i - 2];
                }
            }
        }
        SphereTables { lmax, s, c, spow, r }
    }

    fn needs_pole_guard(&self, ops: &[usize]) -> bool {
        // φ̂∘θ̂ (ops [1,0]) and φ̂∘φ̂ (ops [1,1]) carry a 1/sinθ factor for
        // m = 1 modes; reject near the poles. θ̂∘φ̂ ([0,1]) is safe.
        self.lmax >= 1 && self.s.abs() < 1e-8 && ops.len() == 2 && ops[0] == 1
    }

    /// `coef · s^j`, returning an exact 0 when `coef == 0` so that vanishing
    /// terms never touch a negative power of `s` (which would be `0 · ∞ =
    /// NaN` at the poles). Negative powers with nonzero coefficients occur
    /// only in the pole-guarded combinations.
    fn term(&self, coef: f64, j: i64) -> f64 {
        if coef == 0.0 {
            0.0
        } else if j >= 0 {
            coef * self.spow[j as usize]
        } else {
            coef / self.spow[(-j) as usize]
        }
    }

    /// Applies `ops` (outermost first) to `φ_{ℓm}` at the tabulated point.
    fn apply(&self, l: u32, m: i32, ops: &[usize], trig: &PhiTrig) -> f64 {
        let mb = m.unsigned_abs() as usize;
        let li = (l as usize) - mb;
        let r0 = self.r[0][mb][li];
        let mf = mb as f64;
        let c = self.c;
        // T = trig(m̄ φ); T̃ = dT/d(m̄φ).
        let (t, ttil) = if m >= 0 {
            (trig.cos[mb], -trig.sin[mb])
        } else {
            (trig.sin[mb], trig.cos[mb])
        };
        match ops {
            [] => self.term(r0, mb as i64) * t,
            [0] => {
                // A' = m̄ c s^{m̄−1} R̄ − s^{m̄+1} R̄'
                let r1 = self.r[1][mb][li];
                let ap = self.term(mf * c * r0, mb as i64 - 1) - self.term(r1, mb as i64 + 1);
                ap * t
            }
            [1] => {
                // φ̂ f = m̄ s^{m̄−1} R̄ T̃
                if mb == 0 {
                    0.0
                } else {
                    self.term(mf * r0, mb as i64 - 1) * ttil
                }
            }
            [0, 0] => {
                // A'' = m̄(m̄−1) c² s^{m̄−2} R̄ − m̄ s^m̄ R̄
                //       − (2m̄+1) c s^m̄ R̄' + s^{m̄+2} R̄''
                let r1 = self.r[1][mb][li];
                let r2 = self.r[2][mb][li];
                let app = self.term(mf * (mf - 1.0) * c * c * r0, mb as i64 - 2)
                    - self.term(mf * r0, mb as i64)
                    - self.term((2.0 * mf + 1.0) * c * r1, mb as i64)
                    + self.term(r2, mb as i64 + 2);
                app * t
            }
            [0, 1] => {
                // θ̂(φ̂ f) = m̄ B' T̃, B = s^{m̄−1} R̄,
                // B' = (m̄−1) c s^{m̄−2} R̄ − s^m̄ R̄'
                if mb == 0 {
                    0.0
                } else {
                    let r1 = self.r[1][mb][li];
                    let bp = self.term((mf - 1.0) * c * r0, mb as i64 - 2)
                        - self.term(r1, mb as i64);
                    mf * bp * ttil
                }
            }
            [1, 0] => {
                // φ̂(θ̂ f) = m̄ (A'/s) T̃ — singular at poles for m̄ = 1.
                if mb == 0 {
                    0.0
                } else {
                    let r1 = self.r[1][mb][li];
                    let aps = self.term(mf * c * r0, mb as i64 - 2)
                        - self.term(r1, mb as i64);
                    mf * aps * ttil
                }
            }
            [1, 1] => {
                // φ̂(φ̂ f) = −m̄² s^{m̄−2} R̄ T — singular at poles for m̄ = 1.
                if mb == 0 {
                    0.0
                } else {
                    self.term(-mf * mf * r0, mb as i64 - 2) * t
                }
            }
            _ => unreachable!("ops validated by caller"),
        }
    }
}

struct PhiTrig {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PhiTrig {
    fn build(lmax: u32, phi: f64) -> Self {
        let n = lmax as usize + 1;
        let mut cos = vec![0.0; n];
        let mut sin = vec![0.0; n];
        for m in 0..n {
            let a = m as f64 * phi;
            cos[m] = a.cos();
            sin[m] = a.sin();
        }
        PhiTrig { cos, sin }
    }
}

/// A bandlimited function `P = Σ c_k φ_k`, `λ_k ≤ L`.
#[derive(Clone, Debug)]
pub struct DiffusionPolynomial {
    pub basis: Arc<SpectralBasis>,
    pub coefficients: Vec<f64>,
}

/// Serialized form: `{manifold, bandwidth, labels, coefficients}`.
#[derive(Serialize, Deserialize)]
struct PolyWire {
    manifold: ManifoldModel,
    bandwidth: f64,
    labels: Vec<EigenLabel>,
    coefficients: Vec<f64>,
}

impl DiffusionPolynomial {
    pub fn new(basis: Arc<SpectralBasis>, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != basis.dim() {
            return Err(Error::invalid(format!(
                "coefficient vector length {} != basis dimension {}",
                coefficients.len(),
                basis.dim()
            )));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("non-finite coefficient"));
        }
        Ok(DiffusionPolynomial { basis, coefficients })
    }

    /// Gaussian random coefficients (standard normal); `in_pi0` zeroes the
    /// constant mode so that `∫ P dμ = 0`.
    pub fn gaussian(basis: Arc<SpectralBasis>, rng: &mut impl rand::Rng, in_pi0: bool) -> Self {
        let mut coefficients: Vec<f64> = (0..basis.dim()).map(|_| normal_sample(rng)).collect();
        if in_pi0 {
            coefficients[0] = 0.0;
        }
        DiffusionPolynomial { basis, coefficients }
    }

    pub fn bandwidth(&self) -> f64 {
        self.basis.bandwidth
    }

    /// True iff the constant-mode coefficient vanishes (`P ∈ Π_L^0`).
    pub fn in_pi0(&self) -> bool {
        self.coefficients[0] == 0.0
    }

    /// `L²(μ)` norm = Euclidean coefficient norm (Parseval).
    pub fn l2_norm(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.basis.dim()];
        self.basis.eval_into(x, &mut buf);
        buf.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    /// Evaluation with a caller-provided scratch buffer (hot loops).
    pub fn eval_with(&self, x: &[f64], buf: &mut [f64]) -> f64 {
        self.basis.eval_into(x, buf);
        buf.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn eval_gradient(&self, x: &[f64]) -> TangentVector {
        let fd = self.basis.manifold.frame_dim();
        let n = self.basis.dim();
        let mut buf = vec![0.0; n * fd];
        self.basis.eval_gradient_into(x, &mut buf);
        let mut components = vec![0.0; fd];
        for k in 0..n {
            let ck = self.coefficients[k];
            for a in 0..fd {
                components[a] += ck * buf[k * fd + a];
            }
        }
        TangentVector { base: x.to_vec(), components }
    }

    /// Coefficients of `ΔP` (`λ_k² c_k`).
    pub fn laplacian(&self) -> DiffusionPolynomial {
        let coefficients = self
            .basis
            .pairs()
            .iter()
            .zip(&self.coefficients)
            .map(|(p, c)| p.lambda * p.lambda * c)
            .collect();
        DiffusionPolynomial { basis: Arc::clone(&self.basis), coefficients }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(PolyWire {
            manifold: self.basis.manifold,
            bandwidth: self.basis.bandwidth,
            labels: self.basis.pairs().iter().map(|p| p.label.clone()).collect(),
            coefficients: self.coefficients.clone(),
        })
        .expect("polynomial serialization cannot fail")
    }

    /// Deserializes and validates that the stored labels match the canonical
    /// enumeration for `(manifold, bandwidth)`.
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let wire: PolyWire = serde_json::from_value(v.clone())?;
        let basis = Arc::new(SpectralBasis::new(wire.manifold, wire.bandwidth)?);
        let want: Vec<EigenLabel> = basis.pairs().iter().map(|p| p.label.clone()).collect();
        if wire.labels != want {
            return Err(Error::invalid(
                "serialized labels do not match the canonical basis enumeration",
            ));
        }
        DiffusionPolynomial::new(basis, wire.coefficients)
    }
}

/// Standard-normal sample via Box–Muller.
pub fn normal_sample<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let v: f64 = rng.gen_range(0.0..2.0 * PI);
        let z = (-2.0 * u.ln()).sqrt() * v.cos();
        if z.is_finite() {
            return z;
        }
    }
}

/// Result of a heat-type sum: value, a tail estimate for the truncation,
/// and the largest eigenvalue retained.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatSum {
    pub value: f64,
    pub tail_bound: f64,
    pub lambda_max: f64,
}

/// `Σ_k e^{−λ_k² t} (X₁..X_ℓ φ_k)(x) · (Y₁..Y_m φ_k)(y)` for unit frame
/// fields (`left` on the x-side, `right` on the y-side, outermost first,
/// each ≤ 2 entries, ≤ 3 total). Requires `t ∈ (0, 1]`.
///
/// Tori evaluate the exact lattice resummation (accurate to roundoff in
/// absolute terms even far below the cancellation level of the direct sum);
/// the sphere sums shells until a Gaussian-tail estimate drops below 1e-16
/// relative, and reports that estimate.
pub fn heat_sum(
    m: &ManifoldModel,
    t: f64,
    x: &[f64],
    y: &[f64],
    left: &[usize],
    right: &[usize],
) -> Result<HeatSum> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::invalid("heat sums require t in (0, 1]"));
    }
    if left.len() > 2 || right.len() > 2 || left.len() + right.len() > 3 {
        return Err(Error::invalid(
            "at most 2 frame derivatives per side and 3 total are supported",
        ));
    }
    let fd = m.frame_dim();
    if left.iter().chain(right).any(|&a| a >= fd) {
        return Err(Error::invalid("frame direction out of range"));
    }
    match m.kind {
        ManifoldKind::Torus(d) => {
            // per-coordinate derivative orders; y-side ops flip the sign.
            let mut orders = vec![0u32; d as usize];
            for &a in left {
                orders[a] += 1;
            }
            let mut sign = 1.0;
            for &a in right {
                orders[a] += 1;
                sign = -sign;
            }
            let mut value = sign;
            for a in 0..d as usize {
                let u = wrap_signed(x[a] - y[a]);
                value *= theta_derivative(u, t, orders[a]);
            }
            // The resummed form is exact up to roundoff; the reported cutoff
            // is the frequency beyond which direct terms underflow entirely.
            Ok(HeatSum { value, tail_bound: 1e-300, lambda_max: (745.0 / t).sqrt() })
        }
        ManifoldKind::Sphere2 => sphere_heat_sum(t, x, y, left, right),
    }
}

/// `∂_u^p Σ_{k∈Z} e^{−k²t} e^{iku}` via the wrapped-Gaussian (theta) form
/// `√(π/t) Σ_n G_p(u − 2πn)`, `p ≤ 3`.
fn theta_derivative(u: f64, t: f64, p: u32) -> f64 {
    // images with (2πn − |u|)²/(4t) ≤ 745 contribute above underflow
    let reach = (745.0f64 * 4.0 * t).sqrt();
    let nmax = ((u.abs() + reach) / (2.0 * PI)).ceil() as i64 + 1;
    let pref = (PI / t).sqrt();
    let mut sum = 0.0;
    for n in -nmax..=nmax {
        let w = u - 2.0 * PI * n as f64;
        let e = (-w * w / (4.0 * t)).exp();
        if e == 0.0 {
            continue;
        }
        let g = match p {
            0 => 1.0,
            1 => -w / (2.0 * t),
            2 => w * w / (4.0 * t * t) - 1.0 / (2.0 * t),
            3 => -w * w * w / (8.0 * t * t * t) + 3.0 * w / (4.0 * t * t),
            _ => unreachable!("at most 3 derivatives"),
        };
        sum += g * e;
    }
    pref * sum
}

fn sphere_heat_sum(t: f64, x: &[f64], y: &[f64], left: &[usize], right: &[usize]) -> Result<HeatSum> {
    let p_tot = (left.len() + right.len()) as i32;
    // shells until the crude bound e^{−λ²t}(2ℓ+1)²(1+λ)^p is negligible
    let mut lmax = 4u32;
    loop {
        let lam2 = (lmax as f64) * (lmax as f64 + 1.0);
        let bound = (-lam2 * t).exp()
            * (2.0 * lmax as f64 + 1.0).powi(2)
            * (1.0 + lam2.sqrt()).powi(p_tot);
        if bound < 1e-20 || lmax > 4000 {
            break;
        }
        lmax += 4;
    }
    let basis = SpectralBasis::new(ManifoldModel::sphere2(), ((lmax as f64) * (lmax as f64 + 1.0)).sqrt() + 0.5)
        .expect("sphere basis enumeration");
    let n = basis.dim();
    let mut bx = vec![0.0; n];
    let mut by = vec![0.0; n];
    basis.eval_applied_into(x, left, &mut bx)?;
    basis.eval_applied_into(y, right, &mut by)?;
    let mut value = 0.0;
    for (pair, (vx, vy)) in basis.pairs().iter().zip(bx.iter().zip(&by)) {
        value += (-pair.lambda * pair.lambda * t).exp() * vx * vy;
    }
    let lam2 = (lmax as f64) * (lmax as f64 + 1.0);
    let tail = (-lam2 * t).exp() * (2.0 * lmax as f64 + 1.0).powi(2) * (1.0 + lam2.sqrt()).powi(p_tot);
    Ok(HeatSum { value, tail_bound: tail, lambda_max: lam2.sqrt() })
}

/// Least-squares fit of heat-sum magnitudes against the Gaussian upper-bound
/// model `log|K| ≈ log c₇ + p·log t − c₈·|x−y|²/t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeatFit {
    /// Fitted prefactor `c₇` (from the exponentiated intercept).
    pub c7: f64,
    /// Fitted exponent of `t` (theory: −(d+ℓ+m)/2).
    pub t_exponent: f64,
    /// Fitted Gaussian rate `c₈` (theory on tori: 1/4).
    pub c8: f64,
    /// Rows kept in the fit (magnitudes above the floor).
    pub rows: usize,
    /// Max |log-residual| over kept rows.
    pub max_log_residual: f64,
    /// Smallest prefactor for which the fitted-model bound dominates every
    /// kept grid value: `c7 * max_ratio`.
    pub dominating_c7: f64,
}

/// Full three-parameter fit over a `(t, pair)` grid.
pub fn greiner_fit(
    m: &ManifoldModel,
    left: &[usize],
    right: &[usize],
    t_values: &[f64],
    pairs: &[(Point, Point)],
) -> Result<HeatFit> {
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for &t in t_values {
        for (x, y) in pairs {
            let hs = heat_sum(m, t, x, y, left, right)?;
            let mag = hs.value.abs();
            if mag < 1e-280 {
                continue;
            }
            let dist = m.distance(x, y);
            rows.push(vec![1.0, t.ln(), -dist * dist / t]);
            ys.push(mag.ln());
        }
    }
    if rows.len() < 4 {
        return Err(Error::invalid("heat fit needs at least 4 usable grid rows"));
    }
    let beta = least_squares(&rows, &ys);
    let mut max_res = 0.0f64;
    let mut max_ratio = 0.0f64;
    for (row, &yv) in rows.iter().zip(&ys) {
        let model = beta[0] + beta[1] * row[1] + beta[2] * row[2];
        max_res = max_res.max((yv - model).abs());
        max_ratio = max_ratio.max((yv - model).exp());
    }
    Ok(HeatFit {
        c7: beta[0].exp(),
        t_exponent: beta[1],
        c8: beta[2],
        rows: rows.len(),
        max_log_residual: max_res,
        dominating_c7: beta[0].exp() * max_ratio,
    })
}

/// On-diagonal pure power-law fit: `log|K(t; x, x)| ≈ a + p log t`.
/// Returns `(exp(a), p)`.
pub fn heat_power_fit_diag(
    m: &ManifoldModel,
    left: &[usize],
    right: &[usize],
    t_values: &[f64],
    x: &[f64],
) -> Result<(f64, f64)> {
    let mut lt = Vec::new();
    let mut ly = Vec::new();
    for &t in t_values {
        let hs = heat_sum(m, t, x, x, left, right)?;
        let mag = hs.value.abs();
        if mag < 1e-280 {
            return Err(Error::numerical(
                "on-diagonal heat sum vanishes; no power law to fit",
            ));
        }
        lt.push(t.ln());
        ly.push(mag.ln());
    }
    let (a, p) = linear_fit(&lt, &ly);
    Ok((a.exp(), p))
}

/// Envelope power-law fit: for each `t`, take the max of `|K|` over the pair
/// grid, then fit `log max|K| ≈ a + p log t`. This is the observable form of
/// the `t^{−(d+ℓ+m)/2}` rate for odd derivative counts, whose on-diagonal
/// sum vanishes identically on homogeneous spaces.
pub fn heat_envelope_fit(
    m: &ManifoldModel,
    left: &[usize],
    right: &[usize],
    t_values: &[f64],
    pairs: &[(Point, Point)],
) -> Result<(f64, f64)> {
    let mut lt = Vec::new();
    let mut ly = Vec::new();
    for &t in t_values {
        let mut best = 0.0f64;
        for (x, y) in pairs {
            let hs = heat_sum(m, t, x, y, left, right)?;
            best = best.max(hs.value.abs());
        }
        if best < 1e-280 {
            return Err(Error::numerical("heat envelope vanishes on the grid"));
        }
        lt.push(t.ln());
        ly.push(best.ln());
    }
    let (a, p) = linear_fit(&lt, &ly);
    Ok((a.exp(), p))
}
