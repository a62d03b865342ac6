//! Equal-measure partitions with inner/outer geodesic-ball certificates.
//!
//! Every partition splits the manifold into `N` regions of measure exactly
//! `1/N`, each sandwiched between geodesic balls: an inner ball
//! `B(inner_center, inner_radius) ⊆ R_j` and an outer ball
//! `R_j ⊆ B(center, outer_radius)`. The achieved constants
//! `c₁ = min_j inner_radius·N^{1/d}` and `c₂ = max_j outer_radius·N^{1/d}`
//! are reported per `(manifold, N)` without any universality claim.
//!
//! Constructions:
//!
//! * **Torus `T^d`** — recursive near-cubic bricks: the first coordinate is
//!   cut into `round(N^{1/d})` slabs, regions are apportioned to slabs by
//!   largest remainder (equal quotas break ties toward lower index), each
//!   slab's width is proportional to its region count, and the remaining
//!   coordinates are partitioned recursively. Every brick has measure
//!   exactly `1/N`; ball certificates are the inscribed/circumscribed-box
//!   radii in the flat metric.
//! * **Sphere `S²`** — zonal collars: two polar caps of area `1/N`
//!   (`cos θ_c = 1 − 2/N`), the belt between them cut into collars of
//!   near-ideal height `√(4π/N)` (unit-sphere area scale), cells
//!   apportioned to collars by largest remainder with at least one cell per
//!   collar, collar boundaries then reset so each collar's measure is
//!   exactly its cell count over `N`, and each collar split into equal
//!   longitude sectors with alternating half-cell stagger. Ball
//!   certificates are closed-form per cell shape (corner distances for the
//!   outer ball; edge distances, including the meridian great-circle
//!   distance `asin(sin θ · sin Δφ)`, for the inner ball).
//!
//! Membership conventions: measures are allocated by lower-closed half-open
//! coordinate intervals, while [`locate`] resolves boundary ties to the
//! lowest region index (scanning in index order with a `1e−12` containment
//! slack), so points on shared boundaries have a deterministic owner.

use crate::designs::NodeSet;
use crate::error::{Error, Result};
use crate::manifold::{wrap_angle, ManifoldKind, ManifoldModel, Point, TangentVector};
use crate::util::subseed;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;
/// Containment slack for boundary ties in [`locate`] and certification.
const SLACK: f64 = 1e-12;

/// Shape descriptor used for exact membership tests and region sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RegionShape {
    /// The whole manifold (N = 1).
    Whole,
    /// Torus coordinate box `[lo_i, hi_i)` inside `[0, 2π)^d`.
    Brick { lo: Vec<f64>, hi: Vec<f64> },
    /// Polar cap: `cos θ ≥ z` (north) or `cos θ ≤ −z` (south).
    Cap { z: f64, south: bool },
    /// Collar cell: `z_bot ≤ cos θ ≤ z_top`, longitude in
    /// `[phi0, phi0 + width)` (mod 2π).
    Zonal { z_top: f64, z_bot: f64, phi0: f64, width: f64 },
}

/// One region with its measure and ball certificates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: Point,
    pub measure: f64,
    /// Region ⊆ B(center, outer_radius).
    pub outer_radius: f64,
    pub inner_center: Point,
    /// B(inner_center, inner_radius) ⊆ region.
    pub inner_radius: f64,
    pub shape: RegionShape,
}

/// An equal-measure partition with achieved ball constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub manifold: ManifoldModel,
    pub regions: Vec<Region>,
    /// `min_j inner_radius · N^{1/d}`.
    pub c1: f64,
    /// `max_j outer_radius · N^{1/d}`.
    pub c2: f64,
}

impl Partition {
    pub fn n(&self) -> usize {
        self.regions.len()
    }
}

/// How [`pick_nodes`] selects one node per region.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NodeRule {
    /// The region's center point.
    Center,
    /// The inner-ball center.
    InnerCenter,
    /// μ-uniform draw inside the region, reproducible per seed
    /// (region `j` uses an independent substream).
    Random { seed: u64 },
    /// Adversarial pick hugging the region boundary (inset by a relative
    /// `1e−7` so membership stays well defined).
    Corner,
}

impl NodeRule {
    pub fn parse(tag: &str, seed: Option<u64>) -> Result<Self> {
        match tag {
            "center" => Ok(NodeRule::Center),
            "inner_center" => Ok(NodeRule::InnerCenter),
            "corner" => Ok(NodeRule::Corner),
            "random" => seed
                .map(|s| NodeRule::Random { seed: s })
                .ok_or_else(|| Error::invalid("node rule `random` needs a seed")),
            other => Err(Error::invalid(format!("unknown node rule `{other}`"))),
        }
    }
}

/// Builds the equal-measure partition of `m` into `n` regions.
pub fn equal_area_partition(m: &ManifoldModel, n: usize) -> Result<Partition> {
    if n == 0 {
        return Err(Error::invalid("partition needs at least one region"));
    }
    let regions = if n == 1 {
        vec![whole_region(m)]
    } else {
        match m.kind {
            ManifoldKind::Torus(_) => torus_regions(m, n),
            ManifoldKind::Sphere2 => sphere_regions(n),
        }
    };
    let scale = (n as f64).powf(1.0 / m.dim() as f64);
    let c1 = regions.iter().map(|r| r.inner_radius).fold(f64::MAX, f64::min) * scale;
    let c2 = regions.iter().map(|r| r.outer_radius).fold(0.0f64, f64::max) * scale;
    Ok(Partition { manifold: *m, regions, c1, c2 })
}

fn whole_region(m: &ManifoldModel) -> Region {
    let center = match m.kind {
        ManifoldKind::Torus(d) => vec![PI; d as usize],
        ManifoldKind::Sphere2 => vec![PI / 2.0, PI],
    };
    Region {
        center: center.clone(),
        measure: 1.0,
        outer_radius: m.diameter(),
        inner_center: center,
        inner_radius: m.diameter(),
        shape: RegionShape::Whole,
    }
}

/// Splits `n` into `k` near-equal counts (largest remainder; the equal
/// quotas `n/k` tie, so the extra units go to the lowest indices).
fn apportion_equal(n: usize, k: usize) -> Vec<usize> {
    let base = n / k;
    let rem = n % k;
    (0..k).map(|i| base + usize::from(i < rem)).collect()
}

/// Largest-remainder apportionment of `total` units proportional to
/// `weights` with a minimum of one unit each.
fn apportion_weighted(weights: &[f64], total: usize) -> Vec<usize> {
    let k = weights.len();
    debug_assert!(total >= k);
    let spare = total - k;
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / wsum * spare as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(spare - assigned) {
        counts[i] += 1;
    }
    counts.iter_mut().for_each(|c| *c += 1);
    counts
}

/// Recursive brick tiling of `[0, 2π)^dims` into `n` boxes of equal volume.
fn brick_tiles(dims: usize, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    if dims == 1 {
        return (0..n)
            .map(|j| (vec![TAU * j as f64 / n as f64], vec![TAU * (j + 1) as f64 / n as f64]))
            .collect();
    }
    let k = ((n as f64).powf(1.0 / dims as f64).round() as usize).clamp(1, n);
    let counts = apportion_equal(n, k);
    let mut tiles = Vec::with_capacity(n);
    let mut cum = 0usize;
    for &ni in &counts {
        let x0 = TAU * cum as f64 / n as f64;
        cum += ni;
        let x1 = TAU * cum as f64 / n as f64;
        for (sub_lo, sub_hi) in brick_tiles(dims - 1, ni) {
            let mut lo = vec![x0];
            let mut hi = vec![x1];
            lo.extend(sub_lo);
            hi.extend(sub_hi);
            tiles.push((lo, hi));
        }
    }
    tiles
}

fn torus_regions(m: &ManifoldModel, n: usize) -> Vec<Region> {
    let d = m.dim();
    brick_tiles(d, n)
        .into_iter()
        .map(|(lo, hi)| {
            let center: Point =
                lo.iter().zip(&hi).map(|(&a, &b)| wrap_angle((a + b) / 2.0)).collect();
            let half: Vec<f64> = lo.iter().zip(&hi).map(|(&a, &b)| (b - a) / 2.0).collect();
            let outer = half.iter().map(|h| h * h).sum::<f64>().sqrt();
            let inner = half.iter().cloned().fold(f64::MAX, f64::min);
            Region {
                center: center.clone(),
                measure: 1.0 / n as f64,
                outer_radius: outer,
                inner_center: center,
                inner_radius: inner,
                shape: RegionShape::Brick { lo, hi },
            }
        })
        .collect()
}

fn cap_region(n: usize, south: bool) -> Region {
    let z = 1.0 - 2.0 / n as f64;
    let theta_c = z.acos();
    let center = if south { vec![PI, 0.0] } else { vec![0.0, 0.0] };
    Region {
        center: center.clone(),
        measure: 1.0 / n as f64,
        outer_radius: theta_c,
        inner_center: center,
        inner_radius: theta_c,
        shape: RegionShape::Cap { z, south },
    }
}

/// Geodesic distance between sphere coordinates `(θ₁, φ₁)` and `(θ₂, φ₂)`
/// given only the longitude gap `dphi`.
fn sphere_angle(t1: f64, t2: f64, dphi: f64) -> f64 {
    let c = t1.cos() * t2.cos() + t1.sin() * t2.sin() * dphi.cos();
    c.clamp(-1.0, 1.0).acos()
}

fn zonal_region(n: usize, z_top: f64, z_bot: f64, phi0: f64, width: f64) -> Region {
    let theta_a = z_top.clamp(-1.0, 1.0).acos();
    let theta_b = z_bot.clamp(-1.0, 1.0).acos();
    let theta_m = (theta_a + theta_b) / 2.0;
    let full = width >= TAU - 1e-9;
    let phi_m = if full { PI } else { wrap_angle(phi0 + width / 2.0) };
    let center = vec![theta_m, phi_m];
    // Outer ball: the farthest point of a zonal rectangle from its center is
    // a corner (the center-to-boundary distance is monotone toward them);
    // longitude separation saturates at π for wide cells.
    let dphi = (width / 2.0).min(PI);
    let outer = sphere_angle(theta_m, theta_a, dphi).max(sphere_angle(theta_m, theta_b, dphi));
    // Inner ball: distance to the collar boundaries in colatitude, and to
    // the meridian walls via the great-circle distance asin(sinθ·sinΔφ)
    // (a conservative lower bound on the distance to the half-meridian).
    let mut inner = (theta_m - theta_a).min(theta_b - theta_m);
    if !full {
        inner = inner.min((theta_m.sin() * (width / 2.0).min(PI / 2.0).sin()).asin());
    }
    Region {
        center: center.clone(),
        measure: 1.0 / n as f64,
        outer_radius: outer,
        inner_center: center,
        inner_radius: inner,
        shape: RegionShape::Zonal { z_top, z_bot, phi0, width },
    }
}

fn sphere_regions(n: usize) -> Vec<Region> {
    let mut regions = vec![cap_region(n, false)];
    if n > 2 {
        let z_c = 1.0 - 2.0 / n as f64;
        let theta_c = z_c.acos();
        let belt = PI - 2.0 * theta_c;
        let ideal_height = (4.0 * PI / n as f64).sqrt();
        let n_collars = ((belt / ideal_height).round() as usize).clamp(1, n - 2);
        // ideal cell count per collar from uniform colatitude splits
        let weights: Vec<f64> = (0..n_collars)
            .map(|i| {
                let t0 = theta_c + belt * i as f64 / n_collars as f64;
                let t1 = theta_c + belt * (i + 1) as f64 / n_collars as f64;
                (t0.cos() - t1.cos()) / 2.0
            })
            .collect();
        let counts = apportion_weighted(&weights, n - 2);
        // exact boundaries: collar i has measure counts[i]/n
        let mut z_top = z_c;
        for (i, &ci) in counts.iter().enumerate() {
            let z_bot = z_top - 2.0 * ci as f64 / n as f64;
            let width = TAU / ci as f64;
            let offset = if i % 2 == 0 { 0.0 } else { width / 2.0 };
            for s in 0..ci {
                regions.push(zonal_region(n, z_top, z_bot, wrap_angle(offset + width * s as f64), width));
            }
            z_top = z_bot;
        }
    }
    regions.push(cap_region(n, true));
    regions
}

/// True when `x` lies in the closure of the region (with [`SLACK`]).
fn shape_contains(_m: &ManifoldModel, shape: &RegionShape, x: &Point) -> bool {
    match shape {
        RegionShape::Whole => true,
        RegionShape::Brick { lo, hi } => lo.iter().zip(hi).zip(x).all(|((&a, &b), &c)| {
            let c = wrap_angle(c);
            (c >= a - SLACK && c <= b + SLACK)
                || (c + TAU >= a - SLACK && c + TAU <= b + SLACK)
                || (c - TAU >= a - SLACK)
        }),
        RegionShape::Cap { z, south } => {
            let zc = x[0].cos();
            if *south {
                zc <= -z + SLACK
            } else {
                zc >= z - SLACK
            }
        }
        RegionShape::Zonal { z_top, z_bot, phi0, width } => {
            let zc = x[0].cos();
            if zc > z_top + SLACK || zc < z_bot - SLACK {
                return false;
            }
            if *width >= TAU - 1e-9 {
                return true;
            }
            let t = (x[1] - phi0).rem_euclid(TAU);
            t <= width + SLACK || t >= TAU - SLACK
        }
    }
}

/// μ-uniform sample inside the region.
fn shape_sample(m: &ManifoldModel, shape: &RegionShape, rng: &mut impl Rng) -> Point {
    match shape {
        RegionShape::Whole => m.random_point(rng),
        RegionShape::Brick { lo, hi } => lo
            .iter()
            .zip(hi)
            .map(|(&a, &b)| wrap_angle(a + (b - a) * rng.gen::<f64>()))
            .collect(),
        RegionShape::Cap { z, south } => {
            let zc = if *south {
                -1.0 + (1.0 - z) * rng.gen::<f64>()
            } else {
                *z + (1.0 - z) * rng.gen::<f64>()
            };
            vec![zc.clamp(-1.0, 1.0).acos(), TAU * rng.gen::<f64>()]
        }
        RegionShape::Zonal { z_top, z_bot, phi0, width } => {
            let zc = z_bot + (z_top - z_bot) * rng.gen::<f64>();
            let phi = wrap_angle(phi0 + width * rng.gen::<f64>());
            vec![zc.clamp(-1.0, 1.0).acos(), phi]
        }
    }
}

/// Boundary-hugging point for [`NodeRule::Corner`] (relative inset 1e−7).
fn shape_corner(_m: &ManifoldModel, region: &Region) -> Point {
    const INSET: f64 = 1e-7;
    match &region.shape {
        RegionShape::Whole => region.center.clone(),
        RegionShape::Brick { lo, hi } => {
            lo.iter().zip(hi).map(|(&a, &b)| wrap_angle(a + (b - a) * INSET)).collect()
        }
        RegionShape::Cap { z, south } => {
            let theta = z.clamp(-1.0, 1.0).acos() * (1.0 - INSET);
            if *south {
                vec![PI - theta, 0.0]
            } else {
                vec![theta, 0.0]
            }
        }
        RegionShape::Zonal { z_top, z_bot, phi0, width } => {
            let z = z_top - (z_top - z_bot) * INSET;
            vec![z.clamp(-1.0, 1.0).acos(), wrap_angle(phi0 + width * INSET)]
        }
    }
}

/// Region index owning `x`: lowest index whose closure contains the point.
pub fn locate(p: &Partition, x: &Point) -> usize {
    for (j, r) in p.regions.iter().enumerate() {
        if shape_contains(&p.manifold, &r.shape, x) {
            return j;
        }
    }
    // Shapes tile the manifold; SLACK can only enlarge them. Falling through
    // is impossible for canonical coordinates, but stay total:
    let mut best = (f64::MAX, 0usize);
    for (j, r) in p.regions.iter().enumerate() {
        let d = p.manifold.distance(x, &r.center);
        if d < best.0 {
            best = (d, j);
        }
    }
    best.1
}

/// One node per region according to `rule`.
pub fn pick_nodes(p: &Partition, rule: &NodeRule) -> NodeSet {
    let points: Vec<Point> = p
        .regions
        .iter()
        .enumerate()
        .map(|(j, r)| match rule {
            NodeRule::Center => r.center.clone(),
            NodeRule::InnerCenter => r.inner_center.clone(),
            NodeRule::Corner => shape_corner(&p.manifold, r),
            NodeRule::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(subseed(*seed, j as u64));
                shape_sample(&p.manifold, &r.shape, &mut rng)
            }
        })
        .collect();
    NodeSet { manifold: p.manifold, points }
}

/// A certification failure with its witness point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    pub region: usize,
    pub point: Point,
    /// `outer-containment` (sampled region point outside the outer ball) or
    /// `inner-ball` (inner-ball point outside the region).
    pub kind: String,
}

/// Per-region certification row (CSV-friendly).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionCertificate {
    pub region: usize,
    pub measure: f64,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub samples: usize,
    pub violations: usize,
}

/// Certification summary: achieved constants and any violations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationReport {
    pub c1_hat: f64,
    pub c2_hat: f64,
    pub rows: Vec<RegionCertificate>,
    pub violations: Vec<Violation>,
    pub ok: bool,
}

/// Verifies the ball certificates by sampling: region samples must lie in
/// the outer ball, inner-ball samples must lie in the region. Regions are
/// processed in parallel and aggregated in index order.
pub fn certify(p: &Partition, samples_per_region: usize, seed: u64) -> CertificationReport {
    let m = p.manifold;
    let d = m.dim();
    let per_region: Vec<(RegionCertificate, Vec<Violation>)> = p
        .regions
        .par_iter()
        .enumerate()
        .map(|(j, r)| {
            let mut rng = ChaCha8Rng::seed_from_u64(subseed(seed, j as u64));
            let mut violations = Vec::new();
            for _ in 0..samples_per_region {
                // containment in the outer ball
                let x = shape_sample(&m, &r.shape, &mut rng);
                if m.distance(&x, &r.center) > r.outer_radius + 1e-9 {
                    violations.push(Violation {
                        region: j,
                        point: x,
                        kind: "outer-containment".into(),
                    });
                    continue;
                }
                // inner ball inside the region: uniform ball point via
                // random frame direction and radius r·u^{1/d}
                let mut comps: Vec<f64> = (0..m.frame_dim())
                    .map(|_| rng.gen::<f64>() * 2.0 - 1.0)
                    .collect();
                let norm = comps.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-300);
                comps.iter_mut().for_each(|c| *c /= norm);
                let radius = r.inner_radius * rng.gen::<f64>().powf(1.0 / d as f64);
                let v = TangentVector { base: r.inner_center.clone(), components: comps };
                let y = m.exp_map(&v, radius);
                if !shape_contains(&m, &r.shape, &y) {
                    violations.push(Violation { region: j, point: y, kind: "inner-ball".into() });
                }
            }
            let row = RegionCertificate {
                region: j,
                measure: r.measure,
                inner_radius: r.inner_radius,
                outer_radius: r.outer_radius,
                samples: samples_per_region,
                violations: violations.len(),
            };
            (row, violations)
        })
        .collect();
    let scale = (p.n() as f64).powf(1.0 / d as f64);
    let c1_hat =
        p.regions.iter().map(|r| r.inner_radius).fold(f64::MAX, f64::min) * scale;
    let c2_hat = p.regions.iter().map(|r| r.outer_radius).fold(0.0f64, f64::max) * scale;
    let mut rows = Vec::with_capacity(per_region.len());
    let mut violations = Vec::new();
    for (row, mut v) in per_region {
        rows.push(row);
        violations.append(&mut v);
    }
    let ok = violations.is_empty();
    CertificationReport { c1_hat, c2_hat, rows, violations, ok }
}
