//! Equal-weight quadrature designs on model compact manifolds.
//!
//! An *L-design* is a node set `x_1, …, x_N` whose equal-weight averages
//! reproduce integrals exactly on the bandlimited space `Π_L`, the span of
//! Laplace–Beltrami eigenfunctions with eigenvalue `λ_k ≤ L`:
//!
//! ```text
//! (1/N) Σ_j P(x_j) = ∫ P dμ          for all P ∈ Π_L.
//! ```
//!
//! The crate provides the full pipeline on the model manifolds `T^d`
//! (flat torus of side 2π, the circle being `d = 1`) and `S²`:
//!
//! * [`manifold`] — metric, exponential map, normalized measure, quadrature;
//! * [`spectral`] — eigenbases, diffusion polynomials, heat-type sums and
//!   their Gaussian-bound fits;
//! * [`kernels`] — smooth spectral cutoffs, localized kernels, decay
//!   profiles, bandlimited-multiplier propagation checks;
//! * [`partition`] — equal-measure partitions with inner/outer ball
//!   certificates;
//! * [`mz`] — Marcinkiewicz–Zygmund sampling ratios for values and
//!   gradients, and randomized surveys of their constants;
//! * [`designs`] — design defect, smoothed gradient flow, defect
//!   minimization, scaling and worst-case-error experiments.

pub mod designs;
pub mod error;
pub mod kernels;
pub mod manifold;
pub mod mz;
pub mod partition;
pub mod spectral;
pub mod util;

pub use error::{Error, Result};
pub use manifold::{ManifoldKind, ManifoldModel, Point, QuadratureRule, TangentVector};
pub use spectral::{DiffusionPolynomial, EigenLabel, EigenPair, SpectralBasis};
