//! Seeded random sampling of chart points and tangent vectors.
//!
//! All stochastic routines in the crate draw through these helpers so a
//! single seed reproduces every table. Base points stay within 70% of the
//! chart radius, keeping finite-difference stencils and transport steps
//! well inside the domain.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::metric::{Domain, MetricSpec};

/// The named generator used everywhere; one seed fixes every draw.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from the ball of radius `0.7 × chart radius` (radius 1 is
/// assumed for unbounded charts).
pub fn sample_point(spec: &MetricSpec, rng: &mut impl Rng) -> Vec<f64> {
    let radius = match spec.domain() {
        Domain::All => 1.0,
        Domain::Ball { radius } => *radius,
    } * 0.7;
    let n = spec.dim();
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-radius..radius)).collect();
        if x.iter().map(|c| c * c).sum::<f64>() < radius * radius {
            return x;
        }
    }
}

/// Tangent with uniform random direction and norm in `[0.5, 2]`.
pub fn sample_tangent(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = y.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm > 1e-3 && norm <= 1.0 {
            let scale = rng.random_range(0.5..2.0) / norm;
            return y.iter().map(|c| c * scale).collect();
        }
    }
}

/// A `(point, tangent)` pair drawn by the rules above.
pub fn sample_pair(spec: &MetricSpec, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let x = sample_point(spec, rng);
    let y = sample_tangent(spec.dim(), rng);
    (x, y)
}
