//! Property tests of the engine's structural invariants.

use proptest::prelude::*;

use finsler::jet::{jet_eval, seed_chart, JetSpace, ScalarFunction};
use finsler::metric::{Catalog, MetricSpec};
use finsler::spray::fundamental_tensor;
use finsler::{sample, DEFAULT_SEED};

fn chart_point() -> impl Strategy<Value = [f64; 2]> {
    (-0.69f64..0.69, -0.69f64..0.69)
        .prop_filter("inside the sampling ball", |(a, b)| a * a + b * b < 0.48)
        .prop_map(|(a, b)| [a, b])
}

fn tangent() -> impl Strategy<Value = [f64; 2]> {
    (-2.0f64..2.0, -2.0f64..2.0)
        .prop_filter("away from the zero section", |(a, b)| a * a + b * b > 0.25)
        .prop_map(|(a, b)| [a, b])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Euler's relation for 1-homogeneous functions: Σ_k y^k ∂F/∂y^k = F.
    #[test]
    fn euler_homogeneity_at_jet_level(x in chart_point(), y in tangent()) {
        let catalog = Catalog::standard();
        for spec in catalog.iter() {
            let jet = jet_eval(&spec.finsler_fn(), &x, &y, 1).unwrap();
            let sum = y[0] * jet.partial(&[2]).unwrap() + y[1] * jet.partial(&[3]).unwrap();
            prop_assert!(
                (sum - jet.value()).abs() / (1.0 + jet.value().abs()) < 1e-12,
                "{}: Euler defect {:.3e}",
                spec.id(),
                (sum - jet.value()).abs()
            );
        }
    }

    /// Positive 1-homogeneity F(x, ty) = t F(x, y) for random scales.
    #[test]
    fn positive_homogeneity(x in chart_point(), y in tangent(), t in 0.1f64..10.0) {
        let catalog = Catalog::standard();
        for spec in catalog.iter() {
            let f = spec.finsler_fn();
            let base = jet_eval(&f, &x, &y, 0).unwrap().value();
            let ty = [t * y[0], t * y[1]];
            let scaled = jet_eval(&f, &x, &ty, 0).unwrap().value();
            prop_assert!((scaled - t * base).abs() / (1.0 + t * base) < 1e-12);
        }
    }

    /// Partial queries are symmetric under permutations of the derivative
    /// sequence.
    #[test]
    fn partial_query_symmetry(
        x in chart_point(),
        y in tangent(),
        seq in proptest::collection::vec(0usize..4, 1..=4)
    ) {
        let spec = MetricSpec::funk(2).unwrap();
        let jet = jet_eval(&spec.energy_fn(), &x, &y, seq.len()).unwrap();
        let reference = jet.partial(&seq).unwrap();
        let mut permuted = seq.clone();
        permuted.reverse();
        prop_assert_eq!(jet.partial(&permuted).unwrap(), reference);
        permuted.rotate_left(1);
        prop_assert_eq!(jet.partial(&permuted).unwrap(), reference);
    }

    /// Leibniz: the jet-product of two energies carries exactly the
    /// partials the product rule dictates.
    #[test]
    fn jet_product_obeys_leibniz(x in chart_point(), y in tangent()) {
        let klein = MetricSpec::klein(2).unwrap();
        let funk = MetricSpec::funk(2).unwrap();
        let space = JetSpace::get(4, 4);
        let (xj, yj) = seed_chart(&space, &x, &y);
        let a = klein.energy_fn().eval_jets(&xj, &yj).unwrap();
        let b = funk.energy_fn().eval_jets(&xj, &yj).unwrap();
        let product = &a * &b;

        // ∂^α(fg) = Σ_{β ≤ α} C(α, β) ∂^β f ∂^{α−β} g, on exponent vectors
        for alpha in [[1u8, 0, 1, 0], [0, 0, 2, 1], [1, 1, 1, 1], [0, 0, 2, 2]] {
            let mut expected = 0.0;
            for b0 in 0..=alpha[0] {
                for b1 in 0..=alpha[1] {
                    for b2 in 0..=alpha[2] {
                        for b3 in 0..=alpha[3] {
                            let beta = [b0, b1, b2, b3];
                            let coeff: f64 = alpha
                                .iter()
                                .zip(&beta)
                                .map(|(&av, &bv)| binomial(av, bv))
                                .product();
                            expected += coeff
                                * partial_by_exponents(&a, &beta)
                                * partial_by_exponents(
                                    &b,
                                    &[
                                        alpha[0] - b0,
                                        alpha[1] - b1,
                                        alpha[2] - b2,
                                        alpha[3] - b3,
                                    ],
                                );
                        }
                    }
                }
            }
            let actual = partial_by_exponents(&product, &alpha);
            prop_assert!(
                (actual - expected).abs() / (1.0 + expected.abs()) < 1e-11,
                "α = {:?}: product rule defect {:.3e}",
                alpha,
                (actual - expected).abs()
            );
        }
    }
}

fn binomial(n: u8, k: u8) -> f64 {
    let mut acc = 1.0;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

fn partial_by_exponents(jet: &finsler::Jet, exponents: &[u8; 4]) -> f64 {
    let mut seq = Vec::new();
    for (v, &e) in exponents.iter().enumerate() {
        for _ in 0..e {
            seq.push(v);
        }
    }
    jet.partial(&seq).unwrap()
}

/// `R^i_jk + R^i_kj = 0` holds bit-exactly as computed, for every metric.
#[test]
fn curvature_antisymmetry_exact_across_the_catalog() {
    use finsler::spray::riemann_curvature;
    let catalog = Catalog::standard();
    let mut rng = sample::rng(DEFAULT_SEED);
    for spec in catalog.iter() {
        for _ in 0..100 {
            let (x, y) = sample::sample_pair(spec, &mut rng);
            let curv = riemann_curvature(spec, &x, &y).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    for k in 0..2 {
                        assert_eq!(
                            curv.riem.get(i, j, k),
                            -curv.riem.get(i, k, j),
                            "{} at {x:?}",
                            spec.id()
                        );
                    }
                }
            }
        }
    }
}

/// Fundamental tensor positive definiteness across the catalog.
#[test]
fn fundamental_tensor_positive_definite_under_sampling() {
    let catalog = Catalog::standard();
    let mut rng = sample::rng(DEFAULT_SEED);
    for spec in catalog.iter() {
        for _ in 0..200 {
            let (x, y) = sample::sample_pair(spec, &mut rng);
            let g = fundamental_tensor(spec, &x, &y).unwrap();
            let min_eig = g
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .fold(f64::INFINITY, |m, &v| m.min(v));
            assert!(min_eig > 1e-10, "{}: min eigenvalue {min_eig:.3e}", spec.id());
        }
    }
}

/// Klein's energy stays an exact quadratic form at every sampled point;
/// the non-Riemannian entries fail the same test away from the origin.
#[test]
fn quadratic_form_split_across_the_catalog() {
    use finsler::spray::quadratic_form_test;
    let klein = MetricSpec::klein(2).unwrap();
    let funk = MetricSpec::funk(2).unwrap();
    let berwald = MetricSpec::berwald_flat();
    let mut rng = sample::rng(DEFAULT_SEED);
    for _ in 0..20 {
        let x = sample::sample_point(&klein, &mut rng);
        assert!(quadratic_form_test(&klein, &x, 64).unwrap() < 1e-10);
        if x.iter().map(|c| c * c).sum::<f64>().sqrt() > 0.05 {
            assert!(quadratic_form_test(&funk, &x, 64).unwrap() > 1e-3);
            assert!(quadratic_form_test(&berwald, &x, 64).unwrap() > 1e-3);
        }
    }
}
