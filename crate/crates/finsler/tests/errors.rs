//! The failure modes the engine must detect rather than silently absorb.

use std::sync::Arc;

use nalgebra::DMatrix;

use finsler::holonomy::{
    generate_algebra, indicatrix_parametrize, restrict_to_indicatrix, IndicatrixContext,
    VerticalField,
};
use finsler::jet::Jet;
use finsler::metric::{Domain, FinslerForm, MetricSpec};
use finsler::spray::{flag_curvature_fit, fundamental_tensor};
use finsler::transport::{transport_along, ChartCurve};
use finsler::{FinslerError, DEFAULT_SEED};

/// `ds² = dx² + (1 + x²) dy²`: Riemannian with genuinely varying
/// Gaussian curvature.
struct VaryingCurvature;

impl FinslerForm for VaryingCurvature {
    fn finsler(&self, x: &[Jet], y: &[Jet]) -> finsler::Result<Jet> {
        let w = (&x[0] * &x[0]).add_scalar(1.0);
        (&(&y[0] * &y[0]) + &(&w * &(&y[1] * &y[1]))).sqrt()
    }
}

/// `F = |y¹ + y²|` away from its singular line: 1-homogeneous but with a
/// rank-one Hessian of `F²`.
struct DegenerateForm;

impl FinslerForm for DegenerateForm {
    fn finsler(&self, _x: &[Jet], y: &[Jet]) -> finsler::Result<Jet> {
        let s = &y[0] + &y[1];
        (&s * &s).sqrt()
    }
}

#[test]
fn non_constant_curvature_fails_the_fit() {
    let spec = MetricSpec::custom(
        "varying",
        2,
        Domain::All,
        Arc::new(VaryingCurvature),
        None,
        true,
        false,
    )
    .unwrap();
    let err = flag_curvature_fit(&spec, 100, DEFAULT_SEED).unwrap_err();
    match err {
        FinslerError::NotConstantCurvature { residual } => assert!(residual > 1e-4),
        other => panic!("expected NotConstantCurvature, got {other}"),
    }
}

#[test]
fn degenerate_fundamental_tensor_is_rejected() {
    let spec = MetricSpec::custom(
        "degenerate",
        2,
        Domain::All,
        Arc::new(DegenerateForm),
        None,
        true,
        false,
    )
    .unwrap();
    let err = fundamental_tensor(&spec, &[0.0, 0.0], &[1.0, 0.5]).unwrap_err();
    assert!(matches!(err, FinslerError::MetricDegenerate { .. }));
}

#[test]
fn coarse_steps_trip_the_drift_bound() {
    let spec = MetricSpec::funk(2).unwrap();
    let curve = ChartCurve::Circle {
        center: vec![0.2, 0.0],
        radius: 0.45,
    };
    let err = transport_along(&spec, &curve, &[1.0, 0.4], 0.1).unwrap_err();
    match err {
        FinslerError::IntegrationUnstable { drift, bound } => {
            assert!(drift > bound);
        }
        other => panic!("expected IntegrationUnstable, got {other}"),
    }
}

#[test]
fn transport_detects_domain_exit_mid_curve() {
    let spec = MetricSpec::funk(2).unwrap();
    let curve = ChartCurve::Polyline {
        vertices: vec![vec![0.5, 0.0], vec![1.2, 0.0]],
    };
    let err = transport_along(&spec, &curve, &[1.0, 0.0], 1e-2).unwrap_err();
    assert!(matches!(err, FinslerError::Domain(_)));
}

#[test]
fn radial_field_is_not_tangent_to_the_indicatrix() {
    let spec = MetricSpec::funk(2).unwrap();
    let sampling = indicatrix_parametrize(&spec, &[0.3, 0.0], 16).unwrap();
    // ξ = y points across the level sets of F, never along them
    let radial = VerticalField::linear(DMatrix::identity(2, 2));
    let err = restrict_to_indicatrix(&spec, &radial, &sampling).unwrap_err();
    assert!(matches!(err, FinslerError::Tangency { .. }));
}

#[test]
fn field_cap_sets_the_truncation_flag() {
    let spec = MetricSpec::funk(2).unwrap();
    let report = generate_algebra(&spec, &[0.3, 0.1], 3, 2, 32).unwrap();
    assert!(report.truncated);
    assert!(report.rounds.last().unwrap().field_count <= 2);
}

#[test]
fn depth_cap_beyond_jet_budget_is_rejected() {
    let spec = MetricSpec::funk(2).unwrap();
    let err = generate_algebra(&spec, &[0.3, 0.1], 5, 64, 32).unwrap_err();
    assert!(matches!(err, FinslerError::UnsupportedOrder { requested: 5, max: 4 }));
}

#[test]
fn exhausted_jet_budget_surfaces_as_unsupported_order() {
    // a context built for depth 0 cannot evaluate a depth-1 field
    let spec = MetricSpec::funk(2).unwrap();
    let ctx = IndicatrixContext::new(&spec, &[0.3, 0.1], 16, 0).unwrap();
    let xi = VerticalField::curvature(&[1.0, 0.0], &[0.0, 1.0]);
    assert!(ctx.restrict(&xi).is_ok());
    let err = ctx.restrict(&xi.covariant_derivative(0)).unwrap_err();
    assert!(matches!(err, FinslerError::UnsupportedOrder { .. }));
}
