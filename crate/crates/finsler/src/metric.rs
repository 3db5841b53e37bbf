//! Closed-form Finsler metric catalog.
//!
//! Four metrics ship by default, chosen to populate every cell of the
//! {Riemannian, non-Riemannian} × {flat, non-flat} table:
//!
//! * `euclidean` — `F = |y|` on ℝⁿ, flag curvature 0, Riemannian.
//! * `klein` — the Beltrami–Klein model of hyperbolic space on the unit
//!   ball, flag curvature −1, Riemannian.
//! * `funk` — the Funk metric on the unit ball, flag curvature −1/4,
//!   non-Riemannian.
//! * `berwald_flat` — Berwald's projectively flat metric on the unit ball
//!   with zero flag curvature, non-Riemannian.
//!
//! Nominal curvature constants are hypotheses: they are confirmed by
//! [`crate::spray::flag_curvature_fit`] before any test leans on them.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::error::{FinslerError, Result};
use crate::jet::{jet_dot, jet_eval, scalar_value, Jet, JetValue, ScalarFunction, MAX_VARS};
use crate::sample;

/// Open chart domain of a metric.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// All of ℝⁿ.
    All,
    /// Open ball of the given radius about the origin.
    Ball { radius: f64 },
}

impl Domain {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.margin(x) > 0.0
    }

    /// Distance from `x` to the boundary (infinite for ℝⁿ); used by
    /// finite-difference stencils and step control.
    pub fn margin(&self, x: &[f64]) -> f64 {
        match self {
            Domain::All => f64::INFINITY,
            Domain::Ball { radius } => radius - norm(x),
        }
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// A closed-form Finsler function evaluable in jet arithmetic.
pub trait FinslerForm: Send + Sync {
    fn finsler(&self, x: &[Jet], y: &[Jet]) -> Result<Jet>;
}

/// A catalog entry: the Finsler function plus its chart domain and the
/// constants expected of it.
#[derive(Clone)]
pub struct MetricSpec {
    id: String,
    dim: usize,
    domain: Domain,
    nominal_lambda: Option<f64>,
    riemannian_nominal: bool,
    projectively_flat: bool,
    params: Vec<f64>,
    form: Arc<dyn FinslerForm>,
}

impl MetricSpec {
    /// `F = |y|` on ℝⁿ.
    pub fn euclidean(dim: usize) -> Result<MetricSpec> {
        check_dim(dim)?;
        Ok(MetricSpec {
            id: "euclidean".into(),
            dim,
            domain: Domain::All,
            nominal_lambda: Some(0.0),
            riemannian_nominal: true,
            projectively_flat: true,
            params: vec![],
            form: Arc::new(EuclideanForm),
        })
    }

    /// Beltrami–Klein metric `F = sqrt(|y|²(1−|x|²) + ⟨x,y⟩²)/(1−|x|²)` on
    /// the open unit ball.
    pub fn klein(dim: usize) -> Result<MetricSpec> {
        check_dim(dim)?;
        Ok(MetricSpec {
            id: "klein".into(),
            dim,
            domain: Domain::Ball { radius: 1.0 },
            nominal_lambda: Some(-1.0),
            riemannian_nominal: true,
            projectively_flat: true,
            params: vec![1.0],
            form: Arc::new(KleinForm),
        })
    }

    /// Funk metric `F = (sqrt(|y|²(1−|x|²) + ⟨x,y⟩²) + ⟨x,y⟩)/(1−|x|²)` on
    /// the open unit ball.
    pub fn funk(dim: usize) -> Result<MetricSpec> {
        check_dim(dim)?;
        Ok(MetricSpec {
            id: "funk".into(),
            dim,
            domain: Domain::Ball { radius: 1.0 },
            nominal_lambda: Some(-0.25),
            riemannian_nominal: false,
            projectively_flat: true,
            params: vec![1.0],
            form: Arc::new(FunkForm),
        })
    }

    /// Berwald's projectively flat metric with zero flag curvature,
    /// `F = (w + ⟨x,y⟩)² / ((1−|x|²)²·w)` with
    /// `w = sqrt(|y|²(1−|x|²) + ⟨x,y⟩²)`, on the open unit ball surface.
    pub fn berwald_flat() -> MetricSpec {
        MetricSpec {
            id: "berwald_flat".into(),
            dim: 2,
            domain: Domain::Ball { radius: 1.0 },
            nominal_lambda: Some(0.0),
            riemannian_nominal: false,
            projectively_flat: true,
            params: vec![1.0],
            form: Arc::new(BerwaldForm),
        }
    }

    /// A user-supplied metric. Registration through [`Catalog::register`]
    /// validates positive 1-homogeneity before the entry becomes usable.
    pub fn custom(
        id: impl Into<String>,
        dim: usize,
        domain: Domain,
        form: Arc<dyn FinslerForm>,
        nominal_lambda: Option<f64>,
        riemannian_nominal: bool,
        projectively_flat: bool,
    ) -> Result<MetricSpec> {
        check_dim(dim)?;
        Ok(MetricSpec {
            id: id.into(),
            dim,
            domain,
            nominal_lambda,
            riemannian_nominal,
            projectively_flat,
            params: vec![],
            form,
        })
    }

    /// The same metric under a different catalog id.
    pub fn with_id(&self, id: impl Into<String>) -> MetricSpec {
        let mut spec = self.clone();
        spec.id = id.into();
        spec
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn nominal_lambda(&self) -> Option<f64> {
        self.nominal_lambda
    }

    pub fn is_riemannian_nominal(&self) -> bool {
        self.riemannian_nominal
    }

    pub fn is_projectively_flat(&self) -> bool {
        self.projectively_flat
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn form(&self) -> &Arc<dyn FinslerForm> {
        &self.form
    }

    /// `F` as a [`ScalarFunction`].
    pub fn finsler_fn(&self) -> FinslerFn<'_> {
        FinslerFn { spec: self }
    }

    /// `F²` (the energy up to the conventional factor) as a
    /// [`ScalarFunction`].
    pub fn energy_fn(&self) -> EnergyFn<'_> {
        EnergyFn { spec: self }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim < 2 || 2 * dim > MAX_VARS {
        return Err(FinslerError::InvalidMetric(format!(
            "dimension {dim} outside supported range 2..={}",
            MAX_VARS / 2
        )));
    }
    Ok(())
}

/// View of a metric's Finsler function `F`.
pub struct FinslerFn<'a> {
    spec: &'a MetricSpec,
}

impl ScalarFunction for FinslerFn<'_> {
    fn dim(&self) -> usize {
        self.spec.dim
    }
    fn contains(&self, x: &[f64]) -> bool {
        self.spec.domain.contains(x)
    }
    fn boundary_margin(&self, x: &[f64]) -> f64 {
        self.spec.domain.margin(x)
    }
    fn eval_jets(&self, x: &[Jet], y: &[Jet]) -> Result<Jet> {
        self.spec.form.finsler(x, y)
    }
}

/// View of a metric's squared Finsler function `F²`.
pub struct EnergyFn<'a> {
    spec: &'a MetricSpec,
}

impl ScalarFunction for EnergyFn<'_> {
    fn dim(&self) -> usize {
        self.spec.dim
    }
    fn contains(&self, x: &[f64]) -> bool {
        self.spec.domain.contains(x)
    }
    fn boundary_margin(&self, x: &[f64]) -> f64 {
        self.spec.domain.margin(x)
    }
    fn eval_jets(&self, x: &[Jet], y: &[Jet]) -> Result<Jet> {
        let f = self.spec.form.finsler(x, y)?;
        Ok(&f * &f)
    }
}

struct EuclideanForm;

impl FinslerForm for EuclideanForm {
    fn finsler(&self, _x: &[Jet], y: &[Jet]) -> Result<Jet> {
        jet_dot(y, y).sqrt()
    }
}

/// Shared pieces of the ball metrics: `μ = 1 − |x|²`,
/// `w = sqrt(|y|²μ + ⟨x,y⟩²)` and `⟨x,y⟩`.
fn ball_parts(x: &[Jet], y: &[Jet]) -> Result<(Jet, Jet, Jet)> {
    let mu = (-&jet_dot(x, x)).add_scalar(1.0);
    let xy = jet_dot(x, y);
    let yy = jet_dot(y, y);
    let w = (&(&yy * &mu) + &(&xy * &xy)).sqrt()?;
    Ok((mu, w, xy))
}

struct KleinForm;

impl FinslerForm for KleinForm {
    fn finsler(&self, x: &[Jet], y: &[Jet]) -> Result<Jet> {
        let (mu, w, _) = ball_parts(x, y)?;
        w.div(&mu)
    }
}

struct FunkForm;

impl FinslerForm for FunkForm {
    fn finsler(&self, x: &[Jet], y: &[Jet]) -> Result<Jet> {
        let (mu, w, xy) = ball_parts(x, y)?;
        (&w + &xy).div(&mu)
    }
}

struct BerwaldForm;

impl FinslerForm for BerwaldForm {
    fn finsler(&self, x: &[Jet], y: &[Jet]) -> Result<Jet> {
        let (mu, w, xy) = ball_parts(x, y)?;
        let num = &w + &xy;
        (&num * &num).div(&(&(&mu * &mu) * &w))
    }
}

/// Jet of `F` at `(x, y)` with all partials up to `order`.
pub fn finsler_value(spec: &MetricSpec, x: &[f64], y: &[f64], order: usize) -> Result<JetValue> {
    jet_eval(&spec.finsler_fn(), x, y, order)
}

/// Jet of `F²` at `(x, y)` with all partials up to `order`.
pub fn energy_value(spec: &MetricSpec, x: &[f64], y: &[f64], order: usize) -> Result<JetValue> {
    jet_eval(&spec.energy_fn(), x, y, order)
}

/// Whether `x` lies inside the metric's chart, with the distance to the
/// boundary.
pub fn domain_contains(spec: &MetricSpec, x: &[f64]) -> (bool, f64) {
    let margin = spec.domain.margin(x);
    (margin > 0.0, margin)
}

/// Immutable-after-setup collection of metrics addressable by id.
#[derive(Default)]
pub struct Catalog {
    entries: BTreeMap<String, Arc<MetricSpec>>,
}

impl Catalog {
    pub fn empty() -> Catalog {
        Catalog::default()
    }

    /// Catalog of the four shipped surface metrics (n = 2).
    pub fn standard() -> Catalog {
        Catalog::standard_dim(2).expect("n = 2 catalog is always valid")
    }

    /// Standard catalog with configurable dimension for the euclidean,
    /// klein and funk entries. Berwald's flat example ships as a surface
    /// metric and is only included at n = 2.
    pub fn standard_dim(dim: usize) -> Result<Catalog> {
        let mut catalog = Catalog::empty();
        catalog.register(MetricSpec::euclidean(dim)?)?;
        catalog.register(MetricSpec::klein(dim)?)?;
        catalog.register(MetricSpec::funk(dim)?)?;
        if dim == 2 {
            catalog.register(MetricSpec::berwald_flat())?;
        }
        Ok(catalog)
    }

    /// Validate positive 1-homogeneity of the form at 100 seeded random
    /// samples, then make the entry available to all downstream
    /// operations.
    pub fn register(&mut self, spec: MetricSpec) -> Result<String> {
        let mut rng = sample::rng(crate::DEFAULT_SEED);
        let f = spec.finsler_fn();
        for _ in 0..100 {
            let (x, y) = sample::sample_pair(&spec, &mut rng);
            let t = 10f64.powf(rng.random_range(-1.0..1.0));
            let base = scalar_value(&f, &x, &y)?;
            let ty: Vec<f64> = y.iter().map(|c| c * t).collect();
            let scaled = scalar_value(&f, &x, &ty)?;
            let resid = (scaled - t * base).abs() / (1.0 + t * base.abs());
            if resid > 1e-12 {
                return Err(FinslerError::InvalidMetric(format!(
                    "homogeneity violation at x = {x:?}, y = {y:?}, t = {t}: residual {resid:.3e}"
                )));
            }
        }
        let id = spec.id.clone();
        self.entries.insert(id.clone(), Arc::new(spec));
        Ok(id)
    }

    pub fn get(&self, id: &str) -> Option<&Arc<MetricSpec>> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<MetricSpec>> {
        self.entries.values()
    }
}
