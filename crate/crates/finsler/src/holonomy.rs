//! Curvature vector fields, their closure under Lie brackets and horizontal
//! Berwald covariant derivatives, and numerical dimension estimation of the
//! resulting algebra restricted to an indicatrix.
//!
//! On a surface the indicatrix at a point is a closed curve, so restricted
//! vertical fields become scalar coefficient functions on a periodic angle
//! grid. The generation loop closes a seed set of curvature fields under
//! `∇_k` and brackets, deduplicates by collinearity of restricted
//! coefficients, and reports the singular-value rank of the family round by
//! round. Dimension is estimated, never proven: "infinite dimensional"
//! shows up as a rank that keeps rising without saturating within the
//! depth cap.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

use crate::error::{FinslerError, Result};
use crate::jet::Jet;
use crate::metric::MetricSpec;
use crate::spray::{flag_curvature_fit, fundamental_tensor, idx2, idx3, projective_jet, spray_jets, SprayJets};

/// Discretization of the indicatrix curve at a base point: angles, radii
/// solved by Newton, and the unit tangent frame of the curve.
#[derive(Clone, Debug)]
pub struct IndicatrixSampling {
    pub x: Vec<f64>,
    pub thetas: Vec<f64>,
    pub radii: Vec<f64>,
    /// `y(θ_a) = r(θ_a)·(cos θ_a, sin θ_a)`.
    pub points: Vec<[f64; 2]>,
    /// Euclidean-unit tangent of the indicatrix curve at each sample.
    pub tangents: Vec<[f64; 2]>,
    /// `|dγ/dθ|`, the chain-rule factor between angle and arclength.
    pub speeds: Vec<f64>,
}

/// One solved indicatrix sample at an arbitrary angle.
#[derive(Clone, Copy, Debug)]
pub struct IndicatrixPoint {
    pub radius: f64,
    pub point: [f64; 2],
    /// Euclidean-unit tangent of the indicatrix curve.
    pub tangent: [f64; 2],
    /// `|dγ/dθ|`.
    pub speed: f64,
}

/// Solve `F(x, r·(cos θ, sin θ)) = 1` by Newton from the initial guess
/// `1/F(x, u)`. For exactly homogeneous metrics the guess already is the
/// root; the iteration guards user-registered forms.
pub fn indicatrix_point(spec: &MetricSpec, x: &[f64], theta: f64) -> Result<IndicatrixPoint> {
    if spec.dim() != 2 {
        return Err(FinslerError::SurfaceOnly(spec.dim()));
    }
    if !spec.domain().contains(x) {
        return Err(FinslerError::Domain(format!("x = {x:?}")));
    }
    let u = [theta.cos(), theta.sin()];
    let f0 = crate::metric::finsler_value(spec, x, &u, 0)?.value();
    let mut r = 1.0 / f0;
    let mut converged = false;
    for _ in 0..50 {
        let y = [r * u[0], r * u[1]];
        let jet = crate::metric::finsler_value(spec, x, &y, 1)?;
        let value = jet.value() - 1.0;
        if value.abs() <= 1e-14 {
            converged = true;
            break;
        }
        let fy = [jet.partial(&[2])?, jet.partial(&[3])?];
        let dr = fy[0] * u[0] + fy[1] * u[1];
        if dr == 0.0 {
            break;
        }
        r -= value / dr;
    }
    if !converged {
        return Err(FinslerError::IndicatrixSolve { theta });
    }

    let y = [r * u[0], r * u[1]];
    let jet = crate::metric::finsler_value(spec, x, &y, 1)?;
    let fy = [jet.partial(&[2])?, jet.partial(&[3])?];
    let uperp = [-u[1], u[0]];
    let fy_u = fy[0] * u[0] + fy[1] * u[1];
    let fy_uperp = fy[0] * uperp[0] + fy[1] * uperp[1];
    // differentiate F(x, γ(θ)) = 1 along the curve
    let dr = -r * fy_uperp / fy_u;
    let gamma_prime = [dr * u[0] + r * uperp[0], dr * u[1] + r * uperp[1]];
    let speed = (gamma_prime[0] * gamma_prime[0] + gamma_prime[1] * gamma_prime[1]).sqrt();
    Ok(IndicatrixPoint {
        radius: r,
        point: y,
        tangent: [gamma_prime[0] / speed, gamma_prime[1] / speed],
        speed,
    })
}

/// Solve the indicatrix radii on an even angle grid of size `n_grid`.
pub fn indicatrix_parametrize(
    spec: &MetricSpec,
    x: &[f64],
    n_grid: usize,
) -> Result<IndicatrixSampling> {
    if n_grid == 0 || n_grid % 2 != 0 {
        return Err(FinslerError::InvalidGrid(format!(
            "indicatrix grid must be even and positive, got {n_grid}"
        )));
    }

    let mut thetas = Vec::with_capacity(n_grid);
    let mut radii = Vec::with_capacity(n_grid);
    let mut points = Vec::with_capacity(n_grid);
    let mut tangents = Vec::with_capacity(n_grid);
    let mut speeds = Vec::with_capacity(n_grid);

    for a in 0..n_grid {
        let theta = 2.0 * std::f64::consts::PI * a as f64 / n_grid as f64;
        let sample = indicatrix_point(spec, x, theta)?;
        thetas.push(theta);
        radii.push(sample.radius);
        points.push(sample.point);
        tangents.push(sample.tangent);
        speeds.push(sample.speed);
    }

    Ok(IndicatrixSampling {
        x: x.to_vec(),
        thetas,
        radii,
        points,
        tangents,
        speeds,
    })
}

/// Periodic spectral differentiation matrix on an even uniform grid of
/// size n (Fourier collocation).
pub fn fourier_diff_matrix(n: usize) -> DMatrix<f64> {
    assert!(n > 0 && n % 2 == 0, "spectral grid must be even");
    let h = std::f64::consts::PI / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let d = i as isize - j as isize;
            let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
            0.5 * sign / (d as f64 * h).tan()
        }
    })
}

/// Numerical rank of a set of row vectors: singular values above
/// `rel_tol · σ_max`. Returns the rank and the singular values sorted
/// descending.
pub fn numerical_rank(rows: &[Vec<f64>], rel_tol: f64) -> (usize, Vec<f64>) {
    if rows.is_empty() {
        return (0, vec![]);
    }
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let mut sv: Vec<f64> = m.svd(false, false).singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let max = sv.first().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return (0, sv);
    }
    let rank = sv.iter().filter(|&&s| s > rel_tol * max).count();
    (rank, sv)
}

/// A composable vertical vector field `ξ^i(x, y) ∂/∂y^i` on the slit
/// tangent bundle, built from curvature fields by covariant derivatives and
/// brackets. Fields are expression trees; evaluation binds them to a metric
/// through a point bundle of connection jets.
#[derive(Clone)]
pub struct VerticalField {
    expr: Arc<FieldExpr>,
    depth: usize,
}

enum FieldExpr {
    /// `ξ^i = R^i_jk X^j Y^k` for constant coordinate vectors X, Y.
    Curvature { xdir: Vec<f64>, ydir: Vec<f64> },
    /// `ξ^i = A^i_j y^j`; the rotation generator and friends, mostly for
    /// cross-checks.
    Linear { mat: DMatrix<f64> },
    /// Horizontal Berwald covariant derivative `∇_k`.
    CovDeriv { base: VerticalField, k: usize },
    /// Vertical Lie bracket.
    Bracket { lhs: VerticalField, rhs: VerticalField },
}

impl VerticalField {
    /// The curvature vector field `R(X, Y)`.
    pub fn curvature(xdir: &[f64], ydir: &[f64]) -> VerticalField {
        VerticalField {
            expr: Arc::new(FieldExpr::Curvature {
                xdir: xdir.to_vec(),
                ydir: ydir.to_vec(),
            }),
            depth: 0,
        }
    }

    /// Linear field `ξ = A y`.
    pub fn linear(mat: DMatrix<f64>) -> VerticalField {
        VerticalField {
            expr: Arc::new(FieldExpr::Linear { mat }),
            depth: 0,
        }
    }

    /// `∇_k ξ` as a new composable field.
    pub fn covariant_derivative(&self, k: usize) -> VerticalField {
        VerticalField {
            expr: Arc::new(FieldExpr::CovDeriv {
                base: self.clone(),
                k,
            }),
            depth: self.depth + 1,
        }
    }

    /// `[ξ, η]` acting in the fibre variables.
    pub fn bracket(&self, other: &VerticalField) -> VerticalField {
        VerticalField {
            expr: Arc::new(FieldExpr::Bracket {
                lhs: self.clone(),
                rhs: other.clone(),
            }),
            depth: 1 + self.depth.max(other.depth),
        }
    }

    /// Nesting depth of ∇/bracket applications; bounds the jet order needed
    /// to evaluate the field.
    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Component jets at the bundle's point, truncated to `order`.
    pub(crate) fn eval_jets(&self, bundle: &SprayJets, order: usize) -> Result<Vec<Jet>> {
        let n = bundle.n;
        match self.expr.as_ref() {
            FieldExpr::Curvature { xdir, ydir } => {
                if order > bundle.order {
                    return Err(FinslerError::UnsupportedOrder {
                        requested: order,
                        max: bundle.order,
                    });
                }
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mut acc = bundle.riem[idx3(n, i, 0, 0)]
                        .to_order(order)
                        .scale(xdir[0] * ydir[0]);
                    for j in 0..n {
                        for k in 0..n {
                            if j == 0 && k == 0 {
                                continue;
                            }
                            let w = xdir[j] * ydir[k];
                            if w != 0.0 {
                                acc = &acc
                                    + &bundle.riem[idx3(n, i, j, k)].to_order(order).scale(w);
                            }
                        }
                    }
                    out.push(acc);
                }
                Ok(out)
            }
            FieldExpr::Linear { mat } => {
                if order > bundle.order + 4 {
                    return Err(FinslerError::UnsupportedOrder {
                        requested: order,
                        max: bundle.order + 4,
                    });
                }
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mut acc = bundle.y_vars[0].to_order(order).scale(mat[(i, 0)]);
                    for j in 1..n {
                        acc = &acc + &bundle.y_vars[j].to_order(order).scale(mat[(i, j)]);
                    }
                    out.push(acc);
                }
                Ok(out)
            }
            FieldExpr::CovDeriv { base, k } => {
                if order > bundle.order {
                    return Err(FinslerError::UnsupportedOrder {
                        requested: order,
                        max: bundle.order,
                    });
                }
                let child = base.eval_jets(bundle, order + 1)?;
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mut acc = child[i].derivative(*k);
                    for m in 0..n {
                        let gj = bundle.gj[idx2(n, m, *k)].to_order(order);
                        acc = &acc - &(&gj * &child[i].derivative(n + m));
                        let gjk = bundle.gjk[idx3(n, i, *k, m)].to_order(order);
                        acc = &acc + &(&gjk * &child[m].to_order(order));
                    }
                    out.push(acc);
                }
                Ok(out)
            }
            FieldExpr::Bracket { lhs, rhs } => {
                let a = lhs.eval_jets(bundle, order + 1)?;
                let b = rhs.eval_jets(bundle, order + 1)?;
                let mut out = Vec::with_capacity(n);
                for i in 0..n {
                    let mut acc: Option<Jet> = None;
                    for j in 0..n {
                        let term = &(&a[j].to_order(order) * &b[i].derivative(n + j))
                            - &(&b[j].to_order(order) * &a[i].derivative(n + j));
                        acc = Some(match acc {
                            None => term,
                            Some(prev) => &prev + &term,
                        });
                    }
                    out.push(acc.unwrap());
                }
                Ok(out)
            }
        }
    }

    /// Component values at `(x, y)`.
    pub fn values(&self, spec: &MetricSpec, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let bundle = spray_jets(spec, x, y, self.depth)?;
        Ok(self
            .eval_jets(&bundle, 0)?
            .iter()
            .map(Jet::value)
            .collect())
    }
}

/// The curvature vector field `ξ = R(X, Y)` for constant coordinate
/// vectors.
pub fn curvature_field(xdir: &[f64], ydir: &[f64]) -> VerticalField {
    VerticalField::curvature(xdir, ydir)
}

/// Vertical Lie bracket `[ξ, η]^i = ξ^j ∂η^i/∂y^j − η^j ∂ξ^i/∂y^j`.
pub fn vertical_bracket(xi: &VerticalField, eta: &VerticalField) -> VerticalField {
    xi.bracket(eta)
}

/// Horizontal Berwald covariant derivative
/// `(∇_k ξ)^i = ∂ξ^i/∂x^k − G^m_k ∂ξ^i/∂y^m + G^i_km ξ^m`.
pub fn covariant_derivative(xi: &VerticalField, k: usize) -> VerticalField {
    xi.covariant_derivative(k)
}

/// Shared evaluation state for restricting fields to one indicatrix:
/// connection jets at every grid point, built once.
pub struct IndicatrixContext {
    spec: MetricSpec,
    sampling: IndicatrixSampling,
    order: usize,
    bundles: Vec<SprayJets>,
}

impl IndicatrixContext {
    /// Build bundles supporting field evaluation up to nesting depth
    /// `order` at every grid point.
    pub fn new(spec: &MetricSpec, x: &[f64], n_grid: usize, order: usize) -> Result<Self> {
        let sampling = indicatrix_parametrize(spec, x, n_grid)?;
        let bundles: Vec<SprayJets> = sampling
            .points
            .par_iter()
            .map(|y| spray_jets(spec, x, &y[..], order))
            .collect::<Result<Vec<_>>>()?;
        Ok(IndicatrixContext {
            spec: spec.clone(),
            sampling,
            order,
            bundles,
        })
    }

    pub fn sampling(&self) -> &IndicatrixSampling {
        &self.sampling
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Scalar coefficients of a tangent field with respect to the unit
    /// tangent frame of the indicatrix curve, one per grid angle.
    pub fn restrict(&self, field: &VerticalField) -> Result<Vec<f64>> {
        let values: Vec<[f64; 2]> = self
            .bundles
            .par_iter()
            .map(|bundle| -> Result<[f64; 2]> {
                let jets = field.eval_jets(bundle, 0)?;
                Ok([jets[0].value(), jets[1].value()])
            })
            .collect::<Result<Vec<_>>>()?;

        let mut coeffs = Vec::with_capacity(values.len());
        for (a, v) in values.iter().enumerate() {
            // tangency to the indicatrix level set: ⟨∂F/∂y, ξ⟩ = 0
            let bundle = &self.bundles[a];
            let fy = [
                bundle.f.derivative(2).value(),
                bundle.f.derivative(3).value(),
            ];
            let pairing = fy[0] * v[0] + fy[1] * v[1];
            let scale = (fy[0] * fy[0] + fy[1] * fy[1]).sqrt()
                * (v[0] * v[0] + v[1] * v[1]).sqrt();
            let residual = pairing.abs() / (1.0 + scale);
            if residual > 1e-6 {
                return Err(FinslerError::Tangency { residual });
            }
            let t = &self.sampling.tangents[a];
            coeffs.push(v[0] * t[0] + v[1] * t[1]);
        }
        Ok(coeffs)
    }
}

/// Restrict a tangent vertical field to the sampled indicatrix, returning
/// its coefficient against the unit tangent frame at each angle.
pub fn restrict_to_indicatrix(
    spec: &MetricSpec,
    field: &VerticalField,
    sampling: &IndicatrixSampling,
) -> Result<Vec<f64>> {
    let ctx = IndicatrixContext {
        spec: spec.clone(),
        sampling: sampling.clone(),
        order: field.depth(),
        bundles: sampling
            .points
            .par_iter()
            .map(|y| spray_jets(spec, &sampling.x, &y[..], field.depth()))
            .collect::<Result<Vec<_>>>()?,
    };
    ctx.restrict(field)
}

/// One generation round of the algebra closure.
#[derive(Clone, Debug, Serialize)]
pub struct RankRound {
    pub round: usize,
    pub field_count: usize,
    pub rank: usize,
    /// Full singular-value list so rank can be re-thresholded offline.
    pub singular_values: Vec<f64>,
}

/// Rank-by-round report of the bracket/∇ closure restricted to one
/// indicatrix.
#[derive(Clone, Debug, Serialize)]
pub struct RankReport {
    pub metric: String,
    pub point: Vec<f64>,
    pub grid: usize,
    pub depth_cap: usize,
    pub field_cap: usize,
    pub rounds: Vec<RankRound>,
    /// Rank unchanged over the final two rounds.
    pub saturated: bool,
    /// Field cap hit before the closure was exhausted.
    pub truncated: bool,
    /// Restricted coefficients of the retained fields (not serialized).
    #[serde(skip)]
    pub coefficients: Vec<Vec<f64>>,
}

impl RankReport {
    pub fn final_rank(&self) -> usize {
        self.rounds.last().map(|r| r.rank).unwrap_or(0)
    }

    pub fn classification(&self) -> &'static str {
        if self.saturated {
            "saturated"
        } else {
            "growing"
        }
    }
}

/// Relative singular-value threshold for numerical rank.
pub const RANK_REL_TOL: f64 = 1e-8;

/// Cosine-collinearity threshold used to deduplicate restricted fields.
const DEDUP_COSINE: f64 = 1.0 - 1e-10;

/// Close the curvature fields under `∇_1, ∇_2` and pairwise brackets for
/// `depth_cap` rounds, tracking the numerical rank of the restricted family
/// per round.
///
/// Candidates whose restricted coefficients are collinear with a retained
/// field (cosine above `1 − 1e-10`) or below the zero floor are dropped;
/// deeper linear dependence is the SVD's job. The `field_cap` bounds the
/// retained family; hitting it sets `truncated` rather than failing.
pub fn generate_algebra(
    spec: &MetricSpec,
    x: &[f64],
    depth_cap: usize,
    field_cap: usize,
    n_grid: usize,
) -> Result<RankReport> {
    if depth_cap > 4 {
        return Err(FinslerError::UnsupportedOrder {
            requested: depth_cap,
            max: 4,
        });
    }
    let ctx = IndicatrixContext::new(spec, x, n_grid, depth_cap)?;

    let mut fields: Vec<VerticalField> = Vec::new();
    let mut coeffs: Vec<Vec<f64>> = Vec::new();
    let mut max_norm = 0.0f64;
    let mut truncated = false;
    let mut rounds = Vec::with_capacity(depth_cap + 1);
    // index of the first field added in the previous round
    let mut prev_start = 0;

    let try_add = |fields: &mut Vec<VerticalField>,
                       coeffs: &mut Vec<Vec<f64>>,
                       max_norm: &mut f64,
                       candidate: VerticalField|
     -> Result<bool> {
        let c = ctx.restrict(&candidate)?;
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-8 * max_norm.max(1.0) {
            return Ok(false);
        }
        for kept in coeffs.iter() {
            let dot: f64 = kept.iter().zip(&c).map(|(a, b)| a * b).sum();
            let kept_norm = kept.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dot.abs() / (norm * kept_norm) > DEDUP_COSINE {
                return Ok(false);
            }
        }
        *max_norm = max_norm.max(norm);
        fields.push(candidate);
        coeffs.push(c);
        Ok(true)
    };

    // round 0: curvature fields from coordinate directions
    let n = 2;
    for j in 0..n {
        for k in (j + 1)..n {
            let mut xdir = vec![0.0; n];
            let mut ydir = vec![0.0; n];
            xdir[j] = 1.0;
            ydir[k] = 1.0;
            if fields.len() >= field_cap {
                truncated = true;
                break;
            }
            try_add(&mut fields, &mut coeffs, &mut max_norm, VerticalField::curvature(&xdir, &ydir))?;
        }
    }
    let (rank, sv) = numerical_rank(&coeffs, RANK_REL_TOL);
    rounds.push(RankRound {
        round: 0,
        field_count: fields.len(),
        rank,
        singular_values: sv,
    });

    for round in 1..=depth_cap {
        let fresh_start = prev_start;
        let count_before = fields.len();

        // covariant derivatives of fields added last round, then brackets
        // that involve at least one of them (older combinations were
        // already candidates in earlier rounds)
        let mut candidates: Vec<VerticalField> = Vec::new();
        for idx in fresh_start..count_before {
            for k in 0..n {
                candidates.push(fields[idx].covariant_derivative(k));
            }
        }
        for a in 0..count_before {
            for b in a.max(fresh_start)..count_before {
                if a == b {
                    continue;
                }
                candidates.push(fields[a].bracket(&fields[b]));
            }
        }

        for candidate in candidates {
            if fields.len() >= field_cap {
                truncated = true;
                break;
            }
            try_add(&mut fields, &mut coeffs, &mut max_norm, candidate)?;
        }

        let (rank, sv) = numerical_rank(&coeffs, RANK_REL_TOL);
        rounds.push(RankRound {
            round,
            field_count: fields.len(),
            rank,
            singular_values: sv,
        });
        prev_start = count_before;
    }

    let saturated = match rounds.len() {
        0 | 1 => true,
        2 => rounds[0].rank == rounds[1].rank,
        len => {
            rounds[len - 1].rank == rounds[len - 2].rank
                && rounds[len - 2].rank == rounds[len - 3].rank
        }
    };

    Ok(RankReport {
        metric: spec.id().to_string(),
        point: x.to_vec(),
        grid: n_grid,
        depth_cap,
        field_cap,
        rounds,
        saturated,
        truncated,
        coefficients: coeffs,
    })
}

/// Pointwise residuals of the surface identities
/// `∇_k ξ = 3 P_k ξ` and `∇_j ∇_k ξ = 3(4 P_j P_k − λ g_jk) ξ`
/// for the curvature field `ξ = R(∂₁, ∂₂)` on a projectively flat surface
/// of constant curvature. Returns the max relative residual of each.
pub fn surface_identity_check(
    spec: &MetricSpec,
    x: &[f64],
    samples: usize,
) -> Result<(f64, f64)> {
    if spec.dim() != 2 {
        return Err(FinslerError::SurfaceOnly(spec.dim()));
    }
    let n_grid = samples + samples % 2;
    let sampling = indicatrix_parametrize(spec, x, n_grid)?;
    let (lambda, _) = flag_curvature_fit(spec, 200, crate::DEFAULT_SEED)?;

    let xi = VerticalField::curvature(&[1.0, 0.0], &[0.0, 1.0]);
    let nabla: Vec<VerticalField> = (0..2).map(|k| xi.covariant_derivative(k)).collect();
    let nabla2: Vec<Vec<VerticalField>> = (0..2)
        .map(|j| (0..2).map(|k| nabla[k].covariant_derivative(j)).collect())
        .collect();

    let residuals: Vec<(f64, f64)> = sampling
        .points
        .par_iter()
        .map(|y| -> Result<(f64, f64)> {
            let bundle = spray_jets(spec, x, &y[..], 2)?;
            let p = projective_jet(spec, x, &y[..], 1)?;
            let p_y = [p.partial(&[2])?, p.partial(&[3])?];
            let xi_vals: Vec<f64> = xi.eval_jets(&bundle, 0)?.iter().map(Jet::value).collect();

            let mut first = 0.0f64;
            for k in 0..2 {
                let lhs: Vec<f64> = nabla[k]
                    .eval_jets(&bundle, 0)?
                    .iter()
                    .map(Jet::value)
                    .collect();
                let mut scale = 1.0f64;
                let mut dev = 0.0f64;
                for i in 0..2 {
                    let rhs = 3.0 * p_y[k] * xi_vals[i];
                    scale = scale.max(rhs.abs());
                    dev = dev.max((lhs[i] - rhs).abs());
                }
                first = first.max(dev / scale);
            }

            let mut second = 0.0f64;
            for j in 0..2 {
                for k in 0..2 {
                    let lhs: Vec<f64> = nabla2[j][k]
                        .eval_jets(&bundle, 0)?
                        .iter()
                        .map(Jet::value)
                        .collect();
                    let g_jk = bundle.g[idx2(2, j, k)].value();
                    let factor = 3.0 * (4.0 * p_y[j] * p_y[k] - lambda * g_jk);
                    let mut scale = 1.0f64;
                    let mut dev = 0.0f64;
                    for i in 0..2 {
                        let rhs = factor * xi_vals[i];
                        scale = scale.max(rhs.abs());
                        dev = dev.max((lhs[i] - rhs).abs());
                    }
                    second = second.max(dev / scale);
                }
            }
            Ok((first, second))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(residuals
        .into_iter()
        .fold((0.0, 0.0), |(a, b), (c, d)| (a.max(c), b.max(d))))
}

/// Least-squares dependence of one family member on `{1, P₁, P₂}`:
/// coefficients of `λ/4·g_jk = P_j P_k + a + b P₁ + c P₂` (product form)
/// or its Hessian-form analogue.
#[derive(Clone, Debug, Serialize)]
pub struct DependenceFit {
    pub coeffs: [f64; 3],
    pub residual: f64,
}

/// Rank data for one index pair `(j, k)` of the four-function family, in
/// both shapes the family appears in: with `P_j P_k` (product form) and
/// with `∂²P/∂y^j∂y^k` (Hessian form).
#[derive(Clone, Debug, Serialize)]
pub struct FamilyReport {
    pub j: usize,
    pub k: usize,
    pub rank_product_form: usize,
    pub singular_values_product_form: Vec<f64>,
    pub dependence_product_form: Option<DependenceFit>,
    pub rank_hessian_form: usize,
    pub singular_values_hessian_form: Vec<f64>,
    pub dependence_hessian_form: Option<DependenceFit>,
}

/// Gram-rank diagnostics of the function families `{1, P₁, P₂, …}` sampled
/// on the indicatrix.
#[derive(Clone, Debug, Serialize)]
pub struct DependenceTestResult {
    pub metric: String,
    pub point: Vec<f64>,
    pub grid: usize,
    pub lambda: f64,
    /// Rank of `{1, P₁, P₂}` alone.
    pub base_rank: usize,
    pub base_singular_values: Vec<f64>,
    pub families: Vec<FamilyReport>,
}

fn dependence_fit(target: &[f64], ones: &[f64], p1: &[f64], p2: &[f64]) -> DependenceFit {
    let m = target.len();
    let design = DMatrix::from_fn(m, 3, |r, c| match c {
        0 => ones[r],
        1 => p1[r],
        2 => p2[r],
        _ => unreachable!(),
    });
    // fit −target = a·1 + b·P₁ + c·P₂, matching λ/4·g = P_jP_k + a + bP₁ + cP₂
    let rhs = nalgebra::DVector::from_fn(m, |r, _| -target[r]);
    let sol = design
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .expect("least squares solve");
    let fitted = design * &sol;
    let mut dev = 0.0f64;
    let mut scale = 0.0f64;
    for r in 0..m {
        dev = dev.max((fitted[r] + target[r]).abs());
        scale = scale.max(target[r].abs());
    }
    DependenceFit {
        coeffs: [sol[0], sol[1], sol[2]],
        residual: dev / (1.0 + scale),
    }
}

/// Sample `{1, P₁, P₂}` and, for each `(j, k)`, the fourth functions
/// `P_j P_k − (λ/4) g_jk` and `∂²P/∂y^j∂y^k − (λ/4) g_jk` on the indicatrix
/// grid; report Gram ranks and, where rank-deficient, the dependence
/// coefficients.
pub fn function_independence_rank(
    spec: &MetricSpec,
    x: &[f64],
    n_grid: usize,
) -> Result<DependenceTestResult> {
    if spec.dim() != 2 {
        return Err(FinslerError::SurfaceOnly(spec.dim()));
    }
    let sampling = indicatrix_parametrize(spec, x, n_grid)?;
    let (lambda, _) = flag_curvature_fit(spec, 200, crate::DEFAULT_SEED)?;

    struct Row {
        p_y: [f64; 2],
        p_yy: [[f64; 2]; 2],
        g: [[f64; 2]; 2],
    }
    let rows: Vec<Row> = sampling
        .points
        .par_iter()
        .map(|y| -> Result<Row> {
            let p = projective_jet(spec, x, &y[..], 2)?;
            let g = fundamental_tensor(spec, x, &y[..])?;
            Ok(Row {
                p_y: [p.partial(&[2])?, p.partial(&[3])?],
                p_yy: [
                    [p.partial(&[2, 2])?, p.partial(&[2, 3])?],
                    [p.partial(&[3, 2])?, p.partial(&[3, 3])?],
                ],
                g: [[g[(0, 0)], g[(0, 1)]], [g[(1, 0)], g[(1, 1)]]],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let ones = vec![1.0; rows.len()];
    let p1: Vec<f64> = rows.iter().map(|r| r.p_y[0]).collect();
    let p2: Vec<f64> = rows.iter().map(|r| r.p_y[1]).collect();
    let (base_rank, base_sv) =
        numerical_rank(&[ones.clone(), p1.clone(), p2.clone()], RANK_REL_TOL);

    let mut families = Vec::new();
    for (j, k) in [(0, 0), (0, 1), (1, 1)] {
        let product: Vec<f64> = rows
            .iter()
            .map(|r| r.p_y[j] * r.p_y[k] - 0.25 * lambda * r.g[j][k])
            .collect();
        let hessian: Vec<f64> = rows
            .iter()
            .map(|r| r.p_yy[j][k] - 0.25 * lambda * r.g[j][k])
            .collect();

        let (rank_product, sv_product) = numerical_rank(
            &[ones.clone(), p1.clone(), p2.clone(), product.clone()],
            RANK_REL_TOL,
        );
        let (rank_hessian, sv_hessian) = numerical_rank(
            &[ones.clone(), p1.clone(), p2.clone(), hessian.clone()],
            RANK_REL_TOL,
        );

        families.push(FamilyReport {
            j: j + 1,
            k: k + 1,
            rank_product_form: rank_product,
            singular_values_product_form: sv_product,
            dependence_product_form: (rank_product < 4)
                .then(|| dependence_fit(&product, &ones, &p1, &p2)),
            rank_hessian_form: rank_hessian,
            singular_values_hessian_form: sv_hessian,
            dependence_hessian_form: (rank_hessian < 4)
                .then(|| dependence_fit(&hessian, &ones, &p1, &p2)),
        });
    }

    Ok(DependenceTestResult {
        metric: spec.id().to_string(),
        point: x.to_vec(),
        grid: n_grid,
        lambda,
        base_rank,
        base_singular_values: base_sv,
        families,
    })
}

/// Outcome of the one-variable projective-factor profile test.
#[derive(Clone, Debug, Serialize)]
pub struct AffineClassification {
    pub affine: bool,
    /// Max second difference of the profile `f(t) = P(x, (t, 1))`.
    pub max_second_difference: f64,
    /// Fitted `(α, β)` of `f(t) = α t + β` when affine.
    pub alpha_beta: Option<(f64, f64)>,
    /// Max `|f − (α t + β)|` over the grid.
    pub fit_residual: Option<f64>,
    /// Residual of the quadratic compatibility system under the pattern
    /// `c₁ = b₃ = 0`, `b₁ = 2c₂`, `c₃ = 2b₂` with `c₂ = −α`, `b₂ = −β`.
    pub system_residual: Option<f64>,
}

/// Profile grid for the affine test: `t ∈ [0.2, 2.0]`, 41 points, `v = 1`,
/// inside a direction cone where both fibre coordinates stay nonzero.
pub const AFFINE_GRID: (f64, f64, usize) = (0.2, 2.0, 41);

/// Build the profile `f(t) = P(x, (t·v, v))/v` with `v = 1`, estimate `f''`
/// by second differences, and classify the projective factor as affine or
/// not at `x`.
pub fn affine_factor_test(spec: &MetricSpec, x: &[f64]) -> Result<AffineClassification> {
    if spec.dim() != 2 {
        return Err(FinslerError::SurfaceOnly(spec.dim()));
    }
    let (t0, t1, m) = AFFINE_GRID;
    let h = (t1 - t0) / (m - 1) as f64;
    let ts: Vec<f64> = (0..m).map(|i| t0 + i as f64 * h).collect();
    let f: Vec<f64> = ts
        .iter()
        .map(|&t| Ok(projective_jet(spec, x, &[t, 1.0], 0)?.value()))
        .collect::<Result<Vec<_>>>()?;

    let mut max_f2 = 0.0f64;
    for i in 1..m - 1 {
        max_f2 = max_f2.max(((f[i + 1] - 2.0 * f[i] + f[i - 1]) / (h * h)).abs());
    }
    let f_scale = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let affine = max_f2 < 1e-8 * (1.0 + f_scale);

    if !affine {
        return Ok(AffineClassification {
            affine: false,
            max_second_difference: max_f2,
            alpha_beta: None,
            fit_residual: None,
            system_residual: None,
        });
    }

    // linear least squares f = α t + β
    let mt = ts.iter().sum::<f64>() / m as f64;
    let mf = f.iter().sum::<f64>() / m as f64;
    let var: f64 = ts.iter().map(|t| (t - mt) * (t - mt)).sum();
    let cov: f64 = ts.iter().zip(&f).map(|(t, v)| (t - mt) * (v - mf)).sum();
    let alpha = cov / var;
    let beta = mf - alpha * mt;
    let fit_residual = ts
        .iter()
        .zip(&f)
        .map(|(t, v)| (v - (alpha * t + beta)).abs())
        .fold(0.0, f64::max);

    // compatibility system residual under the solved pattern
    let c2 = -alpha;
    let b2 = -beta;
    let b1 = 2.0 * c2;
    let c3 = 2.0 * b2;
    let (c1, b3) = (0.0, 0.0);
    let mut system_residual = 0.0f64;
    for (t, v) in ts.iter().zip(&f) {
        let eq1 = v + b2 + (b1 - c2) * t - c1 * t * t;
        let eq2 = t * v - b3 + (c3 - b2) * t + c2 * t * t;
        system_residual = system_residual.max(eq1.abs().max(eq2.abs()));
    }

    Ok(AffineClassification {
        affine: true,
        max_second_difference: max_f2,
        alpha_beta: Some((alpha, beta)),
        fit_residual: Some(fit_residual),
        system_residual: Some(system_residual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricSpec;
    use approx::assert_relative_eq;

    #[test]
    fn euclidean_indicatrix_is_unit_circle() {
        let spec = MetricSpec::euclidean(2).unwrap();
        let s = indicatrix_parametrize(&spec, &[0.3, -0.1], 16).unwrap();
        for r in &s.radii {
            assert_relative_eq!(*r, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn funk_indicatrix_shifts_off_origin() {
        let spec = MetricSpec::funk(2).unwrap();
        let at_origin = indicatrix_parametrize(&spec, &[0.0, 0.0], 8).unwrap();
        for r in &at_origin.radii {
            assert_relative_eq!(*r, 1.0, epsilon = 1e-14);
        }
        // at x = (0.3, 0) the closed form gives r(0) = 0.7 and r(π) = 1.3
        let shifted = indicatrix_parametrize(&spec, &[0.3, 0.0], 8).unwrap();
        assert_relative_eq!(shifted.radii[0], 0.7, epsilon = 1e-13);
        assert_relative_eq!(shifted.radii[4], 1.3, epsilon = 1e-13);
        assert!((shifted.radii[0] - shifted.radii[4]).abs() > 1e-3);
    }

    #[test]
    fn odd_grid_rejected() {
        let spec = MetricSpec::euclidean(2).unwrap();
        let err = indicatrix_parametrize(&spec, &[0.0, 0.0], 15).unwrap_err();
        assert!(matches!(err, FinslerError::InvalidGrid(_)));
    }

    #[test]
    fn rotation_field_has_constant_coefficient() {
        let spec = MetricSpec::euclidean(2).unwrap();
        let sampling = indicatrix_parametrize(&spec, &[0.0, 0.0], 16).unwrap();
        let rotation =
            VerticalField::linear(DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]));
        let coeffs = restrict_to_indicatrix(&spec, &rotation, &sampling).unwrap();
        for c in &coeffs {
            assert_relative_eq!(*c, coeffs[0], epsilon = 1e-12);
        }
        assert!(coeffs[0].abs() > 0.9);
    }

    #[test]
    fn zero_field_restricts_to_zero() {
        let spec = MetricSpec::euclidean(2).unwrap();
        let sampling = indicatrix_parametrize(&spec, &[0.2, 0.1], 8).unwrap();
        let xi = VerticalField::curvature(&[1.0, 0.0], &[0.0, 1.0]);
        let coeffs = restrict_to_indicatrix(&spec, &xi, &sampling).unwrap();
        for c in &coeffs {
            assert!(c.abs() < 1e-14);
        }
    }

    #[test]
    fn bracket_of_linear_fields_is_matrix_commutator() {
        // [Ay, By] = (BA − AB) y
        let spec = MetricSpec::euclidean(2).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, -1.0]);
        let fa = VerticalField::linear(a.clone());
        let fb = VerticalField::linear(b.clone());
        let bracket = fa.bracket(&fb);
        let commutator = &b * &a - &a * &b;
        let y = [0.8, -0.6];
        let vals = bracket.values(&spec, &[0.1, 0.2], &y).unwrap();
        for i in 0..2 {
            let expected = commutator[(i, 0)] * y[0] + commutator[(i, 1)] * y[1];
            assert_relative_eq!(vals[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn bracket_antisymmetry_pointwise() {
        let spec = MetricSpec::funk(2).unwrap();
        let xi = VerticalField::curvature(&[1.0, 0.0], &[0.0, 1.0]);
        let eta = xi.covariant_derivative(0);
        let ab = xi.bracket(&eta);
        let ba = eta.bracket(&xi);
        let x = [0.3, 0.1];
        let y = [0.9, 0.5];
        let u = ab.values(&spec, &x, &y).unwrap();
        let v = ba.values(&spec, &x, &y).unwrap();
        for i in 0..2 {
            assert_relative_eq!(u[i], -v[i], epsilon = 1e-12, max_relative = 1e-10);
        }
        let self_bracket = xi.bracket(&xi).values(&spec, &x, &y).unwrap();
        for c in self_bracket {
            assert_eq!(c, 0.0);
        }
    }

    #[test]
    fn euclidean_algebra_is_trivial() {
        let spec = MetricSpec::euclidean(2).unwrap();
        let report = generate_algebra(&spec, &[0.2, -0.3], 3, 16, 16).unwrap();
        for round in &report.rounds {
            assert_eq!(round.rank, 0);
        }
        assert!(report.saturated);
        assert!(!report.truncated);
    }

    #[test]
    fn affine_test_euclidean_degenerate() {
        let spec = MetricSpec::euclidean(2).unwrap();
        let result = affine_factor_test(&spec, &[0.1, 0.2]).unwrap();
        assert!(result.affine);
        let (alpha, beta) = result.alpha_beta.unwrap();
        assert_relative_eq!(alpha, 0.0, epsilon = 1e-12);
        assert_relative_eq!(beta, 0.0, epsilon = 1e-12);
    }
}
