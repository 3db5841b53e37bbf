//! Nonlinear parallel transport along chart curves.
//!
//! A vector field `X(t)` along a curve `c(t)` is parallel when
//! `dX^i/dt + G^i_j(c(t), X(t)) ċ^j(t) = 0`. The integrator is classical
//! fixed-step RK4; fixed steps keep emitted tables reproducible. Transport
//! does not preserve the metric tensor but preserves the value of the
//! Finsler function, which is the drift monitored here.

use rayon::prelude::*;

use crate::error::{FinslerError, Result};
use crate::metric::MetricSpec;
use crate::spray::{connection_matrix, riemann_curvature};

/// A piecewise-smooth curve inside a chart, parametrized over `[0, 1]`.
#[derive(Clone, Debug)]
pub enum ChartCurve {
    /// Straight segments through the listed vertices.
    Polyline { vertices: Vec<Vec<f64>> },
    /// Planar circle traversed counterclockwise (surfaces only).
    Circle { center: Vec<f64>, radius: f64 },
    /// Parallelogram loop: corner → +u → +v → −u → −v. With `u = εX`,
    /// `v = εY` this orientation makes the shrinking-loop estimate converge
    /// to `+R(X, Y)`.
    Rectangle {
        corner: Vec<f64>,
        edge_u: Vec<f64>,
        edge_v: Vec<f64>,
    },
    /// A curve traversed backwards.
    Reversed(Box<ChartCurve>),
}

#[derive(Clone)]
enum Piece {
    Line { a: Vec<f64>, b: Vec<f64> },
    Arc { center: Vec<f64>, radius: f64, from: f64, to: f64 },
}

impl Piece {
    fn position(&self, s: f64) -> Vec<f64> {
        match self {
            Piece::Line { a, b } => a
                .iter()
                .zip(b)
                .map(|(ai, bi)| ai + s * (bi - ai))
                .collect(),
            Piece::Arc {
                center,
                radius,
                from,
                to,
            } => {
                let angle = from + s * (to - from);
                vec![
                    center[0] + radius * angle.cos(),
                    center[1] + radius * angle.sin(),
                ]
            }
        }
    }

    fn velocity(&self, s: f64) -> Vec<f64> {
        match self {
            Piece::Line { a, b } => a.iter().zip(b).map(|(ai, bi)| bi - ai).collect(),
            Piece::Arc {
                center: _,
                radius,
                from,
                to,
            } => {
                let angle = from + s * (to - from);
                let rate = to - from;
                vec![
                    -radius * rate * angle.sin(),
                    radius * rate * angle.cos(),
                ]
            }
        }
    }

    fn reversed(&self) -> Piece {
        match self {
            Piece::Line { a, b } => Piece::Line {
                a: b.clone(),
                b: a.clone(),
            },
            Piece::Arc {
                center,
                radius,
                from,
                to,
            } => Piece::Arc {
                center: center.clone(),
                radius: *radius,
                from: *to,
                to: *from,
            },
        }
    }

    fn length(&self) -> f64 {
        match self {
            Piece::Line { a, b } => a
                .iter()
                .zip(b)
                .map(|(ai, bi)| (bi - ai) * (bi - ai))
                .sum::<f64>()
                .sqrt(),
            Piece::Arc { radius, from, to, .. } => radius * (to - from).abs(),
        }
    }
}

impl ChartCurve {
    fn pieces(&self) -> Vec<Piece> {
        match self {
            ChartCurve::Polyline { vertices } => vertices
                .windows(2)
                .map(|w| Piece::Line {
                    a: w[0].clone(),
                    b: w[1].clone(),
                })
                .collect(),
            ChartCurve::Circle { center, radius } => vec![Piece::Arc {
                center: center.clone(),
                radius: *radius,
                from: 0.0,
                to: 2.0 * std::f64::consts::PI,
            }],
            ChartCurve::Rectangle {
                corner,
                edge_u,
                edge_v,
            } => {
                let add = |p: &[f64], q: &[f64]| -> Vec<f64> {
                    p.iter().zip(q).map(|(a, b)| a + b).collect()
                };
                let c0 = corner.clone();
                let c1 = add(&c0, edge_u);
                let c2 = add(&c1, edge_v);
                let c3 = add(&c0, edge_v);
                vec![
                    Piece::Line { a: c0.clone(), b: c1.clone() },
                    Piece::Line { a: c1, b: c2.clone() },
                    Piece::Line { a: c2, b: c3.clone() },
                    Piece::Line { a: c3, b: c0 },
                ]
            }
            ChartCurve::Reversed(inner) => {
                let mut pieces: Vec<Piece> = inner.pieces().iter().map(Piece::reversed).collect();
                pieces.reverse();
                pieces
            }
        }
    }

    pub fn reversed(&self) -> ChartCurve {
        ChartCurve::Reversed(Box::new(self.clone()))
    }

    pub fn start(&self) -> Vec<f64> {
        self.pieces()[0].position(0.0)
    }

    pub fn end(&self) -> Vec<f64> {
        self.pieces().last().unwrap().position(1.0)
    }

    pub fn is_closed(&self) -> bool {
        let s = self.start();
        let e = self.end();
        s.iter()
            .zip(&e)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            < 1e-12
    }

    /// Euclidean chart length (drift bounds are quoted per unit length).
    pub fn chart_length(&self) -> f64 {
        self.pieces().iter().map(Piece::length).sum()
    }

    /// Concatenation, gluing the end of `self` to the start of `other`.
    pub fn concat(&self, other: &ChartCurve) -> Result<ChartCurve> {
        let joint = self.end();
        let start = other.start();
        let gap = joint
            .iter()
            .zip(&start)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if gap > 1e-12 {
            return Err(FinslerError::InvalidGrid(format!(
                "curves do not join (gap {gap:.3e})"
            )));
        }
        match (self, other) {
            (
                ChartCurve::Polyline { vertices: a },
                ChartCurve::Polyline { vertices: b },
            ) => {
                let mut vertices = a.clone();
                vertices.extend(b.iter().skip(1).cloned());
                Ok(ChartCurve::Polyline { vertices })
            }
            _ => Err(FinslerError::InvalidGrid(
                "only polylines can be concatenated".into(),
            )),
        }
    }
}

/// Outcome of one transport run.
#[derive(Clone, Debug)]
pub struct TransportResult {
    /// Transported vector at the end of the curve.
    pub y_final: Vec<f64>,
    /// Max over steps of `|F(c(t), X(t)) − F(c(0), X(0))|`.
    pub f_drift: f64,
    /// Number of RK4 steps taken.
    pub steps: usize,
}

/// Drift bound above which transport is reported unstable.
pub const DRIFT_BOUND: f64 = 1e-4;

/// One RK4 step across the whole (sub-)piece.
fn rk4_step(spec: &MetricSpec, piece: &Piece, y: &mut [f64]) -> Result<()> {
    let n = y.len();
    let rhs = |s: f64, state: &[f64]| -> Result<Vec<f64>> {
        let pos = piece.position(s);
        let vel = piece.velocity(s);
        let gj = connection_matrix(spec, &pos, state)?;
        Ok((0..n)
            .map(|i| -(0..n).map(|j| gj[(i, j)] * vel[j]).sum::<f64>())
            .collect())
    };
    let k1 = rhs(0.0, y)?;
    let y2: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * k1[i]).collect();
    let k2 = rhs(0.5, &y2)?;
    let y3: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * k2[i]).collect();
    let k3 = rhs(0.5, &y3)?;
    let y4: Vec<f64> = (0..n).map(|i| y[i] + k3[i]).collect();
    let k4 = rhs(1.0, &y4)?;
    for i in 0..n {
        y[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    Ok(())
}

/// Integrate parallel transport of `y0` along `curve` with (global) step
/// size `step`; pieces are integrated separately so corners never fall
/// inside an RK4 step.
pub fn transport_along(
    spec: &MetricSpec,
    curve: &ChartCurve,
    y0: &[f64],
    step: f64,
) -> Result<TransportResult> {
    if y0.iter().all(|&c| c == 0.0) {
        return Err(FinslerError::SlitViolation);
    }
    assert!(step > 0.0 && step < 1.0, "step must lie in (0, 1)");
    let pieces = curve.pieces();
    let span = 1.0 / pieces.len() as f64;
    let f = spec.finsler_fn();

    let start = pieces[0].position(0.0);
    if !spec.domain().contains(&start) {
        return Err(FinslerError::Domain(format!("curve start {start:?}")));
    }
    let f0 = crate::jet::scalar_value(&f, &start, y0)?;

    let mut y = y0.to_vec();
    let mut drift = 0.0f64;
    let mut total_steps = 0;
    for piece in &pieces {
        let steps = (span / step).ceil() as usize;
        // integrate stepwise so the drift monitor sees every step boundary
        let h = 1.0 / steps as f64;
        for k in 0..steps {
            let sub = piece.sub(k as f64 * h, (k + 1) as f64 * h);
            rk4_step(spec, &sub, &mut y)?;
            let pos = sub.position(1.0);
            if !spec.domain().contains(&pos) {
                return Err(FinslerError::Domain(format!("curve exits domain at {pos:?}")));
            }
            let fv = crate::jet::scalar_value(&f, &pos, &y)?;
            drift = drift.max((fv - f0).abs());
            total_steps += 1;
        }
    }
    if drift > DRIFT_BOUND {
        return Err(FinslerError::IntegrationUnstable {
            drift,
            bound: DRIFT_BOUND,
        });
    }
    Ok(TransportResult {
        y_final: y,
        f_drift: drift,
        steps: total_steps,
    })
}

impl Piece {
    /// Restriction of the piece to a sub-interval, reparametrized to [0, 1].
    fn sub(&self, lo: f64, hi: f64) -> Piece {
        match self {
            Piece::Line { .. } => Piece::Line {
                a: self.position(lo),
                b: self.position(hi),
            },
            Piece::Arc {
                center,
                radius,
                from,
                to,
            } => Piece::Arc {
                center: center.clone(),
                radius: *radius,
                from: from + lo * (to - from),
                to: from + hi * (to - from),
            },
        }
    }
}

/// One row of a loop-holonomy table.
#[derive(Clone, Debug, serde::Serialize)]
pub struct HolonomyRow {
    pub theta_in: f64,
    pub theta_out: f64,
    pub f_drift: f64,
}

/// Loop holonomy acting on indicatrix samples.
#[derive(Clone, Debug, serde::Serialize)]
pub struct LoopHolonomyResult {
    pub base: Vec<f64>,
    pub rows: Vec<HolonomyRow>,
    /// Max `|F(x, τ(y)) − 1|` over samples (unprojected).
    pub max_indicatrix_defect: f64,
}

/// Transport every point of the indicatrix at the loop's base point around
/// the loop. Samples are integrated independently (and in parallel).
///
/// With `project` set, returned angles come from the transported vectors
/// radially rescaled back onto the indicatrix; the defect is always
/// measured before projection so integrator bugs stay visible.
pub fn loop_holonomy(
    spec: &MetricSpec,
    curve: &ChartCurve,
    n_samples: usize,
    step: f64,
    project: bool,
) -> Result<LoopHolonomyResult> {
    if !curve.is_closed() {
        return Err(FinslerError::InvalidGrid("holonomy loop must be closed".into()));
    }
    let base = curve.start();
    let sampling = crate::holonomy::indicatrix_parametrize(spec, &base, n_samples)?;
    let f = spec.finsler_fn();

    let rows: Vec<(HolonomyRow, f64)> = sampling
        .points
        .par_iter()
        .zip(&sampling.thetas)
        .map(|(y, &theta_in)| -> Result<(HolonomyRow, f64)> {
            let result = transport_along(spec, curve, y, step)?;
            let fv = crate::jet::scalar_value(&f, &base, &result.y_final)?;
            let defect = (fv - 1.0).abs();
            let out = if project {
                result.y_final.iter().map(|c| c / fv).collect()
            } else {
                result.y_final.clone()
            };
            let mut theta_out = out[1].atan2(out[0]);
            if theta_out < 0.0 {
                theta_out += 2.0 * std::f64::consts::PI;
            }
            Ok((
                HolonomyRow {
                    theta_in,
                    theta_out,
                    f_drift: result.f_drift,
                },
                defect,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let max_defect = rows.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    Ok(LoopHolonomyResult {
        base,
        rows: rows.into_iter().map(|(r, _)| r).collect(),
        max_indicatrix_defect: max_defect,
    })
}

/// One shrinking-loop curvature estimate.
#[derive(Clone, Debug, serde::Serialize)]
pub struct LoopCurvatureEstimate {
    pub epsilon: f64,
    /// `D(ε) = (τ_loop(y) − y)/ε²`.
    pub estimate: Vec<f64>,
    /// `‖D(ε) − R(X,Y)y‖`.
    pub deviation: f64,
}

/// Result of the loop-shrinking consistency probe.
#[derive(Clone, Debug, serde::Serialize)]
pub struct LoopCurvatureProbe {
    pub reference: Vec<f64>,
    pub estimates: Vec<LoopCurvatureEstimate>,
    /// Log-log slope of deviation vs ε; `None` when deviations sit at
    /// rounding level (exact agreement, e.g. flat metrics).
    pub slope: Option<f64>,
}

/// Transport around parallelogram loops with edges `εX`, `εY` and check
/// that `(τ(y) − y)/ε²` converges to the curvature value `R(X,Y)y` at first
/// order in ε. A log-log slope outside `[0.8, 1.3]` flags a transport or
/// curvature bug.
pub fn curvature_from_loops(
    spec: &MetricSpec,
    x: &[f64],
    y0: &[f64],
    xdir: &[f64],
    ydir: &[f64],
    epsilons: &[f64],
    step: f64,
) -> Result<LoopCurvatureProbe> {
    assert!(epsilons.len() >= 2, "need at least two loop sizes");
    let n = spec.dim();
    let curv = riemann_curvature(spec, x, y0)?;
    let reference: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .flat_map(|j| (0..n).map(move |k| (j, k)))
                .map(|(j, k)| curv.riem.get(i, j, k) * xdir[j] * ydir[k])
                .sum()
        })
        .collect();

    let estimates: Vec<LoopCurvatureEstimate> = epsilons
        .par_iter()
        .map(|&eps| -> Result<LoopCurvatureEstimate> {
            let curve = ChartCurve::Rectangle {
                corner: x.to_vec(),
                edge_u: xdir.iter().map(|c| c * eps).collect(),
                edge_v: ydir.iter().map(|c| c * eps).collect(),
            };
            let result = transport_along(spec, &curve, y0, step)?;
            let estimate: Vec<f64> = (0..n)
                .map(|i| (result.y_final[i] - y0[i]) / (eps * eps))
                .collect();
            let deviation = estimate
                .iter()
                .zip(&reference)
                .map(|(d, r)| (d - r) * (d - r))
                .sum::<f64>()
                .sqrt();
            Ok(LoopCurvatureEstimate {
                epsilon: eps,
                estimate,
                deviation,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let slope = if estimates.iter().all(|e| e.deviation < 1e-13) {
        None
    } else {
        let pts: Vec<(f64, f64)> = estimates
            .iter()
            .map(|e| (e.epsilon.ln(), e.deviation.max(1e-300).ln()))
            .collect();
        let m = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        Some((m * sxy - sx * sy) / (m * sxx - sx * sx))
    };

    if let Some(s) = slope {
        if !(0.8..=1.3).contains(&s) {
            return Err(FinslerError::ConsistencyFailure {
                slope: s,
                lo: 0.8,
                hi: 1.3,
            });
        }
    }

    Ok(LoopCurvatureProbe {
        reference,
        estimates,
        slope,
    })
}
