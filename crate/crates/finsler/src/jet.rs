//! Truncated multivariate Taylor (jet) arithmetic.
//!
//! A [`Jet`] carries the Taylor coefficients of a scalar function of the
//! chart variables `(x¹..xⁿ, y¹..yⁿ)` around an evaluation point, up to a
//! fixed total order. Arithmetic on jets propagates derivatives exactly (to
//! rounding), so every connection coefficient and curvature component
//! computed downstream is a closed-form composition rather than a finite
//! difference. A finite-difference oracle ([`fd_check`]) is kept alongside
//! as the independent validation route.
//!
//! The public entry point [`jet_eval`] caps the requested order at
//! [`MAX_ORDER`]; geometry internals compose higher-order jets directly
//! where chained derivatives demand it.

use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use once_cell::sync::Lazy;
use std::sync::Mutex;

use crate::error::{FinslerError, Result};

/// Maximum derivative order accepted by the public evaluation API.
pub const MAX_ORDER: usize = 4;

/// Hard cap on the number of jet variables (2n for a chart of dimension n).
pub const MAX_VARS: usize = 12;

type Mono = [u8; MAX_VARS];

fn mono_degree(m: &Mono) -> usize {
    m.iter().map(|&e| e as usize).sum()
}

/// Shared tables for one `(nvars, order)` truncation: the monomial basis in
/// degree-ascending order and the product pairing in CSR layout.
///
/// Spaces are cached globally; smaller orders enumerate a prefix of larger
/// ones, which makes truncation a slice copy.
pub struct JetSpace {
    nvars: usize,
    order: usize,
    monomials: Vec<Mono>,
    position: HashMap<Mono, usize>,
    prod_starts: Vec<u32>,
    prod_pairs: Vec<(u32, u32)>,
}

type SpaceCache = Mutex<HashMap<(usize, usize), Arc<JetSpace>>>;

static SPACE_CACHE: Lazy<SpaceCache> = Lazy::new(|| Mutex::new(HashMap::new()));

impl JetSpace {
    /// Fetch (building on first use) the cached space for `nvars` variables
    /// truncated at total `order`.
    pub fn get(nvars: usize, order: usize) -> Arc<JetSpace> {
        assert!(
            (1..=MAX_VARS).contains(&nvars),
            "jet variable count out of range"
        );
        let mut cache = SPACE_CACHE.lock().unwrap();
        cache
            .entry((nvars, order))
            .or_insert_with(|| Arc::new(JetSpace::build(nvars, order)))
            .clone()
    }

    fn build(nvars: usize, order: usize) -> JetSpace {
        let mut monomials = Vec::new();
        let mut current = [0u8; MAX_VARS];
        for degree in 0..=order {
            enumerate_degree(nvars, degree, 0, &mut current, &mut monomials);
        }
        let position: HashMap<Mono, usize> = monomials
            .iter()
            .enumerate()
            .map(|(i, m)| (*m, i))
            .collect();

        // Group product pairs by target monomial.
        let m = monomials.len();
        let mut groups: Vec<Vec<(u32, u32)>> = vec![Vec::new(); m];
        for i in 0..m {
            let di = mono_degree(&monomials[i]);
            for j in 0..m {
                if di + mono_degree(&monomials[j]) > order {
                    continue;
                }
                let mut target = monomials[i];
                for v in 0..nvars {
                    target[v] += monomials[j][v];
                }
                let g = position[&target];
                groups[g].push((i as u32, j as u32));
            }
        }
        let mut prod_starts = Vec::with_capacity(m + 1);
        let mut prod_pairs = Vec::new();
        prod_starts.push(0u32);
        for group in groups {
            prod_pairs.extend_from_slice(&group);
            prod_starts.push(prod_pairs.len() as u32);
        }

        JetSpace {
            nvars,
            order,
            monomials,
            position,
            prod_starts,
            prod_pairs,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }
}

fn enumerate_degree(nvars: usize, remaining: usize, var: usize, current: &mut Mono, out: &mut Vec<Mono>) {
    if var == nvars - 1 {
        current[var] = remaining as u8;
        out.push(*current);
        current[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e as u8;
        enumerate_degree(nvars, remaining - e, var + 1, current, out);
    }
    current[var] = 0;
}

/// A truncated Taylor expansion: coefficient `c[α]` is `∂^α f / α!` at the
/// expansion point.
#[derive(Clone)]
pub struct Jet {
    space: Arc<JetSpace>,
    coeff: Vec<f64>,
}

impl Jet {
    pub fn constant(space: &Arc<JetSpace>, value: f64) -> Jet {
        let mut coeff = vec![0.0; space.len()];
        coeff[0] = value;
        Jet {
            space: space.clone(),
            coeff,
        }
    }

    /// The seeded jet of coordinate variable `var` with base value `value`.
    pub fn variable(space: &Arc<JetSpace>, var: usize, value: f64) -> Jet {
        assert!(var < space.nvars);
        let mut coeff = vec![0.0; space.len()];
        coeff[0] = value;
        if space.order >= 1 {
            let mut e = [0u8; MAX_VARS];
            e[var] = 1;
            coeff[space.position[&e]] = 1.0;
        }
        Jet {
            space: space.clone(),
            coeff,
        }
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    pub fn order(&self) -> usize {
        self.space.order
    }

    pub fn value(&self) -> f64 {
        self.coeff[0]
    }

    /// Taylor coefficient for an exponent multi-index (not the raw partial).
    pub fn taylor_coeff(&self, exponents: &[u8]) -> f64 {
        let mut m = [0u8; MAX_VARS];
        m[..exponents.len()].copy_from_slice(exponents);
        match self.space.position.get(&m) {
            Some(&p) => self.coeff[p],
            None => 0.0,
        }
    }

    /// The partial derivative for a derivative sequence of variable indices
    /// (any permutation of the sequence queries the same stored value).
    pub fn partial(&self, vars: &[usize]) -> Result<f64> {
        if vars.len() > self.space.order {
            return Err(FinslerError::UnsupportedOrder {
                requested: vars.len(),
                max: self.space.order,
            });
        }
        let mut m = [0u8; MAX_VARS];
        for &v in vars {
            assert!(v < self.space.nvars, "variable index out of range");
            m[v] += 1;
        }
        let pos = self.space.position[&m];
        let factorial: f64 = m[..self.space.nvars]
            .iter()
            .map(|&e| (1..=e as u64).product::<u64>() as f64)
            .product();
        Ok(self.coeff[pos] * factorial)
    }

    /// Truncate to a lower order (degree-ascending enumeration makes the
    /// smaller basis a prefix of the larger one).
    pub fn to_order(&self, order: usize) -> Jet {
        assert!(order <= self.space.order, "cannot raise jet order by truncation");
        if order == self.space.order {
            return self.clone();
        }
        let target = JetSpace::get(self.space.nvars, order);
        let coeff = self.coeff[..target.len()].to_vec();
        Jet { space: target, coeff }
    }

    /// Jet of `∂f/∂(var)`, one order lower.
    pub fn derivative(&self, var: usize) -> Jet {
        assert!(self.space.order >= 1, "cannot differentiate an order-0 jet");
        assert!(var < self.space.nvars);
        let target = JetSpace::get(self.space.nvars, self.space.order - 1);
        let mut coeff = vec![0.0; target.len()];
        for (pos, mono) in target.monomials.iter().enumerate() {
            let mut shifted = *mono;
            shifted[var] += 1;
            let src = self.space.position[&shifted];
            coeff[pos] = self.coeff[src] * f64::from(shifted[var]);
        }
        Jet { space: target, coeff }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            space: self.space.clone(),
            coeff: self.coeff.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut out = self.clone();
        out.coeff[0] += s;
        out
    }

    /// Apply a univariate analytic map given its Taylor coefficients
    /// `d[k] = φ⁽ᵏ⁾(value)/k!` around the jet's constant term.
    fn compose(&self, d: &[f64]) -> Jet {
        let order = self.space.order;
        debug_assert_eq!(d.len(), order + 1);
        let mut h = self.clone();
        h.coeff[0] = 0.0;
        let mut acc = Jet::constant(&self.space, d[order]);
        for k in (0..order).rev() {
            acc = &acc * &h;
            acc.coeff[0] += d[k];
        }
        acc
    }

    pub fn sqrt(&self) -> Result<Jet> {
        let u0 = self.coeff[0];
        if u0 <= 0.0 {
            return Err(FinslerError::NonSmooth(format!(
                "sqrt of non-positive jet value {u0}"
            )));
        }
        let s = u0.sqrt();
        let order = self.space.order;
        let mut d = Vec::with_capacity(order + 1);
        let mut binom = 1.0; // binom(1/2, k)
        for k in 0..=order {
            if k > 0 {
                binom *= (1.5 - k as f64) / k as f64;
            }
            d.push(s * binom / u0.powi(k as i32));
        }
        Ok(self.compose(&d))
    }

    pub fn recip(&self) -> Result<Jet> {
        let u0 = self.coeff[0];
        if u0 == 0.0 {
            return Err(FinslerError::NonSmooth("division by zero jet value".into()));
        }
        let order = self.space.order;
        let mut d = Vec::with_capacity(order + 1);
        let mut cur = 1.0 / u0;
        for _ in 0..=order {
            d.push(cur);
            cur = -cur / u0;
        }
        Ok(self.compose(&d))
    }

    pub fn div(&self, rhs: &Jet) -> Result<Jet> {
        Ok(self * &rhs.recip()?)
    }

    fn assert_same_space(&self, rhs: &Jet) {
        assert!(
            self.space.nvars == rhs.space.nvars && self.space.order == rhs.space.order,
            "jet space mismatch: ({}, {}) vs ({}, {})",
            self.space.nvars,
            self.space.order,
            rhs.space.nvars,
            rhs.space.order
        );
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.assert_same_space(rhs);
        Jet {
            space: self.space.clone(),
            coeff: self
                .coeff
                .iter()
                .zip(&rhs.coeff)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.assert_same_space(rhs);
        Jet {
            space: self.space.clone(),
            coeff: self
                .coeff
                .iter()
                .zip(&rhs.coeff)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        self.assert_same_space(rhs);
        let space = &self.space;
        let mut coeff = vec![0.0; space.len()];
        for g in 0..space.len() {
            let lo = space.prod_starts[g] as usize;
            let hi = space.prod_starts[g + 1] as usize;
            let mut acc = 0.0;
            for &(i, j) in &space.prod_pairs[lo..hi] {
                acc += self.coeff[i as usize] * rhs.coeff[j as usize];
            }
            coeff[g] = acc;
        }
        Jet {
            space: space.clone(),
            coeff,
        }
    }
}

/// Dot product of two equal-length jet slices.
pub fn jet_dot(a: &[Jet], b: &[Jet]) -> Jet {
    let mut acc = &a[0] * &b[0];
    for i in 1..a.len() {
        acc = &acc + &(&a[i] * &b[i]);
    }
    acc
}

/// A scalar function of chart position `x` and tangent vector `y` that can
/// be evaluated in jet arithmetic. This is the carrier for Finsler
/// functions, their energies, and the projective factor.
pub trait ScalarFunction: Send + Sync {
    /// Chart dimension n; the function takes n position and n tangent slots.
    fn dim(&self) -> usize;

    /// Whether `x` lies in the open chart domain.
    fn contains(&self, x: &[f64]) -> bool;

    /// Distance from `x` to the domain boundary (infinite for ℝⁿ).
    fn boundary_margin(&self, x: &[f64]) -> f64;

    /// Evaluate on seeded jets; all derivatives propagate through the
    /// closed form.
    fn eval_jets(&self, x: &[Jet], y: &[Jet]) -> Result<Jet>;
}

/// Seed the 2n chart variables as jets of the given space.
pub fn seed_chart(space: &Arc<JetSpace>, x: &[f64], y: &[f64]) -> (Vec<Jet>, Vec<Jet>) {
    let n = x.len();
    debug_assert_eq!(space.nvars(), 2 * n);
    let xj = (0..n).map(|i| Jet::variable(space, i, x[i])).collect();
    let yj = (0..n).map(|i| Jet::variable(space, n + i, y[i])).collect();
    (xj, yj)
}

/// The result of a jet evaluation: value plus all partials up to the
/// requested order, queryable by derivative sequence.
#[derive(Clone)]
pub struct JetValue {
    jet: Jet,
}

impl std::fmt::Debug for JetValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JetValue")
            .field("value", &self.jet.value())
            .field("order", &self.jet.order())
            .finish()
    }
}

impl JetValue {
    pub fn new(jet: Jet) -> JetValue {
        JetValue { jet }
    }

    pub fn value(&self) -> f64 {
        self.jet.value()
    }

    pub fn order(&self) -> usize {
        self.jet.order()
    }

    /// Partial derivative for a sequence of variable indices, e.g.
    /// `&[0, n]` for ∂²/∂x¹∂y¹. Permutations of the sequence return the
    /// identical stored value.
    pub fn partial(&self, vars: &[usize]) -> Result<f64> {
        self.jet.partial(vars)
    }

    pub fn jet(&self) -> &Jet {
        &self.jet
    }
}

fn check_point(f: &dyn ScalarFunction, x: &[f64], y: &[f64]) -> Result<()> {
    assert_eq!(x.len(), f.dim(), "position dimension mismatch");
    assert_eq!(y.len(), f.dim(), "tangent dimension mismatch");
    if !f.contains(x) {
        return Err(FinslerError::Domain(format!("x = {x:?}")));
    }
    if y.iter().all(|&c| c == 0.0) {
        return Err(FinslerError::SlitViolation);
    }
    Ok(())
}

/// Evaluate `f` at `(x, y)` carrying all partial derivatives up to `order`
/// (at most [`MAX_ORDER`]). Derivatives are exact jet propagation, not
/// differencing.
pub fn jet_eval(f: &dyn ScalarFunction, x: &[f64], y: &[f64], order: usize) -> Result<JetValue> {
    if order > MAX_ORDER {
        return Err(FinslerError::UnsupportedOrder {
            requested: order,
            max: MAX_ORDER,
        });
    }
    check_point(f, x, y)?;
    let space = JetSpace::get(2 * f.dim(), order);
    let (xj, yj) = seed_chart(&space, x, y);
    Ok(JetValue::new(f.eval_jets(&xj, &yj)?))
}

/// Plain value of `f` at `(x, y)` (order-0 jet evaluation).
pub fn scalar_value(f: &dyn ScalarFunction, x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(jet_eval(f, x, y, 0)?.value())
}

/// Central-difference step for a given total derivative order.
///
/// Fourth-order differences with the second-order step would be swamped by
/// rounding (the cancellation error grows like ε/h⁴), so the step widens
/// with the order. The high-order steps balance that cancellation against
/// the truncation growth of the steepest catalog metric.
pub fn fd_step(order: usize) -> f64 {
    match order {
        0..=2 => 1e-4,
        3 => 1e-3,
        _ => 6.5e-3,
    }
}

fn fd_nested(
    f: &dyn ScalarFunction,
    x: &mut [f64],
    y: &mut [f64],
    vars: &[usize],
    h: f64,
) -> Result<f64> {
    if vars.is_empty() {
        let space = JetSpace::get(2 * f.dim(), 0);
        let (xj, yj) = seed_chart(&space, x, y);
        return Ok(f.eval_jets(&xj, &yj)?.value());
    }
    let v = vars[0];
    let n = f.dim();
    let base = if v < n { x[v] } else { y[v - n] };
    x_or_y_set(x, y, n, v, base + h);
    let plus = fd_nested(f, x, y, &vars[1..], h)?;
    x_or_y_set(x, y, n, v, base - h);
    let minus = fd_nested(f, x, y, &vars[1..], h)?;
    x_or_y_set(x, y, n, v, base);
    Ok((plus - minus) / (2.0 * h))
}

fn x_or_y_set(x: &mut [f64], y: &mut [f64], n: usize, v: usize, value: f64) {
    if v < n {
        x[v] = value;
    } else {
        y[v - n] = value;
    }
}

/// Compare a jet partial against a Richardson-extrapolated central
/// difference; returns the relative residual `|jet − fd| / (1 + |jet|)`.
///
/// The derivative sequence `vars` lists variable indices (length ≤
/// [`MAX_ORDER`]). Requires the point to sit inside the domain with margin
/// at least ten steps.
pub fn fd_check(f: &dyn ScalarFunction, x: &[f64], y: &[f64], vars: &[usize]) -> Result<f64> {
    let order = vars.len();
    if order > MAX_ORDER {
        return Err(FinslerError::UnsupportedOrder {
            requested: order,
            max: MAX_ORDER,
        });
    }
    check_point(f, x, y)?;
    let h = fd_step(order);
    let margin = f.boundary_margin(x);
    let y_norm = y.iter().map(|c| c * c).sum::<f64>().sqrt();
    if margin < 10.0 * h || y_norm < 10.0 * h {
        return Err(FinslerError::Domain(format!(
            "finite-difference stencil needs margin ≥ {:.1e}, have {:.1e}",
            10.0 * h,
            margin.min(y_norm)
        )));
    }

    let jet = jet_eval(f, x, y, order)?.partial(vars)?;

    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    let coarse = fd_nested(f, &mut xs, &mut ys, vars, h)?;
    let fine = fd_nested(f, &mut xs, &mut ys, vars, h / 2.0)?;
    let fd = (4.0 * fine - coarse) / 3.0;

    Ok((jet - fd).abs() / (1.0 + jet.abs()))
}
