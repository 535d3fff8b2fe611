//! Subgeometric rate sequences and the φ-calculus that generates them.
//!
//! A concave generator φ on `[1, ∞)` defines `H_φ(v) = ∫_1^v dx/φ(x)` and the
//! rate `r_φ(n) = φ(H_φ⁻¹(n)) / φ(1)`. The polynomial family
//! `φ(v) = c·v^(1-1/α)` has closed forms for all three; any other generator is
//! handled by quadrature and bracketed bisection.

use std::fmt;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, QuadOptions};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const GRID_MAX: f64 = 1e8;
const GRID_POINTS: usize = 401;
const H_QUAD: QuadOptions = QuadOptions {
    abs_tol: 1e-12,
    rel_tol: 1e-13,
    max_intervals: 4000,
};

#[derive(Clone)]
enum PhiFamily {
    Polynomial { c: f64, alpha: f64 },
    Custom { phi: ScalarFn, derivative: ScalarFn },
}

/// A concave drift generator φ together with its derivative.
#[derive(Clone)]
pub struct PhiGenerator {
    family: PhiFamily,
}

impl fmt::Debug for PhiGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            PhiFamily::Polynomial { c, alpha } => write!(f, "PhiGenerator::Polynomial {{ c: {c}, alpha: {alpha} }}"),
            PhiFamily::Custom { .. } => write!(f, "PhiGenerator::Custom"),
        }
    }
}

impl PhiGenerator {
    /// `φ(v) = c·v^(1-1/α)` with `c > 0`, `α > 1`.
    pub fn polynomial(c: f64, alpha: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::certificate("phi(1) > 0", format!("polynomial coefficient c = {c}")));
        }
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(Error::certificate(
                "lim phi'(v) = 0 requires alpha > 1",
                format!("alpha = {alpha}"),
            ));
        }
        Ok(PhiGenerator {
            family: PhiFamily::Polynomial { c, alpha },
        })
    }

    /// A user-supplied generator. Membership of the concave class is sampled on
    /// a log-spaced grid over `[1, 1e8]` and rejected on the first violation.
    pub fn custom<F, D>(phi: F, derivative: D) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let g = PhiGenerator {
            family: PhiFamily::Custom {
                phi: Arc::new(phi),
                derivative: Arc::new(derivative),
            },
        };
        g.validate()?;
        Ok(g)
    }

    /// The closed-form parameters `(c, α)` when this is a polynomial generator.
    pub fn polynomial_params(&self) -> Option<(f64, f64)> {
        match self.family {
            PhiFamily::Polynomial { c, alpha } => Some((c, alpha)),
            PhiFamily::Custom { .. } => None,
        }
    }

    pub fn eval(&self, v: f64) -> f64 {
        match &self.family {
            PhiFamily::Polynomial { c, alpha } => c * v.powf(1.0 - 1.0 / alpha),
            PhiFamily::Custom { phi, .. } => phi(v),
        }
    }

    pub fn derivative(&self, v: f64) -> f64 {
        match &self.family {
            PhiFamily::Polynomial { c, alpha } => c * (1.0 - 1.0 / alpha) * v.powf(-1.0 / alpha),
            PhiFamily::Custom { derivative, .. } => derivative(v),
        }
    }

    /// `λ·φ`, used when a univariate drift is lifted to pairs.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::config("scale factor lambda > 0", format!("lambda = {lambda}")));
        }
        Ok(match &self.family {
            PhiFamily::Polynomial { c, alpha } => PhiGenerator {
                family: PhiFamily::Polynomial {
                    c: c * lambda,
                    alpha: *alpha,
                },
            },
            PhiFamily::Custom { phi, derivative } => {
                let (phi, derivative) = (phi.clone(), derivative.clone());
                PhiGenerator {
                    family: PhiFamily::Custom {
                        phi: Arc::new(move |v| lambda * phi(v)),
                        derivative: Arc::new(move |v| lambda * derivative(v)),
                    },
                }
            }
        })
    }

    /// Samples the defining properties of the concave class on a log grid.
    pub fn validate(&self) -> Result<()> {
        let phi1 = self.eval(1.0);
        if !(phi1 > 0.0 && phi1.is_finite()) {
            return Err(Error::certificate("phi(1) > 0", format!("phi(1) = {phi1}")));
        }
        let step = GRID_MAX.ln() / (GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GRID_POINTS).map(|i| (i as f64 * step).exp()).collect();
        let values: Vec<f64> = grid.iter().map(|&v| self.eval(v)).collect();
        let derivs: Vec<f64> = grid.iter().map(|&v| self.derivative(v)).collect();
        for i in 0..GRID_POINTS - 1 {
            let (v0, v1) = (grid[i], grid[i + 1]);
            let scale = values[i].abs().max(values[i + 1].abs()).max(1.0);
            if !values[i + 1].is_finite() || values[i + 1] < values[i] - 1e-12 * scale {
                return Err(Error::certificate(
                    "phi non-decreasing",
                    format!("phi({v1:e}) = {:e} < phi({v0:e}) = {:e}", values[i + 1], values[i]),
                ));
            }
            if derivs[i + 1] > derivs[i] * (1.0 + 1e-9) + 1e-15 || derivs[i] < 0.0 {
                return Err(Error::certificate(
                    "phi' non-negative and non-increasing",
                    format!("phi'({v0:e}) = {:e}, phi'({v1:e}) = {:e}", derivs[i], derivs[i + 1]),
                ));
            }
            // Concavity: the secant slope lies between the endpoint derivatives.
            let secant = (values[i + 1] - values[i]) / (v1 - v0);
            let tol = 1e-6 * derivs[i].abs().max(1e-12) + 1e-12 * scale / (v1 - v0);
            if secant > derivs[i] + tol || secant < derivs[i + 1] - tol {
                return Err(Error::certificate(
                    "phi concave with the supplied derivative",
                    format!(
                        "secant slope {secant:e} on [{v0:e}, {v1:e}] outside [{:e}, {:e}]",
                        derivs[i + 1],
                        derivs[i]
                    ),
                ));
            }
        }
        if values[GRID_POINTS - 1] <= phi1 {
            return Err(Error::certificate(
                "lim phi(v) = infinity",
                format!("phi({GRID_MAX:e}) = {:e} does not exceed phi(1)", values[GRID_POINTS - 1]),
            ));
        }
        Ok(())
    }

    /// `∫_a^b dx/φ(x)` for `1 <= a <= b`, split on a dyadic grid.
    fn integral_of_reciprocal(&self, a: f64, b: f64) -> Result<f64> {
        let PhiFamily::Custom { phi, .. } = &self.family else {
            unreachable!("closed forms handle the polynomial family")
        };
        let mut total = 0.0;
        let mut lo = a;
        while lo < b {
            let hi = (lo * 2.0).min(b);
            total += quad::integrate(|x| 1.0 / phi(x), lo, hi, H_QUAD)?.value;
            lo = hi;
        }
        Ok(total)
    }

    /// `H_φ(v) = ∫_1^v dx/φ(x)`.
    pub fn h(&self, v: f64) -> Result<f64> {
        if !(v >= 1.0) {
            return Err(Error::domain("h_phi", format!("v = {v} < 1")));
        }
        match &self.family {
            PhiFamily::Polynomial { c, alpha } => Ok(alpha / c * (v.powf(1.0 / alpha) - 1.0)),
            PhiFamily::Custom { .. } => self.integral_of_reciprocal(1.0, v),
        }
    }

    /// Solves `∫_start^v dx/φ(x) = t` for `v` by bisection, doubling the upper
    /// bracket until it straddles the root.
    fn solve_from(&self, start: f64, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(start);
        }
        let mut lo = start;
        let mut h_lo = 0.0;
        let mut hi = 2.0 * start;
        loop {
            let inc = self.integral_of_reciprocal(lo, hi)?;
            if h_lo + inc >= t {
                break;
            }
            h_lo += inc;
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Numeric(format!("H_phi inverse bracket overflow at t = {t}")));
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let inc = self.integral_of_reciprocal(lo, mid)?;
            if h_lo + inc < t {
                lo = mid;
                h_lo += inc;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `H_φ⁻¹(t)` for `t >= 0`.
    pub fn h_inverse(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::domain("h_phi_inverse", format!("t = {t} < 0")));
        }
        match &self.family {
            PhiFamily::Polynomial { c, alpha } => Ok((1.0 + c * t / alpha).powf(*alpha)),
            PhiFamily::Custom { .. } => self.solve_from(1.0, t),
        }
    }
}

/// `H_φ(v)`; domain error for `v < 1`.
pub fn h_phi(g: &PhiGenerator, v: f64) -> Result<f64> {
    g.h(v)
}

/// `H_φ⁻¹(t)`.
pub fn h_phi_inverse(g: &PhiGenerator, t: f64) -> Result<f64> {
    g.h_inverse(t)
}

/// The rate sequence `r_φ` generated by `g`.
pub fn rate_from_phi(g: &PhiGenerator) -> RateSequence {
    match g.family {
        PhiFamily::Polynomial { c, alpha } => RateSequence::polynomial(c, alpha).expect("validated generator"),
        PhiFamily::Custom { .. } => RateSequence::with_kind(RateKind::Phi(g.clone())),
    }
}

/// `R(n) = Σ_{k<n} r(k)`.
pub fn cumulative_rate(r: &RateSequence, n: usize) -> f64 {
    r.cumulative(n)
}

/// Rate family as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RateFamily {
    /// `r ≡ 1`. A `c` other than 1 is rejected because `r(0) = 1`.
    Constant {
        #[serde(default)]
        c: Option<f64>,
    },
    /// The rate generated by `φ(v) = c·v^(1-1/α)`: `r(n) = (1 + c·n/α)^(α-1)`.
    Polynomial { c: f64, alpha: f64 },
    /// Explicit tabulation; the last value is held beyond the table.
    Table { values: Vec<f64> },
}

impl RateFamily {
    pub fn build(&self) -> Result<RateSequence> {
        match self {
            RateFamily::Constant { c } => match c {
                Some(c) if *c != 1.0 => Err(Error::config("r(0) = 1", format!("constant rate c = {c}"))),
                _ => Ok(RateSequence::constant()),
            },
            RateFamily::Polynomial { c, alpha } => RateSequence::polynomial(*c, *alpha),
            RateFamily::Table { values } => RateSequence::table(values.clone()),
        }
    }
}

#[derive(Clone)]
enum RateKind {
    Constant,
    Polynomial { c: f64, alpha: f64 },
    Table(Vec<f64>),
    Phi(PhiGenerator),
}

#[derive(Default)]
struct RateTable {
    /// `r(0..len)`.
    r: Vec<f64>,
    /// `cum[n] = R(n)`, one longer than `r`.
    cum: Vec<f64>,
    /// `H_φ⁻¹(n)` for the generic generator.
    level: Vec<f64>,
}

struct RateInner {
    kind: RateKind,
    table: RwLock<RateTable>,
}

/// A subgeometric rate sequence with memoised values and partial sums.
///
/// Clones share the memo table, which grows under a write lock.
#[derive(Clone)]
pub struct RateSequence {
    inner: Arc<RateInner>,
}

impl fmt::Debug for RateSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inner.kind {
            RateKind::Constant => write!(f, "RateSequence::Constant"),
            RateKind::Polynomial { c, alpha } => write!(f, "RateSequence::Polynomial {{ c: {c}, alpha: {alpha} }}"),
            RateKind::Table(v) => write!(f, "RateSequence::Table(len {})", v.len()),
            RateKind::Phi(g) => write!(f, "RateSequence::FromPhi({g:?})"),
        }
    }
}

impl RateSequence {
    fn with_kind(kind: RateKind) -> Self {
        RateSequence {
            inner: Arc::new(RateInner {
                kind,
                table: RwLock::new(RateTable {
                    r: Vec::new(),
                    cum: vec![0.0],
                    level: vec![1.0],
                }),
            }),
        }
    }

    /// `r ≡ 1`.
    pub fn constant() -> Self {
        Self::with_kind(RateKind::Constant)
    }

    /// `r(n) = (1 + c·n/α)^(α-1)`.
    pub fn polynomial(c: f64, alpha: f64) -> Result<Self> {
        PhiGenerator::polynomial(c, alpha)?;
        Ok(Self::with_kind(RateKind::Polynomial { c, alpha }))
    }

    /// Explicit values `r(0), r(1), ...`; must start at 1 and be non-decreasing.
    pub fn table(values: Vec<f64>) -> Result<Self> {
        if values.first() != Some(&1.0) {
            return Err(Error::config("r(0) = 1", format!("table starts with {:?}", values.first())));
        }
        if let Some(i) = values.windows(2).position(|w| !(w[1] >= w[0]) || !w[1].is_finite()) {
            return Err(Error::config(
                "r non-decreasing",
                format!("r({}) = {} < r({}) = {}", i + 1, values[i + 1], i, values[i]),
            ));
        }
        Ok(Self::with_kind(RateKind::Table(values)))
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.inner.kind, RateKind::Constant)
    }

    fn closed_form(&self, n: usize) -> Option<f64> {
        match &self.inner.kind {
            RateKind::Constant => Some(1.0),
            RateKind::Polynomial { c, alpha } => Some((1.0 + c * n as f64 / alpha).powf(alpha - 1.0)),
            RateKind::Table(v) => Some(v[n.min(v.len() - 1)]),
            RateKind::Phi(_) => None,
        }
    }

    /// Extends the memo table to hold `r(0..n)` and `R(0..=n)`.
    fn ensure(&self, n: usize) {
        if self.inner.table.read().expect("rate table poisoned").r.len() >= n {
            return;
        }
        let mut t = self.inner.table.write().expect("rate table poisoned");
        let extra = n.saturating_sub(t.r.len());
        t.r.reserve(extra);
        while t.r.len() < n {
            let k = t.r.len();
            let value = match self.closed_form(k) {
                Some(v) => v,
                None => {
                    let RateKind::Phi(g) = &self.inner.kind else { unreachable!() };
                    while t.level.len() <= k {
                        let prev = *t.level.last().expect("level table starts with H^-1(0) = 1");
                        let next = g.solve_from(prev, 1.0).unwrap_or(f64::NAN);
                        t.level.push(next);
                    }
                    g.eval(t.level[k]) / g.eval(1.0)
                }
            };
            let last = *t.cum.last().expect("cum starts at R(0) = 0");
            t.r.push(value);
            t.cum.push(last + value);
        }
    }

    /// `r(n)`.
    pub fn value(&self, n: usize) -> f64 {
        if let Some(v) = self.closed_form(n) {
            return v;
        }
        self.ensure(n + 1);
        self.inner.table.read().expect("rate table poisoned").r[n]
    }

    /// `R(n) = Σ_{k<n} r(k)`; `R(0) = 0`.
    pub fn cumulative(&self, n: usize) -> f64 {
        if self.is_constant() {
            return n as f64;
        }
        self.ensure(n);
        self.inner.table.read().expect("rate table poisoned").cum[n]
    }

    /// `[R(0), R(1), ..., R(n)]`.
    pub fn cumulative_prefix(&self, n: usize) -> Vec<f64> {
        if self.is_constant() {
            return (0..=n).map(|k| k as f64).collect();
        }
        self.ensure(n);
        self.inner.table.read().expect("rate table poisoned").cum[..=n].to_vec()
    }

    /// Checks `r(0) = 1`, monotonicity, and that `log r(n)/n` is non-increasing
    /// for `1 <= n < len`.
    pub fn check_invariants(&self, len: usize) -> Result<()> {
        let r: Vec<f64> = (0..len).map(|n| self.value(n)).collect();
        if len > 0 && (r[0] - 1.0).abs() > 1e-12 {
            return Err(Error::certificate("r(0) = 1", format!("r(0) = {}", r[0])));
        }
        for n in 1..len {
            if !(r[n] >= r[n - 1] * (1.0 - 1e-14)) {
                return Err(Error::certificate(
                    "r non-decreasing",
                    format!("r({n}) = {} < r({}) = {}", r[n], n - 1, r[n - 1]),
                ));
            }
            if n >= 2 {
                let a = r[n - 1].ln() / (n - 1) as f64;
                let b = r[n].ln() / n as f64;
                if b > a + 1e-12 * a.abs().max(1e-300) + 1e-15 {
                    return Err(Error::certificate(
                        "log r(n)/n non-increasing",
                        format!("log r(n)/n increases from {a:e} to {b:e} at n = {n}"),
                    ));
                }
            }
        }
        Ok(())
    }
}
