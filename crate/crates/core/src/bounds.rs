//! The coupling bound engine: correction constants, the three bound families and
//! their mixtures against a stationary law.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rates::RateSequence;

/// Upper clip for total variation distances.
pub const TV_CLIP: f64 = 1.0;

const M_U_SCAN_CAP: usize = 10_000_000;
const M_U_TRAILING: usize = 10;

/// A Young pair from the power family:
/// `α(u) = (pρu)^(1/p)`, `β(v) = (p(1-ρ)v/(p-1))^((p-1)/p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct YoungPair {
    pub p: f64,
    pub rho: f64,
}

impl Default for YoungPair {
    fn default() -> Self {
        YoungPair { p: 2.0, rho: 0.5 }
    }
}

impl YoungPair {
    /// Rejects `p <= 1` and `ρ` outside `(0, 1)`.
    pub fn power(p: f64, rho: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::config("Young pair exponent p > 1", format!("p = {p}")));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::config("Young pair weight 0 < rho < 1", format!("rho = {rho}")));
        }
        Ok(YoungPair { p, rho })
    }

    pub fn validate(&self) -> Result<()> {
        Self::power(self.p, self.rho).map(|_| ())
    }

    pub fn alpha(&self, u: f64) -> f64 {
        (self.p * self.rho * u).powf(1.0 / self.p)
    }

    pub fn beta(&self, v: f64) -> f64 {
        (self.p * (1.0 - self.rho) * v / (self.p - 1.0)).powf((self.p - 1.0) / self.p)
    }
}

/// `M_U = sup_k (b_u·r(k)·(1-ε)/ε - R(k+1))₊`.
///
/// Terms are scanned until `r(k)/R(k+1) < ε/(b_u(1-ε))` holds and ten
/// consecutive terms have been non-positive.
pub fn compute_m_u(r: &RateSequence, b_u: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    if !(b_u >= 1.0 && b_u.is_finite()) {
        return Err(Error::certificate("b_U >= 1", format!("b_U = {b_u}")));
    }
    if epsilon == 1.0 {
        return Ok(0.0);
    }
    let scale = b_u * (1.0 - epsilon) / epsilon;
    let threshold = epsilon / (b_u * (1.0 - epsilon));
    let mut best = 0.0f64;
    let mut cum = 0.0;
    let mut ratio_fired = false;
    let mut trailing = 0;
    for k in 0..=M_U_SCAN_CAP {
        let rk = r.value(k);
        cum += rk;
        let term = scale * rk - cum;
        best = best.max(term);
        ratio_fired |= rk / cum < threshold;
        trailing = if term <= 0.0 { trailing + 1 } else { 0 };
        if ratio_fired && trailing >= M_U_TRAILING {
            return Ok(best);
        }
    }
    Err(Error::NonTermination { cap: M_U_SCAN_CAP })
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon <= 1.0 {
        Ok(())
    } else {
        Err(Error::certificate("0 < epsilon <= 1", format!("epsilon = {epsilon}")))
    }
}

/// Correction constants `M_U`, `M_V` together with the inputs they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub m_u: f64,
    pub m_v: f64,
    pub epsilon: f64,
    pub b_u: f64,
    pub b_v: f64,
}

impl BoundConstants {
    pub fn new(r: &RateSequence, epsilon: f64, b_u: f64, b_v: f64) -> Result<Self> {
        if !(b_v >= 0.0 && b_v.is_finite()) {
            return Err(Error::certificate("b_V >= 0", format!("b_V = {b_v}")));
        }
        let m_u = compute_m_u(r, b_u, epsilon)?;
        Ok(BoundConstants {
            m_u,
            m_v: b_v * (1.0 - epsilon) / epsilon,
            epsilon,
            b_u,
            b_v,
        })
    }
}

type PairFn<S> = Arc<dyn Fn(&S, &S) -> f64 + Send + Sync>;

/// Bounds on the hitting-time moments `U(x,x')` and `V(x,x')` plus the
/// suprema `b_U`, `b_V` over the small set.
pub struct MomentBounds<S> {
    u_fn: PairFn<S>,
    v_fn: PairFn<S>,
    pub b_u: f64,
    pub b_v: f64,
}

impl<S> Clone for MomentBounds<S> {
    fn clone(&self) -> Self {
        MomentBounds {
            u_fn: self.u_fn.clone(),
            v_fn: self.v_fn.clone(),
            b_u: self.b_u,
            b_v: self.b_v,
        }
    }
}

impl<S> fmt::Debug for MomentBounds<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MomentBounds")
            .field("b_u", &self.b_u)
            .field("b_v", &self.b_v)
            .finish_non_exhaustive()
    }
}

impl<S> MomentBounds<S> {
    pub fn new<U, V>(u_fn: U, v_fn: V, b_u: f64, b_v: f64) -> Self
    where
        U: Fn(&S, &S) -> f64 + Send + Sync + 'static,
        V: Fn(&S, &S) -> f64 + Send + Sync + 'static,
    {
        MomentBounds {
            u_fn: Arc::new(u_fn),
            v_fn: Arc::new(v_fn),
            b_u,
            b_v,
        }
    }

    pub fn u(&self, x: &S, y: &S) -> f64 {
        (self.u_fn)(x, y)
    }

    pub fn v(&self, x: &S, y: &S) -> f64 {
        (self.v_fn)(x, y)
    }
}

/// `min(1, (U(x,x') + M_U)/(R(n) + M_U))`.
pub fn tv_bound<S>(mb: &MomentBounds<S>, bc: &BoundConstants, r: &RateSequence, x: &S, y: &S, n: usize) -> f64 {
    tv_from_parts(mb.u(x, y), bc.m_u, r.cumulative(n))
}

fn tv_from_parts(u: f64, m_u: f64, big_r: f64) -> f64 {
    ((u + m_u) / (big_r + m_u)).min(TV_CLIP)
}

/// `V(x,x') + M_V`, constant in `n`.
pub fn f_norm_bound<S>(mb: &MomentBounds<S>, bc: &BoundConstants, x: &S, y: &S) -> f64 {
    mb.v(x, y) + bc.m_v
}

/// `[ρ(U + M_U) + (1-ρ)(V + M_V)] / α(R(n) + M_U)`.
pub fn interpolated_bound<S>(
    mb: &MomentBounds<S>,
    bc: &BoundConstants,
    r: &RateSequence,
    yp: &YoungPair,
    x: &S,
    y: &S,
    n: usize,
) -> f64 {
    interpolated_from_parts(mb.u(x, y), mb.v(x, y), bc, yp, r.cumulative(n))
}

fn interpolated_from_parts(u: f64, v: f64, bc: &BoundConstants, yp: &YoungPair, big_r: f64) -> f64 {
    (yp.rho * (u + bc.m_u) + (1.0 - yp.rho) * (v + bc.m_v)) / yp.alpha(big_r + bc.m_u)
}

/// Moment bounds, constants and rate bundled for curve evaluation.
#[derive(Clone, Debug)]
pub struct BoundInputs<S> {
    pub moments: MomentBounds<S>,
    pub constants: BoundConstants,
    pub rate: RateSequence,
}

impl<S> BoundInputs<S> {
    pub fn new(moments: MomentBounds<S>, rate: RateSequence, epsilon: f64) -> Result<Self> {
        let constants = BoundConstants::new(&rate, epsilon, moments.b_u, moments.b_v)?;
        Ok(BoundInputs {
            moments,
            constants,
            rate,
        })
    }

    pub fn tv(&self, x: &S, y: &S, n: usize) -> f64 {
        tv_bound(&self.moments, &self.constants, &self.rate, x, y, n)
    }

    pub fn f_norm(&self, x: &S, y: &S) -> f64 {
        f_norm_bound(&self.moments, &self.constants, x, y)
    }

    pub fn interpolated(&self, yp: &YoungPair, x: &S, y: &S, n: usize) -> f64 {
        interpolated_bound(&self.moments, &self.constants, &self.rate, yp, x, y, n)
    }
}

/// One row of a bound curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPoint {
    pub n: usize,
    pub tv: f64,
    pub f: f64,
    pub g: f64,
}

/// Bound values for `n = 1..=nmax` (or any increasing subset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub label: String,
    pub points: Vec<BoundPoint>,
}

impl BoundCurve {
    pub fn new(label: impl Into<String>, points: Vec<BoundPoint>) -> Self {
        BoundCurve {
            label: label.into(),
            points,
        }
    }

    /// First `n` whose TV bound is at or below `threshold`.
    pub fn n_star(&self, threshold: f64) -> Option<usize> {
        self.points.iter().find(|p| p.tv <= threshold).map(|p| p.n)
    }

    /// TV values indexed like `points`.
    pub fn tv_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.tv).collect()
    }

    /// First `n` at which this curve lies strictly below `other`.
    pub fn first_below(&self, other: &BoundCurve) -> Option<usize> {
        self.points
            .iter()
            .zip(&other.points)
            .find(|(a, b)| a.n == b.n && a.tv < b.tv)
            .map(|(a, _)| a.n)
    }

    /// Writes `n,bound_tv,bound_f,bound_g` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,bound_tv,bound_f,bound_g")?;
        for p in &self.points {
            writeln!(w, "{},{:.16e},{:.16e},{:.16e}", p.n, p.tv, p.f, p.g)?;
        }
        Ok(())
    }
}

/// Mixes the three bound families over `x' ~ π` for `n = 1..=nmax`.
///
/// `states[i]` carries mass `pi[i]`; entries with zero mass are skipped. Sums
/// run in index order so the output is bit-stable under any thread count.
pub fn bound_vs_stationary<S: Sync>(
    inputs: &BoundInputs<S>,
    yp: &YoungPair,
    x: &S,
    states: &[S],
    pi: &[f64],
    nmax: usize,
) -> Result<BoundCurve> {
    if states.len() != pi.len() {
        return Err(Error::config(
            "one stationary weight per state",
            format!("{} states, {} weights", states.len(), pi.len()),
        ));
    }
    if let Some(w) = pi.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::config("stationary weights non-negative", format!("weight {w}")));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::config("stationary weights sum to 1 within 1e-10", format!("sum = {total}")));
    }
    yp.validate()?;
    let support: Vec<(f64, f64, f64)> = states
        .iter()
        .zip(pi)
        .filter(|(_, &w)| w > 0.0)
        .map(|(s, &w)| (w, inputs.moments.u(x, s), inputs.moments.v(x, s)))
        .collect();
    let bc = inputs.constants;
    let f_mix: f64 = support.iter().map(|&(w, _, v)| w * (v + bc.m_v)).sum();
    let cum = inputs.rate.cumulative_prefix(nmax);
    let points = (1..=nmax)
        .into_par_iter()
        .map(|n| {
            let big_r = cum[n];
            let mut tv = 0.0;
            let mut g = 0.0;
            for &(w, u, v) in &support {
                tv += w * tv_from_parts(u, bc.m_u, big_r);
                g += w * interpolated_from_parts(u, v, &bc, yp, big_r);
            }
            BoundPoint { n, tv, f: f_mix, g }
        })
        .collect();
    Ok(BoundCurve::new("", points))
}
