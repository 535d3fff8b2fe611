//! Drift certificates and their conversion into hitting-time moment bounds.
//!
//! Three routes are provided: a bivariate drift `P̌W <= W - φ∘W` off `C×C`, the
//! lift of a univariate drift to pairs through `W(x,x') = W₀(x) + W₀(x') - 1`,
//! and the stochastically monotone route where univariate moments are lifted
//! through the larger of the two states.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::bounds::{BoundInputs, MomentBounds};
use crate::error::{Error, Result};
use crate::monotone::{residual_kernel, DiscreteKernel, MinorisationCert};
use crate::rates::{rate_from_phi, PhiGenerator, RateSequence};

type StateFn<S> = Arc<dyn Fn(&S) -> f64 + Send + Sync>;
type StatePred<S> = Arc<dyn Fn(&S) -> bool + Send + Sync>;
type PairFn<S> = Arc<dyn Fn(&S, &S) -> f64 + Send + Sync>;
type PairPred<S> = Arc<dyn Fn(&S, &S) -> bool + Send + Sync>;

/// `r_φ(1)/φ(1)`, the slope shared by every moment bound below.
pub fn kappa(phi: &PhiGenerator) -> f64 {
    rate_from_phi(phi).value(1) / phi.eval(1.0)
}

/// Bivariate drift `P̌W <= W - φ∘W` outside `C×C`.
pub struct BivariateDriftCert<S> {
    pub w: PairFn<S>,
    pub phi: PhiGenerator,
    pub in_cc: PairPred<S>,
    /// `sup_{C×C} P̌W`.
    pub sup_pw_on_cc: Option<f64>,
    /// `sup_{C×C} φ∘W`.
    pub sup_phi_w_on_cc: Option<f64>,
    pub epsilon: f64,
}

impl<S> Clone for BivariateDriftCert<S> {
    fn clone(&self) -> Self {
        BivariateDriftCert {
            w: self.w.clone(),
            phi: self.phi.clone(),
            in_cc: self.in_cc.clone(),
            sup_pw_on_cc: self.sup_pw_on_cc,
            sup_phi_w_on_cc: self.sup_phi_w_on_cc,
            epsilon: self.epsilon,
        }
    }
}

impl<S> fmt::Debug for BivariateDriftCert<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BivariateDriftCert")
            .field("phi", &self.phi)
            .field("sup_pw_on_cc", &self.sup_pw_on_cc)
            .field("sup_phi_w_on_cc", &self.sup_phi_w_on_cc)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

/// Univariate drift `PW₀ <= W₀ - φ₀∘W₀ + b₀·1_C` with the numbers the
/// conversions need.
pub struct UnivariateDriftCert<S> {
    pub w0: StateFn<S>,
    pub phi0: PhiGenerator,
    pub b0: f64,
    pub in_c: StatePred<S>,
    pub epsilon: f64,
    /// `inf_{x ∉ C} W₀(x)`.
    pub d0: f64,
    /// `sup_C PW₀`.
    pub sup_pw0_on_c: f64,
    /// `ν(W₀)`.
    pub nu_w0: f64,
    /// `sup_C W₀`.
    pub sup_w0_on_c: f64,
}

impl<S> Clone for UnivariateDriftCert<S> {
    fn clone(&self) -> Self {
        UnivariateDriftCert {
            w0: self.w0.clone(),
            phi0: self.phi0.clone(),
            b0: self.b0,
            in_c: self.in_c.clone(),
            epsilon: self.epsilon,
            d0: self.d0,
            sup_pw0_on_c: self.sup_pw0_on_c,
            nu_w0: self.nu_w0,
            sup_w0_on_c: self.sup_w0_on_c,
        }
    }
}

impl<S> fmt::Debug for UnivariateDriftCert<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnivariateDriftCert")
            .field("phi0", &self.phi0)
            .field("b0", &self.b0)
            .field("epsilon", &self.epsilon)
            .field("d0", &self.d0)
            .field("sup_pw0_on_c", &self.sup_pw0_on_c)
            .field("nu_w0", &self.nu_w0)
            .field("sup_w0_on_c", &self.sup_w0_on_c)
            .finish_non_exhaustive()
    }
}

impl<S> UnivariateDriftCert<S> {
    /// `(1-ε)⁻¹(sup_C PW₀ - εν(W₀))`, or `ν(W₀)` when `ε = 1`: a bound on the
    /// residual kernel applied to `W₀` over `C`.
    pub fn residual_bound(&self) -> Result<f64> {
        let value = if self.epsilon == 1.0 {
            self.nu_w0
        } else {
            (self.sup_pw0_on_c - self.epsilon * self.nu_w0) / (1.0 - self.epsilon)
        };
        if !(value >= 0.0) {
            return Err(Error::certificate(
                "residual mass sup_C PW0 - eps*nu(W0) >= 0",
                format!("residual bound {value:e}"),
            ));
        }
        Ok(value)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::certificate("0 < epsilon <= 1", format!("epsilon = {}", self.epsilon)));
        }
        if !(self.d0 >= 1.0) {
            return Err(Error::certificate("d0 >= 1", format!("d0 = {}", self.d0)));
        }
        if !(self.b0 >= 0.0) {
            return Err(Error::certificate("b0 >= 0", format!("b0 = {}", self.b0)));
        }
        if !(self.sup_w0_on_c >= 1.0) {
            return Err(Error::certificate("W0 >= 1 on C", format!("sup_C W0 = {}", self.sup_w0_on_c)));
        }
        Ok(())
    }
}

/// Moment bounds with the rate and minorisation constant that go with them.
#[derive(Debug, Clone)]
pub struct CertifiedMoments<S> {
    pub moments: MomentBounds<S>,
    pub rate: RateSequence,
    pub epsilon: f64,
    pub kappa: f64,
}

impl<S> CertifiedMoments<S> {
    pub fn bound_inputs(self) -> Result<BoundInputs<S>> {
        BoundInputs::new(self.moments, self.rate, self.epsilon)
    }
}

/// Bivariate drift to `U`, `V`, `b_U`, `b_V` with rate `r_φ`.
pub fn moments_from_bivariate_drift<S: 'static>(cert: &BivariateDriftCert<S>) -> Result<CertifiedMoments<S>> {
    let sup_pw = cert
        .sup_pw_on_cc
        .ok_or_else(|| Error::certificate("sup over CxC of the paired kernel applied to W is provided", "missing"))?;
    let sup_phi_w = cert
        .sup_phi_w_on_cc
        .ok_or_else(|| Error::certificate("sup over CxC of phi(W) is provided", "missing"))?;
    if !(sup_pw >= 1.0) {
        return Err(Error::certificate("sup_CxC PW >= 1", format!("value {sup_pw}")));
    }
    if !(sup_phi_w >= 0.0) {
        return Err(Error::certificate("sup_CxC phi(W) >= 0", format!("value {sup_phi_w}")));
    }
    let k = kappa(&cert.phi);
    let (w, in_cc) = (cert.w.clone(), cert.in_cc.clone());
    let (w2, in_cc2) = (cert.w.clone(), cert.in_cc.clone());
    let moments = MomentBounds::new(
        move |x: &S, y: &S| if in_cc(x, y) { 1.0 } else { 1.0 + k * (w(x, y) - 1.0) },
        move |x: &S, y: &S| if in_cc2(x, y) { sup_phi_w } else { sup_phi_w + w2(x, y) },
        1.0 + k * (sup_pw - 1.0),
        sup_phi_w + sup_pw,
    );
    Ok(CertifiedMoments {
        moments,
        rate: rate_from_phi(&cert.phi),
        epsilon: cert.epsilon,
        kappa: k,
    })
}

/// The admissible open interval `(0, 1 - b₀/φ₀(d₀))` for the drift scale.
pub fn lambda_interval<S>(cert: &UnivariateDriftCert<S>) -> Result<(f64, f64)> {
    cert.validate()?;
    let phi_d0 = cert.phi0.eval(cert.d0);
    if !(phi_d0 > cert.b0) {
        return Err(Error::certificate(
            "phi0(d0) > b0",
            format!("phi0(d0) = {phi_d0:e}, b0 = {:e}", cert.b0),
        ));
    }
    Ok((0.0, 1.0 - cert.b0 / phi_d0))
}

/// Pairs a univariate drift through `W(x,x') = W₀(x) + W₀(x') - 1`, `φ = λφ₀`.
///
/// `lambda = None` takes the midpoint of the admissible interval.
pub fn bivariate_from_univariate<S: 'static>(
    cert: &UnivariateDriftCert<S>,
    lambda: Option<f64>,
) -> Result<BivariateDriftCert<S>> {
    let (lo, hi) = lambda_interval(cert)?;
    let lambda = lambda.unwrap_or(0.5 * hi);
    if !(lambda > lo && lambda < hi) {
        return Err(Error::config(
            format!("lambda in the open interval ({lo}, {hi})"),
            format!("lambda = {lambda}"),
        ));
    }
    let sup_pw = 2.0 * cert.residual_bound()? - 1.0;
    let phi = cert.phi0.scaled(lambda)?;
    let sup_w = 2.0 * cert.sup_w0_on_c - 1.0;
    let (w0, in_c) = (cert.w0.clone(), cert.in_c.clone());
    Ok(BivariateDriftCert {
        w: Arc::new(move |x: &S, y: &S| w0(x) + w0(y) - 1.0),
        sup_phi_w_on_cc: Some(phi.eval(sup_w)),
        phi,
        in_cc: Arc::new(move |x: &S, y: &S| in_c(x) && in_c(y)),
        sup_pw_on_cc: Some(sup_pw),
        epsilon: cert.epsilon,
    })
}

/// Univariate moment bounds `U₀`, `V₀`, `b_U0`, `b_V0` for a stochastically
/// monotone chain, before lifting to pairs.
pub struct MonotoneMoments<S> {
    pub u0: StateFn<S>,
    pub v0: StateFn<S>,
    pub b_u0: f64,
    pub b_v0: f64,
    pub rate: RateSequence,
    pub epsilon: f64,
    pub kappa: f64,
}

impl<S> Clone for MonotoneMoments<S> {
    fn clone(&self) -> Self {
        MonotoneMoments {
            u0: self.u0.clone(),
            v0: self.v0.clone(),
            b_u0: self.b_u0,
            b_v0: self.b_v0,
            rate: self.rate.clone(),
            epsilon: self.epsilon,
            kappa: self.kappa,
        }
    }
}

impl<S> fmt::Debug for MonotoneMoments<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MonotoneMoments")
            .field("b_u0", &self.b_u0)
            .field("b_v0", &self.b_v0)
            .field("epsilon", &self.epsilon)
            .field("kappa", &self.kappa)
            .finish_non_exhaustive()
    }
}

impl<S: 'static> MonotoneMoments<S> {
    /// `U(x,x') = U₀(x ∨ x')`, `V(x,x') = V₀(x ∨ x')`, where `join` returns the
    /// larger state in the chain's order.
    pub fn lift<J>(self, join: J) -> CertifiedMoments<S>
    where
        J: Fn(&S, &S) -> S + Send + Sync + Clone + 'static,
    {
        let (u0, v0) = (self.u0, self.v0);
        let join2 = join.clone();
        CertifiedMoments {
            moments: MomentBounds::new(
                move |x: &S, y: &S| u0(&join(x, y)),
                move |x: &S, y: &S| v0(&join2(x, y)),
                self.b_u0,
                self.b_v0,
            ),
            rate: self.rate,
            epsilon: self.epsilon,
            kappa: self.kappa,
        }
    }
}

/// Monotone route with `v₀ = φ₀∘W₀` and rate `r_{φ₀}`.
pub fn moments_from_monotone_drift<S: 'static>(cert: &UnivariateDriftCert<S>) -> Result<MonotoneMoments<S>> {
    moments_from_monotone_drift_with_rate(cert, &cert.phi0)
}

/// Monotone route where the rate comes from `rate_phi` instead of `φ₀`.
///
/// `rate_phi` must dominate the drift generator's decay, i.e. be at most `φ₀`
/// up to the constant that the drift inequality absorbs; callers document
/// which generator they use.
pub fn moments_from_monotone_drift_with_rate<S: 'static>(
    cert: &UnivariateDriftCert<S>,
    rate_phi: &PhiGenerator,
) -> Result<MonotoneMoments<S>> {
    cert.validate()?;
    let residual = cert.residual_bound()?;
    let k = kappa(rate_phi);
    let sup_phi_w0 = rate_phi.eval(cert.sup_w0_on_c);
    let (w0, in_c) = (cert.w0.clone(), cert.in_c.clone());
    let (w0b, in_cb) = (cert.w0.clone(), cert.in_c.clone());
    Ok(MonotoneMoments {
        u0: Arc::new(move |x: &S| if in_c(x) { 1.0 } else { 1.0 + k * (w0(x) - 1.0) }),
        v0: Arc::new(move |x: &S| if in_cb(x) { sup_phi_w0 } else { sup_phi_w0 + w0b(x) }),
        b_u0: 1.0 + k * (residual - 1.0),
        b_v0: sup_phi_w0 + residual,
        rate: rate_from_phi(rate_phi),
        epsilon: cert.epsilon,
        kappa: k,
    })
}

/// Largest violation of `PW₀ <= W₀ - φ₀∘W₀ + b₀·1_C` over a finite kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftCheck {
    pub max_excess: f64,
    pub worst_state: usize,
}

/// Evaluates the univariate drift inequality at every state of `k`, allowing
/// `slack` before reporting a violation.
pub fn check_univariate_drift(
    k: &DiscreteKernel,
    w0: &[f64],
    phi0: &dyn Fn(f64) -> f64,
    b0: f64,
    in_c: &dyn Fn(usize) -> bool,
    slack: f64,
) -> Result<DriftCheck> {
    if w0.len() != k.size() {
        return Err(Error::Kernel(format!("{} drift values for {} states", w0.len(), k.size())));
    }
    let mut check = DriftCheck {
        max_excess: f64::NEG_INFINITY,
        worst_state: 0,
    };
    for x in 0..k.size() {
        let rhs = w0[x] - phi0(w0[x]) + if in_c(x) { b0 } else { 0.0 };
        let excess = k.apply(x, w0) - rhs;
        if excess > check.max_excess {
            check = DriftCheck {
                max_excess: excess,
                worst_state: x,
            };
        }
    }
    if check.max_excess > slack {
        return Err(Error::certificate(
            "drift inequality PW0 <= W0 - phi0(W0) + b0 1_C",
            format!(
                "violated by {:e} at state {} (slack {slack:e})",
                check.max_excess, check.worst_state
            ),
        ));
    }
    Ok(check)
}

/// `E_x[σ_C]` for `C = {0..=x0}`, zero on `C`, by a dense linear solve.
pub fn expected_hitting_times(k: &DiscreteKernel, x0: usize) -> Result<Vec<f64>> {
    let n = k.size();
    if x0 >= n {
        return Err(Error::config("x0 inside the state space", format!("x0 = {x0}, {n} states")));
    }
    let m = n - x0 - 1;
    let mut h = vec![0.0; n];
    if m == 0 {
        return Ok(h);
    }
    let a = DMatrix::from_fn(m, m, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - k.get(i + x0 + 1, j + x0 + 1)
    });
    let sol = a
        .lu()
        .solve(&DVector::from_element(m, 1.0))
        .ok_or_else(|| Error::Numeric(format!("C = {{0..={x0}}} is not reached from every state")))?;
    if let Some(i) = sol.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Numeric(format!(
            "hitting time from state {} is not a finite non-negative number",
            i + x0 + 1
        )));
    }
    h[x0 + 1..].copy_from_slice(sol.as_slice());
    Ok(h)
}

/// Exact monotone-route moments on a finite kernel with `r ≡ 1` and `f ≡ 1`:
/// `U₀(x) = V₀(x) = 1 + E_x[σ_C]` and `b_U0 = b_V0 = max_{x∈C} QU₀(x)`.
pub fn exact_monotone_moments(k: &DiscreteKernel, cert: &MinorisationCert) -> Result<MonotoneMoments<usize>> {
    cert.verify(k)?;
    let h = expected_hitting_times(k, cert.x0)?;
    let u0: Vec<f64> = h.iter().map(|v| 1.0 + v).collect();
    let q = residual_kernel(k, cert)?;
    let b = (0..=cert.x0)
        .map(|x| q.row(x).iter().zip(&u0).map(|(p, v)| p * v).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max);
    let table = Arc::new(u0);
    let t2 = table.clone();
    Ok(MonotoneMoments {
        u0: Arc::new(move |x: &usize| table[(*x).min(table.len() - 1)]),
        v0: Arc::new(move |x: &usize| t2[(*x).min(t2.len() - 1)]),
        b_u0: b,
        b_v0: b,
        rate: RateSequence::constant(),
        epsilon: cert.epsilon,
        kappa: 1.0,
    })
}
