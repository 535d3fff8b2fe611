//! The embedded M/G/1 queue with an exponential-body, Pareto-tail service law.
//!
//! The chain counts customers left behind at departures. From `x >= 1` it moves
//! to `x - 1 + A`, from `0` to `A`, where `A` is the number of Poisson arrivals
//! during one service. Service density:
//! `b(t) = (α/B)·e^(-αt/B)` on `[0, B]` and `α·B^α·e^(-α)·t^(-α-1)` beyond.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_vs_stationary, BoundCurve, BoundInputs, MomentBounds, YoungPair};
use crate::error::{Error, Result};
use crate::monotone::{find_minorisation, DiscreteKernel, MinorisationCert};
use crate::quad::{self, QuadOptions};
use crate::rates::RateSequence;
use crate::verify::{exact_tv_curve, stationary, ExactCurve};

const A_J_QUAD: QuadOptions = QuadOptions {
    abs_tol: 1e-12,
    rel_tol: 1e-10,
    max_intervals: 4000,
};

/// Largest tolerated truncation tail mass before the state space is enlarged.
pub const TAIL_MASS_LIMIT: f64 = 1e-6;
const MAX_TRUNCATION: usize = 12_800;

/// Service-time law: exponential body on `[0, B]`, power tail beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceLaw {
    pub b_tail: f64,
    pub alpha_tail: f64,
}

impl ServiceLaw {
    pub fn new(b_tail: f64, alpha_tail: f64) -> Result<Self> {
        if !(b_tail > 0.0 && b_tail.is_finite()) {
            return Err(Error::config("tail onset B > 0", format!("B = {b_tail}")));
        }
        if !(alpha_tail > 0.0 && alpha_tail.is_finite()) {
            return Err(Error::config("tail exponent alpha > 0", format!("alpha = {alpha_tail}")));
        }
        Ok(ServiceLaw { b_tail, alpha_tail })
    }

    pub fn density(&self, t: f64) -> f64 {
        let (b, a) = (self.b_tail, self.alpha_tail);
        if t < 0.0 {
            0.0
        } else if t <= b {
            a / b * (-a * t / b).exp()
        } else {
            a * b.powf(a) * (-a).exp() * t.powf(-a - 1.0)
        }
    }

    /// `m₁ = B(1 + e^(-α)/(α-1))/α`.
    pub fn mean(&self) -> Result<f64> {
        service_moment(self)
    }

    /// `∫ t·b(t) dt` by quadrature, split at `B`.
    pub fn mean_by_quadrature(&self) -> Result<f64> {
        if self.alpha_tail <= 1.0 {
            return Err(infinite_mean(self.alpha_tail));
        }
        Ok(quad::integrate_pieces(|t| t * self.density(t), &[0.0, self.b_tail, f64::INFINITY], QuadOptions::default())?.value)
    }

    /// `∫ b(t) dt` by quadrature.
    pub fn total_mass(&self) -> Result<f64> {
        Ok(quad::integrate_pieces(|t| self.density(t), &[0.0, self.b_tail, f64::INFINITY], QuadOptions::default())?.value)
    }
}

fn infinite_mean(alpha: f64) -> Error {
    Error::domain("service_moment_m1", format!("alpha = {alpha} <= 1 gives an infinite mean"))
}

fn service_moment(s: &ServiceLaw) -> Result<f64> {
    let a = s.alpha_tail;
    if a <= 1.0 {
        return Err(infinite_mean(a));
    }
    Ok(s.b_tail * (1.0 + (-a).exp() / (a - 1.0)) / a)
}

/// Queue parameters plus the small-set and truncation choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MG1Config {
    pub service: ServiceLaw,
    pub lambda_arrival: f64,
    /// `C = {0..=x0}`; `x0 = 1` is the atom.
    pub x0: usize,
    pub truncation: usize,
    pub start_x: usize,
}

impl MG1Config {
    /// Fixes the arrival rate from the traffic intensity, `λ = ρ/m₁`.
    pub fn from_traffic(rho: f64, service: ServiceLaw, x0: usize, start_x: usize, truncation: Option<usize>) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::config("traffic 0 < rho < 1", format!("rho = {rho}")));
        }
        let cfg = MG1Config {
            service,
            lambda_arrival: rho / service.mean()?,
            x0,
            truncation: truncation.unwrap_or_else(|| default_truncation(rho)),
            start_x,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn rho(&self) -> Result<f64> {
        Ok(self.lambda_arrival * self.service.mean()?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_arrival > 0.0 && self.lambda_arrival.is_finite()) {
            return Err(Error::config("arrival rate lambda > 0", format!("lambda = {}", self.lambda_arrival)));
        }
        let rho = self.rho()?;
        if !(rho < 1.0) {
            return Err(Error::config("traffic rho = lambda*m1 < 1", format!("rho = {rho}")));
        }
        if self.x0 == 0 {
            return Err(Error::config("small set contains {0, 1} (x0 >= 1)", "x0 = 0"));
        }
        if self.truncation < self.x0 + 2 || self.truncation <= self.start_x {
            return Err(Error::config(
                "truncation >= x0 + 2 and above the start state",
                format!("truncation = {}, x0 = {}, start = {}", self.truncation, self.x0, self.start_x),
            ));
        }
        Ok(())
    }
}

/// 400 states in light traffic, 800 otherwise.
pub fn default_truncation(rho: f64) -> usize {
    if rho <= 0.6 {
        400
    } else {
        800
    }
}

/// `m₁` for the configured service law.
pub fn service_moment_m1(cfg: &MG1Config) -> Result<f64> {
    cfg.service.mean()
}

/// `a_j = ∫ e^(-λt)(λt)^j/j! b(t) dt` for `j < count`.
pub fn arrival_probabilities(cfg: &MG1Config, count: usize) -> Result<Vec<f64>> {
    let lambda = cfg.lambda_arrival;
    let s = cfg.service;
    let mut log_fact = Vec::with_capacity(count);
    let mut acc = 0.0f64;
    for j in 0..count {
        if j > 0 {
            acc += (j as f64).ln();
        }
        log_fact.push(acc);
    }
    (0..count)
        .into_par_iter()
        .map(|j| {
            let jf = j as f64;
            let weight = |t: f64| {
                if t <= 0.0 {
                    return if j == 0 { 1.0 } else { 0.0 };
                }
                let lt = lambda * t;
                let log_w = if j == 0 { -lt } else { -lt + jf * lt.ln() - log_fact[j] };
                log_w.exp()
            };
            let f = |t: f64| weight(t) * s.density(t);
            // Split at the kink and around the Poisson weight's peak in t.
            let peak = jf / lambda;
            let width = 8.0 * (jf + 1.0).sqrt() / lambda;
            let mut points = vec![0.0, s.b_tail];
            for p in [peak - width, peak, peak + width] {
                if p > *points.last().expect("non-empty") {
                    points.push(p);
                }
            }
            points.push(f64::INFINITY);
            quad::integrate_pieces(f, &points, A_J_QUAD)
                .map(|r| r.value.max(0.0))
                .map_err(|e| Error::Numeric(format!("a_{j}: {e}")))
        })
        .collect()
}

/// Truncated transition matrix with the row deficits moved to the last state.
#[derive(Debug, Clone)]
pub struct EmbeddedChain {
    pub kernel: DiscreteKernel,
    pub arrivals: Vec<f64>,
    pub row_deficits: Vec<f64>,
}

pub fn embedded_matrix(cfg: &MG1Config) -> Result<EmbeddedChain> {
    cfg.validate()?;
    let n = cfg.truncation;
    let a = arrival_probabilities(cfg, n + 1)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let mut row = vec![0.0; n];
            let shift = x.saturating_sub(1);
            row[shift..n - 1].copy_from_slice(&a[..n - 1 - shift]);
            row
        })
        .collect();
    let (kernel, row_deficits) = DiscreteKernel::with_repair(rows)?;
    Ok(EmbeddedChain {
        kernel,
        arrivals: a,
        row_deficits,
    })
}

/// A univariate certificate on the truncated chain with `r ≡ 1` and `f ≡ 1`,
/// for which `U₀ = V₀` and `b_U0 = b_V0`.
#[derive(Debug, Clone)]
pub struct QueueCertificate {
    pub minorisation: MinorisationCert,
    /// `U₀(x)` for every truncated state.
    pub u0: Vec<f64>,
    pub b_u0: f64,
    /// `sup_C PU₀` from the tail-sum display; equals `b_u0` inputs for the atom.
    pub sup_pu0_on_c: f64,
}

impl QueueCertificate {
    /// `U(x,x') = V(x,x') = U₀(x ∨ x')`.
    pub fn moments(&self) -> MomentBounds<usize> {
        let u = std::sync::Arc::new(self.u0.clone());
        let v = u.clone();
        MomentBounds::new(
            move |x: &usize, y: &usize| u[(*x.max(y)).min(u.len() - 1)],
            move |x: &usize, y: &usize| v[(*x.max(y)).min(v.len() - 1)],
            self.b_u0,
            self.b_u0,
        )
    }

    pub fn bound_inputs(&self) -> Result<BoundInputs<usize>> {
        BoundInputs::new(self.moments(), RateSequence::constant(), self.minorisation.epsilon)
    }
}

/// `C = {0, 1}`: rows 0 and 1 coincide, so `ε = 1` and `ν` is the common row.
/// `U₀(x) = 1 + (x - 1)/(1 - ρ)` for `x >= 2`.
pub fn atom_certificate(cfg: &MG1Config, chain: &EmbeddedChain) -> Result<QueueCertificate> {
    let rho = cfg.rho()?;
    let k = &chain.kernel;
    let minorisation = find_minorisation(k, 1)?;
    if minorisation.epsilon != 1.0 {
        return Err(Error::certificate(
            "rows 0 and 1 coincide (atom)",
            format!("epsilon = {}", minorisation.epsilon),
        ));
    }
    minorisation.verify(k)?;
    let u0: Vec<f64> = (0..k.size())
        .map(|x| if x >= 2 { 1.0 + (x as f64 - 1.0) / (1.0 - rho) } else { 1.0 })
        .collect();
    let b = minorisation.integrate(&u0);
    Ok(QueueCertificate {
        minorisation,
        u0,
        b_u0: b,
        sup_pu0_on_c: b,
    })
}

/// `C = {0..=x0}` with `x0 >= 2`: `ε`, `ν` from column minima,
/// `U₀(x) = 1 + (x - x0)₊/(1 - ρ)` and
/// `sup_C PU₀ = 1 + (1 - ρ)⁻¹ Σ_{y > x0} (y - x0)·P(x0, y)`.
pub fn smallset_certificate(cfg: &MG1Config, chain: &EmbeddedChain) -> Result<QueueCertificate> {
    let x0 = cfg.x0;
    if x0 < 2 {
        return Err(Error::config("enlarged small set needs x0 >= 2", format!("x0 = {x0}")));
    }
    let rho = cfg.rho()?;
    let k = &chain.kernel;
    let minorisation = find_minorisation(k, x0)?;
    minorisation.verify(k)?;
    let u0: Vec<f64> = (0..k.size())
        .map(|x| 1.0 + x.saturating_sub(x0) as f64 / (1.0 - rho))
        .collect();
    let tail: f64 = (x0 + 1..k.size()).map(|y| (y - x0) as f64 * k.get(x0, y)).sum();
    let display = 1.0 + tail / (1.0 - rho);
    // The display is the value at x0; monotonicity makes it the supremum over C.
    let exact_sup = (0..=x0).map(|x| k.apply(x, &u0)).fold(f64::NEG_INFINITY, f64::max);
    let sup = display.max(exact_sup);
    let eps = minorisation.epsilon;
    let b_u0 = if eps == 1.0 {
        minorisation.integrate(&u0)
    } else {
        (sup - eps * minorisation.integrate(&u0)) / (1.0 - eps)
    };
    if !(b_u0 >= 1.0) {
        return Err(Error::certificate("b_U0 >= 1", format!("b_U0 = {b_u0}")));
    }
    Ok(QueueCertificate {
        minorisation,
        u0,
        b_u0,
        sup_pu0_on_c: sup,
    })
}

/// The atom certificate for `x0 = 1`, the enlarged small set otherwise.
pub fn certificate(cfg: &MG1Config, chain: &EmbeddedChain) -> Result<QueueCertificate> {
    if cfg.x0 == 1 {
        atom_certificate(cfg, chain)
    } else {
        smallset_certificate(cfg, chain)
    }
}

/// Constants reported alongside each curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub label: String,
    pub x0: usize,
    pub epsilon: f64,
    pub b_u: f64,
    pub m_u: f64,
    pub m_v: f64,
    pub n_star_0_1: Option<usize>,
}

/// Bound curves for several small sets on one queue, mixed over `π`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueueFigure {
    pub rho: f64,
    pub lambda_arrival: f64,
    pub b_tail: f64,
    pub alpha_tail: f64,
    pub m1: f64,
    pub start_x: usize,
    pub truncation: usize,
    /// `max_{n <= exact horizon} Pⁿ(x, last state)`.
    pub tail_mass: f64,
    pub stationary_last: f64,
    pub summaries: Vec<CurveSummary>,
    pub curves: Vec<BoundCurve>,
    pub exact: ExactCurve,
    pub pi: Vec<f64>,
    /// First `n` where the largest small set's curve is strictly below the atom's.
    pub crossover: Option<usize>,
}

/// Settings shared by every curve of a figure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub rho: f64,
    pub service: ServiceLaw,
    pub start_x: usize,
    pub x0s: Vec<usize>,
    pub nmax: usize,
    pub exact_nmax: usize,
    pub truncation: Option<usize>,
    pub young: YoungPair,
}

impl FigureSpec {
    /// `B = 1`, `α = 2.5`, start at 10, small sets `{atom, 3, 6}`.
    pub fn standard(rho: f64) -> Self {
        FigureSpec {
            rho,
            service: ServiceLaw {
                b_tail: 1.0,
                alpha_tail: 2.5,
            },
            start_x: 10,
            x0s: vec![1, 3, 6],
            nmax: 10_000,
            exact_nmax: 200,
            truncation: None,
            young: YoungPair::default(),
        }
    }
}

pub fn curve_label(x0: usize) -> String {
    if x0 == 1 {
        "atom".into()
    } else {
        format!("x0={x0}")
    }
}

/// Builds the chain, enlarging the truncation until the exact oracle's tail
/// mass drops below [`TAIL_MASS_LIMIT`], then evaluates every curve.
pub fn figure_curves(spec: &FigureSpec) -> Result<QueueFigure> {
    if spec.x0s.is_empty() {
        return Err(Error::config("at least one small set", "x0s is empty"));
    }
    spec.young.validate()?;
    let max_x0 = *spec.x0s.iter().max().expect("non-empty");
    let mut truncation = spec.truncation.unwrap_or_else(|| default_truncation(spec.rho));
    let (cfg, chain, pi, exact) = loop {
        let cfg = MG1Config::from_traffic(spec.rho, spec.service, max_x0, spec.start_x, Some(truncation))?;
        let chain = embedded_matrix(&cfg)?;
        let pi = stationary(&chain.kernel)?;
        let exact = exact_tv_curve(&chain.kernel, &pi, spec.start_x, spec.exact_nmax)?;
        if exact.tail_mass < TAIL_MASS_LIMIT && pi[truncation - 1] < TAIL_MASS_LIMIT {
            break (cfg, chain, pi, exact);
        }
        if truncation * 2 > MAX_TRUNCATION {
            return Err(Error::Numeric(format!(
                "truncation tail mass {:e} still above {TAIL_MASS_LIMIT:e} at {truncation} states",
                exact.tail_mass
            )));
        }
        truncation *= 2;
    };
    let states: Vec<usize> = (0..cfg.truncation).collect();
    let mut summaries = Vec::new();
    let mut curves = Vec::new();
    for &x0 in &spec.x0s {
        let c = MG1Config { x0, ..cfg };
        c.validate()?;
        let cert = certificate(&c, &chain)?;
        let inputs = cert.bound_inputs()?;
        let mut curve = bound_vs_stationary(&inputs, &spec.young, &spec.start_x, &states, &pi, spec.nmax)?;
        curve.label = curve_label(x0);
        summaries.push(CurveSummary {
            label: curve.label.clone(),
            x0,
            epsilon: cert.minorisation.epsilon,
            b_u: inputs.constants.b_u,
            m_u: inputs.constants.m_u,
            m_v: inputs.constants.m_v,
            n_star_0_1: curve.n_star(0.1),
        });
        curves.push(curve);
    }
    let atom = spec.x0s.iter().position(|&x| x == 1);
    let largest = spec.x0s.iter().position(|&x| x == max_x0).expect("present");
    let crossover = match atom {
        Some(a) if a != largest => curves[largest].first_below(&curves[a]),
        _ => None,
    };
    Ok(QueueFigure {
        rho: spec.rho,
        lambda_arrival: cfg.lambda_arrival,
        b_tail: spec.service.b_tail,
        alpha_tail: spec.service.alpha_tail,
        m1: cfg.service.mean()?,
        start_x: spec.start_x,
        truncation: cfg.truncation,
        tail_mass: exact.tail_mass,
        stationary_last: pi[cfg.truncation - 1],
        summaries,
        curves,
        exact,
        pi,
        crossover,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn law() -> ServiceLaw {
        ServiceLaw::new(1.0, 2.5).unwrap()
    }

    #[test]
    fn mean_closed_form_matches_quadrature() {
        let s = law();
        assert_relative_eq!(s.mean().unwrap(), s.mean_by_quadrature().unwrap(), max_relative = 1e-8);
        assert_relative_eq!(s.total_mass().unwrap(), 1.0, epsilon = 1e-10);
        let doubled = ServiceLaw::new(2.0, 2.5).unwrap();
        assert_relative_eq!(doubled.mean().unwrap(), 2.0 * s.mean().unwrap(), max_relative = 1e-14);
    }

    #[test]
    fn infinite_mean_rejected() {
        let s = ServiceLaw::new(1.0, 1.0).unwrap();
        assert!(matches!(s.mean(), Err(Error::Domain { .. })));
    }

    #[test]
    fn traffic_validation() {
        assert!(MG1Config::from_traffic(1.0, law(), 1, 10, None).is_err());
        let cfg = MG1Config::from_traffic(0.5, law(), 3, 10, Some(60)).unwrap();
        assert_relative_eq!(cfg.rho().unwrap(), 0.5, max_relative = 1e-14);
        assert!(MG1Config { truncation: 4, ..cfg }.validate().is_err());
    }

    #[test]
    fn rows_zero_and_one_coincide() {
        let cfg = MG1Config::from_traffic(0.5, law(), 3, 10, Some(60)).unwrap();
        let chain = embedded_matrix(&cfg).unwrap();
        assert_eq!(chain.kernel.row(0), chain.kernel.row(1));
        assert_eq!(chain.kernel.get(5, 3), 0.0);
        assert_eq!(chain.kernel.get(5, 4), chain.arrivals[0]);
    }

    #[test]
    fn atom_values() {
        let cfg = MG1Config::from_traffic(0.5, law(), 1, 10, Some(60)).unwrap();
        let chain = embedded_matrix(&cfg).unwrap();
        let cert = atom_certificate(&cfg, &chain).unwrap();
        assert_eq!(cert.u0[1], 1.0);
        assert_relative_eq!(cert.u0[10], 19.0, max_relative = 1e-14);
        let inputs = cert.bound_inputs().unwrap();
        assert_eq!((inputs.constants.m_u, inputs.constants.m_v), (0.0, 0.0));
    }

    #[test]
    fn smallset_values() {
        let cfg = MG1Config::from_traffic(0.5, law(), 3, 10, Some(120)).unwrap();
        let chain = embedded_matrix(&cfg).unwrap();
        let cert = smallset_certificate(&cfg, &chain).unwrap();
        assert_eq!(cert.u0[3], 1.0);
        assert_relative_eq!(cert.u0[10], 15.0, max_relative = 1e-14);
        assert!(cert.minorisation.epsilon > 0.0 && cert.minorisation.epsilon < 1.0);
    }
}
