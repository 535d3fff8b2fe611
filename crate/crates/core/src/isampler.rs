//! Independence sampler for the uniform target on `[0, 1]` with proposal
//! density `q(x) = (r+1)x^r`.
//!
//! The sampler is stochastically monotone for the order that ranks states by
//! decreasing `q/π`, so larger `x` sits lower. The small set is
//! `C = {q/π >= η*} = [x*, 1]` with `x* = ψ(η*) = (η*/(r+1))^(1/r)`, and the
//! drift function is `W₀(x) = K(q/π(x)) = x^(-rα)` for `K(u) = (u/(r+1))^(-α)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{compute_m_u, BoundConstants, BoundCurve, BoundPoint, YoungPair, TV_CLIP};
use crate::drift::{moments_from_monotone_drift_with_rate, CertifiedMoments, UnivariateDriftCert};
use crate::error::{Error, Result};
use crate::monotone::DiscreteKernel;
use crate::quad::{self, QuadOptions};
use crate::rates::{PhiGenerator, RateSequence};

const QUAD: QuadOptions = QuadOptions {
    abs_tol: 1e-12,
    rel_tol: 1e-12,
    max_intervals: 4000,
};
const N_STAR_CAP: usize = 10_000_000;

/// Which generator drives the rate sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateChoice {
    /// `{1 - ψ(η*)}(r+1)·v^(1-1/α)`: the drift generator without its negative
    /// constant, so the rate keeps the polynomial closed form.
    #[default]
    Polynomial,
    /// The drift generator `φ₀` itself, constant included, through quadrature.
    DriftGenerator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ISamplerConfig {
    pub r_exp: f64,
    pub alpha_drift: f64,
    pub eta_star: f64,
    pub grid_n: usize,
    /// Initial state; defaults to 1, the bottom of the order.
    pub start_x: f64,
    pub rate_choice: RateChoice,
}

impl ISamplerConfig {
    pub fn new(r_exp: f64, alpha_drift: f64, eta_star: f64) -> Result<Self> {
        let cfg = ISamplerConfig {
            r_exp,
            alpha_drift,
            eta_star,
            grid_n: 400,
            start_x: 1.0,
            rate_choice: RateChoice::Polynomial,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.r_exp;
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::config("proposal exponent r > 0", format!("r = {r}")));
        }
        let a = self.alpha_drift;
        if !(a > 1.0 && a < 1.0 + 1.0 / r) {
            return Err(Error::config(
                format!("1 < alpha < 1 + 1/r = {} (strict)", 1.0 + 1.0 / r),
                format!("alpha = {a}"),
            ));
        }
        if !(self.eta_star > 0.0 && self.eta_star < r + 1.0) {
            return Err(Error::config(
                format!("0 < eta* < r + 1 = {}", r + 1.0),
                format!("eta* = {}", self.eta_star),
            ));
        }
        if !(self.start_x > 0.0 && self.start_x <= 1.0) {
            return Err(Error::config("start state in (0, 1]", format!("x = {}", self.start_x)));
        }
        Ok(())
    }

    /// `γ = rα`, the exponent of the drift function.
    pub fn gamma(&self) -> f64 {
        self.r_exp * self.alpha_drift
    }

    /// `q(x)/π(x) = (r+1)x^r`.
    pub fn ratio(&self, x: f64) -> f64 {
        (self.r_exp + 1.0) * x.powf(self.r_exp)
    }

    /// `W₀(x) = x^(-rα)`.
    pub fn w0(&self, x: f64) -> f64 {
        x.powf(-self.gamma())
    }

    /// `K(u) = (u/(r+1))^(-α)`.
    pub fn k_fn(&self, u: f64) -> f64 {
        (u / (self.r_exp + 1.0)).powf(-self.alpha_drift)
    }
}

/// `ψ(η) = (η/(r+1))^(1/r)`, clipped to `[0, 1]`.
pub fn psi(cfg: &ISamplerConfig, eta: f64) -> f64 {
    if eta <= 0.0 {
        return 0.0;
    }
    (eta / (cfg.r_exp + 1.0)).powf(1.0 / cfg.r_exp).min(1.0)
}

/// Every number the certificate is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConstants {
    pub x_star: f64,
    pub epsilon: f64,
    /// `∫ u K(u) dψ(u)` by quadrature.
    pub int_u_k: f64,
    /// Same integral in closed form, `(r+1)/(1 + r - rα)`.
    pub int_u_k_closed: f64,
    /// `∫ (u ∧ η*) K(u) dψ(u)` by quadrature.
    pub int_min_k: f64,
    /// `{1 - ψ(η*)}·φ(1)`, which must exceed `int_min_k`.
    pub gate_lhs: f64,
    /// `{1 - ψ(η*)}(r+1)`, the leading coefficient of `φ₀`.
    pub phi0_coef: f64,
    pub sup_pw0_on_c: f64,
    pub nu_w0: f64,
    /// `inf_{x ∉ C} W₀ = K(η*) = sup_C W₀`.
    pub d0: f64,
    pub b0: f64,
}

/// `∫_0^{r+1} g(u) dψ(u)` as an integral over `x ∈ [0, 1]` with `u = (r+1)x^r`,
/// split at `x*`.
fn integrate_over_ratio(cfg: &ISamplerConfig, x_star: f64, g: impl Fn(f64) -> f64) -> Result<f64> {
    Ok(quad::integrate_pieces(|x| g(cfg.ratio(x)), &[0.0, x_star, 1.0], QUAD)?.value)
}

pub fn sampler_constants(cfg: &ISamplerConfig) -> Result<SamplerConstants> {
    cfg.validate()?;
    let r = cfg.r_exp;
    let eta = cfg.eta_star;
    let x_star = psi(cfg, eta);
    let int_u_k = integrate_over_ratio(cfg, x_star, |u| u * cfg.k_fn(u))?;
    let int_min_k = integrate_over_ratio(cfg, x_star, |u| u.min(eta) * cfg.k_fn(u))?;
    let phi0_coef = (1.0 - x_star) * (r + 1.0);
    if !(phi0_coef > int_min_k) {
        return Err(Error::certificate(
            "{1 - psi(eta*)} phi(1) > int (u ∧ eta*) K(u) dpsi(u)",
            format!("{phi0_coef:e} <= {int_min_k:e}"),
        ));
    }
    let d0 = cfg.k_fn(eta);
    let int_w0_on_c = quad::integrate(|x| cfg.w0(x), x_star, 1.0, QUAD)?.value;
    let sup_pw0_on_c = int_u_k + d0;
    let beta = 1.0 - 1.0 / cfg.alpha_drift;
    Ok(SamplerConstants {
        x_star,
        epsilon: eta * (1.0 - x_star),
        int_u_k,
        int_u_k_closed: (r + 1.0) / (1.0 + r - cfg.gamma()),
        int_min_k,
        gate_lhs: phi0_coef,
        phi0_coef,
        sup_pw0_on_c,
        nu_w0: int_w0_on_c / (1.0 - x_star),
        d0,
        // sup_C (PW₀ - W₀ + φ₀∘W₀) <= sup_C PW₀ - 1 + φ₀(d0).
        b0: sup_pw0_on_c - 1.0 + (phi0_coef * d0.powf(beta) - int_min_k),
    })
}

impl SamplerConstants {
    /// `φ₀(v) = {1 - ψ(η*)}(r+1)v^(1-1/α) - ∫(u ∧ η*)K dψ`.
    pub fn phi0(&self, cfg: &ISamplerConfig, v: f64) -> f64 {
        self.phi0_coef * v.powf(1.0 - 1.0 / cfg.alpha_drift) - self.int_min_k
    }

    /// `φ₀` as a generator; concave and positive at 1 once the gate holds.
    pub fn phi0_generator(&self, cfg: &ISamplerConfig) -> Result<PhiGenerator> {
        let (c, d, beta) = (self.phi0_coef, self.int_min_k, 1.0 - 1.0 / cfg.alpha_drift);
        PhiGenerator::custom(move |v: f64| c * v.powf(beta) - d, move |v: f64| c * beta * v.powf(beta - 1.0))
    }

    /// The generator used for the rate under `choice`.
    pub fn rate_generator(&self, cfg: &ISamplerConfig, choice: RateChoice) -> Result<PhiGenerator> {
        match choice {
            RateChoice::Polynomial => PhiGenerator::polynomial(self.phi0_coef, cfg.alpha_drift),
            RateChoice::DriftGenerator => self.phi0_generator(cfg),
        }
    }
}

/// A drift certificate for the sampler together with its constants.
#[derive(Debug, Clone)]
pub struct SamplerCertificate {
    pub cert: UnivariateDriftCert<f64>,
    pub constants: SamplerConstants,
}

pub fn drift_certificate(cfg: &ISamplerConfig) -> Result<SamplerCertificate> {
    let k = sampler_constants(cfg)?;
    let gamma = cfg.gamma();
    let x_star = k.x_star;
    let cert = UnivariateDriftCert {
        w0: Arc::new(move |x: &f64| x.powf(-gamma)),
        phi0: k.phi0_generator(cfg)?,
        b0: k.b0,
        in_c: Arc::new(move |x: &f64| *x >= x_star),
        epsilon: k.epsilon,
        d0: k.d0,
        sup_pw0_on_c: k.sup_pw0_on_c,
        nu_w0: k.nu_w0,
        sup_w0_on_c: k.d0,
    };
    Ok(SamplerCertificate { cert, constants: k })
}

/// Lifted moment bounds: the top of the order is the smaller `x`.
pub fn sampler_moments(cfg: &ISamplerConfig, sc: &SamplerCertificate) -> Result<CertifiedMoments<f64>> {
    let rate_phi = sc.constants.rate_generator(cfg, cfg.rate_choice)?;
    Ok(moments_from_monotone_drift_with_rate(&sc.cert, &rate_phi)?.lift(|x: &f64, y: &f64| x.min(*y)))
}

/// Bound curve mixed over the uniform target, with the constants behind it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerCurve {
    pub curve: BoundCurve,
    pub n_star: Option<usize>,
    pub constants: SamplerConstants,
    pub bound_constants: BoundConstants,
    pub kappa: f64,
    pub rate_choice: RateChoice,
}

/// `∫_0^1 h(min(x, s)) ds` where `h(m) = 1 + κ(m^(-γ) - 1)` below `x*` and 1 above.
fn mean_u0(x: f64, kappa: f64, x_star: f64, gamma: f64) -> f64 {
    let h = |m: f64| if m < x_star { 1.0 + kappa * (m.powf(-gamma) - 1.0) } else { 1.0 };
    if gamma >= 1.0 {
        return f64::INFINITY;
    }
    let t = x.min(x_star);
    (1.0 - x) * h(x) + x + kappa * (t.powf(1.0 - gamma) / (1.0 - gamma) - t)
}

/// `∫_0^1 min(1, (U₀(min(x, s)) + M)/(R + M)) ds` in closed form.
pub fn tv_mixture(x: f64, big_r: f64, m_u: f64, kappa: f64, x_star: f64, gamma: f64) -> f64 {
    let denom = big_r + m_u;
    let clip = |v: f64| v.min(TV_CLIP);
    let u0 = |m: f64| if m < x_star { 1.0 + kappa * (m.powf(-gamma) - 1.0) } else { 1.0 };
    let mut total = (1.0 - x) * clip((u0(x) + m_u) / denom);
    // Above x*: U₀ = 1.
    let t = x.min(x_star);
    total += (x - t) * clip((1.0 + m_u) / denom);
    // Below x*: a + b·s^(-γ), clipped where it exceeds 1.
    let a = (1.0 - kappa + m_u) / denom;
    let b = kappa / denom;
    let level = (denom - 1.0 + kappa - m_u) / kappa;
    let x_clip = if level > 0.0 { level.powf(-1.0 / gamma).min(t) } else { t };
    total += x_clip;
    let pow_int = |lo: f64, hi: f64| {
        if (gamma - 1.0).abs() < 1e-12 {
            (hi / lo).ln()
        } else {
            (hi.powf(1.0 - gamma) - lo.powf(1.0 - gamma)) / (1.0 - gamma)
        }
    };
    if x_clip < t {
        total += a * (t - x_clip) + b * pow_int(x_clip, t);
    }
    total
}

/// Curve for `n = 1..=nmax` against the uniform target, plus
/// `n* = min{n : TV bound <= 0.1}` searched beyond `nmax` if needed.
pub fn sampler_curves(cfg: &ISamplerConfig, nmax: usize, young: &YoungPair) -> Result<SamplerCurve> {
    young.validate()?;
    let sc = drift_certificate(cfg)?;
    let moments = sampler_moments(cfg, &sc)?;
    let k = sc.constants;
    let rate = moments.rate.clone();
    let bc = BoundConstants::new(&rate, k.epsilon, moments.moments.b_u, moments.moments.b_v)?;
    let gamma = cfg.gamma();
    let kappa = moments.kappa;
    let x = cfg.start_x;
    let tv_at = |n: usize| tv_mixture(x, rate.cumulative(n), bc.m_u, kappa, k.x_star, gamma);
    let e_u = mean_u0(x, kappa, k.x_star, gamma);
    // V₀ = sup_C φ∘W₀ + W₀ off C; its mean shares U₀'s integral with κ = 1.
    let sup_phi = moments.moments.v(&1.0, &1.0);
    let e_v = if gamma >= 1.0 {
        f64::INFINITY
    } else {
        sup_phi + (mean_u0(x, 1.0, k.x_star, gamma) - 1.0)
    };
    let f_mix = e_v + bc.m_v;
    let cum = rate.cumulative_prefix(nmax);
    let points = (1..=nmax)
        .map(|n| {
            let big_r = cum[n];
            BoundPoint {
                n,
                tv: tv_mixture(x, big_r, bc.m_u, kappa, k.x_star, gamma),
                f: f_mix,
                g: (young.rho * (e_u + bc.m_u) + (1.0 - young.rho) * (e_v + bc.m_v)) / young.alpha(big_r + bc.m_u),
            }
        })
        .collect();
    let n_star = find_first(&tv_at, 0.1, N_STAR_CAP);
    Ok(SamplerCurve {
        curve: BoundCurve::new(format!("r={},alpha={},eta*={}", cfg.r_exp, cfg.alpha_drift, cfg.eta_star), points),
        n_star,
        constants: k,
        bound_constants: bc,
        kappa,
        rate_choice: cfg.rate_choice,
    })
}

/// Smallest `n >= 1` with `f(n) <= threshold` for a non-increasing `f`.
fn find_first(f: &dyn Fn(usize) -> f64, threshold: f64, cap: usize) -> Option<usize> {
    let mut hi = 1;
    while f(hi) > threshold {
        if hi >= cap {
            return None;
        }
        hi = (hi * 2).min(cap);
    }
    let mut lo = hi / 2 + 1;
    if hi == 1 {
        return Some(1);
    }
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if f(mid) <= threshold {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

/// Sampler restricted to a midpoint grid on `(0, 1]`.
#[derive(Debug, Clone)]
pub struct GridKernel {
    pub kernel: DiscreteKernel,
    /// Representative point of each state, in the chain's order (decreasing `x`).
    pub points: Vec<f64>,
    /// Cell `[lo, hi]` of each state.
    pub cells: Vec<(f64, f64)>,
    /// Last state index inside `C = [x*, 1]`, if any cell midpoint lies in `C`.
    pub x0: Option<usize>,
}

/// `∫_a^b min(w(x), w(y)) dy` for `w(y) = (r+1)y^r`.
fn accepted_mass(r: f64, x: f64, a: f64, b: f64) -> f64 {
    let split = x.clamp(a, b);
    let below = split.powf(r + 1.0) - a.powf(r + 1.0);
    let above = (r + 1.0) * x.powf(r) * (b - split);
    below + above
}

/// Grid version of the kernel: from the midpoint of cell `i` a proposal is
/// accepted into cell `j` with mass `∫_{I_j} min(w(x_i), w(y)) dy`; the
/// rejected mass stays on the diagonal.
pub fn discretized_kernel(cfg: &ISamplerConfig) -> Result<GridKernel> {
    cfg.validate()?;
    let g = cfg.grid_n;
    if g < 100 {
        return Err(Error::config("grid_n >= 100", format!("grid_n = {g}")));
    }
    let width = 1.0 / g as f64;
    // State k holds cell g - 1 - k, so state 0 is the cell touching x = 1.
    let cells: Vec<(f64, f64)> = (0..g)
        .map(|k| {
            let c = g - 1 - k;
            (c as f64 * width, (c + 1) as f64 * width)
        })
        .collect();
    let points: Vec<f64> = cells.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let r = cfg.r_exp;
    let mut rows = Vec::with_capacity(g);
    for (i, &x) in points.iter().enumerate() {
        let mut row: Vec<f64> = cells.iter().map(|&(a, b)| accepted_mass(r, x, a, b)).collect();
        let accepted: f64 = row.iter().sum();
        row[i] += (1.0 - accepted).max(0.0);
        rows.push(row);
    }
    let kernel = DiscreteKernel::new(rows)?;
    let x_star = psi(cfg, cfg.eta_star);
    let x0 = points.iter().rposition(|&x| x >= x_star);
    Ok(GridKernel {
        kernel,
        points,
        cells,
        x0,
    })
}

/// Quadrature of one cell's acceptance mass, used to cross-check the closed form.
pub fn accepted_mass_by_quadrature(cfg: &ISamplerConfig, x: f64, a: f64, b: f64) -> Result<f64> {
    let w = |y: f64| cfg.ratio(y);
    let wx = w(x);
    let split = x.clamp(a, b);
    Ok(quad::integrate_pieces(|y| wx.min(w(y)), &[a, split, b], QUAD)?.value)
}

/// Pointwise checks of the certificate on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCheck {
    pub grid_n: usize,
    pub slack: f64,
    /// `max_{x ∉ C} [PW₀(x) - W₀(x) + φ₀(W₀(x))]`.
    pub drift_excess: f64,
    pub drift_worst_x: f64,
    /// `max_{x ∈ C, j} [ε·ν(I_j) - P(x, I_j)]`.
    pub minorisation_deficit: f64,
    /// `‖πP - π‖_TV` for uniform cell masses.
    pub stationarity_residual: f64,
    pub monotone: bool,
}

impl GridCheck {
    pub fn passed(&self) -> bool {
        self.drift_excess <= self.slack && self.minorisation_deficit <= self.slack && self.monotone
    }
}

pub fn grid_check(cfg: &ISamplerConfig) -> Result<GridCheck> {
    let gk = discretized_kernel(cfg)?;
    let k = sampler_constants(cfg)?;
    let g = cfg.grid_n;
    let w0: Vec<f64> = gk.points.iter().map(|&x| cfg.w0(x)).collect();
    let mut drift_excess = f64::NEG_INFINITY;
    let mut drift_worst_x = f64::NAN;
    for (i, &x) in gk.points.iter().enumerate() {
        if x >= k.x_star {
            continue;
        }
        let excess = gk.kernel.apply(i, &w0) - w0[i] + k.phi0(cfg, w0[i]);
        if excess > drift_excess {
            drift_excess = excess;
            drift_worst_x = x;
        }
    }
    let mut minorisation_deficit = f64::NEG_INFINITY;
    for (i, &x) in gk.points.iter().enumerate() {
        if x < k.x_star {
            continue;
        }
        for (j, &(a, b)) in gk.cells.iter().enumerate() {
            let overlap = (b.min(1.0) - a.max(k.x_star)).max(0.0);
            let nu_mass = overlap / (1.0 - k.x_star);
            minorisation_deficit = minorisation_deficit.max(k.epsilon * nu_mass - gk.kernel.get(i, j));
        }
    }
    let pi = vec![1.0 / g as f64; g];
    let moved = gk.kernel.step(&pi);
    let stationarity_residual = crate::verify::tv_distance(&moved, &pi);
    Ok(GridCheck {
        grid_n: g,
        slack: 5.0 / g as f64,
        drift_excess,
        drift_worst_x,
        minorisation_deficit,
        stationarity_residual,
        monotone: crate::monotone::check_monotone_tol(&gk.kernel, 1e-12).monotone,
    })
}

/// Convenience for bound checks: `m_u` for the configured sampler.
pub fn sampler_m_u(cfg: &ISamplerConfig) -> Result<f64> {
    let sc = drift_certificate(cfg)?;
    let m = sampler_moments(cfg, &sc)?;
    compute_m_u(&m.rate, m.moments.b_u, sc.constants.epsilon)
}

/// Rate used by the configured sampler.
pub fn sampler_rate(cfg: &ISamplerConfig) -> Result<RateSequence> {
    let sc = drift_certificate(cfg)?;
    Ok(sampler_moments(cfg, &sc)?.rate)
}
