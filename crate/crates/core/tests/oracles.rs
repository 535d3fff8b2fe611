//! Numerical values checked against oracles computed independently here.

use approx::assert_relative_eq;
use ergobound::bounds::{bound_vs_stationary, BoundInputs, MomentBounds, YoungPair};
use ergobound::isampler::{accepted_mass_by_quadrature, discretized_kernel, grid_check, sampler_constants, ISamplerConfig};
use ergobound::mg1::{
    atom_certificate, embedded_matrix, smallset_certificate, EmbeddedChain, MG1Config, ServiceLaw,
};
use ergobound::monotone::{check_monotone, find_minorisation, DiscreteKernel};
use ergobound::quad::{integrate_pieces, QuadOptions};
use ergobound::rates::{PhiGenerator, RateSequence};
use ergobound::verify::{exact_tv_curve, stationary, CouplingKind, CouplingSimulator};
use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::gamma::gamma_lr;

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, step: f64) -> f64 {
    let mut n = ((b - a) / step).ceil() as usize;
    if n % 2 == 1 {
        n += 1;
    }
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn log_generator() -> PhiGenerator {
    PhiGenerator::custom(|v: f64| v.ln() + 1.0, |v: f64| 1.0 / v).unwrap()
}

#[test]
fn h_of_log_generator_matches_simpson() {
    let e = std::f64::consts::E;
    let oracle = simpson(|x| 1.0 / (x.ln() + 1.0), 1.0, e, 1e-5);
    let got = log_generator().h(e).unwrap();
    assert_relative_eq!(got, oracle, max_relative = 1e-10);
}

#[test]
fn h_inverse_of_one_round_trips() {
    let g = log_generator();
    let v = g.h_inverse(1.0).unwrap();
    let oracle = simpson(|x| 1.0 / (x.ln() + 1.0), 1.0, v, 1e-5);
    assert_relative_eq!(oracle, 1.0, max_relative = 1e-9);
    assert_relative_eq!(g.h(v).unwrap(), 1.0, max_relative = 1e-12);
}

#[test]
fn polynomial_generator_closed_form() {
    let (c, a) = (1.5, 2.5);
    let g = PhiGenerator::polynomial(c, a).unwrap();
    let v = 40.0;
    let oracle = simpson(|x| 1.0 / (c * x.powf(1.0 - 1.0 / a)), 1.0, v, 1e-4);
    assert_relative_eq!(g.h(v).unwrap(), oracle, max_relative = 1e-10);
    let r = RateSequence::polynomial(c, a).unwrap();
    for n in [0usize, 1, 7, 100] {
        assert_relative_eq!(r.value(n), (1.0 + c * n as f64 / a).powf(a - 1.0), max_relative = 1e-12);
    }
}

fn law() -> ServiceLaw {
    ServiceLaw::new(1.0, 2.5).unwrap()
}

fn chain(rho: f64, x0: usize) -> (MG1Config, EmbeddedChain) {
    let cfg = MG1Config::from_traffic(rho, law(), x0, 10, None).unwrap();
    let ch = embedded_matrix(&cfg).unwrap();
    (cfg, ch)
}

#[test]
fn service_mean_value() {
    let s = law();
    let b = 1.0;
    let a = 2.5;
    let body = simpson(|t| t * a / b * (-a * t / b).exp(), 0.0, b, 1e-5);
    // Tail ∫_B^∞ t·αB^α e^{-α} t^{-α-1} dt = αB e^{-α}/(α-1).
    let tail = a * b * (-a).exp() / (a - 1.0);
    assert_relative_eq!(s.mean().unwrap(), body + tail, max_relative = 1e-10);
    assert_relative_eq!(s.mean().unwrap(), 0.421_889_3, max_relative = 1e-7);
    assert_relative_eq!(s.mean_by_quadrature().unwrap(), body + tail, max_relative = 1e-10);
    assert_relative_eq!(s.total_mass().unwrap(), 1.0, max_relative = 1e-12);
    assert!(ServiceLaw::new(1.0, 0.9).unwrap().mean().is_err());
}

/// `E[N; N >= m]` and `P(N >= m)` for the mixed Poisson arrival count.
fn arrival_tails(cfg: &MG1Config, m: usize) -> (f64, f64) {
    let lam = cfg.lambda_arrival;
    let s = cfg.service;
    let opts = QuadOptions::with_abs(1e-14);
    let pts = [0.0, s.b_tail, 10.0, 100.0, 1000.0, f64::INFINITY];
    let tail_p = |k: usize, t: f64| if k == 0 { 1.0 } else { gamma_lr(k as f64, lam * t) };
    let p = integrate_pieces(|t| tail_p(m, t) * s.density(t), &pts, opts).unwrap().value;
    // E[N; N >= m] = λt·P(Pois(λt) >= m-1) under the service mixture.
    let e = integrate_pieces(|t| lam * t * tail_p(m - 1, t) * s.density(t), &pts, opts).unwrap().value;
    (p, e)
}

#[test]
fn arrival_probabilities_sum_and_mean() {
    for rho in [0.5, 0.9] {
        let (cfg, ch) = chain(rho, 1);
        let a = &ch.arrivals;
        let m = a.len();
        let (tail_p, tail_e) = arrival_tails(&cfg, m);
        let sum: f64 = a.iter().sum();
        let mean: f64 = a.iter().enumerate().map(|(j, p)| j as f64 * p).sum();
        assert!((sum + tail_p - 1.0).abs() < 1e-10, "rho {rho}: sum {sum} + tail {tail_p}");
        assert!((mean + tail_e - rho).abs() < 1e-9, "rho {rho}: mean {mean} + tail {tail_e}");
        let excess: f64 = a.iter().enumerate().skip(2).map(|(j, p)| (j - 1) as f64 * p).sum();
        assert!(excess <= rho);
    }
}

#[test]
fn embedded_kernel_is_monotone_with_atom() {
    for rho in [0.5, 0.9] {
        let (_, ch) = chain(rho, 1);
        let rep = check_monotone(&ch.kernel);
        assert!(rep.monotone, "{rep:?}");
        assert_eq!(ch.kernel.row(0), ch.kernel.row(1));
    }
}

#[test]
fn minorisation_matches_enumeration() {
    let (cfg, ch) = chain(0.5, 3);
    let k = &ch.kernel;
    let n = k.size();
    let mut mins = vec![f64::INFINITY; n];
    for x in 0..=3 {
        for (y, m) in mins.iter_mut().enumerate() {
            *m = m.min(k.get(x, y));
        }
    }
    let eps: f64 = mins.iter().sum();
    let cert = find_minorisation(k, 3).unwrap();
    assert_relative_eq!(cert.epsilon, eps, max_relative = 1e-14);
    assert_relative_eq!(cert.epsilon, 0.1067, max_relative = 1e-3);
    for (nu, m) in cert.nu.iter().zip(&mins) {
        assert!((nu * eps - m).abs() < 1e-15);
    }
    let qc = smallset_certificate(&cfg, &ch).unwrap();
    assert_eq!(qc.minorisation, cert);
}

#[test]
fn atom_drift_holds_off_the_atom() {
    let (cfg, ch) = chain(0.5, 1);
    let cert = atom_certificate(&cfg, &ch).unwrap();
    let k = &ch.kernel;
    for x in 2..k.size() / 2 {
        let drift = k.apply(x, &cert.u0) - cert.u0[x];
        assert!(drift <= -1.0 + 1e-9, "x = {x}: drift {drift}");
    }
}

/// `π` from repeated squaring of `P` until the rows agree. Rows are
/// renormalised after each product so rounding cannot compound.
fn stationary_by_powers(k: &DiscreteKernel) -> Vec<f64> {
    let n = k.size();
    let mut m = DMatrix::from_fn(n, n, |i, j| k.get(i, j));
    for _ in 0..40 {
        m = &m * &m;
        for mut row in m.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        let spread = (0..n)
            .map(|j| {
                let col = m.column(j);
                col.max() - col.min()
            })
            .fold(0.0, f64::max);
        if spread < 1e-15 {
            break;
        }
    }
    m.row(0).iter().copied().collect()
}

#[test]
fn stationary_law_matches_matrix_powers() {
    for rho in [0.5, 0.9] {
        let (_, ch) = chain(rho, 1);
        let pi = stationary(&ch.kernel).unwrap();
        let oracle = stationary_by_powers(&ch.kernel);
        let mean = |p: &[f64]| p.iter().enumerate().map(|(j, w)| j as f64 * w).sum::<f64>();
        assert!((mean(&pi) - mean(&oracle)).abs() < 1e-8, "rho {rho}: {} vs {}", mean(&pi), mean(&oracle));
        let moved = ch.kernel.step(&pi);
        let resid: f64 = moved.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        assert!(resid < 1e-10);
    }
}

#[test]
fn two_state_exact_distance() {
    let (a, b) = (0.3, 0.1);
    let k = DiscreteKernel::new(vec![vec![1.0 - a, a], vec![b, 1.0 - b]]).unwrap();
    let pi = stationary(&k).unwrap();
    assert_relative_eq!(pi[0], b / (a + b), max_relative = 1e-14);
    let curve = exact_tv_curve(&k, &pi, 0, 30).unwrap();
    for (i, tv) in curve.tv.iter().enumerate() {
        let n = (i + 1) as i32;
        let oracle = a / (a + b) * (1.0 - a - b).abs().powi(n);
        assert!((tv - oracle).abs() < 1e-14, "n = {n}");
    }
}

#[test]
fn bound_against_point_mass_target() {
    // π = δ₀ with U ≡ 1 + 2·[x ≠ y], r ≡ 1, ε = 1 gives M_U = 0.
    let mb = MomentBounds::new(|x: &usize, y: &usize| if x == y { 1.0 } else { 3.0 }, |_: &usize, _: &usize| 1.0, 1.0, 1.0);
    let inputs = BoundInputs::new(mb, RateSequence::constant(), 1.0).unwrap();
    let curve = bound_vs_stationary(&inputs, &YoungPair::default(), &1usize, &[0, 1], &[1.0, 0.0], 6).unwrap();
    for p in &curve.points {
        assert_relative_eq!(p.tv, (3.0 / p.n as f64).min(1.0), max_relative = 1e-15);
    }
}

fn chi_square_marginal(sim: &CouplingSimulator, k: &DiscreteKernel, start: (usize, usize), seed: u64) {
    let (n, replicas) = (5, 100_000);
    let mut mu = vec![0.0; k.size()];
    mu[start.0] = 1.0;
    for _ in 0..n {
        mu = k.step(&mu);
    }
    let counts = sim.marginal_counts(start.0, start.1, n, replicas, seed);
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut exp_acc, mut obs_acc) = (0.0, 0.0);
    for (p, &c) in mu.iter().zip(&counts) {
        exp_acc += p * replicas as f64;
        obs_acc += c as f64;
        if exp_acc >= 5.0 {
            stat += (obs_acc - exp_acc).powi(2) / exp_acc;
            bins += 1;
            exp_acc = 0.0;
            obs_acc = 0.0;
        }
    }
    if exp_acc > 0.0 || obs_acc > 0.0 {
        stat += (obs_acc - exp_acc).powi(2) / exp_acc.max(1e-300);
        bins += 1;
    }
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} >= {critical} on {bins} bins from {start:?}");
}

#[test]
fn coupled_marginals_follow_the_kernel() {
    let (cfg, ch) = chain(0.5, 3);
    let cert = smallset_certificate(&cfg, &ch).unwrap();
    let sim = CouplingSimulator::new(&ch.kernel, &cert.minorisation, CouplingKind::Ordered).unwrap();
    chi_square_marginal(&sim, &ch.kernel, (10, 0), 42);
    chi_square_marginal(&sim, &ch.kernel, (0, 10), 43);
    chi_square_marginal(&sim, &ch.kernel, (2, 3), 44);
}

#[test]
fn sampler_constants_values() {
    let c = ISamplerConfig::new(2.0, 1.1, 0.25).unwrap();
    let k = sampler_constants(&c).unwrap();
    let x_star = (0.25f64 / 3.0).sqrt();
    assert_relative_eq!(k.x_star, x_star, max_relative = 1e-14);
    assert_relative_eq!(k.epsilon, 0.25 * (1.0 - x_star), max_relative = 1e-12);
    for (r, a) in [(2.0, 1.1), (2.0, 1.4), (0.5, 1.5), (1.0, 1.9)] {
        let c = ISamplerConfig::new(r, a, 0.25).unwrap();
        if let Ok(k) = sampler_constants(&c) {
            assert_relative_eq!(k.int_u_k, (r + 1.0) / (1.0 + r - r * a), max_relative = 1e-9);
        }
    }
    assert_relative_eq!(k.int_u_k, 3.75, max_relative = 1e-9);
}

#[test]
fn sampler_grid_kernel() {
    let mut c = ISamplerConfig::new(2.0, 1.1, 0.25).unwrap();
    c.grid_n = 200;
    let g = discretized_kernel(&c).unwrap();
    assert!(check_monotone(&g.kernel).monotone);
    for &(i, j) in &[(0usize, 5usize), (10, 150), (199, 0), (120, 121)] {
        let (a, b) = g.cells[j];
        let q = accepted_mass_by_quadrature(&c, g.points[i], a, b).unwrap();
        assert_relative_eq!(g.kernel.get(i, j), q, max_relative = 1e-10);
    }
    let check = grid_check(&c).unwrap();
    assert!(check.passed(), "{check:?}");
    assert!(check.stationarity_residual < 5.0 / 200.0);
}
