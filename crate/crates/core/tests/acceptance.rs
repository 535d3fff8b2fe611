//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::time::{Duration, Instant};

use ergobound::bounds::{compute_m_u, YoungPair};
use ergobound::drift::{bivariate_from_univariate, lambda_interval, UnivariateDriftCert};
use ergobound::isampler::{grid_check, sampler_curves, ISamplerConfig};
use ergobound::mg1::{atom_certificate, embedded_matrix, figure_curves, FigureSpec, MG1Config, QueueFigure, ServiceLaw};
use ergobound::monotone::{find_minorisation, residual_kernel, DiscreteKernel, MinorisationCert, QuantileCoupler};
use ergobound::rates::{PhiGenerator, RateSequence};
use ergobound::verify::{dominance_report, simulate_coupling, CouplingConfig, CouplingKind, TRAJECTORY_CAP};
use ergobound::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Horizon over which bound curves are compared with the exact distance.
const DOMINANCE_HORIZON: usize = 200;
/// Truncation tail mass allowed for the exact oracle.
const TAIL_MASS_TOL: f64 = 1e-6;
const RUNTIME_LIMIT: Duration = Duration::from_secs(120);
/// Horizon searched for the x0 = 6 curve dropping below the atom curve.
const CROSSOVER_HORIZON: usize = 10_000;
const YOUNG_REL_TOL: f64 = 1e-9;
const H_ROUND_TRIP_TOL: f64 = 1e-10;
const ROW_SUM_TOL: f64 = 1e-10;
const MARGINAL_TOL: f64 = 1e-12;
const PROPERTY_CASES: usize = 1000;
const M_U_CONFIGS: usize = 100;
const M_U_BRUTE_HORIZON: usize = 10_000;
const COUPLING_REPLICAS: usize = 10_000;
const COUPLING_SEED: u64 = 42;
const COUPLING_MEAN_LIMIT: f64 = 19.0;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, ok: bool, detail: impl AsRef<str>) {
        if !ok {
            self.failures += 1;
        }
        println!("{} {id}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    }

    fn info(&self, id: &str, detail: impl AsRef<str>) {
        println!("INFO {id}: {}", detail.as_ref());
    }
}

fn figure(rho: f64) -> Result<QueueFigure, Error> {
    let mut spec = FigureSpec::standard(rho);
    spec.nmax = CROSSOVER_HORIZON;
    spec.exact_nmax = DOMINANCE_HORIZON;
    figure_curves(&spec)
}

fn dominance(rep: &mut Report) -> Vec<QueueFigure> {
    let start = Instant::now();
    let mut figures = Vec::new();
    for rho in [0.5, 0.9] {
        let fig = match figure(rho) {
            Ok(f) => f,
            Err(e) => {
                rep.line(&format!("1 dominance rho={rho}"), false, e.to_string());
                continue;
            }
        };
        let mut ok = fig.tail_mass < TAIL_MASS_TOL && fig.stationary_last < TAIL_MASS_TOL;
        let mut parts = vec![format!(
            "truncation {} tail mass {:.2e} pi(last) {:.2e}",
            fig.truncation, fig.tail_mass, fig.stationary_last
        )];
        for curve in &fig.curves {
            let bound: Vec<f64> = curve.tv_values().into_iter().take(DOMINANCE_HORIZON).collect();
            let exact = &fig.exact.tv[..DOMINANCE_HORIZON];
            match dominance_report(&bound, exact) {
                Ok(d) => {
                    ok &= d.passed();
                    parts.push(match d.first_violation {
                        None => format!("{} min margin {:.3e} at n={}", curve.label, d.min_margin, d.min_margin_n),
                        Some((n, b, x)) => format!("{} violated at n={n} ({b:e} < {x:e})", curve.label),
                    });
                }
                Err(e) => {
                    ok = false;
                    parts.push(format!("{}: {e}", curve.label));
                }
            }
        }
        rep.line(&format!("1 dominance rho={rho}"), ok, parts.join("; "));
        figures.push(fig);
    }
    let elapsed = start.elapsed();
    rep.line(
        "1 runtime",
        elapsed < RUNTIME_LIMIT,
        format!("{:.1}s for both traffic levels (limit {}s)", elapsed.as_secs_f64(), RUNTIME_LIMIT.as_secs()),
    );
    figures
}

fn crossover(rep: &mut Report, figures: &[QueueFigure]) {
    for fig in figures {
        let stars: Vec<String> = fig
            .summaries
            .iter()
            .map(|s| format!("{} eps={:.4} M_U={:.2} n*={:?}", s.label, s.epsilon, s.m_u, s.n_star_0_1))
            .collect();
        let detail = format!("first n with x0=6 below atom: {:?}; {}", fig.crossover, stars.join(", "));
        if fig.rho == 0.9 {
            rep.line("2 crossover rho=0.9", fig.crossover.is_some_and(|n| n <= CROSSOVER_HORIZON), detail);
        } else {
            rep.info(&format!("2 crossover rho={}", fig.rho), detail);
        }
    }
}

fn sampler(rep: &mut Report) {
    let young = YoungPair::default();
    let heavy = ISamplerConfig::new(2.0, 1.1, 0.25).and_then(|c| sampler_curves(&c, 1, &young));
    let light = ISamplerConfig::new(0.5, 1.5, 0.5).and_then(|c| sampler_curves(&c, 1, &young));
    let (heavy, light) = match (heavy, light) {
        (Ok(h), Ok(l)) => (h, l),
        (h, l) => {
            rep.line("3 sampler", false, format!("{:?} / {:?}", h.err(), l.err()));
            return;
        }
    };
    let (nh, nl) = (heavy.n_star, light.n_star);
    rep.line(
        "3a n*(r=2, alpha=1.1, eta*=0.25) in [250, 1000]",
        nh.is_some_and(|n| (250..=1000).contains(&n)),
        format!("n* = {nh:?}, M_U = {:.3}, kappa = {:.4}", heavy.bound_constants.m_u, heavy.kappa),
    );
    rep.line(
        "3b n*(r=1/2, alpha=1.5, eta*=0.5) <= 100",
        nl.is_some_and(|n| n <= 100),
        format!("n* = {nl:?}, M_U = {:.3}, kappa = {:.4}", light.bound_constants.m_u, light.kappa),
    );
    rep.line(
        "3c n*(r=2) > 5 n*(r=1/2)",
        matches!((nh, nl), (Some(a), Some(b)) if a > 5 * b),
        format!("{nh:?} vs {nl:?}"),
    );
    let mut etas = Vec::new();
    let mut shown = Vec::new();
    for eta in [0.1, 0.25, 0.5, 0.75] {
        match ISamplerConfig::new(2.0, 1.1, eta).and_then(|c| sampler_curves(&c, 1, &young)) {
            Ok(s) => {
                etas.push(s.n_star);
                shown.push(format!("eta*={eta}: n*={:?}", s.n_star));
            }
            Err(_) => shown.push(format!("eta*={eta}: certificate gate fails")),
        }
    }
    let monotone = etas.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => b <= a,
        _ => true,
    });
    rep.info("3 n* against eta* (r=2)", format!("{}; non-increasing where defined: {monotone}", shown.join(", ")));
}

fn coupling(rep: &mut Report) {
    let run = || -> Result<_, Error> {
        let cfg = MG1Config::from_traffic(0.5, ServiceLaw::new(1.0, 2.5)?, 1, 10, None)?;
        let chain = embedded_matrix(&cfg)?;
        let cert = atom_certificate(&cfg, &chain)?;
        let cc = CouplingConfig {
            kind: CouplingKind::Ordered,
            x: 10,
            y: 0,
            replicas: COUPLING_REPLICAS,
            seed: COUPLING_SEED,
            cap: TRAJECTORY_CAP,
        };
        simulate_coupling(&chain.kernel, &cert.minorisation, &cc, &RateSequence::constant(), &|_, _| 1.0)
    };
    match run() {
        Ok(est) => {
            let limit = COUPLING_MEAN_LIMIT + 3.0 * est.rate_sum_se;
            rep.line(
                "4a coupling mean from (10, 0)",
                est.censored == 0 && est.rate_sum_mean <= limit,
                format!(
                    "mean {:.3} (SE {:.3}) <= {limit:.3}, censored {}",
                    est.rate_sum_mean, est.rate_sum_se, est.censored
                ),
            );
            rep.line(
                "4b atom couples at first visit",
                est.coupled_at_first_visit == 1.0,
                format!("frequency {}, visits {:?}", est.coupled_at_first_visit, est.visits_at_coupling),
            );
        }
        Err(e) => rep.line("4 coupling", false, e.to_string()),
    }
}

fn young_inequality(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..PROPERTY_CASES {
        let yp = YoungPair::power(rng.random_range(1.01..10.0), rng.random_range(0.01..0.99)).unwrap();
        let u = 10f64.powf(rng.random_range(-3.0..6.0));
        let v = 10f64.powf(rng.random_range(-3.0..6.0));
        let lhs = yp.alpha(u) * yp.beta(v);
        let rhs = yp.rho * u + (1.0 - yp.rho) * v;
        worst = worst.max((lhs - rhs) / rhs);
    }
    (worst <= YOUNG_REL_TOL, format!("max relative excess {worst:.3e}"))
}

fn random_generator(rng: &mut ChaCha8Rng) -> PhiGenerator {
    if rng.random_bool(0.5) {
        PhiGenerator::polynomial(rng.random_range(0.1..5.0), rng.random_range(1.1..4.0)).unwrap()
    } else {
        let s = rng.random_range(0.2..3.0);
        PhiGenerator::custom(move |v: f64| s * (v.ln() + 1.0), move |v: f64| s / v).unwrap()
    }
}

fn h_round_trip(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = 0.0f64;
    for i in 0..PROPERTY_CASES {
        let g = random_generator(rng);
        let t = if i == 0 { 0.0 } else { 10f64.powf(rng.random_range(-3.0..6.0)) };
        let err = g.h_inverse(t).and_then(|v| g.h(v)).map(|back| (back - t).abs() / t.max(1.0));
        match err {
            Ok(e) => worst = worst.max(e),
            Err(e) => return (false, format!("t = {t}: {e}")),
        }
    }
    (worst <= H_ROUND_TRIP_TOL, format!("max scaled error {worst:.3e}"))
}

fn rate_shape(rng: &mut ChaCha8Rng) -> (bool, String) {
    for _ in 0..PROPERTY_CASES {
        let g = random_generator(rng);
        let r = ergobound::rates::rate_from_phi(&g);
        let len = 200;
        if let Err(e) = r.check_invariants(len) {
            return (false, e.to_string());
        }
        for k in 1..len - 1 {
            let (a, b, c) = (r.value(k - 1), r.value(k), r.value(k + 1));
            if b * b < a * c * (1.0 - 1e-12) {
                return (false, format!("log-concavity fails at k = {k}: {a}, {b}, {c}"));
            }
        }
    }
    (true, format!("{PROPERTY_CASES} generators, 200 terms each"))
}

fn brute_m_u(r: &RateSequence, b: f64, eps: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for k in 0..=M_U_BRUTE_HORIZON {
        best = best.max(b * (1.0 - eps) / eps * r.value(k) - r.cumulative(k + 1));
    }
    best.max(0.0)
}

fn m_u_brute(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = 0.0f64;
    for _ in 0..M_U_CONFIGS {
        let r = if rng.random_bool(0.2) {
            RateSequence::constant()
        } else {
            RateSequence::polynomial(rng.random_range(0.1..5.0), rng.random_range(1.1..4.0)).unwrap()
        };
        let b = rng.random_range(1.0..20.0);
        let eps = rng.random_range(0.05..1.0);
        let got = match compute_m_u(&r, b, eps) {
            Ok(v) => v,
            Err(e) => return (false, e.to_string()),
        };
        let want = brute_m_u(&r, b, eps);
        worst = worst.max((got - want).abs() / want.abs().max(1.0));
    }
    (worst <= 1e-12, format!("{M_U_CONFIGS} configurations, max relative gap {worst:.3e}"))
}

fn random_kernel(rng: &mut ChaCha8Rng, n: usize) -> DiscreteKernel {
    let rows = (0..n)
        .map(|_| {
            let mut row: Vec<f64> = (0..n)
                .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
                .collect();
            row[rng.random_range(0..n)] += 0.5;
            let s: f64 = row.iter().sum();
            row.iter().map(|p| p / s).collect()
        })
        .collect();
    DiscreteKernel::with_repair(rows).unwrap().0
}

/// Sorting each column of a matrix of row-wise CDFs in decreasing order keeps
/// the rows non-decreasing and makes the kernel stochastically monotone.
fn random_monotone_kernel(rng: &mut ChaCha8Rng, n: usize) -> DiscreteKernel {
    let mut cdfs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut c: Vec<f64> = (0..n - 1).map(|_| rng.random::<f64>()).collect();
            c.sort_by(f64::total_cmp);
            c.push(1.0);
            c
        })
        .collect();
    for a in 0..n {
        let mut col: Vec<f64> = cdfs.iter().map(|c| c[a]).collect();
        col.sort_by(|x, y| y.total_cmp(x));
        for (c, v) in cdfs.iter_mut().zip(col) {
            c[a] = v;
        }
    }
    let rows = cdfs
        .iter()
        .map(|c| {
            let mut prev = 0.0;
            c.iter()
                .map(|&v| {
                    let p = v - prev;
                    prev = v;
                    p
                })
                .collect()
        })
        .collect();
    DiscreteKernel::with_repair(rows).unwrap().0
}

fn residual_rows(rng: &mut ChaCha8Rng) -> (bool, String) {
    let mut worst = 0.0f64;
    let mut tested = 0;
    for _ in 0..PROPERTY_CASES {
        let n = rng.random_range(2..12);
        let k = random_kernel(rng, n);
        let x0 = rng.random_range(0..n);
        let cert = match find_minorisation(&k, x0) {
            Ok(c) => c,
            Err(Error::NoMinorisation { .. }) => continue,
            Err(e) => return (false, e.to_string()),
        };
        let q = match residual_kernel(&k, &cert) {
            Ok(q) => q,
            Err(e) => return (false, e.to_string()),
        };
        for x in 0..q.len() {
            if q.row(x).iter().any(|&p| p < 0.0) {
                return (false, format!("negative residual entry in row {x}"));
            }
            worst = worst.max((q.row(x).iter().sum::<f64>() - 1.0).abs());
        }
        tested += 1;
    }
    (worst <= ROW_SUM_TOL, format!("{tested} minorised kernels, max row-sum error {worst:.3e}"))
}

fn coupling_law(rng: &mut ChaCha8Rng) -> ((bool, String), (bool, String)) {
    let mut worst = 0.0f64;
    let mut disordered = 0usize;
    let mut cases = 0;
    while cases < PROPERTY_CASES {
        let n = rng.random_range(2..10);
        let k = random_monotone_kernel(rng, n);
        let Ok(cert) = find_minorisation(&k, rng.random_range(0..n)) else {
            continue;
        };
        let coupler = QuantileCoupler::new(&k, &cert).unwrap();
        let q = residual_kernel(&k, &cert).unwrap();
        let x = rng.random_range(0..n);
        let y = rng.random_range(x..n);
        let (rx, ry) = if coupler.in_pair_set(x, y) {
            (q.row(x).to_vec(), q.row(y).to_vec())
        } else {
            (k.row(x).to_vec(), k.row(y).to_vec())
        };
        let mut mx = vec![0.0; n];
        let mut my = vec![0.0; n];
        for (a, b, m) in coupler.step_law(x, y) {
            mx[a] += m;
            my[b] += m;
            if a > b && m > 0.0 {
                disordered += 1;
            }
        }
        for z in 0..n {
            worst = worst.max((mx[z] - rx[z]).abs()).max((my[z] - ry[z]).abs());
        }
        cases += 1;
    }
    (
        (worst <= MARGINAL_TOL, format!("{cases} monotone kernels, max marginal error {worst:.3e}")),
        (disordered == 0, format!("{disordered} transitions left the ordered set")),
    )
}

fn grid(rep: &mut Report) {
    for (r, a, e) in [(2.0, 1.1, 0.25), (0.5, 1.5, 0.5)] {
        let id = format!("5h grid drift r={r} alpha={a}");
        match ISamplerConfig::new(r, a, e).and_then(|c| grid_check(&c)) {
            Ok(g) => rep.line(
                &id,
                g.passed(),
                format!(
                    "grid {} drift excess {:.3e}, minorisation deficit {:.3e}, slack {:.3e}, monotone {}",
                    g.grid_n, g.drift_excess, g.minorisation_deficit, g.slack, g.monotone
                ),
            ),
            Err(e) => rep.line(&id, false, e.to_string()),
        }
    }
}

fn properties(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let (ok, d) = young_inequality(&mut rng);
    rep.line("5a Young inequality", ok, d);
    let (ok, d) = h_round_trip(&mut rng);
    rep.line("5b H round trip", ok, d);
    let (ok, d) = rate_shape(&mut rng);
    rep.line("5c log-concavity and rate class", ok, d);
    let (ok, d) = m_u_brute(&mut rng);
    rep.line("5d M_U against brute force", ok, d);
    let (ok, d) = residual_rows(&mut rng);
    rep.line("5e residual rows stochastic", ok, d);
    let ((ok, d), (ok2, d2)) = coupling_law(&mut rng);
    rep.line("5f coupling marginals exact", ok, d);
    rep.line("5g order absorption", ok2, d2);
    grid(rep);
}

fn negative_controls(rep: &mut Report, figures: &[QueueFigure]) {
    if let Some(fig) = figures.first() {
        let scaled: Vec<f64> = fig.curves[0].tv_values().iter().take(DOMINANCE_HORIZON).map(|b| b * 0.01).collect();
        let res = dominance_report(&scaled, &fig.exact.tv[..DOMINANCE_HORIZON]);
        let witness = res.ok().and_then(|d| d.first_violation);
        rep.line(
            "6a corrupted bound detected",
            witness.is_some(),
            format!("first violation (n, bound, exact) = {witness:?}"),
        );
    } else {
        rep.line("6a corrupted bound detected", false, "no figure available");
    }

    let cert = UnivariateDriftCert::<usize> {
        w0: std::sync::Arc::new(|x: &usize| 1.0 + *x as f64),
        phi0: PhiGenerator::polynomial(2.0, 2.0).unwrap(),
        b0: 1.0,
        in_c: std::sync::Arc::new(|x: &usize| *x == 0),
        epsilon: 0.5,
        d0: 4.0,
        sup_pw0_on_c: 2.0,
        nu_w0: 1.5,
        sup_w0_on_c: 1.0,
    };
    let hi = lambda_interval(&cert).map(|(_, hi)| hi).unwrap_or(f64::NAN);
    let outside = bivariate_from_univariate(&cert, Some(hi + 0.05));
    let zero = bivariate_from_univariate(&cert, Some(0.0));
    let named = |r: &Result<_, Error>| matches!(r, Err(Error::Config { invariant, .. }) if invariant.contains("lambda"));
    rep.line(
        "6b lambda outside interval rejected",
        named(&outside) && named(&zero),
        format!("interval (0, {hi:.4}); {}", outside.err().map(|e| e.to_string()).unwrap_or_default()),
    );

    let bad: Vec<_> = [(2.0, 1.5), (2.0, 1.0), (0.5, 3.0)]
        .iter()
        .map(|&(r, a)| ISamplerConfig::new(r, a, 0.25))
        .collect();
    let all_named = bad
        .iter()
        .all(|r| matches!(r, Err(Error::Config { invariant, .. }) if invariant.contains("1 < alpha < 1 + 1/r")));
    rep.line(
        "6c alpha outside (1, 1 + 1/r) rejected",
        all_named,
        bad[0].as_ref().err().map(|e| e.to_string()).unwrap_or_default(),
    );

    let k = DiscreteKernel::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let zero_cert = MinorisationCert::new(0, 0.0, vec![1.0, 0.0]);
    let zero_mu = compute_m_u(&RateSequence::constant(), 2.0, 0.0);
    let none = find_minorisation(&k, 1);
    rep.line(
        "6d epsilon = 0 rejected",
        matches!(zero_cert, Err(Error::Certificate { .. })) && zero_mu.is_err() && matches!(none, Err(Error::NoMinorisation { .. })),
        zero_cert.err().map(|e| e.to_string()).unwrap_or_default(),
    );
}

fn main() {
    let mut rep = Report { failures: 0 };
    let figures = dominance(&mut rep);
    crossover(&mut rep, &figures);
    sampler(&mut rep);
    coupling(&mut rep);
    properties(&mut rep);
    negative_controls(&mut rep, &figures);
    let first_three = figures.len() == 2 && rep.failures == 0;
    rep.info(
        "7 reference curve values",
        format!(
            "reference moment constants are not available; criteria 1-3 stand in as the contract (currently {})",
            if first_three { "met" } else { "not met" }
        ),
    );
    println!("acceptance: {} failing criteria", rep.failures);
    if rep.failures > 0 {
        std::process::exit(1);
    }
}
