//! Runs an experiment config end to end and writes its artifacts.

use std::path::{Path, PathBuf};

use ergobound::bounds::{bound_vs_stationary, BoundCurve, BoundInputs, BoundPoint};
use ergobound::drift::exact_monotone_moments;
use ergobound::isampler::{grid_check, sampler_curves};
use ergobound::mg1::{certificate, curve_label, embedded_matrix, figure_curves, FigureSpec, TAIL_MASS_LIMIT};
use ergobound::monotone::{check_monotone, find_minorisation, DiscreteKernel, MinorisationCert};
use ergobound::rates::RateSequence;
use ergobound::verify::{
    check_irreducible, dominance_report, exact_tv_curve, simulate_coupling, stationary, tv_distance, CouplingConfig,
    CouplingEstimate,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{BoundConfig, CouplingSection, ExperimentConfig, ExperimentKind};
use crate::error::{CliError, Result};
use crate::io;
use crate::render::{render_svg, Marker, Series};

pub const DEFAULT_SEED: u64 = 42;

/// Outcome of one declared check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Curves, exact oracle, metadata and plot.
    #[default]
    Full,
    /// Only the per-curve dominance tables and a summary.
    Dominance,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's output directory.
    pub out_dir: Option<PathBuf>,
    /// Overrides the config's seed.
    pub seed: Option<u64>,
    pub mode: Mode,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifacts: Vec<PathBuf>,
    pub checks: Vec<Check>,
    pub metadata: Value,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

enum Layout {
    /// `dir/prefix + name` for every artifact.
    Dir { dir: PathBuf, prefix: String },
    /// Curves at the given path, everything else next to it.
    File(PathBuf),
}

struct Writer {
    layout: Layout,
    artifacts: Vec<PathBuf>,
}

impl Writer {
    fn record(&mut self, p: PathBuf) -> PathBuf {
        self.artifacts.push(p.clone());
        p
    }

    fn sibling(path: &Path, suffix: &str, ext: &str) -> PathBuf {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        path.with_file_name(format!("{stem}_{suffix}.{ext}"))
    }

    /// Auxiliary artifact such as `exact.csv`.
    fn named(&mut self, name: &str) -> PathBuf {
        let p = match &self.layout {
            Layout::Dir { dir, prefix } => dir.join(format!("{prefix}{name}")),
            Layout::File(path) => {
                let (stem, ext) = name.rsplit_once('.').unwrap_or((name, ""));
                Self::sibling(path, stem, ext)
            }
        };
        self.record(p)
    }

    fn curve(&mut self, label: &str, only: bool) -> PathBuf {
        let p = match &self.layout {
            Layout::Dir { dir, prefix } if label.is_empty() => dir.join(format!("{prefix}bound.csv")),
            Layout::Dir { dir, prefix } => dir.join(format!("{prefix}bound_{label}.csv")),
            Layout::File(path) if only => path.clone(),
            Layout::File(path) => {
                let ext = path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
                Self::sibling(path, label, &ext)
            }
        };
        self.record(p)
    }

    fn metadata(&mut self, mode: Mode) -> PathBuf {
        let p = match (&self.layout, mode) {
            (Layout::File(path), _) => path.with_extension("json"),
            (Layout::Dir { .. }, Mode::Full) => return self.named("metadata.json"),
            (Layout::Dir { .. }, Mode::Dominance) => return self.named("dominance.json"),
        };
        self.record(p)
    }
}

/// File-name-safe form of a curve label.
fn file_label(label: &str) -> String {
    label.replace('=', "_")
}

struct Certified {
    label: String,
    x0: usize,
    cert: MinorisationCert,
    inputs: BoundInputs<usize>,
}

struct FiniteRun {
    curves: Vec<BoundCurve>,
    exact: Vec<f64>,
    certs: Vec<Certified>,
    crossover: Option<usize>,
    kernel: DiscreteKernel,
    meta: serde_json::Map<String, Value>,
}

fn pair_curve(inputs: &BoundInputs<usize>, b: &BoundConfig, x: usize, y: usize) -> BoundCurve {
    let points = (1..=b.nmax)
        .map(|n| BoundPoint {
            n,
            tv: inputs.tv(&x, &y, n),
            f: inputs.f_norm(&x, &y),
            g: inputs.interpolated(&b.young, &x, &y, n),
        })
        .collect();
    BoundCurve::new(String::new(), points)
}

/// `‖Pⁿ(x,·) - Pⁿ(y,·)‖` and the largest mass either law puts on the last state.
fn exact_pair(k: &DiscreteKernel, x: usize, y: usize, nmax: usize) -> (Vec<f64>, f64) {
    let mut mu = vec![0.0; k.size()];
    let mut nu = vec![0.0; k.size()];
    mu[x] = 1.0;
    nu[y] = 1.0;
    let mut out = Vec::with_capacity(nmax);
    let mut tail = 0.0f64;
    for _ in 0..nmax {
        mu = k.step(&mu);
        nu = k.step(&nu);
        tail = tail.max(mu[k.size() - 1]).max(nu[k.size() - 1]);
        out.push(tv_distance(&mu, &nu));
    }
    (out, tail)
}

fn check_state(name: &str, s: usize, k: &DiscreteKernel) -> Result<()> {
    if s >= k.size() {
        return Err(CliError::invalid(
            format!("{name} inside the state space"),
            format!("{name} = {s}, {} states", k.size()),
        ));
    }
    Ok(())
}

/// Curves for every certificate, either against `π` or between `x` and `y`.
fn finite_curves(
    k: &DiscreteKernel,
    certs: &[Certified],
    x: usize,
    b: &BoundConfig,
) -> Result<(Vec<BoundCurve>, Vec<f64>, f64)> {
    check_state("x", x, k)?;
    match b.y {
        None => {
            let pi = stationary(k)?;
            let states: Vec<usize> = (0..k.size()).collect();
            let exact = exact_tv_curve(k, &pi, x, b.exact_nmax)?;
            let curves = certs
                .iter()
                .map(|c| {
                    let mut curve = bound_vs_stationary(&c.inputs, &b.young, &x, &states, &pi, b.nmax)?;
                    curve.label = c.label.clone();
                    Ok(curve)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((curves, exact.tv, exact.tail_mass))
        }
        Some(y) => {
            check_state("y", y, k)?;
            let (exact, tail) = exact_pair(k, x, y, b.exact_nmax);
            let curves = certs
                .iter()
                .map(|c| {
                    let mut curve = pair_curve(&c.inputs, b, x, y);
                    curve.label = c.label.clone();
                    curve
                })
                .collect();
            Ok((curves, exact, tail))
        }
    }
}

fn crossover_of(certs: &[Certified], curves: &[BoundCurve]) -> Option<usize> {
    let atom = certs.iter().position(|c| c.x0 == 1)?;
    let largest = (0..certs.len()).max_by_key(|&i| certs[i].x0)?;
    (largest != atom).then(|| curves[largest].first_below(&curves[atom])).flatten()
}

fn mg1_run(cfg: &ExperimentConfig) -> Result<FiniteRun> {
    let m = cfg.mg1.as_ref().expect("validated");
    let b = &cfg.bound;
    let service = m.service()?;
    // Against π the truncation is enlarged until the oracle's tail mass is small.
    let truncation = if b.y.is_none() {
        let spec = FigureSpec {
            rho: m.rho,
            service,
            start_x: m.x,
            x0s: m.x0s.clone(),
            nmax: 1,
            exact_nmax: b.exact_nmax,
            truncation: m.truncation,
            young: b.young,
        };
        Some(figure_curves(&spec)?.truncation)
    } else {
        m.truncation
    };
    let max_x0 = *m.x0s.iter().max().expect("non-empty");
    let mut base = m.model(max_x0)?;
    if let Some(t) = truncation {
        base.truncation = t;
    }
    let chain = embedded_matrix(&base)?;
    let mut certs = Vec::new();
    for &x0 in &m.x0s {
        let c = ergobound::mg1::MG1Config { x0, ..base };
        c.validate()?;
        let qc = certificate(&c, &chain)?;
        certs.push(Certified {
            label: curve_label(x0),
            x0,
            inputs: qc.bound_inputs()?,
            cert: qc.minorisation,
        });
    }
    let (curves, exact, tail) = finite_curves(&chain.kernel, &certs, m.x, b)?;
    let crossover = crossover_of(&certs, &curves);
    let mut meta = serde_json::Map::new();
    meta.insert("rho".into(), json!(m.rho));
    meta.insert("lambda".into(), json!(base.lambda_arrival));
    meta.insert("b_tail".into(), json!(m.b_tail));
    meta.insert("alpha_tail".into(), json!(m.alpha_tail));
    meta.insert("m1".into(), json!(service.mean()?));
    meta.insert("truncation".into(), json!(base.truncation));
    meta.insert("tail_mass".into(), json!(tail));
    Ok(FiniteRun {
        curves,
        exact,
        certs,
        crossover,
        kernel: chain.kernel,
        meta,
    })
}

fn discrete_run(cfg: &ExperimentConfig) -> Result<FiniteRun> {
    let d = cfg.discrete.as_ref().expect("validated");
    let k = io::read_kernel(&d.kernel)?;
    check_irreducible(&k)?;
    check_state("x0", d.x0, &k)?;
    let mono = check_monotone(&k);
    if !mono.monotone {
        return Err(CliError::invalid(
            "kernel stochastically monotone (required to lift U0 by the larger state)",
            format!("P(x, <=a) < P(x+1, <=a) at (x, a) = {:?}", mono.witness.expect("witness")),
        ));
    }
    let cert = find_minorisation(&k, d.x0)?;
    let moments = exact_monotone_moments(&k, &cert)?.lift(|a: &usize, b: &usize| *a.max(b));
    let certs = vec![Certified {
        label: curve_label(d.x0),
        x0: d.x0,
        inputs: moments.bound_inputs()?,
        cert,
    }];
    let (curves, exact, tail) = finite_curves(&k, &certs, d.x, &cfg.bound)?;
    let mut meta = serde_json::Map::new();
    meta.insert("kernel".into(), json!(d.kernel.file_name().map(|f| f.to_string_lossy().into_owned())));
    meta.insert("states".into(), json!(k.size()));
    meta.insert("tail_mass".into(), json!(tail));
    Ok(FiniteRun {
        curves,
        exact,
        certs,
        crossover: None,
        kernel: k,
        meta,
    })
}

fn coupling_check(run: &FiniteRun, cs: &CouplingSection, seed: u64) -> Result<(Value, Check)> {
    let x0 = cs.x0.unwrap_or(run.certs[0].x0);
    let c = run
        .certs
        .iter()
        .find(|c| c.x0 == x0)
        .ok_or_else(|| CliError::invalid("coupling.x0 among the configured small sets", format!("x0 = {x0}")))?;
    let cc = CouplingConfig {
        kind: cs.kind.into(),
        x: cs.x,
        y: cs.y,
        replicas: cs.replicas,
        seed,
        cap: cs.cap,
    };
    let est = simulate_coupling(&run.kernel, &c.cert, &cc, &RateSequence::constant(), &|_, _| 1.0)?;
    let limit = c.inputs.moments.u(&cs.x, &cs.y);
    Ok(coupling_summary(&est, limit, c.cert.epsilon, seed))
}

/// Mean of `Σ_{k<=σ} r(k)` against the moment bound `U(x,y)` within three
/// standard errors; for an atom every pair must couple at its first visit.
pub fn coupling_summary(est: &CouplingEstimate, u_bound: f64, epsilon: f64, seed: u64) -> (Value, Check) {
    let se = if est.rate_sum_se.is_finite() { est.rate_sum_se } else { 0.0 };
    let mut passed = est.censored == 0 && est.rate_sum_mean <= u_bound + 3.0 * se;
    if epsilon == 1.0 {
        passed &= est.coupled_at_first_visit == 1.0;
    }
    let detail = format!(
        "mean {:.4} (SE {:.4}) vs U = {u_bound:.4}; censored {}; coupled at first visit {:.4}",
        est.rate_sum_mean, est.rate_sum_se, est.censored, est.coupled_at_first_visit
    );
    let value = json!({
        "seed": seed,
        "replicas": est.replicas,
        "censored": est.censored,
        "rate_sum_mean": est.rate_sum_mean,
        "rate_sum_se": est.rate_sum_se,
        "coupling_time_mean": est.coupling_time_mean,
        "coupled_at_first_visit": est.coupled_at_first_visit,
        "visits_at_coupling": est.visits_at_coupling,
        "u_bound": u_bound,
        "epsilon": epsilon,
    });
    (
        value,
        Check {
            name: "coupling moment".into(),
            passed,
            detail,
        },
    )
}

fn finite_artifacts(
    cfg: &ExperimentConfig,
    run: FiniteRun,
    opts: &RunOptions,
    w: &mut Writer,
    seed: u64,
) -> Result<(Vec<Check>, Value)> {
    let b = &cfg.bound;
    let verify = cfg.verify || opts.mode == Mode::Dominance;
    let mut checks = Vec::new();
    let mut curve_meta = Vec::new();
    let tail = run.meta.get("tail_mass").and_then(Value::as_f64).unwrap_or(0.0);
    if verify && cfg.kind == ExperimentKind::Mg1 {
        checks.push(Check {
            name: "truncation tail mass".into(),
            passed: tail < TAIL_MASS_LIMIT,
            detail: format!("{tail:e} (limit {TAIL_MASS_LIMIT:e})"),
        });
    }
    for (curve, c) in run.curves.iter().zip(&run.certs) {
        let tv: Vec<f64> = curve.tv_values().into_iter().take(b.exact_nmax).collect();
        let report = dominance_report(&tv, &run.exact)?;
        if verify {
            checks.push(Check {
                name: format!("dominance {}", curve.label),
                passed: report.passed(),
                detail: match report.first_violation {
                    None => format!("min margin {:e} at n = {}", report.min_margin, report.min_margin_n),
                    Some((n, bv, ev)) => format!("violated at n = {n}: bound {bv:e} < exact {ev:e}"),
                },
            });
        }
        let ic = &c.inputs.constants;
        curve_meta.push(json!({
            "label": curve.label,
            "x0": c.x0,
            "epsilon": c.cert.epsilon,
            "b_u": ic.b_u,
            "b_v": ic.b_v,
            "m_u": ic.m_u,
            "m_v": ic.m_v,
            "n_star_0_1": curve.n_star(0.1),
            "dominance": report,
        }));
        let name = file_label(&curve.label);
        if opts.mode == Mode::Dominance {
            io::write_dominance_csv(&w.named(&format!("dominance_{name}.csv")), &tv, &run.exact)?;
        } else {
            io::write_bound_csv(&w.curve(&name, run.curves.len() == 1), curve)?;
        }
    }
    let mut meta = run.meta.clone();
    meta.insert("kind".into(), json!(cfg.kind));
    meta.insert("x".into(), json!(run_start(cfg)));
    meta.insert("y".into(), json!(b.y));
    meta.insert("nmax".into(), json!(b.nmax));
    meta.insert("exact_nmax".into(), json!(b.exact_nmax));
    meta.insert("young".into(), json!(b.young));
    meta.insert("curves".into(), Value::Array(curve_meta));
    meta.insert("crossover".into(), json!(run.crossover));
    if opts.mode == Mode::Full {
        io::write_exact_csv(&w.named("exact.csv"), &run.exact)?;
        if let Some(cs) = &cfg.coupling {
            let (value, check) = coupling_check(&run, cs, seed)?;
            meta.insert("coupling".into(), value);
            if verify {
                checks.push(check);
            }
        }
        if cfg.output.svg {
            let mut series: Vec<Series> = run
                .curves
                .iter()
                .map(|c| Series {
                    label: c.label.clone(),
                    points: c.points.iter().map(|p| (p.n as f64, p.tv)).collect(),
                })
                .collect();
            series.push(Series {
                label: "exact".into(),
                points: run.exact.iter().enumerate().map(|(i, v)| ((i + 1) as f64, *v)).collect(),
            });
            let markers: Vec<Marker> = run
                .crossover
                .map(|n| Marker {
                    x: n as f64,
                    label: format!("crossover n = {n}"),
                })
                .into_iter()
                .collect();
            let svg = render_svg(&figure_title(cfg), &series, &markers)?;
            io::write_text(&w.named("figure.svg"), &svg)?;
        }
    }
    Ok((checks, Value::Object(meta)))
}

fn run_start(cfg: &ExperimentConfig) -> Value {
    match cfg.kind {
        ExperimentKind::Mg1 => json!(cfg.mg1.as_ref().map(|m| m.x)),
        ExperimentKind::Isampler => json!(cfg.isampler.as_ref().map(|s| s.x)),
        ExperimentKind::CustomDiscrete => json!(cfg.discrete.as_ref().map(|d| d.x)),
    }
}

fn figure_title(cfg: &ExperimentConfig) -> String {
    match (&cfg.mg1, &cfg.isampler) {
        (Some(m), _) => format!("M/G/1, rho = {}, alpha = {}, x = {}", m.rho, m.alpha_tail, m.x),
        (_, Some(s)) => format!("independence sampler, r = {}, alpha = {}, eta* = {}", s.r, s.alpha, s.eta_star),
        _ => "finite kernel".into(),
    }
}

fn isampler_artifacts(cfg: &ExperimentConfig, opts: &RunOptions, w: &mut Writer) -> Result<(Vec<Check>, Value)> {
    if opts.mode == Mode::Dominance {
        return Err(CliError::invalid(
            "dominance needs a finite kernel (mg1 or custom-discrete)",
            "kind = isampler",
        ));
    }
    let s = cfg.isampler.as_ref().expect("validated");
    let model = s.model()?;
    let sc = sampler_curves(&model, cfg.bound.nmax, &cfg.bound.young)?;
    io::write_bound_csv(&w.curve("", true), &sc.curve)?;
    let mut checks = Vec::new();
    let grid = grid_check(&model)?;
    if cfg.verify {
        checks.push(Check {
            name: "grid drift and minorisation".into(),
            passed: grid.passed(),
            detail: format!(
                "drift excess {:e}, minorisation deficit {:e}, slack {:e}, monotone {}",
                grid.drift_excess, grid.minorisation_deficit, grid.slack, grid.monotone
            ),
        });
    }
    if cfg.output.svg {
        let series = [Series {
            label: sc.curve.label.clone(),
            points: sc.curve.points.iter().map(|p| (p.n as f64, p.tv)).collect(),
        }];
        let markers: Vec<Marker> = sc
            .n_star
            .filter(|&n| n <= cfg.bound.nmax)
            .map(|n| Marker {
                x: n as f64,
                label: format!("n* = {n}"),
            })
            .into_iter()
            .collect();
        io::write_text(&w.named("figure.svg"), &render_svg(&figure_title(cfg), &series, &markers)?)?;
    }
    let meta = json!({
        "kind": cfg.kind,
        "r": s.r,
        "alpha": s.alpha,
        "eta_star": s.eta_star,
        "x": s.x,
        "nmax": cfg.bound.nmax,
        "young": cfg.bound.young,
        "rate_choice": sc.rate_choice,
        "constants": sc.constants,
        "bound_constants": sc.bound_constants,
        "kappa": sc.kappa,
        "n_star_0_1": sc.n_star,
        "grid_check": grid,
    });
    Ok((checks, meta))
}

/// Runs `cfg`, writing artifacts under the resolved output directory.
/// Errors mean nothing could be certified; failed checks are reported in
/// the outcome.
pub fn run(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let layout = Layout::Dir {
        dir,
        prefix: cfg.output.prefix.clone(),
    };
    execute(cfg, opts, layout)
}

/// Like [`run`], but curves go to `out` (one file per curve when there are
/// several) and the metadata to `out` with a `.json` extension.
pub fn run_to_file(cfg: &ExperimentConfig, opts: &RunOptions, out: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    execute(cfg, opts, Layout::File(out.to_path_buf()))
}

fn execute(cfg: &ExperimentConfig, opts: &RunOptions, layout: Layout) -> Result<RunOutcome> {
    let seed = opts.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let mut w = Writer {
        layout,
        artifacts: Vec::new(),
    };
    let (checks, mut meta) = match cfg.kind {
        ExperimentKind::Mg1 => {
            let run = mg1_run(cfg)?;
            finite_artifacts(cfg, run, opts, &mut w, seed)?
        }
        ExperimentKind::CustomDiscrete => {
            let run = discrete_run(cfg)?;
            finite_artifacts(cfg, run, opts, &mut w, seed)?
        }
        ExperimentKind::Isampler => isampler_artifacts(cfg, opts, &mut w)?,
    };
    let names: Vec<String> = w
        .artifacts
        .iter()
        .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .collect();
    if let Value::Object(m) = &mut meta {
        m.insert("checks".into(), json!(checks));
        m.insert("artifacts".into(), json!(names));
    }
    let meta_path = w.metadata(opts.mode);
    io::write_json(&meta_path, &meta)?;
    Ok(RunOutcome {
        artifacts: w.artifacts,
        checks,
        metadata: meta,
    })
}

/// Loads the config at `path` and runs it.
pub fn run_file(path: &Path, opts: &RunOptions) -> Result<RunOutcome> {
    run(&ExperimentConfig::load(path)?, opts)
}

/// Only the Monte Carlo coupling check of a finite-kernel config.
pub fn coupling_only(cfg: &ExperimentConfig, seed: Option<u64>) -> Result<(Value, Check)> {
    cfg.validate()?;
    let cs = cfg
        .coupling
        .as_ref()
        .ok_or_else(|| CliError::invalid("a [coupling] section", "none given"))?;
    let seed = seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let run = match cfg.kind {
        ExperimentKind::Mg1 => mg1_run(cfg)?,
        ExperimentKind::CustomDiscrete => discrete_run(cfg)?,
        ExperimentKind::Isampler => unreachable!("rejected by validation"),
    };
    coupling_check(&run, cs, seed)
}
