use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ergobound::bounds::{compute_m_u, BoundConstants, BoundCurve, BoundPoint, MomentBounds, YoungPair};
use ergobound::isampler::RateChoice;
use ergobound::rates::RateFamily;
use ergobound_cli::config::{
    BoundConfig, CouplingKindName, CouplingSection, ExperimentConfig, ExperimentKind, IsamplerSection, Mg1Section,
    OutputConfig,
};
use ergobound_cli::pipeline::{self, Check, Mode, RunOptions, RunOutcome};
use ergobound_cli::{io, render};

#[derive(Parser)]
#[command(name = "ergobound", version, about = "Computable convergence bounds for Markov chains")]
struct Cli {
    /// Seed for Monte Carlo checks.
    #[arg(long, global = true, env = "ERGOBOUND_SEED")]
    seed: Option<u64>,
    /// Directory for artifacts; relative `--out` paths resolve against it.
    #[arg(long, global = true, env = "ERGOBOUND_OUT_DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "ERGOBOUND_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate a rate sequence r(n) and its partial sums.
    Rates(RatesArgs),
    /// Evaluate the bound families from given moment constants.
    Bound(BoundArgs),
    /// Bound curves for the embedded M/G/1 chain.
    Mg1(Mg1Args),
    /// Bound curve for the independence sampler on (0, 1].
    Isampler(IsamplerArgs),
    /// Check bounds against exact distances or Monte Carlo.
    Verify {
        #[command(subcommand)]
        what: VerifyCommand,
    },
    /// Plot CSV curves as an SVG with a log y axis.
    Render(RenderArgs),
    /// Run an experiment config and write all of its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RateKindArg {
    Constant,
    Polynomial,
    Table,
}

#[derive(Args)]
struct RateArgs {
    #[arg(long = "rate", value_enum, default_value = "polynomial")]
    kind: RateKindArg,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long = "rate-alpha", default_value_t = 2.0)]
    alpha: f64,
    /// Table values, comma separated.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

impl RateArgs {
    fn family(&self) -> RateFamily {
        match self.kind {
            RateKindArg::Constant => RateFamily::Constant { c: None },
            RateKindArg::Polynomial => RateFamily::Polynomial {
                c: self.c,
                alpha: self.alpha,
            },
            RateKindArg::Table => RateFamily::Table {
                values: self.values.clone(),
            },
        }
    }
}

#[derive(Args)]
struct RatesArgs {
    #[command(flatten)]
    rate: RateArgs,
    #[arg(long, default_value_t = 20)]
    nmax: usize,
    /// With --epsilon, also report M_U.
    #[arg(long)]
    b_u: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    /// Moment bound U(x, x').
    #[arg(long)]
    u: f64,
    /// Moment bound V(x, x'); defaults to U.
    #[arg(long)]
    v: Option<f64>,
    #[arg(long)]
    b_u: f64,
    #[arg(long)]
    b_v: Option<f64>,
    #[arg(long)]
    epsilon: f64,
    #[command(flatten)]
    rate: RateArgs,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 0.5)]
    young_rho: f64,
    #[arg(long, default_value_t = 100)]
    nmax: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Mg1Args {
    #[arg(long)]
    rho: f64,
    /// Service tail exponent.
    #[arg(long, default_value_t = 2.5)]
    alpha: f64,
    /// Service tail onset.
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    /// Small set {0..=x0}; repeat for several curves. 1 is the atom.
    #[arg(long, default_values_t = [1])]
    x0: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    x: usize,
    /// Second start state; the bound is then against x instead of stationarity.
    #[arg(long)]
    y: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    nmax: usize,
    /// Horizon of the exact oracle and the dominance check.
    #[arg(long, default_value_t = 200)]
    exact_nmax: usize,
    #[arg(long)]
    truncation: Option<usize>,
    #[arg(long, default_value = "curves.csv")]
    out: PathBuf,
    /// Also write the SVG overlay next to the CSV.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct IsamplerArgs {
    #[arg(long)]
    r: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    eta_star: f64,
    #[arg(long, default_value_t = 2000)]
    nmax: usize,
    #[arg(long, default_value_t = 400)]
    grid_n: usize,
    #[arg(long, default_value_t = 1.0)]
    x: f64,
    #[arg(long, value_enum, default_value = "polynomial")]
    rate_choice: RateChoiceArg,
    #[arg(long, default_value = "is_curve.csv")]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum RateChoiceArg {
    Polynomial,
    DriftGenerator,
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Bound against the exact distance for every curve of a config.
    Dominance {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte Carlo estimate of the coupling moment.
    Coupling(CouplingArgs),
}

#[derive(Args)]
struct CouplingArgs {
    /// Take model and coupling settings from this config; flags below are ignored
    /// except --replicas.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    #[arg(long, default_value_t = 2.5)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    b: f64,
    #[arg(long, default_value_t = 1)]
    x0: usize,
    #[arg(long, default_value_t = 10)]
    x: usize,
    #[arg(long, default_value_t = 0)]
    y: usize,
    #[arg(long, value_enum, default_value = "ordered")]
    kind: CouplingKindArg,
    #[arg(long, default_value = "coupling.json")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CouplingKindArg {
    Ordered,
    Independent,
}

#[derive(Args)]
struct RenderArgs {
    /// CSV files with an `n` column.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Legend labels, comma separated; file stems by default.
    #[arg(long, value_delimiter = ',')]
    labels: Vec<String>,
    /// Value column; `bound_tv`, then `exact_tv` by default.
    #[arg(long)]
    column: Option<String>,
    #[arg(long, default_value = "")]
    title: String,
    /// Vertical marker at this n; repeatable.
    #[arg(long)]
    marker: Vec<f64>,
    #[arg(long, default_value = "figure.svg")]
    out: PathBuf,
}

fn resolve(out_dir: &Option<PathBuf>, p: &Path) -> PathBuf {
    match out_dir {
        Some(d) if p.is_relative() => d.join(p),
        _ => p.to_path_buf(),
    }
}

fn report(outcome: &RunOutcome) -> bool {
    for c in &outcome.checks {
        print_check(c);
    }
    for a in &outcome.artifacts {
        println!("wrote {}", a.display());
    }
    outcome.passed()
}

fn print_check(c: &Check) {
    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
}

fn rates(args: &RatesArgs, out_dir: &Option<PathBuf>) -> anyhow::Result<bool> {
    let r = args.rate.family().build()?;
    let cum = r.cumulative_prefix(args.nmax);
    let rows: Vec<(usize, f64, f64)> = (0..=args.nmax).map(|n| (n, r.value(n), cum[n])).collect();
    match &args.out {
        Some(p) => {
            let p = resolve(out_dir, p);
            if let Some(d) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(d)?;
            }
            io::write_rate_csv(std::fs::File::create(&p)?, &rows)?;
            println!("wrote {}", p.display());
        }
        None => io::write_rate_csv(std::io::stdout().lock(), &rows)?,
    }
    match (args.b_u, args.epsilon) {
        (Some(b), Some(eps)) => eprintln!("M_U = {}", compute_m_u(&r, b, eps)?),
        (None, None) => {}
        _ => bail!("--b-u and --epsilon go together"),
    }
    Ok(true)
}

fn bound(args: &BoundArgs, out_dir: &Option<PathBuf>) -> anyhow::Result<bool> {
    let r = args.rate.family().build()?;
    let yp = YoungPair::power(args.p, args.young_rho)?;
    let (u, v) = (args.u, args.v.unwrap_or(args.u));
    let b_v = args.b_v.unwrap_or(args.b_u);
    let mb = MomentBounds::new(move |_: &(), _: &()| u, move |_: &(), _: &()| v, args.b_u, b_v);
    let bc = BoundConstants::new(&r, args.epsilon, args.b_u, b_v)?;
    let points = (1..=args.nmax)
        .map(|n| BoundPoint {
            n,
            tv: ergobound::tv_bound(&mb, &bc, &r, &(), &(), n),
            f: ergobound::f_norm_bound(&mb, &bc, &(), &()),
            g: ergobound::interpolated_bound(&mb, &bc, &r, &yp, &(), &(), n),
        })
        .collect();
    let curve = BoundCurve::new("bound", points);
    eprintln!("M_U = {}, M_V = {}", bc.m_u, bc.m_v);
    match &args.out {
        Some(p) => {
            let p = resolve(out_dir, p);
            io::write_bound_csv(&p, &curve)?;
            println!("wrote {}", p.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            curve.write_csv(&mut out)?;
            out.flush()?;
        }
    }
    Ok(true)
}

fn mg1(args: &Mg1Args, cli: &Cli) -> anyhow::Result<bool> {
    let cfg = ExperimentConfig {
        kind: ExperimentKind::Mg1,
        seed: None,
        verify: true,
        output: OutputConfig {
            svg: args.svg,
            ..OutputConfig::default()
        },
        bound: BoundConfig {
            nmax: args.nmax,
            exact_nmax: args.exact_nmax.min(args.nmax),
            young: YoungPair::default(),
            y: args.y,
        },
        mg1: Some(Mg1Section {
            rho: args.rho,
            b_tail: args.b,
            alpha_tail: args.alpha,
            x0s: args.x0.clone(),
            x: args.x,
            truncation: args.truncation,
        }),
        isampler: None,
        discrete: None,
        coupling: None,
    };
    let opts = RunOptions {
        seed: cli.seed,
        ..RunOptions::default()
    };
    let outcome = pipeline::run_to_file(&cfg, &opts, &resolve(&cli.out_dir, &args.out))?;
    Ok(report(&outcome))
}

fn isampler(args: &IsamplerArgs, cli: &Cli) -> anyhow::Result<bool> {
    let cfg = ExperimentConfig {
        kind: ExperimentKind::Isampler,
        seed: None,
        verify: true,
        output: OutputConfig {
            svg: args.svg,
            ..OutputConfig::default()
        },
        bound: BoundConfig {
            nmax: args.nmax,
            exact_nmax: 1,
            young: YoungPair::default(),
            y: None,
        },
        mg1: None,
        isampler: Some(IsamplerSection {
            r: args.r,
            alpha: args.alpha,
            eta_star: args.eta_star,
            grid_n: args.grid_n,
            x: args.x,
            rate_choice: match args.rate_choice {
                RateChoiceArg::Polynomial => RateChoice::Polynomial,
                RateChoiceArg::DriftGenerator => RateChoice::DriftGenerator,
            },
        }),
        discrete: None,
        coupling: None,
    };
    let outcome = pipeline::run_to_file(&cfg, &RunOptions::default(), &resolve(&cli.out_dir, &args.out))?;
    if let Some(n) = outcome.metadata.get("n_star_0_1") {
        println!("n* (TV bound <= 0.1) = {n}");
    }
    Ok(report(&outcome))
}

fn coupling(args: &CouplingArgs, cli: &Cli) -> anyhow::Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig {
            kind: ExperimentKind::Mg1,
            seed: None,
            verify: true,
            output: OutputConfig::default(),
            bound: BoundConfig {
                nmax: 1,
                exact_nmax: 1,
                young: YoungPair::default(),
                y: None,
            },
            mg1: Some(Mg1Section {
                rho: args.rho,
                b_tail: args.b,
                alpha_tail: args.alpha,
                x0s: vec![args.x0],
                x: args.x,
                truncation: None,
            }),
            isampler: None,
            discrete: None,
            coupling: Some(CouplingSection {
                replicas: 10_000,
                x: args.x,
                y: args.y,
                x0: Some(args.x0),
                kind: match args.kind {
                    CouplingKindArg::Ordered => CouplingKindName::Ordered,
                    CouplingKindArg::Independent => CouplingKindName::Independent,
                },
                cap: ergobound::verify::TRAJECTORY_CAP,
            }),
        },
    };
    if let (Some(n), Some(cs)) = (args.replicas, cfg.coupling.as_mut()) {
        cs.replicas = n;
    }
    let (value, check) = pipeline::coupling_only(&cfg, cli.seed)?;
    let out = resolve(&cli.out_dir, &args.out);
    io::write_json(&out, &value)?;
    print_check(&check);
    println!("wrote {}", out.display());
    Ok(check.passed)
}

fn render_cmd(args: &RenderArgs, out_dir: &Option<PathBuf>) -> anyhow::Result<bool> {
    if !args.labels.is_empty() && args.labels.len() != args.inputs.len() {
        bail!("{} labels for {} inputs", args.labels.len(), args.inputs.len());
    }
    let series = args
        .inputs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let label = args
                .labels
                .get(i)
                .cloned()
                .unwrap_or_else(|| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
            io::read_series(p, args.column.as_deref(), label)
        })
        .collect::<ergobound_cli::Result<Vec<_>>>()?;
    let markers: Vec<render::Marker> = args
        .marker
        .iter()
        .map(|&x| render::Marker {
            x,
            label: format!("n = {x}"),
        })
        .collect();
    let svg = render::render_svg(&args.title, &series, &markers)?;
    let out = resolve(out_dir, &args.out);
    io::write_text(&out, &svg)?;
    println!("wrote {}", out.display());
    Ok(true)
}

fn dispatch(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Rates(a) => rates(a, &cli.out_dir),
        Command::Bound(a) => bound(a, &cli.out_dir),
        Command::Mg1(a) => mg1(a, cli),
        Command::Isampler(a) => isampler(a, cli),
        Command::Verify { what } => match what {
            VerifyCommand::Dominance { config } => {
                let opts = RunOptions {
                    out_dir: cli.out_dir.clone(),
                    seed: cli.seed,
                    mode: Mode::Dominance,
                };
                let outcome = pipeline::run_file(config, &opts).with_context(|| format!("running {}", config.display()))?;
                Ok(report(&outcome))
            }
            VerifyCommand::Coupling(a) => coupling(a, cli),
        },
        Command::Render(a) => render_cmd(a, &cli.out_dir),
        Command::Run { config } => {
            let opts = RunOptions {
                out_dir: cli.out_dir.clone(),
                seed: cli.seed,
                mode: Mode::Full,
            };
            let outcome = pipeline::run_file(config, &opts).with_context(|| format!("running {}", config.display()))?;
            Ok(report(&outcome))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
