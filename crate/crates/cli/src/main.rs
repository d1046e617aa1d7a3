use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use relu_exact::harness::instances::{hand_built_circuits, random_3cnf, random_setcover};
use relu_exact::harness::{parse_synthetic, FileSource, SuiteConfig, PRESETS};
use relu_exact::learners::{learn_agnostic, learn_reliable, LearnerConfig, SampleSource};
use relu_exact::model::{parse_signs, ReluNet, SampleSet, Sign};
use relu_exact::oracle::{grid_search_train, random_probe, ProbeOptions};
use relu_exact::realizable::{check_realizable_single, Realizability};
use relu_exact::reductions::{
    gen_3sat, gen_mmcs, gen_setcover, verify, CnfFormula, MonotoneCircuit, ReductionInstance,
    SetCoverInstance,
};
use relu_exact::subproblem::SolverConfig;
use relu_exact::trainer::{train_exact, BiasMode, TrainOptions};

#[derive(Parser)]
#[command(name = "relu-exact", version, about = "Exact training, learning and reductions for sums of ReLUs")]
struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, env = "RELU_EXACT_JOBS", default_value_t = 0)]
    jobs: usize,
    /// Output format; each subcommand has its own default.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Globally optimal training by activation-pattern search.
    Train(TrainArgs),
    /// Decide whether one ReLU fits the samples exactly.
    Realizable(RealizableArgs),
    /// Run the agnostic or reliable learner on a sample source.
    Learn(LearnArgs),
    /// Build a training instance from a Set Cover, 3SAT or circuit instance.
    Gen(GenArgs),
    /// Measure a net on a generated instance against the predicted optimum.
    Verify(VerifyArgs),
    /// Brute-force reference optimizers.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Run a check suite and report.
    Suite(SuiteArgs),
}

#[derive(Args)]
struct NetShape {
    /// Samples as JSON or CSV; a generated instance file also works.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    k: usize,
    /// Output coefficients (`+1,-1,...`) or `unknown`. Defaults to all +1.
    #[arg(long, allow_hyphen_values = true)]
    alphas: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    shape: NetShape,
    /// Restrict to unit-norm weights and biases in [-1, 1].
    #[arg(long)]
    norm_constrained: bool,
    /// Require zero output on every sample labeled 0.
    #[arg(long)]
    reliable: bool,
    /// Pin all biases at zero.
    #[arg(long)]
    no_bias: bool,
    #[arg(long, default_value_t = 1e-8)]
    beta: f64,
    /// Enumeration guard on `k · (distinct samples)`; 0 disables it.
    #[arg(long, default_value_t = TrainOptions::DEFAULT_MAX_PATTERN_BITS)]
    max_pattern_bits: usize,
    /// Write the trained net here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RealizableArgs {
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    no_bias: bool,
}

#[derive(Args)]
struct LearnArgs {
    /// A sample file, or `synthetic:KIND[:n=..,k=..,seed=..,sigma=..]`.
    #[arg(long)]
    source: String,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    epsilon: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    reliable: bool,
    /// Multiplies the sample-count constant.
    #[arg(long, default_value_t = 1.0)]
    constant_scale: f64,
    /// Solver accuracy; defaults to epsilon / 100.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Problem {
    Setcover,
    #[value(name = "3sat")]
    ThreeSat,
    Mmcs,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    problem: Problem,
    /// Source instance JSON. Without it a random instance is drawn from
    /// `--seed` (a hand-built circuit for mmcs).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Use the bias-gadget layout.
    #[arg(long)]
    with_bias: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    net: PathBuf,
    /// Slack allowed below the predicted optimum.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Exhaustive grid over weights and biases.
    Grid {
        #[command(flatten)]
        shape: NetShape,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value_t = -2.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 2.0)]
        hi: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Best of random nets.
    Probe {
        #[command(flatten)]
        shape: NetShape,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long)]
        norm_constrained: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite file (TOML, or JSON by extension).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in suite.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// What a subcommand hands back: a JSON value, its text rendering, and
/// whether the verdict was positive.
struct Output {
    json: serde_json::Value,
    text: String,
    ok: bool,
}

impl Output {
    fn new(value: &impl Serialize, text: String) -> Result<Self> {
        Ok(Self {
            json: serde_json::to_value(value)?,
            text,
            ok: true,
        })
    }
}

fn load_samples(path: &Path) -> Result<SampleSet> {
    let is_json = path.extension().is_some_and(|e| e == "json");
    if is_json {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if let Ok(s) = SampleSet::from_json(&text) {
            return Ok(s);
        }
        if let Ok(inst) = ReductionInstance::from_json(&text) {
            return Ok(inst.samples);
        }
    }
    SampleSet::load(path).with_context(|| format!("loading samples from {}", path.display()))
}

fn write_net(path: Option<&PathBuf>, net: &ReluNet) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, net.to_json()? + "\n").with_context(|| format!("writing {}", p.display())),
        None => Ok(()),
    }
}

/// `None` means unknown coefficients.
fn alphas(given: Option<&str>, k: usize) -> Result<Option<Vec<Sign>>> {
    match given {
        None => Ok(Some(vec![Sign::Plus; k])),
        Some("unknown") => Ok(None),
        Some(s) => {
            let a = parse_signs(s)?;
            if a.len() != k {
                bail!("--alphas lists {} coefficients, --k is {k}", a.len());
            }
            Ok(Some(a))
        }
    }
}

fn fixed_alphas(given: Option<&str>, k: usize) -> Result<Vec<Sign>> {
    alphas(given, k)?.context("the oracles need explicit coefficients")
}

fn net_text(net: &ReluNet) -> String {
    let mut out = String::new();
    for j in 0..net.k() {
        let a = if net.alphas()[j] == Sign::Plus { "+" } else { "-" };
        out += &format!("  unit {j}: alpha {a}1, w = {:?}, b = {}\n", net.weights()[j], net.biases()[j]);
    }
    out
}

fn train(args: &TrainArgs, jobs: usize) -> Result<Output> {
    let s = load_samples(&args.shape.samples)?;
    let mut opts = TrainOptions::new(args.shape.k)
        .norm_constrained(args.norm_constrained)
        .reliable(args.reliable)
        .bias(if args.no_bias { BiasMode::Zero } else { BiasMode::Free })
        .solver(SolverConfig::with_beta(args.beta))
        .parallelism(jobs)
        .max_pattern_bits((args.max_pattern_bits > 0).then_some(args.max_pattern_bits));
    opts = match alphas(args.shape.alphas.as_deref(), args.shape.k)? {
        Some(a) => opts.with_alphas(a),
        None => opts.unknown_alphas(),
    };
    let r = train_exact(&s, &opts)?;
    write_net(args.out.as_ref(), &r.net)?;
    let text = format!(
        "error {:.12e} after {} solves ({} leaves, {} pruned)\n{}",
        r.error,
        r.solves,
        r.patterns_searched,
        r.subtrees_pruned,
        net_text(&r.net)
    );
    Output::new(&r, text)
}

fn realizable(args: &RealizableArgs) -> Result<Output> {
    let s = load_samples(&args.samples)?;
    let r = check_realizable_single(&s, !args.no_bias)?;
    let text = match &r {
        Realizability::Fit { weights, bias } => format!("REALIZABLE w = {weights:?}, b = {bias}\n"),
        Realizability::NotRealizable => "NOT REALIZABLE\n".to_string(),
    };
    let mut out = Output::new(&r, text)?;
    out.ok = r.is_realizable();
    Ok(out)
}

fn learn(args: &LearnArgs, jobs: usize) -> Result<Output> {
    let mut cfg = LearnerConfig::new(args.k, args.epsilon, args.delta)
        .constant_scale(args.constant_scale)
        .parallelism(jobs);
    if let Some(beta) = args.beta {
        cfg = cfg.solver(SolverConfig::with_beta(beta));
    }
    let mut source: Box<dyn SampleSource> = if args.source.starts_with("synthetic:") {
        Box::new(parse_synthetic(&args.source)?)
    } else {
        Box::new(FileSource::new(load_samples(Path::new(&args.source))?))
    };
    let out = if args.reliable {
        learn_reliable(source.as_mut(), &cfg)?
    } else {
        learn_agnostic(source.as_mut(), &cfg)?
    };
    write_net(args.out.as_ref(), &out.net)?;
    let mut text = format!(
        "samples used {}\ntraining loss {:.6e}\nrademacher bound {:.6e}\ngeneralization bound {:.6e}\n",
        out.samples_used, out.training_loss, out.rademacher_bound, out.generalization_bound
    );
    if let Some(g) = out.gamma {
        text += &format!("bias shift gamma {g:.6e}\n");
    }
    text += &net_text(&out.net);
    Output::new(&out, text)
}

fn read_source<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn gen(args: &GenArgs, seed: u64) -> Result<Output> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = match args.problem {
        Problem::Setcover => {
            let sc: SetCoverInstance = match &args.input {
                Some(p) => read_source(p)?,
                None => random_setcover(&mut rng, 6, 6)?,
            };
            gen_setcover(&sc, args.with_bias)?
        }
        Problem::ThreeSat => {
            let f: CnfFormula = match &args.input {
                Some(p) => read_source(p)?,
                None => random_3cnf(&mut rng, 5, 8)?,
            };
            gen_3sat(&f, args.with_bias)?
        }
        Problem::Mmcs => {
            let c: MonotoneCircuit = match &args.input {
                Some(p) => read_source(p)?,
                None => {
                    let all = hand_built_circuits();
                    all[(seed % all.len() as u64) as usize].clone()
                }
            };
            gen_mmcs(&c, args.with_bias)?
        }
    };
    if let Some(p) = &args.out {
        inst.save(p)?;
    }
    let text = format!(
        "{} samples in {} dimensions for {} unit(s), predicted optimum {}\n",
        inst.samples.m(),
        inst.samples.n(),
        inst.units,
        inst.predicted_optimum
            .value()
            .map_or("unknown".to_string(), |v| format!("{v:.12e}"))
    );
    Output::new(&inst, text)
}

fn verify_cmd(args: &VerifyArgs) -> Result<Output> {
    let inst = ReductionInstance::load(&args.instance)?;
    let net = ReluNet::load(&args.net)?;
    let r = verify(&inst, &net, args.tol)?;
    let mut text = format!(
        "loss {:.12e}, predicted {}\n",
        r.loss,
        r.predicted.map_or("unknown".to_string(), |v| format!("{v:.12e}"))
    );
    text += if r.respects_lower_bound {
        "lower bound respected\n"
    } else {
        "loss is below the predicted optimum\n"
    };
    if let Some(h) = &r.height_report {
        text += &format!("height bound violations: {}\n", h.violations.len());
    }
    let ok = r.respects_lower_bound && r.height_report.as_ref().is_none_or(|h| h.is_clean());
    let mut out = Output::new(&r, text)?;
    out.ok = ok;
    Ok(out)
}

fn oracle(cmd: &OracleCommand, seed: u64) -> Result<Output> {
    match cmd {
        OracleCommand::Grid {
            shape,
            step,
            lo,
            hi,
            out,
        } => {
            let s = load_samples(&shape.samples)?;
            let a = fixed_alphas(shape.alphas.as_deref(), shape.k)?;
            let r = grid_search_train(&s, &a, (*lo, *hi), *step)?;
            write_net(out.as_ref(), &r.net)?;
            let text = format!(
                "grid error {:.12e} over {} points\n{}",
                r.error,
                r.points_evaluated,
                net_text(&r.net)
            );
            Output::new(&r, text)
        }
        OracleCommand::Probe {
            shape,
            trials,
            norm_constrained,
            out,
        } => {
            let s = load_samples(&shape.samples)?;
            let a = fixed_alphas(shape.alphas.as_deref(), shape.k)?;
            let mut opts = ProbeOptions::new(*trials, seed);
            opts.norm_constrained = *norm_constrained;
            let r = random_probe(&s, &a, &opts)?;
            write_net(out.as_ref(), &r.net)?;
            let text = format!(
                "probe error {:.12e} over {} trials (seed {})\n{}",
                r.error,
                r.trials,
                r.seed,
                net_text(&r.net)
            );
            Output::new(&r, text)
        }
    }
}

fn suite(args: &SuiteArgs, seed: u64) -> Result<Output> {
    let cfg = match (&args.config, &args.preset) {
        (Some(p), _) => SuiteConfig::load(p)?,
        (None, Some(name)) => SuiteConfig::from_preset(name, seed)?,
        (None, None) => bail!("give --config FILE or --preset NAME"),
    };
    let report = relu_exact::harness::run_suite(&cfg)?;
    if let Some(p) = &args.out {
        std::fs::write(p, report.to_json()? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    let mut out = Output::new(&report, report.to_text())?;
    out.ok = report.passed;
    Ok(out)
}

fn run(cli: &Cli) -> Result<(Output, Format)> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let (out, default) = match &cli.command {
        Command::Train(a) => (train(a, cli.jobs)?, Format::Json),
        Command::Realizable(a) => (realizable(a)?, Format::Text),
        Command::Learn(a) => (learn(a, cli.jobs)?, Format::Json),
        Command::Gen(a) => (gen(a, cli.seed)?, Format::Json),
        Command::Verify(a) => (verify_cmd(a)?, Format::Json),
        Command::Oracle(c) => (oracle(c, cli.seed)?, Format::Json),
        Command::Suite(a) => (suite(a, cli.seed)?, Format::Text),
    };
    Ok((out, cli.format.unwrap_or(default)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((out, format)) => {
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&out.json).expect("values serialize")),
                Format::Text => print!("{}", out.text),
            }
            if out.ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
