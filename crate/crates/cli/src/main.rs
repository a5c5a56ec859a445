use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lmnet::bounds::{bound_report, BoundInputs, BoundReport, BoundValues};
use lmnet::data::{normalize, subsample_fraction, synth_separable, MNIST_MEAN, MNIST_STD, SWEEP_FRACTIONS};
use lmnet::gradcheck::standard_suite;
use lmnet::harness::{
    run_sweep, train_on, write_report, Architecture, DataPaths, Method, Mnist, ReportFormat, RunConfig, SweepSpec, DATA_DIR_ENV,
};
use lmnet::model::Model;
use lmnet::verify::{loo_suite, novikoff_suite};

#[derive(Parser)]
#[command(name = "lmnet", version, about = "Large-margin feature-map training and margin bound diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and report test accuracy and bounds.
    Train(TrainArgs),
    /// Run a method x fraction x seed grid and write aggregate tables.
    Sweep(SweepArgs),
    /// Evaluate bound formulas from raw quantities or from a checkpoint.
    Bounds(BoundsArgs),
    /// Compare analytic gradients against central differences.
    CheckGrad(CheckGradArgs),
    /// Run the randomized Novikoff and leave-one-out property suites.
    VerifyBounds(VerifyArgs),
    /// Sample a linearly separable point set as JSON.
    GenSynth(SynthArgs),
}

#[derive(Args, Clone)]
struct RunFlags {
    /// JSON file with a run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with the MNIST IDX files.
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    /// `lenet` or `mlp:W1,W2,...`.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    tanh: bool,
}

impl RunFlags {
    fn base_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data_dir {
            cfg.data = Some(DataPaths::in_dir(d));
        }
        if let Some(a) = &self.arch {
            cfg.architecture = parse_arch(a)?;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.optimizer.lr = lr;
        }
        if let Some(wd) = self.weight_decay {
            cfg.optimizer.weight_decay = wd;
        }
        if self.tanh {
            cfg.activation = lmnet::model::Activation::Tanh;
        }
        Ok(cfg)
    }
}

fn parse_arch(s: &str) -> Result<Architecture> {
    if s == "lenet" {
        return Ok(Architecture::Lenet);
    }
    let Some(widths) = s.strip_prefix("mlp:") else { bail!("architecture must be `lenet` or `mlp:W1,W2,...`, got {s:?}") };
    let hidden = widths.split(',').map(|w| w.trim().parse::<usize>()).collect::<Result<Vec<_>, _>>()?;
    Ok(Architecture::Mlp { hidden })
}

fn load_data(cfg: &RunConfig) -> Result<Mnist> {
    let paths = cfg.data.clone().unwrap_or_else(DataPaths::from_env);
    Mnist::load(&paths).with_context(|| format!("loading MNIST from {}", paths.train_images.parent().unwrap_or(Path::new(".")).display()))
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Method label, e.g. `mh+aug+lm-0.001+do`.
    #[arg(long)]
    method: Option<String>,
    /// Training fraction in percent.
    #[arg(long)]
    fraction: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the trained model checkpoint here.
    #[arg(long)]
    save: Option<PathBuf>,
    /// Write the full run record as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated method labels, or `table` for the full 16-row grid.
    #[arg(long, default_value = "table")]
    methods: String,
    /// Weight used when `--methods table`.
    #[arg(long, default_value_t = 0.001)]
    lm_weight: f64,
    /// Comma-separated percentages.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    markdown: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct BoundsArgs {
    /// Model checkpoint; bounds are then estimated on its training subset.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    fraction: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    l: Option<usize>,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    remp: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m_errors: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct CheckGradArgs {
    #[arg(long, default_value_t = 100)]
    points: usize,
    /// Random coordinates probed per LeNet parameter point.
    #[arg(long, default_value_t = 20)]
    coords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long)]
    rho0: f64,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::CheckGrad(a) => cmd_check_grad(a),
        Command::VerifyBounds(a) => cmd_verify(a),
        Command::GenSynth(a) => cmd_synth(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<bool> {
    let mut cfg = a.run.base_config()?;
    if let Some(m) = &a.method {
        cfg.method = m.parse()?;
    }
    if let Some(f) = a.fraction {
        cfg.fraction = f;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let data = load_data(&cfg)?;
    let out = train_on(&cfg, &data.train, &data.test)?;
    println!(
        "{} fraction={}% seed={} epochs={} steps={} test_accuracy={:.2}% reject_rate={:.4} wall={:.1}s",
        cfg.method, cfg.fraction, cfg.seed, out.epochs, out.steps, out.test_accuracy, out.reject_rate, out.wall_seconds
    );
    print_report(&out.bounds);
    if let (Some(p), Some(m)) = (&a.save, &out.model) {
        m.save(p)?;
    }
    if let Some(p) = &a.out {
        std::fs::write(p, serde_json::to_string_pretty(&out)?)?;
    }
    Ok(true)
}

fn cmd_sweep(a: SweepArgs) -> Result<bool> {
    let base = a.run.base_config()?;
    let methods: Vec<Method> = if a.methods == "table" {
        Method::table_grid(a.lm_weight)
    } else {
        a.methods.split(',').map(|m| m.trim().parse()).collect::<Result<_, _>>()?
    };
    let spec = SweepSpec {
        base: base.clone(),
        methods,
        fractions: a.fractions.unwrap_or_else(|| SWEEP_FRACTIONS.to_vec()),
        seeds: a.seeds,
        jobs: a.jobs,
    };
    let data = load_data(&base)?;
    let progress = |m: &Method, f: u32, r: &lmnet::harness::RunRecord| match (&r.test_accuracy, &r.error) {
        (Some(acc), _) => eprintln!("{m} {f}% seed {}: {acc:.2}% ({:.1}s)", r.seed, r.wall_seconds),
        (None, e) => eprintln!("{m} {f}% seed {}: FAILED {}", r.seed, e.as_deref().unwrap_or("")),
    };
    let result = run_sweep(&spec, &data.train, &data.test, Some(&progress))?;
    print!("{}", lmnet::harness::to_markdown(&result));
    for (path, fmt) in [(&a.csv, ReportFormat::Csv), (&a.markdown, ReportFormat::Markdown), (&a.json, ReportFormat::Json)] {
        if let Some(p) = path {
            write_report(&result, fmt, p).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    let failures = result.failures();
    if failures > 0 {
        eprintln!("{failures} run(s) failed");
    }
    Ok(failures == 0)
}

fn cmd_bounds(a: BoundsArgs) -> Result<bool> {
    if let Some(path) = &a.model {
        let model = Model::load(path)?;
        let paths = a.data_dir.as_deref().map(DataPaths::in_dir).unwrap_or_else(DataPaths::from_env);
        let data = Mnist::load(&paths)?;
        let subset = subsample_fraction(&data.train, a.fraction, a.seed)?;
        let train = normalize(&subset, MNIST_MEAN, MNIST_STD)?;
        let mut cfg = lmnet::bounds::ReportConfig::default();
        if let Some(eta) = a.eta {
            cfg.eta = eta;
        }
        if let Some(b) = a.b {
            cfg.b = b;
        }
        let report = bound_report(&model, &train, &cfg)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        print_report(&report);
        return Ok(true);
    }
    let inputs = BoundInputs {
        l: a.l,
        h: a.h,
        eta: a.eta,
        b: a.b,
        remp: a.remp,
        d: a.d,
        rho: a.rho,
        delta: a.delta,
        r: a.r,
        n: a.n,
        m_errors: a.m_errors,
        k: a.k,
    };
    let values = inputs.evaluate()?;
    println!("{}", serde_json::to_string_pretty(&values)?);
    print_values(&values);
    Ok(true)
}

fn print_values(v: &BoundValues) {
    let rows: [(&str, Option<String>); 8] = [
        ("h bound", v.h_bound.map(|x| x.to_string())),
        ("epsilon(l)", v.epsilon_l.map(|x| format!("{x:.6}"))),
        ("risk bound", v.risk_bound.map(|x| format!("{x:.6}"))),
        ("P_error bound", v.p_error.map(|x| format!("{x:.6}"))),
        ("Novikoff M", v.novikoff_m.map(|x| x.to_string())),
        ("ER (support vectors)", v.er.map(|e| format!("{:.6}", e.er_sv))),
        ("ER (radius/margin)", v.er.map(|e| format!("{:.6}", e.er_novikoff))),
        ("ER (min)", v.er.map(|e| format!("{:.6}", e.er_min))),
    ];
    for (name, val) in rows {
        if let Some(val) = val {
            eprintln!("{name:>22}  {val}");
        }
    }
}

fn print_report(r: &BoundReport) {
    eprintln!("l={} m={} D_l={:.4} D_l^2={:.4} rho_min={:.4} D^2|w|^2={:.3}", r.l, r.feature_dim, r.d_l, r.d_l * r.d_l, r.rho_min, r.dl2w2);
    eprintln!(
        "remp={:.4} margin_errors={} h<={} eps={:.4} risk<={:.4} P_error<={:.4} M={} K={} ER_min={:.4}",
        r.remp, r.margin_errors, r.h_bound, r.epsilon_l, r.risk_bound, r.p_error, r.novikoff_m, r.k_hat, r.er_min
    );
    eprintln!("{:>5} {:>9} {:>10} {:>5} {:>8} {:>9}", "class", "rho", "D^2|w|^2", "K", "h", "P_error");
    for c in &r.classes {
        eprintln!("{:>5} {:>9.4} {:>10.3} {:>5} {:>8} {:>9.4}", c.class, c.rho, c.dl2w2, c.k_hat, c.h_bound, c.p_error);
    }
}

fn cmd_check_grad(a: CheckGradArgs) -> Result<bool> {
    let reports = standard_suite(a.points, a.coords, a.seed)?;
    let mut ok = true;
    for r in &reports {
        ok &= r.passed();
        println!(
            "{} {:<18} checked={:<6} skipped={:<4} max_rel_err={:.3e} tol={:.0e}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.checked,
            r.skipped,
            r.max_rel_err,
            r.tolerance
        );
    }
    Ok(ok)
}

fn cmd_verify(a: VerifyArgs) -> Result<bool> {
    let nov = novikoff_suite(a.instances, a.seed)?;
    let loo = loo_suite(a.instances, a.seed)?;
    let n = a.instances;
    let rows = [
        ("novikoff corrections <= floor(D^2/rho^2)", nov.passed()),
        ("loo errors <= |support set|", loo.loo_passed()),
        ("oracle unique under permutation", loo.unique_passed()),
    ];
    for (name, passed) in rows {
        println!("{} {name}: {passed}/{n}", if passed == n { "PASS" } else { "FAIL" });
    }
    Ok(rows.iter().all(|r| r.1 == n))
}

fn cmd_synth(a: SynthArgs) -> Result<bool> {
    let data = synth_separable(a.n, a.dim, a.rho0, a.radius, a.seed)?;
    let text = serde_json::to_string_pretty(&data)?;
    match &a.out {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(true)
}
