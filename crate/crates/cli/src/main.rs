//! `fferm`: train, evaluate, sweep and shift experiments for f-divergence
//! fair ERM. Every output CSV carries a `manifest` column with the hash of
//! the resolved configuration, so reruns with the same settings write
//! identical bytes.

mod settings;

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use fferm::data::{load_csv_raw, split, Standardizer};
use fferm::experiment::{
    default_lambda_grid, domain_experiment, flip_experiment, robust_sweep, sweep, write_robust_sweep_csv,
    write_shift_csv, write_sweep_csv, ShiftConfig, ShiftMethod, DRO_DELTA_GRID, DRO_LAMBDA_GRID,
};
use fferm::metrics;
use fferm::robust::{robust_train_linf, robust_train_smallshift, PNorm};
use fferm::trainer::{fmt_num, train, Reduction};
use fferm::{
    Architecture, CsvSchema, Dataset, DivergenceSpec, FairnessNotion, FermError, ModelParams, RobustConfig,
    RobustMode, TrainerConfig,
};

use settings::Settings;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_UNREACHABLE: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "fferm", version, about = "Fair ERM with f-divergence regularizers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Train one model and write report.csv, model.bin and the manifest.
    Train,
    /// Evaluate a saved model on a dataset and write metrics.csv.
    Evaluate,
    /// Train over a λ grid and write tradeoff curves.
    Sweep,
    /// Compare ERM, f-FERM and the robust modes under distribution shift.
    Shift,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Shift => "shift",
        }
    }
}

/// Every flag is optional here; defaults, config files and manifests are
/// layered underneath in [`Settings`].
#[derive(Args, Debug, Default)]
struct Flags {
    /// Flat key=value configuration file (flags take precedence).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Re-run the configuration recorded in a manifest.
    #[arg(long, global = true)]
    from_manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<String>,
    /// Held-out CSV; when absent the data is split by --test-fraction.
    #[arg(long, global = true)]
    test_data: Option<String>,
    #[arg(long, global = true)]
    test_fraction: Option<String>,
    /// Comma-separated feature columns.
    #[arg(long, global = true)]
    features: Option<String>,
    #[arg(long, global = true)]
    label: Option<String>,
    /// Comma-separated sensitive columns, combined by cross product.
    #[arg(long, global = true)]
    groups: Option<String>,
    /// chi2 | kl | reverse-kl | tv | js | hellinger | alpha:<a>; comma-separated for sweeps.
    #[arg(long, global = true)]
    div: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<String>,
    #[arg(long, global = true)]
    eta_theta: Option<String>,
    #[arg(long, global = true)]
    eta_alpha: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    warmup: Option<String>,
    /// Positive integer or "full".
    #[arg(long, global = true)]
    batch_size: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// dp | eo | eodds
    #[arg(long, global = true)]
    notion: Option<String>,
    /// none | gradnorm | linf
    #[arg(long, global = true)]
    robust: Option<String>,
    #[arg(long, global = true)]
    delta: Option<String>,
    /// 2 | inf
    #[arg(long, global = true)]
    p_norm: Option<String>,
    /// Use the squared gradient penalty with this weight.
    #[arg(long, global = true)]
    epsilon: Option<String>,
    #[arg(long, global = true)]
    refresh_every: Option<String>,
    /// linear | hidden:<width>
    #[arg(long, global = true)]
    arch: Option<String>,
    /// sum | mean
    #[arg(long, global = true)]
    reduction: Option<String>,
    #[arg(long, global = true)]
    out_dir: Option<String>,
    /// Model checkpoint for evaluate.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Number of log-spaced λ values in the default sweep grid.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Explicit comma-separated λ grid.
    #[arg(long, global = true)]
    lambdas: Option<String>,
    /// Comma-separated δ grid for robust sweeps.
    #[arg(long, global = true)]
    deltas: Option<String>,
    #[arg(long, global = true)]
    flip_fractions: Option<String>,
    #[arg(long, global = true)]
    train_data: Option<String>,
    /// Evaluation domain CSV; repeatable.
    #[arg(long, global = true)]
    eval_data: Vec<String>,
    #[arg(long, global = true)]
    target_acc: Option<String>,
    #[arg(long, global = true)]
    tolerance: Option<String>,
    /// Comma-separated subset of erm, ferm, dro-gradnorm, dro-linf.
    #[arg(long, global = true)]
    methods: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, Option<String>)> {
        let eval = (!self.eval_data.is_empty()).then(|| self.eval_data.join(","));
        vec![
            ("data", self.data.clone()),
            ("test-data", self.test_data.clone()),
            ("test-fraction", self.test_fraction.clone()),
            ("features", self.features.clone()),
            ("label", self.label.clone()),
            ("groups", self.groups.clone()),
            ("div", self.div.clone()),
            ("lambda", self.lambda.clone()),
            ("eta-theta", self.eta_theta.clone()),
            ("eta-alpha", self.eta_alpha.clone()),
            ("epochs", self.epochs.clone()),
            ("warmup", self.warmup.clone()),
            ("batch-size", self.batch_size.clone()),
            ("seed", self.seed.clone()),
            ("notion", self.notion.clone()),
            ("robust", self.robust.clone()),
            ("delta", self.delta.clone()),
            ("p-norm", self.p_norm.clone()),
            ("epsilon", self.epsilon.clone()),
            ("refresh-every", self.refresh_every.clone()),
            ("arch", self.arch.clone()),
            ("reduction", self.reduction.clone()),
            ("out-dir", self.out_dir.clone()),
            ("model", self.model.clone()),
            ("grid", self.grid.clone()),
            ("lambdas", self.lambdas.clone()),
            ("deltas", self.deltas.clone()),
            ("flip-fractions", self.flip_fractions.clone()),
            ("train-data", self.train_data.clone()),
            ("eval-data", eval),
            ("target-acc", self.target_acc.clone()),
            ("tolerance", self.tolerance.clone()),
            ("methods", self.methods.clone()),
        ]
    }
}

fn resolve(flags: &Flags) -> Result<Settings, FermError> {
    let mut s = Settings::with_defaults();
    if let Some(path) = &flags.config {
        s.merge_file(path)?;
    }
    if let Some(path) = &flags.from_manifest {
        s.merge_file(path)?;
    }
    for (k, v) in flags.pairs() {
        if let Some(v) = v {
            s.set(k, v);
        }
    }
    Ok(s)
}

fn exit_code(err: &FermError) -> u8 {
    match err {
        FermError::NonFiniteUpdate { .. }
        | FermError::AbsoluteContinuityViolation { .. }
        | FermError::OutOfDualDomain { .. }
        | FermError::NonPositiveArgument(_) => EXIT_NUMERIC,
        FermError::TargetUnreachable { .. } => EXIT_UNREACHABLE,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command, &cli.flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command, flags: &Flags) -> Result<(), FermError> {
    let settings = resolve(flags)?;
    let run = Run::start(command, settings)?;
    match command {
        Command::Train => cmd_train(run),
        Command::Evaluate => cmd_evaluate(run),
        Command::Sweep => cmd_sweep(run),
        Command::Shift => cmd_shift(run),
    }
}

/// A command invocation: resolved settings, output directory and the
/// bookkeeping that ends up in the manifest.
struct Run {
    command: Command,
    settings: Settings,
    out_dir: PathBuf,
    hash: String,
    started: u64,
    outputs: Vec<String>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn version_string() -> String {
    match option_env!("FFERM_GIT_DESCRIBE") {
        Some(describe) => describe.to_string(),
        None => format!("v{}", env!("CARGO_PKG_VERSION")),
    }
}

impl Run {
    fn start(command: Command, settings: Settings) -> Result<Self, FermError> {
        let out_dir = PathBuf::from(settings.require("out-dir")?);
        let hash = settings.config_hash(command.name());
        Ok(Run {
            command,
            settings,
            out_dir,
            hash,
            started: unix_now(),
            outputs: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, FermError> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn finish(mut self) -> Result<(), FermError> {
        let mut text = format!(
            "# fferm run manifest\ncommand={}\nversion={}\nconfig-hash={}\n",
            self.command.name(),
            version_string(),
            self.hash
        );
        text.push_str(&self.settings.render(true));
        text.push_str(&format!(
            "started={}\nfinished={}\noutputs={}\n",
            self.started,
            unix_now(),
            self.outputs.join(",")
        ));
        let mut out = self.create("manifest.txt")?;
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(())
    }
}

fn schema(s: &Settings) -> Result<CsvSchema, FermError> {
    let feature_cols = s.list("features");
    if feature_cols.is_empty() {
        return Err(FermError::Config("missing required setting --features".into()));
    }
    let group_cols = s.list("groups");
    if group_cols.is_empty() {
        return Err(FermError::Config("missing required setting --groups".into()));
    }
    Ok(CsvSchema {
        feature_cols,
        label_col: s.require("label")?.to_string(),
        group_cols,
        label_values: None,
    })
}

fn trainer_config(s: &Settings, divergence: DivergenceSpec) -> Result<TrainerConfig, FermError> {
    let batch_size = match s.require("batch-size")? {
        "full" => None,
        _ => Some(s.parse::<usize>("batch-size")?),
    };
    Ok(TrainerConfig {
        divergence,
        lambda: s.parse("lambda")?,
        eta_theta: s.parse("eta-theta")?,
        eta_alpha: s.parse("eta-alpha")?,
        epochs: s.parse("epochs")?,
        warmup_epochs: s.parse("warmup")?,
        batch_size,
        seed: s.parse("seed")?,
        notion: s.parse::<FairnessNotion>("notion")?,
        architecture: s.parse::<Architecture>("arch")?,
        reduction: s.parse::<Reduction>("reduction")?,
    })
}

fn robust_mode(s: &Settings) -> Result<Option<RobustMode>, FermError> {
    match s.require("robust")? {
        "none" => Ok(None),
        _ => s.parse::<RobustMode>("robust").map(Some),
    }
}

fn robust_config(s: &Settings, mode: RobustMode, trainer: TrainerConfig) -> Result<RobustConfig, FermError> {
    let epsilon: Option<f64> = s.parse_opt("epsilon")?;
    Ok(RobustConfig {
        mode,
        delta: s.parse("delta")?,
        p_norm: s.parse::<PNorm>("p-norm")?,
        squared_penalty: epsilon.is_some(),
        epsilon_penalty: epsilon.unwrap_or(0.0),
        refresh_every_steps: s.parse_opt("refresh-every")?,
        trainer,
    })
}

fn divergences(s: &Settings) -> Result<Vec<DivergenceSpec>, FermError> {
    let divs: Vec<DivergenceSpec> = s.parse_list("div")?;
    if divs.is_empty() {
        return Err(FermError::Config("missing required setting --div".into()));
    }
    for d in &divs {
        d.validate().map_err(|e| FermError::Config(format!("invalid value for --div: {e}")))?;
    }
    Ok(divs)
}

fn single_divergence(s: &Settings) -> Result<DivergenceSpec, FermError> {
    match divergences(s)?.as_slice() {
        [d] => Ok(*d),
        _ => Err(FermError::Config("--div takes a single divergence for this command".into())),
    }
}

/// Training and held-out data, standardized with training statistics.
struct Prepared {
    train: Dataset,
    test: Dataset,
    standardizer: Standardizer,
}

fn prepare(s: &Settings, data_key: &str) -> Result<Prepared, FermError> {
    let schema = schema(s)?;
    let raw = load_csv_raw(s.require(data_key)?, &schema)?;
    let (train_raw, test_raw) = match s.get("test-data").filter(|v| !v.is_empty()) {
        Some(path) => (raw, load_csv_raw(path, &schema)?),
        None => split(&raw, s.parse("test-fraction")?, s.parse("seed")?)?,
    };
    let standardizer = Standardizer::fit(&train_raw);
    Ok(Prepared {
        train: standardizer.apply(&train_raw),
        test: standardizer.apply(&test_raw),
        standardizer,
    })
}

fn write_standardizer(st: &Standardizer, mut out: impl Write) -> Result<(), FermError> {
    writeln!(out, "mean,std")?;
    for (m, sd) in st.mean.iter().zip(&st.std) {
        writeln!(out, "{},{}", fmt_num(*m), fmt_num(*sd))?;
    }
    Ok(())
}

fn read_standardizer(path: &Path) -> Result<Standardizer, FermError> {
    let file = File::open(path).map_err(|e| FermError::Io(format!("{}: {e}", path.display())))?;
    let mut mean = Vec::new();
    let mut std = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate().skip(1) {
        let line = line?;
        let bad = || FermError::Config(format!("{}:{}: malformed standardizer row", path.display(), i + 1));
        let (m, sd) = line.split_once(',').ok_or_else(bad)?;
        mean.push(m.parse().map_err(|_| bad())?);
        std.push(sd.parse().map_err(|_| bad())?);
    }
    Ok(Standardizer { mean, std })
}

fn cmd_train(mut run: Run) -> Result<(), FermError> {
    let s = run.settings.clone();
    let divergence = single_divergence(&s)?;
    let trainer = trainer_config(&s, divergence)?;
    let data = prepare(&s, "data")?;
    let report = match robust_mode(&s)? {
        None => train(&data.train, Some(&data.test), &trainer)?,
        Some(mode) => {
            let cfg = robust_config(&s, mode, trainer)?;
            match mode {
                RobustMode::GradNorm => robust_train_smallshift(&data.train, Some(&data.test), &cfg)?,
                RobustMode::LinfClamp => robust_train_linf(&data.train, Some(&data.test), &cfg)?,
            }
        }
    };
    let last = report.last();
    log::info!(
        "final epoch: acc_train {:.4} dpv_train {:.4} acc_test {:.4} dpv_test {:.4}",
        last.acc_train,
        last.dpv_train,
        last.acc_test,
        last.dpv_test
    );
    let hash = run.hash.clone();
    let mut out = run.create("report.csv")?;
    report.write_csv(&mut out, Some(&hash))?;
    out.flush()?;
    let mut out = run.create("model.bin")?;
    report.params.write_checkpoint(&mut out)?;
    out.flush()?;
    let mut out = run.create("standardizer.csv")?;
    write_standardizer(&data.standardizer, &mut out)?;
    out.flush()?;
    run.finish()
}

fn cmd_evaluate(mut run: Run) -> Result<(), FermError> {
    let s = run.settings.clone();
    let model_path = PathBuf::from(s.require("model")?);
    let file = File::open(&model_path).map_err(|e| FermError::Io(format!("{}: {e}", model_path.display())))?;
    let params = ModelParams::read_checkpoint(BufReader::new(file))?;
    let raw = load_csv_raw(s.require("data")?, &schema(&s)?)?;
    let st_path = model_path.with_file_name("standardizer.csv");
    let data = if st_path.exists() {
        read_standardizer(&st_path)?.apply(&raw)
    } else {
        log::warn!("no standardizer.csv next to the model; using raw features");
        raw
    };
    let report = metrics::evaluate(&params, &data, &single_divergence(&s)?)?;
    let hash = run.hash.clone();
    let mut out = run.create("metrics.csv")?;
    let rates: Vec<String> = (0..report.group_positive_rates.len())
        .map(|k| format!("positive_rate_{k}"))
        .collect();
    writeln!(
        out,
        "accuracy,dpv,eov,eoddsv,divergence_value,{},manifest",
        rates.join(",")
    )?;
    let mut row: Vec<String> = [
        report.accuracy,
        report.dpv,
        report.eov,
        report.eoddsv,
        report.divergence_value,
    ]
    .iter()
    .chain(&report.group_positive_rates)
    .map(|v| fmt_num(*v))
    .collect();
    row.push(hash);
    writeln!(out, "{}", row.join(","))?;
    out.flush()?;
    run.finish()
}

fn token_for_file(spec: &DivergenceSpec) -> String {
    spec.to_string().replace([':', '.'], "_")
}

fn cmd_sweep(mut run: Run) -> Result<(), FermError> {
    let s = run.settings.clone();
    let divs = divergences(&s)?;
    let data = prepare(&s, "data")?;
    let hash = run.hash.clone();
    let explicit: Vec<f64> = s.parse_list("lambdas")?;
    let mode = robust_mode(&s)?;
    for spec in &divs {
        let trainer = trainer_config(&s, *spec)?;
        let name = if divs.len() == 1 {
            "tradeoff.csv".to_string()
        } else {
            format!("tradeoff_{}.csv", token_for_file(spec))
        };
        match mode {
            None => {
                let grid = if explicit.is_empty() {
                    default_lambda_grid(spec, s.parse_opt("grid")?.unwrap_or(10))
                } else {
                    explicit.clone()
                };
                let points = sweep(&data.train, Some(&data.test), &trainer, &grid)?;
                let mut out = run.create(&name)?;
                write_sweep_csv(&points, &mut out, Some(&hash))?;
                out.flush()?;
            }
            Some(mode) => {
                let cfg = robust_config(&s, mode, trainer)?;
                let lambdas = if explicit.is_empty() {
                    DRO_LAMBDA_GRID.to_vec()
                } else {
                    explicit.clone()
                };
                let mut deltas: Vec<f64> = s.parse_list("deltas")?;
                if deltas.is_empty() {
                    deltas = DRO_DELTA_GRID.to_vec();
                }
                let rows = robust_sweep(&data.train, Some(&data.test), &cfg, &lambdas, &deltas)?;
                let mut out = run.create(&name)?;
                write_robust_sweep_csv(&rows, &mut out, Some(&hash))?;
                out.flush()?;
            }
        }
    }
    run.finish()
}

fn cmd_shift(mut run: Run) -> Result<(), FermError> {
    let s = run.settings.clone();
    let divergence = single_divergence(&s)?;
    let mut cfg = ShiftConfig::new(trainer_config(&s, divergence)?);
    cfg.delta = s.parse("delta")?;
    cfg.p_norm = s.parse("p-norm")?;
    cfg.target_accuracy = s.parse("target-acc")?;
    if let Some(tol) = s.parse_opt("tolerance")? {
        cfg.tolerance = tol;
    }
    let methods: Vec<ShiftMethod> = s.parse_list("methods")?;
    if !methods.is_empty() {
        cfg.methods = methods;
    }
    let robust = cfg.methods.iter().any(|m| matches!(m, ShiftMethod::DroGradNorm | ShiftMethod::DroLinf));
    if robust && cfg.delta <= 0.0 {
        return Err(FermError::Config("robust shift methods need --delta > 0".into()));
    }
    let fractions: Vec<f64> = s.parse_list("flip-fractions")?;
    let cross_domain = s.get("train-data").is_some_and(|v| !v.is_empty());
    let rows = if cross_domain {
        let evals = s.list("eval-data");
        if evals.is_empty() {
            return Err(FermError::Config("cross-domain mode needs at least one --eval-data".into()));
        }
        let schema = schema(&s)?;
        let raw = load_csv_raw(s.require("train-data")?, &schema)?;
        let st = Standardizer::fit(&raw);
        let evals = evals
            .iter()
            .map(|path| {
                let name = Path::new(path)
                    .file_stem()
                    .map_or_else(|| path.clone(), |n| n.to_string_lossy().into_owned());
                load_csv_raw(path, &schema).map(|d| (name, st.apply(&d)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        domain_experiment(&cfg, &st.apply(&raw), &evals)?
    } else {
        if fractions.is_empty() {
            return Err(FermError::Config(
                "shift needs --flip-fractions or --train-data with --eval-data".into(),
            ));
        }
        let data = prepare(&s, "data")?;
        flip_experiment(&cfg, &data.train, &data.test, &fractions)?
    };
    let hash = run.hash.clone();
    let mut out = run.create("shift.csv")?;
    write_shift_csv(&rows, &mut out, Some(&hash))?;
    out.flush()?;
    run.finish()
}
