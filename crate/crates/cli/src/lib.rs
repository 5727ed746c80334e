//! Subcommands behind the `ccgvae` binary.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ccgvae::config::{ConfigError, RunConfig};
use ccgvae::dataset::Dataset;
use ccgvae::metrics::{
    generation_report, reconstruction_rate, EvaluationReport, ReconstructionProtocol, SuccessCriterion,
    TrainingIndex, DEFAULT_WIDTH,
};
use ccgvae::model::{Model, ModelError};
use ccgvae::training::{examples_from_dataset, optimize_latent, train, Direction, TrainingError};
use ccgvae::util::stream_rng;
use ccgvae::{parse_smiles, write_smiles, AtomVocabulary, HistogramDistribution};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Parser)]
#[command(name = "ccgvae", version, about = "Histogram-conditioned graph VAE for molecules")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a dataset, split it and store the training histogram distribution.
    Preprocess(PreprocessArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Sample molecules from the prior.
    Generate(GenerateArgs),
    /// Reconstruction rate over a dataset.
    Reconstruct(ReconstructArgs),
    /// Move a molecule's latent code along the property gradient.
    Optimize(OptimizeArgs),
    /// Reconstruction and generation statistics.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Vocabulary file; the QM9 atoms when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epoch log; `<out>.log` when omitted.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

/// Checkpoint plus optional settings it must agree with.
#[derive(Debug, Args)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Refuse to run if this configuration disagrees with the checkpoint.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Refuse to run if this vocabulary disagrees with the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub model: CheckpointArgs,
    #[arg(short = 'n', long = "num", default_value_t = 100)]
    pub count: usize,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    #[command(flatten)]
    pub model: CheckpointArgs,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub encodings: usize,
    #[arg(long, default_value_t = 5000)]
    pub cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Up,
    Down,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub model: CheckpointArgs,
    #[arg(long)]
    pub smiles: String,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = DirectionArg::Up)]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 0.05)]
    pub step_size: f64,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub model: CheckpointArgs,
    #[arg(long)]
    pub train_data: PathBuf,
    /// Reconstruction is measured on this set when given.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, default_value_t = 20000)]
    pub samples: usize,
    #[arg(long, default_value_t = 20)]
    pub encodings: usize,
    #[arg(long, default_value_t = 5000)]
    pub cap: usize,
    /// Print the summary table instead of key=value lines.
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Incompatible(String),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Incompatible(m) => CliError::Incompatible(m),
            other => CliError::Model(other),
        }
    }
}

impl CliError {
    /// Stable category printed with every diagnostic.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Incompatible(_) => "incompatible",
            CliError::Model(_) => "model",
            CliError::Training(_) => "training",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

fn load_vocab(path: Option<&Path>) -> Result<AtomVocabulary, CliError> {
    match path {
        None => Ok(AtomVocabulary::qm9()),
        Some(p) => AtomVocabulary::load(p).map_err(|e| CliError::Io {
            path: p.to_path_buf(),
            message: e.to_string(),
        }),
    }
}

fn load_dataset(path: &Path, vocab: &AtomVocabulary) -> Result<Dataset, CliError> {
    let data = Dataset::load(path, vocab).map_err(io_err(path))?;
    for f in &data.failures {
        log::warn!("{}:{}: {} ({})", path.display(), f.line, f.reason, f.text);
    }
    if data.is_empty() {
        return Err(CliError::Data(format!("{}: no molecule could be parsed", path.display())));
    }
    Ok(data)
}

/// Loads a checkpoint and refuses it if the given configuration or
/// vocabulary disagree, before any computation.
pub fn load_checked(args: &CheckpointArgs) -> Result<Model, CliError> {
    if !args.ckpt.exists() {
        return Err(CliError::Io {
            path: args.ckpt.clone(),
            message: "checkpoint not found".into(),
        });
    }
    let model = Model::load(&args.ckpt)?;
    let mut vocab_path = args.vocab.clone();
    if let Some(cfg_path) = &args.config {
        let cfg = RunConfig::load(cfg_path)?;
        if cfg.model != model.config {
            let diffs: Vec<String> = cfg
                .model
                .entries()
                .iter()
                .zip(model.config.entries())
                .filter(|(a, b)| a.1 != b.1)
                .map(|(a, b)| format!("{} config={} checkpoint={}", a.0, a.1, b.1))
                .collect();
            return Err(CliError::Incompatible(format!(
                "configuration disagrees with checkpoint: {}",
                diffs.join(", ")
            )));
        }
        vocab_path = vocab_path.or(cfg.vocab);
    }
    if let Some(p) = vocab_path {
        model.check_vocabulary(&load_vocab(Some(&p))?)?;
    }
    Ok(model)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Preprocess(a) => preprocess(&a, seed.unwrap_or(0), out),
        Command::Train(a) => train_command(&a, seed, out),
        Command::Generate(a) => generate(&a, seed.unwrap_or(0), out),
        Command::Reconstruct(a) => reconstruct(&a, seed.unwrap_or(0), out),
        Command::Optimize(a) => optimize(&a, seed.unwrap_or(0), out),
        Command::Evaluate(a) => evaluate(&a, seed.unwrap_or(0), out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(io_err(Path::new("<stdout>")))
}

fn dataset_text(data: &Dataset, vocab: &AtomVocabulary, indices: &[usize]) -> Result<String, CliError> {
    let mut s = String::new();
    for &i in indices {
        let r = &data.records[i];
        let smiles = write_smiles(&r.graph, vocab).map_err(|e| CliError::Data(format!("line {}: {e}", r.line)))?;
        match r.property {
            Some(p) => writeln!(s, "{smiles}\t{p}"),
            None => writeln!(s, "{smiles}"),
        }
        .expect("writing to a String");
    }
    Ok(s)
}

pub fn preprocess(a: &PreprocessArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&a.test_fraction) {
        return Err(CliError::Data("--test-fraction must lie in [0, 1)".into()));
    }
    let t0 = Instant::now();
    let vocab = load_vocab(a.vocab.as_deref())?;
    let data = load_dataset(&a.data, &vocab)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let n_test = ((n as f64 * a.test_fraction).round() as usize).min(n - 1);
    let mut test: Vec<usize> = order[..n_test].to_vec();
    let mut train: Vec<usize> = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();

    let nu = vocab.max_valence();
    let hist = HistogramDistribution::from_corpus(train.iter().map(|&i| &data.records[i].graph), nu)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut manifest = format!("# seed={seed} test_fraction={} source={}\n", a.test_fraction, a.data.display());
    let mut is_test = vec![false; n];
    for &i in &test {
        is_test[i] = true;
    }
    for (i, r) in data.records.iter().enumerate() {
        writeln!(manifest, "{}\t{}", r.line, if is_test[i] { "test" } else { "train" }).expect("writing to a String");
    }

    write_file(&a.out.join("corpus.smi"), &dataset_text(&data, &vocab, &(0..n).collect::<Vec<_>>())?)?;
    write_file(&a.out.join("train.smi"), &dataset_text(&data, &vocab, &train)?)?;
    write_file(&a.out.join("test.smi"), &dataset_text(&data, &vocab, &test)?)?;
    write_file(&a.out.join("split.txt"), &manifest)?;
    write_file(&a.out.join("histograms.txt"), &hist.to_text())?;
    write_file(&a.out.join("vocab.txt"), &vocab.to_string())?;
    let conf = format!("vocab=vocab.txt\ntrain=train.smi\ntest=test.smi\nseed={seed}\n");
    write_file(&a.out.join("run.conf"), &conf)?;

    emit(
        out,
        &format!(
            "records={n}\nfailures={}\ntrain={}\ntest={}\nhistograms={}\nseconds={:.2}\n",
            data.failures.len(),
            train.len(),
            test.len(),
            hist.len(),
            t0.elapsed().as_secs_f64()
        ),
    )
}

/// Config file, then `--set` pairs, then the dedicated flags; later wins.
pub fn resolve_config(a: &TrainArgs, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Data(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k, v)?;
    }
    if let Some(p) = &a.train {
        cfg.train = Some(p.clone());
    }
    if let Some(p) = &a.vocab {
        cfg.vocab = Some(p.clone());
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.adam.lr = lr;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    cfg.check_files()?;
    Ok(cfg)
}

pub fn train_command(a: &TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = resolve_config(a, seed)?;
    let train_path = cfg
        .train
        .clone()
        .ok_or_else(|| CliError::Data("no training data: set `train` in the config or pass --train".into()))?;
    let vocab = load_vocab(cfg.vocab.as_deref())?;
    let data = load_dataset(&train_path, &vocab)?;
    let hist = HistogramDistribution::from_corpus(data.graphs(), vocab.max_valence())
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut model = Model::new(cfg.model, vocab, hist, cfg.seed)?;
    let (examples, proxy) = examples_from_dataset(&data, cfg.weights);
    if proxy {
        log::info!("dataset lacks property values; training the regressor on heavy-atom fraction");
    }
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let mut log_file = fs::File::create(&log_path).map_err(io_err(&log_path))?;
    writeln!(log_file, "# {}", cfg.to_string().trim_end().replace('\n', " ")).map_err(io_err(&log_path))?;
    let t0 = Instant::now();
    let stats = train(&mut model, &examples, &cfg.train_config(), |_, s| {
        writeln!(log_file, "{s} seconds={:.1}", t0.elapsed().as_secs_f64()).map_err(|e| TrainingError::Io(e.to_string()))
    })?;
    model.save(&a.out)?;
    let last = stats.last().map(|s| s.to_string()).unwrap_or_default();
    emit(
        out,
        &format!(
            "checkpoint={}\nlog={}\nmolecules={}\nparameters={}\n{last}\n",
            a.out.display(),
            log_path.display(),
            examples.len(),
            model.params.parameter_count()
        ),
    )
}

/// One `SMILES<TAB>fallback=0|1` line per sample, in sample order.
pub fn generate_lines(model: &Model, count: usize, seed: u64) -> Result<Vec<String>, CliError> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let d = model.generate(&mut stream_rng(seed, i as u64), false)?;
            let smiles = write_smiles(d.graph(), &model.vocab)
                .map_err(|e| CliError::Data(format!("sample {i} cannot be written: {e}")))?;
            Ok(format!("{smiles}\tfallback={}", (d.fallback_count() > 0) as u8))
        })
        .collect()
}

pub fn generate(a: &GenerateArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checked(&a.model)?;
    let lines = generate_lines(&model, a.count, seed)?;
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    match &a.out {
        Some(p) => write_file(p, &text),
        None => emit(out, &text),
    }
}

pub fn reconstruct(a: &ReconstructArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checked(&a.model)?;
    let data = load_dataset(&a.data, &model.vocab)?;
    let graphs: Vec<_> = data.graphs().cloned().collect();
    let protocol = ReconstructionProtocol {
        encodings: a.encodings,
        molecule_cap: a.cap,
        seed,
    };
    let r = reconstruction_rate(&model, &graphs, protocol, SuccessCriterion::Canonical);
    emit(
        out,
        &format!(
            "reconstruction_pct={:.2}\nreconstruction_std={:.2}\nmolecules={}\nattempts={}\nerrors={}\n",
            r.rate(),
            r.std(),
            r.molecules,
            r.attempts,
            r.errors
        ),
    )
}

pub fn optimize(a: &OptimizeArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checked(&a.model)?;
    let g = parse_smiles(&a.smiles, &model.vocab).map_err(|e| CliError::Data(format!("--smiles: {e}")))?;
    let z = model.encode_mean(&g)?;
    let direction = match a.direction {
        DirectionArg::Up => Direction::Ascend,
        DirectionArg::Down => Direction::Descend,
    };
    let path = optimize_latent(&model, &z, direction, a.steps, a.step_size)?;
    let alpha0 = g.valence_histogram(model.nu(), false);
    let decoded = model.decode(&path.z, &alpha0, false, &mut stream_rng(seed, 0), false)?;
    let optimized = write_smiles(decoded.graph(), &model.vocab)
        .map_err(|e| CliError::Data(format!("optimized molecule cannot be written: {e}")))?;
    emit(
        out,
        &format!(
            "input={}\noptimized={optimized}\nproperty_before={:.6}\nproperty_after={:.6}\naccepted_steps={}\nrejected_steps={}\n",
            a.smiles,
            path.initial(),
            path.last(),
            path.predictions.len() - 1,
            path.rejected_steps
        ),
    )
}

pub fn evaluate(a: &EvaluateArgs, seed: u64, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_checked(&a.model)?;
    let train_set = load_dataset(&a.train_data, &model.vocab)?;
    let index = TrainingIndex::new(train_set.graphs(), DEFAULT_WIDTH);
    let generation = generation_report(&model, &index, a.samples, seed);
    let reconstruction = match &a.test_data {
        None => None,
        Some(p) => {
            let test = load_dataset(p, &model.vocab)?;
            let graphs: Vec<_> = test.graphs().cloned().collect();
            let protocol = ReconstructionProtocol {
                encodings: a.encodings,
                molecule_cap: a.cap,
                seed,
            };
            Some(reconstruction_rate(&model, &graphs, protocol, SuccessCriterion::Canonical))
        }
    };
    let report = EvaluationReport {
        reconstruction,
        generation,
    };
    emit(out, &if a.table { report.table() } else { report.to_key_values() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_args(argv: &[&str]) -> (TrainArgs, Option<u64>) {
        let cli = Cli::try_parse_from(argv).unwrap();
        match cli.command {
            Command::Train(a) => (a, cli.seed),
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_config_and_set() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("r.conf");
        fs::write(&conf, "epochs=7\nbatch_size=4\nseed=1\nlatent_dim=12\n").unwrap();
        let (a, seed) = train_args(&[
            "ccgvae", "--seed", "99", "train", "--config", conf.to_str().unwrap(), "--out", "x", "--set", "epochs=5",
            "--set", "latent_dim=6", "--epochs", "3",
        ]);
        let cfg = resolve_config(&a, seed).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.model.latent_dim, 6);
        assert_eq!(cfg.seed, 99);
    }

    #[test]
    fn config_seed_applies_without_flag() {
        let (a, seed) = train_args(&["ccgvae", "train", "--out", "x", "--set", "seed=17"]);
        assert_eq!(resolve_config(&a, seed).unwrap().seed, 17);
    }

    #[test]
    fn error_kinds_are_stable() {
        assert_eq!(CliError::Data("x".into()).kind(), "data");
        assert_eq!(CliError::from(ModelError::Incompatible("v".into())).kind(), "incompatible");
        assert_eq!(CliError::from(ModelError::EmptyGraph).kind(), "model");
    }
}
