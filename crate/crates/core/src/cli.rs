//! Command-line surface: `ingest`, `synth`, `train`, `eval`, `probe`,
//! `bench` and `sweep`.
//!
//! Every command writes under an output root taken from `--out`, then the
//! `HFGCL_OUT` environment variable, then `./runs`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{bench_epoch, bench_total, expected_spmm_per_forward};
use crate::config::{ModelConfig, VariantName};
use crate::dataset::{self, InputFormat, InteractionDataset, SplitRatios};
use crate::encoder::AggregationWindow;
use crate::error::{Error, ErrorClass, Result};
use crate::evaluation::{evaluate_model, write_metrics_csv, Metric, MetricsReport, ReportOptions, Split};
use crate::graph::NormalizedAdjacency;
use crate::synth::{self, SynthConfig};
use crate::training::{init_embeddings, Checkpoint, Trainer};

pub const ENV_OUT: &str = "HFGCL_OUT";

/// Process exit code for an error class. Usage errors from argument parsing
/// share the configuration code.
pub fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
        ErrorClass::Io => 5,
    }
}

#[derive(Debug, Parser)]
#[command(name = "hfgcl", version, about = "High-order contrastive views over a LightGCN encoder")]
pub struct Cli {
    /// Output root (defaults to $HFGCL_OUT, then ./runs).
    #[arg(long, global = true, env = ENV_OUT)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a CSV/TSV log, filter, split and write a dataset artifact.
    Ingest(IngestArgs),
    /// Write a synthetic rating log as CSV.
    Synth(SynthArgs),
    /// Train one model and write checkpoint, epoch log and metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or an untrained initialization).
    Eval(EvalArgs),
    /// Positive-pair cosine similarity for the initial, full and high-order readouts.
    Probe(ProbeArgs),
    /// Time training epochs or full runs across variants.
    Bench(BenchArgs),
    /// Train over a hyperparameter grid and collect metrics.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Keep interactions with rating strictly above this value.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub split: SplitRatios,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Artifact path (defaults to `<out>/dataset.hfgcl`).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthPreset {
    /// 2000 users and 4000 items before filtering.
    Desk,
    /// About 50 users and 80 items.
    Tiny,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: SynthPreset,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<VariantName>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` overrides applied after the file, e.g. `train.lr=0.01`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ModelConfig> {
        let mut cfg = match &self.config {
            Some(p) => ModelConfig::load(p)?,
            None => ModelConfig::default(),
        };
        if let Some(v) = self.variant {
            cfg.variant = v;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        for o in &self.overrides {
            cfg.set(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "manifest")]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Replay the run described by an existing manifest.
    #[arg(long, conflicts_with_all = ["dataset", "config", "variant", "seed", "overrides"])]
    pub manifest: Option<PathBuf>,
    /// Run directory name under the output root (defaults to `<variant>-s<seed>`).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, required_unless_present = "untrained")]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate the seeded initialization instead of a checkpoint.
    #[arg(long)]
    pub untrained: bool,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    pub ks: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, required_unless_present = "untrained")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub untrained: bool,
    #[arg(long, default_value_t = 2000)]
    pub sample: usize,
    #[arg(long, default_value_t = 0)]
    pub probe_seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Variants to compare.
    #[arg(long, value_delimiter = ',', default_value = "lightgcn,simgcl_lite,hfgcl")]
    pub variants: Vec<VariantName>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    /// Train to early stopping instead of timing single epochs.
    #[arg(long)]
    pub total: bool,
    /// Label written in the dataset column.
    #[arg(long)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    Lambda1,
    Lambda2,
    H,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::Tau => "tau",
            SweepParam::Lambda1 => "lambda1",
            SweepParam::Lambda2 => "lambda2",
            SweepParam::H => "h",
        }
    }

    /// The grid searched when no values are given.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepParam::Tau => vec![0.20, 0.22, 0.24, 0.26, 0.28, 0.30],
            SweepParam::Lambda1 => vec![0.1, 0.5, 1.0, 2.5],
            SweepParam::Lambda2 => vec![1e-3, 1e-4, 1e-5, 1e-6],
            SweepParam::H => vec![1.0, 2.0, 3.0],
        }
    }

    pub fn apply(self, cfg: &mut ModelConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::Tau => cfg.objective.tau = value,
            SweepParam::Lambda1 => cfg.objective.lambda1 = value,
            SweepParam::Lambda2 => cfg.objective.lambda2 = value,
            SweepParam::H => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("h must be a non-negative integer, got {value}")));
                }
                cfg.model.high_order_start = value as usize;
            }
        }
        cfg.validate()
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Grid values (defaults to the standard grid of the parameter).
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub seeds: Vec<u64>,
    /// Runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_delimiter = ',', default_value = "20")]
    pub ks: Vec<usize>,
}

/// Everything needed to replay a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: Option<PathBuf>,
    pub config: ModelConfig,
    pub dataset_path: PathBuf,
    pub dataset_fingerprint: String,
    pub version: String,
    pub output_dir: PathBuf,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Ingest {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Package version plus the build revision when `HFGCL_BUILD_REV` was set at
/// compile time.
pub fn artifact_version() -> String {
    match option_env!("HFGCL_BUILD_REV") {
        Some(rev) => format!("{}+{rev}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

pub fn output_root(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit_code(ErrorClass::Config) } else { 0 };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.class())
        }
    }
}

pub fn run<W: Write>(cli: Cli, out: &mut W) -> Result<()> {
    let root = output_root(cli.out.as_deref());
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&a, &root, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Train(a) => cmd_train(&a, &root, out).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a, &root, out).map(|_| ()),
        Command::Probe(a) => cmd_probe(&a, &root, out).map(|_| ()),
        Command::Bench(a) => cmd_bench(&a, &root, out),
        Command::Sweep(a) => cmd_sweep(&a, &root, out).map(|_| ()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

pub fn cmd_ingest<W: Write>(a: &IngestArgs, root: &Path, out: &mut W) -> Result<()> {
    let full = dataset::ingest(&a.input, InputFormat::from_path(&a.input), a.threshold)?;
    let ds = full.split(a.split, a.seed)?;
    let path = a.output.clone().unwrap_or_else(|| root.join("dataset.hfgcl"));
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    ds.save(&path)?;
    let stats = ds.stats();
    fs::write(path.with_extension("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    writeln!(out, "users\t{}", stats.users)?;
    writeln!(out, "items\t{}", stats.items)?;
    writeln!(out, "interactions\t{}", stats.interactions)?;
    writeln!(out, "density\t{:.6}", stats.density)?;
    writeln!(out, "train/valid/test\t{}/{}/{}", stats.train, stats.valid, stats.test)?;
    writeln!(out, "fingerprint\t{}", ds.fingerprint())?;
    writeln!(out, "wrote\t{}", path.display())?;
    Ok(())
}

pub fn cmd_synth<W: Write>(a: &SynthArgs, out: &mut W) -> Result<()> {
    let cfg = match a.preset {
        SynthPreset::Desk => SynthConfig {
            seed: a.seed,
            ..SynthConfig::desk()
        },
        SynthPreset::Tiny => SynthConfig::tiny(a.seed),
    };
    let rows = synth::generate(&cfg)?;
    if let Some(dir) = a.output.parent() {
        ensure_dir(dir)?;
    }
    let file = fs::File::create(&a.output)?;
    dataset::write_raw(std::io::BufWriter::new(file), &rows, InputFormat::from_path(&a.output))?;
    writeln!(out, "wrote {} ratings to {}", rows.len(), a.output.display())?;
    Ok(())
}

fn load_dataset(path: &Path) -> Result<InteractionDataset> {
    InteractionDataset::load(path)
}

/// Paths written by `train`.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub report: MetricsReport,
}

pub fn cmd_train<W: Write>(a: &TrainArgs, root: &Path, out: &mut W) -> Result<TrainArtifacts> {
    let (cfg, config_path, dataset_path, dir) = match &a.manifest {
        Some(m) => {
            let man = RunManifest::load(m)?;
            man.config.validate()?;
            (man.config, man.config_path, man.dataset_path, man.output_dir)
        }
        None => {
            let cfg = a.config.resolve()?;
            let name = a.name.clone().unwrap_or_else(|| format!("{}-s{}", cfg.variant, cfg.seed));
            let dataset = a.dataset.clone().expect("clap requires --dataset without --manifest");
            (cfg, a.config.config.clone(), dataset, root.join(name))
        }
    };
    let ds = load_dataset(&dataset_path)?;
    ensure_dir(&dir)?;
    let manifest = RunManifest {
        config_path,
        config: cfg.clone(),
        dataset_path,
        dataset_fingerprint: ds.fingerprint(),
        version: artifact_version(),
        output_dir: dir.clone(),
    };
    if let Some(m) = &a.manifest {
        let recorded = RunManifest::load(m)?;
        if recorded.dataset_fingerprint != manifest.dataset_fingerprint {
            return Err(Error::Format(format!(
                "dataset fingerprint {} differs from the manifest's {}",
                manifest.dataset_fingerprint, recorded.dataset_fingerprint
            )));
        }
    }
    manifest.save(&dir.join("manifest.json"))?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;

    let mut log = std::io::BufWriter::new(fs::File::create(dir.join("epochs.jsonl"))?);
    let mut trainer = Trainer::new(cfg.clone(), &ds)?;
    let mut log_err = None;
    let outcome = trainer.fit_with(|rec| {
        let line = serde_json::to_string(rec).map_err(Error::from);
        let res = line.and_then(|l| writeln!(log, "{l}").map_err(Error::from));
        if let Err(e) = res {
            log_err.get_or_insert(e);
        }
    });
    log.flush()?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let outcome = outcome?;
    outcome.checkpoint.save(&dir.join("checkpoint.bin"))?;

    let obj = cfg.objective_config()?;
    let layers = cfg.model.layers;
    let opts = ReportOptions {
        probe_windows: probe_windows(layers, cfg.model.high_order_start)?,
        probe_seed: cfg.seed,
        ..ReportOptions::default()
    };
    let report = evaluate_model(cfg.variant.as_str(), cfg.seed, &outcome.embeddings, trainer.adjacency(), &ds, obj.rec_window, &opts)?;
    fs::write(dir.join("metrics.json"), report.to_json()? + "\n")?;
    write_metrics_csv(fs::File::create(dir.join("metrics.csv"))?, std::slice::from_ref(&report))?;

    writeln!(
        out,
        "trained {} seed={} epochs={} best_epoch={}",
        cfg.variant, cfg.seed, outcome.epochs_run, outcome.best_epoch
    )?;
    for m in &report.metrics {
        writeln!(out, "{}@{}\t{:.6}", m.metric.as_str(), m.k, m.value)?;
    }
    writeln!(out, "wrote\t{}", dir.display())?;
    Ok(TrainArtifacts { dir, manifest, report })
}

/// The three readouts compared by the probe: `0..=0`, `0..=L`, `h..=L`.
pub fn probe_windows(layers: usize, h: usize) -> Result<Vec<AggregationWindow>> {
    Ok(vec![
        AggregationWindow::initial(),
        AggregationWindow::full(layers),
        AggregationWindow::high_order(h, layers)?,
    ])
}

fn load_embeddings(
    cfg: &ModelConfig,
    ds: &InteractionDataset,
    checkpoint: Option<&Path>,
    untrained: bool,
) -> Result<crate::matrix::Matrix> {
    if untrained {
        return Ok(init_embeddings(ds.num_users(), ds.num_items(), cfg.model.dim, cfg.seed));
    }
    let path = checkpoint.ok_or_else(|| Error::Config("either --checkpoint or --untrained is required".into()))?;
    let ck = Checkpoint::load(path)?;
    if ck.num_users != ds.num_users() || ck.num_items != ds.num_items() {
        return Err(Error::Format(format!(
            "checkpoint covers {}x{} nodes, dataset has {}x{}",
            ck.num_users,
            ck.num_items,
            ds.num_users(),
            ds.num_items()
        )));
    }
    Ok(ck.embeddings)
}

pub fn cmd_eval<W: Write>(a: &EvalArgs, root: &Path, out: &mut W) -> Result<MetricsReport> {
    let cfg = a.config.resolve()?;
    let ds = load_dataset(&a.dataset)?;
    let e0 = load_embeddings(&cfg, &ds, a.checkpoint.as_deref(), a.untrained)?;
    let adj = NormalizedAdjacency::build(&ds)?;
    let obj = cfg.objective_config()?;
    let opts = ReportOptions {
        split: a.split.into(),
        ks: a.ks.clone(),
        groups: a.ks.iter().max().map(|&k| (Metric::Recall, k.min(ds.num_items()))),
        ..ReportOptions::default()
    };
    let report = evaluate_model(cfg.variant.as_str(), cfg.seed, &e0, &adj, &ds, obj.rec_window, &opts)?;
    ensure_dir(root)?;
    let tag = if a.untrained { "untrained" } else { "checkpoint" };
    write_metrics_csv(
        fs::File::create(root.join(format!("eval-{}-{tag}.csv", cfg.variant)))?,
        std::slice::from_ref(&report),
    )?;
    for m in &report.metrics {
        writeln!(out, "{}@{}\t{:.6}", m.metric.as_str(), m.k, m.value)?;
    }
    for g in &report.sparsity {
        writeln!(out, "group {}\tusers={}\t{:.6}", g.group, g.users, g.value)?;
    }
    Ok(report)
}

pub fn cmd_probe<W: Write>(a: &ProbeArgs, root: &Path, out: &mut W) -> Result<MetricsReport> {
    let cfg = a.config.resolve()?;
    let ds = load_dataset(&a.dataset)?;
    let e0 = load_embeddings(&cfg, &ds, a.checkpoint.as_deref(), a.untrained)?;
    let adj = NormalizedAdjacency::build(&ds)?;
    let windows = probe_windows(cfg.model.layers, cfg.model.high_order_start)?;
    let probes = crate::evaluation::similarity_probe(&e0, &adj, &ds, &windows, a.sample, a.probe_seed)?;
    let report = MetricsReport {
        variant: cfg.variant.as_str().to_string(),
        seed: cfg.seed,
        split: Split::Test,
        metrics: Vec::new(),
        sparsity: Vec::new(),
        probes,
    };
    ensure_dir(root)?;
    let tag = if a.untrained { "untrained" } else { "checkpoint" };
    fs::write(root.join(format!("probe-{}-{tag}.json", cfg.variant)), report.to_json()? + "\n")?;
    writeln!(out, "window\tmean_cosine\tpairs")?;
    for p in &report.probes {
        writeln!(out, "{}\t{:.6}\t{}", p.window, p.mean_cosine, p.num_pairs)?;
    }
    Ok(report)
}

pub fn cmd_bench<W: Write>(a: &BenchArgs, root: &Path, out: &mut W) -> Result<()> {
    let base = a.config.resolve()?;
    let ds = load_dataset(&a.dataset)?;
    let label = a.label.clone().unwrap_or_else(|| {
        a.dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let cfgs: Vec<ModelConfig> = a
        .variants
        .iter()
        .map(|&v| ModelConfig { variant: v, ..base.clone() })
        .collect();
    ensure_dir(root)?;
    if a.total {
        let report = bench_total(&cfgs, &ds, &label, &a.seeds)?;
        let csv = report.to_csv_string();
        fs::write(root.join("bench-total.csv"), &csv)?;
        out.write_all(csv.as_bytes())?;
        return Ok(());
    }
    let mut rows = Vec::new();
    for cfg in &cfgs {
        for &seed in &a.seeds {
            let cfg = ModelConfig { seed, ..cfg.clone() };
            let rec = bench_epoch(&cfg, &ds)?;
            rows.push(crate::bench::BenchRow {
                variant: cfg.variant,
                dataset: label.clone(),
                seed,
                epoch_time_s: rec.epoch_time_s,
                ratio_vs_lightgcn: None,
                spmm_calls: rec.forward_spmm / rec.steps.max(1) as u64,
                total_time_s: rec.epoch_time_s,
                epochs: 1,
                best_epoch: 1,
                best_valid: None,
            });
            let expected = expected_spmm_per_forward(&cfg)?;
            if rec.forward_spmm != expected * rec.steps as u64 {
                return Err(Error::Graph(format!(
                    "{} issued {} forward spmm calls over {} steps, expected {expected} per step",
                    cfg.variant, rec.forward_spmm, rec.steps
                )));
            }
        }
    }
    let report = crate::bench::BenchReport::from_rows(rows);
    let csv = report.to_csv_string();
    fs::write(root.join("bench-epoch.csv"), &csv)?;
    out.write_all(csv.as_bytes())?;
    Ok(())
}

/// One trained grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub variant: VariantName,
    pub seed: u64,
    pub metric: Metric,
    pub k: usize,
    pub score: f64,
}

/// Trains every `(value, seed)` pair with at most `jobs` runs in flight and
/// returns rows in grid order.
pub fn run_sweep(
    base: &ModelConfig,
    ds: &InteractionDataset,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    ks: &[usize],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    let mut grid = Vec::new();
    for &v in values {
        for &s in seeds {
            let mut cfg = base.clone();
            cfg.seed = s;
            param.apply(&mut cfg, v)?;
            grid.push((v, cfg));
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Vec<SweepRow>>>>> = Mutex::new((0..grid.len()).map(|_| None).collect());
    let worker = || loop {
        let idx = next.fetch_add(1, Ordering::Relaxed);
        let Some((value, cfg)) = grid.get(idx) else { break };
        let res = sweep_point(cfg, ds, param, *value, ks);
        results.lock().expect("sweep worker panicked")[idx] = Some(res);
    };
    let jobs = jobs.clamp(1, grid.len().max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }
    let mut rows = Vec::new();
    for r in results.into_inner().expect("sweep worker panicked") {
        rows.extend(r.expect("every grid point runs")?);
    }
    Ok(rows)
}

fn sweep_point(cfg: &ModelConfig, ds: &InteractionDataset, param: SweepParam, value: f64, ks: &[usize]) -> Result<Vec<SweepRow>> {
    let trainer = Trainer::new(cfg.clone(), ds)?;
    let adj = trainer.adjacency().clone();
    let outcome = trainer.fit()?;
    let obj = cfg.objective_config()?;
    let opts = ReportOptions {
        ks: ks.to_vec(),
        groups: None,
        ..ReportOptions::default()
    };
    let report = evaluate_model(cfg.variant.as_str(), cfg.seed, &outcome.embeddings, &adj, ds, obj.rec_window, &opts)?;
    Ok(report
        .metrics
        .iter()
        .map(|m| SweepRow {
            param,
            value,
            variant: cfg.variant,
            seed: cfg.seed,
            metric: m.metric,
            k: m.k,
            score: m.value,
        })
        .collect())
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "param,value,variant,seed,metric,k,score")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.10}",
            r.param.as_str(),
            r.value,
            r.variant,
            r.seed,
            r.metric.as_str(),
            r.k,
            r.score
        )?;
    }
    Ok(())
}

pub fn cmd_sweep<W: Write>(a: &SweepArgs, root: &Path, out: &mut W) -> Result<Vec<SweepRow>> {
    let base = a.config.resolve()?;
    let ds = load_dataset(&a.dataset)?;
    let values = if a.values.is_empty() { a.param.default_grid() } else { a.values.clone() };
    let rows = run_sweep(&base, &ds, a.param, &values, &a.seeds, &a.ks, a.jobs)?;
    ensure_dir(root)?;
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows)?;
    fs::write(root.join(format!("sweep-{}.csv", a.param.as_str())), &buf)?;
    out.write_all(&buf)?;
    Ok(rows)
}
