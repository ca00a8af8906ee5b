//! `carenet` command line: synth, preprocess, train, eval and gradcam runs,
//! each writing into its own run directory with a JSON manifest.

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::dataset::{read_cube, read_environment, read_spectraset, write_spectraset};
use crate::error::{Error, Result};
use crate::evaluation::{
    class_name, metric_rows, predict_set, write_metrics_csv, write_patient_table,
};
use crate::gradcam::{
    build_heatmap, gradcam_batch, heatmap_svg, top_bands, write_heatmap_csv, Heatmap1D,
};
use crate::labels::CoreType;
use crate::model::{load_checkpoint, load_checkpoint_for, Head};
use crate::pipeline::{
    make_split, patient_subtypes, preprocess_cores, preprocess_environment, train_fold,
    FoldOutcome, PreprocessConfig, SplitPlan, TrainConfig, N_FOLDS,
};
use crate::synth::{write_panel, PanelIndex, SynthConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "carenet",
    version,
    about = "Micro-FTIR preprocessing, residual CNN training and 1D Grad-CAM"
)]
pub struct Cli {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for per-core preprocessing and Grad-CAM.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// TOML file with optional [synth], [preprocess] and [train] tables.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Run directory name instead of `<command>-<timestamp>-s<seed>`.
    #[arg(long, global = true)]
    pub run_name: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic panel of cubes plus an environment image.
    Synth,
    /// Preprocess every core of a panel into one spectra container.
    Preprocess(PreprocessArgs),
    /// Split patients and train one model per fold.
    Train(TrainArgs),
    /// Metrics and per-patient votes of a training run.
    Eval(EvalArgs),
    /// Class-averaged Grad-CAM heatmaps of the best fold model.
    Gradcam(GradcamArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Directory written by `synth` (holding panel.json).
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub max_per_core: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub spectra: PathBuf,
    #[arg(long)]
    pub head: Option<Head>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Comma-separated fold indices; all four by default.
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub spectra: PathBuf,
    /// Run directory written by `train`.
    #[arg(long)]
    pub train_run: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub spectra: PathBuf,
    #[arg(long)]
    pub train_run: PathBuf,
    /// Use this checkpoint instead of the best fold of the run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Threshold for the shaded top bands.
    #[arg(long, default_value_t = 0.7)]
    pub threshold: f64,
    #[arg(long)]
    pub no_svg: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the global seed to every seeded stage.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.preprocess.seed = seed;
        self.preprocess.segmentation.seed = seed;
        self.train = self.train.with_seed(seed);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: PathBuf,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<OutputFile>,
    pub started: String,
    pub elapsed_seconds: f64,
    pub details: serde_json::Value,
}

pub const MANIFEST: &str = "manifest.json";

impl RunManifest {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(run_dir.join(MANIFEST))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Maps an error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => EXIT_USAGE,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            files_under(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

fn list_outputs(run_dir: &Path) -> Result<Vec<OutputFile>> {
    let mut files = Vec::new();
    files_under(run_dir, &mut files)?;
    files
        .into_iter()
        .filter(|p| p.file_name().is_some_and(|n| n != MANIFEST))
        .map(|p| {
            let bytes = std::fs::read(&p)?;
            Ok(OutputFile {
                path: p.strip_prefix(run_dir).unwrap_or(&p).to_path_buf(),
                bytes: bytes.len() as u64,
                crc32: crc32fast::hash(&bytes),
            })
        })
        .collect()
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth => "synth",
        Command::Preprocess(_) => "preprocess",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Gradcam(_) => "gradcam",
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Per-run summary written by `train` and read by `eval` and `gradcam`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub head: Head,
    pub split: SplitPlan,
    pub folds: Vec<FoldSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub best_epoch: usize,
    pub best_dev_loss: f64,
    pub final_dev_accuracy: f64,
    pub best_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
}

pub const TRAIN_SUMMARY: &str = "train_summary.json";

impl TrainSummary {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(run_dir.join(TRAIN_SUMMARY))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Fold with the lowest best-dev loss.
    pub fn best_fold(&self) -> Result<&FoldSummary> {
        self.folds
            .iter()
            .min_by(|a, b| a.best_dev_loss.total_cmp(&b.best_dev_loss))
            .ok_or_else(|| Error::Format("training run has no folds".into()))
    }
}

fn cmd_synth(cfg: &RunConfig, run: &Path) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let (index, _) = write_panel(&cfg.synth, &run.join("panel"))?;
    log::info!(
        "wrote {} cubes for {} patients",
        index.cubes.len(),
        index.records.len()
    );
    Ok((
        vec![],
        json!({"patients": index.records.len(), "cores": index.cubes.len()}),
    ))
}

fn cmd_preprocess(
    cfg: &RunConfig,
    args: &PreprocessArgs,
    run: &Path,
) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let index = PanelIndex::read(&args.panel)?;
    let mut pcfg = cfg.preprocess.clone();
    if args.max_per_core.is_some() {
        pcfg.max_spectra_per_core = args.max_per_core;
    }
    let (axis, env) = read_environment(&args.panel.join(&index.environment))?;
    let h2o = preprocess_environment(&axis, &env, &pcfg)?;
    let ids: Vec<u32> = index.cubes.iter().map(|(id, _)| *id).collect();
    let out = preprocess_cores(
        &ids,
        |id| Ok(read_cube(&index.cube_path(&args.panel, id)?)?.0),
        &h2o,
        &pcfg,
    )?;
    let mut spectra = out.spectra;
    spectra.metadata = json!({"preprocess": pcfg, "failures": out.failures});
    write_spectraset(&spectra, &run.join("spectra.crns"))?;
    let mut w = create(&run.join("stage_counts.csv"))?;
    use std::io::Write;
    writeln!(
        w,
        "core_id,tissue,paraffin,first_outlier,smoothed,emsc,minmax,second_outlier,kept"
    )?;
    for (id, c) in &out.counts {
        writeln!(
            w,
            "{id},{},{},{},{},{},{},{},{}",
            c.tissue,
            c.paraffin,
            c.first_outlier,
            c.smoothed,
            c.emsc,
            c.minmax,
            c.second_outlier,
            c.kept
        )?;
        log::info!("core {id}: {:?}", c.sequence());
    }
    w.flush()?;
    let inputs = vec![args.panel.join("panel.json")];
    Ok((
        inputs,
        json!({"spectra": spectra.len(), "failures": out.failures}),
    ))
}

fn cmd_train(
    cfg: &RunConfig,
    args: &TrainArgs,
    seed: u64,
    run: &Path,
) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let set = read_spectraset(&args.spectra)?;
    let mut tcfg = cfg.train.clone();
    if let Some(h) = args.head {
        tcfg.head = h;
    }
    if let Some(e) = args.epochs {
        tcfg.epochs = e;
    }
    if let Some(b) = args.batch {
        tcfg.batch = b;
    }
    if tcfg.head == Head::Subtype && !set.infos().iter().any(|i| i.core_type == CoreType::Cancer) {
        return Err(Error::Label(
            "subtype head needs cancer-core spectra, the container has none".into(),
        ));
    }
    let split = make_split(&patient_subtypes(&set)?, seed)?;
    let folds = args.folds.clone().unwrap_or_else(|| (0..N_FOLDS).collect());
    if let Some(k) = folds.iter().find(|k| **k >= N_FOLDS) {
        return Err(Error::InvalidParameter(format!("fold {k} out of range")));
    }
    let ckpt_dir = run.join("checkpoints");
    let mut summaries = Vec::new();
    for &k in &folds {
        let (train, dev) = split.fold_sets(&set, k, tcfg.head)?;
        log::info!(
            "fold {k}: {} train / {} dev spectra",
            train.len(),
            dev.len()
        );
        let out: FoldOutcome =
            train_fold(&tcfg.for_fold(k), &train, &dev, Some(k), Some(&ckpt_dir))?;
        out.write_history_csv(create(&run.join(format!("history_fold{k}.csv")))?)?;
        let last = out.history.last().expect("epochs > 0");
        log::info!(
            "fold {k}: best epoch {} dev loss {:.5}, final dev accuracy {:.3}",
            out.best_epoch,
            out.best_dev_loss(),
            last.dev_accuracy
        );
        summaries.push(FoldSummary {
            fold: k,
            best_epoch: out.best_epoch,
            best_dev_loss: out.best_dev_loss(),
            final_dev_accuracy: last.dev_accuracy,
            best_checkpoint: out.checkpoints[1]
                .strip_prefix(run)
                .unwrap_or(&out.checkpoints[1])
                .to_path_buf(),
            final_checkpoint: out.checkpoints[0]
                .strip_prefix(run)
                .unwrap_or(&out.checkpoints[0])
                .to_path_buf(),
        });
    }
    let summary = TrainSummary {
        head: tcfg.head,
        split,
        folds: summaries,
    };
    std::fs::write(
        run.join(TRAIN_SUMMARY),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok((
        vec![args.spectra.clone()],
        json!({"train": tcfg, "folds": summary.folds}),
    ))
}

fn cmd_eval(args: &EvalArgs, run: &Path) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let set = read_spectraset(&args.spectra)?;
    let summary = TrainSummary::read(&args.train_run)?;
    let head = summary.head;
    let test = summary.split.test_set(&set, head);
    if test.is_empty() {
        return Err(Error::Label(
            "the container has no spectra of the held-out test patients".into(),
        ));
    }
    let (mut dev_preds, mut test_preds) = (Vec::new(), Vec::new());
    for f in &summary.folds {
        let (model, _) = load_checkpoint_for(&args.train_run.join(&f.best_checkpoint), head)?;
        let (_, dev) = summary.split.fold_sets(&set, f.fold, head)?;
        dev_preds.push(predict_set(&model, &dev)?);
        test_preds.push(predict_set(&model, &test)?);
    }
    let mut rows = metric_rows("dev", &dev_preds)?;
    rows.extend(metric_rows("test", &test_preds)?);
    write_metrics_csv(&rows, create(&run.join("metrics.csv"))?)?;
    write_patient_table(&test_preds, create(&run.join("patients.csv"))?)?;
    let inputs = vec![args.spectra.clone(), args.train_run.join(TRAIN_SUMMARY)];
    Ok((
        inputs,
        json!({"head": head, "test_spectra": test.len(), "folds": summary.folds.len()}),
    ))
}

/// Heatmaps per class of `model` over `set`, grouped by true class. The
/// binary model yields only the cancer heatmap.
pub fn class_heatmaps(
    model: &crate::model::CarenetModel,
    set: &crate::dataset::SpectraSet,
    source: &str,
) -> Result<Vec<Heatmap1D>> {
    let head = model.head;
    let labels = crate::pipeline::class_labels(set, head)?;
    let classes: Vec<usize> = match head {
        Head::Type => vec![1],
        Head::Subtype => (0..4).collect(),
    };
    classes
        .into_iter()
        .map(|c| {
            let rows: Vec<&[f32]> = (0..set.len())
                .filter(|&i| labels[i] == c)
                .map(|i| set.spectrum(i))
                .collect();
            if rows.is_empty() {
                return Err(Error::Label(format!(
                    "no {} spectra for Grad-CAM",
                    class_name(head, c)
                )));
            }
            let maps = gradcam_batch(model, &rows, c)?;
            build_heatmap(class_name(head, c), set.axis(), &maps, source)
        })
        .collect()
}

fn cmd_gradcam(args: &GradcamArgs, run: &Path) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let set = read_spectraset(&args.spectra)?;
    let summary = TrainSummary::read(&args.train_run)?;
    let ckpt = match &args.checkpoint {
        Some(p) => p.clone(),
        None => args.train_run.join(&summary.best_fold()?.best_checkpoint),
    };
    let (model, _) = load_checkpoint(&ckpt)?;
    let test = summary.split.test_set(&set, model.head);
    let heatmaps = class_heatmaps(&model, &test, &ckpt.display().to_string())?;
    let mut bands = Vec::new();
    for h in &heatmaps {
        write_heatmap_csv(h, create(&run.join(format!("gradcam_{}.csv", h.class)))?)?;
        if !args.no_svg {
            std::fs::write(
                run.join(format!("gradcam_{}.svg", h.class)),
                heatmap_svg(h, args.threshold),
            )?;
        }
        bands.push(json!({"class": h.class, "degenerate": h.degenerate, "n": h.n_samples, "top_bands": top_bands(h, args.threshold)}));
    }
    Ok((vec![args.spectra.clone(), ckpt], json!({"heatmaps": bands})))
}

/// Runs a parsed command; returns the run directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let started = chrono::Local::now();
    let clock = Instant::now();
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    let name = command_name(&cli.command);
    let dir_name = cli
        .run_name
        .clone()
        .unwrap_or_else(|| format!("{name}-{}-s{}", started.format("%Y%m%dT%H%M%S"), cli.seed));
    let run_dir = cli.out_dir.join(dir_name);
    std::fs::create_dir_all(&run_dir)?;
    let (inputs, details) = match &cli.command {
        Command::Synth => cmd_synth(&cfg, &run_dir)?,
        Command::Preprocess(a) => cmd_preprocess(&cfg, a, &run_dir)?,
        Command::Train(a) => cmd_train(&cfg, a, cli.seed, &run_dir)?,
        Command::Eval(a) => cmd_eval(a, &run_dir)?,
        Command::Gradcam(a) => cmd_gradcam(a, &run_dir)?,
    };
    let manifest = RunManifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cli.seed,
        config: cfg,
        inputs,
        outputs: list_outputs(&run_dir)?,
        started: started.to_rfc3339(),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        details,
    };
    std::fs::write(
        run_dir.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(run_dir)
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
        {
            log::debug!("thread pool already set: {e}");
        }
    }
    match run(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
