use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use soundmorph::audio::{
    build_digit_dataset, build_drum_dataset, load_drum_clips, load_split_from_manifest, read_manifest,
    DatasetSplit, Manifest, DRUM_CLASSES,
};
use soundmorph::eval::{
    class_center, deviation_report_with_latent, export_projection_2d, knn1_accuracy, knn1_leave_one_out_accuracy,
    project_dataset, write_deviation_csv, write_knn_csv, write_projection_csv, LatentDataset, RunMetadata,
};
use soundmorph::features::cluster_drums;
use soundmorph::morph::{decode_centers, latent_of, render_morph, write_centers, write_morph, DecodeMode, MorphRequest};
use soundmorph::nn::{load_checkpoint, save_checkpoint, ArchTag, ModelParams};
use soundmorph::train::{read_loss_csv, train, write_loss_csv, LossRecord, TrainHooks};

use crate::config::{DatasetKind, ExperimentConfig, ServiceConfig};
use crate::error::{io_err, CliError, CliResult};
use crate::runs::{default_run_id, RunDir};

#[derive(Debug, Parser)]
#[command(name = "soundmorph", version, about = "Train audio VAEs, evaluate their latent spaces and render morphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// 1-NN accuracy, deviation table, projection and latents of a trained model.
    Eval(EvalArgs),
    /// Decode every class center to a WAV file.
    Centers(CentersArgs),
    /// Render a morph between two latent points.
    Morph(MorphArgs),
    /// Serve the HTTP API used by the latent explorer.
    Serve(ServeArgs),
    /// Label a drum folder with k-means on attack MFCCs and write a manifest.
    ClusterDrums(ClusterArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of WAV recordings.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset manifest; wins over --data.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// DC or CC.
    #[arg(long)]
    pub arch: Option<ArchTag>,
    /// Experiment config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Seed of the initialization and of the batch order.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the drum preset (16384 samples, 30-d latent, 5 clusters).
    #[arg(long)]
    pub drums: bool,
    #[arg(long, default_value = "runs")]
    pub runs_dir: PathBuf,
    #[arg(long)]
    pub run_id: Option<String>,
}

/// Where a trained model and its dataset come from.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Checkpoint; defaults to the run's final checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset manifest; defaults to the run's manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory; defaults to <run>/eval.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Experiment config supplying the MFCC settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CentersArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output directory; defaults to <run>/centers.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MorphArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Start point: `class:N` (or a bare class index), a source id, or a comma-separated vector.
    #[arg(long)]
    pub from: String,
    /// End point, same forms as --from.
    #[arg(long)]
    pub to: String,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    #[arg(long, default_value_t = soundmorph::morph::DEFAULT_GAP_MS)]
    pub gap_ms: f64,
    /// Sub-directory name under the output directory.
    #[arg(long)]
    pub name: Option<String>,
    /// Output directory; defaults to <run>/morphs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    /// mean or sample
    #[arg(long, default_value = "mean")]
    pub decode_mode: DecodeMode,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    /// Directory of drum one-shots.
    #[arg(long)]
    pub drums: PathBuf,
    /// Manifest to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DRUM_CLASSES)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a).map(|run| println!("{}", run.root().display())),
        Command::Eval(a) => cmd_eval(a),
        Command::Centers(a) => cmd_centers(a),
        Command::Morph(a) => cmd_morph(a),
        Command::Serve(a) => cmd_serve(a),
        Command::ClusterDrums(a) => cmd_cluster(a),
    }
}

fn absolute(path: &Path) -> CliResult<PathBuf> {
    std::path::absolute(path).map_err(|e| io_err(path, e))
}

/// Manifest rows with every path made absolute, so the copy can live anywhere.
fn absolute_manifest(path: &Path) -> CliResult<Manifest> {
    let mut manifest = read_manifest(path)?;
    let base = absolute(path.parent().unwrap_or(Path::new(".")))?;
    for row in &mut manifest.rows {
        let p = Path::new(&row.path);
        if p.is_relative() {
            row.path = base.join(p).to_string_lossy().into_owned();
        }
    }
    Ok(manifest)
}

/// Loads the split named by the config together with a relocatable manifest.
pub fn load_dataset(cfg: &ExperimentConfig) -> CliResult<(DatasetSplit, Manifest)> {
    if let Some(path) = &cfg.dataset.manifest {
        return Ok((load_split_from_manifest(path)?, absolute_manifest(path)?));
    }
    let dir = cfg
        .dataset
        .dir
        .as_ref()
        .ok_or_else(|| CliError::Usage("no dataset: pass --data or --manifest, or set dataset.dir".into()))?;
    let dir = absolute(dir)?;
    let split = match cfg.dataset.kind {
        DatasetKind::Digits => build_digit_dataset(&dir, cfg.dataset.split_seed)?,
        DatasetKind::Drums => {
            let clips: Vec<_> = load_drum_clips(&dir)?.into_iter().map(|(_, c)| c).collect();
            let model = cluster_drums(&clips, DRUM_CLASSES, cfg.dataset.cluster_seed)?;
            build_drum_dataset(&dir, &model)?
        }
    };
    let manifest = split.manifest();
    Ok((split, manifest))
}

pub fn cmd_train(args: TrainArgs) -> CliResult<RunDir> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if args.data.is_some() {
        cfg.dataset.dir = args.data.clone();
    }
    if args.manifest.is_some() {
        cfg.dataset.manifest = args.manifest.clone();
    }
    if args.drums {
        cfg.dataset.kind = DatasetKind::Drums;
    }
    if let Some(arch) = args.arch {
        cfg.model.arch = arch;
    }
    if let Some(epochs) = args.epochs {
        cfg.train.epochs = epochs;
    }
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }

    let (split, manifest) = load_dataset(&cfg)?;
    let mut model = cfg.model_config();
    if split.fixed_length != model.input_len || split.num_classes != model.classifier.num_classes {
        return Err(CliError::Core(soundmorph::Error::Dataset(format!(
            "dataset has {} classes of {} samples; the {:?} preset expects {} classes of {}",
            split.num_classes, split.fixed_length, cfg.dataset.kind, model.classifier.num_classes, model.input_len
        ))));
    }
    model.sample_rate = split.sample_rate;

    let id = args
        .run_id
        .clone()
        .unwrap_or_else(|| default_run_id(&cfg.model.arch.to_string(), cfg.model.seed));
    let run = RunDir::create(&args.runs_dir, &id)?;
    manifest.write(run.manifest())?;
    cfg.dataset.manifest = Some(absolute(&run.manifest())?);
    cfg.save(&run.config())?;

    let params = ModelParams::new(model)?;
    save_checkpoint(&params, &run.initial_checkpoint())?;
    let epochs = cfg.train.epochs;
    let ckpt_dir = run.checkpoints();
    let hooks = TrainHooks {
        checkpoint_dir: Some(&ckpt_dir),
        on_epoch: Some(Box::new(move |r: &LossRecord| {
            eprintln!(
                "epoch {}/{epochs}: recon {:.6} kl {:.4} class {:.4}",
                r.epoch, r.recon, r.kl, r.class_ce
            );
        })),
    };
    let (_, records) = train(params, &split, &cfg.train, hooks)?;
    write_loss_csv(&run.losses(), &records)?;
    Ok(run)
}

pub struct LoadedModel {
    pub params: ModelParams,
    pub split: DatasetSplit,
    pub manifest_path: PathBuf,
    pub run: Option<RunDir>,
}

pub fn load_model(args: &ModelArgs) -> CliResult<LoadedModel> {
    let run = args.run.as_ref().map(RunDir::open);
    let checkpoint = args
        .checkpoint
        .clone()
        .or_else(|| run.as_ref().map(RunDir::final_checkpoint))
        .ok_or_else(|| CliError::Usage("pass --run or --checkpoint".into()))?;
    let manifest_path = args
        .manifest
        .clone()
        .or_else(|| run.as_ref().map(RunDir::manifest))
        .ok_or_else(|| CliError::Usage("pass --run or --manifest".into()))?;
    let params = load_checkpoint(&checkpoint)?;
    let split = load_split_from_manifest(&manifest_path)?;
    if split.fixed_length != params.input_len() {
        return Err(CliError::Core(soundmorph::Error::Shape(format!(
            "checkpoint expects {} samples, manifest clips have {}",
            params.input_len(),
            split.fixed_length
        ))));
    }
    if split.num_classes > params.num_classes() {
        return Err(CliError::Core(soundmorph::Error::Shape(format!(
            "manifest has {} classes, the model classifies {}",
            split.num_classes,
            params.num_classes()
        ))));
    }
    Ok(LoadedModel {
        params,
        split,
        manifest_path,
        run,
    })
}

fn output_dir(out: &Option<PathBuf>, run: &Option<RunDir>, pick: fn(&RunDir) -> PathBuf) -> CliResult<PathBuf> {
    let dir = out
        .clone()
        .or_else(|| run.as_ref().map(pick))
        .ok_or_else(|| CliError::Usage("pass --out when no --run is given".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(dir)
}

fn run_config(run: &Option<RunDir>) -> CliResult<Option<ExperimentConfig>> {
    match run {
        Some(r) if r.config().is_file() => Ok(Some(ExperimentConfig::load(&r.config())?)),
        _ => Ok(None),
    }
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let m = load_model(&args.model)?;
    let out = output_dir(&args.out, &m.run, RunDir::eval)?;
    let cfg = match &args.config {
        Some(p) => Some(ExperimentConfig::load(p)?),
        None => run_config(&m.run)?,
    };
    let mfcc = cfg.as_ref().map(|c| c.mfcc.clone()).unwrap_or_default();
    let epochs = match &m.run {
        Some(r) if r.losses().is_file() => read_loss_csv(&r.losses())?.len(),
        _ => 0,
    };
    let meta = RunMetadata {
        arch: m.params.tag().to_string(),
        seed: m.params.config().seed,
        epochs,
    };

    let classes = m.split.num_classes;
    let reference = project_dataset(&m.params, &m.split.train, classes)?;
    let (queries, accuracy) = if m.split.test.is_empty() {
        let acc = knn1_leave_one_out_accuracy(&reference)?;
        (reference.clone(), acc)
    } else {
        let q = project_dataset(&m.params, &m.split.test, classes)?;
        let acc = knn1_accuracy(&reference, &q)?;
        (q, acc)
    };
    write_knn_csv(&out.join("knn.csv"), accuracy, reference.len(), queries.len(), &meta)?;
    queries.write_csv(&out.join("latents.csv"))?;
    write_projection_csv(&out.join("projection.csv"), &export_projection_2d(&queries)?)?;
    let report = deviation_report_with_latent(&m.params, &m.split, &queries, &mfcc)?;
    write_deviation_csv(&out.join("deviation.csv"), &report, &meta)?;
    println!(
        "{}",
        serde_json::json!({
            "knn1_accuracy": accuracy,
            "deviation_mean": report.overall_mean,
            "deviation_std": report.overall_std,
            "out": out,
        })
    );
    Ok(())
}

fn evaluation_latents(m: &LoadedModel) -> CliResult<LatentDataset> {
    Ok(project_dataset(&m.params, m.split.evaluation_part(), m.split.num_classes)?)
}

fn cmd_centers(args: CentersArgs) -> CliResult<()> {
    let m = load_model(&args.model)?;
    let out = output_dir(&args.out, &m.run, RunDir::centers)?;
    let centers = decode_centers(&m.params, &evaluation_latents(&m)?)?;
    for path in write_centers(&centers, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

/// A morph endpoint as written on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum Endpoint {
    Class(usize),
    Source(String),
    Vector(Vec<f64>),
}

impl Endpoint {
    pub fn parse(text: &str) -> CliResult<Self> {
        let text = text.trim();
        if let Some(n) = text.strip_prefix("class:") {
            return n
                .parse()
                .map(Endpoint::Class)
                .map_err(|_| CliError::Usage(format!("bad class index in `{text}`")));
        }
        if text.contains(',') {
            return text
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Endpoint::Vector)
                .map_err(|_| CliError::Usage(format!("bad latent vector `{text}`")));
        }
        if let Ok(n) = text.parse::<usize>() {
            return Ok(Endpoint::Class(n));
        }
        Ok(Endpoint::Source(text.to_string()))
    }

    fn slug(&self) -> String {
        match self {
            Endpoint::Class(n) => format!("class{n}"),
            Endpoint::Source(s) => s.trim_end_matches(".wav").replace(|c: char| !c.is_alphanumeric(), "_"),
            Endpoint::Vector(_) => "point".into(),
        }
    }
}

fn resolve_endpoint(m: &LoadedModel, latent: &LatentDataset, e: &Endpoint) -> CliResult<Vec<f64>> {
    match e {
        Endpoint::Class(n) => Ok(class_center(latent, *n)?),
        Endpoint::Vector(v) => Ok(v.clone()),
        Endpoint::Source(id) => {
            let clip = m
                .split
                .iter()
                .find(|(_, c)| c.source_id == *id || c.source_id.trim_end_matches(".wav") == id)
                .ok_or_else(|| CliError::Usage(format!("no clip with source id `{id}` in {}", m.manifest_path.display())))?;
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok(latent_of(&m.params, &clip.1.clip, DecodeMode::Mean, &mut rng)?)
        }
    }
}

fn cmd_morph(args: MorphArgs) -> CliResult<()> {
    // check the flags before paying for the model
    MorphRequest::new(Vec::new(), Vec::new(), args.steps, args.gap_ms)?;
    let (from, to) = (Endpoint::parse(&args.from)?, Endpoint::parse(&args.to)?);
    let m = load_model(&args.model)?;
    let latent = evaluation_latents(&m)?;
    let req = MorphRequest::new(
        resolve_endpoint(&m, &latent, &from)?,
        resolve_endpoint(&m, &latent, &to)?,
        args.steps,
        args.gap_ms,
    )?;
    let result = render_morph(&m.params, &req)?;
    let name = args.name.clone().unwrap_or_else(|| format!("{}-to-{}", from.slug(), to.slug()));
    let out = output_dir(&args.out, &m.run, RunDir::morphs)?.join(name);
    for path in write_morph(&result, &out)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> CliResult<()> {
    let run = args.model.run.as_ref().map(RunDir::open);
    let cfg = ServiceConfig {
        checkpoint: args
            .model
            .checkpoint
            .clone()
            .or_else(|| run.as_ref().map(RunDir::final_checkpoint))
            .ok_or_else(|| CliError::Usage("pass --run or --checkpoint".into()))?,
        manifest: args
            .model
            .manifest
            .clone()
            .or_else(|| run.as_ref().map(RunDir::manifest))
            .ok_or_else(|| CliError::Usage("pass --run or --manifest".into()))?,
        bind: args.bind,
        decode_mode: args.decode_mode,
    };
    crate::server::serve(cfg)
}

fn cmd_cluster(args: ClusterArgs) -> CliResult<()> {
    let dir = absolute(&args.drums)?;
    let clips: Vec<_> = load_drum_clips(&dir)?.into_iter().map(|(_, c)| c).collect();
    let model = cluster_drums(&clips, args.k, args.seed)?;
    let split = build_drum_dataset(&dir, &model)?;
    split.manifest().write(&args.out)?;
    let mut counts = vec![0usize; model.k()];
    for c in &split.train {
        counts[c.label] += 1;
    }
    println!(
        "{}",
        serde_json::json!({ "clips": split.train.len(), "cluster_sizes": counts, "manifest": args.out })
    );
    Ok(())
}
