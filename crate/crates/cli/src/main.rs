//! `spm` — desk-scale source-free domain adaptation toolkit.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spm_cli::config::RunConfig;
use spm_cli::{checkpoint, dataset_io, metrics, pngio};
use spm_core::augment::{sample_lambda, spm_mix, strong_augment, SpmParams};
use spm_core::data::{gen_dataset, DomainSpec, LabeledDataset};
use spm_core::rng::Rng;
use spm_core::trainer::{
    ablate, adapt, evaluate, experiment_datasets, train_source, ExperimentConfig,
};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "spm", version, about = "Shuffle PatchMix source-free domain adaptation, desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shape dataset for one domain.
    GenData(GenDataArgs),
    /// Apply SPM to every image in a directory, writing before/after pairs.
    Augment(AugmentArgs),
    /// Train the source model on labeled source-domain data.
    TrainSource(ConfigArgs),
    /// Adapt a source checkpoint to the unlabeled target domain.
    Adapt(AdaptArgs),
    /// Evaluate a checkpoint (per-class and mean accuracy).
    Eval(EvalArgs),
    /// Run the five-row component ablation grid.
    Ablate(ConfigArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Domain spec name (photo, sketch, photo-noise, photo-stripes).
    #[arg(long)]
    spec: String,
    /// Number of images.
    #[arg(long)]
    n: usize,
    /// Number of classes.
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AugmentArgs {
    /// Directory of input PNGs (searched recursively).
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Patch count (perfect square dividing the canonical grid).
    #[arg(long)]
    nu: u32,
    /// Beta shape a for the mixing coefficient.
    #[arg(long)]
    a: f64,
    /// Beta shape b for the mixing coefficient.
    #[arg(long)]
    b: f64,
    /// Enable overlap blending.
    #[arg(long)]
    blend: bool,
    /// Linear patch enlargement used by blending.
    #[arg(long, default_value_t = 0.30)]
    overlap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// key=value overrides (dotted paths reach nested fields).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct AdaptArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dump before/after SPM pairs for the first target images here.
    #[arg(long, value_name = "DIR")]
    spm_preview: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to evaluate (defaults to the configured checkpoint path).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Which domain's held-out split to evaluate on.
    #[arg(long, default_value = "target")]
    domain: String,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::Augment(args) => cmd_augment(args),
        Command::TrainSource(args) => cmd_train_source(args),
        Command::Adapt(args) => cmd_adapt(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    let Some(spec) = DomainSpec::named(&args.spec) else {
        bail!("unknown domain spec `{}` (try: photo, sketch, photo-noise, photo-stripes)", args.spec);
    };
    let ds = gen_dataset(&spec, args.n, args.classes, args.seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    dataset_io::save_dataset(&ds, &args.out)?;
    println!(
        "wrote {} images ({} classes) for domain `{}` to {}",
        ds.len(),
        args.classes,
        spec.name,
        args.out.display()
    );
    Ok(())
}

fn cmd_augment(args: AugmentArgs) -> Result<()> {
    let inputs = collect_pngs(&args.input)?;
    if inputs.is_empty() {
        bail!("no .png files under {}", args.input.display());
    }
    std::fs::create_dir_all(&args.out)?;
    for (i, path) in inputs.iter().enumerate() {
        let img = pngio::read_png(path)?;
        let mut rng = Rng::derive(args.seed, &[i as u64]);
        let lambda = sample_lambda(args.a, args.b, &mut rng).map_err(|e| anyhow::anyhow!("{e}"))?;
        let mixed = spm_mix(&img, args.nu, lambda, &mut rng, args.blend, args.overlap)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        pngio::write_png(&img, &args.out.join(format!("{stem}_before.png")))?;
        pngio::write_png(&mixed, &args.out.join(format!("{stem}_after.png")))?;
    }
    println!("augmented {} images into {}", inputs.len(), args.out.display());
    Ok(())
}

fn collect_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).with_context(|| format!("reading {}", d.display()))? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "png") {
                found.push(p);
            }
        }
    }
    found.sort();
    Ok(found)
}

// source train/holdout and target train/holdout per the config: loaded from
// dataset directories when paths are set, generated otherwise
fn resolve_datasets(cfg: &RunConfig) -> Result<[LabeledDataset; 4]> {
    let exp = &cfg.experiment;
    let mut sets = experiment_datasets(exp, cfg.seed).map_err(|e| anyhow::anyhow!("{e}"))?;
    if let Some(dir) = &cfg.paths.source_data {
        sets[0] = dataset_io::load_dataset(Path::new(dir))?;
    }
    if let Some(dir) = &cfg.paths.target_data {
        sets[2] = dataset_io::load_dataset(Path::new(dir))?;
    }
    Ok(sets)
}

fn cmd_train_source(args: ConfigArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    cfg.echo_resolved()?;
    let [src_train, src_eval, _, _] = resolve_datasets(&cfg)?;
    let (params, log) = train_source(&src_train, Some(&src_eval), &cfg.source, &cfg.model, cfg.seed)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let out = cfg.out_dir();
    checkpoint::save_checkpoint(&params, &out.join("source.ckpt"))?;
    metrics::write_text(&out.join("source_train.csv"), &metrics::source_log_csv(&log))?;
    let report = evaluate(&params, &src_eval).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("source model -> {}", out.join("source.ckpt").display());
    print!("{}", metrics::format_eval(&report));
    Ok(())
}

fn cmd_adapt(args: AdaptArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.config.as_deref(), &args.config.overrides)?;
    cfg.echo_resolved()?;
    let [_, _, tgt_train, tgt_eval] = resolve_datasets(&cfg)?;
    let theta_s = checkpoint::load_checkpoint(&cfg.checkpoint_path())?;

    if let Some(dir) = &args.spm_preview {
        dump_spm_preview(&tgt_train, &cfg.spm, cfg.seed, dir)?;
    }

    let mut adapt_cfg = cfg.adapt.clone();
    if let Ok(workers) = std::env::var("SPM_NUM_WORKERS") {
        adapt_cfg.workers = workers
            .parse()
            .context("SPM_NUM_WORKERS must be a positive integer")?;
    }

    let outcome = adapt(&theta_s, &tgt_train, Some(&tgt_eval), &cfg.spm, &cfg.warmup, &adapt_cfg)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let out = cfg.out_dir();
    checkpoint::save_checkpoint(&outcome.params, &out.join("adapted.ckpt"))?;
    checkpoint::save_bank(&outcome.vote_bank, &out.join("vote_bank.bin"))?;
    metrics::write_text(&out.join("metrics.csv"), &metrics::step_metrics_csv(&outcome.metrics))?;

    let report = evaluate(&outcome.params, &tgt_eval).map_err(|e| anyhow::anyhow!("{e}"))?;
    println!("adapted model -> {}", out.join("adapted.ckpt").display());
    print!("{}", metrics::format_eval(&report));
    Ok(())
}

// Fig.-style panels: the original next to its SPM-augmented strong view
fn dump_spm_preview(
    target: &LabeledDataset,
    spm: &SpmParams,
    seed: u64,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let preview = SpmParams { rho: 1.0, ..spm.clone() };
    for (i, img) in target.images.iter().take(16).enumerate() {
        let mut rng = Rng::derive(seed, &[0x51, i as u64]);
        let augmented = strong_augment(img, &preview, 0.5, &mut rng).map_err(|e| anyhow::anyhow!("{e}"))?;
        pngio::write_png(img, &dir.join(format!("{i:02}_before.png")))?;
        pngio::write_png(&augmented, &dir.join(format!("{i:02}_after.png")))?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.config.as_deref(), &args.config.overrides)?;
    let [_, src_eval, _, tgt_eval] = resolve_datasets(&cfg)?;
    let dataset = match args.domain.as_str() {
        "source" => src_eval,
        "target" => tgt_eval,
        other => bail!("--domain must be `source` or `target`, got `{other}`"),
    };
    let path = args.checkpoint.unwrap_or_else(|| cfg.checkpoint_path());
    let params = checkpoint::load_checkpoint(&path)?;
    let report = evaluate(&params, &dataset).map_err(|e| anyhow::anyhow!("{e}"))?;
    print!("{}", metrics::format_eval(&report));
    Ok(())
}

fn cmd_ablate(args: ConfigArgs) -> Result<()> {
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    cfg.echo_resolved()?;
    let exp: ExperimentConfig = cfg.experiment.clone();
    let mut adapt_cfg = cfg.adapt.clone();
    if let Ok(workers) = std::env::var("SPM_NUM_WORKERS") {
        adapt_cfg.workers = workers
            .parse()
            .context("SPM_NUM_WORKERS must be a positive integer")?;
    }
    let rows = ablate(&exp, &cfg.source, &cfg.spm, &cfg.warmup, &adapt_cfg, &cfg.model)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    let csv = metrics::ablation_csv(&rows);
    let out = cfg.out_dir().join("ablation.csv");
    metrics::write_text(&out, &csv)?;
    println!("{csv}");
    println!("ablation table -> {}", out.display());
    Ok(())
}
