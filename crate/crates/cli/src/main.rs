//! `dsat`: degrade images, train the encoder and network, evaluate, embed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dsat_core::checkpoint;
use dsat_core::config::RunConfig;
use dsat_core::degradation::{degrade, DegradationSpec, ImageBuffer};
use dsat_core::metrics::evaluate;
use dsat_core::network::Ablation;
use dsat_core::train::data::load_manifest_images;
use dsat_core::train::run::{prepare_dir, CONFIG_FILE};
use dsat_core::train::{run_encoder, run_joint, training_pool, Models, Parts, TrainState};
use dsat_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "dsat", version, about = "Blind super-resolution with learned degradation representations")]
struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Blur, downsample and add noise to one PNG.
    Degrade(DegradeArgs),
    /// Contrastive pretraining of the degradation encoder.
    TrainEncoder(TrainArgs),
    /// Train the super-resolution network (with the encoder, unless ablated).
    Train(TrainArgs),
    /// Score a trained model against bicubic upsampling.
    Eval(EvalArgs),
    /// Write encoder embeddings of images or image tiles as CSV.
    Embed(EmbedArgs),
}

#[derive(Args, Debug)]
struct DegradeArgs {
    /// HR input PNG.
    #[arg(long)]
    input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// Downscaling factor (2, 3 or 4).
    #[arg(long)]
    scale: usize,
    /// Isotropic blur width.
    #[arg(long, conflicts_with = "aniso", required_unless_present = "aniso", allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Anisotropic blur as `lambda1,lambda2,theta`.
    #[arg(long, value_name = "L1,L2,THETA", allow_hyphen_values = true)]
    aniso: Option<String>,
    /// Noise standard deviation on the 0-255 scale.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    noise: f64,
    /// Seed of the noise stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Odd blur kernel side.
    #[arg(long, default_value_t = 21)]
    kernel_size: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML configuration; defaults to the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for logs and checkpoints.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured image manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Ablation preset, `model1` to `model5`.
    #[arg(long, value_name = "NAME")]
    ablation: Option<String>,
    /// Start from a pretrained encoder checkpoint.
    #[arg(long, conflicts_with = "resume")]
    encoder: Option<PathBuf>,
    /// Continue from a full training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// TOML configuration; defaults to `config.toml` beside the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// HR images to degrade and restore.
    #[arg(long)]
    manifest: PathBuf,
    /// Degradation, e.g. `sigma=1.2,noise=5` or `lambda1=2,lambda2=0.5,theta=0.3`; repeatable.
    #[arg(long, required = true)]
    spec: Vec<String>,
    /// Output CSV.
    #[arg(long)]
    report: PathBuf,
    /// Seed of the degradation noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    /// Encoder or model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// TOML configuration; defaults to `config.toml` beside the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    /// LR images to embed.
    #[arg(long)]
    manifest: PathBuf,
    /// Side of non-overlapping square tiles; whole images when omitted.
    #[arg(long)]
    patch: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

/// Short error category and process exit code.
fn classify(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config(_) | Error::Parameter(_) => ("config", 2),
        Error::Numeric(_) => ("numeric", 4),
        Error::Dimension(_) | Error::Data(_) | Error::Checkpoint(_) | Error::Io { .. } | Error::Image { .. } => {
            ("data", 3)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::desk()),
    }
}

/// Explicit config, else `config.toml` next to the checkpoint, else the desk preset.
fn config_for_checkpoint(config: Option<&Path>, ckpt: &Path) -> Result<RunConfig> {
    let sibling = ckpt.parent().unwrap_or(Path::new(".")).join(CONFIG_FILE);
    let cfg = if config.is_some() {
        load_config(config)?
    } else if sibling.exists() {
        RunConfig::load(&sibling)?
    } else {
        log::warn!("no configuration given or found beside {}; using the desk preset", ckpt.display());
        RunConfig::desk()
    };
    log::info!("resolved configuration:\n{}", cfg.to_toml_string());
    Ok(cfg)
}

fn resolve_train_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(m) = &args.manifest {
        cfg.data.manifest = Some(m.clone());
    }
    if let Some(name) = &args.ablation {
        cfg.model.ablation = Ablation::from_name(name)?;
    }
    cfg.finalize()?;
    log::info!("resolved configuration:\n{}", cfg.to_toml_string());
    Ok(cfg)
}

fn degrade_cmd(a: &DegradeArgs) -> Result<()> {
    let mut spec = match (&a.sigma, &a.aniso) {
        (Some(s), None) => DegradationSpec::isotropic(*s, a.scale, a.noise),
        (None, Some(text)) => {
            let v: Vec<f64> = text
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("--aniso expects three numbers, got `{text}`")))?;
            match v[..] {
                [l1, l2, theta] => DegradationSpec::anisotropic(l1, l2, theta, a.scale, a.noise),
                _ => return Err(Error::Config(format!("--aniso expects three numbers, got `{text}`"))),
            }
        }
        _ => return Err(Error::Config("give exactly one of --sigma and --aniso".into())),
    };
    spec.kernel_size = a.kernel_size;
    spec.validate()?;
    log::info!("degrading {} with {spec} at x{} (seed {})", a.input.display(), a.scale, a.seed);
    let hr = ImageBuffer::load_png(&a.input)?;
    let lr = degrade(&hr, &spec, a.seed)?;
    lr.save_png(&a.out)
}

fn train_encoder_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(a)?;
    if !cfg.model.ablation.degradation_learning {
        return Err(Error::Config("this ablation has no contrastive objective to pretrain".into()));
    }
    if cfg.train.encoder_steps() == 0 {
        return Err(Error::Config("train.encoder_pretrain_epochs must be positive".into()));
    }
    prepare_dir(&a.out, &cfg)?;
    let pool = training_pool(&cfg.data, cfg.seed)?;
    let mut state = TrainState::<f32>::init(&cfg)?;
    if let Some(r) = &a.resume {
        state.restore(&checkpoint::load(r)?, Parts::EncoderOnly)?;
    }
    run_encoder(&mut state, &cfg, &pool, &a.out)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(a)?;
    prepare_dir(&a.out, &cfg)?;
    let pool = training_pool(&cfg.data, cfg.seed)?;
    let mut state = TrainState::<f32>::init(&cfg)?;
    if let Some(r) = &a.resume {
        state.restore(&checkpoint::load(r)?, Parts::All)?;
        log::info!("resuming at step {}", state.step);
    } else if let Some(e) = &a.encoder {
        state.restore(&checkpoint::load(e)?, Parts::EncoderOnly)?;
    }
    if cfg.model.ablation.degradation_learning && state.encoder_step < cfg.train.encoder_steps() {
        run_encoder(&mut state, &cfg, &pool, &a.out)?;
    }
    run_joint(&mut state, &cfg, &pool, &a.out)?;
    Ok(())
}

fn load_models(config: Option<&Path>, ckpt: &Path) -> Result<Models<f32>> {
    let cfg = config_for_checkpoint(config, ckpt)?;
    let records = checkpoint::load(ckpt)?;
    let mut models = Models::<f32>::init(&cfg)?;
    models.load_inference(&records)?;
    Ok(models)
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let models = load_models(a.config.as_deref(), &a.model)?;
    let scale = models.net.config.scale;
    let specs: Vec<DegradationSpec> =
        a.spec.iter().map(|s| DegradationSpec::parse(s, scale)).collect::<Result<_>>()?;
    let images: Vec<(String, ImageBuffer)> = load_manifest_images(&a.manifest)?
        .into_iter()
        .map(|(p, img)| (p.display().to_string(), img))
        .collect();
    let report = evaluate(&models, &images, &specs, a.seed)?;
    report.save_csv(&a.report)?;
    log::info!(
        "mean PSNR {:.3} dB (bicubic {:.3} dB), SSIM {:.4} (bicubic {:.4})",
        report.mean_psnr(),
        report.mean_bicubic_psnr(),
        report.mean_ssim(),
        report.mean_bicubic_ssim()
    );
    Ok(())
}

fn embed_cmd(a: &EmbedArgs) -> Result<()> {
    let cfg = config_for_checkpoint(a.config.as_deref(), &a.model)?;
    let records = checkpoint::load(&a.model)?;
    let mut models = Models::<f32>::init(&cfg)?;
    models.query.load_from(checkpoint::view(&records), "encoder.")?;
    let dim = cfg.encoder.embed_dim;
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", a.out.display()));
    let mut w = csv::Writer::from_path(&a.out).map_err(csv_err)?;
    let mut header = vec!["image".to_string(), "y".into(), "x".into()];
    header.extend((0..dim).map(|i| format!("d{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (path, img) in load_manifest_images(&a.manifest)? {
        let img = img.to_rgb();
        let (h, wd) = (img.height(), img.width());
        let tiles: Vec<(usize, usize, ImageBuffer)> = match a.patch {
            None => vec![(0, 0, img)],
            Some(0) => return Err(Error::Config("--patch must be positive".into())),
            Some(p) => {
                if p > h || p > wd {
                    return Err(Error::Data(format!("{}: {h}x{wd} is smaller than a {p} tile", path.display())));
                }
                let mut t = Vec::new();
                for y in (0..=h - p).step_by(p) {
                    for x in (0..=wd - p).step_by(p) {
                        t.push((y, x, img.crop(y, x, p, p)?));
                    }
                }
                t
            }
        };
        for (y, x, tile) in tiles {
            let (_, e) = models.represent(&tile.to_tensor())?;
            let mut row = vec![path.display().to_string(), y.to_string(), x.to_string()];
            row.extend(e.data().iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Data(format!("{}: {e}", a.out.display())))
}

fn report(kind: &str, msg: &str, code: u8) -> ExitCode {
    let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{kind}]: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return report("config", first.trim_start_matches("error: "), 2);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Degrade(a) => degrade_cmd(a),
        Command::TrainEncoder(a) => train_encoder_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Embed(a) => embed_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = classify(&e);
            report(kind, &e.to_string(), code)
        }
    }
}
