//! `keystego`: hide an image inside another under a passphrase.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use keystego::inn::{secret_divergence_report, Model};
use keystego::metrics::{MetricsReport, PairMetrics};
use keystego::pipeline::{diff_visualize, embed, extract, probe_passphrase, ImageU8};
use keystego::training::{
    attack_sim, default_variants, load_png_dir, run_ablation, synthetic_images, train_with_progress, AttackConfig,
    AttackMode, AttackReport, Dataset, KeyMode, TrainConfig,
};
use rand::Rng;

#[derive(Parser)]
#[command(name = "keystego", version, about = "Passphrase-keyed invertible image steganography")]
struct Cli {
    /// Root seed for every random choice (crops, pairing, init, z).
    /// Without it, extraction draws z from OS entropy and training uses 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// JSON training config; missing fields take desk defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch history as CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Hide SECRET inside HOST.
    Embed {
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        secret: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the secret from a container.
    Extract {
        #[arg(long)]
        container: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed, extract with the right key and a wrong one, and report
    /// C-, S- and S'-pair metrics.
    Evaluate {
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        secret: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        /// Passphrase for the S'-pair. Defaults to the passphrase with a
        /// fixed suffix appended.
        #[arg(long)]
        wrong_key: Option<String>,
        #[arg(long)]
        model: PathBuf,
        /// Write the report as JSON instead of printing a table.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Sweep decay rates and preprocessing modes.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV output.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-block metrics between the secret pipeline and the secret.
    Divergence {
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        secret: PathBuf,
        #[command(flatten)]
        key: KeyArg,
        #[arg(long)]
        model: PathBuf,
        /// CSV output; the table is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Amplified host/container difference image.
    Diffviz {
        #[arg(long)]
        host: PathBuf,
        #[arg(long)]
        container: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a surrogate attacker against a model.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value = "extraction")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "random")]
        key_mode: KeyModeArg,
        /// Surrogate optimiser steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Surrogate crop size.
        #[arg(long)]
        crop: Option<usize>,
        /// Write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct KeyArg {
    /// Passphrase. Never printed or written anywhere.
    #[arg(long, env = "KEYSTEGO_KEY", hide_env_values = true)]
    key: String,
}

#[derive(Args)]
struct DataArgs {
    /// Directory of RGB PNGs. Without it a synthetic corpus is used.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of synthetic images when no directory is given.
    #[arg(long, default_value_t = 24)]
    synthetic: usize,
    /// Side of each synthetic image.
    #[arg(long, default_value_t = 96)]
    synthetic_size: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Embedding,
    Extraction,
}

#[derive(Clone, Copy, ValueEnum)]
enum KeyModeArg {
    None,
    Fixed,
    Random,
}

fn read_image(path: &Path) -> Result<ImageU8> {
    ImageU8::read_png(path).with_context(|| format!("cannot read image {}", path.display()))
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).with_context(|| format!("cannot load model {}", path.display()))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
        }
        None => TrainConfig::desk(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(args: &DataArgs, val: usize, seed: u64) -> Result<Dataset> {
    let images = match &args.data {
        Some(dir) => load_png_dir(dir).with_context(|| format!("cannot load images from {}", dir.display()))?,
        None => synthetic_images(args.synthetic, args.synthetic_size, args.synthetic_size, seed),
    };
    Ok(Dataset::split(images, val)?)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Train { data, config, out, history } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let ds = load_dataset(&data, cfg.val_images, cfg.seed)?;
            eprintln!(
                "training on {} images ({} held out), {} steps",
                ds.train.len(),
                ds.val.len(),
                cfg.total_steps()
            );
            let (model, hist) = train_with_progress(&ds, &cfg, |r| {
                eprintln!(
                    "epoch {:>4}  loss {:>10.3}  val {:>10.3}  PSNR-C {:>6.2}  PSNR-S {:>6.2}  lr {:.2e}",
                    r.epoch, r.loss, r.val_loss, r.psnr_c, r.psnr_s, r.lr
                )
            })?;
            model.save(&out).with_context(|| format!("cannot write {}", out.display()))?;
            if let Some(h) = history {
                std::fs::write(&h, hist.to_csv()?).with_context(|| format!("cannot write {}", h.display()))?;
            }
            println!("{}", hist.last.report);
        }
        Command::Embed { host, secret, key, model, out } => {
            let model = load_model(&model)?;
            let (container, _) = embed(&read_image(&host)?, &read_image(&secret)?, key.key.as_bytes(), &model)?;
            container.write_png(&out)?;
        }
        Command::Extract { container, key, model, out } => {
            let model = load_model(&model)?;
            let z_seed = seed.unwrap_or_else(|| rand::rng().random());
            let rec = extract(&read_image(&container)?, key.key.as_bytes(), &model, z_seed)?;
            rec.write_png(&out)?;
        }
        Command::Evaluate { host, secret, key, wrong_key, model, json } => {
            let model = load_model(&model)?;
            let (h, s) = (read_image(&host)?, read_image(&secret)?);
            let pass = key.key.as_bytes();
            let wrong = wrong_key.map_or_else(|| probe_passphrase(pass), String::into_bytes);
            if wrong == pass {
                bail!("the wrong-key probe must differ from the passphrase");
            }
            let z_seed = seed.unwrap_or(0);
            let (c, _) = embed(&h, &s, pass, &model)?;
            let rec = extract(&c, pass, &model, z_seed)?;
            let bad = extract(&c, &wrong, &model, z_seed)?;
            let report = MetricsReport {
                c: PairMetrics::measure(&h, &c)?,
                s: PairMetrics::measure(&s, &rec)?,
                s_prime: Some(PairMetrics::measure(&s, &bad)?),
            };
            match json {
                Some(p) => std::fs::write(&p, report.to_json()?).with_context(|| format!("cannot write {}", p.display()))?,
                None => println!("{report}"),
            }
        }
        Command::Ablate { data, config, out } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let ds = load_dataset(&data, cfg.val_images, cfg.seed)?;
            let report = run_ablation(&ds, &cfg, &default_variants(), |row| {
                eprintln!("done: {:?} r={:?} loss {:.3}", row.variant.preprocess, row.variant.decay, row.loss)
            })?;
            std::fs::write(&out, report.to_csv()?).with_context(|| format!("cannot write {}", out.display()))?;
            println!("{report}");
        }
        Command::Divergence { host, secret, key, model, out } => {
            let model = load_model(&model)?;
            let report = secret_divergence_report(&model, &read_image(&host)?, &read_image(&secret)?, key.key.as_bytes())?;
            if let Some(p) = out {
                std::fs::write(&p, report.to_csv()?).with_context(|| format!("cannot write {}", p.display()))?;
            }
            println!("{report}");
        }
        Command::Diffviz { host, container, out } => {
            diff_visualize(&read_image(&host)?, &read_image(&container)?)?.write_png(&out)?;
        }
        Command::Attack { model, data, mode, key_mode, steps, crop, json } => {
            let model = load_model(&model)?;
            let defaults = AttackConfig::default();
            let cfg = AttackConfig {
                steps: steps.unwrap_or(defaults.steps),
                crop_size: crop.unwrap_or(defaults.crop_size),
                seed: seed.unwrap_or(0),
                ..defaults
            };
            let ds = load_dataset(&data, 4, cfg.seed)?;
            let mode = match mode {
                ModeArg::Embedding => AttackMode::Embedding,
                ModeArg::Extraction => AttackMode::Extraction,
            };
            let key_mode = match key_mode {
                KeyModeArg::None => KeyMode::None,
                KeyModeArg::Fixed => KeyMode::Fixed,
                KeyModeArg::Random => KeyMode::Random,
            };
            let report = attack_sim(&model, &ds, mode, key_mode, &cfg)?;
            if let Some(p) = json {
                let text = serde_json::to_string_pretty(&report)?;
                std::fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))?;
            }
            print!("{}", AttackReport::table(&[report]));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
