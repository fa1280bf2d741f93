//! `jnmr` command-line driver.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use jnmr::ablation::{run_ablation, Suite};
use jnmr::config::RunConfig;
use jnmr::data::{write_dataset, Split};
use jnmr::eval::evaluate;
use jnmr::infer::interpolate;
use jnmr::oracle::{oracle_check, OracleConfig};
use jnmr::train::{load_checkpoint, run_training, Trainer};

#[derive(Parser)]
#[command(name = "jnmr", version, about = "Four-frame video interpolation with regressed quadratic motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; defaults to the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic septuplet dataset to a directory.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model, checkpointing every epoch into --out.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint already in --out.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-sequence JSON lines; the summary always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add slow/medium/fast motion terciles.
        #[arg(long)]
        stratify: bool,
    },
    /// Predict the middle frame from four images in temporal order.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(num_args = 4, required = true, value_names = ["T-2", "T-1", "T+1", "T+2"])]
        inputs: Vec<PathBuf>,
    },
    /// Train every variant of an ablation suite under one budget.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// regression_modes, components, cfse_sources or hierarchy.
        #[arg(long, default_value = "regression_modes")]
        suite: String,
        /// Directory for table.txt and table.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the closed-form motion math against analytic trajectories.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random scenes per trajectory family.
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn generate_data(common: &Common, out: &Path) -> Result<()> {
    let mut cfg = common.run_config()?.data.generate;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let manifest = write_dataset(&cfg, out)?;
    let train = manifest.scenes.iter().filter(|s| s.split == Split::Train).count();
    println!(
        "wrote {} sequences ({train} train, {} test) of {}x{} to {}",
        manifest.scenes.len(),
        manifest.scenes.len() - train,
        cfg.width,
        cfg.height,
        out.display()
    );
    Ok(())
}

fn train(common: &Common, out: &Path, resume: bool) -> Result<()> {
    let cfg = common.run_config()?;
    let train = cfg.data.load(Split::Train)?;
    let test = cfg.data.load(Split::Test)?;
    let mut trainer = if resume {
        Trainer::resume(out)?
    } else {
        Trainer::new(cfg.train.clone())?
    };
    write_text(&out.join("run.toml"), &cfg.to_toml()?)?;
    let record = run_training(&mut trainer, &train, Some(&test), Some(out))?;
    for e in &record.epochs {
        println!(
            "epoch {:>3} lr {:.2e} loss {:.6} (charbonnier {:.6} perceptual {:.6} deformation {:.6}) {:.1}s",
            e.epoch, e.learning_rate, e.loss, e.charbonnier, e.perceptual, e.deformation, e.seconds
        );
    }
    if let Some(m) = record.final_metric() {
        println!("test psnr {:.4} ssim {:.5} over {} samples", m.psnr, m.ssim, m.samples);
    }
    record.write(&out.join("run_record.json"))?;
    Ok(())
}

fn eval(common: &Common, checkpoint: &Path, out: Option<&Path>, stratify: bool) -> Result<()> {
    let cfg = common.run_config()?;
    let trained = load_checkpoint(checkpoint)?;
    let test = cfg.data.load(Split::Test)?;
    let report = evaluate(&trained.model, &trained.params, &test, stratify, trained.manifest.config.eval_batch_size)?;
    println!("psnr {:.4} ssim {:.5} over {} samples", report.mean_psnr, report.mean_ssim, report.rows.len());
    for s in &report.strata {
        println!("  {:<6} {:>4} psnr {:.4} ssim {:.5}", s.name, s.count, s.psnr, s.ssim);
    }
    if let Some(path) = out {
        let mut buf = Vec::new();
        report.write_lines(&mut buf)?;
        write_text(path, std::str::from_utf8(&buf)?)?;
    }
    Ok(())
}

fn ablate(common: &Common, suite: &str, out: Option<&Path>) -> Result<()> {
    let suite: Suite = suite.parse()?;
    let cfg = common.run_config()?;
    let train = cfg.data.load(Split::Train)?;
    let test = cfg.data.load(Split::Test)?;
    let table = run_ablation(suite, &cfg.train, &train, &test, |row| {
        eprintln!("{:<34} psnr {:.4} ssim {:.5}", row.label, row.psnr, row.ssim);
    })?;
    print!("{table}");
    if let Some(dir) = out {
        write_text(&dir.join("table.txt"), &table.to_string())?;
        write_text(&dir.join("table.json"), &serde_json::to_string_pretty(&table)?)?;
    }
    Ok(())
}

fn oracle(seed: u64, scenes: usize, out: Option<&Path>) -> Result<()> {
    let report = oracle_check(&OracleConfig {
        seed,
        scenes_per_family: scenes,
        ..OracleConfig::default()
    });
    println!("{report}");
    if let Some(path) = out {
        write_text(path, &serde_json::to_string_pretty(&report)?)?;
    }
    if !report.passed() {
        bail!("oracle check failed");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateData { common, out } => generate_data(&common, &out),
        Command::Train { common, out, resume } => train(&common, &out, resume),
        Command::Eval {
            common,
            checkpoint,
            out,
            stratify,
        } => eval(&common, &checkpoint, out.as_deref(), stratify),
        Command::Interpolate { checkpoint, out, inputs } => {
            let paths = [&*inputs[0], &*inputs[1], &*inputs[2], &*inputs[3]];
            interpolate(&checkpoint, &paths, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Ablate { common, suite, out } => ablate(&common, &suite, out.as_deref()),
        Command::OracleCheck { seed, scenes, out } => oracle(seed, scenes, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("jnmr: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
