//! Command-line entry point: synthetic data generation, training,
//! inference, overlay export, evaluation, and template validation.

use clap::{Parser, Subcommand};
use genlmk::data::{synth_generate, SynthConfig};
use genlmk::error::{Error, Result};
use genlmk::template::Template;
use genlmk::training::{
    fit, infer_dir, load_checkpoint, load_train_config, run_eval, run_overlay,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "genlmk", version, about = "Unsupervised landmark discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic unpaired benchmark dataset.
    Synth {
        /// TOML file mirroring the synthesis config; optional, defaults apply.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a TOML config; flags override config keys.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<u64>,
        /// Resume from this checkpoint (run root or step directory).
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict landmark positions for every frame of a directory.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        /// Output JSONL file of per-frame pixel positions.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write overlay images (template drawn at predicted positions).
    Overlay {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint against a dataset directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Output JSON report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Template file tooling.
    Template {
        #[command(subcommand)]
        command: TemplateCommand,
    },
}

#[derive(Subcommand)]
enum TemplateCommand {
    /// Check a template file against every structural invariant.
    Validate { file: PathBuf },
}

fn load_synth_config(path: Option<&PathBuf>) -> Result<SynthConfig> {
    match path {
        None => Ok(SynthConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
        }
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg = load_synth_config(config.as_ref())?;
            let manifest = synth_generate(&cfg, &out)?;
            println!(
                "wrote {} marked + {} unmarked frames at {}x{} to {}",
                manifest.n_marked,
                manifest.n_unmarked,
                manifest.resolution,
                manifest.resolution,
                out.display()
            );
        }
        Command::Train { config, out, seed, steps, resume } => {
            let mut cfg = load_train_config(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(steps) = steps {
                cfg.steps = steps;
            }
            let final_ckpt = fit(&cfg, &out, resume.as_deref())?;
            println!("training finished; final checkpoint at {}", final_ckpt.display());
        }
        Command::Infer { ckpt, frames, out } => {
            let state = load_checkpoint(&ckpt)?;
            let track = infer_dir(&state, &frames)?;
            track.save_jsonl(&out)?;
            println!(
                "wrote {} frames x {} landmarks to {}",
                track.n_frames(),
                track.n_landmarks(),
                out.display()
            );
        }
        Command::Overlay { ckpt, frames, out } => {
            let state = load_checkpoint(&ckpt)?;
            let n = run_overlay(&state, &frames, &out)?;
            println!("wrote {n} overlays to {}", out.display());
        }
        Command::Eval { ckpt, data, out } => {
            let state = load_checkpoint(&ckpt)?;
            let mut report = run_eval(&state, &data)?;
            report.checkpoint = ckpt.display().to_string();
            std::fs::write(&out, serde_json::to_string_pretty(&report).unwrap())
                .map_err(|e| Error::io(&out, e))?;
            println!(
                "{} frames, {} landmarks at width {}",
                report.n_frames, report.n_landmarks, report.image_width
            );
            if let Some(err) = &report.error {
                println!(
                    "landmark error: mean {:.3} px ({:.2}% of width), median {:.3} px",
                    err.mean_px,
                    err.mean_frac_width * 100.0,
                    err.median_px
                );
            }
            if let Some(j) = &report.jitter {
                println!(
                    "temporal jitter: raw {:.3} px, detrended {:.3} px",
                    j.raw_px, j.detrended_px
                );
            }
            if let Some(j) = &report.gt_jitter {
                println!("ground-truth jitter: raw {:.3} px", j.raw_px);
            }
            println!("report written to {}", out.display());
        }
        Command::Template { command: TemplateCommand::Validate { file } } => {
            let template = Template::load(&file)?;
            let violations = template.validate();
            if violations.is_empty() {
                println!(
                    "{}: valid ({} landmarks, {} lines, {} springs)",
                    file.display(),
                    template.n_landmarks,
                    template.lines.len(),
                    template.springs.len()
                );
            } else {
                for v in &violations {
                    println!("{}: {:?}", v.code(), v);
                }
                return Ok(3);
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
