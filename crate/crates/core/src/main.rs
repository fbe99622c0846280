use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sepflow::cli::{self, EvalPrompt, SeparateArgs};
use sepflow::config::RunConfig;
use sepflow::Result;

#[derive(Parser)]
#[command(name = "sepflow", version, about = "Promptable flow-matching source separation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a triplet corpus and its manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a separator on a corpus manifest.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Corpus manifest; defaults to `data.corpus` from the config.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a training-state checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Overrides `train.stage`.
        #[arg(long)]
        stage: Option<String>,
    },
    /// Separate one raw f32 mixture into target and residual stems.
    Separate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        text: Option<String>,
        /// Target activity as `start-end` seconds, comma separated.
        #[arg(long)]
        spans: Option<String>,
        /// Frame-aligned visual features (T × 8 f32 LE).
        #[arg(long = "visual-oracle")]
        visual_oracle: Option<PathBuf>,
        /// Add spans predicted from the mixture to the text prompt.
        #[arg(long)]
        predict_spans: bool,
        #[arg(long)]
        longform: bool,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        #[arg(long, default_value_t = 1)]
        beam: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        /// Ground-truth target stem, for the report.
        #[arg(long, requires = "ref_residual")]
        ref_target: Option<PathBuf>,
        #[arg(long, requires = "ref_target")]
        ref_residual: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest with ground truth.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// manifest, text, text+span or text+predicted-span.
        #[arg(long, default_value = "manifest")]
        prompt: String,
        #[arg(long)]
        seed: u64,
    },
    /// Score and gate triplets, optionally pseudo-labelling with a checkpoint.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synth { config, out } => {
            let m = cli::cmd_synth(&RunConfig::load(&config)?, &out)?;
            Ok(format!("wrote {} triplets to {}", m.records.len(), out.display()))
        }
        Command::Train {
            config,
            corpus,
            out,
            resume,
            stage,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = stage {
                cfg.train.stage = s.parse()?;
            }
            let corpus = corpus
                .or_else(|| cfg.data.corpus.clone())
                .ok_or_else(|| sepflow::Error::Usage("no corpus: pass --corpus or set data.corpus".into()))?;
            let o = cli::cmd_train(&cfg, &corpus, &out, resume.as_deref())?;
            Ok(serde_json::to_string(&o)?)
        }
        Command::Separate {
            ckpt,
            input,
            out,
            text,
            spans,
            visual_oracle,
            predict_spans,
            longform,
            window,
            overlap,
            beam,
            seed,
            steps,
            ref_target,
            ref_residual,
        } => {
            let r = cli::cmd_separate(&SeparateArgs {
                ckpt,
                input,
                out_dir: out,
                text,
                spans,
                visual: visual_oracle,
                predict_spans,
                longform,
                window,
                overlap,
                beam,
                seed,
                ode_steps: steps,
                reference: ref_target.zip(ref_residual),
            })?;
            Ok(serde_json::to_string(&r)?)
        }
        Command::Eval {
            ckpt,
            manifest,
            out,
            prompt,
            seed,
        } => {
            let mode: EvalPrompt = prompt.parse()?;
            let s = cli::cmd_eval(&ckpt, &manifest, &out, mode, seed)?;
            Ok(serde_json::to_string(&s)?)
        }
        Command::Filter {
            manifest,
            out,
            ckpt,
            seed,
        } => {
            let o = cli::cmd_filter(&manifest, &out, ckpt.as_deref(), seed)?;
            Ok(serde_json::to_string(&o)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
