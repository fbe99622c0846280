//! Command implementations behind the `sepflow` binary. Each command is a
//! pure function of its config, seeds and input files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::codec::{self, Waveform, FRAME_RATE};
use crate::config::RunConfig;
use crate::data::{self, Manifest, ManifestRecord};
use crate::dit::Separator;
use crate::eval::{self, ItemReport};
use crate::flow::{self, FlowConfig, Separation, WindowPlan, MAX_ONE_SHOT_FRAMES};
use crate::prompt::{encode_span, PromptBundle, SpanTokens, TextPrompt, VisualFeats, VISUAL_DIM};
use crate::span::SpanSet;
use crate::train::{Example, StepLog, Trainer};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.jsonl";
pub const LOSS_LOG: &str = "loss.csv";
pub const FINAL_CKPT: &str = "final.samt";
pub const EMA_CKPT: &str = "ema.samt";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Synthesizes `data.count` triplets into `out_dir` and writes the manifest.
pub fn cmd_synth(config: &RunConfig, out_dir: &Path) -> Result<Manifest> {
    let seed = config.data_seed()?;
    let regimes = data::draw_regimes(&config.data.weights, config.data.count, seed)?;
    for &(r, w) in &config.data.weights {
        if w > 0.0 {
            config.data.synth.validate(r)?;
        }
    }
    create_dir(out_dir)?;
    let records = regimes
        .par_iter()
        .enumerate()
        .map(|(i, &regime)| {
            let item_seed = data::item_seed(seed, i);
            let t = data::make_triplet(regime, item_seed, &config.data.synth)?;
            data::write_triplet(out_dir, &format!("{i:06}"), &t)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        dir: out_dir.to_path_buf(),
        records,
    };
    manifest.save(&out_dir.join(MANIFEST))?;
    Ok(manifest)
}

/// Loads every triplet of a manifest as training examples.
pub fn load_examples(manifest: &Manifest) -> Result<Vec<Example>> {
    manifest
        .records
        .par_iter()
        .map(|r| Example::from_triplet(&manifest.load_triplet(r)?))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub steps: u64,
    pub final_fm_loss: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
}

fn csv_row(l: &StepLog) -> String {
    format!("{},{:e},{:e}\n", l.step, l.fm_loss, l.aux_loss)
}

/// Trains on `corpus`, writing the loss log and checkpoints into `out_dir`.
/// With `resume`, the run continues from a saved training state; log rows
/// from later steps are discarded so the log matches an uninterrupted run.
pub fn cmd_train(config: &RunConfig, corpus: &Path, out_dir: &Path, resume: Option<&Path>) -> Result<TrainOutcome> {
    let train_cfg = config.train_config()?;
    let manifest = Manifest::load(corpus)?;
    let examples = load_examples(&manifest)?;
    if examples.is_empty() && train_cfg.steps > 0 {
        return Err(Error::Validation(format!("corpus {} is empty", corpus.display())));
    }
    create_dir(out_dir)?;
    let mut trainer = match resume {
        Some(p) => Trainer::from_checkpoint(&Checkpoint::load(p)?, train_cfg)?,
        None => Trainer::new(
            Separator::init(config.model.clone(), config.model_seed()?)?,
            train_cfg,
            config.flow,
        )?,
    };
    let log_path = out_dir.join(LOSS_LOG);
    let mut log = String::from("step,fm_loss,aux_loss\n");
    if resume.is_some() {
        if let Ok(old) = std::fs::read_to_string(&log_path) {
            for line in old.lines().skip(1) {
                let step: u64 = line.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(u64::MAX);
                if step < trainer.step_count() {
                    log.push_str(line);
                    log.push('\n');
                }
            }
        }
    }
    let every = config.train.checkpoint_every;
    let mut checkpoints = Vec::new();
    let mut last = None;
    let result = trainer.run(&examples, |l, t| {
        log.push_str(&csv_row(l));
        last = Some(l.fm_loss);
        let done = l.step + 1;
        if every > 0 && done % every == 0 && done < t.config.steps {
            let p = out_dir.join(format!("step_{done:06}.samt"));
            t.to_checkpoint()?.save(&p)?;
            checkpoints.push(p);
        }
        Ok(())
    });
    write_file(&log_path, &log)?;
    result?;
    let final_path = out_dir.join(FINAL_CKPT);
    trainer.to_checkpoint()?.save(&final_path)?;
    let ema_path = out_dir.join(EMA_CKPT);
    trainer.ema_model().to_checkpoint().save(&ema_path)?;
    checkpoints.push(final_path);
    checkpoints.push(ema_path);
    Ok(TrainOutcome {
        steps: trainer.step_count(),
        final_fm_loss: last,
        checkpoints,
    })
}

/// Parses `start-end` pairs separated by commas, in seconds.
pub fn parse_spans(text: &str) -> Result<SpanSet> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (a, b) = part
            .split_once('-')
            .ok_or_else(|| Error::Usage(format!("span {part:?} is not start-end")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("span bound {s:?} is not a number")))
        };
        out.push((parse(a)?, parse(b)?));
    }
    SpanSet::new(out).map_err(|e| Error::Usage(e.to_string()))
}

#[derive(Clone, Debug, Default)]
pub struct SeparateArgs {
    pub ckpt: PathBuf,
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub text: Option<String>,
    pub spans: Option<String>,
    /// `T × 8` f32 LE oracle visual features.
    pub visual: Option<PathBuf>,
    /// Predict spans from the mixture and the text prompt.
    pub predict_spans: bool,
    pub longform: bool,
    pub window: Option<usize>,
    pub overlap: Option<usize>,
    pub beam: usize,
    pub seed: u64,
    pub ode_steps: Option<usize>,
    /// Ground-truth stems for the report.
    pub reference: Option<(PathBuf, PathBuf)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparateReport {
    pub seed: u64,
    pub beam: usize,
    pub chosen: usize,
    pub longform: bool,
    pub windows: usize,
    pub duration: f64,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_spans: Option<SpanSet>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate_scores: Option<Vec<(f64, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub si_sdr_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub si_sdr_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub si_sdr_mixture: Option<f64>,
}

fn read_visual(path: &Path, frames: usize) -> Result<VisualFeats> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != frames * VISUAL_DIM * 4 {
        return Err(Error::Validation(format!(
            "visual features {} hold {} bytes, expected {frames}×{VISUAL_DIM} f32",
            path.display(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(VisualFeats {
        feats: sepflow_tensor::Tensor::new(frames, VISUAL_DIM, data)?,
        present: true,
    })
}

/// Separates one mixture file into `target.f32` / `residual.f32` plus `report.json`.
pub fn cmd_separate(args: &SeparateArgs) -> Result<SeparateReport> {
    if args.text.is_none() && args.spans.is_none() && args.visual.is_none() {
        return Err(Error::Usage(
            "at least one of --text, --spans or --visual-oracle is required".into(),
        ));
    }
    if args.predict_spans && (args.text.is_none() || args.spans.is_some()) {
        return Err(Error::Usage("--predict-spans needs --text and excludes --spans".into()));
    }
    let mix = Waveform::read_raw(&args.input)?;
    if mix.is_empty() {
        return Err(Error::Validation(format!("{} holds no samples", args.input.display())));
    }
    let frames = codec::frames_for(mix.len());
    if frames > MAX_ONE_SHOT_FRAMES && !args.longform {
        return Err(Error::Usage(format!(
            "input is {:.2} s, longer than the 30 s one-shot limit; pass --longform",
            mix.duration()
        )));
    }
    let model = Separator::from_checkpoint(&Checkpoint::load(&args.ckpt)?)?;
    let text = match &args.text {
        Some(t) => TextPrompt::parse(t).map_err(|e| Error::Usage(e.to_string()))?,
        None => TextPrompt::empty(),
    };
    let fr = FRAME_RATE as f64;
    let mut predicted = None;
    let span = if let Some(s) = &args.spans {
        encode_span(&parse_spans(s)?, frames, fr).map_err(|e| Error::Usage(e.to_string()))?
    } else if args.predict_spans {
        let p = eval::predict_spans(&mix, &text, eval::SPAN_THRESHOLD)?;
        let tokens = encode_span(&p, frames, fr)?;
        predicted = Some(p);
        tokens
    } else {
        SpanTokens::null(frames)
    };
    let visual = match &args.visual {
        Some(p) => read_visual(p, frames)?,
        None => VisualFeats::absent(frames),
    };
    let bundle = PromptBundle { text, span, visual };
    let flow_cfg = FlowConfig {
        ode_steps: args.ode_steps.unwrap_or(FlowConfig::default().ode_steps),
        ..FlowConfig::default()
    };
    let plan = if args.longform {
        let d = WindowPlan::default_for(frames)?;
        Some(WindowPlan::new(
            frames,
            args.window.unwrap_or(d.window_len),
            args.overlap.unwrap_or(d.overlap),
        )?)
    } else {
        None
    };
    let run = |seed: u64| -> Result<Separation> {
        match &plan {
            Some(p) => flow::multi_diffusion(&mix, &bundle, p, &flow_cfg, &model, seed),
            None => flow::separate(&mix, &bundle, &flow_cfg, &model, seed),
        }
    };
    let beam = eval::separate_beam(&bundle, args.beam, args.seed, run)?;
    create_dir(&args.out_dir)?;
    beam.separation.target.write_raw(&args.out_dir.join("target.f32"))?;
    beam.separation.residual.write_raw(&args.out_dir.join("residual.f32"))?;
    let mut report = SeparateReport {
        seed: args.seed,
        beam: args.beam,
        chosen: beam.chosen,
        longform: args.longform,
        windows: plan.as_ref().map_or(1, |p| p.windows.len()),
        duration: mix.duration(),
        text: bundle.text.to_string(),
        predicted_spans: predicted,
        candidate_scores: beam
            .set
            .as_ref()
            .map(|s| s.judge.iter().copied().zip(s.clap.iter().copied()).collect()),
        si_sdr_target: None,
        si_sdr_residual: None,
        si_sdr_mixture: None,
    };
    if let Some((t, r)) = &args.reference {
        let tgt = Waveform::read_raw(t)?;
        let res = Waveform::read_raw(r)?;
        report.si_sdr_target = Some(eval::si_sdr(&beam.separation.target, &tgt)?);
        report.si_sdr_residual = Some(eval::si_sdr(&beam.separation.residual, &res)?);
        report.si_sdr_mixture = Some(eval::si_sdr(&mix, &tgt)?);
    }
    write_file(
        &args.out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EvalPrompt {
    /// Whatever the manifest provides.
    #[default]
    Manifest,
    TextOnly,
    /// Text plus spans predicted from the mixture.
    TextPredictedSpan,
    /// Text plus the ground-truth spans.
    TextOracleSpan,
}

impl std::str::FromStr for EvalPrompt {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manifest" => Ok(Self::Manifest),
            "text" => Ok(Self::TextOnly),
            "text+predicted-span" => Ok(Self::TextPredictedSpan),
            "text+span" => Ok(Self::TextOracleSpan),
            _ => Err(Error::Usage(format!("unknown prompt mode {s:?}"))),
        }
    }
}

/// Builds the evaluation bundle of a triplet for a prompt mode.
pub fn eval_bundle(t: &data::MixTriplet, mode: EvalPrompt) -> Result<PromptBundle> {
    let frames = t.bundle.frames();
    let fr = FRAME_RATE as f64;
    Ok(match mode {
        EvalPrompt::Manifest => t.bundle.clone(),
        EvalPrompt::TextOnly => PromptBundle::text_only(t.bundle.text.clone(), frames),
        EvalPrompt::TextPredictedSpan => PromptBundle {
            span: encode_span(&eval::predict_spans(&t.mix, &t.bundle.text, eval::SPAN_THRESHOLD)?, frames, fr)?,
            ..PromptBundle::text_only(t.bundle.text.clone(), frames)
        },
        EvalPrompt::TextOracleSpan => PromptBundle {
            span: encode_span(&t.target_spans(), frames, fr)?,
            ..PromptBundle::text_only(t.bundle.text.clone(), frames)
        },
    })
}

/// Evaluates one record; missing or unreadable stems become a skip entry.
pub fn eval_record(
    manifest: &Manifest,
    r: &ManifestRecord,
    model: &Separator<f32>,
    flow_cfg: &FlowConfig,
    mode: EvalPrompt,
    seed: u64,
) -> Result<ItemReport> {
    let item_seed = seed.wrapping_add(r.seed);
    let t = match manifest.load_triplet(r) {
        Ok(t) => t,
        Err(e @ (Error::Io { .. } | Error::Format(_) | Error::Validation(_))) => {
            return Ok(ItemReport {
                id: r.id.clone(),
                seed: item_seed,
                skipped: Some(e.to_string()),
                metrics: None,
            })
        }
        Err(e) => return Err(e),
    };
    let bundle = eval_bundle(&t, mode)?;
    let sep = if t.bundle.frames() > MAX_ONE_SHOT_FRAMES {
        flow::separate_long(&t.mix, &bundle, flow_cfg, model, item_seed)?
    } else {
        flow::separate(&t.mix, &bundle, flow_cfg, model, item_seed)?
    };
    Ok(ItemReport {
        id: r.id.clone(),
        seed: item_seed,
        skipped: None,
        metrics: Some(eval::score_separation(&t, &sep)?),
    })
}

/// Evaluates every manifest record and writes a JSON-lines report.
pub fn cmd_eval(
    ckpt: &Path,
    manifest_path: &Path,
    out_report: &Path,
    mode: EvalPrompt,
    seed: u64,
) -> Result<eval::Summary> {
    let manifest = Manifest::load(manifest_path)?;
    let model = Separator::from_checkpoint(&Checkpoint::load(ckpt)?)?;
    let flow_cfg = FlowConfig::default();
    let items = manifest
        .records
        .par_iter()
        .map(|r| eval_record(&manifest, r, &model, &flow_cfg, mode, seed))
        .collect::<Result<Vec<_>>>()?;
    let summary = eval::summarize(&items, seed);
    if let Some(dir) = out_report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_file(out_report, eval::report_lines(&items, &summary)?)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterLine {
    pub id: String,
    pub scores: data::FilterScores,
    pub verdict: data::Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FilterOutcome {
    pub scored: usize,
    pub kept: usize,
}

/// Scores and gates a manifest. Without a checkpoint the stored stems are
/// scored; with one, the model re-separates every mixture from its text
/// prompt (pseudo-labelling) and the kept outputs become new triplets.
/// Writes `filter.jsonl` (all scores) and a manifest of kept items.
pub fn cmd_filter(manifest_path: &Path, out_dir: &Path, ckpt: Option<&Path>, seed: u64) -> Result<FilterOutcome> {
    let manifest = Manifest::load(manifest_path)?;
    let model = ckpt
        .map(|p| Checkpoint::load(p).and_then(|c| Separator::from_checkpoint(&c)))
        .transpose()?;
    create_dir(out_dir)?;
    let flow_cfg = FlowConfig::default();
    let results = manifest
        .records
        .par_iter()
        .map(|r| -> Result<(FilterLine, Option<ManifestRecord>)> {
            let mut t = manifest.load_triplet(r)?;
            if let Some(m) = &model {
                let bundle = PromptBundle::text_only(t.bundle.text.clone(), t.bundle.frames());
                let sep = flow::separate(&t.mix, &bundle, &flow_cfg, m, seed.wrapping_add(r.seed))?;
                t.tgt = sep.target;
                t.res = t.mix.minus(&t.tgt)?;
                t.bundle = bundle;
            }
            let scores = data::toy_scorers(&t.tgt, &t.res, &t.bundle.text, &t.bundle.visual)?;
            let verdict = data::filter_gate(&scores);
            let kept = if verdict.is_keep() {
                let mut rec = data::write_triplet(out_dir, &r.id, &t)?;
                rec.seed = r.seed;
                rec.regime = r.regime;
                Some(rec)
            } else {
                None
            };
            Ok((
                FilterLine {
                    id: r.id.clone(),
                    scores,
                    verdict,
                },
                kept,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut lines = String::new();
    let mut kept = Vec::new();
    for (line, rec) in results {
        writeln!(lines, "{}", serde_json::to_string(&line)?).expect("string write");
        kept.extend(rec);
    }
    write_file(&out_dir.join("filter.jsonl"), lines)?;
    let out = Manifest {
        dir: out_dir.to_path_buf(),
        records: kept,
    };
    out.save(&out_dir.join(MANIFEST))?;
    Ok(FilterOutcome {
        scored: manifest.records.len(),
        kept: out.records.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_flag_parsing() {
        let s = parse_spans("0.5-1.0, 2-3.25").unwrap();
        assert_eq!(s.intervals(), &[(0.5, 1.0), (2.0, 3.25)]);
        assert!(matches!(parse_spans("1-0.5"), Err(Error::Usage(_))));
        assert!(matches!(parse_spans("abc"), Err(Error::Usage(_))));
    }

    #[test]
    fn missing_prompt_is_usage_error() {
        let err = cmd_separate(&SeparateArgs::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
