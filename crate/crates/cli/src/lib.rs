//! `cospeech` command line: corpus generation, the three training stages,
//! sampling, evaluation and export.
//!
//! [`run`] parses arguments and returns the process exit code: 0 on success,
//! 2 for usage errors, 1 for runtime failures (reported as one JSON line on
//! stderr).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use cospeech_core::align::AlignSpace;
use cospeech_core::compose::{generate, route_prompt, GenerationRequest, GuidanceSpec};
use cospeech_core::data::{build_corpus, load_corpus, save_corpus, BodyPart, Clip, ClipFile, Corpus, PromptTokens};
use cospeech_core::diffusion::DenoiserModel;
use cospeech_core::persist::io::{read_json, write_atomic, write_json_atomic};
use cospeech_core::persist::{
    align_checkpoint, align_from_checkpoint, diffusion_checkpoint, diffusion_from_checkpoint, load_checkpoint, rvq_checkpoint,
    rvq_from_checkpoint, save_checkpoint, Preset, RunConfig,
};
use cospeech_core::rvq::{usage_counts, RvqStack};
use cospeech_core::{Error, Result};
use serde_json::{json, Value};

pub mod manifest;
pub mod metrics;
pub mod pipeline;

use manifest::{manifest_path_for, RunManifest, BUILD_ID};
use metrics::{clip_metrics, write_metrics, Metric};

pub const RVQ_FILE: &str = "rvq.synm";
pub const ALIGN_FILE: &str = "align.synm";
pub const DIFFUSION_FILE: &str = "diffusion.synm";

#[derive(Parser, Debug)]
#[command(name = "cospeech", version = BUILD_ID, about = "Prompt-controlled co-speech motion synthesis at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Named configuration preset.
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Full run configuration (JSON); replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => read_json(path)?,
            None => RunConfig::preset(self.preset),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic speech and text corpora.
    Datagen {
        #[arg(long)]
        s2m: Option<usize>,
        #[arg(long)]
        t2m: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train one stage; checkpoints land in the checkpoint directory.
    Train {
        #[command(subcommand)]
        stage: Stage,
    },
    /// Generate one motion clip from audio and/or a prompt.
    Sample(SampleArgs),
    /// Compute metrics of generated clips; writes CSV plus a markdown table.
    Eval(EvalArgs),
    /// Convert artifacts to plain files.
    Export {
        #[command(subcommand)]
        what: Export,
    },
}

#[derive(Args, Debug)]
struct StageArgs {
    /// Corpus directory written by `datagen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt_dir: PathBuf,
    /// Overrides the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Subcommand, Debug)]
enum Stage {
    Rvq(StageArgs),
    Align(StageArgs),
    Diffusion {
        #[command(flatten)]
        common: StageArgs,
        /// Fraction of text clips conditioned on the text feature instead of the implicit label.
        #[arg(long)]
        text_fraction: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    ckpt_dir: PathBuf,
    /// Clip file whose audio track drives the upper body.
    #[arg(long)]
    audio: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<String>,
    /// Per-part prompt override, e.g. `hands=wave`.
    #[arg(long = "part", value_name = "PART=TEXT")]
    parts: Vec<String>,
    #[arg(long, default_value_t = 1.0)]
    wa: f64,
    #[arg(long, default_value_t = 1.5)]
    wp: f64,
    /// Per-part prompt weight, e.g. `lower=3`.
    #[arg(long = "part-weight", value_name = "PART=W")]
    part_weights: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 128 + k·112 frames.
    #[arg(long, default_value_t = 128)]
    frames: usize,
    /// Low-pass the fused estimate at every step.
    #[arg(long)]
    smoothing: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long = "metric", value_enum)]
    metrics: Vec<Metric>,
    /// Corpus directory (its test split is used) or a directory of clip files.
    #[arg(long)]
    real: PathBuf,
    /// Directory of generated clip files.
    #[arg(long)]
    gen: PathBuf,
    /// Checkpoint directory holding the alignment space used as feature extractor.
    #[arg(long)]
    ckpt_dir: PathBuf,
    #[arg(long, default_value = "generated")]
    system: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Export {
    /// One row per frame, one column per channel.
    ClipCsv {
        #[arg(long)]
        clip: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Code selection counts per part, layer and entry over a corpus.
    CodebookUsage {
        #[arg(long)]
        ckpt_dir: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// JSON header of a checkpoint file.
    Header {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (program name first) and executes the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let ctx = Context {
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        started: Instant::now(),
    };
    match execute(cli.command, &ctx) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}

struct Context {
    argv: Vec<String>,
    started: Instant,
}

impl Context {
    fn manifest(&self, command: &str, seed: u64, config: Value, outputs: Vec<PathBuf>, details: Value) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            argv: self.argv.clone(),
            seed,
            build_id: BUILD_ID.to_string(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
            config,
            outputs,
            details,
        }
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::json("manifest", e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn execute(command: Command, ctx: &Context) -> Result<()> {
    match command {
        Command::Datagen { s2m, t2m, out, config } => {
            let mut cfg = config.resolve()?;
            if let Some(n) = s2m {
                cfg.corpus.s2m = n;
            }
            if let Some(n) = t2m {
                cfg.corpus.t2m = n;
            }
            let corpus = build_corpus(&cfg.corpus, cfg.seed)?;
            save_corpus(&corpus, &out)?;
            let details = json!({ "clips": corpus.clips.len(), "train": corpus.train.len(), "test": corpus.test.len() });
            ctx.manifest("datagen", cfg.seed, to_value(&cfg.corpus)?, vec![out.clone()], details)
                .write(&manifest_path_for(&out))
        }
        Command::Train { stage } => train(stage, ctx),
        Command::Sample(args) => sample(args, ctx),
        Command::Eval(args) => evaluate(args, ctx),
        Command::Export { what } => export(what, ctx),
    }
}

fn stage_setup(args: &StageArgs) -> Result<(RunConfig, Corpus)> {
    let cfg = args.config.resolve()?;
    let corpus = load_corpus(&args.data)?;
    create_dir(&args.ckpt_dir)?;
    Ok((cfg, corpus))
}

fn write_loss_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = format!("{header}\n");
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_codecs(ckpt_dir: &Path) -> Result<[RvqStack; 3]> {
    rvq_from_checkpoint(&load_checkpoint(&ckpt_dir.join(RVQ_FILE))?)
}

pub fn load_space(ckpt_dir: &Path) -> Result<AlignSpace> {
    align_from_checkpoint(&load_checkpoint(&ckpt_dir.join(ALIGN_FILE))?)
}

pub fn load_denoiser(ckpt_dir: &Path) -> Result<DenoiserModel> {
    diffusion_from_checkpoint(&load_checkpoint(&ckpt_dir.join(DIFFUSION_FILE))?)
}

fn train(stage: Stage, ctx: &Context) -> Result<()> {
    match stage {
        Stage::Rvq(args) => {
            let (mut cfg, corpus) = stage_setup(&args)?;
            if let Some(e) = args.epochs {
                cfg.rvq_train.epochs = e;
            }
            let (stacks, reports) = pipeline::fit_codecs(&corpus, &cfg)?;
            let ckpt = args.ckpt_dir.join(RVQ_FILE);
            save_checkpoint(&ckpt, &rvq_checkpoint(&stacks)?)?;
            let loss = args.ckpt_dir.join("rvq_loss.csv");
            write_loss_csv(
                &loss,
                "part,epoch,loss",
                reports
                    .iter()
                    .flat_map(|r| r.epoch_losses.iter().enumerate().map(move |(e, l)| format!("{},{e},{l}", r.part))),
            )?;
            let details = json!({
                "parts": reports.iter().map(|r| json!({
                    "part": r.part, "final_loss": r.epoch_losses.last(), "usage": r.last_epoch_usage, "resets": r.resets, "seconds": r.seconds,
                })).collect::<Vec<_>>(),
            });
            ctx.manifest("train rvq", cfg.seed, to_value(&cfg)?, vec![ckpt.clone(), loss], details)
                .write(&manifest_path_for(&ckpt))
        }
        Stage::Align(args) => {
            let (mut cfg, corpus) = stage_setup(&args)?;
            if let Some(e) = args.epochs {
                cfg.align.epochs = e;
            }
            let (space, report) = pipeline::fit_space(&corpus, &cfg)?;
            let ckpt = args.ckpt_dir.join(ALIGN_FILE);
            save_checkpoint(&ckpt, &align_checkpoint(&space)?)?;
            let loss = args.ckpt_dir.join("align_loss.csv");
            write_loss_csv(
                &loss,
                "epoch,total,nce,kl,recon,embed",
                report
                    .epoch_losses
                    .iter()
                    .enumerate()
                    .map(|(e, l)| format!("{e},{},{},{},{},{}", l.total, l.nce, l.kl, l.recon, l.embed)),
            )?;
            let details = json!({ "final": report.epoch_losses.last(), "seconds": report.seconds });
            ctx.manifest("train align", cfg.seed, to_value(&cfg)?, vec![ckpt.clone(), loss], details)
                .write(&manifest_path_for(&ckpt))
        }
        Stage::Diffusion { common: args, text_fraction } => {
            let (mut cfg, corpus) = stage_setup(&args)?;
            if let Some(e) = args.epochs {
                cfg.diffusion_train.epochs = e;
            }
            if let Some(f) = text_fraction {
                cfg.diffusion_train.text_fraction = f;
            }
            cfg.validate()?;
            let stacks = load_codecs(&args.ckpt_dir)?;
            let space = load_space(&args.ckpt_dir)?;
            let (model, report) = pipeline::fit_denoiser(&corpus, &stacks, &space, &cfg)?;
            let ckpt = args.ckpt_dir.join(DIFFUSION_FILE);
            save_checkpoint(&ckpt, &diffusion_checkpoint(&model)?)?;
            let loss = args.ckpt_dir.join("diffusion_loss.csv");
            write_loss_csv(&loss, "epoch,loss", report.epoch_losses.iter().enumerate().map(|(e, l)| format!("{e},{l}")))?;
            let details = json!({ "final_loss": report.epoch_losses.last(), "steps": report.steps, "seconds": report.seconds });
            ctx.manifest("train diffusion", cfg.seed, to_value(&cfg)?, vec![ckpt.clone(), loss], details)
                .write(&manifest_path_for(&ckpt))
        }
    }
}

fn split_assignment(s: &str) -> Result<(BodyPart, &str)> {
    let (part, value) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected PART=VALUE, got {s:?}")))?;
    Ok((part.trim().parse()?, value.trim()))
}

fn sample(args: SampleArgs, ctx: &Context) -> Result<()> {
    let trained = pipeline::Trained {
        stacks: load_codecs(&args.ckpt_dir)?,
        space: load_space(&args.ckpt_dir)?,
        model: load_denoiser(&args.ckpt_dir)?,
    };
    let audio = match &args.audio {
        Some(path) => Some(
            ClipFile::load(path)?
                .audio
                .ok_or_else(|| Error::Empty(format!("{} carries no audio track", path.display())))?,
        ),
        None => None,
    };
    let prompt = match args.prompt.as_deref().map(str::trim) {
        Some(text) if !text.is_empty() => Some(PromptTokens::parse(text)?),
        _ => None,
    };
    let mut overrides = BTreeMap::new();
    for s in &args.parts {
        let (part, text) = split_assignment(s)?;
        overrides.insert(part, PromptTokens::parse(text)?);
    }
    let mut spec = GuidanceSpec::new(args.wa, args.wp, args.seed);
    spec.smoothing = args.smoothing;
    for s in &args.part_weights {
        let (part, w) = split_assignment(s)?;
        let w: f64 = w.parse().map_err(|_| Error::Config(format!("bad weight in {s:?}")))?;
        spec.part_prompt_weights.insert(part, w);
    }
    let request = GenerationRequest {
        audio: audio.as_ref(),
        prompt: prompt.as_ref(),
        overrides,
        total_frames: args.frames,
    };
    let generation = generate(&trained.models(), &request, &spec, None)?;
    let mut file = ClipFile::from_motion(0, &generation.clip);
    let routed = route_prompt(request.prompt, &request.overrides);
    file.audio = audio.as_ref().map(|a| a.window(0, args.frames));
    file.prompt = prompt.as_ref().map(|p| p.words().iter().map(|w| w.to_string()).collect());
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_json_atomic(&args.out, &file)?;
    let details = json!({ "generation": generation.manifest, "routed_parts": routed.describe() });
    ctx.manifest("sample", args.seed, to_value(&spec)?, vec![args.out.clone()], details)
        .write(&manifest_path_for(&args.out))
}

fn is_clip_file(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".json") && !name.ends_with(".run.json") && name != "manifest.json" && name != "run.json"
}

/// Clip files of a directory in file-name order.
pub fn load_clip_dir(dir: &Path) -> Result<Vec<Clip>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| is_clip_file(p))
        .collect();
    paths.sort();
    paths.iter().map(|p| ClipFile::load(p)?.into_clip()).collect()
}

/// Test split of a corpus directory, or every clip file of a plain directory.
pub fn load_real(dir: &Path) -> Result<Vec<Clip>> {
    if dir.join("manifest.json").exists() {
        let corpus = load_corpus(dir)?;
        Ok(corpus.test_clips().cloned().collect())
    } else {
        load_clip_dir(dir)
    }
}

fn evaluate(args: EvalArgs, ctx: &Context) -> Result<()> {
    let space = load_space(&args.ckpt_dir)?;
    let real = load_real(&args.real)?;
    let gen = load_clip_dir(&args.gen)?;
    let which = if args.metrics.is_empty() { Metric::ALL.to_vec() } else { args.metrics.clone() };
    let rows = clip_metrics(&space, &real, &gen, &which, &args.system, args.seed)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_metrics(&args.out, &rows)?;
    let details = json!({ "real_clips": real.len(), "generated_clips": gen.len(), "metrics": which });
    ctx.manifest("eval", args.seed, Value::Null, vec![args.out.clone(), args.out.with_extension("md")], details)
        .write(&manifest_path_for(&args.out))
}

fn export(what: Export, ctx: &Context) -> Result<()> {
    match what {
        Export::ClipCsv { clip, out } => {
            let motion = ClipFile::load(&clip)?.motion()?;
            let mut text = (0..motion.frames.cols()).map(|c| format!("c{c}")).collect::<Vec<_>>().join(",");
            text.push('\n');
            for t in 0..motion.len() {
                let row: Vec<String> = motion.frames.row(t).iter().map(|v| v.to_string()).collect();
                let _ = writeln!(text, "{}", row.join(","));
            }
            write_atomic(&out, text.as_bytes())?;
            ctx.manifest("export clip-csv", 0, Value::Null, vec![out.clone()], json!({ "source": clip }))
                .write(&manifest_path_for(&out))
        }
        Export::CodebookUsage { ckpt_dir, data, out } => {
            let stacks = load_codecs(&ckpt_dir)?;
            let corpus = load_corpus(&data)?;
            let motions: Vec<_> = corpus.clips.iter().map(|c| c.motion.frames.clone()).collect();
            let mut text = String::from("part,layer,entry,count\n");
            for s in &stacks {
                for (layer, counts) in usage_counts(s, &motions)?.iter().enumerate() {
                    for (entry, n) in counts.iter().enumerate() {
                        let _ = writeln!(text, "{},{layer},{entry},{n}", s.part);
                    }
                }
            }
            write_atomic(&out, text.as_bytes())?;
            ctx.manifest("export codebook-usage", corpus.seed, Value::Null, vec![out.clone()], Value::Null)
                .write(&manifest_path_for(&out))
        }
        Export::Header { ckpt, out } => {
            let header = load_checkpoint(&ckpt)?.header();
            let text = serde_json::to_string_pretty(&header).map_err(|e| Error::json("checkpoint header", e))?;
            match out {
                Some(path) => write_atomic(&path, text.as_bytes()),
                None => {
                    println!("{text}");
                    Ok(())
                }
            }
        }
    }
}
