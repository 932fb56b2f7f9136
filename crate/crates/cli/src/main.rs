//! `bpg` — synthesize motion, train, evaluate, run streaming inference and
//! verify gradients.
//!
//! Exit codes: 0 success, 1 runtime or data failure, 2 usage error.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

use bpg_core::config::{self, parse_kv, parse_override};
use bpg_core::learning::dataset::Dataset;
use bpg_core::learning::gradcheck::{self, DEFAULT_TOL, DEFAULT_TRIALS};
use bpg_core::learning::trainer::{self, Trainer};
use bpg_core::sensorio::{self, load_motion, save_motion, synth_generate};
use bpg_core::skeleton::default_skeleton;
use bpg_core::{bpgnet, BpgError, BpgModel, Checkpoint, MotionSequence, OnlinePredictor, RunConfig};
use bpg_core::{SensorFrame, SkeletonModel, SynthKind};

#[derive(Parser)]
#[command(name = "bpg", version, about = "Full-body pose from three VR sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motion file.
    Synth {
        #[arg(long, value_parser = parse_kind)]
        kind: SynthKind,
        #[arg(long)]
        frames: usize,
        #[arg(long, default_value_t = 60.0)]
        fps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the three-sensor stream from a motion file.
    Sensors {
        #[arg(long)]
        motion: PathBuf,
        /// Output path, or `-` for stdout.
        #[arg(long, default_value = "-")]
        out: String,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
    /// Print a complete config file with the default values.
    Config,
    /// Train on every `.mot` file in a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `key=value` override; may be repeated.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on every `.mot` file in a directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
    /// Causal per-frame inference from a motion file or a sensor stream.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "sensors", required_unless_present = "sensors")]
        motion: Option<PathBuf>,
        /// Sensor stream path, or `-` for stdin.
        #[arg(long)]
        sensors: Option<String>,
        /// Output path, or `-` for stdout.
        #[arg(long, default_value = "-")]
        out: String,
        /// Stream frame rate; defaults to the motion file's rate or the
        /// checkpoint's training rate.
        #[arg(long)]
        fps: Option<f64>,
        #[arg(long)]
        skeleton: Option<PathBuf>,
    },
    /// Compare analytic and numeric gradients for one block or `all`.
    Gradcheck {
        block: String,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse().map_err(|e: BpgError| e.to_string())
}

/// An error that maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            eprint!("{text}");
            // value errors do not carry a usage line of their own
            if !text.contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<ExitCode> {
    match cmd {
        Command::Synth {
            kind,
            frames,
            fps,
            seed,
            out,
        } => {
            let seq = synth_generate(kind, frames, fps, seed).map_err(|e| usage(e.to_string()))?;
            save_motion(&seq, &out)?;
        }
        Command::Sensors {
            motion,
            out,
            skeleton,
        } => {
            let skel = load_skeleton(skeleton.as_deref())?;
            let seq = load_motion(&motion)?;
            let mut w = open_output(&out)?;
            for f in sensorio::extract_sensors(&seq, &skel) {
                writeln!(w, "{}", f.to_line())?;
            }
            w.flush()?;
        }
        Command::Config => print!("{}", config::default_config_text()),
        Command::Train {
            data,
            config,
            out,
            overrides,
            resume,
            skeleton,
        } => cmd_train(&data, config.as_deref(), &out, &overrides, resume.as_deref(), skeleton.as_deref())?,
        Command::Eval {
            checkpoint,
            data,
            out,
            skeleton,
        } => {
            let skel = load_skeleton(skeleton.as_deref())?;
            let ck = Checkpoint::load(&checkpoint, &skel)?;
            let seqs = load_data(&data)?;
            let ds = Dataset::from_sequences(&seqs, &skel, ck.model.cfg.k_window)?;
            let report = trainer::evaluate_model(&ck.model, &ds)?;
            report.write_json(&out)?;
            print!("{}", report.to_text());
        }
        Command::Infer {
            checkpoint,
            motion,
            sensors,
            out,
            fps,
            skeleton,
        } => {
            let skel = load_skeleton(skeleton.as_deref())?;
            let ck = Checkpoint::load(&checkpoint, &skel)?;
            let mut w = open_output(&out)?;
            match (motion, sensors) {
                (Some(path), _) => {
                    let seq = load_motion(&path)?;
                    let fps = fps.unwrap_or(seq.fps());
                    let frames = sensorio::extract_sensors(&seq, &ck.model.skel);
                    infer_frames(&ck.model, fps, frames.into_iter().map(Ok), &mut w, false)?;
                }
                (None, Some(src)) => {
                    let fps = fps.unwrap_or(ck.train.fps);
                    let reader: Box<dyn BufRead> = if src == "-" {
                        Box::new(io::stdin().lock())
                    } else {
                        let f = fs::File::open(&src).with_context(|| format!("{src}: cannot open"))?;
                        Box::new(BufReader::new(f))
                    };
                    infer_frames(&ck.model, fps, stream_frames(reader, &src), &mut w, true)?;
                }
                (None, None) => bail!(usage("one of --motion or --sensors is required")),
            }
            w.flush()?;
        }
        Command::Gradcheck { block, trials, tol } => {
            let blocks: Vec<&str> = if block == "all" {
                gradcheck::BLOCKS.to_vec()
            } else if gradcheck::is_registered(&block) {
                vec![block.as_str()]
            } else {
                return Err(usage(format!(
                    "unknown block `{block}`; expected `all` or one of: {}",
                    gradcheck::BLOCKS.join(", ")
                )));
            };
            let mut ok = true;
            for b in blocks {
                let report = gradcheck::gradcheck(b, trials, tol)?;
                print!("{}", report.to_text());
                ok &= report.passed();
            }
            if !ok {
                eprintln!("gradient check failed");
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    overrides: &[String],
    resume: Option<&Path>,
    skeleton: Option<&Path>,
) -> anyhow::Result<()> {
    let file = match config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("{}: cannot read config", p.display()))?;
            parse_kv(&text, &p.display().to_string()).map_err(|e| usage(e.to_string()))?
        }
        None => Default::default(),
    };
    let overrides = overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| usage(e.to_string()))?;
    let run = RunConfig::merge(&file, &overrides).map_err(|e| usage(e.to_string()))?;
    run.model.validate().map_err(|e| usage(e.to_string()))?;
    run.train.validate().map_err(|e| usage(e.to_string()))?;

    let skel = load_skeleton(skeleton)?;
    let seqs = load_data(data)?;
    let ds = Dataset::from_sequences(&seqs, &skel, run.model.k_window)?;

    let mut trainer = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p, &skel)?;
            if ck.model.cfg != run.model {
                bail!("{}: checkpoint model config differs from the run config", p.display());
            }
            Trainer::resume(ck, run.train.clone())?
        }
        None => Trainer::new(BpgModel::new(run.model.clone(), skel)?, run.train.clone())?,
    };

    fs::create_dir_all(out).with_context(|| format!("{}: cannot create", out.display()))?;
    let echo = out.join("config.txt");
    fs::write(&echo, run.echo()).with_context(|| format!("{}: cannot write", echo.display()))?;

    eprintln!(
        "training on {} samples from {} clips, steps {}..{}",
        ds.len(),
        ds.clips.len(),
        trainer.step(),
        run.train.steps
    );
    let every = run.train.checkpoint_every;
    let last = run.train.steps.saturating_sub(1);
    let report = trainer.run(&ds, Some(out), |step, loss| {
        if step % every == 0 || step == last {
            eprintln!(
                "step {step:>6}  total {:.6}  rot {:.6}  pos {:.6}  bone {:.6}",
                loss.l_total, loss.l_rot, loss.l_pos, loss.l_bone
            );
        }
    })?;
    print!("{}", report.final_metrics.to_text());
    println!("wrote {}", out.join(trainer::FINAL_CHECKPOINT).display());
    Ok(())
}

fn load_skeleton(path: Option<&Path>) -> anyhow::Result<SkeletonModel> {
    Ok(match path {
        Some(p) => SkeletonModel::load(p)?,
        None => default_skeleton(),
    })
}

/// Every `.mot` file in `dir`, sorted by file name.
fn load_data(dir: &Path) -> anyhow::Result<Vec<(String, MotionSequence)>> {
    let entries = fs::read_dir(dir).with_context(|| format!("{}: cannot read data directory", dir.display()))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.with_context(|| format!("{}: cannot read data directory", dir.display()))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == "mot") {
            paths.push(p);
        }
    }
    if paths.is_empty() {
        bail!("{}: no .mot files", dir.display());
    }
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, load_motion(&p)?))
        })
        .collect()
}

fn open_output(out: &str) -> anyhow::Result<Box<dyn Write>> {
    Ok(if out == "-" {
        Box::new(BufWriter::new(io::stdout().lock()))
    } else {
        let f = fs::File::create(out).with_context(|| format!("{out}: cannot create"))?;
        Box::new(BufWriter::new(f))
    })
}

/// Parsed frames of a sensor stream; malformed lines are reported on stderr
/// and dropped, blank lines and `#` comments are ignored.
fn stream_frames<'a>(
    reader: Box<dyn BufRead + 'a>,
    source: &'a str,
) -> impl Iterator<Item = io::Result<SensorFrame>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(e)),
        };
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            return None;
        }
        match SensorFrame::parse_line(t) {
            Ok(f) => Some(Ok(f)),
            Err(msg) => {
                eprintln!("warning: {source}:{}: {msg}; frame skipped", i + 1);
                None
            }
        }
    })
}

/// Writes one pose line per frame once the window is full. With `live`, each
/// line is flushed as soon as it is produced.
fn infer_frames(
    model: &BpgModel,
    fps: f64,
    frames: impl Iterator<Item = io::Result<SensorFrame>>,
    w: &mut dyn Write,
    live: bool,
) -> anyhow::Result<()> {
    let mut online = OnlinePredictor::new(model, fps);
    for f in frames {
        if let Some((i, pose)) = online.push(f?)? {
            writeln!(w, "{}", bpgnet::format_pose_line(i, &pose))?;
            if live {
                w.flush()?;
            }
        }
    }
    Ok(())
}
