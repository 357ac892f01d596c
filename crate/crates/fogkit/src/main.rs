//! fogkit CLI — thin wrappers over the library. One subcommand per stage:
//! data synthesis, resampling, segmentation, pretraining, fine-tuning,
//! inference, gating sweeps, threshold optimization, evaluation, LOGO
//! cross-validation, and label-ratio sweeps.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fogkit::error::{FogError, Result};
use fogkit::gate;
use fogkit::harness::{self, Manifest, RunConfig};
use fogkit::ingest;
use fogkit::metrics::{self, PredictionTrace};
use fogkit::seeds;
use fogkit::ssl::{self, ModelBundle};
use fogkit::windowing::{self, SegmentMode};

#[derive(Parser)]
#[command(name = "fogkit", version, about = "Freezing-of-gait detection toolkit")]
struct Cli {
    /// Config file: UTF-8 key=value lines, later keys override.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Train,
    Infer,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort dataset directory.
    Synth,
    /// Resample a canonical CSV to the working rate.
    Resample {
        #[arg(long)]
        input: PathBuf,
        /// Target rate; defaults to the config's resample.target_hz.
        #[arg(long)]
        target_hz: Option<f64>,
    },
    /// Segment a canonical CSV into a FOGW1 window container.
    Segment {
        #[arg(long)]
        input: PathBuf,
        /// train = differential hopping (discards mixed windows),
        /// infer = fixed 50% overlap.
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Masked-reconstruction pretraining on a window container.
    Pretrain {
        #[arg(long)]
        windows: PathBuf,
    },
    /// Frozen-encoder fine-tuning of a pretrained model.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        windows: PathBuf,
    },
    /// Per-window inference; writes a trace CSV.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        windows: PathBuf,
        /// Gate threshold; omit to run ungated.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Window + episode reports from a trace (or from model + windows).
    Evaluate {
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        windows: Option<PathBuf>,
        /// Apply single-pass neighbor smoothing before scoring.
        #[arg(long)]
        majority_vote: bool,
    },
    /// Sweep gate thresholds; writes the sweep CSV.
    GateSweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        windows: PathBuf,
    },
    /// Activity-threshold optimization.
    Ato {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        windows: PathBuf,
    },
    /// Leave-one-group-out cross-validation over a dataset directory.
    Logo {
        #[arg(long)]
        data: PathBuf,
    },
    /// Label-ratio sweep (SSL vs supervised baseline).
    LabelSweep {
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fogkit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn info(cli: &Cli, msg: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", msg.as_ref());
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "output".into())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();

    match &cli.command {
        Command::Synth => {
            let cohort = harness::synth_cohort(&cfg.synth, seeds::derive(cfg.seed, "synth"))?;
            harness::write_cohort_dir(out, &cohort)?;
            let mut manifest = Manifest::new(&cfg);
            manifest
                .stage_seeds
                .insert("synth".into(), seeds::derive(cfg.seed, "synth"));
            for (stream, feat) in &cohort {
                let ws = windowing::segment(stream, &cfg.window_infer)?;
                manifest
                    .data_fingerprints
                    .insert(feat.subject_id.clone(), ssl::fingerprint_frames(&ws.frames));
            }
            manifest.write(out)?;
            info(cli, format!("wrote {} subjects to {}", cohort.len(), out.display()));
        }
        Command::Resample { input, target_hz } => {
            let stream = ingest::load_canonical_csv(input)?;
            let target = target_hz.unwrap_or(cfg.target_hz);
            let resampled = ingest::resample(&stream, target)?;
            let path = out.join(format!("{}_{}hz.csv", stem(input), target));
            ingest::write_canonical_csv(&resampled, &path)?;
            info(
                cli,
                format!(
                    "{} samples at {} Hz -> {} samples at {} Hz ({})",
                    stream.len(),
                    stream.rate_hz,
                    resampled.len(),
                    target,
                    path.display()
                ),
            );
        }
        Command::Segment { input, mode } => {
            let stream = ingest::load_canonical_csv(input)?;
            let spec = match mode {
                Mode::Train => cfg.window_train,
                Mode::Infer => cfg.window_infer,
            };
            let ws = windowing::segment(&stream, &spec)?;
            let (non, fog) = windowing::class_balance(&ws)?;
            let suffix = match spec.mode {
                SegmentMode::TrainDhwt => "train",
                SegmentMode::InferenceFixed => "infer",
            };
            let path = out.join(format!("{}_{}.fogw", stem(input), suffix));
            windowing::write_fogw1(&ws, &path)?;
            info(
                cli,
                format!(
                    "{} windows (nonfog {:.1}%, fog {:.1}%) -> {}",
                    ws.len(),
                    100.0 * non,
                    100.0 * fog,
                    path.display()
                ),
            );
        }
        Command::Pretrain { windows } => {
            let ws = windowing::read_fogw1(windows)?;
            let mut arch = cfg.arch.clone();
            arch.input_len = ws.window_samples();
            arch.channels = ws.channels();
            let bundle = ssl::pretrain(
                &ws.unlabeled(),
                &arch,
                &cfg.plan,
                &cfg.mask,
                seeds::derive(cfg.seed, "pretrain"),
            )?;
            let path = out.join("model.fogm");
            bundle.save(&path)?;
            write_loss_csv(&bundle.meta.pretrain_loss, &out.join("pretrain_loss.csv"))?;
            let l = &bundle.meta.pretrain_loss;
            info(
                cli,
                format!(
                    "pretrained {} epochs on {} windows: masked MSE {:.5} -> {:.5} ({})",
                    l.len(),
                    ws.len(),
                    l.first().copied().unwrap_or(f64::NAN),
                    l.last().copied().unwrap_or(f64::NAN),
                    path.display()
                ),
            );
        }
        Command::Finetune { model, windows } => {
            let bundle = ModelBundle::load(model)?;
            let ws = windowing::read_fogw1(windows)?;
            let tuned = ssl::finetune(&bundle, &ws, &cfg.plan, seeds::derive(cfg.seed, "finetune"))?;
            let path = out.join("model_finetuned.fogm");
            tuned.save(&path)?;
            write_loss_csv(&tuned.meta.finetune_loss, &out.join("finetune_loss.csv"))?;
            let l = &tuned.meta.finetune_loss;
            info(
                cli,
                format!(
                    "fine-tuned {} epochs (label fraction {}): BCE {:.4} -> {:.4} ({})",
                    l.len(),
                    cfg.plan.label_fraction,
                    l.first().copied().unwrap_or(f64::NAN),
                    l.last().copied().unwrap_or(f64::NAN),
                    path.display()
                ),
            );
        }
        Command::Infer { model, windows, alpha } => {
            let bundle = ModelBundle::load(model)?;
            let ws = windowing::read_fogw1(windows)?;
            let trace = match alpha.map(|a| gate::GateConfig { alpha: a }) {
                Some(gc) => gate::run_gated(&bundle, &ws, &gc)?,
                None => ssl::predict(&bundle, &ws)?,
            };
            let path = out.join(format!("{}_trace.csv", stem(windows)));
            trace.write_csv(&path)?;
            let duty = metrics::duty_cycle_report(&trace)?;
            info(
                cli,
                format!(
                    "classified {} windows ({} gated out) -> {}",
                    trace.len(),
                    duty.rejected,
                    path.display()
                ),
            );
        }
        Command::Evaluate { trace, model, windows, majority_vote } => {
            let mut t = match (trace, model, windows) {
                (Some(tp), _, _) => PredictionTrace::read_csv(
                    tp,
                    cfg.window_infer.window_s,
                    cfg.window_infer.stride_s(),
                )?,
                (None, Some(mp), Some(wp)) => {
                    let bundle = ModelBundle::load(mp)?;
                    let ws = windowing::read_fogw1(wp)?;
                    ssl::predict(&bundle, &ws)?
                }
                _ => {
                    return Err(FogError::Config(
                        "evaluate needs --trace, or --model together with --windows".into(),
                    ))
                }
            };
            if *majority_vote || cfg.majority_vote {
                t = metrics::majority_vote(&t);
            }
            let wm = metrics::window_metrics(&t)?;
            let ep = metrics::episode_report(&t);
            let json = serde_json::json!({ "window": wm, "episodes": ep });
            std::fs::write(
                out.join("report.json"),
                serde_json::to_string_pretty(&json)
                    .map_err(|e| FogError::Format(format!("report serialization: {e}")))?,
            )?;
            let text = metrics::render_text_report(&wm, &ep);
            std::fs::write(out.join("report.txt"), &text)?;
            metrics::write_episode_csv(&ep, out.join("episodes.csv"))?;
            info(cli, text.trim_end());
        }
        Command::GateSweep { model, windows } => {
            let bundle = ModelBundle::load(model)?;
            let ws = windowing::read_fogw1(windows)?;
            let mut alphas = Vec::new();
            let mut a = cfg.ato.alpha_start;
            while a <= cfg.ato.alpha_final + cfg.ato.delta_alpha * 1e-9 {
                alphas.push(a);
                a += cfg.ato.delta_alpha;
            }
            let rows = gate::gate_sweep(&bundle, &ws, &alphas, cfg.ato.metric)?;
            let path = out.join("gate_sweep.csv");
            gate::write_sweep_csv(&rows, &path)?;
            info(cli, format!("{} sweep points -> {}", rows.len(), path.display()));
        }
        Command::Ato { model, windows } => {
            let bundle = ModelBundle::load(model)?;
            let ws = windowing::read_fogw1(windows)?;
            let outcome = gate::ato(&bundle, &ws, &cfg.ato)?;
            gate::write_sweep_csv(&outcome.sweep, &out.join("ato_sweep.csv"))?;
            std::fs::write(
                out.join("ato.json"),
                serde_json::to_string_pretty(&outcome)
                    .map_err(|e| FogError::Format(format!("ato serialization: {e}")))?,
            )?;
            info(
                cli,
                format!(
                    "alpha_opt = {}{} after {} gate evaluations ({} active windows)",
                    outcome.alpha_opt,
                    if outcome.no_degradation_found {
                        " (no degradation found)"
                    } else {
                        ""
                    },
                    outcome.evaluations,
                    outcome.active.len()
                ),
            );
        }
        Command::Logo { data } => {
            let cohort = harness::load_cohort_dir(data)?;
            let report = harness::run_logo(&cohort, &cfg.logo())?;
            std::fs::write(out.join("logo.csv"), harness::logo_csv(&report.table))?;
            for (i, rep) in report.repeats.iter().enumerate() {
                std::fs::write(
                    out.join(format!("logo_repeat{i}.csv")),
                    harness::logo_csv(&rep.rows),
                )?;
            }
            let mut manifest = Manifest::new(&cfg);
            for (k, v) in &report.fingerprints {
                manifest.data_fingerprints.insert(k.clone(), v.clone());
            }
            for (i, rep) in report.repeats.iter().enumerate() {
                manifest.stage_seeds.insert(format!("repeat{i}"), rep.seed);
            }
            manifest.write(out)?;
            info(cli, harness::logo_csv(&report.table).trim_end());
        }
        Command::LabelSweep { data } => {
            let cohort = harness::load_cohort_dir(data)?;
            let outcome = harness::label_ratio_sweep(&cohort, &cfg.logo(), &cfg.fractions)?;
            let path = out.join("label_sweep.csv");
            std::fs::write(&path, harness::sweep_csv(&outcome.points))?;
            Manifest::new(&cfg).write(out)?;
            for (fraction, reason) in &outcome.skipped {
                eprintln!("fogkit: skipped fraction {fraction}: {reason}");
            }
            info(cli, format!("{} sweep points -> {}", outcome.points.len(), path.display()));
        }
    }
    Ok(())
}

fn write_loss_csv(losses: &[f64], path: &Path) -> Result<()> {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}
