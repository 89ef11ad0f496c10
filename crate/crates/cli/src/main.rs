use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use recloser_core::classify::{classify_window, ClassificationResult, RejectReason};
use recloser_core::config::PipelineConfig;
use recloser_core::dictionary::DictionaryError;
use recloser_core::eval::EvalAccumulator;
use recloser_core::pipeline::{
    self, analyze, check_disjoint, load_dictionaries, read_training_seeds, save_dictionaries, train_dictionaries,
    PipelineError, ScreeningDocument, TrainingSeeds, SCHEMA_VERSION,
};
use recloser_core::screening::run_screening;
use recloser_core::synth::{gen_corpus, load_corpus, ScenarioMix, SynthError};
use recloser_core::waveform::{Family, Phase, SampleWindow, WaveformError, WaveformRecord};
use tracing_subscriber::EnvFilter;

/// Pulse-recloser event analysis: RMS screening and sparse-representation
/// classification of candidate pulse windows.
#[derive(Parser)]
#[command(name = "recloser", version, allow_negative_numbers = true)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (k-means, corpus generation)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// ℓ1 regularization weight
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Minimum confidence for a pulse decision
    #[arg(long = "conf-th", global = true)]
    conf_th: Option<f64>,
    /// Fail with exit code 4 when any sparse code does not converge
    #[arg(long, global = true)]
    strict: bool,
    /// Output directory (or file, for single-document commands)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn one dictionary per measurement family from a labeled corpus
    Train {
        corpus: PathBuf,
    },
    /// Pole status, fault flags and candidate windows for one record
    Screen {
        record: PathBuf,
    },
    /// Screen and classify one record; writes a report and a plot CSV
    Analyze {
        record: PathBuf,
        /// Directory holding <family>.json dictionaries
        #[arg(long, value_name = "DIR")]
        dicts: Option<PathBuf>,
    },
    /// Classify a single window file (numbers separated by commas or whitespace)
    Classify {
        window: PathBuf,
        #[arg(long, value_name = "DIR")]
        dicts: Option<PathBuf>,
        /// Measurement family: ss_voltage, ls_voltage or ls_current
        #[arg(long)]
        family: Family,
    },
    /// Generate a synthetic corpus with ground truth
    Synth {
        #[arg(long, default_value_t = 200)]
        events: usize,
        /// Scenario weights, e.g. `upstream=1,temporary=2` or a single kind
        #[arg(long, default_value = "default")]
        mix: ScenarioMix,
    },
    /// Detection rates of the full pipeline on a labeled corpus
    Eval {
        corpus: PathBuf,
        #[arg(long, value_name = "DIR")]
        dicts: Option<PathBuf>,
    },
}

enum Failure {
    Input(anyhow::Error),
    Missing(anyhow::Error),
    NonConverged(usize),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Missing(_) => 3,
            Failure::NonConverged(_) => 4,
        }
    }
}

fn not_found(e: &std::io::Error) -> bool {
    e.kind() == ErrorKind::NotFound
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let missing = e.chain().any(|cause| {
            if let Some(p) = cause.downcast_ref::<PipelineError>() {
                return match p {
                    PipelineError::MissingDictionary { .. } => true,
                    PipelineError::Io { source, .. } => not_found(source),
                    _ => false,
                };
            }
            if let Some(WaveformError::Io { source, .. }) = cause.downcast_ref::<WaveformError>() {
                return not_found(source);
            }
            if let Some(SynthError::Io { source, .. }) = cause.downcast_ref::<SynthError>() {
                return not_found(source);
            }
            if let Some(DictionaryError::Io { source, .. }) = cause.downcast_ref::<DictionaryError>() {
                return not_found(source);
            }
            cause.downcast_ref::<std::io::Error>().is_some_and(not_found)
        });
        if missing {
            Failure::Missing(e)
        } else {
            Failure::Input(e)
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("RECLOSER_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Input(e) | Failure::Missing(e) => eprintln!("error: {}", describe(e)),
                Failure::NonConverged(n) => eprintln!("error: {n} window(s) did not converge (strict mode)"),
            }
            ExitCode::from(f.code())
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn load_config(common: &Common) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path).with_context(|| format!("config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(lambda) = common.lambda {
        cfg.solver.lambda = lambda;
    }
    if let Some(conf_th) = common.conf_th {
        cfg.conf_th = conf_th;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_out(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes `text` to `--out` when given, else to stdout.
fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => write_out(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_record(path: &Path) -> anyhow::Result<WaveformRecord> {
    WaveformRecord::read_csv(path).with_context(|| format!("record {}", path.display()))
}

fn strict_check(strict: bool, non_converged: usize) -> Outcome {
    if strict && non_converged > 0 {
        return Err(Failure::NonConverged(non_converged));
    }
    if non_converged > 0 {
        tracing::warn!(non_converged, "some sparse codes did not converge and were treated as background");
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let common = cli.common;
    let cfg = load_config(&common)?;
    let out = common.out.as_deref();

    match cli.command {
        Command::Synth { events, mix } => {
            let dir = out.ok_or_else(|| anyhow!("synth needs --out DIR"))?;
            let corpus = gen_corpus(events, &mix, cfg.seed).map_err(anyhow::Error::from)?;
            corpus
                .write(dir)
                .with_context(|| format!("writing corpus to {}", dir.display()))?;
            let m = corpus.manifest();
            eprintln!(
                "wrote {} events, {} pulses (ss_voltage {}, ls_voltage {}, ls_current {})",
                m.n_events,
                m.total_pulses,
                m.pulses_per_family.ss_voltage,
                m.pulses_per_family.ls_voltage,
                m.pulses_per_family.ls_current
            );
        }
        Command::Train { corpus } => {
            let dir = out.ok_or_else(|| anyhow!("train needs --out DIR"))?;
            let (manifest, events) =
                load_corpus(&corpus).with_context(|| format!("corpus {}", corpus.display()))?;
            let (dicts, summary) = train_dictionaries(events.iter().map(|e| (&e.record, &e.truth)), &cfg)
                .with_context(|| format!("training on {}", corpus.display()))?;
            save_dictionaries(&dicts, dir, Some(&TrainingSeeds::from_manifest(&manifest)))
                .map_err(anyhow::Error::from)?;
            let text = pipeline::training_summary_to_json(&summary);
            write_out(&dir.join("training_summary.json"), &text)?;
            print!("{text}");
        }
        Command::Screen { record } => {
            let rec = read_record(&record)?;
            let report = run_screening(&rec, &cfg.thresholds, cfg.w_class).map_err(anyhow::Error::from)?;
            emit(out, &ScreeningDocument::new(report).to_json())?;
        }
        Command::Analyze { record, dicts } => {
            let rec = read_record(&record)?;
            let set = load_dictionaries(&cfg, dicts.as_deref()).map_err(anyhow::Error::from)?;
            let analysis = analyze(&rec, &set, &cfg).map_err(anyhow::Error::from)?;
            let report = analysis.report(&cfg).to_json();
            match out {
                Some(dir) => {
                    let stem = record.file_stem().and_then(|s| s.to_str()).unwrap_or("record");
                    write_out(&dir.join(format!("{stem}.report.json")), &report)?;
                    write_out(&dir.join(format!("{stem}.plot.csv")), &analysis.plot_csv(&rec))?;
                }
                None => print!("{report}"),
            }
            strict_check(common.strict, analysis.non_converged())?;
        }
        Command::Classify { window, dicts, family } => {
            let text = fs::read_to_string(&window).with_context(|| format!("window file {}", window.display()))?;
            let values = parse_window(&text).with_context(|| format!("window file {}", window.display()))?;
            let set = load_dictionaries(&cfg, dicts.as_deref()).map_err(anyhow::Error::from)?;
            let dict = set.get(family).expect("all families loaded");
            let w = SampleWindow {
                channel: family.channel(Phase::A),
                start_index: 0,
                values,
                padded: false,
            };
            let result = classify_window(&w, dict, &cfg.solver, cfg.conf_th).map_err(anyhow::Error::from)?;
            emit(out, &classification_json(family, &result))?;
            let failed = usize::from(result.rejected_reason == Some(RejectReason::NonConverged));
            strict_check(common.strict, failed)?;
        }
        Command::Eval { corpus, dicts } => {
            let (manifest, events) =
                load_corpus(&corpus).with_context(|| format!("corpus {}", corpus.display()))?;
            if let Some(dir) = dicts.as_deref() {
                if let Some(train) = read_training_seeds(dir).map_err(anyhow::Error::from)? {
                    check_disjoint(&train.event_seeds, &manifest.seeds()).map_err(anyhow::Error::from)?;
                } else {
                    tracing::warn!("no training seed list beside the dictionaries; cannot verify disjointness");
                }
            }
            let set = load_dictionaries(&cfg, dicts.as_deref()).map_err(anyhow::Error::from)?;
            let mut acc = EvalAccumulator::new();
            let mut non_converged = 0;
            for e in &events {
                let analysis = analyze(&e.record, &set, &cfg).with_context(|| format!("event {}", e.file))?;
                non_converged += analysis.non_converged();
                acc.add(&e.truth, &analysis.detections());
            }
            let summary = acc.finish(SCHEMA_VERSION);
            eprint!("{}", summary.to_table());
            emit(out, &pipeline::eval_to_json(&summary))?;
            strict_check(common.strict, non_converged)?;
        }
    }
    Ok(())
}

fn parse_window(text: &str) -> anyhow::Result<Vec<f64>> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(i, t)| match t.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(anyhow!("value {} (`{t}`) is not a finite number", i + 1)),
        })
        .collect()
}

fn classification_json(family: Family, r: &ClassificationResult) -> String {
    let doc = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "family": family,
        "label": r.label,
        "r_target": r.residual_target,
        "r_background": r.residual_background,
        "confidence": r.confidence,
        "nnz": r.code.as_ref().map(|c| c.nnz),
        "iterations": r.code.as_ref().map(|c| c.iterations),
        "kkt_residual": r.code.as_ref().map(|c| c.kkt_residual),
        "rejected_reason": r.rejected_reason,
        "confidence_definition": recloser_core::classify::CONFIDENCE_DEFINITION,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("json");
    s.push('\n');
    s
}
