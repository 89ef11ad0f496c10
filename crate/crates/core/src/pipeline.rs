//! End-to-end orchestration: training from labeled corpora, per-record
//! analysis with report and plot emission, and corpus evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classify::{classify_candidates, CandidateOutcome, DictionarySet, RejectReason, CONFIDENCE_DEFINITION};
use crate::config::{dictionary_file_name, PipelineConfig};
use crate::dictionary::{train, Class, DictionaryError, LabeledDictionary, Slot, TrainingSet};
use crate::eval::{covers, Detection, EvalAccumulator, EvalSummary};
use crate::screening::{
    centered_window, peak_short_rms, run_screening, CandidateWindow, ScreeningError, ScreeningReport, StatusTimeline,
};
use crate::seeds::derive_seed;
use crate::synth::{GroundTruth, Manifest, Polarity};
use crate::waveform::{l2_norm, padded_window, ChannelKind, Family, Phase, WaveformRecord};

/// Version stamped on every JSON document this crate emits.
pub const SCHEMA_VERSION: u32 = 1;
pub const TRAINING_SEEDS_FILE: &str = "training_seeds.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("corpus has no events")]
    EmptyCorpus,
    #[error("screening: {0}")]
    Screening(#[from] ScreeningError),
    #[error(transparent)]
    Dictionary(#[from] DictionaryError),
    #[error("no dictionary for family {family} (expected {path})")]
    MissingDictionary { family: Family, path: String },
    #[error("test corpus shares {count} event seed(s) with the training corpus")]
    SeedOverlap { count: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Window registered on a true pulse exactly as screening would register it:
/// centered on the largest trailing short RMS inside the burst and the
/// short window that follows it.
pub fn target_window_start(record: &WaveformRecord, channel: ChannelKind, start: usize, end: usize, cfg: &PipelineConfig) -> i64 {
    let pw = cfg.thresholds.pulse_window;
    let (peak, _) = peak_short_rms(record.channel(channel), pw, start, end + pw)
        .unwrap_or((start, 0.0));
    centered_window(peak, cfg.w_class).0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingCounts {
    pub pulses: usize,
    pub inverse_pulses: usize,
    pub screened_background: usize,
    pub random_background: usize,
}

/// Cuts labeled windows from every event into one training set per family.
pub fn collect_training<'a>(
    events: impl IntoIterator<Item = (&'a WaveformRecord, &'a GroundTruth)>,
    cfg: &PipelineConfig,
) -> Result<(BTreeMap<Family, TrainingSet>, BTreeMap<Family, TrainingCounts>)> {
    let w = cfg.w_class;
    let mut sets: BTreeMap<Family, TrainingSet> = Family::ALL.iter().map(|&f| (f, TrainingSet::new(f, w))).collect();
    let mut counts: BTreeMap<Family, TrainingCounts> = Family::ALL.iter().map(|&f| (f, TrainingCounts::default())).collect();

    for (index, (record, truth)) in events.into_iter().enumerate() {
        for p in &truth.pulses {
            let family = p.channel.family();
            let start = target_window_start(record, p.channel, p.start, p.end, cfg);
            let slot = match p.polarity {
                Polarity::Pulse => Slot::Pulse,
                Polarity::Inverse => Slot::InversePulse,
            };
            if sets.get_mut(&family).unwrap().push(padded_window(record, p.channel, start, w), slot) {
                let c = counts.get_mut(&family).unwrap();
                match p.polarity {
                    Polarity::Pulse => c.pulses += 1,
                    Polarity::Inverse => c.inverse_pulses += 1,
                }
            }
        }

        // screened windows that hold no true pulse are background examples
        let report = run_screening(record, &cfg.thresholds, w)?;
        for cand in &report.candidates {
            let det = Detection {
                channel: cand.channel,
                start: cand.start_index,
                end: cand.end_index,
            };
            if truth.pulses.iter().any(|p| covers(&det, p)) {
                continue;
            }
            let family = cand.channel.family();
            if sets.get_mut(&family).unwrap().push(padded_window(record, cand.channel, cand.start_index, w), Slot::Background) {
                counts.get_mut(&family).unwrap().screened_background += 1;
            }
        }

        // plus random live windows away from any pulse
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x5EED_BAC6, index as u64));
        let span = record.len().saturating_sub(w) as i64;
        for family in Family::ALL {
            let floor = 0.1 * cfg.thresholds.pulse_threshold(family) * (w as f64).sqrt();
            let mut taken = 0;
            for _ in 0..20 * cfg.random_background {
                if taken == cfg.random_background {
                    break;
                }
                let channel = family.channel(Phase::ALL[rng.random_range(0..3)]);
                let start = rng.random_range(0..=span);
                let det = Detection { channel, start, end: start + w as i64 };
                let hits_pulse = truth
                    .pulses
                    .iter()
                    .any(|p| p.channel == channel && (p.start as i64) < det.end + w as i64 / 2 && p.end as i64 + (w as i64) / 2 > det.start);
                let window = padded_window(record, channel, start, w);
                if hits_pulse || l2_norm(&window.values) < floor {
                    continue;
                }
                sets.get_mut(&family).unwrap().push(window, Slot::Background);
                counts.get_mut(&family).unwrap().random_background += 1;
                taken += 1;
            }
        }
    }
    Ok((sets, counts))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub schema_version: u32,
    pub n_events: usize,
    pub seed: u64,
    pub windows: BTreeMap<Family, TrainingCounts>,
}

/// Trains one dictionary per family from labeled events.
pub fn train_dictionaries<'a>(
    events: impl IntoIterator<Item = (&'a WaveformRecord, &'a GroundTruth)>,
    cfg: &PipelineConfig,
) -> Result<(DictionarySet, TrainingSummary)> {
    let events: Vec<_> = events.into_iter().collect();
    if events.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let (sets, counts) = collect_training(events.iter().copied(), cfg)?;
    let dicts = sets
        .values()
        .map(|ts| train(ts, cfg.k_target, cfg.k_background, derive_seed(cfg.seed, 10 + ts.family as u64)))
        .collect::<Result<DictionarySet, _>>()?;
    Ok((
        dicts,
        TrainingSummary {
            schema_version: SCHEMA_VERSION,
            n_events: events.len(),
            seed: cfg.seed,
            windows: counts,
        },
    ))
}

/// Event seeds a dictionary set was trained on, stored beside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSeeds {
    pub schema_version: u32,
    pub master_seed: u64,
    pub event_seeds: BTreeSet<u64>,
}

impl TrainingSeeds {
    pub fn from_manifest(m: &Manifest) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            master_seed: m.master_seed,
            event_seeds: m.seeds(),
        }
    }
}

/// Refuses evaluation on events that were also used for training.
pub fn check_disjoint(train: &BTreeSet<u64>, test: &BTreeSet<u64>) -> Result<()> {
    let count = train.intersection(test).count();
    if count > 0 {
        return Err(PipelineError::SeedOverlap { count });
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// Saves dictionaries as `<family>.json`, plus the training seeds when known.
pub fn save_dictionaries(dicts: &DictionarySet, dir: &Path, seeds: Option<&TrainingSeeds>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    for d in dicts.iter() {
        let path = dir.join(dictionary_file_name(d.family));
        d.save(&path)?;
        written.push(path);
    }
    if let Some(seeds) = seeds {
        let path = dir.join(TRAINING_SEEDS_FILE);
        write_file(&path, &to_json(seeds))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_training_seeds(dir: &Path) -> Result<Option<TrainingSeeds>> {
    let path = dir.join(TRAINING_SEEDS_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map(Some).map_err(|e| PipelineError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads all three family dictionaries, from explicit config paths or `dir`.
pub fn load_dictionaries(cfg: &PipelineConfig, dir: Option<&Path>) -> Result<DictionarySet> {
    let mut set = DictionarySet::new();
    for family in Family::ALL {
        let Some(path) = cfg.dictionary_path(family, dir) else {
            return Err(PipelineError::MissingDictionary {
                family,
                path: "(no path configured)".into(),
            });
        };
        if !path.exists() {
            return Err(PipelineError::MissingDictionary {
                family,
                path: path.display().to_string(),
            });
        }
        set.insert(LabeledDictionary::load_for(&path, family)?);
    }
    Ok(set)
}

/// Screening and classification of one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub screening: ScreeningReport,
    pub outcomes: Vec<CandidateOutcome>,
}

pub fn analyze(record: &WaveformRecord, dicts: &DictionarySet, cfg: &PipelineConfig) -> Result<Analysis> {
    let screening = run_screening(record, &cfg.thresholds, cfg.w_class)?;
    let outcomes = classify_candidates(record, &screening, dicts, &cfg.solver, cfg.conf_th);
    Ok(Analysis { screening, outcomes })
}

impl Analysis {
    /// Windows labeled as pulses.
    pub fn detections(&self) -> Vec<Detection> {
        self.outcomes
            .iter()
            .filter_map(CandidateOutcome::result)
            .filter(|r| r.is_pulse())
            .map(|r| Detection {
                channel: r.channel,
                start: r.window_start,
                end: r.window_start + self.window_len(r.channel, r.window_start),
            })
            .collect()
    }

    fn window_len(&self, channel: ChannelKind, start: i64) -> i64 {
        self.screening
            .candidates
            .iter()
            .find(|c| c.channel == channel && c.start_index == start)
            .map_or(0, |c| c.end_index - c.start_index)
    }

    pub fn non_converged(&self) -> usize {
        self.outcomes
            .iter()
            .filter_map(CandidateOutcome::result)
            .filter(|r| r.rejected_reason == Some(RejectReason::NonConverged))
            .count()
    }

    pub fn report(&self, cfg: &PipelineConfig) -> AnalysisReport {
        let classifications = self
            .outcomes
            .iter()
            .map(|o| match o {
                CandidateOutcome::Classified(r) => ClassificationEntry {
                    channel: r.channel,
                    window_start: r.window_start,
                    label: Some(r.label),
                    r_target: Some(r.residual_target),
                    r_background: Some(r.residual_background),
                    confidence: Some(r.confidence),
                    nnz: r.code.as_ref().map(|c| c.nnz),
                    iterations: r.code.as_ref().map(|c| c.iterations),
                    kkt_residual: r.code.as_ref().map(|c| c.kkt_residual),
                    rejected_reason: r.rejected_reason,
                    error: None,
                },
                CandidateOutcome::Failed {
                    channel,
                    window_start,
                    error,
                } => ClassificationEntry {
                    channel: *channel,
                    window_start: *window_start,
                    label: None,
                    r_target: None,
                    r_background: None,
                    confidence: None,
                    nnz: None,
                    iterations: None,
                    kkt_residual: None,
                    rejected_reason: None,
                    error: Some(error.to_string()),
                },
            })
            .collect::<Vec<_>>();
        AnalysisReport {
            schema_version: SCHEMA_VERSION,
            device: self.screening.device.clone(),
            t0: self.screening.t0.clone(),
            timeline: self.screening.timeline.clone(),
            candidates: self.screening.candidates.clone(),
            lambda: cfg.lambda(),
            conf_th: cfg.conf_th,
            confidence_definition: CONFIDENCE_DEFINITION.to_string(),
            n_pulses: classifications.iter().filter(|c| c.label == Some(Class::Target)).count(),
            all_poles_open_at_end: self.screening.timeline.all_open_at_end(),
            classifications,
        }
    }

    /// One row per sample: the nine channels, per-phase status and fault
    /// flags (0/1), and a marker per channel: 0 outside candidate windows,
    /// 1 background, 2 pulse, -1 unclassified.
    pub fn plot_csv(&self, record: &WaveformRecord) -> String {
        let len = record.len();
        let mut marks = vec![[0i8; 9]; len];
        for o in &self.outcomes {
            let (channel, start) = o.key();
            let mark = match o.result() {
                Some(r) if r.is_pulse() => 2,
                Some(_) => 1,
                None => -1,
            };
            let end = start + self.window_len(channel, start);
            for k in start.max(0)..end.min(len as i64) {
                marks[k as usize][channel.index()] = mark;
            }
        }
        let timeline = &self.screening.timeline;
        let flags = |entries: Vec<(usize, bool)>| {
            let mut out = vec![false; len];
            for (j, &(start, v)) in entries.iter().enumerate() {
                let end = entries.get(j + 1).map_or(len, |e| e.0);
                out[start..end].fill(v);
            }
            out
        };
        let closed: Vec<Vec<bool>> = Phase::ALL
            .iter()
            .map(|&p| flags(timeline.phase(p).status.iter().map(|&(i, s)| (i, s == 1)).collect()))
            .collect();
        let fault: Vec<Vec<bool>> = Phase::ALL
            .iter()
            .map(|&p| flags(timeline.phase(p).fault_on.clone()))
            .collect();

        let mut s = String::from("sample");
        for ch in ChannelKind::ALL {
            write!(s, ",{}", ch.column_name()).unwrap();
        }
        s.push_str(",status_a,status_b,status_c,fault_a,fault_b,fault_c");
        for ch in ChannelKind::ALL {
            write!(s, ",mark_{}", ch.column_name()).unwrap();
        }
        s.push('\n');
        for k in 0..len {
            write!(s, "{k}").unwrap();
            for ch in ChannelKind::ALL {
                write!(s, ",{:?}", record.channel(ch)[k]).unwrap();
            }
            for flags in closed.iter().chain(&fault) {
                write!(s, ",{}", u8::from(flags[k])).unwrap();
            }
            for m in marks[k] {
                write!(s, ",{m}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationEntry {
    pub channel: ChannelKind,
    pub window_start: i64,
    pub label: Option<Class>,
    pub r_target: Option<f64>,
    pub r_background: Option<f64>,
    pub confidence: Option<f64>,
    pub nnz: Option<usize>,
    pub iterations: Option<usize>,
    pub kkt_residual: Option<f64>,
    pub rejected_reason: Option<RejectReason>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub device: String,
    pub t0: Option<String>,
    #[serde(flatten)]
    pub timeline: StatusTimeline,
    pub candidates: Vec<CandidateWindow>,
    pub lambda: f64,
    pub conf_th: f64,
    pub confidence_definition: String,
    pub n_pulses: usize,
    pub all_poles_open_at_end: bool,
    pub classifications: Vec<ClassificationEntry>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Screening report with a schema version, for the screen-only command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningDocument {
    pub schema_version: u32,
    #[serde(flatten)]
    pub report: ScreeningReport,
}

impl ScreeningDocument {
    pub fn new(report: ScreeningReport) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            report,
        }
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }
}

/// Runs the full pipeline on every event and scores the pulse detections.
pub fn evaluate<'a>(
    events: impl IntoIterator<Item = (&'a WaveformRecord, &'a GroundTruth)>,
    dicts: &DictionarySet,
    cfg: &PipelineConfig,
) -> Result<EvalSummary> {
    let mut acc = EvalAccumulator::new();
    for (record, truth) in events {
        let analysis = analyze(record, dicts, cfg)?;
        acc.add(truth, &analysis.detections());
    }
    Ok(acc.finish(SCHEMA_VERSION))
}

pub fn eval_to_json(summary: &EvalSummary) -> String {
    to_json(summary)
}

pub fn training_summary_to_json(summary: &TrainingSummary) -> String {
    to_json(summary)
}
