//! Browser bindings: train dictionaries on a synthetic corpus, simulate and
//! analyze single events, and sweep λ on one candidate window.
//!
//! Every export returns a JSON string; the page in `www/` draws it on canvas.

use recloser_core::classify::{classify_window, DictionarySet, RejectReason};
use recloser_core::config::PipelineConfig;
use recloser_core::dictionary::Class;
use recloser_core::pipeline::{analyze, train_dictionaries, TrainingSummary};
use recloser_core::screening::StatusTimeline;
use recloser_core::sparse::SolverConfig;
use recloser_core::synth::{gen_corpus, gen_event, EventScenario, GroundTruth, ScenarioKind, ScenarioMix};
use recloser_core::waveform::{padded_window, ChannelKind, WaveformRecord};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Channel {
    name: &'static str,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct Candidate {
    channel: &'static str,
    start: i64,
    end: i64,
    label: i8,
    confidence: Option<f64>,
    rejected_reason: Option<RejectReason>,
    error: Option<String>,
}

#[derive(Serialize)]
struct EventView {
    kind: String,
    samples_per_cycle: usize,
    channels: Vec<Channel>,
    timeline: StatusTimeline,
    truth: GroundTruth,
    candidates: Vec<Candidate>,
    all_poles_open_at_end: bool,
}

#[derive(Serialize)]
struct SweepPoint {
    lambda: f64,
    nnz: usize,
    r_target: f64,
    r_background: f64,
    confidence: f64,
    label: i8,
    alpha: Vec<f64>,
}

#[derive(Serialize)]
struct Sweep {
    channel: &'static str,
    start: i64,
    n_target_atoms: usize,
    window: Vec<f64>,
    points: Vec<SweepPoint>,
}

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn json(v: &impl Serialize) -> String {
    serde_json::to_string(v).expect("demo views serialize")
}

/// Trained dictionaries plus the settings used to analyze events.
#[wasm_bindgen]
pub struct Demo {
    cfg: PipelineConfig,
    dicts: DictionarySet,
    summary: TrainingSummary,
    last: Option<(WaveformRecord, Vec<(ChannelKind, i64)>)>,
}

#[wasm_bindgen]
impl Demo {
    /// Trains on `events` synthetic events drawn from the default mix.
    #[wasm_bindgen(constructor)]
    pub fn new(events: usize, seed: u64) -> Result<Demo, JsError> {
        let cfg = PipelineConfig { seed, ..PipelineConfig::default() };
        let corpus = gen_corpus(events, &ScenarioMix::default(), seed).map_err(err)?;
        let (dicts, summary) =
            train_dictionaries(corpus.events.iter().map(|e| (&e.record, &e.truth)), &cfg).map_err(err)?;
        Ok(Demo { cfg, dicts, summary, last: None })
    }

    #[wasm_bindgen(js_name = trainingSummary)]
    pub fn training_summary(&self) -> String {
        json(&self.summary)
    }

    #[wasm_bindgen(js_name = setConfidence)]
    pub fn set_confidence(&mut self, conf_th: f64) -> Result<(), JsError> {
        let mut cfg = self.cfg.clone();
        cfg.conf_th = conf_th;
        cfg.validate().map_err(err)?;
        self.cfg = cfg;
        Ok(())
    }

    #[wasm_bindgen(js_name = setLambda)]
    pub fn set_lambda(&mut self, lambda: f64) -> Result<(), JsError> {
        let mut cfg = self.cfg.clone();
        cfg.solver.lambda = lambda;
        cfg.validate().map_err(err)?;
        self.cfg = cfg;
        Ok(())
    }

    /// Generates one event of `kind` and runs screening plus classification.
    pub fn simulate(&mut self, kind: &str, seed: u64) -> Result<String, JsError> {
        let kind: ScenarioKind = kind.parse().map_err(err)?;
        let (record, truth) = gen_event(&EventScenario::new(kind, seed)).map_err(err)?;
        let analysis = analyze(&record, &self.dicts, &self.cfg).map_err(err)?;
        let report = analysis.report(&self.cfg);
        let candidates: Vec<Candidate> = report
            .classifications
            .iter()
            .map(|c| Candidate {
                channel: c.channel.column_name(),
                start: c.window_start,
                end: c.window_start + self.cfg.w_class as i64,
                label: c.label.map_or(0, Class::sign),
                confidence: c.confidence,
                rejected_reason: c.rejected_reason,
                error: c.error.clone(),
            })
            .collect();
        let view = EventView {
            kind: kind.name().to_string(),
            samples_per_cycle: record.samples_per_cycle(),
            channels: ChannelKind::ALL
                .iter()
                .map(|&k| Channel { name: k.column_name(), values: record.channel(k).to_vec() })
                .collect(),
            timeline: report.timeline.clone(),
            truth,
            candidates,
            all_poles_open_at_end: report.all_poles_open_at_end,
        };
        let keys = report.classifications.iter().map(|c| (c.channel, c.window_start)).collect();
        self.last = Some((record, keys));
        Ok(json(&view))
    }

    /// Codes candidate `index` of the last simulated event at each λ.
    pub fn sweep(&self, index: usize, lambdas: &[f64]) -> Result<String, JsError> {
        let (record, keys) = self.last.as_ref().ok_or_else(|| JsError::new("simulate an event first"))?;
        let &(channel, start) = keys.get(index).ok_or_else(|| JsError::new("no such candidate"))?;
        let dict = self.dicts.get(channel.family()).ok_or_else(|| JsError::new("no dictionary"))?;
        let window = padded_window(record, channel, start, self.cfg.w_class);
        let mut points = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            let solver = SolverConfig { lambda, ..self.cfg.solver };
            let r = classify_window(&window, dict, &solver, self.cfg.conf_th).map_err(err)?;
            let code = r.code.as_ref();
            points.push(SweepPoint {
                lambda,
                nnz: code.map_or(0, |c| c.nnz),
                r_target: r.residual_target,
                r_background: r.residual_background,
                confidence: r.confidence,
                label: r.label.sign(),
                alpha: code.map_or_else(Vec::new, |c| c.alpha.clone()),
            });
        }
        Ok(json(&Sweep {
            channel: channel.column_name(),
            start,
            n_target_atoms: dict.n_target_atoms(),
            window: window.values,
            points,
        }))
    }
}
