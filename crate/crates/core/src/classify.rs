//! Sparse-representation classification of candidate windows.
//!
//! A unit-normalized query is coded against the whole labeled dictionary,
//! then reconstructed from each class's coefficients alone. The class with
//! the smaller residual wins, and a target decision additionally needs the
//! confidence `1 − r₊₁` to clear a floor.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dictionary::{Class, LabeledDictionary};
use crate::linalg::norm2;
use crate::screening::ScreeningReport;
use crate::sparse::{solve_l1ls, SolverConfig, SparseCode, SparseError};
use crate::waveform::{normalize_values, padded_window, ChannelKind, Family, SampleWindow, WaveformRecord};

pub const DEFAULT_CONFIDENCE: f64 = 0.4;

/// How the confidence value is defined; copied into every report.
pub const CONFIDENCE_DEFINITION: &str =
    "confidence = 1 - ||x_q - D*delta_target(alpha)||_2 on the unit-norm query";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ClassifyError {
    #[error("window has {got} samples, dictionary expects {want}")]
    WindowLength { got: usize, want: usize },
    #[error("no dictionary for family {0}")]
    MissingDictionary(Family),
    #[error("solver: {0}")]
    Solver(#[from] SparseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    ZeroEnergy,
    NonConverged,
    LowConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub channel: ChannelKind,
    pub window_start: i64,
    pub label: Class,
    pub residual_target: f64,
    pub residual_background: f64,
    pub confidence: f64,
    /// Absent when the window carried no energy and was never coded.
    pub code: Option<SparseCode>,
    pub rejected_reason: Option<RejectReason>,
}

impl ClassificationResult {
    pub fn is_pulse(&self) -> bool {
        self.label == Class::Target
    }
}

/// `δ_c(α)`: keeps the coefficients of atoms labeled `class`.
pub fn class_select(alpha: &[f64], dict: &LabeledDictionary, class: Class) -> Vec<f64> {
    alpha
        .iter()
        .zip(dict.labels())
        .map(|(&a, &l)| if l == class { a } else { 0.0 })
        .collect()
}

/// `‖x − D δ_c(α)‖₂`
pub fn class_residual(x: &[f64], alpha: &[f64], dict: &LabeledDictionary, class: Class) -> f64 {
    let recon = dict.atoms().mul_vec(&class_select(alpha, dict, class));
    let diff: Vec<f64> = x.iter().zip(&recon).map(|(a, b)| a - b).collect();
    norm2(&diff)
}

pub fn classify_window(
    window: &SampleWindow,
    dict: &LabeledDictionary,
    cfg: &SolverConfig,
    conf_th: f64,
) -> Result<ClassificationResult, ClassifyError> {
    if window.len() != dict.n() {
        return Err(ClassifyError::WindowLength {
            got: window.len(),
            want: dict.n(),
        });
    }
    let background = |reason| ClassificationResult {
        channel: window.channel,
        window_start: window.start_index,
        label: Class::Background,
        residual_target: 1.0,
        residual_background: 1.0,
        confidence: 0.0,
        code: None,
        rejected_reason: Some(reason),
    };
    let Ok(query) = normalize_values(&window.values) else {
        return Ok(background(RejectReason::ZeroEnergy));
    };

    let code = solve_l1ls(&query, dict.atoms(), cfg)?;
    let r_target = class_residual(&query, &code.alpha, dict, Class::Target);
    let r_background = class_residual(&query, &code.alpha, dict, Class::Background);
    let confidence = 1.0 - r_target;

    let (label, rejected_reason) = if !code.converged {
        (Class::Background, Some(RejectReason::NonConverged))
    } else if r_target < r_background {
        if confidence >= conf_th {
            (Class::Target, None)
        } else {
            (Class::Background, Some(RejectReason::LowConfidence))
        }
    } else {
        (Class::Background, None)
    };

    Ok(ClassificationResult {
        channel: window.channel,
        window_start: window.start_index,
        label,
        residual_target: r_target,
        residual_background: r_background,
        confidence,
        code: Some(code),
        rejected_reason,
    })
}

/// One dictionary per measurement family.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DictionarySet {
    dicts: BTreeMap<Family, LabeledDictionary>,
}

impl DictionarySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dict: LabeledDictionary) {
        self.dicts.insert(dict.family, dict);
    }

    pub fn get(&self, family: Family) -> Option<&LabeledDictionary> {
        self.dicts.get(&family)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledDictionary> {
        self.dicts.values()
    }

    pub fn len(&self) -> usize {
        self.dicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dicts.is_empty()
    }
}

impl FromIterator<LabeledDictionary> for DictionarySet {
    fn from_iter<I: IntoIterator<Item = LabeledDictionary>>(iter: I) -> Self {
        let mut set = Self::new();
        for d in iter {
            set.insert(d);
        }
        set
    }
}

/// Outcome for one candidate window.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateOutcome {
    Classified(ClassificationResult),
    Failed {
        channel: ChannelKind,
        window_start: i64,
        error: ClassifyError,
    },
}

impl CandidateOutcome {
    pub fn key(&self) -> (ChannelKind, i64) {
        match self {
            CandidateOutcome::Classified(r) => (r.channel, r.window_start),
            CandidateOutcome::Failed {
                channel,
                window_start,
                ..
            } => (*channel, *window_start),
        }
    }

    pub fn result(&self) -> Option<&ClassificationResult> {
        match self {
            CandidateOutcome::Classified(r) => Some(r),
            CandidateOutcome::Failed { .. } => None,
        }
    }
}

/// Classifies every screened candidate with its family's dictionary,
/// zero-padding windows that run off the record. Ordered by channel, then
/// window start.
pub fn classify_candidates(
    record: &WaveformRecord,
    report: &ScreeningReport,
    dicts: &DictionarySet,
    cfg: &SolverConfig,
    conf_th: f64,
) -> Vec<CandidateOutcome> {
    let mut out: Vec<CandidateOutcome> = report
        .candidates
        .iter()
        .map(|cand| {
            let family = cand.channel.family();
            let fail = |error| CandidateOutcome::Failed {
                channel: cand.channel,
                window_start: cand.start_index,
                error,
            };
            let Some(dict) = dicts.get(family) else {
                return fail(ClassifyError::MissingDictionary(family));
            };
            let w = (cand.end_index - cand.start_index) as usize;
            let window = padded_window(record, cand.channel, cand.start_index, w);
            match classify_window(&window, dict, cfg, conf_th) {
                Ok(r) => CandidateOutcome::Classified(r),
                Err(e) => fail(e),
            }
        })
        .collect();
    out.sort_by_key(|o| o.key());
    out
}
