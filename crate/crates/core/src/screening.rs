//! Time-domain screening: trailing RMS, debounced pole-status and fault-on
//! flags, and candidate pulse windows.
//!
//! Status flags use a long (one cycle) RMS window; candidate pulses use a
//! short (quarter cycle) RMS window evaluated only on signals that are not
//! already explained by an energized or closed status.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{ChannelKind, Family, Phase, WaveformRecord};

#[derive(Debug, Error, PartialEq)]
pub enum ScreeningError {
    #[error("rms of an empty sequence")]
    Empty,
    #[error("rms window {window} exceeds sequence length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("invalid thresholds: {0}")]
    Thresholds(String),
    #[error("record of {len} samples is shorter than the status window ({window})")]
    RecordTooShort { len: usize, window: usize },
}

pub type Result<T, E = ScreeningError> = std::result::Result<T, E>;

/// Screening thresholds in volts / amperes and window lengths in samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub v_status: f64,
    pub v_pulse: f64,
    pub i_status: f64,
    pub i_pulse: f64,
    pub status_window: usize,
    pub pulse_window: usize,
    pub debounce: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            v_status: 4000.0,
            v_pulse: 2800.0,
            i_status: 1000.0,
            i_pulse: 900.0,
            status_window: 64,
            pulse_window: 16,
            debounce: 64,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let levels = [self.v_status, self.v_pulse, self.i_status, self.i_pulse];
        if levels.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(ScreeningError::Thresholds(
                "all thresholds must be positive and finite".into(),
            ));
        }
        if self.pulse_window == 0 || self.pulse_window >= self.status_window {
            return Err(ScreeningError::Thresholds(format!(
                "pulse window {} must be in 1..{}",
                self.pulse_window, self.status_window
            )));
        }
        if self.debounce == 0 {
            return Err(ScreeningError::Thresholds("debounce must be at least 1".into()));
        }
        Ok(())
    }

    /// Short-RMS level a channel of this family must reach to be tagged.
    pub fn pulse_threshold(&self, family: Family) -> f64 {
        if family.is_voltage() {
            self.v_pulse
        } else {
            self.i_pulse
        }
    }
}

pub fn rms(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(ScreeningError::Empty);
    }
    let mean_sq = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    Ok(mean_sq.sqrt())
}

/// `out[k] = rms(values[k..k + m])`, for every full window.
///
/// The running sum of squares is recomputed from scratch every `m` outputs
/// so rounding drift stays bounded by one window's worth of updates.
pub fn sliding_rms(values: &[f64], m: usize) -> Result<Vec<f64>> {
    if m == 0 || values.is_empty() {
        return Err(ScreeningError::Empty);
    }
    if m > values.len() {
        return Err(ScreeningError::WindowTooLong {
            window: m,
            len: values.len(),
        });
    }
    let n_out = values.len() - m + 1;
    let scale = 1.0 / m as f64;
    let mut out = Vec::with_capacity(n_out);
    let mut acc = 0.0;
    for k in 0..n_out {
        if k % m == 0 {
            acc = values[k..k + m].iter().map(|v| v * v).sum();
        } else {
            let enter = values[k + m - 1];
            let leave = values[k - 1];
            acc += enter * enter - leave * leave;
        }
        out.push((acc.max(0.0) * scale).sqrt());
    }
    Ok(out)
}

/// RMS of the `m` samples ending at each index; indices before the first
/// full window read as `None`.
fn trailing_rms(values: &[f64], m: usize) -> Vec<Option<f64>> {
    let mut out = vec![None; values.len()];
    if let Ok(sliding) = sliding_rms(values, m) {
        for (k, v) in sliding.into_iter().enumerate() {
            out[k + m - 1] = Some(v);
        }
    }
    out
}

/// Change points `(index, state)` of a boolean signal, starting with the
/// state at index 0. A change is accepted only once the new state has held
/// for `debounce` consecutive samples, and is stamped at its onset.
fn debounce_flags(raw: &[bool], debounce: usize) -> Vec<(usize, bool)> {
    let Some(&first) = raw.first() else {
        return Vec::new();
    };
    let mut entries = vec![(0, first)];
    let mut state = first;
    let mut onset: Option<usize> = None;
    for (k, &r) in raw.iter().enumerate() {
        if r == state {
            onset = None;
            continue;
        }
        let start = *onset.get_or_insert(k);
        if k + 1 - start >= debounce {
            state = r;
            entries.push((start, state));
            onset = None;
        }
    }
    entries
}

/// Debounced comparison of the trailing `window`-sample RMS against `level`.
fn status_flags(values: &[f64], window: usize, level: f64, debounce: usize) -> Vec<(usize, bool)> {
    let trailing = trailing_rms(values, window);
    let first_full = trailing.iter().find_map(|v| *v).unwrap_or(0.0);
    let raw: Vec<bool> = trailing
        .iter()
        .map(|v| v.unwrap_or(first_full) >= level)
        .collect();
    debounce_flags(&raw, debounce)
}

/// State in effect at sample `k` given change points sorted by index.
pub fn state_at<T: Copy>(entries: &[(usize, T)], k: usize) -> Option<T> {
    let pos = entries.partition_point(|(i, _)| *i <= k);
    pos.checked_sub(1).map(|p| entries[p].1)
}

fn expand(entries: &[(usize, bool)], len: usize) -> Vec<bool> {
    let mut out = vec![false; len];
    for (j, &(start, state)) in entries.iter().enumerate() {
        let end = entries.get(j + 1).map_or(len, |e| e.0);
        out[start..end].fill(state);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimeline {
    /// Pole status change points; 1 closed, 0 open.
    pub status: Vec<(usize, u8)>,
    pub fault_on: Vec<(usize, bool)>,
    /// Source-side voltage energization change points.
    pub ss_energized: Vec<(usize, bool)>,
}

impl PhaseTimeline {
    pub fn is_closed_at(&self, k: usize) -> bool {
        state_at(&self.status, k) == Some(1)
    }

    pub fn final_status(&self) -> u8 {
        self.status.last().map_or(0, |e| e.1)
    }

    fn closed_entries(&self) -> Vec<(usize, bool)> {
        self.status.iter().map(|&(i, s)| (i, s == 1)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusTimeline {
    pub phases: BTreeMap<Phase, PhaseTimeline>,
}

impl StatusTimeline {
    pub fn phase(&self, phase: Phase) -> &PhaseTimeline {
        &self.phases[&phase]
    }

    pub fn all_open_at_end(&self) -> bool {
        self.phases.values().all(|p| p.final_status() == 0)
    }
}

/// Pole status from load-side voltage, fault-on from load-side current and
/// source energization from source-side voltage, all on the long RMS window.
pub fn detect_status(record: &WaveformRecord, th: &Thresholds) -> Result<StatusTimeline> {
    th.validate()?;
    if record.len() < th.status_window {
        return Err(ScreeningError::RecordTooShort {
            len: record.len(),
            window: th.status_window,
        });
    }
    let flags = |kind: ChannelKind, level: f64| {
        status_flags(record.channel(kind), th.status_window, level, th.debounce)
    };
    let phases = Phase::ALL
        .into_iter()
        .map(|phase| {
            let status = flags(Family::LsVoltage.channel(phase), th.v_status)
                .into_iter()
                .map(|(i, closed)| (i, u8::from(closed)))
                .collect();
            let timeline = PhaseTimeline {
                status,
                fault_on: flags(Family::LsCurrent.channel(phase), th.i_status),
                ss_energized: flags(Family::SsVoltage.channel(phase), th.v_status),
            };
            (phase, timeline)
        })
        .collect();
    Ok(StatusTimeline { phases })
}

/// A window flagged for classification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateWindow {
    pub channel: ChannelKind,
    /// Sample at which the trailing short RMS peaks.
    pub peak_index: usize,
    /// Classification window `[start, end)`; may extend past either record edge.
    #[serde(rename = "start")]
    pub start_index: i64,
    #[serde(rename = "end")]
    pub end_index: i64,
    pub peak_rms: f64,
    /// Merged span `[first, last]` of samples above the pulse threshold.
    pub span: (usize, usize),
}

/// Samples where `channel` is a "remaining" signal: its phase is open and,
/// for source-side voltage, the source itself is de-energized.
fn eligible_mask(kind: ChannelKind, timeline: &StatusTimeline, len: usize) -> Vec<bool> {
    let phase = timeline.phase(kind.phase());
    let open: Vec<bool> = expand(&phase.closed_entries(), len)
        .into_iter()
        .map(|c| !c)
        .collect();
    match kind.family() {
        Family::SsVoltage => {
            let energized = expand(&phase.ss_energized, len);
            open.iter().zip(energized).map(|(&o, e)| o && !e).collect()
        }
        Family::LsVoltage => open,
        Family::LsCurrent => {
            let fault = expand(&phase.fault_on, len);
            open.iter().zip(fault).map(|(&o, f)| o && !f).collect()
        }
    }
}

/// Index of the largest trailing short RMS within `[lo, hi]`, first on ties.
pub fn peak_short_rms(values: &[f64], window: usize, lo: usize, hi: usize) -> Option<(usize, f64)> {
    let trailing = trailing_rms(values, window);
    let hi = hi.min(values.len().saturating_sub(1));
    (lo..=hi)
        .filter_map(|k| trailing[k].map(|v| (k, v)))
        .fold(None, |best: Option<(usize, f64)>, (k, v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((k, v)),
        })
}

/// Classification window of length `w` registered on `peak`.
pub fn centered_window(peak: usize, w: usize) -> (i64, i64) {
    let start = peak as i64 - (w / 2) as i64;
    (start, start + w as i64)
}

pub fn tag_candidates(
    record: &WaveformRecord,
    timeline: &StatusTimeline,
    th: &Thresholds,
    w_class: usize,
) -> Result<Vec<CandidateWindow>> {
    th.validate()?;
    if w_class > record.len() {
        return Err(ScreeningError::WindowTooLong {
            window: w_class,
            len: record.len(),
        });
    }
    let len = record.len();
    let merge_gap = record.samples_per_cycle();
    let mut candidates = Vec::new();

    for kind in ChannelKind::ALL {
        let level = th.pulse_threshold(kind.family());
        let eligible = eligible_mask(kind, timeline, len);
        let short = trailing_rms(record.channel(kind), th.pulse_window);
        let hot = |k: usize| eligible[k] && short[k].is_some_and(|v| v >= level);

        // maximal runs [start, end)
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut k = 0;
        while k < len {
            if !hot(k) {
                k += 1;
                continue;
            }
            let start = k;
            while k < len && hot(k) {
                k += 1;
            }
            match runs.last_mut() {
                Some(prev) if start - prev.1 < merge_gap => prev.1 = k,
                _ => runs.push((start, k)),
            }
        }

        for (start, end) in runs {
            // gaps inside a merged run are below threshold, so the peak is on a hot sample
            let (peak, peak_rms) = (start..end)
                .filter(|&k| hot(k))
                .map(|k| (k, short[k].unwrap()))
                .fold((start, f64::NEG_INFINITY), |best, cur| {
                    if cur.1 > best.1 {
                        cur
                    } else {
                        best
                    }
                });
            let (ws, we) = centered_window(peak, w_class);
            candidates.push(CandidateWindow {
                channel: kind,
                peak_index: peak,
                start_index: ws,
                end_index: we,
                peak_rms,
                span: (start, end - 1),
            });
        }
    }
    Ok(candidates)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub device: String,
    pub t0: Option<String>,
    #[serde(flatten)]
    pub timeline: StatusTimeline,
    pub candidates: Vec<CandidateWindow>,
}

pub fn run_screening(
    record: &WaveformRecord,
    th: &Thresholds,
    w_class: usize,
) -> Result<ScreeningReport> {
    let timeline = detect_status(record, th)?;
    let candidates = tag_candidates(record, &timeline, th, w_class)?;
    Ok(ScreeningReport {
        device: record.device_id().to_string(),
        t0: record.start_timestamp().map(str::to_string),
        timeline,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{PI, SQRT_2};

    const SPC: usize = 64;

    fn brute_rms(values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for v in values {
            acc += v * v;
        }
        (acc / values.len() as f64).sqrt()
    }

    fn sine(len: usize, peak: f64, angle: f64) -> Vec<f64> {
        (0..len)
            .map(|k| peak * (2.0 * PI * k as f64 / SPC as f64 + angle).sin())
            .collect()
    }

    fn record_from(f: impl Fn(ChannelKind) -> Vec<f64>) -> WaveformRecord {
        let channels: [Vec<f64>; 9] = std::array::from_fn(|i| f(ChannelKind::ALL[i]));
        WaveformRecord::new(SPC, channels, "test", None).unwrap()
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&[5.0; 37]).unwrap(), 5.0);
        assert_eq!(rms(&[0.0; 64]).unwrap(), 0.0);
        let cycle = sine(64, 1.0, 0.0);
        assert!((rms(&cycle).unwrap() - 1.0 / SQRT_2).abs() < 1e-3);
        assert!((rms(&cycle).unwrap() - brute_rms(&cycle)).abs() < 1e-15);
        assert_eq!(rms(&[]), Err(ScreeningError::Empty));
    }

    #[test]
    fn sliding_rms_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = sliding_rms(&x, 64).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out[0] - rms(&x).unwrap()).abs() < 1e-14);

        let c = sliding_rms(&[2.5; 100], 16).unwrap();
        assert_eq!(c.len(), 85);
        assert!(c.iter().all(|v| (v - 2.5).abs() < 1e-14));

        assert!(matches!(
            sliding_rms(&[1.0; 10], 11),
            Err(ScreeningError::WindowTooLong { .. })
        ));
    }

    proptest! {
        #[test]
        fn sliding_rms_matches_brute_force(
            x in prop::collection::vec(-1e4f64..1e4, 16..600),
            m in prop::sample::select(vec![1usize, 3, 16, 64]),
        ) {
            prop_assume!(m <= x.len());
            let fast = sliding_rms(&x, m).unwrap();
            prop_assert_eq!(fast.len(), x.len() - m + 1);
            for (k, v) in fast.iter().enumerate() {
                let want = brute_rms(&x[k..k + m]);
                prop_assert!((v - want).abs() <= 1e-10 * want.max(1.0), "k={} {} vs {}", k, v, want);
            }
        }

        #[test]
        fn debounced_transitions_are_spaced(raw in prop::collection::vec(any::<bool>(), 1..400), d in 1usize..40) {
            let entries = debounce_flags(&raw, d);
            prop_assert_eq!(entries[0].0, 0);
            for pair in entries.windows(2) {
                prop_assert!(pair[1].0 > pair[0].0);
                prop_assert!(pair[1].1 != pair[0].1);
                if pair[0].0 > 0 {
                    prop_assert!(pair[1].0 - pair[0].0 >= d);
                }
            }
        }
    }

    #[test]
    fn steady_energized_pole_is_closed() {
        let len = 30 * SPC;
        let rec = record_from(|k| match k.family() {
            Family::LsCurrent => vec![0.0; len],
            _ => sine(len, 7200.0, k.phase().angle()),
        });
        let tl = detect_status(&rec, &Thresholds::default()).unwrap();
        for phase in Phase::ALL {
            let p = tl.phase(phase);
            assert_eq!(p.status, vec![(0, 1)]);
            assert_eq!(p.fault_on, vec![(0, false)]);
        }
        let report = run_screening(&rec, &Thresholds::default(), 180).unwrap();
        assert!(report.candidates.is_empty());
    }

    #[test]
    fn dead_record_is_open_without_transitions() {
        let rec = record_from(|_| vec![0.0; 30 * SPC]);
        let report = run_screening(&rec, &Thresholds::default(), 180).unwrap();
        for phase in Phase::ALL {
            assert_eq!(report.timeline.phase(phase).status, vec![(0, 0)]);
        }
        assert!(report.candidates.is_empty());
    }

    #[test]
    fn fault_current_step_sets_fault_on_at_debounced_onset() {
        let len = 20 * SPC;
        let step = 5 * SPC;
        let fault: Vec<f64> = sine(len, 1400.0 * SQRT_2, -1.2)
            .into_iter()
            .enumerate()
            .map(|(k, v)| if k >= step { v } else { 0.0 })
            .collect();
        let rec = record_from(|k| match k {
            ChannelKind::LsCurrentC => fault.clone(),
            k if k.family() == Family::LsCurrent => vec![0.0; len],
            k => sine(len, 7200.0, k.phase().angle()),
        });
        let th = Thresholds::default();
        let tl = detect_status(&rec, &th).unwrap();

        // brute force: first sample whose trailing 64-sample RMS clears 1 kA and
        // stays above it for a full debounce interval
        let above = |k: usize| k >= 63 && brute_rms(&fault[k - 63..=k]) >= th.i_status;
        let onset = (0..len - th.debounce)
            .find(|&k| (k..k + th.debounce).all(above))
            .unwrap();
        assert!((step + 24..=step + 40).contains(&onset), "onset {onset}");
        assert_eq!(tl.phase(Phase::C).fault_on, vec![(0, false), (onset, true)]);
        assert_eq!(tl.phase(Phase::A).fault_on, vec![(0, false)]);
    }

    #[test]
    fn open_phase_pulse_yields_one_candidate() {
        let len = 30 * SPC;
        let start = 12 * SPC + 5;
        let dur = (0.35 * SPC as f64) as usize;
        let mut pulse = vec![0.0; len];
        for i in 0..dur {
            pulse[start + i] = 5000.0 * (PI * (i as f64 + 0.5) / dur as f64).sin();
        }
        let rec = record_from(|k| match k {
            ChannelKind::LsVoltageB => pulse.clone(),
            k if k.family() == Family::SsVoltage => sine(len, 7200.0, k.phase().angle()),
            _ => vec![0.0; len],
        });
        let th = Thresholds::default();
        let report = run_screening(&rec, &th, 180).unwrap();
        assert_eq!(report.candidates.len(), 1, "{:?}", report.candidates);
        let c = &report.candidates[0];
        assert_eq!(c.channel, ChannelKind::LsVoltageB);
        assert!((start..start + dur).contains(&c.peak_index));
        assert_eq!(c.end_index - c.start_index, 180);
        assert!(c.peak_rms >= th.v_pulse);

        // removing the pulse removes the candidate
        let quiet = record_from(|k| match k.family() {
            Family::SsVoltage => sine(len, 7200.0, k.phase().angle()),
            _ => vec![0.0; len],
        });
        assert!(run_screening(&quiet, &th, 180).unwrap().candidates.is_empty());

        // raising the pulse threshold can only remove candidates
        let strict = Thresholds {
            v_pulse: 6000.0,
            ..th
        };
        assert!(run_screening(&rec, &strict, 180).unwrap().candidates.is_empty());
    }

    #[test]
    fn nearby_runs_merge() {
        let len = 20 * SPC;
        let mut x = vec![0.0; len];
        for base in [6 * SPC, 6 * SPC + 40] {
            for i in 0..16 {
                x[base + i] = 8000.0 * (PI * (i as f64 + 0.5) / 16.0).sin();
            }
        }
        let rec = record_from(|k| {
            if k == ChannelKind::LsVoltageA {
                x.clone()
            } else {
                vec![0.0; len]
            }
        });
        let report = run_screening(&rec, &Thresholds::default(), 180).unwrap();
        assert_eq!(report.candidates.len(), 1);
    }

    #[test]
    fn short_record_is_rejected() {
        let short = WaveformRecord::new(16, std::array::from_fn(|_| vec![0.0; 40]), "d", None).unwrap();
        assert!(matches!(
            run_screening(&short, &Thresholds::default(), 16),
            Err(ScreeningError::RecordTooShort { .. })
        ));
    }
}
