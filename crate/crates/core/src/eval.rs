//! Detection metrics against ground truth.
//!
//! A detection is correct when its window covers at least half of a true
//! pulse's burst on the same channel. Rates use the true pulse count as the
//! denominator for both the correct and the false detection percentages.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::synth::{GroundTruth, PulseInterval};
use crate::waveform::{ChannelKind, Family};

/// A window the pipeline labeled as a pulse, `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Detection {
    pub channel: ChannelKind,
    pub start: i64,
    pub end: i64,
}

pub fn overlap(a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0)
}

/// Whether `det` covers at least half of `pulse`.
pub fn covers(det: &Detection, pulse: &PulseInterval) -> bool {
    let pulse_span = (pulse.start as i64, pulse.end as i64);
    det.channel == pulse.channel && 2 * overlap((det.start, det.end), pulse_span) >= pulse_span.1 - pulse_span.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_true_pulses: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

impl Counts {
    fn add(&mut self, other: Counts) {
        self.n_true_pulses += other.n_true_pulses;
        self.true_positives += other.true_positives;
        self.false_positives += other.false_positives;
    }
}

/// Per-family counts for one event. Each true pulse is claimed by at most
/// one detection; detections are visited in (channel, start) order.
pub fn match_event(truth: &GroundTruth, detections: &[Detection]) -> BTreeMap<Family, Counts> {
    let mut counts: BTreeMap<Family, Counts> = Family::ALL.iter().map(|&f| (f, Counts::default())).collect();
    for p in &truth.pulses {
        counts.get_mut(&p.channel.family()).unwrap().n_true_pulses += 1;
    }
    let mut sorted = detections.to_vec();
    sorted.sort();
    let mut claimed = vec![false; truth.pulses.len()];
    for det in &sorted {
        let c = counts.get_mut(&det.channel.family()).unwrap();
        match (0..truth.pulses.len()).find(|&i| !claimed[i] && covers(det, &truth.pulses[i])) {
            Some(i) => {
                claimed[i] = true;
                c.true_positives += 1;
            }
            None => c.false_positives += 1,
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyEval {
    pub n_true_pulses: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    /// `100·TP / n_true_pulses`; absent when there are no true pulses.
    pub correct_detection_pct: Option<f64>,
    /// `100·FP / n_true_pulses`; absent when there are no true pulses.
    pub false_detection_pct: Option<f64>,
}

impl From<Counts> for FamilyEval {
    fn from(c: Counts) -> Self {
        let pct = |x: usize| (c.n_true_pulses > 0).then(|| 100.0 * x as f64 / c.n_true_pulses as f64);
        Self {
            n_true_pulses: c.n_true_pulses,
            true_positives: c.true_positives,
            false_positives: c.false_positives,
            correct_detection_pct: pct(c.true_positives),
            false_detection_pct: pct(c.false_positives),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: u32,
    pub n_events: usize,
    pub families: BTreeMap<Family, FamilyEval>,
}

impl EvalSummary {
    pub fn family(&self, family: Family) -> &FamilyEval {
        &self.families[&family]
    }

    /// Rows in the layout of a per-family rate table.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        let mut s = format!("{:<12} {:>8} {:>6} {:>6} {:>10} {:>10}\n", "family", "pulses", "tp", "fp", "correct%", "false%");
        for (f, e) in &self.families {
            s.push_str(&format!(
                "{:<12} {:>8} {:>6} {:>6} {:>10} {:>10}\n",
                f.name(),
                e.n_true_pulses,
                e.true_positives,
                e.false_positives,
                fmt(e.correct_detection_pct),
                fmt(e.false_detection_pct)
            ));
        }
        s
    }
}

/// Sums per-event counts; the result does not depend on event order.
#[derive(Debug, Clone, Default)]
pub struct EvalAccumulator {
    n_events: usize,
    totals: BTreeMap<Family, Counts>,
}

impl EvalAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, truth: &GroundTruth, detections: &[Detection]) {
        self.n_events += 1;
        for (f, c) in match_event(truth, detections) {
            self.totals.entry(f).or_default().add(c);
        }
    }

    pub fn finish(self, schema_version: u32) -> EvalSummary {
        EvalSummary {
            schema_version,
            n_events: self.n_events,
            families: Family::ALL
                .iter()
                .map(|&f| (f, self.totals.get(&f).copied().unwrap_or_default().into()))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Polarity;

    fn pulse(channel: ChannelKind, start: usize, len: usize) -> PulseInterval {
        PulseInterval {
            channel,
            start,
            end: start + len,
            polarity: Polarity::Pulse,
        }
    }

    fn truth() -> GroundTruth {
        GroundTruth {
            pulses: vec![
                pulse(ChannelKind::LsVoltageA, 600, 20),
                pulse(ChannelKind::LsVoltageA, 800, 20),
                pulse(ChannelKind::LsCurrentB, 1000, 20),
            ],
            ..Default::default()
        }
    }

    fn centered(p: &PulseInterval) -> Detection {
        let mid = ((p.start + p.end) / 2) as i64;
        Detection {
            channel: p.channel,
            start: mid - 90,
            end: mid + 90,
        }
    }

    #[test]
    fn perfect_and_empty_detectors() {
        let t = truth();
        let mut acc = EvalAccumulator::new();
        acc.add(&t, &t.pulses.iter().map(centered).collect::<Vec<_>>());
        let s = acc.finish(1);
        assert_eq!(s.family(Family::LsVoltage).correct_detection_pct, Some(100.0));
        assert_eq!(s.family(Family::LsVoltage).false_detection_pct, Some(0.0));
        assert_eq!(s.family(Family::LsCurrent).correct_detection_pct, Some(100.0));
        assert_eq!(s.family(Family::SsVoltage).correct_detection_pct, None);

        let mut acc = EvalAccumulator::new();
        acc.add(&t, &[]);
        let s = acc.finish(1);
        assert_eq!(s.family(Family::LsVoltage).correct_detection_pct, Some(0.0));
        assert_eq!(s.family(Family::LsVoltage).false_detection_pct, Some(0.0));
    }

    #[test]
    fn half_overlap_rule() {
        let p = pulse(ChannelKind::LsVoltageA, 100, 20);
        let d = |start, end| Detection { channel: ChannelKind::LsVoltageA, start, end };
        assert!(covers(&d(110, 290), &p));
        assert!(!covers(&d(111, 291), &p));
        assert!(covers(&d(-60, 110), &p));
        assert!(!covers(&Detection { channel: ChannelKind::LsVoltageB, ..d(0, 180) }, &p));
    }

    #[test]
    fn duplicates_and_strays_are_false() {
        let t = truth();
        let hit = centered(&t.pulses[2]);
        let stray = Detection { channel: ChannelKind::SsVoltageC, start: 0, end: 180 };
        let counts = match_event(&t, &[hit, hit, stray]);
        assert_eq!(counts[&Family::LsCurrent], Counts { n_true_pulses: 1, true_positives: 1, false_positives: 1 });
        assert_eq!(counts[&Family::SsVoltage].false_positives, 1);
    }

    #[test]
    fn order_independent() {
        let t = truth();
        let dets: Vec<Detection> = t.pulses.iter().map(centered).collect();
        let other = GroundTruth { pulses: vec![pulse(ChannelKind::SsVoltageA, 50, 16)], ..Default::default() };
        let mut a = EvalAccumulator::new();
        a.add(&t, &dets);
        a.add(&other, &[]);
        let mut b = EvalAccumulator::new();
        b.add(&other, &[]);
        let mut rev = dets.clone();
        rev.reverse();
        b.add(&t, &rev);
        assert_eq!(a.finish(1), b.finish(1));
    }
}
