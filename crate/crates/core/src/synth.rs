//! Synthetic pulse-recloser event recordings with exact ground truth.
//!
//! Events follow the device's operating sequence: steady load, an optional
//! fault, a three-phase trip, then phase-by-phase pulse testing with a pulse
//! and an opposite-polarity pulse per phase. A clean test closes the phase; a
//! test into a standing fault leaves every pole open.
//!
//! Scenario magnitudes (`pulse_amplitude`, `fault_current`) are RMS-equivalent
//! values: the injected burst peaks at `√2` times the figure, so a pulse of
//! 2.8 kV sits exactly at a 2.8 kV short-window RMS threshold.

use std::collections::BTreeSet;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeds::derive_seed;
use crate::waveform::{
    ChannelKind, Family, Phase, WaveformError, WaveformRecord, DEFAULT_SAMPLES_PER_CYCLE, MIN_SAMPLES_PER_CYCLE,
};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Nominal phase-to-ground voltage, peak volts (5.09 kV RMS).
pub const NOMINAL_VOLTAGE_PEAK: f64 = 7200.0;
pub const LOAD_CURRENT_RMS: f64 = 150.0;
/// Load current lags its phase voltage by this angle.
pub const LOAD_ANGLE: f64 = PI / 6.0;
pub const FAULT_ANGLE: f64 = 80.0 * PI / 180.0;
pub const DEFAULT_SNR_DB: f64 = 40.0;
pub const DEFAULT_CYCLES: usize = 40;

pub const MIN_PULSE_DURATION: f64 = 0.25;
pub const MAX_PULSE_DURATION: f64 = 0.45;
pub const MIN_FAULT_CURRENT: f64 = 800.0;
pub const MAX_FAULT_CURRENT: f64 = 1500.0;

pub const TAIL_DAMPING: f64 = 0.3;
pub const TAIL_CYCLES: f64 = 0.5;
const TAIL_GAIN: f64 = 0.25;

/// Back-fed component on unclosed phases, relative to nominal.
pub const DELTA_OFFSET_RATIO: f64 = 0.3;
pub const INRUSH_TAU_CYCLES: f64 = 1.5;
pub const INRUSH_CYCLES: usize = 6;

// Event timeline, in cycles.
const FAULT_START: usize = 3;
const TRIP: usize = 6;
const FIRST_TEST: usize = 9;
const TEST_SLOT: usize = 9;
const INVERSE_DELAY: usize = 3;
const CLOSE_DELAY: usize = 6;
const INRUSH_ONLY_CLOSE: usize = 10;
const MAX_JITTER: i64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invalid mix: {0}")]
    Mix(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    UpstreamPulseTest,
    TemporaryFault,
    PermanentFault,
    InrushOnly,
    Quiescent,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::UpstreamPulseTest,
        ScenarioKind::TemporaryFault,
        ScenarioKind::PermanentFault,
        ScenarioKind::InrushOnly,
        ScenarioKind::Quiescent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::UpstreamPulseTest => "upstream_pulse_test",
            ScenarioKind::TemporaryFault => "temporary_fault",
            ScenarioKind::PermanentFault => "permanent_fault",
            ScenarioKind::InrushOnly => "inrush_only",
            ScenarioKind::Quiescent => "quiescent",
        }
    }

    pub fn has_fault(self) -> bool {
        matches!(self, ScenarioKind::TemporaryFault | ScenarioKind::PermanentFault)
    }

    /// Shortest record holding the whole sequence.
    pub fn min_cycles(self) -> usize {
        match self {
            ScenarioKind::Quiescent => 1,
            ScenarioKind::InrushOnly => INRUSH_ONLY_CLOSE + INRUSH_CYCLES + 1,
            _ => FIRST_TEST + 2 * TEST_SLOT + CLOSE_DELAY + INRUSH_CYCLES + 1,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.name() == key || k.name().split('_').next() == Some(key.as_str()))
            .ok_or_else(|| SynthError::Mix(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Pulse,
    Inverse,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Pulse => 1.0,
            Polarity::Inverse => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventScenario {
    pub kind: ScenarioKind,
    /// RMS-equivalent voltage pulse magnitude, volts.
    pub pulse_amplitude: f64,
    /// Burst duration, cycles.
    pub pulse_duration: f64,
    /// RMS fault current, amperes; also the current-pulse magnitude.
    pub fault_current: f64,
    /// `None` disables noise.
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
    pub cycles: usize,
    pub samples_per_cycle: usize,
    pub fault_phase: Phase,
    /// First phase tested; the rest follow in A→B→C rotation.
    pub first_phase: Phase,
    /// Peak inrush current on energization, amperes; 0 disables.
    pub inrush_peak: f64,
}

impl EventScenario {
    /// A mid-range scenario of the given kind.
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        Self {
            kind,
            pulse_amplitude: NOMINAL_VOLTAGE_PEAK / SQRT_2,
            pulse_duration: 0.35,
            fault_current: 1400.0,
            noise_snr_db: Some(DEFAULT_SNR_DB),
            seed,
            cycles: DEFAULT_CYCLES,
            samples_per_cycle: DEFAULT_SAMPLES_PER_CYCLE,
            fault_phase: Phase::C,
            first_phase: Phase::A,
            inrush_peak: 3000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Scenario(m));
        if !(MIN_PULSE_DURATION..=MAX_PULSE_DURATION).contains(&self.pulse_duration) {
            return bad(format!(
                "pulse duration {} outside [{MIN_PULSE_DURATION}, {MAX_PULSE_DURATION}] cycles",
                self.pulse_duration
            ));
        }
        if self.kind.has_fault() && !(MIN_FAULT_CURRENT..=MAX_FAULT_CURRENT).contains(&self.fault_current) {
            return bad(format!(
                "fault current {} A outside [{MIN_FAULT_CURRENT}, {MAX_FAULT_CURRENT}]",
                self.fault_current
            ));
        }
        if !(self.pulse_amplitude.is_finite() && self.pulse_amplitude > 0.0) {
            return bad(format!("pulse amplitude {} must be positive", self.pulse_amplitude));
        }
        if !(self.inrush_peak.is_finite() && self.inrush_peak >= 0.0) {
            return bad(format!("inrush peak {} must be non-negative", self.inrush_peak));
        }
        if let Some(snr) = self.noise_snr_db {
            if !snr.is_finite() {
                return bad("noise SNR must be finite".into());
            }
        }
        if self.samples_per_cycle < MIN_SAMPLES_PER_CYCLE {
            return bad(format!("samples per cycle {} below {MIN_SAMPLES_PER_CYCLE}", self.samples_per_cycle));
        }
        if self.cycles < self.kind.min_cycles() {
            return bad(format!(
                "{} needs at least {} cycles, got {}",
                self.kind,
                self.kind.min_cycles(),
                self.cycles
            ));
        }
        Ok(())
    }
}

/// Burst portion `[start, end)` of one injected pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseInterval {
    pub channel: ChannelKind,
    pub start: usize,
    pub end: usize,
    pub polarity: Polarity,
}

impl PulseInterval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoleTransition {
    pub phase: Phase,
    pub index: usize,
    pub closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub phase: Phase,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub pulses: Vec<PulseInterval>,
    /// Device pole state per phase at sample 0.
    pub initial_closed: [bool; 3],
    pub pole_transitions: Vec<PoleTransition>,
    pub faults: Vec<PhaseInterval>,
    pub inrush: Vec<PhaseInterval>,
}

impl GroundTruth {
    pub fn closed_at_end(&self, phase: Phase) -> bool {
        self.pole_transitions
            .iter()
            .rfind(|t| t.phase == phase)
            .map_or(self.initial_closed[phase.index()], |t| t.closed)
    }

    pub fn pulses_on(&self, family: Family) -> impl Iterator<Item = &PulseInterval> {
        self.pulses.iter().filter(move |p| p.channel.family() == family)
    }

    pub fn count(&self, family: Family) -> usize {
        self.pulses_on(family).count()
    }
}

fn gaussian(seed: u64, sigma: f64, n: usize) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

fn noise_sigma(reference_rms: f64, snr_db: f64) -> f64 {
    reference_rms / 10f64.powf(snr_db / 20.0)
}

/// Seeded white Gaussian noise at `snr_db` relative to a reference RMS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Noise {
    pub snr_db: f64,
    pub seed: u64,
}

/// `amplitude · sin(2πk/spc + phase_offset)` over `cycles` cycles, plus
/// noise referenced to the sinusoid's own RMS.
pub fn gen_steady(
    amplitude: f64,
    phase_offset: f64,
    cycles: usize,
    spc: usize,
    noise: Option<Noise>,
) -> Result<Vec<f64>> {
    if spc < MIN_SAMPLES_PER_CYCLE {
        return Err(SynthError::Scenario(format!("samples per cycle {spc} below {MIN_SAMPLES_PER_CYCLE}")));
    }
    let n = cycles * spc;
    let mut out: Vec<f64> = (0..n)
        .map(|k| amplitude * (2.0 * PI * k as f64 / spc as f64 + phase_offset).sin())
        .collect();
    if let Some(nz) = noise {
        let sigma = noise_sigma(amplitude.abs() / SQRT_2, nz.snr_db);
        for (o, e) in out.iter_mut().zip(gaussian(nz.seed, sigma, n)) {
            *o += e;
        }
    }
    Ok(out)
}

/// Number of burst samples for a pulse of `duration_cycles`.
pub fn burst_len(duration_cycles: f64, spc: usize) -> usize {
    (duration_cycles * spc as f64).floor() as usize
}

/// A half-sine burst peaking at exactly `amplitude`, followed by a damped
/// ringing tail of half a cycle. The inverse polarity is the exact negation.
pub fn gen_pulse(amplitude: f64, duration_cycles: f64, polarity: Polarity, spc: usize) -> Result<Vec<f64>> {
    if !(MIN_PULSE_DURATION..=MAX_PULSE_DURATION).contains(&duration_cycles) {
        return Err(SynthError::Scenario(format!(
            "pulse duration {duration_cycles} outside [{MIN_PULSE_DURATION}, {MAX_PULSE_DURATION}] cycles"
        )));
    }
    let len = burst_len(duration_cycles, spc);
    let shape: Vec<f64> = (0..len).map(|i| (PI * (i as f64 + 0.5) / len as f64).sin()).collect();
    let top = shape.iter().cloned().fold(0.0, f64::max);

    // ringing at twice the burst duration, starting from zero
    let omega_n = PI / duration_cycles;
    let omega_d = omega_n * (1.0 - TAIL_DAMPING * TAIL_DAMPING).sqrt();
    let tail_len = (TAIL_CYCLES * spc as f64).round() as usize;
    let tail = (1..=tail_len).map(|j| {
        let t = j as f64 / spc as f64;
        -TAIL_GAIN * (-TAIL_DAMPING * omega_n * t).exp() * (omega_d * t).sin()
    });

    let sign = polarity.sign();
    Ok(shape
        .iter()
        .map(|s| s / top)
        .chain(tail)
        .map(|v| sign * amplitude * v)
        .collect())
}

/// Sample index of the next positive-going zero crossing of `angle`'s
/// fundamental at or after `from`.
fn zero_crossing(from: usize, angle: f64, spc: usize) -> usize {
    let frac = (-angle).rem_euclid(2.0 * PI) / (2.0 * PI);
    let offset = (frac * spc as f64).round() as usize % spc;
    let base = from - from % spc + offset;
    if base < from {
        base + spc
    } else {
        base
    }
}

fn test_order(first: Phase) -> [Phase; 3] {
    let i = first.index();
    [Phase::ALL[i], Phase::ALL[(i + 1) % 3], Phase::ALL[(i + 2) % 3]]
}

struct Builder {
    spc: usize,
    len: usize,
    channels: [Vec<f64>; 9],
    truth: GroundTruth,
    jitter: ChaCha8Rng,
}

impl Builder {
    fn new(spc: usize, len: usize, seed: u64) -> Self {
        Self {
            spc,
            len,
            channels: std::array::from_fn(|_| vec![0.0; len]),
            truth: GroundTruth::default(),
            jitter: ChaCha8Rng::seed_from_u64(derive_seed(seed, 1)),
        }
    }

    fn omega(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.spc as f64
    }

    fn add_sine(&mut self, ch: ChannelKind, from: usize, to: usize, peak: f64, angle: f64) {
        for k in from..to.min(self.len) {
            let v = peak * (self.omega(k) + angle).sin();
            self.channels[ch.index()][k] += v;
        }
    }

    fn add_segment(&mut self, ch: ChannelKind, at: usize, seg: &[f64]) {
        for (k, v) in (at..self.len).zip(seg) {
            self.channels[ch.index()][k] += v;
        }
    }

    /// Source-side voltage on `phase` over `[from, to)`.
    fn source(&mut self, family: Family, phase: Phase, from: usize, to: usize) {
        self.add_sine(family.channel(phase), from, to, NOMINAL_VOLTAGE_PEAK, phase.angle());
    }

    fn load(&mut self, phase: Phase, from: usize, to: usize) {
        self.add_sine(
            Family::LsCurrent.channel(phase),
            from,
            to,
            LOAD_CURRENT_RMS * SQRT_2,
            phase.angle() - LOAD_ANGLE,
        );
    }

    fn fault(&mut self, phase: Phase, from: usize, to: usize, current_rms: f64) {
        self.add_sine(
            Family::LsCurrent.channel(phase),
            from,
            to,
            current_rms * SQRT_2,
            phase.angle() - FAULT_ANGLE,
        );
        self.truth.faults.push(PhaseInterval { phase, start: from, end: to });
    }

    fn inrush(&mut self, phase: Phase, at: usize, peak: f64) {
        if peak == 0.0 {
            return;
        }
        let end = (at + INRUSH_CYCLES * self.spc).min(self.len);
        for k in at..end {
            let t = (k - at) as f64 / self.spc as f64;
            let v = peak * (-t / INRUSH_TAU_CYCLES).exp() * (self.omega(k) + phase.angle()).sin().max(0.0);
            self.channels[Family::LsCurrent.channel(phase).index()][k] += v;
        }
        self.truth.inrush.push(PhaseInterval { phase, start: at, end });
    }

    fn transition(&mut self, phase: Phase, index: usize, closed: bool) {
        self.truth.pole_transitions.push(PoleTransition { phase, index, closed });
    }

    /// Injects a pulse (or inverse pulse) on each of `channels`, aligned to
    /// the phase's positive (inverse: negative) zero crossing after `slot`.
    fn pulse(&mut self, channels: &[ChannelKind], phase: Phase, slot: usize, polarity: Polarity, peak: f64, duration: f64) {
        let mut at = zero_crossing(slot, phase.angle(), self.spc);
        if polarity == Polarity::Inverse {
            at += self.spc / 2;
        }
        let at = (at as i64 + self.jitter.random_range(-MAX_JITTER..=MAX_JITTER)) as usize;
        let seg = gen_pulse(peak, duration, polarity, self.spc).expect("validated duration");
        let burst = burst_len(duration, self.spc);
        for &ch in channels {
            self.add_segment(ch, at, &seg);
            self.truth.pulses.push(PulseInterval {
                channel: ch,
                start: at,
                end: at + burst,
                polarity,
            });
        }
    }

    fn test_pair(&mut self, channels: &[ChannelKind], phase: Phase, slot: usize, peak: f64, duration: f64) {
        self.pulse(channels, phase, slot, Polarity::Pulse, peak, duration);
        self.pulse(channels, phase, slot + INVERSE_DELAY * self.spc, Polarity::Inverse, peak, duration);
    }

    /// Adds noise to every channel, referenced to the channel family's
    /// nominal RMS so dead channels carry the same floor as live ones.
    fn finish(mut self, seed: u64, snr_db: Option<f64>) -> ([Vec<f64>; 9], GroundTruth) {
        if let Some(snr) = snr_db {
            for ch in ChannelKind::ALL {
                let reference = if ch.family().is_voltage() {
                    NOMINAL_VOLTAGE_PEAK / SQRT_2
                } else {
                    LOAD_CURRENT_RMS
                };
                let noise = gaussian(derive_seed(seed, 100 + ch.index() as u64), noise_sigma(reference, snr), self.len);
                for (v, e) in self.channels[ch.index()].iter_mut().zip(noise) {
                    *v += e;
                }
            }
        }
        self.truth.pulses.sort_by_key(|p| (p.channel, p.start));
        self.truth.pole_transitions.sort_by_key(|t| (t.index, t.phase));
        (self.channels, self.truth)
    }
}

/// Renders one event. The result is a pure function of the scenario.
pub fn gen_event(scenario: &EventScenario) -> Result<(WaveformRecord, GroundTruth)> {
    scenario.validate()?;
    let s = scenario;
    let spc = s.samples_per_cycle;
    let len = s.cycles * spc;
    let mut b = Builder::new(spc, len, s.seed);
    let v_peak = s.pulse_amplitude * SQRT_2;
    let i_peak = s.fault_current * SQRT_2;
    let trip = TRIP * spc;
    let slot = |i: usize| (FIRST_TEST + TEST_SLOT * i) * spc;

    match s.kind {
        ScenarioKind::Quiescent => {
            b.truth.initial_closed = [true; 3];
            for p in Phase::ALL {
                b.source(Family::SsVoltage, p, 0, len);
                b.source(Family::LsVoltage, p, 0, len);
                b.load(p, 0, len);
            }
        }
        ScenarioKind::InrushOnly => {
            let close = INRUSH_ONLY_CLOSE * spc;
            for p in Phase::ALL {
                b.source(Family::SsVoltage, p, 0, len);
                b.source(Family::LsVoltage, p, close, len);
                b.load(p, close, len);
                b.inrush(p, close, s.inrush_peak);
                b.transition(p, close, true);
            }
        }
        ScenarioKind::UpstreamPulseTest => {
            // this device stays closed; the upstream device trips and tests
            b.truth.initial_closed = [true; 3];
            for p in Phase::ALL {
                b.source(Family::SsVoltage, p, 0, trip);
                b.source(Family::LsVoltage, p, 0, trip);
                b.load(p, 0, trip);
            }
            for (i, p) in test_order(s.first_phase).into_iter().enumerate() {
                let t = slot(i);
                let chans = [Family::SsVoltage.channel(p), Family::LsVoltage.channel(p)];
                b.test_pair(&chans, p, t, v_peak, s.pulse_duration);
                let restore = t + CLOSE_DELAY * spc;
                b.source(Family::SsVoltage, p, restore, len);
                b.source(Family::LsVoltage, p, restore, len);
            }
        }
        ScenarioKind::TemporaryFault | ScenarioKind::PermanentFault => {
            let permanent = s.kind == ScenarioKind::PermanentFault;
            b.truth.initial_closed = [true; 3];
            for p in Phase::ALL {
                b.source(Family::SsVoltage, p, 0, len);
                b.source(Family::LsVoltage, p, 0, trip);
                b.load(p, 0, trip);
                b.transition(p, trip, false);
            }
            b.fault(s.fault_phase, FAULT_START * spc, trip, s.fault_current);

            let order = test_order(s.first_phase);
            let mut closed_at: [Option<usize>; 3] = [None; 3];
            let mut first_closed: Option<Phase> = None;
            for (i, p) in order.into_iter().enumerate() {
                let t = slot(i);
                let close = t + CLOSE_DELAY * spc;
                if permanent {
                    // three-phase lockout: healthy phases pass but wait for the
                    // others, and the faulted phase keeps everything open
                    if p == s.fault_phase {
                        b.test_pair(&[Family::LsCurrent.channel(p)], p, t, i_peak, s.pulse_duration);
                        break;
                    }
                    b.test_pair(&[Family::LsVoltage.channel(p)], p, t, v_peak, s.pulse_duration);
                    continue;
                }
                b.test_pair(&[Family::LsVoltage.channel(p)], p, t, v_peak, s.pulse_duration);
                closed_at[p.index()] = Some(close);
                b.transition(p, close, true);
                b.inrush(p, close, s.inrush_peak);
                first_closed.get_or_insert(p);
            }

            for p in Phase::ALL {
                if let Some(c) = closed_at[p.index()] {
                    b.source(Family::LsVoltage, p, c, len);
                    b.load(p, c, len);
                }
            }

            // back-fed offset on phases still open after the first close
            if let Some(first) = first_closed {
                let from = closed_at[first.index()].expect("first phase closed");
                for p in Phase::ALL.into_iter().filter(|&p| p != first) {
                    let to = closed_at[p.index()].unwrap_or(len);
                    b.add_sine(
                        Family::LsVoltage.channel(p),
                        from,
                        to,
                        DELTA_OFFSET_RATIO * NOMINAL_VOLTAGE_PEAK,
                        first.angle() + PI,
                    );
                }
            }
        }
    }

    let (channels, truth) = b.finish(s.seed, s.noise_snr_db);
    let record = WaveformRecord::new(spc, channels, format!("synth-{}", s.kind), None)?;
    Ok((record, truth))
}

/// Relative weights of each scenario kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMix {
    pub weights: Vec<(ScenarioKind, f64)>,
}

impl Default for ScenarioMix {
    fn default() -> Self {
        Self {
            weights: vec![
                (ScenarioKind::UpstreamPulseTest, 0.2),
                (ScenarioKind::TemporaryFault, 0.35),
                (ScenarioKind::PermanentFault, 0.2),
                (ScenarioKind::InrushOnly, 0.1),
                (ScenarioKind::Quiescent, 0.15),
            ],
        }
    }
}

impl ScenarioMix {
    pub fn only(kind: ScenarioKind) -> Self {
        Self {
            weights: vec![(kind, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let total: f64 = self.weights.iter().map(|(_, w)| w).sum();
        if self.weights.iter().any(|(_, w)| !(w.is_finite() && *w >= 0.0)) || total.is_nan() || total <= 0.0 {
            return Err(SynthError::Mix("weights must be non-negative with a positive sum".into()));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> ScenarioKind {
        let total: f64 = self.weights.iter().map(|(_, w)| w).sum();
        let mut target = rng.random::<f64>() * total;
        for &(kind, w) in &self.weights {
            if target < w {
                return kind;
            }
            target -= w;
        }
        self.weights.iter().rev().find(|(_, w)| *w > 0.0).expect("validated").0
    }
}

/// Parses `kind=weight` pairs separated by commas, or a single kind name.
impl FromStr for ScenarioMix {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "default" {
            return Ok(Self::default());
        }
        let mut weights = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (kind, w) = match part.split_once('=') {
                Some((k, w)) => (k, w.trim().parse::<f64>().map_err(|_| SynthError::Mix(format!("bad weight in `{part}`")))?),
                None => (part, 1.0),
            };
            weights.push((kind.parse()?, w));
        }
        let mix = Self { weights };
        mix.validate()?;
        Ok(mix)
    }
}

/// Draws the scenario for event `index` of a corpus.
pub fn sample_scenario(mix: &ScenarioMix, master_seed: u64, index: u64) -> EventScenario {
    let seed = derive_seed(master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = mix.draw(&mut rng);
    let nominal = NOMINAL_VOLTAGE_PEAK / SQRT_2;
    EventScenario {
        kind,
        pulse_amplitude: nominal * rng.random_range(0.95..=1.05),
        pulse_duration: rng.random_range(MIN_PULSE_DURATION..=MAX_PULSE_DURATION),
        // 1.2× the default current pulse threshold keeps current pulses detectable
        fault_current: rng.random_range(1080.0..=MAX_FAULT_CURRENT),
        noise_snr_db: Some(DEFAULT_SNR_DB),
        seed,
        cycles: DEFAULT_CYCLES,
        samples_per_cycle: DEFAULT_SAMPLES_PER_CYCLE,
        fault_phase: Phase::ALL[rng.random_range(0..3)],
        first_phase: Phase::ALL[rng.random_range(0..3)],
        inrush_peak: rng.random_range(2000.0..=4000.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEvent {
    pub file: String,
    pub scenario: EventScenario,
    pub record: WaveformRecord,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub master_seed: u64,
    pub mix: ScenarioMix,
    pub events: Vec<SynthEvent>,
}

pub fn event_file_name(index: usize) -> String {
    format!("event_{index:04}.csv")
}

pub fn gen_corpus(n_events: usize, mix: &ScenarioMix, seed: u64) -> Result<Corpus> {
    if n_events == 0 {
        return Err(SynthError::Scenario("corpus needs at least one event".into()));
    }
    mix.validate()?;
    let events = (0..n_events)
        .map(|i| {
            let scenario = sample_scenario(mix, seed, i as u64);
            let (record, truth) = gen_event(&scenario)?;
            Ok(SynthEvent {
                file: event_file_name(i),
                scenario,
                record,
                truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        master_seed: seed,
        mix: mix.clone(),
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub ss_voltage: usize,
    pub ls_voltage: usize,
    pub ls_current: usize,
}

impl FamilyCounts {
    pub fn get(&self, family: Family) -> usize {
        match family {
            Family::SsVoltage => self.ss_voltage,
            Family::LsVoltage => self.ls_voltage,
            Family::LsCurrent => self.ls_current,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEvent {
    pub file: String,
    pub seed: u64,
    pub scenario: EventScenario,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub n_events: usize,
    pub mix: ScenarioMix,
    pub total_pulses: usize,
    pub pulses_per_family: FamilyCounts,
    pub events: Vec<ManifestEvent>,
}

impl Manifest {
    pub fn seeds(&self) -> BTreeSet<u64> {
        self.events.iter().map(|e| e.seed).collect()
    }

    /// Checks that the summary counts agree with the per-event ground truth.
    pub fn is_consistent(&self) -> bool {
        let count = |f| self.events.iter().map(|e| e.truth.count(f)).sum::<usize>();
        self.n_events == self.events.len()
            && self.total_pulses == self.events.iter().map(|e| e.truth.pulses.len()).sum::<usize>()
            && Family::ALL.iter().all(|&f| count(f) == self.pulses_per_family.get(f))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

impl Corpus {
    pub fn manifest(&self) -> Manifest {
        let count = |f| self.events.iter().map(|e| e.truth.count(f)).sum::<usize>();
        Manifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            master_seed: self.master_seed,
            n_events: self.events.len(),
            mix: self.mix.clone(),
            total_pulses: self.events.iter().map(|e| e.truth.pulses.len()).sum(),
            pulses_per_family: FamilyCounts {
                ss_voltage: count(Family::SsVoltage),
                ls_voltage: count(Family::LsVoltage),
                ls_current: count(Family::LsCurrent),
            },
            events: self
                .events
                .iter()
                .map(|e| ManifestEvent {
                    file: e.file.clone(),
                    seed: e.scenario.seed,
                    scenario: e.scenario.clone(),
                    truth: e.truth.clone(),
                })
                .collect(),
        }
    }

    /// Writes every event CSV plus `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| SynthError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        for e in &self.events {
            e.record.write_csv(dir.join(&e.file))?;
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.manifest().to_json()).map_err(io(&path))
    }
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|source| SynthError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&text, &path)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_str(text).map_err(|e| SynthError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(SynthError::Manifest {
            path: path.display().to_string(),
            message: format!("schema version {} unsupported", manifest.schema_version),
        });
    }
    Ok(manifest)
}

/// A corpus read back from disk: records paired with their ground truth.
#[derive(Debug, Clone)]
pub struct LoadedEvent {
    pub file: String,
    pub path: PathBuf,
    pub record: WaveformRecord,
    pub truth: GroundTruth,
}

pub fn load_corpus(dir: impl AsRef<Path>) -> Result<(Manifest, Vec<LoadedEvent>)> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let events = manifest
        .events
        .iter()
        .map(|e| {
            let path = dir.join(&e.file);
            Ok(LoadedEvent {
                file: e.file.clone(),
                record: WaveformRecord::read_csv(&path)?,
                truth: e.truth.clone(),
                path,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, events))
}
