//! Multi-channel event recordings: channel naming, CSV ingestion and
//! emission, window extraction and unit-norm scaling.
//!
//! A record always carries the nine measurements a pulse-recloser logs:
//! source-side and load-side phase voltages (volts) and load-side phase
//! currents (amperes), sampled at a fixed number of samples per cycle.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Energy floor (channel units) below which a window is treated as dead.
pub const EPS_ENERGY: f64 = 1e-9;

/// Smallest accepted samples-per-cycle value.
pub const MIN_SAMPLES_PER_CYCLE: usize = 16;

/// Samples per cycle used by the field devices.
pub const DEFAULT_SAMPLES_PER_CYCLE: usize = 64;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("metadata line: {0}")]
    Metadata(String),
    #[error("missing channel column `{0}`")]
    MissingChannel(&'static str),
    #[error("unknown or duplicate column `{0}` in header")]
    BadHeader(String),
    #[error("row {row} (line {line}): expected {expected} cells, found {found}")]
    Ragged {
        row: usize,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row} (line {line}), column `{column}`: cannot parse `{value}` as a number")]
    NonNumeric {
        row: usize,
        line: usize,
        column: String,
        value: String,
    },
    #[error("row {row} (line {line}), column `{column}`: non-finite sample")]
    NonFinite {
        row: usize,
        line: usize,
        column: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("invalid window request: {0}")]
    Window(String),
    #[error("zero-energy window (norm {norm:e})")]
    ZeroEnergyWindow { norm: f64 },
}

pub type Result<T, E = WaveformError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Electrical angle of the phase's fundamental, radians.
    pub fn angle(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

/// Measurement family; one dictionary is trained per family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SsVoltage,
    LsVoltage,
    LsCurrent,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::SsVoltage, Family::LsVoltage, Family::LsCurrent];

    pub fn name(self) -> &'static str {
        match self {
            Family::SsVoltage => "ss_voltage",
            Family::LsVoltage => "ls_voltage",
            Family::LsCurrent => "ls_current",
        }
    }

    pub fn is_voltage(self) -> bool {
        !matches!(self, Family::LsCurrent)
    }

    pub fn channel(self, phase: Phase) -> ChannelKind {
        ChannelKind::ALL[self as usize * 3 + phase.index()]
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "ss_voltage" | "ssv" => Ok(Family::SsVoltage),
            "ls_voltage" | "lsv" => Ok(Family::LsVoltage),
            "ls_current" | "lsi" => Ok(Family::LsCurrent),
            other => Err(format!("unknown measurement family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelKind {
    SsVoltageA,
    SsVoltageB,
    SsVoltageC,
    LsVoltageA,
    LsVoltageB,
    LsVoltageC,
    LsCurrentA,
    LsCurrentB,
    LsCurrentC,
}

impl ChannelKind {
    pub const ALL: [ChannelKind; 9] = [
        ChannelKind::SsVoltageA,
        ChannelKind::SsVoltageB,
        ChannelKind::SsVoltageC,
        ChannelKind::LsVoltageA,
        ChannelKind::LsVoltageB,
        ChannelKind::LsVoltageC,
        ChannelKind::LsCurrentA,
        ChannelKind::LsCurrentB,
        ChannelKind::LsCurrentC,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn family(self) -> Family {
        Family::ALL[self.index() / 3]
    }

    pub fn phase(self) -> Phase {
        Phase::ALL[self.index() % 3]
    }

    /// Column name used in record CSV files.
    pub fn column_name(self) -> &'static str {
        const NAMES: [&str; 9] = [
            "Vssa", "Vssb", "Vssc", "Vlsa", "Vlsb", "Vlsc", "Ilsa", "Ilsb", "Ilsc",
        ];
        NAMES[self.index()]
    }

    pub fn from_column_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.column_name() == name)
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column_name())
    }
}

impl FromStr for ChannelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::from_column_name(s.trim())
            .or_else(|| Self::ALL.into_iter().find(|c| format!("{c:?}") == s.trim()))
            .ok_or_else(|| format!("unknown channel `{s}`"))
    }
}

/// A validated event recording. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformRecord {
    samples_per_cycle: usize,
    channels: Vec<Vec<f64>>,
    start_timestamp: Option<String>,
    device_id: String,
}

impl WaveformRecord {
    /// Builds a record from the nine channels in [`ChannelKind::ALL`] order.
    pub fn new(
        samples_per_cycle: usize,
        channels: [Vec<f64>; 9],
        device_id: impl Into<String>,
        start_timestamp: Option<String>,
    ) -> Result<Self> {
        if samples_per_cycle < MIN_SAMPLES_PER_CYCLE {
            return Err(WaveformError::Invalid(format!(
                "samples per cycle {samples_per_cycle} below minimum {MIN_SAMPLES_PER_CYCLE}"
            )));
        }
        let len = channels[0].len();
        for (kind, values) in ChannelKind::ALL.iter().zip(channels.iter()) {
            if values.len() != len {
                return Err(WaveformError::Invalid(format!(
                    "channel {kind} has {} samples, expected {len}",
                    values.len()
                )));
            }
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(WaveformError::Invalid(format!(
                    "channel {kind} sample {i} is not finite"
                )));
            }
        }
        if len < samples_per_cycle {
            return Err(WaveformError::Invalid(format!(
                "record of {len} samples is shorter than one cycle ({samples_per_cycle})"
            )));
        }
        Ok(Self {
            samples_per_cycle,
            channels: channels.into_iter().collect(),
            start_timestamp,
            device_id: device_id.into(),
        })
    }

    pub fn samples_per_cycle(&self) -> usize {
        self.samples_per_cycle
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cycles(&self) -> f64 {
        self.len() as f64 / self.samples_per_cycle as f64
    }

    pub fn channel(&self, kind: ChannelKind) -> &[f64] {
        &self.channels[kind.index()]
    }

    pub fn device_id(&self) -> &str {
        &self.device_id
    }

    pub fn start_timestamp(&self) -> Option<&str> {
        self.start_timestamp.as_deref()
    }

    /// Parses a record CSV file.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| WaveformError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse_csv(&text)
    }

    /// Parses record CSV text: a `# spc=..., device=..., t0=...` line, a
    /// header naming the nine channels in any order, then one row per sample.
    pub fn parse_csv(text: &str) -> Result<Self> {
        let (meta_line, body) = text.split_once('\n').unwrap_or((text, ""));
        let meta = parse_metadata(meta_line.trim_end_matches('\r'))?;

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());

        let header = reader.headers()?.clone();
        let mut column_of: [Option<usize>; 9] = [None; 9];
        for (col, name) in header.iter().enumerate() {
            let kind = ChannelKind::from_column_name(name)
                .ok_or_else(|| WaveformError::BadHeader(name.to_string()))?;
            if column_of[kind.index()].replace(col).is_some() {
                return Err(WaveformError::BadHeader(name.to_string()));
            }
        }
        for kind in ChannelKind::ALL {
            if column_of[kind.index()].is_none() {
                return Err(WaveformError::MissingChannel(kind.column_name()));
            }
        }

        let mut channels: [Vec<f64>; 9] = Default::default();
        for (i, row) in reader.records().enumerate() {
            let row_no = i + 1;
            // metadata + header precede the first data row
            let line = row_no + 2;
            let row = row?;
            if row.len() != header.len() {
                return Err(WaveformError::Ragged {
                    row: row_no,
                    line,
                    expected: header.len(),
                    found: row.len(),
                });
            }
            for kind in ChannelKind::ALL {
                let cell = &row[column_of[kind.index()].unwrap()];
                let value: f64 = cell.parse().map_err(|_| WaveformError::NonNumeric {
                    row: row_no,
                    line,
                    column: kind.column_name().to_string(),
                    value: cell.to_string(),
                })?;
                if !value.is_finite() {
                    return Err(WaveformError::NonFinite {
                        row: row_no,
                        line,
                        column: kind.column_name().to_string(),
                    });
                }
                channels[kind.index()].push(value);
            }
        }

        Self::new(meta.spc, channels, meta.device, meta.t0)
    }

    /// Serializes to record CSV. Samples use the shortest decimal form that
    /// parses back to the identical double.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * 9 * 12);
        out.push_str(&format!(
            "# spc={}, device={}, t0={}\n",
            self.samples_per_cycle,
            self.device_id,
            self.start_timestamp.as_deref().unwrap_or("unknown")
        ));
        let header: Vec<&str> = ChannelKind::ALL.iter().map(|c| c.column_name()).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for i in 0..self.len() {
            for (j, values) in self.channels.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                out.push_str(&format!("{:?}", values[i]));
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |source| WaveformError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut file = fs::File::create(path).map_err(io_err)?;
        file.write_all(self.to_csv_string().as_bytes())
            .map_err(io_err)
    }
}

struct Metadata {
    spc: usize,
    device: String,
    t0: Option<String>,
}

fn parse_metadata(line: &str) -> Result<Metadata> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| WaveformError::Metadata("first line must start with `#`".into()))?;
    let mut spc = None;
    let mut device = None;
    let mut t0 = None;
    for field in body.split(',') {
        let Some((key, value)) = field.split_once('=') else {
            continue;
        };
        let value = value.trim();
        match key.trim() {
            "spc" => {
                spc = Some(value.parse::<usize>().map_err(|_| {
                    WaveformError::Metadata(format!("spc `{value}` is not an integer"))
                })?)
            }
            "device" => device = Some(value.to_string()),
            "t0" => t0 = (value != "unknown" && !value.is_empty()).then(|| value.to_string()),
            _ => {}
        }
    }
    Ok(Metadata {
        spc: spc.ok_or_else(|| WaveformError::Metadata("samples per cycle (spc) absent".into()))?,
        device: device.unwrap_or_else(|| "unknown".into()),
        t0,
    })
}

/// A contiguous run of samples cut from one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub channel: ChannelKind,
    /// Offset of `values[0]` in the record; negative when padded on the left.
    pub start_index: i64,
    pub values: Vec<f64>,
    /// True when part of the window lies outside the record and was zero-filled.
    pub padded: bool,
}

impl SampleWindow {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

/// Copies `w` samples starting at `start`. A window running past the end of
/// the record is zero-filled back to `w` and flagged as padded.
pub fn slice_window(
    record: &WaveformRecord,
    channel: ChannelKind,
    start: i64,
    w: usize,
) -> Result<SampleWindow> {
    if w == 0 {
        return Err(WaveformError::Window("window length must be positive".into()));
    }
    if start < 0 {
        return Err(WaveformError::Window(format!("start {start} is negative")));
    }
    if start as usize >= record.len() {
        return Err(WaveformError::Window(format!(
            "start {start} beyond record length {}",
            record.len()
        )));
    }
    Ok(padded_window(record, channel, start, w))
}

/// Like [`slice_window`] but accepts any start offset: every position that
/// falls outside the record on either edge reads as zero.
pub fn padded_window(
    record: &WaveformRecord,
    channel: ChannelKind,
    start: i64,
    w: usize,
) -> SampleWindow {
    let data = record.channel(channel);
    let len = data.len() as i64;
    let mut padded = false;
    let values = (start..start + w as i64)
        .map(|i| {
            if (0..len).contains(&i) {
                data[i as usize]
            } else {
                padded = true;
                0.0
            }
        })
        .collect();
    SampleWindow {
        channel,
        start_index: start,
        values,
        padded,
    }
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `values` to unit Euclidean norm.
pub fn normalize_values(values: &[f64]) -> Result<Vec<f64>> {
    let norm = l2_norm(values);
    if norm.is_nan() || norm <= EPS_ENERGY {
        return Err(WaveformError::ZeroEnergyWindow { norm });
    }
    Ok(values.iter().map(|v| v / norm).collect())
}

pub fn normalize_unit(window: &SampleWindow) -> Result<SampleWindow> {
    Ok(SampleWindow {
        values: normalize_values(&window.values)?,
        ..window.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp_record(len: usize) -> WaveformRecord {
        let channels: [Vec<f64>; 9] =
            std::array::from_fn(|c| (0..len).map(|i| (i * 10 + c) as f64 * 0.5).collect());
        WaveformRecord::new(64, channels, "dev-1", None).unwrap()
    }

    #[test]
    fn channel_kind_mapping() {
        assert_eq!(ChannelKind::ALL.len(), 9);
        for kind in ChannelKind::ALL {
            assert_eq!(kind.family().channel(kind.phase()), kind);
            assert_eq!(ChannelKind::from_column_name(kind.column_name()), Some(kind));
        }
        assert_eq!(ChannelKind::LsCurrentB.family(), Family::LsCurrent);
        assert_eq!(ChannelKind::SsVoltageC.phase(), Phase::C);
    }

    #[test]
    fn ingest_1920_rows() {
        let rec = ramp_record(1920);
        let parsed = WaveformRecord::parse_csv(&rec.to_csv_string()).unwrap();
        assert_eq!(parsed.len(), 1920);
        assert_eq!(parsed.cycles(), 30.0);
        assert_eq!(parsed, rec);
    }

    #[test]
    fn header_order_is_irrelevant() {
        let text = "# spc=16, device=x, t0=2017-03-01T10:00:00Z\n\
                    Ilsc,Vssa,Vssb,Vssc,Vlsa,Vlsb,Vlsc,Ilsa,Ilsb\n"
            .to_string()
            + &"9,1,2,3,4,5,6,7,8\n".repeat(16);
        let rec = WaveformRecord::parse_csv(&text).unwrap();
        assert_eq!(rec.channel(ChannelKind::LsCurrentC)[0], 9.0);
        assert_eq!(rec.channel(ChannelKind::SsVoltageA)[3], 1.0);
        assert_eq!(rec.start_timestamp(), Some("2017-03-01T10:00:00Z"));
    }

    #[test]
    fn missing_channel_is_reported() {
        let text = "# spc=16, device=x, t0=unknown\nVssa,Vssb,Vssc,Vlsa,Vlsb,Vlsc,Ilsa,Ilsb\n"
            .to_string()
            + &"1,2,3,4,5,6,7,8\n".repeat(16);
        let err = WaveformRecord::parse_csv(&text).unwrap_err();
        assert!(matches!(err, WaveformError::MissingChannel("Ilsc")), "{err}");
        assert!(err.to_string().contains("missing channel"));
    }

    #[test]
    fn nan_cell_names_its_row() {
        let mut text = String::from("# spc=16, device=x, t0=unknown\n");
        text.push_str("Vssa,Vssb,Vssc,Vlsa,Vlsb,Vlsc,Ilsa,Ilsb,Ilsc\n");
        for row in 1..=20 {
            if row == 7 {
                text.push_str("1,2,NaN,4,5,6,7,8,9\n");
            } else {
                text.push_str("1,2,3,4,5,6,7,8,9\n");
            }
        }
        match WaveformRecord::parse_csv(&text).unwrap_err() {
            WaveformError::NonFinite { row, column, .. } => {
                assert_eq!(row, 7);
                assert_eq!(column, "Vssc");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        let head = "# spc=16, device=x, t0=unknown\nVssa,Vssb,Vssc,Vlsa,Vlsb,Vlsc,Ilsa,Ilsb,Ilsc\n";
        let ragged = head.to_string() + "1,2,3,4,5,6,7,8,9\n1,2,3\n";
        assert!(matches!(
            WaveformRecord::parse_csv(&ragged).unwrap_err(),
            WaveformError::Ragged { row: 2, found: 3, .. }
        ));
        let junk = head.to_string() + "1,2,3,4,abc,6,7,8,9\n";
        assert!(matches!(
            WaveformRecord::parse_csv(&junk).unwrap_err(),
            WaveformError::NonNumeric { row: 1, .. }
        ));
        let no_spc = "# device=x\nVssa,Vssb,Vssc,Vlsa,Vlsb,Vlsc,Ilsa,Ilsb,Ilsc\n";
        assert!(matches!(
            WaveformRecord::parse_csv(no_spc).unwrap_err(),
            WaveformError::Metadata(_)
        ));
    }

    #[test]
    fn slicing() {
        let rec = ramp_record(1920);
        let w = slice_window(&rec, ChannelKind::LsVoltageA, 0, 64).unwrap();
        assert_eq!(w.values, rec.channel(ChannelKind::LsVoltageA)[..64]);
        assert!(!w.padded);

        let w = slice_window(&rec, ChannelKind::LsVoltageA, 1900, 180).unwrap();
        assert_eq!(w.len(), 180);
        assert!(w.padded);
        assert_eq!(w.values[..20], rec.channel(ChannelKind::LsVoltageA)[1900..]);
        assert!(w.values[20..].iter().all(|&v| v == 0.0));

        assert!(slice_window(&rec, ChannelKind::LsVoltageA, -1, 64).is_err());
        assert!(slice_window(&rec, ChannelKind::LsVoltageA, 0, 0).is_err());

        let left = padded_window(&rec, ChannelKind::LsCurrentA, -10, 30);
        assert!(left.padded);
        assert!(left.values[..10].iter().all(|&v| v == 0.0));
        assert_eq!(left.values[10..], rec.channel(ChannelKind::LsCurrentA)[..20]);
    }

    #[test]
    fn normalization() {
        let w = SampleWindow {
            channel: ChannelKind::LsVoltageA,
            start_index: 0,
            values: vec![3.0, 4.0],
            padded: false,
        };
        assert_eq!(normalize_unit(&w).unwrap().values, vec![0.6, 0.8]);

        let zero = SampleWindow {
            values: vec![0.0; 8],
            ..w.clone()
        };
        assert!(matches!(
            normalize_unit(&zero),
            Err(WaveformError::ZeroEnergyWindow { .. })
        ));
    }

    proptest! {
        #[test]
        fn unit_norm_and_idempotent(values in prop::collection::vec(-1e4f64..1e4, 1..300)) {
            prop_assume!(l2_norm(&values) > EPS_ENERGY);
            let once = normalize_values(&values).unwrap();
            prop_assert!((l2_norm(&once) - 1.0).abs() <= 1e-12);
            let twice = normalize_values(&once).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn csv_round_trip_is_bit_exact(
            rows in prop::collection::vec(prop::array::uniform9(-1e6f64..1e6), 16..40)
        ) {
            let channels: [Vec<f64>; 9] =
                std::array::from_fn(|c| rows.iter().map(|r| r[c]).collect());
            let rec = WaveformRecord::new(16, channels, "p", Some("t".into())).unwrap();
            let text = rec.to_csv_string();
            let back = WaveformRecord::parse_csv(&text).unwrap();
            prop_assert_eq!(&back, &rec);
            prop_assert_eq!(back.to_csv_string(), text);
        }

        #[test]
        fn padded_windows_have_requested_length(start in -300i64..2300, w in 1usize..400) {
            let rec = ramp_record(1920);
            let win = padded_window(&rec, ChannelKind::SsVoltageB, start, w);
            prop_assert_eq!(win.len(), w);
            prop_assert_eq!(win.padded, start < 0 || start + w as i64 > 1920);
        }
    }
}
