//! Labeled signature dictionaries `D = [D₊₁, D₋₁]`.
//!
//! Target atoms come from two k-means runs (pulse and inverse-pulse windows),
//! background atoms from one k-means run over background windows. Every
//! centroid is rescaled to unit norm, and one dictionary is kept per
//! measurement family.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use crate::kmeans::{kmeans, squared_distance, KMeansError};
use crate::linalg::{norm2, Matrix};
use crate::seeds::derive_seed;
use crate::waveform::{normalize_values, Family, SampleWindow, EPS_ENERGY};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_K_TARGET: usize = 5;
pub const DEFAULT_K_BACKGROUND: usize = 40;
pub const DEFAULT_WINDOW: usize = 180;

/// Class label of an atom or a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "i8", try_from = "i8")]
pub enum Class {
    Target,
    Background,
}

impl Class {
    pub fn sign(self) -> i8 {
        match self {
            Class::Target => 1,
            Class::Background => -1,
        }
    }
}

impl From<Class> for i8 {
    fn from(c: Class) -> i8 {
        c.sign()
    }
}

impl TryFrom<i8> for Class {
    type Error = String;

    fn try_from(v: i8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Class::Target),
            -1 => Ok(Class::Background),
            other => Err(format!("class label must be +1 or -1, got {other}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DictionaryError {
    #[error("{family}: need at least {need} {what} windows, have {have}")]
    InsufficientSamples {
        family: Family,
        what: &'static str,
        need: usize,
        have: usize,
    },
    #[error("window length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dictionary needs both target and background atoms")]
    MissingClass,
    #[error("k-means: {0}")]
    KMeans(#[from] KMeansError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("dictionary format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("dictionary integrity check failed: {0}")]
    Checksum(String),
    #[error("dictionary is for {found}, but {wanted} was requested")]
    FamilyMismatch { wanted: Family, found: Family },
    #[error("malformed dictionary: {0}")]
    Malformed(String),
}

pub type Result<T, E = DictionaryError> = std::result::Result<T, E>;

/// Unit-norm training windows for one measurement family.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub family: Family,
    pub w: usize,
    pub target_pulses: Vec<SampleWindow>,
    pub target_inverse: Vec<SampleWindow>,
    pub background: Vec<SampleWindow>,
}

impl TrainingSet {
    pub fn new(family: Family, w: usize) -> Self {
        Self {
            family,
            w,
            target_pulses: Vec::new(),
            target_inverse: Vec::new(),
            background: Vec::new(),
        }
    }

    /// Normalizes and files a window. Returns false (and drops the window)
    /// when it is dead or has the wrong length.
    pub fn push(&mut self, window: SampleWindow, slot: Slot) -> bool {
        if window.len() != self.w {
            return false;
        }
        let Ok(values) = normalize_values(&window.values) else {
            return false;
        };
        let window = SampleWindow { values, ..window };
        match slot {
            Slot::Pulse => self.target_pulses.push(window),
            Slot::InversePulse => self.target_inverse.push(window),
            Slot::Background => self.background.push(window),
        }
        true
    }

    pub fn n_target(&self) -> usize {
        self.target_pulses.len() + self.target_inverse.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Pulse,
    InversePulse,
    Background,
}

/// Atoms produced by one block construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomBlock {
    pub atoms: Vec<Vec<f64>>,
    /// Number of atoms that exactly repeat an earlier atom in the block.
    pub duplicates: usize,
}

fn check_lengths(windows: &[SampleWindow], w: usize) -> Result<()> {
    match windows.iter().find(|win| win.len() != w) {
        Some(bad) => Err(DictionaryError::LengthMismatch {
            expected: w,
            got: bad.len(),
        }),
        None => Ok(()),
    }
}

/// k unit-norm atoms from k-means over `windows`.
fn cluster_atoms(windows: &[SampleWindow], k: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let points: Vec<Vec<f64>> = windows.iter().map(|w| w.values.clone()).collect();
    let res = kmeans(&points, k, seed)?;
    Ok(res
        .centroids
        .iter()
        .enumerate()
        .map(|(j, c)| {
            if norm2(c) > EPS_ENERGY {
                normalize_values(c).expect("norm checked")
            } else {
                // mean of nearly opposite members: fall back to the medoid
                let medoid = points
                    .iter()
                    .zip(&res.assignment)
                    .filter(|(_, &a)| a == j)
                    .map(|(p, _)| p)
                    .min_by(|a, b| squared_distance(a, c).total_cmp(&squared_distance(b, c)))
                    .unwrap_or(&points[0]);
                medoid.clone()
            }
        })
        .collect())
}

fn count_duplicates(atoms: &[Vec<f64>]) -> usize {
    (1..atoms.len())
        .filter(|&i| atoms[..i].contains(&atoms[i]))
        .count()
}

fn block(atoms: Vec<Vec<f64>>, family: Family, what: &str) -> AtomBlock {
    let duplicates = count_duplicates(&atoms);
    if duplicates > 0 {
        warn!(%family, duplicates, "{what} block has repeated atoms (degenerate clustering)");
    }
    AtomBlock { atoms, duplicates }
}

/// `k` pulse atoms followed by `k` inverse-pulse atoms.
pub fn build_target_block(ts: &TrainingSet, k: usize, seed: u64) -> Result<AtomBlock> {
    for (what, set) in [("pulse", &ts.target_pulses), ("inverse-pulse", &ts.target_inverse)] {
        if set.len() < k {
            return Err(DictionaryError::InsufficientSamples {
                family: ts.family,
                what,
                need: k,
                have: set.len(),
            });
        }
        check_lengths(set, ts.w)?;
    }
    let mut atoms = cluster_atoms(&ts.target_pulses, k, derive_seed(seed, 1))?;
    atoms.extend(cluster_atoms(&ts.target_inverse, k, derive_seed(seed, 2))?);
    Ok(block(atoms, ts.family, "target"))
}

pub fn build_background_block(ts: &TrainingSet, k: usize, seed: u64) -> Result<AtomBlock> {
    if ts.background.len() < k {
        return Err(DictionaryError::InsufficientSamples {
            family: ts.family,
            what: "background",
            need: k,
            have: ts.background.len(),
        });
    }
    check_lengths(&ts.background, ts.w)?;
    let atoms = cluster_atoms(&ts.background, k, derive_seed(seed, 3))?;
    Ok(block(atoms, ts.family, "background"))
}

/// Unit-norm atoms with per-atom class labels; target atoms first.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDictionary {
    pub family: Family,
    atoms: Matrix,
    labels: Vec<Class>,
    pub k_target: usize,
    pub seed: u64,
}

impl LabeledDictionary {
    pub fn atoms(&self) -> &Matrix {
        &self.atoms
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    /// Atom length.
    pub fn n(&self) -> usize {
        self.atoms.rows()
    }

    /// Number of atoms.
    pub fn p(&self) -> usize {
        self.atoms.cols()
    }

    pub fn n_target_atoms(&self) -> usize {
        self.labels.iter().filter(|c| **c == Class::Target).count()
    }

    pub fn n_background_atoms(&self) -> usize {
        self.p() - self.n_target_atoms()
    }

    pub fn expect_family(&self, wanted: Family) -> Result<&Self> {
        if self.family == wanted {
            Ok(self)
        } else {
            Err(DictionaryError::FamilyMismatch {
                wanted,
                found: self.family,
            })
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = self.to_json();
        fs::write(path, text).map_err(|source| DictionaryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DictionaryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Loads and checks that the file holds the requested family.
    pub fn load_for(path: impl AsRef<Path>, family: Family) -> Result<Self> {
        let dict = Self::load(path)?;
        dict.expect_family(family)?;
        Ok(dict)
    }

    pub fn to_json(&self) -> String {
        let rows = self.row_major();
        let file = DictionaryFile {
            schema_version: FORMAT_VERSION,
            version: FORMAT_VERSION,
            family: self.family,
            n: self.n(),
            p: self.p(),
            k_target: self.k_target,
            n_target_atoms: self.n_target_atoms(),
            n_background_atoms: self.n_background_atoms(),
            seed: self.seed,
            labels: self.labels.clone(),
            sha256: atoms_digest(&rows),
            atoms: rows,
        };
        let mut text = serde_json::to_string_pretty(&file).expect("dictionary serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // a truncated or edited file fails here or at the digest comparison
        let file: DictionaryFile = serde_json::from_str(text)
            .map_err(|e| DictionaryError::Checksum(format!("unreadable dictionary: {e}")))?;
        if file.version != FORMAT_VERSION {
            return Err(DictionaryError::Version {
                found: file.version,
            });
        }
        let digest = atoms_digest(&file.atoms);
        if digest != file.sha256 {
            return Err(DictionaryError::Checksum(format!(
                "atoms digest {digest} does not match recorded {}",
                file.sha256
            )));
        }
        if file.atoms.len() != file.n || file.atoms.iter().any(|r| r.len() != file.p) {
            return Err(DictionaryError::Malformed(format!(
                "atoms block is not {}x{}",
                file.n, file.p
            )));
        }
        if file.labels.len() != file.p {
            return Err(DictionaryError::Malformed("one label per atom required".into()));
        }
        let atoms = Matrix::from_fn(file.n, file.p, |i, j| file.atoms[i][j]);
        let dict = Self {
            family: file.family,
            atoms,
            labels: file.labels,
            k_target: file.k_target,
            seed: file.seed,
        };
        if dict.n_target_atoms() != file.n_target_atoms {
            return Err(DictionaryError::Malformed("target atom count disagrees with labels".into()));
        }
        dict.check_layout()?;
        Ok(dict)
    }

    fn row_major(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| (0..self.p()).map(|j| self.atoms.get(i, j)).collect())
            .collect()
    }

    fn check_layout(&self) -> Result<()> {
        let nt = self.n_target_atoms();
        if nt == 0 || nt == self.p() {
            return Err(DictionaryError::MissingClass);
        }
        if self.labels[..nt].iter().any(|c| *c != Class::Target) {
            return Err(DictionaryError::Malformed("target atoms must come first".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct DictionaryFile {
    schema_version: u32,
    version: u32,
    family: Family,
    n: usize,
    p: usize,
    k_target: usize,
    n_target_atoms: usize,
    n_background_atoms: usize,
    seed: u64,
    labels: Vec<Class>,
    atoms: Vec<Vec<f64>>,
    sha256: String,
}

fn atoms_digest(rows: &[Vec<f64>]) -> String {
    let canonical = serde_json::to_string(rows).expect("atoms serialize");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Concatenates target and background atoms into `[D₊₁, D₋₁]`.
pub fn assemble(
    target: &AtomBlock,
    background: &AtomBlock,
    family: Family,
    k_target: usize,
    seed: u64,
) -> Result<LabeledDictionary> {
    if target.atoms.is_empty() || background.atoms.is_empty() {
        return Err(DictionaryError::MissingClass);
    }
    let n = target.atoms[0].len();
    if let Some(bad) = target.atoms.iter().chain(&background.atoms).find(|a| a.len() != n) {
        return Err(DictionaryError::LengthMismatch {
            expected: n,
            got: bad.len(),
        });
    }
    let columns: Vec<&Vec<f64>> = target.atoms.iter().chain(&background.atoms).collect();
    let labels = std::iter::repeat_n(Class::Target, target.atoms.len())
        .chain(std::iter::repeat_n(Class::Background, background.atoms.len()))
        .collect();
    let dict = LabeledDictionary {
        family,
        atoms: Matrix::from_columns(&columns),
        labels,
        k_target,
        seed,
    };
    debug_assert!(dict
        .atoms
        .columns()
        .all(|c| (norm2(c) - 1.0).abs() <= 1e-10));
    Ok(dict)
}

/// Builds the full dictionary for one family.
pub fn train(ts: &TrainingSet, k_target: usize, k_background: usize, seed: u64) -> Result<LabeledDictionary> {
    let target = build_target_block(ts, k_target, seed)?;
    let background = build_background_block(ts, k_background, seed)?;
    assemble(&target, &background, ts.family, k_target, seed)
}
