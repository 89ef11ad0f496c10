//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum KMeansError {
    #[error("k-means needs at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("point {index} has length {len}, expected {expected}")]
    Ragged {
        index: usize,
        len: usize,
        expected: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares of the final assignment.
    pub wcss: f64,
    /// WCSS after each assignment step.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    /// Assignments stopped changing before the iteration cap.
    pub converged: bool,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid for each point (lowest index on ties) and the WCSS.
pub fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut wcss = 0.0;
    let assignment = points
        .iter()
        .map(|p| {
            let (best, dist) = centroids
                .iter()
                .map(|c| squared_distance(p, c))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (j, d)| if d < best.1 { (j, d) } else { best });
            wcss += dist;
            best
        })
        .collect();
    (assignment, wcss)
}

/// Cluster means; empty clusters keep their previous centroid.
fn update_centroids(points: &[Vec<f64>], assignment: &[usize], centroids: &mut [Vec<f64>]) -> Vec<usize> {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignment) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p) {
            *s += v;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
    counts
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut nearest: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            nearest
                .iter()
                .position(|&d| {
                    acc += d;
                    acc > target
                })
                .unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every point coincides with a chosen centroid
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult, KMeansError> {
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    if points.len() < k {
        return Err(KMeansError::TooFewPoints { n: points.len(), k });
    }
    let dim = points[0].len();
    if let Some((index, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(KMeansError::Ragged {
            index,
            len: p.len(),
            expected: dim,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut previous: Option<Vec<usize>> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        let (assignment, wcss) = assign(points, &centroids);
        if let Some(&last) = history.last() {
            assert!(
                wcss <= last + 1e-9 * f64::max(last, 1.0),
                "k-means objective increased: {last} -> {wcss}"
            );
        }
        history.push(wcss);
        if previous.as_ref() == Some(&assignment) {
            converged = true;
            break;
        }
        iterations += 1;
        let counts = update_centroids(points, &assignment, &mut centroids);

        // move each empty centroid onto the point farthest from its own centroid
        let mut taken = vec![false; points.len()];
        for j in (0..k).filter(|&j| counts[j] == 0) {
            let far = points
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i] && counts[assignment[*i]] > 1)
                .map(|(i, p)| (i, squared_distance(p, &centroids[assignment[i]])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                centroids[j] = points[i].clone();
            }
        }
        previous = Some(assignment);
    }

    let (assignment, wcss) = assign(points, &centroids);
    Ok(KMeansResult {
        centroids,
        assignment,
        wcss,
        wcss_history: history,
        iterations,
        converged,
    })
}
