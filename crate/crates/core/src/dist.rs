//! Class distributions, label histograms and the federation shape.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for probability comparisons.
pub const PROB_EPS: f64 = 1e-9;

/// Pairwise (cascade) summation. Deterministic for a fixed slice order and
/// more accurate than a left fold on long vectors.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Euclidean norm, summed pairwise.
pub fn l2_norm(xs: &[f64]) -> f64 {
    let squares: Vec<f64> = xs.iter().map(|v| v * v).collect();
    pairwise_sum(&squares).sqrt()
}

/// A probability vector over `F` label classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("no classes".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {p} is not a probability")));
        }
        let total = pairwise_sum(&probs);
        if (total - 1.0).abs() > PROB_EPS {
            return Err(Error::InvalidDistribution(format!("entries sum to {total}")));
        }
        Ok(ClassDistribution(probs))
    }

    pub fn uniform(classes: usize) -> Self {
        ClassDistribution(vec![1.0 / classes as f64; classes])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for ClassDistribution {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ClassDistribution::new(v)
    }
}

impl From<ClassDistribution> for Vec<f64> {
    fn from(d: ClassDistribution) -> Self {
        d.0
    }
}

/// Integer sample counts per class, e.g. the label histogram of a batch.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCounts(Vec<u64>);

impl ClassCounts {
    pub fn new(counts: Vec<u64>) -> Self {
        ClassCounts(counts)
    }

    pub fn zeros(classes: usize) -> Self {
        ClassCounts(vec![0; classes])
    }

    /// Histogram of `labels`; labels must be below `classes`.
    pub fn from_labels(labels: &[usize], classes: usize) -> Self {
        let mut counts = vec![0u64; classes];
        for &l in labels {
            counts[l] += 1;
        }
        ClassCounts(counts)
    }

    pub fn counts(&self) -> &[u64] {
        &self.0
    }

    pub fn classes(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn add_assign(&mut self, other: &ClassCounts) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::LengthMismatch {
                expected: self.classes(),
                actual: other.classes(),
            });
        }
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
        Ok(())
    }
}

/// Shape and hyperparameters of a federation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationTopology {
    /// Devices in each group; its length is the group count `M`.
    pub devices_per_group: Vec<usize>,
    /// Devices per group taking part in each iteration (`L`).
    pub select: usize,
    /// Of those, how many are drawn uniformly before optimizing (`L_rnd`).
    pub presample: usize,
    pub classes: usize,
    /// Iterations between external synchronizations (`T`).
    pub iterations_per_round: usize,
    pub rounds: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl FederationTopology {
    pub fn groups(&self) -> usize {
        self.devices_per_group.len()
    }

    /// `L_sel = L - L_rnd`.
    pub fn optimized(&self) -> usize {
        self.select - self.presample
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTopology(msg));
        if self.devices_per_group.is_empty() {
            return bad("no groups".into());
        }
        if self.presample > self.select {
            return bad(format!("presample {} exceeds select {}", self.presample, self.select));
        }
        if let Some((m, k)) = self
            .devices_per_group
            .iter()
            .enumerate()
            .find(|(_, &k)| k < self.select)
        {
            return bad(format!("group {m} has {k} devices, fewer than select {}", self.select));
        }
        if self.classes == 0 {
            return bad("classes must be at least 1".into());
        }
        if self.iterations_per_round == 0 {
            return bad("iterations_per_round must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        Ok(())
    }
}

/// Turns counts into a probability vector.
pub fn normalize(counts: &ClassCounts) -> Result<ClassDistribution> {
    let total = counts.total();
    if total == 0 {
        return Err(Error::ZeroTotal);
    }
    let t = total as f64;
    Ok(ClassDistribution(counts.counts().iter().map(|&c| c as f64 / t).collect()))
}

/// Scales each device's distribution by its data size, sums and normalizes.
pub fn estimate_global_distribution(devices: &[(u64, ClassDistribution)]) -> Result<ClassDistribution> {
    let (_, first) = devices.first().ok_or(Error::EmptyFederation)?;
    let classes = first.classes();
    let total: u64 = devices.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(Error::ZeroTotal);
    }
    let mut columns = vec![Vec::with_capacity(devices.len()); classes];
    for (n, p) in devices {
        if p.classes() != classes {
            return Err(Error::LengthMismatch {
                expected: classes,
                actual: p.classes(),
            });
        }
        for (col, &v) in columns.iter_mut().zip(p.probs()) {
            col.push(*n as f64 * v);
        }
    }
    let mass: Vec<f64> = columns.iter().map(|c| pairwise_sum(c)).collect();
    let sum = pairwise_sum(&mass);
    Ok(ClassDistribution(mass.iter().map(|m| m / sum).collect()))
}

/// L2 distance between two distributions.
pub fn divergence(p: &ClassDistribution, q: &ClassDistribution) -> Result<f64> {
    if p.classes() != q.classes() {
        return Err(Error::LengthMismatch {
            expected: p.classes(),
            actual: q.classes(),
        });
    }
    let diff: Vec<f64> = p.probs().iter().zip(q.probs()).map(|(a, b)| a - b).collect();
    Ok(l2_norm(&diff))
}
