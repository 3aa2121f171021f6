//! Cardinality-constrained 0-1 least squares for group client selection.
//!
//! A group base station picks `L_sel` of `alpha` candidate devices so that
//! the summed next-batch label histograms of the chosen devices (plus the
//! randomly pre-sampled ones) land as close as possible to `nL * P_real`:
//!
//! ```text
//!     min ||A x - y||_2   s.t.  x in {0,1}^alpha,  sum(x) = L_sel
//! ```
//!
//! [`gbp_cs`] solves it by repeatedly swapping the zero entry with the
//! smallest gradient and the one entry with the largest gradient for as long
//! as the swap strictly lowers the distance.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{l2_norm, ClassCounts, ClassDistribution};
use crate::error::{Error, Result};

/// Relative cutoff below which singular values count as zero.
pub const PINV_RCOND: f64 = 1e-10;

/// One selection instance: integer candidate histograms `A` (F x alpha),
/// real target `y` and the number of candidates to pick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemDoc", into = "ProblemDoc")]
pub struct SelectionProblem {
    classes: usize,
    candidates: usize,
    select: usize,
    /// Row-major, `classes * candidates`.
    a: Vec<i64>,
    y: Vec<f64>,
    /// Sample count of a full selection (`nL`), used to turn the objective
    /// back into a distance between distributions.
    total: Option<f64>,
}

/// JSON document form of a [`SelectionProblem`].
#[derive(Serialize, Deserialize)]
struct ProblemDoc {
    #[serde(rename = "F")]
    classes: usize,
    alpha: usize,
    #[serde(rename = "L_sel")]
    select: usize,
    #[serde(rename = "A")]
    a: Vec<i64>,
    y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total: Option<f64>,
}

impl TryFrom<ProblemDoc> for SelectionProblem {
    type Error = Error;

    fn try_from(d: ProblemDoc) -> Result<Self> {
        let mut p = SelectionProblem::new(d.classes, d.alpha, d.select, d.a, d.y)?;
        if let Some(t) = d.total {
            p = p.with_total(t)?;
        }
        Ok(p)
    }
}

impl From<SelectionProblem> for ProblemDoc {
    fn from(p: SelectionProblem) -> Self {
        ProblemDoc {
            classes: p.classes,
            alpha: p.candidates,
            select: p.select,
            a: p.a,
            y: p.y,
            total: p.total,
        }
    }
}

impl SelectionProblem {
    pub fn new(classes: usize, candidates: usize, select: usize, a: Vec<i64>, y: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::MalformedInstance(m));
        if a.len() != classes * candidates {
            return bad(format!("A has {} entries, expected F*alpha = {}", a.len(), classes * candidates));
        }
        if y.len() != classes {
            return bad(format!("y has {} entries, expected F = {classes}", y.len()));
        }
        if let Some(v) = a.iter().find(|v| **v < 0) {
            return bad(format!("A contains negative count {v}"));
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return bad(format!("y contains non-finite value {v}"));
        }
        if select > candidates {
            return bad(format!("L_sel {select} exceeds alpha {candidates}"));
        }
        Ok(SelectionProblem {
            classes,
            candidates,
            select,
            a,
            y,
            total: None,
        })
    }

    pub fn with_total(mut self, total: f64) -> Result<Self> {
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::MalformedInstance(format!("total {total} must be positive")));
        }
        self.total = Some(total);
        Ok(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::MalformedInstance(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("problem serializes")
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `alpha`, the number of candidate devices.
    pub fn candidates(&self) -> usize {
        self.candidates
    }

    /// `L_sel`, the required number of ones.
    pub fn select(&self) -> usize {
        self.select
    }

    pub fn a(&self, class: usize, candidate: usize) -> i64 {
        self.a[class * self.candidates + candidate]
    }

    pub fn target(&self) -> &[f64] {
        &self.y
    }

    /// The normalizer from objective to distribution distance. Falls back to
    /// `sum(y)`, which equals `nL` when nothing was pre-sampled.
    pub fn total(&self) -> f64 {
        self.total.unwrap_or_else(|| self.y.iter().sum())
    }

    pub fn column(&self, candidate: usize) -> impl Iterator<Item = i64> + '_ {
        (0..self.classes).map(move |f| self.a(f, candidate))
    }

    /// `A x` computed exactly in integers.
    pub fn counts_of(&self, x: &[bool]) -> Vec<i64> {
        let mut acc = vec![0i64; self.classes];
        for (j, _) in x.iter().enumerate().filter(|(_, &on)| on) {
            for (f, v) in acc.iter_mut().enumerate() {
                *v += self.a(f, j);
            }
        }
        acc
    }

    /// `r = A x - y`.
    pub fn residual(&self, x: &[bool]) -> Vec<f64> {
        self.residual_from_counts(&self.counts_of(x))
    }

    pub(crate) fn residual_from_counts(&self, counts: &[i64]) -> Vec<f64> {
        counts.iter().zip(&self.y).map(|(&c, &y)| c as f64 - y).collect()
    }

    /// `||A x - y||_2`, computed from scratch. Every reported objective in
    /// the crate goes through this function so equal selections always
    /// compare equal.
    pub fn objective(&self, x: &[bool]) -> f64 {
        l2_norm(&self.residual(x))
    }

    /// Objective mapped back to a distance between distributions.
    pub fn divergence_of(&self, objective: f64) -> f64 {
        objective / self.total()
    }

    pub(crate) fn check_selection(&self, x: &[bool]) -> Result<()> {
        if x.len() != self.candidates {
            return Err(Error::LengthMismatch {
                expected: self.candidates,
                actual: x.len(),
            });
        }
        Ok(())
    }

    fn require_candidates(&self) -> Result<()> {
        if self.candidates == 0 {
            return Err(Error::DegenerateProblem("no candidates (alpha = 0)".into()));
        }
        Ok(())
    }
}

/// Whether candidate batch sizes must all match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchPolicy {
    /// Reject candidates whose totals differ from `n`.
    #[default]
    Strict,
    /// Accept unequal totals. The target is built for the expected selection
    /// size (pre-sampled total plus `L_sel` mean candidate totals); reported
    /// divergences still normalize the actual aggregate histogram.
    Relaxed,
}

/// Builds `A` from candidate histograms and `y = nL * P_real - b`.
pub fn build_problem(
    candidates: &[ClassCounts],
    presampled_total: &ClassCounts,
    p_real: &ClassDistribution,
    batch_size: u64,
    select_total: usize,
    select: usize,
    policy: BatchPolicy,
) -> Result<SelectionProblem> {
    let classes = p_real.classes();
    if presampled_total.classes() != classes {
        return Err(Error::LengthMismatch {
            expected: classes,
            actual: presampled_total.classes(),
        });
    }
    let alpha = candidates.len();
    let mut a = vec![0i64; classes * alpha];
    for (j, c) in candidates.iter().enumerate() {
        if c.classes() != classes {
            return Err(Error::LengthMismatch {
                expected: classes,
                actual: c.classes(),
            });
        }
        if policy == BatchPolicy::Strict && c.total() != batch_size {
            return Err(Error::UnequalBatchSizes {
                first: batch_size,
                other: c.total(),
            });
        }
        for (f, &v) in c.counts().iter().enumerate() {
            a[f * alpha + j] = v as i64;
        }
    }
    let total = match policy {
        BatchPolicy::Strict => (batch_size * select_total as u64) as f64,
        BatchPolicy::Relaxed => {
            let mean = if alpha == 0 {
                batch_size as f64
            } else {
                candidates.iter().map(|c| c.total() as f64).sum::<f64>() / alpha as f64
            };
            presampled_total.total() as f64 + select as f64 * mean
        }
    };
    let y = p_real
        .probs()
        .iter()
        .zip(presampled_total.counts())
        .map(|(&p, &b)| total * p - b as f64)
        .collect();
    let problem = SelectionProblem::new(classes, alpha, select, a, y)?;
    if total > 0.0 {
        problem.with_total(total)
    } else {
        Ok(problem)
    }
}

/// How GBP-CS picks its starting point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initializer {
    /// Top-`L_sel` entries of the minimum-norm least-squares solution.
    #[default]
    Mpinv,
    /// Greedy warm-up from the empty selection.
    Zero,
    /// Uniform random subset.
    Random,
}

impl Initializer {
    pub const ALL: [Initializer; 3] = [Initializer::Mpinv, Initializer::Zero, Initializer::Random];

    pub fn name(self) -> &'static str {
        match self {
            Initializer::Mpinv => "mpinv",
            Initializer::Zero => "zero",
            Initializer::Random => "random",
        }
    }
}

impl fmt::Display for Initializer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Initializer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mpinv" => Ok(Initializer::Mpinv),
            "zero" => Ok(Initializer::Zero),
            "random" => Ok(Initializer::Random),
            other => Err(Error::UnknownInitializer(other.to_string())),
        }
    }
}

/// Sets the `k` largest entries to one; ties go to the lower index.
pub fn top_k(values: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]).then(i.cmp(&j)));
    let mut x = vec![false; values.len()];
    for &i in order.iter().take(k) {
        x[i] = true;
    }
    x
}

/// Minimum-norm least-squares solution of `A x = y` via SVD.
pub fn min_norm_lstsq(problem: &SelectionProblem) -> Vec<f64> {
    let (rows, cols) = (problem.classes(), problem.candidates());
    let a = DMatrix::from_fn(rows, cols, |i, j| problem.a(i, j) as f64);
    let y = DVector::from_column_slice(problem.target());
    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = PINV_RCOND * sigma_max;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let mut x = DVector::zeros(cols);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        let coeff = u.column(k).dot(&y) / s;
        x += v_t.row(k).transpose() * coeff;
    }
    x.iter().copied().collect()
}

/// Top-`L_sel` of the pseudoinverse solution.
pub fn init_mpinv(problem: &SelectionProblem) -> Result<Vec<bool>> {
    problem.require_candidates()?;
    if problem.select() == problem.candidates() {
        return Ok(vec![true; problem.candidates()]);
    }
    Ok(top_k(&min_norm_lstsq(problem), problem.select()))
}

/// Greedy warm-up: from all zeros, switch on the zero entry with the
/// smallest gradient, `L_sel` times, recomputing the gradient after each
/// flip. Returns the vector and the indices in the order they were set.
pub fn init_zero(problem: &SelectionProblem) -> Result<(Vec<bool>, Vec<usize>)> {
    problem.require_candidates()?;
    let mut x = vec![false; problem.candidates()];
    let mut order = Vec::with_capacity(problem.select());
    for _ in 0..problem.select() {
        let g = gradient(problem, &x)?;
        let i = argmin_where(&g, &x, false).expect("fewer ones than candidates");
        x[i] = true;
        order.push(i);
    }
    Ok((x, order))
}

/// Uniform `L_sel`-subset.
pub fn init_random<R: Rng + ?Sized>(problem: &SelectionProblem, rng: &mut R) -> Result<Vec<bool>> {
    problem.require_candidates()?;
    Ok(random_subset(problem.candidates(), problem.select(), rng))
}

pub(crate) fn random_subset<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<bool> {
    let mut x = vec![false; n];
    for i in rand::seq::index::sample(rng, n, k) {
        x[i] = true;
    }
    x
}

/// `A^T (A x - y)`: the direction of the gradient of the distance, without
/// the `1/||r||` factor. The factor is positive, so the extrema picked by
/// [`select_permutation_pair`] do not change, and the zero residual needs no
/// special case.
pub fn gradient(problem: &SelectionProblem, x: &[bool]) -> Result<Vec<f64>> {
    problem.check_selection(x)?;
    Ok(gradient_from_residual(problem, &problem.residual(x)))
}

/// Same as [`gradient`] for a real-valued (relaxed) point.
pub fn relaxed_gradient(problem: &SelectionProblem, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != problem.candidates() {
        return Err(Error::LengthMismatch {
            expected: problem.candidates(),
            actual: x.len(),
        });
    }
    let r: Vec<f64> = (0..problem.classes())
        .map(|f| {
            let ax: f64 = x.iter().enumerate().map(|(j, xj)| problem.a(f, j) as f64 * xj).sum();
            ax - problem.target()[f]
        })
        .collect();
    Ok(gradient_from_residual(problem, &r))
}

fn gradient_from_residual(problem: &SelectionProblem, r: &[f64]) -> Vec<f64> {
    (0..problem.candidates())
        .map(|j| problem.column(j).zip(r).map(|(a, r)| a as f64 * r).sum())
        .collect()
}

fn argmin_where(g: &[f64], x: &[bool], state: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&gi, &xi)) in g.iter().zip(x).enumerate() {
        if xi == state && best.is_none_or(|b| gi < g[b]) {
            best = Some(i);
        }
    }
    best
}

fn argmax_where(g: &[f64], x: &[bool], state: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&gi, &xi)) in g.iter().zip(x).enumerate() {
        if xi == state && best.is_none_or(|b| gi > g[b]) {
            best = Some(i);
        }
    }
    best
}

/// Picks `(i_0to1, i_1to0)`: the zero entry with the smallest gradient and
/// the one entry with the largest gradient. Ties go to the lower index.
pub fn select_permutation_pair(g: &[f64], x: &[bool]) -> Result<(usize, usize)> {
    if g.len() != x.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            actual: g.len(),
        });
    }
    match (argmin_where(g, x, false), argmax_where(g, x, true)) {
        (Some(enter), Some(leave)) => Ok((enter, leave)),
        _ => Err(Error::NoFeasiblePair),
    }
}

/// Result of one GBP-CS run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSolution {
    pub x: Vec<bool>,
    pub objective: f64,
    /// Accepted swaps (`tau`).
    pub iterations: usize,
    pub elapsed: Duration,
}

impl SelectionSolution {
    pub fn selected(&self) -> Vec<usize> {
        self.x.iter().enumerate().filter(|(_, &on)| on).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// `L_sel` is 0 or alpha; nothing to optimize.
    Forced,
    /// Residual reached zero.
    Exact,
    /// The proposed swap did not strictly lower the distance.
    NoImprovement,
    MaxSteps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Distance after the swap.
    pub objective: f64,
    pub enter: usize,
    pub leave: usize,
    /// Time since the solver started, including initialization.
    pub elapsed: Duration,
}

/// The descent history of a GBP-CS run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverTrace {
    pub initializer: Option<Initializer>,
    /// Indices switched on by the zero-initializer warm-up.
    pub warmup: Vec<usize>,
    pub initial_objective: f64,
    pub init_elapsed: Duration,
    pub steps: Vec<TraceStep>,
    /// Distance tracked through incremental residual updates.
    pub tracked_objective: f64,
    pub stop: StopReason,
}

/// Default cap on accepted swaps.
pub fn default_max_steps(problem: &SelectionProblem) -> usize {
    10 * problem.candidates()
}

/// Runs GBP-CS from the chosen initializer. `rng` is only drawn from by
/// [`Initializer::Random`].
pub fn gbp_cs<R: Rng + ?Sized>(
    problem: &SelectionProblem,
    initializer: Initializer,
    max_steps: usize,
    rng: &mut R,
) -> Result<(SelectionSolution, SolverTrace)> {
    let start = Instant::now();
    problem.require_candidates()?;
    let (alpha, select) = (problem.candidates(), problem.select());
    if select == 0 || select == alpha {
        let x = vec![select == alpha; alpha];
        let objective = problem.objective(&x);
        let elapsed = start.elapsed();
        let trace = SolverTrace {
            initializer: Some(initializer),
            warmup: Vec::new(),
            initial_objective: objective,
            init_elapsed: elapsed,
            steps: Vec::new(),
            tracked_objective: objective,
            stop: StopReason::Forced,
        };
        return Ok((
            SelectionSolution {
                x,
                objective,
                iterations: 0,
                elapsed,
            },
            trace,
        ));
    }
    let (x0, warmup) = match initializer {
        Initializer::Mpinv => (init_mpinv(problem)?, Vec::new()),
        Initializer::Zero => init_zero(problem)?,
        Initializer::Random => (init_random(problem, rng)?, Vec::new()),
    };
    let (solution, mut trace) = descend(problem, x0, max_steps, start)?;
    trace.initializer = Some(initializer);
    trace.warmup = warmup;
    Ok((solution, trace))
}

/// Runs the swap descent from an explicit feasible starting point.
pub fn solve_from(problem: &SelectionProblem, x0: Vec<bool>, max_steps: usize) -> Result<(SelectionSolution, SolverTrace)> {
    problem.check_selection(&x0)?;
    let ones = x0.iter().filter(|&&b| b).count();
    if ones != problem.select() {
        return Err(Error::DegenerateProblem(format!(
            "starting point has {ones} ones, expected {}",
            problem.select()
        )));
    }
    descend(problem, x0, max_steps, Instant::now())
}

fn descend(
    problem: &SelectionProblem,
    mut x: Vec<bool>,
    max_steps: usize,
    start: Instant,
) -> Result<(SelectionSolution, SolverTrace)> {
    let init_elapsed = start.elapsed();
    let mut r = problem.residual(&x);
    let mut d = l2_norm(&r);
    let initial_objective = d;
    let mut steps = Vec::new();
    let all_or_nothing = x.iter().all(|&b| b) || x.iter().all(|&b| !b);
    let stop = loop {
        if all_or_nothing {
            break StopReason::Forced;
        }
        if d == 0.0 {
            break StopReason::Exact;
        }
        if steps.len() >= max_steps {
            break StopReason::MaxSteps;
        }
        let g = gradient_from_residual(problem, &r);
        let (enter, leave) = select_permutation_pair(&g, &x)?;
        let candidate: Vec<f64> = r
            .iter()
            .enumerate()
            .map(|(f, &rf)| rf + (problem.a(f, enter) - problem.a(f, leave)) as f64)
            .collect();
        let d_next = l2_norm(&candidate);
        if d_next >= d {
            break StopReason::NoImprovement;
        }
        x[enter] = true;
        x[leave] = false;
        r = candidate;
        d = d_next;
        steps.push(TraceStep {
            objective: d,
            enter,
            leave,
            elapsed: start.elapsed(),
        });
    };
    let objective = problem.objective(&x);
    let elapsed = start.elapsed();
    Ok((
        SelectionSolution {
            x,
            objective,
            iterations: steps.len(),
            elapsed,
        },
        SolverTrace {
            initializer: None,
            warmup: Vec::new(),
            initial_objective,
            init_elapsed,
            steps,
            tracked_objective: d,
            stop,
        },
    ))
}
