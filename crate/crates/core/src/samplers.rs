//! Baseline selection strategies and the benchmark harness that compares
//! them with GBP-CS on the same instances.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{pairwise_sum, ClassCounts};
use crate::error::{Error, Result};
use crate::rng::{purpose, StreamKey};
use crate::sampling;
use crate::selection::{self, build_problem, default_max_steps, random_subset, BatchPolicy, Initializer, SelectionProblem, SolverTrace};

/// Default cap on the number of subsets the exhaustive sampler may visit.
pub const DEFAULT_BRUTE_CAP: u128 = 5_000_000;

/// Output of any sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerResult {
    pub x: Vec<bool>,
    pub objective: f64,
    pub elapsed: Duration,
    /// Objective evaluations performed.
    pub evaluations: u64,
}

/// The closed set of selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Sampler {
    GbpCs(Initializer),
    Random,
    MonteCarlo,
    Brute,
    Genetic,
}

impl Sampler {
    /// Stable numeric id, used to key per-cell random streams.
    pub fn id(self) -> u64 {
        match self {
            Sampler::GbpCs(Initializer::Mpinv) => 1,
            Sampler::GbpCs(Initializer::Zero) => 2,
            Sampler::GbpCs(Initializer::Random) => 3,
            Sampler::Random => 4,
            Sampler::MonteCarlo => 5,
            Sampler::Brute => 6,
            Sampler::Genetic => 7,
        }
    }

    pub fn name(self) -> String {
        match self {
            Sampler::GbpCs(Initializer::Mpinv) => "gbp-cs".into(),
            Sampler::GbpCs(init) => format!("gbp-cs:{init}"),
            Sampler::Random => "random".into(),
            Sampler::MonteCarlo => "mc".into(),
            Sampler::Brute => "brute".into(),
            Sampler::Genetic => "ga".into(),
        }
    }
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gbp-cs" => Ok(Sampler::GbpCs(Initializer::Mpinv)),
            "random" => Ok(Sampler::Random),
            "mc" => Ok(Sampler::MonteCarlo),
            "brute" => Ok(Sampler::Brute),
            "ga" => Ok(Sampler::Genetic),
            other => match other.strip_prefix("gbp-cs:") {
                Some(init) => Ok(Sampler::GbpCs(init.parse()?)),
                None => Err(Error::UnknownSampler(other.to_string())),
            },
        }
    }
}

impl TryFrom<String> for Sampler {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Sampler> for String {
    fn from(s: Sampler) -> Self {
        s.name()
    }
}

/// Genetic sampler hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaParams {
    pub population: usize,
    /// Probability that an offspring gets one (1,0) swap.
    pub mutation: f64,
    pub generations: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 100,
            mutation: 0.001,
            generations: 100,
        }
    }
}

/// Knobs shared by every sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub mc_trials: usize,
    pub ga: GaParams,
    pub brute_cap: u128,
    /// GBP-CS swap cap; `None` means `10 * alpha`.
    pub max_steps: Option<usize>,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        SamplerSettings {
            mc_trials: 1000,
            ga: GaParams::default(),
            brute_cap: DEFAULT_BRUTE_CAP,
            max_steps: None,
        }
    }
}

fn require_feasible(problem: &SelectionProblem) -> Result<()> {
    if problem.candidates() == 0 {
        return Err(Error::DegenerateProblem("no candidates (alpha = 0)".into()));
    }
    Ok(())
}

/// One uniform `L_sel`-subset.
pub fn sample_random<R: Rng + ?Sized>(problem: &SelectionProblem, rng: &mut R) -> Result<SamplerResult> {
    require_feasible(problem)?;
    let start = Instant::now();
    let x = random_subset(problem.candidates(), problem.select(), rng);
    let objective = problem.objective(&x);
    Ok(SamplerResult {
        x,
        objective,
        elapsed: start.elapsed(),
        evaluations: 1,
    })
}

/// Best of `trials` uniform subsets. The first trial consumes the stream
/// exactly as [`sample_random`] does.
pub fn sample_monte_carlo<R: Rng + ?Sized>(problem: &SelectionProblem, rng: &mut R, trials: usize) -> Result<SamplerResult> {
    require_feasible(problem)?;
    if trials == 0 {
        return Err(Error::DegenerateProblem("monte carlo needs at least one trial".into()));
    }
    let start = Instant::now();
    let mut best_x = random_subset(problem.candidates(), problem.select(), rng);
    let mut best = problem.objective(&best_x);
    for _ in 1..trials {
        let x = random_subset(problem.candidates(), problem.select(), rng);
        let d = problem.objective(&x);
        if d < best {
            best = d;
            best_x = x;
        }
    }
    Ok(SamplerResult {
        x: best_x,
        objective: best,
        elapsed: start.elapsed(),
        evaluations: trials as u64,
    })
}

/// `C(n, k)`, saturating.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

struct BruteSearch<'a> {
    problem: &'a SelectionProblem,
    counts: Vec<i64>,
    chosen: Vec<usize>,
    squares: Vec<f64>,
    best: f64,
    best_set: Vec<usize>,
}

impl BruteSearch<'_> {
    fn add(&mut self, j: usize, sign: i64) {
        for (f, c) in self.counts.iter_mut().enumerate() {
            *c += sign * self.problem.a(f, j);
        }
    }

    // Same arithmetic as `SelectionProblem::objective`, without allocating.
    fn leaf(&mut self) {
        for ((s, &c), &y) in self.squares.iter_mut().zip(&self.counts).zip(self.problem.target()) {
            let r = c as f64 - y;
            *s = r * r;
        }
        let d = pairwise_sum(&self.squares).sqrt();
        if d < self.best {
            self.best = d;
            self.best_set.clone_from(&self.chosen);
        }
    }

    fn descend(&mut self, from: usize, remaining: usize) {
        if remaining == 0 {
            self.leaf();
            return;
        }
        let alpha = self.problem.candidates();
        for j in from..=(alpha - remaining) {
            self.add(j, 1);
            self.chosen.push(j);
            self.descend(j + 1, remaining - 1);
            self.chosen.pop();
            self.add(j, -1);
        }
    }
}

/// Exhaustive search over all `C(alpha, L_sel)` subsets. Among equal
/// objectives the lexicographically first subset wins.
pub fn sample_brute(problem: &SelectionProblem, cap: u128) -> Result<SamplerResult> {
    require_feasible(problem)?;
    let (alpha, k) = (problem.candidates(), problem.select());
    let subsets = binomial(alpha, k);
    if subsets > cap {
        return Err(Error::InstanceTooLarge { subsets, cap });
    }
    let start = Instant::now();
    let new_search = || BruteSearch {
        problem,
        counts: vec![0; problem.classes()],
        chosen: Vec::with_capacity(k),
        squares: vec![0.0; problem.classes()],
        best: f64::INFINITY,
        best_set: Vec::new(),
    };
    let best_set = if k == 0 {
        Vec::new()
    } else {
        // Split on the first chosen index; partitions are scanned in
        // lexicographic order, so the reduction keeps the first minimum.
        let partials: Vec<(f64, Vec<usize>)> = (0..=(alpha - k))
            .into_par_iter()
            .map(|first| {
                let mut s = new_search();
                s.add(first, 1);
                s.chosen.push(first);
                s.descend(first + 1, k - 1);
                (s.best, s.best_set)
            })
            .collect();
        partials
            .into_iter()
            .fold((f64::INFINITY, Vec::new()), |acc, p| if p.0 < acc.0 { p } else { acc })
            .1
    };
    let mut x = vec![false; alpha];
    for i in best_set {
        x[i] = true;
    }
    let objective = problem.objective(&x);
    Ok(SamplerResult {
        x,
        objective,
        elapsed: start.elapsed(),
        evaluations: subsets as u64,
    })
}

/// Flips random surplus ones off (or random zeros on) until exactly `k`
/// entries are set.
pub fn repair<R: Rng + ?Sized>(x: &mut [bool], k: usize, rng: &mut R) {
    let ones = x.iter().filter(|&&b| b).count();
    if ones == k {
        return;
    }
    let state = ones > k;
    let flips = ones.abs_diff(k);
    let pool: Vec<usize> = (0..x.len()).filter(|&i| x[i] == state).collect();
    for pick in rand::seq::index::sample(rng, pool.len(), flips) {
        x[pool[pick]] = !state;
    }
}

/// One-point crossover at `cut` (exclusive for `a`), before repair.
pub fn crossover(a: &[bool], b: &[bool], cut: usize) -> Vec<bool> {
    a[..cut].iter().chain(&b[cut..]).copied().collect()
}

/// Swaps one random (1, 0) pair with probability `rate`.
pub fn mutate<R: Rng + ?Sized>(x: &mut [bool], rate: f64, rng: &mut R) {
    if !rng.random_bool(rate.clamp(0.0, 1.0)) {
        return;
    }
    let ones: Vec<usize> = (0..x.len()).filter(|&i| x[i]).collect();
    let zeros: Vec<usize> = (0..x.len()).filter(|&i| !x[i]).collect();
    if ones.is_empty() || zeros.is_empty() {
        return;
    }
    let i = ones[rng.random_range(0..ones.len())];
    let j = zeros[rng.random_range(0..zeros.len())];
    x[i] = false;
    x[j] = true;
}

/// Outcome of a genetic search, with the best objective after the initial
/// population and after each generation.
#[derive(Debug, Clone)]
pub struct GeneticRun {
    pub result: SamplerResult,
    pub history: Vec<f64>,
}

/// Elitist genetic search over fixed-weight binary vectors: size-2
/// tournaments, one-point crossover with repair, swap mutation.
pub fn genetic_search<R: Rng + ?Sized>(problem: &SelectionProblem, rng: &mut R, params: GaParams) -> Result<GeneticRun> {
    require_feasible(problem)?;
    if params.population < 2 {
        return Err(Error::DegenerateProblem(format!("population {} below 2", params.population)));
    }
    let start = Instant::now();
    let (alpha, k) = (problem.candidates(), problem.select());
    let mut evaluations = 0u64;
    let mut population: Vec<(Vec<bool>, f64)> = (0..params.population)
        .map(|_| {
            let x = random_subset(alpha, k, rng);
            let d = problem.objective(&x);
            evaluations += 1;
            (x, d)
        })
        .collect();
    let fittest = |pop: &[(Vec<bool>, f64)]| {
        pop.iter()
            .enumerate()
            .fold(0, |best, (i, ind)| if ind.1 < pop[best].1 { i } else { best })
    };
    let mut best = population[fittest(&population)].clone();
    let mut history = vec![best.1];
    for _ in 0..params.generations {
        let elite = population[fittest(&population)].clone();
        let mut next = Vec::with_capacity(params.population);
        next.push(elite);
        while next.len() < params.population {
            let mut tournament = || {
                let i = rng.random_range(0..population.len());
                let j = rng.random_range(0..population.len());
                if population[j].1 < population[i].1 {
                    j
                } else {
                    i
                }
            };
            let (pa, pb) = (tournament(), tournament());
            let cut = if alpha > 1 { rng.random_range(1..alpha) } else { 0 };
            let mut child = crossover(&population[pa].0, &population[pb].0, cut);
            repair(&mut child, k, rng);
            mutate(&mut child, params.mutation, rng);
            let d = problem.objective(&child);
            evaluations += 1;
            next.push((child, d));
        }
        population = next;
        let gen_best = &population[fittest(&population)];
        if gen_best.1 < best.1 {
            best = gen_best.clone();
        }
        history.push(best.1);
    }
    Ok(GeneticRun {
        result: SamplerResult {
            x: best.0,
            objective: best.1,
            elapsed: start.elapsed(),
            evaluations,
        },
        history,
    })
}

pub fn sample_genetic<R: Rng + ?Sized>(problem: &SelectionProblem, rng: &mut R, params: GaParams) -> Result<SamplerResult> {
    genetic_search(problem, rng, params).map(|run| run.result)
}

/// GBP-CS wrapped as a sampler. Its evaluation count is one per visited
/// point (start plus each proposed swap).
pub fn sample_gbp_cs<R: Rng + ?Sized>(
    problem: &SelectionProblem,
    initializer: Initializer,
    max_steps: Option<usize>,
    rng: &mut R,
) -> Result<(SamplerResult, SolverTrace)> {
    let steps = max_steps.unwrap_or_else(|| default_max_steps(problem));
    let (sol, trace) = selection::gbp_cs(problem, initializer, steps, rng)?;
    let proposals = match trace.stop {
        selection::StopReason::NoImprovement => sol.iterations + 1,
        _ => sol.iterations,
    };
    Ok((
        SamplerResult {
            x: sol.x,
            objective: sol.objective,
            elapsed: sol.elapsed,
            evaluations: (1 + proposals) as u64,
        },
        trace,
    ))
}

/// Dispatches to the chosen sampler.
pub fn run_sampler<R: Rng + ?Sized>(
    sampler: Sampler,
    problem: &SelectionProblem,
    settings: &SamplerSettings,
    rng: &mut R,
) -> Result<SamplerResult> {
    match sampler {
        Sampler::GbpCs(init) => sample_gbp_cs(problem, init, settings.max_steps, rng).map(|(r, _)| r),
        Sampler::Random => sample_random(problem, rng),
        Sampler::MonteCarlo => sample_monte_carlo(problem, rng, settings.mc_trials),
        Sampler::Brute => sample_brute(problem, settings.brute_cap),
        Sampler::Genetic => sample_genetic(problem, rng, settings.ga),
    }
}

/// Parameters of randomly generated selection instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzSpec {
    pub classes: usize,
    pub candidates: usize,
    pub select: usize,
    pub presample: usize,
    pub batch_size: usize,
    /// Dirichlet concentration of each device's label distribution.
    pub concentration: f64,
}

impl FuzzSpec {
    /// 10 classes, 20 candidates, pick 5, batches of 32.
    pub fn small() -> Self {
        FuzzSpec {
            classes: 10,
            candidates: 20,
            select: 5,
            presample: 0,
            batch_size: 32,
            concentration: 0.5,
        }
    }

    /// One group at FEMNIST scale: 62 classes, 35 devices, 2 pre-sampled,
    /// 8 optimized.
    pub fn large() -> Self {
        FuzzSpec {
            classes: 62,
            candidates: 33,
            select: 8,
            presample: 2,
            batch_size: 32,
            concentration: 0.5,
        }
    }
}

/// A random group: every device draws a Dirichlet label distribution and a
/// multinomial batch; the group-wide label mix stands in for `P_real`; the
/// first `presample` devices form `b`.
pub fn fuzz_problem(spec: &FuzzSpec, key: StreamKey) -> Result<SelectionProblem> {
    let mut rng = key.rng();
    let devices = spec.candidates + spec.presample;
    let histograms: Vec<ClassCounts> = (0..devices)
        .map(|_| {
            let p = sampling::dirichlet(&mut rng, spec.concentration, spec.classes);
            ClassCounts::from_labels(&sampling::labels(&mut rng, &p, spec.batch_size), spec.classes)
        })
        .collect();
    let mut pooled = ClassCounts::zeros(spec.classes);
    for h in &histograms {
        pooled.add_assign(h)?;
    }
    let p_real = crate::dist::normalize(&pooled)?;
    let mut b = ClassCounts::zeros(spec.classes);
    for h in &histograms[..spec.presample] {
        b.add_assign(h)?;
    }
    build_problem(
        &histograms[spec.presample..],
        &b,
        &p_real,
        spec.batch_size as u64,
        spec.select + spec.presample,
        spec.select,
        BatchPolicy::Strict,
    )
}

/// `count` instances keyed by `(seed, index)`.
pub fn fuzz_problems(spec: &FuzzSpec, seed: u64, count: usize) -> Result<Vec<SelectionProblem>> {
    let root = StreamKey::root(seed).child(purpose::FUZZ);
    (0..count).map(|i| fuzz_problem(spec, root.child(i as u64))).collect()
}

/// One cell of a benchmark sweep.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub instance_id: usize,
    pub sampler: Sampler,
    pub outcome: std::result::Result<BenchCell, String>,
}

#[derive(Debug, Clone)]
pub struct BenchCell {
    pub result: SamplerResult,
    pub divergence: f64,
}

/// Random stream used for `sampler` on instance `instance` of a benchmark.
pub fn bench_stream(seed: u64, instance: usize, sampler: Sampler) -> StreamKey {
    StreamKey::root(seed).child(purpose::BENCH).path(&[instance as u64, sampler.id()])
}

/// Runs every sampler on every problem. Cells run in parallel; each owns a
/// stream keyed by (seed, problem index, sampler id). A failing cell is
/// recorded and the sweep continues.
pub fn bench_samplers(
    problems: &[SelectionProblem],
    samplers: &[Sampler],
    settings: &SamplerSettings,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if problems.is_empty() || samplers.is_empty() {
        return Err(Error::InvalidConfig("benchmark needs at least one problem and one sampler".into()));
    }
    let cells: Vec<(usize, Sampler)> = (0..problems.len())
        .flat_map(|i| samplers.iter().map(move |&s| (i, s)))
        .collect();
    Ok(cells
        .into_par_iter()
        .map(|(i, sampler)| {
            let problem = &problems[i];
            let mut rng = bench_stream(seed, i, sampler).rng();
            let outcome = run_sampler(sampler, problem, settings, &mut rng)
                .map(|result| BenchCell {
                    divergence: problem.divergence_of(result.objective),
                    result,
                })
                .map_err(|e| e.to_string());
            BenchRow {
                instance_id: i,
                sampler,
                outcome,
            }
        })
        .collect())
}

/// Writes the sweep as CSV. With `timing` off the wall-time column is left
/// empty so output is reproducible byte for byte.
pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W, timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
    w.write_record(["instance_id", "sampler", "objective", "divergence", "wall_ms", "evaluations"])
        .map_err(csv_err)?;
    for row in rows {
        let mut rec = vec![row.instance_id.to_string(), row.sampler.name()];
        match &row.outcome {
            Ok(cell) => {
                rec.push(format!("{}", cell.result.objective));
                rec.push(format!("{}", cell.divergence));
                rec.push(if timing {
                    format!("{:.6}", cell.result.elapsed.as_secs_f64() * 1e3)
                } else {
                    String::new()
                });
                rec.push(cell.result.evaluations.to_string());
            }
            Err(_) => rec.extend([String::new(), String::new(), String::new(), String::new()]),
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
