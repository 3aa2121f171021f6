//! Round orchestration for the grouped protocol and the FedAvg baseline,
//! with per-round metrics.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate_federation, load_manifest, DeviceStream, Federation, SynthConfig};
use crate::dist::{divergence, estimate_global_distribution, normalize, ClassCounts, ClassDistribution, FederationTopology};
use crate::error::{Error, Result};
use crate::learn::{evaluate, external_sync, fedavg_round, internal_sync, local_step, ModelParams, ModelSpec};
use crate::rng::{purpose, StreamKey};
use crate::samplers::{run_sampler, Sampler, SamplerSettings};
use crate::selection::{build_problem, random_subset, BatchPolicy, Initializer};
use crate::timecost::{total_fedavg, total_fedgs, CostParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Manifest(PathBuf),
}

/// Everything a run needs besides the worker count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub topology: FederationTopology,
    pub model: ModelSpec,
    pub data: DataSource,
    #[serde(default = "default_sampler")]
    pub sampler: Sampler,
    /// Overrides the start point when the sampler is GBP-CS.
    #[serde(default)]
    pub initializer: Option<Initializer>,
    pub seed: u64,
    #[serde(default)]
    pub sampler_settings: SamplerSettings,
    /// Record wall-clock selection time. Off keeps metrics reproducible.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub cost: Option<CostParams>,
    #[serde(default)]
    pub target_accuracy: Option<f64>,
}

fn default_sampler() -> Sampler {
    Sampler::GbpCs(Initializer::Mpinv)
}

impl SimConfig {
    pub fn effective_sampler(&self) -> Sampler {
        match (self.sampler, self.initializer) {
            (Sampler::GbpCs(_), Some(init)) => Sampler::GbpCs(init),
            (s, _) => s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.model.validate()?;
        if self.model.classes != self.topology.classes {
            return Err(Error::InvalidConfig(format!(
                "model has {} classes, topology {}",
                self.model.classes, self.topology.classes
            )));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!("target_accuracy {t} outside [0, 1]")));
            }
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
            let groups = vec![s.devices_per_group; s.groups];
            if s.classes != self.topology.classes
                || s.batch_size != self.topology.batch_size
                || groups != self.topology.devices_per_group
                || s.dim != self.model.input_dim
            {
                return Err(Error::InvalidConfig(
                    "synthetic data shape disagrees with topology or model".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn build_federation(&self) -> Result<Federation> {
        match &self.data {
            DataSource::Synthetic(s) => generate_federation(s),
            DataSource::Manifest(path) => load_manifest(path),
        }
    }

    fn check_federation(&self, f: &Federation) -> Result<()> {
        let sizes: Vec<usize> = f.groups.iter().map(Vec::len).collect();
        if sizes != self.topology.devices_per_group {
            return Err(Error::InvalidConfig(format!(
                "data has devices per group {sizes:?}, topology {:?}",
                self.topology.devices_per_group
            )));
        }
        if f.classes != self.topology.classes || f.dim != self.model.input_dim {
            return Err(Error::InvalidConfig(format!(
                "data has F = {}, d = {}; config expects F = {}, d = {}",
                f.classes, f.dim, self.topology.classes, self.model.input_dim
            )));
        }
        if f.test.is_empty() {
            return Err(Error::InvalidConfig("data has an empty test set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Fedgs,
    Fedavg,
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fedgs" => Ok(Protocol::Fedgs),
            "fedavg" => Ok(Protocol::Fedavg),
            other => Err(Error::InvalidConfig(format!("unknown protocol {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    /// Mean per-iteration distance of each group's selection from the
    /// global distribution.
    pub divergence: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_wall_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulated_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SimStatus {
    Completed,
    /// A group had fewer usable devices than `L`.
    InsufficientEligibleDevices {
        round: usize,
        iteration: usize,
        group: usize,
        eligible: usize,
        needed: usize,
    },
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub protocol: Protocol,
    pub status: SimStatus,
    pub model: ModelParams,
    pub metrics: Vec<RoundMetrics>,
    pub p_real: ClassDistribution,
}

impl SimOutcome {
    pub fn final_metrics(&self) -> Option<&RoundMetrics> {
        self.metrics.last()
    }
}

/// First round (1-based) whose accuracy reaches `target`.
pub fn rounds_to_target(metrics: &[RoundMetrics], target: f64) -> Option<usize> {
    metrics.iter().find(|m| m.accuracy >= target).map(|m| m.round)
}

/// Distance between each selection's pooled histogram and `p_real`.
pub fn divergence_probe(selections: &[Vec<ClassCounts>], p_real: &ClassDistribution) -> Result<Vec<f64>> {
    selections
        .iter()
        .map(|sel| {
            let mut total = ClassCounts::zeros(p_real.classes());
            for h in sel {
                total.add_assign(h)?;
            }
            divergence(&normalize(&total)?, p_real)
        })
        .collect()
}

/// Global distribution from the devices' initial label totals.
pub fn estimate_p_real(federation: &Federation) -> Result<ClassDistribution> {
    let devices = federation
        .devices()
        .map(|d| Ok((d.size(), normalize(d.initial_counts())?)))
        .collect::<Result<Vec<_>>>()?;
    estimate_global_distribution(&devices)
}

/// Devices one group uses in one iteration, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPick {
    pub devices: Vec<usize>,
    pub divergence: f64,
    pub wall_ms: f64,
}

/// Picks `L` of the eligible devices from their declared histograms alone:
/// `L_rnd` uniformly, the rest with `sampler`. `eligible` holds device
/// indices in ascending order, `histograms` their head-batch counts.
pub fn plan_selection(
    eligible: &[usize],
    histograms: &[ClassCounts],
    p_real: &ClassDistribution,
    topology: &FederationTopology,
    sampler: Sampler,
    settings: &SamplerSettings,
    key: StreamKey,
) -> Result<GroupPick> {
    let (select, presample) = (topology.select, topology.presample);
    if eligible.len() != histograms.len() || eligible.len() < select {
        return Err(Error::InvalidConfig("not enough eligible devices".into()));
    }
    let pre = random_subset(eligible.len(), presample, &mut key.child(purpose::PRESAMPLE).rng());
    let mut b = ClassCounts::zeros(p_real.classes());
    let mut chosen = Vec::with_capacity(select);
    let mut candidates = Vec::new();
    for (i, &on) in pre.iter().enumerate() {
        if on {
            b.add_assign(&histograms[i])?;
            chosen.push(i);
        } else {
            candidates.push(i);
        }
    }
    let mut wall_ms = 0.0;
    if topology.optimized() > 0 {
        let cols: Vec<ClassCounts> = candidates.iter().map(|&i| histograms[i].clone()).collect();
        let problem = build_problem(
            &cols,
            &b,
            p_real,
            topology.batch_size as u64,
            select,
            topology.optimized(),
            BatchPolicy::Relaxed,
        )?;
        let start = Instant::now();
        let result = run_sampler(sampler, &problem, settings, &mut key.child(purpose::SAMPLER).rng())?;
        wall_ms = start.elapsed().as_secs_f64() * 1e3;
        chosen.extend(candidates.iter().zip(&result.x).filter(|(_, &on)| on).map(|(&i, _)| i));
    }
    chosen.sort_unstable();
    let picked: Vec<ClassCounts> = chosen.iter().map(|&i| histograms[i].clone()).collect();
    let divergence = divergence_probe(&[picked], p_real)?[0];
    Ok(GroupPick {
        devices: chosen.into_iter().map(|i| eligible[i]).collect(),
        divergence,
        wall_ms,
    })
}

fn pick_for_group(
    streams: &[DeviceStream],
    need_batches: usize,
    config: &SimConfig,
    sampler: Sampler,
    p_real: &ClassDistribution,
    key: StreamKey,
) -> Result<std::result::Result<GroupPick, usize>> {
    let eligible: Vec<usize> = (0..streams.len()).filter(|&k| streams[k].can_supply(need_batches)).collect();
    if eligible.len() < config.topology.select {
        return Ok(Err(eligible.len()));
    }
    let histograms = eligible
        .iter()
        .map(|&k| streams[k].peek_next_histogram().cloned())
        .collect::<Result<Vec<_>>>()?;
    plan_selection(
        &eligible,
        &histograms,
        p_real,
        &config.topology,
        sampler,
        &config.sampler_settings,
        key,
    )
    .map(Ok)
}

/// Mutable borrows of the listed streams, in list order.
fn borrow_selected<'a>(streams: &'a mut [DeviceStream], devices: &[usize]) -> Vec<&'a mut DeviceStream> {
    let mut out = Vec::with_capacity(devices.len());
    let mut next = devices.iter().peekable();
    for (k, s) in streams.iter_mut().enumerate() {
        if next.peek() == Some(&&k) {
            out.push(s);
            next.next();
        }
    }
    out
}

fn one_step(group_model: &ModelParams, streams: &mut [&mut DeviceStream], eta: f64) -> Result<ModelParams> {
    let batches = streams.iter_mut().map(|s| s.fetch_batch()).collect::<Result<Vec<_>>>()?;
    let trained = batches
        .par_iter()
        .map(|b| Ok((b.len() as u64, local_step(group_model, b, eta)?)))
        .collect::<Result<Vec<_>>>()?;
    internal_sync(&trained)
}

struct GroupIteration {
    model: ModelParams,
    pick: std::result::Result<GroupPick, usize>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Builds the data described by `config` and runs `protocol`.
pub fn run(config: &SimConfig, protocol: Protocol, workers: usize) -> Result<SimOutcome> {
    config.validate()?;
    let federation = config.build_federation()?;
    run_with(config, federation, protocol, workers)
}

pub fn run_fedgs(config: &SimConfig, workers: usize) -> Result<SimOutcome> {
    run(config, Protocol::Fedgs, workers)
}

pub fn run_fedavg(config: &SimConfig, workers: usize) -> Result<SimOutcome> {
    run(config, Protocol::Fedavg, workers)
}

/// Runs `protocol` on already-built data. The data source in `config` is
/// ignored.
pub fn run_with(config: &SimConfig, mut federation: Federation, protocol: Protocol, workers: usize) -> Result<SimOutcome> {
    config.topology.validate()?;
    config.model.validate()?;
    config.check_federation(&federation)?;
    let pool = pool(workers)?;
    pool.install(|| match protocol {
        Protocol::Fedgs => fedgs(config, &mut federation),
        Protocol::Fedavg => fedavg(config, &mut federation),
    })
}

struct Clock {
    cost: Option<CostParams>,
    elapsed_s: f64,
}

impl Clock {
    fn new(config: &SimConfig) -> Self {
        let cost = config.cost.clone().map(|mut c| {
            c.groups = config.topology.groups() as u64;
            c.selected = config.topology.select as u64;
            c.iterations = config.topology.iterations_per_round as u64;
            c
        });
        Clock { cost, elapsed_s: 0.0 }
    }

    fn advance(&mut self, protocol: Protocol, select_s: Option<f64>) -> Result<Option<f64>> {
        let Some(cost) = &self.cost else { return Ok(None) };
        let mut c = cost.clone();
        if let Some(s) = select_s {
            c.t_select = s;
        }
        self.elapsed_s += match protocol {
            Protocol::Fedgs => total_fedgs(&c)?,
            Protocol::Fedavg => total_fedavg(&c)?,
        };
        Ok(Some(self.elapsed_s))
    }
}

fn fedgs(config: &SimConfig, federation: &mut Federation) -> Result<SimOutcome> {
    let topo = &config.topology;
    let root = StreamKey::root(config.seed);
    let sampler = config.effective_sampler();
    let mut global = config.model.init(root.child(purpose::MODEL_INIT))?;
    let p_real = estimate_p_real(federation)?;
    let groups = topo.groups();
    let mut metrics = Vec::new();
    let mut clock = Clock::new(config);
    let mut wall_ms_total = 0.0;
    let t_len = topo.iterations_per_round;

    for round in 0..topo.rounds {
        let mut models = vec![global.clone(); groups];
        let mut div_sum = vec![0.0; groups];
        let mut round_wall_ms = 0.0;
        let mut calls = 0usize;
        for it in 0..t_len {
            let t = (round * t_len + it + 1) as u64;
            let step: Vec<GroupIteration> = federation
                .groups
                .par_iter_mut()
                .zip(models.par_iter())
                .enumerate()
                .map(|(m, (streams, model))| {
                    let key = root.child(purpose::SAMPLER).path(&[t, m as u64]);
                    let pick = pick_for_group(streams, 1, config, sampler, &p_real, key)?;
                    let model = match &pick {
                        Ok(p) => one_step(model, &mut borrow_selected(streams, &p.devices), topo.learning_rate)?,
                        Err(_) => model.clone(),
                    };
                    Ok(GroupIteration { model, pick })
                })
                .collect::<Result<_>>()?;
            for (m, g) in step.iter().enumerate() {
                if let Err(eligible) = g.pick {
                    return Ok(SimOutcome {
                        protocol: Protocol::Fedgs,
                        status: SimStatus::InsufficientEligibleDevices {
                            round: round + 1,
                            iteration: it + 1,
                            group: m,
                            eligible,
                            needed: topo.select,
                        },
                        model: global,
                        metrics,
                        p_real,
                    });
                }
            }
            for (m, g) in step.into_iter().enumerate() {
                let pick = g.pick.expect("checked above");
                div_sum[m] += pick.divergence;
                round_wall_ms += pick.wall_ms;
                calls += 1;
                models[m] = g.model;
            }
        }
        global = external_sync(&models)?;
        wall_ms_total += round_wall_ms;
        let select_s = config.timing.then(|| round_wall_ms / 1e3 / calls.max(1) as f64);
        let simulated = clock.advance(Protocol::Fedgs, select_s)?;
        let (accuracy, loss) = evaluate(&global, &federation.test)?;
        metrics.push(RoundMetrics {
            round: round + 1,
            accuracy,
            loss,
            divergence: div_sum.iter().map(|d| d / t_len as f64).collect(),
            selection_wall_ms: config.timing.then_some(wall_ms_total),
            simulated_time_s: simulated,
        });
    }
    Ok(SimOutcome {
        protocol: Protocol::Fedgs,
        status: SimStatus::Completed,
        model: global,
        metrics,
        p_real,
    })
}

fn fedavg(config: &SimConfig, federation: &mut Federation) -> Result<SimOutcome> {
    let topo = &config.topology;
    let root = StreamKey::root(config.seed);
    let mut global = config.model.init(root.child(purpose::MODEL_INIT))?;
    let p_real = estimate_p_real(federation)?;
    let mut metrics = Vec::new();
    let mut clock = Clock::new(config);
    let t_len = topo.iterations_per_round;

    for round in 0..topo.rounds {
        let t = (round * t_len + 1) as u64;
        let results: Vec<(ModelParams, std::result::Result<GroupPick, usize>)> = federation
            .groups
            .par_iter_mut()
            .enumerate()
            .map(|(m, streams)| {
                let key = root.child(purpose::SAMPLER).path(&[t, m as u64]);
                let pick = pick_for_group(streams, t_len, config, Sampler::Random, &p_real, key)?;
                let model = match &pick {
                    Ok(p) => fedavg_round(&global, &mut borrow_selected(streams, &p.devices), t_len, topo.learning_rate)?,
                    Err(_) => global.clone(),
                };
                Ok((model, pick))
            })
            .collect::<Result<_>>()?;
        let mut models = Vec::with_capacity(results.len());
        let mut divergences = Vec::with_capacity(results.len());
        for (m, (model, pick)) in results.into_iter().enumerate() {
            match pick {
                Ok(p) => divergences.push(p.divergence),
                Err(eligible) => {
                    return Ok(SimOutcome {
                        protocol: Protocol::Fedavg,
                        status: SimStatus::InsufficientEligibleDevices {
                            round: round + 1,
                            iteration: 1,
                            group: m,
                            eligible,
                            needed: topo.select,
                        },
                        model: global,
                        metrics,
                        p_real,
                    })
                }
            }
            models.push(model);
        }
        global = external_sync(&models)?;
        let (accuracy, loss) = evaluate(&global, &federation.test)?;
        metrics.push(RoundMetrics {
            round: round + 1,
            accuracy,
            loss,
            divergence: divergences,
            selection_wall_ms: config.timing.then_some(0.0),
            simulated_time_s: clock.advance(Protocol::Fedavg, None)?,
        });
    }
    Ok(SimOutcome {
        protocol: Protocol::Fedavg,
        status: SimStatus::Completed,
        model: global,
        metrics,
        p_real,
    })
}

/// One JSON object per round.
pub fn write_metrics_jsonl<W: Write>(metrics: &[RoundMetrics], mut out: W) -> Result<()> {
    for m in metrics {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n").map_err(|e| Error::io("<metrics>", e))?;
    }
    Ok(())
}

/// Header plus one row summarizing the run.
pub fn write_summary_csv<W: Write>(outcome: &SimOutcome, target: Option<f64>, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::io("<summary>", std::io::Error::other(e));
    w.write_record([
        "protocol",
        "status",
        "rounds",
        "final_accuracy",
        "final_loss",
        "rounds_to_target",
        "total_selection_wall_ms",
    ])
    .map_err(csv_err)?;
    let last = outcome.final_metrics();
    let status = match outcome.status {
        SimStatus::Completed => "completed",
        SimStatus::InsufficientEligibleDevices { .. } => "insufficient_eligible_devices",
    };
    let protocol = match outcome.protocol {
        Protocol::Fedgs => "fedgs",
        Protocol::Fedavg => "fedavg",
    };
    let opt = |v: Option<String>| v.unwrap_or_default();
    w.write_record([
        protocol.to_string(),
        status.to_string(),
        outcome.metrics.len().to_string(),
        opt(last.map(|m| m.accuracy.to_string())),
        opt(last.map(|m| m.loss.to_string())),
        opt(target.and_then(|t| rounds_to_target(&outcome.metrics, t)).map(|r| r.to_string())),
        opt(last.and_then(|m| m.selection_wall_ms).map(|v| v.to_string())),
    ])
    .map_err(csv_err)?;
    w.flush().map_err(|e| Error::io("<summary>", e))
}
