//! Command-line front end: argument parsing, config loading, run
//! manifests and the four subcommands.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::datagen::{export_manifest, generate_federation, SynthConfig};
use crate::dist::divergence;
use crate::error::{Error, Result};
use crate::learn::save_checkpoint;
use crate::samplers::{
    bench_samplers, bench_stream, fuzz_problems, sample_gbp_cs, write_bench_csv, FuzzSpec, Sampler, SamplerSettings,
};
use crate::selection::{Initializer, SelectionProblem};
use crate::sim::{self, DataSource, Protocol, SimConfig, SimStatus};
use crate::timecost::{report, CostParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable that replaces the seed of any config.
pub const SEED_ENV: &str = "FEDGS_SEED";

#[derive(Debug, Parser)]
#[command(name = "fedgs", version, about = "Grouped federated learning simulator and client-selection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic federation and write it as a data manifest.
    GenData(GenDataArgs),
    /// Run a training simulation and write metrics.
    Simulate(SimulateArgs),
    /// Benchmark selection samplers on stored or fuzzed instances.
    SelectBench(BenchArgs),
    /// Evaluate the round time-cost model.
    Timecost(TimecostArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Synthetic data config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Manifest file to write.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Fedgs)]
    pub protocol: ProtocolArg,
    /// Output directory for metrics, summary, checkpoint and run manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads. Results do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Run seed; also reseeds synthetic data. Falls back to FEDGS_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// gbp-cs, gbp-cs:zero, gbp-cs:random, random, mc, brute or ga
    #[arg(long)]
    pub sampler: Option<Sampler>,
    /// mpinv, zero or random
    #[arg(long)]
    pub initializer: Option<Initializer>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Record selection wall time in the metrics.
    #[arg(long)]
    pub timing: bool,
    /// Validate the config and write the run manifest only.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolArg {
    Fedgs,
    Fedavg,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Fedgs => Protocol::Fedgs,
            ProtocolArg::Fedavg => Protocol::Fedavg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FuzzShape {
    /// F = 10, alpha = 20, L_sel = 5.
    Small,
    /// F = 62, alpha = 33, L_sel = 8.
    Large,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Instance file: a JSON array of problems or one problem per line.
    #[arg(long, conflicts_with = "fuzz", required_unless_present = "fuzz")]
    pub instances: Option<PathBuf>,
    /// Number of random instances to generate instead.
    #[arg(long)]
    pub fuzz: Option<usize>,
    #[arg(long, value_enum, default_value_t = FuzzShape::Small)]
    pub shape: FuzzShape,
    #[arg(long, value_delimiter = ',', default_value = "gbp-cs,random,mc,ga")]
    pub samplers: Vec<Sampler>,
    /// GBP-CS start points whose descent traces go to `--traces`.
    #[arg(long, value_delimiter = ',', default_value = "mpinv")]
    pub initializers: Vec<Initializer>,
    /// CSV file for GBP-CS descent traces.
    #[arg(long)]
    pub traces: Option<PathBuf>,
    /// Benchmark CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for fuzzing and randomized samplers. FEDGS_SEED overrides it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Leave wall-time columns empty so output is reproducible.
    #[arg(long)]
    pub no_timing: bool,
    /// Give up exhaustive search above this many subsets
    #[arg(long)]
    pub brute_cap: Option<u128>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct TimecostArgs {
    /// Cost parameters (JSON). Built-in defaults when omitted.
    #[arg(long)]
    pub params: Option<PathBuf>,
}

/// Exit status for an error: 2 for bad input, 1 for everything else.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidTopology(_)
        | Error::InvalidParams(_)
        | Error::InvalidDistribution(_)
        | Error::UnknownSampler(_)
        | Error::UnknownInitializer(_)
        | Error::MalformedManifest(_)
        | Error::MalformedInstance(_)
        | Error::Json(_) => EXIT_USAGE,
        _ => EXIT_RUNTIME,
    }
}

/// Record of an invocation, written before any heavy work starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub started_at_unix_s: u64,
    /// Fields replaced by flags or the environment, with their new values.
    pub overrides: BTreeMap<String, Value>,
    pub config: Value,
    pub config_hash: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, overrides: BTreeMap<String, Value>) -> Self {
        let started_at_unix_s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        RunManifest {
            tool: "fedgs".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            started_at_unix_s,
            overrides,
            config_hash: config_hash(&config),
            config,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Serializes with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    fn sorted(v: &Value) -> Value {
        match v {
            Value::Object(map) => {
                let ordered: BTreeMap<&String, Value> = map.iter().map(|(k, v)| (k, sorted(v))).collect();
                Value::Object(ordered.into_iter().map(|(k, v)| (k.clone(), v)).collect())
            }
            Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    sorted(value).to_string()
}

/// SHA-256 over `blob <len>\0<canonical json>`, hex encoded.
pub fn config_hash(value: &Value) -> String {
    let body = canonical_json(value);
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", body.len()).as_bytes());
    h.update(body.as_bytes());
    hex::encode(h.finalize())
}

/// Reads a JSON config; parse and schema problems become `InvalidConfig`
/// with the field or position in the message.
pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

/// Seed from the environment, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen_data(args: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let mut config: SynthConfig = load_config(&args.config)?;
    let mut overrides = BTreeMap::new();
    if let Some(seed) = env_seed()? {
        config.seed = seed;
        overrides.insert("seed".into(), Value::from(seed));
    }
    config.validate()?;
    RunManifest::new("gen-data", serde_json::to_value(&config)?, overrides).write(&sibling(&args.out, ".run.json"))?;

    let federation = generate_federation(&config)?;
    export_manifest(&federation, &args.out)?;
    let global = sim::estimate_p_real(&federation)?;
    let mut divs = federation
        .devices()
        .map(|d| divergence(d.local_distribution(), &global))
        .collect::<Result<Vec<_>>>()?;
    divs.sort_by(f64::total_cmp);
    let stdout_err = |e| Error::io("<stdout>", e);
    writeln!(out, "wrote {} devices in {} groups to {}", divs.len(), federation.groups.len(), args.out.display())
        .map_err(stdout_err)?;
    writeln!(
        out,
        "device divergence from global: min {:.4} median {:.4} max {:.4}",
        divs[0],
        divs[divs.len() / 2],
        divs[divs.len() - 1]
    )
    .map_err(stdout_err)?;
    Ok(())
}

/// Applies flag and environment overrides, resolves a relative manifest
/// path against the config's directory, and returns what was changed.
pub fn resolve_sim_config(args: &SimulateArgs) -> Result<(SimConfig, BTreeMap<String, Value>)> {
    let mut config: SimConfig = load_config(&args.config)?;
    let mut overrides = BTreeMap::new();
    let seed = match args.seed {
        Some(s) => Some(s),
        None => env_seed()?,
    };
    if let Some(seed) = seed {
        config.seed = seed;
        if let DataSource::Synthetic(s) = &mut config.data {
            s.seed = seed;
        }
        overrides.insert("seed".into(), Value::from(seed));
    }
    if let Some(r) = args.rounds {
        config.topology.rounds = r;
        overrides.insert("rounds".into(), Value::from(r));
    }
    if let Some(s) = args.sampler {
        config.sampler = s;
        overrides.insert("sampler".into(), Value::from(s.name()));
    }
    if let Some(i) = args.initializer {
        config.initializer = Some(i);
        overrides.insert("initializer".into(), Value::from(i.name()));
    }
    if let Some(eta) = args.learning_rate {
        config.topology.learning_rate = eta;
        overrides.insert("learning_rate".into(), Value::from(eta));
    }
    if args.timing {
        config.timing = true;
        overrides.insert("timing".into(), Value::from(true));
    }
    if let DataSource::Manifest(p) = &mut config.data {
        if p.is_relative() {
            if let Some(dir) = args.config.parent() {
                *p = dir.join(&*p);
            }
        }
    }
    config.validate()?;
    Ok((config, overrides))
}

/// Returns the simulation status so the caller can pick an exit code.
pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<SimStatus> {
    let (config, mut overrides) = resolve_sim_config(args)?;
    let protocol: Protocol = args.protocol.into();
    overrides.insert("protocol".into(), serde_json::to_value(protocol)?);
    overrides.insert("workers".into(), Value::from(args.workers));
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    RunManifest::new("simulate", serde_json::to_value(&config)?, overrides).write(&args.out.join("run_manifest.json"))?;
    if args.dry_run {
        return Ok(SimStatus::Completed);
    }

    let outcome = sim::run(&config, protocol, args.workers)?;
    let metrics_path = args.out.join("metrics.jsonl");
    let mut w = create(&metrics_path)?;
    sim::write_metrics_jsonl(&outcome.metrics, &mut w)?;
    w.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let summary_path = args.out.join("summary.csv");
    sim::write_summary_csv(&outcome, config.target_accuracy, create(&summary_path)?)?;
    save_checkpoint(&args.out.join("model.ckpt"), &outcome.model)?;

    let stdout_err = |e| Error::io("<stdout>", e);
    match outcome.final_metrics() {
        Some(m) => writeln!(out, "{} rounds, final accuracy {:.4}, loss {:.4}", m.round, m.accuracy, m.loss),
        None => writeln!(out, "no rounds run"),
    }
    .map_err(stdout_err)?;
    Ok(outcome.status)
}

/// Parses a JSON array of instances or one instance per non-blank line.
pub fn parse_instances(text: &str) -> Result<Vec<SelectionProblem>> {
    let trimmed = text.trim_start();
    let docs: Vec<String> = if trimmed.starts_with('[') {
        let values: Vec<Value> =
            serde_json::from_str(trimmed).map_err(|e| Error::MalformedInstance(format!("instance list: {e}")))?;
        values.iter().map(Value::to_string).collect()
    } else {
        text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect()
    };
    if docs.is_empty() {
        return Err(Error::MalformedInstance("no instances".into()));
    }
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            SelectionProblem::from_json(d).map_err(|e| match e {
                Error::MalformedInstance(msg) => Error::MalformedInstance(format!("instance {i}: {msg}")),
                other => other,
            })
        })
        .collect()
}

/// Writes one row per solver state: the start point, then every accepted
/// swap.
pub fn write_traces<W: Write>(
    problems: &[SelectionProblem],
    initializers: &[Initializer],
    settings: &SamplerSettings,
    seed: u64,
    timing: bool,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::io("<traces>", io::Error::other(e));
    w.write_record(["instance_id", "initializer", "step", "objective", "divergence", "elapsed_ms", "enter", "leave"])
        .map_err(csv_err)?;
    let ms = |d: std::time::Duration| if timing { format!("{:.6}", d.as_secs_f64() * 1e3) } else { String::new() };
    for (i, problem) in problems.iter().enumerate() {
        for &init in initializers {
            let sampler = Sampler::GbpCs(init);
            let mut rng = bench_stream(seed, i, sampler).rng();
            let (_, trace) = sample_gbp_cs(problem, init, settings.max_steps, &mut rng)?;
            w.write_record([
                i.to_string(),
                init.name().to_string(),
                "0".into(),
                trace.initial_objective.to_string(),
                problem.divergence_of(trace.initial_objective).to_string(),
                ms(trace.init_elapsed),
                String::new(),
                String::new(),
            ])
            .map_err(csv_err)?;
            for (s, step) in trace.steps.iter().enumerate() {
                w.write_record([
                    i.to_string(),
                    init.name().to_string(),
                    (s + 1).to_string(),
                    step.objective.to_string(),
                    problem.divergence_of(step.objective).to_string(),
                    ms(step.elapsed),
                    step.enter.to_string(),
                    step.leave.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<traces>", e))
}

pub fn cmd_select_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let seed = env_seed()?.unwrap_or(args.seed);
    let mut settings = SamplerSettings::default();
    if let Some(cap) = args.brute_cap {
        settings.brute_cap = cap;
    }
    let spec = match args.shape {
        FuzzShape::Small => FuzzSpec::small(),
        FuzzShape::Large => FuzzSpec::large(),
    };
    let config = serde_json::json!({
        "instances": args.instances,
        "fuzz": args.fuzz,
        "fuzz_spec": if args.fuzz.is_some() { Some(&spec) } else { None },
        "samplers": args.samplers.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "initializers": args.initializers.iter().map(|i| i.name()).collect::<Vec<_>>(),
        "seed": seed,
        "timing": !args.no_timing,
        "settings": settings,
    });
    let mut overrides = BTreeMap::new();
    if seed != args.seed {
        overrides.insert("seed".into(), Value::from(seed));
    }
    RunManifest::new("select-bench", config, overrides).write(&sibling(&args.out, ".run.json"))?;

    let problems = match (&args.instances, args.fuzz) {
        (Some(path), _) => parse_instances(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?,
        (None, Some(n)) => fuzz_problems(&spec, seed, n)?,
        (None, None) => return Err(Error::InvalidConfig("need --instances or --fuzz".into())),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let rows = pool.install(|| bench_samplers(&problems, &args.samplers, &settings, seed))?;
    write_bench_csv(&rows, create(&args.out)?, !args.no_timing)?;
    if let Some(path) = &args.traces {
        write_traces(&problems, &args.initializers, &settings, seed, !args.no_timing, create(path)?)?;
    }
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    writeln!(out, "{} instances x {} samplers written to {} ({failed} failed cells)", problems.len(), args.samplers.len(), args.out.display())
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(())
}

pub fn cmd_timecost(args: &TimecostArgs, out: &mut dyn Write) -> Result<()> {
    let params: CostParams = match &args.params {
        Some(p) => load_config(p)?,
        None => CostParams::defaults(),
    };
    let r = report(&params)?;
    let text = serde_json::to_string_pretty(&r)?;
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, out).map(|_| EXIT_OK),
        Command::Simulate(a) => cmd_simulate(a, out).map(|status| match status {
            SimStatus::Completed => EXIT_OK,
            s => {
                let _ = writeln!(err, "run stopped early: {}", serde_json::to_string(&s).unwrap_or_default());
                EXIT_RUNTIME
            }
        }),
        Command::SelectBench(a) => cmd_select_bench(a, out).map(|_| EXIT_OK),
        Command::Timecost(a) => cmd_timecost(a, out).map(|_| EXIT_OK),
    };
    result.unwrap_or_else(|e| {
        let _ = writeln!(err, "error: {e}");
        exit_code(&e)
    })
}
