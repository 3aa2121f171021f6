//! Acceptance suite. Runs every criterion in sequence (timings are not
//! disturbed by sibling tests), prints one PASS/FAIL line each and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use fedgs::datagen::{generate_federation, SynthConfig};
use fedgs::dist::FederationTopology;
use fedgs::learn::{local_step, loss_and_grad, Batch, ModelParams, ModelSpec};
use fedgs::rng::StreamKey;
use fedgs::samplers::{
    fuzz_problems, sample_brute, sample_gbp_cs, sample_genetic, sample_monte_carlo, sample_random, FuzzSpec, GaParams,
};
use fedgs::selection::{Initializer, SelectionProblem};
use fedgs::sim::{self, DataSource, Protocol, RoundMetrics, SimConfig};
use fedgs::samplers::{Sampler, SamplerSettings};
use fedgs::timecost::{efficiency_condition, total_fedavg, total_fedgs, CostParams};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `||A x - y||` with the selection given as column indices.
fn distance(p: &SelectionProblem, cols: &[usize]) -> f64 {
    (0..p.classes())
        .map(|f| {
            let r = cols.iter().map(|&j| p.a(f, j) as f64).sum::<f64>() - p.target()[f];
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Exhaustive minimum over all `L_sel`-subsets by bitmask enumeration.
fn enumerate_optimum(p: &SelectionProblem) -> f64 {
    let n = p.candidates();
    assert!(n < 32);
    let mut best = f64::INFINITY;
    let mut cols = Vec::with_capacity(p.select());
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != p.select() {
            continue;
        }
        cols.clear();
        cols.extend((0..n).filter(|&j| mask >> j & 1 == 1));
        best = best.min(distance(p, &cols));
    }
    best
}

fn selected(x: &[bool]) -> Vec<usize> {
    (0..x.len()).filter(|&j| x[j]).collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let problems = fuzz_problems(&FuzzSpec::small(), 101, 100).map_err(|e| e.to_string())?;
    let (mut near_opt, mut beats_median) = (0, 0);
    for (i, p) in problems.iter().enumerate() {
        let key = StreamKey::root(1).path(&[i as u64]);
        let (gbp, _) = sample_gbp_cs(p, Initializer::Mpinv, None, &mut key.child(0).rng()).unwrap();
        let opt = enumerate_optimum(p);
        let draws: Vec<f64> = (0..100)
            .map(|k| sample_random(p, &mut key.path(&[1, k]).rng()).unwrap().objective)
            .collect();
        if gbp.objective <= 1.5 * opt + 1e-9 {
            near_opt += 1;
        }
        if gbp.objective <= median(draws) {
            beats_median += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        near_opt >= 90 && beats_median >= 95 && secs < 60.0,
        format!("within 1.5x of optimum on {near_opt}/100, at or below random median on {beats_median}/100, {secs:.1}s"),
    )
}

fn criterion_2() -> Outcome {
    let problems = fuzz_problems(&FuzzSpec::large(), 202, 20).map_err(|e| e.to_string())?;
    let (mut gbp, mut ga, mut mc, mut rnd) = (vec![], vec![], vec![], vec![]);
    for (i, p) in problems.iter().enumerate() {
        let key = StreamKey::root(2).path(&[i as u64]);
        let div = |o: f64| p.divergence_of(o);
        gbp.push(div(sample_gbp_cs(p, Initializer::Mpinv, None, &mut key.child(0).rng()).unwrap().0.objective));
        ga.push(div(sample_genetic(p, &mut key.child(1).rng(), GaParams::default()).unwrap().objective));
        mc.push(div(sample_monte_carlo(p, &mut key.child(2).rng(), 1000).unwrap().objective));
        rnd.push(div(sample_random(p, &mut key.child(3).rng()).unwrap().objective));
    }
    let mut brute = vec![];
    let mut worst_gap = 0.0f64;
    for (i, p) in problems.iter().take(5).enumerate() {
        let b = p.divergence_of(sample_brute(p, 20_000_000).map_err(|e| e.to_string())?.objective);
        worst_gap = worst_gap.max(gbp[i] - b);
        brute.push(b);
    }
    let (m_brute, m_gbp5) = (mean(&brute), mean(&gbp[..5]));
    let (m_gbp, m_ga, m_mc, m_rnd) = (mean(&gbp), mean(&ga), mean(&mc), mean(&rnd));
    let ok = m_brute <= m_gbp5 && m_gbp <= m_ga && m_ga <= m_mc && m_mc < m_rnd && worst_gap <= 0.015;
    check(
        ok,
        format!(
            "means brute {m_brute:.4} (gbp-cs on same 5: {m_gbp5:.4}), gbp-cs {m_gbp:.4}, ga {m_ga:.4}, mc {m_mc:.4}, random {m_rnd:.4}; worst gbp-cs gap to brute {worst_gap:.4}"
        ),
    )
}

fn criterion_3() -> Outcome {
    let problems = fuzz_problems(&FuzzSpec::small(), 303, 50).map_err(|e| e.to_string())?;
    let (mut mp, mut zero, mut rnd) = (vec![], vec![], vec![]);
    let mut random_worse = 0;
    for (i, p) in problems.iter().enumerate() {
        let key = StreamKey::root(3).path(&[i as u64]);
        let run = |init| sample_gbp_cs(p, init, None, &mut key.rng()).unwrap().0.objective;
        let (a, b, c) = (run(Initializer::Mpinv), run(Initializer::Zero), run(Initializer::Random));
        if c >= a && c >= b {
            random_worse += 1;
        }
        mp.push(a);
        zero.push(b);
        rnd.push(c);
    }
    let (m_mp, m_zero) = (mean(&mp), mean(&zero));
    let rel = (m_mp - m_zero).abs() / m_mp.max(m_zero);
    check(
        rel <= 0.10 && random_worse >= 35,
        format!(
            "mean final objective mpinv {m_mp:.3}, zero {m_zero:.3} ({:.1}% apart), random {:.3}; random at or above both on {random_worse}/50",
            100.0 * rel,
            mean(&rnd)
        ),
    )
}

fn criterion_4() -> Outcome {
    let problems = fuzz_problems(&FuzzSpec::large(), 404, 100).map_err(|e| e.to_string())?;
    let mut times = Vec::with_capacity(problems.len());
    for (i, p) in problems.iter().enumerate() {
        let mut rng = StreamKey::root(4).child(i as u64).rng();
        let start = Instant::now();
        let (r, _) = sample_gbp_cs(p, Initializer::Mpinv, None, &mut rng).unwrap();
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(r);
    }
    let med = median(times.clone());
    check(med < 50.0, format!("median GBP-CS latency {med:.3} ms at F=62, alpha=33 (max {:.3} ms)", times.iter().cloned().fold(0.0, f64::max)))
}

fn criterion_5() -> Outcome {
    let mut problems = fuzz_problems(&FuzzSpec::small(), 505, 100).map_err(|e| e.to_string())?;
    problems.extend(fuzz_problems(&FuzzSpec::large(), 506, 20).map_err(|e| e.to_string())?);
    let (mut steps, mut bad_steps, mut worst) = (0usize, 0usize, 0.0f64);
    for (i, p) in problems.iter().enumerate() {
        for init in Initializer::ALL {
            let mut rng = StreamKey::root(5).path(&[i as u64, init as u64]).rng();
            let (r, trace) = sample_gbp_cs(p, init, None, &mut rng).unwrap();
            let mut prev = trace.initial_objective;
            for s in &trace.steps {
                steps += 1;
                if !(s.objective < prev) {
                    bad_steps += 1;
                }
                prev = s.objective;
            }
            let recomputed = distance(p, &selected(&r.x));
            worst = worst.max((recomputed - trace.tracked_objective).abs()).max((recomputed - r.objective).abs());
        }
    }
    check(
        bad_steps == 0 && worst <= 1e-9,
        format!("{steps} accepted steps, {bad_steps} non-decreasing; worst tracked-vs-recomputed gap {worst:.2e}"),
    )
}

fn family(hidden: &[usize]) -> &'static str {
    if hidden.is_empty() {
        "softmax"
    } else {
        "mlp"
    }
}

fn criterion_6() -> Outcome {
    let mut details = vec![];
    let mut worst = 0.0f64;
    for hidden in [vec![], vec![6]] {
        let synth = SynthConfig {
            classes: 4,
            dim: 5,
            devices_per_group: 6,
            groups: 1,
            batches_per_device: 2,
            batch_size: 10,
            concentration: 0.4,
            separation: 3.0,
            noise: 1.0,
            seed: 66,
            regenerate: false,
            test_size: 50,
        };
        let config = SimConfig {
            topology: FederationTopology {
                devices_per_group: vec![6],
                select: 6,
                presample: 2,
                classes: 4,
                iterations_per_round: 1,
                rounds: 1,
                batch_size: 10,
                learning_rate: 0.3,
            },
            model: ModelSpec {
                input_dim: 5,
                classes: 4,
                hidden: hidden.clone(),
            },
            data: DataSource::Synthetic(synth.clone()),
            sampler: Sampler::GbpCs(Initializer::Mpinv),
            initializer: None,
            seed: 6,
            sampler_settings: SamplerSettings::default(),
            timing: false,
            cost: None,
            target_accuracy: None,
        };
        let federation = generate_federation(&synth).map_err(|e| e.to_string())?;
        let union = federation.groups[0]
            .iter()
            .map(|s| s.queued().next().unwrap().clone())
            .reduce(|a, b| a.concat(&b).unwrap())
            .unwrap();
        let init = config.model.init(StreamKey::root(6).child(fedgs::rng::purpose::MODEL_INIT)).unwrap();
        let central = local_step(&init, &union, 0.3).unwrap();
        let out = sim::run_with(&config, federation, Protocol::Fedgs, 1).map_err(|e| e.to_string())?;
        let num: f64 = out.model.values().iter().zip(central.values()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = central.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = num / den;
        worst = worst.max(rel);
        details.push(format!("{} {rel:.2e}", family(&hidden)));
    }
    check(worst < 1e-10, format!("relative error vs centralized step: {}", details.join(", ")))
}

fn criterion_7() -> Outcome {
    let h = 1e-5;
    let mut details = vec![];
    let mut all_ok = true;
    for hidden in [vec![], vec![5]] {
        let mut worst = 0.0f64;
        for pair in 0..50u64 {
            let key = StreamKey::root(7).path(&[hidden.len() as u64, pair]);
            let mut rng = key.rng();
            let (dim, classes, n) = (rng.random_range(1..6), rng.random_range(2..6), rng.random_range(1..8));
            let spec = ModelSpec {
                input_dim: dim,
                classes,
                hidden: hidden.clone(),
            };
            let layers = spec.layers();
            let count: usize = layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            let values: Vec<f64> = (0..count).map(|_| rng.random_range(-1.0..1.0)).collect();
            let params = ModelParams::new(layers.clone(), values.clone()).unwrap();
            let features = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let batch = Batch::new(dim, features, labels).unwrap();
            let (_, grad) = loss_and_grad(&params, &batch).unwrap();
            let fd: Vec<f64> = (0..count)
                .map(|i| {
                    let shifted = |delta: f64| {
                        let mut v = values.clone();
                        v[i] += delta;
                        loss_and_grad(&ModelParams::new(layers.clone(), v).unwrap(), &batch).unwrap().0
                    };
                    (shifted(h) - shifted(-h)) / (2.0 * h)
                })
                .collect();
            let diff = grad.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = grad.iter().map(|v| v * v).sum::<f64>().sqrt().max(fd.iter().map(|v| v * v).sum::<f64>().sqrt()).max(1e-12);
            worst = worst.max(diff / scale);
        }
        all_ok &= worst < 1e-5;
        details.push(format!("{} worst relative error {worst:.2e}", family(&hidden)));
    }
    check(all_ok, format!("50 pairs per family: {}", details.join(", ")))
}

fn heterogeneity_config(seed: u64) -> SimConfig {
    let text = include_str!("../../../configs/sim_heterogeneity.json");
    let mut c: SimConfig = serde_json::from_str(text).unwrap();
    c.seed = seed;
    if let DataSource::Synthetic(s) = &mut c.data {
        s.seed = 1000 + seed;
    }
    c
}

fn mean_curve(runs: &[Vec<RoundMetrics>]) -> Vec<f64> {
    (0..runs[0].len())
        .map(|r| runs.iter().map(|m| m[r].accuracy).sum::<f64>() / runs.len() as f64)
        .collect()
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let (mut gs, mut avg) = (vec![], vec![]);
    for seed in 0..5 {
        let c = heterogeneity_config(seed);
        let a = sim::run_fedgs(&c, 1).map_err(|e| e.to_string())?;
        let b = sim::run_fedavg(&c, 1).map_err(|e| e.to_string())?;
        if a.metrics.len() != 60 || b.metrics.len() != 60 {
            return Err(format!("seed {seed}: runs stopped early ({:?}, {:?})", a.status, b.status));
        }
        gs.push(a.metrics);
        avg.push(b.metrics);
    }
    let (gs, avg) = (mean_curve(&gs), mean_curve(&avg));
    let (final_gs, final_avg) = (gs[59], avg[59]);
    let reach = gs.iter().position(|&a| a >= final_avg).map(|r| r + 1);
    let secs = start.elapsed().as_secs_f64();
    let ok = final_gs >= final_avg + 0.02 && reach.is_some_and(|r| r as f64 <= 0.7 * 60.0) && secs < 600.0;
    check(
        ok,
        format!(
            "mean final accuracy fedgs {:.2}% vs fedavg {:.2}% (+{:.2} points); fedgs reaches {:.2}% in round {}; {secs:.0}s",
            100.0 * final_gs,
            100.0 * final_avg,
            100.0 * (final_gs - final_avg),
            100.0 * final_avg,
            reach.map_or("never".to_string(), |r| r.to_string())
        ),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = StreamKey::root(9).rng();
    let mut disagreements = 0;
    let (mut faster, mut slower) = (0, 0);
    for _ in 0..10_000 {
        let b_ext = 10f64.powf(rng.random_range(5.0..8.0));
        let b_int = b_ext * 10f64.powf(rng.random_range(-1.0..2.5));
        let gamma = rng.random_range(0.5..100.0);
        let p = CostParams {
            model_bits: 10f64.powf(rng.random_range(4.0..9.0)),
            groups: rng.random_range(1..30),
            selected: rng.random_range(2..30),
            iterations: rng.random_range(1..200),
            b_up_ext: b_ext,
            b_down_ext: b_ext,
            b_up_int: b_int,
            b_down_int: b_int,
            gamma_top: gamma,
            gamma_bs: gamma,
            gamma_device: gamma,
            t_comp: rng.random_range(0.0001..1.0),
            t_select: 0.0,
        };
        let gs_faster = total_fedgs(&p).unwrap() < total_fedavg(&p).unwrap();
        let cond = efficiency_condition(p.iterations, p.groups, p.selected, b_int, b_ext).unwrap();
        if gs_faster != cond.holds {
            disagreements += 1;
        }
        if gs_faster {
            faster += 1;
        } else {
            slower += 1;
        }
    }
    let lhs = efficiency_condition(50, 10, 10, 10.0, 1.0).unwrap().lhs;
    let exact = 500.0 / 90.0;
    check(
        disagreements == 0 && (lhs - exact).abs() <= 1e-9,
        format!("{disagreements} disagreements in 10000 draws ({faster} favour grouping, {slower} not); defaults lhs {lhs:.10}"),
    )
}

fn criterion_10() -> Outcome {
    let text = include_str!("../../../configs/sim_small.json");
    let config: SimConfig = serde_json::from_str(text).unwrap();
    let mut details = vec![];
    let mut ok = true;
    for protocol in [Protocol::Fedgs, Protocol::Fedavg] {
        let outputs: Vec<Vec<u8>> = [1, 4, 16]
            .iter()
            .map(|&w| {
                let out = sim::run(&config, protocol, w).unwrap();
                let mut buf = Vec::new();
                sim::write_metrics_jsonl(&out.metrics, &mut buf).unwrap();
                buf
            })
            .collect();
        let same = outputs.windows(2).all(|w| w[0] == w[1]);
        ok &= same && !outputs[0].is_empty();
        details.push(format!("{protocol:?} {} bytes {}", outputs[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    check(ok, format!("metrics for 1, 4 and 16 workers: {}", details.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("solver quality vs exact optimum", criterion_1),
        ("sampler ordering on large instances", criterion_2),
        ("initializer comparison", criterion_3),
        ("selection latency", criterion_4),
        ("descent property", criterion_5),
        ("one-step centralization equivalence", criterion_6),
        ("gradient correctness", criterion_7),
        ("end-to-end heterogeneity robustness", criterion_8),
        ("time-cost consistency", criterion_9),
        ("determinism across worker counts", criterion_10),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let total = Instant::now();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = fmt_secs(start.elapsed());
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{took}]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail} [{took}]");
            }
        }
    }
    println!("acceptance: {failed} failed, total {}", fmt_secs(total.elapsed()));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn fmt_secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}
