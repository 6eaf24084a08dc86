//! Acceptance suite: one line per criterion, nonzero exit if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use dynrep::allocation::{classify_and_allocate, misprediction_report, RequestType};
use dynrep::engine::run;
use dynrep::generators::{
    ingest_trace, make_allocation_walkthrough, make_consistency_tight, make_robustness_tight,
    make_wang_counterexample, random_trace, run_adversary, synthesize_predictions, IngestConfig,
};
use dynrep::offline::{brute_force_optimal, optimal_offline_cost, optl};
use dynrep::policies::{AdaptivePolicy, AdaptivePolicyConfig, PredictivePolicy, WangPolicy};
use dynrep::{approx_eq, ground_truth_predictions, CostParams, Prediction, PredictionStream, RequestTrace};
use dynrep_cli::{run_experiment, ExperimentGrid, Normalize, PolicyKind, ResultRow};

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn within_pct(value: f64, target: f64, pct: f64) -> bool {
    (value - target).abs() <= target * pct / 100.0
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

/// Shared random instances: n ≤ 5, up to 200 requests, gaps on several
/// scales around λ.
struct BoundInstance {
    trace: RequestTrace,
    params: CostParams,
    opt: f64,
}

const BOUND_LAMBDA: f64 = 10.0;
const BOUND_ALPHAS: [f64; 3] = [0.25, 0.5, 1.0];

fn bound_instances() -> Vec<BoundInstance> {
    (0..200u64)
        .map(|seed| {
            let n = 1 + (seed % 5) as usize;
            let m = 1 + ((seed * 37) % 200) as usize;
            let trace = random_trace(n, m, BOUND_LAMBDA, 1000 + seed).unwrap();
            let params = CostParams::uniform(BOUND_LAMBDA, n).unwrap();
            let opt = optimal_offline_cost(&trace, &params).unwrap();
            BoundInstance { trace, params, opt }
        })
        .collect()
}

/// Arbitrary predictions for instance `i`: synthesized at a spread of
/// accuracies.
fn synthesized(inst: &BoundInstance, i: usize) -> PredictionStream {
    let accuracy = [0.0, 0.25, 0.5, 0.75, 0.9][i % 5];
    synthesize_predictions(&inst.trace, &inst.params, accuracy, 77 + i as u64).unwrap()
}

fn online(trace: &RequestTrace, preds: &PredictionStream, alpha: f64, params: &CostParams) -> f64 {
    let policy = PredictivePolicy::new(alpha, params.lambda()).unwrap();
    run(trace, preds, policy, params).unwrap().1.total
}

fn criterion_1() -> Outcome {
    let (lambda, eps, m) = (100.0, 0.01, 2000);
    let mut failures = Vec::new();
    let mut details = Vec::new();
    for alpha in [0.2, 0.5, 1.0] {
        let ((cost, opt), elapsed) = timed(|| {
            let (trace, preds) = make_robustness_tight(alpha, lambda, eps, m).unwrap();
            let params = CostParams::uniform(lambda, 2).unwrap();
            (online(&trace, &preds, alpha, &params), optimal_offline_cost(&trace, &params).unwrap())
        });
        let expected = (m - 1) as f64 * (alpha * lambda + lambda) + lambda;
        let ratio = cost / opt;
        details.push(format!("α={alpha} cost={cost} ratio={ratio:.5} ({elapsed:.2?})"));
        if !approx_eq(cost, expected, 1e-9) {
            failures.push(format!("α={alpha}: cost {cost} != (m−1)(αλ+λ)+λ = {expected}"));
        }
        if !within_pct(ratio, 1.0 + 1.0 / alpha, 1.0) {
            failures.push(format!("α={alpha}: ratio {ratio} not within 1% of {}", 1.0 + 1.0 / alpha));
        }
        if elapsed >= Duration::from_secs(5) {
            failures.push(format!("α={alpha}: took {elapsed:?}"));
        }
    }
    verdict(failures, details)
}

fn criterion_2() -> Outcome {
    let (lambda, eps, cycles) = (10.0, 1e-3, 200);
    let mut failures = Vec::new();
    let mut details = Vec::new();
    let (_, elapsed) = timed(|| {
        for alpha in [0.2, 0.5, 1.0] {
            let (trace, preds) = make_consistency_tight(alpha, lambda, eps, cycles).unwrap();
            let params = CostParams::uniform(lambda, 2).unwrap();
            if preds != ground_truth_predictions(&trace, &params) {
                failures.push(format!("α={alpha}: predictions are not correct"));
            }
            let cost = online(&trace, &preds, alpha, &params);
            let opt = optimal_offline_cost(&trace, &params).unwrap();
            let per_cycle = cost / cycles as f64;
            let ratio = cost / opt;
            let target = (5.0 + alpha) / 3.0;
            details.push(format!("α={alpha} per-cycle={per_cycle} ratio={ratio:.5}"));
            if !approx_eq(per_cycle, 5.0 * lambda + alpha * lambda, 1e-9) {
                failures.push(format!("α={alpha}: per-cycle cost {per_cycle} != {}", 5.0 * lambda + alpha * lambda));
            }
            if !within_pct(ratio, target, 1.0) {
                failures.push(format!("α={alpha}: ratio {ratio} not within 1% of {target}"));
            }
        }
    });
    details.push(format!("{elapsed:.2?}"));
    if elapsed >= Duration::from_secs(5) {
        failures.push(format!("took {elapsed:?}"));
    }
    verdict(failures, details)
}

fn criterion_3() -> Outcome {
    let (lambda, eps, m) = (100.0, 0.01, 2000);
    let ((cost, opt), elapsed) = timed(|| {
        let trace = make_wang_counterexample(lambda, eps, m).unwrap();
        let params = CostParams::uniform(lambda, 2).unwrap();
        let preds = PredictionStream::uniform(trace.requests().len(), Prediction::BeyondLambda);
        let cost = run(&trace, &preds, WangPolicy::new(&params).unwrap(), &params).unwrap().1.total;
        (cost, optimal_offline_cost(&trace, &params).unwrap())
    });
    let floor = (m - 2) as f64 * 5.0 * lambda;
    let ratio = cost / opt;
    let mut failures = Vec::new();
    if cost < floor {
        failures.push(format!("cost {cost} < (m−2)·5λ = {floor}"));
    }
    if !within_pct(ratio, 2.5, 2.0) {
        failures.push(format!("ratio {ratio} not within 2% of 2.5"));
    }
    if elapsed >= Duration::from_secs(10) {
        failures.push(format!("took {elapsed:?}"));
    }
    verdict(failures, vec![format!("cost={cost} floor={floor} ratio={ratio:.5} ({elapsed:.2?})")])
}

fn criterion_4(instances: &[BoundInstance]) -> Outcome {
    let mut failures = Vec::new();
    let (mut worst_a, mut worst_b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (i, inst) in instances.iter().enumerate() {
        let arbitrary = synthesized(inst, i);
        let truth = ground_truth_predictions(&inst.trace, &inst.params);
        for alpha in BOUND_ALPHAS {
            let a = online(&inst.trace, &arbitrary, alpha, &inst.params) / inst.opt;
            let b = online(&inst.trace, &truth, alpha, &inst.params) / inst.opt;
            worst_a = worst_a.max(a - (1.0 + 1.0 / alpha));
            worst_b = worst_b.max(b - (5.0 + alpha) / 3.0);
            if a > 1.0 + 1.0 / alpha + 1e-6 {
                failures.push(format!("instance {i} α={alpha}: robustness ratio {a}"));
            }
            if b > (5.0 + alpha) / 3.0 + 1e-6 {
                failures.push(format!("instance {i} α={alpha}: consistency ratio {b}"));
            }
        }
    }
    verdict(
        failures,
        vec![format!(
            "{} runs; max ratio−bound: arbitrary {worst_a:.4}, perfect {worst_b:.4}",
            instances.len() * BOUND_ALPHAS.len() * 2
        )],
    )
}

fn criterion_5(instances: &[BoundInstance]) -> Outcome {
    let mut failures = Vec::new();
    for seed in 0..500u64 {
        let n = 1 + (seed % 3) as usize;
        let m = 1 + ((seed * 7) % 10) as usize;
        let lambda = [1.0, 10.0, 100.0][(seed / 3 % 3) as usize];
        let trace = random_trace(n, m, lambda, 5000 + seed).unwrap();
        let params = CostParams::uniform(lambda, n).unwrap();
        let dp = optimal_offline_cost(&trace, &params).unwrap();
        let brute = brute_force_optimal(&trace, &params).unwrap().cost;
        if !approx_eq(dp, brute, 1e-9) {
            failures.push(format!("seed {seed}: dp {dp} != brute {brute}"));
        }
    }
    for (i, inst) in instances.iter().enumerate() {
        let lower = optl(&inst.trace, &inst.params);
        if lower > inst.opt * (1.0 + 1e-12) {
            failures.push(format!("instance {i}: optl {lower} > opt {}", inst.opt));
        }
    }
    verdict(failures, vec![format!("500 small instances; optl on {} bound instances", instances.len())])
}

fn criterion_6(instances: &[BoundInstance]) -> Outcome {
    let mut failures = Vec::new();
    let mut runs = 0;
    for (i, inst) in instances.iter().enumerate() {
        let streams = [synthesized(inst, i), ground_truth_predictions(&inst.trace, &inst.params)];
        for preds in &streams {
            for alpha in BOUND_ALPHAS {
                let policy = PredictivePolicy::new(alpha, BOUND_LAMBDA).unwrap();
                let (log, report) = run(&inst.trace, preds, policy, &inst.params).unwrap();
                runs += 1;
                match classify_and_allocate(&log, &inst.trace, preds, &inst.params, alpha) {
                    Ok(table) if approx_eq(table.total(), report.total, 1e-9) => {}
                    Ok(table) => failures.push(format!(
                        "instance {i} α={alpha}: allocated {} vs accounted {}",
                        table.total(),
                        report.total
                    )),
                    Err(e) => failures.push(format!("instance {i} α={alpha}: {e}")),
                }
            }
        }
    }

    let (trace, preds, alpha, lambda) = make_allocation_walkthrough();
    let params = CostParams::uniform(lambda, trace.n()).unwrap();
    let (log, _) = run(&trace, &preds, PredictivePolicy::new(alpha, lambda).unwrap(), &params).unwrap();
    let table = classify_and_allocate(&log, &trace, &preds, &params, alpha).unwrap();
    let expected = [
        (4, RequestType::Type2),
        (5, RequestType::Type1),
        (6, RequestType::Type2),
        (7, RequestType::Type3),
        (8, RequestType::Type1),
        (9, RequestType::Type4),
    ];
    for (id, kind) in expected {
        if table.kind_of(id) != Some(kind) {
            failures.push(format!("walkthrough r{id}: {:?}, expected {kind}", table.kind_of(id)));
        }
    }
    let labels: Vec<String> = (1..trace.requests().len())
        .map(|id| table.kind_of(id).map(|k| k.to_string()).unwrap_or_default())
        .collect();
    verdict(failures, vec![format!("{runs} runs; walkthrough types {}", labels.join(" "))])
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut details = Vec::new();
    let (_, elapsed) = timed(|| {
        for lambda in [1000.0, 10000.0] {
            // Gaps of the robustness example at α = 0.1; every prediction wrong.
            let (trace, _) = make_robustness_tight(0.1, lambda, 1e-4 * lambda, 2000).unwrap();
            let params = CostParams::uniform(lambda, 2).unwrap();
            let preds = synthesize_predictions(&trace, &params, 0.0, 1).unwrap();
            let opt = optimal_offline_cost(&trace, &params).unwrap();
            let plain = online(&trace, &preds, 0.1, &params) / opt;
            for beta in [0.1, 1.0] {
                let cfg = AdaptivePolicyConfig::new(0.1, beta).unwrap();
                let policy = AdaptivePolicy::new(cfg, &params);
                let adaptive = run(&trace, &preds, policy, &params).unwrap().1.total / opt;
                details.push(format!("λ={lambda} β={beta}: adaptive {adaptive:.4} predictive {plain:.4}"));
                if adaptive > 2.0 + beta + 0.05 {
                    failures.push(format!("λ={lambda} β={beta}: adaptive ratio {adaptive} > {}", 2.0 + beta + 0.05));
                }
                if plain <= 2.0 + beta {
                    failures.push(format!("λ={lambda} β={beta}: predictive ratio {plain} ≤ {}", 2.0 + beta));
                }
            }
        }
    });
    details.push(format!("{elapsed:.2?}"));
    if elapsed >= Duration::from_secs(30) {
        failures.push(format!("took {elapsed:?}"));
    }
    verdict(failures, details)
}

fn criterion_8() -> Outcome {
    let mut failures = Vec::new();
    let mut details = Vec::new();
    let (lambda, eps, m) = (100.0, 0.01, 1000);
    for alpha in [0.3, 0.7] {
        let out = run_adversary(PredictivePolicy::new(alpha, lambda).unwrap(), lambda, eps, m).unwrap();
        let params = CostParams::uniform(lambda, 2).unwrap();
        if out.predictions != ground_truth_predictions(&out.trace, &params) {
            failures.push(format!("α={alpha}: adversary predictions are not perfect"));
        }
        let ratio = out.report.total / optimal_offline_cost(&out.trace, &params).unwrap();
        details.push(format!("adversary α={alpha} ratio {ratio:.4}"));
        if ratio < 1.45 {
            failures.push(format!("α={alpha}: adversary ratio {ratio} < 1.45"));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("access.log");
    common::write_access_log(&log, 2600, 2024);
    let mut config = IngestConfig::new(&log, 10, 0);
    config.limit = Some(2000);
    let trace = ingest_trace(&config).unwrap();
    let grid = ExperimentGrid {
        policies: vec![PolicyKind::Predictive],
        alphas: vec![0.01, 1.0],
        lambdas: vec![10.0, 100.0, 1000.0, 10000.0],
        accuracies: (0..=10).map(|k| k as f64 / 10.0).collect(),
        trials: 1,
        seed: 0,
        beta: 0.5,
        warmup: AdaptivePolicyConfig::DEFAULT_WARMUP,
        normalize: Normalize::Dp,
    };
    let mut rows: Vec<ResultRow> = Vec::new();
    run_experiment(&trace, &grid, |row| {
        rows.push(row.clone());
        Ok(())
    })
    .unwrap();
    let costs = |alpha: f64, lambda: f64| -> Vec<(f64, f64, f64)> {
        rows.iter()
            .filter(|r| r.alpha == alpha && r.lambda == lambda)
            .map(|r| {
                let c = r.outcome.as_ref().expect("cell runs");
                (r.accuracy, c.online_cost, c.ratio)
            })
            .collect()
    };
    let at = |alpha: f64, accuracy: f64| costs(alpha, 1000.0).iter().find(|c| c.0 == accuracy).unwrap().2;
    let (low, high) = (at(0.01, 1.0), at(1.0, 1.0));
    details.push(format!(
        "{}-request prefix: ratio(α=0.01, acc=1, λ=1000) {low:.4} vs α=1 {high:.4}",
        trace.last_index()
    ));
    if low >= high {
        failures.push(format!("ratio at α=0.01 ({low}) not below α=1 ({high})"));
    }
    for lambda in &grid.lambdas {
        let row = costs(1.0, *lambda);
        if row.iter().any(|c| c.1 != row[0].1) {
            failures.push(format!("λ={lambda}: α=1 costs vary across accuracies"));
        }
    }
    verdict(failures, details)
}

fn criterion_9(instances: &[BoundInstance]) -> Outcome {
    let mut failures = Vec::new();
    let mut corrupted = 0;
    let (mut with_terminal, mut within_extended) = (0, 0);
    for (i, inst) in instances.iter().enumerate() {
        let truth = ground_truth_predictions(&inst.trace, &inst.params);
        let preds = synthesized(inst, i);
        let reqs = inst.trace.requests();
        let prev = inst.trace.previous_at_server();
        for alpha in BOUND_ALPHAS {
            let base = online(&inst.trace, &truth, alpha, &inst.params);
            let cost = online(&inst.trace, &preds, alpha, &inst.params);
            let rep = misprediction_report(&inst.trace, &preds, &inst.params, alpha);
            let bound = BOUND_LAMBDA * rep.m2.len() as f64 + (2.0 - alpha) * BOUND_LAMBDA * rep.m3.len() as f64;
            if cost - base > bound + 1e-6 {
                failures.push(format!("instance {i} α={alpha}: penalty {} > {bound}", cost - base));
                if !rep.terminal.is_empty() {
                    with_terminal += 1;
                }
                if cost - base <= rep.penalty_bound + 1e-6 {
                    within_extended += 1;
                }
            }

            // Flip only the predictions whose next same-server request
            // arrives within αλ.
            let mut m1_only = truth.clone();
            for r in reqs {
                if let Some(p) = prev[r.id] {
                    if r.time <= reqs[p].time + alpha * BOUND_LAMBDA {
                        m1_only.set(p, truth.get(p).negate());
                        corrupted += 1;
                    }
                }
            }
            let m1_cost = online(&inst.trace, &m1_only, alpha, &inst.params);
            if m1_cost != base {
                failures.push(format!("instance {i} α={alpha}: M1-only corruption moved cost {base} → {m1_cost}"));
            }
        }
    }
    let violations = failures.iter().filter(|f| f.contains("penalty")).count();
    verdict(
        failures,
        vec![format!(
            "{corrupted} M1 flips; {violations} penalty violations, {with_terminal} with a mispredicted \
             last-at-server request, {within_extended} within the bound that also charges those (2−α)λ"
        )],
    )
}

fn verdict(failures: Vec<String>, details: Vec<String>) -> Outcome {
    if failures.is_empty() {
        Ok(details.join("; "))
    } else {
        Err(format!("{} | {}", failures.join("; "), details.join("; ")))
    }
}

fn main() {
    let instances = bound_instances();
    let criteria: Vec<(&str, Check)> = vec![
        ("robustness tight example", Box::new(criterion_1)),
        ("consistency tight example", Box::new(criterion_2)),
        ("Wang counterexample", Box::new(criterion_3)),
        ("bound suite", Box::new(|| criterion_4(&instances))),
        ("oracle equivalence", Box::new(|| criterion_5(&instances))),
        ("allocation identity", Box::new(|| criterion_6(&instances))),
        ("adaptive robustness", Box::new(criterion_7)),
        ("adversary strength", Box::new(criterion_8)),
        ("misprediction penalty", Box::new(|| criterion_9(&instances))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(details) => println!("criterion {} [PASS] {name}: {details}", i + 1),
            Err(details) => {
                failed += 1;
                println!("criterion {} [FAIL] {name}: {details}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
