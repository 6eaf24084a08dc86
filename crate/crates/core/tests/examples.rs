mod common;

use dynrep::allocation::misprediction_report;
use dynrep::engine::run;
use dynrep::generators::{
    make_consistency_tight, make_robustness_tight, make_wang_counterexample, run_adversary, AdversaryKind,
};
use dynrep::offline::{brute_force_optimal, optimal_offline};
use dynrep::policies::{PredictivePolicy, WangPolicy};
use dynrep::{approx_eq, ground_truth_predictions, CostParams, Prediction, PredictionStream};

#[test]
fn robustness_example_costs() {
    let (alpha, lambda, eps, m) = (0.5, 100.0, 1.0, 5);
    let (trace, preds) = make_robustness_tight(alpha, lambda, eps, m).unwrap();
    let params = CostParams::uniform(lambda, 2).unwrap();
    let opt = optimal_offline(&trace, &params).unwrap().cost;
    assert!(approx_eq(opt, (m - 1) as f64 * (alpha * lambda + eps) + lambda, 1e-12));

    // Every request is a transfer from a regular copy held αλ, and every
    // server's leftover copy is accounted: m (αλ + λ) in total.
    let (_, report) = run(&trace, &preds, PredictivePolicy::new(alpha, lambda).unwrap(), &params).unwrap();
    let reference = common::reference_cost(&trace, preds.as_slice(), alpha, lambda);
    assert!(approx_eq(report.total, reference, 1e-12));
    assert!(approx_eq(report.total, m as f64 * (alpha * lambda + lambda), 1e-12));
}

#[test]
fn robustness_example_mispredictions_fall_in_m2() {
    let (alpha, lambda) = (0.5, 100.0);
    let (trace, preds) = make_robustness_tight(alpha, lambda, 1.0, 9).unwrap();
    let params = CostParams::uniform(lambda, 2).unwrap();
    let rep = misprediction_report(&trace, &preds, &params, alpha);
    let expected: Vec<usize> = (2..=9).collect();
    assert_eq!(rep.m2, expected);
    assert!(rep.m1.is_empty() && rep.m3.is_empty() && rep.terminal.is_empty());
    assert_eq!(rep.penalty_bound, lambda * 8.0);
}

#[test]
fn consistency_example_one_cycle() {
    let (alpha, lambda, eps) = (0.5, 10.0, 0.01);
    let (trace, preds) = make_consistency_tight(alpha, lambda, eps, 1).unwrap();
    let params = CostParams::uniform(lambda, 2).unwrap();
    let opt = optimal_offline(&trace, &params).unwrap().cost;
    assert!(approx_eq(opt, 3.0 * lambda + 2.0 * eps, 1e-12));
    assert!(approx_eq(brute_force_optimal(&trace, &params).unwrap().cost, opt, 1e-12));
    let (_, report) = run(&trace, &preds, PredictivePolicy::new(alpha, lambda).unwrap(), &params).unwrap();
    assert!(approx_eq(report.total, 5.0 * lambda + alpha * lambda, 1e-12));
}

#[test]
fn consistency_example_cycles_repeat() {
    let (alpha, lambda, eps, cycles) = (0.2, 10.0, 1e-3, 40);
    let (trace, preds) = make_consistency_tight(alpha, lambda, eps, cycles).unwrap();
    let params = CostParams::uniform(lambda, 2).unwrap();
    assert_eq!(preds, ground_truth_predictions(&trace, &params));
    let (_, report) = run(&trace, &preds, PredictivePolicy::new(alpha, lambda).unwrap(), &params).unwrap();
    let reference = common::reference_cost(&trace, preds.as_slice(), alpha, lambda);
    assert!(approx_eq(report.total, reference, 1e-12));
    assert!(approx_eq(report.total / cycles as f64, 5.0 * lambda + alpha * lambda, 1e-9));
}

#[test]
fn wang_counterexample_costs() {
    let (lambda, eps, m) = (100.0, 1.0, 12);
    let trace = make_wang_counterexample(lambda, eps, m).unwrap();
    let params = CostParams::uniform(lambda, 2).unwrap();
    let opt = optimal_offline(&trace, &params).unwrap().cost;
    let mf = m as f64;
    assert!(approx_eq(opt, (mf - 2.0) * (2.0 * lambda + eps) + lambda + eps, 1e-12));
    let preds = PredictionStream::uniform(trace.requests().len(), Prediction::BeyondLambda);
    let (_, report) = run(&trace, &preds, WangPolicy::new(&params).unwrap(), &params).unwrap();
    assert!(report.total >= (mf - 2.0) * 5.0 * lambda);
}

#[test]
fn adversary_observations_hold() {
    let (lambda, eps) = (100.0, 0.01);
    for alpha in [0.3, 0.5, 0.9] {
        let out = run_adversary(PredictivePolicy::new(alpha, lambda).unwrap(), lambda, eps, 300).unwrap();
        let params = CostParams::uniform(lambda, 2).unwrap();
        assert_eq!(out.predictions, ground_truth_predictions(&out.trace, &params));
        let reqs = out.trace.requests();
        let prev = out.trace.previous_at_server();
        for (i, kind) in out.kinds.iter().enumerate() {
            let Some(kind) = kind else { continue };
            let since_prev = reqs[i].time - reqs[i - 1].time;
            let since_same = reqs[i].time - reqs[prev[i].unwrap()].time;
            assert!(since_same > lambda);
            match kind {
                AdversaryKind::K2 => assert!(approx_eq(since_prev, lambda + eps, 1e-9)),
                AdversaryKind::K1a => {
                    assert!(since_prev < lambda + eps);
                    assert!(approx_eq(since_same, lambda + eps, 1e-9));
                }
                AdversaryKind::K1b | AdversaryKind::K1c => {
                    assert!(since_prev < lambda + eps);
                    assert!(since_same > lambda + eps);
                }
            }
        }
        let opt = optimal_offline(&out.trace, &params).unwrap().cost;
        assert!(out.report.total / opt >= 1.45, "alpha {alpha}: {}", out.report.total / opt);
    }
}
