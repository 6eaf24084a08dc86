//! A deliberately naive re-implementation of the predictive policy's
//! accounted cost, used as an oracle for the event-driven engine.

#![allow(dead_code)]

use dynrep::{Prediction, RequestTrace};

#[derive(Clone, Copy, PartialEq)]
enum Held {
    None,
    Regular { since: f64, until: f64 },
    Special { since: f64 },
}

/// Accounted cost of the predictive policy on `trace`.
pub fn reference_cost(trace: &RequestTrace, preds: &[Prediction], alpha: f64, lambda: f64) -> f64 {
    let n = trace.n();
    let mut copies = vec![Held::None; n];
    copies[0] = Held::Regular { since: 0.0, until: 0.0 };
    let mut storage = 0.0;
    let mut excluded = 0.0;
    let mut transfers = 0usize;
    let last = trace.last();

    let count = |c: &[Held]| c.iter().filter(|c| **c != Held::None).count();

    // Fires the earliest regular expiry strictly before `t` (or at or before
    // `t` when `inclusive`). Returns false if none is due.
    let fire = |copies: &mut Vec<Held>, storage: &mut f64, excluded: &mut f64, t: f64, inclusive: bool, tail_stop: bool| -> Option<bool> {
        let mut best: Option<(f64, usize)> = None;
        for (i, c) in copies.iter().enumerate() {
            if let Held::Regular { until, .. } = *c {
                let due = if inclusive { until <= t } else { until < t };
                if due && best.is_none_or(|(bt, _)| until < bt) {
                    best = Some((until, i));
                }
            }
        }
        let (at, i) = best?;
        let Held::Regular { since, .. } = copies[i] else { unreachable!() };
        let dur = at - since;
        if since == last.time && i == last.server.slot() {
            *excluded += dur;
        } else {
            *storage += dur;
        }
        if count(copies) > 1 {
            copies[i] = Held::None;
            Some(false)
        } else if tail_stop {
            copies[i] = Held::None;
            Some(true)
        } else {
            copies[i] = Held::Special { since: at };
            Some(false)
        }
    };

    for r in trace.requests() {
        while fire(&mut copies, &mut storage, &mut excluded, r.time, false, false).is_some() {}
        let s = r.server.slot();
        let hold = match preds[r.id] {
            Prediction::WithinLambda => lambda,
            Prediction::BeyondLambda => alpha * lambda,
        };
        match copies[s] {
            Held::Regular { since, .. } => storage += r.time - since,
            Held::Special { since } => storage += r.time - since,
            Held::None if r.id == 0 => {}
            Held::None => {
                transfers += 1;
                let src = copies.iter().position(|c| *c != Held::None).unwrap();
                if let Held::Special { since } = copies[src] {
                    storage += r.time - since;
                    copies[src] = Held::None;
                }
            }
        }
        copies[s] = Held::Regular { since: r.time, until: r.time + hold };
    }
    loop {
        match fire(&mut copies, &mut storage, &mut excluded, f64::INFINITY, true, true) {
            Some(true) | None => break,
            Some(false) => {}
        }
    }
    storage + lambda * transfers as f64
}
