//! Offline optimum over a request trace: an exact dynamic program over
//! holding sets, an exhaustive oracle for tiny instances, and the OPTL
//! running lower bound.
//!
//! Both exact methods work on the same restricted strategy space: copies
//! are created and dropped only at request instants, a transfer happens
//! only to serve the request at its destination, and nothing is stored
//! after the final request. Between consecutive requests a nonempty kept
//! set `K` of servers stores the object; the request at `x` is free when
//! `x ∈ K` and costs `λ` otherwise, after which `x` holds a copy too.

use crate::error::OfflineError;
use crate::model::{
    CopyInterval, CopyKind, CostParams, ReplicationLog, RequestTrace, ServeOutcome, ServerId,
    Transfer,
};
use crate::policies::optl_increment;

/// Largest server count accepted by the subset dynamic program.
pub const MAX_DP_SERVERS: usize = 16;
/// Largest parent table (entries) the log-producing solver will allocate.
const MAX_PARENT_ENTRIES: usize = 1 << 27;

pub const BRUTE_MAX_SERVERS: usize = 3;
pub const BRUTE_MAX_REQUESTS: usize = 10;

const TRANSFER_FLAG: u32 = 1 << 31;

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineSolution {
    pub cost: f64,
    pub log: ReplicationLog,
}

fn check_instance(trace: &RequestTrace, params: &CostParams) -> Result<(), OfflineError> {
    if !params.is_unit_rate() {
        return Err(OfflineError::UnsupportedRates);
    }
    if trace.n() > MAX_DP_SERVERS {
        return Err(OfflineError::TooManyServers { n: trace.n(), max: MAX_DP_SERVERS });
    }
    Ok(())
}

/// Replaces `f[K]` by `min_{S ⊇ K} f[S]`, tracking the minimizing `S`.
fn superset_min(f: &mut [f64], arg: &mut [u32], n: usize) {
    for b in 0..n {
        let bit = 1usize << b;
        for mask in 0..f.len() {
            if mask & bit == 0 && f[mask | bit] < f[mask] {
                f[mask] = f[mask | bit];
                arg[mask] = arg[mask | bit];
            }
        }
    }
}

/// One DP step: from costs over holding sets after `r_i` to costs after
/// `r_{i+1}` at server slot `x`, separated by `gap`. When `parents` is
/// given it receives, for each resulting set, the previous set with the
/// transfer flag.
#[allow(clippy::too_many_arguments)]
fn step(
    cost: &[f64],
    next: &mut [f64],
    g: &mut [f64],
    arg: &mut [u32],
    n: usize,
    x: usize,
    gap: f64,
    lambda: f64,
    mut parents: Option<&mut [u32]>,
) {
    g.copy_from_slice(cost);
    for (k, a) in arg.iter_mut().enumerate() {
        *a = k as u32;
    }
    superset_min(g, arg, n);
    g[0] = f64::INFINITY;
    for (k, v) in g.iter_mut().enumerate().skip(1) {
        *v += k.count_ones() as f64 * gap;
    }
    let xbit = 1usize << x;
    next.fill(f64::INFINITY);
    for s in 0..next.len() {
        if s & xbit == 0 {
            continue;
        }
        let local = g[s];
        let moved = g[s ^ xbit] + lambda;
        let (best, parent) = if local <= moved {
            (local, arg[s])
        } else {
            (moved, arg[s ^ xbit] | TRANSFER_FLAG)
        };
        next[s] = best;
        if let Some(p) = parents.as_deref_mut() {
            p[s >> (x + 1) << x | (s & (xbit - 1))] = parent;
        }
    }
}

/// Minimal offline cost without reconstructing the strategy. Memory is
/// linear in `2^n`, independent of the trace length.
pub fn optimal_offline_cost(trace: &RequestTrace, params: &CostParams) -> Result<f64, OfflineError> {
    check_instance(trace, params)?;
    let n = trace.n();
    let size = 1usize << n;
    let mut cost = vec![f64::INFINITY; size];
    cost[1] = 0.0;
    let (mut next, mut g, mut arg) = (vec![0.0; size], vec![0.0; size], vec![0u32; size]);
    let reqs = trace.requests();
    for w in reqs.windows(2) {
        let gap = w[1].time - w[0].time;
        step(&cost, &mut next, &mut g, &mut arg, n, w[1].server.slot(), gap, params.lambda(), None);
        std::mem::swap(&mut cost, &mut next);
    }
    Ok(cost.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Minimal offline cost together with a log realizing it.
pub fn optimal_offline(trace: &RequestTrace, params: &CostParams) -> Result<OfflineSolution, OfflineError> {
    check_instance(trace, params)?;
    let n = trace.n();
    let size = 1usize << n;
    let half = size / 2;
    let m = trace.last_index();
    if half.saturating_mul(m) > MAX_PARENT_ENTRIES {
        return Err(OfflineError::InstanceTooLarge {
            n,
            m,
            max_n: MAX_DP_SERVERS,
            max_m: MAX_PARENT_ENTRIES / half,
        });
    }
    let reqs = trace.requests();
    let mut parents = vec![0u32; half * m];
    let mut cost = vec![f64::INFINITY; size];
    cost[1] = 0.0;
    let (mut next, mut g, mut arg) = (vec![0.0; size], vec![0.0; size], vec![0u32; size]);
    for i in 0..m {
        let gap = reqs[i + 1].time - reqs[i].time;
        let x = reqs[i + 1].server.slot();
        let slice = &mut parents[i * half..(i + 1) * half];
        step(&cost, &mut next, &mut g, &mut arg, n, x, gap, params.lambda(), Some(slice));
        std::mem::swap(&mut cost, &mut next);
    }
    let (mut s, best) = cost
        .iter()
        .copied()
        .enumerate()
        .fold((1, f64::INFINITY), |acc, (s, c)| if c < acc.1 { (s, c) } else { acc });

    // Walk back: kept set during (t_i, t_{i+1}] and whether r_{i+1} moved.
    let mut kept = vec![0usize; m];
    let mut moved = vec![false; m];
    for i in (0..m).rev() {
        let x = reqs[i + 1].server.slot();
        let xbit = 1usize << x;
        let p = parents[i * half + (s >> (x + 1) << x | (s & (xbit - 1)))];
        moved[i] = p & TRANSFER_FLAG != 0;
        kept[i] = if moved[i] { s ^ xbit } else { s };
        s = (p & !TRANSFER_FLAG) as usize;
    }
    let log = kept_sets_to_log(trace, &kept, &moved);
    Ok(OfflineSolution { cost: best, log })
}

/// Turns a chain of kept sets into copy intervals and transfers.
fn kept_sets_to_log(trace: &RequestTrace, kept: &[usize], moved: &[bool]) -> ReplicationLog {
    let reqs = trace.requests();
    let mut intervals = Vec::new();
    let mut open: Vec<Option<f64>> = vec![None; trace.n()];
    for (i, &k) in kept.iter().enumerate() {
        let t0 = reqs[i].time;
        for (slot, start) in open.iter_mut().enumerate() {
            let held = k & (1 << slot) != 0;
            match (*start, held) {
                (None, true) => *start = Some(t0),
                (Some(s), false) => {
                    intervals.push(CopyInterval { server: ServerId::from_slot(slot), start: s, end: t0, kind: CopyKind::Regular });
                    *start = None;
                }
                _ => {}
            }
        }
    }
    let end = trace.horizon();
    for (slot, start) in open.iter().enumerate() {
        if let Some(s) = start {
            intervals.push(CopyInterval { server: ServerId::from_slot(slot), start: *s, end, kind: CopyKind::Regular });
        }
    }
    let mut transfers = Vec::new();
    let mut serves = vec![ServeOutcome::ServedLocally];
    for (i, &k) in kept.iter().enumerate() {
        let r = &reqs[i + 1];
        if moved[i] {
            let src = ServerId::from_slot(k.trailing_zeros() as usize);
            transfers.push(Transfer { time: r.time, src, dst: r.server, serves: Some(r.id) });
            serves.push(ServeOutcome::ServedByTransfer { src });
        } else {
            serves.push(ServeOutcome::ServedLocally);
        }
    }
    ReplicationLog { intervals, transfers, horizon: end, serves }
}

/// Exhaustive search over every chain of nonempty kept sets, pruned only by
/// comparing against the best complete chain found so far.
pub fn brute_force_optimal(trace: &RequestTrace, params: &CostParams) -> Result<OfflineSolution, OfflineError> {
    if !params.is_unit_rate() {
        return Err(OfflineError::UnsupportedRates);
    }
    let (n, m) = (trace.n(), trace.last_index());
    if n > BRUTE_MAX_SERVERS || m > BRUTE_MAX_REQUESTS {
        return Err(OfflineError::InstanceTooLarge {
            n,
            m,
            max_n: BRUTE_MAX_SERVERS,
            max_m: BRUTE_MAX_REQUESTS,
        });
    }
    let reqs = trace.requests();
    // Every gap needs at least one stored copy.
    let mut rest = vec![0.0; m + 1];
    for i in (0..m).rev() {
        rest[i] = rest[i + 1] + (reqs[i + 1].time - reqs[i].time);
    }
    let mut search = Brute {
        reqs: trace.requests().iter().map(|r| (r.server.slot(), r.time)).collect(),
        lambda: params.lambda(),
        rest,
        best: f64::INFINITY,
        best_chain: Vec::new(),
        chain: Vec::with_capacity(m),
    };
    search.descend(0, 1, 0.0);
    let (kept, moved): (Vec<usize>, Vec<bool>) = search.best_chain.iter().copied().unzip();
    let log = kept_sets_to_log(trace, &kept, &moved);
    Ok(OfflineSolution { cost: search.best, log })
}

struct Brute {
    reqs: Vec<(usize, f64)>,
    lambda: f64,
    rest: Vec<f64>,
    best: f64,
    best_chain: Vec<(usize, bool)>,
    chain: Vec<(usize, bool)>,
}

impl Brute {
    fn descend(&mut self, i: usize, holding: usize, so_far: f64) {
        if i + 1 == self.reqs.len() {
            if so_far < self.best {
                self.best = so_far;
                self.best_chain = self.chain.clone();
            }
            return;
        }
        if so_far + self.rest[i] >= self.best {
            return;
        }
        let gap = self.reqs[i + 1].1 - self.reqs[i].1;
        let xbit = 1usize << self.reqs[i + 1].0;
        // Every nonempty subset of the holding set.
        let mut k = holding;
        while k != 0 {
            let moved = k & xbit == 0;
            let c = so_far + k.count_ones() as f64 * gap + if moved { self.lambda } else { 0.0 };
            self.chain.push((k, moved));
            self.descend(i + 1, k | xbit, c);
            self.chain.pop();
            k = (k - 1) & holding;
        }
    }
}

/// Closed-form lower bound on the offline optimum: for every request with
/// an earlier request at its server, `min(gap, λ)`; plus, for every
/// request, the part of the gap to the previous request beyond `λ`.
pub fn optl(trace: &RequestTrace, params: &CostParams) -> f64 {
    let reqs = trace.requests();
    let prev = trace.previous_at_server();
    reqs.windows(2)
        .map(|w| {
            let r = &w[1];
            let same = prev[r.id].map(|p| reqs[p].time);
            optl_increment(r.time, same, w[0].time, params.lambda())
        })
        .sum()
}
