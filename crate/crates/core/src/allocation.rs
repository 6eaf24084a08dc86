//! Per-request attribution of the accounted online cost of a predictive (or
//! conventional) run, plus misprediction diagnostics.

use std::fmt;
use std::io;

use crate::engine::finalize_costs;
use crate::error::AllocationError;
use crate::model::{
    approx_eq, ground_truth_predictions, CopyInterval, CopyKind, CostParams, Prediction,
    PredictionStream, ReplicationLog, RequestTrace, ServeOutcome, ServerId,
};
use crate::offline::optl;
use crate::policies::{check_alpha, intended_duration};

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestType {
    /// Served by transfer from a regular copy.
    Type1,
    /// Served by transfer from the special copy.
    Type2,
    /// Served locally by a regular copy.
    Type3,
    /// Served locally by the special copy.
    Type4,
}

impl RequestType {
    pub fn is_transfer(self) -> bool {
        matches!(self, RequestType::Type1 | RequestType::Type2)
    }

    pub fn label(self) -> &'static str {
        match self {
            RequestType::Type1 => "T1",
            RequestType::Type2 => "T2",
            RequestType::Type3 => "T3",
            RequestType::Type4 => "T4",
        }
    }
}

impl fmt::Display for RequestType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationEntry {
    pub request: usize,
    /// `None` only for the dummy request r0.
    pub kind: Option<RequestType>,
    pub regular_term: f64,
    pub special_term: f64,
    pub transfer_term: f64,
    pub extra_leftover: f64,
    /// Start of the special period (t'_i) for Type-2/Type-4 requests.
    pub special_since: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationTable {
    pub entries: Vec<AllocationEntry>,
}

impl AllocationTable {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.total).sum()
    }

    pub fn kind_of(&self, request: usize) -> Option<RequestType> {
        self.entries.get(request).and_then(|e| e.kind)
    }

    /// Writes `request,type,regular,special,transfer,extra,total` rows.
    pub fn write_csv<W: io::Write>(&self, out: W) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["request", "type", "regular", "special", "transfer", "extra", "total"])?;
        for e in &self.entries {
            w.write_record([
                e.request.to_string(),
                e.kind.map_or("-", RequestType::label).to_string(),
                e.regular_term.to_string(),
                e.special_term.to_string(),
                e.transfer_term.to_string(),
                e.extra_leftover.to_string(),
                e.total.to_string(),
            ])?;
        }
        w.flush()
    }
}

fn mismatch(msg: impl Into<String>) -> AllocationError {
    AllocationError::StructureMismatch(msg.into())
}

/// The interval at `server` with `start < t <= end` and the given kind.
fn covering(log: &ReplicationLog, server: ServerId, t: f64, kind: CopyKind) -> Option<&CopyInterval> {
    log.intervals_of(server).find(|iv| iv.kind == kind && iv.covers(t))
}

fn regular_from(log: &ReplicationLog, server: ServerId, start: f64) -> Option<&CopyInterval> {
    log.intervals_of(server).find(|iv| iv.kind == CopyKind::Regular && iv.start == start)
}

/// Types every request and attributes the accounted cost of `log` to
/// requests. Regular copies left over after the last request at servers
/// other than the final request's server are handed, in server order, to
/// the first requests at servers other than s1.
pub fn classify_and_allocate(
    log: &ReplicationLog,
    trace: &RequestTrace,
    predictions: &PredictionStream,
    params: &CostParams,
    alpha: f64,
) -> Result<AllocationTable, AllocationError> {
    predictions.check_covers(trace)?;
    check_alpha(alpha)?;
    params.require_unit_rate()?;
    if log.serves.len() != trace.requests().len() {
        return Err(mismatch(format!(
            "log records {} served requests, trace has {}",
            log.serves.len(),
            trace.requests().len()
        )));
    }
    let lambda = params.lambda();
    let reqs = trace.requests();
    let prev = trace.previous_at_server();
    let next = trace.next_at_server();
    check_regular_structure(log, trace, predictions, alpha, lambda)?;

    let mut entries = Vec::with_capacity(reqs.len());
    entries.push(AllocationEntry {
        request: 0,
        kind: None,
        regular_term: 0.0,
        special_term: 0.0,
        transfer_term: 0.0,
        extra_leftover: 0.0,
        special_since: None,
        total: 0.0,
    });

    for r in &reqs[1..] {
        let own_regular = prev[r.id].map(|p| {
            regular_from(log, r.server, reqs[p].time)
                .ok_or_else(|| mismatch(format!("no regular copy after request {p}")))
        });
        let own_regular = own_regular.transpose()?;
        let (kind, regular, special, since, transfer) = match log.serves[r.id] {
            ServeOutcome::ServedLocally => {
                let p = prev[r.id].ok_or_else(|| mismatch(format!("request {} served locally without a predecessor", r.id)))?;
                let reg = own_regular.expect("predecessor exists");
                if reg.covers(r.time) {
                    (RequestType::Type3, r.time - reqs[p].time, 0.0, None, 0.0)
                } else {
                    let sp = covering(log, r.server, r.time, CopyKind::Special).ok_or_else(|| {
                        mismatch(format!("request {} served locally by no copy", r.id))
                    })?;
                    if sp.start != reg.end {
                        return Err(mismatch(format!("special copy at {} does not follow its regular copy", r.server)));
                    }
                    (RequestType::Type4, reg.duration(), r.time - sp.start, Some(sp.start), 0.0)
                }
            }
            ServeOutcome::ServedByTransfer { src } => {
                let l = own_regular.map_or(0.0, |iv| iv.duration());
                if covering(log, src, r.time, CopyKind::Regular).is_some() {
                    (RequestType::Type1, l, 0.0, None, lambda)
                } else {
                    let sp = covering(log, src, r.time, CopyKind::Special).ok_or_else(|| {
                        mismatch(format!("transfer source {src} of request {} holds no copy", r.id))
                    })?;
                    (RequestType::Type2, l, r.time - sp.start, Some(sp.start), lambda)
                }
            }
        };
        entries.push(AllocationEntry {
            request: r.id,
            kind: Some(kind),
            regular_term: regular,
            special_term: special,
            transfer_term: transfer,
            extra_leftover: 0.0,
            special_since: since,
            total: regular + special + transfer,
        });
    }

    // Leftover regular copies, one per server, keyed by server index.
    let last = trace.last();
    let mut leftovers: Vec<(ServerId, f64)> = Vec::new();
    let mut firsts: Vec<(ServerId, usize)> = Vec::new();
    for r in reqs {
        if next[r.id].is_none() && r.server != last.server {
            let iv = regular_from(log, r.server, r.time)
                .ok_or_else(|| mismatch(format!("no regular copy after request {}", r.id)))?;
            leftovers.push((r.server, iv.duration()));
        }
        if prev[r.id].is_none() && r.server != ServerId::FIRST {
            firsts.push((r.server, r.id));
        }
    }
    if leftovers.len() != firsts.len() {
        return Err(mismatch(format!(
            "{} leftover copies for {} first requests",
            leftovers.len(),
            firsts.len()
        )));
    }
    leftovers.sort_by_key(|(s, _)| *s);
    firsts.sort_by_key(|(s, _)| *s);
    for ((_, dur), (_, id)) in leftovers.iter().zip(&firsts) {
        let e = &mut entries[*id];
        e.extra_leftover = *dur;
        e.total += *dur;
    }

    let table = AllocationTable { entries };
    let report = finalize_costs(log, trace, params);
    if !approx_eq(table.total(), report.total, TOL) {
        return Err(mismatch(format!(
            "allocated {} but the log accounts {}",
            table.total(),
            report.total
        )));
    }
    Ok(table)
}

/// Every regular interval must start at a request at its server and last
/// the intended duration of that request's prediction, unless a local
/// request at the same server cuts it short.
fn check_regular_structure(
    log: &ReplicationLog,
    trace: &RequestTrace,
    predictions: &PredictionStream,
    alpha: f64,
    lambda: f64,
) -> Result<(), AllocationError> {
    let reqs = trace.requests();
    let next = trace.next_at_server();
    for iv in log.intervals.iter().filter(|iv| iv.kind == CopyKind::Regular) {
        let Some(r) = reqs.iter().find(|r| r.server == iv.server && r.time == iv.start) else {
            return Err(mismatch(format!("regular copy at {} starts at {} without a request", iv.server, iv.start)));
        };
        let intended = intended_duration(predictions.get(r.id), alpha, lambda);
        if approx_eq(iv.duration(), intended, TOL) {
            continue;
        }
        let cut = next[r.id].is_some_and(|j| {
            reqs[j].time == iv.end
                && log.serves[j] == ServeOutcome::ServedLocally
                && iv.duration() < intended
        });
        if !cut {
            return Err(mismatch(format!(
                "regular copy after request {} lasts {}, intended {}",
                r.id,
                iv.duration(),
                intended
            )));
        }
    }
    Ok(())
}

/// Mispredicted requests grouped by the true gap to their predecessor at
/// the same server.
#[derive(Debug, Clone, PartialEq)]
pub struct MispredictionReport {
    /// Gap at most `αλ`.
    pub m1: Vec<usize>,
    /// Gap in `(αλ, λ]`.
    pub m2: Vec<usize>,
    /// Gap above `λ`.
    pub m3: Vec<usize>,
    /// Last requests at a server (other than the final request) that were
    /// predicted `WithinLambda` although nothing follows. Charged like M3.
    pub terminal: Vec<usize>,
    pub penalty_bound: f64,
    pub optl_denominator: f64,
    pub ratio_increase_bound: f64,
}

/// Compares `predictions` with the ground truth. A request r_i is
/// mispredicted when the prediction issued at its predecessor r_p(i) was
/// wrong.
pub fn misprediction_report(
    trace: &RequestTrace,
    predictions: &PredictionStream,
    params: &CostParams,
    alpha: f64,
) -> MispredictionReport {
    let lambda = params.lambda();
    let truth = ground_truth_predictions(trace, params);
    let reqs = trace.requests();
    let prev = trace.previous_at_server();
    let next = trace.next_at_server();
    let (mut m1, mut m2, mut m3, mut terminal) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let m = trace.last_index();
    for r in reqs {
        if let Some(p) = prev[r.id] {
            if predictions.get(p) != truth.get(p) {
                let tp = reqs[p].time;
                if r.time <= tp + alpha * lambda {
                    m1.push(r.id);
                } else if r.time <= tp + lambda {
                    m2.push(r.id);
                } else {
                    m3.push(r.id);
                }
            }
        }
        if next[r.id].is_none() && r.id != m && predictions.get(r.id) == Prediction::WithinLambda {
            terminal.push(r.id);
        }
    }
    let penalty_bound =
        lambda * m2.len() as f64 + (2.0 - alpha) * lambda * (m3.len() + terminal.len()) as f64;
    let optl_denominator = optl(trace, params);
    let ratio_increase_bound = if optl_denominator > 0.0 {
        penalty_bound / optl_denominator
    } else if penalty_bound > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    MispredictionReport { m1, m2, m3, terminal, penalty_bound, optl_denominator, ratio_increase_bound }
}
