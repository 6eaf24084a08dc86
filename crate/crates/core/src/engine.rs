//! Deterministic event-driven simulation kernel.
//!
//! A [`Session`] owns the holding state of every server, a queue of copy
//! expiry events and the growing [`ReplicationLog`]. Requests are injected
//! one at a time; between requests the session fires expiry events and
//! hands each of them to the policy. [`run`] is the batch entry point and
//! is implemented on top of the same interactive session.
//!
//! Event ordering: a request at time `t` is processed before any expiry
//! event scheduled at exactly `t`, and expiry events sharing a timestamp
//! fire in ascending server index.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io;

use crate::error::{EngineError, ModelError};
use crate::model::{
    CopyInterval, CopyKind, CostParams, CostReport, Prediction, PredictionStream, ReplicationLog,
    Request, RequestTrace, ServeOutcome, ServerId, Transfer,
};

/// Per-server holding flags, intended expiries `E_j`, keep tags `K_j` and
/// the live copy count `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldingState {
    holds: Vec<bool>,
    expiry: Vec<f64>,
    keep: Vec<bool>,
    count: usize,
}

impl HoldingState {
    fn initial(n: usize) -> Self {
        let mut holds = vec![false; n];
        let mut expiry = vec![f64::NEG_INFINITY; n];
        holds[0] = true;
        expiry[0] = 0.0;
        HoldingState { holds, expiry, keep: vec![false; n], count: 1 }
    }
}

/// Read-only window onto the holding state handed to policy callbacks.
#[derive(Debug, Clone, Copy)]
pub struct HoldingView<'a> {
    state: &'a HoldingState,
    now: f64,
}

impl<'a> HoldingView<'a> {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn n(&self) -> usize {
        self.state.holds.len()
    }

    pub fn holds(&self, server: ServerId) -> bool {
        self.state.holds[server.slot()]
    }

    /// Intended expiry `E_j`; `-inf` for a server that never held a copy.
    pub fn expiry(&self, server: ServerId) -> f64 {
        self.state.expiry[server.slot()]
    }

    pub fn keep_tag(&self, server: ServerId) -> bool {
        self.state.keep[server.slot()]
    }

    pub fn copy_count(&self) -> usize {
        self.state.count
    }

    pub fn holders(&self) -> impl Iterator<Item = ServerId> + 'a {
        let holds = &self.state.holds;
        holds.iter().enumerate().filter(|(_, h)| **h).map(|(s, _)| ServerId::from_slot(s))
    }

    /// Lowest-index holder. When a special copy exists it is the only copy,
    /// so this also picks it.
    pub fn default_source(&self) -> Option<ServerId> {
        self.holders().next()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServeSource {
    Local,
    Transfer(ServerId),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeDecision {
    pub source: ServeSource,
    /// New intended expiry for the requesting server's copy.
    pub new_expiry: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExpiryDecision {
    Drop,
    /// Hold past the intended expiry as a special copy (sets `K_j`).
    Keep,
    /// Start a fresh holding period ending at `until`.
    Renew { until: f64 },
    /// Move the object to `dst` and drop the local copy.
    PushTo { dst: ServerId, dst_expiry: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostTransferDecision {
    Keep,
    Drop,
}

/// Callbacks a replication policy implements. Policies see only the
/// current holding state and their own private state.
pub trait Policy {
    fn name(&self) -> &str;

    fn on_request(
        &mut self,
        request: &Request,
        prediction: Prediction,
        view: &HoldingView<'_>,
    ) -> ServeDecision;

    fn on_copy_expiry(&mut self, server: ServerId, time: f64, view: &HoldingView<'_>)
        -> ExpiryDecision;

    fn on_outgoing_transfer(
        &mut self,
        server: ServerId,
        time: f64,
        view: &HoldingView<'_>,
    ) -> PostTransferDecision;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn on_request(
        &mut self,
        request: &Request,
        prediction: Prediction,
        view: &HoldingView<'_>,
    ) -> ServeDecision {
        (**self).on_request(request, prediction, view)
    }

    fn on_copy_expiry(
        &mut self,
        server: ServerId,
        time: f64,
        view: &HoldingView<'_>,
    ) -> ExpiryDecision {
        (**self).on_copy_expiry(server, time, view)
    }

    fn on_outgoing_transfer(
        &mut self,
        server: ServerId,
        time: f64,
        view: &HoldingView<'_>,
    ) -> PostTransferDecision {
        (**self).on_outgoing_transfer(server, time, view)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepEvent {
    Drop { server: ServerId, time: f64 },
    Tag { server: ServerId, time: f64 },
    Renew { server: ServerId, time: f64, until: f64 },
    Push { src: ServerId, dst: ServerId, time: f64 },
}

impl StepEvent {
    pub fn time(&self) -> f64 {
        match *self {
            StepEvent::Drop { time, .. }
            | StepEvent::Tag { time, .. }
            | StepEvent::Renew { time, .. }
            | StepEvent::Push { time, .. } => time,
        }
    }
}

/// Events fired while advancing simulated time, in nondecreasing time order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepObservation {
    pub events: Vec<StepEvent>,
}

impl StepObservation {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn dropped(&self, server: ServerId) -> Option<f64> {
        self.events.iter().find_map(|e| match *e {
            StepEvent::Drop { server: s, time } if s == server => Some(time),
            StepEvent::Push { src, time, .. } if src == server => Some(time),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct ExpiryEvent {
    time: f64,
    slot: usize,
    generation: u64,
}

impl PartialEq for ExpiryEvent {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for ExpiryEvent {}

impl PartialOrd for ExpiryEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExpiryEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.slot.cmp(&other.slot))
            .then(self.generation.cmp(&other.generation))
    }
}

/// An interactive simulation. Requests must arrive in strictly increasing
/// time order; [`Session::step_until`] advances the clock without requests.
pub struct Session<P: Policy> {
    policy: P,
    params: CostParams,
    state: HoldingState,
    open: Vec<Option<(f64, CopyKind)>>,
    generation: Vec<u64>,
    events: BinaryHeap<Reverse<ExpiryEvent>>,
    intervals: Vec<CopyInterval>,
    transfers: Vec<Transfer>,
    serves: Vec<ServeOutcome>,
    requests: Vec<(usize, f64)>,
    clock: f64,
    fired_at_clock: bool,
    post_horizon: bool,
    settled: bool,
}

impl<P: Policy> Session<P> {
    pub fn new(n: usize, params: CostParams, policy: P) -> Result<Self, EngineError> {
        if n == 0 {
            return Err(ModelError::ServerOutOfRange { server: 1, n }.into());
        }
        if params.n() < n {
            return Err(ModelError::ServerOutOfRange { server: n, n: params.n() }.into());
        }
        let mut open = vec![None; n];
        open[0] = Some((0.0, CopyKind::Regular));
        Ok(Session {
            policy,
            params,
            state: HoldingState::initial(n),
            open,
            generation: vec![0; n],
            events: BinaryHeap::new(),
            intervals: Vec::new(),
            transfers: Vec::new(),
            serves: Vec::new(),
            requests: Vec::new(),
            clock: 0.0,
            fired_at_clock: false,
            post_horizon: false,
            settled: false,
        })
    }

    pub fn n(&self) -> usize {
        self.state.holds.len()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn view(&self) -> HoldingView<'_> {
        HoldingView { state: &self.state, now: self.clock }
    }

    pub fn last_request_time(&self) -> Option<f64> {
        self.requests.last().map(|&(_, t)| t)
    }

    /// Time of the earliest pending expiry event.
    pub fn next_event_time(&mut self) -> Option<f64> {
        self.drop_stale();
        self.events.peek().map(|Reverse(e)| e.time)
    }

    /// Advances to instant `time`, firing every event strictly before it.
    /// Events scheduled at exactly `time` stay pending, since a request
    /// injected at `time` takes precedence over them.
    pub fn step_until(&mut self, time: f64) -> Result<StepObservation, EngineError> {
        if time < self.clock || (time == self.clock && self.fired_at_clock) {
            return Err(EngineError::TimeRegression { requested: time, clock: self.clock });
        }
        let mut obs = StepObservation::default();
        self.fire_before(time, &mut obs)?;
        self.clock = time;
        self.fired_at_clock = false;
        Ok(obs)
    }

    /// Fires the earliest batch of events if it lies strictly before
    /// `limit`; the clock then sits at that batch's time.
    pub fn step_next(&mut self, limit: f64) -> Result<Option<StepObservation>, EngineError> {
        let Some(t) = self.next_event_time() else { return Ok(None) };
        if t >= limit {
            return Ok(None);
        }
        let mut obs = StepObservation::default();
        while let Some(ev) = self.pop_live_at_or_before(t) {
            self.fire(ev, &mut obs)?;
        }
        self.clock = t;
        self.fired_at_clock = true;
        Ok(Some(obs))
    }

    /// Processes pending events before `time`, then the request.
    pub fn inject_request(
        &mut self,
        server: ServerId,
        time: f64,
        prediction: Prediction,
    ) -> Result<ServeOutcome, EngineError> {
        if self.settled {
            return Err(EngineError::violation(time, "session already finished"));
        }
        let id = self.requests.len();
        if id == 0 && (server != ServerId::FIRST || time != 0.0) {
            return Err(ModelError::BadDummy.into());
        }
        if server.index() > self.n() {
            return Err(ModelError::ServerOutOfRange { server: server.index(), n: self.n() }.into());
        }
        let regress = time < self.clock
            || (time == self.clock && self.fired_at_clock)
            || self.last_request_time().is_some_and(|last| time <= last);
        if !time.is_finite() || regress {
            return Err(EngineError::TimeRegression { requested: time, clock: self.clock });
        }
        let mut obs = StepObservation::default();
        self.fire_before(time, &mut obs)?;
        self.clock = time;
        self.fired_at_clock = false;

        let request = Request { id, server, time };
        let decision = self.policy.on_request(&request, prediction, &HoldingView { state: &self.state, now: time });
        if !(decision.new_expiry.is_finite() && decision.new_expiry > time) {
            return Err(EngineError::violation(
                time,
                format!("intended expiry {} must lie after the request", decision.new_expiry),
            ));
        }
        let slot = server.slot();
        let outcome = match decision.source {
            ServeSource::Local => {
                if !self.state.holds[slot] {
                    return Err(EngineError::violation(
                        time,
                        format!("local service at {server}, which holds no copy"),
                    ));
                }
                self.close(slot, time);
                self.state.keep[slot] = false;
                ServeOutcome::ServedLocally
            }
            ServeSource::Transfer(src) => {
                if self.state.holds[slot] {
                    return Err(EngineError::violation(
                        time,
                        format!("transfer to {server}, which already holds a copy"),
                    ));
                }
                if src.index() > self.n() || src == server || !self.state.holds[src.slot()] {
                    return Err(EngineError::violation(
                        time,
                        format!("transfer source {src} holds no copy"),
                    ));
                }
                self.transfers.push(Transfer { time, src, dst: server, serves: Some(id) });
                self.state.holds[slot] = true;
                self.state.count += 1;
                ServeOutcome::ServedByTransfer { src }
            }
        };
        self.open[slot] = Some((time, CopyKind::Regular));
        self.state.expiry[slot] = decision.new_expiry;
        self.schedule(slot, decision.new_expiry);

        if let ServeOutcome::ServedByTransfer { src } = outcome {
            let after = self.policy.on_outgoing_transfer(src, time, &HoldingView { state: &self.state, now: time });
            match after {
                PostTransferDecision::Drop => self.drop_copy(src.slot(), time),
                PostTransferDecision::Keep if self.state.keep[src.slot()] => {
                    return Err(EngineError::violation(
                        time,
                        format!("{src} kept a special copy after creating another"),
                    ));
                }
                PostTransferDecision::Keep => {}
            }
        }
        self.requests.push((server.index(), time));
        self.serves.push(outcome);
        Ok(outcome)
    }

    /// Runs post-horizon events until only the infinite tail remains and
    /// returns the log and its accounted costs.
    pub fn finish(mut self) -> Result<(ReplicationLog, CostReport), EngineError> {
        let trace = RequestTrace::new(self.n(), &self.requests)?;
        let horizon = trace.horizon();
        self.post_horizon = true;
        let mut obs = StepObservation::default();

        if self.state.count == 1 {
            let slot = self.state.holds.iter().position(|h| *h).expect("c >= 1");
            if self.state.keep[slot] {
                let (start, _) = self.open[slot].expect("holder has an open interval");
                if start < horizon {
                    self.record(slot, start, horizon, CopyKind::Special);
                }
                self.open[slot] = Some((start.max(horizon), CopyKind::InfiniteTail));
                self.settle();
            }
        }

        let cap = 16 * self.n() + 64;
        let mut fired = 0;
        while !self.settled {
            let Some(ev) = self.pop_live_at_or_before(f64::INFINITY) else {
                return Err(EngineError::violation(self.clock, "no copy became the infinite tail"));
            };
            fired += 1;
            if fired > cap {
                return Err(EngineError::violation(ev.time, "post-horizon activity does not settle"));
            }
            self.clock = ev.time;
            self.fire(ev, &mut obs)?;
        }

        let log = ReplicationLog {
            intervals: self.intervals,
            transfers: self.transfers,
            horizon,
            serves: self.serves,
        };
        let report = finalize_costs(&log, &trace, &self.params);
        Ok((log, report))
    }

    fn schedule(&mut self, slot: usize, time: f64) {
        self.generation[slot] += 1;
        self.events.push(Reverse(ExpiryEvent { time, slot, generation: self.generation[slot] }));
    }

    fn is_live(&self, ev: &ExpiryEvent) -> bool {
        self.state.holds[ev.slot]
            && !self.state.keep[ev.slot]
            && self.generation[ev.slot] == ev.generation
    }

    fn drop_stale(&mut self) {
        while let Some(Reverse(ev)) = self.events.peek() {
            if self.is_live(ev) {
                break;
            }
            self.events.pop();
        }
    }

    fn pop_live_at_or_before(&mut self, t: f64) -> Option<ExpiryEvent> {
        self.drop_stale();
        match self.events.peek() {
            Some(Reverse(ev)) if ev.time <= t => self.events.pop().map(|Reverse(ev)| ev),
            _ => None,
        }
    }

    fn fire_before(&mut self, time: f64, obs: &mut StepObservation) -> Result<(), EngineError> {
        loop {
            self.drop_stale();
            match self.events.peek() {
                Some(Reverse(ev)) if ev.time < time => {
                    let ev = self.events.pop().expect("peeked").0;
                    self.clock = ev.time;
                    self.fire(ev, obs)?;
                }
                _ => return Ok(()),
            }
        }
    }

    fn fire(&mut self, ev: ExpiryEvent, obs: &mut StepObservation) -> Result<(), EngineError> {
        let server = ServerId::from_slot(ev.slot);
        let t = ev.time;
        let decision = self.policy.on_copy_expiry(server, t, &HoldingView { state: &self.state, now: t });
        if self.post_horizon && self.state.count == 1 && decision != ExpiryDecision::Drop {
            self.close(ev.slot, t);
            self.open[ev.slot] = Some((t, CopyKind::InfiniteTail));
            self.settle();
            return Ok(());
        }
        match decision {
            ExpiryDecision::Drop => {
                if self.state.count == 1 {
                    return Err(EngineError::violation(t, format!("{server} dropped the only copy")));
                }
                self.drop_copy(ev.slot, t);
                obs.events.push(StepEvent::Drop { server, time: t });
            }
            ExpiryDecision::Keep => {
                if self.state.count != 1 {
                    return Err(EngineError::violation(
                        t,
                        format!("{server} kept a copy past expiry while c = {}", self.state.count),
                    ));
                }
                self.close(ev.slot, t);
                self.open[ev.slot] = Some((t, CopyKind::Special));
                self.state.keep[ev.slot] = true;
                obs.events.push(StepEvent::Tag { server, time: t });
            }
            ExpiryDecision::Renew { until } => {
                if !(until.is_finite() && until > t) {
                    return Err(EngineError::violation(t, format!("renewal until {until}")));
                }
                self.close(ev.slot, t);
                self.open[ev.slot] = Some((t, CopyKind::Regular));
                self.state.expiry[ev.slot] = until;
                self.schedule(ev.slot, until);
                obs.events.push(StepEvent::Renew { server, time: t, until });
            }
            ExpiryDecision::PushTo { dst, dst_expiry } => {
                if dst.index() > self.n() || dst == server || self.state.holds[dst.slot()] {
                    return Err(EngineError::violation(t, format!("invalid push target {dst}")));
                }
                if !(dst_expiry.is_finite() && dst_expiry > t) {
                    return Err(EngineError::violation(t, format!("push expiry {dst_expiry}")));
                }
                self.transfers.push(Transfer { time: t, src: server, dst, serves: None });
                let d = dst.slot();
                self.state.holds[d] = true;
                self.state.count += 1;
                self.state.expiry[d] = dst_expiry;
                self.open[d] = Some((t, CopyKind::Regular));
                self.schedule(d, dst_expiry);
                self.drop_copy(ev.slot, t);
                obs.events.push(StepEvent::Push { src: server, dst, time: t });
            }
        }
        Ok(())
    }

    fn drop_copy(&mut self, slot: usize, t: f64) {
        self.close(slot, t);
        self.state.holds[slot] = false;
        self.state.keep[slot] = false;
        self.state.count -= 1;
        self.generation[slot] += 1;
    }

    fn close(&mut self, slot: usize, t: f64) {
        if let Some((start, kind)) = self.open[slot].take() {
            self.record(slot, start, t, kind);
        }
    }

    fn record(&mut self, slot: usize, start: f64, end: f64, kind: CopyKind) {
        if end > start {
            self.intervals.push(CopyInterval { server: ServerId::from_slot(slot), start, end, kind });
        }
    }

    fn settle(&mut self) {
        for slot in 0..self.n() {
            if let Some((start, CopyKind::InfiniteTail)) = self.open[slot].take() {
                self.intervals.push(CopyInterval {
                    server: ServerId::from_slot(slot),
                    start,
                    end: f64::INFINITY,
                    kind: CopyKind::InfiniteTail,
                });
            }
        }
        self.events.clear();
        self.settled = true;
    }
}

/// Simulates `policy` over the whole trace.
pub fn run<P: Policy>(
    trace: &RequestTrace,
    predictions: &PredictionStream,
    policy: P,
    params: &CostParams,
) -> Result<(ReplicationLog, CostReport), EngineError> {
    predictions.check_covers(trace)?;
    let mut session = Session::new(trace.n(), params.clone(), policy)?;
    for r in trace.requests() {
        session.inject_request(r.server, r.time, predictions.get(r.id))?;
    }
    session.finish()
}

/// Accounted costs of a log. Transfers cost `λ` each. Storage sums
/// `rate × duration` over regular and special intervals, leaving out the
/// regular copy created at the final request's server at the final request
/// and the infinite tail.
pub fn finalize_costs(log: &ReplicationLog, trace: &RequestTrace, params: &CostParams) -> CostReport {
    let last = trace.last();
    let mut storage = 0.0;
    let mut excluded_final_regular = 0.0;
    let mut excluded_infinite_tail = false;
    for iv in &log.intervals {
        let cost = params.rate(iv.server) * iv.duration();
        match iv.kind {
            CopyKind::InfiniteTail => excluded_infinite_tail = true,
            CopyKind::Regular if iv.server == last.server && iv.start == last.time => {
                excluded_final_regular += cost;
            }
            _ => storage += cost,
        }
    }
    let transfer_cost = params.lambda() * log.transfers.len() as f64;
    CostReport {
        storage_cost: storage,
        transfer_cost,
        total: storage + transfer_cost,
        excluded_final_regular,
        excluded_infinite_tail,
    }
}

/// Every instant of `[0, horizon]` is covered by some interval.
pub fn check_coverage(log: &ReplicationLog) -> Result<(), String> {
    let mut ivs: Vec<_> = log.intervals.iter().collect();
    ivs.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut covered = 0.0_f64;
    for iv in ivs {
        if iv.start > covered {
            if covered >= log.horizon {
                break;
            }
            return Err(format!("no copy during ({covered}, {})", iv.start));
        }
        covered = covered.max(iv.end);
    }
    if covered < log.horizon {
        return Err(format!("no copy after {covered}"));
    }
    Ok(())
}

/// Special intervals overlap neither each other nor any regular interval.
pub fn check_special_disjoint(log: &ReplicationLog) -> Result<(), String> {
    for (i, a) in log.intervals.iter().enumerate() {
        if a.kind != CopyKind::Special {
            continue;
        }
        for (j, b) in log.intervals.iter().enumerate() {
            if i == j || b.kind == CopyKind::InfiniteTail {
                continue;
            }
            if a.start < b.end && b.start < a.end {
                return Err(format!("special {a:?} overlaps {b:?}"));
            }
        }
    }
    Ok(())
}

/// Transfers leave from a holder to a different server; serving transfers
/// happen at the served request's time and server.
pub fn check_transfers(log: &ReplicationLog, trace: &RequestTrace) -> Result<(), String> {
    for tr in &log.transfers {
        if tr.src == tr.dst {
            return Err(format!("self transfer {tr:?}"));
        }
        let src_holds = log
            .intervals_of(tr.src)
            .any(|iv| iv.start <= tr.time && tr.time <= iv.end);
        if !src_holds {
            return Err(format!("source holds no copy for {tr:?}"));
        }
        if let Some(id) = tr.serves {
            let r = trace.requests().get(id).ok_or_else(|| format!("unknown request in {tr:?}"))?;
            if r.server != tr.dst || r.time != tr.time {
                return Err(format!("{tr:?} does not match request {r:?}"));
            }
        }
    }
    Ok(())
}

/// Writes intervals as `kind,server,start,end` rows, then transfers as
/// `transfer,src,dst,time,serves` rows. Infinity renders as `inf`.
pub fn write_log_csv<W: io::Write>(log: &ReplicationLog, out: W) -> io::Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(["kind", "server", "start", "end"])?;
    for iv in &log.intervals {
        w.write_record([
            iv.kind.as_str().to_string(),
            iv.server.index().to_string(),
            iv.start.to_string(),
            iv.end.to_string(),
        ])?;
    }
    for tr in &log.transfers {
        w.write_record([
            "transfer".to_string(),
            tr.src.index().to_string(),
            tr.dst.index().to_string(),
            tr.time.to_string(),
            tr.serves.map(|s| s.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()
}

/// Reads the interval and transfer rows written by [`write_log_csv`]. The
/// horizon and per-request outcomes are not part of the file.
pub fn read_log_csv<R: io::Read>(input: R) -> Result<ReplicationLog, String> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let mut log = ReplicationLog::default();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let field = |i: usize| rec.get(i).ok_or_else(|| format!("row {}: missing field {i}", line + 2));
        let num = |i: usize| -> Result<f64, String> {
            field(i)?.parse::<f64>().map_err(|e| format!("row {}: {e}", line + 2))
        };
        let server = |i: usize| -> Result<ServerId, String> {
            let v: usize = field(i)?.parse().map_err(|e| format!("row {}: {e}", line + 2))?;
            if v == 0 {
                return Err(format!("row {}: server 0", line + 2));
            }
            Ok(ServerId::new(v))
        };
        let kind = field(0)?;
        if kind == "transfer" {
            let serves = match field(4)? {
                "" => None,
                s => Some(s.parse().map_err(|e| format!("row {}: {e}", line + 2))?),
            };
            log.transfers.push(Transfer { src: server(1)?, dst: server(2)?, time: num(3)?, serves });
        } else {
            let kind = CopyKind::parse(kind).ok_or_else(|| format!("row {}: kind {kind}", line + 2))?;
            log.intervals.push(CopyInterval { kind, server: server(1)?, start: num(2)?, end: num(3)? });
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{ConventionalPolicy, PredictivePolicy};
    use Prediction::{BeyondLambda as B, WithinLambda as W};

    fn params(lambda: f64, n: usize) -> CostParams {
        CostParams::uniform(lambda, n).unwrap()
    }

    fn assert_log_invariants(log: &ReplicationLog, trace: &RequestTrace) {
        check_coverage(log).unwrap();
        check_special_disjoint(log).unwrap();
        check_transfers(log, trace).unwrap();
    }

    #[test]
    fn single_server_local_service() {
        let lambda = 100.0;
        let trace = RequestTrace::new(1, &[(1, 0.0), (1, 50.0)]).unwrap();
        let preds = PredictionStream::new(vec![W, B]);
        let (log, report) =
            run(&trace, &preds, PredictivePolicy::new(0.5, lambda).unwrap(), &params(lambda, 1)).unwrap();
        assert_eq!(log.serves[1], ServeOutcome::ServedLocally);
        assert!(log.transfers.is_empty());
        assert_eq!(report.total, 50.0);
        assert!(report.excluded_infinite_tail);
        assert_eq!(report.excluded_final_regular, 50.0);
        assert_log_invariants(&log, &trace);
    }

    #[test]
    fn r0_only_accounts_nothing() {
        let trace = RequestTrace::new(1, &[(1, 0.0)]).unwrap();
        let preds = PredictionStream::new(vec![B]);
        let (_, report) =
            run(&trace, &preds, ConventionalPolicy::new(10.0), &params(10.0, 1)).unwrap();
        assert_eq!(report.total, 0.0);
    }

    #[test]
    fn single_request_after_dummy_accounts_gap_only() {
        // r1 served locally from the copy kept since r0 (possibly special).
        let trace = RequestTrace::new(1, &[(1, 0.0), (1, 250.0)]).unwrap();
        let preds = PredictionStream::new(vec![B, B]);
        let (log, report) =
            run(&trace, &preds, PredictivePolicy::new(0.2, 100.0).unwrap(), &params(100.0, 1)).unwrap();
        assert!((report.storage_cost - 250.0).abs() < 1e-12);
        assert_eq!(report.transfer_cost, 0.0);
        assert_log_invariants(&log, &trace);
    }

    #[test]
    fn expiry_fires_on_step_with_other_copy_present() {
        let p = params(10.0, 2);
        let mut s = Session::new(2, p, ConventionalPolicy::new(10.0)).unwrap();
        s.inject_request(ServerId::new(1), 0.0, W).unwrap();
        // s2 served at 1 by transfer, copy at s1 expires at 10, s2 at 11.
        s.inject_request(ServerId::new(2), 1.0, W).unwrap();
        let obs = s.step_until(10.5).unwrap();
        assert_eq!(obs.events, vec![StepEvent::Drop { server: ServerId::new(1), time: 10.0 }]);
        let obs = s.step_until(12.0).unwrap();
        assert_eq!(obs.events, vec![StepEvent::Tag { server: ServerId::new(2), time: 11.0 }]);
        assert!(s.step_until(12.0).unwrap().is_empty());
    }

    #[test]
    fn sole_copy_is_tagged_not_dropped() {
        let mut s = Session::new(2, params(7.0, 2), ConventionalPolicy::new(7.0)).unwrap();
        s.inject_request(ServerId::new(1), 0.0, W).unwrap();
        let obs = s.step_until(8.0).unwrap();
        assert_eq!(obs.events, vec![StepEvent::Tag { server: ServerId::new(1), time: 7.0 }]);
        assert!(s.view().keep_tag(ServerId::new(1)));
    }

    #[test]
    fn transfer_from_special_drops_it() {
        let mut s = Session::new(2, params(7.0, 2), ConventionalPolicy::new(7.0)).unwrap();
        s.inject_request(ServerId::new(1), 0.0, W).unwrap();
        s.step_until(8.0).unwrap();
        let out = s.inject_request(ServerId::new(2), 9.0, B).unwrap();
        assert_eq!(out, ServeOutcome::ServedByTransfer { src: ServerId::new(1) });
        assert!(!s.view().holds(ServerId::new(1)));
        assert_eq!(s.view().copy_count(), 1);
    }

    #[test]
    fn local_service_with_live_copy() {
        let mut s = Session::new(2, params(10.0, 2), ConventionalPolicy::new(10.0)).unwrap();
        s.inject_request(ServerId::new(1), 0.0, W).unwrap();
        let out = s.inject_request(ServerId::new(1), 3.0, W).unwrap();
        assert_eq!(out, ServeOutcome::ServedLocally);
    }

    #[test]
    fn time_regression_is_rejected() {
        let mut s = Session::new(2, params(10.0, 2), ConventionalPolicy::new(10.0)).unwrap();
        s.inject_request(ServerId::new(1), 0.0, W).unwrap();
        s.inject_request(ServerId::new(2), 4.0, W).unwrap();
        let err = s.inject_request(ServerId::new(1), 4.0, W).unwrap_err();
        assert!(matches!(err, EngineError::TimeRegression { .. }));
        let err = s.inject_request(ServerId::new(1), 3.0, W).unwrap_err();
        assert!(matches!(err, EngineError::TimeRegression { .. }));
        s.step_until(6.0).unwrap();
        assert!(matches!(s.step_until(5.0), Err(EngineError::TimeRegression { .. })));
    }

    #[test]
    fn request_at_expiry_instant_is_local() {
        let trace = RequestTrace::new(1, &[(1, 0.0), (1, 10.0)]).unwrap();
        let preds = PredictionStream::uniform(2, W);
        let (log, _) = run(&trace, &preds, ConventionalPolicy::new(10.0), &params(10.0, 1)).unwrap();
        assert_eq!(log.serves[1], ServeOutcome::ServedLocally);
    }

    #[test]
    fn batch_equals_interactive_with_interleaved_steps() {
        let trace =
            RequestTrace::new(3, &[(1, 0.0), (2, 3.0), (3, 9.0), (1, 30.0), (2, 31.0), (2, 55.0)])
                .unwrap();
        let preds = PredictionStream::new(vec![B, W, B, W, B, B]);
        let p = params(10.0, 3);
        let batch = run(&trace, &preds, PredictivePolicy::new(0.3, 10.0).unwrap(), &p).unwrap();

        let mut s = Session::new(3, p, PredictivePolicy::new(0.3, 10.0).unwrap()).unwrap();
        for r in trace.requests() {
            if r.id > 0 {
                s.step_until(r.time - 0.5).unwrap();
            }
            s.inject_request(r.server, r.time, preds.get(r.id)).unwrap();
        }
        assert_eq!(batch, s.finish().unwrap());
    }

    #[test]
    fn log_csv_round_trip() {
        let trace = RequestTrace::new(2, &[(1, 0.0), (2, 1.0), (1, 20.0)]).unwrap();
        let preds = PredictionStream::uniform(3, B);
        let (log, _) = run(&trace, &preds, ConventionalPolicy::new(5.0), &params(5.0, 2)).unwrap();
        let mut buf = Vec::new();
        write_log_csv(&log, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("kind,server,start,end\n"));
        assert!(text.contains(",inf\n"));
        assert!(text.contains("transfer,1,2,1,1\n"));
        let back = read_log_csv(buf.as_slice()).unwrap();
        assert_eq!(back.intervals, log.intervals);
        assert_eq!(back.transfers, log.transfers);
    }
}
