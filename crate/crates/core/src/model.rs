//! Domain types shared by every module: servers, requests, traces,
//! predictions, copy intervals, transfers and cost reports.

use std::fmt;

use crate::error::ModelError;

/// A 1-based server index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServerId(usize);

impl ServerId {
    /// Server 1, which holds the initial copy.
    pub const FIRST: ServerId = ServerId(1);

    /// Panics on index 0; use [`ServerId::checked`] for untrusted input.
    pub fn new(index: usize) -> Self {
        assert!(index >= 1, "server indices are 1-based");
        ServerId(index)
    }

    pub fn checked(index: usize, n: usize) -> Result<Self, ModelError> {
        if index == 0 || index > n {
            return Err(ModelError::ServerOutOfRange { server: index, n });
        }
        Ok(ServerId(index))
    }

    pub fn index(self) -> usize {
        self.0
    }

    /// Zero-based slot for per-server arrays.
    pub fn slot(self) -> usize {
        self.0 - 1
    }

    pub fn from_slot(slot: usize) -> Self {
        ServerId(slot + 1)
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Transfer cost and per-server storage rates.
#[derive(Debug, Clone, PartialEq)]
pub struct CostParams {
    lambda: f64,
    storage_rates: Vec<f64>,
}

impl CostParams {
    /// Unit storage rate at every server.
    pub fn uniform(lambda: f64, n: usize) -> Result<Self, ModelError> {
        Self::with_rates(lambda, vec![1.0; n])
    }

    pub fn with_rates(lambda: f64, storage_rates: Vec<f64>) -> Result<Self, ModelError> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(ModelError::BadLambda(lambda));
        }
        if let Some((slot, &rate)) = storage_rates
            .iter()
            .enumerate()
            .find(|(_, r)| !(r.is_finite() && **r > 0.0))
        {
            return Err(ModelError::BadRate { server: slot + 1, rate });
        }
        Ok(CostParams { lambda, storage_rates })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.storage_rates.len()
    }

    pub fn rate(&self, server: ServerId) -> f64 {
        self.storage_rates[server.slot()]
    }

    pub fn storage_rates(&self) -> &[f64] {
        &self.storage_rates
    }

    pub fn is_unit_rate(&self) -> bool {
        self.storage_rates.iter().all(|&r| r == 1.0)
    }

    pub(crate) fn require_unit_rate(&self) -> Result<(), ModelError> {
        if self.is_unit_rate() {
            Ok(())
        } else {
            Err(ModelError::NonUniformRates)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Request {
    pub id: usize,
    pub server: ServerId,
    pub time: f64,
}

/// An ordered request sequence that starts with the dummy request r0 at
/// server 1, time 0. Construct through [`RequestTrace::new`], which
/// validates.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestTrace {
    n: usize,
    requests: Vec<Request>,
}

impl RequestTrace {
    /// Builds a trace from `(server, time)` pairs, the first of which must
    /// be the dummy `(1, 0.0)`.
    pub fn new(n: usize, entries: &[(usize, f64)]) -> Result<Self, ModelError> {
        let mut requests = Vec::with_capacity(entries.len());
        for (id, &(server, time)) in entries.iter().enumerate() {
            if id == 0 && (server != 1 || time != 0.0) {
                return Err(ModelError::BadDummy);
            }
            let server = ServerId::checked(server, n)?;
            requests.push(Request { id, server, time });
        }
        validate_trace(RequestTrace { n, requests })
    }

    /// Builds a trace from the real requests only; r0 is prepended.
    pub fn from_requests(n: usize, real: &[(usize, f64)]) -> Result<Self, ModelError> {
        let mut entries = Vec::with_capacity(real.len() + 1);
        entries.push((1, 0.0));
        entries.extend_from_slice(real);
        Self::new(n, &entries)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests
    }

    /// Index of the final request (m).
    pub fn last_index(&self) -> usize {
        self.requests.len() - 1
    }

    pub fn last(&self) -> &Request {
        self.requests.last().expect("trace always contains r0")
    }

    pub fn horizon(&self) -> f64 {
        self.last().time
    }

    /// First `len` requests including r0.
    pub fn prefix(&self, len: usize) -> RequestTrace {
        let len = len.clamp(1, self.requests.len());
        RequestTrace { n: self.n, requests: self.requests[..len].to_vec() }
    }

    /// For every request, the index of the preceding request at the same
    /// server (p(i)), if any.
    pub fn previous_at_server(&self) -> Vec<Option<usize>> {
        let mut last = vec![None; self.n];
        self.requests
            .iter()
            .map(|r| last[r.server.slot()].replace(r.id))
            .collect()
    }

    /// For every request, the index of the next request at the same
    /// server, if any.
    pub fn next_at_server(&self) -> Vec<Option<usize>> {
        let mut next = vec![None; self.requests.len()];
        let mut last: Vec<Option<usize>> = vec![None; self.n];
        for r in self.requests.iter().rev() {
            next[r.id] = last[r.server.slot()];
            last[r.server.slot()] = Some(r.id);
        }
        next
    }
}

/// Checks every trace invariant: dummy request, server range and strictly
/// increasing times.
pub fn validate_trace(trace: RequestTrace) -> Result<RequestTrace, ModelError> {
    let first = trace.requests.first().ok_or(ModelError::BadDummy)?;
    if first.id != 0 || first.server != ServerId::FIRST || first.time != 0.0 {
        return Err(ModelError::BadDummy);
    }
    for (i, r) in trace.requests.iter().enumerate() {
        if r.id != i {
            return Err(ModelError::BadRequestId { position: i, id: r.id });
        }
        if r.server.index() > trace.n {
            return Err(ModelError::ServerOutOfRange { server: r.server.index(), n: trace.n });
        }
        if !r.time.is_finite() || r.time < 0.0 {
            return Err(ModelError::BadTime { id: i, time: r.time });
        }
    }
    if let Some(w) = trace.requests.windows(2).find(|w| w[1].time <= w[0].time) {
        return Err(ModelError::NonMonotoneTimes { id: w[1].id, prev: w[0].time, time: w[1].time });
    }
    Ok(trace)
}

/// Binary forecast of the next same-server inter-request time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Prediction {
    WithinLambda,
    BeyondLambda,
}

impl Prediction {
    pub fn negate(self) -> Self {
        match self {
            Prediction::WithinLambda => Prediction::BeyondLambda,
            Prediction::BeyondLambda => Prediction::WithinLambda,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Prediction::WithinLambda => "within",
            Prediction::BeyondLambda => "beyond",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "within" => Some(Prediction::WithinLambda),
            "beyond" => Some(Prediction::BeyondLambda),
            _ => None,
        }
    }
}

/// One prediction per request id, r0 included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionStream(Vec<Prediction>);

impl PredictionStream {
    pub fn new(predictions: Vec<Prediction>) -> Self {
        PredictionStream(predictions)
    }

    pub fn uniform(len: usize, value: Prediction) -> Self {
        PredictionStream(vec![value; len])
    }

    pub fn get(&self, id: usize) -> Prediction {
        self.0[id]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Prediction] {
        &self.0
    }

    pub fn set(&mut self, id: usize, value: Prediction) {
        self.0[id] = value;
    }

    pub(crate) fn check_covers(&self, trace: &RequestTrace) -> Result<(), ModelError> {
        if self.0.len() != trace.requests().len() {
            return Err(ModelError::PredictionCount {
                expected: trace.requests().len(),
                got: self.0.len(),
            });
        }
        Ok(())
    }
}

/// Perfect predictions: `WithinLambda` iff the next request at the same
/// server arrives no later than `t_i + λ`. A request without a successor at
/// its server is `BeyondLambda`.
pub fn ground_truth_predictions(trace: &RequestTrace, params: &CostParams) -> PredictionStream {
    let next = trace.next_at_server();
    let reqs = trace.requests();
    let preds = reqs
        .iter()
        .map(|r| match next[r.id] {
            Some(j) if reqs[j].time <= r.time + params.lambda() => Prediction::WithinLambda,
            _ => Prediction::BeyondLambda,
        })
        .collect();
    PredictionStream(preds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CopyKind {
    Regular,
    Special,
    InfiniteTail,
}

impl CopyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CopyKind::Regular => "regular",
            CopyKind::Special => "special",
            CopyKind::InfiniteTail => "infinite_tail",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "regular" => Some(CopyKind::Regular),
            "special" => Some(CopyKind::Special),
            "infinite_tail" => Some(CopyKind::InfiniteTail),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopyInterval {
    pub server: ServerId,
    pub start: f64,
    /// `f64::INFINITY` for the infinite tail.
    pub end: f64,
    pub kind: CopyKind,
}

impl CopyInterval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Half-open on the left: the copy covers `(start, end]`.
    pub fn covers(&self, t: f64) -> bool {
        self.start < t && t <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transfer {
    pub time: f64,
    pub src: ServerId,
    pub dst: ServerId,
    /// The request served by this transfer. `None` for policy-initiated
    /// moves that serve nothing (the Wang baseline pushes back to s1).
    pub serves: Option<usize>,
}

/// Whether a request was served by the local copy or a transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ServeOutcome {
    ServedLocally,
    ServedByTransfer { src: ServerId },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReplicationLog {
    pub intervals: Vec<CopyInterval>,
    pub transfers: Vec<Transfer>,
    pub horizon: f64,
    /// Per-request outcome, indexed by request id.
    pub serves: Vec<ServeOutcome>,
}

impl ReplicationLog {
    pub fn intervals_of(&self, server: ServerId) -> impl Iterator<Item = &CopyInterval> {
        self.intervals.iter().filter(move |iv| iv.server == server)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub storage_cost: f64,
    pub transfer_cost: f64,
    pub total: f64,
    /// Storage cost of the regular copy created at the final request's
    /// server after the final request, left out of `total`.
    pub excluded_final_regular: f64,
    pub excluded_infinite_tail: bool,
}

/// Relative comparison used for cost equalities throughout the crate.
pub fn approx_eq(a: f64, b: f64, rel: f64) -> bool {
    let scale = a.abs().max(b.abs()).max(1.0);
    (a - b).abs() <= rel * scale
}
