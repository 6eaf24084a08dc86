//! Trace and prediction sources: the tight examples, the counterexample for
//! the Wang baseline, the interactive lower-bound adversary, ingestion of
//! object-store access logs, random traces and accuracy-controlled
//! predictions.

use std::fmt;
use std::io::{self, BufRead};
use std::path::PathBuf;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::{Policy, Session};
use crate::error::GeneratorError;
use crate::model::{
    ground_truth_predictions, CostParams, CostReport, Prediction, PredictionStream, ReplicationLog,
    RequestTrace, ServerId,
};

/// Spacing used to break ties between equal timestamps in ingested traces.
pub const INGEST_DELTA: f64 = 1e-6;

fn bad(msg: impl Into<String>) -> GeneratorError {
    GeneratorError::BadParameter(msg.into())
}

fn check_common(lambda: f64, epsilon: f64) -> Result<(), GeneratorError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(bad(format!("lambda must be positive, got {lambda}")));
    }
    if !(epsilon.is_finite() && epsilon > 0.0 && epsilon < lambda) {
        return Err(bad(format!("epsilon must lie in (0, lambda), got {epsilon}")));
    }
    Ok(())
}

/// The three hand-built instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticSpec {
    RobustnessTight { alpha: f64, lambda: f64, epsilon: f64, m: usize },
    ConsistencyTight { alpha: f64, lambda: f64, epsilon: f64, cycles: usize },
    WangCounterexample { lambda: f64, epsilon: f64, m: usize },
}

impl SyntheticSpec {
    pub fn generate(&self) -> Result<(RequestTrace, PredictionStream), GeneratorError> {
        match *self {
            SyntheticSpec::RobustnessTight { alpha, lambda, epsilon, m } => {
                make_robustness_tight(alpha, lambda, epsilon, m)
            }
            SyntheticSpec::ConsistencyTight { alpha, lambda, epsilon, cycles } => {
                make_consistency_tight(alpha, lambda, epsilon, cycles)
            }
            SyntheticSpec::WangCounterexample { lambda, epsilon, m } => {
                let trace = make_wang_counterexample(lambda, epsilon, m)?;
                let preds = PredictionStream::uniform(trace.requests().len(), Prediction::BeyondLambda);
                Ok((trace, preds))
            }
        }
    }
}

/// Two servers requested alternately, each with inter-request time
/// `αλ + ε`, and every prediction `BeyondLambda` (wrong whenever `α < 1`).
/// Requests r1..r_m follow the dummy.
pub fn make_robustness_tight(
    alpha: f64,
    lambda: f64,
    epsilon: f64,
    m: usize,
) -> Result<(RequestTrace, PredictionStream), GeneratorError> {
    check_common(lambda, epsilon)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(bad(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if alpha < 1.0 && epsilon >= (1.0 - alpha) * lambda {
        return Err(bad("epsilon must stay below (1 - alpha) * lambda"));
    }
    if m < 2 {
        return Err(bad("robustness example needs m >= 2"));
    }
    let gap = alpha * lambda + epsilon;
    let entries: Vec<(usize, f64)> = (0..=m)
        .map(|j| {
            let base = (j / 2) as f64 * gap;
            if j % 2 == 0 { (1, base) } else { (2, base + epsilon) }
        })
        .collect();
    let trace = RequestTrace::new(2, &entries)?;
    let preds = PredictionStream::uniform(m + 1, Prediction::BeyondLambda);
    Ok((trace, preds))
}

/// Repeated three-request cycles on two servers with all predictions
/// `BeyondLambda`, which are correct. Each cycle's last request opens the
/// next cycle at the other server.
pub fn make_consistency_tight(
    alpha: f64,
    lambda: f64,
    epsilon: f64,
    cycles: usize,
) -> Result<(RequestTrace, PredictionStream), GeneratorError> {
    check_common(lambda, epsilon)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(bad(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    if cycles == 0 {
        return Err(bad("consistency example needs at least one cycle"));
    }
    let mut entries = vec![(1, 0.0)];
    for c in 0..cycles {
        let start = c as f64 * (2.0 * lambda + epsilon);
        let (home, other) = if c % 2 == 0 { (1, 2) } else { (2, 1) };
        entries.push((other, start + lambda));
        entries.push((home, start + lambda + epsilon));
        entries.push((other, start + 2.0 * lambda + epsilon));
    }
    let trace = RequestTrace::new(2, &entries)?;
    let params = CostParams::uniform(lambda, 2)?;
    let preds = ground_truth_predictions(&trace, &params);
    debug_assert!(preds.as_slice().iter().all(|p| *p == Prediction::BeyondLambda));
    Ok((trace, preds))
}

/// One request at s1 (the dummy), then requests at s2 spaced `2λ + ε`
/// apart after an initial `ε`; `m` counts the s1 request too.
pub fn make_wang_counterexample(lambda: f64, epsilon: f64, m: usize) -> Result<RequestTrace, GeneratorError> {
    check_common(lambda, epsilon)?;
    if m < 3 {
        return Err(bad("counterexample needs m >= 3"));
    }
    let mut entries = vec![(1, 0.0)];
    for k in 2..=m {
        entries.push((2, 2.0 * (k - 2) as f64 * lambda + (k - 1) as f64 * epsilon));
    }
    Ok(RequestTrace::new(2, &entries)?)
}

/// A scripted four-server run (λ = 10, α = 0.5) that produces every
/// request type: r1..r9 are typed 1,1,1,2,1,2,3,1,4 by the predictive
/// policy. Returns the trace, predictions, α and λ.
pub fn make_allocation_walkthrough() -> (RequestTrace, PredictionStream, f64, f64) {
    use Prediction::{BeyondLambda as B, WithinLambda as W};
    let entries = [
        (1, 0.0),
        (2, 1.0),
        (3, 2.0),
        (4, 3.0),
        (1, 12.0),
        (3, 13.0),
        (2, 25.0),
        (2, 27.0),
        (4, 29.0),
        (2, 40.0),
    ];
    let trace = RequestTrace::new(4, &entries).expect("scripted trace is valid");
    let preds = PredictionStream::new(vec![B, B, B, B, B, W, W, W, B, B]);
    (trace, preds, 0.5, 10.0)
}

/// How the adversary placed a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdversaryKind {
    /// The other server holds no copy `λ + ε` after its last request.
    K1a,
    /// The other server holds no copy `ε` after the previous request.
    K1b,
    /// The other server dropped its copy inside the watch window.
    K1c,
    /// The other server kept its copy throughout; the previous server is
    /// requested again.
    K2,
}

impl fmt::Display for AdversaryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AdversaryKind::K1a => "K1a",
            AdversaryKind::K1b => "K1b",
            AdversaryKind::K1c => "K1c",
            AdversaryKind::K2 => "K2",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct AdversaryOutcome {
    pub trace: RequestTrace,
    pub predictions: PredictionStream,
    pub log: ReplicationLog,
    pub report: CostReport,
    /// Per request; `None` for the two fixed opening requests.
    pub kinds: Vec<Option<AdversaryKind>>,
}

/// Drives `policy` on two servers, choosing each next request from the
/// policy's observed behavior so that it pays as much as possible. Every
/// fed prediction is `BeyondLambda`, which the construction keeps correct.
pub fn run_adversary<P: Policy>(
    policy: P,
    lambda: f64,
    epsilon: f64,
    m: usize,
) -> Result<AdversaryOutcome, GeneratorError> {
    check_common(lambda, epsilon)?;
    if m < 2 {
        return Err(bad("adversary needs m >= 2"));
    }
    let params = CostParams::uniform(lambda, 2)?;
    let beyond = Prediction::BeyondLambda;
    let mut session = Session::new(2, params.clone(), policy)?;
    session.inject_request(ServerId::FIRST, 0.0, beyond)?;
    session.inject_request(ServerId::new(2), epsilon, beyond)?;
    let mut kinds = vec![None, None];
    // (server, time) of every request so far.
    let mut emitted = vec![(ServerId::FIRST, 0.0), (ServerId::new(2), epsilon)];

    for _ in 2..=m {
        let &(prev_server, prev_time) = emitted.last().expect("two opening requests");
        let s = if prev_server == ServerId::FIRST { ServerId::new(2) } else { ServerId::FIRST };
        let last_at_s = emitted.iter().rev().find(|(srv, _)| *srv == s).map(|&(_, t)| t).expect("both servers requested");
        let after_gap = last_at_s + lambda + epsilon;
        let t_prime = (prev_time + epsilon).max(after_gap);
        session.step_until(t_prime)?;

        let (server, time, kind) = if !session.view().holds(s) {
            let kind = if t_prime == after_gap { AdversaryKind::K1a } else { AdversaryKind::K1b };
            (s, t_prime, kind)
        } else {
            let limit = prev_time + lambda;
            let mut dropped = None;
            while let Some(obs) = session.step_next(limit)? {
                if let Some(t) = obs.dropped(s) {
                    dropped = Some(t);
                    break;
                }
            }
            match dropped {
                Some(t) => (s, t + epsilon, AdversaryKind::K1c),
                None => (prev_server, prev_time + lambda + epsilon, AdversaryKind::K2),
            }
        };
        session.inject_request(server, time, beyond)?;
        emitted.push((server, time));
        kinds.push(Some(kind));
    }
    let (log, report) = session.finish()?;
    let entries: Vec<(usize, f64)> = emitted.iter().map(|&(s, t)| (s.index(), t)).collect();
    let trace = RequestTrace::new(2, &entries)?;
    let predictions = PredictionStream::uniform(entries.len(), beyond);
    Ok(AdversaryOutcome { trace, predictions, log, report, kinds })
}

/// Column layout and filters for an access-log file.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestConfig {
    pub source: PathBuf,
    /// Zero-based column indices.
    pub timestamp_col: usize,
    pub op_col: usize,
    pub object_col: usize,
    /// A record is a read when its operation field contains this string.
    pub read_marker: String,
    /// Keep only records for this object id, if set.
    pub object: Option<String>,
    /// Multiplier from raw timestamp units to seconds.
    pub time_scale: f64,
    pub n: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
    /// Keep at most this many reads.
    pub limit: Option<usize>,
}

impl IngestConfig {
    /// Defaults for `<ms timestamp> <operation> <object id> ...` lines.
    pub fn new(source: impl Into<PathBuf>, n: usize, seed: u64) -> Self {
        IngestConfig {
            source: source.into(),
            timestamp_col: 0,
            op_col: 1,
            object_col: 2,
            read_marker: "GET".to_string(),
            object: None,
            time_scale: 1e-3,
            n,
            zipf_exponent: 1.0,
            seed,
            limit: None,
        }
    }
}

/// Reads `config.source` and builds a trace; see [`ingest_reader`].
pub fn ingest_trace(config: &IngestConfig) -> Result<RequestTrace, GeneratorError> {
    let file = std::fs::File::open(&config.source)?;
    ingest_reader(io::BufReader::new(file), config)
}

/// Parses whitespace- or comma-separated records, keeps reads, converts
/// timestamps to seconds since the first record, forces strictly
/// increasing times after the dummy at 0 (a tie moves to `δ` after its
/// predecessor), and draws each request's server from a Zipf law.
pub fn ingest_reader<R: BufRead>(input: R, config: &IngestConfig) -> Result<RequestTrace, GeneratorError> {
    if config.n == 0 {
        return Err(bad("server count must be positive"));
    }
    if !(config.time_scale.is_finite() && config.time_scale > 0.0) {
        return Err(bad(format!("time scale must be positive, got {}", config.time_scale)));
    }
    let need = config.timestamp_col.max(config.op_col).max(config.object_col) + 1;
    let mut origin: Option<f64> = None;
    let mut raw = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parse_err = |message: String| GeneratorError::ParseError { line: idx + 1, message };
        if fields.len() < need {
            return Err(parse_err(format!("expected at least {need} fields, found {}", fields.len())));
        }
        let ts: f64 = fields[config.timestamp_col]
            .parse()
            .map_err(|e| parse_err(format!("bad timestamp {:?}: {e}", fields[config.timestamp_col])))?;
        if !ts.is_finite() {
            return Err(parse_err(format!("bad timestamp {ts}")));
        }
        let origin = *origin.get_or_insert(ts);
        if !fields[config.op_col].contains(config.read_marker.as_str()) {
            continue;
        }
        if config.object.as_deref().is_some_and(|o| o != fields[config.object_col]) {
            continue;
        }
        if ts < origin {
            return Err(parse_err("timestamps must not decrease".to_string()));
        }
        raw.push((ts - origin) * config.time_scale);
        if config.limit.is_some_and(|l| raw.len() >= l) {
            break;
        }
    }
    if raw.is_empty() {
        return Err(GeneratorError::EmptyAfterFilter);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let zipf = zipf_weights(config.n, config.zipf_exponent)?;
    let mut entries = Vec::with_capacity(raw.len() + 1);
    entries.push((1, 0.0));
    let mut prev = 0.0_f64;
    for t in raw {
        let t = t.max(prev + INGEST_DELTA);
        entries.push((zipf.sample(&mut rng) + 1, t));
        prev = t;
    }
    Ok(RequestTrace::new(config.n, &entries)?)
}

fn zipf_weights(n: usize, exponent: f64) -> Result<WeightedIndex<f64>, GeneratorError> {
    if !(exponent.is_finite() && exponent >= 0.0) {
        return Err(bad(format!("zipf exponent must be non-negative, got {exponent}")));
    }
    WeightedIndex::new((1..=n).map(|i| (i as f64).powf(-exponent))).map_err(|e| bad(e.to_string()))
}

/// Emits the ground truth with probability `accuracy`, its negation
/// otherwise, independently per request.
pub fn synthesize_predictions(
    trace: &RequestTrace,
    params: &CostParams,
    accuracy: f64,
    seed: u64,
) -> Result<PredictionStream, GeneratorError> {
    if !(0.0..=1.0).contains(&accuracy) {
        return Err(bad(format!("accuracy must lie in [0, 1], got {accuracy}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = ground_truth_predictions(trace, params);
    let preds = truth
        .as_slice()
        .iter()
        .map(|p| if rng.gen_bool(accuracy) { *p } else { p.negate() })
        .collect();
    Ok(PredictionStream::new(preds))
}

/// A seeded random trace on `n` servers with `m` requests after the dummy.
/// Gaps mix scales well below, around and above `λ`; servers follow a
/// Zipf law with exponent 1 so that some servers repeat often.
pub fn random_trace(n: usize, m: usize, lambda: f64, seed: u64) -> Result<RequestTrace, GeneratorError> {
    if n == 0 {
        return Err(bad("server count must be positive"));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(bad(format!("lambda must be positive, got {lambda}")));
    }
    const SCALES: [f64; 6] = [0.05, 0.3, 0.8, 1.0, 1.5, 3.0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = zipf_weights(n, 1.0)?;
    let mut entries = Vec::with_capacity(m + 1);
    entries.push((1, 0.0));
    let mut t = 0.0;
    for _ in 0..m {
        let scale = SCALES[rng.gen_range(0..SCALES.len())];
        // Exact λ-multiples now and then exercise the boundary rules.
        let gap = if rng.gen_bool(0.05) { lambda * scale } else { lambda * scale * rng.gen_range(0.5..1.5) };
        t += gap;
        entries.push((zipf.sample(&mut rng) + 1, t));
    }
    Ok(RequestTrace::new(n, &entries)?)
}

/// Writes a native trace: `# n=<count>`, then `time,server` rows including
/// the dummy.
pub fn write_trace_csv<W: io::Write>(trace: &RequestTrace, mut out: W) -> io::Result<()> {
    writeln!(out, "# n={}", trace.n())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "server"])?;
    for r in trace.requests() {
        w.write_record([r.time.to_string(), r.server.index().to_string()])?;
    }
    w.flush()
}

/// Reads a native trace. Without the `# n=` line the server count is the
/// largest index seen.
pub fn read_trace_csv<R: BufRead>(input: R) -> Result<RequestTrace, GeneratorError> {
    let mut n = None;
    let mut entries = Vec::new();
    let mut header_seen = false;
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        let parse_err = |message: String| GeneratorError::ParseError { line: idx + 1, message };
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("n=") {
                n = Some(v.trim().parse::<usize>().map_err(|e| parse_err(format!("bad server count: {e}")))?);
            }
            continue;
        }
        if !header_seen {
            header_seen = true;
            if trimmed.replace(' ', "") == "time,server" {
                continue;
            }
        }
        let (t, s) = trimmed.split_once(',').ok_or_else(|| parse_err("expected time,server".to_string()))?;
        let t: f64 = t.trim().parse().map_err(|e| parse_err(format!("bad time: {e}")))?;
        let s: usize = s.trim().parse().map_err(|e| parse_err(format!("bad server: {e}")))?;
        entries.push((s, t));
    }
    let n = n.unwrap_or_else(|| entries.iter().map(|&(s, _)| s).max().unwrap_or(1));
    if entries.first() != Some(&(1, 0.0)) {
        entries.insert(0, (1, 0.0));
    }
    Ok(RequestTrace::new(n, &entries)?)
}

/// Writes `request_id,prediction` rows with `within|beyond` values.
pub fn write_predictions_csv<W: io::Write>(preds: &PredictionStream, out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["request_id", "prediction"])?;
    for (id, p) in preds.as_slice().iter().enumerate() {
        w.write_record([id.to_string(), p.as_str().to_string()])?;
    }
    w.flush()
}

/// Reads a prediction file. Ids must run 0, 1, 2, ... in order.
pub fn read_predictions_csv<R: io::Read>(input: R) -> Result<PredictionStream, GeneratorError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut preds = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec.map_err(|e| GeneratorError::ParseError { line, message: e.to_string() })?;
        let parse_err = |message: String| GeneratorError::ParseError { line, message };
        let id: usize = rec.get(0).unwrap_or("").parse().map_err(|e| parse_err(format!("bad request id: {e}")))?;
        if id != preds.len() {
            return Err(parse_err(format!("expected request id {}, found {id}", preds.len())));
        }
        let value = rec.get(1).unwrap_or("");
        let p = Prediction::parse(value).ok_or_else(|| parse_err(format!("bad prediction {value:?}")))?;
        preds.push(p);
    }
    Ok(PredictionStream::new(preds))
}
