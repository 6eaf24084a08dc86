//! Replication policies: the prediction-driven policy with distrust
//! parameter α, the conventional λ-hold policy, the adaptive variant that
//! bounds its own cost ratio, and the Wang et al. baseline.

use crate::engine::{
    ExpiryDecision, HoldingView, Policy, PostTransferDecision, ServeDecision, ServeSource,
};
use crate::error::ModelError;
use crate::model::{CostParams, Prediction, Request, ServerId};

fn serve_source(server: ServerId, view: &HoldingView<'_>) -> ServeSource {
    if view.holds(server) {
        ServeSource::Local
    } else {
        ServeSource::Transfer(view.default_source().expect("at least one copy exists"))
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<f64, ModelError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(alpha)
    } else {
        Err(ModelError::BadAlpha(alpha))
    }
}

/// Hold for `λ` after a request predicted to recur within `λ`, otherwise
/// for `αλ`. The copy whose hold ends last is kept as a special copy until
/// the next request anywhere.
#[derive(Debug, Clone)]
pub struct PredictivePolicy {
    alpha: f64,
    lambda: f64,
}

impl PredictivePolicy {
    pub fn new(alpha: f64, lambda: f64) -> Result<Self, ModelError> {
        Ok(PredictivePolicy { alpha: check_alpha(alpha)?, lambda })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Intended hold length after a request with the given prediction.
pub fn intended_duration(prediction: Prediction, alpha: f64, lambda: f64) -> f64 {
    match prediction {
        Prediction::WithinLambda => lambda,
        Prediction::BeyondLambda => alpha * lambda,
    }
}

fn keep_if_sole(view: &HoldingView<'_>) -> ExpiryDecision {
    if view.copy_count() == 1 {
        ExpiryDecision::Keep
    } else {
        ExpiryDecision::Drop
    }
}

fn drop_if_tagged(server: ServerId, view: &HoldingView<'_>) -> PostTransferDecision {
    if view.keep_tag(server) {
        PostTransferDecision::Drop
    } else {
        PostTransferDecision::Keep
    }
}

impl Policy for PredictivePolicy {
    fn name(&self) -> &str {
        "predictive"
    }

    fn on_request(
        &mut self,
        request: &Request,
        prediction: Prediction,
        view: &HoldingView<'_>,
    ) -> ServeDecision {
        ServeDecision {
            source: serve_source(request.server, view),
            new_expiry: request.time + intended_duration(prediction, self.alpha, self.lambda),
        }
    }

    fn on_copy_expiry(&mut self, _: ServerId, _: f64, view: &HoldingView<'_>) -> ExpiryDecision {
        keep_if_sole(view)
    }

    fn on_outgoing_transfer(
        &mut self,
        server: ServerId,
        _: f64,
        view: &HoldingView<'_>,
    ) -> PostTransferDecision {
        drop_if_tagged(server, view)
    }
}

/// The predictive policy with α = 1: every hold lasts `λ`.
#[derive(Debug, Clone)]
pub struct ConventionalPolicy(PredictivePolicy);

impl ConventionalPolicy {
    pub fn new(lambda: f64) -> Self {
        ConventionalPolicy(PredictivePolicy { alpha: 1.0, lambda })
    }
}

impl Policy for ConventionalPolicy {
    fn name(&self) -> &str {
        "conventional"
    }

    fn on_request(
        &mut self,
        request: &Request,
        prediction: Prediction,
        view: &HoldingView<'_>,
    ) -> ServeDecision {
        self.0.on_request(request, prediction, view)
    }

    fn on_copy_expiry(&mut self, s: ServerId, t: f64, view: &HoldingView<'_>) -> ExpiryDecision {
        self.0.on_copy_expiry(s, t, view)
    }

    fn on_outgoing_transfer(
        &mut self,
        s: ServerId,
        t: f64,
        view: &HoldingView<'_>,
    ) -> PostTransferDecision {
        self.0.on_outgoing_transfer(s, t, view)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptivePolicyConfig {
    pub alpha: f64,
    pub beta: f64,
    pub warmup_requests: usize,
}

impl AdaptivePolicyConfig {
    pub const DEFAULT_WARMUP: usize = 100;

    pub fn new(alpha: f64, beta: f64) -> Result<Self, ModelError> {
        Self::with_warmup(alpha, beta, Self::DEFAULT_WARMUP)
    }

    pub fn with_warmup(alpha: f64, beta: f64, warmup_requests: usize) -> Result<Self, ModelError> {
        check_alpha(alpha)?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(ModelError::BadBeta(beta));
        }
        Ok(AdaptivePolicyConfig { alpha, beta, warmup_requests })
    }

    pub fn target_ratio(&self) -> f64 {
        2.0 + self.beta
    }
}

/// Running lower bound on the offline optimum (OPTL) and upper bound on
/// the online cost (OnlineU).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdaptiveMonitor {
    pub optl: f64,
    pub allocated: f64,
    pub servers_touched: usize,
    pub lambda: f64,
}

impl AdaptiveMonitor {
    pub fn new(lambda: f64) -> Self {
        AdaptiveMonitor { lambda, ..Default::default() }
    }

    /// Allocated costs of arrived requests plus `2λ` per server that has
    /// seen a request.
    pub fn online_upper(&self) -> f64 {
        self.allocated + 2.0 * self.lambda * self.servers_touched as f64
    }

    /// `None` while OPTL is still zero.
    pub fn ratio(&self) -> Option<f64> {
        (self.optl > 0.0).then(|| self.online_upper() / self.optl)
    }
}

/// OPTL contribution of one request: `min(gap, λ)` for the same-server gap
/// (skipped for a server's first request) plus the part of the gap to the
/// previous request that exceeds `λ`.
pub fn optl_increment(time: f64, prev_same_server: Option<f64>, prev_any: f64, lambda: f64) -> f64 {
    let own = prev_same_server.map_or(0.0, |tp| (time - tp).min(lambda));
    let bridge = (time - prev_any - lambda).max(0.0);
    own + bridge
}

/// Adds request `r_i`'s contribution to the monitor's OPTL.
pub fn update_optl(
    mut monitor: AdaptiveMonitor,
    time: f64,
    prev_same_server: Option<f64>,
    prev_any: f64,
) -> AdaptiveMonitor {
    monitor.optl += optl_increment(time, prev_same_server, prev_any, monitor.lambda);
    monitor
}

/// The predictive policy that falls back to `λ` holds whenever its
/// estimated cost ratio exceeds `2 + β`.
#[derive(Debug, Clone)]
pub struct AdaptivePolicy {
    config: AdaptivePolicyConfig,
    lambda: f64,
    monitor: AdaptiveMonitor,
    last_at: Vec<Option<f64>>,
    last_duration: Vec<f64>,
    last_any: f64,
    switched: Vec<bool>,
}

impl AdaptivePolicy {
    pub fn new(config: AdaptivePolicyConfig, params: &CostParams) -> Self {
        let n = params.n();
        AdaptivePolicy {
            config,
            lambda: params.lambda(),
            monitor: AdaptiveMonitor::new(params.lambda()),
            last_at: vec![None; n],
            last_duration: vec![0.0; n],
            last_any: 0.0,
            switched: Vec::new(),
        }
    }

    pub fn monitor(&self) -> &AdaptiveMonitor {
        &self.monitor
    }

    /// Per request id: whether the conventional `λ` hold overrode the
    /// prediction.
    pub fn overrides(&self) -> &[bool] {
        &self.switched
    }

    fn allocate(&self, request: &Request, source: ServeSource, view: &HoldingView<'_>) -> f64 {
        if request.id == 0 {
            return 0.0;
        }
        let slot = request.server.slot();
        match source {
            ServeSource::Local => request.time - self.last_at[slot].expect("local copy implies p(i)"),
            ServeSource::Transfer(src) => {
                let special = if view.keep_tag(src) { request.time - view.expiry(src) } else { 0.0 };
                special + self.last_duration[slot] + self.lambda
            }
        }
    }
}

impl Policy for AdaptivePolicy {
    fn name(&self) -> &str {
        "adaptive"
    }

    fn on_request(
        &mut self,
        request: &Request,
        prediction: Prediction,
        view: &HoldingView<'_>,
    ) -> ServeDecision {
        let slot = request.server.slot();
        let source = serve_source(request.server, view);

        self.monitor.allocated += self.allocate(request, source, view);
        if self.last_at[slot].is_none() {
            self.monitor.servers_touched += 1;
        }
        if request.id > 0 {
            self.monitor =
                update_optl(self.monitor.clone(), request.time, self.last_at[slot], self.last_any);
        }

        let in_warmup = request.id <= self.config.warmup_requests;
        let over = !in_warmup
            && self.monitor.ratio().is_some_and(|r| r > self.config.target_ratio());
        let duration = if over {
            self.lambda
        } else {
            intended_duration(prediction, self.config.alpha, self.lambda)
        };
        self.switched.push(over);

        self.last_at[slot] = Some(request.time);
        self.last_duration[slot] = duration;
        self.last_any = request.time;
        ServeDecision { source, new_expiry: request.time + duration }
    }

    fn on_copy_expiry(&mut self, _: ServerId, _: f64, view: &HoldingView<'_>) -> ExpiryDecision {
        keep_if_sole(view)
    }

    fn on_outgoing_transfer(
        &mut self,
        server: ServerId,
        _: f64,
        view: &HoldingView<'_>,
    ) -> PostTransferDecision {
        drop_if_tagged(server, view)
    }
}

/// Wang et al.'s baseline for servers with distinct storage rates, indexed
/// in ascending rate order. Each server holds for `λ/μ(s_i)` after a local
/// request. The cheapest server renews its sole copy indefinitely; any
/// other server renews its sole copy once and then pushes it to `s1`.
#[derive(Debug, Clone)]
pub struct WangPolicy {
    lambda: f64,
    rates: Vec<f64>,
    last_local: Vec<f64>,
}

impl WangPolicy {
    pub fn new(params: &CostParams) -> Result<Self, ModelError> {
        let rates = params.storage_rates().to_vec();
        if rates.windows(2).any(|w| w[1] < w[0]) {
            return Err(ModelError::UnsortedRates);
        }
        Ok(WangPolicy {
            lambda: params.lambda(),
            last_local: vec![f64::NEG_INFINITY; rates.len()],
            rates,
        })
    }

    fn hold(&self, server: ServerId) -> f64 {
        self.lambda / self.rates[server.slot()]
    }
}

impl Policy for WangPolicy {
    fn name(&self) -> &str {
        "wang"
    }

    fn on_request(&mut self, request: &Request, _: Prediction, view: &HoldingView<'_>) -> ServeDecision {
        self.last_local[request.server.slot()] = request.time;
        ServeDecision {
            source: serve_source(request.server, view),
            new_expiry: request.time + self.hold(request.server),
        }
    }

    fn on_copy_expiry(&mut self, server: ServerId, time: f64, view: &HoldingView<'_>) -> ExpiryDecision {
        if view.copy_count() > 1 {
            return ExpiryDecision::Drop;
        }
        let hold = self.hold(server);
        if server == ServerId::FIRST {
            return ExpiryDecision::Renew { until: time + hold };
        }
        // One full hold since the last local request: renew once. Two
        // silent holds: hand the object to s1.
        let silent = time - self.last_local[server.slot()];
        if silent < 1.5 * hold {
            ExpiryDecision::Renew { until: time + hold }
        } else {
            ExpiryDecision::PushTo { dst: ServerId::FIRST, dst_expiry: time + self.hold(ServerId::FIRST) }
        }
    }

    fn on_outgoing_transfer(&mut self, _: ServerId, _: f64, _: &HoldingView<'_>) -> PostTransferDecision {
        PostTransferDecision::Keep
    }
}

/// Selects and configures a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyConfig {
    Predictive { alpha: f64 },
    Conventional,
    Adaptive(AdaptivePolicyConfig),
    Wang,
}

impl PolicyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::Predictive { .. } => "predictive",
            PolicyConfig::Conventional => "conventional",
            PolicyConfig::Adaptive(_) => "adaptive",
            PolicyConfig::Wang => "wang",
        }
    }

    /// α as reported in result tables (1 for policies that ignore it).
    pub fn alpha(&self) -> f64 {
        match self {
            PolicyConfig::Predictive { alpha } => *alpha,
            PolicyConfig::Adaptive(c) => c.alpha,
            PolicyConfig::Conventional | PolicyConfig::Wang => 1.0,
        }
    }

    pub fn build(&self, params: &CostParams) -> Result<Box<dyn Policy + Send>, ModelError> {
        let lambda = params.lambda();
        Ok(match *self {
            PolicyConfig::Predictive { alpha } => {
                params.require_unit_rate()?;
                Box::new(PredictivePolicy::new(alpha, lambda)?)
            }
            PolicyConfig::Conventional => {
                params.require_unit_rate()?;
                Box::new(ConventionalPolicy::new(lambda))
            }
            PolicyConfig::Adaptive(cfg) => {
                params.require_unit_rate()?;
                Box::new(AdaptivePolicy::new(cfg, params))
            }
            PolicyConfig::Wang => Box::new(WangPolicy::new(params)?),
        })
    }
}
