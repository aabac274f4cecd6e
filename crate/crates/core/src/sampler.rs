//! MCMC for the GP LLM.
//!
//! One iteration runs the covariance moves (range, nugget, boolean) against
//! the marginal posterior of K, then redraws σ² and β from their collapsed
//! conditionals, then τ², β₀ and W from their full conditionals. β and σ²
//! are integrated out of every covariance move, so they must be refreshed
//! after those moves and before anything conditions on them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Observations;
use crate::dist;
use crate::error::{GpError, Result};
use crate::kernel::{build_cov_cached, CorrelationState, CovMatrix, DistanceCache};
use crate::model::{
    beta0_conditional, log_marginal_from_parts, ols_state, sigma2_marginal_conditional, tau2_conditional,
    wishart_conditional, GPState, HyperParams, LeafCoefficients, LeafPosterior, SharedState,
};
use crate::prior::LlmPriorParams;

/// How the booleans are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BooleanMode {
    /// Sampled by the boolean jump move.
    Free,
    /// Fixed at all ones: a plain GP.
    ForceGp,
    /// Fixed at all zeros: the Bayesian linear model.
    ForceLlm,
}

impl BooleanMode {
    pub fn initial(self, m_x: usize) -> Vec<bool> {
        vec![self != BooleanMode::ForceLlm; m_x]
    }
}

/// Covariance moves in the order they run within an iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovMove {
    Range,
    Nugget,
    Boolean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcConfig {
    pub n_burn: usize,
    pub n_keep: usize,
    pub thin: usize,
    pub rw_scale_d: f64,
    pub rw_scale_g: f64,
    pub seed: u64,
    /// Tune the random-walk scales during burn-in.
    pub adapt: bool,
    pub move_order: Vec<CovMove>,
    /// Nugget inflations tried when the starting covariance is singular.
    pub init_retries: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_burn: 1000,
            n_keep: 2000,
            thin: 1,
            rw_scale_d: 0.5,
            rw_scale_g: 0.5,
            seed: 1,
            adapt: true,
            move_order: vec![CovMove::Range, CovMove::Nugget, CovMove::Boolean],
            init_retries: 6,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_keep == 0 {
            return Err(GpError::Config("n_keep must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(GpError::Config("thin must be at least 1".into()));
        }
        if !(self.rw_scale_d > 0.0 && self.rw_scale_g > 0.0) {
            return Err(GpError::Config("random-walk scales must be positive".into()));
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.n_burn + self.n_keep * self.thin
    }
}

/// Everything fixed for the lifetime of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub hyper: HyperParams,
    pub pp: LlmPriorParams,
    pub mode: BooleanMode,
}

impl ModelSpec {
    pub fn new(hyper: HyperParams, pp: LlmPriorParams, mode: BooleanMode) -> Result<Self> {
        hyper.validate()?;
        pp.validate()?;
        Ok(Self { hyper, pp, mode })
    }

    pub fn booleans_free(&self) -> bool {
        self.mode == BooleanMode::Free
    }

    /// Log prior of a correlation state under this spec.
    pub fn log_prior_corr(&self, cs: &CorrelationState) -> f64 {
        self.pp.log_prior_corr(cs, self.booleans_free())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptStats {
    pub proposed: u64,
    pub accepted: u64,
}

impl AcceptStats {
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub range: AcceptStats,
    pub nugget: AcceptStats,
    pub boolean: AcceptStats,
}

/// Random-walk scales on log d and log g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub d: f64,
    pub g: f64,
}

const ADAPT_WINDOW: usize = 50;

/// Burn-in scale tuning towards 20–40% acceptance.
#[derive(Debug, Clone)]
pub struct Adapter {
    window: MoveStats,
    since: usize,
}

impl Default for Adapter {
    fn default() -> Self {
        Self { window: MoveStats::default(), since: 0 }
    }
}

impl Adapter {
    /// Folds the move statistics of one iteration in and retunes at window ends.
    pub fn observe(&mut self, before: &MoveStats, after: &MoveStats, scales: &mut ProposalScales) {
        let delta = |a: AcceptStats, b: AcceptStats| AcceptStats {
            proposed: b.proposed - a.proposed,
            accepted: b.accepted - a.accepted,
        };
        let r = delta(before.range, after.range);
        let n = delta(before.nugget, after.nugget);
        self.window.range.proposed += r.proposed;
        self.window.range.accepted += r.accepted;
        self.window.nugget.proposed += n.proposed;
        self.window.nugget.accepted += n.accepted;
        self.since += 1;
        if self.since < ADAPT_WINDOW {
            return;
        }
        scales.d = retune(scales.d, self.window.range);
        scales.g = retune(scales.g, self.window.nugget);
        *self = Self::default();
    }
}

fn retune(scale: f64, window: AcceptStats) -> f64 {
    if window.proposed < 10 {
        return scale;
    }
    let rate = window.rate();
    let s = if rate < 0.2 {
        scale * 0.7
    } else if rate > 0.4 {
        scale * 1.3
    } else {
        scale
    };
    s.clamp(0.01, 5.0)
}

/// One region's data with its current parameters and factored covariance.
#[derive(Debug, Clone)]
pub struct Leaf {
    obs: Observations,
    cache: Option<DistanceCache>,
    pub state: GPState,
    cov: CovMatrix,
}

impl Leaf {
    pub fn new(obs: Observations, state: GPState) -> Result<Self> {
        if state.corr.dim() != obs.m_x() {
            return Err(GpError::DimensionMismatch { expected: obs.m_x(), found: state.corr.dim() });
        }
        if state.beta.len() != obs.m() {
            return Err(GpError::DimensionMismatch { expected: obs.m(), found: state.beta.len() });
        }
        let n = obs.n();
        let mut leaf = Self { obs, cache: None, cov: CovMatrix::llm(n, state.corr.g), state };
        let corr = leaf.state.corr.clone();
        leaf.cov = leaf.build(&corr)?;
        Ok(leaf)
    }

    pub fn obs(&self) -> &Observations {
        &self.obs
    }

    pub fn cov(&self) -> &CovMatrix {
        &self.cov
    }

    /// Covariance for `cs` on this leaf's inputs. The distance cache is built
    /// the first time a GP covariance is needed.
    pub fn build(&mut self, cs: &CorrelationState) -> Result<CovMatrix> {
        cs.validate()?;
        if cs.is_llm() {
            return Ok(CovMatrix::llm(self.obs.n(), cs.g));
        }
        if !self.cache.as_ref().is_some_and(|c| c.matches(&cs.p)) {
            self.cache = Some(DistanceCache::new(&self.obs.x, &cs.p));
        }
        build_cov_cached(self.cache.as_ref().expect("cache just built"), cs)
    }

    pub fn set_corr(&mut self, cs: CorrelationState) -> Result<()> {
        self.cov = self.build(&cs)?;
        self.state.corr = cs;
        Ok(())
    }

    /// Replaces the response; inputs and covariance are unchanged.
    pub fn set_response(&mut self, y: DVector<f64>) {
        self.obs = self.obs.with_response(y);
    }

    pub fn posterior(&self, shared: &SharedState) -> Result<LeafPosterior> {
        LeafPosterior::new(&self.obs, &self.cov, shared, self.state.tau2)
    }

    /// Log marginal posterior of the current K without its prior.
    pub fn log_marginal(&self, shared: &SharedState, hyper: &HyperParams) -> Result<f64> {
        self.log_marginal_with(&self.cov, shared, hyper)
    }

    fn log_marginal_with(&self, cm: &CovMatrix, shared: &SharedState, hyper: &HyperParams) -> Result<f64> {
        let post = LeafPosterior::new(&self.obs, cm, shared, self.state.tau2)?;
        Ok(log_marginal_from_parts(&post, cm, shared, self.state.tau2, hyper, self.obs.n()))
    }

    /// Log marginal posterior plus the log prior of the correlation state.
    pub fn log_posterior(&self, shared: &SharedState, spec: &ModelSpec) -> Result<f64> {
        Ok(self.log_marginal(shared, &spec.hyper)? + spec.log_prior_corr(&self.state.corr))
    }

    /// Metropolis–Hastings accept/reject of `cs` given the current marginal
    /// `current` and the prior-plus-Jacobian difference `log_extra`. Returns
    /// the new current marginal.
    fn propose(
        &mut self,
        cs: CorrelationState,
        current: f64,
        log_extra: f64,
        log_u: f64,
        shared: &SharedState,
        hyper: &HyperParams,
    ) -> Result<(f64, bool)> {
        let cm = match self.build(&cs) {
            Ok(cm) => cm,
            Err(GpError::SingularCovariance { .. }) => return Ok((current, false)),
            Err(e) => return Err(e),
        };
        let proposed = self.log_marginal_with(&cm, shared, hyper)?;
        let log_ratio = proposed - current + log_extra;
        if log_ratio.is_nan() || log_u >= log_ratio {
            return Ok((current, false));
        }
        self.cov = cm;
        self.state.corr = cs;
        Ok((proposed, true))
    }

    /// One range proposal in dimension `i` to `d_new` with uniform draw `log_u`.
    pub fn range_step(
        &mut self,
        i: usize,
        d_new: f64,
        log_u: f64,
        current: f64,
        shared: &SharedState,
        spec: &ModelSpec,
    ) -> Result<(f64, bool)> {
        let d_old = self.state.corr.d[i];
        if !(d_new > 0.0 && d_new.is_finite()) {
            return Ok((current, false));
        }
        let pp = &spec.pp;
        let b = self.state.corr.b[i];
        let mut log_extra = pp.log_prior_d(d_new)? - pp.log_prior_d(d_old)? + (d_new / d_old).ln();
        if spec.booleans_free() {
            log_extra += pp.log_prob_b_given_d(b, d_new) - pp.log_prob_b_given_d(b, d_old);
        }
        if !b {
            // K does not involve a linearized dimension, so only the prior moves.
            let accepted = !log_extra.is_nan() && log_u < log_extra;
            if accepted {
                self.state.corr.d[i] = d_new;
            }
            return Ok((current, accepted));
        }
        let mut cs = self.state.corr.clone();
        cs.d[i] = d_new;
        self.propose(cs, current, log_extra, log_u, shared, &spec.hyper)
    }

    /// One nugget proposal to `g_new`.
    pub fn nugget_step(
        &mut self,
        g_new: f64,
        log_u: f64,
        current: f64,
        shared: &SharedState,
        spec: &ModelSpec,
    ) -> Result<(f64, bool)> {
        let g_old = self.state.corr.g;
        if !(g_new > 0.0 && g_new.is_finite()) {
            return Ok((current, false));
        }
        let pp = &spec.pp;
        let log_extra = pp.log_prior_g(g_new)? - pp.log_prior_g(g_old)? + (g_new / g_old).ln();
        let mut cs = self.state.corr.clone();
        cs.g = g_new;
        self.propose(cs, current, log_extra, log_u, shared, &spec.hyper)
    }

    /// One boolean proposal to `b_new`. The prior proposal cancels the prior
    /// on b, so only the marginal posteriors enter the ratio.
    pub fn boolean_step(
        &mut self,
        b_new: Vec<bool>,
        log_u: f64,
        current: f64,
        shared: &SharedState,
        spec: &ModelSpec,
    ) -> Result<(f64, bool)> {
        if b_new == self.state.corr.b {
            return Ok((current, true));
        }
        let mut cs = self.state.corr.clone();
        cs.b = b_new;
        self.propose(cs, current, 0.0, log_u, shared, &spec.hyper)
    }
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>().ln()
}

/// Random-walk update of every range parameter. Returns the leaf's
/// log marginal after the moves.
pub fn mh_update_range<R: Rng + ?Sized>(
    leaf: &mut Leaf,
    shared: &SharedState,
    spec: &ModelSpec,
    scale: f64,
    current: f64,
    stats: &mut AcceptStats,
    rng: &mut R,
) -> Result<f64> {
    let mut current = current;
    for i in 0..leaf.state.corr.dim() {
        let d_new = leaf.state.corr.d[i] * (scale * dist::std_normal(rng)).exp();
        let log_u = log_uniform(rng);
        let (c, accepted) = leaf.range_step(i, d_new, log_u, current, shared, spec)?;
        current = c;
        stats.record(accepted);
    }
    Ok(current)
}

pub fn mh_update_nugget<R: Rng + ?Sized>(
    leaf: &mut Leaf,
    shared: &SharedState,
    spec: &ModelSpec,
    scale: f64,
    current: f64,
    stats: &mut AcceptStats,
    rng: &mut R,
) -> Result<f64> {
    let g_new = leaf.state.corr.g * (scale * dist::std_normal(rng)).exp();
    let log_u = log_uniform(rng);
    let (c, accepted) = leaf.nugget_step(g_new, log_u, current, shared, spec)?;
    stats.record(accepted);
    Ok(c)
}

/// Blocked boolean proposal from p(b | d). A no-op unless the booleans are free.
pub fn boolean_jump<R: Rng + ?Sized>(
    leaf: &mut Leaf,
    shared: &SharedState,
    spec: &ModelSpec,
    current: f64,
    stats: &mut AcceptStats,
    rng: &mut R,
) -> Result<f64> {
    if !spec.booleans_free() {
        return Ok(current);
    }
    let b_new = spec.pp.sample_booleans(&leaf.state.corr.d, rng);
    let log_u = log_uniform(rng);
    let (c, accepted) = leaf.boolean_step(b_new, log_u, current, shared, spec)?;
    stats.record(accepted);
    Ok(c)
}

/// Runs the covariance moves on one leaf in the configured order.
pub fn covariance_moves<R: Rng + ?Sized>(
    leaf: &mut Leaf,
    shared: &SharedState,
    spec: &ModelSpec,
    order: &[CovMove],
    scales: &ProposalScales,
    stats: &mut MoveStats,
    rng: &mut R,
) -> Result<()> {
    let mut current = leaf.log_marginal(shared, &spec.hyper)?;
    for mv in order {
        current = match mv {
            CovMove::Range => mh_update_range(leaf, shared, spec, scales.d, current, &mut stats.range, rng)?,
            CovMove::Nugget => mh_update_nugget(leaf, shared, spec, scales.g, current, &mut stats.nugget, rng)?,
            CovMove::Boolean => boolean_jump(leaf, shared, spec, current, &mut stats.boolean, rng)?,
        };
    }
    Ok(())
}

/// Draws σ² and β given K, τ², β₀ and W, then τ² per leaf, then β₀ and W⁻¹.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    leaves: &mut [Leaf],
    shared: &mut SharedState,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<()> {
    for leaf in leaves.iter_mut() {
        let post = leaf.posterior(shared)?;
        let ig = sigma2_marginal_conditional(&post, leaf.obs.n(), hyper);
        let sigma2 = dist::inv_gamma(rng, ig.shape, ig.scale);
        let z = dist::std_normal_vec(rng, post.beta_tilde.len());
        leaf.state.beta = post.beta_from_normals(sigma2, &z);
        leaf.state.sigma2 = sigma2;
        let ig = tau2_conditional(&leaf.state.beta, &shared.beta0, shared.w_inv(), sigma2, hyper);
        leaf.state.tau2 = dist::inv_gamma(rng, ig.shape, ig.scale);
    }
    update_shared(leaves.iter().map(|l| &l.state), shared, hyper, rng)
}

/// Draws β₀ and then W⁻¹ given every leaf's (β, σ², τ²).
pub fn update_shared<'a, R: Rng + ?Sized>(
    states: impl Iterator<Item = &'a GPState>,
    shared: &mut SharedState,
    hyper: &HyperParams,
    rng: &mut R,
) -> Result<()> {
    let coeffs: Vec<LeafCoefficients<'_>> = states.map(LeafCoefficients::from).collect();
    let (mean, cov) = beta0_conditional(&coeffs, shared.w_inv(), hyper)?;
    shared.beta0 = dist::mvn(rng, &mean, &cov)?;
    let wp = wishart_conditional(&coeffs, &shared.beta0, hyper)?;
    let w_inv = dist::wishart(rng, &wp.scale, wp.dof)?;
    shared.leaf_count = coeffs.len();
    shared.set_w_inv(w_inv)
}

/// Forward draw of every parameter from the prior.
pub fn sample_prior<R: Rng + ?Sized>(
    m_x: usize,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<(GPState, SharedState)> {
    let h = &spec.hyper;
    let beta0 = dist::mvn(rng, &h.mu, &h.b)?;
    let rho_v_inv = crate::linalg::spd_inverse(&(&h.v * h.rho), "rho V")?;
    let w_inv = dist::wishart(rng, &rho_v_inv, h.rho)?;
    let shared = SharedState::from_w_inv(beta0, w_inv, 1)?;
    let state = sample_leaf_prior(m_x, &shared, spec, rng)?;
    Ok((state, shared))
}

/// Forward draw of one leaf's parameters given the shared ones.
pub fn sample_leaf_prior<R: Rng + ?Sized>(
    m_x: usize,
    shared: &SharedState,
    spec: &ModelSpec,
    rng: &mut R,
) -> Result<GPState> {
    let h = &spec.hyper;
    let sigma2 = dist::inv_gamma(rng, h.alpha_sigma / 2.0, h.q_sigma / 2.0);
    let tau2 = dist::inv_gamma(rng, h.alpha_tau / 2.0, h.q_tau / 2.0);
    let beta = dist::mvn(rng, &shared.beta0, &(shared.w() * (sigma2 * tau2)))?;
    let corr = sample_corr_prior(m_x, spec, rng)?;
    Ok(GPState { beta, sigma2, tau2, corr })
}

pub fn sample_corr_prior<R: Rng + ?Sized>(m_x: usize, spec: &ModelSpec, rng: &mut R) -> Result<CorrelationState> {
    let d: Vec<f64> = (0..m_x).map(|_| spec.pp.sample_d(rng)).collect();
    let b = match spec.mode {
        BooleanMode::Free => spec.pp.sample_booleans(&d, rng),
        mode => mode.initial(m_x),
    };
    let g = spec.pp.sample_g(rng);
    CorrelationState::new(d, g, b, vec![2.0; m_x])
}

/// Draws y ~ N(Fβ, σ²K) at the leaf's inputs.
pub fn simulate_response<R: Rng + ?Sized>(leaf: &Leaf, rng: &mut R) -> DVector<f64> {
    let z = dist::std_normal_vec(rng, leaf.obs.n());
    &leaf.obs.f * &leaf.state.beta + leaf.cov.correlate(&z) * leaf.state.sigma2.sqrt()
}

/// Default starting point: d = 0.5, g = 0.1, OLS β and residual variance,
/// τ² = 1, W = I, β₀ = μ. A singular start inflates g tenfold per retry.
pub fn initial_leaf(obs: &Observations, spec: &ModelSpec, retries: usize) -> Result<Leaf> {
    let m_x = obs.m_x();
    let mut g = 0.1;
    for _ in 0..=retries {
        let corr = CorrelationState::new(vec![0.5; m_x], g, spec.mode.initial(m_x), vec![2.0; m_x])?;
        match Leaf::new(obs.clone(), ols_state(obs, corr)) {
            Ok(leaf) => return Ok(leaf),
            Err(GpError::SingularCovariance { .. }) => g *= 10.0,
            Err(e) => return Err(e),
        }
    }
    Err(GpError::Initialization(retries + 1))
}

pub fn initial_shared(hyper: &HyperParams, leaf_count: usize) -> SharedState {
    let m = hyper.m();
    SharedState::new(hyper.mu.clone(), DMatrix::identity(m, m), leaf_count).expect("identity is SPD")
}

/// One kept iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub state: GPState,
    pub shared: SharedState,
    pub log_posterior: f64,
    pub is_llm: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub moves: MoveStats,
    pub llm_fraction: f64,
    pub kept: usize,
    pub final_scales: ProposalScales,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
    pub summary: ChainSummary,
}

impl Trace {
    /// Fraction of kept records with every dimension linearized, per dimension
    /// frequency of b_i = 1.
    pub fn boolean_frequencies(&self) -> Vec<f64> {
        let Some(first) = self.records.first() else { return Vec::new() };
        let m_x = first.state.corr.dim();
        let n = self.records.len() as f64;
        (0..m_x)
            .map(|i| self.records.iter().filter(|r| r.state.corr.b[i]).count() as f64 / n)
            .collect()
    }
}

/// A single-leaf chain whose pieces stay accessible between iterations.
#[derive(Debug, Clone)]
pub struct StationaryChain {
    pub leaf: Leaf,
    pub shared: SharedState,
    pub spec: ModelSpec,
    pub scales: ProposalScales,
    pub stats: MoveStats,
    pub order: Vec<CovMove>,
    pub rng: ChaCha8Rng,
}

impl StationaryChain {
    pub fn new(obs: &Observations, spec: ModelSpec, mcfg: &McmcConfig) -> Result<Self> {
        mcfg.validate()?;
        if spec.hyper.m() != obs.m() {
            return Err(GpError::DimensionMismatch { expected: obs.m(), found: spec.hyper.m() });
        }
        let leaf = initial_leaf(obs, &spec, mcfg.init_retries)?;
        let shared = initial_shared(&spec.hyper, 1);
        Ok(Self {
            leaf,
            shared,
            spec,
            scales: ProposalScales { d: mcfg.rw_scale_d, g: mcfg.rw_scale_g },
            stats: MoveStats::default(),
            order: mcfg.move_order.clone(),
            rng: ChaCha8Rng::seed_from_u64(mcfg.seed),
        })
    }

    pub fn step(&mut self) -> Result<()> {
        covariance_moves(
            &mut self.leaf,
            &self.shared,
            &self.spec,
            &self.order,
            &self.scales,
            &mut self.stats,
            &mut self.rng,
        )?;
        gibbs_sweep(std::slice::from_mut(&mut self.leaf), &mut self.shared, &self.spec.hyper, &mut self.rng)
    }

    pub fn record(&self, iteration: usize) -> Result<TraceRecord> {
        Ok(TraceRecord {
            iteration,
            state: self.leaf.state.clone(),
            shared: self.shared.clone(),
            log_posterior: self.leaf.log_posterior(&self.shared, &self.spec)?,
            is_llm: self.leaf.state.corr.is_llm(),
        })
    }
}

/// Runs a stationary chain: burn-in (with optional scale tuning), then keeps
/// every `thin`-th state.
pub fn run_chain(obs: &Observations, spec: &ModelSpec, mcfg: &McmcConfig) -> Result<Trace> {
    let mut chain = StationaryChain::new(obs, spec.clone(), mcfg)?;
    let mut adapter = Adapter::default();
    let mut records = Vec::with_capacity(mcfg.n_keep);
    for it in 0..mcfg.total_iterations() {
        let before = chain.stats;
        chain.step()?;
        if it < mcfg.n_burn {
            if mcfg.adapt {
                adapter.observe(&before, &chain.stats, &mut chain.scales);
            }
        } else if (it - mcfg.n_burn + 1) % mcfg.thin == 0 {
            records.push(chain.record(it)?);
        }
    }
    let llm = records.iter().filter(|r| r.is_llm).count();
    let kept = records.len();
    Ok(Trace {
        records,
        summary: ChainSummary {
            moves: chain.stats,
            llm_fraction: llm as f64 / kept as f64,
            kept,
            final_scales: chain.scales,
        },
    })
}
