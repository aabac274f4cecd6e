//! Reversible-jump chain over trees with a GP LLM in every leaf.
//!
//! Leaf parameters that enter the tree moves are (d, g, b, τ²); β and σ² are
//! integrated out of every leaf likelihood and redrawn by the Gibbs sweep
//! that closes each iteration.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{llm_area, NodeView, Skeleton, TreeGeometry, TreeNode, TreePrior};
use crate::data::Observations;
use crate::dist;
use crate::error::{GpError, Result};
use crate::model::{ols_state, GPState, SharedState};
use crate::predict::{sample_moments, MomentAccumulator, PredictiveMoments, Predictor};
use crate::sampler::{
    covariance_moves, gibbs_sweep, initial_shared, sample_leaf_prior, AcceptStats, Adapter, BooleanMode,
    CovMove, Leaf, McmcConfig, ModelSpec, MoveStats, ProposalScales,
};
use crate::kernel::CorrelationState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreedConfig {
    pub mcmc: McmcConfig,
    pub tree: TreePrior,
    /// When false every leaf likelihood is the constant one and leaf
    /// parameters are redrawn from their prior, so the chain samples the prior.
    pub likelihood: bool,
    /// Start from a treed linear-model fit.
    pub lm_init: bool,
    /// Iterations with an unchanged leaf count that end the linear-model start.
    pub lm_window: usize,
    pub lm_max_iterations: usize,
    /// Log-scale spread of a new leaf's (d, g, τ²) around its sibling's.
    pub rj_scale: f64,
    /// Probability that a new leaf redraws b from p(b | d) instead of copying.
    pub rj_boolean_refresh: f64,
}

impl Default for TreedConfig {
    fn default() -> Self {
        Self {
            mcmc: McmcConfig::default(),
            tree: TreePrior::default(),
            likelihood: true,
            lm_init: true,
            lm_window: 500,
            lm_max_iterations: 5000,
            rj_scale: 0.3,
            rj_boolean_refresh: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeMove {
    Grow,
    Prune,
    Change,
    Swap,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeMoveStats {
    pub grow: AcceptStats,
    pub prune: AcceptStats,
    pub change: AcceptStats,
    pub swap: AcceptStats,
}

impl TreeMoveStats {
    fn slot(&mut self, mv: TreeMove) -> &mut AcceptStats {
        match mv {
            TreeMove::Grow => &mut self.grow,
            TreeMove::Prune => &mut self.prune,
            TreeMove::Change => &mut self.change,
            TreeMove::Swap => &mut self.swap,
        }
    }
}

/// Targets of each move type in the current tree, as indices into the views.
#[derive(Debug, Default)]
struct Feasible {
    grow: Vec<usize>,
    prune: Vec<usize>,
    change: Vec<usize>,
    swap: Vec<(usize, bool)>,
}

impl Feasible {
    fn new(geo: &TreeGeometry, views: &[NodeView]) -> Self {
        let mut f = Feasible::default();
        for (i, v) in views.iter().enumerate() {
            if v.is_leaf() {
                if geo.split_prob(v.depth, &v.rows) > 0.0 {
                    f.grow.push(i);
                }
                continue;
            }
            f.change.push(i);
            let (l, r) = v.child_splits;
            if !l && !r {
                f.prune.push(i);
            }
            if l {
                f.swap.push((i, false));
            }
            if r {
                f.swap.push((i, true));
            }
        }
        f
    }

    fn types(&self) -> Vec<TreeMove> {
        let mut t = Vec::with_capacity(4);
        if !self.grow.is_empty() {
            t.push(TreeMove::Grow);
        }
        if !self.prune.is_empty() {
            t.push(TreeMove::Prune);
        }
        if !self.change.is_empty() {
            t.push(TreeMove::Change);
        }
        if !self.swap.is_empty() {
            t.push(TreeMove::Swap);
        }
        t
    }
}

/// A proposed replacement for the leaves `[start, end)`.
struct Proposal {
    skel: Skeleton,
    start: usize,
    end: usize,
    leaves: Vec<Leaf>,
    rows: Vec<Vec<usize>>,
    /// Proposal and prior terms other than the leaf likelihoods.
    log_extra: f64,
}

/// One kept iteration of the treed chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreedRecord {
    pub iteration: usize,
    pub tree: TreeNode,
    pub shared: SharedState,
    pub log_posterior: f64,
    pub leaf_count: usize,
    pub llm_area: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreedSummary {
    pub moves: MoveStats,
    pub tree_moves: TreeMoveStats,
    pub kept: usize,
    pub mean_leaf_count: f64,
    pub mean_llm_area: f64,
    pub lm_init_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreedTrace {
    pub records: Vec<TreedRecord>,
    pub summary: TreedSummary,
}

impl TreedTrace {
    pub fn llm_areas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.llm_area).collect()
    }

    /// Most frequent leaf count among kept records.
    pub fn modal_leaf_count(&self) -> usize {
        let mut counts = std::collections::BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.leaf_count).or_insert(0usize) += 1;
        }
        counts.into_iter().max_by_key(|&(k, c)| (c, std::cmp::Reverse(k))).map_or(0, |(k, _)| k)
    }
}

#[derive(Debug, Clone)]
pub struct TreedChain {
    pub geo: TreeGeometry,
    data: Observations,
    likelihood: bool,
    pub skel: Skeleton,
    pub leaves: Vec<Leaf>,
    pub rows: Vec<Vec<usize>>,
    pub shared: SharedState,
    pub spec: ModelSpec,
    pub scales: ProposalScales,
    pub stats: MoveStats,
    pub tree_stats: TreeMoveStats,
    order: Vec<CovMove>,
    pub rng: ChaCha8Rng,
    bounds: Vec<(f64, f64)>,
    rj_scale: f64,
    rj_refresh: f64,
}

impl TreedChain {
    /// A single-leaf chain at the default starting point.
    pub fn new(data: &Observations, spec: ModelSpec, cfg: &TreedConfig) -> Result<Self> {
        cfg.mcmc.validate()?;
        if !(cfg.rj_scale > 0.0 && (0.0..=1.0).contains(&cfg.rj_boolean_refresh)) {
            return Err(GpError::Config("rj_scale must be positive and rj_boolean_refresh in [0, 1]".into()));
        }
        if spec.hyper.m() != data.m() {
            return Err(GpError::DimensionMismatch { expected: data.m(), found: spec.hyper.m() });
        }
        let geo = TreeGeometry::new(&data.x, cfg.tree.clone())?;
        if data.n() < geo.n_min {
            return Err(GpError::Data(format!("{} rows is fewer than the leaf minimum {}", data.n(), geo.n_min)));
        }
        let m_x = data.m_x();
        let mut chain = Self {
            geo,
            data: data.clone(),
            likelihood: cfg.likelihood,
            skel: Skeleton::Leaf,
            leaves: Vec::new(),
            rows: vec![(0..data.n()).collect()],
            shared: initial_shared(&spec.hyper, 1),
            scales: ProposalScales { d: cfg.mcmc.rw_scale_d, g: cfg.mcmc.rw_scale_g },
            stats: MoveStats::default(),
            tree_stats: TreeMoveStats::default(),
            order: cfg.mcmc.move_order.clone(),
            rng: ChaCha8Rng::seed_from_u64(cfg.mcmc.seed),
            bounds: vec![(0.0, 1.0); m_x],
            rj_scale: cfg.rj_scale,
            rj_refresh: cfg.rj_boolean_refresh,
            spec,
        };
        let rows = chain.rows[0].clone();
        let leaf = chain.start_leaf(&rows, chain.spec.mode.initial(m_x), cfg.mcmc.init_retries)?;
        chain.leaves.push(leaf);
        Ok(chain)
    }

    fn leaf_obs(&self, rows: &[usize]) -> Observations {
        if self.likelihood {
            self.data.subset(rows)
        } else {
            Observations::empty(self.data.m_x())
        }
    }

    fn make_leaf(&self, rows: &[usize], state: GPState) -> Result<Leaf> {
        Leaf::new(self.leaf_obs(rows), state)
    }

    /// Default start for one leaf; a singular covariance inflates g.
    fn start_leaf(&self, rows: &[usize], b: Vec<bool>, retries: usize) -> Result<Leaf> {
        let m_x = self.data.m_x();
        let obs = self.data.subset(rows);
        let mut g = 0.1;
        for _ in 0..=retries {
            let corr = CorrelationState::new(vec![0.5; m_x], g, b.clone(), vec![2.0; m_x])?;
            match self.make_leaf(rows, ols_state(&obs, corr)) {
                Ok(leaf) => return Ok(leaf),
                Err(GpError::SingularCovariance { .. }) => g *= 10.0,
                Err(e) => return Err(e),
            }
        }
        Err(GpError::Initialization(retries + 1))
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    pub fn states(&self) -> Vec<GPState> {
        self.leaves.iter().map(|l| l.state.clone()).collect()
    }

    pub fn snapshot(&self) -> TreeNode {
        TreeNode::from_parts(&self.skel, &self.states())
    }

    pub fn log_posterior(&self) -> Result<f64> {
        let mut lp = self.geo.log_prior(&self.skel);
        for leaf in &self.leaves {
            lp += leaf.log_posterior(&self.shared, &self.spec)?;
        }
        Ok(lp)
    }

    pub fn record(&self, iteration: usize) -> Result<TreedRecord> {
        let tree = self.snapshot();
        let area = llm_area(&tree, &self.bounds)?;
        Ok(TreedRecord {
            iteration,
            tree,
            shared: self.shared.clone(),
            log_posterior: self.log_posterior()?,
            leaf_count: self.leaf_count(),
            llm_area: area,
        })
    }

    /// Tree move, per-leaf covariance moves, then the Gibbs sweep.
    pub fn step(&mut self) -> Result<()> {
        self.tree_move()?;
        if !self.likelihood {
            return self.redraw_from_prior();
        }
        for leaf in self.leaves.iter_mut() {
            covariance_moves(leaf, &self.shared, &self.spec, &self.order, &self.scales, &mut self.stats, &mut self.rng)?;
        }
        gibbs_sweep(&mut self.leaves, &mut self.shared, &self.spec.hyper, &mut self.rng)
    }

    /// Without a likelihood each leaf's full conditional is its prior.
    fn redraw_from_prior(&mut self) -> Result<()> {
        let m_x = self.data.m_x();
        for i in 0..self.leaves.len() {
            let state = sample_leaf_prior(m_x, &self.shared, &self.spec, &mut self.rng)?;
            self.leaves[i].set_corr(state.corr.clone())?;
            self.leaves[i].state = state;
        }
        Ok(())
    }

    /// Proposes one move of a type drawn uniformly from the feasible types.
    pub fn tree_move(&mut self) -> Result<Option<(TreeMove, bool)>> {
        let views = self.geo.views(&self.skel);
        let feas = Feasible::new(&self.geo, &views);
        let types = feas.types();
        if types.is_empty() {
            return Ok(None);
        }
        let mv = types[self.rng.random_range(0..types.len())];
        let log_prior = self.geo.log_prior_of(&views);
        let n_types = types.len() as f64;
        let proposal = match mv {
            TreeMove::Grow => self.propose_grow(&views, &feas, log_prior, n_types)?,
            TreeMove::Prune => self.propose_prune(&views, &feas, log_prior, n_types)?,
            TreeMove::Change => self.propose_change(&views, &feas, log_prior, n_types)?,
            TreeMove::Swap => self.propose_swap(&views, &feas, log_prior, n_types)?,
        };
        let accepted = match proposal {
            Some(p) => self.accept_or_reject(p)?,
            None => false,
        };
        self.tree_stats.slot(mv).record(accepted);
        Ok(Some((mv, accepted)))
    }

    fn accept_or_reject(&mut self, p: Proposal) -> Result<bool> {
        if !p.log_extra.is_finite() {
            return Ok(false);
        }
        let hyper = &self.spec.hyper;
        let mut log_ratio = p.log_extra;
        for leaf in &self.leaves[p.start..p.end] {
            log_ratio -= leaf.log_marginal(&self.shared, hyper)?;
        }
        for leaf in &p.leaves {
            log_ratio += leaf.log_marginal(&self.shared, hyper)?;
        }
        let log_u = self.rng.random::<f64>().ln();
        if log_ratio.is_nan() || log_u >= log_ratio {
            return Ok(false);
        }
        self.skel = p.skel;
        self.leaves.splice(p.start..p.end, p.leaves);
        self.rows.splice(p.start..p.end, p.rows);
        self.shared.leaf_count = self.leaves.len();
        Ok(true)
    }

    /// Feasible-type count and prior of a proposed skeleton, or `None` when
    /// its prior vanishes.
    fn assess(&self, skel: &Skeleton) -> Option<(Vec<NodeView>, Feasible, f64)> {
        let views = self.geo.views(skel);
        let lp = self.geo.log_prior_of(&views);
        if !lp.is_finite() {
            return None;
        }
        let feas = Feasible::new(&self.geo, &views);
        Some((views, feas, lp))
    }

    /// Builds leaves for new row sets, `None` if any covariance is singular.
    fn build_leaves(&self, rows: &[Vec<usize>], states: Vec<GPState>) -> Result<Option<Vec<Leaf>>> {
        let mut out = Vec::with_capacity(rows.len());
        for (r, s) in rows.iter().zip(states) {
            match self.make_leaf(r, s) {
                Ok(l) => out.push(l),
                Err(GpError::SingularCovariance { .. }) => return Ok(None),
                Err(e) => return Err(e),
            }
        }
        Ok(Some(out))
    }

    /// Log prior of the parameters a leaf carries through tree moves.
    fn log_param_prior(&self, st: &GPState) -> f64 {
        let h = &self.spec.hyper;
        self.spec.log_prior_corr(&st.corr) + log_inv_gamma(st.tau2, h.alpha_tau / 2.0, h.q_tau / 2.0)
    }

    /// A new leaf's parameters near `from`: log random walks on d, g and τ²;
    /// b copied or, with the refresh probability, redrawn from p(b | d).
    fn propose_leaf_params(&mut self, from: &GPState) -> Result<GPState> {
        let s = self.rj_scale;
        let rng = &mut self.rng;
        let mut corr = from.corr.clone();
        for d in corr.d.iter_mut() {
            *d *= (s * dist::std_normal(rng)).exp();
        }
        corr.g *= (s * dist::std_normal(rng)).exp();
        let tau2 = from.tau2 * (s * dist::std_normal(rng)).exp();
        if self.spec.booleans_free() && rng.random::<f64>() < self.rj_refresh {
            corr.b = self.spec.pp.sample_booleans(&corr.d, rng);
        }
        corr.validate()?;
        Ok(GPState { beta: from.beta.clone(), sigma2: from.sigma2, tau2, corr })
    }

    /// Log density of [`Self::propose_leaf_params`] producing `to` from `from`.
    fn log_leaf_proposal(&self, to: &GPState, from: &GPState) -> f64 {
        let s = self.rj_scale;
        let log_normal = |x: f64, x0: f64| {
            let z = (x / x0).ln() / s;
            -0.5 * z * z - (s * (2.0 * std::f64::consts::PI).sqrt()).ln() - x.ln()
        };
        let mut lq: f64 = to.corr.d.iter().zip(&from.corr.d).map(|(&a, &b)| log_normal(a, b)).sum();
        lq += log_normal(to.corr.g, from.corr.g) + log_normal(to.tau2, from.tau2);
        if self.spec.booleans_free() {
            let refresh: f64 = to
                .corr
                .b
                .iter()
                .zip(&to.corr.d)
                .map(|(&b, &d)| self.spec.pp.log_prob_b_given_d(b, d))
                .sum::<f64>()
                .exp()
                * self.rj_refresh;
            let copy = if to.corr.b == from.corr.b { 1.0 - self.rj_refresh } else { 0.0 };
            lq += (refresh + copy).ln();
        } else if to.corr.b != from.corr.b {
            return f64::NEG_INFINITY;
        }
        lq
    }

    fn propose_grow(&mut self, views: &[NodeView], feas: &Feasible, log_prior: f64, n_types: f64) -> Result<Option<Proposal>> {
        let vi = feas.grow[self.rng.random_range(0..feas.grow.len())];
        let v = &views[vi];
        let dims = self.geo.split_dims(&v.rows);
        let (dim, n_vals) = dims[self.rng.random_range(0..dims.len())];
        let value = self.geo.split_values(&v.rows, dim)[self.rng.random_range(0..n_vals)];
        let leaf_idx = v.leaves.0;

        let mut skel = self.skel.clone();
        *skel.at_mut(&v.path) =
            Skeleton::Split { dim, value, left: Box::new(Skeleton::Leaf), right: Box::new(Skeleton::Leaf) };
        let Some((_, new_feas, new_prior)) = self.assess(&skel) else { return Ok(None) };

        let parent = self.leaves[leaf_idx].state.clone();
        let fresh = match self.propose_leaf_params(&parent) {
            Ok(st) => st,
            Err(GpError::InvalidParameter(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let log_params = self.log_param_prior(&fresh) - self.log_leaf_proposal(&fresh, &parent);
        let inherit_left = self.rng.random::<bool>();
        let states = if inherit_left { vec![parent, fresh] } else { vec![fresh, parent] };
        let (l, r): (Vec<usize>, Vec<usize>) = v.rows.iter().partition(|&&i| self.data.x[(i, dim)] < value);
        let rows = vec![l, r];
        let Some(leaves) = self.build_leaves(&rows, states)? else { return Ok(None) };

        let new_types = new_feas.types().len() as f64;
        let log_extra = new_prior - log_prior + n_types.ln() + (feas.grow.len() as f64).ln()
            + (dims.len() as f64).ln()
            + (n_vals as f64).ln()
            - new_types.ln()
            - (new_feas.prune.len() as f64).ln()
            + log_params;
        Ok(Some(Proposal { skel, start: leaf_idx, end: leaf_idx + 1, leaves, rows, log_extra }))
    }

    fn propose_prune(&mut self, views: &[NodeView], feas: &Feasible, log_prior: f64, n_types: f64) -> Result<Option<Proposal>> {
        let vi = feas.prune[self.rng.random_range(0..feas.prune.len())];
        let v = &views[vi];
        let (dim, _) = v.rule.expect("prune targets a split");
        let (start, end) = v.leaves;
        debug_assert_eq!(end - start, 2);

        let mut skel = self.skel.clone();
        *skel.at_mut(&v.path) = Skeleton::Leaf;
        let Some((_, new_feas, new_prior)) = self.assess(&skel) else { return Ok(None) };

        let keep = if self.rng.random::<bool>() { start } else { start + 1 };
        let drop = 2 * start + 1 - keep;
        let state = self.leaves[keep].state.clone();
        let dropped = &self.leaves[drop].state;
        let log_params = self.log_leaf_proposal(dropped, &state) - self.log_param_prior(dropped);
        let rows = vec![v.rows.clone()];
        let Some(leaves) = self.build_leaves(&rows, vec![state])? else { return Ok(None) };

        let dims = self.geo.split_dims(&v.rows).len() as f64;
        let n_vals = self.geo.split_values(&v.rows, dim).len() as f64;
        let new_types = new_feas.types().len() as f64;
        let log_extra = new_prior - log_prior + n_types.ln() + (feas.prune.len() as f64).ln()
            - new_types.ln()
            - (new_feas.grow.len() as f64).ln()
            - dims.ln()
            - n_vals.ln()
            + log_params;
        Ok(Some(Proposal { skel, start, end, leaves, rows, log_extra }))
    }

    /// Re-partitions the leaves below `v` under a modified skeleton, keeping
    /// each leaf's parameters.
    fn repartition(&self, v: &NodeView, skel: Skeleton, log_extra_moves: f64, log_prior: f64, n_types: f64) -> Result<Option<Proposal>> {
        let Some((new_views, new_feas, new_prior)) = self.assess(&skel) else { return Ok(None) };
        let (start, end) = v.leaves;
        let rows: Vec<Vec<usize>> =
            new_views.iter().filter(|w| w.is_leaf() && w.leaves.0 >= start && w.leaves.0 < end).map(|w| w.rows.clone()).collect();
        debug_assert_eq!(rows.len(), end - start);
        let states: Vec<GPState> = self.leaves[start..end].iter().map(|l| l.state.clone()).collect();
        let Some(leaves) = self.build_leaves(&rows, states)? else { return Ok(None) };
        let new_types = new_feas.types().len() as f64;
        let log_extra = new_prior - log_prior + n_types.ln() - new_types.ln() + log_extra_moves;
        Ok(Some(Proposal { skel, start, end, leaves, rows, log_extra }))
    }

    fn propose_change(&mut self, views: &[NodeView], feas: &Feasible, log_prior: f64, n_types: f64) -> Result<Option<Proposal>> {
        let vi = feas.change[self.rng.random_range(0..feas.change.len())];
        let v = &views[vi];
        let (old_dim, old_value) = v.rule.expect("change targets a split");
        let dims = self.geo.split_dims(&v.rows);
        let (dim, n_vals) = dims[self.rng.random_range(0..dims.len())];
        let value = self.geo.split_values(&v.rows, dim)[self.rng.random_range(0..n_vals)];
        if (dim, value) == (old_dim, old_value) {
            return Ok(None);
        }
        let old_vals = self.geo.split_values(&v.rows, old_dim).len() as f64;
        let mut skel = self.skel.clone();
        skel.at_mut(&v.path).set_rule((dim, value));
        self.repartition(v, skel, (n_vals as f64).ln() - old_vals.ln(), log_prior, n_types)
    }

    fn propose_swap(&mut self, views: &[NodeView], feas: &Feasible, log_prior: f64, n_types: f64) -> Result<Option<Proposal>> {
        let (vi, go_right) = feas.swap[self.rng.random_range(0..feas.swap.len())];
        let v = &views[vi];
        let parent_rule = v.rule.expect("swap targets a split");
        let node = self.skel.at(&v.path);
        let (child, other) = match node {
            Skeleton::Split { left, right, .. } => {
                if go_right {
                    (right.as_ref(), left.as_ref())
                } else {
                    (left.as_ref(), right.as_ref())
                }
            }
            Skeleton::Leaf => unreachable!("swap targets a split"),
        };
        let child_rule = child.rule().expect("swap child is a split");
        let other_rule = other.rule();
        let both = other_rule == Some(child_rule);
        if !both && other_rule == Some(parent_rule) {
            // The reverse move would swap both children; not an inverse pair.
            return Ok(None);
        }
        let mut skel = self.skel.clone();
        let target = skel.at_mut(&v.path);
        target.set_rule(child_rule);
        if let Skeleton::Split { left, right, .. } = target {
            if both {
                left.set_rule(parent_rule);
                right.set_rule(parent_rule);
            } else if go_right {
                right.set_rule(parent_rule);
            } else {
                left.set_rule(parent_rule);
            }
        }
        self.repartition(v, skel, 0.0, log_prior, n_types)
    }

    /// Runs forced linear-model iterations until the leaf count has not
    /// changed for `window` iterations, then restores the target mode.
    pub fn lm_init(&mut self, window: usize, max_iterations: usize, retries: usize) -> Result<usize> {
        let target = self.spec.mode;
        self.spec.mode = BooleanMode::ForceLlm;
        for leaf in self.leaves.iter_mut() {
            let mut cs = leaf.state.corr.clone();
            cs.b.iter_mut().for_each(|b| *b = false);
            leaf.set_corr(cs)?;
        }
        let mut stable = 0;
        let mut last = self.leaf_count();
        let mut used = 0;
        while used < max_iterations && stable < window {
            self.step()?;
            used += 1;
            if self.leaf_count() == last {
                stable += 1;
            } else {
                stable = 0;
                last = self.leaf_count();
            }
        }
        self.spec.mode = target;
        if target == BooleanMode::ForceGp {
            for i in 0..self.leaves.len() {
                let rows = self.rows[i].clone();
                let mut leaf = self.start_leaf(&rows, vec![true; self.data.m_x()], retries)?;
                let s = &self.leaves[i].state;
                leaf.state.beta = s.beta.clone();
                leaf.state.sigma2 = s.sigma2;
                leaf.state.tau2 = s.tau2;
                self.leaves[i] = leaf;
            }
        }
        Ok(used)
    }
}

fn log_inv_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    shape * scale.ln() - statrs::function::gamma::ln_gamma(shape) - (shape + 1.0) * x.ln() - scale / x
}

/// Treed linear-model start: returns the chain positioned at the fit.
pub fn treed_lm_init(data: &Observations, spec: &ModelSpec, cfg: &TreedConfig) -> Result<(TreedChain, usize)> {
    let mut chain = TreedChain::new(data, spec.clone(), cfg)?;
    let used = chain.lm_init(cfg.lm_window, cfg.lm_max_iterations, cfg.mcmc.init_retries)?;
    Ok((chain, used))
}

pub fn run_treed(data: &Observations, spec: &ModelSpec, cfg: &TreedConfig) -> Result<TreedTrace> {
    let (mut chain, lm_used) = if cfg.lm_init {
        treed_lm_init(data, spec, cfg)?
    } else {
        (TreedChain::new(data, spec.clone(), cfg)?, 0)
    };
    let mcfg = &cfg.mcmc;
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
    let kept = records.len();
    let mean = |f: &dyn Fn(&TreedRecord) -> f64| records.iter().map(f).sum::<f64>() / kept as f64;
    let summary = TreedSummary {
        moves: chain.stats,
        tree_moves: chain.tree_stats,
        kept,
        mean_leaf_count: mean(&|r| r.leaf_count as f64),
        mean_llm_area: mean(&|r| r.llm_area),
        lm_init_iterations: lm_used,
    };
    Ok(TreedTrace { records, summary })
}

/// Trace-averaged LLM area over a rectangular domain, with per-sample values.
pub fn trace_llm_area(trace: &TreedTrace, bounds: &[(f64, f64)]) -> Result<(f64, Vec<f64>)> {
    if trace.records.is_empty() {
        return Err(GpError::EmptyTrace);
    }
    let per: Vec<f64> = trace.records.iter().map(|r| llm_area(&r.tree, bounds)).collect::<Result<_>>()?;
    Ok((per.iter().sum::<f64>() / per.len() as f64, per))
}

/// Per-sample leaf-routed prediction aggregated over the trace.
pub fn treed_predict(trace: &TreedTrace, data: &Observations, queries: &DMatrix<f64>) -> Result<PredictiveMoments> {
    if trace.records.is_empty() {
        return Err(GpError::EmptyTrace);
    }
    if queries.ncols() != data.m_x() {
        return Err(GpError::DimensionMismatch { expected: data.m_x(), found: queries.ncols() });
    }
    let mut acc = MomentAccumulator::new(queries.nrows());
    for rec in &trace.records {
        let moments = predict_tree(&rec.tree, &rec.shared, data, queries)?;
        let llm = moments.iter().filter(|m| m.2).count() as f64 / queries.nrows().max(1) as f64;
        let pairs: Vec<(f64, f64)> = moments.iter().map(|&(m, v, _)| (m, v)).collect();
        acc.push(&pairs, llm);
    }
    acc.finish()
}

/// Moments at every query for one tree, with whether its leaf is linear.
pub fn predict_tree(
    tree: &TreeNode,
    shared: &SharedState,
    data: &Observations,
    queries: &DMatrix<f64>,
) -> Result<Vec<(f64, f64, bool)>> {
    let skel = tree.skeleton();
    let states = tree.leaves();
    let mut rows = vec![Vec::new(); states.len()];
    for r in 0..data.n() {
        rows[skel.route(&data.row(r))].push(r);
    }
    let mut query_leaf = vec![Vec::new(); states.len()];
    for q in 0..queries.nrows() {
        let row: Vec<f64> = queries.row(q).iter().copied().collect();
        query_leaf[skel.route(&row)].push(q);
    }
    let mut out = vec![(0.0, 0.0, false); queries.nrows()];
    for (li, qs) in query_leaf.iter().enumerate() {
        if qs.is_empty() {
            continue;
        }
        let obs = data.subset(&rows[li]);
        let predictor = Predictor::for_state(&obs, states[li], shared, None)?;
        let sub = queries.select_rows(qs.iter());
        for (&q, (m, v)) in qs.iter().zip(sample_moments(&predictor, &sub)) {
            out[q] = (m, v, predictor.is_llm());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{factorization_counter, reset_factorization_counter};
    use crate::model::HyperParams;
    use crate::prior::LlmPriorParams;
    use crate::sampler::StationaryChain;
    use nalgebra::DVector;

    fn grid_data(k: usize, seed: u64) -> Observations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(k * k, 2, |r, c| {
            if c == 0 { (r / k) as f64 / (k - 1) as f64 } else { (r % k) as f64 / (k - 1) as f64 }
        });
        let y = DVector::from_fn(k * k, |r, _| {
            let a = x[(r, 0)];
            (if a < 0.5 { 10.0 } else { -10.0 }) + dist::std_normal(&mut rng)
        });
        Observations::new(x, y).unwrap()
    }

    fn spec(mode: BooleanMode) -> ModelSpec {
        ModelSpec::new(HyperParams::default_for(3), LlmPriorParams::default(), mode).unwrap()
    }

    fn cfg(likelihood: bool) -> TreedConfig {
        TreedConfig {
            mcmc: McmcConfig { n_burn: 20, n_keep: 30, seed: 3, ..McmcConfig::default() },
            likelihood,
            lm_init: false,
            ..TreedConfig::default()
        }
    }

    fn assert_consistent(chain: &TreedChain) {
        let parts = chain.geo.partition(&chain.skel);
        assert_eq!(parts, chain.rows);
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort();
        assert_eq!(all, (0..chain.geo.n()).collect::<Vec<_>>());
        assert!(parts.iter().all(|p| p.len() >= chain.geo.n_min));
        assert_eq!(chain.shared.leaf_count, chain.leaves.len());
        assert_eq!(chain.skel.leaf_count(), chain.leaves.len());
    }

    #[test]
    fn single_leaf_only_grows() {
        let chain = TreedChain::new(&grid_data(8, 1), spec(BooleanMode::Free), &cfg(true)).unwrap();
        let views = chain.geo.views(&chain.skel);
        let f = Feasible::new(&chain.geo, &views);
        assert_eq!(f.types(), vec![TreeMove::Grow]);
    }

    #[test]
    fn prune_undoes_grow() {
        let data = grid_data(8, 2);
        let mut chain = TreedChain::new(&data, spec(BooleanMode::Free), &cfg(false)).unwrap();
        let before_rows = chain.rows.clone();
        let views = chain.geo.views(&chain.skel);
        let feas = Feasible::new(&chain.geo, &views);
        let lp = chain.geo.log_prior_of(&views);
        let p = chain.propose_grow(&views, &feas, lp, 1.0).unwrap().unwrap();
        chain.skel = p.skel;
        chain.leaves.splice(p.start..p.end, p.leaves);
        chain.rows.splice(p.start..p.end, p.rows);
        chain.shared.leaf_count = chain.leaves.len();
        assert_eq!(chain.leaf_count(), 2);
        assert_consistent(&chain);

        let views = chain.geo.views(&chain.skel);
        let feas = Feasible::new(&chain.geo, &views);
        assert_eq!(feas.prune.len(), 1);
        let lp = chain.geo.log_prior_of(&views);
        let p = chain.propose_prune(&views, &feas, lp, 1.0).unwrap().unwrap();
        assert_eq!(p.skel, Skeleton::Leaf);
        assert_eq!(p.rows, before_rows);
    }

    #[test]
    fn moves_preserve_partition_and_leaf_count() {
        let data = grid_data(9, 3);
        let mut c = cfg(true);
        c.tree.n_min = Some(8);
        let mut chain = TreedChain::new(&data, spec(BooleanMode::Free), &c).unwrap();
        for _ in 0..150 {
            chain.step().unwrap();
            assert_consistent(&chain);
            for (leaf, rows) in chain.leaves.iter().zip(&chain.rows) {
                assert_eq!(leaf.obs().n(), rows.len());
            }
        }
        let t = chain.tree_stats;
        assert!(t.grow.proposed > 0 && t.change.proposed + t.prune.proposed > 0);
    }

    #[test]
    fn root_only_tree_matches_stationary_posterior() {
        let data = grid_data(6, 4);
        let mut c = cfg(true);
        c.tree.max_depth = 0;
        let sp = spec(BooleanMode::Free);
        let treed = TreedChain::new(&data, sp.clone(), &c).unwrap();
        let stat = StationaryChain::new(&data, sp, &c.mcmc).unwrap();
        let tree_lp = treed.log_posterior().unwrap() - treed.geo.log_prior(&treed.skel);
        assert_eq!(treed.geo.log_prior(&treed.skel), 0.0);
        let stat_lp = stat.leaf.log_posterior(&stat.shared, &stat.spec).unwrap();
        assert!((tree_lp - stat_lp).abs() < 1e-12);
    }

    #[test]
    fn forced_linear_treed_chain_never_factorizes() {
        let data = grid_data(8, 5);
        reset_factorization_counter();
        let mut c = cfg(true);
        c.lm_init = true;
        c.lm_window = 20;
        c.lm_max_iterations = 100;
        let trace = run_treed(&data, &spec(BooleanMode::ForceLlm), &c).unwrap();
        assert_eq!(factorization_counter().count, 0);
        assert!(trace.records.iter().all(|r| r.llm_area == 1.0));
    }

    #[test]
    fn one_leaf_prediction_matches_stationary() {
        let data = grid_data(5, 6);
        let sp = spec(BooleanMode::Free);
        let mut c = cfg(true);
        c.tree.max_depth = 0;
        let trace = run_treed(&data, &sp, &c).unwrap();
        let stat_trace = crate::sampler::Trace {
            records: trace
                .records
                .iter()
                .map(|r| crate::sampler::TraceRecord {
                    iteration: r.iteration,
                    state: r.tree.leaves()[0].clone(),
                    shared: r.shared.clone(),
                    log_posterior: r.log_posterior,
                    is_llm: r.llm_area == 1.0,
                })
                .collect(),
            summary: crate::sampler::ChainSummary {
                moves: MoveStats::default(),
                llm_fraction: 0.0,
                kept: 0,
                final_scales: ProposalScales { d: 0.5, g: 0.5 },
            },
        };
        let q = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.5, 0.5, 0.9, 0.3]);
        let a = treed_predict(&trace, &data, &q).unwrap();
        let b = crate::predict::aggregate_predictions(&stat_trace, &data, &q).unwrap();
        for i in 0..3 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-12);
            assert!((a.variance[i] - b.variance[i]).abs() < 1e-12);
        }
        assert!((a.llm_weight - b.llm_weight).abs() < 1e-12);
    }
}
