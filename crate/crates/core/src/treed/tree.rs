//! Axis-aligned binary partitions: the split skeleton, the tree prior and
//! the serialized snapshot form.
//!
//! Dimensions are 0-based. A point goes left iff `x[dim] < value`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GpError, Result};
use crate::model::GPState;

/// Split rules only; leaves are numbered in depth-first (left before right) order.
#[derive(Debug, Clone, PartialEq)]
pub enum Skeleton {
    Leaf,
    Split { dim: usize, value: f64, left: Box<Skeleton>, right: Box<Skeleton> },
}

impl Skeleton {
    pub fn leaf_count(&self) -> usize {
        match self {
            Skeleton::Leaf => 1,
            Skeleton::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Skeleton::Leaf => 0,
            Skeleton::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Depth-first index of the leaf containing `x`.
    pub fn route(&self, x: &[f64]) -> usize {
        let mut node = self;
        let mut offset = 0;
        loop {
            match node {
                Skeleton::Leaf => return offset,
                Skeleton::Split { dim, value, left, right } => {
                    if x[*dim] < *value {
                        node = left;
                    } else {
                        offset += left.leaf_count();
                        node = right;
                    }
                }
            }
        }
    }

    pub fn at(&self, path: &[bool]) -> &Skeleton {
        path.iter().fold(self, |node, &right| match node {
            Skeleton::Split { left, right: r, .. } => {
                if right {
                    r
                } else {
                    left
                }
            }
            Skeleton::Leaf => panic!("path walks past a leaf"),
        })
    }

    pub fn at_mut(&mut self, path: &[bool]) -> &mut Skeleton {
        let mut node = self;
        for &go_right in path {
            node = match node {
                Skeleton::Split { left, right, .. } => {
                    if go_right {
                        right
                    } else {
                        left
                    }
                }
                Skeleton::Leaf => panic!("path walks past a leaf"),
            };
        }
        node
    }

    pub fn rule(&self) -> Option<(usize, f64)> {
        match self {
            Skeleton::Split { dim, value, .. } => Some((*dim, *value)),
            Skeleton::Leaf => None,
        }
    }

    pub fn set_rule(&mut self, rule: (usize, f64)) {
        if let Skeleton::Split { dim, value, .. } = self {
            *dim = rule.0;
            *value = rule.1;
        }
    }
}

/// Serialized tree: internal split records and leaf parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Internal { split_dim: usize, split_value: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { leaf_id: usize, state: GPState },
}

impl TreeNode {
    /// Pairs a skeleton with leaf states given in depth-first order.
    pub fn from_parts(skel: &Skeleton, states: &[GPState]) -> Self {
        fn go(skel: &Skeleton, states: &[GPState], next: &mut usize) -> TreeNode {
            match skel {
                Skeleton::Leaf => {
                    let id = *next;
                    *next += 1;
                    TreeNode::Leaf { leaf_id: id, state: states[id].clone() }
                }
                Skeleton::Split { dim, value, left, right } => {
                    let l = go(left, states, next);
                    let r = go(right, states, next);
                    TreeNode::Internal { split_dim: *dim, split_value: *value, left: Box::new(l), right: Box::new(r) }
                }
            }
        }
        assert_eq!(skel.leaf_count(), states.len());
        go(skel, states, &mut 0)
    }

    pub fn skeleton(&self) -> Skeleton {
        match self {
            TreeNode::Leaf { .. } => Skeleton::Leaf,
            TreeNode::Internal { split_dim, split_value, left, right } => Skeleton::Split {
                dim: *split_dim,
                value: *split_value,
                left: Box::new(left.skeleton()),
                right: Box::new(right.skeleton()),
            },
        }
    }

    /// Leaf states in depth-first order.
    pub fn leaves(&self) -> Vec<&GPState> {
        let mut out = Vec::new();
        fn go<'a>(n: &'a TreeNode, out: &mut Vec<&'a GPState>) {
            match n {
                TreeNode::Leaf { state, .. } => out.push(state),
                TreeNode::Internal { left, right, .. } => {
                    go(left, out);
                    go(right, out);
                }
            }
        }
        go(self, &mut out);
        out
    }

    pub fn route(&self, x: &[f64]) -> &GPState {
        match self {
            TreeNode::Leaf { state, .. } => state,
            TreeNode::Internal { split_dim, split_value, left, right } => {
                if x[*split_dim] < *split_value {
                    left.route(x)
                } else {
                    right.route(x)
                }
            }
        }
    }

    /// Leaf rectangles in depth-first order, starting from `bounds`.
    pub fn rectangles(&self, bounds: &[(f64, f64)]) -> Vec<(Vec<(f64, f64)>, &GPState)> {
        let mut out = Vec::new();
        fn go<'a>(n: &'a TreeNode, rect: Vec<(f64, f64)>, out: &mut Vec<(Vec<(f64, f64)>, &'a GPState)>) {
            match n {
                TreeNode::Leaf { state, .. } => out.push((rect, state)),
                TreeNode::Internal { split_dim, split_value, left, right } => {
                    let (lo, hi) = rect[*split_dim];
                    let cut = split_value.clamp(lo, hi);
                    let mut l = rect.clone();
                    l[*split_dim] = (lo, cut);
                    let mut r = rect;
                    r[*split_dim] = (cut, hi);
                    go(left, l, out);
                    go(right, r, out);
                }
            }
        }
        go(self, bounds.to_vec(), &mut out);
        out
    }
}

/// Fraction of the domain volume covered by leaves with every boolean off.
pub fn llm_area(tree: &TreeNode, bounds: &[(f64, f64)]) -> Result<f64> {
    let total: f64 = bounds.iter().map(|(lo, hi)| hi - lo).product();
    if !(total.is_finite() && total > 0.0) {
        return Err(GpError::InvalidParameter("llm area needs a bounded domain of positive volume".into()));
    }
    let area: f64 = tree
        .rectangles(bounds)
        .iter()
        .filter(|(_, s)| s.corr.is_llm())
        .map(|(r, _)| r.iter().map(|(lo, hi)| hi - lo).product::<f64>())
        .sum();
    Ok(area / total + 0.0)
}

/// Constants of the tree prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreePrior {
    /// Split probability at depth q is `a (1+q)^-b`.
    pub a: f64,
    pub b: f64,
    /// Nodes at this depth never split.
    pub max_depth: usize,
    /// Minimum points per leaf; `None` means max(m+2, 10).
    pub n_min: Option<usize>,
}

impl Default for TreePrior {
    fn default() -> Self {
        Self { a: 0.5, b: 2.0, max_depth: 6, n_min: None }
    }
}

impl TreePrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0 && self.b >= 0.0) {
            return Err(GpError::Config(format!("tree prior needs 0 < a < 1 and b >= 0, got ({}, {})", self.a, self.b)));
        }
        if self.n_min == Some(0) {
            return Err(GpError::Config("n_min must be positive".into()));
        }
        Ok(())
    }

    pub fn n_min_for(&self, m: usize) -> usize {
        self.n_min.unwrap_or((m + 2).max(10))
    }
}

/// Data-dependent geometry: candidate split values and the leaf-size rule.
#[derive(Debug, Clone)]
pub struct TreeGeometry {
    x: DMatrix<f64>,
    /// Sorted distinct values per dimension across all training rows.
    candidates: Vec<Vec<f64>>,
    pub n_min: usize,
    pub prior: TreePrior,
}

/// One node of a skeleton with the training rows that reach it.
#[derive(Debug, Clone)]
pub struct NodeView {
    pub path: Vec<bool>,
    pub depth: usize,
    pub rows: Vec<usize>,
    /// Depth-first leaf indices `[start, end)` below this node.
    pub leaves: (usize, usize),
    pub rule: Option<(usize, f64)>,
    /// For splits: whether each child is a split.
    pub child_splits: (bool, bool),
}

impl NodeView {
    pub fn is_leaf(&self) -> bool {
        self.rule.is_none()
    }
}

impl TreeGeometry {
    pub fn new(x: &DMatrix<f64>, prior: TreePrior) -> Result<Self> {
        prior.validate()?;
        let candidates = (0..x.ncols())
            .map(|c| {
                let mut v: Vec<f64> = x.column(c).iter().copied().collect();
                v.sort_by(f64::total_cmp);
                v.dedup();
                v
            })
            .collect();
        let n_min = prior.n_min_for(x.ncols() + 1);
        Ok(Self { x: x.clone(), candidates, n_min, prior })
    }

    pub fn m_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Valid split values in `dim` for a node holding `rows`: every value
    /// leaving at least n_min rows on each side.
    pub fn split_values(&self, rows: &[usize], dim: usize) -> &[f64] {
        let k = rows.len();
        if k < 2 * self.n_min {
            return &[];
        }
        let mut vals: Vec<f64> = rows.iter().map(|&r| self.x[(r, dim)]).collect();
        vals.sort_by(f64::total_cmp);
        // v is valid iff vals[n_min-1] < v <= vals[k-n_min].
        let lo = vals[self.n_min - 1];
        let hi = vals[k - self.n_min];
        let c = &self.candidates[dim];
        let start = c.partition_point(|&v| v <= lo);
        let end = c.partition_point(|&v| v <= hi);
        &c[start..end.max(start)]
    }

    /// Dimensions with at least one valid split and the count of values in each.
    pub fn split_dims(&self, rows: &[usize]) -> Vec<(usize, usize)> {
        (0..self.m_x())
            .map(|d| (d, self.split_values(rows, d).len()))
            .filter(|&(_, c)| c > 0)
            .collect()
    }

    /// Prior split probability of a node; zero when it cannot split.
    pub fn split_prob(&self, depth: usize, rows: &[usize]) -> f64 {
        if depth >= self.prior.max_depth || self.split_dims(rows).is_empty() {
            0.0
        } else {
            self.prior.a * (1.0 + depth as f64).powf(-self.prior.b)
        }
    }

    /// Pre-order views of every node.
    pub fn views(&self, skel: &Skeleton) -> Vec<NodeView> {
        let mut out = Vec::new();
        let rows: Vec<usize> = (0..self.n()).collect();
        self.collect(skel, Vec::new(), rows, 0, &mut out);
        out
    }

    fn collect(&self, skel: &Skeleton, path: Vec<bool>, rows: Vec<usize>, first_leaf: usize, out: &mut Vec<NodeView>) {
        let depth = path.len();
        match skel {
            Skeleton::Leaf => out.push(NodeView {
                path,
                depth,
                rows,
                leaves: (first_leaf, first_leaf + 1),
                rule: None,
                child_splits: (false, false),
            }),
            Skeleton::Split { dim, value, left, right } => {
                let (l_rows, r_rows): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&r| self.x[(r, *dim)] < *value);
                let n_left = left.leaf_count();
                out.push(NodeView {
                    path: path.clone(),
                    depth,
                    rows,
                    leaves: (first_leaf, first_leaf + n_left + right.leaf_count()),
                    rule: Some((*dim, *value)),
                    child_splits: (
                        matches!(**left, Skeleton::Split { .. }),
                        matches!(**right, Skeleton::Split { .. }),
                    ),
                });
                let mut lp = path.clone();
                lp.push(false);
                self.collect(left, lp, l_rows, first_leaf, out);
                let mut rp = path;
                rp.push(true);
                self.collect(right, rp, r_rows, first_leaf + n_left, out);
            }
        }
    }

    /// Training rows of each leaf in depth-first order.
    pub fn partition(&self, skel: &Skeleton) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); skel.leaf_count()];
        let mut row = vec![0.0; self.m_x()];
        for r in 0..self.n() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.x[(r, c)];
            }
            parts[skel.route(&row)].push(r);
        }
        parts
    }

    /// Log tree prior: split probabilities times uniform rule probabilities
    /// at internal nodes and non-split probabilities at leaves. `-inf` for a
    /// rule outside its node's valid set.
    pub fn log_prior(&self, skel: &Skeleton) -> f64 {
        self.log_prior_of(&self.views(skel))
    }

    pub fn log_prior_of(&self, views: &[NodeView]) -> f64 {
        let mut lp = 0.0;
        for v in views {
            let p = self.split_prob(v.depth, &v.rows);
            match v.rule {
                None => lp += (1.0 - p).ln(),
                Some((dim, value)) => {
                    if p == 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    let vals = self.split_values(&v.rows, dim);
                    if vals.binary_search_by(|c| c.total_cmp(&value)).is_err() {
                        return f64::NEG_INFINITY;
                    }
                    let dims = self.split_dims(&v.rows).len() as f64;
                    lp += p.ln() - dims.ln() - (vals.len() as f64).ln();
                }
            }
        }
        lp
    }

    /// Draws a tree from the prior by recursive splitting.
    pub fn sample_prior<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Skeleton {
        let rows: Vec<usize> = (0..self.n()).collect();
        self.grow_from_prior(rows, 0, rng)
    }

    fn grow_from_prior<R: rand::Rng + ?Sized>(&self, rows: Vec<usize>, depth: usize, rng: &mut R) -> Skeleton {
        let p = self.split_prob(depth, &rows);
        if rng.random::<f64>() >= p {
            return Skeleton::Leaf;
        }
        let dims = self.split_dims(&rows);
        let (dim, _) = dims[rng.random_range(0..dims.len())];
        let vals = self.split_values(&rows, dim);
        let value = vals[rng.random_range(0..vals.len())];
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[(i, dim)] < value);
        Skeleton::Split {
            dim,
            value,
            left: Box::new(self.grow_from_prior(l, depth + 1, rng)),
            right: Box::new(self.grow_from_prior(r, depth + 1, rng)),
        }
    }
}
