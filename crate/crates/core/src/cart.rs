//! Axis-aligned least-squares regression trees with a fixed leaf budget.
//!
//! Growth is best-first: the frontier leaf whose best split removes the most
//! squared error is split next, until the budget is spent or no split helps.
//! Inputs route left iff `x[feature] <= threshold`. Leaves are numbered
//! `1..=num_leaves` in left-to-right order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CartError {
    #[error("cannot fit a tree on zero samples")]
    Empty,
    #[error("{0}")]
    InvalidInput(String),
    #[error("malformed tree: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        index: usize,
        value: f64,
        count: usize,
    },
}

/// One accepted split, in the order growth applied them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRecord {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    num_leaves: usize,
    training_sse: f64,
    growth: Vec<SplitRecord>,
}

#[derive(Clone, Copy)]
struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

struct FrontierLeaf {
    node: usize,
    /// Feature-major member orders, `size` entries per feature.
    orders: Vec<u32>,
    size: usize,
    best: Option<Candidate>,
}

/// Splits improving squared error by less than this fraction of the leaf's
/// raw sum of squares are treated as rounding noise.
const GAIN_FLOOR: f64 = 1e-12;

/// Per-feature sample orders by value, reusable across fits on the same rows
/// with different targets.
#[derive(Debug, Clone)]
pub struct Presorted {
    n: usize,
    /// Feature-major: `orders[f * n..(f + 1) * n]` sorts feature `f`.
    orders: Vec<u32>,
    /// Column-major copy of the rows.
    cols: Vec<Vec<f64>>,
    /// Runs of equal values within each feature's order, as position ranges.
    ties: Vec<(usize, usize)>,
}

impl Presorted {
    pub fn new(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.len());
        let cols: Vec<Vec<f64>> = (0..d).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        let mut orders = Vec::with_capacity(n * d);
        let mut ties = Vec::new();
        for col in &cols {
            let base = orders.len();
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let mut start = 0;
            while start < n {
                let v = col[idx[start] as usize];
                let mut end = start + 1;
                while end < n && col[idx[end] as usize].total_cmp(&v).is_eq() {
                    end += 1;
                }
                if end - start > 1 {
                    ties.push((base + start, base + end));
                }
                start = end;
            }
            orders.extend(idx);
        }
        Self { n, orders, cols, ties }
    }

    /// Orders by (value, target): runs of equal values re-sorted by target.
    fn with_targets(&self, targets: &[f64]) -> Vec<u32> {
        let mut orders = self.orders.clone();
        for &(start, end) in &self.ties {
            orders[start..end].sort_by(|&a, &b| targets[a as usize].total_cmp(&targets[b as usize]));
        }
        orders
    }
}

/// Fits a tree to `targets` with at most `max_leaves` leaves, each holding at
/// least `min_leaf` samples.
pub fn fit_tree(rows: &[&[f64]], targets: &[f64], max_leaves: usize, min_leaf: usize) -> Result<RegressionTree, CartError> {
    check_inputs(rows, targets, max_leaves, min_leaf)?;
    grow(rows, targets, &Presorted::new(rows), max_leaves, min_leaf)
}

/// As [`fit_tree`], reusing orders presorted for `rows`.
pub fn fit_tree_presorted(
    rows: &[&[f64]],
    targets: &[f64],
    presorted: &Presorted,
    max_leaves: usize,
    min_leaf: usize,
) -> Result<RegressionTree, CartError> {
    check_inputs(rows, targets, max_leaves, min_leaf)?;
    if presorted.n != rows.len() || presorted.cols.len() != rows[0].len() {
        return Err(CartError::InvalidInput("presorted orders do not match the rows".into()));
    }
    grow(rows, targets, presorted, max_leaves, min_leaf)
}

fn check_inputs(rows: &[&[f64]], targets: &[f64], max_leaves: usize, min_leaf: usize) -> Result<(), CartError> {
    let n = rows.len();
    if n == 0 {
        return Err(CartError::Empty);
    }
    if targets.len() != n {
        return Err(CartError::InvalidInput(format!("{n} rows but {} targets", targets.len())));
    }
    if max_leaves == 0 || min_leaf == 0 {
        return Err(CartError::InvalidInput("max_leaves and min_leaf must be at least 1".into()));
    }
    let d = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(CartError::InvalidInput(format!("row {i} has {} features, expected {d}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) || !targets[i].is_finite() {
            return Err(CartError::InvalidInput(format!("row {i} has non-finite values")));
        }
    }

    Ok(())
}

fn grow(
    rows: &[&[f64]],
    targets: &[f64],
    presorted: &Presorted,
    max_leaves: usize,
    min_leaf: usize,
) -> Result<RegressionTree, CartError> {
    let n = rows.len();
    let cols = &presorted.cols;
    // Ties in both value and target are interchangeable, so every
    // accumulation below is row-order independent.
    let root_orders = presorted.with_targets(targets);
    let root_best = best_split(cols, targets, &root_orders, n, min_leaf);

    let mut nodes = vec![Node::Leaf {
        index: 0,
        value: 0.0,
        count: n,
    }];
    let mut frontier = vec![FrontierLeaf {
        node: 0,
        orders: root_orders,
        size: n,
        best: root_best,
    }];
    let mut growth = Vec::new();
    let mut goes_left = vec![false; n];

    while frontier.len() < max_leaves {
        let mut pick: Option<usize> = None;
        for (i, leaf) in frontier.iter().enumerate() {
            if let Some(c) = leaf.best {
                if pick.is_none_or(|p| c.gain > frontier[p].best.expect("picked has split").gain) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let parent = frontier.remove(pick);
        let split = parent.best.expect("picked has split");
        let col = &cols[split.feature];
        let size = parent.size;
        let mut left_size = 0;
        for &i in &parent.orders[..size] {
            let left = col[i as usize] <= split.threshold;
            goes_left[i as usize] = left;
            left_size += usize::from(left);
        }
        let right_size = size - left_size;
        let mut left_orders = Vec::with_capacity(left_size * cols.len());
        let mut right_orders = Vec::with_capacity(right_size * cols.len());
        for &i in &parent.orders {
            if goes_left[i as usize] {
                left_orders.push(i);
            } else {
                right_orders.push(i);
            }
        }

        let left = nodes.len();
        let right = left + 1;
        nodes[parent.node] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        nodes.push(Node::Leaf { index: 0, value: 0.0, count: 0 });
        nodes.push(Node::Leaf { index: 0, value: 0.0, count: 0 });
        growth.push(SplitRecord {
            feature: split.feature,
            threshold: split.threshold,
            gain: split.gain,
        });
        // Children join the frontier in creation order, after older leaves.
        for (node, orders, size) in [(left, left_orders, left_size), (right, right_orders, right_size)] {
            let best = best_split(cols, targets, &orders, size, min_leaf);
            frontier.push(FrontierLeaf { node, orders, size, best });
        }
    }

    // Every leaf is on the frontier; its first order lists its members.
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); nodes.len()];
    for leaf in &frontier {
        members[leaf.node] = if cols.is_empty() {
            targets.to_vec()
        } else {
            leaf.orders[..leaf.size].iter().map(|&i| targets[i as usize]).collect()
        };
    }
    let mut leaf_nodes = Vec::new();
    in_order_leaves(&nodes, 0, &mut leaf_nodes);
    let mut training_sse = 0.0;
    for (k, &node) in leaf_nodes.iter().enumerate() {
        let values = &mut members[node];
        values.sort_by(f64::total_cmp);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        training_sse += values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        nodes[node] = Node::Leaf {
            index: k + 1,
            value: mean,
            count: values.len(),
        };
    }

    Ok(RegressionTree {
        num_leaves: leaf_nodes.len(),
        nodes,
        training_sse,
        growth,
    })
}

fn best_split(cols: &[Vec<f64>], targets: &[f64], orders: &[u32], count: usize, min_leaf: usize) -> Option<Candidate> {
    if cols.is_empty() || count < 2 * min_leaf {
        return None;
    }
    let mut total = 0.0;
    let mut total_sq = 0.0;
    for &i in &orders[..count] {
        let t = targets[i as usize];
        total += t;
        total_sq += t * t;
    }
    let floor = GAIN_FLOOR * total_sq;
    let nf = count as f64;
    let mut best: Option<Candidate> = None;
    for (feature, (order, col)) in orders.chunks_exact(count).zip(cols).enumerate() {
        let mut left_sum = 0.0;
        for &i in &order[..min_leaf - 1] {
            left_sum += targets[i as usize];
        }
        for p in min_leaf - 1..count - min_leaf {
            let i = order[p] as usize;
            left_sum += targets[i];
            let (a, b) = (col[i], col[order[p + 1] as usize]);
            if a < b {
                let left_n = (p + 1) as f64;
                // nL·nR/n·(meanL − meanR)² = (n·sumL − total·nL)² / (n·nL·nR)
                let num = nf * left_sum - total * left_n;
                let gain = num * num / (nf * left_n * (nf - left_n));
                if gain > floor && best.is_none_or(|c| gain > c.gain) {
                    best = Some(Candidate {
                        feature,
                        threshold: midpoint(a, b),
                        gain,
                    });
                }
            }
        }
    }
    best
}

/// Midpoint of `a < b` that still separates them under the `<=` rule.
pub(crate) fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m >= b {
        a
    } else {
        m
    }
}

fn in_order_leaves(nodes: &[Node], at: usize, out: &mut Vec<usize>) {
    match nodes[at] {
        Node::Split { left, right, .. } => {
            in_order_leaves(nodes, left, out);
            in_order_leaves(nodes, right, out);
        }
        Node::Leaf { .. } => out.push(at),
    }
}

impl RegressionTree {
    /// A single-leaf tree predicting `value` everywhere.
    pub fn constant(value: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { index: 1, value, count: 0 }],
            num_leaves: 1,
            training_sse: 0.0,
            growth: Vec::new(),
        }
    }

    pub fn num_leaves(&self) -> usize {
        self.num_leaves
    }

    pub fn training_sse(&self) -> f64 {
        self.training_sse
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Splits in the order they were accepted during fitting.
    pub fn growth(&self) -> &[SplitRecord] {
        &self.growth
    }

    /// Largest feature index read by any split, if the tree has splits.
    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max()
    }

    fn route(&self, x: &[f64]) -> &Node {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.route(x) {
            Node::Leaf { value, .. } => *value,
            Node::Split { .. } => unreachable!("routing ends at a leaf"),
        }
    }

    /// 1-based index of the leaf `x` routes to.
    pub fn assign_leaf(&self, x: &[f64]) -> usize {
        match self.route(x) {
            Node::Leaf { index, .. } => *index,
            Node::Split { .. } => unreachable!("routing ends at a leaf"),
        }
    }

    /// Leaf values ordered by leaf index.
    pub fn leaf_values(&self) -> Vec<f64> {
        let mut leaves = Vec::new();
        in_order_leaves(&self.nodes, 0, &mut leaves);
        leaves
            .into_iter()
            .map(|n| match self.nodes[n] {
                Node::Leaf { value, .. } => value,
                Node::Split { .. } => unreachable!(),
            })
            .collect()
    }

    pub fn leaf_value(&self, index: usize) -> Option<f64> {
        index.checked_sub(1).and_then(|i| self.leaf_values().get(i).copied())
    }

    pub fn to_json(&self) -> TreeJson {
        fn build(nodes: &[Node], at: usize) -> TreeJson {
            match &nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => TreeJson::Split {
                    feature: *feature,
                    threshold: *threshold,
                    left: Box::new(build(nodes, *left)),
                    right: Box::new(build(nodes, *right)),
                },
                Node::Leaf { index, value, count } => TreeJson::Leaf {
                    index: *index,
                    value: *value,
                    count: Some(*count),
                },
            }
        }
        build(&self.nodes, 0)
    }

    /// Rebuilds a tree from its serialized form. `training_sse` is carried
    /// separately by the caller since the nested form has no slot for it.
    pub fn from_json(json: &TreeJson, training_sse: f64) -> Result<Self, CartError> {
        fn build(json: &TreeJson, nodes: &mut Vec<Node>) -> usize {
            let at = nodes.len();
            match json {
                TreeJson::Leaf { index, value, count } => nodes.push(Node::Leaf {
                    index: *index,
                    value: *value,
                    count: count.unwrap_or(0),
                }),
                TreeJson::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    nodes.push(Node::Leaf { index: 0, value: 0.0, count: 0 });
                    let l = build(left, nodes);
                    let r = build(right, nodes);
                    nodes[at] = Node::Split {
                        feature: *feature,
                        threshold: *threshold,
                        left: l,
                        right: r,
                    };
                }
            }
            at
        }
        let mut nodes = Vec::new();
        build(json, &mut nodes);
        let mut leaves = Vec::new();
        in_order_leaves(&nodes, 0, &mut leaves);
        for (k, &n) in leaves.iter().enumerate() {
            match nodes[n] {
                Node::Leaf { index, value, .. } => {
                    if index != k + 1 {
                        return Err(CartError::Malformed(format!(
                            "leaf at position {} carries index {index}",
                            k + 1
                        )));
                    }
                    if !value.is_finite() {
                        return Err(CartError::Malformed(format!("leaf {index} has a non-finite value")));
                    }
                }
                Node::Split { .. } => unreachable!(),
            }
        }
        if nodes
            .iter()
            .any(|n| matches!(n, Node::Split { threshold, .. } if !threshold.is_finite()))
        {
            return Err(CartError::Malformed("non-finite threshold".into()));
        }
        Ok(Self {
            num_leaves: leaves.len(),
            nodes,
            training_sse,
            growth: Vec::new(),
        })
    }
}

/// Nested tree form used inside `model.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeJson {
    #[serde(rename = "split")]
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeJson>,
        right: Box<TreeJson>,
    },
    #[serde(rename = "leaf")]
    Leaf {
        index: usize,
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        count: Option<usize>,
    },
}
