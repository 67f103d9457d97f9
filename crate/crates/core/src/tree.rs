//! Greedy binary CART regression tree over the two quality features.
//!
//! Splits minimize the summed squared error of the two children, leaves
//! predict the mean of their samples, and there is no pruning. Ties between
//! equally good splits go to the first feature, then the lowest threshold, so
//! fitting is deterministic.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Rq,
    Qp,
}

impl Feature {
    const ALL: [Feature; 2] = [Feature::Rq, Feature::Qp];

    fn index(self) -> usize {
        match self {
            Feature::Rq => 0,
            Feature::Qp => 1,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TreeError {
    #[error("max_depth must be at least 1")]
    InvalidDepth,
    #[error("cannot fit a tree on zero samples")]
    Empty,
    #[error("{features} feature rows but {targets} targets")]
    LengthMismatch { features: usize, targets: usize },
    #[error("non-finite value in training data")]
    NonFinite,
    #[error("malformed preorder node list")]
    MalformedPreorder,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: Feature,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Fitted regression tree. Node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

/// One entry of the serialized preorder node list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreorderNode {
    Split { feature: Feature, threshold: f64 },
    Leaf(f64),
}

struct SplitChoice {
    feature: Feature,
    threshold: f64,
    sse: f64,
}

impl RegressionTree {
    pub fn fit(xs: &[[f64; 2]], ys: &[f64], max_depth: usize) -> Result<RegressionTree, TreeError> {
        if max_depth == 0 {
            return Err(TreeError::InvalidDepth);
        }
        if xs.len() != ys.len() {
            return Err(TreeError::LengthMismatch {
                features: xs.len(),
                targets: ys.len(),
            });
        }
        if xs.is_empty() {
            return Err(TreeError::Empty);
        }
        if xs.iter().flatten().chain(ys).any(|v| !v.is_finite()) {
            return Err(TreeError::NonFinite);
        }
        let mut tree = RegressionTree { nodes: Vec::new() };
        let idx: Vec<usize> = (0..xs.len()).collect();
        tree.grow(xs, ys, idx, 0, max_depth);
        Ok(tree)
    }

    fn grow(&mut self, xs: &[[f64; 2]], ys: &[f64], idx: Vec<usize>, depth: usize, max_depth: usize) -> usize {
        let id = self.nodes.len();
        let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64;
        self.nodes.push(Node::Leaf(mean));
        if depth >= max_depth || idx.len() < 2 {
            return id;
        }
        let node_sse: f64 = idx.iter().map(|&i| (ys[i] - mean).powi(2)).sum();
        // a pure node cannot be improved
        if node_sse <= 1e-12 * (1.0 + mean * mean) {
            return id;
        }
        let Some(best) = best_split(xs, ys, &idx) else {
            return id;
        };
        if best.sse >= node_sse {
            return id;
        }
        let f = best.feature.index();
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| xs[i][f] <= best.threshold);
        let left = self.grow(xs, ys, l, depth + 1, max_depth);
        let right = self.grow(xs, ys, r, depth + 1, max_depth);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    pub fn predict(&self, x: &[f64; 2]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x[feature.index()] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn to_preorder(&self) -> Vec<PreorderNode> {
        fn walk(nodes: &[Node], at: usize, out: &mut Vec<PreorderNode>) {
            match &nodes[at] {
                Node::Leaf(v) => out.push(PreorderNode::Leaf(*v)),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(PreorderNode::Split {
                        feature: *feature,
                        threshold: *threshold,
                    });
                    walk(nodes, *left, out);
                    walk(nodes, *right, out);
                }
            }
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(&self.nodes, 0, &mut out);
        out
    }

    pub fn from_preorder(list: &[PreorderNode]) -> Result<RegressionTree, TreeError> {
        fn build(list: &[PreorderNode], pos: &mut usize, nodes: &mut Vec<Node>) -> Result<usize, TreeError> {
            let entry = list.get(*pos).ok_or(TreeError::MalformedPreorder)?;
            *pos += 1;
            let id = nodes.len();
            match entry {
                PreorderNode::Leaf(v) => {
                    if !v.is_finite() {
                        return Err(TreeError::NonFinite);
                    }
                    nodes.push(Node::Leaf(*v));
                }
                PreorderNode::Split { feature, threshold } => {
                    nodes.push(Node::Leaf(f64::NAN));
                    let left = build(list, pos, nodes)?;
                    let right = build(list, pos, nodes)?;
                    nodes[id] = Node::Split {
                        feature: *feature,
                        threshold: *threshold,
                        left,
                        right,
                    };
                }
            }
            Ok(id)
        }
        let mut nodes = Vec::with_capacity(list.len());
        let mut pos = 0;
        build(list, &mut pos, &mut nodes)?;
        if pos != list.len() {
            return Err(TreeError::MalformedPreorder);
        }
        Ok(RegressionTree { nodes })
    }
}

fn best_split(xs: &[[f64; 2]], ys: &[f64], idx: &[usize]) -> Option<SplitChoice> {
    let mut best: Option<SplitChoice> = None;
    for feature in Feature::ALL {
        let f = feature.index();
        let mut order = idx.to_vec();
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
        let n = order.len();
        let total: f64 = order.iter().map(|&i| ys[i]).sum();
        let total_sq: f64 = order.iter().map(|&i| ys[i] * ys[i]).sum();
        let (mut sum_l, mut sq_l) = (0.0, 0.0);
        for k in 0..n - 1 {
            let y = ys[order[k]];
            sum_l += y;
            sq_l += y * y;
            let (a, b) = (xs[order[k]][f], xs[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            let sum_r = total - sum_l;
            let sq_r = total_sq - sq_l;
            let sse = (sq_l - sum_l * sum_l / nl) + (sq_r - sum_r * sum_r / nr);
            if best.as_ref().is_none_or(|b| sse < b.sse - 1e-12) {
                best = Some(SplitChoice {
                    feature,
                    threshold: 0.5 * (a + b),
                    sse: sse.max(0.0),
                });
            }
        }
    }
    best
}
