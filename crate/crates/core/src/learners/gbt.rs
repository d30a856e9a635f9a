//! Gradient-boosted regression trees with the second-order regularised leaf
//! rule, grown level by level with exact greedy splits.

use serde::{Deserialize, Serialize};

use super::{check_input, FeatureMatrix, LearnerError, Regressor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum loss reduction required to keep a split.
    pub gamma: f64,
    /// Minimum hessian mass in each child.
    pub min_child_weight: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 3,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtEnsemble {
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub base_score: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub n_features: usize,
}

impl GbtEnsemble {
    /// Prediction using only the first `k` trees, accumulated tree by tree so
    /// that stage `k` is exactly stage `k - 1` plus the scaled tree `k` output.
    pub fn predict_staged(&self, x: &[f64], k: usize) -> f64 {
        self.trees[..k].iter().fold(self.base_score, |acc, t| {
            acc + self.learning_rate * t.predict(x)
        })
    }
}

impl Regressor for GbtEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, rows: &[f64]) -> Result<f64, LearnerError> {
        check_input(rows, self.n_features)?;
        Ok(self.predict_staged(rows, self.trees.len()))
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn leaf_value(g: f64, h: f64, lambda: f64) -> f64 {
    let v = -g / (h + lambda);
    if v.is_finite() {
        v
    } else {
        0.0
    }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 && denom.is_finite() {
        g * g / denom
    } else {
        0.0
    }
}

fn grow_tree(x: &FeatureMatrix, sorted: &[Vec<usize>], grad: &[f64], params: &GbtParams) -> Tree {
    let n = x.n_rows();
    let mut nodes = vec![Node::Leaf(0.0)];
    // node index per row, usize::MAX once the row sits in a finished leaf
    let mut node_of = vec![0usize; n];
    let mut frontier = vec![0usize];

    for depth in 0..=params.max_depth {
        let slot = |node: usize| frontier.iter().position(|&f| f == node);
        let mut g_tot = vec![0.0; frontier.len()];
        let mut h_tot = vec![0.0; frontier.len()];
        for r in 0..n {
            if let Some(k) = (node_of[r] != usize::MAX)
                .then(|| slot(node_of[r]))
                .flatten()
            {
                g_tot[k] += grad[r];
                h_tot[k] += 1.0;
            }
        }
        let mut best: Vec<Option<Candidate>> = (0..frontier.len()).map(|_| None).collect();
        if depth < params.max_depth {
            let slot_of: Vec<Option<usize>> = node_of
                .iter()
                .map(|&nd| if nd == usize::MAX { None } else { slot(nd) })
                .collect();
            for (f, order) in sorted.iter().enumerate() {
                let mut gl = vec![0.0; frontier.len()];
                let mut hl = vec![0.0; frontier.len()];
                let mut last = vec![f64::NAN; frontier.len()];
                for &r in order {
                    let Some(k) = slot_of[r] else { continue };
                    let v = x.row(r)[f];
                    if hl[k] > 0.0 && v > last[k] {
                        let (gr, hr) = (g_tot[k] - gl[k], h_tot[k] - hl[k]);
                        if hl[k] >= params.min_child_weight && hr >= params.min_child_weight {
                            let gain = 0.5
                                * (score(gl[k], hl[k], params.lambda)
                                    + score(gr, hr, params.lambda)
                                    - score(g_tot[k], h_tot[k], params.lambda))
                                - params.gamma;
                            if gain > 0.0 && best[k].as_ref().is_none_or(|b| gain > b.gain) {
                                best[k] = Some(Candidate {
                                    gain,
                                    feature: f,
                                    threshold: last[k] + (v - last[k]) / 2.0,
                                });
                            }
                        }
                    }
                    gl[k] += grad[r];
                    hl[k] += 1.0;
                    last[k] = v;
                }
            }
        }

        let mut next = Vec::new();
        let mut child_of = vec![None; frontier.len()];
        for (k, &node) in frontier.iter().enumerate() {
            match best[k].take() {
                Some(c) => {
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes.push(Node::Leaf(0.0));
                    nodes[node] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left,
                        right: left + 1,
                    };
                    next.extend([left, left + 1]);
                    child_of[k] = Some((c.feature, c.threshold, left));
                }
                None => nodes[node] = Node::Leaf(leaf_value(g_tot[k], h_tot[k], params.lambda)),
            }
        }
        for r in 0..n {
            if node_of[r] == usize::MAX {
                continue;
            }
            let k = slot(node_of[r]).expect("row in frontier");
            node_of[r] = match child_of[k] {
                Some((f, t, left)) => {
                    if x.row(r)[f] < t {
                        left
                    } else {
                        left + 1
                    }
                }
                None => usize::MAX,
            };
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Tree { nodes }
}

pub fn gbt_fit(x: &FeatureMatrix, params: &GbtParams) -> Result<GbtEnsemble, LearnerError> {
    if x.n_rows() < 2 {
        return Err(LearnerError::TooShort {
            needed: 2,
            got: x.n_rows(),
        });
    }
    if !(params.learning_rate > 0.0) || !(params.lambda >= 0.0) || !(params.gamma >= 0.0) {
        return Err(LearnerError::InvalidParam(format!(
            "learning rate {}, lambda {}, gamma {}",
            params.learning_rate, params.lambda, params.gamma
        )));
    }
    let n = x.n_rows();
    let y = x.target();
    let base_score = y.iter().sum::<f64>() / n as f64;
    let sorted: Vec<Vec<usize>> = (0..x.n_cols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x.row(a)[f].total_cmp(&x.row(b)[f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut pred = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let grad: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let tree = grow_tree(x, &sorted, &grad, params);
        for (r, p) in pred.iter_mut().enumerate() {
            *p += params.learning_rate * tree.predict(x.row(r));
        }
        trees.push(tree);
    }
    Ok(GbtEnsemble {
        trees,
        learning_rate: params.learning_rate,
        base_score,
        lambda: params.lambda,
        gamma: params.gamma,
        max_depth: params.max_depth,
        n_features: x.n_cols(),
    })
}
