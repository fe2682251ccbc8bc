//! Gradient-boosted decision trees with a softmax multiclass objective.
//! Each boosting round fits one regression tree per class on the gradient
//! g = p - 1[y = c] and hessian h = p (1 - p) of the cross-entropy loss.
//! Splits are exact greedy over sorted feature values.

use serde::{Deserialize, Serialize};

use crate::beat::BeatClass;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtConfig {
    /// Boosting rounds; each round trains one tree per class.
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub reg_lambda: f64,
    pub min_samples_leaf: usize,
    /// Stop after this many rounds without validation improvement
    /// (0 disables early stopping).
    pub early_stopping_patience: usize,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            rounds: 1000,
            max_depth: 8,
            learning_rate: 0.1,
            reg_lambda: 1.0,
            min_samples_leaf: 20,
            early_stopping_patience: 50,
        }
    }
}

/// Node of a regression tree, stored in a flat arena.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        /// Goes left when x[feature] <= threshold.
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GbdtModel {
    pub version: u32,
    pub n_features: usize,
    pub n_classes: usize,
    pub learning_rate: f64,
    /// rounds x n_classes, row major.
    pub trees: Vec<Tree>,
    pub base_score: Vec<f64>,
}

pub const GBDT_VERSION: u32 = 1;

impl GbdtModel {
    pub fn rounds(&self) -> usize {
        self.trees.len() / self.n_classes
    }

    /// Raw additive scores per class.
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = self.base_score.clone();
        for (i, tree) in self.trees.iter().enumerate() {
            s[i % self.n_classes] += tree.predict(x);
        }
        s
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.scores(x))
    }

    pub fn predict(&self, x: &[f64]) -> BeatClass {
        let p = self.scores(x);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        BeatClass::from_index(best).unwrap()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let model: GbdtModel =
            serde_json::from_str(&json).map_err(|e| Error::Serde(e.to_string()))?;
        if model.version != GBDT_VERSION {
            return Err(Error::Invalid(format!(
                "model version {} != supported {}",
                model.version, GBDT_VERSION
            )));
        }
        Ok(model)
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Multiclass cross-entropy averaged over samples.
pub fn log_loss(model: &GbdtModel, xs: &[Vec<f64>], ys: &[BeatClass]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        let p = model.predict_proba(x);
        acc -= p[y.index()].max(1e-15).ln();
    }
    acc / xs.len() as f64
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Training log loss after each round.
    pub train_loss: Vec<f64>,
    /// Validation macro F1 after each round (empty without validation data).
    pub val_macro_f1: Vec<f64>,
    pub best_round: usize,
    pub stopped_early: bool,
}

pub fn train(
    xs: &[Vec<f64>],
    ys: &[BeatClass],
    val: Option<(&[Vec<f64>], &[BeatClass])>,
    cfg: &GbdtConfig,
) -> Result<(GbdtModel, TrainReport)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Invalid(format!(
            "gbdt train: {} features vs {} labels",
            xs.len(),
            ys.len()
        )));
    }
    let n_features = xs[0].len();
    for (i, x) in xs.iter().enumerate() {
        if x.len() != n_features {
            return Err(Error::Shape {
                expected: n_features,
                got: x.len(),
                context: format!("feature row {i}"),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite feature in row {i}")));
        }
    }
    let n_classes = BeatClass::COUNT;
    let n = xs.len();

    // Features sorted once per column; trees index into these orders.
    let sorted: Vec<Vec<usize>> = (0..n_features)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| xs[a][f].partial_cmp(&xs[b][f]).unwrap().then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut model = GbdtModel {
        version: GBDT_VERSION,
        n_features,
        n_classes,
        learning_rate: cfg.learning_rate,
        trees: Vec::with_capacity(cfg.rounds * n_classes),
        base_score: vec![0.0; n_classes],
    };

    // Current raw scores per sample per class.
    let mut scores = vec![vec![0.0; n_classes]; n];
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_macro_f1: Vec::new(),
        best_round: 0,
        stopped_early: false,
    };
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_trees = 0;
    let mut since_best = 0;

    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];

    for round in 0..cfg.rounds {
        for class in 0..n_classes {
            for i in 0..n {
                let p = softmax(&scores[i]);
                let target = if ys[i].index() == class { 1.0 } else { 0.0 };
                grad[i] = p[class] - target;
                hess[i] = p[class] * (1.0 - p[class]);
            }
            let tree = grow_tree(xs, &sorted, &grad, &hess, cfg)?;
            for (i, s) in scores.iter_mut().enumerate() {
                s[class] += tree.predict(&xs[i]);
            }
            model.trees.push(tree);
        }
        report.train_loss.push(log_loss_from_scores(&scores, ys));

        if let Some((vx, vy)) = val {
            let f1 = crate::metrics::macro_f1_of(&model, vx, vy);
            report.val_macro_f1.push(f1);
            if f1 > best_f1 {
                best_f1 = f1;
                best_trees = model.trees.len();
                report.best_round = round;
                since_best = 0;
            } else {
                since_best += 1;
                if cfg.early_stopping_patience > 0 && since_best >= cfg.early_stopping_patience {
                    report.stopped_early = true;
                    break;
                }
            }
        }
    }
    if val.is_some() && best_trees > 0 {
        model.trees.truncate(best_trees);
    }
    Ok((model, report))
}

fn log_loss_from_scores(scores: &[Vec<f64>], ys: &[BeatClass]) -> f64 {
    let mut acc = 0.0;
    for (s, y) in scores.iter().zip(ys.iter()) {
        let p = softmax(s);
        acc -= p[y.index()].max(1e-15).ln();
    }
    acc / scores.len() as f64
}

fn gain_term(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Grows one tree on the given gradients. Nodes hold index lists; splits
/// scan each feature in sorted order and take the best positive-gain split
/// respecting the leaf size floor.
fn grow_tree(
    xs: &[Vec<f64>],
    sorted: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    cfg: &GbdtConfig,
) -> Result<Tree> {
    let n = xs.len();
    let mut nodes = Vec::new();
    let root_members: Vec<usize> = (0..n).collect();
    // In-membership marker reused across nodes; versioned to avoid clearing.
    let mut mark = vec![0u32; n];
    let mut mark_version = 0u32;

    struct Work {
        node_idx: usize,
        members: Vec<usize>,
        depth: usize,
    }

    nodes.push(Node::Leaf { value: 0.0 });
    let mut stack = vec![Work {
        node_idx: 0,
        members: root_members,
        depth: 0,
    }];

    while let Some(w) = stack.pop() {
        let g_sum: f64 = w.members.iter().map(|&i| grad[i]).sum();
        let h_sum: f64 = w.members.iter().map(|&i| hess[i]).sum();
        let leaf_value = -g_sum / (h_sum + cfg.reg_lambda) * cfg.learning_rate;

        let splittable =
            w.depth < cfg.max_depth && w.members.len() >= 2 * cfg.min_samples_leaf;
        let best = if splittable {
            find_best_split(xs, sorted, grad, hess, &w.members, &mut mark, &mut mark_version, cfg, g_sum, h_sum)
        } else {
            None
        };

        match best {
            None => {
                nodes[w.node_idx] = Node::Leaf { value: leaf_value };
            }
            Some((feature, threshold)) => {
                let (left_members, right_members): (Vec<usize>, Vec<usize>) = w
                    .members
                    .iter()
                    .partition(|&&i| xs[i][feature] <= threshold);
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                let right = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[w.node_idx] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push(Work {
                    node_idx: left,
                    members: left_members,
                    depth: w.depth + 1,
                });
                stack.push(Work {
                    node_idx: right,
                    members: right_members,
                    depth: w.depth + 1,
                });
            }
        }
    }
    Ok(Tree { nodes })
}

#[allow(clippy::too_many_arguments)]
fn find_best_split(
    xs: &[Vec<f64>],
    sorted: &[Vec<usize>],
    grad: &[f64],
    hess: &[f64],
    members: &[usize],
    mark: &mut [u32],
    mark_version: &mut u32,
    cfg: &GbdtConfig,
    g_total: f64,
    h_total: f64,
) -> Option<(usize, f64)> {
    *mark_version += 1;
    let version = *mark_version;
    for &i in members {
        mark[i] = version;
    }
    let parent_term = gain_term(g_total, h_total, cfg.reg_lambda);
    let mut best: Option<(f64, usize, f64)> = None;

    for (feature, order) in sorted.iter().enumerate() {
        let mut g_left = 0.0;
        let mut h_left = 0.0;
        let mut n_left = 0usize;
        let mut prev_value: Option<f64> = None;
        for &i in order {
            if mark[i] != version {
                continue;
            }
            let v = xs[i][feature];
            // A split can only fall between distinct values.
            if let Some(pv) = prev_value {
                if v > pv
                    && n_left >= cfg.min_samples_leaf
                    && members.len() - n_left >= cfg.min_samples_leaf
                {
                    let g_right = g_total - g_left;
                    let h_right = h_total - h_left;
                    let gain = 0.5
                        * (gain_term(g_left, h_left, cfg.reg_lambda)
                            + gain_term(g_right, h_right, cfg.reg_lambda)
                            - parent_term);
                    if gain > 1e-12 && best.map_or(true, |(bg, _, _)| gain > bg) {
                        // Midpoint keeps prediction stable under small
                        // feature perturbations.
                        best = Some((gain, feature, 0.5 * (pv + v)));
                    }
                }
            }
            g_left += grad[i];
            h_left += hess[i];
            n_left += 1;
            prev_value = Some(v);
        }
    }
    best.map(|(_, f, t)| (f, t))
}
