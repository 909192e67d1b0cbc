//! From-scratch tree learners and linear baselines: exact greedy CART,
//! bagged forests with per-split feature subsampling, squared-error
//! gradient boosting with gain-based feature importance, ridge and
//! (multinomial) logistic regression.

use crate::error::CoreError;
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeTask {
    Classification { n_classes: usize },
    Regression,
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Number of candidate features per split; `None` = all features.
    pub feature_subsample: Option<usize>,
    /// Leaf regularization for regression trees (boosting uses 1.0).
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_leaf: 1,
            feature_subsample: None,
            lambda: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Class frequencies (classification) or `[value]` (regression).
        value: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    pub task: TreeTask,
    /// Total split gain accumulated per feature while fitting.
    pub feature_gains: Vec<f64>,
}

impl DecisionTree {
    /// Leaf value for one sample: class frequencies or `[mean]`.
    pub fn predict_row(&self, row: &[f64]) -> &[f64] {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { value } => return value,
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

struct SplitCandidate {
    feature: usize,
    threshold: f64,
    gain: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    task: TreeTask,
    params: TreeParams,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    gains: Vec<f64>,
}

impl<'a> TreeBuilder<'a> {
    fn leaf_value(&self, idx: &[usize]) -> Vec<f64> {
        match self.task {
            TreeTask::Classification { n_classes } => {
                let mut counts = vec![0.0; n_classes];
                for &i in idx {
                    counts[self.y[i] as usize] += 1.0;
                }
                let total: f64 = counts.iter().sum();
                counts.iter().map(|c| c / total).collect()
            }
            TreeTask::Regression => {
                let g: f64 = idx.iter().map(|&i| self.y[i]).sum();
                vec![g / (idx.len() as f64 + self.params.lambda)]
            }
        }
    }

    // Score of a sample set under the split criterion. For classification
    // this is -n * gini; for regression the regularized sum-of-gradients
    // score G^2/(H + lambda). Gain = score(l) + score(r) - score(parent),
    // which for lambda = 0 reduces to the variance decrease times n.
    fn node_score(&self, counts: &ClassCounts) -> f64 {
        match self.task {
            TreeTask::Classification { .. } => {
                let n = counts.n as f64;
                if n == 0.0 {
                    return 0.0;
                }
                let sum_sq: f64 = counts.per_class.iter().map(|&c| c * c).sum();
                // -n * gini = -n + sum_sq / n
                -n + sum_sq / n
            }
            TreeTask::Regression => {
                let h = counts.n as f64 + self.params.lambda;
                counts.g * counts.g / h
            }
        }
    }

    fn best_split(&mut self, idx: &[usize], features: &[usize]) -> Option<SplitCandidate> {
        let parent_counts = ClassCounts::collect(self.task, self.y, idx);
        let parent_score = self.node_score(&parent_counts);
        let mut best: Option<(usize, f64, f64)> = None; // (feature, threshold, gain)

        for &f in features {
            let mut order: Vec<usize> = idx.to_vec();
            order.sort_by(|&a, &b| {
                self.x[a][f]
                    .partial_cmp(&self.x[b][f])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut left = ClassCounts::empty(self.task);
            let mut right = parent_counts.clone();
            for w in 0..order.len() - 1 {
                let i = order[w];
                left.add(self.task, self.y[i]);
                right.remove(self.task, self.y[i]);
                let (v, v_next) = (self.x[i][f], self.x[order[w + 1]][f]);
                if v == v_next {
                    continue; // not a boundary between distinct values
                }
                let n_left = w + 1;
                let n_right = order.len() - n_left;
                if n_left < self.params.min_leaf || n_right < self.params.min_leaf {
                    continue;
                }
                let gain = self.node_score(&left) + self.node_score(&right) - parent_score;
                let threshold = 0.5 * (v + v_next);
                let better = match &best {
                    None => gain > 1e-12,
                    Some((bf, bt, bg)) => {
                        gain > *bg + 1e-12
                            || ((gain - *bg).abs() <= 1e-12 && (f, threshold) < (*bf, *bt))
                    }
                };
                if better {
                    best = Some((f, threshold, gain));
                }
            }
        }

        best.map(|(feature, threshold, gain)| {
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for &i in idx {
                if self.x[i][feature] <= threshold {
                    left.push(i);
                } else {
                    right.push(i);
                }
            }
            SplitCandidate {
                feature,
                threshold,
                gain,
                left,
                right,
            }
        })
    }

    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let n_features = self.x[0].len();
        let stop = idx.len() < 2 * self.params.min_leaf
            || self.params.max_depth.is_some_and(|d| depth >= d)
            || ClassCounts::collect(self.task, self.y, &idx).is_pure(self.task);

        let split = if stop {
            None
        } else {
            let features: Vec<usize> = match self.params.feature_subsample {
                Some(m) if m < n_features => {
                    let mut pool: Vec<usize> = (0..n_features).collect();
                    for i in 0..m {
                        let j = self.rng.gen_range(i..n_features);
                        pool.swap(i, j);
                    }
                    pool.truncate(m);
                    pool.sort_unstable();
                    pool
                }
                _ => (0..n_features).collect(),
            };
            self.best_split(&idx, &features)
        };

        match split {
            Some(s) => {
                self.gains[s.feature] += s.gain;
                let node_idx = self.nodes.len();
                self.nodes.push(Node::Leaf { value: Vec::new() }); // placeholder
                let left = self.build(s.left, depth + 1);
                let right = self.build(s.right, depth + 1);
                self.nodes[node_idx] = Node::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
                node_idx
            }
            None => {
                let value = self.leaf_value(&idx);
                self.nodes.push(Node::Leaf { value });
                self.nodes.len() - 1
            }
        }
    }
}

/// Incremental per-side statistics for split scanning.
#[derive(Debug, Clone)]
struct ClassCounts {
    per_class: Vec<f64>,
    g: f64,
    g2: f64,
    n: usize,
}

impl ClassCounts {
    fn empty(task: TreeTask) -> Self {
        let per_class = match task {
            TreeTask::Classification { n_classes } => vec![0.0; n_classes],
            TreeTask::Regression => Vec::new(),
        };
        ClassCounts {
            per_class,
            g: 0.0,
            g2: 0.0,
            n: 0,
        }
    }

    fn collect(task: TreeTask, y: &[f64], idx: &[usize]) -> Self {
        let mut c = ClassCounts::empty(task);
        for &i in idx {
            c.add(task, y[i]);
        }
        c
    }

    fn add(&mut self, task: TreeTask, y: f64) {
        self.n += 1;
        match task {
            TreeTask::Classification { .. } => self.per_class[y as usize] += 1.0,
            TreeTask::Regression => {
                self.g += y;
                self.g2 += y * y;
            }
        }
    }

    fn remove(&mut self, task: TreeTask, y: f64) {
        self.n -= 1;
        match task {
            TreeTask::Classification { .. } => self.per_class[y as usize] -= 1.0,
            TreeTask::Regression => {
                self.g -= y;
                self.g2 -= y * y;
            }
        }
    }

    fn is_pure(&self, task: TreeTask) -> bool {
        match task {
            TreeTask::Classification { .. } => {
                self.per_class.iter().filter(|&&c| c > 0.0).count() <= 1
            }
            TreeTask::Regression => {
                let n = self.n as f64;
                (self.g2 - self.g * self.g / n) / n < 1e-15
            }
        }
    }
}

/// Greedy exact CART fit. `y` holds class indices (as floats) for
/// classification, real targets for regression.
pub fn fit_tree(
    x: &[Vec<f64>],
    y: &[f64],
    task: TreeTask,
    params: TreeParams,
) -> Result<DecisionTree, CoreError> {
    if x.is_empty() || y.len() != x.len() {
        return Err(CoreError::InvalidInput(
            "tree fit needs >= 1 sample with aligned targets".into(),
        ));
    }
    let n_features = x[0].len();
    if n_features == 0 {
        return Err(CoreError::InvalidInput("tree fit needs features".into()));
    }
    for (i, row) in x.iter().enumerate() {
        if row.len() != n_features {
            return Err(CoreError::InvalidInput(format!("ragged feature row {i}")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInput(format!(
                "NaN/Inf in feature row {i}; impute upstream"
            )));
        }
    }

    let mut builder = TreeBuilder {
        x,
        y,
        task,
        params,
        rng: rng::stream(params.seed, &[rng::tag("tree")]),
        nodes: Vec::new(),
        gains: vec![0.0; n_features],
    };
    let root_idx: Vec<usize> = (0..x.len()).collect();
    builder.build(root_idx, 0);
    Ok(DecisionTree {
        nodes: builder.nodes,
        task,
        feature_gains: builder.gains,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub task: TreeTask,
}

/// Bagged forest with library-default behavior: 100 trees, bootstrap
/// samples, per-split feature subsample of sqrt(p) for classification and
/// all p for regression, unlimited depth, min-leaf 1.
pub fn fit_forest(
    x: &[Vec<f64>],
    y: &[f64],
    task: TreeTask,
    params: ForestParams,
) -> Result<ForestModel, CoreError> {
    if x.is_empty() {
        return Err(CoreError::InvalidInput("empty forest input".into()));
    }
    let p = x[0].len();
    let subsample = match task {
        TreeTask::Classification { .. } => Some((p as f64).sqrt().round().max(1.0) as usize),
        TreeTask::Regression => None,
    };
    let trees: Vec<DecisionTree> = (0..params.n_trees)
        .map(|t| {
            let tree_seed = params.seed ^ rng::tag("forest") ^ (t as u64).wrapping_mul(0x9e37);
            let tree_params = TreeParams {
                max_depth: None,
                min_leaf: 1,
                feature_subsample: subsample,
                lambda: 0.0,
                seed: tree_seed,
            };
            if params.bootstrap {
                let mut stream = rng::stream(params.seed, &[rng::tag("boot"), t as u64]);
                let idx: Vec<usize> = (0..x.len()).map(|_| stream.gen_range(0..x.len())).collect();
                let bx: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
                let by: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                fit_tree(&bx, &by, task, tree_params)
            } else {
                fit_tree(x, y, task, tree_params)
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(ForestModel { trees, task })
}

impl ForestModel {
    /// Mean leaf vector over trees: class probabilities or `[value]`.
    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let mut acc: Vec<f64> = Vec::new();
        for tree in &self.trees {
            let v = tree.predict_row(row);
            if acc.is_empty() {
                acc = v.to_vec();
            } else {
                for (a, &b) in acc.iter_mut().zip(v) {
                    *a += b;
                }
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoostParams {
    pub rounds: usize,
    pub depth: usize,
    pub shrinkage: f64,
    pub lambda: f64,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            rounds: 200,
            depth: 3,
            shrinkage: 0.1,
            lambda: 1.0,
            min_leaf: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoostedModel {
    pub base_score: f64,
    pub trees: Vec<DecisionTree>,
    pub shrinkage: f64,
    /// Cumulative split gain per feature over all rounds.
    pub feature_gains: Vec<f64>,
    /// Training MSE after each round; non-increasing.
    pub train_mse: Vec<f64>,
    /// Set when the target was constant and no trees were fitted.
    pub degenerate: bool,
}

/// Squared-error gradient boosting: residual fitting with shrinkage and
/// leaf regularization.
pub fn fit_boosted(
    x: &[Vec<f64>],
    y: &[f64],
    params: BoostParams,
) -> Result<BoostedModel, CoreError> {
    if x.is_empty() || y.len() != x.len() {
        return Err(CoreError::InvalidInput("empty boosting input".into()));
    }
    let n = x.len() as f64;
    let base = y.iter().sum::<f64>() / n;
    let variance = y.iter().map(|v| (v - base) * (v - base)).sum::<f64>() / n;
    let p = x[0].len();
    let mut model = BoostedModel {
        base_score: base,
        trees: Vec::new(),
        shrinkage: params.shrinkage,
        feature_gains: vec![0.0; p],
        train_mse: Vec::new(),
        degenerate: variance < 1e-15,
    };
    if model.degenerate {
        return Ok(model);
    }

    let mut preds = vec![base; x.len()];
    for round in 0..params.rounds {
        let residuals: Vec<f64> = y.iter().zip(&preds).map(|(t, p)| t - p).collect();
        let tree = fit_tree(
            x,
            &residuals,
            TreeTask::Regression,
            TreeParams {
                max_depth: Some(params.depth),
                min_leaf: params.min_leaf,
                feature_subsample: None,
                lambda: params.lambda,
                seed: params.seed ^ round as u64,
            },
        )?;
        if tree.n_leaves() < 2 {
            break; // nothing left to fit
        }
        for (g, t) in model.feature_gains.iter_mut().zip(&tree.feature_gains) {
            *g += t;
        }
        for (pred, row) in preds.iter_mut().zip(x) {
            *pred += params.shrinkage * tree.predict_row(row)[0];
        }
        model.trees.push(tree);
        let mse = y
            .iter()
            .zip(&preds)
            .map(|(t, p)| (t - p) * (t - p))
            .sum::<f64>()
            / n;
        model.train_mse.push(mse);
    }
    Ok(model)
}

impl BoostedModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut v = self.base_score;
        for tree in &self.trees {
            v += self.shrinkage * tree.predict_row(row)[0];
        }
        v
    }

    /// Gains normalized to sum to 1; all zeros when no split was ever made.
    pub fn importances(&self) -> Vec<f64> {
        let total: f64 = self.feature_gains.iter().sum();
        if total <= 0.0 {
            return vec![0.0; self.feature_gains.len()];
        }
        self.feature_gains.iter().map(|g| g / total).collect()
    }
}

/// Ridge regression via the normal equations; the intercept is not
/// penalized.
#[derive(Debug, Clone)]
pub struct RidgeModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

pub fn fit_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> Result<RidgeModel, CoreError> {
    if x.is_empty() || y.len() != x.len() {
        return Err(CoreError::InvalidInput("empty ridge input".into()));
    }
    let p = x[0].len();
    let d = p + 1; // last column is the intercept
    let mut ata = vec![vec![0.0; d]; d];
    let mut atb = vec![0.0; d];
    for (row, &t) in x.iter().zip(y) {
        let aug = |j: usize| if j < p { row[j] } else { 1.0 };
        for i in 0..d {
            atb[i] += aug(i) * t;
            for j in 0..d {
                ata[i][j] += aug(i) * aug(j);
            }
        }
    }
    for (i, row) in ata.iter_mut().enumerate().take(p) {
        row[i] += lambda;
    }
    let sol = solve_dense(ata, atb)?;
    Ok(RidgeModel {
        intercept: sol[p],
        coef: sol[..p].to_vec(),
    })
}

impl RidgeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coef
                .iter()
                .zip(row)
                .map(|(c, v)| c * v)
                .sum::<f64>()
    }
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, CoreError> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(CoreError::InvalidInput(
                "singular system; increase the ridge term".into(),
            ));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut v = b[col];
        for k in col + 1..n {
            v -= a[col][k] * x[k];
        }
        x[col] = v / a[col][col];
    }
    Ok(x)
}

/// Multinomial logistic regression trained by full-batch gradient descent,
/// capped at `max_iter` iterations (the library-default cap is 1000).
#[derive(Debug, Clone)]
pub struct LogisticModel {
    /// `[n_classes][n_features + 1]`, last column the intercept.
    pub weights: Vec<Vec<f64>>,
    pub iterations_run: usize,
}

pub const LOGISTIC_MAX_ITER: usize = 1000;

pub fn fit_logistic(
    x: &[Vec<f64>],
    y_classes: &[usize],
    n_classes: usize,
    max_iter: usize,
) -> Result<LogisticModel, CoreError> {
    if x.is_empty() || y_classes.len() != x.len() || n_classes < 2 {
        return Err(CoreError::InvalidInput("bad logistic input".into()));
    }
    let p = x[0].len();
    let n = x.len() as f64;
    let mut w = vec![vec![0.0; p + 1]; n_classes];
    let mut lr = 1.0;
    let mut prev_loss = f64::INFINITY;
    let mut iterations_run = 0;

    for _ in 0..max_iter {
        iterations_run += 1;
        // forward: softmax probabilities and loss
        let mut grad = vec![vec![0.0; p + 1]; n_classes];
        let mut loss = 0.0;
        for (row, &t) in x.iter().zip(y_classes) {
            let logits: Vec<f64> = w
                .iter()
                .map(|wc| {
                    wc[p] + wc[..p].iter().zip(row).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let denom: f64 = exps.iter().sum();
            loss -= (exps[t] / denom).ln();
            for (c, e) in exps.iter().enumerate() {
                let err = e / denom - if c == t { 1.0 } else { 0.0 };
                for (j, &v) in row.iter().enumerate() {
                    grad[c][j] += err * v;
                }
                grad[c][p] += err;
            }
        }
        loss /= n;
        if loss > prev_loss + 1e-12 {
            lr *= 0.5; // overshoot: back off and retry from here
        }
        prev_loss = loss.min(prev_loss);

        let mut max_grad = 0.0f64;
        for gc in &grad {
            for &g in gc {
                max_grad = max_grad.max((g / n).abs());
            }
        }
        if max_grad < 1e-7 {
            break;
        }
        for (wc, gc) in w.iter_mut().zip(&grad) {
            for (wj, &gj) in wc.iter_mut().zip(gc) {
                *wj -= lr * gj / n;
            }
        }
    }
    Ok(LogisticModel {
        weights: w,
        iterations_run,
    })
}

impl LogisticModel {
    pub fn predict_probs(&self, row: &[f64]) -> Vec<f64> {
        let p = self.weights[0].len() - 1;
        let logits: Vec<f64> = self
            .weights
            .iter()
            .map(|wc| wc[p] + wc[..p].iter().zip(row).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / denom).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gini(counts: &[f64]) -> f64 {
        let n: f64 = counts.iter().sum();
        if n == 0.0 {
            return 0.0;
        }
        1.0 - counts.iter().map(|c| (c / n) * (c / n)).sum::<f64>()
    }

    // Independent brute-force oracle: try every (feature, midpoint) split
    // and return the best weighted Gini decrease.
    fn brute_force_best_gini_decrease(x: &[Vec<f64>], y: &[f64], n_classes: usize) -> f64 {
        let n = x.len() as f64;
        let mut parent = vec![0.0; n_classes];
        for &t in y {
            parent[t as usize] += 1.0;
        }
        let parent_gini = gini(&parent);
        let mut best = 0.0f64;
        for f in 0..x[0].len() {
            let mut vals: Vec<f64> = x.iter().map(|r| r[f]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let thr = 0.5 * (w[0] + w[1]);
                let mut lc = vec![0.0; n_classes];
                let mut rc = vec![0.0; n_classes];
                for (row, &t) in x.iter().zip(y) {
                    if row[f] <= thr {
                        lc[t as usize] += 1.0;
                    } else {
                        rc[t as usize] += 1.0;
                    }
                }
                let nl: f64 = lc.iter().sum();
                let nr: f64 = rc.iter().sum();
                let dec = parent_gini - (nl * gini(&lc) + nr * gini(&rc)) / n;
                if dec > best {
                    best = dec;
                }
            }
        }
        best
    }

    fn toy_2class_interleaved() -> (Vec<Vec<f64>>, Vec<f64>) {
        // 20 samples, 2 features; class depends mostly on feature 1
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let a = (i % 7) as f64 * 0.31 - 1.0;
            let b = (i as f64) * 0.1;
            x.push(vec![a, b]);
            y.push(if b > 0.95 { 1.0 } else { 0.0 });
        }
        // inject some noise so the split is not trivially clean
        y[3] = 1.0;
        y[17] = 0.0;
        (x, y)
    }

    #[test]
    fn pure_labels_give_a_single_leaf() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![1.0, 1.0, 1.0];
        let tree = fit_tree(
            &x,
            &y,
            TreeTask::Classification { n_classes: 2 },
            TreeParams::default(),
        )
        .unwrap();
        assert_eq!(tree.n_nodes(), 1);
        for row in &x {
            let probs = tree.predict_row(row);
            assert_eq!(probs[1], 1.0);
        }
    }

    #[test]
    fn separable_1d_threshold_lands_between_the_classes() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        let tree = fit_tree(
            &x,
            &y,
            TreeTask::Classification { n_classes: 2 },
            TreeParams::default(),
        )
        .unwrap();
        match &tree.nodes[0] {
            Node::Split { threshold, .. } => {
                assert!(*threshold > 0.4 && *threshold <= 0.5, "threshold {threshold}");
            }
            _ => panic!("expected a root split"),
        }
        let acc = x
            .iter()
            .zip(&y)
            .filter(|(r, &t)| {
                let p = tree.predict_row(r);
                (p[1] > p[0]) == (t == 1.0)
            })
            .count();
        assert_eq!(acc, 10);
    }

    #[test]
    fn root_split_matches_brute_force_oracle() {
        let (x, y) = toy_2class_interleaved();
        let tree = fit_tree(
            &x,
            &y,
            TreeTask::Classification { n_classes: 2 },
            TreeParams {
                max_depth: Some(1),
                ..TreeParams::default()
            },
        )
        .unwrap();
        // chosen root gain (in -n*gini units) converted to mean decrease
        let n = x.len() as f64;
        let got_decrease = tree.feature_gains.iter().sum::<f64>() / n;
        let want = brute_force_best_gini_decrease(&x, &y, 2);
        assert!(
            (got_decrease - want).abs() < 1e-12,
            "gain {got_decrease} vs brute force {want}"
        );
    }

    #[test]
    fn training_rows_reproduce_their_labels_without_limits() {
        let (x, y) = toy_2class_interleaved();
        let tree = fit_tree(
            &x,
            &y,
            TreeTask::Classification { n_classes: 2 },
            TreeParams::default(),
        )
        .unwrap();
        // exact greedy with min_leaf 1 on distinct rows: every sample pure
        for (row, &t) in x.iter().zip(&y) {
            let p = tree.predict_row(row);
            assert_eq!(p[t as usize], 1.0);
        }
    }

    #[test]
    fn nan_features_are_rejected() {
        let x = vec![vec![1.0], vec![f64::NAN]];
        let y = vec![0.0, 1.0];
        assert!(fit_tree(
            &x,
            &y,
            TreeTask::Classification { n_classes: 2 },
            TreeParams::default()
        )
        .is_err());
    }

    fn separable_blobs(n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut stream = rng::stream(4, &[rng::tag("blobs")]);
        for _ in 0..n {
            let cls = stream.gen_range(0..2usize);
            let cx = if cls == 0 { -1.0 } else { 1.0 };
            x.push(vec![
                cx + stream.gen::<f64>() * 0.6 - 0.3,
                stream.gen::<f64>() * 2.0 - 1.0,
            ]);
            y.push(cls as f64);
        }
        (x, y)
    }

    #[test]
    fn forest_learns_a_separable_toy() {
        let (x, y) = separable_blobs(260);
        let (train_x, test_x) = x.split_at(200);
        let (train_y, test_y) = y.split_at(200);
        let forest = fit_forest(
            train_x,
            train_y,
            TreeTask::Classification { n_classes: 2 },
            ForestParams::default(),
        )
        .unwrap();
        let correct = test_x
            .iter()
            .zip(test_y)
            .filter(|(r, &t)| {
                let p = forest.predict_row(r);
                (p[1] > p[0]) == (t == 1.0)
            })
            .count();
        let acc = correct as f64 / test_y.len() as f64;
        assert!(acc > 0.95, "held-out accuracy {acc}");
    }

    #[test]
    fn single_tree_without_bootstrap_equals_fit_tree() {
        let (x, y) = toy_2class_interleaved();
        let forest = fit_forest(
            &x,
            &y,
            TreeTask::Regression,
            ForestParams {
                n_trees: 1,
                bootstrap: false,
                seed: 3,
            },
        )
        .unwrap();
        let lone = fit_tree(
            &x,
            &y,
            TreeTask::Regression,
            TreeParams {
                seed: forest_tree_seed(3, 0),
                ..TreeParams::default()
            },
        )
        .unwrap();
        for row in &x {
            assert_eq!(forest.predict_row(row)[0], lone.predict_row(row)[0]);
        }
    }

    fn forest_tree_seed(seed: u64, t: u64) -> u64 {
        seed ^ rng::tag("forest") ^ t.wrapping_mul(0x9e37)
    }

    #[test]
    fn forest_regression_on_a_noiseless_line() {
        let all: Vec<Vec<f64>> = (0..120).map(|i| vec![i as f64 / 120.0]).collect();
        let ys: Vec<f64> = all.iter().map(|r| r[0]).collect();
        // interleaved holdout: trees cannot extrapolate past the support
        let train_x: Vec<Vec<f64>> = all.iter().enumerate().filter(|(i, _)| i % 4 != 3).map(|(_, r)| r.clone()).collect();
        let test_x: Vec<Vec<f64>> = all.iter().enumerate().filter(|(i, _)| i % 4 == 3).map(|(_, r)| r.clone()).collect();
        let train_y: Vec<f64> = ys.iter().enumerate().filter(|(i, _)| i % 4 != 3).map(|(_, &v)| v).collect();
        let test_y: Vec<f64> = ys.iter().enumerate().filter(|(i, _)| i % 4 == 3).map(|(_, &v)| v).collect();
        let (train_x, test_x) = (&train_x[..], &test_x[..]);
        let (train_y, test_y) = (&train_y[..], &test_y[..]);
        let forest =
            fit_forest(train_x, train_y, TreeTask::Regression, ForestParams::default()).unwrap();
        let preds: Vec<f64> = test_x.iter().map(|r| forest.predict_row(r)[0]).collect();
        let mean = test_y.iter().sum::<f64>() / test_y.len() as f64;
        let sse: f64 = preds
            .iter()
            .zip(test_y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let sst: f64 = test_y.iter().map(|t| (t - mean) * (t - mean)).sum();
        let r2 = 1.0 - sse / sst;
        assert!(r2 > 0.9, "held-out R2 {r2}");
    }

    #[test]
    fn constant_target_boosting_is_degenerate() {
        let x = vec![vec![1.0], vec![2.0], vec![3.0]];
        let y = vec![5.0; 3];
        let model = fit_boosted(&x, &y, BoostParams::default()).unwrap();
        assert!(model.degenerate);
        assert_eq!(model.base_score, 5.0);
        assert!(model.trees.is_empty());
        assert_eq!(model.predict_row(&[9.0]), 5.0);
    }

    // Synthetic relevance oracle: y = 3*x1 + noise, x2 irrelevant.
    #[test]
    fn importance_concentrates_on_the_relevant_feature() {
        let mut stream = rng::stream(8, &[rng::tag("imp")]);
        let x: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![stream.gen::<f64>() * 2.0 - 1.0, stream.gen::<f64>() * 2.0 - 1.0])
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| 3.0 * r[0] + (stream.gen::<f64>() - 0.5) * 0.1)
            .collect();
        let model = fit_boosted(&x, &y, BoostParams::default()).unwrap();
        let imp = model.importances();
        assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(imp[0] > 0.9, "importance of x1: {}", imp[0]);
    }

    #[test]
    fn one_round_full_shrinkage_equals_a_single_stump() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
        let boosted = fit_boosted(
            &x,
            &y,
            BoostParams {
                rounds: 1,
                depth: 1,
                shrinkage: 1.0,
                lambda: 0.0,
                min_leaf: 1,
                seed: 0,
            },
        )
        .unwrap();
        let mean = 0.5;
        let residuals: Vec<f64> = y.iter().map(|t| t - mean).collect();
        let stump = fit_tree(
            &x,
            &residuals,
            TreeTask::Regression,
            TreeParams {
                max_depth: Some(1),
                ..TreeParams::default()
            },
        )
        .unwrap();
        for row in &x {
            let a = boosted.predict_row(row);
            let b = mean + stump.predict_row(row)[0];
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn boosting_training_loss_is_non_increasing() {
        let mut stream = rng::stream(2, &[rng::tag("mono")]);
        let x: Vec<Vec<f64>> = (0..80)
            .map(|_| vec![stream.gen::<f64>(), stream.gen::<f64>()])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| (r[0] * 6.0).sin() + r[1]).collect();
        let model = fit_boosted(&x, &y, BoostParams::default()).unwrap();
        for w in model.train_mse.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "round got worse: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn importances_are_permutation_equivariant() {
        let mut stream = rng::stream(13, &[rng::tag("perm")]);
        let x: Vec<Vec<f64>> = (0..150)
            .map(|_| (0..3).map(|_| stream.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - 1.5 * r[2]).collect();
        // min_leaf 4 keeps nodes large enough that split gains are
        // generically untied; index tie-breaking is not equivariant
        let params = BoostParams {
            min_leaf: 4,
            ..BoostParams::default()
        };
        let base = fit_boosted(&x, &y, params).unwrap();
        let swapped: Vec<Vec<f64>> = x.iter().map(|r| vec![r[2], r[1], r[0]]).collect();
        let perm = fit_boosted(&swapped, &y, params).unwrap();
        let a = base.importances();
        let b = perm.importances();
        // late rounds fit near-zero residuals where gains can tie exactly;
        // a single tie flip shifts attribution by ~1e-7
        assert!((a[0] - b[2]).abs() < 1e-5);
        assert!((a[2] - b[0]).abs() < 1e-5);
        assert!((a[1] - b[1]).abs() < 1e-5);
    }

    #[test]
    fn ridge_recovers_exact_linear_coefficients() {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![(i as f64) * 0.1, ((i * 7) % 13) as f64 * 0.05])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 2.5 * r[0] - 1.25 * r[1] + 0.75).collect();
        let model = fit_ridge(&x, &y, 1e-10).unwrap();
        assert!((model.coef[0] - 2.5).abs() < 1e-6);
        assert!((model.coef[1] + 1.25).abs() < 1e-6);
        assert!((model.intercept - 0.75).abs() < 1e-6);
    }

    #[test]
    fn logistic_separable_reaches_full_accuracy_within_cap() {
        let (x, y) = separable_blobs(120);
        let classes: Vec<usize> = y.iter().map(|&v| v as usize).collect();
        let model = fit_logistic(&x, &classes, 2, LOGISTIC_MAX_ITER).unwrap();
        assert!(model.iterations_run <= LOGISTIC_MAX_ITER);
        let correct = x
            .iter()
            .zip(&classes)
            .filter(|(r, &t)| {
                let p = model.predict_probs(r);
                (p[1] > p[0]) == (t == 1)
            })
            .count();
        assert_eq!(correct, x.len());
    }

    #[test]
    fn logistic_honors_the_iteration_cap() {
        let (x, y) = separable_blobs(60);
        let classes: Vec<usize> = y.iter().map(|&v| v as usize).collect();
        let model = fit_logistic(&x, &classes, 2, 3).unwrap();
        assert_eq!(model.iterations_run, 3);
    }

    #[test]
    fn all_zero_features_fall_back_to_the_base_rate() {
        let x = vec![vec![0.0, 0.0]; 10];
        let classes: Vec<usize> = (0..10).map(|i| usize::from(i < 7)).collect();
        let model = fit_logistic(&x, &classes, 2, LOGISTIC_MAX_ITER).unwrap();
        let p = model.predict_probs(&[0.0, 0.0]);
        // base rate is 7/10 class 1
        assert!((p[1] - 0.7).abs() < 1e-3, "p1 = {}", p[1]);
    }
}
