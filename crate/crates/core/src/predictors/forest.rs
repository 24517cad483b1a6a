//! Bagged regression trees with greedy variance-reduction splits.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{input, Error, Result};
use crate::exec::Execution;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `max(1, ⌊f/3⌋)`.
    pub mtry: Option<usize>,
    /// Minimum number of (bootstrap) samples in a leaf.
    pub min_leaf: usize,
    pub seed: u64,
    /// Draw a bootstrap sample per tree. Disabling it makes every tree see
    /// the full training set.
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { n_trees: 500, mtry: None, min_leaf: 5, seed: 0, bootstrap: true }
    }
}

impl ForestParams {
    pub fn mtry_for(&self, n_features: usize) -> usize {
        self.mtry.unwrap_or((n_features / 3).max(1)).clamp(1, n_features.max(1))
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Parameter("n_trees must be >= 1".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Parameter("min_leaf must be >= 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > n_features {
                return Err(Error::Parameter(format!("mtry must be in 1..={n_features}, got {m}")));
            }
        }
        Ok(())
    }
}

/// Tree node. Leaves have `feature == None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

/// One regression tree; node 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.feature {
                None => return node.value,
                Some(f) => i = if row[f] <= node.threshold { node.left } else { node.right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].feature {
                None => 0,
                Some(_) => 1 + go(t, t.nodes[i].left).max(go(t, t.nodes[i].right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    pub trees: Vec<Tree>,
    n_features: usize,
    oob: DVector<f64>,
}

impl Forest {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Out-of-bag predictions on the training rows: each row averages the
    /// trees whose bootstrap sample missed it. Rows never out of bag (and
    /// every row without bootstrapping) get the full-forest prediction.
    pub fn oob_predictions(&self) -> &DVector<f64> {
        &self.oob
    }
}

struct Columns {
    cols: Vec<Vec<f64>>,
}

impl Columns {
    fn new(x: &DMatrix<f64>) -> Self {
        Self { cols: x.column_iter().map(|c| c.iter().copied().collect()).collect() }
    }
}

fn grow_tree(cols: &Columns, y: &[f64], rows: Vec<usize>, mtry: usize, min_leaf: usize, rng: &mut seed::Rng) -> Tree {
    let f = cols.cols.len();
    let mut nodes: Vec<Node> = Vec::new();
    // (node index, rows)
    let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
    let leaf = |value| Node { feature: None, threshold: 0.0, left: 0, right: 0, value };
    let mean = |rows: &[usize]| rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    nodes.push(leaf(mean(&rows)));
    stack.push((0, rows));
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    while let Some((id, rows)) = stack.pop() {
        let k = rows.len();
        if k < 2 * min_leaf || f == 0 {
            continue;
        }
        let y0 = y[rows[0]];
        if rows.iter().all(|&i| y[i] == y0) {
            continue;
        }
        let total: f64 = rows.iter().map(|&i| y[i]).sum();
        let parent = total * total / k as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        for feat in sample(rng, f, mtry).into_iter() {
            let col = &cols.cols[feat];
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (col[i], y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = 0.0;
            for s in 1..k {
                left += pairs[s - 1].1;
                if s < min_leaf || k - s < min_leaf || pairs[s - 1].0 == pairs[s].0 {
                    continue;
                }
                let right = total - left;
                let score = left * left / s as f64 + right * right / (k - s) as f64;
                if best.is_none_or(|b| score > b.0) {
                    best = Some((score, feat, 0.5 * (pairs[s - 1].0 + pairs[s].0)));
                }
            }
        }
        let Some((score, feat, thr)) = best else { continue };
        if score <= parent + 1e-12 * parent.abs().max(1e-300) {
            continue;
        }
        let col = &cols.cols[feat];
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| col[i] <= thr);
        let (l, r) = (nodes.len(), nodes.len() + 1);
        nodes.push(leaf(mean(&lrows)));
        nodes.push(leaf(mean(&rrows)));
        nodes[id] = Node { feature: Some(feat), threshold: thr, left: l, right: r, value: nodes[id].value };
        stack.push((r, rrows));
        stack.push((l, lrows));
    }
    Tree { nodes }
}

/// Fits `params.n_trees` trees; tree `t` draws from the stream
/// `(params.seed, "tree", t)`, so results do not depend on `exec`.
pub fn rf_fit(x: &DMatrix<f64>, y: &DVector<f64>, params: &ForestParams, exec: Execution) -> Result<Forest> {
    let (n, f) = x.shape();
    if n < 2 {
        return input(format!("forest needs at least 2 rows, got {n}"));
    }
    if y.len() != n {
        return input(format!("{} targets for {n} feature rows", y.len()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return input("forest inputs contain non-finite values");
    }
    params.validate(f)?;
    let mtry = params.mtry_for(f);
    let cols = Columns::new(x);
    let ys: Vec<f64> = y.iter().copied().collect();
    let grown: Vec<(Tree, Vec<bool>)> = exec.map_range(params.n_trees, |t| {
        let mut rng = seed::rng(params.seed, "tree", t as u64);
        let mut in_bag = vec![!params.bootstrap; n];
        let rows: Vec<usize> = if params.bootstrap {
            (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect()
        } else {
            (0..n).collect()
        };
        (grow_tree(&cols, &ys, rows, mtry, params.min_leaf, &mut rng), in_bag)
    });

    let mut sum = vec![0.0; n];
    let mut cnt = vec![0usize; n];
    let mut row = vec![0.0; f];
    for i in 0..n {
        for (j, r) in row.iter_mut().enumerate() {
            *r = cols.cols[j][i];
        }
        for (tree, bag) in &grown {
            if !bag[i] {
                sum[i] += tree.predict_row(&row);
                cnt[i] += 1;
            }
        }
    }
    let trees: Vec<Tree> = grown.into_iter().map(|(t, _)| t).collect();
    let mut forest = Forest { trees, n_features: f, oob: DVector::zeros(n) };
    let full = rf_predict(&forest, x)?;
    forest.oob = DVector::from_fn(n, |i, _| if cnt[i] > 0 { sum[i] / cnt[i] as f64 } else { full[i] });
    Ok(forest)
}

/// Mean of the per-tree predictions, summed in tree order.
pub fn rf_predict(forest: &Forest, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    if x.ncols() != forest.n_features {
        return input(format!("forest expects {} features, got {}", forest.n_features, x.ncols()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return input("prediction features contain non-finite values");
    }
    let nt = forest.trees.len() as f64;
    let mut row = vec![0.0; x.ncols()];
    Ok(DVector::from_fn(x.nrows(), |i, _| {
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        forest.trees.iter().map(|t| t.predict_row(&row)).sum::<f64>() / nt
    }))
}
