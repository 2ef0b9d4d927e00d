use serde::{Deserialize, Serialize};

use super::dataset::Dataset;

/// A regression tree in flat-array form. Node 0 is the root; `feature < 0`
/// marks a leaf. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub feature: Vec<i32>,
    pub threshold: Vec<f64>,
    pub left: Vec<u32>,
    pub right: Vec<u32>,
    pub value: Vec<f64>,
    pub n_data: Vec<u32>,
}

impl DecisionTree {
    fn leaf(value: f64, n_data: usize) -> Self {
        DecisionTree {
            feature: vec![-1],
            threshold: vec![0.0],
            left: vec![0],
            right: vec![0],
            value: vec![value],
            n_data: vec![n_data as u32],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            let f = self.feature[i];
            if f < 0 {
                return self.value[i];
            }
            i = if x[f as usize] <= self.threshold[i] { self.left[i] } else { self.right[i] } as usize;
        }
    }

    pub fn leaf_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.feature.len()).filter(|i| self.feature[*i] < 0)
    }

    pub fn num_leaves(&self) -> usize {
        self.leaf_ids().count()
    }

    pub fn min_leaf_data(&self) -> usize {
        self.leaf_ids().map(|i| self.n_data[i] as usize).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct TreeParams {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
}

const MIN_CHILD_HESSIAN: f64 = 1e-3;

fn soft_threshold(g: f64, l1: f64) -> f64 {
    if g > l1 {
        g - l1
    } else if g < -l1 {
        g + l1
    } else {
        0.0
    }
}

pub(crate) fn leaf_weight(g: f64, h: f64, p: &TreeParams) -> f64 {
    let denom = h + p.lambda_l2;
    if denom <= 0.0 {
        return 0.0;
    }
    -soft_threshold(g, p.lambda_l1) / denom
}

fn score(g: f64, h: f64, p: &TreeParams) -> f64 {
    let s = soft_threshold(g, p.lambda_l1);
    let denom = h + p.lambda_l2;
    if denom <= 0.0 {
        0.0
    } else {
        s * s / denom
    }
}

#[derive(Debug, Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Rows going left, as a count of the feature-sorted order.
    n_left: usize,
}

/// Per-feature row orders and column-major values, built once per training run.
pub(crate) struct Presorted {
    order: Vec<Vec<u32>>,
    columns: Vec<Vec<f64>>,
}

pub(crate) fn presort(data: &Dataset) -> Presorted {
    let columns: Vec<Vec<f64>> =
        (0..data.n_features()).map(|f| (0..data.n_rows()).map(|r| data.value(r, f)).collect()).collect();
    let order = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..data.n_rows() as u32).collect();
            idx.sort_by(|a, b| col[*a as usize].total_cmp(&col[*b as usize]).then(a.cmp(b)));
            idx
        })
        .collect();
    Presorted { order, columns }
}

/// A leaf owns the range `start..end` of every per-feature order.
struct Leaf {
    node: usize,
    start: usize,
    end: usize,
    g: f64,
    h: f64,
    best: Option<Split>,
}

fn best_split(ps: &Presorted, idx: &[Vec<u32>], gh: &[(f64, f64)], leaf: &Leaf, p: &TreeParams) -> Option<Split> {
    let n = leaf.end - leaf.start;
    let min_data = p.min_data_in_leaf.max(1);
    if n < 2 * min_data {
        return None;
    }
    let parent = score(leaf.g, leaf.h, p);
    let mut best: Option<Split> = None;
    let mut best_gain = 0.0;
    for (f, col) in ps.columns.iter().enumerate() {
        let order = &idx[f][leaf.start..leaf.end];
        // Positions before `min_data - 1` cannot end a valid left child.
        let (head, tail) = order.split_at(min_data - 1);
        let (mut gl, mut hl) = (0.0, 0.0);
        for &r in head {
            let (g, h) = gh[r as usize];
            gl += g;
            hl += h;
        }
        let scan = &tail[..n - 2 * min_data + 2];
        let mut x = col[scan[0] as usize];
        for (j, pair) in scan.windows(2).enumerate() {
            let (g, h) = gh[pair[0] as usize];
            gl += g;
            hl += h;
            let here = x;
            let x_next = col[pair[1] as usize];
            x = x_next;
            if x_next <= here {
                continue;
            }
            let (gr, hr) = (leaf.g - gl, leaf.h - hl);
            if hl < MIN_CHILD_HESSIAN || hr < MIN_CHILD_HESSIAN {
                continue;
            }
            let gain = score(gl, hl, p) + score(gr, hr, p) - parent;
            if gain > best_gain {
                best_gain = gain;
                let mid = here + (x_next - here) / 2.0;
                let threshold = if mid < x_next { mid } else { here };
                best = Some(Split { gain, feature: f, threshold, n_left: min_data + j });
            }
        }
    }
    best
}

/// Grows one tree best-first: the leaf with the largest positive gain is
/// split until `num_leaves` is reached or no split gains.
pub(crate) fn grow(ps: &Presorted, grad: &[f64], hess: &[f64], p: &TreeParams) -> DecisionTree {
    let n = grad.len();
    let g: f64 = grad.iter().sum();
    let h: f64 = hess.iter().sum();
    let gh: Vec<(f64, f64)> = grad.iter().copied().zip(hess.iter().copied()).collect();
    let mut tree = DecisionTree::leaf(leaf_weight(g, h, p), n);
    let mut idx = ps.order.clone();
    let mut scratch = vec![0u32; n];
    let mut go_left = vec![false; n];
    let mut root = Leaf { node: 0, start: 0, end: n, g, h, best: None };
    root.best = best_split(ps, &idx, &gh, &root, p);
    // Only leaves with a positive-gain split are kept here.
    let mut leaves: Vec<Leaf> = root.best.is_some().then_some(root).into_iter().collect();
    let mut n_leaves = 1;

    while n_leaves < p.num_leaves {
        let Some(pick) = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|s| (i, s.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, gain)| match acc {
                Some((_, bg)) if bg >= gain => acc,
                _ => Some((i, gain)),
            })
            .map(|(i, _)| i)
        else {
            break;
        };
        let leaf = leaves.remove(pick);
        let split = leaf.best.expect("picked leaf has a split");
        n_leaves += 1;
        let mid = leaf.start + split.n_left;
        let n_right = leaf.end - mid;
        let (mut gl, mut hl) = (0.0, 0.0);
        for (k, &r) in idx[split.feature][leaf.start..leaf.end].iter().enumerate() {
            let left = k < split.n_left;
            go_left[r as usize] = left;
            if left {
                gl += gh[r as usize].0;
                hl += gh[r as usize].1;
            }
        }
        let (gr, hr) = (leaf.g - gl, leaf.h - hl);
        let li = tree.feature.len();
        let ri = li + 1;
        for (count, gg, hh) in [(split.n_left, gl, hl), (n_right, gr, hr)] {
            tree.feature.push(-1);
            tree.threshold.push(0.0);
            tree.left.push(0);
            tree.right.push(0);
            tree.value.push(leaf_weight(gg, hh, p));
            tree.n_data.push(count as u32);
        }
        let node = leaf.node;
        tree.feature[node] = split.feature as i32;
        tree.threshold[node] = split.threshold;
        tree.left[node] = li as u32;
        tree.right[node] = ri as u32;
        tree.value[node] = 0.0;

        let min_split = 2 * p.min_data_in_leaf.max(1);
        if n_leaves == p.num_leaves || (split.n_left < min_split && n_right < min_split) {
            continue;
        }
        // Stable in-place partition keeps every range sorted.
        for order in idx.iter_mut() {
            let seg = &mut order[leaf.start..leaf.end];
            let (mut w, mut k) = (0, 0);
            for i in 0..seg.len() {
                let r = seg[i];
                let l = go_left[r as usize] as usize;
                seg[w] = r;
                scratch[k] = r;
                w += l;
                k += 1 - l;
            }
            seg[w..].copy_from_slice(&scratch[..k]);
        }
        for (node, start, end, g, h) in [(li, leaf.start, mid, gl, hl), (ri, mid, leaf.end, gr, hr)] {
            let mut child = Leaf { node, start, end, g, h, best: None };
            child.best = best_split(ps, &idx, &gh, &child, p);
            if child.best.is_some() {
                leaves.push(child);
            }
        }
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(num_leaves: usize, min_data: usize) -> TreeParams {
        TreeParams { num_leaves, min_data_in_leaf: min_data, lambda_l1: 0.0, lambda_l2: 0.0 }
    }

    #[test]
    fn soft_threshold_definition() {
        assert_eq!(soft_threshold(5.0, 2.0), 3.0);
        assert_eq!(soft_threshold(-5.0, 2.0), -3.0);
        assert_eq!(soft_threshold(1.5, 2.0), 0.0);
    }

    #[test]
    fn single_split_on_step_data() {
        // Squared loss at prediction 0: grad = -y, hess = 1.
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..10).map(|i| if i < 4 { 1.0 } else { 3.0 }).collect();
        let d = Dataset::new(rows, y.clone()).unwrap();
        let grad: Vec<f64> = y.iter().map(|v| -v).collect();
        let hess = vec![1.0; 10];
        let t = grow(&presort(&d), &grad, &hess, &params(2, 1));
        assert_eq!(t.num_leaves(), 2);
        assert_eq!(t.feature[0], 0);
        assert_eq!(t.threshold[0], 3.5);
        assert_eq!(t.predict(&[2.0]), 1.0);
        assert_eq!(t.predict(&[7.0]), 3.0);
    }

    #[test]
    fn constraints_hold() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![(i * 37 % 101) as f64, (i % 7) as f64]).collect();
        let grad: Vec<f64> = (0..200).map(|i| ((i * 13 % 17) as f64) - 8.0).collect();
        let d = Dataset::new(rows, vec![0.0; 200]).unwrap();
        let hess = vec![1.0; 200];
        for (leaves, min_data) in [(2, 1), (5, 10), (31, 20), (8, 90)] {
            let t = grow(&presort(&d), &grad, &hess, &params(leaves, min_data));
            assert!(t.num_leaves() <= leaves);
            assert!(t.min_leaf_data() >= min_data);
            let total: u32 = t.leaf_ids().map(|i| t.n_data[i]).sum();
            assert_eq!(total, 200);
        }
    }

    #[test]
    fn l2_shrinks_leaf_weights() {
        let p0 = TreeParams { lambda_l2: 1.0, ..params(2, 1) };
        let p1 = TreeParams { lambda_l2: 100.0, ..params(2, 1) };
        let w0 = leaf_weight(-10.0, 5.0, &p0);
        let w1 = leaf_weight(-10.0, 5.0, &p1);
        assert!(w0 > w1 && w1 > 0.0);
    }
}
