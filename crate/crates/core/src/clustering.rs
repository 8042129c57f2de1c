//! Complete-linkage agglomerative clustering on Euclidean distances,
//! dendrogram cutting and leaf ordering.
//!
//! Cluster ids follow the usual linkage convention: leaves are `0..n`, and
//! merge `t` creates cluster `n + t`. Equal distances are resolved by the
//! lexicographically smallest `(left_id, right_id)` pair with
//! `left_id < right_id`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Dense;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkageTree {
    pub n_leaves: usize,
    pub merges: Vec<Merge>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassAssignment {
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl ClassAssignment {
    /// Validates labels and renumbers them by first appearance.
    pub fn new(labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let mut relabel = vec![usize::MAX; n_classes];
        let mut next = 0;
        let mut out = Vec::with_capacity(labels.len());
        for &l in &labels {
            if l >= n_classes {
                return Err(Error::contract(format!("label {l} out of range for {n_classes} classes")));
            }
            if relabel[l] == usize::MAX {
                relabel[l] = next;
                next += 1;
            }
            out.push(relabel[l]);
        }
        if next != n_classes {
            return Err(Error::contract(format!("{} of {n_classes} classes are empty", n_classes - next)));
        }
        Ok(Self {
            labels: out,
            n_classes,
        })
    }

    /// Every member in one class.
    pub fn single(n: usize) -> Self {
        Self {
            labels: vec![0; n],
            n_classes: 1,
        }
    }

    pub fn members(&self, class: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == class).collect()
    }
}

pub fn row_profiles(completed: &Dense) -> Vec<Vec<f64>> {
    completed.to_rows()
}

pub fn col_profiles(completed: &Dense) -> Vec<Vec<f64>> {
    (0..completed.cols)
        .map(|j| (0..completed.rows).map(|i| completed.get(i, j)).collect())
        .collect()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_profiles(profiles: &[Vec<f64>]) -> Result<()> {
    if profiles.len() < 2 {
        return Err(Error::contract("clustering needs at least two profiles"));
    }
    let width = profiles[0].len();
    if profiles.iter().any(|p| p.len() != width) {
        return Err(Error::contract("profiles have different lengths"));
    }
    if profiles.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::contract("profiles contain non-finite values"));
    }
    Ok(())
}

/// Complete-linkage clustering.
///
/// Keeps a distance matrix over live clusters and, for each live cluster,
/// its best partner among clusters with a larger id. Complete-linkage
/// distances never shrink under a merge, so a cached partner stays valid
/// unless it was one of the two clusters just merged.
pub fn hac_complete(profiles: &[Vec<f64>]) -> Result<LinkageTree> {
    check_profiles(profiles)?;
    let n = profiles.len();

    // Slot s holds the cluster currently stored at position s.
    let mut dist: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (a, b) = (idx / n, idx % n);
            if a == b {
                0.0
            } else {
                euclidean(&profiles[a], &profiles[b])
            }
        })
        .collect();
    let mut id: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    // best[s] = (distance, partner slot) over live slots whose id exceeds id[s].
    let mut best: Vec<Option<(f64, usize)>> = vec![None; n];

    let scan = |s: usize, dist: &[f64], id: &[usize], alive: &[bool]| -> Option<(f64, usize)> {
        let mut out: Option<(f64, usize)> = None;
        for t in 0..n {
            if !alive[t] || id[t] <= id[s] {
                continue;
            }
            let d = dist[s * n + t];
            let better = match out {
                None => true,
                Some((bd, bt)) => d < bd || (d == bd && id[t] < id[bt]),
            };
            if better {
                out = Some((d, t));
            }
        }
        out
    };
    for s in 0..n {
        best[s] = scan(s, &dist, &id, &alive);
    }

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        // Global minimum over (distance, left id, right id).
        let mut pick: Option<(f64, usize, usize)> = None;
        for s in 0..n {
            if !alive[s] {
                continue;
            }
            if let Some((d, t)) = best[s] {
                let better = match pick {
                    None => true,
                    Some((pd, ps, pt)) => d < pd || (d == pd && (id[s], id[t]) < (id[ps], id[pt])),
                };
                if better {
                    pick = Some((d, s, t));
                }
            }
        }
        let (height, a, b) = pick.expect("at least two live clusters");
        let new_id = n + step;
        merges.push(Merge {
            left: id[a],
            right: id[b],
            height,
            size: size[a] + size[b],
        });

        // Store the merged cluster in slot a; retire slot b.
        for t in 0..n {
            if alive[t] && t != a && t != b {
                let d = dist[a * n + t].max(dist[b * n + t]);
                dist[a * n + t] = d;
                dist[t * n + a] = d;
            }
        }
        alive[b] = false;
        best[b] = None;
        id[a] = new_id;
        size[a] += size[b];
        best[a] = None;

        for s in 0..n {
            if !alive[s] || s == a {
                continue;
            }
            best[s] = match best[s] {
                Some((_, t)) if t == a || t == b => scan(s, &dist, &id, &alive),
                Some((bd, bt)) => {
                    // The new cluster has the largest id, so it only wins strictly.
                    let d = dist[s * n + a];
                    if d < bd {
                        Some((d, a))
                    } else {
                        Some((bd, bt))
                    }
                }
                None => Some((dist[s * n + a], a)),
            };
        }
    }

    Ok(LinkageTree { n_leaves: n, merges })
}

impl LinkageTree {
    /// Checks the structural invariants of a linkage.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_leaves;
        if n < 1 || self.merges.len() + 1 != n {
            return Err(Error::contract(format!("{} merges for {n} leaves", self.merges.len())));
        }
        let mut sizes = vec![1usize; n];
        let mut used = vec![false; 2 * n - 1];
        for (t, m) in self.merges.iter().enumerate() {
            let limit = n + t;
            if m.left >= m.right || m.right >= limit {
                return Err(Error::contract(format!("merge {t} has invalid children ({}, {})", m.left, m.right)));
            }
            if used[m.left] || used[m.right] {
                return Err(Error::contract(format!("merge {t} reuses a consumed cluster")));
            }
            used[m.left] = true;
            used[m.right] = true;
            if !(m.height >= 0.0) || !m.height.is_finite() {
                return Err(Error::contract(format!("merge {t} has invalid height")));
            }
            if t > 0 && m.height < self.merges[t - 1].height {
                return Err(Error::contract(format!("merge heights decrease at step {t}")));
            }
            let s = sizes[m.left] + sizes[m.right];
            if s != m.size {
                return Err(Error::contract(format!("merge {t} size {} != {s}", m.size)));
            }
            sizes.push(s);
        }
        Ok(())
    }

    /// Leaves beneath every cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let n = self.n_leaves;
        let mut out: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for m in &self.merges {
            let mut joined = out[m.left].clone();
            joined.extend_from_slice(&out[m.right]);
            out.push(joined);
        }
        out
    }
}

/// Flat clustering obtained by undoing the last `n_classes - 1` merges.
pub fn cut_tree(tree: &LinkageTree, n_classes: usize) -> Result<ClassAssignment> {
    let n = tree.n_leaves;
    if n_classes < 1 || n_classes > n {
        return Err(Error::contract(format!("n_classes {n_classes} outside [1, {n}]")));
    }
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (t, m) in tree.merges.iter().take(n - n_classes).enumerate() {
        parent[m.left] = n + t;
        parent[m.right] = n + t;
    }
    let mut label_of_root = std::collections::HashMap::new();
    let labels = (0..n)
        .map(|leaf| {
            let r = root(&mut parent, leaf);
            let next = label_of_root.len();
            *label_of_root.entry(r).or_insert(next)
        })
        .collect();
    ClassAssignment::new(labels, n_classes)
}

/// Left-to-right leaf order of the dendrogram. At each merge the child
/// holding the smaller leaf index is drawn first.
pub fn sorted_order(tree: &LinkageTree) -> Vec<usize> {
    let n = tree.n_leaves;
    if n == 0 {
        return Vec::new();
    }
    let mut min_leaf: Vec<usize> = (0..n).collect();
    for m in &tree.merges {
        min_leaf.push(min_leaf[m.left].min(min_leaf[m.right]));
    }
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![n + tree.merges.len() - 1];
    while let Some(c) = stack.pop() {
        if c < n {
            order.push(c);
            continue;
        }
        let m = tree.merges[c - n];
        let (first, second) = if min_leaf[m.left] <= min_leaf[m.right] {
            (m.left, m.right)
        } else {
            (m.right, m.left)
        };
        stack.push(second);
        stack.push(first);
    }
    order
}

/// Applies a permutation to both axes of a matrix.
pub fn permute(matrix: &Dense, row_order: &[usize], col_order: &[usize]) -> Dense {
    let mut out = Dense::zeros(row_order.len(), col_order.len());
    for (r, &i) in row_order.iter().enumerate() {
        for (c, &j) in col_order.iter().enumerate() {
            out.data[r * out.cols + c] = matrix.get(i, j);
        }
    }
    out
}

/// `{"n_leaves": n, "merges": [[left, right, height, size], ...]}` plus the
/// optional leaf keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkageFile {
    pub n_leaves: usize,
    pub merges: Vec<(usize, usize, f64, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keys: Option<Vec<String>>,
}

impl LinkageFile {
    pub fn new(tree: &LinkageTree, keys: Option<Vec<String>>) -> Self {
        Self {
            n_leaves: tree.n_leaves,
            merges: tree.merges.iter().map(|m| (m.left, m.right, m.height, m.size)).collect(),
            keys,
        }
    }

    pub fn tree(&self) -> Result<LinkageTree> {
        let tree = LinkageTree {
            n_leaves: self.n_leaves,
            merges: self
                .merges
                .iter()
                .map(|&(left, right, height, size)| Merge { left, right, height, size })
                .collect(),
        };
        tree.validate()?;
        if let Some(k) = &self.keys {
            if k.len() != self.n_leaves {
                return Err(Error::contract("key list length differs from n_leaves"));
            }
        }
        Ok(tree)
    }
}

/// `{"n_classes": k, "labels": [...], "keys": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFile {
    pub n_classes: usize,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub keys: Vec<String>,
}

impl ClassFile {
    pub fn new(assignment: &ClassAssignment, keys: Vec<String>) -> Self {
        Self {
            n_classes: assignment.n_classes,
            labels: assignment.labels.clone(),
            keys,
        }
    }

    pub fn assignment(&self) -> Result<ClassAssignment> {
        if !self.keys.is_empty() && self.keys.len() != self.labels.len() {
            return Err(Error::contract("class keys and labels differ in length"));
        }
        ClassAssignment::new(self.labels.clone(), self.n_classes)
    }

    /// Reorders labels to follow `keys`; every key must be present.
    pub fn aligned_to(&self, keys: &[String]) -> Result<ClassAssignment> {
        if self.keys.is_empty() {
            if self.labels.len() != keys.len() {
                return Err(Error::contract("class file has no keys and a different length"));
            }
            return ClassAssignment::new(self.labels.clone(), self.n_classes);
        }
        let pos: std::collections::HashMap<&str, usize> =
            self.keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let labels = keys
            .iter()
            .map(|k| {
                pos.get(k.as_str())
                    .map(|&i| self.labels[i])
                    .ok_or_else(|| Error::contract(format!("no class for component `{k}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        ClassAssignment::new(labels, self.n_classes)
    }
}
