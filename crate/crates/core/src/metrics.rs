//! Clustering accuracy under the optimal label assignment, normalized mutual
//! information and adjusted Rand index.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Two labelings and their contingency table. Labels are remapped to dense
/// ids in ascending order of the original values.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelPair {
    pub truth: Vec<usize>,
    pub pred: Vec<usize>,
    /// `contingency[[i, j]]`: samples with true class `i` and cluster `j`.
    pub contingency: Array2<u64>,
}

fn densify(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // ascending original value -> ascending dense id
    for (k, v) in ids.values_mut().enumerate() {
        *v = k;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

impl LabelPair {
    pub fn new(truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Contract(format!(
                "label length mismatch: truth {} vs pred {}",
                truth.len(),
                pred.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Contract("empty labelings".into()));
        }
        let (t, kt) = densify(truth);
        let (p, kp) = densify(pred);
        let mut contingency = Array2::zeros((kt, kp));
        for (&a, &b) in t.iter().zip(&p) {
            contingency[[a, b]] += 1;
        }
        Ok(Self {
            truth: t,
            pred: p,
            contingency,
        })
    }

    pub fn n(&self) -> u64 {
        self.truth.len() as u64
    }

    /// Class sizes `q_i` (row sums).
    pub fn class_sizes(&self) -> Vec<u64> {
        self.contingency
            .rows()
            .into_iter()
            .map(|r| r.sum())
            .collect()
    }

    /// Cluster sizes `p_j` (column sums).
    pub fn cluster_sizes(&self) -> Vec<u64> {
        self.contingency
            .columns()
            .into_iter()
            .map(|c| c.sum())
            .collect()
    }
}

/// Solves the assignment problem exactly: returns `perm` with `perm[row]`
/// the column matched to `row`, maximising `sum weight[[row, perm[row]]]`.
/// Rectangular inputs are padded with zero rows or columns; for more rows
/// than columns, rows matched to padding get `usize::MAX`.
///
/// Shortest augmenting path Hungarian method with potentials, `O(n^3)`.
pub fn assignment_map(weight: &Array2<i64>) -> Vec<usize> {
    let (rows, cols) = weight.dim();
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let max_w = weight.iter().copied().max().unwrap_or(0).max(0);
    // minimise cost = max_w - weight over an n x n padded matrix
    let cost = |i: usize, j: usize| -> i64 {
        if i < rows && j < cols {
            max_w - weight[[i, j]]
        } else {
            max_w
        }
    };
    const INF: i64 = i64::MAX / 4;
    // 1-based arrays; index 0 is the virtual start column
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![usize::MAX; rows];
    for j in 1..=n {
        let i = matched_row[j];
        if i >= 1 && i <= rows && j <= cols {
            perm[i - 1] = j - 1;
        }
    }
    perm
}

/// Fraction of samples whose cluster maps to their true class under the
/// best one-to-one cluster-to-class assignment.
pub fn acc(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let pair = LabelPair::new(truth, pred)?;
    Ok(acc_from(&pair))
}

fn acc_from(pair: &LabelPair) -> f64 {
    let w = pair.contingency.mapv(|c| c as i64);
    let perm = assignment_map(&w);
    let matched: i64 = perm
        .iter()
        .enumerate()
        .filter(|(_, &j)| j != usize::MAX)
        .map(|(i, &j)| w[[i, j]])
        .sum();
    matched as f64 / pair.n() as f64
}

fn entropy(sizes: &[u64], n: f64) -> f64 {
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(T; P) / (H(T) + H(P))` with natural logarithms and `0 log 0 = 0`.
/// If either labeling has a single group the result is 1 when both do
/// (identical partitions) and 0 otherwise.
pub fn nmi(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let pair = LabelPair::new(truth, pred)?;
    Ok(nmi_from(&pair))
}

fn nmi_from(pair: &LabelPair) -> f64 {
    let n = pair.n() as f64;
    let q = pair.class_sizes();
    let p = pair.cluster_sizes();
    let (kt, kp) = pair.contingency.dim();
    if kt == 1 || kp == 1 {
        return if kt == 1 && kp == 1 { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for ((i, j), &m) in pair.contingency.indexed_iter() {
        if m == 0 {
            continue;
        }
        let m = m as f64;
        mi += m / n * (m * n / (q[i] as f64 * p[j] as f64)).ln();
    }
    let h = entropy(&q, n) + entropy(&p, n);
    (2.0 * mi / h).clamp(0.0, 1.0)
}

fn choose2(x: u64) -> i128 {
    let x = x as i128;
    x * (x - 1) / 2
}

/// Adjusted Rand index from exact integer pair counts. Returns 0 when the
/// denominator vanishes (both partitions trivial).
pub fn ari(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let pair = LabelPair::new(truth, pred)?;
    if pair.n() < 2 {
        return Err(Error::Contract("ARI needs at least 2 samples".into()));
    }
    Ok(ari_from(&pair))
}

fn ari_from(pair: &LabelPair) -> f64 {
    let index: i128 = pair.contingency.iter().map(|&m| choose2(m)).sum();
    let a: i128 = pair.class_sizes().into_iter().map(choose2).sum();
    let b: i128 = pair.cluster_sizes().into_iter().map(choose2).sum();
    let total = choose2(pair.n());
    // (index - ab/total) / ((a+b)/2 - ab/total), scaled by 2*total
    let num = 2 * (index * total - a * b);
    let den = (a + b) * total - 2 * a * b;
    if den == 0 {
        return 0.0;
    }
    num as f64 / den as f64
}

/// ACC, NMI and ARI of one labeling against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

pub fn score(truth: &[usize], pred: &[usize]) -> Result<Scores> {
    let pair = LabelPair::new(truth, pred)?;
    if pair.n() < 2 {
        return Err(Error::Contract("scoring needs at least 2 samples".into()));
    }
    Ok(Scores {
        acc: acc_from(&pair),
        nmi: nmi_from(&pair),
        ari: ari_from(&pair),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn assignment_examples() {
        assert_eq!(assignment_map(&array![[5, 0], [0, 5]]), vec![0, 1]);
        assert_eq!(assignment_map(&array![[0, 5], [5, 0]]), vec![1, 0]);
        assert_eq!(assignment_map(&array![[1, 9, 0]]), vec![1]);
        assert_eq!(assignment_map(&array![[1], [9]]), vec![usize::MAX, 0]);
        assert!(assignment_map(&Array2::zeros((0, 0))).is_empty());
    }

    #[test]
    fn acc_examples() {
        let t = [0, 0, 1, 1, 2, 2];
        assert_eq!(acc(&t, &t).unwrap(), 1.0);
        assert_eq!(acc(&t, &[2, 2, 0, 0, 1, 1]).unwrap(), 1.0);
        assert!((acc(&t, &[0, 1, 1, 1, 2, 2]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!(matches!(acc(&t, &[0]), Err(Error::Contract(_))));
    }

    #[test]
    fn nmi_examples() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.0);
        assert_eq!(nmi(&[0, 0, 1, 1], &[3, 3, 3, 3]).unwrap(), 0.0);
        assert_eq!(nmi(&[4, 4], &[1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(ari(&[0, 0, 1, 1, 2], &[0, 0, 1, 1, 2]).unwrap(), 1.0);
        // every contingency cell is 1: index 0, class and cluster pair sums 2,
        // C(4,2) = 6, so (0 - 4/6) / (2 - 4/6) = -1/2
        assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap(), 0.0);
        assert_eq!(ari(&[0, 0, 0], &[1, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn independent_labels_have_low_nmi() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let t: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
        let p: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
        assert!(nmi(&t, &p).unwrap() < 0.05);
    }

    #[test]
    fn contingency_margins() {
        let pair = LabelPair::new(&[0, 0, 1, 2, 2, 2], &[5, 1, 1, 1, 5, 5]).unwrap();
        assert_eq!(pair.contingency.sum(), 6);
        assert_eq!(pair.class_sizes(), vec![2, 1, 3]);
        assert_eq!(pair.cluster_sizes(), vec![3, 3]);
    }
}
