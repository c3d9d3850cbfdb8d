//! Lloyd's k-means with k-means++ seeding and independent restarts.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KmeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once no centroid moves farther than this.
    pub tol: f64,
}

impl Default for KmeansOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
    /// Restarts actually evaluated.
    pub restarts: usize,
    /// Index of the restart that produced this result.
    pub best_restart: usize,
    /// Inertia after each iteration of the winning restart.
    pub inertia_trace: Vec<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Best-inertia clustering over `opts.restarts` k-means++ initialisations.
/// Restart `r` draws from a generator seeded with `seed + r`; ties in
/// inertia go to the lowest restart index.
pub fn kmeans(
    x: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    opts: KmeansOptions,
) -> Result<KmeansResult> {
    let n = x.nrows();
    if k == 0 {
        return Err(Error::Param("k must be at least 1".into()));
    }
    if k > n {
        return Err(Error::Param(format!("k = {k} exceeds sample count {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Param(
            "k-means input contains non-finite values".into(),
        ));
    }
    let restarts = opts.restarts.max(1);
    let runs: Vec<KmeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| lloyd(x, k, seed.wrapping_add(r as u64), opts, r))
        .collect();
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    best.restarts = restarts;
    Ok(best)
}

fn plus_plus_init(x: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut centroids = Array2::zeros((k, x.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&x.row(first));
    let mut d2: Vec<f64> = x
        .rows()
        .into_iter()
        .map(|r| sq_dist(r, x.row(first)))
        .collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a chosen centroid
            Err(_) => rng.random_range(0..n),
        };
        centroids.row_mut(c).assign(&x.row(pick));
        for (i, row) in x.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(row, x.row(pick)));
        }
    }
    centroids
}

fn assign(x: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &mut [usize]) {
    for (i, row) in x.rows().into_iter().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, cen) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(row, cen);
            if d < best.0 {
                best = (d, c);
            }
        }
        labels[i] = best.1;
    }
}

/// Moves points into empty clusters: each empty cluster takes the point of
/// the currently largest cluster that lies farthest from that cluster's mean
/// (lowest index on ties).
fn repair_empty(x: ArrayView2<'_, f64>, k: usize, labels: &mut [usize]) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k)
            .max_by_key(|&c| (sizes[c], std::cmp::Reverse(c)))
            .expect("k >= 1");
        let members: Vec<usize> = (0..labels.len())
            .filter(|&i| labels[i] == largest)
            .collect();
        let mean = x
            .select(Axis(0), &members)
            .mean_axis(Axis(0))
            .expect("nonempty");
        let mut far = (f64::NEG_INFINITY, members[0]);
        for &i in &members {
            let d = sq_dist(x.row(i), mean.view());
            if d > far.0 {
                far = (d, i);
            }
        }
        labels[far.1] = empty;
    }
}

fn update_centroids(x: ArrayView2<'_, f64>, k: usize, labels: &[usize]) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        let mut s = sums.row_mut(l);
        s += &x.row(i);
        counts[l] += 1;
    }
    for (c, &cnt) in counts.iter().enumerate() {
        sums.row_mut(c).mapv_inplace(|v| v / cnt as f64);
    }
    sums
}

fn inertia_of(x: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &[usize]) -> f64 {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(x.row(i), centroids.row(l)))
        .sum()
}

fn lloyd(
    x: ArrayView2<'_, f64>,
    k: usize,
    seed: u64,
    opts: KmeansOptions,
    restart: usize,
) -> KmeansResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(x, k, &mut rng);
    let mut labels = vec![0usize; x.nrows()];
    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..opts.max_iter.max(1) {
        iterations += 1;
        assign(x, &centroids, &mut labels);
        repair_empty(x, k, &mut labels);
        let next = update_centroids(x, k, &labels);
        let shift = next
            .rows()
            .into_iter()
            .zip(centroids.rows())
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        let inertia = inertia_of(x, &centroids, &labels);
        if let Some(&prev) = trace.last() {
            debug_assert!(
                inertia <= prev * (1.0 + 1e-12) + 1e-12,
                "inertia rose from {prev} to {inertia}"
            );
        }
        trace.push(inertia);
        if shift < opts.tol {
            break;
        }
    }
    KmeansResult {
        inertia: *trace.last().expect("at least one iteration"),
        labels,
        centroids,
        iterations,
        restarts: 1,
        best_restart: restart,
        inertia_trace: trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn brute_force_optimum(x: &Array2<f64>, k: usize) -> f64 {
        let n = x.nrows();
        let mut labels = vec![0usize; n];
        let mut best = f64::INFINITY;
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            for l in labels.iter_mut() {
                *l = c % k;
                c /= k;
            }
            if (0..k).any(|g| !labels.contains(&g)) {
                continue;
            }
            let cent = update_centroids(x.view(), k, &labels);
            best = best.min(inertia_of(x.view(), &cent, &labels));
        }
        best
    }

    #[test]
    fn separable_clouds() {
        let x = array![
            [0.0, 0.0],
            [0.2, -0.1],
            [-0.1, 0.1],
            [10.0, 10.0],
            [10.1, 9.9],
            [9.8, 10.2]
        ];
        let r = kmeans(x.view(), 2, 0, KmeansOptions::default()).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[0], r.labels[2]);
        assert_eq!(r.labels[3], r.labels[4]);
        assert_ne!(r.labels[0], r.labels[3]);
        let mut expected = 0.0;
        for block in [0..3, 3..6] {
            let pts = x.slice(ndarray::s![block, ..]);
            let m = pts.mean_axis(Axis(0)).unwrap();
            expected += pts
                .rows()
                .into_iter()
                .map(|r| sq_dist(r, m.view()))
                .sum::<f64>();
        }
        assert!((r.inertia - expected).abs() < 1e-12);
    }

    #[test]
    fn single_cluster_is_global_mean() {
        let x = array![[1.0, 2.0], [3.0, 0.0], [5.0, 4.0], [-1.0, 2.0]];
        let r = kmeans(x.view(), 1, 3, KmeansOptions::default()).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        assert_eq!(r.centroids.row(0), mean);
        let var_sum: f64 = x.var_axis(Axis(0), 0.0).sum();
        assert!((r.inertia - var_sum * 4.0).abs() < 1e-12);
    }

    #[test]
    fn matches_exhaustive_optimum() {
        let x = array![
            [0.0, 0.0],
            [0.5, 0.3],
            [4.0, 4.2],
            [4.5, 3.9],
            [0.2, 5.0],
            [-0.3, 5.5],
            [2.0, 2.0],
            [4.1, 4.8]
        ];
        let r = kmeans(x.view(), 3, 7, KmeansOptions::default()).unwrap();
        let opt = brute_force_optimum(&x, 3);
        assert!((r.inertia - opt).abs() < 1e-9, "{} vs {opt}", r.inertia);
    }

    #[test]
    fn k_larger_than_n_rejected() {
        let x = Array2::<f64>::zeros((3, 2));
        assert!(matches!(
            kmeans(x.view(), 4, 0, KmeansOptions::default()),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn duplicate_points_fill_every_cluster() {
        let x = array![[1.0], [1.0], [1.0], [1.0], [2.0]];
        let r = kmeans(x.view(), 3, 0, KmeansOptions::default()).unwrap();
        for c in 0..3 {
            assert!(r.labels.contains(&c));
        }
    }

    #[test]
    fn inertia_monotone_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((200, 3), || rng.random_range(-1.0..1.0));
        let a = kmeans(x.view(), 5, 42, KmeansOptions::default()).unwrap();
        for w in a.inertia_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        let b = kmeans(x.view(), 5, 42, KmeansOptions::default()).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.restarts, 10);
    }
}
