use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Separable 2D orthonormal DCT-II acting on row-major vectorized `√n × √n` patches.
pub fn dct2_matrix(n: usize) -> Result<DMatrix<f64>> {
    let side = (n as f64).sqrt().round() as usize;
    if side == 0 || side * side != n {
        return Err(Error::Config(format!("{n} is not a positive perfect square")));
    }
    let m = side as f64;
    let d1 = DMatrix::from_fn(side, side, |k, j| {
        let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
        scale * (PI * (2 * j + 1) as f64 * k as f64 / (2.0 * m)).cos()
    });
    Ok(d1.kronecker(&d1))
}

/// Orthogonal factor of a seeded standard-normal matrix, signs fixed so that
/// the triangular factor has a positive diagonal.
pub fn random_orthogonal(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = DMatrix::<f64>::zeros(n, n);
    for v in a.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let qr = a.qr();
    let r = qr.r();
    let mut q = qr.q();
    for (j, mut col) in q.column_iter_mut().enumerate() {
        if r[(j, j)] < 0.0 {
            col.neg_mut();
        }
    }
    q
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's k-means on patch columns with seeded k-means++ seeding. Every
/// returned cluster is nonempty; empty clusters are re-seeded with the patch
/// farthest from its current center.
pub fn kmeans_init(patches: &DMatrix<f64>, clusters: usize, seed: u64, max_iters: usize) -> Result<Vec<usize>> {
    let count = patches.ncols();
    if clusters == 0 || clusters > count {
        return Err(Error::Config(format!(
            "cannot form {clusters} clusters from {count} patches"
        )));
    }
    if clusters == 1 {
        return Ok(vec![0; count]);
    }
    let n = patches.nrows();
    let column = |i: usize| &patches.as_slice()[i * n..(i + 1) * n];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![rng.random_range(0..count)];
    let mut d2: Vec<f64> = (0..count).map(|i| sq_dist(column(i), column(chosen[0]))).collect();
    while chosen.len() < clusters {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut pick = rng.random::<f64>() * total;
            let mut idx = count - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && pick < d {
                    idx = i;
                    break;
                }
                pick -= d;
            }
            idx
        } else {
            (0..count).find(|i| !chosen.contains(i)).expect("clusters ≤ count")
        };
        chosen.push(next);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(column(i), column(next)));
        }
    }
    let mut centers: Vec<Vec<f64>> = chosen.iter().map(|&i| column(i).to_vec()).collect();

    let mut labels = vec![usize::MAX; count];
    for _ in 0..max_iters.max(1) {
        let fresh: Vec<(usize, f64)> = (0..count)
            .into_par_iter()
            .map(|i| nearest(column(i), &centers))
            .collect();
        let changed = fresh.iter().zip(&labels).any(|((k, _), old)| k != old);
        for (label, (k, _)) in labels.iter_mut().zip(&fresh) {
            *label = *k;
        }
        fill_empty_clusters(&mut labels, &fresh, clusters);
        if !changed {
            break;
        }
        centers = cluster_means(&labels, clusters, n, column);
    }
    Ok(labels)
}

fn cluster_means<'a>(
    labels: &[usize],
    clusters: usize,
    n: usize,
    column: impl Fn(usize) -> &'a [f64],
) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; n]; clusters];
    let mut sizes = vec![0usize; clusters];
    for (i, &k) in labels.iter().enumerate() {
        sizes[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(column(i)) {
            *s += v;
        }
    }
    for (sum, size) in sums.iter_mut().zip(sizes) {
        if size > 0 {
            sum.iter_mut().for_each(|v| *v /= size as f64);
        }
    }
    sums
}

fn fill_empty_clusters(labels: &mut [usize], fresh: &[(usize, f64)], clusters: usize) {
    let mut sizes = vec![0usize; clusters];
    for &k in labels.iter() {
        sizes[k] += 1;
    }
    let mut dist: Vec<f64> = fresh.iter().map(|(_, d)| *d).collect();
    for empty in 0..clusters {
        if sizes[empty] > 0 {
            continue;
        }
        // farthest patch whose cluster can spare it
        let mut best: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] > 1 && best.is_none_or(|b| dist[i] > dist[b]) {
                best = Some(i);
            }
        }
        if let Some(i) = best {
            sizes[labels[i]] -= 1;
            labels[i] = empty;
            sizes[empty] = 1;
            dist[i] = 0.0;
        }
    }
}
