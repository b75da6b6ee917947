#![allow(dead_code)]

use mcst::mcst::{procrustes, random_orthogonal, sparse_code_layer, AssignmentTable, CodeStack, McstState, ModelBundle};
use mcst::patching::PatchGeometry;
use mcst::recon::{grad_s2, s2_value};
use mcst::Image;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random model plus random codes and assignments over `patches` columns.
pub struct RandomState {
    pub model: ModelBundle,
    pub patches: DMatrix<f64>,
    pub codes: CodeStack,
    pub assign: AssignmentTable,
}

pub fn random_state(seed: u64, side: usize, clusters: &[usize], patches: usize) -> RandomState {
    let mut r = rng(seed);
    let n = side * side;
    let transforms: Vec<Vec<DMatrix<f64>>> = clusters
        .iter()
        .map(|&k| (0..k).map(|_| random_orthogonal(n, r.random())).collect())
        .collect();
    let model = ModelBundle::new(side, transforms, vec![0.5; clusters.len()]).unwrap();
    let codes = CodeStack::new(clusters.iter().map(|_| random_matrix(&mut r, n, patches)).collect()).unwrap();
    let assign = AssignmentTable::new(
        clusters
            .iter()
            .map(|&k| (0..patches).map(|_| r.random_range(0..k)).collect())
            .collect(),
    )
    .unwrap();
    RandomState {
        patches: random_matrix(&mut r, n, patches),
        model,
        codes,
        assign,
    }
}

/// Per-patch, per-layer encoding errors `‖Ω r_l − z_l‖²` by walking the
/// residual recursion one column at a time.
pub fn naive_layer_errors(
    patches: &DMatrix<f64>,
    codes: &[DMatrix<f64>],
    assign: &[Vec<usize>],
    transforms: &[Vec<DMatrix<f64>>],
) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; patches.ncols()]; codes.len()];
    for i in 0..patches.ncols() {
        let mut r: Vec<f64> = patches.column(i).iter().copied().collect();
        for l in 0..codes.len() {
            let omega = &transforms[l][assign[l][i]];
            let n = r.len();
            let mut next = vec![0.0; n];
            for a in 0..n {
                let mut s = 0.0;
                for b in 0..n {
                    s += omega[(a, b)] * r[b];
                }
                next[a] = s - codes[l][(a, i)];
            }
            out[l][i] = next.iter().map(|v| v * v).sum();
            r = next;
        }
    }
    out
}

/// Naive training cost: encoding errors plus `η_l²` times code nonzeros.
pub fn naive_objective(
    patches: &DMatrix<f64>,
    codes: &[DMatrix<f64>],
    assign: &[Vec<usize>],
    transforms: &[Vec<DMatrix<f64>>],
    eta: &[f64],
) -> f64 {
    let errors = naive_layer_errors(patches, codes, assign, transforms);
    let mut total = 0.0;
    for l in 0..codes.len() {
        total += errors[l].iter().sum::<f64>();
        total += eta[l] * eta[l] * codes[l].iter().filter(|v| **v != 0.0).count() as f64;
    }
    total
}

pub fn code_layers(codes: &CodeStack) -> Vec<DMatrix<f64>> {
    (0..codes.layers()).map(|l| codes.layer(l).clone()).collect()
}

pub fn assign_layers(assign: &AssignmentTable) -> Vec<Vec<usize>> {
    (0..assign.layers()).map(|l| assign.layer(l).to_vec()).collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Smooth part of the per-patch cost as a function of `z_{l,i}`.
pub fn patch_cost(s: &RandomState, codes: &[DMatrix<f64>], layer: usize, i: usize, z: &DVector<f64>) -> f64 {
    let col = s.patches.columns(i, 1).into_owned();
    let mut cs: Vec<DMatrix<f64>> = codes.iter().map(|c| c.columns(i, 1).into_owned()).collect();
    cs[layer].set_column(0, z);
    let assign: Vec<Vec<usize>> = assign_layers(&s.assign).iter().map(|a| vec![a[i]]).collect();
    naive_layer_errors(&col, &cs, &assign, s.model.transforms()).iter().map(|e| e[0]).sum()
}

/// Minimum of the sparse-coding subproblem over every support pattern. The
/// smooth part is quadratic, so its gradient and Hessian on a support are
/// recovered exactly from function values and the restricted minimizer comes
/// from a linear solve.
pub fn brute_force_min(s: &RandomState, codes: &[DMatrix<f64>], layer: usize, i: usize, eta: f64) -> f64 {
    let n = s.model.patch_dim();
    let f = |z: &DVector<f64>| patch_cost(s, codes, layer, i, z);
    let basis = |j: usize| DVector::from_fn(n, |k, _| if k == j { 1.0 } else { 0.0 });
    let f0 = f(&DVector::zeros(n));
    let grad: Vec<f64> = (0..n).map(|j| (f(&basis(j)) - f(&(-basis(j)))) / 2.0).collect();
    let hess = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            f(&basis(a)) + f(&(-basis(a))) - 2.0 * f0
        } else {
            (f(&(basis(a) + basis(b))) - f(&(basis(a) - basis(b))) - f(&(basis(b) - basis(a)))
                + f(&(-basis(a) - basis(b))))
                / 4.0
        }
    });
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let mut z = DVector::zeros(n);
        if !support.is_empty() {
            let h = DMatrix::from_fn(support.len(), support.len(), |a, b| hess[(support[a], support[b])]);
            let g = DVector::from_fn(support.len(), |a, _| grad[support[a]]);
            let sol = h.lu().solve(&(-g)).unwrap();
            for (a, &j) in support.iter().enumerate() {
                z[j] = sol[a];
            }
        }
        best = best.min(f(&z) + eta * eta * support.len() as f64);
    }
    best
}

pub fn check_sparse_coding_against_enumeration(seed: u64, layers: usize) -> f64 {
    let mut r = rng(seed);
    let clusters: Vec<usize> = (0..layers).map(|_| r.random_range(1..4)).collect();
    let s = random_state(seed, 2, &clusters, 3);
    let layer = r.random_range(0..layers);
    let eta = r.random_range(0.05..1.5);
    let mut state = McstState::new(s.patches.clone(), s.codes.clone(), s.assign.clone(), &s.model).unwrap();
    sparse_code_layer(&mut state, &s.model, layer, eta).unwrap();
    let before = code_layers(&s.codes);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..3 {
        let z = state.codes().layer(layer).column(i).into_owned();
        let got = patch_cost(&s, &before, layer, i, &z) + eta * eta * z.iter().filter(|v| **v != 0.0).count() as f64;
        worst = worst.max(got - brute_force_min(&s, &before, layer, i, eta));
    }
    worst
}

/// Worst margin `f(candidate) − f(Ω)` over random and perturbed unitaries,
/// where `f(Q) = ‖QR − Y‖²`; nonnegative when the update is optimal.
pub fn procrustes_margin(seed: u64, columns: usize, randoms: usize, perturbations: usize) -> f64 {
    let mut r = rng(seed);
    let rm = random_matrix(&mut r, 8, columns);
    let y = random_matrix(&mut r, 8, columns);
    let omega = procrustes(&rm * y.transpose()).unwrap();
    let f = |q: &DMatrix<f64>| (q * &rm - &y).norm_squared();
    let best = f(&omega);
    let mut margin = f64::INFINITY;
    for _ in 0..randoms {
        margin = margin.min(f(&random_orthogonal(8, r.random())) - best);
    }
    for _ in 0..perturbations {
        // Cayley transform of a small skew matrix keeps the perturbation exactly orthogonal.
        let a = random_matrix(&mut r, 8, 8) * 1e-3;
        let skew = &a - a.transpose();
        let eye = DMatrix::<f64>::identity(8, 8);
        let cayley = (&eye - &skew).try_inverse().unwrap() * (&eye + &skew);
        margin = margin.min(f(&(cayley * &omega)) - best);
    }
    margin
}

pub fn random_image(seed: u64, h: usize, w: usize, lo: f64, hi: f64) -> Image {
    let mut r = rng(seed);
    Image::from_fn(h, w, |_, _| r.random_range(lo..hi))
}

/// A model, codes and assignments sized for `h × w` images with 3×3 patches.
pub fn image_state(seed: u64, h: usize, w: usize, clusters: &[usize]) -> (PatchGeometry, RandomState) {
    let geom = PatchGeometry::new(h, w, 3, 1).unwrap();
    (geom.clone(), random_state(seed, 3, clusters, geom.patch_count()))
}

/// Worst relative mismatch between `grad_s2` and central differences of `β S₂`.
pub fn gradient_fd_error(seed: u64) -> f64 {
    let (geom, s) = image_state(seed, 12, 12, &[3, 2]);
    let x = random_image(seed + 1, 12, 12, 0.0, 5.0);
    let beta = 0.7;
    let g = grad_s2(&x, &geom, &s.model, &s.codes, &s.assign, beta).unwrap();
    let step = 1e-4 * x.max().abs();
    let f = |img: &Image| beta * s2_value(img, &geom, &s.model, &s.codes, &s.assign).unwrap();
    let fd: Vec<f64> = (0..x.len())
        .map(|j| {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up.as_mut_slice()[j] += step;
            dn.as_mut_slice()[j] -= step;
            (f(&up) - f(&dn)) / (2.0 * step)
        })
        .collect();
    let diff: f64 = g.as_slice().iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm
}
