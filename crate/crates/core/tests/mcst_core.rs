mod common;

use std::f64::consts::PI;

use common::{
    assign_layers, check_sparse_coding_against_enumeration, code_layers, naive_layer_errors, naive_objective, procrustes_margin,
    random_matrix, random_state, rel_err, rng,
};
use mcst::mcst::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn identity_model(side: usize, layers: usize) -> ModelBundle {
    let n = side * side;
    ModelBundle::new(side, vec![vec![DMatrix::identity(n, n)]; layers], vec![0.0; layers]).unwrap()
}

#[test]
fn hard_threshold_examples() {
    assert_eq!(hard_threshold(&[3.0, 1.5, -5.0, 2.0], 2.0), vec![3.0, 0.0, -5.0, 2.0]);
    assert_eq!(hard_threshold(&[3.0, -0.1, 0.0], 0.0), vec![3.0, -0.1, 0.0]);
    assert_eq!(hard_threshold(&[-1.9999, 2.0001], 2.0), vec![0.0, 2.0001]);
}

#[test]
fn zero_codes_preserve_residual_norms() {
    let s = random_state(1, 3, &[2, 3, 2], 20);
    let codes = CodeStack::zeros(3, 9, 20);
    let res = propagate_residuals(s.patches.clone(), &codes, &s.assign, &s.model).unwrap();
    for l in 0..3 {
        for i in 0..20 {
            let a = res.layer(l).column(i).norm();
            let b = s.patches.column(i).norm();
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }
}

#[test]
fn single_layer_residual_is_the_patches() {
    let s = random_state(2, 2, &[3], 7);
    let res = propagate_residuals(s.patches.clone(), &s.codes, &s.assign, &s.model).unwrap();
    assert_eq!(res.layers(), 1);
    assert_eq!(res.layer(0), &s.patches);
}

#[test]
fn exact_first_layer_codes_empty_the_second_residual() {
    let model = identity_model(2, 2);
    let x = random_matrix(&mut rng(3), 4, 5);
    let codes = CodeStack::new(vec![x.clone(), DMatrix::zeros(4, 5)]).unwrap();
    let res = propagate_residuals(x, &codes, &AssignmentTable::constant(2, 5), &model).unwrap();
    assert!(res.layer(1).iter().all(|v| *v == 0.0));
}

#[test]
fn backprop_vector_cases() {
    let s = random_state(4, 2, &[2, 2, 2], 6);
    for p in 0..3 {
        let b = backprop_vector(3, p, p + 1, &s.codes, &s.assign, &s.model).unwrap();
        let omega = s.model.transform(p, s.assign.get(3, p));
        let expect = omega.transpose() * s.codes.layer(p).column(3);
        assert!((b - expect).norm() <= 1e-12);
    }
    let zeros = CodeStack::zeros(3, 4, 6);
    let b = backprop_vector(0, 0, 3, &zeros, &s.assign, &s.model).unwrap();
    assert_eq!(b, DVector::zeros(4));

    let ident = identity_model(2, 3);
    let flat = AssignmentTable::constant(3, 6);
    let b = backprop_vector(2, 0, 3, &s.codes, &flat, &ident).unwrap();
    let sum = s.codes.layer(0).column(2) + s.codes.layer(1).column(2) + s.codes.layer(2).column(2);
    assert!((b - sum).norm() <= 1e-14);

    assert!(backprop_vector(0, 2, 2, &s.codes, &s.assign, &s.model).is_err());
    assert!(backprop_vector(0, 0, 4, &s.codes, &s.assign, &s.model).is_err());
}

#[test]
fn tail_sum_matches_summed_backprop_vectors() {
    let s = random_state(5, 2, &[2, 3, 2], 9);
    for level in 0..3 {
        let tail = backprop_tail_sum(&s.codes, &s.assign, &s.model, level);
        for i in 0..9 {
            let mut expect = DVector::zeros(4);
            for q in level + 1..=3 {
                expect += backprop_vector(i, level, q, &s.codes, &s.assign, &s.model).unwrap();
            }
            assert!((tail.column(i) - expect).norm() <= 1e-12);
        }
    }
}

#[test]
fn encoding_residual_cases() {
    let s = random_state(6, 2, &[2, 2, 2], 8);
    let state = McstState::new(s.patches.clone(), s.codes.clone(), s.assign.clone(), &s.model).unwrap();
    for layer in 1..3 {
        for from in 0..layer {
            for i in 0..8 {
                let direct = encoding_residual_norm(&state, &s.model, i, layer);
                let via = encoding_residual_norm_disentangled(&state, &s.model, i, layer, from).unwrap();
                assert!(rel_err(direct, via) <= 1e-10, "{direct} vs {via}");
            }
        }
    }
    let zero = McstState::with_zero_codes(s.patches.clone(), s.assign.clone(), &s.model).unwrap();
    for l in 0..3 {
        let norm = encoding_residual_norm(&zero, &s.model, 0, l);
        assert!((norm - s.patches.column(0).norm()).abs() <= 1e-12);
    }

    // Codes equal to the transformed residual leave nothing to encode.
    let model = identity_model(2, 1);
    let codes = CodeStack::new(vec![s.patches.clone()]).unwrap();
    let exact = McstState::new(s.patches.clone(), codes, AssignmentTable::constant(1, 8), &model).unwrap();
    assert_eq!(encoding_residual_norm(&exact, &model, 4, 0), 0.0);
}

#[test]
fn single_layer_sparse_coding_thresholds_the_transform() {
    let s = random_state(7, 2, &[3], 30);
    let mut state = McstState::new(s.patches.clone(), s.codes.clone(), s.assign.clone(), &s.model).unwrap();
    sparse_code_layer(&mut state, &s.model, 0, 0.6).unwrap();
    for i in 0..30 {
        let u = s.model.transform(0, s.assign.get(i, 0)) * s.patches.column(i);
        let expect = hard_threshold(u.as_slice(), 0.6);
        let got: Vec<f64> = state.codes().layer(0).column(i).iter().copied().collect();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-14);
        }
    }
}

#[test]
fn first_layer_of_two_uses_scaled_threshold_when_deeper_codes_vanish() {
    let s = random_state(8, 2, &[2, 2], 40);
    let mut state = McstState::with_zero_codes(s.patches.clone(), s.assign.clone(), &s.model).unwrap();
    let eta = 0.7;
    sparse_code_layer(&mut state, &s.model, 0, eta).unwrap();
    let t = eta / 2f64.sqrt();
    for i in 0..40 {
        let u = s.model.transform(0, s.assign.get(i, 0)) * s.patches.column(i);
        let got = state.codes().layer(0).column(i);
        for j in 0..4 {
            let expect = if u[j].abs() < t { 0.0 } else { u[j] };
            assert!((got[j] - expect).abs() <= 1e-14);
        }
    }
}

#[test]
fn sparse_coding_beats_every_support_pattern() {
    for seed in 0..30 {
        let gap = check_sparse_coding_against_enumeration(seed, 1 + seed as usize % 3);
        assert!(gap <= 1e-10, "seed {seed}: gap {gap}");
    }
}

#[test]
fn sparse_codes_respect_the_threshold_floor() {
    let s = random_state(9, 3, &[2, 2, 2], 50);
    let mut state = McstState::new(s.patches.clone(), s.codes.clone(), s.assign.clone(), &s.model).unwrap();
    let eta = [0.9, 0.5, 0.3];
    for l in 0..3 {
        sparse_code_layer(&mut state, &s.model, l, eta[l]).unwrap();
        let t = eta[l] / ((3 - l) as f64).sqrt();
        assert!(state.codes().layer(l).iter().all(|v| *v == 0.0 || v.abs() >= t));
    }
}

#[test]
fn single_cluster_assignment_never_moves() {
    let s = random_state(10, 2, &[1, 1], 12);
    let mut state = McstState::new(s.patches.clone(), s.codes.clone(), s.assign.clone(), &s.model).unwrap();
    assert_eq!(assign_clusters_layer(&mut state, &s.model, 0).unwrap(), 0);
    assert!(state.assignments().layer(0).iter().all(|&k| k == 0));
}

#[test]
fn rotation_candidate_loses_to_identity() {
    // A 2-D rotation by 90° embedded in the first two coordinates.
    let mut rot = DMatrix::identity(4, 4);
    rot[(0, 0)] = 0.0;
    rot[(1, 1)] = 0.0;
    rot[(0, 1)] = -1.0;
    rot[(1, 0)] = 1.0;
    let model = ModelBundle::new(2, vec![vec![DMatrix::identity(4, 4), rot.clone()]], vec![0.0]).unwrap();
    let r = DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
    let cost = |omega: &DMatrix<f64>| (omega * &r - &r).norm_squared();
    assert_eq!(cost(&DMatrix::identity(4, 4)), 0.0);
    assert!((cost(&rot) - 2.0).abs() < 1e-15);
    for start in [0, 1] {
        let codes = CodeStack::new(vec![r.clone()]).unwrap();
        let assign = AssignmentTable::new(vec![vec![start]]).unwrap();
        let mut state = McstState::new(r.clone(), codes, assign, &model).unwrap();
        assign_clusters_layer(&mut state, &model, 0).unwrap();
        assert_eq!(state.assignments().get(0, 0), 0);
    }
}

#[test]
fn zero_codes_tie_and_keep_the_incumbent() {
    let s = random_state(11, 2, &[4, 3], 25);
    let mut state = McstState::with_zero_codes(s.patches.clone(), s.assign.clone(), &s.model).unwrap();
    for l in 0..2 {
        assert_eq!(assign_clusters_layer(&mut state, &s.model, l).unwrap(), 0);
    }
    assert_eq!(state.assignments(), &s.assign);
}

#[test]
fn cluster_update_is_the_exhaustive_argmin() {
    let s = random_state(12, 2, &[3, 2, 2], 30);
    for layer in 0..3 {
        let mut state = McstState::new(s.patches.clone(), s.codes.clone(), s.assign.clone(), &s.model).unwrap();
        assign_clusters_layer(&mut state, &s.model, layer).unwrap();
        let codes = code_layers(&s.codes);
        for i in 0..30 {
            let col = s.patches.columns(i, 1).into_owned();
            let cs: Vec<DMatrix<f64>> = codes.iter().map(|c| c.columns(i, 1).into_owned()).collect();
            let costs: Vec<f64> = (0..s.model.clusters(layer))
                .map(|k| {
                    let mut a: Vec<Vec<usize>> = assign_layers(&s.assign).iter().map(|a| vec![a[i]]).collect();
                    a[layer][0] = k;
                    naive_layer_errors(&col, &cs, &a, s.model.transforms()).iter().map(|e| e[0]).sum()
                })
                .collect();
            let chosen = state.assignments().get(i, layer);
            let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(costs[chosen] <= min + 1e-10 * min.max(1.0), "patch {i}: {costs:?} chose {chosen}");
        }
    }
}

#[test]
fn procrustes_examples() {
    let omega = procrustes(DMatrix::identity(3, 3)).unwrap();
    assert!((omega - DMatrix::<f64>::identity(3, 3)).norm() <= 1e-12);
    let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let omega = procrustes(swap.clone()).unwrap();
    assert!((omega - swap).norm() <= 1e-12);
    let mut bad = DMatrix::identity(2, 2);
    bad[(0, 1)] = f64::NAN;
    assert!(matches!(procrustes(bad), Err(mcst::Error::Numerical(_))));
}

#[test]
fn procrustes_beats_random_search() {
    for seed in 0..3 {
        assert!(procrustes_margin(seed, 30, 2000, 200) >= -1e-10);
    }
}

#[test]
fn procrustes_is_optimal_for_rank_deficient_input() {
    // Clusters with fewer patches than the patch dimension give a singular G.
    for columns in 1..8 {
        assert!(procrustes_margin(columns as u64, columns, 500, 200) >= -1e-10, "{columns} columns");
    }
}

#[test]
fn transform_update_keeps_unitarity_and_lowers_the_objective() {
    let s = random_state(13, 2, &[3, 2], 40);
    let mut model = s.model.clone();
    let mut state = McstState::new(s.patches.clone(), s.codes.clone(), s.assign.clone(), &model).unwrap();
    for l in 0..2 {
        let before = state.objective(&model, &[0.1, 0.1]).unwrap();
        transform_update_layer(&mut state, &mut model, l).unwrap();
        let after = state.objective(&model, &[0.1, 0.1]).unwrap();
        assert!(after <= before * (1.0 + 1e-12));
        assert!(model.max_unitarity_error() <= 1e-10);
    }
}

#[test]
fn training_objective_examples() {
    let model = identity_model(2, 2);
    let zeros = DMatrix::zeros(4, 5);
    let codes = CodeStack::zeros(2, 4, 5);
    let flat = AssignmentTable::constant(2, 5);
    assert_eq!(training_objective(&zeros, &codes, &flat, &model, &[1.0, 2.0]).unwrap(), 0.0);

    let s = random_state(14, 2, &[2], 6);
    let mut exact = DMatrix::zeros(4, 6);
    for i in 0..6 {
        exact.set_column(i, &(s.model.transform(0, s.assign.get(i, 0)) * s.patches.column(i)));
    }
    let codes = CodeStack::new(vec![exact.clone()]).unwrap();
    let obj = training_objective(&s.patches, &codes, &s.assign, &s.model, &[0.3]).unwrap();
    let nnz = exact.iter().filter(|v| **v != 0.0).count() as f64;
    assert!((obj - 0.09 * nnz).abs() <= 1e-12);
}

#[test]
fn training_objective_matches_naive_evaluator() {
    for seed in 0..10 {
        let s = random_state(100 + seed, 2, &[2, 3], 3);
        let mut codes = code_layers(&s.codes);
        codes[0][(1, 1)] = 0.0;
        let stack = CodeStack::new(codes.clone()).unwrap();
        let eta = [0.4, 0.7];
        let fast = training_objective(&s.patches, &stack, &s.assign, &s.model, &eta).unwrap();
        let naive = naive_objective(&s.patches, &codes, &assign_layers(&s.assign), s.model.transforms(), &eta);
        assert!(rel_err(fast, naive) <= 1e-12);
    }
}

#[test]
fn dct_matrix_properties() {
    let d = dct2_matrix(64).unwrap();
    for j in 0..64 {
        assert!((d[(0, j)] - 0.125).abs() <= 1e-15);
    }
    assert!((&d * d.transpose() - DMatrix::<f64>::identity(64, 64)).norm() <= 1e-12);
    assert!(dct2_matrix(8).is_err());

    // 2x2 case against the direct 2D DCT of each canonical basis patch.
    let d4 = dct2_matrix(4).unwrap();
    let c = |k: usize, m: usize| {
        let s = if k == 0 { (0.5f64).sqrt() } else { 1.0 };
        s * (PI * (2 * m + 1) as f64 * k as f64 / 4.0).cos()
    };
    for a in 0..2 {
        for b in 0..2 {
            let col = d4.column(2 * a + b);
            for u in 0..2 {
                for v in 0..2 {
                    assert!((col[2 * u + v] - c(u, a) * c(v, b)).abs() <= 1e-15);
                }
            }
        }
    }
}

#[test]
fn random_orthogonal_properties() {
    assert_eq!(random_orthogonal(6, 42), random_orthogonal(6, 42));
    for seed in 0..100 {
        let q = random_orthogonal(4, seed);
        assert!((&q * q.transpose() - DMatrix::<f64>::identity(4, 4)).norm() <= 1e-12);
        assert!((q - random_orthogonal(4, seed + 1)).norm() > 0.1);
    }
}

#[test]
fn kmeans_examples() {
    let mut r = rng(15);
    let mut pts = DMatrix::zeros(4, 40);
    for i in 0..40 {
        let centre = if i % 2 == 0 { 10.0 } else { -10.0 };
        for j in 0..4 {
            pts[(j, i)] = centre + r.random_range(-1.0..1.0);
        }
    }
    let labels = kmeans_init(&pts, 2, 3, 50).unwrap();
    for i in 0..40 {
        assert_eq!(labels[i] == labels[0], i % 2 == 0);
    }
    assert!(kmeans_init(&pts, 1, 3, 50).unwrap().iter().all(|&k| k == 0));

    let few = random_matrix(&mut r, 4, 5);
    let mut own = kmeans_init(&few, 5, 1, 20).unwrap();
    own.sort();
    assert_eq!(own, vec![0, 1, 2, 3, 4]);
    assert!(kmeans_init(&few, 6, 1, 20).is_err());
    assert_eq!(kmeans_init(&pts, 3, 9, 20).unwrap(), kmeans_init(&pts, 3, 9, 20).unwrap());
}

#[test]
fn out_of_range_assignment_is_rejected() {
    let s = random_state(16, 2, &[2], 3);
    let bad = AssignmentTable::new(vec![vec![0, 2, 1]]).unwrap();
    assert!(propagate_residuals(s.patches.clone(), &s.codes, &bad, &s.model).is_err());
}
