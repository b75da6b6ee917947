mod common;

use common::{rel_err, rng};
use mcst::ct_sim::*;
use mcst::recon::{circular_roi, rmse_roi};
use mcst::Image;
use rand::Rng;

fn unit_geometry(views: usize, dets: usize, size: usize) -> ScanGeometry {
    ScanGeometry::with_scale(views, dets, 1.0, 1.0, size, size, 1.0).unwrap()
}

fn random_image(seed: u64, h: usize, w: usize) -> Image {
    let mut r = rng(seed);
    Image::from_fn(h, w, |_, _| r.random_range(-1.0..1.0))
}

#[test]
fn phantom_examples() {
    let disk = Phantom::by_name("disk", None).unwrap().render(64, 64).unwrap();
    assert_eq!(disk.get(32, 32), 1000.0);
    assert_eq!(disk.get(0, 0), 0.0);

    let sl = Phantom::SheppLogan.render(128, 128).unwrap();
    assert!(sl.min() >= 0.0);
    for (r, c) in [(0, 0), (0, 127), (127, 0), (127, 127), (64, 0), (0, 64)] {
        assert_eq!(sl.get(r, c), 0.0);
    }

    let e = |cx: f64, v: f64| Ellipse { cx, cy: 0.0, a: 0.4, b: 0.3, angle_deg: 20.0, value: v };
    let both = Phantom::Ellipses(vec![e(-0.2, 3.0), e(0.2, 5.0)]).render(48, 48).unwrap();
    let one = Phantom::Ellipses(vec![e(-0.2, 3.0)]).render(48, 48).unwrap();
    let two = Phantom::Ellipses(vec![e(0.2, 5.0)]).render(48, 48).unwrap();
    for j in 0..both.len() {
        assert_eq!(both.as_slice()[j], one.as_slice()[j] + two.as_slice()[j]);
    }
    assert!(both.as_slice().contains(&8.0));

    assert!(Phantom::by_name("teapot", None).is_err());
    assert!(Phantom::by_name("ellipses-spec", None).is_err());
}

#[test]
fn projector_is_an_exact_adjoint_pair() {
    let geom = unit_geometry(23, 31, 20);
    let a = ParallelBeamProjector::new(geom.clone());
    for seed in 0..10 {
        let x = random_image(seed, 20, 20);
        let mut r = rng(1000 + seed);
        let s = Sinogram::from_vec(23, 31, (0..23 * 31).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let lhs: f64 = a.project(&x).unwrap().as_slice().iter().zip(s.as_slice()).map(|(p, q)| p * q).sum();
        let rhs = x.dot(&a.back_project(&s).unwrap());
        assert!(rel_err(lhs, rhs) <= 1e-10);
    }
}

#[test]
fn projector_coefficients_are_nonnegative_and_zero_maps_to_zero() {
    let geom = unit_geometry(12, 19, 10);
    let a = ParallelBeamProjector::new(geom);
    assert!(a.forward(&vec![0.0; 100]).iter().all(|v| *v == 0.0));
    for j in 0..100 {
        let mut e = vec![0.0; 100];
        e[j] = 1.0;
        assert!(a.forward(&e).iter().all(|v| *v >= 0.0));
    }
}

#[test]
fn central_ray_through_a_disk_has_the_chord_length() {
    let radius = 0.75;
    let disk = Phantom::Disk { radius, value: 1.0 }.render(128, 128).unwrap();
    let s = forward_project(&disk, &unit_geometry(16, 181, 128)).unwrap();
    let chord = 2.0 * radius * 64.0;
    for v in 0..16 {
        assert!((s.view(v)[90] - chord).abs() <= 0.02 * chord, "view {v}: {}", s.view(v)[90]);
    }
}

#[test]
fn noiseless_limit_recovers_line_integrals() {
    let mut r = rng(2);
    let s = Sinogram::from_vec(4, 5, (0..20).map(|_| r.random_range(0.0..3.0)).collect()).unwrap();
    let nm = NoiseModel::new(1e14, 0.0, 3).unwrap();
    let counts = simulate_counts(&s, &nm).unwrap();
    let (y, w) = counts_to_sinogram(&counts, &nm).unwrap();
    for (a, b) in y.as_slice().iter().zip(s.as_slice()) {
        assert!((a - b).abs() <= 1e-5);
    }
    assert!(w.iter().all(|v| *v > 0.0));
}

#[test]
fn low_counts_are_clamped_before_the_log() {
    let counts = Sinogram::from_vec(1, 3, vec![-4.0, 0.0, 0.05]).unwrap();
    let nm = NoiseModel::new(1e4, 25.0, 0).unwrap();
    let (y, w) = counts_to_sinogram(&counts, &nm).unwrap();
    for v in y.as_slice() {
        assert!((v - (1e4f64 / COUNT_FLOOR).ln()).abs() <= 1e-12);
    }
    assert!(w.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 1e4));
    assert!(NoiseModel::new(0.0, 25.0, 0).is_err());
}

#[test]
fn noise_is_seed_deterministic() {
    let s = Sinogram::from_vec(3, 7, vec![1.0; 21]).unwrap();
    let a = simulate_counts(&s, &NoiseModel::new(1e4, 25.0, 5).unwrap()).unwrap();
    let b = simulate_counts(&s, &NoiseModel::new(1e4, 25.0, 5).unwrap()).unwrap();
    let c = simulate_counts(&s, &NoiseModel::new(1e4, 25.0, 6).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn fbp_basic_properties() {
    let geom = ScanGeometry::parallel(60, 63, 2.0, 2.0, 32, 32).unwrap();
    let zero = fbp(&Sinogram::zeros(60, 63), &geom).unwrap();
    assert!(zero.as_slice().iter().all(|v| *v == 0.0));

    let x = Phantom::SheppLogan.render(32, 32).unwrap();
    let s = forward_project(&x, &geom).unwrap();
    let doubled = Sinogram::from_vec(60, 63, s.as_slice().iter().map(|v| 2.0 * v).collect()).unwrap();
    let a = fbp(&s, &geom).unwrap();
    let b = fbp(&doubled, &geom).unwrap();
    for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((2.0 * p - q).abs() <= 1e-9 * q.abs().max(1.0));
    }
    assert!(a.min() < 0.0, "raw output is not clamped");
}

/// Frozen reference value for the noiseless 128² Shepp-Logan FBP.
const FBP_NOISELESS_RMSE: f64 = 223.248628;

#[test]
fn fbp_noiseless_shepp_logan_matches_golden() {
    let geom = ScanGeometry::parallel(180, 185, 2.0, 2.0, 128, 128).unwrap();
    let x = Phantom::SheppLogan.render(128, 128).unwrap();
    let recon = fbp(&forward_project(&x, &geom).unwrap(), &geom).unwrap();
    let rmse = rmse_roi(&recon, &x, &circular_roi(128, 128)).unwrap();
    println!("noiseless FBP RMSE {rmse:.6}");
    assert!((rmse - FBP_NOISELESS_RMSE).abs() <= 1e-3, "{rmse}");
}

#[test]
fn fbp_recovers_a_uniform_disk() {
    let geom = ScanGeometry::parallel(180, 91, 2.0, 2.0, 64, 64).unwrap();
    let disk = Phantom::Disk { radius: 0.6, value: 1000.0 }.render(64, 64).unwrap();
    let recon = fbp(&forward_project(&disk, &geom).unwrap(), &geom).unwrap();
    assert!((recon.get(32, 32) - 1000.0).abs() <= 20.0, "{}", recon.get(32, 32));
}

#[test]
fn majorizer_examples() {
    let geom = unit_geometry(9, 15, 10);
    let a = ParallelBeamProjector::new(geom);
    let zero = majorizer(&a, &vec![0.0; a.data_len()]).unwrap();
    assert!(zero.as_slice().iter().all(|v| *v == 0.0));

    // One active ray: H_A(j) = a_ij · Σ_k a_ik.
    let ray = 3 * 15 + 7;
    let mut w = vec![0.0; a.data_len()];
    w[ray] = 1.0;
    let h = majorizer(&a, &w).unwrap();
    let mut e = vec![0.0; a.data_len()];
    e[ray] = 1.0;
    let row = a.adjoint(&e);
    let total: f64 = row.iter().sum();
    for (hj, aj) in h.as_slice().iter().zip(&row) {
        assert!((hj - aj * total).abs() <= 1e-12);
    }
    assert!(h.as_slice().iter().zip(&row).all(|(hj, aj)| (*hj > 0.0) == (*aj > 0.0)));

    let mut r = rng(4);
    let w: Vec<f64> = (0..a.data_len()).map(|_| r.random_range(0.0..100.0)).collect();
    let h = majorizer(&a, &w).unwrap();
    assert!(h.as_slice().iter().all(|v| *v > 0.0));
    for _ in 0..30 {
        let j = r.random_range(0..100);
        let mut e = vec![0.0; 100];
        e[j] = 1.0;
        let col = a.forward(&e);
        let quad: f64 = col.iter().zip(&w).map(|(c, w)| w * c * c).sum();
        assert!(h.as_slice()[j] - quad >= -1e-10);
    }
    assert!(majorizer(&a, &vec![-1.0; a.data_len()]).is_err());
}
