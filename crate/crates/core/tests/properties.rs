use makd_core::gradcheck::central_difference;
use makd_core::{affinity, gnorp, loss, makd, normalise};
use makd_core::{AffinityKind, LossKind, MakdVariant, Matrix, NormKind, Rng};
use proptest::prelude::*;

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn gaussian(seed: u64, rows: usize, cols: usize) -> Matrix {
    Rng::new(seed).gaussian(rows, cols, 0.0, 1.0)
}

fn positive(seed: u64, n: usize) -> Matrix {
    gaussian(seed, n, n).map(|x| x.abs() + 0.05)
}

fn affinity_kind() -> impl Strategy<Value = AffinityKind> {
    prop::sample::select(AffinityKind::ALL.to_vec())
}

fn norm_kind() -> impl Strategy<Value = NormKind> {
    prop::sample::select(NormKind::ALL.to_vec())
}

fn loss_kind() -> impl Strategy<Value = LossKind> {
    prop::sample::select(LossKind::ALL.to_vec())
}

fn variant() -> impl Strategy<Value = MakdVariant> {
    prop::sample::select(MakdVariant::all())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed: u64, m in 1usize..6, k in 1usize..6, n in 1usize..6, p in 1usize..6) {
        let a = gaussian(seed, m, k);
        let b = gaussian(seed ^ 1, k, n);
        let c = gaussian(seed ^ 2, n, p);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let scale = left.frobenius_norm().max(1.0);
        prop_assert!(max_abs_diff(&left, &right) / scale < 1e-9);
    }

    #[test]
    fn softmax_ignores_row_shifts(seed: u64, rows in 1usize..5, cols in 1usize..7, shift in -50.0f64..50.0) {
        let m = gaussian(seed, rows, cols);
        let mut shifted = m.clone();
        for i in 0..rows {
            let c = shift * (i as f64 + 1.0);
            shifted.row_mut(i).iter_mut().for_each(|x| *x += c);
        }
        prop_assert!(max_abs_diff(&m.row_softmax(), &shifted.row_softmax()) < 1e-12);
    }

    #[test]
    fn frobenius_norm_is_homogeneous(seed: u64, c in -10.0f64..10.0) {
        let m = gaussian(seed, 4, 3);
        prop_assert!((m.scale(c).frobenius_norm() - c.abs() * m.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn affinities_are_symmetric(seed: u64, kind in affinity_kind(), b in 2usize..7, d in 1usize..6) {
        let g = affinity::forward(kind, &gaussian(seed, b, d)).unwrap();
        prop_assert_eq!(g.transpose(), g);
    }

    #[test]
    fn cosine_ignores_per_sample_scale(seed: u64, b in 2usize..7, d in 1usize..6) {
        let z = gaussian(seed, b, d);
        let mut scaled = z.clone();
        let mut rng = Rng::new(seed ^ 7);
        for i in 0..b {
            let c = rng.uniform_range(0.1, 10.0);
            scaled.row_mut(i).iter_mut().for_each(|x| *x *= c);
        }
        let a = affinity::forward(AffinityKind::CS, &z).unwrap();
        let s = affinity::forward(AffinityKind::CS, &scaled).unwrap();
        prop_assert!(max_abs_diff(&a, &s) < 1e-12);
    }

    #[test]
    fn inner_product_is_bilinear(seed: u64, c in -3.0f64..3.0) {
        let z = gaussian(seed, 5, 4);
        let a = affinity::forward(AffinityKind::IP, &z.scale(c)).unwrap();
        let b = affinity::forward(AffinityKind::IP, &z).unwrap().scale(c * c);
        prop_assert!(max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn euclidean_is_below_manhattan(seed: u64, b in 2usize..7, d in 1usize..6) {
        let z = gaussian(seed, b, d);
        let l1 = affinity::forward(AffinityKind::L1, &z).unwrap();
        let l2 = affinity::forward(AffinityKind::L2, &z).unwrap();
        for (x, y) in l2.as_slice().iter().zip(l1.as_slice()) {
            prop_assert!(*x <= *y + 1e-12);
        }
    }

    #[test]
    fn affinity_vjp_matches_directional_derivative(seed: u64, kind in affinity_kind()) {
        let z = gaussian(seed, 4, 3);
        let dg = gaussian(seed ^ 3, 4, 4);
        let v = gaussian(seed ^ 5, 4, 3);
        let h = 1e-6;
        let f = |t: f64| {
            let mut p = z.clone();
            p.axpy(t, &v).unwrap();
            affinity::forward(kind, &p).unwrap().frobenius_dot(&dg).unwrap()
        };
        let jvp = (f(h) - f(-h)) / (2.0 * h);
        let vjp = affinity::vjp(kind, &z, &dg).unwrap().frobenius_dot(&v).unwrap();
        prop_assert!((jvp - vjp).abs() < 1e-6 * (1.0 + vjp.abs()), "{} vs {}", jvp, vjp);
    }

    #[test]
    fn normalisation_postconditions(seed: u64, kind in norm_kind(), n in 2usize..8) {
        let g = positive(seed, n);
        let out = normalise::forward(kind, &g).unwrap();
        for i in 0..n {
            let row = out.row(i);
            match kind {
                NormKind::L1 => prop_assert!((row.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-12),
                NormKind::L2 => prop_assert!((row.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-12),
                _ => {}
            }
        }
        let mean = out.as_slice().iter().sum::<f64>() / (n * n) as f64;
        let max = out.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match kind {
            NormKind::Avg => prop_assert!((mean - 1.0).abs() < 1e-12),
            NormKind::Max => prop_assert!((max - 1.0).abs() < 1e-12),
            NormKind::NoN => prop_assert_eq!(&out, &g),
            _ => {}
        }
    }

    #[test]
    fn normalisation_is_idempotent(seed: u64, kind in norm_kind(), n in 2usize..8) {
        let once = normalise::forward(kind, &positive(seed, n)).unwrap();
        let twice = normalise::forward(kind, &once).unwrap();
        prop_assert!(max_abs_diff(&once, &twice) < 1e-12);
    }

    #[test]
    fn normalisation_ignores_positive_scale(seed: u64, kind in norm_kind(), c in 0.01f64..100.0) {
        prop_assume!(kind != NormKind::NoN);
        let g = positive(seed, 5);
        let a = normalise::forward(kind, &g).unwrap();
        let b = normalise::forward(kind, &g.scale(c)).unwrap();
        prop_assert!(max_abs_diff(&a, &b) < 1e-12);
    }

    #[test]
    fn normalisation_vjp_matches_directional_derivative(seed: u64, kind in norm_kind()) {
        let g = positive(seed, 4);
        let up = gaussian(seed ^ 3, 4, 4);
        let v = gaussian(seed ^ 5, 4, 4);
        let h = 1e-7;
        let f = |t: f64| {
            let mut p = g.clone();
            p.axpy(t, &v).unwrap();
            normalise::forward(kind, &p).unwrap().frobenius_dot(&up).unwrap()
        };
        if kind == NormKind::Max {
            let mut top: Vec<f64> = g.as_slice().to_vec();
            top.sort_by(|a, b| b.total_cmp(a));
            prop_assume!(top[0] - top[1] > 1e-3);
        }
        let jvp = (f(h) - f(-h)) / (2.0 * h);
        let vjp = normalise::vjp(kind, &g, &up).unwrap().frobenius_dot(&v).unwrap();
        prop_assert!((jvp - vjp).abs() < 1e-5 * (1.0 + vjp.abs()), "{} vs {}", jvp, vjp);
    }

    #[test]
    fn losses_are_nonnegative_and_vanish_at_equality(seed: u64, kind in loss_kind(), n in 1usize..6) {
        let a = gaussian(seed, n, n);
        let b = gaussian(seed ^ 9, n, n);
        prop_assert!(loss::forward(kind, &a, &b).unwrap() >= 0.0);
        prop_assert!(loss::forward(kind, &a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_sits_under_both_envelopes(seed: u64, scale in 0.01f64..10.0) {
        let a = gaussian(seed, 4, 4).scale(scale);
        let b = gaussian(seed ^ 9, 4, 4).scale(scale);
        let sl1 = loss::forward(LossKind::SL1, &a, &b).unwrap();
        prop_assert!(sl1 <= loss::forward(LossKind::L1, &a, &b).unwrap() + 1e-12);
        prop_assert!(sl1 <= 0.5 * loss::forward(LossKind::L2, &a, &b).unwrap() + 1e-12);
    }

    #[test]
    fn kl_gradient_rows_sum_to_zero(seed: u64, n in 1usize..7) {
        let g = loss::vjp(LossKind::KL, &gaussian(seed, n, n), &gaussian(seed ^ 4, n, n)).unwrap();
        for i in 0..n {
            prop_assert!(g.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn distillation_gradient_is_homogeneous_in_lambda(seed: u64, v in variant(), lambda in 1e-3f64..1e3) {
        let zs = gaussian(seed, 5, 6);
        let zt = gaussian(seed ^ 1, 5, 9);
        let g = makd::grad(v, &zs, &zt).unwrap();
        let (_, total) = makd::total_loss(0.0, &Matrix::zeros(5, 6), v, lambda, &zs, &zt).unwrap();
        let expect = lambda * g.frobenius_norm();
        prop_assert!((total.frobenius_norm() - expect).abs() <= 1e-12 * expect.max(1.0));
    }

    #[test]
    fn mimicry_gives_zero_value(seed: u64, v in variant()) {
        let z = gaussian(seed, 5, 4);
        prop_assert!(makd::value(v, &z, &z).unwrap().abs() < 1e-12);
        if v.has_smooth_loss() {
            prop_assert!(makd::grad(v, &z, &z).unwrap().frobenius_norm() < 1e-8);
        }
    }

    #[test]
    fn teacher_side_is_read_only(seed: u64, v in variant()) {
        let zs = gaussian(seed, 4, 3);
        let zt = gaussian(seed ^ 1, 4, 5);
        let before = zt.clone();
        let g = makd::grad(v, &zs, &zt).unwrap();
        prop_assert_eq!(g.shape(), zs.shape());
        prop_assert_eq!(zt, before);
    }

    #[test]
    fn closed_form_matches_grid_minimum(r in 0.5f64..7.0, la in -3.0f64..3.0, lb in -3.0f64..3.0) {
        let (a, b) = (la.exp(), lb.exp());
        let star = gnorp::closed_form(r, a, b).unwrap();
        // scan log-lambda around the optimum on a 1e-4 grid
        let adam = gnorp::AdamParams::default();
        let mut best = (f64::INFINITY, 0.0);
        for k in -4000i32..=4000 {
            let x = star.ln() + k as f64 * 1e-4;
            let s = gnorp::GnorpState::new(r, x.exp(), adam).unwrap();
            let l = s.loss(a, b);
            if l < best.0 {
                best = (l, x);
            }
        }
        prop_assert!((best.1 - star.ln()).abs() <= 1e-4);
    }
}

#[test]
fn central_differences_of_a_quadratic_are_exact() {
    let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0]]).unwrap();
    let g = central_difference(|m| m.as_slice().iter().map(|v| v * v).sum(), &x, 1e-4);
    assert!(max_abs_diff(&g, &x.scale(2.0)) < 1e-9);
}
