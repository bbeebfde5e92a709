use std::f64::consts::PI;

use proptest::prelude::*;
use sectorcalc_core::contour::{integrate, DiscretizedContour};
use sectorcalc_core::families;
use sectorcalc_core::funcalc::{frac_power_neg, semigroup};
use sectorcalc_core::linalg::{eig_decompose, expm_oracle, Lu};
use sectorcalc_core::sectorial::DEFAULT_SAMPLE_BUDGET;
use sectorcalc_core::{CMatrix, Complex64, SectorialOperator};

fn certified(seed: u64, n: usize) -> (CMatrix, SectorialOperator) {
    let a = families::sectorial_matrix(&mut families::rng(seed), n);
    let op = SectorialOperator::certify(a.clone(), 3.0 * PI / 4.0, DEFAULT_SAMPLE_BUDGET).unwrap().0;
    (a, op)
}

fn scalar(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn resolvent_identity(seed in any::<u64>(), z in 0.1..5.0f64, zi in -5.0..5.0f64, w in 0.1..5.0f64, wi in -5.0..5.0f64) {
        let a = families::sectorial_matrix(&mut families::rng(seed), 5);
        let (z, w) = (scalar(z, zi), scalar(w, wi));
        let rz = Lu::factor(&a, z).unwrap().inverse();
        let rw = Lu::factor(&a, w).unwrap().inverse();
        let lhs = &rz - &rw;
        let rhs = (&rz * &rw).scale(w - z);
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn solve_matches_eigen_inverse(seed in any::<u64>()) {
        let mut rng = families::rng(seed);
        let a = families::sectorial_matrix(&mut rng, 6);
        let y = families::vector(&mut rng, 6);
        let x = Lu::factor(&a, scalar(0.0, 0.0)).unwrap().solve(&y).unwrap();
        let inv = eig_decompose(&a).unwrap().map(|l| 1.0 / l);
        prop_assert!(x.max_abs_diff(&inv.apply(&y)) < 1e-9);
    }

    #[test]
    fn expm_semigroup_law(seed in any::<u64>(), s in 0.0..2.0f64, t in 0.0..2.0f64) {
        let a = families::sectorial_matrix(&mut families::rng(seed), 5);
        let prod = &expm_oracle(&a, s) * &expm_oracle(&a, t);
        prop_assert!(prod.max_abs_diff(&expm_oracle(&a, s + t)) < 1e-10);
    }

    #[test]
    fn integrate_is_linear(alpha in -3.0..3.0f64, beta in -3.0..3.0f64, p in 0.1..2.0f64, q in 0.1..2.0f64) {
        let circle = DiscretizedContour::circle(scalar(0.0, 0.0), 3.0, 128);
        let f = |z: Complex64| (z + p).exp() / (z - q);
        let g = |z: Complex64| (z * z + 1.0) / (z + p);
        let i = |h: &(dyn Fn(Complex64) -> Complex64 + Sync)| integrate(&circle, |z| Ok(h(z))).unwrap();
        let combined = i(&|z| f(z) * alpha + g(z) * beta);
        prop_assert!((combined - (i(&f) * alpha + i(&g) * beta)).norm() < 1e-12 * (1.0 + combined.norm()));
        // residue oracle for f at q
        prop_assert!((i(&f) - (q + p).exp()).norm() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn fractional_powers_compose(seed in any::<u64>(), s in 0.05..0.45f64, t in 0.05..0.45f64) {
        let (_, op) = certified(seed, 4);
        let prod = &frac_power_neg(&op, s).unwrap() * &frac_power_neg(&op, t).unwrap();
        prop_assert!(prod.max_abs_diff(&frac_power_neg(&op, s + t).unwrap()) < 1e-7);
    }

    #[test]
    fn contour_semigroup_matches_expm(seed in any::<u64>(), t in 0.1..3.0f64) {
        let (a, op) = certified(seed, 4);
        let e = semigroup(&op, scalar(t, 0.0)).unwrap();
        prop_assert!(e.max_abs_diff(&expm_oracle(&a, t)) < 1e-8);
    }
}
