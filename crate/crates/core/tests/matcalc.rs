use approx::assert_relative_eq;
use proptest::prelude::*;

use pmga::matcalc::{
    commutation_matrix, gram_det_row_derivative, gram_volume, hessian_stack_to_jacobian_derivative, identity,
    jacobian_derivative_to_hessian_stack, kron, symmetrizer, unvec, vec, Mat, Vector,
};
use pmga::numdiff::central_gradient;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| Mat::from_vec(rows, cols, v))
}

fn shaped() -> impl Strategy<Value = Mat> {
    (1usize..5, 1usize..5).prop_flat_map(|(m, n)| matrix(m, n))
}

fn tall() -> impl Strategy<Value = Mat> {
    (2usize..6, 1usize..3)
        .prop_filter("tall", |(q, b)| q >= b)
        .prop_flat_map(|(q, b)| matrix(q, b))
        .prop_filter("well conditioned", |t| {
            let s = t.clone().svd(false, false).singular_values;
            s.min() > 0.1
        })
}

proptest! {
    #[test]
    fn vec_round_trips(a in shaped()) {
        let back = unvec(&vec(&a), a.nrows(), a.ncols()).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn commutation_transposes_vec(a in shaped()) {
        let k = commutation_matrix(a.nrows(), a.ncols());
        prop_assert_eq!(k * vec(&a), vec(&a.transpose()));
    }

    #[test]
    fn commutation_is_orthogonal_with_swapped_inverse(m in 1usize..5, n in 1usize..5) {
        let k = commutation_matrix(m, n);
        prop_assert_eq!(k.transpose(), commutation_matrix(n, m));
        prop_assert_eq!(&commutation_matrix(n, m) * &k, identity(m * n));
    }

    #[test]
    fn kron_mixed_product(a in matrix(2, 3), b in matrix(3, 2), c in matrix(3, 2), d in matrix(2, 3)) {
        let lhs = kron(&a, &b) * kron(&c, &d);
        let rhs = kron(&(&a * &c), &(&b * &d));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn kron_vec_identity(a in matrix(2, 3), x in matrix(3, 4), b in matrix(4, 2)) {
        let lhs = vec(&(&a * &x * &b));
        let rhs = kron(&b.transpose(), &a) * vec(&x);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-12);
    }

    #[test]
    fn symmetrizer_projects_onto_symmetric_part(b in 1usize..5, seed in matrix(4, 4)) {
        let a = seed.view((0, 0), (b, b)).into_owned();
        let s = symmetrizer(b);
        let sym = (&a + a.transpose()) * 0.5;
        assert_relative_eq!(&s * vec(&a), vec(&sym), epsilon = 1e-14);
        assert_relative_eq!(&s * &s, s, epsilon = 1e-14);
    }

    #[test]
    fn gram_volume_is_rotation_invariant(t in tall(), angle in 0.0..std::f64::consts::TAU) {
        let q = t.nrows();
        let mut r = identity(q);
        let (c, s) = (angle.cos(), angle.sin());
        r[(0, 0)] = c;
        r[(0, 1)] = -s;
        r[(1, 0)] = s;
        r[(1, 1)] = c;
        let v = gram_volume(&t).unwrap().volume;
        assert_relative_eq!(gram_volume(&(r * &t)).unwrap().volume, v, max_relative = 1e-10);
        assert_relative_eq!(gram_volume(&(&t * 3.0)).unwrap().volume, v * 3f64.powi(t.ncols() as i32), max_relative = 1e-10);
    }

    #[test]
    fn gram_derivative_matches_differences(t in tall()) {
        let (q, b) = t.shape();
        let analytic = gram_det_row_derivative(&t).unwrap();
        let det = |x: &Vector| {
            let m = Mat::from_column_slice(q, b, x.as_slice());
            (m.transpose() * m).determinant()
        };
        let fd = central_gradient(det, &vec(&t), 1e-5);
        let scale = fd.amax().max(1.0);
        prop_assert!((analytic.transpose() - fd).amax() <= 1e-6 * scale);
    }

    #[test]
    fn hessian_stack_round_trips(q in 1usize..4, d in 1usize..4, seed in matrix(9, 3)) {
        let h = seed.view((0, 0), (q * d, d)).into_owned();
        let dj = hessian_stack_to_jacobian_derivative(&h, q, d).unwrap();
        prop_assert_eq!(dj.shape(), (q * d, d));
        prop_assert_eq!(jacobian_derivative_to_hessian_stack(&dj, q, d).unwrap(), h);
    }
}

#[test]
fn jacobian_derivative_layout_follows_vec_order() {
    let (q, d) = (2, 3);
    let h = Mat::from_fn(q * d, d, |r, c| (100 * (r / d) + 10 * (r % d) + c) as f64);
    let dj = hessian_stack_to_jacobian_derivative(&h, q, d).unwrap();
    for i in 0..q {
        for j in 0..d {
            for k in 0..d {
                assert_eq!(dj[(j * q + i, k)], h[(i * d + j, k)]);
            }
        }
    }
}

#[test]
fn rank_deficient_tangent_is_reported() {
    let t = Mat::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
    assert!(gram_volume(&t).unwrap().degenerate);
    assert!(gram_det_row_derivative(&t).is_err());
}

#[test]
fn wide_tangent_is_rejected() {
    assert!(gram_volume(&Mat::zeros(1, 2)).is_err());
}
