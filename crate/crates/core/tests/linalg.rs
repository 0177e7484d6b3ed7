use nalgebra::DMatrix;
use quantspoof::linalg::*;

#[test]
fn inverse_and_condition() {
    let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
    let inv = sym_inverse(&a).unwrap();
    assert!((&a * &inv.inverse - DMatrix::identity(2, 2)).norm() < 1e-14);
    assert!(!inv.ill_conditioned());
    assert!(sym_inverse(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).is_err());
}

#[test]
fn svd_is_sorted_and_orthonormal() {
    let a = DMatrix::from_fn(3, 7, |r, c| (0.5 * (r as f64 + 1.0)).powi(c as i32));
    let f = SvdFactors::new(&a);
    assert!(f.singular_values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    assert!((f.u.transpose() * &f.u - DMatrix::identity(3, 3)).norm() < 1e-12);
    assert!((f.v.transpose() * &f.v - DMatrix::identity(3, 3)).norm() < 1e-12);
    assert!((f.reconstruct() - &a).norm() / a.norm() < 1e-12);
    assert_eq!(f.rank(RANK_SAFETY), 3);
}

#[test]
fn range_residual() {
    let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.0]);
    let inside = &b * 3.0;
    assert!(residual_outside_range(&inside, &b, RANK_SAFETY) < 1e-14);
    let outside = DMatrix::from_row_slice(3, 1, &[0.0, 0.0, 1.0]);
    assert!((residual_outside_range(&outside, &b, RANK_SAFETY) - 1.0).abs() < 1e-14);
}

#[test]
fn matrix_round_trip() {
    let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.5e-7, 3.0, 0.1, 1e300, -0.0]);
    let text = format_matrix(&a);
    assert_eq!(parse_matrix(&text).unwrap(), a);
}
