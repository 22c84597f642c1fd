//! Matrix exponential by scaling and squaring with diagonal Pade
//! approximants of orders 3/5/7/9/13, selected by the 1-norm of the input.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// 1-norm thresholds below which the Pade approximant of the corresponding
/// order meets double-precision accuracy.
const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068;
const THETA_13: f64 = 5.371_920_351_148_152;

const B3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const B5: [f64; 6] = [30_240.0, 15_120.0, 3_360.0, 420.0, 30.0, 1.0];
const B7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const B9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const B13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// `e^{At}`. `t` may be negative; accuracy is better than 1e-12 relative for
/// `‖At‖` up to about 50.
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    super::ensure_square_finite(a, "matrix_exponential")?;
    if !t.is_finite() {
        return Err(Error::InvalidInput(
            "matrix_exponential: t must be finite".into(),
        ));
    }
    Ok(expm(&(a * t)))
}

/// `e^{A}` for a pre-scaled argument.
pub(crate) fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let norm = one_norm(a);
    if norm <= THETA_3 {
        pade_low(a, &B3)
    } else if norm <= THETA_5 {
        pade_low(a, &B5)
    } else if norm <= THETA_7 {
        pade_low(a, &B7)
    } else if norm <= THETA_9 {
        pade_low(a, &B9)
    } else if norm <= THETA_13 {
        pade_13(a)
    } else {
        // Halve until inside the order-13 region, then square back up.
        let s = (norm / THETA_13).log2().ceil().max(1.0) as i32;
        let scaled = a / 2f64.powi(s);
        let mut x = pade_13(&scaled);
        for _ in 0..s {
            x = &x * &x;
        }
        x
    }
}

/// Max column sum of absolute values.
pub(crate) fn one_norm(a: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for j in 0..a.ncols() {
        let s: f64 = a.column(j).iter().map(|x| x.abs()).sum();
        best = best.max(s);
    }
    best
}

/// Diagonal Pade approximant of order 3, 5, 7, or 9; `b` holds the
/// coefficients in ascending order.
fn pade_low(a: &DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    let m = b.len() - 1;
    let k = (m - 1) / 2;
    let mut pows: Vec<DMatrix<f64>> = Vec::with_capacity(k);
    pows.push(a * a);
    for i in 1..k {
        let p = &pows[i - 1] * &pows[0];
        pows.push(p);
    }
    let id = DMatrix::identity(n, n);
    let mut u_inner = &id * b[1];
    let mut v = &id * b[0];
    for (i, p) in pows.iter().enumerate() {
        u_inner += p * b[2 * i + 3];
        v += p * b[2 * i + 2];
    }
    pade_combine(a * u_inner, v)
}

fn pade_13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::identity(n, n);
    let b = &B13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u = a * (&a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1]);
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    pade_combine(u, v)
}

/// `(V - U)⁻¹ (V + U)`. The denominator is nonsingular for arguments within
/// the scaling thresholds.
fn pade_combine(u: DMatrix<f64>, v: DMatrix<f64>) -> DMatrix<f64> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Pade denominator is nonsingular for scaled arguments")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::rel_frobenius;

    fn taylor_exponential(a: &DMatrix<f64>, t: f64, terms: usize) -> DMatrix<f64> {
        let at = a * t;
        let n = at.nrows();
        let mut sum = DMatrix::identity(n, n);
        let mut term = DMatrix::identity(n, n);
        for k in 1..=terms {
            term = &term * &at / (k as f64);
            sum += &term;
        }
        sum
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let a = DMatrix::<f64>::zeros(2, 2);
        let e = matrix_exponential(&a, 3.0).unwrap();
        assert!(rel_frobenius(&e, &DMatrix::identity(2, 2)) < 1e-15);
    }

    #[test]
    fn scalar_decay() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let e = matrix_exponential(&a, 1.0).unwrap();
        assert!((e[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((e[(0, 0)] - 0.367_879_441_171_442_32).abs() < 1e-15);
    }

    #[test]
    fn quarter_turn_rotation() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let t = std::f64::consts::FRAC_PI_2;
        let e = matrix_exponential(&a, t).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(rel_frobenius(&e, &expected) < 1e-13);
        let taylor = taylor_exponential(&a, t, 50);
        assert!(rel_frobenius(&e, &taylor) < 1e-13);
    }

    #[test]
    fn matches_taylor_on_generic_matrix() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[-0.7, 0.3, 0.1, 0.2, -1.1, 0.5, 0.0, 0.4, -0.9],
        );
        let e = matrix_exponential(&a, 1.3).unwrap();
        let taylor = taylor_exponential(&a, 1.3, 60);
        assert!(rel_frobenius(&e, &taylor) < 1e-13);
    }

    #[test]
    fn semigroup_property() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.3, 1.2, -0.8, -0.5]);
        let full = matrix_exponential(&a, 2.1).unwrap();
        let split =
            matrix_exponential(&a, 0.9).unwrap() * matrix_exponential(&a, 1.2).unwrap();
        assert!(rel_frobenius(&split, &full) < 1e-13);
    }

    #[test]
    fn large_norm_goes_through_squaring() {
        // 20 full turns: ‖At‖ is far above the order-13 threshold.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let t = 40.0 * std::f64::consts::PI;
        let e = matrix_exponential(&a, t).unwrap();
        assert!(rel_frobenius(&e, &DMatrix::identity(2, 2)) < 1e-10);

        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-50.0, 2.0]));
        let ed = matrix_exponential(&d, 1.0).unwrap();
        assert!((ed[(0, 0)] - (-50.0f64).exp()).abs() / (-50.0f64).exp() < 1e-12);
        assert!((ed[(1, 1)] - 2.0f64.exp()).abs() / 2.0f64.exp() < 1e-12);
        assert!(ed[(0, 1)].abs() < 1e-300);
    }

    #[test]
    fn negative_time_is_the_inverse_flow() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.4, 0.7, -0.1, -0.9]);
        let fwd = matrix_exponential(&a, 0.8).unwrap();
        let bwd = matrix_exponential(&a, -0.8).unwrap();
        assert!(rel_frobenius(&(fwd * bwd), &DMatrix::identity(2, 2)) < 1e-13);
    }

    #[test]
    fn rejects_non_finite_input() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, f64::NAN, 0.0, 0.0]);
        assert!(matrix_exponential(&a, 1.0).is_err());
        let b = DMatrix::<f64>::zeros(2, 2);
        assert!(matrix_exponential(&b, f64::INFINITY).is_err());
    }
}
