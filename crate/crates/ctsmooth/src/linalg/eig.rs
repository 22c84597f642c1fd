//! Eigendecomposition for the closed-form Gramian path.
//!
//! Eigenvalues come from the real Schur form; eigenvectors from shifted
//! inverse iteration on a balanced copy of the matrix. A decomposition is
//! accepted only if the eigenvector basis is well conditioned and reproduces
//! the matrix to tight tolerance, so the closed forms built on top of it can
//! be trusted; anything else is reported as not diagonalizable and callers
//! switch to the augmented-exponential fallback.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

type C64 = Complex<f64>;

/// Largest accepted condition number of the eigenvector basis.
const COND_LIMIT: f64 = 1e8;
/// Relative Frobenius tolerance for `Q diag(λ) Q⁻¹ ≈ A` and `Q⁻¹ Q ≈ I`.
const RECONSTRUCT_TOL: f64 = 1e-10;

/// `A = Q diag(lambdas) Q⁻¹` with a complex eigenbasis.
#[derive(Debug, Clone)]
pub struct Eigendecomposition {
    /// Eigenvector basis, one unit column per eigenvalue.
    pub q: DMatrix<C64>,
    /// Eigenvalues, in the order of the columns of `q`.
    pub lambdas: DVector<C64>,
    /// Inverse of `q`.
    pub qinv: DMatrix<C64>,
}

/// Diagonalizes a real square matrix, or reports that no trustworthy
/// eigenbasis exists (defective or near-defective input).
pub fn diagonalize(a: &DMatrix<f64>) -> Result<Eigendecomposition> {
    super::ensure_square_finite(a, "diagonalize")?;
    let n = a.nrows();
    if n == 1 {
        return Ok(Eigendecomposition {
            q: DMatrix::from_element(1, 1, C64::ONE),
            lambdas: DVector::from_element(1, C64::new(a[(0, 0)], 0.0)),
            qinv: DMatrix::from_element(1, 1, C64::ONE),
        });
    }

    let (d, ab) = balance(a);
    let lambdas = ab.complex_eigenvalues();
    let abc = ab.map(|x| C64::new(x, 0.0));
    let scale = ab.norm().max(1.0);

    let mut q = DMatrix::<C64>::zeros(n, n);
    for k in 0..n {
        let v = eigenvector(&abc, lambdas[k], scale, k)?;
        q.set_column(k, &v);
    }

    // Undo the balancing (rows scale by d), then normalize each column to
    // unit length with a deterministic phase so cond(Q) is meaningful.
    for k in 0..n {
        let mut col = q.column_mut(k);
        for i in 0..n {
            col[i] *= d[i];
        }
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::NotDiagonalizable { cond: f64::INFINITY });
        }
        let mut pivot = 0;
        for i in 1..n {
            if col[i].norm() > col[pivot].norm() {
                pivot = i;
            }
        }
        let phase = col[pivot] / col[pivot].norm();
        let inv = phase.conj() / norm;
        for i in 0..n {
            col[i] *= inv;
        }
    }

    let sv = q.clone().svd(false, false).singular_values;
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().cloned().fold(0.0f64, f64::max);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !cond.is_finite() || cond > COND_LIMIT {
        return Err(Error::NotDiagonalizable { cond });
    }

    let qinv = q
        .clone()
        .full_piv_lu()
        .solve(&DMatrix::<C64>::identity(n, n))
        .ok_or(Error::NotDiagonalizable { cond: f64::INFINITY })?;

    let ac = a.map(|x| C64::new(x, 0.0));
    let recon = &q * DMatrix::from_diagonal(&lambdas) * &qinv;
    let rel = (&recon - &ac).norm() / ac.norm().max(1e-300);
    let id_err = (&qinv * &q - DMatrix::<C64>::identity(n, n)).norm();
    let id_tol = RECONSTRUCT_TOL * (n as f64).sqrt().max(1.0);
    if rel > RECONSTRUCT_TOL || id_err > id_tol {
        return Err(Error::NotDiagonalizable { cond });
    }

    Ok(Eigendecomposition { q, lambdas, qinv })
}

/// Diagonal similarity scaling with powers of two (Parlett-Reinsch): returns
/// `(d, D⁻¹ A D)` with `D = diag(d)` such that row and column norms are
/// comparable. Exact in floating point; `A = D (D⁻¹AD) D⁻¹`.
pub(crate) fn balance(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut d = DVector::from_element(n, 1.0);
    let mut ab = a.clone();
    let radix = 2.0f64;
    loop {
        let mut converged = true;
        for i in 0..n {
            let mut c: f64 = (0..n).filter(|&j| j != i).map(|j| ab[(j, i)].abs()).sum();
            let mut r: f64 = (0..n).filter(|&j| j != i).map(|j| ab[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 || !(c + r).is_finite() {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            while c < r / radix {
                c *= radix;
                r /= radix;
                f *= radix;
            }
            while c >= r * radix {
                c /= radix;
                r *= radix;
                f /= radix;
            }
            if f != 1.0 && c + r < 0.95 * s {
                converged = false;
                d[i] *= f;
                for j in 0..n {
                    ab[(j, i)] *= f;
                }
                for j in 0..n {
                    ab[(i, j)] /= f;
                }
            }
        }
        if converged {
            return (d, ab);
        }
    }
}

/// True when every eigenvalue of `a` has strictly negative real part.
/// Balancing first keeps the Schur eigenvalues accurate for matrices with a
/// wide dynamic range (high-cutoff companion forms).
pub(crate) fn matrix_is_hurwitz(a: &DMatrix<f64>) -> bool {
    if a.nrows() == 0 || a.nrows() != a.ncols() || a.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let (_, ab) = balance(a);
    ab.complex_eigenvalues().iter().all(|l| l.re < 0.0)
}

/// One eigenvector by inverse iteration with a slightly offset shift. The
/// offset keeps the factorization nonsingular while the solve still amplifies
/// the eigenvector direction by roughly the reciprocal offset.
fn eigenvector(abc: &DMatrix<C64>, lambda: C64, scale: f64, k: usize) -> Result<DVector<C64>> {
    let n = abc.nrows();
    let id = DMatrix::<C64>::identity(n, n);
    let mut offset = 1e-12 * scale;
    for attempt in 0..4 {
        let shift = lambda + C64::new(offset, 0.5 * offset);
        let lu = (abc - &id * shift).full_piv_lu();
        let mut v = start_vector(n, k + 97 * attempt);
        let mut ok = true;
        for _ in 0..3 {
            match lu.solve(&v) {
                Some(w) => {
                    let norm = w.norm();
                    if !norm.is_finite() || norm == 0.0 {
                        ok = false;
                        break;
                    }
                    v = w.unscale(norm);
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(v);
        }
        offset *= 1e3;
    }
    Err(Error::NotDiagonalizable { cond: f64::INFINITY })
}

/// Deterministic pseudo-random start direction; only needs to avoid being
/// orthogonal to the target eigenvector.
fn start_vector(n: usize, k: usize) -> DVector<C64> {
    let mut state = (k as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(0xD1B5_4A32_D192_ED03);
    let mut next = move || {
        state ^= state >> 33;
        state = state.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
        state ^= state >> 29;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    };
    let v = DVector::from_fn(n, |_, _| C64::new(next(), next()));
    let norm = v.norm();
    v.unscale(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_hurwitz;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn reconstruction_error(a: &DMatrix<f64>, e: &Eigendecomposition) -> f64 {
        let ac = a.map(|x| C64::new(x, 0.0));
        let recon = &e.q * DMatrix::from_diagonal(&e.lambdas) * &e.qinv;
        (&recon - &ac).norm() / ac.norm().max(1e-300)
    }

    #[test]
    fn already_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let e = diagonalize(&a).unwrap();
        let mut lam: Vec<f64> = e.lambdas.iter().map(|l| l.re).collect();
        lam.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((lam[0] + 2.0).abs() < 1e-12 && (lam[1] + 1.0).abs() < 1e-12);
        assert!(e.lambdas.iter().all(|l| l.im.abs() < 1e-12));
        assert!(reconstruction_error(&a, &e) < 1e-12);
    }

    #[test]
    fn companion_with_complex_pair() {
        // s² + 2ζω s + ω², ζ = 1/√2, ω = 2π: conjugate pair with
        // real part -ζω.
        let om = 2.0 * std::f64::consts::PI;
        let zeta = 0.5f64.sqrt();
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -om * om, -2.0 * zeta * om]);
        let e = diagonalize(&a).unwrap();
        for l in e.lambdas.iter() {
            // Root of the characteristic polynomial.
            let res = l * l + l * (2.0 * zeta * om) + C64::new(om * om, 0.0);
            assert!(res.norm() < 1e-8 * om * om);
            assert!((l.re + zeta * om).abs() < 1e-8);
        }
        assert!(reconstruction_error(&a, &e) < 1e-10);
    }

    #[test]
    fn jordan_block_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        match diagonalize(&a) {
            Err(Error::NotDiagonalizable { .. }) => {}
            other => panic!("expected not-diagonalizable, got {other:?}"),
        }
    }

    #[test]
    fn repeated_eigenvalue_with_full_eigenspace() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0, -3.0]));
        let e = diagonalize(&a).unwrap();
        assert!(reconstruction_error(&a, &e) < 1e-12);
    }

    #[test]
    fn accepted_bases_reconstruct_to_tolerance() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut accepted = 0;
        for trial in 0..100 {
            let n = 2 + trial % 7;
            let a = random_hurwitz(&mut rng, n);
            match diagonalize(&a) {
                Ok(e) => {
                    accepted += 1;
                    assert!(reconstruction_error(&a, &e) <= 1e-10);
                    let id_err =
                        (&e.qinv * &e.q - DMatrix::<C64>::identity(n, n)).norm();
                    assert!(id_err <= 1e-10 * (n as f64).sqrt());
                }
                Err(Error::NotDiagonalizable { .. }) => {}
                Err(other) => panic!("unexpected error: {other}"),
            }
        }
        assert!(accepted >= 90, "only {accepted}/100 accepted");
    }

    #[test]
    fn balance_is_an_exact_similarity() {
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, -1.0e6, -3.0e4, -3.0e2],
        );
        let (d, ab) = balance(&a);
        // D ab D⁻¹ must reproduce A exactly: scaling by powers of two.
        for i in 0..3 {
            for j in 0..3 {
                let back = ab[(i, j)] * d[i] / d[j];
                assert_eq!(back, a[(i, j)]);
            }
        }
        let spread = |m: &DMatrix<f64>| {
            let mx = m.iter().map(|x| x.abs()).fold(0.0f64, f64::max);
            let mn = m
                .iter()
                .map(|x| x.abs())
                .filter(|&x| x > 0.0)
                .fold(f64::INFINITY, f64::min);
            mx / mn
        };
        assert!(spread(&ab) < spread(&a));
    }
}
