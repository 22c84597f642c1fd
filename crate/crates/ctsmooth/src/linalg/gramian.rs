//! Process-noise Gramians and drift integrals of the exact discretization.
//!
//! `forward_gramian` computes `∫₀ᵗ e^{Aτ} B Bᵀ e^{Aᵀτ} dτ`, and
//! `backward_gramian` the time-reversed counterpart with `e^{-Aτ}`. Both use
//! a closed form over the eigendecomposition of `A` when one is accepted and
//! otherwise fall back to a single augmented matrix exponential, which also
//! covers defective matrices. Input-noise intensity is deliberately not
//! applied here; callers scale the result by σ_U².

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

use super::eig::{Eigendecomposition, diagonalize};
use super::expm::expm;
use super::{ensure_square_finite, matrix_exponential, symmetrize};

type C64 = Complex<f64>;

/// How a Gramian value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GramianMethod {
    /// Eigenexpansion with the explicit antiderivative of each entry.
    ClosedForm,
    /// Block of an augmented matrix exponential.
    VanLoan,
    /// Composite numerical quadrature.
    Quadrature,
}

/// A computed Gramian: symmetric positive semidefinite up to roundoff.
#[derive(Debug, Clone)]
pub struct GramianResult {
    /// The integral value, symmetrized.
    pub value: DMatrix<f64>,
    /// Which evaluation path produced it.
    pub method: GramianMethod,
}

/// Reusable kernel for one `(A, B)` pair: the eigendecomposition is computed
/// once and shared by every Gramian evaluation. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    closed: Option<ClosedForm>,
}

#[derive(Debug, Clone)]
struct ClosedForm {
    eig: Eigendecomposition,
    /// `(Q⁻¹B)(Q⁻¹B)ᴴ`.
    psi: DMatrix<C64>,
    /// Frobenius norm of `A`; sets the degeneracy threshold on λ_k + conj(λ_ℓ).
    a_norm: f64,
}

impl TransitionKernel {
    /// Validates dimensions and precomputes the closed-form data if `A` is
    /// diagonalizable.
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Self> {
        ensure_square_finite(a, "TransitionKernel")?;
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "TransitionKernel: B must be {}xm with m >= 1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if b.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "TransitionKernel: non-finite entries in B".into(),
            ));
        }
        let closed = match diagonalize(a) {
            Ok(eig) => {
                let bc = b.map(|x| C64::new(x, 0.0));
                let qb = &eig.qinv * bc;
                let psi = &qb * qb.adjoint();
                Some(ClosedForm {
                    eig,
                    psi,
                    a_norm: a.norm(),
                })
            }
            Err(Error::NotDiagonalizable { .. }) => None,
            Err(other) => return Err(other),
        };
        Ok(TransitionKernel {
            a: a.clone(),
            b: b.clone(),
            closed,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// `e^{At}`.
    pub fn phi(&self, t: f64) -> Result<DMatrix<f64>> {
        matrix_exponential(&self.a, t)
    }

    /// `∫₀ᵗ e^{Aτ} dτ`.
    pub fn drift_integral(&self, t: f64) -> Result<DMatrix<f64>> {
        drift_integral(&self.a, t)
    }

    /// `∫₀ᵗ e^{Aτ} B Bᵀ e^{Aᵀτ} dτ`.
    pub fn forward(&self, t: f64) -> Result<GramianResult> {
        self.gramian(t, false)
    }

    /// `∫₀ᵗ e^{-Aτ} B Bᵀ e^{-Aᵀτ} dτ`.
    pub fn backward(&self, t: f64) -> Result<GramianResult> {
        self.gramian(t, true)
    }

    fn gramian(&self, t: f64, time_reversed: bool) -> Result<GramianResult> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidInput(format!(
                "Gramian integration time must be finite and nonnegative, got {t}"
            )));
        }
        if let Some(cf) = &self.closed
            && let Some(value) = cf.try_eval(t, time_reversed)
        {
            return Ok(GramianResult {
                value,
                method: GramianMethod::ClosedForm,
            });
        }
        Ok(GramianResult {
            value: van_loan_integral(&self.a, &self.b, t, time_reversed),
            method: GramianMethod::VanLoan,
        })
    }
}

impl ClosedForm {
    /// `Re(Q Θ(t) Qᴴ)` with `Θ_{kℓ} = ψ_{kℓ} (e^{±(λ_k+conj λ_ℓ)t} - 1)/(±(λ_k+conj λ_ℓ))`.
    /// Returns `None` when the discarded imaginary residue is not negligible,
    /// which sends the caller to the fallback path.
    fn try_eval(&self, t: f64, time_reversed: bool) -> Option<DMatrix<f64>> {
        let n = self.eig.lambdas.len();
        let s_tol = 1e-9 * self.a_norm;
        let mut theta = DMatrix::<C64>::zeros(n, n);
        for k in 0..n {
            for l in 0..n {
                let s = self.eig.lambdas[k] + self.eig.lambdas[l].conj();
                let s_eff = if time_reversed { -s } else { s };
                theta[(k, l)] = self.psi[(k, l)] * growth(s_eff, t, s_tol);
            }
        }
        let g = &self.eig.q * theta * self.eig.q.adjoint();
        let re = g.map(|z| z.re);
        let im_norm = g.map(|z| z.im).norm();
        if re.iter().any(|x| !x.is_finite()) {
            return None;
        }
        if im_norm > 1e-9 * re.norm().max(1e-300) {
            return None;
        }
        Some(symmetrize(&re))
    }
}

/// `(e^{st} - 1)/s`, with the exact limit `t` when `|s|` is negligible
/// against the matrix scale (degenerate eigenvalue sums, e.g. purely
/// imaginary conjugate pairs), and a series evaluation for small `|st|` to
/// avoid cancellation.
fn growth(s: C64, t: f64, s_tol: f64) -> C64 {
    if s.norm() <= s_tol {
        return C64::new(t, 0.0);
    }
    let st = s * t;
    if st.norm() < 0.5 {
        // t · Σ_{k≥0} (st)^k / (k+1)!
        let mut term = C64::ONE;
        let mut sum = C64::ONE;
        for k in 1..30 {
            term = term * st / (k as f64 + 1.0);
            sum += term;
            if term.norm() < 1e-20 {
                break;
            }
        }
        sum * t
    } else {
        (st.exp() - C64::ONE) / s
    }
}

/// Forward or time-reversed Gramian via one exponential of the augmented
/// block matrix `[[∓A, BBᵀ], [0, ±Aᵀ]] t`; the result is `F₂₂ᵀ G₁₂`.
fn van_loan_integral(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    t: f64,
    time_reversed: bool,
) -> DMatrix<f64> {
    let n = a.nrows();
    let bbt = b * b.transpose();
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    if time_reversed {
        m.view_mut((0, 0), (n, n)).copy_from(a);
        m.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));
    } else {
        m.view_mut((0, 0), (n, n)).copy_from(&(-a));
        m.view_mut((n, n), (n, n)).copy_from(&a.transpose());
    }
    m.view_mut((0, n), (n, n)).copy_from(&bbt);
    let e = expm(&(m * t));
    let f22 = e.view((n, n), (n, n));
    let g12 = e.view((0, n), (n, n));
    symmetrize(&(f22.transpose() * g12))
}

/// `∫₀ᵗ e^{Aτ} B Bᵀ e^{Aᵀτ} dτ`, closed form when `A` diagonalizes cleanly.
pub fn forward_gramian(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> Result<GramianResult> {
    TransitionKernel::new(a, b)?.forward(t)
}

/// `∫₀ᵗ e^{-Aτ} B Bᵀ e^{-Aᵀτ} dτ`, closed form when `A` diagonalizes cleanly.
pub fn backward_gramian(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> Result<GramianResult> {
    TransitionKernel::new(a, b)?.backward(t)
}

/// Forward Gramian via the augmented matrix exponential only. Slower per
/// call than the closed form but valid for defective and purely oscillatory
/// `A`; used as an independent oracle for the closed form.
pub fn gramian_vanloan(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> Result<GramianResult> {
    ensure_square_finite(a, "gramian_vanloan")?;
    if b.nrows() != a.nrows() || b.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "gramian_vanloan: B must have n rows and finite entries".into(),
        ));
    }
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidInput(format!(
            "Gramian integration time must be finite and nonnegative, got {t}"
        )));
    }
    Ok(GramianResult {
        value: van_loan_integral(a, b, t, false),
        method: GramianMethod::VanLoan,
    })
}

/// `∫₀ᵗ e^{Aτ} dτ` via the augmented exponential of `[[A, I], [0, 0]] t`,
/// so singular `A` is handled exactly; equals `A⁻¹(e^{At} - I)` when `A` is
/// invertible.
pub fn drift_integral(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    ensure_square_finite(a, "drift_integral")?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidInput(format!(
            "drift_integral: time must be finite and nonnegative, got {t}"
        )));
    }
    let n = a.nrows();
    let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(a);
    m.view_mut((0, n), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    let e = expm(&(m * t));
    Ok(e.view((0, n), (n, n)).into())
}
