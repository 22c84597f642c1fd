//! Gaussian messages and the node-local update rules of the smoother.
//!
//! Forward messages travel in moment form `(m, V)` and backward messages in
//! information form `(W, xi = W m)`. The backward sweep starts from no future
//! data, which is exactly representable as `W = 0` but has no covariance;
//! every rule below is written so that singular `W` and singular `V` both
//! stay finite, using `(I + W Vs)⁻¹`-style resolvents instead of raw
//! inversions.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, TransitionKernel};
use crate::model::ContinuousLTISystem;

/// Gaussian in moment form: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentGaussian {
    m: DVector<f64>,
    v: DMatrix<f64>,
}

impl MomentGaussian {
    /// Validates symmetry (1e-10 relative) and positive semidefiniteness
    /// (eigenvalues ≥ -1e-9 ‖V‖).
    pub fn new(m: DVector<f64>, v: DMatrix<f64>) -> Result<Self> {
        if v.nrows() != v.ncols() || v.nrows() != m.len() {
            return Err(Error::InvalidInput(format!(
                "MomentGaussian: mean length {} incompatible with covariance {}x{}",
                m.len(),
                v.nrows(),
                v.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "MomentGaussian: non-finite entries".into(),
            ));
        }
        let scale = v.norm();
        if (&v - v.transpose()).norm() > 1e-10 * scale.max(1e-300) {
            return Err(Error::InvalidInput(
                "MomentGaussian: covariance is not symmetric".into(),
            ));
        }
        let v = linalg::symmetrize(&v);
        let min_eig = v
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-9 * scale.max(1e-300) {
            return Err(Error::InvalidInput(format!(
                "MomentGaussian: covariance indefinite (min eigenvalue {min_eig})"
            )));
        }
        Ok(MomentGaussian { m, v })
    }

    /// Degenerate distribution concentrated at `m` (zero covariance).
    pub fn point(m: DVector<f64>) -> Self {
        let n = m.len();
        MomentGaussian {
            m,
            v: DMatrix::zeros(n, n),
        }
    }

    pub(crate) fn from_parts_unchecked(m: DVector<f64>, v: DMatrix<f64>) -> Self {
        debug_assert_eq!(v.nrows(), m.len());
        debug_assert_eq!(v.ncols(), m.len());
        MomentGaussian { m, v }
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Gaussian in information form: precision `W` (possibly singular) and
/// `xi = W m`. `W = 0` with `xi = 0` is the flat message carrying no
/// information.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoGaussian {
    w: DMatrix<f64>,
    xi: DVector<f64>,
}

impl InfoGaussian {
    pub fn new(w: DMatrix<f64>, xi: DVector<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() || w.nrows() != xi.len() {
            return Err(Error::InvalidInput(format!(
                "InfoGaussian: xi length {} incompatible with precision {}x{}",
                xi.len(),
                w.nrows(),
                w.ncols()
            )));
        }
        if xi.iter().any(|x| !x.is_finite()) || w.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "InfoGaussian: non-finite entries".into(),
            ));
        }
        let scale = w.norm();
        if (&w - w.transpose()).norm() > 1e-10 * scale.max(1e-300) {
            return Err(Error::InvalidInput(
                "InfoGaussian: precision is not symmetric".into(),
            ));
        }
        let w = linalg::symmetrize(&w);
        let min_eig = w
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-9 * scale.max(1e-300) {
            return Err(Error::InvalidInput(format!(
                "InfoGaussian: precision indefinite (min eigenvalue {min_eig})"
            )));
        }
        if scale == 0.0 && xi.norm() != 0.0 {
            return Err(Error::InvalidInput(
                "InfoGaussian: zero precision requires zero xi".into(),
            ));
        }
        Ok(InfoGaussian { w, xi })
    }

    /// The message carrying no information.
    pub fn flat(n: usize) -> Self {
        InfoGaussian {
            w: DMatrix::zeros(n, n),
            xi: DVector::zeros(n),
        }
    }

    pub(crate) fn from_parts_unchecked(w: DMatrix<f64>, xi: DVector<f64>) -> Self {
        debug_assert_eq!(w.nrows(), xi.len());
        debug_assert_eq!(w.ncols(), xi.len());
        InfoGaussian { w, xi }
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn xi(&self) -> &DVector<f64> {
        &self.xi
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }

    pub fn is_flat(&self) -> bool {
        self.w.iter().all(|&x| x == 0.0)
    }
}

/// The exact transition over one interval of length `t`:
/// `X(t1) = Phi X(t0) + drift + w`, `w ~ N(0, Vs)`, with
/// `Phi = e^{At}`, `drift = (∫ e^{Aτ}dτ) h`, `Vs = σ_U²·∫ e^{Aτ}BBᵀe^{Aᵀτ}dτ`,
/// and `Vs_back` its time-reversed counterpart (`= Phi⁻¹ Vs Phi⁻ᵀ`).
#[derive(Debug, Clone)]
pub struct TransitionFactor {
    phi: DMatrix<f64>,
    drift: DVector<f64>,
    vs: DMatrix<f64>,
    vs_back: DMatrix<f64>,
    t: f64,
    system: Arc<ContinuousLTISystem>,
}

impl TransitionFactor {
    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn drift(&self) -> &DVector<f64> {
        &self.drift
    }

    pub fn vs(&self) -> &DMatrix<f64> {
        &self.vs
    }

    pub fn vs_back(&self) -> &DMatrix<f64> {
        &self.vs_back
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn system(&self) -> &Arc<ContinuousLTISystem> {
        &self.system
    }
}

/// Produces [`TransitionFactor`]s of arbitrary duration for one system,
/// computing the eigendecomposition of `A` once.
#[derive(Debug, Clone)]
pub struct TransitionBuilder {
    system: Arc<ContinuousLTISystem>,
    kernel: TransitionKernel,
}

impl TransitionBuilder {
    /// Requires `sigma_u > 0`: a transition without process noise has a
    /// singular joint density and the estimation rules divide by it.
    pub fn new(system: Arc<ContinuousLTISystem>) -> Result<Self> {
        if !(system.sigma_u() > 0.0) {
            return Err(Error::InvalidInput(
                "estimation requires sigma_u > 0".into(),
            ));
        }
        let kernel = TransitionKernel::new(system.a(), system.b())?;
        Ok(TransitionBuilder { system, kernel })
    }

    pub fn system(&self) -> &Arc<ContinuousLTISystem> {
        &self.system
    }

    pub fn factor(&self, t: f64) -> Result<TransitionFactor> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidInput(format!(
                "transition duration must be positive, got {t}"
            )));
        }
        let s2 = self.system.sigma_u() * self.system.sigma_u();
        let phi = self.kernel.phi(t)?;
        let drift = self.kernel.drift_integral(t)? * self.system.h();
        let vs = self.kernel.forward(t)?.value * s2;
        let vs_back = self.kernel.backward(t)?.value * s2;
        Ok(TransitionFactor {
            phi,
            drift,
            vs,
            vs_back,
            t,
            system: self.system.clone(),
        })
    }
}

/// One-off [`TransitionFactor`]; use [`TransitionBuilder`] when several
/// durations are needed for the same system.
pub fn make_transition(system: &Arc<ContinuousLTISystem>, t: f64) -> Result<TransitionFactor> {
    TransitionBuilder::new(system.clone())?.factor(t)
}

/// Moment message through the transition, forward in time:
/// `m' = Phi m + drift`, `V' = Phi V Phiᵀ + Vs`.
pub fn forward_through(factor: &TransitionFactor, msg: &MomentGaussian) -> Result<MomentGaussian> {
    if msg.dim() != factor.phi.nrows() {
        return Err(Error::InvalidInput(format!(
            "forward_through: message dimension {} does not match state dimension {}",
            msg.dim(),
            factor.phi.nrows()
        )));
    }
    let m = &factor.phi * &msg.m + &factor.drift;
    let v = linalg::symmetrize(&(&factor.phi * &msg.v * factor.phi.transpose() + &factor.vs));
    Ok(MomentGaussian::from_parts_unchecked(m, v))
}

/// Information message through the transition, against time. With
/// `G = (I + W Vs)⁻¹`:
///
/// ```text
/// W' = Phiᵀ G W Phi,    xi' = Phiᵀ G (xi - W drift),
/// ```
///
/// which equals pulling the moment-form message through the inverse flow
/// whenever `W` is invertible, but stays defined for singular `W` (including
/// the flat terminal message).
pub fn backward_through(factor: &TransitionFactor, msg: &InfoGaussian) -> Result<InfoGaussian> {
    let n = factor.phi.nrows();
    if msg.dim() != n {
        return Err(Error::InvalidInput(format!(
            "backward_through: message dimension {} does not match state dimension {}",
            msg.dim(),
            n
        )));
    }
    let iwvs = DMatrix::identity(n, n) + &msg.w * &factor.vs;
    let lu = iwvs.lu();
    let gw = lu.solve(&msg.w).ok_or_else(|| {
        Error::Conditioning("backward_through: I + W Vs is numerically singular".into())
    })?;
    let gx = lu
        .solve(&(&msg.xi - &msg.w * &factor.drift))
        .ok_or_else(|| {
            Error::Conditioning("backward_through: I + W Vs is numerically singular".into())
        })?;
    let w = linalg::symmetrize(&(factor.phi.transpose() * gw * &factor.phi));
    let xi = factor.phi.transpose() * gx;
    Ok(InfoGaussian::from_parts_unchecked(w, xi))
}

/// Folds one observation `y ~ N(C x, diag(vz))` into an information message:
/// `W' = W + Cᵀ Vz⁻¹ C`, `xi' = xi + Cᵀ Vz⁻¹ y`. `None` leaves the message
/// unchanged (unobserved instant).
pub fn observe(
    msg: &InfoGaussian,
    c: &DMatrix<f64>,
    vz: &DVector<f64>,
    y: Option<&DVector<f64>>,
) -> Result<InfoGaussian> {
    let Some(y) = y else {
        return Ok(msg.clone());
    };
    if c.ncols() != msg.dim() || c.nrows() != vz.len() || y.len() != vz.len() {
        return Err(Error::InvalidInput(format!(
            "observe: C is {}x{}, vz has length {}, y has length {}, message dimension {}",
            c.nrows(),
            c.ncols(),
            vz.len(),
            y.len(),
            msg.dim()
        )));
    }
    if vz.iter().any(|&v| v < 0.0) || y.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "observe: vz must be nonnegative and y finite".into(),
        ));
    }
    if vz.iter().any(|&v| v == 0.0) {
        return Err(Error::ExactObservation);
    }
    let mut w = msg.w.clone();
    let mut xi = msg.xi.clone();
    for i in 0..vz.len() {
        let ci = c.row(i);
        let wi = 1.0 / vz[i];
        w += ci.transpose() * ci * wi;
        xi += ci.transpose() * (wi * y[i]);
    }
    Ok(InfoGaussian::from_parts_unchecked(linalg::symmetrize(&w), xi))
}

/// Posterior from the two directions. With `G = (I + V_f W_b)⁻¹`:
/// `V = G V_f`, `m = G (m_f + V_f xi_b)`. Valid for singular `V_f` and
/// singular `W_b`; equals the precision-sum formula whenever both exist.
pub fn combine(fwd: &MomentGaussian, bwd: &InfoGaussian) -> Result<MomentGaussian> {
    let n = fwd.dim();
    if bwd.dim() != n {
        return Err(Error::InvalidInput(format!(
            "combine: dimensions {} and {} do not match",
            n,
            bwd.dim()
        )));
    }
    let ivw = DMatrix::identity(n, n) + &fwd.v * &bwd.w;
    let lu = ivw.lu();
    let v = lu
        .solve(&fwd.v)
        .ok_or_else(|| Error::Conditioning("combine: I + V W is numerically singular".into()))?;
    let m = lu
        .solve(&(&fwd.m + &fwd.v * &bwd.xi))
        .ok_or_else(|| Error::Conditioning("combine: I + V W is numerically singular".into()))?;
    Ok(MomentGaussian::from_parts_unchecked(
        m,
        linalg::symmetrize(&v),
    ))
}

/// LMMSE estimate of the input signal at the instant where `fwd` and `bwd`
/// meet: `û = σ_U² Bᵀ (I + W_b V_f)⁻¹ (xi_b - W_b m_f)`, the
/// inversion-robust form of `σ_U² Bᵀ (V_f + V_b)⁻¹ (m_b - m_f)`. A flat
/// backward message yields zero: no future observation informs the input.
pub fn input_estimate(
    fwd: &MomentGaussian,
    bwd: &InfoGaussian,
    system: &ContinuousLTISystem,
) -> Result<DVector<f64>> {
    let n = system.state_dim();
    if fwd.dim() != n || bwd.dim() != n {
        return Err(Error::InvalidInput(format!(
            "input_estimate: message dimensions {} and {} do not match state dimension {}",
            fwd.dim(),
            bwd.dim(),
            n
        )));
    }
    if !(system.sigma_u() > 0.0) {
        return Err(Error::InvalidInput(
            "estimation requires sigma_u > 0".into(),
        ));
    }
    let iwv = DMatrix::identity(n, n) + &bwd.w * &fwd.v;
    let rhs = &bwd.xi - &bwd.w * &fwd.m;
    let sol = iwv.lu().solve(&rhs).ok_or_else(|| {
        Error::Conditioning("input_estimate: I + W V is numerically singular".into())
    })?;
    Ok(system.b().transpose() * sol * (system.sigma_u() * system.sigma_u()))
}
