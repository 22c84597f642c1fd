//! Brute-force reference implementations used as ground truth in tests: an
//! N-substep discretization of the continuous dynamics and the regularized
//! least-squares joint solve over (initial state, all substep inputs).
//!
//! The discretization keeps the exact flow `e^{Aδ}` and exact drift per
//! substep and approximates only the input path, holding it constant over
//! each cell with gain `δB` and per-cell variance `σ_U²/δ`. Estimates from
//! the joint solve therefore converge to the exact smoother at rate O(1/N),
//! which the convergence checks rely on.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::analysis;
use crate::error::{Error, Result};
use crate::linalg::{self, TransitionKernel, matrix_exponential};
use crate::messages::MomentGaussian;
use crate::model::ContinuousLTISystem;
use crate::smoother::MeasurementSet;

/// Largest dense unknown count (`n + cells·m`) accepted by the joint solve.
pub const JOINT_LS_GUARD: usize = 20_000;

/// Discretization of the dynamics over consecutive intervals, each split
/// into `n_sub` equal cells. Composing the `n_sub` cell flows of interval
/// `k` reproduces `e^{A T_k}` to within roundoff.
#[derive(Debug, Clone)]
pub struct DiscreteDecomposition {
    n_sub: usize,
    knot_times: Vec<f64>,
    sub_times: Vec<f64>,
    phi_step: Vec<DMatrix<f64>>,
    gain_step: Vec<DMatrix<f64>>,
    drift_step: Vec<DVector<f64>>,
    delta: Vec<f64>,
    u_var: Vec<f64>,
}

impl DiscreteDecomposition {
    pub fn n_sub(&self) -> usize {
        self.n_sub
    }

    /// Interval edges, including the start time.
    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    /// All substep times; length `cells() + 1`.
    pub fn sub_times(&self) -> &[f64] {
        &self.sub_times
    }

    pub fn cells(&self) -> usize {
        (self.knot_times.len() - 1) * self.n_sub
    }

    pub fn interval_of_cell(&self, cell: usize) -> usize {
        cell / self.n_sub
    }

    /// Exact substep flow `e^{A T_k / N}` for interval `k`.
    pub fn phi_step(&self, interval: usize) -> &DMatrix<f64> {
        &self.phi_step[interval]
    }

    /// Input gain `(T_k/N)·B` for interval `k`.
    pub fn gain_step(&self, interval: usize) -> &DMatrix<f64> {
        &self.gain_step[interval]
    }

    /// Exact substep drift `(∫₀^δ e^{Aτ}dτ)·h` for interval `k`.
    pub fn drift_step(&self, interval: usize) -> &DVector<f64> {
        &self.drift_step[interval]
    }

    pub fn delta(&self, interval: usize) -> f64 {
        self.delta[interval]
    }

    /// Variance `σ_U²·N/T_k` of each component of the cell input.
    pub fn u_var(&self, interval: usize) -> f64 {
        self.u_var[interval]
    }

    fn state_dim(&self) -> usize {
        self.phi_step[0].nrows()
    }

    fn input_dim(&self) -> usize {
        self.gain_step[0].ncols()
    }

    /// Substep index whose time matches `t` within `1e-9·max(1, |t|)`.
    fn sub_index_of(&self, t: f64) -> Result<usize> {
        let idx = self
            .sub_times
            .partition_point(|&x| x < t)
            .min(self.sub_times.len() - 1);
        let best = if idx > 0 && (t - self.sub_times[idx - 1]).abs() < (self.sub_times[idx] - t).abs()
        {
            idx - 1
        } else {
            idx
        };
        if (self.sub_times[best] - t).abs() <= 1e-9 * t.abs().max(1.0) {
            Ok(best)
        } else {
            Err(Error::InvalidInput(format!(
                "time {t} does not lie on the substep grid (nearest point {})",
                self.sub_times[best]
            )))
        }
    }
}

/// Splits each interval between consecutive `times` into `n_sub` equal cells
/// and precomputes the per-cell flow, gain, drift, and input variance.
pub fn discrete_decompose(
    system: &ContinuousLTISystem,
    times: &[f64],
    n_sub: usize,
) -> Result<DiscreteDecomposition> {
    if n_sub < 1 {
        return Err(Error::InvalidInput("n_sub must be at least 1".into()));
    }
    if times.len() < 2 {
        return Err(Error::InvalidInput(
            "discretization needs at least two times".into(),
        ));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("times must be finite".into()));
    }
    for w in times.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidInput(format!(
                "times must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if !(system.sigma_u() > 0.0) {
        return Err(Error::InvalidInput(
            "discretization requires sigma_u > 0".into(),
        ));
    }

    let kernel = TransitionKernel::new(system.a(), system.b())?;
    let s2 = system.sigma_u() * system.sigma_u();
    let intervals = times.len() - 1;
    let mut phi_step = Vec::with_capacity(intervals);
    let mut gain_step = Vec::with_capacity(intervals);
    let mut drift_step = Vec::with_capacity(intervals);
    let mut delta = Vec::with_capacity(intervals);
    let mut u_var = Vec::with_capacity(intervals);
    let mut sub_times = Vec::with_capacity(intervals * n_sub + 1);
    sub_times.push(times[0]);
    let mut cache: HashMap<u64, (DMatrix<f64>, DVector<f64>)> = HashMap::new();
    for k in 0..intervals {
        let d = (times[k + 1] - times[k]) / n_sub as f64;
        let (phi, drift) = match cache.get(&d.to_bits()) {
            Some(pair) => pair.clone(),
            None => {
                let pair = (kernel.phi(d)?, kernel.drift_integral(d)? * system.h());
                cache.insert(d.to_bits(), pair.clone());
                pair
            }
        };
        phi_step.push(phi);
        drift_step.push(drift);
        gain_step.push(system.b() * d);
        delta.push(d);
        u_var.push(s2 / d);
        for j in 1..=n_sub {
            sub_times.push(if j == n_sub {
                times[k + 1]
            } else {
                times[k] + d * j as f64
            });
        }
    }
    Ok(DiscreteDecomposition {
        n_sub,
        knot_times: times.to_vec(),
        sub_times,
        phi_step,
        gain_step,
        drift_step,
        delta,
        u_var,
    })
}

/// Cost terms of the joint objective at a candidate: whitened input energy
/// `Σ ‖ũ_ℓ‖²·δ/σ_U²`, data misfit `Σ (ỹ_k − c x(t_k))²/vz_k`, and the prior
/// deviation of the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub input_energy: f64,
    pub data_misfit: f64,
    pub prior_deviation: f64,
}

/// Minimizer of the joint objective: per-cell input estimates, the state
/// path they induce, and the attained cost.
#[derive(Debug, Clone)]
pub struct JointLSSolution {
    pub u_knots: Vec<DVector<f64>>,
    pub x_path: Vec<DVector<f64>>,
    pub cost: f64,
    pub breakdown: CostBreakdown,
}

/// Shared context for the joint solve and its derived quantities.
struct JointProblem {
    n: usize,
    m: usize,
    cells: usize,
    /// Pseudo square root of the prior covariance; columns may be zero.
    s: DMatrix<f64>,
    m_prior: DVector<f64>,
    /// Whitened response matrix, one row per measurement over
    /// `(z, w_0, ..., w_{cells-1})`.
    g: DMatrix<f64>,
    /// Residuals `ỹ_k − c·x_det(t_k)` of the zero-input prior-mean flow.
    r: DVector<f64>,
    /// Observation noise variance per measurement.
    vz: Vec<f64>,
    /// Substep index of each measurement.
    q: Vec<usize>,
}

fn resolve_prior(
    prior: Option<MomentGaussian>,
    system: &ContinuousLTISystem,
) -> Result<MomentGaussian> {
    match prior {
        Some(p) => {
            if p.dim() != system.state_dim() {
                return Err(Error::InvalidInput(format!(
                    "prior dimension {} does not match state dimension {}",
                    p.dim(),
                    system.state_dim()
                )));
            }
            Ok(p)
        }
        None => Ok(MomentGaussian::new(
            analysis::stationary_mean(system)?,
            analysis::stationary_state_cov(system)?,
        )?),
    }
}

fn build_problem(
    decomp: &DiscreteDecomposition,
    meas: &MeasurementSet,
    prior: Option<MomentGaussian>,
    system: &ContinuousLTISystem,
) -> Result<JointProblem> {
    let n = system.state_dim();
    let m = system.input_dim();
    if decomp.state_dim() != n || decomp.input_dim() != m {
        return Err(Error::InvalidInput(
            "decomposition and system dimensions do not match".into(),
        ));
    }
    if system.output_dim() != 1 {
        return Err(Error::Unsupported(
            "the joint least-squares solve supports scalar observations only".into(),
        ));
    }
    for v in meas.values() {
        if v.len() != 1 {
            return Err(Error::InvalidInput(
                "measurement dimension does not match the scalar output".into(),
            ));
        }
    }
    let cells = decomp.cells();
    let unknowns = n + cells * m;
    if unknowns > JOINT_LS_GUARD {
        return Err(Error::SizeGuard {
            unknowns,
            limit: JOINT_LS_GUARD,
        });
    }
    let prior = resolve_prior(prior, system)?;
    let s = linalg::psd_factor(prior.cov());
    let m_prior = prior.mean().clone();

    let kk = meas.len();
    let mut q = Vec::with_capacity(kk);
    let mut vz = Vec::with_capacity(kk);
    for k in 0..kk {
        q.push(decomp.sub_index_of(meas.times()[k])?);
        let v = meas.vz_for(k, system)[0];
        if v == 0.0 {
            return Err(Error::ExactObservation);
        }
        vz.push(v);
    }

    let c = system.c();
    let mut g = DMatrix::zeros(kk, unknowns);
    let mut r = DVector::zeros(kk);
    for k in 0..kk {
        let mut v: RowDVector<f64> = c.row(0).into_owned();
        let mut det = 0.0;
        for cell in (0..q[k]).rev() {
            let iv = decomp.interval_of_cell(cell);
            let p = decomp.u_var(iv).sqrt();
            let row_u = (&v * decomp.gain_step(iv)) * p;
            g.view_mut((k, n + cell * m), (1, m)).copy_from(&row_u);
            det += (&v * decomp.drift_step(iv))[0];
            v = &v * decomp.phi_step(iv);
        }
        g.view_mut((k, 0), (1, n)).copy_from(&(&v * &s));
        r[k] = meas.values()[k][0] - (&v * &m_prior)[0] - det;
    }
    Ok(JointProblem {
        n,
        m,
        cells,
        s,
        m_prior,
        g,
        r,
        vz,
        q,
    })
}

impl JointProblem {
    /// Dual matrix `G Gᵀ + diag(vz)`, always positive definite.
    fn dual(&self) -> DMatrix<f64> {
        let mut s_d = &self.g * self.g.transpose();
        for k in 0..self.vz.len() {
            s_d[(k, k)] += self.vz[k];
        }
        s_d
    }
}

/// Rolls the cell recursion from `x0` with the given per-cell inputs.
fn roll_path(
    decomp: &DiscreteDecomposition,
    x0: DVector<f64>,
    u: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    assert_eq!(u.len(), decomp.cells(), "one input per cell");
    let mut path = Vec::with_capacity(decomp.cells() + 1);
    path.push(x0);
    for (cell, u_cell) in u.iter().enumerate() {
        let iv = decomp.interval_of_cell(cell);
        let x = path.last().unwrap();
        path.push(decomp.phi_step(iv) * x + decomp.gain_step(iv) * u_cell + decomp.drift_step(iv));
    }
    path
}

fn breakdown_of(
    decomp: &DiscreteDecomposition,
    meas: &MeasurementSet,
    system: &ContinuousLTISystem,
    prob: &JointProblem,
    z: &DVector<f64>,
    u: &[DVector<f64>],
    path: &[DVector<f64>],
) -> CostBreakdown {
    let mut input_energy = 0.0;
    for (cell, uc) in u.iter().enumerate() {
        input_energy += uc.norm_squared() / decomp.u_var(decomp.interval_of_cell(cell));
    }
    let mut data_misfit = 0.0;
    for k in 0..meas.len() {
        let resid = meas.values()[k][0] - (system.c() * &path[prob.q[k]])[0];
        data_misfit += resid * resid / prob.vz[k];
    }
    CostBreakdown {
        input_energy,
        data_misfit,
        prior_deviation: z.norm_squared(),
    }
}

/// Minimizes the whitened input energy plus data misfit plus prior deviation
/// subject to the substep dynamics, by the dual normal equations over one
/// row per measurement.
pub fn joint_ls_solve(
    decomp: &DiscreteDecomposition,
    meas: &MeasurementSet,
    prior: Option<MomentGaussian>,
    system: &ContinuousLTISystem,
) -> Result<JointLSSolution> {
    let prob = build_problem(decomp, meas, prior, system)?;
    let theta = if meas.is_empty() {
        DVector::zeros(prob.n + prob.cells * prob.m)
    } else {
        let alpha = prob
            .dual()
            .cholesky()
            .ok_or_else(|| {
                Error::Conditioning("joint solve: dual normal matrix not positive definite".into())
            })?
            .solve(&prob.r);
        prob.g.transpose() * alpha
    };
    let z = DVector::from(theta.rows(0, prob.n).into_owned());
    let mut u = Vec::with_capacity(prob.cells);
    for cell in 0..prob.cells {
        let p = decomp.u_var(decomp.interval_of_cell(cell)).sqrt();
        u.push(theta.rows(prob.n + cell * prob.m, prob.m) * p);
    }
    let x0 = &prob.m_prior + &prob.s * &z;
    let path = roll_path(decomp, x0, &u);
    let breakdown = breakdown_of(decomp, meas, system, &prob, &z, &u, &path);
    Ok(JointLSSolution {
        u_knots: u,
        x_path: path,
        cost: breakdown.input_energy + breakdown.data_misfit + breakdown.prior_deviation,
        breakdown,
    })
}

/// Objective value of a candidate input path, with the initial state chosen
/// optimally for that candidate (partial minimization keeps the certificate
/// `cost_of(solution + εd) ≥ cost_of(solution)` exact).
pub fn cost_of(
    decomp: &DiscreteDecomposition,
    meas: &MeasurementSet,
    candidate: &[DVector<f64>],
    prior: Option<MomentGaussian>,
    system: &ContinuousLTISystem,
) -> Result<f64> {
    if candidate.len() != decomp.cells() {
        return Err(Error::InvalidInput(format!(
            "candidate has {} cells, decomposition has {}",
            candidate.len(),
            decomp.cells()
        )));
    }
    if candidate.iter().any(|u| u.len() != decomp.input_dim()) {
        return Err(Error::InvalidInput(
            "candidate input dimension does not match the system".into(),
        ));
    }
    let prob = build_problem(decomp, meas, prior, system)?;
    let kk = meas.len();

    // Residuals of the candidate path rolled from the prior mean; the
    // response to z is the first block of the whitened rows.
    let path0 = roll_path(decomp, prob.m_prior.clone(), candidate);
    let gz = prob.g.columns(0, prob.n);
    let mut rc = DVector::zeros(kk);
    for k in 0..kk {
        rc[k] = meas.values()[k][0] - (system.c() * &path0[prob.q[k]])[0];
    }
    let z = if kk == 0 {
        DVector::zeros(prob.n)
    } else {
        let mut normal = DMatrix::identity(prob.n, prob.n);
        let mut rhs = DVector::zeros(prob.n);
        for k in 0..kk {
            let row = gz.row(k);
            normal += row.transpose() * row / prob.vz[k];
            rhs += row.transpose() * (rc[k] / prob.vz[k]);
        }
        normal
            .cholesky()
            .ok_or_else(|| {
                Error::Conditioning("cost_of: prior normal matrix not positive definite".into())
            })?
            .solve(&rhs)
    };
    let path = roll_path(decomp, &prob.m_prior + &prob.s * &z, candidate);
    let b = breakdown_of(decomp, meas, system, &prob, &z, candidate, &path);
    Ok(b.input_energy + b.data_misfit + b.prior_deviation)
}

/// Posterior variance of each cell's input under the discrete model
/// (scalar input, scalar output). The prior variance `σ_U²/δ` is reduced by
/// the rank-K data correction; the posterior precision shrinks like `δ` as
/// the cells refine.
pub fn input_posterior_variance(
    decomp: &DiscreteDecomposition,
    meas: &MeasurementSet,
    prior: Option<MomentGaussian>,
    system: &ContinuousLTISystem,
) -> Result<Vec<f64>> {
    if system.input_dim() != 1 {
        return Err(Error::Unsupported(
            "input posterior variance supports scalar inputs only".into(),
        ));
    }
    let prob = build_problem(decomp, meas, prior, system)?;
    let mut out = Vec::with_capacity(prob.cells);
    if meas.is_empty() {
        for cell in 0..prob.cells {
            out.push(decomp.u_var(decomp.interval_of_cell(cell)));
        }
        return Ok(out);
    }
    let chol = prob.dual().cholesky().ok_or_else(|| {
        Error::Conditioning("input variance: dual normal matrix not positive definite".into())
    })?;
    for cell in 0..prob.cells {
        let p = decomp.u_var(decomp.interval_of_cell(cell));
        let g = DVector::from(prob.g.column(prob.n + cell).into_owned());
        let reduced = (1.0 - chol.solve(&g).dot(&g)).max(0.0);
        out.push(p * reduced);
    }
    Ok(out)
}

/// Composite Simpson quadrature of `∫₀ᵗ e^{Aτ} B Bᵀ e^{Aᵀτ} dτ` with an even
/// number of steps; error O(steps⁻⁴).
pub fn quadrature_gramian(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    t: f64,
    steps: usize,
) -> Result<DMatrix<f64>> {
    linalg::ensure_square_finite(a, "quadrature_gramian")?;
    if b.nrows() != a.nrows() || b.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(
            "quadrature_gramian: B must be finite with as many rows as A".into(),
        ));
    }
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!(
            "quadrature_gramian: t must be nonnegative and finite, got {t}"
        )));
    }
    if steps < 2 || !steps.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "quadrature_gramian: steps must be even and at least 2, got {steps}"
        )));
    }
    let n = a.nrows();
    if t == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let d = t / steps as f64;
    let step = matrix_exponential(a, d)?;
    let mut e = b.clone();
    let mut acc = &e * e.transpose();
    for j in 1..=steps {
        e = &step * e;
        let w = if j == steps {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += (&e * e.transpose()) * w;
    }
    Ok(linalg::symmetrize(&(acc * (d / 3.0))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::butterworth;
    use crate::smoother::SmootherState;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn integrator() -> ContinuousLTISystem {
        ContinuousLTISystem::new(
            DMatrix::from_element(1, 1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            1.0,
            DVector::from_element(1, 1.0),
        )
        .unwrap()
    }

    fn scalar_decay(vz: f64) -> ContinuousLTISystem {
        ContinuousLTISystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            1.0,
            DVector::from_element(1, vz),
        )
        .unwrap()
    }

    #[test]
    fn single_step_integrator_decomposition() {
        let d = discrete_decompose(&integrator(), &[0.0, 1.0], 1).unwrap();
        assert_eq!(d.cells(), 1);
        assert_eq!(d.sub_times(), &[0.0, 1.0]);
        assert_relative_eq!(d.phi_step(0)[(0, 0)], 1.0, epsilon = 1e-300);
        assert_relative_eq!(d.gain_step(0)[(0, 0)], 1.0, epsilon = 1e-300);
        assert_eq!(d.drift_step(0)[0], 0.0);
        assert_relative_eq!(d.u_var(0), 1.0, epsilon = 1e-300);
    }

    #[test]
    fn substep_flows_compose_to_the_interval_exponential() {
        let sys = butterworth(3, 0.8, 1.0, 1.0).unwrap();
        let times = [0.0, 0.7, 1.5];
        let d = discrete_decompose(&sys, &times, 17).unwrap();
        let kernel = TransitionKernel::new(sys.a(), sys.b()).unwrap();
        for k in 0..2 {
            let mut prod = DMatrix::identity(3, 3);
            for _ in 0..17 {
                prod = d.phi_step(k) * prod;
            }
            let exact = kernel.phi(times[k + 1] - times[k]).unwrap();
            assert!(
                (&prod - &exact).norm() <= 1e-10 * exact.norm(),
                "interval {k}: {}",
                (&prod - &exact).norm() / exact.norm()
            );
        }
        // Interval edges appear exactly in the substep grid.
        for &t in &times {
            assert!(d.sub_times().contains(&t));
        }
    }

    #[test]
    fn composed_substep_covariance_approaches_the_exact_gramian() {
        let sys = scalar_decay(1.0);
        // N = 2 by hand: σ²(T/2)(Φ BBᵀ Φᵀ + BBᵀ).
        let d2 = discrete_decompose(&sys, &[0.0, 1.0], 2).unwrap();
        let phi = d2.phi_step(0)[(0, 0)];
        let composed2 = {
            let g = d2.gain_step(0)[(0, 0)];
            let per_cell = g * g * d2.u_var(0);
            phi * phi * per_cell + per_cell
        };
        assert_relative_eq!(composed2, 0.5 * (phi * phi + 1.0), epsilon = 1e-12);

        let d = discrete_decompose(&sys, &[0.0, 1.0], 1024).unwrap();
        let phi = d.phi_step(0)[(0, 0)];
        let g = d.gain_step(0)[(0, 0)];
        let mut cov = 0.0;
        let mut scale = 1.0;
        for _ in 0..1024 {
            cov += scale * g * g * d.u_var(0);
            scale *= phi * phi;
        }
        assert!(
            (cov - 0.432_332_358_381_693_6f64).abs() < 1e-3,
            "composed covariance {cov}"
        );
    }

    #[test]
    fn no_measurements_yields_zero_input_and_the_prior_flow() {
        let sys = butterworth(2, 0.6, 1.0, 0.5).unwrap();
        let d = discrete_decompose(&sys, &[0.0, 0.5, 1.25], 8).unwrap();
        let prior = MomentGaussian::new(
            DVector::from_vec(vec![0.4, -0.2]),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let sol = joint_ls_solve(&d, &MeasurementSet::empty(), Some(prior.clone()), &sys).unwrap();
        assert!(sol.u_knots.iter().all(|u| u.norm() == 0.0));
        assert_eq!(sol.cost, 0.0);
        let kernel = TransitionKernel::new(sys.a(), sys.b()).unwrap();
        let mut x = prior.mean().clone();
        for (i, &t) in d.sub_times().iter().enumerate() {
            assert!(
                (&sol.x_path[i] - &x).norm() <= 1e-10 * x.norm().max(1.0),
                "flow mismatch at t = {t}"
            );
            if i + 1 < d.sub_times().len() {
                let dt = d.sub_times()[i + 1] - t;
                x = kernel.phi(dt).unwrap() * x + kernel.drift_integral(dt).unwrap() * sys.h();
            }
        }
    }

    #[test]
    fn integrator_single_sample_matches_message_passing_exactly() {
        let sys = integrator();
        let meas = MeasurementSet::new(vec![1.0], vec![DVector::from_element(1, 2.0)], None)
            .unwrap();
        let prior = MomentGaussian::point(DVector::zeros(1));
        for n_sub in [1usize, 16] {
            let d = discrete_decompose(&sys, &[0.0, 1.0], n_sub).unwrap();
            let sol = joint_ls_solve(&d, &meas, Some(prior.clone()), &sys).unwrap();
            let x_end = sol.x_path.last().unwrap()[0];
            assert_relative_eq!(x_end, 1.0, epsilon = 1e-12);
            // All cells carry the same input estimate: the average is the
            // only identified functional.
            for u in &sol.u_knots {
                assert_relative_eq!(u[0], 1.0, epsilon = 1e-12);
            }
            assert_relative_eq!(sol.cost, 2.0, epsilon = 1e-12);
            assert_relative_eq!(sol.breakdown.input_energy, 1.0, epsilon = 1e-12);
            assert_relative_eq!(sol.breakdown.data_misfit, 1.0, epsilon = 1e-12);
            assert_eq!(sol.breakdown.prior_deviation, 0.0);
        }
    }

    #[test]
    fn solution_approaches_the_smoother_as_cells_refine() {
        let sys = butterworth(4, 1.0, 1.0, 0.5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let k = 9;
        let times: Vec<f64> = (1..=k).map(|i| 0.25 * i as f64).collect();
        let values: Vec<DVector<f64>> = (0..k)
            .map(|_| DVector::from_element(1, rng.random_range(-1.0..1.0)))
            .collect();
        let meas = MeasurementSet::new(times.clone(), values, None).unwrap();
        let sm = SmootherState::run(&sys, &meas, None, 0.0, None).unwrap();

        let mut edges = vec![0.0];
        edges.extend_from_slice(&times);
        let mut errs = Vec::new();
        for n_sub in [64usize, 2048] {
            let d = discrete_decompose(&sys, &edges, n_sub).unwrap();
            let sol = joint_ls_solve(&d, &meas, None, &sys).unwrap();
            let mut du = 0.0;
            let mut ru = 0.0;
            for cell in 0..d.cells() {
                let mid = 0.5 * (d.sub_times()[cell] + d.sub_times()[cell + 1]);
                let u_ref = sm.query(mid).unwrap().u_hat[0];
                du += (sol.u_knots[cell][0] - u_ref).powi(2);
                ru += u_ref * u_ref;
            }
            let mut dx = 0.0;
            let mut rx = 0.0;
            for (i, &t) in d.sub_times().iter().enumerate() {
                let x_ref = sm.query(t).unwrap().x_mean;
                dx += (&sol.x_path[i] - &x_ref).norm_squared();
                rx += x_ref.norm_squared();
            }
            errs.push(((du / ru).sqrt(), (dx / rx).sqrt()));
        }
        let (u64e, x64e) = errs[0];
        let (u2048e, x2048e) = errs[1];
        assert!(u2048e <= 1e-3, "u error at 2048 cells/interval: {u2048e}");
        assert!(x2048e <= 1e-3, "x error at 2048 cells/interval: {x2048e}");
        assert!(u64e > 4.0 * u2048e, "u error should shrink: {u64e} vs {u2048e}");
        assert!(x64e > 4.0 * x2048e, "x error should shrink: {x64e} vs {x2048e}");
    }

    #[test]
    fn cost_of_certifies_the_minimizer() {
        let sys = scalar_decay(0.5);
        let meas = MeasurementSet::new(
            vec![1.0, 2.0],
            vec![DVector::from_element(1, 1.0), DVector::from_element(1, -0.5)],
            None,
        )
        .unwrap();
        let d = discrete_decompose(&sys, &[0.0, 1.0, 2.0], 64).unwrap();
        let sol = joint_ls_solve(&d, &meas, None, &sys).unwrap();
        let c0 = cost_of(&d, &meas, &sol.u_knots, None, &sys).unwrap();
        assert_relative_eq!(c0, sol.cost, max_relative = 1e-9);

        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..20 {
            let perturbed: Vec<DVector<f64>> = sol
                .u_knots
                .iter()
                .map(|u| u + DVector::from_fn(1, |_, _| 1e-3 * rng.random_range(-1.0..1.0f64)))
                .collect();
            let c = cost_of(&d, &meas, &perturbed, None, &sys).unwrap();
            assert!(c >= sol.cost - 1e-12, "perturbed cost {c} < optimum {}", sol.cost);
        }
    }

    #[test]
    fn zero_candidate_without_measurements_costs_nothing() {
        let sys = scalar_decay(1.0);
        let d = discrete_decompose(&sys, &[0.0, 1.0], 4).unwrap();
        let zero = vec![DVector::zeros(1); 4];
        let c = cost_of(&d, &MeasurementSet::empty(), &zero, None, &sys).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn quadrature_matches_closed_forms() {
        let a0 = DMatrix::from_element(1, 1, 0.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let g = quadrature_gramian(&a0, &b, 2.0, 8).unwrap();
        assert_relative_eq!(g[(0, 0)], 2.0, epsilon = 1e-13);

        let a = DMatrix::from_element(1, 1, -1.0);
        let exact = 0.432_332_358_381_693_6;
        let g = quadrature_gramian(&a, &b, 1.0, 128).unwrap();
        assert!((g[(0, 0)] - exact).abs() <= 1e-8);

        let e16 = (quadrature_gramian(&a, &b, 1.0, 16).unwrap()[(0, 0)] - exact).abs();
        let e32 = (quadrature_gramian(&a, &b, 1.0, 32).unwrap()[(0, 0)] - exact).abs();
        assert!(e16 / e32 > 8.0, "Simpson order check: {e16} vs {e32}");
    }

    #[test]
    fn validation_and_guards() {
        let sys = integrator();
        assert!(discrete_decompose(&sys, &[0.0], 4).is_err());
        assert!(discrete_decompose(&sys, &[0.0, 0.0], 4).is_err());
        assert!(discrete_decompose(&sys, &[0.0, 1.0], 0).is_err());
        let no_noise = sys.with_sigma_u(0.0).unwrap();
        assert!(discrete_decompose(&no_noise, &[0.0, 1.0], 4).is_err());

        let d = discrete_decompose(&sys, &[0.0, 1.0], 20_001).unwrap();
        let meas = MeasurementSet::new(vec![1.0], vec![DVector::zeros(1)], None).unwrap();
        let prior = MomentGaussian::point(DVector::zeros(1));
        assert!(matches!(
            joint_ls_solve(&d, &meas, Some(prior.clone()), &sys),
            Err(Error::SizeGuard { .. })
        ));

        let d = discrete_decompose(&sys, &[0.0, 1.0], 4).unwrap();
        let off_grid =
            MeasurementSet::new(vec![0.3], vec![DVector::zeros(1)], None).unwrap();
        assert!(joint_ls_solve(&d, &off_grid, Some(prior.clone()), &sys).is_err());
        let short = vec![DVector::zeros(1); 3];
        assert!(cost_of(&d, &meas, &short, Some(prior.clone()), &sys).is_err());

        let b = DMatrix::from_element(1, 1, 1.0);
        let a = DMatrix::from_element(1, 1, -1.0);
        assert!(quadrature_gramian(&a, &b, 1.0, 3).is_err());
        assert!(quadrature_gramian(&a, &b, 1.0, 0).is_err());
        assert!(quadrature_gramian(&a, &b, -1.0, 4).is_err());
    }

    #[test]
    fn cell_input_precision_halves_when_substeps_double() {
        let sys = scalar_decay(1.0);
        let meas = MeasurementSet::new(
            vec![1.0, 2.0],
            vec![DVector::from_element(1, 0.7), DVector::from_element(1, -0.3)],
            None,
        )
        .unwrap();
        let mut precisions = Vec::new();
        for n_sub in [32usize, 64] {
            let d = discrete_decompose(&sys, &[0.0, 1.0, 2.0], n_sub).unwrap();
            let vars = input_posterior_variance(&d, &meas, None, &sys).unwrap();
            // Cell containing t = 0.5.
            precisions.push(1.0 / vars[n_sub / 2]);
        }
        let ratio = precisions[0] / precisions[1];
        assert!(
            (1.85..=2.15).contains(&ratio),
            "precision ratio across a doubling: {ratio}"
        );
    }

    #[test]
    fn variance_without_data_is_the_prior_variance() {
        let sys = scalar_decay(1.0);
        let d = discrete_decompose(&sys, &[0.0, 1.0], 8).unwrap();
        let prior = MomentGaussian::point(DVector::zeros(1));
        let vars =
            input_posterior_variance(&d, &MeasurementSet::empty(), Some(prior), &sys).unwrap();
        assert!(vars.iter().all(|&v| v == 8.0), "prior variance is σ²/δ = 8");
    }
}
