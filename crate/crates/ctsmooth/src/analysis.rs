//! Stationary statistics of the driven system, observation SNR, and Monte
//! Carlo output-error curves.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, diagonalize};
use crate::model::{ContinuousLTISystem, InitialState, simulate};
use crate::smoother::{MeasurementSet, SmootherState};

/// Stationary observation statistics. `snr_constant` is the
/// cutoff-normalized ratio `E[Y²]/(σ_U²·f_c)`, a property of the filter
/// family rather than of one matrix, so it is present only when the caller
/// declares the cutoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrReport {
    pub ey2: f64,
    pub snr_linear: f64,
    pub snr_db: f64,
    pub snr_constant: Option<f64>,
}

/// One cell of an output-error sweep: normalized estimation error
/// `E[(Ŷ_k − Y_k)²]/E[Y_k²]` (an inverse output SNR) at one sampling-rate
/// ratio and one observation SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCurvePoint {
    pub fs_over_fc: f64,
    pub snr_db: f64,
    pub snr_out_inv: f64,
    pub snr_out_inv_db: f64,
}

/// Stationary covariance of the state: the unique solution of
/// `A V + V Aᵀ + σ_U² B Bᵀ = 0` for Hurwitz `A`. Uses the closed form
/// `−ψ_{k,ℓ}/(λ_k + λ̄_ℓ)` over the eigenbasis when `A` diagonalizes well,
/// and a balanced dense Lyapunov solve otherwise.
pub fn stationary_state_cov(system: &ContinuousLTISystem) -> Result<DMatrix<f64>> {
    let a = system.a();
    if !system.is_hurwitz() {
        return Err(Error::StabilityRequired(
            "stationary state covariance requires a Hurwitz A".into(),
        ));
    }
    let s2 = system.sigma_u() * system.sigma_u();
    if let Some(v) = stationary_closed_form(a, system.b()) {
        return Ok(v * s2);
    }
    lyapunov_balanced(a, &(system.b() * system.b().transpose() * s2))
}

/// Eigenbasis evaluation of the stationary covariance for `σ_U = 1`;
/// `None` when `A` resists diagonalization or the imaginary residue is
/// too large.
fn stationary_closed_form(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = diagonalize(a).ok()?;
    let n = a.nrows();
    let qinv_b = &eig.qinv * b.map(|x| nalgebra::Complex::new(x, 0.0));
    let psi = &qinv_b * qinv_b.adjoint();
    let mut theta = DMatrix::zeros(n, n).map(|_: f64| nalgebra::Complex::new(0.0, 0.0));
    for k in 0..n {
        for l in 0..n {
            let s = eig.lambdas[k] + eig.lambdas[l].conj();
            theta[(k, l)] = -psi[(k, l)] / s;
        }
    }
    let v = &eig.q * theta * eig.q.adjoint();
    let re = v.map(|x| x.re);
    let im_norm = v.map(|x| x.im).norm();
    if !re.iter().all(|x| x.is_finite()) || im_norm > 1e-9 * re.norm().max(1e-300) {
        return None;
    }
    Some(linalg::symmetrize(&re))
}

/// Dense Lyapunov solve of `A V + V Aᵀ = −C` via the Kronecker identity
/// `(I⊗A + A⊗I)·vec(V) = −vec(C)`, with similarity balancing of `A` first
/// so that badly scaled realizations stay solvable.
fn lyapunov_balanced(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let (d, ab) = linalg::balance(a);
    let mut cb = c.clone();
    for i in 0..n {
        for j in 0..n {
            cb[(i, j)] /= d[i] * d[j];
        }
    }
    let eye = DMatrix::identity(n, n);
    let big = eye.kronecker(&ab) + ab.kronecker(&eye);
    let rhs = DVector::from_column_slice((-&cb).as_slice());
    let sol = big.lu().solve(&rhs).ok_or_else(|| {
        Error::Conditioning("Lyapunov solve: I⊗A + A⊗I is numerically singular".into())
    })?;
    let mut v = DMatrix::from_column_slice(n, n, sol.as_slice());
    for i in 0..n {
        for j in 0..n {
            v[(i, j)] *= d[i] * d[j];
        }
    }
    Ok(linalg::symmetrize(&v))
}

/// Stationary mean of the state: `−A⁻¹ h`, the fixed point of the drift.
/// Zero offset short-circuits to zero without touching `A`.
pub fn stationary_mean(system: &ContinuousLTISystem) -> Result<DVector<f64>> {
    let n = system.state_dim();
    if system.h().iter().all(|&x| x == 0.0) {
        return Ok(DVector::zeros(n));
    }
    if !system.is_hurwitz() {
        return Err(Error::StabilityRequired(
            "stationary mean requires a Hurwitz A".into(),
        ));
    }
    system
        .a()
        .clone()
        .lu()
        .solve(&(-system.h()))
        .ok_or_else(|| Error::Conditioning("stationary mean: A is numerically singular".into()))
}

/// Stationary SNR of the sampled observations: `E[Y²]/σ_Z²`, independent of
/// the sampling instants. Scalar outputs only.
pub fn snr(system: &ContinuousLTISystem, fc_hz: Option<f64>) -> Result<SnrReport> {
    if system.output_dim() != 1 {
        return Err(Error::Unsupported(
            "SNR is defined for scalar outputs only".into(),
        ));
    }
    let vz = system.vz()[0];
    if !(vz > 0.0) {
        return Err(Error::InvalidInput(
            "SNR requires positive observation noise variance".into(),
        ));
    }
    if let Some(fc) = fc_hz
        && (!(fc > 0.0) || !fc.is_finite())
    {
        return Err(Error::InvalidInput(format!(
            "cutoff frequency must be positive and finite, got {fc}"
        )));
    }
    let v = stationary_state_cov(system)?;
    let ey2 = (system.c() * v * system.c().transpose())[(0, 0)];
    let snr_linear = ey2 / vz;
    let s2 = system.sigma_u() * system.sigma_u();
    Ok(SnrReport {
        ey2,
        snr_linear,
        snr_db: 10.0 * snr_linear.log10(),
        snr_constant: fc_hz.map(|fc| ey2 / (s2 * fc)),
    })
}

/// Rescales the process-noise level so the system's stationary SNR becomes
/// `assumed_snr_db` while the observation noise stays fixed. Models an
/// estimator that assumes a wrong signal-to-noise ratio.
pub fn apply_assumed_snr(
    system: &ContinuousLTISystem,
    assumed_snr_db: f64,
) -> Result<ContinuousLTISystem> {
    if !assumed_snr_db.is_finite() {
        return Err(Error::InvalidInput(format!(
            "assumed SNR must be finite, got {assumed_snr_db} dB"
        )));
    }
    let true_snr = snr(system, None)?.snr_linear;
    let gamma = (10f64.powf(assumed_snr_db / 10.0) / true_snr).sqrt();
    system.with_sigma_u(system.sigma_u() * gamma)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent per-trial RNG seed. Deterministic in (seed, cell, trial), so
/// concurrent execution cannot change results.
pub(crate) fn derive_seed(seed: u64, cell: u64, trial: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ cell) ^ trial)
}

/// Monte Carlo sweep of the normalized output estimation error over a grid
/// of sampling-rate ratios and observation SNRs. Each cell simulates
/// `trials` stationary sample paths of `horizon_samples` samples at
/// `fs = ratio·fc_hz`, smooths them with the matching model, and averages
/// `(Ŷ_k − Y_k)²/E[Y²]` over the interior samples; the first and last 10%
/// are discarded as boundary-transient guard. Deterministic given `seed`.
pub fn output_error_curve(
    system: &ContinuousLTISystem,
    fc_hz: f64,
    fs_over_fc: &[f64],
    snr_db: &[f64],
    trials: usize,
    horizon_samples: usize,
    seed: u64,
) -> Result<Vec<ErrorCurvePoint>> {
    if trials < 1 {
        return Err(Error::InvalidInput("trials must be at least 1".into()));
    }
    if !(fc_hz > 0.0) || !fc_hz.is_finite() {
        return Err(Error::InvalidInput(format!(
            "cutoff frequency must be positive and finite, got {fc_hz}"
        )));
    }
    if fs_over_fc.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::InvalidInput(
            "sampling-rate ratios must be positive and finite".into(),
        ));
    }
    if snr_db.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidInput("SNR values must be finite".into()));
    }
    let lo = (0.1 * horizon_samples as f64).ceil() as usize;
    let hi = horizon_samples.saturating_sub(lo);
    if hi <= lo {
        return Err(Error::InvalidInput(format!(
            "horizon of {horizon_samples} samples leaves no interior after the 10% edge guard"
        )));
    }
    let ey2 = snr(system, None)?.ey2;

    let mut out = Vec::with_capacity(fs_over_fc.len() * snr_db.len());
    let mut cell_index = 0u64;
    for &ratio in fs_over_fc {
        for &snr_target in snr_db {
            let fs = ratio * fc_hz;
            let dt = 1.0 / fs;
            let schedule: Vec<f64> = (0..horizon_samples).map(|k| k as f64 * dt).collect();
            let vz = ey2 / 10f64.powf(snr_target / 10.0);
            let sys = system.with_vz(DVector::from_element(1, vz))?;
            let cell = cell_index;
            let per_trial: Vec<Result<f64>> = (0..trials)
                .into_par_iter()
                .map(|trial| {
                    let sim = simulate(
                        &sys,
                        &schedule,
                        &InitialState::Stationary,
                        derive_seed(seed, cell, trial as u64),
                        None,
                    )?;
                    let meas = MeasurementSet::new(
                        schedule.clone(),
                        sim.noisy_samples.clone(),
                        None,
                    )?;
                    let sm = SmootherState::run(&sys, &meas, None, -dt, None)?;
                    let recs = sm.query_grid(&schedule)?;
                    let mut sum = 0.0;
                    for (rec, clean) in recs[lo..hi].iter().zip(&sim.clean_samples[lo..hi]) {
                        let d = rec.y_hat[0] - clean[0];
                        sum += d * d;
                    }
                    Ok(sum)
                })
                .collect();
            let mut total = 0.0;
            for r in per_trial {
                total += r?;
            }
            let mse = total / (trials * (hi - lo)) as f64;
            let snr_out_inv = mse / ey2;
            out.push(ErrorCurvePoint {
                fs_over_fc: ratio,
                snr_db: snr_target,
                snr_out_inv,
                snr_out_inv_db: 10.0 * snr_out_inv.log10(),
            });
            cell_index += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::butterworth;
    use crate::testutil::{random_hurwitz, random_matrix};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn scalar(a: f64, sigma_u: f64, vz: f64) -> ContinuousLTISystem {
        ContinuousLTISystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            sigma_u,
            DVector::from_element(1, vz),
        )
        .unwrap()
    }

    #[test]
    fn scalar_stationary_covariance() {
        let v = stationary_state_cov(&scalar(-1.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(v[(0, 0)], 0.5, epsilon = 1e-12);
        let v = stationary_state_cov(&scalar(-1.0, 2.0, 1.0)).unwrap();
        assert_relative_eq!(v[(0, 0)], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn lyapunov_residual_vanishes_on_random_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..10 {
            let a = random_hurwitz(&mut rng, 5);
            let b = random_matrix(&mut rng, 5, 2);
            let sys = ContinuousLTISystem::new(
                a.clone(),
                b.clone(),
                random_matrix(&mut rng, 1, 5),
                DVector::zeros(5),
                0.8,
                DVector::from_element(1, 1.0),
            )
            .unwrap();
            let v = stationary_state_cov(&sys).unwrap();
            let resid = &a * &v + &v * a.transpose() + &b * b.transpose() * 0.64;
            assert!(
                resid.norm() <= 1e-8 * v.norm().max(1.0),
                "residual {}",
                resid.norm()
            );
        }
    }

    #[test]
    fn lyapunov_fallback_handles_defective_dynamics() {
        // Jordan block: not diagonalizable, so only the dense solve applies.
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, -1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let sys = ContinuousLTISystem::new(
            a.clone(),
            b.clone(),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(2),
            1.0,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let v = stationary_state_cov(&sys).unwrap();
        let resid = &a * &v + &v * a.transpose() + &b * b.transpose();
        assert!(resid.norm() <= 1e-10 * v.norm());
    }

    #[test]
    fn balanced_fallback_agrees_with_the_closed_form() {
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        for _ in 0..10 {
            let a = random_hurwitz(&mut rng, 4);
            let b = random_matrix(&mut rng, 4, 1);
            let closed = stationary_closed_form(&a, &b).unwrap();
            let dense = lyapunov_balanced(&a, &(&b * b.transpose())).unwrap();
            assert!((&closed - &dense).norm() <= 1e-9 * dense.norm());
        }
    }

    #[test]
    fn butterworth_snr_constants() {
        let bw4 = butterworth(4, 1.0, 1.0, 1.0).unwrap();
        let c4 = snr(&bw4, Some(1.0)).unwrap().snr_constant.unwrap();
        assert!((c4 - 2.052).abs() <= 0.005, "order 4 constant: {c4}");

        // A large cutoff produces a badly scaled companion matrix; the
        // eigenbasis route fails its conditioning gate and the balanced
        // Lyapunov solve must deliver the same family constant.
        let bw6 = butterworth(6, 100.0, 1.0, 1.0).unwrap();
        let c6 = snr(&bw6, Some(100.0)).unwrap().snr_constant.unwrap();
        assert!((c6 - 2.023).abs() <= 0.005, "order 6 constant: {c6}");
    }

    #[test]
    fn snr_report_invariants() {
        let sys = scalar(-1.0, 1.0, 1.0);
        let rep = snr(&sys, None).unwrap();
        assert_relative_eq!(rep.ey2, 0.5, epsilon = 1e-12);
        assert_relative_eq!(rep.snr_linear, 0.5, epsilon = 1e-12);
        assert_relative_eq!(rep.snr_db, 10.0 * 0.5f64.log10(), epsilon = 1e-12);
        assert!(rep.snr_constant.is_none());
        assert!(snr(&sys, Some(2.0)).unwrap().snr_constant.is_some());

        let quieter = scalar(-1.0, 1.0, 4.0);
        let rep = snr(&quieter, None).unwrap();
        assert_relative_eq!(rep.snr_linear, 0.125, epsilon = 1e-12);
    }

    #[test]
    fn stability_and_dimension_errors() {
        let unstable = scalar(1.0, 1.0, 1.0);
        assert!(matches!(
            stationary_state_cov(&unstable),
            Err(Error::StabilityRequired(_))
        ));
        assert!(matches!(snr(&unstable, None), Err(Error::StabilityRequired(_))));

        let two_outputs = ContinuousLTISystem::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DVector::zeros(1),
            1.0,
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        assert!(matches!(snr(&two_outputs, None), Err(Error::Unsupported(_))));

        assert!(snr(&scalar(-1.0, 1.0, 0.0), None).is_err());
    }

    #[test]
    fn forward_gramian_converges_to_the_stationary_covariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..5 {
            let a = random_hurwitz(&mut rng, 4);
            let b = random_matrix(&mut rng, 4, 1);
            let sys = ContinuousLTISystem::new(
                a.clone(),
                b.clone(),
                random_matrix(&mut rng, 1, 4),
                DVector::zeros(4),
                1.0,
                DVector::from_element(1, 1.0),
            )
            .unwrap();
            let v_inf = stationary_state_cov(&sys).unwrap();
            let slowest = a
                .complex_eigenvalues()
                .iter()
                .map(|l| l.re.abs())
                .fold(f64::INFINITY, f64::min);
            let t = 20.0 / slowest;
            let v_t = linalg::forward_gramian(&a, &b, t).unwrap().value;
            assert!(
                (&v_t - &v_inf).norm() <= 1e-6 * v_inf.norm(),
                "gap {}",
                (&v_t - &v_inf).norm() / v_inf.norm()
            );
            // Monotone in the positive semidefinite order.
            let v_half = linalg::forward_gramian(&a, &b, t / 2.0).unwrap().value;
            let gap = &v_t - &v_half;
            let min_eig = gap
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            assert!(min_eig >= -1e-10 * v_inf.norm());
        }
    }

    #[test]
    fn stationary_mean_examples() {
        let sys = ContinuousLTISystem::new(
            DMatrix::from_element(1, 1, -2.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 4.0),
            1.0,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert_relative_eq!(stationary_mean(&sys).unwrap()[0], 2.0, epsilon = 1e-12);
        assert_eq!(stationary_mean(&scalar(-1.0, 1.0, 1.0)).unwrap()[0], 0.0);
    }

    #[test]
    fn assumed_snr_round_trip() {
        let sys = butterworth(3, 1.0, 0.8, 0.6).unwrap();
        let adjusted = apply_assumed_snr(&sys, 7.0).unwrap();
        let rep = snr(&adjusted, None).unwrap();
        assert_relative_eq!(rep.snr_db, 7.0, epsilon = 1e-9);
        // Observation noise untouched; only the process noise moved.
        assert_eq!(adjusted.vz()[0], sys.vz()[0]);
        assert!(adjusted.sigma_u() != sys.sigma_u());
    }

    #[test]
    fn error_curve_is_deterministic_and_saturates_at_low_snr() {
        let sys = butterworth(2, 1.0, 1.0, 1.0).unwrap();
        let a = output_error_curve(&sys, 1.0, &[4.0], &[-40.0], 3, 40, 77).unwrap();
        let b = output_error_curve(&sys, 1.0, &[4.0], &[-40.0], 3, 40, 77).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].snr_out_inv.to_bits(), b[0].snr_out_inv.to_bits());
        assert!(
            (a[0].snr_out_inv - 1.0).abs() <= 0.1,
            "uninformative data must leave the full signal power: {}",
            a[0].snr_out_inv
        );

        assert!(output_error_curve(&sys, 1.0, &[4.0], &[0.0], 0, 40, 1).is_err());
        assert!(output_error_curve(&sys, 1.0, &[4.0], &[0.0], 1, 2, 1).is_err());
    }
}
