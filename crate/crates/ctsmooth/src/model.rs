//! The continuous-time system under estimation, Butterworth instances,
//! frequency response, and exact sample-path simulation.

use std::collections::HashMap;
use std::collections::hash_map::Entry;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::analysis;
use crate::error::{Error, Result};
use crate::linalg::{self, TransitionKernel};

type C64 = Complex<f64>;

/// The system `dX(t) = (A X(t) + h) dt + B dU(t)`, observed as
/// `y_k = C X(t_k) + z_k` with `z_k ~ N(0, Vz)` and `U` white Gaussian noise
/// of intensity `sigma_u` per input channel.
///
/// Constructors accept `sigma_u = 0` and zero `Vz` entries so that noise-free
/// truths can be simulated; estimation entry points reject them.
#[derive(Debug, Clone)]
pub struct ContinuousLTISystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    h: DVector<f64>,
    sigma_u: f64,
    /// Diagonal of the observation-noise covariance, one entry per output.
    vz: DVector<f64>,
}

impl ContinuousLTISystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        h: DVector<f64>,
        sigma_u: f64,
        vz: DVector<f64>,
    ) -> Result<Self> {
        linalg::ensure_square_finite(&a, "ContinuousLTISystem")?;
        let n = a.nrows();
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::InvalidInput(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::InvalidInput(format!(
                "C must be vx{n} with v >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if h.len() != n {
            return Err(Error::InvalidInput(format!(
                "h must have length {n}, got {}",
                h.len()
            )));
        }
        if vz.len() != c.nrows() {
            return Err(Error::InvalidInput(format!(
                "Vz diagonal must have length {}, got {}",
                c.nrows(),
                vz.len()
            )));
        }
        let finite = b.iter().all(|x| x.is_finite())
            && c.iter().all(|x| x.is_finite())
            && h.iter().all(|x| x.is_finite())
            && vz.iter().all(|x| x.is_finite())
            && sigma_u.is_finite();
        if !finite {
            return Err(Error::InvalidInput(
                "system matrices and noise parameters must be finite".into(),
            ));
        }
        if sigma_u < 0.0 {
            return Err(Error::InvalidInput(format!(
                "sigma_u must be nonnegative, got {sigma_u}"
            )));
        }
        if vz.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidInput(
                "Vz diagonal entries must be nonnegative".into(),
            ));
        }
        Ok(ContinuousLTISystem {
            a,
            b,
            c,
            h,
            sigma_u,
            vz,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn sigma_u(&self) -> f64 {
        self.sigma_u
    }

    /// Diagonal of the observation-noise covariance.
    pub fn vz(&self) -> &DVector<f64> {
        &self.vz
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Same system with a different input-noise intensity.
    pub fn with_sigma_u(&self, sigma_u: f64) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.h.clone(),
            sigma_u,
            self.vz.clone(),
        )
    }

    /// Same system with a different observation-noise diagonal.
    pub fn with_vz(&self, vz: DVector<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.h.clone(),
            self.sigma_u,
            vz,
        )
    }

    /// True when every eigenvalue of `A` has strictly negative real part.
    pub fn is_hurwitz(&self) -> bool {
        linalg::matrix_is_hurwitz(&self.a)
    }
}

/// Piecewise-constant dynamics: segment `k` governs `[t_start_k, t_start_{k+1})`.
/// All segments share the state, input, and output dimensions.
#[derive(Debug, Clone)]
pub struct SegmentedSystem {
    segments: Vec<(f64, Arc<ContinuousLTISystem>)>,
}

impl SegmentedSystem {
    pub fn new(segments: Vec<(f64, ContinuousLTISystem)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidInput(
                "SegmentedSystem requires at least one segment".into(),
            ));
        }
        for w in segments.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::InvalidInput(format!(
                    "segment start times must be strictly increasing, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        let (n, m, v) = {
            let s = &segments[0].1;
            (s.state_dim(), s.input_dim(), s.output_dim())
        };
        for (t, s) in &segments {
            if s.state_dim() != n || s.input_dim() != m || s.output_dim() != v {
                return Err(Error::InvalidInput(format!(
                    "segment at t = {t} has dimensions ({}, {}, {}), expected ({n}, {m}, {v})",
                    s.state_dim(),
                    s.input_dim(),
                    s.output_dim()
                )));
            }
        }
        Ok(SegmentedSystem {
            segments: segments
                .into_iter()
                .map(|(t, s)| (t, Arc::new(s)))
                .collect(),
        })
    }

    /// One segment valid for all time.
    pub fn single(system: ContinuousLTISystem) -> Self {
        SegmentedSystem {
            segments: vec![(f64::NEG_INFINITY, Arc::new(system))],
        }
    }

    pub fn segments(&self) -> &[(f64, Arc<ContinuousLTISystem>)] {
        &self.segments
    }

    pub fn state_dim(&self) -> usize {
        self.segments[0].1.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.segments[0].1.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.segments[0].1.output_dim()
    }

    /// Index of the segment governing `[t, ...)`; boundaries belong to the
    /// segment that starts there.
    pub fn segment_index(&self, t: f64) -> Result<usize> {
        if t < self.segments[0].0 {
            return Err(Error::InvalidInput(format!(
                "time {t} precedes the first segment start {}",
                self.segments[0].0
            )));
        }
        Ok(self.segments.partition_point(|(s, _)| *s <= t) - 1)
    }

    pub fn system_at(&self, t: f64) -> Result<&Arc<ContinuousLTISystem>> {
        Ok(&self.segments[self.segment_index(t)?].1)
    }

    /// Boundary times strictly inside `(a, b)`.
    pub(crate) fn boundaries_within(&self, a: f64, b: f64) -> Vec<f64> {
        self.segments
            .iter()
            .map(|(t, _)| *t)
            .filter(|&t| t > a && t < b)
            .collect()
    }
}

/// Anything usable as the dynamics argument of [`simulate`] and the smoother.
pub trait AsSegments {
    fn to_segments(&self) -> SegmentedSystem;
}

impl AsSegments for ContinuousLTISystem {
    fn to_segments(&self) -> SegmentedSystem {
        SegmentedSystem::single(self.clone())
    }
}

impl AsSegments for SegmentedSystem {
    fn to_segments(&self) -> SegmentedSystem {
        self.clone()
    }
}

/// Order-`n` Butterworth lowpass with cutoff `fc_hz`, as a companion-form
/// state-space realization with unit DC gain: `b = (0, .., 0, w^n)`,
/// `c = (1, 0, .., 0)` where `w = 2*pi*fc_hz`.
pub fn butterworth(
    order: usize,
    fc_hz: f64,
    sigma_u: f64,
    sigma_z: f64,
) -> Result<ContinuousLTISystem> {
    if order == 0 {
        return Err(Error::InvalidInput("Butterworth order must be >= 1".into()));
    }
    if !(fc_hz > 0.0) || !fc_hz.is_finite() {
        return Err(Error::InvalidInput(format!(
            "cutoff frequency must be positive, got {fc_hz}"
        )));
    }
    let n = order;
    let w = 2.0 * std::f64::consts::PI * fc_hz;
    // Monic characteristic polynomial, ascending coefficients. Conjugate pole
    // pairs w*exp(i*pi*(2k+n-1)/(2n)) contribute s^2 - 2*Re(p)*s + w^2.
    let mut poly = vec![1.0];
    for k in 1..=(n / 2) {
        let theta = std::f64::consts::PI * (2 * k + n - 1) as f64 / (2 * n) as f64;
        poly = poly_mul(&poly, &[w * w, -2.0 * w * theta.cos(), 1.0]);
    }
    if n % 2 == 1 {
        poly = poly_mul(&poly, &[w, 1.0]);
    }
    debug_assert_eq!(poly.len(), n + 1);

    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n - 1 {
        a[(i, i + 1)] = 1.0;
    }
    for j in 0..n {
        a[(n - 1, j)] = -poly[j];
    }
    let mut b = DMatrix::<f64>::zeros(n, 1);
    b[(n - 1, 0)] = poly[0];
    let mut c = DMatrix::<f64>::zeros(1, n);
    c[(0, 0)] = 1.0;
    ContinuousLTISystem::new(
        a,
        b,
        c,
        DVector::zeros(n),
        sigma_u,
        DVector::from_element(1, sigma_z * sigma_z),
    )
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `|C (j*2*pi*f I - A)^{-1} B_0|` for a single-output system; `B_0` is the
/// first input column.
pub fn transfer_magnitude(system: &ContinuousLTISystem, f_hz: f64) -> Result<f64> {
    if system.output_dim() != 1 {
        return Err(Error::Unsupported(
            "transfer_magnitude requires a single-output system".into(),
        ));
    }
    if !f_hz.is_finite() {
        return Err(Error::InvalidInput(format!(
            "frequency must be finite, got {f_hz}"
        )));
    }
    let n = system.state_dim();
    let s = C64::new(0.0, 2.0 * std::f64::consts::PI * f_hz);
    let mut m = system.a().map(|x| C64::new(-x, 0.0));
    for i in 0..n {
        m[(i, i)] += s;
    }
    let rhs = DVector::from_fn(n, |i, _| C64::new(system.b()[(i, 0)], 0.0));
    let x = m
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Conditioning(format!("frequency {f_hz} Hz lies at a pole")))?;
    let mut y = C64::new(0.0, 0.0);
    for j in 0..n {
        y += C64::new(system.c()[(0, j)], 0.0) * x[j];
    }
    Ok(y.norm())
}

/// Initial state at the first schedule time.
#[derive(Debug, Clone)]
pub enum InitialState {
    Fixed(DVector<f64>),
    /// Draw from the stationary law of the segment active at the start;
    /// requires that segment to be Hurwitz.
    Stationary,
}

/// Fine-grid truth recorded by [`simulate`]: states and clean outputs at grid
/// times, and per-cell input averages. `input_avgs[j]` is the average of
/// `U(t)` over `[times[j], times[j+1])`; the final entry is zero padding so
/// all vectors have equal length.
#[derive(Debug, Clone)]
pub struct DenseTruth {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub outputs: Vec<DVector<f64>>,
    pub input_avgs: Vec<DVector<f64>>,
}

/// One simulated realization sampled on the measurement schedule.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub times: Vec<f64>,
    pub knot_states: Vec<DVector<f64>>,
    pub clean_samples: Vec<DVector<f64>>,
    pub noisy_samples: Vec<DVector<f64>>,
    pub dense_truth: Option<DenseTruth>,
}

struct PathPlan {
    edges: Vec<f64>,
    cell_seg: Vec<usize>,
    sched_edges: Vec<usize>,
}

fn build_plan(
    segs: &SegmentedSystem,
    schedule: &[f64],
    dense_step: Option<f64>,
) -> Result<PathPlan> {
    if schedule.is_empty() {
        return Err(Error::InvalidInput("schedule must be nonempty".into()));
    }
    if schedule.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("schedule times must be finite".into()));
    }
    for w in schedule.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidInput(format!(
                "schedule must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if let Some(s) = dense_step
        && (!(s > 0.0) || !s.is_finite())
    {
        return Err(Error::InvalidInput(format!(
            "dense_step must be positive, got {s}"
        )));
    }
    let start = schedule[0];
    let end = *schedule.last().unwrap();
    segs.segment_index(start)?;

    // Merge schedule times and segment boundaries into the knot sequence,
    // treating near-coincident times (1e-12 relative) as one knot and keeping
    // the schedule value.
    let bounds = segs.boundaries_within(start, end);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let mut knots: Vec<(f64, Option<usize>)> = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < schedule.len() || j < bounds.len() {
        if j >= bounds.len() || (i < schedule.len() && schedule[i] <= bounds[j]) {
            knots.push((schedule[i], Some(i)));
            if j < bounds.len() && close(schedule[i], bounds[j]) {
                j += 1;
            }
            i += 1;
        } else {
            if !close(bounds[j], schedule.get(i).copied().unwrap_or(f64::INFINITY)) {
                knots.push((bounds[j], None));
            }
            j += 1;
        }
    }

    let mut edges = vec![start];
    let mut cell_seg = Vec::new();
    let mut sched_edges = vec![0usize; schedule.len()];
    if let Some(k0) = knots[0].1 {
        sched_edges[k0] = 0;
    }
    for w in knots.windows(2) {
        let (ta, _) = w[0];
        let (tb, sched_idx) = w[1];
        let len = tb - ta;
        let cells = match dense_step {
            Some(s) => ((len / s - 1e-9).ceil() as usize).max(1),
            None => 1,
        };
        let seg = segs.segment_index(ta)?;
        for c in 1..=cells {
            let t = if c == cells {
                tb
            } else {
                ta + len * c as f64 / cells as f64
            };
            edges.push(t);
            cell_seg.push(seg);
        }
        if let Some(k) = sched_idx {
            sched_edges[k] = edges.len() - 1;
        }
    }
    Ok(PathPlan {
        edges,
        cell_seg,
        sched_edges,
    })
}

struct StepSampler {
    phi: DMatrix<f64>,
    drift: DVector<f64>,
    /// Factor `L` with `L L^T = Cov[(w, u_avg)]` for one cell: `w` is the
    /// state noise increment, `u_avg` the input average over the cell.
    lfac: DMatrix<f64>,
}

fn build_sampler(
    kernel: &TransitionKernel,
    sys: &ContinuousLTISystem,
    delta: f64,
) -> Result<StepSampler> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let phi = kernel.phi(delta)?;
    let dint = kernel.drift_integral(delta)?;
    let drift = &dint * sys.h();
    let g = kernel.forward(delta)?.value;
    let db = &dint * sys.b();
    let s2 = sys.sigma_u() * sys.sigma_u();
    let mut joint = DMatrix::<f64>::zeros(n + m, n + m);
    joint.view_mut((0, 0), (n, n)).copy_from(&g);
    joint.view_mut((0, n), (n, m)).copy_from(&(&db / delta));
    joint
        .view_mut((n, 0), (m, n))
        .copy_from(&(db.transpose() / delta));
    joint
        .view_mut((n, n), (m, m))
        .copy_from(&(DMatrix::identity(m, m) / delta));
    joint *= s2;
    Ok(StepSampler {
        phi,
        drift,
        lfac: linalg::psd_factor(&joint),
    })
}

/// Simulates one realization with the exact discretization: between grid
/// points the state advances as `x' = e^{A d} x + drift + w` with
/// `w ~ N(0, sigma_u^2 * Gramian(d))`, jointly drawn with the cell's input
/// average so recorded truths are mutually consistent. The path starts at
/// `schedule[0]` with `x0`; `dense_step` bounds the truth-grid cell width.
/// Deterministic given `seed`.
pub fn simulate<S: AsSegments>(
    system: &S,
    schedule: &[f64],
    x0: &InitialState,
    seed: u64,
    dense_step: Option<f64>,
) -> Result<SimulationOutput> {
    let segs = system.to_segments();
    let plan = build_plan(&segs, schedule, dense_step)?;
    let n = segs.state_dim();
    let m = segs.input_dim();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let start_sys = segs.system_at(schedule[0])?.clone();
    let mut x = match x0 {
        InitialState::Fixed(v) => {
            if v.len() != n {
                return Err(Error::InvalidInput(format!(
                    "initial state must have length {n}, got {}",
                    v.len()
                )));
            }
            v.clone()
        }
        InitialState::Stationary => {
            let cov = analysis::stationary_state_cov(&start_sys)?;
            let mean = analysis::stationary_mean(&start_sys)?;
            let z = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
            mean + linalg::psd_factor(&cov) * z
        }
    };

    let mut kernels: HashMap<usize, TransitionKernel> = HashMap::new();
    let mut samplers: HashMap<(usize, u64), StepSampler> = HashMap::new();
    let mut states = Vec::with_capacity(plan.edges.len());
    states.push(x.clone());
    let mut u_avgs = Vec::new();
    for (i, seg) in plan.cell_seg.iter().enumerate() {
        let delta = plan.edges[i + 1] - plan.edges[i];
        let sys = &segs.segments()[*seg].1;
        if let Entry::Vacant(e) = kernels.entry(*seg) {
            e.insert(TransitionKernel::new(sys.a(), sys.b())?);
        }
        let key = (*seg, delta.to_bits());
        if let Entry::Vacant(e) = samplers.entry(key) {
            e.insert(build_sampler(&kernels[seg], sys, delta)?);
        }
        let sampler = &samplers[&key];
        let z = DVector::from_fn(n + m, |_, _| rng.sample(StandardNormal));
        let v = &sampler.lfac * z;
        x = &sampler.phi * &x + &sampler.drift + v.rows(0, n);
        states.push(x.clone());
        if dense_step.is_some() {
            u_avgs.push(v.rows(n, m).into());
        }
    }

    let mut knot_states = Vec::with_capacity(schedule.len());
    let mut clean = Vec::with_capacity(schedule.len());
    let mut noisy = Vec::with_capacity(schedule.len());
    for (k, &t) in schedule.iter().enumerate() {
        let sys = segs.system_at(t)?;
        let xs = states[plan.sched_edges[k]].clone();
        let y = sys.c() * &xs;
        let z = DVector::from_fn(sys.output_dim(), |i, _| {
            let g: f64 = rng.sample(StandardNormal);
            sys.vz()[i].sqrt() * g
        });
        noisy.push(&y + z);
        clean.push(y);
        knot_states.push(xs);
    }

    let dense_truth = if dense_step.is_some() {
        let mut outputs = Vec::with_capacity(plan.edges.len());
        for (j, t) in plan.edges.iter().enumerate() {
            outputs.push(segs.system_at(*t)? .c() * &states[j]);
        }
        u_avgs.push(DVector::zeros(m));
        Some(DenseTruth {
            times: plan.edges,
            states,
            outputs,
            input_avgs: u_avgs,
        })
    } else {
        None
    };

    Ok(SimulationOutput {
        times: schedule.to_vec(),
        knot_states,
        clean_samples: clean,
        noisy_samples: noisy,
        dense_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix_exponential;
    use approx::assert_relative_eq;

    fn scalar_system(a: f64, sigma_u: f64, sigma_z: f64) -> ContinuousLTISystem {
        ContinuousLTISystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            sigma_u,
            DVector::from_element(1, sigma_z * sigma_z),
        )
        .unwrap()
    }

    #[test]
    fn butterworth_first_order_unit_cutoff() {
        let sys = butterworth(1, 1.0 / (2.0 * std::f64::consts::PI), 1.0, 1.0).unwrap();
        assert_relative_eq!(sys.a()[(0, 0)], -1.0, epsilon = 1e-14);
        assert_relative_eq!(sys.b()[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(sys.c()[(0, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn butterworth_half_power_at_cutoff() {
        for order in [1, 2, 4, 6] {
            let sys = butterworth(order, 1.0, 1.0, 1.0).unwrap();
            let mag = transfer_magnitude(&sys, 1.0).unwrap();
            assert!(
                (mag - 0.5f64.sqrt()).abs() < 1e-9,
                "order {order}: |H(fc)| = {mag}"
            );
        }
    }

    #[test]
    fn butterworth_magnitude_identity() {
        for order in [4usize, 6] {
            let sys = butterworth(order, 1.0, 1.0, 1.0).unwrap();
            for f in [0.1, 0.5, 1.0, 2.0, 10.0] {
                let mag = transfer_magnitude(&sys, f).unwrap();
                let expected = (1.0 + f.powi(2 * order as i32)).powf(-0.5);
                assert!(
                    (mag - expected).abs() < 1e-8 * expected.max(1e-6),
                    "order {order}, f {f}: {mag} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn butterworth_is_hurwitz_up_to_12() {
        for order in 1..=12 {
            for fc in [0.1, 1.0, 100.0] {
                assert!(butterworth(order, fc, 1.0, 1.0).unwrap().is_hurwitz());
            }
        }
    }

    #[test]
    fn butterworth_unit_dc_gain() {
        for order in [1, 3, 5, 8] {
            let sys = butterworth(order, 2.5, 1.0, 1.0).unwrap();
            assert_relative_eq!(transfer_magnitude(&sys, 0.0).unwrap(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn butterworth_rejects_bad_parameters() {
        assert!(butterworth(0, 1.0, 1.0, 1.0).is_err());
        assert!(butterworth(4, 0.0, 1.0, 1.0).is_err());
        assert!(butterworth(4, -2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn system_validation() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let b = DMatrix::from_element(1, 1, 1.0);
        let c = DMatrix::from_element(1, 1, 1.0);
        // sigma_u = 0 and Vz = 0 are allowed at construction.
        assert!(
            ContinuousLTISystem::new(
                a.clone(),
                b.clone(),
                c.clone(),
                DVector::zeros(1),
                0.0,
                DVector::zeros(1)
            )
            .is_ok()
        );
        assert!(
            ContinuousLTISystem::new(
                a.clone(),
                b.clone(),
                c.clone(),
                DVector::zeros(1),
                -1.0,
                DVector::zeros(1)
            )
            .is_err()
        );
        assert!(
            ContinuousLTISystem::new(
                a.clone(),
                b.clone(),
                c.clone(),
                DVector::zeros(2),
                1.0,
                DVector::zeros(1)
            )
            .is_err()
        );
        assert!(
            ContinuousLTISystem::new(a, b, DMatrix::zeros(1, 3), DVector::zeros(1), 1.0, DVector::zeros(1)).is_err()
        );
    }

    #[test]
    fn segmented_requires_increasing_starts() {
        let s = scalar_system(-1.0, 1.0, 1.0);
        assert!(SegmentedSystem::new(vec![(0.0, s.clone()), (0.0, s.clone())]).is_err());
        let segs = SegmentedSystem::new(vec![(0.0, s.clone()), (2.0, s)]).unwrap();
        assert_eq!(segs.segment_index(0.5).unwrap(), 0);
        assert_eq!(segs.segment_index(2.0).unwrap(), 1);
        assert!(segs.segment_index(-0.5).is_err());
    }

    #[test]
    fn noise_free_simulation_is_the_matrix_flow() {
        let sys = ContinuousLTISystem::new(
            DMatrix::from_row_slice(2, 2, &[-0.3, 1.0, -1.0, -0.3]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DVector::zeros(2),
            0.0,
            DVector::zeros(1),
        )
        .unwrap();
        let x0 = DVector::from_row_slice(&[1.0, -2.0]);
        let schedule = [0.0, 0.4, 1.1, 2.0];
        let out = simulate(&sys, &schedule, &InitialState::Fixed(x0.clone()), 3, None).unwrap();
        for (k, &t) in schedule.iter().enumerate() {
            let expected = matrix_exponential(sys.a(), t).unwrap() * &x0;
            assert!((&out.knot_states[k] - &expected).norm() < 1e-12);
            assert!((&out.noisy_samples[k] - &out.clean_samples[k]).norm() < 1e-300);
        }
    }

    #[test]
    fn same_seed_reproduces_exactly() {
        let sys = butterworth(3, 1.0, 1.0, 0.5).unwrap();
        let schedule: Vec<f64> = (1..=30).map(|k| k as f64 * 0.1).collect();
        let a = simulate(&sys, &schedule, &InitialState::Stationary, 42, Some(0.02)).unwrap();
        let b = simulate(&sys, &schedule, &InitialState::Stationary, 42, Some(0.02)).unwrap();
        for k in 0..schedule.len() {
            assert_eq!(a.noisy_samples[k], b.noisy_samples[k]);
            assert_eq!(a.knot_states[k], b.knot_states[k]);
        }
        let (da, db) = (a.dense_truth.unwrap(), b.dense_truth.unwrap());
        assert_eq!(da.times, db.times);
        assert_eq!(da.input_avgs, db.input_avgs);
        let c = simulate(&sys, &schedule, &InitialState::Stationary, 43, None).unwrap();
        assert_ne!(a.noisy_samples[0], c.noisy_samples[0]);
    }

    #[test]
    fn integrator_increment_variance_matches_gramian() {
        // X(t+1) - X(t) ~ N(0, sigma_u^2) for the scalar integrator.
        let sys = ContinuousLTISystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            0.7,
            DVector::zeros(1),
        )
        .unwrap();
        let trials = 10_000;
        let mut sum_sq = 0.0;
        for trial in 0..trials {
            let out = simulate(
                &sys,
                &[0.0, 1.0],
                &InitialState::Fixed(DVector::zeros(1)),
                trial as u64,
                None,
            )
            .unwrap();
            let inc = out.knot_states[1][0] - out.knot_states[0][0];
            sum_sq += inc * inc;
        }
        let var = sum_sq / trials as f64;
        let expected = 0.7 * 0.7;
        // Var of the sample variance is 2 sigma^4 / trials.
        let se = (2.0 / trials as f64).sqrt() * expected;
        assert!(
            (var - expected).abs() < 3.0 * se,
            "var {var}, expected {expected} +- {se}"
        );
    }

    #[test]
    fn dense_truth_is_consistent_with_knots() {
        let sys = butterworth(2, 0.5, 1.0, 0.3).unwrap();
        let schedule = [1.0, 1.5, 2.25, 3.0];
        let out = simulate(&sys, &schedule, &InitialState::Stationary, 9, Some(0.1)).unwrap();
        let dense = out.dense_truth.unwrap();
        for (k, &t) in schedule.iter().enumerate() {
            let j = dense.times.iter().position(|&u| u == t).unwrap();
            assert_eq!(dense.states[j], out.knot_states[k]);
        }
        for (j, s) in dense.states.iter().enumerate() {
            assert!((sys.c() * s - &dense.outputs[j]).norm() < 1e-300);
        }
        for w in dense.times.windows(2) {
            assert!(w[1] - w[0] <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn integrator_state_increment_equals_scaled_input_average() {
        // For A = 0, B = I the joint draw is degenerate: w = delta * u_avg.
        let sys = ContinuousLTISystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            1.3,
            DVector::zeros(1),
        )
        .unwrap();
        let out = simulate(
            &sys,
            &[0.0, 2.0],
            &InitialState::Fixed(DVector::zeros(1)),
            5,
            Some(0.25),
        )
        .unwrap();
        let dense = out.dense_truth.unwrap();
        for j in 0..dense.times.len() - 1 {
            let delta = dense.times[j + 1] - dense.times[j];
            let inc = dense.states[j + 1][0] - dense.states[j][0];
            assert!(
                (inc - delta * dense.input_avgs[j][0]).abs() < 1e-9,
                "cell {j}"
            );
        }
    }

    #[test]
    fn segment_switch_changes_the_flow() {
        let s1 = scalar_system(-1.0, 0.0, 0.0);
        let s2 = scalar_system(-3.0, 0.0, 0.0);
        let segs = SegmentedSystem::new(vec![(0.0, s1), (1.0, s2)]).unwrap();
        let out = simulate(
            &segs,
            &[0.0, 1.0, 2.0],
            &InitialState::Fixed(DVector::from_element(1, 1.0)),
            0,
            None,
        )
        .unwrap();
        assert_relative_eq!(out.knot_states[1][0], (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(
            out.knot_states[2][0],
            (-1.0f64).exp() * (-3.0f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn simulate_rejects_bad_schedules() {
        let sys = scalar_system(-1.0, 1.0, 1.0);
        let x0 = InitialState::Fixed(DVector::zeros(1));
        assert!(simulate(&sys, &[], &x0, 0, None).is_err());
        assert!(simulate(&sys, &[0.0, 0.0], &x0, 0, None).is_err());
        assert!(simulate(&sys, &[0.0, 1.0], &x0, 0, Some(0.0)).is_err());
        assert!(simulate(&sys, &[0.0, 1.0], &x0, 0, Some(-0.1)).is_err());
    }

    #[test]
    fn stationary_draw_requires_stability() {
        let integrator = ContinuousLTISystem::new(
            DMatrix::zeros(1, 1),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            1.0,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        assert!(simulate(&integrator, &[0.0, 1.0], &InitialState::Stationary, 0, None).is_err());
    }
}
