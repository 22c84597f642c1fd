//! Simulate a lowpass system, smooth the noisy samples, query between them.

use ctsmooth::{butterworth, simulate, InitialState, MeasurementSet, SmootherState};

fn main() -> ctsmooth::Result<()> {
    // Order-3 Butterworth shaping filter, 1 Hz cutoff, unit input level,
    // measurement noise with standard deviation 0.3.
    let system = butterworth(3, 1.0, 1.0, 0.3)?;

    // Eight samples per second for five seconds.
    let times: Vec<f64> = (1..=40).map(|k| k as f64 / 8.0).collect();
    let sim = simulate(&system, &times, &InitialState::Stationary, 7, None)?;

    let meas = MeasurementSet::new(times, sim.noisy_samples.clone(), None)?;
    let smoother = SmootherState::run(&system, &meas, None, 0.0, None)?;

    // Query anywhere in [t0, t_end], not just at sample times.
    let rec = smoother.query(2.3125)?;
    println!(
        "t = {:.4}: y_hat = {:.4} +/- {:.4}, u_hat = {:.4}",
        rec.t,
        rec.y_hat[0],
        rec.y_var[0].max(0.0).sqrt(),
        rec.u_hat[0],
    );

    let report = ctsmooth::analysis::snr(&system, Some(1.0))?;
    println!(
        "stationary output power {:.4}, snr {:.2} dB",
        report.ey2, report.snr_db
    );
    Ok(())
}
