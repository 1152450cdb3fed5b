// SPDX-License-Identifier: Apache-2.0

//! Simulates a static IMU channel with known white noise and bias random
//! walk, then recovers both from its Allan deviation curve.
//!
//! ```text
//! cargo run --release --example allan_noise [hours]
//! ```

use gopro_vi::allan::{
    allan_deviation, fit_loglog_slope, fit_noise_params, simulate_imu_noise, tau_grid, FitWindows,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let hours: f64 = match std::env::args().nth(1) {
        Some(h) => h.parse()?,
        None => 2.0,
    };
    let (rate, sigma_w, sigma_b) = (200.0, 2e-3, 1e-4);
    let axes: Vec<Vec<f64>> = (0..3)
        .map(|k| simulate_imu_noise(sigma_w, sigma_b, rate, hours * 3600.0, 40 + k))
        .collect();
    let refs: Vec<&[f64]> = axes.iter().map(Vec::as_slice).collect();

    let taus = tau_grid(refs[0].len(), rate, 10);
    let curve = allan_deviation(&refs, rate, &taus)?;
    let avg = curve.average();
    println!("{:>12} {:>12}", "tau [s]", "adev");
    for (t, a) in curve.taus.iter().zip(&avg).step_by(4) {
        println!("{t:>12.4} {a:>12.4e}");
    }

    let fit = fit_noise_params(&curve, &FitWindows::default())?;
    let slope = fit_loglog_slope(&curve.taus, &avg, 2.0 / rate, 1.0)?;
    println!("short-tau slope {slope:.3}");
    println!(
        "sigma_w {:.4e} (true {sigma_w:.1e}), sigma_b {:.4e} (true {sigma_b:.1e})",
        fit.sigma_w_avg, fit.sigma_b_avg
    );
    Ok(())
}
