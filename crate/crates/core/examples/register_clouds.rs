// SPDX-License-Identifier: Apache-2.0

//! Registers two synthetic partial scans of a structured scene and reports
//! the recovered transform against ground truth.
//!
//! ```text
//! cargo run --release --example register_clouds [seed]
//! ```

use std::time::Instant;

use gopro_vi::cloud::synth::ScanPairSpec;
use gopro_vi::cloud::{register, synth, RegisterParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // An optional seed varies both the scene layout and the scan sampling.
    let mut spec = ScanPairSpec::default();
    if let Some(seed) = std::env::args().nth(1) {
        spec.seed = seed.parse()?;
        spec.scene.seed = spec.seed;
    }
    let pair = synth::scan_pair(&spec);
    println!(
        "source {} points, target {} points, true overlap {:.3}",
        pair.source.len(),
        pair.target.len(),
        pair.overlap_fraction
    );

    let start = Instant::now();
    let params = RegisterParams::default();
    let out = register(&pair.source, &pair.target, &params)?;
    let elapsed = start.elapsed();

    let (dt, dr) = gopro_vi::cloud::pose_error(&out.result.transform, &pair.truth);
    println!("downsampled: {} / {}", out.n_source_down, out.n_target_down);
    println!(
        "correspondences {}, RANSAC inliers {} ({:.3}) after {} hypotheses",
        out.n_correspondences, out.ransac.n_inliers, out.ransac.inlier_ratio, out.ransac.iterations
    );
    let (gdt, gdr) = gopro_vi::cloud::pose_error(&out.ransac.transform, &pair.truth);
    println!("global registration error: {:.4} m, {:.3} deg", gdt, gdr);
    println!(
        "ICP iterations {} (converged: {})",
        out.icp.iterations, out.icp.converged
    );
    println!("final error: {:.4} m, {:.3} deg", dt, dr);
    println!(
        "fitness {:.4}, inlier_rmse {:.4} m",
        out.result.fitness, out.result.inlier_rmse
    );
    println!("elapsed {:.2} s", elapsed.as_secs_f64());
    Ok(())
}
