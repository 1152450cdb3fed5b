// SPDX-License-Identifier: Apache-2.0

//! Projects tag detections from a looping trajectory into the world frame
//! and reports how tightly each tag's repeated sightings cluster.
//!
//! ```text
//! cargo run --release --example tag_validation [noise_m] [drift_z_m]
//! ```

use gopro_vi::traj::synth::{tag_loop, TagLoopSpec};
use gopro_vi::traj::{tag_statistics, tag_world_positions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let mut spec = TagLoopSpec::default();
    if let Some(n) = args.next() {
        spec.noise = n.parse()?;
    }
    if let Some(z) = args.next() {
        spec.drift.z = z.parse()?;
    }
    let run = tag_loop(&spec);
    let proj = tag_world_positions(&run.trajectory, &run.detections, 0.05);
    let report = tag_statistics(&proj.positions)?;

    println!(
        "{:>5} {:>4} {:>8} {:>8} {:>8} {:>9}",
        "tag", "n", "std_x", "std_y", "std_z", "avg_err"
    );
    for (id, _, s) in &report.per_tag {
        println!(
            "{id:>5} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
            s.n_detections, s.std.x, s.std.y, s.std.z, s.avg_dist_error
        );
    }
    let o = &report.overall;
    println!(
        "{:>5} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>9.4}",
        "all", o.n_detections, o.std.x, o.std.y, o.std.z, o.avg_dist_error
    );
    let [min, q1, med, q3, max] = o.quantiles;
    println!("distance quantiles: {min:.4} {q1:.4} {med:.4} {q3:.4} {max:.4}");
    Ok(())
}
