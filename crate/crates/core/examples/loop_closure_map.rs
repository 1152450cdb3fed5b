// SPDX-License-Identifier: Apache-2.0

//! Builds a landmark map from a drifting two-lap trajectory, then applies
//! the loop-closure pose update and shows how the fused points snap back
//! onto a single height layer.
//!
//! ```text
//! cargo run --release --example loop_closure_map [out_dir]
//! ```
//!
//! With `out_dir` the fused cloud before and after the update is written as
//! PLY.

use std::path::PathBuf;

use gopro_vi::map::synth::{drifting_loop, z_spread, DriftSpec};
use gopro_vi::map::{GlobalMap, MapEvent};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from);
    let scenario = drifting_loop(&DriftSpec::default());

    let mut map = GlobalMap::new();
    let mut updates = Vec::new();
    for event in &scenario.events {
        match event {
            MapEvent::Update { id, pose } => updates.push((*id, *pose)),
            e => map.apply(e)?,
        }
    }
    let stats = map.stats();
    println!(
        "{} keyframes, {} landmarks, {} observations",
        stats.keyframes, stats.landmarks, stats.observations
    );

    let before = map.fused_cloud();
    if let Some(dir) = &out_dir {
        map.export_fused_cloud(&dir.join("before.ply"))?;
    }
    // All keyframes move at once, as a pose-graph optimizer would report them.
    map.update_keyframe_poses(&updates)?;
    let after = map.fused_cloud();
    if let Some(dir) = &out_dir {
        map.export_fused_cloud(&dir.join("after.ply"))?;
    }

    let (zb, za) = (
        z_spread(&before, &scenario.landmarks),
        z_spread(&after, &scenario.landmarks),
    );
    println!(
        "z error before update {zb:.4} m, after {za:.4} m ({:.0}x smaller)",
        zb / za
    );
    Ok(())
}
