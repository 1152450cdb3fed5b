// SPDX-License-Identifier: Apache-2.0

//! Evaluates an estimated trajectory that lives in its own scaled and
//! rotated frame. Sim(3) alignment absorbs the frame; SE(3) alignment
//! cannot fix the scale.
//!
//! ```text
//! cargo run --release --example trajectory_ate [est.tum ref.tum]
//! ```

use std::fs::File;
use std::io::BufReader;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gopro_vi::traj::synth::{random_sim3, tag_loop, transformed_copy, TagLoopSpec};
use gopro_vi::traj::{evaluate_ate, read_tum, AlignMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (est, reference) = if args.len() == 2 {
        (
            read_tum(BufReader::new(File::open(&args[0])?))?,
            read_tum(BufReader::new(File::open(&args[1])?))?,
        )
    } else {
        let truth = tag_loop(&TagLoopSpec::default()).ground_truth;
        let g = random_sim3(&mut ChaCha8Rng::seed_from_u64(5));
        println!("estimate frame: scale {:.4}", g.scale);
        (transformed_copy(&truth, &g, 0.05, 6), truth)
    };

    for mode in [AlignMode::Sim3, AlignMode::Se3] {
        let r = evaluate_ate(&est, &reference, 0.02, mode)?;
        println!(
            "{mode}: {} pairs, rmse {:.4} m, max {:.4} m, scale {:.4}",
            r.n_pairs, r.rmse, r.max, r.transform.scale
        );
    }
    Ok(())
}
