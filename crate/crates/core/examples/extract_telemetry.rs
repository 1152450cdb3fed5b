// SPDX-License-Identifier: Apache-2.0

//! Demuxes the telemetry track of an MP4, prints the GPMF tree of the first
//! payload and the synchronized IMU/frame streams.
//!
//! ```text
//! cargo run --example extract_telemetry [clip.mp4]
//! ```
//!
//! Without an argument a synthetic ten-payload recording is used.

use std::io::Cursor;

use gopro_vi::fixtures::{recording, RecordingSpec};
use gopro_vi::gpmf::{dump_tree, parse_klv};
use gopro_vi::mp4::{extract_payloads, find_gpmf_track, parse_box_tree, write_mp4_fixture};
use gopro_vi::sync::dataset_from_payloads;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bytes = match std::env::args().nth(1) {
        Some(path) => std::fs::read(path)?,
        None => write_mp4_fixture(&recording(&RecordingSpec::default())),
    };
    let mut src = Cursor::new(bytes);
    let tree = parse_box_tree(&mut src)?;
    let table = find_gpmf_track(&tree, &mut src)?;
    println!(
        "telemetry track {}: {} samples, timescale {}",
        table.track_id,
        table.samples.len(),
        table.timescale
    );
    let payloads = extract_payloads(&table, &mut src)?;

    if let Some(first) = payloads.first() {
        println!("payload 0 ({} bytes):", first.bytes.len());
        print!("{}", dump_tree(&parse_klv(&first.bytes)?));
    }

    let dataset = dataset_from_payloads(&payloads, "example")?;
    let m = &dataset.meta;
    println!(
        "{} IMU samples at {:.2} Hz, {} frames at {:.3} fps, {:.3} s",
        dataset.imu.len(),
        m.imu_rate_hz,
        dataset.frames.len(),
        m.frame_rate_hz,
        m.duration
    );
    for s in dataset.imu.iter().take(3) {
        println!("  t {:.6}  accel {:?}  gyro {:?}", s.t, s.accel, s.gyro);
    }
    for w in &dataset.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
