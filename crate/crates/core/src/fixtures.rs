// SPDX-License-Identifier: Apache-2.0

//! Deterministic GoPro-like telemetry for tests, examples and the
//! `fixtures` subcommand.

use crate::fourcc::FourCC;
use crate::gpmf::{encode_klv, KlvNode, Scalars, ACCL, DEVC, GYRO, SCAL, SHUT, STRM};
use crate::mp4::Mp4Fixture;

/// Accelerometer SCAL used by the fixtures (counts per m/s²).
pub const ACCL_SCALE: i16 = 418;
/// Gyroscope SCAL used by the fixtures (counts per rad/s).
pub const GYRO_SCALE: i16 = 939;

#[derive(Debug, Clone)]
pub struct RecordingSpec {
    pub payloads: usize,
    /// Payload duration in `timescale` ticks.
    pub payload_ticks: u32,
    pub timescale: u32,
    pub accel_per_payload: usize,
    pub gyro_per_payload: usize,
    pub shutter_per_payload: usize,
    pub exposure: f32,
}

impl Default for RecordingSpec {
    /// Ten 1.01 s payloads at 200 Hz IMU and 29.97 fps.
    fn default() -> Self {
        RecordingSpec {
            payloads: 10,
            payload_ticks: 1010,
            timescale: 1000,
            accel_per_payload: 202,
            gyro_per_payload: 202,
            shutter_per_payload: 30,
            exposure: 1.0 / 240.0,
        }
    }
}

/// Smooth synthetic motion sampled at time `t`: (accel m/s², gyro rad/s).
pub fn synthetic_motion(t: f64) -> ([f64; 3], [f64; 3]) {
    let accel = [
        0.5 * (1.3 * t).sin(),
        0.3 * (0.7 * t).cos(),
        9.81 + 0.2 * (2.1 * t).sin(),
    ];
    let gyro = [
        0.1 * (0.9 * t).sin(),
        -0.2 * (0.5 * t).sin(),
        0.05 * (1.7 * t).cos(),
    ];
    (accel, gyro)
}

fn quantize(v: f64, scale: i16) -> i16 {
    (v * scale as f64).round() as i16
}

fn strm(name: &str, data: KlvNode, scale: Option<i16>) -> KlvNode {
    let mut children = vec![KlvNode::leaf(
        FourCC(*b"STNM"),
        &Scalars::Ascii(name.as_bytes().to_vec()),
        1,
    )];
    if let Some(s) = scale {
        children.push(KlvNode::leaf(SCAL, &Scalars::I16(vec![s]), 1));
    }
    children.push(data);
    KlvNode::container(STRM, children)
}

/// One GPMF payload (a `DEVC`) with ACCL, GYRO and SHUT streams.
pub fn telemetry_payload(accel: &[[f64; 3]], gyro: &[[f64; 3]], shutter: &[f32]) -> Vec<u8> {
    let accl: Vec<i16> = accel
        .iter()
        .flat_map(|a| a.map(|v| quantize(v, ACCL_SCALE)))
        .collect();
    let gyr: Vec<i16> = gyro
        .iter()
        .flat_map(|g| g.map(|v| quantize(v, GYRO_SCALE)))
        .collect();
    let devc = KlvNode::container(
        DEVC,
        vec![
            KlvNode::leaf(FourCC(*b"DVNM"), &Scalars::Ascii(b"Camera".to_vec()), 1),
            strm(
                "Accelerometer",
                KlvNode::leaf(ACCL, &Scalars::I16(accl), 3),
                Some(ACCL_SCALE),
            ),
            strm(
                "Gyroscope",
                KlvNode::leaf(GYRO, &Scalars::I16(gyr), 3),
                Some(GYRO_SCALE),
            ),
            strm(
                "Exposure time (shutter speed)",
                KlvNode::leaf(SHUT, &Scalars::F32(shutter.to_vec()), 1),
                None,
            ),
        ],
    );
    encode_klv(&[devc])
}

/// MP4 fixture whose telemetry follows `spec`, with sensor values drawn
/// from [`synthetic_motion`].
pub fn recording(spec: &RecordingSpec) -> Mp4Fixture {
    let dur = spec.payload_ticks as f64 / spec.timescale as f64;
    let payloads = (0..spec.payloads)
        .map(|i| {
            let t0 = i as f64 * dur;
            let sample =
                |n: usize| -> Vec<f64> { (0..n).map(|j| t0 + j as f64 * dur / n as f64).collect() };
            let accel: Vec<[f64; 3]> = sample(spec.accel_per_payload)
                .into_iter()
                .map(|t| synthetic_motion(t).0)
                .collect();
            let gyro: Vec<[f64; 3]> = sample(spec.gyro_per_payload)
                .into_iter()
                .map(|t| synthetic_motion(t).1)
                .collect();
            let shut = vec![spec.exposure; spec.shutter_per_payload];
            (telemetry_payload(&accel, &gyro, &shut), spec.payload_ticks)
        })
        .collect();
    Mp4Fixture {
        timescale: spec.timescale,
        payloads,
        ..Mp4Fixture::default()
    }
}
