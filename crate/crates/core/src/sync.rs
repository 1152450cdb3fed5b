// SPDX-License-Identifier: Apache-2.0

//! Per-sample timestamps for the telemetry streams and the synchronized
//! IMU/frame dataset built from them.
//!
//! Each payload carries `n` samples of a stream spread uniformly over the
//! payload's time span, so sample `j` lands at `T_i + j (T_{i+1} - T_i) / n`.
//! The accelerometer timeline is the master IMU clock and gyroscope values
//! are linearly interpolated onto it. Frame `k` takes the time of the
//! `k`-th `SHUT` sample.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::gpmf::{self, extract_stream, parse_klv, GpmfError, SensorStream};
use crate::mp4::RawPayload;
use crate::report::KeyValues;

#[derive(Debug, thiserror::Error)]
pub enum SyncError {
    #[error("payload start times are not strictly increasing at payload {0}")]
    NonMonotonicPayloads(usize),
    #[error("payload {0} has zero samples")]
    ZeroCount(usize),
    #[error("{starts} payload starts cannot describe {counts} sample counts")]
    LengthMismatch { starts: usize, counts: usize },
    #[error("no '{0}' stream in any payload")]
    MissingStream(&'static str),
    #[error("payload {payload}: {accel} ACCL vs {gyro} GYRO samples differ by more than 2")]
    CountMismatch {
        payload: usize,
        accel: usize,
        gyro: usize,
    },
    #[error("frame {index} has non-positive exposure {exposure}")]
    InvalidExposure { index: usize, exposure: f64 },
    #[error("payload {payload}: {source}")]
    Gpmf {
        payload: usize,
        #[source]
        source: GpmfError,
    },
    #[error("malformed CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameStamp {
    pub index: usize,
    pub t: f64,
    pub exposure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub recording_id: String,
    pub payloads: usize,
    pub duration: f64,
    pub imu_rate_hz: f64,
    pub frame_rate_hz: f64,
    pub axis_convention: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncedDataset {
    pub imu: Vec<ImuSample>,
    pub frames: Vec<FrameStamp>,
    pub meta: DatasetMeta,
    /// Non-fatal anomalies such as dropped payloads.
    pub warnings: Vec<String>,
}

/// The sensor streams of one telemetry payload and its time span.
#[derive(Debug, Clone, PartialEq)]
pub struct PayloadStreams {
    pub start: f64,
    pub duration: f64,
    pub accel: Option<SensorStream>,
    pub gyro: Option<SensorStream>,
    pub shutter: Option<SensorStream>,
}

impl PayloadStreams {
    pub fn from_raw(payload: &RawPayload) -> Result<Self, SyncError> {
        let wrap = |source| SyncError::Gpmf {
            payload: payload.index,
            source,
        };
        let root = parse_klv(&payload.bytes).map_err(wrap)?;
        let optional = |key| match extract_stream(&root, key) {
            Ok(s) => Ok(Some(s)),
            Err(GpmfError::StreamNotFound(_)) => Ok(None),
            Err(e) => Err(wrap(e)),
        };
        Ok(PayloadStreams {
            start: payload.start_time,
            duration: payload.duration,
            accel: optional(gpmf::ACCL)?,
            gyro: optional(gpmf::GYRO)?,
            shutter: optional(gpmf::SHUT)?,
        })
    }
}

/// Uniformly subdivides each payload span among its samples.
///
/// `payload_starts` holds either one entry per payload (the final payload then
/// spans `last_duration`) or one extra trailing entry marking the end of the
/// final payload.
pub fn interpolate_sample_times(
    payload_starts: &[f64],
    counts: &[usize],
    last_duration: Option<f64>,
) -> Result<Vec<f64>, SyncError> {
    let mismatch = || SyncError::LengthMismatch {
        starts: payload_starts.len(),
        counts: counts.len(),
    };
    let end = if payload_starts.len() == counts.len() + 1 {
        payload_starts[counts.len()]
    } else if payload_starts.len() == counts.len() && !counts.is_empty() {
        payload_starts[counts.len() - 1] + last_duration.ok_or_else(mismatch)?
    } else {
        return Err(mismatch());
    };
    let spans: Vec<(f64, f64)> = (0..counts.len())
        .map(|i| {
            let stop = payload_starts.get(i + 1).copied().unwrap_or(end);
            (
                payload_starts[i],
                if i + 1 == counts.len() { end } else { stop },
            )
        })
        .collect();
    interpolate_spans(&spans, counts)
}

/// Sample times for explicit `(start, end)` spans.
pub fn interpolate_spans(spans: &[(f64, f64)], counts: &[usize]) -> Result<Vec<f64>, SyncError> {
    if spans.len() != counts.len() {
        return Err(SyncError::LengthMismatch {
            starts: spans.len(),
            counts: counts.len(),
        });
    }
    for (i, w) in spans.windows(2).enumerate() {
        if w[1].0 <= w[0].0 {
            return Err(SyncError::NonMonotonicPayloads(i + 1));
        }
    }
    let mut times = Vec::with_capacity(counts.iter().sum());
    for (i, (&(start, end), &n)) in spans.iter().zip(counts).enumerate() {
        // Round-off may push an end past the next start; never overlap.
        let end = spans.get(i + 1).map_or(end, |next| end.min(next.0));
        if n == 0 {
            return Err(SyncError::ZeroCount(i));
        }
        if end <= start {
            return Err(SyncError::NonMonotonicPayloads(i));
        }
        let step = (end - start) / n as f64;
        times.extend((0..n).map(|j| start + j as f64 * step));
    }
    Ok(times)
}

/// Times of every sample of one stream across payloads, skipping payloads
/// that lack it.
fn stream_timeline<'a>(
    payloads: &'a [PayloadStreams],
    origin: f64,
    pick: impl Fn(&'a PayloadStreams) -> Option<&'a SensorStream>,
) -> Result<(Vec<f64>, Vec<&'a [f64]>), SyncError> {
    let mut spans = Vec::new();
    let mut counts = Vec::new();
    let mut rows = Vec::new();
    for p in payloads {
        if let Some(s) = pick(p).filter(|s| !s.is_empty()) {
            spans.push((p.start - origin, p.start - origin + p.duration));
            counts.push(s.len());
            rows.extend(s.rows());
        }
    }
    let times = interpolate_spans(&spans, &counts)?;
    Ok((times, rows))
}

/// Linear interpolation of `(times, rows)` at ascending `query` times,
/// holding the end values outside the sampled range.
fn resample_linear(times: &[f64], rows: &[&[f64]], query: &[f64]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(query.len());
    let mut k = 0;
    for &t in query {
        while k + 1 < times.len() && times[k + 1] <= t {
            k += 1;
        }
        let row = if t <= times[0] {
            [rows[0][0], rows[0][1], rows[0][2]]
        } else if k + 1 >= times.len() {
            let r = rows[times.len() - 1];
            [r[0], r[1], r[2]]
        } else {
            let w = (t - times[k]) / (times[k + 1] - times[k]);
            std::array::from_fn(|c| rows[k][c] + w * (rows[k + 1][c] - rows[k][c]))
        };
        out.push(row);
    }
    out
}

/// Builds the synchronized dataset from the payloads of one recording.
pub fn build_dataset(
    payloads: &[PayloadStreams],
    recording_id: &str,
) -> Result<SyncedDataset, SyncError> {
    let first = payloads.first().ok_or(SyncError::MissingStream("ACCL"))?;
    for (i, w) in payloads.windows(2).enumerate() {
        if w[1].start <= w[0].start {
            return Err(SyncError::NonMonotonicPayloads(i + 1));
        }
    }
    let origin = first.start;

    for (i, p) in payloads.iter().enumerate() {
        let na = p.accel.as_ref().map_or(0, |s| s.len());
        let ng = p.gyro.as_ref().map_or(0, |s| s.len());
        if na.abs_diff(ng) > 2 {
            return Err(SyncError::CountMismatch {
                payload: i,
                accel: na,
                gyro: ng,
            });
        }
    }

    let (accel_t, accel_rows) = stream_timeline(payloads, origin, |p| p.accel.as_ref())?;
    if accel_t.is_empty() {
        return Err(SyncError::MissingStream("ACCL"));
    }
    let (gyro_t, gyro_rows) = stream_timeline(payloads, origin, |p| p.gyro.as_ref())?;
    if gyro_t.is_empty() {
        return Err(SyncError::MissingStream("GYRO"));
    }
    let (shut_t, shut_rows) = stream_timeline(payloads, origin, |p| p.shutter.as_ref())?;
    if shut_t.is_empty() {
        return Err(SyncError::MissingStream("SHUT"));
    }

    let gyro_on_accel = resample_linear(&gyro_t, &gyro_rows, &accel_t);
    let imu: Vec<ImuSample> = accel_t
        .iter()
        .zip(&accel_rows)
        .zip(gyro_on_accel)
        .map(|((&t, a), g)| ImuSample {
            t,
            accel: [a[0], a[1], a[2]],
            gyro: g,
        })
        .collect();

    let frames = shut_t
        .iter()
        .zip(&shut_rows)
        .enumerate()
        .map(|(index, (&t, row))| {
            let exposure = row[0];
            if exposure > 0.0 {
                Ok(FrameStamp { index, t, exposure })
            } else {
                Err(SyncError::InvalidExposure { index, exposure })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let last = payloads.last().unwrap();
    let duration = last.start + last.duration - origin;
    let mut warnings = Vec::new();
    let nominal_payload = duration / payloads.len() as f64;
    let imu_step = duration / imu.len() as f64;
    for (i, w) in payloads.windows(2).enumerate() {
        let gap = w[1].start - (w[0].start + w[0].duration);
        if gap > 2.0 * imu_step {
            warnings.push(format!(
                "gap of {gap:.6} s between payloads {i} and {} (nominal payload {nominal_payload:.6} s)",
                i + 1
            ));
        }
    }

    let axis_convention = first
        .accel
        .as_ref()
        .and_then(|s| s.axis_mapping.as_ref())
        .map(|m| format!("{} ({})", m.describe(), m.orientation))
        .unwrap_or_else(|| "device".into());

    Ok(SyncedDataset {
        meta: DatasetMeta {
            recording_id: recording_id.to_string(),
            payloads: payloads.len(),
            duration,
            imu_rate_hz: imu.len() as f64 / duration,
            frame_rate_hz: frames.len() as f64 / duration,
            axis_convention,
        },
        imu,
        frames,
        warnings,
    })
}

/// Parses every payload and builds the dataset.
pub fn dataset_from_payloads(
    payloads: &[RawPayload],
    recording_id: &str,
) -> Result<SyncedDataset, SyncError> {
    let streams = payloads
        .iter()
        .map(PayloadStreams::from_raw)
        .collect::<Result<Vec<_>, _>>()?;
    build_dataset(&streams, recording_id)
}

pub const IMU_CSV_HEADER: &str = "t,ax,ay,az,gx,gy,gz";
pub const FRAMES_CSV_HEADER: &str = "index,t,exposure";

pub fn write_imu_csv<W: Write>(imu: &[ImuSample], mut w: W) -> io::Result<()> {
    writeln!(w, "{IMU_CSV_HEADER}")?;
    for s in imu {
        let [ax, ay, az] = s.accel;
        let [gx, gy, gz] = s.gyro;
        writeln!(w, "{:.9},{ax},{ay},{az},{gx},{gy},{gz}", s.t)?;
    }
    w.flush()
}

pub fn write_frames_csv<W: Write>(frames: &[FrameStamp], mut w: W) -> io::Result<()> {
    writeln!(w, "{FRAMES_CSV_HEADER}")?;
    for f in frames {
        writeln!(w, "{},{:.9},{}", f.index, f.t, f.exposure)?;
    }
    w.flush()
}

pub fn export_imu_csv(dataset: &SyncedDataset, path: &Path) -> Result<(), SyncError> {
    write_imu_csv(&dataset.imu, BufWriter::new(File::create(path)?))?;
    Ok(())
}

pub fn export_frames_csv(dataset: &SyncedDataset, path: &Path) -> Result<(), SyncError> {
    write_frames_csv(&dataset.frames, BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn parse_fields<const N: usize>(line: &str, n: usize) -> Result<[f64; N], SyncError> {
    let bad = |reason: String| SyncError::Csv { line: n, reason };
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != N {
        return Err(bad(format!("expected {N} fields, found {}", fields.len())));
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(&fields) {
        *o = f.parse().map_err(|_| bad(format!("not a number: {f:?}")))?;
    }
    Ok(out)
}

fn data_lines<R: BufRead>(r: R) -> impl Iterator<Item = (usize, io::Result<String>)> {
    r.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| match l {
            Ok(s) => {
                let s = s.trim();
                !s.is_empty() && !s.starts_with('#') && !s.starts_with(|c: char| c.is_alphabetic())
            }
            Err(_) => true,
        })
}

pub fn read_imu_csv<R: BufRead>(r: R) -> Result<Vec<ImuSample>, SyncError> {
    data_lines(r)
        .map(|(n, line)| {
            let [t, ax, ay, az, gx, gy, gz] = parse_fields::<7>(&line?, n)?;
            Ok(ImuSample {
                t,
                accel: [ax, ay, az],
                gyro: [gx, gy, gz],
            })
        })
        .collect()
}

pub fn read_frames_csv<R: BufRead>(r: R) -> Result<Vec<FrameStamp>, SyncError> {
    data_lines(r)
        .map(|(n, line)| {
            let [index, t, exposure] = parse_fields::<3>(&line?, n)?;
            Ok(FrameStamp {
                index: index as usize,
                t,
                exposure,
            })
        })
        .collect()
}

pub fn import_imu_csv(path: &Path) -> Result<Vec<ImuSample>, SyncError> {
    read_imu_csv(BufReader::new(File::open(path)?))
}

/// `key: value` description of the dataset.
pub fn manifest(dataset: &SyncedDataset, imu_csv: &str, frames_csv: &str) -> KeyValues {
    let m = &dataset.meta;
    let mut kv = KeyValues::new();
    kv.push("recording", &m.recording_id)
        .push("payloads", m.payloads)
        .push("imu_samples", dataset.imu.len())
        .push("frames", dataset.frames.len())
        .push_f64("duration_s", m.duration, 6)
        .push_f64("imu_rate_hz", m.imu_rate_hz, 3)
        .push_f64("frame_rate_hz", m.frame_rate_hz, 3)
        .push("axis_convention", &m.axis_convention)
        .push("clock_origin", "first payload start")
        .push("frame_time", "SHUT sample time (exposure not centered)")
        .push("imu_csv", imu_csv)
        .push("frames_csv", frames_csv)
        .push("warnings", dataset.warnings.len());
    for (i, w) in dataset.warnings.iter().enumerate() {
        kv.push(format!("warning_{i}"), w);
    }
    kv
}
