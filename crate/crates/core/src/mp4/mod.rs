// SPDX-License-Identifier: Apache-2.0

//! Read-only ISO-BMFF navigation for GoPro recordings.
//!
//! Only box headers and the small sample-table boxes are ever read; the
//! video and audio sample data is never touched. The telemetry track is the
//! one whose sample description format is `gpmd`.

mod boxes;
mod sample_table;
mod writer;

pub use boxes::{parse_box_tree, BoxHeader, BoxNode, BoxTree};
pub use sample_table::{
    extract_payloads, find_gpmf_track, read_gpmf_payloads, RawPayload, Sample, TrackSampleTable,
};
pub use writer::{write_mp4_fixture, Mp4Fixture};

use crate::fourcc::FourCC;

#[derive(Debug, thiserror::Error)]
pub enum Mp4Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not an MP4 file: {0}")]
    NotMp4(String),
    #[error(
        "box '{fourcc}' at offset {offset} declares {declared} bytes but only {available} remain"
    )]
    TruncatedFile {
        fourcc: FourCC,
        offset: u64,
        declared: u64,
        available: u64,
    },
    #[error("malformed box at offset {offset}: {reason}")]
    MalformedBox { offset: u64, reason: String },
    #[error("no gpmd telemetry track found")]
    NoTelemetryTrack,
    #[error("{0} gpmd telemetry tracks found, expected exactly one")]
    MultipleTelemetryTracks(usize),
    #[error("inconsistent sample table in track {track_id}: {reason}")]
    InconsistentSampleTable { track_id: u32, reason: String },
    #[error("payload {index} at offset {offset} has length {len}, not a multiple of 4")]
    AlignmentError { index: usize, offset: u64, len: u64 },
}
