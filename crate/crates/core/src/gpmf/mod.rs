// SPDX-License-Identifier: Apache-2.0

//! GoPro Metadata Format: big-endian key/type/size/repeat records padded to
//! 32 bits, nested through type-0 containers (`DEVC` → `STRM` → data).

mod klv;
mod stream;

pub use klv::{dump_tree, encode_klv, parse_klv, KlvHeader, KlvNode, Scalars};
pub use stream::{extract_stream, stream_counts, AxisMapping, SensorStream};

use crate::fourcc::FourCC;

pub const DEVC: FourCC = FourCC(*b"DEVC");
pub const STRM: FourCC = FourCC(*b"STRM");
pub const SCAL: FourCC = FourCC(*b"SCAL");
pub const ACCL: FourCC = FourCC(*b"ACCL");
pub const GYRO: FourCC = FourCC(*b"GYRO");
pub const SHUT: FourCC = FourCC(*b"SHUT");
pub const GPS5: FourCC = FourCC(*b"GPS5");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GpmfError {
    #[error("payload length {0} is not a multiple of 4")]
    Misaligned(usize),
    #[error("'{key}' at byte {offset} declares {declared} bytes but only {available} remain")]
    TruncatedKlv {
        key: FourCC,
        offset: usize,
        declared: usize,
        available: usize,
    },
    #[error("key {key} at byte {offset} is not printable 7-bit ASCII")]
    InvalidKey { key: FourCC, offset: usize },
    #[error("'{key}' uses type code {code:?} which cannot be decoded")]
    BadTypeCode { key: FourCC, code: char },
    #[error("'{key}' item size {item_size} is not a multiple of the {elem}-byte element")]
    BadItemSize {
        key: FourCC,
        item_size: u8,
        elem: usize,
    },
    #[error("stream '{0}' not found")]
    StreamNotFound(FourCC),
    #[error("'{key}' has {channels} channels but SCAL holds {scales} divisors")]
    ScaleMismatch {
        key: FourCC,
        channels: usize,
        scales: usize,
    },
    #[error("'{key}' has {found} channels, expected {expected}")]
    ChannelCount {
        key: FourCC,
        found: usize,
        expected: usize,
    },
    #[error("bad orientation string {0:?}")]
    BadOrientation(String),
}
