// SPDX-License-Identifier: Apache-2.0

use std::fs::File;
use std::io::{BufReader, Read, Seek, SeekFrom};
use std::path::Path;

use super::{parse_box_tree, BoxNode, BoxTree, Mp4Error};
use crate::fourcc::FourCC;

const GPMD: FourCC = FourCC(*b"gpmd");
/// Sample-table boxes are tiny; anything bigger than this is corrupt.
const MAX_TABLE_BOX: u64 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sample {
    pub file_offset: u64,
    pub size: u32,
    /// Decode time in track timescale ticks.
    pub decode_time: u64,
    pub duration: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackSampleTable {
    pub track_id: u32,
    pub handler_fourcc: FourCC,
    pub sample_format_fourcc: FourCC,
    /// Ticks per second.
    pub timescale: u32,
    pub samples: Vec<Sample>,
}

/// One telemetry sample: a GPMF byte block and its media timing in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPayload {
    pub index: usize,
    pub bytes: Vec<u8>,
    pub start_time: f64,
    pub duration: f64,
}

impl RawPayload {
    pub fn end_time(&self) -> f64 {
        self.start_time + self.duration
    }
}

/// Locates the unique `gpmd` track and resolves its sample table.
pub fn find_gpmf_track<R: Read + Seek>(
    tree: &BoxTree,
    src: &mut R,
) -> Result<TrackSampleTable, Mp4Error> {
    let moov = tree.root(b"moov").ok_or(Mp4Error::NoTelemetryTrack)?;
    let mut found = Vec::new();
    for trak in moov.children_of(b"trak") {
        let Some(stsd) = trak.descend(&[b"mdia", b"minf", b"stbl", b"stsd"]) else {
            continue;
        };
        if sample_format(&read_box(src, stsd)?) == Some(GPMD) {
            found.push(trak);
        }
    }
    match found.len() {
        0 => Err(Mp4Error::NoTelemetryTrack),
        1 => read_track(found[0], tree.file_len, src),
        n => Err(Mp4Error::MultipleTelemetryTracks(n)),
    }
}

/// Copies every sample of the table out of the file, verbatim.
pub fn extract_payloads<R: Read + Seek>(
    table: &TrackSampleTable,
    src: &mut R,
) -> Result<Vec<RawPayload>, Mp4Error> {
    let scale = table.timescale as f64;
    table
        .samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            if s.size % 4 != 0 {
                return Err(Mp4Error::AlignmentError {
                    index,
                    offset: s.file_offset,
                    len: s.size as u64,
                });
            }
            src.seek(SeekFrom::Start(s.file_offset))?;
            let mut bytes = vec![0u8; s.size as usize];
            src.read_exact(&mut bytes)?;
            Ok(RawPayload {
                index,
                bytes,
                start_time: s.decode_time as f64 / scale,
                duration: s.duration as f64 / scale,
            })
        })
        .collect()
}

/// Parses a file on disk down to its telemetry payloads.
pub fn read_gpmf_payloads(path: &Path) -> Result<Vec<RawPayload>, Mp4Error> {
    let mut src = BufReader::new(File::open(path)?);
    let tree = parse_box_tree(&mut src)?;
    let table = find_gpmf_track(&tree, &mut src)?;
    extract_payloads(&table, &mut src)
}

fn read_box<R: Read + Seek>(src: &mut R, node: &BoxNode) -> Result<Vec<u8>, Mp4Error> {
    let len = node.header.payload_len();
    if len > MAX_TABLE_BOX {
        return Err(Mp4Error::MalformedBox {
            offset: node.header.offset,
            reason: format!(
                "'{}' box of {len} bytes is implausibly large",
                node.fourcc()
            ),
        });
    }
    src.seek(SeekFrom::Start(node.header.payload_offset()))?;
    let mut buf = vec![0u8; len as usize];
    src.read_exact(&mut buf)?;
    Ok(buf)
}

fn sample_format(stsd: &[u8]) -> Option<FourCC> {
    // version/flags, entry_count, then the first entry's size and format.
    if stsd.len() < 16 || be_u32(stsd, 4)? == 0 {
        return None;
    }
    FourCC::from_slice(&stsd[12..16])
}

fn be_u32(buf: &[u8], at: usize) -> Option<u32> {
    Some(u32::from_be_bytes(buf.get(at..at + 4)?.try_into().ok()?))
}

fn be_u64(buf: &[u8], at: usize) -> Option<u64> {
    Some(u64::from_be_bytes(buf.get(at..at + 8)?.try_into().ok()?))
}

struct TableReader<'a> {
    track_id: u32,
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> TableReader<'a> {
    fn new(track_id: u32, buf: &'a [u8], what: &'static str) -> Self {
        TableReader {
            track_id,
            buf,
            pos: 0,
            what,
        }
    }

    fn err(&self, reason: impl Into<String>) -> Mp4Error {
        Mp4Error::InconsistentSampleTable {
            track_id: self.track_id,
            reason: format!("{}: {}", self.what, reason.into()),
        }
    }

    fn u32(&mut self) -> Result<u32, Mp4Error> {
        let v = be_u32(self.buf, self.pos).ok_or_else(|| self.err("box too short"))?;
        self.pos += 4;
        Ok(v)
    }

    fn u64(&mut self) -> Result<u64, Mp4Error> {
        let v = be_u64(self.buf, self.pos).ok_or_else(|| self.err("box too short"))?;
        self.pos += 8;
        Ok(v)
    }

    fn skip(&mut self, n: usize) -> Result<(), Mp4Error> {
        if self.pos + n > self.buf.len() {
            return Err(self.err("box too short"));
        }
        self.pos += n;
        Ok(())
    }

    /// Entry count, checked against the bytes actually present.
    fn count(&mut self, entry_bytes: usize) -> Result<usize, Mp4Error> {
        let n = self.u32()? as usize;
        if n.saturating_mul(entry_bytes) > self.buf.len() - self.pos {
            return Err(self.err(format!("declares {n} entries but box is too short")));
        }
        Ok(n)
    }
}

fn read_track<R: Read + Seek>(
    trak: &BoxNode,
    file_len: u64,
    src: &mut R,
) -> Result<TrackSampleTable, Mp4Error> {
    let missing = |what: &str| Mp4Error::InconsistentSampleTable {
        track_id: 0,
        reason: format!("missing {what} box"),
    };

    let tkhd = read_box(src, trak.child(b"tkhd").ok_or_else(|| missing("tkhd"))?)?;
    let version = tkhd.first().copied().unwrap_or(0);
    let track_id = if version == 1 {
        be_u32(&tkhd, 20)
    } else {
        be_u32(&tkhd, 12)
    }
    .ok_or_else(|| missing("complete tkhd"))?;

    let mdia = trak.child(b"mdia").ok_or_else(|| missing("mdia"))?;
    let mdhd = read_box(src, mdia.child(b"mdhd").ok_or_else(|| missing("mdhd"))?)?;
    let mut r = TableReader::new(track_id, &mdhd, "mdhd");
    let version = r.u32()? >> 24;
    r.skip(if version == 1 { 16 } else { 8 })?;
    let timescale = r.u32()?;
    if timescale == 0 {
        return Err(r.err("timescale is zero"));
    }

    let hdlr = read_box(src, mdia.child(b"hdlr").ok_or_else(|| missing("hdlr"))?)?;
    let handler_fourcc = FourCC::from_slice(hdlr.get(8..12).unwrap_or_default())
        .ok_or_else(|| missing("complete hdlr"))?;

    let stbl = mdia
        .descend(&[b"minf", b"stbl"])
        .ok_or_else(|| missing("stbl"))?;
    let stsd = read_box(src, stbl.child(b"stsd").ok_or_else(|| missing("stsd"))?)?;
    let sample_format_fourcc = sample_format(&stsd).ok_or_else(|| missing("stsd entry"))?;

    // Time-to-sample: run-length (count, delta).
    let stts = read_box(src, stbl.child(b"stts").ok_or_else(|| missing("stts"))?)?;
    let mut r = TableReader::new(track_id, &stts, "stts");
    r.skip(4)?;
    let mut durations = Vec::new();
    for _ in 0..r.count(8)? {
        let count = r.u32()?;
        let delta = r.u32()?;
        if delta == 0 && count > 0 {
            return Err(r.err("zero sample duration makes decode times non-increasing"));
        }
        durations.extend(std::iter::repeat_n(delta, count as usize));
    }

    let stsz = read_box(src, stbl.child(b"stsz").ok_or_else(|| missing("stsz"))?)?;
    let mut r = TableReader::new(track_id, &stsz, "stsz");
    r.skip(4)?;
    let constant = r.u32()?;
    let sizes: Vec<u32> = if constant != 0 {
        let n = r.u32()? as usize;
        vec![constant; n]
    } else {
        let n = r.count(4)?;
        (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?
    };

    let stsc = read_box(src, stbl.child(b"stsc").ok_or_else(|| missing("stsc"))?)?;
    let mut r = TableReader::new(track_id, &stsc, "stsc");
    r.skip(4)?;
    let mut runs = Vec::new();
    for _ in 0..r.count(12)? {
        let first_chunk = r.u32()?;
        let per_chunk = r.u32()?;
        r.skip(4)?;
        runs.push((first_chunk, per_chunk));
    }

    let chunk_offsets: Vec<u64> = if let Some(stco) = stbl.child(b"stco") {
        let buf = read_box(src, stco)?;
        let mut r = TableReader::new(track_id, &buf, "stco");
        r.skip(4)?;
        let n = r.count(4)?;
        (0..n)
            .map(|_| r.u32().map(u64::from))
            .collect::<Result<_, _>>()?
    } else if let Some(co64) = stbl.child(b"co64") {
        let buf = read_box(src, co64)?;
        let mut r = TableReader::new(track_id, &buf, "co64");
        r.skip(4)?;
        let n = r.count(8)?;
        (0..n).map(|_| r.u64()).collect::<Result<_, _>>()?
    } else {
        return Err(missing("stco/co64"));
    };

    let inconsistent = |reason: String| Mp4Error::InconsistentSampleTable { track_id, reason };

    if durations.len() != sizes.len() {
        return Err(inconsistent(format!(
            "stts covers {} samples but stsz declares {}",
            durations.len(),
            sizes.len()
        )));
    }

    // Expand sample-to-chunk runs over every chunk.
    let mut per_chunk = Vec::with_capacity(chunk_offsets.len());
    for (i, &(first, n)) in runs.iter().enumerate() {
        let next = runs
            .get(i + 1)
            .map_or(chunk_offsets.len() as u64 + 1, |r| r.0 as u64);
        if first == 0 || (first as u64) >= next || (first as u64) > chunk_offsets.len() as u64 {
            return Err(inconsistent(format!(
                "stsc run {i} has invalid first chunk {first}"
            )));
        }
        per_chunk.extend(std::iter::repeat_n(n, (next - first as u64) as usize));
    }
    let chunked: u64 = per_chunk.iter().map(|&n| n as u64).sum();
    if chunked != sizes.len() as u64 || per_chunk.len() != chunk_offsets.len() {
        return Err(inconsistent(format!(
            "chunks hold {chunked} samples but stsz declares {}",
            sizes.len()
        )));
    }

    let mut samples = Vec::with_capacity(sizes.len());
    let mut decode_time = 0u64;
    let mut idx = 0usize;
    for (&chunk_offset, &n) in chunk_offsets.iter().zip(&per_chunk) {
        let mut offset = chunk_offset;
        for _ in 0..n {
            let size = sizes[idx];
            if offset + size as u64 > file_len {
                return Err(inconsistent(format!(
                    "sample {idx} [{offset}, +{size}) lies outside the {file_len}-byte file"
                )));
            }
            samples.push(Sample {
                file_offset: offset,
                size,
                decode_time,
                duration: durations[idx],
            });
            decode_time += durations[idx] as u64;
            offset += size as u64;
            idx += 1;
        }
    }

    Ok(TrackSampleTable {
        track_id,
        handler_fourcc,
        sample_format_fourcc,
        timescale,
        samples,
    })
}
