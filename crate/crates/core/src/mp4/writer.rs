// SPDX-License-Identifier: Apache-2.0

//! Minimal MP4 writer for test fixtures: an `ftyp`, one `mdat` and a `moov`
//! with an optional dummy video track plus a `gpmd` telemetry track. The
//! byte layout follows ISO-BMFF so real parsers accept it as well.

#[derive(Debug, Clone)]
pub struct Mp4Fixture {
    pub timescale: u32,
    /// Telemetry payload bytes and their durations in `timescale` ticks.
    pub payloads: Vec<(Vec<u8>, u32)>,
    pub include_video: bool,
    pub include_telemetry: bool,
    /// Write 64-bit chunk offsets and a 64-bit `mdat` header.
    pub use_co64: bool,
    pub samples_per_chunk: u32,
}

impl Default for Mp4Fixture {
    fn default() -> Self {
        Mp4Fixture {
            timescale: 1000,
            payloads: Vec::new(),
            include_video: true,
            include_telemetry: true,
            use_co64: false,
            samples_per_chunk: 1,
        }
    }
}

const VIDEO_SAMPLE: usize = 64;
const VIDEO_TIMESCALE: u32 = 30000;
const VIDEO_DELTA: u32 = 1001;

struct TrackSpec<'a> {
    track_id: u32,
    handler: &'a [u8; 4],
    format: &'a [u8; 4],
    timescale: u32,
    sizes: Vec<u32>,
    durations: Vec<u32>,
    first_offset: u64,
}

pub fn write_mp4_fixture(fx: &Mp4Fixture) -> Vec<u8> {
    let mut out = Vec::new();
    write_box(&mut out, b"ftyp", |b| {
        b.extend_from_slice(b"mp41");
        b.extend_from_slice(&0u32.to_be_bytes());
        b.extend_from_slice(b"mp41mp42");
    });

    let n_video = if fx.include_video {
        fx.payloads.len().max(1) * 3
    } else {
        0
    };
    let video_bytes = n_video * VIDEO_SAMPLE;
    let telemetry_bytes: usize = fx.payloads.iter().map(|(p, _)| p.len()).sum();
    let mdat_header = if fx.use_co64 { 16 } else { 8 };
    let data_start = out.len() as u64 + mdat_header;

    let mdat_size = mdat_header as usize + video_bytes + telemetry_bytes;
    if fx.use_co64 {
        out.extend_from_slice(&1u32.to_be_bytes());
        out.extend_from_slice(b"mdat");
        out.extend_from_slice(&(mdat_size as u64).to_be_bytes());
    } else {
        out.extend_from_slice(&(mdat_size as u32).to_be_bytes());
        out.extend_from_slice(b"mdat");
    }
    for i in 0..video_bytes {
        out.push((i % 251) as u8);
    }
    for (p, _) in &fx.payloads {
        out.extend_from_slice(p);
    }

    let mut tracks = Vec::new();
    if fx.include_video {
        tracks.push(TrackSpec {
            track_id: 1,
            handler: b"vide",
            format: b"hvc1",
            timescale: VIDEO_TIMESCALE,
            sizes: vec![VIDEO_SAMPLE as u32; n_video],
            durations: vec![VIDEO_DELTA; n_video],
            first_offset: data_start,
        });
    }
    if fx.include_telemetry {
        tracks.push(TrackSpec {
            track_id: 2,
            handler: b"meta",
            format: b"gpmd",
            timescale: fx.timescale,
            sizes: fx.payloads.iter().map(|(p, _)| p.len() as u32).collect(),
            durations: fx.payloads.iter().map(|&(_, d)| d).collect(),
            first_offset: data_start + video_bytes as u64,
        });
    }

    write_box(&mut out, b"moov", |b| {
        write_full_box(b, b"mvhd", 0, 0, |b| {
            b.extend_from_slice(&[0u8; 8]);
            b.extend_from_slice(&1000u32.to_be_bytes());
            b.extend_from_slice(&0u32.to_be_bytes());
            b.extend_from_slice(&0x0001_0000u32.to_be_bytes());
            b.extend_from_slice(&0x0100u16.to_be_bytes());
            b.extend_from_slice(&[0u8; 10]);
            write_identity_matrix(b);
            b.extend_from_slice(&[0u8; 24]);
            b.extend_from_slice(&3u32.to_be_bytes());
        });
        for t in &tracks {
            write_track(b, t, fx.samples_per_chunk.max(1), fx.use_co64);
        }
    });
    out
}

fn write_track(out: &mut Vec<u8>, t: &TrackSpec<'_>, per_chunk: u32, co64: bool) {
    write_box(out, b"trak", |b| {
        write_full_box(b, b"tkhd", 0, 3, |b| {
            b.extend_from_slice(&[0u8; 8]);
            b.extend_from_slice(&t.track_id.to_be_bytes());
            b.extend_from_slice(&[0u8; 4]);
            b.extend_from_slice(&0u32.to_be_bytes());
            b.extend_from_slice(&[0u8; 16]);
            write_identity_matrix(b);
            b.extend_from_slice(&[0u8; 8]);
        });
        write_box(b, b"mdia", |b| {
            write_full_box(b, b"mdhd", 0, 0, |b| {
                b.extend_from_slice(&[0u8; 8]);
                b.extend_from_slice(&t.timescale.to_be_bytes());
                let total: u64 = t.durations.iter().map(|&d| d as u64).sum();
                b.extend_from_slice(&(total as u32).to_be_bytes());
                b.extend_from_slice(&0x55c4u16.to_be_bytes());
                b.extend_from_slice(&[0u8; 2]);
            });
            write_full_box(b, b"hdlr", 0, 0, |b| {
                b.extend_from_slice(&[0u8; 4]);
                b.extend_from_slice(t.handler);
                b.extend_from_slice(&[0u8; 12]);
                b.extend_from_slice(b"fixture\0");
            });
            write_box(b, b"minf", |b| {
                write_box(b, b"stbl", |b| write_stbl(b, t, per_chunk, co64));
            });
        });
    });
}

fn write_stbl(b: &mut Vec<u8>, t: &TrackSpec<'_>, per_chunk: u32, co64: bool) {
    write_full_box(b, b"stsd", 0, 0, |b| {
        b.extend_from_slice(&1u32.to_be_bytes());
        b.extend_from_slice(&16u32.to_be_bytes());
        b.extend_from_slice(t.format);
        b.extend_from_slice(&[0u8; 6]);
        b.extend_from_slice(&1u16.to_be_bytes());
    });

    // Run-length encode durations.
    let mut runs: Vec<(u32, u32)> = Vec::new();
    for &d in &t.durations {
        match runs.last_mut() {
            Some((count, delta)) if *delta == d => *count += 1,
            _ => runs.push((1, d)),
        }
    }
    write_full_box(b, b"stts", 0, 0, |b| {
        b.extend_from_slice(&(runs.len() as u32).to_be_bytes());
        for (count, delta) in &runs {
            b.extend_from_slice(&count.to_be_bytes());
            b.extend_from_slice(&delta.to_be_bytes());
        }
    });

    let uniform = t.sizes.windows(2).all(|w| w[0] == w[1]) && !t.sizes.is_empty();
    write_full_box(b, b"stsz", 0, 0, |b| {
        if uniform {
            b.extend_from_slice(&t.sizes[0].to_be_bytes());
            b.extend_from_slice(&(t.sizes.len() as u32).to_be_bytes());
        } else {
            b.extend_from_slice(&0u32.to_be_bytes());
            b.extend_from_slice(&(t.sizes.len() as u32).to_be_bytes());
            for s in &t.sizes {
                b.extend_from_slice(&s.to_be_bytes());
            }
        }
    });

    let chunk_sizes: Vec<u32> = t
        .sizes
        .chunks(per_chunk as usize)
        .map(|c| c.len() as u32)
        .collect();
    let mut stsc: Vec<(u32, u32)> = Vec::new();
    for (i, &n) in chunk_sizes.iter().enumerate() {
        if stsc.last().map(|r| r.1) != Some(n) {
            stsc.push((i as u32 + 1, n));
        }
    }
    write_full_box(b, b"stsc", 0, 0, |b| {
        b.extend_from_slice(&(stsc.len() as u32).to_be_bytes());
        for (first, n) in &stsc {
            b.extend_from_slice(&first.to_be_bytes());
            b.extend_from_slice(&n.to_be_bytes());
            b.extend_from_slice(&1u32.to_be_bytes());
        }
    });

    let mut offsets = Vec::with_capacity(chunk_sizes.len());
    let mut at = t.first_offset;
    for chunk in t.sizes.chunks(per_chunk as usize) {
        offsets.push(at);
        at += chunk.iter().map(|&s| s as u64).sum::<u64>();
    }
    if co64 {
        write_full_box(b, b"co64", 0, 0, |b| {
            b.extend_from_slice(&(offsets.len() as u32).to_be_bytes());
            for o in &offsets {
                b.extend_from_slice(&o.to_be_bytes());
            }
        });
    } else {
        write_full_box(b, b"stco", 0, 0, |b| {
            b.extend_from_slice(&(offsets.len() as u32).to_be_bytes());
            for &o in &offsets {
                b.extend_from_slice(&(o as u32).to_be_bytes());
            }
        });
    }
}

fn write_identity_matrix(b: &mut Vec<u8>) {
    for v in [0x0001_0000u32, 0, 0, 0, 0x0001_0000, 0, 0, 0, 0x4000_0000] {
        b.extend_from_slice(&v.to_be_bytes());
    }
}

fn write_box(out: &mut Vec<u8>, fourcc: &[u8; 4], body: impl FnOnce(&mut Vec<u8>)) {
    let start = out.len();
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(fourcc);
    body(out);
    let size = (out.len() - start) as u32;
    out[start..start + 4].copy_from_slice(&size.to_be_bytes());
}

fn write_full_box(
    out: &mut Vec<u8>,
    fourcc: &[u8; 4],
    version: u8,
    flags: u32,
    body: impl FnOnce(&mut Vec<u8>),
) {
    write_box(out, fourcc, |b| {
        b.extend_from_slice(&((version as u32) << 24 | flags).to_be_bytes());
        body(b);
    });
}
