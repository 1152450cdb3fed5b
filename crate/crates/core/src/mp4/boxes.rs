// SPDX-License-Identifier: Apache-2.0

use std::io::{Read, Seek, SeekFrom};

use super::Mp4Error;
use crate::fourcc::FourCC;

/// Boxes whose payload is a plain sequence of child boxes.
const CONTAINERS: &[&[u8; 4]] = &[
    b"moov", b"trak", b"mdia", b"minf", b"stbl", b"dinf", b"edts", b"mvex", b"moof", b"traf",
    b"udta",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoxHeader {
    pub fourcc: FourCC,
    /// Total box size including the header.
    pub size: u64,
    /// Absolute position of the first header byte.
    pub offset: u64,
    /// 8, or 16 when the 64-bit extended size is used.
    pub header_len: u8,
}

impl BoxHeader {
    pub fn payload_offset(&self) -> u64 {
        self.offset + self.header_len as u64
    }

    pub fn payload_len(&self) -> u64 {
        self.size - self.header_len as u64
    }

    pub fn end(&self) -> u64 {
        self.offset + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxNode {
    pub header: BoxHeader,
    pub children: Vec<BoxNode>,
}

impl BoxNode {
    pub fn fourcc(&self) -> FourCC {
        self.header.fourcc
    }

    pub fn child(&self, fourcc: &[u8; 4]) -> Option<&BoxNode> {
        self.children.iter().find(|c| c.header.fourcc.0 == *fourcc)
    }

    pub fn children_of<'a>(&'a self, fourcc: &'a [u8; 4]) -> impl Iterator<Item = &'a BoxNode> {
        self.children
            .iter()
            .filter(move |c| c.header.fourcc.0 == *fourcc)
    }

    /// Follows a path of child types, taking the first match at each level.
    pub fn descend(&self, path: &[&[u8; 4]]) -> Option<&BoxNode> {
        path.iter()
            .try_fold(self, |node, fourcc| node.child(fourcc))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxTree {
    pub roots: Vec<BoxNode>,
    pub file_len: u64,
}

impl BoxTree {
    pub fn root(&self, fourcc: &[u8; 4]) -> Option<&BoxNode> {
        self.roots.iter().find(|c| c.header.fourcc.0 == *fourcc)
    }

    /// Number of boxes in the tree.
    pub fn len(&self) -> usize {
        fn count(nodes: &[BoxNode]) -> usize {
            nodes.iter().map(|n| 1 + count(&n.children)).sum()
        }
        count(&self.roots)
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

/// Walks the whole box hierarchy, reading only box headers.
pub fn parse_box_tree<R: Read + Seek>(src: &mut R) -> Result<BoxTree, Mp4Error> {
    let file_len = src.seek(SeekFrom::End(0))?;
    if file_len < 8 {
        return Err(Mp4Error::NotMp4(format!("file is only {file_len} bytes")));
    }
    let roots = parse_level(src, 0, file_len, file_len, true)?;
    if !roots
        .iter()
        .any(|b| matches!(&b.header.fourcc.0, b"ftyp" | b"moov"))
    {
        return Err(Mp4Error::NotMp4("no ftyp or moov box at top level".into()));
    }
    Ok(BoxTree { roots, file_len })
}

fn parse_level<R: Read + Seek>(
    src: &mut R,
    start: u64,
    end: u64,
    file_len: u64,
    top_level: bool,
) -> Result<Vec<BoxNode>, Mp4Error> {
    let mut nodes = Vec::new();
    let mut pos = start;
    while pos < end {
        let header = read_header(src, pos, end, file_len, top_level)?;
        let children = if CONTAINERS.contains(&header.fourcc.as_bytes()) {
            parse_level(src, header.payload_offset(), header.end(), file_len, false)?
        } else {
            Vec::new()
        };
        pos = header.end();
        nodes.push(BoxNode { header, children });
    }
    Ok(nodes)
}

/// Box types that may open an ISO-BMFF file.
const LEADING: &[&[u8; 4]] = &[
    b"ftyp", b"styp", b"moov", b"mdat", b"free", b"skip", b"wide", b"uuid", b"pdin", b"sidx",
    b"moof",
];

fn read_header<R: Read + Seek>(
    src: &mut R,
    offset: u64,
    parent_end: u64,
    file_len: u64,
    top_level: bool,
) -> Result<BoxHeader, Mp4Error> {
    let remaining = parent_end - offset;
    if remaining < 8 {
        return Err(Mp4Error::MalformedBox {
            offset,
            reason: format!("{remaining} trailing bytes cannot hold a box header"),
        });
    }
    src.seek(SeekFrom::Start(offset))?;
    let mut buf = [0u8; 8];
    src.read_exact(&mut buf)?;
    let size32 = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let fourcc = FourCC([buf[4], buf[5], buf[6], buf[7]]);
    // Anything but a known top-level box first means this is not a box
    // stream at all.
    if offset == 0 && !fourcc.is_printable() {
        return Err(Mp4Error::NotMp4(format!(
            "first box type {fourcc} is not ASCII"
        )));
    }
    if offset == 0 && !LEADING.contains(&fourcc.as_bytes()) {
        return Err(Mp4Error::NotMp4(format!(
            "file starts with '{fourcc}', not a top-level box"
        )));
    }

    let (size, header_len) = match size32 {
        0 if top_level => (file_len - offset, 8u8),
        0 => {
            return Err(Mp4Error::MalformedBox {
                offset,
                reason: format!("nested box '{fourcc}' uses size 0"),
            })
        }
        1 => {
            if remaining < 16 {
                return Err(Mp4Error::TruncatedFile {
                    fourcc,
                    offset,
                    declared: 16,
                    available: remaining,
                });
            }
            let mut ext = [0u8; 8];
            src.read_exact(&mut ext)?;
            (u64::from_be_bytes(ext), 16u8)
        }
        n => (n as u64, 8u8),
    };

    if size < header_len as u64 {
        return Err(Mp4Error::MalformedBox {
            offset,
            reason: format!(
                "box '{fourcc}' size {size} is smaller than its {header_len}-byte header"
            ),
        });
    }
    if offset + size > file_len {
        return Err(Mp4Error::TruncatedFile {
            fourcc,
            offset,
            declared: size,
            available: file_len - offset,
        });
    }
    if offset + size > parent_end {
        return Err(Mp4Error::MalformedBox {
            offset,
            reason: format!("box '{fourcc}' overruns its parent"),
        });
    }
    Ok(BoxHeader {
        fourcc,
        size,
        offset,
        header_len,
    })
}
