// SPDX-License-Identifier: Apache-2.0

use std::fmt::Write as _;

use super::GpmfError;
use crate::fourcc::FourCC;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KlvHeader {
    pub key: FourCC,
    /// 0 for a nested container, otherwise a scalar type letter.
    pub type_code: u8,
    /// Bytes per item (one sample, all channels).
    pub item_size: u8,
    pub repeat: u16,
}

impl KlvHeader {
    pub fn data_len(&self) -> usize {
        self.item_size as usize * self.repeat as usize
    }

    pub fn padded_len(&self) -> usize {
        (self.data_len() + 3) & !3
    }

    pub fn is_container(&self) -> bool {
        self.type_code == 0
    }

    fn read(buf: &[u8]) -> Self {
        KlvHeader {
            key: FourCC([buf[0], buf[1], buf[2], buf[3]]),
            type_code: buf[4],
            item_size: buf[5],
            repeat: u16::from_be_bytes([buf[6], buf[7]]),
        }
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self.key.as_bytes());
        out.push(self.type_code);
        out.push(self.item_size);
        out.extend_from_slice(&self.repeat.to_be_bytes());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KlvNode {
    pub header: KlvHeader,
    /// Populated for containers.
    pub children: Vec<KlvNode>,
    /// Unpadded data bytes for leaves; empty for containers.
    pub raw: Vec<u8>,
}

/// Decoded scalar payload of a leaf, one variant per GPMF type letter.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalars {
    I8(Vec<i8>),
    U8(Vec<u8>),
    I16(Vec<i16>),
    U16(Vec<u16>),
    I32(Vec<i32>),
    U32(Vec<u32>),
    I64(Vec<i64>),
    U64(Vec<u64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
    /// `c`: ASCII characters.
    Ascii(Vec<u8>),
    /// `F`: four-character codes.
    FourCC(Vec<FourCC>),
    /// `U`: 16-byte UTC date strings, `yymmddhhmmss.sss`.
    Utc(Vec<[u8; 16]>),
    /// `G`: 128-bit identifiers.
    Guid(Vec<[u8; 16]>),
    /// `q`: Q15.16 fixed point.
    Fixed32(Vec<i32>),
    /// `Q`: Q31.32 fixed point.
    Fixed64(Vec<i64>),
}

macro_rules! be_chunks {
    ($raw:expr, $t:ty, $n:literal) => {
        $raw.chunks_exact($n)
            .map(|c| <$t>::from_be_bytes(c.try_into().unwrap()))
            .collect()
    };
}

impl Scalars {
    /// Element width in bytes for a type letter, `None` for containers,
    /// complex (`?`) and unknown letters.
    pub fn elem_size(type_code: u8) -> Option<usize> {
        Some(match type_code {
            b'b' | b'B' | b'c' => 1,
            b's' | b'S' => 2,
            b'l' | b'L' | b'f' | b'F' | b'q' => 4,
            b'j' | b'J' | b'd' | b'Q' => 8,
            b'U' | b'G' => 16,
            _ => return None,
        })
    }

    pub fn type_code(&self) -> u8 {
        match self {
            Scalars::I8(_) => b'b',
            Scalars::U8(_) => b'B',
            Scalars::I16(_) => b's',
            Scalars::U16(_) => b'S',
            Scalars::I32(_) => b'l',
            Scalars::U32(_) => b'L',
            Scalars::I64(_) => b'j',
            Scalars::U64(_) => b'J',
            Scalars::F32(_) => b'f',
            Scalars::F64(_) => b'd',
            Scalars::Ascii(_) => b'c',
            Scalars::FourCC(_) => b'F',
            Scalars::Utc(_) => b'U',
            Scalars::Guid(_) => b'G',
            Scalars::Fixed32(_) => b'q',
            Scalars::Fixed64(_) => b'Q',
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Scalars::I8(v) => v.len(),
            Scalars::U8(v) | Scalars::Ascii(v) => v.len(),
            Scalars::I16(v) => v.len(),
            Scalars::U16(v) => v.len(),
            Scalars::I32(v) | Scalars::Fixed32(v) => v.len(),
            Scalars::U32(v) => v.len(),
            Scalars::I64(v) | Scalars::Fixed64(v) => v.len(),
            Scalars::U64(v) => v.len(),
            Scalars::F32(v) => v.len(),
            Scalars::F64(v) => v.len(),
            Scalars::FourCC(v) => v.len(),
            Scalars::Utc(v) | Scalars::Guid(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn decode(type_code: u8, raw: &[u8]) -> Option<Scalars> {
        let size = Self::elem_size(type_code)?;
        let raw = &raw[..raw.len() - raw.len() % size];
        Some(match type_code {
            b'b' => Scalars::I8(raw.iter().map(|&b| b as i8).collect()),
            b'B' => Scalars::U8(raw.to_vec()),
            b'c' => Scalars::Ascii(raw.to_vec()),
            b's' => Scalars::I16(be_chunks!(raw, i16, 2)),
            b'S' => Scalars::U16(be_chunks!(raw, u16, 2)),
            b'l' => Scalars::I32(be_chunks!(raw, i32, 4)),
            b'L' => Scalars::U32(be_chunks!(raw, u32, 4)),
            b'q' => Scalars::Fixed32(be_chunks!(raw, i32, 4)),
            b'f' => Scalars::F32(be_chunks!(raw, f32, 4)),
            b'F' => Scalars::FourCC(
                raw.chunks_exact(4)
                    .map(|c| FourCC::from_slice(c).unwrap())
                    .collect(),
            ),
            b'j' => Scalars::I64(be_chunks!(raw, i64, 8)),
            b'J' => Scalars::U64(be_chunks!(raw, u64, 8)),
            b'Q' => Scalars::Fixed64(be_chunks!(raw, i64, 8)),
            b'd' => Scalars::F64(be_chunks!(raw, f64, 8)),
            b'U' => Scalars::Utc(
                raw.chunks_exact(16)
                    .map(|c| c.try_into().unwrap())
                    .collect(),
            ),
            b'G' => Scalars::Guid(
                raw.chunks_exact(16)
                    .map(|c| c.try_into().unwrap())
                    .collect(),
            ),
            _ => return None,
        })
    }

    pub fn to_be_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Scalars::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            Scalars::U8(v) | Scalars::Ascii(v) => out.extend_from_slice(v),
            Scalars::I16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            Scalars::U16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            Scalars::I32(v) | Scalars::Fixed32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            Scalars::U32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            Scalars::I64(v) | Scalars::Fixed64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            Scalars::U64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            Scalars::F32(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            Scalars::F64(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            Scalars::FourCC(v) => v.iter().for_each(|x| out.extend_from_slice(x.as_bytes())),
            Scalars::Utc(v) | Scalars::Guid(v) => v.iter().for_each(|x| out.extend_from_slice(x)),
        }
        out
    }

    /// Numeric view; fixed-point types are converted to their real value.
    pub fn to_f64(&self) -> Option<Vec<f64>> {
        Some(match self {
            Scalars::I8(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::U8(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::I16(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::U16(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::I32(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::U32(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::I64(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::U64(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Scalars::F64(v) => v.clone(),
            Scalars::Fixed32(v) => v.iter().map(|&x| x as f64 / 65536.0).collect(),
            Scalars::Fixed64(v) => v.iter().map(|&x| x as f64 / 4294967296.0).collect(),
            Scalars::Ascii(_) | Scalars::FourCC(_) | Scalars::Utc(_) | Scalars::Guid(_) => {
                return None
            }
        })
    }
}

impl KlvNode {
    pub fn key(&self) -> FourCC {
        self.header.key
    }

    pub fn container(key: FourCC, children: Vec<KlvNode>) -> Self {
        let len: usize = children.iter().map(|c| 8 + c.header.padded_len()).sum();
        let (item_size, repeat) = if len <= u16::MAX as usize {
            (1, len as u16)
        } else {
            (4, (len / 4) as u16)
        };
        KlvNode {
            header: KlvHeader {
                key,
                type_code: 0,
                item_size,
                repeat,
            },
            children,
            raw: Vec::new(),
        }
    }

    /// Leaf holding `values` grouped into items of `channels` elements.
    pub fn leaf(key: FourCC, values: &Scalars, channels: usize) -> Self {
        let code = values.type_code();
        let elem = Scalars::elem_size(code).unwrap();
        let channels = channels.max(1);
        KlvNode {
            header: KlvHeader {
                key,
                type_code: code,
                item_size: (elem * channels) as u8,
                repeat: (values.len() / channels) as u16,
            },
            children: Vec::new(),
            raw: values.to_be_bytes(),
        }
    }

    /// Leaf with arbitrary header and opaque bytes.
    pub fn opaque(key: FourCC, type_code: u8, item_size: u8, repeat: u16, raw: Vec<u8>) -> Self {
        KlvNode {
            header: KlvHeader {
                key,
                type_code,
                item_size,
                repeat,
            },
            children: Vec::new(),
            raw,
        }
    }

    pub fn child(&self, key: FourCC) -> Option<&KlvNode> {
        self.children.iter().find(|c| c.header.key == key)
    }

    pub fn scalars(&self) -> Result<Scalars, GpmfError> {
        let code = self.header.type_code;
        let elem = Scalars::elem_size(code).ok_or(GpmfError::BadTypeCode {
            key: self.header.key,
            code: code as char,
        })?;
        if !(self.header.item_size as usize).is_multiple_of(elem) {
            return Err(GpmfError::BadItemSize {
                key: self.header.key,
                item_size: self.header.item_size,
                elem,
            });
        }
        Ok(Scalars::decode(code, &self.raw).expect("known type letter"))
    }

    /// Elements per item, when the type letter is known.
    pub fn channels(&self) -> Option<usize> {
        let elem = Scalars::elem_size(self.header.type_code)?;
        Some(self.header.item_size as usize / elem)
    }

    /// Leaf as text (`c` and `U` types), trailing NULs trimmed.
    pub fn text(&self) -> Option<String> {
        match self.header.type_code {
            b'c' | b'U' => {
                let s = String::from_utf8_lossy(&self.raw);
                Some(s.trim_end_matches('\0').to_string())
            }
            _ => None,
        }
    }
}

/// Parses a GPMF byte block into its top-level records.
pub fn parse_klv(bytes: &[u8]) -> Result<Vec<KlvNode>, GpmfError> {
    if !bytes.len().is_multiple_of(4) {
        return Err(GpmfError::Misaligned(bytes.len()));
    }
    parse_nodes(bytes, 0)
}

fn parse_nodes(buf: &[u8], base: usize) -> Result<Vec<KlvNode>, GpmfError> {
    let mut nodes = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let rest = &buf[pos..];
        // Zero fill after the last record.
        if rest.iter().all(|&b| b == 0) {
            break;
        }
        if rest.len() < 8 {
            return Err(GpmfError::TruncatedKlv {
                key: FourCC::from_slice(rest).unwrap_or_default(),
                offset: base + pos,
                declared: 8,
                available: rest.len(),
            });
        }
        let header = KlvHeader::read(rest);
        if !header.key.is_printable() {
            return Err(GpmfError::InvalidKey {
                key: header.key,
                offset: base + pos,
            });
        }
        let body = &rest[8..];
        if header.padded_len() > body.len() {
            return Err(GpmfError::TruncatedKlv {
                key: header.key,
                offset: base + pos,
                declared: header.padded_len(),
                available: body.len(),
            });
        }
        let data = &body[..header.data_len()];
        let node = if header.is_container() {
            KlvNode {
                header,
                children: parse_nodes(data, base + pos + 8)?,
                raw: Vec::new(),
            }
        } else {
            KlvNode {
                header,
                children: Vec::new(),
                raw: data.to_vec(),
            }
        };
        nodes.push(node);
        pos += 8 + header.padded_len();
    }
    Ok(nodes)
}

/// Serializes records exactly as their headers declare, zero-padding each
/// to 32 bits.
pub fn encode_klv(nodes: &[KlvNode]) -> Vec<u8> {
    let mut out = Vec::new();
    for n in nodes {
        encode_node(n, &mut out);
    }
    out
}

fn encode_node(node: &KlvNode, out: &mut Vec<u8>) {
    node.header.write(out);
    let start = out.len();
    if node.header.is_container() {
        for c in &node.children {
            encode_node(c, out);
        }
    } else {
        out.extend_from_slice(&node.raw);
    }
    let target = start + node.header.padded_len();
    out.resize(target.max(out.len()), 0);
    while !out.len().is_multiple_of(4) {
        out.push(0);
    }
}

/// Indented one-line-per-record listing: key, type, size, repeat, and a short
/// value preview for leaves.
pub fn dump_tree(nodes: &[KlvNode]) -> String {
    let mut out = String::new();
    dump_level(nodes, 0, &mut out);
    out
}

fn dump_level(nodes: &[KlvNode], depth: usize, out: &mut String) {
    for n in nodes {
        let h = &n.header;
        let type_label = if h.is_container() {
            "0".to_string()
        } else {
            (h.type_code as char).to_string()
        };
        let _ = write!(
            out,
            "{:indent$}{} type={} size={} repeat={}",
            "",
            h.key,
            type_label,
            h.item_size,
            h.repeat,
            indent = depth * 2
        );
        if let Some(text) = n.text() {
            let _ = write!(out, " \"{}\"", text.escape_default());
        } else if let Ok(values) = n.scalars() {
            if let Some(nums) = values.to_f64() {
                let preview: Vec<String> = nums.iter().take(6).map(|v| format!("{v}")).collect();
                let more = if nums.len() > 6 { " ..." } else { "" };
                let _ = write!(out, " [{}{}]", preview.join(", "), more);
            }
        }
        out.push('\n');
        dump_level(&n.children, depth + 1, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(s: &[u8; 4]) -> FourCC {
        FourCC(*s)
    }

    #[test]
    fn signed_long_leaf() {
        let mut bytes = b"DEMO".to_vec();
        bytes.extend_from_slice(&[b'l', 4, 0, 2]);
        bytes.extend_from_slice(&1i32.to_be_bytes());
        bytes.extend_from_slice(&(-2i32).to_be_bytes());
        assert_eq!(bytes.len(), 16);
        let nodes = parse_klv(&bytes).unwrap();
        assert_eq!(nodes.len(), 1);
        assert_eq!(nodes[0].header.key, key(b"DEMO"));
        assert_eq!(nodes[0].scalars().unwrap(), Scalars::I32(vec![1, -2]));
    }

    #[test]
    fn zero_repeat_leaf() {
        let bytes = [b'E', b'M', b'P', b'T', b's', 2, 0, 0];
        let nodes = parse_klv(&bytes).unwrap();
        assert_eq!(nodes[0].header.repeat, 0);
        assert!(nodes[0].scalars().unwrap().is_empty());
    }

    #[test]
    fn container_shorter_than_declared() {
        let mut bytes = b"DEVC".to_vec();
        bytes.extend_from_slice(&[0, 1, 0, 8]);
        bytes.extend_from_slice(b"ABCD");
        let err = parse_klv(&bytes).unwrap_err();
        assert_eq!(
            err,
            GpmfError::TruncatedKlv {
                key: key(b"DEVC"),
                offset: 0,
                declared: 8,
                available: 4
            }
        );
    }

    #[test]
    fn padding_is_consumed() {
        let node = KlvNode::leaf(key(b"STNM"), &Scalars::Ascii(b"Gyro".to_vec()), 1);
        let dev = KlvNode::container(
            key(b"DEVC"),
            vec![
                KlvNode::leaf(key(b"TEST"), &Scalars::U8(vec![1, 2, 3]), 1),
                node,
            ],
        );
        let bytes = encode_klv(std::slice::from_ref(&dev));
        assert_eq!(bytes.len(), 8 + 12 + 12);
        assert_eq!(parse_klv(&bytes).unwrap(), vec![dev]);
    }

    #[test]
    fn unknown_letters_stay_opaque() {
        let node = KlvNode::opaque(key(b"WHAT"), b'Z', 3, 1, vec![9, 8, 7]);
        let bytes = encode_klv(std::slice::from_ref(&node));
        let parsed = parse_klv(&bytes).unwrap();
        assert_eq!(parsed, vec![node]);
        assert!(matches!(
            parsed[0].scalars(),
            Err(GpmfError::BadTypeCode { code: 'Z', .. })
        ));
    }

    #[test]
    fn trailing_zero_fill_is_ignored() {
        let leaf = KlvNode::leaf(key(b"ABCD"), &Scalars::I16(vec![5, 6]), 2);
        let mut bytes = encode_klv(std::slice::from_ref(&leaf));
        bytes.extend_from_slice(&[0u8; 8]);
        assert_eq!(parse_klv(&bytes).unwrap(), vec![leaf]);
    }

    #[test]
    fn non_ascii_key_rejected() {
        let bytes = [0xff, b'A', b'B', b'C', b'B', 1, 0, 0];
        assert!(matches!(
            parse_klv(&bytes),
            Err(GpmfError::InvalidKey { .. })
        ));
    }

    #[test]
    fn fixed_point_converts() {
        let q = Scalars::Fixed32(vec![65536 + 32768]);
        assert_eq!(q.to_f64().unwrap(), vec![1.5]);
    }

    #[test]
    fn dump_lists_every_record() {
        let tree = KlvNode::container(
            key(b"DEVC"),
            vec![KlvNode::container(
                key(b"STRM"),
                vec![
                    KlvNode::leaf(key(b"STNM"), &Scalars::Ascii(b"Gyro".to_vec()), 1),
                    KlvNode::leaf(key(b"GYRO"), &Scalars::I16(vec![1, 2, 3]), 3),
                ],
            )],
        );
        let text = dump_tree(&[tree]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("DEVC type=0"));
        assert_eq!(lines[2], "    STNM type=c size=1 repeat=4 \"Gyro\"");
        assert_eq!(lines[3], "    GYRO type=s size=6 repeat=1 [1, 2, 3]");
    }
}
