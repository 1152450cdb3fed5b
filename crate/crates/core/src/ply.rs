// SPDX-License-Identifier: Apache-2.0

//! PLY vertex I/O. Writes binary little-endian or ASCII with float32
//! coordinates; reads ASCII and both binary byte orders, any scalar types,
//! and skips non-vertex elements (including list properties).

use std::io::{self, BufRead, Read, Write};

use nalgebra::Vector3;

#[derive(Debug, thiserror::Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad PLY header: {0}")]
    Header(String),
    #[error("bad PLY body: {0}")]
    Body(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

/// Vertex attributes; optional channels have one entry per point when set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub points: Vec<Vector3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub quality: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Scalar> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:literal) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if little {
                    <$t>::from_le_bytes(arr)
                } else {
                    <$t>::from_be_bytes(arr)
                }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

pub fn write_ply<W: Write>(mut w: W, data: &PlyData, format: PlyFormat) -> Result<(), PlyError> {
    let n = data.points.len();
    let check = |len: usize, what: &str| {
        if len != n {
            Err(PlyError::Body(format!(
                "{what} has {len} entries for {n} points"
            )))
        } else {
            Ok(())
        }
    };
    if let Some(c) = &data.colors {
        check(c.len(), "colors")?;
    }
    if let Some(c) = &data.normals {
        check(c.len(), "normals")?;
    }
    if let Some(c) = &data.quality {
        check(c.len(), "quality")?;
    }

    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::BinaryBigEndian => "binary_big_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\nelement vertex {n}\n");
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if data.normals.is_some() {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    if data.colors.is_some() {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    if data.quality.is_some() {
        header.push_str("property float quality\n");
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let mut buf = Vec::with_capacity(64);
    for i in 0..n {
        buf.clear();
        let mut floats: Vec<f32> = data.points[i].iter().map(|&v| v as f32).collect();
        if let Some(nrm) = &data.normals {
            floats.extend(nrm[i].iter().map(|&v| v as f32));
        }
        let color = data.colors.as_ref().map(|c| c[i]);
        let quality = data.quality.as_ref().map(|q| q[i]);
        match format {
            PlyFormat::Ascii => {
                let mut fields: Vec<String> = floats.iter().map(|v| v.to_string()).collect();
                if let Some(c) = color {
                    fields.extend(c.iter().map(|v| v.to_string()));
                }
                if let Some(q) = quality {
                    fields.push(q.to_string());
                }
                buf.extend_from_slice(fields.join(" ").as_bytes());
                buf.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian | PlyFormat::BinaryBigEndian => {
                let le = format == PlyFormat::BinaryLittleEndian;
                let put = |buf: &mut Vec<u8>, v: f32| {
                    buf.extend_from_slice(&if le { v.to_le_bytes() } else { v.to_be_bytes() })
                };
                for v in floats {
                    put(&mut buf, v);
                }
                if let Some(c) = color {
                    buf.extend_from_slice(&c);
                }
                if let Some(q) = quality {
                    put(&mut buf, q);
                }
            }
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

fn read_line<R: BufRead>(r: &mut R) -> Result<String, PlyError> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Err(PlyError::Header("unexpected end of header".into()));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

pub fn read_ply<R: BufRead>(mut r: R) -> Result<PlyData, PlyError> {
    if read_line(&mut r)?.trim() != "ply" {
        return Err(PlyError::Header("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = read_line(&mut r)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", f, _] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => PlyFormat::BinaryBigEndian,
                    other => return Err(PlyError::Header(format!("unknown format {other}"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| PlyError::Header(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let ty = |s: &str| {
                    Scalar::parse(s).ok_or_else(|| PlyError::Header(format!("unknown type {s}")))
                };
                el.props.push(Property::List {
                    count: ty(c)?,
                    item: ty(i)?,
                });
            }
            ["property", t, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before element".into()))?;
                let ty = Scalar::parse(t)
                    .ok_or_else(|| PlyError::Header(format!("unknown type {t}")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(PlyError::Header(format!("unrecognized line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| PlyError::Header("missing format line".into()))?;

    let mut data = PlyData::default();
    for el in &elements {
        let names: Vec<Option<&str>> = el
            .props
            .iter()
            .map(|p| match p {
                Property::Scalar { name, .. } => Some(name.as_str()),
                Property::List { .. } => None,
            })
            .collect();
        let find = |n: &str| names.iter().position(|x| *x == Some(n));
        let is_vertex = el.name == "vertex";
        let xyz = [find("x"), find("y"), find("z")];
        let nxyz = [find("nx"), find("ny"), find("nz")];
        let rgb = [find("red"), find("green"), find("blue")];
        let qual = find("quality");
        if is_vertex {
            if xyz.iter().any(Option::is_none) {
                return Err(PlyError::Header("vertex element lacks x/y/z".into()));
            }
            data.points.reserve(el.count);
            if nxyz.iter().all(Option::is_some) {
                data.normals = Some(Vec::with_capacity(el.count));
            }
            if rgb.iter().all(Option::is_some) {
                data.colors = Some(Vec::with_capacity(el.count));
            }
            if qual.is_some() {
                data.quality = Some(Vec::with_capacity(el.count));
            }
        }

        for row in 0..el.count {
            let values = match format {
                PlyFormat::Ascii => read_ascii_row(&mut r, el, row)?,
                _ => read_binary_row(&mut r, el, format == PlyFormat::BinaryLittleEndian)?,
            };
            if !is_vertex {
                continue;
            }
            let get = |i: Option<usize>| values[i.unwrap()];
            data.points
                .push(Vector3::new(get(xyz[0]), get(xyz[1]), get(xyz[2])));
            if let Some(n) = &mut data.normals {
                n.push(Vector3::new(get(nxyz[0]), get(nxyz[1]), get(nxyz[2])));
            }
            if let Some(c) = &mut data.colors {
                c.push(rgb.map(|i| get(i).clamp(0.0, 255.0) as u8));
            }
            if let Some(q) = &mut data.quality {
                q.push(get(qual) as f32);
            }
        }
    }
    Ok(data)
}

/// Scalar property values of one row; list properties yield NaN.
fn read_ascii_row<R: BufRead>(r: &mut R, el: &Element, row: usize) -> Result<Vec<f64>, PlyError> {
    let line =
        read_line(r).map_err(|_| PlyError::Body(format!("{} row {row} missing", el.name)))?;
    let mut toks = line.split_whitespace();
    let mut next = || -> Result<f64, PlyError> {
        let t = toks
            .next()
            .ok_or_else(|| PlyError::Body(format!("{} row {row} too short", el.name)))?;
        t.parse()
            .map_err(|_| PlyError::Body(format!("{} row {row}: bad number {t:?}", el.name)))
    };
    let mut out = Vec::with_capacity(el.props.len());
    for p in &el.props {
        match p {
            Property::Scalar { .. } => out.push(next()?),
            Property::List { .. } => {
                let n = next()? as usize;
                for _ in 0..n {
                    next()?;
                }
                out.push(f64::NAN);
            }
        }
    }
    Ok(out)
}

fn read_binary_row<R: Read>(r: &mut R, el: &Element, little: bool) -> Result<Vec<f64>, PlyError> {
    let mut out = Vec::with_capacity(el.props.len());
    let mut buf = [0u8; 8];
    for p in &el.props {
        match p {
            Property::Scalar { ty, .. } => {
                r.read_exact(&mut buf[..ty.size()])?;
                out.push(ty.decode(&buf, little));
            }
            Property::List { count, item } => {
                r.read_exact(&mut buf[..count.size()])?;
                let n = count.decode(&buf, little) as usize;
                let mut skip = vec![0u8; n * item.size()];
                r.read_exact(&mut skip)?;
                out.push(f64::NAN);
            }
        }
    }
    Ok(out)
}
