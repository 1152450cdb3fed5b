// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use super::{GpmfError, KlvNode, ACCL, GPS5, GYRO, SCAL, SHUT, STRM};
use crate::fourcc::FourCC;

const SIUN: FourCC = FourCC(*b"SIUN");
const UNIT: FourCC = FourCC(*b"UNIT");
const ORIN: FourCC = FourCC(*b"ORIN");

/// How device channels were re-ordered into camera (x, y, z).
///
/// Output axis `k` is `sign[k] * input[source[k]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisMapping {
    pub source: [usize; 3],
    pub sign: [f64; 3],
    /// The orientation string the mapping came from, e.g. `ZXY`; `XYZ` when
    /// the stream carried none and channels were kept in device order.
    pub orientation: String,
}

impl AxisMapping {
    pub fn identity() -> Self {
        AxisMapping {
            source: [0, 1, 2],
            sign: [1.0; 3],
            orientation: "XYZ".into(),
        }
    }

    /// Parses a GoPro `ORIN` string: character `i` names the camera axis of
    /// device channel `i`, lowercase meaning negated.
    pub fn from_orientation(orin: &str) -> Result<Self, GpmfError> {
        let bad = || GpmfError::BadOrientation(orin.to_string());
        let chars: Vec<char> = orin.chars().collect();
        if chars.len() != 3 {
            return Err(bad());
        }
        let mut source = [usize::MAX; 3];
        let mut sign = [1.0; 3];
        for (channel, c) in chars.iter().enumerate() {
            let axis = match c.to_ascii_uppercase() {
                'X' => 0,
                'Y' => 1,
                'Z' => 2,
                _ => return Err(bad()),
            };
            if source[axis] != usize::MAX {
                return Err(bad());
            }
            source[axis] = channel;
            sign[axis] = if c.is_ascii_lowercase() { -1.0 } else { 1.0 };
        }
        Ok(AxisMapping {
            source,
            sign,
            orientation: orin.to_string(),
        })
    }

    pub fn apply(&self, row: &[f64]) -> [f64; 3] {
        std::array::from_fn(|k| self.sign[k] * row[self.source[k]])
    }

    pub fn is_identity(&self) -> bool {
        self.source == [0, 1, 2] && self.sign == [1.0; 3]
    }

    /// `x=+ch0,y=+ch1,z=+ch2` style description.
    pub fn describe(&self) -> String {
        ["x", "y", "z"]
            .iter()
            .enumerate()
            .map(|(k, axis)| {
                let s = if self.sign[k] < 0.0 { '-' } else { '+' };
                format!("{axis}={s}ch{}", self.source[k])
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// A sensor stream in physical units: `values` is row-major, `channels` wide.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub key: FourCC,
    pub channels: usize,
    pub values: Vec<f64>,
    pub scale: Vec<f64>,
    pub units_label: Option<String>,
    /// Set for 3-channel inertial streams.
    pub axis_mapping: Option<AxisMapping>,
}

impl SensorStream {
    pub fn len(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.values.len() / self.channels
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.channels.max(1))
    }

    pub fn vec3(&self, i: usize) -> [f64; 3] {
        let r = self.row(i);
        [r[0], r[1], r[2]]
    }
}

fn expected_channels(key: FourCC) -> Option<usize> {
    match key {
        k if k == ACCL || k == GYRO => Some(3),
        k if k == SHUT => Some(1),
        k if k == GPS5 => Some(5),
        _ => None,
    }
}

fn collect_streams<'a>(nodes: &'a [KlvNode], out: &mut Vec<&'a KlvNode>) {
    for n in nodes {
        if n.header.key == STRM && n.header.is_container() {
            out.push(n);
        }
        collect_streams(&n.children, out);
    }
}

/// Finds every `STRM` holding `key` and returns its data divided by the
/// sibling `SCAL`. Multiple matching streams are concatenated in order.
pub fn extract_stream(root: &[KlvNode], key: FourCC) -> Result<SensorStream, GpmfError> {
    let mut streams = Vec::new();
    collect_streams(root, &mut streams);

    let mut result: Option<SensorStream> = None;
    for strm in streams {
        let Some(data) = strm.children.iter().find(|c| c.header.key == key) else {
            continue;
        };
        let part = decode_stream(strm, data)?;
        match &mut result {
            None => result = Some(part),
            Some(acc) => {
                if acc.channels != part.channels {
                    return Err(GpmfError::ChannelCount {
                        key,
                        found: part.channels,
                        expected: acc.channels,
                    });
                }
                acc.values.extend(part.values);
            }
        }
    }
    result.ok_or(GpmfError::StreamNotFound(key))
}

fn decode_stream(strm: &KlvNode, data: &KlvNode) -> Result<SensorStream, GpmfError> {
    let key = data.header.key;
    let raw = data.scalars()?.to_f64().ok_or(GpmfError::BadTypeCode {
        key,
        code: data.header.type_code as char,
    })?;
    let channels = data.channels().unwrap_or(1);
    if let Some(expected) = expected_channels(key) {
        if channels != expected {
            return Err(GpmfError::ChannelCount {
                key,
                found: channels,
                expected,
            });
        }
    }

    let scale = match strm.child(SCAL) {
        Some(s) => s.scalars()?.to_f64().ok_or(GpmfError::BadTypeCode {
            key: SCAL,
            code: s.header.type_code as char,
        })?,
        None => vec![1.0],
    };
    if scale.len() != 1 && scale.len() != channels {
        return Err(GpmfError::ScaleMismatch {
            key,
            channels,
            scales: scale.len(),
        });
    }
    let mut values: Vec<f64> = raw
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = if scale.len() == 1 {
                scale[0]
            } else {
                scale[i % channels]
            };
            v / s
        })
        .collect();

    let units_label = strm
        .child(SIUN)
        .or_else(|| strm.child(UNIT))
        .and_then(|n| n.text());

    let axis_mapping = if channels == 3 && (key == ACCL || key == GYRO) {
        let mapping = match strm.child(ORIN).and_then(|n| n.text()) {
            Some(orin) => AxisMapping::from_orientation(&orin)?,
            None => AxisMapping::identity(),
        };
        if !mapping.is_identity() {
            for row in values.chunks_exact_mut(3) {
                let mapped = mapping.apply(row);
                row.copy_from_slice(&mapped);
            }
        }
        Some(mapping)
    } else {
        None
    };

    Ok(SensorStream {
        key,
        channels,
        values,
        scale,
        units_label,
        axis_mapping,
    })
}

/// Number of items of each data key, summed over all `STRM` containers. The
/// data record is the last leaf of its stream; earlier leaves are metadata.
pub fn stream_counts(root: &[KlvNode]) -> BTreeMap<FourCC, usize> {
    let mut streams = Vec::new();
    collect_streams(root, &mut streams);
    let mut counts = BTreeMap::new();
    for strm in streams {
        if let Some(data) = strm
            .children
            .iter()
            .rev()
            .find(|c| !c.header.is_container())
        {
            *counts.entry(data.header.key).or_insert(0) += data.header.repeat as usize;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpmf::{Scalars, DEVC};

    fn strm(children: Vec<KlvNode>) -> KlvNode {
        KlvNode::container(STRM, children)
    }

    fn scal(v: Scalars) -> KlvNode {
        KlvNode::leaf(SCAL, &v, 1)
    }

    #[test]
    fn gyro_scaled_by_single_divisor() {
        let root = vec![KlvNode::container(
            DEVC,
            vec![strm(vec![
                scal(Scalars::I16(vec![100])),
                KlvNode::leaf(GYRO, &Scalars::I16(vec![200, -200, 0]), 3),
            ])],
        )];
        let s = extract_stream(&root, GYRO).unwrap();
        assert_eq!(s.values, vec![2.0, -2.0, 0.0]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.axis_mapping, Some(AxisMapping::identity()));
    }

    #[test]
    fn per_channel_scale() {
        let root = vec![strm(vec![
            scal(Scalars::I32(vec![1, 10, 100])),
            KlvNode::leaf(ACCL, &Scalars::I32(vec![10, 10, 10, 20, 20, 20]), 3),
        ])];
        let s = extract_stream(&root, ACCL).unwrap();
        assert_eq!(s.values, vec![10.0, 1.0, 0.1, 20.0, 2.0, 0.2]);
    }

    #[test]
    fn missing_scale_means_one() {
        let root = vec![strm(vec![KlvNode::leaf(
            SHUT,
            &Scalars::F32(vec![0.01, 0.02]),
            1,
        )])];
        let s = extract_stream(&root, SHUT).unwrap();
        assert_eq!(s.values, vec![0.01f32 as f64, 0.02f32 as f64]);
        assert_eq!(s.scale, vec![1.0]);
    }

    #[test]
    fn absent_stream() {
        let root = vec![strm(vec![KlvNode::leaf(
            GYRO,
            &Scalars::I16(vec![1, 2, 3]),
            3,
        )])];
        assert_eq!(
            extract_stream(&root, SHUT).unwrap_err(),
            GpmfError::StreamNotFound(SHUT)
        );
    }

    #[test]
    fn mismatched_scale() {
        let root = vec![strm(vec![
            scal(Scalars::I16(vec![1, 2])),
            KlvNode::leaf(GYRO, &Scalars::I16(vec![1, 2, 3]), 3),
        ])];
        assert!(matches!(
            extract_stream(&root, GYRO),
            Err(GpmfError::ScaleMismatch {
                channels: 3,
                scales: 2,
                ..
            })
        ));
    }

    #[test]
    fn orientation_reorders_channels() {
        let root = vec![strm(vec![
            KlvNode::leaf(ORIN, &Scalars::Ascii(b"ZxY".to_vec()), 1),
            KlvNode::leaf(ACCL, &Scalars::I16(vec![1, 2, 3]), 3),
        ])];
        let s = extract_stream(&root, ACCL).unwrap();
        // channel0 → z, channel1 → -x, channel2 → y
        assert_eq!(s.values, vec![-2.0, 3.0, 1.0]);
        assert_eq!(s.axis_mapping.unwrap().describe(), "x=-ch1,y=+ch2,z=+ch0");
    }

    #[test]
    fn bad_orientation_strings() {
        assert!(AxisMapping::from_orientation("XXY").is_err());
        assert!(AxisMapping::from_orientation("XY").is_err());
        assert!(AxisMapping::from_orientation("XYW").is_err());
    }

    #[test]
    fn counts_per_key() {
        let root = vec![KlvNode::container(
            DEVC,
            vec![
                strm(vec![
                    scal(Scalars::I16(vec![418])),
                    KlvNode::leaf(ACCL, &Scalars::I16(vec![0; 202 * 3]), 3),
                ]),
                strm(vec![KlvNode::leaf(
                    GYRO,
                    &Scalars::I16(vec![0; 202 * 3]),
                    3,
                )]),
                strm(vec![KlvNode::leaf(SHUT, &Scalars::F32(vec![0.001; 30]), 1)]),
            ],
        )];
        let counts = stream_counts(&root);
        let expect: BTreeMap<FourCC, usize> =
            [(ACCL, 202), (GYRO, 202), (SHUT, 30)].into_iter().collect();
        assert_eq!(counts, expect);
    }

    #[test]
    fn empty_devc_has_no_counts() {
        let root = vec![KlvNode::container(DEVC, vec![])];
        assert!(stream_counts(&root).is_empty());
    }

    #[test]
    fn duplicated_streams_sum_and_concatenate() {
        let a = strm(vec![KlvNode::leaf(GYRO, &Scalars::I16(vec![1, 1, 1]), 3)]);
        let b = strm(vec![KlvNode::leaf(
            GYRO,
            &Scalars::I16(vec![2, 2, 2, 3, 3, 3]),
            3,
        )]);
        let root = vec![KlvNode::container(DEVC, vec![a, b])];
        assert_eq!(stream_counts(&root)[&GYRO], 3);
        assert_eq!(extract_stream(&root, GYRO).unwrap().len(), 3);
    }
}
