// SPDX-License-Identifier: Apache-2.0

use gopro_vi::fourcc::FourCC;
use gopro_vi::gpmf::{encode_klv, extract_stream, parse_klv, KlvNode, Scalars, SCAL, STRM};
use proptest::prelude::*;

fn key() -> impl Strategy<Value = FourCC> {
    proptest::array::uniform4(b'A'..=b'Z').prop_map(FourCC)
}

fn scalars() -> impl Strategy<Value = (Scalars, usize)> {
    let channels = 1usize..4;
    let items = 0usize..6;
    (channels, items).prop_flat_map(|(ch, n)| {
        let len = ch * n;
        let v = prop_oneof![
            proptest::collection::vec(any::<i8>(), len).prop_map(Scalars::I8),
            proptest::collection::vec(any::<u8>(), len).prop_map(Scalars::U8),
            proptest::collection::vec(any::<i16>(), len).prop_map(Scalars::I16),
            proptest::collection::vec(any::<u16>(), len).prop_map(Scalars::U16),
            proptest::collection::vec(any::<i32>(), len).prop_map(Scalars::I32),
            proptest::collection::vec(any::<u32>(), len).prop_map(Scalars::U32),
            proptest::collection::vec(any::<i64>(), len).prop_map(Scalars::I64),
            proptest::collection::vec(any::<u64>(), len).prop_map(Scalars::U64),
            proptest::collection::vec(proptest::num::f32::NORMAL | proptest::num::f32::ZERO, len)
                .prop_map(Scalars::F32),
            proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::ZERO, len)
                .prop_map(Scalars::F64),
            proptest::collection::vec(b' '..=b'~', len).prop_map(Scalars::Ascii),
            proptest::collection::vec(key(), len).prop_map(Scalars::FourCC),
            proptest::collection::vec(any::<[u8; 16]>(), len).prop_map(Scalars::Utc),
            proptest::collection::vec(any::<[u8; 16]>(), len).prop_map(Scalars::Guid),
            proptest::collection::vec(any::<i32>(), len).prop_map(Scalars::Fixed32),
            proptest::collection::vec(any::<i64>(), len).prop_map(Scalars::Fixed64),
        ];
        (v, Just(ch))
    })
}

fn leaf() -> impl Strategy<Value = (KlvNode, Scalars)> {
    (key(), scalars()).prop_map(|(k, (s, ch))| (KlvNode::leaf(k, &s, ch), s))
}

fn tree() -> impl Strategy<Value = KlvNode> {
    let base = leaf().prop_map(|(n, _)| n);
    base.prop_recursive(3, 40, 5, |inner| {
        (key(), proptest::collection::vec(inner, 0..5)).prop_map(|(k, c)| KlvNode::container(k, c))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn encode_parse_is_identity(nodes in proptest::collection::vec(tree(), 1..4)) {
        let bytes = encode_klv(&nodes);
        prop_assert_eq!(bytes.len() % 4, 0);
        let parsed = parse_klv(&bytes).unwrap();
        prop_assert_eq!(&parsed, &nodes);
        prop_assert_eq!(encode_klv(&parsed), bytes);
    }

    #[test]
    fn leaf_values_survive(case in leaf()) {
        let (node, values) = case;
        let parsed = parse_klv(&encode_klv(std::slice::from_ref(&node))).unwrap();
        prop_assert_eq!(parsed[0].scalars().unwrap(), values);
    }

    #[test]
    fn scaled_values_are_linear_in_the_raw_counts(
        raw in proptest::collection::vec(any::<i16>(), 3..60),
        scale in 1i16..2000,
        k in 1i16..16,
    ) {
        let n = raw.len() / 3 * 3;
        let raw = &raw[..n];
        let stream = |counts: Vec<i16>, s: i16| {
            let strm = KlvNode::container(STRM, vec![
                KlvNode::leaf(SCAL, &Scalars::I16(vec![s]), 1),
                KlvNode::leaf(FourCC(*b"ACCL"), &Scalars::I16(counts), 3),
            ]);
            let bytes = encode_klv(&[strm]);
            extract_stream(&parse_klv(&bytes).unwrap(), FourCC(*b"ACCL")).unwrap().values
        };
        let base = stream(raw.to_vec(), scale);
        for (v, r) in base.iter().zip(raw) {
            prop_assert!((*v * scale as f64 - *r as f64).abs() <= 1e-12 * (*r as f64).abs().max(1.0));
        }
        // Multiplying the scale by k divides every value by k.
        let coarse = stream(raw.to_vec(), scale * k);
        for (a, b) in base.iter().zip(&coarse) {
            prop_assert!((a - b * k as f64).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn truncated_payload_is_rejected() {
    let node = KlvNode::leaf(FourCC(*b"TEST"), &Scalars::U32(vec![1, 2, 3]), 1);
    let bytes = encode_klv(&[node]);
    for cut in (4..bytes.len()).step_by(4) {
        assert!(parse_klv(&bytes[..cut]).is_err(), "cut at {cut}");
    }
}
