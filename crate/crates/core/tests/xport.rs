use choicesim::xport::fixture::{encode_ibm_double, write_library};
use choicesim::xport::{decode_ibm_double, parse_library, Cell, VarType, VariableInfo, XportError, XportTable};
use proptest::prelude::*;

mod common;
use common::xpt_bytes::{hand_built_library, hand_built_table};

#[test]
fn hand_built_file_parses_exactly() {
    let tables = parse_library(&hand_built_library()).unwrap();
    assert_eq!(tables, vec![hand_built_table()]);
    assert_eq!(tables[0].variables[1].var_type, VarType::Character);
}

#[test]
fn writer_matches_hand_built_observations() {
    let written = write_library(&[hand_built_table()]);
    let hand = hand_built_library();
    // header text (dates, versions) may differ; the observation card must not
    assert_eq!(written[written.len() - 80..], hand[hand.len() - 80..]);
    assert_eq!(parse_library(&written).unwrap(), vec![hand_built_table()]);
}

#[test]
fn two_members_in_one_library() {
    let mut second = hand_built_table();
    second.member_name = "OTHER".into();
    second.rows.truncate(1);
    let bytes = write_library(&[hand_built_table(), second.clone()]);
    assert_eq!(parse_library(&bytes).unwrap(), vec![hand_built_table(), second]);
}

#[test]
fn every_truncation_point_is_an_error() {
    let bytes = hand_built_library();
    for cut in (1..bytes.len()).step_by(7) {
        let err = parse_library(&bytes[..cut]);
        assert!(
            matches!(err, Err(XportError::TruncatedRecord { .. })),
            "cut at {cut}: {err:?}"
        );
    }
}

#[test]
fn reference_vectors() {
    assert_eq!(decode_ibm_double([0x41, 0x10, 0, 0, 0, 0, 0, 0]), Some(1.0));
    assert_eq!(decode_ibm_double([0; 8]), Some(0.0));
    assert_eq!(decode_ibm_double([0xC1, 0x3C, 0, 0, 0, 0, 0, 0]), Some(-3.75));
    assert_eq!(decode_ibm_double([0x2E, 0, 0, 0, 0, 0, 0, 0]), None);
}

/// Independent decoder: sign, base-16 exponent biased by 64, 56-bit fraction.
fn oracle(bytes: [u8; 8]) -> f64 {
    let sign = if bytes[0] & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = i32::from(bytes[0] & 0x7F) - 64;
    let mut frac = 0.0f64;
    for (i, &b) in bytes[1..].iter().enumerate() {
        frac += f64::from(b) * 2f64.powi(-8 * (i as i32 + 1));
    }
    sign * frac * 2f64.powi(4 * exp)
}

fn ibm_pattern(negative: bool, exp: u8, frac24: u32) -> [u8; 8] {
    let f = frac24.to_be_bytes();
    [u8::from(negative) << 7 | exp, f[1], f[2], f[3], 0, 0, 0, 0]
}

proptest! {
    #[test]
    fn ibm_round_trip_is_byte_identical(
        negative in any::<bool>(),
        exp in 40u8..=90,
        frac in 0x10_0000u32..=0xFF_FFFF,
    ) {
        let bytes = ibm_pattern(negative, exp, frac);
        let value = decode_ibm_double(bytes).unwrap();
        prop_assert_eq!(value, oracle(bytes));
        prop_assert_eq!(encode_ibm_double(value), bytes);
    }

    #[test]
    fn full_fraction_decodes_exactly(
        exp in 40u8..=90,
        lead in 0x10u8..=0xFF,
        rest in any::<[u8; 6]>(),
    ) {
        // at most 53 significant bits, so an f64 holds the value exactly
        let bytes = [exp, lead, rest[0], rest[1], rest[2], rest[3], rest[4], rest[5] & 0xF8];
        prop_assert_eq!(decode_ibm_double(bytes).unwrap(), oracle(bytes));
    }

    #[test]
    fn any_double_in_range_survives_encoding(x in prop_oneof![-1e60f64..-1e-60, 1e-60f64..1e60]) {
        prop_assert_eq!(decode_ibm_double(encode_ibm_double(x)), Some(x));
    }

    #[test]
    fn generated_tables_round_trip(
        numbers in prop::collection::vec(prop::option::of(-1e9f64..1e9), 0..40),
        text in prop::collection::vec("[a-zA-Z0-9]{0,6}", 0..40),
    ) {
        let n = numbers.len().min(text.len());
        let table = XportTable {
            member_name: "GEN".into(),
            variables: vec![
                VariableInfo::numeric("V", 8, "value"),
                VariableInfo::character("T", 6, "text"),
            ],
            rows: (0..n)
                .map(|i| {
                    vec![
                        numbers[i].map_or(Cell::Missing, Cell::Number),
                        Cell::Text(text[i].clone()),
                    ]
                })
                .collect(),
        };
        let parsed = parse_library(&write_library(&[table.clone()])).unwrap();
        prop_assert_eq!(parsed, vec![table]);
    }
}
