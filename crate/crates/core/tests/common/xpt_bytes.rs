//! A transport file written byte by byte, independent of the fixture writer.

use choicesim::xport::{Cell, VariableInfo, XportTable};

fn card(text: &str) -> Vec<u8> {
    let mut c = text.as_bytes().to_vec();
    assert!(c.len() <= 80, "card too long: {text}");
    c.resize(80, b' ');
    c
}

fn namestr(ntype: u16, length: u16, varnum: u16, name: &str, label: &str, npos: u32) -> Vec<u8> {
    let mut e = vec![0u8; 140];
    e[0..2].copy_from_slice(&ntype.to_be_bytes());
    e[4..6].copy_from_slice(&length.to_be_bytes());
    e[6..8].copy_from_slice(&varnum.to_be_bytes());
    e[8..16].copy_from_slice(format!("{name:<8}").as_bytes());
    e[16..56].copy_from_slice(format!("{label:<40}").as_bytes());
    e[56..64].copy_from_slice(b"        ");
    e[72..80].copy_from_slice(b"        ");
    e[84..88].copy_from_slice(&npos.to_be_bytes());
    e
}

/// Two variables (numeric X, 4-byte character NAME), three observations,
/// laid out byte by byte from the transport format rules.
pub fn hand_built_library() -> Vec<u8> {
    let mut f = Vec::new();
    f.extend(card("HEADER RECORD*******LIBRARY HEADER RECORD!!!!!!!000000000000000000000000000000"));
    f.extend(card("SAS     SAS     SASLIB  9.4     X64_10PR                        01JAN24:00:00:00"));
    f.extend(card("01JAN24:00:00:00"));
    f.extend(card("HEADER RECORD*******MEMBER  HEADER RECORD!!!!!!!000000000000000001600000000140"));
    f.extend(card("HEADER RECORD*******DSCRPTR HEADER RECORD!!!!!!!000000000000000000000000000000"));
    f.extend(card("SAS     HAND    SASDATA 9.4     X64_10PR                        01JAN24:00:00:00"));
    f.extend(card("01JAN24:00:00:00                Hand built member"));
    f.extend(card("HEADER RECORD*******NAMESTR HEADER RECORD!!!!!!!000000000200000000000000000000"));
    let mut names = namestr(1, 8, 1, "X", "A number", 0);
    names.extend(namestr(2, 4, 2, "NAME", "A code", 8));
    names.resize(320, b' ');
    f.extend(names);
    f.extend(card("HEADER RECORD*******OBS     HEADER RECORD!!!!!!!000000000000000000000000000000"));
    let mut obs = Vec::new();
    // 1.0 | "ab"
    obs.extend([0x41, 0x10, 0, 0, 0, 0, 0, 0]);
    obs.extend(b"ab  ");
    // -3.75 | "wxyz"
    obs.extend([0xC1, 0x3C, 0, 0, 0, 0, 0, 0]);
    obs.extend(b"wxyz");
    // missing "." | blank
    obs.extend([0x2E, 0, 0, 0, 0, 0, 0, 0]);
    obs.extend(b"    ");
    obs.resize(80, b' ');
    f.extend(obs);
    f
}

pub fn hand_built_table() -> XportTable {
    XportTable {
        member_name: "HAND".into(),
        variables: vec![
            VariableInfo::numeric("X", 8, "A number"),
            VariableInfo::character("NAME", 4, "A code"),
        ],
        rows: vec![
            vec![Cell::Number(1.0), Cell::Text("ab".into())],
            vec![Cell::Number(-3.75), Cell::Text("wxyz".into())],
            vec![Cell::Missing, Cell::Text(String::new())],
        ],
    }
}

