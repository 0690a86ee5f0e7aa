//! SAS Transport (XPORT v5) reader.
//!
//! A transport library is a sequence of 80-byte card images. Each member is
//! introduced by a run of `HEADER RECORD` cards, followed by one 140-byte
//! NAMESTR entry per variable and then the observations, packed row-major
//! with no separators. Numeric cells are IBM System/360 hexadecimal floats,
//! stored big-endian and possibly truncated to fewer than 8 bytes.

use std::fmt;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

pub const RECORD_LEN: usize = 80;

const LIBRARY_HEADER: &[u8] = b"HEADER RECORD*******LIBRARY HEADER RECORD!!!!!!!";
const LIBRARY_V8_HEADER: &[u8] = b"HEADER RECORD*******LIBV8   HEADER RECORD!!!!!!!";
const MEMBER_HEADER: &[u8] = b"HEADER RECORD*******MEMBER  HEADER RECORD!!!!!!!";
const MEMBER_V8_HEADER: &[u8] = b"HEADER RECORD*******MEMBV8  HEADER RECORD!!!!!!!";
const DESCRIPTOR_HEADER: &[u8] = b"HEADER RECORD*******DSCRPTR HEADER RECORD!!!!!!!";
const NAMESTR_HEADER: &[u8] = b"HEADER RECORD*******NAMESTR HEADER RECORD!!!!!!!";
const OBS_HEADER: &[u8] = b"HEADER RECORD*******OBS     HEADER RECORD!!!!!!!";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum XportError {
    #[error("malformed header at byte offset {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("truncated record at byte offset {offset}: {reason}")]
    TruncatedRecord { offset: usize, reason: String },
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("unparsable numeric value `{value}` in column `{column}` (line {line})")]
    UnparsableNumeric { column: String, value: String, line: u64 },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for XportError {
    fn from(e: std::io::Error) -> Self {
        XportError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarType {
    Numeric,
    Character,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableInfo {
    pub name: String,
    pub var_type: VarType,
    pub length: usize,
    pub label: String,
}

impl VariableInfo {
    pub fn numeric(name: &str, length: usize, label: &str) -> Self {
        VariableInfo {
            name: name.to_string(),
            var_type: VarType::Numeric,
            length,
            label: label.to_string(),
        }
    }

    pub fn character(name: &str, length: usize, label: &str) -> Self {
        VariableInfo {
            name: name.to_string(),
            var_type: VarType::Character,
            length,
            label: label.to_string(),
        }
    }

    fn validate(&self, offset: usize) -> Result<(), XportError> {
        let ok = match self.var_type {
            VarType::Numeric => (2..=8).contains(&self.length),
            VarType::Character => (1..=200).contains(&self.length),
        };
        if ok {
            Ok(())
        } else {
            Err(XportError::MalformedHeader {
                offset,
                reason: format!(
                    "variable `{}` has invalid length {} for {:?}",
                    self.name, self.length, self.var_type
                ),
            })
        }
    }
}

/// One cell of an observation.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Number(f64),
    Missing,
    Text(String),
}

impl Cell {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(x) => Some(*x),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        match self {
            Cell::Missing => true,
            Cell::Text(s) => s.is_empty(),
            Cell::Number(_) => false,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Number(x) => write!(f, "{x}"),
            Cell::Missing => Ok(()),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XportTable {
    pub member_name: String,
    pub variables: Vec<VariableInfo>,
    pub rows: Vec<Vec<Cell>>,
}

impl XportTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.variables
            .iter()
            .position(|v| v.name.eq_ignore_ascii_case(name))
    }

    pub fn require_column(&self, name: &str) -> Result<usize, XportError> {
        self.column_index(name)
            .ok_or_else(|| XportError::MissingColumn(name.to_string()))
    }
}

/// Decodes an 8-byte IBM hexadecimal float. `None` is the missing marker.
///
/// Bit 0 is the sign, bits 1..8 the excess-64 base-16 exponent, and the
/// remaining 56 bits a fraction `0.f` in base 16. A zero fraction whose first
/// byte is `.`, `_` or `A`..`Z` encodes one of the SAS special missing values.
pub fn decode_ibm_double(raw: [u8; 8]) -> Option<f64> {
    let fraction = u64::from_be_bytes(raw) & 0x00FF_FFFF_FFFF_FFFF;
    if fraction == 0 {
        return match raw[0] {
            b'.' | b'_' | b'A'..=b'Z' => None,
            b if b & 0x80 != 0 => Some(-0.0),
            _ => Some(0.0),
        };
    }
    let exponent = i32::from(raw[0] & 0x7F) - 64;
    // fraction / 2^56 * 16^exponent; the scale is a power of two, so the only
    // rounding is in the u64 -> f64 conversion of fractions wider than 53 bits.
    let magnitude = fraction as f64 * 2f64.powi(4 * exponent - 56);
    Some(if raw[0] & 0x80 != 0 {
        -magnitude
    } else {
        magnitude
    })
}

/// Decodes a numeric cell stored in fewer than 8 bytes.
pub fn decode_truncated(stored: &[u8]) -> Option<f64> {
    let mut buf = [0u8; 8];
    let n = stored.len().min(8);
    buf[..n].copy_from_slice(&stored[..n]);
    decode_ibm_double(buf)
}

fn ascii_field(bytes: &[u8]) -> String {
    let end = bytes
        .iter()
        .rposition(|&b| b != b' ' && b != 0)
        .map_or(0, |i| i + 1);
    bytes[..end].iter().map(|&b| b as char).collect()
}

fn trim_trailing_blanks(bytes: &[u8]) -> String {
    let end = bytes.iter().rposition(|&b| b != b' ').map_or(0, |i| i + 1);
    bytes[..end].iter().map(|&b| b as char).collect()
}

fn parse_decimal(bytes: &[u8], offset: usize, what: &str) -> Result<usize, XportError> {
    std::str::from_utf8(bytes)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| XportError::MalformedHeader {
            offset,
            reason: format!("unreadable {what} field"),
        })
}

struct Cards<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cards<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn peek(&self) -> Option<&'a [u8]> {
        (self.remaining() >= RECORD_LEN).then(|| &self.bytes[self.pos..self.pos + RECORD_LEN])
    }

    fn next(&mut self, what: &str) -> Result<&'a [u8], XportError> {
        let card = self.peek().ok_or_else(|| XportError::TruncatedRecord {
            offset: self.pos,
            reason: format!("stream ended before {what}"),
        })?;
        self.pos += RECORD_LEN;
        Ok(card)
    }

    fn expect_header(&mut self, sentinel: &[u8], what: &str) -> Result<&'a [u8], XportError> {
        let offset = self.pos;
        let card = self.next(what)?;
        if card.starts_with(sentinel) {
            Ok(card)
        } else {
            Err(XportError::MalformedHeader {
                offset,
                reason: format!("expected {what}"),
            })
        }
    }
}

/// Parses every member of a transport library.
pub fn parse_library(bytes: &[u8]) -> Result<Vec<XportTable>, XportError> {
    if bytes.len() % RECORD_LEN != 0 {
        return Err(XportError::TruncatedRecord {
            offset: bytes.len() - bytes.len() % RECORD_LEN,
            reason: format!("stream length {} is not a multiple of 80", bytes.len()),
        });
    }
    if bytes.starts_with(LIBRARY_V8_HEADER) {
        return Err(XportError::MalformedHeader {
            offset: 0,
            reason: "transport version 8 libraries are not supported".into(),
        });
    }
    let mut cards = Cards { bytes, pos: 0 };
    cards.expect_header(LIBRARY_HEADER, "library header record")?;
    let offset = cards.pos;
    let first = cards.next("library descriptor record")?;
    if !first.starts_with(b"SAS     SAS     SASLIB") {
        return Err(XportError::MalformedHeader {
            offset,
            reason: "expected SAS library descriptor record".into(),
        });
    }
    cards.next("library modification record")?;

    let mut tables = Vec::new();
    while cards.remaining() > 0 {
        tables.push(parse_member(&mut cards)?);
    }
    Ok(tables)
}

fn parse_member(cards: &mut Cards<'_>) -> Result<XportTable, XportError> {
    if cards.peek().is_some_and(|c| c.starts_with(MEMBER_V8_HEADER)) {
        return Err(XportError::MalformedHeader {
            offset: cards.pos,
            reason: "transport version 8 members are not supported".into(),
        });
    }
    let header_offset = cards.pos;
    let header = cards.expect_header(MEMBER_HEADER, "member header record")?;
    let namestr_len = parse_decimal(&header[74..78], header_offset, "NAMESTR length")?;
    if namestr_len != 140 && namestr_len != 136 {
        return Err(XportError::MalformedHeader {
            offset: header_offset,
            reason: format!("unsupported NAMESTR length {namestr_len}"),
        });
    }
    cards.expect_header(DESCRIPTOR_HEADER, "member descriptor header record")?;
    let offset = cards.pos;
    let descriptor = cards.next("member descriptor record")?;
    if !descriptor.starts_with(b"SAS     ") {
        return Err(XportError::MalformedHeader {
            offset,
            reason: "expected member descriptor record".into(),
        });
    }
    let member_name = ascii_field(&descriptor[8..16]);
    cards.next("member label record")?;

    let offset = cards.pos;
    let namestr_header = cards.expect_header(NAMESTR_HEADER, "NAMESTR header record")?;
    let nvars = parse_decimal(&namestr_header[54..58], offset, "variable count")?;

    let namestr_bytes = nvars * namestr_len;
    let namestr_cards = namestr_bytes.div_ceil(RECORD_LEN);
    if cards.remaining() < namestr_cards * RECORD_LEN {
        return Err(XportError::TruncatedRecord {
            offset: cards.pos,
            reason: format!("expected {nvars} NAMESTR entries"),
        });
    }
    let namestr_start = cards.pos;
    let block = &cards.bytes[namestr_start..namestr_start + namestr_bytes];
    cards.pos += namestr_cards * RECORD_LEN;

    let mut variables = Vec::with_capacity(nvars);
    let mut positions = Vec::with_capacity(nvars);
    for (i, entry) in block.chunks_exact(namestr_len).enumerate() {
        let entry_offset = namestr_start + i * namestr_len;
        let be16 = |at: usize| usize::from(u16::from_be_bytes([entry[at], entry[at + 1]]));
        let var_type = match be16(0) {
            1 => VarType::Numeric,
            2 => VarType::Character,
            t => {
                return Err(XportError::MalformedHeader {
                    offset: entry_offset,
                    reason: format!("unknown variable type code {t}"),
                })
            }
        };
        let info = VariableInfo {
            name: ascii_field(&entry[8..16]),
            var_type,
            length: be16(4),
            label: ascii_field(&entry[16..56]),
        };
        info.validate(entry_offset)?;
        let npos = u32::from_be_bytes([entry[84], entry[85], entry[86], entry[87]]) as usize;
        positions.push(npos);
        variables.push(info);
    }

    cards.expect_header(OBS_HEADER, "observation header record")?;
    let data_start = cards.pos;
    while let Some(card) = cards.peek() {
        if card.starts_with(MEMBER_HEADER) || card.starts_with(MEMBER_V8_HEADER) {
            break;
        }
        cards.pos += RECORD_LEN;
    }
    let data = &cards.bytes[data_start..cards.pos];
    let rows = decode_observations(data, data_start, &variables, &positions)?;

    Ok(XportTable {
        member_name,
        variables,
        rows,
    })
}

fn decode_observations(
    data: &[u8],
    data_start: usize,
    variables: &[VariableInfo],
    positions: &[usize],
) -> Result<Vec<Vec<Cell>>, XportError> {
    let row_len = variables
        .iter()
        .zip(positions)
        .map(|(v, &p)| p + v.length)
        .max()
        .unwrap_or(0);
    if row_len == 0 {
        return Ok(Vec::new());
    }

    let full_rows = data.len() / row_len;
    let tail_start = full_rows * row_len;
    if data[tail_start..].iter().any(|&b| b != b' ') {
        return Err(XportError::TruncatedRecord {
            offset: data_start + tail_start,
            reason: "observations end mid-row".into(),
        });
    }

    // Blank rows that begin inside the final card's padding are not data.
    let mut kept = full_rows;
    while kept > 0 {
        let start = (kept - 1) * row_len;
        let row = &data[start..start + row_len];
        if data.len() - start < RECORD_LEN && row.iter().all(|&b| b == b' ') {
            kept -= 1;
        } else {
            break;
        }
    }

    let rows = data[..kept * row_len]
        .chunks_exact(row_len)
        .map(|row| {
            variables
                .iter()
                .zip(positions)
                .map(|(var, &pos)| {
                    let raw = &row[pos..pos + var.length];
                    match var.var_type {
                        VarType::Numeric => {
                            decode_truncated(raw).map_or(Cell::Missing, Cell::Number)
                        }
                        VarType::Character => Cell::Text(trim_trailing_blanks(raw)),
                    }
                })
                .collect()
        })
        .collect();
    Ok(rows)
}

/// Reads and parses a `.XPT` file.
pub fn read_xpt_file(path: &Path) -> Result<Vec<XportTable>, XportError> {
    let bytes = std::fs::read(path)?;
    parse_library(&bytes)
}

/// Loads a CSV export as a table of numeric columns named by `schema`.
///
/// Empty fields become [`Cell::Missing`]. Columns not named in the schema are
/// ignored; numeric values are passed through without any code policy.
pub fn load_csv(path: &Path, schema: &[&str]) -> Result<XportTable, XportError> {
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_uppercase())
        .unwrap_or_default();
    read_csv(file, &name, schema)
}

pub fn read_csv<R: Read>(reader: R, member_name: &str, schema: &[&str]) -> Result<XportTable, XportError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| XportError::Csv(e.to_string()))?
        .clone();
    let indices = schema
        .iter()
        .map(|col| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(col))
                .ok_or_else(|| XportError::MissingColumn(col.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| XportError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row = schema
            .iter()
            .zip(&indices)
            .map(|(col, &i)| {
                let field = record.get(i).unwrap_or("").trim();
                if field.is_empty() || field == "." {
                    Ok(Cell::Missing)
                } else {
                    field
                        .parse::<f64>()
                        .map(Cell::Number)
                        .map_err(|_| XportError::UnparsableNumeric {
                            column: col.to_string(),
                            value: field.to_string(),
                            line,
                        })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }

    Ok(XportTable {
        member_name: member_name.to_string(),
        variables: schema
            .iter()
            .map(|c| VariableInfo::numeric(c, 8, ""))
            .collect(),
        rows,
    })
}

/// Builders for synthetic transport files used as test fixtures.
pub mod fixture {
    use super::*;

    /// Encodes a finite double as an 8-byte IBM hexadecimal float. Values
    /// whose 53-bit mantissa fits the 56-bit fraction encode exactly.
    pub fn encode_ibm_double(value: f64) -> [u8; 8] {
        if value == 0.0 {
            return if value.is_sign_negative() {
                [0x80, 0, 0, 0, 0, 0, 0, 0]
            } else {
                [0; 8]
            };
        }
        assert!(value.is_finite(), "cannot encode non-finite value {value}");
        let sign = if value < 0.0 { 0x80u8 } else { 0 };
        let mut magnitude = value.abs();
        let mut exponent = 64i32;
        while magnitude >= 1.0 {
            magnitude /= 16.0;
            exponent += 1;
        }
        while magnitude < 1.0 / 16.0 {
            magnitude *= 16.0;
            exponent -= 1;
        }
        assert!(
            (0..128).contains(&exponent),
            "value {value} outside IBM float range"
        );
        let fraction = (magnitude * 2f64.powi(56)).round() as u64;
        let mut out = fraction.to_be_bytes();
        out[0] = sign | exponent as u8;
        out
    }

    pub const MISSING: [u8; 8] = [b'.', 0, 0, 0, 0, 0, 0, 0];

    fn card(text: &[u8]) -> [u8; RECORD_LEN] {
        let mut c = [b' '; RECORD_LEN];
        c[..text.len()].copy_from_slice(text);
        c
    }

    fn padded(text: &str, width: usize) -> Vec<u8> {
        let mut v = text.as_bytes()[..text.len().min(width)].to_vec();
        v.resize(width, b' ');
        v
    }

    fn pad_to_card(out: &mut Vec<u8>) {
        while out.len() % RECORD_LEN != 0 {
            out.push(b' ');
        }
    }

    const STAMP: &str = "01JAN20:00:00:00";

    /// Serializes tables as a version 5 transport library.
    pub fn write_library(tables: &[XportTable]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&card(
            b"HEADER RECORD*******LIBRARY HEADER RECORD!!!!!!!000000000000000000000000000000",
        ));
        let mut lib = Vec::new();
        lib.extend_from_slice(b"SAS     SAS     SASLIB  9.4     X64_7PRO");
        lib.extend_from_slice(&[b' '; 24]);
        lib.extend_from_slice(STAMP.as_bytes());
        out.extend_from_slice(&card(&lib));
        out.extend_from_slice(&card(STAMP.as_bytes()));

        for table in tables {
            write_member(&mut out, table);
        }
        out
    }

    fn write_member(out: &mut Vec<u8>, table: &XportTable) {
        out.extend_from_slice(&card(
            b"HEADER RECORD*******MEMBER  HEADER RECORD!!!!!!!000000000000000001600000000140",
        ));
        out.extend_from_slice(&card(
            b"HEADER RECORD*******DSCRPTR HEADER RECORD!!!!!!!000000000000000000000000000000",
        ));
        let mut desc = b"SAS     ".to_vec();
        desc.extend(padded(&table.member_name, 8));
        desc.extend_from_slice(b"SASDATA 9.4     X64_7PRO");
        desc.extend_from_slice(&[b' '; 24]);
        desc.extend_from_slice(STAMP.as_bytes());
        out.extend_from_slice(&card(&desc));
        out.extend_from_slice(&card(STAMP.as_bytes()));

        let header = format!(
            "HEADER RECORD*******NAMESTR HEADER RECORD!!!!!!!000000{:04}00000000000000000000",
            table.variables.len()
        );
        out.extend_from_slice(&card(header.as_bytes()));
        let mut npos = 0usize;
        for (i, var) in table.variables.iter().enumerate() {
            let mut entry = vec![0u8; 140];
            let code: u16 = match var.var_type {
                VarType::Numeric => 1,
                VarType::Character => 2,
            };
            entry[0..2].copy_from_slice(&code.to_be_bytes());
            entry[4..6].copy_from_slice(&(var.length as u16).to_be_bytes());
            entry[6..8].copy_from_slice(&((i + 1) as u16).to_be_bytes());
            entry[8..16].copy_from_slice(&padded(&var.name, 8));
            entry[16..56].copy_from_slice(&padded(&var.label, 40));
            entry[56..64].copy_from_slice(&padded("", 8));
            entry[72..80].copy_from_slice(&padded("", 8));
            entry[84..88].copy_from_slice(&(npos as u32).to_be_bytes());
            npos += var.length;
            out.extend(entry);
        }
        pad_to_card(out);

        out.extend_from_slice(&card(
            b"HEADER RECORD*******OBS     HEADER RECORD!!!!!!!000000000000000000000000000000",
        ));
        for row in &table.rows {
            for (cell, var) in row.iter().zip(&table.variables) {
                match (cell, var.var_type) {
                    (Cell::Number(x), VarType::Numeric) => {
                        out.extend_from_slice(&encode_ibm_double(*x)[..var.length])
                    }
                    (Cell::Missing, VarType::Numeric) => {
                        out.extend_from_slice(&MISSING[..var.length])
                    }
                    (Cell::Text(s), VarType::Character) => out.extend(padded(s, var.length)),
                    (Cell::Missing, VarType::Character) => out.extend(padded("", var.length)),
                    (cell, ty) => panic!("cell {cell:?} does not match variable type {ty:?}"),
                }
            }
        }
        pad_to_card(out);
    }
}
