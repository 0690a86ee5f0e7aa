#![allow(dead_code)]

pub mod oracle;
pub mod xpt_bytes;

use std::path::{Path, PathBuf};

use choicesim::experiment::reference_peaks;
use choicesim::fit::{fit, FitOptions, MixtureModel};
use choicesim::xport::fixture::write_library;
use choicesim::xport::{Cell, VariableInfo, XportTable};
use choicesim::Pmf;

pub const DEMO_COLUMNS: [&str; 7] = [
    "SEQN", "RIAGENDR", "RIDAGEYR", "DMDMARTZ", "RIDRETH3", "DMDEDUC2", "INDFMPIR",
];

fn num(x: f64) -> Cell {
    Cell::Number(x)
}

/// Nine respondents; ids 1..=8 and 10.
pub fn demo_table() -> XportTable {
    let rows: [[f64; 7]; 9] = [
        [1.0, 1.0, 34.0, 1.0, 3.0, 5.0, 2.5],
        [2.0, 2.0, 61.0, 1.0, 1.0, 4.0, 1.25],
        [3.0, 1.0, 22.0, 3.0, 4.0, 3.0, 0.75],
        [4.0, 2.0, 45.0, 2.0, 6.0, 5.0, 5.0],
        [5.0, 1.0, 80.0, 1.0, 3.0, 2.0, 3.1],
        [6.0, 2.0, 51.0, 77.0, 2.0, 4.0, 1.8],
        [7.0, 2.0, 29.0, 3.0, 7.0, 1.0, 0.0],
        [8.0, 1.0, 67.0, 2.0, 3.0, 5.0, 4.4],
        [10.0, 2.0, 38.0, 1.0, 3.0, 3.0, 2.0],
    ];
    XportTable {
        member_name: "P_DEMO".into(),
        variables: DEMO_COLUMNS
            .iter()
            .map(|c| VariableInfo::numeric(c, 8, ""))
            .collect(),
        rows: rows.iter().map(|r| r.iter().map(|&x| num(x)).collect()).collect(),
    }
}

/// Ids 2..=10. Codes: 5555 is capped to 21, 7777 and missing drop the row.
pub fn dbq_table() -> XportTable {
    let counts = [
        (2.0, num(3.0)),
        (3.0, num(5555.0)),
        (4.0, num(7777.0)),
        (5.0, Cell::Missing),
        (6.0, num(0.0)),
        (7.0, num(7.0)),
        (8.0, num(14.0)),
        (9.0, num(1.0)),
        (10.0, num(2.0)),
    ];
    XportTable {
        member_name: "P_DBQ".into(),
        variables: vec![
            VariableInfo::numeric("SEQN", 8, "Respondent sequence number"),
            VariableInfo::numeric("DBD895", 8, "# of meals not home prepared"),
        ],
        rows: counts.iter().map(|(id, c)| vec![num(*id), c.clone()]).collect(),
    }
}

/// Cleaned rows the fixture pair must produce: (id, count).
pub const FIXTURE_KEPT: [(u64, u8); 5] = [(2, 3), (3, 21), (7, 7), (8, 14), (10, 2)];

fn table_csv(table: &XportTable) -> String {
    let mut out = table
        .variables
        .iter()
        .map(|v| v.name.clone())
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row
            .iter()
            .map(|c| match c {
                Cell::Number(x) => x.to_string(),
                Cell::Missing => String::new(),
                Cell::Text(s) => s.clone(),
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_xpt_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let demo = dir.join("P_DEMO.XPT");
    let dbq = dir.join("P_DBQ.XPT");
    std::fs::write(&demo, write_library(&[demo_table()])).unwrap();
    std::fs::write(&dbq, write_library(&[dbq_table()])).unwrap();
    (demo, dbq)
}

pub fn write_csv_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let demo = dir.join("P_DEMO.csv");
    let dbq = dir.join("P_DBQ.csv");
    std::fs::write(&demo, table_csv(&demo_table())).unwrap();
    std::fs::write(&dbq, table_csv(&dbq_table())).unwrap();
    (demo, dbq)
}

/// A lumpy eat-out distribution resembling the survey shape.
pub fn survey_like_pmf() -> Pmf {
    let mut counts = vec![1.0; 22];
    for (k, c) in [(0, 30.0), (1, 14.0), (2, 22.0), (3, 15.0), (4, 12.0), (5, 10.0), (7, 8.0), (10, 5.0), (14, 4.0), (21, 3.0)] {
        counts[k] = c;
    }
    Pmf::from_counts(&counts).unwrap()
}

/// The eight reference components fitted to [`survey_like_pmf`].
pub fn reference_model() -> MixtureModel {
    fit(&survey_like_pmf(), &reference_peaks(), &FitOptions::default()).unwrap()
}
