//! Plain-text matrix interchange format.
//!
//! ```text
//! moc-matrix v1
//! <rows> <cols> f64
//! <row 0: cols space-separated values>
//! ...
//! ```
//!
//! Values are written with Rust's shortest-round-trip float formatting, so a
//! write/read cycle reproduces every f64 bit for bit.

use std::path::Path;

use moc_core::linalg::Matrix;

use crate::CliError;

const MAGIC: &str = "moc-matrix v1";

pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    out.push_str(&format!("{} {} f64\n", m.rows(), m.cols()));
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Matrix, CliError> {
    let mut lines = text.lines();
    let magic = lines.next().unwrap_or_default();
    if magic.trim() != MAGIC {
        return Err(CliError::Config(format!(
            "not a matrix file: expected header `{MAGIC}`, found `{magic}`"
        )));
    }
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("missing shape line".to_string()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 || fields[2] != "f64" {
        return Err(CliError::Config(format!(
            "bad shape line `{header}`; expected `<rows> <cols> f64`"
        )));
    }
    let rows: usize = fields[0]
        .parse()
        .map_err(|_| CliError::Config(format!("bad row count `{}`", fields[0])))?;
    let cols: usize = fields[1]
        .parse()
        .map_err(|_| CliError::Config(format!("bad column count `{}`", fields[1])))?;

    let mut data = Vec::with_capacity(rows * cols);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| CliError::Config(format!("bad value `{tok}` on data line {i}")))?;
            data.push(v);
        }
    }
    if data.len() != rows * cols {
        return Err(CliError::Config(format!(
            "expected {} values for a {rows}x{cols} matrix, found {}",
            rows * cols,
            data.len()
        )));
    }
    Matrix::from_vec(rows, cols, data).map_err(|e| CliError::Config(e.to_string()))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<(), CliError> {
    std::fs::write(path, format_matrix(m))
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

pub fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_matrix(&text)
}
