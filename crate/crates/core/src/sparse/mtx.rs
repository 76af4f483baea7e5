use std::fs;
use std::path::Path;

use super::SparseOperator;
use crate::{fmt_f64, Error, Result};

/// Coordinate real general Matrix Market text, 1-based indices.
pub fn format_matrix_market(a: &SparseOperator) -> String {
    let mut s = String::with_capacity(32 + a.nnz() * 40);
    s.push_str("%%MatrixMarket matrix coordinate real general\n");
    s.push_str(&format!("{} {} {}\n", a.n_rows(), a.n_cols(), a.nnz()));
    for (r, c, v) in a.triplets() {
        s.push_str(&format!("{} {} {}\n", r + 1, c + 1, fmt_f64(v)));
    }
    s
}

pub fn write_matrix_market(path: impl AsRef<Path>, a: &SparseOperator) -> Result<()> {
    fs::write(path, format_matrix_market(a))?;
    Ok(())
}

/// Reads `coordinate real|integer general|symmetric` files.
pub fn parse_matrix_market(text: &str) -> Result<SparseOperator> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let h: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if h.len() < 5 || h[0] != "%%matrixmarket" || h[1] != "matrix" || h[2] != "coordinate" {
        return Err(Error::Parse { line: 1, msg: "expected '%%MatrixMarket matrix coordinate' header".into() });
    }
    if h[3] != "real" && h[3] != "integer" {
        return Err(Error::Parse { line: 1, msg: format!("unsupported field '{}'", h[3]) });
    }
    let symmetric = match h[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(Error::Parse { line: 1, msg: format!("unsupported symmetry '{other}'") }),
    };
    let mut body = lines.filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('%'));
    let (ln, size) = body.next().ok_or(Error::Parse { line: 2, msg: "missing size line".into() })?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Parse { line: ln + 1, msg: format!("bad size '{t}'") }))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(Error::Parse { line: ln + 1, msg: "size line needs rows cols nnz".into() });
    }
    let (m, n, nnz) = (dims[0], dims[1], dims[2]);
    let mut trip = Vec::with_capacity(if symmetric { 2 * nnz } else { nnz });
    let mut count = 0;
    for (ln, l) in body {
        let t: Vec<&str> = l.split_whitespace().collect();
        let bad = |msg: &str| Error::Parse { line: ln + 1, msg: msg.to_string() };
        if t.len() != 3 {
            return Err(bad("entry needs row col value"));
        }
        let r: usize = t[0].parse().map_err(|_| bad("bad row index"))?;
        let c: usize = t[1].parse().map_err(|_| bad("bad column index"))?;
        let v: f64 = t[2].parse().map_err(|_| bad("bad value"))?;
        if r == 0 || c == 0 || r > m || c > n {
            return Err(bad("index out of range"));
        }
        trip.push((r - 1, c - 1, v));
        if symmetric && r != c {
            trip.push((c - 1, r - 1, v));
        }
        count += 1;
    }
    if count != nnz {
        return Err(Error::Parse { line: 0, msg: format!("header promises {nnz} entries, found {count}") });
    }
    SparseOperator::from_triplets(m, n, trip)
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseOperator> {
    parse_matrix_market(&fs::read_to_string(path)?)
}
