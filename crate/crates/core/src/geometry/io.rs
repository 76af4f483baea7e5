//! OFF mesh reading and `x y z [label]` point-cloud files.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Mesh, PointCloud};
use crate::{fmt_f64, Error, Result};

/// Parses an ASCII OFF mesh. Polygons with more than three corners are
/// fan-triangulated.
pub fn parse_off(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (ln, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    // some writers put the counts on the header line ("OFF 8 6 0")
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| Error::Parse { line: ln, msg: "missing OFF header".into() })?
        .trim()
        .to_string();
    let (ln, counts) = if rest.is_empty() {
        lines
            .next()
            .map(|(l, s)| (l, s.to_string()))
            .ok_or(Error::Parse { line: ln, msg: "missing counts".into() })?
    } else {
        (ln, rest)
    };
    let counts = parse_nums::<usize>(&counts, ln)?;
    if counts.len() < 2 {
        return Err(Error::Parse { line: ln, msg: "expected vertex and face counts".into() });
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or(Error::Parse { line: ln, msg: "truncated vertex list".into() })?;
        let v = parse_nums::<f64>(l, ln)?;
        if v.len() < 3 {
            return Err(Error::Parse { line: ln, msg: "vertex needs 3 coordinates".into() });
        }
        vertices.push([v[0], v[1], v[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or(Error::Parse { line: ln, msg: "truncated face list".into() })?;
        // trailing per-face colour values are ignored
        let toks: Vec<&str> = l.split_whitespace().collect();
        let n: usize = toks
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or(Error::Parse { line: ln, msg: "face needs a corner count".into() })?;
        if n < 3 || toks.len() < n + 1 {
            return Err(Error::Parse { line: ln, msg: format!("bad face with {n} corners") });
        }
        let f = parse_nums::<usize>(&toks[..=n].join(" "), ln)?;
        let idx = &f[1..=n];
        for k in 1..n - 1 {
            faces.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    Ok(Mesh::new(vertices, faces)?.clean())
}

pub fn read_off(path: impl AsRef<Path>) -> Result<Mesh> {
    parse_off(&fs::read_to_string(path)?)
}

fn parse_nums<T: std::str::FromStr>(line: &str, ln: usize) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| Error::Parse { line: ln, msg: format!("'{t}': {e}") }))
        .collect()
}

/// Parses a cloud with one `x y z [label]` row per point. Fields may be
/// separated by whitespace or commas; `#` starts a comment.
pub fn parse_cloud(text: &str) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let ln = i + 1;
        let vals = parse_nums::<f64>(line, ln)?;
        match vals.len() {
            3 => positions.push([vals[0], vals[1], vals[2]]),
            4 => {
                positions.push([vals[0], vals[1], vals[2]]);
                let l = vals[3];
                if l < 0.0 || l.fract() != 0.0 {
                    return Err(Error::Parse { line: ln, msg: format!("label {l} is not a class index") });
                }
                labels.push(l as usize);
            }
            n => return Err(Error::Parse { line: ln, msg: format!("expected 3 or 4 fields, got {n}") }),
        }
    }
    let mut cloud = PointCloud::new(positions)?;
    if !labels.is_empty() {
        if labels.len() != cloud.len() {
            return Err(Error::Parse { line: 0, msg: "labels present on some rows only".into() });
        }
        cloud.point_labels = Some(labels);
    }
    Ok(cloud)
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    parse_cloud(&fs::read_to_string(path)?)
}

pub fn format_cloud(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 72);
    for (i, p) in cloud.positions.iter().enumerate() {
        s.push_str(&format!("{},{},{}", fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2])));
        if let Some(l) = &cloud.point_labels {
            s.push_str(&format!(",{}", l[i]));
        }
        s.push('\n');
    }
    s
}

pub fn write_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(format_cloud(cloud).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CUBE_OFF: &str = "OFF\n# cube\n8 6 12\n\
        0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n\
        4 0 1 2 3\n4 4 5 6 7\n4 0 1 5 4\n4 2 3 7 6\n4 1 2 6 5\n4 0 3 7 4\n";

    #[test]
    fn off_quads_triangulated() {
        let m = parse_off(CUBE_OFF).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.faces.len(), 12);
        let area: f64 = (0..m.faces.len()).map(|f| m.face_area(f)).sum();
        assert!((area - 6.0).abs() < 1e-12);
    }

    #[test]
    fn off_header_with_counts() {
        let m = parse_off("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
        assert!(parse_off("PLY\n").is_err());
        assert!(parse_off("OFF\n3 1 0\n0 0 0\n").is_err());
    }

    #[test]
    fn cloud_text_roundtrip() {
        let mut c = PointCloud::new(vec![[0.1, 1.0 / 3.0, -2.5], [1e-20, 7.0, 0.0]]).unwrap();
        c.point_labels = Some(vec![3, 0]);
        let back = parse_cloud(&format_cloud(&c)).unwrap();
        assert_eq!(back, c);
        let plain = parse_cloud("0 0 0\n1 2 3\n").unwrap();
        assert_eq!(plain.len(), 2);
        assert!(plain.point_labels.is_none());
    }

    #[test]
    fn cloud_errors() {
        assert!(parse_cloud("").is_err());
        assert!(matches!(parse_cloud("1 2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_cloud("0 0 0 1.5\n").is_err());
    }
}
