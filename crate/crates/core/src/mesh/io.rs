//! Plain-text mesh format.
//!
//! ```text
//! vertices N
//! x y            (N lines)
//! triangles M
//! i j k flag     (M lines, 0-based indices, flag 1 marks a reference-domain cell)
//! ```
//!
//! Tokens are whitespace separated; `#` starts a comment.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DeformationMap, MeshError, Point, ReferenceMesh};

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    /// Next non-empty line with comments stripped, as (1-based line number, tokens).
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            let content = line.split('#').next().unwrap_or("");
            let tokens: Vec<&str> = content.split_whitespace().collect();
            if !tokens.is_empty() {
                return Some((i + 1, tokens));
            }
        }
        None
    }

    fn expect(&mut self, last_line: usize, what: &str) -> Result<(usize, Vec<&'a str>), MeshError> {
        self.next_tokens().ok_or_else(|| MeshError::Parse { line: last_line + 1, message: format!("unexpected end of file, expected {what}") })
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> MeshError {
    MeshError::Parse { line, message: message.into() }
}

fn header(lines: &mut Lines, last: usize, keyword: &str) -> Result<(usize, usize), MeshError> {
    let (line, tokens) = lines.expect(last, keyword)?;
    match tokens.as_slice() {
        [k, count] if *k == keyword => {
            let count = count.parse().map_err(|_| parse_err(line, format!("invalid {keyword} count '{count}'")))?;
            Ok((line, count))
        }
        _ => Err(parse_err(line, format!("expected '{keyword} <count>'"))),
    }
}

/// Parses the text format; the result is fully validated.
pub fn parse_mesh(text: &str) -> Result<ReferenceMesh, MeshError> {
    let mut lines = Lines { inner: text.lines().enumerate() };
    let (mut last, n) = header(&mut lines, 0, "vertices")?;
    let mut vertices = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, tokens) = lines.expect(last, "vertex coordinates")?;
        last = line;
        if tokens.len() != 2 {
            return Err(parse_err(line, "expected 2 coordinates"));
        }
        let mut xy = [0.0f64; 2];
        for (slot, tok) in xy.iter_mut().zip(&tokens) {
            *slot = tok.parse().map_err(|_| parse_err(line, format!("invalid coordinate '{tok}'")))?;
            if !slot.is_finite() {
                return Err(parse_err(line, "non-finite coordinate"));
            }
        }
        vertices.push(Point::new(xy[0], xy[1]));
    }
    let (header_line, m) = header(&mut lines, last, "triangles")?;
    last = header_line;
    let mut triangles = Vec::with_capacity(m);
    let mut omega = Vec::with_capacity(m);
    for t in 0..m {
        let (line, tokens) = lines.expect(last, "triangle")?;
        last = line;
        if tokens.len() != 4 {
            return Err(parse_err(line, "expected 'i j k flag'"));
        }
        let mut idx = [0usize; 3];
        for (slot, tok) in idx.iter_mut().zip(&tokens) {
            *slot = tok.parse().map_err(|_| parse_err(line, format!("invalid vertex index '{tok}'")))?;
            if *slot >= n {
                return Err(parse_err(line, format!("triangle {t}: vertex index {slot} out of range (N = {n})")));
            }
        }
        let flag = match tokens[3] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(line, format!("invalid flag '{other}', expected 0 or 1"))),
        };
        triangles.push(idx);
        omega.push(flag);
    }
    if let Some((line, _)) = lines.next_tokens() {
        return Err(parse_err(line, "trailing content after triangle list"));
    }
    ReferenceMesh::new(vertices, triangles, omega)
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<ReferenceMesh, MeshError> {
    parse_mesh(&fs::read_to_string(path)?)
}

/// Serializes a mesh. With `phi`, the deformed vertex positions are written
/// instead of the reference ones (the result is again a valid mesh file when
/// `phi` is admissible).
pub fn write_mesh_to<W: Write>(out: &mut W, mesh: &ReferenceMesh, phi: Option<&DeformationMap>) -> std::io::Result<()> {
    let points = phi.map_or(mesh.vertices(), |p| p.values());
    writeln!(out, "vertices {}", points.len())?;
    for p in points {
        writeln!(out, "{:?} {:?}", p.x, p.y)?;
    }
    writeln!(out, "triangles {}", mesh.num_triangles())?;
    for (t, &flag) in mesh.triangles().iter().zip(mesh.omega_cells()) {
        writeln!(out, "{} {} {} {}", t[0], t[1], t[2], u8::from(flag))?;
    }
    Ok(())
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &ReferenceMesh) -> Result<(), MeshError> {
    let mut buf = Vec::new();
    write_mesh_to(&mut buf, mesh, None)?;
    fs::write(path, buf)?;
    Ok(())
}
