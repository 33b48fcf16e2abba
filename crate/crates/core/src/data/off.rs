//! OFF mesh text format: header `OFF` (the counts may share its line — a
//! quirk in several public model sets), a `V F E` counts line, `V` vertex
//! lines, then `F` face lines (`arity idx…`, arity > 3 fan-triangulated).
//! `#` comments and blank lines are skipped everywhere; errors carry 1-based
//! line numbers counting every physical line.

use crate::data::Mesh;
use crate::error::{Error, Result};

fn err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn parse_off(text: &str) -> Result<Mesh> {
    let total_lines = text.lines().count();
    let mut lines = text.lines().enumerate().filter_map(|(i, l)| {
        let t = l.trim();
        if t.is_empty() || t.starts_with('#') {
            None
        } else {
            Some((i + 1, t))
        }
    });
    let mut next_line = |what: &str| {
        lines
            .next()
            .ok_or_else(|| err(total_lines + 1, format!("unexpected end of file: expected {what}")))
    };

    let (header_no, header) = next_line("OFF header")?;
    let counts_inline = match header.strip_prefix("OFF") {
        Some(rest) if rest.trim().is_empty() => None,
        Some(rest) => Some((header_no, rest.trim())),
        None => return Err(err(header_no, format!("expected OFF header, got '{header}'"))),
    };
    let (counts_no, counts) = match counts_inline {
        Some(c) => c,
        None => next_line("counts line")?,
    };
    let tokens: Vec<&str> = counts.split_whitespace().collect();
    if tokens.len() != 3 {
        return Err(err(
            counts_no,
            format!("counts line needs 'V F E', got {} values", tokens.len()),
        ));
    }
    let parse_count = |tok: &str| {
        tok.parse::<usize>()
            .map_err(|_| err(counts_no, format!("bad count '{tok}'")))
    };
    let v = parse_count(tokens[0])?;
    let f = parse_count(tokens[1])?;
    parse_count(tokens[2])?; // edge count present but unused

    let mut vertices = Vec::with_capacity(v * 3);
    for i in 0..v {
        let (line_no, line) = next_line(&format!("vertex {} of {v}", i + 1))?;
        let mut it = line.split_whitespace();
        for axis in 0..3 {
            let tok = it.next().ok_or_else(|| {
                err(line_no, format!("vertex line has {axis} coordinates, needs 3"))
            })?;
            let val: f64 = tok
                .parse()
                .map_err(|_| err(line_no, format!("bad coordinate '{tok}'")))?;
            vertices.push(val);
        }
        // Trailing tokens (e.g. per-vertex colors) are ignored.
    }

    let mut faces = Vec::with_capacity(f);
    for i in 0..f {
        let (line_no, line) = next_line(&format!("face {} of {f}", i + 1))?;
        let mut it = line.split_whitespace();
        let arity_tok = it.next().expect("non-empty by filter");
        let arity: usize = arity_tok
            .parse()
            .map_err(|_| err(line_no, format!("bad face arity '{arity_tok}'")))?;
        if arity < 3 {
            return Err(err(line_no, format!("face needs at least 3 vertices, got {arity}")));
        }
        let mut idx = Vec::with_capacity(arity);
        for j in 0..arity {
            let tok = it
                .next()
                .ok_or_else(|| err(line_no, format!("face lists {j} of {arity} indices")))?;
            let id: usize = tok
                .parse()
                .map_err(|_| err(line_no, format!("bad vertex index '{tok}'")))?;
            if id >= v {
                return Err(err(line_no, format!("vertex index {id} out of range (V={v})")));
            }
            idx.push(id);
        }
        if it.next().is_some() {
            return Err(err(line_no, format!("face lists more than {arity} indices")));
        }
        // Fan triangulation around the first vertex.
        for j in 1..arity - 1 {
            faces.push([idx[0], idx[j], idx[j + 1]]);
        }
    }

    Ok(Mesh { vertices, faces })
}

/// Writes a mesh in the exact dialect [`parse_off`] reads; coordinates use
/// shortest-round-trip formatting, so parse(serialize(m)) == m.
pub fn serialize_off(mesh: &Mesh) -> String {
    let mut out = String::from("OFF\n");
    out.push_str(&format!("{} {} 0\n", mesh.num_vertices(), mesh.faces.len()));
    for p in mesh.vertices.chunks_exact(3) {
        out.push_str(&format!("{:?} {:?} {:?}\n", p[0], p[1], p[2]));
    }
    for face in &mesh.faces {
        out.push_str(&format!("3 {} {} {}\n", face[0], face[1], face[2]));
    }
    out
}
