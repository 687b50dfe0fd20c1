//! Plain-text body template format.
//!
//! ```text
//! semsplat-template 1
//! betas b0 b1 ... b9
//! joints 24
//! j <index> <parent> <x> <y> <z>          (24 lines)
//! vertices <n>
//! v <x> <y> <z> <label> <joint> <weight> [<joint> <weight> ...]   (n lines)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::body::{BodyTemplate, MAX_INFLUENCES, NUM_BETAS};
use crate::error::{Error, Result};

pub const MAGIC: &str = "semsplat-template";
pub const VERSION: u32 = 1;

pub fn write_template(template: &BodyTemplate, path: &Path) -> Result<()> {
    std::fs::write(path, format_template(template)).map_err(|e| Error::io(path, e))
}

pub fn format_template(t: &BodyTemplate) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let betas: Vec<String> = t.betas.iter().map(|b| b.to_string()).collect();
    let _ = writeln!(s, "betas {}", betas.join(" "));
    let _ = writeln!(s, "joints {}", t.joints.len());
    for (j, (p, parent)) in t.joints.iter().zip(&t.parents).enumerate() {
        let _ = writeln!(s, "j {j} {parent} {} {} {}", p.x, p.y, p.z);
    }
    let _ = writeln!(s, "vertices {}", t.vertices.len());
    for ((v, label), weights) in t.vertices.iter().zip(&t.part_labels).zip(&t.skin_weights) {
        let _ = write!(s, "v {} {} {} {label}", v.x, v.y, v.z);
        for (j, w) in weights {
            let _ = write!(s, " {j} {w}");
        }
        s.push('\n');
    }
    s
}

pub fn read_template(path: &Path) -> Result<BodyTemplate> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_template(&text)
}

fn num<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse_line(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse_line(line, format!("invalid {what} '{tok}'")))
}

pub fn parse_template(text: &str) -> Result<BodyTemplate> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse_line(0, format!("unexpected end of file, expected {what}")))
    };

    let (ln, header) = next("header")?;
    let mut tok = header.split_whitespace();
    if tok.next() != Some(MAGIC) {
        return Err(Error::parse_line(ln, format!("expected '{MAGIC}' header")));
    }
    let version: u32 = num(tok.next(), ln, "version")?;
    if version != VERSION {
        return Err(Error::parse_line(
            ln,
            format!("unsupported version {version}"),
        ));
    }

    let (ln, line) = next("betas")?;
    let mut tok = line.split_whitespace();
    if tok.next() != Some("betas") {
        return Err(Error::parse_line(ln, "expected 'betas'"));
    }
    let mut betas = [0.0; NUM_BETAS];
    for b in betas.iter_mut() {
        *b = num(tok.next(), ln, "beta")?;
    }
    if tok.next().is_some() {
        return Err(Error::parse_line(ln, format!("expected {NUM_BETAS} betas")));
    }

    let (ln, line) = next("joints")?;
    let mut tok = line.split_whitespace();
    if tok.next() != Some("joints") {
        return Err(Error::parse_line(ln, "expected 'joints <count>'"));
    }
    let joint_count: usize = num(tok.next(), ln, "joint count")?;
    let mut joints = Vec::with_capacity(joint_count);
    let mut parents = Vec::with_capacity(joint_count);
    for j in 0..joint_count {
        let (ln, line) = next("joint")?;
        let mut tok = line.split_whitespace();
        if tok.next() != Some("j") {
            return Err(Error::parse_line(ln, "expected joint record 'j'"));
        }
        let index: usize = num(tok.next(), ln, "joint index")?;
        if index != j {
            return Err(Error::parse_line(
                ln,
                format!("joint index {index}, expected {j}"),
            ));
        }
        parents.push(num::<i32>(tok.next(), ln, "parent")?);
        joints.push(Vector3::new(
            num(tok.next(), ln, "x")?,
            num(tok.next(), ln, "y")?,
            num(tok.next(), ln, "z")?,
        ));
    }

    let (ln, line) = next("vertices")?;
    let mut tok = line.split_whitespace();
    if tok.next() != Some("vertices") {
        return Err(Error::parse_line(ln, "expected 'vertices <count>'"));
    }
    let vertex_count: usize = num(tok.next(), ln, "vertex count")?;
    let mut vertices = Vec::with_capacity(vertex_count);
    let mut part_labels = Vec::with_capacity(vertex_count);
    let mut skin_weights = Vec::with_capacity(vertex_count);
    for _ in 0..vertex_count {
        let (ln, line) = next("vertex")?;
        let mut tok = line.split_whitespace();
        if tok.next() != Some("v") {
            return Err(Error::parse_line(ln, "expected vertex record 'v'"));
        }
        vertices.push(Vector3::new(
            num(tok.next(), ln, "x")?,
            num(tok.next(), ln, "y")?,
            num(tok.next(), ln, "z")?,
        ));
        part_labels.push(num::<u8>(tok.next(), ln, "part label")?);
        let rest: Vec<&str> = tok.collect();
        if rest.is_empty() || !rest.len().is_multiple_of(2) || rest.len() / 2 > MAX_INFLUENCES {
            return Err(Error::parse_line(
                ln,
                format!("expected 1 to {MAX_INFLUENCES} (joint, weight) pairs"),
            ));
        }
        let mut weights = Vec::with_capacity(rest.len() / 2);
        for pair in rest.chunks(2) {
            weights.push((
                num(Some(pair[0]), ln, "joint")?,
                num(Some(pair[1]), ln, "weight")?,
            ));
        }
        skin_weights.push(weights);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::parse_line(ln, "unexpected trailing content"));
    }
    Ok(BodyTemplate {
        vertices,
        part_labels,
        skin_weights,
        joints,
        parents,
        betas,
    })
}
