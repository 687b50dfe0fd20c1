//! Binary graph sidecar, little-endian:
//!
//! ```text
//! b"SSGR"  u32 version  u32 nodes  u32 k
//! nodes × k × (u32 neighbor, f32 distance)
//! u32 dim  nodes × dim × f32 embedding
//! ```
//!
//! `dim` is zero when no embeddings were stored.

use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{NodeEmbeddings, PointGraph};

pub const MAGIC: &[u8; 4] = b"SSGR";
pub const VERSION: u32 = 1;

pub fn encode_graph(graph: &PointGraph, embeddings: Option<&NodeEmbeddings>) -> Result<Vec<u8>> {
    let n = graph.len();
    if let Some(e) = embeddings {
        if e.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} embedding rows for a {n}-node graph",
                e.len()
            )));
        }
    }
    if graph.adjacency.iter().any(|row| row.len() != graph.k) {
        return Err(Error::InvalidArgument(
            "every node needs exactly k edges".into(),
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for v in [VERSION, n as u32, graph.k as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for row in &graph.adjacency {
        for &(j, w) in row {
            out.extend_from_slice(&(j as u32).to_le_bytes());
            out.extend_from_slice(&(w as f32).to_le_bytes());
        }
    }
    let dim = embeddings.map_or(0, |e| e.dim);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    if let Some(e) = embeddings {
        for v in &e.vectors {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_graph(
    path: &Path,
    graph: &PointGraph,
    embeddings: Option<&NodeEmbeddings>,
) -> Result<()> {
    std::fs::write(path, encode_graph(graph, embeddings)?).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl Cursor<'_> {
    fn take4(&mut self, what: &str) -> Result<[u8; 4]> {
        let b = self
            .bytes
            .get(self.offset..self.offset + 4)
            .ok_or_else(|| {
                Error::parse_offset(self.offset, format!("truncated while reading {what}"))
            })?;
        self.offset += 4;
        Ok([b[0], b[1], b[2], b[3]])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take4(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take4(what)?))
    }
}

pub fn decode_graph(bytes: &[u8]) -> Result<(PointGraph, Option<NodeEmbeddings>)> {
    let mut c = Cursor { bytes, offset: 0 };
    if &c.take4("magic")? != MAGIC {
        return Err(Error::parse_offset(0, "missing SSGR magic"));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::parse_offset(
            4,
            format!("unsupported graph version {version}"),
        ));
    }
    let n = c.u32("node count")? as usize;
    let k = c.u32("degree")? as usize;
    let mut adjacency = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = Vec::with_capacity(k);
        for _ in 0..k {
            let at = c.offset;
            let j = c.u32("neighbor")? as usize;
            if j >= n {
                return Err(Error::parse_offset(
                    at,
                    format!("neighbor {j} out of range"),
                ));
            }
            row.push((j, c.f32("distance")? as f64));
        }
        adjacency.push(row);
    }
    let dim = c.u32("embedding dimension")? as usize;
    let embeddings = if dim == 0 {
        None
    } else {
        let mut vectors = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            vectors.push(c.f32("embedding")? as f64);
        }
        Some(NodeEmbeddings { dim, vectors })
    };
    if c.offset != bytes.len() {
        return Err(Error::parse_offset(c.offset, "trailing bytes"));
    }
    Ok((PointGraph { k, adjacency }, embeddings))
}

pub fn read_graph(path: &Path) -> Result<(PointGraph, Option<NodeEmbeddings>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_graph(&bytes)
}
