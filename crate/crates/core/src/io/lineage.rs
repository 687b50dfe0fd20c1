//! Sidecar listing, per point, the template vertex whose skinning weights
//! pose it. One integer per line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// `cloud.ply` → `cloud.lineage`.
pub fn lineage_path(cloud_path: &Path) -> PathBuf {
    cloud_path.with_extension("lineage")
}

pub fn format_lineage(lineage: &[usize]) -> String {
    let mut s = String::with_capacity(lineage.len() * 5);
    for v in lineage {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn parse_lineage(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| {
                Error::parse_line(i + 1, format!("invalid vertex index '{}'", l.trim()))
            })
        })
        .collect()
}

pub fn write_lineage(lineage: &[usize], path: &Path) -> Result<()> {
    std::fs::write(path, format_lineage(lineage)).map_err(|e| Error::io(path, e))
}

pub fn read_lineage(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_lineage(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let l = vec![0, 5, 5, 6889];
        assert_eq!(parse_lineage(&format_lineage(&l)).unwrap(), l);
        assert!(parse_lineage("1\n-2\n")
            .unwrap_err()
            .to_string()
            .contains("line 2"));
        assert_eq!(
            lineage_path(Path::new("run/final.ply")),
            PathBuf::from("run/final.lineage")
        );
    }
}
