//! Pose files: 24 lines of joint axis-angle triples, then the root translation.

use std::fmt::Write as _;
use std::path::Path;

use crate::body::PoseParams;
use crate::error::{Error, Result};

pub fn format_pose(pose: &PoseParams) -> String {
    let mut s = String::new();
    for r in &pose.joint_rotations {
        let _ = writeln!(s, "{} {} {}", r.x, r.y, r.z);
    }
    let t = &pose.root_translation;
    let _ = writeln!(s, "{} {} {}", t.x, t.y, t.z);
    s
}

pub fn parse_pose(text: &str) -> Result<PoseParams> {
    let mut values = Vec::with_capacity(75);
    for (i, line) in text.lines().enumerate() {
        for tok in line.split_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| Error::parse_line(i + 1, format!("invalid number '{tok}'")))?,
            );
        }
    }
    let pose = PoseParams::from_flat(&values)?;
    pose.validate()?;
    Ok(pose)
}

pub fn write_pose(pose: &PoseParams, path: &Path) -> Result<()> {
    std::fs::write(path, format_pose(pose)).map_err(|e| Error::io(path, e))
}

pub fn read_pose(path: &Path) -> Result<PoseParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose(&text)
}
