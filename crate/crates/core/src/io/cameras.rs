//! Cameras file: one camera per line,
//! `id fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz width height split`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::render::Camera;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraEntry {
    pub id: String,
    pub camera: Camera,
    pub split: Split,
}

pub fn format_cameras(entries: &[CameraEntry]) -> String {
    let mut s = String::from(
        "# id fx fy cx cy r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz width height split\n",
    );
    for e in entries {
        let c = &e.camera;
        let _ = write!(s, "{} {} {} {} {}", e.id, c.fx, c.fy, c.cx, c.cy);
        for r in 0..3 {
            for col in 0..3 {
                let _ = write!(s, " {}", c.rotation[(r, col)]);
            }
        }
        let _ = writeln!(
            s,
            " {} {} {} {} {} {}",
            c.translation.x,
            c.translation.y,
            c.translation.z,
            c.width,
            c.height,
            e.split.as_str()
        );
    }
    s
}

pub fn write_cameras(entries: &[CameraEntry], path: &Path) -> Result<()> {
    std::fs::write(path, format_cameras(entries)).map_err(|e| Error::io(path, e))
}

pub fn parse_cameras(text: &str) -> Result<Vec<CameraEntry>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() != 20 {
            return Err(Error::parse_line(
                ln,
                format!("expected 20 fields, found {}", tok.len()),
            ));
        }
        let f = |k: usize| -> Result<f64> {
            tok[k]
                .parse()
                .map_err(|_| Error::parse_line(ln, format!("invalid number '{}'", tok[k])))
        };
        let u = |k: usize| -> Result<usize> {
            tok[k]
                .parse()
                .map_err(|_| Error::parse_line(ln, format!("invalid size '{}'", tok[k])))
        };
        let mut rotation = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                rotation[(r, c)] = f(5 + 3 * r + c)?;
            }
        }
        let camera = Camera {
            fx: f(1)?,
            fy: f(2)?,
            cx: f(3)?,
            cy: f(4)?,
            rotation,
            translation: Vector3::new(f(14)?, f(15)?, f(16)?),
            width: u(17)?,
            height: u(18)?,
        };
        camera
            .validate()
            .map_err(|e| Error::parse_line(ln, e.to_string()))?;
        let split = tok[19]
            .parse()
            .map_err(|e: Error| Error::parse_line(ln, e.to_string()))?;
        out.push(CameraEntry {
            id: tok[0].to_string(),
            camera,
            split,
        });
    }
    Ok(out)
}

pub fn read_cameras(path: &Path) -> Result<Vec<CameraEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text)
}

pub fn find_camera<'a>(entries: &'a [CameraEntry], id: &str) -> Result<&'a CameraEntry> {
    entries
        .iter()
        .find(|e| e.id == id)
        .ok_or_else(|| Error::InvalidArgument(format!("no camera with id '{id}'")))
}
