//! Binary little-endian PLY container for Gaussian clouds.
//!
//! Every point carries 29 `float` properties: position, rotation (w, x, y,
//! z), linear scale, opacity, RGB in [0, 1] and a 15-entry semantic
//! distribution. The header records the format version and the cloud's
//! generation counter as comments. Values are stored at 32-bit precision, so
//! a cloud round-trips bitwise once its values are f32-representable (see
//! [`quantize`]).

use std::io::Write;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::{validate_cloud, GaussianCloud, GaussianPoint};
use crate::parts::NUM_PARTS;

pub const FORMAT_VERSION: u32 = 1;

pub fn property_names() -> Vec<String> {
    let mut names: Vec<String> = [
        "x", "y", "z", "rot_w", "rot_x", "rot_y", "rot_z", "scale_x", "scale_y", "scale_z",
        "opacity", "red", "green", "blue",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend((0..NUM_PARTS).map(|i| format!("sem_{i}")));
    names
}

fn point_values(p: &GaussianPoint) -> [f64; 14 + NUM_PARTS] {
    let mut v = [0.0; 14 + NUM_PARTS];
    v[..3].copy_from_slice(p.position.as_slice());
    v[3..7].copy_from_slice(&[p.rotation.w, p.rotation.i, p.rotation.j, p.rotation.k]);
    v[7..10].copy_from_slice(p.scale.as_slice());
    v[10] = p.opacity;
    v[11..14].copy_from_slice(p.color.as_slice());
    v[14..].copy_from_slice(&p.semantic);
    v
}

fn point_from_values(v: &[f64]) -> GaussianPoint {
    let mut semantic = [0.0; NUM_PARTS];
    semantic.copy_from_slice(&v[14..14 + NUM_PARTS]);
    GaussianPoint {
        position: Vector3::new(v[0], v[1], v[2]),
        rotation: Quaternion::new(v[3], v[4], v[5], v[6]),
        scale: Vector3::new(v[7], v[8], v[9]),
        opacity: v[10],
        color: Vector3::new(v[11], v[12], v[13]),
        semantic,
    }
}

/// Rounds every value to f32 precision, i.e. what a write/read cycle yields.
pub fn quantize(cloud: &GaussianCloud) -> GaussianCloud {
    GaussianCloud {
        points: cloud
            .points
            .iter()
            .map(|p| {
                let v = point_values(p).map(|x| x as f32 as f64);
                point_from_values(&v)
            })
            .collect(),
        generation: cloud.generation,
    }
}

pub fn encode_cloud(cloud: &GaussianCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(512 + cloud.len() * 4 * (14 + NUM_PARTS));
    let _ = writeln!(out, "ply");
    let _ = writeln!(out, "format binary_little_endian 1.0");
    let _ = writeln!(out, "comment semsplat-cloud version {FORMAT_VERSION}");
    let _ = writeln!(out, "comment generation {}", cloud.generation);
    let _ = writeln!(out, "element vertex {}", cloud.len());
    for name in property_names() {
        let _ = writeln!(out, "property float {name}");
    }
    let _ = writeln!(out, "end_header");
    for p in &cloud.points {
        for v in point_values(p) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_cloud(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    std::fs::write(path, encode_cloud(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<GaussianCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cloud(&bytes)
}

pub fn decode_cloud(bytes: &[u8]) -> Result<GaussianCloud> {
    let mut offset = 0;
    let next_line = |offset: &mut usize| -> Result<String> {
        let start = *offset;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse_offset(start, "unterminated header line"))?;
        *offset = start + end + 1;
        String::from_utf8(bytes[start..start + end].to_vec())
            .map_err(|_| Error::parse_offset(start, "header is not UTF-8"))
    };

    let line_start = offset;
    if next_line(&mut offset)? != "ply" {
        return Err(Error::parse_offset(line_start, "missing 'ply' magic"));
    }
    let mut version = None;
    let mut generation = 0u32;
    let mut count = None;
    let mut properties = Vec::new();
    loop {
        let line_start = offset;
        let line = next_line(&mut offset)?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", other, ..] => {
                return Err(Error::parse_offset(
                    line_start,
                    format!("unsupported format '{other}'"),
                ))
            }
            ["comment", "semsplat-cloud", "version", v] => {
                version = Some(
                    v.parse::<u32>()
                        .map_err(|_| Error::parse_offset(line_start, "invalid version"))?,
                )
            }
            ["comment", "generation", g] => {
                generation = g
                    .parse()
                    .map_err(|_| Error::parse_offset(line_start, "invalid generation"))?
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| Error::parse_offset(line_start, "invalid vertex count"))?,
                )
            }
            ["element", other, ..] => {
                return Err(Error::parse_offset(
                    line_start,
                    format!("unexpected element '{other}'"),
                ))
            }
            ["property", "float", name] => properties.push(name.to_string()),
            ["property", ty, name] => {
                return Err(Error::parse_offset(
                    line_start,
                    format!("property '{name}' has unsupported type '{ty}'"),
                ))
            }
            _ => {
                return Err(Error::parse_offset(
                    line_start,
                    format!("unrecognized header line '{line}'"),
                ))
            }
        }
    }
    match version {
        Some(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::parse_offset(
                0,
                format!("unsupported cloud version {v}"),
            ))
        }
        None => return Err(Error::parse_offset(0, "missing version comment")),
    }
    let count = count.ok_or_else(|| Error::parse_offset(0, "missing vertex element"))?;
    let expected = property_names();
    if properties != expected {
        return Err(Error::parse_offset(
            0,
            format!("property list must be {}", expected.join(",")),
        ));
    }

    let stride = 4 * expected.len();
    let mut points = Vec::with_capacity(count);
    let mut values = vec![0.0; expected.len()];
    for i in 0..count {
        let start = offset + i * stride;
        if start + stride > bytes.len() {
            return Err(Error::parse_offset(
                bytes.len(),
                format!("truncated at point {i} of {count}"),
            ));
        }
        for (k, v) in values.iter_mut().enumerate() {
            let b = &bytes[start + 4 * k..start + 4 * k + 4];
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
        }
        points.push(point_from_values(&values));
    }
    let end = offset + count * stride;
    if end != bytes.len() {
        return Err(Error::parse_offset(end, "trailing bytes after last point"));
    }
    let cloud = GaussianCloud { points, generation };
    if let Some(v) = validate_cloud(&cloud).first() {
        return Err(Error::Validation(format!(
            "point {}: property {} invalid ({})",
            v.point, v.field, v.detail
        )));
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{init_gaussians, tests::cylinder_template};
    use proptest::prelude::*;

    #[test]
    fn template_cloud_round_trips() {
        let mut cloud = quantize(&init_gaussians(&cylinder_template(0.01), None));
        cloud.generation = 7;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        write_cloud(&cloud, &path).unwrap();
        let back = read_cloud(&path).unwrap();
        assert_eq!(back.len(), 6890);
        assert_eq!(back, cloud);
    }

    #[test]
    fn bad_semantic_row_is_rejected() {
        let mut cloud =
            GaussianCloud::new(vec![GaussianPoint::isotropic(Vector3::zeros(), 0.5, 2); 3]);
        cloud.points[1].semantic[2] = 0.5;
        let err = decode_cloud(&encode_cloud(&cloud)).unwrap_err().to_string();
        assert!(err.contains("point 1") && err.contains("semantic"), "{err}");
    }

    #[test]
    fn truncation_reports_offset() {
        let cloud = GaussianCloud::new(vec![GaussianPoint::isotropic(Vector3::zeros(), 0.5, 2); 3]);
        let bytes = encode_cloud(&cloud);
        let err = decode_cloud(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("byte offset"), "{err}");
    }

    proptest! {
        #[test]
        fn encode_decode_is_identity_on_quantized_clouds(
            seed in 0u64..1000, n in 1usize..40
        ) {
            let (cloud, _) = crate::gradcheck::random_scene(seed, n, 8);
            let cloud = quantize(&cloud);
            let back = decode_cloud(&encode_cloud(&cloud)).unwrap();
            prop_assert_eq!(&back, &cloud);
            prop_assert_eq!(encode_cloud(&back), encode_cloud(&cloud));
        }
    }
}
