//! ASCII PLY for labeled point clouds: `x y z nx ny nz label layer`.

use super::IoError;
use crate::mesh::LabeledPointCloud;
use nalgebra::Vector3;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn save_ply(path: &Path, pc: &LabeledPointCloud) -> Result<(), IoError> {
    let mut out = String::new();
    writeln!(out, "ply").unwrap();
    writeln!(out, "format ascii 1.0").unwrap();
    writeln!(out, "element vertex {}", pc.len()).unwrap();
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(out, "property double {p}").unwrap();
    }
    writeln!(out, "property uchar label").unwrap();
    writeln!(out, "property uint layer").unwrap();
    writeln!(out, "end_header").unwrap();
    for i in 0..pc.len() {
        let p = pc.points[i];
        let n = pc.normals[i];
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            p.x, p.y, p.z, n.x, n.y, n.z, pc.labels[i], pc.layer_ids[i]
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| IoError::file(path, e))
}

pub fn load_ply(path: &Path) -> Result<LabeledPointCloud, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let mut lines = text.lines();
    let mut count: Option<usize> = None;
    for line in lines.by_ref() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("element vertex ") {
            count = rest.parse().ok();
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| IoError::format(path, "missing vertex element"))?;
    let mut pc = LabeledPointCloud::default();
    for line in lines.take(count) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(IoError::format(path, format!("bad vertex row {line:?}")));
        }
        let num = |s: &str| -> Result<f64, IoError> {
            s.parse()
                .map_err(|_| IoError::format(path, format!("bad number {s:?}")))
        };
        pc.push(
            Vector3::new(num(f[0])?, num(f[1])?, num(f[2])?),
            Vector3::new(num(f[3])?, num(f[4])?, num(f[5])?),
            f[6].parse()
                .map_err(|_| IoError::format(path, "bad label"))?,
            f[7].parse()
                .map_err(|_| IoError::format(path, "bad layer"))?,
            (0, 0, 0),
        );
    }
    if pc.len() != count {
        return Err(IoError::format(path, "vertex count mismatch"));
    }
    Ok(pc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut pc = LabeledPointCloud::default();
        pc.push(
            Vector3::new(0.125, -2.5, 3.0),
            Vector3::new(0.0, 0.0, -1.0),
            5,
            2,
            (2, 7, 9),
        );
        pc.push(
            Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(1.0, 0.0, 0.0),
            9,
            1,
            (1, 0, 0),
        );
        let path = dir.path().join("pc.ply");
        save_ply(&path, &pc).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(back.points, pc.points);
        assert_eq!(back.normals, pc.normals);
        assert_eq!(back.labels, pc.labels);
        assert_eq!(back.layer_ids, pc.layer_ids);
    }
}
