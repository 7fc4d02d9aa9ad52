//! Plain-text point lists: one `x y z` triple per line, `#` starts a comment.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub fn parse_points(text: &str) -> Result<Vec<Vector3<f64>>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", n + 1)))?;
        if vals.len() != 3 || !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::Format(format!("line {}: expected three finite numbers", n + 1)));
        }
        out.push(Vector3::new(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

pub fn read_points(path: &Path) -> Result<Vec<Vector3<f64>>> {
    parse_points(&std::fs::read_to_string(path)?)
}

pub fn format_points(points: &[Vector3<f64>]) -> String {
    points.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect()
}
