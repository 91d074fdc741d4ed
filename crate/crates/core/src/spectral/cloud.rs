use std::fmt::Write as _;
use std::path::Path;

use crate::io::{read_to_string, write_atomic};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColoredPoint {
    pub pos: [f64; 3],
    pub rgb: [f64; 3],
}

impl ColoredPoint {
    #[inline]
    pub fn exg(&self) -> f64 {
        super::exg(self.rgb[0], self.rgb[1], self.rgb[2])
    }
}

/// Colored, georeferenced point cloud; `geo_tag` is the frame origin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ColoredCloud {
    pub points: Vec<ColoredPoint>,
    pub geo_tag: [f64; 3],
}

impl ColoredCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| p.pos).collect()
    }

    /// Checks finite coordinates and colors in [0, 1].
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if p.pos.iter().any(|v| !v.is_finite()) {
                return Err(Error::ContractViolation(format!("point {i} is not finite")));
            }
            if p.rgb.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::ContractViolation(format!("point {i} color outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// ASCII PLY with float `x y z r g b` (colors in [0, 1]).
pub fn ply_string(cloud: &ColoredCloud) -> String {
    let mut s = String::with_capacity(64 + cloud.len() * 64);
    let [gx, gy, gz] = cloud.geo_tag;
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\ncomment geo_tag {gx:.9} {gy:.9} {gz:.9}\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float r\nproperty float g\nproperty float b\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        let _ = writeln!(
            s,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            p.pos[0], p.pos[1], p.pos[2], p.rgb[0], p.rgb[1], p.rgb[2]
        );
    }
    s
}

pub fn write_ply(path: &Path, cloud: &ColoredCloud) -> Result<()> {
    write_atomic(path, ply_string(cloud).as_bytes())
}

/// Reads ASCII PLY with `x y z` and either float `r g b` in [0, 1] or
/// `uchar red green blue`.
pub fn parse_ply(text: &str) -> Result<ColoredCloud> {
    let err = |m: String| Error::parse("ply", m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(err("missing `ply` magic".into()));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut geo_tag = [0.0; 3];
    let mut in_vertex = false;
    for line in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(err(format!("unsupported format {fmt}"))),
            ["comment", "geo_tag", x, y, z] => {
                for (slot, v) in geo_tag.iter_mut().zip([x, y, z]) {
                    *slot = v.parse().map_err(|e| err(format!("geo_tag: {e}")))?;
                }
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|e| err(e.to_string()))?);
                }
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| err("no vertex element".into()))?;
    let col = |names: &[&str]| names.iter().find_map(|n| props.iter().position(|p| p == n));
    let ix = [col(&["x"]), col(&["y"]), col(&["z"])];
    let (float_rgb, rgb_ix) = match [col(&["r"]), col(&["g"]), col(&["b"])] {
        [Some(r), Some(g), Some(b)] => (true, [r, g, b]),
        _ => match [col(&["red"]), col(&["green"]), col(&["blue"])] {
            [Some(r), Some(g), Some(b)] => (false, [r, g, b]),
            _ => return Err(err("missing color properties".into())),
        },
    };
    let [Some(xi), Some(yi), Some(zi)] = ix else {
        return Err(err("missing x/y/z properties".into()));
    };
    let mut points = Vec::with_capacity(count);
    for line in lines.filter(|l| !l.trim().is_empty()).take(count) {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| err(format!("`{t}`: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() < props.len() {
            return Err(err("short vertex line".into()));
        }
        let scale = if float_rgb { 1.0 } else { 1.0 / 255.0 };
        points.push(ColoredPoint {
            pos: [vals[xi], vals[yi], vals[zi]],
            rgb: rgb_ix.map(|i| vals[i] * scale),
        });
    }
    if points.len() != count {
        return Err(err(format!("expected {count} vertices, found {}", points.len())));
    }
    let cloud = ColoredCloud { points, geo_tag };
    cloud.validate()?;
    Ok(cloud)
}

pub fn read_ply(path: &Path) -> Result<ColoredCloud> {
    parse_ply(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ply_round_trip() {
        let cloud = ColoredCloud {
            points: vec![
                ColoredPoint { pos: [1.0, 2.0, 3.0], rgb: [0.1, 0.5, 0.2] },
                ColoredPoint { pos: [-1.5, 0.25, 0.0], rgb: [1.0, 0.0, 0.0] },
            ],
            geo_tag: [10.0, 20.0, 0.5],
        };
        let back = parse_ply(&ply_string(&cloud)).unwrap();
        assert_eq!(back, cloud);
    }

    #[test]
    fn ply_uchar_colors() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 255 0 51\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.points[0].rgb, [1.0, 0.0, 0.2]);
    }

    #[test]
    fn ply_rejects_truncated() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty float r\nproperty float g\nproperty float b\nend_header\n0 0 0 0 0 0\n";
        assert!(parse_ply(text).is_err());
    }
}
