use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, Isometry3, Matrix2, Matrix3, Matrix6, Quaternion, Translation3, UnitQuaternion, Vector3};

use super::{AltitudeSource, Constraint, PoseGraph, PoseNode};
use crate::fieldgen::DemRaster;
use crate::{Error, Result};

fn upper(out: &mut String, info: &[f64], d: usize) {
    for i in 0..d {
        for j in i..d {
            let _ = write!(out, " {}", info[i * d + j]);
        }
    }
}

fn pose(out: &mut String, t: &Vector3<f64>, q: &UnitQuaternion<f64>) {
    let _ = write!(out, " {} {} {} {} {} {} {}", t[0], t[1], t[2], q.i, q.j, q.k, q.w);
}

/// Graph snapshot in g2o-style lines. Timestamps and fixed nodes use the
/// extra `TIME id t` and `FIX id` records.
pub fn write_g2o(graph: &PoseGraph) -> String {
    let mut out = String::new();
    for n in graph.nodes.values() {
        out.push_str(&format!("VERTEX_SE3 {}", n.id));
        pose(&mut out, &n.translation, &n.rotation);
        out.push('\n');
        let _ = writeln!(out, "TIME {} {}", n.id, n.timestamp);
    }
    for id in &graph.fixed {
        let _ = writeln!(out, "FIX {id}");
    }
    for c in &graph.constraints {
        let info = c.information();
        match c {
            Constraint::MotionEdge { i, j, relative, .. } => {
                let _ = write!(out, "EDGE_SE3 {i} {j}");
                pose(&mut out, &relative.translation.vector, &relative.rotation);
            }
            Constraint::GpsPrior { i, position, .. } => {
                let _ = write!(out, "PRIOR_GPS {i} {} {} {}", position[0], position[1], position[2]);
            }
            Constraint::ImuPrior { i, roll_pitch, .. } => {
                let _ = write!(out, "PRIOR_IMU {i} {} {}", roll_pitch[0], roll_pitch[1]);
            }
            Constraint::DemPrior { i, altitude, .. } => match altitude {
                AltitudeSource::Fixed(z) => {
                    let _ = write!(out, "PRIOR_DEM {i} {z}");
                }
                AltitudeSource::Dem => {
                    let _ = write!(out, "PRIOR_DEM {i} dem");
                }
            },
            Constraint::AltitudeSmoothness { i, j, .. } => {
                let _ = write!(out, "EDGE_ZSMOOTH {i} {j}");
            }
        }
        upper(&mut out, &info, c.dim());
        out.push('\n');
    }
    out
}

struct Fields<'a> {
    line: usize,
    it: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::parse("g2o", format!("line {}: {msg}", self.line))
    }

    fn word(&mut self) -> Result<&'a str> {
        let line = self.line;
        self.it.next().ok_or_else(|| Error::parse("g2o", format!("line {line}: missing field")))
    }

    fn f(&mut self) -> Result<f64> {
        let w = self.word()?;
        w.parse().map_err(|_| self.err(format!("bad number {w:?}")))
    }

    fn id(&mut self) -> Result<u64> {
        let w = self.word()?;
        w.parse().map_err(|_| self.err(format!("bad id {w:?}")))
    }

    fn pose(&mut self) -> Result<(Vector3<f64>, UnitQuaternion<f64>)> {
        let t = Vector3::new(self.f()?, self.f()?, self.f()?);
        let (x, y, z, w) = (self.f()?, self.f()?, self.f()?, self.f()?);
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) {
            return Err(self.err("zero quaternion"));
        }
        // Written quaternions are already unit; keep their bits.
        let q = if (q.norm() - 1.0).abs() < 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok((t, q))
    }

    fn info(&mut self, d: usize) -> Result<DMatrix<f64>> {
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = self.f()?;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Ok(m)
    }

    fn end(mut self) -> Result<()> {
        match self.it.next() {
            Some(w) => Err(self.err(format!("trailing field {w:?}"))),
            None => Ok(()),
        }
    }
}

/// Parses a snapshot written by [`write_g2o`]. `PRIOR_DEM id dem` lines need
/// the raster passed in `dem`.
pub fn read_g2o(text: &str, dem: Option<Arc<DemRaster>>) -> Result<PoseGraph> {
    let mut graph = PoseGraph { dem, ..Default::default() };
    let mut times: BTreeMap<u64, f64> = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut it = raw.split_whitespace();
        let tag = it.next().unwrap_or_default();
        let mut f = Fields { line: k + 1, it };
        match tag {
            "VERTEX_SE3" => {
                let id = f.id()?;
                let (t, q) = f.pose()?;
                graph.add_node(PoseNode::new(id, 0.0, t, q));
            }
            "TIME" => {
                let id = f.id()?;
                times.insert(id, f.f()?);
            }
            "FIX" => {
                graph.fixed.insert(f.id()?);
            }
            "EDGE_SE3" => {
                let (i, j) = (f.id()?, f.id()?);
                let (t, q) = f.pose()?;
                let info = Matrix6::from_iterator(f.info(6)?.iter().copied());
                graph.add(Constraint::MotionEdge {
                    i,
                    j,
                    relative: Isometry3::from_parts(Translation3::from(t), q),
                    info,
                });
            }
            "PRIOR_GPS" => {
                let i = f.id()?;
                let position = Vector3::new(f.f()?, f.f()?, f.f()?);
                let info = Matrix3::from_iterator(f.info(3)?.iter().copied());
                graph.add(Constraint::GpsPrior { i, position, info });
            }
            "PRIOR_IMU" => {
                let i = f.id()?;
                let roll_pitch = [f.f()?, f.f()?];
                let info = Matrix2::from_iterator(f.info(2)?.iter().copied());
                graph.add(Constraint::ImuPrior { i, roll_pitch, info });
            }
            "PRIOR_DEM" => {
                let i = f.id()?;
                let altitude = if f.it.clone().next() == Some("dem") {
                    f.word()?;
                    if graph.dem.is_none() {
                        return Err(Error::Config("snapshot references a DEM but none was given".into()));
                    }
                    AltitudeSource::Dem
                } else {
                    AltitudeSource::Fixed(f.f()?)
                };
                graph.add(Constraint::DemPrior { i, altitude, info: f.f()? });
            }
            "EDGE_ZSMOOTH" => {
                let (i, j) = (f.id()?, f.id()?);
                graph.add(Constraint::AltitudeSmoothness { i, j, info: f.f()? });
            }
            other => return Err(f.err(format!("unknown record {other:?}"))),
        }
        f.end()?;
    }
    for (id, t) in times {
        match graph.nodes.get_mut(&id) {
            Some(n) => n.timestamp = t,
            None => return Err(Error::DanglingConstraint(id)),
        }
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut g = PoseGraph::with_dem(Arc::new(DemRaster::flat(1.0, [0.0, 0.0], 1.0, 3, 3)));
        let q = UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3);
        g.add_node(PoseNode::new(0, 0.5, Vector3::new(0.1, 0.2, 0.3), q));
        g.add_node(PoseNode::new(1, 1.5, Vector3::new(1.0 / 3.0, 0.2, 0.3), UnitQuaternion::identity()));
        g.fixed.insert(0);
        let mut info6 = Matrix6::identity();
        info6[(0, 1)] = 0.25;
        info6[(1, 0)] = 0.25;
        g.add(Constraint::MotionEdge { i: 0, j: 1, relative: Isometry3::from_parts(Translation3::new(1.0, 0.0, 0.0), q), info: info6 });
        g.add(Constraint::GpsPrior { i: 1, position: Vector3::new(1.0, 2.0, 3.0), info: Matrix3::identity() * 4.0 });
        g.add(Constraint::ImuPrior { i: 1, roll_pitch: [0.01, -0.02], info: Matrix2::identity() });
        g.add(Constraint::DemPrior { i: 0, altitude: AltitudeSource::Fixed(2.5), info: 11.0 });
        g.add(Constraint::DemPrior { i: 1, altitude: AltitudeSource::Dem, info: 11.0 });
        g.add(Constraint::AltitudeSmoothness { i: 0, j: 1, info: 400.0 });
        let text = write_g2o(&g);
        let back = read_g2o(&text, g.dem.clone()).unwrap();
        assert_eq!(back.nodes, g.nodes);
        assert_eq!(back.constraints, g.constraints);
        assert_eq!(back.fixed, g.fixed);
        assert_eq!(write_g2o(&back), text);
        assert!(read_g2o(&text, None).is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(read_g2o("VERTEX_SE3 0 1 2\n", None).is_err());
        assert!(read_g2o("BOGUS 1\n", None).is_err());
        assert!(read_g2o("EDGE_ZSMOOTH 0 1 2 3\n", None).is_err());
    }
}
