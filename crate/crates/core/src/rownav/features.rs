use crate::spectral::{GridMap2D, Mask};

/// Weighted occupancy raster of plant features in a local frame. Feature
/// positions are the centers of cells with positive weight.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub origin: [f64; 2],
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    pub weights: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(origin: [f64; 2], cell_size: f64, size: [usize; 2]) -> Self {
        FeatureGrid {
            origin,
            cell_size,
            width: size[0],
            height: size[1],
            weights: vec![0.0; size[0] * size[1]],
        }
    }

    /// Unit vote per point; points outside the raster are dropped.
    pub fn from_points(points: &[[f64; 2]], cell_size: f64, origin: [f64; 2], size: [usize; 2]) -> Self {
        let mut g = FeatureGrid::new(origin, cell_size, size);
        for p in points {
            g.add(*p, 1.0);
        }
        g
    }

    pub fn add(&mut self, p: [f64; 2], w: f64) {
        let i = ((p[0] - self.origin[0]) / self.cell_size).floor();
        let j = ((p[1] - self.origin[1]) / self.cell_size).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < self.width && (j as usize) < self.height {
            let k = j as usize * self.width + i as usize;
            self.weights[k] += w.max(0.0);
        }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.cell_size,
            self.origin[1] + (j as f64 + 0.5) * self.cell_size,
        ]
    }

    /// `(position, weight)` for every occupied cell, row-major order.
    pub fn features(&self) -> impl Iterator<Item = ([f64; 2], f64)> + '_ {
        self.weights.iter().enumerate().filter(|(_, &w)| w > 0.0).map(move |(k, &w)| {
            (self.cell_center(k % self.width, k / self.width), w)
        })
    }

    pub fn occupied(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

/// Centroids of the 8-connected components of `mask`, in grid coordinates.
pub fn component_centroids(grid: &GridMap2D, mask: &Mask) -> Vec<[f64; 2]> {
    let (w, h) = (mask.width, mask.height);
    let mut label = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.cells[start] || label[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        while let Some(k) = stack.pop() {
            let (i, j) = (k % w, k / w);
            let [x, y] = grid.cell_center(i, j);
            sx += x;
            sy += y;
            n += 1;
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    let (ni, nj) = (i as i64 + di, j as i64 + dj);
                    if ni < 0 || nj < 0 || ni >= w as i64 || nj >= h as i64 {
                        continue;
                    }
                    let nk = nj as usize * w + ni as usize;
                    if mask.cells[nk] && !label[nk] {
                        label[nk] = true;
                        stack.push(nk);
                    }
                }
            }
        }
        out.push([sx / n as f64, sy / n as f64]);
    }
    out
}
