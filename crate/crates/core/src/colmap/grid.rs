use crate::spectral::ColoredCloud;

/// Height and ExG per cell on the global lattice `floor(x / cell_size)`.
/// Cells without points are invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalGrid {
    pub cell_size: f64,
    /// Lattice index of cell `(0, 0)`.
    pub index0: [i64; 2],
    pub width: usize,
    pub height: usize,
    pub h: Vec<f64>,
    pub exg: Vec<f64>,
    pub count: Vec<u32>,
}

impl MultimodalGrid {
    pub fn empty(cell_size: f64, index0: [i64; 2], width: usize, height: usize) -> Self {
        let n = width * height;
        MultimodalGrid {
            cell_size,
            index0,
            width,
            height,
            h: vec![0.0; n],
            exg: vec![0.0; n],
            count: vec![0; n],
        }
    }

    #[inline]
    pub fn valid(&self, k: usize) -> bool {
        self.count[k] > 0
    }

    pub fn valid_count(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    /// Local cell for a global lattice index.
    pub fn local(&self, gi: i64, gj: i64) -> Option<usize> {
        let (i, j) = (gi - self.index0[0], gj - self.index0[1]);
        (i >= 0 && j >= 0 && (i as usize) < self.width && (j as usize) < self.height)
            .then(|| j as usize * self.width + i as usize)
    }

    pub fn global(&self, k: usize) -> [i64; 2] {
        [self.index0[0] + (k % self.width) as i64, self.index0[1] + (k / self.width) as i64]
    }

    pub fn center(&self, gi: i64, gj: i64) -> [f64; 2] {
        [(gi as f64 + 0.5) * self.cell_size, (gj as f64 + 0.5) * self.cell_size]
    }

    /// Cell center lifted to the cell's mean height.
    pub fn point(&self, k: usize) -> [f64; 3] {
        let [gi, gj] = self.global(k);
        let [x, y] = self.center(gi, gj);
        [x, y, self.h[k]]
    }

    /// Sub-grid covering global indices `[lo, hi)` (clamped to this grid).
    pub fn crop(&self, lo: [i64; 2], hi: [i64; 2]) -> MultimodalGrid {
        let lo = [lo[0].max(self.index0[0]), lo[1].max(self.index0[1])];
        let hi = [
            hi[0].min(self.index0[0] + self.width as i64),
            hi[1].min(self.index0[1] + self.height as i64),
        ];
        let w = (hi[0] - lo[0]).max(0) as usize;
        let h = (hi[1] - lo[1]).max(0) as usize;
        let mut out = MultimodalGrid::empty(self.cell_size, lo, w, h);
        for j in 0..h {
            for i in 0..w {
                let src = self.local(lo[0] + i as i64, lo[1] + j as i64).expect("inside");
                let dst = j * w + i;
                out.h[dst] = self.h[src];
                out.exg[dst] = self.exg[src];
                out.count[dst] = self.count[src];
            }
        }
        out
    }
}

/// Per-cell aggregation: mean height and ExG of the mean color.
pub fn build_grid(cloud: &ColoredCloud, cell_size: f64) -> MultimodalGrid {
    if cloud.points.is_empty() || !(cell_size > 0.0) {
        return MultimodalGrid::empty(cell_size, [0, 0], 0, 0);
    }
    let idx = |v: f64| (v / cell_size).floor() as i64;
    let (mut lo, mut hi) = ([i64::MAX; 2], [i64::MIN; 2]);
    for p in &cloud.points {
        let g = [idx(p.pos[0]), idx(p.pos[1])];
        for a in 0..2 {
            lo[a] = lo[a].min(g[a]);
            hi[a] = hi[a].max(g[a]);
        }
    }
    let (w, h) = ((hi[0] - lo[0] + 1) as usize, (hi[1] - lo[1] + 1) as usize);
    let mut grid = MultimodalGrid::empty(cell_size, lo, w, h);
    let mut sums = vec![[0.0f64; 4]; w * h];
    for p in &cloud.points {
        let k = grid.local(idx(p.pos[0]), idx(p.pos[1])).expect("inside bounds");
        let s = &mut sums[k];
        s[0] += p.pos[2];
        s[1] += p.rgb[0];
        s[2] += p.rgb[1];
        s[3] += p.rgb[2];
        grid.count[k] += 1;
    }
    for (k, s) in sums.iter().enumerate() {
        let n = grid.count[k];
        if n > 0 {
            let n = n as f64;
            grid.h[k] = s[0] / n;
            grid.exg[k] = 2.0 * s[2] / n - s[1] / n - s[3] / n;
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ColoredPoint;
    use proptest::prelude::*;

    fn pt(x: f64, y: f64, z: f64, rgb: [f64; 3]) -> ColoredPoint {
        ColoredPoint { pos: [x, y, z], rgb }
    }

    #[test]
    fn single_and_pair() {
        let c = ColoredCloud { points: vec![pt(0.01, 0.01, 2.0, [0.2, 0.6, 0.1])], geo_tag: [0.0; 3] };
        let g = build_grid(&c, 0.04);
        assert_eq!(g.valid_count(), 1);
        assert_eq!(g.h[0], 2.0);
        assert!((g.exg[0] - (1.2 - 0.2 - 0.1)).abs() < 1e-12);
        let c = ColoredCloud {
            points: vec![pt(0.01, 0.01, 1.0, [0.0; 3]), pt(0.02, 0.03, 3.0, [0.0; 3])],
            geo_tag: [0.0; 3],
        };
        assert_eq!(build_grid(&c, 0.04).h[0], 2.0);
    }

    #[test]
    fn negative_coordinates_use_floor() {
        let c = ColoredCloud {
            points: vec![pt(-0.01, 0.05, 0.0, [0.0; 3]), pt(0.01, 0.05, 0.0, [0.0; 3])],
            geo_tag: [0.0; 3],
        };
        let g = build_grid(&c, 0.04);
        assert_eq!(g.index0, [-1, 1]);
        assert_eq!((g.width, g.valid_count()), (2, 2));
    }

    proptest! {
        #[test]
        fn aggregation_matches_direct_recomputation(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, -1.0f64..1.0, 0.0f64..1.0), 1..200),
            rot in 0usize..200,
        ) {
            let mut points: Vec<_> = pts.iter().map(|&(x, y, z, g)| pt(x, y, z, [0.3, g, 0.2])).collect();
            let g1 = build_grid(&ColoredCloud { points: points.clone(), geo_tag: [0.0; 3] }, 0.1);
            let r = rot % points.len();
            points.rotate_left(r);
            let g2 = build_grid(&ColoredCloud { points: points.clone(), geo_tag: [0.0; 3] }, 0.1);
            for k in 0..g1.h.len() {
                let [gi, gj] = g1.global(k);
                let members: Vec<_> = points.iter().filter(|p| (p.pos[0] / 0.1).floor() as i64 == gi && (p.pos[1] / 0.1).floor() as i64 == gj).collect();
                prop_assert_eq!(members.len() as u32, g1.count[k]);
                if !members.is_empty() {
                    let mean = members.iter().map(|p| p.pos[2]).sum::<f64>() / members.len() as f64;
                    prop_assert!((g1.h[k] - mean).abs() < 1e-6);
                    prop_assert!((g1.h[k] - g2.h[k]).abs() < 1e-9);
                }
            }
        }
    }
}
