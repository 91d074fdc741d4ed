use super::MultimodalGrid;

const BINS: usize = 8;
const BLOCKS: usize = 4;
/// Values per channel: 4 × 4 sub-blocks × 8 orientation bins.
pub const DESCRIPTOR_LEN: usize = BLOCKS * BLOCKS * BINS;

/// Oriented-gradient patch descriptors of the ExG and height channels for
/// every cell of a grid.
#[derive(Debug, Clone)]
pub struct DescriptorImage {
    pub width: usize,
    pub height: usize,
    pub index0: [i64; 2],
    /// Side of one sub-block in cells.
    pub block: usize,
    pub exg: Vec<f32>,
    pub height_desc: Vec<f32>,
}

/// Invalid cells take the mean of already-known 4-neighbours, growing
/// outwards from the valid ones; anything unreachable gets the global mean.
fn inpaint(grid: &MultimodalGrid, values: &[f64]) -> Vec<f64> {
    let (w, h) = (grid.width, grid.height);
    let mut out = values.to_vec();
    let mut known: Vec<bool> = (0..w * h).map(|k| grid.valid(k)).collect();
    let n_known = known.iter().filter(|&&k| k).count();
    if n_known == 0 {
        return vec![0.0; w * h];
    }
    let mean = (0..w * h).filter(|&k| known[k]).map(|k| values[k]).sum::<f64>() / n_known as f64;
    for _ in 0..8 {
        let snapshot = known.clone();
        let mut changed = false;
        for j in 0..h {
            for i in 0..w {
                let k = j * w + i;
                if snapshot[k] {
                    continue;
                }
                let (mut s, mut c) = (0.0, 0);
                let nbrs = [(i.wrapping_sub(1), j), (i + 1, j), (i, j.wrapping_sub(1)), (i, j + 1)];
                for (a, b) in nbrs {
                    if a < w && b < h && snapshot[b * w + a] {
                        s += out[b * w + a];
                        c += 1;
                    }
                }
                if c > 0 {
                    out[k] = s / c as f64;
                    known[k] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    for k in 0..w * h {
        if !known[k] {
            out[k] = mean;
        }
    }
    out
}

/// Integral images of the per-bin gradient magnitude.
fn orientation_integrals(values: &[f64], w: usize, h: usize) -> Vec<Vec<f64>> {
    let mut hist = vec![vec![0.0; (w + 1) * (h + 1)]; BINS];
    let at = |i: isize, j: isize| {
        let i = i.clamp(0, w as isize - 1) as usize;
        let j = j.clamp(0, h as isize - 1) as usize;
        values[j * w + i]
    };
    for j in 0..h {
        for i in 0..w {
            let (ii, jj) = (i as isize, j as isize);
            let gx = 0.5 * (at(ii + 1, jj) - at(ii - 1, jj));
            let gy = 0.5 * (at(ii, jj + 1) - at(ii, jj - 1));
            let mag = gx.hypot(gy);
            let k = (j + 1) * (w + 1) + (i + 1);
            if mag > 0.0 {
                let a = gy.atan2(gx).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU * BINS as f64;
                let b0 = a.floor() as usize % BINS;
                let f = a - a.floor();
                hist[b0][k] += mag * (1.0 - f);
                hist[(b0 + 1) % BINS][k] += mag * f;
            }
        }
    }
    for plane in &mut hist {
        for j in 1..=h {
            for i in 1..=w {
                let k = j * (w + 1) + i;
                plane[k] += plane[k - 1] + plane[k - (w + 1)] - plane[k - (w + 1) - 1];
            }
        }
    }
    hist
}

fn describe(values: &[f64], w: usize, h: usize, block: usize) -> Vec<f32> {
    let integrals = orientation_integrals(values, w, h);
    let sum = |plane: &[f64], i0: isize, j0: isize, i1: isize, j1: isize| {
        let c = |v: isize, n: usize| v.clamp(0, n as isize) as usize;
        let (a0, b0, a1, b1) = (c(i0, w), c(j0, h), c(i1, w), c(j1, h));
        if a1 <= a0 || b1 <= b0 {
            return 0.0;
        }
        let s = |a: usize, b: usize| plane[b * (w + 1) + a];
        s(a1, b1) - s(a0, b1) - s(a1, b0) + s(a0, b0)
    };
    let half = (BLOCKS * block / 2) as isize;
    let mut out = vec![0.0f32; w * h * DESCRIPTOR_LEN];
    let mut d = [0.0f64; DESCRIPTOR_LEN];
    for j in 0..h {
        for i in 0..w {
            for by in 0..BLOCKS {
                for bx in 0..BLOCKS {
                    let i0 = i as isize - half + (bx * block) as isize;
                    let j0 = j as isize - half + (by * block) as isize;
                    for (b, plane) in integrals.iter().enumerate() {
                        d[(by * BLOCKS + bx) * BINS + b] =
                            sum(plane, i0, j0, i0 + block as isize, j0 + block as isize);
                    }
                }
            }
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let base = (j * w + i) * DESCRIPTOR_LEN;
            if norm > 1e-12 {
                for (o, v) in out[base..base + DESCRIPTOR_LEN].iter_mut().zip(&d) {
                    *o = (v / norm) as f32;
                }
            }
        }
    }
    out
}

impl DescriptorImage {
    pub fn new(grid: &MultimodalGrid, block: usize) -> Self {
        let (w, h) = (grid.width, grid.height);
        let block = block.max(1);
        DescriptorImage {
            width: w,
            height: h,
            index0: grid.index0,
            block,
            exg: describe(&inpaint(grid, &grid.exg), w, h, block),
            height_desc: describe(&inpaint(grid, &grid.h), w, h, block),
        }
    }

    pub fn exg_at(&self, k: usize) -> &[f32] {
        &self.exg[k * DESCRIPTOR_LEN..(k + 1) * DESCRIPTOR_LEN]
    }

    pub fn height_at(&self, k: usize) -> &[f32] {
        &self.height_desc[k * DESCRIPTOR_LEN..(k + 1) * DESCRIPTOR_LEN]
    }
}

#[inline]
pub(crate) fn l2(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    (s as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> MultimodalGrid {
        let mut g = MultimodalGrid::empty(1.0, [0, 0], w, h);
        for j in 0..h {
            for i in 0..w {
                g.h[j * w + i] = f(i, j);
                g.exg[j * w + i] = f(i, j);
                g.count[j * w + i] = 1;
            }
        }
        g
    }

    #[test]
    fn descriptors_are_unit_and_shift_invariant() {
        let g = ramp(20, 20, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let d = DescriptorImage::new(&g, 2);
        let k = 10 * 20 + 10;
        let n: f32 = d.exg_at(k).iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-5);
        // Height offset does not change the height descriptor.
        let mut g2 = g.clone();
        g2.h.iter_mut().for_each(|v| *v += 3.0);
        let d2 = DescriptorImage::new(&g2, 2);
        assert!(l2(d.height_at(k), d2.height_at(k)) < 1e-6);
    }

    #[test]
    fn gradient_direction_selects_bin() {
        let g = ramp(12, 12, |i, _| i as f64);
        let d = DescriptorImage::new(&g, 2);
        let desc = d.exg_at(6 * 12 + 6);
        let east: f32 = (0..16).map(|b| desc[b * BINS]).sum();
        let total: f32 = desc.iter().sum();
        assert!(east / total > 0.9);
    }

    #[test]
    fn inpaint_fills_holes_from_neighbours() {
        let mut g = ramp(3, 1, |i, _| i as f64);
        g.count[1] = 0;
        g.h[1] = 100.0;
        let v = inpaint(&g, &g.h);
        assert_eq!(v, vec![0.0, 1.0, 2.0]);
    }
}
