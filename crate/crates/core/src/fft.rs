//! FFT plumbing: zero-padded linear convolution on the grid and the
//! type-I cosine transform that diagonalises the Neumann Laplacian.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid2D;

/// Smallest 5-smooth integer `>= n`.
fn smooth_size(n: usize) -> usize {
    (n..)
        .find(|&m| {
            let mut r = m;
            for p in [2, 3, 5] {
                while r % p == 0 {
                    r /= p;
                }
            }
            r == 1
        })
        .expect("unbounded search")
}

struct Fft2 {
    px: usize,
    py: usize,
    fwd_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    fn new(px: usize, py: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            px,
            py,
            fwd_x: planner.plan_fft_forward(px),
            fwd_y: planner.plan_fft_forward(py),
            inv_x: planner.plan_fft_inverse(px),
            inv_y: planner.plan_fft_inverse(py),
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let (fx, fy) = if inverse { (&self.inv_x, &self.inv_y) } else { (&self.fwd_x, &self.fwd_y) };
        // rows are contiguous: one batched call
        fx.process(data);
        let mut column = vec![Complex64::default(); self.py];
        for i in 0..self.px {
            for j in 0..self.py {
                column[j] = data[j * self.px + i];
            }
            fy.process(&mut column);
            for j in 0..self.py {
                data[j * self.px + i] = column[j];
            }
        }
    }
}

/// Linear (non-periodic) convolution with a fixed complex kernel:
/// `out(x) = Σ_y K(x - y) g(y)`, with `g = 0` outside the grid.
///
/// A complex kernel `Kx + i Ky` convolved with a real field yields both
/// components of a vector-valued kernel at once; a real kernel applied to
/// `a + i b` convolves two real fields at once.
pub struct Convolution {
    grid: Grid2D,
    fft: Fft2,
    spectrum: Vec<Complex64>,
}

impl Convolution {
    /// `kernel(zx, zy)` is evaluated at every offset `x - y` between nodes.
    pub fn new(grid: Grid2D, kernel: impl Fn(f64, f64) -> Complex64) -> Self {
        let px = smooth_size(2 * grid.nx - 1);
        let py = smooth_size(2 * grid.ny - 1);
        let fft = Fft2::new(px, py);
        let mut spectrum = vec![Complex64::default(); px * py];
        let (nx, ny) = (grid.nx as isize, grid.ny as isize);
        for dj in -(ny - 1)..ny {
            for di in -(nx - 1)..nx {
                let pi = di.rem_euclid(px as isize) as usize;
                let pj = dj.rem_euclid(py as isize) as usize;
                spectrum[pj * px + pi] = kernel(di as f64 * grid.dx, dj as f64 * grid.dy);
            }
        }
        fft.transform(&mut spectrum, false);
        let norm = 1.0 / (px * py) as f64;
        spectrum.iter_mut().for_each(|c| *c *= norm);
        Self { grid, fft, spectrum }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn apply(&self, field: &[Complex64]) -> Vec<Complex64> {
        let g = &self.grid;
        assert_eq!(field.len(), g.len());
        let px = self.fft.px;
        let mut buf = vec![Complex64::default(); px * self.fft.py];
        for j in 0..g.ny {
            buf[j * px..j * px + g.nx].copy_from_slice(&field[j * g.nx..(j + 1) * g.nx]);
        }
        self.fft.transform(&mut buf, false);
        buf.iter_mut().zip(&self.spectrum).for_each(|(b, s)| *b *= s);
        self.fft.transform(&mut buf, true);
        let mut out = Vec::with_capacity(g.len());
        for j in 0..g.ny {
            out.extend_from_slice(&buf[j * px..j * px + g.nx]);
        }
        out
    }
}

/// Separable type-I cosine transform on the node grid (unnormalised).
/// Applying it twice multiplies by `4 (nx - 1)(ny - 1)`.
pub struct Dct1 {
    nx: usize,
    ny: usize,
    fft_x: Arc<dyn Fft<f64>>,
    fft_y: Arc<dyn Fft<f64>>,
}

impl Dct1 {
    pub fn new(nx: usize, ny: usize) -> Self {
        assert!(nx >= 2 && ny >= 2);
        let mut planner = FftPlanner::new();
        Self { nx, ny, fft_x: planner.plan_fft_forward(2 * (nx - 1)), fft_y: planner.plan_fft_forward(2 * (ny - 1)) }
    }

    pub fn normalisation(&self) -> f64 {
        4.0 * ((self.nx - 1) * (self.ny - 1)) as f64
    }

    fn line(fft: &dyn Fft<f64>, buf: &mut [Complex64], values: &mut [f64]) {
        let n = values.len();
        let m = 2 * (n - 1);
        for k in 0..n {
            buf[k] = Complex64::new(values[k], 0.0);
        }
        for k in 1..n - 1 {
            buf[m - k] = Complex64::new(values[k], 0.0);
        }
        fft.process(buf);
        for k in 0..n {
            values[k] = buf[k].re;
        }
    }

    pub fn transform(&self, data: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        assert_eq!(data.len(), nx * ny);
        let mut bx = vec![Complex64::default(); 2 * (nx - 1)];
        for row in data.chunks_mut(nx) {
            Self::line(&*self.fft_x, &mut bx, row);
        }
        let mut by = vec![Complex64::default(); 2 * (ny - 1)];
        let mut col = vec![0.0; ny];
        for i in 0..nx {
            for j in 0..ny {
                col[j] = data[j * nx + i];
            }
            Self::line(&*self.fft_y, &mut by, &mut col);
            for j in 0..ny {
                data[j * nx + i] = col[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_sizes() {
        assert_eq!(smooth_size(101), 108);
        assert_eq!(smooth_size(21), 24);
        assert_eq!(smooth_size(1), 1);
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let g = Grid2D::new(1.0, 7, 5).unwrap();
        let kernel = |zx: f64, zy: f64| Complex64::new((-zx * zx - 2.0 * zy).exp(), zx * zy);
        let conv = Convolution::new(g, kernel);
        let field: Vec<Complex64> = (0..g.len()).map(|k| Complex64::new((k as f64 * 0.37).sin(), 0.0)).collect();
        let out = conv.apply(&field);
        for (i, j, x, y) in g.node_positions() {
            let mut expect = Complex64::default();
            for (i2, j2, x2, y2) in g.node_positions() {
                expect += kernel(x - x2, y - y2) * field[g.idx(i2, j2)];
            }
            assert!((out[g.idx(i, j)] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn dct_is_an_involution_up_to_scale() {
        let dct = Dct1::new(6, 4);
        let orig: Vec<f64> = (0..24).map(|k| (k as f64).cos() + 0.1 * k as f64).collect();
        let mut data = orig.clone();
        dct.transform(&mut data);
        dct.transform(&mut data);
        let s = dct.normalisation();
        for (a, b) in data.iter().zip(&orig) {
            assert!((a / s - b).abs() < 1e-12);
        }
    }
}
