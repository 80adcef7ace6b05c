//! Fast inverse of `σ + c·(−Δ_h)` with Dirichlet conditions on the grid's
//! bounding box, via a separable type-I sine transform.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::geometry::{DomainGrid, GridLayout};

/// One-dimensional DST-I of length `n`, evaluated through a complex FFT of
/// length `2(n + 1)` with two real sequences packed per transform.
struct Dst1 {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl Dst1 {
    fn new(n: usize, planner: &mut FftPlanner<f64>) -> Self {
        let fft = planner.plan_fft_forward(2 * (n + 1));
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Dst1 {
            n,
            fft,
            buf: Vec::new(),
            scratch,
        }
    }

    /// Transforms `rows` contiguous sequences of length `n` in place:
    /// `X_k = Σ_j x_j sin(π j k/(n+1))`, with `j, k` running from 1.
    fn rows(&mut self, data: &mut [f64], rows: usize) {
        let n = self.n;
        let len = 2 * (n + 1);
        let pairs = rows.div_ceil(2);
        self.buf.clear();
        self.buf.resize(pairs * len, Complex::default());
        for p in 0..pairs {
            let a = &data[2 * p * n..(2 * p + 1) * n];
            let b = if 2 * p + 1 < rows {
                Some(&data[(2 * p + 1) * n..(2 * p + 2) * n])
            } else {
                None
            };
            let y = &mut self.buf[p * len..(p + 1) * len];
            for j in 0..n {
                let v = Complex::new(a[j], b.map_or(0.0, |b| b[j]));
                y[j + 1] = v;
                y[len - 1 - j] = -v;
            }
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        for p in 0..pairs {
            let y = &self.buf[p * len..(p + 1) * len];
            for k in 0..n {
                data[2 * p * n + k] = -0.5 * y[k + 1].im;
            }
            if 2 * p + 1 < rows {
                for k in 0..n {
                    data[(2 * p + 1) * n + k] = 0.5 * y[k + 1].re;
                }
            }
        }
    }
}

/// Shifted-Laplacian solver on the box interior of a grid layout.
pub struct BoxSolver {
    layout: GridLayout,
    mx: usize,
    my: usize,
    dst_x: Dst1,
    dst_y: Dst1,
    eig_x: Vec<f64>,
    eig_y: Vec<f64>,
    work: Vec<f64>,
    tmp: Vec<f64>,
}

impl BoxSolver {
    pub fn new(layout: &GridLayout) -> Self {
        let mx = layout.nx - 2;
        let my = layout.ny - 2;
        let mut planner = FftPlanner::new();
        let dst_x = Dst1::new(mx, &mut planner);
        let dst_y = Dst1::new(my, &mut planner);
        let eig = |m: usize, h: f64| -> Vec<f64> {
            (1..=m)
                .map(|k| {
                    let s = (std::f64::consts::PI * k as f64 / (2.0 * (m + 1) as f64)).sin();
                    4.0 * s * s / (h * h)
                })
                .collect()
        };
        BoxSolver {
            layout: *layout,
            mx,
            my,
            eig_x: eig(mx, layout.hx),
            eig_y: eig(my, layout.hy),
            dst_x,
            dst_y,
            work: vec![0.0; mx * my],
            tmp: vec![0.0; mx * my],
        }
    }

    /// Smallest eigenvalue of `−Δ_h` on the box.
    pub fn lowest_eigenvalue(&self) -> f64 {
        self.eig_x[0] + self.eig_y[0]
    }

    fn transpose(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
        const B: usize = 32;
        for r0 in (0..rows).step_by(B) {
            for c0 in (0..cols).step_by(B) {
                for r in r0..(r0 + B).min(rows) {
                    for c in c0..(c0 + B).min(cols) {
                        dst[c * rows + r] = src[r * cols + c];
                    }
                }
            }
        }
    }

    /// `out = M (σ + c(−Δ_h))^{-1} M r`, with `M` the interior mask.
    pub fn apply(&mut self, grid: &DomainGrid, r: &[f64], sigma: f64, c: f64, out: &mut [f64]) {
        let (mx, my, nx) = (self.mx, self.my, self.layout.nx);
        for j in 0..my {
            for i in 0..mx {
                let k = (j + 1) * nx + i + 1;
                self.work[j * mx + i] = if grid.interior_mask[k] { r[k] } else { 0.0 };
            }
        }
        self.dst_x.rows(&mut self.work, my);
        Self::transpose(&self.work, &mut self.tmp, my, mx);
        self.dst_y.rows(&mut self.tmp, mx);
        let norm = 4.0 / ((mx + 1) as f64 * (my + 1) as f64);
        for i in 0..mx {
            for j in 0..my {
                self.tmp[i * my + j] *= norm / (sigma + c * (self.eig_x[i] + self.eig_y[j]));
            }
        }
        self.dst_y.rows(&mut self.tmp, mx);
        Self::transpose(&self.tmp, &mut self.work, mx, my);
        self.dst_x.rows(&mut self.work, my);
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..my {
            for i in 0..mx {
                let k = (j + 1) * nx + i + 1;
                if grid.interior_mask[k] {
                    out[k] = self.work[j * mx + i];
                }
            }
        }
    }
}
