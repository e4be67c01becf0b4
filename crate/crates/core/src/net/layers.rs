//! Planar (CHW) convolution kernels built on im2col + sgemm.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `c[m x n] (+)= a[m x k] * b[k x n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (isize, isize),
    b: &[f32],
    (rsb, csb): (isize, isize),
    c: &mut [f32],
    rsc: usize,
    accumulate: bool,
) {
    assert!(rsc >= n && (m == 0 || c.len() >= (m - 1) * rsc + n));
    if m == 0 || n == 0 {
        return;
    }
    let extent = |r: usize, cc: usize, rs: isize, cs: isize| {
        if r == 0 || cc == 0 {
            0
        } else {
            (r as isize - 1) * rs + (cc as isize - 1) * cs + 1
        }
    };
    assert!(a.len() as isize >= extent(m, k, rsa, csa));
    assert!(b.len() as isize >= extent(k, n, rsb, csb));
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the extents of all three operands were checked against their slices above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Floats per im2col tile.
const COL_TILE_FLOATS: usize = 1 << 16;

/// A 2-D convolution with square kernel (1 or 3), "same" padding and stride 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `[out][in][ky][kx]`
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrad {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl ConvGrad {
    pub fn zeros_like(conv: &Conv2d) -> Self {
        Self {
            weight: vec![0.0; conv.weight.len()],
            bias: vec![0.0; conv.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &ConvGrad) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }
}

impl Conv2d {
    /// He (fan-in) normal initialization, zero bias.
    pub fn he_init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f32;
        let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).expect("finite std");
        let weight = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| normal.sample(rng))
            .collect();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            weight,
            bias: vec![0.0; out_channels],
        }
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let p = self.pad();
        (
            (h + 2 * p - self.kernel) / self.stride + 1,
            (w + 2 * p - self.kernel) / self.stride + 1,
        )
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Output rows per tile, sized so one column tile stays cache-resident.
    fn tile_rows(&self, wo: usize) -> usize {
        (COL_TILE_FLOATS / (self.patch() * wo).max(1)).max(1)
    }

    /// Columns for output rows `oy0..oy1`: `[patch][(oy - oy0) * wo + ox]`.
    fn im2col_rows(
        &self,
        x: &[f32],
        h: usize,
        w: usize,
        oy0: usize,
        oy1: usize,
        col: &mut Vec<f32>,
    ) {
        let (_, wo) = self.out_dims(h, w);
        let k = self.kernel;
        let pad = self.pad() as isize;
        let s = self.stride;
        let p = (oy1 - oy0) * wo;
        col.clear();
        col.resize(self.patch() * p, 0.0);
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut col[row * p..(row + 1) * p];
                    let dx = kx as isize - pad;
                    for oy in oy0..oy1 {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out = &mut dst[(oy - oy0) * wo..(oy - oy0 + 1) * wo];
                        if s == 1 {
                            // Valid ox range: 0 <= ox + dx < w.
                            let lo = (-dx).max(0) as usize;
                            let hi = ((w as isize - dx).min(wo as isize)).max(0) as usize;
                            if lo < hi {
                                let a = (lo as isize + dx) as usize;
                                out[lo..hi].copy_from_slice(&src[a..a + (hi - lo)]);
                            }
                        } else {
                            for (ox, o) in out.iter_mut().enumerate() {
                                let ix = (ox * s) as isize + dx;
                                if ix >= 0 && ix < w as isize {
                                    *o = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds column gradients for output rows `oy0..oy1` into `dx`.
    #[allow(clippy::too_many_arguments)]
    fn col2im_rows_add(
        &self,
        col: &[f32],
        h: usize,
        w: usize,
        oy0: usize,
        oy1: usize,
        dx_out: &mut [f32],
    ) {
        let (_, wo) = self.out_dims(h, w);
        let k = self.kernel;
        let pad = self.pad() as isize;
        let s = self.stride;
        let p = (oy1 - oy0) * wo;
        for c in 0..self.in_channels {
            let plane = &mut dx_out[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &col[row * p..(row + 1) * p];
                    let dx = kx as isize - pad;
                    for oy in oy0..oy1 {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let g = &src[(oy - oy0) * wo..(oy - oy0 + 1) * wo];
                        if s == 1 {
                            let lo = (-dx).max(0) as usize;
                            let hi = ((w as isize - dx).min(wo as isize)).max(0) as usize;
                            if lo < hi {
                                let a = (lo as isize + dx) as usize;
                                for (d, v) in dst[a..a + (hi - lo)].iter_mut().zip(&g[lo..hi]) {
                                    *d += v;
                                }
                            }
                        } else {
                            for (ox, &v) in g.iter().enumerate() {
                                let ix = (ox * s) as isize + dx;
                                if ix >= 0 && ix < w as isize {
                                    dst[ix as usize] += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    /// Returns the output planes and their dims.
    pub fn forward(&self, x: &[f32], h: usize, w: usize) -> (Vec<f32>, usize, usize) {
        debug_assert_eq!(x.len(), self.in_channels * h * w);
        let (ho, wo) = self.out_dims(h, w);
        let p = ho * wo;
        let mut y = vec![0.0f32; self.out_channels * p];
        for (o, b) in self.bias.iter().enumerate() {
            y[o * p..(o + 1) * p].fill(*b);
        }
        let kk = self.patch();
        let (m, ws) = (self.out_channels, (kk as isize, 1));
        if self.is_pointwise() {
            gemm(
                m,
                kk,
                p,
                &self.weight,
                ws,
                x,
                (p as isize, 1),
                &mut y,
                p,
                true,
            );
            return (y, ho, wo);
        }
        let rows = self.tile_rows(wo);
        let mut col = Vec::new();
        for oy0 in (0..ho).step_by(rows) {
            let oy1 = (oy0 + rows).min(ho);
            let n = (oy1 - oy0) * wo;
            self.im2col_rows(x, h, w, oy0, oy1, &mut col);
            gemm(
                m,
                kk,
                n,
                &self.weight,
                ws,
                &col,
                (n as isize, 1),
                &mut y[oy0 * wo..],
                p,
                true,
            );
        }
        (y, ho, wo)
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx` when asked.
    pub fn backward(
        &self,
        x: &[f32],
        h: usize,
        w: usize,
        dy: &[f32],
        grad: &mut ConvGrad,
        need_input_grad: bool,
    ) -> Option<Vec<f32>> {
        let (ho, wo) = self.out_dims(h, w);
        let p = ho * wo;
        let kk = self.patch();
        let m = self.out_channels;
        debug_assert_eq!(dy.len(), m * p);
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            *gb += dy[o * p..(o + 1) * p].iter().sum::<f32>();
        }
        if self.is_pointwise() {
            // dW[o x kk] += dY[o x p] * x^T[p x kk]
            gemm(
                m,
                p,
                kk,
                dy,
                (p as isize, 1),
                x,
                (1, p as isize),
                &mut grad.weight,
                kk,
                true,
            );
            if !need_input_grad {
                return None;
            }
            let mut dx = vec![0.0f32; kk * p];
            gemm(
                kk,
                m,
                p,
                &self.weight,
                (1, kk as isize),
                dy,
                (p as isize, 1),
                &mut dx,
                p,
                false,
            );
            return Some(dx);
        }
        let rows = self.tile_rows(wo);
        let mut col = Vec::new();
        let mut dcol = Vec::new();
        let mut dx = if need_input_grad {
            vec![0.0f32; self.in_channels * h * w]
        } else {
            Vec::new()
        };
        for oy0 in (0..ho).step_by(rows) {
            let oy1 = (oy0 + rows).min(ho);
            let n = (oy1 - oy0) * wo;
            let dy_tile = &dy[oy0 * wo..];
            self.im2col_rows(x, h, w, oy0, oy1, &mut col);
            gemm(
                m,
                n,
                kk,
                dy_tile,
                (p as isize, 1),
                &col,
                (1, n as isize),
                &mut grad.weight,
                kk,
                true,
            );
            if need_input_grad {
                // dcol[kk x n] = W^T[kk x o] * dY[o x n]
                dcol.clear();
                dcol.resize(kk * n, 0.0);
                gemm(
                    kk,
                    m,
                    n,
                    &self.weight,
                    (1, kk as isize),
                    dy_tile,
                    (p as isize, 1),
                    &mut dcol,
                    n,
                    false,
                );
                self.col2im_rows_add(&dcol, h, w, oy0, oy1, &mut dx);
            }
        }
        need_input_grad.then_some(dx)
    }
}

pub fn relu_inplace(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the (post-activation) output was clipped.
pub fn relu_backward_inplace(dy: &mut [f32], y: &[f32]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Nearest-neighbour x2 upsampling of `channels` planes.
pub fn upsample2(x: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0f32; channels * h2 * w2];
    for c in 0..channels {
        let src = &x[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * h2 * w2..(c + 1) * h2 * w2];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let (r0, r1) = dst[2 * y * w2..(2 * y + 2) * w2].split_at_mut(w2);
            for (x, &v) in row.iter().enumerate() {
                r0[2 * x] = v;
                r0[2 * x + 1] = v;
            }
            r1.copy_from_slice(r0);
        }
    }
    out
}

pub fn upsample2_backward(dy: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let w2 = 2 * w;
    let mut dx = vec![0.0f32; channels * h * w];
    for c in 0..channels {
        let src = &dy[c * 4 * h * w..(c + 1) * 4 * h * w];
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let a = 2 * y * w2 + 2 * x;
                dst[y * w + x] = src[a] + src[a + 1] + src[a + w2] + src[a + w2 + 1];
            }
        }
    }
    dx
}
