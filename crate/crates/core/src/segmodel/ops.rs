//! Differentiable layers over channel-major `(C, N, H, W)` f64 tensors.
//!
//! Every channel of the whole batch is contiguous, which keeps batch-norm
//! reductions linear scans and makes channel concatenation a plain append.

use matrixmultiply::dgemm;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![0.0; c * n * h * w],
        }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    /// Elements per channel across the batch.
    pub fn channel_len(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn plane(&self, c: usize, n: usize) -> &[f64] {
        let hw = self.hw();
        let start = (c * self.n + n) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, c: usize, n: usize) -> &mut [f64] {
        let hw = self.hw();
        let start = (c * self.n + n) * hw;
        &mut self.data[start..start + hw]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }
}

/// Concatenates along channels; all parts share `(N, H, W)`.
pub fn concat(parts: &[&Tensor]) -> Tensor {
    let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
    let mut c = 0;
    for p in parts {
        debug_assert_eq!((p.n, p.h, p.w), (n, h, w));
        data.extend_from_slice(&p.data);
        c += p.c;
    }
    Tensor { c, n, h, w, data }
}

/// Inverse of [`concat`] for gradients.
pub fn split(t: &Tensor, channels: &[usize]) -> Vec<Tensor> {
    let len = t.channel_len();
    let mut off = 0;
    channels
        .iter()
        .map(|&c| {
            let part = Tensor {
                c,
                n: t.n,
                h: t.h,
                w: t.w,
                data: t.data[off * len..(off + c) * len].to_vec(),
            };
            off += c;
            part
        })
        .collect()
}

pub fn add_assign(dst: &mut Tensor, src: &Tensor) {
    debug_assert!(dst.same_shape(src));
    dst.data.iter_mut().zip(&src.data).for_each(|(d, s)| *d += s);
}

pub fn relu_inplace(t: &mut Tensor) {
    t.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(grad: &mut Tensor, output: &Tensor) {
    grad.data.iter_mut().zip(&output.data).for_each(|(g, &y)| {
        if y <= 0.0 {
            *g = 0.0
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_dim(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(x: &Tensor, n: usize, s: &ConvShape, ho: usize, wo: usize, cols: &mut [f64]) {
    let hwo = ho * wo;
    for ci in 0..s.cin {
        let plane = x.plane(ci, n);
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = &mut cols[((ci * s.k + ky) * s.k + kx) * hwo..][..hwo];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= x.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * x.w..(iy as usize + 1) * x.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        *d = if ix < 0 || ix >= x.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], s: &ConvShape, ho: usize, wo: usize, dx: &mut Tensor, n: usize) {
    let hwo = ho * wo;
    let (h, w) = (dx.h, dx.w);
    for ci in 0..s.cin {
        let plane = dx.plane_mut(ci, n);
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = &cols[((ci * s.k + ky) * s.k + kx) * hwo..][..hwo];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `C[m x n] = alpha * A[m x k] B[k x n] + beta * C` with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    // Bounds of the strided views must lie inside the slices.
    debug_assert!((m - 1) * rsa + (k.max(1) - 1) * csa < a.len().max(1) || k == 0);
    debug_assert!((k.max(1) - 1) * rsb + (n - 1) * csb < b.len().max(1) || k == 0);
    debug_assert!((m - 1) * rsc + (n - 1) < c.len());
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Convolution forward; `weight` is `[cout, cin * k * k]`.
pub fn conv_forward(x: &Tensor, s: &ConvShape, weight: &[f64], bias: Option<&[f64]>) -> Tensor {
    debug_assert_eq!(x.c, s.cin);
    let (ho, wo) = (s.out_dim(x.h), s.out_dim(x.w));
    let hwo = ho * wo;
    let kk = s.cin * s.k * s.k;
    let mut out = Tensor::zeros(s.cout, x.n, ho, wo);
    let row_stride = x.n * hwo;
    let mut cols = if s.is_pointwise() { Vec::new() } else { vec![0.0; kk * hwo] };
    for n in 0..x.n {
        let c_slice = &mut out.data[n * hwo..];
        if s.is_pointwise() {
            let b = &x.data[n * x.hw()..];
            gemm(s.cout, kk, hwo, weight, kk, 1, b, x.n * x.hw(), 1, 0.0, c_slice, row_stride);
        } else {
            im2col(x, n, s, ho, wo, &mut cols);
            gemm(s.cout, kk, hwo, weight, kk, 1, &cols, hwo, 1, 0.0, c_slice, row_stride);
        }
    }
    if let Some(b) = bias {
        for (co, &bv) in b.iter().enumerate() {
            out.data[co * row_stride..(co + 1) * row_stride].iter_mut().for_each(|v| *v += bv);
        }
    }
    out
}

/// Accumulates weight/bias gradients and returns the input gradient when `need_dx`.
pub fn conv_backward(
    x: &Tensor,
    dy: &Tensor,
    s: &ConvShape,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: Option<&mut [f64]>,
    need_dx: bool,
) -> Option<Tensor> {
    let (ho, wo) = (dy.h, dy.w);
    let hwo = ho * wo;
    let kk = s.cin * s.k * s.k;
    let row_stride = x.n * hwo;
    let mut dx = need_dx.then(|| Tensor::zeros(x.c, x.n, x.h, x.w));
    let mut cols = if s.is_pointwise() { Vec::new() } else { vec![0.0; kk * hwo] };
    let mut dcols = if s.is_pointwise() || !need_dx { Vec::new() } else { vec![0.0; kk * hwo] };
    for n in 0..x.n {
        let dy_n = &dy.data[n * hwo..];
        if s.is_pointwise() {
            let xb = &x.data[n * x.hw()..];
            // dW += dY_n X_n^T
            gemm(s.cout, hwo, kk, dy_n, row_stride, 1, xb, 1, x.n * x.hw(), 1.0, dweight, kk);
            if let Some(dx) = dx.as_mut() {
                let hw = dx.hw();
                let stride = dx.n * hw;
                gemm(kk, s.cout, hwo, weight, 1, kk, dy_n, row_stride, 1, 0.0, &mut dx.data[n * hw..], stride);
            }
        } else {
            im2col(x, n, s, ho, wo, &mut cols);
            gemm(s.cout, hwo, kk, dy_n, row_stride, 1, &cols, 1, hwo, 1.0, dweight, kk);
            if let Some(dx) = dx.as_mut() {
                gemm(kk, s.cout, hwo, weight, 1, kk, dy_n, row_stride, 1, 0.0, &mut dcols, hwo);
                col2im(&dcols, s, ho, wo, dx, n);
            }
        }
    }
    if let Some(db) = dbias {
        for (co, g) in db.iter_mut().enumerate() {
            *g += dy.data[co * row_stride..(co + 1) * row_stride].iter().sum::<f64>();
        }
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;

/// Saved state of a training-mode batch-norm.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub batch_mean: Vec<f64>,
    /// Unbiased batch variance, for the running estimate.
    pub batch_var: Vec<f64>,
}

pub fn bn_forward_train(x: &Tensor, gamma: &[f64], beta: &[f64]) -> (Tensor, BnCache) {
    let len = x.channel_len();
    let mut out = Tensor::zeros(x.c, x.n, x.h, x.w);
    let mut xhat = vec![0.0; x.data.len()];
    let mut inv_std = vec![0.0; x.c];
    let mut batch_mean = vec![0.0; x.c];
    let mut batch_var = vec![0.0; x.c];
    for c in 0..x.c {
        let src = &x.data[c * len..(c + 1) * len];
        let mean = src.iter().sum::<f64>() / len as f64;
        let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
        let is = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = is;
        batch_mean[c] = mean;
        batch_var[c] = if len > 1 { var * len as f64 / (len - 1) as f64 } else { var };
        let xh = &mut xhat[c * len..(c + 1) * len];
        let dst = &mut out.data[c * len..(c + 1) * len];
        for ((d, h), &v) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
            *h = (v - mean) * is;
            *d = gamma[c] * *h + beta[c];
        }
    }
    (
        out,
        BnCache {
            xhat,
            inv_std,
            batch_mean,
            batch_var,
        },
    )
}

pub fn bn_forward_eval(x: &Tensor, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Tensor {
    let len = x.channel_len();
    let mut out = x.clone();
    for c in 0..x.c {
        let scale = gamma[c] / (var[c] + BN_EPS).sqrt();
        let shift = beta[c] - mean[c] * scale;
        out.data[c * len..(c + 1) * len].iter_mut().for_each(|v| *v = *v * scale + shift);
    }
    out
}

pub fn bn_backward(dy: &Tensor, cache: &BnCache, gamma: &[f64], dgamma: &mut [f64], dbeta: &mut [f64]) -> Tensor {
    let len = dy.channel_len();
    let m = len as f64;
    let mut dx = Tensor::zeros(dy.c, dy.n, dy.h, dy.w);
    for c in 0..dy.c {
        let g = &dy.data[c * len..(c + 1) * len];
        let xh = &cache.xhat[c * len..(c + 1) * len];
        let sum_g: f64 = g.iter().sum();
        let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
        dgamma[c] += sum_gx;
        dbeta[c] += sum_g;
        let k = gamma[c] * cache.inv_std[c] / m;
        for ((d, &gi), &xi) in dx.data[c * len..(c + 1) * len].iter_mut().zip(g).zip(xh) {
            *d = k * (m * gi - sum_g - xi * sum_gx);
        }
    }
    dx
}

/// 3x3 stride-2 max pooling with padding 1; returns the argmax input offsets.
pub fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<u32>) {
    let (ho, wo) = ((x.h - 1) / 2 + 1, (x.w - 1) / 2 + 1);
    let mut out = Tensor::zeros(x.c, x.n, ho, wo);
    let mut arg = vec![0u32; out.data.len()];
    let mut idx = 0;
    for c in 0..x.c {
        for n in 0..x.n {
            let plane = x.plane(c, n);
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let i = iy as usize * x.w + ix as usize;
                            if plane[i] > best {
                                best = plane[i];
                                best_i = i;
                            }
                        }
                    }
                    out.data[idx] = best;
                    arg[idx] = best_i as u32;
                    idx += 1;
                }
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward(dy: &Tensor, arg: &[u32], in_h: usize, in_w: usize) -> Tensor {
    let mut dx = Tensor::zeros(dy.c, dy.n, in_h, in_w);
    let hwo = dy.hw();
    for c in 0..dy.c {
        for n in 0..dy.n {
            let base = (c * dy.n + n) * hwo;
            let plane = dx.plane_mut(c, n);
            for i in 0..hwo {
                plane[arg[base + i] as usize] += dy.data[base + i];
            }
        }
    }
    dx
}

/// Bin `[start, end)` of adaptive pooling output `i` over `len` inputs.
fn adaptive_bin(i: usize, out: usize, len: usize) -> (usize, usize) {
    let start = i * len / out;
    let end = ((i + 1) * len).div_ceil(out);
    (start, end.max(start + 1))
}

pub fn adaptive_avg_pool(x: &Tensor, bins: usize) -> Tensor {
    let mut out = Tensor::zeros(x.c, x.n, bins, bins);
    for c in 0..x.c {
        for n in 0..x.n {
            let plane = x.plane(c, n).to_vec();
            let dst = out.plane_mut(c, n);
            for i in 0..bins {
                let (r0, r1) = adaptive_bin(i, bins, x.h);
                for j in 0..bins {
                    let (c0, c1) = adaptive_bin(j, bins, x.w);
                    let mut sum = 0.0;
                    for r in r0..r1 {
                        sum += plane[r * x.w + c0..r * x.w + c1].iter().sum::<f64>();
                    }
                    dst[i * bins + j] = sum / ((r1 - r0) * (c1 - c0)) as f64;
                }
            }
        }
    }
    out
}

pub fn adaptive_avg_pool_backward(dy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let bins = dy.h;
    let mut dx = Tensor::zeros(dy.c, dy.n, in_h, in_w);
    for c in 0..dy.c {
        for n in 0..dy.n {
            let g = dy.plane(c, n).to_vec();
            let dst = dx.plane_mut(c, n);
            for i in 0..bins {
                let (r0, r1) = adaptive_bin(i, bins, in_h);
                for j in 0..bins {
                    let (c0, c1) = adaptive_bin(j, bins, in_w);
                    let share = g[i * bins + j] / ((r1 - r0) * (c1 - c0)) as f64;
                    for r in r0..r1 {
                        dst[r * in_w + c0..r * in_w + c1].iter_mut().for_each(|v| *v += share);
                    }
                }
            }
        }
    }
    dx
}

/// Per-axis bilinear taps `(i0, i1, w1)` with half-pixel centres (no corner alignment).
fn bilinear_taps(out: usize, inp: usize) -> Vec<(usize, usize, f64)> {
    let scale = inp as f64 / out as f64;
    (0..out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(inp - 1);
            let i1 = (i0 + 1).min(inp - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn resize_bilinear(x: &Tensor, h: usize, w: usize) -> Tensor {
    if (x.h, x.w) == (h, w) {
        return x.clone();
    }
    let ty = bilinear_taps(h, x.h);
    let tx = bilinear_taps(w, x.w);
    let mut out = Tensor::zeros(x.c, x.n, h, w);
    for c in 0..x.c {
        for n in 0..x.n {
            let src = x.plane(c, n).to_vec();
            let dst = out.plane_mut(c, n);
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let top = src[y0 * x.w + x0] * (1.0 - wx) + src[y0 * x.w + x1] * wx;
                    let bot = src[y1 * x.w + x0] * (1.0 - wx) + src[y1 * x.w + x1] * wx;
                    dst[oy * w + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
    }
    out
}

pub fn resize_bilinear_backward(dy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    if (dy.h, dy.w) == (in_h, in_w) {
        return dy.clone();
    }
    let ty = bilinear_taps(dy.h, in_h);
    let tx = bilinear_taps(dy.w, in_w);
    let mut dx = Tensor::zeros(dy.c, dy.n, in_h, in_w);
    for c in 0..dy.c {
        for n in 0..dy.n {
            let g = dy.plane(c, n).to_vec();
            let dst = dx.plane_mut(c, n);
            for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                    let v = g[oy * dy.w + ox];
                    dst[y0 * in_w + x0] += v * (1.0 - wy) * (1.0 - wx);
                    dst[y0 * in_w + x1] += v * (1.0 - wy) * wx;
                    dst[y1 * in_w + x0] += v * wy * (1.0 - wx);
                    dst[y1 * in_w + x1] += v * wy * wx;
                }
            }
        }
    }
    dx
}
