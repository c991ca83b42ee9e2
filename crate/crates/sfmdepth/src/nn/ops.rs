//! Forward and backward kernels on channel-first `f32` feature maps.

/// A `c × h × w` feature map, channel-first.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), c * h * w);
        Self { c, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.data[i * self.hw()..(i + 1) * self.hw()]
    }
}

/// Row-major `c = alpha·op(a)·op(b) + beta·c` where `op(a)` is `m × k` and
/// `op(b)` is `k × n`. A transposed operand is stored in its untransposed
/// row-major shape.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the asserted extents.
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
            n as isize,
            1,
        );
    }
}

/// Unfolds 3×3 zero-padded neighbourhoods: row `ci·9 + ky·3 + kx`, column
/// `y·w + x`.
pub fn im2col3(x: &Tensor) -> Vec<f32> {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let mut col = vec![0.0f32; x.c * 9 * hw];
    for ci in 0..x.c {
        let src = x.channel(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let srow = &src[sy as usize * w..][..w];
                    let drow = &mut row[y * w..][..w];
                    // Valid x range for this horizontal offset.
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    for xx in x0..x1 {
                        drow[xx] = srow[xx + kx - 1];
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col3`].
pub fn col2im3(col: &[f32], c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let dst = &mut out.data[ci * hw..][..hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[sy as usize * w..][..w];
                    let srow = &row[y * w..][..w];
                    let (x0, x1) = match kx {
                        0 => (1, w),
                        1 => (0, w),
                        _ => (0, w - 1),
                    };
                    for xx in x0..x1 {
                        drow[xx + kx - 1] += srow[xx];
                    }
                }
            }
        }
    }
    out
}

pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for ci in 0..x.c {
        let src = x.channel(ci);
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * x.w + 2 * xx;
                let s = src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1];
                out.data[(ci * h + y) * w + xx] = 0.25 * s;
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h * 2, grad.w * 2);
    let mut out = Tensor::zeros(grad.c, h, w);
    for ci in 0..grad.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[(ci * h + y) * w + xx] = 0.25 * grad.data[(ci * grad.h + y / 2) * grad.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for ci in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.data[(ci * h + y) * w + xx] = x.data[(ci * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2_backward(grad: &Tensor) -> Tensor {
    let (h, w) = (grad.h / 2, grad.w / 2);
    let mut out = Tensor::zeros(grad.c, h, w);
    for ci in 0..grad.c {
        let src = grad.channel(ci);
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * grad.w + 2 * xx;
                out.data[(ci * h + y) * w + xx] = src[i] + src[i + 1] + src[i + grad.w] + src[i + grad.w + 1];
            }
        }
    }
    out
}

pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

pub fn split(x: &Tensor, c_first: usize) -> (Tensor, Tensor) {
    let n = c_first * x.hw();
    (
        Tensor::from_vec(c_first, x.h, x.w, x.data[..n].to_vec()),
        Tensor::from_vec(x.c - c_first, x.h, x.w, x.data[n..].to_vec()),
    )
}

pub fn add_assign(acc: &mut Tensor, other: &Tensor) {
    assert_eq!(acc.data.len(), other.data.len());
    for (a, b) in acc.data.iter_mut().zip(&other.data) {
        *a += b;
    }
}

/// ELU with α = 1, in place.
pub fn elu(x: &mut [f32]) {
    for v in x {
        if *v <= 0.0 {
            *v = v.exp_m1();
        }
    }
}

/// Multiplies `grad` by the ELU derivative expressed through the output.
pub fn elu_backward(out: &[f32], grad: &mut [f32]) {
    for (g, &y) in grad.iter_mut().zip(out) {
        if y <= 0.0 {
            *g *= y + 1.0;
        }
    }
}

pub const GN_EPS: f64 = 1e-5;

/// Per-group statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

/// Group normalization followed by the per-channel affine map, in place.
pub fn group_norm(x: &mut Tensor, groups: usize, gamma: &[f32], beta: &[f32]) -> NormCache {
    let hw = x.hw();
    let per = x.c / groups * hw;
    let mut xhat = vec![0.0f32; x.data.len()];
    let mut inv_std = Vec::with_capacity(groups);
    for g in 0..groups {
        let span = &x.data[g * per..(g + 1) * per];
        let mean = span.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        let var = span.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / per as f64;
        let inv = 1.0 / (var + GN_EPS).sqrt();
        inv_std.push(inv as f32);
        for (o, &v) in xhat[g * per..(g + 1) * per].iter_mut().zip(span) {
            *o = ((v as f64 - mean) * inv) as f32;
        }
    }
    for ci in 0..x.c {
        let (gm, bt) = (gamma[ci], beta[ci]);
        for (o, &n) in x.data[ci * hw..(ci + 1) * hw].iter_mut().zip(&xhat[ci * hw..(ci + 1) * hw]) {
            *o = gm * n + bt;
        }
    }
    NormCache { xhat, inv_std }
}

/// Returns the input gradient and accumulates into `d_gamma`, `d_beta`.
pub fn group_norm_backward(
    grad: &Tensor,
    cache: &NormCache,
    groups: usize,
    gamma: &[f32],
    d_gamma: &mut [f32],
    d_beta: &mut [f32],
) -> Tensor {
    let hw = grad.hw();
    let per = grad.c / groups * hw;
    let mut dxhat = vec![0.0f32; grad.data.len()];
    for ci in 0..grad.c {
        let gs = &grad.data[ci * hw..(ci + 1) * hw];
        let xs = &cache.xhat[ci * hw..(ci + 1) * hw];
        let mut dg = 0.0f64;
        let mut db = 0.0f64;
        for ((d, &g), &xh) in dxhat[ci * hw..(ci + 1) * hw].iter_mut().zip(gs).zip(xs) {
            dg += (g * xh) as f64;
            db += g as f64;
            *d = g * gamma[ci];
        }
        d_gamma[ci] += dg as f32;
        d_beta[ci] += db as f32;
    }
    let mut out = Tensor::zeros(grad.c, grad.h, grad.w);
    for g in 0..groups {
        let r = g * per..(g + 1) * per;
        let d = &dxhat[r.clone()];
        let xh = &cache.xhat[r.clone()];
        let m1 = d.iter().map(|&v| v as f64).sum::<f64>() / per as f64;
        let m2 = d.iter().zip(xh).map(|(&a, &b)| (a * b) as f64).sum::<f64>() / per as f64;
        let inv = cache.inv_std[g] as f64;
        for ((o, &dv), &x) in out.data[r].iter_mut().zip(d).zip(xh) {
            *o = (inv * (dv as f64 - m1 - x as f64 * m2)) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|i| ((i * 37 % 11) as f32) - 5.0).collect())
    }

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
    }

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|i| i as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|i| (i % 7) as f32 - 3.0).collect();
        let mut at = vec![0.0; m * k];
        let mut bt = vec![0.0; k * n];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut want = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                want[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        for (aa, a_t) in [(&a, false), (&at, true)] {
            for (bb, b_t) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, a_t, bb, b_t, &mut c, 0.0);
                assert_eq!(c, want);
            }
        }
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let x = ramp(2, 4, 5);
        let col = im2col3(&x);
        let y: Vec<f32> = (0..col.len()).map(|i| ((i * 13 % 7) as f32) - 3.0).collect();
        let back = col2im3(&y, 2, 4, 5);
        assert!((dot(&col, &y) - dot(&x.data, &back.data)).abs() < 1e-6);
        // Centre tap is the identity.
        assert_eq!(&col[4 * 20..5 * 20], &x.data[..20]);
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint() {
        let x = ramp(3, 4, 6);
        let g = ramp(3, 2, 3);
        assert!((dot(&avg_pool2(&x).data, &g.data) - dot(&x.data, &avg_pool2_backward(&g).data)).abs() < 1e-6);
        assert!((dot(&upsample2(&g).data, &x.data) - dot(&g.data, &upsample2_backward(&x).data)).abs() < 1e-6);
    }

    #[test]
    fn group_norm_backward_matches_finite_differences() {
        let x0 = Tensor::from_vec(4, 3, 3, (0..36).map(|i| ((i * 29 % 17) as f32) * 0.1 - 0.7).collect());
        let gamma = [1.0f32, 0.5, -0.3, 2.0];
        let beta = [0.1f32, 0.0, 0.2, -0.1];
        let probe: Vec<f32> = (0..36).map(|i| ((i * 7 % 5) as f32) - 2.0).collect();
        let objective = |x: &Tensor| {
            let mut y = x.clone();
            group_norm(&mut y, 2, &gamma, &beta);
            dot(&y.data, &probe)
        };
        let mut y = x0.clone();
        let cache = group_norm(&mut y, 2, &gamma, &beta);
        let (mut dg, mut db) = ([0.0; 4], [0.0; 4]);
        let grad = Tensor::from_vec(4, 3, 3, probe.clone());
        let dx = group_norm_backward(&grad, &cache, 2, &gamma, &mut dg, &mut db);
        for i in [0, 5, 17, 30] {
            let h = 1e-2f32;
            let mut p = x0.clone();
            p.data[i] += h;
            let mut m = x0.clone();
            m.data[i] -= h;
            let fd = (objective(&p) - objective(&m)) / (2.0 * h as f64);
            assert!((fd - dx.data[i] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "{fd} vs {}", dx.data[i]);
        }
    }
}
