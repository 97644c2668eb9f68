//! Channel-first tensors and the layer kernels of the toy network, each with
//! its exact backward pass.

/// C×H×W activation, channel-first so each channel is a contiguous plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor { c, h, w, data: vec![0.0; c * h * w] }
    }

    #[inline]
    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let n = self.hw();
        &self.data[ch * n..(ch + 1) * n]
    }
}

/// `C = A · B` (+ `C` if `accumulate`), all row-major with explicit strides
/// so callers can pass transposed views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    debug_assert!(a.len() > ((m - 1) as isize * rsa + (k - 1) as isize * csa) as usize);
    debug_assert!(b.len() > ((k - 1) as isize * rsb + (n - 1) as isize * csb) as usize);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
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

/// Unfolds 3×3 zero-padded patches into a `(cin·9) × (h·w)` matrix.
fn im2col(x: &Tensor) -> Vec<f64> {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let mut cols = vec![0.0; x.c * 9 * hw];
    for ci in 0..x.c {
        let plane = x.plane(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`]: sums patch gradients back onto the input.
fn col2im(cols: &[f64], c: usize, h: usize, w: usize) -> Tensor {
    let hw = h * w;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let plane = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..][..w];
                    let src = &row[y * w..][..w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    out
}

/// Convolution with square kernel `k` ∈ {1, 3}, stride 1, "same" padding.
/// `weight` is `[cout][cin][k][k]`.
pub fn conv_forward(x: &Tensor, weight: &[f64], bias: &[f64], cout: usize, k: usize) -> Tensor {
    let hw = x.hw();
    let kk = x.c * k * k;
    debug_assert_eq!(weight.len(), cout * kk);
    let mut out = Tensor::zeros(cout, x.h, x.w);
    for (co, b) in bias.iter().enumerate() {
        out.data[co * hw..(co + 1) * hw].fill(*b);
    }
    if k == 1 {
        gemm(cout, kk, hw, weight, (kk as isize, 1), &x.data, (hw as isize, 1), &mut out.data, true);
    } else {
        let cols = im2col(x);
        gemm(cout, kk, hw, weight, (kk as isize, 1), &cols, (hw as isize, 1), &mut out.data, true);
    }
    out
}

/// Accumulates weight/bias gradients into `dweight`/`dbias` and returns the
/// input gradient.
pub fn conv_backward(
    x: &Tensor,
    weight: &[f64],
    dout: &Tensor,
    k: usize,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_input_grad: bool,
) -> Option<Tensor> {
    let hw = x.hw();
    let cout = dout.c;
    let kk = x.c * k * k;
    for (co, db) in dbias.iter_mut().enumerate() {
        *db += dout.plane(co).iter().sum::<f64>();
    }
    let cols_owned;
    let cols: &[f64] = if k == 1 {
        &x.data
    } else {
        cols_owned = im2col(x);
        &cols_owned
    };
    // dW (cout×kk) += dout (cout×hw) · colsᵀ (hw×kk)
    gemm(cout, hw, kk, &dout.data, (hw as isize, 1), cols, (1, hw as isize), dweight, true);
    if !need_input_grad {
        return None;
    }
    // dcols (kk×hw) = Wᵀ (kk×cout) · dout (cout×hw)
    let mut dcols = vec![0.0; kk * hw];
    gemm(kk, cout, hw, weight, (1, kk as isize), &dout.data, (hw as isize, 1), &mut dcols, false);
    if k == 1 {
        Some(Tensor { c: x.c, h: x.h, w: x.w, data: dcols })
    } else {
        Some(col2im(&dcols, x.c, x.h, x.w))
    }
}

pub fn relu_inplace(x: &mut Tensor) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward_inplace(output: &Tensor, grad: &mut Tensor) {
    grad.data.iter_mut().zip(&output.data).for_each(|(g, o)| {
        if *o <= 0.0 {
            *g = 0.0;
        }
    });
}

/// 2×2 max pooling, stride 2. Returns the output and, per output element, the
/// flat input index that won (first maximum in scan order).
pub fn maxpool_forward(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    let mut idx = vec![0usize; x.c * h2 * w2];
    for ci in 0..x.c {
        let base = ci * x.hw();
        for y in 0..h2 {
            for xo in 0..w2 {
                let mut best = base + 2 * y * x.w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * y + dy) * x.w + 2 * xo + dx;
                    if x.data[j] > x.data[best] {
                        best = j;
                    }
                }
                let o = ci * h2 * w2 + y * w2 + xo;
                out.data[o] = x.data[best];
                idx[o] = best;
            }
        }
    }
    (out, idx)
}

pub fn maxpool_backward(dout: &Tensor, idx: &[usize], c: usize, h: usize, w: usize) -> Tensor {
    let mut dx = Tensor::zeros(c, h, w);
    for (g, &i) in dout.data.iter().zip(idx) {
        dx.data[i] += g;
    }
    dx
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample_forward(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for ci in 0..x.c {
        let src = x.plane(ci);
        let dst = &mut out.data[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for xo in 0..w {
                dst[y * w + xo] = src[(y / 2) * x.w + xo / 2];
            }
        }
    }
    out
}

pub fn upsample_backward(dout: &Tensor) -> Tensor {
    let (h, w) = (dout.h / 2, dout.w / 2);
    let mut dx = Tensor::zeros(dout.c, h, w);
    for ci in 0..dout.c {
        let src = dout.plane(ci);
        let dst = &mut dx.data[ci * h * w..(ci + 1) * h * w];
        for y in 0..dout.h {
            for xo in 0..dout.w {
                dst[(y / 2) * w + xo / 2] += src[y * dout.w + xo];
            }
        }
    }
    dx
}

/// Channel concatenation `[a; b]`.
pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert!(a.h == b.h && a.w == b.w);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor { c: a.c + b.c, h: a.h, w: a.w, data }
}

pub fn split(grad: &Tensor, first: usize) -> (Tensor, Tensor) {
    let n = first * grad.hw();
    (
        Tensor { c: first, h: grad.h, w: grad.w, data: grad.data[..n].to_vec() },
        Tensor { c: grad.c - first, h: grad.h, w: grad.w, data: grad.data[n..].to_vec() },
    )
}
