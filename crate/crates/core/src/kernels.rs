//! Raw numeric kernels shared by the differentiation graph, the layers'
//! power iterations and the test oracles. Everything operates on row-major
//! slices; images are `C×H×W` per sample.

use crate::error::{Error, Result};

/// `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n`. The `*_t` flags
/// mean the slice stores the transpose (`k×m` resp. `n×k`).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b` (distinct borrows).
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

/// Geometry of a square-kernel convolution over one `C×H×W` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let bad = || {
            Error::ShapeMismatch {
                op: "conv2d",
                shapes: vec![vec![channels, height, width], vec![kernel, stride, padding]],
            }
        };
        if stride == 0 || kernel == 0 || height + 2 * padding < kernel || width + 2 * padding < kernel
        {
            return Err(bad());
        }
        Ok(Self {
            channels,
            height,
            width,
            kernel,
            stride,
            padding,
            out_height: (height + 2 * padding - kernel) / stride + 1,
            out_width: (width + 2 * padding - kernel) / stride + 1,
        })
    }

    /// Geometry whose *output* is the given transposed-convolution input,
    /// i.e. the conv2d that a transposed convolution is the adjoint of.
    pub fn for_transposed(
        out_channels: usize,
        in_height: usize,
        in_width: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let h = (in_height.saturating_sub(1) * stride + kernel).checked_sub(2 * padding);
        let w = (in_width.saturating_sub(1) * stride + kernel).checked_sub(2 * padding);
        match (h, w) {
            (Some(h), Some(w)) if h > 0 && w > 0 && in_height > 0 && in_width > 0 => {
                let g = Self::new(out_channels, h, w, kernel, stride, padding)?;
                debug_assert_eq!((g.out_height, g.out_width), (in_height, in_width));
                Ok(g)
            }
            _ => Err(Error::ShapeMismatch {
                op: "conv_transpose2d",
                shapes: vec![vec![in_height, in_width], vec![kernel, stride, padding]],
            }),
        }
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height * self.out_width
    }

    #[inline]
    fn source(&self, o: usize, kk: usize) -> Option<usize> {
        let ih = (o * self.stride + kk) as isize - self.padding as isize;
        if ih < 0 || ih as usize >= self.height {
            None
        } else {
            Some(ih as usize)
        }
    }

    #[inline]
    fn source_w(&self, o: usize, kk: usize) -> Option<usize> {
        let iw = (o * self.stride + kk) as isize - self.padding as isize;
        if iw < 0 || iw as usize >= self.width {
            None
        } else {
            Some(iw as usize)
        }
    }
}

/// Unfolds one input image into a `(C·k·k) × (Ho·Wo)` patch matrix.
pub fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (k, ncol) = (g.kernel, g.col_cols());
    for c in 0..g.channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ncol..(row + 1) * ncol];
                for oi in 0..g.out_height {
                    let src_h = g.source(oi, ki);
                    for oj in 0..g.out_width {
                        dst[oi * g.out_width + oj] = match (src_h, g.source_w(oj, kj)) {
                            (Some(h), Some(w)) => x[(c * g.height + h) * g.width + w],
                            _ => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters (accumulating) a patch matrix into `x`.
pub fn col2im(g: &ConvGeom, cols: &[f64], x: &mut [f64]) {
    let (k, ncol) = (g.kernel, g.col_cols());
    for c in 0..g.channels {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ncol..(row + 1) * ncol];
                for oi in 0..g.out_height {
                    let Some(h) = g.source(oi, ki) else { continue };
                    for oj in 0..g.out_width {
                        if let Some(w) = g.source_w(oj, kj) {
                            x[(c * g.height + h) * g.width + w] += src[oi * g.out_width + oj];
                        }
                    }
                }
            }
        }
    }
}

/// Batched conv2d: `x` is `N×C×H×W`, `w` is `O×C×k×k`; returns `N×O×Ho×Wo`.
pub fn conv2d(g: &ConvGeom, batch: usize, x: &[f64], w: &[f64], out_ch: usize) -> Vec<f64> {
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ncol];
    let mut y = vec![0.0; batch * out_ch * ncol];
    for n in 0..batch {
        im2col(g, &x[n * g.input_len()..(n + 1) * g.input_len()], &mut cols);
        let yn = &mut y[n * out_ch * ncol..(n + 1) * out_ch * ncol];
        gemm(out_ch, rows, ncol, w, false, &cols, false, yn, 0.0);
    }
    y
}

/// Gradients of [`conv2d`] given `dy` (`N×O×Ho×Wo`): returns `(dx, dw)`.
pub fn conv2d_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    w: &[f64],
    out_ch: usize,
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ncol];
    let mut dx = need_dx.then(|| vec![0.0; batch * g.input_len()]);
    let mut dw = need_dw.then(|| vec![0.0; out_ch * rows]);
    for n in 0..batch {
        let dyn_ = &dy[n * out_ch * ncol..(n + 1) * out_ch * ncol];
        if let Some(dw) = dw.as_mut() {
            im2col(g, &x[n * g.input_len()..(n + 1) * g.input_len()], &mut cols);
            gemm(out_ch, ncol, rows, dyn_, false, &cols, true, dw, 1.0);
        }
        if let Some(dx) = dx.as_mut() {
            gemm(rows, out_ch, ncol, w, true, dyn_, false, &mut cols, 0.0);
            col2im(g, &cols, &mut dx[n * g.input_len()..(n + 1) * g.input_len()]);
        }
    }
    (dx, dw)
}

/// Batched transposed convolution, the adjoint of [`conv2d`] under geometry
/// `g`: `x` is `N×Ci×Ho×Wo` with `Ci = in_ch`, `w` is `Ci×Co×k×k` where
/// `Co = g.channels`; returns `N×Co×H×W`.
pub fn conv_transpose2d(g: &ConvGeom, batch: usize, x: &[f64], w: &[f64], in_ch: usize) -> Vec<f64> {
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ncol];
    let mut y = vec![0.0; batch * g.input_len()];
    for n in 0..batch {
        let xn = &x[n * in_ch * ncol..(n + 1) * in_ch * ncol];
        gemm(rows, in_ch, ncol, w, true, xn, false, &mut cols, 0.0);
        col2im(g, &cols, &mut y[n * g.input_len()..(n + 1) * g.input_len()]);
    }
    y
}

/// Gradients of [`conv_transpose2d`] given `dy` (`N×Co×H×W`).
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    w: &[f64],
    in_ch: usize,
    dy: &[f64],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let (rows, ncol) = (g.col_rows(), g.col_cols());
    let mut cols = vec![0.0; rows * ncol];
    let mut dx = need_dx.then(|| vec![0.0; batch * in_ch * ncol]);
    let mut dw = need_dw.then(|| vec![0.0; in_ch * rows]);
    for n in 0..batch {
        im2col(g, &dy[n * g.input_len()..(n + 1) * g.input_len()], &mut cols);
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_ch * ncol..(n + 1) * in_ch * ncol];
            gemm(in_ch, rows, ncol, w, false, &cols, false, dxn, 0.0);
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * in_ch * ncol..(n + 1) * in_ch * ncol];
            gemm(in_ch, ncol, rows, xn, false, &cols, true, dw, 1.0);
        }
    }
    (dx, dw)
}
