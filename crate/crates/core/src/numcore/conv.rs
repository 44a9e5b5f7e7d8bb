//! im2col convolution on top of `matrixmultiply`'s dgemm.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("input must be B x C x H x W, got {input:?}"),
            ));
        }
        if weight.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("weight must be O x C x k x k, got {weight:?}"),
            ));
        }
        if weight[2] != weight[3] {
            return Err(Error::dim(
                "conv2d",
                format!("kernel axes 2 and 3 differ: {} vs {}", weight[2], weight[3]),
            ));
        }
        if input[1] != weight[1] {
            return Err(Error::dim(
                "conv2d",
                format!(
                    "input channel axis 1 is {} but weight axis 1 is {}",
                    input[1], weight[1]
                ),
            ));
        }
        if bias != [weight[0]] {
            return Err(Error::dim(
                "conv2d",
                format!("bias must have shape [{}], got {bias:?}", weight[0]),
            ));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        let k = weight[2];
        let span = |n: usize, axis: &str| -> Result<usize> {
            let padded = n + 2 * padding;
            if padded < k {
                return Err(Error::dim(
                    "conv2d",
                    format!("{axis} axis: padded size {padded} smaller than kernel {k}"),
                ));
            }
            Ok((padded - k) / stride + 1)
        };
        Ok(ConvGeometry {
            batch: input[0],
            in_ch: input[1],
            in_h: input[2],
            in_w: input[3],
            out_ch: weight[0],
            kernel: k,
            stride,
            padding,
            out_h: span(input[2], "height (2)")?,
            out_w: span(input[3], "width (3)")?,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_ch, self.out_h, self.out_w]
    }

    fn col_rows(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_pixels(&self) -> usize {
        self.in_h * self.in_w
    }

    /// A 1x1 stride-1 unpadded conv reads the input plane directly as its column matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

fn im2col(g: &ConvGeometry, x: &[f64], col: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let n = g.out_pixels();
    for ci in 0..g.in_ch {
        let plane = &x[ci * g.in_pixels()..(ci + 1) * g.in_pixels()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *v = if ix < 0 || ix >= g.in_w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeometry, col: &[f64], dx: &mut [f64]) {
    let (k, s, p) = (g.kernel, g.stride, g.padding as isize);
    let n = g.out_pixels();
    for ci in 0..g.in_ch {
        let plane = &mut dx[ci * g.in_pixels()..(ci + 1) * g.in_pixels()];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c = a * b + beta * c` with explicit row/column strides for `a` and `b`.
/// `c` is dense row-major `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    // SAFETY: the asserted bounds keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}

pub(crate) fn forward(g: &ConvGeometry, x: &[f64], w: &[f64], bias: &[f64]) -> Vec<f64> {
    let (kr, n) = (g.col_rows(), g.out_pixels());
    let in_len = g.in_ch * g.in_pixels();
    let out_len = g.out_ch * n;
    let mut out = vec![0.0; g.batch * out_len];
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![0.0; kr * n]
    };
    for b in 0..g.batch {
        let xb = &x[b * in_len..(b + 1) * in_len];
        let ob = &mut out[b * out_len..(b + 1) * out_len];
        for (o, chunk) in ob.chunks_mut(n).enumerate() {
            chunk.fill(bias[o]);
        }
        let colm: &[f64] = if g.is_pointwise() {
            xb
        } else {
            im2col(g, xb, &mut col);
            &col
        };
        gemm(g.out_ch, kr, n, w, kr, 1, colm, n, 1, 1.0, ob);
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

pub(crate) fn backward(
    g: &ConvGeometry,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    need_input: bool,
    need_params: bool,
) -> ConvGrads {
    let (kr, n) = (g.col_rows(), g.out_pixels());
    let in_len = g.in_ch * g.in_pixels();
    let out_len = g.out_ch * n;
    let mut dx = need_input.then(|| vec![0.0; g.batch * in_len]);
    let mut dw = need_params.then(|| vec![0.0; g.out_ch * kr]);
    let mut db = need_params.then(|| vec![0.0; g.out_ch]);
    let mut col = vec![0.0; if g.is_pointwise() { 0 } else { kr * n }];
    let mut dcol = vec![
        0.0;
        if need_input && !g.is_pointwise() {
            kr * n
        } else {
            0
        }
    ];

    for b in 0..g.batch {
        let dyb = &dy[b * out_len..(b + 1) * out_len];
        let xb = &x[b * in_len..(b + 1) * in_len];
        if let (Some(dw), Some(db)) = (dw.as_mut(), db.as_mut()) {
            for (o, chunk) in dyb.chunks(n).enumerate() {
                db[o] += chunk.iter().sum::<f64>();
            }
            let colm: &[f64] = if g.is_pointwise() {
                xb
            } else {
                im2col(g, xb, &mut col);
                &col
            };
            // dW (O x K) += dY (O x N) * col^T (N x K)
            gemm(g.out_ch, n, kr, dyb, n, 1, colm, 1, n, 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..(b + 1) * in_len];
            // dcol (K x N) = W^T (K x O) * dY (O x N)
            if g.is_pointwise() {
                gemm(kr, g.out_ch, n, w, 1, kr, dyb, n, 1, 0.0, dxb);
            } else {
                gemm(kr, g.out_ch, n, w, 1, kr, dyb, n, 1, 0.0, &mut dcol);
                col2im(g, &dcol, dxb);
            }
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

#[cfg(test)]
mod tests {
    use crate::numcore::Tensor;

    /// Direct nested-loop cross-correlation, independent of im2col/gemm.
    fn naive(x: &Tensor, w: &Tensor, b: &Tensor, s: usize, p: usize) -> Vec<f64> {
        let [bn, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [o, _, k, _] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = vec![0.0; bn * o * oh * ow];
        for bi in 0..bn {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = b.data()[oc];
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((bi * c + ci) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((oc * c + ci) * k + ky) * k + kx;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out[((bi * o + oc) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|i| ((i * 7919 % 23) as f64 - 11.0) * scale)
            .collect();
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn ones_kernel_sums_window() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let w = Tensor::full(&[1, 1, 3, 3], 1.0).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        let y = x.conv2d(&w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn pointwise_identity() {
        let x = seq(&[2, 1, 4, 5], 0.1);
        let w = Tensor::full(&[1, 1, 1, 1], 1.0).unwrap();
        let b = Tensor::zeros(&[1]).unwrap();
        assert_eq!(x.conv2d(&w, &b, 1, 0).unwrap(), x);
    }

    #[test]
    fn matches_naive_loops() {
        for &(s, p, k, h) in &[
            (1, 1, 3, 8),
            (2, 1, 3, 9),
            (2, 0, 3, 8),
            (1, 0, 1, 5),
            (3, 2, 5, 11),
        ] {
            let x = seq(&[2, 3, h, h + 1], 0.05);
            let w = seq(&[4, 3, k, k], 0.03);
            let b = seq(&[4], 0.2);
            let got = x.conv2d(&w, &b, s, p).unwrap();
            let want = naive(&x, &w, &b, s, p);
            for (a, e) in got.data().iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "s={s} p={p} k={k}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn dimension_errors_name_axes() {
        let x = Tensor::zeros(&[1, 3, 8, 8]).unwrap();
        let w = Tensor::zeros(&[2, 4, 3, 3]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        let msg = x.conv2d(&w, &b, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("axis 1"), "{msg}");
        let w = Tensor::zeros(&[2, 3, 9, 9]).unwrap();
        let msg = x.conv2d(&w, &b, 1, 0).unwrap_err().to_string();
        assert!(msg.contains("height"), "{msg}");
        let w = Tensor::zeros(&[2, 3, 3, 3]).unwrap();
        let bad_bias = Tensor::zeros(&[3]).unwrap();
        assert!(x.conv2d(&w, &bad_bias, 1, 1).is_err());
    }
}
