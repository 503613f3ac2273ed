//! Dense CHW tensors and the three layer kinds the colorizer needs:
//! 2-D convolution, ×2 nearest-neighbour upsampling and pointwise activations.

/// A single `channels × height × width` activation volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Convolution with TensorFlow-style "same" padding: the output has
/// `ceil(in / stride)` rows and columns, and any odd leftover padding goes
/// on the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Conv2d {
    pub fn weight_len(&self) -> usize {
        self.cout * self.patch_len()
    }

    pub fn patch_len(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    fn geometry(&self, in_h: usize, in_w: usize) -> Geometry {
        let (out_h, out_w) = self.out_dims(in_h, in_w);
        let pad = |inp: usize, out: usize| {
            ((out - 1) * self.stride + self.kernel).saturating_sub(inp) / 2
        };
        Geometry {
            in_h,
            in_w,
            out_h,
            out_w,
            pad_top: pad(in_h, out_h),
            pad_left: pad(in_w, out_w),
        }
    }

    fn im2col(&self, x: &Tensor, g: &Geometry) -> Vec<f64> {
        let k = self.kernel;
        let n = g.out_h * g.out_w;
        let mut cols = vec![0.0; self.patch_len() * n];
        for c in 0..self.cin {
            let src = x.channel(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..g.out_h {
                        let iy = (oy * self.stride + ky) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                        let dst_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - g.pad_left as isize;
                            if ix >= 0 && ix < g.in_w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], g: &Geometry) -> Tensor {
        let k = self.kernel;
        let n = g.out_h * g.out_w;
        let mut dx = Tensor::zeros(self.cin, g.in_h, g.in_w);
        let plane = g.in_h * g.in_w;
        for c in 0..self.cin {
            let dst = &mut dx.data[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..g.out_h {
                        let iy = (oy * self.stride + ky) as isize - g.pad_top as isize;
                        if iy < 0 || iy >= g.in_h as isize {
                            continue;
                        }
                        let base = iy as usize * g.in_w;
                        for ox in 0..g.out_w {
                            let ix = (ox * self.stride + kx) as isize - g.pad_left as isize;
                            if ix >= 0 && ix < g.in_w as isize {
                                dst[base + ix as usize] += src[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, weight: &[f64], bias: &[f64], x: &Tensor) -> Tensor {
        assert_eq!(x.channels, self.cin, "conv input channels");
        debug_assert_eq!(weight.len(), self.weight_len());
        debug_assert_eq!(bias.len(), self.cout);
        let g = self.geometry(x.height, x.width);
        let cols = self.im2col(x, &g);
        let n = g.out_h * g.out_w;
        let mut out = Tensor::zeros(self.cout, g.out_h, g.out_w);
        for (co, chunk) in out.data.chunks_exact_mut(n).enumerate() {
            chunk.fill(bias[co]);
        }
        gemm(
            self.cout,
            self.patch_len(),
            n,
            weight,
            false,
            &cols,
            false,
            &mut out.data,
            true,
        );
        out
    }

    /// Accumulates parameter gradients into `dw`/`db` and, when asked,
    /// returns the gradient with respect to the input.
    pub fn backward(
        &self,
        weight: &[f64],
        x: &Tensor,
        dout: &Tensor,
        dw: &mut [f64],
        db: &mut [f64],
        want_dx: bool,
    ) -> Option<Tensor> {
        let g = self.geometry(x.height, x.width);
        let n = g.out_h * g.out_w;
        assert_eq!(
            dout.shape(),
            (self.cout, g.out_h, g.out_w),
            "conv grad shape"
        );
        let cols = self.im2col(x, &g);
        for (co, chunk) in dout.data.chunks_exact(n).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
        // dW += dOut · colsᵀ
        gemm(
            self.cout,
            n,
            self.patch_len(),
            &dout.data,
            false,
            &cols,
            true,
            dw,
            true,
        );
        if !want_dx {
            return None;
        }
        // dCols = Wᵀ · dOut
        let mut dcols = vec![0.0; self.patch_len() * n];
        gemm(
            self.patch_len(),
            self.cout,
            n,
            weight,
            true,
            &dout.data,
            false,
            &mut dcols,
            false,
        );
        Some(self.col2im(&dcols, &g))
    }
}

/// `c = a·b (+ c)`, where `a` is logically `m × k` and `b` is `k × n`. A
/// transposed flag means the operand is stored row-major in its transposed shape.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm lhs");
    assert_eq!(b.len(), k * n, "gemm rhs");
    assert_eq!(c.len(), m * n, "gemm out");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every index the strides can reach
    // lies inside the corresponding slice, and `c` does not alias `a` or `b`.
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

pub(crate) fn relu_in_place(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose ReLU output was not positive.
pub(crate) fn relu_backward_in_place(grad: &mut Tensor, output: &Tensor) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.shape();
    let mut out = Tensor::zeros(c, 2 * h, 2 * w);
    let ow = 2 * w;
    for ch in 0..c {
        let src = x.channel(ch);
        let dst = &mut out.data[ch * 4 * h * w..(ch + 1) * 4 * h * w];
        for y in 0..2 * h {
            let srow = &src[(y / 2) * w..(y / 2 + 1) * w];
            for (xo, d) in dst[y * ow..(y + 1) * ow].iter_mut().enumerate() {
                *d = srow[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(grad: &Tensor) -> Tensor {
    let (c, h2, w2) = grad.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros(c, h, w);
    for ch in 0..c {
        let src = grad.channel(ch);
        for y in 0..h2 {
            for x in 0..w2 {
                out.data[(ch * h + y / 2) * w + x / 2] += src[y * w2 + x];
            }
        }
    }
    out
}
