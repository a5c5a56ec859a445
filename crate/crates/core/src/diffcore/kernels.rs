//! Forward and backward kernels on flat row-major buffers.

/// `c = op(a) * op(b)` (or `c += ...` when `accumulate`), where `op(a)` is `m x k`
/// and `op(b)` is `k x n`. A transposed operand is stored with swapped dimensions.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: buffer lengths are asserted above and the strides index
    // exactly the m*k, k*n and m*n elements of each buffer.
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

/// Geometry of a valid-padding, stride-1 convolution over one example.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub height: usize,
    pub width: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.height - self.kernel + 1
    }
    pub fn out_w(&self) -> usize {
        self.width - self.kernel + 1
    }
    pub fn patch(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
    pub fn positions(&self) -> usize {
        self.out_h() * self.out_w()
    }
    pub fn in_len(&self) -> usize {
        self.in_ch * self.height * self.width
    }
    pub fn out_len(&self) -> usize {
        self.out_ch * self.positions()
    }
}

/// Unfolds one example `[C, H, W]` into columns `[C*k*k, OH*OW]`.
fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
    let p = oh * ow;
    for c in 0..g.in_ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let src = c * g.height * g.width + (oy + ki) * g.width + kj;
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(&x[src..src + ow]);
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (oh, ow, k) = (g.out_h(), g.out_w(), g.kernel);
    let p = oh * ow;
    for c in 0..g.in_ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let base = c * g.height * g.width + (oy + ki) * g.width + kj;
                    for (d, s) in dx[base..base + ow].iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, batch: usize, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let p = g.positions();
    let mut out = vec![0.0; batch * g.out_len()];
    let mut cols = vec![0.0; g.patch() * p];
    for n in 0..batch {
        im2col(g, &x[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
        let y = &mut out[n * g.out_len()..(n + 1) * g.out_len()];
        for (o, row) in y.chunks_mut(p).enumerate() {
            row.fill(b[o]);
        }
        matmul(g.out_ch, g.patch(), p, w, false, &cols, false, y, true);
    }
    out
}

/// Returns `(dx, dw, db)` for upstream gradient `dy`.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    batch: usize,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = g.positions();
    let mut dx = vec![0.0; batch * g.in_len()];
    let mut dw = vec![0.0; g.out_ch * g.patch()];
    let mut db = vec![0.0; g.out_ch];
    let mut cols = vec![0.0; g.patch() * p];
    let mut dcols = vec![0.0; g.patch() * p];
    for n in 0..batch {
        let dyn_ = &dy[n * g.out_len()..(n + 1) * g.out_len()];
        for (o, row) in dyn_.chunks(p).enumerate() {
            db[o] += row.iter().sum::<f64>();
        }
        im2col(g, &x[n * g.in_len()..(n + 1) * g.in_len()], &mut cols);
        // dw += dy_n [out, p] * cols^T [p, patch]
        matmul(g.out_ch, p, g.patch(), dyn_, false, &cols, true, &mut dw, true);
        // dcols = w^T [patch, out] * dy_n [out, p]
        matmul(g.patch(), g.out_ch, p, w, true, dyn_, false, &mut dcols, false);
        col2im_add(g, &dcols, &mut dx[n * g.in_len()..(n + 1) * g.in_len()]);
    }
    (dx, dw, db)
}

/// 2x2 stride-2 max pooling over `[planes, h, w]`. Returns output and the flat
/// input index of each selected maximum (lowest index on ties).
pub(crate) fn maxpool2_forward(planes: usize, h: usize, w: usize, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub(crate) fn affine_forward(batch: usize, inputs: usize, outputs: usize, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(batch * outputs);
    for _ in 0..batch {
        y.extend_from_slice(b);
    }
    matmul(batch, inputs, outputs, x, false, w, true, &mut y, true);
    y
}

/// Returns `(dx, dw, db)` for `y = x w^T + b`.
pub(crate) fn affine_backward(
    batch: usize,
    inputs: usize,
    outputs: usize,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; batch * inputs];
    let mut dw = vec![0.0; outputs * inputs];
    let mut db = vec![0.0; outputs];
    matmul(batch, outputs, inputs, dy, false, w, false, &mut dx, false);
    matmul(outputs, batch, inputs, dy, true, x, false, &mut dw, false);
    for row in dy.chunks(outputs) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    (dx, dw, db)
}
