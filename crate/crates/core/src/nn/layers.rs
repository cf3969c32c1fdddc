//! Layer kernels over flat parameter and activation buffers.
//!
//! Dense weights are stored `[out, in]`. Convolution weights are stored
//! `[in, k, k, out]` so the innermost loops run over contiguous output
//! channels, and convolution outputs are laid out `[row, col, channel]`.

/// Fully connected layer located at `w`/`b` inside a flat parameter buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: usize,
    pub b: usize,
}

impl Dense {
    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let w = &params[self.w..self.w + self.n_in * self.n_out];
        let b = &params[self.b..self.b + self.n_out];
        for (o, out) in y.iter_mut().enumerate() {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            *out = b[o] + dot(row, x);
        }
    }

    /// Accumulates parameter gradients and, when `dx` is given, writes the
    /// input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        dy: &[f64],
        grads: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let n_in = self.n_in;
        {
            let (gw, gb) = split_pair(grads, self.w, n_in * self.n_out, self.b, self.n_out);
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                for (gwi, &xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x) {
                    *gwi += g * xi;
                }
            }
        }
        if let Some(dx) = dx {
            dx.fill(0.0);
            let w = &params[self.w..self.w + n_in * self.n_out];
            for (o, &g) in dy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                for (d, &wi) in dx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *d += g * wi;
                }
            }
        }
    }
}

/// Memory order of a convolution input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputLayout {
    /// `[channel, row, col]`
    Chw,
    /// `[row, col, channel]`
    Hwc,
}

/// Valid (unpadded) square-kernel convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub layout: InputLayout,
    pub w: usize,
    pub b: usize,
}

impl Conv {
    pub fn out_h(&self) -> usize {
        (self.in_h - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w - self.kernel) / self.stride + 1
    }

    pub fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    pub fn out_len(&self) -> usize {
        self.out_c * self.out_h() * self.out_w()
    }

    pub fn weight_len(&self) -> usize {
        self.in_c * self.kernel * self.kernel * self.out_c
    }

    fn strides(&self) -> (usize, usize, usize) {
        match self.layout {
            InputLayout::Chw => (self.in_h * self.in_w, self.in_w, 1),
            InputLayout::Hwc => (1, self.in_w * self.in_c, self.in_c),
        }
    }

    /// Output positions along one axis whose window covers input index `i`,
    /// paired with the kernel offset of `i` inside each window.
    fn covering(&self, i: usize, out_n: usize) -> impl Iterator<Item = (usize, usize)> {
        let (k, s) = (self.kernel, self.stride);
        let lo = (i + s).saturating_sub(k) / s;
        let hi = (i / s).min(out_n - 1);
        (lo..=hi).map(move |o| (o, i - o * s))
    }

    /// Scatters every non-zero input into the outputs it feeds, so sparse
    /// binary inputs cost proportionally less.
    pub fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_len());
        let (oh, ow, oc, k) = (self.out_h(), self.out_w(), self.out_c, self.kernel);
        let bias = &params[self.b..self.b + oc];
        for cell in y.chunks_exact_mut(oc) {
            cell.copy_from_slice(bias);
        }
        let w = &params[self.w..self.w + self.weight_len()];
        let (cs, ys, xs) = self.strides();
        for c in 0..self.in_c {
            for iy in 0..self.in_h {
                for ix in 0..self.in_w {
                    let v = x[c * cs + iy * ys + ix * xs];
                    if v == 0.0 {
                        continue;
                    }
                    for (oy, ky) in self.covering(iy, oh) {
                        for (ox, kx) in self.covering(ix, ow) {
                            let wo = ((c * k + ky) * k + kx) * oc;
                            let yo = (oy * ow + ox) * oc;
                            axpy(v, &w[wo..wo + oc], &mut y[yo..yo + oc]);
                        }
                    }
                }
            }
        }
    }

    pub fn backward(
        &self,
        params: &[f64],
        x: &[f64],
        dy: &[f64],
        grads: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let (oh, ow, oc, k) = (self.out_h(), self.out_w(), self.out_c, self.kernel);
        let (cs, ys, xs) = self.strides();
        {
            let (gw, gb) = split_pair(grads, self.w, self.weight_len(), self.b, oc);
            for cell in dy.chunks_exact(oc) {
                for (g, &d) in gb.iter_mut().zip(cell) {
                    *g += d;
                }
            }
            for c in 0..self.in_c {
                for iy in 0..self.in_h {
                    for ix in 0..self.in_w {
                        let v = x[c * cs + iy * ys + ix * xs];
                        if v == 0.0 {
                            continue;
                        }
                        for (oy, ky) in self.covering(iy, oh) {
                            for (ox, kx) in self.covering(ix, ow) {
                                let wo = ((c * k + ky) * k + kx) * oc;
                                let yo = (oy * ow + ox) * oc;
                                axpy(v, &dy[yo..yo + oc], &mut gw[wo..wo + oc]);
                            }
                        }
                    }
                }
            }
        }
        if let Some(dx) = dx {
            let w = &params[self.w..self.w + self.weight_len()];
            for c in 0..self.in_c {
                for iy in 0..self.in_h {
                    for ix in 0..self.in_w {
                        let mut acc = 0.0;
                        for (oy, ky) in self.covering(iy, oh) {
                            for (ox, kx) in self.covering(ix, ow) {
                                let wo = ((c * k + ky) * k + kx) * oc;
                                let yo = (oy * ow + ox) * oc;
                                acc += dot(&w[wo..wo + oc], &dy[yo..yo + oc]);
                            }
                        }
                        dx[c * cs + iy * ys + ix * xs] = acc;
                    }
                }
            }
        }
    }
}

pub fn relu_in_place(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `dy` where the post-activation output was not positive.
pub fn relu_backward(activated: &[f64], dy: &mut [f64]) {
    for (d, &a) in dy.iter_mut().zip(activated) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - lse).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four partial sums let the compiler vectorize without reassociation
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for j in 0..4 {
            acc[j] += a[4 * i + j] * b[4 * i + j];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Two disjoint mutable windows of one buffer; `a` must precede `b`.
fn split_pair(buf: &mut [f64], a: usize, a_len: usize, b: usize, b_len: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a + a_len <= b, "parameter windows overlap");
    let (head, tail) = buf.split_at_mut(b);
    (&mut head[a..a + a_len], &mut tail[..b_len])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covering_windows() {
        let conv = Conv {
            in_c: 1,
            out_c: 1,
            kernel: 8,
            stride: 4,
            in_h: 84,
            in_w: 84,
            layout: InputLayout::Chw,
            w: 0,
            b: 64,
        };
        assert_eq!(conv.out_h(), 20);
        let v: Vec<_> = conv.covering(0, 20).collect();
        assert_eq!(v, vec![(0, 0)]);
        let v: Vec<_> = conv.covering(9, 20).collect();
        assert_eq!(v, vec![(1, 5), (2, 1)]);
        let v: Vec<_> = conv.covering(83, 20).collect();
        assert_eq!(v, vec![(19, 7)]);
        // the last stride-remainder column feeds nothing when it is cut off
        let conv2 = Conv {
            in_h: 20,
            in_w: 20,
            kernel: 4,
            stride: 2,
            ..conv
        };
        assert_eq!(conv2.out_h(), 9);
        assert_eq!(conv2.covering(19, 9).count(), 1);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let conv = Conv {
            in_c: 2,
            out_c: 3,
            kernel: 3,
            stride: 2,
            in_h: 7,
            in_w: 5,
            layout: InputLayout::Chw,
            w: 0,
            b: 2 * 9 * 3,
        };
        let params: Vec<f64> = (0..conv.b + 3).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let x: Vec<f64> = (0..conv.in_len()).map(|i| ((i * 13 % 7) as f64 - 3.0) / 3.0).collect();
        let mut y = vec![0.0; conv.out_len()];
        conv.forward(&params, &x, &mut y);
        for oy in 0..conv.out_h() {
            for ox in 0..conv.out_w() {
                for o in 0..3 {
                    let mut s = params[conv.b + o];
                    for c in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let xv = x[c * 35 + (oy * 2 + ky) * 5 + ox * 2 + kx];
                                s += xv * params[((c * 3 + ky) * 3 + kx) * 3 + o];
                            }
                        }
                    }
                    let got = y[(oy * conv.out_w() + ox) * 3 + o];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[1000.0, 0.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(p[0] > 1.0 - 1e-12);
        let l = [0.3, -2.0, 5.0];
        let (p, lp) = (softmax(&l), log_softmax(&l));
        for (a, b) in p.iter().zip(&lp) {
            assert!((a - b.exp()).abs() < 1e-12);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
