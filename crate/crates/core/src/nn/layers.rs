use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use super::tensor::Tensor;

/// Anything holding trainable tensors.
///
/// Gradient accumulators are values of the same type as the model component
/// they belong to (see [`Params::zeroed`]), so optimizers can pair parameters
/// and gradients positionally.
pub trait Params {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut g = self.clone();
        for t in g.params_mut() {
            t.fill(0.0);
        }
        g
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    fn snap_to_f32(&mut self) {
        for t in self.params_mut() {
            t.snap_to_f32();
        }
    }
}

/// Prefix every parameter name of `child` with `prefix.`.
pub fn prefixed<'a>(prefix: &str, child: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    child
        .into_iter()
        .map(|(n, t)| (format!("{prefix}.{n}"), t))
        .collect()
}

/// Glorot (Xavier) uniform initialisation: U(-l, l), l = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng + ?Sized>(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
}

/// 2-D convolution, square kernel, "same"-style padding of `kernel / 2`.
///
/// Weight layout is `[out_channels, in_channels, kernel, kernel]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        let mut weight = Tensor::zeros(&[out_channels, in_channels, kernel, kernel]);
        glorot_uniform(
            &mut weight,
            in_channels * kernel * kernel,
            out_channels * kernel * kernel,
            rng,
        );
        Conv2d {
            weight,
            bias: Tensor::zeros(&[out_channels]),
            stride,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    fn padding(&self) -> usize {
        self.kernel() / 2
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let (k, s, p) = (self.kernel(), self.stride, self.padding());
        ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel() == 1 && self.stride == 1
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (ci, h, w) = x.chw();
        assert_eq!(ci, self.in_channels(), "conv input channels");
        let co = self.out_channels();
        let (oh, ow) = self.out_dims(h, w);
        let n = oh * ow;
        let mut y = vec![0.0; co * n];
        for (c, chunk) in y.chunks_mut(n).enumerate() {
            chunk.fill(self.bias.data()[c]);
        }
        if self.is_pointwise() {
            gemm(co, ci, n, self.weight.data(), false, x.data(), false, 1.0, &mut y);
        } else {
            let kk = ci * self.kernel() * self.kernel();
            let col = im2col(x, self.kernel(), self.stride, self.padding(), oh, ow);
            gemm(co, kk, n, self.weight.data(), false, &col, false, 1.0, &mut y);
        }
        Tensor::from_vec(&[co, oh, ow], y)
    }

    /// Accumulate weight/bias gradients into `grad` and, when `need_input_grad`
    /// is set, return the gradient with respect to `x`.
    pub fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        grad: &mut Conv2d,
        need_input_grad: bool,
    ) -> Option<Tensor> {
        let (ci, h, w) = x.chw();
        let (co, oh, ow) = dy.chw();
        let n = oh * ow;
        let k = self.kernel();
        let kk = ci * k * k;

        for (c, chunk) in dy.data().chunks(n).enumerate() {
            grad.bias.data_mut()[c] += chunk.iter().sum::<f64>();
        }

        if self.is_pointwise() {
            gemm(co, n, ci, dy.data(), false, x.data(), true, 1.0, grad.weight.data_mut());
            if !need_input_grad {
                return None;
            }
            let mut dx = vec![0.0; ci * n];
            gemm(ci, co, n, self.weight.data(), true, dy.data(), false, 0.0, &mut dx);
            return Some(Tensor::from_vec(&[ci, h, w], dx));
        }

        let col = im2col(x, k, self.stride, self.padding(), oh, ow);
        gemm(co, n, kk, dy.data(), false, &col, true, 1.0, grad.weight.data_mut());
        if !need_input_grad {
            return None;
        }
        let mut dcol = col;
        gemm(kk, co, n, self.weight.data(), true, dy.data(), false, 0.0, &mut dcol);
        Some(col2im(&dcol, ci, h, w, k, self.stride, self.padding(), oh, ow))
    }
}

impl Params for Conv2d {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Output columns `[lo, hi)` whose input coordinate `o * stride + k - pad`
/// falls inside `[0, size)`.
fn valid_range(out: usize, size: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    let hi = if size + pad > k {
        ((size - 1 + pad - k) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

fn im2col(x: &Tensor, k: usize, stride: usize, pad: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (ci, h, w) = x.chw();
    let n = oh * ow;
    let mut col = vec![0.0; ci * k * k * n];
    let xd = x.data();
    for c in 0..ci {
        let plane = &xd[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, pad);
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, pad);
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ky - pad;
                    let src_row = &plane[iy * w..(iy + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if stride == 1 {
                        let ix0 = ox_lo + kx - pad;
                        dst_row[ox_lo..ox_hi].copy_from_slice(&src_row[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst_row[ox] = src_row[ox * stride + kx - pad];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Tensor {
    let n = oh * ow;
    let mut x = vec![0.0; ci * h * w];
    for c in 0..ci {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (oy_lo, oy_hi) = valid_range(oh, h, ky, stride, pad);
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * n..(row + 1) * n];
                let (ox_lo, ox_hi) = valid_range(ow, w, kx, stride, pad);
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ky - pad;
                    let dst_row = &mut plane[iy * w..(iy + 1) * w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for ox in ox_lo..ox_hi {
                        dst_row[ox * stride + kx - pad] += src_row[ox];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[ci, h, w], x)
}

/// 2x2 transposed convolution with stride 2 (exact spatial doubling).
///
/// Weight layout is `[in_channels, out_channels, 2, 2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose2x2 {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvTranspose2x2 {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let mut weight = Tensor::zeros(&[in_channels, out_channels, 2, 2]);
        glorot_uniform(&mut weight, out_channels * 4, in_channels * 4, rng);
        ConvTranspose2x2 {
            weight,
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (ci, h, w) = x.chw();
        assert_eq!(ci, self.weight.shape()[0], "transposed conv input channels");
        let co = self.out_channels();
        let hw = h * w;
        let mut blocks = vec![0.0; co * 4 * hw];
        gemm(co * 4, ci, hw, self.weight.data(), true, x.data(), false, 0.0, &mut blocks);
        let (oh, ow) = (2 * h, 2 * w);
        let mut y = vec![0.0; co * oh * ow];
        for o in 0..co {
            let b = self.bias.data()[o];
            for q in 0..4 {
                let (a, bb) = (q / 2, q % 2);
                let src = &blocks[(o * 4 + q) * hw..(o * 4 + q + 1) * hw];
                for i in 0..h {
                    let dst = &mut y[o * oh * ow + (2 * i + a) * ow..];
                    for j in 0..w {
                        dst[2 * j + bb] = src[i * w + j] + b;
                    }
                }
            }
        }
        Tensor::from_vec(&[co, oh, ow], y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor, grad: &mut ConvTranspose2x2) -> Tensor {
        let (ci, h, w) = x.chw();
        let (co, oh, ow) = dy.chw();
        let hw = h * w;
        let mut blocks = vec![0.0; co * 4 * hw];
        for o in 0..co {
            let plane = &dy.data()[o * oh * ow..(o + 1) * oh * ow];
            grad.bias.data_mut()[o] += plane.iter().sum::<f64>();
            for q in 0..4 {
                let (a, bb) = (q / 2, q % 2);
                let dst = &mut blocks[(o * 4 + q) * hw..(o * 4 + q + 1) * hw];
                for i in 0..h {
                    let src = &plane[(2 * i + a) * ow..];
                    for j in 0..w {
                        dst[i * w + j] = src[2 * j + bb];
                    }
                }
            }
        }
        gemm(ci, hw, co * 4, x.data(), false, &blocks, true, 1.0, grad.weight.data_mut());
        let mut dx = vec![0.0; ci * hw];
        gemm(ci, co * 4, hw, self.weight.data(), false, &blocks, false, 0.0, &mut dx);
        Tensor::from_vec(&[ci, h, w], dx)
    }
}

impl Params for ConvTranspose2x2 {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Fully connected layer over a flattened input. Weight layout `[out, in]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let mut weight = Tensor::zeros(&[outputs, inputs]);
        glorot_uniform(&mut weight, inputs, outputs, rng);
        Dense {
            weight,
            bias: Tensor::zeros(&[outputs]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.weight.shape()[0], self.weight.shape()[1]);
        assert_eq!(x.len(), inp, "dense input width");
        let mut y = self.bias.data().to_vec();
        gemm(out, inp, 1, self.weight.data(), false, x, false, 1.0, &mut y);
        y
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Dense) -> Vec<f64> {
        let (out, inp) = (self.weight.shape()[0], self.weight.shape()[1]);
        for (g, d) in grad.bias.data_mut().iter_mut().zip(dy) {
            *g += d;
        }
        gemm(out, 1, inp, dy, false, x, false, 1.0, grad.weight.data_mut());
        let mut dx = vec![0.0; inp];
        gemm(inp, out, 1, self.weight.data(), true, dy, false, 0.0, &mut dx);
        dx
    }
}

impl Params for Dense {
    fn params(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

pub fn leaky_relu(t: &mut Tensor, slope: f64) {
    for v in t.data_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

/// Backpropagate through a leaky ReLU given its *output* `y` (the sign of the
/// output equals the sign of the input for positive slopes).
pub fn leaky_relu_backward(y: &Tensor, dy: &mut Tensor, slope: f64) {
    for (d, &o) in dy.data_mut().iter_mut().zip(y.data()) {
        if o <= 0.0 {
            *d *= slope;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_inplace(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = sigmoid(*v);
    }
}

pub fn sigmoid_backward(y: &Tensor, dy: &mut Tensor) {
    for (d, &o) in dy.data_mut().iter_mut().zip(y.data()) {
        *d *= o * (1.0 - o);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(x: &Tensor, conv: &Conv2d) -> Tensor {
        let (ci, h, w) = x.chw();
        let (co, k, s) = (conv.out_channels(), conv.kernel(), conv.stride);
        let p = k / 2;
        let (oh, ow) = conv.out_dims(h, w);
        let mut y = Tensor::zeros(&[co, oh, ow]);
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let wv = conv.weight.data()[((o * ci + c) * k + ky) * k + kx];
                                acc += wv * x.data()[(c * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    y.data_mut()[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, h, w) in &[(3, 1, 5, 6), (3, 2, 8, 8), (3, 2, 7, 5), (1, 1, 4, 3)] {
            let conv = Conv2d::new(3, 4, k, s, &mut rng);
            let mut conv = conv;
            conv.bias = random_tensor(&[4], &mut rng);
            let x = random_tensor(&[3, h, w], &mut rng);
            let y = conv.forward(&x);
            let expect = naive_conv(&x, &conv);
            assert_eq!(y.shape(), expect.shape());
            assert!(y.max_abs_diff(&expect) < 1e-12, "k={k} s={s}");
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <dy, conv_lin(x)> == <conv_lin^T(dy), x> for the bias-free map.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(k, s) in &[(3, 1), (3, 2), (1, 1)] {
            let mut conv = Conv2d::new(2, 3, k, s, &mut rng);
            conv.bias.fill(0.0);
            let x = random_tensor(&[2, 6, 6], &mut rng);
            let y = conv.forward(&x);
            let dy = random_tensor(y.shape(), &mut rng);
            let mut g = conv.zeroed();
            let dx = conv.backward(&x, &dy, &mut g, true).unwrap();
            let lhs: f64 = dy.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = dx.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10);
            // the weight gradient is also linear: <dW, W> == <dy, y> without bias
            let lw: f64 = g.weight.data().iter().zip(conv.weight.data()).map(|(a, b)| a * b).sum();
            assert!((lw - lhs).abs() < 1e-10);
        }
    }

    #[test]
    fn transposed_conv_doubles_and_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut up = ConvTranspose2x2::new(3, 2, &mut rng);
        up.bias.fill(0.0);
        let x = random_tensor(&[3, 4, 5], &mut rng);
        let y = up.forward(&x);
        assert_eq!(y.shape(), &[2, 8, 10]);
        // y[o, 2i+a, 2j+b] = sum_c w[c, o, a, b] x[c, i, j]
        let (i, j, a, b, o) = (2, 3, 1, 0, 1);
        let direct: f64 = (0..3)
            .map(|c| up.weight.data()[((c * 2 + o) * 2 + a) * 2 + b] * x.data()[(c * 4 + i) * 5 + j])
            .sum();
        assert!((y.data()[(o * 8 + 2 * i + a) * 10 + 2 * j + b] - direct).abs() < 1e-12);
        let dy = random_tensor(y.shape(), &mut rng);
        let mut g = up.zeroed();
        let dx = up.backward(&x, &dy, &mut g);
        let lhs: f64 = dy.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = dx.data().iter().zip(x.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = Conv2d::new(16, 32, 3, 1, &mut rng);
        let limit = (6.0f64 / (16.0 * 9.0 + 32.0 * 9.0)).sqrt();
        assert!(conv.weight.data().iter().all(|w| w.abs() <= limit));
        assert!(conv.bias.data().iter().all(|&b| b == 0.0));
    }
}
