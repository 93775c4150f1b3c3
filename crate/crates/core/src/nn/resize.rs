use super::tensor::Tensor;

/// Sampling taps for one output coordinate: two source indices and weights.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Tap {
    lo: usize,
    hi: usize,
    w_hi: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            // half-pixel centres, clamped at the borders
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                w_hi: src - lo as f64,
            }
        })
        .collect()
}

/// Parameter-free bilinear resize of a CHW feature map.
///
/// Works for any ratio (the SAR branch goes 128 -> 12). The map is linear in
/// its input, and [`BilinearResize::backward`] is its exact adjoint.
#[derive(Clone, Debug, PartialEq)]
pub struct BilinearResize {
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl BilinearResize {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize)) -> Self {
        BilinearResize {
            in_hw,
            out_hw,
            rows: taps(in_hw.0, out_hw.0),
            cols: taps(in_hw.1, out_hw.1),
        }
    }

    pub fn trainable_parameters(&self) -> usize {
        0
    }

    pub fn output_size(&self) -> (usize, usize) {
        self.out_hw
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (c, h, w) = x.chw();
        assert_eq!((h, w), self.in_hw, "resize input size");
        let (oh, ow) = self.out_hw;
        let mut y = Tensor::zeros(&[c, oh, ow]);
        let yd = y.data_mut();
        for ch in 0..c {
            let plane = x.channel(ch);
            for (oy, r) in self.rows.iter().enumerate() {
                for (ox, q) in self.cols.iter().enumerate() {
                    let top = plane[r.lo * w + q.lo] * (1.0 - q.w_hi) + plane[r.lo * w + q.hi] * q.w_hi;
                    let bot = plane[r.hi * w + q.lo] * (1.0 - q.w_hi) + plane[r.hi * w + q.hi] * q.w_hi;
                    yd[(ch * oh + oy) * ow + ox] = top * (1.0 - r.w_hi) + bot * r.w_hi;
                }
            }
        }
        y
    }

    pub fn backward(&self, dy: &Tensor) -> Tensor {
        let (c, oh, ow) = dy.chw();
        assert_eq!((oh, ow), self.out_hw, "resize gradient size");
        let (h, w) = self.in_hw;
        let mut dx = Tensor::zeros(&[c, h, w]);
        let dxd = dx.data_mut();
        for ch in 0..c {
            let g = dy.channel(ch);
            let plane = &mut dxd[ch * h * w..(ch + 1) * h * w];
            for (oy, r) in self.rows.iter().enumerate() {
                for (ox, q) in self.cols.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    let (wt, wb) = ((1.0 - r.w_hi) * v, r.w_hi * v);
                    plane[r.lo * w + q.lo] += wt * (1.0 - q.w_hi);
                    plane[r.lo * w + q.hi] += wt * q.w_hi;
                    plane[r.hi * w + q.lo] += wb * (1.0 - q.w_hi);
                    plane[r.hi * w + q.hi] += wb * q.w_hi;
                }
            }
        }
        dx
    }
}
