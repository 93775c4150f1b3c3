use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    concat_channels, leaky_relu, leaky_relu_backward, prefixed, sigmoid_backward, sigmoid_inplace, split_channels,
    Conv2d, ConvTranspose2x2, Params, Tensor,
};

/// Per-pixel (1×1 convolution) encoder of an optical sensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalEncoder {
    pub conv: Conv2d,
    slope: f64,
}

impl OpticalEncoder {
    pub fn new<R: Rng + ?Sized>(in_channels: usize, features: usize, slope: f64, rng: &mut R) -> Self {
        OpticalEncoder {
            conv: Conv2d::new(in_channels, features, 1, 1, rng),
            slope,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv.in_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = self.conv.forward(x);
        leaky_relu(&mut y, self.slope);
        y
    }

    /// `y` is the forward output; only parameter gradients are produced.
    pub fn backward(&self, x: &Tensor, y: &Tensor, mut dy: Tensor, grad: &mut OpticalEncoder) {
        leaky_relu_backward(y, &mut dy, self.slope);
        self.conv.backward(x, &dy, &mut grad.conv, false);
    }
}

impl Params for OpticalEncoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        self.conv.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.conv.params_mut()
    }
}

/// Channel plan of the SAR U-Net: widths at full, half and quarter resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SarWidths {
    pub full: usize,
    pub half: usize,
    pub quarter: usize,
}

impl Default for SarWidths {
    fn default() -> Self {
        SarWidths {
            full: 16,
            half: 32,
            quarter: 64,
        }
    }
}

/// U-Net style SAR encoder with two stride-2 downsamplings, transposed
/// convolution upsampling and skip concatenations; sigmoid output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SarEncoder {
    pub enc0: Conv2d,
    pub enc1: Conv2d,
    pub enc2: Conv2d,
    pub up1: ConvTranspose2x2,
    pub dec1: Conv2d,
    pub up0: ConvTranspose2x2,
    pub dec0: Conv2d,
    pub out: Conv2d,
    slope: f64,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct SarCache {
    x: Tensor,
    e0: Tensor,
    e1: Tensor,
    e2: Tensor,
    u1: Tensor,
    cat1: Tensor,
    d1: Tensor,
    u0: Tensor,
    cat0: Tensor,
    d0: Tensor,
    /// Encoder output, values in (0, 1).
    pub y: Tensor,
}

impl SarEncoder {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        widths: SarWidths,
        features: usize,
        kernel: usize,
        slope: f64,
        rng: &mut R,
    ) -> Self {
        let SarWidths { full, half, quarter } = widths;
        SarEncoder {
            enc0: Conv2d::new(in_channels, full, kernel, 1, rng),
            enc1: Conv2d::new(full, half, kernel, 2, rng),
            enc2: Conv2d::new(half, quarter, kernel, 2, rng),
            up1: ConvTranspose2x2::new(quarter, half, rng),
            dec1: Conv2d::new(2 * half, half, kernel, 1, rng),
            up0: ConvTranspose2x2::new(half, full, rng),
            dec0: Conv2d::new(2 * full, full, kernel, 1, rng),
            out: Conv2d::new(full, features, 1, 1, rng),
            slope,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.enc0.in_channels()
    }

    pub fn forward(&self, x: &Tensor) -> SarCache {
        let (_, h, w) = x.chw();
        assert!(h % 4 == 0 && w % 4 == 0, "SAR input must be divisible by 4, got {h}x{w}");
        let act = |mut t: Tensor| {
            leaky_relu(&mut t, self.slope);
            t
        };
        let e0 = act(self.enc0.forward(x));
        let e1 = act(self.enc1.forward(&e0));
        let e2 = act(self.enc2.forward(&e1));
        let u1 = act(self.up1.forward(&e2));
        let cat1 = concat_channels(&u1, &e1);
        let d1 = act(self.dec1.forward(&cat1));
        let u0 = act(self.up0.forward(&d1));
        let cat0 = concat_channels(&u0, &e0);
        let d0 = act(self.dec0.forward(&cat0));
        let mut y = self.out.forward(&d0);
        sigmoid_inplace(&mut y);
        SarCache {
            x: x.clone(),
            e0,
            e1,
            e2,
            u1,
            cat1,
            d1,
            u0,
            cat0,
            d0,
            y,
        }
    }

    /// Accumulates parameter gradients given the gradient w.r.t. the output.
    pub fn backward(&self, c: &SarCache, mut dy: Tensor, g: &mut SarEncoder) {
        let s = self.slope;
        sigmoid_backward(&c.y, &mut dy);
        let mut dd0 = self.out.backward(&c.d0, &dy, &mut g.out, true).expect("input grad");
        leaky_relu_backward(&c.d0, &mut dd0, s);
        let dcat0 = self.dec0.backward(&c.cat0, &dd0, &mut g.dec0, true).expect("input grad");
        let (mut du0, de0_skip) = split_channels(&dcat0, c.u0.chw().0);
        leaky_relu_backward(&c.u0, &mut du0, s);
        let mut dd1 = self.up0.backward(&c.d1, &du0, &mut g.up0);
        leaky_relu_backward(&c.d1, &mut dd1, s);
        let dcat1 = self.dec1.backward(&c.cat1, &dd1, &mut g.dec1, true).expect("input grad");
        let (mut du1, de1_skip) = split_channels(&dcat1, c.u1.chw().0);
        leaky_relu_backward(&c.u1, &mut du1, s);
        let mut de2 = self.up1.backward(&c.e2, &du1, &mut g.up1);
        leaky_relu_backward(&c.e2, &mut de2, s);
        let mut de1 = self.enc2.backward(&c.e1, &de2, &mut g.enc2, true).expect("input grad");
        de1.add_assign(&de1_skip);
        leaky_relu_backward(&c.e1, &mut de1, s);
        let mut de0 = self.enc1.backward(&c.e0, &de1, &mut g.enc1, true).expect("input grad");
        de0.add_assign(&de0_skip);
        leaky_relu_backward(&c.e0, &mut de0, s);
        self.enc0.backward(&c.x, &de0, &mut g.enc0, false);
    }
}

impl Params for SarEncoder {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = prefixed("enc0", self.enc0.params());
        p.extend(prefixed("enc1", self.enc1.params()));
        p.extend(prefixed("enc2", self.enc2.params()));
        p.extend(prefixed("up1", self.up1.params()));
        p.extend(prefixed("dec1", self.dec1.params()));
        p.extend(prefixed("up0", self.up0.params()));
        p.extend(prefixed("dec0", self.dec0.params()));
        p.extend(prefixed("out", self.out.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.enc0.params_mut();
        p.extend(self.enc1.params_mut());
        p.extend(self.enc2.params_mut());
        p.extend(self.up1.params_mut());
        p.extend(self.dec1.params_mut());
        p.extend(self.up0.params_mut());
        p.extend(self.dec0.params_mut());
        p.extend(self.out.params_mut());
        p
    }
}

/// Weight-shared 1×1 block mapping encoder features to the embedding:
/// `s1 = f(conv(x))`, `s2 = f(conv([x, s1]))`, `emb = f(conv([s1, s2]))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedBlock {
    pub c1: Conv2d,
    pub c2: Conv2d,
    pub c3: Conv2d,
    slope: f64,
}

#[derive(Clone, Debug)]
pub struct SharedCache {
    x: Tensor,
    s1: Tensor,
    cat_a: Tensor,
    s2: Tensor,
    cat_b: Tensor,
    pub emb: Tensor,
}

impl SharedBlock {
    pub fn new<R: Rng + ?Sized>(features: usize, width: usize, embedding: usize, slope: f64, rng: &mut R) -> Self {
        SharedBlock {
            c1: Conv2d::new(features, width, 1, 1, rng),
            c2: Conv2d::new(features + width, width, 1, 1, rng),
            c3: Conv2d::new(2 * width, embedding, 1, 1, rng),
            slope,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.c1.in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.c3.out_channels()
    }

    pub fn forward(&self, x: &Tensor) -> SharedCache {
        let mut s1 = self.c1.forward(x);
        leaky_relu(&mut s1, self.slope);
        let cat_a = concat_channels(x, &s1);
        let mut s2 = self.c2.forward(&cat_a);
        leaky_relu(&mut s2, self.slope);
        let cat_b = concat_channels(&s1, &s2);
        let mut emb = self.c3.forward(&cat_b);
        leaky_relu(&mut emb, self.slope);
        SharedCache {
            x: x.clone(),
            s1,
            cat_a,
            s2,
            cat_b,
            emb,
        }
    }

    /// Returns the gradient w.r.t. the block input.
    pub fn backward(&self, c: &SharedCache, mut demb: Tensor, g: &mut SharedBlock) -> Tensor {
        let s = self.slope;
        leaky_relu_backward(&c.emb, &mut demb, s);
        let dcat_b = self.c3.backward(&c.cat_b, &demb, &mut g.c3, true).expect("input grad");
        let (mut ds1, mut ds2) = split_channels(&dcat_b, c.s1.chw().0);
        leaky_relu_backward(&c.s2, &mut ds2, s);
        let dcat_a = self.c2.backward(&c.cat_a, &ds2, &mut g.c2, true).expect("input grad");
        let (mut dx, ds1_b) = split_channels(&dcat_a, c.x.chw().0);
        ds1.add_assign(&ds1_b);
        leaky_relu_backward(&c.s1, &mut ds1, s);
        let dx_a = self.c1.backward(&c.x, &ds1, &mut g.c1, true).expect("input grad");
        dx.add_assign(&dx_a);
        dx
    }
}

impl Params for SharedBlock {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = prefixed("c1", self.c1.params());
        p.extend(prefixed("c2", self.c2.params()));
        p.extend(prefixed("c3", self.c3.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.c1.params_mut();
        p.extend(self.c2.params_mut());
        p.extend(self.c3.params_mut());
        p
    }
}
