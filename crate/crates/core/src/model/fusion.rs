use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoders::{OpticalEncoder, SarCache, SarEncoder, SarWidths, SharedBlock, SharedCache};
use crate::data::{Grid, PixelClass, SensorKind};
use crate::error::{Error, Result};
use crate::losses::{softmax_channels, softmax_cross_entropy};
use crate::nn::{prefixed, BilinearResize, Conv2d, Params, Tensor};

/// Negative slope of every leaky ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Architecture hyper-parameters of the step-1 network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub leaky_slope: f64,
    /// Output width of every sensor encoder.
    pub features: usize,
    pub shared_width: usize,
    pub embedding_channels: usize,
    /// Side of the embedding grid; optical patches have this size.
    pub embedding_size: usize,
    /// Side of the SAR input patch.
    pub sar_patch: usize,
    pub sar_widths: SarWidths,
    pub sar_kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            leaky_slope: LEAKY_SLOPE,
            features: 32,
            shared_width: 32,
            embedding_channels: 32,
            embedding_size: 12,
            sar_patch: 128,
            sar_widths: SarWidths::default(),
            sar_kernel: 3,
        }
    }
}

impl EncoderConfig {
    /// Tiny network for finite-difference checks.
    pub fn miniature() -> Self {
        EncoderConfig {
            leaky_slope: LEAKY_SLOPE,
            features: 3,
            shared_width: 3,
            embedding_channels: 4,
            embedding_size: 4,
            sar_patch: 8,
            sar_widths: SarWidths {
                full: 2,
                half: 3,
                quarter: 4,
            },
            sar_kernel: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.leaky_slope != LEAKY_SLOPE {
            return Err(Error::Config(format!("leaky ReLU slope is fixed at {LEAKY_SLOPE}")));
        }
        if !self.sar_patch.is_multiple_of(4) || self.sar_patch == 0 {
            return Err(Error::Config("SAR patch side must be a positive multiple of 4".into()));
        }
        if self.sar_kernel.is_multiple_of(2) {
            return Err(Error::Config("SAR kernel must be odd".into()));
        }
        let widths = [
            self.features,
            self.shared_width,
            self.embedding_channels,
            self.embedding_size,
            self.sar_widths.full,
            self.sar_widths.half,
            self.sar_widths.quarter,
        ];
        if widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Expected `[channels, rows, cols]` of a network input for `sensor`.
    pub fn input_shape(&self, sensor: SensorKind) -> [usize; 3] {
        if sensor.is_optical() {
            [sensor.channels(), self.embedding_size, self.embedding_size]
        } else {
            [sensor.channels(), self.sar_patch, self.sar_patch]
        }
    }

    pub fn embedding_shape(&self) -> [usize; 3] {
        [self.embedding_channels, self.embedding_size, self.embedding_size]
    }
}

/// Sensor-specific input branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Branch {
    Optical(OpticalEncoder),
    Sar(SarEncoder),
}

impl Branch {
    /// Encoder family per sensor; a new sensor needs one arm here.
    pub fn for_sensor(sensor: SensorKind, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        match sensor {
            SensorKind::Modis | SensorKind::Viirs => {
                Branch::Optical(OpticalEncoder::new(sensor.channels(), cfg.features, cfg.leaky_slope, rng))
            }
            SensorKind::Sar => Branch::Sar(SarEncoder::new(
                sensor.channels(),
                cfg.sar_widths,
                cfg.features,
                cfg.sar_kernel,
                cfg.leaky_slope,
                rng,
            )),
        }
    }
}

impl Params for Branch {
    fn params(&self) -> Vec<(String, &Tensor)> {
        match self {
            Branch::Optical(e) => e.params(),
            Branch::Sar(e) => e.params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Branch::Optical(e) => e.params_mut(),
            Branch::Sar(e) => e.params_mut(),
        }
    }
}

/// Named weight groups, used to pick what an optimizer updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Encoder(SensorKind),
    Shared,
    Head,
    SarAux,
}

/// Forward state of one encoder pass.
#[derive(Clone, Debug)]
pub enum EncodeCache {
    Optical { x: Tensor, y: Tensor },
    Sar(Box<SarCache>),
}

/// Forward state of encoder + shared block + head for one sample.
#[derive(Clone, Debug)]
pub struct SegmentationCache {
    pub sensor: SensorKind,
    encode: EncodeCache,
    shared: SharedCache,
    pub logits: Tensor,
}

impl SegmentationCache {
    pub fn embedding(&self) -> &Tensor {
        &self.shared.emb
    }
}

/// The step-1 network: per-sensor encoders, one shared block, the
/// segmentation head and (until fine-tuning) the SAR auxiliary head.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel {
    config: EncoderConfig,
    pub branches: BTreeMap<SensorKind, Branch>,
    pub shared: SharedBlock,
    pub head: Conv2d,
    pub sar_aux_head: Option<Conv2d>,
    resize: BilinearResize,
}

impl FusionModel {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn new(config: EncoderConfig, sensors: &BTreeSet<SensorKind>, seed: u64) -> Result<Self> {
        config.validate()?;
        if sensors.is_empty() {
            return Err(Error::Config("model needs at least one sensor".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branches = sensors
            .iter()
            .map(|&s| (s, Branch::for_sensor(s, &config, &mut rng)))
            .collect();
        let shared = SharedBlock::new(
            config.features,
            config.shared_width,
            config.embedding_channels,
            config.leaky_slope,
            &mut rng,
        );
        let head = Conv2d::new(config.embedding_channels, PixelClass::COUNT, 1, 1, &mut rng);
        let sar_aux_head = sensors
            .contains(&SensorKind::Sar)
            .then(|| Conv2d::new(config.features, PixelClass::COUNT, 1, 1, &mut rng));
        let resize = BilinearResize::new(
            (config.sar_patch, config.sar_patch),
            (config.embedding_size, config.embedding_size),
        );
        Ok(FusionModel {
            config,
            branches,
            shared,
            head,
            sar_aux_head,
            resize,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn sensors(&self) -> BTreeSet<SensorKind> {
        self.branches.keys().copied().collect()
    }

    /// The weight-free SAR resize layer.
    pub fn resize_layer(&self) -> &BilinearResize {
        &self.resize
    }

    pub fn discard_aux_head(&mut self) {
        self.sar_aux_head = None;
    }

    fn check_input(&self, sensor: SensorKind, x: &Tensor) -> Result<()> {
        if !self.branches.contains_key(&sensor) {
            return Err(Error::Config(format!("model has no {sensor} branch")));
        }
        let want = self.config.input_shape(sensor);
        if x.shape() != want {
            return Err(Error::Shape(format!("{sensor} input {:?}, expected {want:?}", x.shape())));
        }
        Ok(())
    }

    fn sar_encoder(&self) -> Result<&SarEncoder> {
        match self.branches.get(&SensorKind::Sar) {
            Some(Branch::Sar(e)) => Ok(e),
            _ => Err(Error::Config("model has no SAR branch".into())),
        }
    }

    /// Encoder features on the embedding grid (`[K, E, E]`).
    pub fn encode(&self, sensor: SensorKind, x: &Tensor) -> Result<(Tensor, EncodeCache)> {
        self.check_input(sensor, x)?;
        Ok(match &self.branches[&sensor] {
            Branch::Optical(e) => {
                let y = e.forward(x);
                (
                    y.clone(),
                    EncodeCache::Optical {
                        x: x.clone(),
                        y,
                    },
                )
            }
            Branch::Sar(e) => {
                let cache = e.forward(x);
                (self.resize.forward(&cache.y), EncodeCache::Sar(Box::new(cache)))
            }
        })
    }

    pub fn encode_backward(&self, sensor: SensorKind, cache: &EncodeCache, dfeat: Tensor, grads: &mut FusionModel) {
        match (&self.branches[&sensor], cache, grads.branches.get_mut(&sensor)) {
            (Branch::Optical(e), EncodeCache::Optical { x, y }, Some(Branch::Optical(g))) => e.backward(x, y, dfeat, g),
            (Branch::Sar(e), EncodeCache::Sar(c), Some(Branch::Sar(g))) => {
                let dy = self.resize.backward(&dfeat);
                e.backward(c, dy, g)
            }
            _ => panic!("encoder cache does not match the {sensor} branch"),
        }
    }

    /// SAR encoder output at native resolution, before the resize.
    pub fn encode_sar_native(&self, x: &Tensor) -> Result<SarCache> {
        self.check_input(SensorKind::Sar, x)?;
        Ok(self.sar_encoder()?.forward(x))
    }

    pub fn shared_embed(&self, features: &Tensor) -> Result<Tensor> {
        let want = [self.config.features, self.config.embedding_size, self.config.embedding_size];
        if features.shape() != want {
            return Err(Error::Shape(format!("shared block input {:?}, expected {want:?}", features.shape())));
        }
        Ok(self.shared.forward(features).emb)
    }

    /// Encoder followed by the shared block.
    pub fn embed(&self, sensor: SensorKind, x: &Tensor) -> Result<Tensor> {
        let (f, _) = self.encode(sensor, x)?;
        self.shared_embed(&f)
    }

    /// Per-pixel class probabilities `[3, E, E]`.
    pub fn segment(&self, embedding: &Tensor) -> Result<Tensor> {
        if embedding.shape() != self.config.embedding_shape() {
            return Err(Error::Shape(format!("embedding {:?}", embedding.shape())));
        }
        Ok(softmax_channels(&self.head.forward(embedding)))
    }

    pub fn segmentation_forward(&self, sensor: SensorKind, x: &Tensor) -> Result<SegmentationCache> {
        let (f, encode) = self.encode(sensor, x)?;
        let shared = self.shared.forward(&f);
        let logits = self.head.forward(&shared.emb);
        Ok(SegmentationCache {
            sensor,
            encode,
            shared,
            logits,
        })
    }

    /// Cross entropy of one sample (summed over supervised pixels, times
    /// `scale`); gradients of every weight group accumulate into `grads`.
    pub fn segmentation_step(
        &self,
        sensor: SensorKind,
        x: &Tensor,
        labels: &Grid<PixelClass>,
        supervised: &Grid<bool>,
        scale: f64,
        grads: &mut FusionModel,
    ) -> Result<f64> {
        let cache = self.segmentation_forward(sensor, x)?;
        let (loss, dlogits) = softmax_cross_entropy(&cache.logits, labels, supervised, scale)?;
        let demb = self
            .head
            .backward(&cache.shared.emb, &dlogits, &mut grads.head, true)
            .expect("input grad");
        let dfeat = self.shared.backward(&cache.shared, demb, &mut grads.shared);
        self.encode_backward(sensor, &cache.encode, dfeat, grads);
        Ok(loss)
    }

    /// Same as [`FusionModel::segmentation_step`] for the SAR encoder alone,
    /// supervised at native resolution through the auxiliary head.
    pub fn sar_pretrain_step(
        &self,
        x: &Tensor,
        labels: &Grid<PixelClass>,
        supervised: &Grid<bool>,
        scale: f64,
        grads: &mut FusionModel,
    ) -> Result<f64> {
        let aux = self
            .sar_aux_head
            .as_ref()
            .ok_or_else(|| Error::Contract("SAR auxiliary head already discarded".into()))?;
        let cache = self.encode_sar_native(x)?;
        let logits = aux.forward(&cache.y);
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels, supervised, scale)?;
        let g_aux = grads.sar_aux_head.as_mut().expect("gradient aux head");
        let dy = aux.backward(&cache.y, &dlogits, g_aux, true).expect("input grad");
        match grads.branches.get_mut(&SensorKind::Sar) {
            Some(Branch::Sar(g)) => self.sar_encoder()?.backward(&cache, dy, g),
            _ => unreachable!("gradient model mirrors the model"),
        }
        Ok(loss)
    }

    /// Auxiliary-head class probabilities at SAR resolution.
    pub fn sar_aux_probabilities(&self, x: &Tensor) -> Result<Tensor> {
        let aux = self
            .sar_aux_head
            .as_ref()
            .ok_or_else(|| Error::Contract("SAR auxiliary head already discarded".into()))?;
        Ok(softmax_channels(&aux.forward(&self.encode_sar_native(x)?.y)))
    }

    pub fn group_params(&self, group: ParamGroup) -> Vec<&Tensor> {
        match group {
            ParamGroup::Encoder(s) => self
                .branches
                .get(&s)
                .map(|b| b.params().into_iter().map(|(_, t)| t).collect())
                .unwrap_or_default(),
            ParamGroup::Shared => self.shared.params().into_iter().map(|(_, t)| t).collect(),
            ParamGroup::Head => self.head.params().into_iter().map(|(_, t)| t).collect(),
            ParamGroup::SarAux => self
                .sar_aux_head
                .as_ref()
                .map(|h| h.params().into_iter().map(|(_, t)| t).collect())
                .unwrap_or_default(),
        }
    }

    pub fn group_params_mut(&mut self, group: ParamGroup) -> Vec<&mut Tensor> {
        match group {
            ParamGroup::Encoder(s) => self.branches.get_mut(&s).map(|b| b.params_mut()).unwrap_or_default(),
            ParamGroup::Shared => self.shared.params_mut(),
            ParamGroup::Head => self.head.params_mut(),
            ParamGroup::SarAux => self.sar_aux_head.as_mut().map(|h| h.params_mut()).unwrap_or_default(),
        }
    }

    /// Parameters of several groups in canonical order (encoders by sensor,
    /// shared block, head, auxiliary head), regardless of `groups` order.
    pub fn groups_params(&self, groups: &[ParamGroup]) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for g in canonical_groups(self.branches.keys().copied(), groups) {
            out.extend(self.group_params(g));
        }
        out
    }

    /// Mutable counterpart of [`FusionModel::groups_params`], same order.
    pub fn groups_params_mut(&mut self, groups: &[ParamGroup]) -> Vec<&mut Tensor> {
        let FusionModel {
            branches,
            shared,
            head,
            sar_aux_head,
            ..
        } = self;
        let mut out = Vec::new();
        for (s, b) in branches.iter_mut() {
            if groups.contains(&ParamGroup::Encoder(*s)) {
                out.extend(b.params_mut());
            }
        }
        if groups.contains(&ParamGroup::Shared) {
            out.extend(shared.params_mut());
        }
        if groups.contains(&ParamGroup::Head) {
            out.extend(head.params_mut());
        }
        if let (true, Some(h)) = (groups.contains(&ParamGroup::SarAux), sar_aux_head.as_mut()) {
            out.extend(h.params_mut());
        }
        out
    }

    /// Replaces every weight from a name → tensor table.
    pub fn load_named(&mut self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = self
            .params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        for ((name, shape), dst) in names.iter().zip(self.params_mut()) {
            let src = tensors
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint lacks tensor '{name}'")))?;
            if src.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("tensor '{name}' has shape {:?}, expected {shape:?}", src.shape())));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

fn canonical_groups(sensors: impl Iterator<Item = SensorKind>, groups: &[ParamGroup]) -> Vec<ParamGroup> {
    sensors
        .map(ParamGroup::Encoder)
        .chain([ParamGroup::Shared, ParamGroup::Head, ParamGroup::SarAux])
        .filter(|g| groups.contains(g))
        .collect()
}

fn encoder_group_name(s: SensorKind) -> String {
    format!("{}_encoder", s.name().to_ascii_lowercase())
}

impl Params for FusionModel {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut p = Vec::new();
        for (s, b) in &self.branches {
            p.extend(prefixed(&encoder_group_name(*s), b.params()));
        }
        p.extend(prefixed("shared_block", self.shared.params()));
        p.extend(prefixed("segmentation_head", self.head.params()));
        if let Some(h) = &self.sar_aux_head {
            p.extend(prefixed("sar_aux_head", h.params()));
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = Vec::new();
        for b in self.branches.values_mut() {
            p.extend(b.params_mut());
        }
        p.extend(self.shared.params_mut());
        p.extend(self.head.params_mut());
        if let Some(h) = &mut self.sar_aux_head {
            p.extend(h.params_mut());
        }
        p
    }
}

/// The shared latent representation of one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTensor {
    pub values: Tensor,
    pub sensor: SensorKind,
    pub date: NaiveDate,
}

impl EmbeddingTensor {
    pub fn new(values: Tensor, sensor: SensorKind, date: NaiveDate, expected: [usize; 3]) -> Result<Self> {
        if values.shape() != expected {
            return Err(Error::Shape(format!("embedding {:?}, expected {expected:?}", values.shape())));
        }
        Ok(EmbeddingTensor { values, sensor, date })
    }
}

/// Per-pixel argmax of a `[3, H, W]` probability map.
pub fn argmax_classes(probs: &Tensor) -> Grid<PixelClass> {
    let (c, h, w) = probs.chw();
    let hw = h * w;
    let p = probs.data();
    Grid::from_fn(h, w, |r, col| {
        let i = r * w + col;
        let best = (0..c).fold(0, |b, k| if p[k * hw + i] > p[b * hw + i] { k } else { b });
        PixelClass::from_index(best).expect("three classes")
    })
}

/// Share of valid pixels predicted as open water.
pub fn water_fraction_from_map(map: &Grid<PixelClass>, valid: &Grid<bool>) -> Result<f64> {
    if map.shape() != valid.shape() {
        return Err(Error::Shape(format!("class map {:?} vs mask {:?}", map.shape(), valid.shape())));
    }
    let n = valid.count_true();
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let water = map
        .iter()
        .zip(valid.iter())
        .filter(|(c, v)| **v && **c == PixelClass::NonFrozen)
        .count();
    Ok(water as f64 / n as f64)
}
