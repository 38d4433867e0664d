//! End-to-end assembly: dual encoders, fused bottleneck with two KAN blocks, decoder and head.

use serde::{Deserialize, Serialize};

use crate::decoder::{DecoderStage, SegHead};
use crate::encoders::{
    fuse_features, fuse_features_backward, scaled_widths, CnnEncoder, ResNetEncoder,
    RESNET_DOWNSAMPLE,
};
use crate::error::{Error, Result};
use crate::kan::{
    expand_patches, expand_patches_backward, map_to_tokens, tokens_to_map, KanBlock, PatchEmbed,
    SplineConfig, SplineGrid,
};
use crate::nn::{sigmoid, InitRng, Layer, LayerNorm, Mode, Parameterized, StateKind};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Number of decoder stages; each doubles resolution, undoing the /32 of the residual encoder.
pub const DECODER_STAGES: usize = 5;

/// Architectural hyperparameters. Everything here is needed to rebuild a model bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub in_channels: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub spline: SplineConfig,
    pub width_multiplier: f64,
    pub decoder_channels: Vec<usize>,
    pub out_channels: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Full-width layout at 320x320.
    pub fn full() -> Self {
        Self {
            image_height: 320,
            image_width: 320,
            in_channels: 3,
            patch_size: 1,
            embed_dim: 512,
            spline: SplineConfig::default(),
            width_multiplier: 1.0,
            decoder_channels: vec![256, 128, 64, 32, 16],
            out_channels: 1,
            seed: 0,
        }
    }

    /// Small CPU-friendly layout at 64x64.
    pub fn desk() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            in_channels: 3,
            patch_size: 1,
            embed_dim: 64,
            spline: SplineConfig::default(),
            width_multiplier: 0.125,
            decoder_channels: vec![64, 64, 64, 64, 64],
            out_channels: 1,
            seed: 0,
        }
    }

    pub fn encoder_widths(&self) -> [usize; 4] {
        scaled_widths(self.width_multiplier)
    }

    /// Spatial size of the fused encoder map.
    pub fn bottleneck_size(&self) -> (usize, usize) {
        (
            self.image_height / RESNET_DOWNSAMPLE,
            self.image_width / RESNET_DOWNSAMPLE,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.image_height, self.image_width);
        if h == 0 || w == 0 || h % RESNET_DOWNSAMPLE != 0 || w % RESNET_DOWNSAMPLE != 0 {
            return Err(Error::Config(format!(
                "image size {h}x{w} must be a positive multiple of {RESNET_DOWNSAMPLE}"
            )));
        }
        let p = self.patch_size;
        let (bh, bw) = self.bottleneck_size();
        if p == 0 || bh % p != 0 || bw % p != 0 {
            return Err(Error::Config(format!(
                "patch size {p} does not tile the {bh}x{bw} fused encoder map"
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(
                "in_channels and out_channels must be at least 1".into(),
            ));
        }
        if !(self.width_multiplier.is_finite() && self.width_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "width multiplier {} must be positive",
                self.width_multiplier
            )));
        }
        if self.embed_dim < 2 {
            return Err(Error::Config(format!(
                "embedding dim {} is too small for layer normalization",
                self.embed_dim
            )));
        }
        if self.decoder_channels.len() != DECODER_STAGES {
            return Err(Error::Config(format!(
                "decoder needs {DECODER_STAGES} channel widths, got {}",
                self.decoder_channels.len()
            )));
        }
        if self.decoder_channels[0] < 2 {
            return Err(Error::Config(format!(
                "first decoder stage width {} is too small for the second kan block",
                self.decoder_channels[0]
            )));
        }
        let mut prev = ("kan bottleneck".to_string(), self.embed_dim);
        for (i, &c) in self.decoder_channels.iter().enumerate() {
            if c == 0 || c > prev.1 {
                return Err(Error::Config(format!(
                    "decoder stage {i} width {c} must be in 1..={} set by {}",
                    prev.1, prev.0
                )));
            }
            prev = (format!("decoder stage {i}"), c);
        }
        SplineGrid::<f64>::new(self.spline)?;
        Ok(())
    }
}

/// The dual-encoder KAN segmentation network.
#[derive(Debug, Clone)]
pub struct Dekan<T> {
    config: ModelConfig,
    pub res: ResNetEncoder<T>,
    pub cnn: CnnEncoder<T>,
    pub embed1: PatchEmbed<T>,
    pub norm1: LayerNorm<T>,
    pub block1: KanBlock<T>,
    pub norm_post1: LayerNorm<T>,
    pub up1: DecoderStage<T>,
    pub embed2: PatchEmbed<T>,
    pub norm2: LayerNorm<T>,
    pub block2: KanBlock<T>,
    pub decoder: Vec<DecoderStage<T>>,
    pub head: SegHead<T>,
    cnn_shape: Option<Shape4>,
}

impl<T: Scalar> Dekan<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = InitRng::seed_from_u64(config.seed);
        let widths = config.encoder_widths();
        let grid = SplineGrid::new(config.spline)?;
        let p = config.patch_size;
        let d = config.embed_dim;
        let dec = &config.decoder_channels;
        let (bh, bw) = config.bottleneck_size();

        let res = ResNetEncoder::new(&mut rng, config.in_channels, widths);
        let cnn = CnnEncoder::new(&mut rng, config.in_channels, widths);
        let embed1 = PatchEmbed::new(&mut rng, widths[3], d, p);
        let block1 = KanBlock::new(&mut rng, d, bh / p, bw / p, &grid);
        let up1 = DecoderStage::new(&mut rng, d, dec[0]);
        let embed2 = PatchEmbed::new(&mut rng, dec[0], dec[0], p);
        let block2 = KanBlock::new(&mut rng, dec[0], 2 * bh / p, 2 * bw / p, &grid);
        let decoder = dec
            .windows(2)
            .map(|w| DecoderStage::new(&mut rng, w[0], w[1]))
            .collect();
        let head = SegHead::new(
            &mut rng,
            dec[DECODER_STAGES - 1],
            config.out_channels,
            config.image_height,
            config.image_width,
        );
        Ok(Self {
            res,
            cnn,
            embed1,
            norm1: LayerNorm::new(d),
            block1,
            norm_post1: LayerNorm::new(d),
            up1,
            embed2,
            norm2: LayerNorm::new(dec[0]),
            block2,
            decoder,
            head,
            cnn_shape: None,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_inputs(&self, x_aug: Shape4, x_orig: Shape4) -> Result<()> {
        if x_aug != x_orig {
            return Err(Error::Input(format!(
                "augmented input {x_aug:?} and original input {x_orig:?} differ in shape"
            )));
        }
        let c = &self.config;
        let expect = (c.in_channels, c.image_height, c.image_width);
        if (x_aug[1], x_aug[2], x_aug[3]) != expect {
            return Err(Error::Config(format!(
                "input {}x{}x{} does not match the configured {}x{}x{} (channels x height x width)",
                x_aug[1], x_aug[2], x_aug[3], expect.0, expect.1, expect.2
            )));
        }
        Ok(())
    }

    /// Logit shape for an input batch, derived without running the network.
    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.check_inputs(input, input)?;
        let f = self.res.output_shape(input)?;
        let cnn = self.cnn.output_shape(input)?;
        if cnn[1] != f[1] {
            return Err(Error::shape("fusion", f, cnn));
        }
        let p = self.config.patch_size;
        let [b, _, h, w] = f;
        let mut s = self.up1.output_shape([b, self.config.embed_dim, h, w])?;
        let t2 = self.embed2.proj.output_shape(s)?;
        if (t2[2] * p, t2[3] * p) != (s[2], s[3]) {
            return Err(Error::shape("second kan block", s, t2));
        }
        for stage in &self.decoder {
            s = stage.output_shape(s)?;
        }
        self.head.output_shape(s)
    }

    /// Training/eval forward pass returning logits of shape `(B, C_Y, H, W)`.
    pub fn forward(
        &mut self,
        x_aug: &Tensor4<T>,
        x_orig: &Tensor4<T>,
        mode: Mode,
    ) -> Result<Tensor4<T>> {
        self.check_inputs(x_aug.shape(), x_orig.shape())?;
        let p = self.config.patch_size;
        let f_res = self.res.forward(x_aug, mode)?;
        let f_cnn = self.cnn.forward(x_orig, mode)?;
        self.cnn_shape = Some(f_cnn.shape());
        let merged = fuse_features(&f_res, &f_cnn)?;

        let t = self.embed1.forward(&merged, mode)?;
        let t = self.norm1.forward(&t, mode)?;
        let k1 = self.block1.forward(&t, mode)?;
        let k1 = self.norm_post1.forward(&k1, mode)?;
        let m1 = expand_patches(
            &tokens_to_map(&k1, self.block1.grid_h, self.block1.grid_w)?,
            p,
        );
        let u = self.up1.forward(&m1, mode)?;

        let t = self.embed2.forward(&u, mode)?;
        let t = self.norm2.forward(&t, mode)?;
        let k2 = self.block2.forward(&t, mode)?;
        let m2 = expand_patches(
            &tokens_to_map(&k2, self.block2.grid_h, self.block2.grid_w)?,
            p,
        );
        let mut f = u.add(&m2)?;

        for stage in &mut self.decoder {
            f = stage.forward(&f, mode)?;
        }
        self.head.forward(&f, mode)
    }

    /// Backpropagates `d loss / d logits`, accumulating parameter gradients.
    /// Returns the gradients for `(x_aug, x_orig)`.
    pub fn backward(&mut self, grad_logits: &Tensor4<T>) -> Result<(Tensor4<T>, Tensor4<T>)> {
        let cnn_shape = self
            .cnn_shape
            .take()
            .ok_or(Error::MissingForward("dekan"))?;
        let p = self.config.patch_size;
        let mut g = self.head.backward(grad_logits)?;
        for stage in self.decoder.iter_mut().rev() {
            g = stage.backward(&g)?;
        }

        let gk2 = map_to_tokens(&expand_patches_backward(&g, p)?);
        let gt = self.block2.backward(&gk2)?;
        let gt = self.norm2.backward(&gt)?;
        let mut gu = self.embed2.backward(&gt)?;
        gu.add_assign(&g)?;

        let gm1 = self.up1.backward(&gu)?;
        let gk1 = map_to_tokens(&expand_patches_backward(&gm1, p)?);
        let gt = self.norm_post1.backward(&gk1)?;
        let gt = self.block1.backward(&gt)?;
        let gt = self.norm1.backward(&gt)?;
        let gm = self.embed1.backward(&gt)?;

        let (g_res, g_cnn) = fuse_features_backward(&gm, cnn_shape)?;
        Ok((self.res.backward(&g_res)?, self.cnn.backward(&g_cnn)?))
    }

    /// Eval-mode logits with the same tensor fed to both streams.
    pub fn logits(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.clone().forward(x, x, Mode::Eval)
    }

    /// Binary mask `sigmoid(logit) >= threshold` in `(B, C_Y, H, W)` layout.
    pub fn infer(&self, x: &Tensor4<T>, threshold: f64) -> Result<Vec<u8>> {
        let logits = self.logits(x)?;
        Ok(threshold_logits(&logits, threshold))
    }
}

/// Thresholds sigmoid probabilities; the boundary value counts as foreground.
pub fn threshold_logits<T: Scalar>(logits: &Tensor4<T>, threshold: f64) -> Vec<u8> {
    logits
        .data()
        .iter()
        .map(|&l| u8::from(sigmoid(l.as_f64()) >= threshold))
        .collect()
}

impl<T: Scalar> Parameterized<T> for Dekan<T> {
    fn visit_state(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor4<T>, StateKind)) {
        use crate::nn::join;
        self.res.visit_state(&join(prefix, "res"), f);
        self.cnn.visit_state(&join(prefix, "cnn"), f);
        self.embed1.visit_state(&join(prefix, "embed1"), f);
        self.norm1.visit_state(&join(prefix, "norm1"), f);
        self.block1.visit_state(&join(prefix, "block1"), f);
        self.norm_post1.visit_state(&join(prefix, "norm_post1"), f);
        self.up1.visit_state(&join(prefix, "decoder.0"), f);
        self.embed2.visit_state(&join(prefix, "embed2"), f);
        self.norm2.visit_state(&join(prefix, "norm2"), f);
        self.block2.visit_state(&join(prefix, "block2"), f);
        for (i, s) in self.decoder.iter().enumerate() {
            s.visit_state(&join(prefix, &format!("decoder.{}", i + 1)), f);
        }
        self.head.visit_state(&join(prefix, "head"), f);
    }

    fn visit_state_mut(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor4<T>, StateKind),
    ) {
        use crate::nn::join;
        self.res.visit_state_mut(&join(prefix, "res"), f);
        self.cnn.visit_state_mut(&join(prefix, "cnn"), f);
        self.embed1.visit_state_mut(&join(prefix, "embed1"), f);
        self.norm1.visit_state_mut(&join(prefix, "norm1"), f);
        self.block1.visit_state_mut(&join(prefix, "block1"), f);
        self.norm_post1
            .visit_state_mut(&join(prefix, "norm_post1"), f);
        self.up1.visit_state_mut(&join(prefix, "decoder.0"), f);
        self.embed2.visit_state_mut(&join(prefix, "embed2"), f);
        self.norm2.visit_state_mut(&join(prefix, "norm2"), f);
        self.block2.visit_state_mut(&join(prefix, "block2"), f);
        for (i, s) in self.decoder.iter_mut().enumerate() {
            s.visit_state_mut(&join(prefix, &format!("decoder.{}", i + 1)), f);
        }
        self.head.visit_state_mut(&join(prefix, "head"), f);
    }
}
