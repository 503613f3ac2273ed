//! End-to-end colorization network: a strided convolutional encoder over the
//! L plane, a fusion layer that broadcasts a global image embedding over the
//! encoder grid, and a nearest-neighbour upsampling decoder that emits A/B.

mod embedding;
pub(crate) mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::colorspace::{ChromaMap, AB_MAX, AB_MIN};
use crate::error::{Error, Result};
use crate::plane::Plane;

pub use embedding::{constant_embedder, embed_luminance, ConstantEmbedder, EmbeddingProvider};
pub use layers::Tensor;

use layers::{relu_backward_in_place, relu_in_place, upsample2, upsample2_backward, Conv2d};

/// Checkpoint/weights format version.
pub const WEIGHTS_VERSION: u32 = 1;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EeCnnConfig {
    /// Output channels of each encoder convolution; the last entry is the
    /// encoder feature depth.
    pub encoder_channels: Vec<usize>,
    /// 1-based indices of the encoder layers that use stride 2.
    pub stride2_layers: Vec<usize>,
    pub kernel_size: usize,
    /// Length of the global embedding vector.
    pub embedding_dim: usize,
    /// When false the fusion layer sees only encoder features.
    pub use_embedding: bool,
    pub fusion_out_channels: usize,
    pub decoder_stages: usize,
    /// Network outputs are `tanh(·) * ab_scale`.
    pub ab_scale: f64,
}

impl Default for EeCnnConfig {
    fn default() -> Self {
        EeCnnConfig {
            encoder_channels: vec![64, 128, 128, 256, 256, 512, 512, 512],
            stride2_layers: vec![1, 3, 5],
            kernel_size: 4,
            embedding_dim: 1000,
            use_embedding: true,
            fusion_out_channels: 256,
            decoder_stages: 3,
            ab_scale: 128.0,
        }
    }
}

/// Number of stride-2 stages; the encoder reduces each side by `2^3`.
pub const DOWNSAMPLE_STAGES: usize = 3;
pub const REDUCTION: usize = 1 << DOWNSAMPLE_STAGES;

impl EeCnnConfig {
    /// Three-layer, eight-channel network for gradient checks.
    pub fn miniature() -> Self {
        EeCnnConfig {
            encoder_channels: vec![8, 8, 8],
            stride2_layers: vec![1, 2, 3],
            embedding_dim: 4,
            fusion_out_channels: 8,
            ..Default::default()
        }
    }

    /// Small network that trains on a laptop CPU in seconds.
    pub fn tiny() -> Self {
        EeCnnConfig {
            encoder_channels: vec![16, 16, 32, 32, 64, 64],
            stride2_layers: vec![1, 3, 5],
            embedding_dim: 8,
            fusion_out_channels: 64,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return arg("encoder channels must be non-empty and positive".into());
        }
        if self.kernel_size != 4 {
            return arg(format!("kernel size must be 4, got {}", self.kernel_size));
        }
        let mut strided = self.stride2_layers.clone();
        strided.sort_unstable();
        strided.dedup();
        if strided.len() != DOWNSAMPLE_STAGES || strided.len() != self.stride2_layers.len() {
            return arg(format!(
                "need exactly {DOWNSAMPLE_STAGES} distinct stride-2 layers, got {:?}",
                self.stride2_layers
            ));
        }
        if strided
            .iter()
            .any(|&i| i == 0 || i > self.encoder_channels.len())
        {
            return arg(format!(
                "stride-2 layer indices {:?} outside 1..={}",
                self.stride2_layers,
                self.encoder_channels.len()
            ));
        }
        if self.decoder_stages != DOWNSAMPLE_STAGES {
            return arg(format!(
                "decoder must upsample {DOWNSAMPLE_STAGES} times, got {}",
                self.decoder_stages
            ));
        }
        if self.fusion_out_channels == 0 {
            return arg("fusion output channels must be positive".into());
        }
        if self.use_embedding && self.embedding_dim == 0 {
            return arg("embedding dimension must be positive".into());
        }
        if !(self.ab_scale > 0.0 && self.ab_scale <= -AB_MIN) {
            return arg(format!("ab_scale {} outside (0, 128]", self.ab_scale));
        }
        Ok(())
    }

    pub fn encoder_out_channels(&self) -> usize {
        *self.encoder_channels.last().expect("validated")
    }

    pub fn fusion_in_channels(&self) -> usize {
        self.encoder_out_channels()
            + if self.use_embedding {
                self.embedding_dim
            } else {
                0
            }
    }

    /// Output channels of each decoder convolution (halving, floored at 1).
    pub fn decoder_channels(&self) -> Vec<usize> {
        (1..=self.decoder_stages)
            .map(|i| (self.fusion_out_channels >> i).max(1))
            .collect()
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// One named parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Trained parameters together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub version: u32,
    pub fingerprint: String,
    pub config: EeCnnConfig,
    pub blocks: Vec<ParamBlock>,
}

impl ModelWeights {
    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    /// Errors unless these weights were produced for `config`.
    pub fn verify(&self, config: &EeCnnConfig) -> Result<()> {
        let expected = config.fingerprint();
        if self.fingerprint != expected || self.config.fingerprint() != expected {
            return Err(Error::Fingerprint {
                expected,
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub(crate) fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.blocks
            .iter()
            .map(|b| vec![0.0; b.data.len()])
            .collect()
    }
}

/// Activations recorded by a forward pass for use by [`EeCnn::backward`].
pub(crate) struct Trace {
    /// Input of every convolution, in execution order.
    inputs: Vec<Tensor>,
    /// Post-activation output of every convolution.
    outputs: Vec<Tensor>,
}

impl Trace {
    /// `tanh` output of the final layer, in `[-1, 1]`.
    pub fn output(&self) -> &Tensor {
        self.outputs.last().expect("non-empty trace")
    }
}

/// The colorization network for one architecture.
#[derive(Debug, Clone)]
pub struct EeCnn {
    config: EeCnnConfig,
    fingerprint: String,
    encoder: Vec<Conv2d>,
    fusion: Conv2d,
    decoder: Vec<Conv2d>,
    head: Conv2d,
}

impl EeCnn {
    pub fn new(config: EeCnnConfig) -> Result<Self> {
        config.validate()?;
        let k = config.kernel_size;
        let mut cin = 1;
        let mut encoder = Vec::new();
        for (i, &cout) in config.encoder_channels.iter().enumerate() {
            let stride = if config.stride2_layers.contains(&(i + 1)) {
                2
            } else {
                1
            };
            encoder.push(Conv2d {
                cin,
                cout,
                kernel: k,
                stride,
            });
            cin = cout;
        }
        let fusion = Conv2d {
            cin: config.fusion_in_channels(),
            cout: config.fusion_out_channels,
            kernel: k,
            stride: 1,
        };
        let mut decoder = Vec::new();
        cin = config.fusion_out_channels;
        for cout in config.decoder_channels() {
            decoder.push(Conv2d {
                cin,
                cout,
                kernel: k,
                stride: 1,
            });
            cin = cout;
        }
        let head = Conv2d {
            cin,
            cout: 2,
            kernel: k,
            stride: 1,
        };
        Ok(EeCnn {
            fingerprint: config.fingerprint(),
            config,
            encoder,
            fusion,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &EeCnnConfig {
        &self.config
    }

    fn convs(&self) -> impl Iterator<Item = (String, &Conv2d)> {
        let enc = self
            .encoder
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("encoder.{i}"), c));
        let dec = self
            .decoder
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("decoder.{i}"), c));
        enc.chain(std::iter::once(("fusion".to_string(), &self.fusion)))
            .chain(dec)
            .chain(std::iter::once(("head".to_string(), &self.head)))
    }

    /// Fan-in scaled uniform initialization; biases start at zero.
    pub fn init_weights(&self, seed: u64) -> ModelWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::new();
        let n_convs = self.encoder.len() + self.decoder.len() + 2;
        for (idx, (name, conv)) in self.convs().enumerate() {
            let fan_in = conv.patch_len() as f64;
            // ReLU layers use the He bound, the tanh head the LeCun bound.
            let gain = if idx + 1 == n_convs { 3.0 } else { 6.0 };
            let bound = (gain / fan_in).sqrt();
            let data = (0..conv.weight_len())
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            blocks.push(ParamBlock {
                name: format!("{name}.weight"),
                shape: vec![conv.cout, conv.cin, conv.kernel, conv.kernel],
                data,
            });
            blocks.push(ParamBlock {
                name: format!("{name}.bias"),
                shape: vec![conv.cout],
                data: vec![0.0; conv.cout],
            });
        }
        ModelWeights {
            version: WEIGHTS_VERSION,
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
            blocks,
        }
    }

    /// Checks that `weights` belong to this architecture, including block shapes.
    pub fn check_weights(&self, weights: &ModelWeights) -> Result<()> {
        weights.verify(&self.config)?;
        let expected: Vec<(String, usize)> = self
            .convs()
            .flat_map(|(name, c)| {
                [
                    (format!("{name}.weight"), c.weight_len()),
                    (format!("{name}.bias"), c.cout),
                ]
            })
            .collect();
        if expected.len() != weights.blocks.len()
            || expected
                .iter()
                .zip(&weights.blocks)
                .any(|((n, len), b)| *n != b.name || *len != b.data.len())
        {
            return Err(Error::Corrupt(
                "parameter blocks do not match the architecture".into(),
            ));
        }
        Ok(())
    }

    fn params<'w>(&self, weights: &'w ModelWeights, conv_index: usize) -> (&'w [f64], &'w [f64]) {
        (
            &weights.blocks[2 * conv_index].data,
            &weights.blocks[2 * conv_index + 1].data,
        )
    }

    fn l_tensor(l: &Plane) -> Tensor {
        Tensor {
            channels: 1,
            height: l.height(),
            width: l.width(),
            data: l.as_slice().iter().map(|v| v / 100.0).collect(),
        }
    }

    fn check_divisible(w: usize, h: usize) -> Result<()> {
        if w == 0 || h == 0 || !w.is_multiple_of(REDUCTION) || !h.is_multiple_of(REDUCTION) {
            return Err(Error::Shape(format!(
                "{w}x{h} input is not a positive multiple of {REDUCTION}"
            )));
        }
        Ok(())
    }

    /// Encoder features of an L plane whose sides are multiples of 8:
    /// a `512 × H/8 × W/8` tensor for the default configuration.
    pub fn encode(&self, l: &Plane, weights: &ModelWeights) -> Result<Tensor> {
        self.check_weights(weights)?;
        Self::check_divisible(l.width(), l.height())?;
        let mut x = Self::l_tensor(l);
        for (i, conv) in self.encoder.iter().enumerate() {
            let (w, b) = self.params(weights, i);
            x = conv.forward(w, b, &x);
            relu_in_place(&mut x);
        }
        Ok(x)
    }

    /// Depthwise concatenation of encoder features with the embedding
    /// replicated at every spatial cell (the fusion convolution's input).
    pub fn fusion_input(&self, enc: &Tensor, embedding: &[f64]) -> Result<Tensor> {
        if enc.channels != self.config.encoder_out_channels() {
            return Err(Error::Shape(format!(
                "encoder features have {} channels, expected {}",
                enc.channels,
                self.config.encoder_out_channels()
            )));
        }
        if !self.config.use_embedding {
            return Ok(enc.clone());
        }
        if embedding.len() != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding length {} != configured {}",
                embedding.len(),
                self.config.embedding_dim
            )));
        }
        let n = enc.plane_len();
        let mut data = Vec::with_capacity((enc.channels + embedding.len()) * n);
        data.extend_from_slice(&enc.data);
        for &e in embedding {
            data.extend(std::iter::repeat_n(e, n));
        }
        Ok(Tensor {
            channels: enc.channels + embedding.len(),
            height: enc.height,
            width: enc.width,
            data,
        })
    }

    pub fn fuse(&self, enc: &Tensor, embedding: &[f64], weights: &ModelWeights) -> Result<Tensor> {
        self.check_weights(weights)?;
        let input = self.fusion_input(enc, embedding)?;
        let (w, b) = self.params(weights, self.encoder.len());
        let mut out = self.fusion.forward(w, b, &input);
        relu_in_place(&mut out);
        Ok(out)
    }

    /// Upsamples fused features `C × h × w` to a `8h × 8w` chroma map.
    pub fn decode(&self, fused: &Tensor, weights: &ModelWeights) -> Result<ChromaMap> {
        self.check_weights(weights)?;
        if fused.channels != self.config.fusion_out_channels {
            return Err(Error::Shape(format!(
                "fused features have {} channels, expected {}",
                fused.channels, self.config.fusion_out_channels
            )));
        }
        let base = self.encoder.len() + 1;
        let mut x = fused.clone();
        for (i, conv) in self.decoder.iter().enumerate() {
            let (w, b) = self.params(weights, base + i);
            x = conv.forward(w, b, &x);
            relu_in_place(&mut x);
            x = upsample2(&x);
        }
        let (w, b) = self.params(weights, base + self.decoder.len());
        let mut y = self.head.forward(w, b, &x);
        for v in &mut y.data {
            *v = v.tanh();
        }
        Ok(self.to_chroma(&y))
    }

    fn to_chroma(&self, y: &Tensor) -> ChromaMap {
        let scale = self.config.ab_scale;
        let plane = |c: usize| {
            Plane::new(
                y.width,
                y.height,
                y.channel(c)
                    .iter()
                    .map(|v| (v * scale).clamp(AB_MIN, AB_MAX))
                    .collect(),
            )
            .expect("non-empty output")
        };
        ChromaMap::clamped(plane(0), plane(1))
    }

    /// Reflect-pads `l` on the right/bottom to the next multiple of 8.
    pub fn pad_input(l: &Plane) -> Plane {
        let pad = |n: usize| n.div_ceil(REDUCTION) * REDUCTION - n;
        l.pad_reflect(pad(l.width()), pad(l.height()))
    }

    /// Predicts the chroma of `l` given a precomputed embedding.
    pub fn forward_with_embedding(
        &self,
        l: &Plane,
        embedding: &[f64],
        weights: &ModelWeights,
    ) -> Result<ChromaMap> {
        self.check_weights(weights)?;
        if self.config.use_embedding && embedding.len() != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding length {} != configured {}",
                embedding.len(),
                self.config.embedding_dim
            )));
        }
        let padded = Self::pad_input(l);
        let trace = self.trace(&padded, embedding, weights);
        self.to_chroma(trace.output())
            .crop(0, 0, l.width(), l.height())
    }

    /// Predicts the chroma of an arbitrary-size L plane: pad, encode, fuse
    /// with the provider's embedding, decode, crop.
    pub fn forward(
        &self,
        l: &Plane,
        provider: &dyn EmbeddingProvider,
        weights: &ModelWeights,
    ) -> Result<ChromaMap> {
        self.check_weights(weights)?;
        let embedding = self.embedding_for(l, provider)?;
        self.forward_with_embedding(l, &embedding, weights)
    }

    /// The provider's embedding of `l`, or an empty vector when the side
    /// branch is disabled.
    pub fn embedding_for(&self, l: &Plane, provider: &dyn EmbeddingProvider) -> Result<Vec<f64>> {
        if !self.config.use_embedding {
            return Ok(Vec::new());
        }
        if provider.dim() != self.config.embedding_dim {
            return Err(Error::Shape(format!(
                "provider {} has dimension {}, network expects {}",
                provider.name(),
                provider.dim(),
                self.config.embedding_dim
            )));
        }
        embed_luminance(provider, l)
    }

    /// Forward pass over an already padded plane, keeping every activation.
    pub(crate) fn trace(&self, padded: &Plane, embedding: &[f64], weights: &ModelWeights) -> Trace {
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut x = Self::l_tensor(padded);
        let mut conv_index = 0;
        for conv in &self.encoder {
            let (w, b) = self.params(weights, conv_index);
            let mut y = conv.forward(w, b, &x);
            relu_in_place(&mut y);
            inputs.push(x);
            outputs.push(y.clone());
            x = y;
            conv_index += 1;
        }
        let fin = self
            .fusion_input(&x, embedding)
            .expect("embedding length checked by caller");
        let (w, b) = self.params(weights, conv_index);
        let mut y = self.fusion.forward(w, b, &fin);
        relu_in_place(&mut y);
        inputs.push(fin);
        outputs.push(y.clone());
        x = y;
        conv_index += 1;
        for conv in &self.decoder {
            let (w, b) = self.params(weights, conv_index);
            let mut y = conv.forward(w, b, &x);
            relu_in_place(&mut y);
            inputs.push(x);
            outputs.push(y.clone());
            x = upsample2(&y);
            conv_index += 1;
        }
        let (w, b) = self.params(weights, conv_index);
        let mut y = self.head.forward(w, b, &x);
        for v in &mut y.data {
            *v = v.tanh();
        }
        inputs.push(x);
        outputs.push(y);
        Trace { inputs, outputs }
    }

    /// Back-propagates `grad_output` (gradient with respect to the `tanh`
    /// output of the head) and accumulates parameter gradients into `grads`.
    pub(crate) fn backward(
        &self,
        trace: &Trace,
        grad_output: &Tensor,
        weights: &ModelWeights,
        grads: &mut [Vec<f64>],
    ) {
        let n_enc = self.encoder.len();
        let n_dec = self.decoder.len();
        let head_index = n_enc + 1 + n_dec;

        let y = trace.output();
        let mut g = grad_output.clone();
        for (gv, &yv) in g.data.iter_mut().zip(&y.data) {
            *gv *= 1.0 - yv * yv;
        }
        let mut g = self
            .conv_backward(&self.head, head_index, trace, &g, weights, grads, true)
            .expect("dx requested");

        for i in (0..n_dec).rev() {
            let idx = n_enc + 1 + i;
            let mut gi = upsample2_backward(&g);
            relu_backward_in_place(&mut gi, &trace.outputs[idx]);
            g = self
                .conv_backward(&self.decoder[i], idx, trace, &gi, weights, grads, true)
                .expect("dx requested");
        }

        relu_backward_in_place(&mut g, &trace.outputs[n_enc]);
        let gf = self
            .conv_backward(&self.fusion, n_enc, trace, &g, weights, grads, true)
            .expect("dx requested");
        // Only the encoder part of the fusion input carries gradient.
        let enc_len = self.config.encoder_out_channels() * gf.plane_len();
        let mut g = Tensor {
            channels: self.config.encoder_out_channels(),
            height: gf.height,
            width: gf.width,
            data: gf.data[..enc_len].to_vec(),
        };

        for i in (0..n_enc).rev() {
            relu_backward_in_place(&mut g, &trace.outputs[i]);
            match self.conv_backward(&self.encoder[i], i, trace, &g, weights, grads, i > 0) {
                Some(dx) => g = dx,
                None => break,
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward(
        &self,
        conv: &Conv2d,
        index: usize,
        trace: &Trace,
        grad: &Tensor,
        weights: &ModelWeights,
        grads: &mut [Vec<f64>],
        want_dx: bool,
    ) -> Option<Tensor> {
        let (gw, rest) = grads[2 * index..].split_at_mut(1);
        conv.backward(
            &weights.blocks[2 * index].data,
            &trace.inputs[index],
            grad,
            &mut gw[0],
            &mut rest[0],
            want_dx,
        )
    }
}
