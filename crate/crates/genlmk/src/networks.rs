//! The three learnable function families: the deformation encoder (4 conv
//! stages then 3 fully connected layers, zero-initialized head so training
//! starts from the undeformed template), a residual encoder-decoder
//! generator, and 70x70-receptive-field patch discriminators.

use crate::autodiff::{conv2d, conv_out_dim, upsample_nearest2, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

fn normal_init<F: Scalar, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> ArrayD<F> {
    let dist = Normal::new(0.0f64, std).unwrap();
    ArrayD::from_shape_simple_fn(IxDyn(shape), || F::from_f64(dist.sample(rng)))
}

/// Convolution layer with bias.
pub struct Conv2d<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub stride: usize,
    pub pad: usize,
}

impl<F: Scalar> Conv2d<F> {
    fn new<R: Rng>(
        rng: &mut R,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Conv2d {
            weight: Tensor::param(normal_init(rng, &[out_ch, in_ch, kernel, kernel], 0.02)),
            bias: Tensor::param(ArrayD::zeros(IxDyn(&[out_ch]))),
            stride,
            pad,
        }
    }

    fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        conv2d(x, &self.weight, self.stride, self.pad).add_channel_bias(&self.bias)
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Fully connected layer; weight stored `[in, out]`.
pub struct Linear<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> Linear<F> {
    fn new<R: Rng>(rng: &mut R, in_f: usize, out_f: usize) -> Self {
        Linear {
            weight: Tensor::param(normal_init(rng, &[in_f, out_f], 0.02)),
            bias: Tensor::param(ArrayD::zeros(IxDyn(&[out_f]))),
        }
    }

    fn zeros(in_f: usize, out_f: usize) -> Self {
        Linear {
            weight: Tensor::param(ArrayD::zeros(IxDyn(&[in_f, out_f]))),
            bias: Tensor::param(ArrayD::zeros(IxDyn(&[out_f]))),
        }
    }

    fn forward(&self, x: &Tensor<F>) -> Tensor<F> {
        x.matmul(&self.weight).add_row_bias(&self.bias)
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

// ---------------------------------------------------------------------------
// Deformation encoder.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DeformationNetSpec {
    /// Four stride-2, kernel-4 conv stages.
    pub conv_channels: [usize; 4],
    /// Three fully connected stages; the last must equal `2 * n_landmarks`
    /// and is linear (no nonlinearity), zero-initialized.
    pub fc_sizes: [usize; 3],
    /// `[height, width]` the encoder accepts.
    pub input_resolution: [usize; 2],
}

impl DeformationNetSpec {
    pub fn defaults_for(n_landmarks: usize) -> Self {
        DeformationNetSpec {
            conv_channels: [32, 64, 128, 256],
            fc_sizes: [512, 256, 2 * n_landmarks],
            input_resolution: [128, 128],
        }
    }

    pub fn n_landmarks(&self) -> usize {
        self.fc_sizes[2] / 2
    }

    fn flat_features(&self) -> usize {
        let [h, w] = self.input_resolution;
        let mut oh = h;
        let mut ow = w;
        for _ in 0..4 {
            oh = conv_out_dim(oh, 4, 2, 1);
            ow = conv_out_dim(ow, 4, 2, 1);
        }
        self.conv_channels[3] * oh * ow
    }

    fn validate(&self) -> Result<()> {
        if self.fc_sizes[2] % 2 != 0 || self.fc_sizes[2] == 0 {
            return Err(Error::Param(format!(
                "final fc size must be 2N, got {}",
                self.fc_sizes[2]
            )));
        }
        let [h, w] = self.input_resolution;
        if h < 16 || w < 16 {
            return Err(Error::Param(format!("input resolution too small: {h}x{w}")));
        }
        Ok(())
    }
}

/// The encoder predicting per-image template deformations.
pub struct DeformationNet<F: Scalar> {
    pub spec: DeformationNetSpec,
    convs: Vec<Conv2d<F>>,
    fcs: Vec<Linear<F>>,
}

impl<F: Scalar> DeformationNet<F> {
    pub fn new<R: Rng>(spec: &DeformationNetSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for &out_ch in &spec.conv_channels {
            convs.push(Conv2d::new(rng, in_ch, out_ch, 4, 2, 1));
            in_ch = out_ch;
        }
        let fcs = vec![
            Linear::new(rng, spec.flat_features(), spec.fc_sizes[0]),
            Linear::new(rng, spec.fc_sizes[0], spec.fc_sizes[1]),
            // Zero head: the network starts at delta = 0 (canonical template).
            Linear::zeros(spec.fc_sizes[1], spec.fc_sizes[2]),
        ];
        Ok(DeformationNet { spec: spec.clone(), convs, fcs })
    }

    /// `[b, 3, h, w] -> [b, n, 2]` deformations in normalized units.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = x.shape();
        let [h, w] = self.spec.input_resolution;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != h || shape[3] != w {
            return Err(Error::Shape(format!(
                "deformation net expects Bx3x{h}x{w}, got {shape:?}"
            )));
        }
        let slope = F::from_f64(LEAKY_SLOPE);
        let mut y = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(&y);
            if i > 0 {
                y = y.instance_norm(F::from_f64(NORM_EPS));
            }
            y = y.leaky_relu(slope);
        }
        let b = shape[0];
        let mut y = y.reshape(&[b, self.spec.flat_features()]);
        y = self.fcs[0].forward(&y).leaky_relu(slope);
        y = self.fcs[1].forward(&y).leaky_relu(slope);
        y = self.fcs[2].forward(&y);
        Ok(y.reshape(&[b, self.spec.n_landmarks(), 2]))
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("{prefix}.conv{i}.weight"), c.weight.clone()));
            out.push((format!("{prefix}.conv{i}.bias"), c.bias.clone()));
        }
        for (i, l) in self.fcs.iter().enumerate() {
            out.push((format!("{prefix}.fc{i}.weight"), l.weight.clone()));
            out.push((format!("{prefix}.fc{i}.bias"), l.bias.clone()));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum::<usize>()
            + self.fcs.iter().map(Linear::param_count).sum::<usize>()
    }
}

// ---------------------------------------------------------------------------
// Generator.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub base_channels: usize,
    pub n_res_blocks: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec { base_channels: 64, n_res_blocks: 6 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    /// Channel widths of the four kernel-4 conv stages (strides 2, 2, 2, 1),
    /// before the 1-channel stride-1 head.
    pub channels: [usize; 4],
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        DiscriminatorSpec { channels: [64, 128, 256, 512] }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq, Default)]
pub struct GanNetSpec {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

struct ResBlock<F: Scalar> {
    c1: Conv2d<F>,
    c2: Conv2d<F>,
}

/// Residual encoder-decoder translating between the two image domains;
/// spatial dimensions are preserved, output bounded to `[-1, 1]` by tanh.
pub struct ResnetGenerator<F: Scalar> {
    pub spec: GeneratorSpec,
    head: Conv2d<F>,
    down1: Conv2d<F>,
    down2: Conv2d<F>,
    blocks: Vec<ResBlock<F>>,
    up1: Conv2d<F>,
    up2: Conv2d<F>,
    tail: Conv2d<F>,
}

impl<F: Scalar> ResnetGenerator<F> {
    pub fn new<R: Rng>(spec: &GeneratorSpec, rng: &mut R) -> Self {
        let b = spec.base_channels;
        let blocks = (0..spec.n_res_blocks)
            .map(|_| ResBlock {
                c1: Conv2d::new(rng, 4 * b, 4 * b, 3, 1, 1),
                c2: Conv2d::new(rng, 4 * b, 4 * b, 3, 1, 1),
            })
            .collect();
        ResnetGenerator {
            spec: spec.clone(),
            head: Conv2d::new(rng, 3, b, 7, 1, 3),
            down1: Conv2d::new(rng, b, 2 * b, 3, 2, 1),
            down2: Conv2d::new(rng, 2 * b, 4 * b, 3, 2, 1),
            blocks,
            up1: Conv2d::new(rng, 4 * b, 2 * b, 3, 1, 1),
            up2: Conv2d::new(rng, 2 * b, b, 3, 1, 1),
            tail: Conv2d::new(rng, b, 3, 7, 1, 3),
        }
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!("generator expects Bx3xHxW, got {shape:?}")));
        }
        if shape[2] % 4 != 0 || shape[3] % 4 != 0 || shape[2] < 8 || shape[3] < 8 {
            return Err(Error::Shape(format!(
                "generator needs H, W divisible by 4 and >= 8, got {}x{}",
                shape[2], shape[3]
            )));
        }
        let eps = F::from_f64(NORM_EPS);
        let norm_relu = |t: Tensor<F>| t.instance_norm(eps).relu();
        let mut y = norm_relu(self.head.forward(x));
        y = norm_relu(self.down1.forward(&y));
        y = norm_relu(self.down2.forward(&y));
        for blk in &self.blocks {
            let r = norm_relu(blk.c1.forward(&y));
            let r = blk.c2.forward(&r).instance_norm(eps);
            y = y.add(&r);
        }
        y = norm_relu(self.up1.forward(&upsample_nearest2(&y)));
        y = norm_relu(self.up2.forward(&upsample_nearest2(&y)));
        Ok(self.tail.forward(&y).tanh())
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        let push = |name: String, c: &Conv2d<F>, out: &mut Vec<(String, Tensor<F>)>| {
            out.push((format!("{name}.weight"), c.weight.clone()));
            out.push((format!("{name}.bias"), c.bias.clone()));
        };
        push(format!("{prefix}.head"), &self.head, &mut out);
        push(format!("{prefix}.down1"), &self.down1, &mut out);
        push(format!("{prefix}.down2"), &self.down2, &mut out);
        for (i, blk) in self.blocks.iter().enumerate() {
            push(format!("{prefix}.block{i}.c1"), &blk.c1, &mut out);
            push(format!("{prefix}.block{i}.c2"), &blk.c2, &mut out);
        }
        push(format!("{prefix}.up1"), &self.up1, &mut out);
        push(format!("{prefix}.up2"), &self.up2, &mut out);
        push(format!("{prefix}.tail"), &self.tail, &mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params("g").iter().map(|(_, t)| t.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Patch discriminator.
// ---------------------------------------------------------------------------

/// Patch classifier emitting a real-valued score map (no output
/// nonlinearity; the loss applies the LSGAN targets).
pub struct PatchDiscriminator<F: Scalar> {
    pub spec: DiscriminatorSpec,
    convs: Vec<Conv2d<F>>,
    head: Conv2d<F>,
}

impl<F: Scalar> PatchDiscriminator<F> {
    pub fn new<R: Rng>(spec: &DiscriminatorSpec, rng: &mut R) -> Self {
        let strides = [2usize, 2, 2, 1];
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for (i, &out_ch) in spec.channels.iter().enumerate() {
            convs.push(Conv2d::new(rng, in_ch, out_ch, 4, strides[i], 1));
            in_ch = out_ch;
        }
        PatchDiscriminator {
            spec: spec.clone(),
            convs,
            head: Conv2d::new(rng, in_ch, 1, 4, 1, 1),
        }
    }

    /// Spatial size of the score map for an input of `h x w`, from the
    /// declared layer arithmetic (kernel 4, pad 1, strides 2,2,2,1,1).
    pub fn score_map_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let mut oh = h;
        let mut ow = w;
        for s in [2usize, 2, 2, 1, 1] {
            oh = conv_out_dim(oh, 4, s, 1);
            ow = conv_out_dim(ow, 4, s, 1);
        }
        (oh, ow)
    }

    pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::Shape(format!("discriminator expects Bx3xHxW, got {shape:?}")));
        }
        if shape[2] < 32 || shape[3] < 32 {
            return Err(Error::Shape(format!(
                "discriminator needs H, W >= 32, got {}x{}",
                shape[2], shape[3]
            )));
        }
        let slope = F::from_f64(LEAKY_SLOPE);
        let eps = F::from_f64(NORM_EPS);
        let mut y = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(&y);
            if i > 0 {
                y = y.instance_norm(eps);
            }
            y = y.leaky_relu(slope);
        }
        Ok(self.head.forward(&y))
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("{prefix}.conv{i}.weight"), c.weight.clone()));
            out.push((format!("{prefix}.conv{i}.bias"), c.bias.clone()));
        }
        out.push((format!("{prefix}.head.weight"), self.head.weight.clone()));
        out.push((format!("{prefix}.head.bias"), self.head.bias.clone()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv2d::param_count).sum::<usize>() + self.head.param_count()
    }
}
