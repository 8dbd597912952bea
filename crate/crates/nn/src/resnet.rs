//! Residual encoder with the 18-layer basic-block topology.
//!
//! The stem, channel widths and per-stage strides are configurable so the same
//! topology can run at full ImageNet width or at a reduced desk-scale width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::batchnorm::BatchNorm2d;
use crate::conv::Conv2d;
use crate::layers::{MaxPool, Relu};
use crate::param::{Param, Parameterized};
use crate::{Mode, NnError, Result, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub widths: [usize; 4],
    pub blocks: [usize; 4],
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_pool: bool,
    pub stage_strides: [usize; 4],
}

impl EncoderConfig {
    /// Standard 18-layer configuration: output stride 32, 512 channels.
    pub fn resnet18() -> Self {
        EncoderConfig {
            in_channels: 3,
            widths: [64, 128, 256, 512],
            blocks: [2, 2, 2, 2],
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            stage_strides: [1, 2, 2, 2],
        }
    }

    /// Same depth at reduced width and output stride 8, so a 64×64 input
    /// yields an 8×8 feature grid.
    pub fn desk() -> Self {
        EncoderConfig {
            in_channels: 3,
            widths: [16, 32, 64, 64],
            blocks: [2, 2, 2, 2],
            stem_kernel: 3,
            stem_stride: 2,
            stem_pool: false,
            stage_strides: [1, 2, 2, 1],
        }
    }

    pub fn output_stride(&self) -> usize {
        let pool = if self.stem_pool { 2 } else { 1 };
        self.stem_stride * pool * self.stage_strides.iter().product::<usize>()
    }

    pub fn feature_dim(&self) -> usize {
        self.widths[3]
    }

    /// Side of the feature grid for a square input, if the input divides evenly.
    pub fn grid_side(&self, input: usize) -> Option<usize> {
        let s = self.output_stride();
        (input % s == 0 && input >= s).then_some(input / s)
    }
}

#[derive(Clone, Debug)]
struct Downsample {
    conv: Conv2d,
    bn: BatchNorm2d,
}

#[derive(Clone, Debug)]
pub struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    relu1: Relu,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<Downsample>,
    relu_out: Relu,
}

impl BasicBlock {
    fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, stride: usize, rng: &mut R) -> Self {
        let downsample = (stride != 1 || inputs != outputs).then(|| Downsample {
            conv: Conv2d::new(&format!("{name}.downsample.0"), inputs, outputs, 1, stride, 0, false, rng),
            bn: BatchNorm2d::new(&format!("{name}.downsample.1"), outputs),
        });
        BasicBlock {
            conv1: Conv2d::new(&format!("{name}.conv1"), inputs, outputs, 3, stride, 1, false, rng),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), outputs),
            relu1: Relu::default(),
            conv2: Conv2d::new(&format!("{name}.conv2"), outputs, outputs, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), outputs),
            downsample,
            relu_out: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.conv1.forward(x, mode)?;
        let h = self.bn1.forward(&h, mode)?;
        let h = self.relu1.forward(&h, mode);
        let h = self.conv2.forward(&h, mode)?;
        let mut h = self.bn2.forward(&h, mode)?;
        match &mut self.downsample {
            Some(ds) => {
                let s = ds.conv.forward(x, mode)?;
                h.add_assign(&ds.bn.forward(&s, mode)?)?;
            }
            None => h.add_assign(x)?,
        }
        Ok(self.relu_out.forward(&h, mode))
    }

    fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let d_sum = self.relu_out.backward(dy)?;
        let g = self.bn2.backward(&d_sum)?;
        let g = self.conv2.backward(&g)?;
        let g = self.relu1.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let mut dx = self.conv1.backward(&g)?;
        match &mut self.downsample {
            Some(ds) => {
                let s = ds.bn.backward(&d_sum)?;
                dx.add_assign(&ds.conv.backward(&s)?)?;
            }
            None => dx.add_assign(&d_sum)?,
        }
        Ok(dx)
    }
}

impl Parameterized for BasicBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        if let Some(ds) = &self.downsample {
            v.extend(ds.conv.params());
            v.extend(ds.bn.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some(ds) = &mut self.downsample {
            v.extend(ds.conv.params_mut());
            v.extend(ds.bn.params_mut());
        }
        v
    }
}

/// Residual encoder returning the spatial feature map that precedes global
/// average pooling.
#[derive(Clone, Debug)]
pub struct ResNetEncoder {
    config: EncoderConfig,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stem_relu: Relu,
    stem_pool: Option<MaxPool>,
    blocks: Vec<BasicBlock>,
}

impl ResNetEncoder {
    pub fn new<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        if config.blocks.iter().any(|b| *b == 0) || config.widths.iter().any(|w| *w == 0) {
            return Err(NnError::Config("every stage needs at least one block and channel".into()));
        }
        let stem_conv = Conv2d::new(
            "conv1",
            config.in_channels,
            config.widths[0],
            config.stem_kernel,
            config.stem_stride,
            config.stem_kernel / 2,
            false,
            rng,
        );
        let mut blocks = Vec::new();
        let mut inputs = config.widths[0];
        for stage in 0..4 {
            for b in 0..config.blocks[stage] {
                let stride = if b == 0 { config.stage_strides[stage] } else { 1 };
                let name = format!("layer{}.{}", stage + 1, b);
                blocks.push(BasicBlock::new(&name, inputs, config.widths[stage], stride, rng));
                inputs = config.widths[stage];
            }
        }
        Ok(ResNetEncoder {
            stem_bn: BatchNorm2d::new("bn1", config.widths[0]),
            stem_relu: Relu::default(),
            stem_pool: config.stem_pool.then(MaxPool::default),
            stem_conv,
            blocks,
            config,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.stem_conv.forward(x, mode)?;
        let h = self.stem_bn.forward(&h, mode)?;
        let mut h = self.stem_relu.forward(&h, mode);
        if let Some(pool) = &mut self.stem_pool {
            h = pool.forward(&h, mode);
        }
        for block in &mut self.blocks {
            h = block.forward(&h, mode)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mut g = dy.clone();
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(&g)?;
        }
        if let Some(pool) = &mut self.stem_pool {
            g = pool.backward(&g)?;
        }
        let g = self.stem_relu.backward(&g)?;
        let g = self.stem_bn.backward(&g)?;
        self.stem_conv.backward(&g)
    }
}

impl Parameterized for ResNetEncoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.stem_conv.params();
        v.extend(self.stem_bn.params());
        for b in &self.blocks {
            v.extend(b.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.stem_conv.params_mut();
        v.extend(self.stem_bn.params_mut());
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v
    }
}
