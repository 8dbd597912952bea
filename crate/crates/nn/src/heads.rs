use rand::Rng;

use crate::batchnorm::BatchNorm2d;
use crate::conv::Conv2d;
use crate::layers::{bilinear_resize, bilinear_resize_backward, Linear, Relu};
use crate::param::{Param, Parameterized};
use crate::{Mode, Result, Tensor};

/// Two-layer MLP projection head (`fc → bn → relu → fc`). The batch norm
/// keeps hidden units from all dying at once, which otherwise leaves a
/// constant embedding that no gradient can move.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    fc1: Linear,
    bn: BatchNorm2d,
    relu: Relu,
    fc2: Linear,
}

impl ProjectionHead {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        ProjectionHead {
            fc1: Linear::new("head.0", inputs, hidden, rng),
            bn: BatchNorm2d::new("head.1", hidden),
            relu: Relu::default(),
            fc2: Linear::new("head.2", hidden, outputs, rng),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.fc1.forward(x, mode)?;
        let h = self.bn.forward(&h, mode)?;
        let h = self.relu.forward(&h, mode);
        self.fc2.forward(&h, mode)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let g = self.fc2.backward(dy)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.fc1.backward(&g)
    }
}

impl Parameterized for ProjectionHead {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc1.params();
        v.extend(self.bn.params());
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc1.params_mut();
        v.extend(self.bn.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }
}

/// Fully-convolutional scoring layer followed by bilinear upsampling to the
/// input resolution.
#[derive(Clone, Debug)]
pub struct SegmentationHead {
    score: Conv2d,
    grid_shape: Option<[usize; 4]>,
}

impl SegmentationHead {
    pub fn new<R: Rng>(inputs: usize, classes: usize, rng: &mut R) -> Self {
        let mut score = Conv2d::new("score", inputs, classes, 1, 1, 0, true, rng);
        // The scoring layer starts small so initial predictions are near uniform.
        score.weight.value.iter_mut().for_each(|w| *w *= 0.1);
        SegmentationHead {
            score,
            grid_shape: None,
        }
    }

    pub fn classes(&self) -> usize {
        self.score.out_channels()
    }

    /// Per-class scores on the feature grid.
    pub fn grid_logits(&mut self, features: &Tensor, mode: Mode) -> Result<Tensor> {
        let logits = self.score.forward(features, mode)?;
        self.grid_shape = Some(logits.shape());
        Ok(logits)
    }

    pub fn forward(&mut self, features: &Tensor, out_h: usize, out_w: usize, mode: Mode) -> Result<Tensor> {
        let logits = self.grid_logits(features, mode)?;
        Ok(bilinear_resize(&logits, out_h, out_w))
    }

    /// Backward from full-resolution logit gradients; returns the feature gradient.
    pub fn backward(&mut self, d_logits: &Tensor) -> Result<Tensor> {
        let shape = self
            .grid_shape
            .ok_or_else(|| crate::NnError::NoCache("segmentation head".into()))?;
        let g = bilinear_resize_backward(d_logits, shape);
        self.score.backward(&g)
    }
}

impl Parameterized for SegmentationHead {
    fn params(&self) -> Vec<&Param> {
        self.score.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.score.params_mut()
    }
}
