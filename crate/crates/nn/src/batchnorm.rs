use crate::param::{Param, Parameterized};
use crate::{Mode, NnError, Result, Tensor};

const EPS: f32 = 1e-5;

/// Per-channel batch normalisation over (N, H, W).
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f32,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
struct BnCache {
    x_hat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(format!("{name}.weight"), vec![channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.bias"), vec![channels], vec![0.0; channels]),
            running_mean: Param::buffer(
                format!("{name}.running_mean"),
                vec![channels],
                vec![0.0; channels],
            ),
            running_var: Param::buffer(
                format!("{name}.running_var"),
                vec![channels],
                vec![1.0; channels],
            ),
            momentum: 0.1,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        if c != self.channels() {
            return Err(NnError::Shape(format!(
                "{}: expected {} channels, got {c}",
                self.gamma.name,
                self.channels()
            )));
        }
        let hw = h * w;
        let count = n * hw;
        let mut out = Tensor::zeros(x.shape());
        match mode {
            Mode::Eval => {
                for ch in 0..c {
                    let inv = 1.0 / (self.running_var.value[ch] + EPS).sqrt();
                    let (g, b, m) = (self.gamma.value[ch], self.beta.value[ch], self.running_mean.value[ch]);
                    for i in 0..n {
                        let off = (i * c + ch) * hw;
                        let src = &x.data()[off..off + hw];
                        let dst = &mut out.data_mut()[off..off + hw];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = (s - m) * inv * g + b;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train { record } => {
                if count < 2 {
                    return Err(NnError::Shape(format!(
                        "{}: batch statistics need more than one value per channel",
                        self.gamma.name
                    )));
                }
                let mut x_hat = Tensor::zeros(x.shape());
                let mut inv_stds = vec![0.0; c];
                for ch in 0..c {
                    let mut sum = 0.0f64;
                    let mut sq = 0.0f64;
                    for i in 0..n {
                        let off = (i * c + ch) * hw;
                        for &v in &x.data()[off..off + hw] {
                            sum += v as f64;
                            sq += (v as f64) * (v as f64);
                        }
                    }
                    let mean = sum / count as f64;
                    let var = (sq / count as f64 - mean * mean).max(0.0);
                    let inv = 1.0 / (var as f32 + EPS).sqrt();
                    inv_stds[ch] = inv;
                    let mean = mean as f32;
                    let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                    for i in 0..n {
                        let off = (i * c + ch) * hw;
                        for k in off..off + hw {
                            let xh = (x.data()[k] - mean) * inv;
                            x_hat.data_mut()[k] = xh;
                            out.data_mut()[k] = xh * g + b;
                        }
                    }
                    let unbiased = var as f32 * count as f32 / (count - 1) as f32;
                    let m = self.momentum;
                    self.running_mean.value[ch] = (1.0 - m) * self.running_mean.value[ch] + m * mean;
                    self.running_var.value[ch] = (1.0 - m) * self.running_var.value[ch] + m * unbiased;
                }
                self.cache = record.then_some(BnCache {
                    x_hat,
                    inv_std: inv_stds,
                });
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NnError::NoCache(self.gamma.name.clone()))?;
        let [n, c, h, w] = dy.shape();
        if cache.x_hat.shape() != dy.shape() {
            return Err(NnError::Shape(format!("{}: gradient shape mismatch", self.gamma.name)));
        }
        let hw = h * w;
        let count = (n * hw) as f32;
        self.gamma.ensure_grad();
        self.beta.ensure_grad();
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_dy = 0.0f32;
            let mut sum_dy_xh = 0.0f32;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for k in off..off + hw {
                    sum_dy += dy.data()[k];
                    sum_dy_xh += dy.data()[k] * cache.x_hat.data()[k];
                }
            }
            self.gamma.grad[ch] += sum_dy_xh;
            self.beta.grad[ch] += sum_dy;
            let scale = self.gamma.value[ch] * cache.inv_std[ch] / count;
            for i in 0..n {
                let off = (i * c + ch) * hw;
                for k in off..off + hw {
                    dx.data_mut()[k] = scale
                        * (count * dy.data()[k] - sum_dy - cache.x_hat.data()[k] * sum_dy_xh);
                }
            }
        }
        Ok(dx)
    }
}

impl Parameterized for BatchNorm2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}
