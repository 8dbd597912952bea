use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::gemm::gemm;
use crate::param::{Param, Parameterized};
use crate::{Mode, NnError, Result, Tensor};

/// 2-D convolution with square kernels, computed through im2col + sgemm.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    /// Patch matrices, one per chunk of samples.
    cols: Vec<Vec<f32>>,
    in_shape: [usize; 4],
    out_hw: (usize, usize),
}

impl Conv2d {
    /// Kaiming-normal (fan-out, ReLU gain) initialisation, no bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_out = (out_channels * kernel * kernel) as f32;
        let std = (2.0 / fan_out).sqrt();
        let normal = Normal::new(0.0f32, std).expect("valid std");
        let count = out_channels * in_channels * kernel * kernel;
        let w: Vec<f32> = (0..count).map(|_| normal.sample(rng)).collect();
        Conv2d {
            weight: Param::new(
                format!("{name}.weight"),
                vec![out_channels, in_channels, kernel, kernel],
                w,
            ),
            bias: bias.then(|| {
                Param::new(
                    format!("{name}.bias"),
                    vec![out_channels],
                    vec![0.0; out_channels],
                )
            }),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Writes the patch matrix of one sample into columns
    /// `[offset, offset + ho·wo)` of `cols`, whose rows are `row_stride` long.
    #[allow(clippy::too_many_arguments)]
    fn im2col(
        &self,
        x: &[f32],
        (h, w): (usize, usize),
        (ho, wo): (usize, usize),
        cols: &mut [f32],
        row_stride: usize,
        offset: usize,
    ) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let hw_out = ho * wo;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let start = row * row_stride + offset;
                    let dst = &mut cols[start..start + hw_out];
                    for oy in 0..ho {
                        let iy = oy as isize * s - p + ki as isize;
                        let line = &mut dst[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            line.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s - p + kj as isize;
                            *v = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(
        &self,
        cols: &[f32],
        (h, w): (usize, usize),
        (ho, wo): (usize, usize),
        row_stride: usize,
        offset: usize,
        dx: &mut [f32],
    ) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let hw_out = ho * wo;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let start = row * row_stride + offset;
                    let src = &cols[start..start + hw_out];
                    for oy in 0..ho {
                        let iy = oy as isize * s - p + ki as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..wo {
                            let ix = ox as isize * s - p + kj as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let [n, c, h, w] = x.shape();
        if c != self.in_channels {
            return Err(NnError::Shape(format!(
                "{}: expected {} input channels, got {}",
                self.weight.name, self.in_channels, c
            )));
        }
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(NnError::Shape(format!(
                "{}: input {}x{} smaller than kernel",
                self.weight.name, h, w
            )));
        }
        let (ho, wo) = self.output_hw(h, w);
        let rows = self.col_rows();
        let hw_out = ho * wo;
        let mut out = Tensor::zeros([n, self.out_channels, ho, wo]);
        let mut cached = Vec::new();
        for chunk in chunks(n, hw_out) {
            let total = chunk.len() * hw_out;
            let mut cols = vec![0.0; rows * total];
            for (j, i) in chunk.clone().enumerate() {
                self.im2col(x.sample(i), (h, w), (ho, wo), &mut cols, total, j * hw_out);
            }
            // (out × rows) · (rows × chunk·hw)
            let mut y = vec![0.0; self.out_channels * total];
            gemm(
                self.out_channels,
                rows,
                total,
                &self.weight.value,
                false,
                &cols,
                false,
                &mut y,
                false,
            );
            for (j, i) in chunk.enumerate() {
                let dst = out.sample_mut(i);
                for oc in 0..self.out_channels {
                    let src = &y[oc * total + j * hw_out..oc * total + (j + 1) * hw_out];
                    let d = &mut dst[oc * hw_out..(oc + 1) * hw_out];
                    match &self.bias {
                        Some(b) => {
                            let bv = b.value[oc];
                            for (o, v) in d.iter_mut().zip(src) {
                                *o = v + bv;
                            }
                        }
                        None => d.copy_from_slice(src),
                    }
                }
            }
            if mode.records() {
                cached.push(cols);
            }
        }
        self.cache = mode.records().then_some(ConvCache {
            cols: cached,
            in_shape: x.shape(),
            out_hw: (ho, wo),
        });
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| NnError::NoCache(self.weight.name.clone()))?;
        let [n, _, h, w] = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        if dy.shape() != [n, self.out_channels, ho, wo] {
            return Err(NnError::Shape(format!(
                "{}: gradient shape {:?} does not match output",
                self.weight.name,
                dy.shape()
            )));
        }
        let rows = self.col_rows();
        let hw_out = ho * wo;
        self.weight.ensure_grad();
        if let Some(b) = &mut self.bias {
            b.ensure_grad();
        }
        let mut dx = Tensor::zeros(cache.in_shape);
        for (chunk, cols) in chunks(n, hw_out).zip(&cache.cols) {
            let total = chunk.len() * hw_out;
            // Gather the gradient into (out × chunk·hw) to match the column layout.
            let mut g = vec![0.0; self.out_channels * total];
            for (j, i) in chunk.clone().enumerate() {
                let src = dy.sample(i);
                for oc in 0..self.out_channels {
                    g[oc * total + j * hw_out..oc * total + (j + 1) * hw_out]
                        .copy_from_slice(&src[oc * hw_out..(oc + 1) * hw_out]);
                }
            }
            gemm(
                self.out_channels,
                total,
                rows,
                &g,
                false,
                cols,
                true,
                &mut self.weight.grad,
                true,
            );
            if let Some(b) = &mut self.bias {
                for oc in 0..self.out_channels {
                    b.grad[oc] += g[oc * total..(oc + 1) * total].iter().sum::<f32>();
                }
            }
            let mut dcols = vec![0.0; rows * total];
            gemm(
                rows,
                self.out_channels,
                total,
                &self.weight.value,
                true,
                &g,
                false,
                &mut dcols,
                false,
            );
            for (j, i) in chunk.enumerate() {
                self.col2im(&dcols, (h, w), (ho, wo), total, j * hw_out, dx.sample_mut(i));
            }
        }
        Ok(dx)
    }
}

/// Splits `n` samples into runs whose patch matrices have roughly
/// `TARGET_COLUMNS` columns, small enough to stay cache friendly.
fn chunks(n: usize, hw_out: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    const TARGET_COLUMNS: usize = 2048;
    let per = (TARGET_COLUMNS / hw_out.max(1)).max(1);
    (0..n).step_by(per).map(move |s| s..(s + per).min(n))
}

impl Parameterized for Conv2d {
    fn params(&self) -> Vec<&Param> {
        let mut v = vec![&self.weight];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn direct_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let [n, c, h, w] = x.shape();
        let (ho, wo) = conv.output_hw(h, w);
        let k = conv.kernel;
        let mut out = Tensor::zeros([n, conv.out_channels, ho, wo]);
        let ws = &conv.weight.value;
        for i in 0..n {
            for oc in 0..conv.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[oc]);
                        for ic in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * conv.stride + ki) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kj) as isize - conv.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += ws[((oc * c + ic) * k + ki) * k + kj]
                                            * x.at(i, ic, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        out.sample_mut(i)[(oc * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, s, p) in [(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3)] {
            let mut conv = Conv2d::new("c", 2, 3, k, s, p, true, &mut rng);
            conv.bias.as_mut().unwrap().value = vec![0.1, -0.2, 0.3];
            let x = random_tensor([2, 2, 9, 8], &mut rng);
            let got = conv.forward(&x, Mode::Eval).unwrap();
            let want = direct_conv(&conv, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-5, "k={k} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = Conv2d::new("c", 2, 2, 3, 2, 1, true, &mut rng);
        let x = random_tensor([2, 2, 5, 5], &mut rng);
        let probe = {
            let y = conv.forward(&x, Mode::Eval).unwrap();
            random_tensor(y.shape(), &mut rng)
        };
        let objective = |conv: &mut Conv2d, x: &Tensor| -> f64 {
            let y = conv.forward(x, Mode::Eval).unwrap();
            y.data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        conv.zero_grad();
        conv.forward(&x, Mode::Train { record: true }).unwrap();
        let dx = conv.backward(&probe).unwrap();
        let eps = 1e-2f32;
        for idx in [0usize, 5, 17, 30] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (objective(&mut conv, &xp) - objective(&mut conv, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx.data()[idx] as f64).abs() < 1e-3, "dx[{idx}]");
        }
        for idx in [0usize, 7, 20, 35] {
            let orig = conv.weight.value[idx];
            conv.weight.value[idx] = orig + eps;
            let fp = objective(&mut conv, &x);
            conv.weight.value[idx] = orig - eps;
            let fm = objective(&mut conv, &x);
            conv.weight.value[idx] = orig;
            let fd = (fp - fm) / (2.0 * eps as f64);
            assert!((fd - conv.weight.grad[idx] as f64).abs() < 1e-3, "dw[{idx}]");
        }
    }
}
