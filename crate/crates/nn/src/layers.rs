use rand::Rng;

use crate::gemm::gemm;
use crate::param::{Param, Parameterized};
use crate::{Mode, NnError, Result, Tensor};

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.mask = mode
            .records()
            .then(|| x.data().iter().map(|v| *v > 0.0).collect());
        y
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .take()
            .ok_or_else(|| NnError::NoCache("relu".into()))?;
        let mut dx = dy.clone();
        for (d, keep) in dx.data_mut().iter_mut().zip(mask) {
            if !keep {
                *d = 0.0;
            }
        }
        Ok(dx)
    }
}

/// 3×3 / stride 2 / pad 1 max pooling, as used in the ResNet stem.
#[derive(Clone, Debug, Default)]
pub struct MaxPool {
    argmax: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool {
    const K: usize = 3;
    const S: usize = 2;
    const P: usize = 1;

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let [n, c, h, w] = x.shape();
        let ho = (h + 2 * Self::P - Self::K) / Self::S + 1;
        let wo = (w + 2 * Self::P - Self::K) / Self::S + 1;
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut arg = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let src = &x.data()[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f32::NEG_INFINITY;
                    let mut best_idx = 0;
                    for ki in 0..Self::K {
                        for kj in 0..Self::K {
                            let iy = (oy * Self::S + ki) as isize - Self::P as isize;
                            let ix = (ox * Self::S + kj) as isize - Self::P as isize;
                            if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.data_mut()[(plane * ho + oy) * wo + ox] = best;
                    arg.push(plane * h * w + best_idx);
                }
            }
        }
        self.argmax = mode.records().then_some((arg, x.shape()));
        out
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let (arg, shape) = self
            .argmax
            .take()
            .ok_or_else(|| NnError::NoCache("maxpool".into()))?;
        let mut dx = Tensor::zeros(shape);
        for (g, idx) in dy.data().iter().zip(arg) {
            dx.data_mut()[idx] += g;
        }
        Ok(dx)
    }
}

/// Mean over the spatial axes; output shape `[n, c, 1, 1]`.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape();
    let hw = (h * w) as f32;
    let data = x
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().sum::<f32>() / hw)
        .collect();
    Tensor::from_vec([n, c, 1, 1], data).expect("pooled shape")
}

pub fn global_avg_pool_backward(dy: &Tensor, input_shape: [usize; 4]) -> Tensor {
    let [_, _, h, w] = input_shape;
    let hw = (h * w) as f32;
    let mut dx = Tensor::zeros(input_shape);
    for (plane, g) in dx.data_mut().chunks_mut(h * w).zip(dy.data()) {
        plane.iter_mut().for_each(|v| *v = g / hw);
    }
    dx
}

/// Fully connected layer on `[n, in, 1, 1]` tensors.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f32).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b = (0..outputs).map(|_| rng.random_range(-bound..bound)).collect();
        Linear {
            weight: Param::new(format!("{name}.weight"), vec![outputs, inputs], w),
            bias: Param::new(format!("{name}.bias"), vec![outputs], b),
            input: None,
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.shape[1], self.weight.shape[0])
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (inputs, outputs) = self.dims();
        let n = x.batch();
        if x.sample_len() != inputs {
            return Err(NnError::Shape(format!(
                "{}: expected {inputs} features, got {}",
                self.weight.name,
                x.sample_len()
            )));
        }
        let mut y = Tensor::zeros([n, outputs, 1, 1]);
        gemm(
            n,
            inputs,
            outputs,
            x.data(),
            false,
            &self.weight.value,
            true,
            y.data_mut(),
            false,
        );
        for row in y.data_mut().chunks_mut(outputs) {
            for (v, b) in row.iter_mut().zip(&self.bias.value) {
                *v += b;
            }
        }
        self.input = mode.records().then(|| x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let x = self
            .input
            .take()
            .ok_or_else(|| NnError::NoCache(self.weight.name.clone()))?;
        let (inputs, outputs) = self.dims();
        let n = x.batch();
        self.weight.ensure_grad();
        self.bias.ensure_grad();
        gemm(
            outputs,
            n,
            inputs,
            dy.data(),
            true,
            x.data(),
            false,
            &mut self.weight.grad,
            true,
        );
        for row in dy.data().chunks(outputs) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        gemm(
            n,
            outputs,
            inputs,
            dy.data(),
            false,
            &self.weight.value,
            false,
            dx.data_mut(),
            false,
        );
        Ok(dx)
    }
}

impl Parameterized for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// L2-normalises the channel vector at every (n, y, x) position.
///
/// Returns the normalised tensor and the per-position norms needed by
/// [`l2_normalize_backward`].
pub fn l2_normalize(x: &Tensor) -> (Tensor, Vec<f32>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut y = x.clone();
    let mut norms = vec![0.0; n * hw];
    for i in 0..n {
        let s = y.sample_mut(i);
        for p in 0..hw {
            let norm = (0..c)
                .map(|ch| (s[ch * hw + p] as f64).powi(2))
                .sum::<f64>()
                .sqrt()
                .max(1e-12) as f32;
            norms[i * hw + p] = norm;
            for ch in 0..c {
                s[ch * hw + p] /= norm;
            }
        }
    }
    (y, norms)
}

/// Backward pass of [`l2_normalize`]: `dx = (dy − y·(y·dy)) / ‖x‖`.
pub fn l2_normalize_backward(y: &Tensor, norms: &[f32], dy: &Tensor) -> Tensor {
    let [n, c, h, w] = y.shape();
    let hw = h * w;
    let mut dx = Tensor::zeros(y.shape());
    for i in 0..n {
        let ys = y.sample(i);
        let gs = dy.sample(i);
        let out = dx.sample_mut(i);
        for p in 0..hw {
            let dot: f32 = (0..c).map(|ch| ys[ch * hw + p] * gs[ch * hw + p]).sum();
            let norm = norms[i * hw + p];
            for ch in 0..c {
                out[ch * hw + p] = (gs[ch * hw + p] - ys[ch * hw + p] * dot) / norm;
            }
        }
    }
    dx
}

/// Source taps for one output coordinate of a half-pixel-centred bilinear resize.
fn resize_taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = src - i0 as f32;
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resize of every plane to `(out_h, out_w)` (align-corners = false).
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let [n, c, h, w] = x.shape();
    let ty = resize_taps(out_h, h);
    let tx = resize_taps(out_w, w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Adjoint of [`bilinear_resize`].
pub fn bilinear_resize_backward(dy: &Tensor, input_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = input_shape;
    let [_, _, out_h, out_w] = dy.shape();
    let ty = resize_taps(out_h, h);
    let tx = resize_taps(out_w, w);
    let mut dx = Tensor::zeros(input_shape);
    for plane in 0..n * c {
        let g = &dy.data()[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        let dst = &mut dx.data_mut()[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * out_w + ox];
                dst[y0 * w + x0] += v * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += v * (1.0 - fy) * fx;
                dst[y1 * w + x0] += v * fy * (1.0 - fx);
                dst[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
    }

    #[test]
    fn bilinear_backward_is_adjoint() {
        let x = rand_tensor([2, 3, 4, 5], 1);
        let g = rand_tensor([2, 3, 16, 20], 2);
        let y = bilinear_resize(&x, 16, 20);
        let gx = bilinear_resize_backward(&g, x.shape());
        assert!((dot(&y, &g) - dot(&x, &gx)).abs() < 1e-3);
    }

    #[test]
    fn bilinear_preserves_constants() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![3.0; 4]).unwrap();
        let y = bilinear_resize(&x, 8, 8);
        assert!(y.data().iter().all(|v| (*v - 3.0).abs() < 1e-6));
    }

    #[test]
    fn l2_normalize_gives_unit_vectors_and_correct_gradient() {
        let x = rand_tensor([2, 4, 2, 2], 5);
        let (y, norms) = l2_normalize(&x);
        for i in 0..2 {
            for p in 0..4 {
                let n: f32 = (0..4).map(|c| y.sample(i)[c * 4 + p].powi(2)).sum();
                assert!((n - 1.0).abs() < 1e-6);
            }
        }
        let probe = rand_tensor(x.shape(), 9);
        let dx = l2_normalize_backward(&y, &norms, &probe);
        let eps = 1e-3;
        for idx in [0usize, 3, 9, 20, 31] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (dot(&l2_normalize(&xp).0, &probe) - dot(&l2_normalize(&xm).0, &probe))
                / (2.0 * eps as f64);
            assert!((fd - dx.data()[idx] as f64).abs() < 1e-2);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::new("fc", 3, 2, &mut rng);
        let x = rand_tensor([4, 3, 1, 1], 6);
        let probe = rand_tensor([4, 2, 1, 1], 7);
        lin.zero_grad();
        lin.forward(&x, Mode::Train { record: true }).unwrap();
        let dx = lin.backward(&probe).unwrap();
        let eps = 1e-2;
        for idx in 0..12 {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fp = dot(&lin.forward(&xp, Mode::Eval).unwrap(), &probe);
            let fm = dot(&lin.forward(&xm, Mode::Eval).unwrap(), &probe);
            assert!(((fp - fm) / (2.0 * eps as f64) - dx.data()[idx] as f64).abs() < 1e-3);
        }
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 4.0, 2.0, 3.0]).unwrap();
        let mut pool = MaxPool::default();
        let y = pool.forward(&x, Mode::Train { record: true });
        assert_eq!(y.data(), &[4.0]);
        let dx = pool
            .backward(&Tensor::from_vec([1, 1, 1, 1], vec![2.0]).unwrap())
            .unwrap();
        assert_eq!(dx.data(), &[0.0, 2.0, 0.0, 0.0]);
    }
}
