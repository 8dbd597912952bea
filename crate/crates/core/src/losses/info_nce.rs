use crate::error::{Error, Result};

/// Inputs whose L2 norm is further than this from 1 are rejected.
pub const NORM_TOLERANCE: f64 = 1e-4;

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
    }
}

pub(crate) fn check_unit(v: &[f32], what: &str) -> Result<()> {
    let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if (n - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{what} has norm {n}, expected 1")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Log-sum-exp with a max shift.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Loss and gradients of one InfoNCE term.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub d_q: Vec<f64>,
    pub d_k_plus: Vec<f64>,
    /// Row-major, one row per negative.
    pub d_negatives: Vec<f64>,
}

/// `-log(exp(q·k₊/τ) / Σᵢ exp(q·kᵢ/τ))` with `k₀ = k₊`. `negatives` holds K
/// row-major vectors of the same dimension as `q`. All inputs must be unit
/// vectors.
pub fn info_nce(q: &[f32], k_plus: &[f32], negatives: &[f32], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let dim = q.len();
    if k_plus.len() != dim || (dim > 0 && negatives.len() % dim != 0) {
        return Err(Error::Shape(format!(
            "query {dim}, positive {}, negatives {}",
            k_plus.len(),
            negatives.len()
        )));
    }
    check_unit(q, "query")?;
    check_unit(k_plus, "positive key")?;
    for (i, k) in negatives.chunks(dim.max(1)).enumerate() {
        check_unit(k, &format!("negative key {i}"))?;
    }
    Ok(info_nce_grad(q, k_plus, negatives, tau).loss)
}

/// Unchecked loss plus analytic gradients with respect to every input.
pub fn info_nce_grad(q: &[f32], k_plus: &[f32], negatives: &[f32], tau: f64) -> InfoNceGrad {
    let dim = q.len();
    let mut logits = vec![dot(q, k_plus) / tau];
    logits.extend(negatives.chunks(dim.max(1)).map(|k| dot(q, k) / tau));
    let lse = log_sum_exp(&logits);
    let loss = lse - logits[0];
    // dL/ds_i = p_i - [i = 0]
    let g: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &s)| (s - lse).exp() - f64::from(i == 0))
        .collect();
    let mut d_q = vec![0.0; dim];
    let mut d_k_plus = vec![0.0; dim];
    let mut d_negatives = vec![0.0; negatives.len()];
    for j in 0..dim {
        d_q[j] += g[0] * k_plus[j] as f64 / tau;
        d_k_plus[j] = g[0] * q[j] as f64 / tau;
    }
    for (i, k) in negatives.chunks(dim.max(1)).enumerate() {
        for j in 0..dim {
            d_q[j] += g[i + 1] * k[j] as f64 / tau;
            d_negatives[i * dim + j] = g[i + 1] * q[j] as f64 / tau;
        }
    }
    InfoNceGrad {
        loss,
        d_q,
        d_k_plus,
        d_negatives,
    }
}

/// Mean InfoNCE over a batch of queries (`n × dim`) with their positive keys,
/// sharing one bank of negatives. Returns the loss and `dL/dq`; keys receive
/// no gradient.
pub fn info_nce_batch(queries: &[f32], keys: &[f32], negatives: &[f32], dim: usize, tau: f64) -> Result<(f64, Vec<f32>)> {
    check_tau(tau)?;
    if dim == 0 || queries.len() != keys.len() || queries.len() % dim != 0 || negatives.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "queries {}, keys {}, negatives {} with dim {dim}",
            queries.len(),
            keys.len(),
            negatives.len()
        )));
    }
    let n = queries.len() / dim;
    let mut grad = vec![0f32; queries.len()];
    let mut total = 0.0;
    let mut logits = Vec::with_capacity(1 + negatives.len() / dim);
    for i in 0..n {
        let q = &queries[i * dim..(i + 1) * dim];
        logits.clear();
        logits.push(dot(q, &keys[i * dim..(i + 1) * dim]) / tau);
        logits.extend(negatives.chunks(dim).map(|k| dot(q, k) / tau));
        let lse = log_sum_exp(&logits);
        total += lse - logits[0];
        let gq = &mut grad[i * dim..(i + 1) * dim];
        let scale = 1.0 / (n as f64 * tau);
        let mut acc = vec![0f64; dim];
        let g0 = (logits[0] - lse).exp() - 1.0;
        for (a, &k) in acc.iter_mut().zip(&keys[i * dim..(i + 1) * dim]) {
            *a += g0 * k as f64;
        }
        for (k, &s) in negatives.chunks(dim).zip(&logits[1..]) {
            let p = (s - lse).exp();
            if p > 1e-300 {
                for (a, &kv) in acc.iter_mut().zip(k) {
                    *a += p * kv as f64;
                }
            }
        }
        for (g, a) in gq.iter_mut().zip(acc) {
            *g = (a * scale) as f32;
        }
    }
    Ok((total / n as f64, grad))
}
