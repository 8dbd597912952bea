use noisypairs_nn::Parameterized;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Fixed-size ring buffer of unit key vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyQueue {
    dim: usize,
    capacity: usize,
    data: Vec<f32>,
    next: usize,
}

impl KeyQueue {
    /// Starts filled with random unit vectors.
    pub fn random<R: Rng>(capacity: usize, dim: usize, rng: &mut R) -> Self {
        let mut data: Vec<f32> = (0..capacity * dim).map(|_| rng.sample(StandardNormal)).collect();
        for v in data.chunks_mut(dim.max(1)) {
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
            v.iter_mut().for_each(|x| *x /= n);
        }
        KeyQueue {
            dim,
            capacity,
            data,
            next: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Raw storage, `capacity × dim`, in slot order.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Overwrites the oldest entries with `keys` (`n × dim`).
    pub fn enqueue(&mut self, keys: &[f32]) -> Result<()> {
        if self.dim == 0 || keys.len() % self.dim != 0 {
            return Err(Error::Shape(format!("{} values for keys of dim {}", keys.len(), self.dim)));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        for k in keys.chunks(self.dim) {
            let slot = self.next * self.dim;
            self.data[slot..slot + self.dim].copy_from_slice(k);
            self.next = (self.next + 1) % self.capacity;
        }
        Ok(())
    }

    /// Entries from oldest to newest.
    pub fn fifo(&self) -> Vec<f32> {
        let split = self.next * self.dim;
        let mut out = self.data[split..].to_vec();
        out.extend_from_slice(&self.data[..split]);
        out
    }
}

/// `key ← m·key + (1−m)·query` over trainable parameters, elementwise.
pub fn momentum_update<E: Parameterized>(key: &mut E, query: &E, m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::InvalidArgument(format!("momentum {m} outside [0, 1)")));
    }
    let q = query.params();
    let k = key.params_mut();
    if q.len() != k.len() {
        return Err(Error::Shape(format!("{} query tensors, {} key tensors", q.len(), k.len())));
    }
    let (m, a) = (m as f32, (1.0 - m) as f32);
    for (kp, qp) in k.into_iter().zip(q) {
        if kp.shape != qp.shape || kp.name != qp.name {
            return Err(Error::Shape(format!("{} {:?} vs {} {:?}", kp.name, kp.shape, qp.name, qp.shape)));
        }
        if !qp.trainable {
            continue;
        }
        for (kv, &qv) in kp.value.iter_mut().zip(&qp.value) {
            *kv = m * *kv + a * qv;
        }
    }
    Ok(())
}

/// Query and key networks with the negative-key queue.
#[derive(Clone, Debug)]
pub struct MocoState<E> {
    pub query: E,
    pub key: E,
    pub queue: KeyQueue,
    pub tau: f64,
    pub momentum: f64,
}

impl<E: Parameterized + Clone> MocoState<E> {
    /// The key network starts as a copy of the query network.
    pub fn new<R: Rng>(query: E, queue_size: usize, dim: usize, tau: f64, momentum: f64, rng: &mut R) -> Result<Self> {
        super::info_nce::check_tau(tau)?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(MocoState {
            key: query.clone(),
            query,
            queue: KeyQueue::random(queue_size, dim, rng),
            tau,
            momentum,
        })
    }

    pub fn momentum_update(&mut self) -> Result<()> {
        momentum_update(&mut self.key, &self.query, self.momentum)
    }
}
