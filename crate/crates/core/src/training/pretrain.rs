use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use noisypairs_nn::{
    cosine_lr, global_avg_pool, global_avg_pool_backward, l2_normalize, l2_normalize_backward, Mode, Param,
    Parameterized, ProjectionHead, ResNetEncoder, Sgd, Tensor,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::{ExperimentConfig, LossKind};
use super::data::{load_pretrain_data, PretrainData};
use crate::error::{Error, IoContext, Result};
use crate::losses::{dense_batch, downsample_label, grads_to_tensor, info_nce_batch, DenseKind, FeatureMap, MocoState};
use crate::pairing::{append_pair_log, PairBatch, PairLoader, PairRule};
use crate::raster::{derive_seed, write_atomic};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const VAL_LOG_FILE: &str = "val_log.csv";

/// Encoder, pooling and projection head with unit-normalised output.
#[derive(Clone, Debug)]
pub struct MocoNet {
    pub encoder: ResNetEncoder,
    pub head: ProjectionHead,
    feature_shape: Option<[usize; 4]>,
    normed: Option<(Tensor, Vec<f32>)>,
}

impl MocoNet {
    pub fn new(encoder: ResNetEncoder, head: ProjectionHead) -> Self {
        MocoNet {
            encoder,
            head,
            feature_shape: None,
            normed: None,
        }
    }

    /// Embeddings of shape `[n, dim, 1, 1]`.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let f = self.encoder.forward(x, mode)?;
        self.feature_shape = Some(f.shape());
        let z = self.head.forward(&global_avg_pool(&f), mode)?;
        let (y, norms) = l2_normalize(&z);
        if mode.records() {
            self.normed = Some((y.clone(), norms));
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor) -> Result<()> {
        let (y, norms) = self
            .normed
            .take()
            .ok_or_else(|| Error::Missing("no recorded forward pass".into()))?;
        let shape = self
            .feature_shape
            .ok_or_else(|| Error::Missing("no recorded forward pass".into()))?;
        let dz = l2_normalize_backward(&y, &norms, dy);
        let dp = self.head.backward(&dz)?;
        self.encoder.backward(&global_avg_pool_backward(&dp, shape))?;
        Ok(())
    }
}

impl Parameterized for MocoNet {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.head.params_mut());
        v
    }
}

/// Runs the key network on a shuffled batch split into groups, so batch
/// statistics never see a whole batch in its original order, then restores
/// the original order.
fn shuffled_keys(net: &mut MocoNet, x: &Tensor, groups: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = x.batch();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut shuffled = Tensor::zeros(x.shape());
    for (i, &p) in perm.iter().enumerate() {
        shuffled.sample_mut(i).copy_from_slice(x.sample(p));
    }
    let groups = groups.clamp(1, n / 2).max(1);
    let mut outs = Vec::with_capacity(groups);
    for g in 0..groups {
        let (lo, hi) = (g * n / groups, (g + 1) * n / groups);
        outs.push(net.forward(&shuffled.slice_batch(lo..hi), Mode::Train { record: false })?);
    }
    let out = Tensor::concat_batch(&outs.iter().collect::<Vec<_>>())?;
    let mut keys = Tensor::zeros(out.shape());
    for (i, &p) in perm.iter().enumerate() {
        keys.sample_mut(p).copy_from_slice(out.sample(i));
    }
    Ok(keys)
}

enum Model {
    Moco(Box<MocoState<MocoNet>>),
    Dense { encoder: ResNetEncoder, kind: DenseKind },
}

impl Model {
    fn encoder(&self) -> &ResNetEncoder {
        match self {
            Model::Moco(s) => &s.query.encoder,
            Model::Dense { encoder, .. } => encoder,
        }
    }

    fn trainable(&mut self) -> Vec<&mut Param> {
        match self {
            Model::Moco(s) => s.query.params_mut(),
            Model::Dense { encoder, .. } => encoder.params_mut(),
        }
    }
}

fn dense_labels(batch: &PairBatch, d: usize) -> Result<(Vec<crate::losses::DenseLabelGrid>, Vec<crate::losses::DenseLabelGrid>)> {
    let a = batch.labels_a.iter().map(|l| downsample_label(l, d)).collect::<Result<_>>()?;
    let b = batch.labels_b.iter().map(|l| downsample_label(l, d)).collect::<Result<_>>()?;
    Ok((a, b))
}

/// Forward (and, when `train`, backward) of the dense objective on one batch.
fn dense_pass(encoder: &mut ResNetEncoder, kind: DenseKind, batch: &PairBatch, tau: f64, train: bool) -> Result<f64> {
    let n = batch.len();
    let x = Tensor::concat_batch(&[&batch.views_a, &batch.views_b])?;
    let mode = if train { Mode::Train { record: true } } else { Mode::Eval };
    let f = encoder.forward(&x, mode)?;
    let d = f.height();
    let (y, norms) = l2_normalize(&f);
    let maps = (0..2 * n).map(|i| FeatureMap::from_tensor(&y, i)).collect::<Result<Vec<_>>>()?;
    let (la, lb) = dense_labels(batch, d)?;
    let (loss, ga, gb) = dense_batch(kind, &maps[..n], &maps[n..], &la, &lb, tau)?;
    if train && loss.is_finite() {
        let grads: Vec<Vec<f64>> = ga.into_iter().chain(gb).collect();
        let dy = l2_normalize_backward(&y, &norms, &grads_to_tensor(&grads, y.shape())?);
        encoder.zero_grad();
        encoder.backward(&dy)?;
    }
    Ok(loss)
}

fn moco_train_step(state: &mut MocoState<MocoNet>, batch: &PairBatch, groups: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let q = state.query.forward(&batch.views_a, Mode::Train { record: true })?;
    let k = shuffled_keys(&mut state.key, &batch.views_b, groups, rng)?;
    let dim = q.sample_len();
    let (loss, dq) = info_nce_batch(q.data(), k.data(), state.queue.as_slice(), dim, state.tau)?;
    if loss.is_finite() {
        state.query.zero_grad();
        state.query.backward(&Tensor::from_vec(q.shape(), dq)?)?;
        state.queue.enqueue(k.data())?;
    }
    Ok(loss)
}

fn moco_val_loss(state: &mut MocoState<MocoNet>, batch: &PairBatch) -> Result<f64> {
    let q = state.query.forward(&batch.views_a, Mode::Eval)?;
    let k = state.key.forward(&batch.views_b, Mode::Eval)?;
    let dim = q.sample_len();
    Ok(info_nce_batch(q.data(), k.data(), state.queue.as_slice(), dim, state.tau)?.0)
}

/// Per-epoch summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub history: Vec<EpochStats>,
}

pub fn pretrain(config: &ExperimentConfig, out_dir: &Path) -> Result<PretrainOutcome> {
    config.validate()?;
    let data = load_pretrain_data(config)?;
    pretrain_with_data(config, &data, out_dir)
}

/// Trains the configured objective, evaluates it on the noise-free
/// validation pairs after every epoch and keeps the weights with the lowest
/// validation loss in `out_dir/best.ckpt`. A non-finite loss aborts with
/// `Error::Diverged`; the last saved checkpoint stays on disk.
pub fn pretrain_with_data(config: &ExperimentConfig, data: &PretrainData, out_dir: &Path) -> Result<PretrainOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir).at(out_dir)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[1]));
    let encoder = ResNetEncoder::new(config.encoder.clone(), &mut init_rng)?;
    let mut model = match config.loss {
        LossKind::Moco => {
            let m = &config.moco;
            let head = ProjectionHead::new(config.encoder.feature_dim(), m.proj_hidden, m.proj_dim, &mut init_rng);
            Model::Moco(Box::new(MocoState::new(
                MocoNet::new(encoder, head),
                m.queue_size,
                m.proj_dim,
                m.tau,
                m.momentum,
                &mut init_rng,
            )?))
        }
        LossKind::WithinImage => Model::Dense {
            encoder,
            kind: DenseKind::Within,
        },
        LossKind::CrossImage => Model::Dense {
            encoder,
            kind: DenseKind::Cross,
        },
    };

    let batch_size = config.pretrain.batch_size.min(data.train.len());
    let train = PairLoader {
        sources: &data.train,
        rule: data.rule,
        augment: config.pretrain_augment(),
        batch_size,
        seed: derive_seed(config.seed, &[2]),
        drop_last: true,
    };
    let val_rule = match data.rule {
        PairRule::Vts { mode, .. } => PairRule::Vts { r_pairs: 0.0, mode },
        rule => rule,
    };
    let val = PairLoader {
        sources: &data.val,
        rule: val_rule,
        augment: config.pretrain_augment(),
        batch_size: config.pretrain.batch_size,
        seed: derive_seed(config.seed, &[3]),
        drop_last: false,
    };
    if train.num_batches() == 0 || batch_size < 2 {
        return Err(Error::InvalidArgument(format!("{} training pairs are too few", data.train.len())));
    }
    if val.num_batches() == 0 {
        return Err(Error::InvalidArgument("no validation pairs".into()));
    }

    let total_steps = config.pretrain.epochs * train.num_batches();
    let mut sgd = Sgd::new(config.pretrain.optim);
    let mut key_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[4]));
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let mut train_log = String::from("epoch,step,loss,lr\n");
    let mut val_log = String::from("epoch,train_loss,val_loss,lr,seconds\n");
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut step = 0usize;

    for epoch in 0..config.pretrain.epochs {
        let start = Instant::now();
        if config.pretrain.log_pairs {
            append_pair_log(&out_dir.join("pairs.csv"), epoch, &train.epoch_plan(epoch)?)?;
        }
        let mut epoch_loss = 0.0;
        let mut lr = 0.0;
        for b in 0..train.num_batches() {
            let batch = train.batch(epoch, b)?;
            lr = cosine_lr(config.pretrain.optim.lr, step, total_steps);
            let loss = match &mut model {
                Model::Moco(state) => moco_train_step(state, &batch, config.moco.shuffle_groups, &mut key_rng)?,
                Model::Dense { encoder, kind } => dense_pass(encoder, *kind, &batch, config.pretrain.dense_tau, true)?,
            };
            if !loss.is_finite() {
                write_atomic(&out_dir.join(TRAIN_LOG_FILE), train_log.as_bytes())?;
                return Err(Error::Diverged { epoch, step, loss });
            }
            sgd.step(model.trainable(), lr);
            if let Model::Moco(state) = &mut model {
                state.momentum_update()?;
            }
            let _ = writeln!(train_log, "{epoch},{step},{loss},{lr}");
            epoch_loss += loss;
            step += 1;
        }
        let train_loss = epoch_loss / train.num_batches() as f64;

        let (mut val_sum, mut val_n) = (0.0, 0usize);
        for b in 0..val.num_batches() {
            let batch = val.batch(0, b)?;
            let loss = match &mut model {
                Model::Moco(state) => moco_val_loss(state, &batch)?,
                Model::Dense { encoder, kind } => dense_pass(encoder, *kind, &batch, config.pretrain.dense_tau, false)?,
            };
            val_sum += loss * batch.len() as f64;
            val_n += batch.len();
        }
        let val_loss = val_sum / val_n as f64;
        let seconds = start.elapsed().as_secs_f64();
        let _ = writeln!(val_log, "{epoch},{train_loss},{val_loss},{lr},{seconds:.2}");
        write_atomic(&out_dir.join(TRAIN_LOG_FILE), train_log.as_bytes())?;
        write_atomic(&out_dir.join(VAL_LOG_FILE), val_log.as_bytes())?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr: lr as f64,
            seconds,
        });
        log::info!(
            "{} epoch {epoch}: train {train_loss:.4} val {val_loss:.4} ({seconds:.1}s)",
            config.loss
        );
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step,
                loss: val_loss,
            });
        }
        if best.as_ref().is_none_or(|c| val_loss < c.best_val_loss) {
            let ckpt = Checkpoint {
                config: config.clone(),
                epoch,
                best_val_loss: val_loss,
                val_history: history.iter().map(|h| h.val_loss).collect(),
                encoder: model.encoder().state_dict(),
            };
            ckpt.save(&ckpt_path)?;
            best = Some(ckpt);
        }
    }
    let mut checkpoint = best.ok_or_else(|| Error::InvalidArgument("zero pretraining epochs".into()))?;
    checkpoint.val_history = history.iter().map(|h| h.val_loss).collect();
    checkpoint.save(&ckpt_path)?;
    Ok(PretrainOutcome {
        checkpoint,
        checkpoint_path: ckpt_path,
        history,
    })
}
