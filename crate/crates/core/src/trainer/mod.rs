//! Initialization, optimization, and the teacher-forced training loop.

mod checkpoint;
mod init;
mod optim;
mod store;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use init::{init_params, init_tensor, orthogonal, pretrain_transfer, GAUSSIAN_STD};
pub use optim::{adadelta_step, clip_gradients, global_norm, Adadelta};
pub use store::{GradientSet, InitScheme, Param, ParameterStore};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch_by_length, filter_long, IdPair};
use crate::error::{Error, Result};
use crate::eval::{bleu, BleuOptions};
use crate::model::{BoundModel, Ctx, ModelRef, ModelSpec};

const SHUFFLE_STREAM: u64 = 0x5e;
const BATCH_STREAM: u64 = 0xba;

/// Mixes `parts` into `seed` (splitmix64 finalizer per part).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub max_train_length: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            rho: 0.95,
            epsilon: 1e-6,
            clip_threshold: 1.0,
            batch_size: 16,
            dropout_rate: 0.5,
            max_train_length: 50,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Setting(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !(self.clip_threshold > 0.0) {
            return Err(Error::Setting("clip_threshold must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Setting("rho must be in [0, 1)".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Setting("epsilon must be nonnegative".into()));
        }
        if self.batch_size == 0 || self.max_train_length == 0 {
            return Err(Error::Setting(
                "batch_size and max_train_length must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Adadelta {
        Adadelta {
            rho: self.rho,
            epsilon: self.epsilon,
        }
    }
}

/// Summed gradients and NLL of a set of sentences.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub grads: GradientSet,
    pub nll: f64,
    pub tokens: usize,
}

/// Gradient of the summed token NLL over `rows`, one graph per sentence.
pub fn batch_gradients(
    spec: &ModelSpec,
    store: &ParameterStore,
    rows: &[IdPair],
    dropout_rate: f64,
    rng: &mut dyn RngCore,
) -> Result<BatchGradients> {
    let mut grads = GradientSet::new();
    let (mut nll, mut tokens) = (0.0, 0);
    for row in rows {
        let mut ctx = Ctx::new(store);
        let model = BoundModel::bind(spec, &mut ctx)?;
        let (loss, n) = model.sentence_nll(&mut ctx.graph, &row.source, &row.target, dropout_rate, rng)?;
        nll += ctx.graph.value(loss).item();
        tokens += n;
        for (name, g) in ctx.graph.backward(loss)?.params() {
            match grads.get_mut(&name) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    grads.insert(name, g);
                }
            }
        }
    }
    Ok(BatchGradients { grads, nll, tokens })
}

/// Mean-per-token loss gradient of one batch, clipped, then one Adadelta
/// step. Returns the batch's summed NLL and token count.
pub fn train_batch(
    spec: &ModelSpec,
    store: &mut ParameterStore,
    rows: &[IdPair],
    cfg: &TrainConfig,
    rng: &mut dyn RngCore,
) -> Result<(f64, usize)> {
    let BatchGradients { mut grads, nll, tokens } = batch_gradients(spec, store, rows, cfg.dropout_rate, rng)?;
    if !nll.is_finite() {
        return Err(Error::NonFiniteGradient("loss".into()));
    }
    let k = 1.0 / tokens.max(1) as f64;
    for g in grads.values_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= k);
    }
    clip_gradients(&mut grads, cfg.clip_threshold)?;
    cfg.optimizer().step(store, &grads)?;
    Ok((nll, tokens))
}

/// One shuffled pass over `pairs` (long pairs excluded). Returns the mean
/// per-token NLL seen during the pass. Randomness depends only on
/// `(cfg.seed, epoch)`.
pub fn train_epoch(
    spec: &ModelSpec,
    store: &mut ParameterStore,
    pairs: &[IdPair],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    cfg.validate()?;
    let pairs = filter_long(pairs, cfg.max_train_length);
    if pairs.is_empty() {
        return Err(Error::Data("no training pairs within max_train_length".into()));
    }
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
    let batches = batch_by_length(&pairs, cfg.batch_size, &mut shuffle)?;
    let (mut nll, mut tokens) = (0.0, 0);
    for (b, batch) in batches.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[BATCH_STREAM, epoch as u64, b as u64]));
        let (n, t) = train_batch(spec, store, &batch.rows(), cfg, &mut rng)?;
        nll += n;
        tokens += t;
    }
    Ok(nll / tokens as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_nll: f64,
    pub dev_nll: f64,
    pub dev_bleu: f64,
}

/// Held-out data and decoding settings for per-epoch evaluation.
#[derive(Clone, Debug)]
pub struct DevSet<'a> {
    pub pairs: &'a [IdPair],
    pub max_decode_len: usize,
    /// Skip decoding (BLEU reported as 0) to save time.
    pub skip_bleu: bool,
}

/// Greedy-decode BLEU of `pairs` on token ids.
pub fn dev_bleu(model: ModelRef<'_>, pairs: &[IdPair], max_len: usize) -> Result<f64> {
    let sources: Vec<Vec<usize>> = pairs.iter().map(|p| p.source.clone()).collect();
    let hyps = model.translate_all(&sources, 1, max_len)?;
    let as_str = |ids: &[usize]| ids.iter().map(|i| i.to_string()).collect::<Vec<_>>();
    let cands: Vec<Vec<String>> = hyps.iter().map(|h| as_str(h)).collect();
    let refs: Vec<Vec<Vec<String>>> = pairs.iter().map(|p| vec![as_str(&p.target)]).collect();
    Ok(bleu(&cands, &refs, BleuOptions::default())?.bleu)
}

/// Trains `ckpt` one epoch further and evaluates on `dev`.
pub fn run_epoch(ckpt: &mut Checkpoint, train: &[IdPair], dev: &DevSet<'_>) -> Result<EpochMetrics> {
    let epoch = ckpt.epoch + 1;
    let train_nll = train_epoch(&ckpt.spec, &mut ckpt.params, train, &ckpt.train, epoch)?;
    let model = ckpt.model();
    let dev_nll = model.corpus_nll(dev.pairs)?;
    let dev_bleu = if dev.skip_bleu {
        0.0
    } else {
        dev_bleu(model, dev.pairs, dev.max_decode_len)?
    };
    ckpt.epoch = epoch;
    let m = EpochMetrics {
        epoch,
        train_nll,
        dev_nll,
        dev_bleu,
    };
    ckpt.history.push(m.clone());
    Ok(m)
}

/// True once the best dev NLL is `patience` or more epochs old.
pub fn plateaued(history: &[EpochMetrics], patience: usize) -> bool {
    let Some(best) = history
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.dev_nll.total_cmp(&b.1.dev_nll))
        .map(|(i, _)| i)
    else {
        return false;
    };
    history.len() - 1 - best >= patience
}
