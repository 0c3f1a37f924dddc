//! Mini-batch training loop shared by APC pretraining, PVAD fine-tuning and
//! the speaker-embedder stand-in.
//!
//! Each batch is cut into fixed-size shards. Shards are evaluated through
//! [`crate::par`], per-shard gradients are summed in shard order and a single
//! Adam step is applied, so the trajectory is bit-identical for any thread
//! count.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::clip_global_norm;
use crate::nn::{Adam, AdamConfig, LrSchedule, ParamSet, Scalar};
use crate::par;
use crate::rng::{self, SeedStreams};

/// Items per gradient shard.
pub const SHARD_SIZE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub min_lr: f64,
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
}

/// Loss sum, number of loss terms, and gradient of the loss sum for one item.
pub type ItemGrad<P> = (f64, usize, P);

#[derive(Debug, Clone)]
pub struct FitResult<F: Scalar, P: ParamSet<F>> {
    /// Mean loss per epoch, measured on the fly during that epoch.
    pub loss_curve: Vec<f64>,
    pub optimizer: Adam<F, P>,
}

pub fn fit<F, P, G>(
    params: &mut P,
    n_items: usize,
    cfg: &FitConfig,
    seeds: SeedStreams,
    item_grad: G,
) -> Result<FitResult<F, P>>
where
    F: Scalar,
    P: ParamSet<F>,
    G: Fn(&P, usize, usize) -> Result<ItemGrad<P>> + Sync + Send,
{
    if n_items == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::config("epochs and batch_size must be positive"));
    }
    let batches_per_epoch = n_items.div_ceil(cfg.batch_size);
    let total = (cfg.epochs * batches_per_epoch) as u64;
    let schedule = LrSchedule::new(cfg.lr0, total, cfg.min_lr)?;
    let mut adam = Adam::new(params, cfg.adam);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n_items).collect();
        order.shuffle(&mut seeds.rng(rng::SHUFFLE, epoch as u64));
        let (mut epoch_sum, mut epoch_count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (sum, count, mut grads) = batch_gradient(params, batch, |p, i| item_grad(p, epoch, i))?;
            if !sum.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            if count == 0 {
                continue;
            }
            grads.scale(F::of(1.0 / count as f64));
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut grads, max);
            }
            adam.step(params, &grads, schedule.lr(step)?)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}, step {step}: {e}")))?;
            step += 1;
            epoch_sum += sum;
            epoch_count += count;
        }
        curve.push(if epoch_count > 0 { epoch_sum / epoch_count as f64 } else { 0.0 });
    }
    Ok(FitResult {
        loss_curve: curve,
        optimizer: adam,
    })
}

/// Summed loss and gradient over `items`, reduced in a fixed order.
pub fn batch_gradient<F, P, G>(params: &P, items: &[usize], item_grad: G) -> Result<ItemGrad<P>>
where
    F: Scalar,
    P: ParamSet<F>,
    G: Fn(&P, usize) -> Result<ItemGrad<P>> + Sync + Send,
{
    let shards: Vec<&[usize]> = items.chunks(SHARD_SIZE).collect();
    let results = par::map(&shards, |_, shard| -> Result<ItemGrad<P>> {
        let mut acc: Option<ItemGrad<P>> = None;
        for &i in shard.iter() {
            let (s, c, g) = item_grad(params, i)?;
            acc = Some(match acc {
                None => (s, c, g),
                Some((s0, c0, mut g0)) => {
                    g0.add_assign(&g);
                    (s0 + s, c0 + c, g0)
                }
            });
        }
        Ok(acc.unwrap_or_else(|| (0.0, 0, params.zeros_like())))
    });
    let mut total: Option<ItemGrad<P>> = None;
    for r in results {
        let (s, c, g) = r?;
        total = Some(match total {
            None => (s, c, g),
            Some((s0, c0, mut g0)) => {
                g0.add_assign(&g);
                (s0 + s, c0 + c, g0)
            }
        });
    }
    Ok(total.unwrap_or_else(|| (0.0, 0, params.zeros_like())))
}
