//! Mini-batch Adam training loop with dev-based early stopping, shared by
//! the parser, the taggers, and the hybrid parser.
//!
//! Batches group training items of equal length so sequence models never
//! need padding; batch composition and order are reshuffled every epoch from
//! a dedicated RNG substream.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::DcstError;
use crate::nn::store::{AdamConfig, ParameterStore};
use crate::nn::substream;
use crate::nn::tape::{NodeId, Tape};

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Epochs without dev improvement before stopping; ignored without dev.
    pub patience: usize,
    pub seed: u64,
    /// Substream namespace, e.g. "parser" or "tagger.nc".
    pub stream: String,
}

#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct TrainHistory {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Dev score after each epoch (higher is better); empty without dev.
    pub dev_scores: Vec<f64>,
    /// Mean per-batch training loss per epoch.
    pub train_losses: Vec<f64>,
}

/// Run the loop. `batch_loss` builds the scalar mean loss of a batch of item
/// indices on a fresh tape; `dev_metric` scores the current parameters on
/// the dev set (None disables early stopping). On return the store holds the
/// best-dev parameters (or the final ones without dev). `skip` excludes
/// parameters from updates.
pub fn run_train_loop(
    store: &mut ParameterStore,
    item_lengths: &[usize],
    mut batch_loss: impl FnMut(&ParameterStore, &mut Tape, &[usize], &mut ChaCha8Rng) -> NodeId,
    mut dev_metric: impl FnMut(&ParameterStore) -> Option<f64>,
    skip: &dyn Fn(&str) -> bool,
    opts: &TrainOptions,
) -> Result<TrainHistory, DcstError> {
    if item_lengths.is_empty() {
        return Err(DcstError::EmptyInput(format!(
            "training set for {} is empty",
            opts.stream
        )));
    }
    let mut by_length: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &len) in item_lengths.iter().enumerate() {
        by_length.entry(len).or_default().push(i);
    }

    let mut shuffle_rng = substream(opts.seed, &format!("{}.shuffle", opts.stream));
    let mut model_rng = substream(opts.seed, &format!("{}.dropout", opts.stream));
    let adam = AdamConfig { lr: opts.lr, ..Default::default() };

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParameterStore)> = None;
    let mut since_best = 0usize;

    for epoch in 0..opts.epochs {
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for group in by_length.values() {
            let mut group = group.clone();
            group.shuffle(&mut shuffle_rng);
            for chunk in group.chunks(opts.batch.max(1)) {
                batches.push(chunk.to_vec());
            }
        }
        batches.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for batch in &batches {
            let mut tape = Tape::new();
            let loss = batch_loss(store, &mut tape, batch, &mut model_rng);
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(DcstError::Numeric(format!(
                    "non-finite loss {} at epoch {} in {}",
                    value, epoch, opts.stream
                )));
            }
            loss_sum += value;
            let grads = tape.backward(loss);
            store.adam_update(&grads, &adam, skip)?;
        }
        history.train_losses.push(loss_sum / batches.len() as f64);
        history.epochs_run = epoch + 1;

        if let Some(score) = dev_metric(store) {
            history.dev_scores.push(score);
            let improved = best.as_ref().is_none_or(|(b, _)| score > *b);
            if improved {
                best = Some((score, store.clone()));
                history.best_epoch = epoch + 1;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > opts.patience {
                    break;
                }
            }
        }
    }

    if let Some((_, best_store)) = best {
        *store = best_store;
    }
    Ok(history)
}
