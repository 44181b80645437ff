use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::PretrainConfig;
use super::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::Adam;
use crate::tensor::{Tape, Tensor};
use crate::tuning::step::{batch_loss, split_batch};

/// One full-backprop step on every trainable parameter of `model`. Returns the loss.
pub fn full_step(model: &mut Model, batch: &[Vec<usize>], opt: &mut Adam) -> Result<f64> {
    let pairs = split_batch(batch)?;
    let mut tape = Tape::new();
    let mut logits = Vec::with_capacity(pairs.len());
    for (inputs, _) in &pairs {
        let mut h = model.embed(&mut tape, inputs, true)?;
        for j in 0..model.num_layers() {
            h = model.layer_on_tape(&mut tape, j, h, true)?;
        }
        logits.push(model.head_on_tape(&mut tape, h, true)?);
    }
    let targets: Vec<&[usize]> = pairs.iter().map(|(_, t)| *t).collect();
    let loss = batch_loss(&mut tape, &logits, &targets)?;
    tape.backward(loss)?;

    let order = model.bind_order_names();
    let mut params: HashMap<String, &mut Tensor> = model
        .named_params_mut()
        .into_iter()
        .map(|(n, _, t)| (n, t))
        .collect();
    let trainable: Vec<String> = order
        .into_iter()
        .filter(|n| params.get(n).is_some_and(|t| t.requires_grad()))
        .collect();
    let leaves = tape.trainable_leaves();
    if leaves.len() != trainable.len() * pairs.len() {
        return Err(Error::Contract(format!(
            "tape holds {} trainable tensors, expected {}",
            leaves.len(),
            trainable.len() * pairs.len()
        )));
    }
    for (k, name) in trainable.iter().enumerate() {
        let param = params.get_mut(name).expect("filtered above");
        let mut grad = vec![0.0; param.numel()];
        for s in 0..pairs.len() {
            if let Some(g) = tape.grad(leaves[s * trainable.len() + k]) {
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        opt.update(name, param, &grad)?;
    }
    tape.value(loss).item()
}

/// Trains the whole backbone from its current weights; returns the loss per step.
/// The backbone is frozen again afterwards.
pub fn pretrain(model: &mut Model, data: &Dataset, cfg: &PretrainConfig, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut opt = Adam::new(cfg.lr, 0.9, 0.999)?;
    model.set_backbone_trainable(true);
    let len = model.cfg.max_seq_len;
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let batch = data.batch(&mut rng, cfg.batch_size, len);
        match full_step(model, &batch, &mut opt) {
            Ok(l) => losses.push(l),
            Err(e) => {
                model.set_backbone_trainable(false);
                return Err(e);
            }
        }
    }
    model.set_backbone_trainable(false);
    Ok(losses)
}
