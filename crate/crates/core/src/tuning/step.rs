use std::fmt;

use rand::Rng;

use super::plan::{ExitPlan, EXIT_BLOCK_BASE};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::Adam;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStepRecord {
    pub iteration: usize,
    pub exit: usize,
    pub loss: f64,
    pub updated_layers: Vec<usize>,
    /// Blocks (layers or heads) whose activations were kept alive for backward.
    pub retained_acts: usize,
}

impl fmt::Display for TrainStepRecord {
    /// `iter exit loss updated_layers retained_acts`, tab-separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let layers: Vec<String> = self.updated_layers.iter().map(usize::to_string).collect();
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.iteration,
            self.exit,
            self.loss,
            layers.join(","),
            self.retained_acts
        )
    }
}

impl TrainStepRecord {
    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Format(format!("bad training log line: {line:?}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let updated_layers = if f[3].is_empty() {
            Vec::new()
        } else {
            f[3].split(',')
                .map(|s| s.parse().map_err(|_| bad()))
                .collect::<Result<_>>()?
        };
        Ok(TrainStepRecord {
            iteration: f[0].parse().map_err(|_| bad())?,
            exit: f[1].parse().map_err(|_| bad())?,
            loss: f[2].parse().map_err(|_| bad())?,
            updated_layers,
            retained_acts: f[4].parse().map_err(|_| bad())?,
        })
    }
}

/// Splits training windows of `n + 1` tokens into inputs and next-token targets.
pub(crate) fn split_batch(batch: &[Vec<usize>]) -> Result<Vec<(&[usize], &[usize])>> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    batch
        .iter()
        .map(|s| {
            if s.len() < 2 {
                Err(Error::Input("training sequences need at least two tokens".into()))
            } else {
                Ok((&s[..s.len() - 1], &s[1..]))
            }
        })
        .collect()
}

/// Mean next-token cross-entropy over the batch, recorded on `tape`.
pub(crate) fn batch_loss(tape: &mut Tape, logits: &[Var], targets: &[&[usize]]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&l, t) in logits.iter().zip(targets) {
        let ce = tape.cross_entropy(l, t)?;
        total = Some(match total {
            None => ce,
            Some(acc) => tape.add(acc, ce)?,
        });
    }
    let total = total.ok_or_else(|| Error::Input("empty batch".into()))?;
    tape.scale(total, 1.0 / logits.len() as f64)
}

/// Loss and per-parameter gradients of one tuning step through exit `exit`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradients {
    pub loss: f64,
    pub retained_acts: usize,
    /// `(name, gradient)` for every trainable tensor, in update order.
    pub grads: Vec<(String, Vec<f64>)>,
}

const PROJECTIONS: [&str; 4] = ["attn.q", "attn.k", "attn.v", "attn.o"];

/// Mutable handles on the tensors a step through `exit` updates, in gradient order.
pub fn step_params_mut<'a>(
    model: &'a mut Model,
    plan: &'a mut ExitPlan,
    exit: usize,
) -> Vec<(String, &'a mut Tensor)> {
    let window = plan.window_of(exit);
    let mut slots: Vec<(String, &mut Tensor)> = Vec::new();
    let start = window.start;
    for (off, layer) in model.layers[window].iter_mut().enumerate() {
        let j = start + off;
        for (name, lin) in PROJECTIONS.iter().zip(layer.projections_mut()) {
            if let Some(a) = lin.adapter.as_mut() {
                slots.push((format!("layers.{j}.{name}.adapter.down"), &mut a.down));
                slots.push((format!("layers.{j}.{name}.adapter.up"), &mut a.up));
            }
        }
    }
    for (name, t) in plan.exits[exit].head.params_mut() {
        slots.push((format!("exits.{exit}.{name}"), t));
    }
    slots
}

fn check_step(model: &Model, plan: &ExitPlan, exit: usize) -> Result<()> {
    if !model.has_adapters() {
        return Err(Error::Contract("tuning needs adapters on every layer".into()));
    }
    if plan.num_layers != model.num_layers() || exit >= plan.num_exits() {
        return Err(Error::Contract("exit plan does not match the model".into()));
    }
    Ok(())
}

/// Forward and backward of one tuning step, without touching any parameter.
///
/// Layers before the window run eagerly, so only the window and the exit head
/// leave activations for backward.
pub fn step_gradients(
    model: &Model,
    plan: &ExitPlan,
    batch: &[Vec<usize>],
    exit: usize,
) -> Result<StepGradients> {
    check_step(model, plan, exit)?;
    let pairs = split_batch(batch)?;
    let window = plan.window_of(exit);

    let mut tape = Tape::new();
    let mut logits = Vec::with_capacity(pairs.len());
    for (inputs, _) in &pairs {
        let x = if window.start == 0 {
            model.embed_eager(inputs)?
        } else {
            model.forward_to_layer(inputs, window.start - 1)?
        };
        let mut h = tape.constant(x);
        for j in window.clone() {
            h = model.layer_on_tape(&mut tape, j, h, true)?;
        }
        let tag = EXIT_BLOCK_BASE + exit as u32;
        logits.push(plan.exits[exit].head.on_tape(&mut tape, h, true, tag)?);
    }
    let targets: Vec<&[usize]> = pairs.iter().map(|(_, t)| *t).collect();
    let loss = batch_loss(&mut tape, &logits, &targets)?;
    let retained_acts = tape.retained_blocks();
    tape.backward(loss)?;

    // one registration per sequence, each in the same order
    let mut names: Vec<(String, usize)> = Vec::new();
    for j in window {
        for (name, lin) in PROJECTIONS.iter().zip(model.layers[j].projections()) {
            let a = lin.adapter.as_ref().expect("checked above");
            names.push((format!("layers.{j}.{name}.adapter.down"), a.down.numel()));
            names.push((format!("layers.{j}.{name}.adapter.up"), a.up.numel()));
        }
    }
    for (name, t) in plan.exits[exit].head.params() {
        names.push((format!("exits.{exit}.{name}"), t.numel()));
    }
    let leaves = tape.trainable_leaves();
    let per_seq = names.len();
    if leaves.len() != per_seq * pairs.len() {
        return Err(Error::Contract(format!(
            "expected {} trainable tensors on the tape, found {}; is the backbone frozen?",
            per_seq * pairs.len(),
            leaves.len()
        )));
    }
    let grads = names
        .into_iter()
        .enumerate()
        .map(|(k, (name, numel))| {
            let mut grad = vec![0.0; numel];
            for s in 0..pairs.len() {
                if let Some(g) = tape.grad(leaves[s * per_seq + k]) {
                    for (acc, v) in grad.iter_mut().zip(g) {
                        *acc += v;
                    }
                }
            }
            (name, grad)
        })
        .collect();
    Ok(StepGradients {
        loss: tape.value(loss).item()?,
        retained_acts,
        grads,
    })
}

/// One adapter-tuning step through exit `exit`: [`step_gradients`] followed by
/// an optimizer update of the window adapters and the exit head.
pub fn tune_step_at(
    model: &mut Model,
    plan: &mut ExitPlan,
    batch: &[Vec<usize>],
    opt: &mut Adam,
    exit: usize,
    iteration: usize,
) -> Result<TrainStepRecord> {
    let step = step_gradients(model, plan, batch, exit)?;
    let window = plan.window_of(exit);
    for ((name, param), (gname, grad)) in step_params_mut(model, plan, exit).into_iter().zip(&step.grads) {
        debug_assert_eq!(&name, gname);
        opt.update(&name, param, grad)?;
    }
    Ok(TrainStepRecord {
        iteration,
        exit,
        loss: step.loss,
        updated_layers: window.collect(),
        retained_acts: step.retained_acts,
    })
}

/// [`tune_step_at`] with the exit drawn uniformly at random.
pub fn tune_step<R: Rng + ?Sized>(
    model: &mut Model,
    plan: &mut ExitPlan,
    batch: &[Vec<usize>],
    opt: &mut Adam,
    rng: &mut R,
    iteration: usize,
) -> Result<TrainStepRecord> {
    let exit = rng.gen_range(0..plan.num_exits());
    tune_step_at(model, plan, batch, opt, exit, iteration)
}

/// Loss of the same step as [`tune_step_at`], without updating anything.
pub fn step_loss(model: &Model, plan: &ExitPlan, batch: &[Vec<usize>], exit: usize) -> Result<f64> {
    let pairs = split_batch(batch)?;
    let b = plan.exits[exit].backbone_layer;
    let mut tape = Tape::new();
    let mut logits = Vec::new();
    for (inputs, _) in &pairs {
        let h = tape.constant(model.forward_to_layer(inputs, b)?);
        logits.push(plan.exits[exit].head.on_tape(&mut tape, h, false, EXIT_BLOCK_BASE)?);
    }
    let targets: Vec<&[usize]> = pairs.iter().map(|(_, t)| *t).collect();
    let loss = batch_loss(&mut tape, &logits, &targets)?;
    tape.value(loss).item()
}

/// Blocks that would be retained if exit `exit` backpropagated through every
/// layer below it with all parameters trainable.
pub fn full_backprop_retained(model: &Model, plan: &ExitPlan, tokens: &[usize], exit: usize) -> Result<usize> {
    let mut m = model.clone();
    m.set_backbone_trainable(true);
    let mut tape = Tape::new();
    let mut h = m.embed(&mut tape, tokens, true)?;
    for j in 0..=plan.exits[exit].backbone_layer {
        h = m.layer_on_tape(&mut tape, j, h, true)?;
    }
    plan.exits[exit].head.on_tape(&mut tape, h, true, EXIT_BLOCK_BASE + exit as u32)?;
    Ok(tape.retained_blocks())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tuning::plan::build_exit_plan;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(layers: usize, exits: usize) -> (Model, ExitPlan, Vec<Vec<usize>>) {
        let cfg = ModelConfig {
            embed_dim: 16,
            num_layers: layers,
            num_heads: 2,
            max_seq_len: 12,
            seed: 2,
            ..Default::default()
        };
        let mut m = Model::init(&cfg).unwrap();
        m.add_adapters(4, 8.0, 1).unwrap();
        let plan = build_exit_plan(&cfg, exits, 3).unwrap();
        let batch = (0..2)
            .map(|s| (0..9).map(|i| (i * 31 + s * 7 + 3) % 256).collect())
            .collect();
        (m, plan, batch)
    }

    #[test]
    fn only_window_and_head_change() {
        let (mut m, mut plan, batch) = setup(8, 4);
        let (m0, p0) = (m.clone(), plan.clone());
        let mut opt = Adam::momentum_free(1e-3).unwrap();
        let rec = tune_step_at(&mut m, &mut plan, &batch, &mut opt, 2, 0).unwrap();
        assert_eq!(rec.updated_layers, vec![4, 5]);
        assert_eq!(rec.retained_acts, 3);
        for (j, (a, b)) in m.layers.iter().zip(&m0.layers).enumerate() {
            let changed = a != b;
            assert_eq!(changed, (4..6).contains(&j), "layer {j}");
            for ((_, la), (_, lb)) in a.linears().iter().zip(b.linears().iter()) {
                assert_eq!(la.weight, lb.weight);
            }
        }
        for (i, (a, b)) in plan.exits.iter().zip(&p0.exits).enumerate() {
            assert_eq!(a != b, i == 2);
        }
        assert_eq!(m.tok_emb, m0.tok_emb);
        assert_eq!(m.head, m0.head);
    }

    #[test]
    fn log_line_round_trips() {
        let (mut m, mut plan, batch) = setup(4, 2);
        let mut opt = Adam::momentum_free(1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rec = tune_step(&mut m, &mut plan, &batch, &mut opt, &mut rng, 7).unwrap();
        let line = rec.to_string();
        assert_eq!(line.split('\t').count(), 5);
        assert_eq!(TrainStepRecord::parse(&line).unwrap(), rec);
    }

    #[test]
    fn loss_matches_eager_route() {
        let (mut m, mut plan, batch) = setup(4, 2);
        let expect = step_loss(&m, &plan, &batch, 0).unwrap();
        let mut opt = Adam::momentum_free(1e-3).unwrap();
        let rec = tune_step_at(&mut m, &mut plan, &batch, &mut opt, 0, 0).unwrap();
        assert!((rec.loss - expect).abs() < 1e-12);
    }

    #[test]
    fn full_backprop_retains_every_layer() {
        let (m, plan, batch) = setup(8, 4);
        let n = full_backprop_retained(&m, &plan, &batch[0][..8], 3).unwrap();
        // embedding, eight layers, one head
        assert_eq!(n, 10);
    }

    #[test]
    fn overlong_batch_rejected() {
        let (mut m, mut plan, _) = setup(4, 2);
        let mut opt = Adam::momentum_free(1e-3).unwrap();
        let batch = vec![vec![1; 20]];
        assert!(matches!(
            tune_step_at(&mut m, &mut plan, &batch, &mut opt, 1, 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn unfrozen_backbone_is_a_contract_error() {
        let (mut m, mut plan, batch) = setup(4, 2);
        m.set_backbone_trainable(true);
        let mut opt = Adam::momentum_free(1e-3).unwrap();
        assert!(tune_step_at(&mut m, &mut plan, &batch, &mut opt, 1, 0).is_err());
    }
}
