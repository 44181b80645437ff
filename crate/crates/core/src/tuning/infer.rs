use serde::{Deserialize, Serialize};

use super::plan::ExitPlan;
use super::vote::{vote, vote_position, ProbMatrix};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::tape::log_prob;
use crate::tensor::{softmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    FinalExit,
    Vote,
}

/// Logits of every exit for every position of `tokens`, indexed by exit.
pub fn exit_logits(model: &Model, plan: &ExitPlan, tokens: &[usize]) -> Result<Vec<Tensor>> {
    let outs = model.layer_outputs(tokens)?;
    plan.exits
        .iter()
        .map(|e| e.head.logits(&outs[e.backbone_layer]))
        .collect()
}

fn prob_matrix(logits: &[Tensor], pos: usize) -> Result<ProbMatrix> {
    let rows = logits
        .iter()
        .map(|l| {
            let row = Tensor::new(vec![l.last_dim()], l.row(pos).to_vec())?;
            Ok(softmax(&row)?.into_data())
        })
        .collect::<Result<Vec<_>>>()?;
    ProbMatrix::new(rows)
}

/// Greedy decoding of `steps` new tokens. The context is truncated to the
/// model's maximum length from the left.
pub fn generate(
    model: &Model,
    plan: &ExitPlan,
    prompt: &[usize],
    steps: usize,
    mode: DecodeMode,
) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::Input("prompt is empty".into()));
    }
    let mut seq = prompt.to_vec();
    let max = model.cfg.max_seq_len;
    for _ in 0..steps {
        let ctx = &seq[seq.len().saturating_sub(max)..];
        let last = ctx.len() - 1;
        let next = match mode {
            DecodeMode::FinalExit => {
                let outs = model.forward_to_layer(ctx, model.num_layers() - 1)?;
                let exit = plan.exits.last().ok_or_else(|| Error::Contract("no exits".into()))?;
                argmax(exit.head.logits(&outs)?.row(last))
            }
            DecodeMode::Vote => vote(&prob_matrix(&exit_logits(model, plan, ctx)?, last)?),
        };
        seq.push(next);
    }
    Ok(seq)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Mean next-token negative log-likelihood of each exit and of vote decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitEval {
    pub exit_nll: Vec<f64>,
    /// NLL read from the exit that wins the vote at each position.
    pub vote_nll: f64,
    pub tokens: usize,
}

impl ExitEval {
    pub fn exit_perplexity(&self, i: usize) -> f64 {
        self.exit_nll[i].exp()
    }

    pub fn vote_perplexity(&self) -> f64 {
        self.vote_nll.exp()
    }
}

pub fn evaluate_exits(model: &Model, plan: &ExitPlan, seqs: &[Vec<usize>]) -> Result<ExitEval> {
    let mut sums = vec![0.0; plan.num_exits()];
    let mut vote_sum = 0.0;
    let mut count = 0usize;
    for s in seqs {
        if s.len() < 2 {
            return Err(Error::Input("evaluation sequences need at least two tokens".into()));
        }
        let (inputs, targets) = (&s[..s.len() - 1], &s[1..]);
        let logits = exit_logits(model, plan, inputs)?;
        for (pos, &t) in targets.iter().enumerate() {
            for (i, l) in logits.iter().enumerate() {
                sums[i] -= log_prob(l.row(pos), t);
            }
            let (winner, _) = vote_position(&prob_matrix(&logits, pos)?);
            vote_sum -= log_prob(logits[winner].row(pos), t);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Input("no evaluation sequences".into()));
    }
    Ok(ExitEval {
        exit_nll: sums.iter().map(|s| s / count as f64).collect(),
        vote_nll: vote_sum / count as f64,
        tokens: count,
    })
}

/// Mean next-token negative log-likelihood through the model's own output head.
pub fn model_nll(model: &Model, seqs: &[Vec<usize>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in seqs {
        if s.len() < 2 {
            return Err(Error::Input("evaluation sequences need at least two tokens".into()));
        }
        let logits = model.forward(&s[..s.len() - 1])?;
        for (pos, &t) in s[1..].iter().enumerate() {
            sum -= log_prob(logits.row(pos), t);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Input("no evaluation sequences".into()));
    }
    Ok(sum / count as f64)
}
