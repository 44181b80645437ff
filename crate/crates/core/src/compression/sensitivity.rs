use super::apply::compress_layer;
use super::policy::LayerSensitivity;
use super::prune::check_sparsity;
use super::quant::check_bits;
use crate::error::{Error, Result};
use crate::model::forward::LayerVars;
use crate::model::{sq_diff_sum, Model, TransformerLayer};
use crate::tensor::{Tape, Tensor};

fn run_layer(layer: &TransformerLayer, num_heads: usize, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = LayerVars::bind(&mut tape, layer, false);
    let out = vars.forward(&mut tape, xv, num_heads)?;
    Ok(tape.take_value(out))
}

/// Per-layer output MSE when only that layer is quantized at `base_bits`
/// (`s_quant`) or only that layer is pruned at `sparsity` (`s_prune`).
///
/// Upstream layers stay uncompressed, so each layer's input is taken from one
/// cached forward pass of the base model.
pub fn profile_sensitivity(
    model: &Model,
    calib: &[Vec<usize>],
    base_bits: u32,
    sparsity: f64,
) -> Result<Vec<LayerSensitivity>> {
    check_bits(base_bits)?;
    check_sparsity(sparsity)?;
    if calib.is_empty() {
        return Err(Error::Contract("calibration set is empty".into()));
    }
    // inputs[s][j] is the input to layer j for sequence s; outputs[s][j] its output
    let mut inputs = Vec::with_capacity(calib.len());
    let mut outputs = Vec::with_capacity(calib.len());
    for seq in calib {
        let outs = model.layer_outputs(seq)?;
        let mut ins = Vec::with_capacity(outs.len());
        ins.push(model.embed_eager(seq)?);
        ins.extend(outs[..outs.len() - 1].iter().cloned());
        inputs.push(ins);
        outputs.push(outs);
    }
    let heads = model.cfg.num_heads;
    (0..model.num_layers())
        .map(|j| {
            let quantized = compress_layer(&model.layers[j], Some(base_bits), None)?;
            let pruned = compress_layer(&model.layers[j], None, Some(sparsity))?;
            let (mut sq, mut sp, mut count) = (0.0, 0.0, 0usize);
            for (ins, outs) in inputs.iter().zip(&outputs) {
                let yq = run_layer(&quantized, heads, &ins[j])?;
                let yp = run_layer(&pruned, heads, &ins[j])?;
                sq += sq_diff_sum(outs[j].data(), yq.data());
                sp += sq_diff_sum(outs[j].data(), yp.data());
                count += outs[j].numel();
            }
            Ok(LayerSensitivity {
                layer_index: j,
                s_quant: sq / count as f64,
                s_prune: sp / count as f64,
            })
        })
        .collect()
}
