use super::policy::CompressionPolicy;
use super::prune::magnitude_prune;
use super::quant::fake_quantize;
use crate::error::{Error, Result};
use crate::model::{Model, TransformerLayer};

/// Prunes then fake-quantizes the six linear weights of `layer`. `None` skips a step.
pub fn compress_layer(
    layer: &TransformerLayer,
    bits: Option<u32>,
    sparsity: Option<f64>,
) -> Result<TransformerLayer> {
    let mut out = layer.clone();
    for (_, lin) in out.linears_mut() {
        if let Some(p) = sparsity {
            magnitude_prune(lin.weight.data_mut(), p)?;
        }
        if let Some(b) = bits {
            fake_quantize(lin.weight.data_mut(), b)?;
        }
    }
    Ok(out)
}

/// Returns a compressed copy of `model`. Embeddings, norms, the output head and
/// adapters are left in full precision.
pub fn apply_policy(model: &Model, policy: &CompressionPolicy) -> Result<Model> {
    let missing = policy.missing_layers(model.num_layers());
    if !missing.is_empty() {
        return Err(Error::Policy(format!("policy does not cover layers {missing:?}")));
    }
    if let Some(extra) = policy.layers.iter().find(|l| l.layer >= model.num_layers()) {
        return Err(Error::Policy(format!(
            "policy names layer {} but the model has {}",
            extra.layer,
            model.num_layers()
        )));
    }
    let mut out = model.clone();
    for lp in &policy.layers {
        out.layers[lp.layer] = compress_layer(&model.layers[lp.layer], Some(lp.bits), Some(lp.sparsity))?;
    }
    Ok(out)
}
