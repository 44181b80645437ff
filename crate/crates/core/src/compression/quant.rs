use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_BITS: u32 = 2;
pub const MAX_BITS: u32 = 16;

pub fn check_bits(bits: u32) -> Result<()> {
    if !(MIN_BITS..=MAX_BITS).contains(&bits) {
        return Err(Error::Config(format!(
            "bit-width must be in [{MIN_BITS}, {MAX_BITS}], got {bits}"
        )));
    }
    Ok(())
}

/// Largest magnitude on the symmetric signed grid, `2^(bits-1) - 1`.
pub fn grid_max(bits: u32) -> f64 {
    ((1u32 << (bits - 1)) - 1) as f64
}

/// Per-tensor symmetric absmax fake quantization, in place. All-zero input is left as is.
pub fn fake_quantize(values: &mut [f64], bits: u32) -> Result<()> {
    check_bits(bits)?;
    let absmax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if absmax == 0.0 {
        return Ok(());
    }
    let scale = absmax / grid_max(bits);
    for v in values.iter_mut() {
        *v = (*v / scale).round() * scale;
    }
    Ok(())
}

/// Fake-quantizes `x` onto a `bits`-wide signed uniform grid: `round(x / s) * s`
/// with `s = max|x| / (2^(bits-1) - 1)`.
pub fn quantize_tensor(x: &Tensor, bits: u32) -> Result<Tensor> {
    let mut out = x.clone();
    fake_quantize(out.data_mut(), bits)?;
    Ok(out)
}
