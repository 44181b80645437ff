#![allow(dead_code)]

use edgellm::tensor::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
pub const FD_ATOL: f64 = 1e-6;

/// Central finite differences of a scalar function with respect to `x`.
pub fn central_differences(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= FD_ATOL + FD_RTOL * numeric.abs().max(analytic.abs())
}

/// Builds the graph on a fresh tape from `inputs` (all differentiable), runs
/// backward, and compares every input gradient with central differences.
/// Returns a description of the first mismatch.
pub fn gradcheck(
    inputs: &[Tensor],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> Result<(), String> {
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut tape, &vars);
    tape.backward(out).map_err(|e| e.to_string())?;

    for (k, input) in inputs.iter().enumerate() {
        let analytic = tape
            .grad(vars[k])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; input.numel()]);
        let numeric = central_differences(input.data(), |probe| {
            let mut vals = inputs.to_vec();
            vals[k] = Tensor::new(input.shape().to_vec(), probe.to_vec()).unwrap();
            eval(&vals)
        });
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            if !close(*a, *n) {
                return Err(format!("input {k} element {i}: analytic {a} vs numeric {n}"));
            }
        }
    }
    Ok(())
}
