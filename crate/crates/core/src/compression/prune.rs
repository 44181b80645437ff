use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Config(format!("sparsity must be in [0, 1), got {sparsity}")));
    }
    Ok(())
}

/// Zeroes the `floor(sparsity * n)` smallest-magnitude entries in place and
/// returns the keep-mask. Equal magnitudes prune the lower flat index first.
pub fn magnitude_prune(values: &mut [f64], sparsity: f64) -> Result<Vec<bool>> {
    check_sparsity(sparsity)?;
    let k = (sparsity * values.len() as f64).floor() as usize;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].abs().total_cmp(&values[b].abs()).then(a.cmp(&b)));
    let mut keep = vec![true; values.len()];
    for &i in &order[..k] {
        values[i] = 0.0;
        keep[i] = false;
    }
    Ok(keep)
}

pub fn prune_tensor(x: &Tensor, sparsity: f64) -> Result<(Tensor, Vec<bool>)> {
    let mut out = x.clone();
    let mask = magnitude_prune(out.data_mut(), sparsity)?;
    Ok((out, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_sparsity_is_identity() {
        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let (y, mask) = prune_tensor(&x, 0.0).unwrap();
        assert_eq!(y, x);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn hand_selection() {
        let x = Tensor::new(vec![4], vec![1.0, -4.0, 2.0, 3.0]).unwrap();
        let (y, mask) = prune_tensor(&x, 0.5).unwrap();
        assert_eq!(y.data(), &[0.0, -4.0, 0.0, 3.0]);
        assert_eq!(mask, vec![false, true, false, true]);
    }

    #[test]
    fn ties_prune_lower_index_first() {
        let x = Tensor::new(vec![4], vec![1.0, -1.0, 1.0, 5.0]).unwrap();
        let (y, _) = prune_tensor(&x, 0.5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 1.0, 5.0]);
    }

    #[test]
    fn out_of_range_sparsity() {
        let x = Tensor::zeros(&[2]);
        assert!(prune_tensor(&x, 1.0).is_err());
        assert!(prune_tensor(&x, -0.1).is_err());
        assert!(prune_tensor(&x, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn kept_set_matches_sort_oracle(
            vals in proptest::collection::vec(-10.0f64..10.0, 1..60),
            sparsity in 0.0f64..0.99,
        ) {
            let x = Tensor::new(vec![vals.len()], vals.clone()).unwrap();
            let (_, mask) = prune_tensor(&x, sparsity).unwrap();
            // oracle: keep the n - k largest by (|v|, index) ordering
            let n = vals.len();
            let k = (sparsity * n as f64).floor() as usize;
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| vals[b].abs().partial_cmp(&vals[a].abs()).unwrap().then(b.cmp(&a)));
            let mut expect = vec![false; n];
            for &i in &idx[..n - k] {
                expect[i] = true;
            }
            prop_assert_eq!(mask, expect);
        }
    }
}
