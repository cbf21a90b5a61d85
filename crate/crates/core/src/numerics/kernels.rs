//! Dense f64 kernels shared by the tape and the tape-free forward paths.

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major `rows x cols` matrix times a `cols` vector.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    (0..rows).map(|r| dot(&w[r * cols..(r + 1) * cols], x)).collect()
}

/// Max-shifted log-softmax over the whole slice.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Softmax of `logits` restricted to `candidates`; the output is aligned
/// with `candidates`.
pub fn masked_softmax(logits: &[f64], candidates: &[usize]) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let picked: Vec<f64> = candidates.iter().map(|&i| logits[i]).collect();
    let m = picked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = picked.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// `log(sum(exp(xs)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn uniform_logits_give_uniform_probs() {
        let p = masked_softmax(&[0.0; 6], &[0, 2, 3, 5]).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }

    #[test]
    fn two_to_one_odds() {
        let p = masked_softmax(&[2f64.ln(), 0.0], &[0, 1]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_candidate() {
        assert_eq!(masked_softmax(&[7.0, -3.0], &[1]).unwrap(), vec![1.0]);
    }

    #[test]
    fn empty_candidates_rejected() {
        assert!(matches!(masked_softmax(&[1.0], &[]), Err(Error::EmptyCandidates)));
    }

    #[test]
    fn log_sum_exp_of_nothing() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_normalized_and_shift_invariant(
            logits in prop::collection::vec(-30.0f64..30.0, 1..12),
            shift in -50.0f64..50.0,
        ) {
            let cands: Vec<usize> = (0..logits.len()).collect();
            let p = masked_softmax(&logits, &cands).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let q = masked_softmax(&shifted, &cands).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
