use crate::{Error, Result};

/// Rejects any entry that is not exactly 0 or 1.
pub fn check_binary(mask: &[f32]) -> Result<()> {
    match mask.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(index) => Err(Error::NonBinary {
            index,
            value: mask[index],
        }),
        None => Ok(()),
    }
}

/// Dice coefficient `2|A∩B| / (|A| + |B|)` of two binary masks; 1 when both
/// are empty.
pub fn dice(pred: &[f32], truth: &[f32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            op: "dice",
            dim: "mask length",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    check_binary(pred)?;
    check_binary(truth)?;
    let (mut inter, mut a, mut b) = (0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(truth) {
        let (p, t) = (p == 1.0, t == 1.0);
        inter += (p && t) as u64;
        a += p as u64;
        b += t as u64;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (a + b) as f64)
}

/// Thresholds probabilities at 0.5 (inclusive) into a binary mask.
pub fn binarize(probabilities: &[f32]) -> Vec<f32> {
    probabilities
        .iter()
        .map(|&p| if p >= 0.5 { 1.0 } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_disjoint_and_partial() {
        let a = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dice(&[0.0; 4], &[0.0; 4]).unwrap(), 1.0);
        // |A| = 4, |B| = 4, overlap 2.
        let a = [1.0, 1.0, 1.0, 1.0, 0.0, 0.0];
        let b = [0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
    }

    #[test]
    fn rejects_non_binary_and_length_mismatch() {
        let err = dice(&[0.0, 0.5], &[0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonBinary { index: 1, .. }));
        assert!(dice(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn binarized_probabilities_are_accepted() {
        let p = [0.0, 0.49, 0.5, 0.99, 1.0];
        let m = binarize(&p);
        assert_eq!(m, vec![0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(dice(&m, &m).is_ok());
    }
}
