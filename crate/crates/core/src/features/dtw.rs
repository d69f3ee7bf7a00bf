use super::mfcc::MfccSequence;
use crate::error::{Error, Result};

fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Minimal cumulative Euclidean frame distance over monotone alignments
/// with steps (1,0), (0,1), (1,1) and both endpoints anchored. The result is
/// not normalized by path length.
pub fn dtw(a: &MfccSequence, b: &MfccSequence) -> Result<f64> {
    if a.num_coeffs() != b.num_coeffs() {
        return Err(Error::Shape(format!(
            "dtw between {}- and {}-coefficient sequences",
            a.num_coeffs(),
            b.num_coeffs()
        )));
    }
    let (fa, fb) = (a.frames(), b.frames());
    let m = fb.nrows();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![f64::INFINITY; m];
    for i in 0..fa.nrows() {
        let row = fa.row(i);
        for j in 0..m {
            let cost = euclidean(row, fb.row(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = prev[j];
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let diag = if j > 0 { prev[j - 1] } else { f64::INFINITY };
                up.min(left).min(diag)
            };
            cur[j] = best + cost;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[&[f64]]) -> MfccSequence {
        MfccSequence::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_frames() {
        assert_eq!(dtw(&seq(&[&[0.0]]), &seq(&[&[5.0]])).unwrap(), 5.0);
    }

    #[test]
    fn repeated_frame_warps_for_free() {
        let a = seq(&[&[1.0], &[2.0], &[3.0]]);
        let b = seq(&[&[1.0], &[2.0], &[2.0], &[3.0]]);
        assert_eq!(dtw(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn identity_is_zero() {
        let a = seq(&[&[1.0, 2.0], &[3.0, -1.0], &[0.5, 0.5]]);
        assert_eq!(dtw(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_dimensions() {
        let a = seq(&[&[1.0, 2.0]]);
        let b = seq(&[&[1.0]]);
        assert!(matches!(dtw(&a, &b), Err(Error::Shape(_))));
    }
}
