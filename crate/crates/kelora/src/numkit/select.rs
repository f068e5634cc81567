//! Order statistics over absolute values.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// k-th smallest absolute value, `k` 1-based.
///
/// Runs in expected O(n) via the standard library's introselect
/// (`select_nth_unstable_by`), which is deterministic: duplicates cannot
/// change the returned value because the k-th order statistic of the
/// multiset `{|v|}` is unique by definition.
pub fn kth_smallest_abs(values: &[f64], k: usize) -> Result<f64> {
    if k == 0 || k > values.len() {
        return Err(Error::RankOutOfRange {
            k,
            len: values.len(),
        });
    }
    let mut scratch: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
    Ok(*kth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::RngStream;

    #[test]
    fn extremes() {
        assert_eq!(kth_smallest_abs(&[3.0, 1.0, 2.0], 1).unwrap(), 1.0);
        assert_eq!(kth_smallest_abs(&[3.0, 1.0, 2.0], 3).unwrap(), 3.0);
    }

    #[test]
    fn signs_are_ignored() {
        assert_eq!(kth_smallest_abs(&[-2.0, 0.5, 1.0, 3.0], 2).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_k() {
        assert!(matches!(
            kth_smallest_abs(&[1.0], 0),
            Err(Error::RankOutOfRange { k: 0, len: 1 })
        ));
        assert!(matches!(
            kth_smallest_abs(&[1.0, 2.0], 3),
            Err(Error::RankOutOfRange { k: 3, len: 2 })
        ));
    }

    #[test]
    fn duplicates_resolve_to_the_order_statistic() {
        let v = [2.0, -2.0, 2.0, 1.0];
        assert_eq!(kth_smallest_abs(&v, 1).unwrap(), 1.0);
        for k in 2..=4 {
            assert_eq!(kth_smallest_abs(&v, k).unwrap(), 2.0);
        }
    }

    #[test]
    fn matches_full_sort_oracle_on_random_vectors() {
        let mut rng = RngStream::new(8881);
        for trial in 0..1000 {
            let len = 1 + rng.next_bounded(64) as usize;
            let values: alloc::vec::Vec<f64> = (0..len)
                .map(|_| rng.next_f64() * 2.0 - 1.0)
                .collect();
            let mut sorted: alloc::vec::Vec<f64> = values.iter().map(|v| v.abs()).collect();
            sorted.sort_by(f64::total_cmp);
            for k in 1..=len {
                assert_eq!(
                    kth_smallest_abs(&values, k).unwrap(),
                    sorted[k - 1],
                    "trial {trial}, k {k}"
                );
            }
        }
    }
}
