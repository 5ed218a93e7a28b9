use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, data_err, Result};

/// Shuffled train/validation/test partition. Validation and test sizes are
/// `floor(n * fraction)`; training takes the rest.
pub fn split<T: Clone>(items: &[T], fractions: [f64; 3], seed: u64) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    if items.is_empty() {
        return Err(data_err!("cannot split an empty dataset"));
    }
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(config_err!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        ));
    }
    let n = items.len();
    let take = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
    let (n_val, n_test) = (take(fractions[1]), take(fractions[2]));
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |r: std::ops::Range<usize>| order[r].iter().map(|&i| items[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(0..n_train),
        pick(n_train..n_train + n_val),
        pick(n_train + n_val..n),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_at_eighty_ten_ten() {
        let items: Vec<u32> = (0..30).collect();
        let (tr, va, te) = split(&items, [0.8, 0.1, 0.1], 1).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (24, 3, 3));
        let mut all: Vec<u32> = tr.iter().chain(&va).chain(&te).copied().collect();
        all.sort_unstable();
        assert_eq!(all, items);
        assert_eq!(split(&items, [0.8, 0.1, 0.1], 1).unwrap().1, va);
    }

    #[test]
    fn all_train() {
        let items = [1, 2, 3];
        let (tr, va, te) = split(&items, [1.0, 0.0, 0.0], 0).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (3, 0, 0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(split::<u8>(&[], [1.0, 0.0, 0.0], 0).is_err());
        assert!(split(&[1], [0.5, 0.1, 0.1], 0).is_err());
    }
}
