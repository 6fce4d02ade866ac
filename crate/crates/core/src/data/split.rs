use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub seed: u64,
}

/// Shuffles under `seed` and sends the first `ceil(ratio * N)` items to train.
pub fn split_dataset<T: Clone>(items: &[T], ratio: f64, seed: u64) -> Result<DatasetSplit<T>> {
    if items.is_empty() {
        return Err(Error::Validation("cannot split an empty dataset".into()));
    }
    if items.len() < 2 {
        return Err(Error::Validation("a split needs at least 2 items".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Validation(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    let n = items.len();
    // Tolerance absorbs representation error, e.g. 0.7 * 10 = 7.000000000000001.
    let n_train = ((ratio * n as f64) - 1e-9).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val) = order.split_at(n_train.min(n));
    Ok(DatasetSplit {
        train: train.iter().map(|&i| items[i].clone()).collect(),
        val: val.iter().map(|&i| items[i].clone()).collect(),
        seed,
    })
}

/// Index batches for one epoch: a seeded permutation of `0..len` chunked
/// into `batch_size` pieces, with a short final batch when needed.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Validation("batch size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Sequential cursor over the batches of one epoch.
pub struct BatchIterator<'a, T> {
    items: &'a [T],
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl<'a, T> BatchIterator<'a, T> {
    pub fn new(items: &'a [T], batch_size: usize, seed: u64, epoch: u64) -> Result<Self> {
        Ok(Self {
            items,
            batches: epoch_batches(items.len(), batch_size, seed, epoch)?.into_iter(),
        })
    }
}

impl<'a, T> Iterator for BatchIterator<'a, T> {
    type Item = Vec<&'a T>;

    fn next(&mut self) -> Option<Self::Item> {
        self.batches
            .next()
            .map(|idx| idx.into_iter().map(|i| &self.items[i]).collect())
    }
}
