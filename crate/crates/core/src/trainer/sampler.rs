use rand::seq::SliceRandom;
use rand::Rng;

use crate::trainer::{Sampling, TrainError};

/// `(dataset index, example index)` pairs making up one batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub items: Vec<(usize, usize)>,
}

impl Batch {
    /// Dataset indices present in the batch, ascending.
    pub fn datasets(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.items.iter().map(|&(s, _)| s).collect();
        d.sort_unstable();
        d.dedup();
        d
    }
}

#[derive(Clone, Debug)]
struct Stream {
    order: Vec<(usize, usize)>,
    pos: usize,
}

impl Stream {
    fn remaining(&self) -> usize {
        self.order.len() - self.pos
    }

    fn take(&mut self, n: usize) -> &[(usize, usize)] {
        let s = &self.order[self.pos..self.pos + n];
        self.pos += n;
        s
    }
}

/// Draws batches without replacement from epoch-shuffled streams.
///
/// With [`Sampling::EqualQuota`] each dataset has its own stream and
/// contributes `batch_size / N` examples per batch; the epoch ends as soon
/// as one stream cannot fill its quota, and leftovers are discarded. With
/// [`Sampling::Uniform`] one stream covers all examples and the last batch
/// of an epoch may be short.
#[derive(Clone, Debug)]
pub struct DomainSampler {
    sampling: Sampling,
    batch_size: usize,
    streams: Vec<Stream>,
    epoch: usize,
}

impl DomainSampler {
    pub fn new(
        sizes: &[usize],
        batch_size: usize,
        sampling: Sampling,
        rng: &mut impl Rng,
    ) -> Result<Self, TrainError> {
        if sizes.is_empty() {
            return Err(TrainError::InvalidData("no datasets to sample from".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(TrainError::EmptyDataset(format!("#{i}")));
        }
        if batch_size == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        let streams = match sampling {
            Sampling::EqualQuota => {
                if !batch_size.is_multiple_of(sizes.len()) {
                    return Err(TrainError::Indivisible {
                        batch: batch_size,
                        domains: sizes.len(),
                    });
                }
                let quota = batch_size / sizes.len();
                if let Some(i) = sizes.iter().position(|&s| s < quota) {
                    return Err(TrainError::InvalidData(format!(
                        "dataset #{i} has {} examples, fewer than the per-batch quota {quota}",
                        sizes[i]
                    )));
                }
                sizes
                    .iter()
                    .enumerate()
                    .map(|(d, &n)| Stream {
                        order: (0..n).map(|i| (d, i)).collect(),
                        pos: 0,
                    })
                    .collect()
            }
            Sampling::Uniform => vec![Stream {
                order: sizes
                    .iter()
                    .enumerate()
                    .flat_map(|(d, &n)| (0..n).map(move |i| (d, i)))
                    .collect(),
                pos: 0,
            }],
        };
        let mut s = Self {
            sampling,
            batch_size,
            streams,
            epoch: 0,
        };
        s.shuffle(rng);
        Ok(s)
    }

    fn shuffle(&mut self, rng: &mut impl Rng) {
        for st in &mut self.streams {
            st.order.shuffle(rng);
            st.pos = 0;
        }
    }

    /// Zero-based index of the current epoch.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Reshuffles every stream and starts the next epoch.
    pub fn new_epoch(&mut self, rng: &mut impl Rng) {
        self.epoch += 1;
        self.shuffle(rng);
    }

    /// The next batch, or [`TrainError::Exhausted`] at the end of the epoch.
    pub fn next_batch(&mut self) -> Result<Batch, TrainError> {
        match self.sampling {
            Sampling::EqualQuota => {
                let quota = self.batch_size / self.streams.len();
                if self.streams.iter().any(|s| s.remaining() < quota) {
                    return Err(TrainError::Exhausted);
                }
                let mut items = Vec::with_capacity(self.batch_size);
                for s in &mut self.streams {
                    items.extend_from_slice(s.take(quota));
                }
                Ok(Batch { items })
            }
            Sampling::Uniform => {
                let s = &mut self.streams[0];
                let n = s.remaining().min(self.batch_size);
                if n == 0 {
                    return Err(TrainError::Exhausted);
                }
                Ok(Batch {
                    items: s.take(n).to_vec(),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn epoch(sampler: &mut DomainSampler) -> Vec<Batch> {
        let mut out = Vec::new();
        loop {
            match sampler.next_batch() {
                Ok(b) => out.push(b),
                Err(TrainError::Exhausted) => return out,
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn equal_quota_per_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s =
            DomainSampler::new(&[40, 40, 40, 40], 32, Sampling::EqualQuota, &mut rng).unwrap();
        for b in epoch(&mut s) {
            for d in 0..4 {
                assert_eq!(b.items.iter().filter(|(x, _)| *x == d).count(), 8);
            }
        }
    }

    #[test]
    fn indivisible_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            DomainSampler::new(&[10, 10, 10], 16, Sampling::EqualQuota, &mut rng),
            Err(TrainError::Indivisible {
                batch: 16,
                domains: 3
            })
        ));
        assert!(DomainSampler::new(&[10, 0], 4, Sampling::EqualQuota, &mut rng).is_err());
    }

    #[test]
    fn epochs_reshuffle_deterministically() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut s = DomainSampler::new(&[12, 12], 4, Sampling::EqualQuota, &mut rng).unwrap();
            let a = epoch(&mut s);
            s.new_epoch(&mut rng);
            let b = epoch(&mut s);
            (a, b, s.epoch())
        };
        let (a, b, e) = run();
        assert_ne!(a, b);
        assert_eq!(e, 1);
        assert_eq!(run().0, a);
    }

    proptest! {
        #[test]
        fn every_example_once_per_epoch(
            domains in 1usize..5,
            quota in 1usize..5,
            batches in 1usize..8,
            seed in 0u64..1000,
        ) {
            let size = quota * batches;
            let sizes = vec![size; domains];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for sampling in [Sampling::EqualQuota, Sampling::Uniform] {
                let mut s = DomainSampler::new(&sizes, quota * domains, sampling, &mut rng).unwrap();
                let mut seen: Vec<(usize, usize)> = epoch(&mut s).into_iter().flat_map(|b| b.items).collect();
                seen.sort_unstable();
                let all: Vec<(usize, usize)> = (0..domains).flat_map(|d| (0..size).map(move |i| (d, i))).collect();
                prop_assert_eq!(seen, all);
            }
        }

        #[test]
        fn uniform_covers_unequal_sizes(sizes in prop::collection::vec(1usize..30, 1..4), batch in 1usize..10, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = DomainSampler::new(&sizes, batch, Sampling::Uniform, &mut rng).unwrap();
            let batches = epoch(&mut s);
            prop_assert!(batches.iter().all(|b| !b.items.is_empty() && b.items.len() <= batch));
            prop_assert_eq!(batches.iter().map(|b| b.items.len()).sum::<usize>(), sizes.iter().sum::<usize>());
        }
    }
}
