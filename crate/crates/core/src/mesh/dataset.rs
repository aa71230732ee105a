use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MeshError;

/// Train/test partition.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit<S> {
    pub train: Vec<S>,
    pub test: Vec<S>,
    pub split_fraction: f64,
}

impl<S> DatasetSplit<S> {
    pub fn map<U>(self, mut f: impl FnMut(S) -> U) -> DatasetSplit<U> {
        DatasetSplit {
            train: self.train.into_iter().map(&mut f).collect(),
            test: self.test.into_iter().map(f).collect(),
            split_fraction: self.split_fraction,
        }
    }
}

/// Subject-independent split: a seeded shuffle of the distinct subject
/// ids, the first `round(fraction·subjects)` of which go to training.
/// Items keep their input order within each side.
pub fn split_by_subject<S>(
    items: Vec<(S, u64)>,
    fraction: f64,
    seed: u64,
) -> Result<DatasetSplit<S>, MeshError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MeshError::SplitFraction(fraction));
    }
    let subjects: BTreeSet<u64> = items.iter().map(|(_, s)| *s).collect();
    let mut subjects: Vec<u64> = subjects.into_iter().collect();
    if subjects.len() < 2 {
        return Err(MeshError::Empty("need at least two subjects to split"));
    }
    subjects.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((subjects.len() as f64 * fraction).round() as usize).clamp(1, subjects.len() - 1);
    let train_subjects: BTreeSet<u64> = subjects[..n_train].iter().copied().collect();
    let mut split = DatasetSplit {
        train: Vec::new(),
        test: Vec::new(),
        split_fraction: fraction,
    };
    for (item, subject) in items {
        if train_subjects.contains(&subject) {
            split.train.push(item);
        } else {
            split.test.push(item);
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subjects_never_straddle_the_split() {
        let items: Vec<((u64, u32), u64)> = (0..40u64)
            .flat_map(|s| (0..3u32).map(move |c| ((s, c), s)))
            .collect();
        let split = split_by_subject(items, 0.8, 11).unwrap();
        assert_eq!(split.train.len(), 96);
        assert_eq!(split.test.len(), 24);
        let train: BTreeSet<u64> = split.train.iter().map(|x| x.0).collect();
        assert!(split.test.iter().all(|x| !train.contains(&x.0)));
        for c in 0..3 {
            assert_eq!(split.test.iter().filter(|x| x.1 == c).count(), 8);
        }
    }

    #[test]
    fn fraction_bounds() {
        let items = vec![(0, 0), (1, 1)];
        assert!(split_by_subject(items.clone(), 1.0, 0).is_err());
        assert!(split_by_subject(items, 0.5, 0).is_ok());
    }
}
