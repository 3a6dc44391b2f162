use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const N_SUBSETS: usize = 5;
/// Smallest class size that still gives every dev and test half a sample.
pub const MIN_CLASS_SIZE: usize = 2 * N_SUBSETS;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified partition of indices into five subsets.
///
/// Each class is shuffled and dealt round-robin. The starting subset carries
/// over between classes so subset sizes stay within one of each other.
pub fn stratified_subsets(
    labels: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                n_classes,
            });
        }
        by_class[y].push(i);
    }
    if let Some((class, members)) = by_class
        .iter()
        .enumerate()
        .find(|(_, m)| m.len() < MIN_CLASS_SIZE)
    {
        return Err(Error::ClassTooSmall {
            class,
            count: members.len(),
            needed: MIN_CLASS_SIZE,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subsets = vec![Vec::new(); N_SUBSETS];
    let mut next = 0;
    for mut members in by_class {
        members.shuffle(&mut rng);
        for i in members {
            subsets[next].push(i);
            next = (next + 1) % N_SUBSETS;
        }
    }
    Ok(subsets)
}

/// Five folds: four subsets train, the held-out subset halves into dev and
/// test by alternating positions (subsets are grouped by class, so both
/// halves stay stratified).
pub fn cv_splits(labels: &[usize], n_classes: usize, seed: u64) -> Result<Vec<Fold>> {
    let subsets = stratified_subsets(labels, n_classes, seed)?;
    Ok((0..N_SUBSETS)
        .map(|k| {
            let train = subsets
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, s)| s.iter().copied())
                .collect();
            let (dev, test): (Vec<_>, Vec<_>) = subsets[k]
                .iter()
                .enumerate()
                .partition(|(pos, _)| pos % 2 == 0);
            Fold {
                train,
                dev: dev.into_iter().map(|(_, &i)| i).collect(),
                test: test.into_iter().map(|(_, &i)| i).collect(),
            }
        })
        .collect())
}
