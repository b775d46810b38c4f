use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Family;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config(format!("unknown split '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config(format!("split fractions must lie in [0, 1]: {parts:?}")));
        }
        let total: f64 = parts.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("split fractions sum to {total}, not 1")));
        }
        Ok(())
    }

    /// Split sizes for `n` samples: train and val are rounded, test takes the rest.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub family: Family,
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub fractions: SplitFractions,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}

/// Phantom seed of sample `index` of `family` under a dataset seed.
pub fn sample_seed(dataset_seed: u64, family: Family, index: usize) -> u64 {
    let mut z = dataset_seed
        .wrapping_add(family.tag().wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Family-stratified split: each family's samples are shuffled with a seeded
/// permutation and cut according to `fractions`.
pub fn build_manifest(counts: &[(Family, usize)], fractions: SplitFractions, seed: u64) -> Result<DatasetManifest> {
    fractions.validate()?;
    let mut entries = Vec::new();
    for &(family, n) in counts {
        if counts.iter().filter(|(f, _)| *f == family).count() > 1 {
            return Err(Error::config(format!("family {family} listed twice")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ family.tag()));
        let (train, val, _) = fractions.sizes(n);
        let mut family_entries: Vec<ManifestEntry> = order
            .iter()
            .enumerate()
            .map(|(rank, &index)| ManifestEntry {
                id: format!("{family}-{index:05}"),
                family,
                seed: sample_seed(seed, family, index),
                split: if rank < train {
                    Split::Train
                } else if rank < train + val {
                    Split::Val
                } else {
                    Split::Test
                },
            })
            .collect();
        family_entries.sort_by(|a, b| a.id.cmp(&b.id));
        entries.extend(family_entries);
    }
    Ok(DatasetManifest { entries, fractions })
}
