use rand::seq::{IteratorRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Val,
    Test,
}

impl SplitRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitRole::Train => "train",
            SplitRole::Val => "val",
            SplitRole::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitRole::Train),
            "val" => Ok(SplitRole::Val),
            "test" => Ok(SplitRole::Test),
            _ => Err(Error::Data(format!("unknown split role {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_frac: f64,
    /// Share of the non-test remainder held out for validation.
    pub val_frac: f64,
    /// Sampled negatives per positive in the balanced subset.
    pub neg_ratio: f64,
    /// Upper bound on the balanced subset size; positives are subsampled
    /// to fit.
    pub max_labels: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_frac: 0.2, val_frac: 0.2, neg_ratio: 1.0, max_labels: None }
    }
}

/// Disjoint train/val/test partition plus the balanced fine-tuning subset
/// drawn from train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub balanced: Vec<usize>,
}

fn take_stratified(pool: &[usize], labels: &[bool], frac: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut taken = Vec::new();
    let mut rest = Vec::new();
    for class in [true, false] {
        let mut members: Vec<usize> = pool.iter().copied().filter(|&i| labels[i] == class).collect();
        members.shuffle(rng);
        let k = (members.len() as f64 * frac).round() as usize;
        taken.extend_from_slice(&members[..k]);
        rest.extend_from_slice(&members[k..]);
    }
    taken.sort_unstable();
    rest.sort_unstable();
    (taken, rest)
}

/// Stratified test split, stratified train/val split of the remainder and a
/// seeded balanced subset of train.
pub fn make_balanced_split(labels: &[bool], cfg: &SplitConfig, seed: u64) -> Result<CohortSplit> {
    if !(0.0..1.0).contains(&cfg.test_frac) || !(0.0..1.0).contains(&cfg.val_frac) {
        return Err(Error::invalid("split fractions must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, val, test) = partition(labels, cfg, &mut rng);
    let balanced = balanced_subset(&train, labels, cfg, &mut rng)?;
    Ok(CohortSplit { train, val, test, balanced })
}

fn partition(labels: &[bool], cfg: &SplitConfig, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let all: Vec<usize> = (0..labels.len()).collect();
    let (test, rest) = take_stratified(&all, labels, cfg.test_frac, rng);
    let (val, train) = take_stratified(&rest, labels, cfg.val_frac, rng);
    (train, val, test)
}

/// The train/val/test partition of [`make_balanced_split`] alone, as one
/// role per subject. Never fails on label balance.
pub fn stratified_roles(labels: &[bool], cfg: &SplitConfig, seed: u64) -> Result<Vec<SplitRole>> {
    if !(0.0..1.0).contains(&cfg.test_frac) || !(0.0..1.0).contains(&cfg.val_frac) {
        return Err(Error::invalid("split fractions must lie in [0, 1)"));
    }
    let (train, val, test) = partition(labels, cfg, &mut ChaCha8Rng::seed_from_u64(seed));
    Ok(CohortSplit { train, val, test, balanced: Vec::new() }.roles(labels.len()))
}

impl CohortSplit {
    /// Keeps a stored partition and draws a new balanced subset with `seed`.
    pub fn from_roles(roles: &[SplitRole], labels: &[bool], cfg: &SplitConfig, seed: u64) -> Result<Self> {
        if roles.len() != labels.len() {
            return Err(Error::shape("split", format!("{} roles for {} labels", roles.len(), labels.len())));
        }
        let pick = |r: SplitRole| (0..roles.len()).filter(|&i| roles[i] == r).collect::<Vec<_>>();
        let (train, val, test) = (pick(SplitRole::Train), pick(SplitRole::Val), pick(SplitRole::Test));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let balanced = balanced_subset(&train, labels, cfg, &mut rng)?;
        Ok(CohortSplit { train, val, test, balanced })
    }

    pub fn roles(&self, n: usize) -> Vec<SplitRole> {
        let mut r = vec![SplitRole::Train; n];
        self.val.iter().for_each(|&i| r[i] = SplitRole::Val);
        self.test.iter().for_each(|&i| r[i] = SplitRole::Test);
        r
    }

    /// Rows allowed into fitting and normalisation statistics.
    pub fn fit_rows(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.train.iter().chain(&self.val).copied().collect();
        v.sort_unstable();
        v
    }

    /// Fails with [`Error::SplitViolation`] if any of `rows` is a test row.
    pub fn guard(&self, rows: &[usize]) -> Result<()> {
        match rows.iter().find(|i| self.test.binary_search(i).is_ok()) {
            Some(&i) => Err(Error::SplitViolation(i)),
            None => Ok(()),
        }
    }
}

fn balanced_subset(train: &[usize], labels: &[bool], cfg: &SplitConfig, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(cfg.neg_ratio > 0.0) {
        return Err(Error::invalid("negative ratio must be positive"));
    }
    let mut pos: Vec<usize> = train.iter().copied().filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = train.iter().copied().filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data(format!("training split has {} positives and {} negatives", pos.len(), neg.len())));
    }
    if let Some(cap) = cfg.max_labels {
        let keep = ((cap as f64 / (1.0 + cfg.neg_ratio)).floor() as usize).max(1);
        if keep < pos.len() {
            pos = pos.into_iter().choose_multiple(rng, keep);
        }
    }
    let k = (pos.len() as f64 * cfg.neg_ratio).round() as usize;
    if k > neg.len() {
        return Err(Error::Data(format!("need {k} negatives for the balanced subset, training split has {}", neg.len())));
    }
    let mut out = pos;
    out.extend(neg.into_iter().choose_multiple(rng, k));
    out.sort_unstable();
    Ok(out)
}
