use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::label::{Level, NUM_LEVELS};
use crate::rng::Rng;

/// Classes smaller than this are pooled and split without stratification.
pub const MIN_STRATUM: usize = 5;

/// Split labels for a dataset plus any stratification warnings.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub assignment: Vec<Split>,
    pub warnings: Vec<String>,
}

impl SplitPlan {
    pub fn counts(&self) -> (usize, usize, usize) {
        let n = |want| self.assignment.iter().filter(|&&s| s == want).count();
        (n(Split::Train), n(Split::Test), n(Split::Validation))
    }
}

/// 60/20/20 stratified assignment.
///
/// Overall train size is `floor(0.6 N)`; the remainder is halved with the
/// test set taking the odd sample. Per-class quotas are apportioned by largest
/// remainder so each class is within one sample of its proportional share.
pub fn split_assignment(labels: &[Level], seed: u64) -> Result<SplitPlan> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset("cannot split an empty dataset".into()));
    }
    if labels.len() < MIN_STRATUM {
        return Err(Error::TooFewSamples {
            found: labels.len(),
            min: MIN_STRATUM,
        });
    }
    let mut by_class: [Vec<usize>; NUM_LEVELS] = Default::default();
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }

    let mut warnings = Vec::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut pooled = Vec::new();
    for (level, members) in Level::ALL.iter().zip(by_class) {
        if members.is_empty() {
            continue;
        }
        if members.len() < MIN_STRATUM {
            warnings.push(format!(
                "class {level} has {} samples (< {MIN_STRATUM}); split without stratification",
                members.len()
            ));
            pooled.extend(members);
        } else {
            groups.push(members);
        }
    }
    if !pooled.is_empty() {
        pooled.sort_unstable();
        groups.push(pooled);
    }

    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let n: usize = sizes.iter().sum();
    let train_total = 3 * n / 5;
    let train = apportion(&sizes, train_total, |s| (3 * s / 5, (3 * s) % 5));
    let rest: Vec<usize> = sizes.iter().zip(&train).map(|(s, t)| s - t).collect();
    let test_total = (n - train_total).div_ceil(2);
    let test = apportion(&rest, test_total, |r| (r / 2, r % 2));

    let mut assignment = vec![Split::Validation; labels.len()];
    for (g, members) in groups.iter_mut().enumerate() {
        Rng::derive(seed, g as u64).shuffle(members);
        for (k, &i) in members.iter().enumerate() {
            assignment[i] = if k < train[g] {
                Split::Train
            } else if k < train[g] + test[g] {
                Split::Test
            } else {
                Split::Validation
            };
        }
    }
    Ok(SplitPlan { assignment, warnings })
}

/// Floors plus largest-remainder top-up; ties go to the earlier group.
fn apportion(sizes: &[usize], total: usize, share: impl Fn(usize) -> (usize, usize)) -> Vec<usize> {
    let parts: Vec<(usize, usize)> = sizes.iter().map(|&s| share(s)).collect();
    let mut out: Vec<usize> = parts.iter().map(|p| p.0).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| parts[b].1.cmp(&parts[a].1).then(a.cmp(&b)));
    let deficit = total - out.iter().sum::<usize>();
    for &g in order.iter().take(deficit) {
        out[g] += 1;
    }
    out
}

/// Returns a copy of `dataset` with a fresh split assignment.
pub fn split(dataset: &Dataset, seed: u64) -> Result<Dataset> {
    let plan = split_assignment(&dataset.labels(), seed)?;
    for w in &plan.warnings {
        log::warn!("{w}");
    }
    Dataset::with_split(dataset.samples().to_vec(), plan.assignment)
}
