//! Stratified hold-out splits, k-fold partitions and nested cross-validation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn class_indices(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for (i, y) in labels.iter().enumerate() {
        out[(*y == 1) as usize].push(i);
    }
    out
}

/// Per-class quotas of `total` that sum to `round(total * fraction)`, using
/// largest-remainder rounding (ties go to the positive class).
fn largest_remainder(sizes: [usize; 2], fraction: f64) -> [usize; 2] {
    let target = ((sizes[0] + sizes[1]) as f64 * fraction).round() as usize;
    let exact = sizes.map(|n| n as f64 * fraction);
    let mut q = exact.map(|e| e.floor() as usize);
    let mut left = target.saturating_sub(q[0] + q[1]);
    let mut order = [1usize, 0];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra)
    });
    for c in order {
        if left > 0 && q[c] < sizes[c] {
            q[c] += 1;
            left -= 1;
        }
    }
    q
}

/// Stratified development / hold-out split. Both returned lists are sorted.
pub fn stratified_split(labels: &[u8], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let mut classes = class_indices(labels);
    for (c, idx) in classes.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Split(format!("class {c} has {} member(s); need at least 2", idx.len())));
        }
    }
    let quota = largest_remainder([classes[0].len(), classes[1].len()], fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dev, mut hold) = (Vec::new(), Vec::new());
    for (c, idx) in classes.iter_mut().enumerate() {
        idx.shuffle(&mut rng);
        dev.extend_from_slice(&idx[..quota[c]]);
        hold.extend_from_slice(&idx[quota[c]..]);
    }
    dev.sort_unstable();
    hold.sort_unstable();
    Ok((dev, hold))
}

/// Stratified k-fold test folds over positions `0..labels.len()`. Each class
/// is shuffled and dealt round-robin; dealing continues across classes so
/// fold sizes differ by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut classes = class_indices(labels);
    for (c, idx) in classes.iter().enumerate() {
        if idx.len() < k {
            return Err(Error::Split(format!(
                "class {c} has {} member(s); {k} folds need at least {k}",
                idx.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut slot = 0;
    for idx in classes.iter_mut().rev() {
        idx.shuffle(&mut rng);
        for &i in idx.iter() {
            folds[slot % k].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Complement of `fold` within `0..n`.
pub fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; n];
    for &i in fold {
        mark[i] = true;
    }
    (0..n).filter(|i| !mark[*i]).collect()
}

fn has_both(labels: &[u8], idx: &[usize]) -> bool {
    let pos = idx.iter().filter(|i| labels[**i] == 1).count();
    pos > 0 && pos < idx.len()
}

/// Stratified k-fold over a subset of positions; returns `(train, val)`
/// pairs in global indices. A fold with a single class in either part is
/// re-seeded up to three times.
pub fn inner_folds(labels: &[u8], subset: &[usize], k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    let local: Vec<u8> = subset.iter().map(|i| labels[*i]).collect();
    let mut last_err = None;
    for attempt in 0..3u64 {
        let folds = match stratified_kfold(&local, k, seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15))) {
            Ok(f) => f,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let pairs: Vec<(Vec<usize>, Vec<usize>)> = folds
            .iter()
            .map(|f| {
                let val: Vec<usize> = f.iter().map(|i| subset[*i]).collect();
                let train: Vec<usize> = complement(local.len(), f).iter().map(|i| subset[*i]).collect();
                (train, val)
            })
            .collect();
        if pairs.iter().all(|(t, v)| has_both(labels, t) && has_both(labels, v)) {
            return Ok(pairs);
        }
        last_err = Some(Error::Split("degenerate fold with a single class".into()));
    }
    Err(Error::Split(format!(
        "no valid {k}-fold split after 3 attempts: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Tripod2a,
    Nested,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub dev_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        Self {
            mode: SplitMode::Tripod2a,
            outer_folds: 5,
            inner_folds: 5,
            dev_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.dev_fraction > 0.0 && self.dev_fraction < 1.0) {
            return Err(Error::Config(format!(
                "dev_fraction must be in (0, 1), got {}",
                self.dev_fraction
            )));
        }
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(Error::Config("outer_folds and inner_folds must be ≥ 2".into()));
        }
        Ok(())
    }
}

/// Result of one outer iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuterFold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Mean inner-validation AUPRC per candidate.
    pub inner_scores: Vec<f64>,
    pub winner: usize,
    /// Every index that took part in selection (inner train ∪ inner val).
    pub seen_in_selection: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedResult {
    pub folds: Vec<OuterFold>,
    /// Outer-test probability for every patient.
    pub pooled: Vec<f64>,
}

/// Index of the best score; ties go to the earliest candidate.
pub fn argmax_first(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Mean inner-validation score per candidate over `folds`.
pub fn cv_scores<F>(n_candidates: usize, folds: &[(Vec<usize>, Vec<usize>)], mut score: F) -> Result<Vec<f64>>
where
    F: FnMut(usize, &[usize], &[usize]) -> Result<f64>,
{
    let mut out = vec![0.0; n_candidates];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (train, val) in folds {
            acc += score(c, train, val)?;
        }
        *slot = acc / folds.len() as f64;
    }
    Ok(out)
}

/// Nested stratified cross-validation.
///
/// `score(candidate, train, val)` returns the validation AUPRC of a model
/// fitted on `train`; `refit(candidate, train, test)` returns test-set
/// probabilities of the winner refitted on the whole outer training set.
pub fn nested_cv<S, R>(labels: &[u8], n_candidates: usize, plan: &SplitPlan, mut score: S, mut refit: R) -> Result<NestedResult>
where
    S: FnMut(usize, &[usize], &[usize]) -> Result<f64>,
    R: FnMut(usize, &[usize], &[usize]) -> Result<Vec<f64>>,
{
    plan.validate()?;
    if n_candidates == 0 {
        return Err(Error::Config("nested CV needs at least one candidate".into()));
    }
    let outer = stratified_kfold(labels, plan.outer_folds, plan.seed)?;
    let mut pooled = vec![f64::NAN; labels.len()];
    let mut folds = Vec::with_capacity(outer.len());
    for (o, test) in outer.iter().enumerate() {
        let train = complement(labels.len(), test);
        let inner = inner_folds(labels, &train, plan.inner_folds, plan.seed.wrapping_add(1 + o as u64))?;
        let mut seen: Vec<usize> = inner.iter().flat_map(|(t, v)| t.iter().chain(v)).copied().collect();
        seen.sort_unstable();
        seen.dedup();
        let inner_scores = cv_scores(n_candidates, &inner, &mut score)?;
        let winner = argmax_first(&inner_scores);
        let probs = refit(winner, &train, test)?;
        if probs.len() != test.len() {
            return Err(Error::Inference(format!(
                "refit returned {} predictions for {} test patients",
                probs.len(),
                test.len()
            )));
        }
        for (i, p) in test.iter().zip(probs) {
            pooled[*i] = p;
        }
        folds.push(OuterFold {
            train,
            test: test.clone(),
            inner_scores,
            winner,
            seen_in_selection: seen,
        });
    }
    Ok(NestedResult { folds, pooled })
}
