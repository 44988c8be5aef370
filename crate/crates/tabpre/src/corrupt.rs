//! Input corruption samplers: marginal feature resampling and
//! target-conditional resampling.
//!
//! The mask records the Bernoulli *selection* event per (row, column) — a
//! resampled value may coincide with the original. Replacement rows are
//! drawn independently per cell, and replacement pools come from the train
//! split only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use std::cell::Cell;

use crate::data::{Dataset, TargetCodec};
use crate::error::TabError;
use crate::tensor::Tensor;

thread_local! {
    /// Per-thread count of corruption sampler invocations (each seed's
    /// pipeline runs on one thread). The finetuning stage must leave this
    /// untouched.
    static CALLS: Cell<u64> = const { Cell::new(0) };
}

pub fn corruption_call_count() -> u64 {
    CALLS.with(|c| c.get())
}

/// Read-only view of model-ready features used both as corruption input and
/// as the replacement pool.
#[derive(Clone, Copy)]
pub struct FeatureView<'a> {
    /// n × m_num preprocessed numeric matrix.
    pub x_num: &'a Tensor,
    /// n × m_cat categorical codes, row-major.
    pub cat: &'a [usize],
    pub m_cat: usize,
}

impl<'a> FeatureView<'a> {
    pub fn from_dataset(x_num: &'a Tensor, ds: &'a Dataset) -> Self {
        FeatureView { x_num, cat: &ds.cat, m_cat: ds.m_cat }
    }

    pub fn m_num(&self) -> usize {
        if self.x_num.numel() == 0 {
            0
        } else {
            self.x_num.cols()
        }
    }

    pub fn m_total(&self) -> usize {
        self.m_num() + self.m_cat
    }
}

/// A corrupted batch: features after resampling plus the selection mask
/// (batch × m_total, numeric columns first) and, for conditional corruption,
/// the per-row replacement group ŷ.
#[derive(Clone, Debug)]
pub struct CorruptedBatch {
    pub x_num: Tensor,
    pub cat: Vec<usize>,
    pub mask: Tensor,
    pub replacement_groups: Option<Vec<usize>>,
}

/// Per target class/bin: the train rows carrying that label.
#[derive(Clone, Debug)]
pub struct ConditionalIndex {
    groups: Vec<Vec<usize>>,
}

impl ConditionalIndex {
    pub fn build(ds: &Dataset, codec: &TargetCodec) -> Self {
        let mut groups = vec![Vec::new(); codec.n_groups()];
        for &r in &ds.splits.train {
            groups[codec.group_of(ds, r)].push(r);
        }
        ConditionalIndex { groups }
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn pool(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn non_empty(&self) -> usize {
        self.groups.iter().filter(|g| !g.is_empty()).count()
    }
}

/// Marginal corruption: each selected cell takes column j's value from a
/// uniformly drawn train row.
pub fn corrupt_marginal(
    view: FeatureView,
    batch: &[usize],
    p: f64,
    train_pool: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<CorruptedBatch, TabError> {
    if train_pool.is_empty() {
        return Err(TabError::Data("empty train pool".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(TabError::Config(format!("corrupt probability {p} outside [0,1]")));
    }
    corrupt_with(view, batch, p, rng, |rng, _row| train_pool[rng.gen_range(0..train_pool.len())])
}

/// Uniform replacement target over groups different from the original.
/// Classification draws over the k−1 other classes; regression draws over
/// the non-empty bins excluding the row's own bin.
pub fn sample_replacement_group(
    current: usize,
    index: &ConditionalIndex,
    codec: &TargetCodec,
    rng: &mut ChaCha8Rng,
) -> Result<usize, TabError> {
    let candidates: Vec<usize> = match codec {
        TargetCodec::Classification { k } => (0..*k).filter(|&g| g != current).collect(),
        TargetCodec::Regression { .. } => (0..index.n_groups())
            .filter(|&g| g != current && !index.pool(g).is_empty())
            .collect(),
    };
    if candidates.is_empty() {
        return Err(TabError::Data("degenerate target distribution".into()));
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

const GROUP_RETRIES: usize = 64;

/// Target-conditional corruption: one ŷ per row, each selected cell resampled
/// from a train row whose label/bin equals that row's ŷ.
pub fn corrupt_conditional(
    view: FeatureView,
    batch: &[usize],
    groups_of_batch: &[usize],
    p: f64,
    index: &ConditionalIndex,
    codec: &TargetCodec,
    rng: &mut ChaCha8Rng,
) -> Result<CorruptedBatch, TabError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TabError::Config(format!("corrupt probability {p} outside [0,1]")));
    }
    if index.non_empty() < 2 {
        return Err(TabError::Data("degenerate target distribution".into()));
    }
    let mut replacement_groups = Vec::with_capacity(batch.len());
    for &g in groups_of_batch {
        let mut chosen = None;
        for _ in 0..GROUP_RETRIES {
            let cand = sample_replacement_group(g, index, codec, rng)?;
            if !index.pool(cand).is_empty() {
                chosen = Some(cand);
                break;
            }
        }
        let cand = chosen.ok_or_else(|| {
            TabError::Data("no non-empty conditional pool after bounded retries".into())
        })?;
        replacement_groups.push(cand);
    }
    let mut out = corrupt_with(view, batch, p, rng, |rng, row| {
        let pool = index.pool(replacement_groups[row]);
        pool[rng.gen_range(0..pool.len())]
    })?;
    out.replacement_groups = Some(replacement_groups);
    Ok(out)
}

fn corrupt_with(
    view: FeatureView,
    batch: &[usize],
    p: f64,
    rng: &mut ChaCha8Rng,
    mut donor: impl FnMut(&mut ChaCha8Rng, usize) -> usize,
) -> Result<CorruptedBatch, TabError> {
    CALLS.with(|c| c.set(c.get() + 1));
    let m_num = view.m_num();
    let m_cat = view.m_cat;
    let m = m_num + m_cat;
    let b = batch.len();
    let mut x_num = vec![0.0; b * m_num];
    let mut cat = vec![0usize; b * m_cat];
    let mut mask = vec![0.0; b * m];
    for (i, &row) in batch.iter().enumerate() {
        for j in 0..m_num {
            let selected = p > 0.0 && rng.gen::<f64>() < p;
            let v = if selected {
                mask[i * m + j] = 1.0;
                view.x_num.at(donor(rng, i), j)
            } else {
                view.x_num.at(row, j)
            };
            x_num[i * m_num + j] = v;
        }
        for j in 0..m_cat {
            let selected = p > 0.0 && rng.gen::<f64>() < p;
            let v = if selected {
                mask[i * m + m_num + j] = 1.0;
                view.cat[donor(rng, i) * m_cat + j]
            } else {
                view.cat[row * m_cat + j]
            };
            cat[i * m_cat + j] = v;
        }
    }
    Ok(CorruptedBatch {
        x_num: if m_num == 0 {
            Tensor::matrix(0, 0, vec![]).unwrap_or_else(|_| Tensor::zeros(vec![1, 1]))
        } else {
            Tensor::matrix(b, m_num, x_num)?
        },
        cat,
        mask: Tensor::matrix(b, m, mask)?,
        replacement_groups: None,
    })
}
