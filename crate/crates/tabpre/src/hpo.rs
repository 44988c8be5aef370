//! Random-search hyperparameter optimization over the protocol's spaces.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TabError;
use crate::model::{BackboneSpec, EmbeddingSpec, ModelSpec};
use crate::objective;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    None,
    Plr,
    Tlr,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchSpace {
    pub embedding: EmbeddingKind,
    /// The pretraining objective the sampled configs will train (None =
    /// scratch). Objectives that require corruption drop the p = 0 atom.
    pub objective: Option<String>,
    /// Backbone width (the evaluation protocol fixes 512).
    pub layer_size: usize,
}

fn log_uniform(lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp()
}

fn uniform_int(lo: usize, hi: usize, rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(lo..=hi)
}

/// ½-probability atom at `atom`, otherwise a draw from `dist`.
fn mixture(atom: f64, rng: &mut ChaCha8Rng, dist: impl FnOnce(&mut ChaCha8Rng) -> f64) -> f64 {
    if rng.gen::<bool>() {
        atom
    } else {
        dist(rng)
    }
}

/// One fully instantiated trial configuration. `base` supplies the training
/// budgets and flags; lr / wd / dropout / corrupt_p and the model come from
/// the search space.
pub fn sample(
    space: &SearchSpace,
    base: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(ModelSpec, TrainConfig), TabError> {
    let needs_corruption = match &space.objective {
        Some(kind) => objective::create(kind, objective::DEFAULT_TAU)?.needs_corruption(),
        None => false,
    };
    let layers = uniform_int(1, 8, rng);
    let dropout = mixture(0.0, rng, |r| r.gen::<f64>() * 0.5);
    let lr = log_uniform(5e-5, 5e-3, rng);
    let wd = mixture(0.0, rng, |r| log_uniform(1e-6, 1e-3, r));
    let corrupt_p = if needs_corruption {
        0.2 + rng.gen::<f64>() * 0.6
    } else {
        mixture(0.0, rng, |r| 0.2 + r.gen::<f64>() * 0.6)
    };
    let embedding = match space.embedding {
        EmbeddingKind::None => EmbeddingSpec::None,
        EmbeddingKind::Plr => EmbeddingSpec::Plr {
            k: uniform_int(1, 128, rng),
            sigma: log_uniform(0.01, 100.0, rng),
            d_emb: uniform_int(1, 128, rng),
        },
        EmbeddingKind::Tlr => EmbeddingSpec::Tlr {
            max_leaves: uniform_int(2, 256, rng),
            min_leaf: uniform_int(1, 128, rng),
            min_gain: log_uniform(1e-9, 0.01, rng),
            d_emb: uniform_int(1, 128, rng),
        },
    };
    let spec = ModelSpec {
        backbone: BackboneSpec { layers, layer_size: space.layer_size, dropout },
        embedding,
        target_conditioned: false,
    };
    let mut cfg = base.clone();
    cfg.lr = lr;
    cfg.weight_decay = wd;
    cfg.corrupt_p = corrupt_p;
    Ok((spec, cfg))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub model: ModelSpec,
    pub config: TrainConfig,
    /// Oriented score: lower is better.
    pub score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchResult {
    pub trials: Vec<Trial>,
    pub best: usize,
}

/// Random search: draw `n_trials` configurations, score each with the
/// provided oracle (lower is better), return the full log and the argmin.
/// Oracle failures skip the trial and are recorded as +∞.
pub fn random_search(
    space: &SearchSpace,
    base: &TrainConfig,
    n_trials: usize,
    rng: &mut ChaCha8Rng,
    mut oracle: impl FnMut(&ModelSpec, &TrainConfig) -> Result<f64, TabError>,
) -> Result<SearchResult, TabError> {
    if n_trials == 0 {
        return Err(TabError::Config("n_trials must be >= 1".into()));
    }
    let mut trials = Vec::with_capacity(n_trials);
    for index in 0..n_trials {
        let (model, config) = sample(space, base, rng)?;
        let score = match oracle(&model, &config) {
            Ok(s) => s,
            Err(e) => {
                log::warn!("trial {index} failed: {e}");
                f64::INFINITY
            }
        };
        trials.push(Trial { index, model, config, score });
    }
    let best = trials
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.score.partial_cmp(&b.1.score).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    if trials[best].score.is_infinite() {
        return Err(TabError::Train("every trial failed".into()));
    }
    Ok(SearchResult { trials, best })
}
