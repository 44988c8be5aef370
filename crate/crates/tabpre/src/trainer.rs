//! Two-stage pipeline: pretraining with periodic early-stop evaluation,
//! clean finetuning, multi-seed runs, and prediction ensembling.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corrupt::ConditionalIndex;
use crate::data::{batches, Dataset, Prepared, TargetCodec, TaskType};
use crate::error::TabError;
use crate::graph::Graph;
use crate::metrics::{self, MetricKind};
use crate::model::{DatasetMeta, HeadSpec, ModelSpec, ModelState};
use crate::objective::{self, supervised_loss, BatchContext, PretrainObjective};
use crate::optim::AdamW;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Seed offset for the fixed validation-corruption stream, so the early-stop
/// criterion is a deterministic function of the parameters.
const EVAL_CORRUPTION_SEED: u64 = 0x5eed_ea1e;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainStop {
    ByPretrainValLoss,
    ByFinetuneMetric,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Pretraining-stage overrides, read only when share_lr_wd = false.
    #[serde(default)]
    pub pretrain_lr: Option<f64>,
    #[serde(default)]
    pub pretrain_weight_decay: Option<f64>,
    #[serde(default = "default_true")]
    pub share_lr_wd: bool,
    #[serde(default = "default_max_pretrain_iters")]
    pub max_pretrain_iters: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_pretrain_patience")]
    pub pretrain_patience: usize,
    #[serde(default = "default_pretrain_stop")]
    pub pretrain_stop: PretrainStop,
    #[serde(default = "default_max_finetune_epochs")]
    pub max_finetune_epochs: usize,
    #[serde(default = "default_finetune_patience")]
    pub finetune_patience: usize,
    /// Epoch cap for the mode-(b) finetune probe.
    #[serde(default = "default_probe_epochs")]
    pub probe_finetune_epochs: usize,
    pub corrupt_p: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub include_clean_negatives: bool,
    #[serde(default)]
    pub no_finetune: bool,
}

fn default_true() -> bool {
    true
}
fn default_max_pretrain_iters() -> usize {
    100_000
}
fn default_eval_every() -> usize {
    10_000
}
fn default_pretrain_patience() -> usize {
    2
}
fn default_pretrain_stop() -> PretrainStop {
    PretrainStop::ByPretrainValLoss
}
fn default_max_finetune_epochs() -> usize {
    1_000
}
fn default_finetune_patience() -> usize {
    16
}
fn default_probe_epochs() -> usize {
    50
}
fn default_tau() -> f64 {
    objective::DEFAULT_TAU
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TabError> {
        if self.max_pretrain_iters > 0 {
            if self.eval_every == 0 || self.max_pretrain_iters % self.eval_every != 0 {
                return Err(TabError::Config(
                    "eval_every must divide max_pretrain_iters".into(),
                ));
            }
        }
        if self.pretrain_patience < 1 || self.finetune_patience < 1 {
            return Err(TabError::Config("patience must be >= 1".into()));
        }
        if self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(TabError::Config("invalid lr/weight_decay".into()));
        }
        if !(0.0..=1.0).contains(&self.corrupt_p) {
            return Err(TabError::Config("corrupt_p outside [0,1]".into()));
        }
        Ok(())
    }

    fn pretrain_lr_wd(&self) -> (f64, f64) {
        if self.share_lr_wd {
            (self.lr, self.weight_decay)
        } else {
            (
                self.pretrain_lr.unwrap_or(self.lr),
                self.pretrain_weight_decay.unwrap_or(self.weight_decay),
            )
        }
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub val_metric: f64,
    pub test_metric: f64,
    pub pretrain_curve: Vec<f64>,
    pub seconds: f64,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    pub objective: String,
    pub seeds: Vec<SeedOutcome>,
    pub failed_seeds: Vec<u64>,
    pub test_mean: f64,
    pub test_std: f64,
}

impl RunRecord {
    pub fn partial(&self) -> bool {
        !self.failed_seeds.is_empty()
    }

    /// Flat CSV of per-seed metrics.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,val_metric,test_metric,seconds\n");
        for s in &self.seeds {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.seed, s.val_metric, s.test_metric, s.seconds
            ));
        }
        out
    }
}

/// Everything a single-seed run needs. Shared, read-only.
pub struct Pipeline<'a> {
    pub ds: &'a Dataset,
    pub prep: &'a Prepared,
    pub model_spec: ModelSpec,
    pub config: TrainConfig,
    /// None = supervised-from-scratch baseline (no pretraining stage).
    pub objective: Option<String>,
    cond: ConditionalIndex,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        ds: &'a Dataset,
        prep: &'a Prepared,
        model_spec: ModelSpec,
        config: TrainConfig,
        objective: Option<String>,
    ) -> Result<Self, TabError> {
        config.validate()?;
        model_spec.validate()?;
        if let Some(kind) = &objective {
            objective::create_full(kind, config.tau, config.include_clean_negatives)?;
        }
        let cond = ConditionalIndex::build(ds, &prep.codec);
        Ok(Pipeline { ds, prep, model_spec, config, objective, cond })
    }

    pub fn metric_kind(&self) -> MetricKind {
        MetricKind::for_task(self.ds.task, false)
    }

    fn build_objective(&self) -> Result<Option<Box<dyn PretrainObjective>>, TabError> {
        match &self.objective {
            None => Ok(None),
            Some(kind) => Ok(Some(objective::create_full(
                kind,
                self.config.tau,
                self.config.include_clean_negatives,
            )?)),
        }
    }

    pub fn build_model(&self, seed: u64) -> Result<ModelState, TabError> {
        let meta = DatasetMeta::of(self.ds, &self.prep.codec);
        let obj = self.build_objective()?;
        let mut heads = match &obj {
            Some(o) => o.head_specs(&meta, self.model_spec.backbone.layer_size),
            None => Vec::new(),
        };
        if !heads.iter().any(|h| h.name == "g") {
            heads.push(HeadSpec::downstream(&meta));
        }
        let mut spec = self.model_spec.clone();
        if heads.iter().any(|h| h.in_extra > 0) {
            spec.target_conditioned = true;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelState::build(
            spec,
            meta,
            &heads,
            Some((&self.prep.x, self.ds, &self.prep.codec)),
            &mut rng,
        )
    }

    fn batch_context(&self) -> Result<BatchContext<'_>, TabError> {
        Ok(BatchContext {
            ds: self.ds,
            x: &self.prep.x,
            codec: &self.prep.codec,
            cond: Some(&self.cond),
            p: self.config.corrupt_p,
        })
    }

    /// One full seed: build, optionally pretrain, then finetune (or evaluate
    /// the pretrained head directly under no_finetune).
    pub fn run_seed(&self, seed: u64) -> Result<SeedOutcome, TabError> {
        let start = Instant::now();
        self.config.validate()?;
        let mut model = self.build_model(seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
        let mut curve = Vec::new();
        let mut trains_g = false;
        if let Some(obj) = self.build_objective()? {
            trains_g = obj
                .head_specs(&model.meta, self.model_spec.backbone.layer_size)
                .iter()
                .any(|h| h.name == "g");
            curve = self.pretrain(&mut model, obj.as_ref(), &mut rng)?;
        }
        let (val_metric, test_metric) = if self.config.no_finetune {
            if !trains_g {
                return Err(TabError::Train(
                    "no_finetune requires an objective that trains the downstream head".into(),
                ));
            }
            (
                self.evaluate(&model, &self.ds.splits.val)?,
                self.evaluate(&model, &self.ds.splits.test)?,
            )
        } else {
            self.finetune(&mut model, &mut rng, self.config.max_finetune_epochs)?
        };
        Ok(SeedOutcome {
            seed,
            val_metric,
            test_metric,
            pretrain_curve: curve,
            seconds: start.elapsed().as_secs_f64(),
            checkpoint: None,
        })
    }

    /// Optimizes the pretraining objective, evaluating every `eval_every`
    /// iterations; restores the best snapshot into `model`. Returns the
    /// criterion curve (one point per evaluation).
    pub fn pretrain(
        &self,
        model: &mut ModelState,
        obj: &dyn PretrainObjective,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>, TabError> {
        let cfg = &self.config;
        if cfg.max_pretrain_iters == 0 {
            return Ok(Vec::new());
        }
        let (lr, wd) = cfg.pretrain_lr_wd();
        let mut opt = AdamW::new(&model.params, lr, wd)?;
        let ctx = self.batch_context()?;
        let mut iter = 0usize;
        let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
        let mut since_best = 0usize;
        let mut curve = Vec::new();
        'outer: loop {
            for batch in batches(&self.ds.splits.train, self.ds.batch_size, Some(rng)) {
                if batch.len() < 2 {
                    continue; // degenerate tail batch, no negatives / unstable stats
                }
                let composed = obj.compose(model, &ctx, &batch, rng)?;
                let eval = composed
                    .graph
                    .forward(&model.params, rng, true)
                    .map_err(|e| TabError::Train(format!("pretrain diverged: {e}")))?;
                let grads = composed.graph.backward(&eval, composed.total, &model.params)?;
                opt.step(&mut model.params, &grads)?;
                iter += 1;
                if iter % cfg.eval_every == 0 {
                    let criterion = match cfg.pretrain_stop {
                        PretrainStop::ByPretrainValLoss => {
                            self.pretrain_val_loss(model, obj, &ctx)?
                        }
                        PretrainStop::ByFinetuneMetric => {
                            // clone → short finetune → oriented val metric,
                            // negated so that lower is better uniformly
                            let mut probe = model.clone();
                            let mut probe_rng = ChaCha8Rng::seed_from_u64(
                                EVAL_CORRUPTION_SEED ^ iter as u64,
                            );
                            let (val, _) = self.finetune(
                                &mut probe,
                                &mut probe_rng,
                                cfg.probe_finetune_epochs,
                            )?;
                            -self.metric_kind().oriented(val)
                        }
                    };
                    curve.push(criterion);
                    let improved = best.as_ref().map_or(true, |(b, _)| criterion < *b);
                    if improved {
                        best = Some((criterion, snapshot(&model.params)));
                        since_best = 0;
                    } else {
                        since_best += 1;
                        if since_best >= cfg.pretrain_patience {
                            break 'outer;
                        }
                    }
                }
                if iter >= cfg.max_pretrain_iters {
                    break 'outer;
                }
            }
        }
        if let Some((_, snap)) = best {
            restore(&mut model.params, &snap);
        }
        Ok(curve)
    }

    /// Mode (a) criterion: mean objective value over the validation split,
    /// corrupted with a fixed seed, dropout off.
    fn pretrain_val_loss(
        &self,
        model: &ModelState,
        obj: &dyn PretrainObjective,
        ctx: &BatchContext,
    ) -> Result<f64, TabError> {
        let mut rng = ChaCha8Rng::seed_from_u64(EVAL_CORRUPTION_SEED);
        let mut total = 0.0;
        let mut n = 0usize;
        for batch in batches(&self.ds.splits.val, self.ds.batch_size, None) {
            if batch.len() < 2 {
                continue;
            }
            let composed = obj.compose(model, ctx, &batch, &mut rng)?;
            let eval = composed.graph.forward(&model.params, &mut rng, false)?;
            total += eval.value(composed.total).item() * batch.len() as f64;
            n += batch.len();
        }
        if n == 0 {
            return Err(TabError::Train("validation split too small to evaluate".into()));
        }
        Ok(total / n as f64)
    }

    /// Supervised training on CLEAN inputs from the current backbone, with a
    /// freshly initialized downstream head. Early-stops on the validation
    /// metric (one evaluation per epoch, patience evaluations without
    /// improvement). Restores the best snapshot and returns (val, test).
    pub fn finetune(
        &self,
        model: &mut ModelState,
        rng: &mut ChaCha8Rng,
        max_epochs: usize,
    ) -> Result<(f64, f64), TabError> {
        let cfg = &self.config;
        model.reinit_head("g", rng)?;
        let mut opt = AdamW::new(&model.params, cfg.lr, cfg.weight_decay)?;
        let kind = self.metric_kind();
        let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
        let mut since_best = 0usize;
        for _epoch in 0..max_epochs {
            for batch in batches(&self.ds.splits.train, self.ds.batch_size, Some(rng)) {
                if batch.is_empty() {
                    continue;
                }
                let (x, cat) = gather(&self.prep.x, self.ds, &batch);
                let mut g = Graph::new();
                let z = model.backbone_forward(&mut g, &x, &cat, true)?;
                let logits = model.head_forward(&mut g, z, "g", None)?;
                let loss =
                    supervised_loss(&mut g, logits, self.ds, &self.prep.codec, &batch)?;
                let eval = g
                    .forward(&model.params, rng, true)
                    .map_err(|e| TabError::Train(format!("finetune diverged: {e}")))?;
                let grads = g.backward(&eval, loss, &model.params)?;
                opt.step(&mut model.params, &grads)?;
            }
            let val = self.evaluate(model, &self.ds.splits.val)?;
            let oriented = kind.oriented(val);
            let improved = best.as_ref().map_or(true, |(b, _)| oriented > *b);
            if improved {
                best = Some((oriented, snapshot(&model.params)));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.finetune_patience {
                    break;
                }
            }
        }
        if let Some((_, snap)) = &best {
            restore(&mut model.params, snap);
        }
        let val = self.evaluate(model, &self.ds.splits.val)?;
        let test = self.evaluate(model, &self.ds.splits.test)?;
        Ok((val, test))
    }

    /// Raw downstream-head outputs over `rows`, eval mode, in prediction
    /// space (unscaled values / probabilities).
    pub fn predict(&self, model: &ModelState, rows: &[usize]) -> Result<Vec<Vec<f64>>, TabError> {
        let mut out = Vec::with_capacity(rows.len());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for batch in batches(rows, self.ds.batch_size, None) {
            let (x, cat) = gather(&self.prep.x, self.ds, &batch);
            let mut g = Graph::new();
            let z = model.backbone_forward(&mut g, &x, &cat, false)?;
            let logits = model.head_forward(&mut g, z, "g", None)?;
            let eval = g.forward(&model.params, &mut rng, false)?;
            let t = eval.value(logits);
            for r in 0..t.rows() {
                out.push(to_prediction_space(t.row(r), self.ds.task, &self.prep.codec));
            }
        }
        Ok(out)
    }

    pub fn evaluate(&self, model: &ModelState, rows: &[usize]) -> Result<f64, TabError> {
        let preds = self.predict(model, rows)?;
        metric_of(self.metric_kind(), &preds, self.ds, rows)
    }

    /// n independent (pretrain + finetune) runs.
    pub fn run_seeds(&self, seeds: &[u64]) -> Result<RunRecord, TabError> {
        let mut outcomes = Vec::new();
        let mut failed = Vec::new();
        for &seed in seeds {
            match self.run_seed(seed) {
                Ok(o) => outcomes.push(o),
                Err(e) => {
                    log::warn!("seed {seed} failed: {e}");
                    failed.push(seed);
                }
            }
        }
        if outcomes.is_empty() {
            return Err(TabError::Train("all seeds failed".into()));
        }
        let metrics: Vec<f64> = outcomes.iter().map(|o| o.test_metric).collect();
        let mean = metrics.iter().sum::<f64>() / metrics.len() as f64;
        let var = metrics.iter().map(|m| (m - mean).powi(2)).sum::<f64>()
            / metrics.len() as f64;
        Ok(RunRecord {
            config_hash: self.config.hash(),
            objective: self.objective.clone().unwrap_or_else(|| "scratch".into()),
            seeds: outcomes,
            failed_seeds: failed,
            test_mean: mean,
            test_std: var.sqrt(),
        })
    }

    /// Per-seed test predictions for ensembling. `efficient` pretrains once
    /// (first seed) and reuses the checkpoint across all finetune seeds;
    /// `standard` runs the full pipeline per seed.
    pub fn seed_predictions(
        &self,
        seeds: &[u64],
        mode: EnsembleMode,
    ) -> Result<Vec<Vec<Vec<f64>>>, TabError> {
        self.config.validate()?;
        let shared = match mode {
            EnsembleMode::Standard => None,
            EnsembleMode::Efficient => {
                let mut model = self.build_model(seeds[0])?;
                if let Some(obj) = self.build_objective()? {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        seeds[0].wrapping_mul(0x9e37_79b9).wrapping_add(1),
                    );
                    self.pretrain(&mut model, obj.as_ref(), &mut rng)?;
                }
                Some(model)
            }
        };
        let mut preds = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut model = match &shared {
                Some(m) => m.clone(),
                None => {
                    let mut m = self.build_model(seed)?;
                    if let Some(obj) = self.build_objective()? {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            seed.wrapping_mul(0x9e37_79b9).wrapping_add(1),
                        );
                        self.pretrain(&mut m, obj.as_ref(), &mut rng)?;
                    }
                    m
                }
            };
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x517c_c1b7).wrapping_add(7));
            self.finetune(&mut model, &mut rng, self.config.max_finetune_epochs)?;
            preds.push(self.predict(&model, &self.ds.splits.test)?);
        }
        Ok(preds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Standard,
    Efficient,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub group_metrics: Vec<f64>,
    pub mean: f64,
}

/// Splits 15 prediction sets into 3 disjoint groups of 5, averages
/// predictions (already in prediction space) within each group, and scores
/// each group.
pub fn ensemble_metric(
    preds: &[Vec<Vec<f64>>],
    kind: MetricKind,
    ds: &Dataset,
    rows: &[usize],
) -> Result<EnsembleResult, TabError> {
    if preds.len() != 15 {
        return Err(TabError::Train(format!(
            "ensembling needs exactly 15 prediction sets, got {}",
            preds.len()
        )));
    }
    let mut group_metrics = Vec::with_capacity(3);
    for group in preds.chunks(5) {
        let n = rows.len();
        let w = group[0][0].len();
        let mut avg = vec![vec![0.0; w]; n];
        for p in group {
            if p.len() != n {
                return Err(TabError::Train("prediction sets have unequal length".into()));
            }
            for (a, row) in avg.iter_mut().zip(p) {
                for (x, v) in a.iter_mut().zip(row) {
                    *x += v / 5.0;
                }
            }
        }
        group_metrics.push(metric_of(kind, &avg, ds, rows)?);
    }
    let mean = group_metrics.iter().sum::<f64>() / 3.0;
    Ok(EnsembleResult { group_metrics, mean })
}

// ---------------------------------------------------------------------------
// helpers

pub fn gather(x: &Tensor, ds: &Dataset, rows: &[usize]) -> (Tensor, Vec<usize>) {
    let m_num = ds.m_num();
    let mut num = Vec::with_capacity(rows.len() * m_num);
    let mut cat = Vec::with_capacity(rows.len() * ds.m_cat);
    for &r in rows {
        if m_num > 0 {
            num.extend_from_slice(x.row(r));
        }
        for c in 0..ds.m_cat {
            cat.push(ds.cat_code(r, c));
        }
    }
    let t = if m_num > 0 {
        Tensor::matrix(rows.len(), m_num, num).expect("gather shape")
    } else {
        Tensor::zeros(vec![rows.len(), 0])
    };
    (t, cat)
}

fn snapshot(params: &ParamSet) -> Vec<Vec<f64>> {
    params.iter().map(|(_, t)| t.data().to_vec()).collect()
}

fn restore(params: &mut ParamSet, snap: &[Vec<f64>]) {
    for (i, values) in snap.iter().enumerate() {
        params.tensor_mut(i).data_mut().copy_from_slice(values);
    }
}

/// Raw head outputs → prediction space: unscaled values for regression,
/// probabilities for classification.
pub fn to_prediction_space(raw: &[f64], task: TaskType, codec: &TargetCodec) -> Vec<f64> {
    match task {
        TaskType::Regression => vec![codec.unscale(raw[0])],
        TaskType::Binclass => vec![1.0 / (1.0 + (-raw[0]).exp())],
        TaskType::Multiclass => {
            let m = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.iter().map(|e| e / z).collect()
        }
    }
}

/// Scores prediction-space outputs against the raw targets.
pub fn metric_of(
    kind: MetricKind,
    preds: &[Vec<f64>],
    ds: &Dataset,
    rows: &[usize],
) -> Result<f64, TabError> {
    match kind {
        MetricKind::Rmse => {
            let p: Vec<f64> = preds.iter().map(|v| v[0]).collect();
            let y: Vec<f64> = rows.iter().map(|&r| ds.y.float(r)).collect();
            metrics::rmse(&p, &y)
        }
        MetricKind::Accuracy => {
            let y: Vec<usize> = rows.iter().map(|&r| ds.y.class(r)).collect();
            let logits: Vec<Vec<f64>> = preds
                .iter()
                .map(|v| {
                    if v.len() == 1 {
                        vec![1.0 - v[0], v[0]]
                    } else {
                        v.clone()
                    }
                })
                .collect();
            metrics::accuracy(&logits, &y)
        }
        MetricKind::RocAuc => {
            let scores: Vec<f64> = preds.iter().map(|v| *v.last().unwrap()).collect();
            let y: Vec<usize> = rows.iter().map(|&r| ds.y.class(r)).collect();
            metrics::roc_auc(&scores, &y)
        }
        MetricKind::Logloss => {
            let y: Vec<usize> = rows.iter().map(|&r| ds.y.class(r)).collect();
            let probs: Vec<Vec<f64>> = preds
                .iter()
                .map(|v| if v.len() == 1 { vec![1.0 - v[0], v[0]] } else { v.clone() })
                .collect();
            metrics::logloss(&probs, &y)
        }
    }
}
