//! The nine pretraining objectives, behind a common trait and a by-name
//! registry. Each objective assembles a loss tape for one batch; the trainer
//! owns forward/backward/step.

use rand_chacha::ChaCha8Rng;

use crate::corrupt::{
    corrupt_conditional, corrupt_marginal, ConditionalIndex, CorruptedBatch, FeatureView,
};
use crate::data::{Dataset, TargetCodec, TaskType};
use crate::error::TabError;
use crate::graph::{Graph, NodeId};
use crate::model::{DatasetMeta, HeadSpec, ModelState, CONTRASTIVE_PROJ_DIM};
use crate::tensor::Tensor;

pub const DEFAULT_TAU: f64 = 1.0;

/// A loss tape for one batch: total plus named terms for logging.
pub struct ComposedLoss {
    pub graph: Graph,
    pub total: NodeId,
    pub terms: Vec<(String, NodeId)>,
}

/// Everything an objective needs besides the model and the batch.
pub struct BatchContext<'a> {
    pub ds: &'a Dataset,
    /// Preprocessed numeric matrix, all rows.
    pub x: &'a Tensor,
    pub codec: &'a TargetCodec,
    pub cond: Option<&'a ConditionalIndex>,
    pub p: f64,
}

pub trait PretrainObjective {
    fn name(&self) -> &'static str;
    /// Whether p = 0 makes the objective degenerate (HPO excludes the zero
    /// atom for these).
    fn needs_corruption(&self) -> bool;
    fn is_target_aware(&self) -> bool;
    fn uses_conditional_corruption(&self) -> bool {
        false
    }
    /// Pretraining heads this objective trains, on top of the backbone.
    fn head_specs(&self, meta: &DatasetMeta, hidden: usize) -> Vec<HeadSpec>;
    fn compose(
        &self,
        model: &ModelState,
        ctx: &BatchContext,
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<ComposedLoss, TabError>;
}

pub const KINDS: &[&str] = &[
    "contrastive",
    "rec",
    "mask",
    "sup",
    "supcon",
    "rec_sup",
    "mask_sup",
    "rec_target",
    "mask_target",
];

pub fn create(kind: &str, tau: f64) -> Result<Box<dyn PretrainObjective>, TabError> {
    create_full(kind, tau, false)
}

/// `include_clean_negatives` widens the contrastive candidate set with the
/// other clean anchors (a config switch; the default follows SCARF and uses
/// only corrupted views).
pub fn create_full(
    kind: &str,
    tau: f64,
    include_clean_negatives: bool,
) -> Result<Box<dyn PretrainObjective>, TabError> {
    if tau <= 0.0 {
        return Err(TabError::Objective("temperature must be positive".into()));
    }
    Ok(match kind {
        "contrastive" => Box::new(Contrastive { tau, include_clean_negatives }),
        "rec" => Box::new(Rec { target_conditioned: false, with_sup: false }),
        "mask" => Box::new(Mask { target_conditioned: false, with_sup: false }),
        "sup" => Box::new(Sup),
        "supcon" => Box::new(SupCon { tau }),
        "rec_sup" => Box::new(Rec { target_conditioned: false, with_sup: true }),
        "mask_sup" => Box::new(Mask { target_conditioned: false, with_sup: true }),
        "rec_target" => Box::new(Rec { target_conditioned: true, with_sup: false }),
        "mask_target" => Box::new(Mask { target_conditioned: true, with_sup: false }),
        other => {
            return Err(TabError::Objective(format!("unknown objective kind '{other}'")))
        }
    })
}

// ---------------------------------------------------------------------------
// standalone loss builders (also the unit-testable surface)

/// InfoNCE over clean anchors and corrupted positives. Both inputs are raw
/// projections; L2 normalization happens here. Row i's positive is row i of
/// `positives`; all other rows of `positives` are its negatives.
pub fn contrastive_loss(
    g: &mut Graph,
    anchors: NodeId,
    positives: NodeId,
    tau: f64,
) -> Result<NodeId, TabError> {
    contrastive_loss_full(g, anchors, positives, tau, false)
}

/// With `include_clean_negatives`, anchor i's denominator also runs over the
/// other clean anchors (self-similarity excluded).
pub fn contrastive_loss_full(
    g: &mut Graph,
    anchors: NodeId,
    positives: NodeId,
    tau: f64,
    include_clean_negatives: bool,
) -> Result<NodeId, TabError> {
    let batch = g.rows(anchors);
    if batch < 2 {
        return Err(TabError::Objective("contrastive requires negatives".into()));
    }
    let a = g.row_l2_normalize(anchors);
    let p = g.row_l2_normalize(positives);
    let sim = g.matmul_nt(a, p)?;
    let logits = if include_clean_negatives {
        let self_sim = g.matmul_nt(a, a)?;
        let mut diag = vec![0.0; batch * batch];
        for i in 0..batch {
            diag[i * batch + i] = -1e30 * tau; // cancel the 1/τ scale below
        }
        let mask = g.constant(Tensor::matrix(batch, batch, diag)?);
        let masked = g.add(self_sim, mask)?;
        g.concat_cols(&[sim, masked])?
    } else {
        sim
    };
    let scaled = g.scale(logits, 1.0 / tau);
    g.softmax_cross_entropy(scaled, (0..batch).collect())
}

/// Supervised contrastive loss over one batch of projections. Positives of
/// anchor i are the other rows sharing its label; the denominator runs over
/// all rows except i. Anchors without positives are skipped.
pub fn supcon_loss(
    g: &mut Graph,
    emb: NodeId,
    labels: &[usize],
    tau: f64,
) -> Result<NodeId, TabError> {
    let batch = g.rows(emb);
    if labels.len() != batch {
        return Err(TabError::Objective("supcon: label count mismatch".into()));
    }
    if batch < 2 {
        return Err(TabError::Objective("supcon requires at least 2 samples".into()));
    }
    let mut weights = vec![0.0; batch * batch];
    let mut n_anchors = 0usize;
    for i in 0..batch {
        let positives: Vec<usize> =
            (0..batch).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        n_anchors += 1;
        for &j in &positives {
            weights[i * batch + j] = 1.0 / positives.len() as f64;
        }
    }
    if n_anchors == 0 {
        return Err(TabError::Objective("supcon: no anchor has a positive".into()));
    }
    for w in weights.iter_mut() {
        *w /= -(n_anchors as f64);
    }
    let norm = g.row_l2_normalize(emb);
    let sim = g.matmul_nt(norm, norm)?;
    let scaled = g.scale(sim, 1.0 / tau);
    // exclude self-similarity from every denominator
    let mut diag = vec![0.0; batch * batch];
    for i in 0..batch {
        diag[i * batch + i] = -1e30;
    }
    let mask = g.constant(Tensor::matrix(batch, batch, diag)?);
    let masked = g.add(scaled, mask)?;
    let logp = g.log_softmax_rows(masked);
    g.weighted_sum(logp, Tensor::matrix(batch, batch, weights)?)
}

/// Reconstruction loss in preprocessed space, averaged over ALL cells:
/// squared error for numeric columns, cross-entropy per categorical column.
pub fn reconstruction_loss(
    g: &mut Graph,
    h_out: NodeId,
    clean_num: &Tensor,
    clean_cat: &[usize],
    cardinalities: &[usize],
) -> Result<NodeId, TabError> {
    let m_num = if clean_num.numel() == 0 { 0 } else { clean_num.cols() };
    let m_cat = cardinalities.len();
    let m_total = m_num + m_cat;
    if m_total == 0 {
        return Err(TabError::Objective("reconstruction: no columns".into()));
    }
    let expected = m_num + cardinalities.iter().sum::<usize>();
    if g.cols(h_out) != expected {
        return Err(TabError::Objective(format!(
            "reconstruction head width {} != expected {expected}",
            g.cols(h_out)
        )));
    }
    let batch = g.rows(h_out);
    let mut terms: Vec<NodeId> = Vec::new();
    if m_num > 0 {
        let num_block = g.slice_cols(h_out, 0, m_num)?;
        let mse = g.mse_mean(num_block, clean_num.clone())?;
        terms.push(g.scale(mse, m_num as f64 / m_total as f64));
    }
    let mut off = m_num;
    for (c, &card) in cardinalities.iter().enumerate() {
        let block = g.slice_cols(h_out, off, off + card)?;
        off += card;
        let targets: Vec<usize> = (0..batch).map(|r| clean_cat[r * m_cat + c]).collect();
        let ce = g.softmax_cross_entropy(block, targets)?;
        terms.push(g.scale(ce, 1.0 / m_total as f64));
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(total)
}

/// Mean binary cross-entropy between per-column mask logits and the
/// selection mask.
pub fn mask_loss(g: &mut Graph, logits: NodeId, mask: &Tensor) -> Result<NodeId, TabError> {
    g.bce_with_logits(logits, mask.clone())
}

/// Task-appropriate supervised loss of head outputs against the true targets.
pub fn supervised_loss(
    g: &mut Graph,
    logits: NodeId,
    ds: &Dataset,
    codec: &TargetCodec,
    batch: &[usize],
) -> Result<NodeId, TabError> {
    match ds.task {
        TaskType::Regression => {
            let t: Vec<f64> = batch.iter().map(|&r| codec.scale(ds.y.float(r))).collect();
            g.mse_mean(logits, Tensor::matrix(batch.len(), 1, t)?)
        }
        TaskType::Binclass => {
            let t: Vec<f64> = batch.iter().map(|&r| ds.y.class(r) as f64).collect();
            g.bce_with_logits(logits, Tensor::matrix(batch.len(), 1, t)?)
        }
        TaskType::Multiclass => {
            let t: Vec<usize> = batch.iter().map(|&r| ds.y.class(r)).collect();
            g.softmax_cross_entropy(logits, t)
        }
    }
}

// ---------------------------------------------------------------------------
// shared wiring

fn gather_clean(ctx: &BatchContext, batch: &[usize]) -> (Tensor, Vec<usize>) {
    let m_num = if ctx.x.numel() == 0 { 0 } else { ctx.x.cols() };
    let mut num = Vec::with_capacity(batch.len() * m_num);
    let mut cat = Vec::with_capacity(batch.len() * ctx.ds.m_cat);
    for &r in batch {
        if m_num > 0 {
            num.extend_from_slice(ctx.x.row(r));
        }
        for c in 0..ctx.ds.m_cat {
            cat.push(ctx.ds.cat_code(r, c));
        }
    }
    let t = if m_num > 0 {
        Tensor::matrix(batch.len(), m_num, num).expect("gather shape")
    } else {
        Tensor::zeros(vec![batch.len(), 0])
    };
    (t, cat)
}

fn corrupt(
    ctx: &BatchContext,
    batch: &[usize],
    conditional: bool,
    rng: &mut ChaCha8Rng,
) -> Result<CorruptedBatch, TabError> {
    let view = FeatureView::from_dataset(ctx.x, ctx.ds);
    if conditional {
        let index = ctx.cond.ok_or_else(|| {
            TabError::Objective("conditional corruption requires a target index".into())
        })?;
        let groups: Vec<usize> =
            batch.iter().map(|&r| ctx.codec.group_of(ctx.ds, r)).collect();
        corrupt_conditional(view, batch, &groups, ctx.p, index, ctx.codec, rng)
    } else {
        corrupt_marginal(view, batch, ctx.p, &ctx.ds.splits.train, rng)
    }
}

fn target_encoding(ctx: &BatchContext, batch: &[usize]) -> Result<Tensor, TabError> {
    let width = ctx.codec.width();
    let mut data = Vec::with_capacity(batch.len() * width);
    for &r in batch {
        data.extend(ctx.codec.encode(ctx.ds, r));
    }
    Tensor::matrix(batch.len(), width, data)
}

// ---------------------------------------------------------------------------
// the nine kinds

struct Contrastive {
    tau: f64,
    include_clean_negatives: bool,
}

impl PretrainObjective for Contrastive {
    fn name(&self) -> &'static str {
        "contrastive"
    }
    fn needs_corruption(&self) -> bool {
        true
    }
    fn is_target_aware(&self) -> bool {
        false
    }
    fn head_specs(&self, _meta: &DatasetMeta, hidden: usize) -> Vec<HeadSpec> {
        vec![HeadSpec {
            name: "h".into(),
            in_extra: 0,
            hidden: Some(hidden),
            out: CONTRASTIVE_PROJ_DIM,
        }]
    }
    fn compose(
        &self,
        model: &ModelState,
        ctx: &BatchContext,
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<ComposedLoss, TabError> {
        let (clean_num, clean_cat) = gather_clean(ctx, batch);
        let cb = corrupt(ctx, batch, false, rng)?;
        let mut g = Graph::new();
        let z_clean = model.backbone_forward(&mut g, &clean_num, &clean_cat, true)?;
        let z_cor = model.backbone_forward(&mut g, &cb.x_num, &cb.cat, true)?;
        let p_clean = model.head_forward(&mut g, z_clean, "h", None)?;
        let p_cor = model.head_forward(&mut g, z_cor, "h", None)?;
        let total =
            contrastive_loss_full(&mut g, p_clean, p_cor, self.tau, self.include_clean_negatives)?;
        Ok(ComposedLoss { graph: g, total, terms: vec![("contrastive".into(), total)] })
    }
}

struct Rec {
    target_conditioned: bool,
    with_sup: bool,
}

impl PretrainObjective for Rec {
    fn name(&self) -> &'static str {
        if self.target_conditioned {
            "rec_target"
        } else if self.with_sup {
            "rec_sup"
        } else {
            "rec"
        }
    }
    fn needs_corruption(&self) -> bool {
        true
    }
    fn is_target_aware(&self) -> bool {
        self.target_conditioned || self.with_sup
    }
    fn uses_conditional_corruption(&self) -> bool {
        self.target_conditioned
    }
    fn head_specs(&self, meta: &DatasetMeta, hidden: usize) -> Vec<HeadSpec> {
        let mut heads = vec![HeadSpec {
            name: "h".into(),
            in_extra: if self.target_conditioned { meta.target_width } else { 0 },
            hidden: Some(hidden),
            out: meta.reconstruction_width(),
        }];
        if self.with_sup {
            heads.push(HeadSpec::downstream(meta));
        }
        heads
    }
    fn compose(
        &self,
        model: &ModelState,
        ctx: &BatchContext,
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<ComposedLoss, TabError> {
        let (clean_num, clean_cat) = gather_clean(ctx, batch);
        let cb = corrupt(ctx, batch, self.target_conditioned, rng)?;
        let mut g = Graph::new();
        let z = model.backbone_forward(&mut g, &cb.x_num, &cb.cat, true)?;
        let enc = if self.target_conditioned {
            Some(target_encoding(ctx, batch)?)
        } else {
            None
        };
        let h_out = model.head_forward(&mut g, z, "h", enc)?;
        let rec = reconstruction_loss(
            &mut g,
            h_out,
            &clean_num,
            &clean_cat,
            &model.meta.cardinalities,
        )?;
        let mut terms = vec![("rec".into(), rec)];
        let total = if self.with_sup {
            let logits = model.head_forward(&mut g, z, "g", None)?;
            let sup = supervised_loss(&mut g, logits, ctx.ds, ctx.codec, batch)?;
            terms.push(("sup".into(), sup));
            g.add(rec, sup)?
        } else {
            rec
        };
        Ok(ComposedLoss { graph: g, total, terms })
    }
}

struct Mask {
    target_conditioned: bool,
    with_sup: bool,
}

impl PretrainObjective for Mask {
    fn name(&self) -> &'static str {
        if self.target_conditioned {
            "mask_target"
        } else if self.with_sup {
            "mask_sup"
        } else {
            "mask"
        }
    }
    fn needs_corruption(&self) -> bool {
        true
    }
    fn is_target_aware(&self) -> bool {
        self.target_conditioned || self.with_sup
    }
    fn uses_conditional_corruption(&self) -> bool {
        self.target_conditioned
    }
    fn head_specs(&self, meta: &DatasetMeta, hidden: usize) -> Vec<HeadSpec> {
        let mut heads = vec![HeadSpec {
            name: "h".into(),
            in_extra: if self.target_conditioned { meta.target_width } else { 0 },
            hidden: Some(hidden),
            out: meta.m_total(),
        }];
        if self.with_sup {
            heads.push(HeadSpec::downstream(meta));
        }
        heads
    }
    fn compose(
        &self,
        model: &ModelState,
        ctx: &BatchContext,
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<ComposedLoss, TabError> {
        let cb = corrupt(ctx, batch, self.target_conditioned, rng)?;
        let mut g = Graph::new();
        let z = model.backbone_forward(&mut g, &cb.x_num, &cb.cat, true)?;
        let enc = if self.target_conditioned {
            Some(target_encoding(ctx, batch)?)
        } else {
            None
        };
        let logits = model.head_forward(&mut g, z, "h", enc)?;
        let mask = mask_loss(&mut g, logits, &cb.mask)?;
        let mut terms = vec![("mask".into(), mask)];
        let total = if self.with_sup {
            let gl = model.head_forward(&mut g, z, "g", None)?;
            let sup = supervised_loss(&mut g, gl, ctx.ds, ctx.codec, batch)?;
            terms.push(("sup".into(), sup));
            g.add(mask, sup)?
        } else {
            mask
        };
        Ok(ComposedLoss { graph: g, total, terms })
    }
}

struct Sup;

impl PretrainObjective for Sup {
    fn name(&self) -> &'static str {
        "sup"
    }
    fn needs_corruption(&self) -> bool {
        false
    }
    fn is_target_aware(&self) -> bool {
        true
    }
    fn head_specs(&self, meta: &DatasetMeta, _hidden: usize) -> Vec<HeadSpec> {
        vec![HeadSpec::downstream(meta)]
    }
    fn compose(
        &self,
        model: &ModelState,
        ctx: &BatchContext,
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<ComposedLoss, TabError> {
        let cb = corrupt(ctx, batch, false, rng)?;
        let mut g = Graph::new();
        let z = model.backbone_forward(&mut g, &cb.x_num, &cb.cat, true)?;
        let logits = model.head_forward(&mut g, z, "g", None)?;
        let total = supervised_loss(&mut g, logits, ctx.ds, ctx.codec, batch)?;
        Ok(ComposedLoss { graph: g, total, terms: vec![("sup".into(), total)] })
    }
}

struct SupCon {
    tau: f64,
}

impl PretrainObjective for SupCon {
    fn name(&self) -> &'static str {
        "supcon"
    }
    fn needs_corruption(&self) -> bool {
        false
    }
    fn is_target_aware(&self) -> bool {
        true
    }
    fn head_specs(&self, _meta: &DatasetMeta, hidden: usize) -> Vec<HeadSpec> {
        vec![HeadSpec {
            name: "h".into(),
            in_extra: 0,
            hidden: Some(hidden),
            out: CONTRASTIVE_PROJ_DIM,
        }]
    }
    fn compose(
        &self,
        model: &ModelState,
        ctx: &BatchContext,
        batch: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<ComposedLoss, TabError> {
        let cb = corrupt(ctx, batch, false, rng)?;
        let labels: Vec<usize> =
            batch.iter().map(|&r| ctx.codec.group_of(ctx.ds, r)).collect();
        let mut g = Graph::new();
        let z = model.backbone_forward(&mut g, &cb.x_num, &cb.cat, true)?;
        let proj = model.head_forward(&mut g, z, "h", None)?;
        let total = supcon_loss(&mut g, proj, &labels, self.tau)?;
        Ok(ComposedLoss { graph: g, total, terms: vec![("supcon".into(), total)] })
    }
}
