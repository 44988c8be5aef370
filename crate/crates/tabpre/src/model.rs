//! Backbones (MLP, optionally with PLR or T-LR numeric embeddings),
//! categorical embeddings, and the downstream / pretraining heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TargetCodec, TaskType};
use crate::error::TabError;
use crate::graph::{Graph, NodeId};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const LAYER_SIZE: usize = 512;
pub const HEAD_HIDDEN: usize = 512;
pub const CAT_EMB_CAP: usize = 16;
pub const CONTRASTIVE_PROJ_DIM: usize = 128;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub layers: usize,
    /// Hidden width. The evaluation protocol fixes 512; smaller widths are
    /// allowed for cheap tests.
    #[serde(default = "default_layer_size")]
    pub layer_size: usize,
    pub dropout: f64,
}

fn default_layer_size() -> usize {
    LAYER_SIZE
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    None,
    Plr { k: usize, sigma: f64, d_emb: usize },
    Tlr { max_leaves: usize, min_leaf: usize, min_gain: f64, d_emb: usize },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSpec {
    pub backbone: BackboneSpec,
    pub embedding: EmbeddingSpec,
    #[serde(default)]
    pub target_conditioned: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), TabError> {
        if !(1..=8).contains(&self.backbone.layers) {
            return Err(TabError::Model(format!(
                "layers must be in [1,8], got {}",
                self.backbone.layers
            )));
        }
        if !(0.0..1.0).contains(&self.backbone.dropout) {
            return Err(TabError::Model("dropout must be in [0,1)".into()));
        }
        if self.backbone.layer_size == 0 {
            return Err(TabError::Model("layer_size must be >= 1".into()));
        }
        match &self.embedding {
            EmbeddingSpec::None => {}
            EmbeddingSpec::Plr { k, sigma, d_emb } => {
                if !(1..=128).contains(k) || !(1..=128).contains(d_emb) || *sigma <= 0.0 {
                    return Err(TabError::Model("invalid PLR hyperparameters".into()));
                }
            }
            EmbeddingSpec::Tlr { max_leaves, min_leaf, min_gain, d_emb } => {
                if *max_leaves < 2 || *min_leaf < 1 || *min_gain < 0.0 || !(1..=128).contains(d_emb)
                {
                    return Err(TabError::Model("invalid T-LR hyperparameters".into()));
                }
            }
        }
        Ok(())
    }
}

/// What a model needs to know about its dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub m_num: usize,
    pub cardinalities: Vec<usize>,
    pub task: TaskType,
    pub n_classes: usize,
    /// Width of the encoded target (k for classification, 1 for regression).
    pub target_width: usize,
}

impl DatasetMeta {
    pub fn of(ds: &Dataset, codec: &TargetCodec) -> Self {
        DatasetMeta {
            m_num: ds.m_num(),
            cardinalities: ds.cardinalities.clone(),
            task: ds.task,
            n_classes: ds.n_classes,
            target_width: codec.width(),
        }
    }

    pub fn m_cat(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn m_total(&self) -> usize {
        self.m_num + self.m_cat()
    }

    /// Output width of the downstream head.
    pub fn g_out(&self) -> usize {
        match self.task {
            TaskType::Regression | TaskType::Binclass => 1,
            TaskType::Multiclass => self.n_classes,
        }
    }

    /// Output width of the reconstruction head:
    /// numeric columns + one logit block per categorical column.
    pub fn reconstruction_width(&self) -> usize {
        self.m_num + self.cardinalities.iter().sum::<usize>()
    }
}

/// A pretraining or downstream head: optional hidden layer, optional extra
/// input (encoded target) concatenated to z.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub in_extra: usize,
    pub hidden: Option<usize>,
    pub out: usize,
}

impl HeadSpec {
    /// Downstream head g: a single linear layer on z.
    pub fn downstream(meta: &DatasetMeta) -> HeadSpec {
        HeadSpec { name: "g".into(), in_extra: 0, hidden: None, out: meta.g_out() }
    }
}

#[derive(Clone, Debug)]
struct HeadLayout {
    spec: HeadSpec,
    w1: usize,
    b1: usize,
    /// Present when the head has a hidden layer.
    w2: Option<usize>,
    b2: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub meta: DatasetMeta,
    pub params: ParamSet,
    /// Per numeric feature: PLR coefficient / embedding weight parameter ids.
    emb_params: Vec<(usize, usize, usize)>, // (coeff_or_w, w, b) per feature
    cat_tables: Vec<usize>,
    backbone_layers: Vec<(usize, usize)>, // (w, b)
    heads: Vec<HeadLayout>,
    /// T-LR bin edges per numeric feature (empty unless embedding = tlr).
    pub tlr_edges: Vec<Vec<f64>>,
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::matrix(rows, cols, data).expect("init shape")
}

impl ModelState {
    /// Builds parameters for backbone + requested heads. T-LR trees are
    /// fitted deterministically on the (preprocessed) train split.
    pub fn build(
        spec: ModelSpec,
        meta: DatasetMeta,
        heads: &[HeadSpec],
        train_x: Option<(&Tensor, &Dataset, &TargetCodec)>,
        rng: &mut ChaCha8Rng,
    ) -> Result<ModelState, TabError> {
        spec.validate()?;
        if meta.m_num == 0 && !matches!(spec.embedding, EmbeddingSpec::None) {
            return Err(TabError::Model(
                "numeric embeddings require at least one numeric feature".into(),
            ));
        }
        let mut params = ParamSet::new();
        let width = spec.backbone.layer_size;

        // numeric embedding parameters
        let mut emb_params = Vec::new();
        let mut tlr_edges: Vec<Vec<f64>> = Vec::new();
        match &spec.embedding {
            EmbeddingSpec::None => {}
            EmbeddingSpec::Plr { k, sigma, d_emb } => {
                for j in 0..meta.m_num {
                    let coeff = Tensor::matrix(
                        1,
                        *k,
                        (0..*k).map(|_| gauss(rng) * sigma).collect(),
                    )?;
                    let cid = params.add(format!("plr.{j}.coeff"), coeff);
                    let wid = params.add(
                        format!("plr.{j}.w"),
                        kaiming_uniform(rng, 2 * k, 2 * k, *d_emb),
                    );
                    let bid = params.add(format!("plr.{j}.b"), Tensor::zeros(vec![1, *d_emb]));
                    emb_params.push((cid, wid, bid));
                }
            }
            EmbeddingSpec::Tlr { max_leaves, min_leaf, min_gain, d_emb } => {
                let (x, ds, codec) = train_x.ok_or_else(|| {
                    TabError::Model("tlr embedding requires training data at build time".into())
                })?;
                for j in 0..meta.m_num {
                    let values: Vec<f64> =
                        ds.splits.train.iter().map(|&r| x.at(r, j)).collect();
                    let target = TreeTarget::of(ds, codec);
                    let edges = fit_univariate_bins(
                        &values,
                        &target,
                        *max_leaves,
                        *min_leaf,
                        *min_gain,
                    );
                    let n_bins = edges.len() - 1;
                    let wid = params.add(
                        format!("tlr.{j}.w"),
                        kaiming_uniform(rng, n_bins, n_bins, *d_emb),
                    );
                    let bid = params.add(format!("tlr.{j}.b"), Tensor::zeros(vec![1, *d_emb]));
                    emb_params.push((wid, wid, bid));
                    tlr_edges.push(edges);
                }
            }
        }

        // categorical embedding tables
        let mut cat_tables = Vec::new();
        for (c, &card) in meta.cardinalities.iter().enumerate() {
            let d = card.min(CAT_EMB_CAP);
            let bound = (1.0 / d as f64).sqrt();
            let data = (0..card * d)
                .map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound)
                .collect();
            cat_tables.push(params.add(format!("cat.{c}.table"), Tensor::matrix(card, d, data)?));
        }

        // backbone
        let d_in = input_width(&spec, &meta);
        let mut backbone_layers = Vec::new();
        let mut prev = d_in;
        for l in 0..spec.backbone.layers {
            let w = params.add(
                format!("backbone.{l}.w"),
                kaiming_uniform(rng, prev, prev, width),
            );
            let b = params.add(format!("backbone.{l}.b"), Tensor::zeros(vec![1, width]));
            backbone_layers.push((w, b));
            prev = width;
        }

        // heads
        let mut layouts = Vec::new();
        for h in heads {
            if h.in_extra > 0 && !spec.target_conditioned {
                return Err(TabError::Model(format!(
                    "head '{}' needs target conditioning but the spec lacks the flag",
                    h.name
                )));
            }
            layouts.push(Self::init_head(&mut params, h, width, rng));
        }

        Ok(ModelState {
            spec,
            meta,
            params,
            emb_params,
            cat_tables,
            backbone_layers,
            heads: layouts,
            tlr_edges,
        })
    }

    fn init_head(params: &mut ParamSet, h: &HeadSpec, width: usize, rng: &mut ChaCha8Rng) -> HeadLayout {
        let d_in = width + h.in_extra;
        match h.hidden {
            Some(hid) => {
                let w1 = params.add(format!("head.{}.w1", h.name), kaiming_uniform(rng, d_in, d_in, hid));
                let b1 = params.add(format!("head.{}.b1", h.name), Tensor::zeros(vec![1, hid]));
                let w2 = params.add(format!("head.{}.w2", h.name), kaiming_uniform(rng, hid, hid, h.out));
                let b2 = params.add(format!("head.{}.b2", h.name), Tensor::zeros(vec![1, h.out]));
                HeadLayout { spec: h.clone(), w1, b1, w2: Some(w2), b2: Some(b2) }
            }
            None => {
                let w1 = params.add(format!("head.{}.w1", h.name), kaiming_uniform(rng, d_in, d_in, h.out));
                let b1 = params.add(format!("head.{}.b1", h.name), Tensor::zeros(vec![1, h.out]));
                HeadLayout { spec: h.clone(), w1, b1, w2: None, b2: None }
            }
        }
    }

    /// Reinitializes one head in place (fresh downstream head for finetuning).
    pub fn reinit_head(&mut self, name: &str, rng: &mut ChaCha8Rng) -> Result<(), TabError> {
        let layout = self
            .heads
            .iter()
            .find(|h| h.spec.name == name)
            .cloned()
            .ok_or_else(|| TabError::Model(format!("no head named '{name}'")))?;
        let d_in = self.spec.backbone.layer_size + layout.spec.in_extra;
        match layout.spec.hidden {
            Some(hid) => {
                *self.params.tensor_mut(layout.w1) = kaiming_uniform(rng, d_in, d_in, hid);
                *self.params.tensor_mut(layout.b1) = Tensor::zeros(vec![1, hid]);
                *self.params.tensor_mut(layout.w2.unwrap()) =
                    kaiming_uniform(rng, hid, hid, layout.spec.out);
                *self.params.tensor_mut(layout.b2.unwrap()) =
                    Tensor::zeros(vec![1, layout.spec.out]);
            }
            None => {
                *self.params.tensor_mut(layout.w1) =
                    kaiming_uniform(rng, d_in, d_in, layout.spec.out);
                *self.params.tensor_mut(layout.b1) = Tensor::zeros(vec![1, layout.spec.out]);
            }
        }
        Ok(())
    }

    pub fn has_head(&self, name: &str) -> bool {
        self.heads.iter().any(|h| h.spec.name == name)
    }

    /// z = f(x̂ | θ). Builds the tape for a batch: numeric pathway (direct or
    /// embedded), categorical embeddings, then the MLP stack.
    pub fn backbone_forward(
        &self,
        g: &mut Graph,
        x_num: &Tensor,
        cat: &[usize],
        train: bool,
    ) -> Result<NodeId, TabError> {
        let batch = if self.meta.m_num > 0 { x_num.rows() } else { cat.len() / self.meta.m_cat().max(1) };
        let mut parts: Vec<NodeId> = Vec::new();

        if self.meta.m_num > 0 {
            match &self.spec.embedding {
                EmbeddingSpec::None => {
                    parts.push(g.constant(x_num.clone()));
                }
                EmbeddingSpec::Plr { k, d_emb, .. } => {
                    let x = g.constant(x_num.clone());
                    for (j, &(cid, wid, bid)) in self.emb_params.iter().enumerate() {
                        let col = g.slice_cols(x, j, j + 1)?;
                        let coeff = g.param(cid, vec![1, *k]);
                        let freq = g.matmul(col, coeff)?;
                        let v = g.scale(freq, 2.0 * std::f64::consts::PI);
                        let s = g.sin(v);
                        let c = g.cos(v);
                        let per = g.concat_cols(&[s, c])?;
                        let w = g.param(wid, vec![2 * k, *d_emb]);
                        let lin = g.matmul(per, w)?;
                        let b = g.param(bid, vec![1, *d_emb]);
                        let biased = g.add_row(lin, b)?;
                        parts.push(g.relu(biased));
                    }
                }
                EmbeddingSpec::Tlr { d_emb, .. } => {
                    for (j, &(_, wid, bid)) in self.emb_params.iter().enumerate() {
                        let edges = &self.tlr_edges[j];
                        let enc = encode_piecewise_linear(x_num, j, edges);
                        let enc_node = g.constant(enc);
                        let n_bins = edges.len() - 1;
                        let w = g.param(wid, vec![n_bins, *d_emb]);
                        let lin = g.matmul(enc_node, w)?;
                        let b = g.param(bid, vec![1, *d_emb]);
                        let biased = g.add_row(lin, b)?;
                        parts.push(g.relu(biased));
                    }
                }
            }
        }

        for (c, &tid) in self.cat_tables.iter().enumerate() {
            let m_cat = self.meta.m_cat();
            let card = self.meta.cardinalities[c];
            let d = card.min(CAT_EMB_CAP);
            let table = g.param(tid, vec![card, d]);
            let codes: Vec<usize> = (0..batch).map(|r| cat[r * m_cat + c]).collect();
            parts.push(g.embed_lookup(table, codes)?);
        }

        if parts.is_empty() {
            return Err(TabError::Model("dataset has no features".into()));
        }
        let mut h = if parts.len() == 1 { parts[0] } else { g.concat_cols(&parts)? };
        let width = self.spec.backbone.layer_size;
        let mut prev = input_width(&self.spec, &self.meta);
        for &(wid, bid) in &self.backbone_layers {
            let w = g.param(wid, vec![prev, width]);
            let lin = g.matmul(h, w)?;
            let b = g.param(bid, vec![1, width]);
            let biased = g.add_row(lin, b)?;
            let act = g.relu(biased);
            h = if train && self.spec.backbone.dropout > 0.0 {
                g.dropout(act, self.spec.backbone.dropout)?
            } else {
                act
            };
            prev = width;
        }
        Ok(h)
    }

    /// Head application. `target_enc` supplies the per-row encoded target for
    /// target-conditioned heads (batch × target_width).
    pub fn head_forward(
        &self,
        g: &mut Graph,
        z: NodeId,
        head: &str,
        target_enc: Option<Tensor>,
    ) -> Result<NodeId, TabError> {
        let layout = self
            .heads
            .iter()
            .find(|h| h.spec.name == head)
            .ok_or_else(|| TabError::Model(format!("no head named '{head}'")))?;
        let extra = layout.spec.in_extra;
        let input = match &target_enc {
            None if extra == 0 => z,
            None => {
                return Err(TabError::Model(format!(
                    "head '{head}' requires an encoded target"
                )))
            }
            Some(_) if extra == 0 => {
                return Err(TabError::Model(format!(
                    "head '{head}' is not target-conditioned"
                )))
            }
            Some(enc) => {
                if enc.cols() != extra {
                    return Err(TabError::Model(format!(
                        "head '{head}' expects extra width {extra}, got {}",
                        enc.cols()
                    )));
                }
                let enc_node = g.constant(enc.clone());
                g.concat_cols(&[z, enc_node])?
            }
        };
        let d_in = self.spec.backbone.layer_size + layout.spec.in_extra;
        match layout.spec.hidden {
            Some(hid) => {
                let w1 = g.param(layout.w1, vec![d_in, hid]);
                let l1 = g.matmul(input, w1)?;
                let b1 = g.param(layout.b1, vec![1, hid]);
                let a1 = g.add_row(l1, b1)?;
                let r1 = g.relu(a1);
                let w2 = g.param(layout.w2.unwrap(), vec![hid, layout.spec.out]);
                let l2 = g.matmul(r1, w2)?;
                let b2 = g.param(layout.b2.unwrap(), vec![1, layout.spec.out]);
                g.add_row(l2, b2)
            }
            None => {
                let w1 = g.param(layout.w1, vec![d_in, layout.spec.out]);
                let l1 = g.matmul(input, w1)?;
                let b1 = g.param(layout.b1, vec![1, layout.spec.out]);
                g.add_row(l1, b1)
            }
        }
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

pub fn input_width(spec: &ModelSpec, meta: &DatasetMeta) -> usize {
    let num_w = match &spec.embedding {
        EmbeddingSpec::None => meta.m_num,
        EmbeddingSpec::Plr { d_emb, .. } | EmbeddingSpec::Tlr { d_emb, .. } => {
            meta.m_num * d_emb
        }
    };
    let cat_w: usize = meta.cardinalities.iter().map(|&c| c.min(CAT_EMB_CAP)).sum();
    num_w + cat_w
}

/// Piecewise-linear encoding of one column against bin edges:
/// e_t(x) = clamp((x − b_{t−1}) / (b_t − b_{t−1}), 0, 1).
pub fn encode_piecewise_linear(x: &Tensor, col: usize, edges: &[f64]) -> Tensor {
    let n_bins = edges.len() - 1;
    let rows = x.rows();
    let mut out = vec![0.0; rows * n_bins];
    for r in 0..rows {
        let v = x.at(r, col);
        for t in 0..n_bins {
            let (lo, hi) = (edges[t], edges[t + 1]);
            let span = (hi - lo).max(1e-12);
            out[r * n_bins + t] = ((v - lo) / span).clamp(0.0, 1.0);
        }
    }
    Tensor::matrix(rows, n_bins, out).expect("ple shape")
}

// ---------------------------------------------------------------------------
// univariate decision-tree bin fitting for T-LR

pub enum TreeTarget {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, k: usize },
}

impl TreeTarget {
    fn of(ds: &Dataset, codec: &TargetCodec) -> TreeTarget {
        match codec {
            TargetCodec::Regression { .. } => TreeTarget::Regression(
                ds.splits.train.iter().map(|&r| codec.scale(ds.y.float(r))).collect(),
            ),
            TargetCodec::Classification { k } => TreeTarget::Classification {
                labels: ds.splits.train.iter().map(|&r| ds.y.class(r)).collect(),
                k: *k,
            },
        }
    }
}

/// Greedy univariate tree: repeatedly splits the leaf with the highest
/// impurity decrease (variance for regression, Gini for classification)
/// until `max_leaves` is reached. Returns bin edges
/// [min, thresholds..., max], strictly increasing.
pub fn fit_univariate_bins(
    values: &[f64],
    target: &TreeTarget,
    max_leaves: usize,
    min_leaf: usize,
    min_gain: f64,
) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let sorted_v: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let lo = sorted_v[0];
    let hi = sorted_v[n - 1];
    if lo == hi {
        return vec![lo - 0.5, hi + 0.5];
    }

    // leaf = [start, end) over the sorted order
    struct Leaf {
        start: usize,
        end: usize,
        best: Option<(f64, usize)>, // (gain, split position)
    }

    let best_split = |start: usize, end: usize| -> Option<(f64, usize)> {
        let len = end - start;
        if len < 2 * min_leaf {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        match target {
            TreeTarget::Regression(y) => {
                let ys: Vec<f64> = order[start..end].iter().map(|&i| y[i]).collect();
                let total_sum: f64 = ys.iter().sum();
                let total_sq: f64 = ys.iter().map(|v| v * v).sum();
                let sse = |s: f64, q: f64, c: f64| q - s * s / c;
                let parent = sse(total_sum, total_sq, len as f64);
                let mut ls = 0.0;
                let mut lq = 0.0;
                for p in 1..len {
                    ls += ys[p - 1];
                    lq += ys[p - 1] * ys[p - 1];
                    if sorted_v[start + p] == sorted_v[start + p - 1] {
                        continue;
                    }
                    if p < min_leaf || len - p < min_leaf {
                        continue;
                    }
                    let gain = (parent
                        - sse(ls, lq, p as f64)
                        - sse(total_sum - ls, total_sq - lq, (len - p) as f64))
                        / n as f64;
                    if best.map_or(true, |(g, _)| gain > g) {
                        best = Some((gain, start + p));
                    }
                }
            }
            TreeTarget::Classification { labels, k } => {
                let ls: Vec<usize> = order[start..end].iter().map(|&i| labels[i]).collect();
                let mut total = vec![0usize; *k];
                for &l in &ls {
                    total[l] += 1;
                }
                let gini = |counts: &[usize], c: f64| {
                    let s: f64 = counts.iter().map(|&x| (x as f64 / c).powi(2)).sum();
                    (1.0 - s) * c
                };
                let parent = gini(&total, len as f64);
                let mut left = vec![0usize; *k];
                for p in 1..len {
                    left[ls[p - 1]] += 1;
                    if sorted_v[start + p] == sorted_v[start + p - 1] {
                        continue;
                    }
                    if p < min_leaf || len - p < min_leaf {
                        continue;
                    }
                    let right: Vec<usize> =
                        total.iter().zip(&left).map(|(t, l)| t - l).collect();
                    let gain = (parent
                        - gini(&left, p as f64)
                        - gini(&right, (len - p) as f64))
                        / n as f64;
                    if best.map_or(true, |(g, _)| gain > g) {
                        best = Some((gain, start + p));
                    }
                }
            }
        }
        best.filter(|(g, _)| *g >= min_gain && *g > 0.0)
    };

    let mut leaves = vec![Leaf { start: 0, end: n, best: best_split(0, n) }];
    let mut thresholds: Vec<f64> = Vec::new();
    while leaves.len() < max_leaves {
        let Some((li, (gain, pos))) = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|b| (i, b)))
            .max_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
        else {
            break;
        };
        let _ = gain;
        let Leaf { start, end, .. } = leaves[li];
        thresholds.push((sorted_v[pos - 1] + sorted_v[pos]) / 2.0);
        leaves[li] = Leaf { start, end: pos, best: best_split(start, pos) };
        leaves.push(Leaf { start: pos, end, best: best_split(pos, end) });
    }

    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    thresholds.dedup();
    let mut edges = Vec::with_capacity(thresholds.len() + 2);
    edges.push(lo);
    for t in thresholds {
        if t > *edges.last().unwrap() && t < hi {
            edges.push(t);
        }
    }
    edges.push(hi);
    edges
}
