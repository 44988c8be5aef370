//! Synthetic data from random oblivious-tree ensembles over correlated
//! Gaussian features, plus the feature-decodability probe.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset, Preprocess, Splits, Targets, TaskType};
use crate::error::TabError;
use crate::graph::Graph;
use crate::model::ModelState;
use crate::optim::AdamW;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    /// Off-diagonal covariance; diagonal is 1.
    pub c: f64,
    pub n_trees: usize,
    pub depth: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { n: 50_000, m: 8, c: 0.5, n_trees: 10, depth: 10 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), TabError> {
        if self.n < 10 || self.m == 0 || self.n_trees == 0 || self.depth == 0 {
            return Err(TabError::Config("degenerate synthetic spec".into()));
        }
        // Σ = (1−c)·I + c·11ᵀ is positive definite iff c ∈ (−1/(m−1), 1)
        if self.c >= 1.0 || (self.m > 1 && self.c <= -1.0 / (self.m as f64 - 1.0)) {
            return Err(TabError::Config(
                "covariance constant makes Σ non positive definite".into(),
            ));
        }
        if self.depth > 20 {
            return Err(TabError::Config("tree depth too large".into()));
        }
        Ok(())
    }
}

/// One oblivious tree: each level compares a single feature to a single
/// threshold; the leaf index is the depth-bit comparison word.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObliviousTree {
    pub features: Vec<usize>,
    pub thresholds: Vec<f64>,
    pub leaves: Vec<f64>,
}

impl ObliviousTree {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let mut idx = 0usize;
        for (f, t) in self.features.iter().zip(&self.thresholds) {
            idx = (idx << 1) | usize::from(row[*f] > *t);
        }
        self.leaves[idx]
    }
}

#[derive(Clone, Debug)]
pub struct Generated {
    pub ds: Dataset,
    /// Feature-importance vector p (the Cat(p) level-feature distribution).
    pub p: Vec<f64>,
    pub trees: Vec<ObliviousTree>,
}

/// Lower-triangular Cholesky factor of Σ = (1−c)·I + c·11ᵀ.
fn cholesky_equicorrelated(m: usize, c: f64) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            a[i][j] = if i == j { 1.0 } else { c };
        }
    }
    let mut l = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

fn dirichlet_uniform(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Dir(1,…,1) via normalized Exp(1) draws
    let draws: Vec<f64> = (0..m).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = draws.iter().sum();
    draws.iter().map(|d| d / s).collect()
}

fn categorical(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Generated, TabError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, m) = (spec.n, spec.m);

    let l = cholesky_equicorrelated(m, spec.c);
    let mut x = vec![0.0; n * m];
    let mut z = vec![0.0; m];
    for r in 0..n {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(&mut rng);
        }
        for j in 0..m {
            x[r * m + j] = (0..=j).map(|k| l[j][k] * z[k]).sum();
        }
    }
    let num = Tensor::matrix(n, m, x)?;

    let p = dirichlet_uniform(m, &mut rng);
    let ranges: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for r in 0..n {
                lo = lo.min(num.at(r, j));
                hi = hi.max(num.at(r, j));
            }
            (lo, hi)
        })
        .collect();

    let mut trees = Vec::with_capacity(spec.n_trees);
    for _ in 0..spec.n_trees {
        let mut features = Vec::with_capacity(spec.depth);
        let mut thresholds = Vec::with_capacity(spec.depth);
        for _ in 0..spec.depth {
            let f = categorical(&p, &mut rng);
            let (lo, hi) = ranges[f];
            features.push(f);
            thresholds.push(lo + rng.gen::<f64>() * (hi - lo));
        }
        let leaves: Vec<f64> =
            (0..1usize << spec.depth).map(|_| StandardNormal.sample(&mut rng)).collect();
        trees.push(ObliviousTree { features, thresholds, leaves });
    }

    let labels: Vec<usize> = (0..n)
        .map(|r| {
            let row = num.row(r);
            let mean: f64 =
                trees.iter().map(|t| t.eval(row)).sum::<f64>() / spec.n_trees as f64;
            usize::from(mean > 0.0)
        })
        .collect();

    let n_train = (n as f64 * 0.64).round() as usize;
    let n_val = (n as f64 * 0.16).round() as usize;
    let ds = Dataset {
        name: format!("synth-{seed}"),
        num,
        cat: vec![],
        m_cat: 0,
        cardinalities: vec![],
        y: Targets::Class(labels),
        splits: Splits {
            train: (0..n_train).collect(),
            val: (n_train..n_train + n_val).collect(),
            test: (n_train + n_val..n).collect(),
        },
        task: TaskType::Binclass,
        n_classes: 2,
        batch_size: 128,
        preprocess: Preprocess::Quantile,
    };
    ds.validate()?;
    Ok(Generated { ds, p, trees })
}

/// Rank 0 = most important feature; ties broken by index.
pub fn importance_rank(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].partial_cmp(&p[a]).unwrap().then(a.cmp(&b)));
    let mut ranks = vec![0usize; p.len()];
    for (rank, &feat) in order.iter().enumerate() {
        ranks[feat] = rank;
    }
    ranks
}

/// Frozen backbone embeddings over `rows` (eval mode).
pub fn embeddings(
    model: &ModelState,
    ds: &Dataset,
    x: &Tensor,
    rows: &[usize],
) -> Result<Tensor, TabError> {
    let width = model.spec.backbone.layer_size;
    let mut out = Vec::with_capacity(rows.len() * width);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for batch in batches(rows, ds.batch_size, None) {
        let (xb, cat) = crate::trainer::gather(x, ds, &batch);
        let mut g = Graph::new();
        let z = model.backbone_forward(&mut g, &xb, &cat, false)?;
        let eval = g.forward(&model.params, &mut rng, false)?;
        out.extend_from_slice(eval.value(z).data());
    }
    Tensor::matrix(rows.len(), width, out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { hidden: 512, epochs: 30, lr: 1e-3, batch_size: 128 }
    }
}

/// Trains a fresh 2-hidden-layer MLP to regress one raw feature from frozen
/// embeddings; returns the test-split RMSE. `emb` holds embeddings for all
/// dataset rows in row order.
pub fn decodability_probe(
    emb: &Tensor,
    ds: &Dataset,
    feature: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<f64, TabError> {
    if feature >= ds.m_num() {
        return Err(TabError::Config(format!("no feature {feature}")));
    }
    if emb.rows() != ds.n_rows() {
        return Err(TabError::Shape("embedding row count mismatch".into()));
    }
    let d = emb.cols();
    let h = cfg.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    let init = |rng: &mut ChaCha8Rng, fan_in: usize, rows: usize, cols: usize| {
        let bound = (6.0 / fan_in as f64).sqrt();
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * bound).collect(),
        )
        .expect("probe init")
    };
    let w1 = params.add("probe.w1".to_string(), init(&mut rng, d, d, h));
    let b1 = params.add("probe.b1".to_string(), Tensor::zeros(vec![1, h]));
    let w2 = params.add("probe.w2".to_string(), init(&mut rng, h, h, h));
    let b2 = params.add("probe.b2".to_string(), Tensor::zeros(vec![1, h]));
    let w3 = params.add("probe.w3".to_string(), init(&mut rng, h, h, 1));
    let b3 = params.add("probe.b3".to_string(), Tensor::zeros(vec![1, 1]));

    let forward = |g: &mut Graph, xb: Tensor| -> Result<crate::graph::NodeId, TabError> {
        let x = g.constant(xb);
        let p_w1 = g.param(w1, vec![d, h]);
        let l1 = g.matmul(x, p_w1)?;
        let p_b1 = g.param(b1, vec![1, h]);
        let a1 = g.add_row(l1, p_b1)?;
        let r1 = g.relu(a1);
        let p_w2 = g.param(w2, vec![h, h]);
        let l2 = g.matmul(r1, p_w2)?;
        let p_b2 = g.param(b2, vec![1, h]);
        let a2 = g.add_row(l2, p_b2)?;
        let r2 = g.relu(a2);
        let p_w3 = g.param(w3, vec![h, 1]);
        let l3 = g.matmul(r2, p_w3)?;
        let p_b3 = g.param(b3, vec![1, 1]);
        g.add_row(l3, p_b3)
    };

    let gather_emb = |rows: &[usize]| -> Tensor {
        let mut v = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            v.extend_from_slice(emb.row(r));
        }
        Tensor::matrix(rows.len(), d, v).expect("probe gather")
    };

    let mut opt = AdamW::new(&params, cfg.lr, 0.0)?;
    for _ in 0..cfg.epochs {
        for batch in batches(&ds.splits.train, cfg.batch_size, Some(&mut rng)) {
            let targets: Vec<f64> = batch.iter().map(|&r| ds.num.at(r, feature)).collect();
            let mut g = Graph::new();
            let pred = forward(&mut g, gather_emb(&batch))?;
            let loss = g.mse_mean(pred, Tensor::matrix(batch.len(), 1, targets)?)?;
            let eval = g.forward(&params, &mut rng, true)?;
            let grads = g.backward(&eval, loss, &params)?;
            opt.step(&mut params, &grads)?;
        }
    }

    let mut se = 0.0;
    for batch in batches(&ds.splits.test, cfg.batch_size, None) {
        let mut g = Graph::new();
        let pred = forward(&mut g, gather_emb(&batch))?;
        let eval = g.forward(&params, &mut rng, false)?;
        let out = eval.value(pred);
        for (i, &r) in batch.iter().enumerate() {
            se += (out.at(i, 0) - ds.num.at(r, feature)).powi(2);
        }
    }
    Ok((se / ds.splits.test.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_bit_reproducible() {
        let spec = SyntheticSpec { n: 200, ..Default::default() };
        let a = generate(&spec, 42).unwrap();
        let b = generate(&spec, 42).unwrap();
        assert_eq!(a.ds.num.data(), b.ds.num.data());
        assert_eq!(a.ds.y, b.ds.y);
        assert_eq!(a.p, b.p);
    }

    #[test]
    fn sample_correlation_matches_covariance_constant() {
        let spec = SyntheticSpec::default();
        let g = generate(&spec, 7).unwrap();
        let n = spec.n;
        let mean = |j: usize| (0..n).map(|r| g.ds.num.at(r, j)).sum::<f64>() / n as f64;
        let means: Vec<f64> = (0..spec.m).map(mean).collect();
        let cov = |a: usize, b: usize| {
            (0..n)
                .map(|r| (g.ds.num.at(r, a) - means[a]) * (g.ds.num.at(r, b) - means[b]))
                .sum::<f64>()
                / n as f64
        };
        let vars: Vec<f64> = (0..spec.m).map(|j| cov(j, j)).collect();
        for a in 0..spec.m {
            for b in 0..spec.m {
                let corr = cov(a, b) / (vars[a] * vars[b]).sqrt();
                let expected = if a == b { 1.0 } else { 0.5 };
                assert!(
                    (corr - expected).abs() < 0.02,
                    "corr[{a}][{b}] = {corr}"
                );
            }
        }
    }

    #[test]
    fn label_balance_across_seeds() {
        // The averaged logit is symmetric around 0, so positive fractions
        // center on ½ across seeds; any single dataset still carries a random
        // offset from its fixed tree ensemble, so individual fractions vary.
        let spec = SyntheticSpec { n: 2_000, ..Default::default() };
        let fracs: Vec<f64> = (0..50)
            .map(|seed| {
                let g = generate(&spec, seed).unwrap();
                let pos: usize = (0..spec.n).map(|r| g.ds.y.class(r)).sum();
                pos as f64 / spec.n as f64
            })
            .collect();
        let mean = fracs.iter().sum::<f64>() / fracs.len() as f64;
        assert!((0.4..0.6).contains(&mean), "mean positive fraction {mean}");
        let within: usize = fracs.iter().filter(|f| (0.2..0.8).contains(*f)).count();
        assert!(within >= 35, "only {within}/50 seeds in (0.2, 0.8)");
        assert!(fracs.iter().all(|f| (0.05..0.95).contains(f)), "{fracs:?}");
    }

    #[test]
    fn degenerate_depth_one_tree_is_a_threshold_rule() {
        let tree = ObliviousTree {
            features: vec![2],
            thresholds: vec![0.5],
            leaves: vec![-1.0, 3.0],
        };
        assert_eq!(tree.eval(&[0.0, 0.0, 0.4]), -1.0);
        assert_eq!(tree.eval(&[0.0, 0.0, 0.6]), 3.0);
    }

    #[test]
    fn tree_eval_is_row_order_independent() {
        let spec = SyntheticSpec { n: 300, ..Default::default() };
        let g = generate(&spec, 3).unwrap();
        let labels_fwd: Vec<usize> = (0..spec.n).map(|r| g.ds.y.class(r)).collect();
        // recompute in reverse order
        for r in (0..spec.n).rev() {
            let mean: f64 = g.trees.iter().map(|t| t.eval(g.ds.num.row(r))).sum::<f64>()
                / spec.n_trees as f64;
            assert_eq!(usize::from(mean > 0.0), labels_fwd[r]);
        }
    }

    #[test]
    fn level_feature_frequency_matches_p() {
        // 10·10·50 level draws; chi-square against Cat(p), df = m−1 = 7,
        // critical value at α = 0.01 is 18.475
        let spec = SyntheticSpec { n: 100, ..Default::default() };
        let mut counts = vec![0usize; spec.m];
        let mut expected = vec![0.0; spec.m];
        for seed in 0..50 {
            let g = generate(&spec, seed).unwrap();
            for t in &g.trees {
                for &f in &t.features {
                    counts[f] += 1;
                }
            }
            for j in 0..spec.m {
                expected[j] += g.p[j] * (spec.n_trees * spec.depth) as f64;
            }
        }
        let chi2: f64 = (0..spec.m)
            .map(|j| (counts[j] as f64 - expected[j]).powi(2) / expected[j])
            .sum();
        assert!(chi2 < 18.475, "chi-square statistic {chi2}");
    }

    #[test]
    fn importance_rank_examples() {
        assert_eq!(importance_rank(&[0.5, 0.3, 0.2]), vec![0, 1, 2]);
        assert_eq!(importance_rank(&[0.25, 0.25, 0.25, 0.25]), vec![0, 1, 2, 3]);
        // permutation equivariance
        let p = [0.1, 0.6, 0.3];
        let r = importance_rank(&p);
        let perm = [2usize, 0, 1]; // p' = p ∘ perm
        let pp: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        let rp = importance_rank(&pp);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(rp[k], r[i]);
        }
    }

    #[test]
    fn probe_on_identity_embeddings_decodes_perfectly() {
        let spec = SyntheticSpec { n: 400, m: 4, depth: 4, ..Default::default() };
        let g = generate(&spec, 11).unwrap();
        // identity backbone: z = x
        let emb = g.ds.num.clone();
        let cfg = ProbeConfig { hidden: 32, epochs: 150, lr: 1e-2, batch_size: 64 };
        let rmse = decodability_probe(&emb, &g.ds, 1, &cfg, 0).unwrap();
        assert!(rmse < 0.15, "identity probe rmse {rmse}");
    }

    #[test]
    fn probe_on_constant_embeddings_matches_feature_std() {
        let spec = SyntheticSpec { n: 400, m: 4, depth: 4, ..Default::default() };
        let g = generate(&spec, 13).unwrap();
        let emb = Tensor::matrix(spec.n, 3, vec![1.0; spec.n * 3]).unwrap();
        let cfg = ProbeConfig { hidden: 16, epochs: 100, lr: 1e-2, batch_size: 64 };
        let rmse = decodability_probe(&emb, &g.ds, 0, &cfg, 0).unwrap();
        // best constant predictor leaves roughly the feature's std (≈1)
        assert!((rmse - 1.0).abs() < 0.2, "constant probe rmse {rmse}");
    }
}
