//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N: PASS|FAIL — detail` line. Criteria 1–6 evaluate the
//! benchmark reproductions on the California Housing and Churn datasets and
//! require `data/california` / `data/churn` at the repository root; when the
//! data is absent they fail with an explicit diagnostic rather than being
//! skipped. Criteria 7–8 are self-contained and always run.

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabpre::corrupt::{corrupt_marginal, FeatureView};
use tabpre::data::{self, fd_bins, prepare, Dataset, Prepared};
use tabpre::gradcheck::max_relative_error;
use tabpre::graph::Graph;
use tabpre::hpo::{random_search, EmbeddingKind, SearchSpace};
use tabpre::metrics::{ks_statistic, roc_auc, sign_test_p};
use tabpre::model::{BackboneSpec, EmbeddingSpec, ModelSpec};
use tabpre::objective::{contrastive_loss, supcon_loss};
use tabpre::params::ParamSet;
use tabpre::synth::{decodability_probe, embeddings, generate, ProbeConfig, SyntheticSpec};
use tabpre::tensor::Tensor;
use tabpre::trainer::{ensemble_metric, metric_of, EnsembleMode, Pipeline, RunRecord, TrainConfig};

fn verdict(id: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id}: {status} — {detail}");
    assert!(pass, "criterion {id}: FAIL — {detail}");
}

// ---------------------------------------------------------------------------
// benchmark plumbing (criteria 1–6)

fn data_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn real_dataset(id: &str, name: &str) -> Dataset {
    let dir = data_dir(name);
    match data::load(&dir) {
        Ok(ds) => ds,
        Err(e) => {
            let detail = format!(
                "benchmark dataset unavailable: {e}; place the '{name}' dataset at {} \
                 (schema.json + X_num.csv [+ X_cat.csv] + y.csv + split files) to run this check",
                dir.display()
            );
            verdict(id, false, &detail);
            unreachable!()
        }
    }
}

/// Protocol-scale training budgets; lr / weight decay / dropout / corrupt_p
/// come from the 30-trial random search.
fn protocol_config() -> TrainConfig {
    serde_json::from_value(serde_json::json!({
        "lr": 1e-3,
        "weight_decay": 0.0,
        "corrupt_p": 0.5
    }))
    .unwrap()
}

fn protocol_model() -> ModelSpec {
    ModelSpec {
        backbone: BackboneSpec { layers: 4, layer_size: 512, dropout: 0.0 },
        embedding: EmbeddingSpec::None,
        target_conditioned: false,
    }
}

/// 30-trial random search (validation metric, one seed), then 15 seeds with
/// the winning configuration.
fn tuned_record(
    ds: &Dataset,
    prep: &Prepared,
    objective: Option<&str>,
    seeds: &[u64],
) -> RunRecord {
    let space = SearchSpace {
        embedding: EmbeddingKind::None,
        objective: objective.map(|s| s.to_string()),
        layer_size: 512,
    };
    let base = protocol_config();
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let result = random_search(&space, &base, 30, &mut rng, |model, config| {
        let p = Pipeline::new(ds, prep, model.clone(), config.clone(), space.objective.clone())?;
        let out = p.run_seed(0)?;
        Ok(-p.metric_kind().oriented(out.val_metric))
    })
    .expect("search failed");
    let best = &result.trials[result.best];
    let pipe = Pipeline::new(
        ds,
        prep,
        best.model.clone(),
        best.config.clone(),
        objective.map(|s| s.to_string()),
    )
    .expect("pipeline");
    pipe.run_seeds(seeds).expect("seeded runs failed")
}

const BENCH_SEEDS: [u64; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14];

#[test]
fn criterion_1_supervised_baseline_california() {
    let ds = real_dataset("1", "california");
    let prep = prepare(&ds, 0).unwrap();
    let rec = tuned_record(&ds, &prep, None, &BENCH_SEEDS);
    let detail = format!("scratch CA mean test RMSE {:.4} (target 0.506 ± 0.025)", rec.test_mean);
    verdict("1", (rec.test_mean - 0.506).abs() <= 0.025, &detail);
}

#[test]
fn criterion_2_reconstruction_beats_scratch_california() {
    let ds = real_dataset("2", "california");
    let prep = prepare(&ds, 0).unwrap();
    let scratch = tuned_record(&ds, &prep, None, &BENCH_SEEDS);
    let rec = tuned_record(&ds, &prep, Some("rec"), &BENCH_SEEDS);
    let gain = scratch.test_mean - rec.test_mean;
    let paired_wins = scratch
        .seeds
        .iter()
        .zip(&rec.seeds)
        .filter(|(s, r)| r.test_metric < s.test_metric)
        .count();
    let detail = format!(
        "rec {:.4} vs scratch {:.4} (gain {:.4}, need ≥ 0.03); direction holds in {paired_wins}/15 seeds (need ≥ 12)",
        rec.test_mean, scratch.test_mean, gain
    );
    verdict("2", gain >= 0.03 && paired_wins >= 12, &detail);
}

#[test]
fn criterion_3_target_aware_mask_california() {
    let ds = real_dataset("3", "california");
    let prep = prepare(&ds, 0).unwrap();
    let mask = tuned_record(&ds, &prep, Some("mask"), &BENCH_SEEDS);
    let mt = tuned_record(&ds, &prep, Some("mask_target"), &BENCH_SEEDS);
    let gap = mask.test_mean - mt.test_mean;
    let detail = format!(
        "mask_target {:.4} vs mask {:.4} (gap {:.4}, need ≥ 0.01 with ±0.015 tolerance)",
        mt.test_mean, mask.test_mean, gap
    );
    verdict("3", gap >= 0.01 - 0.015, &detail);
}

#[test]
fn criterion_4_mask_pretraining_churn() {
    let ds = real_dataset("4", "churn");
    let prep = prepare(&ds, 0).unwrap();
    let scratch = tuned_record(&ds, &prep, None, &BENCH_SEEDS);
    let mask = tuned_record(&ds, &prep, Some("mask"), &BENCH_SEEDS);
    let gap = mask.test_mean - scratch.test_mean;
    let detail = format!(
        "mask AUC {:.4} vs scratch {:.4} (gap {:.4}, need ≥ 0.004 with ±0.004 tolerance)",
        mask.test_mean, scratch.test_mean, gap
    );
    verdict("4", gap >= 0.004 - 0.004, &detail);
}

#[test]
fn criterion_5_ensembling_california() {
    let ds = real_dataset("5", "california");
    let prep = prepare(&ds, 0).unwrap();
    let pipe = Pipeline::new(
        &ds,
        &prep,
        protocol_model(),
        protocol_config(),
        Some("mask_target".into()),
    )
    .unwrap();
    let kind = pipe.metric_kind();
    let standard = pipe.seed_predictions(&BENCH_SEEDS, EnsembleMode::Standard).unwrap();
    let singles: Vec<f64> = standard
        .iter()
        .map(|p| metric_of(kind, p, &ds, &ds.splits.test).unwrap())
        .collect();
    let single_mean = singles.iter().sum::<f64>() / singles.len() as f64;
    let std_ens = ensemble_metric(&standard, kind, &ds, &ds.splits.test).unwrap();
    let efficient = pipe.seed_predictions(&BENCH_SEEDS, EnsembleMode::Efficient).unwrap();
    let eff_ens = ensemble_metric(&efficient, kind, &ds, &ds.splits.test).unwrap();
    let gain = single_mean - std_ens.mean;
    let diff = (eff_ens.mean - std_ens.mean).abs();
    let detail = format!(
        "single {single_mean:.4}, standard ensemble {:.4} (gain {gain:.4}, need ≥ 0.01), \
         efficient {:.4} (|Δ| {diff:.4}, need ≤ 0.01)",
        std_ens.mean, eff_ens.mean
    );
    verdict("5", gain >= 0.01 && diff <= 0.01, &detail);
}

#[test]
fn criterion_6_clean_finetune_ablation_california() {
    let ds = real_dataset("6", "california");
    let prep = prepare(&ds, 0).unwrap();
    let sup = tuned_record(&ds, &prep, Some("sup"), &BENCH_SEEDS);
    let mut no_ft_cfg = protocol_config();
    no_ft_cfg.no_finetune = true;
    let pipe =
        Pipeline::new(&ds, &prep, protocol_model(), no_ft_cfg, Some("sup".into())).unwrap();
    let no_ft = pipe.run_seeds(&BENCH_SEEDS).unwrap();
    let gap = no_ft.test_mean - sup.test_mean;
    let detail = format!(
        "sup|no_finetune {:.4} vs sup {:.4} (degradation {gap:.4}, need ≥ 0.01)",
        no_ft.test_mean, sup.test_mean
    );
    verdict("6", gap >= 0.01, &detail);
}

// ---------------------------------------------------------------------------
// criterion 7: synthetic decodability (self-contained)

struct ProbeOutcome {
    scratch_bottom: f64,
    mask_bottom: f64,
    mask_top: f64,
    mt_top: f64,
}

/// First generation seed at or after `seed` whose splits all contain both
/// classes (heavily imbalanced draws would break AUC-based early stopping).
fn generate_balanced(spec: &SyntheticSpec, seed: u64) -> (tabpre::synth::Generated, u64) {
    for s in seed.. {
        let gen = generate(spec, s).unwrap();
        let mixed = |rows: &[usize]| {
            rows.iter().any(|&r| gen.ds.y.class(r) == 0)
                && rows.iter().any(|&r| gen.ds.y.class(r) == 1)
        };
        if mixed(&gen.ds.splits.train) && mixed(&gen.ds.splits.val) && mixed(&gen.ds.splits.test) {
            return (gen, s);
        }
    }
    unreachable!()
}

fn probe_dataset(seed: u64) -> ProbeOutcome {
    let spec = SyntheticSpec { n: 2000, m: 8, c: 0.5, n_trees: 6, depth: 5 };
    let (gen, seed) = generate_balanced(&spec, seed);
    let ds = gen.ds;
    let prep = prepare(&ds, seed).unwrap();
    let ranks = tabpre::synth::importance_rank(&gen.p);
    let half = spec.m / 2;
    let bottom: Vec<usize> = (0..spec.m).filter(|&f| ranks[f] >= half).collect();
    let top: Vec<usize> = (0..spec.m).filter(|&f| ranks[f] < half).collect();

    let model_spec = ModelSpec {
        backbone: BackboneSpec { layers: 2, layer_size: 32, dropout: 0.0 },
        embedding: EmbeddingSpec::None,
        target_conditioned: false,
    };
    let config: TrainConfig = serde_json::from_value(serde_json::json!({
        "lr": 1e-3,
        "weight_decay": 0.0,
        "corrupt_p": 0.4,
        "max_pretrain_iters": 3000,
        "eval_every": 3000,
        "max_finetune_epochs": 60,
        "finetune_patience": 20
    }))
    .unwrap();

    let trained = |objective: Option<&str>| -> tabpre::model::ModelState {
        let pipe = Pipeline::new(
            &ds,
            &prep,
            model_spec.clone(),
            config.clone(),
            objective.map(|s| s.to_string()),
        )
        .unwrap();
        let mut model = pipe.build_model(seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        match objective {
            Some(kind) => {
                let obj = tabpre::objective::create(kind, config.tau).unwrap();
                pipe.pretrain(&mut model, obj.as_ref(), &mut rng).unwrap();
            }
            None => {
                pipe.finetune(&mut model, &mut rng, config.max_finetune_epochs).unwrap();
            }
        }
        model
    };

    let all_rows: Vec<usize> = (0..ds.n_rows()).collect();
    let probe_cfg = ProbeConfig { hidden: 64, epochs: 30, lr: 1e-3, batch_size: 128 };
    let mean_rmse = |model: &tabpre::model::ModelState, feats: &[usize]| -> f64 {
        let emb = embeddings(model, &ds, &prep.x, &all_rows).unwrap();
        let total: f64 = feats
            .iter()
            .map(|&f| decodability_probe(&emb, &ds, f, &probe_cfg, seed ^ 0xda7a).unwrap())
            .sum();
        total / feats.len() as f64
    };

    let scratch = trained(None);
    let mask = trained(Some("mask"));
    let mt = trained(Some("mask_target"));
    ProbeOutcome {
        scratch_bottom: mean_rmse(&scratch, &bottom),
        mask_bottom: mean_rmse(&mask, &bottom),
        mask_top: mean_rmse(&mask, &top),
        mt_top: mean_rmse(&mt, &top),
    }
}

#[test]
fn criterion_7_synthetic_decodability() {
    let n_datasets = 16usize;
    let mut wins_bottom = 0usize;
    let mut wins_top = 0usize;
    for d in 0..n_datasets {
        // spaced starts so seed scanning can't land two loops on one dataset
        let o = probe_dataset(100 + 10 * d as u64);
        if o.scratch_bottom > o.mask_bottom {
            wins_bottom += 1;
        }
        if o.mt_top <= o.mask_top {
            wins_top += 1;
        }
    }
    let p_bottom = sign_test_p(wins_bottom, n_datasets);
    let p_top = sign_test_p(wins_top, n_datasets);
    let detail = format!(
        "over {n_datasets} datasets: scratch > mask on low-importance probes in \
         {wins_bottom}/{n_datasets} (sign test p = {p_bottom:.4}); mask_target ≤ mask on \
         high-importance probes in {wins_top}/{n_datasets} (p = {p_top:.4}); need p < 0.05 each"
    );
    verdict("7", p_bottom < 0.05 && p_top < 0.05, &detail);
}

// ---------------------------------------------------------------------------
// criterion 8: property suites (self-contained)

fn check_gradients() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut params = ParamSet::new();
    let rand_t = |rng: &mut ChaCha8Rng, r: usize, c: usize| {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap()
    };
    let w1 = params.add("w1".to_string(), rand_t(&mut rng, 5, 7));
    let b1 = params.add("b1".to_string(), rand_t(&mut rng, 1, 7));
    let w2 = params.add("w2".to_string(), rand_t(&mut rng, 7, 3));
    let mut g = Graph::new();
    let x = g.constant(rand_t(&mut rng, 6, 5));
    let pw1 = g.param(w1, vec![5, 7]);
    let h = g.matmul(x, pw1).unwrap();
    let pb1 = g.param(b1, vec![1, 7]);
    let h = g.add_row(h, pb1).unwrap();
    let h = g.relu(h);
    let pw2 = g.param(w2, vec![7, 3]);
    let logits = g.matmul(h, pw2).unwrap();
    let loss = g.softmax_cross_entropy(logits, vec![0, 1, 2, 0, 1, 2]).unwrap();
    let err = max_relative_error(&g, loss, &mut params, 81, 40).map_err(|e| e.to_string())?;
    if err < 1e-4 {
        Ok(())
    } else {
        Err(format!("gradient check rel. err {err:.2e} ≥ 1e-4"))
    }
}

fn check_corruption() -> Result<(), String> {
    let spec = SyntheticSpec { n: 2000, m: 4, c: 0.3, n_trees: 3, depth: 3 };
    let ds = generate(&spec, 11).unwrap().ds;
    let prep = prepare(&ds, 11).unwrap();
    let view = FeatureView::from_dataset(&prep.x, &ds);
    let batch: Vec<usize> = ds.splits.train.clone();
    let p = 0.3;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cb = corrupt_marginal(view, &batch, p, &ds.splits.train, &mut rng)
        .map_err(|e| e.to_string())?;
    // Bernoulli rate over batch × m_total cells
    let n_cells = cb.mask.numel() as f64;
    let rate = cb.mask.data().iter().sum::<f64>() / n_cells;
    let sigma = (p * (1.0 - p) / n_cells).sqrt();
    if (rate - p).abs() > 4.0 * sigma {
        return Err(format!("corruption rate {rate:.4} outside {p} ± 4σ ({sigma:.4})"));
    }
    // KS: replaced values in column 0 follow the train marginal of column 0
    let m = ds.m_num();
    let replaced: Vec<f64> = (0..batch.len())
        .filter(|&i| cb.mask.data()[i * m] == 1.0)
        .map(|i| cb.x_num.data()[i * m])
        .collect();
    let train_col: Vec<f64> =
        ds.splits.train.iter().map(|&r| prep.x.data()[r * m]).collect();
    let d = ks_statistic(&replaced, &train_col);
    let (na, nb) = (replaced.len() as f64, train_col.len() as f64);
    let crit = 1.63 * ((na + nb) / (na * nb)).sqrt(); // α = 0.01
    if d > crit {
        return Err(format!("KS statistic {d:.4} exceeds the α=0.01 bound {crit:.4}"));
    }
    Ok(())
}

fn check_contrastive_brute_force() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let tau = 0.37;
    let normalize = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / n).collect()
            })
            .collect()
    };
    // InfoNCE, batch 4 × dim 3
    let a: Vec<Vec<f64>> =
        (0..4).map(|_| (0..3).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
    let b: Vec<Vec<f64>> =
        (0..4).map(|_| (0..3).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
    let (an, bn) = (normalize(&a), normalize(&b));
    let mut expected = 0.0;
    for i in 0..4 {
        let sims: Vec<f64> =
            (0..4).map(|j| an[i].iter().zip(&bn[j]).map(|(x, y)| x * y).sum::<f64>() / tau).collect();
        let mx = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + sims.iter().map(|s| (s - mx).exp()).sum::<f64>().ln();
        expected += (lse - sims[i]) / 4.0;
    }
    let mut g = Graph::new();
    let flat = |rows: &[Vec<f64>]| rows.iter().flatten().cloned().collect::<Vec<f64>>();
    let na = g.constant(Tensor::matrix(4, 3, flat(&a)).unwrap());
    let nb = g.constant(Tensor::matrix(4, 3, flat(&b)).unwrap());
    let loss = contrastive_loss(&mut g, na, nb, tau).map_err(|e| e.to_string())?;
    let params = ParamSet::new();
    let mut rng2 = ChaCha8Rng::seed_from_u64(0);
    let eval = g.forward(&params, &mut rng2, false).map_err(|e| e.to_string())?;
    let got = eval.value(loss).item();
    if (got - expected).abs() > 1e-10 {
        return Err(format!("InfoNCE {got:.12} vs brute force {expected:.12}"));
    }

    // SupCon, batch 4 labels [0,0,1,1]
    let z: Vec<Vec<f64>> =
        (0..4).map(|_| (0..3).map(|_| rng.gen::<f64>() - 0.5).collect()).collect();
    let zn = normalize(&z);
    let labels = [0usize, 0, 1, 1];
    let mut expected_sc = 0.0;
    let mut n_anchors = 0usize;
    for i in 0..4 {
        let pos: Vec<usize> = (0..4).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        n_anchors += 1;
        let sims: Vec<f64> = (0..4)
            .map(|j| zn[i].iter().zip(&zn[j]).map(|(x, y)| x * y).sum::<f64>() / tau)
            .collect();
        let denom: f64 = (0..4).filter(|&j| j != i).map(|j| sims[j].exp()).sum();
        for &p in &pos {
            expected_sc -= (sims[p] - denom.ln()) / pos.len() as f64;
        }
    }
    let expected_sc = expected_sc / n_anchors as f64;
    let mut g = Graph::new();
    let nz = g.constant(Tensor::matrix(4, 3, flat(&z)).unwrap());
    let loss = supcon_loss(&mut g, nz, &labels, tau).map_err(|e| e.to_string())?;
    let eval = g.forward(&params, &mut rng2, false).map_err(|e| e.to_string())?;
    let got = eval.value(loss).item();
    if (got - expected_sc).abs() > 1e-10 {
        return Err(format!("SupCon {got:.12} vs brute force {expected_sc:.12}"));
    }
    Ok(())
}

fn check_fd_bins() -> Result<(), String> {
    let quantile_oracle = |sorted: &[f64], p: f64| -> f64 {
        let idx = p * (sorted.len() - 1) as f64;
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (idx - lo as f64)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for trial in 0..20 {
        let n = rng.gen_range(10..400);
        let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0 - 5.0).collect();
        let edges = fd_bins(&y).map_err(|e| e.to_string())?;
        let mut sorted = y.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        let iqr = quantile_oracle(&sorted, 0.75) - quantile_oracle(&sorted, 0.25);
        let h = 2.0 * iqr * (n as f64).powf(-1.0 / 3.0);
        let n_bins = (((hi - lo) / h).ceil() as usize).max(2);
        if edges.len() != n_bins + 1 {
            return Err(format!("trial {trial}: {} edges vs formula {}", edges.len(), n_bins + 1));
        }
        for (i, e) in edges.iter().enumerate() {
            let want = lo + (hi - lo) * i as f64 / n_bins as f64;
            if (e - want).abs() > 1e-9 {
                return Err(format!("trial {trial}: edge {i} = {e} vs formula {want}"));
            }
        }
    }
    Ok(())
}

fn check_roc_auc() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for trial in 0..100 {
        let n = rng.gen_range(4..60);
        // quantized scores so ties occur regularly
        let scores: Vec<f64> = (0..n).map(|_| (rng.gen::<f64>() * 8.0).round() / 8.0).collect();
        let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let got = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        let want = num / pairs;
        if (got - want).abs() > 1e-12 {
            return Err(format!("trial {trial}: roc_auc {got} vs pair counting {want}"));
        }
    }
    Ok(())
}

fn check_bit_reproducibility() -> Result<(), String> {
    let spec = SyntheticSpec { n: 600, m: 4, c: 0.3, n_trees: 3, depth: 3 };
    let ds = generate(&spec, 5).unwrap().ds;
    let prep = prepare(&ds, 5).unwrap();
    let model = ModelSpec {
        backbone: BackboneSpec { layers: 2, layer_size: 16, dropout: 0.1 },
        embedding: EmbeddingSpec::None,
        target_conditioned: false,
    };
    let config: TrainConfig = serde_json::from_value(serde_json::json!({
        "lr": 1e-3,
        "weight_decay": 1e-5,
        "corrupt_p": 0.4,
        "max_pretrain_iters": 100,
        "eval_every": 50,
        "max_finetune_epochs": 5,
        "finetune_patience": 5
    }))
    .unwrap();
    let pipe = Pipeline::new(&ds, &prep, model, config, Some("mask".into())).unwrap();
    let a = pipe.run_seed(3).map_err(|e| e.to_string())?;
    let b = pipe.run_seed(3).map_err(|e| e.to_string())?;
    if a.val_metric.to_bits() != b.val_metric.to_bits()
        || a.test_metric.to_bits() != b.test_metric.to_bits()
    {
        return Err(format!(
            "repeated run differs: val {} vs {}, test {} vs {}",
            a.val_metric, b.val_metric, a.test_metric, b.test_metric
        ));
    }
    let curves_match = a.pretrain_curve.len() == b.pretrain_curve.len()
        && a.pretrain_curve
            .iter()
            .zip(&b.pretrain_curve)
            .all(|(x, y)| x.to_bits() == y.to_bits());
    if !curves_match {
        return Err("pretrain curves differ between identical runs".into());
    }
    Ok(())
}

#[test]
fn criterion_8_property_suites() {
    let checks: [(&str, fn() -> Result<(), String>); 6] = [
        ("gradients", check_gradients),
        ("corruption", check_corruption),
        ("contrastive", check_contrastive_brute_force),
        ("fd_bins", check_fd_bins),
        ("roc_auc", check_roc_auc),
        ("reproducibility", check_bit_reproducibility),
    ];
    let mut failures = Vec::new();
    for (name, f) in checks {
        if let Err(e) = f() {
            failures.push(format!("{name}: {e}"));
        }
    }
    let detail = if failures.is_empty() {
        "gradients, corruption stats, contrastive brute force, fd_bins, roc_auc, bit reproducibility all hold".to_string()
    } else {
        failures.join("; ")
    };
    verdict("8", failures.is_empty(), &detail);
}
