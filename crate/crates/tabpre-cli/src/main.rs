//! Command-line driver: config-driven pretraining / finetuning experiments
//! with on-disk artifacts (config copy, per-seed CSV, JSON reports).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use tabpre::checkpoint;
use tabpre::data::{self, prepare, Dataset, Prepared};
use tabpre::hpo::{sample, SearchSpace};
use tabpre::model::{EmbeddingSpec, ModelSpec};
use tabpre::synth::{
    decodability_probe, embeddings, generate, importance_rank, ProbeConfig, SyntheticSpec,
};
use tabpre::trainer::{
    ensemble_metric, metric_of, EnsembleMode, Pipeline, RunRecord, SeedOutcome, TrainConfig,
};

#[derive(Parser)]
#[command(name = "tabpre", version, about = "Tabular pretraining experiment runner")]
struct Cli {
    /// Output root (default: $TABPRE_OUT or ./out)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for seeds and search trials
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset and print a preprocessing summary
    Prepare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Full pipeline over all configured seeds (pretrain + finetune)
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Supervised-from-scratch baseline (ignores any configured objective)
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pretraining stage only; writes a checkpoint
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finetune from a pretrained checkpoint
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random-search hyperparameter optimization
    Hpo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 30)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// 3x5 seed ensembles over the test split
    Ensemble {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Standard)]
        mode: ModeArg,
    },
    /// Generate a synthetic oblivious-tree dataset
    Synth {
        /// Directory to write the dataset into (created, must not exist)
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50_000)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        m: usize,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        #[arg(long, default_value_t = 10)]
        trees: usize,
        #[arg(long, default_value_t = 10)]
        depth: usize,
    },
    /// Feature-decodability probe over frozen embeddings
    Probe {
        /// Config whose dataset points at a `synth`-generated directory
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Side-by-side comparison of run reports
    Report {
        /// Paths to report.json files; deltas are relative to the first
        reports: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Standard,
    Efficient,
}

/// Top-level experiment config; keys mirror the library types one-to-one.
#[derive(Clone, Serialize, Deserialize)]
struct RunConfig {
    dataset: PathBuf,
    #[serde(default)]
    objective: Option<String>,
    #[serde(default)]
    prep_seed: u64,
    #[serde(default = "default_seeds")]
    seeds: SeedsSpec,
    model: ModelSpec,
    train: TrainConfig,
    /// Search space for the `hpo` command.
    #[serde(default)]
    search: Option<SearchSpace>,
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SeedsSpec {
    Count(u64),
    List(Vec<u64>),
}

fn default_seeds() -> SeedsSpec {
    SeedsSpec::Count(15)
}

impl SeedsSpec {
    fn expand(&self) -> Vec<u64> {
        match self {
            SeedsSpec::Count(n) => (0..*n).collect(),
            SeedsSpec::List(v) => v.clone(),
        }
    }
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let msg: String = format!("{e:#}").replace('\n', " | ");
        eprintln!("error: {msg}");
        std::process::exit(1);
    }
}

fn out_root(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os("TABPRE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn run(cli: Cli) -> Result<()> {
    let root = out_root(&cli.out);
    let jobs = cli.jobs.max(1);
    match cli.command {
        Command::Prepare { config } => cmd_prepare(&config),
        Command::Run { config } => cmd_run(&config, &root, jobs, false),
        Command::Train { config } => cmd_run(&config, &root, jobs, true),
        Command::Pretrain { config, seed } => cmd_pretrain(&config, &root, seed),
        Command::Finetune { config, checkpoint, seed } => {
            cmd_finetune(&config, &checkpoint, &root, seed)
        }
        Command::Hpo { config, trials, seed } => cmd_hpo(&config, &root, jobs, trials, seed),
        Command::Ensemble { config, mode } => cmd_ensemble(&config, &root, mode),
        Command::Synth { dir, seed, n, m, c, trees, depth } => {
            cmd_synth(&dir, seed, n, m, c, trees, depth)
        }
        Command::Probe { config, seed } => cmd_probe(&config, &root, seed),
        Command::Report { reports } => cmd_report(&reports),
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}

struct Loaded {
    ds: Dataset,
    prep: Prepared,
}

fn load_data(cfg: &RunConfig) -> Result<Loaded> {
    let ds = data::load(&cfg.dataset)
        .with_context(|| format!("loading dataset {}", cfg.dataset.display()))?;
    let prep = prepare(&ds, cfg.prep_seed)?;
    Ok(Loaded { ds, prep })
}

fn model_tag(spec: &ModelSpec) -> &'static str {
    match spec.embedding {
        EmbeddingSpec::None => "mlp",
        EmbeddingSpec::Plr { .. } => "mlp_plr",
        EmbeddingSpec::Tlr { .. } => "mlp_tlr",
    }
}

/// Creates `root/<dataset>/<model>/<objective>/<timestamp>-<hash>/` and
/// stamps the exact config into it. Refuses to reuse an existing directory.
fn artifact_dir(root: &Path, cfg: &RunConfig, objective: &str) -> Result<PathBuf> {
    let ds_name = cfg
        .dataset
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).unwrap().as_millis();
    let dir = root
        .join(ds_name)
        .join(model_tag(&cfg.model))
        .join(objective)
        .join(format!("{ts}-{}", cfg.train.hash()));
    if dir.exists() {
        bail!("output directory {} already exists; refusing to overwrite", dir.display());
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(dir)
}

/// Runs `f` over `items` on up to `jobs` threads, preserving order.
fn parallel_map<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    if jobs <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let work: Vec<Mutex<Option<T>>> = items.into_iter().map(|t| Mutex::new(Some(t))).collect();
    let results: Vec<Mutex<Option<R>>> = work.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(work.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= work.len() {
                    break;
                }
                let item = work[i].lock().unwrap().take().unwrap();
                *results[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    results.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

fn aggregate(config_hash: String, objective: String, mut outs: Vec<(u64, Result<SeedOutcome, tabpre::TabError>)>) -> RunRecord {
    outs.sort_by_key(|(s, _)| *s);
    let mut seeds = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in outs {
        match r {
            Ok(o) => seeds.push(o),
            Err(e) => {
                log::warn!("seed {seed} failed: {e}");
                failed.push(seed);
            }
        }
    }
    let n = seeds.len().max(1) as f64;
    let mean = seeds.iter().map(|s| s.test_metric).sum::<f64>() / n;
    let var = seeds.iter().map(|s| (s.test_metric - mean).powi(2)).sum::<f64>() / n;
    RunRecord {
        config_hash,
        objective,
        seeds,
        failed_seeds: failed,
        test_mean: mean,
        test_std: var.sqrt(),
    }
}

// ---------------------------------------------------------------------------
// commands

fn cmd_prepare(config: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let Loaded { ds, prep } = load_data(&cfg)?;
    println!("dataset: {}", ds.name);
    println!("task: {:?}  classes: {:?}", ds.task, ds.n_classes);
    println!(
        "rows: {} (train {} / val {} / test {})",
        ds.n_rows(),
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len()
    );
    println!("numeric features: {}  categorical: {}", ds.m_num(), ds.m_cat);
    println!("preprocess: {:?}  batch size: {}", ds.preprocess, ds.batch_size);
    println!("target encoding width: {}", prep.codec.width());
    Ok(())
}

fn cmd_run(config: &Path, root: &Path, jobs: usize, scratch: bool) -> Result<()> {
    let mut cfg = load_config(config)?;
    if scratch {
        cfg.objective = None;
    }
    let objective = cfg.objective.clone().unwrap_or_else(|| "scratch".into());
    let Loaded { ds, prep } = load_data(&cfg)?;
    let pipeline = Pipeline::new(&ds, &prep, cfg.model.clone(), cfg.train.clone(), cfg.objective.clone())?;
    let dir = artifact_dir(root, &cfg, &objective)?;
    let seeds = cfg.seeds.expand();
    let outs = parallel_map(jobs, seeds, |seed| (seed, pipeline.run_seed(seed)));
    let record = aggregate(cfg.train.hash(), objective, outs);
    if record.seeds.is_empty() {
        bail!("all seeds failed");
    }
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&record)?)?;
    fs::write(dir.join("seeds.csv"), record.to_csv())?;
    println!(
        "{}: test {:?} mean {:.4} std {:.4} over {} seeds ({} failed) -> {}",
        record.objective,
        pipeline.metric_kind(),
        record.test_mean,
        record.test_std,
        record.seeds.len(),
        record.failed_seeds.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_pretrain(config: &Path, root: &Path, seed: u64) -> Result<()> {
    let cfg = load_config(config)?;
    let objective = cfg
        .objective
        .clone()
        .ok_or_else(|| anyhow!("pretrain requires an objective in the config"))?;
    let Loaded { ds, prep } = load_data(&cfg)?;
    let pipeline = Pipeline::new(&ds, &prep, cfg.model.clone(), cfg.train.clone(), Some(objective.clone()))?;
    let dir = artifact_dir(root, &cfg, &objective)?;
    let mut model = pipeline.build_model(seed)?;
    let obj = tabpre::objective::create_full(
        &objective,
        cfg.train.tau,
        cfg.train.include_clean_negatives,
    )?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9).wrapping_add(1),
    );
    let curve = pipeline.pretrain(&mut model, obj.as_ref(), &mut rng)?;
    let ckpt = dir.join("pretrained.ckpt");
    checkpoint::save(
        &ckpt,
        &model.params,
        curve.len() as u64,
        serde_json::json!({ "objective": objective, "seed": seed, "config_hash": cfg.train.hash() }),
    )?;
    let mut csv = String::from("eval,criterion\n");
    for (i, v) in curve.iter().enumerate() {
        csv.push_str(&format!("{i},{v}\n"));
    }
    fs::write(dir.join("curve.csv"), csv)?;
    println!("pretrained {objective} (seed {seed}) -> {}", ckpt.display());
    Ok(())
}

fn cmd_finetune(config: &Path, checkpoint: &Path, root: &Path, seed: u64) -> Result<()> {
    let cfg = load_config(config)?;
    let objective = cfg.objective.clone().unwrap_or_else(|| "scratch".into());
    let Loaded { ds, prep } = load_data(&cfg)?;
    let pipeline = Pipeline::new(&ds, &prep, cfg.model.clone(), cfg.train.clone(), cfg.objective.clone())?;
    let ck = checkpoint::load(checkpoint)?;
    let dir = artifact_dir(root, &cfg, &format!("{objective}-finetune"))?;
    let mut model = pipeline.build_model(seed)?;
    model.params.copy_values_from(&ck.params)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x517c_c1b7).wrapping_add(7),
    );
    let (val, test) = pipeline.finetune(&mut model, &mut rng, cfg.train.max_finetune_epochs)?;
    let report = serde_json::json!({
        "checkpoint": checkpoint.display().to_string(),
        "seed": seed,
        "metric": format!("{:?}", pipeline.metric_kind()),
        "val": val,
        "test": test,
    });
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("finetune seed {seed}: val {val:.4} test {test:.4} -> {}", dir.display());
    Ok(())
}

fn cmd_hpo(config: &Path, root: &Path, jobs: usize, trials: usize, seed: u64) -> Result<()> {
    let cfg = load_config(config)?;
    let space = cfg
        .search
        .clone()
        .ok_or_else(|| anyhow!("hpo requires a `search` section in the config"))?;
    if trials == 0 {
        bail!("--trials must be >= 1");
    }
    let Loaded { ds, prep } = load_data(&cfg)?;
    let dir = artifact_dir(root, &cfg, "hpo")?;

    // Draw every trial from one master stream (reproducible regardless of
    // --jobs), then score them in parallel.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = Vec::with_capacity(trials);
    for _ in 0..trials {
        drawn.push(sample(&space, &cfg.train, &mut rng)?);
    }
    let scored = parallel_map(jobs, drawn.into_iter().enumerate().collect(), |(i, (model, train))| {
        let start = std::time::Instant::now();
        let score = Pipeline::new(&ds, &prep, model.clone(), train.clone(), space.objective.clone())
            .and_then(|p| {
                let out = p.run_seed(seed)?;
                // negate: the trial log ranks lower-is-better
                Ok(-p.metric_kind().oriented(out.val_metric))
            });
        let secs = start.elapsed().as_secs_f64();
        match score {
            Ok(s) => (i, model, train, s, secs),
            Err(e) => {
                log::warn!("trial {i} failed: {e}");
                (i, model, train, f64::INFINITY, secs)
            }
        }
    });

    let mut csv = String::from("trial_id,params,val_metric,wall_seconds\n");
    for (i, model, train, s, secs) in &scored {
        let params = serde_json::json!({ "model": model, "train": train });
        csv.push_str(&format!(
            "{i},\"{}\",{s},{secs:.3}\n",
            params.to_string().replace('"', "\"\"")
        ));
    }
    fs::write(dir.join("trials.csv"), csv)?;
    let best = scored
        .iter()
        .filter(|(_, _, _, s, _)| s.is_finite())
        .min_by(|a, b| a.3.partial_cmp(&b.3).unwrap())
        .ok_or_else(|| anyhow!("all {trials} trials failed"))?;
    let best_json = serde_json::json!({
        "trial_id": best.0,
        "model": best.1,
        "train": best.2,
        "val_metric_oriented": best.3,
    });
    fs::write(dir.join("best.json"), serde_json::to_string_pretty(&best_json)?)?;
    println!(
        "best trial {} (oriented val {:.4}) over {trials} trials -> {}",
        best.0,
        best.3,
        dir.display()
    );
    Ok(())
}

fn cmd_ensemble(config: &Path, root: &Path, mode: ModeArg) -> Result<()> {
    let cfg = load_config(config)?;
    let objective = cfg.objective.clone().unwrap_or_else(|| "scratch".into());
    let seeds = cfg.seeds.expand();
    if seeds.len() != 15 {
        bail!("ensembling needs exactly 15 seeds, config has {}", seeds.len());
    }
    let Loaded { ds, prep } = load_data(&cfg)?;
    let pipeline = Pipeline::new(&ds, &prep, cfg.model.clone(), cfg.train.clone(), cfg.objective.clone())?;
    let (mode_name, mode) = match mode {
        ModeArg::Standard => ("standard", EnsembleMode::Standard),
        ModeArg::Efficient => ("efficient", EnsembleMode::Efficient),
    };
    let dir = artifact_dir(root, &cfg, &format!("{objective}-ensemble-{mode_name}"))?;
    let preds = pipeline.seed_predictions(&seeds, mode)?;
    let kind = pipeline.metric_kind();
    let singles: Vec<f64> = preds
        .iter()
        .map(|p| metric_of(kind, p, &ds, &ds.splits.test))
        .collect::<Result<_, _>>()?;
    let single_mean = singles.iter().sum::<f64>() / singles.len() as f64;
    let ens = ensemble_metric(&preds, kind, &ds, &ds.splits.test)?;
    let report = serde_json::json!({
        "mode": mode_name,
        "metric": format!("{kind:?}"),
        "single_model_mean": single_mean,
        "group_metrics": ens.group_metrics,
        "ensemble_mean": ens.mean,
    });
    fs::write(dir.join("ensemble.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "{mode_name} ensemble: single mean {single_mean:.4}, ensemble mean {:.4} -> {}",
        ens.mean,
        dir.display()
    );
    Ok(())
}

fn cmd_synth(
    dir: &Path,
    seed: u64,
    n: usize,
    m: usize,
    c: f64,
    trees: usize,
    depth: usize,
) -> Result<()> {
    if dir.exists() {
        bail!("directory {} already exists; refusing to overwrite", dir.display());
    }
    let spec = SyntheticSpec { n, m, c, n_trees: trees, depth };
    let gen = generate(&spec, seed)?;
    fs::create_dir_all(dir)?;
    data::save(dir, &gen.ds)?;
    let ranks = importance_rank(&gen.p);
    let mut csv = String::from("feature,p,importance_rank\n");
    for (f, (pv, r)) in gen.p.iter().zip(&ranks).enumerate() {
        csv.push_str(&format!("{f},{pv},{r}\n"));
    }
    fs::write(dir.join("p.csv"), csv)?;
    println!("generated {} rows x {} features (seed {seed}) -> {}", n, m, dir.display());
    Ok(())
}

fn cmd_probe(config: &Path, root: &Path, seed: u64) -> Result<()> {
    let cfg = load_config(config)?;
    let init_kind = cfg.objective.clone().unwrap_or_else(|| "scratch".into());
    let Loaded { ds, prep } = load_data(&cfg)?;
    let p_path = cfg.dataset.join("p.csv");
    let p_text = fs::read_to_string(&p_path)
        .with_context(|| format!("reading {} (probe needs a synth dataset)", p_path.display()))?;
    let mut p = Vec::new();
    for line in p_text.lines().skip(1) {
        let mut it = line.split(',');
        let _feature = it.next();
        let pv: f64 = it
            .next()
            .ok_or_else(|| anyhow!("malformed p.csv line: {line}"))?
            .parse()
            .with_context(|| format!("malformed p.csv line: {line}"))?;
        p.push(pv);
    }
    if p.len() != ds.m_num() {
        bail!("p.csv lists {} features, dataset has {}", p.len(), ds.m_num());
    }
    let ranks = importance_rank(&p);

    let pipeline = Pipeline::new(&ds, &prep, cfg.model.clone(), cfg.train.clone(), cfg.objective.clone())?;
    let dir = artifact_dir(root, &cfg, &format!("{init_kind}-probe"))?;
    let mut model = pipeline.build_model(seed)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9e37_79b9).wrapping_add(1),
    );
    match &cfg.objective {
        Some(kind) => {
            let obj = tabpre::objective::create_full(
                kind,
                cfg.train.tau,
                cfg.train.include_clean_negatives,
            )?;
            pipeline.pretrain(&mut model, obj.as_ref(), &mut rng)?;
        }
        None => {
            pipeline.finetune(&mut model, &mut rng, cfg.train.max_finetune_epochs)?;
        }
    }
    let all_rows: Vec<usize> = (0..ds.n_rows()).collect();
    let emb = embeddings(&model, &ds, &prep.x, &all_rows)?;
    let probe_cfg = ProbeConfig::default();
    let mut csv = String::from("feature,importance_rank,rmse,init_kind\n");
    for feature in 0..ds.m_num() {
        let rmse = decodability_probe(&emb, &ds, feature, &probe_cfg, seed ^ 0xda7a)?;
        csv.push_str(&format!("{feature},{},{rmse},{init_kind}\n", ranks[feature]));
        log::info!("feature {feature}: rank {} rmse {rmse:.4}", ranks[feature]);
    }
    let path = dir.join("probe.csv");
    fs::write(&path, csv)?;
    println!("probe ({init_kind}, seed {seed}) -> {}", path.display());
    Ok(())
}

fn cmd_report(reports: &[PathBuf]) -> Result<()> {
    if reports.is_empty() {
        bail!("report needs at least one report.json path");
    }
    let mut records = Vec::new();
    for path in reports {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let r: RunRecord = serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        records.push((path, r));
    }
    let base = records[0].1.test_mean;
    println!(
        "{:<20} {:>10} {:>10} {:>8} {:>10}  {}",
        "objective", "test_mean", "test_std", "seeds", "delta", "report"
    );
    for (path, r) in &records {
        println!(
            "{:<20} {:>10.4} {:>10.4} {:>8} {:>+10.4}  {}",
            r.objective,
            r.test_mean,
            r.test_std,
            r.seeds.len(),
            r.test_mean - base,
            path.display()
        );
    }
    Ok(())
}

