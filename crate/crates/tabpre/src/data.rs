//! Dataset ingestion, splits and preprocessing.
//!
//! On-disk layout of a dataset directory:
//!   X_num.csv   numeric features, header row, one row per object
//!   X_cat.csv   optional categorical features (strings), header row
//!   y.csv       targets, no header
//!   schema.json task / preprocess flag / batch size / splits
//!   idx_train.csv, idx_val.csv, idx_test.csv   row indices, one per line
//!     (alternatively schema.json carries "split_sizes": [train, val, test]
//!     meaning contiguous blocks)

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::TabError;
use crate::tensor::Tensor;

pub const VALID_BATCH_SIZES: [usize; 4] = [128, 256, 512, 1024];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Binclass,
    Multiclass,
    Regression,
}

impl TaskType {
    pub fn is_classification(self) -> bool {
        self != TaskType::Regression
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preprocess {
    Quantile,
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Float(Vec<f64>),
    Class(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Float(v) => v.len(),
            Targets::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class(&self, i: usize) -> usize {
        match self {
            Targets::Class(v) => v[i],
            Targets::Float(_) => panic!("class target requested on regression dataset"),
        }
    }

    pub fn float(&self, i: usize) -> f64 {
        match self {
            Targets::Float(v) => v[i],
            Targets::Class(v) => v[i] as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    /// n × m_num raw numeric features.
    pub num: Tensor,
    /// n × m_cat dense categorical codes, row-major. Empty when m_cat = 0.
    pub cat: Vec<usize>,
    pub m_cat: usize,
    /// Per categorical column: number of codes including the reserved
    /// "unknown" slot.
    pub cardinalities: Vec<usize>,
    pub y: Targets,
    pub splits: Splits,
    pub task: TaskType,
    pub n_classes: usize,
    pub batch_size: usize,
    pub preprocess: Preprocess,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn m_num(&self) -> usize {
        if self.num.numel() == 0 {
            0
        } else {
            self.num.cols()
        }
    }

    pub fn cat_code(&self, row: usize, col: usize) -> usize {
        self.cat[row * self.m_cat + col]
    }

    pub fn validate(&self) -> Result<(), TabError> {
        let n = self.n_rows();
        if self.splits.train.is_empty() || self.splits.val.is_empty() || self.splits.test.is_empty()
        {
            return Err(TabError::Data("empty split".into()));
        }
        let mut seen = vec![false; n];
        for idx in self
            .splits
            .train
            .iter()
            .chain(&self.splits.val)
            .chain(&self.splits.test)
        {
            if *idx >= n {
                return Err(TabError::Data(format!("split index {idx} out of range {n}")));
            }
            if seen[*idx] {
                return Err(TabError::Data(format!("split overlap at row {idx}")));
            }
            seen[*idx] = true;
        }
        if !VALID_BATCH_SIZES.contains(&self.batch_size) {
            return Err(TabError::Data(format!(
                "batch_size {} not in {VALID_BATCH_SIZES:?}",
                self.batch_size
            )));
        }
        if !self.num.all_finite() {
            return Err(TabError::Data("NaN or infinite feature value".into()));
        }
        if let Targets::Float(v) = &self.y {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(TabError::Data("NaN target".into()));
            }
        }
        for (r, chunk) in self.cat.chunks(self.m_cat.max(1)).enumerate() {
            if self.m_cat == 0 {
                break;
            }
            for (c, &code) in chunk.iter().enumerate() {
                if code >= self.cardinalities[c] {
                    return Err(TabError::Data(format!(
                        "categorical code {code} out of range at row {r} col {c}"
                    )));
                }
            }
        }
        match self.task {
            TaskType::Binclass if self.n_classes != 2 => {
                return Err(TabError::Data("binclass requires 2 classes".into()))
            }
            TaskType::Multiclass if self.n_classes < 3 => {
                return Err(TabError::Data("multiclass requires k >= 3".into()))
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Schema {
    task: String,
    #[serde(default)]
    n_classes: Option<usize>,
    preprocess: Preprocess,
    batch_size: usize,
    #[serde(default)]
    split_sizes: Option<[usize; 3]>,
}

fn read_csv_numeric(path: &Path, header: bool) -> Result<(Vec<Vec<f64>>, usize), TabError> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    let mut cols = 0;
    for (i, line) in text.lines().enumerate() {
        if i == 0 && header {
            cols = line.split(',').count();
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    TabError::Data(format!("{}: bad number '{s}' on line {}", path.display(), i + 1))
                })
            })
            .collect::<Result<_, _>>()?;
        if cols == 0 {
            cols = row.len();
        } else if row.len() != cols {
            return Err(TabError::Data(format!(
                "{}: ragged row on line {}",
                path.display(),
                i + 1
            )));
        }
        rows.push(row);
    }
    Ok((rows, cols))
}

fn read_index_file(path: &Path) -> Result<Vec<usize>, TabError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| TabError::Data(format!("{}: bad index '{l}'", path.display())))
        })
        .collect()
}

/// Loads a dataset directory. Categorical strings are mapped to dense codes
/// learned on the training split; unseen validation/test categories map to a
/// reserved "unknown" code.
pub fn load(dir: &Path) -> Result<Dataset, TabError> {
    let schema_path = dir.join("schema.json");
    if !schema_path.exists() {
        return Err(TabError::Data(format!("missing {}", schema_path.display())));
    }
    let schema: Schema = serde_json::from_str(&fs::read_to_string(&schema_path)?)?;
    let task = match schema.task.as_str() {
        "binclass" => TaskType::Binclass,
        "multiclass" => TaskType::Multiclass,
        "regression" => TaskType::Regression,
        other => return Err(TabError::Data(format!("unknown task '{other}'"))),
    };

    let num_path = dir.join("X_num.csv");
    let (num_rows, m_num) = if num_path.exists() {
        read_csv_numeric(&num_path, true)?
    } else {
        (Vec::new(), 0)
    };

    let y_path = dir.join("y.csv");
    if !y_path.exists() {
        return Err(TabError::Data(format!("missing {}", y_path.display())));
    }
    let y_text = fs::read_to_string(&y_path)?;
    let y_lines: Vec<&str> = y_text.lines().filter(|l| !l.trim().is_empty()).collect();
    let n = y_lines.len();

    let cat_path = dir.join("X_cat.csv");
    let (cat_strings, m_cat): (Vec<Vec<String>>, usize) = if cat_path.exists() {
        let text = fs::read_to_string(&cat_path)?;
        let mut rows = Vec::new();
        let mut cols = 0;
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                cols = line.split(',').count();
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            rows.push(line.split(',').map(|s| s.trim().to_string()).collect());
        }
        (rows, cols)
    } else {
        (Vec::new(), 0)
    };

    if !num_rows.is_empty() && num_rows.len() != n {
        return Err(TabError::Data(format!(
            "X_num has {} rows, y has {n}",
            num_rows.len()
        )));
    }
    if !cat_strings.is_empty() && cat_strings.len() != n {
        return Err(TabError::Data(format!(
            "X_cat has {} rows, y has {n}",
            cat_strings.len()
        )));
    }

    let splits = match schema.split_sizes {
        Some([a, b, c]) => {
            if a + b + c > n {
                return Err(TabError::Data("split sizes exceed row count".into()));
            }
            Splits {
                train: (0..a).collect(),
                val: (a..a + b).collect(),
                test: (a + b..a + b + c).collect(),
            }
        }
        None => Splits {
            train: read_index_file(&dir.join("idx_train.csv"))?,
            val: read_index_file(&dir.join("idx_val.csv"))?,
            test: read_index_file(&dir.join("idx_test.csv"))?,
        },
    };

    let (y, n_classes) = match task {
        TaskType::Regression => {
            let vals: Vec<f64> = y_lines
                .iter()
                .map(|l| {
                    l.trim()
                        .parse::<f64>()
                        .map_err(|_| TabError::Data(format!("bad target '{l}'")))
                })
                .collect::<Result<_, _>>()?;
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(TabError::Data("NaN target".into()));
            }
            (Targets::Float(vals), 0)
        }
        _ => {
            let vals: Vec<usize> = y_lines
                .iter()
                .map(|l| {
                    l.trim()
                        .parse::<usize>()
                        .map_err(|_| TabError::Data(format!("bad class label '{l}'")))
                })
                .collect::<Result<_, _>>()?;
            let k = vals.iter().max().map_or(0, |m| m + 1);
            (Targets::Class(vals), k)
        }
    };
    let n_classes = schema.n_classes.unwrap_or(n_classes);

    // categorical codes from the training split; unseen -> reserved slot
    let mut cat = Vec::new();
    let mut cardinalities = Vec::new();
    if m_cat > 0 {
        let mut maps: Vec<HashMap<&str, usize>> = vec![HashMap::new(); m_cat];
        for &r in &splits.train {
            for c in 0..m_cat {
                let s = cat_strings[r][c].as_str();
                let next = maps[c].len();
                maps[c].entry(s).or_insert(next);
            }
        }
        cardinalities = maps.iter().map(|m| m.len() + 1).collect();
        cat.reserve(n * m_cat);
        for r in 0..n {
            for c in 0..m_cat {
                let code = maps[c]
                    .get(cat_strings[r][c].as_str())
                    .copied()
                    .unwrap_or(maps[c].len()); // unknown slot
                cat.push(code);
            }
        }
    }

    let num = if m_num == 0 {
        Tensor::zeros(vec![n.max(1), 1]) // placeholder, never read when m_num == 0
    } else {
        Tensor::matrix(n, m_num, num_rows.into_iter().flatten().collect())?
    };
    let num = if m_num == 0 { Tensor::matrix(0, 0, vec![]).unwrap_or(num) } else { num };

    let ds = Dataset {
        name: dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into()),
        num,
        cat,
        m_cat,
        cardinalities,
        y,
        splits,
        task,
        n_classes,
        batch_size: schema.batch_size,
        preprocess: schema.preprocess,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes a dataset directory in the same layout `load` reads.
pub fn save(dir: &Path, ds: &Dataset) -> Result<(), TabError> {
    fs::create_dir_all(dir)?;
    let m_num = ds.m_num();
    if m_num > 0 {
        let mut s = (0..m_num)
            .map(|c| format!("f{c}"))
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for r in 0..ds.n_rows() {
            let row: Vec<String> = ds.num.row(r).iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        fs::write(dir.join("X_num.csv"), s)?;
    }
    if ds.m_cat > 0 {
        let mut s = (0..ds.m_cat)
            .map(|c| format!("c{c}"))
            .collect::<Vec<_>>()
            .join(",");
        s.push('\n');
        for r in 0..ds.n_rows() {
            let row: Vec<String> = (0..ds.m_cat)
                .map(|c| format!("v{}", ds.cat_code(r, c)))
                .collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        fs::write(dir.join("X_cat.csv"), s)?;
    }
    let mut ys = String::new();
    for i in 0..ds.n_rows() {
        match &ds.y {
            Targets::Float(v) => ys.push_str(&format!("{:?}\n", v[i])),
            Targets::Class(v) => ys.push_str(&format!("{}\n", v[i])),
        }
    }
    fs::write(dir.join("y.csv"), ys)?;
    for (name, idx) in [
        ("idx_train.csv", &ds.splits.train),
        ("idx_val.csv", &ds.splits.val),
        ("idx_test.csv", &ds.splits.test),
    ] {
        let s: String = idx.iter().map(|i| format!("{i}\n")).collect();
        fs::write(dir.join(name), s)?;
    }
    let schema = Schema {
        task: match ds.task {
            TaskType::Binclass => "binclass".into(),
            TaskType::Multiclass => "multiclass".into(),
            TaskType::Regression => "regression".into(),
        },
        n_classes: if ds.task.is_classification() {
            Some(ds.n_classes)
        } else {
            None
        },
        preprocess: ds.preprocess,
        batch_size: ds.batch_size,
        split_sizes: None,
    };
    fs::write(dir.join("schema.json"), serde_json::to_string_pretty(&schema)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// quantile transform

/// Type-7 (linear interpolation) empirical quantile of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&v, p)
}

const CDF_CLIP: f64 = 1e-7;

/// Per-column empirical-CDF-to-standard-normal transform fitted on the
/// training split only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantileTransform {
    /// Per column: non-decreasing knot values.
    knots: Vec<Vec<f64>>,
    /// Per column: reference quantile levels matching the knots.
    refs: Vec<Vec<f64>>,
    /// Columns that were constant at fit time; they map to all-zeros.
    constant: Vec<bool>,
}

impl QuantileTransform {
    /// Fits on training columns. Columns with >25% duplicated values receive
    /// a tiny deterministic jitter (scale 1e-3·std, seeded) before fitting
    /// so the empirical CDF has no flat plateaus; the jitter exists only at
    /// fit time.
    pub fn fit(train_cols: &[Vec<f64>], seed: u64) -> Result<Self, TabError> {
        let mut knots = Vec::with_capacity(train_cols.len());
        let mut refs = Vec::with_capacity(train_cols.len());
        let mut constant = Vec::with_capacity(train_cols.len());
        for (c, col) in train_cols.iter().enumerate() {
            if col.len() < 2 {
                return Err(TabError::Data(format!(
                    "quantile transform needs >= 2 rows, column {c} has {}",
                    col.len()
                )));
            }
            let n = col.len();
            let mut values = col.clone();

            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let distinct = sorted.windows(2).filter(|w| w[0] != w[1]).count() + 1;
            let is_constant = distinct == 1;
            if is_constant {
                log::warn!("quantile transform: column {c} is constant, mapping to zeros");
            } else if (n - distinct) as f64 > 0.25 * n as f64 {
                let mean = values.iter().sum::<f64>() / n as f64;
                let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / n as f64)
                    .sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
                for v in values.iter_mut() {
                    *v += 1e-3 * std * (rng.gen::<f64>() - 0.5);
                }
                sorted = values.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            }

            let n_q = n.min(1000);
            let levels: Vec<f64> = (0..n_q).map(|i| i as f64 / (n_q - 1) as f64).collect();
            let k: Vec<f64> = levels.iter().map(|&p| quantile_sorted(&sorted, p)).collect();
            knots.push(k);
            refs.push(levels);
            constant.push(is_constant);
        }
        Ok(QuantileTransform { knots, refs, constant })
    }

    pub fn n_cols(&self) -> usize {
        self.knots.len()
    }

    /// Maps one raw value of column `c` through empirical CDF interpolation
    /// and the inverse standard normal CDF.
    pub fn transform_value(&self, c: usize, x: f64) -> f64 {
        if self.constant[c] {
            return 0.0;
        }
        let knots = &self.knots[c];
        let refs = &self.refs[c];
        let cdf = if x <= knots[0] {
            refs[0]
        } else if x >= *knots.last().unwrap() {
            *refs.last().unwrap()
        } else {
            let i = knots.partition_point(|&k| k < x);
            let (k0, k1) = (knots[i - 1], knots[i]);
            let t = (x - k0) / (k1 - k0);
            refs[i - 1] + t * (refs[i] - refs[i - 1])
        };
        let cdf = cdf.clamp(CDF_CLIP, 1.0 - CDF_CLIP);
        let normal = Normal::new(0.0, 1.0).unwrap();
        normal.inverse_cdf(cdf)
    }

    /// Transforms a full n×m matrix column-wise.
    pub fn transform_matrix(&self, x: &Tensor) -> Tensor {
        let (n, m) = (x.rows(), x.cols());
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            for c in 0..m {
                out[r * m + c] = self.transform_value(c, x.at(r, c));
            }
        }
        Tensor::matrix(n, m, out).expect("transform_matrix shape")
    }
}

// ---------------------------------------------------------------------------
// Freedman-Diaconis target binning

/// Bin edges over [min, max] with width from the Freedman-Diaconis rule
/// h = 2·IQR·n^(−1/3). Zero IQR falls back to max(2, ceil(n^(1/3)))
/// uniform bins; an all-equal vector gets its degenerate range expanded
/// by ±0.5.
pub fn fd_bins(y: &[f64]) -> Result<Vec<f64>, TabError> {
    let n = y.len();
    if n < 4 {
        return Err(TabError::Data(format!("fd_bins requires >= 4 values, got {n}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in y {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let (lo, hi) = if lo == hi { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let iqr = quantile(y, 0.75) - quantile(y, 0.25);
    let h = 2.0 * iqr * (n as f64).powf(-1.0 / 3.0);
    let n_bins = if h > 0.0 && lo < hi {
        ((hi - lo) / h).ceil() as usize
    } else {
        let fb = ((n as f64).powf(1.0 / 3.0)).ceil() as usize;
        log::info!("fd_bins: zero IQR, falling back to {} uniform bins", fb.max(2));
        fb.max(2)
    };
    let n_bins = n_bins.max(2);
    let width = (hi - lo) / n_bins as f64;
    Ok((0..=n_bins).map(|i| lo + width * i as f64).collect())
}

/// Index of the half-open bin [e_i, e_{i+1}) containing `v`; the last bin is
/// closed on the right. Values outside the range clamp to the end bins.
pub fn bin_of(edges: &[f64], v: f64) -> usize {
    let n_bins = edges.len() - 1;
    if v >= edges[n_bins] {
        return n_bins - 1;
    }
    if v <= edges[0] {
        return 0;
    }
    let i = edges.partition_point(|&e| e <= v);
    (i - 1).min(n_bins - 1)
}

// ---------------------------------------------------------------------------
// target codec

/// Encodes targets for target-aware heads: one-hot for classification,
/// standard scaling for regression (plus Freedman-Diaconis bin edges for
/// target-conditional corruption).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum TargetCodec {
    Classification { k: usize },
    Regression { mean: f64, std: f64, bin_edges: Vec<f64> },
}

impl TargetCodec {
    pub fn fit(ds: &Dataset) -> Result<Self, TabError> {
        match &ds.y {
            Targets::Class(_) => Ok(TargetCodec::Classification { k: ds.n_classes }),
            Targets::Float(v) => {
                let train: Vec<f64> = ds.splits.train.iter().map(|&i| v[i]).collect();
                let n = train.len() as f64;
                let mean = train.iter().sum::<f64>() / n;
                let std = (train.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
                if std <= 0.0 {
                    return Err(TabError::Data("constant regression target".into()));
                }
                let bin_edges = fd_bins(&train)?;
                Ok(TargetCodec::Regression { mean, std, bin_edges })
            }
        }
    }

    /// Width of the encoded target representation.
    pub fn width(&self) -> usize {
        match self {
            TargetCodec::Classification { k } => *k,
            TargetCodec::Regression { .. } => 1,
        }
    }

    /// Number of classes / bins used by target-conditional sampling.
    pub fn n_groups(&self) -> usize {
        match self {
            TargetCodec::Classification { k } => *k,
            TargetCodec::Regression { bin_edges, .. } => bin_edges.len() - 1,
        }
    }

    /// Group (class or bin) of a row's target.
    pub fn group_of(&self, ds: &Dataset, row: usize) -> usize {
        match self {
            TargetCodec::Classification { .. } => ds.y.class(row),
            TargetCodec::Regression { bin_edges, .. } => bin_of(bin_edges, ds.y.float(row)),
        }
    }

    /// Encoded target vector for a row.
    pub fn encode(&self, ds: &Dataset, row: usize) -> Vec<f64> {
        match self {
            TargetCodec::Classification { k } => {
                let mut v = vec![0.0; *k];
                v[ds.y.class(row)] = 1.0;
                v
            }
            TargetCodec::Regression { mean, std, .. } => vec![(ds.y.float(row) - mean) / std],
        }
    }

    pub fn scale(&self, y: f64) -> f64 {
        match self {
            TargetCodec::Classification { .. } => y,
            TargetCodec::Regression { mean, std, .. } => (y - mean) / std,
        }
    }

    pub fn unscale(&self, y: f64) -> f64 {
        match self {
            TargetCodec::Classification { .. } => y,
            TargetCodec::Regression { mean, std, .. } => y * std + mean,
        }
    }
}

// ---------------------------------------------------------------------------
// preprocessing bundle + batching

/// Model-ready view of a dataset: numeric matrix after preprocessing plus the
/// fitted transform and target codec (all statistics from the train split).
#[derive(Clone, Debug)]
pub struct Prepared {
    pub x: Tensor,
    pub qt: Option<QuantileTransform>,
    pub codec: TargetCodec,
}

pub fn prepare(ds: &Dataset, seed: u64) -> Result<Prepared, TabError> {
    let codec = TargetCodec::fit(ds)?;
    let m = ds.m_num();
    let (x, qt) = if m == 0 {
        (Tensor::matrix(0, 0, vec![]).unwrap_or_else(|_| Tensor::zeros(vec![1, 1])), None)
    } else {
        match ds.preprocess {
            Preprocess::None => (ds.num.clone(), None),
            Preprocess::Quantile => {
                let cols: Vec<Vec<f64>> = (0..m)
                    .map(|c| ds.splits.train.iter().map(|&r| ds.num.at(r, c)).collect())
                    .collect();
                let qt = QuantileTransform::fit(&cols, seed)?;
                (qt.transform_matrix(&ds.num), Some(qt))
            }
        }
    };
    Ok(Prepared { x, qt, codec })
}

/// Index batches over a split; shuffled when an RNG is supplied (train),
/// sequential otherwise. The last partial batch is kept.
pub fn batches(split: &[usize], batch_size: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = split.to_vec();
    if let Some(rng) = rng {
        order.shuffle(rng);
    }
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_regression(n: usize) -> Dataset {
        let data: Vec<f64> = (0..n * 2).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let y: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let n_train = n * 64 / 100;
        let n_val = n * 16 / 100;
        Dataset {
            name: "toy".into(),
            num: Tensor::matrix(n, 2, data).unwrap(),
            cat: vec![],
            m_cat: 0,
            cardinalities: vec![],
            y: Targets::Float(y),
            splits: Splits {
                train: (0..n_train).collect(),
                val: (n_train..n_train + n_val).collect(),
                test: (n_train + n_val..n).collect(),
            },
            task: TaskType::Regression,
            n_classes: 0,
            batch_size: 128,
            preprocess: Preprocess::Quantile,
        }
    }

    #[test]
    fn fd_bins_formula_on_0_to_999() {
        let y: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let edges = fd_bins(&y).unwrap();
        assert_eq!(edges.len(), 11); // 10 bins
        assert!((edges[0] - 0.0).abs() < 1e-9);
        assert!((edges[10] - 999.0).abs() < 1e-9);
    }

    #[test]
    fn fd_bins_two_bins_on_8_uniform_points() {
        let y: Vec<f64> = (0..8).map(|i| i as f64 / 7.0).collect();
        // IQR = 0.5, n^(−1/3) = 0.5 -> h = 0.5, range 1 -> 2 bins
        let edges = fd_bins(&y).unwrap();
        assert_eq!(edges.len(), 3);
    }

    #[test]
    fn fd_bins_all_equal_falls_back() {
        let y = vec![5.0; 1000];
        let edges = fd_bins(&y).unwrap();
        assert_eq!(edges.len(), 11); // ceil(1000^(1/3)) = 10 bins
        assert!(edges[0] < 5.0 && *edges.last().unwrap() > 5.0);
    }

    #[test]
    fn fd_bins_cover_and_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 50 + (rng.gen::<u64>() % 500) as usize;
            let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 10.0 - 3.0).collect();
            let edges = fd_bins(&y).unwrap();
            for &v in &y {
                let b = bin_of(&edges, v);
                assert!(b < edges.len() - 1);
                assert!(edges[b] <= v + 1e-12);
                if b + 2 < edges.len() {
                    assert!(v < edges[b + 1] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn quantile_median_maps_to_zero() {
        let col: Vec<f64> = (0..10000).map(|i| i as f64 / 10000.0).collect();
        let qt = QuantileTransform::fit(&[col.clone()], 0).unwrap();
        let med = quantile(&col, 0.5);
        assert!(qt.transform_value(0, med).abs() < 0.02);
    }

    #[test]
    fn quantile_transform_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let col: Vec<f64> = (0..500).map(|_| rng.gen::<f64>() * 4.0).collect();
        let qt = QuantileTransform::fit(&[col], 0).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let x = -1.0 + i as f64 * 0.03;
            let t = qt.transform_value(0, x);
            assert!(t >= prev - 1e-12);
            prev = t;
        }
    }

    #[test]
    fn quantile_transform_normalizes_gaussian_sample() {
        use rand_distr::{Distribution, Normal as RandNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = RandNormal::new(5.0, 2.0).unwrap();
        let col: Vec<f64> = (0..50000).map(|_| dist.sample(&mut rng)).collect();
        let qt = QuantileTransform::fit(&[col.clone()], 0).unwrap();
        let t: Vec<f64> = col.iter().map(|&x| qt.transform_value(0, x)).collect();
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        let std =
            (t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / t.len() as f64).sqrt();
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((std - 1.0).abs() < 0.05, "std {std}");
    }

    #[test]
    fn constant_column_maps_to_zeros() {
        let qt = QuantileTransform::fit(&[vec![3.0; 50]], 0).unwrap();
        assert_eq!(qt.transform_value(0, 3.0), 0.0);
        assert_eq!(qt.transform_value(0, 99.0), 0.0);
    }

    #[test]
    fn train_only_fit_ignores_val_and_test() {
        let ds = toy_regression(500);
        let prep1 = prepare(&ds, 0).unwrap();
        let mut mutated = ds.clone();
        // corrupt every val/test feature value, train untouched
        for &r in mutated.splits.val.iter().chain(&mutated.splits.test) {
            for c in 0..2 {
                let v = mutated.num.at(r, c);
                mutated.num.set(r, c, v + 1000.0);
            }
        }
        let prep2 = prepare(&mutated, 0).unwrap();
        for &r in &ds.splits.train {
            for c in 0..2 {
                assert_eq!(prep1.x.at(r, c), prep2.x.at(r, c));
            }
        }
    }

    #[test]
    fn batch_sizes_10_rows_batch_4() {
        let split: Vec<usize> = (0..10).collect();
        let b = batches(&split, 4, None);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    }

    #[test]
    fn train_shuffle_differs_by_seed_val_is_stable() {
        let split: Vec<usize> = (0..100).collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let b1 = batches(&split, 16, Some(&mut r1));
        let b2 = batches(&split, 16, Some(&mut r2));
        assert_ne!(b1, b2);
        assert_eq!(batches(&split, 16, None), batches(&split, 16, None));
    }

    #[test]
    fn save_load_round_trip() {
        let ds = toy_regression(200);
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &ds).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.num, ds.num);
        assert_eq!(back.y, ds.y);
        assert_eq!(back.splits, ds.splits);
        assert_eq!(back.task, ds.task);
        assert_eq!(back.batch_size, ds.batch_size);
    }

    #[test]
    fn empty_split_rejected() {
        let mut ds = toy_regression(100);
        ds.splits.test.clear();
        let err = ds.validate().unwrap_err();
        assert!(err.to_string().contains("empty split"));
    }

    #[test]
    fn unknown_task_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy_regression(100);
        save(dir.path(), &ds).unwrap();
        let schema = std::fs::read_to_string(dir.path().join("schema.json")).unwrap();
        std::fs::write(
            dir.path().join("schema.json"),
            schema.replace("regression", "ranking"),
        )
        .unwrap();
        assert!(load(dir.path()).is_err());
    }

    #[test]
    fn split_overlap_rejected() {
        let mut ds = toy_regression(100);
        ds.splits.val[0] = ds.splits.train[0];
        assert!(ds.validate().is_err());
    }
}
