//! Synthetic data for the two phases of the pipeline.
//!
//! Phase 1 draws `T` tasks `beta_i ~ N(0, Sigma_T)` and `n1` labelled samples
//! per task with `x ~ N(0, Sigma_F)`, `y = x^T beta_i + eps`,
//! `eps ~ N(0, sigma^2)`. Phase 2 draws one fresh task and `n2` samples from
//! the same model.
//!
//! Randomness: the master seed is split into named substreams (`tasks`,
//! `features`, `noise`, `few-shot`), and per-task draws use indexed children,
//! so changing `T` never perturbs the few-shot draw or earlier tasks.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{validation, Error, Result};
use crate::linalg::{normal_vector, standard_normal_matrix, CovarianceModel};
use crate::rng::RngStream;

/// Feature covariance, task covariance and label noise of the generative model.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    feature_cov: CovarianceModel,
    task_cov: CovarianceModel,
    noise_sd: f64,
}

impl ProblemSpec {
    pub fn new(feature_cov: CovarianceModel, task_cov: CovarianceModel, noise_sd: f64) -> Result<Self> {
        if feature_cov.dim() != task_cov.dim() {
            return validation(format!(
                "feature covariance is {}-dimensional but task covariance is {}-dimensional",
                feature_cov.dim(),
                task_cov.dim()
            ));
        }
        if feature_cov.dim() == 0 {
            return validation("dimension must be positive");
        }
        if !(noise_sd.is_finite() && noise_sd >= 0.0) {
            return validation(format!("noise_sd must be finite and >= 0, got {noise_sd}"));
        }
        Ok(Self {
            feature_cov,
            task_cov,
            noise_sd,
        })
    }

    pub fn d(&self) -> usize {
        self.feature_cov.dim()
    }

    pub fn feature_cov(&self) -> &CovarianceModel {
        &self.feature_cov
    }

    pub fn task_cov(&self) -> &CovarianceModel {
        &self.task_cov
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }
}

/// Phase-1 data. Features of task `i` are rows `i*n1 .. (i+1)*n1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTrainSet {
    /// `T x d`, row `i` is `beta_i`.
    pub tasks: DMatrix<f64>,
    /// `N x d`, task-major.
    pub features: DMatrix<f64>,
    /// Length `N`.
    pub labels: DVector<f64>,
    pub n1: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl MetaTrainSet {
    pub fn num_tasks(&self) -> usize {
        self.tasks.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// Total sample count `N = T * n1`.
    pub fn total_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn task_features(&self, i: usize) -> nalgebra::DMatrixView<'_, f64> {
        self.features.rows(i * self.n1, self.n1)
    }

    pub fn task_labels(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.labels.rows(i * self.n1, self.n1)
    }
}

/// Phase-2 data for a single task.
#[derive(Debug, Clone, PartialEq)]
pub struct FewShotSet {
    pub beta_star: DVector<f64>,
    /// `n2 x d`.
    pub features: DMatrix<f64>,
    pub labels: DVector<f64>,
}

impl FewShotSet {
    pub fn n2(&self) -> usize {
        self.features.nrows()
    }
}

pub fn gen_meta_train(spec: &ProblemSpec, num_tasks: usize, n1: usize, seed: u64) -> Result<MetaTrainSet> {
    if num_tasks == 0 || n1 == 0 {
        return validation(format!("need T >= 1 and n1 >= 1, got T={num_tasks}, n1={n1}"));
    }
    let d = spec.d();
    let root = RngStream::new(seed);
    let tasks = standard_normal_matrix(num_tasks, d, root.substream("tasks"))
        * spec.task_cov.factor().transpose();
    let feat_factor_t = spec.feature_cov.factor().transpose();
    let feat_stream = root.substream("features");
    let noise_stream = root.substream("noise");

    let blocks: Vec<(DMatrix<f64>, DVector<f64>)> = (0..num_tasks)
        .into_par_iter()
        .map(|i| {
            let x = standard_normal_matrix(n1, d, feat_stream.index(i as u64)) * &feat_factor_t;
            let eps = normal_vector(n1, spec.noise_sd, noise_stream.index(i as u64));
            let y = &x * tasks.row(i).transpose() + eps;
            (x, y)
        })
        .collect();

    let n = num_tasks * n1;
    let mut features = DMatrix::zeros(n, d);
    let mut labels = DVector::zeros(n);
    for (i, (x, y)) in blocks.into_iter().enumerate() {
        features.rows_mut(i * n1, n1).copy_from(&x);
        labels.rows_mut(i * n1, n1).copy_from(&y);
    }
    Ok(MetaTrainSet {
        tasks,
        features,
        labels,
        n1,
        noise_sd: spec.noise_sd,
        seed,
    })
}

/// Few-shot set drawn from an explicit stream.
pub fn gen_few_shot_stream(spec: &ProblemSpec, n2: usize, stream: RngStream) -> Result<FewShotSet> {
    if n2 == 0 {
        return validation("n2 must be >= 1");
    }
    let d = spec.d();
    let beta_star = spec.task_cov.factor() * normal_vector(d, 1.0, stream.substream("task"));
    let features =
        standard_normal_matrix(n2, d, stream.substream("features")) * spec.feature_cov.factor().transpose();
    let noise = normal_vector(n2, spec.noise_sd, stream.substream("noise"));
    let labels = &features * &beta_star + noise;
    Ok(FewShotSet {
        beta_star,
        features,
        labels,
    })
}

pub fn gen_few_shot(spec: &ProblemSpec, n2: usize, seed: u64) -> Result<FewShotSet> {
    gen_few_shot_stream(spec, n2, RngStream::new(seed).substream("few-shot"))
}

// ---------------------------------------------------------------------------
// CSV layout
//
//   # metarep meta-train d=<d> T=<T> n1=<n1> sigma=<sigma> seed=<seed>
//   kind,task,index,y,c0,...,c<d-1>
//   beta,<i>,,,<beta_i>              (one row per task)
//   x,<i>,<j>,<y_ij>,<x_ij>          (one row per sample, task-major)
//
// Few-shot files use header `# metarep few-shot d=<d> n2=<n2>`, one `beta`
// row with task 0, then `x` rows. Floats use Rust's shortest round-trip form.

fn join(vals: impl Iterator<Item = f64>) -> String {
    vals.map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn column_header(d: usize) -> String {
    let cols: Vec<String> = (0..d).map(|k| format!("c{k}")).collect();
    format!("kind,task,index,y,{}", cols.join(","))
}

pub fn write_meta_train_csv<W: Write>(set: &MetaTrainSet, mut w: W) -> Result<()> {
    let d = set.d();
    writeln!(
        w,
        "# metarep meta-train d={d} T={} n1={} sigma={} seed={}",
        set.num_tasks(),
        set.n1,
        set.noise_sd,
        set.seed
    )?;
    writeln!(w, "{}", column_header(d))?;
    for i in 0..set.num_tasks() {
        writeln!(w, "beta,{i},,,{}", join(set.tasks.row(i).iter().copied()))?;
    }
    for i in 0..set.num_tasks() {
        for j in 0..set.n1 {
            let r = i * set.n1 + j;
            writeln!(
                w,
                "x,{i},{j},{},{}",
                set.labels[r],
                join(set.features.row(r).iter().copied())
            )?;
        }
    }
    Ok(())
}

pub fn write_few_shot_csv<W: Write>(set: &FewShotSet, mut w: W) -> Result<()> {
    let d = set.beta_star.len();
    writeln!(w, "# metarep few-shot d={d} n2={}", set.n2())?;
    writeln!(w, "{}", column_header(d))?;
    writeln!(w, "beta,0,,,{}", join(set.beta_star.iter().copied()))?;
    for j in 0..set.n2() {
        writeln!(
            w,
            "x,0,{j},{},{}",
            set.labels[j],
            join(set.features.row(j).iter().copied())
        )?;
    }
    Ok(())
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn header_fields(line: &str, tag: &str) -> Result<std::collections::HashMap<String, String>> {
    let rest = line
        .strip_prefix(&format!("# metarep {tag}"))
        .ok_or_else(|| parse_err(format!("expected '# metarep {tag}' header, got '{line}'")))?;
    Ok(rest
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn field<T: std::str::FromStr>(map: &std::collections::HashMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| parse_err(format!("header is missing '{key}'")))?
        .parse()
        .map_err(|_| parse_err(format!("header field '{key}' is malformed")))
}

struct Row {
    kind: String,
    task: usize,
    index: Option<usize>,
    y: Option<f64>,
    values: Vec<f64>,
}

fn parse_row(line: &str, d: usize) -> Result<Row> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != 4 + d {
        return Err(parse_err(format!("row has {} fields, expected {}", parts.len(), 4 + d)));
    }
    let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| parse_err(format!("bad number '{s}'"))) };
    let opt_idx = |s: &str| -> Result<Option<usize>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| parse_err(format!("bad index '{s}'")))
        }
    };
    Ok(Row {
        kind: parts[0].to_string(),
        task: parts[1].parse().map_err(|_| parse_err(format!("bad task '{}'", parts[1])))?,
        index: opt_idx(parts[2])?,
        y: if parts[3].is_empty() { None } else { Some(num(parts[3])?) },
        values: parts[4..].iter().map(|s| num(s)).collect::<Result<_>>()?,
    })
}

fn read_lines<R: BufRead>(r: R) -> Result<Vec<String>> {
    let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
    if lines.len() < 2 {
        return Err(parse_err("file is truncated"));
    }
    Ok(lines)
}

pub fn read_meta_train_csv<R: BufRead>(r: R) -> Result<MetaTrainSet> {
    let lines = read_lines(r)?;
    let hdr = header_fields(&lines[0], "meta-train")?;
    let d: usize = field(&hdr, "d")?;
    let t: usize = field(&hdr, "T")?;
    let n1: usize = field(&hdr, "n1")?;
    let noise_sd: f64 = field(&hdr, "sigma")?;
    let seed: u64 = field(&hdr, "seed")?;
    let mut tasks = DMatrix::zeros(t, d);
    let mut features = DMatrix::zeros(t * n1, d);
    let mut labels = DVector::zeros(t * n1);
    let (mut nb, mut nx) = (0, 0);
    for line in lines.iter().skip(2).filter(|l| !l.trim().is_empty()) {
        let row = parse_row(line, d)?;
        if row.task >= t {
            return Err(parse_err(format!("task index {} out of range", row.task)));
        }
        match row.kind.as_str() {
            "beta" => {
                tasks.row_mut(row.task).copy_from_slice(&row.values);
                nb += 1;
            }
            "x" => {
                let j = row.index.filter(|j| *j < n1).ok_or_else(|| parse_err("bad sample index"))?;
                let r = row.task * n1 + j;
                features.row_mut(r).copy_from_slice(&row.values);
                labels[r] = row.y.ok_or_else(|| parse_err("sample row without label"))?;
                nx += 1;
            }
            other => return Err(parse_err(format!("unknown row kind '{other}'"))),
        }
    }
    if nb != t || nx != t * n1 {
        return Err(parse_err(format!("expected {t} task rows and {} sample rows", t * n1)));
    }
    Ok(MetaTrainSet {
        tasks,
        features,
        labels,
        n1,
        noise_sd,
        seed,
    })
}

pub fn read_few_shot_csv<R: BufRead>(r: R) -> Result<FewShotSet> {
    let lines = read_lines(r)?;
    let hdr = header_fields(&lines[0], "few-shot")?;
    let d: usize = field(&hdr, "d")?;
    let n2: usize = field(&hdr, "n2")?;
    let mut beta_star = None;
    let mut features = DMatrix::zeros(n2, d);
    let mut labels = DVector::zeros(n2);
    let mut nx = 0;
    for line in lines.iter().skip(2).filter(|l| !l.trim().is_empty()) {
        let row = parse_row(line, d)?;
        match row.kind.as_str() {
            "beta" => beta_star = Some(DVector::from_vec(row.values)),
            "x" => {
                let j = row.index.filter(|j| *j < n2).ok_or_else(|| parse_err("bad sample index"))?;
                features.row_mut(j).copy_from_slice(&row.values);
                labels[j] = row.y.ok_or_else(|| parse_err("sample row without label"))?;
                nx += 1;
            }
            other => return Err(parse_err(format!("unknown row kind '{other}'"))),
        }
    }
    if nx != n2 {
        return Err(parse_err(format!("expected {n2} sample rows, found {nx}")));
    }
    Ok(FewShotSet {
        beta_star: beta_star.ok_or_else(|| parse_err("missing beta row"))?,
        features,
        labels,
    })
}
