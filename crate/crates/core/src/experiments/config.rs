//! Experiment configuration.
//!
//! Files are flat `key = value` lines; `#` starts a comment. Keys:
//!
//! ```text
//! name             fig1b | fig3 | fig4 | fig5 | scaling
//! d                ambient dimension
//! feature_spectrum bilevel <count_high> <value_high> <count_low> <value_low>
//!                  | list <v1>,<v2>,... | identity
//! task_spectrum    same forms as feature_spectrum
//! sigma            label noise standard deviation
//! n2               few-shot sample size
//! sweep            name of the swept parameter (R, iota or N, fixed per experiment)
//! values           sweep values: a list `a,b,c` or an inclusive range `start:end:step`
//! iotas            second axis of fig3 (list or range)
//! tasks            phase-1 task count T
//! n1               samples per task
//! n1_values        task-average sweep of the scaling experiment
//! fixed_n          total sample budget of the task-average sweep
//! subspace_rank    rank of the recovered subspace (scaling)
//! theta_lower      lower edge of the robust box (fig5)
//! n_multiplier     fig5 repeats phase 1 with `n_multiplier * T` tasks
//! trials           Monte Carlo trials (per phase-1 seed in fig5)
//! seeds            number of phase-1 seeds
//! seed             master seed
//! variant          main | appendix
//! output           CSV path
//! ```
//!
//! Unknown keys and repeated keys are errors. In fig3 the task spectrum's
//! `value_low` is replaced by each `iota`; in fig4 the feature spectrum's is.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{validation, Error, Result};
use crate::linalg::CovarianceModel;
use crate::risk::RiskVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Fig1b,
    Fig3,
    Fig4,
    Fig5,
    Scaling,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Fig1b,
        ExperimentKind::Fig3,
        ExperimentKind::Fig4,
        ExperimentKind::Fig5,
        ExperimentKind::Scaling,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Fig1b => "fig1b",
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::Fig4 => "fig4",
            ExperimentKind::Fig5 => "fig5",
            ExperimentKind::Scaling => "scaling",
        }
    }

    pub fn sweep_param(&self) -> &'static str {
        match self {
            ExperimentKind::Fig1b | ExperimentKind::Fig3 | ExperimentKind::Fig5 => "R",
            ExperimentKind::Fig4 => "iota",
            ExperimentKind::Scaling => "N",
        }
    }

    fn uses_monte_carlo(&self) -> bool {
        matches!(self, ExperimentKind::Fig1b | ExperimentKind::Fig5)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown experiment '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "form")]
pub enum Spectrum {
    Bilevel {
        count_high: usize,
        value_high: f64,
        count_low: usize,
        value_low: f64,
    },
    List { values: Vec<f64> },
}

impl Spectrum {
    pub fn identity(d: usize) -> Self {
        Spectrum::Bilevel {
            count_high: d,
            value_high: 1.0,
            count_low: 0,
            value_low: 0.0,
        }
    }

    pub fn bilevel(count_high: usize, value_high: f64, count_low: usize, value_low: f64) -> Self {
        Spectrum::Bilevel {
            count_high,
            value_high,
            count_low,
            value_low,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Spectrum::Bilevel { count_high, count_low, .. } => count_high + count_low,
            Spectrum::List { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            Spectrum::Bilevel {
                count_high,
                value_high,
                count_low,
                value_low,
            } => std::iter::repeat_n(*value_high, *count_high)
                .chain(std::iter::repeat_n(*value_low, *count_low))
                .collect(),
            Spectrum::List { values } => values.clone(),
        }
    }

    /// Same spectrum with the low level replaced.
    pub fn with_low(&self, value_low: f64) -> Result<Self> {
        match self {
            Spectrum::Bilevel {
                count_high,
                value_high,
                count_low,
                ..
            } => Ok(Spectrum::bilevel(*count_high, *value_high, *count_low, value_low)),
            Spectrum::List { .. } => validation("this experiment needs a bilevel spectrum"),
        }
    }

    pub fn covariance(&self) -> Result<CovarianceModel> {
        CovarianceModel::from_diag(&self.values())
    }
}

impl FromStr for Spectrum {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split_whitespace();
        match parts.next() {
            Some("bilevel") => {
                let rest: Vec<&str> = parts.collect();
                if rest.len() != 4 {
                    return validation(format!("bilevel needs 4 fields, got '{s}'"));
                }
                Ok(Spectrum::bilevel(
                    parse_num(rest[0])?,
                    parse_num(rest[1])?,
                    parse_num(rest[2])?,
                    parse_num(rest[3])?,
                ))
            }
            Some("list") => Ok(Spectrum::List {
                values: parse_list(&parts.collect::<Vec<_>>().join(""))?,
            }),
            Some("identity") => Err(Error::Parse("identity needs d; resolved by the parser".into())),
            _ => validation(format!("unknown spectrum '{s}' (expected bilevel|list|identity)")),
        }
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("cannot parse '{}'", s.trim())))
}

/// `a,b,c` or the inclusive range `start:end:step`.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(Vec::new());
    }
    if s.contains(':') {
        let f: Vec<f64> = s.split(':').map(parse_num).collect::<Result<_>>()?;
        if f.len() != 3 || f[2] <= 0.0 || f[1] < f[0] {
            return validation(format!("range must be start:end:step with step > 0, got '{s}'"));
        }
        let n = ((f[1] - f[0]) / f[2] + 1e-9).floor() as usize + 1;
        // rounding keeps 0.1 + 0.05 from printing as 0.15000000000000002
        return Ok((0..n).map(|k| ((f[0] + k as f64 * f[2]) * 1e12).round() / 1e12).collect());
    }
    s.split(',').map(parse_num).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub param: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub name: ExperimentKind,
    pub d: usize,
    pub feature_spectrum: Spectrum,
    pub task_spectrum: Spectrum,
    pub sigma: f64,
    pub n2: usize,
    pub sweep: Sweep,
    pub iotas: Vec<f64>,
    pub tasks: usize,
    pub n1: usize,
    pub n1_values: Vec<usize>,
    pub fixed_n: usize,
    pub subspace_rank: usize,
    pub theta_lower: f64,
    pub n_multiplier: usize,
    pub trials: usize,
    pub seeds: usize,
    pub seed: u64,
    pub variant: RiskVariant,
    pub output_path: Option<String>,
}

impl ExperimentConfig {
    pub fn default_for(kind: ExperimentKind) -> Self {
        let r_sweep = Sweep {
            param: "R".into(),
            values: (45..=100).step_by(5).map(|r| r as f64).collect(),
        };
        let base = ExperimentConfig {
            name: kind,
            d: 100,
            feature_spectrum: Spectrum::identity(100),
            task_spectrum: Spectrum::bilevel(20, 1.0, 80, 0.1),
            sigma: 0.5,
            n2: 40,
            sweep: r_sweep,
            iotas: vec![0.01, 0.05, 0.1, 0.3],
            tasks: 200,
            n1: 2,
            n1_values: vec![8, 32, 128],
            fixed_n: 12_800,
            subspace_rank: 5,
            theta_lower: 0.05,
            n_multiplier: 4,
            trials: 500,
            seeds: 50,
            seed: 1,
            variant: RiskVariant::Main,
            output_path: None,
        };
        match kind {
            ExperimentKind::Fig1b | ExperimentKind::Fig3 => base,
            ExperimentKind::Fig4 => ExperimentConfig {
                feature_spectrum: Spectrum::bilevel(30, 1.0, 70, 0.0),
                task_spectrum: Spectrum::bilevel(30, 1.0, 70, 0.0),
                sigma: 0.0,
                sweep: Sweep {
                    param: "iota".into(),
                    values: parse_list("0:0.3:0.05").expect("static range"),
                },
                tasks: 50,
                ..base
            },
            ExperimentKind::Fig5 => ExperimentConfig {
                task_spectrum: Spectrum::bilevel(20, 1.0, 80, 0.05),
                trials: 200,
                seeds: 10,
                ..base
            },
            ExperimentKind::Scaling => ExperimentConfig {
                d: 40,
                feature_spectrum: Spectrum::identity(40),
                task_spectrum: Spectrum::bilevel(5, 1.0, 35, 0.0),
                sigma: 0.0,
                sweep: Sweep {
                    param: "N".into(),
                    values: vec![400.0, 1600.0, 6400.0, 25600.0],
                },
                ..base
            },
        }
    }

    /// Parses a config file. `kind` comes from the command line when the file
    /// has no `name` key; if both are present they must agree.
    pub fn parse(text: &str, kind: Option<ExperimentKind>) -> Result<Self> {
        let mut map: BTreeMap<String, String> = BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected 'key = value'", ln + 1)))?;
            let k = k.trim().to_string();
            if map.insert(k.clone(), v.trim().to_string()).is_some() {
                return validation(format!("line {}: key '{k}' given twice", ln + 1));
            }
        }
        let file_kind = map.remove("name").map(|v| v.parse::<ExperimentKind>()).transpose()?;
        let kind = match (file_kind, kind) {
            (Some(a), Some(b)) if a != b => {
                return validation(format!("config is for '{a}' but '{b}' was requested"));
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return validation("config has no 'name' and no experiment was given"),
        };
        let mut cfg = Self::default_for(kind);
        if let Some(v) = map.remove("d") {
            cfg.d = parse_num(&v)?;
            // the identity default follows d unless overridden below
            cfg.feature_spectrum = Spectrum::identity(cfg.d);
        }
        let spectrum = |v: &str, d: usize| -> Result<Spectrum> {
            if v.trim() == "identity" {
                Ok(Spectrum::identity(d))
            } else {
                v.parse()
            }
        };
        for (key, value) in map {
            let v = value.as_str();
            match key.as_str() {
                "feature_spectrum" => cfg.feature_spectrum = spectrum(v, cfg.d)?,
                "task_spectrum" => cfg.task_spectrum = spectrum(v, cfg.d)?,
                "sigma" => cfg.sigma = parse_num(v)?,
                "n2" => cfg.n2 = parse_num(v)?,
                "sweep" => {
                    if v != kind.sweep_param() {
                        return validation(format!("{kind} sweeps '{}', not '{v}'", kind.sweep_param()));
                    }
                }
                "values" => cfg.sweep.values = parse_list(v)?,
                "iotas" => cfg.iotas = parse_list(v)?,
                "tasks" => cfg.tasks = parse_num(v)?,
                "n1" => cfg.n1 = parse_num(v)?,
                "n1_values" => cfg.n1_values = parse_list(v)?.into_iter().map(to_count).collect::<Result<_>>()?,
                "fixed_n" => cfg.fixed_n = parse_num(v)?,
                "subspace_rank" => cfg.subspace_rank = parse_num(v)?,
                "theta_lower" => cfg.theta_lower = parse_num(v)?,
                "n_multiplier" => cfg.n_multiplier = parse_num(v)?,
                "trials" => cfg.trials = parse_num(v)?,
                "seeds" => cfg.seeds = parse_num(v)?,
                "seed" => cfg.seed = parse_num(v)?,
                "variant" => cfg.variant = v.parse()?,
                "output" => cfg.output_path = Some(v.to_string()),
                other => return validation(format!("unknown config key '{other}'")),
            }
        }
        Ok(cfg)
    }

    /// Like [`parse`](Self::parse), but a file without `name` falls back to
    /// `fallback` and a file with one keeps it.
    pub fn parse_or(text: &str, fallback: ExperimentKind) -> Result<Self> {
        let named = text
            .lines()
            .filter_map(|l| l.split('#').next()?.split_once('='))
            .any(|(k, _)| k.trim() == "name");
        Self::parse(text, if named { None } else { Some(fallback) })
    }

    pub fn validate(&self) -> Result<()> {
        let kind = self.name;
        if self.d == 0 {
            return validation("d must be positive");
        }
        for (label, s) in [("feature_spectrum", &self.feature_spectrum), ("task_spectrum", &self.task_spectrum)] {
            if s.len() != self.d {
                return validation(format!("{label} has {} entries but d = {}", s.len(), self.d));
            }
            if s.values().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return validation(format!("{label} must be finite and nonnegative"));
            }
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return validation("sigma must be finite and >= 0");
        }
        if self.sweep.values.is_empty() {
            return validation("sweep values must be nonempty");
        }
        if kind.uses_monte_carlo() && self.trials < 2 {
            return validation("Monte Carlo experiments need trials >= 2");
        }
        match kind {
            ExperimentKind::Fig1b | ExperimentKind::Fig3 | ExperimentKind::Fig5 => {
                for r in self.r_values()? {
                    if r <= self.n2 || r > self.d {
                        return validation(format!("R = {r} must satisfy n2 = {} < R <= d = {}", self.n2, self.d));
                    }
                }
                if self.n2 == 0 {
                    return validation("n2 must be positive");
                }
            }
            _ => {}
        }
        match kind {
            ExperimentKind::Fig3 => {
                if self.iotas.is_empty() {
                    return validation("iotas must be nonempty");
                }
                self.task_spectrum.with_low(0.0)?;
            }
            ExperimentKind::Fig4 => {
                self.feature_spectrum.with_low(0.0)?;
                if self.sweep.values.iter().any(|v| *v < 0.0) {
                    return validation("iota must be >= 0");
                }
                if self.seeds < 2 || self.n1 < 2 || self.tasks == 0 {
                    return validation("fig4 needs seeds >= 2, n1 >= 2 and tasks >= 1");
                }
            }
            ExperimentKind::Fig5 => {
                if self.seeds < 2 || self.n1 < 2 || self.tasks == 0 || self.n_multiplier < 2 {
                    return validation("fig5 needs seeds >= 2, n1 >= 2, tasks >= 1 and n_multiplier >= 2");
                }
                for r in self.r_values()? {
                    crate::optrep::RobustBox::new(self.theta_lower, self.d, self.n2, r)?;
                }
            }
            ExperimentKind::Scaling => {
                if self.seeds < 2 || self.n1 < 2 {
                    return validation("scaling needs seeds >= 2 and n1 >= 2");
                }
                for n in self.n_values()? {
                    if n % self.n1 != 0 || n < self.n1 {
                        return validation(format!("N = {n} is not a positive multiple of n1 = {}", self.n1));
                    }
                }
                if self.n1_values.len() < 2 {
                    return validation("n1_values needs at least two entries");
                }
                for &m in &self.n1_values {
                    if m == 0 || !self.fixed_n.is_multiple_of(m) || self.fixed_n / m < self.subspace_rank {
                        return validation(format!(
                            "fixed_n = {} must split into at least subspace_rank tasks of n1 = {m}",
                            self.fixed_n
                        ));
                    }
                }
                if self.subspace_rank == 0 || self.subspace_rank >= self.d {
                    return validation("subspace_rank must lie in 1..d");
                }
            }
            ExperimentKind::Fig1b => {}
        }
        Ok(())
    }

    pub fn r_values(&self) -> Result<Vec<usize>> {
        self.sweep.values.iter().map(|v| to_count(*v)).collect()
    }

    pub fn n_values(&self) -> Result<Vec<usize>> {
        self.r_values()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn to_count(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        validation(format!("expected a nonnegative integer, got {v}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_list("45:60:5").unwrap(), vec![45.0, 50.0, 55.0, 60.0]);
        assert_eq!(parse_list("0:0.3:0.05").unwrap().len(), 7);
        assert_eq!(parse_list("0:0.3:0.05").unwrap()[3], 0.15);
        assert_eq!(parse_list("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_list("1:0:1").is_err());
        assert!(parse_list("a,b").is_err());
    }

    #[test]
    fn parse_overrides_defaults() {
        let text = "# demo\nname = fig1b\nsigma = 0.25\nvalues = 50:60:10  # two points\ntask_spectrum = bilevel 20 1 80 0.2\n";
        let cfg = ExperimentConfig::parse(text, None).unwrap();
        assert_eq!(cfg.sigma, 0.25);
        assert_eq!(cfg.r_values().unwrap(), vec![50, 60]);
        assert_eq!(cfg.task_spectrum.values()[50], 0.2);
        assert_eq!(cfg.trials, 500);
        cfg.validate().unwrap();
    }

    #[test]
    fn parse_errors() {
        assert!(ExperimentConfig::parse("sigma = 1", None).is_err());
        assert!(ExperimentConfig::parse("name = fig3", Some(ExperimentKind::Fig4)).is_err());
        assert!(ExperimentConfig::parse("name = fig3\nbogus = 1", None).is_err());
        assert!(ExperimentConfig::parse("name = fig3\nsigma = 1\nsigma = 2", None).is_err());
        assert!(ExperimentConfig::parse("name = fig3\nsweep = N", None).is_err());
        assert!(ExperimentConfig::parse("name = fig3\nsigma", None).is_err());
        assert!(ExperimentConfig::parse("name = fig9", None).is_err());
    }

    #[test]
    fn validation_catches_inconsistencies() {
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Fig1b);
        cfg.validate().unwrap();
        cfg.trials = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Fig1b);
        cfg.sweep.values = vec![40.0];
        assert!(cfg.validate().is_err());
        cfg.sweep.values.clear();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::parse("name = fig1b\nd = 50", None).unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default_for(ExperimentKind::Scaling);
        cfg.sweep.values = vec![401.0];
        assert!(cfg.validate().is_err());
        for k in ExperimentKind::ALL {
            ExperimentConfig::default_for(k).validate().unwrap();
        }
    }

    #[test]
    fn json_describe_round_trips_fields() {
        let cfg = ExperimentConfig::default_for(ExperimentKind::Fig5);
        let v: serde_json::Value = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(v["name"], "fig5");
        assert_eq!(v["theta_lower"], 0.05);
        assert_eq!(v["task_spectrum"]["form"], "bilevel");
        assert_eq!(v["variant"], "main");
    }
}
