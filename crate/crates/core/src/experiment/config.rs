use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::geometry::SphereModelParams;
use crate::nn::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    KrrStaircase,
    RfntApproximation,
    CollapseCheck,
    NnVsKrr,
    TheoryReport,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::KrrStaircase => "krr_staircase",
            ExperimentKind::RfntApproximation => "rfnt_approximation",
            ExperimentKind::CollapseCheck => "collapse_check",
            ExperimentKind::NnVsKrr => "nn_vs_krr",
            ExperimentKind::TheoryReport => "theory_report",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    Log,
    Linear,
}

/// Either an explicit list or `count` points from `min` to `max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid {
    Range { min: f64, max: f64, count: usize, scale: GridScale },
    List(Vec<f64>),
}

impl Grid {
    pub fn log(min: f64, max: f64, count: usize) -> Self {
        Grid::Range { min, max, count, scale: GridScale::Log }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let v = match self {
            Grid::List(v) => v.clone(),
            Grid::Range { min, max, count, scale } => {
                if *count == 0 {
                    return Err(Error::Config("grid count must be positive".into()));
                }
                if !(min.is_finite() && max.is_finite() && min <= max) {
                    return Err(Error::Config(format!("grid bounds [{min}, {max}] are invalid")));
                }
                if *scale == GridScale::Log && *min <= 0.0 {
                    return Err(Error::Config(format!("log grid needs min > 0, got {min}")));
                }
                if *count == 1 {
                    vec![*min]
                } else {
                    let step = 1.0 / (*count - 1) as f64;
                    (0..*count)
                        .map(|i| {
                            let u = i as f64 * step;
                            match scale {
                                GridScale::Linear => min + u * (max - min),
                                GridScale::Log => (min.ln() + u * (max.ln() - min.ln())).exp(),
                            }
                        })
                        .collect()
                }
            }
        };
        if v.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("grid contains a non-finite value".into()));
        }
        Ok(v)
    }

    /// Values rounded to positive integers, duplicates removed, order kept.
    pub fn integers(&self) -> Result<Vec<usize>> {
        let mut out: Vec<usize> = Vec::new();
        for v in self.values()? {
            if v < 0.5 {
                return Err(Error::Config(format!("integer grid value {v} rounds below 1")));
            }
            let r = v.round() as usize;
            if !out.contains(&r) {
                out.push(r);
            }
        }
        Ok(out)
    }
}

/// Estimators a run can compare.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    KrrRf,
    KrrNt,
    Rf,
    Nt,
    Nn,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::KrrRf => "krr_rf",
            Method::KrrNt => "krr_nt",
            Method::Rf => "rf",
            Method::Nt => "nt",
            Method::Nn => "nn",
        }
    }

    /// Whether the method has a width (`N` or parameter count).
    pub fn uses_width(self) -> bool {
        matches!(self, Method::Rf | Method::Nt | Method::Nn)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelGrid {
    pub d: usize,
    pub eta: f64,
    pub kappa: Vec<f64>,
    #[serde(default)]
    pub noise_tau: f64,
}

/// Extra inputs for the theory report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheorySettings {
    pub d_values: Vec<usize>,
    pub max_k: usize,
    /// `(k, d, N)` triples for the Gram concentration diagnostic.
    #[serde(default)]
    pub gram: Vec<(usize, usize, usize)>,
    /// Widths for effective-parameter rows.
    #[serde(default)]
    pub widths: Vec<usize>,
}

fn default_lambda_grid() -> Grid {
    Grid::log(1e-6, 1e3, 10)
}

fn default_test_size() -> usize {
    10_000
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ModelGrid,
    /// Window lengths of the synthetic target (each is a degree).
    #[serde(default)]
    pub target_windows: Vec<usize>,
    /// Training-set sizes.
    #[serde(default)]
    pub n_grid: Option<Grid>,
    /// Widths: parameter count `p` for RF/NT (RF uses `N = p`, NT uses
    /// `N = p/d`), number of neurons for NN.
    #[serde(default)]
    pub width_grid: Option<Grid>,
    #[serde(default)]
    pub methods: Vec<Method>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Grid,
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    pub output: PathBuf,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub cg_tol: Option<f64>,
    #[serde(default)]
    pub memory_budget_bytes: Option<usize>,
    /// Add a row with the in-sample risk of the smallest-λ KRR fit.
    #[serde(default)]
    pub include_train_risk: bool,
    #[serde(default)]
    pub theory: Option<TheorySettings>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        for s in &mut self.seeds {
            *s = s.wrapping_add(offset);
        }
        self
    }

    /// Model parameters for one `(κ, seed)` grid point.
    pub fn params(&self, kappa: f64, seed: u64) -> Result<SphereModelParams> {
        SphereModelParams::new(self.model.d, self.model.eta, kappa, self.model.noise_tau, seed)
    }

    pub fn lambdas(&self) -> Result<Vec<f64>> {
        let l = self.lambda_grid.values()?;
        if l.iter().any(|v| *v < 0.0) {
            return Err(Error::Config("ridge parameters must be >= 0".into()));
        }
        Ok(l)
    }

    pub fn n_values(&self) -> Result<Vec<usize>> {
        self.n_grid.as_ref().ok_or_else(|| Error::Config(format!("{} needs n_grid", self.kind.name())))?.integers()
    }

    pub fn width_values(&self) -> Result<Vec<usize>> {
        self.width_grid
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{} needs width_grid", self.kind.name())))?
            .integers()
    }

    /// Checks everything that can be checked without computing, including
    /// that the output directory exists and accepts files.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.model.kappa.is_empty() {
            return cfg("kappa list is empty".into());
        }
        if self.seeds.is_empty() {
            return cfg("seed list is empty".into());
        }
        for &k in &self.model.kappa {
            self.params(k, 0).map_err(|e| Error::Config(e.to_string()))?;
        }
        self.lambdas()?;
        if let Some(t) = &self.train {
            t.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(tol) = self.cg_tol {
            if !(tol > 0.0 && tol < 1.0) {
                return cfg(format!("cg_tol must lie in (0, 1), got {tol}"));
            }
        }

        let d0 = self.params(self.model.kappa[0], 0)?.d0();
        let needs_target = self.kind != ExperimentKind::TheoryReport;
        if needs_target {
            if self.target_windows.is_empty() {
                return cfg("target_windows is empty".into());
            }
            for &m in &self.target_windows {
                if m < 2 || m > d0 {
                    return cfg(format!("window length {m} must lie in 2..={d0}"));
                }
            }
            if self.test_size == 0 {
                return cfg("test_size must be positive".into());
            }
            if self.methods.is_empty() {
                return cfg("method list is empty".into());
            }
            let mut seen = Vec::new();
            for m in &self.methods {
                if seen.contains(m) {
                    return cfg(format!("method {} listed twice", m.name()));
                }
                seen.push(*m);
            }
            self.n_values()?;
        }
        let allowed: &[Method] = match self.kind {
            ExperimentKind::KrrStaircase => &[Method::KrrRf, Method::KrrNt],
            ExperimentKind::CollapseCheck => &[Method::KrrRf, Method::KrrNt, Method::Rf, Method::Nt],
            ExperimentKind::RfntApproximation => &[Method::Rf, Method::Nt],
            ExperimentKind::NnVsKrr => &[Method::Nn, Method::KrrRf, Method::KrrNt],
            ExperimentKind::TheoryReport => &[],
        };
        if let Some(m) = self.methods.iter().find(|m| !allowed.contains(m)) {
            return cfg(format!("method {} is not available for {}", m.name(), self.kind.name()));
        }
        if self.methods.iter().any(|m| m.uses_width()) {
            let widths = self.width_values()?;
            if self.methods.contains(&Method::Nt) && widths.iter().any(|p| p / self.model.d == 0) {
                return cfg(format!("NT parameter counts must be >= d = {}", self.model.d));
            }
        }
        match self.kind {
            ExperimentKind::CollapseCheck => {
                if self.model.kappa.len() < 2 {
                    return cfg("collapse check needs at least two kappa values".into());
                }
                let n_points = if self.methods.iter().any(|m| m.uses_width()) {
                    self.width_values()?.len()
                } else {
                    self.n_values()?.len()
                };
                if n_points < 3 {
                    return cfg(format!("collapse check needs at least 3 grid points per curve, got {n_points}"));
                }
            }
            ExperimentKind::TheoryReport => {
                let t = self.theory.as_ref().ok_or_else(|| Error::Config("theory_report needs theory settings".into()))?;
                if t.d_values.is_empty() || t.d_values.iter().any(|d| *d < 3) {
                    return cfg("theory d_values must be nonempty and >= 3".into());
                }
                if t.max_k > 12 {
                    return cfg("theory max_k must be <= 12".into());
                }
            }
            _ => {}
        }
        check_writable(&self.output)
    }
}

fn check_writable(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("output directory {} does not exist", dir.display())));
    }
    let probe = dir.join(format!(".krlab-write-probe-{}", std::process::id()));
    std::fs::write(&probe, b"")
        .and_then(|_| std::fs::remove_file(&probe))
        .map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            kind: ExperimentKind::KrrStaircase,
            model: ModelGrid { d: 64, eta: 0.5, kappa: vec![0.0, 0.5], noise_tau: 0.0 },
            target_windows: vec![2, 3],
            n_grid: Some(Grid::log(10.0, 1000.0, 5)),
            width_grid: None,
            methods: vec![Method::KrrRf],
            activation: Activation::Relu,
            lambda_grid: default_lambda_grid(),
            seeds: vec![0, 1],
            test_size: 1000,
            output: dir.to_path_buf(),
            train: None,
            cg_tol: None,
            memory_budget_bytes: None,
            include_train_risk: false,
            theory: None,
        }
    }

    #[test]
    fn grids() {
        let g = Grid::log(1e-6, 1e3, 10).values().unwrap();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e-6).abs() < 1e-18 && (g[9] - 1e3).abs() < 1e-9);
        assert!((g[1] / g[0] - 10.0).abs() < 1e-9);
        let lin = Grid::Range { min: 0.0, max: 1.0, count: 3, scale: GridScale::Linear };
        assert_eq!(lin.values().unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(Grid::List(vec![3.2, 3.4, 10.0]).integers().unwrap(), vec![3, 10]);
        assert!(Grid::List(vec![]).values().is_err());
        assert!(Grid::log(0.0, 1.0, 3).values().is_err());
        let parsed: Grid = serde_json::from_str(r#"{"min": 1, "max": 100, "count": 3, "scale": "log"}"#).unwrap();
        assert_eq!(parsed.integers().unwrap(), vec![1, 10, 100]);
        let parsed: Grid = serde_json::from_str("[1, 2]").unwrap();
        assert_eq!(parsed, Grid::List(vec![1.0, 2.0]));
    }

    #[test]
    fn validation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample(dir.path());
        c.validate().unwrap();
        let back = ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap();
        back.validate().unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn validation_failures() {
        let dir = tempfile::tempdir().unwrap();
        let base = sample(dir.path());
        let bad = |f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        };
        bad(&|c| c.methods.clear());
        bad(&|c| c.seeds.clear());
        bad(&|c| c.model.kappa.clear());
        bad(&|c| c.target_windows = vec![1]);
        bad(&|c| c.target_windows = vec![9]);
        bad(&|c| c.output = dir.path().join("missing"));
        bad(&|c| c.methods = vec![Method::Nn]);
        bad(&|c| c.n_grid = None);
        bad(&|c| {
            c.kind = ExperimentKind::CollapseCheck;
            c.n_grid = Some(Grid::List(vec![10.0, 20.0]));
        });
        bad(&|c| {
            c.kind = ExperimentKind::CollapseCheck;
            c.model.kappa = vec![0.0];
        });
        bad(&|c| {
            c.kind = ExperimentKind::RfntApproximation;
            c.methods = vec![Method::Nt];
            c.width_grid = Some(Grid::List(vec![10.0]));
        });
        assert!(ExperimentConfig::from_json(r#"{"kind": "unknown"}"#).is_err());
    }

    #[test]
    fn seed_offset_shifts_all_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let c = sample(dir.path()).with_seed_offset(10);
        assert_eq!(c.seeds, vec![10, 11]);
    }
}
