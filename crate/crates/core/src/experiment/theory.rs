use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::kernels::{effective_dimension, kernel_gegenbauer_coefficients, nt_kernel_sphere_coefficients, KernelSpec};
use crate::solvers::gram_concentration_check;

/// One line of the theory-vs-numerics table. `reference` is the `d → ∞`
/// limit where one exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub quantity: String,
    pub activation: String,
    pub d: usize,
    pub k: Option<usize>,
    pub kappa: Option<f64>,
    #[serde(rename = "N")]
    pub n_neurons: Option<usize>,
    pub value: f64,
    pub reference: Option<f64>,
    pub abs_gap: Option<f64>,
    pub rel_gap: Option<f64>,
}

impl TheoryRow {
    fn new(quantity: &str, activation: &str, d: usize, value: f64) -> Self {
        Self {
            quantity: quantity.to_string(),
            activation: activation.to_string(),
            d,
            k: None,
            kappa: None,
            n_neurons: None,
            value,
            reference: None,
            abs_gap: None,
            rel_gap: None,
        }
    }

    fn against(mut self, reference: f64) -> Self {
        let gap = (self.value - reference).abs();
        self.reference = Some(reference);
        self.abs_gap = Some(gap);
        // limits below this are zeros polluted by quadrature roundoff
        self.rel_gap = (reference.abs() > 1e-14).then(|| gap / reference.abs());
        self
    }
}

fn coefficient_rows(act: &Arc<ActivationSpec>, d: usize, max_k: usize) -> Result<Vec<TheoryRow>> {
    let name = act.name();
    let mut rows = Vec::new();
    for (quantity, spec) in [("rf_coefficient", KernelSpec::rf(act.clone())), ("ntd_coefficient", KernelSpec::nt_derivative(act.clone()))] {
        let limits = spec.series_coefficients(max_k)?;
        let c = kernel_gegenbauer_coefficients(&spec, d, max_k)?;
        for k in 0..=max_k {
            let mut r = TheoryRow::new(quantity, &name, d, c.products[k]).against(limits[k]);
            r.k = Some(k);
            rows.push(r);
        }
    }
    // A_k / d against the NT series limit
    let limits = KernelSpec::nt(act.clone()).series_coefficients(max_k)?;
    let a = nt_kernel_sphere_coefficients(act, d, max_k)?;
    for k in 0..=max_k {
        let mut r = TheoryRow::new("nt_sphere_coefficient", &name, d, a[k] / d as f64).against(limits[k]);
        r.k = Some(k);
        rows.push(r);
    }
    Ok(rows)
}

/// Coefficient convergence, effective dimensions, and Gram concentration.
pub fn run_theory_report(config: &ExperimentConfig) -> Result<Vec<TheoryRow>> {
    if config.kind != ExperimentKind::TheoryReport {
        return Err(Error::Config(format!("expected a theory_report config, got {}", config.kind.name())));
    }
    let t = config.theory.as_ref().ok_or_else(|| Error::Config("theory_report needs theory settings".into()))?;
    let act = Arc::new(ActivationSpec::new(config.activation));
    let name = act.name();
    let mut rows = Vec::new();
    for &d in &t.d_values {
        rows.extend(coefficient_rows(&act, d, t.max_k)?);
    }
    let d = config.model.d;
    for &kappa in &config.model.kappa {
        let params = config.params(kappa, 0)?;
        let widths: Vec<usize> = if t.widths.is_empty() { vec![1] } else { t.widths.clone() };
        for (i, &w) in widths.iter().enumerate() {
            let e = effective_dimension(&params, w);
            let mut quantities = vec![("p_eff_rf", e.p_eff_rf), ("p_eff_nt", e.p_eff_nt)];
            if i == 0 {
                quantities.insert(0, ("d_eff", e.d_eff));
            }
            for (q, v) in quantities {
                let mut r = TheoryRow::new(q, &name, d, v);
                r.kappa = Some(kappa);
                if q != "d_eff" {
                    r.n_neurons = Some(w);
                }
                rows.push(r);
            }
        }
    }
    for (i, &(k, gd, n)) in t.gram.iter().enumerate() {
        let v = gram_concentration_check(k, gd, n, config.seeds.first().copied().unwrap_or(0).wrapping_add(i as u64))?;
        let mut r = TheoryRow::new("gram_offdiag_norm", "", gd, v);
        r.k = Some(k);
        r.n_neurons = Some(n);
        rows.push(r);
    }
    Ok(rows)
}

pub fn write_theory<W: std::io::Write>(writer: W, rows: &[TheoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_theory_file(path: &Path, rows: &[TheoryRow]) -> Result<()> {
    write_theory(std::fs::File::create(path)?, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::experiment::config::TheorySettings;
    use crate::experiment::runners::tests::small_config;

    fn theory_config(dir: &Path, act: Activation, d_values: Vec<usize>) -> ExperimentConfig {
        let mut c = small_config(dir, ExperimentKind::TheoryReport, vec![]);
        c.activation = act;
        c.theory = Some(TheorySettings { d_values, max_k: 3, gram: vec![(1, 200, 10)], widths: vec![8, 64] });
        c
    }

    fn find<'a>(rows: &'a [TheoryRow], q: &str, d: usize, k: usize) -> &'a TheoryRow {
        rows.iter().find(|r| r.quantity == q && r.d == d && r.k == Some(k)).unwrap()
    }

    #[test]
    fn identity_rows_match_at_k1() {
        let dir = tempfile::tempdir().unwrap();
        let rows = run_theory_report(&theory_config(dir.path(), Activation::Identity, vec![10, 50])).unwrap();
        for d in [10, 50] {
            let r = find(&rows, "rf_coefficient", d, 1);
            assert!((r.value - 1.0).abs() < 1e-12 && (r.reference.unwrap() - 1.0).abs() < 1e-12, "{r:?}");
            assert!(r.abs_gap.unwrap() < 1e-12);
            assert!(find(&rows, "rf_coefficient", d, 2).value.abs() < 1e-12);
            // σ' = 1: A_1 = d exactly
            assert!((find(&rows, "nt_sphere_coefficient", d, 1).value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_rows_converge_at_d1000() {
        let dir = tempfile::tempdir().unwrap();
        let rows = run_theory_report(&theory_config(dir.path(), Activation::Relu, vec![1000])).unwrap();
        for q in ["rf_coefficient", "ntd_coefficient"] {
            for k in 0..=3 {
                let r = find(&rows, q, 1000, k);
                let lim = r.reference.unwrap();
                assert!(r.abs_gap.unwrap() <= 0.1 * lim + 1e-12, "{q} k={k}: {r:?}");
            }
        }
    }

    #[test]
    fn d_eff_rows_use_effective_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = theory_config(dir.path(), Activation::Relu, vec![10]);
        let rows = run_theory_report(&cfg).unwrap();
        for &kappa in &cfg.model.kappa {
            let r = rows.iter().find(|r| r.quantity == "d_eff" && r.kappa == Some(kappa)).unwrap();
            let e = effective_dimension(&cfg.params(kappa, 0).unwrap(), 1);
            assert_eq!(r.value, e.d_eff);
        }
        let nt = rows.iter().filter(|r| r.quantity == "p_eff_nt").count();
        assert_eq!(nt, cfg.model.kappa.len() * 2);
        let g = rows.iter().find(|r| r.quantity == "gram_offdiag_norm").unwrap();
        assert!(g.value > 0.0 && g.value < 0.5);

        let path = dir.path().join("theory.csv");
        write_theory_file(&path, &rows).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("quantity,activation,d,k,kappa,N,value,reference,abs_gap,rel_gap"));
        assert_eq!(text.lines().count(), rows.len() + 1);
    }
}
