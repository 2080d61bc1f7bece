//! Two-layer networks `f(x) = Σ_i b_i σ(<w_i, x> s)` trained by gradient
//! descent with momentum, and the latent-block reparameterization under
//! which outputs are unchanged when the anisotropy `κ` changes.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{domain, shape, Error, Result};
use crate::rng::{self, stream};

/// Batch sizes used for large-sample training runs.
pub const BATCH_PRESETS: [usize; 2] = [512, 1024];

#[derive(Clone, Debug)]
pub struct TwoLayerNet {
    /// `N × d` first-layer weights.
    pub w: DMatrix<f64>,
    pub b: Vec<f64>,
    pub activation: Arc<ActivationSpec>,
    /// Multiplier on `<w_i, x>`, normally `sqrt(d)/ρ`.
    pub scaling: f64,
}

impl TwoLayerNet {
    pub fn n_neurons(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    fn preactivations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.w.transpose() * self.scaling
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(shape(format!("inputs have {} columns, network expects {}", x.ncols(), self.dim())));
        }
        let a = self.preactivations(x).map(|z| self.activation.eval(z));
        Ok((a * nalgebra::DVector::from_column_slice(&self.b)).as_slice().to_vec())
    }

    /// Copy with every output weight negated.
    pub fn negated(&self) -> Self {
        Self { b: self.b.iter().map(|v| -v).collect(), ..self.clone() }
    }
}

/// `w_i` uniform on the unit sphere, `b_i` uniform on `{±1/N}`.
pub fn nn_init(n_neurons: usize, d: usize, activation: Arc<ActivationSpec>, radius_sq: f64, seed: u64) -> Result<TwoLayerNet> {
    if n_neurons < 1 || d < 1 {
        return Err(domain(format!("need N >= 1 and d >= 1, got N = {n_neurons}, d = {d}")));
    }
    if !(radius_sq > 0.0) {
        return Err(domain(format!("squared radius must be positive, got {radius_sq}")));
    }
    let w = crate::features::sample_weights(n_neurons, d, rng::derive_seed(seed, rng::domain::NN_INIT))?.w;
    let mut g = stream(seed, rng::domain::NN_INIT, u64::MAX);
    let inv = 1.0 / n_neurons as f64;
    let b = (0..n_neurons).map(|_| if g.gen::<bool>() { inv } else { -inv }).collect();
    Ok(TwoLayerNet { w, b, activation, scaling: (d as f64 / radius_sq).sqrt() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NnGradient {
    pub w: DMatrix<f64>,
    pub b: Vec<f64>,
    /// Regularized loss at the evaluation point.
    pub loss: f64,
}

/// Exact gradient of `(1/n) Σ_j (y_j − f(x_j))² + l2 (‖W‖² + ‖b‖²)`.
pub fn nn_gradient(net: &TwoLayerNet, x: &DMatrix<f64>, y: &[f64], l2: f64) -> Result<NnGradient> {
    let n = x.nrows();
    if n == 0 {
        return Err(domain("empty batch"));
    }
    if y.len() != n || x.ncols() != net.dim() {
        return Err(shape(format!("batch {}x{} with {} labels for d = {}", n, x.ncols(), y.len(), net.dim())));
    }
    let z = net.preactivations(x);
    let act = z.map(|v| net.activation.eval(v));
    let bvec = nalgebra::DVector::from_column_slice(&net.b);
    let f = &act * &bvec;
    let r: nalgebra::DVector<f64> = nalgebra::DVector::from_iterator(n, f.iter().zip(y).map(|(fi, yi)| fi - yi));
    let reg = net.w.norm_squared() + bvec.norm_squared();
    let loss = r.norm_squared() / n as f64 + l2 * reg;

    let c = 2.0 / n as f64;
    let gb = act.transpose() * &r * c + &bvec * (2.0 * l2);
    // G_ji = r_j b_i σ'(z_ji)
    let mut g = z.map(|v| net.activation.derivative(v));
    for j in 0..n {
        for i in 0..net.n_neurons() {
            g[(j, i)] *= r[j] * net.b[i];
        }
    }
    let gw = g.transpose() * x * (c * net.scaling) + &net.w * (2.0 * l2);
    Ok(NnGradient { w: gw, b: gb.as_slice().to_vec(), loss })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    MiniBatch(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub l2: f64,
    pub batch: BatchMode,
    /// Constant-rate epochs before the cosine rule; defaults to `⌈T/50⌉`.
    pub warmup_epochs: Option<usize>,
    /// Record test risk every this many epochs (0 disables).
    pub trace_every: usize,
    /// Restarts with `lr0` halved after divergence.
    pub max_halvings: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 750,
            lr0: 0.1,
            momentum: 0.9,
            l2: 0.0,
            batch: BatchMode::Full,
            warmup_epochs: None,
            trace_every: 0,
            max_halvings: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or_else(|| self.epochs.div_ceil(50))
    }

    /// Learning rate at epoch `t`: `lr0` during warmup, then
    /// `lr0 max(1 + cos(tπ/T), 1/15)`.
    pub fn learning_rate(&self, t: usize) -> f64 {
        if t < self.warmup() {
            return self.lr0;
        }
        let phase = t as f64 * std::f64::consts::PI / self.epochs.max(1) as f64;
        self.lr0 * (1.0 + phase.cos()).max(1.0 / 15.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(domain(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(domain(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.l2 >= 0.0) {
            return Err(domain(format!("l2 must be >= 0, got {}", self.l2)));
        }
        if let BatchMode::MiniBatch(0) = self.batch {
            return Err(domain("mini-batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_risk: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: TwoLayerNet,
    pub trace: Vec<TraceRow>,
    /// Learning rate actually used after any halvings.
    pub lr0: f64,
}

/// Held-out data for the loss trace: inputs, noiseless targets, `‖f‖²`.
pub struct TraceSet<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub norm_sq: f64,
}

/// Gradient descent with heavy-ball momentum on the regularized squared
/// loss. A non-finite loss restarts from `net` with `lr0` halved, at most
/// `max_halvings` times, then fails with the epoch index.
pub fn nn_train(
    net: &TwoLayerNet,
    x: &DMatrix<f64>,
    y: &[f64],
    config: &TrainConfig,
    trace_set: Option<&TraceSet<'_>>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if x.nrows() == 0 || y.len() != x.nrows() {
        return Err(domain(format!("need a nonempty dataset with one label per row ({} rows, {} labels)", x.nrows(), y.len())));
    }
    let mut cfg = *config;
    let initial = nn_gradient(net, x, y, cfg.l2)?.loss;
    let mut last: Option<Result<TrainOutcome>> = None;
    for attempt in 0..=config.max_halvings {
        match train_once(net, x, y, &cfg, trace_set) {
            Ok(out) => {
                // an unregularized run that ends above its start is treated like a blow-up
                let final_loss = nn_gradient(&out.net, x, y, cfg.l2)?.loss;
                if cfg.l2 > 0.0 || final_loss <= initial || attempt == config.max_halvings {
                    return Ok(out);
                }
                log::warn!("loss rose from {initial} to {final_loss}; halving lr0 from {}", cfg.lr0);
                last = Some(Ok(out));
            }
            Err(e @ Error::Divergence { .. }) => {
                log::warn!("{e}; halving lr0 from {}", cfg.lr0);
                last = Some(Err(e));
            }
            Err(e) => return Err(e),
        }
        cfg.lr0 *= 0.5;
    }
    last.expect("at least one attempt")
}

fn train_once(
    init: &TwoLayerNet,
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &TrainConfig,
    trace_set: Option<&TraceSet<'_>>,
) -> Result<TrainOutcome> {
    let mut net = init.clone();
    let mut vw = DMatrix::zeros(net.n_neurons(), net.dim());
    let mut vb = vec![0.0; net.n_neurons()];
    let mut trace = Vec::new();
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        let batches: Vec<Vec<usize>> = match cfg.batch {
            BatchMode::Full => vec![],
            BatchMode::MiniBatch(size) => {
                order.shuffle(&mut stream(cfg.seed, rng::domain::BATCH, epoch as u64));
                order.chunks(size).map(|c| c.to_vec()).collect()
            }
        };
        let mut epoch_loss = 0.0;
        let mut step = |xb: &DMatrix<f64>, yb: &[f64], net: &mut TwoLayerNet| -> Result<f64> {
            let g = nn_gradient(net, xb, yb, cfg.l2)?;
            if !g.loss.is_finite() {
                return Err(Error::Divergence { epoch, loss: g.loss });
            }
            vw = &vw * cfg.momentum + &g.w;
            for (v, gb) in vb.iter_mut().zip(&g.b) {
                *v = cfg.momentum * *v + gb;
            }
            net.w -= &vw * lr;
            for (b, v) in net.b.iter_mut().zip(&vb) {
                *b -= lr * v;
            }
            Ok(g.loss)
        };
        if batches.is_empty() {
            epoch_loss = step(x, y, &mut net)?;
        } else {
            for idx in &batches {
                let xb = x.select_rows(idx);
                let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                epoch_loss += step(&xb, &yb, &mut net)? * idx.len() as f64 / n as f64;
            }
        }
        let record = cfg.trace_every > 0 && (epoch % cfg.trace_every == 0 || epoch + 1 == cfg.epochs);
        if record {
            let test_risk = match trace_set {
                Some(ts) => {
                    let pred = net.forward(ts.x)?;
                    Some(crate::solvers::risk_from_predictions(&pred, ts.y, ts.norm_sq)?.normalized)
                }
                None => None,
            };
            trace.push(TraceRow { epoch, lr, train_loss: epoch_loss, test_risk });
        }
    }
    let final_loss = nn_gradient(&net, x, y, cfg.l2)?.loss;
    if !final_loss.is_finite() {
        return Err(Error::Divergence { epoch: cfg.epochs, loss: final_loss });
    }
    Ok(TrainOutcome { net, trace, lr0: cfg.lr0 })
}

/// Writes `epoch, lr, train_loss, test_risk` rows.
pub fn write_trace<W: Write>(writer: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, trace: &[TraceRow]) -> Result<()> {
    write_trace(std::fs::File::create(path)?, trace)
}

/// Scales the first `d0` coordinates of every `w_i` by `r_from / r_to`.
/// Paired with [`reparameterize_inputs`] the network output is unchanged.
pub fn kappa_reparameterize(net: &TwoLayerNet, r_from: f64, r_to: f64, d0: usize) -> Result<TwoLayerNet> {
    if !(r_to > 0.0 && r_from > 0.0) {
        return Err(domain(format!("radii must be positive, got r_from = {r_from}, r_to = {r_to}")));
    }
    if d0 > net.dim() {
        return Err(domain(format!("d0 = {d0} exceeds d = {}", net.dim())));
    }
    let mut out = net.clone();
    let factor = r_from / r_to;
    out.w.columns_mut(0, d0).scale_mut(factor);
    Ok(out)
}

/// Scales the latent block (first `d0` columns) of `x` by `r_to / r_from`.
pub fn reparameterize_inputs(x: &DMatrix<f64>, r_from: f64, r_to: f64, d0: usize) -> Result<DMatrix<f64>> {
    if !(r_to > 0.0 && r_from > 0.0) {
        return Err(domain(format!("radii must be positive, got r_from = {r_from}, r_to = {r_to}")));
    }
    if d0 > x.ncols() {
        return Err(domain(format!("d0 = {d0} exceeds d = {}", x.ncols())));
    }
    let mut out = x.clone();
    out.columns_mut(0, d0).scale_mut(r_to / r_from);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::geometry::{sample_dataset, sample_test_set, SphereModelParams, TargetSpec};
    use crate::solvers::risk_from_predictions;

    fn act(a: Activation) -> Arc<ActivationSpec> {
        Arc::new(ActivationSpec::new(a))
    }

    fn small_problem(a: Activation) -> (TwoLayerNet, DMatrix<f64>, Vec<f64>) {
        let params = SphereModelParams::new(12, 0.5, 0.2, 0.1, 4).unwrap();
        let target = crate::geometry::make_synthetic_target(params.d0(), &[2], &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1)).unwrap();
        let data = sample_dataset(&params, &target, 30).unwrap();
        let mut net = nn_init(7, 12, act(a), params.radius_sq(), 3).unwrap();
        // move away from the symmetric init so second-layer terms are not tiny
        for (i, b) in net.b.iter_mut().enumerate() {
            *b = 0.3 * (i as f64 + 1.0).sin();
        }
        (net, data.x, data.y)
    }

    fn fd_check(a: Activation, min_preact: f64) {
        let (net, x, y) = small_problem(a);
        let l2 = 0.01;
        let g = nn_gradient(&net, &x, &y, l2).unwrap();
        let loss = |n: &TwoLayerNet| nn_gradient(n, &x, &y, l2).unwrap().loss;
        let h = 1e-5;
        let z = &x * net.w.transpose() * net.scaling;
        let mut checked = 0;
        for (i, k) in (0..40).map(|c| ((c * 5) % 7, (c * 7) % 12)) {
            // skip weights whose perturbation could move a preactivation across a kink
            let min_abs = (0..x.nrows()).map(|j| z[(j, i)].abs()).fold(f64::INFINITY, f64::min);
            if min_abs <= min_preact {
                continue;
            }
            let (mut p, mut m) = (net.clone(), net.clone());
            p.w[(i, k)] += h;
            m.w[(i, k)] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let gap = (fd - g.w[(i, k)]).abs() / g.w[(i, k)].abs().max(1e-8);
            assert!(gap < 1e-5, "{a:?} w[{i},{k}]: {fd} vs {}", g.w[(i, k)]);
            checked += 1;
            if checked == 10 {
                break;
            }
        }
        assert!(checked >= 5 || min_preact == 0.0, "only {checked} coordinates checked");
        for i in 0..7 {
            let (mut p, mut m) = (net.clone(), net.clone());
            p.b[i] += h;
            m.b[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g.b[i]).abs() / g.b[i].abs().max(1e-8) < 1e-5);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_smooth() {
        fd_check(Activation::Tanh, 0.0);
        fd_check(Activation::Softplus, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences_relu_off_kink() {
        fd_check(Activation::Relu, 1e-2);
    }

    #[test]
    fn gradient_vanishes_at_interpolation() {
        let (net, x, _) = small_problem(Activation::Tanh);
        let y = net.forward(&x).unwrap();
        let g = nn_gradient(&net, &x, &y, 0.0).unwrap();
        assert!(g.w.amax() < 1e-14 && g.b.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn init_properties() {
        let a = nn_init(50, 9, act(Activation::Tanh), 9.0, 2).unwrap();
        let b = nn_init(50, 9, act(Activation::Tanh), 9.0, 2).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.b, b.b);
        assert!(a.b.iter().all(|v| v.abs() == 1.0 / 50.0));
        let x = crate::geometry::sample_sphere(9, 3.0, 20, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3)).unwrap();
        let f = a.forward(&x).unwrap();
        assert!(f.iter().all(|v| v.abs() <= 1.0));
        let g = a.negated().forward(&x).unwrap();
        assert!(f.iter().zip(&g).all(|(u, v)| *u == -*v));
    }

    #[test]
    fn zero_epochs_and_single_step() {
        let (net, x, y) = small_problem(Activation::Tanh);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let out = nn_train(&net, &x, &y, &cfg, None).unwrap();
        assert_eq!(out.net.w, net.w);
        assert_eq!(out.net.b, net.b);

        let x1 = x.rows(0, 1).into_owned();
        let cfg = TrainConfig { epochs: 1, lr0: 1e-3, ..Default::default() };
        let before = nn_gradient(&net, &x1, &y[..1], 0.0).unwrap().loss;
        let out = nn_train(&net, &x1, &y[..1], &cfg, None).unwrap();
        let after = nn_gradient(&out.net, &x1, &y[..1], 0.0).unwrap().loss;
        assert!(after < before);
    }

    #[test]
    fn schedule_is_positive_with_warmup() {
        let cfg = TrainConfig { epochs: 100, lr0: 0.5, ..Default::default() };
        assert_eq!(cfg.warmup(), 2);
        assert_eq!(cfg.learning_rate(0), 0.5);
        assert_eq!(cfg.learning_rate(1), 0.5);
        assert!((cfg.learning_rate(50) - 0.5).abs() < 1e-12);
        for t in 0..100 {
            assert!(cfg.learning_rate(t) >= 0.5 / 15.0 - 1e-15);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (net, x, y) = small_problem(Activation::Identity);
        let cfg = TrainConfig { epochs: 200, lr0: 1e6, max_halvings: 2, ..Default::default() };
        match nn_train(&net, &x, &y, &cfg, None) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch < 200),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn training_reduces_loss_and_writes_trace() {
        let (net, x, y) = small_problem(Activation::Tanh);
        let cfg = TrainConfig { epochs: 100, lr0: 0.05, trace_every: 10, ..Default::default() };
        let ts = TraceSet { x: &x, y: &y, norm_sq: 1.0 };
        let out = nn_train(&net, &x, &y, &cfg, Some(&ts)).unwrap();
        let first = nn_gradient(&net, &x, &y, 0.0).unwrap().loss;
        let last = nn_gradient(&out.net, &x, &y, 0.0).unwrap().loss;
        assert!(last <= first);
        assert_eq!(out.trace.len(), 11);
        let mut buf = Vec::new();
        write_trace(&mut buf, &out.trace).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,test_risk"));

        let mb = TrainConfig { batch: BatchMode::MiniBatch(8), ..cfg };
        let a = nn_train(&net, &x, &y, &mb, None).unwrap();
        let b = nn_train(&net, &x, &y, &mb, None).unwrap();
        assert_eq!(a.net.w, b.net.w);
    }

    #[test]
    fn reparameterization_is_exact() {
        let params = SphereModelParams::new(40, 0.5, 0.6, 0.0, 8).unwrap();
        let net = nn_init(30, 40, act(Activation::Relu), params.radius_sq(), 1).unwrap();
        let target = TargetSpec::from_windows(params.d0(), vec![(2, vec![1.0; params.d0() - 1], 1.0)]).unwrap();
        let x = sample_test_set(&params, &target, 1000).unwrap().x;
        let (r_from, r_to) = (params.r(), 1.0);
        let same = kappa_reparameterize(&net, r_from, r_from, params.d0()).unwrap();
        assert_eq!(same.w, net.w);
        let mapped = kappa_reparameterize(&net, r_from, r_to, params.d0()).unwrap();
        let xm = reparameterize_inputs(&x, r_from, r_to, params.d0()).unwrap();
        let f0 = net.forward(&x).unwrap();
        let f1 = mapped.forward(&xm).unwrap();
        let gap = f0.iter().zip(&f1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-10, "{gap}");
        let back = kappa_reparameterize(&mapped, r_to, r_from, params.d0()).unwrap();
        assert!((back.w - &net.w).amax() < 1e-12);
        assert!(kappa_reparameterize(&net, 1.0, 0.0, 2).is_err());
    }

    /// With the identity activation the network is linear, so long training
    /// reaches the least-squares linear fit.
    #[test]
    fn linear_network_matches_linear_regression() {
        let params = SphereModelParams::new(20, 0.5, 0.0, 0.0, 21).unwrap();
        let d0 = params.d0();
        let alpha1: Vec<f64> = (0..d0).map(|i| 1.0 + 0.3 * i as f64).collect();
        let alpha2: Vec<f64> = (0..d0 - 1).map(|i| 1.0 - 0.2 * i as f64).collect();
        let target = TargetSpec::from_windows(d0, vec![(1, alpha1, 1.0), (2, alpha2, 1.0)]).unwrap();
        let train = sample_dataset(&params, &target, 2000).unwrap();
        let test = sample_test_set(&params, &target, 10_000).unwrap();

        // ridge oracle on raw covariates
        let xtx = train.x.transpose() * &train.x + DMatrix::identity(20, 20) * 1e-8;
        let xty = train.x.transpose() * nalgebra::DVector::from_column_slice(&train.y);
        let beta = xtx.cholesky().unwrap().solve(&xty);
        let oracle_pred: Vec<f64> = (&test.x * &beta).as_slice().to_vec();
        let oracle = risk_from_predictions(&oracle_pred, &test.y, target.norm_sq()).unwrap();

        let net = nn_init(50, 20, act(Activation::Identity), params.radius_sq(), 5).unwrap();
        let cfg = TrainConfig { epochs: 750, lr0: 0.5, ..Default::default() };
        let out = nn_train(&net, &train.x, &train.y, &cfg, None).unwrap();
        let pred = out.net.forward(&test.x).unwrap();
        let trained = risk_from_predictions(&pred, &test.y, target.norm_sq()).unwrap();
        assert!(
            (trained.normalized - oracle.normalized).abs() < 5e-3,
            "net {} vs ridge {}",
            trained.normalized,
            oracle.normalized
        );
    }
}
