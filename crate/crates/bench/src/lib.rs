//! Shared inputs for the criterion benches.

use krlab::geometry::{make_synthetic_target, sample_dataset, SphereModelParams};
use krlab::rng::{self, stream};
use nalgebra::DMatrix;

/// `n` training inputs on the desk-scale product sphere (`d = 256`, `η = 0.5`).
pub fn desk_inputs(n: usize, kappa: f64) -> (DMatrix<f64>, Vec<f64>, f64) {
    let params = SphereModelParams::new(256, 0.5, kappa, 0.0, 1).expect("valid params");
    let target = make_synthetic_target(params.d0(), &[2, 3], &mut stream(1, rng::domain::TARGET, 0)).expect("target");
    let ds = sample_dataset(&params, &target, n).expect("dataset");
    (ds.x, ds.y, params.radius_sq())
}
