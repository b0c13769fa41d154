//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use homotomo::estimator::PurifiedState;
use homotomo::linalg::C64;
use homotomo::protocol::{
    DetectorEfficiency, LocalOscillator, ModeBasis, ProtocolSpec, Statistics,
};

/// Squeezed coherent benchmark state parameters.
pub fn fig2_params() -> (C64, C64) {
    (C64::new(1.0, -1.0), C64::from_polar(0.3, PI / 3.0))
}

pub fn fig2_spec(statistics: Statistics, eta: f64) -> ProtocolSpec {
    ProtocolSpec::single(
        LocalOscillator::new(2.0, 5).expect("valid LO"),
        DetectorEfficiency::new(eta, eta).expect("valid efficiency"),
        statistics,
        500,
    )
}

/// Adapted basis of size `s` centred on the benchmark state.
pub fn fig2_basis(s: usize) -> ModeBasis {
    let (alpha, xi) = fig2_params();
    ModeBasis::adapted(alpha, xi, s).expect("basis")
}

/// The benchmark state is the first adapted basis function.
pub fn fig2_truth(s: usize) -> PurifiedState {
    let mut c = nalgebra::DMatrix::zeros(s, 1);
    c[(0, 0)] = C64::new(1.0, 0.0);
    PurifiedState::new(c).expect("state")
}
