//! Truncated Fock-space numerics: ladder operators, displacement and squeeze
//! unitaries, the displaced-squeezed Fock family `S(ξ)D(α)|k⟩`, the
//! beamsplitter and phase-space functions.
//!
//! Two-mode vectors are stored with the first (A) mode index varying slowest:
//! joint index `n_a * d_b + n_b`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector, Dim, Matrix, RawStorage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Banded, C64, ONE, ZERO};

pub type Ket = DVector<C64>;
pub type Operator = DMatrix<C64>;

/// Photon-number cutoff of a single mode; the working dimension is `n_max + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisTruncation {
    n_max: usize,
    leakage_tol: f64,
}

impl BasisTruncation {
    pub const DEFAULT_LEAKAGE_TOL: f64 = 1e-10;

    pub fn new(n_max: usize) -> Self {
        Self {
            n_max,
            leakage_tol: Self::DEFAULT_LEAKAGE_TOL,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.leakage_tol = tol;
        self
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn leakage_tol(&self) -> f64 {
        self.leakage_tol
    }

    /// Tail bound for a coherent amplitude: `|α|² + 12√(|α|²+1) + 25`, which
    /// keeps amplitudes (not just weights) converged to about 1e-8.
    pub fn for_coherent(alpha_abs: f64) -> Self {
        Self::for_mean_photons(alpha_abs * alpha_abs)
    }

    /// Cutoff covering the states `S(ξ)D(α)|k⟩` for all `k ≤ k_max`.
    pub fn for_family(alpha: C64, xi: C64, k_max: usize) -> Self {
        let r = xi.norm();
        let mean = (k_max as f64 + alpha.norm_sqr()) * (2.0 * r).cosh() + r.sinh().powi(2);
        // squeezing widens the photon-number distribution beyond Poisson
        Self::with_spread(mean, (2.0 * r).cosh())
    }

    fn for_mean_photons(mean: f64) -> Self {
        Self::with_spread(mean, 1.0)
    }

    fn with_spread(mean: f64, widen: f64) -> Self {
        Self::new((mean + 12.0 * widen * (mean + 1.0).sqrt() + 25.0).ceil() as usize)
    }

    fn grown(&self) -> Self {
        Self {
            n_max: self.n_max + self.n_max / 4 + 8,
            leakage_tol: self.leakage_tol,
        }
    }
}

/// Weight carried by the top levels of a truncated vector; a truncated unitary
/// conserves the norm, so boundary contact shows up here.
pub fn norm_leakage(v: &DMatrix<C64>) -> f64 {
    let d = v.nrows();
    let guard = (d / 10).max(3).min(d);
    let total = linalg::frobenius_sq(v).max(1e-300);
    let tail: f64 = v.rows(d - guard, guard).iter().map(|z| z.norm_sqr()).sum();
    tail / total
}

/// Parameters of one member of the family `|α, ξ, k⟩ = S(ξ)D(α)|k⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeParams {
    #[serde(with = "crate::serde_complex")]
    pub alpha: C64,
    #[serde(with = "crate::serde_complex")]
    pub xi: C64,
    pub k: usize,
}

impl ModeParams {
    pub fn new(alpha: C64, xi: C64, k: usize) -> Self {
        Self { alpha, xi, k }
    }

    pub fn vacuum() -> Self {
        Self::new(ZERO, ZERO, 0)
    }
}

/// Annihilation and creation operators on the truncated space.
pub fn ladder_operators(basis: BasisTruncation) -> (Operator, Operator) {
    let d = basis.dim();
    let mut a = Operator::zeros(d, d);
    for k in 1..d {
        a[(k - 1, k)] = C64::new((k as f64).sqrt(), 0.0);
    }
    let ad = a.adjoint();
    (a, ad)
}

fn displacement_generator(alpha: C64, d: usize) -> Banded {
    let up: Vec<C64> = (0..d.saturating_sub(1))
        .map(|j| alpha * ((j + 1) as f64).sqrt())
        .collect();
    let down: Vec<C64> = (0..d.saturating_sub(1))
        .map(|j| -alpha.conj() * ((j + 1) as f64).sqrt())
        .collect();
    Banded::new(d).with_diagonal(1, up).with_diagonal(-1, down)
}

fn squeeze_generator(xi: C64, d: usize) -> Banded {
    let pair = |j: usize| (((j + 1) * (j + 2)) as f64).sqrt();
    let up: Vec<C64> = (0..d.saturating_sub(2))
        .map(|j| -xi * 0.5 * pair(j))
        .collect();
    let down: Vec<C64> = (0..d.saturating_sub(2))
        .map(|j| xi.conj() * 0.5 * pair(j))
        .collect();
    Banded::new(d).with_diagonal(2, up).with_diagonal(-2, down)
}

fn check_leakage(v: &DMatrix<C64>, basis: BasisTruncation) -> Result<()> {
    let leakage = norm_leakage(v);
    if leakage > basis.leakage_tol() {
        return Err(Error::LeakageExceeded {
            leakage,
            tolerance: basis.leakage_tol(),
            n_max: basis.n_max(),
        });
    }
    Ok(())
}

fn vacuum(d: usize) -> DMatrix<C64> {
    let mut v = DMatrix::zeros(d, 1);
    v[(0, 0)] = ONE;
    v
}

/// `D(α) = exp(αa† − α*a)` on the truncated space.
pub fn displacement_operator(alpha: C64, basis: BasisTruncation) -> Result<Operator> {
    let d = basis.dim();
    let u = displacement_generator(alpha, d).to_dense().exp();
    check_leakage(&(&u * vacuum(d)), basis)?;
    Ok(u)
}

/// `S(ξ) = exp(½(ξ*a² − ξa†²))` on the truncated space.
pub fn squeeze_operator(xi: C64, basis: BasisTruncation) -> Result<Operator> {
    let d = basis.dim();
    let u = squeeze_generator(xi, d).to_dense().exp();
    check_leakage(&(&u * vacuum(d)), basis)?;
    Ok(u)
}

/// Columns `S(ξ)D(α)|k⟩` for `k = 0..s`, each renormalised.
///
/// Uses the exponential action of the banded generators rather than forming
/// the dense operators; both paths exponentiate the same truncated generator.
pub fn basis_set(alpha: C64, xi: C64, s: usize, basis: BasisTruncation) -> Result<DMatrix<C64>> {
    let d = basis.dim();
    if s == 0 || s > d {
        return Err(Error::IndexOutOfTruncation {
            k: s.saturating_sub(1),
            n_max: basis.n_max(),
        });
    }
    let mut v = DMatrix::zeros(d, s);
    for k in 0..s {
        v[(k, k)] = ONE;
    }
    if alpha != ZERO {
        v = displacement_generator(alpha, d).exp_action(&v);
    }
    if xi != ZERO {
        v = squeeze_generator(xi, d).exp_action(&v);
    }
    for mut col in v.column_iter_mut() {
        let leak = norm_leakage(&DMatrix::from_column_slice(d, 1, col.as_slice()));
        if leak > basis.leakage_tol() {
            return Err(Error::LeakageExceeded {
                leakage: leak,
                tolerance: basis.leakage_tol(),
                n_max: basis.n_max(),
            });
        }
        let norm = col.norm();
        col /= C64::new(norm, 0.0);
    }
    Ok(v)
}

/// Same as [`basis_set`] with the cutoff chosen automatically and grown until
/// the leakage check passes.
pub fn basis_set_auto(alpha: C64, xi: C64, s: usize) -> Result<DMatrix<C64>> {
    let mut trunc = BasisTruncation::for_family(alpha, xi, s.saturating_sub(1));
    let mut last = None;
    for _ in 0..8 {
        match basis_set(alpha, xi, s, trunc) {
            Ok(b) => return Ok(b),
            Err(e @ Error::LeakageExceeded { .. }) => {
                last = Some(e);
                trunc = trunc.grown();
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// `|α, ξ, k⟩ = S(ξ)D(α)|k⟩`, renormalised within the truncation.
pub fn basis_state(p: ModeParams, basis: BasisTruncation) -> Result<Ket> {
    if p.k > basis.n_max() {
        return Err(Error::IndexOutOfTruncation {
            k: p.k,
            n_max: basis.n_max(),
        });
    }
    let all = basis_set(p.alpha, p.xi, p.k + 1, basis)?;
    Ok(all.column(p.k).into_owned())
}

/// Coherent-state amplitudes `e^{−|β|²/2} βⁿ/√n!` for `n < d`.
pub fn coherent_ket(beta: C64, d: usize) -> Ket {
    let mut v = Ket::zeros(d);
    if d == 0 {
        return v;
    }
    v[0] = C64::new((-0.5 * beta.norm_sqr()).exp(), 0.0);
    for n in 1..d {
        v[n] = v[n - 1] * beta / (n as f64).sqrt();
    }
    v
}

/// Kronecker product of kets or operators, first argument slow.
pub fn tensor_product<R1, C1, S1, R2, C2, S2>(
    x: &Matrix<C64, R1, C1, S1>,
    y: &Matrix<C64, R2, C2, S2>,
) -> DMatrix<C64>
where
    R1: Dim,
    C1: Dim,
    S1: RawStorage<C64, R1, C1>,
    R2: Dim,
    C2: Dim,
    S2: RawStorage<C64, R2, C2>,
{
    let (yr, yc) = y.shape();
    DMatrix::from_fn(x.nrows() * yr, x.ncols() * yc, |r, c| {
        x[(r / yr, c / yc)] * y[(r % yr, c % yc)]
    })
}

/// Husimi function `Q(β) = ⟨β|ρ|β⟩/π` on caller-supplied points.
pub fn q_function(rho: &Operator, grid: &[C64]) -> Vec<f64> {
    let d = rho.nrows();
    grid.iter()
        .map(|&beta| {
            let b = coherent_ket(beta, d);
            let val = (b.adjoint() * rho * &b)[(0, 0)].re;
            val.max(0.0) / std::f64::consts::PI
        })
        .collect()
}

/// Harmonic-oscillator eigenfunctions `ψ_k(x)`, `k < count`, for `X = (a + a†)/√2`.
pub fn hermite_functions(x: f64, count: usize) -> Vec<f64> {
    let mut out = vec![0.0; count];
    if count == 0 {
        return out;
    }
    out[0] = std::f64::consts::PI.powf(-0.25) * (-0.5 * x * x).exp();
    if count > 1 {
        out[1] = std::f64::consts::SQRT_2 * x * out[0];
    }
    for k in 1..count.saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = (2.0 / (kf + 1.0)).sqrt() * x * out[k] - (kf / (kf + 1.0)).sqrt() * out[k - 1];
    }
    out
}

/// Beamsplitter `U = exp(−θ(e^{−iφ}a₁†a₂ − e^{iφ}a₁a₂†))`, kept as its
/// photon-number blocks. Block `N` acts on `|j, N−j⟩`, `j = 0..=N` (mode-1 count
/// as the index).
///
/// Blocks of the φ = 0 generator are real; the φ dependence is the diagonal
/// phase `e^{−iφ(j'−j)}`. Blocks are computed on demand and cached.
#[derive(Debug)]
pub struct BeamSplitter {
    theta: f64,
    phi: f64,
    blocks: Mutex<Vec<Arc<DMatrix<f64>>>>,
}

impl BeamSplitter {
    pub fn new(theta: f64, phi: f64) -> Self {
        Self {
            theta,
            phi,
            blocks: Mutex::new(Vec::new()),
        }
    }

    /// Process-wide instance for `(θ, φ)`, so block caches survive between
    /// protocol builds.
    pub fn shared(theta: f64, phi: f64) -> Arc<Self> {
        static REGISTRY: OnceLock<Mutex<HashMap<(u64, u64), Arc<BeamSplitter>>>> = OnceLock::new();
        let mut map = REGISTRY
            .get_or_init(Default::default)
            .lock()
            .expect("beamsplitter registry poisoned");
        map.entry((theta.to_bits(), phi.to_bits()))
            .or_insert_with(|| Arc::new(Self::new(theta, phi)))
            .clone()
    }

    /// The 50/50 splitter, θ = π/4, φ = 0.
    pub fn balanced() -> Self {
        Self::new(std::f64::consts::FRAC_PI_4, 0.0)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    fn real_generator(&self, n: usize) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(n + 1, n + 1);
        for j in 0..n {
            let v = (((j + 1) * (n - j)) as f64).sqrt();
            g[(j + 1, j)] = -self.theta * v;
            g[(j, j + 1)] = self.theta * v;
        }
        g
    }

    /// Real part of block `n` (exact for φ = 0).
    pub fn real_block(&self, n: usize) -> Arc<DMatrix<f64>> {
        let mut cache = self.blocks.lock().expect("beamsplitter cache poisoned");
        while cache.len() <= n {
            let next = cache.len();
            cache.push(Arc::new(self.real_generator(next).exp()));
        }
        cache[n].clone()
    }

    /// Diagonal phase relating block entries to the φ = 0 blocks.
    pub fn phase(&self, out_j: usize, in_j: usize) -> C64 {
        if self.phi == 0.0 {
            return ONE;
        }
        C64::from_polar(1.0, -self.phi * (out_j as f64 - in_j as f64))
    }

    /// Full complex block `n`.
    pub fn block(&self, n: usize) -> DMatrix<C64> {
        let real = self.real_block(n);
        DMatrix::from_fn(n + 1, n + 1, |r, c| self.phase(r, c) * real[(r, c)])
    }
}

/// Beamsplitter on the two-mode product truncation (A index slow).
///
/// Blocks with `N > n_max` are cut by the product truncation, so only blocks
/// with `N ≤ n_max` are unitary; photon number is conserved exactly.
pub fn beamsplitter_unitary(theta: f64, phi: f64, basis: BasisTruncation) -> Operator {
    let d = basis.dim();
    let bs = BeamSplitter::new(theta, phi);
    let mut u = Operator::zeros(d * d, d * d);
    for n in 0..=(2 * (d - 1)) {
        let block = bs.block(n);
        let lo = n.saturating_sub(d - 1);
        let hi = n.min(d - 1);
        for jo in lo..=hi {
            for ji in lo..=hi {
                u[(jo * d + (n - jo), ji * d + (n - ji))] = block[(jo, ji)];
            }
        }
    }
    u
}
