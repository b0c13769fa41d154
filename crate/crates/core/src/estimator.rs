//! Root-approach maximum-likelihood reconstruction.
//!
//! The state is parameterised by an `s × r` amplitude matrix `c` with
//! `ρ = c c†`. The likelihood equation `I_tot c = J(c) c`, with
//! `I_tot = Σ_phases n_phase Σ_j Λ_j` and `J(c) = Σ_j (k_j/p_j) Λ_j`, is solved
//! by damped fixed-point iteration.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{self, ModeParams};
use crate::linalg::{self, C64};
use crate::optimize::NelderMead;
use crate::protocol::{FockStreamer, MeasurementProtocol, OutcomeLabel, ProtocolSpec, Statistics};
use crate::sampler::CountRecord;

/// Probabilities are floored here inside logarithms.
pub const P_FLOOR: f64 = 1e-300;

/// Normalised amplitude matrix `c` (s × r).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurifiedState {
    #[serde(with = "crate::serde_complex::matrix")]
    c: DMatrix<C64>,
}

impl PurifiedState {
    /// Accepts `c` only if `Tr(cc†) = 1` within 1e-10.
    pub fn new(c: DMatrix<C64>) -> Result<Self> {
        let norm = linalg::frobenius_sq(&c);
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::NotAState(format!("Tr(cc†) = {norm}")));
        }
        Self::check_shape(&c)?;
        Ok(Self { c })
    }

    pub fn normalized(c: DMatrix<C64>) -> Result<Self> {
        Self::check_shape(&c)?;
        let norm = c.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NotAState("zero amplitude matrix".into()));
        }
        Ok(Self {
            c: c / C64::new(norm, 0.0),
        })
    }

    fn check_shape(c: &DMatrix<C64>) -> Result<()> {
        if c.ncols() == 0 || c.ncols() > c.nrows() {
            return Err(Error::NotAState(format!(
                "rank {} for dimension {}",
                c.ncols(),
                c.nrows()
            )));
        }
        Ok(())
    }

    /// Pure state from a ket.
    pub fn pure(psi: &DMatrix<C64>) -> Result<Self> {
        Self::normalized(psi.columns(0, 1).into_owned())
    }

    /// Near-uniform start: all entries `1/√(sr)` plus uniform noise of size `noise`.
    pub fn default_init(s: usize, r: usize, noise: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = 1.0 / ((s * r) as f64).sqrt();
        let c = DMatrix::from_fn(s, r, |_, _| {
            C64::new(
                base + noise * (rng.random::<f64>() - 0.5),
                noise * (rng.random::<f64>() - 0.5),
            )
        });
        Self::normalized(c)
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.c
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn rank(&self) -> usize {
        self.c.ncols()
    }

    pub fn rho(&self) -> DMatrix<C64> {
        &self.c * self.c.adjoint()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionSettings {
    pub rank: usize,
    pub max_iterations: usize,
    /// Relative change of the log-likelihood between iterates.
    pub ll_tol: f64,
    /// `‖J(c)c − I_tot c‖ / ‖I_tot c‖`.
    pub residual_tol: f64,
    /// Weight kept on the previous iterate, in `[0, 1)`.
    pub mu: f64,
    /// Extra random starts; the best likelihood wins.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ReconstructionSettings {
    fn default() -> Self {
        Self {
            rank: 1,
            max_iterations: 5000,
            ll_tol: 1e-12,
            residual_tol: 1e-6,
            mu: 0.3,
            restarts: 0,
            seed: 0,
        }
    }
}

impl ReconstructionSettings {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Config(format!(
                "mixing parameter {} outside [0, 1)",
                self.mu
            )));
        }
        if !(self.ll_tol > 0.0 && self.residual_tol > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.rank == 0 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub c_hat: PurifiedState,
    #[serde(with = "crate::serde_complex::matrix")]
    pub rho_hat: DMatrix<C64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
}

/// Observed counts aligned to protocol rows, with per-phase totals.
struct Observations {
    rows: Vec<Vec<(usize, f64)>>,
    totals: Vec<f64>,
}

impl Observations {
    fn new(counts: &CountRecord, protocol: &MeasurementProtocol) -> Result<Self> {
        let rows = counts.aligned(protocol)?;
        let totals = rows
            .iter()
            .map(|r| r.iter().map(|(_, k)| k).sum())
            .collect();
        Ok(Self { rows, totals })
    }
}

fn check_dims(c: &DMatrix<C64>, protocol: &MeasurementProtocol) -> Result<()> {
    if c.nrows() != protocol.dim() {
        return Err(Error::DimensionMismatch {
            expected: protocol.dim(),
            got: c.nrows(),
        });
    }
    Ok(())
}

fn ll_of(obs: &Observations, protocol: &MeasurementProtocol, c: &DMatrix<C64>) -> f64 {
    obs.rows
        .iter()
        .enumerate()
        .map(|(j, rows)| {
            let idx: Vec<usize> = rows.iter().map(|(r, _)| *r).collect();
            let p = protocol.phase(j).probabilities_at(c, &idx);
            rows.iter()
                .zip(p)
                .map(|((_, k), p)| k * p.max(P_FLOOR).ln())
                .sum::<f64>()
        })
        .sum()
}

/// `Σ_j k_j ln p_j(c)` over observed outcomes.
pub fn log_likelihood(
    c: &PurifiedState,
    counts: &CountRecord,
    protocol: &MeasurementProtocol,
) -> Result<f64> {
    check_dims(c.matrix(), protocol)?;
    let obs = Observations::new(counts, protocol)?;
    Ok(ll_of(&obs, protocol, c.matrix()))
}

/// `(J(c)c, log-likelihood)` in one pass.
fn score(
    obs: &Observations,
    protocol: &MeasurementProtocol,
    c: &DMatrix<C64>,
) -> (DMatrix<C64>, f64) {
    let mut jc = DMatrix::zeros(c.nrows(), c.ncols());
    let mut ll = 0.0;
    for (j, rows) in obs.rows.iter().enumerate() {
        let phase = protocol.phase(j);
        for &(row, k) in rows {
            let (v, p) = phase.apply_with_probability(row, c);
            if p < 1e-12 {
                log::warn!(
                    "outcome {} observed {k} times has model probability {p:.2e}",
                    phase.label(row)
                );
            }
            let p = p.max(P_FLOOR);
            jc += v * C64::new(k / p, 0.0);
            ll += k * p.ln();
        }
    }
    (jc, ll)
}

/// Fixed-point ML iteration `c ← normalise((1−μ) I_tot⁻¹ J(c) c + μ c)`.
///
/// The step weight `1 − μ` is halved whenever the likelihood would decrease.
/// A non-converged run is returned with `converged = false`.
pub fn ml_fixed_point(
    counts: &CountRecord,
    protocol: &MeasurementProtocol,
    settings: &ReconstructionSettings,
    init: &PurifiedState,
) -> Result<ReconstructionResult> {
    settings.validate()?;
    check_dims(init.matrix(), protocol)?;
    let obs = Observations::new(counts, protocol)?;
    let s = protocol.dim();
    let mut itot = DMatrix::<C64>::zeros(s, s);
    for (j, phase) in protocol.phases().iter().enumerate() {
        if obs.totals[j] > 0.0 {
            itot += phase.sum_operator() * C64::new(obs.totals[j], 0.0);
        }
    }
    let itot_inv = itot
        .clone()
        .cholesky()
        .ok_or(Error::SingularItot)?
        .inverse();

    let mut best: Option<ReconstructionResult> = None;
    for attempt in 0..=settings.restarts {
        let start = if attempt == 0 {
            init.clone()
        } else {
            PurifiedState::default_init(
                s,
                init.rank(),
                1.0,
                settings.seed.wrapping_add(attempt as u64),
            )?
        };
        let res = iterate(&obs, protocol, settings, &itot, &itot_inv, start)?;
        if best
            .as_ref()
            .is_none_or(|b| res.log_likelihood > b.log_likelihood)
        {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one attempt"))
}

fn iterate(
    obs: &Observations,
    protocol: &MeasurementProtocol,
    settings: &ReconstructionSettings,
    itot: &DMatrix<C64>,
    itot_inv: &DMatrix<C64>,
    start: PurifiedState,
) -> Result<ReconstructionResult> {
    let mut c = start.into_matrix();
    let (mut jc, mut ll) = score(obs, protocol, &c);
    let residual_of = |c: &DMatrix<C64>, jc: &DMatrix<C64>| {
        let ic = itot * c;
        (jc - &ic).norm() / ic.norm()
    };
    let mut residual = residual_of(&c, &jc);
    let base_step = 1.0 - settings.mu;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        iterations += 1;
        let target = itot_inv * &jc;
        let mut step = base_step;
        let mut accepted = None;
        for _ in 0..40 {
            let mixed = &target * C64::new(step, 0.0) + &c * C64::new(1.0 - step, 0.0);
            let norm = mixed.norm();
            let cand = mixed / C64::new(norm, 0.0);
            let (cand_jc, cand_ll) = score(obs, protocol, &cand);
            if cand_ll >= ll - 1e-10 {
                accepted = Some((cand, cand_jc, cand_ll));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_jc, cand_ll)) = accepted else {
            // no ascent direction left at working precision
            converged = residual < settings.residual_tol;
            break;
        };
        let change = (cand_ll - ll).abs() / ll.abs().max(1.0);
        c = cand;
        jc = cand_jc;
        ll = cand_ll;
        residual = residual_of(&c, &jc);
        if change < settings.ll_tol && residual < settings.residual_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("ML iteration stopped after {iterations} steps, residual {residual:.2e}");
    }
    let c_hat = PurifiedState::normalized(c)?;
    Ok(ReconstructionResult {
        rho_hat: c_hat.rho(),
        c_hat,
        log_likelihood: ll,
        iterations,
        converged,
        residual,
    })
}

/// Largest squeeze magnitude the fit will consider.
const MAX_SQUEEZE: f64 = 1.5;

struct FamilyLikelihood<'a> {
    streamer: FockStreamer,
    data: &'a [Vec<(OutcomeLabel, f64)>],
    labels: Vec<Vec<OutcomeLabel>>,
}

impl<'a> FamilyLikelihood<'a> {
    fn new(spec: &ProtocolSpec, data: &'a [Vec<(OutcomeLabel, f64)>]) -> Result<Self> {
        let streamer = FockStreamer::new(spec)?;
        if data.len() != streamer.num_phases() {
            return Err(Error::DimensionMismatch {
                expected: streamer.num_phases(),
                got: data.len(),
            });
        }
        let labels = data
            .iter()
            .map(|ph| ph.iter().map(|(l, _)| l.clone()).collect())
            .collect();
        Ok(Self {
            streamer,
            data,
            labels,
        })
    }

    fn value(&self, x: &[f64]) -> f64 {
        let alpha = C64::new(x[0], x[1]);
        let xi = C64::new(x[2], x[3]);
        if xi.norm() > MAX_SQUEEZE || alpha.norm() > 30.0 {
            return f64::NEG_INFINITY;
        }
        let Ok(psi) = fock::basis_set_auto(alpha, xi, 1) else {
            return f64::NEG_INFINITY;
        };
        let mut ll = 0.0;
        for (j, ph) in self.data.iter().enumerate() {
            let Ok(p) = self.streamer.probabilities_of(j, &psi, &self.labels[j]) else {
                return f64::NEG_INFINITY;
            };
            ll += ph
                .iter()
                .zip(p)
                .map(|((_, w), p)| w * p.max(P_FLOOR).ln())
                .sum::<f64>();
        }
        ll
    }
}

/// Rough mean photon number of the signal from full-statistics labels.
fn photon_number_hint(spec: &ProtocolSpec, data: &[Vec<(OutcomeLabel, f64)>]) -> Option<f64> {
    let setup = spec.modes.first()?;
    if spec.statistics != Statistics::Full {
        return None;
    }
    let eta = 0.5 * (setup.efficiency.eta1 + setup.efficiency.eta2);
    let (mut total, mut weight) = (0.0, 0.0);
    for ph in data {
        for (l, w) in ph {
            if let OutcomeLabel::Full { n1, n2 } = l {
                total += w * (*n1 + *n2) as f64;
                weight += w;
            }
        }
    }
    (weight > 0.0).then(|| (total / weight / eta - setup.lo.amplitude.powi(2)).max(0.0))
}

/// Maximum-likelihood fit of the pure family `|α, ξ, 0⟩` to single-mode data:
/// grid over α, then over ξ at the best α, then Nelder–Mead on all four real
/// parameters from the best few grid points. Weights may be expected counts.
pub fn fit_adapted_basis_weighted(
    data: &[Vec<(OutcomeLabel, f64)>],
    spec: &ProtocolSpec,
) -> Result<ModeParams> {
    let family = FamilyLikelihood::new(spec, data)?;
    let radius = photon_number_hint(spec, data)
        .map_or(3.0, |n| n.sqrt() + 1.5)
        .max(1.5);
    let grid = 13;
    let mut alpha_points: Vec<(f64, [f64; 4])> = Vec::new();
    for a in 0..grid {
        for b in 0..grid {
            let re = -radius + 2.0 * radius * a as f64 / (grid - 1) as f64;
            let im = -radius + 2.0 * radius * b as f64 / (grid - 1) as f64;
            let x = [re, im, 0.0, 0.0];
            alpha_points.push((family.value(&x), x));
        }
    }
    alpha_points.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut starts: Vec<(f64, [f64; 4])> = alpha_points.iter().take(3).copied().collect();
    let [re, im, _, _] = starts[0].1;
    for mag in [0.15, 0.3, 0.5, 0.8] {
        for k in 0..8 {
            let xi = C64::from_polar(mag, std::f64::consts::PI * k as f64 / 4.0);
            let x = [re, im, xi.re, xi.im];
            starts.push((family.value(&x), x));
        }
    }
    starts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let spacing = 2.0 * radius / (grid - 1) as f64;
    let nm = NelderMead {
        max_evaluations: 1500,
        f_tol: 1e-12,
        x_tol: 1e-7,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for (_, x) in starts.iter().take(3) {
        let opt = nm.maximize(|x| family.value(x), x, 0.5 * spacing);
        // restart once from the optimum to escape a collapsed simplex
        let opt = nm.maximize(|x| family.value(x), &opt.x, 0.05);
        if best.as_ref().is_none_or(|(v, _)| opt.value > *v) {
            best = Some((opt.value, opt.x));
        }
    }
    let (value, x) = best.expect("non-empty start list");
    if !value.is_finite() {
        return Err(Error::NotConverged {
            iterations: nm.max_evaluations,
            residual: f64::INFINITY,
        });
    }
    Ok(ModeParams::new(
        C64::new(x[0], x[1]),
        C64::new(x[2], x[3]),
        0,
    ))
}

/// Zero approximation `|α, ξ, 0⟩` from observed counts.
pub fn fit_adapted_basis(counts: &CountRecord, spec: &ProtocolSpec) -> Result<ModeParams> {
    fit_adapted_basis_weighted(&counts.weighted(), spec)
}

/// Log-likelihood of `|α, ξ, 0⟩` on weighted single-mode data.
pub fn family_log_likelihood(
    data: &[Vec<(OutcomeLabel, f64)>],
    spec: &ProtocolSpec,
    center: ModeParams,
) -> Result<f64> {
    let family = FamilyLikelihood::new(spec, data)?;
    Ok(family.value(&[center.alpha.re, center.alpha.im, center.xi.re, center.xi.im]))
}

#[derive(Clone, Debug)]
pub struct PrincipalComponents {
    /// Orthonormal columns in the coordinates of the pilot's model space.
    pub vectors: DMatrix<C64>,
    /// Sum of the pilot eigenvalues carried by the kept eigenvectors.
    pub retained_weight: f64,
    /// The eigenvalue at the cut is tied with the next one.
    pub degenerate: bool,
}

/// Eigenvectors of `pilot_rho` with eigenvalue above `1e-10·λ_max`, largest
/// first, up to `s_target`. Remaining slots are filled by Gram–Schmidt on unit
/// vectors in index order, which fixes the choice inside degenerate (in
/// particular zero) eigenspaces.
pub fn principal_component_reduction(
    pilot_rho: &DMatrix<C64>,
    s_target: usize,
) -> Result<PrincipalComponents> {
    let s_big = pilot_rho.nrows();
    if s_target == 0 || s_target > s_big {
        return Err(Error::Config(format!(
            "cannot keep {s_target} of {s_big} components"
        )));
    }
    let (vals, vecs) = linalg::hermitian_eigen(pilot_rho);
    let cutoff = 1e-10 * vals[0].max(0.0);
    let mut kept: Vec<nalgebra::DVector<C64>> = Vec::new();
    let mut retained = 0.0;
    for (i, &v) in vals.iter().enumerate().take(s_target) {
        if v <= cutoff {
            break;
        }
        kept.push(vecs.column(i).into_owned());
        retained += v;
    }
    let degenerate = s_target < s_big
        && (vals[s_target - 1] - vals[s_target]).abs() <= 1e-10 * vals[0].abs().max(1e-300);
    let mut k = 0;
    while kept.len() < s_target && k < s_big {
        let mut e = nalgebra::DVector::<C64>::zeros(s_big);
        e[k] = C64::new(1.0, 0.0);
        for _ in 0..2 {
            for v in &kept {
                let overlap = v.dotc(&e);
                e -= v * overlap;
            }
        }
        let norm = e.norm();
        if norm > 1e-6 {
            kept.push(e / C64::new(norm, 0.0));
        }
        k += 1;
    }
    Ok(PrincipalComponents {
        vectors: DMatrix::from_columns(&kept),
        retained_weight: retained,
        degenerate,
    })
}
