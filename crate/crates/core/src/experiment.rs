//! Config-driven pipelines: deterministic analysis, single simulations and
//! reconstructions, Monte-Carlo campaigns with on-disk artifacts, and reports.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adequacy::{self, AdequacyMode, AdequacyReport};
use crate::error::{Error, Result};
use crate::estimator::{self, PurifiedState, ReconstructionResult, ReconstructionSettings};
use crate::fock::{self, ModeParams};
use crate::info::{self, FidelityLossModel, InfoSpectrum, LossDistribution, SpectrumReport};
use crate::linalg::{self, C64};
use crate::protocol::{
    build_protocol, BasisDescriptor, BeamSplitterAngles, DetectorEfficiency, FockStreamer,
    LocalOscillator, MeasurementProtocol, ModeBasis, ModeSetup, OutcomeLabel, ProtocolSpec,
    Statistics,
};
use crate::sampler::{run_protocol_simulation, simulate_distributions, CountRecord, RunSeed};
use crate::stats::{self, KsResult};

/// Significance level used for the adequacy pass rates in reports.
pub const REPORT_ALPHA0: f64 = 0.05;
/// Campaigns abort when more than this fraction of runs fail.
pub const MAX_FAILURE_FRACTION: f64 = 0.1;
/// Expected-count weights below this are dropped from the basis fit.
const FIT_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    /// `S(ξ)D(α)|0⟩`.
    SqueezedCoherent {
        #[serde(with = "crate::serde_complex")]
        alpha: C64,
        #[serde(with = "crate::serde_complex")]
        xi: C64,
    },
    /// Normalised `c_α|α⟩ + c_n|n⟩`.
    FockCoherentSuperposition {
        #[serde(with = "crate::serde_complex")]
        alpha: C64,
        n: usize,
        #[serde(with = "crate::serde_complex")]
        c_alpha: C64,
        #[serde(with = "crate::serde_complex")]
        c_n: C64,
    },
    /// `(|α_A, k₁⟩|α_B, k₂⟩ + |α_A, k₂⟩|α_B, k₁⟩)/√2` with displaced Fock states.
    TwoModeEntangled {
        #[serde(with = "crate::serde_complex")]
        alpha_a: C64,
        #[serde(with = "crate::serde_complex")]
        alpha_b: C64,
        k1: usize,
        k2: usize,
    },
    /// Single-mode Fock amplitudes; normalised on load.
    Explicit {
        #[serde(with = "crate::serde_complex::vec")]
        amplitudes: Vec<C64>,
    },
}

impl StateSpec {
    pub fn modes(&self) -> usize {
        match self {
            StateSpec::TwoModeEntangled { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterSpec {
    /// Zero approximation fitted to the data (expected counts for analysis).
    #[default]
    Fit,
    /// Parameters of a squeezed-coherent true state.
    State,
    Fixed {
        #[serde(with = "crate::serde_complex")]
        alpha: C64,
        #[serde(with = "crate::serde_complex")]
        xi: C64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaSpec {
    pub s_big: usize,
    pub s_target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductMode {
    #[serde(with = "crate::serde_complex")]
    pub alpha: C64,
    #[serde(with = "crate::serde_complex", default)]
    pub xi: C64,
    pub s: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    /// `|α, ξ, k⟩, k < s`; with `pca` the final `s` equals `pca.s_target`.
    Adapted {
        s: usize,
        #[serde(default)]
        center: CenterSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pca: Option<PcaSpec>,
    },
    Fock {
        s: usize,
    },
    /// One adapted basis per mode, joined by the tensor product.
    Product {
        modes: Vec<ProductMode>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeConfig {
    pub lo_amplitude: f64,
    pub m: usize,
    #[serde(default = "one")]
    pub eta1: f64,
    #[serde(default = "one")]
    pub eta2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolConfig {
    pub modes: Vec<ModeConfig>,
    pub statistics: Statistics,
    #[serde(default)]
    pub beamsplitter: BeamSplitterAngles,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub mu: f64,
    pub ll_tol: f64,
    pub residual_tol: f64,
    pub restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = ReconstructionSettings::default();
        Self {
            max_iterations: d.max_iterations,
            mu: d.mu,
            ll_tol: d.ll_tol,
            residual_tol: d.residual_tol,
            restarts: d.restarts,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    #[serde(with = "crate::serde_complex")]
    pub center: C64,
    pub half_width: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            center: C64::new(0.0, 0.0),
            half_width: 5.0,
            points: 101,
        }
    }
}

impl GridSpec {
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.points - 1) as f64
    }

    pub fn axis(&self, offset: f64) -> Vec<f64> {
        (0..self.points)
            .map(|i| offset - self.half_width + i as f64 * self.spacing())
            .collect()
    }
}

fn default_runs() -> usize {
    1
}

fn default_rank() -> usize {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_min_expected() -> f64 {
    adequacy::DEFAULT_MIN_EXPECTED
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub state: StateSpec,
    pub basis: BasisSpec,
    pub protocol: ProtocolConfig,
    /// Events per phase.
    pub n: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Rank of the reconstructed state.
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_min_expected")]
    pub min_expected: f64,
    /// Q-function / wave-function grid; by default 101 points per axis
    /// spanning ±(|α| + 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => config_err(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }

    pub fn validate(&self) -> Result<()> {
        let modes = self.protocol.modes.len();
        if !(1..=2).contains(&modes) {
            return Err(config_err(format!(
                "protocol needs one or two modes, got {modes}"
            )));
        }
        if self.state.modes() != modes {
            return Err(config_err(format!(
                "state has {} modes but the protocol has {modes}",
                self.state.modes()
            )));
        }
        for mode in &self.protocol.modes {
            LocalOscillator::new(mode.lo_amplitude, mode.m)?;
            DetectorEfficiency::new(mode.eta1, mode.eta2)?;
        }
        if self.n == 0 || self.runs == 0 {
            return Err(config_err("n and runs must be positive"));
        }
        if !(self.min_expected > 0.0) {
            return Err(config_err("min_expected must be positive"));
        }
        if let Some(g) = self.grid {
            if g.points < 2 || !(g.half_width > 0.0) {
                return Err(config_err(
                    "grid needs at least two points and a positive half width",
                ));
            }
        }
        let s = match &self.basis {
            BasisSpec::Adapted { s, center, pca } => {
                if modes != 1 {
                    return Err(config_err("two-mode protocols need a product basis"));
                }
                if *center == CenterSpec::State
                    && !matches!(self.state, StateSpec::SqueezedCoherent { .. })
                {
                    return Err(config_err(
                        "center source \"state\" needs a squeezed_coherent state",
                    ));
                }
                if let Some(p) = pca {
                    if p.s_target != *s || p.s_target > p.s_big {
                        return Err(config_err(format!(
                            "pca needs s = s_target <= s_big (s = {s}, s_target = {}, s_big = {})",
                            p.s_target, p.s_big
                        )));
                    }
                }
                *s
            }
            BasisSpec::Fock { s } => {
                if modes != 1 {
                    return Err(config_err("two-mode protocols need a product basis"));
                }
                *s
            }
            BasisSpec::Product { modes: pm } => {
                if pm.len() != modes {
                    return Err(config_err(format!(
                        "product basis has {} modes, protocol {modes}",
                        pm.len()
                    )));
                }
                pm.iter().map(|m| m.s).product()
            }
        };
        if s < 2 {
            return Err(config_err("model dimension must be at least 2"));
        }
        if self.rank == 0 || self.rank > s {
            return Err(config_err(format!("rank {} outside 1..={s}", self.rank)));
        }
        let solver = self.solver_settings();
        if !(0.0..1.0).contains(&solver.mu)
            || !(solver.ll_tol > 0.0)
            || !(solver.residual_tol > 0.0)
        {
            return Err(config_err(
                "solver needs mu in [0, 1) and positive tolerances",
            ));
        }
        Ok(())
    }

    pub fn protocol_spec(&self) -> Result<ProtocolSpec> {
        let modes = self
            .protocol
            .modes
            .iter()
            .map(|m| {
                Ok(ModeSetup {
                    lo: LocalOscillator::new(m.lo_amplitude, m.m)?,
                    efficiency: DetectorEfficiency::new(m.eta1, m.eta2)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(ProtocolSpec {
            modes,
            statistics: self.protocol.statistics,
            beamsplitter: self.protocol.beamsplitter,
            n: self.n,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid.unwrap_or_else(|| {
            let amp = match &self.state {
                StateSpec::SqueezedCoherent { alpha, .. }
                | StateSpec::FockCoherentSuperposition { alpha, .. } => alpha.norm(),
                StateSpec::TwoModeEntangled {
                    alpha_a, alpha_b, ..
                } => alpha_a.norm().max(alpha_b.norm()),
                StateSpec::Explicit { amplitudes } => {
                    let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum();
                    let n_mean: f64 = amplitudes
                        .iter()
                        .enumerate()
                        .map(|(k, z)| k as f64 * z.norm_sqr())
                        .sum();
                    (n_mean / norm).sqrt()
                }
            };
            GridSpec {
                half_width: amp + 3.0,
                ..GridSpec::default()
            }
        })
    }

    pub fn solver_settings(&self) -> ReconstructionSettings {
        ReconstructionSettings {
            rank: self.rank,
            max_iterations: self.solver.max_iterations,
            ll_tol: self.solver.ll_tol,
            residual_tol: self.solver.residual_tol,
            mu: self.solver.mu,
            restarts: self.solver.restarts,
            seed: self.master_seed,
        }
    }
}

/// True state in the Fock representation.
#[derive(Clone, Debug)]
pub enum TrueState {
    Single(DMatrix<C64>),
    /// Amplitude matrix `Ψ[a, b]` over the two Fock spaces.
    Two(DMatrix<C64>),
}

fn normalise(m: DMatrix<C64>) -> Result<DMatrix<C64>> {
    let norm = m.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(config_err("state amplitudes vanish"));
    }
    Ok(m / C64::new(norm, 0.0))
}

impl TrueState {
    pub fn from_spec(spec: &StateSpec) -> Result<Self> {
        match *spec {
            StateSpec::SqueezedCoherent { alpha, xi } => {
                Ok(TrueState::Single(fock::basis_set_auto(alpha, xi, 1)?))
            }
            StateSpec::FockCoherentSuperposition {
                alpha,
                n,
                c_alpha,
                c_n,
            } => {
                let d = fock::BasisTruncation::for_coherent(alpha.norm())
                    .dim()
                    .max(n + 16);
                let mut ket = fock::coherent_ket(alpha, d) * c_alpha;
                ket[n] += c_n;
                Ok(TrueState::Single(normalise(DMatrix::from_column_slice(
                    d,
                    1,
                    ket.as_slice(),
                ))?))
            }
            StateSpec::TwoModeEntangled {
                alpha_a,
                alpha_b,
                k1,
                k2,
            } => {
                let k = k1.max(k2) + 1;
                let a = fock::basis_set_auto(alpha_a, C64::new(0.0, 0.0), k)?;
                let b = fock::basis_set_auto(alpha_b, C64::new(0.0, 0.0), k)?;
                let psi = a.column(k1) * b.column(k2).transpose()
                    + a.column(k2) * b.column(k1).transpose();
                Ok(TrueState::Two(normalise(psi)?))
            }
            StateSpec::Explicit { ref amplitudes } => {
                if amplitudes.is_empty() {
                    return Err(config_err("explicit state has no amplitudes"));
                }
                Ok(TrueState::Single(normalise(DMatrix::from_column_slice(
                    amplitudes.len(),
                    1,
                    amplitudes,
                ))?))
            }
        }
    }

    /// Unnormalised coordinates of the state in the model bases.
    pub fn project(&self, bases: &[ModeBasis]) -> DMatrix<C64> {
        match self {
            TrueState::Single(psi) => {
                let b = &bases[0].vectors;
                let d = b.nrows().min(psi.nrows());
                b.rows(0, d).adjoint() * psi.rows(0, d)
            }
            TrueState::Two(psi) => {
                let (ba, bb) = (&bases[0].vectors, &bases[1].vectors);
                let da = ba.nrows().min(psi.nrows());
                let db = bb.nrows().min(psi.ncols());
                let m = ba.rows(0, da).adjoint()
                    * psi.view((0, 0), (da, db))
                    * bb.rows(0, db).map(|z| z.conj());
                let (sa, sb) = m.shape();
                DMatrix::from_fn(sa * sb, 1, |i, _| m[(i / sb, i % sb)])
            }
        }
    }

    /// Density matrix, single mode only.
    pub fn rho(&self) -> Option<DMatrix<C64>> {
        match self {
            TrueState::Single(psi) => Some(psi * psi.adjoint()),
            TrueState::Two(_) => None,
        }
    }
}

/// Everything that follows from the config alone.
#[derive(Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: ProtocolSpec,
    pub truth: TrueState,
    config_hash: String,
    truth_dists: Option<Vec<Vec<(OutcomeLabel, f64)>>>,
    truth_maps: Option<Vec<HashMap<OutcomeLabel, f64>>>,
    theory: OnceLock<Theory>,
}

/// The model at the true state: bases, protocol and information spectrum.
#[derive(Debug)]
pub struct Theory {
    pub bases: Vec<ModeBasis>,
    pub protocol: MeasurementProtocol,
    pub c_true: PurifiedState,
    pub spectrum: InfoSpectrum,
    pub report: AnalysisReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config_hash: String,
    pub master_seed: u64,
    pub protocol_hash: String,
    pub basis: Vec<BasisDescriptor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<ModeParams>,
    /// Weight of the true state inside the model space.
    pub retained_weight: f64,
    pub norm_error: f64,
    pub spectrum: SpectrumReport,
}

/// Model bases of one reconstruction, plus where they came from.
struct ModelSpace {
    bases: Vec<ModeBasis>,
    center: Option<ModeParams>,
    /// Protocol on the final bases when the construction already produced it.
    protocol: Option<MeasurementProtocol>,
    /// Stage-one amplitudes mapped into the final basis (PCA flow).
    seed_c: Option<DMatrix<C64>>,
}

impl ModelSpace {
    fn plain(bases: Vec<ModeBasis>, center: Option<ModeParams>) -> Self {
        Self {
            bases,
            center,
            protocol: None,
            seed_c: None,
        }
    }

    fn into_protocol(
        self,
        spec: &ProtocolSpec,
    ) -> Result<(
        Vec<ModeBasis>,
        Option<ModeParams>,
        MeasurementProtocol,
        Option<DMatrix<C64>>,
    )> {
        let protocol = match self.protocol {
            Some(p) => p,
            None => build_protocol(spec, &self.bases)?,
        };
        Ok((self.bases, self.center, protocol, self.seed_c))
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let spec = config.protocol_spec()?;
        let truth = TrueState::from_spec(&config.state)?;
        let (truth_dists, truth_maps) = match &truth {
            TrueState::Single(psi) => {
                let streamer = FockStreamer::new(&spec)?;
                let dists: Vec<Vec<(OutcomeLabel, f64)>> = (0..streamer.num_phases())
                    .into_par_iter()
                    .map(|j| streamer.distribution(j, psi))
                    .collect::<Result<_>>()?;
                let maps = dists.iter().map(|d| d.iter().cloned().collect()).collect();
                (Some(dists), Some(maps))
            }
            TrueState::Two(_) => (None, None),
        };
        Ok(Self {
            config_hash: config.hash(),
            config,
            spec,
            truth,
            truth_dists,
            truth_maps,
            theory: OnceLock::new(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(ExperimentConfig::load(path)?)
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn model_dim(&self) -> usize {
        match &self.config.basis {
            BasisSpec::Adapted { s, .. } | BasisSpec::Fock { s } => *s,
            BasisSpec::Product { modes } => modes.iter().map(|m| m.s).product(),
        }
    }

    /// Expected counts `n p` of the true state, as label weights.
    fn expected_weights(&self) -> Option<Vec<Vec<(OutcomeLabel, f64)>>> {
        let n = self.config.n as f64;
        self.truth_dists.as_ref().map(|dists| {
            dists
                .iter()
                .map(|d| {
                    d.iter()
                        .filter(|(l, p)| *l != OutcomeLabel::Overflow && n * p > FIT_WEIGHT_FLOOR)
                        .map(|(l, p)| (l.clone(), n * p))
                        .collect()
                })
                .collect()
        })
    }

    fn center(&self, center: &CenterSpec, data: Option<&CountRecord>) -> Result<ModeParams> {
        match (center, &self.config.state) {
            (CenterSpec::State, StateSpec::SqueezedCoherent { alpha, xi }) => {
                Ok(ModeParams::new(*alpha, *xi, 0))
            }
            (CenterSpec::State, _) => Err(config_err(
                "center source \"state\" needs a squeezed_coherent state",
            )),
            (CenterSpec::Fixed { alpha, xi }, _) => Ok(ModeParams::new(*alpha, *xi, 0)),
            (CenterSpec::Fit, _) => match data {
                Some(counts) => estimator::fit_adapted_basis(counts, &self.spec),
                None => {
                    let weights = self
                        .expected_weights()
                        .ok_or_else(|| config_err("fit needs a single-mode state"))?;
                    estimator::fit_adapted_basis_weighted(&weights, &self.spec)
                }
            },
        }
    }

    fn initial_state(
        &self,
        s: usize,
        seed: u64,
        start: Option<&DMatrix<C64>>,
    ) -> Result<PurifiedState> {
        let r = self.config.rank;
        let mut init = PurifiedState::default_init(s, r, 1e-3, seed)?.into_matrix();
        match start {
            Some(c) => {
                for t in 0..r.min(c.ncols()) {
                    init.set_column(
                        t,
                        &(c.column(t) * C64::new(1.0, 0.0) + init.column(t) * C64::new(1e-6, 0.0)),
                    );
                }
            }
            None if matches!(self.config.basis, BasisSpec::Adapted { .. }) && r == 1 => {
                // the zero approximation is the first basis function; a product
                // basis is not fitted, so its first function carries no such meaning
                init.fill(C64::new(0.0, 0.0));
                init[(0, 0)] = C64::new(1.0, 0.0);
            }
            None => {}
        }
        PurifiedState::normalized(init)
    }

    /// Model space for either the analysis (`data = None`, pilot = truth) or
    /// one reconstruction.
    fn model_space(&self, data: Option<&CountRecord>, seed: u64) -> Result<ModelSpace> {
        match &self.config.basis {
            BasisSpec::Fock { s } => Ok(ModelSpace::plain(vec![ModeBasis::fock(*s)], None)),
            BasisSpec::Product { modes } => Ok(ModelSpace::plain(
                modes
                    .iter()
                    .map(|m| ModeBasis::adapted(m.alpha, m.xi, m.s))
                    .collect::<Result<_>>()?,
                None,
            )),
            BasisSpec::Adapted { s, center, pca } => {
                let params = self.center(center, data)?;
                let Some(pca) = pca else {
                    return Ok(ModelSpace::plain(
                        vec![ModeBasis::adapted(params.alpha, params.xi, *s)?],
                        Some(params),
                    ));
                };
                let big = ModeBasis::adapted(params.alpha, params.xi, pca.s_big)?;
                let big_protocol = build_protocol(&self.spec, std::slice::from_ref(&big))?;
                let pilot = match data {
                    None => {
                        PurifiedState::normalized(self.truth.project(std::slice::from_ref(&big)))?
                    }
                    Some(counts) => {
                        let init = self.initial_state(pca.s_big, seed, None)?;
                        estimator::ml_fixed_point(
                            counts,
                            &big_protocol,
                            &self.config.solver_settings(),
                            &init,
                        )?
                        .c_hat
                    }
                };
                let pcs = estimator::principal_component_reduction(&pilot.rho(), pca.s_target)?;
                if pcs.degenerate {
                    log::debug!("pilot spectrum is degenerate at the cut; ties broken by index");
                }
                let seed_c = pcs.vectors.adjoint() * pilot.matrix();
                let final_basis = ModeBasis::custom(&big.vectors * &pcs.vectors)?;
                let protocol =
                    big_protocol.restrict(&pcs.vectors, final_basis.descriptor.clone())?;
                Ok(ModelSpace {
                    bases: vec![final_basis],
                    center: Some(params),
                    protocol: Some(protocol),
                    seed_c: Some(seed_c),
                })
            }
        }
    }

    /// Protocol, spectrum and efficiency at the true state.
    pub fn theory(&self) -> Result<&Theory> {
        if let Some(t) = self.theory.get() {
            return Ok(t);
        }
        let (bases, center, protocol, _) = self
            .model_space(None, self.config.master_seed)?
            .into_protocol(&self.spec)?;
        let proj = self.truth.project(&bases);
        let retained_weight = linalg::frobenius_sq(&proj);
        let c_true = PurifiedState::normalized(proj)?;
        let info = info::information_matrix(&c_true, &protocol)?;
        let spectrum = info::classify_spectrum(&info, &c_true)?;
        let report = AnalysisReport {
            config_hash: self.config_hash.clone(),
            master_seed: self.config.master_seed,
            protocol_hash: protocol.hash(),
            basis: bases.iter().map(|b| b.descriptor.clone()).collect(),
            center,
            retained_weight,
            norm_error: spectrum.norm_error,
            spectrum: SpectrumReport::new(&spectrum, info.skipped)?,
        };
        let theory = Theory {
            bases,
            protocol,
            c_true,
            spectrum,
            report,
        };
        let _ = self.theory.set(theory);
        Ok(self.theory.get().expect("theory just set"))
    }

    pub fn analyze(&self) -> Result<AnalysisReport> {
        Ok(self.theory()?.report.clone())
    }

    pub fn run_seed(&self, run_index: u64) -> RunSeed {
        RunSeed::new(self.config.master_seed, run_index)
    }

    /// One experiment's counts from the true state.
    pub fn simulate(&self, seed: RunSeed) -> Result<CountRecord> {
        match &self.truth_dists {
            Some(dists) => simulate_distributions(
                dists,
                self.config.n,
                &format!("config:{}", self.config_hash),
                seed,
            ),
            None => {
                // two-mode truth lies in the product model space
                let theory = self.theory()?;
                if (theory.report.retained_weight - 1.0).abs() > 1e-9 {
                    return Err(config_err(format!(
                        "two-mode state keeps only {:.9} of its weight in the model space",
                        theory.report.retained_weight
                    )));
                }
                run_protocol_simulation(&theory.protocol, theory.c_true.matrix(), seed)
            }
        }
    }

    /// Per-row truth probabilities for a model protocol's rows.
    fn truth_probabilities(&self, protocol: &MeasurementProtocol) -> Result<Vec<Vec<f64>>> {
        match &self.truth_maps {
            Some(maps) => Ok(protocol
                .phases()
                .iter()
                .zip(maps)
                .map(|(ph, map)| {
                    let mut p: Vec<f64> = ph
                        .labels()
                        .iter()
                        .map(|l| {
                            if *l == OutcomeLabel::Overflow {
                                0.0
                            } else {
                                map.get(l).copied().unwrap_or(0.0)
                            }
                        })
                        .collect();
                    if let Some(i) = ph
                        .labels()
                        .iter()
                        .position(|l| *l == OutcomeLabel::Overflow)
                    {
                        p[i] = (1.0 - p.iter().sum::<f64>()).max(0.0);
                    }
                    p
                })
                .collect()),
            None => protocol.outcome_probabilities(self.theory()?.c_true.matrix()),
        }
    }

    /// Reconstruction of one count record, with the model space chosen as the
    /// config prescribes.
    pub fn reconstruct(&self, counts: &CountRecord, seed: RunSeed) -> Result<Reconstruction> {
        let fixed_space = match &self.config.basis {
            BasisSpec::Adapted { center, pca, .. } => *center != CenterSpec::Fit && pca.is_none(),
            _ => true,
        };
        let (bases, center, seed_c, owned);
        if fixed_space {
            let theory = self.theory()?;
            bases = theory.bases.clone();
            center = theory.report.center;
            seed_c = None;
            owned = None;
        } else {
            let (b, c, p, sc) = self
                .model_space(Some(counts), seed.mixed())?
                .into_protocol(&self.spec)?;
            owned = Some(p);
            bases = b;
            center = c;
            seed_c = sc;
        }
        let protocol = match &owned {
            Some(p) => p,
            None => &self.theory()?.protocol,
        };
        let s = protocol.dim();
        let init = self.initial_state(s, seed.mixed(), seed_c.as_ref())?;
        let result =
            estimator::ml_fixed_point(counts, protocol, &self.config.solver_settings(), &init)?;
        if !result.converged {
            log::warn!(
                "reconstruction stopped after {} iterations with residual {:.2e}",
                result.iterations,
                result.residual
            );
        }
        Ok(Reconstruction {
            basis: bases.iter().map(|b| b.descriptor.clone()).collect(),
            bases,
            center,
            protocol_hash: protocol.hash(),
            owned_protocol: owned,
            result,
        })
    }

    fn protocol_of<'a>(&'a self, rec: &'a Reconstruction) -> Result<&'a MeasurementProtocol> {
        match &rec.owned_protocol {
            Some(p) => Ok(p),
            None => Ok(&self.theory()?.protocol),
        }
    }

    /// `⟨ψ|ρ̂|ψ⟩` with `ρ̂` embedded through the model bases.
    pub fn fidelity(&self, rec: &Reconstruction) -> Result<f64> {
        let proj = self.truth.project(&rec.bases);
        Ok((proj.adjoint() * &rec.result.rho_hat * &proj)[(0, 0)]
            .re
            .clamp(0.0, 1.0))
    }

    /// Adequacy reports in the three modes; failures are returned as text.
    pub fn adequacy(
        &self,
        counts: &CountRecord,
        rec: &Reconstruction,
    ) -> Result<(Vec<AdequacyReport>, Vec<String>)> {
        let protocol = self.protocol_of(rec)?;
        let observed = adequacy::observed_counts(counts, protocol)?;
        let totals: Vec<f64> = observed.iter().map(|o| o.iter().sum()).collect();
        let p_theory = self.truth_probabilities(protocol)?;
        let p_model = protocol.outcome_probabilities(rec.result.c_hat.matrix())?;
        let expected_theory = adequacy::expected_counts(&p_theory, &totals);
        let expected_model = adequacy::expected_counts(&p_model, &totals);
        let nu = info::physical_dof(protocol.dim(), self.config.rank);
        let min = self.config.min_expected;
        let mut reports = Vec::new();
        let mut errors = Vec::new();
        let attempts = [
            (
                AdequacyMode::TheoryVsExperiment,
                &expected_theory,
                &observed,
            ),
            (AdequacyMode::ModelVsExperiment, &expected_model, &observed),
            (
                AdequacyMode::TheoryVsModel,
                &expected_theory,
                &expected_model,
            ),
        ];
        for (mode, expected, obs) in attempts {
            match adequacy::adequacy_test(mode, expected, obs, nu, min) {
                Ok(r) => reports.push(r),
                Err(e) => errors.push(format!("{mode:?}: {e}")),
            }
        }
        Ok((reports, errors))
    }

    /// Simulate, reconstruct and evaluate run `run_index`.
    pub fn run(&self, run_index: u64) -> Result<RunArtifacts> {
        let seed = self.run_seed(run_index);
        let counts = self.simulate(seed)?;
        let rec = self.reconstruct(&counts, seed)?;
        let fidelity = self.fidelity(&rec)?;
        let (adequacy, adequacy_errors) = self.adequacy(&counts, &rec)?;
        let record = RunRecord {
            run_index,
            seed,
            config_hash: self.config_hash.clone(),
            protocol_hash: rec.protocol_hash.clone(),
            basis: rec.basis.clone(),
            center: rec.center,
            fidelity,
            loss: 1.0 - fidelity,
            log_likelihood: rec.result.log_likelihood,
            iterations: rec.result.iterations,
            converged: rec.result.converged,
            residual: rec.result.residual,
            adequacy,
            adequacy_errors,
        };
        Ok(RunArtifacts {
            counts,
            reconstruction: rec.result,
            record,
        })
    }
}

#[derive(Debug)]
pub struct Reconstruction {
    pub bases: Vec<ModeBasis>,
    pub basis: Vec<BasisDescriptor>,
    pub center: Option<ModeParams>,
    pub protocol_hash: String,
    owned_protocol: Option<MeasurementProtocol>,
    pub result: ReconstructionResult,
}

impl Reconstruction {
    pub fn document(&self, config_hash: &str, seed: Option<RunSeed>) -> ReconstructionDocument {
        ReconstructionDocument {
            config_hash: config_hash.to_string(),
            seed,
            protocol_hash: self.protocol_hash.clone(),
            basis: self.basis.clone(),
            center: self.center,
            rank: self.result.c_hat.rank(),
            result: self.result.clone(),
        }
    }
}

/// On-disk form of one reconstruction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionDocument {
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<RunSeed>,
    pub protocol_hash: String,
    pub basis: Vec<BasisDescriptor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<ModeParams>,
    pub rank: usize,
    pub result: ReconstructionResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_index: u64,
    pub seed: RunSeed,
    pub config_hash: String,
    pub protocol_hash: String,
    pub basis: Vec<BasisDescriptor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<ModeParams>,
    pub fidelity: f64,
    pub loss: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    pub adequacy: Vec<AdequacyReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adequacy_errors: Vec<String>,
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub counts: CountRecord,
    pub reconstruction: ReconstructionResult,
    pub record: RunRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub run_index: u64,
    pub error: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::MissingArtifacts(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

pub const ANALYSIS_FILE: &str = "analysis.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const RUNS_DIR: &str = "runs";

fn run_dir(out: &Path, run_index: u64) -> PathBuf {
    out.join(RUNS_DIR).join(format!("run_{run_index:04}"))
}

/// Writes counts, reconstruction and record of one run.
pub fn write_run(out: &Path, exp: &Experiment, art: &RunArtifacts) -> Result<()> {
    let dir = run_dir(out, art.record.run_index);
    fs::create_dir_all(&dir)?;
    art.counts
        .write_csv(BufWriter::new(fs::File::create(dir.join("counts.csv"))?))?;
    let doc = ReconstructionDocument {
        config_hash: exp.config_hash.clone(),
        seed: Some(art.record.seed),
        protocol_hash: art.record.protocol_hash.clone(),
        basis: art.record.basis.clone(),
        center: art.record.center,
        rank: art.reconstruction.c_hat.rank(),
        result: art.reconstruction.clone(),
    };
    write_json(&dir.join("reconstruction.json"), &doc)?;
    write_json(&dir.join("run.json"), &art.record)
}

/// Analysis artifacts: spectrum report, loss curve and the config itself.
pub fn write_analysis(out: &Path, exp: &Experiment) -> Result<AnalysisReport> {
    fs::create_dir_all(out)?;
    let report = exp.analyze()?;
    fs::write(out.join("config.json"), exp.config.to_json() + "\n")?;
    write_json(&out.join(ANALYSIS_FILE), &report)?;
    let dist = loss_distribution(&report)?;
    dist.write_curve_csv(
        200,
        BufWriter::new(fs::File::create(out.join("loss_curve.csv"))?),
    )?;
    Ok(report)
}

pub fn loss_distribution(report: &AnalysisReport) -> Result<LossDistribution> {
    let d = report.spectrum.physical.iter().map(|h| 0.5 / h).collect();
    Ok(LossDistribution::new(FidelityLossModel::new(d)?))
}

/// `runs` simulate→reconstruct→fidelity cycles with artifacts under `out`.
/// Failed runs are recorded; more than 10% failures abort the campaign.
pub fn run_campaign(exp: &Experiment, runs: usize, out: &Path) -> Result<CampaignSummary> {
    write_analysis(out, exp)?;
    let outcomes: Vec<std::result::Result<RunRecord, RunFailure>> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let result = exp.run(i).and_then(|art| {
                write_run(out, exp, &art)?;
                Ok(art.record)
            });
            result.map_err(|e| {
                log::warn!("run {i} failed: {e}");
                RunFailure {
                    run_index: i,
                    error: e.to_string(),
                }
            })
        })
        .collect();
    let failures: Vec<RunFailure> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().err().cloned())
        .collect();
    write_json(&out.join("failures.json"), &failures)?;
    if failures.len() as f64 > MAX_FAILURE_FRACTION * runs as f64 {
        return Err(Error::CampaignAborted {
            failed: failures.len(),
            total: runs,
        });
    }
    report(out, false)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdequacySummary {
    pub mode: AdequacyMode,
    pub runs: usize,
    pub pass_rate: f64,
    pub mean_chi2: f64,
    pub mean_nu_ad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub config_hash: String,
    pub master_seed: u64,
    pub runs: usize,
    pub failed: usize,
    pub e_p: f64,
    pub theory_mean_loss: f64,
    pub theory_std_loss: f64,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_fidelity: f64,
    pub ks: KsResult,
    pub alpha0: f64,
    pub adequacy: Vec<AdequacySummary>,
}

impl CampaignSummary {
    /// Acceptance checks on a finished campaign: the losses are compatible
    /// with theory at the 1% level and the theory-vs-experiment adequacy pass
    /// rate at α₀ = 0.05 is at least 0.9.
    pub fn check(&self) -> Vec<String> {
        let mut failures = Vec::new();
        if !(self.ks.p_value > 0.01) {
            failures.push(format!("KS p-value {:.4} <= 0.01", self.ks.p_value));
        }
        match self
            .adequacy
            .iter()
            .find(|a| a.mode == AdequacyMode::TheoryVsExperiment)
        {
            Some(a) if a.pass_rate >= 0.9 => {}
            Some(a) => failures.push(format!("adequacy pass rate {:.3} < 0.9", a.pass_rate)),
            None => failures.push("no theory-vs-experiment adequacy reports".into()),
        }
        failures
    }
}

/// Reads the run records under `dir`, sorted by run index.
pub fn read_runs(dir: &Path) -> Result<Vec<RunRecord>> {
    let runs_dir = dir.join(RUNS_DIR);
    let entries = match fs::read_dir(&runs_dir) {
        Ok(e) => e,
        Err(_) => {
            return Err(Error::MissingArtifacts(format!(
                "no {} directory in {}",
                RUNS_DIR,
                dir.display()
            )))
        }
    };
    let mut records = Vec::new();
    for entry in entries {
        let path = entry?.path().join("run.json");
        if path.is_file() {
            records.push(read_json::<RunRecord>(&path)?);
        }
    }
    records.sort_by_key(|r| r.run_index);
    Ok(records)
}

/// Aggregates a campaign directory into `summary.json` and `histogram.csv`.
pub fn report(dir: &Path, svg: bool) -> Result<CampaignSummary> {
    let analysis: AnalysisReport = read_json(&dir.join(ANALYSIS_FILE))?;
    let records = read_runs(dir)?;
    if records.is_empty() {
        return Err(Error::MissingArtifacts(format!(
            "no completed runs in {}",
            dir.display()
        )));
    }
    let failures: Vec<RunFailure> = match fs::read_to_string(dir.join("failures.json")) {
        Ok(text) => serde_json::from_str(&text)?,
        Err(_) => Vec::new(),
    };
    let dist = loss_distribution(&analysis)?;
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let fids: Vec<f64> = records.iter().map(|r| r.fidelity).collect();
    let mut by_mode: BTreeMap<String, (AdequacyMode, Vec<&AdequacyReport>)> = BTreeMap::new();
    for r in &records {
        for a in &r.adequacy {
            by_mode
                .entry(format!("{:?}", a.mode))
                .or_insert_with(|| (a.mode, Vec::new()))
                .1
                .push(a);
        }
    }
    let adequacy = AdequacyMode::ALL
        .iter()
        .filter_map(|mode| by_mode.get(&format!("{mode:?}")))
        .map(|(mode, reps)| AdequacySummary {
            mode: *mode,
            runs: reps.len(),
            pass_rate: reps.iter().filter(|a| a.adequate(REPORT_ALPHA0)).count() as f64
                / reps.len() as f64,
            mean_chi2: stats::mean(&reps.iter().map(|a| a.chi2).collect::<Vec<_>>()),
            mean_nu_ad: stats::mean(&reps.iter().map(|a| a.nu_ad as f64).collect::<Vec<_>>()),
        })
        .collect();
    let summary = CampaignSummary {
        config_hash: analysis.config_hash.clone(),
        master_seed: analysis.master_seed,
        runs: records.len(),
        failed: failures.len(),
        e_p: analysis.spectrum.e_p,
        theory_mean_loss: dist.mean(),
        theory_std_loss: dist.variance().sqrt(),
        mean_loss: stats::mean(&losses),
        std_loss: stats::std_dev(&losses),
        mean_fidelity: stats::mean(&fids),
        ks: stats::ks_test(&losses, |x| dist.cdf(x)),
        alpha0: REPORT_ALPHA0,
        adequacy,
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    let hist = histogram(&losses, &dist, 20);
    write_histogram_csv(&dir.join("histogram.csv"), &hist)?;
    let mut w = BufWriter::new(fs::File::create(dir.join("losses.csv"))?);
    writeln!(w, "run_index,loss")?;
    for r in &records {
        writeln!(w, "{},{:e}", r.run_index, r.loss)?;
    }
    w.flush()?;
    if svg {
        fs::write(dir.join("histogram.svg"), histogram_svg(&hist))?;
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Empirical density.
    pub density: f64,
    /// Theoretical pdf at the bin centre.
    pub theory: f64,
}

pub fn histogram(losses: &[f64], dist: &LossDistribution, bins: usize) -> Vec<HistogramBin> {
    let top = losses.iter().copied().fold(dist.quantile(0.999), f64::max);
    let width = top / bins as f64;
    let total = losses.len() as f64;
    (0..bins)
        .map(|b| {
            let lo = b as f64 * width;
            let hi = lo + width;
            let count = losses
                .iter()
                .filter(|&&x| x >= lo && (x < hi || (b + 1 == bins && x <= hi)))
                .count();
            HistogramBin {
                lo,
                hi,
                count,
                density: count as f64 / (total * width),
                theory: dist.pdf(0.5 * (lo + hi)),
            }
        })
        .collect()
}

fn write_histogram_csv(path: &Path, hist: &[HistogramBin]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "bin_lo,bin_hi,count,density,theory_pdf")?;
    for b in hist {
        writeln!(
            w,
            "{:e},{:e},{},{:e},{:e}",
            b.lo, b.hi, b.count, b.density, b.theory
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram bars with the theoretical density as a polyline.
pub fn histogram_svg(hist: &[HistogramBin]) -> String {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let top = hist
        .iter()
        .map(|b| b.density.max(b.theory))
        .fold(0.0, f64::max)
        .max(1e-300);
    let x_max = hist.last().map_or(1.0, |b| b.hi);
    let sx = |x: f64| pad + (w - 2.0 * pad) * x / x_max;
    let sy = |y: f64| h - pad - (h - 2.0 * pad) * y / top;
    let mut svg = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    svg += &format!(
        "<line x1=\"{pad}\" y1=\"{y}\" x2=\"{x}\" y2=\"{y}\" stroke=\"black\"/>\n",
        y = h - pad,
        x = w - pad
    );
    for b in hist {
        svg += &format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#9ab\" stroke=\"#567\"/>\n",
            sx(b.lo),
            sy(b.density),
            sx(b.hi) - sx(b.lo),
            sy(0.0) - sy(b.density)
        );
    }
    let points: Vec<String> = hist
        .iter()
        .map(|b| format!("{:.2},{:.2}", sx(0.5 * (b.lo + b.hi)), sy(b.theory)))
        .collect();
    svg += &format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#c33\" stroke-width=\"2\"/>\n",
        points.join(" ")
    );
    svg += &format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">1 - F (max {:.3e})</text>\n",
        w / 2.0,
        h - 8.0,
        x_max
    );
    svg += "</svg>\n";
    svg
}

/// Q-function of a single-mode truth on the config grid, or the two-mode
/// coordinate wave function `ψ(x_A, x_B)` for two-mode states.
pub fn write_qfunc_csv<W: Write>(exp: &Experiment, out: W) -> Result<()> {
    let grid = exp.config.grid();
    let mut w = BufWriter::new(out);
    match &exp.truth {
        TrueState::Single(_) => {
            writeln!(w, "re,im,q")?;
            for (beta, q) in q_grid(exp)? {
                writeln!(w, "{:.6},{:.6},{:e}", beta.re, beta.im, q)?;
            }
        }
        TrueState::Two(psi) => {
            writeln!(w, "x_a,x_b,re,im,density")?;
            let xs_a = grid.axis(grid.center.re);
            let xs_b = grid.axis(grid.center.im);
            let ha: Vec<Vec<f64>> = xs_a
                .iter()
                .map(|&x| fock::hermite_functions(x, psi.nrows()))
                .collect();
            let hb: Vec<Vec<f64>> = xs_b
                .iter()
                .map(|&x| fock::hermite_functions(x, psi.ncols()))
                .collect();
            for (xa, fa) in xs_a.iter().zip(&ha) {
                for (xb, fb) in xs_b.iter().zip(&hb) {
                    let mut v = C64::new(0.0, 0.0);
                    for a in 0..psi.nrows() {
                        for b in 0..psi.ncols() {
                            v += psi[(a, b)] * (fa[a] * fb[b]);
                        }
                    }
                    writeln!(
                        w,
                        "{xa:.6},{xb:.6},{:e},{:e},{:e}",
                        v.re,
                        v.im,
                        v.norm_sqr()
                    )?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `(β, Q(β))` on the config grid for a single-mode truth.
pub fn q_grid(exp: &Experiment) -> Result<Vec<(C64, f64)>> {
    let rho = exp
        .truth
        .rho()
        .ok_or_else(|| config_err("Q-function grids need a single-mode state"))?;
    let grid = exp.config.grid();
    let re = grid.axis(grid.center.re);
    let im = grid.axis(grid.center.im);
    let betas: Vec<C64> = re
        .iter()
        .flat_map(|&x| im.iter().map(move |&y| C64::new(x, y)))
        .collect();
    let q = fock::q_function(&rho, &betas);
    Ok(betas.into_iter().zip(q).collect())
}
