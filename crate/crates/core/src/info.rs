//! Fidelity, the information matrix and the fidelity-loss model it implies.
//!
//! Realification stacks `vec(c)` (column-major) as `[Re; Im]`.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::PurifiedState;
use crate::linalg::{self, C64};
use crate::protocol::MeasurementProtocol;
use crate::sampler::RunSeed;
use crate::stats;

/// Rows with smaller model probability are left out of `H`.
pub const INFO_P_FLOOR: f64 = 1e-14;
/// Eigenvalues below this fraction of the largest count as zero.
pub const ZERO_THRESHOLD: f64 = 1e-6;

const STATE_TOL: f64 = 1e-8;

fn check_state(rho: &DMatrix<C64>, what: &str) -> Result<()> {
    if !rho.is_square() {
        return Err(Error::NotAState(format!("{what} is not square")));
    }
    let herm = linalg::max_abs(&(rho - rho.adjoint()));
    if herm > STATE_TOL {
        return Err(Error::NotAState(format!(
            "{what} is not Hermitian ({herm:.1e})"
        )));
    }
    let tr = linalg::trace(rho).re;
    if (tr - 1.0).abs() > STATE_TOL {
        return Err(Error::NotAState(format!("{what} has trace {tr}")));
    }
    let (vals, _) = linalg::hermitian_eigen(rho);
    let min = vals.last().copied().unwrap_or(0.0);
    if min < -STATE_TOL {
        return Err(Error::NotAState(format!("{what} has eigenvalue {min:.1e}")));
    }
    Ok(())
}

/// `(Tr √(√ρ₀ ρ √ρ₀))²`, clamped to `[0, 1]`.
pub fn fidelity(rho0: &DMatrix<C64>, rho: &DMatrix<C64>) -> Result<f64> {
    check_state(rho0, "rho0")?;
    check_state(rho, "rho")?;
    if rho0.shape() != rho.shape() {
        return Err(Error::DimensionMismatch {
            expected: rho0.nrows(),
            got: rho.nrows(),
        });
    }
    let root = linalg::psd_sqrt(rho0);
    let (vals, _) = linalg::hermitian_eigen(&(&root * rho * &root));
    let f = vals.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>().powi(2);
    Ok(f.clamp(0.0, 1.0))
}

/// `⟨ψ|ρ|ψ⟩` for a normalised ket `ψ`.
pub fn fidelity_pure(psi: &DMatrix<C64>, rho: &DMatrix<C64>) -> Result<f64> {
    check_state(rho, "rho")?;
    let norm = linalg::frobenius_sq(psi);
    if psi.ncols() != 1 || (norm - 1.0).abs() > STATE_TOL {
        return Err(Error::NotAState(format!("ket has norm² {norm}")));
    }
    if psi.nrows() != rho.nrows() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            got: psi.nrows(),
        });
    }
    Ok((psi.adjoint() * rho * psi)[(0, 0)].re.clamp(0.0, 1.0))
}

#[derive(Clone, Debug)]
pub struct InfoMatrix {
    pub h: DMatrix<f64>,
    pub n: u64,
    pub m: usize,
    pub s: usize,
    pub r: usize,
    /// Rows with `0 < p < INFO_P_FLOOR` that were left out.
    pub skipped: usize,
}

/// `H = 2n Σ ṽ_j ṽ_jᵀ / p_j` over all rows of all phases, `v_j = Λ_j c`.
pub fn information_matrix(c: &PurifiedState, protocol: &MeasurementProtocol) -> Result<InfoMatrix> {
    let cm = c.matrix();
    if cm.nrows() != protocol.dim() {
        return Err(Error::DimensionMismatch {
            expected: protocol.dim(),
            got: cm.nrows(),
        });
    }
    let n = protocol.n() as f64;
    let parts: Vec<(DMatrix<f64>, usize)> = protocol
        .phases()
        .par_iter()
        .map(|ph| ph.information(cm, n, INFO_P_FLOOR))
        .collect();
    let mut h = DMatrix::zeros(2 * cm.len(), 2 * cm.len());
    let mut skipped = 0;
    for (part, sk) in parts {
        h += part;
        skipped += sk;
    }
    if skipped > 0 {
        log::warn!(
            "{skipped} outcome rows below p = {INFO_P_FLOOR:e} left out of the information matrix"
        );
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::ZeroProbabilityRow(0.0));
    }
    let h = (&h + h.transpose()) * 0.5;
    Ok(InfoMatrix {
        h,
        n: protocol.n(),
        m: protocol.num_phases(),
        s: cm.nrows(),
        r: cm.ncols(),
        skipped,
    })
}

/// `ν = (2s − r)r − 1`.
pub fn physical_dof(s: usize, r: usize) -> usize {
    (2 * s - r) * r - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfoSpectrum {
    /// All eigenvalues of `H`, descending.
    pub eigenvalues: Vec<f64>,
    pub norm_eigenvalue: f64,
    /// Physical eigenvalues `h_j`, descending.
    pub physical: Vec<f64>,
    /// Near-zero eigenvalues (gauge directions).
    pub gauge: Vec<f64>,
    pub nu: usize,
    pub nu_h: usize,
    /// `|λ_norm − 2nm| / 2nm`.
    pub norm_error: f64,
    /// Physical count equals `ν`.
    pub complete: bool,
    pub s: usize,
    pub r: usize,
    pub n: u64,
    pub m: usize,
}

impl InfoSpectrum {
    /// Sum of the physical eigenvalues.
    pub fn physical_trace(&self) -> f64 {
        self.physical.iter().sum()
    }

    /// Spectrum with the given physical eigenvalues and the exact norm value;
    /// for synthetic checks.
    pub fn synthetic(physical: Vec<f64>, s: usize, r: usize, n: u64, m: usize) -> Self {
        let nu = physical_dof(s, r);
        let norm = 2.0 * n as f64 * m as f64;
        let mut physical = physical;
        physical.sort_by(|a, b| b.total_cmp(a));
        let gauge = vec![0.0; r * r];
        let mut eigenvalues: Vec<f64> = std::iter::once(norm)
            .chain(physical.iter().copied())
            .chain(gauge.iter().copied())
            .collect();
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Self {
            eigenvalues,
            norm_eigenvalue: norm,
            complete: physical.len() == nu,
            physical,
            gauge,
            nu,
            nu_h: nu + 1,
            norm_error: 0.0,
            s,
            r,
            n,
            m,
        }
    }
}

/// Splits the spectrum of `H` into the norm eigenvalue (eigenvector `c̃`), gauge
/// zeros and physical eigenvalues. `H` is deflated along `c̃` so a physical
/// eigenvalue equal to `2nm` does not disturb the split.
pub fn classify_spectrum(info: &InfoMatrix, c: &PurifiedState) -> Result<InfoSpectrum> {
    let ct = linalg::realify(c.matrix());
    if ct.len() != info.h.nrows() {
        return Err(Error::DimensionMismatch {
            expected: info.h.nrows(),
            got: ct.len(),
        });
    }
    let hc = &info.h * &ct;
    let cn = ct.norm_squared();
    let lambda = ct.dot(&hc) / cn;
    let overlap = lambda * cn.sqrt() / (hc.norm() * cn.sqrt()).max(1e-300);
    if !(overlap >= 0.999) {
        return Err(Error::SpectrumClassificationFailed(format!(
            "c̃ is not an eigenvector of H (cosine {overlap:.6})"
        )));
    }
    let (eigenvalues, _) = linalg::symmetric_eigen(&info.h);
    let unit = &ct / cn.sqrt();
    let proj = DMatrix::<f64>::identity(ct.len(), ct.len()) - &unit * unit.transpose();
    let deflated = &proj * &info.h * &proj;
    let (vals, _) = linalg::symmetric_eigen(&((&deflated + deflated.transpose()) * 0.5));
    let cutoff = ZERO_THRESHOLD * eigenvalues[0].max(lambda).max(0.0);
    let mut physical = Vec::new();
    let mut gauge = Vec::new();
    for v in vals {
        if v > cutoff {
            physical.push(v);
        } else {
            gauge.push(v);
        }
    }
    // the deflated direction c̃ itself
    let pos = gauge
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .expect("deflation leaves at least one zero");
    gauge.remove(pos);
    let nu = physical_dof(info.s, info.r);
    let expected = 2.0 * info.n as f64 * info.m as f64;
    Ok(InfoSpectrum {
        eigenvalues,
        norm_eigenvalue: lambda,
        complete: physical.len() == nu,
        physical,
        gauge,
        nu,
        nu_h: nu + 1,
        norm_error: (lambda - expected).abs() / expected,
        s: info.s,
        r: info.r,
        n: info.n,
        m: info.m,
    })
}

/// `1 − F ≈ Σ d_j ξ_j²` with `d_j = 1/(2h_j)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityLossModel {
    pub d: Vec<f64>,
}

impl FidelityLossModel {
    pub fn new(d: Vec<f64>) -> Result<Self> {
        if let Some(&bad) = d.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::NonPositiveEigenvalue(bad));
        }
        if d.is_empty() {
            return Err(Error::NonPositiveDof(0));
        }
        Ok(Self { d })
    }

    pub fn from_spectrum(spec: &InfoSpectrum) -> Result<Self> {
        if let Some(&bad) = spec.physical.iter().find(|h| **h <= 0.0) {
            return Err(Error::NonPositiveEigenvalue(bad));
        }
        Self::new(spec.physical.iter().map(|h| 0.5 / h).collect())
    }

    pub fn nu(&self) -> usize {
        self.d.len()
    }

    pub fn mean(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn variance(&self) -> f64 {
        2.0 * self.d.iter().map(|d| d * d).sum::<f64>()
    }
}

/// Largest number of quadrature panels before falling back to Monte Carlo.
const MAX_PANELS: usize = 400_000;
const FALLBACK_SAMPLES: usize = 1_000_000;

/// Law of `Σ d_j z_j²` for independent standard normal `z_j`.
#[derive(Debug)]
pub struct LossDistribution {
    model: FidelityLossModel,
    scale: f64,
    /// `d_j / max d`, descending.
    unit: Vec<f64>,
    rule: (Vec<f64>, Vec<f64>),
    fallback: OnceLock<Vec<f64>>,
}

impl LossDistribution {
    pub fn new(model: FidelityLossModel) -> Self {
        let scale = model.d.iter().copied().fold(0.0, f64::max);
        let mut unit: Vec<f64> = model.d.iter().map(|d| d / scale).collect();
        unit.sort_by(|a, b| b.total_cmp(a));
        Self {
            model,
            scale,
            unit,
            rule: stats::gauss_legendre(10),
            fallback: OnceLock::new(),
        }
    }

    pub fn model(&self) -> &FidelityLossModel {
        &self.model
    }

    pub fn mean(&self) -> f64 {
        self.model.mean()
    }

    pub fn variance(&self) -> f64 {
        self.model.variance()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let y = x / self.scale;
        let v = match self.unit.len() {
            1 => stats::erf((0.5 * y).sqrt()),
            2 => self.cdf_two(y),
            _ => self.cdf_imhof(y).unwrap_or_else(|| self.cdf_fallback(x)),
        };
        v.clamp(0.0, 1.0)
    }

    /// `P(z₁² + d z₂² ≤ y)` with `v = √(y/d) sin t`.
    fn cdf_two(&self, y: f64) -> f64 {
        let (d1, d2) = (self.unit[0], self.unit[1]);
        let a = (y / d2).sqrt();
        let b = (0.5 * y / d1).sqrt();
        let f = |t: f64| {
            let (s, c) = t.sin_cos();
            a * c * (-0.5 * a * a * s * s).exp() * stats::erf(b * c)
        };
        let panels = 8 + (a.max(b) * 4.0) as usize;
        (2.0 / PI).sqrt() * stats::integrate(f, 0.0, 0.5 * PI, panels.min(4000), &self.rule)
    }

    /// Imhof inversion `P(Q ≤ y) = ½ − (1/π)∫₀^∞ sin θ(u) / (u ρ(u)) du`.
    fn cdf_imhof(&self, y: f64) -> Option<f64> {
        let nu = self.unit.len() as f64;
        let sqrt_prod: f64 = self.unit.iter().map(|d| d.sqrt()).product();
        // crude: |tail beyond U| ≤ 2 / (π ν U^{ν/2} Π√d_j); once θ' ≈ −y/2 the
        // oscillation gives the sharper |tail| ≲ 2 / (π y U^{1+ν/2} Π√d_j)
        let eps = 1e-10;
        let crude = (2.0 / (PI * nu * eps * sqrt_prod)).powf(2.0 / nu);
        let oscillating = (2.0 / (PI * y * eps * sqrt_prod)).powf(1.0 / (1.0 + 0.5 * nu));
        let d_min = self.unit.last().copied().unwrap_or(1.0);
        let upper = crude.min(oscillating.max(20.0 / d_min));
        let rate = 0.5 * (self.unit.iter().sum::<f64>() + y);
        let period = 2.0 * PI / rate;
        let panels = ((upper / (0.5 * period)).ceil() as usize).max(64);
        if panels > MAX_PANELS {
            return None;
        }
        let integrand = |u: f64| {
            if u == 0.0 {
                return 0.5 * (self.unit.iter().sum::<f64>() - y);
            }
            let mut theta = -0.5 * y * u;
            let mut log_rho = 0.0;
            for d in &self.unit {
                let du = d * u;
                theta += 0.5 * du.atan();
                log_rho += 0.25 * (du * du).ln_1p();
            }
            theta.sin() / (u * log_rho.exp())
        };
        Some(0.5 - stats::integrate(integrand, 0.0, upper, panels, &self.rule) / PI)
    }

    fn cdf_fallback(&self, x: f64) -> f64 {
        let samples = self.fallback.get_or_init(|| {
            let mut rng = RunSeed::new(0x6c6f7373, 0).rng(0);
            let mut v: Vec<f64> = (0..FALLBACK_SAMPLES).map(|_| self.draw(&mut rng)).collect();
            v.sort_by(f64::total_cmp);
            v
        });
        samples.partition_point(|s| *s <= x) as f64 / samples.len() as f64
    }

    /// Central difference of the cdf.
    pub fn pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        if self.unit.len() == 1 {
            let d = self.scale;
            return (-0.5 * x / d).exp() / (2.0 * PI * d * x).sqrt();
        }
        let h = 1e-3 * x.min(self.mean());
        ((self.cdf(x + h) - self.cdf((x - h).max(0.0))) / (x + h - (x - h).max(0.0))).max(0.0)
    }

    pub fn quantile(&self, q: f64) -> f64 {
        assert!((0.0..1.0).contains(&q), "quantile level must lie in [0, 1)");
        if q == 0.0 {
            return 0.0;
        }
        let mut hi = self.mean() + 4.0 * self.variance().sqrt();
        while self.cdf(hi) < q {
            hi *= 2.0;
        }
        stats::bisect(|x| self.cdf(x) - q, 0.0, hi, 1e-12)
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.model
            .d
            .iter()
            .map(|d| {
                let z: f64 = rng.sample(StandardNormal);
                d * z * z
            })
            .sum()
    }

    pub fn sample(&self, count: usize, seed: RunSeed) -> Vec<f64> {
        let mut rng = seed.rng(0);
        (0..count).map(|_| self.draw(&mut rng)).collect()
    }

    /// `(loss, pdf, cdf)` on an even grid up to the 0.999 quantile.
    pub fn curve(&self, points: usize) -> Vec<(f64, f64, f64)> {
        let top = self.quantile(0.999);
        (1..=points)
            .map(|i| {
                let x = top * i as f64 / points as f64;
                (x, self.pdf(x), self.cdf(x))
            })
            .collect()
    }

    pub fn write_curve_csv<W: Write>(&self, points: usize, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["loss", "pdf", "cdf"])?;
        for (x, p, c) in self.curve(points) {
            w.write_record([format!("{x:e}"), format!("{p:e}"), format!("{c:.12}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `⟨1 − F⟩ = Σ 1/(2h_j)` over the physical eigenvalues.
pub fn mean_loss(spec: &InfoSpectrum) -> f64 {
    spec.physical.iter().map(|h| 0.5 / h).sum()
}

/// `ν² / (4nm(s − 1))`: the loss of an ideal protocol spreading `2nm(s − 1)`
/// evenly over the `ν` physical directions.
pub fn minimal_mean_loss(s: usize, r: usize, n: u64, m: usize) -> f64 {
    let nu = physical_dof(s, r) as f64;
    nu * nu / (4.0 * n as f64 * m as f64 * (s as f64 - 1.0))
}

/// `e_P = ⟨1 − F⟩_min / ⟨1 − F⟩`.
pub fn protocol_efficiency(
    spec: &InfoSpectrum,
    s: usize,
    r: usize,
    n: u64,
    m: usize,
) -> Result<f64> {
    let nu = physical_dof(s, r);
    if spec.physical.len() != nu {
        return Err(Error::IncompleteProtocol {
            found: spec.physical.len(),
            expected: nu,
        });
    }
    if let Some(&bad) = spec.physical.iter().find(|h| **h <= 0.0) {
        return Err(Error::NonPositiveEigenvalue(bad));
    }
    Ok(minimal_mean_loss(s, r, n, m) / mean_loss(spec))
}

/// Efficiency using the sizes stored in the spectrum.
pub fn efficiency_of(spec: &InfoSpectrum) -> Result<f64> {
    protocol_efficiency(spec, spec.s, spec.r, spec.n, spec.m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<f64>,
    pub norm_eigenvalue: f64,
    pub physical: Vec<f64>,
    pub gauge: Vec<f64>,
    pub nu: usize,
    pub nu_h: usize,
    pub physical_trace: f64,
    pub e_p: f64,
    pub mean_loss: f64,
    pub min_mean_loss: f64,
    pub skipped_rows: usize,
}

impl SpectrumReport {
    pub fn new(spec: &InfoSpectrum, skipped_rows: usize) -> Result<Self> {
        Ok(Self {
            eigenvalues: spec.eigenvalues.clone(),
            norm_eigenvalue: spec.norm_eigenvalue,
            physical: spec.physical.clone(),
            gauge: spec.gauge.clone(),
            nu: spec.nu,
            nu_h: spec.nu_h,
            physical_trace: spec.physical_trace(),
            e_p: efficiency_of(spec)?,
            mean_loss: mean_loss(spec),
            min_mean_loss: minimal_mean_loss(spec.s, spec.r, spec.n, spec.m),
            skipped_rows,
        })
    }
}

/// `‖H c̃ − 2nm c̃‖ / (2nm ‖c̃‖)`.
pub fn norm_eigen_residual(info: &InfoMatrix, c: &PurifiedState) -> f64 {
    let ct: DVector<f64> = linalg::realify(c.matrix());
    let expected = 2.0 * info.n as f64 * info.m as f64;
    (&info.h * &ct - &ct * expected).norm() / (expected * ct.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ONE;
    use crate::protocol::{
        build_protocol, DetectorEfficiency, LocalOscillator, ModeBasis, ProtocolSpec, Statistics,
    };

    fn diag(v: &[f64]) -> DMatrix<C64> {
        DMatrix::from_diagonal(&DVector::from_iterator(
            v.len(),
            v.iter().map(|x| C64::new(*x, 0.0)),
        ))
    }

    #[test]
    fn fidelity_small_cases() {
        let zero = diag(&[1.0, 0.0]);
        assert!((fidelity(&zero, &zero).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity(&zero, &diag(&[0.0, 1.0])).unwrap() < 1e-12);
        assert!((fidelity(&zero, &diag(&[0.9, 0.1])).unwrap() - 0.9).abs() < 1e-12);
        assert!((fidelity(&diag(&[0.9, 0.1]), &zero).unwrap() - 0.9).abs() < 1e-12);
        let ket = DMatrix::from_column_slice(2, 1, &[ONE, C64::new(0.0, 0.0)]);
        assert!((fidelity_pure(&ket, &diag(&[0.9, 0.1])).unwrap() - 0.9).abs() < 1e-12);
        assert!(matches!(
            fidelity(&diag(&[0.5, 0.6]), &zero),
            Err(Error::NotAState(_))
        ));
    }

    #[test]
    fn mixed_state_fidelity_matches_root_formula() {
        // commuting states: F = (Σ √(p_i q_i))²
        let f = fidelity(&diag(&[0.5, 0.3, 0.2]), &diag(&[0.2, 0.2, 0.6])).unwrap();
        let exact = (0.1f64.sqrt() + 0.06f64.sqrt() + 0.12f64.sqrt()).powi(2);
        assert!((f - exact).abs() < 1e-12);
    }

    #[test]
    fn coherent_state_spectrum_structure() {
        let lo = LocalOscillator::new(1.5, 4).unwrap();
        let spec = ProtocolSpec::single(lo, DetectorEfficiency::ideal(), Statistics::Full, 300);
        let proto = build_protocol(&spec, &[ModeBasis::fock(4)]).unwrap();
        let c = PurifiedState::normalized(DMatrix::from_fn(4, 2, |i, j| {
            C64::new(1.0 / (1.0 + i as f64 + j as f64), 0.2 * j as f64)
        }))
        .unwrap();
        let info = information_matrix(&c, &proto).unwrap();
        let sp = classify_spectrum(&info, &c).unwrap();
        assert_eq!(sp.gauge.len(), 4);
        assert!(sp.complete);
        assert!(sp.norm_error < 1e-6);
        assert!(norm_eigen_residual(&info, &c) < 1e-6);
        let e = efficiency_of(&sp).unwrap();
        assert!(e > 0.0 && e <= 1.0 + 1e-9);
        let total: f64 = sp.eigenvalues.iter().sum();
        assert!((total - info.h.trace()).abs() < 1e-6 * total);
    }

    #[test]
    fn reference_eigenvalues_give_expected_efficiency() {
        let sp = InfoSpectrum::synthetic(vec![3334.0, 2907.0, 2093.0, 1666.0], 3, 1, 500, 5);
        let loss = mean_loss(&sp);
        let exact = 0.5 * (1.0 / 3334.0 + 1.0 / 2907.0 + 1.0 / 2093.0 + 1.0 / 1666.0);
        assert!((loss - exact).abs() < 1e-15);
        assert!((minimal_mean_loss(3, 1, 500, 5) - 8.0e-4).abs() < 1e-15);
        let e = efficiency_of(&sp).unwrap();
        assert!((e - 8.0e-4 / exact).abs() < 1e-12);
        let uniform = InfoSpectrum::synthetic(vec![2500.0; 4], 3, 1, 500, 5);
        assert!((efficiency_of(&uniform).unwrap() - 1.0).abs() < 1e-12);
        let short = InfoSpectrum::synthetic(vec![2500.0; 3], 3, 1, 500, 5);
        assert!(matches!(
            efficiency_of(&short),
            Err(Error::IncompleteProtocol { .. })
        ));
    }

    #[test]
    fn loss_cdf_reference_values() {
        let one = LossDistribution::new(FidelityLossModel::new(vec![2e-3]).unwrap());
        assert!((one.cdf(2e-3) - 0.682_689_492_137_086).abs() < 1e-12);
        // equal weights: scaled chi-square with ν degrees of freedom
        for nu in [2usize, 3, 4, 7] {
            let dist = LossDistribution::new(FidelityLossModel::new(vec![1e-3; nu]).unwrap());
            for x in [0.2e-3, 1e-3, 4e-3, 12e-3] {
                let exact = stats::chi2_cdf(x / 1e-3, nu as f64);
                assert!((dist.cdf(x) - exact).abs() < 1e-7, "nu {nu} x {x}");
            }
        }
        let two = LossDistribution::new(FidelityLossModel::new(vec![2.0, 2.0]).unwrap());
        assert!((two.cdf(4.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn unequal_weights_agree_with_simulation() {
        let dist = LossDistribution::new(
            FidelityLossModel::new(vec![3e-4, 1.7e-4, 1.2e-4, 1.5e-4]).unwrap(),
        );
        let xs = dist.sample(200_000, RunSeed::new(9, 0));
        for q in [0.1, 0.5, 0.9] {
            let x = dist.quantile(q);
            let emp = xs.iter().filter(|v| **v <= x).count() as f64 / xs.len() as f64;
            assert!((emp - q).abs() < 5e-3, "q {q}: {emp}");
        }
        let integral = stats::integrate(
            |x| dist.pdf(x),
            1e-12,
            dist.quantile(0.9),
            200,
            &stats::gauss_legendre(5),
        );
        assert!((integral - 0.9).abs() < 1e-4);
    }

    #[test]
    fn wide_spread_stays_on_quadrature() {
        let d: Vec<f64> = (0..16).map(|j| 1e-3 * 0.75f64.powi(j)).collect();
        let dist = LossDistribution::new(FidelityLossModel::new(d).unwrap());
        let xs = dist.sample(4000, RunSeed::new(3, 0));
        let ks = stats::ks_test(&xs, |x| dist.cdf(x));
        assert!(dist.fallback.get().is_none());
        assert!(ks.p_value > 0.01, "{ks:?}");
        let two = LossDistribution::new(FidelityLossModel::new(vec![1e-3, 1e-6]).unwrap());
        assert!((two.cdf(1e-3) - 0.682_689_492).abs() < 1e-3);
    }
}
