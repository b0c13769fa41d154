//! Chi-square adequacy tests on grouped outcome counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::MeasurementProtocol;
use crate::sampler::CountRecord;
use crate::stats;

pub const DEFAULT_MIN_EXPECTED: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdequacyMode {
    /// True state against the data: `ν_ad = n̄ − m`.
    TheoryVsExperiment,
    /// Reconstruction against the data: `ν_ad = n̄ − m − ν`.
    ModelVsExperiment,
    /// Reconstruction against the true state: `ν_ad = ν`.
    TheoryVsModel,
}

impl AdequacyMode {
    pub const ALL: [AdequacyMode; 3] = [
        AdequacyMode::TheoryVsExperiment,
        AdequacyMode::ModelVsExperiment,
        AdequacyMode::TheoryVsModel,
    ];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub rows: Vec<usize>,
    pub expected: f64,
    pub observed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedBins {
    pub phases: Vec<Vec<Bin>>,
}

impl GroupedBins {
    /// Total number of bins `n̄`.
    pub fn n_bar(&self) -> usize {
        self.phases.iter().map(Vec::len).sum()
    }

    pub fn bins_per_phase(&self) -> Vec<usize> {
        self.phases.iter().map(Vec::len).collect()
    }
}

/// Groups rows of each phase in label order: rows are accumulated until the
/// running expected count reaches `min_expected`, and an undersized remainder
/// joins the last closed bin.
pub fn group_bins(
    expected: &[Vec<f64>],
    observed: &[Vec<f64>],
    min_expected: f64,
) -> Result<GroupedBins> {
    if expected.len() != observed.len() {
        return Err(Error::DimensionMismatch {
            expected: expected.len(),
            got: observed.len(),
        });
    }
    let mut phases = Vec::with_capacity(expected.len());
    for (j, (exp, obs)) in expected.iter().zip(observed).enumerate() {
        if exp.len() != obs.len() {
            return Err(Error::DimensionMismatch {
                expected: exp.len(),
                got: obs.len(),
            });
        }
        let total: f64 = exp.iter().sum();
        if total < 2.0 * min_expected {
            return Err(Error::PhaseTooSparse {
                phase: j,
                total,
                required: 2.0 * min_expected,
            });
        }
        let mut bins: Vec<Bin> = Vec::new();
        let mut open = Bin {
            rows: Vec::new(),
            expected: 0.0,
            observed: 0.0,
        };
        for (i, (&e, &o)) in exp.iter().zip(obs).enumerate() {
            open.rows.push(i);
            open.expected += e;
            open.observed += o;
            if open.expected >= min_expected {
                bins.push(std::mem::replace(
                    &mut open,
                    Bin {
                        rows: Vec::new(),
                        expected: 0.0,
                        observed: 0.0,
                    },
                ));
            }
        }
        if !open.rows.is_empty() {
            let last = bins.last_mut().expect("phase total covers one bin");
            last.rows.extend(open.rows);
            last.expected += open.expected;
            last.observed += open.observed;
        }
        phases.push(bins);
    }
    Ok(GroupedBins { phases })
}

/// `Σ (expected − observed)² / expected` over all bins.
pub fn chi2_statistic(bins: &GroupedBins) -> Result<f64> {
    let mut chi2 = 0.0;
    for bin in bins.phases.iter().flatten() {
        if !(bin.expected > 0.0) {
            return Err(Error::ZeroExpectedBin);
        }
        chi2 += (bin.expected - bin.observed).powi(2) / bin.expected;
    }
    Ok(chi2)
}

pub fn degrees_of_freedom(mode: AdequacyMode, n_bar: usize, m: usize, nu: usize) -> Result<usize> {
    let dof = match mode {
        AdequacyMode::TheoryVsExperiment => n_bar as i64 - m as i64,
        AdequacyMode::ModelVsExperiment => n_bar as i64 - m as i64 - nu as i64,
        AdequacyMode::TheoryVsModel => nu as i64,
    };
    if dof <= 0 {
        return Err(Error::NonPositiveDof(dof));
    }
    Ok(dof as usize)
}

/// Weight of `χ²_ν` above `chi2`.
pub fn alpha_crit(chi2: f64, nu_ad: usize) -> f64 {
    stats::chi2_sf(chi2.max(0.0), nu_ad as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdequacyReport {
    pub mode: AdequacyMode,
    pub chi2: f64,
    pub nu_ad: usize,
    pub alpha_crit: f64,
    pub n_bar: usize,
    pub bins_per_phase: Vec<usize>,
}

impl AdequacyReport {
    pub fn adequate(&self, alpha0: f64) -> bool {
        self.alpha_crit > alpha0
    }
}

/// Dense per-row counts aligned to the protocol.
pub fn observed_counts(
    counts: &CountRecord,
    protocol: &MeasurementProtocol,
) -> Result<Vec<Vec<f64>>> {
    let aligned = counts.aligned(protocol)?;
    Ok(aligned
        .iter()
        .enumerate()
        .map(|(j, rows)| {
            let mut dense = vec![0.0; protocol.phase(j).len()];
            for &(r, k) in rows {
                dense[r] += k;
            }
            dense
        })
        .collect())
}

/// Expected counts `n_j p` per phase.
pub fn expected_counts(probabilities: &[Vec<f64>], totals: &[f64]) -> Vec<Vec<f64>> {
    probabilities
        .iter()
        .zip(totals)
        .map(|(p, n)| p.iter().map(|q| q * n).collect())
        .collect()
}

/// Groups on `expected`, evaluates the statistic and its dof and tail weight.
pub fn adequacy_test(
    mode: AdequacyMode,
    expected: &[Vec<f64>],
    observed: &[Vec<f64>],
    nu: usize,
    min_expected: f64,
) -> Result<AdequacyReport> {
    let bins = group_bins(expected, observed, min_expected)?;
    let chi2 = chi2_statistic(&bins)?;
    let n_bar = bins.n_bar();
    let nu_ad = degrees_of_freedom(mode, n_bar, expected.len(), nu)?;
    Ok(AdequacyReport {
        mode,
        chi2,
        nu_ad,
        alpha_crit: alpha_crit(chi2, nu_ad),
        n_bar,
        bins_per_phase: bins.bins_per_phase(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_merging_when_every_row_is_large() {
        let exp = vec![vec![5.0, 7.0, 9.0]];
        let bins = group_bins(&exp, &exp, 5.0).unwrap();
        assert_eq!(bins.n_bar(), 3);
        assert_eq!(chi2_statistic(&bins).unwrap(), 0.0);
    }

    #[test]
    fn small_rows_merge_and_partition() {
        let exp = vec![vec![0.5; 21]];
        let obs = vec![vec![
            1.0, 0.0, 0.0, 2.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0, 1.0,
            0.0, 0.0, 0.0, 1.0,
        ]];
        let bins = group_bins(&exp, &obs, 5.0).unwrap();
        assert_eq!(bins.n_bar(), 2);
        let b = &bins.phases[0][1];
        assert_eq!(b.rows.len(), 11);
        assert!((b.expected - 5.5).abs() < 1e-12 && b.observed == 5.0);
        let total: f64 = bins.phases[0].iter().map(|b| b.observed).sum();
        assert_eq!(total, 10.0);
        let exp = vec![vec![0.5; 24]];
        let bins = group_bins(&exp, &exp, 5.0).unwrap();
        assert_eq!(bins.bins_per_phase(), vec![2]);
        assert_eq!(bins.phases[0][1].rows.len(), 14);
        assert!(matches!(
            group_bins(&[vec![1.0; 9]], &[vec![1.0; 9]], 5.0),
            Err(Error::PhaseTooSparse { .. })
        ));
    }

    #[test]
    fn arithmetic_and_dof() {
        let bins = GroupedBins {
            phases: vec![vec![
                Bin {
                    rows: vec![0],
                    expected: 5.0,
                    observed: 10.0,
                },
                Bin {
                    rows: vec![1],
                    expected: 5.0,
                    observed: 0.0,
                },
            ]],
        };
        assert!((chi2_statistic(&bins).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(
            degrees_of_freedom(AdequacyMode::TheoryVsExperiment, 60, 5, 4).unwrap(),
            55
        );
        assert_eq!(
            degrees_of_freedom(AdequacyMode::ModelVsExperiment, 60, 5, 4).unwrap(),
            51
        );
        assert_eq!(
            degrees_of_freedom(AdequacyMode::TheoryVsModel, 60, 5, 16).unwrap(),
            16
        );
        assert!(matches!(
            degrees_of_freedom(AdequacyMode::ModelVsExperiment, 8, 5, 4),
            Err(Error::NonPositiveDof(-1))
        ));
        assert_eq!(alpha_crit(0.0, 3), 1.0);
        assert!(alpha_crit(1e6, 3) < 1e-300);
    }
}
