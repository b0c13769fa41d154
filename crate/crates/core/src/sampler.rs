//! Reproducible multinomial simulation of count records.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::protocol::{MeasurementProtocol, OutcomeLabel};

/// Above this many events per draw the multinomial is sampled as a chain of
/// conditional binomials instead of event-by-event inversion.
pub const INVERSION_LIMIT: u64 = 10_000;

/// The SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeed {
    pub master_seed: u64,
    pub run_index: u64,
}

impl RunSeed {
    pub fn new(master_seed: u64, run_index: u64) -> Self {
        Self {
            master_seed,
            run_index,
        }
    }

    /// `splitmix64(master ⊕ splitmix64(run_index))`.
    pub fn mixed(&self) -> u64 {
        splitmix64(self.master_seed ^ splitmix64(self.run_index))
    }

    /// Independent generator for sub-stream `stream` of this run (one per
    /// phase), so phases can be drawn in any order.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.mixed());
        rng.set_stream(stream);
        rng
    }
}

fn normalised(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = p.iter().find(|&&x| x < -1e-12 || x.is_nan()) {
        return Err(Error::NegativeProbability(bad));
    }
    let clipped: Vec<f64> = p.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NegativeProbability(total));
    }
    Ok(clipped.into_iter().map(|x| x / total).collect())
}

/// Multinomial draw of `n` events over `p` (renormalised) from a generator.
pub fn multinomial_with<R: Rng + ?Sized>(p: &[f64], n: u64, rng: &mut R) -> Result<Vec<u64>> {
    let p = normalised(p)?;
    let mut counts = vec![0u64; p.len()];
    if n <= INVERSION_LIMIT {
        let mut cdf = Vec::with_capacity(p.len());
        let mut acc = 0.0;
        for &x in &p {
            acc += x;
            cdf.push(acc);
        }
        let last_nonzero = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
        for _ in 0..n {
            let u: f64 = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c <= u).min(last_nonzero);
            counts[i] += 1;
        }
    } else {
        let mut left = n;
        let mut mass = 1.0;
        for (i, &x) in p.iter().enumerate() {
            if left == 0 {
                break;
            }
            if x <= 0.0 {
                continue;
            }
            let q = (x / mass).clamp(0.0, 1.0);
            let k = if q >= 1.0 {
                left
            } else {
                Binomial::new(left, q)
                    .map_err(|_| Error::NegativeProbability(q))?
                    .sample(rng)
            };
            counts[i] = k;
            left -= k;
            mass -= x;
        }
        if left > 0 {
            // round-off left a few events unassigned
            let i = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
            counts[i] += left;
        }
    }
    Ok(counts)
}

/// Multinomial draw on stream 0 of `seed`.
pub fn multinomial_sample(p: &[f64], n: u64, seed: RunSeed) -> Result<Vec<u64>> {
    multinomial_with(p, n, &mut seed.rng(0))
}

/// Observed counts of one phase; only non-zero entries are stored, in protocol
/// row order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCounts {
    pub n: u64,
    pub counts: Vec<(OutcomeLabel, u64)>,
}

impl PhaseCounts {
    fn from_draw(labels: impl IntoIterator<Item = OutcomeLabel>, draw: &[u64]) -> Self {
        let counts: Vec<(OutcomeLabel, u64)> = labels
            .into_iter()
            .zip(draw)
            .filter(|(_, &k)| k > 0)
            .map(|(l, &k)| (l, k))
            .collect();
        Self {
            n: draw.iter().sum(),
            counts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub protocol_hash: String,
    pub seed: Option<RunSeed>,
    pub phases: Vec<PhaseCounts>,
}

impl CountRecord {
    pub fn num_phases(&self) -> usize {
        self.phases.len()
    }

    pub fn total(&self) -> u64 {
        self.phases.iter().map(|p| p.n).sum()
    }

    /// Counts mapped to protocol rows; labels the protocol does not list are
    /// pooled into its overflow row.
    pub fn aligned(&self, protocol: &MeasurementProtocol) -> Result<Vec<Vec<(usize, f64)>>> {
        if self.phases.len() != protocol.num_phases() {
            return Err(Error::DimensionMismatch {
                expected: protocol.num_phases(),
                got: self.phases.len(),
            });
        }
        self.phases
            .iter()
            .zip(protocol.phases())
            .map(|(pc, ph)| {
                let mut rows: Vec<(usize, f64)> = Vec::with_capacity(pc.counts.len());
                for (label, k) in &pc.counts {
                    let row = ph.align(label)?;
                    match rows.iter_mut().find(|(r, _)| *r == row) {
                        Some(entry) => entry.1 += *k as f64,
                        None => rows.push((row, *k as f64)),
                    }
                }
                rows.sort_by_key(|&(r, _)| r);
                Ok(rows)
            })
            .collect()
    }

    /// Label-weight lists per phase, the form used by the basis fit.
    pub fn weighted(&self) -> Vec<Vec<(OutcomeLabel, f64)>> {
        self.phases
            .iter()
            .map(|p| {
                p.counts
                    .iter()
                    .map(|(l, k)| (l.clone(), *k as f64))
                    .collect()
            })
            .collect()
    }

    /// CSV with `#` header lines for the protocol hash and seed, then
    /// `phase_index,label,count` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# protocol_hash={}", self.protocol_hash)?;
        if let Some(seed) = self.seed {
            writeln!(out, "# master_seed={}", seed.master_seed)?;
            writeln!(out, "# run_index={}", seed.run_index)?;
        }
        for (j, p) in self.phases.iter().enumerate() {
            writeln!(out, "# phase_total={j}:{}", p.n)?;
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["phase_index", "label", "count"])?;
        for (j, p) in self.phases.iter().enumerate() {
            for (label, k) in &p.counts {
                w.write_record([j.to_string(), label.to_string(), k.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut hash = None;
        let mut master = None;
        let mut run = None;
        let mut totals: Vec<(usize, u64)> = Vec::new();
        let mut body = String::new();
        let mut line = String::new();
        while reader.read_line(&mut line)? > 0 {
            if let Some(meta) = line.trim_end().strip_prefix("# ") {
                let (key, value) = meta
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad header line: {meta}")))?;
                let num = |v: &str| {
                    v.parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad header value: {meta}")))
                };
                match key {
                    "protocol_hash" => hash = Some(value.to_string()),
                    "master_seed" => master = Some(num(value)?),
                    "run_index" => run = Some(num(value)?),
                    "phase_total" => {
                        let (j, n) = value
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("bad phase total: {meta}")))?;
                        totals.push((num(j)? as usize, num(n)?));
                    }
                    _ => {}
                }
            } else {
                body.push_str(&line);
            }
            line.clear();
        }
        let mut phases: Vec<PhaseCounts> = vec![
            PhaseCounts {
                n: 0,
                counts: Vec::new()
            };
            totals.len()
        ];
        for (j, n) in totals {
            phases
                .get_mut(j)
                .ok_or_else(|| Error::Config(format!("phase index {j} out of order")))?
                .n = n;
        }
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        for rec in rdr.records() {
            let rec = rec?;
            let j: usize = rec[0]
                .parse()
                .map_err(|_| Error::Config(format!("bad phase index {}", &rec[0])))?;
            let label: OutcomeLabel = rec[1].parse()?;
            let k: u64 = rec[2]
                .parse()
                .map_err(|_| Error::Config(format!("bad count {}", &rec[2])))?;
            if j >= phases.len() {
                phases.resize(
                    j + 1,
                    PhaseCounts {
                        n: 0,
                        counts: Vec::new(),
                    },
                );
            }
            phases[j].counts.push((label, k));
        }
        for p in &mut phases {
            let sum: u64 = p.counts.iter().map(|(_, k)| k).sum();
            if p.n == 0 {
                p.n = sum;
            } else if p.n != sum {
                return Err(Error::Config(format!(
                    "phase total {} disagrees with counts {sum}",
                    p.n
                )));
            }
        }
        let seed = match (master, run) {
            (Some(m), Some(r)) => Some(RunSeed::new(m, r)),
            _ => None,
        };
        Ok(Self {
            protocol_hash: hash.unwrap_or_default(),
            seed,
            phases,
        })
    }
}

/// One multinomial draw of `n` events per phase from labelled distributions.
pub fn simulate_distributions(
    dists: &[Vec<(OutcomeLabel, f64)>],
    n: u64,
    protocol_hash: &str,
    seed: RunSeed,
) -> Result<CountRecord> {
    let phases = dists
        .iter()
        .enumerate()
        .map(|(j, dist)| {
            let p: Vec<f64> = dist.iter().map(|(_, p)| *p).collect();
            let draw = multinomial_with(&p, n, &mut seed.rng(j as u64))?;
            Ok(PhaseCounts::from_draw(
                dist.iter().map(|(l, _)| l.clone()),
                &draw,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(CountRecord {
        protocol_hash: protocol_hash.to_string(),
        seed: Some(seed),
        phases,
    })
}

/// Simulate the protocol on the in-model state `ρ = c c†`.
pub fn run_protocol_simulation(
    protocol: &MeasurementProtocol,
    c: &DMatrix<C64>,
    seed: RunSeed,
) -> Result<CountRecord> {
    let probs = protocol.outcome_probabilities(c)?;
    let phases = probs
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let draw = multinomial_with(p, protocol.n(), &mut seed.rng(j as u64))?;
            Ok(PhaseCounts::from_draw(protocol.phase(j).labels(), &draw))
        })
        .collect::<Result<_>>()?;
    Ok(CountRecord {
        protocol_hash: protocol.hash(),
        seed: Some(seed),
        phases,
    })
}
