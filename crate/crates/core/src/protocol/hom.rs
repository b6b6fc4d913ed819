//! Two-photon interference of the node fields and heralded autocorrelation.

use super::{block_rng, blocks, Engine, Scenario};
use crate::analysis::{hom_g2, Quantity};
use crate::error::{check_fraction, check_nonneg};
use crate::fock::{ModeId, TruncatedState};
use crate::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const HOM_STREAM: u64 = 1 << 61;
const G2_STREAM: u64 = 1 << 60;
const HOM_CUTOFF: usize = 4;
const BATCHES: u64 = 32;

/// Field sent to the HOM splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HomField {
    WriteOut,
    ReadOut,
}

/// Settings of a HOM measurement between the two nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomRun {
    pub field: HomField,
    /// Heralded autocorrelation of each node's field.
    pub g2_a: f64,
    pub g2_b: f64,
    /// Intensity of node B relative to node A.
    pub zeta: f64,
    /// Mean photon number of node A's field at the splitter.
    pub mean_photon: f64,
    pub trials: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomOutcome {
    pub g2_hom: Quantity,
    /// `(g²_A + ζ²g²_B + 2(1−η)ζ)/(1+ζ)²` at the same inputs.
    pub closed_form: f64,
    pub eta: f64,
}

/// Photon-number distribution `[p0, p1, p2]` with mean `mu` and
/// `g² = 2·p2/mu²`.
fn two_photon_source(mu: f64, g2: f64) -> Result<[f64; 3]> {
    let p2 = 0.5 * g2 * mu * mu;
    let p1 = mu - 2.0 * p2;
    let p0 = 1.0 - p1 - p2;
    if p1 < 0.0 || p0 < 0.0 {
        return Err(Error::param(
            "mean_photon",
            format!("cannot realize g2 = {g2} at mean {mu}"),
        ));
    }
    Ok([p0, p1, p2])
}

fn diagonal_state(p: [f64; 3]) -> Result<TruncatedState> {
    let mut m = DMatrix::from_element(HOM_CUTOFF + 1, HOM_CUTOFF + 1, Complex64::new(0.0, 0.0));
    for (i, &x) in p.iter().enumerate() {
        m[(i, i)] = Complex64::new(x, 0.0);
    }
    TruncatedState::from_matrix(1, HOM_CUTOFF, m, 0.0)
}

fn hom_fock(pa: [f64; 3], pb: [f64; 3], eta: f64) -> Result<f64> {
    let vac = TruncatedState::vacuum(1, HOM_CUTOFF)?;
    // modes: node A, node B, and the orthogonal partners of each
    let s = diagonal_state(pa)?
        .tensor(&diagonal_state(pb)?)?
        .tensor(&vac)?
        .tensor(&vac)?
        .beam_splitter(ModeId(1), ModeId(3), eta, 0.0)?
        .beam_splitter(ModeId(0), ModeId(1), 0.5, 0.0)?
        .beam_splitter(ModeId(2), ModeId(3), 0.5, 0.0)?;
    let mut ncd = 0.0;
    for c in [0, 2] {
        for d in [1, 3] {
            ncd += s.cross_moment(ModeId(c), ModeId(d))?;
        }
    }
    let nc = s.factorial_moment(ModeId(0), 1)? + s.factorial_moment(ModeId(2), 1)?;
    let nd = s.factorial_moment(ModeId(1), 1)? + s.factorial_moment(ModeId(3), 1)?;
    if nc * nd <= 0.0 {
        return Err(Error::Degenerate("no light at the HOM outputs".into()));
    }
    Ok(ncd / (nc * nd))
}

/// Output distribution `P(k photons in C)` for `m` and `n` photons entering
/// the same mode from the two sides of a balanced splitter.
fn hom_table() -> Result<Vec<Vec<f64>>> {
    let mut table = Vec::new();
    for m in 0..=2 {
        for n in 0..=2 {
            let s = TruncatedState::fock(&[m, n], HOM_CUTOFF)?.beam_splitter(ModeId(0), ModeId(1), 0.5, 0.0)?;
            let pops = s.populations();
            let d = HOM_CUTOFF + 1;
            let mut out = vec![0.0; m + n + 1];
            for (i, w) in pops.iter().enumerate() {
                let k = i / d;
                if k <= m + n {
                    out[k] += w;
                }
            }
            table.push(out);
        }
    }
    Ok(table)
}

fn draw3<R: Rng + ?Sized>(p: &[f64; 3], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    if u < p[0] {
        0
    } else if u < p[0] + p[1] {
        1
    } else {
        2
    }
}

fn pick<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.random();
    for (i, &w) in p.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    p.len() - 1
}

/// Interfere the two nodes' fields on a balanced splitter and estimate
/// `g²_HOM = ⟨n_C n_D⟩ / (⟨n_C⟩⟨n_D⟩)`.
///
/// The indistinguishability comes from the scenario (`eta_wo` or `eta_ro`).
/// The exact engine evaluates the moments on the truncated Fock state; the
/// amplitude engine samples photon numbers and mode labels.
pub fn hom_experiment(s: &Scenario, run: &HomRun) -> Result<HomOutcome> {
    if !(run.zeta > 0.0) || !run.zeta.is_finite() {
        return Err(Error::param("zeta", "must be positive"));
    }
    check_nonneg("g2_a", run.g2_a)?;
    check_nonneg("g2_b", run.g2_b)?;
    check_fraction("mean_photon", run.mean_photon)?;
    let eta = match run.field {
        HomField::WriteOut => s.protocol.eta_wo,
        HomField::ReadOut => s.protocol.eta_ro,
    };
    check_fraction("eta", eta)?;
    let pa = two_photon_source(run.mean_photon, run.g2_a)?;
    let pb = two_photon_source(run.zeta * run.mean_photon, run.g2_b)?;
    let closed_form = hom_g2(run.g2_a, run.g2_b, eta, run.zeta);
    let g2_hom = match s.protocol.engine {
        Engine::FockOracle => Quantity::exact(hom_fock(pa, pb, eta)?),
        Engine::AnalyticAmplitude => hom_monte_carlo(pa, pb, eta, run.trials, s.protocol.seed)?,
    };
    Ok(HomOutcome {
        g2_hom,
        closed_form,
        eta,
    })
}

fn hom_monte_carlo(pa: [f64; 3], pb: [f64; 3], eta: f64, trials: u64, seed: u64) -> Result<Quantity> {
    if trials < BATCHES {
        return Err(Error::InsufficientData(format!("HOM needs at least {BATCHES} trials")));
    }
    let table = hom_table()?;
    let per_batch = trials / BATCHES;
    let sums: Vec<[f64; 3]> = (0..BATCHES)
        .into_par_iter()
        .map(|batch| {
            let mut acc = [0.0; 3];
            for (b, n) in blocks(per_batch) {
                let mut rng = block_rng(seed, HOM_STREAM | (batch << 32) | b);
                for _ in 0..n {
                    let m = draw3(&pa, &mut rng);
                    let nb = draw3(&pb, &mut rng);
                    let common = (0..nb).filter(|_| rng.random::<f64>() < eta).count();
                    let mut c = pick(&table[m * 3 + common], &mut rng);
                    let mut d = m + common - c;
                    for _ in common..nb {
                        if rng.random::<bool>() {
                            c += 1;
                        } else {
                            d += 1;
                        }
                    }
                    acc[0] += c as f64;
                    acc[1] += d as f64;
                    acc[2] += (c * d) as f64;
                }
            }
            acc
        })
        .collect();
    let ratio = |a: &[f64; 3]| a[2] * per_batch as f64 / (a[0] * a[1]);
    let total = sums
        .iter()
        .fold([0.0; 3], |t, a| [t[0] + a[0], t[1] + a[1], t[2] + a[2]]);
    if total[0] * total[1] <= 0.0 {
        return Err(Error::InsufficientData("no photons reached the HOM outputs".into()));
    }
    let n = (per_batch * BATCHES) as f64;
    let g = total[2] * n / (total[0] * total[1]);
    let batch_vals: Vec<f64> = sums.iter().filter(|a| a[0] * a[1] > 0.0).map(ratio).collect();
    let k = batch_vals.len() as f64;
    let mean = batch_vals.iter().sum::<f64>() / k;
    let var = batch_vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
    Ok(Quantity::new(g, (var / k).sqrt()))
}

/// Which field is split onto two detectors and which one conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum G2Conditioning {
    /// Write-out photons conditioned on a read-out click.
    WriteOnRead,
    /// Read-out photons conditioned on a write-out click.
    ReadOnWrite,
}

/// Clicks of the two detectors behind a balanced splitter on each field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct G2Record {
    pub write: [bool; 2],
    pub read: [bool; 2],
}

/// Single-node source for autocorrelation runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2Setup {
    pub chi: f64,
    /// Detection efficiency of the write-out field.
    pub eta_write: f64,
    /// Retrieval times detection efficiency of the read-out field.
    pub eta_read: f64,
    /// Mean detected thermal background photons per trial on each field.
    #[serde(default)]
    pub write_noise: f64,
    #[serde(default)]
    pub read_noise: f64,
}

impl G2Setup {
    /// Single node before conversion: 780 nm write-out detection, retrieval
    /// times local detection on the read-out side, and a thermal write-out
    /// background sized so the heralded write-out autocorrelation lands near
    /// the measured 0.377.
    pub fn calibrated() -> Self {
        Self {
            chi: 0.06,
            eta_write: 0.5,
            eta_read: 0.0875,
            write_noise: 0.07,
            read_noise: 0.0,
        }
    }
}

fn geometric_mean<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let q = mean / (1.0 + mean);
    let u = 1.0 - rng.random::<f64>();
    (u.ln() / q.ln()).floor().min(1e6) as u32
}

fn split<R: Rng + ?Sized>(photons: u32, rng: &mut R) -> [bool; 2] {
    let mut out = [false; 2];
    for _ in 0..photons {
        out[rng.random::<bool>() as usize] = true;
    }
    out
}

/// Simulate `trials` write/read cycles of one node and record the split
/// click patterns of both fields.
pub fn g2_records(setup: &G2Setup, trials: u64, seed: u64) -> Result<Vec<G2Record>> {
    if !(0.0..1.0).contains(&setup.chi) {
        return Err(Error::param("chi", "must lie in [0, 1)"));
    }
    check_fraction("eta_write", setup.eta_write)?;
    check_fraction("eta_read", setup.eta_read)?;
    check_nonneg("write_noise", setup.write_noise)?;
    check_nonneg("read_noise", setup.read_noise)?;
    let chunks: Vec<Vec<G2Record>> = blocks(trials)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(b, n)| {
            let mut rng = block_rng(seed, G2_STREAM | b);
            (0..n)
                .map(|_| {
                    let pairs = geometric_mean(setup.chi / (1.0 - setup.chi), &mut rng);
                    let mut w = geometric_mean(setup.write_noise, &mut rng);
                    let mut r = geometric_mean(setup.read_noise, &mut rng);
                    for _ in 0..pairs {
                        w += (rng.random::<f64>() < setup.eta_write) as u32;
                        r += (rng.random::<f64>() < setup.eta_read) as u32;
                    }
                    G2Record {
                        write: split(w, &mut rng),
                        read: split(r, &mut rng),
                    }
                })
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().flatten().collect())
}

/// Heralded autocorrelation `N·N12 / (N1·N2)` of the split field over the
/// trials where the conditioning field clicked.
pub fn conditional_g2(records: impl IntoIterator<Item = G2Record>, conditioning: G2Conditioning) -> Result<Quantity> {
    let (mut n, mut n1, mut n2, mut n12) = (0u64, 0u64, 0u64, 0u64);
    for r in records {
        let (cond, split) = match conditioning {
            G2Conditioning::WriteOnRead => (r.read, r.write),
            G2Conditioning::ReadOnWrite => (r.write, r.read),
        };
        if !(cond[0] || cond[1]) {
            continue;
        }
        n += 1;
        n1 += split[0] as u64;
        n2 += split[1] as u64;
        n12 += (split[0] && split[1]) as u64;
    }
    if n == 0 {
        return Err(Error::InsufficientData("no conditioning events".into()));
    }
    if n1 == 0 || n2 == 0 {
        return Err(Error::InsufficientData("no clicks on the split field".into()));
    }
    let scale = n as f64 / (n1 as f64 * n2 as f64);
    let g = n12 as f64 * scale;
    let sigma = if n12 > 0 {
        g * (1.0 / n12 as f64 + 1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt()
    } else {
        scale
    };
    Ok(Quantity::new(g, sigma))
}
