//! Monte Carlo engine for the heralded two-node protocol: write, transmit,
//! herald, store, retrieve, interfere and count.
//!
//! Trials are grouped in fixed-size blocks. Each block draws from its own
//! ChaCha stream keyed by analyzer index and block index, so results do not
//! depend on how blocks are spread over threads.

mod hom;
mod readout;
mod sampler;

pub use hom::{
    conditional_g2, g2_records, hom_experiment, G2Conditioning, G2Record, G2Setup, HomField, HomOutcome, HomRun,
};
pub use readout::{sample_pair, ReadoutTable, StoredState, MULTI_SPECTATOR_CAP, PORT_CAP, SPECTATOR_CAP};
pub use sampler::{HeraldEvent, HeraldSampler, HeraldSource};

use crate::analysis::{
    concurrence, estimate_pij_counts, fit_sinusoid, v_mismatch, ConcurrenceEstimate, FitResult, PijEstimate, PijPolicy,
    Quantity,
};
use crate::budget::{herald_stats, Arm, Detector, HeraldStats, LinkParams};
use crate::error::{check_fraction, check_nonneg};
use crate::fock::{heralded_memory, ReadoutBackground, BACKGROUND_COEF};
use crate::lock::{simulate_lock, DualBandParams, InterferometerGeometry, LockLoopConfig};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use readout::FringePolys;
use serde::{Deserialize, Serialize};

/// Seed used when a scenario does not set one.
pub const DEFAULT_SEED: u64 = 20_240_420;
/// Trials per RNG block.
pub const BLOCK_SIZE: u64 = 4096;
/// Lowest total herald probability accepted by the exact engine.
pub const FOCK_MIN_HERALD: f64 = 1e-9;

const HERALD_STREAM: u64 = 1 << 62;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Per-excitation sampling with cached readout amplitudes.
    #[default]
    AnalyticAmplitude,
    /// Herald and readout probabilities from the truncated Fock model.
    FockOracle,
}

/// Whether every trial is simulated or only heralded ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Draw directly from the herald-conditioned distribution; each trial is
    /// heralded.
    #[default]
    Heralded,
    /// Simulate every write attempt; most trials produce no herald.
    Unconditional,
}

/// Distribution of the accumulated herald phase `Δφ`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhaseNoise {
    #[default]
    None,
    /// Gaussian with standard deviation `sigma` in radians.
    Gaussian { sigma: f64 },
    /// Gaussian fixed by its visibility `exp(−σ²/2)`.
    Visibility { v_p: f64 },
    /// Residuals drawn from a simulated lock trajectory (`[lock]` section).
    Lock,
}

/// Lock loop used when the phase noise model is `lock`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockSection {
    pub config: LockLoopConfig,
    pub dual_band: DualBandParams,
    pub geometry: InterferometerGeometry,
    /// Simulated lock time in seconds.
    pub duration: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_read_delay() -> f64 {
    750e-9
}
fn default_background() -> f64 {
    BACKGROUND_COEF
}
fn default_cutoff() -> usize {
    4
}
fn default_herald_trials() -> u64 {
    10_000_000
}
fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    /// Analyzer phases in radians.
    pub theta_list: Vec<f64>,
    pub n_trials_per_theta: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub sampling: Sampling,
    /// Storage time before retrieval. Recorded only; no decay model.
    #[serde(default = "default_read_delay")]
    pub read_delay: f64,
    pub retrieval_efficiency: f64,
    pub local_detector_efficiency: f64,
    /// Dark click probability of each local detector per readout gate.
    #[serde(default)]
    pub local_dark_prob: f64,
    /// Readout background in units of `χ·η_r·(1−η_r)`.
    #[serde(default = "default_background")]
    pub background_coef: f64,
    #[serde(default)]
    pub temporal_mismatch: f64,
    pub pulse_width: f64,
    #[serde(default = "one")]
    pub eta_wo: f64,
    #[serde(default = "one")]
    pub eta_ro: f64,
    #[serde(default)]
    pub phase_noise: PhaseNoise,
    /// Fock cutoff of the exact engine.
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    /// Unconditional trials used to estimate the herald probability.
    #[serde(default = "default_herald_trials")]
    pub herald_trials: u64,
}

fn default_min_heralds() -> u64 {
    100
}
fn default_kappa() -> f64 {
    0.24
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisParams {
    #[serde(default)]
    pub pij_policy: PijPolicy,
    #[serde(default = "default_min_heralds")]
    pub min_heralds: u64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            pij_policy: PijPolicy::Raw,
            min_heralds: default_min_heralds(),
            kappa: default_kappa(),
        }
    }
}

/// A fully resolved simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub distance_km: f64,
    pub link: LinkParams,
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub lock: Option<LockSection>,
    #[serde(default)]
    pub analysis: AnalysisParams,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        let p = &self.protocol;
        if p.theta_list.is_empty() {
            return Err(Error::param("theta_list", "needs at least one phase"));
        }
        if p.theta_list.iter().any(|t| !t.is_finite()) {
            return Err(Error::param("theta_list", "phases must be finite"));
        }
        if p.n_trials_per_theta == 0 {
            return Err(Error::param("n_trials_per_theta", "must be at least 1"));
        }
        check_fraction("retrieval_efficiency", p.retrieval_efficiency)?;
        check_fraction("local_detector_efficiency", p.local_detector_efficiency)?;
        check_fraction("local_dark_prob", p.local_dark_prob)?;
        check_fraction("eta_wo", p.eta_wo)?;
        check_fraction("eta_ro", p.eta_ro)?;
        check_nonneg("background_coef", p.background_coef)?;
        check_nonneg("read_delay", p.read_delay)?;
        check_nonneg("temporal_mismatch", p.temporal_mismatch)?;
        if !(p.pulse_width > 0.0) {
            return Err(Error::param("pulse_width", "must be positive"));
        }
        if !(2..=8).contains(&p.cutoff) {
            return Err(Error::param("cutoff", "must lie in 2..=8"));
        }
        match p.phase_noise {
            PhaseNoise::Gaussian { sigma } => check_nonneg("phase_noise.sigma", sigma)?,
            PhaseNoise::Visibility { v_p } => {
                if !(v_p > 0.0 && v_p <= 1.0) {
                    return Err(Error::param("phase_noise.v_p", "must lie in (0, 1]"));
                }
            }
            PhaseNoise::Lock => {
                let l = self
                    .lock
                    .as_ref()
                    .ok_or_else(|| Error::param("lock", "phase noise model `lock` needs a [lock] section"))?;
                l.config.validate()?;
                l.dual_band.validate()?;
                l.geometry.validate()?;
                if !(l.duration > 0.0) {
                    return Err(Error::param("lock.duration", "must be positive"));
                }
            }
            PhaseNoise::None => {}
        }
        check_nonneg("analysis.kappa", self.analysis.kappa)?;
        Ok(())
    }

    /// Readout-node background of this scenario.
    pub fn readout_background(&self) -> ReadoutBackground {
        let p = &self.protocol;
        let eta_r = p.retrieval_efficiency;
        ReadoutBackground {
            mean: p.background_coef * self.link.chi * eta_r * (1.0 - eta_r),
            eta_local: p.local_detector_efficiency,
            p_dark: p.local_dark_prob,
        }
    }

    /// Amplitude overlap of the two retrieved fields:
    /// `√(η_wo·η_ro)·exp(−(Δt/τ)²)`.
    pub fn mode_overlap(&self) -> Result<f64> {
        let p = &self.protocol;
        Ok((p.eta_wo * p.eta_ro).sqrt() * v_mismatch(p.temporal_mismatch, p.pulse_width)?)
    }
}

/// One simulated trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRecord {
    pub herald: Option<Detector>,
    /// Signal or noise origin of the herald; `None` without a herald and in
    /// the exact engine, which does not resolve individual photons.
    pub herald_source: Option<HeraldSource>,
    pub multi_photon: bool,
    /// Excitation numbers of the measured component, as sampled.
    pub excitations: Option<[u32; 2]>,
    /// Clicks at readout outputs E and F.
    pub readout_clicks: [bool; 2],
    /// Clicks when each node is read out on its own detector.
    pub node_clicks: [bool; 2],
    pub theta: f64,
    pub sampled_dphi: f64,
}

impl TrialRecord {
    fn empty(theta: f64, dphi: f64) -> Self {
        Self {
            herald: None,
            herald_source: None,
            multi_photon: false,
            excitations: None,
            readout_clicks: [false; 2],
            node_clicks: [false; 2],
            theta,
            sampled_dphi: dphi,
        }
    }
}

/// Counts for one analyzer phase and herald detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct FringeCell {
    pub counts_e: u64,
    pub counts_f: u64,
    pub coincidences: u64,
    /// Heralded trials.
    pub trials: u64,
}

/// Which readout output a fringe is taken from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Output {
    E,
    F,
}

/// Aggregated counts of a fringe scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FringeData {
    pub thetas: Vec<f64>,
    /// `cells[θ][detector]`.
    pub cells: Vec<[FringeCell; 2]>,
    /// Write attempts per analyzer phase (equals heralded trials when
    /// sampling is herald-conditioned).
    pub attempts: Vec<u64>,
    /// Node-basis tallies `[n00, n01, n10, n11]` per herald detector.
    pub node_counts: [[u64; 4]; 2],
    /// Herald tallies per detector: single-photon, multi-photon, noise.
    pub herald_classes: [[u64; 3]; 2],
}

impl FringeData {
    fn zeroed(thetas: &[f64]) -> Self {
        Self {
            thetas: thetas.to_vec(),
            cells: vec![[FringeCell::default(); 2]; thetas.len()],
            attempts: vec![0; thetas.len()],
            node_counts: [[0; 4]; 2],
            herald_classes: [[0; 3]; 2],
        }
    }

    fn add(&mut self, theta_index: usize, r: &TrialRecord) {
        self.attempts[theta_index] += 1;
        let Some(d) = r.herald else { return };
        let j = d.index();
        let c = &mut self.cells[theta_index][j];
        c.trials += 1;
        let [e, f] = r.readout_clicks;
        c.counts_e += e as u64;
        c.counts_f += f as u64;
        c.coincidences += (e && f) as u64;
        let [a, b] = r.node_clicks;
        self.node_counts[j][a as usize * 2 + b as usize] += 1;
        let class = match (r.herald_source, r.multi_photon) {
            (Some(HeraldSource::Noise), _) => Some(2),
            (Some(HeraldSource::Signal), true) => Some(1),
            (Some(HeraldSource::Signal), false) => Some(0),
            (None, _) => None,
        };
        if let Some(k) = class {
            self.herald_classes[j][k] += 1;
        }
    }

    /// Merge counts from another scan over the same phases.
    pub fn merge(mut self, other: &FringeData) -> Self {
        for (a, b) in self.cells.iter_mut().zip(&other.cells) {
            for j in 0..2 {
                a[j].counts_e += b[j].counts_e;
                a[j].counts_f += b[j].counts_f;
                a[j].coincidences += b[j].coincidences;
                a[j].trials += b[j].trials;
            }
        }
        for (a, b) in self.attempts.iter_mut().zip(&other.attempts) {
            *a += b;
        }
        for j in 0..2 {
            for k in 0..4 {
                self.node_counts[j][k] += other.node_counts[j][k];
            }
            for k in 0..3 {
                self.herald_classes[j][k] += other.herald_classes[j][k];
            }
        }
        self
    }

    pub fn heralds(&self, d: Detector) -> u64 {
        self.cells.iter().map(|c| c[d.index()].trials).sum()
    }

    /// `(θ, counts, trials)` rows for one detector and output.
    pub fn points(&self, d: Detector, out: Output) -> Vec<(f64, u64, u64)> {
        self.thetas
            .iter()
            .zip(&self.cells)
            .map(|(&t, c)| {
                let c = c[d.index()];
                let k = match out {
                    Output::E => c.counts_e,
                    Output::F => c.counts_f,
                };
                (t, k, c.trials)
            })
            .collect()
    }

    pub fn fit(&self, d: Detector, out: Output) -> Result<FitResult> {
        fit_sinusoid(&self.points(d, out))
    }

    pub fn pij(&self, d: Detector, policy: PijPolicy, min_heralds: u64) -> Result<PijEstimate> {
        estimate_pij_counts(self.node_counts[d.index()], policy, min_heralds)
    }

    /// Monte Carlo estimate of the herald probability per write attempt,
    /// for unconditional scans.
    pub fn herald_rate(&self) -> Quantity {
        let n: u64 = self.attempts.iter().sum();
        let h = self.heralds(Detector::D1) + self.heralds(Detector::D2);
        binomial(h, n)
    }
}

fn binomial(k: u64, n: u64) -> Quantity {
    if n == 0 {
        return Quantity::new(0.0, 0.0);
    }
    let p = k as f64 / n as f64;
    Quantity::new(p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Herald tallies from unconditional trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeraldCount {
    pub trials: u64,
    pub heralds: [u64; 2],
}

impl HeraldCount {
    pub fn p_ent(&self) -> Quantity {
        binomial(self.heralds[0] + self.heralds[1], self.trials)
    }

    pub fn per_detector(&self, d: Detector) -> Quantity {
        binomial(self.heralds[d.index()], self.trials)
    }
}

#[derive(Debug, Clone)]
enum PhaseSource {
    Fixed,
    Gaussian(Normal<f64>),
    Samples(Vec<f64>),
}

impl PhaseSource {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PhaseSource::Fixed => 0.0,
            PhaseSource::Gaussian(n) => n.sample(rng),
            PhaseSource::Samples(v) => v[rng.random_range(0..v.len())],
        }
    }
}

#[derive(Debug, Clone)]
struct FockTables {
    herald: [f64; 2],
    polys: [FringePolys; 2],
    /// Node-basis pattern probabilities `[p00, p01, p10, p11]`.
    node: [[f64; 4]; 2],
}

#[derive(Debug, Clone)]
enum Core {
    Amplitude {
        sampler: HeraldSampler,
        table: ReadoutTable,
    },
    Fock(FockTables),
}

/// A scenario prepared for sampling.
#[derive(Debug, Clone)]
pub struct Simulator {
    scenario: Scenario,
    stats: HeraldStats,
    background: ReadoutBackground,
    phase: PhaseSource,
    core: Core,
}

fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn blocks(n: u64) -> impl Iterator<Item = (u64, u64)> {
    let count = n.div_ceil(BLOCK_SIZE);
    (0..count).map(move |b| (b, BLOCK_SIZE.min(n - b * BLOCK_SIZE)))
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let stats = herald_stats(&scenario.link)?;
        let p = &scenario.protocol;
        let background = scenario.readout_background();
        let eta = p.retrieval_efficiency * p.local_detector_efficiency;
        let overlap = scenario.mode_overlap()?;
        let phase = match p.phase_noise {
            PhaseNoise::None => PhaseSource::Fixed,
            PhaseNoise::Gaussian { sigma: 0.0 } => PhaseSource::Fixed,
            PhaseNoise::Gaussian { sigma } => PhaseSource::Gaussian(gaussian(sigma)?),
            PhaseNoise::Visibility { v_p } => {
                let sigma = (-2.0 * v_p.ln()).max(0.0).sqrt();
                if sigma == 0.0 {
                    PhaseSource::Fixed
                } else {
                    PhaseSource::Gaussian(gaussian(sigma)?)
                }
            }
            PhaseNoise::Lock => {
                let l = scenario.lock.as_ref().expect("validated");
                let traj = simulate_lock(&l.config, &l.dual_band, &l.geometry, l.duration, l.seed)?;
                let v: Vec<f64> = traj.samples.iter().map(|s| s.residual_phase).collect();
                if v.is_empty() {
                    return Err(Error::InsufficientData("empty lock trajectory".into()));
                }
                PhaseSource::Samples(v)
            }
        };
        let core = match p.engine {
            Engine::AnalyticAmplitude => {
                let sampler = HeraldSampler::new(&scenario.link, &stats)?;
                let table = ReadoutTable::new(sampler.transmission(), eta, overlap, background)?;
                Core::Amplitude { sampler, table }
            }
            Engine::FockOracle => Core::Fock(fock_tables(scenario, &stats, eta, overlap, background)?),
        };
        Ok(Self {
            scenario: scenario.clone(),
            stats,
            background,
            phase,
            core,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn herald_stats(&self) -> &HeraldStats {
        &self.stats
    }

    /// Herald probability per write attempt used by the engine.
    pub fn engine_herald_probability(&self) -> [f64; 2] {
        match &self.core {
            Core::Amplitude { .. } => self.stats.herald_prob,
            Core::Fock(t) => t.herald,
        }
    }

    /// Simulate one trial at analyzer phase `theta`.
    pub fn run_trial<R: Rng + ?Sized>(&self, theta: f64, rng: &mut R) -> TrialRecord {
        let dphi = self.phase.draw(rng);
        let phi = theta + dphi;
        let unconditional = self.scenario.protocol.sampling == Sampling::Unconditional;
        match &self.core {
            Core::Amplitude { sampler, table } => {
                let ev = if unconditional {
                    sampler.sample_unconditional(rng)
                } else {
                    sampler.sample_heralded(rng)
                };
                let Some(ev) = ev else {
                    return TrialRecord::empty(theta, dphi);
                };
                let readout_clicks = table.sample_clicks(ev.state, phi, rng);
                let (node_clicks, n) = table.sample_node_clicks(ev.state, rng);
                TrialRecord {
                    herald: Some(ev.detector),
                    herald_source: Some(ev.source),
                    multi_photon: ev.multi_photon,
                    excitations: Some(n),
                    readout_clicks,
                    node_clicks,
                    theta,
                    sampled_dphi: dphi,
                }
            }
            Core::Fock(t) => {
                let total = t.herald[0] + t.herald[1];
                let u: f64 = rng.random();
                let j = if unconditional {
                    if u < t.herald[0] {
                        0
                    } else if u < total {
                        1
                    } else {
                        return TrialRecord::empty(theta, dphi);
                    }
                } else if u * total < t.herald[0] {
                    0
                } else {
                    1
                };
                let readout_clicks = sample_pair(self.background.apply(t.polys[j].eval(phi)), rng);
                let v: f64 = rng.random();
                let node = t.node[j];
                let k = if v < node[0] {
                    0
                } else if v < node[0] + node[1] {
                    1
                } else if v < node[0] + node[1] + node[2] {
                    2
                } else {
                    3
                };
                TrialRecord {
                    herald: Some(Detector::from_index(j)),
                    herald_source: None,
                    multi_photon: false,
                    excitations: None,
                    readout_clicks,
                    node_clicks: [k >= 2, k % 2 == 1],
                    theta,
                    sampled_dphi: dphi,
                }
            }
        }
    }

    fn run_block(&self, theta_index: usize, block: u64, count: u64, mut sink: impl FnMut(&TrialRecord)) {
        let seed = self.scenario.protocol.seed;
        let mut rng = block_rng(seed, ((theta_index as u64) << 32) | block);
        let theta = self.scenario.protocol.theta_list[theta_index];
        for _ in 0..count {
            let r = self.run_trial(theta, &mut rng);
            sink(&r);
        }
    }

    /// Run `n_trials_per_theta` trials at every analyzer phase.
    pub fn run_fringe_scan(&self) -> FringeData {
        self.run_fringe_scan_with(self.scenario.protocol.n_trials_per_theta)
    }

    pub fn run_fringe_scan_with(&self, trials_per_theta: u64) -> FringeData {
        let thetas = &self.scenario.protocol.theta_list;
        let jobs: Vec<(usize, u64, u64)> = (0..thetas.len())
            .flat_map(|i| blocks(trials_per_theta).map(move |(b, n)| (i, b, n)))
            .collect();
        jobs.par_iter()
            .map(|&(i, b, n)| {
                let mut part = FringeData::zeroed(thetas);
                self.run_block(i, b, n, |r| part.add(i, r));
                part
            })
            .reduce(|| FringeData::zeroed(thetas), |a, b| a.merge(&b))
    }

    /// The trial records aggregated by [`Simulator::run_fringe_scan`] at one
    /// analyzer phase, in trial order.
    pub fn trial_records(&self, theta_index: usize) -> Result<Vec<TrialRecord>> {
        let p = &self.scenario.protocol;
        if theta_index >= p.theta_list.len() {
            return Err(Error::param("theta_index", "outside the analyzer list"));
        }
        let mut out = Vec::with_capacity(p.n_trials_per_theta as usize);
        for (b, n) in blocks(p.n_trials_per_theta) {
            self.run_block(theta_index, b, n, |r| out.push(*r));
        }
        Ok(out)
    }

    /// Count heralds over `trials` unconditional write attempts, without
    /// readout.
    pub fn count_heralds(&self, trials: u64) -> HeraldCount {
        let seed = self.scenario.protocol.seed;
        let jobs: Vec<(u64, u64)> = blocks(trials).collect();
        let heralds = jobs
            .par_iter()
            .map(|&(b, n)| {
                let mut rng = block_rng(seed, HERALD_STREAM | b);
                let mut h = [0u64; 2];
                for _ in 0..n {
                    let d = match &self.core {
                        Core::Amplitude { sampler, .. } => sampler.sample_unconditional(&mut rng).map(|e| e.detector),
                        Core::Fock(t) => {
                            let u: f64 = rng.random();
                            if u < t.herald[0] {
                                Some(Detector::D1)
                            } else if u < t.herald[0] + t.herald[1] {
                                Some(Detector::D2)
                            } else {
                                None
                            }
                        }
                    };
                    if let Some(d) = d {
                        h[d.index()] += 1;
                    }
                }
                h
            })
            .reduce(|| [0, 0], |a, b| [a[0] + b[0], a[1] + b[1]]);
        HeraldCount { trials, heralds }
    }
}

fn gaussian(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::param("phase_noise.sigma", e.to_string()))
}

fn fock_tables(
    s: &Scenario,
    stats: &HeraldStats,
    eta: f64,
    overlap: f64,
    background: ReadoutBackground,
) -> Result<FockTables> {
    let link = &s.link;
    let cutoff = s.protocol.cutoff;
    let t_arm = [Arm::A, Arm::B].map(|a| link.splitter_input(a));
    let eta_det = [link.detector_d1.efficiency, link.detector_d2.efficiency];
    let mut herald = [0.0; 2];
    let mut polys = Vec::with_capacity(2);
    let mut node = [[0.0; 4]; 2];
    let nf = background.node_factor();
    for j in 0..2 {
        let (p, mem) = match heralded_memory(link.chi, t_arm, eta_det, stats.noise_click_prob, 0.0, j, cutoff) {
            Ok(x) => x,
            Err(Error::Degenerate(_)) => {
                return Err(Error::Degenerate(format!(
                    "exact engine needs herald probability >= {FOCK_MIN_HERALD:e}"
                )))
            }
            Err(e) => return Err(e),
        };
        herald[j] = p;
        polys.push(FringePolys::new(&mem, eta, overlap, cutoff)?);
        let pops = mem.populations();
        let norm: f64 = pops.iter().sum();
        let d = cutoff + 1;
        let mut none_a = 0.0;
        let mut none_b = 0.0;
        let mut none_ab = 0.0;
        for (i, w) in pops.iter().enumerate() {
            let (na, nb) = (i / d, i % d);
            let sa = (1.0 - eta).powi(na as i32) * nf;
            let sb = (1.0 - eta).powi(nb as i32) * nf;
            none_a += w * sa;
            none_b += w * sb;
            none_ab += w * sa * sb;
        }
        let (none_a, none_b, none_ab) = (none_a / norm, none_b / norm, none_ab / norm);
        node[j] = [
            none_ab,
            none_a - none_ab,
            none_b - none_ab,
            1.0 - none_a - none_b + none_ab,
        ];
    }
    if herald[0] + herald[1] < FOCK_MIN_HERALD {
        return Err(Error::Degenerate(format!(
            "exact engine needs herald probability >= {FOCK_MIN_HERALD:e}"
        )));
    }
    let polys: [FringePolys; 2] = polys.try_into().map_err(|_| Error::InvalidState("poly table".into()))?;
    Ok(FockTables { herald, polys, node })
}

/// Convenience wrapper: prepare and run one scenario's fringe scan.
pub fn run_fringe_scan(s: &Scenario) -> Result<FringeData> {
    Ok(Simulator::new(s)?.run_fringe_scan())
}

/// Visibility, `p_ij` and concurrence for one herald detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DetectorSummary {
    pub heralds: u64,
    pub visibility: Quantity,
    pub pij: PijEstimate,
    pub concurrence: ConcurrenceEstimate,
}

/// One preset's row of a campaign.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignRow {
    pub preset: String,
    pub distance_km: f64,
    pub fiber_loss_db: f64,
    pub seed: u64,
    /// Closed-form herald probability per trial.
    pub p_ent_analytic: f64,
    /// Monte Carlo herald probability from unconditional trials.
    pub p_ent_mc: Quantity,
    pub snr: [f64; 2],
    pub detectors: [DetectorSummary; 2],
}

/// Analyse a finished scan for one herald detector.
pub fn summarize_detector(s: &Scenario, data: &FringeData, d: Detector) -> Result<DetectorSummary> {
    let fit = data.fit(d, Output::E)?;
    let visibility = Quantity::new(fit.visibility, fit.visibility_sigma);
    let pij = data.pij(d, s.analysis.pij_policy, s.analysis.min_heralds)?;
    let c = concurrence([pij.p00, pij.p01, pij.p10, pij.p11], visibility)?;
    Ok(DetectorSummary {
        heralds: data.heralds(d),
        visibility,
        pij,
        concurrence: c,
    })
}

/// Run every preset and collect one row each. Presets with zero trials per
/// phase are skipped.
pub fn run_campaign(presets: &[Scenario]) -> Result<Vec<CampaignRow>> {
    Ok(run_campaign_with_data(presets)?
        .into_iter()
        .map(|(row, _)| row)
        .collect())
}

/// [`run_campaign`] that also returns each preset's fringe scan.
pub fn run_campaign_with_data(presets: &[Scenario]) -> Result<Vec<(CampaignRow, FringeData)>> {
    presets
        .iter()
        .filter(|s| s.protocol.n_trials_per_theta > 0)
        .map(|s| {
            let sim = Simulator::new(s)?;
            let data = sim.run_fringe_scan();
            let count = sim.count_heralds(s.protocol.herald_trials);
            let detectors = [
                summarize_detector(s, &data, Detector::D1)?,
                summarize_detector(s, &data, Detector::D2)?,
            ];
            let row = CampaignRow {
                preset: s.name.clone(),
                distance_km: s.distance_km,
                fiber_loss_db: s.link.total_loss_db(),
                seed: s.protocol.seed,
                p_ent_analytic: sim.herald_stats().p_ent,
                p_ent_mc: count.p_ent(),
                snr: sim.herald_stats().snr,
                detectors,
            };
            Ok((row, data))
        })
        .collect()
}
