//! Herald sampling for the amplitude engine.
//!
//! Each node emits a geometric number of write-out photons; those lost
//! before the splitter stay behind as spectator excitations, the survivors
//! interfere as bosons on the splitter and each port is detected with its
//! own efficiency and noise. Given the port counts the memories are left in
//! a pure state, so multi-photon heralds keep their coherence.

use super::readout::StoredState;
use crate::budget::{Arm, Detector, HeraldStats, LinkParams};
use crate::fock::{binomial, factorial};
use crate::Result;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Largest number of photons reaching the splitter tabulated for
/// conditioned sampling. The weight left out is of order `χ^(cap+1)`.
const SURVIVOR_CAP: u32 = 10;

/// Why a detector clicked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeraldSource {
    Signal,
    Noise,
}

/// A sampled herald and the memory state it leaves behind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeraldEvent {
    pub detector: Detector,
    pub source: HeraldSource,
    /// Two or more photons were detected at the heralding detector.
    pub multi_photon: bool,
    pub state: StoredState,
}

/// One conditioned herald outcome before the spectators are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Outcome {
    survivors: [u32; 2],
    ports: [u32; 2],
    source: HeraldSource,
    multi: bool,
}

/// Source, routing and class tables derived from a link budget.
#[derive(Debug, Clone)]
pub struct HeraldSampler {
    chi: f64,
    /// Transmission from each node to the splitter.
    transmission: [f64; 2],
    efficiency: [f64; 2],
    noise: [f64; 2],
    /// Per-trial herald probability for each detector.
    herald: [f64; 2],
    /// Per-excitation probability of being lost before the splitter.
    lost_q: [f64; 2],
    /// Cumulative weights of the herald outcomes at each detector.
    outcomes: [Vec<(f64, Outcome)>; 2],
}

fn geometric<R: Rng + ?Sized>(q: f64, rng: &mut R) -> u32 {
    if q <= 0.0 {
        return 0;
    }
    // inversion on (0, 1]
    let u = 1.0 - rng.random::<f64>();
    let n = (u.ln() / q.ln()).floor();
    if n >= u32::MAX as f64 {
        u32::MAX
    } else {
        n as u32
    }
}

fn neg_binomial<R: Rng + ?Sized>(r: u32, q: f64, rng: &mut R) -> u32 {
    (0..r).map(|_| geometric(q, rng)).fold(0u32, |a, b| a.saturating_add(b))
}

fn thin<R: Rng + ?Sized>(n: u32, p: f64, rng: &mut R) -> u32 {
    (0..n).filter(|_| rng.random::<f64>() < p).count() as u32
}

/// Probability that the Fock input `|sa, sb⟩` leaves `k1` photons in the D1
/// port of the balanced splitter.
fn splitter_prob(sa: u32, sb: u32, k1: u32) -> f64 {
    let (sa, sb, k1) = (sa as usize, sb as usize, k1 as usize);
    let n = sa + sb;
    if k1 > n {
        return 0.0;
    }
    let mut c = 0.0;
    for i in 0..=sa.min(k1) {
        if k1 - i > sb {
            continue;
        }
        let sign = if (sb - (k1 - i)) % 2 == 0 { 1.0 } else { -1.0 };
        c += sign * binomial(sa, i) * binomial(sb, k1 - i);
    }
    let p = c * c * factorial(k1) * factorial(n - k1) / (factorial(sa) * factorial(sb)) * 0.5f64.powi(n as i32);
    p.max(0.0)
}

impl HeraldSampler {
    pub fn new(link: &LinkParams, stats: &HeraldStats) -> Result<Self> {
        let chi = link.chi;
        let transmission = [link.splitter_input(Arm::A), link.splitter_input(Arm::B)];
        let efficiency = [link.detector_d1.efficiency, link.detector_d2.efficiency];
        let noise = stats.noise_click_prob;
        let lost_q = transmission.map(|t| chi * (1.0 - t));
        let survive = transmission.map(|t| chi * t / (1.0 - chi * (1.0 - t)));
        let p_survivors = |x: usize, s: u32| (1.0 - survive[x]) * survive[x].powi(s as i32);
        let mut outcomes: [Vec<(f64, Outcome)>; 2] = [Vec::new(), Vec::new()];
        for (j, table) in outcomes.iter_mut().enumerate() {
            let o = 1 - j;
            let mut acc = 0.0;
            for total in 0..=SURVIVOR_CAP {
                for sa in 0..=total {
                    let sb = total - sa;
                    let ps = p_survivors(0, sa) * p_survivors(1, sb);
                    for k1 in 0..=total {
                        let ports = [k1, total - k1];
                        let base = ps
                            * splitter_prob(sa, sb, k1)
                            * (1.0 - noise[o])
                            * (1.0 - efficiency[o]).powi(ports[o] as i32);
                        if !(base > 0.0) {
                            continue;
                        }
                        let k = ports[j] as i32;
                        let miss = (1.0 - efficiency[j]).powi(k);
                        let one = if k > 0 {
                            k as f64 * efficiency[j] * (1.0 - efficiency[j]).powi(k - 1)
                        } else {
                            0.0
                        };
                        let classes = [
                            (HeraldSource::Signal, false, one),
                            (HeraldSource::Signal, true, (1.0 - miss - one).max(0.0)),
                            (HeraldSource::Noise, false, noise[j] * miss),
                        ];
                        for (source, multi, w) in classes {
                            if w * base > 0.0 {
                                acc += w * base;
                                table.push((
                                    acc,
                                    Outcome {
                                        survivors: [sa, sb],
                                        ports,
                                        source,
                                        multi,
                                    },
                                ));
                            }
                        }
                    }
                }
            }
            if acc > 0.0 {
                for t in table.iter_mut() {
                    t.0 /= acc;
                }
            }
        }
        Ok(Self {
            chi,
            transmission,
            efficiency,
            noise,
            herald: stats.herald_prob,
            lost_q,
            outcomes,
        })
    }

    /// Transmission from each node to the heralding splitter.
    pub fn transmission(&self) -> [f64; 2] {
        self.transmission
    }

    pub fn herald_probability(&self) -> f64 {
        self.herald[0] + self.herald[1]
    }

    /// Sample a full trial from the source: write, propagate, interfere,
    /// detect, and keep the outcome if exactly one detector clicked.
    pub fn sample_unconditional<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<HeraldEvent> {
        let n = [geometric(self.chi, rng), geometric(self.chi, rng)];
        let s = [0, 1].map(|x| thin(n[x], self.transmission[x], rng));
        let total = s[0] + s[1];
        let mut u: f64 = rng.random();
        let mut k1 = total;
        for k in 0..=total {
            let p = splitter_prob(s[0], s[1], k);
            if u < p {
                k1 = k;
                break;
            }
            u -= p;
        }
        let ports = [k1, total - k1];
        let detected = [0, 1].map(|j| thin(ports[j], self.efficiency[j], rng));
        let noise = [0, 1].map(|j| rng.random::<f64>() < self.noise[j]);
        let click = [0, 1].map(|j| detected[j] > 0 || noise[j]);
        let j = match click {
            [true, false] => 0,
            [false, true] => 1,
            _ => return None,
        };
        Some(HeraldEvent {
            detector: Detector::from_index(j),
            source: if detected[j] > 0 {
                HeraldSource::Signal
            } else {
                HeraldSource::Noise
            },
            multi_photon: detected[j] >= 2,
            state: StoredState {
                ports,
                spectators: [n[0] - s[0], n[1] - s[1]],
            },
        })
    }

    /// Sample a trial conditioned on a herald, or `None` when heralds are
    /// impossible.
    pub fn sample_heralded<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<HeraldEvent> {
        let total = self.herald_probability();
        if !(total > 0.0) {
            return None;
        }
        let j = if rng.random::<f64>() * total < self.herald[0] {
            0
        } else {
            1
        };
        let table = &self.outcomes[j];
        if table.is_empty() {
            return None;
        }
        let u: f64 = rng.random();
        let idx = table.partition_point(|t| t.0 <= u).min(table.len() - 1);
        let o = table[idx].1;
        let spectators = [0, 1].map(|x| neg_binomial(o.survivors[x] + 1, self.lost_q[x], rng));
        Some(HeraldEvent {
            detector: Detector::from_index(j),
            source: o.source,
            multi_photon: o.multi,
            state: StoredState {
                ports: o.ports,
                spectators,
            },
        })
    }
}
