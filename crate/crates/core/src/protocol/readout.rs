//! Cached readout statistics for the states the samplers can store.

use crate::fock::{binomial, factorial, readout_noclick, ReadoutBackground, ReadoutNoClick, TrigPoly, TruncatedState};
use crate::Result;
use num_complex::Complex64;
use rand::Rng;

/// Largest number of photons leaving the heralding splitter kept exactly.
pub const PORT_CAP: u32 = 4;
/// Largest number of excitations per node lost before the splitter kept
/// exactly next to at most one splitter photon.
pub const SPECTATOR_CAP: u32 = 8;
/// The same cap next to two or more splitter photons, which are rare.
pub const MULTI_SPECTATOR_CAP: u32 = 3;

/// State left in the two memories after a write.
///
/// `ports[j]` photons left the heralding splitter towards detector `j`
/// (detected or not) and `spectators[x]` photons of node `x` were lost
/// before it. Conditioned on these counts the memories hold the pure state
/// `(α a† + β b†)^ports[0] (α a† − β b†)^ports[1] a†^ℓA b†^ℓB |0⟩`, with `α, β`
/// the square roots of the arm transmissions to the splitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StoredState {
    pub ports: [u32; 2],
    pub spectators: [u32; 2],
}

impl StoredState {
    /// Fixed excitation numbers without coherence.
    pub fn number(n: [u32; 2]) -> Self {
        Self {
            ports: [0, 0],
            spectators: n,
        }
    }

    pub fn excitations(&self) -> u32 {
        self.ports[0] + self.ports[1] + self.spectators[0] + self.spectators[1]
    }

    /// The cached state standing in for this one: splitter photons beyond
    /// [`PORT_CAP`] are dropped from the larger port, then spectators are
    /// clamped.
    pub fn folded(self) -> Self {
        let mut k = self.ports;
        while k[0] + k[1] > PORT_CAP {
            if k[0] >= k[1] {
                k[0] -= 1;
            } else {
                k[1] -= 1;
            }
        }
        let cap = if k[0] + k[1] >= 2 {
            MULTI_SPECTATOR_CAP
        } else {
            SPECTATOR_CAP
        };
        Self {
            ports: k,
            spectators: self.spectators.map(|s| s.min(cap)),
        }
    }
}

/// Normalized amplitudes of a stored state over `|a, N−a⟩`, `a = 0..=N`.
fn fock_amplitudes(s: StoredState, amp: [f64; 2]) -> Vec<f64> {
    let [la, lb] = s.spectators.map(|x| x as usize);
    // c[a]: coefficient of a†^a b†^(deg−a)
    let mut c = vec![0.0; la + lb + 1];
    c[la] = 1.0;
    for (count, sign) in [(s.ports[0], 1.0), (s.ports[1], -1.0)] {
        for _ in 0..count {
            let mut next = vec![0.0; c.len() + 1];
            for (a, &x) in c.iter().enumerate() {
                next[a + 1] += amp[0] * x;
                next[a] += sign * amp[1] * x;
            }
            c = next;
        }
    }
    let n = c.len() - 1;
    let mut v: Vec<f64> = c
        .iter()
        .enumerate()
        .map(|(a, x)| x * (factorial(a) * factorial(n - a)).sqrt())
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    } else {
        // no amplitude towards the splitter: only the spectators remain
        v = vec![0.0; la + lb + 1];
        v[la] = 1.0;
    }
    v
}

/// `⟨m, N−m|_{EF} U |a, N−a⟩` for the balanced readout splitter with
/// `a† = (e† + f†)/√2`, `b† = (e† − f†)/√2`.
fn splitter_matrix(n: usize) -> Vec<Vec<f64>> {
    let scale = 0.5f64.powi(n as i32).sqrt();
    (0..=n)
        .map(|m| {
            (0..=n)
                .map(|a| {
                    let mut acc = 0.0;
                    for i in 0..=a.min(m) {
                        if m - i > n - a {
                            continue;
                        }
                        let sign = if (n - a - (m - i)).is_multiple_of(2) { 1.0 } else { -1.0 };
                        acc += sign * binomial(a, i) * binomial(n - a, m - i);
                    }
                    acc * scale * (factorial(m) * factorial(n - m) / (factorial(a) * factorial(n - a))).sqrt()
                })
                .collect()
        })
        .collect()
}

/// No-click probabilities of a pure memory state with fixed total
/// excitation number, read out with efficiency `eta` at phase `phi`.
fn pure_noclick(amps: &[f64], u: &[Vec<f64>], eta: f64, phi: f64) -> ReadoutNoClick {
    let n = amps.len() - 1;
    let keep = 1.0 - eta;
    let mut e = 0.0;
    let mut f = 0.0;
    for (m, row) in u.iter().enumerate() {
        let mut z = Complex64::new(0.0, 0.0);
        for (a, &x) in amps.iter().enumerate() {
            if x != 0.0 {
                z += Complex64::from_polar(row[a] * x, phi * (n - a) as f64);
            }
        }
        let p = z.norm_sqr();
        e += p * keep.powi(m as i32);
        f += p * keep.powi((n - m) as i32);
    }
    ReadoutNoClick {
        e,
        f,
        both: keep.powi(n as i32),
    }
}

/// Phase response of the two readout outputs for one stored state.
#[derive(Debug, Clone)]
pub(crate) struct FringePolys {
    pub e: TrigPoly,
    pub f: TrigPoly,
    pub both: f64,
}

impl FringePolys {
    /// Sample the no-click response of `mem` up to harmonic `order` and damp
    /// harmonic k by `overlap^k`.
    pub fn new(mem: &TruncatedState, eta: f64, overlap: f64, order: usize) -> Result<Self> {
        let both = readout_noclick(mem, eta, 0.0)?.both;
        Self::from_response(order, overlap, both, |phi| {
            readout_noclick(mem, eta, phi).unwrap_or(ReadoutNoClick {
                e: f64::NAN,
                f: f64::NAN,
                both,
            })
        })
    }

    fn from_response(order: usize, overlap: f64, both: f64, nc: impl Fn(f64) -> ReadoutNoClick) -> Result<Self> {
        let e = TrigPoly::from_fn(order, |p| nc(p).e);
        let f = TrigPoly::from_fn(order, |p| nc(p).f);
        if !(e.c0.is_finite() && f.c0.is_finite()) {
            return Err(crate::Error::InvalidState("readout evaluation failed".into()));
        }
        let damp = |k: usize| overlap.powi(k as i32);
        Ok(Self {
            e: e.damped(damp),
            f: f.damped(damp),
            both,
        })
    }

    pub fn eval(&self, phi: f64) -> ReadoutNoClick {
        ReadoutNoClick {
            e: self.e.eval(phi),
            f: self.f.eval(phi),
            both: self.both,
        }
    }
}

#[derive(Debug, Clone)]
struct Entry {
    polys: FringePolys,
    /// Cumulative distribution of the excitation number in node A.
    node_cdf: Vec<f64>,
    total: u32,
}

/// Readout response of every cacheable stored state.
#[derive(Debug, Clone)]
pub struct ReadoutTable {
    eta: f64,
    background: ReadoutBackground,
    entries: Vec<Entry>,
}

const SINGLE_GRID: usize = ((SPECTATOR_CAP + 1) * (SPECTATOR_CAP + 1)) as usize;
const MULTI_GRID: usize = ((MULTI_SPECTATOR_CAP + 1) * (MULTI_SPECTATOR_CAP + 1)) as usize;

/// Position of a folded state in the table.
fn index(s: StoredState) -> usize {
    let [k1, k2] = s.ports.map(|k| k as usize);
    let [la, lb] = s.spectators.map(|x| x as usize);
    let n = k1 + k2;
    if n <= 1 {
        let port = if k1 == 1 {
            1
        } else if k2 == 1 {
            2
        } else {
            0
        };
        port * SINGLE_GRID + la * (SPECTATOR_CAP as usize + 1) + lb
    } else {
        // pairs with 2 ≤ k1 + k2 < n come first
        let before: usize = (2..n).map(|m| m + 1).sum();
        3 * SINGLE_GRID + (before + k1) * MULTI_GRID + la * (MULTI_SPECTATOR_CAP as usize + 1) + lb
    }
}

/// Every cached state in table order.
fn cached_states() -> Vec<StoredState> {
    let mut out = Vec::new();
    let grid = |ports: [u32; 2], cap: u32, out: &mut Vec<StoredState>| {
        for la in 0..=cap {
            for lb in 0..=cap {
                out.push(StoredState {
                    ports,
                    spectators: [la, lb],
                });
            }
        }
    };
    for ports in [[0, 0], [1, 0], [0, 1]] {
        grid(ports, SPECTATOR_CAP, &mut out);
    }
    for n in 2..=PORT_CAP {
        for k1 in 0..=n {
            grid([k1, n - k1], MULTI_SPECTATOR_CAP, &mut out);
        }
    }
    out
}

impl ReadoutTable {
    /// `transmission[x]` is the transmission from node `x` to the heralding
    /// splitter; it fixes the amplitudes of the shared excitations. `eta` is
    /// the retrieval times local detection efficiency, and harmonic k of the
    /// fringe is damped by `overlap^k`.
    pub fn new(transmission: [f64; 2], eta: f64, overlap: f64, background: ReadoutBackground) -> Result<Self> {
        crate::error::check_fraction("eta", eta)?;
        crate::error::check_fraction("overlap", overlap)?;
        let amp = transmission.map(|t| t.max(0.0).sqrt());
        let mut entries = Vec::new();
        let mut matrices: Vec<Vec<Vec<f64>>> = Vec::new();
        for s in cached_states() {
            let amps = fock_amplitudes(s, amp);
            let n = amps.len() - 1;
            while matrices.len() <= n {
                matrices.push(splitter_matrix(matrices.len()));
            }
            let u = &matrices[n];
            let order = (s.ports[0] + s.ports[1]) as usize;
            let both = (1.0 - eta).powi(n as i32);
            let polys = FringePolys::from_response(order, overlap, both, |phi| pure_noclick(&amps, u, eta, phi))?;
            let mut acc = 0.0;
            let node_cdf = amps
                .iter()
                .map(|x| {
                    acc += x * x;
                    acc
                })
                .collect();
            entries.push(Entry {
                polys,
                node_cdf,
                total: n as u32,
            });
        }
        Ok(Self {
            eta,
            background,
            entries,
        })
    }

    fn entry(&self, state: StoredState) -> &Entry {
        &self.entries[index(state.folded())]
    }

    /// No-click probabilities including background, at total readout phase
    /// `phi` (analyzer plus accumulated herald phase).
    pub fn noclick(&self, state: StoredState, phi: f64) -> ReadoutNoClick {
        self.background.apply(self.entry(state).polys.eval(phi))
    }

    /// Draw the E and F click pattern.
    pub fn sample_clicks<R: Rng + ?Sized>(&self, state: StoredState, phi: f64, rng: &mut R) -> [bool; 2] {
        sample_pair(self.noclick(state, phi), rng)
    }

    /// Draw the click pattern of the two nodes read out separately, and the
    /// excitation numbers of the component that was measured.
    pub fn sample_node_clicks<R: Rng + ?Sized>(&self, state: StoredState, rng: &mut R) -> ([bool; 2], [u32; 2]) {
        let e = self.entry(state);
        let u = rng.random::<f64>() * e.node_cdf.last().copied().unwrap_or(1.0);
        let a = e.node_cdf.partition_point(|&c| c <= u).min(e.node_cdf.len() - 1) as u32;
        let n = [a, e.total - a];
        let nf = self.background.node_factor();
        let clicks = n.map(|k| {
            let p_none = (1.0 - self.eta).powi(k as i32) * nf;
            rng.random::<f64>() >= p_none
        });
        (clicks, n)
    }
}

/// Draw a joint click pattern from the three no-click probabilities.
pub fn sample_pair<R: Rng + ?Sized>(nc: ReadoutNoClick, rng: &mut R) -> [bool; 2] {
    let none = nc.both.clamp(0.0, 1.0);
    let e_only = (nc.f - nc.both).max(0.0);
    let f_only = (nc.e - nc.both).max(0.0);
    let u: f64 = rng.random();
    if u < none {
        [false, false]
    } else if u < none + e_only {
        [true, false]
    } else if u < none + e_only + f_only {
        [false, true]
    } else {
        [true, true]
    }
}
