//! Exact truncated Fock-space algebra.
//!
//! States are dense density matrices over `mode_count` bosonic modes, each
//! truncated at `cutoff` photons. Basis index ordering puts mode 0 in the most
//! significant digit. Probability mass pushed beyond the cutoff by a
//! non-number-conserving map is accumulated in `leakage`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{check_fraction, Error, Result};

pub type C64 = Complex64;

/// Default photon-number cutoff per mode.
pub const DEFAULT_CUTOFF: usize = 4;
/// Default bound on acceptable truncation leakage.
pub const DEFAULT_EPS_TRUNC: f64 = 1e-4;
/// Conditional branches below this probability cannot be normalized.
pub const DEGENERATE_PROB: f64 = 1e-12;

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModeId(pub usize);

#[derive(Debug, Clone)]
pub struct TruncatedState {
    mode_count: usize,
    cutoff: usize,
    matrix: DMatrix<C64>,
    leakage: f64,
}

/// Outcome of a threshold-detector measurement on one mode.
#[derive(Debug, Clone)]
pub struct ClickOutcome {
    pub p_click: f64,
    pub p_noclick: f64,
    post_click: Option<TruncatedState>,
    post_noclick: Option<TruncatedState>,
}

impl ClickOutcome {
    /// State conditioned on a click, with the measured mode traced out.
    pub fn post_click(&self) -> Result<&TruncatedState> {
        self.post_click
            .as_ref()
            .ok_or_else(|| Error::Degenerate(format!("click branch has probability {:.3e}", self.p_click)))
    }

    /// State conditioned on no click, with the measured mode traced out.
    pub fn post_noclick(&self) -> Result<&TruncatedState> {
        self.post_noclick
            .as_ref()
            .ok_or_else(|| Error::Degenerate(format!("no-click branch has probability {:.3e}", self.p_noclick)))
    }

    pub fn into_post_click(self) -> Result<TruncatedState> {
        let p = self.p_click;
        self.post_click
            .ok_or_else(|| Error::Degenerate(format!("click branch has probability {p:.3e}")))
    }

    pub fn into_post_noclick(self) -> Result<TruncatedState> {
        let p = self.p_noclick;
        self.post_noclick
            .ok_or_else(|| Error::Degenerate(format!("no-click branch has probability {p:.3e}")))
    }
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    factorial(n) / (factorial(k) * factorial(n - k))
}

impl TruncatedState {
    fn dim_for(mode_count: usize, cutoff: usize) -> usize {
        (cutoff + 1).pow(mode_count as u32)
    }

    fn check_cutoff(cutoff: usize) -> Result<()> {
        if cutoff < 1 {
            return Err(Error::param("cutoff", "must be at least 1"));
        }
        Ok(())
    }

    /// The multimode vacuum.
    pub fn vacuum(mode_count: usize, cutoff: usize) -> Result<Self> {
        Self::fock(&vec![0; mode_count], cutoff)
    }

    /// A product number state `|n_0, n_1, ...⟩`.
    pub fn fock(numbers: &[usize], cutoff: usize) -> Result<Self> {
        Self::check_cutoff(cutoff)?;
        if let Some(&n) = numbers.iter().find(|&&n| n > cutoff) {
            return Err(Error::param("numbers", format!("{n} exceeds cutoff {cutoff}")));
        }
        let dim = Self::dim_for(numbers.len(), cutoff);
        let idx = numbers.iter().fold(0, |acc, &n| acc * (cutoff + 1) + n);
        let mut matrix = DMatrix::zeros(dim, dim);
        matrix[(idx, idx)] = C64::new(1.0, 0.0);
        Ok(Self {
            mode_count: numbers.len(),
            cutoff,
            matrix,
            leakage: 0.0,
        })
    }

    /// A pure state from (unnormalized) amplitudes over the truncated basis.
    pub fn from_amplitudes(mode_count: usize, cutoff: usize, amps: &[C64]) -> Result<Self> {
        Self::check_cutoff(cutoff)?;
        let dim = Self::dim_for(mode_count, cutoff);
        if amps.len() != dim {
            return Err(Error::param(
                "amps",
                format!("expected {dim} amplitudes, got {}", amps.len()),
            ));
        }
        let norm2: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        if norm2 < DEGENERATE_PROB {
            return Err(Error::Degenerate("zero amplitude vector".into()));
        }
        let s = 1.0 / norm2.sqrt();
        let v: Vec<C64> = amps.iter().map(|a| a * s).collect();
        let matrix = DMatrix::from_fn(dim, dim, |i, j| v[i] * v[j].conj());
        Ok(Self {
            mode_count,
            cutoff,
            matrix,
            leakage: 0.0,
        })
    }

    /// Construct from a raw density matrix; the caller vouches for validity.
    pub fn from_matrix(mode_count: usize, cutoff: usize, matrix: DMatrix<C64>, leakage: f64) -> Result<Self> {
        Self::check_cutoff(cutoff)?;
        let dim = Self::dim_for(mode_count, cutoff);
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(Error::param("matrix", format!("expected {dim}x{dim}")));
        }
        Ok(Self {
            mode_count,
            cutoff,
            matrix,
            leakage,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn leakage(&self) -> f64 {
        self.leakage
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    fn stride(&self, m: usize) -> usize {
        (self.cutoff + 1).pow((self.mode_count - 1 - m) as u32)
    }

    fn digit(&self, index: usize, m: usize) -> usize {
        (index / self.stride(m)) % (self.cutoff + 1)
    }

    fn check_mode(&self, m: ModeId) -> Result<usize> {
        if m.0 >= self.mode_count {
            return Err(Error::param(
                "mode",
                format!("mode {} out of range for {} modes", m.0, self.mode_count),
            ));
        }
        Ok(m.0)
    }

    /// Photon-number digits of a basis index.
    pub fn occupation(&self, index: usize) -> Vec<usize> {
        (0..self.mode_count).map(|m| self.digit(index, m)).collect()
    }

    /// Tensor product; both factors must share a cutoff.
    pub fn tensor(&self, other: &TruncatedState) -> Result<Self> {
        if self.cutoff != other.cutoff {
            return Err(Error::param("cutoff", "tensor factors must share a cutoff"));
        }
        let matrix = self.matrix.kronecker(&other.matrix);
        let t1 = 1.0 - self.leakage;
        let t2 = 1.0 - other.leakage;
        Ok(Self {
            mode_count: self.mode_count + other.mode_count,
            cutoff: self.cutoff,
            matrix,
            leakage: 1.0 - t1 * t2,
        })
    }

    /// Photon-number distribution of one mode, over the retained trace.
    pub fn photon_distribution(&self, m: ModeId) -> Result<Vec<f64>> {
        let m = self.check_mode(m)?;
        let mut p = vec![0.0; self.cutoff + 1];
        for i in 0..self.dim() {
            p[self.digit(i, m)] += self.matrix[(i, i)].re;
        }
        Ok(p)
    }

    /// Joint photon-number distribution indexed by basis index.
    pub fn populations(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().map(|z| z.re).collect()
    }

    /// Normal-ordered moment `⟨n(n-1)...(n-k+1)⟩` of one mode.
    pub fn factorial_moment(&self, m: ModeId, k: usize) -> Result<f64> {
        let p = self.photon_distribution(m)?;
        Ok(p.iter()
            .enumerate()
            .map(|(n, pn)| {
                let f: f64 = (0..k).map(|j| n as f64 - j as f64).product();
                f.max(0.0) * pn
            })
            .sum())
    }

    /// Normal-ordered cross moment `⟨n_a n_b⟩` for distinct modes.
    pub fn cross_moment(&self, a: ModeId, b: ModeId) -> Result<f64> {
        let a = self.check_mode(a)?;
        let b = self.check_mode(b)?;
        Ok((0..self.dim())
            .map(|i| (self.digit(i, a) * self.digit(i, b)) as f64 * self.matrix[(i, i)].re)
            .sum())
    }

    /// Unconditional zero-delay autocorrelation of one mode.
    pub fn g2(&self, m: ModeId) -> Result<f64> {
        let n1 = self.factorial_moment(m, 1)?;
        if n1 <= 0.0 {
            return Err(Error::Degenerate("mean photon number is zero".into()));
        }
        Ok(self.factorial_moment(m, 2)? / (n1 * n1))
    }

    // Offsets of the local subspace spanned by `modes` and the base indices of
    // the complementary modes.
    fn local_layout(&self, modes: &[usize]) -> (Vec<usize>, Vec<usize>) {
        let d = self.cutoff + 1;
        let mut offsets = vec![0usize];
        for &m in modes {
            let s = self.stride(m);
            offsets = offsets.iter().flat_map(|&o| (0..d).map(move |n| o + n * s)).collect();
        }
        let bases = (0..self.dim())
            .filter(|&i| modes.iter().all(|&m| self.digit(i, m) == 0))
            .collect();
        (offsets, bases)
    }

    // Conjugate by a local operator: K ρ K†.
    fn conjugate_local(&self, modes: &[usize], k: &DMatrix<C64>) -> DMatrix<C64> {
        let (offsets, bases) = self.local_layout(modes);
        let dim = self.dim();
        let ld = offsets.len();
        let mut left = DMatrix::<C64>::zeros(dim, dim);
        let mut buf = vec![C64::new(0.0, 0.0); ld];
        for col in 0..dim {
            for &b in &bases {
                for (s, &o) in offsets.iter().enumerate() {
                    buf[s] = self.matrix[(b + o, col)];
                }
                if buf.iter().all(|z| z.norm_sqr() == 0.0) {
                    continue;
                }
                for (r, &o) in offsets.iter().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for (s, v) in buf.iter().enumerate() {
                        acc += k[(r, s)] * v;
                    }
                    left[(b + o, col)] = acc;
                }
            }
        }
        // right multiply by K†: (left K†)[row, c'] = Σ_c left[row, c] conj(K[c', c])
        let mut out = DMatrix::<C64>::zeros(dim, dim);
        for row in 0..dim {
            for &b in &bases {
                for (s, &o) in offsets.iter().enumerate() {
                    buf[s] = left[(row, b + o)];
                }
                if buf.iter().all(|z| z.norm_sqr() == 0.0) {
                    continue;
                }
                for (r, &o) in offsets.iter().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for (s, v) in buf.iter().enumerate() {
                        acc += k[(r, s)].conj() * v;
                    }
                    out[(row, b + o)] = acc;
                }
            }
        }
        out
    }

    /// Truncated two-mode beam-splitter matrix in the local basis `n_a*d + n_b`.
    ///
    /// Convention: `a† → √T a† + √R e^{iφ} b†`, `b† → −√R e^{−iφ} a† + √T b†`.
    pub fn beam_splitter_matrix(cutoff: usize, transmittance: f64, phase: f64) -> DMatrix<C64> {
        let d = cutoff + 1;
        let t = transmittance.sqrt();
        let r = (1.0 - transmittance).sqrt();
        let ea = C64::from_polar(r, phase);
        let eb = C64::from_polar(-r, -phase);
        let mut u = DMatrix::<C64>::zeros(d * d, d * d);
        for n in 0..d {
            for m in 0..d {
                let norm = 1.0 / (factorial(n) * factorial(m)).sqrt();
                for i in 0..=n {
                    let ci = binomial(n, i) * t.powi(i as i32);
                    let ai = ea.powi((n - i) as i32) * ci;
                    for j in 0..=m {
                        let p = i + j;
                        let q = n + m - p;
                        if p > cutoff || q > cutoff {
                            continue;
                        }
                        let cj = binomial(m, j) * t.powi((m - j) as i32);
                        let aj = eb.powi(j as i32) * cj;
                        let amp = ai * aj * (factorial(p) * factorial(q)).sqrt() * norm;
                        u[(p * d + q, n * d + m)] += amp;
                    }
                }
            }
        }
        u
    }

    /// Apply the two-mode beam-splitter unitary to modes `a`, `b`.
    pub fn beam_splitter(&self, a: ModeId, b: ModeId, transmittance: f64, phase: f64) -> Result<Self> {
        let ai = self.check_mode(a)?;
        let bi = self.check_mode(b)?;
        if ai == bi {
            return Err(Error::param("modes", "beam splitter needs two distinct modes"));
        }
        check_fraction("transmittance", transmittance)?;
        let u = Self::beam_splitter_matrix(self.cutoff, transmittance, phase);
        let before = self.trace();
        let matrix = self.conjugate_local(&[ai, bi], &u);
        let mut out = Self { matrix, ..self.clone() };
        out.leakage += (before - out.trace()).max(0.0);
        Ok(out)
    }

    /// Linear loss on one mode as an amplitude-damping channel.
    pub fn apply_loss(&self, m: ModeId, transmittance: f64) -> Result<Self> {
        let mi = self.check_mode(m)?;
        check_fraction("transmittance", transmittance)?;
        if transmittance == 1.0 {
            return Ok(self.clone());
        }
        let d = self.cutoff + 1;
        let mut acc = DMatrix::<C64>::zeros(self.dim(), self.dim());
        for k in 0..d {
            let mut kraus = DMatrix::<C64>::zeros(d, d);
            for n in k..d {
                let amp =
                    (binomial(n, k) * transmittance.powi((n - k) as i32) * (1.0 - transmittance).powi(k as i32)).sqrt();
                kraus[(n - k, n)] = C64::new(amp, 0.0);
            }
            acc += self.conjugate_local(&[mi], &kraus);
        }
        Ok(Self {
            matrix: acc,
            ..self.clone()
        })
    }

    /// Phase shift `e^{iφ n}` on one mode.
    pub fn phase_shift(&self, m: ModeId, phi: f64) -> Result<Self> {
        let mi = self.check_mode(m)?;
        let mut out = self.clone();
        let dim = self.dim();
        for i in 0..dim {
            let ni = self.digit(i, mi) as f64;
            for j in 0..dim {
                let nj = self.digit(j, mi) as f64;
                if ni != nj {
                    out.matrix[(i, j)] *= C64::from_polar(1.0, phi * (ni - nj));
                }
            }
        }
        Ok(out)
    }

    /// Trace out one mode; higher mode indices shift down by one.
    pub fn trace_out(&self, m: ModeId) -> Result<Self> {
        self.trace_out_weighted(m, &vec![1.0; self.cutoff + 1])
    }

    // Σ_n w(n) ⟨n|ρ|n⟩_m, the partial trace against a diagonal operator.
    fn trace_out_weighted(&self, m: ModeId, weights: &[f64]) -> Result<Self> {
        let mi = self.check_mode(m)?;
        let d = self.cutoff + 1;
        let new_modes = self.mode_count - 1;
        let new_dim = Self::dim_for(new_modes, self.cutoff);
        let s = self.stride(mi);
        // index of the reduced basis element with the `mi`-th digit removed
        let reduce = |i: usize| -> usize {
            let high = i / (s * d);
            let low = i % s;
            high * s + low
        };
        let mut out = DMatrix::<C64>::zeros(new_dim, new_dim);
        for i in 0..self.dim() {
            let ni = self.digit(i, mi);
            let ri = reduce(i);
            for j in 0..self.dim() {
                if self.digit(j, mi) != ni {
                    continue;
                }
                out[(ri, reduce(j))] += self.matrix[(i, j)] * weights[ni];
            }
        }
        Ok(Self {
            mode_count: new_modes,
            cutoff: self.cutoff,
            matrix: out,
            leakage: self.leakage,
        })
    }

    /// Threshold detection on mode `m` with efficiency `eta_det` and an
    /// independent dark-count probability `p_dark`.
    pub fn measure_click(&self, m: ModeId, eta_det: f64, p_dark: f64) -> Result<ClickOutcome> {
        self.check_mode(m)?;
        check_fraction("eta_det", eta_det)?;
        check_fraction("p_dark", p_dark)?;
        let d = self.cutoff + 1;
        let e0: Vec<f64> = (0..d)
            .map(|n| (1.0 - p_dark) * (1.0 - eta_det).powi(n as i32))
            .collect();
        let e1: Vec<f64> = e0.iter().map(|x| 1.0 - x).collect();
        let total = self.trace();
        if total < DEGENERATE_PROB {
            return Err(Error::Degenerate("state has no retained trace".into()));
        }
        let no = self.trace_out_weighted(m, &e0)?;
        let yes = self.trace_out_weighted(m, &e1)?;
        let p_noclick = (no.trace() / total).clamp(0.0, 1.0);
        let p_click = 1.0 - p_noclick;
        let retained = 1.0 - self.leakage;
        let normalize = |mut s: TruncatedState, p: f64| {
            if p < DEGENERATE_PROB {
                None
            } else {
                s.matrix *= C64::new(retained / (p * total), 0.0);
                Some(s)
            }
        };
        Ok(ClickOutcome {
            p_click,
            p_noclick,
            post_click: normalize(yes, p_click),
            post_noclick: normalize(no, p_noclick),
        })
    }

    /// Check the density-operator invariants.
    pub fn validate(&self, eps_trunc: f64) -> Result<()> {
        let tr = self.trace();
        if (tr + self.leakage - 1.0).abs() > TOL {
            return Err(Error::InvalidState(format!(
                "trace {tr} + leakage {} differs from 1",
                self.leakage
            )));
        }
        let dim = self.dim();
        for i in 0..dim {
            for j in i..dim {
                if (self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm() > TOL {
                    return Err(Error::InvalidState(format!("not Hermitian at ({i}, {j})")));
                }
            }
        }
        let min_eig = self
            .matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig}")));
        }
        if self.leakage >= eps_trunc {
            return Err(Error::InvalidState(format!(
                "truncation leakage {} exceeds {eps_trunc}",
                self.leakage
            )));
        }
        Ok(())
    }

    /// Element-wise maximum distance between two states of equal shape.
    pub fn max_abs_diff(&self, other: &TruncatedState) -> f64 {
        (&self.matrix - &other.matrix)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }
}

/// Two-mode squeezed state `√(1−χ) Σ χ^{n/2} |n,n⟩` truncated at `cutoff`.
pub fn tms_state(chi: f64, cutoff: usize) -> Result<TruncatedState> {
    if !(0.0..1.0).contains(&chi) {
        return Err(Error::param("chi", format!("{chi} is outside [0, 1)")));
    }
    TruncatedState::check_cutoff(cutoff)?;
    let d = cutoff + 1;
    let mut amps = vec![C64::new(0.0, 0.0); d * d];
    for n in 0..d {
        amps[n * d + n] = C64::new(((1.0 - chi) * chi.powi(n as i32)).sqrt(), 0.0);
    }
    let matrix = DMatrix::from_fn(d * d, d * d, |i, j| amps[i] * amps[j].conj());
    Ok(TruncatedState {
        mode_count: 2,
        cutoff,
        matrix,
        leakage: chi.powi(d as i32),
    })
}

/// Real trigonometric polynomial `c0 + Σ_k (a_k cos kφ + b_k sin kφ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly {
    pub c0: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl TrigPoly {
    /// Sample `f` at `2·order+1` equispaced phases and recover the
    /// coefficients exactly, valid when `f` has no harmonics above `order`.
    pub fn from_fn(order: usize, f: impl Fn(f64) -> f64) -> Self {
        let n = 2 * order + 1;
        let vals: Vec<f64> = (0..n)
            .map(|i| f(2.0 * std::f64::consts::PI * i as f64 / n as f64))
            .collect();
        let c0 = vals.iter().sum::<f64>() / n as f64;
        let mut cos = vec![0.0; order];
        let mut sin = vec![0.0; order];
        for k in 1..=order {
            for (i, v) in vals.iter().enumerate() {
                let x = 2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                cos[k - 1] += 2.0 * v * x.cos() / n as f64;
                sin[k - 1] += 2.0 * v * x.sin() / n as f64;
            }
        }
        Self { c0, cos, sin }
    }

    pub fn eval(&self, phi: f64) -> f64 {
        let mut acc = self.c0;
        for k in 0..self.cos.len() {
            let x = (k + 1) as f64 * phi;
            acc += self.cos[k] * x.cos() + self.sin[k] * x.sin();
        }
        acc
    }

    /// Scale harmonic `k` by `factor(k)`.
    pub fn damped(&self, factor: impl Fn(usize) -> f64) -> Self {
        let mut out = self.clone();
        for k in 0..out.cos.len() {
            let f = factor(k + 1);
            out.cos[k] *= f;
            out.sin[k] *= f;
        }
        out
    }

    /// First-harmonic amplitude over offset.
    pub fn first_harmonic_visibility(&self) -> f64 {
        match (self.cos.first(), self.sin.first()) {
            (Some(a), Some(b)) if self.c0 != 0.0 => a.hypot(*b) / self.c0,
            _ => 0.0,
        }
    }
}

/// No-click probabilities at the two readout outputs for a two-mode memory
/// state, before any background or dark counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutNoClick {
    pub e: f64,
    pub f: f64,
    pub both: f64,
}

/// Retrieve both memory modes with overall efficiency `eta` (retrieval times
/// local detection), apply analyzer phase `phi` on the second mode and
/// interfere on a balanced splitter. Output E is the mode that brightens for
/// an in-phase single excitation.
pub fn readout_noclick(memory: &TruncatedState, eta: f64, phi: f64) -> Result<ReadoutNoClick> {
    if memory.mode_count() != 2 {
        return Err(Error::param("memory", "readout expects a two-mode state"));
    }
    let s = memory.apply_loss(ModeId(0), eta)?.apply_loss(ModeId(1), eta)?;
    let total = s.trace();
    // The splitter maps vacuum to vacuum, so the joint no-click term is the
    // vacuum population after loss.
    let both = s.populations()[0] / total;
    let s = s
        .phase_shift(ModeId(1), phi)?
        .beam_splitter(ModeId(0), ModeId(1), 0.5, 0.0)?;
    let e = s.measure_click(ModeId(1), 1.0, 0.0)?.p_noclick;
    let f = s.measure_click(ModeId(0), 1.0, 0.0)?.p_noclick;
    Ok(ReadoutNoClick { e, f, both })
}

/// Thermal, distinguishable readout background plus detector dark counts.
///
/// `mean` is the noise photon number per node at the retrieval output; it is
/// thinned by the local detection efficiency before reaching the detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutBackground {
    pub mean: f64,
    pub eta_local: f64,
    pub p_dark: f64,
}

/// Ratio between readout background and `χ·η_r·(1−η_r)`, fixed so the exact
/// model reproduces the high-order visibility `1/(1+2χ(3−2η_r))` at
/// `χ = 0.06`, `η_r = 0.25`.
pub const BACKGROUND_COEF: f64 = 2.05;

impl ReadoutBackground {
    pub const NONE: ReadoutBackground = ReadoutBackground {
        mean: 0.0,
        eta_local: 1.0,
        p_dark: 0.0,
    };

    /// Background scaled with the write strength and retrieval efficiency.
    pub fn calibrated(chi: f64, eta_r: f64, eta_local: f64, p_dark: f64) -> Self {
        Self {
            mean: BACKGROUND_COEF * chi * eta_r * (1.0 - eta_r),
            eta_local,
            p_dark,
        }
    }

    /// No-click survival factor at a single output.
    pub fn single_factor(&self) -> f64 {
        let m = 0.5 * self.mean * self.eta_local;
        (1.0 - self.p_dark) / ((1.0 + m) * (1.0 + m))
    }

    /// No-click survival factor at both outputs jointly.
    pub fn joint_factor(&self) -> f64 {
        let m = self.mean * self.eta_local;
        (1.0 - self.p_dark).powi(2) / ((1.0 + m) * (1.0 + m))
    }

    /// Survival factor of one node's own detector when measured without
    /// interference.
    pub fn node_factor(&self) -> f64 {
        (1.0 - self.p_dark) / (1.0 + self.mean * self.eta_local)
    }

    pub fn apply(&self, nc: ReadoutNoClick) -> ReadoutNoClick {
        ReadoutNoClick {
            e: nc.e * self.single_factor(),
            f: nc.f * self.single_factor(),
            both: nc.both * self.joint_factor(),
        }
    }
}

/// Heralded two-node memory state from the exact model.
///
/// Modes are ordered `[atom A, photon A, atom B, photon B]`. Write-out photon
/// X passes a loss `t_arm[X]` and arm B picks up a phase `dphi` before the
/// balanced splitter. The `+` port feeds detector 0 and the `−` port detector
/// 1, with efficiencies `eta_det` and dark probabilities `p_dark`. The herald
/// is a click on `detector` and none on the other; the returned probability
/// is that of the herald.
pub fn heralded_memory(
    chi: f64,
    t_arm: [f64; 2],
    eta_det: [f64; 2],
    p_dark: [f64; 2],
    dphi: f64,
    detector: usize,
    cutoff: usize,
) -> Result<(f64, TruncatedState)> {
    if detector > 1 {
        return Err(Error::param("detector", "must be 0 or 1"));
    }
    let src = tms_state(chi, cutoff)?;
    let s = src
        .tensor(&src)?
        .apply_loss(ModeId(1), t_arm[0])?
        .apply_loss(ModeId(3), t_arm[1])?
        .phase_shift(ModeId(3), dphi)?
        .beam_splitter(ModeId(1), ModeId(3), 0.5, 0.0)?;
    // mode 3 carries the `+` port, mode 1 the `−` port
    let port = |d: usize| if d == 0 { 3 } else { 1 };
    let (click_mode, other_mode) = (port(detector), port(1 - detector));
    let first = s.measure_click(ModeId(click_mode), eta_det[detector], p_dark[detector])?;
    let p1 = first.p_click;
    let after = first.into_post_click()?;
    let other_idx = if other_mode > click_mode {
        other_mode - 1
    } else {
        other_mode
    };
    let o = 1 - detector;
    let second = after.measure_click(ModeId(other_idx), eta_det[o], p_dark[o])?;
    let p = p1 * second.p_noclick;
    if p < DEGENERATE_PROB {
        return Err(Error::Degenerate(format!("herald probability {p:.3e}")));
    }
    // remaining modes: [atom A, atom B]
    Ok((p, second.into_post_noclick()?))
}

/// Fringe visibility of the exact model: herald on the `+` port, retrieve,
/// scan the analyzer phase and fit the first harmonic of the E click
/// probability. All other imperfections are switched off.
pub fn oracle_readout_visibility(
    chi: f64,
    eta_arm: f64,
    eta_r: f64,
    eta_det_local: f64,
    cutoff: usize,
    background: ReadoutBackground,
) -> Result<f64> {
    check_fraction("chi", chi)?;
    check_fraction("eta_arm", eta_arm)?;
    check_fraction("eta_r", eta_r)?;
    check_fraction("eta_det_local", eta_det_local)?;
    if cutoff < 3 {
        return Err(Error::param("cutoff", "oracle needs cutoff >= 3"));
    }
    let (_, mem) = heralded_memory(chi, [eta_arm; 2], [1.0; 2], [0.0; 2], 0.0, 0, cutoff)?;
    let eta = eta_r * eta_det_local;
    let poly = TrigPoly::from_fn(cutoff, |phi| {
        let nc = readout_noclick(&mem, eta, phi).expect("validated state");
        1.0 - background.apply(nc).e
    });
    Ok(poly.first_harmonic_visibility())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn single_superposition(phi: f64) -> TruncatedState {
        let d = 2;
        let mut amps = vec![C64::new(0.0, 0.0); d * d];
        amps[d] = C64::new(1.0, 0.0); // |1,0>
        amps[1] = C64::from_polar(1.0, phi); // |0,1>
        TruncatedState::from_amplitudes(2, 1, &amps).unwrap()
    }

    #[test]
    fn tms_vacuum_at_zero_chi() {
        let s = tms_state(0.0, 3).unwrap();
        assert_abs_diff_eq!(s.populations()[0], 1.0, epsilon = 1e-15);
        assert_eq!(s.leakage(), 0.0);
    }

    #[test]
    fn tms_marginal_is_geometric() {
        let chi = 0.06;
        let s = tms_state(chi, 4).unwrap();
        let p = s.photon_distribution(ModeId(0)).unwrap();
        for (n, pn) in p.iter().enumerate() {
            assert_abs_diff_eq!(*pn, (1.0 - chi) * chi.powi(n as i32), epsilon = 1e-6);
        }
        s.validate(DEFAULT_EPS_TRUNC).unwrap();
    }

    #[test]
    fn tms_marginal_is_thermal() {
        let s = tms_state(0.06, 4).unwrap();
        // truncated-series oracle for <n(n-1)>/<n>^2
        let (mut m1, mut m2) = (0.0, 0.0);
        for n in 0..=4 {
            let p = 0.94 * 0.06f64.powi(n);
            m1 += n as f64 * p;
            m2 += (n * (n.max(1) - 1)) as f64 * p;
        }
        let g2 = s.g2(ModeId(0)).unwrap();
        assert_abs_diff_eq!(g2, m2 / (m1 * m1), epsilon = 1e-12);
        assert!((g2 - 2.0).abs() < 0.04);
    }

    #[test]
    fn tms_rejects_bad_parameters() {
        assert!(tms_state(1.0, 3).is_err());
        assert!(tms_state(-0.1, 3).is_err());
        assert!(tms_state(0.1, 0).is_err());
    }

    #[test]
    fn balanced_splitter_single_photon() {
        let s = TruncatedState::fock(&[1, 0], 2).unwrap();
        let out = s.beam_splitter(ModeId(0), ModeId(1), 0.5, 0.0).unwrap();
        let pa = out.measure_click(ModeId(0), 1.0, 0.0).unwrap().p_click;
        let pb = out.measure_click(ModeId(1), 1.0, 0.0).unwrap().p_click;
        assert_abs_diff_eq!(pa, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pb, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn hong_ou_mandel_dip() {
        let s = TruncatedState::fock(&[1, 1], 2).unwrap();
        let out = s.beam_splitter(ModeId(0), ModeId(1), 0.5, 0.0).unwrap();
        let coinc = out.populations()[3]; // |1,1>
        assert_abs_diff_eq!(coinc, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.leakage(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_photon_interference() {
        for &phi in &[0.0, 0.4, 1.3, PI, 4.0] {
            let out = single_superposition(phi)
                .beam_splitter(ModeId(0), ModeId(1), 0.5, 0.0)
                .unwrap();
            let p0 = out.photon_distribution(ModeId(0)).unwrap()[1];
            let p1 = out.photon_distribution(ModeId(1)).unwrap()[1];
            assert_abs_diff_eq!(p0, (1.0 - phi.cos()) / 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p1, (1.0 + phi.cos()) / 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn splitter_rejects_same_mode() {
        let s = TruncatedState::vacuum(2, 2).unwrap();
        assert!(s.beam_splitter(ModeId(1), ModeId(1), 0.5, 0.0).is_err());
    }

    #[test]
    fn loss_identity_and_thinning() {
        let s = tms_state(0.06, 4).unwrap();
        let same = s.apply_loss(ModeId(0), 1.0).unwrap();
        assert!(s.max_abs_diff(&same) < 1e-15);

        let one = TruncatedState::fock(&[1], 3).unwrap();
        let p = one
            .apply_loss(ModeId(0), 0.3)
            .unwrap()
            .photon_distribution(ModeId(0))
            .unwrap();
        assert_abs_diff_eq!(p[1], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn geometric_no_click_after_loss() {
        let chi: f64 = 0.06;
        let t: f64 = 0.5;
        // brute-force series over a long geometric tail
        let series: f64 = (0..200).map(|n| (1.0 - chi) * chi.powi(n) * (1.0 - t).powi(n)).sum();
        assert_abs_diff_eq!(series, 0.94 / 0.97, epsilon = 1e-12);

        let s = tms_state(chi, 4).unwrap().apply_loss(ModeId(0), t).unwrap();
        let p0 = s.photon_distribution(ModeId(0)).unwrap()[0];
        assert_abs_diff_eq!(p0 / s.trace(), series, epsilon = 1e-6);

        let m = tms_state(chi, 4).unwrap().measure_click(ModeId(0), t, 0.0).unwrap();
        assert_abs_diff_eq!(m.p_click, 1.0 - series, epsilon = 1e-6);
    }

    #[test]
    fn phase_shift_properties() {
        let vac = TruncatedState::vacuum(2, 2).unwrap();
        assert!(vac.max_abs_diff(&vac.phase_shift(ModeId(0), 1.1).unwrap()) < 1e-15);

        let s = single_superposition(0.0);
        let flipped = s.phase_shift(ModeId(1), PI).unwrap();
        let bright = s.beam_splitter(ModeId(0), ModeId(1), 0.5, 0.0).unwrap();
        let dark = flipped.beam_splitter(ModeId(0), ModeId(1), 0.5, 0.0).unwrap();
        assert_abs_diff_eq!(bright.photon_distribution(ModeId(1)).unwrap()[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dark.photon_distribution(ModeId(1)).unwrap()[1], 0.0, epsilon = 1e-12);

        let t = tms_state(0.2, 3).unwrap();
        assert!(t.max_abs_diff(&t.phase_shift(ModeId(1), 2.0 * PI).unwrap()) < 1e-12);
    }

    #[test]
    fn click_examples() {
        let one = TruncatedState::fock(&[1], 2).unwrap();
        assert_abs_diff_eq!(
            one.measure_click(ModeId(0), 1.0, 0.0).unwrap().p_click,
            1.0,
            epsilon = 1e-15
        );
        let vac = TruncatedState::vacuum(1, 2).unwrap();
        let m = vac.measure_click(ModeId(0), 1.0, 1e-3).unwrap();
        assert_abs_diff_eq!(m.p_click, 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(m.p_click + m.p_noclick, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_branch_signalled_on_access() {
        let vac = TruncatedState::vacuum(2, 2).unwrap();
        let m = vac.measure_click(ModeId(0), 1.0, 0.0).unwrap();
        assert!(matches!(m.post_click(), Err(Error::Degenerate(_))));
        assert!(m.post_noclick().is_ok());
    }

    #[test]
    fn click_traces_out_measured_mode() {
        let s = tms_state(0.1, 4).unwrap();
        let m = s.measure_click(ModeId(1), 0.5, 0.0).unwrap();
        let post = m.post_click().unwrap();
        assert_eq!(post.mode_count(), 1);
        post.validate(DEFAULT_EPS_TRUNC).unwrap();
    }

    #[test]
    fn oracle_small_chi_limit() {
        let v = oracle_readout_visibility(1e-4, 1e-3, 0.25, 1.0, 4, ReadoutBackground::NONE).unwrap();
        assert!((v - 1.0).abs() < 1e-3, "{v}");
    }

    #[test]
    fn trig_poly_recovers_coefficients() {
        let f = |x: f64| 0.3 + 0.2 * x.cos() - 0.1 * (2.0 * x).sin();
        let p = TrigPoly::from_fn(3, f);
        assert_abs_diff_eq!(p.c0, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(p.cos[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(p.sin[1], -0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(p.eval(0.77), f(0.77), epsilon = 1e-12);
    }
}
