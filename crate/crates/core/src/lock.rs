//! Phase stabilization: dual-band probe interference, thermal drift
//! bookkeeping and a time-stepped two-actuator lock loop.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_nonneg, Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Thermal expansion coefficient of standard fiber, 1/K.
pub const FIBER_EXPANSION: f64 = 5.5e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualBandParams {
    /// Signal (write-out) photon frequency, Hz.
    pub nu0: f64,
    /// Symmetric probe detuning, Hz.
    pub delta_nu: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub psi_plus: f64,
    pub psi_minus: f64,
    pub n0: f64,
    /// Index change between `ν0` and `ν0 + δν`; linear dispersion is assumed.
    pub delta_n: f64,
    pub apd_bandwidth: f64,
}

impl DualBandParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta_nu > 0.0) {
            return Err(Error::param("delta_nu", "must be positive"));
        }
        for (name, a) in [("a1", self.a1), ("a2", self.a2), ("b1", self.b1), ("b2", self.b2)] {
            check_nonneg(name, a)?;
        }
        if self.apd_bandwidth > 0.01 * 2.0 * self.delta_nu {
            return Err(Error::param(
                "apd_bandwidth",
                "detector bandwidth must stay below 1% of the probe beat",
            ));
        }
        Ok(())
    }

    pub fn k_plus(&self) -> f64 {
        2.0 * PI * (self.n0 + self.delta_n) * (self.nu0 + self.delta_nu) / SPEED_OF_LIGHT
    }

    pub fn k_minus(&self) -> f64 {
        2.0 * PI * (self.n0 - self.delta_n) * (self.nu0 - self.delta_nu) / SPEED_OF_LIGHT
    }

    /// Signal wave number `k0`.
    pub fn k0(&self) -> f64 {
        2.0 * PI * self.n0 * self.nu0 / SPEED_OF_LIGHT
    }

    /// Mean probe wave number `(k+ + k−)/2`.
    pub fn k_mean(&self) -> f64 {
        0.5 * (self.k_plus() + self.k_minus())
    }

    /// Half the probe wave-number splitting, `(2π/c)(n0·δν + ν0·δn)`.
    pub fn delta_k(&self) -> f64 {
        2.0 * PI * (self.n0 * self.delta_nu + self.nu0 * self.delta_n) / SPEED_OF_LIGHT
    }

    /// Angular beat frequency between the probe tones.
    pub fn delta_omega(&self) -> f64 {
        4.0 * PI * self.delta_nu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferometerGeometry {
    pub l1: f64,
    pub l2: f64,
    pub l_ro: f64,
    pub l_wol: f64,
    pub l_pl: f64,
    pub k_ro: f64,
    pub k_wo: f64,
    pub k_lo: f64,
    pub k_p: f64,
}

impl InterferometerGeometry {
    pub fn delta_l(&self) -> f64 {
        self.l1 - self.l2
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [
            ("l1", self.l1),
            ("l2", self.l2),
            ("l_ro", self.l_ro),
            ("l_wol", self.l_wol),
            ("l_pl", self.l_pl),
        ] {
            check_nonneg(name, l)?;
        }
        Ok(())
    }
}

/// Optical phases of one node.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodePhases {
    pub phi_w: f64,
    pub phi_wo: f64,
    pub phi_r: f64,
    pub phi_ro: f64,
}

/// Phase bookkeeping of the write-read interferometer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseBudget {
    pub a: NodePhases,
    pub b: NodePhases,
    pub delta_phi_wr: f64,
}

impl PhaseBudget {
    pub fn new(a: NodePhases, b: NodePhases) -> Self {
        let local = (a.phi_w + a.phi_r) - (b.phi_w + b.phi_r);
        let remote = (a.phi_wo + a.phi_ro) - (b.phi_wo + b.phi_ro);
        Self {
            a,
            b,
            delta_phi_wr: local + remote,
        }
    }
}

/// Detected probe intensity at time `t` including the beat terms at `Δω`.
pub fn dual_band_intensity_exact(p: &DualBandParams, g: &InterferometerGeometry, t: f64) -> f64 {
    let dl = g.delta_l();
    let (kp, km) = (p.k_plus(), p.k_minus());
    let (cp, sp) = ((kp * dl / 2.0).cos(), (kp * dl / 2.0).sin());
    let (cm, sm) = ((km * dl / 2.0).cos(), (km * dl / 2.0).sin());
    let (asum, adif) = (p.a1 + p.a2, p.a1 - p.a2);
    let (bsum, bdif) = (p.b1 + p.b2, p.b1 - p.b2);
    let x = -p.delta_omega() * t + 0.5 * (kp - km) * (g.l1 + g.l2) + (p.psi_minus - p.psi_plus);
    asum * asum * cp * cp
        + adif * adif * sp * sp
        + bsum * bsum * cm * cm
        + bdif * bdif * sm * sm
        + 2.0 * asum * bsum * x.cos() * cp * cm
        + 2.0 * adif * bdif * x.cos() * sp * sm
        + 2.0 * asum * bdif * x.sin() * cp * sm
        - 2.0 * adif * bsum * x.sin() * sp * cm
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualBandEnvelope {
    pub s_offset: f64,
    pub a_tilde: f64,
    pub intensity: f64,
    /// Set when the bands are unbalanced beyond 5%; carries the bound on the
    /// dropped `sin(k̄ΔL)` term.
    pub warning: Option<String>,
}

/// Low-pass (beat-free) intensity in the balanced-band approximation.
pub fn dual_band_envelope(p: &DualBandParams, g: &InterferometerGeometry) -> DualBandEnvelope {
    let s = p.a1 * p.a1 + p.a2 * p.a2 + p.b1 * p.b1 + p.b2 * p.b2;
    let (pa, pb) = (p.a1 * p.a2, p.b1 * p.b2);
    let dl = g.delta_l();
    let a_tilde = 2.0 * (pa + pb) * (p.delta_k() * dl).cos();
    let scale = pa.max(pb);
    let warning = if scale > 0.0 && (pa - pb).abs() > 0.05 * scale {
        Some(format!(
            "bands unbalanced: dropped term bounded by 2|A1A2 - B1B2| = {:.4}",
            2.0 * (pa - pb).abs()
        ))
    } else {
        None
    };
    DualBandEnvelope {
        s_offset: s,
        a_tilde,
        intensity: s + a_tilde * (p.k0() * dl).cos(),
        warning,
    }
}

/// Average of the exact intensity over `periods` beat periods.
pub fn time_averaged_intensity(
    p: &DualBandParams,
    g: &InterferometerGeometry,
    periods: usize,
    samples_per_period: usize,
) -> f64 {
    let period = 2.0 * PI / p.delta_omega();
    let n = periods * samples_per_period;
    let dt = period / samples_per_period as f64;
    (0..n)
        .map(|i| dual_band_intensity_exact(p, g, (i as f64 + 0.5) * dt))
        .sum::<f64>()
        / n as f64
}

/// Peak-to-peak probe fringe amplitude at each arm-length difference in
/// `delays`, measured the way a delay-line scan would: the beat-averaged
/// intensity is sampled across one optical fringe and a sinusoid at the mean
/// probe wave number is fitted to it.
pub fn fringe_amplitude_scan(p: &DualBandParams, g: &InterferometerGeometry, delays: &[f64]) -> Vec<(f64, f64)> {
    const STEPS: usize = 8;
    let k = p.k_mean();
    delays
        .iter()
        .map(|&d| {
            let (mut c, mut s) = (0.0, 0.0);
            for i in 0..STEPS {
                let x = 2.0 * PI * i as f64 / (STEPS as f64 * k);
                let gi = InterferometerGeometry { l1: g.l2 + d + x, ..*g };
                let y = time_averaged_intensity(p, &gi, 1, 64);
                let arg = k * (d + x);
                c += y * arg.cos();
                s += y * arg.sin();
            }
            let amp = 2.0 * c.hypot(s) / STEPS as f64;
            (d, 2.0 * amp)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    /// Half the probe wave-number splitting, 1/m.
    pub delta_k: f64,
    /// Probe detuning inferred with `n0`, Hz.
    pub delta_nu: f64,
    pub amplitude: f64,
    pub rms_residual: f64,
}

// Linear least squares of y against [1, cos wx, sin wx]; returns (coefs, sse).
fn lsq_harmonic(xs: &[f64], ys: &[f64], w: f64) -> Option<([f64; 3], f64)> {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut aty = nalgebra::Vector3::<f64>::zeros();
    for (&x, &y) in xs.iter().zip(ys) {
        let row = nalgebra::Vector3::new(1.0, (w * x).cos(), (w * x).sin());
        ata += row * row.transpose();
        aty += row * y;
    }
    let c = ata.try_inverse()? * aty;
    let sse = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| (y - c[0] - c[1] * (w * x).cos() - c[2] * (w * x).sin()).powi(2))
        .sum();
    Some(([c[0], c[1], c[2]], sse))
}

/// Fit the peak-to-peak fringe amplitude `∝ |cos(δk·ΔL)|` versus delay.
///
/// The squared amplitude is a pure sinusoid at `2δk`, so the frequency is
/// found by a grid search refined with golden-section steps, with the linear
/// coefficients solved exactly at each trial frequency.
pub fn envelope_fit(samples: &[(f64, f64)], n0: f64) -> Result<EnvelopeFit> {
    if samples.len() < 5 {
        return Err(Error::InsufficientData("envelope fit needs 5 samples".into()));
    }
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1 * s.1).collect();
    let ymax = ys.iter().cloned().fold(0.0, f64::max);
    if ymax <= 0.0 {
        return Err(Error::IllConditioned("zero fringe amplitude".into()));
    }
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let span = xmax - xmin;
    let mut sorted = xs.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let min_step = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !(span > 0.0) || !min_step.is_finite() {
        return Err(Error::IllConditioned("delays do not span an interval".into()));
    }
    // w = 2δk between a quarter cycle over the span and the sampling limit
    let w_lo = 0.5 * PI / span;
    let w_hi = PI / min_step;
    let sse = |w: f64| lsq_harmonic(&xs, &ys, w).map_or(f64::INFINITY, |r| r.1);
    let n_grid = 4000;
    let mut best = (f64::INFINITY, w_lo);
    let step = (w_hi - w_lo) / n_grid as f64;
    for i in 0..=n_grid {
        let w = w_lo + step * i as f64;
        let e = sse(w);
        if e < best.0 {
            best = (e, w);
        }
    }
    let (mut a, mut b) = ((best.1 - step).max(w_lo), (best.1 + step).min(w_hi));
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let w = 0.5 * (a + b);
    let (coef, err) =
        lsq_harmonic(&xs, &ys, w).ok_or_else(|| Error::IllConditioned("singular normal equations".into()))?;
    let amp = coef[1].hypot(coef[2]);
    if amp < 1e-9 * ymax {
        return Err(Error::IllConditioned("no modulation in the data".into()));
    }
    let delta_k = 0.5 * w;
    if delta_k * span < 0.5 * PI {
        return Err(Error::IllConditioned(
            "delay scan spans less than half an envelope period".into(),
        ));
    }
    Ok(EnvelopeFit {
        delta_k,
        delta_nu: delta_k * SPEED_OF_LIGHT / (2.0 * PI * n0),
        amplitude: amp,
        rms_residual: (err / xs.len() as f64).sqrt(),
    })
}

/// Residual phase left by a single-band lock at `k_lo`.
pub fn single_band_residual(g: &InterferometerGeometry, dl_ro_drift: f64, dl_wol_drift: f64) -> f64 {
    (g.k_ro - g.k_lo) * dl_ro_drift + (g.k_wo - g.k_lo) * dl_wol_drift
}

/// Thermal length change of a fiber.
pub fn thermal_drift(length: f64, dt: f64, expansion_coeff: f64) -> f64 {
    length * expansion_coeff * dt
}

/// Two-beam visibility penalty for unequal intensities.
pub fn imbalance_visibility(i1: f64, i2: f64) -> f64 {
    if i1 + i2 <= 0.0 {
        return 0.0;
    }
    2.0 * (i1 * i2).sqrt() / (i1 + i2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DutySchedule {
    pub mot_phase: f64,
    pub entangle_phase: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpectrum {
    /// High-frequency phase noise above the loop bandwidth, rad/√Hz.
    pub white: f64,
    /// Path-independent phase random walk (lasers, free-space optics), rad/√s.
    pub base_walk: f64,
    /// Temperature random walk of every kilometre of fiber, K/√s; sections
    /// are independent so the phase variance grows linearly with length.
    pub temperature_walk: f64,
    pub expansion_coeff: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LockLoopConfig {
    pub fast_loop_gain: f64,
    pub slow_loop_gain: f64,
    pub fast_actuator_stroke: f64,
    pub slow_actuator_stroke: f64,
    pub relock_threshold: f64,
    pub relock_dead_time: f64,
    pub duty_schedule: DutySchedule,
    pub noise_spectrum: NoiseSpectrum,
    pub time_step: f64,
    /// Closed-loop bandwidth the step must resolve, Hz.
    pub loop_bandwidth: f64,
    /// Keep every n-th sample in the trajectory; statistics use all steps.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_stride() -> usize {
    1
}

impl LockLoopConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [
            ("fast_loop_gain", self.fast_loop_gain),
            ("slow_loop_gain", self.slow_loop_gain),
        ] {
            if !(g > 0.0 && g < 2.0) {
                return Err(Error::param(name, format!("{g} outside (0, 2)")));
            }
        }
        for (name, s) in [
            ("fast_actuator_stroke", self.fast_actuator_stroke),
            ("slow_actuator_stroke", self.slow_actuator_stroke),
            ("relock_threshold", self.relock_threshold),
        ] {
            if !(s > 0.0) {
                return Err(Error::param(name, "must be positive"));
            }
        }
        check_nonneg("relock_dead_time", self.relock_dead_time)?;
        check_nonneg("white", self.noise_spectrum.white)?;
        check_nonneg("base_walk", self.noise_spectrum.base_walk)?;
        check_nonneg("temperature_walk", self.noise_spectrum.temperature_walk)?;
        if !(self.time_step > 0.0) {
            return Err(Error::param("time_step", "must be positive"));
        }
        if !(self.loop_bandwidth > 0.0) {
            return Err(Error::param("loop_bandwidth", "must be positive"));
        }
        if self.time_step > 1.0 / (10.0 * self.loop_bandwidth) {
            return Err(Error::param(
                "time_step",
                format!(
                    "{} s does not resolve a {} Hz loop",
                    self.time_step, self.loop_bandwidth
                ),
            ));
        }
        if self.record_stride == 0 {
            return Err(Error::param("record_stride", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhaseSample {
    pub t: f64,
    pub residual_phase: f64,
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseTrajectory {
    pub samples: Vec<PhaseSample>,
    pub relock_count: usize,
    /// RMS of the residual over locked steps.
    pub residual_rms: f64,
    /// Fraction of steps spent relocking.
    pub dead_fraction: f64,
}

fn wrap(phi: f64) -> f64 {
    let x = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if x == -PI {
        PI
    } else {
        x
    }
}

/// Time-stepped lock simulation.
///
/// The fiber path length performs a random walk driven by independent
/// temperature fluctuations of each kilometre; a path-independent walk and
/// white phase noise are added on top. The fast actuator integrates the
/// probe error on every step within its stroke. The slow actuator offloads the
/// fast one only during MOT windows and holds during entangling windows.
/// Exceeding the slow stroke, or a residual beyond `relock_threshold`,
/// unlocks the loop for the dead time, during which the signal phase is
/// uncontrolled; the lock then re-acquires the nearest fringe.
pub fn simulate_lock(
    cfg: &LockLoopConfig,
    p: &DualBandParams,
    g: &InterferometerGeometry,
    duration: f64,
    seed: u64,
) -> Result<PhaseTrajectory> {
    cfg.validate()?;
    check_nonneg("duration", duration)?;
    let dt = cfg.time_step;
    let steps = (duration / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = &cfg.noise_spectrum;

    let k_lock = p.k_mean();
    let k_sig = g.k_wo;
    let fiber_km = (g.l1 + g.l2) / 1000.0;
    // per-step path increment (m) from the fiber temperature walk
    let sigma_path = 1000.0 * ns.expansion_coeff * ns.temperature_walk * (fiber_km * dt).sqrt();
    let sigma_base = ns.base_walk * dt.sqrt();
    let sigma_white = ns.white * (0.5 / dt).sqrt();
    // discriminator slope set by the probe envelope at the static imbalance
    let slope = (p.delta_k() * g.delta_l()).cos().abs();

    let period = cfg.duty_schedule.mot_phase + cfg.duty_schedule.entangle_phase;
    let mut path = 0.0; // m
    let mut base = 0.0; // rad, common to probe and signal
    let (mut u_fast, mut u_slow) = (0.0f64, 0.0f64); // probe-phase units
    let mut dead_left = 0usize;
    let dead_steps = (cfg.relock_dead_time / dt).round() as usize;

    let mut samples = Vec::with_capacity(steps / cfg.record_stride + 1);
    let mut relocks = 0usize;
    let (mut sum_sq, mut n_locked, mut n_dead) = (0.0f64, 0usize, 0usize);

    for i in 0..steps {
        let t = i as f64 * dt;
        if sigma_path > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            path += sigma_path * z;
        }
        if sigma_base > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            base += sigma_base * z;
        }
        let white = if sigma_white > 0.0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma_white * z
        } else {
            0.0
        };
        let u = u_fast + u_slow;
        // the discriminator is periodic, so the lock sees the wrapped error
        let probe_err = wrap(k_lock * path + base - u);

        let (residual, locked) = if dead_left > 0 {
            dead_left -= 1;
            if dead_left == 0 {
                // re-acquire the nearest fringe with a centered slow actuator
                u_fast = 0.0;
                u_slow = wrap(k_lock * path + base);
            }
            (rng.random_range(-PI..PI), false)
        } else {
            let signal = k_sig * path + base - u * (k_sig / k_lock) + white;
            let r = wrap(signal);
            if probe_err.abs() > cfg.relock_threshold {
                relocks += 1;
                dead_left = dead_steps.max(1);
                (r, false)
            } else {
                u_fast = (u_fast + cfg.fast_loop_gain * slope * probe_err)
                    .clamp(-cfg.fast_actuator_stroke, cfg.fast_actuator_stroke);
                if period > 0.0 && t.rem_euclid(period) < cfg.duty_schedule.mot_phase {
                    let moved = cfg.slow_loop_gain * u_fast;
                    u_slow += moved;
                    u_fast -= moved;
                    if u_slow.abs() > cfg.slow_actuator_stroke {
                        relocks += 1;
                        dead_left = dead_steps.max(1);
                    }
                }
                (r, true)
            }
        };
        if locked {
            sum_sq += residual * residual;
            n_locked += 1;
        } else {
            n_dead += 1;
        }
        if i % cfg.record_stride == 0 {
            samples.push(PhaseSample {
                t,
                residual_phase: residual,
                locked,
            });
        }
    }
    Ok(PhaseTrajectory {
        samples,
        relock_count: relocks,
        residual_rms: if n_locked > 0 {
            (sum_sq / n_locked as f64).sqrt()
        } else {
            0.0
        },
        dead_fraction: if steps > 0 { n_dead as f64 / steps as f64 } else { 0.0 },
    })
}

/// `|⟨e^{iφ}⟩|` over all recorded samples, unlocked intervals included.
pub fn visibility_from_phase(traj: &PhaseTrajectory) -> Result<f64> {
    if traj.samples.is_empty() {
        return Err(Error::InsufficientData("empty phase trajectory".into()));
    }
    let (c, s) = traj.samples.iter().fold((0.0, 0.0), |(c, s), x| {
        (c + x.residual_phase.cos(), s + x.residual_phase.sin())
    });
    let n = traj.samples.len() as f64;
    Ok((c.hypot(s) / n).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> DualBandParams {
        DualBandParams {
            nu0: SPEED_OF_LIGHT / 1522e-9,
            delta_nu: 675e6,
            a1: 1.0,
            a2: 1.0,
            b1: 1.0,
            b2: 1.0,
            psi_plus: 0.0,
            psi_minus: 0.0,
            n0: 1.0,
            delta_n: 0.0,
            apd_bandwidth: 1e6,
        }
    }

    fn geometry(dl: f64) -> InterferometerGeometry {
        InterferometerGeometry {
            l1: 1.0 + dl,
            l2: 1.0,
            l_ro: 10.0,
            l_wol: 0.0,
            l_pl: 0.0,
            k_ro: 0.0,
            k_wo: 0.0,
            k_lo: 0.0,
            k_p: 0.0,
        }
    }

    #[test]
    fn constructive_equal_amplitudes() {
        let p = params();
        let g = geometry(0.0);
        let avg = time_averaged_intensity(&p, &g, 1, 256);
        assert_abs_diff_eq!(avg, 8.0, epsilon = 1e-9);
        let env = dual_band_envelope(&p, &g);
        assert_abs_diff_eq!(env.intensity, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn single_band_reduces() {
        let mut p = params();
        p.b1 = 0.0;
        p.b2 = 0.0;
        p.a2 = 0.6;
        let g = geometry(0.123);
        let h = p.k_plus() * g.delta_l() / 2.0;
        let want = 1.6f64.powi(2) * h.cos().powi(2) + 0.4f64.powi(2) * h.sin().powi(2);
        assert_abs_diff_eq!(dual_band_intensity_exact(&p, &g, 3e-9), want, epsilon = 1e-9);
    }

    #[test]
    fn envelope_null() {
        let p = params();
        let g = geometry(PI / 2.0 / p.delta_k());
        assert_abs_diff_eq!(dual_band_envelope(&p, &g).a_tilde, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn unbalanced_bands_warn() {
        let mut p = params();
        p.b1 = 0.5;
        assert!(dual_band_envelope(&p, &geometry(0.01)).warning.is_some());
    }

    #[test]
    fn detuning_conversion() {
        let fit_dk = 14.2;
        let nu = fit_dk * SPEED_OF_LIGHT / (2.0 * PI);
        assert!((nu - 678e6).abs() < 1e6, "{nu}");
    }

    #[test]
    fn drift_examples() {
        assert_abs_diff_eq!(thermal_drift(100e3, 0.2, 5.5e-7), 0.011, epsilon = 1e-12);
        assert_eq!(thermal_drift(0.0, 1.0, 5.5e-7), 0.0);
        assert_abs_diff_eq!(thermal_drift(10.0, 1.0, 5.5e-7), 5.5e-6, epsilon = 1e-18);
        assert_eq!(single_band_residual(&geometry(0.0), 0.0, 0.0), 0.0);
    }

    #[test]
    fn phase_budget_sums() {
        let a = NodePhases {
            phi_w: 0.1,
            phi_wo: 0.2,
            phi_r: 0.3,
            phi_ro: 0.4,
        };
        let b = NodePhases {
            phi_w: 0.05,
            phi_wo: 0.0,
            phi_r: 0.1,
            phi_ro: 0.2,
        };
        let pb = PhaseBudget::new(a, b);
        assert_abs_diff_eq!(pb.delta_phi_wr, (0.4 - 0.15) + (0.6 - 0.2), epsilon = 1e-15);
    }

    #[test]
    fn imbalance_penalty() {
        assert_abs_diff_eq!(imbalance_visibility(1.0, 1.0), 1.0, epsilon = 1e-15);
        assert!(imbalance_visibility(1.0, 2.0) < 1.0);
    }

    #[test]
    fn wrap_range() {
        for x in [-10.0, -PI, 0.0, PI, 7.0] {
            let w = wrap(x);
            assert!(w > -PI - 1e-12 && w <= PI);
            assert_abs_diff_eq!((x - w) / (2.0 * PI), ((x - w) / (2.0 * PI)).round(), epsilon = 1e-9);
        }
    }

    #[test]
    fn visibility_of_constant_phase() {
        let traj = PhaseTrajectory {
            samples: (0..10)
                .map(|i| PhaseSample {
                    t: i as f64,
                    residual_phase: 0.0,
                    locked: true,
                })
                .collect(),
            relock_count: 0,
            residual_rms: 0.0,
            dead_fraction: 0.0,
        };
        assert_abs_diff_eq!(visibility_from_phase(&traj).unwrap(), 1.0, epsilon = 1e-15);
        let empty = PhaseTrajectory {
            samples: vec![],
            ..traj
        };
        assert!(visibility_from_phase(&empty).is_err());
    }
}
