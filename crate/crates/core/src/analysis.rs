//! Estimators and closed-form visibility factors.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, Error, Result};

/// A value with a one-standard-deviation uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub sigma: f64,
}

impl Quantity {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }

    fn rel(&self) -> f64 {
        if self.value == 0.0 {
            0.0
        } else {
            self.sigma / self.value
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub visibility: f64,
    pub visibility_sigma: f64,
    /// Covariance of `(offset, a_cos, a_sin)`.
    pub covariance: [[f64; 3]; 3],
}

/// Weighted least-squares fit of click rates to
/// `offset·(1 + V·cos(θ − phase))`.
///
/// `points` holds `(θ, counts, trials)`. Weights follow Poisson counting
/// statistics, so the visibility is unchanged under a uniform rescaling of
/// the counts.
pub fn fit_sinusoid(points: &[(f64, u64, u64)]) -> Result<FitResult> {
    let mut thetas: Vec<f64> = points
        .iter()
        .filter(|p| p.2 > 0)
        .map(|p| p.0.rem_euclid(2.0 * std::f64::consts::PI))
        .collect();
    thetas.sort_by(|a, b| a.total_cmp(b));
    thetas.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if thetas.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "fringe fit needs 4 distinct phases, got {}",
            thetas.len()
        )));
    }
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for &(theta, counts, trials) in points.iter().filter(|p| p.2 > 0) {
        let n = trials as f64;
        let rate = counts as f64 / n;
        let var = (counts.max(1) as f64) / (n * n);
        let w = 1.0 / var;
        let row = Vector3::new(1.0, theta.cos(), theta.sin());
        ata += row * row.transpose() * w;
        aty += row * (rate * w);
    }
    let cov = ata
        .try_inverse()
        .ok_or_else(|| Error::FitFailure("singular normal equations".into()))?;
    let c = cov * aty;
    if !(c[0] > 0.0) {
        return Err(Error::FitFailure(format!("non-positive fitted offset {}", c[0])));
    }
    let amp = c[1].hypot(c[2]);
    let v = amp / c[0];
    let grad = if amp > 0.0 {
        Vector3::new(-v / c[0], c[1] / (amp * c[0]), c[2] / (amp * c[0]))
    } else {
        Vector3::new(0.0, 1.0 / c[0], 0.0)
    };
    let var_v = (grad.transpose() * cov * grad)[(0, 0)];
    let mut covariance = [[0.0; 3]; 3];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = cov[(i, j)];
        }
    }
    Ok(FitResult {
        amplitude: amp,
        phase: c[2].atan2(c[1]),
        offset: c[0],
        visibility: v,
        visibility_sigma: var_v.max(0.0).sqrt(),
        covariance,
    })
}

/// Per-node excitation statistics `p_ij`, i excitations read at node A and
/// j at node B (0 or at least 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PijEstimate {
    pub p00: Quantity,
    pub p01: Quantity,
    pub p10: Quantity,
    pub p11: Quantity,
    pub heralds: u64,
}

impl PijEstimate {
    pub fn values(&self) -> [f64; 4] {
        [self.p00.value, self.p01.value, self.p10.value, self.p11.value]
    }
}

/// Whether `p_ij` are reported as detected or divided by detection
/// efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum PijPolicy {
    #[default]
    Raw,
    Corrected {
        efficiency: f64,
    },
}

/// Estimate `p_ij` from node-basis click pairs `(A clicked, B clicked)`.
pub fn estimate_pij(
    clicks: impl IntoIterator<Item = (bool, bool)>,
    policy: PijPolicy,
    min_heralds: u64,
) -> Result<PijEstimate> {
    let mut n = [0u64; 4];
    for (a, b) in clicks {
        n[(a as usize) * 2 + b as usize] += 1;
    }
    estimate_pij_counts(n, policy, min_heralds)
}

/// [`estimate_pij`] from tallies `[n00, n01, n10, n11]`.
pub fn estimate_pij_counts(n: [u64; 4], policy: PijPolicy, min_heralds: u64) -> Result<PijEstimate> {
    let total: u64 = n.iter().sum();
    if total < min_heralds.max(1) {
        return Err(Error::InsufficientData(format!(
            "{total} heralded trials, need {min_heralds}"
        )));
    }
    let t = total as f64;
    let bin = |k: u64| {
        let p = k as f64 / t;
        Quantity::new(p, (p * (1.0 - p) / t).sqrt())
    };
    let (p00, p01, p10, p11) = (bin(n[0]), bin(n[1]), bin(n[2]), bin(n[3]));
    match policy {
        PijPolicy::Raw => Ok(PijEstimate {
            p00,
            p01,
            p10,
            p11,
            heralds: total,
        }),
        PijPolicy::Corrected { efficiency } => {
            check_fraction("efficiency", efficiency)?;
            if efficiency <= 0.0 {
                return Err(Error::param("efficiency", "must be positive"));
            }
            let e = efficiency;
            let pa = (p10.value + p11.value) / e;
            let pb = (p01.value + p11.value) / e;
            let pab = p11.value / (e * e);
            let c11 = pab;
            let c10 = pa - pab;
            let c01 = pb - pab;
            let c00 = 1.0 - c10 - c01 - c11;
            let scale = |q: Quantity, s: f64| Quantity::new(0.0, q.sigma * s);
            Ok(PijEstimate {
                p00: Quantity::new(c00, p00.sigma / e),
                p01: Quantity {
                    value: c01,
                    ..scale(p01, 1.0 / e)
                },
                p10: Quantity {
                    value: c10,
                    ..scale(p10, 1.0 / e)
                },
                p11: Quantity {
                    value: c11,
                    ..scale(p11, 1.0 / (e * e))
                },
                heralds: total,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcurrenceEstimate {
    pub p: [f64; 4],
    pub v: f64,
    pub d: f64,
    pub c: f64,
    pub sigma_c: f64,
}

/// `C = max(0, 2|d| − 2√(p00·p11))` with `d = V(p01+p10)/2`.
///
/// `p` is `[p00, p01, p10, p11]`; uncertainties are propagated to first
/// order assuming independent inputs.
pub fn concurrence(p: [Quantity; 4], v: Quantity) -> Result<ConcurrenceEstimate> {
    let vals = p.map(|q| q.value);
    if vals.iter().any(|&x| x < 0.0) {
        return Err(Error::Domain("negative probability".into()));
    }
    let sum: f64 = vals.iter().sum();
    if !(0.99..=1.01).contains(&sum) {
        return Err(Error::Normalization(sum));
    }
    let [p00, p01, p10, p11] = vals;
    let d = v.value * (p01 + p10) / 2.0;
    let sub = 2.0 * (p00 * p11).sqrt();
    let c = (2.0 * d.abs() - sub).max(0.0);
    // the square root is not differentiable at zero; use a one-sigma step
    let dsqrt = |x: f64, other: f64, sx: f64| {
        if x > sx * sx {
            (other / x).sqrt() * sx
        } else {
            2.0 * (other * (x + sx)).sqrt() - 2.0 * (other * x).sqrt()
        }
    };
    let terms = [
        (p01 + p10) * v.sigma,
        v.value.abs() * p[1].sigma,
        v.value.abs() * p[2].sigma,
        dsqrt(p00, p11, p[0].sigma),
        dsqrt(p11, p00, p[3].sigma),
    ];
    let sigma_c = terms.iter().map(|t| t * t).sum::<f64>().sqrt();
    Ok(ConcurrenceEstimate {
        p: vals,
        v: v.value,
        d,
        c,
        sigma_c,
    })
}

/// Herald-noise visibility factor `snr/(snr+κ)`.
pub fn v_snr(snr: f64, kappa: f64) -> Result<f64> {
    if snr < 0.0 || kappa < 0.0 {
        return Err(Error::Domain("snr and κ must be non-negative".into()));
    }
    if snr.is_infinite() {
        return Ok(1.0);
    }
    if snr + kappa == 0.0 {
        return Err(Error::Domain("snr + κ = 0".into()));
    }
    Ok(snr / (snr + kappa))
}

/// One-parameter least-squares fit of κ to `(snr, V_SNR)` pairs.
pub fn fit_kappa(rows: &[(f64, f64)]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("no rows".into()));
    }
    let sse = |k: f64| rows.iter().map(|&(s, v)| (s / (s + k) - v).powi(2)).sum::<f64>();
    let (mut a, mut b) = (0.0, 10.0);
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..200 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if sse(c) < sse(d) {
            b = d;
        } else {
            a = c;
        }
    }
    Ok(0.5 * (a + b))
}

/// Gaussian mode-overlap factor for an arrival-time mismatch.
pub fn v_mismatch(dt: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::param("tau", "must be positive"));
    }
    Ok((-(dt / tau).powi(2)).exp())
}

/// Mode duration from `1 − V_M ≈ (Δt/τ)²` by least squares through the origin.
pub fn fit_tau(rows: &[(f64, f64)]) -> Result<f64> {
    let (sxy, sxx) = rows.iter().fold((0.0, 0.0), |(sxy, sxx), &(dt, v)| {
        let x = dt * dt;
        (sxy + x * (1.0 - v), sxx + x * x)
    });
    if !(sxx > 0.0) || !(sxy > 0.0) {
        return Err(Error::Degenerate("mismatch rows carry no information".into()));
    }
    Ok((sxx / sxy).sqrt())
}

/// Forward HOM relation `(g_A + ζ²g_B + 2(1−η)ζ)/(1+ζ)²`.
pub fn hom_g2(g2_a: f64, g2_b: f64, eta: f64, zeta: f64) -> f64 {
    (g2_a + zeta * zeta * g2_b + 2.0 * (1.0 - eta) * zeta) / (1.0 + zeta).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomEstimate {
    pub eta: Quantity,
    /// Set when the implied η lies outside `[−0.1, 1.1]`.
    pub inconsistent: bool,
}

/// Invert the HOM relation for the indistinguishability η.
pub fn hom_indistinguishability(g2_a: Quantity, g2_b: Quantity, g2_hom: Quantity, zeta: f64) -> Result<HomEstimate> {
    if !(zeta > 0.0) {
        return Err(Error::param("zeta", "must be positive"));
    }
    if g2_a.value < 0.0 || g2_b.value < 0.0 || g2_hom.value < 0.0 {
        return Err(Error::Domain("g2 values must be non-negative".into()));
    }
    let k = (1.0 + zeta).powi(2);
    let eta = 1.0 - (k * g2_hom.value - g2_a.value - zeta * zeta * g2_b.value) / (2.0 * zeta);
    let sigma = ((k / (2.0 * zeta) * g2_hom.sigma).powi(2)
        + (g2_a.sigma / (2.0 * zeta)).powi(2)
        + (zeta / 2.0 * g2_b.sigma).powi(2))
    .sqrt();
    Ok(HomEstimate {
        eta: Quantity::new(eta, sigma),
        inconsistent: !(-0.1..=1.1).contains(&eta),
    })
}

/// `√(η_wo·η_ro)` with first-order uncertainty.
pub fn v_indistinguishability(eta_wo: Quantity, eta_ro: Quantity) -> Result<Quantity> {
    check_fraction("eta_wo", eta_wo.value)?;
    check_fraction("eta_ro", eta_ro.value)?;
    let (a, b) = (eta_wo.value, eta_ro.value);
    let v = (a * b).sqrt();
    let sigma = if v > 0.0 {
        0.5 * v * (eta_wo.rel().powi(2) + eta_ro.rel().powi(2)).sqrt()
    } else {
        0.0
    };
    Ok(Quantity::new(v, sigma))
}

/// Higher-order excitation factor `1/(1 + 2χ(3 − 2η_r))`.
pub fn v_high_order(chi: f64, eta_r: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&chi) {
        return Err(Error::param("chi", "outside [0, 1)"));
    }
    check_fraction("eta_r", eta_r)?;
    Ok(1.0 / (1.0 + 2.0 * chi * (3.0 - 2.0 * eta_r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetInputs {
    pub snr: f64,
    pub kappa: f64,
    pub dt: f64,
    pub tau: f64,
    pub eta_wo: Quantity,
    pub eta_ro: Quantity,
    pub chi: f64,
    pub eta_r: f64,
    pub v_p: Quantity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VisibilityBudget {
    pub v_snr: Quantity,
    pub v_m: Quantity,
    pub v_i: Quantity,
    pub v_h: Quantity,
    pub v_p: Quantity,
    pub v_theory: Quantity,
}

/// The five multiplicative visibility factors and their product.
pub fn visibility_budget(inp: &BudgetInputs) -> Result<VisibilityBudget> {
    let v_snr = Quantity::exact(v_snr(inp.snr, inp.kappa)?);
    let v_m = Quantity::exact(v_mismatch(inp.dt, inp.tau)?);
    let v_i = v_indistinguishability(inp.eta_wo, inp.eta_ro)?;
    let v_h = Quantity::exact(v_high_order(inp.chi, inp.eta_r)?);
    let v_p = inp.v_p;
    let factors = [v_snr, v_m, v_i, v_h, v_p];
    if let Some(f) = factors.iter().find(|f| !(0.0..=1.0).contains(&f.value)) {
        return Err(Error::Domain(format!("visibility factor {} outside [0, 1]", f.value)));
    }
    let value: f64 = factors.iter().map(|f| f.value).product();
    let rel = factors.iter().map(|f| f.rel().powi(2)).sum::<f64>().sqrt();
    Ok(VisibilityBudget {
        v_snr,
        v_m,
        v_i,
        v_h,
        v_p,
        v_theory: Quantity::new(value, value * rel),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn synthetic(v: f64, phase: f64, n: usize) -> Vec<(f64, u64, u64)> {
        (0..n)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                let rate = 0.1 * (1.0 + v * (th - phase).cos());
                let trials = 1u64 << 40;
                (th, (rate * trials as f64).round() as u64, trials)
            })
            .collect()
    }

    #[test]
    fn fit_recovers_generator() {
        let f = fit_sinusoid(&synthetic(0.7, 0.4, 8)).unwrap();
        assert_abs_diff_eq!(f.visibility, 0.7, epsilon = 1e-6);
        assert_abs_diff_eq!(f.phase, 0.4, epsilon = 1e-6);
    }

    #[test]
    fn flat_fringe() {
        let f = fit_sinusoid(&synthetic(0.0, 0.0, 6)).unwrap();
        assert!(f.visibility < 1e-6);
    }

    #[test]
    fn too_few_phases() {
        let pts = vec![(0.0, 5, 10), (1.0, 5, 10), (2.0, 5, 10)];
        assert!(matches!(fit_sinusoid(&pts), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn negative_offset_is_fit_failure() {
        // all-zero rates leave no positive offset
        let pts = vec![(0.0, 0, 10), (0.1, 0, 10), (0.2, 0, 10), (0.3, 0, 10)];
        assert!(fit_sinusoid(&pts).is_err());
    }

    #[test]
    fn concurrence_examples() {
        let q = |x| Quantity::exact(x);
        let c = concurrence([q(0.8), q(0.1), q(0.1), q(0.0)], q(0.7)).unwrap();
        assert_abs_diff_eq!(c.c, 0.14, epsilon = 1e-12);
        let c = concurrence([q(0.5), q(0.2), q(0.2), q(0.1)], q(0.0)).unwrap();
        assert_eq!(c.c, 0.0);
        assert!(matches!(
            concurrence([q(0.5), q(0.2), q(0.2), q(0.2)], q(0.5)),
            Err(Error::Normalization(_))
        ));
    }

    #[test]
    fn pij_examples() {
        let p = estimate_pij(std::iter::repeat_n((true, false), 200), PijPolicy::Raw, 100).unwrap();
        assert_eq!(p.p10.value, 1.0);
        let p = estimate_pij(std::iter::repeat_n((false, false), 200), PijPolicy::Raw, 100).unwrap();
        assert_eq!(p.p00.value, 1.0);
        assert!(estimate_pij(std::iter::repeat_n((false, false), 50), PijPolicy::Raw, 100).is_err());
    }

    #[test]
    fn pij_correction_inverts_efficiency() {
        let clicks = (0..1000).map(|i| (i % 4 == 0, false));
        let p = estimate_pij(clicks, PijPolicy::Corrected { efficiency: 0.5 }, 1).unwrap();
        assert_abs_diff_eq!(p.p10.value, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.p00.value, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn snr_factor_examples() {
        assert_eq!(v_snr(f64::INFINITY, 0.24).unwrap(), 1.0);
        assert_abs_diff_eq!(v_snr(3.5, 0.24).unwrap(), 0.936, epsilon = 5e-4);
        assert_abs_diff_eq!(v_snr(26.0, 0.24).unwrap(), 0.991, epsilon = 5e-4);
        assert!(v_snr(0.0, 0.0).is_err());
    }

    #[test]
    fn mismatch_examples() {
        assert_eq!(v_mismatch(0.0, 50e-9).unwrap(), 1.0);
        assert!(v_mismatch(1e-9, 0.0).is_err());
    }

    #[test]
    fn hom_examples() {
        let q = Quantity::exact;
        let e = hom_indistinguishability(q(0.0), q(0.0), q(0.0), 1.0).unwrap();
        assert_abs_diff_eq!(e.eta.value, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(hom_g2(0.387, 0.348, 0.95, 1.0), 0.209, epsilon = 0.01);
        assert_abs_diff_eq!(hom_g2(0.0, 0.0, 0.0, 1.0), 0.5, epsilon = 1e-15);
        assert_eq!(hom_g2(0.0, 0.0, 1.0, 1.0), 0.0);
        let bad = hom_indistinguishability(q(0.0), q(0.0), q(1.0), 1.0).unwrap();
        assert!(bad.inconsistent);
    }

    #[test]
    fn indistinguishability_examples() {
        let q = Quantity::exact;
        assert_eq!(v_indistinguishability(q(1.0), q(1.0)).unwrap().value, 1.0);
        assert_eq!(v_indistinguishability(q(0.7), q(0.0)).unwrap().value, 0.0);
    }

    #[test]
    fn high_order_examples() {
        assert_eq!(v_high_order(0.0, 0.25).unwrap(), 1.0);
        assert_abs_diff_eq!(v_high_order(0.02, 0.25).unwrap(), 0.909, epsilon = 5e-4);
    }

    #[test]
    fn ideal_budget() {
        let b = visibility_budget(&BudgetInputs {
            snr: f64::INFINITY,
            kappa: 0.24,
            dt: 0.0,
            tau: 50e-9,
            eta_wo: Quantity::exact(1.0),
            eta_ro: Quantity::exact(1.0),
            chi: 0.0,
            eta_r: 0.25,
            v_p: Quantity::exact(1.0),
        })
        .unwrap();
        assert_eq!(b.v_theory.value, 1.0);
    }
}
