//! Analytic link budget: fiber loss, per-arm efficiency and noise, heralding
//! statistics, the repeaterless capacity bound and rate scaling fits.

use serde::{Deserialize, Serialize};

use crate::error::{check_fraction, check_nonneg, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSegment {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    #[serde(default)]
    pub extra_loss_db: f64,
}

impl FiberSegment {
    pub fn loss_db(&self) -> f64 {
        self.length_km * self.attenuation_db_per_km + self.extra_loss_db
    }

    /// A segment carrying a fixed total loss, spread over `length_km`.
    pub fn with_total_loss(length_km: f64, loss_db: f64) -> Self {
        if length_km > 0.0 {
            Self {
                length_km,
                attenuation_db_per_km: loss_db / length_km,
                extra_loss_db: 0.0,
            }
        } else {
            Self {
                length_km: 0.0,
                attenuation_db_per_km: 0.0,
                extra_loss_db: loss_db,
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_nonneg("length_km", self.length_km)?;
        check_nonneg("attenuation_db_per_km", self.attenuation_db_per_km)?;
        if !self.extra_loss_db.is_finite() {
            return Err(Error::param("extra_loss_db", "must be finite"));
        }
        Ok(())
    }
}

pub fn total_loss_db(segments: &[FiberSegment]) -> f64 {
    segments.iter().fold(0.0, |acc, s| acc + s.loss_db())
}

/// `10^(−dB/10)` of the concatenated segments; 1 for an empty list.
pub fn fiber_transmittance(segments: &[FiberSegment]) -> f64 {
    10f64.powf(-total_loss_db(segments) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub efficiency: f64,
    pub dark_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arm {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Detector {
    D1,
    D2,
}

impl Detector {
    pub const BOTH: [Detector; 2] = [Detector::D1, Detector::D2];

    pub fn index(self) -> usize {
        match self {
            Detector::D1 => 0,
            Detector::D2 => 1,
        }
    }

    pub fn from_index(i: usize) -> Self {
        if i == 0 {
            Detector::D1
        } else {
            Detector::D2
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Detector::D1 => "D1",
            Detector::D2 => "D2",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub chi: f64,
    pub qfc_efficiency: f64,
    /// Conversion noise rate at the converter output, in Hz.
    pub qfc_noise_rate: f64,
    pub probe_raman_rate: f64,
    pub filter_transmission: f64,
    pub collection_efficiency: f64,
    /// Fraction of converter noise surviving the narrow-band filter chain.
    pub noise_band_factor: f64,
    pub segments_a: Vec<FiberSegment>,
    pub segments_b: Vec<FiberSegment>,
    pub detector_d1: DetectorParams,
    pub detector_d2: DetectorParams,
    pub gate_window: f64,
    #[serde(default)]
    pub trial_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmBudget {
    pub arm_transmittance: f64,
    pub arm_efficiency: f64,
    pub noise_click_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeraldStats {
    /// Heralding probability per trial, exact under the source model.
    pub p_ent: f64,
    /// Small-χ linearization `Σ_j χ(η_Aj + η_Bj)/2`.
    pub p_ent_linear: f64,
    /// Probability of a herald at each detector.
    pub herald_prob: [f64; 2],
    /// Probability that at least one signal photon reaches each detector.
    pub signal_click_prob: [f64; 2],
    pub noise_click_prob: [f64; 2],
    pub snr: [f64; 2],
    /// Herald decomposition per detector by the number of detected photons:
    /// one, several, or none (a noise click).
    pub classes: [HeraldClasses; 2],
    pub warnings: Vec<String>,
}

impl HeraldStats {
    pub fn snr_of(&self, d: Detector) -> f64 {
        self.snr[d.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeraldClasses {
    pub single: f64,
    pub multi: f64,
    pub noise: f64,
}

/// Photon routing probabilities of one node: to D1, to D2, lost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Routing {
    pub to_d1: f64,
    pub to_d2: f64,
}

impl Routing {
    pub fn to(&self, d: Detector) -> f64 {
        match d {
            Detector::D1 => self.to_d1,
            Detector::D2 => self.to_d2,
        }
    }

    pub fn lost(&self) -> f64 {
        1.0 - self.to_d1 - self.to_d2
    }
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.chi) {
            return Err(Error::param("chi", format!("{} is outside [0, 1)", self.chi)));
        }
        check_fraction("qfc_efficiency", self.qfc_efficiency)?;
        check_fraction("filter_transmission", self.filter_transmission)?;
        check_fraction("collection_efficiency", self.collection_efficiency)?;
        check_fraction("noise_band_factor", self.noise_band_factor)?;
        check_nonneg("qfc_noise_rate", self.qfc_noise_rate)?;
        check_nonneg("probe_raman_rate", self.probe_raman_rate)?;
        check_nonneg("gate_window", self.gate_window)?;
        for d in [&self.detector_d1, &self.detector_d2] {
            check_fraction("detector.efficiency", d.efficiency)?;
            check_nonneg("detector.dark_rate", d.dark_rate)?;
        }
        for s in self.segments_a.iter().chain(&self.segments_b) {
            s.validate()?;
        }
        Ok(())
    }

    pub fn segments(&self, arm: Arm) -> &[FiberSegment] {
        match arm {
            Arm::A => &self.segments_a,
            Arm::B => &self.segments_b,
        }
    }

    pub fn detector(&self, d: Detector) -> &DetectorParams {
        match d {
            Detector::D1 => &self.detector_d1,
            Detector::D2 => &self.detector_d2,
        }
    }

    /// Combined fiber loss of both arms in dB.
    pub fn total_loss_db(&self) -> f64 {
        total_loss_db(&self.segments_a) + total_loss_db(&self.segments_b)
    }

    /// End-to-end transmittance of the two-arm channel.
    pub fn channel_transmittance(&self) -> f64 {
        10f64.powf(-self.total_loss_db() / 10.0)
    }

    /// Source-to-detector efficiency excluding the fiber and detector.
    pub fn source_efficiency(&self) -> f64 {
        self.qfc_efficiency * self.filter_transmission * self.collection_efficiency
    }

    /// Transmission from node `arm` to the heralding splitter.
    pub fn splitter_input(&self, arm: Arm) -> f64 {
        self.source_efficiency() * fiber_transmittance(self.segments(arm))
    }

    /// Per-photon routing of node `arm` through the balanced splitter.
    pub fn routing(&self, arm: Arm) -> Routing {
        Routing {
            to_d1: 0.5 * arm_budget(self, arm, Detector::D1).arm_efficiency,
            to_d2: 0.5 * arm_budget(self, arm, Detector::D2).arm_efficiency,
        }
    }

    /// Per-gate noise click probability of a heralding detector, averaging
    /// the converter noise arriving through both arms.
    pub fn detector_noise_prob(&self, d: Detector) -> f64 {
        let a = arm_budget(self, Arm::A, d).noise_click_prob;
        let b = arm_budget(self, Arm::B, d).noise_click_prob;
        (0.5 * (a + b)).min(1.0)
    }
}

/// Efficiency and noise of one arm as seen by one heralding detector.
///
/// Converter and probe noise pass the fiber, the filter band factor and the
/// detector efficiency; dark counts are added at the detector.
pub fn arm_budget(p: &LinkParams, arm: Arm, detector: Detector) -> ArmBudget {
    let t = fiber_transmittance(p.segments(arm));
    let det = p.detector(detector);
    let arm_efficiency = p.source_efficiency() * t * det.efficiency;
    let rate = det.efficiency * (p.qfc_noise_rate * t * p.noise_band_factor + p.probe_raman_rate) + det.dark_rate;
    ArmBudget {
        arm_transmittance: t,
        arm_efficiency,
        noise_click_prob: (rate * p.gate_window).min(1.0),
    }
}

/// Heralding statistics for two thermal (two-mode squeezed) sources
/// interfering on the balanced splitter, evaluated in closed form.
///
/// The detected port modes are Gaussian, so every no-click probability is
/// `1/det(I + N)` of their photon-number matrix `N`. Two photons reaching the
/// splitter from different nodes bunch into one port, which lifts the herald
/// probability above independent routing at second order in `χ`.
pub fn herald_stats(p: &LinkParams) -> Result<HeraldStats> {
    p.validate()?;
    let chi = p.chi;
    let ra = p.routing(Arm::A);
    let rb = p.routing(Arm::B);
    let mut warnings = Vec::new();
    for (arm, r) in [("A", ra), ("B", rb)] {
        for d in Detector::BOTH {
            if chi * 2.0 * r.to(d) > 0.5 {
                warnings.push(format!(
                    "χ·η = {:.3} on arm {arm}/{}: small-χ linearization is invalid",
                    chi * 2.0 * r.to(d),
                    d.label()
                ));
            }
        }
    }
    let pn = [p.detector_noise_prob(Detector::D1), p.detector_noise_prob(Detector::D2)];
    let nbar = chi / (1.0 - chi);
    let t = [p.splitter_input(Arm::A), p.splitter_input(Arm::B)];
    let eff = [p.detector_d1.efficiency, p.detector_d2.efficiency];
    // mean detected photons per port, and the port cross term
    let n = eff.map(|e| nbar * e * 0.5 * (t[0] + t[1]));
    let x = nbar * (eff[0] * eff[1]).sqrt() * 0.5 * (t[0] - t[1]);
    let mut herald_prob = [0.0; 2];
    let mut signal = [0.0; 2];
    let mut classes = [HeraldClasses {
        single: 0.0,
        multi: 0.0,
        noise: 0.0,
    }; 2];
    for j in 0..2 {
        let o = 1 - j;
        // det(I + diag(ε, 1)·N) = a + ε·b with ε the detection weight at j;
        // the photon count at j given silence at o is then geometric.
        let a = 1.0 + n[o];
        let b = n[j] * (1.0 + n[o]) - x * x;
        let ab = a + b;
        classes[j] = HeraldClasses {
            single: (1.0 - pn[o]) * b / (ab * ab),
            multi: (1.0 - pn[o]) * b * b / (a * ab * ab),
            noise: (1.0 - pn[o]) * pn[j] / ab,
        };
        herald_prob[j] = (1.0 - pn[o]) * (b / (a * ab) + pn[j] / ab);
        signal[j] = n[j] / (1.0 + n[j]);
    }
    let snr = [0, 1].map(|j| {
        if signal[j] <= 0.0 {
            0.0
        } else if pn[j] <= 0.0 {
            f64::INFINITY
        } else {
            signal[j] / pn[j]
        }
    });
    let p_ent_linear = Detector::BOTH.iter().map(|&d| chi * (ra.to(d) + rb.to(d))).sum();
    Ok(HeraldStats {
        p_ent: herald_prob[0] + herald_prob[1],
        p_ent_linear,
        herald_prob,
        signal_click_prob: signal,
        noise_click_prob: pn,
        snr,
        classes,
        warnings,
    })
}

/// Repeaterless secret-key capacity `−log2(1−η)` in bits per channel use.
pub fn plob_bound(eta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::Domain(format!("transmittance {eta} outside [0, 1)")));
    }
    Ok(-(-eta).ln_1p() / std::f64::consts::LN_2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    /// Intercept of `log10 p = slope·log10 η + intercept`.
    pub intercept: f64,
    pub residuals: Vec<f64>,
}

impl ScalingFit {
    pub fn predict(&self, eta: f64) -> f64 {
        10f64.powf(self.intercept + self.slope * eta.log10())
    }
}

/// Least-squares line through `(log10 η, log10 p)`.
pub fn scaling_fit(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientData("scaling fit needs two points".into()));
    }
    if points.iter().any(|&(e, p)| !(e > 0.0) || !(p > 0.0)) {
        return Err(Error::Domain("scaling fit needs positive η and p".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.log10()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx < 1e-24 {
        return Err(Error::Degenerate("all transmittances identical".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    Ok(ScalingFit {
        slope,
        intercept,
        residuals,
    })
}

/// Transmittance at which the fitted rate meets the capacity bound, found by
/// bisection on `log10 η ∈ [−10, 0)`. `tolerance` is in decades.
pub fn plob_crossing(fit: &ScalingFit, tolerance: f64) -> Result<f64> {
    if !(fit.slope > 0.0 && fit.slope < 1.0 + 1e-12) {
        return Err(Error::param("slope", format!("{} outside (0, 1]", fit.slope)));
    }
    let g = |x: f64| {
        let eta = 10f64.powf(x);
        fit.intercept + fit.slope * x - plob_bound(eta).expect("η < 1").log10()
    };
    let (mut lo, mut hi) = (-10.0, -1e-9);
    let (glo, ghi) = (g(lo), g(hi));
    if glo.signum() == ghi.signum() {
        return Err(Error::NotFound(
            "fitted rate does not cross the capacity bound for log10 η in [-10, 0)".into(),
        ));
    }
    let tol = tolerance.max(1e-12);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if g(mid).signum() == glo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(0.5 * (lo + hi)))
}

/// One-parameter fit of `p = 2·(χη_sys)·√η` in log space; returns `χη_sys`.
pub fn fit_source_factor(points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::InsufficientData("no points".into()));
    }
    if points.iter().any(|&(e, p)| !(e > 0.0) || !(p > 0.0)) {
        return Err(Error::Domain("source fit needs positive η and p".into()));
    }
    let mean: f64 = points.iter().map(|&(e, p)| p.log10() - 0.5 * e.log10()).sum::<f64>() / points.len() as f64;
    Ok(10f64.powf(mean) / 2.0)
}
