//! Weed validation, tool selection, trigger prediction and treatment simulation.
//!
//! Coordinates are in the robot frame: `x` forward, `y` to the left, with the
//! detection camera at the origin. Tools sit behind the camera at negative `x`.

mod sim;

pub use sim::{
    metrics_csv, simulate_treatment, treatment_sweep, PlantOutcome, RobotRun, TreatmentConfig, TreatmentMetrics, TreatmentReport,
    TreatmentScenario,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolKind {
    Stamp,
    Spray,
}

impl ToolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ToolKind::Stamp => "stamp",
            ToolKind::Spray => "spray",
        }
    }
}

/// One rank of identical tools across the driving direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRank {
    /// Lateral tool positions (m), strictly increasing.
    pub lateral: Vec<f64>,
    /// Distance behind the detection camera (m).
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolBank {
    pub stamp_ranks: Vec<ToolRank>,
    pub stamp_radius: f64,
    pub spray: ToolRank,
    pub spray_radius: f64,
    /// Actuation latency (s).
    pub latency: f64,
}

impl Default for ToolBank {
    /// 18 stamps in two staggered ranks at a 20 mm pitch, 9 nozzles behind them.
    fn default() -> Self {
        let rank = |first: f64, offset: f64| ToolRank {
            lateral: (0..9).map(|k| first + 0.02 * k as f64).collect(),
            offset,
        };
        ToolBank {
            stamp_ranks: vec![rank(-0.08, 0.50), rank(-0.07, 0.55)],
            stamp_radius: 0.005,
            spray: rank(-0.08, 0.80),
            spray_radius: 0.015,
            latency: 0.05,
        }
    }
}

impl ToolBank {
    pub fn validate(&self) -> Result<()> {
        if !(self.stamp_radius > 0.0 && self.spray_radius > 0.0) {
            return Err(Error::Parameter("tool radii must be positive".into()));
        }
        if !(self.latency >= 0.0) {
            return Err(Error::Parameter("latency must be non-negative".into()));
        }
        if self.stamp_ranks.is_empty() {
            return Err(Error::Parameter("at least one stamp rank is required".into()));
        }
        for r in self.stamp_ranks.iter().chain(std::iter::once(&self.spray)) {
            if r.lateral.is_empty() || r.lateral.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::Parameter("tool lateral positions must be strictly increasing".into()));
            }
            if !r.offset.is_finite() {
                return Err(Error::Parameter("tool offset must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn radius(&self, kind: ToolKind) -> f64 {
        match kind {
            ToolKind::Stamp => self.stamp_radius,
            ToolKind::Spray => self.spray_radius,
        }
    }

    /// Tools of one kind as `(index, lateral, offset)`; stamps are numbered
    /// rank by rank.
    pub fn tools(&self, kind: ToolKind) -> Vec<(usize, f64, f64)> {
        let ranks: Vec<&ToolRank> = match kind {
            ToolKind::Stamp => self.stamp_ranks.iter().collect(),
            ToolKind::Spray => vec![&self.spray],
        };
        let mut out = Vec::new();
        for r in ranks {
            for &y in &r.lateral {
                out.push((out.len(), y, r.offset));
            }
        }
        out
    }

    /// Tool `(index, lateral, offset)` nearest to lateral `y`; ties go to the
    /// lower index.
    pub fn nearest(&self, kind: ToolKind, y: f64) -> (usize, f64, f64) {
        let mut best = (0, f64::NAN, 0.0);
        let mut d = f64::INFINITY;
        for t in self.tools(kind) {
            if (t.1 - y).abs() < d {
                d = (t.1 - y).abs();
                best = t;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedWeed {
    pub id: u32,
    /// Position in the robot frame (m) at `stamp`.
    pub position: [f64; 2],
    pub stamp: f64,
    pub radius: f64,
    pub weed_votes: u32,
    pub crop_votes: u32,
    pub validated: bool,
}

/// Class prior and per-observation label likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbcModel {
    pub prior_weed: f64,
    /// P(label = weed | weed).
    pub weed_hit: f64,
    /// P(label = crop | crop).
    pub crop_hit: f64,
}

impl Default for NbcModel {
    fn default() -> Self {
        NbcModel { prior_weed: 0.5, weed_hit: 0.9, crop_hit: 0.9 }
    }
}

impl NbcModel {
    pub fn symmetric(hit: f64) -> Self {
        NbcModel { prior_weed: 0.5, weed_hit: hit, crop_hit: hit }
    }

    /// P(weed | labels) with labels conditionally independent given the class.
    pub fn posterior(&self, weed_votes: u32, crop_votes: u32) -> f64 {
        let (w, c) = (f64::from(weed_votes), f64::from(crop_votes));
        // Grouped so that symmetric evidence cancels exactly.
        let lw = w * self.weed_hit.ln() + c * (1.0 - self.weed_hit).ln();
        let lc = w * (1.0 - self.crop_hit).ln() + c * self.crop_hit.ln();
        let prior = (1.0 - self.prior_weed).ln() - self.prior_weed.ln();
        1.0 / (1.0 + (prior + (lc - lw)).exp())
    }
}

/// Validated iff the posterior strictly exceeds `threshold`.
pub fn nbc_validate(weed: &TrackedWeed, model: &NbcModel, threshold: f64) -> bool {
    weed.weed_votes + weed.crop_votes > 0 && model.posterior(weed.weed_votes, weed.crop_votes) > threshold
}

/// Spray if `radius >= threshold`, stamp otherwise.
pub fn select_tool(radius: f64, threshold: f64) -> ToolKind {
    if radius >= threshold {
        ToolKind::Spray
    } else {
        ToolKind::Stamp
    }
}

/// Robot forward speed from a reference time onwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocityProfile {
    Constant { speed: f64 },
    /// Consecutive `(duration, speed)` segments; the last speed holds forever.
    Piecewise { segments: Vec<(f64, f64)> },
}

impl VelocityProfile {
    /// Time to travel `distance` from the reference time.
    pub fn time_to_travel(&self, distance: f64) -> Result<f64> {
        let segs: Vec<(f64, f64)> = match self {
            VelocityProfile::Constant { speed } => vec![(f64::INFINITY, *speed)],
            VelocityProfile::Piecewise { segments } => segments.clone(),
        };
        if segs.is_empty() {
            return Err(Error::Parameter("empty velocity profile".into()));
        }
        let (mut t, mut left) = (0.0, distance);
        for (k, &(dur, v)) in segs.iter().enumerate() {
            let dur = if k + 1 == segs.len() { f64::INFINITY } else { dur };
            if !(v > 0.0) {
                return Err(Error::Parameter("velocity must be positive over the horizon".into()));
            }
            if v * dur >= left {
                return Ok(t + left / v);
            }
            t += dur;
            left -= v * dur;
        }
        unreachable!("last segment is unbounded")
    }

    /// Distance travelled after `t` seconds.
    pub fn distance(&self, t: f64) -> f64 {
        match self {
            VelocityProfile::Constant { speed } => speed * t,
            VelocityProfile::Piecewise { segments } => {
                let (mut d, mut left) = (0.0, t);
                for (k, &(dur, v)) in segments.iter().enumerate() {
                    let dur = if k + 1 == segments.len() { f64::INFINITY } else { dur };
                    let step = left.min(dur);
                    d += v * step;
                    left -= step;
                    if left <= 0.0 {
                        break;
                    }
                }
                d
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerCommand {
    pub tool: ToolKind,
    pub index: usize,
    /// When the command is issued (s).
    pub fire_time: f64,
    /// When the tool acts: `fire_time + latency`.
    pub actuation_time: f64,
    /// Expected weed position in the robot frame at actuation.
    pub expected_position: [f64; 2],
}

/// Issue time and tool for treating `weed` with a tool of `kind`, using the
/// bank's latency. The profile starts at `weed.stamp`.
pub fn predict_trigger(weed: &TrackedWeed, kind: ToolKind, profile: &VelocityProfile, bank: &ToolBank) -> Result<TriggerCommand> {
    predict_trigger_with_latency(weed, kind, profile, bank, bank.latency)
}

/// As [`predict_trigger`] with the latency the controller assumes.
pub fn predict_trigger_with_latency(
    weed: &TrackedWeed,
    kind: ToolKind,
    profile: &VelocityProfile,
    bank: &ToolBank,
    latency: f64,
) -> Result<TriggerCommand> {
    let [x, y] = weed.position;
    let (index, lateral, offset) = bank.nearest(kind, y);
    let gap = x + offset;
    if !(gap > 0.0) {
        return Err(Error::NotReachable(format!("weed {} is {:.4} m behind the tool line", weed.id, -gap)));
    }
    let miss = (lateral - y).abs();
    if miss > bank.radius(kind) + weed.radius {
        return Err(Error::OutOfReach(format!("weed {} is {miss:.4} m from the nearest {}", weed.id, kind.as_str())));
    }
    let reach = profile.time_to_travel(gap)?;
    if reach < latency {
        return Err(Error::NotReachable(format!("weed {} reaches the tool before the latency elapses", weed.id)));
    }
    Ok(TriggerCommand {
        tool: kind,
        index,
        fire_time: weed.stamp + reach - latency,
        actuation_time: weed.stamp + reach,
        expected_position: [-offset, y],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn weed(x: f64, y: f64, w: u32, c: u32) -> TrackedWeed {
        TrackedWeed { id: 1, position: [x, y], stamp: 0.0, radius: 0.004, weed_votes: w, crop_votes: c, validated: false }
    }

    fn bayes(w: i32, c: i32, hit: f64) -> f64 {
        let a = hit.powi(w) * (1.0 - hit).powi(c);
        let b = (1.0 - hit).powi(w) * hit.powi(c);
        a / (a + b)
    }

    #[test]
    fn nbc_matches_hand_bayes() {
        let m = NbcModel::symmetric(0.9);
        let p = m.posterior(3, 0);
        assert!((p - 0.729 / (0.729 + 0.001)).abs() < 1e-12);
        assert!(nbc_validate(&weed(0.0, 0.0, 3, 0), &m, 0.5));
        for (w, c) in [(2, 1), (5, 3), (0, 4)] {
            assert!((m.posterior(w, c) - bayes(w as i32, c as i32, 0.9)).abs() < 1e-12);
        }
    }

    #[test]
    fn nbc_tie_is_not_validated() {
        let m = NbcModel::symmetric(0.9);
        assert!((m.posterior(1, 1) - 0.5).abs() < 1e-15);
        assert!(!nbc_validate(&weed(0.0, 0.0, 1, 1), &m, 0.5));
        assert!(!nbc_validate(&weed(0.0, 0.0, 0, 0), &m, 0.0));
    }

    #[test]
    fn crop_evidence_is_never_validated() {
        let m = NbcModel::symmetric(0.9);
        for th in [0.5, 0.7, 0.99] {
            assert!(!nbc_validate(&weed(0.0, 0.0, 0, 5), &m, th));
        }
    }

    #[test]
    fn tool_selection_rule() {
        assert_eq!(select_tool(0.003, 0.005), ToolKind::Stamp);
        assert_eq!(select_tool(0.012, 0.005), ToolKind::Spray);
        assert_eq!(select_tool(0.005, 0.005), ToolKind::Spray);
    }

    #[test]
    fn default_bank_layout() {
        let b = ToolBank::default();
        b.validate().unwrap();
        assert_eq!(b.tools(ToolKind::Stamp).len(), 18);
        assert_eq!(b.tools(ToolKind::Spray).len(), 9);
        assert_eq!(b.stamp_radius * 2.0, 0.01);
        assert_eq!(b.spray_radius * 2.0, 0.03);
        let mut bad = b.clone();
        bad.spray.lateral.swap(0, 1);
        assert!(bad.validate().is_err());
        let bad = ToolBank { latency: -0.1, ..b };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn constant_speed_trigger() {
        let bank = ToolBank { latency: 0.1, ..Default::default() };
        let off = bank.spray.offset;
        let w = weed(0.5 - off, bank.spray.lateral[4], 3, 0);
        let c = predict_trigger(&w, ToolKind::Spray, &VelocityProfile::Constant { speed: 0.2 }, &bank).unwrap();
        assert!((c.fire_time - 2.4).abs() < 1e-12);
        assert_eq!(c.index, 4);
        assert!(c.fire_time >= w.stamp);
    }

    #[test]
    fn weed_behind_tool_line_is_not_reachable() {
        let bank = ToolBank::default();
        let w = weed(-bank.spray.offset - 0.01, 0.0, 3, 0);
        let r = predict_trigger(&w, ToolKind::Spray, &VelocityProfile::Constant { speed: 0.2 }, &bank);
        assert!(matches!(r, Err(Error::NotReachable(_))));
    }

    #[test]
    fn lateral_miss_is_out_of_reach() {
        let bank = ToolBank::default();
        let w = weed(0.2, 0.3, 3, 0);
        let r = predict_trigger(&w, ToolKind::Stamp, &VelocityProfile::Constant { speed: 0.2 }, &bank);
        assert!(matches!(r, Err(Error::OutOfReach(_))));
    }

    #[test]
    fn piecewise_profile_matches_quadrature() {
        let bank = ToolBank { latency: 0.05, ..Default::default() };
        let profile = VelocityProfile::Piecewise { segments: vec![(1.0, 0.1), (1.0, 0.3)] };
        let w = weed(0.2, 0.0, 3, 0);
        let c = predict_trigger(&w, ToolKind::Stamp, &profile, &bank).unwrap();
        // Integrate v(t) on a fine grid until the gap is covered.
        let gap = 0.2 + bank.nearest(ToolKind::Stamp, 0.0).2;
        let dt = 1e-7;
        let (mut t, mut d) = (0.0f64, 0.0f64);
        while d < gap {
            let v = if t + 0.5 * dt < 1.0 { 0.1 } else { 0.3 };
            d += v * dt;
            t += dt;
        }
        let t_star = t - (d - gap) / 0.3;
        assert!((c.actuation_time - t_star).abs() < 1e-6, "{} vs {t_star}", c.actuation_time);
        assert!((c.fire_time - (t_star - 0.05)).abs() < 1e-6);
    }

    #[test]
    fn non_positive_speed_is_rejected() {
        let bank = ToolBank::default();
        let w = weed(0.2, 0.0, 3, 0);
        assert!(predict_trigger(&w, ToolKind::Stamp, &VelocityProfile::Constant { speed: 0.0 }, &bank).is_err());
    }

    proptest! {
        #[test]
        fn extra_weed_label_never_lowers_posterior(w in 0u32..20, c in 0u32..20, hit in 0.55f64..0.99, prior in 0.05f64..0.95) {
            let m = NbcModel { prior_weed: prior, weed_hit: hit, crop_hit: hit };
            prop_assert!(m.posterior(w + 1, c) >= m.posterior(w, c));
        }

        #[test]
        fn majority_crop_is_never_validated(w in 0u32..20, extra in 0u32..10, hit in 0.5f64..0.99, th in 0.5f64..0.99) {
            let m = NbcModel::symmetric(hit);
            prop_assert!(!nbc_validate(&weed(0.0, 0.0, w, w + extra), &m, th));
        }

        #[test]
        fn exact_profile_puts_weed_on_the_tool(x in 0.0f64..0.3, y in -0.08f64..0.08, v1 in 0.05f64..0.5, v2 in 0.05f64..0.5, d1 in 0.1f64..3.0) {
            let bank = ToolBank::default();
            let profile = VelocityProfile::Piecewise { segments: vec![(d1, v1), (1.0, v2)] };
            let w = weed(x, y, 3, 0);
            let c = predict_trigger(&w, ToolKind::Stamp, &profile, &bank).unwrap();
            // Replay the motion: the weed moves backwards by the distance travelled.
            let xa = x - profile.distance(c.actuation_time - w.stamp);
            prop_assert!((xa - c.expected_position[0]).abs() < 1e-9);
            prop_assert!((c.actuation_time - c.fire_time - bank.latency).abs() < 1e-12);
        }
    }
}
