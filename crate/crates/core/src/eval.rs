//! Localization metrics: success rate, median errors and SR binned by
//! distance to the reference trajectory.

use std::collections::BTreeMap;

use crate::geometry::{angle_diff, Pose2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalThresholds {
    /// Meters.
    pub te_max: f64,
    /// Degrees.
    pub re_max: f64,
    /// Width of the distance bins, meters.
    pub bin_width: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self {
            te_max: 2.0,
            re_max: 5.0,
            bin_width: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FrameEval {
    /// `None` when no pose was produced.
    pub te: Option<f64>,
    pub re_deg: Option<f64>,
    pub success: bool,
    /// Distance from the ground-truth position to the closest reference pose.
    pub ref_distance: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistanceBin {
    pub lo: f64,
    pub hi: f64,
    pub frames: usize,
    pub successes: usize,
    pub sr: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub successes: usize,
    pub failures_without_pose: usize,
    /// Percent.
    pub sr: f64,
    /// Lower medians over frames that produced a pose.
    pub median_te: Option<f64>,
    pub median_re_deg: Option<f64>,
    pub bins: Vec<DistanceBin>,
    pub per_frame: Vec<FrameEval>,
}

/// Lower median: element `(n − 1) / 2` of the sorted values.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

pub fn evaluate(
    estimates: &[Option<Pose2>],
    gt: &[Pose2],
    reference: &[Pose2],
    thresholds: &EvalThresholds,
) -> Result<EvalReport> {
    if estimates.len() != gt.len() {
        return Err(Error::Invalid(format!(
            "{} results for {} ground-truth poses",
            estimates.len(),
            gt.len()
        )));
    }
    if !(thresholds.te_max > 0.0 && thresholds.re_max > 0.0 && thresholds.bin_width > 0.0) {
        return Err(Error::config("thresholds must be positive"));
    }
    let mut per_frame = Vec::with_capacity(gt.len());
    for (est, g) in estimates.iter().zip(gt) {
        let ref_distance = reference
            .iter()
            .map(|r| r.translation().dist(g.translation()))
            .fold(f64::INFINITY, f64::min);
        let (te, re) = match est {
            Some(p) => (
                Some(p.translation().dist(g.translation())),
                Some(angle_diff(p.yaw, g.yaw).abs().to_degrees()),
            ),
            None => (None, None),
        };
        let success = matches!((te, re), (Some(t), Some(r)) if t < thresholds.te_max && r < thresholds.re_max);
        per_frame.push(FrameEval {
            te,
            re_deg: re,
            success,
            ref_distance,
        });
    }
    let successes = per_frame.iter().filter(|f| f.success).count();
    let tes: Vec<f64> = per_frame.iter().filter_map(|f| f.te).collect();
    let res: Vec<f64> = per_frame.iter().filter_map(|f| f.re_deg).collect();
    let mut bins: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
    for f in &per_frame {
        if !f.ref_distance.is_finite() {
            continue;
        }
        let e = bins.entry((f.ref_distance / thresholds.bin_width).floor() as i64).or_default();
        e.0 += 1;
        e.1 += f.success as usize;
    }
    let bins = bins
        .into_iter()
        .map(|(k, (n, s))| DistanceBin {
            lo: k as f64 * thresholds.bin_width,
            hi: (k + 1) as f64 * thresholds.bin_width,
            frames: n,
            successes: s,
            sr: 100.0 * s as f64 / n as f64,
        })
        .collect();
    Ok(EvalReport {
        frames: gt.len(),
        successes,
        failures_without_pose: estimates.iter().filter(|e| e.is_none()).count(),
        sr: if gt.is_empty() { 0.0 } else { 100.0 * successes as f64 / gt.len() as f64 },
        median_te: lower_median(&tes),
        median_re_deg: lower_median(&res),
        bins,
        per_frame,
    })
}

impl EvalReport {
    pub fn to_text(&self, thresholds: &EvalThresholds) -> String {
        let opt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
        let mut s = format!(
            "# success: TE < {} m and RE < {} deg; queries without a pose count as failures\n\
             # medians are lower medians over queries that produced a pose\n\
             frames={} successes={} no_pose={}\n\
             SR={:.2}\n\
             median_TE_m={}\n\
             median_RE_deg={}\n",
            thresholds.te_max,
            thresholds.re_max,
            self.frames,
            self.successes,
            self.failures_without_pose,
            self.sr,
            opt(self.median_te),
            opt(self.median_re_deg),
        );
        for b in &self.bins {
            s.push_str(&format!(
                "bin {:.0}-{:.0} m: {}/{} SR={:.2}\n",
                b.lo, b.hi, b.successes, b.frames, b.sr
            ));
        }
        s
    }
}
