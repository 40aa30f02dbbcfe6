//! Single-scan localization: heatmap peaks, correspondence lookup and a
//! RANSAC rigid fit between local detections and global landmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bev::{bev_from_scan, BevConfig};
use crate::bundle::Bundle;
use crate::geometry::{Point3, Pose2, Vec2};
use crate::model::{ForwardOutput, Model};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum PeakThreshold {
    /// `min + f·(max − min)` of the heatmap being searched.
    Relative(f64),
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LocalizerConfig {
    pub max_peaks: usize,
    /// Suppression radius in pixels.
    pub min_peak_distance: usize,
    pub peak_threshold: PeakThreshold,
    pub ransac_iterations: usize,
    /// Meters.
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    /// Minimal samples whose local points are closer than this are skipped.
    pub min_sample_separation: f64,
    /// Least-squares refit on the winning inlier set.
    pub refine: bool,
    pub seed: u64,
}

impl Default for LocalizerConfig {
    fn default() -> Self {
        Self {
            max_peaks: 64,
            min_peak_distance: 3,
            peak_threshold: PeakThreshold::Relative(0.1),
            ransac_iterations: 2000,
            inlier_threshold: 1.0,
            min_inliers: 4,
            min_sample_separation: 0.5,
            refine: true,
            seed: 0,
        }
    }
}

impl LocalizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_peaks < 3 {
            return Err(Error::config("max_peaks must be at least 3"));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::config("inlier threshold must be positive"));
        }
        if self.min_inliers < 2 {
            return Err(Error::config("min_inliers must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub u: usize,
    pub v: usize,
    pub score: f64,
}

/// Sliding maximum over `[i − r, i + r]` (clipped) along one axis.
fn sliding_max(src: &[f64], n: usize, stride: usize, lines: usize, line_stride: usize, r: usize, dst: &mut [f64]) {
    for line in 0..lines {
        let base = line * line_stride;
        for i in 0..n {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(n - 1);
            let mut m = f64::NEG_INFINITY;
            for k in lo..=hi {
                m = m.max(src[base + k * stride]);
            }
            dst[base + i * stride] = m;
        }
    }
}

/// Local maxima of a `width × height` field.
///
/// A pixel qualifies when it is `>=` every pixel in its
/// `(2r + 1)²` window, strictly greater than at least one of them, no
/// equal-valued pixel in the window precedes it in row-major order, and its
/// score reaches the threshold. Output is sorted by score (descending, then
/// row-major) and truncated to `max_peaks`.
pub fn detect_peaks(heat: &[f64], width: usize, height: usize, cfg: &LocalizerConfig) -> Vec<Peak> {
    assert_eq!(heat.len(), width * height, "heatmap size");
    if heat.is_empty() || heat.iter().any(|v| v.is_nan()) {
        return Vec::new();
    }
    let r = cfg.min_peak_distance;
    let (lo, hi) = heat
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let threshold = match cfg.peak_threshold {
        PeakThreshold::Relative(f) => lo + f * (hi - lo),
        PeakThreshold::Absolute(t) => t,
    };
    let mut rows = vec![0.0; heat.len()];
    sliding_max(heat, width, 1, height, width, r, &mut rows);
    let mut window = vec![0.0; heat.len()];
    sliding_max(&rows, height, width, width, 1, r, &mut window);

    let mut peaks = Vec::new();
    for v in 0..height {
        for u in 0..width {
            let idx = v * width + u;
            let s = heat[idx];
            if s < window[idx] || s < threshold {
                continue;
            }
            let mut beats_one = false;
            let mut earlier_tie = false;
            for y in v.saturating_sub(r)..=(v + r).min(height - 1) {
                for x in u.saturating_sub(r)..=(u + r).min(width - 1) {
                    let other = heat[y * width + x];
                    beats_one |= other < s;
                    earlier_tie |= other == s && y * width + x < idx;
                }
            }
            if beats_one && !earlier_tie {
                peaks.push(Peak { u, v, score: s });
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then((a.v * width + a.u).cmp(&(b.v * width + b.u)))
    });
    peaks.truncate(cfg.max_peaks);
    peaks
}

/// Local metric coordinates of a pixel center.
pub fn pixel_to_local(u: usize, v: usize, bev: &BevConfig) -> Vec2 {
    bev.pixel_center_local(u, v)
}

/// Arg-max landmark of the patch cell containing pixel `(u, v)`, lowest
/// index on ties.
pub fn lookup_correspondence(out: &ForwardOutput, u: usize, v: usize, landmarks: &[Vec2]) -> (usize, Vec2) {
    let i = u * out.d_p / out.width;
    let j = v * out.d_p / out.height;
    let mut best = (0, f64::NEG_INFINITY);
    for (l, c) in out.correspondence_at(i, j).enumerate() {
        if c > best.1 {
            best = (l, c);
        }
    }
    (best.0, landmarks[best.0])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondencePair {
    pub local: Vec2,
    pub landmark: usize,
    pub global: Vec2,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationResult {
    pub pose: Option<Pose2>,
    /// Indices into `pairs`.
    pub inliers: Vec<usize>,
    pub pairs: Vec<CorrespondencePair>,
    /// Residual RMS over the inliers, meters.
    pub rms: f64,
    pub diagnostic: Option<String>,
}

impl LocalizationResult {
    fn none(pairs: Vec<CorrespondencePair>, why: impl Into<String>) -> Self {
        Self {
            pose: None,
            inliers: Vec::new(),
            pairs,
            rms: f64::NAN,
            diagnostic: Some(why.into()),
        }
    }
}

/// Rigid transform from two local/global pairs: rotation from the
/// difference vectors, translation closing the midpoints.
pub fn minimal_pose(a: &CorrespondencePair, b: &CorrespondencePair) -> Pose2 {
    let dl = b.local - a.local;
    let dg = b.global - a.global;
    let yaw = dl.cross(dg).atan2(dl.dot(dg));
    let ml = (a.local + b.local) * 0.5;
    let mg = (a.global + b.global) * 0.5;
    let t = mg - ml.rotated(yaw);
    Pose2::new(t.x, t.y, yaw)
}

/// Closed-form least-squares rigid fit (centroid-aligned cross-covariance).
pub fn fit_rigid(pairs: &[CorrespondencePair]) -> Option<Pose2> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let cl = pairs.iter().fold(Vec2::ZERO, |s, p| s + p.local) * (1.0 / n);
    let cg = pairs.iter().fold(Vec2::ZERO, |s, p| s + p.global) * (1.0 / n);
    let (mut sdot, mut scross) = (0.0, 0.0);
    for p in pairs {
        let a = p.local - cl;
        let b = p.global - cg;
        sdot += a.dot(b);
        scross += a.cross(b);
    }
    if sdot == 0.0 && scross == 0.0 {
        return None;
    }
    let yaw = scross.atan2(sdot);
    let t = cg - cl.rotated(yaw);
    Some(Pose2::new(t.x, t.y, yaw))
}

pub fn residual(pose: &Pose2, p: &CorrespondencePair) -> f64 {
    pose.local_to_global(p.local).dist(p.global)
}

fn inliers_of(pose: &Pose2, pairs: &[CorrespondencePair], threshold: f64) -> Vec<usize> {
    (0..pairs.len()).filter(|&i| residual(pose, &pairs[i]) <= threshold).collect()
}

fn rms_of(pose: &Pose2, pairs: &[CorrespondencePair], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    (idx.iter().map(|&i| residual(pose, &pairs[i]).powi(2)).sum::<f64>() / idx.len() as f64).sqrt()
}

/// Robust pose from correspondence pairs. The best hypothesis has the most
/// inliers, ties going to the lower residual sum, then to the earlier draw.
pub fn ransac_pose<R: Rng + ?Sized>(pairs: &[CorrespondencePair], cfg: &LocalizerConfig, rng: &mut R) -> LocalizationResult {
    let n = pairs.len();
    if n < 2 {
        return LocalizationResult::none(pairs.to_vec(), format!("{n} pairs, need at least 2"));
    }
    let mut best: Option<(Pose2, Vec<usize>, f64)> = None;
    for _ in 0..cfg.ransac_iterations {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        if pairs[a].local.dist(pairs[b].local) < cfg.min_sample_separation {
            continue;
        }
        let pose = minimal_pose(&pairs[a], &pairs[b]);
        let inl = inliers_of(&pose, pairs, cfg.inlier_threshold);
        let cost: f64 = inl.iter().map(|&i| residual(&pose, &pairs[i])).sum();
        let better = match &best {
            None => true,
            Some((_, bi, bc)) => inl.len() > bi.len() || (inl.len() == bi.len() && cost < *bc),
        };
        if better {
            best = Some((pose, inl, cost));
        }
    }
    let Some((mut pose, mut inliers, _)) = best else {
        return LocalizationResult::none(pairs.to_vec(), "every sample was degenerate");
    };
    if cfg.refine {
        let subset: Vec<CorrespondencePair> = inliers.iter().map(|&i| pairs[i]).collect();
        if let Some(refined) = fit_rigid(&subset) {
            let refined_inliers = inliers_of(&refined, pairs, cfg.inlier_threshold);
            if refined_inliers.len() >= inliers.len() {
                pose = refined;
                inliers = refined_inliers;
            }
        }
    }
    if inliers.len() < cfg.min_inliers {
        return LocalizationResult::none(
            pairs.to_vec(),
            format!("{} inliers, need {}", inliers.len(), cfg.min_inliers),
        );
    }
    let rms = rms_of(&pose, pairs, &inliers);
    LocalizationResult {
        pose: Some(pose),
        inliers,
        pairs: pairs.to_vec(),
        rms,
        diagnostic: None,
    }
}

/// A loaded bundle ready for queries.
pub struct Localizer {
    pub bundle: Bundle,
    model: Model,
}

impl Localizer {
    pub fn new(bundle: Bundle) -> Result<Self> {
        let model = Model::for_params(&bundle.params)?;
        Ok(Self { bundle, model })
    }

    pub fn forward(&self, cloud: &[Point3]) -> Result<ForwardOutput> {
        let img = bev_from_scan(cloud, &self.bundle.bev);
        self.model.forward(&self.bundle.params.store, &img)
    }

    pub fn pairs(&self, out: &ForwardOutput, cfg: &LocalizerConfig) -> Vec<CorrespondencePair> {
        detect_peaks(&out.heatmap, out.width, out.height, cfg)
            .into_iter()
            .map(|p| {
                let (landmark, global) = lookup_correspondence(out, p.u, p.v, &self.bundle.params.landmarks);
                CorrespondencePair {
                    local: pixel_to_local(p.u, p.v, &self.bundle.bev),
                    landmark,
                    global,
                    score: p.score,
                }
            })
            .collect()
    }

    /// Full pipeline for one scan, seeded by `cfg.seed`.
    pub fn localize(&self, cloud: &[Point3], cfg: &LocalizerConfig) -> Result<LocalizationResult> {
        cfg.validate()?;
        if cloud.is_empty() {
            return Ok(LocalizationResult::none(Vec::new(), "empty cloud"));
        }
        let out = self.forward(cloud)?;
        let pairs = self.pairs(&out, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(ransac_pose(&pairs, cfg, &mut rng))
    }
}

/// `frame_id status x y yaw_deg inliers pairs rms`; failed queries carry
/// `NONE` and `nan` fields.
pub fn format_result_record(frame_id: &str, r: &LocalizationResult) -> String {
    match r.pose {
        Some(p) => format!(
            "{frame_id} OK {:.6} {:.6} {:.6} {} {} {:.6}",
            p.x,
            p.y,
            p.yaw.to_degrees(),
            r.inliers.len(),
            r.pairs.len(),
            r.rms
        ),
        None => format!("{frame_id} NONE nan nan nan 0 {} nan", r.pairs.len()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub frame_id: String,
    pub pose: Option<Pose2>,
    pub inliers: usize,
    pub pairs: usize,
    pub rms: f64,
}

pub fn parse_result_records(text: &str, origin: &str) -> Result<Vec<ResultRecord>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.into(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 {
            return Err(err(i + 1, format!("expected 8 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 1, format!("bad number `{s}`")));
        let count = |s: &str| s.parse::<usize>().map_err(|_| err(i + 1, format!("bad count `{s}`")));
        let pose = match f[1] {
            "OK" => {
                let (x, y, yaw) = (num(f[2])?, num(f[3])?, num(f[4])?);
                if !(x.is_finite() && y.is_finite() && yaw.is_finite()) {
                    return Err(err(i + 1, "OK record with non-finite pose".into()));
                }
                Some(Pose2::new(x, y, yaw.to_radians()))
            }
            "NONE" => None,
            s => return Err(err(i + 1, format!("unknown status `{s}`"))),
        };
        out.push(ResultRecord {
            frame_id: f[0].to_string(),
            pose,
            inliers: count(f[5])?,
            pairs: count(f[6])?,
            rms: num(f[7])?,
        });
    }
    Ok(out)
}
