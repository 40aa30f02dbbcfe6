//! Landmark consistency objective.
//!
//! The heatmap and its coordinate map are cut into `d_P × d_P` patches. Each
//! patch's softmax-weighted mean coordinate is a differentiable global
//! landmark estimate `ŝ_i`. The distance term pulls every estimate and its
//! nearest landmark together with log attenuation; the correspondence term
//! trains the per-patch classifier to name that nearest landmark.
//!
//! Filtering: patches without points are dropped from both terms (unless
//! configured otherwise); estimates farther than half the patch diagonal
//! from their nearest landmark are dropped from the correspondence term.

use crate::bev::CoordinateMap;
use crate::geometry::Vec2;
use crate::landmarks::nearest_linear;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub d_p: usize,
    /// Reduction over labeled patches in the correspondence term.
    pub corr_reduction: Reduction,
    /// Drop unoccupied patches from the distance term as well.
    pub exclude_empty_from_dist: bool,
}

impl LossConfig {
    pub fn new(d_p: usize) -> Self {
        Self {
            alpha: 1.0,
            beta: 30.0,
            gamma: 3.0,
            d_p,
            corr_reduction: Reduction::Mean,
            exclude_empty_from_dist: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.gamma > 0.0) {
            return Err(Error::config("loss weights must be non-negative and gamma positive"));
        }
        if self.d_p == 0 {
            return Err(Error::config("d_P must be positive"));
        }
        Ok(())
    }
}

/// One patch of the heatmap with its coordinate slices.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchView {
    pub index: usize,
    /// Top-left pixel `(u, v)` of the patch.
    pub origin: (usize, usize),
    pub pw: usize,
    pub ph: usize,
    pub heat: Vec<f64>,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub occupied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchEstimate {
    pub xy: Vec2,
    pub patch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelReason {
    EmptyPatch,
    TooFar,
    Labeled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceLabel {
    pub patch: usize,
    /// `None` means ignored.
    pub landmark: Option<usize>,
    pub reason: LabelReason,
    pub distance: f64,
}

/// Splits the heatmap, coordinate map and occupancy into `d_P²` row-major
/// patches.
pub fn partition_patches(
    heat: &[f64],
    map: &CoordinateMap,
    occupancy: &[bool],
    d_p: usize,
) -> Result<Vec<PatchView>> {
    let (w, h) = (map.config.width_px, map.config.height_px);
    if d_p == 0 || w % d_p != 0 || h % d_p != 0 {
        return Err(Error::config(format!("d_P = {d_p} must divide {w}x{h}")));
    }
    if heat.len() != w * h || occupancy.len() != w * h {
        return Err(Error::config("heatmap/occupancy size does not match the coordinate map"));
    }
    let (pw, ph) = (w / d_p, h / d_p);
    let mut out = Vec::with_capacity(d_p * d_p);
    for j in 0..d_p {
        for i in 0..d_p {
            let mut view = PatchView {
                index: j * d_p + i,
                origin: (i * pw, j * ph),
                pw,
                ph,
                heat: Vec::with_capacity(pw * ph),
                gx: Vec::with_capacity(pw * ph),
                gy: Vec::with_capacity(pw * ph),
                occupied: false,
            };
            for v in j * ph..(j + 1) * ph {
                for u in i * pw..(i + 1) * pw {
                    let k = v * w + u;
                    view.heat.push(heat[k]);
                    view.gx.push(map.gx[k]);
                    view.gy.push(map.gy[k]);
                    view.occupied |= occupancy[k];
                }
            }
            out.push(view);
        }
    }
    Ok(out)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut e: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= s);
    e
}

/// Softmax-weighted coordinate expectation over one patch.
pub fn soft_argmax_coords(patch: &PatchView) -> PatchEstimate {
    soft_argmax_with_weights(patch).0
}

fn soft_argmax_with_weights(patch: &PatchView) -> (PatchEstimate, Vec<f64>) {
    let p = softmax(&patch.heat);
    let mut x = 0.0;
    let mut y = 0.0;
    for k in 0..p.len() {
        x += p[k] * patch.gx[k];
        y += p[k] * patch.gy[k];
    }
    (
        PatchEstimate {
            xy: Vec2::new(x, y),
            patch: patch.index,
        },
        p,
    )
}

/// Distance term and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceLoss {
    pub value: f64,
    /// `∂L/∂ŝ_i`, aligned with the input estimates.
    pub d_estimates: Vec<Vec2>,
    pub d_landmarks: Vec<Vec2>,
    /// Nearest landmark per estimate.
    pub nearest: Vec<(usize, f64)>,
}

/// `Σ_i log(1 + γ·min_j ‖ŝ_i − Λ_j‖)`. The gradient of the min flows through
/// the arg-min only (lowest index on ties).
pub fn distance_loss(estimates: &[PatchEstimate], landmarks: &[Vec2], gamma: f64) -> DistanceLoss {
    let mut out = DistanceLoss {
        value: 0.0,
        d_estimates: Vec::with_capacity(estimates.len()),
        d_landmarks: vec![Vec2::ZERO; landmarks.len()],
        nearest: Vec::with_capacity(estimates.len()),
    };
    if landmarks.is_empty() {
        out.d_estimates = vec![Vec2::ZERO; estimates.len()];
        return out;
    }
    for e in estimates {
        let (j, d) = nearest_linear(landmarks, e.xy);
        out.value += (1.0 + gamma * d).ln();
        let grad = if d > 0.0 {
            (e.xy - landmarks[j]) * (gamma / ((1.0 + gamma * d) * d))
        } else {
            Vec2::ZERO
        };
        out.d_estimates.push(grad);
        out.d_landmarks[j] = out.d_landmarks[j] - grad;
        out.nearest.push((j, d));
    }
    out
}

/// Nearest-landmark labels with the empty-patch and too-far filters. The
/// too-far rule is strict: a distance of exactly half the diagonal is kept.
pub fn correspondence_labels(
    estimates: &[PatchEstimate],
    occupied: &[bool],
    landmarks: &[Vec2],
    patch_diagonal: f64,
) -> Vec<CorrespondenceLabel> {
    assert!(!landmarks.is_empty(), "labels need at least one landmark");
    estimates
        .iter()
        .zip(occupied)
        .map(|(e, &occ)| {
            let (j, d) = nearest_linear(landmarks, e.xy);
            let (landmark, reason) = if !occ {
                (None, LabelReason::EmptyPatch)
            } else if d > patch_diagonal / 2.0 {
                (None, LabelReason::TooFar)
            } else {
                (Some(j), LabelReason::Labeled)
            };
            CorrespondenceLabel {
                patch: e.patch,
                landmark,
                reason,
                distance: d,
            }
        })
        .collect()
}

/// Cross-entropy of the correspondence logits against the labels.
///
/// `logits` is `L × d_P × d_P`. Returns the loss and its gradient, which is
/// zero for ignored patches. All-ignored input yields a zero loss.
pub fn correspondence_loss(
    logits: &[f64],
    num_landmarks: usize,
    d_p: usize,
    labels: &[CorrespondenceLabel],
    reduction: Reduction,
) -> (f64, Vec<f64>) {
    let cells = d_p * d_p;
    assert_eq!(logits.len(), num_landmarks * cells, "correspondence logits shape");
    let mut grad = vec![0.0; logits.len()];
    let labeled: Vec<(usize, usize)> = labels
        .iter()
        .filter_map(|l| l.landmark.map(|j| (l.patch, j)))
        .collect();
    if labeled.is_empty() {
        return (0.0, grad);
    }
    let norm = match reduction {
        Reduction::Mean => 1.0 / labeled.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut total = 0.0;
    let mut column = vec![0.0; num_landmarks];
    for &(patch, j) in &labeled {
        for (l, c) in column.iter_mut().enumerate() {
            *c = logits[l * cells + patch];
        }
        let p = softmax(&column);
        // Log-sum-exp form stays exact for saturated logits.
        let m = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + column.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - column[j];
        for (l, pl) in p.iter().enumerate() {
            let target = if l == j { 1.0 } else { 0.0 };
            grad[l * cells + patch] += norm * (pl - target);
        }
    }
    (total * norm, grad)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossDiagnostics {
    pub occupied_patches: usize,
    pub labeled_patches: usize,
    pub too_far_patches: usize,
    /// No occupied patch contributed to the distance term.
    pub no_estimates: bool,
    /// Every patch was ignored by the correspondence term.
    pub all_ignored: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalLoss {
    pub total: f64,
    pub dist: f64,
    pub corr: f64,
    pub d_heat: Vec<f64>,
    pub d_corr: Vec<f64>,
    pub d_landmarks: Vec<Vec2>,
    pub estimates: Vec<PatchEstimate>,
    pub labels: Vec<CorrespondenceLabel>,
    pub diagnostics: LossDiagnostics,
}

/// `α·L_dist + β·L_corr` with every gradient the optimizer needs.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    heat: &[f64],
    corr: &[f64],
    map: &CoordinateMap,
    occupancy: &[bool],
    landmarks: &[Vec2],
    patch_diagonal: f64,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    cfg.validate()?;
    if landmarks.is_empty() {
        return Err(Error::Invalid("loss needs at least one landmark".into()));
    }
    let num_landmarks = landmarks.len();
    let d_p = cfg.d_p;
    if corr.len() != num_landmarks * d_p * d_p {
        return Err(Error::config(format!(
            "correspondence map has {} values, expected {}",
            corr.len(),
            num_landmarks * d_p * d_p
        )));
    }
    let patches = partition_patches(heat, map, occupancy, d_p)?;
    let w = map.config.width_px;

    let mut weights = Vec::with_capacity(patches.len());
    let mut all_estimates = Vec::with_capacity(patches.len());
    for p in &patches {
        let (e, wts) = soft_argmax_with_weights(p);
        all_estimates.push(e);
        weights.push(wts);
    }
    let occupied: Vec<bool> = patches.iter().map(|p| p.occupied).collect();

    let dist_members: Vec<usize> = (0..patches.len())
        .filter(|&i| occupied[i] || !cfg.exclude_empty_from_dist)
        .collect();
    let dist_estimates: Vec<PatchEstimate> = dist_members.iter().map(|&i| all_estimates[i]).collect();
    let dist = distance_loss(&dist_estimates, landmarks, cfg.gamma);

    let labels = correspondence_labels(&all_estimates, &occupied, landmarks, patch_diagonal);
    let (corr_value, mut d_corr) = correspondence_loss(corr, num_landmarks, d_p, &labels, cfg.corr_reduction);
    d_corr.iter_mut().for_each(|g| *g *= cfg.beta);

    // Heatmap gradient through the soft-argmax: ∂ŝ/∂h_k = p_k (y_k − ŝ).
    let mut d_heat = vec![0.0; heat.len()];
    for (m, &i) in dist_members.iter().enumerate() {
        let g = dist.d_estimates[m] * cfg.alpha;
        if g == Vec2::ZERO {
            continue;
        }
        let patch = &patches[i];
        let s = all_estimates[i].xy;
        let wts = &weights[i];
        for k in 0..wts.len() {
            let (du, dv) = (k % patch.pw, k / patch.pw);
            let pix = (patch.origin.1 + dv) * w + patch.origin.0 + du;
            d_heat[pix] += wts[k] * (g.x * (patch.gx[k] - s.x) + g.y * (patch.gy[k] - s.y));
        }
    }
    let d_landmarks = dist.d_landmarks.iter().map(|g| *g * cfg.alpha).collect();

    let labeled = labels.iter().filter(|l| l.landmark.is_some()).count();
    let diagnostics = LossDiagnostics {
        occupied_patches: occupied.iter().filter(|&&o| o).count(),
        labeled_patches: labeled,
        too_far_patches: labels.iter().filter(|l| l.reason == LabelReason::TooFar).count(),
        no_estimates: dist_members.is_empty(),
        all_ignored: labeled == 0,
    };
    Ok(TotalLoss {
        total: cfg.alpha * dist.value + cfg.beta * corr_value,
        dist: dist.value,
        corr: corr_value,
        d_heat,
        d_corr,
        d_landmarks,
        estimates: all_estimates,
        labels,
        diagnostics,
    })
}
