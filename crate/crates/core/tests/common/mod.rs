//! Fixtures, independent oracles and the per-criterion checks shared by the
//! integration tests and the acceptance report.
#![allow(dead_code)]

use std::time::Instant;

use bevloc::bev::{build_coordinate_map, BevConfig, BevImage, CoordinateMap};
use bevloc::bundle::{decode_bundle, encode_bundle, Bundle};
use bevloc::eval::{self, evaluate, EvalThresholds};
use bevloc::geometry::{angle_diff, Pose2, Vec2};
use bevloc::landmarks::{grid_average_filter, nearest_landmark, LandmarkInitConfig, LINEAR_SCAN_LIMIT};
use bevloc::localizer::{detect_peaks, fit_rigid, minimal_pose, ransac_pose, residual, CorrespondencePair, LocalizerConfig};
use bevloc::loss::{total_loss, LossConfig};
use bevloc::model::{param_count, Model, ModelConfig, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The 16 × 16, d_P = 2, L = 3 gradient-check fixture.
pub struct GradFixture {
    pub model: Model,
    pub params: ModelParams,
    pub image: BevImage,
    pub map: CoordinateMap,
    pub occupancy: Vec<bool>,
    pub diagonal: f64,
    pub loss: LossConfig,
}

pub fn grad_fixture(depth: usize, seed: u64) -> GradFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bev = BevConfig {
        width_px: 16,
        height_px: 16,
        pixel_size: 0.5,
        voxel_size: 0.1,
    };
    let config = ModelConfig {
        height: 16,
        width: 16,
        d_p: 2,
        num_landmarks: 3,
        base_channels: 3,
        depth,
        ..ModelConfig::desk(3, seed)
    };
    let (model, mut store) = Model::init(&config).unwrap();
    // Perturb the normalization constants so their gradients are generic.
    for t in &mut store.tensors {
        for v in &mut t.data {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let counts: Vec<u32> = (0..256).map(|_| if rng.random_bool(0.3) { rng.random_range(1..6) } else { 0 }).collect();
    let image = BevImage::from_counts(bev, counts);
    let occupancy = image.occupancy();
    let pose = Pose2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
    let map = build_coordinate_map(&pose, &bev);
    // Landmarks near the covered area so some patches are labeled and some
    // are too far.
    let landmarks: Vec<Vec2> = (0..3)
        .map(|_| pose.local_to_global(Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))))
        .collect();
    let params = ModelParams {
        config,
        store,
        landmarks,
    };
    let l_patch = 16.0 * 0.5 / 2.0;
    GradFixture {
        model,
        params,
        image,
        map,
        occupancy,
        diagonal: l_patch * std::f64::consts::SQRT_2,
        loss: LossConfig::new(2),
    }
}

/// `|a − n| ≤ 1e-3·max(|a|, |n|)` or `≤ 1e-7` absolute.
pub fn grad_close(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= 1e-7 || diff <= 1e-3 * analytic.abs().max(numeric.abs())
}

/// Plain-loop softmax with no max subtraction: fine for the moderate logits
/// the oracle fixtures use.
fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Scalar re-implementation of the total objective, written directly from
/// the definitions: per-patch soft-argmax, summed log distance over occupied
/// patches, mean cross-entropy over labeled patches.
pub fn oracle_total_loss(
    heat: &[f64],
    corr: &[f64],
    width: usize,
    height: usize,
    gx: &[f64],
    gy: &[f64],
    occupancy: &[bool],
    landmarks: &[(f64, f64)],
    diagonal: f64,
    d_p: usize,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> f64 {
    let (pw, ph) = (width / d_p, height / d_p);
    let cells = d_p * d_p;
    let mut dist_sum = 0.0;
    let mut ce_sum = 0.0;
    let mut labeled = 0usize;
    for j in 0..d_p {
        for i in 0..d_p {
            let mut logits = Vec::new();
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            let mut occupied = false;
            for v in j * ph..(j + 1) * ph {
                for u in i * pw..(i + 1) * pw {
                    logits.push(heat[v * width + u]);
                    xs.push(gx[v * width + u]);
                    ys.push(gy[v * width + u]);
                    occupied = occupied || occupancy[v * width + u];
                }
            }
            let w = naive_softmax(&logits);
            let sx: f64 = w.iter().zip(&xs).map(|(a, b)| a * b).sum();
            let sy: f64 = w.iter().zip(&ys).map(|(a, b)| a * b).sum();
            let mut best = (0usize, f64::INFINITY);
            for (k, &(lx, ly)) in landmarks.iter().enumerate() {
                let d = ((sx - lx).powi(2) + (sy - ly).powi(2)).sqrt();
                if d < best.1 {
                    best = (k, d);
                }
            }
            if !occupied {
                continue;
            }
            dist_sum += (1.0 + gamma * best.1).ln();
            if best.1 > diagonal / 2.0 {
                continue;
            }
            let column: Vec<f64> = (0..landmarks.len()).map(|l| corr[l * cells + j * d_p + i]).collect();
            ce_sum += -naive_softmax(&column)[best.0].ln();
            labeled += 1;
        }
    }
    let corr_term = if labeled == 0 { 0.0 } else { ce_sum / labeled as f64 };
    alpha * dist_sum + beta * corr_term
}

pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn line(&self, id: usize, name: &str) -> String {
        format!("criterion {id:>2} [{}] {name}: {}", if self.pass { "PASS" } else { "FAIL" }, self.detail)
    }
}

/// Analytic gradients of the total loss against central differences with
/// ε = 1e-4 on every heatmap, correspondence and landmark entry (four
/// seeds) and every network parameter (depth-one fixture).
pub fn check_gradients() -> Check {
    const EPS: f64 = 1e-4;
    let start = Instant::now();
    let mut checked = 0usize;
    let mut bad = Vec::new();
    let mut worst: f64 = 0.0;
    let mut record = |name: String, ana: f64, num: f64, bad: &mut Vec<String>| {
        let diff = (ana - num).abs();
        if diff > 1e-7 {
            worst = worst.max(diff / ana.abs().max(num.abs()));
        }
        if !grad_close(ana, num) {
            bad.push(format!("{name}: {ana} vs {num}"));
        }
    };
    for seed in 0..4 {
        let f = grad_fixture(1, seed);
        let out = f.model.forward(&f.params.store, &f.image).unwrap();
        let at = |heat: &[f64], corr: &[f64], lms: &[Vec2]| {
            total_loss(heat, corr, &f.map, &f.occupancy, lms, f.diagonal, &f.loss).unwrap().total
        };
        let t = total_loss(&out.heatmap, &out.correspondence, &f.map, &f.occupancy, &f.params.landmarks, f.diagonal, &f.loss).unwrap();
        let mut heat = out.heatmap.clone();
        for k in 0..heat.len() {
            let h0 = heat[k];
            heat[k] = h0 + EPS;
            let up = at(&heat, &out.correspondence, &f.params.landmarks);
            heat[k] = h0 - EPS;
            let dn = at(&heat, &out.correspondence, &f.params.landmarks);
            heat[k] = h0;
            checked += 1;
            record(format!("seed {seed} heat[{k}]"), t.d_heat[k], (up - dn) / (2.0 * EPS), &mut bad);
        }
        let mut corr = out.correspondence.clone();
        for k in 0..corr.len() {
            let c0 = corr[k];
            corr[k] = c0 + EPS;
            let up = at(&out.heatmap, &corr, &f.params.landmarks);
            corr[k] = c0 - EPS;
            let dn = at(&out.heatmap, &corr, &f.params.landmarks);
            corr[k] = c0;
            checked += 1;
            record(format!("seed {seed} corr[{k}]"), t.d_corr[k], (up - dn) / (2.0 * EPS), &mut bad);
        }
        let mut lms = f.params.landmarks.clone();
        for j in 0..lms.len() {
            for axis in 0..2 {
                let orig = lms[j];
                let bump = |d: f64| if axis == 0 { Vec2::new(orig.x + d, orig.y) } else { Vec2::new(orig.x, orig.y + d) };
                lms[j] = bump(EPS);
                let up = at(&out.heatmap, &out.correspondence, &lms);
                lms[j] = bump(-EPS);
                let dn = at(&out.heatmap, &out.correspondence, &lms);
                lms[j] = orig;
                let ana = if axis == 0 { t.d_landmarks[j].x } else { t.d_landmarks[j].y };
                checked += 1;
                record(format!("seed {seed} landmark[{j}].{axis}"), ana, (up - dn) / (2.0 * EPS), &mut bad);
            }
        }
    }
    let f = grad_fixture(1, 11);
    let full = |params: &ModelParams| {
        let out = f.model.forward(&params.store, &f.image).unwrap();
        total_loss(&out.heatmap, &out.correspondence, &f.map, &f.occupancy, &params.landmarks, f.diagonal, &f.loss).unwrap().total
    };
    let (out, tape) = f.model.forward_taped(&f.params.store, &f.image).unwrap();
    let t = total_loss(&out.heatmap, &out.correspondence, &f.map, &f.occupancy, &f.params.landmarks, f.diagonal, &f.loss).unwrap();
    let grads = f.model.backward(&f.params.store, tape, &t.d_heat, &t.d_corr);
    let mut params = f.params.clone();
    let mut param_entries = 0;
    for ti in 0..params.store.tensors.len() {
        for k in 0..params.store.tensors[ti].data.len() {
            let p0 = params.store.tensors[ti].data[k];
            params.store.tensors[ti].data[k] = p0 + EPS;
            let up = full(&params);
            params.store.tensors[ti].data[k] = p0 - EPS;
            let dn = full(&params);
            params.store.tensors[ti].data[k] = p0;
            checked += 1;
            param_entries += 1;
            let name = format!("{}[{k}]", params.store.tensors[ti].name);
            record(name, grads.tensors[ti][k], (up - dn) / (2.0 * EPS), &mut bad);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Check {
        pass: bad.is_empty() && secs < 60.0,
        detail: format!(
            "{checked} entries ({param_entries} network parameters), {} above 1e-3 relative, worst relative error {worst:.2e}, {secs:.1} s (limit 60 s){}",
            bad.len(),
            bad.first().map(|b| format!("; first: {b}")).unwrap_or_default()
        ),
    }
}

/// Random loss fixture: heatmap, correspondence logits, a coordinate map of
/// a random pose, partial occupancy and landmarks around the covered area.
pub struct LossFixture {
    pub width: usize,
    pub height: usize,
    pub d_p: usize,
    pub heat: Vec<f64>,
    pub corr: Vec<f64>,
    pub map: CoordinateMap,
    pub occupancy: Vec<bool>,
    pub landmarks: Vec<Vec2>,
    pub diagonal: f64,
}

pub fn loss_fixture(seed: u64) -> LossFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_p = [1, 2, 4][rng.random_range(0..3)];
    let side = d_p * rng.random_range(2..=16 / d_p.min(4));
    let (width, height) = (side, side);
    let bev = BevConfig {
        width_px: width,
        height_px: height,
        pixel_size: rng.random_range(0.1..0.6),
        voxel_size: 0.1,
    };
    let l = rng.random_range(1..6);
    let heat: Vec<f64> = (0..width * height).map(|_| rng.random_range(-3.0..3.0)).collect();
    let corr: Vec<f64> = (0..l * d_p * d_p).map(|_| rng.random_range(-3.0..3.0)).collect();
    let pose = Pose2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-3.1..3.1));
    let map = build_coordinate_map(&pose, &bev);
    let empty_rate = rng.random_range(0.0..0.9);
    let occupancy: Vec<bool> = (0..width * height).map(|_| !rng.random_bool(empty_rate)).collect();
    let half = side as f64 * bev.pixel_size / 2.0;
    let landmarks: Vec<Vec2> = (0..l)
        .map(|_| pose.local_to_global(Vec2::new(rng.random_range(-half..half), rng.random_range(-half..half))))
        .collect();
    let l_patch = side as f64 * bev.pixel_size / d_p as f64;
    LossFixture {
        width,
        height,
        d_p,
        heat,
        corr,
        map,
        occupancy,
        landmarks,
        diagonal: l_patch * std::f64::consts::SQRT_2,
    }
}

pub fn check_loss_oracle() -> Check {
    let mut worst: f64 = 0.0;
    let mut labeled = 0;
    let mut ignored = 0;
    for seed in 0..25 {
        let f = loss_fixture(1000 + seed);
        let cfg = LossConfig::new(f.d_p);
        let got = total_loss(&f.heat, &f.corr, &f.map, &f.occupancy, &f.landmarks, f.diagonal, &cfg).unwrap();
        let lms: Vec<(f64, f64)> = f.landmarks.iter().map(|p| (p.x, p.y)).collect();
        let want = oracle_total_loss(
            &f.heat, &f.corr, f.width, f.height, &f.map.gx, &f.map.gy, &f.occupancy, &lms, f.diagonal, f.d_p,
            cfg.alpha, cfg.beta, cfg.gamma,
        );
        worst = worst.max((got.total - want).abs());
        labeled += got.diagnostics.labeled_patches;
        ignored += got.labels.iter().filter(|l| l.landmark.is_none()).count();
    }
    Check {
        pass: worst <= 1e-10,
        detail: format!("25 fixtures, max |Δ| = {worst:.2e} (limit 1e-10); {labeled} labeled and {ignored} ignored patches"),
    }
}

/// Per-cell means, summed in input order, keyed by floored cell index.
pub fn oracle_grid_average(points: &[Vec2], s: f64) -> Vec<Vec2> {
    let mut keys: Vec<(i64, i64)> = Vec::new();
    for p in points {
        let k = ((p.x / s).floor() as i64, (p.y / s).floor() as i64);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.sort();
    keys.iter()
        .map(|k| {
            let (mut x, mut y, mut n) = (0.0, 0.0, 0usize);
            for p in points {
                if ((p.x / s).floor() as i64, (p.y / s).floor() as i64) == *k {
                    x += p.x;
                    y += p.y;
                    n += 1;
                }
            }
            Vec2::new(x / n as f64, y / n as f64)
        })
        .collect()
}

pub fn oracle_nearest(coords: &[Vec2], q: Vec2) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, c) in coords.iter().enumerate() {
        let d2 = (c.x - q.x) * (c.x - q.x) + (c.y - q.y) * (c.y - q.y);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

pub fn check_landmark_math() -> Check {
    let reference = BevConfig::reference();
    let cfg = LandmarkInitConfig { d_p: 16, rho_lm: 0.2 };
    let (l_patch, s_grid) = (cfg.l_patch(&reference), cfg.s_grid(&reference));
    let s_ok = (l_patch - 6.4).abs() < 1e-12 && (s_grid - 14.31).abs() <= 0.01 && s_grid == l_patch / 0.2f64.sqrt();

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut grid_bad = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(1..40);
        let s = rng.random_range(0.3..5.0);
        // A few exact cell-boundary coordinates on top of random ones.
        let pts: Vec<Vec2> = (0..n)
            .map(|_| {
                if rng.random_bool(0.1) {
                    Vec2::new(s * rng.random_range(-4..4) as f64, rng.random_range(-10.0..10.0))
                } else {
                    Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0))
                }
            })
            .collect();
        let got = grid_average_filter(&pts, s);
        let want = oracle_grid_average(&pts, s);
        let same = got.len() == want.len()
            && got.iter().zip(&want).all(|(a, b)| a.x.to_bits() == b.x.to_bits() && a.y.to_bits() == b.y.to_bits());
        grid_bad += (!same) as usize;
    }

    let mut nn_bad = 0;
    let small: Vec<Vec2> = (0..300).map(|_| Vec2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0))).collect();
    // Large enough to go through the spatial index.
    let large: Vec<Vec2> = (0..LINEAR_SCAN_LIMIT + 5000)
        .map(|_| Vec2::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)))
        .collect();
    for i in 0..10_000 {
        let set = if i % 2 == 0 { &small } else { &large };
        let q = if i % 10 == 0 {
            set[rng.random_range(0..set.len())]
        } else {
            Vec2::new(rng.random_range(-600.0..600.0), rng.random_range(-600.0..600.0))
        };
        let got = nearest_landmark(set, q);
        let want = oracle_nearest(set, q);
        nn_bad += (got.0 != want.0 || got.1.to_bits() != want.1.to_bits()) as usize;
    }
    Check {
        pass: s_ok && grid_bad == 0 && nn_bad == 0,
        detail: format!(
            "l_patch = {l_patch} m, s_grid = {s_grid:.4} m (expect 14.31 ± 0.01); grid_average_filter {grid_bad}/10000 mismatches; nearest_landmark {nn_bad}/10000 mismatches"
        ),
    }
}

fn pair(local: Vec2, global: Vec2, landmark: usize) -> CorrespondencePair {
    CorrespondencePair { local, landmark, global, score: 1.0 }
}

/// Noiseless pairs generated by `pose`, plus `outliers` uniformly random
/// globals at least 5 m from where the pose maps their local point.
pub fn ransac_fixture(seed: u64, inliers: usize, outliers: usize) -> (Pose2, Vec<CorrespondencePair>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = Pose2::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-3.1..3.1));
    let mut pairs = Vec::new();
    for k in 0..inliers + outliers {
        let local = Vec2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
        let truth = pose.local_to_global(local);
        let global = if k < inliers {
            truth
        } else {
            // An outlier must be unambiguous: far enough from its true
            // projection that no tilt of the true model absorbs it.
            loop {
                let g = Vec2::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0));
                if g.dist(truth) >= 5.0 {
                    break g;
                }
            }
        };
        pairs.push(pair(local, global, k));
    }
    // Interleave so the inliers are not a prefix.
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    (pose, order.into_iter().map(|i| pairs[i]).collect())
}

/// Exhaustive RANSAC: every unordered pair as the minimal sample, same
/// scoring, then the same refinement rule.
pub fn oracle_exhaustive_pose(pairs: &[CorrespondencePair], cfg: &LocalizerConfig) -> Option<(Pose2, usize)> {
    let score = |pose: &Pose2| {
        let res: Vec<f64> = pairs.iter().map(|p| residual(pose, p)).collect();
        let inl: Vec<usize> = (0..pairs.len()).filter(|&i| res[i] <= cfg.inlier_threshold).collect();
        let cost: f64 = inl.iter().map(|&i| res[i]).sum();
        (inl, cost)
    };
    let mut best: Option<(Pose2, Vec<usize>, f64)> = None;
    for a in 0..pairs.len() {
        for b in a + 1..pairs.len() {
            if pairs[a].local.dist(pairs[b].local) < cfg.min_sample_separation {
                continue;
            }
            let pose = minimal_pose(&pairs[a], &pairs[b]);
            let (inl, cost) = score(&pose);
            if best.as_ref().is_none_or(|(_, bi, bc)| inl.len() > bi.len() || (inl.len() == bi.len() && cost < *bc)) {
                best = Some((pose, inl, cost));
            }
        }
    }
    let (mut pose, mut inl, _) = best?;
    let subset: Vec<CorrespondencePair> = inl.iter().map(|&i| pairs[i]).collect();
    if let Some(refined) = fit_rigid(&subset) {
        let (r_inl, _) = score(&refined);
        if r_inl.len() >= inl.len() {
            pose = refined;
            inl = r_inl;
        }
    }
    (inl.len() >= cfg.min_inliers).then_some((pose, inl.len()))
}

fn pose_error(a: &Pose2, b: &Pose2) -> (f64, f64) {
    (a.translation().dist(b.translation()), angle_diff(a.yaw, b.yaw).abs())
}

pub fn check_ransac() -> Check {
    let start = Instant::now();
    let cfg = LocalizerConfig::default();
    let mut clean_worst: (f64, f64) = (0.0, 0.0);
    for seed in 0..100 {
        let (pose, pairs) = ransac_fixture(seed, 2 + (seed as usize % 20), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let mut c = cfg.clone();
        c.min_inliers = 2;
        match ransac_pose(&pairs, &c, &mut rng).pose {
            Some(p) => {
                let (t, r) = pose_error(&p, &pose);
                clean_worst = (clean_worst.0.max(t), clean_worst.1.max(r));
            }
            None => clean_worst = (f64::INFINITY, f64::INFINITY),
        }
    }
    let mut ok = 0;
    let mut oracle_ok = 0;
    let mut noisy_worst: f64 = 0.0;
    for seed in 0..100 {
        let (pose, pairs) = ransac_fixture(500 + seed, 8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = ransac_pose(&pairs, &cfg, &mut rng);
        let oracle = oracle_exhaustive_pose(&pairs, &cfg);
        if let Some(p) = r.pose {
            let (t, a) = pose_error(&p, &pose);
            noisy_worst = noisy_worst.max(t.max(a));
            let true_inliers = r.inliers.iter().filter(|&&i| pairs[i].global.dist(pose.local_to_global(pairs[i].local)) < 1e-9).count();
            ok += (t <= 1e-6 && a <= 1e-6 && true_inliers == 8) as usize;
            if let Some((o, n)) = oracle {
                let (t, a) = pose_error(&p, &o);
                oracle_ok += (t <= 1e-9 && a <= 1e-9 && n == r.inliers.len()) as usize;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Check {
        pass: clean_worst.0 <= 1e-9 && clean_worst.1 <= 1e-9 && ok == 100 && oracle_ok == 100 && secs < 30.0,
        detail: format!(
            "noiseless worst error {:.1e} m / {:.1e} rad (limit 1e-9); 50% outliers: {ok}/100 within 1e-6 with all 8 inliers (worst {noisy_worst:.1e}), {oracle_ok}/100 equal to the exhaustive C(16,2) oracle; {secs:.2} s (limit 30 s)",
            clean_worst.0, clean_worst.1
        ),
    }
}

/// Direct transcription of the peak rule with a full window scan per pixel.
pub fn oracle_peaks(heat: &[f64], w: usize, h: usize, r: usize, rel: f64, max_peaks: usize) -> Vec<(usize, usize, f64)> {
    let lo = heat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = heat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = lo + rel * (hi - lo);
    let mut out = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let s = heat[v * w + u];
            if s < threshold {
                continue;
            }
            let (mut all_le, mut some_lt, mut earlier_eq) = (true, false, false);
            for y in v as i64 - r as i64..=v as i64 + r as i64 {
                for x in u as i64 - r as i64..=u as i64 + r as i64 {
                    if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 || (x as usize == u && y as usize == v) {
                        continue;
                    }
                    let o = heat[y as usize * w + x as usize];
                    all_le &= o <= s;
                    some_lt |= o < s;
                    earlier_eq |= o == s && (y as usize * w + x as usize) < v * w + u;
                }
            }
            if all_le && some_lt && !earlier_eq {
                out.push((u, v, s));
            }
        }
    }
    out.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then((a.1 * w + a.0).cmp(&(b.1 * w + b.0))));
    out.truncate(max_peaks);
    out
}

pub fn random_field(seed: u64, w: usize, h: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match seed % 3 {
        // Continuous values.
        0 => (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect(),
        // Coarse levels, so plateaus and ties are common.
        1 => (0..w * h).map(|_| rng.random_range(0..4) as f64).collect(),
        // Smooth bumps.
        _ => {
            let bumps: Vec<(f64, f64, f64)> = (0..12)
                .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64), rng.random_range(0.5..2.0)))
                .collect();
            (0..w * h)
                .map(|i| {
                    let (u, v) = ((i % w) as f64, (i / w) as f64);
                    bumps.iter().map(|&(x, y, a)| a * (-((u - x).powi(2) + (v - y).powi(2)) / 8.0).exp()).sum()
                })
                .collect()
        }
    }
}

pub fn check_peaks() -> Check {
    let cfg = LocalizerConfig::default();
    let mut mismatches = 0;
    let mut total_peaks = 0;
    for seed in 0..100 {
        let heat = random_field(seed, 64, 64);
        let got: Vec<(usize, usize, f64)> = detect_peaks(&heat, 64, 64, &cfg).iter().map(|p| (p.u, p.v, p.score)).collect();
        let want = oracle_peaks(&heat, 64, 64, cfg.min_peak_distance, 0.1, cfg.max_peaks);
        total_peaks += want.len();
        mismatches += (got != want) as usize;
    }
    Check {
        pass: mismatches == 0,
        detail: format!("{mismatches}/100 fields differ from the brute-force oracle ({total_peaks} peaks in total)"),
    }
}

pub fn check_resources(desk_bundle_bytes: usize) -> Check {
    let full = param_count(&ModelConfig::full_scale(614, 0)).unwrap();
    Check {
        pass: desk_bundle_bytes <= 2 * 1024 * 1024 && (4_000_000..=5_500_000).contains(&full),
        detail: format!("desk bundle {desk_bundle_bytes} bytes (limit 2 MiB); full-scale param_count {full} (range [4.0 M, 5.5 M])"),
    }
}

/// Brute-force metrics straight from the definitions.
pub fn oracle_eval(est: &[Option<Pose2>], gt: &[Pose2], te_max: f64, re_max: f64) -> (usize, Option<f64>, Option<f64>) {
    let mut succ = 0;
    let mut tes = Vec::new();
    let mut res = Vec::new();
    for (e, g) in est.iter().zip(gt) {
        if let Some(e) = e {
            let te = ((e.x - g.x).powi(2) + (e.y - g.y).powi(2)).sqrt();
            let mut d = (e.yaw - g.yaw) % std::f64::consts::TAU;
            if d > std::f64::consts::PI {
                d -= std::f64::consts::TAU;
            } else if d <= -std::f64::consts::PI {
                d += std::f64::consts::TAU;
            }
            let re = d.abs().to_degrees();
            if te < te_max && re < re_max {
                succ += 1;
            }
            tes.push(te);
            res.push(re);
        }
    }
    let median = |mut v: Vec<f64>| {
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(v[(v.len() - 1) / 2])
    };
    (succ, median(tes), median(res))
}

pub fn check_eval() -> Check {
    let th = EvalThresholds::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut mismatches = 0;
    let mut max_med_diff: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..30);
        let gt: Vec<Pose2> = (0..n).map(|_| Pose2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(-3.1..3.1))).collect();
        let est: Vec<Option<Pose2>> = gt
            .iter()
            .map(|g| {
                if rng.random_bool(0.15) {
                    return None;
                }
                let (dx, dy) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let dyaw = rng.random_range(-10.0f64..10.0).to_radians();
                Some(Pose2::new(g.x + dx, g.y + dy, g.yaw + dyaw))
            })
            .collect();
        let r = evaluate(&est, &gt, &gt, &th).unwrap();
        let (s, mt, mr) = oracle_eval(&est, &gt, th.te_max, th.re_max);
        let diff = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => (a - b).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        };
        let d = diff(r.median_te, mt).max(diff(r.median_re_deg, mr));
        max_med_diff = max_med_diff.max(d);
        mismatches += (r.successes != s || d > 1e-9) as usize;
    }
    // Straddle fixtures: strict thresholds.
    let g = Pose2::new(0.0, 0.0, 0.0);
    let straddle = [
        (Pose2::new(1.0, 0.0, 0.0), true),
        (Pose2::new(3.0, 0.0, 0.0), false),
        (Pose2::new(2.0, 0.0, 0.0), false),
        (Pose2::new(1.999, 0.0, 0.0), true),
        (Pose2::new(0.0, 0.0, 4.999f64.to_radians()), true),
        (Pose2::new(0.0, 0.0, 5.001f64.to_radians()), false),
        (Pose2::new(1.5, 0.0, 6.0f64.to_radians()), false),
    ];
    let straddle_ok = straddle
        .iter()
        .all(|(e, want)| evaluate(&[Some(*e)], &[g], &[g], &th).unwrap().per_frame[0].success == *want);
    let two = evaluate(&[Some(straddle[0].0), Some(straddle[1].0)], &[g, g], &[g], &th).unwrap();
    let lower = eval::lower_median(&[0.1, 0.2, 0.4, 9.0]) == Some(0.2);
    Check {
        pass: mismatches == 0 && straddle_ok && two.sr == 50.0 && lower,
        detail: format!(
            "{mismatches}/1000 random sets differ from the oracle (max median Δ {max_med_diff:.1e}); straddle fixtures {}; [1 m, 3 m] → SR {:.0}%",
            if straddle_ok { "hold" } else { "FAIL" },
            two.sr
        ),
    }
}

/// Encode, decode and re-encode a trained-shape bundle; every byte and every
/// parameter bit must survive.
pub fn bundle_round_trip(bundle: &Bundle) -> bool {
    let bytes = encode_bundle(bundle);
    let Ok(back) = decode_bundle(&bytes) else { return false };
    let same_bits = bundle.params.store.tensors.iter().zip(&back.params.store.tensors).all(|(a, b)| {
        a.name == b.name && a.shape == b.shape && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
    }) && bundle.params.landmarks.iter().zip(&back.params.landmarks).all(|(a, b)| a.x.to_bits() == b.x.to_bits() && a.y.to_bits() == b.y.to_bits());
    same_bits && encode_bundle(&back) == bytes && back == *bundle
}
