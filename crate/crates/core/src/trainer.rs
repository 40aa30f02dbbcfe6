//! Joint optimization of the network weights and the landmark coordinates.
//!
//! One frame per step by default: sample an augmentation, warp the frame's
//! BEV image and coordinate map, run forward and backward, and apply SGD
//! with momentum to θ and (unless frozen) Λ. Every random draw is derived
//! from `(seed, epoch, step)`, so a run resumed from a checkpoint follows
//! the uninterrupted trajectory bit for bit.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bev::{augment, bev_from_scan, build_coordinate_map, AugmentRanges, BevConfig, BevImage, CoordinateMap};
use crate::bundle::{decode_with_appendix, encode_with_appendix, Bundle, Reader, Writer};
use crate::geometry::{PointCloud, Pose2, Vec2};
use crate::loss::{total_loss, LossConfig};
use crate::model::{Gradients, Model, ModelConfig, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    /// Multiplier applied at each milestone.
    pub lr_decay: f64,
    /// Epochs between decays; `None` means `⌈2·epochs/3⌉`, capped so the
    /// last epoch is decayed.
    pub lr_step: Option<usize>,
    pub momentum: f64,
    pub val_fraction: f64,
    pub freeze_landmarks: bool,
    pub seed: u64,
    pub loss: LossConfig,
    pub augment: AugmentRanges,
}

impl TrainConfig {
    pub fn new(d_p: usize, epochs: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch_size: 1,
            lr_initial: 4e-4,
            lr_final: 4e-5,
            lr_decay: 0.1,
            lr_step: None,
            momentum: 0.9,
            val_fraction: 0.03,
            freeze_landmarks: false,
            seed,
            loss: LossConfig::new(d_p),
            augment: AugmentRanges::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::config("val_fraction must lie in (0, 1)"));
        }
        if !(self.lr_final > 0.0 && self.lr_final <= self.lr_initial) {
            return Err(Error::config("need 0 < lr_final <= lr_initial"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("lr_decay must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.lr_step == Some(0) {
            return Err(Error::config("lr_step must be positive"));
        }
        self.loss.validate()?;
        self.augment.validate()
    }
}

/// Deterministic shuffled split with at least one frame on each side.
pub fn split_train_val(frames: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if frames < 2 {
        return Err(Error::Invalid(format!("need at least 2 frames to split, got {frames}")));
    }
    let n_val = ((frames as f64 * val_fraction).floor() as usize).clamp(1, frames - 1);
    let mut idx: Vec<usize> = (0..frames).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let step = cfg
        .lr_step
        .unwrap_or_else(|| (2 * cfg.epochs).div_ceil(3).min(cfg.epochs.saturating_sub(1)).max(1));
    let k = (epoch / step) as i32;
    (cfg.lr_initial * cfg.lr_decay.powi(k)).max(cfg.lr_final)
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `stream`-th independent substream of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(mix(seed) ^ stream)
}

fn step_rng(seed: u64, epoch: usize, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ epoch as u64) ^ step))
}

/// A reference frame with its un-augmented BEV image and coordinate map.
#[derive(Debug, Clone)]
pub struct TrainFrame {
    pub id: String,
    pub pose: Pose2,
    pub image: BevImage,
    pub map: CoordinateMap,
}

impl TrainFrame {
    pub fn from_scan(id: impl Into<String>, pose: Pose2, cloud: &PointCloud, bev: &BevConfig) -> Self {
        Self {
            id: id.into(),
            pose,
            image: bev_from_scan(cloud, bev),
            map: build_coordinate_map(&pose, bev),
        }
    }
}

/// θ initialized from the model config seed, Λ given.
pub fn initial_params(config: &ModelConfig, landmarks: Vec<Vec2>) -> Result<ModelParams> {
    if landmarks.len() != config.num_landmarks {
        return Err(Error::config(format!(
            "model declares {} landmarks, {} supplied",
            config.num_landmarks,
            landmarks.len()
        )));
    }
    let (_, store) = Model::init(config)?;
    Ok(ModelParams {
        config: *config,
        store,
        landmarks,
    })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Mean distance of Λ from its initialization.
    pub lambda_mean_disp: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "{} {:.6} {:.6} {:.3e} {:.6}",
            self.epoch, self.train_loss, self.val_loss, self.lr, self.lambda_mean_disp
        )
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub train_frames: usize,
    pub val_frames: usize,
    pub freeze_landmarks: bool,
    pub initial_landmarks: Vec<Vec2>,
    pub final_landmarks: Vec<Vec2>,
    pub mean_displacement: f64,
    pub max_displacement: f64,
    /// Fraction of landmarks that moved more than 0.1 m.
    pub moved_fraction: f64,
}

impl TrainReport {
    pub fn log_text(&self) -> String {
        let mut s = String::from("epoch train_loss val_loss lr lambda_mean_disp\n");
        for e in &self.epochs {
            s.push_str(&e.line());
            s.push('\n');
        }
        s
    }
}

fn displacement(a: &[Vec2], b: &[Vec2]) -> (f64, f64, f64) {
    if a.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p.dist(*q)).collect();
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let max = d.iter().cloned().fold(0.0, f64::max);
    let moved = d.iter().filter(|&&x| x > 0.1).count() as f64 / d.len() as f64;
    (mean, max, moved)
}

#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    val_loss: f64,
    epoch: usize,
    params: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    velocity: Vec<Vec<f64>>,
    landmark_velocity: Vec<Vec2>,
    /// Next epoch to run.
    pub epoch: usize,
    initial_landmarks: Vec<Vec2>,
    best: Option<Snapshot>,
    history: Vec<EpochLog>,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        Self {
            velocity: params.store.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            landmark_velocity: vec![Vec2::ZERO; params.landmarks.len()],
            epoch: 0,
            initial_landmarks: params.landmarks.clone(),
            best: None,
            history: Vec::new(),
            params,
        }
    }
}

/// `v ← μ·v + g; p ← p − lr·v` over θ and, unless frozen, Λ. Non-finite
/// gradients abort before anything is modified.
pub fn sgd_step(state: &mut TrainState, grads: &Gradients, lr: f64, momentum: f64, freeze_landmarks: bool) -> Result<()> {
    if grads.tensors.len() != state.params.store.tensors.len() {
        return Err(Error::Invalid("gradient tensor count does not match parameters".into()));
    }
    for (t, g) in state.params.store.tensors.iter().zip(&grads.tensors) {
        if g.len() != t.data.len() {
            return Err(Error::Invalid(format!("gradient shape mismatch for `{}`", t.name)));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(t.name.clone()));
        }
    }
    let update_landmarks = !freeze_landmarks && !grads.landmarks.is_empty();
    if update_landmarks {
        if grads.landmarks.len() != state.params.landmarks.len() {
            return Err(Error::Invalid("landmark gradient count does not match Λ".into()));
        }
        if grads.landmarks.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient("landmarks".into()));
        }
    }
    for ((t, v), g) in state.params.store.tensors.iter_mut().zip(&mut state.velocity).zip(&grads.tensors) {
        for ((p, vi), gi) in t.data.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi + gi;
            *p -= lr * *vi;
        }
    }
    if update_landmarks {
        for ((p, v), g) in state
            .params
            .landmarks
            .iter_mut()
            .zip(&mut state.landmark_velocity)
            .zip(&grads.landmarks)
        {
            *v = *v * momentum + *g;
            *p = *p - *v * lr;
        }
    }
    Ok(())
}

pub struct Trainer<'a> {
    pub cfg: TrainConfig,
    pub bev: BevConfig,
    model: Model,
    frames: &'a [TrainFrame],
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub state: TrainState,
    patch_diagonal: f64,
}

impl<'a> Trainer<'a> {
    pub fn new(frames: &'a [TrainFrame], bev: BevConfig, cfg: TrainConfig, params: ModelParams) -> Result<Self> {
        cfg.validate()?;
        bev.validate()?;
        if cfg.loss.d_p != params.config.d_p {
            return Err(Error::config("loss d_P differs from the model's"));
        }
        if bev.width_px != params.config.width || bev.height_px != params.config.height {
            return Err(Error::config("BEV raster does not match the model input"));
        }
        if frames.iter().any(|f| f.image.config != bev) {
            return Err(Error::config("frame rasters do not match the BEV config"));
        }
        let model = Model::for_params(&params)?;
        let (train_idx, val_idx) = split_train_val(frames.len(), cfg.val_fraction, cfg.seed)?;
        let l_patch = bev.width_px as f64 * bev.pixel_size / params.config.d_p as f64;
        Ok(Self {
            cfg,
            bev,
            model,
            frames,
            train_idx,
            val_idx,
            state: TrainState::new(params),
            patch_diagonal: l_patch * std::f64::consts::SQRT_2,
        })
    }

    /// Loss and gradients for one (possibly augmented) frame.
    fn frame_gradients(&self, image: &BevImage, map: &CoordinateMap, need_grads: bool) -> Result<(f64, Option<Gradients>)> {
        let p = &self.state.params;
        let (out, tape) = self.model.forward_taped(&p.store, image)?;
        let loss = total_loss(
            &out.heatmap,
            &out.correspondence,
            map,
            &image.occupancy(),
            &p.landmarks,
            self.patch_diagonal,
            &self.cfg.loss,
        )?;
        if !need_grads {
            return Ok((loss.total, None));
        }
        let mut grads = self.model.backward(&p.store, tape, &loss.d_heat, &loss.d_corr);
        grads.landmarks = loss.d_landmarks;
        Ok((loss.total, Some(grads)))
    }

    pub fn validation_loss(&self) -> Result<f64> {
        let mut sum = 0.0;
        for &i in &self.val_idx {
            let f = &self.frames[i];
            sum += self.frame_gradients(&f.image, &f.map, false)?.0;
        }
        Ok(sum / self.val_idx.len() as f64)
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.state.epoch;
        let lr = lr_schedule(epoch, &self.cfg);
        let mut order = self.train_idx.clone();
        order.shuffle(&mut step_rng(self.cfg.seed, epoch, u64::MAX));
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let mut acc: Option<Gradients> = None;
            for (k, &i) in batch.iter().enumerate() {
                let f = &self.frames[i];
                let step = (b * self.cfg.batch_size + k) as u64;
                let aug = self.cfg.augment.sample(&mut step_rng(self.cfg.seed, epoch, step));
                let (image, map) = augment(&f.image, &f.map, &aug)?;
                let (loss, grads) = self.frame_gradients(&image, &map, true)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                total += loss;
                let g = grads.expect("requested");
                acc = Some(match acc {
                    None => g,
                    Some(mut a) => {
                        for (x, y) in a.tensors.iter_mut().zip(&g.tensors) {
                            x.iter_mut().zip(y).for_each(|(x, y)| *x += y);
                        }
                        for (x, y) in a.landmarks.iter_mut().zip(&g.landmarks) {
                            *x = *x + *y;
                        }
                        a
                    }
                });
            }
            let mut g = acc.expect("non-empty batch");
            if batch.len() > 1 {
                let s = 1.0 / batch.len() as f64;
                g.tensors.iter_mut().flatten().for_each(|x| *x *= s);
                g.landmarks.iter_mut().for_each(|x| *x = *x * s);
            }
            sgd_step(&mut self.state, &g, lr, self.cfg.momentum, self.cfg.freeze_landmarks)?;
        }
        let val_loss = self.validation_loss()?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let log = EpochLog {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss,
            lr,
            lambda_mean_disp: displacement(&self.state.initial_landmarks, &self.state.params.landmarks).0,
        };
        let improved = self.state.best.as_ref().is_none_or(|b| val_loss < b.val_loss);
        if improved {
            self.state.best = Some(Snapshot {
                val_loss,
                epoch,
                params: self.state.params.clone(),
            });
        }
        self.state.history.push(log.clone());
        self.state.epoch += 1;
        Ok(log)
    }

    /// Runs the remaining epochs, reporting each as it finishes.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochLog, &Self)) -> Result<()> {
        while self.state.epoch < self.cfg.epochs {
            let log = self.run_epoch()?;
            on_epoch(&log, self);
        }
        Ok(())
    }

    /// The released bundle: the best-validation parameters (initialization
    /// when no epoch ran), rounded to bundle precision.
    pub fn bundle(&self) -> Result<Bundle> {
        let mut params = match &self.state.best {
            Some(b) => b.params.clone(),
            None => self.state.params.clone(),
        };
        params.round_to_f32();
        Bundle::new(params, self.bev)
    }

    pub fn report(&self) -> TrainReport {
        let released = match &self.state.best {
            Some(b) => &b.params.landmarks,
            None => &self.state.params.landmarks,
        };
        let (mean, max, moved) = displacement(&self.state.initial_landmarks, released);
        TrainReport {
            epochs: self.state.history.clone(),
            best_epoch: self.state.best.as_ref().map(|b| b.epoch),
            best_val_loss: self.state.best.as_ref().map(|b| b.val_loss),
            train_frames: self.train_idx.len(),
            val_frames: self.val_idx.len(),
            freeze_landmarks: self.cfg.freeze_landmarks,
            initial_landmarks: self.state.initial_landmarks.clone(),
            final_landmarks: released.clone(),
            mean_displacement: mean,
            max_displacement: max,
            moved_fraction: moved,
        }
    }

    /// Bundle of the current parameters plus the full optimizer state.
    pub fn checkpoint(&self) -> Result<Vec<u8>> {
        let mut current = self.state.params.clone();
        current.round_to_f32();
        let bundle = Bundle::new(current, self.bev)?;
        Ok(encode_with_appendix(&bundle, &encode_state(&self.state, &self.cfg)))
    }

    /// Continues a run from [`Trainer::checkpoint`] output. The frames and
    /// configuration must match the original run.
    pub fn resume(frames: &'a [TrainFrame], bev: BevConfig, cfg: TrainConfig, checkpoint: &[u8]) -> Result<Self> {
        let (bundle, appendix) = decode_with_appendix(checkpoint)?;
        let appendix = appendix.ok_or_else(|| Error::Invalid("bundle has no optimizer state".into()))?;
        let state = decode_state(appendix, &bundle.params, &cfg)?;
        let mut trainer = Self::new(frames, bev, cfg, state.params.clone())?;
        trainer.state = state;
        Ok(trainer)
    }
}

const STATE_VERSION: u32 = 1;

fn write_params(w: &mut Writer, p: &ModelParams) {
    for t in &p.store.tensors {
        t.data.iter().for_each(|&v| w.f64(v));
    }
    for l in &p.landmarks {
        w.f64(l.x);
        w.f64(l.y);
    }
}

fn read_params(r: &mut Reader, template: &ModelParams) -> Result<ModelParams> {
    let mut p = template.clone();
    for t in &mut p.store.tensors {
        for v in &mut t.data {
            *v = r.f64()?;
        }
    }
    for l in &mut p.landmarks {
        *l = Vec2::new(r.f64()?, r.f64()?);
    }
    Ok(p)
}

fn read_vec2s(r: &mut Reader, n: usize) -> Result<Vec<Vec2>> {
    (0..n).map(|_| Ok(Vec2::new(r.f64()?, r.f64()?))).collect()
}

fn encode_state(s: &TrainState, cfg: &TrainConfig) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(STATE_VERSION);
    let cfg_json = serde_json::to_string(cfg).expect("config serializes");
    w.u64(cfg_json.len() as u64);
    w.bytes(cfg_json.as_bytes());
    w.u64(s.epoch as u64);
    write_params(&mut w, &s.params);
    s.velocity.iter().flatten().for_each(|&v| w.f64(v));
    for v in &s.landmark_velocity {
        w.f64(v.x);
        w.f64(v.y);
    }
    for l in &s.initial_landmarks {
        w.f64(l.x);
        w.f64(l.y);
    }
    match &s.best {
        Some(b) => {
            w.u8(1);
            w.f64(b.val_loss);
            w.u64(b.epoch as u64);
            write_params(&mut w, &b.params);
        }
        None => w.u8(0),
    }
    let history = serde_json::to_string(&s.history).expect("history serializes");
    w.u64(history.len() as u64);
    w.bytes(history.as_bytes());
    w.buf
}

fn decode_state(bytes: &[u8], template: &ModelParams, cfg: &TrainConfig) -> Result<TrainState> {
    let mut r = Reader::new(bytes, "optimizer state");
    let version = r.u32()?;
    if version != STATE_VERSION {
        return Err(r.err(format!("unsupported optimizer state version {version}")));
    }
    let len = r.u64()? as usize;
    let stored: TrainConfig = serde_json::from_slice(r.take(len)?)
        .map_err(|e| r.err(format!("bad training config: {e}")))?;
    if stored != *cfg {
        return Err(Error::config("checkpoint was written with a different training configuration"));
    }
    let epoch = r.u64()? as usize;
    let params = read_params(&mut r, template)?;
    let velocity = template
        .store
        .tensors
        .iter()
        .map(|t| (0..t.data.len()).map(|_| r.f64()).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let l = template.landmarks.len();
    let landmark_velocity = read_vec2s(&mut r, l)?;
    let initial_landmarks = read_vec2s(&mut r, l)?;
    let best = match r.u8()? {
        0 => None,
        1 => {
            let val_loss = r.f64()?;
            let epoch = r.u64()? as usize;
            Some(Snapshot {
                val_loss,
                epoch,
                params: read_params(&mut r, template)?,
            })
        }
        f => return Err(r.err(format!("bad snapshot flag {f}"))),
    };
    let len = r.u64()? as usize;
    let history = serde_json::from_slice(r.take(len)?).map_err(|e| r.err(format!("bad history: {e}")))?;
    if r.remaining() != 0 {
        return Err(r.err("trailing bytes in optimizer state"));
    }
    Ok(TrainState {
        params,
        velocity,
        landmark_velocity,
        epoch,
        initial_landmarks,
        best,
        history,
    })
}

/// Convenience wrapper: run every epoch and return the released bundle.
pub fn train(frames: &[TrainFrame], bev: BevConfig, cfg: TrainConfig, params: ModelParams) -> Result<(Bundle, TrainReport)> {
    let mut t = Trainer::new(frames, bev, cfg, params)?;
    t.run(|_, _| {})?;
    Ok((t.bundle()?, t.report()))
}
