//! The landmark detector: a small feature-pyramid encoder–decoder producing a
//! full-resolution heatmap and a patch-resolution correspondence map.
//!
//! Layout for `depth = D` and base width `c`:
//!
//! * stem conv block (1 → c) at full resolution;
//! * `D` down blocks (max pool + residual block), level `k` has `c·(k+1)`
//!   channels;
//! * top-down pyramid: 1×1 laterals to `c` channels merged with bilinear
//!   upsampling from level `D` to level 1;
//! * heatmap branch on level 1: conv block, 1×1 to one channel, bicubic
//!   upsample to full resolution;
//! * correspondence branch on level `D`: extra down blocks until the patch
//!   grid resolution, conv block, 1×1 to `L` channels.
//!
//! The landmark table Λ lives next to the weights but is not read by the
//! forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bev::BevImage;
use crate::geometry::Vec2;
use crate::nn::{
    leaky_relu, leaky_relu_backward, max_pool2, max_pool2_backward, Conv2d, ConvCache, Interp,
    LayerNorm2d, NormCache, Tensor, Upsample,
};
use crate::{Error, Result};

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered set of named parameter tensors.
#[derive(Debug, Clone)]
pub struct ParamStore {
    pub tensors: Vec<NamedTensor>,
    rng: ChaCha8Rng,
    /// Record names and shapes only; data stays empty.
    shapes_only: bool,
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            tensors: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            shapes_only: false,
        }
    }

    fn shapes_only() -> Self {
        Self {
            shapes_only: true,
            ..Self::new(0)
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id].data
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum()
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn add_uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> ParamId {
        if self.shapes_only {
            return self.push(name, shape, Vec::new());
        }
        let n: usize = shape.iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.push(name, shape, data)
    }

    pub fn add_const(&mut self, name: &str, shape: Vec<usize>, value: f64) -> ParamId {
        if self.shapes_only {
            return self.push(name, shape, Vec::new());
        }
        let n: usize = shape.iter().product();
        self.push(name, shape, vec![value; n])
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        debug_assert!(self.tensors.iter().all(|t| t.name != name), "duplicate name {name}");
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            shape,
            data,
        });
        self.tensors.len() - 1
    }
}

/// Gradients for every tensor of a [`ParamStore`] plus the landmark table.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
    pub landmarks: Vec<Vec2>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            tensors: store.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            landmarks: Vec::new(),
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id]
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&g| g == 0.0)
            && self.landmarks.iter().all(|g| g.x == 0.0 && g.y == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub d_p: usize,
    pub num_landmarks: usize,
    pub base_channels: usize,
    /// Number of encoder down blocks.
    pub depth: usize,
    /// LeakyReLU negative slope, stored as bits so the config stays `Eq`.
    pub leaky_slope_bits: u64,
    pub seed: u64,
}

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

impl ModelConfig {
    /// The reduced configuration used for desk-scale training: 64 × 64 input,
    /// 4 × 4 patches, 16 base channels, three down blocks.
    pub fn desk(num_landmarks: usize, seed: u64) -> Self {
        Self {
            height: 64,
            width: 64,
            d_p: 4,
            num_landmarks,
            base_channels: 16,
            depth: 3,
            leaky_slope_bits: DEFAULT_LEAKY_SLOPE.to_bits(),
            seed,
        }
    }

    /// Full-size configuration: 512 × 512 input and 16 × 16 patches.
    pub fn full_scale(num_landmarks: usize, seed: u64) -> Self {
        Self {
            height: 512,
            width: 512,
            d_p: 16,
            num_landmarks,
            base_channels: 48,
            depth: 5,
            leaky_slope_bits: DEFAULT_LEAKY_SLOPE.to_bits(),
            seed,
        }
    }

    pub fn leaky_slope(&self) -> f64 {
        f64::from_bits(self.leaky_slope_bits)
    }

    pub fn with_leaky_slope(mut self, slope: f64) -> Self {
        self.leaky_slope_bits = slope.to_bits();
        self
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * (level + 1)
    }

    /// Number of pooling steps from the input to the patch grid.
    pub fn patch_levels(&self) -> Option<usize> {
        if self.d_p == 0 || self.height % self.d_p != 0 || self.width % self.d_p != 0 {
            return None;
        }
        let (ph, pw) = (self.height / self.d_p, self.width / self.d_p);
        if ph != pw || !ph.is_power_of_two() {
            return None;
        }
        Some(ph.trailing_zeros() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let levels = self.patch_levels().ok_or_else(|| {
            Error::config(format!(
                "input {}x{} must be d_P·2^m on both axes (d_P = {})",
                self.height, self.width, self.d_p
            ))
        })?;
        if self.depth == 0 {
            return Err(Error::config("depth must be at least 1"));
        }
        if self.depth > levels {
            return Err(Error::config(format!(
                "depth {} exceeds the {levels} pooling steps to the patch grid",
                self.depth
            )));
        }
        if self.num_landmarks == 0 {
            return Err(Error::config("model needs at least one landmark"));
        }
        if self.base_channels < 2 {
            return Err(Error::config("base channels must be at least 2"));
        }
        let s = self.leaky_slope();
        if !(s.is_finite() && (0.0..1.0).contains(&s)) {
            return Err(Error::config("leaky slope must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// θ and Λ together.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub landmarks: Vec<Vec2>,
}

impl ModelParams {
    /// Total scalar count, landmark coordinates included.
    pub fn count(&self) -> usize {
        self.store.num_scalars() + 2 * self.landmarks.len()
    }

    /// Rounds every value through `f32`, the precision of the bundle format.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.store.tensors {
            for v in &mut t.data {
                *v = *v as f32 as f64;
            }
        }
        for l in &mut self.landmarks {
            *l = Vec2::new(l.x as f32 as f64, l.y as f32 as f64);
        }
    }
}

/// Exact parameter count for a configuration, including the `2L` landmark
/// coordinates.
pub fn param_count(config: &ModelConfig) -> Result<usize> {
    Ok(param_layout(config)?.iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>() + 2 * config.num_landmarks)
}

/// Names and shapes of every θ tensor, in storage order, without allocating
/// parameter data.
pub fn param_layout(config: &ModelConfig) -> Result<Vec<(String, Vec<usize>)>> {
    config.validate()?;
    let mut store = ParamStore::shapes_only();
    Model::register(config, &mut store);
    Ok(store.tensors.into_iter().map(|t| (t.name, t.shape)).collect())
}

#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv2d,
    norm: LayerNorm2d,
}

struct ConvBlockCache {
    conv: ConvCache,
    norm: NormCache,
    pre_act: Tensor,
}

impl ConvBlock {
    fn register(store: &mut ParamStore, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self {
            conv: Conv2d::register(store, &format!("{name}.conv"), cin, cout, k),
            norm: LayerNorm2d::register(store, &format!("{name}.norm"), cout),
        }
    }

    fn forward(&self, p: &ParamStore, x: &Tensor, slope: f64) -> (Tensor, ConvBlockCache) {
        let (y, conv) = self.conv.forward(p, x);
        let (z, norm) = self.norm.forward(p, &y);
        let out = leaky_relu(&z, slope);
        (
            out,
            ConvBlockCache {
                conv,
                norm,
                pre_act: z,
            },
        )
    }

    fn backward(
        &self,
        p: &ParamStore,
        cache: ConvBlockCache,
        dout: &Tensor,
        slope: f64,
        g: &mut Gradients,
    ) -> Tensor {
        let dz = leaky_relu_backward(&cache.pre_act, dout, slope);
        let dy = self.norm.backward(p, cache.norm, &dz, g);
        self.conv.backward(p, cache.conv, &dy, g)
    }
}

/// conv-norm-act-conv-norm, plus identity or 1×1 projection skip, then act.
#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    norm1: LayerNorm2d,
    conv2: Conv2d,
    norm2: LayerNorm2d,
    skip: Option<Conv2d>,
}

struct ResCache {
    c1: ConvCache,
    n1: NormCache,
    a1: Tensor,
    c2: ConvCache,
    n2: NormCache,
    skip: Option<ConvCache>,
    pre_out: Tensor,
}

impl ResBlock {
    fn register(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv1: Conv2d::register(store, &format!("{name}.conv1"), cin, cout, 3),
            norm1: LayerNorm2d::register(store, &format!("{name}.norm1"), cout),
            conv2: Conv2d::register(store, &format!("{name}.conv2"), cout, cout, 3),
            norm2: LayerNorm2d::register(store, &format!("{name}.norm2"), cout),
            skip: (cin != cout).then(|| Conv2d::register(store, &format!("{name}.skip"), cin, cout, 1)),
        }
    }

    fn forward(&self, p: &ParamStore, x: &Tensor, slope: f64) -> (Tensor, ResCache) {
        let (y1, c1) = self.conv1.forward(p, x);
        let (z1, n1) = self.norm1.forward(p, &y1);
        let h = leaky_relu(&z1, slope);
        let (y2, c2) = self.conv2.forward(p, &h);
        let (mut sum, n2) = self.norm2.forward(p, &y2);
        let skip = match &self.skip {
            Some(conv) => {
                let (s, cache) = conv.forward(p, x);
                sum.add_assign(&s);
                Some(cache)
            }
            None => {
                sum.add_assign(x);
                None
            }
        };
        let out = leaky_relu(&sum, slope);
        (
            out,
            ResCache {
                c1,
                n1,
                a1: z1,
                c2,
                n2,
                skip,
                pre_out: sum,
            },
        )
    }

    fn backward(&self, p: &ParamStore, cache: ResCache, dout: &Tensor, slope: f64, g: &mut Gradients) -> Tensor {
        let dsum = leaky_relu_backward(&cache.pre_out, dout, slope);
        let dy2 = self.norm2.backward(p, cache.n2, &dsum, g);
        let dh = self.conv2.backward(p, cache.c2, &dy2, g);
        let dz1 = leaky_relu_backward(&cache.a1, &dh, slope);
        let dy1 = self.norm1.backward(p, cache.n1, &dz1, g);
        let mut dx = self.conv1.backward(p, cache.c1, &dy1, g);
        match (&self.skip, cache.skip) {
            (Some(conv), Some(sc)) => dx.add_assign(&conv.backward(p, sc, &dsum, g)),
            _ => dx.add_assign(&dsum),
        }
        dx
    }
}

/// Max pool followed by a residual block.
#[derive(Debug, Clone)]
struct DownBlock {
    res: ResBlock,
}

struct DownCache {
    arg: Vec<u32>,
    in_h: usize,
    in_w: usize,
    res: ResCache,
}

impl DownBlock {
    fn register(store: &mut ParamStore, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            res: ResBlock::register(store, name, cin, cout),
        }
    }

    fn forward(&self, p: &ParamStore, x: &Tensor, slope: f64) -> (Tensor, DownCache) {
        let (pooled, arg) = max_pool2(x);
        let (out, res) = self.res.forward(p, &pooled, slope);
        (
            out,
            DownCache {
                arg,
                in_h: x.h,
                in_w: x.w,
                res,
            },
        )
    }

    fn backward(&self, p: &ParamStore, cache: DownCache, dout: &Tensor, slope: f64, g: &mut Gradients) -> Tensor {
        let dpooled = self.res.backward(p, cache.res, dout, slope, g);
        max_pool2_backward(&cache.arg, &dpooled, cache.in_h, cache.in_w)
    }
}

/// Verifies that `tensors` has exactly the names and shapes `config` implies.
pub fn check_layout(config: &ModelConfig, tensors: &[NamedTensor]) -> Result<()> {
    let layout = param_layout(config)?;
    if layout.len() != tensors.len() {
        return Err(Error::Invalid(format!(
            "expected {} parameter tensors, found {}",
            layout.len(),
            tensors.len()
        )));
    }
    for ((name, shape), t) in layout.iter().zip(tensors) {
        let n: usize = shape.iter().product();
        if *name != t.name || *shape != t.shape || t.data.len() != n {
            return Err(Error::Invalid(format!(
                "parameter `{}` {:?} does not match expected `{name}` {shape:?}",
                t.name, t.shape
            )));
        }
    }
    Ok(())
}

/// Network outputs: heatmap logits `H × W` and correspondence logits
/// `L × d_P × d_P`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub height: usize,
    pub width: usize,
    pub d_p: usize,
    pub num_landmarks: usize,
    pub heatmap: Vec<f64>,
    pub correspondence: Vec<f64>,
}

impl ForwardOutput {
    pub fn is_finite(&self) -> bool {
        self.heatmap.iter().chain(&self.correspondence).all(|v| v.is_finite())
    }

    /// Correspondence logits of patch cell `(i, j)` (column, row).
    pub fn correspondence_at(&self, i: usize, j: usize) -> impl Iterator<Item = f64> + '_ {
        let cells = self.d_p * self.d_p;
        let idx = j * self.d_p + i;
        (0..self.num_landmarks).map(move |l| self.correspondence[l * cells + idx])
    }
}

/// Everything the backward pass needs from a forward pass.
pub struct Tape {
    stem: ConvBlockCache,
    downs: Vec<DownCache>,
    laterals: Vec<ConvCache>,
    heat_block: ConvBlockCache,
    heat_out: ConvCache,
    corr_downs: Vec<DownCache>,
    corr_block: ConvBlockCache,
    corr_out: ConvCache,
    level_shapes: Vec<(usize, usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    stem: ConvBlock,
    downs: Vec<DownBlock>,
    laterals: Vec<Conv2d>,
    /// `ups[k]` upsamples pyramid level `k + 2` to level `k + 1`.
    ups: Vec<Upsample>,
    heat_block: ConvBlock,
    heat_out: Conv2d,
    heat_up: Upsample,
    corr_downs: Vec<DownBlock>,
    corr_block: ConvBlock,
    corr_out: Conv2d,
}

impl Model {
    fn register(config: &ModelConfig, store: &mut ParamStore) -> Self {
        let (h, w) = (config.height, config.width);
        let depth = config.depth;
        let fpn = config.base_channels;
        let stem = ConvBlock::register(store, "stem", 1, config.channels(0), 3);
        let downs = (1..=depth)
            .map(|k| DownBlock::register(store, &format!("down{k}"), config.channels(k - 1), config.channels(k)))
            .collect();
        let laterals = (1..=depth)
            .map(|k| Conv2d::register(store, &format!("lateral{k}"), config.channels(k), fpn, 1))
            .collect();
        let ups = (1..depth)
            .map(|k| {
                let (sh, sw) = (h >> (k + 1), w >> (k + 1));
                Upsample::new(sh, sw, h >> k, w >> k, Interp::Bilinear)
            })
            .collect();
        let heat_block = ConvBlock::register(store, "heat.block", fpn, fpn, 3);
        let heat_out = Conv2d::register(store, "heat.out", fpn, 1, 1);
        let heat_up = Upsample::new(h >> 1, w >> 1, h, w, Interp::Bicubic);
        let c_top = config.channels(depth);
        let extra = config.patch_levels().expect("validated") - depth;
        let corr_downs = (0..extra)
            .map(|e| DownBlock::register(store, &format!("corr.down{}", e + 1), c_top, c_top))
            .collect();
        let corr_block = ConvBlock::register(store, "corr.block", c_top, c_top, 3);
        let corr_out = Conv2d::register(store, "corr.out", c_top, config.num_landmarks, 1);
        Self {
            config: *config,
            stem,
            downs,
            laterals,
            ups,
            heat_block,
            heat_out,
            heat_up,
            corr_downs,
            corr_block,
            corr_out,
        }
    }

    /// Builds the network and freshly initialized parameters (Λ empty).
    pub fn init(config: &ModelConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed);
        let model = Self::register(config, &mut store);
        Ok((model, store))
    }

    /// Builds the network for existing parameters, checking names and shapes.
    pub fn for_params(params: &ModelParams) -> Result<Self> {
        check_layout(&params.config, &params.store.tensors)?;
        let mut store = ParamStore::shapes_only();
        let model = Self::register(&params.config, &mut store);
        if params.landmarks.len() != params.config.num_landmarks {
            return Err(Error::Invalid(format!(
                "config declares {} landmarks, table has {}",
                params.config.num_landmarks,
                params.landmarks.len()
            )));
        }
        Ok(model)
    }

    pub fn input_tensor(&self, image: &BevImage) -> Result<Tensor> {
        if image.height() != self.config.height || image.width() != self.config.width {
            return Err(Error::config(format!(
                "image is {}x{}, model expects {}x{}",
                image.height(),
                image.width(),
                self.config.height,
                self.config.width
            )));
        }
        Ok(Tensor::from_vec(1, image.height(), image.width(), image.density.clone()))
    }

    pub fn forward(&self, params: &ParamStore, image: &BevImage) -> Result<ForwardOutput> {
        Ok(self.forward_tensor(params, &self.input_tensor(image)?).0)
    }

    pub fn forward_taped(&self, params: &ParamStore, image: &BevImage) -> Result<(ForwardOutput, Tape)> {
        Ok(self.forward_tensor(params, &self.input_tensor(image)?))
    }

    pub fn forward_tensor(&self, p: &ParamStore, x: &Tensor) -> (ForwardOutput, Tape) {
        let slope = self.config.leaky_slope();
        let (e0, stem) = self.stem.forward(p, x, slope);
        let mut levels = vec![e0];
        let mut downs = Vec::with_capacity(self.downs.len());
        for block in &self.downs {
            let (e, cache) = block.forward(p, levels.last().expect("level"), slope);
            levels.push(e);
            downs.push(cache);
        }
        let level_shapes = levels.iter().map(|t| (t.c, t.h, t.w)).collect();

        // Top-down pathway.
        let depth = self.config.depth;
        let mut laterals = Vec::with_capacity(depth);
        let mut lat_out = Vec::with_capacity(depth);
        for (k, conv) in self.laterals.iter().enumerate() {
            let (y, cache) = conv.forward(p, &levels[k + 1]);
            lat_out.push(y);
            laterals.push(cache);
        }
        let mut merged = lat_out.pop().expect("depth >= 1");
        for k in (0..depth - 1).rev() {
            let mut next = lat_out.pop().expect("lateral");
            next.add_assign(&self.ups[k].forward(&merged));
            merged = next;
        }

        let (hb, heat_block) = self.heat_block.forward(p, &merged, slope);
        let (ho, heat_out) = self.heat_out.forward(p, &hb);
        let heat = self.heat_up.forward(&ho);

        let mut c = levels.pop().expect("top level");
        let mut corr_downs = Vec::with_capacity(self.corr_downs.len());
        for block in &self.corr_downs {
            let (y, cache) = block.forward(p, &c, slope);
            c = y;
            corr_downs.push(cache);
        }
        let (cb, corr_block) = self.corr_block.forward(p, &c, slope);
        let (co, corr_out) = self.corr_out.forward(p, &cb);

        let out = ForwardOutput {
            height: self.config.height,
            width: self.config.width,
            d_p: self.config.d_p,
            num_landmarks: self.config.num_landmarks,
            heatmap: heat.data,
            correspondence: co.data,
        };
        let tape = Tape {
            stem,
            downs,
            laterals,
            heat_block,
            heat_out,
            corr_downs,
            corr_block,
            corr_out,
            level_shapes,
        };
        (out, tape)
    }

    /// Reverse pass from upstream gradients on the heatmap and the
    /// correspondence logits. Landmark gradients are left empty; they come
    /// from the loss alone.
    pub fn backward(&self, p: &ParamStore, tape: Tape, d_heat: &[f64], d_corr: &[f64]) -> Gradients {
        let cfg = &self.config;
        let slope = cfg.leaky_slope();
        let mut g = Gradients::zeros_like(p);
        let Tape {
            stem,
            downs,
            laterals,
            heat_block,
            heat_out,
            corr_downs,
            corr_block,
            corr_out,
            level_shapes,
        } = tape;

        // Correspondence branch.
        let cells = cfg.d_p * cfg.d_p;
        let dco = Tensor::from_vec(cfg.num_landmarks, cfg.d_p, cfg.d_p, d_corr.to_vec());
        debug_assert_eq!(d_corr.len(), cfg.num_landmarks * cells);
        let dcb = self.corr_out.backward(p, corr_out, &dco, &mut g);
        let mut dc = self.corr_block.backward(p, corr_block, &dcb, slope, &mut g);
        for (block, cache) in self.corr_downs.iter().zip(corr_downs).rev() {
            dc = block.backward(p, cache, &dc, slope, &mut g);
        }

        // Heatmap branch.
        let dheat = Tensor::from_vec(1, cfg.height, cfg.width, d_heat.to_vec());
        let dho = self.heat_up.backward(&dheat);
        let dhb = self.heat_out.backward(p, heat_out, &dho, &mut g);
        let mut dmerged = self.heat_block.backward(p, heat_block, &dhb, slope, &mut g);

        // Top-down pathway, level 1 upwards.
        let depth = cfg.depth;
        let mut dlevels: Vec<Tensor> = level_shapes.iter().map(|&(c, h, w)| Tensor::zeros(c, h, w)).collect();
        let mut lat_caches: Vec<Option<ConvCache>> = laterals.into_iter().map(Some).collect();
        for k in 0..depth {
            let cache = lat_caches[k].take().expect("lateral cache");
            let de = self.laterals[k].backward(p, cache, &dmerged, &mut g);
            dlevels[k + 1].add_assign(&de);
            if k + 1 < depth {
                dmerged = self.ups[k].backward(&dmerged);
            }
        }
        dlevels[depth].add_assign(&dc);

        // Encoder.
        for (k, (block, cache)) in self.downs.iter().zip(downs).enumerate().rev() {
            let d = std::mem::replace(&mut dlevels[k + 1], Tensor::zeros(0, 0, 0));
            let dx = block.backward(p, cache, &d, slope, &mut g);
            dlevels[k].add_assign(&dx);
        }
        let d0 = std::mem::replace(&mut dlevels[0], Tensor::zeros(0, 0, 0));
        let _ = self.stem.backward(p, stem, &d0, slope, &mut g);
        g
    }
}
