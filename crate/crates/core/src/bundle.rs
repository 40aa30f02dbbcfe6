//! Binary bundle: model configuration, landmark table and parameter tensors.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "BSLD" | version u32
//! config: H W d_P L base depth (u32 each) | leaky slope f64 | seed u64
//!         | pixel size f64 | voxel size f64
//! L u32 | L × (x f32, y f32)
//! tensor count u32
//! per tensor: name len u16 | name | rank u8 | dims u32[rank] | f32 data
//! optional appendix: "OPTS" | payload len u64 | payload
//! ```
//!
//! Values are stored as `f32`; a bundle round-trips bit-exactly once its
//! parameters have been rounded with [`ModelParams::round_to_f32`]. The BEV
//! geometry rides in the config block so a bundle alone is enough for
//! inference.

use std::path::Path;

use crate::bev::BevConfig;
use crate::geometry::Vec2;
use crate::model::{check_layout, ModelConfig, ModelParams, NamedTensor, ParamStore};
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"BSLD";
pub const FORMAT_VERSION: u32 = 1;
pub const APPENDIX_MAGIC: [u8; 4] = *b"OPTS";

/// Everything needed to localize: θ, Λ and the raster geometry they were
/// trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub params: ModelParams,
    pub bev: BevConfig,
}

impl Bundle {
    pub fn new(params: ModelParams, bev: BevConfig) -> Result<Self> {
        bev.validate()?;
        if bev.width_px != params.config.width || bev.height_px != params.config.height {
            return Err(Error::config(format!(
                "BEV {}x{} does not match model input {}x{}",
                bev.width_px, bev.height_px, params.config.width, params.config.height
            )));
        }
        Ok(Self { params, bev })
    }
}

/// Decoders refuse configurations beyond these before building any layout.
const MAX_SIDE: u32 = 4096;
const MAX_LANDMARKS: u32 = 1 << 20;
const MAX_BASE_CHANNELS: u32 = 512;
const MAX_DEPTH: u32 = 12;

#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    context: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8], context: &'static str) -> Self {
        Self { data, pos: 0, context }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::decode(self.context, self.pos, msg)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!("truncated: need {n} bytes, {} left", self.remaining())));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A count of items of `item_size` bytes that must fit in the input.
    pub fn count(&mut self, item_size: usize, what: &str) -> Result<usize> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n.saturating_mul(item_size) > self.remaining() {
            return Err(Error::decode(self.context, at, format!("{what} count {n} exceeds the input")));
        }
        Ok(n)
    }
}

fn write_config(w: &mut Writer, c: &ModelConfig, bev: &BevConfig) {
    for v in [c.height, c.width, c.d_p, c.num_landmarks, c.base_channels, c.depth] {
        w.u32(v as u32);
    }
    w.f64(c.leaky_slope());
    w.u64(c.seed);
    w.f64(bev.pixel_size);
    w.f64(bev.voxel_size);
}

fn read_config(r: &mut Reader) -> Result<(ModelConfig, BevConfig)> {
    let at = r.pos();
    let mut v = [0u32; 6];
    for x in &mut v {
        *x = r.u32()?;
    }
    let [height, width, d_p, num_landmarks, base, depth] = v;
    if height > MAX_SIDE || width > MAX_SIDE || num_landmarks > MAX_LANDMARKS || base > MAX_BASE_CHANNELS || depth > MAX_DEPTH {
        return Err(Error::decode(r.context, at, "model configuration out of supported range"));
    }
    let slope = r.f64()?;
    let seed = r.u64()?;
    let pixel_size = r.f64()?;
    let voxel_size = r.f64()?;
    let config = ModelConfig {
        height: height as usize,
        width: width as usize,
        d_p: d_p as usize,
        num_landmarks: num_landmarks as usize,
        base_channels: base as usize,
        depth: depth as usize,
        leaky_slope_bits: 0,
        seed,
    }
    .with_leaky_slope(slope);
    config
        .validate()
        .map_err(|e| Error::decode(r.context, at, format!("invalid model configuration: {e}")))?;
    let bev = BevConfig {
        width_px: config.width,
        height_px: config.height,
        pixel_size,
        voxel_size,
    };
    bev.validate()
        .map_err(|e| Error::decode(r.context, at, format!("invalid BEV configuration: {e}")))?;
    Ok((config, bev))
}

fn write_body(w: &mut Writer, bundle: &Bundle) {
    let params = &bundle.params;
    w.bytes(&MAGIC);
    w.u32(FORMAT_VERSION);
    write_config(w, &params.config, &bundle.bev);
    w.u32(params.landmarks.len() as u32);
    for l in &params.landmarks {
        w.f32(l.x as f32);
        w.f32(l.y as f32);
    }
    w.u32(params.store.tensors.len() as u32);
    for t in &params.store.tensors {
        w.u16(t.name.len() as u16);
        w.bytes(t.name.as_bytes());
        w.u8(t.shape.len() as u8);
        for &d in &t.shape {
            w.u32(d as u32);
        }
        for &v in &t.data {
            w.f32(v as f32);
        }
    }
}

fn read_body(r: &mut Reader) -> Result<Bundle> {
    if r.take(4)? != MAGIC {
        return Err(Error::decode(r.context, 0, "bad magic, not a bundle"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::decode(r.context, 4, format!("unsupported bundle version {version}")));
    }
    let (config, bev) = read_config(r)?;
    let at = r.pos();
    let l = r.count(8, "landmark")?;
    if l != config.num_landmarks {
        return Err(Error::decode(
            r.context,
            at,
            format!("landmark table has {l} entries, config declares {}", config.num_landmarks),
        ));
    }
    let mut landmarks = Vec::with_capacity(l);
    for _ in 0..l {
        let at = r.pos();
        let x = r.f32()?;
        let y = r.f32()?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::decode(r.context, at, "non-finite landmark"));
        }
        landmarks.push(Vec2::new(x as f64, y as f64));
    }
    let count = r.count(3, "tensor")?;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name_at = r.pos();
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::decode(r.context, name_at, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            n = n.saturating_mul(d);
            shape.push(d);
        }
        if n.saturating_mul(4) > r.remaining() {
            return Err(r.err(format!("tensor `{name}` data exceeds the input")));
        }
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let v = r.f32()?;
            if !v.is_finite() {
                return Err(r.err(format!("non-finite value in tensor `{name}`")));
            }
            data.push(v as f64);
        }
        tensors.push(NamedTensor { name, shape, data });
    }
    check_layout(&config, &tensors).map_err(|e| Error::decode(r.context, r.pos(), e.to_string()))?;
    let mut store = ParamStore::new(config.seed);
    store.tensors = tensors;
    Ok(Bundle {
        params: ModelParams {
            config,
            store,
            landmarks,
        },
        bev,
    })
}

pub fn encode_bundle(bundle: &Bundle) -> Vec<u8> {
    let mut w = Writer::default();
    write_body(&mut w, bundle);
    w.buf
}

/// Bundle followed by an opaque appendix (optimizer state for checkpoints).
pub fn encode_with_appendix(bundle: &Bundle, appendix: &[u8]) -> Vec<u8> {
    let mut w = Writer::default();
    write_body(&mut w, bundle);
    w.bytes(&APPENDIX_MAGIC);
    w.u64(appendix.len() as u64);
    w.bytes(appendix);
    w.buf
}

/// Decodes a bundle and its appendix, if present. Any other trailing bytes
/// are an error.
pub fn decode_with_appendix(bytes: &[u8]) -> Result<(Bundle, Option<&[u8]>)> {
    let mut r = Reader::new(bytes, "bundle");
    let params = read_body(&mut r)?;
    if r.remaining() == 0 {
        return Ok((params, None));
    }
    let at = r.pos();
    if r.take(4)? != APPENDIX_MAGIC {
        return Err(Error::decode("bundle", at, "unexpected trailing bytes"));
    }
    let len = r.u64()?;
    if len != r.remaining() as u64 {
        return Err(r.err(format!("appendix declares {len} bytes, {} present", r.remaining())));
    }
    let rest = r.take(len as usize)?;
    Ok((params, Some(rest)))
}

pub fn decode_bundle(bytes: &[u8]) -> Result<Bundle> {
    decode_with_appendix(bytes).map(|(p, _)| p)
}

pub fn save_bundle(path: &Path, bundle: &Bundle) -> Result<()> {
    std::fs::write(path, encode_bundle(bundle)).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: &Path) -> Result<Bundle> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bundle(&bytes)
}
