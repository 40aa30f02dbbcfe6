//! Bird's-eye-view density images and their global coordinate maps.
//!
//! Pixel convention: pixel `(u, v)` covers local
//! `x ∈ [(u − W/2)·s, (u − W/2 + 1)·s)` and `y ∈ [(v − H/2)·s, (v − H/2 + 1)·s)`,
//! so `u` runs along +x, `v` along +y and the sensor origin sits at the image
//! center. Rasters are stored row-major with `v` as the row index.

use std::collections::BTreeMap;

use rand::Rng;

use crate::geometry::{Point3, PointCloud, Pose2, Similarity2, Vec2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevConfig {
    pub width_px: usize,
    pub height_px: usize,
    /// Meters per pixel.
    pub pixel_size: f64,
    /// Voxel edge used to downsample clouds before projection.
    pub voxel_size: f64,
}

impl BevConfig {
    /// 512 × 512 pixels at 0.2 m (102.4 m square).
    pub fn reference() -> Self {
        Self {
            width_px: 512,
            height_px: 512,
            pixel_size: 0.2,
            voxel_size: 0.1,
        }
    }

    /// 64 × 64 pixels at 0.25 m (16 m square).
    pub fn desk() -> Self {
        Self {
            width_px: 64,
            height_px: 64,
            pixel_size: 0.25,
            voxel_size: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::config("BEV dimensions must be positive"));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::config("pixel size must be positive"));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(Error::config("voxel size must be positive"));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width_px * self.height_px
    }

    /// Covered extent in meters, `(width, height)`.
    pub fn extent(&self) -> (f64, f64) {
        (
            self.width_px as f64 * self.pixel_size,
            self.height_px as f64 * self.pixel_size,
        )
    }

    /// Pixel containing a local point, if it is inside the covered area.
    pub fn pixel_of_local(&self, p: Vec2) -> Option<(usize, usize)> {
        let u = (p.x / self.pixel_size + self.width_px as f64 / 2.0).floor();
        let v = (p.y / self.pixel_size + self.height_px as f64 / 2.0).floor();
        if u >= 0.0 && v >= 0.0 && u < self.width_px as f64 && v < self.height_px as f64 {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    /// Local metric coordinates of a pixel center.
    pub fn pixel_center_local(&self, u: usize, v: usize) -> Vec2 {
        let c = self.center_index();
        Vec2::new(
            (u as f64 - c.x) * self.pixel_size,
            (v as f64 - c.y) * self.pixel_size,
        )
    }

    /// Continuous pixel-index position of the sensor origin.
    pub(crate) fn center_index(&self) -> Vec2 {
        Vec2::new(
            self.width_px as f64 / 2.0 - 0.5,
            self.height_px as f64 / 2.0 - 0.5,
        )
    }
}

/// A bird's-eye-view density raster with its raw point counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BevImage {
    pub config: BevConfig,
    pub density: Vec<f64>,
    pub count: Vec<u32>,
}

impl BevImage {
    pub fn empty(config: BevConfig) -> Self {
        let n = config.num_pixels();
        Self {
            config,
            density: vec![0.0; n],
            count: vec![0; n],
        }
    }

    /// Builds the density raster by dividing every count by the maximum count.
    pub fn from_counts(config: BevConfig, count: Vec<u32>) -> Self {
        assert_eq!(count.len(), config.num_pixels());
        let max = count.iter().copied().max().unwrap_or(0);
        let density = if max == 0 {
            vec![0.0; count.len()]
        } else {
            let m = max as f64;
            count.iter().map(|&c| c as f64 / m).collect()
        };
        Self {
            config,
            density,
            count,
        }
    }

    pub fn width(&self) -> usize {
        self.config.width_px
    }

    pub fn height(&self) -> usize {
        self.config.height_px
    }

    pub fn occupancy(&self) -> Vec<bool> {
        self.count.iter().map(|&c| c > 0).collect()
    }

    pub fn occupied_pixels(&self) -> usize {
        self.count.iter().filter(|&&c| c > 0).count()
    }

    /// Binary PGM (P5) dump, `density × 255` rounded, with +y pointing up.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = (self.width(), self.height());
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for v in (0..h).rev() {
            for u in 0..w {
                let d = self.density[v * w + u].clamp(0.0, 1.0);
                out.push((d * 255.0).round() as u8);
            }
        }
        out
    }
}

/// P5 dump of an arbitrary score raster, min-max scaled to 0..=255, with
/// +y pointing up. A constant raster maps to 0.
pub fn scores_to_pgm(values: &[f64], width: usize, height: usize) -> Vec<u8> {
    assert_eq!(values.len(), width * height);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for v in (0..height).rev() {
        for u in 0..width {
            let x = if range > 0.0 { (values[v * width + u] - lo) / range } else { 0.0 };
            out.push((x * 255.0).round() as u8);
        }
    }
    out
}

/// Per-pixel global coordinates for a BEV raster.
///
/// The map is an exact similarity of the pixel-index lattice, kept both
/// analytically (`from_pixel`) and materialized (`gx`, `gy`).
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateMap {
    pub config: BevConfig,
    /// Maps centered pixel-index coordinates to global meters.
    pub from_pixel: Similarity2,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
}

impl CoordinateMap {
    fn from_similarity(config: BevConfig, from_pixel: Similarity2) -> Self {
        let (w, h) = (config.width_px, config.height_px);
        let c = config.center_index();
        let mut gx = Vec::with_capacity(w * h);
        let mut gy = Vec::with_capacity(w * h);
        for v in 0..h {
            for u in 0..w {
                let g = from_pixel.apply(Vec2::new(u as f64 - c.x, v as f64 - c.y));
                gx.push(g.x);
                gy.push(g.y);
            }
        }
        Self {
            config,
            from_pixel,
            gx,
            gy,
        }
    }

    pub fn at(&self, u: usize, v: usize) -> Vec2 {
        let i = v * self.config.width_px + u;
        Vec2::new(self.gx[i], self.gy[i])
    }
}

/// Pixel-space augmentation: rotation about the image center, translation as
/// a fraction of the image size, and isotropic scaling of the content.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub translation: (f64, f64),
    pub rotation: f64,
    pub scale: f64,
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams {
        translation: (0.0, 0.0),
        rotation: 0.0,
        scale: 1.0,
    };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Similarity acting on centered pixel-index coordinates (source → output).
    pub fn pixel_warp(&self, config: &BevConfig) -> Similarity2 {
        Similarity2::new(
            self.rotation,
            Vec2::new(
                self.translation.0 * config.width_px as f64,
                self.translation.1 * config.height_px as f64,
            ),
            self.scale,
        )
    }
}

/// Sampling ranges for training-time augmentation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentRanges {
    /// Maximum absolute translation as a fraction of the image size.
    pub max_translation: f64,
    /// Rotations are uniform in `±max_rotation` radians; π or more means
    /// the full circle.
    pub max_rotation: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            max_translation: 0.25,
            max_rotation: std::f64::consts::PI,
            scale_min: 0.5,
            scale_max: 1.5,
        }
    }
}

impl AugmentRanges {
    pub const NONE: AugmentRanges = AugmentRanges {
        max_translation: 0.0,
        max_rotation: 0.0,
        scale_min: 1.0,
        scale_max: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.25).contains(&self.max_translation) {
            return Err(Error::config("translation range must lie in [0, 0.25]"));
        }
        if !(self.max_rotation >= 0.0 && self.max_rotation.is_finite()) {
            return Err(Error::config("rotation range must be finite and non-negative"));
        }
        if !(0.5 <= self.scale_min && self.scale_min <= self.scale_max && self.scale_max <= 1.5) {
            return Err(Error::config("scale range must lie in [0.5, 1.5]"));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let t = self.max_translation;
        let tx = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
        let ty = if t > 0.0 { rng.random_range(-t..=t) } else { 0.0 };
        let r = self.max_rotation;
        let rotation = if r >= std::f64::consts::PI {
            rng.random_range(0.0..std::f64::consts::TAU)
        } else if r > 0.0 {
            rng.random_range(-r..=r)
        } else {
            0.0
        };
        let scale = if self.scale_max > self.scale_min {
            rng.random_range(self.scale_min..=self.scale_max)
        } else {
            self.scale_min
        };
        AugmentParams {
            translation: (tx, ty),
            rotation,
            scale,
        }
    }
}

/// Replaces the points of each occupied voxel by their centroid.
///
/// Non-finite points are dropped. Output is ordered by voxel index.
pub fn voxel_downsample(cloud: &[Point3], voxel_size: f64) -> PointCloud {
    assert!(voxel_size > 0.0, "voxel size must be positive");
    let mut cells: BTreeMap<(i64, i64, i64), (f64, f64, f64, usize)> = BTreeMap::new();
    for p in cloud.iter().filter(|p| p.is_finite()) {
        let key = (
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        );
        let e = cells.entry(key).or_insert((0.0, 0.0, 0.0, 0));
        e.0 += p.x;
        e.1 += p.y;
        e.2 += p.z;
        e.3 += 1;
    }
    cells
        .into_values()
        .map(|(x, y, z, n)| {
            let n = n as f64;
            Point3::new(x / n, y / n, z / n)
        })
        .collect()
}

/// Rasterizes a local cloud into a count image. Returns the image and the
/// number of non-finite points that were dropped.
pub fn project_bev_counted(cloud: &[Point3], config: &BevConfig) -> (BevImage, usize) {
    let mut count = vec![0u32; config.num_pixels()];
    let mut dropped = 0;
    for p in cloud {
        if !p.is_finite() {
            dropped += 1;
            continue;
        }
        if let Some((u, v)) = config.pixel_of_local(p.xy()) {
            count[v * config.width_px + u] += 1;
        }
    }
    (BevImage::from_counts(*config, count), dropped)
}

pub fn project_bev(cloud: &[Point3], config: &BevConfig) -> BevImage {
    project_bev_counted(cloud, config).0
}

/// Voxel-downsamples and projects a raw scan, the full preprocessing chain.
pub fn bev_from_scan(cloud: &[Point3], config: &BevConfig) -> BevImage {
    project_bev(&voxel_downsample(cloud, config.voxel_size), config)
}

/// Global coordinates of every pixel center for a scan taken at `pose`.
pub fn build_coordinate_map(pose: &Pose2, config: &BevConfig) -> CoordinateMap {
    let from_pixel = Similarity2::new(pose.yaw, pose.translation(), config.pixel_size);
    CoordinateMap::from_similarity(*config, from_pixel)
}

/// Warps image and coordinate map by the same pixel-space similarity.
///
/// The density and count rasters use nearest-neighbor resampling; vacated
/// pixels become empty. The coordinate map is evaluated analytically.
pub fn augment(
    image: &BevImage,
    map: &CoordinateMap,
    params: &AugmentParams,
) -> Result<(BevImage, CoordinateMap)> {
    if image.config != map.config {
        return Err(Error::config("image and coordinate map configs differ"));
    }
    if params.is_identity() {
        return Ok((image.clone(), map.clone()));
    }
    let config = image.config;
    let (w, h) = (config.width_px, config.height_px);
    let c = config.center_index();
    let warp = params.pixel_warp(&config);
    let inv = warp.inverse();

    let mut density = vec![0.0; w * h];
    let mut count = vec![0u32; w * h];
    for v in 0..h {
        for u in 0..w {
            let src = inv.apply(Vec2::new(u as f64 - c.x, v as f64 - c.y)) + c;
            let su = (src.x + 0.5).floor();
            let sv = (src.y + 0.5).floor();
            if su >= 0.0 && sv >= 0.0 && su < w as f64 && sv < h as f64 {
                let j = sv as usize * w + su as usize;
                density[v * w + u] = image.density[j];
                count[v * w + u] = image.count[j];
            }
        }
    }
    let out_image = BevImage {
        config,
        density,
        count,
    };
    let out_map = CoordinateMap::from_similarity(config, map.from_pixel.compose(&inv));
    Ok((out_image, out_map))
}
