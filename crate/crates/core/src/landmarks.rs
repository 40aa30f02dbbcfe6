//! The global landmark set: initialization from keyframe poses, density
//! control, nearest-landmark queries and the plain-text landmark list.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bev::BevConfig;
use crate::geometry::{Pose2, Vec2};
use crate::{Error, Result};

/// Above this many landmarks, nearest queries go through a grid index.
pub const LINEAR_SCAN_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub coords: Vec<Vec2>,
    pub learnable: bool,
}

impl LandmarkSet {
    pub fn new(coords: Vec<Vec2>) -> Self {
        Self {
            coords,
            learnable: true,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn nearest(&self, q: Vec2) -> (usize, f64) {
        nearest_landmark(&self.coords, q)
    }

    /// Smallest distance between two distinct landmarks, `None` when L < 2.
    /// A collapse diagnostic; co-located landmarks are not merged.
    pub fn min_pairwise_distance(&self) -> Option<f64> {
        let c = &self.coords;
        let mut best: Option<f64> = None;
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                let d = c[i].dist(c[j]);
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
        best
    }

    /// `index x y` per line, meters with six decimals.
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(self.coords.len() * 32);
        for (i, p) in self.coords.iter().enumerate() {
            let _ = writeln!(s, "{i} {:.6} {:.6}", p.x, p.y);
        }
        s
    }

    /// Parses the landmark list. Indices must be `0..L` in order.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut coords = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse {
                path: "<landmarks>".into(),
                line: lineno + 1,
                msg,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(err(format!("expected `index x y`, got {} fields", fields.len())));
            }
            let idx: usize = fields[0]
                .parse()
                .map_err(|_| err(format!("bad index `{}`", fields[0])))?;
            if idx != coords.len() {
                return Err(err(format!("expected index {}, got {idx}", coords.len())));
            }
            let x: f64 = fields[1].parse().map_err(|_| err(format!("bad x `{}`", fields[1])))?;
            let y: f64 = fields[2].parse().map_err(|_| err(format!("bad y `{}`", fields[2])))?;
            let p = Vec2::new(x, y);
            if !p.is_finite() {
                return Err(err("non-finite coordinate".into()));
            }
            coords.push(p);
        }
        Ok(Self::new(coords))
    }
}

/// Patch-grid and density parameters for landmark initialization.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LandmarkInitConfig {
    /// Patches per image side.
    pub d_p: usize,
    /// Ratio of patch area to grid-cell area.
    pub rho_lm: f64,
}

impl Default for LandmarkInitConfig {
    fn default() -> Self {
        Self { d_p: 16, rho_lm: 0.2 }
    }
}

impl LandmarkInitConfig {
    pub fn validate(&self, bev: &BevConfig) -> Result<()> {
        if self.d_p == 0 || bev.width_px % self.d_p != 0 || bev.height_px % self.d_p != 0 {
            return Err(Error::config(format!(
                "d_P = {} must divide the image size {}x{}",
                self.d_p, bev.width_px, bev.height_px
            )));
        }
        if !(self.rho_lm > 0.0 && self.rho_lm <= 1.5) {
            return Err(Error::config("landmark density must lie in (0, 1.5]"));
        }
        Ok(())
    }

    /// Patch edge length in meters.
    pub fn l_patch(&self, bev: &BevConfig) -> f64 {
        bev.width_px as f64 * bev.pixel_size / self.d_p as f64
    }

    /// Grid-filter cell size: `l_patch / sqrt(rho_lm)`.
    pub fn s_grid(&self, bev: &BevConfig) -> f64 {
        self.l_patch(bev) / self.rho_lm.sqrt()
    }
}

/// Global centers of the `d_P × d_P` patches of the image taken at `pose`,
/// row-major (rows along local +y).
pub fn patch_centers_for_pose(pose: &Pose2, bev: &BevConfig, d_p: usize) -> Vec<Vec2> {
    assert!(d_p > 0 && bev.width_px % d_p == 0 && bev.height_px % d_p == 0);
    let pw = (bev.width_px / d_p) as f64;
    let ph = (bev.height_px / d_p) as f64;
    let (w, h) = (bev.width_px as f64, bev.height_px as f64);
    let mut out = Vec::with_capacity(d_p * d_p);
    for j in 0..d_p {
        for i in 0..d_p {
            let local = Vec2::new(
                ((i as f64 + 0.5) * pw - w / 2.0) * bev.pixel_size,
                ((j as f64 + 0.5) * ph - h / 2.0) * bev.pixel_size,
            );
            out.push(pose.local_to_global(local));
        }
    }
    out
}

fn cell_of(p: Vec2, s: f64) -> (i64, i64) {
    ((p.x / s).floor() as i64, (p.y / s).floor() as i64)
}

/// One point per occupied `s_grid` cell (cells anchored at the origin), equal
/// to the mean of its members. Output is sorted by cell index.
pub fn grid_average_filter(points: &[Vec2], s_grid: f64) -> Vec<Vec2> {
    assert!(s_grid > 0.0, "grid size must be positive");
    let mut cells: BTreeMap<(i64, i64), (f64, f64, usize)> = BTreeMap::new();
    for &p in points {
        let e = cells.entry(cell_of(p, s_grid)).or_insert((0.0, 0.0, 0));
        e.0 += p.x;
        e.1 += p.y;
        e.2 += 1;
    }
    cells
        .into_values()
        .map(|(x, y, n)| Vec2::new(x / n as f64, y / n as f64))
        .collect()
}

pub fn init_landmarks(
    trajectory: &[Pose2],
    bev: &BevConfig,
    cfg: &LandmarkInitConfig,
) -> Result<LandmarkSet> {
    if trajectory.is_empty() {
        return Err(Error::Invalid("landmark initialization needs at least one pose".into()));
    }
    cfg.validate(bev)?;
    let candidates: Vec<Vec2> = trajectory
        .iter()
        .flat_map(|p| patch_centers_for_pose(p, bev, cfg.d_p))
        .collect();
    let coords = grid_average_filter(&candidates, cfg.s_grid(bev));
    if coords.is_empty() {
        return Err(Error::Invalid("landmark initialization produced no landmarks".into()));
    }
    Ok(LandmarkSet::new(coords))
}

#[inline]
fn sq_dist(a: Vec2, b: Vec2) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

/// Exact linear scan. Ties go to the lowest index.
pub fn nearest_linear(coords: &[Vec2], q: Vec2) -> (usize, f64) {
    assert!(!coords.is_empty(), "nearest landmark of an empty set");
    let mut best = (0, sq_dist(coords[0], q));
    for (j, &c) in coords.iter().enumerate().skip(1) {
        let d = sq_dist(c, q);
        if d < best.1 {
            best = (j, d);
        }
    }
    (best.0, best.1.sqrt())
}

/// Nearest landmark to `q`; index and Euclidean distance.
pub fn nearest_landmark(coords: &[Vec2], q: Vec2) -> (usize, f64) {
    if coords.len() <= LINEAR_SCAN_LIMIT {
        nearest_linear(coords, q)
    } else {
        LandmarkIndex::build(coords).nearest(q)
    }
}

/// Uniform-grid spatial index over a fixed landmark table.
#[derive(Debug, Clone)]
pub struct LandmarkIndex<'a> {
    coords: &'a [Vec2],
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<usize>>,
}

impl<'a> LandmarkIndex<'a> {
    pub fn build(coords: &'a [Vec2]) -> Self {
        assert!(!coords.is_empty(), "index over an empty landmark set");
        let (mut lo, mut hi) = (coords[0], coords[0]);
        for c in coords {
            lo = Vec2::new(lo.x.min(c.x), lo.y.min(c.y));
            hi = Vec2::new(hi.x.max(c.x), hi.y.max(c.y));
        }
        let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-9);
        let per_side = ((coords.len() as f64).sqrt().ceil() as usize).max(1);
        let cell = span / per_side as f64;
        let nx = ((hi.x - lo.x) / cell).floor() as usize + 1;
        let ny = ((hi.y - lo.y) / cell).floor() as usize + 1;
        let mut buckets = vec![Vec::new(); nx * ny];
        for (j, c) in coords.iter().enumerate() {
            let (ix, iy) = Self::clamp_cell(lo, cell, nx, ny, *c);
            buckets[iy * nx + ix].push(j);
        }
        Self {
            coords,
            origin: lo,
            cell,
            nx,
            ny,
            buckets,
        }
    }

    fn clamp_cell(origin: Vec2, cell: f64, nx: usize, ny: usize, p: Vec2) -> (usize, usize) {
        let fx = ((p.x - origin.x) / cell).floor();
        let fy = ((p.y - origin.y) / cell).floor();
        let ix = fx.clamp(0.0, (nx - 1) as f64) as usize;
        let iy = fy.clamp(0.0, (ny - 1) as f64) as usize;
        (ix, iy)
    }

    pub fn nearest(&self, q: Vec2) -> (usize, f64) {
        let (cx, cy) = Self::clamp_cell(self.origin, self.cell, self.nx, self.ny, q);
        let mut best: Option<(usize, f64)> = None;
        let max_ring = self.nx.max(self.ny);
        for ring in 0..=max_ring {
            // Cells in rings beyond `ring` lie at least `ring * cell` away from
            // any point of the query's clamped cell. Because of clamping the
            // query can sit outside the grid, so measure from the cell box.
            if let Some((_, bd)) = best {
                let lower = self.ring_lower_bound(q, cx, cy, ring);
                if lower * lower > bd {
                    break;
                }
            }
            let x0 = cx as i64 - ring as i64;
            let x1 = cx as i64 + ring as i64;
            let y0 = cy as i64 - ring as i64;
            let y1 = cy as i64 + ring as i64;
            for iy in y0..=y1 {
                for ix in x0..=x1 {
                    let on_ring = iy == y0 || iy == y1 || ix == x0 || ix == x1;
                    if !on_ring || ix < 0 || iy < 0 || ix >= self.nx as i64 || iy >= self.ny as i64 {
                        continue;
                    }
                    for &j in &self.buckets[iy as usize * self.nx + ix as usize] {
                        let d = sq_dist(self.coords[j], q);
                        match best {
                            Some((bj, bd)) if d > bd || (d == bd && j > bj) => {}
                            _ => best = Some((j, d)),
                        }
                    }
                }
            }
        }
        let (j, d) = best.expect("non-empty index");
        (j, d.sqrt())
    }

    /// Lower bound on the distance from `q` to any cell at Chebyshev ring
    /// distance `ring` from `(cx, cy)`.
    fn ring_lower_bound(&self, q: Vec2, cx: usize, cy: usize, ring: usize) -> f64 {
        if ring == 0 {
            return 0.0;
        }
        // Inner box: cells within ring - 1 of the center cell.
        let r = (ring - 1) as f64;
        let x_lo = self.origin.x + (cx as f64 - r) * self.cell;
        let x_hi = self.origin.x + (cx as f64 + r + 1.0) * self.cell;
        let y_lo = self.origin.y + (cy as f64 - r) * self.cell;
        let y_hi = self.origin.y + (cy as f64 + r + 1.0) * self.cell;
        let dx = (q.x - x_lo).min(x_hi - q.x);
        let dy = (q.y - y_lo).min(y_hi - q.y);
        dx.min(dy).max(0.0)
    }
}

/// Greedy spatial thinning: keep a pose iff it lies at least `threshold`
/// from the previously kept pose. The first pose is always kept.
pub fn keyframe_select(poses: &[Pose2], threshold: f64) -> Vec<usize> {
    let mut kept = Vec::new();
    let mut last: Option<Vec2> = None;
    for (i, p) in poses.iter().enumerate() {
        let t = p.translation();
        match last {
            Some(l) if t.dist(l) < threshold => {}
            _ => {
                kept.push(i);
                last = Some(t);
            }
        }
    }
    kept
}
