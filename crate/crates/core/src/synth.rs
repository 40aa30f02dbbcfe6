//! Synthetic planar scenes, trajectories and 2D-ray LiDAR scans.
//!
//! Scenes are centered on the origin. Rays are cast in the plane and each
//! hit is replicated over a fixed set of heights, which is all the BEV
//! projection can see.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{Point3, PointCloud, Pose2, Vec2};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Preset {
    Rooms,
    Campus,
    Pillars,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rooms" => Ok(Preset::Rooms),
            "campus" => Ok(Preset::Campus),
            "pillars" => Ok(Preset::Pillars),
            _ => Err(Error::config(format!("unknown preset `{s}` (rooms, campus, pillars)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self {
            a: Vec2::new(x1, y1),
            b: Vec2::new(x2, y2),
        }
    }

    pub fn distance_to(&self, p: Vec2) -> f64 {
        let d = self.b - self.a;
        let len2 = d.norm_sq();
        let t = if len2 == 0.0 { 0.0 } else { ((p - self.a).dot(d) / len2).clamp(0.0, 1.0) };
        p.dist(self.a + d * t)
    }

    /// Intersection point of two closed segments, if they meet at exactly
    /// one point.
    pub fn intersect(&self, o: &Segment) -> Option<Vec2> {
        let r = self.b - self.a;
        let s = o.b - o.a;
        let denom = r.cross(s);
        if denom == 0.0 {
            return None;
        }
        let q = o.a - self.a;
        let t = q.cross(s) / denom;
        let u = q.cross(r) / denom;
        if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
            Some(self.a + r * t)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pillar {
    pub center: Vec2,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// Full width and height; the scene spans `±extent/2` around the origin.
    pub extent: (f64, f64),
    pub segments: Vec<Segment>,
    pub pillars: Vec<Pillar>,
    /// Closed polyline through free space used for reference trajectories.
    pub route: Vec<Vec2>,
    pub seed: u64,
}

impl SceneSpec {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x.abs() <= self.extent.0 / 2.0 && p.y.abs() <= self.extent.1 / 2.0
    }

    /// Pairwise wall intersections inside the extent, deduplicated and sorted.
    pub fn corners(&self) -> Vec<Vec2> {
        let mut out: Vec<Vec2> = Vec::new();
        for i in 0..self.segments.len() {
            for j in i + 1..self.segments.len() {
                if let Some(p) = self.segments[i].intersect(&self.segments[j]) {
                    if self.contains(p) && out.iter().all(|q| q.dist(p) > 1e-9) {
                        out.push(p);
                    }
                }
            }
        }
        out.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        out
    }

    /// Distance to the nearest wall or pillar surface.
    pub fn clearance(&self, p: Vec2) -> f64 {
        let walls = self.segments.iter().map(|s| s.distance_to(p));
        let pillars = self.pillars.iter().map(|c| (p.dist(c.center) - c.radius).abs());
        walls.chain(pillars).fold(f64::INFINITY, f64::min)
    }

    /// Inside the extent, outside every pillar and at least `margin` from
    /// all surfaces.
    pub fn is_free(&self, p: Vec2, margin: f64) -> bool {
        self.contains(p)
            && self.pillars.iter().all(|c| p.dist(c.center) > c.radius)
            && self.clearance(p) >= margin
    }

    /// Nearest hit along a ray, as a distance.
    pub fn cast(&self, origin: Vec2, dir: Vec2, max_range: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        for s in &self.segments {
            let e = s.b - s.a;
            let denom = dir.cross(e);
            if denom == 0.0 {
                continue;
            }
            let q = s.a - origin;
            let t = q.cross(e) / denom;
            let u = q.cross(dir) / denom;
            if t > 0.0 && (0.0..=1.0).contains(&u) && t < best {
                best = t;
            }
        }
        for c in &self.pillars {
            // |o + t·d − c|² = r² with |d| = 1.
            let m = origin - c.center;
            let b = m.dot(dir);
            let disc = b * b - (m.norm_sq() - c.radius * c.radius);
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            for t in [-b - sq, -b + sq] {
                if t > 0.0 && t < best {
                    best = t;
                    break;
                }
            }
        }
        (best <= max_range).then_some(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SensorSpec {
    pub beams: usize,
    pub max_range: f64,
    pub range_sigma: f64,
    pub z_layers: usize,
    pub z_min: f64,
    pub z_max: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            beams: 720,
            max_range: 50.0,
            range_sigma: 0.02,
            z_layers: 8,
            z_min: 0.0,
            z_max: 2.0,
        }
    }
}

impl SensorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beams == 0 || self.z_layers == 0 || !(self.max_range > 0.0) || !(self.range_sigma >= 0.0) {
            return Err(Error::config("sensor needs beams, layers, a positive range and a non-negative noise"));
        }
        Ok(())
    }

    fn heights(&self) -> Vec<f64> {
        if self.z_layers == 1 {
            return vec![self.z_min];
        }
        (0..self.z_layers)
            .map(|k| self.z_min + (self.z_max - self.z_min) * k as f64 / (self.z_layers - 1) as f64)
            .collect()
    }
}

fn rect(out: &mut Vec<Segment>, x0: f64, y0: f64, x1: f64, y1: f64) {
    out.push(Segment::new(x0, y0, x1, y0));
    out.push(Segment::new(x1, y0, x1, y1));
    out.push(Segment::new(x1, y1, x0, y1));
    out.push(Segment::new(x0, y1, x0, y0));
}

fn rect_route(hx: f64, hy: f64) -> Vec<Vec2> {
    vec![Vec2::new(-hx, -hy), Vec2::new(hx, -hy), Vec2::new(hx, hy), Vec2::new(-hx, hy)]
}

fn route_distance(route: &[Vec2], p: Vec2) -> f64 {
    (0..route.len())
        .map(|i| Segment { a: route[i], b: route[(i + 1) % route.len()] }.distance_to(p))
        .fold(f64::INFINITY, f64::min)
}

/// Adds pillars at random free spots at least `route_gap` from the route.
fn scatter_pillars(scene: &mut SceneSpec, rng: &mut ChaCha8Rng, count: usize, route_gap: f64, radius: (f64, f64)) {
    let (hw, hh) = (scene.extent.0 / 2.0 - 1.0, scene.extent.1 / 2.0 - 1.0);
    let mut attempts = 0;
    while scene.pillars.len() < count && attempts < 10_000 {
        attempts += 1;
        let c = Vec2::new(rng.random_range(-hw..hw), rng.random_range(-hh..hh));
        let r = rng.random_range(radius.0..radius.1);
        if route_distance(&scene.route, c) < route_gap + r || scene.clearance(c) < r + 1.0 {
            continue;
        }
        if scene.pillars.iter().any(|p| p.center.dist(c) < p.radius + r + 1.5) {
            continue;
        }
        scene.pillars.push(Pillar { center: c, radius: r });
    }
}

/// 40 × 40 m floor: outer walls, partition walls reaching in from the
/// boundary, a walled block with a doorway inside the loop, and a few
/// pillars. The route is a 16 × 10 m rectangle.
fn rooms(seed: u64, rng: &mut ChaCha8Rng) -> SceneSpec {
    let (hx, hy) = (8.0, 5.0);
    let mut segs = Vec::new();
    rect(&mut segs, -20.0, -20.0, 20.0, 20.0);
    let gap = 2.0;
    // Partitions from the top and bottom walls.
    for side in [1.0, -1.0] {
        let mut xs: Vec<f64> = (0..3).map(|k| -14.0 + 10.0 * k as f64 + rng.random_range(-2.5..2.5)).collect();
        xs.push(rng.random_range(14.0..17.0));
        for x in xs {
            let stop = hy + gap + rng.random_range(0.0..4.0);
            segs.push(Segment::new(x, 20.0 * side, x, stop * side));
        }
    }
    // Partitions from the left and right walls.
    for side in [1.0, -1.0] {
        for y in [rng.random_range(-13.0..-9.0), rng.random_range(9.0..13.0)] {
            let stop = hx + gap + rng.random_range(0.0..3.0);
            segs.push(Segment::new(20.0 * side, y, stop * side, y));
        }
    }
    // Inner block with a doorway in its bottom wall.
    let (bx, by) = (rng.random_range(4.0..5.5), rng.random_range(2.0..2.8));
    let door = rng.random_range(-bx + 1.0..bx - 2.5);
    segs.push(Segment::new(-bx, -by, door, -by));
    segs.push(Segment::new(door + 1.5, -by, bx, -by));
    segs.push(Segment::new(bx, -by, bx, by));
    segs.push(Segment::new(bx, by, -bx, by));
    segs.push(Segment::new(-bx, by, -bx, -by));
    // One oblique wall in a corner region.
    let a: f64 = rng.random_range(0.3..1.2);
    segs.push(Segment::new(-20.0, 16.0, -20.0 + 4.0 * a.cos(), 16.0 - 4.0 * a.sin()));
    let mut scene = SceneSpec {
        extent: (40.0, 40.0),
        segments: segs,
        pillars: Vec::new(),
        route: rect_route(hx, hy),
        seed,
    };
    scatter_pillars(&mut scene, rng, 4, 1.5, (0.3, 0.6));
    scene
}

/// 60 × 60 m: rectangular buildings around a 30 × 24 m loop, with trees.
fn campus(seed: u64, rng: &mut ChaCha8Rng) -> SceneSpec {
    let (hx, hy) = (15.0, 12.0);
    let mut segs = Vec::new();
    // Buildings inside the loop.
    for (cx, cy) in [(-6.0, 0.0), (6.0, 0.0)] {
        let w = rng.random_range(3.0..4.5);
        let h = rng.random_range(5.0..8.0);
        let ox = rng.random_range(-0.5..0.5);
        rect(&mut segs, cx + ox - w, cy - h, cx + ox + w, cy + h);
    }
    // Buildings outside the loop.
    for (cx, cy) in [(-20.0, 20.0), (0.0, 21.0), (20.0, 20.0), (-22.0, -18.0), (2.0, -20.0), (22.0, -19.0), (24.0, 0.0), (-24.0, 2.0)] {
        let w = rng.random_range(2.0..4.0);
        let h = rng.random_range(2.0..4.0);
        let (jx, jy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        rect(&mut segs, cx + jx - w, cy + jy - h, cx + jx + w, cy + jy + h);
    }
    let mut scene = SceneSpec {
        extent: (60.0, 60.0),
        segments: segs,
        pillars: Vec::new(),
        route: rect_route(hx, hy),
        seed,
    };
    scatter_pillars(&mut scene, rng, 12, 2.0, (0.2, 0.5));
    scene
}

/// 40 × 40 m of scattered trunks and no walls.
fn pillars(seed: u64, rng: &mut ChaCha8Rng) -> SceneSpec {
    let mut scene = SceneSpec {
        extent: (40.0, 40.0),
        segments: Vec::new(),
        pillars: Vec::new(),
        route: rect_route(8.0, 5.0),
        seed,
    };
    scatter_pillars(&mut scene, rng, 40, 1.5, (0.2, 0.6));
    scene
}

pub fn generate_scene(seed: u64, preset: Preset) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match preset {
        Preset::Rooms => rooms(seed, &mut rng),
        Preset::Campus => campus(seed, &mut rng),
        Preset::Pillars => pillars(seed, &mut rng),
    }
}

/// One 2D ray per beam from `pose`; hits are expressed in the sensor frame
/// and replicated over the sensor's z-layers.
pub fn simulate_scan(scene: &SceneSpec, pose: &Pose2, sensor: &SensorSpec, seed: u64) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sensor.range_sigma.max(0.0)).expect("finite sigma");
    let heights = sensor.heights();
    let mut cloud = Vec::with_capacity(sensor.beams * heights.len());
    let origin = pose.translation();
    for i in 0..sensor.beams {
        let a = 2.0 * PI * i as f64 / sensor.beams as f64;
        let dir = Vec2::new((pose.yaw + a).cos(), (pose.yaw + a).sin());
        let Some(range) = scene.cast(origin, dir, sensor.max_range) else {
            continue;
        };
        let r = if sensor.range_sigma > 0.0 { range + noise.sample(&mut rng) } else { range };
        let (x, y) = (r * a.cos(), r * a.sin());
        cloud.extend(heights.iter().map(|&z| Point3::new(x, y, z)));
    }
    cloud
}

/// Walks the closed polyline placing consecutive poses exactly `spacing`
/// apart (Euclidean chord), heading along the current edge.
pub fn resample_loop(route: &[Vec2], spacing: f64) -> Result<Vec<Pose2>> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::config("spacing must be positive"));
    }
    if route.len() < 2 {
        return Err(Error::Invalid("route needs at least two vertices".into()));
    }
    let n = route.len();
    let edges: Vec<(Vec2, Vec2)> = (0..n).map(|i| (route[i], route[(i + 1) % n])).collect();
    let total: f64 = edges.iter().map(|(a, b)| a.dist(*b)).sum();
    if spacing > total / 4.0 {
        return Err(Error::config("spacing too large for the route"));
    }
    let heading = |e: usize| {
        let d = edges[e].1 - edges[e].0;
        d.y.atan2(d.x)
    };
    let mut poses = vec![Pose2::new(route[0].x, route[0].y, heading(0))];
    let (mut edge, mut cur) = (0usize, route[0]);
    loop {
        // Find the first point ahead on the polyline at chord distance
        // `spacing` from `cur`.
        let mut e = edge;
        let mut start = cur;
        let next = loop {
            let (a, b) = (start, edges[e].1);
            let d = b - a;
            let len = d.norm();
            if len > 0.0 {
                let dir = d * (1.0 / len);
                // |a + t·dir − cur|² = spacing², largest root in [0, len].
                let m = a - cur;
                let bq = m.dot(dir);
                let disc = bq * bq - (m.norm_sq() - spacing * spacing);
                if disc >= 0.0 {
                    let t = -bq + disc.sqrt();
                    if (0.0..=len).contains(&t) {
                        break Some((e, a + dir * t));
                    }
                }
            }
            e += 1;
            if e >= n {
                break None;
            }
            start = edges[e].0;
        };
        let Some((e, p)) = next else { break };
        // Stop before closing the loop onto the first pose.
        if e == n - 1 && p.dist(route[0]) < spacing {
            break;
        }
        poses.push(Pose2::new(p.x, p.y, heading(e)));
        edge = e;
        cur = p;
    }
    Ok(poses)
}

/// Reference trajectory along the scene's route with free-space checks.
pub fn generate_trajectory(scene: &SceneSpec, spacing: f64) -> Result<Vec<Pose2>> {
    let poses = resample_loop(&scene.route, spacing)?;
    for (i, p) in poses.iter().enumerate() {
        if !scene.is_free(p.translation(), 0.5) {
            return Err(Error::Invalid(format!(
                "trajectory blocked at pose {i} ({:.2}, {:.2})",
                p.x, p.y
            )));
        }
    }
    Ok(poses)
}

/// Held-out query poses whose distance to the closest reference pose lies in
/// `[min_offset, max_offset]`, at least 0.5 m from any obstacle. The yaw is
/// the closest reference heading plus a uniform offset in `±yaw_jitter`.
pub fn sample_query_poses(
    scene: &SceneSpec,
    reference: &[Pose2],
    count: usize,
    min_offset: f64,
    max_offset: f64,
    yaw_jitter: f64,
    seed: u64,
) -> Result<Vec<Pose2>> {
    if reference.is_empty() {
        return Err(Error::Invalid("query sampling needs a reference trajectory".into()));
    }
    if !(min_offset >= 0.0 && max_offset >= min_offset && max_offset.is_finite() && yaw_jitter >= 0.0) {
        return Err(Error::config("query offsets must satisfy 0 ≤ min ≤ max and jitter ≥ 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hx, hy) = (scene.extent.0 / 2.0, scene.extent.1 / 2.0);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count {
        attempts += 1;
        if attempts > 1_000_000 + 10_000 * count {
            return Err(Error::Invalid(format!(
                "found only {} of {count} free query poses {min_offset}-{max_offset} m off the trajectory",
                out.len()
            )));
        }
        let p = Vec2::new(rng.random_range(-hx..=hx), rng.random_range(-hy..=hy));
        let (nearest, d) = reference
            .iter()
            .map(|r| (r, r.translation().dist(p)))
            .fold((&reference[0], f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b });
        if d < min_offset || d > max_offset || !scene.is_free(p, 0.5) {
            continue;
        }
        let jitter = if yaw_jitter > 0.0 { rng.random_range(-yaw_jitter..=yaw_jitter) } else { 0.0 };
        out.push(Pose2::new(p.x, p.y, nearest.yaw + jitter));
    }
    Ok(out)
}

pub fn format_scene(scene: &SceneSpec) -> String {
    let mut s = String::from("SEGMENTS\n");
    for g in &scene.segments {
        s.push_str(&format!("{} {} {} {}\n", g.a.x, g.a.y, g.b.x, g.b.y));
    }
    s.push_str("PILLARS\n");
    for p in &scene.pillars {
        s.push_str(&format!("{} {} {}\n", p.center.x, p.center.y, p.radius));
    }
    s
}

/// Parses `SEGMENTS` / `PILLARS` sections. The extent is the symmetric box
/// around the origin that contains all geometry; no route is recorded.
pub fn parse_scene(text: &str, origin: &str) -> Result<SceneSpec> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.into(),
        line,
        msg,
    };
    #[derive(PartialEq)]
    enum Section {
        None,
        Segments,
        Pillars,
    }
    let mut section = Section::None;
    let mut segments = Vec::new();
    let mut pillars = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "SEGMENTS" => {
                section = Section::Segments;
                continue;
            }
            "PILLARS" => {
                section = Section::Pillars;
                continue;
            }
            _ => {}
        }
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(i + 1, format!("bad number `{f}`"))))
            .collect::<Result<_>>()?;
        match section {
            Section::None => return Err(err(i + 1, "data before a SEGMENTS or PILLARS header".into())),
            Section::Segments => {
                if nums.len() != 4 {
                    return Err(err(i + 1, format!("segment needs 4 numbers, found {}", nums.len())));
                }
                segments.push(Segment::new(nums[0], nums[1], nums[2], nums[3]));
            }
            Section::Pillars => {
                if nums.len() != 3 {
                    return Err(err(i + 1, format!("pillar needs 3 numbers, found {}", nums.len())));
                }
                if !(nums[2] > 0.0) {
                    return Err(err(i + 1, "pillar radius must be positive".into()));
                }
                pillars.push(Pillar {
                    center: Vec2::new(nums[0], nums[1]),
                    radius: nums[2],
                });
            }
        }
    }
    let mut half = (0.0f64, 0.0f64);
    for s in &segments {
        for p in [s.a, s.b] {
            half = (half.0.max(p.x.abs()), half.1.max(p.y.abs()));
        }
    }
    for p in &pillars {
        half = (half.0.max(p.center.x.abs() + p.radius), half.1.max(p.center.y.abs() + p.radius));
    }
    Ok(SceneSpec {
        extent: (2.0 * half.0, 2.0 * half.1),
        segments,
        pillars,
        route: Vec::new(),
        seed: 0,
    })
}
