//! Ego-centred bird's-eye-view rasters.
//!
//! Channel order: drivable area, crosswalks, agents from the oldest to the
//! current history frame, then the ego over the same frames. All history
//! channels are drawn in the reference frame of the current ego pose; the ego
//! sits at the grid centre facing toward row 0. A pixel is set iff its centre
//! lies inside the polygon (boundary included).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::{convex_contains, to_local, OrientedBox, Pose2D, Vec2};
use crate::scene::{AgentId, Extent, Scene};
use crate::RasterError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterConfig {
    pub size_px: usize,
    /// Meters per pixel.
    pub resolution: f64,
    pub history_frames: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            size_px: 256,
            resolution: 0.5,
            history_frames: 3,
        }
    }
}

impl RasterConfig {
    pub fn channels(&self) -> usize {
        2 + 2 * self.history_frames
    }

    /// Half the side length of the covered square, in meters.
    pub fn half_extent_m(&self) -> f64 {
        0.5 * self.size_px as f64 * self.resolution
    }

    pub fn validate(&self) -> Result<(), RasterError> {
        if self.size_px == 0 || self.size_px % 2 != 0 {
            return Err(RasterError::Config(format!("size_px must be even and positive, got {}", self.size_px)));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(RasterError::Config(format!("resolution must be > 0, got {}", self.resolution)));
        }
        if self.history_frames == 0 {
            return Err(RasterError::Config("history_frames must be >= 1".into()));
        }
        Ok(())
    }

    /// Local-frame point to continuous pixel coordinates `(row, col)`.
    fn to_pixel(&self, p: Vec2) -> Vec2 {
        let half = 0.5 * self.size_px as f64;
        Vec2::new(half - p.x / self.resolution, half - p.y / self.resolution)
    }
}

pub const CHANNEL_DRIVABLE: usize = 0;
pub const CHANNEL_CROSSWALKS: usize = 1;

/// Binary `channels x size x size` grid, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub config: RasterConfig,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn zeros(config: &RasterConfig) -> Self {
        let n = config.channels() * config.size_px * config.size_px;
        Self {
            config: config.clone(),
            data: vec![0.0; n],
        }
    }

    pub fn channels(&self) -> usize {
        self.config.channels()
    }

    pub fn size(&self) -> usize {
        self.config.size_px
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.size() * self.size();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.channel(c)[row * self.size() + col]
    }

    pub fn agent_channel(&self, k: usize) -> usize {
        2 + k
    }

    pub fn ego_channel(&self, k: usize) -> usize {
        2 + self.config.history_frames + k
    }

    pub fn count_set(&self, c: usize) -> usize {
        self.channel(c).iter().filter(|v| **v != 0.0).count()
    }

    /// Writes one 8-bit binary PGM per channel as `<stem>_c<k>.pgm`.
    pub fn dump_pgm(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>, RasterError> {
        fs::create_dir_all(dir)?;
        let size = self.size();
        let mut out = Vec::new();
        for c in 0..self.channels() {
            let path = dir.join(format!("{stem}_c{c}.pgm"));
            let mut f = fs::File::create(&path)?;
            write!(f, "P5\n{size} {size}\n255\n")?;
            let bytes: Vec<u8> = self.channel(c).iter().map(|v| if *v != 0.0 { 255 } else { 0 }).collect();
            f.write_all(&bytes)?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Sets every pixel of channel `c` whose centre lies in the local-frame polygon.
fn fill(raster: &mut Raster, c: usize, local: &[Vec2]) {
    let cfg = &raster.config;
    let size = cfg.size_px;
    let px: Vec<Vec2> = local.iter().map(|p| cfg.to_pixel(*p)).collect();
    let (mut rmin, mut rmax, mut cmin, mut cmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &px {
        rmin = rmin.min(p.x);
        rmax = rmax.max(p.x);
        cmin = cmin.min(p.y);
        cmax = cmax.max(p.y);
    }
    // Pixel centres sit at integer + 0.5.
    let lo = |v: f64| (v - 0.5).ceil().max(0.0);
    let hi = |v: f64| (v - 0.5).floor().min(size as f64 - 1.0);
    let (r0, r1, c0, c1) = (lo(rmin), hi(rmax), lo(cmin), hi(cmax));
    if r0 > r1 || c0 > c1 {
        return;
    }
    let n = size * size;
    let chan = &mut raster.data[c * n..(c + 1) * n];
    for r in r0 as usize..=r1 as usize {
        for col in c0 as usize..=c1 as usize {
            if convex_contains(&px, Vec2::new(r as f64 + 0.5, col as f64 + 0.5)) {
                chan[r * size + col] = 1.0;
            }
        }
    }
}

fn fill_box(raster: &mut Raster, c: usize, b: &OrientedBox, reference: &Pose2D) {
    let local: Vec<Vec2> = b.corners().iter().map(|p| to_local(*p, reference)).collect();
    fill(raster, c, &local);
}

fn render_map(raster: &mut Raster, scene: &Scene, reference: &Pose2D) {
    let reach = raster.config.half_extent_m() * std::f64::consts::SQRT_2;
    for lane in &scene.map.lanes {
        let pts: Vec<Vec2> = lane.centerline.iter().map(|p| to_local(*p, reference)).collect();
        let n = pts.len();
        if n < 2 {
            continue;
        }
        let half = 0.5 * lane.width;
        // Left/right edges along averaged vertex normals, so consecutive quads share edges.
        let normals: Vec<Vec2> = (0..n)
            .map(|i| {
                let prev = pts[i.max(1)] - pts[i.max(1) - 1];
                let next = if i + 1 < n { pts[i + 1] - pts[i] } else { prev };
                let t = prev * (1.0 / prev.norm()) + next * (1.0 / next.norm());
                (t * (1.0 / t.norm())).perp()
            })
            .collect();
        for i in 0..n - 1 {
            let (a, b) = (pts[i], pts[i + 1]);
            // Skip segments that cannot touch the grid.
            let seg = b - a;
            let len2 = seg.dot(seg);
            let t = if len2 > 0.0 { (-a.dot(seg) / len2).clamp(0.0, 1.0) } else { 0.0 };
            if (a + seg * t).norm() > reach + half + 1.0 {
                continue;
            }
            let quad = [
                a + normals[i] * half,
                b + normals[i + 1] * half,
                b - normals[i + 1] * half,
                a - normals[i] * half,
            ];
            fill(raster, CHANNEL_DRIVABLE, &quad);
        }
    }
    for cw in &scene.map.crosswalks {
        let local: Vec<Vec2> = cw.iter().map(|p| to_local(*p, reference)).collect();
        fill(raster, CHANNEL_CROSSWALKS, &local);
    }
}

/// Renders frame `frame_index` in the frame of `reference`, drawing the ego
/// history from `ego_history` (oldest first, one pose per history frame)
/// rather than from the log. Observations of `mask` are omitted. History
/// frames before the scene start repeat frame 0.
pub fn render(
    scene: &Scene,
    frame_index: usize,
    reference: &Pose2D,
    ego_history: &[Pose2D],
    ego_extent: Extent,
    mask: Option<AgentId>,
    config: &RasterConfig,
) -> Result<Raster, RasterError> {
    config.validate()?;
    let h = config.history_frames;
    if frame_index >= scene.frames.len() {
        return Err(RasterError::FrameOutOfRange {
            index: frame_index,
            len: scene.frames.len(),
        });
    }
    if ego_history.len() != h {
        return Err(RasterError::Config(format!(
            "expected {h} ego history poses, got {}",
            ego_history.len()
        )));
    }
    let mut raster = Raster::zeros(config);
    render_map(&mut raster, scene, reference);
    let reach = config.half_extent_m() * std::f64::consts::SQRT_2;
    for k in 0..h {
        let frame = &scene.frames[(frame_index + 1 + k).saturating_sub(h)];
        for a in &frame.agents {
            if Some(a.agent_id) == mask {
                continue;
            }
            let r = to_local(a.bbox.center.position(), reference).norm();
            if r - 0.5 * (a.bbox.length + a.bbox.width) > reach {
                continue;
            }
            fill_box(&mut raster, 2 + k, &a.bbox, reference);
        }
        let ego_box = OrientedBox::new(ego_history[k], ego_extent.length, ego_extent.width);
        fill_box(&mut raster, 2 + h + k, &ego_box, reference);
    }
    Ok(raster)
}

fn logged_history(scene: &Scene, frame_index: usize, config: &RasterConfig) -> Result<Vec<Pose2D>, RasterError> {
    let h = config.history_frames;
    if frame_index >= scene.frames.len() {
        return Err(RasterError::FrameOutOfRange {
            index: frame_index,
            len: scene.frames.len(),
        });
    }
    if frame_index + 1 < h {
        return Err(RasterError::InsufficientHistory {
            index: frame_index,
            history: h,
        });
    }
    Ok(scene.frames[frame_index + 1 - h..=frame_index].iter().map(|f| f.ego).collect())
}

pub fn rasterize(scene: &Scene, frame_index: usize, config: &RasterConfig) -> Result<Raster, RasterError> {
    rasterize_inner(scene, frame_index, None, config)
}

/// As [`rasterize`] with every observation of `agent_id` removed.
pub fn rasterize_masked(
    scene: &Scene,
    frame_index: usize,
    agent_id: AgentId,
    config: &RasterConfig,
) -> Result<Raster, RasterError> {
    rasterize_inner(scene, frame_index, Some(agent_id), config)
}

fn rasterize_inner(
    scene: &Scene,
    frame_index: usize,
    mask: Option<AgentId>,
    config: &RasterConfig,
) -> Result<Raster, RasterError> {
    let history = logged_history(scene, frame_index, config)?;
    let frame = &scene.frames[frame_index];
    render(scene, frame_index, &frame.ego, &history, frame.ego_extent, mask, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::fixtures::*;

    fn cfg() -> RasterConfig {
        RasterConfig::default()
    }

    #[test]
    fn golden_agent_rectangle() {
        let mut s = simple_scene(5);
        for f in &mut s.frames {
            f.agents = vec![vehicle(1, f.ego.x + 10.0, 0.0, 0.0)];
        }
        let r = rasterize(&s, 4, &cfg()).unwrap();
        let c = r.agent_channel(2);
        assert_eq!(r.count_set(c), 32);
        for row in 0..256 {
            for col in 0..256 {
                let inside = (104..112).contains(&row) && (126..130).contains(&col);
                assert_eq!(r.get(c, row, col) == 1.0, inside, "pixel {row},{col}");
            }
        }
    }

    #[test]
    fn insufficient_history_and_out_of_range() {
        let s = simple_scene(5);
        assert!(matches!(
            rasterize(&s, 1, &cfg()),
            Err(RasterError::InsufficientHistory { .. })
        ));
        assert!(matches!(rasterize(&s, 5, &cfg()), Err(RasterError::FrameOutOfRange { .. })));
    }

    #[test]
    fn no_agents_zero_channels() {
        let mut s = simple_scene(4);
        for f in &mut s.frames {
            f.agents.clear();
        }
        let r = rasterize(&s, 3, &cfg()).unwrap();
        for k in 0..3 {
            assert_eq!(r.count_set(r.agent_channel(k)), 0);
            assert!(r.count_set(r.ego_channel(k)) > 0);
        }
        assert!(r.count_set(CHANNEL_DRIVABLE) > 0);
    }

    #[test]
    fn masking_absent_agent_is_noop() {
        let s = simple_scene(4);
        assert_eq!(
            rasterize(&s, 3, &cfg()).unwrap(),
            rasterize_masked(&s, 3, AgentId(999), &cfg()).unwrap()
        );
    }

    #[test]
    fn invalid_config() {
        let odd = RasterConfig {
            size_px: 255,
            ..cfg()
        };
        assert!(odd.validate().is_err());
    }
}
