//! Procedural ground-truth maps and 2D lidar occlusion.
//!
//! Maps are built from road centerline segments drawn with round caps,
//! a sidewalk band around the road, and square building blocks placed
//! off-road. Visibility is ray-cast from the vehicle pose with a grid
//! traversal that visits every cell a ray passes through.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmask::BitMask;
use crate::grid::{ClassId, Frame, GridError, SemanticGrid, VehiclePose};
use crate::Cell;

pub const MIN_MAP_SIZE: usize = 64;
pub const DEFAULT_N_RAYS: usize = 720;
pub const DEFAULT_MAX_RANGE: f64 = 70.0;
pub const DEFAULT_ROAD_WIDTH: usize = 22;
pub const DEFAULT_DENSITY: f64 = 0.85;
/// Vehicle advance per frame along the scripted path, in cells.
pub const SEQUENCE_STEP: f64 = 2.0;
pub const SEQUENCE_FRAMES: usize = 50;
/// Distance before the junction center where the scripted vehicle must commit to the turn.
pub const TURN_OFFSET: f64 = 30.0;

const SIDEWALK_WIDTH: f64 = 3.0;
const BLOCK_SIZE: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum OcclusionError {
    #[error("map {width}x{height} too small: {reason}")]
    TooSmall {
        width: usize,
        height: usize,
        reason: &'static str,
    },
    #[error("invalid map spec: {0}")]
    InvalidSpec(&'static str),
    #[error("pose ({0}, {1}) outside the grid")]
    PoseOutside(f64, f64),
    #[error("need at least 8 rays, got {0}")]
    TooFewRays(usize),
    #[error("max range must be > 0, got {0}")]
    BadRange(f64),
    #[error("visibility mask {0}x{1} does not match grid {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Straight,
    LTurn,
    TJunction,
    XJunction,
}

impl MapKind {
    /// Accepts `S`, `L`, `T`, `X` as well as the full snake-case names.
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "straight" => Some(MapKind::Straight),
            "l" | "l_turn" => Some(MapKind::LTurn),
            "t" | "t_junction" => Some(MapKind::TJunction),
            "x" | "x_junction" => Some(MapKind::XJunction),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub kind: MapKind,
    pub road_width: usize,
    pub seed: u64,
    pub obstacle_density: f64,
}

impl MapSpec {
    pub fn new(kind: MapKind, seed: u64) -> Self {
        Self {
            kind,
            road_width: DEFAULT_ROAD_WIDTH,
            seed,
            obstacle_density: DEFAULT_DENSITY,
        }
    }

    pub fn validate(&self) -> Result<(), OcclusionError> {
        if self.road_width < 3 {
            return Err(OcclusionError::InvalidSpec("road_width must be >= 3"));
        }
        if !(0.0..=1.0).contains(&self.obstacle_density) {
            return Err(OcclusionError::InvalidSpec("obstacle_density must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Seed-dependent geometry shared by the map and the scripted drive.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// Column of the vertical road's centerline.
    pub cx: f64,
    /// Row of the cross street's centerline (meaningless for `Straight`).
    pub jy: f64,
    /// +1 when the route turns right (towards +x), -1 for left.
    pub turn_side: f64,
    pub segments: Vec<[(f64, f64); 2]>,
    /// End of the route, on the road centerline.
    pub goal: Cell,
}

pub fn layout(spec: &MapSpec, width: usize, height: usize) -> Result<Layout, OcclusionError> {
    spec.validate()?;
    if width < MIN_MAP_SIZE || height < MIN_MAP_SIZE {
        return Err(OcclusionError::TooSmall {
            width,
            height,
            reason: "both sides must be at least 64 cells",
        });
    }
    let half = spec.road_width as f64 / 2.0;
    if spec.road_width * 4 > width.min(height) {
        return Err(OcclusionError::TooSmall {
            width,
            height,
            reason: "road wider than a quarter of the map",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (width as f64, height as f64);
    let inset = half + 2.0;
    let (left, right) = (inset, w - 1.0 - inset);
    let (top, bottom) = (inset, h - 1.0 - inset);

    let jitter = (w / 8.0).floor();
    let cx = (w / 2.0).floor() + rng.random_range(-jitter..=jitter).round();
    let jy_min = top + half + spec.road_width as f64;
    let jy_max = (bottom - TURN_OFFSET - SEQUENCE_STEP * (SEQUENCE_FRAMES - 1) as f64 - 2.0).max(jy_min);
    let jy = rng.random_range(jy_min..=jy_max).round();
    let turn_side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };

    let stem = [(cx, bottom), (cx, jy)];
    let arm_end = if turn_side > 0.0 { right } else { left };
    let (segments, goal) = match spec.kind {
        MapKind::Straight => (vec![[(cx, bottom), (cx, top)]], (cx, top)),
        MapKind::LTurn => (vec![stem, [(cx, jy), (arm_end, jy)]], (arm_end, jy)),
        MapKind::TJunction => (vec![stem, [(left, jy), (right, jy)]], (arm_end, jy)),
        MapKind::XJunction => (
            vec![[(cx, bottom), (cx, top)], [(left, jy), (right, jy)]],
            (arm_end, jy),
        ),
    };
    Ok(Layout {
        cx,
        jy,
        turn_side,
        segments,
        goal: (goal.0.round() as usize, goal.1.round() as usize),
    })
}

fn segment_distance(p: (f64, f64), [a, b]: [(f64, f64); 2]) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Deterministic ground-truth map for `spec`.
pub fn synth_map(spec: &MapSpec, width: usize, height: usize) -> Result<SemanticGrid, OcclusionError> {
    let lay = layout(spec, width, height)?;
    Ok(render_layout(spec, &lay, width, height))
}

fn render_layout(spec: &MapSpec, lay: &Layout, width: usize, height: usize) -> SemanticGrid {
    let half = spec.road_width as f64 / 2.0;
    let dist = |x: usize, y: usize| {
        lay.segments
            .iter()
            .map(|s| segment_distance((x as f64, y as f64), *s))
            .fold(f64::INFINITY, f64::min)
    };
    let mut grid = SemanticGrid::from_fn(width, height, |x, y| {
        let d = dist(x, y);
        if d <= half {
            ClassId::Road
        } else if d <= half + SIDEWALK_WIDTH {
            ClassId::Sidewalk
        } else {
            ClassId::Other
        }
    });

    // Block draws come from a stream independent of the layout draws.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    for by in (0..height).step_by(BLOCK_SIZE) {
        for bx in (0..width).step_by(BLOCK_SIZE) {
            let draw: f64 = rng.random();
            if draw >= spec.obstacle_density {
                continue;
            }
            for y in by..(by + BLOCK_SIZE).min(height) {
                for x in bx..(bx + BLOCK_SIZE).min(width) {
                    if grid.get(x, y) == ClassId::Other {
                        grid.set(x, y, ClassId::Building);
                    }
                }
            }
        }
    }
    grid
}

/// Cells visible from `pose`: each ray marks every cell it passes through up
/// to and including the first occluder, stopping once the entry distance
/// exceeds `max_range`.
pub fn raycast_visibility(
    gt: &SemanticGrid,
    pose: &VehiclePose,
    n_rays: usize,
    max_range: f64,
) -> Result<BitMask, OcclusionError> {
    if n_rays < 8 {
        return Err(OcclusionError::TooFewRays(n_rays));
    }
    if !(max_range > 0.0) {
        return Err(OcclusionError::BadRange(max_range));
    }
    let (sx, sy) = pose
        .cell_in(gt.width(), gt.height())
        .ok_or(OcclusionError::PoseOutside(pose.px, pose.py))?;
    let mut vis = BitMask::new(gt.width(), gt.height());
    vis.set(sx, sy, true);
    if gt.get(sx, sy).is_occluder() {
        return Ok(vis);
    }
    // Cell i spans [i - 0.5, i + 0.5); shift so that cells are floor() bins.
    let (u, v) = (pose.px + 0.5, pose.py + 0.5);
    for k in 0..n_rays {
        let angle = 2.0 * PI * k as f64 / n_rays as f64;
        let (dx, dy) = (angle.cos(), angle.sin());
        let (mut cx, mut cy) = (sx as i64, sy as i64);
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let axis = |d: f64, pos: f64, cell: i64| -> (f64, f64) {
            if d.abs() < 1e-12 {
                (f64::INFINITY, f64::INFINITY)
            } else if d > 0.0 {
                (((cell + 1) as f64 - pos) / d, 1.0 / d)
            } else {
                ((pos - cell as f64) / -d, -1.0 / d)
            }
        };
        let (mut t_max_x, t_delta_x) = axis(dx, u, cx);
        let (mut t_max_y, t_delta_y) = axis(dy, v, cy);
        loop {
            let t = if t_max_x < t_max_y {
                cx += step_x;
                let t = t_max_x;
                t_max_x += t_delta_x;
                t
            } else {
                cy += step_y;
                let t = t_max_y;
                t_max_y += t_delta_y;
                t
            };
            if t > max_range || !gt.in_bounds(cx, cy) {
                break;
            }
            let (x, y) = (cx as usize, cy as usize);
            vis.set(x, y, true);
            if gt.get(x, y).is_occluder() {
                break;
            }
        }
    }
    Ok(vis)
}

/// Visible cells copy `gt`; the rest become `UNKNOWN`.
pub fn apply_occlusion(gt: &SemanticGrid, vis: &BitMask) -> Result<SemanticGrid, OcclusionError> {
    if gt.width() != vis.width() || gt.height() != vis.height() {
        return Err(OcclusionError::DimensionMismatch(
            vis.width(),
            vis.height(),
            gt.width(),
            gt.height(),
        ));
    }
    Ok(gt.with_cells(
        gt.cells()
            .iter()
            .zip(vis.bits())
            .map(|(&c, &v)| if v { c } else { ClassId::Unknown })
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub map: MapSpec,
    pub width: usize,
    pub height: usize,
    pub n_rays: usize,
    pub max_range: f64,
    pub frames: usize,
}

impl SequenceSpec {
    pub fn new(map: MapSpec) -> Self {
        Self {
            map,
            width: crate::grid::DEFAULT_SIZE,
            height: crate::grid::DEFAULT_SIZE,
            n_rays: DEFAULT_N_RAYS,
            max_range: DEFAULT_MAX_RANGE,
            frames: SEQUENCE_FRAMES,
        }
    }
}

/// A scripted drive towards a turn: ground truth plus one occluded frame per pose.
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub gt: SemanticGrid,
    pub frames: Vec<Frame>,
    pub goal: Cell,
    /// Index of the last frame from which the turn is still feasible.
    pub turn_frame: usize,
    pub window: (usize, usize),
}

/// Poses advance [`SEQUENCE_STEP`] cells per frame up the vertical road's
/// centerline and end [`TURN_OFFSET`] cells before the junction center.
pub fn synth_sequence(spec: &SequenceSpec) -> Result<SynthSequence, OcclusionError> {
    if spec.frames == 0 {
        return Err(OcclusionError::InvalidSpec("sequence needs at least one frame"));
    }
    let lay = layout(&spec.map, spec.width, spec.height)?;
    let gt = render_layout(&spec.map, &lay, spec.width, spec.height);
    let y_end = match spec.map.kind {
        MapKind::Straight => lay.jy,
        _ => lay.jy + TURN_OFFSET,
    };
    let y_start = y_end + SEQUENCE_STEP * (spec.frames - 1) as f64;
    if y_start >= spec.height as f64 || gt.get(lay.cx as usize, y_start as usize) != ClassId::Road {
        return Err(OcclusionError::TooSmall {
            width: spec.width,
            height: spec.height,
            reason: "scripted drive does not fit on the road",
        });
    }
    let frames = (0..spec.frames)
        .map(|k| {
            let pose = VehiclePose::new(lay.cx, y_start - SEQUENCE_STEP * k as f64, -FRAC_PI_2);
            let vis = raycast_visibility(&gt, &pose, spec.n_rays, spec.max_range)?;
            let grid = apply_occlusion(&gt, &vis)?;
            Frame::new(grid, pose, k as u64).map_err(|e| match e {
                GridError::PoseOutOfBounds { px, py, .. } => OcclusionError::PoseOutside(px, py),
                _ => OcclusionError::InvalidSpec("frame construction failed"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SynthSequence {
        gt,
        frames,
        goal: lay.goal,
        turn_frame: spec.frames - 1,
        window: (0, spec.frames - 1),
    })
}
