//! BEV semantic raster, class palette, vehicle pose and the `OGRD` file format.
//!
//! Grid files are little-endian:
//!
//! | offset | type    | field          |
//! |--------|---------|----------------|
//! | 0      | [u8; 4] | magic `"OGRD"` |
//! | 4      | u16     | version (= 1)  |
//! | 6      | u32     | width          |
//! | 10     | u32     | height         |
//! | 14     | f32     | resolution     |
//! | 18     | f32     | origin_x       |
//! | 22     | f32     | origin_y       |
//! | 26     | u8 * wh | class ids, row-major |
//!
//! A frame adds a UTF-8 JSON sidecar next to the raster (same basename,
//! `.json` extension) holding `{frame_id, pose: {px, py, theta}}`.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmask::BitMask;

pub const MAGIC: &[u8; 4] = b"OGRD";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 26;

pub const DEFAULT_RESOLUTION: f32 = 0.2;
pub const DEFAULT_SIZE: usize = 256;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("sidecar json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad magic, expected \"OGRD\"")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("undeclared class id {id} at cell {index}")]
    UndeclaredClass { id: u8, index: usize },
    #[error("pose ({px}, {py}) outside {width}x{height} grid")]
    PoseOutOfBounds {
        px: f64,
        py: f64,
        width: usize,
        height: usize,
    },
    #[error("grid has zero cells")]
    EmptyGrid,
    #[error("resolution must be finite and > 0, got {0}")]
    InvalidResolution(f32),
    #[error("cell count {found} does not match {width}x{height}")]
    CellCount {
        width: usize,
        height: usize,
        found: usize,
    },
}

/// Semantic class of a cell. The palette is closed: ids 0..=8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ClassId {
    Unknown = 0,
    Road = 1,
    Sidewalk = 2,
    Building = 3,
    Fence = 4,
    Vegetation = 5,
    Vehicle = 6,
    Pedestrian = 7,
    Other = 8,
}

impl ClassId {
    pub const ALL: [ClassId; 9] = [
        ClassId::Unknown,
        ClassId::Road,
        ClassId::Sidewalk,
        ClassId::Building,
        ClassId::Fence,
        ClassId::Vegetation,
        ClassId::Vehicle,
        ClassId::Pedestrian,
        ClassId::Other,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    /// Blocks lidar rays.
    pub fn is_occluder(self) -> bool {
        matches!(self, ClassId::Building | ClassId::Fence | ClassId::Vehicle)
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassId::Unknown => "unknown",
            ClassId::Road => "road",
            ClassId::Sidewalk => "sidewalk",
            ClassId::Building => "building",
            ClassId::Fence => "fence",
            ClassId::Vegetation => "vegetation",
            ClassId::Vehicle => "vehicle",
            ClassId::Pedestrian => "pedestrian",
            ClassId::Other => "other",
        }
    }
}

impl TryFrom<u8> for ClassId {
    type Error = u8;

    fn try_from(id: u8) -> Result<Self, u8> {
        ClassId::ALL.get(id as usize).copied().ok_or(id)
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t >= PI {
        t -= 2.0 * PI;
    }
    if t < -PI {
        t = -PI;
    }
    t
}

/// Vehicle pose in continuous cell coordinates; heading measured from +x
/// towards +y (so `-pi/2` points "up" the raster).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePose {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
}

impl VehiclePose {
    pub fn new(px: f64, py: f64, theta: f64) -> Self {
        Self {
            px,
            py,
            theta: normalize_angle(theta),
        }
    }

    /// Nearest cell, if the pose is inside a `width x height` grid.
    pub fn cell_in(&self, width: usize, height: usize) -> Option<(usize, usize)> {
        let x = self.px.round();
        let y = self.py.round();
        if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
            Some((x as usize, y as usize))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    width: usize,
    height: usize,
    resolution: f32,
    origin: [f32; 2],
    cells: Vec<ClassId>,
}

impl SemanticGrid {
    pub fn new(
        width: usize,
        height: usize,
        resolution: f32,
        origin: [f32; 2],
        cells: Vec<ClassId>,
    ) -> Result<Self, GridError> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(GridError::InvalidResolution(resolution));
        }
        if cells.len() != width * height {
            return Err(GridError::CellCount {
                width,
                height,
                found: cells.len(),
            });
        }
        Ok(Self {
            width,
            height,
            resolution,
            origin,
            cells,
        })
    }

    /// Grid of a single class at the default resolution.
    pub fn filled(width: usize, height: usize, class: ClassId) -> Self {
        Self {
            width,
            height,
            resolution: DEFAULT_RESOLUTION,
            origin: [0.0, 0.0],
            cells: vec![class; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> ClassId) -> Self {
        let mut cells = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                cells.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            resolution: DEFAULT_RESOLUTION,
            origin: [0.0, 0.0],
            cells,
        }
    }

    /// Row-major fixture constructor at the default resolution.
    pub fn from_classes(width: usize, height: usize, cells: &[ClassId]) -> Result<Self, GridError> {
        Self::new(width, height, DEFAULT_RESOLUTION, [0.0, 0.0], cells.to_vec())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f32 {
        self.resolution
    }

    pub fn origin(&self) -> [f32; 2] {
        self.origin
    }

    pub fn cells(&self) -> &[ClassId] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn same_shape(&self, other: &SemanticGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> ClassId {
        self.cells[y * self.width + x]
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, class: ClassId) {
        let i = self.index(x, y);
        self.cells[i] = class;
    }

    /// Copy of this grid's metadata with new cell contents.
    pub(crate) fn with_cells(&self, cells: Vec<ClassId>) -> Self {
        debug_assert_eq!(cells.len(), self.cells.len());
        Self {
            cells,
            ..self.clone()
        }
    }

    pub fn count(&self, class: ClassId) -> usize {
        self.cells.iter().filter(|&&c| c == class).count()
    }

    /// Every cell whose class is in `classes` becomes `UNKNOWN`.
    pub fn remove_classes(&self, classes: &[ClassId]) -> SemanticGrid {
        let drop: HashSet<ClassId> = classes.iter().copied().collect();
        self.with_cells(
            self.cells
                .iter()
                .map(|c| if drop.contains(c) { ClassId::Unknown } else { *c })
                .collect(),
        )
    }

    pub fn class_mask(&self, class: ClassId) -> BitMask {
        BitMask::from_bits(
            self.width,
            self.height,
            self.cells.iter().map(|&c| c == class).collect(),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, GridError> {
        if self.cells.is_empty() {
            return Err(GridError::EmptyGrid);
        }
        let mut out = Vec::with_capacity(HEADER_LEN + self.cells.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&self.resolution.to_le_bytes());
        out.extend_from_slice(&self.origin[0].to_le_bytes());
        out.extend_from_slice(&self.origin[1].to_le_bytes());
        out.extend(self.cells.iter().map(|c| c.id()));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GridError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(GridError::BadMagic);
            }
            return Err(GridError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(GridError::BadMagic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(GridError::UnsupportedVersion(version));
        }
        let width = u32_at(6) as usize;
        let height = u32_at(10) as usize;
        let resolution = f32_at(14);
        let origin = [f32_at(18), f32_at(22)];
        if width == 0 || height == 0 {
            return Err(GridError::EmptyGrid);
        }
        let expected = HEADER_LEN + width * height;
        if bytes.len() != expected {
            return Err(GridError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let cells = bytes[HEADER_LEN..]
            .iter()
            .enumerate()
            .map(|(index, &id)| ClassId::try_from(id).map_err(|id| GridError::UndeclaredClass { id, index }))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(width, height, resolution, origin, cells)
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<SemanticGrid, GridError> {
    SemanticGrid::from_bytes(&fs::read(path)?)
}

pub fn save_grid(grid: &SemanticGrid, path: impl AsRef<Path>) -> Result<(), GridError> {
    let bytes = grid.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

/// One observation: a grid plus the vehicle pose it was captured from.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub grid: SemanticGrid,
    pub pose: VehiclePose,
    pub frame_id: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    frame_id: u64,
    pose: VehiclePose,
}

impl Frame {
    pub fn new(grid: SemanticGrid, pose: VehiclePose, frame_id: u64) -> Result<Self, GridError> {
        let frame = Self {
            grid,
            pose: VehiclePose::new(pose.px, pose.py, pose.theta),
            frame_id,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.grid.is_empty() {
            return Err(GridError::EmptyGrid);
        }
        if self.pose.cell_in(self.grid.width, self.grid.height).is_none() {
            return Err(GridError::PoseOutOfBounds {
                px: self.pose.px,
                py: self.pose.py,
                width: self.grid.width,
                height: self.grid.height,
            });
        }
        Ok(())
    }

    pub fn pose_cell(&self) -> (usize, usize) {
        self.pose
            .cell_in(self.grid.width, self.grid.height)
            .expect("frame pose validated on construction")
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn save_frame(frame: &Frame, path: impl AsRef<Path>) -> Result<(), GridError> {
    let path = path.as_ref();
    frame.validate()?;
    save_grid(&frame.grid, path)?;
    let sidecar = Sidecar {
        frame_id: frame.frame_id,
        pose: frame.pose,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame, GridError> {
    let path = path.as_ref();
    let grid = load_grid(path)?;
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    Frame::new(grid, sidecar.pose, sidecar.frame_id)
}
