//! Backends that fill `UNKNOWN` cells of an occluded grid.
//!
//! Every backend leaves observed (non-`UNKNOWN`) cells untouched.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{load_grid, ClassId, GridError, SemanticGrid};

pub const DEFAULT_LEAK_RADIUS: usize = 40;
pub const DEFAULT_MORPH_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum InpaintMethod {
    Identity,
    /// Majority-vote road growth within a square window, to fixpoint.
    Morphological { radius: usize },
    /// Copies ground truth into unknown cells within `leak_radius` (Chebyshev)
    /// of an observed cell.
    Oracle { leak_radius: usize },
    /// Copies unknown cells from an inpainted grid file produced elsewhere.
    External { path: PathBuf },
}

#[derive(Debug, Error)]
pub enum InpaintError {
    #[error("oracle inpainting needs a ground-truth grid")]
    MissingGroundTruth,
    #[error("radius must be >= 1")]
    BadRadius,
    #[error("dimension mismatch: input {0}x{1}, other {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("external map: {0}")]
    External(#[from] GridError),
}

fn check_shape(a: &SemanticGrid, b: &SemanticGrid) -> Result<(), InpaintError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(InpaintError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()))
    }
}

pub fn inpaint(
    grid: &SemanticGrid,
    method: &InpaintMethod,
    gt: Option<&SemanticGrid>,
) -> Result<SemanticGrid, InpaintError> {
    match method {
        InpaintMethod::Identity => Ok(grid.clone()),
        InpaintMethod::Morphological { radius } => {
            if *radius == 0 {
                return Err(InpaintError::BadRadius);
            }
            Ok(morphological(grid, *radius))
        }
        InpaintMethod::Oracle { leak_radius } => {
            if *leak_radius == 0 {
                return Err(InpaintError::BadRadius);
            }
            let gt = gt.ok_or(InpaintError::MissingGroundTruth)?;
            check_shape(grid, gt)?;
            Ok(oracle(grid, gt, *leak_radius))
        }
        InpaintMethod::External { path } => {
            let ext = load_grid(path)?;
            check_shape(grid, &ext)?;
            Ok(fill_from(grid, &ext, |_| true))
        }
    }
}

fn fill_from(grid: &SemanticGrid, source: &SemanticGrid, allow: impl Fn(usize) -> bool) -> SemanticGrid {
    let cells = grid
        .cells()
        .iter()
        .zip(source.cells())
        .enumerate()
        .map(|(i, (&c, &s))| if c == ClassId::Unknown && allow(i) { s } else { c })
        .collect();
    grid.with_cells(cells)
}

fn oracle(grid: &SemanticGrid, gt: &SemanticGrid, leak_radius: usize) -> SemanticGrid {
    let known = grid.class_mask(ClassId::Unknown);
    let known = crate::BitMask::from_bits(
        known.width(),
        known.height(),
        known.bits().iter().map(|u| !u).collect(),
    );
    let r = leak_radius.min(grid.width().max(grid.height()));
    let reach = known.dilate_square(2 * r + 1);
    fill_from(grid, gt, |i| reach.bits()[i])
}

/// Summed-area table with a zero top row and left column.
fn integral(width: usize, height: usize, f: impl Fn(usize) -> bool) -> Vec<u32> {
    let stride = width + 1;
    let mut sat = vec![0u32; stride * (height + 1)];
    for y in 0..height {
        let mut row = 0u32;
        for x in 0..width {
            row += u32::from(f(y * width + x));
            sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row;
        }
    }
    sat
}

fn window_sum(sat: &[u32], width: usize, height: usize, x: usize, y: usize, r: usize) -> u32 {
    let stride = width + 1;
    let (x0, y0) = (x.saturating_sub(r), y.saturating_sub(r));
    let (x1, y1) = ((x + r + 1).min(width), (y + r + 1).min(height));
    sat[y1 * stride + x1] + sat[y0 * stride + x0] - sat[y0 * stride + x1] - sat[y1 * stride + x0]
}

// Synchronous sweeps: an unknown cell becomes ROAD when ROAD cells strictly
// outnumber the other known cells in its window. Ties do not fill.
fn morphological(grid: &SemanticGrid, radius: usize) -> SemanticGrid {
    let (w, h) = (grid.width(), grid.height());
    let mut cells = grid.cells().to_vec();
    loop {
        let road = integral(w, h, |i| cells[i] == ClassId::Road);
        let known = integral(w, h, |i| cells[i] != ClassId::Unknown);
        let mut fill = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if cells[i] != ClassId::Unknown {
                    continue;
                }
                let r = window_sum(&road, w, h, x, y, radius);
                let k = window_sum(&known, w, h, x, y, radius);
                if r > k - r {
                    fill.push(i);
                }
            }
        }
        if fill.is_empty() {
            return grid.with_cells(cells);
        }
        for i in fill {
            cells[i] = ClassId::Road;
        }
    }
}
