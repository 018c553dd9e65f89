//! Road mask closing, Zhang-Suen thinning and waypoint-graph extraction.
//!
//! The waypoint graph has one node per junction cluster (cells with three or
//! more skeleton neighbors, merged when 8-adjacent) and one per endpoint.
//! Edges are traced along the remaining two-neighbor cells, so every skeleton
//! cell lands in exactly one node cluster or one edge polyline.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmask::{BitMask, NEIGHBORS8};
use crate::grid::{ClassId, SemanticGrid};
use crate::Cell;

pub const DEFAULT_KERNEL: usize = 5;
pub const DEFAULT_ITERATIONS: usize = 2;
pub const DEFAULT_SPUR_LENGTH: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum SkeletonError {
    #[error("closing kernel must be odd and >= 3, got {0}")]
    BadKernel(usize),
    #[error("closing iterations must be >= 1")]
    ZeroIterations,
    #[error("grid has zero cells")]
    EmptyGrid,
    #[error("skeleton is not thin: 2x2 block at ({0}, {1})")]
    NonThin(usize, usize),
}

/// Morphological closing of the ROAD class mask with a square element.
pub fn road_mask(grid: &SemanticGrid, kernel: usize, iterations: usize) -> Result<BitMask, SkeletonError> {
    if kernel < 3 || kernel % 2 == 0 {
        return Err(SkeletonError::BadKernel(kernel));
    }
    if iterations == 0 {
        return Err(SkeletonError::ZeroIterations);
    }
    if grid.is_empty() {
        return Err(SkeletonError::EmptyGrid);
    }
    let mut mask = grid.class_mask(ClassId::Road);
    for _ in 0..iterations {
        mask = mask.dilate_square(kernel);
    }
    for _ in 0..iterations {
        mask = mask.erode_square(kernel);
    }
    Ok(mask)
}

// Ring of the 8 neighbors in Zhang-Suen order P2..P9 (N, NE, E, SE, S, SW, W, NW).
#[inline]
fn ring(mask: &BitMask, x: usize, y: usize) -> [bool; 8] {
    let mut p = [false; 8];
    for (k, (dx, dy)) in NEIGHBORS8.iter().enumerate() {
        p[k] = mask.get_i(x as i64 + dx, y as i64 + dy);
    }
    p
}

#[inline]
fn transitions(p: &[bool; 8]) -> usize {
    (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count()
}

/// Yokoi 8-connectivity number. A set pixel is simple (removable without
/// changing topology) iff this is 1.
#[inline]
fn connectivity8(p: &[bool; 8]) -> i32 {
    // Complemented values, 4-neighbors at even ring positions here (N, E, S, W).
    let c = |k: usize| i32::from(!p[k % 8]);
    [0usize, 2, 4, 6]
        .iter()
        .map(|&k| c(k) - c(k) * c(k + 1) * c(k + 2))
        .sum()
}

#[inline]
fn removable(mask: &BitMask, x: usize, y: usize) -> bool {
    let p = ring(mask, x, y);
    let b = p.iter().filter(|v| **v).count();
    b >= 2 && connectivity8(&p) == 1
}

/// Zhang-Suen thinning to a fixpoint.
///
/// Each subiteration marks candidates with the classic conditions on the
/// unmodified image. Marked pixels are then removed in raster order, skipping
/// any that stopped being simple after earlier removals in the same pass; this
/// keeps 2x2 squares and two-pixel diagonals from vanishing. A final pass strips
/// staircase pixels left by the parallel rule so that the result has no
/// redundant corners and no removable 2x2 blocks.
pub fn thin_zhang(mask: &BitMask) -> BitMask {
    let mut out = mask.clone();
    let mut marked: Vec<Cell> = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            marked.clear();
            for (x, y) in out.iter_set() {
                let p = ring(&out, x, y);
                let b = p.iter().filter(|v| **v).count();
                if !(2..=6).contains(&b) || transitions(&p) != 1 {
                    continue;
                }
                let (n, e, s, w) = (p[0], p[2], p[4], p[6]);
                let keep = if step == 0 {
                    (n && e && s) || (e && s && w)
                } else {
                    (n && e && w) || (n && s && w)
                };
                if !keep {
                    marked.push((x, y));
                }
            }
            for &(x, y) in &marked {
                if removable(&out, x, y) {
                    out.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    strip_redundant(&mut out);
    out
}

/// Removes simple, non-end pixels until none remain.
fn strip_redundant(mask: &mut BitMask) {
    loop {
        let mut changed = false;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) && removable(mask, x, y) {
                    mask.set(x, y, false);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Junction,
    Endpoint,
    /// Stands in for an isolated pixel or anchors a cycle with no junction.
    Anchor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub x: usize,
    pub y: usize,
    pub kind: NodeKind,
    #[serde(skip)]
    pub cells: Vec<Cell>,
}

impl Node {
    pub fn cell(&self) -> Cell {
        (self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    /// Interior cells only; the node cells at either end are not repeated.
    pub polyline: Vec<Cell>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl SkeletonGraph {
    pub fn degree(&self, id: usize) -> usize {
        self.edges
            .iter()
            .map(|e| usize::from(e.a == id) + usize::from(e.b == id))
            .sum()
    }

    pub fn junctions(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Junction)
    }

    pub fn endpoints(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Endpoint)
    }

    /// Cells covered by node clusters plus edge interiors.
    pub fn covered_cells(&self) -> usize {
        self.nodes.iter().map(|n| n.cells.len()).sum::<usize>()
            + self.edges.iter().map(|e| e.polyline.len()).sum::<usize>()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("graph serializes")
    }
}

fn step_len(a: Cell, b: Cell) -> f64 {
    if a.0 != b.0 && a.1 != b.1 {
        std::f64::consts::SQRT_2
    } else {
        1.0
    }
}

fn neighbors(mask: &BitMask, (x, y): Cell) -> impl Iterator<Item = Cell> + '_ {
    NEIGHBORS8.iter().filter_map(move |(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        mask.get_i(nx, ny).then_some((nx as usize, ny as usize))
    })
}

const NO_NODE: usize = usize::MAX;

/// Builds the waypoint graph of a thin skeleton.
pub fn extract_graph(skeleton: &BitMask) -> Result<SkeletonGraph, SkeletonError> {
    let (w, h) = (skeleton.width(), skeleton.height());
    for y in 0..h.saturating_sub(1) {
        for x in 0..w.saturating_sub(1) {
            if skeleton.get(x, y) && skeleton.get(x + 1, y) && skeleton.get(x, y + 1) && skeleton.get(x + 1, y + 1) {
                return Err(SkeletonError::NonThin(x, y));
            }
        }
    }
    let idx = |(x, y): Cell| y * w + x;
    let degree: Vec<usize> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if skeleton.get(x, y) {
                skeleton.neighbor_count(x, y)
            } else {
                0
            }
        })
        .collect();

    let mut node_of = vec![NO_NODE; w * h];
    let mut nodes: Vec<Node> = Vec::new();

    // Nodes in raster order of their first cell.
    for (x, y) in skeleton.iter_set() {
        let i = idx((x, y));
        if node_of[i] != NO_NODE {
            continue;
        }
        let d = degree[i];
        let id = nodes.len();
        if d >= 3 {
            let mut cells = vec![(x, y)];
            node_of[i] = id;
            let mut queue = VecDeque::from([(x, y)]);
            while let Some(c) = queue.pop_front() {
                for n in neighbors(skeleton, c) {
                    let j = idx(n);
                    if degree[j] >= 3 && node_of[j] == NO_NODE {
                        node_of[j] = id;
                        cells.push(n);
                        queue.push_back(n);
                    }
                }
            }
            cells.sort_by_key(|&(cx, cy)| (cy, cx));
            let n = cells.len() as f64;
            let mx = cells.iter().map(|c| c.0 as f64).sum::<f64>() / n;
            let my = cells.iter().map(|c| c.1 as f64).sum::<f64>() / n;
            let &(px, py) = cells
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 as f64 - mx).powi(2) + (a.1 as f64 - my).powi(2);
                    let db = (b.0 as f64 - mx).powi(2) + (b.1 as f64 - my).powi(2);
                    da.total_cmp(&db)
                })
                .expect("cluster is non-empty");
            nodes.push(Node {
                id,
                x: px,
                y: py,
                kind: NodeKind::Junction,
                cells,
            });
        } else if d <= 1 {
            node_of[i] = id;
            nodes.push(Node {
                id,
                x,
                y,
                kind: if d == 1 { NodeKind::Endpoint } else { NodeKind::Anchor },
                cells: vec![(x, y)],
            });
        }
    }

    let mut visited = vec![false; w * h];
    let mut edges = Vec::new();

    // Follows a chain of two-neighbor cells from `from` (a node cell) through
    // `first` until another node cell is reached.
    let trace = |from: Cell, first: Cell, visited: &mut Vec<bool>, node_of: &Vec<usize>| -> (Vec<Cell>, Cell) {
        let mut poly = Vec::new();
        let mut prev = from;
        let mut cur = first;
        loop {
            if node_of[idx(cur)] != NO_NODE {
                return (poly, cur);
            }
            visited[idx(cur)] = true;
            poly.push(cur);
            let next = neighbors(skeleton, cur)
                .find(|&n| n != prev && !(node_of[idx(n)] == NO_NODE && visited[idx(n)]))
                .or_else(|| neighbors(skeleton, cur).find(|&n| n != prev));
            match next {
                Some(n) => {
                    prev = cur;
                    cur = n;
                }
                // Only reachable on malformed input; end the chain here.
                None => return (poly, cur),
            }
        }
    };

    let path_length = |start: Cell, poly: &[Cell], end: Cell| -> f64 {
        let mut len = 0.0;
        let mut last = start;
        for &c in poly.iter().chain(std::iter::once(&end)) {
            if c != last {
                len += step_len(last, c);
            }
            last = c;
        }
        len
    };

    for node_idx in 0..nodes.len() {
        let cells = nodes[node_idx].cells.clone();
        let id = nodes[node_idx].id;
        for &c in &cells {
            for n in neighbors(skeleton, c).collect::<Vec<_>>() {
                let j = idx(n);
                let other = node_of[j];
                if other == NO_NODE {
                    if visited[j] {
                        continue;
                    }
                    let (poly, end) = trace(c, n, &mut visited, &node_of);
                    let end_node = node_of[idx(end)];
                    let b = if end_node == NO_NODE { id } else { end_node };
                    edges.push(Edge {
                        a: id,
                        b,
                        length: path_length(c, &poly, end),
                        polyline: poly,
                    });
                } else if other > id {
                    // Directly adjacent nodes; each cell pair once.
                    edges.push(Edge {
                        a: id,
                        b: other,
                        length: step_len(c, n),
                        polyline: Vec::new(),
                    });
                }
            }
        }
    }

    // Remaining cells lie on cycles without any node: anchor each at its first cell.
    for y in 0..h {
        for x in 0..w {
            let i = idx((x, y));
            if !skeleton.get(x, y) || visited[i] || node_of[i] != NO_NODE {
                continue;
            }
            let id = nodes.len();
            node_of[i] = id;
            nodes.push(Node {
                id,
                x,
                y,
                kind: NodeKind::Anchor,
                cells: vec![(x, y)],
            });
            if let Some(first) = neighbors(skeleton, (x, y)).find(|&n| !visited[idx(n)]) {
                let (poly, end) = trace((x, y), first, &mut visited, &node_of);
                edges.push(Edge {
                    a: id,
                    b: id,
                    length: path_length((x, y), &poly, end),
                    polyline: poly,
                });
            }
        }
    }

    Ok(SkeletonGraph { nodes, edges })
}

/// Highest junction degree; 1 for a graph with edges but no junction; 0 when edgeless.
pub fn count_branches(graph: &SkeletonGraph) -> usize {
    if graph.edges.is_empty() {
        return 0;
    }
    graph.junctions().map(|n| graph.degree(n.id)).max().unwrap_or(1)
}

/// Deletes short dangling branches (endpoint to junction), short free-standing
/// segments and isolated pixels, then re-strips redundant pixels. Repeats until
/// stable. The input must be thin.
pub fn prune_spurs(skeleton: &BitMask, min_length: f64) -> Result<BitMask, SkeletonError> {
    let mut out = skeleton.clone();
    if min_length <= 0.0 {
        return Ok(out);
    }
    loop {
        let graph = extract_graph(&out)?;
        let mut removed = false;
        for e in &graph.edges {
            let (ka, kb) = (graph.nodes[e.a].kind, graph.nodes[e.b].kind);
            use NodeKind::*;
            let dangling = match (ka, kb) {
                (Endpoint, Junction) | (Junction, Endpoint) => true,
                (Endpoint, Endpoint) => true,
                _ => false,
            };
            if !dangling || e.length >= min_length {
                continue;
            }
            for &c in &e.polyline {
                out.set(c.0, c.1, false);
            }
            for id in [e.a, e.b] {
                if graph.nodes[id].kind == Endpoint {
                    let (x, y) = graph.nodes[id].cell();
                    out.set(x, y, false);
                }
            }
            removed = true;
        }
        for n in &graph.nodes {
            if n.kind == NodeKind::Anchor && graph.degree(n.id) == 0 {
                out.set(n.x, n.y, false);
                removed = true;
            }
        }
        if !removed {
            return Ok(out);
        }
        strip_redundant(&mut out);
    }
}
