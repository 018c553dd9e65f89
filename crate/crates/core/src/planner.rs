//! Hybrid A* over `(px, py, theta)` on a road mask.
//!
//! States live in continuous cell coordinates (cell `i` covers
//! `[i - 0.5, i + 0.5)`), successors are forward constant-curvature arcs and
//! the closed set is keyed by `(round px, round py, theta bin)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bitmask::NEIGHBORS8;
use crate::grid::normalize_angle;
use crate::skeleton::SkeletonGraph;
use crate::{BitMask, Cell};

/// Largest ratio of octile to Euclidean length (at 22.5 degrees).
const OCTILE_OVER_EUCLID: f64 = 1.082_392_200_292_394;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
    #[error("start ({0:.2}, {1:.2}) is not on the mask")]
    StartOffMask(f64, f64),
    #[error("goal {0:?} is not on the mask")]
    GoalOffMask(Cell),
    #[error("no path to goal")]
    NoPath,
    #[error("expansion limit of {0} reached")]
    ExpansionLimit(usize),
    #[error("skeleton graph has no nodes")]
    EmptyGraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
}

impl PlannerState {
    pub fn new(px: f64, py: f64, theta: f64) -> Self {
        Self {
            px,
            py,
            theta: normalize_angle(theta),
        }
    }

    /// Cell under the state, if inside a `width x height` grid.
    pub fn cell_in(&self, width: usize, height: usize) -> Option<Cell> {
        cell_at(self.px, self.py, width, height)
    }

    pub fn distance_to(&self, c: Cell) -> f64 {
        (self.px - c.0 as f64).hypot(self.py - c.1 as f64)
    }
}

fn cell_at(px: f64, py: f64, width: usize, height: usize) -> Option<Cell> {
    let (x, y) = (px.round(), py.round());
    if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
        Some((x as usize, y as usize))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    /// Minimum turning radius in cells.
    pub r_min: f64,
    /// Arc length of one primitive in cells.
    pub step_length: f64,
    pub n_steer: usize,
    pub theta_bins: usize,
    /// Goal is reached within this Euclidean distance, any heading.
    pub goal_tol: f64,
    pub max_expansions: usize,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            r_min: 25.0,
            step_length: 5.0,
            n_steer: 5,
            theta_bins: 72,
            goal_tol: 3.0,
            max_expansions: 200_000,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidParams(m.to_string()));
        if !(self.r_min.is_finite() && self.r_min > 0.0) {
            return bad("r_min must be > 0");
        }
        if !(self.step_length.is_finite() && self.step_length > 0.0) {
            return bad("step_length must be > 0");
        }
        if self.n_steer < 3 || self.n_steer % 2 == 0 {
            return bad("n_steer must be odd and >= 3");
        }
        if self.theta_bins < 16 {
            return bad("theta_bins must be >= 16");
        }
        if !(self.goal_tol.is_finite() && self.goal_tol >= 0.0) {
            return bad("goal_tol must be >= 0");
        }
        if self.max_expansions == 0 {
            return bad("max_expansions must be >= 1");
        }
        Ok(())
    }

    /// Evenly spaced curvatures from `-1/r_min` to `+1/r_min`.
    pub fn curvatures(&self) -> Vec<f64> {
        let n = self.n_steer;
        (0..n)
            .map(|i| {
                let s = 2.0 * i as f64 / (n - 1) as f64 - 1.0;
                s / self.r_min
            })
            .collect()
    }

    pub fn max_heading_change(&self) -> f64 {
        self.step_length / self.r_min
    }

    fn theta_bin(&self, theta: f64) -> usize {
        let b = ((theta + PI) / (2.0 * PI) * self.theta_bins as f64).floor() as usize;
        b % self.theta_bins
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<PlannerState>,
    /// Curvature of the primitive leading into `states[i + 1]`.
    pub curvatures: Vec<f64>,
    pub step_length: f64,
    pub total_length: f64,
}

impl Trajectory {
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.states.iter().map(|s| (s.px, s.py)).collect()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Forward offset, leftward offset and heading change of an arc, in the
/// vehicle frame.
fn local_arc(kappa: f64, length: f64) -> (f64, f64, f64) {
    if kappa == 0.0 {
        return (length, 0.0, 0.0);
    }
    let d = kappa * length;
    let half = (0.5 * d).sin();
    (d.sin() / kappa, 2.0 * half * half / kappa, d)
}

fn apply_local(s: &PlannerState, (sin, cos): (f64, f64), (dx, dy, dtheta): (f64, f64, f64)) -> PlannerState {
    PlannerState::new(s.px + dx * cos - dy * sin, s.py + dx * sin + dy * cos, s.theta + dtheta)
}

/// Pose after driving `length` along an arc of curvature `kappa`.
pub fn arc_end(s: &PlannerState, kappa: f64, length: f64) -> PlannerState {
    apply_local(s, s.theta.sin_cos(), local_arc(kappa, length))
}

/// One forward successor per steering sample, ordered from hardest
/// negative to hardest positive curvature.
pub fn motion_primitives(s: &PlannerState, params: &VehicleParams) -> Vec<PlannerState> {
    params
        .curvatures()
        .into_iter()
        .map(|k| arc_end(s, k, params.step_length))
        .collect()
}

/// Shortest 8-connected path lengths to a goal cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl CostMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct MinItem {
    key: f64,
    tie: f64,
    seq: u64,
    index: usize,
}

impl Eq for MinItem {}

impl Ord for MinItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.tie.total_cmp(&self.tie))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for MinItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn holonomic_costmap(mask: &BitMask, goal: Cell) -> Result<CostMap, PlanError> {
    let (w, h) = (mask.width(), mask.height());
    if goal.0 >= w || goal.1 >= h || !mask.get(goal.0, goal.1) {
        return Err(PlanError::GoalOffMask(goal));
    }
    let mut values = vec![f64::INFINITY; w * h];
    let start = goal.1 * w + goal.0;
    values[start] = 0.0;
    let mut heap = BinaryHeap::from([MinItem {
        key: 0.0,
        tie: 0.0,
        seq: 0,
        index: start,
    }]);
    while let Some(MinItem { key, index, .. }) = heap.pop() {
        if key > values[index] {
            continue;
        }
        let (x, y) = ((index % w) as i64, (index / w) as i64);
        for (dx, dy) in NEIGHBORS8 {
            let (nx, ny) = (x + dx, y + dy);
            if !mask.get_i(nx, ny) {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            let d = key + if dx != 0 && dy != 0 { SQRT_2 } else { 1.0 };
            if d < values[j] {
                values[j] = d;
                heap.push(MinItem {
                    key: d,
                    tie: 0.0,
                    seq: 0,
                    index: j,
                });
            }
        }
    }
    Ok(CostMap {
        width: w,
        height: h,
        values,
    })
}

/// Node cell closest to `goal`; ties go to the lowest node id.
pub fn select_local_goal(graph: &SkeletonGraph, goal: Cell) -> Result<Cell, PlanError> {
    select_local_goal_where(graph, goal, |_| true).ok_or(PlanError::EmptyGraph)
}

/// As [`select_local_goal`], restricted to nodes accepted by `keep`.
pub fn select_local_goal_where(
    graph: &SkeletonGraph,
    goal: Cell,
    keep: impl Fn(Cell) -> bool,
) -> Option<Cell> {
    let d2 = |c: Cell| {
        let dx = c.0 as i64 - goal.0 as i64;
        let dy = c.1 as i64 - goal.1 as i64;
        dx * dx + dy * dy
    };
    let mut nodes: Vec<_> = graph.nodes.iter().filter(|n| keep(n.cell())).collect();
    nodes.sort_by_key(|n| n.id);
    nodes
        .into_iter()
        .min_by_key(|n| d2(n.cell()))
        .map(|n| n.cell())
}

struct Primitive {
    kappa: f64,
    end: (f64, f64, f64),
    /// Swept samples at spacing <= 1 cell, ending at `end`.
    samples: Vec<(f64, f64, f64)>,
}

fn primitives(params: &VehicleParams) -> Vec<Primitive> {
    let len = params.step_length;
    let n = len.ceil().max(1.0) as usize;
    params
        .curvatures()
        .into_iter()
        .map(|kappa| Primitive {
            kappa,
            end: local_arc(kappa, len),
            samples: (1..=n).map(|k| local_arc(kappa, len * k as f64 / n as f64)).collect(),
        })
        .collect()
}

struct Search<'a> {
    mask: &'a BitMask,
    costmap: CostMap,
    goal: Cell,
    params: &'a VehicleParams,
}

impl Search<'_> {
    /// Lower bound on the remaining arc length. Both terms are discounted by
    /// the goal tolerance; the grid distance is also divided by the worst
    /// octile/Euclidean ratio and loses one diagonal for cell rounding.
    fn heuristic(&self, s: &PlannerState) -> f64 {
        let Some((x, y)) = s.cell_in(self.mask.width(), self.mask.height()) else {
            return f64::INFINITY;
        };
        let c = self.costmap.get(x, y);
        if c.is_infinite() {
            return f64::INFINITY;
        }
        let tol = self.params.goal_tol;
        let euclid = s.distance_to(self.goal) - tol;
        let grid = c / OCTILE_OVER_EUCLID - tol - SQRT_2;
        euclid.max(grid).max(0.0)
    }

    fn swept_free(&self, s: &PlannerState, sc: (f64, f64), prim: &Primitive) -> bool {
        prim.samples.iter().all(|&local| {
            let p = apply_local(s, sc, local);
            matches!(p.cell_in(self.mask.width(), self.mask.height()), Some((x, y)) if self.mask.get(x, y))
        })
    }

    fn key(&self, s: &PlannerState) -> Option<usize> {
        let (x, y) = s.cell_in(self.mask.width(), self.mask.height())?;
        Some((y * self.mask.width() + x) * self.params.theta_bins + self.params.theta_bin(s.theta))
    }
}

struct SearchNode {
    state: PlannerState,
    parent: usize,
    kappa: f64,
    g: f64,
}

/// Heuristic value of `start` used by [`plan`]; a lower bound on the
/// returned `total_length`.
pub fn start_heuristic(
    mask: &BitMask,
    start: &PlannerState,
    goal: Cell,
    params: &VehicleParams,
) -> Result<f64, PlanError> {
    let costmap = holonomic_costmap(mask, goal)?;
    Ok(Search {
        mask,
        costmap,
        goal,
        params,
    }
    .heuristic(start))
}

pub fn plan(
    mask: &BitMask,
    start: PlannerState,
    goal: Cell,
    params: &VehicleParams,
) -> Result<Trajectory, PlanError> {
    params.validate()?;
    let start = PlannerState::new(start.px, start.py, start.theta);
    match start.cell_in(mask.width(), mask.height()) {
        Some((x, y)) if mask.get(x, y) => {}
        _ => return Err(PlanError::StartOffMask(start.px, start.py)),
    }
    let costmap = holonomic_costmap(mask, goal)?;
    let search = Search {
        mask,
        costmap,
        goal,
        params,
    };
    let h0 = search.heuristic(&start);
    if h0.is_infinite() {
        return Err(PlanError::NoPath);
    }

    let prims = primitives(params);
    let mut closed = vec![false; mask.width() * mask.height() * params.theta_bins];
    let mut nodes = vec![SearchNode {
        state: start,
        parent: usize::MAX,
        kappa: 0.0,
        g: 0.0,
    }];
    let mut open = BinaryHeap::from([MinItem {
        key: h0,
        tie: h0,
        seq: 0,
        index: 0,
    }]);
    let mut seq = 1u64;
    let mut expansions = 0usize;

    while let Some(item) = open.pop() {
        let state = nodes[item.index].state;
        if state.distance_to(goal) <= params.goal_tol {
            return Ok(trace(&nodes, item.index, params.step_length));
        }
        let key = search.key(&state).expect("open states are on the grid");
        if closed[key] {
            continue;
        }
        closed[key] = true;
        expansions += 1;
        if expansions > params.max_expansions {
            return Err(PlanError::ExpansionLimit(params.max_expansions));
        }
        let g = nodes[item.index].g + params.step_length;
        let sc = state.theta.sin_cos();
        for prim in &prims {
            let next = apply_local(&state, sc, prim.end);
            let Some(k) = search.key(&next) else { continue };
            if closed[k] || !search.swept_free(&state, sc, prim) {
                continue;
            }
            let h = search.heuristic(&next);
            if h.is_infinite() {
                continue;
            }
            nodes.push(SearchNode {
                state: next,
                parent: item.index,
                kappa: prim.kappa,
                g,
            });
            open.push(MinItem {
                key: g + h,
                tie: h,
                seq,
                index: nodes.len() - 1,
            });
            seq += 1;
        }
    }
    Err(PlanError::NoPath)
}

fn trace(nodes: &[SearchNode], mut i: usize, step_length: f64) -> Trajectory {
    let mut states = Vec::new();
    let mut curvatures = Vec::new();
    loop {
        states.push(nodes[i].state);
        if nodes[i].parent == usize::MAX {
            break;
        }
        curvatures.push(nodes[i].kappa);
        i = nodes[i].parent;
    }
    states.reverse();
    curvatures.reverse();
    Trajectory {
        total_length: curvatures.len() as f64 * step_length,
        states,
        curvatures,
        step_length,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::{Node, NodeKind};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn corridor(w: usize, h: usize, y0: usize, y1: usize) -> BitMask {
        let mut m = BitMask::new(w, h);
        for y in y0..=y1 {
            for x in 0..w {
                m.set(x, y, true);
            }
        }
        m
    }

    /// Plain 8-connected Bellman-Ford relaxation to a fixpoint.
    fn relax_oracle(mask: &BitMask, goal: Cell) -> Vec<f64> {
        let (w, h) = (mask.width(), mask.height());
        let mut d = vec![f64::INFINITY; w * h];
        d[goal.1 * w + goal.0] = 0.0;
        let mut changed = true;
        while changed {
            changed = false;
            for (x, y) in mask.iter_set() {
                for (dx, dy) in NEIGHBORS8 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if mask.get_i(nx, ny) {
                        let step = if dx != 0 && dy != 0 { SQRT_2 } else { 1.0 };
                        let cand = d[ny as usize * w + nx as usize] + step;
                        if cand < d[y * w + x] {
                            d[y * w + x] = cand;
                            changed = true;
                        }
                    }
                }
            }
        }
        d
    }

    #[test]
    fn straight_and_arc_primitives() {
        let s = PlannerState::new(0.0, 0.0, 0.0);
        let p = VehicleParams {
            step_length: 3.0,
            n_steer: 3,
            r_min: 10.0,
            ..VehicleParams::default()
        };
        let succ = motion_primitives(&s, &p);
        assert_eq!(succ.len(), 3);
        assert_eq!(succ[1], PlannerState::new(3.0, 0.0, 0.0));
        let left = succ[2];
        assert_abs_diff_eq!(left.theta, 0.3, epsilon = 1e-15);
        // Center of the turning circle is (0, 10).
        assert_abs_diff_eq!(left.px.hypot(left.py - 10.0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(succ[0].theta, -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(succ[0].px.hypot(succ[0].py + 10.0), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn params_validation() {
        assert!(VehicleParams::default().validate().is_ok());
        for bad in [
            VehicleParams { r_min: 0.0, ..Default::default() },
            VehicleParams { n_steer: 4, ..Default::default() },
            VehicleParams { n_steer: 1, ..Default::default() },
            VehicleParams { theta_bins: 8, ..Default::default() },
            VehicleParams { step_length: -1.0, ..Default::default() },
        ] {
            assert!(matches!(bad.validate(), Err(PlanError::InvalidParams(_))));
        }
    }

    #[test]
    fn costmap_examples() {
        let m = corridor(21, 3, 1, 1);
        let c = holonomic_costmap(&m, (0, 1)).unwrap();
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(20, 1), 20.0);
        assert!(c.get(5, 0).is_infinite());
        let mut split = m.clone();
        split.set(10, 1, false);
        assert!(holonomic_costmap(&split, (0, 1)).unwrap().get(20, 1).is_infinite());
        assert_eq!(holonomic_costmap(&m, (0, 0)), Err(PlanError::GoalOffMask((0, 0))));
    }

    proptest! {
        #[test]
        fn costmap_matches_relaxation(
            w in 1usize..12, h in 1usize..12,
            bits in proptest::collection::vec(prop::bool::weighted(0.7), 144),
            gx in 0usize..12, gy in 0usize..12,
        ) {
            let mut m = BitMask::from_bits(w, h, bits[..w * h].to_vec());
            let goal = (gx % w, gy % h);
            m.set(goal.0, goal.1, true);
            let c = holonomic_costmap(&m, goal).unwrap();
            let oracle = relax_oracle(&m, goal);
            for (a, b) in c.values().iter().zip(&oracle) {
                prop_assert!(a == b || (a - b).abs() < 1e-9, "{} vs {}", a, b);
            }
        }
    }

    fn node(id: usize, x: usize, y: usize) -> Node {
        Node {
            id,
            x,
            y,
            kind: NodeKind::Endpoint,
            cells: vec![(x, y)],
        }
    }

    #[test]
    fn local_goal_selection() {
        let g = SkeletonGraph {
            nodes: vec![node(0, 10, 0), node(1, 5, 0), node(2, 0, 5)],
            edges: vec![],
        };
        assert_eq!(select_local_goal(&g, (5, 0)).unwrap(), (5, 0));
        assert_eq!(select_local_goal(&g, (0, 0)).unwrap(), (5, 0));
        let tied = SkeletonGraph {
            nodes: vec![node(3, 0, 5), node(1, 5, 0)],
            edges: vec![],
        };
        assert_eq!(select_local_goal(&tied, (0, 0)).unwrap(), (5, 0));
        assert_eq!(
            select_local_goal(&SkeletonGraph::default(), (0, 0)),
            Err(PlanError::EmptyGraph)
        );
        assert_eq!(select_local_goal_where(&g, (0, 0), |c| c.0 == 10), Some((10, 0)));
    }

    #[test]
    fn trivial_and_straight_plans() {
        let m = corridor(140, 21, 5, 15);
        let p = VehicleParams::default();
        let t = plan(&m, PlannerState::new(10.0, 10.0, 0.0), (10, 10), &p).unwrap();
        assert_eq!(t.states.len(), 1);
        assert_eq!(t.total_length, 0.0);

        let t = plan(&m, PlannerState::new(10.0, 10.0, 0.0), (110, 10), &p).unwrap();
        assert!((t.total_length - 100.0).abs() <= 5.0, "{}", t.total_length);
        check_trajectory(&m, &t, &p);
    }

    #[test]
    fn blocked_corridor_has_no_path() {
        let mut m = corridor(140, 21, 5, 15);
        for y in 5..=15 {
            m.set(60, y, false);
        }
        let err = plan(&m, PlannerState::new(10.0, 10.0, 0.0), (110, 10), &VehicleParams::default());
        assert_eq!(err, Err(PlanError::NoPath));
        let err = plan(&m, PlannerState::new(10.0, 0.0, 0.0), (110, 10), &VehicleParams::default());
        assert!(matches!(err, Err(PlanError::StartOffMask(..))));
    }

    fn check_trajectory(m: &BitMask, t: &Trajectory, p: &VehicleParams) {
        assert_eq!(t.curvatures.len() + 1, t.states.len());
        assert_abs_diff_eq!(t.total_length, (t.states.len() - 1) as f64 * p.step_length, epsilon = 1e-9);
        for (w, k) in t.states.windows(2).zip(&t.curvatures) {
            assert!(k.abs() <= 1.0 / p.r_min);
            let dtheta = normalize_angle(w[1].theta - w[0].theta).abs();
            assert!(dtheta <= p.max_heading_change() + 1e-12);
            let expect = arc_end(&w[0], *k, p.step_length);
            assert_abs_diff_eq!(expect.px, w[1].px, epsilon = 1e-9);
            assert_abs_diff_eq!(expect.py, w[1].py, epsilon = 1e-9);
        }
        for s in &t.states {
            let (x, y) = s.cell_in(m.width(), m.height()).unwrap();
            assert!(m.get(x, y));
        }
    }

    #[test]
    fn turn_through_l_corridor() {
        // Vertical stem then a horizontal arm to the east.
        let mut m = BitMask::new(120, 120);
        for y in 20..120 {
            for x in 40..62 {
                m.set(x, y, true);
            }
        }
        for y in 20..42 {
            for x in 40..120 {
                m.set(x, y, true);
            }
        }
        let p = VehicleParams::default();
        let start = PlannerState::new(51.0, 110.0, -PI / 2.0);
        let t = plan(&m, start, (110, 31), &p).unwrap();
        check_trajectory(&m, &t, &p);
        assert!(t.states.last().unwrap().distance_to((110, 31)) <= p.goal_tol);
        assert!(t.total_length >= start_heuristic(&m, &start, (110, 31), &p).unwrap());
        // Deterministic.
        assert_eq!(plan(&m, start, (110, 31), &p).unwrap(), t);
        // Opening the corner never lengthens the plan here.
        let mut open = m.clone();
        for y in 0..120 {
            for x in 40..120 {
                open.set(x, y, true);
            }
        }
        let t2 = plan(&open, start, (110, 31), &p).unwrap();
        assert!(t2.total_length <= t.total_length);
    }
}
