//! Trajectory and skeleton comparison metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::normalize_angle;
use crate::planner::{PlannerState, Trajectory};

pub const DEFAULT_TURN_THRESHOLD_DEG: f64 = 30.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("empty polyline or trajectory")]
    Empty,
    #[error("ground-truth branch count is zero")]
    ZeroBranches,
    #[error("ground-truth path has zero length")]
    ZeroLength,
    #[error("turn frame {turn_frame} outside sequence of {frames}")]
    TurnFrameOutOfRange { turn_frame: usize, frames: usize },
}

pub type Point = (f64, f64);

fn dist(a: Point, b: Point) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Discrete Frechet distance over index couplings.
pub fn frechet_distance(p: &[Point], q: &[Point]) -> Result<f64, MetricsError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricsError::Empty);
    }
    let m = q.len();
    let mut prev = vec![0.0f64; m];
    let mut row = vec![0.0f64; m];
    for (i, &a) in p.iter().enumerate() {
        for (j, &b) in q.iter().enumerate() {
            let d = dist(a, b);
            row[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => row[j - 1].max(d),
                (_, 0) => prev[0].max(d),
                _ => prev[j].min(prev[j - 1]).min(row[j - 1]).max(d),
            };
        }
        std::mem::swap(&mut prev, &mut row);
    }
    Ok(prev[m - 1])
}

/// Absolute heading difference wrapped into `[0, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Mean heading difference in degrees between each node of `traj_in` and
/// its Euclidean-nearest node of `traj_gt` (first one on ties).
pub fn aad(traj_in: &[PlannerState], traj_gt: &[PlannerState]) -> Result<f64, MetricsError> {
    if traj_in.is_empty() || traj_gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total: f64 = traj_in
        .iter()
        .map(|s| {
            let nearest = traj_gt
                .iter()
                .min_by(|a, b| {
                    let da = (a.px - s.px).hypot(a.py - s.py);
                    let db = (b.px - s.px).hypot(b.py - s.py);
                    da.total_cmp(&db)
                })
                .expect("non-empty");
            angle_diff(s.theta, nearest.theta)
        })
        .sum();
    Ok((total / traj_in.len() as f64).to_degrees())
}

/// `n_im / n_gt * 100`, uncapped.
pub fn branch_accuracy(n_im: usize, n_gt: usize) -> Result<f64, MetricsError> {
    if n_gt == 0 {
        return Err(MetricsError::ZeroBranches);
    }
    Ok(100.0 * (n_im as f64 / n_gt as f64))
}

pub fn polyline_length(points: &[Point]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// `100 * L / L_gt` with `L` the sum of consecutive node distances.
pub fn path_length_ratio(traj: &[Point], traj_gt: &[Point]) -> Result<f64, MetricsError> {
    let l_gt = polyline_length(traj_gt);
    if l_gt == 0.0 {
        return Err(MetricsError::ZeroLength);
    }
    Ok(100.0 * (polyline_length(traj) / l_gt))
}

/// Largest absolute running sum of signed heading changes along the
/// trajectory, in radians.
pub fn max_cumulative_turn(states: &[PlannerState]) -> f64 {
    let mut sum = 0.0f64;
    let mut best = 0.0f64;
    for w in states.windows(2) {
        sum += normalize_angle(w[1].theta - w[0].theta);
        best = best.max(sum.abs());
    }
    best
}

/// Frames between the first frame whose plan turns by at least
/// `turn_threshold_deg` and `turn_frame`. Failed plans (`None`) never qualify.
pub fn frames_ahead(
    sequence: &[Option<Trajectory>],
    turn_frame: usize,
    turn_threshold_deg: f64,
) -> Result<usize, MetricsError> {
    if sequence.is_empty() {
        return Err(MetricsError::Empty);
    }
    if turn_frame >= sequence.len() {
        return Err(MetricsError::TurnFrameOutOfRange {
            turn_frame,
            frames: sequence.len(),
        });
    }
    let threshold = turn_threshold_deg.to_radians();
    let first = sequence.iter().position(|t| {
        t.as_ref()
            .is_some_and(|t| max_cumulative_turn(&t.states) >= threshold)
    });
    Ok(first.map_or(0, |f| turn_frame.saturating_sub(f)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

/// Per-frame metrics. Trajectory metrics are `None` when either plan failed
/// or the metric is undefined for the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sequence_id: String,
    pub frame_id: u64,
    pub difficulty: Difficulty,
    pub plan_failed: bool,
    pub n_im: usize,
    pub n_gt: usize,
    pub frechet: Option<f64>,
    pub aad: Option<f64>,
    pub branch_accuracy: Option<f64>,
    pub path_length_ratio: Option<f64>,
}

/// Means over the frames where each metric is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub frames: usize,
    pub failed: usize,
    pub frechet: Option<f64>,
    pub aad: Option<f64>,
    pub branch_accuracy: Option<f64>,
    pub path_length_ratio: Option<f64>,
}

impl Aggregate {
    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Self {
        let reports: Vec<_> = reports.into_iter().collect();
        let mean = |f: fn(&MetricsReport) -> Option<f64>| {
            let vals: Vec<f64> = reports.iter().filter_map(|r| f(r)).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        Self {
            frames: reports.len(),
            failed: reports.iter().filter(|r| r.plan_failed).count(),
            frechet: mean(|r| r.frechet),
            aad: mean(|r| r.aad),
            branch_accuracy: mean(|r| r.branch_accuracy),
            path_length_ratio: mean(|r| r.path_length_ratio),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn states(thetas_deg: &[f64]) -> Vec<PlannerState> {
        thetas_deg
            .iter()
            .enumerate()
            .map(|(i, t)| PlannerState::new(i as f64 * 5.0, 0.0, t.to_radians()))
            .collect()
    }

    /// Exhaustive recursion over all monotone couplings.
    fn frechet_oracle(p: &[Point], q: &[Point], i: usize, j: usize) -> f64 {
        let d = dist(p[i], q[j]);
        if i == 0 && j == 0 {
            return d;
        }
        let mut best = f64::INFINITY;
        if i > 0 {
            best = best.min(frechet_oracle(p, q, i - 1, j));
        }
        if j > 0 {
            best = best.min(frechet_oracle(p, q, i, j - 1));
        }
        if i > 0 && j > 0 {
            best = best.min(frechet_oracle(p, q, i - 1, j - 1));
        }
        best.max(d)
    }

    #[test]
    fn frechet_examples() {
        let p = [(0.0, 0.0), (4.0, 0.0)];
        assert_eq!(frechet_distance(&p, &p).unwrap(), 0.0);
        assert_eq!(frechet_distance(&[(0.0, 0.0)], &[(3.0, 4.0)]).unwrap(), 5.0);
        assert_eq!(frechet_distance(&p, &[(0.0, 3.0), (4.0, 3.0)]).unwrap(), 3.0);
        assert_eq!(frechet_distance(&[], &p), Err(MetricsError::Empty));
    }

    fn polyline() -> impl Strategy<Value = Vec<Point>> {
        proptest::collection::vec((-20i32..20, -20i32..20).prop_map(|(x, y)| (x as f64, y as f64)), 1..7)
    }

    proptest! {
        #[test]
        fn frechet_matches_oracle_and_bounds(p in polyline(), q in polyline()) {
            let d = frechet_distance(&p, &q).unwrap();
            prop_assert_eq!(d, frechet_oracle(&p, &q, p.len() - 1, q.len() - 1));
            prop_assert_eq!(d, frechet_distance(&q, &p).unwrap());
            prop_assert!(d >= dist(p[0], q[0]));
            prop_assert!(d >= dist(p[p.len() - 1], q[q.len() - 1]));
            // Zero exactly when the sequences agree up to repeated points.
            let dedup = |v: &[Point]| { let mut v = v.to_vec(); v.dedup(); v };
            prop_assert_eq!(d == 0.0, dedup(&p) == dedup(&q));
        }

        #[test]
        fn aad_range_and_translation(a in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -3.14f64..3.14), 1..8),
                                     b in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -3.14f64..3.14), 1..8),
                                     dx in -100.0f64..100.0, dy in -100.0f64..100.0) {
            let mk = |v: &[(f64, f64, f64)], ox: f64, oy: f64| -> Vec<PlannerState> {
                v.iter().map(|&(x, y, t)| PlannerState::new(x + ox, y + oy, t)).collect()
            };
            let v = aad(&mk(&a, 0.0, 0.0), &mk(&b, 0.0, 0.0)).unwrap();
            prop_assert!((0.0..=180.0).contains(&v));
            let moved = aad(&mk(&a, dx, dy), &mk(&b, dx, dy)).unwrap();
            prop_assert!((v - moved).abs() < 1e-6);
        }

        #[test]
        fn path_ratio_rigid_invariance(a in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..8),
                                       b in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..8),
                                       phi in -3.14f64..3.14, dx in -100.0f64..100.0) {
            prop_assume!(polyline_length(&b) > 1e-3);
            let rot = |v: &[Point]| -> Vec<Point> {
                v.iter().map(|&(x, y)| (x * phi.cos() - y * phi.sin() + dx, x * phi.sin() + y * phi.cos())).collect()
            };
            let r0 = path_length_ratio(&a, &b).unwrap();
            let r1 = path_length_ratio(&rot(&a), &rot(&b)).unwrap();
            prop_assert!((r0 - r1).abs() <= 1e-9 * r0.max(1.0));
        }
    }

    #[test]
    fn aad_examples() {
        let a = states(&[0.0, 90.0]);
        assert_eq!(aad(&a, &a).unwrap(), 0.0);
        let gt = states(&[0.0, 0.0]);
        assert_abs_diff_eq!(aad(&states(&[10.0, 20.0]), &gt).unwrap(), 15.0, epsilon = 1e-12);
        let wrap = aad(&states(&[179.0]), &states(&[-179.0])).unwrap();
        assert_abs_diff_eq!(wrap, 2.0, epsilon = 1e-9);
        assert_eq!(aad(&[], &gt), Err(MetricsError::Empty));
        // Nearest node, not same index.
        let far = vec![PlannerState::new(100.0, 0.0, 1.0), PlannerState::new(0.0, 0.0, 0.0)];
        assert_eq!(aad(&[PlannerState::new(0.0, 0.0, 0.0)], &far).unwrap(), 0.0);
    }

    #[test]
    fn branch_and_length_examples() {
        assert_eq!(branch_accuracy(4, 4).unwrap(), 100.0);
        assert_eq!(branch_accuracy(3, 4).unwrap(), 75.0);
        assert_eq!(branch_accuracy(5, 4).unwrap(), 125.0);
        assert_eq!(branch_accuracy(1, 0), Err(MetricsError::ZeroBranches));
        let gt = [(0.0, 0.0), (0.0, 10.0)];
        assert_eq!(path_length_ratio(&gt, &gt).unwrap(), 100.0);
        assert_eq!(path_length_ratio(&[(0.0, 0.0), (0.0, 5.0)], &gt).unwrap(), 50.0);
        assert_eq!(path_length_ratio(&[(0.0, 0.0), (3.0, 4.0)], &gt).unwrap(), 50.0);
        assert_eq!(path_length_ratio(&gt, &[(1.0, 1.0)]), Err(MetricsError::ZeroLength));
    }

    fn traj(thetas_deg: &[f64]) -> Option<Trajectory> {
        let s = states(thetas_deg);
        Some(Trajectory {
            curvatures: vec![0.0; s.len() - 1],
            total_length: 5.0 * (s.len() - 1) as f64,
            states: s,
            step_length: 5.0,
        })
    }

    #[test]
    fn frames_ahead_examples() {
        let straight = traj(&[0.0, 0.0, 0.0]);
        let turning = traj(&[0.0, 12.0, 24.0, 36.0]);
        let wiggle = traj(&[0.0, 20.0, 0.0, 20.0]);
        let mut seq = vec![straight.clone(); 50];
        assert_eq!(frames_ahead(&seq, 40, 30.0).unwrap(), 0);
        seq[7] = wiggle;
        seq[9] = None;
        assert_eq!(frames_ahead(&seq, 40, 30.0).unwrap(), 0);
        seq[12] = turning.clone();
        seq[20] = turning.clone();
        assert_eq!(frames_ahead(&seq, 40, 30.0).unwrap(), 28);
        assert_eq!(frames_ahead(&seq, 12, 30.0).unwrap(), 0);
        assert_eq!(frames_ahead(&seq, 5, 30.0).unwrap(), 0);
        assert_eq!(frames_ahead(&[], 0, 30.0), Err(MetricsError::Empty));
        assert!(matches!(frames_ahead(&seq, 50, 30.0), Err(MetricsError::TurnFrameOutOfRange { .. })));
        // Right turns count too.
        let right = traj(&[0.0, -20.0, -40.0]);
        let mut seq = vec![straight; 10];
        seq[3] = right;
        assert_eq!(frames_ahead(&seq, 9, 30.0).unwrap(), 6);
    }

    #[test]
    fn aggregate_means_skip_undefined() {
        let mk = |f: Option<f64>, d| MetricsReport {
            sequence_id: "s".into(),
            frame_id: 0,
            difficulty: d,
            plan_failed: f.is_none(),
            n_im: 1,
            n_gt: 1,
            frechet: f,
            aad: f,
            branch_accuracy: Some(100.0),
            path_length_ratio: f,
        };
        let rs = [mk(Some(2.0), Difficulty::Easy), mk(None, Difficulty::Hard), mk(Some(4.0), Difficulty::Hard)];
        let a = Aggregate::from_reports(&rs);
        assert_eq!((a.frames, a.failed), (3, 1));
        assert_eq!(a.frechet, Some(3.0));
        assert_eq!(a.branch_accuracy, Some(100.0));
        assert_eq!(Aggregate::from_reports(&rs[1..2]).frechet, None);
    }
}
