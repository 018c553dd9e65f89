//! Per-frame pipeline, sequence runs, aggregation and on-disk outputs.
//!
//! A frame goes through inpaint, road mask closing, thinning, spur pruning,
//! graph extraction, local-goal selection and planning. The ground-truth grid
//! goes through the same steps from the same pose, and the two trajectories
//! are compared.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{load_frame, load_grid, save_frame, save_grid, Frame, GridError, SemanticGrid};
use crate::inpaint::{inpaint, InpaintError, InpaintMethod};
use crate::metrics::{
    aad, branch_accuracy, frames_ahead, frechet_distance, path_length_ratio, Aggregate, Difficulty,
    MetricsReport, DEFAULT_TURN_THRESHOLD_DEG,
};
use crate::occlusion::{
    synth_sequence, MapKind, MapSpec, OcclusionError, SequenceSpec, DEFAULT_DENSITY, DEFAULT_MAX_RANGE,
    DEFAULT_N_RAYS, DEFAULT_ROAD_WIDTH, SEQUENCE_FRAMES,
};
use crate::planner::{plan, select_local_goal_where, PlannerState, Trajectory, VehicleParams};
use crate::render::render_svg;
use crate::skeleton::{
    count_branches, extract_graph, prune_spurs, road_mask, thin_zhang, SkeletonError, SkeletonGraph,
    DEFAULT_ITERATIONS, DEFAULT_KERNEL, DEFAULT_SPUR_LENGTH,
};
use crate::{BitMask, Cell};

pub const DEFAULT_PLANNING_RANGE: f64 = 128.0;
pub const METRICS_CSV: &str = "metrics.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Occlusion(#[from] OcclusionError),
    #[error(transparent)]
    Inpaint(#[from] InpaintError),
    #[error(transparent)]
    Skeleton(#[from] SkeletonError),
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("frame {frame_id} is {w}x{h} but ground truth is {gw}x{gh}")]
    DimensionMismatch {
        frame_id: u64,
        w: usize,
        h: usize,
        gw: usize,
        gh: usize,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Settings shared by every frame of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub inpaint: InpaintMethod,
    pub closing_kernel: usize,
    pub closing_iterations: usize,
    pub spur_length: f64,
    pub vehicle: VehicleParams,
    pub turn_threshold_deg: f64,
    /// Junctions of the ground-truth graph within this distance of the pose
    /// make a frame HARD.
    pub planning_range: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            inpaint: InpaintMethod::Identity,
            closing_kernel: DEFAULT_KERNEL,
            closing_iterations: DEFAULT_ITERATIONS,
            spur_length: DEFAULT_SPUR_LENGTH,
            vehicle: VehicleParams::default(),
            turn_threshold_deg: DEFAULT_TURN_THRESHOLD_DEG,
            planning_range: DEFAULT_PLANNING_RANGE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSource {
    pub kind: MapKind,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub road_width: usize,
    pub obstacle_density: f64,
    pub n_rays: usize,
    pub max_range: f64,
    pub frames: usize,
}

impl Default for SynthSource {
    fn default() -> Self {
        Self {
            kind: MapKind::TJunction,
            seed: 0,
            width: crate::grid::DEFAULT_SIZE,
            height: crate::grid::DEFAULT_SIZE,
            road_width: DEFAULT_ROAD_WIDTH,
            obstacle_density: DEFAULT_DENSITY,
            n_rays: DEFAULT_N_RAYS,
            max_range: DEFAULT_MAX_RANGE,
            frames: SEQUENCE_FRAMES,
        }
    }
}

impl SynthSource {
    pub fn sequence_spec(&self) -> SequenceSpec {
        SequenceSpec {
            map: MapSpec {
                kind: self.kind,
                road_width: self.road_width,
                seed: self.seed,
                obstacle_density: self.obstacle_density,
            },
            width: self.width,
            height: self.height,
            n_rays: self.n_rays,
            max_range: self.max_range,
            frames: self.frames,
        }
    }

    pub fn sequence_id(&self) -> String {
        format!("{}-{}", kind_letter(self.kind), self.seed)
    }
}

fn kind_letter(k: MapKind) -> &'static str {
    match k {
        MapKind::Straight => "S",
        MapKind::LTurn => "L",
        MapKind::TJunction => "T",
        MapKind::XJunction => "X",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceSource {
    Manifest(PathBuf),
    Synth(SynthSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub source: SequenceSource,
    #[serde(flatten)]
    pub pipeline: PipelineConfig,
    /// Overrides the sequence's goal.
    #[serde(default)]
    pub goal: Option<Cell>,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub render: bool,
}

fn one() -> usize {
    1
}

impl RunConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let SequenceSource::Manifest(m) = &mut cfg.source {
            resolve(m);
        }
        if let InpaintMethod::External { path } = &mut cfg.pipeline.inpaint {
            resolve(path);
        }
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1".into());
        }
        if let SequenceSource::Manifest(m) = &self.source {
            if !m.is_file() {
                return bad(format!("manifest {} does not exist", m.display()));
            }
        }
        if let InpaintMethod::External { path } = &self.pipeline.inpaint {
            if !path.exists() {
                return bad(format!("external inpaint path {} does not exist", path.display()));
            }
        }
        self.pipeline
            .vehicle
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.pipeline.closing_kernel % 2 == 0 || self.pipeline.closing_iterations == 0 {
            return bad("closing kernel must be odd and iterations >= 1".into());
        }
        if !(self.pipeline.planning_range >= 0.0 && self.pipeline.turn_threshold_deg > 0.0) {
            return bad("planning_range must be >= 0 and turn_threshold_deg > 0".into());
        }
        Ok(())
    }
}

/// On-disk description of a sequence; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sequence_id: String,
    pub gt: PathBuf,
    pub frames: Vec<PathBuf>,
    pub goal: Cell,
    pub turn_frame: usize,
    /// Inclusive frame index range that is evaluated.
    pub window: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub id: String,
    pub gt: SemanticGrid,
    pub frames: Vec<Frame>,
    pub goal: Cell,
    pub turn_frame: usize,
    pub window: (usize, usize),
}

impl Sequence {
    pub fn synth(source: &SynthSource) -> Result<Self, HarnessError> {
        let s = synth_sequence(&source.sequence_spec())?;
        Ok(Self {
            id: source.sequence_id(),
            gt: s.gt,
            frames: s.frames,
            goal: s.goal,
            turn_frame: s.turn_frame,
            window: s.window,
        })
    }

    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let manifest_path = manifest_path.as_ref();
        let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", manifest_path.display())))?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let gt = load_grid(base.join(&m.gt))?;
        let frames = m
            .frames
            .iter()
            .map(|f| load_frame(base.join(f)))
            .collect::<Result<Vec<_>, _>>()?;
        let seq = Self {
            id: m.sequence_id,
            gt,
            frames,
            goal: m.goal,
            turn_frame: m.turn_frame,
            window: m.window,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.frames.is_empty() {
            return Err(HarnessError::EmptySequence);
        }
        let n = self.frames.len();
        let (a, b) = self.window;
        if a > b || b >= n || self.turn_frame < a || self.turn_frame > b {
            return Err(HarnessError::Config(format!(
                "window {:?} / turn_frame {} invalid for {n} frames",
                self.window, self.turn_frame
            )));
        }
        if self.goal.0 >= self.gt.width() || self.goal.1 >= self.gt.height() {
            return Err(HarnessError::Config(format!("goal {:?} outside the grid", self.goal)));
        }
        for f in &self.frames {
            check_dims(f, &self.gt)?;
        }
        Ok(())
    }

    /// Writes `gt.ogrd`, `frame_NNN.ogrd` (+ pose sidecars) and the manifest.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf, HarnessError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        save_grid(&self.gt, dir.join("gt.ogrd"))?;
        let mut names = Vec::with_capacity(self.frames.len());
        for f in &self.frames {
            let name = PathBuf::from(frame_file_name(f.frame_id));
            save_frame(f, dir.join(&name))?;
            names.push(name);
        }
        let manifest = Manifest {
            sequence_id: self.id.clone(),
            gt: "gt.ogrd".into(),
            frames: names,
            goal: self.goal,
            turn_frame: self.turn_frame,
            window: self.window,
        };
        let path = dir.join(MANIFEST_JSON);
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(io_err(&path))?;
        Ok(path)
    }
}

pub fn frame_file_name(frame_id: u64) -> String {
    format!("frame_{frame_id:03}.ogrd")
}

fn check_dims(frame: &Frame, gt: &SemanticGrid) -> Result<(), HarnessError> {
    if frame.grid.same_shape(gt) {
        Ok(())
    } else {
        Err(HarnessError::DimensionMismatch {
            frame_id: frame.frame_id,
            w: frame.grid.width(),
            h: frame.grid.height(),
            gw: gt.width(),
            gh: gt.height(),
        })
    }
}

/// Road mask and skeleton graph of one grid.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub mask: BitMask,
    pub graph: SkeletonGraph,
}

impl Prepared {
    pub fn new(grid: &SemanticGrid, cfg: &PipelineConfig) -> Result<Self, HarnessError> {
        let mask = road_mask(grid, cfg.closing_kernel, cfg.closing_iterations)?;
        let skeleton = prune_spurs(&thin_zhang(&mask), cfg.spur_length)?;
        let graph = extract_graph(&skeleton)?;
        Ok(Self { mask, graph })
    }

    /// Plans from `pose` towards the graph node nearest `goal` that lies in
    /// the pose's mask component. `None` if there is no such node or no path.
    pub fn plan_from(&self, start: PlannerState, goal: Cell, vehicle: &VehicleParams) -> (Option<Cell>, Option<Trajectory>) {
        let Some((sx, sy)) = start.cell_in(self.mask.width(), self.mask.height()) else {
            return (None, None);
        };
        if !self.mask.get(sx, sy) {
            return (None, None);
        }
        let component = self.mask.component_of((sx, sy));
        let Some(local) = select_local_goal_where(&self.graph, goal, |(x, y)| component.get(x, y)) else {
            return (None, None);
        };
        (Some(local), plan(&self.mask, start, local, vehicle).ok())
    }
}

#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub report: MetricsReport,
    pub trajectory: Option<Trajectory>,
    pub gt_trajectory: Option<Trajectory>,
    pub graph: SkeletonGraph,
    pub local_goal: Option<Cell>,
}

/// Runs the pipeline on `frame` and on `gt` from the same pose and compares.
pub fn run_frame(
    frame: &Frame,
    gt: &SemanticGrid,
    goal: Cell,
    cfg: &PipelineConfig,
) -> Result<FrameOutcome, HarnessError> {
    check_dims(frame, gt)?;
    let gt_prep = Prepared::new(gt, cfg)?;
    run_frame_prepared(frame, gt, &gt_prep, goal, cfg, "")
}

fn external_path(method: &InpaintMethod, frame_id: u64) -> InpaintMethod {
    match method {
        InpaintMethod::External { path } if path.is_dir() => InpaintMethod::External {
            path: path.join(frame_file_name(frame_id)),
        },
        m => m.clone(),
    }
}

/// As [`run_frame`] with the ground-truth side already prepared.
pub fn run_frame_prepared(
    frame: &Frame,
    gt: &SemanticGrid,
    gt_prep: &Prepared,
    goal: Cell,
    cfg: &PipelineConfig,
    sequence_id: &str,
) -> Result<FrameOutcome, HarnessError> {
    check_dims(frame, gt)?;
    let method = external_path(&cfg.inpaint, frame.frame_id);
    let filled = inpaint(&frame.grid, &method, Some(gt))?;
    let prep = Prepared::new(&filled, cfg)?;
    let start = PlannerState::new(frame.pose.px, frame.pose.py, frame.pose.theta);
    let (local_goal, trajectory) = prep.plan_from(start, goal, &cfg.vehicle);
    let (_, gt_trajectory) = gt_prep.plan_from(start, goal, &cfg.vehicle);

    let hard = gt_prep.graph.junctions().any(|j| {
        (j.x as f64 - frame.pose.px).hypot(j.y as f64 - frame.pose.py) <= cfg.planning_range
    });
    let n_im = count_branches(&prep.graph);
    let n_gt = count_branches(&gt_prep.graph);
    let mut report = MetricsReport {
        sequence_id: sequence_id.to_string(),
        frame_id: frame.frame_id,
        difficulty: if hard { Difficulty::Hard } else { Difficulty::Easy },
        plan_failed: trajectory.is_none() || gt_trajectory.is_none(),
        n_im,
        n_gt,
        frechet: None,
        aad: None,
        branch_accuracy: branch_accuracy(n_im, n_gt).ok(),
        path_length_ratio: None,
    };
    if let (Some(t), Some(g)) = (&trajectory, &gt_trajectory) {
        let (tp, gp) = (t.points(), g.points());
        report.frechet = frechet_distance(&tp, &gp).ok();
        report.aad = aad(&t.states, &g.states).ok();
        report.path_length_ratio = path_length_ratio(&tp, &gp).ok();
    }
    Ok(FrameOutcome {
        report,
        trajectory,
        gt_trajectory,
        graph: prep.graph,
        local_goal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSummary {
    pub sequence_id: String,
    pub frames_ahead: usize,
    pub overall: Aggregate,
    pub easy: Aggregate,
    pub hard: Aggregate,
}

#[derive(Debug, Clone)]
pub struct SequenceResult {
    pub summary: SequenceSummary,
    pub reports: Vec<MetricsReport>,
    pub outcomes: Vec<FrameOutcome>,
}

impl SequenceResult {
    pub fn failed(&self) -> usize {
        self.summary.overall.failed
    }
}

/// Evaluates the sequence's window with up to `parallelism` threads.
pub fn evaluate_sequence(
    seq: &Sequence,
    cfg: &PipelineConfig,
    parallelism: usize,
) -> Result<SequenceResult, HarnessError> {
    seq.validate()?;
    let gt_prep = Prepared::new(&seq.gt, cfg)?;
    let frames = &seq.frames[seq.window.0..=seq.window.1];
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| HarnessError::ThreadPool(e.to_string()))?;
    let outcomes = pool.install(|| {
        frames
            .par_iter()
            .map(|f| run_frame_prepared(f, &seq.gt, &gt_prep, seq.goal, cfg, &seq.id))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let trajectories: Vec<Option<Trajectory>> = outcomes.iter().map(|o| o.trajectory.clone()).collect();
    let ahead = frames_ahead(&trajectories, seq.turn_frame - seq.window.0, cfg.turn_threshold_deg)
        .expect("window validated");
    let reports: Vec<MetricsReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let summary = SequenceSummary {
        sequence_id: seq.id.clone(),
        frames_ahead: ahead,
        overall: Aggregate::from_reports(&reports),
        easy: Aggregate::from_reports(reports.iter().filter(|r| r.difficulty == Difficulty::Easy)),
        hard: Aggregate::from_reports(reports.iter().filter(|r| r.difficulty == Difficulty::Hard)),
    };
    Ok(SequenceResult {
        summary,
        reports,
        outcomes,
    })
}

/// Writes `metrics.csv`, `summary.json` and, if asked, per-frame SVGs.
pub fn write_outputs(
    seq: &Sequence,
    result: &SequenceResult,
    out_dir: &Path,
    render: bool,
) -> Result<(), HarnessError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let csv_path = out_dir.join(METRICS_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    for r in &result.reports {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&csv_path))?;
    let json_path = out_dir.join(SUMMARY_JSON);
    fs::write(&json_path, serde_json::to_string_pretty(&result.summary)? + "\n").map_err(io_err(&json_path))?;
    if render {
        let dir = out_dir.join("render");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let frames = &seq.frames[seq.window.0..=seq.window.1];
        for (f, o) in frames.iter().zip(&result.outcomes) {
            let p = dir.join(format!("frame_{:03}.svg", f.frame_id));
            render_svg(f, Some(&o.graph), o.trajectory.as_ref(), o.local_goal, &p).map_err(io_err(&p))?;
        }
    }
    Ok(())
}

/// Loads or synthesizes the configured sequence, evaluates it and writes
/// the outputs.
pub fn run_sequence(config: &RunConfig) -> Result<SequenceResult, HarnessError> {
    config.validate()?;
    let mut seq = match &config.source {
        SequenceSource::Manifest(p) => Sequence::load(p)?,
        SequenceSource::Synth(s) => Sequence::synth(s)?,
    };
    if let Some(g) = config.goal {
        seq.goal = g;
    }
    let result = evaluate_sequence(&seq, &config.pipeline, config.parallelism)?;
    write_outputs(&seq, &result, &config.output_dir, config.render)?;
    Ok(result)
}
