use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use occluplan::grid::load_frame;
use occluplan::harness::{
    run_sequence, HarnessError, PipelineConfig, Prepared, RunConfig, Sequence, SequenceSummary, SynthSource,
    SUMMARY_JSON,
};
use occluplan::occlusion::MapKind;
use occluplan::planner::PlannerState;
use occluplan::render::render_svg;

const EXIT_CONFIG: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const THREADS_ENV: &str = "OCCLUPLAN_THREADS";

#[derive(Parser)]
#[command(name = "occluplan", version, about = "Occlusion-aware road planning on semantic grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a ground-truth map and an occluded drive towards a turn.
    Synth {
        /// S, L, T or X.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        max_range: Option<f64>,
    },
    /// Run the pipeline over a sequence described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a frame's class map, skeleton and (with --goal) its plan.
    Render {
        #[arg(long)]
        frame: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Global goal as X,Y.
        #[arg(long, value_parser = parse_cell)]
        goal: Option<(usize, usize)>,
    },
    /// Paired report of two runs (output directories or summary files).
    Compare {
        #[arg(long = "run", num_args = 1, required = true)]
        runs: Vec<PathBuf>,
    },
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    Ok((
        x.trim().parse().map_err(|e| format!("{e}"))?,
        y.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

enum Failure {
    Config(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => Failure::Config(m),
            e => Failure::Other(e.into()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth {
            kind,
            seed,
            out,
            width,
            height,
            frames,
            density,
            max_range,
        } => synth(&kind, seed, &out, width, height, frames, density, max_range),
        Command::Run { config } => run(&config),
        Command::Render { frame, out, goal } => render(&frame, &out, goal),
        Command::Compare { runs } => compare(&runs),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn synth(
    kind: &str,
    seed: u64,
    out: &Path,
    width: Option<usize>,
    height: Option<usize>,
    frames: Option<usize>,
    density: Option<f64>,
    max_range: Option<f64>,
) -> Result<ExitCode, Failure> {
    let kind = MapKind::parse(kind).ok_or_else(|| Failure::Config(format!("unknown map kind {kind:?}")))?;
    let d = SynthSource::default();
    let source = SynthSource {
        kind,
        seed,
        width: width.unwrap_or(d.width),
        height: height.unwrap_or(d.height),
        frames: frames.unwrap_or(d.frames),
        obstacle_density: density.unwrap_or(d.obstacle_density),
        max_range: max_range.unwrap_or(d.max_range),
        ..d
    };
    source
        .sequence_spec()
        .map
        .validate()
        .map_err(|e| Failure::Config(e.to_string()))?;
    let seq = Sequence::synth(&source)?;
    let manifest = seq.save(out)?;
    println!("{}", manifest.display());
    Ok(ExitCode::SUCCESS)
}

fn threads_override() -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Failure::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn run(config: &Path) -> Result<ExitCode, Failure> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(n) = threads_override()? {
        cfg.parallelism = n;
    }
    let result = run_sequence(&cfg)?;
    let s = &result.summary;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    println!(
        "{}: frames {} failed {} frechet {} aad {} branch {} length {} frames_ahead {}",
        s.sequence_id,
        s.overall.frames,
        s.overall.failed,
        fmt(s.overall.frechet),
        fmt(s.overall.aad),
        fmt(s.overall.branch_accuracy),
        fmt(s.overall.path_length_ratio),
        s.frames_ahead
    );
    if result.failed() > 0 {
        eprintln!("{} of {} frames failed to plan", result.failed(), s.overall.frames);
        return Ok(ExitCode::from(EXIT_PARTIAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn render(frame: &Path, out: &Path, goal: Option<(usize, usize)>) -> Result<ExitCode, Failure> {
    let frame = load_frame(frame).with_context(|| format!("loading {}", frame.display()))?;
    let prep = Prepared::new(&frame.grid, &PipelineConfig::default()).map_err(HarnessError::from)?;
    let (local, traj) = match goal {
        Some(g) => {
            let start = PlannerState::new(frame.pose.px, frame.pose.py, frame.pose.theta);
            prep.plan_from(start, g, &PipelineConfig::default().vehicle)
        }
        None => (None, None),
    };
    render_svg(&frame, Some(&prep.graph), traj.as_ref(), local, out)
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn load_summary(p: &Path) -> Result<SequenceSummary, Failure> {
    let file = if p.is_dir() { p.join(SUMMARY_JSON) } else { p.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| Failure::Config(format!("{}: {e}", file.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", file.display())))
}

fn compare(runs: &[PathBuf]) -> Result<ExitCode, Failure> {
    let [a, b] = runs else {
        return Err(Failure::Config("compare takes exactly two --run arguments".into()));
    };
    let (sa, sb) = (load_summary(a)?, load_summary(b)?);
    println!("metric\tsplit\tA\tB\tbetter");
    // (name, higher is better)
    let metrics: [(&str, bool, fn(&occluplan::metrics::Aggregate) -> Option<f64>); 4] = [
        ("frechet", false, |g| g.frechet),
        ("aad", false, |g| g.aad),
        ("branch_accuracy", true, |g| g.branch_accuracy),
        ("path_length_ratio", true, |g| g.path_length_ratio),
    ];
    for (split, ga, gb) in [
        ("all", &sa.overall, &sb.overall),
        ("easy", &sa.easy, &sb.easy),
        ("hard", &sa.hard, &sb.hard),
    ] {
        for (name, higher, get) in metrics {
            let (va, vb) = (get(ga), get(gb));
            println!("{name}\t{split}\t{}\t{}\t{}", show(va), show(vb), better(va, vb, higher));
        }
    }
    let (fa, fb) = (sa.frames_ahead as f64, sb.frames_ahead as f64);
    println!("frames_ahead\tall\t{fa}\t{fb}\t{}", better(Some(fa), Some(fb), true));
    Ok(ExitCode::SUCCESS)
}

fn show(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.3}"))
}

fn better(a: Option<f64>, b: Option<f64>, higher: bool) -> &'static str {
    match (a, b) {
        (Some(a), Some(b)) if a == b => "tie",
        (Some(a), Some(b)) if (a > b) == higher => "A",
        (Some(_), Some(_)) => "B",
        _ => "-",
    }
}
