//! Front end over the planning library. Exit codes are part of the
//! contract: 0 success, 1 input error, 2 cap exhaustion, 3 replay
//! divergence.

use clap::{Args, Parser, Subcommand};
use pushplan::dynamics::Sim;
use pushplan::planner::{plan, Ablation, PlanError, PlanOutcome};
use pushplan::scenario::{
    archive_plan, check_scene_match, load_plan, load_scene, record_com_polyline, render_svg,
    save_plan, settled_start, verify_archive, LoadedScene, NodeRecord, PlanArchive, RenderInput,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_CAP: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(name = "pushplan", version, about = "Plan single-fingertip pushes through planar scenes")]
struct Cli {
    /// Worker threads for grasp scoring and rollouts. Results never depend
    /// on this; it only changes wall time. Defaults to PUSHPLAN_WORKERS or
    /// the machine's parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the planner on a scene and write a plan archive.
    Plan(PlanArgs),
    /// Re-simulate an archive against its scene and check every logged state.
    Replay(ReplayArgs),
    /// Draw a scene, a plan archive, or a whole benchmark directory as SVG.
    Render(RenderArgs),
    /// Sweep ablation x seed and write an aggregate table.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Overrides the seed stored in the scene file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Wall-clock cap in seconds, overriding the scene's planner section.
    #[arg(long)]
    max_time: Option<f64>,
    /// Keep every d-th logged state in the archive.
    #[arg(long, default_value_t = 10)]
    decimation: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    archive: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Single archive to draw.
    #[arg(long, conflicts_with = "bench")]
    archive: Option<PathBuf>,
    /// Benchmark directory; draws the lowest-seed archive of each ablation.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// SVG file (with --archive or neither) or directory (with --bench).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Seeds 0..K for every ablation.
    #[arg(long)]
    seeds: usize,
    /// "all" or a comma-separated subset of ablation names.
    #[arg(long, default_value = "all")]
    ablations: String,
    #[arg(long, default_value_t = 10)]
    decimation: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    // Flag mistakes are input errors (exit 1); clap's default of 2 would
    // collide with the cap-exhaustion code.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(EXIT_INPUT);
        }
        Err(e) => {
            print!("{e}");
            return ExitCode::from(EXIT_OK);
        }
    };
    let workers = cli.workers.or_else(|| {
        std::env::var("PUSHPLAN_WORKERS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: building worker pool: {e}");
            return ExitCode::from(EXIT_INPUT);
        }
    }
    let code = match cli.command {
        Command::Plan(args) => cmd_plan(&args),
        Command::Replay(args) => cmd_replay(&args),
        Command::Render(args) => cmd_render(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    ExitCode::from(code.unwrap_or_else(|msg| {
        eprintln!("error: {msg}");
        EXIT_INPUT
    }))
}

struct RunResult {
    outcome: PlanOutcome,
    archive: PlanArchive,
    wall_time: f64,
}

fn run_once(
    sim: &Sim,
    loaded: &LoadedScene,
    seed: u64,
    ablation: Option<Ablation>,
    max_time: Option<f64>,
    decimation: usize,
) -> Result<RunResult, String> {
    let mut params = loaded.params.clone();
    if let Some(a) = ablation {
        params.ablation = a;
    }
    if let Some(t) = max_time {
        params.wall_clock_cap = t;
    }
    let start = settled_start(sim, loaded).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t0 = Instant::now();
    let outcome = plan(sim, &start, &params, &mut rng).map_err(|e| e.to_string())?;
    let wall_time = t0.elapsed().as_secs_f64();
    let archive = archive_plan(&outcome, &loaded.hash, seed, decimation);
    Ok(RunResult { outcome, archive, wall_time })
}

fn machine_line(ablation: Ablation, seed: u64, r: &RunResult) -> String {
    let m = &r.outcome.plan.metrics;
    format!(
        "run ablation={} seed={} success={} modes={} branches={} length={:.6} iterations={} time={:.3}",
        ablation.name(),
        seed,
        m.success as u8,
        m.modes,
        m.branches,
        m.path_length,
        m.iterations,
        r.wall_time,
    )
}

fn cmd_plan(args: &PlanArgs) -> Result<u8, String> {
    if args.decimation == 0 {
        return Err("decimation must be >= 1".into());
    }
    let loaded = load_scene(&args.scene).map_err(|e| e.to_string())?;
    let sim = Sim::new(&loaded.scene);
    let seed = args.seed.unwrap_or(loaded.seed);
    let r = run_once(&sim, &loaded, seed, args.ablation, args.max_time, args.decimation)?;
    save_plan(&args.out, &r.archive).map_err(|e| e.to_string())?;
    let ablation = args.ablation.unwrap_or(loaded.params.ablation);
    println!("{}", machine_line(ablation, seed, &r));
    let m = &r.outcome.plan.metrics;
    println!(
        "success {}, time {:.3} s, modes {}, branches {}, length {:.4} m (stopped after iteration {})",
        m.success, r.wall_time, m.modes, m.branches, m.path_length, m.iterations,
    );
    Ok(if m.success { EXIT_OK } else { EXIT_CAP })
}

fn cmd_replay(args: &ReplayArgs) -> Result<u8, String> {
    let loaded = load_scene(&args.scene).map_err(|e| e.to_string())?;
    let archive = load_plan(&args.archive).map_err(|e| e.to_string())?;
    check_scene_match(&archive, &loaded).map_err(|e| e.to_string())?;
    let sim = Sim::new(&loaded.scene);
    match verify_archive(&sim, &archive, &loaded.params.reach) {
        Ok(end) => {
            println!(
                "replay ok: {} segments, object ends at ({:.4}, {:.4}, {:.4})",
                archive.segments.len(),
                end.x,
                end.y,
                end.theta,
            );
            Ok(EXIT_OK)
        }
        Err(e @ PlanError::ReplayDivergence { .. }) => {
            eprintln!("error: {e}");
            Ok(EXIT_DIVERGENCE)
        }
        Err(e) => Err(e.to_string()),
    }
}

fn render_archive(loaded: &LoadedScene, archive: &PlanArchive) -> String {
    let solution: Vec<Vec<[f64; 2]>> =
        archive.segments.iter().map(record_com_polyline).collect();
    let goal = &loaded.file.goal;
    render_svg(&RenderInput {
        scene: &loaded.scene,
        start: archive
            .tree
            .first()
            .map(|n| n.pose)
            .unwrap_or_else(|| loaded.start.object_pose),
        goal: Some((
            pushplan::geometry::Pose2::new(goal.center[0], goal.center[1], goal.center[2]),
            goal.r_terminal,
        )),
        tree: &archive.tree,
        paths: &[],
        solution: &solution,
    })
}

fn cmd_render(args: &RenderArgs) -> Result<u8, String> {
    let loaded = load_scene(&args.scene).map_err(|e| e.to_string())?;
    if let Some(dir) = &args.bench {
        std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;
        for ablation in Ablation::ALL {
            let archive = lowest_seed_archive(dir, ablation)?;
            let svg = render_archive(&loaded, &archive);
            let path = args.out.join(format!("{}.svg", ablation.name()));
            std::fs::write(&path, svg).map_err(|e| e.to_string())?;
            println!("wrote {}", path.display());
        }
        return Ok(EXIT_OK);
    }
    let svg = match &args.archive {
        Some(path) => {
            let archive = load_plan(path).map_err(|e| e.to_string())?;
            check_scene_match(&archive, &loaded).map_err(|e| e.to_string())?;
            render_archive(&loaded, &archive)
        }
        None => {
            // Scene-only picture: start pose and goal region, no tree.
            let goal = &loaded.file.goal;
            let start = loaded.start.object_pose;
            render_svg(&RenderInput {
                scene: &loaded.scene,
                start,
                goal: Some((
                    pushplan::geometry::Pose2::new(
                        goal.center[0],
                        goal.center[1],
                        goal.center[2],
                    ),
                    goal.r_terminal,
                )),
                tree: &[NodeRecord { id: 0, parent: None, pose: start }],
                paths: &[],
                solution: &[],
            })
        }
    };
    std::fs::write(&args.out, svg).map_err(|e| e.to_string())?;
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}

fn lowest_seed_archive(dir: &Path, ablation: Ablation) -> Result<PlanArchive, String> {
    let prefix = format!("{}_seed", ablation.name());
    let mut best: Option<(u64, PathBuf)> = None;
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    for entry in entries {
        let path = entry.map_err(|e| e.to_string())?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(rest) = name.strip_prefix(&prefix).and_then(|r| r.strip_suffix(".plan")) else {
            continue;
        };
        let Ok(seed) = rest.parse::<u64>() else { continue };
        if best.as_ref().is_none_or(|(s, _)| seed < *s) {
            best = Some((seed, path));
        }
    }
    let (_, path) =
        best.ok_or_else(|| format!("no {prefix}*.plan archives in {}", dir.display()))?;
    load_plan(&path).map_err(|e| e.to_string())
}

struct Row {
    ablation: Ablation,
    runs: usize,
    successes: usize,
    sum_time: f64,
    sum_modes: f64,
    sum_branches: f64,
    sum_length: f64,
}

impl Row {
    fn mean(&self, sum: f64) -> Option<f64> {
        (self.successes > 0).then(|| sum / self.successes as f64)
    }
}

fn fmt_mean(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.3}"),
        None => "~".into(),
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<u8, String> {
    if args.seeds == 0 {
        return Err("seeds must be >= 1".into());
    }
    if args.decimation == 0 {
        return Err("decimation must be >= 1".into());
    }
    let ablations: Vec<Ablation> = if args.ablations == "all" {
        Ablation::ALL.to_vec()
    } else {
        args.ablations
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_, _>>()?
    };
    let loaded = load_scene(&args.scene).map_err(|e| e.to_string())?;
    let sim = Sim::new(&loaded.scene);
    std::fs::create_dir_all(&args.out).map_err(|e| e.to_string())?;

    let mut rows = Vec::new();
    for ablation in ablations {
        let mut row = Row {
            ablation,
            runs: 0,
            successes: 0,
            sum_time: 0.0,
            sum_modes: 0.0,
            sum_branches: 0.0,
            sum_length: 0.0,
        };
        for seed in 0..args.seeds as u64 {
            row.runs += 1;
            match run_once(&sim, &loaded, seed, Some(ablation), None, args.decimation) {
                Ok(r) => {
                    let path = args.out.join(format!("{}_seed{}.plan", ablation.name(), seed));
                    save_plan(&path, &r.archive).map_err(|e| e.to_string())?;
                    println!("{}", machine_line(ablation, seed, &r));
                    let m = &r.outcome.plan.metrics;
                    if m.success {
                        row.successes += 1;
                        row.sum_time += r.wall_time;
                        row.sum_modes += m.modes as f64;
                        row.sum_branches += m.branches as f64;
                        row.sum_length += m.path_length;
                    }
                }
                Err(msg) => {
                    // A broken run counts as a failure; the sweep goes on.
                    eprintln!("run ablation={} seed={seed} failed: {msg}", ablation.name());
                    println!(
                        "run ablation={} seed={seed} success=0 modes=0 branches=0 length=0.000000 iterations=0 time=0.000",
                        ablation.name(),
                    );
                }
            }
        }
        rows.push(row);
    }

    // Success-only means. Wall times go to a sidecar so the aggregate table
    // is byte-identical across reruns.
    let mut table = String::from("ablation     success_rate mean_modes mean_branches mean_length\n");
    let mut timings = String::from("ablation     mean_time_s\n");
    for row in &rows {
        let rate = row.successes as f64 / row.runs as f64;
        table.push_str(&format!(
            "{:<12} {:<12.2} {:<10} {:<13} {}\n",
            row.ablation.name(),
            rate,
            fmt_mean(row.mean(row.sum_modes)),
            fmt_mean(row.mean(row.sum_branches)),
            fmt_mean(row.mean(row.sum_length)),
        ));
        timings.push_str(&format!(
            "{:<12} {}\n",
            row.ablation.name(),
            fmt_mean(row.mean(row.sum_time)),
        ));
    }
    std::fs::write(args.out.join("aggregate.txt"), &table).map_err(|e| e.to_string())?;
    std::fs::write(args.out.join("timings.txt"), &timings).map_err(|e| e.to_string())?;
    print!("{table}");
    Ok(EXIT_OK)
}
