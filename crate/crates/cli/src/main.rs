use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cubefit::camera::{backproject, Intrinsics};
use cubefit::io;
use cubefit::metrics::{self, EvalReport};
use cubefit::robust::{fit_scene, EmConfig, FitConfig, InlierMode, InlierParams};
use cubefit::solver::gradient_check;
use cubefit::superquadric::{self, Superquadric};
use cubefit::synth::{make_scene, render_depth, SceneOptions};
use cubefit::{Cuboid, Error};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "cubefit", version, about = "Abstract depth images into oriented cuboids")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit cuboids to a depth map.
    Fit(FitArgs),
    /// Score primitives against a depth map.
    Eval(EvalArgs),
    /// Generate a random synthetic cuboid scene.
    Synth(SynthArgs),
    /// Render a depth map of cuboids.
    Render(RenderArgs),
    /// Compare solver Jacobians with finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    /// Sampling weight maps (CWM1 binary).
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4096)]
    hypotheses: usize,
    #[arg(long, default_value_t = 0.004)]
    tau: f64,
    #[arg(long, default_value_t = 2.0)]
    tau_c_mult: f64,
    #[arg(long, default_value_t = 5.0)]
    beta: f64,
    /// Minimal set size.
    #[arg(long, default_value_t = 6)]
    mss: usize,
    #[arg(long, default_value_t = 8)]
    max_cuboids: usize,
    /// Acceptance threshold (default 9 ln n).
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    refine_em: bool,
    /// Keep sampling points already explained by accepted cuboids.
    #[arg(long)]
    no_suppress_explained: bool,
    /// Count inliers by nearest distance only, ignoring occlusion.
    #[arg(long)]
    plain_inliers: bool,
    #[arg(long, default_value_t = 40_000)]
    max_points: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Per-round diagnostics as JSON lines.
    #[arg(long)]
    diag: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Cuboid,
    Superquadric,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    primitives: PathBuf,
    #[arg(long, value_enum, default_value = "cuboid")]
    family: Family,
    #[arg(long, value_delimiter = ',', default_value = "0.20,0.05")]
    bounds: Vec<f64>,
    #[arg(long)]
    report: PathBuf,
    /// Coverage mask as a binary PGM.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = superquadric::DEFAULT_SURFACE_SAMPLES)]
    surface_samples: usize,
    #[arg(long, default_value_t = superquadric::DEFAULT_LOS_SAMPLES)]
    los_samples: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 640)]
    width: usize,
    #[arg(long, default_value_t = 480)]
    height: usize,
    /// Standard deviation of Gaussian depth noise (m).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    primitives: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

/// Intrinsics with a 525 px focal length at 640 px width, scaled to `width`.
fn default_intrinsics(width: usize, height: usize) -> Intrinsics {
    let f = 525.0 * width as f64 / 640.0;
    Intrinsics {
        fx: f,
        fy: f,
        cx: (width as f64 - 1.0) / 2.0,
        cy: (height as f64 - 1.0) / 2.0,
        width,
        height,
    }
}

fn fit(args: &FitArgs) -> cubefit::Result<()> {
    let depth = io::load_depth(&args.depth)?;
    let k = io::load_intrinsics(&args.intrinsics)?;
    let cloud = backproject(&depth, &k)?.subsample(args.max_points);
    let weights = match &args.weights {
        Some(p) => Some(io::load_weight_maps(p, k.width, k.height, &cloud.pixels)?),
        None => None,
    };
    let inlier = InlierParams::new(args.tau, args.beta, args.tau_c_mult);
    let cfg = FitConfig {
        minimal_set_size: args.mss,
        hypotheses: args.hypotheses,
        max_cuboids: args.max_cuboids,
        stopping_theta: args.theta,
        seed: args.seed,
        inlier,
        mode: if args.plain_inliers {
            InlierMode::Plain
        } else {
            InlierMode::OcclusionAware
        },
        suppress_explained: !args.no_suppress_explained,
        refine_em: args.refine_em.then(|| EmConfig::for_inliers(&inlier)),
        ..FitConfig::default()
    };
    let result = fit_scene(&cloud.points, weights.as_ref(), &cfg)?;
    io::write_json(&args.out, &result.cuboids)?;
    if let Some(mesh) = &args.mesh {
        io::export_obj(&result.cuboids, mesh)?;
    }
    if let Some(diag) = &args.diag {
        let mut f = fs::File::create(diag)?;
        for round in &result.rounds {
            writeln!(f, "{}", serde_json::to_string(&io::canonical_value(round)?)?)?;
        }
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> cubefit::Result<()> {
    let depth = io::load_depth(&args.depth)?;
    let k = io::load_intrinsics(&args.intrinsics)?;
    let (report, mask): (EvalReport, Vec<bool>) = match args.family {
        Family::Cuboid => {
            let cuboids: Vec<Cuboid> = io::read_json(&args.primitives)?;
            let report = metrics::evaluate(&depth, &k, &cuboids, &args.bounds)?;
            (report, metrics::coverage(&depth, &k, &cuboids)?.1)
        }
        Family::Superquadric => {
            let shapes: Vec<Superquadric> = io::read_json(&args.primitives)?;
            let report = superquadric::evaluate_superquadrics(
                &depth,
                &k,
                &shapes,
                &args.bounds,
                args.surface_samples,
                args.los_samples,
            )?;
            let mask = metrics::coverage_with(&depth, &k, |ray| {
                shapes.iter().any(|s| superquadric::sq_ray_hits(s, ray, 256))
            })?
            .1;
            (report, mask)
        }
    };
    io::write_json(&args.report, &report)?;
    if let Some(path) = &args.mask {
        io::write_pgm(path, &mask, k.width, k.height)?;
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> cubefit::Result<()> {
    let k = default_intrinsics(args.width, args.height);
    k.validate()?;
    let opts = SceneOptions {
        depth_noise: args.noise,
        ..SceneOptions::new(args.k)
    };
    let scene = make_scene(&opts, &k, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    fs::create_dir_all(&args.out_dir)?;
    io::save_depth(&args.out_dir.join("depth.pfm"), &scene.depth)?;
    io::write_json(&args.out_dir.join("intrinsics.json"), &k)?;
    io::write_json(&args.out_dir.join("cuboids.json"), &scene.cuboids)?;
    Ok(())
}

fn render(args: &RenderArgs) -> cubefit::Result<()> {
    let cuboids: Vec<Cuboid> = io::read_json(&args.primitives)?;
    let k = io::load_intrinsics(&args.intrinsics)?;
    io::save_depth(&args.out, &render_depth(&cuboids, &k)?)
}

fn grad_check(args: &GradCheckArgs) -> cubefit::Result<()> {
    let trials = gradient_check(args.trials, args.seed)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for t in &trials {
        writeln!(out, "{}", serde_json::to_string(&io::canonical_value(t)?)?)?;
    }
    let mut errs: Vec<f64> = trials.iter().map(|t| t.relative_error).collect();
    errs.sort_by(f64::total_cmp);
    let pick = |q: f64| errs.get(((errs.len() as f64 - 1.0) * q).round() as usize).copied().unwrap_or(0.0);
    let summary = serde_json::json!({"trials": errs.len(), "median": pick(0.5), "p90": pick(0.9)});
    writeln!(out, "{}", serde_json::to_string(&io::canonical_value(&summary)?)?)?;
    Ok(())
}

fn run(cli: &Cli) -> cubefit::Result<()> {
    match &cli.command {
        Command::Fit(a) => fit(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Render(a) => render(a),
        Command::GradCheck(a) => grad_check(a),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
