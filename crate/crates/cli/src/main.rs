use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use headsplat_core::align::{format_matrix4, load_points, rigid_from_correspondences, solve_alignment, AlignmentProblem};
use headsplat_core::bundle::{NamedCamera, SceneBundle};
use headsplat_core::camera::CameraRig;
use headsplat_core::config::{EngineConfig, FrameFormat};
use headsplat_core::head::{load_head_asset, pose_mesh, HeadParams};
use headsplat_core::imageio::{load_float_raster, save_float_raster, save_png, FloatImage};
use headsplat_core::math::RigidTransform;
use headsplat_core::optim::{optimize_appearance, write_loss_history, GuidanceSet, LossHook, SubprocessHook};
use headsplat_core::raster::render;
use headsplat_core::scene::{
    bind_to_mesh_with, labels_path, load_labels, load_splat_file, load_splat_file_as, save_labels, save_splat_file,
    BindOptions, GaussianCloud, Group,
};
use headsplat_core::selfcheck;
use headsplat_core::tools::{label_person_gaussians, load_mask_views, removal_report, removal_report_csv, remove_flagged};
use headsplat_core::track::AnimationTrack;
use headsplat_core::Error;
use headsplat_service::{ServeOptions, Session};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, missing argument)
  3  input could not be read or parsed
  4  invariant violation or invalid input
  5  numerical failure or degenerate (rank-deficient) input

Scenes are given as a bundle directory, or `fixture` / `fixture:<seed>` for
the built-in synthetic scene.";

#[derive(Parser)]
#[command(name = "headsplat", version, about = "Animatable Gaussian-splat heads composed into captured scenes", after_help = EXIT_CODES)]
struct Cli {
    /// Engine configuration (TOML); absent keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one still image.
    Render(RenderArgs),
    /// Render an animation track to an image sequence.
    Animate(AnimateArgs),
    /// Fit head appearance to a guidance set.
    Optimize(OptimizeArgs),
    /// Solve the head-to-background transform.
    Align(AlignArgs),
    /// Flag (and optionally remove) Gaussians covered by person masks.
    LabelPerson(LabelArgs),
    /// Build a scene bundle from parts, or write the synthetic fixture.
    Compose(ComposeArgs),
    /// Convert between file formats by extension.
    Convert(ConvertArgs),
    /// Serve live rendering over websockets.
    Serve(ServeArgs),
    /// Run the built-in property checks and the renderer benchmark.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: String,
    /// Camera id from the scene.
    #[arg(long, default_value = "cam0")]
    camera: String,
    /// HeadParams JSON; neutral when omitted.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Output image (.png, or .raster for unclamped floats).
    #[arg(long)]
    out: PathBuf,
    /// Also write the expected-depth image as a float raster.
    #[arg(long)]
    depth: Option<PathBuf>,
}

#[derive(Args)]
struct AnimateArgs {
    #[arg(long)]
    scene: String,
    #[arg(long)]
    track: PathBuf,
    /// Camera for frames that do not carry their own.
    #[arg(long, default_value = "cam0")]
    camera: String,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    scene: String,
    /// Guidance directory (cameras.json, images/, masks/, params/).
    #[arg(long)]
    guidance: PathBuf,
    /// Seed for view sampling; required.
    #[arg(long)]
    seed: u64,
    /// Overrides optim.iterations.
    #[arg(long)]
    iterations: Option<usize>,
    /// External loss program invoked as `<prog> rendered.raster guidance.raster grad_out.raster`.
    #[arg(long)]
    hook: Option<PathBuf>,
    /// Weight of the external loss; overrides optim.weights.hook.
    #[arg(long)]
    hook_weight: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AlignArgs {
    /// Alignment problem (TOML).
    #[arg(long, conflicts_with_all = ["src", "dst"])]
    problem: Option<PathBuf>,
    /// Source points (x y z per line) for a least-squares fit.
    #[arg(long, requires = "dst")]
    src: Option<PathBuf>,
    /// Target points matching --src.
    #[arg(long, requires = "src")]
    dst: Option<PathBuf>,
    /// Also fit a uniform scale.
    #[arg(long)]
    with_scale: bool,
    /// Write the 4×4 row-major matrix here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    /// Splat file to label.
    #[arg(long)]
    input: PathBuf,
    /// Directory with cameras.json and masks/<id>.png.
    #[arg(long)]
    views: PathBuf,
    /// Output splat file; labels go to its sidecar.
    #[arg(long)]
    out: PathBuf,
    /// Drop flagged Gaussians and write a removal report.
    #[arg(long)]
    remove: bool,
    /// Overrides mask_vote.tau.
    #[arg(long)]
    tau: Option<f64>,
    /// Overrides mask_vote.min_views.
    #[arg(long)]
    min_views: Option<usize>,
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    out_dir: PathBuf,
    /// Write the synthetic fixture with this seed instead of composing parts.
    #[arg(long, conflicts_with_all = ["head_asset", "background", "transform", "cameras"])]
    fixture: Option<u64>,
    /// Fixture head vertex count (rounded up to an icosphere level).
    #[arg(long, default_value_t = 642)]
    vertices: usize,
    /// Fixture image size in pixels.
    #[arg(long, default_value_t = 128)]
    size: u32,
    /// Also render a guidance set of the fixture into <out-dir>/guidance.
    #[arg(long)]
    with_guidance: bool,
    #[arg(long, requires_all = ["background"])]
    head_asset: Option<PathBuf>,
    #[arg(long)]
    background: Option<PathBuf>,
    /// Head-to-world 4×4 row-major matrix (text, one row per line).
    #[arg(long)]
    transform: Option<PathBuf>,
    /// JSON list of named cameras.
    #[arg(long)]
    cameras: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    gaussians_per_triangle: usize,
}

#[derive(Args)]
struct ConvertArgs {
    /// .ply (any float/int vertex layout) or .raster.
    #[arg(long)]
    input: PathBuf,
    /// .ply (canonical layout) or .png.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    scene: String,
    /// Overrides service.bind.
    #[arg(long)]
    bind: Option<String>,
    /// Overrides service.fps_cap.
    #[arg(long)]
    fps_cap: Option<f64>,
    /// raw | png; overrides service.format.
    #[arg(long)]
    format: Option<FrameFormat>,
    #[arg(long, default_value = "cam0")]
    camera: String,
    /// Serve the browser UI from this directory (default: paths.ui_dir, else viewer-ui/dist).
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    ui: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Smaller sample counts.
    #[arg(long)]
    quick: bool,
    /// Gaussians in the benchmark scene.
    #[arg(long, default_value_t = 50_000)]
    bench_gaussians: usize,
    /// Benchmark image size.
    #[arg(long, default_value_t = 512)]
    bench_size: u32,
}

enum Failure {
    Usage(String),
    Core(Error),
    ChecksFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Res<T> = std::result::Result<T, Failure>;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => 3,
        Error::InvalidInput(_) | Error::Invariant { .. } => 4,
        Error::Numerical(_) | Error::Rank(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::ChecksFailed(n)) => {
            eprintln!("error: {n} check(s) failed");
            ExitCode::from(4)
        }
    }
}

fn run(cli: Cli) -> Res<()> {
    let config = EngineConfig::load_or_default(cli.config.as_deref())?;
    match cli.command {
        Command::Render(a) => cmd_render(&config, a),
        Command::Animate(a) => cmd_animate(&config, a),
        Command::Optimize(a) => cmd_optimize(config, a),
        Command::Align(a) => cmd_align(&config, a),
        Command::LabelPerson(a) => cmd_label(config, a),
        Command::Compose(a) => cmd_compose(&config, a),
        Command::Convert(a) => cmd_convert(a),
        Command::Serve(a) => cmd_serve(config, a),
        Command::Selftest(a) => cmd_selftest(a),
    }
}

fn load_scene(spec: &str) -> Res<SceneBundle> {
    if spec == "fixture" {
        return Ok(SceneBundle::fixture(0)?);
    }
    if let Some(seed) = spec.strip_prefix("fixture:") {
        let seed = seed
            .parse()
            .map_err(|_| Failure::Usage(format!("bad fixture seed in '{spec}'")))?;
        return Ok(SceneBundle::fixture(seed)?);
    }
    Ok(SceneBundle::load(spec)?)
}

fn parent_dir(p: &Path) -> &Path {
    p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn write_image(img: &FloatImage, path: &Path) -> Res<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raster") => save_float_raster(img, path)?,
        Some("png") => save_png(img, path)?,
        _ => return Err(Failure::Usage(format!("{}: expected a .png or .raster output", path.display()))),
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Res<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?)
}

fn cmd_render(config: &EngineConfig, a: RenderArgs) -> Res<()> {
    let scene = load_scene(&a.scene)?;
    let camera = scene.camera(&a.camera)?;
    let params = match &a.params {
        Some(p) => read_json::<HeadParams>(p)?.conform(&scene.model)?,
        None => scene.neutral_params(),
    };
    let out = render(&scene.posed(&params)?, camera, &config.render)?;
    write_image(&out.color, &a.out)?;
    if let Some(d) = &a.depth {
        save_float_raster(&out.depth, d)?;
    }
    config.write_resolved(parent_dir(&a.out))?;
    Ok(())
}

fn cmd_animate(config: &EngineConfig, a: AnimateArgs) -> Res<()> {
    let scene = load_scene(&a.scene)?;
    let default_camera = scene.camera(&a.camera)?.clone();
    let track = AnimationTrack::load(&a.track)?.conform(&scene.model)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let base = scene.composed();
    let rig = scene.rig();
    let mut cloud = base.clone();
    for (k, f) in track.frames.iter().enumerate() {
        rig.drive(&mut cloud, &f.params)?;
        let cam = f.camera.as_ref().unwrap_or(&default_camera);
        let out = render(&cloud, cam, &config.render)?;
        save_png(&out.color, a.out_dir.join(format!("frame_{k:05}.png")))?;
    }
    config.write_resolved(&a.out_dir)?;
    println!("{} frames written to {}", track.frames.len(), a.out_dir.display());
    Ok(())
}

fn cmd_optimize(mut config: EngineConfig, a: OptimizeArgs) -> Res<()> {
    config.optim.seed = a.seed;
    if let Some(n) = a.iterations {
        config.optim.iterations = n;
    }
    if let Some(w) = a.hook_weight {
        config.optim.weights.hook = w;
    }
    config.validate()?;
    let mut scene = load_scene(&a.scene)?;
    let guidance = GuidanceSet::load(&a.guidance)?;
    let hook = a.hook.map(|program| SubprocessHook { program, args: Vec::new() });
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    config.write_resolved(&a.out_dir)?;

    let n_head = scene.head.len();
    let snap_dir = a.out_dir.join("snapshots");
    let mut snapshot = |it: usize, c: &GaussianCloud| -> headsplat_core::Result<()> {
        std::fs::create_dir_all(&snap_dir).map_err(|e| Error::io(&snap_dir, e))?;
        save_splat_file(&c.select(&(0..n_head).collect::<Vec<_>>()), snap_dir.join(format!("head_{it:06}.ply")))
    };
    let result = optimize_appearance(
        &scene.composed(),
        &scene.rig(),
        &guidance,
        &config.optimizer(),
        hook.as_ref().map(|h| h as &dyn LossHook),
        Some(&mut snapshot),
    )?;
    for i in 0..n_head {
        scene.head.sh[i] = result.cloud.sh[i];
        scene.head.opacity_logits[i] = result.cloud.opacity_logits[i];
    }
    scene.save(a.out_dir.join("scene"))?;
    write_loss_history(&result.history, a.out_dir.join("loss_history.csv"))?;
    let trained = result.trainable.iter().filter(|&&t| t).count();
    let last = result.history.last().map_or(0.0, |h| h.total);
    println!("optimized {trained} Gaussians over {} iterations, final loss {last:.6}", result.history.len());
    Ok(())
}

fn cmd_align(config: &EngineConfig, a: AlignArgs) -> Res<()> {
    let text = match (&a.problem, &a.src, &a.dst) {
        (Some(p), None, None) => format_matrix4(&solve_alignment(&AlignmentProblem::load(p)?)?),
        (None, Some(s), Some(d)) => {
            let fit = rigid_from_correspondences(&load_points(s)?, &load_points(d)?, a.with_scale)?;
            eprintln!("scale {} rms {:.3e}", fit.scale, fit.rms);
            let mut t = fit.transform;
            t.rotation *= fit.scale;
            t.to_matrix4()
                .iter()
                .map(|r| r.iter().map(|v| format!("{v:.17e}")).collect::<Vec<_>>().join(" "))
                .collect::<Vec<_>>()
                .join("\n")
                + "\n"
        }
        _ => return Err(Failure::Usage("give either --problem or both --src and --dst".into())),
    };
    print!("{text}");
    if let Some(out) = &a.out {
        std::fs::write(out, &text).map_err(|e| Error::io(out, e))?;
        config.write_resolved(parent_dir(out))?;
    }
    Ok(())
}

fn cmd_label(mut config: EngineConfig, a: LabelArgs) -> Res<()> {
    if let Some(t) = a.tau {
        config.mask_vote.tau = t;
    }
    if let Some(m) = a.min_views {
        config.mask_vote.min_views = m;
    }
    config.validate()?;
    let mut cloud = load_splat_file(&a.input)?;
    let lp = labels_path(&a.input);
    if lp.exists() {
        load_labels(&mut cloud, &lp)?;
    }
    let views = load_mask_views(&a.views)?;
    let flags = label_person_gaussians(&cloud, &views, &config.mask_vote, &config.render)?;
    let flagged = flags.iter().filter(|&&f| f).count();
    let out_dir = parent_dir(&a.out);
    let output = if a.remove {
        let report = removal_report(&cloud, &flags, &views, &config.render)?;
        let p = out_dir.join("removal_report.csv");
        std::fs::write(&p, removal_report_csv(&report)).map_err(|e| Error::io(&p, e))?;
        remove_flagged(&cloud, &flags)?
    } else {
        cloud.person = flags;
        cloud
    };
    save_splat_file(&output, &a.out)?;
    save_labels(&output, labels_path(&a.out))?;
    config.write_resolved(out_dir)?;
    println!("{flagged} of {} Gaussians flagged as person", flags_len(&output, flagged, a.remove));
    Ok(())
}

fn flags_len(out: &GaussianCloud, flagged: usize, removed: bool) -> usize {
    if removed {
        out.len() + flagged
    } else {
        out.len()
    }
}

fn read_matrix4(path: &Path) -> Res<RigidTransform> {
    let what = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(&what, e))?;
    if vals.len() != 16 {
        return Err(Error::parse(&what, format!("expected 16 numbers, got {}", vals.len())).into());
    }
    let mut m = [[0.0; 4]; 4];
    for (k, v) in vals.into_iter().enumerate() {
        m[k / 4][k % 4] = v;
    }
    Ok(RigidTransform::from_matrix4(&m)?)
}

fn cmd_compose(config: &EngineConfig, a: ComposeArgs) -> Res<()> {
    let bundle = if let Some(seed) = a.fixture {
        SceneBundle::fixture_sized(seed, a.vertices, a.size)?
    } else {
        let (Some(asset), Some(bg)) = (&a.head_asset, &a.background) else {
            return Err(Failure::Usage("compose needs --fixture or --head-asset and --background".into()));
        };
        let model = load_head_asset(asset)?;
        let mesh = pose_mesh(&model, &HeadParams::neutral(&model))?;
        let bound = bind_to_mesh_with(
            &mesh,
            &BindOptions {
                gaussians_per_triangle: a.gaussians_per_triangle,
                ..Default::default()
            },
        )?;
        if bound.degenerate_triangles > 0 {
            eprintln!("warning: {} degenerate triangles", bound.degenerate_triangles);
        }
        let mut background = load_splat_file_as(bg, Group::Background)?;
        let lp = labels_path(bg);
        if lp.exists() {
            load_labels(&mut background, &lp)?;
        }
        let head_transform = match &a.transform {
            Some(p) => read_matrix4(p)?,
            None => RigidTransform::IDENTITY,
        };
        let cameras: Vec<NamedCamera> = match &a.cameras {
            Some(p) => read_json(p)?,
            None => Vec::new(),
        };
        SceneBundle {
            model,
            head: bound.cloud,
            binding: bound.binding,
            background,
            head_transform,
            cameras,
        }
    };
    bundle.save(&a.out_dir)?;
    if a.with_guidance {
        let g = bundle.render_guidance(&bundle.composed(), &bundle.neutral_params(), &config.render)?;
        g.save(a.out_dir.join("guidance"))?;
    }
    config.write_resolved(&a.out_dir)?;
    println!(
        "scene with {} head and {} background Gaussians written to {}",
        bundle.head.len(),
        bundle.background.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Res<()> {
    let ext = |p: &Path| p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    match (ext(&a.input).as_str(), ext(&a.output).as_str()) {
        ("ply", "ply") => {
            let mut c = load_splat_file(&a.input)?;
            let lp = labels_path(&a.input);
            if lp.exists() {
                load_labels(&mut c, &lp)?;
            }
            save_splat_file(&c, &a.output)?;
            save_labels(&c, labels_path(&a.output))?;
        }
        ("raster", "png") => {
            let img = load_float_raster(&a.input)?;
            let img = match img.channels {
                3 => img,
                1 => {
                    // normalize single-channel data (e.g. depth) to [0, 1]
                    let (lo, hi) = img.finite_range().unwrap_or((0.0, 1.0));
                    let span = if hi > lo { hi - lo } else { 1.0 };
                    FloatImage {
                        channels: 3,
                        data: img
                            .data
                            .iter()
                            .flat_map(|v| [if v.is_finite() { (v - lo) / span } else { 1.0 }; 3])
                            .collect(),
                        ..img
                    }
                }
                c => return Err(Error::invalid(format!("cannot convert a {c}-channel raster")).into()),
            };
            save_png(&img, &a.output)?;
        }
        (i, o) => return Err(Failure::Usage(format!("unsupported conversion .{i} -> .{o}"))),
    }
    Ok(())
}

fn cmd_serve(config: EngineConfig, a: ServeArgs) -> Res<()> {
    let mut svc = config.service.clone();
    if let Some(b) = a.bind {
        svc.bind = b;
    }
    if let Some(f) = a.fps_cap {
        svc.fps_cap = f;
    }
    if let Some(f) = a.format {
        svc.format = f;
    }
    let ui_dir = a.ui.map(|p| {
        if p.as_os_str().is_empty() {
            config.paths.ui_dir.clone().unwrap_or_else(|| PathBuf::from("viewer-ui/dist"))
        } else {
            p
        }
    });
    let scene = load_scene(&a.scene)?;
    let camera: CameraRig = scene.camera(&a.camera)?.clone();
    let session = Arc::new(Session::new(scene, camera, config.render, svc.format, svc.client_buffer)?);
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::io("tokio runtime", e))?;
    rt.block_on(async move {
        let listener = headsplat_service::bind(&svc.bind).await.map_err(|e| Error::io(&svc.bind, e))?;
        headsplat_service::serve(
            session,
            listener,
            ServeOptions {
                fps_cap: svc.fps_cap,
                ui_dir,
            },
        )
        .await
        .map_err(|e| Error::io("server", e))
    })?;
    Ok(())
}

fn cmd_selftest(a: SelftestArgs) -> Res<()> {
    let mut failed = 0;
    for c in selfcheck::run_all(a.quick) {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    let (cloud, cam) = selfcheck::benchmark_scene(a.bench_gaussians, a.bench_size);
    let r = selfcheck::benchmark(&cloud, &cam, if a.quick { 512 } else { 4096 }, 3)?;
    println!(
        "INFO renderer: {} Gaussians at {}x{}: {:.3}s/frame ({:.2} FPS); brute force ~{:.2}s; speedup {:.1}x",
        r.gaussians,
        r.width,
        r.height,
        r.tiled_seconds,
        r.fps(),
        r.reference_seconds,
        r.speedup()
    );
    if failed > 0 {
        return Err(Failure::ChecksFailed(failed));
    }
    Ok(())
}
