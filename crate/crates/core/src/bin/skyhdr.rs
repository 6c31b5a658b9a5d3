use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use skyhdr::capture::{self, parse_seconds, BracketPlan, DirectorySink, StationConfig};
use skyhdr::fusion::{fuse, fusion_report};
use skyhdr::glare::{render_overlay, saturation_report, RegionOfInterest, DEFAULT_THRESHOLD};
use skyhdr::imageio::{self, LoadWarning};
use skyhdr::response::{load_curve, save_curve, select_samples, solve_response_detailed, SolverConfig};
use skyhdr::thermo::{analyze_trace, simulate, PlantConfig, PlantModel, Thresholds};
use skyhdr::tonemap::{equalize_adaptive, equalize_global, TonemapConfig};
use skyhdr::{Error, ExposureStack};

/// HDR processing and station tools for whole-sky imagers.
#[derive(Parser, Debug)]
#[command(name = "skyhdr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recover the camera response curve from an exposure bracket.
    Respond(RespondArgs),
    /// Fuse an exposure bracket into a radiance map (PFM plus validity mask).
    Fuse(FuseArgs),
    /// Tone-map a radiance map to an 8-bit image.
    Tonemap(TonemapArgs),
    /// Measure saturated pixels in a region of an 8-bit image.
    Glare(GlareArgs),
    /// Simulate a day of enclosure temperature under the cooler controller.
    ThermoSim(ThermoArgs),
    /// Run the capture loop against the synthetic camera.
    Station(StationArgs),
    /// Render a noiseless synthetic bracket of the reference sun scene.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct StackArgs {
    /// Bracket images (PPM or PNG), shortest exposure first.
    #[arg(required = true)]
    images: Vec<PathBuf>,
    /// Shutter times in seconds, comma separated; fractions like 1/500 are accepted.
    #[arg(long, value_delimiter = ',', required = true)]
    times: Vec<String>,
}

#[derive(Args, Debug)]
struct RespondArgs {
    #[command(flatten)]
    stack: StackArgs,
    /// Smoothness weight.
    #[arg(long, default_value_t = SolverConfig::default().lambda)]
    lambda: f64,
    /// Number of sample pixels.
    #[arg(long, default_value_t = SolverConfig::default().sample_count)]
    samples: usize,
    /// Sample selection seed.
    #[arg(long, default_value_t = SolverConfig::default().seed)]
    seed: u64,
    /// Output curve table.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[command(flatten)]
    stack: StackArgs,
    /// Response curve table written by `respond`.
    #[arg(long)]
    curve: PathBuf,
    /// Output radiance map (.pfm); the mask goes next to it as .mask.pgm.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TonemapArgs {
    /// Radiance map (.pfm).
    map: PathBuf,
    /// Tile grid, either N or NxM (columns x rows).
    #[arg(long, default_value = "8x8")]
    tiles: String,
    /// Per-bin clip limit as a fraction of the tile pixel count; 1 or more disables clipping.
    #[arg(long, default_value_t = TonemapConfig::default().clip_limit)]
    clip: f64,
    /// Use global equalization instead of the adaptive operator.
    #[arg(long)]
    global: bool,
    /// Output image (.ppm, or .png).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GlareArgs {
    /// 8-bit image (PPM or PNG).
    image: PathBuf,
    /// Region as x,y,w,h; the whole image when omitted.
    #[arg(long)]
    roi: Option<String>,
    /// Saturation threshold on the brightest channel.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD, value_parser = clap::value_parser!(u8).range(1..))]
    threshold: u8,
    /// Write the saturation overlay here.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ThermoArgs {
    /// Enclosure model: sealed or ventilated.
    #[arg(long, default_value = "sealed")]
    model: String,
    /// Simulated duration in hours.
    #[arg(long, default_value_t = 24.0)]
    hours: f64,
    /// Integration step in seconds.
    #[arg(long, default_value_t = 1.0)]
    dt: f64,
    /// Output trace CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StationArgs {
    /// key=value station configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for images and the capture manifest.
    #[arg(long, default_value = "captures")]
    out: PathBuf,
    /// Wait for each trigger time on the wall clock instead of running back to back.
    #[arg(long)]
    realtime: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
    /// Camera gamma.
    #[arg(long, default_value_t = 2.2)]
    gamma: f64,
    /// Base shutter time in seconds.
    #[arg(long, default_value = "1/250")]
    base_shutter: String,
    /// EV offsets, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_values_t = capture::DEFAULT_EV_OFFSETS)]
    ev_offsets: Vec<f64>,
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn load_stack(args: &StackArgs) -> std::result::Result<ExposureStack, Failure> {
    if args.images.len() < 2 {
        return Err(usage(format!("need at least 2 images, got {}", args.images.len())));
    }
    if args.times.len() != args.images.len() {
        return Err(usage(format!("{} images but {} shutter times", args.images.len(), args.times.len())));
    }
    let times = args.times.iter().map(|t| parse_seconds(t)).collect::<Result<Vec<_>, _>>().map_err(|e| usage(e.to_string()))?;
    let images = args.images.iter().map(imageio::read_ldr).collect::<Result<Vec<_>, _>>()?;
    Ok(ExposureStack::new(images, times)?)
}

fn parse_tiles(s: &str) -> std::result::Result<(usize, usize), Failure> {
    let bad = || usage(format!("--tiles must be N or NxM, got {s:?}"));
    let (x, y) = match s.split_once(['x', 'X']) {
        Some((x, y)) => (x, y),
        None => (s, s),
    };
    Ok((x.trim().parse().map_err(|_| bad())?, y.trim().parse().map_err(|_| bad())?))
}

fn cmd_respond(args: RespondArgs) -> CmdResult {
    let stack = load_stack(&args.stack)?;
    let config = SolverConfig { lambda: args.lambda, sample_count: args.samples, seed: args.seed };
    let plan = select_samples(&stack, &config)?;
    let solution = solve_response_detailed(&stack, &plan, &config)?;
    save_curve(&solution.curve, &args.out)?;
    for (c, d) in ["r", "g", "b"].iter().zip(&solution.diagnostics) {
        println!(
            "channel={c} rows={} unknowns={} samples={} pivot_ratio={:.3e} normal_residual={:.3e} data_rms={:.6}",
            d.rows, d.unknowns, d.used_samples, d.diag_ratio, d.normal_residual, d.data_rms
        );
    }
    Ok(())
}

fn cmd_fuse(args: FuseArgs) -> CmdResult {
    let stack = load_stack(&args.stack)?;
    let curve = load_curve(&args.curve)?;
    let map = fuse(&stack, &curve)?;
    imageio::write_radiance(&map, &args.out)?;
    println!("{}", fusion_report(&map)?);
    Ok(())
}

fn cmd_tonemap(args: TonemapArgs) -> CmdResult {
    let (tiles_x, tiles_y) = parse_tiles(&args.tiles)?;
    let (map, warnings) = imageio::read_radiance(&args.map)?;
    for w in warnings {
        let LoadWarning::MissingMask(p) = w;
        eprintln!("warning: no mask at {}, treating every pixel as valid", p.display());
    }
    let img = if args.global {
        equalize_global(&map)?
    } else {
        equalize_adaptive(&map, &TonemapConfig { tiles_x, tiles_y, clip_limit: args.clip })?
    };
    imageio::write_ldr(&img, &args.out)?;
    println!("width={} height={} valid={}", img.width(), img.height(), map.valid_count());
    Ok(())
}

fn cmd_glare(args: GlareArgs) -> CmdResult {
    let img = imageio::read_ldr(&args.image)?;
    let roi = match &args.roi {
        Some(s) => s.parse::<RegionOfInterest>().map_err(|e| usage(e.to_string()))?,
        None => RegionOfInterest::full(&img),
    };
    let report = saturation_report(&img, &roi, args.threshold)?;
    if let Some(path) = &args.overlay {
        imageio::write_ldr(&render_overlay(&img, &roi, args.threshold)?, path)?;
    }
    println!("{report}");
    Ok(())
}

fn cmd_thermo(args: ThermoArgs) -> CmdResult {
    let model: PlantModel = args.model.parse().map_err(|e: Error| usage(e.to_string()))?;
    if !(args.hours >= 0.0) || !args.hours.is_finite() {
        return Err(usage(format!("--hours must be non-negative, got {}", args.hours)));
    }
    let plant = PlantConfig { dt: args.dt, ..PlantConfig::for_model(model) };
    let trace = simulate(&plant, &Thresholds::default(), args.hours * 3600.0)?;
    if let Some(path) = &args.out {
        trace.save(path)?;
    }
    println!("{}", analyze_trace(&trace)?);
    Ok(())
}

fn cmd_station(args: StationArgs) -> CmdResult {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let config = StationConfig::parse(&text)?;
    let mut camera = config.camera()?;
    let mut sink = DirectorySink::new(&args.out)?;
    let log = if args.realtime {
        capture::run_station(&config.schedule, &config.plan, &mut camera, &mut sink, &mut capture::SystemClock)
    } else {
        capture::run_station(&config.schedule, &config.plan, &mut camera, &mut sink, &mut capture::SimulatedClock)
    };
    println!(
        "triggers={} brackets={} failures={} images_per_bracket={}",
        log.events.len(),
        log.successes(),
        log.failures(),
        config.plan.ev_offsets.len()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    let base = parse_seconds(&args.base_shutter).map_err(|e| usage(e.to_string()))?;
    let plan = BracketPlan::new(base, args.ev_offsets.clone(), "smallest")?;
    let (_, scene) = skyhdr::scene::sun_scene(args.width, args.height)?;
    let camera = capture::SyntheticCameraConfig::noiseless(scene, args.gamma);
    camera.validate()?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let times = capture::plan_bracket(&plan);
    for (ev, &dt) in args.ev_offsets.iter().zip(&times) {
        let path = args.out.join(format!("bracket_ev{ev:+}.ppm"));
        imageio::write_ldr(&capture::synth_capture(&camera, dt)?, &path)?;
        println!("{}", path.display());
    }
    let times: Vec<String> = times.iter().map(f64::to_string).collect();
    println!("times={}", times.join(","));
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Respond(a) => cmd_respond(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Tonemap(a) => cmd_tonemap(a),
        Command::Glare(a) => cmd_glare(a),
        Command::ThermoSim(a) => cmd_thermo(a),
        Command::Station(a) => cmd_station(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
