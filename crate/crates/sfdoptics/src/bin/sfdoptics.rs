use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::LevelFilter;
use sfdoptics::dataset::{append_report, crop_op_map, write_patches, write_report, Manifest, ReportRow};
use sfdoptics::frames::{self, FrameFormat, FramesMeta};
use sfdoptics::io::{self, read_json, write_json};
use sfdoptics::parallel::build_lut_parallel;
use sfdoptics::ssop::{process_ssop, SsopFilterConfig};
use sfdoptics::study::{phantom_set, run_phantom_study, StudyConfig};
use sfdoptics_core::calibration::{REFERENCE_MUA, REFERENCE_MUSP};
use sfdoptics_core::evalkit::{
    compare_report, export_patches, import_prediction, InputFrame, PackingMode, PackingScales, Roi, StridePolicy,
    DEFAULT_PATCH_SIZE,
};
use sfdoptics_core::lut::{default_mua_grid, default_musp_grid, log_grid, DEFAULT_FX_AC};
use sfdoptics_core::sfdi::{process_sfdi_profile_corrected, DEFAULT_FX_PROFILOMETRY};
use sfdoptics_core::synth::{
    height_calibration, make_scene, render_frameset, render_profilometry, render_snapshot, CameraModel, SceneSpec,
    DEFAULT_K_HEIGHT,
};
use sfdoptics_core::{calibrate_from_phantom, process_sfdi, LookupTable, Mask, TransportConfig};

const LUT_ENV: &str = "SFDOPTICS_LUT_CACHE";

#[derive(Parser)]
#[command(name = "sfdoptics", version, about = "Spatial-frequency-domain optical property imaging")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Seed for Monte Carlo and camera noise streams; overrides config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "warn")]
    log_level: LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lookup table operations.
    Lut {
        #[command(subcommand)]
        command: LutCommand,
    },
    /// Render a synthetic scene to frames and ground truth.
    Synth(SynthArgs),
    /// Multi-frame processing.
    Sfdi {
        #[command(subcommand)]
        command: SfdiCommand,
    },
    /// Single-snapshot processing.
    Ssop {
        #[command(subcommand)]
        command: SsopCommand,
    },
    /// Export paired training patches.
    Dataset(DatasetArgs),
    /// Compare a prediction against a reference and append a report row.
    Eval(EvalArgs),
    /// Run SFDI and SSOP on the homogeneous phantom set.
    ReproducePhantomStudy(StudyArgs),
}

#[derive(Args)]
struct LutArg {
    /// Lookup table file (binary or .json).
    #[arg(long, env = LUT_ENV)]
    lut: Option<PathBuf>,
}

impl LutArg {
    fn load(&self) -> Result<LookupTable> {
        let path = self.lut.as_ref().with_context(|| format!("no lookup table: pass --lut or set {LUT_ENV}"))?;
        io::load_lut(path).with_context(|| format!("loading lookup table {}", path.display()))
    }
}

#[derive(Subcommand)]
enum LutCommand {
    /// Run the white Monte Carlo simulation and tabulate reflectance.
    Build(LutBuildArgs),
}

#[derive(Args)]
struct LutBuildArgs {
    /// Output path; a JSON twin is written next to binary tables.
    #[arg(long, env = LUT_ENV)]
    out: PathBuf,
    /// Transport configuration JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    photons: Option<u64>,
    #[arg(long)]
    partitions: Option<u32>,
    #[arg(long)]
    g: Option<f64>,
    /// Grid points per axis; defaults to the standard 128 x 128 grid.
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_FX_AC)]
    fx: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene description JSON.
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lut: LutArg,
    /// Camera model JSON; missing fields take defaults.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Store frames as raw doubles instead of 16-bit PNG.
    #[arg(long)]
    raw: bool,
    /// Also render profilometry frames.
    #[arg(long)]
    profilometry: bool,
    #[arg(long, default_value_t = DEFAULT_K_HEIGHT)]
    k_height: f64,
}

#[derive(Subcommand)]
enum SfdiCommand {
    /// Build a calibration set from frames of the reference phantom.
    Calibrate(CalibrateArgs),
    /// Image the reference phantom at several elevations for profile correction.
    HeightCal(HeightCalArgs),
    /// Recover optical property maps from a frame directory.
    Process(SfdiProcessArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lut: LutArg,
    #[arg(long, default_value_t = REFERENCE_MUA)]
    ref_mua: f64,
    #[arg(long, default_value_t = REFERENCE_MUSP)]
    ref_musp: f64,
}

#[derive(Args)]
struct HeightCalArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lut: LutArg,
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    width: usize,
    #[arg(long)]
    height: usize,
    /// Calibration elevations in mm.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 10.0, 20.0])]
    heights: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_K_HEIGHT)]
    k_height: f64,
}

#[derive(Args)]
struct SfdiProcessArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    cal: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lut: LutArg,
    /// Height calibration directory; enables profile correction using the
    /// prof_* frames.
    #[arg(long)]
    height_cal: Option<PathBuf>,
}

#[derive(Subcommand)]
enum SsopCommand {
    /// Recover optical property maps from one fringe image.
    Process(SsopProcessArgs),
}

#[derive(Args)]
struct SsopProcessArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    cal: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    lut: LutArg,
    /// Filter configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "verbatim")]
enum ModeArg {
    N1,
    N2,
    N3,
    N4,
}

impl From<ModeArg> for PackingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::N1 => PackingMode::N1,
            ModeArg::N2 => PackingMode::N2,
            ModeArg::N3 => PackingMode::N3,
            ModeArg::N4 => PackingMode::N4,
        }
    }
}

#[derive(Args)]
struct DatasetArgs {
    /// Frame directory; AC modes read `snapshot`, DC modes read `dc_0`.
    #[arg(long)]
    frames: PathBuf,
    /// Optical property map directory used as the target.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    cal: PathBuf,
    /// Dataset root.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Scene name used in patch file names; defaults to the frame directory name.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
    patch: usize,
    /// Number of random patches; tiles the frame when omitted.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Optical property map directory, or an RGB prediction PNG.
    #[arg(long)]
    pred: PathBuf,
    /// Reference optical property map directory.
    #[arg(long)]
    truth: PathBuf,
    /// Report CSV; rows are appended.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    scene: String,
    #[arg(long)]
    method: String,
    /// Evaluation mask PNG; defaults to the whole image.
    #[arg(long, conflicts_with = "roi_side")]
    mask: Option<PathBuf>,
    /// Use a centred square ROI of this side as the mask.
    #[arg(long)]
    roi_side: Option<usize>,
    /// Top-left `row,col` of a patch prediction within the reference.
    #[arg(long, value_parser = parse_origin)]
    origin: Option<(usize, usize)>,
    /// Write percent-difference maps here.
    #[arg(long)]
    diff_dir: Option<PathBuf>,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long)]
    out: PathBuf,
    /// Lookup table; built from scratch when absent.
    #[arg(long, env = LUT_ENV)]
    lut: Option<PathBuf>,
    /// Photons for a freshly built table.
    #[arg(long, default_value_t = 1_000_000)]
    photons: u64,
    /// Study configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_origin(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((n(r)?, n(c)?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Lut { command: LutCommand::Build(a) } => lut_build(a, seed),
        Command::Synth(a) => synth(a, seed),
        Command::Sfdi { command } => match command {
            SfdiCommand::Calibrate(a) => sfdi_calibrate(a),
            SfdiCommand::HeightCal(a) => sfdi_height_cal(a, seed),
            SfdiCommand::Process(a) => sfdi_process(a),
        },
        Command::Ssop { command: SsopCommand::Process(a) } => ssop_process(a),
        Command::Dataset(a) => dataset(a, seed),
        Command::Eval(a) => eval(a),
        Command::ReproducePhantomStudy(a) => study(a, seed),
    }
}

fn optional_json<T: for<'de> serde::Deserialize<'de> + Default>(path: Option<&PathBuf>) -> Result<T> {
    Ok(match path {
        Some(p) => read_json(p)?,
        None => T::default(),
    })
}

fn camera(path: Option<&PathBuf>, seed: Option<u64>) -> Result<CameraModel> {
    let mut cam: CameraModel = optional_json(path)?;
    if let Some(s) = seed {
        cam.noise_seed = s;
    }
    cam.validate()?;
    Ok(cam)
}

fn lut_build(a: LutBuildArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: TransportConfig = optional_json(a.config.as_ref())?;
    if let Some(p) = a.photons {
        cfg.photon_count = p;
    }
    if let Some(p) = a.partitions {
        cfg.partitions = p;
    }
    if let Some(g) = a.g {
        cfg.anisotropy_g = g;
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    let (mua, musp) = match a.grid_points {
        Some(n) => (log_grid(0.001, 0.5, n), log_grid(0.05, 5.0, n)),
        None => (default_mua_grid(), default_musp_grid()),
    };
    let lut = build_lut_parallel(&cfg, mua, musp, a.fx)?;
    io::save_lut(&a.out, &lut)?;
    log::info!("wrote {}", a.out.display());
    Ok(())
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let lut = a.lut.load()?;
    let spec: SceneSpec = read_json(&a.scene)?;
    let cam = camera(a.camera.as_ref(), seed)?;
    let scene = make_scene(&spec, &lut)?;
    let format = if a.raw { FrameFormat::Raw } else { FrameFormat::Png16 };
    io::ensure_dir(&a.out)?;
    let frameset = render_frameset(&scene, &lut, &cam)?;
    let mut meta = FramesMeta { fx_ac: lut.fx_ac(), fx_profilometry: None, k_height: None };
    frames::write_frame(&a.out, "snapshot", &render_snapshot(&scene, &lut, &cam)?, format)?;
    if a.profilometry {
        let prof = render_profilometry(&scene, &lut, &cam, DEFAULT_FX_PROFILOMETRY, a.k_height)?;
        for (k, img) in prof.iter().enumerate() {
            frames::write_frame(&a.out, &format!("prof_{k}"), img, format)?;
        }
        meta.fx_profilometry = Some(DEFAULT_FX_PROFILOMETRY);
        meta.k_height = Some(a.k_height);
    }
    frames::write_frameset(&a.out, &frameset, &meta, format)?;
    io::save_op_map(&a.out.join("truth"), &scene.op)?;
    if let Some(h) = &scene.height {
        io::write_image(&a.out.join("truth").join("height.f64"), &h.height, None)?;
    }
    write_json(&a.out.join("scene.json"), &spec)?;
    Ok(())
}

fn sfdi_calibrate(a: CalibrateArgs) -> Result<()> {
    let lut = a.lut.load()?;
    let frameset = frames::read_frameset(&a.frames)?;
    let cal = calibrate_from_phantom(&frameset, &lut, a.ref_mua, a.ref_musp)?;
    io::save_calibration(&a.out, &cal)?;
    Ok(())
}

fn sfdi_height_cal(a: HeightCalArgs, seed: Option<u64>) -> Result<()> {
    let lut = a.lut.load()?;
    let cam = camera(a.camera.as_ref(), seed)?;
    let hc = height_calibration(&lut, &cam, a.width, a.height, &a.heights, a.k_height)?;
    io::save_height_calibration(&a.out, &hc)?;
    Ok(())
}

fn sfdi_process(a: SfdiProcessArgs) -> Result<()> {
    let lut = a.lut.load()?;
    let frameset = frames::read_frameset(&a.frames)?;
    let cal = io::load_calibration(&a.cal)?;
    let op = match &a.height_cal {
        Some(dir) => {
            let hc = io::load_height_calibration(dir)?;
            let prof = frames::read_profilometry(&a.frames)?;
            process_sfdi_profile_corrected(&frameset, &prof, &cal, &lut, &hc)?
        }
        None => process_sfdi(&frameset, &cal, &lut)?,
    };
    report_valid(&op.valid);
    io::save_op_map(&a.out, &op)?;
    Ok(())
}

fn ssop_process(a: SsopProcessArgs) -> Result<()> {
    let lut = a.lut.load()?;
    let cfg: SsopFilterConfig = optional_json(a.config.as_ref())?;
    cfg.validate()?;
    let img = io::read_image(&a.image)?;
    let cal = io::load_calibration(&a.cal)?;
    let op = process_ssop(&img, &cal, &lut, &cfg)?;
    report_valid(&op.valid);
    io::save_op_map(&a.out, &op)?;
    Ok(())
}

fn report_valid(valid: &Mask) {
    log::info!("{:.2}% of pixels valid", valid.fraction() * 100.0);
}

fn dataset(a: DatasetArgs, seed: Option<u64>) -> Result<()> {
    let mode = PackingMode::from(a.mode);
    let frame_path = frames::find_frame(&a.frames, if mode.uses_ac_frame() { "snapshot" } else { "dc_0" })?;
    let frame = io::read_image(&frame_path)?;
    let op = io::load_op_map(&a.truth)?;
    let cal = io::load_calibration(&a.cal)?;
    let policy = match a.count {
        Some(count) => StridePolicy::Random { seed: seed.unwrap_or(1), count },
        None => StridePolicy::Tiled,
    };
    let input = if mode.uses_ac_frame() { InputFrame::Ac(&frame) } else { InputFrame::Dc(&frame) };
    let scales = PackingScales::default();
    let pairs = export_patches(input, &op, &cal, mode, policy, a.patch, scales)?;
    let scene = match a.scene {
        Some(s) => s,
        None => dir_name(&a.frames)?,
    };
    io::ensure_dir(&a.out)?;
    let mut manifest = Manifest::open(&a.out, a.patch, scales)?;
    write_patches(&a.out, &mut manifest, &scene, &pairs, policy)?;
    manifest.save(&a.out)?;
    log::info!("wrote {} {} patches for {scene}", pairs.len(), mode.name());
    Ok(())
}

fn dir_name(p: &Path) -> Result<String> {
    p.canonicalize()?
        .file_name()
        .and_then(|n| n.to_str())
        .map(str::to_owned)
        .with_context(|| format!("cannot derive a scene name from {}", p.display()))
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut truth = io::load_op_map(&a.truth)?;
    let pred = if a.pred.is_file() {
        let (pw, ph, rgb) = io::read_rgb(&a.pred)?;
        import_prediction(&rgb, pw, ph, truth.mua.pixel_pitch(), PackingScales::default())?
    } else {
        io::load_op_map(&a.pred)?
    };
    if let Some(origin) = a.origin {
        let (pw, ph) = pred.dims();
        truth = crop_op_map(&truth, origin, pw, ph)?;
    }
    let (w, h) = truth.dims();
    let mask = match (&a.mask, a.roi_side) {
        (Some(p), _) => io::read_mask(p)?,
        (None, Some(side)) => Roi::centered(w, h, side).mask(w, h),
        (None, None) => Mask::filled(w, h, true),
    };
    let c = compare_report(&pred, &truth, &mask)?;
    if let Some(dir) = &a.diff_dir {
        io::ensure_dir(dir)?;
        io::write_image(&dir.join("percent_diff_mua.f64"), &c.percent_diff_mua, None)?;
        io::write_image(&dir.join("percent_diff_musp.f64"), &c.percent_diff_musp, None)?;
    }
    append_report(&a.out, &[ReportRow::new(&a.scene, &a.method, &c)])?;
    println!(
        "{} {}: NMAE μa {:.4}, μs′ {:.4}, valid {:.4}",
        a.scene, a.method, c.nmae_mua, c.nmae_musp, c.valid_fraction
    );
    Ok(())
}

fn study(a: StudyArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(1);
    let mut cfg: StudyConfig = optional_json(a.config.as_ref())?;
    cfg.camera.noise_seed = seed;
    let lut = match &a.lut {
        Some(p) if p.exists() => io::load_lut(p)?,
        cache => {
            let tc = TransportConfig { photon_count: a.photons, rng_seed: seed, ..TransportConfig::default() };
            let lut = build_lut_parallel(&tc, default_mua_grid(), default_musp_grid(), DEFAULT_FX_AC)?;
            if let Some(p) = cache {
                io::save_lut(p, &lut)?;
            }
            lut
        }
    };
    let rows = run_phantom_study(&lut, &phantom_set(), &cfg)?;
    io::ensure_dir(&a.out)?;
    write_report(&a.out.join("phantom_study.csv"), &rows)?;
    write_json(&a.out.join("study_config.json"), &cfg)?;
    Ok(())
}
