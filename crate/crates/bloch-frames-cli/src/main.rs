use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bloch_frames::framesyn::{construct_frame, FrameKind, FrameOptions};
use bloch_frames::hofstadter::{butterfly, supercell_reduce, BandScan, MagneticFlux};
use bloch_frames::io::{bands_csv, family_container, frame_container, frame_csv, lattice_container, write_json, FamilySidecar, InvariantReport, ModelFile};
use bloch_frames::kspace::{smooth_frame, BlochFrame, KGrid, LatticeBox, DEFAULT_FEJER_ORDER};
use bloch_frames::magframes::{magnetic_frame, window_gap, EnergyWindow, MagneticMode, PipelineOptions};
use bloch_frames::wannier::{frame_to_wannier, interpolation_study, max_box};
use bloch_frames::{HoppingModel64, ProjectionFamily64};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bloch-frames", version, about = "Bloch frames, Parseval frames and magnetic frames for lattice models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write model files.
    #[command(subcommand)]
    Model(ModelCmd),
    /// Band structure scans and interpolation.
    #[command(subcommand)]
    Bands(BandsCmd),
    /// Flux-versus-energy point cloud of the reduced fibers.
    Butterfly(ButterflyArgs),
    /// Periodic frame construction.
    #[command(subcommand)]
    Frame(FrameCmd),
    /// Frames under a weak additional magnetic field.
    #[command(subcommand)]
    Magnetic(MagneticCmd),
    /// Lattice functions of a periodic frame.
    #[command(subcommand)]
    Wannier(WannierCmd),
}

#[derive(Subcommand)]
enum ModelCmd {
    Build(BuildArgs),
}

#[derive(Subcommand)]
enum BandsCmd {
    Scan(ScanArgs),
    Interpolate(InterpolateArgs),
}

#[derive(Subcommand)]
enum FrameCmd {
    Construct(ConstructArgs),
}

#[derive(Subcommand)]
enum MagneticCmd {
    Perturb(PerturbArgs),
}

#[derive(Subcommand)]
enum WannierCmd {
    Emit(EmitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Nearest-neighbour square lattice, one orbital.
    Square,
    /// Two-band Chern insulator with mass `mu`.
    TwoBand,
    /// Massive lattice Dirac model in `dim` dimensions.
    Dirac,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long, value_enum)]
    preset: Preset,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value = "0/1")]
    flux: String,
    #[arg(long, default_value_t = 0.0)]
    eps: f64,
    #[arg(long = "box", default_value_t = 20)]
    box_radius: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScanArgs {
    #[arg(long)]
    model: PathBuf,
    /// Overrides the flux of the model file.
    #[arg(long)]
    flux: Option<String>,
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ButterflyArgs {
    /// Defaults to the square lattice.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    q_max: i64,
    #[arg(long, default_value_t = 16)]
    nk: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Basis,
    Subframe,
    Parseval,
}

impl From<Mode> for FrameKind {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Basis => FrameKind::Basis,
            Mode::Subframe => FrameKind::Subframe,
            Mode::Parseval => FrameKind::Parseval,
        }
    }
}

#[derive(Args)]
struct PeriodicArgs {
    #[arg(long)]
    model: PathBuf,
    /// Band indices `lo,hi` (half-open, ascending energy).
    #[arg(long, default_value = "0,1")]
    bands: String,
    /// Fejér order of the smoothing applied to bases and Parseval frames; 0 keeps the raw frame.
    #[arg(long, default_value_t = DEFAULT_FEJER_ORDER)]
    smooth: usize,
}

#[derive(Args)]
struct ConstructArgs {
    #[arg(long, value_enum)]
    mode: Mode,
    #[command(flatten)]
    periodic: PeriodicArgs,
    /// `N` or `N,N` or `N,N,N`; a single value is repeated over the model dimension.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MagMode {
    Basis,
    Parseval,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    flux: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
    /// `E-,E+`; use a value below the spectrum for an open lower end.
    #[arg(long, allow_hyphen_values = true)]
    window: String,
    #[arg(long, value_enum)]
    mode: MagMode,
    /// Radius of the box carrying the test vectors.
    #[arg(long = "box")]
    box_radius: Option<usize>,
    #[arg(long, default_value_t = 128)]
    grid: usize,
    /// Kernel radius (chosen from the decay of the periodic data when omitted).
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EmitArgs {
    #[arg(long, value_enum, default_value = "parseval")]
    mode: Mode,
    #[command(flatten)]
    periodic: PeriodicArgs,
    #[arg(long)]
    grid: String,
    /// Box radius of the emitted functions (at most half the grid).
    #[arg(long = "box")]
    box_radius: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long, value_enum, default_value = "parseval")]
    mode: Mode,
    #[command(flatten)]
    periodic: PeriodicArgs,
    #[arg(long)]
    coarse: usize,
    #[arg(long)]
    fine: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Model(ModelCmd::Build(a)) => build(a),
        Cmd::Bands(BandsCmd::Scan(a)) => scan(a),
        Cmd::Bands(BandsCmd::Interpolate(a)) => interpolate(a),
        Cmd::Butterfly(a) => run_butterfly(a),
        Cmd::Frame(FrameCmd::Construct(a)) => construct(a),
        Cmd::Magnetic(MagneticCmd::Perturb(a)) => perturb(a),
        Cmd::Wannier(WannierCmd::Emit(a)) => emit(a),
    }
}

fn build(a: BuildArgs) -> Result<()> {
    let model = match a.preset {
        Preset::Square => HoppingModel64::square_lattice(),
        Preset::TwoBand => HoppingModel64::two_band(a.mu),
        Preset::Dirac => HoppingModel64::dirac(a.dim, a.mu),
    };
    let file = ModelFile::from_model(&model, MagneticFlux::parse(&a.flux)?, a.eps, a.box_radius);
    file.save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load(path: &Path) -> Result<(ModelFile, HoppingModel64)> {
    let file = ModelFile::load(path).with_context(|| format!("reading model {}", path.display()))?;
    let model = file.model()?;
    Ok((file, model))
}

/// The periodic operator at the file's flux: the supercell reduction when
/// the flux is nonzero, the model itself otherwise.
fn periodic_model(model: &HoppingModel64, flux: MagneticFlux) -> Result<HoppingModel64> {
    if flux.p == 0 && flux.q == 1 {
        Ok(model.clone())
    } else {
        Ok(supercell_reduce(model, flux, 0.0)?.reduced)
    }
}

fn parse_grid(s: &str, dim: usize) -> Result<KGrid> {
    let sizes: Vec<usize> = s.split(',').map(|x| x.trim().parse::<usize>()).collect::<std::result::Result<_, _>>().context("grid sizes")?;
    let sizes = if sizes.len() == 1 { vec![sizes[0]; dim] } else { sizes };
    if sizes.len() != dim {
        bail!("grid has {} axes but the model is {dim}-dimensional", sizes.len());
    }
    Ok(KGrid::new(&sizes)?)
}

fn parse_bands(s: &str) -> Result<(usize, usize)> {
    let (a, b) = s.split_once(',').context("bands must be lo,hi")?;
    let (lo, hi) = (a.trim().parse()?, b.trim().parse()?);
    if lo >= hi {
        bail!("empty band range {lo}..{hi}");
    }
    Ok((lo, hi))
}

fn periodic_frame(p: &PeriodicArgs, grid: &str, mode: Mode) -> Result<(HoppingModel64, KGrid, ProjectionFamily64, BlochFrame<f64>, bloch_frames::framesyn::FrameCertificate, usize)> {
    let (file, model) = load(&p.model)?;
    let pm = periodic_model(&model, file.flux()?)?;
    let grid = parse_grid(grid, pm.dim)?;
    let (lo, hi) = parse_bands(&p.bands)?;
    let fam = pm.band_projection(&grid, lo, hi)?;
    let (mut frame, mut cert) = construct_frame(&fam, mode.into(), &FrameOptions::default())?;
    // A subframe does not span the range, so there is nothing to project back onto.
    if p.smooth > 0 && !matches!(mode, Mode::Subframe) {
        frame = smooth_frame(&frame, &fam, p.smooth)?;
        cert.frame_operator_defect = frame.frame_operator_defect(&fam);
        if matches!(mode, Mode::Basis) {
            cert.orthonormality_defect = frame.orthonormality_defect();
        }
        cert.range_defect = frame.vectors.iter().zip(&fam.mats).map(|(v, q)| (&q.matmul(v) - v).max_abs()).fold(0.0, f64::max);
    }
    Ok((pm, grid, fam, frame, cert, lo))
}

fn scan(a: ScanArgs) -> Result<()> {
    let (file, model) = load(&a.model)?;
    let flux = match &a.flux {
        Some(f) => MagneticFlux::parse(f)?,
        None => file.flux()?,
    };
    let pm = periodic_model(&model, flux)?;
    let grid = KGrid::new(&vec![a.grid; pm.dim])?;
    let hams = pm.hamiltonians(&grid);
    let scan = BandScan::from_hamiltonians(&grid, &hams)?;
    fs::write(&a.out, bands_csv(&grid, &scan.energies))?;
    let summary = serde_json::json!({ "flux": flux, "ranges": scan.ranges(), "gaps": scan.gaps(1e-6) });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn run_butterfly(a: ButterflyArgs) -> Result<()> {
    let model = match &a.model {
        Some(p) => load(p)?.1,
        None => HoppingModel64::square_lattice(),
    };
    let pts = butterfly(&model, a.q_max, a.nk)?;
    let mut csv = String::from("p,q,flux,energy\n");
    for p in &pts {
        csv.push_str(&format!("{},{},{},{:.12e}\n", p.p, p.q, p.flux, p.energy));
    }
    fs::write(&a.out, csv)?;
    println!("{} points written to {}", pts.len(), a.out.display());
    Ok(())
}

fn construct(a: ConstructArgs) -> Result<()> {
    let (_, grid, fam, frame, cert, _) = periodic_frame(&a.periodic, &a.grid, a.mode)?;
    fs::create_dir_all(&a.out)?;
    frame_container(&frame)?.save(&a.out.join("frame.bfc"))?;
    family_container(&fam)?.save(&a.out.join("family.bfc"))?;
    write_json(&a.out.join("family.json"), &FamilySidecar { rank: fam.rank, ambient_dim: fam.dim, twist: false })?;
    if grid.len() * frame.fiber * frame.count <= 20_000 {
        fs::write(a.out.join("frame.csv"), frame_csv(&frame))?;
    }
    let wannier = frame_to_wannier(&frame, max_box(&grid)?)?;
    let mut defects = BTreeMap::new();
    defects.insert("orthonormality".to_string(), cert.orthonormality_defect);
    defects.insert("frame_operator".to_string(), cert.frame_operator_defect);
    defects.insert("range".to_string(), cert.range_defect);
    defects.insert("matching".to_string(), cert.matching_residual);
    defects.insert("transport".to_string(), cert.transport_defect);
    defects.insert("plancherel".to_string(), wannier.plancherel_defect);
    let invariants = InvariantReport { chern: cert.chern.clone(), degrees: cert.discarded_degrees.clone(), defects };
    let out = serde_json::json!({ "frame": cert, "invariants": invariants, "decay": wannier.certificate() });
    write_json(&a.out.join("certificate.json"), &out)?;
    println!("{}", serde_json::to_string_pretty(&out["invariants"])?);
    Ok(())
}

fn perturb(a: PerturbArgs) -> Result<()> {
    let (file, model) = load(&a.model)?;
    let flux = match &a.flux {
        Some(f) => MagneticFlux::parse(f)?,
        None => file.flux()?,
    };
    let eps = a.eps.unwrap_or(file.eps);
    let window = EnergyWindow::parse(&a.window)?;
    let mode = match a.mode {
        MagMode::Basis => MagneticMode::Basis,
        MagMode::Parseval => MagneticMode::Parseval,
    };
    let opts = PipelineOptions { grid: a.grid, radius: a.radius, test_box: a.box_radius.unwrap_or(file.box_radius), ..Default::default() };
    let gap = window_gap(&model, flux.b0::<f64>() + eps, window, opts.test_box.min(14))?;
    let mut frame = magnetic_frame(&model, flux, eps, window, mode, &opts)?;
    frame.certify(&opts)?;
    fs::create_dir_all(&a.out)?;
    lattice_container(&frame.seed_functions())?.save(&a.out.join("seeds.bfc"))?;
    let admissible = frame.certificate.hypotheses.hold() && gap > 0.0;
    let out = serde_json::json!({ "certificate": frame.certificate, "window_gap": gap, "admissible": admissible });
    write_json(&a.out.join("certificate.json"), &out)?;
    println!("{}", serde_json::to_string_pretty(&out)?);
    if !admissible {
        bail!("ε = {eps} is not admissible for this window");
    }
    Ok(())
}

fn emit(a: EmitArgs) -> Result<()> {
    let (_, grid, _, frame, _, _) = periodic_frame(&a.periodic, &a.grid, a.mode)?;
    let lbox = match a.box_radius {
        Some(r) => LatticeBox::new(grid.dim(), r)?,
        None => max_box(&grid)?,
    };
    let set = frame_to_wannier(&frame, lbox)?;
    fs::create_dir_all(&a.out)?;
    lattice_container(&set.functions)?.save(&a.out.join("wannier.bfc"))?;
    let cert = set.certificate();
    write_json(&a.out.join("decay.json"), &cert)?;
    println!("{}", serde_json::to_string_pretty(&cert)?);
    Ok(())
}

fn interpolate(a: InterpolateArgs) -> Result<()> {
    let (file, model) = load(&a.periodic.model)?;
    let pm = periodic_model(&model, file.flux()?)?;
    let dim = pm.dim;
    let (_, fine, fam, frame, _, lo) = periodic_frame(&a.periodic, &a.fine.to_string(), a.mode)?;
    let coarse = KGrid::new(&vec![a.coarse; dim])?;
    let hams = pm.hamiltonians(&fine);
    let (report, bands) = interpolation_study(&frame, &hams, &fam, lo, &coarse)?;
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("bands.csv"), bands_csv(&fine, &bands))?;
    write_json(&a.out.join("interpolation.json"), &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
