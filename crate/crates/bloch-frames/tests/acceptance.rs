//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 4 9`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bloch_frames::error::FrameError;
use bloch_frames::families::{exp_i_family, HermitianFamily, ProjectionFamily, UnitaryFamily};
use bloch_frames::framesyn::{construct_bloch_basis, construct_parseval_frame, construct_subframe, two_step_log, FrameCertificate, FrameOptions};
use bloch_frames::hofstadter::{build_hofstadter, hausdorff_to_ranges, interior_spectrum, supercell_reduce, BandScan, Hopping, HoppingModel, MagneticFlux};
use bloch_frames::kspace::{smooth_frame, BlochFrame, KGrid, LatticeBox, DEFAULT_FEJER_ORDER};
use bloch_frames::magframes::{
    combes_thomas_sweep, kato_nagy, kato_nagy_dense, magnetic_frame, nenciu_projection, resolvent_decay, riesz_projection, window_gap, intertwining_residual, EnergyWindow,
    MagneticMode, PipelineOptions,
};
use bloch_frames::magkernel::{interior_test_vectors, IterOptions, MagneticKernel};
use bloch_frames::transport::{chern_plaquette, chern_riemann};
use bloch_frames::wannier::{effective_hamiltonian, fit_shell_decay, frame_to_wannier, interpolation_study, max_box};
use bloch_frames::{CMat, Result};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = HoppingModel<f64>;

/// Outcome of one criterion: named sub-checks plus free-form measurements.
#[derive(Default)]
struct Outcome {
    checks: Vec<(String, bool)>,
    notes: Vec<String>,
}

impl Outcome {
    fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.1)
    }
}

fn harper() -> (M, MagneticFlux) {
    (M::square_lattice(), MagneticFlux::new(1, 3).unwrap())
}

fn harper_reduced() -> M {
    let (m, flux) = harper();
    supercell_reduce(&m, flux, 0.0).unwrap().reduced
}

fn grid(n: usize, d: usize) -> KGrid {
    KGrid::new(&vec![n; d]).unwrap()
}

/// Two-band model stacked along a third axis with a weak mass modulation.
fn stacked() -> M {
    let base = M::two_band(3.0);
    let mut hops: Vec<Hopping<f64>> = base.hoppings.iter().map(|h| Hopping { disp: vec![h.disp[0], h.disp[1], 0], block: h.block.clone() }).collect();
    let z = CMat::from_real_diag(&[0.25, -0.25]);
    for s in [1, -1] {
        hops.push(Hopping { disp: vec![0, 0, s], block: z.clone() });
    }
    M::new(3, vec![vec![0.0; 3]; 2], hops).unwrap()
}

fn c1_chern() -> Result<Outcome> {
    let mut out = Outcome::default();
    let cases: [(&str, M, i64); 3] = [("two-band mu=1", M::two_band(1.0), 1), ("two-band mu=3", M::two_band(3.0), 0), ("harper 1/3", harper_reduced(), 1)];
    for (name, model, expected) in cases {
        let fam = model.band_projection(&grid(32, 2), 0, 1)?;
        let slice = chern_plaquette(&fam, 0, 1)?;
        let raw = slice.raw[0];
        let c = slice.value;
        let riemann = chern_riemann(&fam, 0, 1);
        let (_, cert) = construct_subframe(&fam, &FrameOptions::default())?;
        let deg = cert.discarded_degrees[0];
        out.note(format!("{name}: c={c} raw={raw:.2e} riemann={riemann:.4} degree={deg}"));
        out.check(format!("{name} integer"), (raw - raw.round()).abs() < 1e-9);
        out.check(format!("{name} riemann"), (riemann - c as f64).abs() < 0.05);
        out.check(format!("{name} degree"), deg == c);
        out.check(format!("{name} expected"), c.abs() == expected);
    }
    Ok(out)
}

fn basis_residuals(cert: &FrameCertificate) -> f64 {
    cert.orthonormality_defect.max(cert.range_defect).max(cert.matching_residual)
}

fn c2_trivial_bases() -> Result<Outcome> {
    let mut out = Outcome::default();
    let cases: [(&str, M, KGrid, usize); 3] = [
        ("d=1 dirac", M::dirac(1, 1.5), grid(64, 1), 2),
        ("d=2 two-band", M::two_band(3.0), grid(64, 2), 1),
        ("d=3 stacked", stacked(), grid(16, 3), 1),
    ];
    for (name, model, g, rank) in cases {
        let fam = model.band_projection(&g, 0, rank)?;
        let (frame, cert) = construct_bloch_basis(&fam, &FrameOptions::default())?;
        let res = basis_residuals(&cert);
        let set = frame_to_wannier(&frame, max_box(&g)?)?;
        let rate = set.decay.iter().map(|d| d.rate).fold(f64::INFINITY, f64::min);
        let r2 = set.decay.iter().map(|d| d.r_squared).fold(f64::INFINITY, f64::min);
        out.note(format!("{name}: count={} residual={res:.1e} beta={rate:.3} R2={r2:.4}", frame.count));
        out.check(format!("{name} count"), frame.count == rank);
        out.check(format!("{name} residuals"), res < 1e-8);
        out.check(format!("{name} decay"), set.decay.iter().all(|d| d.rate > 0.0 && d.r_squared > 0.98));
    }
    Ok(out)
}

fn chern_pair(n: usize) -> Result<ProjectionFamily<f64>> {
    let g = grid(n, 2);
    M::two_band(1.0).band_projection(&g, 0, 1)?.direct_sum(&M::two_band(3.0).band_projection(&g, 0, 1)?)
}

fn c3_subframe() -> Result<Outcome> {
    let mut out = Outcome::default();
    let fam = chern_pair(32)?;
    let (frame, cert) = construct_subframe(&fam, &FrameOptions::default())?;
    let res = basis_residuals(&cert);
    out.note(format!("chern={:?} count={} residual={res:.1e} discarded={:?}", cert.chern, frame.count, cert.discarded_degrees));
    out.check("rank-2 chern 1", fam.rank == 2 && cert.chern["01"].abs() == 1);
    out.check("one vector", frame.count == 1);
    out.check("residuals", res < 1e-8);
    out.check("discarded winding", cert.discarded_degrees.len() == 1 && cert.discarded_degrees[0].abs() == 1 && cert.discarded_degrees[0] == cert.chern["01"]);
    Ok(out)
}

fn c4_parseval() -> Result<Outcome> {
    let mut out = Outcome::default();
    let cases = [("rank 1", M::two_band(1.0).band_projection(&grid(32, 2), 0, 1)?, 2), ("rank 2", chern_pair(32)?, 3)];
    for (name, fam, count) in cases {
        let (frame, cert) = construct_parseval_frame(&fam, &FrameOptions::default())?;
        out.note(format!("{name}: count={} frame-operator={:.1e} doubled={:?}", frame.count, cert.frame_operator_defect, cert.doubled_chern));
        out.check(format!("{name} count"), frame.count == count);
        out.check(format!("{name} frame operator"), cert.frame_operator_defect < 1e-8);
        out.check(format!("{name} doubled chern"), !cert.doubled_chern.is_empty() && cert.doubled_chern.values().all(|&c| c == 0));
    }
    Ok(out)
}

/// Random Hermitian trigonometric polynomial of degree 2 on a circle.
fn random_hermitian(rng: &mut ChaCha8Rng, g: &KGrid, m: usize, scale: f64) -> HermitianFamily<f64> {
    let mut coef = || CMat::from_fn(m, m, |_, _| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).scale(scale));
    let a: Vec<CMat<f64>> = (0..3).map(|_| coef()).collect();
    let mats = (0..g.len())
        .map(|f| {
            let k = g.k::<f64>(f)[0];
            let mut h = a[0].hermitian_part();
            for (n, c) in a.iter().enumerate().skip(1) {
                let t = c.scale(Complex::from_polar(1.0, 2.0 * PI * n as f64 * k));
                h = &h + &(&t + &t.adjoint());
            }
            h
        })
        .collect();
    HermitianFamily::periodic(g.clone(), mats)
}

fn product(a: &UnitaryFamily<f64>, b: &UnitaryFamily<f64>) -> UnitaryFamily<f64> {
    UnitaryFamily::periodic(a.grid.clone(), a.mats.iter().zip(&b.mats).map(|(x, y)| x.matmul(y)).collect())
}

fn c5_two_step() -> Result<Outcome> {
    let mut out = Outcome::default();
    let g = grid(64, 1);
    let opts = FrameOptions::default();
    let mut worst = 0.0f64;
    let mut ok = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = product(&exp_i_family(&random_hermitian(&mut rng, &g, 3, 0.4), 1.0)?, &exp_i_family(&random_hermitian(&mut rng, &g, 3, 0.4), 1.0)?);
        match two_step_log(&alpha, &opts).and_then(|l| l.residual(&alpha)) {
            Ok(r) => {
                worst = worst.max(r);
                ok += (r < 1e-8) as usize;
            }
            Err(e) => out.note(format!("seed {seed}: {e}")),
        }
    }
    out.note(format!("null-homotopic: {ok}/50 below 1e-8, worst residual {worst:.1e}"));
    out.check("null-homotopic reconstruction", ok == 50);
    let mut rejected = 0;
    for case in 0..20u64 {
        let d = [1i64, -1, 2, -2, 3][case as usize % 5];
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let base = exp_i_family(&random_hermitian(&mut rng, &g, 3, 0.3), 1.0)?;
        let wind = UnitaryFamily::periodic(
            g.clone(),
            (0..g.len())
                .map(|f| {
                    let k = g.k::<f64>(f)[0];
                    CMat::from_diag(&[Complex::from_polar(1.0, 2.0 * PI * d as f64 * k), Complex::new(1.0, 0.0), Complex::new(1.0, 0.0)])
                })
                .collect(),
        );
        match two_step_log(&product(&wind, &base), &opts) {
            Err(FrameError::NonzeroDegree { degree, .. }) if degree == d => rejected += 1,
            other => out.note(format!("case {case} (degree {d}): {:?}", other.map(|l| l.route))),
        }
    }
    out.note(format!("winding inputs rejected with the right degree: {rejected}/20"));
    out.check("degree rejection", rejected == 20);
    Ok(out)
}

fn c6_supercell() -> Result<Outcome> {
    let mut out = Outcome::default();
    let (model, flux) = harper();
    let red = supercell_reduce(&model, flux, 0.0)?;
    let scan = BandScan::from_hamiltonians(&grid(128, 2), &red.reduced.hamiltonians(&grid(128, 2)))?;
    let ranges = scan.ranges();
    let radius = 30;
    let op = build_hofstadter(&model, flux.b0::<f64>(), LatticeBox::new(2, radius)?)?;
    let bulk = interior_spectrum(&op, radius / 2, 0.5)?;
    let h = hausdorff_to_ranges(&bulk, &ranges);
    let (off, diag) = red.reduced.periodic_block_residual(9)?;
    let consistency = red.consistency_residual(4);
    out.note(format!("ranges={ranges:.3?} interior points={} hausdorff={h:.4}", bulk.len()));
    out.note(format!("block off-diagonal={off:.1e} diagonal={diag:.1e} conjugation={consistency:.1e}"));
    out.check("hausdorff", h < 0.05);
    out.check("block diagonalization", off < 1e-10 && diag < 1e-10 && consistency < 1e-10);
    Ok(out)
}

fn harper_gaps() -> Result<Vec<(f64, f64)>> {
    let g = grid(64, 2);
    let scan = BandScan::from_hamiltonians(&g, &harper_reduced().hamiltonians(&g))?;
    Ok(scan.gaps(1e-3).into_iter().map(|(_, lo, hi)| (lo, hi)).collect())
}

fn c7_combes_thomas() -> Result<Outcome> {
    let mut out = Outcome::default();
    let gaps = harper_gaps()?;
    let mid: Vec<f64> = gaps.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let zs = [
        Complex::new(mid[0], 0.0),
        Complex::new(mid[1], 0.0),
        Complex::new(mid[0], 0.3),
        Complex::new(mid[1], -0.3),
        Complex::new(0.0, 1.0),
    ];
    let h = harper_reduced().kernel(0.0);
    let opts = IterOptions::new(32);
    let mut rates = Vec::new();
    for z in zs {
        let fit = resolvent_decay(&h, z, opts)?;
        rates.push(fit.rate);
    }
    out.note(format!("gaps={gaps:.3?} rates={rates:.3?}"));
    out.check("resolvent decay", rates.iter().all(|&r| r > 0.0 && r.is_finite()));
    let (model, flux) = harper();
    let sweep = combes_thomas_sweep(&model, flux, zs[2], &[0.0, 0.02, 0.04, 0.06], opts)?;
    out.note(format!("sweep differences=[{}] slope={:.3e} R2={:.5}", sci(&sweep.difference), sweep.slope, sweep.r_squared));
    out.check("linear in eps", sweep.slope > 0.0 && sweep.r_squared > 0.95);
    Ok(out)
}

fn c8_magnetic() -> Result<Outcome> {
    let mut out = Outcome::default();
    let (model, flux) = harper();
    let gaps = harper_gaps()?;
    let window = EnergyWindow::new(f64::NEG_INFINITY, 0.5 * (gaps[0].0 + gaps[0].1))?;
    let opts = PipelineOptions::default();
    let eps = 0.05;
    let gap = window_gap(&model, flux.b0::<f64>() + eps, window, 14)?;
    let t = Instant::now();
    let mut frame = magnetic_frame(&model, flux, eps, window, MagneticMode::Parseval, &opts)?;
    frame.certify(&opts)?;
    let elapsed = t.elapsed();
    let c = &frame.certificate;
    let hy = &c.hypotheses;
    out.note(format!("window=({}, {:.4}) gap={gap:.3} radius={} runtime={:.0}s", window.lo, window.hi, c.radius, elapsed.as_secs_f64()));
    out.note(format!("hypotheses {hy:?}"));
    out.note(format!(
        "orthogonality={:.1e} reconstruction={:.1e} covariance={:.1e} rates={:.3?}",
        c.orthogonality.unwrap_or(f64::NAN),
        c.reconstruction_residual.unwrap_or(f64::NAN),
        c.covariance_residual.unwrap_or(f64::NAN),
        c.decay.iter().map(|d| d.rate).collect::<Vec<_>>()
    ));
    out.check("runtime", elapsed <= Duration::from_secs(15 * 60));
    out.check("overlap < 1", hy.overlap.is_some_and(|x| x < 1.0) && hy.sub_overlap.map_or(true, |x| x < 1.0));
    out.check("projection distance <= 1/2", hy.projection_distance.is_some_and(|x| x <= 0.5));
    out.check("idempotency < 1/4", hy.idempotency.is_some_and(|x| x < 0.25));
    out.check("orthogonality", c.orthogonality.is_some_and(|x| x < 1e-8));
    out.check("reconstruction", c.reconstruction_residual.is_some_and(|x| x < 1e-7));
    out.check("seed decay", c.decay.len() == frame.seeds.cols && c.decay.iter().all(|d| d.localized()));
    out.check("covariance", c.covariance_residual.is_some_and(|x| x < 1e-8));
    drop(frame);
    let zero = magnetic_frame(&model, flux, 0.0, window, MagneticMode::Parseval, &opts)?;
    let dist = zero.distance_to_periodic();
    out.note(format!("zero-field distance to periodic seeds={dist:.1e}"));
    out.check("zero-field limit", dist < 1e-8);
    Ok(out)
}

fn c9_effective() -> Result<Outcome> {
    let mut out = Outcome::default();
    let g = grid(32, 2);
    let pair_hams: Vec<CMat<f64>> =
        M::two_band(1.0).hamiltonians(&g).iter().zip(M::two_band(3.0).hamiltonians(&g)).map(|(a, b)| CMat::direct_sum(a, &b)).collect();
    let cases: Vec<(&str, Vec<CMat<f64>>, ProjectionFamily<f64>, bool)> = vec![
        ("two-band mu=3", M::two_band(3.0).hamiltonians(&g), M::two_band(3.0).band_projection(&g, 0, 1)?, true),
        ("two-band mu=1", M::two_band(1.0).hamiltonians(&g), M::two_band(1.0).band_projection(&g, 0, 1)?, false),
        ("rank-2 pair", pair_hams, chern_pair(32)?, false),
        ("harper 1/3", harper_reduced().hamiltonians(&g), harper_reduced().band_projection(&g, 0, 1)?, false),
    ];
    for (name, hams, fam, trivial) in cases {
        let (frame, _): (BlochFrame<f64>, _) = if trivial { construct_bloch_basis(&fam, &FrameOptions::default())? } else { construct_parseval_frame(&fam, &FrameOptions::default())? };
        let heff = effective_hamiltonian(&frame, &hams, &fam)?;
        let d = heff.spectral_defect(&hams, 0)?;
        out.note(format!("{name}: spectral defect {d:.1e}"));
        out.check(format!("{name} spectrum"), d < 1e-8);
    }
    let fine = grid(128, 2);
    for (name, model) in [("two-band mu=3", M::two_band(3.0)), ("two-band mu=1", M::two_band(1.0))] {
        let hams = model.hamiltonians(&fine);
        let fam = model.band_projection(&fine, 0, 1)?;
        let (raw, _) = construct_parseval_frame(&fam, &FrameOptions::default())?;
        let frame = smooth_frame(&raw, &fam, DEFAULT_FEJER_ORDER)?;
        let mut errs = Vec::new();
        for nc in [8, 16, 32] {
            errs.push(interpolation_study(&frame, &hams, &fam, 0, &grid(nc, 2))?.0.error);
        }
        let ratios: Vec<f64> = errs.windows(2).map(|w| w[0] / w[1]).collect();
        out.note(format!("{name}: errors [{}] ratios {ratios:.1?}", sci(&errs)));
        out.check(format!("{name} interpolation"), ratios.iter().all(|&r| r >= 10.0));
    }
    Ok(out)
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ")
}

fn rotation(theta: f64) -> CMat<f64> {
    let (c, s) = (theta.cos(), theta.sin());
    CMat::from_fn(2, 2, |i, j| Complex::new([[c, -s], [s, c]][i][j], 0.0))
}

fn c10_kato_nagy() -> Result<Outcome> {
    let mut out = Outcome::default();
    let p = CMat::from_real_diag(&[1.0, 0.0]);
    let mut worst = 0.0f64;
    for i in 0..=16 {
        // Angles stay below π/2, where the two lines become orthogonal.
        let theta = 1.4 * i as f64 / 16.0;
        let r = rotation(theta);
        let q = r.matmul(&p).mul_adjoint(&r);
        let k = kato_nagy_dense(&p, &q)?;
        worst = worst.max((&k - &r.adjoint()).max_abs());
    }
    out.note(format!("rotation error {worst:.1e}"));
    out.check("2x2 rotation", worst < 1e-10);

    let radius = 24;
    let eps = 0.05;
    let model = M::two_band(1.0);
    let g = grid(64, 2);
    let fam = model.band_projection(&g, 0, 1)?;
    let p = MagneticKernel::from_samples(eps, &g, &fam.mats, radius)?;
    let opts = IterOptions::new(radius);
    let (pi, _) = riesz_projection(&model.kernel(eps), EnergyWindow::new(f64::NEG_INFINITY, 0.0)?, opts)?;
    let (q, _, _) = nenciu_projection(&p, opts)?;
    let (k, dist, _) = kato_nagy(&pi, &q, opts)?;
    let tests = interior_test_vectors(LatticeBox::new(2, radius)?, 2, radius / 4, 5, 11);
    let res = intertwining_residual(&k, &q, &pi, &tests);
    let shell: Vec<f64> = k.add_identity(-1.0).shell_max();
    let fit = fit_shell_decay(&shell, radius / 2);
    out.note(format!("distance={dist:.3} intertwining={res:.1e} K-1 decay={:.3} (R2 {:.4})", fit.rate, fit.r_squared));
    out.check("intertwining", res < 1e-8);
    out.check("K-1 decay", fit.rate > 0.0 && fit.rate.is_finite());
    Ok(out)
}

type Criterion = (u32, &'static str, fn() -> Result<Outcome>);

const CRITERIA: [Criterion; 10] = [
    (1, "chern quantization", c1_chern),
    (2, "periodic bases of trivial bands", c2_trivial_bases),
    (3, "maximal orthonormal subframe", c3_subframe),
    (4, "parseval frames", c4_parseval),
    (5, "two-step logarithm", c5_two_step),
    (6, "supercell reduction", c6_supercell),
    (7, "resolvent decay", c7_combes_thomas),
    (8, "magnetic pipeline", c8_magnetic),
    (9, "effective hamiltonian and interpolation", c9_effective),
    (10, "kato-nagy intertwiner", c10_kato_nagy),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = BTreeMap::new();
    for (id, name, run) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = run();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(o) => {
                let bad: Vec<&str> = o.checks.iter().filter(|c| !c.1).map(|c| c.0.as_str()).collect();
                let verdict = if o.passed() { "PASS" } else { "FAIL" };
                println!("[{verdict}] {id:>2} {name} ({secs:.1}s){}", if bad.is_empty() { String::new() } else { format!(" failing: {}", bad.join(", ")) });
                for n in &o.notes {
                    println!("         {n}");
                }
                if !o.passed() {
                    failed.insert(id, name);
                }
            }
            Err(e) => {
                println!("[FAIL] {id:>2} {name} ({secs:.1}s) error: {e}");
                failed.insert(id, name);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failed: {:?}", failed.len(), failed.keys().collect::<Vec<_>>());
        ExitCode::FAILURE
    }
}
