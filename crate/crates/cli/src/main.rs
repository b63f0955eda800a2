//! `pulseforge` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use pulseforge::cli_io::{format_bruker, parse_bruker, run_script_file, sweep_table, Table};
use pulseforge::grape::{random_initial, EnsembleSpec, OptimizerConfig, ParamMode};
use pulseforge::propagation::{ppm_to_rad, sweep_offsets, Band, VerdictThresholds};
use pulseforge::pulse::PulseShape;
use pulseforge::spin_sim::{a90x_family, delta_sweep, SpinSystem, SweepKind, SweepResult, S180};
use pulseforge::symmetry::{partner, SymmetryKind};

#[derive(Parser)]
#[command(
    name = "pulseforge",
    version,
    about = "Design and analyse band-schematic RF pulses"
)]
struct Cli {
    /// Seed for random initial waveforms.
    #[arg(long, env = "PULSEFORGE_SEED", default_value_t = 0, global = true)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an input script.
    Run {
        script: PathBuf,
        /// Output directory; defaults to the script's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Schematic analysis of a shape file over an offset band.
    Analyze {
        shapefile: PathBuf,
        /// Larmor frequency, MHz.
        #[arg(long)]
        frq: f64,
        /// `min,max,n` in ppm.
        #[arg(long, allow_hyphen_values = true)]
        band: String,
        /// Add the two-halves analysis.
        #[arg(long)]
        half: bool,
        /// Pulse duration, microseconds.
        #[arg(long)]
        duration: f64,
        /// Peak field, Hz.
        #[arg(long)]
        field: f64,
        /// Carrier, ppm.
        #[arg(long, default_value_t = 0.0)]
        carrier: f64,
        /// Comma-separated B1 scales.
        #[arg(long, default_value = "1")]
        b1: String,
        /// Write the table here instead of standard output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write a symmetry partner of a shape file.
    Partner {
        shapefile: PathBuf,
        #[arg(long, value_enum)]
        kind: PartnerKind,
        /// Output file; defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a coupled spin system.
    Sim {
        #[arg(value_enum)]
        experiment: Experiment,
        /// Spin-system JSON.
        #[arg(long)]
        json: PathBuf,
        /// INEPT 90° length, microseconds.
        #[arg(long, default_value_t = 10.0)]
        t90: f64,
        /// INEPT Δ range, milliseconds.
        #[arg(long, default_value_t = 0.8)]
        delta_min: f64,
        #[arg(long, default_value_t = 6.8)]
        delta_max: f64,
        /// Grid points.
        #[arg(long, default_value_t = 9)]
        points: usize,
        /// JINEPT pulse duration, microseconds.
        #[arg(long, default_value_t = 946.0)]
        duration: f64,
        #[arg(long, default_value_t = 200)]
        segments: usize,
        /// JINEPT peak field, Hz.
        #[arg(long, default_value_t = 15700.0)]
        field: f64,
        /// Half width of the JINEPT design band around the I shift, ppm.
        #[arg(long, default_value_t = 0.5)]
        band_ppm: f64,
        #[arg(long, default_value_t = 0.1)]
        a_min: f64,
        #[arg(long, default_value_t = 0.95)]
        a_max: f64,
        #[arg(long, default_value_t = 1500)]
        max_iter: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PartnerKind {
    Vprime,
    X,
    Z,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    Inept,
    Jinept,
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    EnsembleSpec::band(lo, hi, n)
}

fn parse_band(text: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [lo, hi, n] = parts[..] else {
        bail!("--band expects min,max,n, got '{text}'");
    };
    let n: usize = n.parse().context("band point count")?;
    if n == 0 {
        bail!("--band needs at least one point");
    }
    Ok((
        lo.parse().context("band minimum")?,
        hi.parse().context("band maximum")?,
        n,
    ))
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{t}'"))
        })
        .collect()
}

fn read_shape(path: &Path, field: f64, duration: f64) -> Result<PulseShape> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = parse_bruker(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(parsed.into_pulse(field, duration)?)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(script: &Path, out: Option<&Path>, seed: u64) -> Result<ExitCode> {
    let report = run_script_file(script, out, seed).map_err(|e| anyhow::anyhow!(e))?;
    let s = &report.summary;
    println!(
        "pulse {} ({} segments, {:.3} Hz)",
        s.name, s.segments, s.peak_field_hz
    );
    if let Some(o) = &s.optimization {
        println!(
            "target {} infidelity {:.3e} after {} iterations (converged: {})",
            o.target, o.infidelity, o.iterations, o.converged
        );
    }
    for v in &s.verdicts {
        println!(
            "band [{:.1}, {:.1}] rad/s band-schematic {} delays {:?}",
            v.band.lo, v.band.hi, v.band_schematic, v.mean_delays
        );
    }
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    for f in &s.files {
        println!("wrote {f}");
    }
    Ok(if report.converged() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_analyze(
    shapefile: &Path,
    frq: f64,
    band: &str,
    half: bool,
    duration_us: f64,
    field: f64,
    carrier: f64,
    b1: &str,
    csv: Option<&Path>,
) -> Result<()> {
    let shape = read_shape(shapefile, field, duration_us * 1e-6)?;
    let (lo, hi, n) = parse_band(band)?;
    let ppm = grid(lo, hi, n);
    let scales = parse_list(b1)?;
    let offsets: Vec<f64> = ppm.iter().map(|&p| ppm_to_rad(p, carrier, frq)).collect();
    let bands = [Band {
        lo: ppm_to_rad(lo, carrier, frq),
        hi: ppm_to_rad(hi, carrier, frq),
    }];
    let report = sweep_offsets(
        &shape,
        &offsets,
        &scales,
        &bands,
        half,
        &VerdictThresholds::default(),
    );
    emit(&sweep_table(&report, &ppm, &scales, half).to_csv(), csv)?;
    for v in &report.verdicts {
        eprintln!(
            "band-schematic {} mean delays {:?} max deviation {:?} min rotation fidelity {:.6} singular {}",
            v.band_schematic, v.mean_delays, v.max_delay_dev, v.min_rotation_fidelity, v.singular_points
        );
    }
    Ok(())
}

fn cmd_partner(shapefile: &Path, kind: PartnerKind, out: Option<&Path>) -> Result<()> {
    let shape = read_shape(shapefile, 0.0, 1.0)?;
    let kind = match kind {
        PartnerKind::Vprime => SymmetryKind::OrderPhaseReverse,
        PartnerKind::X => SymmetryKind::XPartner,
        PartnerKind::Z => SymmetryKind::ZPartner,
    };
    emit(&format_bruker(&partner(&shape, kind)), out)
}

fn sweep_output(r: &SweepResult, extra: Option<&[(f64, f64)]>) -> String {
    let mut t = match extra {
        Some(_) => Table::new(&["delta_ms", "intensity", "a", "b"]),
        None => Table::new(&["delta_ms", "intensity"]),
    };
    for (i, &(d, v)) in r.points.iter().enumerate() {
        let mut row = vec![d * 1e3, v];
        if let Some(ab) = extra {
            row.extend([ab[i].0, ab[i].1]);
        }
        t.push(row);
    }
    t.to_csv()
}

#[allow(clippy::too_many_arguments)]
fn cmd_sim(
    experiment: Experiment,
    json: &Path,
    t90: f64,
    delta_range: (f64, f64),
    points: usize,
    duration_us: f64,
    segments: usize,
    field: f64,
    band_ppm: f64,
    a_range: (f64, f64),
    max_iter: usize,
    seed: u64,
) -> Result<()> {
    let text = fs::read_to_string(json).with_context(|| format!("reading {}", json.display()))?;
    let sys = SpinSystem::from_json(&text)?;
    if sys.len() < 2 {
        bail!("INEPT needs at least two spins");
    }
    let (result, extra) = match experiment {
        Experiment::Inept => {
            let deltas = grid(delta_range.0 * 1e-3, delta_range.1 * 1e-3, points);
            let kind = SweepKind::Hard {
                t90: t90 * 1e-6,
                deltas,
            };
            (delta_sweep(&sys, &kind)?, None)
        }
        Experiment::Jinept => {
            let spin = &sys.spins[0];
            let ch = sys.channel(&spin.channel)?;
            let ens = EnsembleSpec::new(
                grid(spin.ppm - band_ppm, spin.ppm + band_ppm, 11),
                vec![(1.0, 1.0)],
                ch.frq,
                ch.carrier,
            )?;
            let cfg = OptimizerConfig {
                mode: ParamMode::PhaseOnly,
                max_iter,
                stop_infidelity: 1e-6,
                ..Default::default()
            };
            let init = random_initial(segments, duration_us * 1e-6, field, seed)?;
            let a_values = grid(a_range.0, a_range.1, points);
            let designed = a90x_family(&a_values, &init, &ens, &cfg)?;
            let pulses: Vec<PulseShape> = designed.into_iter().map(|r| r.shape).collect();
            let offset = sys.offset(0)?;
            let ab: Vec<(f64, f64)> = pulses
                .iter()
                .map(|p| {
                    let s = pulseforge::propagation::analyze(
                        p,
                        &pulseforge::propagation::EvalPoint::at_offset(offset),
                    );
                    (s.a, s.b)
                })
                .collect();
            let kind = SweepKind::Jinept {
                pulses,
                s180: S180::Ideal,
            };
            (delta_sweep(&sys, &kind)?, Some(ab))
        }
    };
    print!("{}", sweep_output(&result, extra.as_deref()));
    let f = &result.fit;
    eprintln!(
        "fit J {:.4} Hz amplitude {:.6} delta_max {:.4} ms residual {:.3e} ok {}",
        f.j_hz,
        f.amplitude,
        f.delta_max() * 1e3,
        f.residual,
        f.ok
    );
    if result.warnings > 0 {
        eprintln!(
            "warning: {} pulses are not band-schematic with b near 0",
            result.warnings
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { script, out } => cmd_run(&script, out.as_deref(), cli.seed),
        Command::Analyze {
            shapefile,
            frq,
            band,
            half,
            duration,
            field,
            carrier,
            b1,
            csv,
        } => cmd_analyze(
            &shapefile,
            frq,
            &band,
            half,
            duration,
            field,
            carrier,
            &b1,
            csv.as_deref(),
        )
        .map(|_| ExitCode::SUCCESS),
        Command::Partner {
            shapefile,
            kind,
            out,
        } => cmd_partner(&shapefile, kind, out.as_deref()).map(|_| ExitCode::SUCCESS),
        Command::Sim {
            experiment,
            json,
            t90,
            delta_min,
            delta_max,
            points,
            duration,
            segments,
            field,
            band_ppm,
            a_min,
            a_max,
            max_iter,
        } => cmd_sim(
            experiment,
            &json,
            t90,
            (delta_min, delta_max),
            points,
            duration,
            segments,
            field,
            band_ppm,
            (a_min, a_max),
            max_iter,
            cli.seed,
        )
        .map(|_| ExitCode::SUCCESS),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
