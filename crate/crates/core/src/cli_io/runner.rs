//! Script execution: pulse construction, optimization, sweeps and artifact
//! files.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use super::bruker::{format_bruker, parse_bruker, BrukerError};
use super::report::{svg_panels, Panel, Series, Table};
use super::script::{GridSpec, MakeDirective, MakeSource, ScriptConfig};
use crate::grape::{
    design, parse_target, random_initial, EnsembleSpec, OptimError, OptimizerConfig, ParamMode,
    PointScore, StageReport, SymmetryConstraint, TargetSpec,
};
use crate::propagation::{sweep_offsets, Band, BandVerdict, OffsetSweepReport, VerdictThresholds};
use crate::pulse::{
    calibrate_b1, generate_shape, CalibrationSpec, PulseError, PulseShape, ShapeRecipe,
};
use crate::symmetry::{concat, partner, SymmetryError, SymmetryKind};

/// Default iteration cap per optimization stage.
pub const DEFAULT_MAX_ITER: usize = 1000;
/// Default stop threshold on the weighted infidelity.
pub const DEFAULT_STOP: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("Make directive {index}: {source}")]
    Make { index: usize, source: PulseError },
    #[error("shape file {path}: {source}")]
    Bruker { path: PathBuf, source: BrukerError },
    #[error("concatenating Make pulses: {0}")]
    Concat(#[from] SymmetryError),
    #[error("target '{text}': {msg}")]
    Target { text: String, msg: String },
    #[error("optimization: {0}")]
    Optim(#[from] OptimError),
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn config(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Directory receiving artifact files.
    pub out_dir: PathBuf,
    /// File name stem of the artifacts.
    pub stem: String,
    /// Directory against which Make shape-file paths are resolved.
    pub base_dir: PathBuf,
    pub seed: u64,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>, stem: impl Into<String>) -> Self {
        let out_dir = out_dir.into();
        Self {
            base_dir: out_dir.clone(),
            out_dir,
            stem: stem.into(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimSummary {
    pub target: String,
    pub infidelity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stages: Vec<StageReport>,
    pub symmetry_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub peak_field_hz: f64,
    pub duration_s: f64,
    pub segments: usize,
    pub seed: u64,
    pub optimization: Option<OptimSummary>,
    pub verdicts: Vec<BandVerdict>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub shape: PulseShape,
    pub summary: RunSummary,
    pub sweep: Option<OffsetSweepReport>,
    pub scores: Option<Vec<PointScore>>,
}

impl RunReport {
    /// False when an optimization stopped without reaching its threshold.
    pub fn converged(&self) -> bool {
        self.summary
            .optimization
            .as_ref()
            .is_none_or(|o| o.converged)
    }
}

/// Runs a parsed script and writes its artifacts into `opts.out_dir`.
pub fn run(cfg: &ScriptConfig, opts: &RunOptions) -> Result<RunReport, RunError> {
    match cfg.ncpus {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| config(format!("ncpus {n}: {e}")))?
            .install(|| run_inner(cfg, opts)),
        _ => run_inner(cfg, opts),
    }
}

struct Artifacts<'a> {
    opts: &'a RunOptions,
    files: Vec<String>,
}

impl Artifacts<'_> {
    fn write(&mut self, suffix: &str, text: &str) -> Result<(), RunError> {
        let name = format!("{}{suffix}", self.opts.stem);
        let path = self.opts.out_dir.join(&name);
        fs::write(&path, text).map_err(|source| RunError::Io { path, source })?;
        self.files.push(name);
        Ok(())
    }
}

fn frq(cfg: &ScriptConfig) -> Result<f64, RunError> {
    cfg.frq
        .filter(|f| *f > 0.0)
        .ok_or_else(|| config("frq (MHz) must be set to a positive value"))
}

fn carrier(cfg: &ScriptConfig) -> f64 {
    cfg.carriers
        .as_ref()
        .and_then(|c| c.first().copied())
        .unwrap_or(0.0)
}

fn rf_rows(cfg: &ScriptConfig) -> Result<Vec<(f64, f64)>, RunError> {
    let rows = cfg.rf.clone().unwrap_or_else(|| vec![(1.0, 1.0)]);
    let sum: f64 = rows.iter().map(|r| r.1).sum();
    if !(sum > 0.0) {
        return Err(config("RF weights must have a positive sum"));
    }
    Ok(rows.into_iter().map(|(s, w)| (s, w / sum)).collect())
}

fn first_field(cfg: &ScriptConfig) -> Option<f64> {
    cfg.wmh.as_ref().and_then(|w| w.first().copied())
}

fn build_make(
    index: usize,
    m: &MakeDirective,
    cfg: &ScriptConfig,
    opts: &RunOptions,
    warnings: &mut Vec<String>,
) -> Result<PulseShape, RunError> {
    let duration = m.duration_us * 1e-6;
    let make_err = |source| RunError::Make { index, source };
    let shape = match &m.source {
        MakeSource::Kind(kind) => {
            let mut recipe = ShapeRecipe::new(*kind, m.n_points, duration);
            if let (Some(sweep), Some(n)) = (m.sweep, m.n) {
                recipe = recipe.with_chirp(sweep, n);
            }
            generate_shape(&recipe).map_err(make_err)?
        }
        MakeSource::File(file) => {
            let path = opts.base_dir.join(file);
            let text = fs::read_to_string(&path).map_err(|source| RunError::Io {
                path: path.clone(),
                source,
            })?;
            let parsed = parse_bruker(&text).map_err(|source| RunError::Bruker {
                path: path.clone(),
                source,
            })?;
            if parsed.segments.len() != m.n_points {
                warnings.push(format!(
                    "Make {index}: {file} has {} points, directive says {}",
                    parsed.segments.len(),
                    m.n_points
                ));
            }
            parsed
                .into_pulse(0.0, duration)
                .map_err(|source| RunError::Bruker { path, source })?
        }
    };
    if m.tag.is_some() {
        warnings.push(format!("Make {index}: tag is ignored"));
    }
    let field = match (m.set_b1, m.opt) {
        (Some(hz), Some(_)) => {
            warnings.push(format!("Make {index}: SetB1 overrides Opt calibration"));
            hz
        }
        (Some(hz), None) => hz,
        (None, Some((start, finish, target))) => {
            let mut spec = CalibrationSpec::new(start, finish, target).map_err(make_err)?;
            if let Some(bound) = m.wh_max {
                spec = spec.with_bound(bound);
            }
            calibrate_b1(&shape, &spec).map_err(make_err)?
        }
        (None, None) => first_field(cfg)
            .ok_or_else(|| config(format!("Make {index}: no SetB1, Opt or wmH field given")))?,
    };
    Ok(shape.with_peak_field(field))
}

fn initial_shape(
    cfg: &ScriptConfig,
    opts: &RunOptions,
    warnings: &mut Vec<String>,
) -> Result<PulseShape, RunError> {
    if cfg.makes.is_empty() {
        let (duration, n) = cfg
            .durations
            .as_ref()
            .and_then(|d| d.first().copied())
            .ok_or_else(|| config("Durations: row needed to start an optimization"))?;
        let field = first_field(cfg).ok_or_else(|| config("wmH: row needed for the field"))?;
        let shape =
            random_initial(n, duration, field, opts.seed).map_err(|e| config(e.to_string()))?;
        return Ok(shape.with_name(&opts.stem));
    }
    let mut shape: Option<PulseShape> = None;
    for (i, m) in cfg.makes.iter().enumerate() {
        let next = build_make(i + 1, m, cfg, opts, warnings)?;
        shape = Some(match shape {
            None => next,
            Some(prev) => concat(&prev, &next)?,
        });
    }
    Ok(shape.expect("makes is non-empty").with_name(&opts.stem))
}

fn band_target(cfg: &ScriptConfig, band: &GridSpec) -> Result<String, RunError> {
    let targets = cfg.targets.as_deref().unwrap_or(&[]);
    match &band.target {
        Some(t) => match t.parse::<usize>() {
            Ok(k) if (1..=targets.len()).contains(&k) => Ok(targets[k - 1].clone()),
            Ok(k) => Err(config(format!("band {} refers to target {k}", band.tag))),
            Err(_) => Ok(t.clone()),
        },
        None if targets.len() == 1 => Ok(targets[0].clone()),
        None => Err(config(format!(
            "{} targets for band {}; name one in the band row",
            targets.len(),
            band.tag
        ))),
    }
}

fn optimization_band(cfg: &ScriptConfig) -> Result<&GridSpec, RunError> {
    match cfg.bands.as_deref() {
        Some([band]) => Ok(band),
        Some([]) | None => Err(config("SpinSystem: band needed for the target")),
        Some(_) => Err(config("only one SpinSystem band can be optimized per run")),
    }
}

fn ensemble(cfg: &ScriptConfig, band: &GridSpec) -> Result<EnsembleSpec, RunError> {
    EnsembleSpec::new(band.ppm(), rf_rows(cfg)?, frq(cfg)?, carrier(cfg))
        .map_err(|e| config(e.to_string()))
}

fn target(cfg: &ScriptConfig, text: &str) -> Result<TargetSpec, RunError> {
    parse_target(
        text,
        cfg.ev_alpha.unwrap_or(0.0),
        cfg.ev_beta.unwrap_or(0.0),
    )
    .map_err(|e| RunError::Target {
        text: text.into(),
        msg: e.to_string(),
    })
}

pub fn waveform_table(shape: &PulseShape) -> Table {
    let mut t = Table::new(&["index", "time_us", "amplitude", "phase_deg"]);
    let dt = shape.dwell();
    for (i, s) in shape.segments.iter().enumerate() {
        t.push(vec![
            i as f64,
            (i as f64 + 0.5) * dt * 1e6,
            s.amplitude,
            s.phase.to_degrees(),
        ]);
    }
    t
}

fn waveform_panels(t: &Table) -> Vec<Panel> {
    let x = t.column("time_us").expect("column");
    vec![
        Panel::new(
            "amplitude",
            "time (us)",
            vec![Series::new(
                "amplitude",
                x.clone(),
                t.column("amplitude").expect("column"),
            )],
        ),
        Panel::new(
            "phase (deg)",
            "time (us)",
            vec![Series::new(
                "phase",
                x,
                t.column("phase_deg").expect("column"),
            )],
        ),
    ]
}

/// One row per sweep entry, offset-major, labelled by ppm and B1 scale.
pub fn sweep_table(report: &OffsetSweepReport, ppm: &[f64], scales: &[f64], half: bool) -> Table {
    let mut cols = vec![
        "offset_ppm",
        "b1",
        "a",
        "b",
        "psi_deg",
        "axis_x",
        "axis_y",
        "axis_z",
        "singular",
    ];
    if half {
        cols.extend([
            "half_a",
            "half_b",
            "half_c",
            "u1_psi_deg",
            "u1_x",
            "u1_y",
            "u1_z",
        ]);
    }
    let mut t = Table::new(&cols);
    let labels = ppm
        .iter()
        .flat_map(|&p| scales.iter().map(move |&s| (p, s)));
    for ((p, s), e) in labels.zip(&report.entries) {
        let r = e.rotation;
        let mut row = vec![
            p,
            s,
            e.params.a,
            e.params.b,
            r.angle.to_degrees(),
            r.axis[0],
            r.axis[1],
            r.axis[2],
            f64::from(u8::from(!e.params.is_ok())),
        ];
        if half {
            match e.half {
                Some(h) => row.extend([
                    h.a,
                    h.b,
                    h.c,
                    h.u1.angle.to_degrees(),
                    h.u1.axis[0],
                    h.u1.axis[1],
                    h.u1.axis[2],
                ]),
                None => row.extend([f64::NAN; 7]),
            }
        }
        t.push(row);
    }
    t
}

fn sweep_panels(t: &Table, scales: &[f64], half: bool) -> Vec<Panel> {
    let col = |name: &str| t.column(name).expect("column");
    let (ppm, b1) = (col("offset_ppm"), col("b1"));
    let series = |names: &[&str]| -> Vec<Series> {
        let mut out = Vec::new();
        for name in names {
            let y = col(name);
            for &s in scales {
                let pick = |v: &[f64]| -> Vec<f64> {
                    v.iter()
                        .zip(&b1)
                        .filter(|(_, &b)| b == s)
                        .map(|(x, _)| *x)
                        .collect()
                };
                let label = if scales.len() > 1 {
                    format!("{name} B1 {s}")
                } else {
                    name.to_string()
                };
                out.push(Series::new(label, pick(&ppm), pick(&y)));
            }
        }
        out
    };
    let mut panels = vec![
        Panel::new("delay fractions a, b", "offset (ppm)", series(&["a", "b"])),
        Panel::new("rotation angle (deg)", "offset (ppm)", series(&["psi_deg"])),
        Panel::new(
            "rotation axis",
            "offset (ppm)",
            series(&["axis_x", "axis_y", "axis_z"]),
        ),
    ];
    if half {
        panels.push(Panel::new(
            "half analysis a, b, c",
            "offset (ppm)",
            series(&["half_a", "half_b", "half_c"]),
        ));
        panels.push(Panel::new(
            "first half rotation U1",
            "offset (ppm)",
            series(&["u1_psi_deg"]),
        ));
    }
    panels
}

fn score_table(scores: &[PointScore], ens: &EnsembleSpec) -> Table {
    let mut t = Table::new(&["offset_ppm", "b1", "weight", "fidelity"]);
    let labels = ens
        .offsets_ppm
        .iter()
        .flat_map(|&p| ens.b1.iter().map(move |&(s, _)| (p, s)));
    for ((p, s), sc) in labels.zip(scores) {
        t.push(vec![p, s, sc.weight, sc.fidelity]);
    }
    t
}

fn symmetry(cfg: &ScriptConfig) -> Result<SymmetryConstraint, RunError> {
    match (cfg.flags.sym, cfg.flags.sympr) {
        (true, true) => Err(config("SYM and SYMPR are mutually exclusive")),
        (true, false) => Ok(SymmetryConstraint::Sym),
        (false, true) => Ok(SymmetryConstraint::Sympr),
        (false, false) => Ok(SymmetryConstraint::None),
    }
}

fn run_inner(cfg: &ScriptConfig, opts: &RunOptions) -> Result<RunReport, RunError> {
    let mut warnings = Vec::new();
    let mut art = Artifacts {
        opts,
        files: Vec::new(),
    };
    fs::create_dir_all(&opts.out_dir).map_err(|source| RunError::Io {
        path: opts.out_dir.clone(),
        source,
    })?;
    if cfg.flags.sym || cfg.flags.sympr || cfg.flags.reburp {
        symmetry(cfg)?;
    }
    let mut shape = initial_shape(cfg, opts, &mut warnings)?;
    let has_targets = cfg.targets.as_ref().is_some_and(|t| !t.is_empty());

    let mut optimization = None;
    if has_targets && !cfg.flags.no_opt {
        let band = optimization_band(cfg)?;
        let text = band_target(cfg, band)?;
        let spec = target(cfg, &text)?;
        let ens = ensemble(cfg, band)?;
        let ocfg = OptimizerConfig {
            mode: ParamMode::PhaseOnly,
            max_iter: cfg.max_iter.unwrap_or(DEFAULT_MAX_ITER),
            stop_infidelity: DEFAULT_STOP,
            symmetry: symmetry(cfg)?,
            reburp: cfg.flags.reburp,
            ev_alpha: cfg.ev_alpha.unwrap_or(0.0),
            ev_beta: cfg.ev_beta.unwrap_or(0.0),
            report_every: cfg.iter_show.unwrap_or(0),
        };
        let d = design(&shape, &spec, &ens, &ocfg, |k, f| {
            eprintln!("iter {k} infidelity {f:.6e}");
        })?;
        shape = d.result.shape.clone().with_name(&opts.stem);
        optimization = Some(OptimSummary {
            target: text,
            infidelity: d.result.infidelity,
            iterations: d.iterations(),
            converged: d.result.converged,
            symmetry_residual: d.result.symmetry_residual,
            stages: d.stages,
        });
    }

    let mut scores = None;
    if cfg.flags.calc_init {
        if has_targets {
            let band = optimization_band(cfg)?;
            let spec = target(cfg, &band_target(cfg, band)?)?;
            let ens = ensemble(cfg, band)?;
            let s = crate::grape::score_pulse(&shape, &spec, &ens);
            art.write("_scores.csv", &score_table(&s, &ens).to_csv())?;
            scores = Some(s);
        } else {
            warnings.push("CalcInit needs Targets; no score table written".into());
        }
    }

    let wave = waveform_table(&shape);
    art.write("_waveform.csv", &wave.to_csv())?;
    let mut summary_panels = waveform_panels(&wave);
    art.write("_waveform.svg", &svg_panels(&summary_panels))?;

    let mut sweep = None;
    let mut verdicts = Vec::new();
    if cfg.flags.evolve || cfg.flags.half {
        let f = frq(cfg)?;
        let c = carrier(cfg);
        let grid = cfg
            .plot
            .as_ref()
            .and_then(|p| p.first())
            .or_else(|| cfg.bands.as_ref().and_then(|b| b.first()))
            .ok_or_else(|| config("EVOLVE needs a Plot: or SpinSystem: grid"))?;
        let ppm = grid.ppm();
        let to_rad = |p: f64| crate::propagation::ppm_to_rad(p, c, f);
        let offsets: Vec<f64> = ppm.iter().map(|&p| to_rad(p)).collect();
        let scales: Vec<f64> = rf_rows(cfg)?.iter().map(|r| r.0).collect();
        let bands: Vec<Band> = cfg
            .bands
            .iter()
            .flatten()
            .map(|b| Band {
                lo: to_rad(b.min),
                hi: to_rad(b.max),
            })
            .collect();
        let half = cfg.flags.half;
        if half && shape.len() % 2 == 1 {
            warnings.push("HALF needs an even number of segments; half panels are empty".into());
        }
        let report = sweep_offsets(
            &shape,
            &offsets,
            &scales,
            &bands,
            half,
            &VerdictThresholds::default(),
        );
        let table = sweep_table(&report, &ppm, &scales, half);
        art.write("_evolve.csv", &table.to_csv())?;
        let panels = sweep_panels(&table, &scales, half);
        art.write("_evolve.svg", &svg_panels(&panels))?;
        summary_panels.extend(panels);
        verdicts = report.verdicts.clone();
        sweep = Some(report);
    }

    if cfg.flags.bruker {
        art.write(".bruker", &format_bruker(&shape))?;
    }
    if cfg.flags.write_pr {
        let pr =
            partner(&shape, SymmetryKind::OrderPhaseReverse).with_name(format!("{}_pr", opts.stem));
        art.write("_pr.bruker", &format_bruker(&pr))?;
    }
    if cfg.flags.make_summary {
        art.write("_summary.svg", &svg_panels(&summary_panels))?;
    }

    let mut summary = RunSummary {
        name: shape.name.clone(),
        peak_field_hz: shape.peak_field,
        duration_s: shape.duration,
        segments: shape.len(),
        seed: opts.seed,
        optimization,
        verdicts,
        warnings,
        files: Vec::new(),
    };
    art.files.push(format!("{}_report.json", opts.stem));
    summary.files = art.files.clone();
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    art.write("_report.json", &(json + "\n"))?;
    Ok(RunReport {
        shape,
        summary,
        sweep,
        scores,
    })
}

/// Reads, parses and runs a script file. Artifacts go next to the script
/// unless `out_dir` is given.
pub fn run_script_file(
    path: &Path,
    out_dir: Option<&Path>,
    seed: u64,
) -> Result<RunReport, Box<dyn std::error::Error + Send + Sync>> {
    let text = fs::read_to_string(path)?;
    let cfg = super::script::parse_script(&text)?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "pulse".into());
    let opts = RunOptions::new(out_dir.map(Path::to_path_buf).unwrap_or(base.clone()), stem)
        .with_base_dir(base)
        .with_seed(seed);
    Ok(run(&cfg, &opts)?)
}
