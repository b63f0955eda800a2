//! Line-oriented input scripts.
//!
//! Bare keywords toggle flags, `key value` (or `key=value`) pairs set
//! scalars, and section headers ending in `:` consume the following rows.
//! `#` starts a comment.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grape::parse_target;
use crate::pulse::{CartesianOp, ShapeKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScriptError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("script has no Targets and no Make directive")]
    Empty,
    #[error("target '{text}': {msg}")]
    Target { text: String, msg: String },
}

fn syntax(line: usize, msg: impl Into<String>) -> ScriptError {
    ScriptError::Syntax {
        line,
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub make_summary: bool,
    pub reburp: bool,
    pub evolve: bool,
    pub half: bool,
    pub bruker: bool,
    pub sym: bool,
    pub sympr: bool,
    pub write_pr: bool,
    pub no_opt: bool,
    pub calc_init: bool,
}

const FLAG_NAMES: [&str; 10] = [
    "MakeSummary",
    "REBURP",
    "EVOLVE",
    "HALF",
    "Bruker",
    "SYM",
    "SYMPR",
    "WritePR",
    "NoOpt",
    "CalcInit",
];

impl Flags {
    fn slot(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "MakeSummary" => &mut self.make_summary,
            "REBURP" => &mut self.reburp,
            "EVOLVE" => &mut self.evolve,
            "HALF" => &mut self.half,
            "Bruker" => &mut self.bruker,
            "SYM" => &mut self.sym,
            "SYMPR" => &mut self.sympr,
            "WritePR" => &mut self.write_pr,
            "NoOpt" => &mut self.no_opt,
            "CalcInit" => &mut self.calc_init,
            _ => return None,
        })
    }

    fn get(&self, name: &str) -> bool {
        let mut copy = *self;
        copy.slot(name).map(|v| *v).unwrap_or(false)
    }
}

/// `tag min max num` ppm grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub tag: String,
    pub min: f64,
    pub max: f64,
    pub num: usize,
    /// Target reference of an optimisation band.
    pub target: Option<String>,
}

impl GridSpec {
    pub fn ppm(&self) -> Vec<f64> {
        crate::grape::EnsembleSpec::band(self.min, self.max, self.num)
    }
}

/// Waveform source of a `Make` directive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MakeSource {
    Kind(ShapeKind),
    File(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MakeDirective {
    pub source: MakeSource,
    pub n_points: usize,
    /// Microseconds.
    pub duration_us: f64,
    pub sweep: Option<f64>,
    pub n: Option<f64>,
    pub set_b1: Option<f64>,
    /// Parsed and not used.
    pub tag: Option<String>,
    pub opt: Option<(CartesianOp, CartesianOp, f64)>,
    pub wh_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptConfig {
    pub ncpus: Option<usize>,
    pub frq: Option<f64>,
    pub iter_show: Option<usize>,
    pub max_iter: Option<usize>,
    pub ev_alpha: Option<f64>,
    pub ev_beta: Option<f64>,
    pub flags: Flags,
    /// `(scale, weight)` rows.
    pub rf: Option<Vec<(f64, f64)>>,
    pub plot: Option<Vec<GridSpec>>,
    pub bands: Option<Vec<GridSpec>>,
    pub carriers: Option<Vec<f64>>,
    /// Peak field rows, Hz.
    pub wmh: Option<Vec<f64>>,
    /// `(seconds, points)` rows.
    pub durations: Option<Vec<(f64, usize)>>,
    pub targets: Option<Vec<String>>,
    pub makes: Vec<MakeDirective>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Rf,
    Plot,
    SpinSystem,
    Carriers,
    Wmh,
    Durations,
    Targets,
}

impl Section {
    fn from_header(name: &str) -> Option<Self> {
        Some(match name {
            "RF" => Section::Rf,
            "Plot" => Section::Plot,
            "SpinSystem" => Section::SpinSystem,
            "Carriers" => Section::Carriers,
            "wmH" => Section::Wmh,
            "Durations" => Section::Durations,
            "Targets" => Section::Targets,
            _ => return None,
        })
    }
}

const SCALAR_KEYS: [&str; 6] = ["ncpus", "frq", "IterShow", "maxIter", "evAlpha", "evBeta"];

fn first_word(line: &str) -> &str {
    let w = line.split_whitespace().next().unwrap_or("");
    let w = w.split('=').next().unwrap_or("");
    w.strip_suffix(':').unwrap_or(w)
}

fn is_keyword(line: &str) -> bool {
    let trimmed = line.trim_start();
    let w = first_word(trimmed);
    let header = trimmed
        .split_whitespace()
        .next()
        .map(|t| t.ends_with(':'))
        .unwrap_or(false);
    FLAG_NAMES.contains(&w)
        || SCALAR_KEYS.contains(&w)
        || w == "Make"
        || (header && Section::from_header(w).is_some())
}

fn num<T: FromStr>(tok: &str, line: usize, what: &str) -> Result<T, ScriptError> {
    tok.parse()
        .map_err(|_| syntax(line, format!("bad {what} '{tok}'")))
}

fn set_once<T>(slot: &mut Option<T>, v: T, line: usize, key: &str) -> Result<(), ScriptError> {
    if slot.is_some() {
        return Err(syntax(line, format!("duplicate '{key}'")));
    }
    *slot = Some(v);
    Ok(())
}

fn parse_make(toks: &[&str], line: usize) -> Result<MakeDirective, ScriptError> {
    if toks.len() < 4 {
        return Err(syntax(line, "Make needs <shape> <points> <duration us>"));
    }
    let source = match ShapeKind::from_str(toks[1]) {
        Ok(k) => MakeSource::Kind(k),
        Err(_) => MakeSource::File(toks[1].to_string()),
    };
    let mut m = MakeDirective {
        source,
        n_points: num(toks[2], line, "point count")?,
        duration_us: num(toks[3], line, "duration")?,
        sweep: None,
        n: None,
        set_b1: None,
        tag: None,
        opt: None,
        wh_max: None,
    };
    let mut i = 4;
    let arg = |i: usize| {
        toks.get(i)
            .copied()
            .ok_or_else(|| syntax(line, format!("'{}' needs a value", toks[i - 1])))
    };
    while i < toks.len() {
        match toks[i] {
            "sweep" => set_once(
                &mut m.sweep,
                num(arg(i + 1)?, line, "sweep")?,
                line,
                "sweep",
            )?,
            "n" => set_once(&mut m.n, num(arg(i + 1)?, line, "n")?, line, "n")?,
            "SetB1" => set_once(
                &mut m.set_b1,
                num(arg(i + 1)?, line, "SetB1")?,
                line,
                "SetB1",
            )?,
            "tag" => set_once(&mut m.tag, arg(i + 1)?.to_string(), line, "tag")?,
            "wHmax" => set_once(
                &mut m.wh_max,
                num(arg(i + 1)?, line, "wHmax")?,
                line,
                "wHmax",
            )?,
            "Opt" => {
                let start = CartesianOp::from_str(arg(i + 1)?).map_err(|e| syntax(line, e))?;
                let finish = CartesianOp::from_str(arg(i + 2)?).map_err(|e| syntax(line, e))?;
                let value = num(arg(i + 3)?, line, "Opt value")?;
                set_once(&mut m.opt, (start, finish, value), line, "Opt")?;
                i += 4;
                continue;
            }
            other => return Err(syntax(line, format!("unknown Make option '{other}'"))),
        }
        i += 2;
    }
    Ok(m)
}

fn parse_grid(toks: &[&str], line: usize, with_target: bool) -> Result<GridSpec, ScriptError> {
    let max_len = if with_target { 5 } else { 4 };
    if toks.len() < 4 || toks.len() > max_len {
        return Err(syntax(line, "expected '<tag> <min> <max> <num>'"));
    }
    let num_pts: usize = num(toks[3], line, "count")?;
    if num_pts == 0 {
        return Err(syntax(line, "grid needs at least one point"));
    }
    Ok(GridSpec {
        tag: toks[0].to_string(),
        min: num(toks[1], line, "minimum")?,
        max: num(toks[2], line, "maximum")?,
        num: num_pts,
        target: toks.get(4).map(|s| s.to_string()),
    })
}

fn push_row<T>(slot: &mut Option<Vec<T>>, v: T) {
    slot.get_or_insert_with(Vec::new).push(v);
}

/// Parses script text.
pub fn parse_script(text: &str) -> Result<ScriptConfig, ScriptError> {
    let mut cfg = ScriptConfig::default();
    let mut section: Option<Section> = None;
    let mut seen_sections: Vec<Section> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        if content.trim().is_empty() {
            continue;
        }
        let indented = content.starts_with(char::is_whitespace);
        if let Some(sec) = section {
            if indented || !is_keyword(content) {
                parse_row(&mut cfg, sec, content.trim(), line)?;
                continue;
            }
        }
        section = None;
        let trimmed = content.trim();
        let mut toks: Vec<&str> = trimmed.split_whitespace().collect();
        let head = toks[0];
        if let Some(name) = head.strip_suffix(':') {
            let sec = Section::from_header(name)
                .ok_or_else(|| syntax(line, format!("unknown section '{name}'")))?;
            if seen_sections.contains(&sec) {
                return Err(syntax(line, format!("duplicate section '{name}'")));
            }
            seen_sections.push(sec);
            section = Some(sec);
            continue;
        }
        if head == "Make" {
            cfg.makes.push(parse_make(&toks, line)?);
            continue;
        }
        if let Some((k, v)) = head.split_once('=') {
            toks = std::iter::once(k)
                .chain((!v.is_empty()).then_some(v))
                .chain(toks[1..].iter().copied())
                .collect();
        }
        let key = toks[0];
        if let Some(flag) = cfg.flags.slot(key) {
            if toks.len() != 1 {
                return Err(syntax(line, format!("flag '{key}' takes no value")));
            }
            if *flag {
                return Err(syntax(line, format!("duplicate '{key}'")));
            }
            *flag = true;
            continue;
        }
        if !SCALAR_KEYS.contains(&key) {
            return Err(syntax(line, format!("unknown keyword '{key}'")));
        }
        if toks.len() != 2 {
            return Err(syntax(line, format!("'{key}' takes one value")));
        }
        let v = toks[1];
        match key {
            "ncpus" => set_once(&mut cfg.ncpus, num(v, line, key)?, line, key)?,
            "frq" => set_once(&mut cfg.frq, num(v, line, key)?, line, key)?,
            "IterShow" => set_once(&mut cfg.iter_show, num(v, line, key)?, line, key)?,
            "maxIter" => set_once(&mut cfg.max_iter, num(v, line, key)?, line, key)?,
            "evAlpha" => set_once(&mut cfg.ev_alpha, num(v, line, key)?, line, key)?,
            "evBeta" => set_once(&mut cfg.ev_beta, num(v, line, key)?, line, key)?,
            _ => unreachable!("checked against SCALAR_KEYS"),
        }
    }
    if cfg.targets.as_ref().is_none_or(|t| t.is_empty()) && cfg.makes.is_empty() {
        return Err(ScriptError::Empty);
    }
    for t in cfg.targets.iter().flatten() {
        parse_target(t, cfg.ev_alpha.unwrap_or(0.0), cfg.ev_beta.unwrap_or(0.0)).map_err(|e| {
            ScriptError::Target {
                text: t.clone(),
                msg: e.to_string(),
            }
        })?;
    }
    Ok(cfg)
}

fn parse_row(
    cfg: &mut ScriptConfig,
    sec: Section,
    row: &str,
    line: usize,
) -> Result<(), ScriptError> {
    let toks: Vec<&str> = row.split_whitespace().collect();
    let expect = |n: usize| {
        if toks.len() == n {
            Ok(())
        } else {
            Err(syntax(
                line,
                format!("expected {n} values, got {}", toks.len()),
            ))
        }
    };
    match sec {
        Section::Rf => {
            expect(2)?;
            push_row(
                &mut cfg.rf,
                (
                    num(toks[0], line, "B1 scale")?,
                    num(toks[1], line, "weight")?,
                ),
            );
        }
        Section::Plot => push_row(&mut cfg.plot, parse_grid(&toks, line, false)?),
        Section::SpinSystem => push_row(&mut cfg.bands, parse_grid(&toks, line, true)?),
        Section::Carriers => {
            for t in toks {
                push_row(&mut cfg.carriers, num(t, line, "carrier")?);
            }
        }
        Section::Wmh => {
            expect(1)?;
            push_row(&mut cfg.wmh, num(toks[0], line, "field")?);
        }
        Section::Durations => {
            expect(2)?;
            push_row(
                &mut cfg.durations,
                (
                    num(toks[0], line, "duration")?,
                    num(toks[1], line, "point count")?,
                ),
            );
        }
        Section::Targets => push_row(&mut cfg.targets, toks.join(" ")),
    }
    Ok(())
}

fn grid_row(g: &GridSpec) -> String {
    let mut s = format!(" {} {} {} {}", g.tag, g.min, g.max, g.num);
    if let Some(t) = &g.target {
        s.push(' ');
        s.push_str(t);
    }
    s
}

fn make_line(m: &MakeDirective) -> String {
    let src = match &m.source {
        MakeSource::Kind(k) => k.to_string(),
        MakeSource::File(f) => f.clone(),
    };
    let mut s = format!("Make {src} {} {}", m.n_points, m.duration_us);
    if let Some(v) = m.sweep {
        let _ = write!(s, " sweep {v}");
    }
    if let Some(v) = m.n {
        let _ = write!(s, " n {v}");
    }
    if let Some(v) = m.set_b1 {
        let _ = write!(s, " SetB1 {v}");
    }
    if let Some(v) = &m.tag {
        let _ = write!(s, " tag {v}");
    }
    if let Some((a, b, v)) = m.opt {
        let _ = write!(s, " Opt {a} {b} {v}");
    }
    if let Some(v) = m.wh_max {
        let _ = write!(s, " wHmax {v}");
    }
    s
}

impl ScriptConfig {
    /// Script text that parses back to an identical config.
    pub fn to_script(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                let _ = writeln!(out, "{k} {v}");
            }
        };
        kv("ncpus", self.ncpus.map(|v| v.to_string()));
        kv("frq", self.frq.map(|v| v.to_string()));
        kv("IterShow", self.iter_show.map(|v| v.to_string()));
        kv("maxIter", self.max_iter.map(|v| v.to_string()));
        kv("evAlpha", self.ev_alpha.map(|v| v.to_string()));
        kv("evBeta", self.ev_beta.map(|v| v.to_string()));
        for name in FLAG_NAMES {
            if self.flags.get(name) {
                let _ = writeln!(out, "{name}");
            }
        }
        if let Some(rows) = &self.rf {
            out.push_str("RF:\n");
            for (s, w) in rows {
                let _ = writeln!(out, " {s} {w}");
            }
        }
        if let Some(rows) = &self.plot {
            out.push_str("Plot:\n");
            for g in rows {
                let _ = writeln!(out, "{}", grid_row(g));
            }
        }
        if let Some(rows) = &self.bands {
            out.push_str("SpinSystem:\n");
            for g in rows {
                let _ = writeln!(out, "{}", grid_row(g));
            }
        }
        if let Some(rows) = &self.carriers {
            out.push_str("Carriers:\n");
            for c in rows {
                let _ = writeln!(out, " {c}");
            }
        }
        if let Some(rows) = &self.wmh {
            out.push_str("wmH:\n");
            for w in rows {
                let _ = writeln!(out, " {w}");
            }
        }
        if let Some(rows) = &self.durations {
            out.push_str("Durations:\n");
            for (d, n) in rows {
                let _ = writeln!(out, " {d:e} {n}");
            }
        }
        if let Some(rows) = &self.targets {
            out.push_str("Targets:\n");
            for t in rows {
                let _ = writeln!(out, " {t}");
            }
        }
        for m in &self.makes {
            let _ = writeln!(out, "{}", make_line(m));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub const SAMPLE: &str = "ncpus 16   # cpu count
frq 600    # Larmor frequency (MHz)
IterShow 100   #show progress every this many steps.
maxIter 3000   #maximum number of iterations
MakeSummary    # Make summary pdf
REBURP     #turn on REBURP mode
EVOLVE     #turn on schematic pulse analysis
HALF       #turn on schematic pulse analysis at halfway
evAlpha 0.475 #set evolution parameter a
evBeta 0.0    #set evolution parameter b
Bruker        #write out pulses in Bruker format
RF: (B1/weight)  #B1 robustness
 0.93\t0.25
 1.0\t0.5
 1.05\t0.25
Plot: (Min/Max/Num)  #spins to plot
 P -5 5   121
SpinSystem: (Min/Max/Num/Target)  #spins to optimise
 A  -1.5 1.5  96
Carriers: #center of spectrum (ppm)
 0.0
wmH:      #B1 field (Hz)
 5000
Durations: #Total duration(s) number of points
 2000E-6 1000
Targets:   #retraints for the bands
 180x
";

    #[test]
    fn sample_script() {
        let c = parse_script(SAMPLE).unwrap();
        assert_eq!(c.ev_alpha, Some(0.475));
        assert_eq!(c.ncpus, Some(16));
        assert_eq!(c.max_iter, Some(3000));
        assert!(c.flags.reburp && c.flags.evolve && c.flags.half && c.flags.bruker);
        assert!(c.flags.make_summary && !c.flags.sym);
        assert_eq!(
            c.rf.as_deref(),
            Some(&[(0.93, 0.25), (1.0, 0.5), (1.05, 0.25)][..])
        );
        let band = &c.bands.as_ref().unwrap()[0];
        assert_eq!((band.min, band.max, band.num), (-1.5, 1.5, 96));
        assert_eq!(c.plot.as_ref().unwrap()[0].num, 121);
        assert_eq!(c.durations.as_deref(), Some(&[(2000e-6, 1000)][..]));
        assert_eq!(c.wmh.as_deref(), Some(&[5000.0][..]));
        assert_eq!(c.targets.as_deref(), Some(&["180x".to_string()][..]));
    }

    #[test]
    fn make_lines() {
        let text =
            "Make CHIRP 1000 2000 sweep 20000 n 5 SetB1 4060 tag 2 Opt Iz Iz -1 wHmax 10000\n";
        let c = parse_script(text).unwrap();
        let m = &c.makes[0];
        assert_eq!(m.source, MakeSource::Kind(ShapeKind::Chirp));
        assert_eq!((m.n_points, m.duration_us), (1000, 2000.0));
        assert_eq!(
            (m.sweep, m.n, m.set_b1),
            (Some(20000.0), Some(5.0), Some(4060.0))
        );
        assert_eq!(m.opt, Some((CartesianOp::Iz, CartesianOp::Iz, -1.0)));
        assert_eq!(m.wh_max, Some(10000.0));
        assert_eq!(m.tag.as_deref(), Some("2"));
        for line in [
            "Make HARD 2 1000 Opt Iz Iy -1",
            "Make EBURP1 1000 2000  Opt Iz Iy -1",
            "Make PC9 500 1000 Opt Iz Iy -1",
            "Make BESTPC9 2000 1000 Opt Iz Iy -1",
            "Make Q5 1000 2000 Opt Iz Iy -1",
            "Make HARD 2 2000 Opt Iz Iz -1",
            "Make REBURP1 1000 2000  Opt Iz Iz -1",
            "Make Q3 1000 2000 Opt Iz Iz -1",
        ] {
            parse_script(line).unwrap();
        }
        let f = parse_script("Make shapes/mine.bruker 10 500\n").unwrap();
        assert_eq!(
            f.makes[0].source,
            MakeSource::File("shapes/mine.bruker".into())
        );
    }

    #[test]
    fn target_listing() {
        let text = "evAlpha=0.95\nTargets: \na90xb\n0.5O;0.25B;0.5O \n90x\nIz -Iy\nIz -0.2OIy\n180x\nIz -Iz\nIz Iex\n";
        let c = parse_script(text).unwrap();
        assert_eq!(c.targets.unwrap().len(), 8);
        assert_eq!(c.ev_alpha, Some(0.95));
    }

    #[test]
    fn errors() {
        assert_eq!(parse_script(""), Err(ScriptError::Empty));
        assert_eq!(parse_script("# only a comment\n"), Err(ScriptError::Empty));
        let e = parse_script("frq 600\nfoo 3\nTargets:\n 90x\n").unwrap_err();
        assert_eq!(e, syntax(2, "unknown keyword 'foo'"));
        let e = parse_script("Targets:\n 90x\nTargets:\n 180x\n").unwrap_err();
        assert!(matches!(e, ScriptError::Syntax { line: 3, .. }));
        let e = parse_script("RF:\n 0.9\nTargets:\n 90x\n").unwrap_err();
        assert!(matches!(e, ScriptError::Syntax { line: 2, .. }));
        let e = parse_script("Make HARD 2 1000 Opt Iz Qq -1\n").unwrap_err();
        assert!(matches!(e, ScriptError::Syntax { line: 1, .. }));
        assert!(matches!(
            parse_script("Targets:\n wibble\n"),
            Err(ScriptError::Target { .. })
        ));
    }

    #[test]
    fn sample_round_trip() {
        let c = parse_script(SAMPLE).unwrap();
        assert_eq!(parse_script(&c.to_script()).unwrap(), c);
    }

    fn arb_config() -> impl Strategy<Value = ScriptConfig> {
        (
            proptest::option::of(1usize..64),
            proptest::option::of(100.0f64..1000.0),
            proptest::option::of(0.0f64..1.0),
            proptest::collection::vec((0.5f64..1.5, 0.0f64..1.0), 1..4),
            (-5.0f64..0.0, 0.0f64..5.0, 1usize..200),
            proptest::collection::vec(any::<bool>(), 10),
            (1e-4f64..5e-3, 2usize..2000),
        )
            .prop_map(|(ncpus, frq, ev, rf, (lo, hi, n), fl, dur)| {
                let mut flags = Flags::default();
                for (name, on) in FLAG_NAMES.iter().zip(fl) {
                    *flags.slot(name).unwrap() = on;
                }
                ScriptConfig {
                    ncpus,
                    frq,
                    ev_alpha: ev,
                    flags,
                    rf: Some(rf),
                    bands: Some(vec![GridSpec {
                        tag: "A".into(),
                        min: lo,
                        max: hi,
                        num: n,
                        target: None,
                    }]),
                    durations: Some(vec![dur]),
                    targets: Some(vec!["90x".into(), "Iz -0.2OIy".into()]),
                    makes: vec![MakeDirective {
                        source: MakeSource::Kind(ShapeKind::Chirp),
                        n_points: 100,
                        duration_us: 2000.0,
                        sweep: Some(20000.0),
                        n: Some(5.0),
                        set_b1: None,
                        tag: None,
                        opt: Some((CartesianOp::Iz, CartesianOp::Iz, -1.0)),
                        wh_max: Some(1e4),
                    }],
                    ..Default::default()
                }
            })
    }

    proptest! {
        #[test]
        fn round_trip(c in arb_config()) {
            prop_assert_eq!(parse_script(&c.to_script()).unwrap(), c);
        }
    }
}
