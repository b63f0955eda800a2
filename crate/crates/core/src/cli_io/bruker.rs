//! Bruker-style shape files: `##` headers followed by `amplitude%, phase°`
//! rows.

use std::fmt::Write as _;

use thiserror::Error;

use crate::pulse::{wrap_phase, PulseError, PulseShape, Segment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrukerError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("NPOINTS is {declared} but {found} rows were read")]
    Count { declared: usize, found: usize },
    #[error("file has no data rows")]
    Empty,
    #[error(transparent)]
    Pulse(#[from] PulseError),
}

/// Contents of a shape file. Field and duration are not stored in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct BrukerShape {
    pub title: String,
    pub segments: Vec<Segment>,
}

impl BrukerShape {
    pub fn into_pulse(self, peak_field: f64, duration: f64) -> Result<PulseShape, BrukerError> {
        Ok(PulseShape::new(
            self.title,
            self.segments,
            peak_field,
            duration,
        )?)
    }
}

fn phase_degrees(phase: f64) -> String {
    let deg = wrap_phase(phase)
        .rem_euclid(std::f64::consts::TAU)
        .to_degrees();
    let s = format!("{deg:.6}");
    if s == "360.000000" {
        "0.000000".into()
    } else {
        s
    }
}

/// Shape file text.
pub fn format_bruker(shape: &PulseShape) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "##TITLE={}", shape.name);
    let _ = writeln!(out, "##NPOINTS={}", shape.len());
    out.push_str("##XYPOINTS=(XY..XY)\n");
    for s in &shape.segments {
        let _ = writeln!(
            out,
            "{:.6}, {}",
            s.amplitude * 100.0,
            phase_degrees(s.phase)
        );
    }
    out.push_str("##END=\n");
    out
}

/// Parses shape file text. Rows may be comma or whitespace separated.
pub fn parse_bruker(text: &str) -> Result<BrukerShape, BrukerError> {
    let mut title = String::new();
    let mut declared = None;
    let mut segments = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() || row.starts_with("$$") {
            continue;
        }
        if let Some(header) = row.strip_prefix("##") {
            let (key, value) = header.split_once('=').unwrap_or((header, ""));
            match key.trim().to_ascii_uppercase().as_str() {
                "TITLE" => title = value.trim().to_string(),
                "NPOINTS" => {
                    declared =
                        Some(
                            value
                                .trim()
                                .parse::<usize>()
                                .map_err(|_| BrukerError::Parse {
                                    line,
                                    msg: format!("bad NPOINTS '{}'", value.trim()),
                                })?,
                        )
                }
                "END" => break,
                _ => {}
            }
            continue;
        }
        let vals: Vec<&str> = row
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        let parse = |t: &str| {
            t.parse::<f64>().map_err(|_| BrukerError::Parse {
                line,
                msg: format!("bad number '{t}'"),
            })
        };
        if vals.len() != 2 {
            return Err(BrukerError::Parse {
                line,
                msg: format!("expected 'amplitude, phase', got '{row}'"),
            });
        }
        let amp = parse(vals[0])?;
        let phase = parse(vals[1])?;
        if !(0.0..=100.0).contains(&amp) || !phase.is_finite() {
            return Err(BrukerError::Parse {
                line,
                msg: format!("amplitude {amp} outside [0, 100] or bad phase"),
            });
        }
        segments.push(Segment::new(amp / 100.0, wrap_phase(phase.to_radians())));
    }
    if segments.is_empty() {
        return Err(BrukerError::Empty);
    }
    if let Some(d) = declared {
        if d != segments.len() {
            return Err(BrukerError::Count {
                declared: d,
                found: segments.len(),
            });
        }
    }
    Ok(BrukerShape { title, segments })
}
