//! Optimization targets and their textual forms.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::propagation::SINGULAR_EPS;
use crate::su2::{rot, AxisAngle, Hermitian2, Unitary2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TargetError {
    #[error("cannot parse target '{0}'")]
    Parse(String),
    #[error(
        "evolution-controlled 180 degree rotation about an xy axis is singular; use REBURP mode"
    )]
    Singular180,
}

/// Signed Cartesian operator, optionally evolved for a fraction of `ΩT`
/// about z before use (the `-bOIy` form).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorExpr {
    /// Unit Cartesian direction `(x, y, z)` including sign.
    pub direction: [f64; 3],
    /// Fraction `f` of `ΩT` for the `Z(fΩT)` evolution.
    pub evolve: f64,
}

impl OperatorExpr {
    pub fn at(&self, offset: f64, duration: f64) -> Hermitian2 {
        let [x, y, z] = self.direction;
        let h = Hermitian2::from_cartesian(x, y, z);
        if self.evolve == 0.0 {
            h
        } else {
            Unitary2::rz(self.evolve * offset * duration).conjugate(&h)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChainToken {
    /// `Z(f ΩT)`.
    Evolve(f64),
    /// Rotation about x by `f · 2π`.
    Rotate(f64),
    /// `Z(evAlpha ΩT)`.
    Alpha,
    /// `Z(evBeta ΩT)`.
    Beta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetSpec {
    /// `Z(bΩT) U Z(aΩT)`.
    UniversalRotation { a: f64, b: f64, rotation: AxisAngle },
    StateToState {
        initial: OperatorExpr,
        target: OperatorExpr,
    },
    /// Any transverse final state.
    XYcite { initial: OperatorExpr },
    /// Left-to-right matrix product of tokens.
    ExplicitChain {
        tokens: Vec<ChainToken>,
        ev_alpha: f64,
        ev_beta: f64,
    },
}

/// A target resolved at one offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetAt {
    Unitary(Unitary2),
    State {
        initial: Hermitian2,
        target: Hermitian2,
    },
    Xy {
        initial: Hermitian2,
    },
}

impl TargetSpec {
    /// Checked universal rotation.
    pub fn universal(a: f64, b: f64, rotation: AxisAngle) -> Result<Self, TargetError> {
        let in_xy = rotation.axis[2].abs() < SINGULAR_EPS.sin();
        if in_xy && (rotation.angle - PI).abs() < SINGULAR_EPS && (a != 0.0 || b != 0.0) {
            return Err(TargetError::Singular180);
        }
        Ok(TargetSpec::UniversalRotation { a, b, rotation })
    }

    pub fn at(&self, offset: f64, duration: f64) -> TargetAt {
        let wt = offset * duration;
        match self {
            TargetSpec::UniversalRotation { a, b, rotation } => {
                let u = rot(rotation).unwrap_or(Unitary2::IDENTITY);
                TargetAt::Unitary(Unitary2::rz(b * wt) * u * Unitary2::rz(a * wt))
            }
            TargetSpec::StateToState { initial, target } => TargetAt::State {
                initial: initial.at(offset, duration),
                target: target.at(offset, duration),
            },
            TargetSpec::XYcite { initial } => TargetAt::Xy {
                initial: initial.at(offset, duration),
            },
            TargetSpec::ExplicitChain {
                tokens,
                ev_alpha,
                ev_beta,
            } => {
                let u = tokens.iter().fold(Unitary2::IDENTITY, |acc, t| {
                    acc * match *t {
                        ChainToken::Evolve(f) => Unitary2::rz(f * wt),
                        ChainToken::Rotate(f) => Unitary2::rx(f * TAU),
                        ChainToken::Alpha => Unitary2::rz(ev_alpha * wt),
                        ChainToken::Beta => Unitary2::rz(ev_beta * wt),
                    }
                });
                TargetAt::Unitary(u)
            }
        }
    }

    /// Text form accepted by [`parse_target`].
    pub fn to_text(&self) -> String {
        match self {
            TargetSpec::UniversalRotation { a, b, rotation } => {
                format!(
                    "rot {a} {b} {} {} {} {}",
                    rotation.axis[0],
                    rotation.axis[1],
                    rotation.axis[2],
                    rotation.angle_degrees()
                )
            }
            TargetSpec::StateToState { initial, target } => {
                format!("{} {}", op_text(initial), op_text(target))
            }
            TargetSpec::XYcite { initial } => format!("{} Iex", op_text(initial)),
            TargetSpec::ExplicitChain { tokens, .. } => tokens
                .iter()
                .map(|t| match t {
                    ChainToken::Evolve(f) => format!("{f}O"),
                    ChainToken::Rotate(f) => format!("{f}B"),
                    ChainToken::Alpha => "aZ".to_string(),
                    ChainToken::Beta => "bZ".to_string(),
                })
                .collect::<Vec<_>>()
                .join(";"),
        }
    }
}

fn op_text(op: &OperatorExpr) -> String {
    let d = op.direction;
    let (idx, v) = d
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, v)| (i, *v))
        .unwrap_or((2, 1.0));
    let sign = if v < 0.0 { "-" } else { "" };
    let ev = if op.evolve != 0.0 {
        format!("{}O", op.evolve)
    } else {
        String::new()
    };
    format!("{sign}{ev}I{}", ["x", "y", "z"][idx])
}

/// Parses `[-][<f>O]I{x,y,z}`.
fn parse_operator(s: &str) -> Option<OperatorExpr> {
    let (sign, rest) = match s.strip_prefix('-') {
        Some(r) => (-1.0, r),
        None => (1.0, s.strip_prefix('+').unwrap_or(s)),
    };
    let (evolve, op) = match rest.find(['O', 'o']) {
        Some(i) if i > 0 => (rest[..i].parse::<f64>().ok()?, &rest[i + 1..]),
        _ => (0.0, rest),
    };
    let direction = match op.to_ascii_lowercase().as_str() {
        "ix" => [sign, 0.0, 0.0],
        "iy" => [0.0, sign, 0.0],
        "iz" => [0.0, 0.0, sign],
        _ => return None,
    };
    Some(OperatorExpr { direction, evolve })
}

fn parse_axis(s: &str) -> Option<[f64; 3]> {
    Some(match s {
        "x" => [1.0, 0.0, 0.0],
        "-x" => [-1.0, 0.0, 0.0],
        "y" => [0.0, 1.0, 0.0],
        "-y" => [0.0, -1.0, 0.0],
        _ => return None,
    })
}

/// Parses one target line.
///
/// Accepted forms: `90x`, `180x`, `a90xb` (and `a180xa`) where `a`/`b` bind
/// to `evAlpha`/`evBeta`; explicit chains `0.5O;0.25B;0.5O` and `bZ;0.25B;aZ`;
/// state transfers `Iz -Iy`, `Iz -0.2OIy`; and `Iz Iex` for transverse
/// excitation with free phase.
pub fn parse_target(text: &str, ev_alpha: f64, ev_beta: f64) -> Result<TargetSpec, TargetError> {
    let t = text.trim();
    let err = || TargetError::Parse(t.to_string());
    let words: Vec<&str> = t.split_whitespace().collect();
    match words.as_slice() {
        ["rot", a, b, x, y, z, deg] => {
            let p = |s: &str| s.parse::<f64>().map_err(|_| err());
            let rotation = AxisAngle::normalized([p(x)?, p(y)?, p(z)?], p(deg)?.to_radians())
                .map_err(|_| err())?;
            return TargetSpec::universal(p(a)?, p(b)?, rotation);
        }
        [init, fin] => {
            let initial = parse_operator(init).ok_or_else(err)?;
            if fin.eq_ignore_ascii_case("iex") {
                return Ok(TargetSpec::XYcite { initial });
            }
            let target = parse_operator(fin).ok_or_else(err)?;
            return Ok(TargetSpec::StateToState { initial, target });
        }
        [_] => {}
        _ => return Err(err()),
    }
    if t.contains(';') || t.ends_with(['O', 'B', 'Z']) {
        let tokens = t
            .split(';')
            .map(|tok| {
                let tok = tok.trim();
                match tok {
                    "aZ" => Some(ChainToken::Alpha),
                    "bZ" => Some(ChainToken::Beta),
                    _ => {
                        let (num, kind) = tok.split_at(tok.len().checked_sub(1)?);
                        let f = num.parse::<f64>().ok()?;
                        match kind {
                            "O" => Some(ChainToken::Evolve(f)),
                            "B" => Some(ChainToken::Rotate(f)),
                            _ => None,
                        }
                    }
                }
            })
            .collect::<Option<Vec<_>>>()
            .ok_or_else(err)?;
        return Ok(TargetSpec::ExplicitChain {
            tokens,
            ev_alpha,
            ev_beta,
        });
    }
    let (a, rest) = match t.strip_prefix('a') {
        Some(r) => (ev_alpha, r),
        None => (0.0, t),
    };
    let digits = rest
        .find(|c: char| !(c.is_ascii_digit() || c == '.'))
        .ok_or_else(err)?;
    let angle: f64 = rest[..digits].parse().map_err(|_| err())?;
    let tail = &rest[digits..];
    let (axis_text, b) = if let Some(r) = tail.strip_suffix('b') {
        (r, ev_beta)
    } else if let Some(r) = tail.strip_suffix('a') {
        (r, ev_alpha)
    } else {
        (tail, 0.0)
    };
    let axis = parse_axis(axis_text).ok_or_else(err)?;
    TargetSpec::universal(
        a,
        b,
        AxisAngle {
            axis,
            angle: angle.to_radians(),
        },
    )
}

/// Target for the front half in REBURP mode:
/// `Z(½ evBeta ΩT) X(π/2) Z(evAlpha ΩT)` in full-duration fractions.
pub fn reburp_half_target(ev_alpha: f64, ev_beta: f64, offset: f64, duration: f64) -> Unitary2 {
    let wt = offset * duration;
    Unitary2::rz(0.5 * ev_beta * wt) * Unitary2::rx(FRAC_PI_2) * Unitary2::rz(ev_alpha * wt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::su2::unitary_fidelity;

    fn unitary(t: TargetAt) -> Unitary2 {
        match t {
            TargetAt::Unitary(u) => u,
            _ => panic!("not a unitary target"),
        }
    }

    #[test]
    fn plain_90x_is_offset_independent() {
        let t = parse_target("90x", 0.95, 0.0).unwrap();
        for off in [0.0, 1000.0, -3000.0] {
            let u = unitary(t.at(off, 2e-3));
            assert!(unitary_fidelity(&u, &Unitary2::rx(FRAC_PI_2)) > 1.0 - 1e-14);
        }
    }

    #[test]
    fn a90xb_binds_ev_parameters() {
        let t = parse_target("a90xb", 0.95, 0.1).unwrap();
        match t {
            TargetSpec::UniversalRotation { a, b, .. } => {
                assert_eq!((a, b), (0.95, 0.1));
            }
            _ => panic!(),
        }
    }

    #[test]
    fn explicit_chain() {
        let t = parse_target("0.5O;0.25B;0.5O", 0.0, 0.0).unwrap();
        let (off, dur) = (1234.0, 2e-3);
        let u = unitary(t.at(off, dur));
        let wt = off * dur;
        let expect = Unitary2::rz(0.5 * wt) * Unitary2::rx(FRAC_PI_2) * Unitary2::rz(0.5 * wt);
        assert!(unitary_fidelity(&u, &expect) > 1.0 - 1e-14);
        let t = parse_target("bZ;0.25B;aZ", 0.7, 0.2).unwrap();
        let u = unitary(t.at(off, dur));
        let expect = Unitary2::rz(0.2 * wt) * Unitary2::rx(FRAC_PI_2) * Unitary2::rz(0.7 * wt);
        assert!(unitary_fidelity(&u, &expect) > 1.0 - 1e-14);
    }

    #[test]
    fn evolved_state_target() {
        let t = parse_target("Iz -0.2OIy", 0.0, 0.0).unwrap();
        let dur = 1e-3;
        let off = PI / dur;
        match t.at(off, dur) {
            TargetAt::State { initial, target } => {
                assert_eq!(initial.cartesian(), [0.0, 0.0, 1.0]);
                let c = target.cartesian();
                assert!((c[0] - (0.2 * PI).sin()).abs() < 1e-12);
                assert!((c[1] + (0.2 * PI).cos()).abs() < 1e-12);
                assert!(c[2].abs() < 1e-12);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn listing_targets_parse() {
        for line in [
            "a90xb",
            "0.5O;0.25B;0.5O",
            "90x",
            "Iz -Iy",
            "Iz -0.2OIy",
            "180x",
            "Iz -Iz",
            "Iz Iex",
        ] {
            let t = parse_target(line, 0.95, 0.0).unwrap();
            let again = parse_target(&t.to_text(), 0.95, 0.0).unwrap();
            assert_eq!(t, again, "{line}");
        }
        assert!(parse_target("Iz Iq", 0.0, 0.0).is_err());
        assert!(parse_target("90q", 0.0, 0.0).is_err());
    }

    #[test]
    fn controlled_180_is_rejected() {
        assert_eq!(
            parse_target("a180xa", 0.47, 0.0),
            Err(TargetError::Singular180)
        );
        assert!(parse_target("180x", 0.47, 0.0).is_ok());
    }
}
