//! Limited-memory BFGS with a strong Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once the objective falls below this value.
    pub f_target: f64,
    /// Stop once the largest gradient component falls below this value.
    pub g_tol: f64,
    /// Largest allowed change of any parameter in the first trial step.
    pub max_step: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 12,
            max_iter: 1000,
            f_target: 0.0,
            g_tol: 1e-12,
            max_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Target,
    Gradient,
    MaxIter,
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub reason: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient. `on_iter`
/// sees `(iteration, value)` after every accepted step; the accepted values
/// never increase.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: Vec<f64>,
    cfg: &LbfgsConfig,
    mut on_iter: impl FnMut(usize, f64),
) -> LbfgsResult {
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let reason = loop {
        if fx <= cfg.f_target {
            break StopReason::Target;
        }
        if max_abs(&g) <= cfg.g_tol {
            break StopReason::Gradient;
        }
        if iterations >= cfg.max_iter {
            break StopReason::MaxIter;
        }
        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                hist.clear();
            }
            let d = direction(&g, &hist);
            let slope = dot(&g, &d);
            if !(slope < 0.0) {
                continue;
            }
            let step = if hist.is_empty() {
                (cfg.max_step / max_abs(&d)).min(1.0)
            } else {
                1.0
            };
            accepted = line_search(&mut f, &x, fx, slope, &d, step, &mut evaluations);
            if accepted.is_some() {
                break;
            }
        }
        let Some((xn, fn_, gn)) = accepted else {
            break StopReason::LineSearch;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if hist.len() == cfg.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        fx = fn_;
        g = gn;
        iterations += 1;
        on_iter(iterations, fx);
    };
    LbfgsResult {
        x,
        f: fx,
        iterations,
        evaluations,
        reason,
    }
}

type Trial = (Vec<f64>, f64, Vec<f64>);

/// Strong Wolfe line search along `d` with bracketing and bisection-safeguarded
/// cubic zoom. Every returned point satisfies the Armijo condition.
fn line_search(
    f: &mut impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x: &[f64],
    fx: f64,
    slope: f64,
    d: &[f64],
    step0: f64,
    evaluations: &mut usize,
) -> Option<Trial> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut eval = |t: f64| {
        let xn: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let (v, g) = f(&xn);
        *evaluations += 1;
        let dv = dot(&g, d);
        (xn, v, g, dv)
    };
    let armijo = |t: f64, v: f64| v.is_finite() && v <= fx + C1 * t * slope;
    let mut best: Option<Trial> = None;
    let (mut lo, mut flo, mut dlo) = (0.0, fx, slope);
    let mut hi = f64::NAN;
    let (mut fhi, mut dhi) = (f64::NAN, f64::NAN);
    let mut t = step0;
    for _ in 0..40 {
        let (xn, v, g, dv) = eval(t);
        if !armijo(t, v) || v >= flo {
            hi = t;
            fhi = v;
            dhi = dv;
        } else {
            if dv.abs() <= -C2 * slope {
                return Some((xn, v, g));
            }
            best = Some((xn, v, g));
            if dv * (hi - lo) >= 0.0 && !hi.is_nan() {
                hi = lo;
                fhi = flo;
                dhi = dlo;
            }
            if dv >= 0.0 && hi.is_nan() {
                hi = lo;
                fhi = flo;
                dhi = dlo;
            }
            lo = t;
            flo = v;
            dlo = dv;
        }
        t = if hi.is_nan() {
            2.0 * t
        } else {
            let c = cubic_min(lo, flo, dlo, hi, fhi, dhi);
            let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
            let margin = 0.1 * (b - a);
            match c {
                Some(c) if c > a + margin && c < b - margin => c,
                _ => 0.5 * (lo + hi),
            }
        };
        if !hi.is_nan() && (hi - lo).abs() < 1e-14 * lo.abs().max(1e-300) {
            break;
        }
    }
    best
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    if !(fb.is_finite() && db.is_finite()) {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Two-loop recursion for `-H g`.
fn direction(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
