//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsSettings {
    /// Correction pairs kept for the two-loop recursion.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            memory: 5,
            max_iterations: 500,
            gradient_tolerance: 1e-4,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    IterationCap,
    /// No step satisfying the Wolfe conditions was found; usually the
    /// objective is flat to machine precision.
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LbfgsError {
    #[error("objective became non-finite at iteration {0}")]
    NonFinite(usize),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], alpha: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + alpha * b).collect()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(g: &[f64], pairs: &VecDeque<Pair>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for p in pairs.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        q.iter_mut().zip(&p.y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some(last) = pairs.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (p, a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        q.iter_mut().zip(&p.s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct Probe {
    step: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    grad: Vec<f64>,
}

/// Minimizes `f`, which returns the objective and its gradient.
pub fn minimize(
    x0: Vec<f64>,
    settings: &LbfgsSettings,
    mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>),
) -> Result<LbfgsResult, LbfgsError> {
    let mut x = x0;
    let (mut value, mut grad) = f(&x);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(LbfgsError::NonFinite(0));
    }
    let mut history = vec![value];
    let mut pairs: VecDeque<Pair> = VecDeque::with_capacity(settings.memory);
    let mut iterations = 0;
    let termination = loop {
        if norm(&grad) < settings.gradient_tolerance {
            break Termination::Converged;
        }
        if iterations >= settings.max_iterations {
            break Termination::IterationCap;
        }
        let mut dir = two_loop(&grad, &pairs);
        let mut slope = dot(&dir, &grad);
        if slope >= 0.0 {
            // curvature history went bad; restart from steepest descent
            pairs.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -dot(&grad, &grad);
        }
        let initial = if pairs.is_empty() {
            1.0 / norm(&grad).max(1.0)
        } else {
            1.0
        };
        let Some(probe) = line_search(&x, value, slope, &dir, initial, settings, &mut f, iterations)? else {
            break Termination::LineSearchFailed;
        };
        let s: Vec<f64> = probe.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = probe.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == settings.memory {
                pairs.pop_front();
            }
            pairs.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        x = probe.x;
        value = probe.value;
        grad = probe.grad;
        history.push(value);
        iterations += 1;
    };
    Ok(LbfgsResult {
        gradient_norm: norm(&grad),
        x,
        value,
        iterations,
        termination,
        history,
    })
}

#[allow(clippy::too_many_arguments)]
fn line_search(
    x: &[f64],
    value: f64,
    slope: f64,
    dir: &[f64],
    initial: f64,
    settings: &LbfgsSettings,
    f: &mut impl FnMut(&[f64]) -> (f64, Vec<f64>),
    iteration: usize,
) -> Result<Option<Probe>, LbfgsError> {
    let mut eval = |step: f64| -> Result<Probe, LbfgsError> {
        let xn = axpy(x, step, dir);
        let (v, g) = f(&xn);
        if !v.is_finite() || g.iter().any(|g| !g.is_finite()) {
            return Err(LbfgsError::NonFinite(iteration + 1));
        }
        Ok(Probe {
            step,
            value: v,
            slope: dot(&g, dir),
            x: xn,
            grad: g,
        })
    };
    let origin = Probe {
        step: 0.0,
        value,
        slope,
        x: x.to_vec(),
        grad: Vec::new(),
    };
    let armijo = |p: &Probe| p.value <= value + settings.c1 * p.step * slope;
    let curvature = |p: &Probe| p.slope.abs() <= -settings.c2 * slope;

    let mut prev = origin;
    let mut step = initial;
    for i in 0..settings.max_line_search {
        let p = eval(step)?;
        if !armijo(&p) || (i > 0 && p.value >= prev.value) {
            return zoom(prev, p, value, slope, settings, &mut eval);
        }
        if curvature(&p) {
            return Ok(Some(p));
        }
        if p.slope >= 0.0 {
            return zoom(p, prev, value, slope, settings, &mut eval);
        }
        prev = p;
        step *= 2.0;
    }
    Ok(None)
}

/// Shrinks the bracket `[lo, hi]` (by step, in either order) until a point
/// meets both Wolfe conditions. `lo` always satisfies sufficient decrease.
fn zoom(
    mut lo: Probe,
    mut hi: Probe,
    value: f64,
    slope: f64,
    settings: &LbfgsSettings,
    eval: &mut impl FnMut(f64) -> Result<Probe, LbfgsError>,
) -> Result<Option<Probe>, LbfgsError> {
    for _ in 0..settings.max_line_search {
        let step = interpolate(&lo, &hi);
        if (hi.step - lo.step).abs() < 1e-16 * lo.step.abs().max(1.0) {
            break;
        }
        let p = eval(step)?;
        if p.value > value + settings.c1 * step * slope || p.value >= lo.value {
            hi = p;
        } else {
            if p.slope.abs() <= -settings.c2 * slope {
                return Ok(Some(p));
            }
            if p.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    // fall back to the best sufficient-decrease point found, if it moved
    Ok(if lo.step > 0.0 && !lo.grad.is_empty() {
        Some(lo)
    } else {
        None
    })
}

/// Minimizer of the cubic through both endpoints, kept away from the ends;
/// bisection when the cubic is unusable.
fn interpolate(a: &Probe, b: &Probe) -> f64 {
    let (lo, hi) = if a.step < b.step { (a, b) } else { (b, a) };
    let width = hi.step - lo.step;
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (lo.step - hi.step);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mid = 0.5 * (lo.step + hi.step);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = disc.sqrt();
    let t = hi.step - width * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    if !t.is_finite() {
        return mid;
    }
    t.clamp(lo.step + 0.1 * width, hi.step - 0.1 * width)
}
