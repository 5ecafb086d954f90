//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The optimizer state is a handful of `f64` vectors of length `d + 3`, so it
//! is kept in `f64` regardless of the model's scalar type.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iters: usize,
    /// Stop when the gradient's infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when the objective changes by less than this between iterates.
    pub change_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            history: 10,
            max_iters: 100,
            grad_tol: 1e-5,
            change_tol: 1e-9,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LbfgsStatus {
    GradientTolerance,
    ChangeTolerance,
    MaxIterations,
    /// No acceptable step from the current iterate, even along the
    /// steepest-descent direction.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective at the start point and after every accepted step.
    pub trace: Vec<f64>,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn axpy(alpha: f64, dir: &[f64], x: &[f64]) -> Vec<f64> {
    x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect()
}

struct Point {
    step: f64,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

/// Minimizer of the cubic interpolating two points with values and slopes,
/// clamped to `[lo, hi]`; falls back to bisection.
fn cubic_min(a: &Point, b: &Point, lo: f64, hi: f64) -> f64 {
    let d1 = a.slope + b.slope - 3.0 * (a.value - b.value) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if disc >= 0.0 {
        let d2 = disc.sqrt().copysign(b.step - a.step);
        let t = b.step - (b.step - a.step) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

enum Search {
    Found(Point),
    Failed,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    cfg: &'a LbfgsConfig,
    evals: usize,
    best_armijo: Option<Point>,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, step: f64) -> Point {
        self.evals += 1;
        let xs = axpy(step, self.dir, self.x);
        match (self.f)(&xs) {
            Ok((value, grad)) if value.is_finite() && grad.iter().all(|g| g.is_finite()) => {
                let slope = dot(&grad, self.dir);
                Point {
                    step,
                    value,
                    grad,
                    slope,
                }
            }
            _ => Point {
                step,
                value: f64::INFINITY,
                grad: vec![f64::NAN; self.x.len()],
                slope: f64::NAN,
            },
        }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.value <= self.f0 + self.cfg.c1 * p.step * self.slope0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -self.cfg.c2 * self.slope0
    }

    fn note(&mut self, p: &Point) {
        if self.armijo(p) && p.value < self.best_armijo.as_ref().map_or(f64::INFINITY, |b| b.value) {
            self.best_armijo = Some(Point {
                step: p.step,
                value: p.value,
                grad: p.grad.clone(),
                slope: p.slope,
            });
        }
    }

    fn give_up(&mut self) -> Search {
        match self.best_armijo.take() {
            Some(p) => Search::Found(p),
            None => Search::Failed,
        }
    }

    fn run(&mut self, initial_step: f64) -> Search {
        let origin = Point {
            step: 0.0,
            value: self.f0,
            grad: Vec::new(),
            slope: self.slope0,
        };
        let mut prev = origin;
        let mut step = initial_step;
        let mut first = true;
        loop {
            if self.evals >= self.cfg.max_line_search_evals {
                return self.give_up();
            }
            let cur = self.eval(step);
            if !cur.value.is_finite() {
                // overshot into an invalid region: shrink towards the last good point
                let lo = prev.step;
                step = lo + 0.1 * (step - lo);
                if (step - lo).abs() < 1e-12 {
                    return self.give_up();
                }
                continue;
            }
            self.note(&cur);
            if !self.armijo(&cur) || (!first && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Search::Found(cur);
            }
            if cur.slope >= 0.0 {
                return self.zoom(cur, prev);
            }
            let next = cubic_min(&prev, &cur, cur.step * 1.01, cur.step * 10.0);
            prev = cur;
            step = next;
            first = false;
        }
    }

    /// `lo` satisfies sufficient decrease and has the lower value of the
    /// bracket; the minimizer lies between `lo` and `hi`.
    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Search {
        loop {
            if self.evals >= self.cfg.max_line_search_evals {
                return self.give_up();
            }
            let (a, b) = if lo.step < hi.step {
                (lo.step, hi.step)
            } else {
                (hi.step, lo.step)
            };
            let width = b - a;
            if width < 1e-12 * b.abs().max(1e-12) {
                return self.give_up();
            }
            let mut step = if hi.value.is_finite() && hi.slope.is_finite() {
                cubic_min(&lo, &hi, a, b)
            } else {
                0.5 * (a + b)
            };
            // keep the trial away from the bracket ends
            let margin = 0.1 * width;
            step = step.clamp(a + margin, b - margin);
            let cur = self.eval(step);
            self.note(&cur);
            if !cur.value.is_finite() || !self.armijo(&cur) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Search::Found(cur);
                }
                if cur.slope * (hi.step - lo.step) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
    }
}

/// Minimizes `f` from `x0`. `f` returns the objective and its gradient; an
/// error at a trial point during a line search is treated as an infinite
/// objective, while an error at `x0` is returned.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut value, mut grad) = f(&x0)?;
    let mut x = x0;
    let mut evaluations = 1;
    let mut trace = vec![value];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let mut iterations = 0;

    let status = loop {
        if inf_norm(&grad) <= cfg.grad_tol {
            break LbfgsStatus::GradientTolerance;
        }
        if iterations >= cfg.max_iters {
            break LbfgsStatus::MaxIterations;
        }

        let mut retried = false;
        let accepted = loop {
            let dir = two_loop(&grad, &mem);
            let mut slope0 = dot(&grad, &dir);
            let dir = if slope0 < 0.0 {
                dir
            } else {
                mem.clear();
                let d: Vec<f64> = grad.iter().map(|g| -g).collect();
                slope0 = dot(&grad, &d);
                d
            };
            let initial_step = if mem.is_empty() {
                (1.0 / grad.iter().map(|g| g.abs()).sum::<f64>()).min(1.0)
            } else {
                1.0
            };
            let mut ls = LineSearch {
                f: &mut f,
                x: &x,
                dir: &dir,
                f0: value,
                slope0,
                cfg,
                evals: 0,
                best_armijo: None,
            };
            let outcome = ls.run(initial_step);
            evaluations += ls.evals;
            match outcome {
                Search::Found(p) => break Some((p, dir)),
                Search::Failed if !retried && !mem.is_empty() => {
                    log::debug!("line search failed; resetting L-BFGS memory");
                    mem.clear();
                    retried = true;
                }
                Search::Failed => break None,
            }
        };

        let Some((p, dir)) = accepted else {
            break LbfgsStatus::LineSearchFailed;
        };
        iterations += 1;
        let s: Vec<f64> = dir.iter().map(|d| d * p.step).collect();
        let y: Vec<f64> = p.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let new_x = axpy(1.0, &s, &x);
        let change = (value - p.value).abs();
        x = new_x;
        value = p.value;
        grad = p.grad;
        trace.push(value);
        if sy > 1e-10 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if mem.len() == cfg.history {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        if change <= cfg.change_tol * value.abs().max(1.0) {
            break LbfgsStatus::ChangeTolerance;
        }
    };

    Ok(LbfgsOutcome {
        x,
        value,
        grad,
        iterations,
        evaluations,
        trace,
        status,
    })
}

fn two_loop(grad: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q
}
