//! RK4 integration of polynomial vector fields, twisting, and the
//! (theta, d)-simulation.

use std::fmt::Write as _;

use thiserror::Error;

use crate::poly::Polynomial;

/// Past this magnitude a state is treated as diverged.
const BLOWUP: f64 = 1e100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("trajectory diverged at t = {t}")]
    Diverged { t: f64, partial: Trace },
    #[error("vector field vanishes at t = {t} (equilibrium)")]
    Equilibrium { t: f64 },
    #[error("step budget of {0} exhausted")]
    StepBudget(usize),
}

/// Flat form of a polynomial for fast evaluation.
#[derive(Clone, Debug)]
struct Compiled {
    terms: Vec<(f64, Vec<(usize, i32)>)>,
}

impl Compiled {
    fn new(p: &Polynomial) -> Self {
        Compiled {
            terms: p
                .terms()
                .map(|(m, c)| {
                    let f = m.0.iter().enumerate().filter(|(_, &e)| e > 0).map(|(i, &e)| (i, e as i32)).collect();
                    (c, f)
                })
                .collect(),
        }
    }

    #[inline]
    fn eval(&self, xu: &[f64]) -> f64 {
        let mut s = 0.0;
        for (c, f) in &self.terms {
            let mut t = *c;
            for &(i, e) in f {
                t *= if e == 1 { xu[i] } else { xu[i].powi(e) };
            }
            s += t;
        }
        s
    }
}

/// A polynomial vector field over `(x, u)` with its state Jacobian.
#[derive(Clone, Debug)]
pub struct VectorField {
    n: usize,
    l: usize,
    comps: Vec<Compiled>,
    jac: Vec<Vec<Compiled>>,
}

impl VectorField {
    /// `dynamics[i]` is `dx_i/dt` over `nstate` states followed by the
    /// uncertainty variables.
    pub fn new(dynamics: &[Polynomial]) -> Self {
        let n = dynamics.len();
        let full = dynamics.first().map_or(n, Polynomial::nvars);
        VectorField {
            n,
            l: full - n,
            comps: dynamics.iter().map(Compiled::new).collect(),
            jac: dynamics
                .iter()
                .map(|f| (0..n).map(|j| Compiled::new(&f.partial(j))).collect())
                .collect(),
        }
    }

    pub fn nstate(&self) -> usize {
        self.n
    }

    pub fn nuncertain(&self) -> usize {
        self.l
    }

    fn stack(&self, x: &[f64], u: &[f64], buf: &mut Vec<f64>) {
        buf.clear();
        buf.extend_from_slice(x);
        buf.extend_from_slice(u);
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut buf = Vec::with_capacity(self.n + self.l);
        self.stack(x, u, &mut buf);
        self.comps.iter().map(|c| c.eval(&buf)).collect()
    }

    /// Infinity norm of the state Jacobian at `(x, u)`.
    pub fn jacobian_norm(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut buf = Vec::with_capacity(self.n + self.l);
        self.stack(x, u, &mut buf);
        self.jac
            .iter()
            .map(|row| row.iter().map(|c| c.eval(&buf).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TracePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
}

/// Samples of one trajectory, with the derivative at each sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub points: Vec<TracePoint>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn last(&self) -> Option<&TracePoint> {
        self.points.last()
    }

    /// CSV with a `t,<names...>` header.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut s = String::from("t");
        for n in names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for p in &self.points {
            let _ = write!(s, "{:?}", p.t);
            for v in &p.x {
                let _ = write!(s, ",{v:?}");
            }
            s.push('\n');
        }
        s
    }
}

fn axpy(x: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    x.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// One classical RK4 step.
pub fn rk4_step(f: &VectorField, x: &[f64], u: &[f64], h: f64) -> Vec<f64> {
    let k1 = f.eval(x, u);
    let k2 = f.eval(&axpy(x, 0.5 * h, &k1), u);
    let k3 = f.eval(&axpy(x, 0.5 * h, &k2), u);
    let k4 = f.eval(&axpy(x, h, &k3), u);
    x.iter()
        .enumerate()
        .map(|(i, &v)| v + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite() && v.abs() < BLOWUP)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Fixed-step RK4 from `x0` for `steps` steps of size `h`; the trace has
/// `steps + 1` samples.
pub fn integrate(f: &VectorField, u: &[f64], x0: &[f64], h: f64, steps: usize) -> Result<Trace, SimError> {
    assert!(h > 0.0, "step must be positive");
    let mut trace = Trace::default();
    let mut x = x0.to_vec();
    for k in 0..=steps {
        let t = h * k as f64;
        let dx = f.eval(&x, u);
        if !finite(&x) || !finite(&dx) {
            return Err(SimError::Diverged { t, partial: trace });
        }
        trace.points.push(TracePoint { t, x: x.clone(), dx });
        if k < steps {
            x = rk4_step(f, &x, u, h);
        }
    }
    Ok(trace)
}

/// Step-size rule for variable-step runs: each step travels at most `arc`
/// (in state space) and satisfies `h * |J|_inf <= kappa`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRule {
    pub arc: f64,
    pub kappa: f64,
    pub max_steps: usize,
}

impl StepRule {
    pub fn for_distance(d: f64) -> Self {
        StepRule { arc: d / 500.0, kappa: 1.0, max_steps: 400_000 }
    }

    /// Step size at `x`, whose derivative is `dx`. Fails at equilibria.
    pub fn step(&self, f: &VectorField, x: &[f64], u: &[f64], dx: &[f64], t: f64) -> Result<f64, SimError> {
        let speed = norm(dx);
        if speed == 0.0 {
            return Err(SimError::Equilibrium { t });
        }
        let mut h = self.arc / speed;
        let j = f.jacobian_norm(x, u);
        if j > 0.0 {
            h = h.min(self.kappa / j);
        }
        Ok(h)
    }
}

fn angle(a: &[f64], b: &[f64]) -> f64 {
    let c = a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    c.clamp(-1.0, 1.0).acos()
}

fn unit(v: &[f64], t: f64) -> Result<Vec<f64>, SimError> {
    let n = norm(v);
    if n == 0.0 {
        return Err(SimError::Equilibrium { t });
    }
    Ok(v.iter().map(|a| a / n).collect())
}

/// Largest angle between derivative directions over the trace, computed on
/// at most 256 uniformly thinned samples (first and last always kept).
pub fn twisting(trace: &Trace) -> Result<f64, SimError> {
    let pts = &trace.points;
    let idx: Vec<usize> = if pts.len() <= 256 {
        (0..pts.len()).collect()
    } else {
        let mut v: Vec<usize> = (0..256).map(|k| k * (pts.len() - 1) / 255).collect();
        v.dedup();
        v
    };
    let dirs = idx
        .iter()
        .map(|&i| unit(&pts[i].dx, pts[i].t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best: f64 = 0.0;
    for i in 0..dirs.len() {
        for j in i + 1..dirs.len() {
            best = best.max(angle(&dirs[i], &dirs[j]));
        }
    }
    Ok(best)
}

/// Running maximum pairwise angle over a stream of directions. A direction is
/// stored only when it differs from the last stored one by more than
/// `resolution`, which bounds the under-estimate by `resolution`.
#[derive(Clone, Debug)]
pub struct TwistTracker {
    stored: Vec<Vec<f64>>,
    resolution: f64,
    pub max: f64,
}

impl TwistTracker {
    pub fn new(resolution: f64) -> Self {
        TwistTracker { stored: Vec::new(), resolution, max: 0.0 }
    }

    pub fn push(&mut self, dir: Vec<f64>) -> f64 {
        for s in &self.stored {
            self.max = self.max.max(angle(s, &dir));
        }
        if self.stored.last().is_none_or(|last| angle(last, &dir) > self.resolution) {
            self.stored.push(dir);
        }
        self.max
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Twist,
    Dist,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaDRun {
    pub trace: Trace,
    pub endpoint: Vec<f64>,
    pub reason: StopReason,
}

/// Integrates from `x0` until the twisting reaches `theta` or the distance
/// from `x0` reaches `d`, whichever happens first.
pub fn theta_d_simulation(
    f: &VectorField,
    u: &[f64],
    x0: &[f64],
    theta: f64,
    d: f64,
) -> Result<ThetaDRun, SimError> {
    assert!(theta > 0.0 && d > 0.0);
    let rule = StepRule::for_distance(d);
    // per-step turn of the derivative is kept below this angle
    let max_turn = theta / 32.0;
    let mut tracker = TwistTracker::new(theta / 64.0);
    let mut trace = Trace::default();
    let mut x = x0.to_vec();
    let mut dx = f.eval(&x, u);
    let mut t = 0.0;
    for _ in 0..rule.max_steps {
        if !finite(&x) || !finite(&dx) {
            return Err(SimError::Diverged { t, partial: trace });
        }
        let dir = unit(&dx, t)?;
        let tw = tracker.push(dir.clone());
        let mut h = rule.step(f, &x, u, &dx, t)?;
        trace.points.push(TracePoint { t, x: x.clone(), dx: dx.clone() });
        let reason = if tw >= theta {
            Some(StopReason::Twist)
        } else if dist(&x, x0) >= d {
            Some(StopReason::Dist)
        } else {
            None
        };
        if let Some(reason) = reason {
            return Ok(ThetaDRun { endpoint: x, trace, reason });
        }
        let mut halvings = 0;
        let (xn, dxn) = loop {
            let xn = rk4_step(f, &x, u, h);
            let dxn = f.eval(&xn, u);
            let turned = finite(&dxn) && norm(&dxn) > 0.0 && {
                let nd = norm(&dxn);
                let c: f64 = dir.iter().zip(&dxn).map(|(a, b)| a * b / nd).sum();
                c.clamp(-1.0, 1.0).acos() > max_turn
            };
            if !turned || halvings >= 30 {
                break (xn, dxn);
            }
            h *= 0.5;
            halvings += 1;
        };
        x = xn;
        dx = dxn;
        t += h;
    }
    Err(SimError::StepBudget(rule.max_steps))
}
