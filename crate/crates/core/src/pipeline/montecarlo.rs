//! Simulation-based check of a tube chain: sampled trajectories under
//! piecewise-constant uncertainty must keep every certificate positive while
//! inside a tube, leave through its exit region, and enter the next stage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::modelio::{Hyperrect, Model};
use crate::par;
use crate::simulate::{rk4_step, StepRule, VectorField};

use super::Segment;

#[derive(Clone, Debug, PartialEq)]
pub enum ViolationKind {
    /// Certificate `cert` of the segment is not positive at the point.
    Barrier { cert: usize, value: f64 },
    /// Left the enclosure through a facet other than the exit facet.
    Escape,
    /// Crossed the exit facet outside the exit region.
    ExitOutside,
    /// Crossed the guard of `transition` where the tube does not allow it.
    Guard { transition: usize },
    /// No tube of the next stage contains the entry point.
    ChainBreak,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub trajectory: usize,
    pub segment: usize,
    pub point: Vec<f64>,
    pub kind: ViolationKind,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct McReport {
    pub trajectories: usize,
    /// Trajectories that left the last stage of the chain.
    pub completed: usize,
    /// Trajectories stopped by the step budget inside some tube.
    pub unfinished: usize,
    /// At most one per trajectory.
    pub violations: Vec<Violation>,
}

impl McReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McError {
    #[error("the number of trajectories must be at least 1")]
    NoSamples,
    #[error("the tube chain is empty")]
    NoTubes,
}

enum Outcome {
    Completed,
    Unfinished,
    Violated(Violation),
}

struct Ctx<'a> {
    model: &'a Model,
    segments: &'a [Segment],
    fields: Vec<VectorField>,
    u_arc: f64,
    seed: u64,
}

fn uniform(rng: &mut ChaCha8Rng, b: &Hyperrect) -> Vec<f64> {
    b.bounds().iter().map(|&(lo, hi)| if lo < hi { rng.gen_range(lo..=hi) } else { lo }).collect()
}

/// Smallest step fraction in `(0, 1]` at which `pred` holds, by bisection,
/// and the state there.
fn locate(f: &VectorField, x: &[f64], u: &[f64], h: f64, pred: impl Fn(&[f64]) -> bool) -> (f64, Vec<f64>) {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if pred(&rk4_step(f, x, u, mid * h)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi, rk4_step(f, x, u, hi * h))
}

fn tol(b: &Hyperrect) -> f64 {
    1e-9 * b.max_width().max(1e-12)
}

impl Ctx<'_> {
    fn next_segment(&self, k: usize, mode: usize, p: &[f64]) -> Result<Option<usize>, ()> {
        let stage = self.segments[k].stage + 1;
        let mut any = false;
        for (j, s) in self.segments.iter().enumerate().skip(k + 1) {
            if s.stage != stage {
                continue;
            }
            any = true;
            if s.mode == mode && s.x0.contains_point(p, tol(&s.x0)) {
                return Ok(Some(j));
            }
        }
        if any {
            Err(())
        } else {
            Ok(None)
        }
    }

    fn barrier_violation(&self, k: usize, x: &[f64]) -> Option<ViolationKind> {
        self.segments[k].certs.iter().enumerate().find_map(|(i, c)| {
            let v = c.b.eval_unchecked(x);
            (!(v > 0.0)).then_some(ViolationKind::Barrier { cert: i, value: v })
        })
    }

    fn trajectory(&self, idx: usize) -> Outcome {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (idx as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let model = self.model;
        let mut x = uniform(&mut rng, &model.init);
        let mut u = uniform(&mut rng, &model.uncertainty);
        let mut mode = model.init_mode;
        let violated = |segment: usize, point: &[f64], kind| {
            Outcome::Violated(Violation { trajectory: idx, segment, point: point.to_vec(), kind })
        };
        let Some(mut k) = self
            .segments
            .iter()
            .position(|s| s.stage == 0 && s.mode == mode && s.x0.contains_point(&x, tol(&s.x0)))
        else {
            return violated(0, &x, ViolationKind::ChainBreak);
        };
        let mut arc_since = 0.0;
        'tubes: loop {
            let seg = &self.segments[k];
            let field = &self.fields[mode];
            if let Some(kind) = self.barrier_violation(k, &x) {
                return violated(k, &x, kind);
            }
            let rule = StepRule::for_distance(seg.e.diameter());
            for _ in 0..rule.max_steps {
                let dx = field.eval(&x, &u);
                let Ok(h) = rule.step(field, &x, &u, &dx, 0.0) else {
                    return Outcome::Unfinished;
                };
                let xn = rk4_step(field, &x, &u, h);
                let guard = model
                    .transitions
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.from == mode)
                    .filter_map(|(ti, t)| {
                        let sign = crate::hybrid::guard_plane(&t.guard).side.sign();
                        let side = |y: &[f64]| (y[t.guard.var] - t.guard.bound) * sign;
                        (side(&x) < 0.0 && side(&xn) >= 0.0).then(|| {
                            let (s, p) = locate(field, &x, &u, h, |y| side(y) >= 0.0);
                            (s, ti, p)
                        })
                    })
                    .min_by(|a, b| a.0.total_cmp(&b.0));
                let leaves = !seg.e.contains_point(&xn, 0.0);
                let exit = leaves.then(|| locate(field, &x, &u, h, |y| !seg.e.contains_point(y, 0.0)));
                match (guard, exit) {
                    (Some((sg, ti, mut p)), e) if e.as_ref().is_none_or(|(se, _)| sg <= *se) => {
                        let t = &model.transitions[ti];
                        p[t.guard.var] = t.guard.bound;
                        if seg.guard != Some(ti) {
                            return violated(k, &p, ViolationKind::Guard { transition: ti });
                        }
                        if !seg.exit_region.contains_point(&p, tol(&seg.e)) {
                            return violated(k, &p, ViolationKind::ExitOutside);
                        }
                        if let Some(kind) = self.barrier_violation(k, &p) {
                            return violated(k, &p, kind);
                        }
                        let q: Vec<f64> = t
                            .reset
                            .iter()
                            .zip(&t.offset)
                            .map(|(row, o)| o + row.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>())
                            .collect();
                        mode = t.to;
                        match self.next_segment(k, mode, &q) {
                            Ok(Some(j)) => k = j,
                            Ok(None) => return Outcome::Completed,
                            Err(()) => return violated(k, &q, ViolationKind::ChainBreak),
                        }
                        x = q;
                        continue 'tubes;
                    }
                    (_, Some((_, mut p))) => {
                        let ex = seg.exit;
                        let outside: Vec<usize> = (0..p.len())
                            .filter(|&i| p[i] < seg.e.lo(i) || p[i] > seg.e.hi(i))
                            .collect();
                        let through_exit = seg.guard.is_none()
                            && outside == [ex.dim]
                            && (p[ex.dim] - ex.value) * ex.side.sign() > 0.0;
                        if !through_exit {
                            return violated(k, &p, ViolationKind::Escape);
                        }
                        p[ex.dim] = ex.value;
                        if !seg.exit_region.contains_point(&p, tol(&seg.e)) {
                            return violated(k, &p, ViolationKind::ExitOutside);
                        }
                        if let Some(kind) = self.barrier_violation(k, &p) {
                            return violated(k, &p, kind);
                        }
                        match self.next_segment(k, mode, &p) {
                            Ok(Some(j)) => k = j,
                            Ok(None) => return Outcome::Completed,
                            Err(()) => return violated(k, &p, ViolationKind::ChainBreak),
                        }
                        x = p;
                        continue 'tubes;
                    }
                    _ => {}
                }
                arc_since += x.iter().zip(&xn).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                x = xn;
                if let Some(kind) = self.barrier_violation(k, &x) {
                    return violated(k, &x, kind);
                }
                if arc_since >= self.u_arc {
                    arc_since = 0.0;
                    u = uniform(&mut rng, &model.uncertainty);
                }
            }
            return Outcome::Unfinished;
        }
    }
}

/// Runs `k` trajectories from the model's initial set through the chain.
/// The uncertainty is redrawn each time a trajectory has travelled `u_arc`.
/// Deterministic given `seed`, with or without parallelism.
pub fn monte_carlo_validate(
    model: &Model,
    segments: &[Segment],
    k: usize,
    seed: u64,
    u_arc: f64,
    parallel: bool,
) -> Result<McReport, McError> {
    if k == 0 {
        return Err(McError::NoSamples);
    }
    if segments.is_empty() {
        return Err(McError::NoTubes);
    }
    let ctx = Ctx {
        model,
        segments,
        fields: model.modes.iter().map(|m| VectorField::new(&m.dynamics)).collect(),
        u_arc,
        seed,
    };
    let outcomes = par::map_range(k, parallel, |i| ctx.trajectory(i));
    let mut report = McReport { trajectories: k, ..McReport::default() };
    for o in outcomes {
        match o {
            Outcome::Completed => report.completed += 1,
            Outcome::Unfinished => report.unfinished += 1,
            Outcome::Violated(v) => report.violations.push(v),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{compute_prbt, tests::translation_model, Params};

    #[test]
    fn translation_chain_is_clean_and_mutation_is_caught() {
        let m = translation_model();
        let p = Params { d0: Some(1.0), ..Params::default() };
        let prbt = compute_prbt(&m, 3, &p).unwrap();
        let rep = monte_carlo_validate(&m, &prbt.segments, 50, 7, 0.02, true).unwrap();
        assert!(rep.passed(), "{:?}", rep.violations.first());
        assert_eq!(rep.completed, 50);
        let again = monte_carlo_validate(&m, &prbt.segments, 50, 7, 0.02, false).unwrap();
        assert_eq!(rep, again);

        let mut bad = prbt.segments.clone();
        bad[1].certs[0].b = bad[1].certs[0].b.scale(-1.0);
        let rep = monte_carlo_validate(&m, &bad, 20, 7, 0.02, true).unwrap();
        assert_eq!(rep.violations.len(), 20);
        assert!(rep.violations.iter().all(|v| v.segment == 1));
    }

    #[test]
    fn zero_samples_rejected() {
        let m = translation_model();
        let p = Params { d0: Some(1.0), ..Params::default() };
        let prbt = compute_prbt(&m, 1, &p).unwrap();
        assert_eq!(monte_carlo_validate(&m, &prbt.segments, 0, 1, 0.02, true), Err(McError::NoSamples));
    }
}
