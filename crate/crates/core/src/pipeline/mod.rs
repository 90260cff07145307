//! Chains robust barrier tubes into a piecewise tube, switching modes at
//! guard crossings, and checks the result.

pub mod dump;
pub mod montecarlo;
pub mod safety;

use std::fmt;

use thiserror::Error;

use crate::certify::{BarrierCertificate, CertifyOptions};
use crate::enclosure::{certify_facets, construct_enclosure, EnclosureError, ExitFacet, Flow};
use crate::hybrid::{detect_guard_where, guard_repelled, handle_transition, GuardParams, HybridError, QUEUE_BUDGET};
use crate::modelio::{Hyperrect, Model};
use crate::simulate::VectorField;
use crate::tube::{compute_rbt, RobustBarrierTube, TubeError};

pub use montecarlo::{monte_carlo_validate, McReport, Violation, ViolationKind};
pub use safety::{check_safety, Safety};

#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub theta0: f64,
    /// Initial simulation distance; `None` uses a fifth of the diameter of
    /// the current mode's invariant.
    pub d0: Option<f64>,
    /// `None` uses `theta0 / 16`.
    pub theta_min: Option<f64>,
    pub eps_rel: f64,
    pub opts: CertifyOptions,
    pub queue_budget: usize,
    pub parallel: bool,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            theta0: 0.3,
            d0: None,
            theta_min: None,
            eps_rel: 0.01,
            opts: CertifyOptions::default(),
            queue_budget: QUEUE_BUDGET,
            parallel: true,
        }
    }
}

impl Params {
    pub fn d0_for(&self, invariant: &Hyperrect) -> f64 {
        self.d0.unwrap_or(0.2 * invariant.diameter())
    }

    pub fn theta_floor(&self) -> f64 {
        self.theta_min.unwrap_or(self.theta0 / 16.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    CountReached,
    ThetaFloor,
    RbtFail,
    GuardEvent,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::CountReached => "COUNT-REACHED",
            Termination::ThetaFloor => "THETA-FLOOR",
            Termination::RbtFail => "RBT-FAIL",
            Termination::GuardEvent => "GUARD-EVENT",
        }
    }

    pub fn parse(s: &str) -> Option<Termination> {
        [Termination::CountReached, Termination::ThetaFloor, Termination::RbtFail, Termination::GuardEvent]
            .into_iter()
            .find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One tube of the chain in the form needed to check it: its boxes and all
/// its certificates (facets first, then slabs).
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// Tubes of stage `k + 1` start where tubes of stage `k` exit.
    pub stage: usize,
    pub mode: usize,
    /// Set when the exit facet is the guard plane of this transition.
    pub guard: Option<usize>,
    pub x0: Hyperrect,
    pub e: Hyperrect,
    pub exit: ExitFacet,
    pub g: Hyperrect,
    pub exit_region: Hyperrect,
    pub certs: Vec<BarrierCertificate>,
}

impl Segment {
    pub fn from_tube(t: &RobustBarrierTube, stage: usize, guard: Option<usize>) -> Segment {
        let en = &t.enclosure.enclosure;
        Segment {
            stage,
            mode: t.mode,
            guard,
            x0: t.x0.clone(),
            e: en.e.clone(),
            exit: en.exit,
            g: en.g.clone(),
            exit_region: t.exit_region.clone(),
            certs: t.certificates().into_iter().cloned().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuardEvent {
    pub transition: usize,
    /// Stage of the tubes ending on the guard.
    pub stage: usize,
    pub crossing: Hyperrect,
    pub image: Hyperrect,
    pub sub_boxes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseTube {
    pub segments: Vec<Segment>,
    pub events: Vec<GuardEvent>,
    pub termination: Termination,
    /// Last failure message when the run stopped early.
    pub failure: Option<String>,
}

impl PiecewiseTube {
    pub fn certificates(&self) -> impl Iterator<Item = &BarrierCertificate> {
        self.segments.iter().flat_map(|s| s.certs.iter())
    }

    pub fn num_stages(&self) -> usize {
        self.segments.last().map_or(0, |s| s.stage + 1)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid parameter {name}: {msg}")]
    InvalidParams { name: &'static str, msg: String },
}

#[derive(Debug, Error)]
enum Failure {
    #[error(transparent)]
    Enclosure(#[from] EnclosureError),
    #[error(transparent)]
    Tube(#[from] TubeError),
    #[error(transparent)]
    Hybrid(#[from] HybridError),
}

impl Failure {
    fn reason(&self) -> Termination {
        match self {
            Failure::Enclosure(_) => Termination::ThetaFloor,
            Failure::Tube(TubeError::RbtFail { .. }) => Termination::RbtFail,
            Failure::Tube(_) => Termination::ThetaFloor,
            Failure::Hybrid(_) => Termination::GuardEvent,
        }
    }
}

enum Step {
    Tube(RobustBarrierTube),
    Guard(usize, crate::hybrid::GuardOutcome),
}

struct Run<'a> {
    model: &'a Model,
    params: &'a Params,
    fields: Vec<VectorField>,
}

impl Run<'_> {
    fn flow(&self, mode: usize) -> Flow<'_> {
        let m = &self.model.modes[mode];
        Flow {
            dynamics: &m.dynamics,
            field: &self.fields[mode],
            invariant: &m.invariant,
            uncertainty: &self.model.uncertainty,
        }
    }

    fn attempt(&self, mode: usize, x0: &Hyperrect, theta: f64, d: f64) -> Result<Step, Failure> {
        let p = self.params;
        let flow = self.flow(mode);
        let enc = construct_enclosure(&flow, x0, theta, d, p.parallel)?;
        let hit = detect_guard_where(&enc.e, &self.model.transitions, mode, |t| {
            Ok(!guard_repelled(&flow, &enc.e, &t.guard).unwrap_or(false))
        })?;
        if let Some(ti) = hit {
            let prm = GuardParams { opts: &p.opts, eps_rel: p.eps_rel, d, budget: p.queue_budget, parallel: p.parallel };
            let out = handle_transition(&flow, mode, x0, &self.model.transitions[ti], &prm)?;
            return Ok(Step::Guard(ti, out));
        }
        let enc = certify_facets(&flow, x0, enc, &p.opts, p.parallel)?;
        Ok(Step::Tube(compute_rbt(&flow, mode, x0, enc, p.eps_rel, &p.opts, p.parallel)?))
    }
}

fn check_params(n: usize, p: &Params) -> Result<(), PipelineError> {
    let bad = |name, msg: &str| Err(PipelineError::InvalidParams { name, msg: msg.to_string() });
    if n == 0 {
        return bad("tubes", "must be at least 1");
    }
    if !(p.theta0 > 0.0) {
        return bad("theta0", "must be positive");
    }
    if !(p.theta_floor() > 0.0 && p.theta_floor() <= p.theta0) {
        return bad("theta_min", "must lie in (0, theta0]");
    }
    if p.d0.is_some_and(|d| !(d > 0.0)) {
        return bad("dist0", "must be positive");
    }
    if !(p.eps_rel > 0.0 && p.eps_rel < 1.0) {
        return bad("eps_rel", "must lie in (0, 1)");
    }
    if p.opts.degrees.is_empty() || p.opts.degrees.contains(&0) {
        return bad("degrees", "must be a non-empty list of positive degrees");
    }
    if p.queue_budget == 0 {
        return bad("queue_budget", "must be at least 1");
    }
    Ok(())
}

/// Computes up to `n` tubes from the model's initial set. Every failed
/// attempt halves `(theta, d)`; both reset after each success.
pub fn compute_prbt(model: &Model, n: usize, params: &Params) -> Result<PiecewiseTube, PipelineError> {
    check_params(n, params)?;
    let run = Run {
        model,
        params,
        fields: model.modes.iter().map(|m| VectorField::new(&m.dynamics)).collect(),
    };
    let floor = params.theta_floor() * (1.0 - 1e-12);
    let mut mode = model.init_mode;
    let mut x0 = model.init.clone();
    let mut segments: Vec<Segment> = Vec::new();
    let mut events = Vec::new();
    let mut stage = 0;
    while segments.len() < n {
        let (mut theta, mut d) = (params.theta0, params.d0_for(&model.modes[mode].invariant));
        let step = loop {
            match run.attempt(mode, &x0, theta, d) {
                Ok(s) => break Ok(s),
                Err(f) => {
                    log::info!("stage {stage}: theta {theta:.4}, d {d:.4}: {f}");
                    theta *= 0.5;
                    d *= 0.5;
                    if theta < floor {
                        break Err(f);
                    }
                }
            }
        };
        match step {
            Err(f) => {
                return Ok(PiecewiseTube {
                    segments,
                    events,
                    termination: f.reason(),
                    failure: Some(f.to_string()),
                })
            }
            Ok(Step::Tube(t)) => {
                log::info!("stage {stage}: tube in mode {} exits at {:?}", model.modes[mode].id, t.exit_region.bounds());
                x0 = t.exit_region.clone();
                segments.push(Segment::from_tube(&t, stage, None));
            }
            Ok(Step::Guard(ti, out)) => {
                let tr = &model.transitions[ti];
                log::info!(
                    "stage {stage}: {} -> {} through {:?}",
                    model.modes[tr.from].id,
                    model.modes[tr.to].id,
                    out.crossing.bounds()
                );
                segments.extend(out.tubes.iter().map(|t| Segment::from_tube(t, stage, Some(ti))));
                events.push(GuardEvent {
                    transition: ti,
                    stage,
                    crossing: out.crossing,
                    image: out.image.clone(),
                    sub_boxes: out.pops,
                });
                mode = tr.to;
                x0 = out.image;
            }
        }
        stage += 1;
    }
    Ok(PiecewiseTube { segments, events, termination: Termination::CountReached, failure: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn translation_model() -> Model {
        Model::from_json(
            r#"{
                "name": "translation",
                "state_vars": ["x1", "x2"],
                "modes": [{"id": "m", "dynamics": ["1", "0"],
                           "invariant": [[-10, 10], [-10, 10]]}],
                "init": {"mode": "m", "box": [[0, 0.1], [0, 0.1]]}
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn translation_chain() {
        let m = translation_model();
        let p = Params { d0: Some(1.0), ..Params::default() };
        let prbt = compute_prbt(&m, 3, &p).unwrap();
        assert_eq!(prbt.termination, Termination::CountReached);
        assert_eq!(prbt.segments.len(), 3);
        let exits: Vec<f64> = prbt.segments.iter().map(|s| s.exit.value).collect();
        let steps: Vec<f64> = exits.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps.iter().all(|s| (s - steps[0]).abs() < 1e-6 && *s > 0.9), "{exits:?}");
        for w in prbt.segments.windows(2) {
            assert_eq!(w[1].x0, w[0].exit_region);
            assert_eq!(w[1].stage, w[0].stage + 1);
        }
    }

    #[test]
    fn bad_params_rejected() {
        let m = translation_model();
        assert!(compute_prbt(&m, 0, &Params::default()).is_err());
        let p = Params { theta_min: Some(1.0), ..Params::default() };
        assert!(compute_prbt(&m, 1, &p).is_err());
    }

    #[test]
    fn floor_equal_to_start_stops_after_one_attempt() {
        // a saddle whose samples separate before any plane
        let m = Model::from_json(
            r#"{
                "name": "saddle",
                "state_vars": ["x", "y"],
                "modes": [{"id": "m", "dynamics": ["x", "-y"],
                           "invariant": [[-0.15, 0.15], [-10, 10]]}],
                "init": {"mode": "m", "box": [[-0.1, 0.1], [0.9, 1.0]]}
            }"#,
        )
        .unwrap();
        let p = Params { theta_min: Some(0.3), d0: Some(0.5), ..Params::default() };
        let prbt = compute_prbt(&m, 2, &p).unwrap();
        assert!(prbt.segments.is_empty());
        assert_eq!(prbt.termination, Termination::ThetaFloor);
    }
}
