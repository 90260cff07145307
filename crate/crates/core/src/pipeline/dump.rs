//! JSON dump of a tube chain. Floats are written in shortest round-trip
//! form, so reloading reproduces every box and coefficient exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::{BarrierCertificate, CertKind};
use crate::enclosure::ExitFacet;
use crate::modelio::{Hyperrect, Model};
use crate::poly::Polynomial;

use super::{GuardEvent, Params, PiecewiseTube, Segment, Termination};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsRecord {
    pub theta0: f64,
    /// `null` stands for the per-mode default.
    pub dist0: Option<f64>,
    pub theta_min: f64,
    pub eps_rel: f64,
    pub degrees: Vec<u32>,
    pub epsilon: [f64; 3],
    pub orders: Option<[u32; 3]>,
    pub queue_budget: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermRecord {
    pub exp: Vec<u32>,
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaRecord {
    pub init: Vec<f64>,
    pub lie: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertRecord {
    pub kind: CertKind,
    pub target: Hyperrect,
    pub degree: u32,
    pub orders: [u32; 3],
    pub terms: Vec<TermRecord>,
    pub lambdas: LambdaRecord,
    pub eps: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeRecord {
    pub stage: usize,
    pub mode: String,
    pub guard: Option<usize>,
    #[serde(rename = "E")]
    pub e: Hyperrect,
    pub exit: ExitFacet,
    #[serde(rename = "G")]
    pub g: Hyperrect,
    #[serde(rename = "X0")]
    pub x0: Hyperrect,
    #[serde(rename = "X0_prime")]
    pub x0_prime: Hyperrect,
    pub certs: Vec<CertRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub transition: usize,
    pub from: String,
    pub to: String,
    pub stage: usize,
    pub crossing: Hyperrect,
    pub image: Hyperrect,
    pub sub_boxes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeDump {
    pub model: String,
    pub params: ParamsRecord,
    pub uncertainty: Hyperrect,
    pub termination: String,
    pub failure: Option<String>,
    pub tubes: Vec<TubeRecord>,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DumpError {
    #[error("malformed dump: {0}")]
    Json(String),
    #[error("dump is for model `{dump}`, not `{model}`")]
    ModelMismatch { dump: String, model: String },
    #[error("tube {tube}: {msg}")]
    Invalid { tube: usize, msg: String },
}

fn cert_record(c: &BarrierCertificate) -> CertRecord {
    CertRecord {
        kind: c.kind,
        target: c.target.clone(),
        degree: c.degree,
        orders: c.orders,
        terms: c.b.terms().map(|(m, coef)| TermRecord { exp: m.0.clone(), coef }).collect(),
        lambdas: LambdaRecord {
            init: c.lambda_init.clone(),
            lie: c.lambda_lie.clone(),
            target: c.lambda_target.clone(),
        },
        eps: c.eps,
    }
}

impl TubeDump {
    pub fn new(model: &Model, params: &Params, prbt: &PiecewiseTube) -> TubeDump {
        let mode_id = |m: usize| model.modes[m].id.clone();
        TubeDump {
            model: model.name.clone(),
            params: ParamsRecord {
                theta0: params.theta0,
                dist0: params.d0,
                theta_min: params.theta_floor(),
                eps_rel: params.eps_rel,
                degrees: params.opts.degrees.clone(),
                epsilon: params.opts.eps,
                orders: params.opts.orders,
                queue_budget: params.queue_budget,
            },
            uncertainty: model.uncertainty.clone(),
            termination: prbt.termination.as_str().to_string(),
            failure: prbt.failure.clone(),
            tubes: prbt
                .segments
                .iter()
                .map(|s| TubeRecord {
                    stage: s.stage,
                    mode: mode_id(s.mode),
                    guard: s.guard,
                    e: s.e.clone(),
                    exit: s.exit,
                    g: s.g.clone(),
                    x0: s.x0.clone(),
                    x0_prime: s.exit_region.clone(),
                    certs: s.certs.iter().map(cert_record).collect(),
                })
                .collect(),
            events: prbt
                .events
                .iter()
                .map(|e| {
                    let t = &model.transitions[e.transition];
                    EventRecord {
                        transition: e.transition,
                        from: mode_id(t.from),
                        to: mode_id(t.to),
                        stage: e.stage,
                        crossing: e.crossing.clone(),
                        image: e.image.clone(),
                        sub_boxes: e.sub_boxes,
                    }
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("dump serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<TubeDump, DumpError> {
        serde_json::from_str(text).map_err(|e| DumpError::Json(e.to_string()))
    }

    /// Rebuilds the chain against `model`, which supplies mode indices,
    /// transitions and dimensions.
    pub fn to_prbt(&self, model: &Model) -> Result<PiecewiseTube, DumpError> {
        if self.model != model.name {
            return Err(DumpError::ModelMismatch { dump: self.model.clone(), model: model.name.clone() });
        }
        let n = model.nstate();
        let mut segments = Vec::with_capacity(self.tubes.len());
        for (k, t) in self.tubes.iter().enumerate() {
            let bad = |msg: String| DumpError::Invalid { tube: k, msg };
            let mode = model.mode_index(&t.mode).ok_or_else(|| bad(format!("unknown mode `{}`", t.mode)))?;
            for (name, b) in [("E", &t.e), ("G", &t.g), ("X0", &t.x0), ("X0_prime", &t.x0_prime)] {
                if b.dim() != n {
                    return Err(bad(format!("{name} has {} intervals, expected {n}", b.dim())));
                }
            }
            if t.exit.dim >= n {
                return Err(bad(format!("exit dimension {} out of range", t.exit.dim)));
            }
            if t.guard.is_some_and(|g| g >= model.transitions.len()) {
                return Err(bad("guard index out of range".into()));
            }
            let mut certs = Vec::with_capacity(t.certs.len());
            for c in &t.certs {
                let b = Polynomial::from_terms(n, c.terms.iter().map(|r| (r.exp.clone(), r.coef)))
                    .map_err(|e| bad(e.to_string()))?;
                certs.push(BarrierCertificate {
                    kind: c.kind,
                    b,
                    degree: c.degree,
                    orders: c.orders,
                    eps: c.eps,
                    lambda_init: c.lambdas.init.clone(),
                    lambda_lie: c.lambdas.lie.clone(),
                    lambda_target: c.lambdas.target.clone(),
                    init: t.x0.clone(),
                    domain: t.e.clone(),
                    uncertainty: self.uncertainty.clone(),
                    target: c.target.clone(),
                });
            }
            segments.push(Segment {
                stage: t.stage,
                mode,
                guard: t.guard,
                x0: t.x0.clone(),
                e: t.e.clone(),
                exit: t.exit,
                g: t.g.clone(),
                exit_region: t.x0_prime.clone(),
                certs,
            });
        }
        let events = self
            .events
            .iter()
            .map(|e| GuardEvent {
                transition: e.transition,
                stage: e.stage,
                crossing: e.crossing.clone(),
                image: e.image.clone(),
                sub_boxes: e.sub_boxes,
            })
            .collect();
        let termination = Termination::parse(&self.termination)
            .ok_or_else(|| DumpError::Json(format!("unknown termination `{}`", self.termination)))?;
        Ok(PiecewiseTube { segments, events, termination, failure: self.failure.clone() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{compute_prbt, tests::translation_model};

    #[test]
    fn dump_round_trip() {
        let m = translation_model();
        let p = Params { d0: Some(1.0), ..Params::default() };
        let prbt = compute_prbt(&m, 2, &p).unwrap();
        let text = TubeDump::new(&m, &p, &prbt).to_json();
        let back = TubeDump::from_json(&text).unwrap().to_prbt(&m).unwrap();
        assert_eq!(back, prbt);
        assert_eq!(TubeDump::new(&m, &p, &back).to_json(), text);
        for c in back.certificates() {
            assert!(c.residual(&m.modes[0].dynamics) <= 1e-6);
        }
    }

    #[test]
    fn wrong_model_rejected() {
        let m = translation_model();
        let p = Params { d0: Some(1.0), ..Params::default() };
        let prbt = compute_prbt(&m, 1, &p).unwrap();
        let mut d = TubeDump::new(&m, &p, &prbt);
        d.model = "other".into();
        assert!(matches!(d.to_prbt(&m), Err(DumpError::ModelMismatch { .. })));
    }
}
