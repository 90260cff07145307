//! Boxes, hybrid models and the JSON model format.

mod expr;

pub use expr::{parse_expression, ParseError};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{LinearPolynomial, Polynomial};

/// Axis-aligned box `[lo_1,hi_1] x ... x [lo_n,hi_n]`. Zero-width sides are
/// allowed; a 0-dimensional box is the (single-point) box of an empty space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Hyperrect {
    bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("dimension {dim}: lower bound {lo} exceeds upper bound {hi}")]
    Inverted { dim: usize, lo: f64, hi: f64 },
    #[error("dimension {dim}: non-finite bound")]
    NonFinite { dim: usize },
}

impl Hyperrect {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, BoxError> {
        for (dim, &(lo, hi)) in bounds.iter().enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(BoxError::NonFinite { dim });
            }
            if lo > hi {
                return Err(BoxError::Inverted { dim, lo, hi });
            }
        }
        Ok(Hyperrect { bounds })
    }

    pub fn point(x: &[f64]) -> Self {
        Hyperrect { bounds: x.iter().map(|&v| (v, v)).collect() }
    }

    /// Smallest box containing all `points`; `None` if there are none.
    pub fn bounding(points: &[Vec<f64>]) -> Option<Self> {
        let first = points.first()?;
        let mut b: Vec<(f64, f64)> = first.iter().map(|&v| (v, v)).collect();
        for p in &points[1..] {
            for (bd, &v) in b.iter_mut().zip(p) {
                bd.0 = bd.0.min(v);
                bd.1 = bd.1.max(v);
            }
        }
        Some(Hyperrect { bounds: b })
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn lo(&self, i: usize) -> f64 {
        self.bounds[i].0
    }

    pub fn hi(&self, i: usize) -> f64 {
        self.bounds[i].1
    }

    pub fn width(&self, i: usize) -> f64 {
        self.bounds[i].1 - self.bounds[i].0
    }

    pub fn widths(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.width(i)).collect()
    }

    pub fn center(&self) -> Vec<f64> {
        self.bounds.iter().map(|&(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn max_width(&self) -> f64 {
        self.widths().into_iter().fold(0.0, f64::max)
    }

    /// Euclidean length of the diagonal.
    pub fn diameter(&self) -> f64 {
        self.widths().iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Replaces the bounds of dimension `i` (which must satisfy lo <= hi).
    pub fn with_bounds(&self, i: usize, lo: f64, hi: f64) -> Hyperrect {
        assert!(lo <= hi, "inverted bounds {lo} > {hi}");
        let mut b = self.clone();
        b.bounds[i] = (lo, hi);
        b
    }

    pub fn contains_point(&self, x: &[f64], tol: f64) -> bool {
        self.bounds.iter().zip(x).all(|(&(l, h), &v)| v >= l - tol && v <= h + tol)
    }

    pub fn contains_box(&self, other: &Hyperrect, tol: f64) -> bool {
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|(&(l, h), &(ol, oh))| ol >= l - tol && oh <= h + tol)
    }

    pub fn intersect(&self, other: &Hyperrect) -> Option<Hyperrect> {
        let mut b = Vec::with_capacity(self.dim());
        for (&(l, h), &(ol, oh)) in self.bounds.iter().zip(&other.bounds) {
            let lo = l.max(ol);
            let hi = h.min(oh);
            if lo > hi {
                return None;
            }
            b.push((lo, hi));
        }
        Some(Hyperrect { bounds: b })
    }

    pub fn is_disjoint(&self, other: &Hyperrect) -> bool {
        self.intersect(other).is_none()
    }

    pub fn hull(&self, other: &Hyperrect) -> Hyperrect {
        Hyperrect {
            bounds: self
                .bounds
                .iter()
                .zip(&other.bounds)
                .map(|(&(l, h), &(ol, oh))| (l.min(ol), h.max(oh)))
                .collect(),
        }
    }

    /// All `2^n` corners, deduplicated for zero-width dimensions. Dimension 0
    /// varies fastest.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::with_capacity(self.dim())];
        for &(l, h) in &self.bounds {
            let choices: &[f64] = if l == h { &[l][..] } else { &[l, h][..] };
            let mut next = Vec::with_capacity(out.len() * choices.len());
            for &c in choices {
                for p in &out {
                    let mut q = p.clone();
                    q.push(c);
                    next.push(q);
                }
            }
            out = next;
        }
        out
    }

    /// Regular grid with `k` points per non-degenerate dimension (vertices
    /// included when `k >= 2`).
    pub fn grid(&self, k: usize) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for &(l, h) in &self.bounds {
            let vals: Vec<f64> = if l == h || k < 2 {
                vec![if k < 2 { 0.5 * (l + h) } else { l }]
            } else {
                (0..k).map(|j| l + (h - l) * j as f64 / (k - 1) as f64).collect()
            };
            let mut next = Vec::with_capacity(out.len() * vals.len());
            for p in &out {
                for &v in &vals {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            out = next;
        }
        out
    }

    /// Cartesian product `self x other`.
    pub fn product(&self, other: &Hyperrect) -> Hyperrect {
        let mut b = self.bounds.clone();
        b.extend_from_slice(&other.bounds);
        Hyperrect { bounds: b }
    }

    /// The 2n halfspaces `x_1 - lo_1, hi_1 - x_1, x_2 - lo_2, ...`.
    pub fn to_halfspaces(&self) -> Vec<LinearPolynomial> {
        box_to_halfspaces(self)
    }
}

/// The 2n linear polynomials `x_1 - lo_1, hi_1 - x_1, x_2 - lo_2, ...`, each
/// nonnegative exactly on the box.
pub fn box_to_halfspaces(b: &Hyperrect) -> Vec<LinearPolynomial> {
    let n = b.dim();
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let mut g = vec![0.0; n];
        g[i] = 1.0;
        out.push(LinearPolynomial::new(-b.lo(i), g.clone()));
        g[i] = -1.0;
        out.push(LinearPolynomial::new(b.hi(i), g));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GuardOp {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
}

/// Axis-aligned guard `x_var <= bound` or `x_var >= bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct Guard {
    pub var: usize,
    pub op: GuardOp,
    pub bound: f64,
}

impl Guard {
    pub fn holds(&self, x: &[f64]) -> bool {
        match self.op {
            GuardOp::Le => x[self.var] <= self.bound,
            GuardOp::Ge => x[self.var] >= self.bound,
        }
    }

    /// The closed guard halfspace restricted to `b`, if nonempty.
    pub fn clip(&self, b: &Hyperrect) -> Option<Hyperrect> {
        let (lo, hi) = b.bounds()[self.var];
        match self.op {
            GuardOp::Le if lo <= self.bound => Some(b.with_bounds(self.var, lo, hi.min(self.bound))),
            GuardOp::Ge if hi >= self.bound => Some(b.with_bounds(self.var, lo.max(self.bound), hi)),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mode {
    pub id: String,
    /// One polynomial per state variable, over `(states, uncertainties)`.
    pub dynamics: Vec<Polynomial>,
    pub invariant: Hyperrect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub from: usize,
    pub to: usize,
    pub guard: Guard,
    pub reset: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

/// A hybrid automaton with polynomial dynamics and box invariants. A
/// continuous system is a single mode without transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub name: String,
    pub state_vars: Vec<String>,
    pub uncertain_vars: Vec<String>,
    pub uncertainty: Hyperrect,
    pub modes: Vec<Mode>,
    pub transitions: Vec<Transition>,
    pub init_mode: usize,
    pub init: Hyperrect,
    pub unsafe_sets: Vec<(usize, Hyperrect)>,
}

impl Model {
    pub fn nstate(&self) -> usize {
        self.state_vars.len()
    }

    pub fn nuncertain(&self) -> usize {
        self.uncertain_vars.len()
    }

    pub fn is_continuous(&self) -> bool {
        self.modes.len() == 1 && self.transitions.is_empty()
    }

    pub fn all_vars(&self) -> Vec<String> {
        self.state_vars.iter().chain(&self.uncertain_vars).cloned().collect()
    }

    pub fn mode_index(&self, id: &str) -> Option<usize> {
        self.modes.iter().position(|m| m.id == id)
    }

    /// Loads and validates a model file.
    pub fn load(path: &Path) -> Result<Model, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Io { path: path.display().to_string(), msg: e.to_string() })?;
        Model::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Model, ModelError> {
        let raw: RawModel = serde_json::from_str(text).map_err(|e| ModelError::Schema {
            field: format!("line {} column {}", e.line(), e.column()),
            msg: e.to_string(),
        })?;
        raw.validate()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("cannot read {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("schema error at {field}: {msg}")]
    Schema { field: String, msg: String },
    #[error("{field}: {source}")]
    Expression { field: String, source: ParseError },
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ModelError {
    ModelError::Invalid { field: field.into(), msg: msg.into() }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    state_vars: Vec<String>,
    #[serde(default)]
    uncertain_vars: Vec<String>,
    #[serde(default)]
    uncertainty: Vec<(f64, f64)>,
    modes: Vec<RawMode>,
    #[serde(default)]
    transitions: Vec<RawTransition>,
    init: RawInit,
    #[serde(default, rename = "unsafe")]
    unsafe_sets: Vec<RawInit>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode {
    id: String,
    dynamics: Vec<String>,
    invariant: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGuard {
    var: String,
    op: GuardOp,
    bound: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransition {
    from: String,
    to: String,
    guard: RawGuard,
    reset: Vec<Vec<f64>>,
    #[serde(default)]
    offset: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    mode: String,
    #[serde(rename = "box")]
    bounds: Vec<(f64, f64)>,
}

fn make_box(bounds: &[(f64, f64)], n: usize, field: &str) -> Result<Hyperrect, ModelError> {
    if bounds.len() != n {
        return Err(invalid(field, format!("expected {n} intervals, got {}", bounds.len())));
    }
    Hyperrect::new(bounds.to_vec()).map_err(|e| invalid(field, e.to_string()))
}

fn check_names(names: &[String], field: &str) -> Result<(), ModelError> {
    for (i, n) in names.iter().enumerate() {
        let ok = n.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !ok {
            return Err(invalid(format!("{field}[{i}]"), format!("invalid variable name `{n}`")));
        }
        if names[..i].contains(n) {
            return Err(invalid(format!("{field}[{i}]"), format!("duplicate variable `{n}`")));
        }
    }
    Ok(())
}

impl RawModel {
    fn validate(self) -> Result<Model, ModelError> {
        let n = self.state_vars.len();
        let l = self.uncertain_vars.len();
        if n == 0 {
            return Err(invalid("state_vars", "at least one state variable is required"));
        }
        check_names(&self.state_vars, "state_vars")?;
        check_names(&self.uncertain_vars, "uncertain_vars")?;
        let all: Vec<String> = self.state_vars.iter().chain(&self.uncertain_vars).cloned().collect();
        if let Some(i) = self.uncertain_vars.iter().position(|u| self.state_vars.contains(u)) {
            return Err(invalid(format!("uncertain_vars[{i}]"), "name clashes with a state variable"));
        }
        let uncertainty = make_box(&self.uncertainty, l, "uncertainty")?;
        if self.modes.is_empty() {
            return Err(invalid("modes", "at least one mode is required"));
        }
        let mut modes = Vec::with_capacity(self.modes.len());
        for (mi, m) in self.modes.iter().enumerate() {
            if self.modes[..mi].iter().any(|o| o.id == m.id) {
                return Err(invalid(format!("modes[{mi}].id"), format!("duplicate mode `{}`", m.id)));
            }
            if m.dynamics.len() != n {
                return Err(invalid(
                    format!("modes[{mi}].dynamics"),
                    format!("expected {n} expressions, got {}", m.dynamics.len()),
                ));
            }
            let mut dynamics = Vec::with_capacity(n);
            for (k, text) in m.dynamics.iter().enumerate() {
                let p = parse_expression(text, &all).map_err(|source| ModelError::Expression {
                    field: format!("modes[{mi}].dynamics[{k}]"),
                    source,
                })?;
                dynamics.push(p);
            }
            let invariant = make_box(&m.invariant, n, &format!("modes[{mi}].invariant"))?;
            modes.push(Mode { id: m.id.clone(), dynamics, invariant });
        }
        let mode_of = |id: &str, field: String| -> Result<usize, ModelError> {
            modes
                .iter()
                .position(|m| m.id == id)
                .ok_or_else(|| invalid(field, format!("unknown mode `{id}`")))
        };
        let mut transitions = Vec::with_capacity(self.transitions.len());
        for (ti, t) in self.transitions.iter().enumerate() {
            let from = mode_of(&t.from, format!("transitions[{ti}].from"))?;
            let to = mode_of(&t.to, format!("transitions[{ti}].to"))?;
            let var = self.state_vars.iter().position(|v| *v == t.guard.var).ok_or_else(|| {
                invalid(
                    format!("transitions[{ti}].guard.var"),
                    format!("`{}` is not a state variable", t.guard.var),
                )
            })?;
            if !t.guard.bound.is_finite() {
                return Err(invalid(format!("transitions[{ti}].guard.bound"), "must be finite"));
            }
            if t.reset.len() != n || t.reset.iter().any(|r| r.len() != n) {
                return Err(invalid(format!("transitions[{ti}].reset"), format!("must be {n}x{n}")));
            }
            let offset = t.offset.clone().unwrap_or_else(|| vec![0.0; n]);
            if offset.len() != n {
                return Err(invalid(format!("transitions[{ti}].offset"), format!("must have {n} entries")));
            }
            transitions.push(Transition {
                from,
                to,
                guard: Guard { var, op: t.guard.op, bound: t.guard.bound },
                reset: t.reset.clone(),
                offset,
            });
        }
        let init_mode = mode_of(&self.init.mode, "init.mode".into())?;
        let init = make_box(&self.init.bounds, n, "init.box")?;
        if !modes[init_mode].invariant.contains_box(&init, 0.0) {
            return Err(invalid("init.box", "initial box is not inside the mode invariant"));
        }
        let mut unsafe_sets = Vec::with_capacity(self.unsafe_sets.len());
        for (ui, u) in self.unsafe_sets.iter().enumerate() {
            let m = mode_of(&u.mode, format!("unsafe[{ui}].mode"))?;
            unsafe_sets.push((m, make_box(&u.bounds, n, &format!("unsafe[{ui}].box"))?));
        }
        Ok(Model {
            name: self.name,
            state_vars: self.state_vars,
            uncertain_vars: self.uncertain_vars,
            uncertainty,
            modes,
            transitions,
            init_mode,
            init,
            unsafe_sets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[(f64, f64)]) -> Hyperrect {
        Hyperrect::new(v.to_vec()).unwrap()
    }

    #[test]
    fn halfspaces_examples() {
        let h = box_to_halfspaces(&b(&[(0.0, 1.0)]));
        assert_eq!(h, vec![LinearPolynomial::new(0.0, vec![1.0]), LinearPolynomial::new(1.0, vec![-1.0])]);
        let h = box_to_halfspaces(&b(&[(-100.0, -90.0), (-45.0, -40.0)]));
        assert_eq!(h[0], LinearPolynomial::new(100.0, vec![1.0, 0.0]));
        assert_eq!(h[1], LinearPolynomial::new(-90.0, vec![-1.0, 0.0]));
        assert_eq!(h[2], LinearPolynomial::new(45.0, vec![0.0, 1.0]));
        assert_eq!(h[3], LinearPolynomial::new(-40.0, vec![0.0, -1.0]));
        let h = box_to_halfspaces(&b(&[(2.0, 2.0)]));
        assert_eq!(h[0], LinearPolynomial::new(-2.0, vec![1.0]));
        assert_eq!(h[1], LinearPolynomial::new(2.0, vec![-1.0]));
    }

    #[test]
    fn box_operations() {
        assert!(Hyperrect::new(vec![(1.0, 0.0)]).is_err());
        let a = b(&[(0.0, 2.0), (0.0, 1.0)]);
        let c = b(&[(1.0, 3.0), (0.5, 0.5)]);
        assert_eq!(a.intersect(&c), Some(b(&[(1.0, 2.0), (0.5, 0.5)])));
        assert_eq!(a.hull(&c), b(&[(0.0, 3.0), (0.0, 1.0)]));
        assert!(a.is_disjoint(&b(&[(2.5, 3.0), (0.0, 1.0)])));
        assert_eq!(a.vertices().len(), 4);
        assert_eq!(a.vertices()[1], vec![2.0, 0.0]);
        assert_eq!(c.vertices().len(), 2);
        assert_eq!(a.grid(3).len(), 9);
        assert!((a.diameter() - 5f64.sqrt()).abs() < 1e-15);
    }

    const MINI: &str = r#"{
        "name": "mini",
        "state_vars": ["x", "y"],
        "uncertain_vars": ["d"],
        "uncertainty": [[-0.1, 0.1]],
        "modes": [{"id": "a", "dynamics": ["y + d", "-x"], "invariant": [[-2, 2], [-2, 2]]}],
        "init": {"mode": "a", "box": [[0.9, 1.1], [0, 0.1]]}
    }"#;

    #[test]
    fn load_minimal_model() {
        let m = Model::from_json(MINI).unwrap();
        assert!(m.is_continuous());
        assert_eq!(m.modes[0].dynamics[0].nvars(), 3);
        assert_eq!(m.init, b(&[(0.9, 1.1), (0.0, 0.1)]));
    }

    #[test]
    fn load_rejects_bad_models() {
        let outside = MINI.replace("[[0.9, 1.1], [0, 0.1]]", "[[0.9, 3.1], [0, 0.1]]");
        let e = Model::from_json(&outside).unwrap_err();
        assert!(matches!(e, ModelError::Invalid { ref field, .. } if field == "init.box"), "{e}");
        let unknown = MINI.replace("y + d", "y + q");
        let e = Model::from_json(&unknown).unwrap_err();
        assert!(matches!(e, ModelError::Expression { ref field, .. } if field == "modes[0].dynamics[0]"));
        let short = MINI.replace(r#"["y + d", "-x"]"#, r#"["y"]"#);
        assert!(Model::from_json(&short).is_err());
        let extra = MINI.replace(r#""name": "mini","#, r#""name": "mini", "horizon": 3,"#);
        assert!(matches!(Model::from_json(&extra), Err(ModelError::Schema { .. })));
    }
}
