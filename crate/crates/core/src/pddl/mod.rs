//! STRIPS-with-typing PDDL: representation, text round trip, state
//! semantics, plan validation and breadth-first search.

mod emit;
mod parse;
mod search;
mod state;
mod translate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use emit::{emit, emit_problem};
pub use parse::{parse, parse_problem};
pub use search::{forward_search, ground_actions};
pub use state::{apply_action, apply_ground, validate_plan, StepReport, ValidationReport, WorldState};
pub use translate::{participle, translate_library, DIRECTION_VAR, ENV_VAR, POSE_VAR, TARGET_VAR};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TypedParam {
    /// Variable or object name, without the leading `?`.
    pub name: String,
    pub ty: String,
}

impl TypedParam {
    pub fn new(name: impl Into<String>, ty: impl Into<String>) -> Self {
        Self { name: name.into(), ty: ty.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Predicate {
    pub name: String,
    pub params: Vec<TypedParam>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    Var(String),
    Const(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Const(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub positive: bool,
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Literal {
    pub fn pos(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Self { positive: true, predicate: predicate.into(), args }
    }

    pub fn neg(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Self { positive: false, predicate: predicate.into(), args }
    }

    fn same_atom(&self, other: &Literal) -> bool {
        self.predicate == other.predicate && self.args == other.args
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.positive {
            f.write_str("(not ")?;
        }
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")?;
        if !self.positive {
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PddlAction {
    pub name: String,
    pub parameters: Vec<TypedParam>,
    pub precondition: Vec<Literal>,
    pub effect: Vec<Literal>,
}

impl PddlAction {
    pub fn adds(&self) -> impl Iterator<Item = &Literal> {
        self.effect.iter().filter(|l| l.positive)
    }

    pub fn deletes(&self) -> impl Iterator<Item = &Literal> {
        self.effect.iter().filter(|l| !l.positive)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PddlDomain {
    pub name: String,
    pub types: Vec<TypeDecl>,
    pub predicates: Vec<Predicate>,
    pub actions: Vec<PddlAction>,
}

impl PddlDomain {
    pub const REQUIREMENTS: [&'static str; 2] = ["strips", "typing"];

    pub fn action(&self, name: &str) -> Option<&PddlAction> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn predicate(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }

    /// Is `ty` equal to or a descendant of `ancestor`?
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        let mut cur = Some(ty.to_string());
        let mut hops = 0;
        while let Some(t) = cur {
            if t == ancestor {
                return true;
            }
            hops += 1;
            if hops > self.types.len() + 1 {
                return false;
            }
            cur = self.types.iter().find(|d| d.name == t).and_then(|d| d.parent.clone());
        }
        false
    }
}

/// A ground atom: predicate plus constant arguments.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl Atom {
    pub fn new<S: Into<String>>(predicate: impl Into<String>, args: impl IntoIterator<Item = S>) -> Self {
        Self { predicate: predicate.into(), args: args.into_iter().map(Into::into).collect() }
    }

    pub fn nullary(predicate: impl Into<String>) -> Self {
        Self { predicate: predicate.into(), args: Vec::new() }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

/// An action name with constant arguments in parameter order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundAction {
    pub name: String,
    pub args: Vec<String>,
}

impl GroundAction {
    pub fn new<S: Into<String>>(name: impl Into<String>, args: impl IntoIterator<Item = S>) -> Self {
        Self { name: name.into(), args: args.into_iter().map(Into::into).collect() }
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.name)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PddlProblem {
    pub name: String,
    pub domain: String,
    pub objects: Vec<TypedParam>,
    pub init: Vec<Atom>,
    pub goal: Vec<Atom>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PddlError {
    #[error("parse error at {line}:{column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("translation error: {0}")]
    Translation(String),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("action `{action}` expects {expected} arguments, got {got}")]
    Arity { action: String, expected: usize, got: usize },
    #[error("unbound parameter ?{0}")]
    MissingBinding(String),
    #[error("precondition unsatisfied: {}", .0.join(" "))]
    PreconditionUnsatisfied(Vec<String>),
    #[error("no plan within depth {0}")]
    NoPlan(usize),
}

/// Bind action parameters positionally to constant arguments.
pub fn bind(action: &PddlAction, args: &[String]) -> Result<BTreeMap<String, String>, PddlError> {
    if action.parameters.len() != args.len() {
        return Err(PddlError::Arity { action: action.name.clone(), expected: action.parameters.len(), got: args.len() });
    }
    Ok(action.parameters.iter().zip(args).map(|(p, a)| (p.name.clone(), a.clone())).collect())
}

/// The domain listing used in the skill-reasoning prompt of the cable
/// mounting task, verbatim.
pub const ROBOT_SKILLS_DOMAIN: &str = include_str!("robot_skills.pddl");
