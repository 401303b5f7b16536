use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{bind, Atom, GroundAction, Literal, PddlAction, PddlDomain, PddlError, Term};

/// A set of ground atoms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WorldState(BTreeSet<Atom>);

impl WorldState {
    pub fn new(atoms: impl IntoIterator<Item = Atom>) -> Self {
        Self(atoms.into_iter().collect())
    }

    pub fn contains(&self, atom: &Atom) -> bool {
        self.0.contains(atom)
    }

    pub fn atoms(&self) -> impl Iterator<Item = &Atom> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn satisfies(&self, goal: &[Atom]) -> bool {
        goal.iter().all(|g| self.0.contains(g))
    }

    pub fn insert(&mut self, atom: Atom) {
        self.0.insert(atom);
    }
}

impl FromIterator<Atom> for WorldState {
    fn from_iter<T: IntoIterator<Item = Atom>>(iter: T) -> Self {
        Self::new(iter)
    }
}

fn instantiate(lit: &Literal, bindings: &BTreeMap<String, String>) -> Result<Atom, PddlError> {
    let args = lit
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Ok(c.clone()),
            Term::Var(v) => bindings.get(v).cloned().ok_or_else(|| PddlError::MissingBinding(v.clone())),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Atom { predicate: lit.predicate.clone(), args })
}

/// STRIPS successor: delete effects, then add effects. `state` is not modified.
pub fn apply_action(state: &WorldState, action: &PddlAction, bindings: &BTreeMap<String, String>) -> Result<WorldState, PddlError> {
    if let Some(p) = action.parameters.iter().find(|p| !bindings.contains_key(&p.name)) {
        return Err(PddlError::MissingBinding(p.name.clone()));
    }
    let mut failing = Vec::new();
    for lit in &action.precondition {
        let atom = instantiate(lit, bindings)?;
        if state.contains(&atom) != lit.positive {
            failing.push(if lit.positive { atom.to_string() } else { format!("(not {atom})") });
        }
    }
    if !failing.is_empty() {
        return Err(PddlError::PreconditionUnsatisfied(failing));
    }
    let mut next = state.0.clone();
    for lit in action.deletes() {
        next.remove(&instantiate(lit, bindings)?);
    }
    for lit in action.adds() {
        next.insert(instantiate(lit, bindings)?);
    }
    Ok(WorldState(next))
}

pub fn apply_ground(domain: &PddlDomain, state: &WorldState, step: &GroundAction) -> Result<WorldState, PddlError> {
    let action = domain.action(&step.name).ok_or_else(|| PddlError::UnknownAction(step.name.clone()))?;
    apply_action(state, action, &bind(action, &step.args)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub action: GroundAction,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub steps: Vec<StepReport>,
    pub goal_satisfied: bool,
    pub final_state: WorldState,
    /// Goal atoms missing from the final state.
    pub unmet_goal: Vec<Atom>,
}

impl ValidationReport {
    pub fn all_steps_ok(&self) -> bool {
        self.steps.iter().all(|s| s.ok)
    }

    pub fn first_failure(&self) -> Option<usize> {
        self.steps.iter().position(|s| !s.ok)
    }
}

/// Simulate `plan` from `init`. Execution stops at the first failing step;
/// later steps are reported as not reached.
pub fn validate_plan(domain: &PddlDomain, init: &WorldState, plan: &[GroundAction], goal: &[Atom]) -> ValidationReport {
    let mut state = init.clone();
    let mut steps = Vec::with_capacity(plan.len());
    let mut failed = false;
    for step in plan {
        if failed {
            steps.push(StepReport { action: step.clone(), ok: false, error: Some("not reached".into()) });
            continue;
        }
        match apply_ground(domain, &state, step) {
            Ok(next) => {
                state = next;
                steps.push(StepReport { action: step.clone(), ok: true, error: None });
            }
            Err(e) => {
                failed = true;
                steps.push(StepReport { action: step.clone(), ok: false, error: Some(e.to_string()) });
            }
        }
    }
    let unmet_goal: Vec<Atom> = goal.iter().filter(|g| !state.contains(g)).cloned().collect();
    ValidationReport { steps, goal_satisfied: !failed && unmet_goal.is_empty(), final_state: state, unmet_goal }
}
