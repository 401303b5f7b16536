use crate::skill_model::{ConditionExpr, ParamValue, Skill, SkillLibrary, ENV_SLOT, TARGET_SLOT};

use super::{Literal, PddlAction, PddlDomain, PddlError, Predicate, Term, TypeDecl, TypedParam};

pub const TARGET_VAR: &str = "o";
pub const DIRECTION_VAR: &str = "d";
pub const ENV_VAR: &str = "e";
pub const POSE_VAR: &str = "p";

/// Past participle used to name symbolic effect predicates
/// (`insert` -> `inserted`, `tighten` -> `tightened`).
pub fn participle(action: &str) -> String {
    let verb = action.split('_').next().unwrap_or(action);
    if verb.ends_with('e') {
        format!("{verb}d")
    } else {
        format!("{verb}ed")
    }
}

fn var(name: &str) -> Term {
    Term::Var(name.into())
}

fn direction_param(skill: &Skill) -> Option<&str> {
    skill.params.iter().find(|(_, v)| matches!(v, ParamValue::Direction(_))).map(|(k, _)| k.as_str())
}

fn pose_param(skill: &Skill) -> Option<&str> {
    skill.params.iter().find(|(_, v)| matches!(v, ParamValue::Pose(_))).map(|(k, _)| k.as_str())
}

fn parameters(skill: &Skill) -> Vec<TypedParam> {
    let mut ps = vec![TypedParam::new(TARGET_VAR, "object")];
    if direction_param(skill).is_some() {
        ps.push(TypedParam::new(DIRECTION_VAR, "direction"));
    }
    if skill.env_slot.is_some() {
        ps.push(TypedParam::new(ENV_VAR, "env_object"));
    }
    if pose_param(skill).is_some() {
        ps.push(TypedParam::new(POSE_VAR, "pose"));
    }
    ps
}

fn pose_literal(skill: &Skill, pose: &str) -> Result<Literal, PddlError> {
    match pose {
        ENV_SLOT if skill.env_slot.is_some() => Ok(Literal::pos("reached", vec![var(TARGET_VAR), var(ENV_VAR)])),
        ENV_SLOT => Err(PddlError::Translation(format!("{}: pose refers to a missing env slot", skill.name))),
        TARGET_SLOT => Ok(Literal::pos("reached", vec![var(TARGET_VAR)])),
        p if skill.params.get(p).is_some_and(|v| matches!(v, ParamValue::Pose(_))) => {
            Ok(Literal::pos("at", vec![var(TARGET_VAR), var(POSE_VAR)]))
        }
        p => Err(PddlError::Translation(format!("{}: unknown pose reference `{p}`", skill.name))),
    }
}

fn precondition(skill: &Skill, c: &ConditionExpr, out: &mut Vec<Literal>) -> Result<(), PddlError> {
    match c {
        ConditionExpr::GripperHolding { .. } => out.push(Literal::pos("holding", vec![var(TARGET_VAR)])),
        ConditionExpr::Not { inner } if matches!(inner.as_ref(), ConditionExpr::GripperHolding { .. }) => {
            out.push(Literal::pos("hand_open", vec![]))
        }
        ConditionExpr::PoseReached { pose, .. } => out.push(pose_literal(skill, pose)?),
        ConditionExpr::And { terms } => {
            for t in terms {
                precondition(skill, t, out)?;
            }
        }
        other => return Err(PddlError::Translation(format!("{}: precondition `{other}` has no symbolic form", skill.name))),
    }
    Ok(())
}

fn effect(skill: &Skill, c: &ConditionExpr, out: &mut Vec<Literal>) -> Result<(), PddlError> {
    match c {
        ConditionExpr::GripperHolding { .. } => {
            out.push(Literal::pos("holding", vec![var(TARGET_VAR)]));
            out.push(Literal::neg("hand_open", vec![]));
        }
        ConditionExpr::Not { inner } if matches!(inner.as_ref(), ConditionExpr::GripperHolding { .. }) => {
            out.push(Literal::pos("hand_open", vec![]));
            out.push(Literal::neg("holding", vec![var(TARGET_VAR)]));
        }
        ConditionExpr::PoseReached { pose, .. } => out.push(pose_literal(skill, pose)?),
        ConditionExpr::ResistanceForceBelow { .. }
        | ConditionExpr::ResistanceForceAbove { .. }
        | ConditionExpr::ResistanceTorqueAbove { .. }
        | ConditionExpr::ResistanceTorqueBelow { .. } => {
            let mut args = vec![var(TARGET_VAR)];
            if skill.env_slot.is_some() {
                args.push(var(ENV_VAR));
            }
            out.push(Literal::pos(participle(&skill.action), args));
        }
        ConditionExpr::And { terms } => {
            for t in terms {
                effect(skill, t, out)?;
            }
        }
        ConditionExpr::Not { inner } => {
            return Err(PddlError::Translation(format!("{}: negated success condition `not {inner}` has no symbolic form", skill.name)))
        }
    }
    Ok(())
}

fn predicate_types(lit: &Literal, params: &[TypedParam]) -> Vec<TypedParam> {
    lit.args
        .iter()
        .map(|t| match t {
            Term::Var(v) => params.iter().find(|p| &p.name == v).cloned().expect("variables come from parameters"),
            Term::Const(c) => TypedParam::new(c.clone(), "object"),
        })
        .collect()
}

/// Translate a skill library (flattened through its parents) into a PDDL
/// domain with one action per skill.
pub fn translate_library(lib: &SkillLibrary) -> Result<PddlDomain, PddlError> {
    let flat = lib.flatten();
    let mut actions = Vec::new();
    let mut predicates: Vec<Predicate> = Vec::new();
    for skill in &flat.skills {
        let params = parameters(skill);
        let mut pre = Vec::new();
        precondition(skill, &skill.pre, &mut pre)?;
        let mut eff = Vec::new();
        effect(skill, &skill.success, &mut eff)?;
        for lit in pre.iter().chain(eff.iter()) {
            let typed = predicate_types(lit, &params);
            match predicates.iter().find(|p| p.name == lit.predicate) {
                Some(p) if p.params.iter().map(|x| &x.ty).ne(typed.iter().map(|x| &x.ty)) => {
                    return Err(PddlError::Translation(format!(
                        "{}: predicate `{}` used with inconsistent arguments",
                        skill.name, lit.predicate
                    )))
                }
                Some(_) => {}
                None => predicates.push(Predicate { name: lit.predicate.clone(), params: typed }),
            }
        }
        for a in eff.iter().filter(|l| l.positive) {
            if eff.iter().any(|b| !b.positive && b.predicate == a.predicate && b.args == a.args) {
                return Err(PddlError::Translation(format!("{}: effect adds and deletes {a}", skill.name)));
            }
        }
        actions.push(PddlAction { name: skill.name.clone(), parameters: params, precondition: pre, effect: eff });
    }
    let mut types = Vec::new();
    for ty in ["object", "env_object", "direction", "pose"] {
        if actions.iter().any(|a| a.parameters.iter().any(|p| p.ty == ty)) {
            types.push(TypeDecl { name: ty.into(), parent: None });
        }
    }
    Ok(PddlDomain { name: format!("{}_skills", flat.object_class), types, predicates, actions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{emit, parse};
    use crate::skill_model::{cable_library, cap_library, general_library};

    #[test]
    fn participles() {
        assert_eq!(participle("insert"), "inserted");
        assert_eq!(participle("tighten"), "tightened");
        assert_eq!(participle("stretch"), "stretched");
        assert_eq!(participle("move_object"), "moved");
    }

    #[test]
    fn cable_insert_action() {
        let d = translate_library(&cable_library()).unwrap();
        let insert = d.action("insert").unwrap();
        let params: Vec<_> = insert.parameters.iter().map(|p| (p.name.as_str(), p.ty.as_str())).collect();
        assert_eq!(params, [("o", "object"), ("d", "direction"), ("e", "env_object")]);
        assert!(insert.precondition.contains(&Literal::pos("holding", vec![var("o")])));
        assert!(insert.effect.contains(&Literal::pos("inserted", vec![var("o"), var("e")])));
    }

    #[test]
    fn cable_grasp_action() {
        let d = translate_library(&cable_library()).unwrap();
        let grasp = d.action("grasp").unwrap();
        assert_eq!(grasp.effect, vec![Literal::pos("holding", vec![var("o")]), Literal::neg("hand_open", vec![])]);
    }

    #[test]
    fn empty_child_yields_general_actions() {
        let lib = SkillLibrary::new("empty", Some(general_library()), vec![]);
        let d = translate_library(&lib).unwrap();
        let general = translate_library(&general_library()).unwrap();
        assert_eq!(d.actions, general.actions);
    }

    #[test]
    fn translation_is_deterministic_and_round_trips() {
        for lib in [cable_library(), cap_library()] {
            let a = emit(&translate_library(&lib).unwrap());
            let b = emit(&translate_library(&lib).unwrap());
            assert_eq!(a, b);
            let d = translate_library(&lib).unwrap();
            assert_eq!(parse(&a).unwrap(), d);
        }
    }

    #[test]
    fn resistance_precondition_is_rejected() {
        let mut lib = general_library();
        lib.skills[0].pre = ConditionExpr::ResistanceForceBelow { threshold: 1.0 };
        assert!(matches!(translate_library(&lib), Err(PddlError::Translation(_))));
    }
}
