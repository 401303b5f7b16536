use std::fmt::Write;

use super::{Literal, PddlDomain, PddlProblem, TypedParam};

fn params(ps: &[TypedParam]) -> String {
    ps.iter().map(|p| format!("?{} - {}", p.name, p.ty)).collect::<Vec<_>>().join(" ")
}

fn conj(lits: &[Literal]) -> String {
    let mut s = String::from("(and");
    for l in lits {
        write!(s, " {l}").unwrap();
    }
    s.push(')');
    s
}

/// Canonical text: two-space indent, lowercase, one parameter list per line.
pub fn emit(d: &PddlDomain) -> String {
    let mut s = String::new();
    writeln!(s, "(define (domain {})", d.name).unwrap();
    writeln!(s, "  (:requirements :strips :typing)").unwrap();
    if !d.types.is_empty() {
        let types: Vec<String> = d
            .types
            .iter()
            .map(|t| match &t.parent {
                Some(p) => format!("{} - {}", t.name, p),
                None => t.name.clone(),
            })
            .collect();
        writeln!(s, "  (:types {})", types.join(" ")).unwrap();
    }
    writeln!(s).unwrap();
    writeln!(s, "  (:predicates").unwrap();
    for p in &d.predicates {
        if p.params.is_empty() {
            writeln!(s, "    ({})", p.name).unwrap();
        } else {
            writeln!(s, "    ({} {})", p.name, params(&p.params)).unwrap();
        }
    }
    writeln!(s, "  )").unwrap();
    for a in &d.actions {
        writeln!(s).unwrap();
        writeln!(s, "  (:action {}", a.name).unwrap();
        writeln!(s, "    :parameters ({})", params(&a.parameters)).unwrap();
        writeln!(s, "    :precondition {}", conj(&a.precondition)).unwrap();
        writeln!(s, "    :effect {}", conj(&a.effect)).unwrap();
        writeln!(s, "  )").unwrap();
    }
    s.push_str(")\n");
    s.to_lowercase()
}

pub fn emit_problem(p: &PddlProblem) -> String {
    let mut s = String::new();
    writeln!(s, "(define (problem {})", p.name).unwrap();
    writeln!(s, "  (:domain {})", p.domain).unwrap();
    let objects: Vec<String> = p.objects.iter().map(|o| format!("{} - {}", o.name, o.ty)).collect();
    writeln!(s, "  (:objects {})", objects.join(" ")).unwrap();
    let init: Vec<String> = p.init.iter().map(ToString::to_string).collect();
    writeln!(s, "  (:init {})", init.join(" ")).unwrap();
    let goal: Vec<String> = p.goal.iter().map(ToString::to_string).collect();
    writeln!(s, "  (:goal (and {}))", goal.join(" ")).unwrap();
    s.push_str(")\n");
    s.to_lowercase()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{parse, parse_problem, Atom, ROBOT_SKILLS_DOMAIN};

    #[test]
    fn reference_domain_round_trip_is_a_fixed_point() {
        let d = parse(ROBOT_SKILLS_DOMAIN).unwrap();
        let once = emit(&d);
        let d2 = parse(&once).unwrap();
        assert_eq!(d, d2);
        assert_eq!(emit(&d2), once);
    }

    #[test]
    fn emitted_layout() {
        let d = parse(ROBOT_SKILLS_DOMAIN).unwrap();
        let text = emit(&d);
        assert!(text.starts_with("(define (domain robot_skills)\n  (:requirements :strips :typing)\n  (:types pose direction object)\n"));
        assert!(text.contains("  (:action grasp\n    :parameters ()\n    :precondition (and (hand_open))\n    :effect (and (holding_cable_head) (not (hand_open)))\n  )\n"));
    }

    #[test]
    fn problem_round_trip() {
        let p = PddlProblem {
            name: "demo".into(),
            domain: "robot_skills".into(),
            objects: vec![TypedParam::new("clip1", "object"), TypedParam::new("down", "direction")],
            init: vec![Atom::nullary("hand_open")],
            goal: vec![Atom::new("cable_inserted", ["down", "clip1"])],
        };
        assert_eq!(parse_problem(&emit_problem(&p)).unwrap(), p);
    }
}
