use std::collections::{HashMap, VecDeque};

use super::{apply_action, bind, Atom, GroundAction, PddlDomain, PddlError, TypedParam, WorldState};

/// All groundings of every action over a typed object universe, in
/// lexicographic (action name, arguments) order.
pub fn ground_actions(domain: &PddlDomain, objects: &[TypedParam]) -> Vec<GroundAction> {
    let mut out = Vec::new();
    for action in &domain.actions {
        let candidates: Vec<Vec<&str>> = action
            .parameters
            .iter()
            .map(|p| {
                let mut c: Vec<&str> = objects.iter().filter(|o| domain.is_subtype(&o.ty, &p.ty)).map(|o| o.name.as_str()).collect();
                c.sort_unstable();
                c.dedup();
                c
            })
            .collect();
        if candidates.iter().any(Vec::is_empty) {
            continue;
        }
        let mut idx = vec![0usize; candidates.len()];
        loop {
            out.push(GroundAction::new(action.name.clone(), idx.iter().zip(&candidates).map(|(i, c)| c[*i].to_string())));
            // odometer increment, last position fastest
            let mut k = idx.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < candidates[k].len() {
                    break;
                }
                idx[k] = 0;
            }
            if idx.iter().all(|&i| i == 0) {
                break;
            }
        }
    }
    out.sort();
    out
}

/// Breadth-first search for a shortest plan reaching `goal`.
///
/// Ties between equally short plans go to the lexicographically smallest
/// sequence of ground actions.
pub fn forward_search(
    domain: &PddlDomain,
    objects: &[TypedParam],
    init: &WorldState,
    goal: &[Atom],
    max_depth: usize,
) -> Result<Vec<GroundAction>, PddlError> {
    if init.satisfies(goal) {
        return Ok(Vec::new());
    }
    let ground = ground_actions(domain, objects);
    let bound: Vec<_> = ground
        .iter()
        .map(|g| {
            let a = domain.action(&g.name).expect("grounded from domain");
            (a, bind(a, &g.args).expect("arity matches"))
        })
        .collect();

    // state -> (parent state index, action index)
    let mut states: Vec<WorldState> = vec![init.clone()];
    let mut parent: Vec<Option<(usize, usize)>> = vec![None];
    let mut depth: Vec<usize> = vec![0];
    let mut seen: HashMap<WorldState, usize> = HashMap::from([(init.clone(), 0)]);
    let mut queue = VecDeque::from([0usize]);

    while let Some(i) = queue.pop_front() {
        if depth[i] >= max_depth {
            continue;
        }
        for (ai, (action, bindings)) in bound.iter().enumerate() {
            let Ok(next) = apply_action(&states[i], action, bindings) else {
                continue;
            };
            if seen.contains_key(&next) {
                continue;
            }
            let j = states.len();
            seen.insert(next.clone(), j);
            let reached = next.satisfies(goal);
            states.push(next);
            parent.push(Some((i, ai)));
            depth.push(depth[i] + 1);
            if reached {
                let mut plan = Vec::new();
                let mut cur = j;
                while let Some((p, a)) = parent[cur] {
                    plan.push(ground[a].clone());
                    cur = p;
                }
                plan.reverse();
                return Ok(plan);
            }
            queue.push_back(j);
        }
    }
    Err(PddlError::NoPlan(max_depth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{parse, validate_plan, ROBOT_SKILLS_DOMAIN};

    fn universe() -> Vec<TypedParam> {
        vec![TypedParam::new("clip1", "object"), TypedParam::new("down", "direction"), TypedParam::new("p1", "pose")]
    }

    #[test]
    fn reference_insert_plan_has_length_three() {
        let d = parse(ROBOT_SKILLS_DOMAIN).unwrap();
        let init = WorldState::new([Atom::nullary("hand_open")]);
        let goal = [Atom::new("cable_inserted", ["down", "clip1"])];
        let plan = forward_search(&d, &universe(), &init, &goal, 6).unwrap();
        assert_eq!(plan.len(), 3);
        assert_eq!(plan.last().unwrap().name, "insert");
        assert!(validate_plan(&d, &init, &plan, &goal).goal_satisfied);
    }

    #[test]
    fn goal_in_init_gives_empty_plan() {
        let d = parse(ROBOT_SKILLS_DOMAIN).unwrap();
        let init = WorldState::new([Atom::nullary("hand_open")]);
        assert!(forward_search(&d, &universe(), &init, &[Atom::nullary("hand_open")], 3).unwrap().is_empty());
    }

    #[test]
    fn unreachable_goal_is_no_plan() {
        let d = parse(ROBOT_SKILLS_DOMAIN).unwrap();
        let init = WorldState::new([Atom::nullary("hand_open")]);
        let e = forward_search(&d, &universe(), &init, &[Atom::nullary("never")], 4).unwrap_err();
        assert_eq!(e, PddlError::NoPlan(4));
    }

    #[test]
    fn groundings_are_sorted_and_typed() {
        let d = parse(ROBOT_SKILLS_DOMAIN).unwrap();
        let g = ground_actions(&d, &universe());
        let mut sorted = g.clone();
        sorted.sort();
        assert_eq!(g, sorted);
        assert!(g.contains(&GroundAction::new("insert", ["down", "clip1", "p1"])));
        assert!(!g.iter().any(|a| a.name == "move" && a.args != ["p1"]));
    }
}
