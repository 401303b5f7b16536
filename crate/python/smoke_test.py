"""Smoke test for the tacplan Python extension.

Build and install first:
    cd crates/py && maturin build --release -o dist && pip install dist/*.whl
"""

import json
import math
import tempfile

import tacplan


def check_domain():
    d = tacplan.Domain.parse(tacplan.ROBOT_SKILLS_DOMAIN)
    assert len(d.actions) == 6, d.actions
    assert len(d.predicates) == 5, d.predicates
    again = tacplan.Domain.parse(d.emit())
    assert again.actions == d.actions


def check_library():
    lib = tacplan.SkillLibrary.builtin("cable")
    assert "insert" in lib.skills()
    insert = lib.resolve("insert")
    assert insert["status_signature"] == "torque"
    assert lib.find_by_signature("linear_force", True) == ["stretch"] or "stretch" in lib.find_by_signature("linear_force", True)
    assert "(define (domain" in lib.to_pddl()


def check_tactile():
    n = 11
    coords = [(c / (n - 1) * 2 - 1, r / (n - 1) * 2 - 1) for r in range(n) for c in range(n)]
    assert tacplan.classify_field(n, n, [[x, y] for x, y in coords]) == "grasped"
    assert tacplan.classify_field(n, n, [[-y, x] for x, y in coords]) == "torque"
    assert tacplan.classify_field(n, n, [[1.0, 0.0]] * (n * n)) == "linear_force"
    assert tacplan.classify_field(n, n, [[0.0, 0.0]] * (n * n)) == "idle"


def check_transcript():
    steps = tacplan.parse_transcript()
    assert [s.strip("()").split()[0] for s in steps] == ["move_object", "grasp", "stretch", "insert", "open_hand"], steps


def check_grounding():
    samples = [(k / 100, 9.0 if k < 200 else 1.0) for k in range(300)]
    theta = tacplan.ground_threshold(samples, 0.0, 2.0, "below")
    assert 1.0 < theta < 9.0, theta
    try:
        tacplan.ground_threshold([(k / 100, 3.0) for k in range(300)], 0.0, 2.0, "below")
    except ValueError:
        pass
    else:
        raise AssertionError("constant trace should not separate")


def check_pipeline():
    demo = tacplan.Demo.synthesize("cable", seed=3)
    segs = demo.segments()
    assert len(segs) == 10, len(segs)
    with tempfile.TemporaryDirectory() as d:
        path = demo.save(d)
        demo = tacplan.Demo.load(path)
    plan = demo.analyze()
    assert len(plan.steps) == 10
    g = plan.groundings
    assert 1.0 < g["insert@clip_U"] < 6.0 and 8.0 < g["stretch"] < 10.0, g
    task_plan = plan.plan(seed=5)
    result = task_plan.execute(policy="abort", seed=1)
    assert result["executable"] and result["task_success"], result
    restored = tacplan.TaskPlan.from_json(task_plan.to_json())
    assert restored.steps == task_plan.steps


def check_eval():
    row = tacplan.run_config("ours", "cap", n_scenes=4, seed=7)
    assert row["reasonableness"] == 1.0
    mean = (row["reasonableness"] + row["executability"] + row["success"]) / 3
    assert math.isclose(row["overall"], mean)


def main():
    for check in (check_domain, check_library, check_tactile, check_transcript, check_grounding, check_pipeline, check_eval):
        check()
        print(f"ok  {check.__name__}")
    print(json.dumps({"status": "pass"}))


if __name__ == "__main__":
    main()
