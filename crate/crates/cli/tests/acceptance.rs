//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tacplan::analyzer::initial_state;
use tacplan::analyzer::{collapse_steps, parse_transcript_entries, SkillStep, CABLE_DEMO_TRANSCRIPT};
use tacplan::ftsig::{ground_threshold, grounding_windows, FtError, GroundingParams, ResistanceSample, ResistanceTrace};
use tacplan::pddl::{emit, parse, validate_plan, ROBOT_SKILLS_DOMAIN};
use tacplan::planner::{plan_new_task, Task};
use tacplan::sim::{
    condition_success_rate, demo_template, grounded_library, random_scene, run_grid, search_plan, ConditionTrial, Group, SimConfig,
};
use tacplan::skill_model::{build_builtin_libraries, Channel, Comparison, ObjectStatus};
use tacplan::tactile::{
    classify, features, pattern_field, segment_sequence, synthesize_pattern, synthesize_schedule, ClassifierParams, SegmentParams,
    TactileFrame, DEFAULT_GRID,
};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_ms: u128, what: &str) -> Result<(), String> {
    ensure(elapsed.as_millis() < limit_ms, format!("{what} took {} ms (limit {limit_ms} ms)", elapsed.as_millis()))
}

const STATUSES: [ObjectStatus; 5] =
    [ObjectStatus::Idle, ObjectStatus::Grasped, ObjectStatus::Released, ObjectStatus::LinearForce, ObjectStatus::Torque];

fn domain_round_trip() -> Check {
    let t = Instant::now();
    let d = parse(ROBOT_SKILLS_DOMAIN).map_err(|e| e.to_string())?;
    let again = parse(&emit(&d)).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    ensure(d == again, "re-parsed domain differs")?;
    ensure(d.actions.len() == 6, format!("{} actions", d.actions.len()))?;
    ensure(d.predicates.len() == 5, format!("{} predicates", d.predicates.len()))?;
    within(elapsed, 10, "round trip")?;
    Ok(format!("6 actions, 5 predicates, {:.2} ms", elapsed.as_secs_f64() * 1e3))
}

fn transcript_fidelity() -> Check {
    let entries = parse_transcript_entries(CABLE_DEMO_TRANSCRIPT).map_err(|e| e.to_string())?;
    ensure(entries.len() == 8, format!("{} entries", entries.len()))?;
    let steps = collapse_steps(entries.into_iter().map(|e| e.step).collect());
    let golden = [
        SkillStep::new("move_object", Some("cable"), Some("clip1")),
        SkillStep::new("grasp", Some("cable"), None),
        SkillStep::new("stretch", Some("cable"), None),
        SkillStep::new("insert", Some("cable"), Some("clip1")).with_param("direction", "downward"),
        SkillStep::new("open_hand", None, None),
    ];
    ensure(steps.len() == golden.len(), format!("{} steps", steps.len()))?;
    for (i, (s, g)) in steps.iter().zip(&golden).enumerate() {
        ensure(s.same_action(g), format!("step {i}: {} != {}", s.to_sexpr(), g.to_sexpr()))?;
    }
    Ok("8 entries -> [move_object, grasp, stretch, insert, open_hand]".into())
}

fn accuracy(status: ObjectStatus, sigma_rel: f64, seed: u64) -> f64 {
    let p = ClassifierParams::default();
    let m =
        features(&TactileFrame::new(DEFAULT_GRID, DEFAULT_GRID, pattern_field(status, DEFAULT_GRID, DEFAULT_GRID, 1.0, 0.0), 0.0).unwrap())
            .mean_magnitude;
    let seq = synthesize_pattern(status, 500.0 / 30.0, 30.0, sigma_rel * m, seed);
    let ok = seq.frames.iter().filter(|f| classify(f, &p) == status).count();
    ok as f64 / seq.frames.len() as f64
}

fn tactile_classifier() -> Check {
    let mut worst_noisy: f64 = 1.0;
    for (i, &s) in STATUSES.iter().enumerate() {
        let clean = accuracy(s, 0.0, i as u64);
        ensure(clean == 1.0, format!("{s:?} noiseless accuracy {clean}"))?;
        let noisy = accuracy(s, 0.1, 100 + i as u64);
        ensure(noisy >= 0.99, format!("{s:?} accuracy {noisy} at 0.1 m"))?;
        worst_noisy = worst_noisy.min(noisy);
    }
    let p = ClassifierParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let status = STATUSES[rng.random_range(1..STATUSES.len())];
        let amp = rng.random_range(0.2..3.0);
        let field = pattern_field(status, DEFAULT_GRID, DEFAULT_GRID, amp, rng.random_range(0.0..std::f64::consts::TAU));
        let frame = TactileFrame::new(DEFAULT_GRID, DEFAULT_GRID, field, 0.0).unwrap();
        let base = classify(&frame, &p);
        let alpha = rng.random_range(0.5..5.0);
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        ensure(classify(&frame.scaled(alpha), &p) == base, format!("field {i}: scale {alpha} changes the status"))?;
        ensure(classify(&frame.rotated(angle), &p) == base, format!("field {i}: rotation {angle} changes the status"))?;
    }
    Ok(format!("noiseless 1.000, worst at 0.1 m {worst_noisy:.3}, 1000 invariance fields"))
}

fn segmentation() -> Check {
    let fps = 30.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut boundaries = 0;
    for trial in 0..100 {
        let n = rng.random_range(3..=8);
        let mut schedule: Vec<(ObjectStatus, f64)> = Vec::new();
        while schedule.len() < n {
            let s = STATUSES[rng.random_range(0..STATUSES.len())];
            if schedule.last().is_some_and(|l| l.0 == s) {
                continue;
            }
            let frames = rng.random_range(15..60);
            schedule.push((s, frames as f64 / fps));
        }
        let seq = synthesize_schedule(&schedule, fps, 0.02, trial);
        let segs = segment_sequence(&seq, &SegmentParams::default()).map_err(|e| e.to_string())?;
        ensure(segs.len() == n, format!("trial {trial}: {} segments for {n}", segs.len()))?;
        let mut t = 0.0;
        for (seg, (status, d)) in segs.iter().zip(&schedule) {
            ensure(seg.status == *status, format!("trial {trial}: {:?} != {status:?}", seg.status))?;
            ensure((seg.t_start - t).abs() <= 2.0 / fps + 1e-9, format!("trial {trial}: boundary {} vs {t}", seg.t_start))?;
            t += d;
            boundaries += 1;
        }
    }
    Ok(format!("100 schedules, {boundaries} boundaries within 2 frames"))
}

fn threshold_grounding() -> Check {
    let config = SimConfig::default();
    let (_, cable) = grounded_library(Task::CableMounting, &config, config.eval.seed).map_err(|e| e.to_string())?;
    let (_, cap) = grounded_library(Task::CapTightening, &config, config.eval.seed).map_err(|e| e.to_string())?;
    let get = |m: &std::collections::BTreeMap<String, f64>, k: &str| m.get(k).copied().ok_or(format!("no grounding for {k}"));
    let checks = [
        ("insert-U", get(&cable, "insert@clip_U")?, 1.0, 6.0),
        ("insert-C", get(&cable, "insert@clip_C")?, 2.0, 8.0),
        ("stretch", get(&cable, "stretch")?, 8.0, 10.0),
        ("tighten", get(&cap, "tighten@bottle")?, 1.7, 2.3),
    ];
    let mut line = Vec::new();
    for (name, th, lo, hi) in checks {
        ensure(th > lo && th < hi, format!("{name} theta {th:.3} outside ({lo}, {hi})"))?;
        line.push(format!("{name} {th:.2}"));
    }
    let flat = trace(&[(0.0, 3.0, 4.0)], 0.0, 0);
    let seg = tacplan::tactile::Segment { status: ObjectStatus::Torque, t_start: 1.0, t_end: 2.0, key_timestamp: 1.0 };
    for cmp in [Comparison::Below, Comparison::Above] {
        let r = ground_threshold(&flat, &seg, 1.0, cmp, Channel::Force, &GroundingParams::default());
        ensure(matches!(r, Err(FtError::NoSeparation { .. })), format!("constant trace under {cmp:?}: {r:?}"))?;
    }
    Ok(format!("{}; constant traces -> NoSeparation", line.join(", ")))
}

fn condition_success() -> Check {
    let t = Instant::now();
    let config = SimConfig::default();
    let libs = build_builtin_libraries();
    let (cable, _) = grounded_library(Task::CableMounting, &config, config.eval.seed).map_err(|e| e.to_string())?;
    let (cap, _) = grounded_library(Task::CapTightening, &config, config.eval.seed).map_err(|e| e.to_string())?;
    let rate = |k, lib| condition_success_rate(k, lib, 20, 1, &config.profiles);
    let before = [
        rate(ConditionTrial::InsertU, &libs["cable"]),
        rate(ConditionTrial::InsertC, &libs["cable"]),
        rate(ConditionTrial::Tighten, &libs["cap"]),
    ];
    let after = [rate(ConditionTrial::InsertU, &cable), rate(ConditionTrial::InsertC, &cable), rate(ConditionTrial::Tighten, &cap)];
    let elapsed = t.elapsed();
    ensure(before.iter().all(|&b| b == 0.0), format!("before-update rates {before:?}"))?;
    ensure(after[0] >= 0.9, format!("insert-U after {}", after[0]))?;
    ensure((0.3..=0.7).contains(&after[1]), format!("insert-C after {}", after[1]))?;
    ensure(after[2] == 1.0, format!("tighten after {}", after[2]))?;
    within(elapsed, 5000, "success-rate trials")?;
    Ok(format!("before {before:?}; after U {:.2}, C {:.2}, tighten {:.2}; {:.2} s", after[0], after[1], after[2], elapsed.as_secs_f64()))
}

fn planning_ablation() -> Check {
    let t = Instant::now();
    let config = SimConfig::default();
    let report = run_grid(&Group::ALL, &[Task::CableMounting, Task::CapTightening], &config);
    let elapsed = t.elapsed();
    for r in &report.rows {
        ensure(r.overall == (r.reasonableness + r.executability + r.success) / 3.0, format!("{:?}/{:?} overall", r.group, r.task))?;
        let cable = r.task == Task::CableMounting;
        let ok = match r.group {
            Group::Ours => r.reasonableness == 1.0 && if cable { r.success >= 0.9 } else { r.success == 1.0 },
            Group::C => r.reasonableness == 1.0 && r.success == 0.0,
            Group::A | Group::B => r.reasonableness == 0.0,
            Group::D => r.success == 0.0 && (!cable || r.executability >= 0.9),
        };
        ensure(ok, format!("{:?}/{:?}: r={} e={} s={}", r.group, r.task, r.reasonableness, r.executability, r.success))?;
    }
    within(elapsed, 60_000, "5x2 grid")?;
    Ok(format!("{} cells match, {:.2} s", report.rows.len(), elapsed.as_secs_f64()))
}

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_tacplan"))
            .arg("--out")
            .arg(&out)
            .args(["eval", "--seed", "7", "--n", "20"])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.success(), String::from_utf8_lossy(&o.stderr).to_string())?;
        outputs.push(std::fs::read(out.join("eval.csv")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], "CSV files differ")?;
    Ok(format!("two runs, {} identical bytes", outputs[0].len()))
}

/// Piecewise-constant trace: `(start, end, level)` pieces at 100 Hz with
/// uniform noise of half-width `noise`.
fn trace(pieces: &[(f64, f64, f64)], noise: f64, seed: u64) -> ResistanceTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let end = pieces.iter().map(|p| p.1).fold(0.0, f64::max);
    let samples = (0..(end * 100.0).round() as usize)
        .map(|k| {
            let t = k as f64 / 100.0;
            let level = pieces.iter().find(|p| t >= p.0 && t < p.1).map_or(0.0, |p| p.2);
            let v = level + if noise > 0.0 { rng.random_range(-noise..noise) } else { 0.0 };
            ResistanceSample { timestamp: t, force: v, torque: 0.0 }
        })
        .collect();
    ResistanceTrace::new(samples).unwrap()
}

/// Thresholds that classify every active-tail and reference sample correctly,
/// found by sweeping midpoints of the sorted pooled samples.
fn sweep_band(active: &[f64], reference: &[f64], active_high: bool) -> Option<(f64, f64)> {
    let mut all: Vec<f64> = active.iter().chain(reference).copied().collect();
    all.sort_by(f64::total_cmp);
    let mut band: Option<(f64, f64)> = None;
    for w in all.windows(2) {
        let th = 0.5 * (w[0] + w[1]);
        if active.iter().all(|&a| (a > th) == active_high) && reference.iter().all(|&b| (b > th) != active_high) {
            band = Some(band.map_or((w[0], w[1]), |(lo, hi)| (lo.min(w[0]), hi.max(w[1]))));
        }
    }
    band
}

fn oracle_cross_checks() -> Check {
    let config = SimConfig::default();
    let libs = build_builtin_libraries();
    let mut plans = 0;
    let mut searched = 0;
    for task in [Task::CableMounting, Task::CapTightening] {
        let template = demo_template(Group::Ours, task, &config, config.eval.seed).map_err(|e| e.to_string())?;
        let lib = &libs[task.library()];
        for seed in 0..30 {
            let scene = random_scene(task, &config.eval, seed);
            let plan = plan_new_task(&template, &scene).map_err(|e| format!("{task:?} scene {seed}: {e}"))?;
            let report = plan.validate().map_err(|e| e.to_string())?;
            ensure(report.all_steps_ok() && report.goal_satisfied, format!("{task:?} scene {seed}: plan does not validate"))?;
            plans += 1;
            let found = search_plan(lib, &scene, config.eval.search_depth).map_err(|e| format!("{task:?} scene {seed}: search {e}"))?;
            let ground: Vec<_> =
                found.steps.iter().map(|s| s.ground(&found.domain)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
            let report = validate_plan(&found.domain, &initial_state(), &ground, &found.goal);
            ensure(report.all_steps_ok() && report.goal_satisfied, format!("{task:?} scene {seed}: searched plan does not validate"))?;
            searched += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let params = GroundingParams::default();
    for i in 0..200 {
        let hi = rng.random_range(4.0..12.0);
        let lo = rng.random_range(0.0..hi * 0.3);
        let noise = rng.random_range(0.0..0.05 * hi);
        let seg = tacplan::tactile::Segment { status: ObjectStatus::Torque, t_start: 1.0, t_end: 3.0, key_timestamp: 1.0 };
        for cmp in [Comparison::Below, Comparison::Above] {
            let tr = match cmp {
                Comparison::Below => trace(&[(0.0, 1.0, lo), (1.0, 3.0, hi), (3.0, 4.5, lo)], noise, i),
                Comparison::Above => trace(&[(0.0, 1.0, lo), (1.0, 3.0, hi), (3.0, 4.5, lo)], noise, i + 1000),
            };
            let th = ground_threshold(&tr, &seg, 1.0, cmp, Channel::Force, &params).map_err(|e| format!("trace {i}: {e}"))?;
            let (a, b) = grounding_windows(&tr, &seg, 1.0, cmp, Channel::Force, &params).map_err(|e| e.to_string())?;
            let (blo, bhi) = sweep_band(&a, &b, true).ok_or(format!("trace {i}: not separable"))?;
            ensure(th > blo && th < bhi, format!("trace {i} {cmp:?}: theta {th} outside ({blo}, {bhi})"))?;
        }
    }
    Ok(format!("{plans} generalized plans and {searched} searched plans validate; 400 thresholds inside the sweep band"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("domain round trip", domain_round_trip),
        ("transcript fidelity", transcript_fidelity),
        ("tactile classifier", tactile_classifier),
        ("segmentation", segmentation),
        ("threshold grounding", threshold_grounding),
        ("skill-condition success", condition_success),
        ("task-planning ablation", planning_ablation),
        ("end-to-end determinism", cli_determinism),
        ("oracle cross-checks", oracle_cross_checks),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
