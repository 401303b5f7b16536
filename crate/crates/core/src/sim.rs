//! Resistance-profile simulator: demonstration synthesis, skill execution and
//! the evaluation protocols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{
    analyze_demo, ground_steps, initial_state, typed_universe, AnalysisOptions, AnalyzerError, DemoData, DemoRecord, KeyframeMode,
    RuleBased, RuleParams, SceneAnnotation, SceneObject, SkillStep,
};
use crate::ftsig::{GroundingParams, ResistanceSample, WrenchRecord, WrenchSample, WrenchTrace};
use crate::pddl::{apply_ground, forward_search, translate_library, validate_plan, Atom, PddlDomain, PddlError, WorldState};
use crate::planner::{
    effect_atom, execute_with_feedback, extract_template, instantiate_template, step_from_ground, ExecResult, ExecutionPolicy, Executor,
    PlanTemplate, PlannerError, Provenance, SceneConfig, StepOutcome, Task, TaskPlan,
};
use crate::skill_model::{
    build_builtin_libraries, Channel, ConditionExpr, ErrorCode, ObjectClass, ObjectStatus, SkillLibrary, SkillReturn,
};
use crate::tactile::{synthesize_schedule, SegmentParams, DEFAULT_FPS};

pub const TICK: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("empty demonstration script")]
    EmptyDemo,
    #[error("invalid script: {0}")]
    InvalidScript(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Pddl(#[from] PddlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropStyle {
    Gradual,
    Abrupt,
}

/// Scalar resistance template for one skill.
///
/// With a `drop_style` the curve ramps from `floor` to `peak`, holds, drops to
/// `post_plateau` and the goal is reached at the drop. Without one it ramps
/// from zero to `peak` and holds, and the goal is reached once the value
/// passes `achieve_fraction * peak`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistanceProfile {
    pub action: String,
    pub channel: Channel,
    pub peak: f64,
    #[serde(default)]
    pub floor: f64,
    #[serde(default)]
    pub post_plateau: f64,
    pub rise_time: f64,
    pub hold_time: f64,
    #[serde(default)]
    pub drop_style: Option<DropStyle>,
    #[serde(default)]
    pub drop_time: f64,
    #[serde(default)]
    pub post_time: f64,
    /// Post-drop oscillation amplitude and frequency (Hz).
    #[serde(default)]
    pub oscillation: f64,
    #[serde(default)]
    pub oscillation_hz: f64,
    /// Stick-slip dip on the ramp: depth ~ U(0, dip_max) at `dip_at` of the rise.
    #[serde(default)]
    pub dip_max: f64,
    #[serde(default)]
    pub dip_at: f64,
    #[serde(default)]
    pub dip_width: f64,
    pub noise_sigma: f64,
    #[serde(default = "default_fraction")]
    pub achieve_fraction: f64,
    /// Executor safety limit (N or N·m).
    pub cap: f64,
}

fn default_fraction() -> f64 {
    0.8
}

/// One sampled run of a profile at 100 Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRun {
    pub values: Vec<f64>,
    /// Ticks from which the physical goal holds.
    pub achieved_from: Option<usize>,
}

fn truncated(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let x: f64 = n.sample(rng);
        if x.abs() <= 3.0 * sigma {
            return x;
        }
    }
}

fn ticks(t: f64) -> usize {
    (t / TICK).round() as usize
}

impl ResistanceProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(format!("profile {}: {m}", self.action)));
        if self.peak <= self.post_plateau || self.post_plateau < 0.0 {
            return bad("need peak > post_plateau >= 0");
        }
        if self.cap <= self.peak {
            return bad("cap must exceed peak");
        }
        if self.rise_time < 0.0 || self.hold_time < 0.0 || self.noise_sigma < 0.0 {
            return bad("negative duration or noise");
        }
        Ok(())
    }

    /// Sample a run; `hold_time` may be overridden (demonstrations align the
    /// drop with the end of the segment).
    pub fn sample(&self, rng: &mut ChaCha8Rng, hold_time: Option<f64>, noiseless: bool) -> ProfileRun {
        let sigma = if noiseless { 0.0 } else { self.noise_sigma };
        let rise = ticks(self.rise_time);
        let hold = ticks(hold_time.unwrap_or(self.hold_time));
        let mut values = Vec::new();
        let start = if self.drop_style.is_some() { self.floor } else { 0.0 };
        let dip_depth = if self.dip_max > 0.0 { rng.random_range(0.0..self.dip_max) } else { 0.0 };
        let dip_center = self.dip_at * self.rise_time;
        let dip_half = (self.dip_width / 2.0).max(TICK);
        for k in 0..rise {
            let t = k as f64 * TICK;
            let mut v = start + (self.peak - start) * t / self.rise_time.max(TICK);
            let off = (t - dip_center).abs();
            if off < dip_half {
                v -= dip_depth * (1.0 - off / dip_half);
            }
            values.push(v);
        }
        values.extend(std::iter::repeat_n(self.peak, hold));
        let mut achieved_from = None;
        if let Some(style) = self.drop_style {
            achieved_from = Some(values.len());
            if style == DropStyle::Gradual {
                let n = ticks(self.drop_time).max(1);
                for k in 1..=n {
                    values.push(self.peak + (self.post_plateau - self.peak) * k as f64 / (n + 1) as f64);
                }
            }
            let phase: f64 = if self.oscillation > 0.0 { rng.random_range(0.0..std::f64::consts::TAU) } else { 0.0 };
            for k in 0..ticks(self.post_time) {
                let t = k as f64 * TICK;
                values.push(self.post_plateau + self.oscillation * (std::f64::consts::TAU * self.oscillation_hz * t + phase).sin());
            }
        }
        for v in values.iter_mut() {
            *v = (*v + truncated(rng, sigma)).max(0.0);
        }
        if self.drop_style.is_none() {
            let level = self.achieve_fraction * self.peak;
            achieved_from = values.iter().position(|&v| v >= level);
        }
        ProfileRun { values, achieved_from }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub insert_u: ResistanceProfile,
    pub insert_c: ResistanceProfile,
    pub stretch: ResistanceProfile,
    pub tighten: ResistanceProfile,
    /// Resistance of an insert attempted with a slack (unstretched) cable.
    pub slack_level: f64,
}

impl Default for Profiles {
    fn default() -> Self {
        let base = ResistanceProfile {
            action: String::new(),
            channel: Channel::Force,
            peak: 0.0,
            floor: 0.0,
            post_plateau: 0.0,
            rise_time: 1.0,
            hold_time: 1.0,
            drop_style: None,
            drop_time: 0.0,
            post_time: 0.0,
            oscillation: 0.0,
            oscillation_hz: 0.0,
            dip_max: 0.0,
            dip_at: 0.0,
            dip_width: 0.0,
            noise_sigma: 0.0,
            achieve_fraction: 0.8,
            cap: 0.0,
        };
        Self {
            insert_u: ResistanceProfile {
                action: "insert".into(),
                peak: 9.0,
                floor: 6.0,
                post_plateau: 1.0,
                drop_style: Some(DropStyle::Gradual),
                drop_time: 0.05,
                post_time: 1.0,
                noise_sigma: 0.1,
                cap: 20.0,
                ..base.clone()
            },
            insert_c: ResistanceProfile {
                action: "insert".into(),
                peak: 9.5,
                floor: 6.0,
                post_plateau: 2.0,
                drop_style: Some(DropStyle::Abrupt),
                post_time: 1.0,
                oscillation: 1.5,
                oscillation_hz: 3.0,
                dip_max: 3.0,
                dip_at: 0.1,
                dip_width: 0.06,
                noise_sigma: 0.1,
                cap: 20.0,
                ..base.clone()
            },
            stretch: ResistanceProfile {
                action: "stretch".into(),
                peak: 9.8,
                rise_time: 0.5,
                hold_time: 1.5,
                noise_sigma: 0.05,
                cap: 15.0,
                ..base.clone()
            },
            tighten: ResistanceProfile {
                action: "tighten".into(),
                channel: Channel::Torque,
                peak: 2.5,
                rise_time: 0.6,
                hold_time: 1.4,
                noise_sigma: 0.02,
                cap: 4.0,
                ..base
            },
            slack_level: 1.5,
        }
    }
}

impl Profiles {
    pub fn validate(&self) -> Result<(), SimError> {
        for p in [&self.insert_u, &self.insert_c, &self.stretch, &self.tighten] {
            p.validate()?;
        }
        Ok(())
    }

    pub fn insert_for(&self, class: Option<ObjectClass>) -> &ResistanceProfile {
        match class {
            Some(ObjectClass::ClipC) => &self.insert_c,
            _ => &self.insert_u,
        }
    }
}

/// Symbolic state plus physically achieved effect atoms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub world: WorldState,
    pub achieved: BTreeSet<Atom>,
}

/// Executes skills against resistance profiles.
#[derive(Debug, Clone)]
pub struct SimExecutor {
    pub library: SkillLibrary,
    pub domain: PddlDomain,
    pub objects: Vec<SceneObject>,
    pub profiles: Profiles,
    pub state: SimState,
    rng: ChaCha8Rng,
}

impl SimExecutor {
    pub fn new(library: SkillLibrary, domain: PddlDomain, objects: Vec<SceneObject>, profiles: Profiles, seed: u64) -> Self {
        Self {
            library,
            domain,
            objects,
            profiles,
            state: SimState { world: initial_state(), achieved: BTreeSet::new() },
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn class(&self, id: Option<&str>) -> Option<ObjectClass> {
        id.and_then(|id| self.objects.iter().find(|o| o.id == id)).map(|o| o.class)
    }
}

fn outcome(ret: SkillReturn, elapsed: f64, trace: Vec<ResistanceSample>) -> StepOutcome {
    StepOutcome { ret, elapsed, trace }
}

/// Run one step; the state advances only when the step returns success.
pub fn execute_step(ex: &mut SimExecutor, step: &SkillStep, condition: &ConditionExpr) -> StepOutcome {
    let Ok(skill) = ex.library.resolve(&step.skill).cloned() else {
        return outcome(SkillReturn::Error(ErrorCode::UnknownAction), 0.0, vec![]);
    };
    let next = match step.ground(&ex.domain).and_then(|g| apply_ground(&ex.domain, &ex.state.world, &g)) {
        Ok(n) => n,
        Err(PddlError::UnknownAction(_)) => return outcome(SkillReturn::Error(ErrorCode::UnknownAction), 0.0, vec![]),
        Err(_) => return outcome(SkillReturn::Error(ErrorCode::PreconditionFailed), 0.0, vec![]),
    };
    let Some(th) = condition.threshold() else {
        ex.state.world = next;
        return outcome(SkillReturn::Success, 1.0, vec![]);
    };
    let goal = effect_atom(&ex.library, step);
    let run = match skill.action.as_str() {
        "insert" => {
            let stretched = step.target.as_ref().is_some_and(|t| ex.state.achieved.contains(&Atom::new("stretched", [t.as_str()])));
            let profile = ex.profiles.insert_for(ex.class(step.env.as_deref())).clone();
            if stretched {
                profile.sample(&mut ex.rng, None, false)
            } else {
                let n = ticks(profile.rise_time + profile.hold_time + profile.post_time);
                let sigma = profile.noise_sigma;
                let level = ex.profiles.slack_level;
                let values = (0..n).map(|_| (level + truncated(&mut ex.rng, sigma)).max(0.0)).collect();
                ProfileRun { values, achieved_from: None }
            }
        }
        "stretch" | "push" => ex.profiles.stretch.clone().sample(&mut ex.rng, None, false),
        "tighten" => ex.profiles.tighten.clone().sample(&mut ex.rng, None, false),
        _ => return outcome(SkillReturn::Error(ErrorCode::UnknownAction), 0.0, vec![]),
    };
    let mut trace = Vec::new();
    let mut ret = SkillReturn::Error(ErrorCode::TorqueLimit);
    let mut stop = run.values.len();
    for (k, &v) in run.values.iter().enumerate() {
        let (force, torque) = match th.channel {
            Channel::Force => (v, 0.0),
            Channel::Torque => (0.0, v),
        };
        trace.push(ResistanceSample { timestamp: k as f64 * TICK, force, torque });
        if th.satisfied_by(force, torque) {
            ret = SkillReturn::Success;
            stop = k;
            break;
        }
    }
    if let (Some(from), Some(goal)) = (run.achieved_from, goal) {
        if stop >= from {
            ex.state.achieved.insert(goal);
        }
    }
    if ret == SkillReturn::Success {
        ex.state.world = next;
    }
    let elapsed = trace.len() as f64 * TICK;
    outcome(ret, elapsed, trace)
}

impl Executor for SimExecutor {
    fn execute(&mut self, step: &SkillStep, condition: &ConditionExpr) -> StepOutcome {
        execute_step(self, step, condition)
    }

    fn achieved(&self) -> Vec<Atom> {
        self.state.achieved.iter().cloned().collect()
    }
}

fn obj(id: &str, class: ObjectClass, position: [f64; 3], opening: Option<&str>) -> SceneObject {
    SceneObject { id: id.into(), class, position, opening: opening.map(Into::into) }
}

/// Scene the demonstrations are recorded in.
pub fn demo_scene(task: Task) -> SceneConfig {
    match task {
        Task::CableMounting => SceneConfig {
            id: "demo_cable".into(),
            task,
            objects: vec![
                obj("cable", ObjectClass::Cable, [0.0, 0.0, 0.0], None),
                obj("clip1", ObjectClass::ClipC, [0.30, 0.10, 0.0], Some("downward")),
                obj("clip2", ObjectClass::ClipU, [0.55, -0.05, 0.0], Some("downward")),
            ],
            ordering: vec!["clip1".into(), "clip2".into()],
            seed: 0,
        },
        Task::CapTightening => SceneConfig {
            id: "demo_cap".into(),
            task,
            objects: vec![
                obj("cap1", ObjectClass::CapInner, [0.25, 0.20, 0.0], None),
                obj("bottle1", ObjectClass::Bottle, [0.45, 0.0, 0.0], None),
            ],
            ordering: vec!["cap1".into()],
            seed: 0,
        },
    }
}

/// The intended skill sequence for a scene.
pub fn ground_truth_plan(scene: &SceneConfig) -> Vec<SkillStep> {
    let find = |f: &str| scene.objects.iter().find(|o| o.class.family() == f).map(|o| o.id.as_str());
    let mut out = Vec::new();
    for id in &scene.ordering {
        match scene.task {
            Task::CableMounting => {
                let cable = find("cable");
                let dir = scene.object(id).and_then(|o| o.opening.clone()).unwrap_or_else(|| "downward".into());
                out.push(SkillStep::new("move_object", cable, Some(id)));
                out.push(SkillStep::new("grasp", cable, None));
                out.push(SkillStep::new("stretch", cable, None));
                out.push(SkillStep::new("insert", cable, Some(id)).with_param("direction", &dir));
                out.push(SkillStep::new("open_hand", cable, None));
            }
            Task::CapTightening => {
                out.push(SkillStep::new("move_object", Some(id), None));
                out.push(SkillStep::new("grasp", Some(id), None));
                out.push(SkillStep::new("tighten", Some(id), find("bottle")));
                out.push(SkillStep::new("release", Some(id), None));
            }
        }
    }
    out
}

/// Whether a plan has the ground-truth structure (skills and object bindings).
pub fn plan_is_reasonable(plan: &[SkillStep], truth: &[SkillStep]) -> bool {
    plan.len() == truth.len() && plan.iter().zip(truth).all(|(a, b)| a.skill == b.skill && a.target == b.target && a.env == b.env)
}

/// Random evaluation scene.
pub fn random_scene(task: Task, settings: &EvalSettings, seed: u64) -> SceneConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match task {
        Task::CableMounting => {
            let n = rng.random_range(1..=settings.max_clips.max(1));
            let mut objects = vec![obj("cable", ObjectClass::Cable, [0.0, 0.0, 0.0], None)];
            let mut ordering = Vec::new();
            for i in 0..n {
                let class = settings.clip_classes[rng.random_range(0..settings.clip_classes.len())];
                let id = format!("clip{}", i + 1);
                let pos = [0.2 + 0.2 * i as f64 + rng.random_range(-0.03..0.03), rng.random_range(-0.15..0.15), 0.0];
                objects.push(obj(&id, class, pos, Some("downward")));
                ordering.push(id);
            }
            SceneConfig { id: format!("cable_{seed}"), task, objects, ordering, seed }
        }
        Task::CapTightening => {
            let mut pos = || [rng.random_range(0.15..0.6), rng.random_range(-0.25..0.25), 0.0];
            let objects = vec![
                obj("cap_inner1", ObjectClass::CapInner, pos(), None),
                obj("cap_outer1", ObjectClass::CapOuter, pos(), None),
                obj("bottle1", ObjectClass::Bottle, pos(), None),
            ];
            SceneConfig { id: format!("cap_{seed}"), task, objects, ordering: vec!["cap_inner1".into(), "cap_outer1".into()], seed }
        }
    }
}

fn step_duration(status: ObjectStatus) -> f64 {
    match status {
        ObjectStatus::Idle => 2.0,
        ObjectStatus::Grasped => 1.0,
        ObjectStatus::LinearForce => 2.0,
        ObjectStatus::Torque => 2.5,
        ObjectStatus::Released | ObjectStatus::Ambiguous => 1.2,
    }
}

const HOME: [f64; 3] = [0.0, 0.0, 0.3];
const HOLD_DELAY: f64 = 0.3;
const SCENE_RATE: f64 = 10.0;
/// Demo tactile noise (mm); kept under the idle threshold.
const TACTILE_NOISE: f64 = 0.02;

fn lerp(a: [f64; 3], b: [f64; 3], s: f64) -> [f64; 3] {
    let s = s.clamp(0.0, 1.0);
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

fn above(p: [f64; 3], dz: f64) -> [f64; 3] {
    [p[0], p[1], p[2] + dz]
}

struct Phase {
    t0: f64,
    t1: f64,
    from: [f64; 3],
    to: [f64; 3],
    /// Fraction of the phase before motion starts.
    delay: f64,
    holding_from: Option<f64>,
    holding_until: Option<f64>,
}

/// Synthesize tactile, wrench and scene streams for a scripted execution.
pub fn synthesize_demo(scene: &SceneConfig, script: &[SkillStep], seed: u64, profiles: &Profiles) -> Result<DemoData, SimError> {
    if script.is_empty() {
        return Err(SimError::EmptyDemo);
    }
    let libs = build_builtin_libraries();
    let lib = &libs[scene.task.library()];
    let domain = translate_library(lib)?;
    let ground = ground_steps(script, &domain).map_err(|e| SimError::InvalidScript(e.to_string()))?;
    let report = validate_plan(&domain, &initial_state(), &ground, &[]);
    if !report.all_steps_ok() {
        return Err(SimError::InvalidScript(format!("step {:?} fails its precondition", report.first_failure())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut schedule = Vec::new();
    let mut phases = Vec::new();
    let n_total: usize;
    {
        let mut t = 0.0;
        let mut ee = HOME;
        let mut holding = false;
        for step in script {
            let skill = lib.resolve(&step.skill).map_err(|e| SimError::InvalidScript(e.to_string()))?;
            let status = skill.status_signature;
            let d = step_duration(status);
            let at = |id: &Option<String>| id.as_deref().and_then(|i| scene.object(i)).map(|o| o.position);
            let mut phase = Phase { t0: t, t1: t + d, from: ee, to: ee, delay: 0.0, holding_from: None, holding_until: None };
            match status {
                ObjectStatus::Idle => {
                    let goal = at(&step.env).or_else(|| at(&step.target)).unwrap_or(ee);
                    phase.to = above(goal, 0.02);
                    phase.delay = 0.1;
                }
                ObjectStatus::Grasped => {
                    phase.holding_from = Some(t + HOLD_DELAY);
                    holding = true;
                    // Caps are carried to the bottle once grasped.
                    if scene.task == Task::CapTightening {
                        if let Some(b) = scene.objects.iter().find(|o| o.class == ObjectClass::Bottle) {
                            phase.to = above(b.position, 0.05);
                            phase.delay = 0.4;
                        }
                    }
                }
                ObjectStatus::Released => {
                    phase.holding_until = Some(t + HOLD_DELAY);
                    holding = false;
                }
                _ => {}
            }
            let _ = holding;
            ee = phase.to;
            schedule.push((status, d));
            phases.push(phase);
            t += d;
        }
        n_total = ticks(t);
    }
    let tactile = synthesize_schedule(&schedule, DEFAULT_FPS, TACTILE_NOISE, rng.random());

    // Resistance per tick: (value, channel, direction); None means baseline.
    let mut force: Vec<Option<(f64, Option<[f64; 3]>)>> = vec![None; n_total];
    let mut torque: Vec<Option<(f64, Option<[f64; 3]>)>> = vec![None; n_total];
    for (step, phase) in script.iter().zip(&phases) {
        let skill = lib.resolve(&step.skill).expect("resolved above");
        let k0 = ticks(phase.t0);
        let k1 = ticks(phase.t1).min(n_total);
        let (profile, dir, hold) = match skill.action.as_str() {
            "insert" => {
                let class = step.env.as_deref().and_then(|e| scene.object(e)).map(|o| o.class);
                let p = profiles.insert_for(class).clone();
                let hold = (phase.t1 - phase.t0 - p.rise_time).max(0.0);
                (p, [0.0, 0.0, -1.0], Some(hold))
            }
            "stretch" | "push" => {
                let p = profiles.stretch.clone();
                let hold = (phase.t1 - phase.t0 - p.rise_time).max(0.0);
                (p, [1.0, 0.0, 0.0], Some(hold))
            }
            "tighten" => {
                let p = profiles.tighten.clone();
                let hold = (phase.t1 - phase.t0 - p.rise_time).max(0.0);
                (p, [0.0, 0.0, 1.0], Some(hold))
            }
            _ => continue,
        };
        let run = profile.sample(&mut rng, hold, false);
        let lane = match profile.channel {
            Channel::Force => &mut force,
            Channel::Torque => &mut torque,
        };
        for (i, v) in run.values.iter().enumerate() {
            let k = k0 + i;
            if k >= n_total {
                break;
            }
            // Inside the segment the direction is known; the tail after it is
            // recorded without one.
            let d = (k < k1).then_some(dir);
            if lane[k].is_none() {
                lane[k] = Some((*v, d));
            }
        }
    }
    let mut records = Vec::with_capacity(n_total);
    for k in 0..n_total {
        let t = k as f64 * TICK;
        let mut noise = || [truncated(&mut rng, 0.03), truncated(&mut rng, 0.03), truncated(&mut rng, 0.03)];
        let (f, linear_dir) = match force[k] {
            Some((v, Some(d))) => ([-v * d[0], -v * d[1], -v * d[2]], Some(d)),
            Some((v, None)) => ([0.0, 0.0, v], None),
            None => (noise(), None),
        };
        let (tq, angular_dir) = match torque[k] {
            Some((v, Some(w))) => ([-v * w[0], -v * w[1], -v * w[2]], Some(w)),
            Some((v, None)) => ([0.0, 0.0, v], None),
            None => {
                let n = noise();
                ([n[0] * 0.01, n[1] * 0.01, n[2] * 0.01], None)
            }
        };
        records.push(WrenchRecord { sample: WrenchSample { force: f, torque: tq, timestamp: t }, linear_dir, angular_dir });
    }

    let mut stream = Vec::new();
    let n_scene = (n_total as f64 * TICK * SCENE_RATE).round() as usize;
    let mut holding = false;
    let mut pi = 0;
    for i in 0..=n_scene {
        let t = i as f64 / SCENE_RATE;
        while pi + 1 < phases.len() && t >= phases[pi].t1 - 1e-9 {
            pi += 1;
        }
        let p = &phases[pi];
        if p.holding_from.is_some_and(|h| t >= h - 1e-9) {
            holding = true;
        }
        if p.holding_until.is_some_and(|h| t >= h - 1e-9) {
            holding = false;
        }
        let span = p.t1 - p.t0;
        let s = ((t - p.t0) / span - p.delay) / (1.0 - p.delay - 0.1);
        stream.push(SceneAnnotation { timestamp: t, ee_position: lerp(p.from, p.to, s), holding, objects: scene.objects.clone() });
    }
    let description = match scene.task {
        Task::CableMounting => "Two robot hands mount a cable onto several clips.",
        Task::CapTightening => "A robot hand tightens caps onto a bottle.",
    };
    Ok(DemoData {
        record: DemoRecord {
            task_description: description.into(),
            library: scene.task.library().into(),
            tactile: "tactile.jsonl".into(),
            wrench: "wrench.csv".into(),
            scene: stream,
        },
        tactile,
        wrench: WrenchTrace { records },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "ours")]
    Ours,
    A,
    B,
    C,
    D,
}

impl Group {
    pub const ALL: [Group; 5] = [Group::Ours, Group::A, Group::B, Group::C, Group::D];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::Ours => "ours",
            Group::A => "A",
            Group::B => "B",
            Group::C => "C",
            Group::D => "D",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "ours" | "Ours" => Group::Ours,
            "A" | "a" => Group::A,
            "B" | "b" => Group::B,
            "C" | "c" => Group::C,
            "D" | "d" => Group::D,
            _ => return None,
        })
    }
}

impl std::str::FromStr for Group {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Group::parse(s).ok_or_else(|| format!("unknown group `{s}` (expected ours, A, B, C or D)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub n_scenes: usize,
    pub seed: u64,
    pub uniform_frames: usize,
    pub max_clips: usize,
    pub clip_classes: Vec<ObjectClass>,
    pub policy: ExecutionPolicy,
    pub post_window: f64,
    pub grounding: GroundingParams,
    pub rule: RuleParams,
    pub segment: SegmentParams,
    pub search_depth: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_scenes: 20,
            seed: 7,
            uniform_frames: 8,
            max_clips: 4,
            clip_classes: vec![ObjectClass::ClipU],
            policy: ExecutionPolicy::abort(),
            post_window: 1.0,
            grounding: GroundingParams::default(),
            rule: RuleParams::default(),
            segment: SegmentParams::default(),
            search_depth: 24,
        }
    }
}

/// Profiles and evaluation settings, loadable from TOML or JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub profiles: Profiles,
    pub eval: EvalSettings,
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let c: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        c.profiles.validate()?;
        Ok(c)
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let c: SimConfig = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        c.profiles.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text),
            _ => Self::from_toml(&text),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn analysis_options(group: Group, settings: &EvalSettings) -> AnalysisOptions {
    AnalysisOptions {
        keyframes: match group {
            Group::A => KeyframeMode::SegmentsNoStatus,
            Group::B => KeyframeMode::Uniform(settings.uniform_frames),
            _ => KeyframeMode::Segments,
        },
        ground: group != Group::C,
        segment: settings.segment,
        grounding: settings.grounding,
        post_window: settings.post_window,
    }
}

/// Demonstration analysis and template extraction for one group.
pub fn demo_template(group: Group, task: Task, config: &SimConfig, seed: u64) -> Result<PlanTemplate, SimError> {
    let scene = demo_scene(task);
    let demo = synthesize_demo(&scene, &ground_truth_plan(&scene), seed, &config.profiles)?;
    let lib = build_builtin_libraries()[task.library()].clone();
    let backend = RuleBased { lib: lib.clone(), params: config.eval.rule };
    let plan = analyze_demo(&demo, &lib, &backend, &analysis_options(group, &config.eval))?;
    let mut t = extract_template(&plan)?;
    t.demo_id = scene.id;
    Ok(t)
}

/// Plan for a scene without a demonstration: breadth-first search over the
/// translated library with its initial conditions.
pub fn search_plan(lib: &SkillLibrary, scene: &SceneConfig, max_depth: usize) -> Result<TaskPlan, SimError> {
    let domain = translate_library(lib)?;
    let universe = typed_universe(&scene.objects, &[], lib);
    let goal = scene.goal();
    let ground = forward_search(&domain, &universe, &initial_state(), &goal, max_depth)?;
    Ok(TaskPlan {
        steps: ground.iter().map(|g| step_from_ground(&domain, g)).collect(),
        library: lib.clone(),
        domain,
        objects: scene.objects.clone(),
        goal,
        provenance: Provenance { demo_plan: String::new(), scene: scene.id.clone() },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub scene: String,
    pub reasonable: bool,
    pub executable: bool,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub group: Group,
    pub task: Task,
    pub reasonableness: f64,
    pub executability: f64,
    pub success: f64,
    pub overall: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenes: Vec<SceneOutcome>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("group,task,reasonableness,executability,success,overall\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{:.4},{:.4}",
                r.group.as_str(),
                r.task.short(),
                r.reasonableness,
                r.executability,
                r.success,
                r.overall
            );
        }
        s
    }
}

fn scene_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng.random()
}

/// Plan and execute `n_scenes` random scenes under one ablation group.
pub fn run_config(group: Group, task: Task, n_scenes: usize, seed: u64, config: &SimConfig) -> EvalRow {
    let lib = build_builtin_libraries()[task.library()].clone();
    let template = match group {
        Group::D => None,
        _ => demo_template(group, task, config, seed).ok(),
    };
    let mut scenes = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes.max(1) {
        let s = scene_seed(seed, i);
        let scene = random_scene(task, &config.eval, s);
        let plan = match (group, &template) {
            (Group::D, _) => search_plan(&lib, &scene, config.eval.search_depth).ok(),
            (_, Some(t)) => instantiate_template(t, &scene).ok(),
            (_, None) => None,
        };
        let outcome = match plan {
            None => SceneOutcome { scene: scene.id.clone(), reasonable: false, executable: false, success: false },
            Some(plan) => {
                let reasonable = plan_is_reasonable(&plan.steps, &ground_truth_plan(&scene));
                let result = execute_plan(&plan, &config.profiles, &config.eval.policy, s ^ 0x5eed);
                SceneOutcome { scene: scene.id.clone(), reasonable, executable: result.executable, success: result.task_success }
            }
        };
        scenes.push(outcome);
    }
    let n = scenes.len() as f64;
    let frac = |f: fn(&SceneOutcome) -> bool| scenes.iter().filter(|s| f(s)).count() as f64 / n;
    let reasonableness = frac(|s| s.reasonable);
    let executability = frac(|s| s.executable);
    let success = frac(|s| s.success);
    EvalRow { group, task, reasonableness, executability, success, overall: (reasonableness + executability + success) / 3.0, scenes }
}

pub fn execute_plan(plan: &TaskPlan, profiles: &Profiles, policy: &ExecutionPolicy, seed: u64) -> ExecResult {
    let mut ex = SimExecutor::new(plan.library.clone(), plan.domain.clone(), plan.objects.clone(), profiles.clone(), seed);
    execute_with_feedback(plan, &mut ex, policy)
}

/// Every group on every task.
pub fn run_grid(groups: &[Group], tasks: &[Task], config: &SimConfig) -> EvalReport {
    let mut rows = Vec::new();
    for &task in tasks {
        for &group in groups {
            rows.push(run_config(group, task, config.eval.n_scenes, config.eval.seed, config));
        }
    }
    EvalReport { rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionTrial {
    /// Stretch followed by insertion into a U-type clip.
    InsertU,
    /// Stretch followed by insertion into a C-type clip.
    InsertC,
    Tighten,
}

/// Success rate of one skill pairing over seeded trials with the given
/// library's conditions.
pub fn condition_success_rate(kind: ConditionTrial, lib: &SkillLibrary, trials: usize, seed: u64, profiles: &Profiles) -> f64 {
    let domain = translate_library(lib).expect("builtin libraries translate");
    let (objects, steps, goal) = match kind {
        ConditionTrial::InsertU | ConditionTrial::InsertC => {
            let class = if kind == ConditionTrial::InsertU { ObjectClass::ClipU } else { ObjectClass::ClipC };
            let objects = vec![obj("cable", ObjectClass::Cable, [0.0; 3], None), obj("clip", class, [0.3, 0.0, 0.0], Some("downward"))];
            let steps = vec![
                SkillStep::new("move_object", Some("cable"), Some("clip")),
                SkillStep::new("grasp", Some("cable"), None),
                SkillStep::new("stretch", Some("cable"), None),
                SkillStep::new("insert", Some("cable"), Some("clip")).with_param("direction", "downward"),
            ];
            (objects, steps, vec![Atom::new("inserted", ["cable", "clip"])])
        }
        ConditionTrial::Tighten => {
            let objects =
                vec![obj("cap", ObjectClass::CapInner, [0.3, 0.1, 0.0], None), obj("bottle", ObjectClass::Bottle, [0.4, 0.0, 0.0], None)];
            let steps = vec![
                SkillStep::new("move_object", Some("cap"), None),
                SkillStep::new("grasp", Some("cap"), None),
                SkillStep::new("tighten", Some("cap"), Some("bottle")),
            ];
            (objects, steps, vec![Atom::new("tightened", ["cap", "bottle"])])
        }
    };
    let plan = TaskPlan {
        steps,
        library: lib.clone(),
        domain,
        objects,
        goal,
        provenance: Provenance { demo_plan: String::new(), scene: format!("{kind:?}") },
    };
    let ok = (0..trials)
        .filter(|&i| {
            let r = execute_plan(&plan, profiles, &ExecutionPolicy::abort(), scene_seed(seed, i));
            r.executable && r.task_success
        })
        .count();
    ok as f64 / trials.max(1) as f64
}

/// Library grounded from the synthesized demonstration of a task.
pub fn grounded_library(task: Task, config: &SimConfig, seed: u64) -> Result<(SkillLibrary, BTreeMap<String, f64>), SimError> {
    let scene = demo_scene(task);
    let demo = synthesize_demo(&scene, &ground_truth_plan(&scene), seed, &config.profiles)?;
    let lib = build_builtin_libraries()[task.library()].clone();
    let backend = RuleBased { lib: lib.clone(), params: config.eval.rule };
    let plan = analyze_demo(&demo, &lib, &backend, &analysis_options(Group::Ours, &config.eval))?;
    Ok((plan.grounded_library, plan.groundings))
}
