//! Plan generalization from a demonstration task plan, and execution with
//! skill-return feedback.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyzer::{ground_steps, initial_state, DemoTaskPlan, SceneObject, SkillStep};
use crate::ftsig::{ResistanceSample, ResistanceTrace};
use crate::pddl::{participle, validate_plan, Atom, PddlDomain, ValidationReport};
use crate::skill_model::{Comparison, ConditionExpr, ErrorCode, ObjectClass, ObjectStatus, SkillLibrary, SkillReturn};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("demonstration plan references no sequenced objects")]
    NoEnvObjects,
    #[error("no template block for class `{0}`")]
    NoBlockForClass(ObjectClass),
    #[error("scene: {0}")]
    InvalidScene(String),
    #[error("plan does not validate (first failure at step {:?}, unmet goal {:?})", .0.first_failure(), .0.unmet_goal)]
    ValidationFailed(Box<ValidationReport>),
    #[error(transparent)]
    Analyzer(#[from] crate::analyzer::AnalyzerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    CableMounting,
    CapTightening,
}

impl Task {
    pub fn library(self) -> &'static str {
        match self {
            Task::CableMounting => "cable",
            Task::CapTightening => "cap",
        }
    }

    pub fn short(self) -> &'static str {
        self.library()
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cable" | "cable_mounting" => Ok(Task::CableMounting),
            "cap" | "cap_tightening" => Ok(Task::CapTightening),
            _ => Err(format!("unknown task `{s}` (expected cable or cap)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default)]
    pub id: String,
    pub task: Task,
    pub objects: Vec<SceneObject>,
    /// Task order of the sequenced objects (clips or caps).
    pub ordering: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

impl SceneConfig {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn validate(&self) -> Result<(), PlannerError> {
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id.as_str()) {
                return Err(PlannerError::InvalidScene(format!("duplicate object id `{}`", o.id)));
            }
        }
        for id in &self.ordering {
            match self.object(id) {
                Some(o) if o.class.is_sequenced() => {}
                Some(o) => return Err(PlannerError::InvalidScene(format!("`{id}` ({}) cannot be ordered", o.class))),
                None => return Err(PlannerError::InvalidScene(format!("ordering names unknown object `{id}`"))),
            }
        }
        let count = |f: &str| self.objects.iter().filter(|o| o.class.family() == f).count();
        match self.task {
            Task::CableMounting if count("cable") != 1 => Err(PlannerError::InvalidScene("cable task needs exactly one cable".into())),
            Task::CapTightening if count("bottle") != 1 => Err(PlannerError::InvalidScene("cap task needs exactly one bottle".into())),
            Task::CapTightening if count("cap") == 0 => Err(PlannerError::InvalidScene("cap task needs a cap".into())),
            _ => Ok(()),
        }
    }

    /// Goal atoms: every ordered object inserted / tightened.
    pub fn goal(&self) -> Vec<Atom> {
        let first = |f: &str| self.objects.iter().find(|o| o.class.family() == f).map(|o| o.id.clone());
        match self.task {
            Task::CableMounting => {
                let cable = first("cable").unwrap_or_else(|| "cable".into());
                self.ordering.iter().map(|c| Atom::new("inserted", [cable.as_str(), c])).collect()
            }
            Task::CapTightening => {
                let bottle = first("bottle").unwrap_or_else(|| "bottle".into());
                self.ordering.iter().map(|c| Atom::new("tightened", [c.as_str(), bottle.as_str()])).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBlock {
    pub class: ObjectClass,
    /// Object the block was extracted for in the demonstration.
    pub key_object: String,
    pub steps: Vec<SkillStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTemplate {
    pub prologue: Vec<SkillStep>,
    pub blocks: Vec<TemplateBlock>,
    pub epilogue: Vec<SkillStep>,
    pub library: SkillLibrary,
    pub domain: PddlDomain,
    pub demo_objects: Vec<SceneObject>,
    #[serde(default)]
    pub demo_id: String,
}

impl PlanTemplate {
    /// Block for a class: exact match first, then any block of the same family.
    pub fn block_for(&self, class: ObjectClass) -> Option<&TemplateBlock> {
        self.blocks.iter().find(|b| b.class == class).or_else(|| self.blocks.iter().find(|b| b.class.family() == class.family()))
    }
}

fn class_of(objects: &[SceneObject], id: &str) -> Option<ObjectClass> {
    objects.iter().find(|o| o.id == id).map(|o| o.class)
}

fn key_object(step: &SkillStep, objects: &[SceneObject]) -> Option<String> {
    [step.env.as_deref(), step.target.as_deref()]
        .into_iter()
        .flatten()
        .find(|id| class_of(objects, id).is_some_and(ObjectClass::is_sequenced))
        .map(str::to_string)
}

/// Split the demonstration sequence into prologue, per-object blocks and
/// epilogue.
pub fn extract_template(demo: &DemoTaskPlan) -> Result<PlanTemplate, PlannerError> {
    let objects = &demo.objects;
    let lib = &demo.grounded_library;
    let mut keys: Vec<Option<String>> = demo.steps.iter().map(|s| key_object(s, objects)).collect();
    let bound = keys.clone();
    for i in 0..keys.len() {
        if bound[i].is_some() {
            continue;
        }
        let prev = bound[..i].iter().rev().flatten().next().cloned();
        let next = bound[i + 1..].iter().flatten().next().cloned();
        let released = lib.resolve(&demo.steps[i].skill).is_ok_and(|s| s.status_signature == ObjectStatus::Released);
        // Releases close the preceding block; anything else opens the next one.
        keys[i] = if released { prev.or(next) } else { next };
    }
    let first = keys.iter().position(Option::is_some).ok_or(PlannerError::NoEnvObjects)?;
    let last = keys.iter().rposition(Option::is_some).expect("some key exists");
    let mut blocks: Vec<TemplateBlock> = Vec::new();
    for (i, step) in demo.steps.iter().enumerate().take(last + 1).skip(first) {
        let key = keys[i].clone().unwrap_or_else(|| blocks.last().map(|b| b.key_object.clone()).unwrap_or_default());
        match blocks.last_mut() {
            Some(b) if b.key_object == key => b.steps.push(step.clone()),
            _ => blocks.push(TemplateBlock {
                class: class_of(objects, &key).expect("keys are scene objects"),
                key_object: key,
                steps: vec![step.clone()],
            }),
        }
    }
    Ok(PlanTemplate {
        prologue: demo.steps[..first].to_vec(),
        blocks,
        epilogue: demo.steps[last + 1..].to_vec(),
        library: demo.grounded_library.clone(),
        domain: demo.domain.clone(),
        demo_objects: demo.objects.clone(),
        demo_id: String::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub demo_plan: String,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub steps: Vec<SkillStep>,
    pub library: SkillLibrary,
    pub domain: PddlDomain,
    pub objects: Vec<SceneObject>,
    pub goal: Vec<Atom>,
    pub provenance: Provenance,
}

impl TaskPlan {
    pub fn validate(&self) -> Result<ValidationReport, PlannerError> {
        let ground = ground_steps(&self.steps, &self.domain)?;
        Ok(validate_plan(&self.domain, &initial_state(), &ground, &self.goal))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn substitute(step: &SkillStep, map: &BTreeMap<String, String>, scene: &SceneConfig) -> SkillStep {
    let sub = |v: &Option<String>| v.as_ref().map(|x| map.get(x).cloned().unwrap_or_else(|| x.clone()));
    let mut out = SkillStep { target: sub(&step.target), env: sub(&step.env), span: None, ..step.clone() };
    if let (Some(d), Some(env)) = (out.params.get_mut("direction"), out.env.as_ref().and_then(|e| scene.object(e))) {
        if let Some(o) = &env.opening {
            *d = o.clone();
        }
    }
    out
}

/// Instantiate the template for a scene without checking the result.
pub fn instantiate_template(template: &PlanTemplate, scene: &SceneConfig) -> Result<TaskPlan, PlannerError> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    // Unsequenced demo objects (cable, bottle) map to the scene object of the same class.
    for o in template.demo_objects.iter().filter(|o| !o.class.is_sequenced()) {
        if let Some(s) = scene.objects.iter().find(|s| s.class == o.class) {
            map.insert(o.id.clone(), s.id.clone());
        }
    }
    let mut steps: Vec<SkillStep> = template.prologue.iter().map(|s| substitute(s, &map, scene)).collect();
    for id in &scene.ordering {
        let class = scene.object(id).map(|o| o.class).ok_or_else(|| PlannerError::InvalidScene(format!("unknown object `{id}`")))?;
        let block = template.block_for(class).ok_or(PlannerError::NoBlockForClass(class))?;
        let mut m = map.clone();
        m.insert(block.key_object.clone(), id.clone());
        steps.extend(block.steps.iter().map(|s| substitute(s, &m, scene)));
    }
    steps.extend(template.epilogue.iter().map(|s| substitute(s, &map, scene)));
    Ok(TaskPlan {
        steps,
        library: template.library.clone(),
        domain: template.domain.clone(),
        objects: scene.objects.clone(),
        goal: scene.goal(),
        provenance: Provenance { demo_plan: template.demo_id.clone(), scene: scene.id.clone() },
    })
}

/// Plan for a new scene; the result always validates against the goal.
pub fn plan_new_task(template: &PlanTemplate, scene: &SceneConfig) -> Result<TaskPlan, PlannerError> {
    scene.validate()?;
    let plan = instantiate_template(template, scene)?;
    let report = plan.validate()?;
    if !report.goal_satisfied {
        return Err(PlannerError::ValidationFailed(Box::new(report)));
    }
    Ok(plan)
}

/// Convert a ground action of a translated domain back into a step.
pub fn step_from_ground(domain: &PddlDomain, g: &crate::pddl::GroundAction) -> SkillStep {
    let mut s = SkillStep::new(g.name.clone(), None, None);
    if let Some(a) = domain.action(&g.name) {
        for (p, v) in a.parameters.iter().zip(&g.args) {
            match p.name.as_str() {
                crate::pddl::TARGET_VAR => s.target = Some(v.clone()),
                crate::pddl::ENV_VAR => s.env = Some(v.clone()),
                crate::pddl::DIRECTION_VAR => {
                    s.params.insert("direction".into(), v.clone());
                }
                crate::pddl::POSE_VAR => {
                    s.params.insert("pose".into(), v.clone());
                }
                other => {
                    s.params.insert(other.into(), v.clone());
                }
            }
        }
    }
    s
}

/// Effect atom a skill's resistance condition stands for, if any.
pub fn effect_atom(lib: &SkillLibrary, step: &SkillStep) -> Option<Atom> {
    let skill = lib.resolve(&step.skill).ok()?;
    skill.success.threshold()?;
    let mut args = vec![step.target.clone()?];
    if skill.env_slot.is_some() {
        args.push(step.env.clone()?);
    }
    Some(Atom { predicate: participle(&skill.action), args })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnError {
    RetryRelaxed,
    Skip,
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExecutionPolicy {
    pub on_error: OnError,
    pub relax_factor: f64,
    pub max_retries: u32,
}

impl Default for ExecutionPolicy {
    fn default() -> Self {
        Self { on_error: OnError::RetryRelaxed, relax_factor: 1.2, max_retries: 1 }
    }
}

impl ExecutionPolicy {
    pub fn abort() -> Self {
        Self { on_error: OnError::Abort, ..Self::default() }
    }
}

/// Loosen a resistance condition: `Below` thresholds grow, `Above` shrink.
pub fn relax(condition: &ConditionExpr, factor: f64) -> ConditionExpr {
    match condition.threshold() {
        Some(th) => condition.with_threshold(match th.comparison {
            Comparison::Below => th.value * factor,
            Comparison::Above => th.value / factor,
        }),
        None => condition.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub ret: SkillReturn,
    /// Simulated or wall time spent, seconds.
    pub elapsed: f64,
    /// Resistance samples with step-local timestamps.
    #[serde(default)]
    pub trace: Vec<ResistanceSample>,
}

/// Anything that can run skill steps against a success condition.
pub trait Executor {
    fn execute(&mut self, step: &SkillStep, condition: &ConditionExpr) -> StepOutcome;
    /// Physically achieved effect atoms so far.
    fn achieved(&self) -> Vec<Atom>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "code")]
pub enum StepStatus {
    Success,
    Error(ErrorCode),
    Skipped(ErrorCode),
    NotExecuted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: SkillStep,
    pub status: StepStatus,
    pub retries: u32,
    pub elapsed: f64,
    /// Threshold in force on the final attempt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecResult {
    pub steps: Vec<StepRecord>,
    /// No step ended in an error after policy handling.
    pub executable: bool,
    /// Every goal atom physically achieved.
    pub task_success: bool,
    pub achieved: Vec<Atom>,
    pub trace: ResistanceTrace,
}

impl ExecResult {
    pub fn total_retries(&self) -> u32 {
        self.steps.iter().map(|s| s.retries).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

pub fn execute_with_feedback(plan: &TaskPlan, executor: &mut dyn Executor, policy: &ExecutionPolicy) -> ExecResult {
    let mut records = Vec::with_capacity(plan.steps.len());
    let mut samples: Vec<ResistanceSample> = Vec::new();
    let mut clock = 0.0;
    let mut executable = true;
    let mut stopped = false;
    for step in &plan.steps {
        if stopped {
            records.push(StepRecord { step: step.clone(), status: StepStatus::NotExecuted, retries: 0, elapsed: 0.0, threshold: None });
            continue;
        }
        let env_class = step.env.as_deref().and_then(|e| class_of(&plan.objects, e));
        let mut condition = match plan.library.resolve(&step.skill) {
            Ok(s) => s.success_for_class(env_class),
            Err(_) => {
                executable = false;
                stopped = policy.on_error == OnError::Abort;
                let status = if policy.on_error == OnError::Skip {
                    StepStatus::Skipped(ErrorCode::UnknownAction)
                } else {
                    StepStatus::Error(ErrorCode::UnknownAction)
                };
                records.push(StepRecord { step: step.clone(), status, retries: 0, elapsed: 0.0, threshold: None });
                continue;
            }
        };
        let mut retries = 0;
        let mut elapsed = 0.0;
        let status = loop {
            let out = executor.execute(step, &condition);
            samples.extend(out.trace.iter().map(|s| ResistanceSample { timestamp: clock + s.timestamp, ..*s }));
            clock += out.elapsed.max(out.trace.last().map_or(0.0, |s| s.timestamp + 0.01));
            elapsed += out.elapsed;
            match out.ret {
                SkillReturn::Success => break StepStatus::Success,
                SkillReturn::Error(code) => match policy.on_error {
                    OnError::RetryRelaxed if retries < policy.max_retries => {
                        retries += 1;
                        condition = relax(&condition, policy.relax_factor);
                    }
                    OnError::Skip => break StepStatus::Skipped(code),
                    OnError::Abort => {
                        stopped = true;
                        break StepStatus::Error(code);
                    }
                    OnError::RetryRelaxed => break StepStatus::Error(code),
                },
            }
        };
        if status != StepStatus::Success {
            executable = false;
        }
        records.push(StepRecord { step: step.clone(), status, retries, elapsed, threshold: condition.threshold().map(|t| t.value) });
    }
    let achieved = executor.achieved();
    let task_success = plan.goal.iter().all(|g| achieved.contains(g));
    let mut trace = ResistanceTrace::default();
    // Retried attempts can repeat timestamps only if an executor reports zero elapsed time.
    for s in samples {
        if trace.samples.last().is_none_or(|l| s.timestamp > l.timestamp) {
            trace.samples.push(s);
        }
    }
    ExecResult { steps: records, executable, task_success, achieved, trace }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::build_demo_plan;
    use crate::pddl::translate_library;
    use crate::skill_model::build_builtin_libraries;

    fn obj(id: &str, class: ObjectClass) -> SceneObject {
        SceneObject { id: id.into(), class, position: [0.0; 3], opening: Some("downward".into()) }
    }

    fn cable_block(clip: &str) -> Vec<SkillStep> {
        vec![
            SkillStep::new("move_object", Some("cable"), Some(clip)),
            SkillStep::new("grasp", Some("cable"), None),
            SkillStep::new("stretch", Some("cable"), None),
            SkillStep::new("insert", Some("cable"), Some(clip)).with_param("direction", "downward"),
            SkillStep::new("open_hand", Some("cable"), None),
        ]
    }

    fn cable_demo() -> DemoTaskPlan {
        let lib = build_builtin_libraries()["cable"].clone();
        let domain = translate_library(&lib).unwrap();
        let mut steps = cable_block("c5");
        steps.extend(cable_block("u2"));
        let objects = [obj("cable", ObjectClass::Cable), obj("c5", ObjectClass::ClipC), obj("u2", ObjectClass::ClipU)];
        let g = BTreeMap::from([("insert@clip_U".to_string(), 2.5), ("insert@clip_C".to_string(), 4.5), ("stretch".to_string(), 9.5)]);
        build_demo_plan(&lib, &domain, steps, &g, "", &objects).unwrap()
    }

    fn cable_scene(clips: &[(&str, ObjectClass)]) -> SceneConfig {
        let mut objects = vec![obj("cable", ObjectClass::Cable)];
        objects.extend(clips.iter().map(|(id, c)| obj(id, *c)));
        SceneConfig {
            id: "s".into(),
            task: Task::CableMounting,
            objects,
            ordering: clips.iter().map(|(id, _)| id.to_string()).collect(),
            seed: 0,
        }
    }

    fn names(steps: &[SkillStep]) -> Vec<&str> {
        steps.iter().map(|s| s.skill.as_str()).collect()
    }

    #[test]
    fn cable_template_has_two_class_blocks() {
        let t = extract_template(&cable_demo()).unwrap();
        assert!(t.prologue.is_empty() && t.epilogue.is_empty());
        assert_eq!(t.blocks.len(), 2);
        assert_eq!(t.blocks[0].class, ObjectClass::ClipC);
        assert_eq!(t.blocks[1].class, ObjectClass::ClipU);
        for b in &t.blocks {
            assert_eq!(names(&b.steps), ["move_object", "grasp", "stretch", "insert", "open_hand"]);
        }
    }

    #[test]
    fn cap_template_block() {
        let lib = build_builtin_libraries()["cap"].clone();
        let domain = translate_library(&lib).unwrap();
        let steps = vec![
            SkillStep::new("move_object", Some("cap1"), None),
            SkillStep::new("grasp", Some("cap1"), None),
            SkillStep::new("tighten", Some("cap1"), Some("bottle1")),
            SkillStep::new("release", Some("cap1"), None),
        ];
        let objects = [obj("cap1", ObjectClass::CapInner), obj("bottle1", ObjectClass::Bottle)];
        let demo = build_demo_plan(&lib, &domain, steps, &BTreeMap::new(), "", &objects).unwrap();
        let t = extract_template(&demo).unwrap();
        assert_eq!(t.blocks.len(), 1);
        assert_eq!(t.blocks[0].class, ObjectClass::CapInner);
        assert_eq!(names(&t.blocks[0].steps), ["move_object", "grasp", "tighten", "release"]);

        let scene = SceneConfig {
            id: "cap".into(),
            task: Task::CapTightening,
            objects: vec![obj("ci", ObjectClass::CapInner), obj("co", ObjectClass::CapOuter), obj("b", ObjectClass::Bottle)],
            ordering: vec!["ci".into(), "co".into()],
            seed: 0,
        };
        let plan = plan_new_task(&t, &scene).unwrap();
        assert_eq!(plan.steps.iter().filter(|s| s.skill == "tighten").count(), 2);
        assert_eq!(plan.steps[6].env.as_deref(), Some("b"));
        assert_eq!(plan.steps[6].target.as_deref(), Some("co"));
    }

    #[test]
    fn three_clip_scene_instantiates_per_class() {
        let t = extract_template(&cable_demo()).unwrap();
        let scene = cable_scene(&[("c1", ObjectClass::ClipU), ("c2", ObjectClass::ClipU), ("c3", ObjectClass::ClipC)]);
        let plan = plan_new_task(&t, &scene).unwrap();
        assert_eq!(plan.steps.len(), 15);
        let envs: Vec<_> = plan.steps.iter().filter(|s| s.skill == "insert").map(|s| s.env.clone().unwrap()).collect();
        assert_eq!(envs, ["c1", "c2", "c3"]);
        let insert = plan.library.resolve("insert").unwrap();
        assert_eq!(insert.success_for_class(Some(ObjectClass::ClipC)).threshold().unwrap().value, 4.5);
        assert_eq!(insert.success_for_class(Some(ObjectClass::ClipU)).threshold().unwrap().value, 2.5);
        assert!(plan.validate().unwrap().goal_satisfied);
    }

    #[test]
    fn empty_scene_gives_empty_plan() {
        let t = extract_template(&cable_demo()).unwrap();
        let plan = plan_new_task(&t, &cable_scene(&[])).unwrap();
        assert!(plan.steps.is_empty());
    }

    #[test]
    fn permuting_ordering_permutes_blocks() {
        let t = extract_template(&cable_demo()).unwrap();
        let a = plan_new_task(&t, &cable_scene(&[("x", ObjectClass::ClipU), ("y", ObjectClass::ClipC)])).unwrap();
        let b = plan_new_task(&t, &cable_scene(&[("y", ObjectClass::ClipC), ("x", ObjectClass::ClipU)])).unwrap();
        assert_eq!(a.steps[..5], b.steps[5..]);
        assert_eq!(a.steps[5..], b.steps[..5]);
    }

    #[test]
    fn no_sequenced_objects_in_demo() {
        let lib = build_builtin_libraries()["cable"].clone();
        let domain = translate_library(&lib).unwrap();
        let steps = vec![SkillStep::new("grasp", Some("cable"), None)];
        let demo = build_demo_plan(&lib, &domain, steps, &BTreeMap::new(), "", &[obj("cable", ObjectClass::Cable)]).unwrap();
        assert!(matches!(extract_template(&demo), Err(PlannerError::NoEnvObjects)));
    }

    #[test]
    fn missing_block_class() {
        let mut demo = cable_demo();
        demo.steps.truncate(5);
        let t = extract_template(&demo).unwrap();
        let mut scene = cable_scene(&[("k", ObjectClass::ClipU)]);
        scene.task = Task::CapTightening;
        scene.objects.push(obj("cap", ObjectClass::CapInner));
        scene.objects.push(obj("b", ObjectClass::Bottle));
        scene.ordering = vec!["cap".into()];
        assert!(matches!(instantiate_template(&t, &scene), Err(PlannerError::NoBlockForClass(ObjectClass::CapInner))));
    }

    /// Returns scripted results per skill name, then Success.
    struct Scripted {
        faults: BTreeMap<String, Vec<SkillReturn>>,
        seen: Vec<(String, Option<f64>)>,
        achieved: Vec<Atom>,
        lib: SkillLibrary,
    }

    impl Executor for Scripted {
        fn execute(&mut self, step: &SkillStep, condition: &ConditionExpr) -> StepOutcome {
            self.seen.push((step.skill.clone(), condition.threshold().map(|t| t.value)));
            let ret = self.faults.get_mut(&step.skill).and_then(|v| (!v.is_empty()).then(|| v.remove(0))).unwrap_or(SkillReturn::Success);
            if ret == SkillReturn::Success {
                self.achieved.extend(effect_atom(&self.lib, step));
            }
            StepOutcome { ret, elapsed: 0.5, trace: vec![ResistanceSample { timestamp: 0.0, force: 1.0, torque: 0.0 }] }
        }

        fn achieved(&self) -> Vec<Atom> {
            self.achieved.clone()
        }
    }

    fn scripted(plan: &TaskPlan, faults: &[(&str, SkillReturn)]) -> Scripted {
        let mut map: BTreeMap<String, Vec<SkillReturn>> = BTreeMap::new();
        for (k, v) in faults {
            map.entry(k.to_string()).or_default().push(*v);
        }
        Scripted { faults: map, seen: vec![], achieved: vec![], lib: plan.library.clone() }
    }

    fn one_clip_plan() -> TaskPlan {
        let t = extract_template(&cable_demo()).unwrap();
        plan_new_task(&t, &cable_scene(&[("k", ObjectClass::ClipU)])).unwrap()
    }

    #[test]
    fn all_success() {
        let plan = one_clip_plan();
        let mut ex = scripted(&plan, &[]);
        let r = execute_with_feedback(&plan, &mut ex, &ExecutionPolicy::default());
        assert!(r.executable && r.task_success);
        assert_eq!(r.total_retries(), 0);
        assert_eq!(r.trace.samples.len(), 5);
    }

    #[test]
    fn retry_relaxes_threshold_once() {
        let plan = one_clip_plan();
        let before = plan.clone();
        let mut ex = scripted(&plan, &[("insert", SkillReturn::Error(ErrorCode::TorqueLimit))]);
        let r = execute_with_feedback(&plan, &mut ex, &ExecutionPolicy::default());
        assert!(r.executable);
        let insert = &r.steps[3];
        assert_eq!(insert.retries, 1);
        assert!((insert.threshold.unwrap() - 2.5 * 1.2).abs() < 1e-12);
        let seen: Vec<_> = ex.seen.iter().filter(|(n, _)| n == "insert").map(|(_, t)| t.unwrap()).collect();
        assert_eq!(seen.len(), 2);
        assert!((seen[1] - 3.0).abs() < 1e-12);
        assert_eq!(plan, before);
    }

    #[test]
    fn above_thresholds_relax_downward() {
        let c = ConditionExpr::ResistanceForceAbove { threshold: 12.0 };
        assert_eq!(relax(&c, 1.2), ConditionExpr::ResistanceForceAbove { threshold: 10.0 });
    }

    #[test]
    fn abort_marks_suffix_not_executed() {
        let plan = one_clip_plan();
        let mut ex = scripted(&plan, &[("stretch", SkillReturn::Error(ErrorCode::TorqueLimit))]);
        let r = execute_with_feedback(&plan, &mut ex, &ExecutionPolicy::abort());
        assert!(!r.executable && !r.task_success);
        assert_eq!(r.steps[2].status, StepStatus::Error(ErrorCode::TorqueLimit));
        assert!(r.steps[3..].iter().all(|s| s.status == StepStatus::NotExecuted));
        assert_eq!(ex.seen.len(), 3);
    }

    #[test]
    fn skip_continues() {
        let plan = one_clip_plan();
        let mut ex = scripted(&plan, &[("stretch", SkillReturn::Error(ErrorCode::TorqueLimit))]);
        let policy = ExecutionPolicy { on_error: OnError::Skip, ..Default::default() };
        let r = execute_with_feedback(&plan, &mut ex, &policy);
        assert!(!r.executable);
        assert!(r.task_success);
        assert_eq!(r.steps[2].status, StepStatus::Skipped(ErrorCode::TorqueLimit));
        assert_eq!(ex.seen.len(), 5);
    }
}
