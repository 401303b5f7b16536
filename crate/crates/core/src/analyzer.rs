//! Bootstrapped demonstration analysis: key frames, skill inference and the
//! demonstration task plan.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ftsig::{self, FtError, GroundingParams, ResistanceTrace, WrenchTrace};
use crate::pddl::{self, emit, validate_plan, Atom, GroundAction, PddlDomain, PddlError, TypedParam, ValidationReport, WorldState};
use crate::skill_model::{ObjectClass, ObjectStatus, ParamValue, Skill, SkillError, SkillLibrary};
use crate::tactile::{segment_sequence, Segment, SegmentParams, TactileError, TactileSequence};

/// Reasoner output recorded for the cable mounting demonstration.
pub const CABLE_DEMO_TRANSCRIPT: &str = include_str!("../fixtures/cable_demo_transcript.txt");

const KEYFRAME_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum AnalyzerError {
    #[error("no scene annotation within {KEYFRAME_TOLERANCE} s of t = {0:.3} s")]
    CoverageGap(f64),
    #[error("no skill in the library matches status `{0}`")]
    NoMatchingSkill(ObjectStatus),
    #[error("transcript line {line}: {message}")]
    TranscriptParse { line: usize, message: String },
    #[error("remote backend unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("skill sequence does not validate (first failure at step {:?})", .0.first_failure())]
    InvalidSequence(Box<ValidationReport>),
    #[error("step {index}: {message}")]
    InvalidStep { index: usize, message: String },
    #[error("no key frames to reason over")]
    NoKeyFrames,
    #[error(transparent)]
    Pddl(#[from] PddlError),
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error(transparent)]
    Tactile(#[from] TactileError),
    #[error(transparent)]
    Ft(#[from] FtError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    let d = sub(a, b);
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub class: ObjectClass,
    pub position: Vec3,
    /// Opening direction symbol, e.g. `downward`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opening: Option<String>,
}

/// Symbolic stand-in for a camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub timestamp: f64,
    pub ee_position: Vec3,
    pub holding: bool,
    pub objects: Vec<SceneObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyFrame {
    pub timestamp: f64,
    /// End of the interval this frame opens.
    pub t_end: f64,
    /// `None` when status annotations are withheld.
    pub status: Option<ObjectStatus>,
    pub scene: SceneAnnotation,
    /// End-effector displacement over the interval.
    pub motion: Vec3,
    pub caption: String,
}

fn caption(status: Option<ObjectStatus>, scene: &SceneAnnotation) -> String {
    let mut s = String::new();
    if let Some(st) = status {
        let _ = write!(s, "status: {st}; ");
    }
    let _ = write!(
        s,
        "end effector at ({:.3}, {:.3}, {:.3}); hand {}",
        scene.ee_position[0],
        scene.ee_position[1],
        scene.ee_position[2],
        if scene.holding { "closed" } else { "open" }
    );
    for o in &scene.objects {
        let _ = write!(s, "; {} ({}) at ({:.3}, {:.3}, {:.3})", o.id, o.class, o.position[0], o.position[1], o.position[2]);
        if let Some(d) = &o.opening {
            let _ = write!(s, " opening {d}");
        }
    }
    s
}

/// One demonstration: task metadata, the embedded scene stream and paths to
/// the tactile JSONL and wrench CSV files (relative to the record file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub task_description: String,
    /// Skill library class (`cable` or `cap`).
    pub library: String,
    pub tactile: String,
    pub wrench: String,
    pub scene: Vec<SceneAnnotation>,
}

impl DemoRecord {
    pub fn objects(&self) -> &[SceneObject] {
        self.scene.first().map_or(&[], |s| &s.objects)
    }

    /// Scene sample nearest to `t`, if within the key-frame tolerance.
    pub fn scene_at(&self, t: f64) -> Option<&SceneAnnotation> {
        let i = self.scene.partition_point(|s| s.timestamp < t);
        let mut best: Option<&SceneAnnotation> = None;
        for s in self.scene[i.saturating_sub(1)..(i + 1).min(self.scene.len())].iter() {
            if best.is_none_or(|b| (s.timestamp - t).abs() < (b.timestamp - t).abs()) {
                best = Some(s);
            }
        }
        best.filter(|s| (s.timestamp - t).abs() <= KEYFRAME_TOLERANCE + 1e-9)
    }

    /// Last scene sample at or before `t`.
    fn scene_until(&self, t: f64) -> Option<&SceneAnnotation> {
        let i = self.scene.partition_point(|s| s.timestamp <= t + 1e-9);
        i.checked_sub(1).map(|i| &self.scene[i])
    }
}

/// A demonstration with its streams loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoData {
    pub record: DemoRecord,
    pub tactile: TactileSequence,
    pub wrench: WrenchTrace,
}

impl DemoData {
    /// Write `demo.json`, `tactile.jsonl` and `wrench.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, AnalyzerError> {
        std::fs::create_dir_all(dir)?;
        let mut record = self.record.clone();
        record.tactile = "tactile.jsonl".into();
        record.wrench = "wrench.csv".into();
        self.tactile.save(&dir.join(&record.tactile))?;
        self.wrench.save(&dir.join(&record.wrench))?;
        let path = dir.join("demo.json");
        std::fs::write(&path, serde_json::to_string_pretty(&record)? + "\n")?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self, AnalyzerError> {
        let record: DemoRecord = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let tactile = TactileSequence::load(&base.join(&record.tactile))?;
        let wrench = WrenchTrace::load(&base.join(&record.wrench))?;
        Ok(Self { record, tactile, wrench })
    }
}

/// One key frame per segment, scene sampled at the key timestamp.
pub fn annotate_keyframes(demo: &DemoRecord, segments: &[Segment]) -> Result<Vec<KeyFrame>, AnalyzerError> {
    segments.iter().map(|seg| keyframe(demo, seg.key_timestamp, seg.t_end, Some(seg.status))).collect()
}

fn keyframe(demo: &DemoRecord, t: f64, t_end: f64, status: Option<ObjectStatus>) -> Result<KeyFrame, AnalyzerError> {
    let scene = demo.scene_at(t).ok_or(AnalyzerError::CoverageGap(t))?.clone();
    let end = demo.scene_until(t_end).unwrap_or(&scene);
    let motion = sub(end.ee_position, scene.ee_position);
    Ok(KeyFrame { timestamp: t, t_end, status, caption: caption(status, &scene), scene, motion })
}

/// `n` key frames at uniform intervals over `[t0, t1)`, without statuses.
pub fn uniform_keyframes(demo: &DemoRecord, t0: f64, t1: f64, n: usize) -> Result<Vec<KeyFrame>, AnalyzerError> {
    let step = (t1 - t0) / n.max(1) as f64;
    (0..n)
        .map(|i| {
            let t = t0 + i as f64 * step;
            let t = demo.scene_at(t).map_or(t, |s| s.timestamp);
            keyframe(demo, t, t0 + (i + 1) as f64 * step, None)
        })
        .collect()
}

pub fn strip_statuses(keyframes: &[KeyFrame]) -> Vec<KeyFrame> {
    keyframes.iter().map(|k| KeyFrame { status: None, caption: caption(None, &k.scene), ..k.clone() }).collect()
}

/// One inferred or planned skill invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillStep {
    pub skill: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
    #[serde(default)]
    pub reason: String,
    /// Demonstration time span the step was inferred from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<[f64; 2]>,
}

impl SkillStep {
    pub fn new(skill: impl Into<String>, target: Option<&str>, env: Option<&str>) -> Self {
        Self {
            skill: skill.into(),
            target: target.map(Into::into),
            env: env.map(Into::into),
            params: BTreeMap::new(),
            reason: String::new(),
            span: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: &str) -> Self {
        self.params.insert(key.into(), value.into());
        self
    }

    /// Same skill with the same bindings.
    pub fn same_action(&self, other: &SkillStep) -> bool {
        self.skill == other.skill && self.target == other.target && self.env == other.env && self.params == other.params
    }

    /// Arguments in transcript order: target, direction, env, pose.
    pub fn args(&self) -> Vec<&str> {
        let mut out = Vec::new();
        out.extend(self.target.as_deref());
        out.extend(self.params.get("direction").map(String::as_str));
        out.extend(self.env.as_deref());
        out.extend(self.params.get("pose").map(String::as_str));
        out
    }

    pub fn to_sexpr(&self) -> String {
        let mut s = format!("({}", self.skill);
        for a in self.args() {
            s.push(' ');
            s.push_str(a);
        }
        s.push(')');
        s
    }

    /// Ground action for a translated domain; parameters are matched by
    /// variable name (`o` target, `d` direction, `e` env, `p` pose).
    pub fn ground(&self, domain: &PddlDomain) -> Result<GroundAction, PddlError> {
        let action = domain.action(&self.skill).ok_or_else(|| PddlError::UnknownAction(self.skill.clone()))?;
        let args = action
            .parameters
            .iter()
            .map(|p| {
                let v = match p.name.as_str() {
                    pddl::TARGET_VAR => self.target.as_ref(),
                    pddl::ENV_VAR => self.env.as_ref(),
                    pddl::DIRECTION_VAR => self.params.get("direction"),
                    pddl::POSE_VAR => self.params.get("pose"),
                    other => self.params.get(other),
                };
                v.cloned().ok_or_else(|| PddlError::MissingBinding(p.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(GroundAction::new(self.skill.clone(), args))
    }

    /// Move positional arguments into the slots the skill actually declares.
    pub fn normalize(mut self, lib: &SkillLibrary) -> Self {
        let Ok(skill) = lib.resolve(&self.skill) else { return self };
        let has_pose = skill.params.values().any(|v| matches!(v, ParamValue::Pose(_)));
        if skill.env_slot.is_none() {
            if let Some(e) = self.env.take() {
                if has_pose {
                    self.params.entry("pose".into()).or_insert(e);
                } else if self.target.is_none() {
                    self.target = Some(e);
                }
            }
        }
        self
    }
}

/// Merge runs of adjacent steps with the same action and bindings.
pub fn collapse_steps(steps: Vec<SkillStep>) -> Vec<SkillStep> {
    let mut out: Vec<SkillStep> = Vec::new();
    for s in steps {
        match out.last_mut() {
            Some(prev) if prev.same_action(&s) => {
                if let (Some(a), Some(b)) = (prev.span, s.span) {
                    prev.span = Some([a[0], b[1]]);
                }
            }
            _ => out.push(s),
        }
    }
    out
}

/// Fill missing targets with the most recent bound target (or `default`).
pub fn complete_targets(steps: Vec<SkillStep>, default: Option<&str>) -> Vec<SkillStep> {
    let mut current = default.map(str::to_string);
    steps
        .into_iter()
        .map(|mut s| {
            match &s.target {
                Some(t) => current = Some(t.clone()),
                None => s.target = current.clone(),
            }
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub frame: u32,
    /// Seconds of day.
    pub timestamp: f64,
    pub step: SkillStep,
}

fn parse_time(s: &str) -> Option<f64> {
    let mut it = s.trim().split(':');
    let h: u32 = it.next()?.parse().ok()?;
    let m: u32 = it.next()?.parse().ok()?;
    let sec: f64 = it.next()?.parse().ok()?;
    if it.next().is_some() || m >= 60 || !(0.0..60.0).contains(&sec) {
        return None;
    }
    Some(f64::from(h) * 3600.0 + f64::from(m) * 60.0 + sec)
}

pub fn format_time(t: f64) -> String {
    let ms = (t * 1000.0).round() as u64;
    format!("{:02}:{:02}:{:02}.{:03}", ms / 3_600_000, ms / 60_000 % 60, ms / 1000 % 60, ms % 1000)
}

fn parse_line(line: &str) -> Result<TranscriptEntry, String> {
    let rest = line.strip_prefix("Frame").ok_or("expected `Frame`")?.trim_start();
    let (num, rest) = rest.split_once('(').ok_or("expected `(timestamp)`")?;
    let frame: u32 = num.trim().parse().map_err(|_| format!("bad frame number `{}`", num.trim()))?;
    let (ts, rest) = rest.split_once(')').ok_or("unclosed timestamp")?;
    let timestamp = parse_time(ts).ok_or_else(|| format!("bad timestamp `{ts}`"))?;
    let rest = rest.trim_start().strip_prefix(':').ok_or("expected `:` after timestamp")?.trim_start();
    let body = rest.strip_prefix('(').ok_or("expected `(skill ...)`")?;
    let (call, rest) = body.split_once(')').ok_or("unclosed skill expression")?;
    let mut toks = call.split_whitespace();
    let skill = toks.next().ok_or("empty skill expression")?.to_string();
    let args: Vec<&str> = toks.collect();
    let reason = match rest.trim().strip_prefix(';') {
        Some(r) => r.trim().to_string(),
        None if rest.trim().is_empty() => String::new(),
        None => return Err("expected `;` before reason".into()),
    };
    let mut step = SkillStep { skill, reason, ..SkillStep::new("", None, None) };
    match args.as_slice() {
        [] => {}
        [t] => step.target = Some(t.to_string()),
        [t, e] => {
            step.target = Some(t.to_string());
            step.env = Some(e.to_string());
        }
        [t, d, e] => {
            step.target = Some(t.to_string());
            step.params.insert("direction".into(), d.to_string());
            step.env = Some(e.to_string());
        }
        [t, d, e, p] => {
            step.target = Some(t.to_string());
            step.params.insert("direction".into(), d.to_string());
            step.env = Some(e.to_string());
            step.params.insert("pose".into(), p.to_string());
        }
        _ => return Err(format!("too many arguments ({})", args.len())),
    }
    Ok(TranscriptEntry { frame, timestamp, step })
}

/// Parse `Frame N (HH:MM:SS.mmm): (skill arg ...) ; reason` lines, ordered by
/// frame number.
pub fn parse_transcript_entries(text: &str) -> Result<Vec<TranscriptEntry>, AnalyzerError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let e = parse_line(line).map_err(|message| AnalyzerError::TranscriptParse { line: i + 1, message })?;
        out.push(e);
    }
    if out.is_empty() {
        return Err(AnalyzerError::TranscriptParse { line: 1, message: "no frame entries".into() });
    }
    out.sort_by_key(|e| e.frame);
    Ok(out)
}

pub fn parse_reasoner_transcript(text: &str) -> Result<Vec<SkillStep>, AnalyzerError> {
    Ok(parse_transcript_entries(text)?.into_iter().map(|e| e.step).collect())
}

/// Inverse of [`parse_reasoner_transcript`]; missing timestamps print as zero.
pub fn format_transcript(steps: &[SkillStep], timestamps: &[f64]) -> String {
    let mut s = String::new();
    for (i, step) in steps.iter().enumerate() {
        let t = timestamps.get(i).copied().unwrap_or(0.0);
        let _ = write!(s, "Frame {} ({}): {}", i + 1, format_time(t), step.to_sexpr());
        if !step.reason.is_empty() {
            let _ = write!(s, " ; {}", step.reason);
        }
        s.push_str("\n\n");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Deterministic,
    Remote,
}

pub trait ReasonerBackend {
    fn capability(&self) -> Capability;
    fn infer(&self, domain: &PddlDomain, keyframes: &[KeyFrame], task_description: &str) -> Result<Vec<SkillStep>, AnalyzerError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    /// Minimum end-effector travel toward an object to count as a move.
    pub min_motion: f64,
    /// Acceptance radius for binding the nearest object.
    pub radius: f64,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self { min_motion: 0.02, radius: 0.10 }
    }
}

/// Deterministic reasoner reading statuses and motion off the key frames.
#[derive(Debug, Clone)]
pub struct RuleBased {
    pub lib: SkillLibrary,
    pub params: RuleParams,
}

impl RuleBased {
    pub fn new(lib: SkillLibrary) -> Self {
        Self { lib, params: RuleParams::default() }
    }

    fn is_target(&self, o: &SceneObject) -> bool {
        o.class.family() == self.lib.object_class
    }

    fn nearest<'a>(&self, objects: &'a [SceneObject], at: Vec3, filter: impl Fn(&SceneObject) -> bool) -> Option<&'a SceneObject> {
        objects
            .iter()
            .filter(|o| o.class != ObjectClass::Cable && filter(o))
            .map(|o| (dist(o.position, at), o))
            .filter(|(d, _)| *d <= self.params.radius)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, o)| o)
    }

    fn first(&self, status: ObjectStatus, holding: bool) -> Result<&Skill, AnalyzerError> {
        self.lib.find_by_signature(status, holding).into_iter().next().ok_or(AnalyzerError::NoMatchingSkill(status))
    }

    pub fn infer_steps(&self, domain: &PddlDomain, keyframes: &[KeyFrame]) -> Result<Vec<SkillStep>, AnalyzerError> {
        if keyframes.is_empty() {
            return Err(AnalyzerError::NoKeyFrames);
        }
        let mut current: Option<String> = keyframes[0].scene.objects.iter().find(|o| self.is_target(o)).map(|o| o.id.clone());
        let mut steps = Vec::new();
        for kf in keyframes {
            let scene = &kf.scene;
            let span = Some([kf.timestamp, kf.t_end]);
            let holding = scene.holding;
            let target = current.clone();
            let mut step = match kf.status {
                Some(ObjectStatus::Idle) | None => {
                    let end = add(scene.ee_position, kf.motion);
                    let Some(obj) = self.nearest(&scene.objects, end, |_| true) else { continue };
                    let to = sub(obj.position, scene.ee_position);
                    let len = dist(obj.position, scene.ee_position);
                    let toward = if len > 0.0 { (kf.motion[0] * to[0] + kf.motion[1] * to[1] + kf.motion[2] * to[2]) / len } else { 0.0 };
                    if toward < self.params.min_motion {
                        continue;
                    }
                    let candidates = self.lib.find_by_signature(ObjectStatus::Idle, false);
                    let evidence = match kf.status {
                        Some(_) => "the tactile status is idle",
                        None => "no tactile status is available",
                    };
                    let reason = format!("Because the end effector moved {:.1} cm toward {} and {evidence}.", toward * 100.0, obj.id);
                    if self.is_target(obj) {
                        let skill =
                            candidates.iter().find(|s| s.env_slot.is_none()).ok_or(AnalyzerError::NoMatchingSkill(ObjectStatus::Idle))?;
                        current = Some(obj.id.clone());
                        SkillStep { reason, ..SkillStep::new(&skill.name, Some(&obj.id), None) }
                    } else {
                        let skill =
                            candidates.iter().find(|s| s.env_slot.is_some()).ok_or(AnalyzerError::NoMatchingSkill(ObjectStatus::Idle))?;
                        SkillStep { reason, ..SkillStep::new(&skill.name, target.as_deref(), Some(&obj.id)) }
                    }
                }
                Some(ObjectStatus::Grasped) => {
                    let skill = self.first(ObjectStatus::Grasped, holding)?;
                    let reason =
                        format!("Because the tactile status indicates that the {} is grasped.", target.as_deref().unwrap_or("object"));
                    SkillStep { reason, ..SkillStep::new(&skill.name, target.as_deref(), None) }
                }
                Some(ObjectStatus::Released) => {
                    let skill = self.first(ObjectStatus::Released, holding)?;
                    let reason = format!("Because the tactile status indicates the {} is released.", target.as_deref().unwrap_or("object"));
                    SkillStep { reason, ..SkillStep::new(&skill.name, target.as_deref(), None) }
                }
                Some(status @ (ObjectStatus::LinearForce | ObjectStatus::Torque)) => {
                    if !holding {
                        continue;
                    }
                    let skill = self.first(status, true)?;
                    let name = target.as_deref().unwrap_or("object");
                    let mut step = SkillStep::new(&skill.name, target.as_deref(), None);
                    if skill.env_slot.is_some() {
                        let Some(env) = self.nearest(&scene.objects, scene.ee_position, |o| !self.is_target(o)) else {
                            continue;
                        };
                        step.env = Some(env.id.clone());
                        if let Some((key, default)) = skill.params.iter().find_map(|(k, v)| match v {
                            ParamValue::Direction(d) => Some((k, d)),
                            _ => None,
                        }) {
                            step.params.insert(key.clone(), env.opening.clone().unwrap_or_else(|| default.clone()));
                        }
                        step.reason = format!("Because the tactile status indicates the {name} is {status}, near {}.", env.id);
                    } else {
                        step.reason = format!("Because the tactile status indicates the {name} is {status}.");
                    }
                    step
                }
                Some(ObjectStatus::Ambiguous) => continue,
            };
            if domain.action(&step.skill).is_none() {
                return Err(PddlError::UnknownAction(step.skill).into());
            }
            step.span = span;
            steps.push(step);
        }
        Ok(collapse_steps(steps))
    }
}

impl ReasonerBackend for RuleBased {
    fn capability(&self) -> Capability {
        Capability::Deterministic
    }

    fn infer(&self, domain: &PddlDomain, keyframes: &[KeyFrame], _task_description: &str) -> Result<Vec<SkillStep>, AnalyzerError> {
        self.infer_steps(domain, keyframes)
    }
}

/// Replays a fixed transcript regardless of input.
#[derive(Debug, Clone)]
pub struct TranscriptReasoner {
    pub transcript: String,
    pub lib: SkillLibrary,
}

fn finish_transcript(text: &str, lib: &SkillLibrary, domain: &PddlDomain, keyframes: &[KeyFrame]) -> Result<Vec<SkillStep>, AnalyzerError> {
    let steps = parse_reasoner_transcript(text)?;
    let default = keyframes
        .first()
        .and_then(|k| k.scene.objects.iter().find(|o| o.class.family() == lib.object_class))
        .map(|o| o.id.as_str())
        .or(Some(lib.object_class.as_str()));
    let steps = complete_targets(steps.into_iter().map(|s| s.normalize(lib)).collect(), default);
    for (index, s) in steps.iter().enumerate() {
        if domain.action(&s.skill).is_none() {
            return Err(AnalyzerError::InvalidStep { index, message: format!("unknown action `{}`", s.skill) });
        }
    }
    Ok(collapse_steps(steps))
}

impl ReasonerBackend for TranscriptReasoner {
    fn capability(&self) -> Capability {
        Capability::Deterministic
    }

    fn infer(&self, domain: &PddlDomain, keyframes: &[KeyFrame], _task_description: &str) -> Result<Vec<SkillStep>, AnalyzerError> {
        finish_transcript(&self.transcript, &self.lib, domain, keyframes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    #[serde(default)]
    pub key: Option<String>,
    pub model: String,
    pub retries: u32,
    pub timeout_secs: u64,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self { endpoint: endpoint.into(), key: None, model: "gpt-4o".into(), retries: 2, timeout_secs: 60 }
    }

    /// From `ANALYZER_ENDPOINT` / `ANALYZER_KEY` (and optional `ANALYZER_MODEL`).
    pub fn from_env() -> Result<Self, AnalyzerError> {
        let endpoint =
            std::env::var("ANALYZER_ENDPOINT").map_err(|_| AnalyzerError::RemoteUnavailable("ANALYZER_ENDPOINT is not set".into()))?;
        let mut cfg = Self::new(endpoint);
        cfg.key = std::env::var("ANALYZER_KEY").ok();
        if let Ok(m) = std::env::var("ANALYZER_MODEL") {
            cfg.model = m;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Serialize, Deserialize, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat messages for skill reasoning over key frames.
pub fn build_messages(domain: &PddlDomain, keyframes: &[KeyFrame], task_description: &str) -> Vec<ChatMessage> {
    let msg = |role: &str, content: String| ChatMessage { role: role.into(), content };
    let mut frames = String::new();
    for (i, k) in keyframes.iter().enumerate() {
        let _ = writeln!(frames, "Frame {} ({}): {}", i + 1, format_time(k.timestamp), k.caption);
    }
    vec![
        msg(
            "system",
            "You are reasoning about robot skills and skill parameters at each frame of a video step by step. \
             Skill has to be selected from the following skill library."
                .into(),
        ),
        msg("user", format!("The skill library as a PDDL domain:\n{}", emit(domain))),
        msg(
            "user",
            format!(
                "Reason which skill in the skill library the robot performs at each frame. \
                 Below are key frames from the video to be described.\n{task_description}\n{frames}\
                 Format your reasoning as strings strictly in 'frame number(timestamp): skill and reason' format. \
                 For example, Frame 1 (19:35:27.208): (move_object cable clip2) ; Because the robot is moving the cable to clip2\n\
                 Consider the annotated object status and also the robot movement in your reasoning."
            ),
        ),
    ]
}

/// Chat-completions client; the response content is parsed as a transcript.
#[derive(Debug, Clone)]
pub struct RemoteReasoner {
    pub config: RemoteConfig,
    pub lib: SkillLibrary,
}

impl RemoteReasoner {
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<String, AnalyzerError> {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(self.config.timeout_secs))).build().into();
        let body = serde_json::json!({ "model": self.config.model, "messages": messages });
        let mut last = String::new();
        for _ in 0..=self.config.retries {
            let mut req = agent.post(&self.config.endpoint);
            if let Some(k) = &self.config.key {
                req = req.header("Authorization", &format!("Bearer {k}"));
            }
            match req.send_json(&body) {
                Ok(mut resp) => {
                    let v: serde_json::Value =
                        resp.body_mut().read_json().map_err(|e| AnalyzerError::RemoteUnavailable(format!("bad response body: {e}")))?;
                    let content = v["choices"][0]["message"]["content"].as_str().unwrap_or_default();
                    return Ok(content.to_string());
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(AnalyzerError::RemoteUnavailable(last))
    }
}

impl ReasonerBackend for RemoteReasoner {
    fn capability(&self) -> Capability {
        Capability::Remote
    }

    fn infer(&self, domain: &PddlDomain, keyframes: &[KeyFrame], task_description: &str) -> Result<Vec<SkillStep>, AnalyzerError> {
        let content = self.complete(&build_messages(domain, keyframes, task_description))?;
        finish_transcript(&content, &self.lib, domain, keyframes)
    }
}

/// PDDL type of a scene object in translated domains.
pub fn object_type(class: ObjectClass) -> &'static str {
    match class.family() {
        "cable" | "cap" => "object",
        _ => "env_object",
    }
}

/// Typed object universe for a scene: objects plus every direction and pose
/// symbol the steps, the openings or the library defaults mention.
pub fn typed_universe(objects: &[SceneObject], steps: &[SkillStep], lib: &SkillLibrary) -> Vec<TypedParam> {
    let mut out: Vec<TypedParam> = objects.iter().map(|o| TypedParam::new(o.id.clone(), object_type(o.class))).collect();
    let mut push = |name: &str, ty: &str| {
        if !out.iter().any(|p| p.name == name && p.ty == ty) {
            out.push(TypedParam::new(name, ty));
        }
    };
    for o in objects {
        if let Some(d) = &o.opening {
            push(d, "direction");
        }
    }
    for s in lib.flatten().skills {
        for v in s.params.values() {
            match v {
                ParamValue::Direction(d) => push(d, "direction"),
                ParamValue::Pose(p) => push(p, "pose"),
                _ => {}
            }
        }
    }
    for s in steps {
        if let Some(d) = s.params.get("direction") {
            push(d, "direction");
        }
        if let Some(p) = s.params.get("pose") {
            push(p, "pose");
        }
    }
    out
}

pub fn initial_state() -> WorldState {
    WorldState::new([Atom::nullary("hand_open")])
}

pub fn ground_steps(steps: &[SkillStep], domain: &PddlDomain) -> Result<Vec<GroundAction>, AnalyzerError> {
    steps
        .iter()
        .enumerate()
        .map(|(index, s)| s.ground(domain).map_err(|e| AnalyzerError::InvalidStep { index, message: e.to_string() }))
        .collect()
}

/// Validated demonstration skill sequence with its grounded library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoTaskPlan {
    pub steps: Vec<SkillStep>,
    pub grounded_library: SkillLibrary,
    pub domain: PddlDomain,
    pub task_description: String,
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub groundings: BTreeMap<String, f64>,
}

impl DemoTaskPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn build_demo_plan(
    lib: &SkillLibrary,
    domain: &PddlDomain,
    steps: Vec<SkillStep>,
    groundings: &BTreeMap<String, f64>,
    task_description: &str,
    objects: &[SceneObject],
) -> Result<DemoTaskPlan, AnalyzerError> {
    let ground = ground_steps(&steps, domain)?;
    let report = validate_plan(domain, &initial_state(), &ground, &[]);
    if !report.all_steps_ok() {
        return Err(AnalyzerError::InvalidSequence(Box::new(report)));
    }
    Ok(DemoTaskPlan {
        steps,
        grounded_library: ftsig::update_library(lib, groundings)?,
        domain: domain.clone(),
        task_description: task_description.into(),
        objects: objects.to_vec(),
        groundings: groundings.clone(),
    })
}

/// Fit thresholds for every step whose skill has a resistance condition,
/// keyed `skill` or `skill@env_class`; repeated keys are averaged.
pub fn ground_from_steps(
    lib: &SkillLibrary,
    steps: &[SkillStep],
    objects: &[SceneObject],
    trace: &ResistanceTrace,
    post_window: f64,
    params: &GroundingParams,
) -> Result<BTreeMap<String, f64>, AnalyzerError> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for step in steps {
        let skill = lib.resolve(&step.skill)?;
        let (Some(th), Some([t0, t1])) = (skill.success.threshold(), step.span) else { continue };
        let seg = Segment { status: skill.status_signature, t_start: t0, t_end: t1, key_timestamp: t0 };
        let value = ftsig::ground_threshold(trace, &seg, post_window, th.comparison, th.channel, params)?;
        let class = match (&skill.env_slot, &step.env) {
            (Some(_), Some(e)) => objects.iter().find(|o| &o.id == e).map(|o| o.class),
            _ => None,
        };
        let entry = acc.entry(ftsig::grounding_key(&skill.name, class)).or_insert((0.0, 0));
        entry.0 += value;
        entry.1 += 1;
    }
    Ok(acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "frames")]
pub enum KeyframeMode {
    /// Key frames at status changes with statuses.
    Segments,
    /// Key frames at status changes, statuses withheld.
    SegmentsNoStatus,
    /// Uniformly sampled frames, statuses withheld.
    Uniform(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub keyframes: KeyframeMode,
    /// Fit thresholds from the wrench trace.
    pub ground: bool,
    pub segment: SegmentParams,
    pub grounding: GroundingParams,
    pub post_window: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            keyframes: KeyframeMode::Segments,
            ground: true,
            segment: SegmentParams::default(),
            grounding: GroundingParams::default(),
            post_window: 1.0,
        }
    }
}

/// Full analysis of one demonstration.
pub fn analyze_demo(
    demo: &DemoData,
    lib: &SkillLibrary,
    backend: &dyn ReasonerBackend,
    options: &AnalysisOptions,
) -> Result<DemoTaskPlan, AnalyzerError> {
    let domain = pddl::translate_library(lib)?;
    let segments = segment_sequence(&demo.tactile, &options.segment)?;
    let keyframes = match options.keyframes {
        KeyframeMode::Segments => annotate_keyframes(&demo.record, &segments)?,
        KeyframeMode::SegmentsNoStatus => strip_statuses(&annotate_keyframes(&demo.record, &segments)?),
        KeyframeMode::Uniform(n) => {
            let t0 = segments.first().map_or(0.0, |s| s.t_start);
            let t1 = segments.last().map_or(0.0, |s| s.t_end);
            uniform_keyframes(&demo.record, t0, t1, n)?
        }
    };
    let steps = backend.infer(&domain, &keyframes, &demo.record.task_description)?;
    let objects = demo.record.objects();
    let groundings = if options.ground {
        let trace = demo.wrench.resistance_trace()?;
        ground_from_steps(lib, &steps, objects, &trace, options.post_window, &options.grounding)?
    } else {
        BTreeMap::new()
    };
    build_demo_plan(lib, &domain, steps, &groundings, &demo.record.task_description, objects)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::translate_library;
    use crate::skill_model::{build_builtin_libraries, ConditionExpr};

    fn names(steps: &[SkillStep]) -> Vec<&str> {
        steps.iter().map(|s| s.skill.as_str()).collect()
    }

    #[test]
    fn transcript_frame_five() {
        let line = "Frame 5 (19:22:52.891): (insert cable downward clip1) ; Because the cable is under torque.";
        let e = &parse_transcript_entries(line).unwrap()[0];
        assert_eq!(e.frame, 5);
        assert!((e.timestamp - (19.0 * 3600.0 + 22.0 * 60.0 + 52.891)).abs() < 1e-9);
        assert_eq!(e.step.skill, "insert");
        assert_eq!(e.step.target.as_deref(), Some("cable"));
        assert_eq!(e.step.env.as_deref(), Some("clip1"));
        assert_eq!(e.step.params["direction"], "downward");
    }

    #[test]
    fn transcript_frame_two_and_errors() {
        let s = &parse_reasoner_transcript("Frame 2 (19:22:39.539): (grasp cable) ; Because ...").unwrap()[0];
        assert_eq!((s.skill.as_str(), s.target.as_deref(), s.env.as_deref()), ("grasp", Some("cable"), None));
        let e = parse_reasoner_transcript("\nFrame X: hello").unwrap_err();
        assert!(matches!(e, AnalyzerError::TranscriptParse { line: 2, .. }), "{e}");
        assert!(matches!(parse_reasoner_transcript(""), Err(AnalyzerError::TranscriptParse { .. })));
    }

    #[test]
    fn bundled_transcript_collapses_to_five_steps() {
        let steps = parse_reasoner_transcript(CABLE_DEMO_TRANSCRIPT).unwrap();
        assert_eq!(steps.len(), 8);
        let collapsed = collapse_steps(steps);
        assert_eq!(names(&collapsed), ["move_object", "grasp", "stretch", "insert", "open_hand"]);
    }

    #[test]
    fn transcript_round_trip() {
        let steps = vec![
            SkillStep { reason: "Because idle.".into(), ..SkillStep::new("move_object", Some("cable"), Some("clip1")) },
            SkillStep::new("grasp", Some("cable"), None),
            SkillStep::new("insert", Some("cable"), Some("clip1")).with_param("direction", "downward"),
            SkillStep::new("open_hand", None, None),
        ];
        let text = format_transcript(&steps, &[1.5, 2.25]);
        assert_eq!(parse_reasoner_transcript(&text).unwrap(), steps);
        assert_eq!(format_time(19.0 * 3600.0 + 22.0 * 60.0 + 52.891), "19:22:52.891");
    }

    fn obj(id: &str, class: ObjectClass, p: Vec3) -> SceneObject {
        SceneObject { id: id.into(), class, position: p, opening: None }
    }

    fn kf(status: Option<ObjectStatus>, ee: Vec3, motion: Vec3, holding: bool, objects: &[SceneObject]) -> KeyFrame {
        let scene = SceneAnnotation { timestamp: 0.0, ee_position: ee, holding, objects: objects.to_vec() };
        KeyFrame { timestamp: 0.0, t_end: 1.0, status, caption: caption(status, &scene), scene, motion }
    }

    fn cable_frames() -> Vec<KeyFrame> {
        use ObjectStatus::*;
        let mut clip = obj("clip1", ObjectClass::ClipU, [0.3, 0.0, 0.0]);
        clip.opening = Some("downward".into());
        let objects = [obj("cable", ObjectClass::Cable, [0.0, 0.0, 0.0]), clip];
        let at = [0.3, 0.0, 0.02];
        vec![
            kf(Some(Idle), [0.0, 0.0, 0.0], [0.3, 0.0, 0.02], false, &objects),
            kf(Some(Grasped), at, [0.0; 3], false, &objects),
            kf(Some(LinearForce), at, [0.0; 3], true, &objects),
            kf(Some(Torque), at, [0.0; 3], true, &objects),
            kf(Some(Torque), at, [0.0; 3], true, &objects),
            kf(Some(Released), at, [0.0; 3], true, &objects),
        ]
    }

    #[test]
    fn rule_based_cable_sequence() {
        let lib = build_builtin_libraries()["cable"].clone();
        let domain = translate_library(&lib).unwrap();
        let steps = RuleBased::new(lib).infer_steps(&domain, &cable_frames()).unwrap();
        assert_eq!(names(&steps), ["move_object", "grasp", "stretch", "insert", "open_hand"]);
        assert_eq!(steps[0].env.as_deref(), Some("clip1"));
        assert_eq!(steps[3].env.as_deref(), Some("clip1"));
        assert_eq!(steps[3].params["direction"], "downward");
        assert!(steps[2].reason.contains("under linear force"));
        assert!(steps.iter().all(|s| s.target.as_deref() == Some("cable")));
    }

    #[test]
    fn rule_based_cap_sequence() {
        use ObjectStatus::*;
        let lib = build_builtin_libraries()["cap"].clone();
        let domain = translate_library(&lib).unwrap();
        let objects = [obj("cap1", ObjectClass::CapInner, [0.3, 0.0, 0.1]), obj("bottle1", ObjectClass::Bottle, [0.3, 0.0, 0.05])];
        let at = [0.3, 0.0, 0.1];
        let frames = vec![
            kf(Some(Idle), [0.0, 0.0, 0.1], [0.3, 0.0, 0.0], false, &objects),
            kf(Some(Grasped), at, [0.0; 3], false, &objects),
            kf(Some(Torque), at, [0.0; 3], true, &objects),
            kf(Some(Released), at, [0.0; 3], true, &objects),
        ];
        let steps = RuleBased::new(lib).infer_steps(&domain, &frames).unwrap();
        assert_eq!(names(&steps), ["move_object", "grasp", "tighten", "release"]);
        assert_eq!(steps[2].target.as_deref(), Some("cap1"));
        assert_eq!(steps[2].env.as_deref(), Some("bottle1"));
    }

    #[test]
    fn stripped_statuses_give_no_grasp_or_stretch() {
        let lib = build_builtin_libraries()["cable"].clone();
        let domain = translate_library(&lib).unwrap();
        let steps = RuleBased::new(lib).infer_steps(&domain, &strip_statuses(&cable_frames())).unwrap();
        assert!(!steps.iter().any(|s| s.skill == "grasp" || s.skill == "stretch"));
        assert_eq!(names(&steps), ["move_object"]);
    }

    #[test]
    fn missing_signature_is_an_error() {
        let mut lib = build_builtin_libraries()["cable"].clone();
        lib.skills.retain(|s| s.name != "stretch");
        lib.parent.as_mut().unwrap().skills.retain(|s| s.name != "push");
        let domain = translate_library(&lib).unwrap();
        let e = RuleBased::new(lib).infer_steps(&domain, &cable_frames()).unwrap_err();
        assert!(matches!(e, AnalyzerError::NoMatchingSkill(ObjectStatus::LinearForce)), "{e}");
    }

    fn record(times: &[f64]) -> DemoRecord {
        DemoRecord {
            task_description: String::new(),
            library: "cable".into(),
            tactile: String::new(),
            wrench: String::new(),
            scene: times
                .iter()
                .map(|&t| SceneAnnotation { timestamp: t, ee_position: [t, 0.0, 0.0], holding: false, objects: vec![] })
                .collect(),
        }
    }

    #[test]
    fn keyframes_take_nearest_sample() {
        let times: Vec<f64> = (0..=70).map(|i| i as f64 * 0.1).collect();
        let rec = record(&times);
        let seg = |a: f64, b: f64| Segment { status: ObjectStatus::Idle, t_start: a, t_end: b, key_timestamp: a };
        let kfs = annotate_keyframes(&rec, &[seg(0.0, 2.03), seg(2.03, 4.0)]).unwrap();
        assert_eq!(kfs.len(), 2);
        assert!((kfs[1].scene.timestamp - 2.0).abs() < 1e-9);
        assert!((kfs[0].motion[0] - 2.0).abs() < 1e-9);
        let e = annotate_keyframes(&rec, &[seg(8.0, 9.0)]).unwrap_err();
        assert!(matches!(e, AnalyzerError::CoverageGap(t) if t == 8.0));
    }

    fn transcript_plan(groundings: &BTreeMap<String, f64>) -> Result<DemoTaskPlan, AnalyzerError> {
        let lib = build_builtin_libraries()["cable"].clone();
        let domain = translate_library(&lib).unwrap();
        let mut clip = obj("clip1", ObjectClass::ClipU, [0.3, 0.0, 0.0]);
        clip.opening = Some("downward".into());
        let objects = [obj("cable", ObjectClass::Cable, [0.0; 3]), clip];
        let reasoner = TranscriptReasoner { transcript: CABLE_DEMO_TRANSCRIPT.into(), lib: lib.clone() };
        let frames = [kf(None, [0.0; 3], [0.0; 3], false, &objects)];
        let steps = reasoner.infer(&domain, &frames, "").unwrap();
        build_demo_plan(&lib, &domain, steps, groundings, "mount the cable", &objects)
    }

    #[test]
    fn demo_plan_from_transcript_with_groundings() {
        let g = BTreeMap::from([("stretch".to_string(), 9.5), ("insert".to_string(), 2.5)]);
        let plan = transcript_plan(&g).unwrap();
        assert_eq!(names(&plan.steps), ["move_object", "grasp", "stretch", "insert", "open_hand"]);
        assert_eq!(plan.steps[4].target.as_deref(), Some("cable"));
        let lib = &plan.grounded_library;
        assert_eq!(lib.resolve("insert").unwrap().success, ConditionExpr::ResistanceForceBelow { threshold: 2.5 });
        assert_eq!(lib.resolve("stretch").unwrap().success, ConditionExpr::ResistanceForceAbove { threshold: 9.5 });
        let plain = transcript_plan(&BTreeMap::new()).unwrap();
        assert_eq!(plain.grounded_library.resolve("insert").unwrap().success, ConditionExpr::ResistanceForceBelow { threshold: 5.0 });
    }

    #[test]
    fn invalid_sequence_is_rejected() {
        let lib = build_builtin_libraries()["cable"].clone();
        let domain = translate_library(&lib).unwrap();
        let steps = vec![SkillStep::new("stretch", Some("cable"), None), SkillStep::new("grasp", Some("cable"), None)];
        let e = build_demo_plan(&lib, &domain, steps, &BTreeMap::new(), "", &[]).unwrap_err();
        match e {
            AnalyzerError::InvalidSequence(r) => assert_eq!(r.first_failure(), Some(0)),
            other => panic!("{other}"),
        }
    }
}
