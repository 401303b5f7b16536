//! Object-centric skills and layered skill libraries.
//!
//! A skill is the tuple (target object, contextual object, precondition,
//! success condition, action, return) plus a parameter map. Libraries are
//! layered: an object-specific library shadows skills of its general parent.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Interaction status of the manipulated object, as read from tactile data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectStatus {
    Idle,
    Grasped,
    Released,
    LinearForce,
    Torque,
    Ambiguous,
}

impl ObjectStatus {
    /// Statuses that may appear in a finalized segmentation.
    pub const DEFINITE: [ObjectStatus; 5] =
        [ObjectStatus::Idle, ObjectStatus::Grasped, ObjectStatus::Released, ObjectStatus::LinearForce, ObjectStatus::Torque];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectStatus::Idle => "idle",
            ObjectStatus::Grasped => "grasped",
            ObjectStatus::Released => "released",
            ObjectStatus::LinearForce => "under linear force",
            ObjectStatus::Torque => "under torque",
            ObjectStatus::Ambiguous => "ambiguous",
        }
    }
}

impl fmt::Display for ObjectStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Concrete object classes that appear in task scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectClass {
    #[serde(rename = "cable")]
    Cable,
    #[serde(rename = "clip_U")]
    ClipU,
    #[serde(rename = "clip_C")]
    ClipC,
    #[serde(rename = "cap_inner")]
    CapInner,
    #[serde(rename = "cap_outer")]
    CapOuter,
    #[serde(rename = "bottle")]
    Bottle,
}

impl ObjectClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectClass::Cable => "cable",
            ObjectClass::ClipU => "clip_U",
            ObjectClass::ClipC => "clip_C",
            ObjectClass::CapInner => "cap_inner",
            ObjectClass::CapOuter => "cap_outer",
            ObjectClass::Bottle => "bottle",
        }
    }

    /// Library-level class this concrete class belongs to.
    pub fn family(self) -> &'static str {
        match self {
            ObjectClass::Cable => "cable",
            ObjectClass::ClipU | ObjectClass::ClipC => "clip",
            ObjectClass::CapInner | ObjectClass::CapOuter => "cap",
            ObjectClass::Bottle => "bottle",
        }
    }

    /// Objects a task visits one after another (clips, caps).
    pub fn is_sequenced(self) -> bool {
        matches!(self, ObjectClass::ClipU | ObjectClass::ClipC | ObjectClass::CapInner | ObjectClass::CapOuter)
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "cable" => ObjectClass::Cable,
            "clip_U" | "clip_u" => ObjectClass::ClipU,
            "clip_C" | "clip_c" => ObjectClass::ClipC,
            "cap_inner" => ObjectClass::CapInner,
            "cap_outer" => ObjectClass::CapOuter,
            "bottle" => ObjectClass::Bottle,
            _ => return None,
        })
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Slot names understood inside conditions.
pub const TARGET_SLOT: &str = "target";
pub const ENV_SLOT: &str = "env";

pub const FORCE_THRESHOLD_KEY: &str = "force_threshold";
pub const TORQUE_THRESHOLD_KEY: &str = "torque_threshold";

/// Precondition / success-condition expression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionExpr {
    GripperHolding {
        object: String,
    },
    /// `pose` names a pose parameter, or one of the slots `target` / `env`.
    PoseReached {
        pose: String,
        tolerance: f64,
    },
    ResistanceForceBelow {
        threshold: f64,
    },
    ResistanceForceAbove {
        threshold: f64,
    },
    ResistanceTorqueAbove {
        threshold: f64,
    },
    ResistanceTorqueBelow {
        threshold: f64,
    },
    And {
        terms: Vec<ConditionExpr>,
    },
    Not {
        inner: Box<ConditionExpr>,
    },
}

/// Which resistance channel a threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Force,
    Torque,
}

/// Direction of a threshold comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Below,
    Above,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRef {
    pub channel: Channel,
    pub comparison: Comparison,
    pub value: f64,
}

impl ThresholdRef {
    pub fn key(&self) -> &'static str {
        match self.channel {
            Channel::Force => FORCE_THRESHOLD_KEY,
            Channel::Torque => TORQUE_THRESHOLD_KEY,
        }
    }

    /// Does a resistance reading satisfy this threshold?
    pub fn satisfied_by(&self, force: f64, torque: f64) -> bool {
        let v = match self.channel {
            Channel::Force => force,
            Channel::Torque => torque,
        };
        match self.comparison {
            Comparison::Below => v < self.value,
            Comparison::Above => v > self.value,
        }
    }
}

impl ConditionExpr {
    pub fn holding_target() -> Self {
        ConditionExpr::GripperHolding { object: TARGET_SLOT.into() }
    }

    pub fn hand_open() -> Self {
        ConditionExpr::Not { inner: Box::new(Self::holding_target()) }
    }

    pub fn resistance(channel: Channel, comparison: Comparison, threshold: f64) -> Self {
        match (channel, comparison) {
            (Channel::Force, Comparison::Below) => ConditionExpr::ResistanceForceBelow { threshold },
            (Channel::Force, Comparison::Above) => ConditionExpr::ResistanceForceAbove { threshold },
            (Channel::Torque, Comparison::Below) => ConditionExpr::ResistanceTorqueBelow { threshold },
            (Channel::Torque, Comparison::Above) => ConditionExpr::ResistanceTorqueAbove { threshold },
        }
    }

    /// The first resistance threshold in this expression, if any.
    pub fn threshold(&self) -> Option<ThresholdRef> {
        let r = |channel, comparison, value: &f64| Some(ThresholdRef { channel, comparison, value: *value });
        match self {
            ConditionExpr::ResistanceForceBelow { threshold } => r(Channel::Force, Comparison::Below, threshold),
            ConditionExpr::ResistanceForceAbove { threshold } => r(Channel::Force, Comparison::Above, threshold),
            ConditionExpr::ResistanceTorqueBelow { threshold } => r(Channel::Torque, Comparison::Below, threshold),
            ConditionExpr::ResistanceTorqueAbove { threshold } => r(Channel::Torque, Comparison::Above, threshold),
            ConditionExpr::And { terms } => terms.iter().find_map(|t| t.threshold()),
            ConditionExpr::Not { .. } | ConditionExpr::GripperHolding { .. } | ConditionExpr::PoseReached { .. } => None,
        }
    }

    /// Copy with every resistance threshold replaced by `value`.
    pub fn with_threshold(&self, value: f64) -> Self {
        match self {
            ConditionExpr::ResistanceForceBelow { .. } => ConditionExpr::ResistanceForceBelow { threshold: value },
            ConditionExpr::ResistanceForceAbove { .. } => ConditionExpr::ResistanceForceAbove { threshold: value },
            ConditionExpr::ResistanceTorqueBelow { .. } => ConditionExpr::ResistanceTorqueBelow { threshold: value },
            ConditionExpr::ResistanceTorqueAbove { .. } => ConditionExpr::ResistanceTorqueAbove { threshold: value },
            ConditionExpr::And { terms } => ConditionExpr::And { terms: terms.iter().map(|t| t.with_threshold(value)).collect() },
            other => other.clone(),
        }
    }

    /// Whether a precondition can hold given the gripper state.
    ///
    /// Only gripper literals are decided here; pose and resistance terms are
    /// treated as satisfiable.
    pub fn compatible_with_holding(&self, holding: bool) -> bool {
        match self {
            ConditionExpr::GripperHolding { .. } => holding,
            ConditionExpr::Not { inner } => match inner.as_ref() {
                ConditionExpr::GripperHolding { .. } => !holding,
                _ => true,
            },
            ConditionExpr::And { terms } => terms.iter().all(|t| t.compatible_with_holding(holding)),
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<(), SkillError> {
        self.validate_depth(0)
    }

    fn validate_depth(&self, not_depth: usize) -> Result<(), SkillError> {
        match self {
            ConditionExpr::ResistanceForceBelow { threshold }
            | ConditionExpr::ResistanceForceAbove { threshold }
            | ConditionExpr::ResistanceTorqueAbove { threshold }
            | ConditionExpr::ResistanceTorqueBelow { threshold } => {
                if !threshold.is_finite() || *threshold < 0.0 {
                    return Err(SkillError::InvalidCondition(format!("threshold {threshold} must be finite and non-negative")));
                }
                Ok(())
            }
            ConditionExpr::PoseReached { tolerance, .. } => {
                if !tolerance.is_finite() || *tolerance < 0.0 {
                    return Err(SkillError::InvalidCondition(format!("pose tolerance {tolerance} must be finite and non-negative")));
                }
                Ok(())
            }
            ConditionExpr::GripperHolding { .. } => Ok(()),
            ConditionExpr::And { terms } => {
                if terms.is_empty() {
                    return Err(SkillError::InvalidCondition("empty conjunction".into()));
                }
                terms.iter().try_for_each(|t| t.validate_depth(not_depth))
            }
            ConditionExpr::Not { inner } => {
                if not_depth > 0 {
                    return Err(SkillError::InvalidCondition("nested negation".into()));
                }
                inner.validate_depth(not_depth + 1)
            }
        }
    }
}

impl fmt::Display for ConditionExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionExpr::GripperHolding { object } => write!(f, "holding({object})"),
            ConditionExpr::PoseReached { pose, tolerance } => write!(f, "reached({pose}, ±{tolerance} m)"),
            ConditionExpr::ResistanceForceBelow { threshold } => write!(f, "f_r < {threshold} N"),
            ConditionExpr::ResistanceForceAbove { threshold } => write!(f, "f_r > {threshold} N"),
            ConditionExpr::ResistanceTorqueAbove { threshold } => write!(f, "tau_r > {threshold} N·m"),
            ConditionExpr::ResistanceTorqueBelow { threshold } => write!(f, "tau_r < {threshold} N·m"),
            ConditionExpr::And { terms } => {
                f.write_str("(")?;
                for (i, t) in terms.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" and ")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
            ConditionExpr::Not { inner } => write!(f, "not {inner}"),
        }
    }
}

/// Typed skill parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ParamValue {
    Threshold(f64),
    Tolerance(f64),
    Direction(String),
    Pose(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Threshold(v) | ParamValue::Tolerance(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_symbol(&self) -> Option<&str> {
        match self {
            ParamValue::Direction(s) | ParamValue::Pose(s) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    TorqueLimit,
    PreconditionFailed,
    UnknownAction,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorCode::TorqueLimit => "torque_limit",
            ErrorCode::PreconditionFailed => "precondition_failed",
            ErrorCode::UnknownAction => "unknown_action",
        })
    }
}

/// Skill return R.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "r", content = "code", rename_all = "snake_case")]
pub enum SkillReturn {
    Success,
    Error(ErrorCode),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub name: String,
    /// O_t: class family of the manipulated object.
    pub target: String,
    /// O_e: class family of the contextual object, if the skill takes one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_slot: Option<String>,
    /// A: opaque action id interpreted by the executor.
    pub action: String,
    /// C_p
    pub pre: ConditionExpr,
    /// C_s
    pub success: ConditionExpr,
    /// P
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    /// Error codes this skill may return besides success.
    #[serde(default)]
    pub errors: Vec<ErrorCode>,
    /// Object status expected while the skill runs.
    pub status_signature: ObjectStatus,
}

impl Skill {
    /// Threshold P key for a given contextual class, e.g. `force_threshold@clip_C`.
    pub fn class_key(base: &str, env_class: &str) -> String {
        format!("{base}@{env_class}")
    }

    /// Success condition specialised to a contextual object class.
    pub fn success_for_class(&self, env_class: Option<ObjectClass>) -> ConditionExpr {
        let Some(th) = self.success.threshold() else {
            return self.success.clone();
        };
        let value = env_class
            .and_then(|c| self.params.get(&Self::class_key(th.key(), c.as_str())))
            .or_else(|| self.params.get(th.key()))
            .and_then(ParamValue::as_f64)
            .unwrap_or(th.value);
        self.success.with_threshold(value)
    }

    /// Copy with a grounded threshold installed, either as the base value or as
    /// a per-class override.
    pub fn with_grounding(&self, env_class: Option<&str>, value: f64) -> Result<Skill, SkillError> {
        let th = self.success.threshold().ok_or_else(|| SkillError::NoThreshold(self.name.clone()))?;
        let mut out = self.clone();
        match env_class {
            None => {
                out.success = self.success.with_threshold(value);
                out.params.insert(th.key().into(), ParamValue::Threshold(value));
            }
            Some(class) => {
                out.params.insert(Self::class_key(th.key(), class), ParamValue::Threshold(value));
            }
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), SkillError> {
        self.pre.validate()?;
        self.success.validate()?;
        if self.status_signature == ObjectStatus::Ambiguous {
            return Err(SkillError::InvalidSkill(format!("{}: ambiguous status signature", self.name)));
        }
        if let Some(th) = self.success.threshold() {
            if !self.params.contains_key(th.key()) {
                return Err(SkillError::InvalidSkill(format!("{}: success threshold without parameter `{}`", self.name, th.key())));
            }
        }
        for (k, v) in &self.params {
            if let ParamValue::Threshold(x) | ParamValue::Tolerance(x) = v {
                if !x.is_finite() || *x < 0.0 {
                    return Err(SkillError::InvalidSkill(format!("{}: parameter {k} = {x}", self.name)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkillError {
    #[error("unknown skill `{0}`")]
    UnknownSkill(String),
    #[error("duplicate skill `{0}` in library")]
    DuplicateSkill(String),
    #[error("invalid condition: {0}")]
    InvalidCondition(String),
    #[error("invalid skill: {0}")]
    InvalidSkill(String),
    #[error("skill `{0}` has no resistance threshold to ground")]
    NoThreshold(String),
}

/// A skill library for one object class, optionally layered on a parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillLibrary {
    pub object_class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<Box<SkillLibrary>>,
    pub skills: Vec<Skill>,
}

impl SkillLibrary {
    pub fn new(object_class: impl Into<String>, parent: Option<SkillLibrary>, skills: Vec<Skill>) -> Self {
        Self { object_class: object_class.into(), parent: parent.map(Box::new), skills }
    }

    /// Child-first lookup.
    pub fn resolve(&self, name: &str) -> Result<&Skill, SkillError> {
        self.skills
            .iter()
            .find(|s| s.name == name)
            .or_else(|| self.parent.as_ref().and_then(|p| p.resolve(name).ok()))
            .ok_or_else(|| SkillError::UnknownSkill(name.to_string()))
    }

    /// Effective skills, child definitions first, shadowed parent entries dropped.
    pub fn effective_skills(&self) -> Vec<&Skill> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        let mut level = Some(self);
        while let Some(lib) = level {
            for s in &lib.skills {
                if seen.insert(s.name.as_str()) {
                    out.push(s);
                }
            }
            level = lib.parent.as_deref();
        }
        out
    }

    /// Skills whose status signature matches and whose precondition admits the
    /// given gripper state, child before parent.
    pub fn find_by_signature(&self, status: ObjectStatus, holding: bool) -> Vec<&Skill> {
        self.effective_skills().into_iter().filter(|s| s.status_signature == status && s.pre.compatible_with_holding(holding)).collect()
    }

    /// Inheritance-flattened copy: parent skills (minus shadowed) then child skills.
    pub fn flatten(&self) -> SkillLibrary {
        let mut levels = Vec::new();
        let mut level = Some(self);
        while let Some(lib) = level {
            levels.push(lib);
            level = lib.parent.as_deref();
        }
        let mut skills: Vec<Skill> = Vec::new();
        for lib in levels.iter().rev() {
            for s in &lib.skills {
                if let Some(slot) = skills.iter_mut().find(|x| x.name == s.name) {
                    *slot = s.clone();
                } else {
                    skills.push(s.clone());
                }
            }
        }
        SkillLibrary { object_class: self.object_class.clone(), parent: None, skills }
    }

    /// Replace one skill (at whichever level defines it) with `skill`.
    pub fn with_skill_replaced(&self, skill: Skill) -> Result<SkillLibrary, SkillError> {
        let mut out = self.clone();
        if let Some(slot) = out.skills.iter_mut().find(|s| s.name == skill.name) {
            *slot = skill;
            return Ok(out);
        }
        match &self.parent {
            Some(p) => {
                out.parent = Some(Box::new(p.with_skill_replaced(skill)?));
                Ok(out)
            }
            None => Err(SkillError::UnknownSkill(skill.name)),
        }
    }

    pub fn validate(&self) -> Result<(), SkillError> {
        let mut names = BTreeSet::new();
        for s in &self.skills {
            if !names.insert(s.name.as_str()) {
                return Err(SkillError::DuplicateSkill(s.name.clone()));
            }
            s.validate()?;
        }
        if let Some(p) = &self.parent {
            p.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skill library serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn skill(
    name: &str,
    target: &str,
    env_slot: Option<&str>,
    pre: ConditionExpr,
    success: ConditionExpr,
    params: &[(&str, ParamValue)],
    status: ObjectStatus,
) -> Skill {
    let errors = if success.threshold().is_some() { vec![ErrorCode::TorqueLimit] } else { Vec::new() };
    Skill {
        name: name.into(),
        target: target.into(),
        env_slot: env_slot.map(Into::into),
        action: name.into(),
        pre,
        success,
        params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        errors,
        status_signature: status,
    }
}

/// General, object-agnostic skills.
pub fn general_library() -> SkillLibrary {
    use ObjectStatus::*;
    let holding = ConditionExpr::holding_target;
    let open = ConditionExpr::hand_open;
    SkillLibrary::new(
        "general",
        None,
        vec![
            skill(
                "move",
                "object",
                None,
                open(),
                ConditionExpr::PoseReached { pose: "pose".into(), tolerance: 0.01 },
                &[("pose", ParamValue::Pose("home".into())), ("tolerance", ParamValue::Tolerance(0.01))],
                Idle,
            ),
            skill("grasp", "object", None, open(), holding(), &[], Grasped),
            skill("release", "object", None, holding(), open(), &[], Released),
            skill(
                "push",
                "object",
                None,
                holding(),
                ConditionExpr::ResistanceForceAbove { threshold: 5.0 },
                &[(FORCE_THRESHOLD_KEY, ParamValue::Threshold(5.0))],
                LinearForce,
            ),
        ],
    )
}

/// Cable-centric skills over the general library.
pub fn cable_library() -> SkillLibrary {
    use ObjectStatus::*;
    let holding = ConditionExpr::holding_target;
    let open = ConditionExpr::hand_open;
    SkillLibrary::new(
        "cable",
        Some(general_library()),
        vec![
            skill(
                "move_object",
                "cable",
                Some("clip"),
                open(),
                ConditionExpr::PoseReached { pose: ENV_SLOT.into(), tolerance: 0.02 },
                &[("tolerance", ParamValue::Tolerance(0.02))],
                Idle,
            ),
            skill(
                "stretch",
                "cable",
                None,
                holding(),
                ConditionExpr::ResistanceForceAbove { threshold: 10.0 },
                &[(FORCE_THRESHOLD_KEY, ParamValue::Threshold(10.0))],
                LinearForce,
            ),
            skill(
                "insert",
                "cable",
                Some("clip"),
                ConditionExpr::And { terms: vec![holding(), ConditionExpr::PoseReached { pose: ENV_SLOT.into(), tolerance: 0.02 }] },
                ConditionExpr::ResistanceForceBelow { threshold: 5.0 },
                &[
                    (FORCE_THRESHOLD_KEY, ParamValue::Threshold(5.0)),
                    ("force_threshold@clip_C", ParamValue::Threshold(10.0)),
                    ("direction", ParamValue::Direction("downward".into())),
                ],
                Torque,
            ),
            skill("open_hand", "cable", None, holding(), open(), &[], Released),
        ],
    )
}

/// Cap-centric skills over the general library.
pub fn cap_library() -> SkillLibrary {
    use ObjectStatus::*;
    SkillLibrary::new(
        "cap",
        Some(general_library()),
        vec![
            skill(
                "move_object",
                "cap",
                None,
                ConditionExpr::hand_open(),
                ConditionExpr::PoseReached { pose: TARGET_SLOT.into(), tolerance: 0.02 },
                &[("tolerance", ParamValue::Tolerance(0.02))],
                Idle,
            ),
            skill(
                "tighten",
                "cap",
                Some("bottle"),
                ConditionExpr::holding_target(),
                ConditionExpr::ResistanceTorqueAbove { threshold: 0.02 },
                &[(TORQUE_THRESHOLD_KEY, ParamValue::Threshold(0.02))],
                Torque,
            ),
        ],
    )
}

/// The general library plus the `cable` and `cap` libraries, keyed by class.
pub fn build_builtin_libraries() -> BTreeMap<String, SkillLibrary> {
    [general_library(), cable_library(), cap_library()].into_iter().map(|l| (l.object_class.clone(), l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(skills: &[&Skill]) -> Vec<String> {
        skills.iter().map(|s| s.name.clone()).collect()
    }

    #[test]
    fn cable_insert_initial_condition() {
        let libs = build_builtin_libraries();
        let insert = libs["cable"].resolve("insert").unwrap();
        assert_eq!(insert.status_signature, ObjectStatus::Torque);
        assert_eq!(insert.success, ConditionExpr::ResistanceForceBelow { threshold: 5.0 });
        assert_eq!(insert.success_for_class(Some(ObjectClass::ClipC)), ConditionExpr::ResistanceForceBelow { threshold: 10.0 });
    }

    #[test]
    fn cable_move_comes_from_parent() {
        let libs = build_builtin_libraries();
        let mv = libs["cable"].resolve("move").unwrap();
        assert_eq!(mv, libs["general"].resolve("move").unwrap());
    }

    #[test]
    fn cap_tighten_initial_condition() {
        let libs = build_builtin_libraries();
        let t = libs["cap"].resolve("tighten").unwrap();
        assert_eq!(t.success, ConditionExpr::ResistanceTorqueAbove { threshold: 0.02 });
    }

    #[test]
    fn resolve_child_parent_and_missing() {
        let libs = build_builtin_libraries();
        assert_eq!(libs["cable"].resolve("insert").unwrap().target, "cable");
        assert_eq!(libs["cable"].resolve("grasp").unwrap().target, "object");
        assert_eq!(libs["cap"].resolve("stretch").unwrap_err(), SkillError::UnknownSkill("stretch".into()));
    }

    #[test]
    fn shadowing_prefers_child() {
        let mut custom = general_library().skills[1].clone();
        custom.target = "cable".into();
        let lib = SkillLibrary::new("cable", Some(general_library()), vec![custom.clone()]);
        assert_eq!(lib.resolve("grasp").unwrap(), &custom);
        assert_eq!(lib.flatten().skills.iter().filter(|s| s.name == "grasp").count(), 1);
    }

    #[test]
    fn find_by_signature_examples() {
        let libs = build_builtin_libraries();
        let cable = &libs["cable"];
        let cap = &libs["cap"];
        assert_eq!(names(&cable.find_by_signature(ObjectStatus::Torque, true)), ["insert"]);
        assert_eq!(names(&cap.find_by_signature(ObjectStatus::Torque, true)), ["tighten"]);
        assert_eq!(names(&cable.find_by_signature(ObjectStatus::Idle, false)), ["move_object", "move"]);
        assert_eq!(names(&cable.find_by_signature(ObjectStatus::LinearForce, true))[0], "stretch");
        assert_eq!(names(&cable.find_by_signature(ObjectStatus::Released, true))[0], "open_hand");
        assert!(cable.find_by_signature(ObjectStatus::Torque, false).is_empty());
    }

    #[test]
    fn every_active_status_has_a_skill() {
        let libs = build_builtin_libraries();
        for lib in [&libs["cable"], &libs["cap"]] {
            for status in [ObjectStatus::Grasped, ObjectStatus::Released, ObjectStatus::LinearForce, ObjectStatus::Torque] {
                let any = [true, false].iter().any(|h| !lib.find_by_signature(status, *h).is_empty());
                assert!(any, "{} has no skill for {status}", lib.object_class);
            }
        }
    }

    #[test]
    fn builtin_libraries_validate() {
        for lib in build_builtin_libraries().values() {
            lib.validate().unwrap();
            assert!(lib.resolve("move").is_ok());
            assert!(lib.resolve("grasp").is_ok());
        }
    }

    #[test]
    fn condition_validation() {
        assert!(ConditionExpr::ResistanceForceBelow { threshold: -1.0 }.validate().is_err());
        assert!(ConditionExpr::ResistanceForceBelow { threshold: f64::NAN }.validate().is_err());
        assert!(ConditionExpr::And { terms: vec![] }.validate().is_err());
        let nested = ConditionExpr::Not { inner: Box::new(ConditionExpr::hand_open()) };
        assert!(nested.validate().is_err());
        assert!(ConditionExpr::hand_open().validate().is_ok());
    }

    #[test]
    fn grounding_installs_base_and_class_thresholds() {
        let lib = cable_library();
        let insert = lib.resolve("insert").unwrap();
        let base = insert.with_grounding(None, 2.5).unwrap();
        assert_eq!(base.success, ConditionExpr::ResistanceForceBelow { threshold: 2.5 });
        assert_eq!(base.params[FORCE_THRESHOLD_KEY], ParamValue::Threshold(2.5));
        let c = insert.with_grounding(Some("clip_C"), 4.5).unwrap();
        assert_eq!(c.success_for_class(Some(ObjectClass::ClipC)).threshold().unwrap().value, 4.5);
        assert_eq!(c.success_for_class(Some(ObjectClass::ClipU)).threshold().unwrap().value, 5.0);
        assert!(lib.resolve("grasp").unwrap().with_grounding(None, 1.0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let lib = cable_library();
        let back = SkillLibrary::from_json(&lib.to_json()).unwrap();
        assert_eq!(back, lib);
    }
}
