//! Force/torque signal reduction and success-condition grounding.
//!
//! Raw six-axis wrench samples are reduced to the scalar resistance force
//! `f_r` and torque `tau_r` opposing the commanded motion. Thresholds are then
//! fitted from the gap between the tail of an active segment and the window
//! after (or before) it.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::skill_model::{Channel, Comparison, ConditionExpr, ObjectClass, Skill, SkillError, SkillLibrary, ENV_SLOT, TARGET_SLOT};
use crate::tactile::Segment;

#[derive(Debug, Error)]
pub enum FtError {
    #[error("direction {0:?} is not a unit vector")]
    NonUnitDirection([f64; 3]),
    #[error("non-finite wrench component at t = {0}")]
    NonFinite(f64),
    #[error("timestamps must be strictly increasing (index {0})")]
    Unordered(usize),
    #[error("no condition template for action `{0}`")]
    NoTemplate(String),
    #[error("no separation between active and reference windows: active q10 = {active_q10:.4}, reference q90 = {reference_q90:.4}")]
    NoSeparation { active_q10: f64, reference_q90: f64 },
    #[error("trace does not cover [{from:.3}, {to:.3}] s")]
    Coverage { from: f64, to: f64 },
    #[error(transparent)]
    Skill(#[from] SkillError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Vec3 = [f64; 3];

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrenchSample {
    pub force: Vec3,
    pub torque: Vec3,
    pub timestamp: f64,
}

/// A wrench sample plus the commanded linear / angular motion directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WrenchRecord {
    pub sample: WrenchSample,
    pub linear_dir: Option<Vec3>,
    pub angular_dir: Option<Vec3>,
}

const UNIT_TOLERANCE: f64 = 1e-6;

fn check_unit(d: Option<Vec3>) -> Result<(), FtError> {
    match d {
        Some(v) if (norm(v) - 1.0).abs() > UNIT_TOLERANCE => Err(FtError::NonUnitDirection(v)),
        _ => Ok(()),
    }
}

/// Resistance force and torque against the commanded motion. Without a
/// direction the full magnitude is used.
pub fn resistance(sample: &WrenchSample, linear: Option<Vec3>, angular: Option<Vec3>) -> Result<(f64, f64), FtError> {
    check_unit(linear)?;
    check_unit(angular)?;
    let f = match linear {
        Some(d) => (-dot(sample.force, d)).max(0.0),
        None => norm(sample.force),
    };
    let t = match angular {
        Some(w) => (-dot(sample.torque, w)).max(0.0),
        None => norm(sample.torque),
    };
    Ok((f, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceSample {
    pub timestamp: f64,
    pub force: f64,
    pub torque: f64,
}

impl ResistanceSample {
    pub fn channel(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Force => self.force,
            Channel::Torque => self.torque,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResistanceTrace {
    pub samples: Vec<ResistanceSample>,
}

impl ResistanceTrace {
    pub fn new(samples: Vec<ResistanceSample>) -> Result<Self, FtError> {
        if let Some(i) = samples.windows(2).position(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(FtError::Unordered(i + 1));
        }
        Ok(Self { samples })
    }

    pub fn window(&self, channel: Channel, from: f64, to: f64) -> Vec<f64> {
        self.samples.iter().filter(|s| s.timestamp >= from && s.timestamp < to).map(|s| s.channel(channel)).collect()
    }

    pub fn start(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.timestamp)
    }

    pub fn end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.timestamp)
    }

    /// Copy with one channel multiplied by `alpha`.
    pub fn scaled(&self, channel: Channel, alpha: f64) -> Self {
        let samples = self
            .samples
            .iter()
            .map(|s| match channel {
                Channel::Force => ResistanceSample { force: s.force * alpha, ..*s },
                Channel::Torque => ResistanceSample { torque: s.torque * alpha, ..*s },
            })
            .collect();
        Self { samples }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WrenchTrace {
    pub records: Vec<WrenchRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    t: f64,
    fx: f64,
    fy: f64,
    fz: f64,
    tx: f64,
    ty: f64,
    tz: f64,
    dx: Option<f64>,
    dy: Option<f64>,
    dz: Option<f64>,
    wx: Option<f64>,
    wy: Option<f64>,
    wz: Option<f64>,
}

fn triple(x: Option<f64>, y: Option<f64>, z: Option<f64>) -> Option<Vec3> {
    Some([x?, y?, z?])
}

impl WrenchTrace {
    pub fn resistance_trace(&self) -> Result<ResistanceTrace, FtError> {
        let samples = self
            .records
            .iter()
            .map(|r| {
                let (force, torque) = resistance(&r.sample, r.linear_dir, r.angular_dir)?;
                Ok(ResistanceSample { timestamp: r.sample.timestamp, force, torque })
            })
            .collect::<Result<Vec<_>, FtError>>()?;
        ResistanceTrace::new(samples)
    }

    pub fn write_csv(&self, w: impl io::Write) -> Result<(), FtError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            let s = &r.sample;
            let d = r.linear_dir.map(|v| v.map(Some)).unwrap_or([None; 3]);
            let a = r.angular_dir.map(|v| v.map(Some)).unwrap_or([None; 3]);
            out.serialize(CsvRow {
                t: s.timestamp,
                fx: s.force[0],
                fy: s.force[1],
                fz: s.force[2],
                tx: s.torque[0],
                ty: s.torque[1],
                tz: s.torque[2],
                dx: d[0],
                dy: d[1],
                dz: d[2],
                wx: a[0],
                wy: a[1],
                wz: a[2],
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl io::Read) -> Result<Self, FtError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(r);
        let mut records = Vec::new();
        for row in rdr.deserialize() {
            let row: CsvRow = row?;
            let sample = WrenchSample { force: [row.fx, row.fy, row.fz], torque: [row.tx, row.ty, row.tz], timestamp: row.t };
            if sample.force.iter().chain(&sample.torque).any(|x| !x.is_finite()) || !row.t.is_finite() {
                return Err(FtError::NonFinite(row.t));
            }
            records.push(WrenchRecord { sample, linear_dir: triple(row.dx, row.dy, row.dz), angular_dir: triple(row.wx, row.wy, row.wz) });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<(), FtError> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, FtError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Initial success condition for a skill, picking the signal by action.
pub fn propose_condition(skill: &Skill) -> Result<ConditionExpr, FtError> {
    let stored = |channel: Channel, cmp: Comparison, fallback: f64| {
        let key = match channel {
            Channel::Force => crate::skill_model::FORCE_THRESHOLD_KEY,
            Channel::Torque => crate::skill_model::TORQUE_THRESHOLD_KEY,
        };
        let v = skill.params.get(key).and_then(|p| p.as_f64()).unwrap_or(fallback);
        ConditionExpr::resistance(channel, cmp, v)
    };
    let initial = skill.success.threshold().map_or(0.0, |t| t.value);
    Ok(match skill.action.as_str() {
        "insert" => stored(Channel::Force, Comparison::Below, initial),
        "stretch" | "push" => stored(Channel::Force, Comparison::Above, initial),
        "tighten" => stored(Channel::Torque, Comparison::Above, initial),
        "grasp" => ConditionExpr::GripperHolding { object: TARGET_SLOT.into() },
        "release" | "open_hand" => ConditionExpr::hand_open(),
        "move" => ConditionExpr::PoseReached { pose: "pose".into(), tolerance: 0.01 },
        "move_object" => {
            let pose = if skill.env_slot.is_some() { ENV_SLOT } else { TARGET_SLOT };
            ConditionExpr::PoseReached { pose: pose.into(), tolerance: 0.02 }
        }
        other => return Err(FtError::NoTemplate(other.to_string())),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingParams {
    /// Fraction of the active segment (at its end) taken as the active tail.
    pub tail_fraction: f64,
    /// Interpolation weight from the reference quantile toward the active one
    /// for `Below` conditions.
    pub gamma: f64,
    /// Scale on the active-tail quantile for `Above` conditions.
    pub beta: f64,
}

impl Default for GroundingParams {
    fn default() -> Self {
        Self { tail_fraction: 0.3, gamma: 0.25, beta: 0.9 }
    }
}

/// Linearly interpolated quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// The windows a grounding compares: the active tail and the reference
/// (post window for `Below`, preceding baseline for `Above`).
pub fn grounding_windows(
    trace: &ResistanceTrace,
    active: &Segment,
    post_window: f64,
    comparison: Comparison,
    channel: Channel,
    params: &GroundingParams,
) -> Result<(Vec<f64>, Vec<f64>), FtError> {
    let (from, to) = match comparison {
        Comparison::Below => (active.t_start, active.t_end + post_window),
        Comparison::Above => (active.t_start - post_window, active.t_end),
    };
    let eps = 1e-9;
    if trace.samples.is_empty() || trace.start() > from + 0.02 + eps || trace.end() < to - 0.02 - eps {
        return Err(FtError::Coverage { from, to });
    }
    let tail_start = active.t_end - params.tail_fraction * active.duration();
    let a = trace.window(channel, tail_start, active.t_end);
    let b = match comparison {
        Comparison::Below => trace.window(channel, active.t_end, active.t_end + post_window),
        Comparison::Above => trace.window(channel, active.t_start - post_window, active.t_start),
    };
    if a.is_empty() || b.is_empty() {
        return Err(FtError::Coverage { from, to });
    }
    Ok((a, b))
}

/// Fit a success threshold from one demonstrated segment.
pub fn ground_threshold(
    trace: &ResistanceTrace,
    active: &Segment,
    post_window: f64,
    comparison: Comparison,
    channel: Channel,
    params: &GroundingParams,
) -> Result<f64, FtError> {
    let (a, b) = grounding_windows(trace, active, post_window, comparison, channel, params)?;
    let active_q10 = quantile(&a, 0.1);
    let reference_q90 = quantile(&b, 0.9);
    if active_q10 <= reference_q90 {
        return Err(FtError::NoSeparation { active_q10, reference_q90 });
    }
    Ok(match comparison {
        Comparison::Below => reference_q90 + params.gamma * (active_q10 - reference_q90),
        Comparison::Above => params.beta * active_q10,
    })
}

/// Grounding key: a skill name, optionally specialised as `skill@class`.
pub fn split_key(key: &str) -> (&str, Option<&str>) {
    match key.split_once('@') {
        Some((s, c)) => (s, Some(c)),
        None => (key, None),
    }
}

pub fn grounding_key(skill: &str, env_class: Option<ObjectClass>) -> String {
    match env_class {
        Some(c) => format!("{skill}@{}", c.as_str()),
        None => skill.to_string(),
    }
}

/// New library with grounded success thresholds installed.
pub fn update_library(lib: &SkillLibrary, groundings: &BTreeMap<String, f64>) -> Result<SkillLibrary, FtError> {
    let mut out = lib.clone();
    for (key, value) in groundings {
        let (name, class) = split_key(key);
        let skill = out.resolve(name)?.with_grounding(class, *value)?;
        out = out.with_skill_replaced(skill)?;
    }
    Ok(out)
}
