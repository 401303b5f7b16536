//! Python bindings. Structured results cross the boundary as plain Python
//! objects (decoded from JSON), handles wrap the core types.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tacplan::analyzer::{
    analyze_demo, collapse_steps, parse_reasoner_transcript, DemoData, DemoTaskPlan, RuleBased, TranscriptReasoner, CABLE_DEMO_TRANSCRIPT,
};
use tacplan::ftsig::{ground_threshold as ground, GroundingParams, ResistanceSample, ResistanceTrace};
use tacplan::pddl::{self, emit, translate_library};
use tacplan::planner::{extract_template, plan_new_task, ExecutionPolicy, OnError, SceneConfig, Task, TaskPlan};
use tacplan::sim::{self, analysis_options, demo_scene, ground_truth_plan, random_scene, synthesize_demo, Group, SimConfig};
use tacplan::skill_model::{build_builtin_libraries, Channel, Comparison, ObjectStatus};
use tacplan::tactile::{classify, segment_sequence, ClassifierParams, Segment, SegmentParams, TactileFrame};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse_task(task: &str) -> PyResult<Task> {
    task.parse().map_err(PyValueError::new_err)
}

fn parse_status(status: &str) -> PyResult<ObjectStatus> {
    serde_json::from_value(serde_json::Value::String(status.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown status `{status}`")))
}

/// A builtin skill library (`general`, `cable` or `cap`).
#[pyclass(name = "SkillLibrary", module = "tacplan")]
struct PySkillLibrary {
    inner: tacplan::SkillLibrary,
}

#[pymethods]
impl PySkillLibrary {
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        build_builtin_libraries()
            .remove(name)
            .map(|inner| Self { inner })
            .ok_or_else(|| PyValueError::new_err(format!("no builtin library `{name}`")))
    }

    /// Skill names visible through inheritance.
    fn skills(&self) -> Vec<String> {
        self.inner.effective_skills().iter().map(|s| s.action.clone()).collect()
    }

    fn resolve<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.resolve(name).map_err(value_err)?)
    }

    /// Skills whose status signature and holding precondition match.
    fn find_by_signature(&self, status: &str, holding: bool) -> PyResult<Vec<String>> {
        Ok(self.inner.find_by_signature(parse_status(status)?, holding).iter().map(|s| s.action.clone()).collect())
    }

    fn to_pddl(&self) -> PyResult<String> {
        Ok(emit(&translate_library(&self.inner).map_err(value_err)?))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

/// A parsed PDDL domain.
#[pyclass(name = "Domain", module = "tacplan")]
struct PyDomain {
    inner: pddl::PddlDomain,
}

#[pymethods]
impl PyDomain {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        pddl::parse(text).map(|inner| Self { inner }).map_err(value_err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn actions(&self) -> Vec<String> {
        self.inner.actions.iter().map(|a| a.name.clone()).collect()
    }

    #[getter]
    fn predicates(&self) -> Vec<String> {
        self.inner.predicates.iter().map(|p| p.name.clone()).collect()
    }

    fn emit(&self) -> String {
        emit(&self.inner)
    }
}

/// A demonstration: tactile stream, wrench trace and scene annotations.
#[pyclass(name = "Demo", module = "tacplan")]
struct PyDemo {
    inner: DemoData,
}

#[pymethods]
impl PyDemo {
    /// Synthesize the reference demonstration of a task (`cable` or `cap`).
    #[staticmethod]
    #[pyo3(signature = (task, seed = 0))]
    fn synthesize(task: &str, seed: u64) -> PyResult<Self> {
        let scene = demo_scene(parse_task(task)?);
        let script = ground_truth_plan(&scene);
        synthesize_demo(&scene, &script, seed, &SimConfig::default().profiles).map(|inner| Self { inner }).map_err(value_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        DemoData::load(&path).map(|inner| Self { inner }).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// Write the demo files into `dir`; returns the path of the record.
    fn save(&self, dir: PathBuf) -> PyResult<PathBuf> {
        self.inner.save(&dir).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.tactile.frames.last().map_or(0.0, |f| f.timestamp)
    }

    fn segments<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &segment_sequence(&self.inner.tactile, &SegmentParams::default()).map_err(value_err)?)
    }

    /// Reason a skill sequence and ground its conditions. `backend` is `rule`
    /// or `mock` (replays the bundled transcript), `group` an ablation group.
    #[pyo3(signature = (backend = "rule", group = "ours"))]
    fn analyze(&self, backend: &str, group: &str) -> PyResult<PyDemoPlan> {
        let lib = PySkillLibrary::builtin(&self.inner.record.library)?.inner;
        let group: Group = group.parse().map_err(PyValueError::new_err)?;
        let options = analysis_options(group, &SimConfig::default().eval);
        let plan = match backend {
            "rule" => analyze_demo(&self.inner, &lib, &RuleBased::new(lib.clone()), &options),
            "mock" => {
                let reasoner = TranscriptReasoner { transcript: CABLE_DEMO_TRANSCRIPT.into(), lib: lib.clone() };
                analyze_demo(&self.inner, &lib, &reasoner, &options)
            }
            other => return Err(PyValueError::new_err(format!("unknown backend `{other}`"))),
        };
        plan.map(|inner| PyDemoPlan { inner }).map_err(value_err)
    }
}

/// Skill sequence reasoned from a demonstration, with grounded conditions.
#[pyclass(name = "DemoPlan", module = "tacplan")]
struct PyDemoPlan {
    inner: DemoTaskPlan,
}

#[pymethods]
impl PyDemoPlan {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        DemoTaskPlan::from_json(text).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Steps as PDDL s-expressions.
    #[getter]
    fn steps(&self) -> Vec<String> {
        self.inner.steps.iter().map(|s| s.to_sexpr()).collect()
    }

    #[getter]
    fn groundings(&self) -> std::collections::BTreeMap<String, f64> {
        self.inner.groundings.clone()
    }

    /// Generalize to a scene given as JSON, or to a random scene drawn from `seed`.
    #[pyo3(signature = (scene = None, seed = 0))]
    fn plan(&self, scene: Option<&str>, seed: u64) -> PyResult<PyTaskPlan> {
        let scene: SceneConfig = match scene {
            Some(text) => serde_json::from_str(text).map_err(value_err)?,
            None => random_scene(parse_task(&self.inner.grounded_library.object_class)?, &SimConfig::default().eval, seed),
        };
        let template = extract_template(&self.inner).map_err(value_err)?;
        plan_new_task(&template, &scene).map(|inner| PyTaskPlan { inner }).map_err(value_err)
    }
}

/// A validated plan for one scene.
#[pyclass(name = "TaskPlan", module = "tacplan")]
struct PyTaskPlan {
    inner: TaskPlan,
}

#[pymethods]
impl PyTaskPlan {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        TaskPlan::from_json(text).map(|inner| Self { inner }).map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn steps(&self) -> Vec<String> {
        self.inner.steps.iter().map(|s| s.to_sexpr()).collect()
    }

    #[getter]
    fn goal(&self) -> Vec<String> {
        self.inner.goal.iter().map(|a| a.to_string()).collect()
    }

    /// Execute in the simulator; `policy` is `retry_relaxed`, `skip` or `abort`.
    #[pyo3(signature = (policy = "retry_relaxed", seed = 0))]
    fn execute<'py>(&self, py: Python<'py>, policy: &str, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let on_error = match policy {
            "retry_relaxed" => OnError::RetryRelaxed,
            "skip" => OnError::Skip,
            "abort" => OnError::Abort,
            other => return Err(PyValueError::new_err(format!("unknown policy `{other}`"))),
        };
        let policy = ExecutionPolicy { on_error, ..ExecutionPolicy::default() };
        to_py(py, &sim::execute_plan(&self.inner, &SimConfig::default().profiles, &policy, seed))
    }
}

/// Classify one displacement field given as `rows*cols` (dx, dy) pairs.
#[pyfunction]
fn classify_field(rows: usize, cols: usize, vectors: Vec<[f64; 2]>) -> PyResult<String> {
    let frame = TactileFrame::new(rows, cols, vectors, 0.0).map_err(value_err)?;
    let status = classify(&frame, &ClassifierParams::default());
    Ok(serde_json::to_value(status).map_err(value_err)?.as_str().unwrap_or_default().to_string())
}

/// Skill steps of a reasoner transcript with repeats collapsed, as s-expressions.
#[pyfunction]
#[pyo3(signature = (text = None))]
fn parse_transcript(text: Option<&str>) -> PyResult<Vec<String>> {
    let steps = collapse_steps(parse_reasoner_transcript(text.unwrap_or(CABLE_DEMO_TRANSCRIPT)).map_err(value_err)?);
    Ok(steps.iter().map(|s| s.to_sexpr()).collect())
}

/// Ground a threshold from `(timestamp, value)` samples over the active
/// segment `[t_start, t_end)`. `comparison` is `below` or `above`.
#[pyfunction]
#[pyo3(signature = (samples, t_start, t_end, comparison, channel = "force", post_window = 1.0))]
fn ground_threshold(
    samples: Vec<(f64, f64)>,
    t_start: f64,
    t_end: f64,
    comparison: &str,
    channel: &str,
    post_window: f64,
) -> PyResult<f64> {
    let channel = match channel {
        "force" => Channel::Force,
        "torque" => Channel::Torque,
        other => return Err(PyValueError::new_err(format!("unknown channel `{other}`"))),
    };
    let cmp = match comparison {
        "below" => Comparison::Below,
        "above" => Comparison::Above,
        other => return Err(PyValueError::new_err(format!("unknown comparison `{other}`"))),
    };
    let samples = samples
        .into_iter()
        .map(|(timestamp, v)| match channel {
            Channel::Force => ResistanceSample { timestamp, force: v, torque: 0.0 },
            Channel::Torque => ResistanceSample { timestamp, force: 0.0, torque: v },
        })
        .collect();
    let trace = ResistanceTrace::new(samples).map_err(value_err)?;
    let seg = Segment { status: ObjectStatus::Torque, t_start, t_end, key_timestamp: t_start };
    ground(&trace, &seg, post_window, cmp, channel, &GroundingParams::default()).map_err(value_err)
}

/// One row of the planning ablation (`group` in ours/A/B/C/D).
#[pyfunction]
#[pyo3(signature = (group, task, n_scenes = 20, seed = 7))]
fn run_config<'py>(py: Python<'py>, group: &str, task: &str, n_scenes: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    if n_scenes == 0 {
        return Err(PyValueError::new_err("n_scenes must be at least 1"));
    }
    let group: Group = group.parse().map_err(PyValueError::new_err)?;
    to_py(py, &sim::run_config(group, parse_task(task)?, n_scenes, seed, &SimConfig::default()))
}

#[pymodule(name = "tacplan")]
fn tacplan_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySkillLibrary>()?;
    m.add_class::<PyDomain>()?;
    m.add_class::<PyDemo>()?;
    m.add_class::<PyDemoPlan>()?;
    m.add_class::<PyTaskPlan>()?;
    m.add_function(wrap_pyfunction!(classify_field, m)?)?;
    m.add_function(wrap_pyfunction!(parse_transcript, m)?)?;
    m.add_function(wrap_pyfunction!(ground_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("ROBOT_SKILLS_DOMAIN", tacplan::pddl::ROBOT_SKILLS_DOMAIN)?;
    Ok(())
}
