//! `tacplan` command-line driver. Stages talk to each other through files in
//! the output directory.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use tacplan::analyzer::{
    analyze_demo, build_demo_plan, ground_from_steps, DemoData, DemoTaskPlan, ReasonerBackend, RemoteConfig, RemoteReasoner, RuleBased,
    TranscriptReasoner, CABLE_DEMO_TRANSCRIPT,
};
use tacplan::pddl::{emit, translate_library};
use tacplan::planner::{extract_template, plan_new_task, ExecutionPolicy, OnError, SceneConfig, Task, TaskPlan};
use tacplan::sim::{
    analysis_options, demo_scene, execute_plan, ground_truth_plan, random_scene, run_grid, synthesize_demo, Group, SimConfig,
};
use tacplan::skill_model::build_builtin_libraries;
use tacplan::tactile::segment_sequence;

#[derive(Parser)]
#[command(name = "tacplan", version, about = "Demonstration-to-plan pipeline for contact-rich manipulation")]
struct Cli {
    /// Profiles and evaluation settings (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Print per-stage timing to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a demonstration of a scripted task.
    Synth {
        #[arg(long, default_value = "cable")]
        task: Task,
        /// JSON list of skill steps; defaults to the task's reference script.
        #[arg(long)]
        script: Option<PathBuf>,
    },
    /// Segment the tactile stream of a demonstration.
    Segment {
        #[arg(long)]
        demo: PathBuf,
    },
    /// Tactile utilities.
    Tactile {
        #[command(subcommand)]
        command: TactileCommand,
    },
    /// Reason a skill sequence from a demonstration.
    Analyze {
        #[arg(long)]
        demo: PathBuf,
        #[arg(long, value_enum, default_value = "rule")]
        backend: Backend,
        /// Transcript replayed by the mock backend (default: bundled cable transcript).
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Ablation group controlling key frames and grounding.
        #[arg(long, default_value = "ours")]
        group: Group,
        #[arg(long)]
        domain_out: Option<PathBuf>,
    },
    /// Re-fit thresholds of a demo plan from the demonstration's wrench trace.
    Ground {
        #[arg(long)]
        demo: PathBuf,
        #[arg(long)]
        demo_plan: PathBuf,
    },
    /// Generalize a demo plan to a scene.
    Plan {
        #[arg(long)]
        demo_plan: PathBuf,
        /// Scene JSON; a random scene is drawn from the seed when omitted.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Execute a task plan in the simulator.
    Exec {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_enum, default_value = "retry_relaxed")]
        policy: Policy,
    },
    /// Run the planning ablation grid and write a CSV report.
    Eval {
        /// Groups to run (default: all).
        #[arg(long, num_args = 1..)]
        group: Vec<Group>,
        /// Tasks to run (default: both).
        #[arg(long, num_args = 1..)]
        task: Vec<Task>,
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Subcommand)]
enum TactileCommand {
    Segment {
        #[arg(long)]
        demo: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Mock,
    Rule,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Policy {
    RetryRelaxed,
    Skip,
    Abort,
}

struct Failure {
    stage: &'static str,
    message: String,
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T, E: Display> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| Failure { stage, message: e.to_string() })
    }
}

struct Ctx {
    config: SimConfig,
    seed: u64,
    out: PathBuf,
    verbose: bool,
}

impl Ctx {
    fn timed<T>(&self, label: &str, f: impl FnOnce() -> Result<T, Failure>) -> Result<T, Failure> {
        let t = Instant::now();
        let r = f();
        if self.verbose {
            eprintln!("[{label}] {:.3} s", t.elapsed().as_secs_f64());
        }
        r
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf, Failure> {
        fs::create_dir_all(&self.out).stage("io")?;
        let path = self.out.join(name);
        fs::write(&path, text).stage("io")?;
        Ok(path)
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure { stage: "io", message: format!("{}: {e}", path.display()) })
}

fn library_for(name: &str) -> Result<tacplan::SkillLibrary, Failure> {
    build_builtin_libraries().remove(name).ok_or_else(|| Failure { stage: "skill_model", message: format!("no builtin library `{name}`") })
}

fn task_of(library: &str) -> Result<Task, Failure> {
    library.parse().stage("planner")
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = match &cli.config {
        Some(p) => SimConfig::load(p).stage("config")?,
        None => SimConfig::default(),
    };
    let seed = cli.seed.unwrap_or(config.eval.seed);
    let ctx = Ctx { config, seed, out: cli.out, verbose: cli.verbose };
    match cli.command {
        Command::Synth { task, script } => {
            let scene = demo_scene(task);
            let script = match script {
                Some(p) => serde_json::from_str(&read(&p)?).stage("synth")?,
                None => ground_truth_plan(&scene),
            };
            let demo = ctx.timed("synth", || synthesize_demo(&scene, &script, ctx.seed, &ctx.config.profiles).stage("synth"))?;
            let path = demo.save(&ctx.out.join("demo")).stage("synth")?;
            let scene_path = ctx.write("scene.json", &pretty(&scene))?;
            println!("{}", pretty(&serde_json::json!({ "demo": path, "scene": scene_path })));
        }
        Command::Segment { demo } | Command::Tactile { command: TactileCommand::Segment { demo } } => {
            let demo = DemoData::load(&demo).stage("analyzer")?;
            let segs = ctx.timed("segment", || segment_sequence(&demo.tactile, &ctx.config.eval.segment).stage("tactile"))?;
            let text = pretty(&segs);
            ctx.write("segments.json", &text)?;
            println!("{text}");
        }
        Command::Analyze { demo, backend, transcript, group, domain_out } => {
            let demo = DemoData::load(&demo).stage("analyzer")?;
            let lib = library_for(&demo.record.library)?;
            let backend: Box<dyn ReasonerBackend> = match backend {
                Backend::Rule => Box::new(RuleBased { lib: lib.clone(), params: ctx.config.eval.rule }),
                Backend::Mock => {
                    let transcript = match transcript {
                        Some(p) => read(&p)?,
                        None => CABLE_DEMO_TRANSCRIPT.to_string(),
                    };
                    Box::new(TranscriptReasoner { transcript, lib: lib.clone() })
                }
                Backend::Remote => Box::new(RemoteReasoner { config: RemoteConfig::from_env().stage("analyzer")?, lib: lib.clone() }),
            };
            let options = analysis_options(group, &ctx.config.eval);
            let plan = ctx.timed("analyze", || analyze_demo(&demo, &lib, backend.as_ref(), &options).stage("analyzer"))?;
            let domain_text = emit(&plan.domain);
            match domain_out {
                Some(p) => fs::write(&p, domain_text).stage("io")?,
                None => {
                    ctx.write("domain.pddl", &domain_text)?;
                }
            }
            let path = ctx.write("demo_plan.json", &plan.to_json())?;
            println!("{}", path.display());
        }
        Command::Ground { demo, demo_plan } => {
            let demo = DemoData::load(&demo).stage("analyzer")?;
            let plan = DemoTaskPlan::from_json(&read(&demo_plan)?).stage("analyzer")?;
            let lib = library_for(&demo.record.library)?;
            let domain = translate_library(&lib).stage("pddl")?;
            let grounded = ctx.timed("ground", || {
                let trace = demo.wrench.resistance_trace().stage("ftsig")?;
                let eval = &ctx.config.eval;
                let g = ground_from_steps(&lib, &plan.steps, &plan.objects, &trace, eval.post_window, &eval.grounding).stage("ftsig")?;
                build_demo_plan(&lib, &domain, plan.steps.clone(), &g, &plan.task_description, &plan.objects).stage("analyzer")
            })?;
            ctx.write("demo_plan.json", &grounded.to_json())?;
            println!("{}", pretty(&grounded.groundings));
        }
        Command::Plan { demo_plan, scene } => {
            let demo = DemoTaskPlan::from_json(&read(&demo_plan)?).stage("analyzer")?;
            let scene: SceneConfig = match scene {
                Some(p) => serde_json::from_str(&read(&p)?).stage("planner")?,
                None => random_scene(task_of(&demo.grounded_library.object_class)?, &ctx.config.eval, ctx.seed),
            };
            let plan = ctx.timed("plan", || {
                let template = extract_template(&demo).stage("planner")?;
                plan_new_task(&template, &scene).stage("planner")
            })?;
            let path = ctx.write("task_plan.json", &plan.to_json())?;
            println!("{}", path.display());
        }
        Command::Exec { plan, policy } => {
            let plan = TaskPlan::from_json(&read(&plan)?).stage("planner")?;
            let on_error = match policy {
                Policy::RetryRelaxed => OnError::RetryRelaxed,
                Policy::Skip => OnError::Skip,
                Policy::Abort => OnError::Abort,
            };
            let policy = ExecutionPolicy { on_error, ..ctx.config.eval.policy };
            let result = ctx.timed("exec", || Ok(execute_plan(&plan, &ctx.config.profiles, &policy, ctx.seed)))?;
            let text = result.to_json();
            ctx.write("exec_result.json", &text)?;
            println!(
                "{}",
                pretty(&serde_json::json!({
                    "executable": result.executable,
                    "task_success": result.task_success,
                    "retries": result.total_retries(),
                }))
            );
        }
        Command::Eval { group, task, n } => {
            let groups = if group.is_empty() { Group::ALL.to_vec() } else { group };
            let tasks = if task.is_empty() { vec![Task::CableMounting, Task::CapTightening] } else { task };
            let mut config = ctx.config.clone();
            config.eval.seed = ctx.seed;
            if let Some(n) = n {
                if n == 0 {
                    return Err(Failure { stage: "sim", message: "--n must be at least 1".into() });
                }
                config.eval.n_scenes = n;
            }
            let report = ctx.timed("eval", || Ok(run_grid(&groups, &tasks, &config)))?;
            let csv = report.to_csv();
            ctx.write("eval.csv", &csv)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", serde_json::json!({ "stage": f.stage, "error": f.message }));
            ExitCode::from(1)
        }
    }
}
