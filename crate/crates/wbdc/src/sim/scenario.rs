//! Scenario files: JSON documents that reference a model, an initial
//! state, a task script with reference trajectories, a contact script
//! with transition schedules, and run parameters.
//!
//! ```json
//! {
//!   "model": "../models/toy_biped.json",
//!   "duration": 5.0,
//!   "dt": 0.001,
//!   "weights": { "force": 1.0, "relaxation": 100.0 },
//!   "initial": { "base_position": [0,0,0.6], "joints": {"l_knee_pitch": 0.4} },
//!   "internal_constraints": [
//!     { "type": "coupled_joints", "joint_a": "a", "joint_b": "b", "ratio": 1.0 }
//!   ],
//!   "tasks": [
//!     { "name": "cm", "type": "centroidal_momentum", "priority": 1,
//!       "kp": 100.0, "kd": 20.0,
//!       "trajectory": { "type": "sinusoid", "axis": 2, "amplitude": 0.1,
//!                        "frequency": 1.0 } }
//!   ],
//!   "contacts": [
//!     { "frame": "l_foot", "geometry": "point", "facets": 8, "mu": 0.5,
//!       "f_max": 200.0,
//!       "events": [ { "t": 0.5, "action": "release", "duration": 0.055 } ] }
//!   ],
//!   "task_sets": [ ["cm"], ["cm", "jp"] ]
//! }
//! ```
//!
//! Trajectories: `hold` (optionally with an explicit `position`; defaults
//! to the value at the initial state), `sinusoid` (one axis around the
//! initial value), and `arc` (a half-sine vertical excursion over the
//! task's activity window, for swing feet).

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DVector, Rotation3};
use serde::Deserialize;

use crate::constraints::{ContactGeometry, ContactSpec, InternalConstraintSpec, Transition};
use crate::controller::{TaskObjectiveKind, TaskRef, TaskSpec};
use crate::model::{load_model, JacobianKind, RobotModel, RobotState};

use super::integrate::ActiveContact;
use super::SimError;

#[derive(Deserialize)]
struct ScenarioDoc {
    model: String,
    duration: f64,
    dt: f64,
    #[serde(default)]
    weights: Option<WeightsDoc>,
    #[serde(default)]
    initial: InitialDoc,
    #[serde(default)]
    internal_constraints: Vec<InternalDoc>,
    tasks: Vec<TaskDoc>,
    #[serde(default)]
    contacts: Vec<ContactDoc>,
    #[serde(default)]
    task_sets: Vec<Vec<String>>,
}

#[derive(Deserialize)]
struct WeightsDoc {
    force: f64,
    relaxation: f64,
}

#[derive(Deserialize, Default)]
struct InitialDoc {
    #[serde(default)]
    base_position: Option<[f64; 3]>,
    #[serde(default)]
    base_quaternion: Option<[f64; 4]>,
    #[serde(default)]
    joints: HashMap<String, f64>,
}

#[derive(Deserialize)]
#[serde(tag = "type")]
enum InternalDoc {
    #[serde(rename = "coupled_joints")]
    CoupledJoints {
        joint_a: String,
        joint_b: String,
        ratio: f64,
    },
    #[serde(rename = "frame_coincidence")]
    FrameCoincidence { frame_a: String, frame_b: String },
}

#[derive(Deserialize)]
struct TaskDoc {
    name: String,
    #[serde(rename = "type")]
    kind: String,
    priority: usize,
    #[serde(default)]
    frame: Option<String>,
    #[serde(default = "default_kp")]
    kp: f64,
    #[serde(default = "default_kd")]
    kd: f64,
    #[serde(default)]
    trajectory: TrajectoryDoc,
    /// Activity window `[start, end)`; the whole run when absent.
    #[serde(default)]
    window: Option<[f64; 2]>,
}

fn default_kp() -> f64 {
    100.0
}
fn default_kd() -> f64 {
    20.0
}

#[derive(Deserialize)]
#[serde(tag = "type")]
enum TrajectoryDoc {
    #[serde(rename = "hold")]
    Hold {
        #[serde(default)]
        position: Option<Vec<f64>>,
    },
    #[serde(rename = "sinusoid")]
    Sinusoid {
        axis: usize,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    #[serde(rename = "arc")]
    Arc { height: f64 },
}

impl Default for TrajectoryDoc {
    fn default() -> Self {
        TrajectoryDoc::Hold { position: None }
    }
}

#[derive(Deserialize)]
struct ContactDoc {
    frame: String,
    geometry: String,
    #[serde(default = "default_facets")]
    facets: usize,
    #[serde(default)]
    dx: Option<f64>,
    #[serde(default)]
    dy: Option<f64>,
    mu: f64,
    #[serde(default)]
    f_max: Option<f64>,
    /// Engaged at t = 0 unless the first event engages it.
    #[serde(default = "default_true")]
    engaged_at_start: bool,
    #[serde(default)]
    events: Vec<ContactEventDoc>,
}

fn default_facets() -> usize {
    8
}
fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
struct ContactEventDoc {
    t: f64,
    action: String,
    /// Transition ramp length in seconds; 0 switches instantly.
    #[serde(default)]
    duration: f64,
}

/// Reference trajectory, resolved against the initial state.
#[derive(Clone, Debug)]
pub enum Trajectory {
    Hold { position: DVector<f64> },
    Sinusoid {
        center: DVector<f64>,
        axis: usize,
        amplitude: f64,
        frequency: f64,
    },
    /// Half-sine excursion on z over `[start, end]`, returning to start.
    Arc {
        position: DVector<f64>,
        height: f64,
        start: f64,
        end: f64,
    },
}

impl Trajectory {
    /// Sample position/velocity/acceleration at time `t`.
    pub fn sample(&self, t: f64) -> TaskRef {
        match self {
            Trajectory::Hold { position } => {
                let vel_dim = if position.len() == 4 { 3 } else { position.len() };
                TaskRef::hold(position.clone(), vel_dim)
            }
            Trajectory::Sinusoid {
                center,
                axis,
                amplitude,
                frequency,
            } => {
                // Cosine-start form: begins at the initial value with zero
                // velocity, so engaging the reference causes no force jump.
                let w = 2.0 * std::f64::consts::PI * frequency;
                let mut r = TaskRef::hold(center.clone(), center.len());
                r.pos[*axis] += amplitude * ((w * t).cos() - 1.0);
                r.vel[*axis] = -amplitude * w * (w * t).sin();
                r.acc[*axis] = -amplitude * w * w * (w * t).cos();
                r
            }
            Trajectory::Arc {
                position,
                height,
                start,
                end,
            } => {
                // Squared-sine profile: zero velocity at lift-off and at
                // touchdown, so the foot lands at rest before the contact
                // re-engages.
                let mut r = TaskRef::hold(position.clone(), position.len());
                let span = (end - start).max(1e-9);
                let s = ((t - start) / span).clamp(0.0, 1.0);
                let w = std::f64::consts::PI / span;
                let phase = w * s * span;
                r.pos[2] += height * phase.sin() * phase.sin();
                if (0.0..1.0).contains(&s) {
                    r.vel[2] = height * w * (2.0 * phase).sin();
                    r.acc[2] = 2.0 * height * w * w * (2.0 * phase).cos();
                }
                r
            }
        }
    }
}

/// One scripted task: spec, trajectory, and activity window.
#[derive(Clone, Debug)]
pub struct ScenarioTask {
    pub spec: TaskSpec,
    pub trajectory: Trajectory,
    pub window: Option<(f64, f64)>,
}

impl ScenarioTask {
    pub fn active_at(&self, t: f64) -> bool {
        match self.window {
            Some((a, b)) => t >= a && t < b,
            None => true,
        }
    }
}

#[derive(Clone, Debug)]
enum ContactAction {
    Engage,
    Release,
}

#[derive(Clone, Debug)]
struct ContactScript {
    t: f64,
    action: ContactAction,
    duration: f64,
}

/// One scripted contact with its transition schedule.
#[derive(Clone, Debug)]
pub struct ScenarioContact {
    pub frame: String,
    pub geometry: ContactGeometry,
    pub mu: f64,
    pub f_max: Option<f64>,
    engaged_at_start: bool,
    events: Vec<ContactScript>,
}

/// Engagement status at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactPhase {
    /// Rigid in the simulator (any nonzero load share).
    pub active: bool,
    /// Load share in [0, 1]; ramps through transitions.
    pub h: f64,
}

impl ScenarioContact {
    pub fn phase_at(&self, t: f64) -> ContactPhase {
        let mut active = self.engaged_at_start;
        let mut h = if active { 1.0 } else { 0.0 };
        for ev in &self.events {
            if t < ev.t {
                break;
            }
            let s = if ev.duration > 0.0 {
                ((t - ev.t) / ev.duration).clamp(0.0, 1.0)
            } else {
                1.0
            };
            match ev.action {
                ContactAction::Engage => {
                    active = true;
                    h = s;
                }
                ContactAction::Release => {
                    h = 1.0 - s;
                    active = h > 0.0;
                }
            }
        }
        ContactPhase { active, h }
    }

    pub fn wrench_dim(&self) -> usize {
        match self.geometry {
            ContactGeometry::Surface { .. } => 6,
            ContactGeometry::Point { .. } => 3,
        }
    }

    fn to_spec(&self, phase: ContactPhase, transitions_enabled: bool) -> ContactSpec {
        let transition = self.f_max.map(|f_max| Transition {
            h: if transitions_enabled { phase.h } else { 1.0 },
            f_min: 0.0,
            f_max,
        });
        ContactSpec {
            frame: self.frame.clone(),
            geometry: self.geometry,
            mu: self.mu,
            rotation_to_local: Rotation3::identity(),
            transition,
        }
    }
}

/// A fully resolved scenario.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub model: RobotModel,
    pub initial_state: RobotState,
    pub duration: f64,
    pub dt: f64,
    pub force_weight: f64,
    pub relaxation_weight: f64,
    pub internals: Vec<InternalConstraintSpec>,
    pub tasks: Vec<ScenarioTask>,
    pub contacts: Vec<ScenarioContact>,
    /// Named task subsets for benchmarking.
    pub task_sets: Vec<Vec<String>>,
    /// Honor scripted transition ramps (disable to study force jerk).
    pub transitions_enabled: bool,
}

impl Scenario {
    /// Tasks active at `t` with contiguous priorities and sampled
    /// references, in scenario priority order.
    pub fn tasks_at(&self, t: f64) -> Vec<(TaskSpec, TaskRef)> {
        let mut out = Vec::new();
        for task in &self.tasks {
            if !task.active_at(t) {
                continue;
            }
            let mut spec = task.spec.clone();
            spec.priority = out.len() + 1;
            out.push((spec, task.trajectory.sample(t)));
        }
        out
    }

    /// Controller contact set and simulator active set at `t`.
    pub fn contacts_at(&self, t: f64) -> (Vec<ContactSpec>, Vec<ActiveContact>) {
        let mut specs = Vec::new();
        let mut active = Vec::new();
        for c in &self.contacts {
            let phase = c.phase_at(t);
            if !phase.active {
                continue;
            }
            specs.push(c.to_spec(phase, self.transitions_enabled));
            active.push(ActiveContact {
                frame: c.frame.clone(),
                kind: match c.geometry {
                    ContactGeometry::Surface { .. } => JacobianKind::Full6,
                    ContactGeometry::Point { .. } => JacobianKind::Point3,
                },
            });
        }
        (specs, active)
    }

    /// Indices (into the scenario contact list) active at `t`.
    pub fn active_contact_indices(&self, t: f64) -> Vec<usize> {
        (0..self.contacts.len())
            .filter(|&i| self.contacts[i].phase_at(t).active)
            .collect()
    }

    /// Restrict the task list to a named subset (for benchmarking).
    pub fn subset(&self, names: &[String]) -> Result<Scenario, SimError> {
        let mut tasks = Vec::new();
        for task in &self.tasks {
            if names.iter().any(|n| *n == task.spec.name) {
                tasks.push(task.clone());
            }
        }
        if tasks.len() != names.len() {
            return Err(SimError::Invalid {
                field: "task_sets".into(),
                msg: format!("unknown task name in {names:?}"),
            });
        }
        let mut s = self.clone();
        s.tasks = tasks;
        Ok(s)
    }
}

fn invalid(field: &str, msg: impl Into<String>) -> SimError {
    SimError::Invalid {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// Initial value of a task's reference, taken from the initial state.
fn initial_reference(
    model: &RobotModel,
    state: &RobotState,
    kind: &TaskObjectiveKind,
) -> Result<DVector<f64>, SimError> {
    Ok(match kind {
        TaskObjectiveKind::CentroidalMomentum | TaskObjectiveKind::Com => {
            let cm = model.centroidal_momentum(state)?;
            DVector::from_column_slice(cm.com.as_slice())
        }
        TaskObjectiveKind::FramePosition { frame } => {
            DVector::from_column_slice(model.frame_position(state, frame)?.as_slice())
        }
        TaskObjectiveKind::FrameOrientation { frame } => {
            let q = model.frame_orientation(state, frame)?;
            DVector::from_column_slice(&[q.w, q.i, q.j, q.k])
        }
        TaskObjectiveKind::JointPosture => {
            let idx = model.actuated_q_indices();
            DVector::from_iterator(idx.len(), idx.iter().map(|&i| state.q[i]))
        }
    })
}

/// Parse a scenario document; `base_dir` resolves the model path.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario, SimError> {
    let doc: ScenarioDoc = serde_json::from_str(text)?;
    if !(doc.dt > 0.0 && doc.dt <= 5e-3) {
        return Err(invalid("dt", format!("dt must be in (0, 0.005], got {}", doc.dt)));
    }
    if !(doc.duration > 0.0) {
        return Err(invalid("duration", "duration must be positive"));
    }

    let model_path = base_dir.join(&doc.model);
    let model = load_model(&std::fs::read_to_string(&model_path)?)?;

    let mut state = model.neutral_state();
    if let Some(p) = doc.initial.base_position {
        if model.floating_dim() != 6 {
            return Err(invalid("initial.base_position", "model has no floating base"));
        }
        for i in 0..3 {
            state.q[i] = p[i];
        }
    }
    if let Some(quat) = doc.initial.base_quaternion {
        if model.floating_dim() != 6 {
            return Err(invalid("initial.base_quaternion", "model has no floating base"));
        }
        let norm = quat.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-9 {
            return Err(invalid("initial.base_quaternion", "quaternion must be nonzero"));
        }
        for i in 0..4 {
            state.q[3 + i] = quat[i] / norm;
        }
    }
    let shift = model.nq() - model.dof();
    for (name, value) in &doc.initial.joints {
        let ji = model
            .joint_index(name)
            .ok_or_else(|| invalid("initial.joints", format!("unknown joint `{name}`")))?;
        state.q[model.joints[ji].dof_start + shift] = *value;
    }

    let internals = doc
        .internal_constraints
        .into_iter()
        .map(|d| match d {
            InternalDoc::CoupledJoints {
                joint_a,
                joint_b,
                ratio,
            } => InternalConstraintSpec::CoupledJoints {
                joint_a,
                joint_b,
                ratio,
            },
            InternalDoc::FrameCoincidence { frame_a, frame_b } => {
                InternalConstraintSpec::FrameCoincidence { frame_a, frame_b }
            }
        })
        .collect();

    let mut tasks = Vec::new();
    let mut prev_priority = 0usize;
    for t in &doc.tasks {
        if t.priority != prev_priority + 1 {
            return Err(invalid(
                &format!("tasks.{}.priority", t.name),
                "priorities must be contiguous from 1 and in order",
            ));
        }
        prev_priority = t.priority;
        let kind = match t.kind.as_str() {
            "centroidal_momentum" => TaskObjectiveKind::CentroidalMomentum,
            "com" => TaskObjectiveKind::Com,
            "frame_position" => TaskObjectiveKind::FramePosition {
                frame: t
                    .frame
                    .clone()
                    .ok_or_else(|| invalid(&format!("tasks.{}", t.name), "missing frame"))?,
            },
            "frame_orientation" => TaskObjectiveKind::FrameOrientation {
                frame: t
                    .frame
                    .clone()
                    .ok_or_else(|| invalid(&format!("tasks.{}", t.name), "missing frame"))?,
            },
            "joint_posture" => TaskObjectiveKind::JointPosture,
            other => {
                return Err(invalid(
                    &format!("tasks.{}.type", t.name),
                    format!("unknown task type `{other}`"),
                ))
            }
        };
        let init = initial_reference(&model, &state, &kind)?;
        let window = t.window.map(|[a, b]| (a, b));
        let trajectory = match &t.trajectory {
            TrajectoryDoc::Hold { position } => Trajectory::Hold {
                position: position
                    .as_ref()
                    .map(|p| DVector::from_column_slice(p))
                    .unwrap_or(init),
            },
            TrajectoryDoc::Sinusoid {
                axis,
                amplitude,
                frequency,
                center,
            } => {
                let center = center
                    .as_ref()
                    .map(|p| DVector::from_column_slice(p))
                    .unwrap_or(init);
                if *axis >= center.len() {
                    return Err(invalid(
                        &format!("tasks.{}.trajectory.axis", t.name),
                        "axis out of range",
                    ));
                }
                Trajectory::Sinusoid {
                    center,
                    axis: *axis,
                    amplitude: *amplitude,
                    frequency: *frequency,
                }
            }
            TrajectoryDoc::Arc { height } => {
                let (start, end) = window.ok_or_else(|| {
                    invalid(
                        &format!("tasks.{}.trajectory", t.name),
                        "arc trajectories need a task window",
                    )
                })?;
                Trajectory::Arc {
                    position: init,
                    height: *height,
                    start,
                    end,
                }
            }
        };
        tasks.push(ScenarioTask {
            spec: TaskSpec {
                name: t.name.clone(),
                priority: t.priority,
                kind,
                kp: t.kp,
                kd: t.kd,
            },
            trajectory,
            window,
        });
    }
    if tasks.is_empty() {
        return Err(invalid("tasks", "at least one task is required"));
    }

    let mut contacts = Vec::new();
    for c in &doc.contacts {
        model.frame_index(&c.frame)?;
        let geometry = match c.geometry.as_str() {
            "point" => ContactGeometry::Point { facets: c.facets },
            "surface" => ContactGeometry::Surface {
                dx: c.dx.ok_or_else(|| invalid("contacts", "surface contact needs dx"))?,
                dy: c.dy.ok_or_else(|| invalid("contacts", "surface contact needs dy"))?,
            },
            other => {
                return Err(invalid(
                    "contacts.geometry",
                    format!("unknown geometry `{other}`"),
                ))
            }
        };
        let mut events = Vec::new();
        let mut prev_t = f64::NEG_INFINITY;
        for ev in &c.events {
            if ev.t < prev_t {
                return Err(invalid("contacts.events", "events must be time-ordered"));
            }
            prev_t = ev.t;
            let action = match ev.action.as_str() {
                "engage" => ContactAction::Engage,
                "release" => ContactAction::Release,
                other => {
                    return Err(invalid(
                        "contacts.events.action",
                        format!("unknown action `{other}`"),
                    ))
                }
            };
            events.push(ContactScript {
                t: ev.t,
                action,
                duration: ev.duration,
            });
        }
        contacts.push(ScenarioContact {
            frame: c.frame.clone(),
            geometry,
            mu: c.mu,
            f_max: c.f_max,
            engaged_at_start: c.engaged_at_start,
            events,
        });
    }

    let (force_weight, relaxation_weight) = match doc.weights {
        Some(w) => (w.force, w.relaxation),
        None => (1.0, 100.0),
    };

    Ok(Scenario {
        model,
        initial_state: state,
        duration: doc.duration,
        dt: doc.dt,
        force_weight,
        relaxation_weight,
        internals,
        tasks,
        contacts,
        task_sets: doc.task_sets,
        transitions_enabled: true,
    })
}

/// Load a scenario from disk; the model path is resolved relative to the
/// scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base)
}
