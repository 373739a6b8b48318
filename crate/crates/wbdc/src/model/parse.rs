//! JSON model description ingestion.
//!
//! Schema (lengths in meters, masses in kilograms, angles in radians):
//! ```json
//! {
//!   "gravity": [0.0, 0.0, -9.81],
//!   "bodies": [{"name": "torso", "mass": 8.0, "com": [0,0,0],
//!               "inertia": [0.1, 0.1, 0.05, 0.0, 0.0, 0.0]}],
//!   "joints": [{"name": "root", "type": "floating_6dof", "parent": "world",
//!               "child": "torso", "origin_xyz": [0,0,0],
//!               "origin_rpy": [0,0,0], "axis": [0,0,1]}],
//!   "actuated": ["l_hip_pitch"],
//!   "frames": [{"name": "l_foot", "body": "l_shank", "offset_xyz": [0,0,-0.3]}]
//! }
//! ```
//! `inertia` lists `(xx, yy, zz, xy, xz, yz)` about the body CoM.

use std::collections::HashMap;

use nalgebra::{Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::Deserialize;

use super::{Body, Frame, Joint, JointKind, ModelError, RobotModel};

#[derive(Deserialize)]
struct ModelDoc {
    gravity: [f64; 3],
    bodies: Vec<BodyDoc>,
    joints: Vec<JointDoc>,
    #[serde(default)]
    actuated: Vec<String>,
    #[serde(default)]
    frames: Vec<FrameDoc>,
}

#[derive(Deserialize)]
struct BodyDoc {
    name: String,
    mass: f64,
    com: [f64; 3],
    inertia: [f64; 6],
}

#[derive(Deserialize)]
struct JointDoc {
    name: String,
    #[serde(rename = "type")]
    kind: JointKindDoc,
    parent: String,
    child: String,
    #[serde(default)]
    origin_xyz: [f64; 3],
    #[serde(default)]
    origin_rpy: [f64; 3],
    #[serde(default = "default_axis")]
    axis: [f64; 3],
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Deserialize, Clone, Copy, PartialEq)]
enum JointKindDoc {
    #[serde(rename = "floating_6dof", alias = "floating-6dof", alias = "floating")]
    Floating,
    #[serde(rename = "revolute")]
    Revolute,
    #[serde(rename = "prismatic")]
    Prismatic,
}

#[derive(Deserialize)]
struct FrameDoc {
    name: String,
    body: String,
    offset_xyz: [f64; 3],
}

fn invalid(field: &str, msg: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field: field.to_string(),
        msg: msg.into(),
    }
}

/// Parse and validate a model description document.
pub fn load_model(text: &str) -> Result<RobotModel, ModelError> {
    let doc: ModelDoc = serde_json::from_str(text)?;

    if doc.bodies.is_empty() {
        return Err(invalid("bodies", "at least one body is required"));
    }
    let mut body_index = HashMap::new();
    let mut bodies = Vec::with_capacity(doc.bodies.len());
    for b in &doc.bodies {
        if body_index.insert(b.name.clone(), bodies.len()).is_some() {
            return Err(invalid("bodies", format!("duplicate body `{}`", b.name)));
        }
        if !(b.mass > 0.0) {
            return Err(invalid(
                &format!("bodies.{}.mass", b.name),
                format!("mass must be positive, got {}", b.mass),
            ));
        }
        let [xx, yy, zz, xy, xz, yz] = b.inertia;
        let inertia = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
        if nalgebra::Cholesky::new(inertia).is_none() {
            return Err(invalid(
                &format!("bodies.{}.inertia", b.name),
                "inertia matrix must be symmetric positive definite",
            ));
        }
        bodies.push(Body {
            name: b.name.clone(),
            mass: b.mass,
            com: Vector3::from(b.com),
            inertia,
        });
    }

    if doc.joints.len() != bodies.len() {
        return Err(ModelError::Topology(format!(
            "{} joints cannot produce {} bodies (each body needs exactly one parent joint)",
            doc.joints.len(),
            bodies.len()
        )));
    }

    let n_float = doc
        .joints
        .iter()
        .filter(|j| j.kind == JointKindDoc::Floating)
        .count();
    if n_float > 1 {
        return Err(ModelError::Topology(
            "at most one floating_6dof joint is allowed".into(),
        ));
    }
    let floating = n_float == 1;
    if floating {
        let fj = doc
            .joints
            .iter()
            .find(|j| j.kind == JointKindDoc::Floating)
            .unwrap();
        if fj.parent != "world" {
            return Err(ModelError::Topology(
                "the floating_6dof joint must attach to `world`".into(),
            ));
        }
    }

    // Order joints so parents come first (world roots first).
    let mut remaining: Vec<usize> = (0..doc.joints.len()).collect();
    let mut ordered: Vec<usize> = Vec::new();
    let mut produced: HashMap<&str, ()> = HashMap::new();
    let mut child_seen: HashMap<&str, ()> = HashMap::new();
    for j in &doc.joints {
        if child_seen.insert(j.child.as_str(), ()).is_some() {
            return Err(ModelError::Topology(format!(
                "body `{}` has more than one parent joint",
                j.child
            )));
        }
        if !body_index.contains_key(&j.child) {
            return Err(invalid(
                &format!("joints.{}.child", j.name),
                format!("unknown body `{}`", j.child),
            ));
        }
        if j.parent != "world" && !body_index.contains_key(&j.parent) {
            return Err(invalid(
                &format!("joints.{}.parent", j.name),
                format!("unknown body `{}`", j.parent),
            ));
        }
    }
    while !remaining.is_empty() {
        let before = ordered.len();
        remaining.retain(|&ji| {
            let j = &doc.joints[ji];
            if j.parent == "world" || produced.contains_key(j.parent.as_str()) {
                produced.insert(j.child.as_str(), ());
                ordered.push(ji);
                false
            } else {
                true
            }
        });
        if ordered.len() == before {
            return Err(ModelError::Topology(
                "joint graph contains a cycle or an unreachable body".into(),
            ));
        }
    }
    if floating && doc.joints[ordered[0]].kind != JointKindDoc::Floating {
        return Err(ModelError::Topology(
            "the floating_6dof joint must be the tree root".into(),
        ));
    }

    let mut joints = Vec::with_capacity(ordered.len());
    let mut dof = 0usize;
    let mut nq = 0usize;
    for &ji in &ordered {
        let j = &doc.joints[ji];
        let kind = match j.kind {
            JointKindDoc::Floating => JointKind::Floating,
            JointKindDoc::Revolute => JointKind::Revolute,
            JointKindDoc::Prismatic => JointKind::Prismatic,
        };
        if kind == JointKind::Floating && ji != ordered[0] {
            return Err(ModelError::Topology(
                "floating_6dof joints are only allowed at the root".into(),
            ));
        }
        let axis_v = Vector3::from(j.axis);
        if kind != JointKind::Floating && axis_v.norm() < 1e-12 {
            return Err(invalid(
                &format!("joints.{}.axis", j.name),
                "axis must be nonzero",
            ));
        }
        let axis = Unit::new_normalize(if axis_v.norm() > 0.0 {
            axis_v
        } else {
            Vector3::z()
        });
        let [roll, pitch, yaw] = j.origin_rpy;
        let rot = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
        let origin = Isometry3::from_parts(Translation3::from(Vector3::from(j.origin_xyz)), rot);
        let parent = if j.parent == "world" {
            None
        } else {
            Some(body_index[&j.parent])
        };
        let (dsz, qsz) = match kind {
            JointKind::Floating => (6, 7),
            _ => (1, 1),
        };
        joints.push(Joint {
            name: j.name.clone(),
            kind,
            parent,
            child: body_index[&j.child],
            origin,
            axis,
            dof_start: dof,
            q_start: nq,
        });
        dof += dsz;
        nq += qsz;
    }

    let mut actuated_dofs = Vec::with_capacity(doc.actuated.len());
    for name in &doc.actuated {
        let jt = joints
            .iter()
            .find(|j| &j.name == name)
            .ok_or_else(|| invalid("actuated", format!("unknown joint `{}`", name)))?;
        if jt.kind == JointKind::Floating {
            return Err(invalid(
                "actuated",
                format!("floating joint `{}` cannot be actuated", name),
            ));
        }
        if actuated_dofs.contains(&jt.dof_start) {
            return Err(invalid("actuated", format!("duplicate joint `{}`", name)));
        }
        actuated_dofs.push(jt.dof_start);
    }

    let mut frames = Vec::with_capacity(doc.frames.len());
    for f in &doc.frames {
        let body = *body_index
            .get(&f.body)
            .ok_or_else(|| invalid(&format!("frames.{}.body", f.name), "unknown body"))?;
        if frames.iter().any(|fr: &Frame| fr.name == f.name) {
            return Err(invalid("frames", format!("duplicate frame `{}`", f.name)));
        }
        frames.push(Frame {
            name: f.name.clone(),
            body,
            offset: Vector3::from(f.offset_xyz),
        });
    }

    // Per-body producing joint and ancestor dof path.
    let mut body_joint = vec![usize::MAX; bodies.len()];
    for (ji, j) in joints.iter().enumerate() {
        body_joint[j.child] = ji;
    }
    if body_joint.iter().any(|&ji| ji == usize::MAX) {
        return Err(ModelError::Topology("a body has no parent joint".into()));
    }
    let mut body_path: Vec<Vec<usize>> = vec![Vec::new(); bodies.len()];
    for j in &joints {
        let mut path = match j.parent {
            Some(p) => body_path[p].clone(),
            None => Vec::new(),
        };
        let dsz = if j.kind == JointKind::Floating { 6 } else { 1 };
        path.extend(j.dof_start..j.dof_start + dsz);
        body_path[j.child] = path;
    }

    Ok(RobotModel {
        bodies,
        joints,
        frames,
        gravity: Vector3::from(doc.gravity),
        actuated_dofs,
        dof,
        nq,
        floating,
        body_joint,
        body_path,
    })
}
