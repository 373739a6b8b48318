//! Closed-loop execution of a scenario: controller in, integrator out,
//! one trace record per control cycle.

use nalgebra::DVector;

use crate::controller::{wbdc_step, ControlError, ControllerConfig};

use super::scenario::Scenario;
use super::{integrate_step, ContactEvent, SimError, Trace, TraceRecord};

/// Result of a scenario run. A controller failure stops the run but the
/// trace up to the failing cycle is kept.
#[derive(Debug)]
pub struct RunOutcome {
    pub trace: Trace,
    /// `(time, error)` if the controller aborted the run.
    pub error: Option<(f64, ControlError)>,
}

/// Controller configuration taken from the scenario's weights.
pub fn controller_config(scenario: &Scenario) -> ControllerConfig {
    ControllerConfig {
        q1: scenario.force_weight,
        q2: scenario.relaxation_weight,
        ..ControllerConfig::default()
    }
}

/// Run the scenario from its initial state to `duration`.
///
/// Each cycle computes torques with the whole-body controller at the
/// current state, then advances the state one `dt` with the rigid-contact
/// integrator using the same contact set. Integration errors are hard
/// failures; controller errors end the run early with a partial trace.
pub fn run_scenario(scenario: &Scenario, cfg: &ControllerConfig) -> Result<RunOutcome, SimError> {
    let model = &scenario.model;
    let mut state = scenario.initial_state.clone();
    let steps = (scenario.duration / scenario.dt).round() as usize;

    let mut trace = Trace {
        force_layout: scenario
            .contacts
            .iter()
            .map(|c| (c.frame.clone(), c.wrench_dim()))
            .collect(),
        task_names: scenario.tasks.iter().map(|t| t.spec.name.clone()).collect(),
        ..Trace::default()
    };
    let total_force_dim: usize = trace.force_layout.iter().map(|(_, d)| d).sum();
    // Offset of each contact's block within the full force layout.
    let offsets: Vec<usize> = trace
        .force_layout
        .iter()
        .scan(0, |acc, (_, d)| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();

    for step in 0..steps {
        let t = step as f64 * scenario.dt;
        let tasks = scenario.tasks_at(t);
        let (contact_specs, active_contacts) = scenario.contacts_at(t);
        let active_idx = scenario.active_contact_indices(t);

        let out = match wbdc_step(model, &state, &tasks, &contact_specs, &scenario.internals, &cfg) {
            Ok(out) => out,
            Err(e) => {
                return Ok(RunOutcome {
                    trace,
                    error: Some((t, e)),
                });
            }
        };

        // Scatter active-contact forces into the full scenario layout.
        let mut forces = DVector::zeros(total_force_dim);
        let mut r0 = 0;
        for &ci in &active_idx {
            let dim = trace.force_layout[ci].1;
            forces
                .rows_mut(offsets[ci], dim)
                .copy_from(&out.reaction_forces.rows(r0, dim));
            r0 += dim;
        }

        // Scatter active-task residuals into scenario task order.
        let mut residuals = vec![0.0; scenario.tasks.len()];
        let mut k = 0;
        for (i, task) in scenario.tasks.iter().enumerate() {
            if task.active_at(t) {
                residuals[i] = out.diagnostics.task_residuals[k];
                k += 1;
            }
        }

        trace.records.push(TraceRecord {
            t,
            q: state.q.clone(),
            qdot: state.qdot.clone(),
            tau: out.tau.clone(),
            forces,
            delta: out.delta.clone(),
            residuals,
            solve_ms: out.diagnostics.solve_time.as_secs_f64() * 1e3,
        });

        let result = integrate_step(
            model,
            &state,
            &out.tau,
            &active_contacts,
            &scenario.internals,
            scenario.dt,
            &cfg.pinv,
        )?;
        for frame in result.released {
            log::info!("contact `{frame}` released by unilateral check at t = {t:.4}");
            trace.release_events.push(ContactEvent { t, frame });
        }
        state = result.state;
    }

    Ok(RunOutcome { trace, error: None })
}
