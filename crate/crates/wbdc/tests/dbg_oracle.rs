//! Scratch diagnostics (deleted before release).

use std::path::Path;

use wbdc::controller::{build_context, synthesize_task, wbdc_step};
use wbdc::linalg::{dyn_consistent_inv_floored, projected_task_floor};
use wbdc::sim::{controller_config, integrate_step, load_scenario};

#[test]
fn span_margin_over_time() {
    let sc = load_scenario(Path::new(&format!(
        "{}/fixtures/scenarios/humanoid_com_sine.json",
        env!("CARGO_MANIFEST_DIR")
    )))
    .unwrap();
    let cfg = controller_config(&sc);
    let model = &sc.model;
    let nf = model.floating_dim();
    let mut state = sc.initial_state.clone();
    let steps = (sc.duration / sc.dt).round() as usize;
    let mut peak = 0.0f64;
    for step in 0..steps {
        let t = step as f64 * sc.dt;
        let tasks = sc.tasks_at(t);
        let (specs, active) = sc.contacts_at(t);
        let ctx = build_context(model, &state, &sc.internals, &specs, &cfg).unwrap();
        let data0 = synthesize_task(model, &state, &tasks[0].0, &tasks[0].1).unwrap();
        let j1p = &data0.j * &ctx.n_ci;
        let floor = projected_task_floor(&data0.j, &ctx.internal.a_inv, &cfg.pinv).unwrap();
        let jbar1p = &ctx.n_ci
            * dyn_consistent_inv_floored(&j1p, &ctx.internal.a_inv, &cfg.pinv, floor).unwrap();
        let n_prec = &ctx.n_ci - &jbar1p * &j1p;
        let s_f_a = ctx.terms.a.rows(0, nf).into_owned();
        let sfan = &s_f_a * &n_prec;
        let ratio = sfan.singular_values().max() / s_f_a.norm();
        peak = peak.max(ratio);
        if step % 250 == 0 || ratio > 5e-7 {
            let sv1 = {
                let svd = j1p.clone().svd(false, false);
                let mut v: Vec<f64> = svd.singular_values.iter().cloned().collect();
                v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                (v[0], v[5])
            };
            let leak_contact = (&ctx.j_contact * &n_prec).amax();
            let leak_task = (&data0.j * &n_prec).amax();
            let leak_nci = (&s_f_a * &ctx.n_ci).norm();
            let jc_sv = {
                let svd = ctx.j_contact.clone().svd(false, false);
                let mut v: Vec<f64> = svd.singular_values.iter().cloned().collect();
                v.sort_by(|a, b| b.partial_cmp(a).unwrap());
                (v[0], v[v.len() - 1])
            };
            println!(
                "t={t:.3} sv_ratio={ratio:.3e} peak={peak:.3e} j1p sv1/sv6 = {:.3e}/{:.3e} \
                 leak(jc*nprec)={leak_contact:.3e} leak(j1*nprec)={leak_task:.3e} \
                 |sfa*nci|={leak_nci:.3e} jc sv {:.3e}/{:.3e}",
                sv1.0, sv1.1, jc_sv.0, jc_sv.1
            );
        }
        let out = match wbdc_step(model, &state, &tasks, &specs, &sc.internals, &cfg) {
            Ok(o) => o,
            Err(e) => {
                println!("abort at t={t:.3}: {e}");
                return;
            }
        };
        state = integrate_step(model, &state, &out.tau, &active, &sc.internals, sc.dt, &cfg.pinv)
            .unwrap()
            .state;
    }
    println!("done, peak={peak:.3e}");
}
