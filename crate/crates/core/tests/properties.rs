use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stlppc::funnel::{inverse_transform, transform, FunnelParams, GammaParams, Side};
use stlppc::hybrid::{detect, jump, AgentPlan, HybridCtx, HybridState, JumpKind, RepairState};
use stlppc::io::{eval_trace, parse_trace_csv, trajectory_csv};
use stlppc::scenario::{load_scenario, Scenario};
use stlppc::sim::{build_plans, run};
use stlppc::stl::softmin;
use stlppc::world::NoiseModel;
use stlppc::AgentId;

fn scenario2() -> Scenario {
    load_scenario(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/scenario2.json")).unwrap()
}

/// Random reachable hybrid states: the funnel ceiling sits above the current
/// robustness and `r` below the optimum.
fn random_states(
    sc: &Scenario,
    plans: &BTreeMap<AgentId, AgentPlan>,
    seed: u64,
    x: &mut Vec<f64>,
) -> BTreeMap<AgentId, HybridState> {
    let layout = sc.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    *x = (0..layout.len()).map(|_| rng.gen_range(0.0..100.0)).collect();
    let x = &*x;
    sc.agents
        .iter()
        .map(|a| {
            let unit = plans[&a.id].units.first();
            let rho = unit.map_or(0.0, |u| u.psi.smooth(x));
            let rho_opt = unit.map_or(0.0, |u| u.rho_opt);
            let rho_max = rho + rng.gen_range(0.01..40.0);
            let gamma = rng.gen_range(0.1..80.0);
            let collab = if rng.gen_bool(0.2) { -1 } else { 0 };
            let state = HybridState {
                agent: a.id,
                x: layout.block(x, a.id).unwrap().to_vec(),
                clock: rng.gen_range(0.0..16.0),
                funnel: FunnelParams {
                    t_star: 10.0,
                    rho_max,
                    r: rho_max.min(rho_opt) - rng.gen_range(0.01..40.0),
                    gamma: GammaParams {
                        gamma_ref: gamma,
                        gamma_inf: gamma * rng.gen_range(0.1..1.0),
                        l: rng.gen_range(0.0..1.0),
                        t_ref: 0.0,
                    },
                },
                repair: RepairState {
                    n_repairs: rng.gen_range(0..3),
                    collab,
                },
                unit_index: 0,
                helping: None,
            };
            (a.id, state)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn softmin_lies_between_min_minus_log_q_and_min(v in prop::collection::vec(-10.0f64..10.0, 1..=8)) {
        let m = v.iter().copied().fold(f64::INFINITY, f64::min);
        let s = softmin(&v);
        let tol = 1e-12 * m.abs().max(1.0);
        prop_assert!(s <= m + tol);
        prop_assert!(s >= m - (v.len() as f64).ln() - tol);
    }

    #[test]
    fn transform_inverts(xi in -0.999f64..-0.001) {
        let back = inverse_transform(transform(xi));
        prop_assert!((back - xi).abs() < 1e-12);
    }

    #[test]
    fn transform_is_increasing(a in -0.999f64..-0.001, b in -0.999f64..-0.001) {
        prop_assume!(a < b);
        prop_assert!(transform(a) < transform(b));
    }

    #[test]
    fn noise_is_independent_of_call_order(seed in any::<u64>(), steps in prop::collection::vec(0u64..10_000, 1..20)) {
        let noise = NoiseModel {
            half_widths: [(1, vec![0.5, 0.5]), (2, vec![1.0, 0.1, 0.2])].into_iter().collect(),
            seed,
        };
        let forward: Vec<_> = steps.iter().map(|s| (noise.sample(*s, 1), noise.sample(*s, 2))).collect();
        let mut backward: Vec<_> = steps.iter().rev().map(|s| {
            let b = noise.sample(*s, 2);
            (noise.sample(*s, 1), b)
        }).collect();
        backward.reverse();
        prop_assert_eq!(forward, backward);
        for s in &steps {
            for (w, h) in noise.sample(*s, 2).iter().zip([1.0, 0.1, 0.2]) {
                prop_assert!(w.abs() <= h);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn jumps_respect_repair_invariants(seed in any::<u64>()) {
        let sc = scenario2();
        let layout = sc.layout();
        let plans = build_plans(&sc, &layout).unwrap();
        let mut x = Vec::new();
        let states = random_states(&sc, &plans, seed, &mut x);
        let ctx = HybridCtx { plans: &plans, cfg: &sc.controller, dt: sc.sim.dt, x: &x };
        let delta = sc.controller.delta;
        for (id, before) in &states {
            let Some(kind) = detect(*id, &states, &ctx).unwrap() else { continue };
            let after = jump(*id, kind, &states, &ctx).unwrap();
            prop_assert_eq!(after.clock, before.clock);
            prop_assert_eq!(&after.x, &before.x);
            prop_assert!(after.repair.n_repairs >= before.repair.n_repairs);
            match kind {
                JumpKind::Stage3 { side } => {
                    let expected = match side {
                        Side::Lower => before.funnel.r - delta,
                        Side::Upper => before.funnel.r,
                    };
                    prop_assert_eq!(after.funnel.r, expected);
                    prop_assert_eq!(after.repair.n_repairs, before.repair.n_repairs);
                }
                JumpKind::Stage1 => {
                    prop_assert!(after.funnel.r < before.funnel.r);
                    prop_assert_eq!(after.repair.n_repairs, before.repair.n_repairs + 1);
                }
                JumpKind::Stage2Initiate => {
                    prop_assert!(after.funnel.r < before.funnel.r);
                }
                _ => {}
            }
            if matches!(kind, JumpKind::Stage1 | JumpKind::Stage2Initiate | JumpKind::Stage3 { .. }) {
                let rho = ctx.rho(*id, before.unit_index).unwrap();
                if rho < after.funnel.rho_max {
                    let xi = after.funnel.xi(rho, after.clock);
                    prop_assert!(xi > -1.0 && xi < 0.0, "xi {} after {:?}", xi, kind);
                }
            }
        }
    }
}

#[test]
fn stage3_lowers_by_exactly_delta_in_scenario2() {
    let sc = scenario2();
    let out = run(&sc).unwrap();
    let lowers: Vec<_> = out.events.iter().filter(|e| e.kind == "stage3_lower").collect();
    assert!(!lowers.is_empty());
    for e in lowers {
        assert_eq!(e.after.r, e.before.r - sc.controller.delta);
        assert_eq!(e.after.n_repairs, e.before.n_repairs);
    }
    for e in &out.events {
        assert!(e.after.n_repairs >= e.before.n_repairs);
    }
}

#[test]
fn summary_robustness_matches_eval_on_emitted_csv() {
    let sc = scenario2();
    let out = run(&sc).unwrap();
    let trace = parse_trace_csv(&trajectory_csv(&out.trajectory)).unwrap();
    for a in &out.summary.agents {
        let Some(task) = sc.tasks.get(&a.agent) else {
            continue;
        };
        let Some(expected) = a.units.iter().map(|u| u.robustness).collect::<Option<Vec<_>>>() else {
            continue;
        };
        if expected.len() != 1 {
            continue;
        }
        let got = eval_trace(&trace, &task.source, 0.0).unwrap();
        assert!(
            (got.value - expected[0]).abs() <= 1e-9,
            "agent {}: {} vs {}",
            a.agent,
            got.value,
            expected[0]
        );
    }
}
