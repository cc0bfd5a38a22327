use jumpctl_core::builtin;
use jumpctl_core::cost::mc_cost_estimate;
use jumpctl_core::feedback::oracle::{exact_feedback_dp, exact_open_loop_cost, uniformization_oracle};
use jumpctl_core::feedback::{solve_feedback_dp, DpOptions, TruncatedSpace};
use jumpctl_core::model::StagedHorizon;
use jumpctl_core::openloop::{enumerate_policies, policy_streams};
use jumpctl_core::policy::OpenLoopPolicy;
use jumpctl_core::rng::{tag, StreamFamily};
use jumpctl_core::simulate::{simulate_ssa, Method};

#[test]
fn ssa_endpoint_law_matches_uniformization() {
    let doc = builtin::document("birth_death_A1", 4).unwrap();
    let h = StagedHorizon::new(vec![0.0, 1.0]).unwrap();
    let policy = OpenLoopPolicy::new(vec![0]);
    let wide = TruncatedSpace::new(vec![0], vec![200]).unwrap();
    let mut init = vec![0.0; wide.len()];
    init[5] = 1.0;
    let exact = uniformization_oracle(&doc.model, 0, &wide, 1.0, &init, None).unwrap();
    assert!(exact.sink < 1e-12);

    let paths = 100_000u64;
    let fam = StreamFamily::new(11, tag::SIMULATE);
    let mut counts = vec![0u64; wide.len()];
    for i in 0..paths {
        let traj = simulate_ssa(&doc.model, &policy, &h, &[1.25], &mut fam.rng(i)).unwrap();
        let x = traj.final_state()[0] as usize;
        counts[x.min(wide.len() - 1)] += 1;
    }
    let tv: f64 = 0.5
        * counts
            .iter()
            .zip(&exact.dist)
            .map(|(&c, &p)| (c as f64 / paths as f64 - p).abs())
            .sum::<f64>();
    assert!(tv < 0.02, "total variation {tv}");
}

#[test]
fn open_loop_costs_match_exact_costs() {
    let doc = builtin::document("birth_death_A1", 10).unwrap();
    let wide = TruncatedSpace::new(vec![0], vec![400]).unwrap();
    let z0 = doc.initial.clone().unwrap();
    let mut within = 0;
    let all: Vec<_> = enumerate_policies(2, 3, 100).unwrap().collect();
    for (i, p) in all.iter().enumerate() {
        let (exact, sink) = exact_open_loop_cost(&doc.model, &doc.horizon, &doc.cost, p, &[12], &wide).unwrap();
        assert!(sink < 1e-10);
        let mc = mc_cost_estimate(
            &doc.model,
            p,
            &doc.cost,
            &doc.horizon,
            &z0,
            4000,
            policy_streams(5, i as u64, false),
            &Method::Ssa,
        )
        .unwrap();
        if (mc.mean - exact).abs() <= 3.0 * mc.stderr {
            within += 1;
        }
    }
    assert!(within >= 7, "{within} of 8 within 3 stderr");
}

#[test]
fn monte_carlo_dp_matches_exact_dp() {
    for name in ["birth_death_A1", "birth_death_A2"] {
        let doc = builtin::document(name, 10).unwrap();
        let cut = TruncatedSpace::new(vec![2], vec![25]).unwrap();
        let wide = TruncatedSpace::new(vec![0], vec![400]).unwrap();
        let exact = exact_feedback_dp(&doc.model, &doc.horizon, &doc.cost, &cut, &wide).unwrap();
        let mc = solve_feedback_dp(&doc.model, &doc.horizon, &doc.cost, &cut, &DpOptions::new(200, 3)).unwrap();
        let mut within = 0;
        let mut total = 0;
        for k in 0..3 {
            for i in 0..cut.len() {
                total += 1;
                let d = mc.table.values[k][i] - exact.values[k][i];
                if d.abs() <= 3.0 * mc.table.stderr[k][i] {
                    within += 1;
                }
            }
        }
        assert!(within as f64 >= 0.95 * total as f64, "{name}: {within}/{total}");
        // terminal values are exact
        assert!(mc.table.values[3].iter().zip(&exact.values[3]).all(|(a, b)| a == b));
    }
}
