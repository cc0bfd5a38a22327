use proptest::prelude::*;
use rand::Rng;

use jumpctl_core::bounds::{
    ak_bk, ak_bk_closed, c_tn, cost_bound, derive_constants, bregman_power_check, tube_gamma, verify_martingale,
    RecursionInputs,
};
use jumpctl_core::builtin;
use jumpctl_core::cost::{mc_cost_estimate, ode_cost};
use jumpctl_core::hybrid::kdtree::{nearest_linear, KdTree};
use jumpctl_core::model::{DensityBox, StagedHorizon};
use jumpctl_core::odelimit::integrate_piecewise;
use jumpctl_core::openloop::{enumerate_policies, policy_streams, rank_policies, RankOptions};
use jumpctl_core::policy::OpenLoopPolicy;
use jumpctl_core::rng::{tag, StreamFamily};
use jumpctl_core::simulate::Method;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn bregman_power_randomized() {
    let mut rng = StreamFamily::new(1, tag::BOUNDS).rng(0);
    for alpha in [1.1, 1.5, 1.9] {
        for _ in 0..100_000 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (m, b) = bregman_power_check(&z, &w, alpha);
            assert!(m >= -1e-12 && m <= b + 1e-12, "α={alpha} z={z:?} w={w:?}: {m} vs {b}");
        }
    }
}

proptest! {
    #[test]
    fn bregman_power_small_scales(
        z in prop::collection::vec(-1e-3f64..1e-3, 3),
        w in prop::collection::vec(-2.0f64..2.0, 3),
        alpha in 1.01f64..2.0,
    ) {
        let (m, b) = bregman_power_check(&z, &w, alpha);
        prop_assert!(m >= -1e-12 && m <= b + 1e-12);
    }

    #[test]
    fn recursion_equals_closed_form(
        k in 1usize..12,
        h in 0.05f64..2.0,
        l_f in prop_oneof![Just(0.0), 0.0f64..1.5],
        l_r in 0.0f64..3.0,
        l_phi in 0.0f64..3.0,
        l_psi in 0.0f64..3.0,
        m_bar in 0.0f64..50.0,
        c_hn in 0.0f64..2.0,
    ) {
        let horizon = StagedHorizon::uniform(k, h).unwrap();
        let p = RecursionInputs { l_f, l_r, l_phi, l_psi, m_bar, c_hn };
        let r = ak_bk(&p, &horizon);
        let c = ak_bk_closed(&p, &horizon);
        for j in 0..=k {
            prop_assert!(close(r.a[j], c.a[j], 1e-10), "a[{}]: {} vs {}", j, r.a[j], c.a[j]);
            prop_assert!(close(r.b[j], c.b[j], 1e-10) || (r.b[j] - c.b[j]).abs() < 1e-12, "b[{}]: {} vs {}", j, r.b[j], c.b[j]);
        }
    }

    #[test]
    fn kd_tree_equals_linear_scan_3d(
        pts in prop::collection::vec((-20i64..20, -20i64..20, -20i64..20), 1..150),
        q in (-25i64..25, -25i64..25, -25i64..25),
    ) {
        let flat: Vec<i64> = pts.iter().flat_map(|&(a, b, c)| [a, b, c]).collect();
        let t = KdTree::build(3, &flat);
        let q = [q.0, q.1, q.2];
        let (ti, td) = t.nearest(&q).unwrap();
        let (li, ld) = nearest_linear(3, &flat, &q).unwrap();
        prop_assert_eq!(td, ld);
        prop_assert_eq!(&flat[ti * 3..ti * 3 + 3], &flat[li * 3..li * 3 + 3]);
    }
}

#[test]
fn kd_tree_large_random_suite() {
    let mut rng = StreamFamily::new(2, tag::STAGE_SETS).rng(0);
    let flat: Vec<i64> = (0..20_000).map(|_| rng.random_range(0..300)).collect();
    let t = KdTree::build(2, &flat);
    for _ in 0..1000 {
        let q = [rng.random_range(-20..320), rng.random_range(-20..320)];
        let (ti, td) = t.nearest(&q).unwrap();
        let (li, ld) = nearest_linear(2, &flat, &q).unwrap();
        assert_eq!(td, ld);
        assert_eq!(&flat[ti * 2..ti * 2 + 2], &flat[li * 2..li * 2 + 2]);
    }
}

#[test]
fn c_tn_is_monotone_in_n() {
    let doc = builtin::document("predator_prey", 100).unwrap();
    let omega = DensityBox::new(vec![0.0, 0.0], vec![5.0, 5.0]).unwrap();
    for alpha in [1.2, 1.5, 2.0] {
        let c = derive_constants(&doc.model, &doc.cost, &omega, alpha).unwrap();
        let mut prev = f64::INFINITY;
        for n in [10, 50, 100, 1000, 10_000] {
            let v = c_tn(&c, 1.0, n);
            assert!(v <= prev);
            prev = v;
        }
    }
}

#[test]
fn rk4_is_fourth_order() {
    let m = builtin::birth_death_a1(100).unwrap();
    let h = StagedHorizon::new(vec![0.0, 2.0]).unwrap();
    let exact = 1.2 * 0.8f64.exp();
    let err = |dt: f64| (integrate_piecewise(&m, &[0], &[1.2], &h, dt).unwrap().end()[0] - exact).abs();
    let (e1, e2) = (err(0.2), err(0.1));
    let order = (e1 / e2).log2();
    assert!(order >= 3.8, "observed order {order}");
}

#[test]
fn martingale_has_zero_mean() {
    for (name, n, policy, z0) in [
        ("birth_death_A1", 200, vec![1, 1, 0], vec![1.2]),
        ("predator_prey", 100, vec![0, 2, 1, 0, 2], vec![1.0, 0.4]),
    ] {
        let doc = builtin::document(name, n).unwrap();
        let w = verify_martingale(&doc.model, &doc.horizon, &OpenLoopPolicy::new(policy), &z0, 4000, 9).unwrap();
        for e in w {
            assert!(e.mean.abs() < 3.0 * e.stderr, "{name}: {e:?}");
        }
    }
}

#[test]
fn determinism_and_worker_invariance() {
    let doc = builtin::document("birth_death_A2", 100).unwrap();
    let z0 = doc.initial.clone().unwrap();
    let opts = RankOptions::monte_carlo(Method::Ssa, 300, 17);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| rank_policies(&doc.model, &doc.horizon, &doc.cost, &z0, &opts).unwrap().to_csv())
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(4));
}

#[test]
fn tau_leaping_costs_agree_with_ssa() {
    for (name, n, policy) in [("birth_death_A1", 1000, vec![1, 1, 0]), ("predator_prey", 500, vec![0, 2, 1, 0, 2])] {
        let doc = builtin::document(name, n).unwrap();
        let z0 = doc.initial.clone().unwrap();
        let p = OpenLoopPolicy::new(policy);
        let est = |method: Method, seed| {
            mc_cost_estimate(&doc.model, &p, &doc.cost, &doc.horizon, &z0, 1000, policy_streams(seed, 0, false), &method)
                .unwrap()
        };
        let ssa = est(Method::Ssa, 1);
        let tau = est(Method::tau(0.03), 2);
        assert!((tau.mean - ssa.mean).abs() <= 0.02 * ssa.mean, "{name}: {ssa:?} vs {tau:?}");
    }
}

#[test]
fn cost_bound_holds_for_birth_death() {
    let doc = builtin::document("birth_death_A1", 100).unwrap();
    let z0 = doc.initial.clone().unwrap();
    let omega = DensityBox::new(vec![0.0], vec![6.0]).unwrap();
    let all: Vec<OpenLoopPolicy> = enumerate_policies(2, 3, 100).unwrap().collect();
    let gamma = tube_gamma(&doc.model, &doc.horizon, &z0, &omega, &all, 1e-3).unwrap();
    let consts = derive_constants(&doc.model, &doc.cost, &omega, 2.0).unwrap().with_gamma(gamma);
    for n in [40, 100, 500, 4000] {
        let m = doc.model.with_scaling(n).unwrap();
        for (i, p) in all.iter().enumerate() {
            let limit = ode_cost(&integrate_piecewise(&m, p.controls(), &z0, &doc.horizon, 1e-3).unwrap(), &doc.cost, &doc.horizon);
            let mc = mc_cost_estimate(&m, p, &doc.cost, &doc.horizon, &z0, 200, policy_streams(3, i as u64, false), &Method::Ssa).unwrap();
            let bound = cost_bound(&consts, &doc.horizon, n, 0.0).unwrap();
            assert!((mc.mean - limit).abs() <= bound, "N={n} {}: gap {} bound {bound}", p.label(), (mc.mean - limit).abs());
        }
    }
}
