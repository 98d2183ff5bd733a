use cran_core::baselines::{brute_force_oracle, local_search, mrt_uniform, LocalSearchConfig};
use cran_core::channel::InstanceSpec;
use cran_core::system::{sum_rate, SystemInstance};
use cran_core::verify::{network_gradient_error, scalar_closed_form};

fn instances(m: usize, k: usize, n: usize, seed: u64) -> Vec<SystemInstance> {
    InstanceSpec::new(m, k).sample_range(seed, 0, n).unwrap().into_iter().map(SystemInstance::new).collect()
}

#[test]
fn scalar_baselines_reach_closed_form() {
    for inst in instances(1, 1, 50, 21) {
        let exact = scalar_closed_form(&inst);
        let ls = local_search(&inst, &LocalSearchConfig::default()).unwrap();
        assert!((ls.sum_rate - exact).abs() < 1e-6);
        let (grid, _) = brute_force_oracle(&inst, 32).unwrap();
        assert!((grid - exact).abs() < 1e-3);
    }
}

#[test]
fn two_ap_local_search_matches_grid() {
    for inst in instances(2, 1, 5, 22) {
        let ls = local_search(&inst, &LocalSearchConfig::default()).unwrap();
        let (grid, _) = brute_force_oracle(&inst, 192).unwrap();
        assert!((ls.sum_rate - grid).abs() < 1e-3, "local search {} grid {grid}", ls.sum_rate);
    }
}

#[test]
fn local_search_never_loses_to_mrt() {
    for (m, k) in [(2, 2), (3, 3), (4, 2), (6, 6)] {
        for inst in instances(m, k, 10, 23) {
            let (v, omega) = mrt_uniform(&inst);
            let mrt = sum_rate(inst.h(), &v, &omega);
            let ls = local_search(&inst, &LocalSearchConfig::default()).unwrap();
            assert!(ls.sum_rate >= mrt - 1e-12);
        }
    }
}

#[test]
fn network_pipeline_gradients_match_finite_differences() {
    for case in 0..5 {
        let err = network_gradient_error(31, case).unwrap();
        assert!(err < 1e-4, "case {case}: relative error {err:e}");
    }
}
