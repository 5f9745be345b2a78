use knn_descent::dataset;
use knn_descent::descent::{self, Kernel};
use knn_descent::oracle;
use knn_descent::{RunParams, Strategy};

#[test]
fn every_configuration_converges_on_low_dimensional_data() {
    let ds = dataset::gen_gaussian(3000, 6, false, 10).unwrap();
    let exact = oracle::brute_force_knng(&ds, 12).unwrap();
    for strategy in Strategy::ALL {
        for kernel in [Kernel::Blocked, Kernel::Scalar] {
            for reorder in [false, true] {
                let params = RunParams { k: 12, strategy, kernel, reorder, seed: 10, ..Default::default() };
                let out = descent::run(&ds, &params).unwrap();
                let r = oracle::recall(&out.graph, &exact).unwrap();
                assert!(r > 0.99, "{strategy} {kernel:?} reorder={reorder}: recall {r}");
                assert_eq!(out.graph.validate(), Ok(()));
                assert_eq!(out.permutation.is_some(), reorder);
            }
        }
    }
}

#[test]
fn kernels_give_identical_runs() {
    let ds = dataset::gen_gaussian(1200, 19, true, 11).unwrap();
    let run = |kernel| descent::run(&ds, &RunParams { k: 10, kernel, seed: 11, ..Default::default() }).unwrap();
    let (a, b) = (run(Kernel::Blocked), run(Kernel::Scalar));
    assert_eq!(a.graph, b.graph);
    assert_eq!(a.metrics.total_dist_evals(), b.metrics.total_dist_evals());
}

#[test]
fn recall_rises_and_changes_fall() {
    let ds = dataset::gen_gaussian(4000, 8, false, 12).unwrap();
    let exact = oracle::brute_force_knng(&ds, 20).unwrap();
    let mut recalls = Vec::new();
    let params = RunParams { seed: 12, ..Default::default() };
    let out = descent::run_observed(&ds, &params, |_, g| recalls.push(oracle::recall(g, &exact).unwrap())).unwrap();
    assert_eq!(recalls.len(), out.metrics.iterations.len());
    assert!(recalls.windows(2).all(|w| w[1] >= w[0] - 1e-3), "{recalls:?}");
    let changes: Vec<u64> = out.metrics.iterations[1..].iter().map(|m| m.changes).collect();
    assert!(changes.windows(2).all(|w| w[1] <= w[0]), "{changes:?}");
    let threshold = params.termination_delta * (4000 * 20) as f64;
    let last = *changes.last().unwrap() as f64;
    assert!(last < threshold || out.metrics.iteration_count() == params.max_iterations);
}

#[test]
fn reorder_metrics_land_on_the_chosen_iteration() {
    let (ds, _) = dataset::gen_clustered(2000, 8, 4, 13).unwrap();
    let params = RunParams { reorder: true, reorder_after_iteration: 2, seed: 13, ..Default::default() };
    let out = descent::run(&ds, &params).unwrap();
    for m in &out.metrics.iterations {
        assert_eq!(m.reorder_time.is_zero(), m.iteration != 2, "iteration {}", m.iteration);
    }
    let mut csv = Vec::new();
    out.metrics.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), out.metrics.iterations.len() + 2);
}

#[test]
fn seeds_change_the_run() {
    let ds = dataset::gen_gaussian(500, 8, false, 14).unwrap();
    let run = |seed| descent::run(&ds, &RunParams { k: 10, seed, max_iterations: 1, ..Default::default() }).unwrap();
    assert_ne!(run(1).graph, run(2).graph);
}
