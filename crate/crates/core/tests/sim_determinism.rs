use toolgraph_rl::memory::ToolGraph;
use toolgraph_rl::par::Execution;
use toolgraph_rl::retrieval::TrigramEmbedder;
use toolgraph_rl::sim::{generate_dataset, new_policy, run_training, IterationMetrics};
use toolgraph_rl::RunConfig;

fn train(execution: Execution, workers: usize, seed: u64) -> (Vec<IterationMetrics>, ToolGraph) {
    let mut cfg = RunConfig::default();
    cfg.sim.seed = seed;
    cfg.sim.execution = execution;
    cfg.sim.workers = workers;
    let data = generate_dataset(&cfg.dataset).unwrap();
    let mut p = new_policy(cfg.sim.temperature);
    let mut g = ToolGraph::new(cfg.graph.similarity_threshold);
    let m = run_training(&data, &mut p, &mut g, &cfg, &TrigramEmbedder::default(), 0..30, &mut |_| {}).unwrap();
    (m, g)
}

#[test]
fn schedule_does_not_change_results() {
    let reference = train(Execution::Sequential, 0, 3);
    for workers in [0, 1, 3] {
        assert_eq!(train(Execution::Parallel, workers, 3), reference);
    }
}

#[test]
fn seeds_change_trajectories() {
    assert_ne!(train(Execution::Sequential, 0, 3).0, train(Execution::Sequential, 0, 4).0);
}

#[test]
fn resumed_training_matches_a_single_run() {
    let mut cfg = RunConfig::default();
    cfg.sim.seed = 5;
    let data = generate_dataset(&cfg.dataset).unwrap();
    let e = TrigramEmbedder::default();
    let (mut p1, mut g1) = (new_policy(1.0), ToolGraph::new(0.85));
    let whole = run_training(&data, &mut p1, &mut g1, &cfg, &e, 0..12, &mut |_| {}).unwrap();
    let (mut p2, mut g2) = (new_policy(1.0), ToolGraph::new(0.85));
    let mut split = run_training(&data, &mut p2, &mut g2, &cfg, &e, 0..5, &mut |_| {}).unwrap();
    let mut g2 = ToolGraph::from_json(&g2.to_json(), "mem").unwrap();
    split.extend(run_training(&data, &mut p2, &mut g2, &cfg, &e, 5..12, &mut |_| {}).unwrap());
    assert_eq!(whole, split);
    assert_eq!(g1.structure(), g2.structure());
}
