use freeride::detect::Detector;
use freeride::engine::{honest_local_round, run_experiment, RoundRecord, Simulation};
use freeride::rng::{self, tag};
use freeride::ExperimentConfig;

fn cfg(text: &str) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        "clients = 5\nrounds = 6\ndata.samples_per_client = 60\n{text}"
    ))
    .unwrap()
}

/// Size-weighted mean written out coordinate by coordinate.
fn weighted_mean(record: &RoundRecord, keep: &[usize]) -> Vec<f64> {
    let base = record.state.global.params().values();
    let total: usize = keep.iter().map(|&n| record.state.sizes[n]).sum();
    (0..base.len())
        .map(|i| {
            keep.iter()
                .map(|&n| (base[i] + record.state.updates[n].values()[i]) * record.state.sizes[n] as f64)
                .sum::<f64>()
                / total as f64
        })
        .collect()
}

#[test]
fn next_global_is_weighted_mean_of_reconstructed_models() {
    let run = run_experiment(&cfg("fr.clients = 1:lin\ndetect.list = l2\n")).unwrap();
    for pair in run.records.windows(2) {
        let expect = weighted_mean(&pair[0], &[0, 1, 2, 3, 4]);
        let got = pair[1].state.global.params().values();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

fn first_canary_window(config: &ExperimentConfig) -> freeride::data::Dataset {
    Simulation::new(config)
        .unwrap()
        .canaries()
        .unwrap()
        .window(1)
        .unwrap()
        .batch
}

#[test]
fn honest_update_replays_from_its_own_stream() {
    let config = cfg("detect.list = std\n");
    let mut sim = Simulation::new(&config).unwrap();
    let shard = sim.shards()[2].clone();
    let global = sim.global().clone();
    let record = sim.step().unwrap().unwrap();
    let mut stream = rng::stream(config.seed, &[tag::CLIENT, 2, 1]);
    let window = first_canary_window(&config);
    let train = &config.train;
    let local = honest_local_round(
        &global,
        &shard,
        Some(&window),
        train,
        train.local_epochs,
        train.canary_epochs,
        &mut stream,
    )
    .unwrap();
    assert_eq!(global.params().add(&record.state.updates[2]).unwrap(), local);
}

#[test]
fn a_role_change_leaves_other_clients_untouched() {
    let honest = Simulation::new(&cfg("detect.list = l2\n")).unwrap().run().unwrap();
    let with_fr = Simulation::new(&cfg("fr.clients = 0:fraboni\ndetect.list = l2\n"))
        .unwrap()
        .run()
        .unwrap();
    assert_ne!(honest[0].state.updates[0], with_fr[0].state.updates[0]);
    for n in 1..5 {
        assert_eq!(honest[0].state.updates[n], with_fr[0].state.updates[n]);
    }
}

#[test]
fn equal_seeds_replay_and_other_seeds_differ() {
    let text = "fr.clients = 0:zhu\ndetect.list = loss,cosine,diversity,cosim\n";
    let a = run_experiment(&cfg(text)).unwrap();
    let b = run_experiment(&cfg(text)).unwrap();
    let c = run_experiment(&cfg(&format!("seed = 99\n{text}"))).unwrap();
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(x.outputs, y.outputs);
        assert_eq!(x.test_accuracy.to_bits(), y.test_accuracy.to_bits());
    }
    assert_ne!(a.records.last().unwrap().outputs, c.records.last().unwrap().outputs);
}

#[test]
fn oracle_mitigation_aggregates_honest_clients_only() {
    let run = run_experiment(&cfg(
        "fr.clients = 0:fraboni, 3:lin\ndetect.list = oracle\nmitigate = oracle\n",
    ))
    .unwrap();
    for pair in run.records.windows(2) {
        assert_eq!(pair[0].excluded, vec![0, 3]);
        let expect = weighted_mean(&pair[0], &[1, 2, 4]);
        let got = pair[1].state.global.params().values();
        assert!(got
            .iter()
            .zip(&expect)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())));
    }
    let flags = &run.records[0].output(Detector::Oracle).unwrap().flags;
    assert_eq!(flags, &run.truth);
}

#[test]
fn canary_windows_do_not_overlap() {
    let run = run_experiment(&cfg("detect.list = loss\ncanary.size = 10\n")).unwrap();
    let mut seen = std::collections::HashSet::new();
    for r in &run.records {
        assert_eq!(r.state.canary_indices.len(), 10);
        for &i in &r.state.canary_indices {
            assert!(seen.insert(i), "canary {i} reused");
        }
    }
}

#[test]
fn runs_without_canary_training_or_scoring_skip_canaries() {
    let sim = Simulation::new(&cfg("detect.list = diversity\ncanary.epochs = 0\n")).unwrap();
    assert!(sim.canaries().is_none());
    let record = sim.run().unwrap().remove(0);
    assert!(record.state.canary_indices.is_empty());
    assert!(record.matrices.is_empty());
    assert_eq!(record.distributions.unwrap().len(), 5);
}
