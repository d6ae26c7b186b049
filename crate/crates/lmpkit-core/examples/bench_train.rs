use lmpkit_core::metrics::entropy_report;
use lmpkit_core::pooling::PoolKind;
use lmpkit_core::synth::{generate_dataset, SceneSpec};
use lmpkit_core::trainer::{accuracy, train, TrainConfig};

fn main() {
    let spec = SceneSpec::default();
    let (train_set, test_set) = generate_dataset(&spec, 500, 100, 0).unwrap();
    for (batch, lr) in [(256usize, 0.1), (256, 0.2), (64, 0.05)] {
        println!("=== batch {batch} lr {lr}");
        let mut rows = Vec::new();
        for (name, kind) in [("avg", PoolKind::Average), ("max", PoolKind::Max), ("lmp", PoolKind::LeakyMax)] {
            let cfg = TrainConfig { pooling_kind: kind, batch_size: batch, learning_rate: lr, ..TrainConfig::default() };
            let out = train(&cfg, &train_set).unwrap();
            let acc = accuracy(&out.primary, &test_set).unwrap();
            println!("{name}: acc {acc:.4} final_loss {:.4}", out.history.last().unwrap().loss);
            rows.push((name, out));
        }
        let refs: Vec<(&str, &lmpkit_core::trainer::ToyModel)> = rows.iter().map(|(n, o)| (*n, &o.primary)).collect();
        for row in entropy_report(&refs, &test_set).unwrap() {
            println!("entropy {}: mean {:.4} std {:.4}", row.label, row.mean_entropy, row.std_entropy);
        }
    }
}
