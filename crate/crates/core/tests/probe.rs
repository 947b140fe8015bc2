//! Timing probe, ignored by default.

use vgsloc::model::{Architecture, Model, ModelConfig};
use vgsloc::toygen::{generate_toy_corpus, TaggerNoise, ToyConfig};
use vgsloc::train::{load_train_data, TrainConfig};
use vgsloc::supervision::TargetKind;
use vgsloc::rng::Stream;

#[test]
#[ignore]
fn probe_batch_cost() {
    let toy = ToyConfig {
        vocab_size: 12,
        n_train: 16,
        n_dev: 4,
        n_test: 4,
        words_per_utt: (2, 3),
        word_dur_frames: (14, 20),
        feature_dim: 39,
        silence_prob: 0.8,
        silence_frames: (8, 18),
        tagger_noise: TaggerNoise { hit_mean: 0.9, false_alarm_rate: 0.05 },
        seed: 7,
        language_tag: "toy".into(),
    };
    let dir = std::env::temp_dir().join("vgsloc-probe");
    std::fs::remove_dir_all(&dir).ok();
    let manifest = generate_toy_corpus(&toy, &dir).unwrap();
    let data = load_train_data(&manifest, TargetKind::Bow).unwrap();
    let mcfg = ModelConfig {
        architecture: Architecture::CnnAttend,
        vocab_size: 12,
        feature_dim: 39,
        seed: 7,
        ..ModelConfig::default()
    };
    let model: Model<f32> = Model::new(&mcfg).unwrap();
    let tcfg = TrainConfig {
        learning_rate: 2e-3,
        batch_size: 4,
        supervision: TargetKind::Bow,
        augment_enabled: true,
        ..TrainConfig::default()
    };
    let root = Stream::new(0);

    // Forward-only timing.
    let t0 = std::time::Instant::now();
    for item in &data.train {
        let _ = model.forward(&item.features).unwrap();
    }
    eprintln!("16 forwards: {:.2?}", t0.elapsed());

    // Forward+backward timing via batch_step path.
    use vgsloc::train::batch_probe;
    let t0 = std::time::Instant::now();
    for chunk in data.train.chunks(4) {
        let items: Vec<_> = chunk.iter().map(|it| (it, root.derive(&it.id, 0))).collect();
        let _ = batch_probe(&model, &items, &tcfg).unwrap();
    }
    eprintln!("16 fwd+bwd (4 batches): {:.2?}", t0.elapsed());
    std::fs::remove_dir_all(&dir).ok();
}
