use medex::classify::{train_classifier, default_clf_train_config, Architecture};
use medex::corpus::{generate_synthetic_corpus, LabelSchema, SyntheticCorpusSpec};
use medex::encoder::{EncoderConfig, TrainConfig};
use medex::textproc::train_subword_vocab;
use std::time::Instant;

#[test]
#[ignore]
fn sweep_multitask() {
    let spec = SyntheticCorpusSpec {
        doc_count: 40,
        sentences_per_doc: (4, 6),
        shared_context_fraction: 1.0,
        seed: 11,
        ..Default::default()
    };
    let docs = generate_synthetic_corpus(&spec).unwrap();
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let vocab = train_subword_vocab(&texts, 300).unwrap();
    let schema = LabelSchema::default_schema();

    for (label, h, ffn, lr, drop, bs) in [
        ("drop0", 64usize, 128usize, 1e-3f64, 0.0f64, 32usize),
        ("lr2e3-drop0", 64, 128, 2e-3, 0.0, 32),
        ("h128-drop0", 128, 256, 1e-3, 0.0, 32),
        ("bs16-drop0", 64, 128, 1e-3, 0.0, 16),
        ("bs16-lr2e3", 64, 128, 2e-3, 0.0, 16),
    ] {
        let enc = EncoderConfig {
            vocab_size: vocab.len(),
            hidden_dim: h,
            layers: 2,
            heads: 4,
            ffn_dim: ffn,
            max_positions: 160,
            dropout: drop,
            seed: 5,
        };
        let tc = TrainConfig {
            learning_rate: lr,
            epochs: 50,
            batch_size: bs,
            early_stop_train_f1: Some(0.97),
            ..default_clf_train_config(3)
        };
        let t = Instant::now();
        let out = train_classifier(&docs, &[], Architecture::MedMultiTask, &enc, &tc, &schema, &vocab).unwrap();
        let last = out.train_overall_micro.last().copied().unwrap_or(0.0);
        println!(
            "{label}: final={last:.3} epochs={} time={:.1}s",
            out.train_overall_micro.len(),
            t.elapsed().as_secs_f64()
        );
    }
}
