use medex::corpus::{generate_synthetic_corpus, SyntheticCorpusSpec};
use medex::encoder::{EncoderConfig, TrainConfig};
use medex::ner::{default_ner_train_config, extract_mentions, train_ner};
use medex::textproc::train_subword_vocab;

#[test]
#[ignore]
fn debug_ner_overfit() {
    let docs = generate_synthetic_corpus(&SyntheticCorpusSpec {
        doc_count: 8,
        sentences_per_doc: (2, 4),
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
    let vocab = train_subword_vocab(&texts, 200).unwrap();
    println!("vocab size {}", vocab.len());
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        hidden_dim: 32,
        layers: 1,
        heads: 2,
        ffn_dim: 64,
        max_positions: 128,
        dropout: 0.0,
        seed: 4,
    };
    let tc = TrainConfig {
        learning_rate: 3e-4,
        epochs: 60,
        batch_size: 8,
        early_stop_train_f1: Some(0.99),
        ..default_ner_train_config(2)
    };
    let out = train_ner(&docs, &[], &cfg, &tc, &vocab).unwrap();
    println!("train f1 history: {:?}", out.train_span_f1);
    let preds = extract_mentions(&out.model, &vocab, &docs[0]);
    println!("doc0 text: {}", docs[0].text);
    println!("gold: {:?}", docs[0].mentions.iter().map(|m| (&m.text, m.start)).collect::<Vec<_>>());
    println!("pred: {:?}", preds.iter().map(|m| (&m.text, m.start)).collect::<Vec<_>>());
}
