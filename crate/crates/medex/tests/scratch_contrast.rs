use medex::classify::{default_clf_train_config, predict_labels, train_classifier, Architecture};
use medex::corpus::{generate_synthetic_corpus, split_corpus, LabelSchema, SyntheticCorpusSpec};
use medex::encoder::{EncoderConfig, TrainConfig};
use medex::eval::{mention_key, score_labels, LabelPair};
use medex::textproc::train_subword_vocab;
use std::time::Instant;

#[test]
#[ignore]
fn contrast_experiment() {
    let docs = generate_synthetic_corpus(&SyntheticCorpusSpec {
        doc_count: 300,
        seed: 1234,
        ..Default::default()
    })
    .unwrap();
    let (train, _dev, test) = split_corpus(docs, [0.7, 0.1, 0.2], 9).unwrap();
    let texts: Vec<&str> = train.iter().map(|d| d.text.as_str()).collect();
    let vocab = train_subword_vocab(&texts, 320).unwrap();
    let schema = LabelSchema::default_schema();
    let enc = EncoderConfig {
        vocab_size: vocab.len(),
        hidden_dim: 128,
        layers: 2,
        heads: 4,
        ffn_dim: 256,
        max_positions: 160,
        dropout: 0.2,
        seed: 5,
    };
    let tc = TrainConfig {
        learning_rate: 1e-3,
        epochs: 80,
        batch_size: 32,
        early_stop_train_f1: Some(0.98),
        ..default_clf_train_config(3)
    };
    for arch in [
        Architecture::MedMultiTask,
        Architecture::MedIdentifiers,
        Architecture::MedIdTyped,
    ] {
        let t = Instant::now();
        let out = train_classifier(&train, &[], arch, &enc, &tc, &schema, &vocab).unwrap();
        let mut pairs = Vec::new();
        for doc in &test {
            let preds = predict_labels(&out.bundle, &vocab, doc, &doc.mentions).unwrap();
            for (i, m) in doc.mentions.iter().enumerate() {
                let gold = doc.selected_annotation(i).unwrap().clone();
                let pred = preds
                    .iter()
                    .find(|p| p.mention.start == m.start && p.mention.end == m.end)
                    .unwrap();
                pairs.push(LabelPair {
                    key: mention_key(m),
                    gold,
                    pred: pred.annotation.clone(),
                });
            }
        }
        let report = score_labels(&pairs, &schema);
        println!(
            "{arch}: test overall micro {:.3} (train history last {:?}, {} epochs, {:.0}s)",
            report.overall_micro_f1,
            out.train_overall_micro.last(),
            out.train_overall_micro.len(),
            t.elapsed().as_secs_f64()
        );
    }
}
