use medex::corpus::{generate_synthetic_corpus, SyntheticCorpusSpec, TASKS};
use medex::textproc::segment_sentences;
use std::collections::BTreeMap;

#[test]
#[ignore]
fn agnostic_oracle_ceiling() {
    let docs = generate_synthetic_corpus(&SyntheticCorpusSpec {
        doc_count: 120,
        seed: 42,
        ..Default::default()
    })
    .unwrap();
    // Oracle agnostic classifier: per sentence, pick the per-task majority
    // label; count per-task correctness over mentions.
    let mut correct = vec![0usize; 5];
    let mut total = 0usize;
    for doc in &docs {
        let sentences = segment_sentences(&doc.text);
        let mut by_sent: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (mi, m) in doc.mentions.iter().enumerate() {
            let si = sentences
                .iter()
                .position(|s| m.start >= s.start && m.end <= s.end)
                .unwrap();
            by_sent.entry(si).or_default().push(mi);
        }
        for (_, mentions) in by_sent {
            total += mentions.len();
            for (t, task) in TASKS.iter().enumerate() {
                let labels: Vec<&str> = mentions
                    .iter()
                    .map(|&mi| doc.annotations[mi][0].label(task))
                    .collect();
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for l in &labels {
                    *counts.entry(l).or_default() += 1;
                }
                let best = counts.values().max().copied().unwrap_or(0);
                correct[t] += best;
            }
        }
    }
    let mut overall = 0.0;
    for (t, task) in TASKS.iter().enumerate() {
        let acc = correct[t] as f64 / total as f64;
        overall += acc / 5.0;
        println!("{task}: ceiling {acc:.3}");
    }
    println!("overall agnostic ceiling: {overall:.3} over {total} mentions");
}
