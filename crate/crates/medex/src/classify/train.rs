//! Classifier training.
//!
//! MedSingleTask trains five independent encoder+head models: the event
//! model on every instance, each attribute model only on instances whose
//! gold event is a disposition. Every other architecture trains one
//! encoder with five heads under the mean of the per-task cross-entropy
//! losses; non-disposition instances carry `none` attribute gold.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::instances::{build_instances, ClassificationInstance};
use super::model::{
    backprop_features, build_features, predict_labels, Architecture, BundleKind, ClassifierBundle,
    MultiTaskModel, SingleTaskModel,
};
use crate::corpus::{Document, LabelSchema, DISPOSITION, TASKS};
use crate::encoder::{
    cross_entropy_mean, encoder_backward, encoder_forward_batch, AdamW, Batch, EncoderConfig,
    EncoderParams, Linear, TrainConfig,
};
use crate::eval::{mention_key, score_labels, LabelPair};
use crate::textproc::{TokenRange, Vocab};
use crate::{Error, Result};

pub fn default_clf_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 5e-5,
        batch_size: 32,
        epochs: 10,
        weight_decay: 0.01,
        seed,
        early_stop_train_f1: None,
    }
}

pub struct ClassifierTrainOutcome {
    pub bundle: ClassifierBundle,
    /// Overall micro F1 on the dev split per evaluation point.
    pub dev_overall_micro: Vec<f64>,
    /// Overall micro F1 on the training split per evaluation point,
    /// tracked when early stopping is on.
    pub train_overall_micro: Vec<f64>,
}

fn gold_class_indices(
    instances: &[ClassificationInstance],
    schema: &LabelSchema,
) -> Result<Vec<[usize; 5]>> {
    instances
        .iter()
        .map(|inst| {
            let gold = inst
                .gold
                .as_ref()
                .ok_or_else(|| Error::Config("training instance without gold labels".into()))?;
            let mut idx = [0usize; 5];
            for (t, task) in TASKS.iter().enumerate() {
                idx[t] = schema
                    .class_index(task, gold.label(task))
                    .ok_or_else(|| Error::LabelNotInSchema {
                        task: task.to_string(),
                        value: gold.label(task).to_string(),
                    })?;
            }
            Ok(idx)
        })
        .collect()
}

fn check_observed_classes(
    task: &str,
    golds: impl Iterator<Item = usize>,
) -> Result<()> {
    let observed: std::collections::BTreeSet<usize> = golds.collect();
    if observed.len() < 2 {
        return Err(Error::TooFewClasses {
            task: task.to_string(),
            observed: observed.len(),
        });
    }
    Ok(())
}

/// Overall micro F1 of the bundle on whole documents, via the same
/// prediction path used at inference time.
pub(crate) fn bundle_overall_micro(
    bundle: &ClassifierBundle,
    vocab: &Vocab,
    docs: &[Document],
) -> Result<f64> {
    let mut pairs = Vec::new();
    for doc in docs {
        let preds = predict_labels(bundle, vocab, doc, &doc.mentions)?;
        for (i, m) in doc.mentions.iter().enumerate() {
            let Some(gold) = doc.selected_annotation(i) else {
                continue;
            };
            let pred = preds
                .iter()
                .find(|p| p.mention.start == m.start && p.mention.end == m.end)
                .ok_or_else(|| Error::Numerical("missing prediction for mention".into()))?;
            pairs.push(LabelPair {
                key: mention_key(m),
                gold: gold.clone(),
                pred: pred.annotation.clone(),
            });
        }
    }
    if pairs.is_empty() {
        return Ok(0.0);
    }
    Ok(score_labels(&pairs, &bundle.schema).overall_micro_f1)
}

fn train_multitask(
    instances: &[ClassificationInstance],
    golds: &[[usize; 5]],
    architecture: Architecture,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    schema: &LabelSchema,
    vocab: &Vocab,
    train_docs: &[Document],
    dev_docs: &[Document],
) -> Result<ClassifierTrainOutcome> {
    let hidden = encoder_config.hidden_dim;
    let feature_dim = if architecture == Architecture::MedSpan {
        hidden * 2
    } else {
        hidden
    };
    let mut rng = ChaCha8Rng::seed_from_u64(encoder_config.seed);
    let model = MultiTaskModel {
        encoder: EncoderParams::init(encoder_config, &mut rng),
        heads: TASKS
            .iter()
            .map(|task| Linear::init(feature_dim, schema.classes(task).len(), &mut rng))
            .collect(),
    };
    let mut bundle = ClassifierBundle {
        architecture,
        schema: schema.clone(),
        config: encoder_config.clone(),
        kind: BundleKind::MultiTask(model),
    };

    let mut opt = AdamW::new(train_config.learning_rate, train_config.weight_decay);
    let mut train_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut dev_history = Vec::new();
    let mut train_history = Vec::new();

    let span_targets: Option<Vec<TokenRange>> = (architecture == Architecture::MedSpan).then(|| {
        instances
            .iter()
            .map(|i| i.target.expect("aware instance has a target"))
            .collect()
    });

    let mut order: Vec<usize> = (0..instances.len()).collect();
    for _epoch in 0..train_config.epochs {
        order.shuffle(&mut train_rng);
        for batch_ids in order.chunks(train_config.batch_size) {
            let BundleKind::MultiTask(model) = &mut bundle.kind else {
                unreachable!();
            };
            let seqs: Vec<&[u32]> = batch_ids
                .iter()
                .map(|&i| instances[i].ids.as_slice())
                .collect();
            let batch = Batch::from_sequences(&seqs);
            let fwd =
                encoder_forward_batch(&model.encoder, encoder_config, &batch, Some(&mut train_rng))?;
            let batch_targets: Option<Vec<TokenRange>> = span_targets
                .as_ref()
                .map(|all| batch_ids.iter().map(|&i| all[i]).collect());
            let (features, argmax_cache) = build_features(&fwd, &batch, batch_targets.as_deref());

            let per_task_logits: Vec<_> =
                model.heads.iter().map(|h| h.forward(&features)).collect();
            let per_task_gold: Vec<Vec<usize>> = (0..TASKS.len())
                .map(|t| batch_ids.iter().map(|&i| golds[i][t]).collect())
                .collect();
            let (_, d_logits) = super::model::multitask_loss(&per_task_logits, &per_task_gold);

            let mut grads = model.zeros_like();
            let mut d_features = ndarray::Array2::zeros(features.raw_dim());
            for ((head, d_l), g_head) in model
                .heads
                .iter()
                .zip(&d_logits)
                .zip(grads.heads.iter_mut())
            {
                d_features += &head.backward(&features, d_l, g_head);
            }
            let (d_pooled, d_hidden) =
                backprop_features(&d_features, argmax_cache.as_ref(), fwd.hidden.dim());
            encoder_backward(
                &model.encoder,
                encoder_config,
                &batch,
                &fwd,
                d_hidden,
                Some(&d_pooled),
                &mut grads.encoder,
            );
            opt.step(model, &grads)?;
        }

        if !dev_docs.is_empty() {
            dev_history.push(bundle_overall_micro(&bundle, vocab, dev_docs)?);
        }
        if let Some(target) = train_config.early_stop_train_f1 {
            let f1 = bundle_overall_micro(&bundle, vocab, train_docs)?;
            train_history.push(f1);
            if f1 >= target {
                break;
            }
        }
    }

    Ok(ClassifierTrainOutcome {
        bundle,
        dev_overall_micro: dev_history,
        train_overall_micro: train_history,
    })
}

fn train_single_task_component(
    instances: &[&ClassificationInstance],
    golds: &[usize],
    class_count: usize,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    init_seed: u64,
) -> Result<SingleTaskModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut model = SingleTaskModel {
        encoder: EncoderParams::init(encoder_config, &mut rng),
        head: Linear::init(encoder_config.hidden_dim, class_count, &mut rng),
    };
    let mut opt = AdamW::new(train_config.learning_rate, train_config.weight_decay);
    let mut train_rng = ChaCha8Rng::seed_from_u64(train_config.seed);

    let accuracy = |model: &SingleTaskModel| -> Result<f64> {
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (chunk_i, group) in instances.chunks(64).enumerate() {
            let seqs: Vec<&[u32]> = group.iter().map(|i| i.ids.as_slice()).collect();
            let batch = Batch::from_sequences(&seqs);
            let fwd = encoder_forward_batch(&model.encoder, encoder_config, &batch, None)?;
            let logits = model.head.forward(&fwd.pooled);
            for bi in 0..group.len() {
                let row = logits.row(bi);
                let mut best = 0usize;
                let mut best_v = f32::NEG_INFINITY;
                for (c, &v) in row.iter().enumerate() {
                    if v > best_v {
                        best = c;
                        best_v = v;
                    }
                }
                if best == golds[chunk_i * 64 + bi] {
                    correct += 1;
                }
                seen += 1;
            }
        }
        Ok(correct as f64 / seen.max(1) as f64)
    };

    let mut order: Vec<usize> = (0..instances.len()).collect();
    for _epoch in 0..train_config.epochs {
        order.shuffle(&mut train_rng);
        for batch_ids in order.chunks(train_config.batch_size) {
            let seqs: Vec<&[u32]> = batch_ids
                .iter()
                .map(|&i| instances[i].ids.as_slice())
                .collect();
            let batch = Batch::from_sequences(&seqs);
            let fwd =
                encoder_forward_batch(&model.encoder, encoder_config, &batch, Some(&mut train_rng))?;
            let logits = model.head.forward(&fwd.pooled);
            let targets: Vec<(usize, usize)> = batch_ids
                .iter()
                .enumerate()
                .map(|(bi, &i)| (bi, golds[i]))
                .collect();
            let (_, d_logits) = cross_entropy_mean(&logits, &targets);
            let mut grads = model.zeros_like();
            let d_pooled = model.head.backward(&fwd.pooled, &d_logits, &mut grads.head);
            let d_hidden = ndarray::Array2::zeros(fwd.hidden.dim());
            encoder_backward(
                &model.encoder,
                encoder_config,
                &batch,
                &fwd,
                d_hidden,
                Some(&d_pooled),
                &mut grads.encoder,
            );
            opt.step(&mut model, &grads)?;
        }
        if let Some(target) = train_config.early_stop_train_f1 {
            if accuracy(&model)? >= target {
                break;
            }
        }
    }
    Ok(model)
}

/// Trains a classifier bundle of the requested architecture.
/// Deterministic given the encoder and training seeds.
pub fn train_classifier(
    train_docs: &[Document],
    dev_docs: &[Document],
    architecture: Architecture,
    encoder_config: &EncoderConfig,
    train_config: &TrainConfig,
    schema: &LabelSchema,
    vocab: &Vocab,
) -> Result<ClassifierTrainOutcome> {
    encoder_config.validate()?;
    train_config.validate()?;
    schema.validate()?;
    if train_docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut instances = Vec::new();
    for doc in train_docs {
        instances.extend(build_instances(doc, &doc.mentions.clone(), architecture, vocab)?);
    }
    instances.retain(|i| i.gold.is_some());
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let golds = gold_class_indices(&instances, schema)?;

    if architecture == Architecture::MedSingleTask {
        let disposition_idx = schema
            .class_index("event", DISPOSITION)
            .ok_or_else(|| Error::Config("schema lacks the disposition event".into()))?;
        check_observed_classes("event", golds.iter().map(|g| g[0]))?;
        let mut models = Vec::with_capacity(TASKS.len());
        for (t, task) in TASKS.iter().enumerate() {
            let (subset, subset_golds): (Vec<&ClassificationInstance>, Vec<usize>) = if t == 0 {
                (instances.iter().collect(), golds.iter().map(|g| g[0]).collect())
            } else {
                instances
                    .iter()
                    .zip(&golds)
                    .filter(|(_, g)| g[0] == disposition_idx)
                    .map(|(i, g)| (i, g[t]))
                    .unzip()
            };
            if t > 0 {
                check_observed_classes(task, subset_golds.iter().copied())?;
            }
            if subset.is_empty() {
                return Err(Error::TooFewClasses {
                    task: task.to_string(),
                    observed: 0,
                });
            }
            models.push(train_single_task_component(
                &subset,
                &subset_golds,
                schema.classes(task).len(),
                encoder_config,
                train_config,
                encoder_config.seed.wrapping_add(t as u64),
            )?);
        }
        let bundle = ClassifierBundle {
            architecture,
            schema: schema.clone(),
            config: encoder_config.clone(),
            kind: BundleKind::SingleTask(models),
        };
        let train_metric = if train_config.early_stop_train_f1.is_some() {
            vec![bundle_overall_micro(&bundle, vocab, train_docs)?]
        } else {
            Vec::new()
        };
        let dev_metric = if dev_docs.is_empty() {
            Vec::new()
        } else {
            vec![bundle_overall_micro(&bundle, vocab, dev_docs)?]
        };
        return Ok(ClassifierTrainOutcome {
            bundle,
            dev_overall_micro: dev_metric,
            train_overall_micro: train_metric,
        });
    }

    for (t, task) in TASKS.iter().enumerate() {
        check_observed_classes(task, golds.iter().map(|g| g[t]))?;
    }
    train_multitask(
        &instances,
        &golds,
        architecture,
        encoder_config,
        train_config,
        schema,
        vocab,
        train_docs,
        dev_docs,
    )
}
