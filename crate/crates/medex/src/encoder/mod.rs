//! Miniature trainable transformer encoder.
//!
//! Per-token hidden states plus a pooled sequence state from the first
//! position through a trained affine map and tanh. Training uses AdamW;
//! parameters persist in a versioned binary container; a central-difference
//! gradient checker verifies the hand-written backward pass. The numeric
//! core is generic over f32 (training) and f64 (verification).

mod adamw;
mod checkpoint;
mod forward;
mod params;

pub use adamw::{AdamW, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use forward::{
    cross_entropy_mean, encoder_backward, encoder_forward_batch, softmax_rows, Batch, Forward,
};
pub use params::{
    flatten_f64, unflatten_f64, EncoderParams, LayerNorm, LayerParams, Linear, ParamVisit, Scalar,
};

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Encoder shape and regularization settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    /// Desk-scale defaults: trainable in minutes on CPU while exercising
    /// every architectural path.
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 2000,
            hidden_dim: 128,
            layers: 2,
            heads: 4,
            ffn_dim: 256,
            max_positions: 512,
            dropout: 0.2,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
            ("max_positions", self.max_positions),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("encoder {name} must be positive")));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "heads ({}) must divide hidden_dim ({})",
                self.heads, self.hidden_dim
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        kv.insert("vocab_size".into(), self.vocab_size.to_string());
        kv.insert("hidden_dim".into(), self.hidden_dim.to_string());
        kv.insert("layers".into(), self.layers.to_string());
        kv.insert("heads".into(), self.heads.to_string());
        kv.insert("ffn_dim".into(), self.ffn_dim.to_string());
        kv.insert("max_positions".into(), self.max_positions.to_string());
        kv.insert("dropout".into(), self.dropout.to_string());
        kv.insert("seed".into(), self.seed.to_string());
        kv
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        fn get<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
            kv.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad config key '{key}'")))
        }
        let cfg = EncoderConfig {
            vocab_size: get(kv, "vocab_size")?,
            hidden_dim: get(kv, "hidden_dim")?,
            layers: get(kv, "layers")?,
            heads: get(kv, "heads")?,
            ffn_dim: get(kv, "ffn_dim")?,
            max_positions: get(kv, "max_positions")?,
            dropout: get(kv, "dropout")?,
            seed: get(kv, "seed")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Optimization settings. AdamW moments use the fixed (0.9, 0.999, 1e-8)
/// constants from [`adamw`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop early once the training-set metric reaches this value.
    pub early_stop_train_f1: Option<f64>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate must be positive, decay non-negative".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Hidden states and pooled state for one sequence.
#[derive(Debug, Clone)]
pub struct EncoderOutput<F> {
    pub hidden: Array2<F>,
    pub pooled: Array1<F>,
}

/// Single-sequence forward pass. Masked positions are hidden from
/// attention keys; pass a dropout RNG only in training mode.
pub fn encoder_forward<F: Scalar>(
    params: &EncoderParams<F>,
    config: &EncoderConfig,
    ids: &[u32],
    attention_mask: &[bool],
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<EncoderOutput<F>> {
    let batch = Batch::single(ids, attention_mask);
    let fwd = encoder_forward_batch(params, config, &batch, dropout_rng)?;
    Ok(EncoderOutput {
        hidden: fwd.hidden,
        pooled: fwd.pooled.row(0).to_owned(),
    })
}

/// Owned f32 tensors for every block, in visit order.
pub fn params_to_tensors<M: ParamVisit<f32>>(m: &M) -> Vec<(String, ArrayD<f32>)> {
    m.blocks()
        .into_iter()
        .map(|(name, view)| (name, view.to_owned()))
        .collect()
}

/// Fills a parameter structure from named tensors, requiring every block
/// present with exactly matching shape. This is also the hook for loading
/// externally produced weights of compatible shapes.
pub fn fill_params_from_tensors<M: ParamVisit<f32>>(
    m: &mut M,
    tensors: &[(String, ArrayD<f32>)],
) -> Result<()> {
    let map: BTreeMap<&str, &ArrayD<f32>> =
        tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for (name, mut view) in m.blocks_mut() {
        let tensor = map
            .get(name.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter block '{name}'")))?;
        if tensor.shape() != view.shape() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for '{name}': file {:?}, model {:?}",
                tensor.shape(),
                view.shape()
            )));
        }
        view.assign(tensor);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_block: String,
    pub coords_checked: usize,
}

/// Central-difference gradient check over a seeded random subsample of
/// coordinates, at least one per parameter block. `loss` is evaluated on
/// perturbed copies of the flat parameter vector; relative error is
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check(
    theta: &[f64],
    analytic: &[f64],
    layout: &[(String, usize)],
    loss: &mut dyn FnMut(&[f64]) -> f64,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> GradCheckReport {
    let total: usize = layout.iter().map(|(_, l)| l).sum();
    assert_eq!(total, theta.len(), "layout does not match parameter vector");
    assert_eq!(theta.len(), analytic.len());

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<usize> = Vec::new();
    let mut offset = 0;
    for (_, len) in layout {
        let share = ((n_samples * len) / total.max(1)).max(1).min(*len);
        for _ in 0..share {
            coords.push(offset + rand::Rng::gen_range(&mut rng, 0..*len));
        }
        offset += len;
    }
    coords.sort_unstable();
    coords.dedup();

    let block_of = |idx: usize| -> &str {
        let mut off = 0;
        for (name, len) in layout {
            if idx < off + len {
                return name;
            }
            off += len;
        }
        "?"
    };

    let mut work = theta.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    for &i in &coords {
        let orig = work[i];
        work[i] = orig + epsilon;
        let up = loss(&work);
        work[i] = orig - epsilon;
        let down = loss(&work);
        work[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
            worst = block_of(i).to_string();
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        worst_block: worst,
        coords_checked: coords.len(),
    }
}

impl EncoderParams<f32> {
    /// Zero-valued parameters of the configured shape, for filling from a
    /// checkpoint.
    pub fn zeros(config: &EncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = EncoderParams::init(config, &mut rng);
        for (_, mut b) in p.blocks_mut() {
            b.fill(0.0);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Axis;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 20,
            hidden_dim: 8,
            layers: 2,
            heads: 2,
            ffn_dim: 16,
            max_positions: 16,
            dropout: 0.2,
            seed: 3,
        }
    }

    fn init(config: &EncoderConfig) -> EncoderParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        EncoderParams::init(config, &mut rng)
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let config = tiny_config();
        let params = init(&config);
        let ids = [1u32, 4, 9, 2, 7];
        let mask = [true; 5];
        let a = encoder_forward(&params, &config, &ids, &mask, None).unwrap();
        let b = encoder_forward(&params, &config, &ids, &mask, None).unwrap();
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.pooled, b.pooled);
    }

    #[test]
    fn masked_position_does_not_leak_into_others() {
        let config = tiny_config();
        let params = init(&config);
        let mask = [true, true, false, true, true];
        let out1 = encoder_forward(&params, &config, &[1, 4, 9, 2, 7], &mask, None).unwrap();
        let out2 = encoder_forward(&params, &config, &[1, 4, 13, 2, 7], &mask, None).unwrap();
        for i in [0usize, 1, 3, 4] {
            for (a, b) in out1.hidden.row(i).iter().zip(out2.hidden.row(i).iter()) {
                assert!((a - b).abs() < 1e-12, "row {i} changed");
            }
        }
        assert_eq!(out1.pooled, out2.pooled);
    }

    #[test]
    fn single_token_pooled_is_tanh_affine_of_hidden() {
        let config = tiny_config();
        let params = init(&config);
        let out = encoder_forward(&params, &config, &[5], &[true], None).unwrap();
        let h0 = out.hidden.row(0);
        let expected = params
            .pooler
            .forward(&h0.to_owned().insert_axis(Axis(0)))
            .mapv(f64::tanh);
        for (a, b) in out.pooled.iter().zip(expected.row(0).iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn id_out_of_range_is_rejected() {
        let config = tiny_config();
        let params = init(&config);
        let err = encoder_forward(&params, &config, &[25], &[true], None).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn over_long_sequence_is_rejected() {
        let config = tiny_config();
        let params = init(&config);
        let ids: Vec<u32> = (0..17).map(|i| i % 20).collect();
        let mask = vec![true; ids.len()];
        assert!(encoder_forward(&params, &config, &ids, &mask, None).is_err());
    }

    #[test]
    fn train_mode_dropout_depends_on_rng_seed() {
        let mut config = tiny_config();
        config.dropout = 0.5;
        let params = init(&config);
        let ids = [1u32, 4, 9];
        let mask = [true; 3];
        let mut rng1 = ChaCha8Rng::seed_from_u64(10);
        let mut rng2 = ChaCha8Rng::seed_from_u64(10);
        let mut rng3 = ChaCha8Rng::seed_from_u64(11);
        let a = encoder_forward(&params, &config, &ids, &mask, Some(&mut rng1)).unwrap();
        let b = encoder_forward(&params, &config, &ids, &mask, Some(&mut rng2)).unwrap();
        let c = encoder_forward(&params, &config, &ids, &mask, Some(&mut rng3)).unwrap();
        assert_eq!(a.hidden, b.hidden);
        assert_ne!(a.hidden, c.hidden);
    }

    /// Composite of the encoder and a per-token linear head, used to drive
    /// the gradient checker through every parameter block.
    struct TokenTagger {
        enc: EncoderParams<f64>,
        head: Linear<f64>,
    }

    impl ParamVisit<f64> for TokenTagger {
        fn blocks(&self) -> Vec<(String, ndarray::ArrayViewD<'_, f64>)> {
            let mut v = self.enc.blocks();
            for (n, b) in self.head.blocks() {
                v.push((format!("head.{n}"), b));
            }
            v
        }
        fn blocks_mut(&mut self) -> Vec<(String, ndarray::ArrayViewMutD<'_, f64>)> {
            let mut v = self.enc.blocks_mut();
            for (n, b) in self.head.blocks_mut() {
                v.push((format!("head.{n}"), b));
            }
            v
        }
    }

    fn tagger_loss(model: &TokenTagger, config: &EncoderConfig, batch: &Batch) -> f64 {
        let fwd = encoder_forward_batch(&model.enc, config, batch, None).unwrap();
        let logits = model.head.forward(&fwd.hidden);
        let targets: Vec<(usize, usize)> = (0..batch.ids.len()).map(|i| (i, i % 3)).collect();
        cross_entropy_mean(&logits, &targets).0
    }

    fn tagger_grads(model: &TokenTagger, config: &EncoderConfig, batch: &Batch) -> TokenTagger {
        let fwd = encoder_forward_batch(&model.enc, config, batch, None).unwrap();
        let logits = model.head.forward(&fwd.hidden);
        let targets: Vec<(usize, usize)> = (0..batch.ids.len()).map(|i| (i, i % 3)).collect();
        let (_, d_logits) = cross_entropy_mean(&logits, &targets);
        let mut grads = TokenTagger {
            enc: model.enc.zeros_like(),
            head: model.head.zeros_like(),
        };
        let d_hidden = model.head.backward(&fwd.hidden, &d_logits, &mut grads.head);
        encoder_backward(&model.enc, config, batch, &fwd, d_hidden, None, &mut grads.enc);
        grads
    }

    #[test]
    fn full_model_gradient_check_passes() {
        let mut config = tiny_config();
        config.dropout = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = TokenTagger {
            enc: EncoderParams::init(&config, &mut rng),
            head: Linear::init(config.hidden_dim, 3, &mut rng),
        };
        let batch = Batch::from_sequences(&[vec![1u32, 7, 3, 12], vec![4u32, 4, 9]]);
        let grads = tagger_grads(&model, &config, &batch);
        let (theta, layout) = flatten_f64(&model);
        let (flat_grads, _) = flatten_f64(&grads);
        let config2 = config.clone();
        let batch2 = batch.clone();
        let mut loss = move |flat: &[f64]| {
            unflatten_f64(&mut model, flat);
            tagger_loss(&model, &config2, &batch2)
        };
        let report = gradient_check(&theta, &flat_grads, &layout, &mut loss, 1e-4, 400, 99);
        assert!(
            report.max_rel_error < 1e-3,
            "max rel error {} in {}",
            report.max_rel_error,
            report.worst_block
        );
    }

    #[test]
    fn pooled_path_gradient_check_passes() {
        let mut config = tiny_config();
        config.dropout = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut enc = EncoderParams::<f64>::init(&config, &mut rng);
        let head = Linear::<f64>::init(config.hidden_dim, 4, &mut rng);
        let batch = Batch::from_sequences(&[vec![2u32, 8, 3], vec![11u32, 1, 1, 6]]);

        let compute = |enc: &EncoderParams<f64>, want_grads: bool| {
            let fwd = encoder_forward_batch(enc, &config, &batch, None).unwrap();
            let logits = head.forward(&fwd.pooled);
            let targets = vec![(0usize, 1usize), (1, 3)];
            let (loss, d_logits) = cross_entropy_mean(&logits, &targets);
            if !want_grads {
                return (loss, None);
            }
            let mut grads = enc.zeros_like();
            let mut head_grads = head.zeros_like();
            let d_pooled = head.backward(&fwd.pooled, &d_logits, &mut head_grads);
            let d_hidden = Array2::zeros(fwd.hidden.raw_dim());
            encoder_backward(enc, &config, &batch, &fwd, d_hidden, Some(&d_pooled), &mut grads);
            (loss, Some(grads))
        };

        let (_, grads) = compute(&enc, true);
        let (theta, layout) = flatten_f64(&enc);
        let (flat_grads, _) = flatten_f64(&grads.unwrap());
        let mut loss = |flat: &[f64]| {
            unflatten_f64(&mut enc, flat);
            compute(&enc, false).0
        };
        let report = gradient_check(&theta, &flat_grads, &layout, &mut loss, 1e-4, 300, 42);
        assert!(
            report.max_rel_error < 1e-3,
            "max rel error {} in {}",
            report.max_rel_error,
            report.worst_block
        );
    }

    #[test]
    fn head_with_cross_entropy_gradient_check_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut head = Linear::<f64>::init(6, 4, &mut rng);
        let x = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j * 3) as f64).sin() * 0.3);
        let targets: Vec<(usize, usize)> = (0..5).map(|i| (i, i % 4)).collect();

        let logits = head.forward(&x);
        let (_, d_logits) = cross_entropy_mean(&logits, &targets);
        let mut grads = head.zeros_like();
        head.backward(&x, &d_logits, &mut grads);

        let (theta, layout) = flatten_f64(&head);
        let (flat_grads, _) = flatten_f64(&grads);
        let mut loss = |flat: &[f64]| {
            unflatten_f64(&mut head, flat);
            cross_entropy_mean(&head.forward(&x), &targets).0
        };
        let report = gradient_check(&theta, &flat_grads, &layout, &mut loss, 1e-4, 28, 17);
        assert!(report.max_rel_error < 1e-4, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn corrupted_gradient_reports_half_relative_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut head = Linear::<f64>::init(4, 3, &mut rng);
        let x = Array2::from_shape_fn((4, 4), |(i, j)| ((i + 2 * j) as f64).cos() * 0.5);
        let targets: Vec<(usize, usize)> = (0..4).map(|i| (i, i % 3)).collect();

        let logits = head.forward(&x);
        let (_, d_logits) = cross_entropy_mean(&logits, &targets);
        let mut grads = head.zeros_like();
        head.backward(&x, &d_logits, &mut grads);
        // Corrupt every analytic gradient by a factor of two.
        for (_, mut b) in grads.blocks_mut() {
            b.mapv_inplace(|v| v * 2.0);
        }

        let (theta, layout) = flatten_f64(&head);
        let (flat_grads, _) = flatten_f64(&grads);
        let mut loss = |flat: &[f64]| {
            unflatten_f64(&mut head, flat);
            cross_entropy_mean(&head.forward(&x), &targets).0
        };
        let report = gradient_check(&theta, &flat_grads, &layout, &mut loss, 1e-4, 15, 17);
        assert!(
            (report.max_rel_error - 0.5).abs() < 0.01,
            "expected ~0.5, got {}",
            report.max_rel_error
        );
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        // Overfit sanity: 8 fixed sequences, loss strictly decreases over
        // the first 20 AdamW steps at the default learning rate.
        let config = EncoderConfig {
            vocab_size: 30,
            hidden_dim: 16,
            layers: 2,
            heads: 2,
            ffn_dim: 32,
            max_positions: 12,
            dropout: 0.0,
            seed: 21,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut enc = EncoderParams::<f32>::init(&config, &mut rng);
        let mut head = Linear::<f32>::init(config.hidden_dim, 2, &mut rng);
        let seqs: Vec<Vec<u32>> = (0..8).map(|i| vec![i + 1, (i * 3) % 30, 5, i]).collect();
        let batch = Batch::from_sequences(&seqs);
        let targets: Vec<(usize, usize)> = (0..8).map(|b| (b, (b % 2) as usize)).collect();

        let mut opt_enc = AdamW::new(5e-5, 0.0);
        let mut opt_head = AdamW::new(5e-5, 0.0);
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let fwd = encoder_forward_batch(&enc, &config, &batch, None).unwrap();
            let logits = head.forward(&fwd.pooled);
            let (loss, d_logits) = cross_entropy_mean(&logits, &targets);
            assert!(loss < prev, "loss rose at step {step}: {loss} vs {prev}");
            prev = loss;
            let mut g_enc = enc.zeros_like();
            let mut g_head = head.zeros_like();
            let d_pooled = head.backward(&fwd.pooled, &d_logits, &mut g_head);
            let d_hidden = Array2::zeros(fwd.hidden.raw_dim());
            encoder_backward(&enc, &config, &batch, &fwd, d_hidden, Some(&d_pooled), &mut g_enc);
            opt_enc.step(&mut enc, &g_enc).unwrap();
            opt_head.step(&mut head, &g_head).unwrap();
        }
    }

    #[test]
    fn params_tensor_round_trip_is_bit_exact() {
        let config = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = EncoderParams::<f32>::init(&config, &mut rng);
        let tensors = params_to_tensors(&params);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let meta = CheckpointMeta {
            config: config.to_kv(),
            schema: String::new(),
            vocab_ref: "test".into(),
        };
        save_checkpoint(&path, &meta, &tensors).unwrap();
        let (meta2, tensors2) = load_checkpoint(&path).unwrap();
        assert_eq!(EncoderConfig::from_kv(&meta2.config).unwrap(), config);

        let mut restored = EncoderParams::zeros(&config);
        fill_params_from_tensors(&mut restored, &tensors2).unwrap();
        for ((_, a), (_, b)) in params.blocks().iter().zip(restored.blocks().iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn config_kv_round_trip() {
        let config = EncoderConfig::default();
        assert_eq!(EncoderConfig::from_kv(&config.to_kv()).unwrap(), config);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Array2::from_shape_fn((6, 9), |(i, j)| ((i * j) as f64).sin() * 4.0);
        let probs = softmax_rows(&logits);
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }
}
