//! Parameter containers with named-block visitation.
//!
//! Parameters, gradients, and optimizer moments all share these types; a
//! gradient set is just a zeroed copy of the parameter set. The `blocks`/
//! `blocks_mut` pair enumerates every tensor with a stable name, which is
//! the single ordering used by the optimizer, the checkpoint container,
//! and the gradient checker.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, NdFloat};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::EncoderConfig;

/// Scalar type for the numeric core: f32 for training, f64 for
/// high-precision verification.
pub trait Scalar: NdFloat + std::iter::Sum {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand f64 -> F conversion.
pub(crate) fn s<F: Scalar>(x: f64) -> F {
    F::from(x).expect("scalar conversion")
}

/// Fully connected layer, stored input-major: `w` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Linear {
            w: init_matrix(inputs, outputs, rng),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    /// `x * w + b` for row-major batches.
    pub fn forward(&self, x: &Array2<F>) -> Array2<F> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates `dw`/`db` into `grads` and returns `dx`.
    pub fn backward(&self, x: &Array2<F>, dy: &Array2<F>, grads: &mut Linear<F>) -> Array2<F> {
        grads.w += &x.t().dot(dy);
        grads.b += &dy.sum_axis(ndarray::Axis(0));
        dy.dot(&self.w.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn init(dim: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn zeros_like(&self) -> Self {
        LayerNorm {
            gamma: Array1::zeros(self.gamma.raw_dim()),
            beta: Array1::zeros(self.beta.raw_dim()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub attn_q: Linear<F>,
    pub attn_k: Linear<F>,
    pub attn_v: Linear<F>,
    pub attn_out: Linear<F>,
    pub attn_norm: LayerNorm<F>,
    pub ffn_in: Linear<F>,
    pub ffn_out: Linear<F>,
    pub ffn_norm: LayerNorm<F>,
}

impl<F: Scalar> LayerParams<F> {
    fn init(hidden: usize, ffn: usize, rng: &mut impl Rng) -> Self {
        LayerParams {
            attn_q: Linear::init(hidden, hidden, rng),
            attn_k: Linear::init(hidden, hidden, rng),
            attn_v: Linear::init(hidden, hidden, rng),
            attn_out: Linear::init(hidden, hidden, rng),
            attn_norm: LayerNorm::init(hidden),
            ffn_in: Linear::init(hidden, ffn, rng),
            ffn_out: Linear::init(ffn, hidden, rng),
            ffn_norm: LayerNorm::init(hidden),
        }
    }

    fn zeros_like(&self) -> Self {
        LayerParams {
            attn_q: self.attn_q.zeros_like(),
            attn_k: self.attn_k.zeros_like(),
            attn_v: self.attn_v.zeros_like(),
            attn_out: self.attn_out.zeros_like(),
            attn_norm: self.attn_norm.zeros_like(),
            ffn_in: self.ffn_in.zeros_like(),
            ffn_out: self.ffn_out.zeros_like(),
            ffn_norm: self.ffn_norm.zeros_like(),
        }
    }
}

/// Full encoder parameter set: embeddings, transformer layers, pooler.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<F> {
    pub token_emb: Array2<F>,
    pub pos_emb: Array2<F>,
    pub emb_norm: LayerNorm<F>,
    pub layers: Vec<LayerParams<F>>,
    pub pooler: Linear<F>,
}

fn init_matrix<F: Scalar>(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<F> {
    let normal = Normal::new(0.0f64, 0.02).expect("valid stddev");
    Array2::from_shape_fn((rows, cols), |_| s(normal.sample(rng)))
}

impl<F: Scalar> EncoderParams<F> {
    /// Seeded N(0, 0.02^2) initialization; layer norms start at identity.
    pub fn init(config: &EncoderConfig, rng: &mut impl Rng) -> Self {
        EncoderParams {
            token_emb: init_matrix(config.vocab_size, config.hidden_dim, rng),
            pos_emb: init_matrix(config.max_positions, config.hidden_dim, rng),
            emb_norm: LayerNorm::init(config.hidden_dim),
            layers: (0..config.layers)
                .map(|_| LayerParams::init(config.hidden_dim, config.ffn_dim, rng))
                .collect(),
            pooler: Linear::init(config.hidden_dim, config.hidden_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            token_emb: Array2::zeros(self.token_emb.raw_dim()),
            pos_emb: Array2::zeros(self.pos_emb.raw_dim()),
            emb_norm: self.emb_norm.zeros_like(),
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
            pooler: self.pooler.zeros_like(),
        }
    }

    pub fn to_f64(&self) -> EncoderParams<f64>
    where
        F: Scalar,
    {
        convert_params(self)
    }
}

fn convert_array2<A: Scalar, B: Scalar>(a: &Array2<A>) -> Array2<B> {
    a.mapv(|x| B::from(x).expect("scalar conversion"))
}

fn convert_array1<A: Scalar, B: Scalar>(a: &Array1<A>) -> Array1<B> {
    a.mapv(|x| B::from(x).expect("scalar conversion"))
}

fn convert_linear<A: Scalar, B: Scalar>(l: &Linear<A>) -> Linear<B> {
    Linear {
        w: convert_array2(&l.w),
        b: convert_array1(&l.b),
    }
}

fn convert_params<A: Scalar, B: Scalar>(p: &EncoderParams<A>) -> EncoderParams<B> {
    EncoderParams {
        token_emb: convert_array2(&p.token_emb),
        pos_emb: convert_array2(&p.pos_emb),
        emb_norm: LayerNorm {
            gamma: convert_array1(&p.emb_norm.gamma),
            beta: convert_array1(&p.emb_norm.beta),
        },
        layers: p
            .layers
            .iter()
            .map(|l| LayerParams {
                attn_q: convert_linear(&l.attn_q),
                attn_k: convert_linear(&l.attn_k),
                attn_v: convert_linear(&l.attn_v),
                attn_out: convert_linear(&l.attn_out),
                attn_norm: LayerNorm {
                    gamma: convert_array1(&l.attn_norm.gamma),
                    beta: convert_array1(&l.attn_norm.beta),
                },
                ffn_in: convert_linear(&l.ffn_in),
                ffn_out: convert_linear(&l.ffn_out),
                ffn_norm: LayerNorm {
                    gamma: convert_array1(&l.ffn_norm.gamma),
                    beta: convert_array1(&l.ffn_norm.beta),
                },
            })
            .collect(),
        pooler: convert_linear(&p.pooler),
    }
}

/// Named-tensor enumeration in a stable order.
pub trait ParamVisit<F> {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, F>)>;
    fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)>;
}

impl<F: Scalar> ParamVisit<F> for Linear<F> {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        vec![
            ("w".into(), self.w.view().into_dyn()),
            ("b".into(), self.b.view().into_dyn()),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        vec![
            ("w".into(), self.w.view_mut().into_dyn()),
            ("b".into(), self.b.view_mut().into_dyn()),
        ]
    }
}

impl<F: Scalar> ParamVisit<F> for EncoderParams<F> {
    fn blocks(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut v: Vec<(String, ArrayViewD<'_, F>)> = vec![
            ("token_emb".into(), self.token_emb.view().into_dyn()),
            ("pos_emb".into(), self.pos_emb.view().into_dyn()),
            ("emb_norm.gamma".into(), self.emb_norm.gamma.view().into_dyn()),
            ("emb_norm.beta".into(), self.emb_norm.beta.view().into_dyn()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, lin) in [
                ("attn_q", &l.attn_q),
                ("attn_k", &l.attn_k),
                ("attn_v", &l.attn_v),
                ("attn_out", &l.attn_out),
                ("ffn_in", &l.ffn_in),
                ("ffn_out", &l.ffn_out),
            ] {
                v.push((format!("layer{i}.{name}.w"), lin.w.view().into_dyn()));
                v.push((format!("layer{i}.{name}.b"), lin.b.view().into_dyn()));
            }
            v.push((format!("layer{i}.attn_norm.gamma"), l.attn_norm.gamma.view().into_dyn()));
            v.push((format!("layer{i}.attn_norm.beta"), l.attn_norm.beta.view().into_dyn()));
            v.push((format!("layer{i}.ffn_norm.gamma"), l.ffn_norm.gamma.view().into_dyn()));
            v.push((format!("layer{i}.ffn_norm.beta"), l.ffn_norm.beta.view().into_dyn()));
        }
        v.push(("pooler.w".into(), self.pooler.w.view().into_dyn()));
        v.push(("pooler.b".into(), self.pooler.b.view().into_dyn()));
        v
    }

    fn blocks_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut v: Vec<(String, ArrayViewMutD<'_, F>)> = vec![
            ("token_emb".into(), self.token_emb.view_mut().into_dyn()),
            ("pos_emb".into(), self.pos_emb.view_mut().into_dyn()),
            ("emb_norm.gamma".into(), self.emb_norm.gamma.view_mut().into_dyn()),
            ("emb_norm.beta".into(), self.emb_norm.beta.view_mut().into_dyn()),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (name, lin) in [
                ("attn_q", &mut l.attn_q),
                ("attn_k", &mut l.attn_k),
                ("attn_v", &mut l.attn_v),
                ("attn_out", &mut l.attn_out),
                ("ffn_in", &mut l.ffn_in),
                ("ffn_out", &mut l.ffn_out),
            ] {
                v.push((format!("layer{i}.{name}.w"), lin.w.view_mut().into_dyn()));
                v.push((format!("layer{i}.{name}.b"), lin.b.view_mut().into_dyn()));
            }
            v.push((
                format!("layer{i}.attn_norm.gamma"),
                l.attn_norm.gamma.view_mut().into_dyn(),
            ));
            v.push((format!("layer{i}.attn_norm.beta"), l.attn_norm.beta.view_mut().into_dyn()));
            v.push((format!("layer{i}.ffn_norm.gamma"), l.ffn_norm.gamma.view_mut().into_dyn()));
            v.push((format!("layer{i}.ffn_norm.beta"), l.ffn_norm.beta.view_mut().into_dyn()));
        }
        v.push(("pooler.w".into(), self.pooler.w.view_mut().into_dyn()));
        v.push(("pooler.b".into(), self.pooler.b.view_mut().into_dyn()));
        v
    }
}

/// Flattens all blocks into one vector (f64), for the gradient checker.
pub fn flatten_f64<F: Scalar, M: ParamVisit<F>>(m: &M) -> (Vec<f64>, Vec<(String, usize)>) {
    let mut flat = Vec::new();
    let mut layout = Vec::new();
    for (name, view) in m.blocks() {
        layout.push((name, view.len()));
        flat.extend(view.iter().map(|x| x.to_f64().expect("finite")));
    }
    (flat, layout)
}

/// Writes a flat vector back into the blocks, inverse of [`flatten_f64`].
pub fn unflatten_f64<F: Scalar, M: ParamVisit<F>>(m: &mut M, flat: &[f64]) {
    let mut offset = 0;
    for (_, mut view) in m.blocks_mut() {
        for x in view.iter_mut() {
            *x = s(flat[offset]);
            offset += 1;
        }
    }
    assert_eq!(offset, flat.len(), "flat vector length mismatch");
}
