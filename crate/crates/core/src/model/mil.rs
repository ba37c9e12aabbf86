//! Attention-pooling MLP bag classifier.
//!
//! Instances pass through a stack of relu dense layers, are scored with
//! `wᵀ tanh(V h_k)`, softmax-weighted into a single bag embedding and mapped
//! to class logits by a final dense layer.
//!
//! Rows are processed in a canonical order (lexicographic by feature values)
//! so every accumulation over instances happens in the same sequence no
//! matter how the bag was ordered on input. Logits are therefore bitwise
//! invariant to row permutations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{evaluate, softmax, DifferentiableFn, ShapeSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub attention_dim: usize,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden: vec![512, 256, 128],
            attention_dim: 64,
            n_classes: 2,
        }
    }
}

impl ModelConfig {
    /// Narrow layers for fast desk-scale experiments.
    pub fn desk(input_dim: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 32, 16],
            attention_dim: 32,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::param("input_dim", "must be positive"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::param("hidden", "need at least one nonzero width"));
        }
        if self.attention_dim == 0 {
            return Err(Error::param("attention_dim", "must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::param("n_classes", "need at least two classes"));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.hidden.last().expect("validated")
    }
}

/// `y = x Wᵀ + b` with `W` stored `out×in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: uniform_f32(&[fan_out, fan_in], bound, rng),
            bias: uniform_f32(&[fan_out], bound, rng),
        }
    }
}

/// Uniform draws on `[-bound, bound)` that are exactly representable as f32.
fn uniform_f32(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * bound) as f32 as f64)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilModel {
    config: ModelConfig,
    pub(crate) hidden: Vec<Dense>,
    /// `a×h`
    pub(crate) attention_v: Tensor,
    /// `a`
    pub(crate) attention_w: Tensor,
    pub(crate) classifier: Dense,
}

/// Tape handles for every parameter of a [`MilModel`].
pub(crate) struct Bound {
    pub hidden: Vec<(Var, Var)>,
    pub v: Var,
    pub w: Var,
    pub cw: Var,
    pub cb: Var,
}

impl Bound {
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(self.hidden.len() * 2 + 4);
        for (w, b) in &self.hidden {
            out.push(*w);
            out.push(*b);
        }
        out.extend([self.v, self.w, self.cw, self.cb]);
        out
    }
}

/// Per-call training-time dropout.
pub(crate) struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub confidences: Vec<f64>,
}

impl Prediction {
    /// Argmax (lowest index wins ties) and max-subtracted softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        let mut class = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[class] {
                class = i;
            }
        }
        let confidences = softmax(&Tensor::vector(logits.to_vec())).into_data();
        Self { class, confidences }
    }

    pub fn confidence_of(&self, class: usize) -> f64 {
        self.confidences[class]
    }
}

/// Lexicographic row order, ties broken by original index.
pub fn canonical_order(rows: &Tensor) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.rows()).collect();
    order.sort_by(|&a, &b| {
        rows.row(a)
            .iter()
            .zip(rows.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

impl MilModel {
    /// Seeded initialisation; every weight is drawn uniformly in
    /// `±1/sqrt(fan_in)` and rounded to f32.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hidden = Vec::with_capacity(config.hidden.len());
        let mut fan_in = config.input_dim;
        for &width in &config.hidden {
            hidden.push(Dense::init(fan_in, width, &mut rng));
            fan_in = width;
        }
        let h = config.embedding_dim();
        let a = config.attention_dim;
        let bound = 1.0 / (h as f64).sqrt();
        let attention_v = uniform_f32(&[a, h], bound, &mut rng);
        let attention_w = uniform_f32(&[a], 1.0 / (a as f64).sqrt(), &mut rng);
        let classifier = Dense::init(h, config.n_classes, &mut rng);
        Ok(Self {
            config,
            hidden,
            attention_v,
            attention_w,
            classifier,
        })
    }

    /// Builds a model from explicit parameters in [`MilModel::parameters`] order.
    pub fn from_parameters(config: ModelConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = Self::parameter_shapes(&config);
        if params.len() != shapes.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for (p, s) in params.iter().zip(&shapes) {
            if p.shape() != s.as_slice() {
                return Err(Error::shape(format!("{:?}", s), p.shape()));
            }
        }
        let mut it = params.into_iter();
        let hidden = (0..config.hidden.len())
            .map(|_| Dense {
                weight: it.next().unwrap(),
                bias: it.next().unwrap(),
            })
            .collect();
        let attention_v = it.next().unwrap();
        let attention_w = it.next().unwrap();
        let classifier = Dense {
            weight: it.next().unwrap(),
            bias: it.next().unwrap(),
        };
        Ok(Self {
            config,
            hidden,
            attention_v,
            attention_w,
            classifier,
        })
    }

    pub fn parameter_shapes(config: &ModelConfig) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut fan_in = config.input_dim;
        for &w in &config.hidden {
            shapes.push(vec![w, fan_in]);
            shapes.push(vec![w]);
            fan_in = w;
        }
        shapes.push(vec![config.attention_dim, fan_in]);
        shapes.push(vec![config.attention_dim]);
        shapes.push(vec![config.n_classes, fan_in]);
        shapes.push(vec![config.n_classes]);
        shapes
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    /// Hidden weights and biases, attention `V` and `w`, classifier weight and bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for d in &self.hidden {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out.extend([
            &self.attention_v,
            &self.attention_w,
            &self.classifier.weight,
            &self.classifier.bias,
        ]);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for d in &mut self.hidden {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out.extend([
            &mut self.attention_v,
            &mut self.attention_w,
            &mut self.classifier.weight,
            &mut self.classifier.bias,
        ]);
        out
    }

    /// Mutable access to the first dense layer.
    pub fn first_layer_mut(&mut self) -> &mut Dense {
        &mut self.hidden[0]
    }

    pub fn classifier_mut(&mut self) -> &mut Dense {
        &mut self.classifier
    }

    /// The same model with every weight rounded to f32.
    pub fn rounded_to_f32(&self) -> Self {
        let mut out = self.clone();
        for p in out.parameters_mut() {
            for v in p.data_mut() {
                *v = *v as f32 as f64;
            }
        }
        out
    }

    pub(crate) fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.var(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let hidden = self.hidden.iter().map(|d| (put(&d.weight), put(&d.bias))).collect();
        Bound {
            hidden,
            v: put(&self.attention_v),
            w: put(&self.attention_w),
            cw: put(&self.classifier.weight),
            cb: put(&self.classifier.bias),
        }
    }

    fn check_bag(&self, shape: &[usize]) -> Result<()> {
        ShapeSpec::rows_of(self.config.input_dim).check(shape)?;
        if shape[0] == 0 {
            return Err(Error::EmptyBag);
        }
        Ok(())
    }

    /// Instance embeddings of rows already in canonical order.
    fn embed(&self, tape: &mut Tape, rows: Var, p: &Bound, mut dropout: Option<&mut Dropout<'_>>) -> Result<Var> {
        let mut h = rows;
        for (w, b) in &p.hidden {
            let z = tape.matmul_t(h, *w)?;
            let z = tape.add_row(z, *b)?;
            h = tape.relu(z);
            if let Some(d) = dropout.as_deref_mut() {
                if d.rate > 0.0 {
                    let keep = 1.0 - d.rate;
                    let shape = tape.value(h).shape().to_vec();
                    let len = tape.value(h).len();
                    let mask: Vec<f64> = (0..len)
                        .map(|_| if d.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    let m = tape.constant(Tensor::new(shape, mask)?);
                    h = tape.mul(h, m)?;
                }
            }
        }
        Ok(h)
    }

    /// Attention weights and pooled embedding for rows already in canonical order.
    fn pool(&self, tape: &mut Tape, h: Var, p: &Bound) -> Result<(Var, Var)> {
        let t = tape.matmul_t(h, p.v)?;
        let t = tape.tanh(t);
        let scores = tape.matvec(t, p.w)?;
        let weights = tape.softmax(scores);
        let pooled = tape.weighted_row_sum(weights, h)?;
        Ok((pooled, weights))
    }

    pub(crate) fn forward(
        &self,
        tape: &mut Tape,
        bag: Var,
        p: &Bound,
        dropout: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, Var, Vec<usize>)> {
        self.check_bag(tape.value(bag).shape())?;
        let order = canonical_order(tape.value(bag));
        let rows = tape.gather_rows(bag, order.clone())?;
        let h = self.embed(tape, rows, p, dropout)?;
        let (pooled, weights) = self.pool(tape, h, p)?;
        let y = tape.matvec(p.cw, pooled)?;
        let logits = tape.add(y, p.cb)?;
        Ok((logits, weights, order))
    }

    /// Softmax attention over `embeddings` (`n×h`) and the weighted bag embedding.
    pub fn attention_pool(&self, embeddings: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        if embeddings.rank() != 2 || embeddings.cols() != self.config.embedding_dim() {
            return Err(Error::shape(
                format!("[_, {}] instance embeddings", self.config.embedding_dim()),
                embeddings.shape(),
            ));
        }
        if embeddings.rows() == 0 {
            return Err(Error::EmptyBag);
        }
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let e = tape.constant(embeddings.clone());
        let order = canonical_order(embeddings);
        let rows = tape.gather_rows(e, order.clone())?;
        let (pooled, weights) = self.pool(&mut tape, rows, &p)?;
        Ok((
            tape.value(pooled).clone(),
            unpermute(tape.value(weights).data(), &order),
        ))
    }

    /// Instance embeddings (`n×h`) in the bag's own row order.
    pub fn embeddings(&self, bag: &Tensor) -> Result<Tensor> {
        self.check_bag(bag.shape())?;
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(bag.clone());
        let h = self.embed(&mut tape, x, &p, None)?;
        Ok(tape.value(h).clone())
    }

    /// Pre-softmax class scores.
    pub fn logits(&self, bag: &Tensor) -> Result<Tensor> {
        evaluate(self, bag)
    }

    pub fn predict(&self, bag: &Tensor) -> Result<Prediction> {
        Ok(Prediction::from_logits(self.logits(bag)?.data()))
    }

    /// Attention weight of every instance, in the bag's row order.
    pub fn attention_weights(&self, bag: &Tensor) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(bag.clone());
        let (_, weights, order) = self.forward(&mut tape, x, &p, None)?;
        Ok(unpermute(tape.value(weights).data(), &order))
    }

    /// Smallest `|pre-activation|` of any hidden relu unit on `bag`.
    pub fn min_relu_margin(&self, bag: &Tensor) -> Result<f64> {
        self.check_bag(bag.shape())?;
        let mut tape = Tape::new();
        let mut h = tape.constant(bag.clone());
        let mut margin = f64::INFINITY;
        for d in &self.hidden {
            let w = tape.constant(d.weight.clone());
            let b = tape.constant(d.bias.clone());
            let z = tape.matmul_t(h, w)?;
            let z = tape.add_row(z, b)?;
            margin = tape.value(z).data().iter().fold(margin, |m, v| m.min(v.abs()));
            h = tape.relu(z);
        }
        Ok(margin)
    }
}

fn unpermute(values: &[f64], order: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for (pos, &orig) in order.iter().enumerate() {
        out[orig] = values[pos];
    }
    out
}

impl DifferentiableFn for MilModel {
    fn input_shape(&self) -> ShapeSpec {
        ShapeSpec::rows_of(self.config.input_dim)
    }

    fn record(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let p = self.bind(tape, false);
        let (logits, _, _) = self.forward(tape, input, &p, None)?;
        Ok(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::random_normal;
    use rand::seq::SliceRandom;

    fn small() -> MilModel {
        MilModel::init(
            ModelConfig {
                input_dim: 6,
                hidden: vec![8, 5],
                attention_dim: 4,
                n_classes: 3,
            },
            3,
        )
        .unwrap()
    }

    fn bag(n: usize, d: usize, seed: u64) -> Tensor {
        random_normal(&[n, d], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn singleton_attention() {
        let m = small();
        let e = Tensor::from_rows(&[[0.3, -1.0, 2.0, 0.5, 0.1]]).unwrap();
        let (pooled, w) = m.attention_pool(&e).unwrap();
        assert_eq!(w, vec![1.0]);
        assert_eq!(pooled.data(), e.data());
    }

    #[test]
    fn identical_instances_share_attention() {
        let m = small();
        let e = Tensor::from_rows(&[[0.3, -1.0, 2.0, 0.5, 0.1], [0.3, -1.0, 2.0, 0.5, 0.1]]).unwrap();
        let (_, w) = m.attention_pool(&e).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn attention_is_a_distribution_and_permutes_with_instances() {
        let m = small();
        let e = bag(5, 5, 4);
        let (_, w) = m.attention_pool(&e).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(w.iter().all(|&v| v >= 0.0));

        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| e.row(i).to_vec()).collect();
        let (_, wp) = m.attention_pool(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for (pos, &i) in perm.iter().enumerate() {
            assert_eq!(wp[pos].to_bits(), w[i].to_bits());
        }
    }

    #[test]
    fn empty_bag_is_rejected() {
        let m = small();
        assert!(matches!(
            m.attention_pool(&Tensor::zeros(&[0, 5])),
            Err(Error::EmptyBag)
        ));
        assert!(matches!(m.logits(&Tensor::zeros(&[0, 6])), Err(Error::EmptyBag)));
        assert!(matches!(
            m.logits(&Tensor::zeros(&[2, 5])),
            Err(Error::InputShape { .. })
        ));
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let mut m = small();
        let c = m.classifier_mut();
        c.weight = Tensor::zeros(c.weight.shape());
        c.bias = Tensor::zeros(c.bias.shape());
        assert_eq!(m.logits(&bag(7, 6, 1)).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn duplicated_bag_keeps_logits() {
        let m = small();
        let x = bag(4, 6, 2);
        let mut rows: Vec<Vec<f64>> = (0..4).map(|i| x.row(i).to_vec()).collect();
        rows.extend((0..4).map(|i| x.row(i).to_vec()));
        let a = m.logits(&x).unwrap();
        let b = m.logits(&Tensor::from_rows(&rows).unwrap()).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() <= 1e-12, "{} vs {}", u, v);
        }
    }

    #[test]
    fn logits_are_reproducible() {
        let m = MilModel::init(ModelConfig::desk(6, 2), 3).unwrap();
        let x = bag(9, 6, 4);
        let a = m.logits(&x).unwrap();
        let b = MilModel::init(ModelConfig::desk(6, 2), 3).unwrap().logits(&x).unwrap();
        assert!(a.is_finite());
        assert_eq!(a, b);
    }

    #[test]
    fn prediction_ties_and_stability() {
        let p = Prediction::from_logits(&[0.0, 0.0]);
        assert_eq!(p.class, 0);
        assert_eq!(p.confidences, vec![0.5, 0.5]);

        let p = Prediction::from_logits(&[1.0, 3.0]);
        assert_eq!(p.class, 1);
        assert!((p.confidences[1] - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        assert!((p.confidences[1] - 0.8808).abs() < 1e-4);

        let p = Prediction::from_logits(&[1000.0, 0.0]);
        assert_eq!(p.class, 0);
        assert_eq!(p.confidences[0], 1.0);
        assert!(p.confidences.iter().all(|c| c.is_finite()));
    }

    #[test]
    fn parameters_round_trip_through_constructor() {
        let m = small();
        let params = m.parameters().into_iter().cloned().collect();
        let rebuilt = MilModel::from_parameters(m.config().clone(), params).unwrap();
        assert_eq!(rebuilt, m);
    }
}
