use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::FeatureBag;
use crate::error::{Error, Result};
use crate::model::mil::{Dropout, MilModel, ModelConfig};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Bags per optimiser step.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-4,
            batch_size: 1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::param("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("beta1/beta2", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's forward passes.
    pub loss: f64,
    pub accuracy: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(model: &MilModel) -> Self {
        let zeros = || model.parameters().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut MilModel, grads: &[Tensor], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for (i, p) in model.parameters_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i].data()[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Minimises bag-level cross-entropy with Adam.
///
/// The model is initialised from `config.seed`; shuffling and dropout use
/// their own streams derived from the same seed, so a run is fully
/// determined by its inputs. Returned weights are rounded to f32 so that
/// the in-memory model and its checkpoint agree bitwise.
pub fn train(
    dataset: &[FeatureBag],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(MilModel, Vec<EpochStats>)> {
    config.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::Dataset("training set is empty".into()))?;
    if first.dim() != model_config.input_dim {
        return Err(Error::Dataset(format!(
            "bags have {} features but the model expects {}",
            first.dim(),
            model_config.input_dim
        )));
    }
    for bag in dataset {
        if bag.dim() != first.dim() {
            return Err(Error::Dataset(format!(
                "slide {} has {} features, expected {}",
                bag.slide_id,
                bag.dim(),
                first.dim()
            )));
        }
        if bag.label >= model_config.n_classes {
            return Err(Error::Dataset(format!(
                "slide {} has label {} but the model has {} classes",
                bag.slide_id, bag.label, model_config.n_classes
            )));
        }
    }

    let bags: Vec<(Tensor, usize)> = dataset.iter().map(|b| (b.to_tensor(), b.label)).collect();
    let mut model = MilModel::init(model_config.clone(), config.seed)?;
    let mut adam = Adam::new(&model);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "train/shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "train/dropout"));
    let mut history = Vec::with_capacity(config.epochs);

    let mut order: Vec<usize> = (0..bags.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads: Vec<Tensor> = model.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let (x, label) = &bags[i];
                let mut tape = Tape::new();
                let params = model.bind(&mut tape, true);
                let input = tape.constant(x.clone());
                let mut dropout = Dropout {
                    rate: config.dropout,
                    rng: &mut dropout_rng,
                };
                let (logits, _, _) = model.forward(&mut tape, input, &params, Some(&mut dropout))?;
                let pred = crate::model::Prediction::from_logits(tape.value(logits).data());
                if pred.class == *label {
                    correct += 1;
                }
                let ce = tape.cross_entropy(logits, *label)?;
                total_loss += tape.value(ce).item()?;
                let loss = tape.scale(ce, scale);
                let mut g = tape.backward(loss)?;
                for (acc, var) in grads.iter_mut().zip(params.all()) {
                    let gv = g.take(var);
                    for (a, b) in acc.data_mut().iter_mut().zip(gv.data()) {
                        *a += b;
                    }
                }
            }
            adam.update(&mut model, &grads, config);
        }
        history.push(EpochStats {
            epoch,
            loss: total_loss / bags.len() as f64,
            accuracy: correct as f64 / bags.len() as f64,
        });
    }
    Ok((model.rounded_to_f32(), history))
}

/// Fraction of bags whose predicted class equals their label.
pub fn accuracy(model: &MilModel, bags: &[FeatureBag]) -> Result<f64> {
    if bags.is_empty() {
        return Err(Error::Dataset("no bags to score".into()));
    }
    let mut correct = 0;
    for bag in bags {
        if model.predict(&bag.to_tensor())?.class == bag.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / bags.len() as f64)
}
