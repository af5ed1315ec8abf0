//! Training: MSE against RBF-encoded targets, AdamW, cosine schedule, early stopping.

mod early_stop;
mod optim;
mod schedule;

use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data_io::{Aggregation, DatasetSplit};
use crate::diff::{DiffError, Graph, Tensor};
use crate::model::{MambaRate, ModelCheckpoint, ModelConfig, ModelError};
use crate::rbf::{CodecError, RbfCodec, RbfConfig};
use crate::scalar::Scalar;
use crate::seeds::{rng_state_bytes, stream_rng, Stream};

pub use early_stop::{early_stop, epochs_without_improvement, StopDecision};
pub use optim::AdamW;
pub use schedule::{cosine_lr, CosineMode};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("validation set is empty")]
    EmptyValSet,
    #[error("loss diverged (non-finite) in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("expected {expected} components, got {actual}")]
    WrongDimension { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("split references unknown utterance `{0}`")]
    UnknownUtterance(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("log output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    /// Cosine period in epochs.
    pub t_max: usize,
    pub eta_min: f64,
    pub cosine_mode: CosineMode,
    pub early_stopping: bool,
    pub patience: usize,
    pub min_delta: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub target_mode: Aggregation,
    /// Half-width of the uniform noise added to each target rating, resampled per visit.
    pub noise_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            t_max: 10,
            eta_min: 0.0,
            cosine_mode: CosineMode::Restart,
            early_stopping: true,
            patience: 10,
            min_delta: 1e-3,
            max_epochs: 200,
            seed: 0,
            target_mode: Aggregation::Mean,
            noise_scale: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be nonnegative");
        }
        if !(self.weight_decay >= 0.0) || !(self.adam_eps > 0.0) {
            return bad("weight_decay must be nonnegative and adam_eps positive");
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("betas must lie in [0, 1)");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise_scale must be nonnegative");
        }
        Ok(())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        cosine_lr(epoch, self.learning_rate, self.eta_min, self.t_max, self.cosine_mode)
    }
}

/// Mean squared difference over all components.
pub fn loss<T: Scalar>(pred: &[T], target: &[T]) -> Result<T, TrainError> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TrainError::WrongDimension {
            expected: target.len(),
            actual: pred.len(),
        });
    }
    let sum: T = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(sum / T::of_usize(pred.len()))
}

/// One utterance ready for training: embedding matrix and aggregated rating.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub utterance_id: String,
    pub input: Tensor<T>,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub stopped: bool,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_loss,lr,stopped";

impl EpochLog {
    /// CSV row matching [`LOG_HEADER`]; floats use shortest round-trip formatting.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.train_loss, self.val_loss, self.lr, self.stopped as u8
        )
    }
}

/// Writes log rows as they arrive.
pub struct CsvLog<W: Write> {
    out: W,
}

impl<W: Write> CsvLog<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        writeln!(out, "{LOG_HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn push(&mut self, row: &EpochLog) -> std::io::Result<()> {
        writeln!(self.out, "{}", row.csv_row())?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub struct TrainOutcome<T> {
    /// State at the epoch with the lowest validation loss.
    pub best: ModelCheckpoint<T>,
    pub log: Vec<EpochLog>,
}

/// Owns the model, optimizer and RNG streams of one run.
pub struct Trainer<T> {
    model: MambaRate<T>,
    optimizer: AdamW<T>,
    codec: RbfCodec<T>,
    rbf: RbfConfig,
    cfg: TrainConfig,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model_cfg: ModelConfig, rbf: RbfConfig, cfg: TrainConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        if model_cfg.output_dim != rbf.num_centers {
            return Err(TrainError::InvalidConfig(format!(
                "model output_dim {} differs from codec num_centers {}",
                model_cfg.output_dim, rbf.num_centers
            )));
        }
        let codec_cfg = RbfConfig {
            noise_scale: cfg.noise_scale,
            ..rbf.clone()
        };
        let codec = RbfCodec::new(&codec_cfg)?;
        let model = MambaRate::with_rng(model_cfg, &mut stream_rng(cfg.seed, Stream::Init))?;
        let optimizer = AdamW::for_params(model.params().tensors(), cfg.betas, cfg.adam_eps, cfg.weight_decay);
        Ok(Self {
            model,
            optimizer,
            codec,
            rbf,
            cfg,
        })
    }

    pub fn model(&self) -> &MambaRate<T> {
        &self.model
    }

    pub fn codec(&self) -> &RbfCodec<T> {
        &self.codec
    }

    /// Forward, MSE against `target`, backward and one optimizer step. Returns the loss.
    pub fn step(&mut self, input: &Tensor<T>, target: &[T], lr: f64) -> Result<T, TrainError> {
        let mut g = Graph::new();
        let p = self.model.bind(&mut g);
        let x = g.leaf(input.clone());
        let pred = self.model.forward(&mut g, &p, x)?;
        let tv = g.leaf(Tensor::vector(target.to_vec()));
        let diff = g.sub(pred, tv).map_err(ModelError::from)?;
        let sq = g.mul(diff, diff).map_err(ModelError::from)?;
        let l = g.mean(sq).map_err(ModelError::from)?;
        let value = g.value(l).item();
        let mut grads = g.backward(l).map_err(ModelError::from)?;
        let grads: Vec<Tensor<T>> = p
            .vars()
            .iter()
            .zip(self.model.params().tensors())
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        self.optimizer.step(self.model.params_mut().tensors_mut(), &grads, lr)?;
        Ok(value)
    }

    /// Mean noiseless loss over `examples`.
    pub fn evaluate(&self, examples: &[&Example<T>]) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for ex in examples {
            let pred = self.model.predict(&ex.input)?;
            let target = self.codec.encode(T::of(ex.rating))?;
            total += loss(&pred, &target)?.to_f64_lossless();
        }
        Ok(total / examples.len() as f64)
    }

    /// Runs epochs until early stopping or `max_epochs`, calling `on_epoch` after each.
    pub fn fit(
        mut self,
        train: &[&Example<T>],
        val: &[&Example<T>],
        mut on_epoch: impl FnMut(&EpochLog) -> Result<(), TrainError>,
    ) -> Result<TrainOutcome<T>, TrainError> {
        if train.is_empty() {
            return Err(TrainError::EmptyTrainSet);
        }
        if val.is_empty() {
            return Err(TrainError::EmptyValSet);
        }
        let mut noise_rng = stream_rng(self.cfg.seed, Stream::Noise);
        let mut shuffle_rng = stream_rng(self.cfg.seed, Stream::Shuffle);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut history = Vec::new();
        let mut log = Vec::new();
        let mut best: Option<ModelCheckpoint<T>> = None;

        for epoch in 0..self.cfg.max_epochs {
            let lr = self.cfg.lr(epoch);
            order.shuffle(&mut shuffle_rng);
            let mut total = 0.0;
            for &i in &order {
                let ex = train[i];
                let target = self.codec.encode_noisy(T::of(ex.rating), &mut noise_rng)?;
                let l = match self.step(&ex.input, &target, lr) {
                    Err(TrainError::Model(ModelError::Diff(DiffError::NonFiniteResult(_)))) => {
                        return Err(TrainError::DivergedLoss { epoch })
                    }
                    r => r?.to_f64_lossless(),
                };
                total += l;
            }
            let train_loss = total / train.len() as f64;
            let val_loss = match self.evaluate(val) {
                Err(TrainError::Model(ModelError::Diff(DiffError::NonFiniteResult(_)))) => f64::NAN,
                r => r?,
            };
            if !train_loss.is_finite() || !val_loss.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            history.push(val_loss);
            let stopped =
                self.cfg.early_stopping && early_stop(&history, self.cfg.patience, self.cfg.min_delta) == StopDecision::Stop;
            if best.as_ref().and_then(|b| b.val_loss).is_none_or(|b| val_loss < b) {
                let mut state = rng_state_bytes(&noise_rng);
                state.extend(rng_state_bytes(&shuffle_rng));
                best = Some(ModelCheckpoint {
                    config: self.model.config().clone(),
                    rbf: self.rbf.clone(),
                    parameters: self.model.params().clone(),
                    optimizer_state: self.optimizer.to_named(self.model.params().names()),
                    rng_state: state,
                    epoch,
                    val_loss: Some(val_loss),
                });
            }
            let row = EpochLog {
                epoch,
                train_loss,
                val_loss,
                lr,
                stopped,
            };
            log::info!("{}", row.csv_row());
            on_epoch(&row)?;
            log.push(row);
            if stopped {
                break;
            }
        }
        Ok(TrainOutcome {
            best: best.expect("at least one epoch ran"),
            log,
        })
    }
}

/// Trains on the split's train ids and validates on its val ids.
pub fn train<T: Scalar>(
    dataset: &HashMap<String, Example<T>>,
    split: &DatasetSplit,
    model_cfg: ModelConfig,
    rbf: RbfConfig,
    train_cfg: TrainConfig,
    on_epoch: impl FnMut(&EpochLog) -> Result<(), TrainError>,
) -> Result<TrainOutcome<T>, TrainError> {
    let pick = |ids: &[String]| -> Result<Vec<&Example<T>>, TrainError> {
        ids.iter()
            .map(|id| dataset.get(id).ok_or_else(|| TrainError::UnknownUtterance(id.clone())))
            .collect()
    };
    let (tr, va) = (pick(&split.train)?, pick(&split.val)?);
    Trainer::new(model_cfg, rbf, train_cfg)?.fit(&tr, &va, on_epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_examples() {
        let t: Vec<f64> = (0..16).map(|k| k as f64 / 16.0).collect();
        assert_eq!(loss(&t, &t).unwrap(), 0.0);
        let p: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        assert!((loss(&p, &t).unwrap() - 0.01).abs() < 1e-15);
        assert!(matches!(loss(&p[..3], &t), Err(TrainError::WrongDimension { .. })));
    }

    #[test]
    fn loss_matches_direct_sum() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<f64> = (0..16).map(|_| r.gen()).collect();
        let t: Vec<f64> = (0..16).map(|_| r.gen()).collect();
        let mut acc = 0.0;
        for k in 0..16 {
            acc += (p[k] - t[k]) * (p[k] - t[k]);
        }
        assert!((loss(&p, &t).unwrap() - acc / 16.0).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { min_delta: -1.0, ..Default::default() }.validate().is_err());
    }

    fn examples(n: usize, seed: u64) -> Vec<Example<f64>> {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t = r.gen_range(3..8);
                Example {
                    utterance_id: format!("u{i}"),
                    input: Tensor::from_vec(vec![t, 4], (0..4 * t).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap(),
                    rating: r.gen_range(1.0..5.0),
                }
            })
            .collect()
    }

    #[test]
    fn empty_sets_are_rejected() {
        let ex = examples(2, 0);
        let refs: Vec<&Example<f64>> = ex.iter().collect();
        let t = || Trainer::<f64>::new(ModelConfig::tiny(4), RbfConfig::default(), TrainConfig::default()).unwrap();
        assert!(matches!(t().fit(&[], &refs, |_| Ok(())), Err(TrainError::EmptyTrainSet)));
        assert!(matches!(t().fit(&refs, &[], |_| Ok(())), Err(TrainError::EmptyValSet)));
    }

    #[test]
    fn diverging_run_is_reported() {
        // one Adam step moves every parameter by about lr; exp(a_log) then overflows
        let ex = examples(3, 1);
        let refs: Vec<&Example<f64>> = ex.iter().collect();
        let cfg = TrainConfig { learning_rate: 1e12, max_epochs: 5, ..Default::default() };
        let r = Trainer::<f64>::new(ModelConfig::tiny(4), RbfConfig::default(), cfg).unwrap().fit(&refs, &refs, |_| Ok(()));
        assert!(matches!(r, Err(TrainError::DivergedLoss { epoch: 0 })), "{:?}", r.err());
    }

    #[test]
    fn best_epoch_is_retained_and_runs_repeat() {
        let ex = examples(6, 2);
        let refs: Vec<&Example<f64>> = ex.iter().collect();
        let cfg = TrainConfig { max_epochs: 8, seed: 3, ..Default::default() };
        let run = || {
            Trainer::<f64>::new(ModelConfig::tiny(4), RbfConfig::default(), cfg.clone())
                .unwrap()
                .fit(&refs[..4], &refs[4..], |_| Ok(()))
                .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.log, b.log);
        let best = a.best.val_loss.unwrap();
        assert!(a.log.iter().all(|r| best <= r.val_loss));
        assert_eq!(a.log[a.best.epoch].val_loss, best);
        // the snapshot reproduces its own validation loss
        let model = a.best.to_model().unwrap();
        let codec = RbfCodec::<f64>::new(&RbfConfig::default()).unwrap();
        let mut total = 0.0;
        for ex in &refs[4..] {
            total += loss(&model.predict(&ex.input).unwrap(), &codec.encode(ex.rating).unwrap()).unwrap();
        }
        assert!((total / 2.0 - best).abs() < 1e-15);
    }
}
