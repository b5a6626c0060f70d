use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::eval::argmax2;
use crate::nn::layer::{default_architecture, LayerSpec};
use crate::nn::loss::{class_weights_from, cross_entropy};
use crate::nn::{Adam, AdamConfig, Model, NnError, Tensor};
use crate::windows::WindowSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub class_weights: [f64; 2],
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            class_weights: [1.0, 1.0],
            seed: 42,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !self.class_weights.iter().all(|w| *w > 0.0 && w.is_finite()) {
            return bad("class weights must be positive");
        }
        Ok(())
    }
}

/// How `train.json` chooses class weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    /// `N / (2 N_c)` from the training split.
    #[default]
    Balanced,
    /// `(1, 1)`
    None,
    Fixed([f64; 2]),
}

/// Contents of `train.json`. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub dropout: f64,
    pub architecture: Vec<LayerSpec>,
    pub adam: AdamConfig,
    pub class_weights: ClassWeighting,
}

impl Default for TrainSpec {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            learning_rate: base.learning_rate,
            batch_size: base.batch_size,
            max_epochs: base.max_epochs,
            patience: base.patience,
            seed: base.seed,
            dropout: 0.3,
            architecture: default_architecture(),
            adam: base.adam,
            class_weights: ClassWeighting::Balanced,
        }
    }
}

impl TrainSpec {
    pub fn to_config(&self, train: &WindowSet) -> Result<TrainConfig, NnError> {
        let class_weights = match &self.class_weights {
            ClassWeighting::Balanced => class_weights_from(train)?,
            ClassWeighting::None => [1.0, 1.0],
            ClassWeighting::Fixed(w) => *w,
        };
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            class_weights,
            seed: self.seed,
            adam: self.adam,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Improved,
    Waiting,
    Stop,
}

/// Stops once the validation loss has not improved for `patience` epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, epoch: 0, since_best: 0 }
    }

    pub fn observe(&mut self, val_loss: f64) -> Progress {
        self.epoch += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = self.epoch;
            self.since_best = 0;
            Progress::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Progress::Stop
            } else {
                Progress::Waiting
            }
        }
    }

    /// 1-based epoch of the best loss so far; 0 before any epoch.
    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Weighted with the training class weights.
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// 1-based epoch whose weights were returned; 0 when no epoch ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Mini-batch Adam on shuffled (seeded) batches with early stopping on the
/// class-weighted validation loss. Returns the weights of the best validation
/// epoch.
pub fn train(
    model: &Model,
    train_set: &WindowSet,
    val_set: &WindowSet,
    cfg: &TrainConfig,
) -> Result<(Model, History), NnError> {
    cfg.validate()?;
    if !model.is_trainable() {
        return Err(NnError::NotTrainable);
    }
    let mut history = History::default();
    if cfg.max_epochs == 0 {
        return Ok((model.clone(), history));
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NnError::EmptySet);
    }

    let mut model = model.clone();
    let mut best = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&model, cfg.learning_rate, cfg.adam);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let windows = train_set.windows();
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let val_batch = Tensor::from_windows(val_set.windows())?;
    let val_labels = val_set.labels();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = Tensor::from_windows(chunk.iter().map(|&i| &windows[i]))?;
            let labels: Vec<u8> = chunk.iter().map(|&i| windows[i].label).collect();
            let pass = model.forward(&batch, Some(&mut rng))?;
            loss_sum += cross_entropy(&pass.probs, &labels, cfg.class_weights) * chunk.len() as f64;
            correct += (0..chunk.len()).filter(|&i| argmax2(pass.probs.row(i)) == labels[i]).count();
            let grads = model.backward(&pass, &labels, cfg.class_weights);
            adam.step(&mut model, &grads);
        }
        let val_probs = model.forward(&val_batch, None)?.probs;
        let val_loss = cross_entropy(&val_probs, &val_labels, cfg.class_weights);
        let val_correct = (0..val_labels.len()).filter(|&i| argmax2(val_probs.row(i)) == val_labels[i]).count();
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / windows.len() as f64,
            train_accuracy: correct as f64 / windows.len() as f64,
            val_loss,
            val_accuracy: val_correct as f64 / val_labels.len() as f64,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} acc {:.3} val_loss {:.4} val_acc {:.3}",
            stats.train_loss,
            stats.train_accuracy,
            stats.val_loss,
            stats.val_accuracy
        );
        history.epochs.push(stats);
        match stopper.observe(val_loss) {
            Progress::Improved => best = model.clone(),
            Progress::Waiting => {}
            Progress::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    history.best_epoch = stopper.best_epoch();
    if history.best_epoch == 0 {
        // Validation loss never became finite.
        best = model;
    }
    Ok((best, history))
}
