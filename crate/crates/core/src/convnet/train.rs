//! RMSprop, the epoch loop and prediction.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, batch_loss, class_index, loss_grad_predictions, ConvNetModel, Params};
use crate::dataset::{ClassLabel, Image, LabeledFrame};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 80,
            batch_size: 128,
            learning_rate: 1e-3,
            rho: 0.9,
            epsilon: 1e-7,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.rho)
            || self.epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return Err(Error::Config(
                "RMSprop needs 0 <= rho < 1 and epsilon > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Running average of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsState {
    pub mean_square: Params,
}

impl RmsState {
    pub fn new(model: &ConvNetModel) -> Self {
        RmsState {
            mean_square: Params::zeros(&model.arch),
        }
    }
}

/// `s <- rho s + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(s) + eps)`.
pub fn rmsprop_step(
    params: &mut Params,
    grads: &Params,
    state: &mut RmsState,
    config: &TrainConfig,
) {
    let (rho, lr, eps) = (config.rho, config.learning_rate, config.epsilon);
    for ((theta, g), s) in params
        .tensors
        .iter_mut()
        .zip(&grads.tensors)
        .zip(state.mean_square.tensors.iter_mut())
    {
        for ((t, &g), s) in theta.iter_mut().zip(g).zip(s.iter_mut()) {
            *s = rho * *s + (1.0 - rho) * g * g;
            *t -= lr * g / (s.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            ));
        }
        out
    }
}

fn indexed<'a>(
    frames: &'a [LabeledFrame],
    roster: &[ClassLabel],
) -> Result<(Vec<&'a Image>, Vec<usize>)> {
    let labels = frames
        .iter()
        .map(|f| class_index(roster, &f.label))
        .collect::<Result<_>>()?;
    Ok((frames.iter().map(|f| &f.image).collect(), labels))
}

fn check_roster(model: &ConvNetModel, roster: &[ClassLabel]) -> Result<()> {
    if roster.len() != model.arch.output_classes {
        return Err(Error::Config(format!(
            "network has {} outputs but the roster lists {} classes",
            model.arch.output_classes,
            roster.len()
        )));
    }
    Ok(())
}

/// Mean loss and accuracy of the model on labelled frames.
pub fn evaluate(
    model: &ConvNetModel,
    frames: &[LabeledFrame],
    roster: &[ClassLabel],
) -> Result<(f64, f64)> {
    check_roster(model, roster)?;
    let (images, labels) = indexed(frames, roster)?;
    let loss = batch_loss(model, &images, &labels)?;
    let predicted = predict_indices(model, &images)?;
    let correct = predicted
        .iter()
        .zip(&labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok((loss, correct as f64 / labels.len() as f64))
}

fn predict_indices(model: &ConvNetModel, images: &[&Image]) -> Result<Vec<usize>> {
    use rayon::prelude::*;
    images
        .par_iter()
        .map(|img| Ok(argmax(&model.log_probabilities(img)?)))
        .collect()
}

/// `(true, predicted)` per frame in input order; ties go to the lowest class index.
pub fn predict(
    model: &ConvNetModel,
    frames: &[LabeledFrame],
    roster: &[ClassLabel],
) -> Result<Vec<(ClassLabel, ClassLabel)>> {
    check_roster(model, roster)?;
    let images: Vec<&Image> = frames.iter().map(|f| &f.image).collect();
    Ok(predict_indices(model, &images)?
        .into_iter()
        .zip(frames)
        .map(|(p, f)| (f.label.clone(), roster[p].clone()))
        .collect())
}

/// Mini-batch RMSprop over `train`, scoring `validation` after every epoch. The returned
/// model is the one after the last epoch.
pub fn train(
    model: ConvNetModel,
    train: &[LabeledFrame],
    validation: &[LabeledFrame],
    roster: &[ClassLabel],
    config: &TrainConfig,
) -> Result<(ConvNetModel, TrainHistory)> {
    config.validate()?;
    check_roster(&model, roster)?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Capacity(format!(
            "training needs frames in both partitions, got {} train and {} validation",
            train.len(),
            validation.len()
        )));
    }
    let (images, labels) = indexed(train, roster)?;
    let mut model = model;
    let mut state = RmsState::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut history = TrainHistory::default();

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let imgs: Vec<&Image> = batch.iter().map(|&i| images[i]).collect();
            let labs: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let context = |e: Error| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {}: {m}", b + 1)),
                other => other,
            };
            let (loss, grads, predicted) =
                loss_grad_predictions(&model, &imgs, &labs).map_err(context)?;
            correct += predicted.iter().zip(&labs).filter(|(p, l)| p == l).count();
            loss_sum += loss * imgs.len() as f64;
            rmsprop_step(&mut model.params, &grads, &mut state, config);
            if !model.params.all_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch}, batch {}: parameters became non-finite",
                    b + 1
                )));
            }
        }
        let (val_loss, val_acc) = evaluate(&model, validation, roster)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / images.len() as f64,
            train_acc: correct as f64 / images.len() as f64,
            val_loss,
            val_acc,
        };
        info!(
            "epoch {epoch}: loss {:.4} acc {:.4} val_loss {:.4} val_acc {:.4}",
            record.train_loss, record.train_acc, val_loss, val_acc
        );
        history.epochs.push(record);
    }
    Ok((model, history))
}
