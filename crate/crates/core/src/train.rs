use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::layers::ParamMut;
use crate::network::Network;
use crate::optim::{Optimizer, OptimizerKind};
use crate::tensor::{Scalar, Tensor};

/// Anything the training loop can drive: a probabilistic classifier with
/// accumulated parameter gradients.
pub trait Classifier<T: Scalar>: Clone {
    fn num_classes(&self) -> usize;

    /// Class probabilities; caches what `backward` needs.
    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Cross-entropy of the last forward pass.
    fn loss(&self, target: usize) -> Result<T>;

    /// Accumulates the gradient of the last forward pass's loss.
    fn backward(&mut self, target: usize) -> Result<()>;

    fn params_mut(&mut self) -> Vec<ParamMut<'_, T>>;

    fn zero_grad(&mut self);
}

impl<T: Scalar> Classifier<T> for Network<T> {
    fn num_classes(&self) -> usize {
        Network::num_classes(self)
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Network::forward(self, x)
    }

    fn loss(&self, target: usize) -> Result<T> {
        Network::loss(self, target)
    }

    fn backward(&mut self, target: usize) -> Result<()> {
        Network::backward(self, target).map(drop)
    }

    fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        Network::params_mut(self)
    }

    fn zero_grad(&mut self) {
        Network::zero_grad(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Epochs without validation-loss improvement before stopping;
    /// `None` never stops early.
    pub patience: Option<usize>,
    /// Minimum absolute decrease of validation loss that counts as progress.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            patience: Some(10),
            min_delta: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == Some(0) {
            return Err(Error::Invalid(format!(
                "epochs, batch size and patience must be at least 1, got {}, {}, {:?}",
                self.epochs, self.batch_size, self.patience
            )));
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            return Err(Error::Invalid(format!("min_delta must be ≥ 0, got {}", self.min_delta)));
        }
        Ok(())
    }
}

/// Metrics of one epoch. Accuracies are fractions in `[0, 1]`; training
/// metrics are accumulated over the epoch's forward passes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
            ));
        }
        out
    }
}

fn check_set<T: Scalar, C: Classifier<T>>(net: &C, ds: &Dataset, role: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Data(format!("{role} set is empty")));
    }
    if ds.num_classes() != net.num_classes() {
        return Err(Error::Invalid(format!(
            "network predicts {} classes but the {role} set has {}",
            net.num_classes(),
            ds.num_classes()
        )));
    }
    Ok(())
}

fn inputs<T: Scalar>(ds: &Dataset) -> Vec<Tensor<T>> {
    ds.items().iter().map(|it| it.pixels.cast()).collect()
}

/// Trains with a per-epoch callback. See [`train`].
pub fn train_with<T, C, F>(
    mut net: C,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(C, TrainHistory)>
where
    T: Scalar,
    C: Classifier<T>,
    F: FnMut(&EpochRecord),
{
    cfg.validate()?;
    check_set(&net, train_set, "training")?;
    check_set(&net, val_set, "validation")?;
    let xs: Vec<Tensor<T>> = inputs(train_set);
    let ys = train_set.labels();
    let val_xs: Vec<Tensor<T>> = inputs(val_set);
    let val_ys = val_set.labels();

    let mut opt = Optimizer::<T>::new(cfg.optimizer, cfg.lr)?;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, C)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (b, batch) in batches(xs.len(), cfg.batch_size, true, cfg.seed, epoch).iter().enumerate() {
            net.zero_grad();
            for &i in batch {
                let probs = net.forward(&xs[i])?;
                let loss = net.loss(ys[i])?.to_f64_lossless();
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        batch: b + 1,
                        loss,
                    });
                }
                loss_sum += loss;
                correct += usize::from(probs.argmax() == ys[i]);
                net.backward(ys[i])?;
            }
            let inv = T::one() / T::from_usize(batch.len()).expect("batch length fits");
            let mut params = net.params_mut();
            for p in &mut params {
                p.grad.scale(inv);
            }
            opt.step(&mut params)?;
        }
        let (val_loss, preds) = evaluate_inputs(&mut net, &val_xs, &val_ys)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / xs.len() as f64,
            train_acc: correct as f64 / xs.len() as f64,
            val_loss,
            val_acc: fraction_correct(&preds, &val_ys),
        };
        on_epoch(&record);
        records.push(record);

        let improved = match &best {
            None => val_loss.is_finite(),
            Some((best_loss, _, _)) => val_loss < best_loss - cfg.min_delta,
        };
        if improved {
            best = Some((val_loss, epoch, net.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                stopped_early = true;
                break;
            }
        }
    }

    // a run whose validation loss was never finite keeps its last weights
    let (best_epoch, net) = match best {
        Some((_, e, best_net)) => (e, best_net),
        None => (records.len(), net),
    };
    Ok((
        net,
        TrainHistory {
            epochs: records,
            stopped_early,
            best_epoch,
        },
    ))
}

/// Mini-batch training with early stopping on validation loss.
///
/// Every epoch reshuffles the training set under `(cfg.seed, epoch)`, takes
/// one optimizer step per batch on the mean gradient, then evaluates the
/// validation set. Training stops once validation loss has failed to drop by
/// more than `min_delta` for `patience` consecutive epochs, and the weights
/// of the best epoch are returned.
pub fn train<T: Scalar, C: Classifier<T>>(
    net: C,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<(C, TrainHistory)> {
    train_with(net, train_set, val_set, cfg, |_| {})
}

fn fraction_correct(preds: &[usize], labels: &[usize]) -> f64 {
    let hits = preds.iter().zip(labels).filter(|(p, t)| p == t).count();
    hits as f64 / labels.len() as f64
}

fn evaluate_inputs<T: Scalar, C: Classifier<T>>(
    net: &mut C,
    xs: &[Tensor<T>],
    ys: &[usize],
) -> Result<(f64, Vec<usize>)> {
    let mut total = 0.0;
    let mut preds = Vec::with_capacity(xs.len());
    for (x, &y) in xs.iter().zip(ys) {
        let probs = net.forward(x)?;
        total += net.loss(y)?.to_f64_lossless();
        preds.push(probs.argmax());
    }
    Ok((total / xs.len() as f64, preds))
}

/// Mean cross-entropy and argmax predictions (lowest index wins ties).
/// Parameters are never modified.
pub fn evaluate<T: Scalar, C: Classifier<T>>(net: &mut C, ds: &Dataset) -> Result<(f64, Vec<usize>)> {
    check_set(net, ds, "evaluation")?;
    evaluate_inputs(net, &inputs::<T>(ds), &ds.labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_dataset, LabelEncoder, LabeledImage, Origin};
    use crate::layers::{softmax, Param};

    /// Logits `[-θ, 0, …, 0]` with a constant gradient of −1 on θ, so every
    /// SGD step pushes mass away from class 0.
    #[derive(Debug, Clone)]
    struct Drifting {
        theta: Param<f64>,
        probs: Option<Tensor<f64>>,
    }

    impl Classifier<f64> for Drifting {
        fn num_classes(&self) -> usize {
            4
        }

        fn forward(&mut self, _x: &Tensor<f64>) -> Result<Tensor<f64>> {
            let t = self.theta.value.data()[0];
            let p = softmax(&Tensor::from_vec(&[4], vec![-t, 0.0, 0.0, 0.0])?);
            self.probs = Some(p.clone());
            Ok(p)
        }

        fn loss(&self, target: usize) -> Result<f64> {
            Ok(-self.probs.as_ref().unwrap().data()[target].ln())
        }

        fn backward(&mut self, _target: usize) -> Result<()> {
            self.theta.grad.data_mut()[0] -= 1.0;
            Ok(())
        }

        fn params_mut(&mut self) -> Vec<ParamMut<'_, f64>> {
            vec![ParamMut {
                name: "theta".into(),
                value: &mut self.theta.value,
                grad: &mut self.theta.grad,
                trainable: true,
            }]
        }

        fn zero_grad(&mut self) {
            self.theta.grad.fill(0.0);
        }
    }

    fn class0_set(n: usize) -> Dataset {
        let enc = LabelEncoder::new(["a", "b", "c", "d"]).unwrap();
        let items = (0..n)
            .map(|_| LabeledImage {
                pixels: Tensor::zeros(&[1, 1, 3]).unwrap(),
                label: 0,
                origin: Origin::Original,
            })
            .collect();
        Dataset::new(items, enc).unwrap()
    }

    fn drifting() -> Drifting {
        Drifting {
            theta: Param::new(Tensor::zeros(&[1]).unwrap()),
            probs: None,
        }
    }

    fn sgd(epochs: usize, patience: Option<usize>) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 2,
            optimizer: OptimizerKind::Sgd,
            lr: 0.1,
            patience,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn rising_validation_loss_stops_after_patience() {
        let ds = class0_set(4);
        let (net, hist) = train(drifting(), &ds, &ds, &sgd(100, Some(10))).unwrap();
        assert_eq!(hist.epochs.len(), 11);
        assert!(hist.stopped_early);
        assert_eq!(hist.best_epoch, 1);
        // restored weights are those after epoch 1: two steps of +0.1
        assert!((net.theta.value.data()[0] - 0.2).abs() < 1e-12);
        for w in hist.epochs.windows(2) {
            assert!(w[1].val_loss > w[0].val_loss);
        }
    }

    #[test]
    fn unlimited_patience_runs_every_epoch() {
        let ds = class0_set(4);
        let (_, hist) = train(drifting(), &ds, &ds, &sgd(100, None)).unwrap();
        assert_eq!(hist.epochs.len(), 100);
        assert!(!hist.stopped_early);
        assert_eq!(hist.epochs.last().unwrap().epoch, 100);
    }

    #[test]
    fn mean_gradient_is_batch_size_independent() {
        let (one, _) = train(drifting(), &class0_set(1), &class0_set(1), &sgd(1, None)).unwrap();
        let (two, _) = train(drifting(), &class0_set(2), &class0_set(1), &sgd(1, None)).unwrap();
        assert_eq!(one.theta.value, two.theta.value);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { patience: Some(0), ..TrainConfig::default() },
            TrainConfig { min_delta: -1.0, ..TrainConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn class_count_mismatch() {
        let ds = synth_dataset(3, 8, 0).unwrap();
        let enc = LabelEncoder::new(["x", "y"]).unwrap();
        let two = Dataset::new(ds.items()[..2].iter().map(|i| LabeledImage { label: 0, ..i.clone() }).collect(), enc)
            .unwrap();
        let err = train(drifting(), &two, &two, &sgd(1, None)).unwrap_err();
        assert!(err.to_string().contains("4 classes"), "{err}");
    }

    #[test]
    fn uniform_outputs_give_ln_k_and_class_zero() {
        let ds = synth_dataset(2, 8, 0).unwrap();
        let mut net = drifting();
        let (loss, preds) = evaluate::<f64, _>(&mut net, &ds.subset(&[0])).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
        assert_eq!(preds, vec![0]);
        let mut stub = drifting();
        let all = evaluate::<f64, _>(&mut stub, &ds).unwrap();
        assert!(all.1.iter().all(|&p| p == 0));
        assert_eq!(all, evaluate::<f64, _>(&mut stub, &ds).unwrap());
    }

    #[test]
    fn history_csv_has_one_line_per_epoch() {
        let ds = class0_set(4);
        let (_, hist) = train(drifting(), &ds, &ds, &sgd(23, None)).unwrap();
        let csv = hist.to_csv();
        assert_eq!(csv.lines().count(), 24);
        assert!(csv.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n1,"));
    }
}
