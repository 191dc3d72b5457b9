//! Mini-batch training on (noisy input, noisy reference) pairs.
//!
//! Each batch is split into per-sample graphs whose losses and gradients are
//! combined in sample order, so the result does not depend on how a
//! [`BatchRunner`] schedules the samples. The batch loss is the mean of the
//! per-sample losses, which equals the elementwise mean over the whole batch
//! because all slices share one shape.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::loss::LossKind;
use crate::network::{Dwan, NetworkParameters};
use crate::optim::{AdamConfig, AdamState};
use crate::seed;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Epochs between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::L1,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            shuffle: true,
            checkpoint_every: 10,
            adam: AdamConfig::default(),
        }
    }
}

/// A differentiable predictor trained by [`train`].
pub trait Model<T: Scalar>: Sync {
    /// Loss of one `[H, W]` sample and the gradient of every parameter.
    fn loss_and_grads(
        &self,
        params: &NetworkParameters<T>,
        input: &Tensor<T>,
        target: &Tensor<T>,
        loss: LossKind,
    ) -> Result<(f64, Vec<Option<Tensor<T>>>)>;
}

fn as_batch<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let [h, w] = image.dims2("training sample")?;
    image.reshape(&[1, 1, h, w])
}

impl<T: Scalar> Model<T> for Dwan {
    fn loss_and_grads(
        &self,
        params: &NetworkParameters<T>,
        input: &Tensor<T>,
        target: &Tensor<T>,
        loss: LossKind,
    ) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
        let mut g = Graph::new();
        let x = g.leaf(as_batch(input)?, false);
        let y = g.leaf(as_batch(target)?, false);
        let nodes = self.record(&mut g, params, x, true)?;
        let l = g.loss(loss, nodes.output, y)?;
        let value = g.value(l)?.data()[0].as_f64();
        g.backward(l)?;
        let grads = nodes
            .params
            .iter()
            .map(|&id| g.take_grad(id))
            .collect::<Result<Vec<_>>>()?;
        Ok((value, grads))
    }
}

/// Sanity harness: the "network" is one learnable image that ignores its input.
///
/// Trained on noisy targets it should settle at the per-pixel mean (L2) or
/// median (L1) of those targets.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantPredictor;

impl ConstantPredictor {
    pub const PARAM: &'static str = "bias_image";

    pub fn init<T: Scalar>(height: usize, width: usize) -> NetworkParameters<T> {
        NetworkParameters::new(alloc::vec![(Self::PARAM.into(), Tensor::zeros(&[height, width]))])
            .expect("single name")
    }
}

impl<T: Scalar> Model<T> for ConstantPredictor {
    fn loss_and_grads(
        &self,
        params: &NetworkParameters<T>,
        _input: &Tensor<T>,
        target: &Tensor<T>,
        loss: LossKind,
    ) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
        let mut g = Graph::new();
        let b = g.leaf_ref(params.get(Self::PARAM)?, true);
        let y = g.leaf_ref(target, false);
        let l = g.loss(loss, b, y)?;
        let value = g.value(l)?.data()[0].as_f64();
        g.backward(l)?;
        Ok((value, alloc::vec![g.take_grad(b)?]))
    }
}

/// Evaluates independent per-sample jobs, returning results in index order.
pub trait BatchRunner {
    fn run<R, F>(&self, n: usize, job: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl BatchRunner for Sequential {
    fn run<R, F>(&self, n: usize, job: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).map(job).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    pub steps: u64,
}

/// Sample order for one epoch (seeded per epoch).
pub fn epoch_order(n: usize, seed: u64, epoch: usize, shuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut seed::rng(seed::derive(seed, "shuffle", epoch as u64)));
    }
    order
}

/// Trains `params` in place.
///
/// `on_epoch` sees the parameters after every epoch; returning an error
/// aborts training with that error. A non-finite loss aborts with
/// [`Error::NonFiniteLoss`] before the offending step is applied.
pub fn train<T, M, R>(
    model: &M,
    params: &mut NetworkParameters<T>,
    dataset: &[(Tensor<T>, Tensor<T>)],
    config: &TrainConfig,
    runner: &R,
    mut on_epoch: impl FnMut(&EpochReport, &NetworkParameters<T>) -> Result<()>,
) -> Result<TrainOutcome>
where
    T: Scalar,
    M: Model<T>,
    R: BatchRunner,
{
    let Some((first, _)) = dataset.first() else {
        return Err(Error::EmptyDataset);
    };
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    for (x, y) in dataset {
        first.expect_shape("training pair", x.shape())?;
        first.expect_shape("training pair", y.shape())?;
    }

    let mut adam = AdamState::new(params, config.adam);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let order = epoch_order(dataset.len(), config.seed, epoch, config.shuffle);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let current: &NetworkParameters<T> = params;
            let results = runner.run(batch.len(), |k| {
                let (x, y) = &dataset[batch[k]];
                model.loss_and_grads(current, x, y, config.loss)
            });
            let mut sum: Option<Vec<Option<Tensor<T>>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (value, grads) = r?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step: adam.step_count() as usize + 1,
                    });
                }
                batch_loss += value;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grads) {
                            match (a.as_mut(), g) {
                                (Some(a), Some(g)) => a.add_assign(&g)?,
                                (None, g) => *a = g,
                                (Some(_), None) => {}
                            }
                        }
                    }
                }
            }
            let mut grads = sum.expect("non-empty batch");
            let inv = T::from_f64(1.0 / batch.len() as f64);
            for g in grads.iter_mut().flatten() {
                g.scale(inv);
            }
            adam.step(params, &grads)?;
            epoch_loss += batch_loss;
        }
        let mean_loss = epoch_loss / dataset.len() as f64;
        trace.push(mean_loss);
        on_epoch(
            &EpochReport {
                epoch,
                mean_loss,
                steps: adam.step_count(),
            },
            params,
        )?;
    }
    Ok(TrainOutcome {
        loss_trace: trace,
        steps: adam.step_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn empty_dataset_is_rejected() {
        let mut p = ConstantPredictor::init::<f64>(2, 2);
        let r = train(&ConstantPredictor, &mut p, &[], &TrainConfig::default(), &Sequential, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }

    #[test]
    fn nan_target_aborts() {
        let mut p = ConstantPredictor::init::<f64>(1, 2);
        let ds = vec![(
            Tensor::zeros(&[1, 2]),
            Tensor::from_vec(&[1, 2], vec![1.0, f64::NAN]).unwrap(),
        )];
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let r = train(&ConstantPredictor, &mut p, &ds, &cfg, &Sequential, |_, _| Ok(()));
        assert!(matches!(r, Err(Error::NonFiniteLoss { epoch: 1, step: 1 })));
        assert_eq!(p.get(ConstantPredictor::PARAM).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn partial_last_batch_is_trained() {
        let mut p = ConstantPredictor::init::<f64>(1, 1);
        let ds: Vec<_> = (0..5)
            .map(|i| (Tensor::zeros(&[1, 1]), Tensor::full(&[1, 1], i as f64)))
            .collect();
        let cfg = TrainConfig {
            batch_size: 2,
            epochs: 3,
            ..TrainConfig::default()
        };
        let out = train(&ConstantPredictor, &mut p, &ds, &cfg, &Sequential, |_, _| Ok(())).unwrap();
        assert_eq!(out.steps, 9);
        assert_eq!(out.loss_trace.len(), 3);
    }

    #[test]
    fn epoch_orders_are_permutations_and_differ() {
        let a = epoch_order(20, 5, 1, true);
        let b = epoch_order(20, 5, 2, true);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..20).collect::<Vec<_>>());
        assert_ne!(a, b);
        assert_eq!(a, epoch_order(20, 5, 1, true));
        assert_eq!(epoch_order(4, 5, 1, false), vec![0, 1, 2, 3]);
    }
}
