use asldn_core::optim::AdamConfig;
use asldn_core::trainer::{self, ConstantPredictor, Sequential, TrainConfig};
use asldn_core::{seed, LossKind, NetworkParameters, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Exp};

const H: usize = 3;
const W: usize = 4;
const SAMPLES: usize = 51;

/// Skewed per-pixel targets so that mean and median differ clearly.
fn targets(salt: u64) -> Vec<Tensor<f64>> {
    let mut rng = seed::rng(salt);
    let exp = Exp::new(1.0).unwrap();
    (0..SAMPLES)
        .map(|_| Tensor::from_fn(&[H, W], |i| 2.0 + i as f64 * 0.25 + exp.sample(&mut rng)))
        .collect()
}

/// Corrupts the `count` largest samples of every pixel with spikes of 40..60.
/// Only values above the median move, so the median itself is unchanged.
fn contaminate(clean: &[Tensor<f64>], count: usize, salt: u64) -> Vec<Tensor<f64>> {
    let mut rng = seed::rng(salt);
    let mut dirty = clean.to_vec();
    for i in 0..H * W {
        let mut order: Vec<usize> = (0..clean.len()).collect();
        order.sort_by(|&a, &b| clean[b].data()[i].total_cmp(&clean[a].data()[i]));
        for &s in &order[..count] {
            dirty[s].data_mut()[i] += rng.random_range(40.0..60.0);
        }
    }
    dirty
}

fn fit(targets: &[Tensor<f64>], loss: LossKind) -> Tensor<f64> {
    let input = Tensor::zeros(&[H, W]);
    let data: Vec<_> = targets.iter().map(|t| (input.clone(), t.clone())).collect();
    let mut params: NetworkParameters<f64> = ConstantPredictor::init(H, W);
    // Coarse then fine: Adam hovers within about one learning rate of the optimum.
    for (lr, epochs) in [(0.05, 1500), (1e-3, 1500), (1e-4, 500)] {
        let cfg = TrainConfig {
            loss,
            batch_size: SAMPLES,
            epochs,
            shuffle: false,
            adam: AdamConfig {
                learning_rate: lr,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        trainer::train(&ConstantPredictor, &mut params, &data, &cfg, &Sequential, |_, _| Ok(())).unwrap();
    }
    params.get(ConstantPredictor::PARAM).unwrap().clone()
}

fn column(targets: &[Tensor<f64>], i: usize) -> Vec<f64> {
    let mut v: Vec<f64> = targets.iter().map(|t| t.data()[i]).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn squared_error_learns_the_mean() {
    let t = targets(1);
    let fitted = fit(&t, LossKind::L2);
    for i in 0..H * W {
        let c = column(&t, i);
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        let median = c[c.len() / 2];
        assert!((fitted.data()[i] - mean).abs() < 1e-2, "pixel {i}: {} vs mean {mean}", fitted.data()[i]);
        assert!((mean - median).abs() > 0.1, "fixture should separate mean and median");
    }
}

#[test]
fn absolute_error_learns_the_median() {
    let t = targets(2);
    let fitted = fit(&t, LossKind::L1);
    for i in 0..H * W {
        let c = column(&t, i);
        let median = c[c.len() / 2];
        assert!((fitted.data()[i] - median).abs() < 2e-2, "pixel {i}: {} vs median {median}", fitted.data()[i]);
    }
}

#[test]
fn absolute_error_shrugs_off_ten_percent_outliers() {
    let clean = targets(3);
    let dirty = contaminate(&clean, SAMPLES / 10, 4);
    let l1 = fit(&dirty, LossKind::L1);
    let l2 = fit(&dirty, LossKind::L2);
    for i in 0..H * W {
        let c = column(&clean, i);
        let clean_median = c[c.len() / 2];
        let clean_mean = c.iter().sum::<f64>() / c.len() as f64;
        let dirty_mean = column(&dirty, i).iter().sum::<f64>() / SAMPLES as f64;
        assert!((l1.data()[i] - clean_median).abs() < 2e-2, "pixel {i}: {} vs median {clean_median}", l1.data()[i]);
        assert!((l2.data()[i] - dirty_mean).abs() < 1e-2, "pixel {i}: L2 should sit at the contaminated mean");
        // Five spikes of ~50 over 51 samples drag the mean by ~5.
        assert!(dirty_mean - clean_mean > 3.9);
        assert!(l2.data()[i] - clean_mean > 3.8, "pixel {i}: L2 moved {}", l2.data()[i] - clean_mean);
    }
}
