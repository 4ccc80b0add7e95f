use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Architecture, Model};
use crate::dataset::LabeledImageSet;
use crate::error::{Error, Result};

/// Mini-batch SGD settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            learning_rate: 0.01,
            batch_size: 4,
            seed: 0x5e31_1e40,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean cross-entropy over each epoch, measured as the batches were seen.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn first_loss(&self) -> f64 {
        self.epoch_losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least one epoch")
    }
}

/// Trains the digit architecture from a seeded initialization.
pub fn train(dataset: &LabeledImageSet, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    train_with(Architecture::digit(), dataset, cfg)
}

pub fn train_with(
    arch: Architecture,
    dataset: &LabeledImageSet,
    cfg: &TrainConfig,
) -> Result<(Model, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if let Some(bad) = dataset.labels().iter().find(|&&l| l as usize >= arch.classes) {
        return Err(Error::Input(format!(
            "label {bad} outside 0..{}",
            arch.classes
        )));
    }

    let mut model = Model::new(arch.clone(), cfg.seed)?;
    let mut grad = Model::zeros(arch);
    // Separate stream from the one used for initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            for slice in grad.param_slices_mut() {
                slice.fill(0.0);
            }
            for &i in batch {
                let label = dataset.labels()[i] as usize;
                total += model.accumulate_gradient(&dataset.images()[i], label, &mut grad)?;
            }
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, loss: total });
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (p, g) in model.param_slices_mut().into_iter().zip(grad.param_slices()) {
                for (pv, gv) in p.iter_mut().zip(g) {
                    *pv -= step * gv;
                }
            }
        }
        let mean = total / dataset.len() as f64;
        if !mean.is_finite() || !model.is_finite() {
            return Err(Error::Diverged { epoch, loss: mean });
        }
        epoch_losses.push(mean);
    }
    Ok((model, TrainReport { epoch_losses }))
}

/// Fraction of images whose predicted class equals the label.
pub fn evaluate(model: &Model, dataset: &LabeledImageSet) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    let mut correct = 0usize;
    for (image, &label) in dataset.images().iter().zip(dataset.labels()) {
        if model.predict(image)? == label as usize {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvSpec;
    use crate::raster::Raster;
    use rand::Rng;

    fn toy_arch() -> Architecture {
        Architecture {
            input_side: 6,
            convs: vec![ConvSpec {
                filters: 2,
                kernel: 3,
            }],
            hidden: 5,
            classes: 2,
        }
    }

    fn stripes(n: usize, seed: u64) -> LabeledImageSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = (i % 2) as u8;
            let mut r = Raster::zeros(6, 6);
            for y in 0..6 {
                for x in 0..6 {
                    let on = if label == 0 { x % 2 == 0 } else { y % 2 == 0 };
                    let noise: f32 = rng.gen_range(0.0..0.2);
                    r.set(x, y, if on { 0.8 + noise } else { noise });
                }
            }
            images.push(r);
            labels.push(label);
        }
        LabeledImageSet::new(images, labels, "stripes").unwrap()
    }

    #[test]
    fn rejects_bad_config() {
        let data = stripes(4, 1);
        for cfg in [
            TrainConfig {
                epochs: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                train_with(toy_arch(), &data, &cfg),
                Err(Error::Parameter(_))
            ));
        }
    }

    #[test]
    fn empty_dataset_is_input_error() {
        let empty = LabeledImageSet::new(vec![], vec![], "empty").unwrap();
        assert!(matches!(
            train(&empty, &TrainConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn single_image_step_reduces_loss() {
        let data = stripes(1, 3);
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: 0.05,
            batch_size: 1,
            seed: 9,
        };
        let initial = Model::new(toy_arch(), cfg.seed).unwrap();
        let before = initial.loss(&data.images()[0], 0).unwrap();
        let (trained, _) = train_with(toy_arch(), &data, &cfg).unwrap();
        let after = trained.loss(&data.images()[0], 0).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn learns_toy_task_deterministically() {
        let data = stripes(200, 4);
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 0.05,
            batch_size: 4,
            seed: 17,
        };
        let (a, report) = train_with(toy_arch(), &data, &cfg).unwrap();
        let (b, _) = train_with(toy_arch(), &data, &cfg).unwrap();
        assert_eq!(
            a.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(report.final_loss() < report.first_loss());
        assert!(evaluate(&a, &stripes(50, 99)).unwrap() > 0.9);
    }

    #[test]
    fn divergence_names_epoch() {
        let data = stripes(20, 5);
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 1e300,
            batch_size: 2,
            seed: 1,
        };
        match train_with(toy_arch(), &data, &cfg) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
