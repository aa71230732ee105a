use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{frames_tensor, Spae};
use crate::error::{Error, Result};
use crate::mesh::MeshFrame;
use crate::seed;
use crate::tensor::{lr_decay, save_checkpoint, AdamConfig, AdamState, Graph, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct SpaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 disables the periodic
    /// ones); the final checkpoint is always written when a path is set.
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for SpaeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 8,
            learning_rate: 1e-3,
            decay_rate: 0.99,
            weight_decay: 5e-5,
            seed: 0,
            checkpoint_every: 50,
            checkpoint_path: None,
        }
    }
}

impl SpaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "need learning_rate > 0, decay_rate in (0, 1], weight_decay >= 0; got {}, {}, {}",
                self.learning_rate, self.decay_rate, self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpaeReport {
    /// Mean training L1 loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub optimizer: AdamState<f32>,
}

/// Metadata written into autoencoder checkpoints.
pub fn spae_checkpoint_meta(model: &Spae<f32>, epoch: usize) -> String {
    let h = model.hierarchy();
    let lengths: Vec<String> = h.spiral_lengths.iter().map(usize::to_string).collect();
    let factors: Vec<String> = h.factors.iter().map(f64::to_string).collect();
    format!(
        "kind=spae\nlatent_dim={}\nepoch={epoch}\ntopology={:#018x}\nfactors={}\nspiral_lengths={}\n",
        model.latent_dim(),
        h.levels[0].topology.checksum(),
        factors.join(","),
        lengths.join(",")
    )
}

/// Mini-batch reconstruction training: encode, decode, mean L1 against
/// the input, backward, Adam. The learning rate decays once per epoch.
/// `on_epoch` sees `(epoch, mean loss)` after every epoch.
pub fn train_spae(
    model: &mut Spae<f32>,
    frames: &[MeshFrame],
    config: &SpaeTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<SpaeReport> {
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::Config("autoencoder training needs at least one frame".into()));
    }
    let v = model.vertex_count();
    let mut optimizer = AdamState::new(model.params(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "spae-shuffle"));
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = lr_decay(config.learning_rate, epoch, config.decay_rate);
        let mut total = 0.0;
        for (iteration, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&MeshFrame> = chunk.iter().map(|&i| &frames[i]).collect();
            let x = frames_tensor::<f32>(&batch, v)?;
            let abort = |loss: f64| Error::NonFiniteLoss {
                epoch,
                iteration,
                loss,
            };
            let mut g = Graph::with_params(model.params());
            let step = (|| {
                let input = g.constant(x);
                let z = model.encode_node(&mut g, input, batch.len())?;
                let y = model.decode_node(&mut g, z, batch.len())?;
                g.l1_loss(y, input)
            })();
            let loss_var = match step {
                Ok(l) => l,
                Err(TensorError::NonFinite { .. }) => return Err(abort(f64::NAN)),
                Err(e) => return Err(e.into()),
            };
            let loss = g.value(loss_var).item() as f64;
            if !loss.is_finite() {
                return Err(abort(loss));
            }
            let grads = g.backward(loss_var)?.into_param_grads();
            drop(g);
            optimizer.step(model.params_mut(), &grads, lr, config.weight_decay)?;
            total += loss * batch.len() as f64;
        }
        let mean = total / frames.len() as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);

        if let Some(path) = &config.checkpoint_path {
            let last = epoch + 1 == config.epochs;
            let periodic = config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0;
            if last || periodic {
                let meta = spae_checkpoint_meta(model, epoch + 1);
                save_checkpoint(path, model.params(), Some(&optimizer), &meta)?;
            }
        }
    }
    Ok(SpaeReport {
        epoch_losses,
        optimizer,
    })
}

/// Mean over frames and vertices of the per-vertex L1 distance
/// `|dx| + |dy| + |dz|` between each frame and its reconstruction.
pub fn reconstruction_error(model: &Spae<f32>, frames: &[MeshFrame]) -> Result<f64> {
    let v = model.vertex_count();
    let mut total = 0.0;
    for chunk in frames.chunks(16) {
        let refs: Vec<&MeshFrame> = chunk.iter().collect();
        let x = frames_tensor::<f32>(&refs, v)?;
        let z = model.encode_frames(&refs)?;
        let y = model.decode_codes(&z)?;
        total += x
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>();
    }
    Ok(total / (frames.len() * v) as f64)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::hierarchy::build_hierarchy;
    use crate::mesh::{icosphere, synth_generate};

    fn setup() -> (Spae<f32>, Vec<MeshFrame>) {
        let (topo, frame) = icosphere(2);
        let h = build_hierarchy(&topo, &frame, &[2.0; 4], &[12, 12, 10, 10, 8]).unwrap();
        let seq = synth_generate((&topo, &frame), 2, 1, 6).unwrap();
        (Spae::new(Arc::new(h), 8, 1).unwrap(), seq.frames)
    }

    #[test]
    fn short_run_is_finite_and_reproducible() {
        let (m0, frames) = setup();
        let config = SpaeTrainConfig {
            epochs: 3,
            batch_size: 4,
            seed: 9,
            ..Default::default()
        };
        let mut a = m0.clone();
        let mut b = m0.clone();
        let mut seen = Vec::new();
        let ra = train_spae(&mut a, &frames, &config, |e, l| seen.push((e, l))).unwrap();
        let rb = train_spae(&mut b, &frames, &config, |_, _| {}).unwrap();
        assert_eq!(seen.len(), 3);
        assert!(ra.epoch_losses.iter().all(|l| l.is_finite()));
        assert_eq!(ra.epoch_losses, rb.epoch_losses);
        assert_eq!(a.params(), b.params());
        assert_eq!(ra.optimizer.step_count, 6);
    }

    #[test]
    fn checkpoints_written() {
        let (mut m, frames) = setup();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spae.ckpt");
        let config = SpaeTrainConfig {
            epochs: 2,
            checkpoint_path: Some(path.clone()),
            ..Default::default()
        };
        train_spae(&mut m, &frames, &config, |_, _| {}).unwrap();
        let ckpt = crate::tensor::load_checkpoint(&path).unwrap();
        assert!(ckpt.meta.contains("epoch=2"));
        assert_eq!(&ckpt.params, m.params());
        assert!(ckpt.optimizer.is_some());
    }

    #[test]
    fn exploding_learning_rate_aborts_with_diagnostics() {
        let (mut m, frames) = setup();
        let config = SpaeTrainConfig {
            epochs: 50,
            learning_rate: 1e30,
            ..Default::default()
        };
        match train_spae(&mut m, &frames, &config, |_, _| {}) {
            Err(Error::NonFiniteLoss { epoch, .. }) => assert!(epoch < 50),
            other => panic!("expected a non-finite loss abort, got {:?}", other.map(|r| r.epoch_losses)),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let (mut m, frames) = setup();
        let config = SpaeTrainConfig {
            decay_rate: 1.5,
            ..Default::default()
        };
        assert!(matches!(train_spae(&mut m, &frames, &config, |_, _| {}), Err(Error::Config(_))));
        assert!(train_spae(&mut m, &[], &SpaeTrainConfig::default(), |_, _| {}).is_err());
    }
}
