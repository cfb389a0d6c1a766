//! Per-frame contrastive fine-tuning with SGD, warmup and cosine decay.
//!
//! Each step encodes both views of every sample, evaluates the batch loss,
//! then replays every view with activation caches to backpropagate its
//! share of the gradient. Only one view's caches are alive per worker.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_views, lr_at, patchify, total_loss_with_grad, Checkpoint, LabeledBatch, TrainConfig};
use crate::error::{Error, Result};
use crate::media::HdrFrame;
use crate::nn::{Network, Projector, Tensor};
use crate::seed;

/// Frames available for fine-tuning, one per sample.
pub trait TrainingSet: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// PQ R'G'B' 4:4:4 frame of sample `index`.
    fn frame(&self, index: usize) -> Result<HdrFrame>;

    /// Stable identity of the corpus, stored in checkpoints.
    fn corpus_hash(&self) -> String;
}

/// Frames held in memory, converted to the encoder input space up front.
#[derive(Debug, Clone)]
pub struct InMemoryFrames {
    frames: Vec<HdrFrame>,
    hash: String,
}

impl InMemoryFrames {
    pub fn new(frames: Vec<HdrFrame>) -> Result<Self> {
        let frames = frames.iter().map(HdrFrame::to_pq_rgb).collect::<Result<Vec<_>>>()?;
        let mut h = Sha256::new();
        for f in &frames {
            h.update((f.width() as u64).to_le_bytes());
            h.update((f.height() as u64).to_le_bytes());
            for p in &f.planes {
                for v in &p.data {
                    h.update(v.to_le_bytes());
                }
            }
        }
        Ok(InMemoryFrames {
            frames,
            hash: hex::encode(h.finalize()),
        })
    }

    pub fn frames(&self) -> &[HdrFrame] {
        &self.frames
    }
}

impl TrainingSet for InMemoryFrames {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, index: usize) -> Result<HdrFrame> {
        self.frames.get(index).cloned().ok_or(Error::IndexOutOfRange {
            index,
            count: self.frames.len(),
        })
    }

    fn corpus_hash(&self) -> String {
        self.hash.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Rate used by the epoch's last step.
    pub lr: f64,
    pub wall_time_s: f64,
    pub steps: usize,
}

/// Spatially averaged encoder output over the patches of a view.
pub fn encode_view(net: &Network, params: &[f32], view: &Tensor, patch: usize) -> Result<Vec<f32>> {
    let patches = patchify(view, patch)?;
    Ok(mean_features(net, params, &patches))
}

fn mean_features(net: &Network, params: &[f32], patches: &[Tensor]) -> Vec<f32> {
    let mut acc = vec![0.0f32; net.out_dim];
    for p in patches {
        for (a, v) in acc.iter_mut().zip(net.infer(params, p.clone())) {
            *a += v;
        }
    }
    let inv = 1.0 / patches.len() as f32;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// SGD with momentum and L2 weight decay, in the form
/// `v = mu v + (g + wd w); w -= lr v`.
struct Sgd {
    velocity: Vec<f32>,
    momentum: f32,
    weight_decay: f32,
}

impl Sgd {
    fn new(len: usize, cfg: &TrainConfig) -> Self {
        Sgd {
            velocity: vec![0.0; len],
            momentum: cfg.momentum as f32,
            weight_decay: cfg.weight_decay as f32,
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32) {
        for ((w, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = self.momentum * *v + g + self.weight_decay * *w;
            *w -= lr * *v;
        }
    }
}

struct Models {
    encoder: Network,
    projector: Projector,
}

/// Returns the batch loss after applying one update.
#[allow(clippy::too_many_arguments)]
fn train_step(
    models: &Models,
    ckpt: &mut Checkpoint,
    opt: (&mut Sgd, &mut Sgd),
    data: &dyn TrainingSet,
    batch: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
    lr: f64,
) -> Result<(f64, usize)> {
    let (enc, proj) = (&models.encoder, &models.projector);
    let views: Vec<Vec<Tensor>> = batch
        .par_iter()
        .map(|&idx| -> Result<[Vec<Tensor>; 2]> {
            let frame = data.frame(idx)?;
            let mut rng = seed::stream(cfg.seed, &[1, epoch as u64, idx as u64]);
            let pair = build_views(&frame, cfg.crop_size, cfg.flip, &mut rng)?;
            Ok([patchify(&pair.anchor, cfg.patch_size)?, patchify(&pair.positive, cfg.patch_size)?])
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let hs: Vec<Vec<f32>> = views.par_iter().map(|p| mean_features(enc, &ckpt.encoder, p)).collect();
    let zs: Vec<f32> = hs
        .par_iter()
        .map(|h| proj.forward(&ckpt.projector, h).0)
        .collect::<Vec<_>>()
        .concat();
    let k = proj.out_dim;
    let non_finite = |detail: String| Error::NonFiniteLoss {
        epoch: epoch + 1,
        step: 0,
        detail,
    };
    if zs.iter().any(|v| !v.is_finite()) {
        return Err(non_finite("non-finite projection".into()));
    }
    let lb = LabeledBatch::paired_views(zs.iter().map(|&v| v as f64).collect(), k, cfg.tau)?;
    let (loss, dz) = match total_loss_with_grad(&lb) {
        Ok(r) => r,
        Err(Error::ZeroVector) => return Err(non_finite("zero projection vector".into())),
        Err(e) => return Err(e),
    };
    if !loss.is_finite() || dz.iter().any(|v| !v.is_finite()) {
        return Err(non_finite(format!("loss {loss}")));
    }

    let (le, lp) = (enc.param_len(), proj.param_len());
    let (g_enc, g_proj) = (0..views.len())
        .into_par_iter()
        .fold(
            || (vec![0.0f32; le], vec![0.0f32; lp]),
            |(mut ge, mut gp), v| {
                let (_, cache) = proj.forward(&ckpt.projector, &hs[v]);
                let dzv: Vec<f32> = dz[v * k..(v + 1) * k].iter().map(|&x| x as f32).collect();
                let dh = proj.backward(&ckpt.projector, &mut gp, &dzv, cache);
                let inv = 1.0 / views[v].len() as f32;
                let dpatch: Vec<f32> = dh.iter().map(|d| d * inv).collect();
                for p in &views[v] {
                    let (_, cache) = enc.forward(&ckpt.encoder, p.clone());
                    enc.backward(&ckpt.encoder, &mut ge, &dpatch, cache);
                }
                (ge, gp)
            },
        )
        .reduce(
            || (vec![0.0f32; le], vec![0.0f32; lp]),
            |(mut a, mut b), (c, d)| {
                a.iter_mut().zip(&c).for_each(|(x, y)| *x += y);
                b.iter_mut().zip(&d).for_each(|(x, y)| *x += y);
                (a, b)
            },
        );
    if g_enc.iter().chain(&g_proj).any(|v| !v.is_finite()) {
        return Err(non_finite("non-finite gradient".into()));
    }
    opt.0.step(&mut ckpt.encoder, &g_enc, lr as f32);
    opt.1.step(&mut ckpt.projector, &g_proj, lr as f32);
    Ok((loss, batch.len()))
}

/// Fine-tunes `init` on `data`. `on_epoch` sees every epoch's log and
/// weights, e.g. to write per-epoch checkpoints.
pub fn finetune(
    data: &dyn TrainingSet,
    init: Checkpoint,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Checkpoint) -> Result<()>,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    cfg.validate()?;
    init.check_compatible()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let min = init.model.encoder_kind.min_input();
    if cfg.patch_size < min {
        return Err(Error::Config(format!(
            "patch size {} is below the encoder's minimum input {min}",
            cfg.patch_size
        )));
    }
    let models = Models {
        encoder: init.model.encoder(),
        projector: init.model.projector(),
    };
    let base_epoch = init.epoch;
    let mut ckpt = Checkpoint {
        train: Some(cfg.clone()),
        corpus_hash: Some(data.corpus_hash()),
        ..init
    };
    let mut opt_enc = Sgd::new(ckpt.encoder.len(), cfg);
    let mut opt_proj = Sgd::new(ckpt.projector.len(), cfg);
    let spe = cfg.steps_per_epoch(data.len());
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seed::stream(cfg.seed, &[0, epoch as u64]));
        let (mut loss_sum, mut seen, mut lr) = (0.0, 0usize, 0.0);
        for (s, batch) in order.chunks(cfg.batch_size).enumerate() {
            lr = lr_at(epoch * spe + s, cfg, spe);
            let (loss, n) = train_step(&models, &mut ckpt, (&mut opt_enc, &mut opt_proj), data, batch, cfg, epoch, lr)
                .map_err(|e| match e {
                    Error::NonFiniteLoss { epoch, detail, .. } => Error::NonFiniteLoss { epoch, step: s, detail },
                    e => e,
                })?;
            log::debug!("epoch {} step {s}: loss {loss:.5} lr {lr:.5}", epoch + 1);
            loss_sum += loss * n as f64;
            seen += n;
        }
        ckpt.epoch = base_epoch + epoch + 1;
        let entry = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / seen as f64,
            lr,
            wall_time_s: start.elapsed().as_secs_f64(),
            steps: spe,
        };
        log::info!(
            "epoch {}/{}: mean loss {:.5}, lr {:.5}, {:.1}s",
            entry.epoch,
            cfg.epochs,
            entry.mean_loss,
            entry.lr,
            entry.wall_time_s
        );
        on_epoch(&entry, &ckpt)?;
        logs.push(entry);
    }
    Ok((ckpt, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::ModelConfig;
    use crate::media::{ChromaSiting, FrameGeometry, PixelLayout, Plane};
    use crate::nn::EncoderKind;

    fn textured(seed: u64, size: usize) -> HdrFrame {
        use rand::Rng;
        let mut rng = seed::stream(seed, &[]);
        let g = FrameGeometry {
            chroma: ChromaSiting::Cs444,
            pixel_layout: PixelLayout::Rgb,
            full_range: true,
            ..FrameGeometry::hdr10(size, size)
        };
        let planes = [0, 1, 2].map(|_| Plane {
            width: size,
            height: size,
            data: (0..size * size).map(|_| rng.random_range(0.2f32..0.8)).collect(),
        });
        HdrFrame::new(g, planes).unwrap()
    }

    fn small_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            crop_size: 16,
            patch_size: 8,
            epochs,
            warmup_epochs: 0,
            base_lr: 0.05,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_leave_weights_untouched() {
        let data = InMemoryFrames::new((0..3).map(|s| textured(s, 20)).collect()).unwrap();
        let init = Checkpoint::random(ModelConfig::new(EncoderKind::ToyCnn), 1).unwrap();
        let (out, logs) = finetune(&data, init.clone(), &small_cfg(0), |_, _| Ok(())).unwrap();
        assert!(logs.is_empty());
        assert_eq!(out.encoder, init.encoder);
        assert_eq!(out.projector, init.projector);
    }

    #[test]
    fn training_is_reproducible_and_moves_weights() {
        let data = InMemoryFrames::new((0..6).map(|s| textured(s, 20)).collect()).unwrap();
        let init = Checkpoint::random(ModelConfig::new(EncoderKind::ToyCnn), 2).unwrap();
        let mut seen = Vec::new();
        let (a, logs) = finetune(&data, init.clone(), &small_cfg(2), |log, c| {
            seen.push((log.epoch, c.epoch));
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![(1, 1), (2, 2)]);
        assert_eq!(logs[0].steps, 2);
        assert!(logs.iter().all(|l| l.mean_loss.is_finite() && l.mean_loss > 0.0));
        assert_ne!(a.encoder, init.encoder);
        assert_eq!(a.corpus_hash.as_deref(), Some(data.corpus_hash().as_str()));
        let (b, _) = finetune(&data, init, &small_cfg(2), |_, _| Ok(())).unwrap();
        assert_eq!(a.encoder, b.encoder);
    }

    #[test]
    fn rejects_frames_smaller_than_the_crop() {
        let data = InMemoryFrames::new(vec![textured(0, 12)]).unwrap();
        let init = Checkpoint::random(ModelConfig::new(EncoderKind::ToyCnn), 1).unwrap();
        assert!(finetune(&data, init, &small_cfg(1), |_, _| Ok(())).is_err());
    }

    #[test]
    fn sgd_matches_hand_computation() {
        let cfg = TrainConfig {
            momentum: 0.5,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut opt = Sgd::new(1, &cfg);
        let mut w = [1.0f32];
        opt.step(&mut w, &[2.0], 0.1);
        // v = 2 + 0.1 = 2.1, w = 1 - 0.21
        assert!((w[0] - 0.79).abs() < 1e-6);
        opt.step(&mut w, &[0.0], 0.1);
        // v = 1.05 + 0.079, w = 0.79 - 0.1129
        assert!((w[0] - 0.6771).abs() < 1e-6);
    }

    #[test]
    fn encode_view_averages_patches() {
        let net = Network::encoder(EncoderKind::ToyCnn);
        let params = net.init_params(3);
        let view = Tensor::from_vec(3, 16, 16, textured(5, 16).to_chw().unwrap());
        let h = encode_view(&net, &params, &view, 8).unwrap();
        let patches = patchify(&view, 8).unwrap();
        let mut want = vec![0.0f32; 128];
        for p in patches {
            for (w, v) in want.iter_mut().zip(net.infer(&params, p)) {
                *w += v / 4.0;
            }
        }
        for (a, b) in h.iter().zip(want) {
            assert!((a - b).abs() < 1e-5);
        }
    }
}
