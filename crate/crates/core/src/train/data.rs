//! Scene caches, aligned crops and batches.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::ModelInputs;
use crate::synth::{scene_for, Scene, SceneId, SynthConfig};
use crate::tensor::{Scalar, Tensor};

/// Model inputs together with the target and the valid-pixel mask.
#[derive(Debug, Clone)]
pub struct Sample<T: Scalar> {
    pub inputs: ModelInputs<T>,
    pub depth_gt: Tensor<T>,
    pub mask: Arc<Vec<bool>>,
}

impl<T: Scalar> Sample<T> {
    /// Whole-scene sample.
    pub fn from_scene(scene: &Scene) -> Self {
        Self {
            inputs: ModelInputs {
                depth_lr: scene.depth_lr.cast(),
                rgb: scene.rgb.cast(),
                normal: scene.normal.cast(),
                semantic: scene.semantic.cast(),
            },
            depth_gt: scene.depth_gt.cast(),
            mask: Arc::new(scene.valid.clone()),
        }
    }

    /// HR window of `size` at `(top, left)`; both must be multiples of `s`.
    pub fn crop(scene: &Scene, s: usize, top: usize, left: usize, size: usize) -> Result<Self> {
        if s == 0 || top % s != 0 || left % s != 0 || size % s != 0 {
            return Err(Error::InvalidConfig {
                field: "crop",
                reason: format!("window ({top},{left}) size {size} not aligned to scale {s}"),
            });
        }
        let (_, _, _, w) = scene.depth_gt.dims4()?;
        let mut mask = Vec::with_capacity(size * size);
        for y in top..top + size {
            mask.extend_from_slice(&scene.valid[y * w + left..y * w + left + size]);
        }
        let hr = |t: &Tensor<f32>| t.crop(top, left, size, size).map(|c| c.cast());
        Ok(Self {
            inputs: ModelInputs {
                depth_lr: scene.depth_lr.crop(top / s, left / s, size / s, size / s)?.cast(),
                rgb: hr(&scene.rgb)?,
                normal: hr(&scene.normal)?,
                semantic: hr(&scene.semantic)?,
            },
            depth_gt: hr(&scene.depth_gt)?,
            mask: Arc::new(mask),
        })
    }

    /// Concatenates samples of equal size along the batch axis.
    pub fn batch(items: &[Sample<T>]) -> Result<Self> {
        let cat = |f: &dyn Fn(&Sample<T>) -> &Tensor<T>| {
            Tensor::stack(&items.iter().map(f).collect::<Vec<_>>(), true)
        };
        Ok(Self {
            inputs: ModelInputs {
                depth_lr: cat(&|x| &x.inputs.depth_lr)?,
                rgb: cat(&|x| &x.inputs.rgb)?,
                normal: cat(&|x| &x.inputs.normal)?,
                semantic: cat(&|x| &x.inputs.semantic)?,
            },
            depth_gt: cat(&|x| &x.depth_gt)?,
            mask: Arc::new(items.iter().flat_map(|x| x.mask.iter().copied()).collect()),
        })
    }
}

/// Generates every scene of `ids` once.
pub fn load_scenes(cfg: &SynthConfig, ids: &[SceneId]) -> Result<Vec<Scene>> {
    ids.iter().map(|&id| scene_for(cfg, id)).collect()
}

/// Per-epoch order and crop positions, derived from `(seed, epoch)` only.
pub fn epoch_batches<T: Scalar>(
    scenes: &[Scene],
    s: usize,
    crop: usize,
    batch: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Sample<T>>> {
    if batch == 0 {
        return Err(Error::InvalidConfig {
            field: "batch",
            reason: "must be positive".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut rng);
    let mut out = Vec::new();
    for chunk in order.chunks(batch) {
        let mut items = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (_, _, h, w) = scenes[i].depth_gt.dims4()?;
            if crop > h || crop > w {
                return Err(Error::InvalidConfig {
                    field: "crop",
                    reason: format!("{crop} exceeds scene size {h}x{w}"),
                });
            }
            let top = rng.gen_range(0..=(h - crop) / s) * s;
            let left = rng.gen_range(0..=(w - crop) / s) * s;
            items.push(Sample::crop(&scenes[i], s, top, left, crop)?);
        }
        out.push(Sample::batch(&items)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_split;

    fn scenes(n: usize) -> (SynthConfig, Vec<Scene>) {
        let cfg = SynthConfig {
            seed: 3,
            height: 32,
            width: 32,
            ..Default::default()
        };
        let split = make_split(&cfg, n, 1).unwrap();
        let sc = load_scenes(&cfg, &split.train).unwrap();
        (cfg, sc)
    }

    #[test]
    fn crop_keeps_lr_and_hr_aligned() {
        let (_, sc) = scenes(1);
        let c = Sample::<f32>::crop(&sc[0], 4, 8, 12, 16).unwrap();
        assert_eq!(c.inputs.depth_lr.shape(), &[1, 1, 4, 4]);
        assert_eq!(c.inputs.rgb.shape(), &[1, 3, 16, 16]);
        assert_eq!(c.depth_gt.data()[0], sc[0].depth_gt.data()[8 * 32 + 12]);
        assert_eq!(c.inputs.depth_lr.data()[0], sc[0].depth_lr.data()[2 * 8 + 3]);
        assert!(Sample::<f32>::crop(&sc[0], 4, 2, 0, 16).is_err());
    }

    #[test]
    fn epochs_are_reproducible_and_differ() {
        let (_, sc) = scenes(5);
        let a = epoch_batches::<f32>(&sc, 4, 16, 2, 9, 0).unwrap();
        let b = epoch_batches::<f32>(&sc, 4, 16, 2, 9, 0).unwrap();
        let c = epoch_batches::<f32>(&sc, 4, 16, 2, 9, 1).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a[2].depth_gt.shape(), &[1, 1, 16, 16]);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.depth_gt, y.depth_gt);
            assert_eq!(x.inputs.rgb, y.inputs.rgb);
        }
        assert!(a.iter().zip(&c).any(|(x, y)| x.depth_gt != y.depth_gt));
    }
}
