//! Feature-distribution and kernel-field diagnostics.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::embedding::kernel_gradients;
use crate::error::{Error, Result};
use crate::model::{ForwardOutput, Model};
use crate::propagation::Modality;
use crate::synth::Scene;
use crate::tensor::Scalar;
use crate::train::data::Sample;

/// 1-D Wasserstein distance between the empirical distributions of `a` and `b`.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidShape {
            op: "wasserstein_1d",
            shape: vec![a.len(), b.len()],
            reason: "empty sample".into(),
        });
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    // integrate |F_a - F_b| over the merged breakpoints
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Distance between enhanced prior features and depth features at stage 1,
/// and the same distance for the features before propagation, averaged over
/// the active modalities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistance {
    pub enhanced: f64,
    pub pre_app: f64,
}

pub fn feature_distance<T: Scalar>(tape: &Tape<T>, out: &ForwardOutput) -> Result<Option<FeatureDistance>> {
    let Some(stage) = out.stages.first() else {
        return Ok(None);
    };
    let depth = tape.value(stage.depth_in).to_f64_vec();
    let (mut enh, mut pre, mut n) = (0.0, 0.0, 0usize);
    for (m, &e) in stage.enhanced.iter() {
        let Some(&p) = stage.priors_lr.get(m) else { continue };
        enh += wasserstein_1d(&tape.value(e).to_f64_vec(), &depth)?;
        pre += wasserstein_1d(&tape.value(p).to_f64_vec(), &depth)?;
        n += 1;
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(FeatureDistance {
        enhanced: enh / n as f64,
        pre_app: pre / n as f64,
    }))
}

/// LR pixels whose `3s×3s` HR footprint carries a single semantic label.
pub fn lr_uniform_mask(labels: &[u8], h: usize, w: usize, s: usize) -> Vec<bool> {
    let (lh, lw) = (h / s, w / s);
    let mut out = vec![false; lh * lw];
    for y in 1..lh.saturating_sub(1) {
        for x in 1..lw.saturating_sub(1) {
            let l = labels[y * s * w + x * s];
            out[y * lw + x] = ((y - 1) * s..(y + 2) * s).all(|yy| ((x - 1) * s..(x + 2) * s).all(|xx| labels[yy * w + xx] == l));
        }
    }
    out
}

/// Mean kernel spatial-gradient magnitude per modality for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneKernelReport {
    pub index: u64,
    /// `(modality, mean magnitude, pixels)`; averaged over stages.
    pub means: Vec<(Modality, f64, usize)>,
}

impl SceneKernelReport {
    pub fn mean(&self, m: Modality) -> Option<f64> {
        self.means.iter().find(|x| x.0 == m).map(|x| x.1)
    }

    /// Normal and semantic fields vary no more than the RGB field.
    pub fn priors_smoother_than_rgb(&self) -> Option<bool> {
        let r = self.mean(Modality::Rgb)?;
        let others: Vec<f64> = [Modality::Normal, Modality::Semantic].iter().filter_map(|&m| self.mean(m)).collect();
        if others.is_empty() {
            return None;
        }
        Some(others.iter().all(|&v| v <= r))
    }
}

/// Prior-to-depth kernel fields of every stage and their gradient magnitudes
/// on semantic-uniform regions, along with the raw gradient samples.
pub fn scene_kernels<T: Scalar>(
    model: &Model<T>,
    scene: &Scene,
) -> Result<(SceneKernelReport, Vec<(Modality, usize, crate::tensor::Tensor<T>)>, Vec<(Modality, Vec<f64>)>)> {
    let s = model.config.scale;
    let (_, _, h, w) = scene.depth_gt.dims4()?;
    let mask = lr_uniform_mask(&scene.labels, h, w, s);
    let sample = Sample::<T>::from_scene(scene);
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, false);
    let out = model.forward(&mut tape, &p, &sample.inputs)?;
    let mut fields = Vec::new();
    let mut samples: Vec<(Modality, Vec<f64>)> = Vec::new();
    for (si, st) in out.stages.iter().enumerate() {
        for (m, &k) in st.k_pd.iter() {
            let k = tape.value(k).clone();
            let g = kernel_gradients(&k, Some(&mask))?;
            match samples.iter_mut().find(|x| x.0 == m) {
                Some(e) => e.1.extend(g),
                None => samples.push((m, g)),
            }
            fields.push((m, si + 1, k));
        }
    }
    let means = samples
        .iter()
        .map(|(m, g)| {
            let mean = if g.is_empty() { 0.0 } else { g.iter().sum::<f64>() / g.len() as f64 };
            (*m, mean, g.len())
        })
        .collect();
    Ok((SceneKernelReport { index: scene.index, means }, fields, samples))
}
