//! Whole-scene evaluation against ground truth and the bicubic baseline.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::Result;
use crate::model::Model;
use crate::nn::resample::{bicubic_resize, Resize};
use crate::synth::Scene;
use crate::tensor::{Scalar, Tensor};
use crate::train::data::Sample;
use crate::train::diagnostics::{feature_distance, FeatureDistance};
use crate::train::loss::rmse_cm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetric {
    pub index: u64,
    pub rmse_cm: f64,
    pub bicubic_rmse_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTable {
    pub rows: Vec<SceneMetric>,
    pub mean_rmse_cm: f64,
    pub mean_bicubic_rmse_cm: f64,
    /// Stage-1 feature distances averaged over scenes, when the model has APP.
    pub feature_distance: Option<FeatureDistance>,
}

impl EvalTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,rmse_cm,bicubic_rmse_cm\n");
        for r in &self.rows {
            s += &format!("{},{},{}\n", r.index, r.rmse_cm, r.bicubic_rmse_cm);
        }
        s += &format!("mean,{},{}\n", self.mean_rmse_cm, self.mean_bicubic_rmse_cm);
        s
    }

    /// Mean RMSE relative to the bicubic baseline.
    pub fn ratio(&self) -> f64 {
        self.mean_rmse_cm / self.mean_bicubic_rmse_cm
    }
}

/// Prediction, bicubic baseline and stage-1 feature distance for one scene.
pub fn predict_scene<T: Scalar>(model: &Model<T>, scene: &Scene) -> Result<(Tensor<T>, Tensor<T>, Option<FeatureDistance>)> {
    let sample = Sample::<T>::from_scene(scene);
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, false);
    let out = model.forward(&mut tape, &p, &sample.inputs)?;
    let dist = feature_distance(&tape, &out)?;
    let bicubic = bicubic_resize(&sample.inputs.depth_lr, Resize::Up(model.config.scale))?;
    Ok((tape.value(out.depth_hr).clone(), bicubic, dist))
}

/// Per-scene and mean RMSE in centimetres.
pub fn evaluate<T: Scalar>(model: &Model<T>, scenes: &[Scene]) -> Result<EvalTable> {
    let mut rows = Vec::with_capacity(scenes.len());
    let (mut enh, mut pre, mut nd) = (0.0, 0.0, 0usize);
    for scene in scenes {
        let (pred, bic, dist) = predict_scene(model, scene)?;
        let gt: Tensor<T> = scene.depth_gt.cast();
        rows.push(SceneMetric {
            index: scene.index,
            rmse_cm: rmse_cm(&pred, &gt, &scene.valid)?,
            bicubic_rmse_cm: rmse_cm(&bic, &gt, &scene.valid)?,
        });
        if let Some(d) = dist {
            enh += d.enhanced;
            pre += d.pre_app;
            nd += 1;
        }
    }
    let n = rows.len().max(1) as f64;
    Ok(EvalTable {
        mean_rmse_cm: rows.iter().map(|r| r.rmse_cm).sum::<f64>() / n,
        mean_bicubic_rmse_cm: rows.iter().map(|r| r.bicubic_rmse_cm).sum::<f64>() / n,
        rows,
        feature_distance: (nd > 0).then(|| FeatureDistance {
            enhanced: enh / nd as f64,
            pre_app: pre / nd as f64,
        }),
    })
}
