//! 64-bit finite-difference verification of every differentiable operation
//! and of a small full model.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckOptions, Tape, Var};
use crate::error::Result;
use crate::model::{Model, ModelConfig, Variant};
use crate::nn::conv::ConvSpec;
use crate::nn::params::Bound;
use crate::nn::resample::{Filter, Resampler, Resize};
use crate::propagation::SIMILARITY_EPS;
use crate::tensor::Tensor;

/// Pass threshold on the maximum relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub checked: usize,
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    // magnitudes bounded away from zero keep relu and |.| kinks out of the stencil
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(y ⊙ r)` for a fixed random `r`, so every output coordinate matters.
fn project(t: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_t(&mut rng, t.shape(y));
    let c = t.constant(r);
    let p = t.mul(y, c)?;
    Ok(t.sum(p))
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

fn op_cases() -> Result<Vec<(&'static str, Vec<Vec<usize>>, OpFn)>> {
    let up = Arc::new(Resampler::<f64>::new(4, 5, Resize::Up(2), Filter::Bicubic)?);
    let down = Arc::new(Resampler::<f64>::new(8, 8, Resize::Down(2), Filter::Bicubic)?);
    let area = Arc::new(Resampler::<f64>::new(8, 8, Resize::Down(2), Filter::Area)?);
    let mask: Arc<Vec<bool>> = Arc::new((0..2 * 16).map(|i| i % 3 != 0).collect());
    let x4 = vec![2, 3, 4, 5];
    let cases: Vec<(&'static str, Vec<Vec<usize>>, OpFn)> = vec![
        ("add", vec![x4.clone(), x4.clone()], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 1)
        })),
        ("add_channel_broadcast", vec![x4.clone(), vec![2, 1, 4, 5]], Box::new(|t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y, 2)
        })),
        ("sub_scalar_broadcast", vec![x4.clone(), vec![1]], Box::new(|t, v| {
            let y = t.sub(v[0], v[1])?;
            project(t, y, 3)
        })),
        ("mul", vec![x4.clone(), x4.clone()], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 4)
        })),
        ("mul_channel_broadcast", vec![x4.clone(), vec![2, 1, 4, 5]], Box::new(|t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y, 5)
        })),
        ("scale", vec![x4.clone()], Box::new(|t, v| {
            let y = t.scale(v[0], -2.5);
            project(t, y, 6)
        })),
        ("relu", vec![x4.clone()], Box::new(|t, v| {
            let y = t.relu(v[0]);
            project(t, y, 7)
        })),
        ("leaky_relu", vec![x4.clone()], Box::new(|t, v| {
            let y = t.leaky_relu(v[0], 0.1);
            project(t, y, 8)
        })),
        ("tanh", vec![x4.clone()], Box::new(|t, v| {
            let y = t.tanh(v[0]);
            project(t, y, 9)
        })),
        ("conv2d_3x3", vec![vec![2, 3, 5, 6], vec![4, 3, 3, 3], vec![4]], Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::same(3))?;
            project(t, y, 10)
        })),
        ("conv2d_strided", vec![vec![1, 2, 7, 6], vec![3, 2, 3, 3]], Box::new(|t, v| {
            let spec = ConvSpec {
                stride: (2, 2),
                padding: (1, 0),
            };
            let y = t.conv2d(v[0], v[1], None, spec)?;
            project(t, y, 11)
        })),
        ("conv2d_1x1", vec![vec![2, 4, 3, 3], vec![2, 4, 1, 1], vec![2]], Box::new(|t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::same(1))?;
            project(t, y, 12)
        })),
        ("concat", vec![vec![2, 1, 3, 4], vec![2, 3, 3, 4]], Box::new(|t, v| {
            let y = t.concat(&[v[0], v[1]])?;
            project(t, y, 13)
        })),
        ("unfold3x3", vec![vec![1, 2, 4, 5]], Box::new(|t, v| {
            let y = t.unfold3x3(v[0])?;
            project(t, y, 14)
        })),
        ("fold", vec![vec![1, 18, 20]], Box::new(|t, v| {
            let y = t.fold(v[0], [1, 2, 4, 5], false)?;
            project(t, y, 15)
        })),
        ("fold_normalized", vec![vec![1, 18, 20]], Box::new(|t, v| {
            let y = t.fold(v[0], [1, 2, 4, 5], true)?;
            project(t, y, 16)
        })),
        ("patch_similarity", vec![vec![2, 3, 5, 4], vec![2, 3, 5, 4]], Box::new(|t, v| {
            let y = t.patch_similarity(v[0], v[1], SIMILARITY_EPS)?;
            project(t, y, 17)
        })),
        ("svf", vec![vec![2, 3, 5, 4], vec![2, 9, 5, 4]], Box::new(|t, v| {
            let y = t.svf(v[0], v[1])?;
            project(t, y, 18)
        })),
        ("resample_bicubic_up", vec![vec![2, 2, 4, 5]], Box::new(move |t, v| {
            let y = t.resample(v[0], up.clone())?;
            project(t, y, 19)
        })),
        ("resample_bicubic_down", vec![vec![1, 2, 8, 8]], Box::new(move |t, v| {
            let y = t.resample(v[0], down.clone())?;
            project(t, y, 20)
        })),
        ("resample_area_down", vec![vec![1, 2, 8, 8]], Box::new(move |t, v| {
            let y = t.resample(v[0], area.clone())?;
            project(t, y, 21)
        })),
        ("depth_to_space", vec![vec![2, 8, 3, 2]], Box::new(|t, v| {
            let y = t.depth_to_space(v[0], 2)?;
            project(t, y, 22)
        })),
        ("sum", vec![x4.clone()], Box::new(|t, v| {
            let s = t.sum(v[0]);
            let y = t.mul(s, s)?;
            Ok(y)
        })),
        ("mean", vec![x4.clone()], Box::new(|t, v| {
            let s = t.mean(v[0]);
            let y = t.mul(s, s)?;
            Ok(y)
        })),
        ("masked_l1", vec![vec![2, 1, 4, 4], vec![2, 1, 4, 4]], Box::new(move |t, v| t.masked_l1(v[0], v[1], mask.clone()))),
    ];
    Ok(cases)
}

/// Full-model configuration of the suite: the light variant narrowed to four
/// channels, one stage, scale 2.
pub fn suite_model_config() -> ModelConfig {
    ModelConfig {
        channels: 4,
        stages: 1,
        rg_blocks: 1,
        depth_norm: 1.0,
        ..ModelConfig::preset(Variant::SpfnetT, 2)
    }
}

fn full_model_check() -> Result<CheckResult> {
    let cfg = suite_model_config();
    let mut m = Model::<f64>::build(&cfg, 11)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // leave the zero-initialised identity point so every path carries gradient
    m.params.randomize(&mut rng, 0.15);
    let (h, w, s) = (8, 8, 2);
    let mut t = |c: usize, hh: usize, ww: usize, lo: f64, hi: f64| {
        Tensor::from_fn(vec![1, c, hh, ww], |_| rng.gen_range(lo..hi))
    };
    let depth = t(1, h, w, 0.2, 2.0);
    let rgb = t(3, h * s, w * s, 0.0, 1.0);
    let normal = t(3, h * s, w * s, -1.0, 1.0);
    let semantic = t(1, h * s, w * s, 0.0, 1.0);
    let target = Tensor::from_fn(vec![1, 1, h * s, w * s], |i| (i as f64 * 0.1).sin());
    let np = m.params.len();
    let mut all = m.params.values().to_vec();
    all.extend([depth, rgb, normal, semantic]);
    let r = grad_check(
        |t, v| {
            let p = Bound::from_vars(v[..np].to_vec());
            let out = m.forward_vars(t, &p, v[np], v[np + 1], v[np + 2], v[np + 3])?;
            let tg = t.constant(target.clone());
            let d = t.sub(out.depth_hr, tg)?;
            let sq = t.mul(d, d)?;
            Ok(t.mean(sq))
        },
        &all,
        GradCheckOptions {
            max_coords: Some(6),
            seed: 1,
            ..Default::default()
        },
    )?;
    Ok(CheckResult {
        name: "spfnet_t_full_model",
        max_rel_error: r.max_rel_error,
        checked: r.checked,
    })
}

/// Runs every check; `on_result` sees each as it finishes.
pub fn gradcheck_suite(mut on_result: impl FnMut(&CheckResult)) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for (i, (name, shapes, f)) in op_cases()?.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| rand_t(&mut rng, s)).collect();
        let r = grad_check(|t, v| f(t, v), &inputs, GradCheckOptions::default())?;
        let res = CheckResult {
            name,
            max_rel_error: r.max_rel_error,
            checked: r.checked,
        };
        on_result(&res);
        out.push(res);
    }
    let res = full_model_check()?;
    on_result(&res);
    out.push(res);
    Ok(out)
}

pub fn max_error(results: &[CheckResult]) -> f64 {
    results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
}
