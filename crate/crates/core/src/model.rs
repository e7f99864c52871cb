//! The two-branch depth super-resolution network.
//!
//! Prior features (RGB, normal, semantic) stay at the output resolution; the
//! depth branch runs at the input resolution through a number of
//! propagation + embedding stages. After the last stage the depth features
//! are upsampled, merged with the prior features and reduced to a residual
//! that is added to the bicubic upsampling of the input depth.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::embedding::{ope_stage, MgfMode, OpeParams};
use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, ResidualGroup};
use crate::nn::params::{Bound, Init, ParamStore};
use crate::nn::resample::{Filter, Resampler, Resize};
use crate::nn::upsample::SubPixelUpsampler;
use crate::propagation::{app_stage, AppParams, Modality, PerModality, SimilarityWeights};
use crate::tensor::{Scalar, Tensor};

/// Named size presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Variant {
    #[default]
    #[serde(rename = "spfnet")]
    Spfnet,
    /// Same architecture with fewer channels.
    #[serde(rename = "spfnet-t")]
    SpfnetT,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spfnet" => Some(Variant::Spfnet),
            "spfnet-t" | "spfnet_t" | "t" => Some(Variant::SpfnetT),
            _ => None,
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Variant::Spfnet => 16,
            Variant::SpfnetT => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Spfnet => "spfnet",
            Variant::SpfnetT => "spfnet-t",
        }
    }
}

fn default_order() -> Vec<Modality> {
    Modality::ALL.to_vec()
}

/// Architecture and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: usize,
    pub stages: usize,
    pub scale: usize,
    /// Blocks per residual group.
    pub rg_blocks: usize,
    /// Embedding order of the modalities.
    #[serde(default = "default_order")]
    pub order: Vec<Modality>,
    pub use_normal: bool,
    pub use_semantic: bool,
    pub use_app: bool,
    pub use_ope: bool,
    pub mgf_mode: MgfMode,
    /// Similarity maps modulate kernel generation.
    pub similarity_guidance: bool,
    /// Filter bringing prior features to the depth resolution.
    pub prior_downsample: Filter,
    /// Depth values are divided by this (cm) on the way in.
    pub depth_norm: f64,
    /// Reconstruct from the depth features of every stage, not only the last.
    pub recon_all_stages: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(Variant::Spfnet, 4)
    }
}

impl ModelConfig {
    pub fn preset(variant: Variant, scale: usize) -> Self {
        Self {
            variant,
            channels: variant.channels(),
            stages: 3,
            scale,
            rg_blocks: 2,
            order: default_order(),
            use_normal: true,
            use_semantic: true,
            use_app: true,
            use_ope: true,
            mgf_mode: MgfMode::P2dThenD2p,
            similarity_guidance: true,
            prior_downsample: Filter::Bicubic,
            depth_norm: 100.0,
            recon_all_stages: false,
        }
    }

    /// Enabled modalities in embedding order.
    pub fn active(&self) -> Vec<Modality> {
        self.order
            .iter()
            .copied()
            .filter(|m| match m {
                Modality::Normal => self.use_normal,
                Modality::Semantic => self.use_semantic,
                Modality::Rgb => true,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidConfig { field, reason });
        if self.channels < 4 {
            return bad("channels", format!("{} < 4", self.channels));
        }
        if !(1..=4).contains(&self.stages) {
            return bad("stages", format!("{} not in 1..=4", self.stages));
        }
        Resize::Up(self.scale).validate()?;
        for (i, m) in self.order.iter().enumerate() {
            if self.order[..i].contains(m) {
                return bad("order", format!("{} listed twice", m.name()));
            }
        }
        if !self.order.contains(&Modality::Rgb) {
            return bad("order", "rgb must be part of the order".into());
        }
        if !(self.depth_norm > 0.0 && self.depth_norm.is_finite()) {
            return bad("depth_norm", format!("{} is not a positive scale", self.depth_norm));
        }
        Ok(())
    }

    /// Order string such as `NSR`.
    pub fn order_string(&self) -> String {
        self.order.iter().map(|m| m.letter()).collect()
    }
}

/// Parses an order string such as `NSR` or `S+R+N`.
pub fn parse_order(s: &str) -> Result<Vec<Modality>> {
    s.chars()
        .filter(|c| !matches!(c, '+' | ',' | ' ' | '-'))
        .map(|c| {
            Modality::from_letter(c).ok_or_else(|| Error::InvalidConfig {
                field: "order",
                reason: format!("unknown modality letter {c:?} in {s:?}"),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Head {
    conv: Conv2d,
    rg: ResidualGroup,
}

impl Head {
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, p, x)?;
        self.rg.forward(tape, p, y)
    }

    fn param_count(&self) -> usize {
        self.conv.param_count() + self.rg.param_count()
    }
}

/// Concatenation fusion used when the embedding stage is switched off.
#[derive(Debug, Clone)]
struct PlainFusion {
    reduce: Conv2d,
    rg: ResidualGroup,
}

#[derive(Debug, Clone)]
struct PriorUpdate {
    reduce: Conv2d,
    rg: ResidualGroup,
}

#[derive(Debug, Clone)]
struct Stage {
    app: Option<AppParams>,
    ope: Option<OpeParams>,
    plain: Option<PlainFusion>,
    priors: PerModality<PriorUpdate>,
}

#[derive(Debug, Clone)]
struct Layout {
    heads: PerModality<Head>,
    head_depth: Head,
    stages: Vec<Stage>,
    merge_stages: Option<Conv2d>,
    upsampler: SubPixelUpsampler,
    recon_reduce: Conv2d,
    recon_rg: ResidualGroup,
    recon_out: Conv2d,
}

/// Model inputs at matching resolutions; `(B,C,H,W)` tensors.
#[derive(Debug, Clone)]
pub struct ModelInputs<T: Scalar> {
    /// `(B,1,h,w)` centimetres.
    pub depth_lr: Tensor<T>,
    /// `(B,3,s·h,s·w)`.
    pub rgb: Tensor<T>,
    /// `(B,3,s·h,s·w)`.
    pub normal: Tensor<T>,
    /// `(B,1,s·h,s·w)`.
    pub semantic: Tensor<T>,
}

/// Tape handles of a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(B,1,s·h,s·w)` centimetres.
    pub depth_hr: Var,
    /// Bicubic upsampling of the input depth.
    pub bicubic: Var,
    /// The learned residual in centimetres.
    pub residual: Var,
    pub stages: Vec<StageDiagnostics>,
}

/// Per-stage intermediate values.
#[derive(Debug, Clone)]
pub struct StageDiagnostics {
    pub weights: Option<SimilarityWeights>,
    /// Prior features at depth resolution before propagation.
    pub priors_lr: PerModality<Var>,
    /// Prior features after propagation.
    pub enhanced: PerModality<Var>,
    pub k_pd: PerModality<Var>,
    pub k_dp: PerModality<Var>,
    pub depth_in: Var,
    pub depth_out: Var,
}

/// Network parameters together with the layer layout built from a config.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

fn in_channels(m: Modality) -> usize {
    match m {
        Modality::Semantic => 1,
        _ => 3,
    }
}

impl<T: Scalar> Model<T> {
    /// Deterministic construction from `(config, seed)`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<T>::new();
        let rng = &mut rng;
        let s = &mut store;
        let c = config.channels;
        let b = config.rg_blocks;
        let active = config.active();
        let n = active.len();

        let mut heads = PerModality::default();
        for &m in &active {
            let name = format!("head_{}", m.name());
            heads.set(
                m,
                Head {
                    conv: Conv2d::build(s, rng, &format!("{name}.conv"), in_channels(m), c, 3, Init::He)?,
                    rg: ResidualGroup::build(s, rng, &format!("{name}.rg"), c, b)?,
                },
            );
        }
        let head_depth = Head {
            conv: Conv2d::build(s, rng, "head_depth.conv", 1, c, 3, Init::He)?,
            rg: ResidualGroup::build(s, rng, "head_depth.rg", c, b)?,
        };
        let mut stages = Vec::with_capacity(config.stages);
        for i in 0..config.stages {
            let name = format!("stage{}", i + 1);
            let app = if config.use_app {
                Some(AppParams::build(s, rng, &format!("{name}.app"), &active, c, b)?)
            } else {
                None
            };
            let (ope, plain) = if config.use_ope {
                let o = OpeParams::build(s, rng, &format!("{name}.ope"), &active, c, b, config.mgf_mode)?;
                (Some(o), None)
            } else {
                let p = PlainFusion {
                    reduce: Conv2d::build(s, rng, &format!("{name}.fuse.reduce"), (n + 1) * c, c, 1, Init::Zeros)?,
                    rg: ResidualGroup::build(s, rng, &format!("{name}.fuse.rg"), c, b)?,
                };
                (None, Some(p))
            };
            let mut priors = PerModality::default();
            for &m in &active {
                let pn = format!("{name}.prior_{}", m.name());
                priors.set(
                    m,
                    PriorUpdate {
                        reduce: Conv2d::build(s, rng, &format!("{pn}.reduce"), 2 * c, c, 1, Init::He)?,
                        rg: ResidualGroup::build(s, rng, &format!("{pn}.rg"), c, b)?,
                    },
                );
            }
            stages.push(Stage { app, ope, plain, priors });
        }
        let merge_stages = if config.recon_all_stages {
            Some(Conv2d::build(s, rng, "recon.merge", config.stages * c, c, 1, Init::He)?)
        } else {
            None
        };
        let upsampler = SubPixelUpsampler::build(s, rng, "recon.up", c, config.scale)?;
        let recon_reduce = Conv2d::build(s, rng, "recon.reduce", (n + 1) * c, c, 1, Init::He)?;
        let recon_rg = ResidualGroup::build(s, rng, "recon.rg", c, b)?;
        let recon_out = Conv2d::build(s, rng, "recon.out", c, 1, 3, Init::Zeros)?;
        Ok(Self {
            config: config.clone(),
            params: store,
            layout: Layout {
                heads,
                head_depth,
                stages,
                merge_stages,
                upsampler,
                recon_reduce,
                recon_rg,
                recon_out,
            },
        })
    }

    /// Layout of `config` holding `params`. Names and shapes must match the
    /// layout exactly; nothing is copied otherwise.
    pub fn with_params(config: &ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut model = Self::build(config, 0)?;
        let want = &model.params;
        if want.len() != params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "config expects {} parameter tensors, found {}",
                want.len(),
                params.len()
            )));
        }
        for (i, name) in want.names().iter().enumerate() {
            let id = params.id(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if id.0 != i || params.values()[i].shape() != want.values()[i].shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "parameter `{name}` has shape {:?} at slot {}, config expects {:?} at slot {i}",
                    params.values()[id.0].shape(),
                    id.0,
                    want.values()[i].shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    /// Same layout with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Total number of scalar parameters.
    pub fn count_params(&self) -> usize {
        self.params.count()
    }

    /// Parameter count derived from the layer layout (must equal
    /// [`count_params`](Self::count_params)).
    pub fn layout_param_count(&self) -> usize {
        let l = &self.layout;
        let mut total = l.head_depth.param_count() + l.heads.iter().map(|(_, h)| h.param_count()).sum::<usize>();
        for st in &l.stages {
            total += st.app.as_ref().map_or(0, AppParams::param_count);
            total += st.ope.as_ref().map_or(0, OpeParams::param_count);
            total += st
                .plain
                .as_ref()
                .map_or(0, |p| p.reduce.param_count() + p.rg.param_count());
            total += st
                .priors
                .iter()
                .map(|(_, p)| p.reduce.param_count() + p.rg.param_count())
                .sum::<usize>();
        }
        total += l.merge_stages.as_ref().map_or(0, Conv2d::param_count);
        total
            + l.upsampler.param_count()
            + l.recon_reduce.param_count()
            + l.recon_rg.param_count()
            + l.recon_out.param_count()
    }

    fn check_inputs(&self, tape: &Tape<T>, d: Var, rgb: Var, normal: Var, semantic: Var) -> Result<(usize, usize, usize)> {
        let ds = tape.shape(d);
        let (b, h, w) = match ds {
            &[b, 1, h, w] => (b, h, w),
            _ => {
                return Err(Error::InvalidShape {
                    op: "model_forward",
                    shape: ds.to_vec(),
                    reason: "depth must be (B,1,h,w)".into(),
                })
            }
        };
        let s = self.config.scale;
        let guides = [
            (rgb, 3, "model_forward(rgb)"),
            (normal, 3, "model_forward(normal)"),
            (semantic, 1, "model_forward(semantic)"),
        ];
        for (v, c, op) in guides {
            let want = [b, c, h * s, w * s];
            if tape.shape(v) != want {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: tape.shape(v).to_vec(),
                    rhs: want.to_vec(),
                });
            }
        }
        Ok((b, h, w))
    }

    /// Records the network on `tape`. Inputs are tape variables so gradient
    /// checks can differentiate through them.
    pub fn forward_vars(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        depth_lr: Var,
        rgb: Var,
        normal: Var,
        semantic: Var,
    ) -> Result<ForwardOutput> {
        let (_, h, w) = self.check_inputs(tape, depth_lr, rgb, normal, semantic)?;
        let cfg = &self.config;
        let l = &self.layout;
        let s = cfg.scale;
        let up = Arc::new(Resampler::<T>::new(h, w, Resize::Up(s), Filter::Bicubic)?);
        let down = Arc::new(Resampler::<T>::new(h * s, w * s, Resize::Down(s), cfg.prior_downsample)?);

        let mut priors = PerModality::default();
        for (m, head) in l.heads.iter() {
            let x = match m {
                Modality::Normal => normal,
                Modality::Semantic => semantic,
                Modality::Rgb => rgb,
            };
            priors.set(m, head.forward(tape, p, x)?);
        }
        let d_in = tape.scale(depth_lr, 1.0 / cfg.depth_norm);
        let mut depth = l.head_depth.forward(tape, p, d_in)?;
        let mut filtered: Option<PerModality<Var>> = None;
        let mut diags = Vec::with_capacity(l.stages.len());
        let mut history = Vec::with_capacity(l.stages.len());

        for st in &l.stages {
            let depth_in = depth;
            let (weights, enhanced, priors_lr) = match &st.app {
                Some(app) => {
                    let (wts, e) = app_stage(tape, p, app, &priors, depth, filtered.as_ref(), Some(&down))?;
                    (Some(wts), e.features, e.downsampled)
                }
                None => {
                    let mut lr = PerModality::default();
                    for (m, &f) in priors.iter() {
                        lr.set(m, tape.resample(f, down.clone())?);
                    }
                    let e = filtered.clone().unwrap_or_else(|| lr.clone());
                    (None, e, lr)
                }
            };
            let (next, filt, k_pd, k_dp) = match (&st.ope, &st.plain) {
                (Some(ope), _) => {
                    let o = ope_stage(tape, p, ope, depth, &enhanced, weights.as_ref(), cfg.similarity_guidance)?;
                    (o.next(), o.filtered_priors, o.k_pd, o.k_dp)
                }
                (None, Some(plain)) => {
                    let mut parts: Vec<Var> = enhanced.iter().map(|(_, &v)| v).collect();
                    parts.push(depth);
                    let cat = tape.concat(&parts)?;
                    let r = plain.reduce.forward(tape, p, cat)?;
                    let r = plain.rg.forward(tape, p, r)?;
                    let next = tape.add(r, depth)?;
                    (next, enhanced.clone(), PerModality::default(), PerModality::default())
                }
                (None, None) => unreachable!("stage built with one fusion path"),
            };
            let mut new_priors = PerModality::default();
            for (m, upd) in st.priors.iter() {
                let prev = *priors.get(m).expect("active modality");
                let back = tape.resample(*filt.get(m).expect("filtered prior"), up.clone())?;
                let cat = tape.concat(&[prev, back])?;
                let r = upd.reduce.forward(tape, p, cat)?;
                new_priors.set(m, upd.rg.forward(tape, p, r)?);
            }
            priors = new_priors;
            filtered = Some(filt);
            depth = next;
            history.push(next);
            diags.push(StageDiagnostics {
                weights,
                priors_lr,
                enhanced,
                k_pd,
                k_dp,
                depth_in,
                depth_out: next,
            });
        }

        let feat = match &l.merge_stages {
            Some(conv) => {
                let cat = tape.concat(&history)?;
                conv.forward(tape, p, cat)?
            }
            None => depth,
        };
        let hr = l.upsampler.forward(tape, p, feat)?;
        let mut parts = vec![hr];
        parts.extend(priors.iter().map(|(_, &v)| v));
        let cat = tape.concat(&parts)?;
        let r = l.recon_reduce.forward(tape, p, cat)?;
        let r = l.recon_rg.forward(tape, p, r)?;
        let r = l.recon_out.forward(tape, p, r)?;
        let residual = tape.scale(r, cfg.depth_norm);
        let bicubic = tape.resample(depth_lr, up)?;
        let depth_hr = tape.add(residual, bicubic)?;
        Ok(ForwardOutput {
            depth_hr,
            bicubic,
            residual,
            stages: diags,
        })
    }

    /// Records the network with inputs as constants.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, x: &ModelInputs<T>) -> Result<ForwardOutput> {
        let d = tape.constant(x.depth_lr.clone());
        let r = tape.constant(x.rgb.clone());
        let n = tape.constant(x.normal.clone());
        let s = tape.constant(x.semantic.clone());
        self.forward_vars(tape, p, d, r, n, s)
    }

    /// Inference without gradients.
    pub fn predict(&self, x: &ModelInputs<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &p, x)?;
        Ok(tape.value(out.depth_hr).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};
    use crate::nn::resample::bicubic_resize;
    use rand::Rng;

    fn inputs<T: Scalar>(b: usize, h: usize, w: usize, s: usize, seed: u64) -> ModelInputs<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |c: usize, hh: usize, ww: usize, lo: f64, hi: f64| {
            Tensor::from_fn(vec![b, c, hh, ww], |_| T::from_f64(rng.gen_range(lo..hi)))
        };
        ModelInputs {
            depth_lr: t(1, h, w, 50.0, 500.0),
            rgb: t(3, h * s, w * s, 0.0, 1.0),
            normal: t(3, h * s, w * s, -1.0, 1.0),
            semantic: t(1, h * s, w * s, 0.0, 1.0),
        }
    }

    fn small(scale: usize, stages: usize) -> ModelConfig {
        ModelConfig {
            channels: 4,
            stages,
            rg_blocks: 1,
            ..ModelConfig::preset(Variant::Spfnet, scale)
        }
    }

    #[test]
    fn fresh_model_is_bicubic() {
        for cfg in [small(2, 2), ModelConfig::preset(Variant::SpfnetT, 4)] {
            let m = Model::<f32>::build(&cfg, 3).unwrap();
            let x = inputs::<f32>(2, 5, 6, cfg.scale, 4);
            let y = m.predict(&x).unwrap();
            let b = bicubic_resize(&x.depth_lr, Resize::Up(cfg.scale)).unwrap();
            assert_eq!(y.shape(), &[2, 1, 5 * cfg.scale, 6 * cfg.scale]);
            assert_eq!(y.max_abs_diff(&b), 0.0);
        }
    }

    #[test]
    fn build_is_deterministic() {
        let cfg = small(2, 1);
        let a = Model::<f32>::build(&cfg, 9).unwrap();
        let b = Model::<f32>::build(&cfg, 9).unwrap();
        assert_eq!(a.params.values(), b.params.values());
        let c = Model::<f32>::build(&cfg, 10).unwrap();
        assert_ne!(a.params.values(), c.params.values());
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let cases = [
            (ModelConfig { channels: 3, ..small(2, 1) }, "channels"),
            (ModelConfig { stages: 0, ..small(2, 1) }, "stages"),
            (ModelConfig { stages: 5, ..small(2, 1) }, "stages"),
            (
                ModelConfig {
                    order: vec![Modality::Rgb, Modality::Rgb],
                    ..small(2, 1)
                },
                "order",
            ),
        ];
        for (cfg, field) in cases {
            match Model::<f32>::build(&cfg, 0) {
                Err(Error::InvalidConfig { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
        assert!(matches!(
            Model::<f32>::build(&ModelConfig { scale: 3, ..small(2, 1) }, 0),
            Err(Error::UnsupportedScale(_))
        ));
    }

    #[test]
    fn mismatched_resolutions_rejected() {
        let m = Model::<f32>::build(&small(2, 1), 0).unwrap();
        let mut x = inputs::<f32>(1, 4, 4, 2, 0);
        x.rgb = Tensor::zeros(vec![1, 3, 8, 9]);
        assert!(matches!(m.predict(&x), Err(Error::ShapeMismatch { .. })));
    }

    /// Parameter count written out layer by layer.
    fn hand_count(c: usize, stages: usize, b: usize, s: usize) -> usize {
        let conv = |i: usize, o: usize, k: usize| o * i * k * k + o;
        let rg = (2 * b + 1) * conv(c, c, 3);
        let n = 3;
        let heads = conv(3, c, 3) + conv(3, c, 3) + conv(1, c, 3) + conv(1, c, 3) + 4 * rg;
        let app = 2 + n * rg;
        let ope = n * (conv(c, c, 3) + 2 * conv(c, 9, 1)) + conv(n * c, c, 3) + conv((n + 1) * c, c, 1) + rg;
        let prior = n * (conv(2 * c, c, 1) + rg);
        let recon = (s.trailing_zeros() as usize) * conv(c, 4 * c, 3) + conv((n + 1) * c, c, 1) + rg + conv(c, 1, 3);
        heads + stages * (app + ope + prior) + recon
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        let cfg = ModelConfig::preset(Variant::SpfnetT, 4);
        assert_eq!((cfg.channels, cfg.stages), (8, 3));
        let m = Model::<f32>::build(&cfg, 0).unwrap();
        assert_eq!(m.count_params(), hand_count(8, 3, 2, 4));
        assert_eq!(m.count_params(), m.layout_param_count());
        let full = Model::<f32>::build(&ModelConfig::preset(Variant::Spfnet, 4), 0).unwrap();
        assert!(m.count_params() < full.count_params());
        assert_eq!(full.count_params(), hand_count(16, 3, 2, 4));
        assert_eq!(ParamStore::<f32>::new().count(), 0);
    }

    #[test]
    fn doubling_channels_per_layer() {
        // every 3×3 C→C convolution grows from 9C²+C to 36C²+2C
        let a = Model::<f32>::build(&small(2, 1), 0).unwrap();
        let b = Model::<f32>::build(&ModelConfig { channels: 8, ..small(2, 1) }, 0).unwrap();
        let id = a.params.id("stage1.ope.rg.tail.weight").unwrap();
        let id2 = b.params.id("stage1.ope.rg.tail.weight").unwrap();
        assert_eq!(a.params.value(id).numel() * 4, b.params.value(id2).numel());
    }

    #[test]
    fn ablation_switches_change_layout() {
        let base = small(2, 1);
        let full = Model::<f32>::build(&base, 0).unwrap().count_params();
        for cfg in [
            ModelConfig { use_normal: false, ..base.clone() },
            ModelConfig { use_app: false, ..base.clone() },
            ModelConfig { mgf_mode: MgfMode::None, ..base.clone() },
        ] {
            let m = Model::<f32>::build(&cfg, 0).unwrap();
            assert!(m.count_params() < full);
            let x = inputs::<f32>(1, 4, 4, 2, 1);
            assert_eq!(m.predict(&x).unwrap().shape(), &[1, 1, 8, 8]);
        }
        let m = Model::<f32>::build(&ModelConfig { use_ope: false, ..base.clone() }, 0).unwrap();
        assert_eq!(m.predict(&inputs::<f32>(1, 4, 4, 2, 1)).unwrap().shape(), &[1, 1, 8, 8]);
        let m = Model::<f32>::build(&ModelConfig { recon_all_stages: true, stages: 2, ..base }, 0).unwrap();
        assert_eq!(m.predict(&inputs::<f32>(1, 4, 4, 2, 1)).unwrap().shape(), &[1, 1, 8, 8]);
    }

    #[test]
    fn order_changes_output_once_trained() {
        let mut a = Model::<f64>::build(&small(2, 1), 5).unwrap();
        a.params.randomize(&mut ChaCha8Rng::seed_from_u64(6), 0.1);
        let mut b = a.clone();
        b.config.order = parse_order("SRN").unwrap();
        if let Some(ope) = b.layout.stages[0].ope.as_mut() {
            ope.order = b.config.order.clone();
        }
        let x = inputs::<f64>(1, 4, 4, 2, 7);
        let (ya, yb) = (a.predict(&x).unwrap(), b.predict(&x).unwrap());
        assert!(ya.max_abs_diff(&yb) > 1e-9);
    }

    #[test]
    fn order_parsing() {
        assert_eq!(parse_order("S+R+N").unwrap(), vec![Modality::Semantic, Modality::Rgb, Modality::Normal]);
        assert!(parse_order("NSX").is_err());
    }

    #[test]
    fn full_model_gradient_check() {
        let cfg = ModelConfig {
            depth_norm: 1.0,
            ..small(2, 1)
        };
        let mut m = Model::<f64>::build(&cfg, 11).unwrap();
        m.params.randomize(&mut ChaCha8Rng::seed_from_u64(12), 0.15);
        let x = inputs::<f64>(1, 8, 8, 2, 13);
        let depth = x.depth_lr.map(|v| v / 250.0);
        let np = m.params.len();
        let mut all = m.params.values().to_vec();
        all.extend([depth, x.rgb.clone(), x.normal.clone(), x.semantic.clone()]);
        let target = Tensor::from_fn(vec![1, 1, 16, 16], |i| (i as f64 * 0.1).sin());
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
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > 6 * np / 2);
    }
}
