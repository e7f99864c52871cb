//! Sequential prior embedding with mutual guided filtering.
//!
//! Kernels are predicted per pixel from a guide feature (optionally modulated
//! by a similarity map) and applied to the other branch with a residual skip:
//! prior-to-depth (`p2d`) filters the depth features, depth-to-prior (`d2p`)
//! filters the prior features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::layers::{Conv2d, ResidualGroup};
use crate::nn::params::{Bound, Init, ParamStore};
use crate::nn::unfold::{fold, unfold3x3};
use crate::propagation::{Modality, PerModality, SimilarityWeights};
use crate::tensor::{Scalar, Tensor};

/// Side of the predicted filters.
pub const KERNEL_SIZE: usize = 3;
/// Taps per predicted filter.
pub const KERNEL_TAPS: usize = KERNEL_SIZE * KERNEL_SIZE;

fn check_svf<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (b, c, h, w) = x.dims4()?;
    let (kb, kt, kh, kw) = k.dims4()?;
    if (kb, kt, kh, kw) != (b, KERNEL_TAPS, h, w) {
        return Err(Error::ShapeMismatch {
            op: "svf",
            lhs: x.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    Ok((b, c, h, w))
}

/// `out[c,y,x] = Σ_t k[t,y,x] · x_pad[c, y+dy_t, x+dx_t]`, one 3×3 kernel per
/// pixel shared across channels, zero padding.
pub fn svf_forward<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, h, w) = check_svf(x, k)?;
    let hw = h * w;
    let cols = unfold3x3(x)?;
    let mut out = vec![T::zero(); x.numel()];
    for bi in 0..b {
        let kb = &k.data()[bi * KERNEL_TAPS * hw..(bi + 1) * KERNEL_TAPS * hw];
        let cb = &cols.data()[bi * c * KERNEL_TAPS * hw..(bi + 1) * c * KERNEL_TAPS * hw];
        for ci in 0..c {
            let o = &mut out[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for t in 0..KERNEL_TAPS {
                let kt = &kb[t * hw..(t + 1) * hw];
                let xt = &cb[(ci * KERNEL_TAPS + t) * hw..(ci * KERNEL_TAPS + t + 1) * hw];
                for j in 0..hw {
                    o[j] += kt[j] * xt[j];
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Gradients of [`svf_forward`] with respect to the input and the kernels.
pub fn svf_backward<T: Scalar>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    g: &Tensor<T>,
    needs: [bool; 2],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (b, c, h, w) = check_svf(x, k)?;
    let hw = h * w;
    let gx = if needs[0] {
        let mut gc = vec![T::zero(); b * c * KERNEL_TAPS * hw];
        for bi in 0..b {
            let kb = &k.data()[bi * KERNEL_TAPS * hw..];
            for ci in 0..c {
                let gp = &g.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                for t in 0..KERNEL_TAPS {
                    let row = ((bi * c + ci) * KERNEL_TAPS + t) * hw;
                    for j in 0..hw {
                        gc[row + j] = gp[j] * kb[t * hw + j];
                    }
                }
            }
        }
        let gc = Tensor::new(vec![b, c * KERNEL_TAPS, hw], gc)?;
        Some(fold(&gc, [b, c, h, w], false)?)
    } else {
        None
    };
    let gk = if needs[1] {
        let cols = unfold3x3(x)?;
        let mut out = vec![T::zero(); k.numel()];
        for bi in 0..b {
            for ci in 0..c {
                let gp = &g.data()[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
                for t in 0..KERNEL_TAPS {
                    let xt = &cols.data()[((bi * c + ci) * KERNEL_TAPS + t) * hw..][..hw];
                    let o = &mut out[(bi * KERNEL_TAPS + t) * hw..(bi * KERNEL_TAPS + t + 1) * hw];
                    for j in 0..hw {
                        o[j] += gp[j] * xt[j];
                    }
                }
            }
        }
        Some(Tensor::new(k.shape().to_vec(), out)?)
    } else {
        None
    };
    Ok((gx, gk))
}

/// Which filtering directions run inside each guided-filtering block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MgfMode {
    /// Features pass through unfiltered.
    None,
    /// Depth filters the prior only.
    D2p,
    /// Prior filters the depth only.
    P2d,
    D2pThenP2d,
    #[default]
    P2dThenD2p,
}

impl MgfMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['-', '>', '_'], "").as_str() {
            "none" => Some(MgfMode::None),
            "d2p" => Some(MgfMode::D2p),
            "p2d" => Some(MgfMode::P2d),
            "d2pp2d" => Some(MgfMode::D2pThenP2d),
            "p2dd2p" => Some(MgfMode::P2dThenD2p),
            _ => None,
        }
    }

    pub fn uses_p2d(self) -> bool {
        matches!(self, MgfMode::P2d | MgfMode::D2pThenP2d | MgfMode::P2dThenD2p)
    }

    pub fn uses_d2p(self) -> bool {
        matches!(self, MgfMode::D2p | MgfMode::D2pThenP2d | MgfMode::P2dThenD2p)
    }
}

/// `tanh(conv1×1(feat ⊙ w + feat))` producing `KERNEL_TAPS` channels.
#[derive(Debug, Clone)]
pub struct KernelGenerator {
    pub conv: Conv2d,
}

impl KernelGenerator {
    /// The convolution starts at zero so generated kernels vanish.
    pub fn build<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::build(store, rng, name, channels, KERNEL_TAPS, 1, Init::Zeros)?,
        })
    }
}

/// Predicted per-pixel kernels `(B, KERNEL_TAPS, H, W)`.
pub fn kernel_generate<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    kg: &KernelGenerator,
    feat: Var,
    w: Option<Var>,
) -> Result<Var> {
    let x = match w {
        Some(w) => {
            let m = tape.mul(feat, w)?;
            tape.add(m, feat)?
        }
        None => feat,
    };
    let y = kg.conv.forward(tape, p, x)?;
    Ok(tape.tanh(y))
}

/// `x ⊗ k + x`.
fn filter_residual<T: Scalar>(tape: &mut Tape<T>, x: Var, k: Var) -> Result<Var> {
    let f = tape.svf(x, k)?;
    tape.add(f, x)
}

/// Learnable state of one modality's guided filtering block.
#[derive(Debug, Clone)]
pub struct MgfParams {
    /// Input projection of the depth features.
    pub proj: Conv2d,
    pub kg_prior: Option<KernelGenerator>,
    pub kg_depth: Option<KernelGenerator>,
}

impl MgfParams {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        channels: usize,
        mode: MgfMode,
    ) -> Result<Self> {
        let proj = Conv2d::build(store, rng, &format!("{name}.proj"), channels, channels, 3, Init::He)?;
        let kg_prior = if mode.uses_p2d() {
            Some(KernelGenerator::build(store, rng, &format!("{name}.kg_prior"), channels)?)
        } else {
            None
        };
        let kg_depth = if mode.uses_d2p() {
            Some(KernelGenerator::build(store, rng, &format!("{name}.kg_depth"), channels)?)
        } else {
            None
        };
        Ok(Self { proj, kg_prior, kg_depth })
    }

    pub fn param_count(&self) -> usize {
        self.proj.param_count()
            + self.kg_prior.as_ref().map_or(0, |k| k.conv.param_count())
            + self.kg_depth.as_ref().map_or(0, |k| k.conv.param_count())
    }
}

/// Result of one guided filtering block.
#[derive(Debug, Clone, Copy)]
pub struct MgfOutput {
    /// Depth features filtered by the prior.
    pub depth: Var,
    /// Prior features filtered by the depth.
    pub prior: Var,
    pub k_pd: Option<Var>,
    pub k_dp: Option<Var>,
}

/// Bidirectional guided filtering of depth features `f_id` and prior features
/// `f_sp`, in the direction order given by `mode`.
pub fn mgf<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    params: &MgfParams,
    mode: MgfMode,
    f_id: Var,
    f_sp: Var,
    w: Option<Var>,
) -> Result<MgfOutput> {
    let mut out = MgfOutput {
        depth: f_id,
        prior: f_sp,
        k_pd: None,
        k_dp: None,
    };
    let kg = |g: &Option<KernelGenerator>, which: &str| -> Result<KernelGenerator> {
        g.clone().ok_or_else(|| Error::InvalidConfig {
            field: "mgf",
            reason: format!("{which} kernel generator missing for mode {mode:?}"),
        })
    };
    let p2d = |tape: &mut Tape<T>, out: &mut MgfOutput| -> Result<()> {
        let k = kernel_generate(tape, p, &kg(&params.kg_prior, "prior")?, out.prior, w)?;
        out.depth = filter_residual(tape, out.depth, k)?;
        out.k_pd = Some(k);
        Ok(())
    };
    let d2p = |tape: &mut Tape<T>, out: &mut MgfOutput| -> Result<()> {
        let k = kernel_generate(tape, p, &kg(&params.kg_depth, "depth")?, out.depth, w)?;
        out.prior = filter_residual(tape, out.prior, k)?;
        out.k_dp = Some(k);
        Ok(())
    };
    match mode {
        MgfMode::None => {}
        MgfMode::P2d => p2d(tape, &mut out)?,
        MgfMode::D2p => d2p(tape, &mut out)?,
        MgfMode::P2dThenD2p => {
            p2d(tape, &mut out)?;
            d2p(tape, &mut out)?;
        }
        MgfMode::D2pThenP2d => {
            d2p(tape, &mut out)?;
            p2d(tape, &mut out)?;
        }
    }
    Ok(out)
}

/// Learnable state of one embedding stage.
#[derive(Debug, Clone)]
pub struct OpeParams {
    pub order: Vec<Modality>,
    pub mode: MgfMode,
    pub blocks: PerModality<MgfParams>,
    /// Projection of the concatenated filtered depth features (`n·C → C`).
    pub fuse_depth: Conv2d,
    /// 1×1 reduction of the concatenated filtered priors and fused depth.
    pub reduce: Conv2d,
    pub rg: ResidualGroup,
}

impl OpeParams {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        order: &[Modality],
        channels: usize,
        rg_blocks: usize,
        mode: MgfMode,
    ) -> Result<Self> {
        if order.is_empty() {
            return Err(Error::InvalidConfig {
                field: "order",
                reason: "at least one modality is required".into(),
            });
        }
        let mut blocks = PerModality::default();
        for &m in order {
            if blocks.get(m).is_some() {
                return Err(Error::InvalidConfig {
                    field: "order",
                    reason: format!("{} appears twice", m.name()),
                });
            }
            blocks.set(m, MgfParams::build(store, rng, &format!("{name}.mgf_{}", m.name()), channels, mode)?);
        }
        let n = order.len();
        let fuse_depth = Conv2d::build(store, rng, &format!("{name}.fuse_depth"), n * channels, channels, 3, Init::He)?;
        let reduce = Conv2d::build(store, rng, &format!("{name}.reduce"), (n + 1) * channels, channels, 1, Init::Zeros)?;
        let rg = ResidualGroup::build(store, rng, &format!("{name}.rg"), channels, rg_blocks)?;
        Ok(Self {
            order: order.to_vec(),
            mode,
            blocks,
            fuse_depth,
            reduce,
            rg,
        })
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|(_, b)| b.param_count()).sum::<usize>()
            + self.fuse_depth.param_count()
            + self.reduce.param_count()
            + self.rg.param_count()
    }
}

/// Everything one embedding stage produces.
#[derive(Debug, Clone, Default)]
pub struct OpeOutputs {
    /// Prior features filtered by depth.
    pub filtered_priors: PerModality<Var>,
    /// Depth features filtered by each prior.
    pub filtered_depth: PerModality<Var>,
    pub k_pd: PerModality<Var>,
    pub k_dp: PerModality<Var>,
    pub fused: Option<Var>,
    pub next: Option<Var>,
}

impl OpeOutputs {
    pub fn next(&self) -> Var {
        self.next.expect("stage output")
    }
}

/// One embedding stage.
///
/// Modalities are embedded one at a time in `params.order`. The depth input of
/// the k-th block is the projection of `F_d_prev` (k = 0), of
/// `F_d_prev + out_0` (k = 1), or of `out_{k-2} + out_{k-1}` (k ≥ 2).
/// When `guidance` is set the similarity weights modulate kernel generation.
pub fn ope_stage<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    params: &OpeParams,
    depth_prev: Var,
    enhanced: &PerModality<Var>,
    weights: Option<&SimilarityWeights>,
    guidance: bool,
) -> Result<OpeOutputs> {
    let mut out = OpeOutputs::default();
    let mut depth_outs: Vec<Var> = Vec::with_capacity(params.order.len());
    for (k, &m) in params.order.iter().enumerate() {
        let prior = *enhanced.get(m).ok_or_else(|| Error::InvalidConfig {
            field: "order",
            reason: format!("no enhanced {} features", m.name()),
        })?;
        let block = params.blocks.get(m).expect("built for every ordered modality");
        let src = match k {
            0 => depth_prev,
            1 => tape.add(depth_prev, depth_outs[0])?,
            _ => tape.add(depth_outs[k - 2], depth_outs[k - 1])?,
        };
        let f_id = block.proj.forward(tape, p, src)?;
        let w = if guidance { weights.and_then(|w| w.w.get(m).copied()) } else { None };
        let r = mgf(tape, p, block, params.mode, f_id, prior, w)?;
        depth_outs.push(r.depth);
        out.filtered_depth.set(m, r.depth);
        out.filtered_priors.set(m, r.prior);
        if let Some(kp) = r.k_pd {
            out.k_pd.set(m, kp);
        }
        if let Some(kd) = r.k_dp {
            out.k_dp.set(m, kd);
        }
    }
    let cat = tape.concat(&depth_outs)?;
    let fd = params.fuse_depth.forward(tape, p, cat)?;
    let fused = tape.add(fd, depth_prev)?;
    let mut parts: Vec<Var> = params
        .order
        .iter()
        .map(|&m| *out.filtered_priors.get(m).expect("set above"))
        .collect();
    parts.push(fused);
    let cat = tape.concat(&parts)?;
    let reduced = params.reduce.forward(tape, p, cat)?;
    let refined = params.rg.forward(tape, p, reduced)?;
    out.next = Some(tape.add(refined, depth_prev)?);
    out.fused = Some(fused);
    Ok(out)
}

/// Number of histogram bins in [`kernel_stats`].
pub const KERNEL_HIST_BINS: usize = 32;
/// Upper edge of the histogram: the largest forward-difference magnitude of
/// entries bounded by one.
pub const KERNEL_GRAD_MAX: f64 = 2.0 * std::f64::consts::SQRT_2;

/// Spatial-variation summary of a kernel field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelStats {
    /// Bin centres over `[0, KERNEL_GRAD_MAX]`.
    pub bin_centers: Vec<f64>,
    /// Normalized mass per bin.
    pub hist: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    pub count: usize,
}

/// Per-pixel forward-difference magnitude of the kernel field `(B,T,H,W)`,
/// root-mean-square over taps. Only pixels with a right and lower neighbour
/// are measured, further restricted to `mask` (length `B·H·W`) when given.
pub fn kernel_gradients<T: Scalar>(k: &Tensor<T>, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let (b, t, h, w) = k.dims4()?;
    if let Some(m) = mask {
        if m.len() != b * h * w {
            return Err(Error::ShapeMismatch {
                op: "kernel_stats",
                lhs: k.shape().to_vec(),
                rhs: vec![m.len()],
            });
        }
    }
    let d = k.data();
    let mut out = Vec::new();
    for bi in 0..b {
        for y in 0..h.saturating_sub(1) {
            for x in 0..w.saturating_sub(1) {
                if mask.is_some_and(|m| !m[(bi * h + y) * w + x]) {
                    continue;
                }
                let mut acc = 0.0;
                for ti in 0..t {
                    let at = |yy: usize, xx: usize| d[((bi * t + ti) * h + yy) * w + xx].as_f64();
                    let c = at(y, x);
                    let gx = at(y, x + 1) - c;
                    let gy = at(y + 1, x) - c;
                    acc += gx * gx + gy * gy;
                }
                out.push((acc / t as f64).sqrt());
            }
        }
    }
    Ok(out)
}

/// Histogram, mean and variance of [`kernel_gradients`].
pub fn kernel_stats<T: Scalar>(k: &Tensor<T>, mask: Option<&[bool]>) -> Result<KernelStats> {
    let g = kernel_gradients(k, mask)?;
    Ok(summarize_gradients(&g))
}

pub fn summarize_gradients(g: &[f64]) -> KernelStats {
    let width = KERNEL_GRAD_MAX / KERNEL_HIST_BINS as f64;
    let mut hist = vec![0.0; KERNEL_HIST_BINS];
    for &v in g {
        let bin = ((v / width) as usize).min(KERNEL_HIST_BINS - 1);
        hist[bin] += 1.0;
    }
    let n = g.len();
    if n > 0 {
        hist.iter_mut().for_each(|h| *h /= n as f64);
    }
    let mean = if n > 0 { g.iter().sum::<f64>() / n as f64 } else { 0.0 };
    let variance = if n > 0 {
        g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
    } else {
        0.0
    };
    KernelStats {
        bin_centers: (0..KERNEL_HIST_BINS).map(|i| (i as f64 + 0.5) * width).collect(),
        hist,
        mean,
        variance,
        count: n,
    }
}
