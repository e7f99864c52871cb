//! Similarity-weighted prior propagation.
//!
//! Each prior feature map is compared with the depth features patch by patch
//! (cosine of 3×3 neighbourhoods); the resulting one-channel maps reweight the
//! previously filtered prior features before a residual group.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::layers::ResidualGroup;
use crate::nn::params::{Bound, ParamId, ParamStore};
use crate::nn::resample::Resampler;
use crate::nn::unfold::{fold, unfold3x3};
use crate::tensor::{Scalar, Tensor};

/// Lower bound on patch norms in the cosine similarity.
pub const SIMILARITY_EPS: f64 = 1e-8;

/// Guidance modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Normal,
    Semantic,
    Rgb,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Normal, Modality::Semantic, Modality::Rgb];

    pub fn index(self) -> usize {
        match self {
            Modality::Normal => 0,
            Modality::Semantic => 1,
            Modality::Rgb => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Normal => "normal",
            Modality::Semantic => "semantic",
            Modality::Rgb => "rgb",
        }
    }

    pub fn letter(self) -> char {
        match self {
            Modality::Normal => 'N',
            Modality::Semantic => 'S',
            Modality::Rgb => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'N' => Some(Modality::Normal),
            'S' => Some(Modality::Semantic),
            'R' => Some(Modality::Rgb),
            _ => None,
        }
    }
}

/// One optional value per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct PerModality<X>(pub [Option<X>; 3]);

impl<X> Default for PerModality<X> {
    fn default() -> Self {
        Self([None, None, None])
    }
}

impl<X> PerModality<X> {
    pub fn get(&self, m: Modality) -> Option<&X> {
        self.0[m.index()].as_ref()
    }

    pub fn set(&mut self, m: Modality, x: X) {
        self.0[m.index()] = Some(x);
    }

    /// Present entries in N, S, R order.
    pub fn iter(&self) -> impl Iterator<Item = (Modality, &X)> {
        Modality::ALL.into_iter().filter_map(|m| self.get(m).map(|x| (m, x)))
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.iter().map(|(m, _)| m).collect()
    }

    pub fn map<Y>(&self, mut f: impl FnMut(Modality, &X) -> Y) -> PerModality<Y> {
        let mut out = PerModality::default();
        for (m, x) in self.iter() {
            out.set(m, f(m, x));
        }
        out
    }
}

fn check_pair<T: Scalar>(prior: &Tensor<T>, depth: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let dims = prior.dims4()?;
    if prior.shape() != depth.shape() {
        return Err(Error::ShapeMismatch {
            op: "patch_similarity",
            lhs: prior.shape().to_vec(),
            rhs: depth.shape().to_vec(),
        });
    }
    Ok(dims)
}

struct Cosines<T> {
    p: Tensor<T>,
    d: Tensor<T>,
    np: Vec<T>,
    nd: Vec<T>,
    dot: Vec<T>,
}

fn cosines<T: Scalar>(prior: &Tensor<T>, depth: &Tensor<T>, eps: T) -> Result<Cosines<T>> {
    let (b, _, h, w) = check_pair(prior, depth)?;
    let p = unfold3x3(prior)?;
    let d = unfold3x3(depth)?;
    let (rows, cols) = (p.shape()[1], h * w);
    let mut np = vec![T::zero(); b * cols];
    let mut nd = vec![T::zero(); b * cols];
    let mut dot = vec![T::zero(); b * cols];
    for bi in 0..b {
        let base = bi * rows * cols;
        let (np, nd, dot) = (
            &mut np[bi * cols..(bi + 1) * cols],
            &mut nd[bi * cols..(bi + 1) * cols],
            &mut dot[bi * cols..(bi + 1) * cols],
        );
        for r in 0..rows {
            let pr = &p.data()[base + r * cols..base + (r + 1) * cols];
            let dr = &d.data()[base + r * cols..base + (r + 1) * cols];
            for j in 0..cols {
                np[j] += pr[j] * pr[j];
                nd[j] += dr[j] * dr[j];
                dot[j] += pr[j] * dr[j];
            }
        }
        for j in 0..cols {
            np[j] = np[j].sqrt().max(eps);
            nd[j] = nd[j].sqrt().max(eps);
        }
    }
    Ok(Cosines { p, d, np, nd, dot })
}

/// Cosine similarity of the zero-padded 3×3 neighbourhoods (all channels
/// together) of `prior` and `depth` at every pixel; `(B,1,H,W)`.
pub fn similarity_forward<T: Scalar>(prior: &Tensor<T>, depth: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let (b, _, h, w) = prior.dims4()?;
    let cs = cosines(prior, depth, eps)?;
    let data = (0..b * h * w).map(|j| cs.dot[j] / (cs.np[j] * cs.nd[j])).collect();
    Tensor::new(vec![b, 1, h, w], data)
}

/// Gradients of [`similarity_forward`] with respect to prior and depth.
pub fn similarity_backward<T: Scalar>(
    prior: &Tensor<T>,
    depth: &Tensor<T>,
    g: &Tensor<T>,
    eps: T,
    needs: [bool; 2],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (b, c, h, w) = prior.dims4()?;
    let cs = cosines(prior, depth, eps)?;
    let (rows, cols) = (c * 9, h * w);
    let side = |a: &Tensor<T>, other: &Tensor<T>, na: &[T], nb: &[T]| -> Result<Tensor<T>> {
        let mut out = vec![T::zero(); b * rows * cols];
        for bi in 0..b {
            let base = bi * rows * cols;
            for j in 0..cols {
                let k = bi * cols + j;
                let inv = T::one() / (na[k] * nb[k]);
                let sigma = cs.dot[k] * inv;
                // the clamped norm is constant, so only the unclamped side
                // contributes a normalization term
                let clamped = na[k] <= eps;
                let gk = g.data()[k];
                for r in 0..rows {
                    let i = base + r * cols + j;
                    let mut v = other.data()[i] * inv;
                    if !clamped {
                        v -= sigma * a.data()[i] / (na[k] * na[k]);
                    }
                    out[i] = gk * v;
                }
            }
        }
        fold(&Tensor::new(vec![b, rows, cols], out)?, [b, c, h, w], false)
    };
    let gp = if needs[0] { Some(side(&cs.p, &cs.d, &cs.np, &cs.nd)?) } else { None };
    let gd = if needs[1] { Some(side(&cs.d, &cs.p, &cs.nd, &cs.np)?) } else { None };
    Ok((gp, gd))
}

/// `w_r = γ₁·w_n + γ₂·w_s + σ_r`; absent terms are dropped.
pub fn fuse_rgb_weight<T: Scalar>(
    tape: &mut Tape<T>,
    w_n: Option<Var>,
    w_s: Option<Var>,
    sigma_r: Var,
    gamma1: Var,
    gamma2: Var,
) -> Result<Var> {
    let mut w = sigma_r;
    for (term, gamma) in [(w_n, gamma1), (w_s, gamma2)] {
        if let Some(t) = term {
            let scaled = tape.mul(t, gamma)?;
            w = tape.add(w, scaled)?;
        }
    }
    Ok(w)
}

/// `f_rg(prev ⊙ w + prev)` with the one-channel weight broadcast over channels.
pub fn propagate<T: Scalar>(tape: &mut Tape<T>, p: &Bound, prev: Var, w: Var, rg: &ResidualGroup) -> Result<Var> {
    let weighted = tape.mul(prev, w)?;
    let x = tape.add(weighted, prev)?;
    rg.forward(tape, p, x)
}

/// Per-stage similarity maps. `sigma` holds the raw cosine maps and `w` the
/// weights actually applied (`w_n = σ_n`, `w_s = σ_s`, `w_r` fused).
#[derive(Debug, Clone, Default)]
pub struct SimilarityWeights {
    pub sigma: PerModality<Var>,
    pub w: PerModality<Var>,
    pub gamma1: Option<Var>,
    pub gamma2: Option<Var>,
}

/// Prior features after propagation, at depth-feature resolution.
#[derive(Debug, Clone, Default)]
pub struct EnhancedPriors {
    pub features: PerModality<Var>,
    /// The priors downsampled to depth resolution (input of the similarity).
    pub downsampled: PerModality<Var>,
}

/// Learnable state of one propagation stage.
#[derive(Debug, Clone)]
pub struct AppParams {
    pub gamma1: ParamId,
    pub gamma2: ParamId,
    pub groups: PerModality<ResidualGroup>,
}

impl AppParams {
    pub fn build<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        modalities: &[Modality],
        channels: usize,
        rg_blocks: usize,
    ) -> Result<Self> {
        let gamma1 = store.add(format!("{name}.gamma1"), Tensor::zeros(vec![1]))?;
        let gamma2 = store.add(format!("{name}.gamma2"), Tensor::zeros(vec![1]))?;
        let mut groups = PerModality::default();
        for &m in modalities {
            let g = ResidualGroup::build(store, rng, &format!("{name}.rg_{}", m.name()), channels, rg_blocks)?;
            groups.set(m, g);
        }
        Ok(Self { gamma1, gamma2, groups })
    }

    pub fn param_count(&self) -> usize {
        2 + self.groups.iter().map(|(_, g)| g.param_count()).sum::<usize>()
    }
}

/// One propagation stage.
///
/// `priors` are the current prior features at their own resolution and are
/// brought to the depth resolution with `down` (when given). `prev_filtered`
/// are the filtered prior features of the previous embedding stage; when
/// absent the downsampled priors stand in.
pub fn app_stage<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    params: &AppParams,
    priors: &PerModality<Var>,
    depth: Var,
    prev_filtered: Option<&PerModality<Var>>,
    down: Option<&Arc<Resampler<T>>>,
) -> Result<(SimilarityWeights, EnhancedPriors)> {
    let mut weights = SimilarityWeights::default();
    let mut enhanced = EnhancedPriors::default();
    for (m, &f) in priors.iter() {
        let lr = match down {
            Some(r) => tape.resample(f, r.clone())?,
            None => f,
        };
        let sigma = tape.patch_similarity(lr, depth, SIMILARITY_EPS)?;
        enhanced.downsampled.set(m, lr);
        weights.sigma.set(m, sigma);
    }
    let (g1, g2) = (p.get(params.gamma1), p.get(params.gamma2));
    weights.gamma1 = Some(g1);
    weights.gamma2 = Some(g2);
    for (m, &sigma) in weights.sigma.clone().iter() {
        let w = match m {
            Modality::Rgb => {
                let w_n = weights.sigma.get(Modality::Normal).copied();
                let w_s = weights.sigma.get(Modality::Semantic).copied();
                fuse_rgb_weight(tape, w_n, w_s, sigma, g1, g2)?
            }
            _ => sigma,
        };
        weights.w.set(m, w);
    }
    for (m, &w) in weights.w.clone().iter() {
        let prev = match prev_filtered.and_then(|pf| pf.get(m)) {
            Some(&v) => v,
            None => *enhanced.downsampled.get(m).expect("set above"),
        };
        let rg = params.groups.get(m).ok_or_else(|| Error::InvalidConfig {
            field: "modalities",
            reason: format!("no propagation group for {}", m.name()),
        })?;
        let e = propagate(tape, p, prev, w, rg)?;
        enhanced.features.set(m, e);
    }
    Ok((weights, enhanced))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};
    use crate::nn::resample::Resize;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop evaluation of the patch cosine.
    fn oracle(p: &Tensor<f64>, d: &Tensor<f64>) -> Vec<f64> {
        let (b, c, h, w) = p.dims4().unwrap();
        let at = |t: &Tensor<f64>, bi: usize, ci: usize, y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                0.0
            } else {
                t.data()[((bi * c + ci) * h + y as usize) * w + x as usize]
            }
        };
        let mut out = Vec::new();
        for bi in 0..b {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let (mut dot, mut pp, mut dd) = (0.0, 0.0, 0.0);
                    for ci in 0..c {
                        for dy in -1..=1 {
                            for dx in -1..=1 {
                                let a = at(p, bi, ci, y + dy, x + dx);
                                let e = at(d, bi, ci, y + dy, x + dx);
                                dot += a * e;
                                pp += a * a;
                                dd += e * e;
                            }
                        }
                    }
                    out.push(dot / (pp.sqrt().max(1e-8) * dd.sqrt().max(1e-8)));
                }
            }
        }
        out
    }

    fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn identical_inputs_give_one() {
        let x = Tensor::from_fn(vec![1, 2, 4, 4], |i| 1.0 + i as f64 * 0.1);
        let s = similarity_forward(&x, &x, 1e-8).unwrap();
        assert!(s.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_patch_gives_zero() {
        // single pixel: the only nonzero tap is the centre
        let p = Tensor::from_f64(vec![1, 2, 1, 1], &[1.0, 0.0]).unwrap();
        let d = Tensor::from_f64(vec![1, 2, 1, 1], &[0.0, 3.0]).unwrap();
        assert_eq!(similarity_forward(&p, &d, 1e-8).unwrap().data(), &[0.0]);
    }

    #[test]
    fn hand_unfolded_three_by_three() {
        // centre pixel sees the full 3×3 image
        let p: Vec<f64> = (1..=9).map(f64::from).collect();
        let d = [1.0, 0.0, -1.0, 2.0, 0.0, -2.0, 1.0, 0.0, -1.0];
        let dot: f64 = p.iter().zip(&d).map(|(a, b)| a * b).sum(); // 1-3+8-12+7-9 = -8
        assert_eq!(dot, -8.0);
        let expect_centre = dot / (285f64.sqrt() * 12f64.sqrt());
        // top-left pixel sees [1,2,4,5] and [1,0,2,0]
        let expect_corner = (1.0 + 8.0) / ((1.0f64 + 4.0 + 16.0 + 25.0).sqrt() * 5f64.sqrt());
        let pt = Tensor::from_f64(vec![1, 1, 3, 3], &p).unwrap();
        let dt = Tensor::from_f64(vec![1, 1, 3, 3], &d).unwrap();
        let s = similarity_forward(&pt, &dt, 1e-8).unwrap();
        assert!((s.data()[4] - expect_centre).abs() < 1e-6);
        assert!((s.data()[0] - expect_corner).abs() < 1e-6);
    }

    #[test]
    fn matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let shape = vec![1 + rng.gen_range(0..2), rng.gen_range(1..5), rng.gen_range(1..9), rng.gen_range(1..9)];
            let p = random(shape.clone(), &mut rng);
            let d = random(shape, &mut rng);
            let s = similarity_forward(&p, &d, 1e-8).unwrap();
            for (a, b) in s.data().iter().zip(oracle(&p, &d)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn spatial_mismatch_rejected() {
        let a = Tensor::<f32>::zeros(vec![1, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(vec![1, 1, 3, 4]);
        assert!(matches!(similarity_forward(&a, &b, 1e-8), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn fused_weight_arithmetic() {
        let mut tape = Tape::<f64>::new();
        let c = |t: &mut Tape<f64>, v: f64| t.constant(Tensor::full(vec![1, 1, 1, 1], v));
        let (wn, ws, sr) = (c(&mut tape, 0.8), c(&mut tape, 0.2), c(&mut tape, 0.1));
        let g1 = tape.constant(Tensor::full(vec![1], 0.5));
        let g2 = tape.constant(Tensor::full(vec![1], -0.5));
        let w = fuse_rgb_weight(&mut tape, Some(wn), Some(ws), sr, g1, g2).unwrap();
        assert!((tape.value(w).data()[0] - 0.4).abs() < 1e-12);

        let z = tape.constant(Tensor::full(vec![1], 0.0));
        let w = fuse_rgb_weight(&mut tape, Some(wn), Some(ws), sr, z, z).unwrap();
        assert_eq!(tape.value(w).data()[0], 0.1);
        let one = tape.constant(Tensor::full(vec![1], 1.0));
        let u = c(&mut tape, 1.0);
        let w = fuse_rgb_weight(&mut tape, Some(u), Some(u), u, one, one).unwrap();
        assert_eq!(tape.value(w).data()[0], 3.0);
    }

    #[test]
    fn propagate_with_zero_and_unit_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::<f64>::new();
        let rg = ResidualGroup::build(&mut store, &mut rng, "rg", 2, 1).unwrap();
        store.randomize(&mut rng, 0.2);
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(random(vec![1, 2, 4, 4], &mut rng));
        let zero = tape.constant(Tensor::zeros(vec![1, 1, 4, 4]));
        let one = tape.constant(Tensor::full(vec![1, 1, 4, 4], 1.0));
        let a = propagate(&mut tape, &p, x, zero, &rg).unwrap();
        let direct = rg.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(a), tape.value(direct));
        let b = propagate(&mut tape, &p, x, one, &rg).unwrap();
        let x2 = tape.scale(x, 2.0);
        let direct2 = rg.forward(&mut tape, &p, x2).unwrap();
        assert!(tape.value(b).max_abs_diff(tape.value(direct2)) < 1e-12);
    }

    #[test]
    fn identical_features_weigh_one_plus_gammas() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::<f64>::new();
        let params = AppParams::build(&mut store, &mut rng, "app", &Modality::ALL, 2, 1).unwrap();
        store.value_mut(params.gamma1).data_mut()[0] = 0.3;
        store.value_mut(params.gamma2).data_mut()[0] = -0.7;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_fn(vec![1, 2, 4, 4], |i| 0.5 + i as f64));
        let mut priors = PerModality::default();
        for m in Modality::ALL {
            priors.set(m, x);
        }
        let (w, e) = app_stage(&mut tape, &p, &params, &priors, x, None, None).unwrap();
        for (_, &s) in w.sigma.iter() {
            assert!(tape.value(s).data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
        let wr = tape.value(*w.w.get(Modality::Rgb).unwrap());
        assert!(wr.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
        // fresh groups are identities: enhanced = prev·w + prev
        let er = tape.value(*e.features.get(Modality::Rgb).unwrap());
        let xv = tape.value(x);
        assert!(er.data().iter().zip(xv.data()).all(|(a, b)| (a - 1.6 * b).abs() < 1e-9));
    }

    #[test]
    fn similarity_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random(vec![1, 2, 5, 5], &mut rng);
        let d = random(vec![1, 2, 5, 5], &mut rng);
        let r = grad_check(
            |t, v| {
                let s = t.patch_similarity(v[0], v[1], SIMILARITY_EPS)?;
                let s2 = t.mul(s, s)?;
                Ok(t.sum(s2))
            },
            &[p, d],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn app_stage_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::<f64>::new();
        let params = AppParams::build(&mut store, &mut rng, "app", &Modality::ALL, 4, 1).unwrap();
        store.randomize(&mut rng, 0.2);
        let n_params = store.len();
        let mut inputs: Vec<Tensor<f64>> = store.values().to_vec();
        for _ in 0..3 {
            inputs.push(random(vec![1, 4, 12, 12], &mut rng));
        }
        inputs.push(random(vec![1, 4, 6, 6], &mut rng));
        let down = Arc::new(Resampler::new(12, 12, Resize::Down(2), Default::default()).unwrap());
        let r = grad_check(
            |t, v| {
                let p = crate::nn::params::Bound::from_vars(v[..n_params].to_vec());
                let mut priors = PerModality::default();
                for (i, m) in Modality::ALL.into_iter().enumerate() {
                    priors.set(m, v[n_params + i]);
                }
                let depth = v[n_params + 3];
                let (_, e) = app_stage(t, &p, &params, &priors, depth, None, Some(&down))?;
                let mut acc = None;
                for (_, &f) in e.features.iter() {
                    let sq = t.mul(f, f)?;
                    let s = t.sum(sq);
                    acc = Some(match acc {
                        None => s,
                        Some(a) => t.add(a, s)?,
                    });
                }
                Ok(acc.unwrap())
            },
            &inputs,
            GradCheckOptions {
                max_coords: Some(40),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn similarity_is_bounded_and_scale_invariant(
            seed in any::<u64>(),
            c in 1usize..4, h in 1usize..7, w in 1usize..7,
            alpha in 0.01f64..100.0, beta in 0.01f64..100.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // offset keeps every patch away from zero
            let p = Tensor::from_fn(vec![1, c, h, w], |_| rng.gen_range(0.1..1.0) * if rng.gen() { 1.0 } else { -1.0 });
            let d = random(vec![1, c, h, w], &mut rng);
            let s = similarity_forward(&p, &d, 1e-8).unwrap();
            prop_assert!(s.data().iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
            let s2 = similarity_forward(&p.map(|v| v * alpha), &d.map(|v| v * beta), 1e-8).unwrap();
            prop_assert!(s.max_abs_diff(&s2) < 1e-6);
            let own = similarity_forward(&p, &p, 1e-8).unwrap();
            prop_assert!(own.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        }
    }
}
