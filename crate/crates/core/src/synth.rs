//! Procedural RGB-D scenes with exact normals and labels.
//!
//! Depth is orthographic: `z(x, y)` in centimetres over a pixel grid with a
//! fixed pitch. Every primitive lives in its own depth band (the background
//! plane in the farthest one), so nearer primitives always occlude farther
//! ones and every label boundary is a depth jump of at least the band gap.

use std::fmt::Write as _;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::resample::{Filter, Resampler, Resize};
use crate::tensor::Tensor;

/// Depth step (cm) that separates two primitives at a label boundary.
pub const DEPTH_EDGE_THRESHOLD_CM: f64 = 5.0;

/// Largest per-pixel depth change inside one primitive, in units of pitch.
const MAX_INTERIOR_SLOPE: f64 = 1.0;
/// Sphere caps are cut at this fraction of the radius.
const CAP_CLIP: f64 = 0.7;
/// Smallest sphere radius in pixels.
const MIN_SPHERE_RADIUS: f64 = 12.0;
/// Fraction of each depth band kept free on either side.
const BAND_MARGIN: f64 = 0.15;

/// Scene generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    /// High-resolution extents.
    pub height: usize,
    pub width: usize,
    /// Downsampling factor between ground truth and the low-resolution input.
    pub scale: usize,
    /// Primitive count range (background included), inclusive.
    pub min_objects: usize,
    pub max_objects: usize,
    pub depth_min: f64,
    pub depth_max: f64,
    /// Centimetres per pixel.
    pub pixel_pitch: f64,
    /// Amplitude of the colour texture; touches RGB only.
    pub texture_amplitude: f64,
    /// Standard deviation of the depth noise on the 0–255 scale.
    pub noise_std: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            scale: 4,
            min_objects: 3,
            max_objects: 8,
            depth_min: 50.0,
            depth_max: 500.0,
            pixel_pitch: 1.0,
            texture_amplitude: 0.25,
            noise_std: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: String| Err(Error::InvalidConfig { field, reason });
        Resize::Down(self.scale).validate()?;
        if self.height == 0 || self.width == 0 || self.height % self.scale != 0 || self.width % self.scale != 0 {
            return bad(
                "size",
                format!("{}x{} must be a nonzero multiple of scale {}", self.height, self.width, self.scale),
            );
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return bad("objects", format!("range {}..={} is empty", self.min_objects, self.max_objects));
        }
        if !(self.depth_min > 0.0 && self.depth_max > self.depth_min) {
            return bad("depth_range", format!("[{}, {}] is not a positive range", self.depth_min, self.depth_max));
        }
        let gap = 2.0 * BAND_MARGIN * (self.depth_max - self.depth_min) / self.max_objects as f64;
        if gap <= DEPTH_EDGE_THRESHOLD_CM {
            return bad("depth_range", format!("band gap {gap:.2} cm too small for {} objects", self.max_objects));
        }
        if !(self.pixel_pitch > 0.0 && self.pixel_pitch * MAX_INTERIOR_SLOPE * 1.5 < DEPTH_EDGE_THRESHOLD_CM) {
            return bad("pixel_pitch", format!("{} must be positive and below the edge threshold", self.pixel_pitch));
        }
        if !(self.texture_amplitude >= 0.0 && self.noise_std >= 0.0) {
            return bad("texture_amplitude", "amplitudes must be non-negative".into());
        }
        Ok(())
    }

    pub fn lr_size(&self) -> (usize, usize) {
        (self.height / self.scale, self.width / self.scale)
    }
}

/// One synthetic sample. Image tensors are batch-1 `(1, C, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub index: u64,
    /// `(1,3,sH,sW)` in `[0,1]`.
    pub rgb: Tensor<f32>,
    /// `(1,1,sH,sW)` centimetres.
    pub depth_gt: Tensor<f32>,
    /// `(1,3,sH,sW)` unit vectors.
    pub normal: Tensor<f32>,
    /// `(1,1,sH,sW)` label divided by `max_objects - 1`.
    pub semantic: Tensor<f32>,
    /// `(1,1,H,W)` centimetres.
    pub depth_lr: Tensor<f32>,
    /// `sH·sW` flags.
    pub valid: Vec<bool>,
    /// Integer labels, `sH·sW`.
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone)]
enum Shape {
    /// Whole image.
    Background,
    /// Axis-aligned rectangle `[x0, x1) × [y0, y1)`.
    Rect { x0: f64, x1: f64, y0: f64, y1: f64 },
    /// Sphere cap centred at `(cx, cy)`, radius in pixels.
    Cap { cx: f64, cy: f64, r: f64 },
}

#[derive(Debug, Clone)]
struct Primitive {
    shape: Shape,
    /// Plane: `z = z0 + gx·(X - X0) + gy·(Y - Y0)` with `X = x·pitch`.
    /// Cap: `z0` is the sphere centre depth.
    z0: f64,
    gx: f64,
    gy: f64,
    cx: f64,
    cy: f64,
    label: u8,
    color: [f64; 3],
    stripe_freq: f64,
    stripe_dir: f64,
    stripe_phase: f64,
}

impl Primitive {
    /// Depth and the surface gradient `(∂z/∂X, ∂z/∂Y)` at pixel centre `(x, y)`.
    fn sample(&self, x: f64, y: f64, pitch: f64) -> Option<(f64, f64, f64)> {
        match self.shape {
            Shape::Background => Some(self.plane(x, y, pitch)),
            Shape::Rect { x0, x1, y0, y1 } => (x >= x0 && x < x1 && y >= y0 && y < y1).then(|| self.plane(x, y, pitch)),
            Shape::Cap { cx, cy, r } => {
                let (dx, dy) = ((x - cx) * pitch, (y - cy) * pitch);
                let rr = r * pitch;
                let rho2 = dx * dx + dy * dy;
                if rho2 > (CAP_CLIP * rr).powi(2) {
                    return None;
                }
                let root = (rr * rr - rho2).sqrt();
                Some((self.z0 - root, dx / root, dy / root))
            }
        }
    }

    fn plane(&self, x: f64, y: f64, pitch: f64) -> (f64, f64, f64) {
        let z = self.z0 + self.gx * (x - self.cx) * pitch + self.gy * (y - self.cy) * pitch;
        (z, self.gx, self.gy)
    }
}

/// Generator seeded by `(seed, index)` on a dedicated stream per purpose.
fn stream(seed: u64, index: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_mul(4).wrapping_add(purpose));
    rng
}

/// Position-keyed uniform value in `[0, 1)`.
fn hash_unit(seed: u64, index: u64, x: usize, y: usize, c: usize) -> f64 {
    let mut z = seed
        ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ ((y as u64) << 40 | (x as u64) << 8 | c as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn layout(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Primitive> {
    let (h, w, p) = (cfg.height as f64, cfg.width as f64, cfg.pixel_pitch);
    let n = rng.gen_range(cfg.min_objects..=cfg.max_objects);
    let band = (cfg.depth_max - cfg.depth_min) / n as f64;
    let margin = BAND_MARGIN * band;
    // band 0 is the nearest; the background takes the farthest one
    let mut bands: Vec<usize> = (0..n - 1).collect();
    for i in (1..bands.len()).rev() {
        bands.swap(i, rng.gen_range(0..=i));
    }
    bands.insert(0, n - 1);

    let mut prims = Vec::with_capacity(n);
    for (label, &b) in bands.iter().enumerate() {
        let lo = cfg.depth_min + b as f64 * band + margin;
        let hi = cfg.depth_min + (b + 1) as f64 * band - margin;
        let kind = if label == 0 { 0 } else { rng.gen_range(1..3) };
        let mut gx = rng.gen_range(-0.8..0.8) * MAX_INTERIOR_SLOPE;
        let mut gy = rng.gen_range(-0.8..0.8) * MAX_INTERIOR_SLOPE;
        let (shape, cx, cy, half_x, half_y) = match kind {
            0 => (Shape::Background, w / 2.0, h / 2.0, w / 2.0, h / 2.0),
            1 => {
                let (rw, rh) = (rng.gen_range(w / 6.0..w / 2.0), rng.gen_range(h / 6.0..h / 2.0));
                let (cx, cy) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
                let s = Shape::Rect {
                    x0: (cx - rw / 2.0).round(),
                    x1: (cx + rw / 2.0).round(),
                    y0: (cy - rh / 2.0).round(),
                    y1: (cy + rh / 2.0).round(),
                };
                (s, cx, cy, rw / 2.0 + 1.0, rh / 2.0 + 1.0)
            }
            _ => {
                let rmax = (h.min(w) / 3.0).max(MIN_SPHERE_RADIUS);
                let r = rng.gen_range(MIN_SPHERE_RADIUS..=rmax);
                let (cx, cy) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
                (Shape::Cap { cx, cy, r }, cx, cy, 0.0, 0.0)
            }
        };
        let z0 = match shape {
            Shape::Cap { r, .. } => {
                // visible depth spans [z0 - R, z0 - R·sqrt(1 - clip²)]
                let rr = r * p;
                let span = rr * (1.0 - (1.0 - CAP_CLIP * CAP_CLIP).sqrt());
                let top = (hi - span).max(lo);
                rng.gen_range(lo..=top) + rr
            }
            _ => {
                // keep the plane inside its band over the region it covers
                let reach = (gx.abs() * half_x + gy.abs() * half_y) * p;
                let room = (hi - lo) / 2.0;
                if reach > room {
                    let f = room / reach;
                    gx *= f;
                    gy *= f;
                }
                let reach = (gx.abs() * half_x + gy.abs() * half_y) * p;
                let mid = (lo + hi) / 2.0;
                mid + rng.gen_range(-1.0..=1.0) * (room - reach).max(0.0)
            }
        };
        let color = [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)];
        prims.push(Primitive {
            shape,
            z0,
            gx,
            gy,
            cx,
            cy,
            label: label as u8,
            color,
            stripe_freq: rng.gen_range(0.2..0.45),
            stripe_dir: rng.gen_range(0.0..std::f64::consts::PI),
            stripe_phase: rng.gen_range(0.0..std::f64::consts::TAU),
        });
    }
    prims
}

/// Rasterized geometry: nearest primitive wins at each pixel.
struct Raster {
    depth: Vec<f64>,
    normal: Vec<[f64; 3]>,
    owner: Vec<usize>,
}

fn rasterize(cfg: &SynthConfig, prims: &[Primitive]) -> Raster {
    let (h, w) = (cfg.height, cfg.width);
    let mut r = Raster {
        depth: vec![f64::INFINITY; h * w],
        normal: vec![[0.0, 0.0, 1.0]; h * w],
        owner: vec![0; h * w],
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            for (k, prim) in prims.iter().enumerate() {
                if let Some((z, zx, zy)) = prim.sample(x as f64 + 0.5, y as f64 + 0.5, cfg.pixel_pitch) {
                    if z < r.depth[i] {
                        let n = (zx * zx + zy * zy + 1.0).sqrt();
                        r.depth[i] = z;
                        r.normal[i] = [-zx / n, -zy / n, 1.0 / n];
                        r.owner[i] = k;
                    }
                }
            }
        }
    }
    r
}

fn texture(cfg: &SynthConfig, index: u64, prims: &[Primitive], owner: &[usize]) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let mut rgb = vec![0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let prim = &prims[owner[i]];
            let (s, c) = prim.stripe_dir.sin_cos();
            let t = (x as f64 * c + y as f64 * s) * prim.stripe_freq * std::f64::consts::TAU + prim.stripe_phase;
            let stripe = t.sin();
            for ch in 0..3 {
                let noise = hash_unit(cfg.seed, index, x, y, ch) - 0.5;
                let v = prim.color[ch] + cfg.texture_amplitude * (0.7 * stripe + 0.6 * noise);
                rgb[ch * h * w + i] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    rgb
}

/// Bicubic downsampling by `s`, then Gaussian noise of `noise_std` on the
/// 0–255 scale of `[0, depth_max]`, clamped to `[depth_min, depth_max]`.
pub fn degrade<R: Rng>(
    d: &Tensor<f32>,
    s: usize,
    noise_std: f64,
    depth_range: (f64, f64),
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let (_, _, h, w) = d.dims4()?;
    let down = Resampler::<f32>::new(h, w, Resize::Down(s), Filter::Bicubic)?;
    let mut lr = down.forward(d)?;
    if noise_std > 0.0 {
        let std_cm = noise_std * depth_range.1 / 255.0;
        let normal = Normal::new(0.0, std_cm).map_err(|e| Error::InvalidConfig {
            field: "noise_std",
            reason: e.to_string(),
        })?;
        for v in lr.data_mut() {
            let n: f64 = normal.sample(rng);
            *v = (*v as f64 + n).clamp(depth_range.0, depth_range.1) as f32;
        }
    }
    Ok(lr)
}

/// Builds scene `index` of the family described by `cfg`.
pub fn generate_scene(cfg: &SynthConfig, index: u64) -> Result<Scene> {
    cfg.validate()?;
    let prims = layout(cfg, &mut stream(cfg.seed, index, 0));
    render(cfg, index, &prims)
}

fn render(cfg: &SynthConfig, index: u64, prims: &[Primitive]) -> Result<Scene> {
    let (h, w) = (cfg.height, cfg.width);
    let r = rasterize(cfg, prims);
    let labels: Vec<u8> = r.owner.iter().map(|&k| prims[k].label).collect();
    let denom = (cfg.max_objects.max(2) - 1) as f32;
    let depth_gt = Tensor::new(vec![1, 1, h, w], r.depth.iter().map(|&z| z as f32).collect())?;
    let mut normal = vec![0f32; 3 * h * w];
    for (i, n) in r.normal.iter().enumerate() {
        for c in 0..3 {
            normal[c * h * w + i] = n[c] as f32;
        }
    }
    let depth_lr = degrade(
        &depth_gt,
        cfg.scale,
        cfg.noise_std,
        (cfg.depth_min, cfg.depth_max),
        &mut stream(cfg.seed, index, 1),
    )?;
    Ok(Scene {
        index,
        rgb: Tensor::new(vec![1, 3, h, w], texture(cfg, index, prims, &r.owner))?,
        normal: Tensor::new(vec![1, 3, h, w], normal)?,
        semantic: Tensor::new(vec![1, 1, h, w], labels.iter().map(|&l| l as f32 / denom).collect())?,
        depth_gt,
        depth_lr,
        valid: vec![true; h * w],
        labels,
    })
}

/// A single tilted plane filling the image (`gx`, `gy` are `∂z/∂X`, `∂z/∂Y`).
pub fn plane_scene(cfg: &SynthConfig, index: u64, z_center: f64, gx: f64, gy: f64) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, index, 2);
    let prim = Primitive {
        shape: Shape::Background,
        z0: z_center,
        gx,
        gy,
        cx: cfg.width as f64 / 2.0,
        cy: cfg.height as f64 / 2.0,
        label: 0,
        color: [0.5, 0.5, 0.5],
        stripe_freq: rng.gen_range(0.2..0.45),
        stripe_dir: rng.gen_range(0.0..std::f64::consts::PI),
        stripe_phase: rng.gen_range(0.0..std::f64::consts::TAU),
    };
    render(cfg, index, &[prim])
}

/// A scene identifier: the generator index and the family seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneId {
    pub index: u64,
    pub seed: u64,
}

/// Train and validation scene lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<SceneId>,
    pub val: Vec<SceneId>,
}

/// Index offset of held-out test scenes, far from any train/val range.
pub const TEST_INDEX_OFFSET: u64 = 1 << 32;

/// Consecutive ranges: train `0..n_train`, validation after it.
pub fn make_split(cfg: &SynthConfig, n_train: usize, n_val: usize) -> Result<Split> {
    let (t, v) = (n_train as u64, n_val as u64);
    make_split_ranges(cfg, 0..t, t..t + v)
}

pub fn make_split_ranges(cfg: &SynthConfig, train: Range<u64>, val: Range<u64>) -> Result<Split> {
    if train.start < val.end && val.start < train.end && !train.is_empty() && !val.is_empty() {
        return Err(Error::OverlappingRanges(format!("train {train:?} and val {val:?}")));
    }
    let ids = |r: Range<u64>| r.map(|index| SceneId { index, seed: cfg.seed }).collect();
    Ok(Split {
        train: ids(train),
        val: ids(val),
    })
}

/// Test scene ids: `n` indices starting at [`TEST_INDEX_OFFSET`].
pub fn test_ids(cfg: &SynthConfig, n: usize) -> Vec<SceneId> {
    (0..n as u64)
        .map(|i| SceneId {
            index: TEST_INDEX_OFFSET + i,
            seed: cfg.seed,
        })
        .collect()
}

/// `index<TAB>seed` lines.
pub fn manifest_text(ids: &[SceneId]) -> String {
    let mut s = String::new();
    for id in ids {
        let _ = writeln!(s, "{}\t{}", id.index, id.seed);
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<SceneId>> {
    let mut offset = 0;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        let body = line.trim_end();
        if !body.is_empty() {
            let mut parts = body.split('\t');
            let parse = |p: Option<&str>| p.and_then(|v| v.trim().parse::<u64>().ok());
            match (parse(parts.next()), parse(parts.next()), parts.next()) {
                (Some(index), Some(seed), None) => out.push(SceneId { index, seed }),
                _ => {
                    return Err(Error::Format {
                        offset,
                        reason: format!("manifest line {body:?} is not index<TAB>seed"),
                    })
                }
            }
        }
        offset += line.len();
    }
    Ok(out)
}

/// Generates the scene behind `id` with `cfg`'s other settings.
pub fn scene_for(cfg: &SynthConfig, id: SceneId) -> Result<Scene> {
    let cfg = SynthConfig { seed: id.seed, ..cfg.clone() };
    generate_scene(&cfg, id.index)
}

/// Pixels whose 3×3 neighbourhood lies inside the image and has one label.
pub fn uniform_label_interior(labels: &[u8], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let l = labels[y * w + x];
            out[y * w + x] = (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| labels[yy * w + xx] == l));
        }
    }
    out
}
