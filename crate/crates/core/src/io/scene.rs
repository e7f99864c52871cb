//! Per-sample scene directories.
//!
//! ```text
//! <dir>/rgb.pfm  depth.pfm  normal.pfm  semantic.pfm  [depth_lr.pfm]  meta.txt
//! ```
//! `meta.txt` holds `key value` lines: `depth_unit` (cm, mm or m) is required;
//! `scale`, `index` and `label_levels` are optional.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::pfm::{load_pfm, save_pfm};
use crate::io::{read_text, write_text};
use crate::nn::resample::{bicubic_resize, Resize};
use crate::synth::Scene;
use crate::tensor::Tensor;

/// Largest accepted deviation of a normal from unit length; smaller
/// deviations are renormalized.
pub const NORMAL_TOLERANCE: f64 = 0.01;

/// Writes `scene` as a sample directory (`label_levels` is the number of
/// semantic levels, so labels can be recovered exactly).
pub fn write_scene(dir: impl AsRef<Path>, scene: &Scene, scale: usize, label_levels: usize) -> Result<()> {
    let d = dir.as_ref();
    save_pfm(d.join("rgb.pfm"), &scene.rgb)?;
    save_pfm(d.join("depth.pfm"), &scene.depth_gt)?;
    save_pfm(d.join("normal.pfm"), &scene.normal)?;
    save_pfm(d.join("semantic.pfm"), &scene.semantic)?;
    save_pfm(d.join("depth_lr.pfm"), &scene.depth_lr)?;
    write_text(
        d.join("meta.txt"),
        &format!(
            "depth_unit cm\nscale {scale}\nindex {}\nlabel_levels {label_levels}\n",
            scene.index
        ),
    )
}

fn reject(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingest {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn load_modality(dir: &Path, file: &str, channels: usize, hw: Option<(usize, usize)>) -> Result<Tensor<f32>> {
    let p = dir.join(file);
    if !p.exists() {
        return Err(reject(dir, format!("missing {file}")));
    }
    let t = load_pfm(&p)?;
    let (_, c, h, w) = t.dims4()?;
    if c != channels {
        return Err(reject(dir, format!("{file} has {c} channels, expected {channels}")));
    }
    if let Some(want) = hw {
        if (h, w) != want {
            return Err(reject(dir, format!("{file} is {h}x{w}, expected {}x{}", want.0, want.1)));
        }
    }
    Ok(t)
}

/// Reads one sample directory. `default_scale` is used when `meta.txt`
/// gives none and `depth_lr.pfm` must be derived.
pub fn ingest_sample(dir: impl AsRef<Path>, default_scale: usize) -> Result<Scene> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.txt");
    if !meta_path.exists() {
        return Err(reject(dir, "missing meta.txt"));
    }
    let meta = read_text(&meta_path)?;
    let (mut unit, mut scale, mut index, mut levels) = (None, default_scale, 0u64, None);
    for line in meta.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let mut kv = line.split_whitespace();
        let (k, v) = (kv.next().unwrap_or(""), kv.next().unwrap_or(""));
        let bad = || reject(dir, format!("bad meta line `{line}`"));
        match k {
            "depth_unit" => unit = Some(v.to_string()),
            "scale" => scale = v.parse().map_err(|_| bad())?,
            "index" => index = v.parse().map_err(|_| bad())?,
            "label_levels" => levels = Some(v.parse::<usize>().map_err(|_| bad())?),
            _ => {}
        }
    }
    let to_cm = match unit.as_deref() {
        Some("cm") => 1.0f32,
        Some("mm") => 0.1,
        Some("m") => 100.0,
        Some(u) => return Err(reject(dir, format!("unsupported depth unit `{u}`"))),
        None => return Err(reject(dir, "meta.txt declares no depth_unit")),
    };
    let mut depth = load_modality(dir, "depth.pfm", 1, None)?;
    let (_, _, h, w) = depth.dims4()?;
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(reject(dir, format!("{h}x{w} is not divisible by scale {scale}")));
    }
    let rgb = load_modality(dir, "rgb.pfm", 3, Some((h, w)))?;
    let mut normal = load_modality(dir, "normal.pfm", 3, Some((h, w)))?;
    let semantic = load_modality(dir, "semantic.pfm", 1, Some((h, w)))?;
    if to_cm != 1.0 {
        depth.data_mut().iter_mut().for_each(|v| *v *= to_cm);
    }
    if let Some((i, v)) = depth.first_non_finite() {
        return Err(reject(dir, format!("non-finite depth {v} at pixel {i}")));
    }
    let valid: Vec<bool> = depth.data().iter().map(|&v| v > 0.0).collect();
    if !valid.iter().any(|&q| q) {
        return Err(reject(dir, "no valid depth pixels"));
    }
    let n = h * w;
    let nd = normal.data_mut();
    for i in (0..n).filter(|&i| valid[i]) {
        let len = (0..3).map(|c| (nd[c * n + i] as f64).powi(2)).sum::<f64>().sqrt();
        let off = (len - 1.0).abs();
        if off > NORMAL_TOLERANCE || !len.is_finite() {
            return Err(reject(dir, format!("normal at pixel {i} has length {len:.4}")));
        }
        // leave already-unit normals bit-identical
        if off > 1e-6 {
            (0..3).for_each(|c| nd[c * n + i] = (nd[c * n + i] as f64 / len) as f32);
        }
    }
    let depth_lr = if dir.join("depth_lr.pfm").exists() {
        let mut lr = load_modality(dir, "depth_lr.pfm", 1, Some((h / scale, w / scale)))?;
        if to_cm != 1.0 {
            lr.data_mut().iter_mut().for_each(|v| *v *= to_cm);
        }
        lr
    } else {
        bicubic_resize(&depth, Resize::Down(scale))?
    };
    let levels = levels.unwrap_or(256).max(2);
    let labels = semantic
        .data()
        .iter()
        .map(|&s| (s as f64 * (levels - 1) as f64).round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok(Scene {
        index,
        rgb,
        depth_gt: depth,
        normal,
        semantic,
        depth_lr,
        valid,
        labels,
    })
}

/// Accepted scenes and per-sample rejections.
#[derive(Debug, Default)]
pub struct IngestReport {
    pub scenes: Vec<Scene>,
    pub rejected: Vec<(PathBuf, String)>,
}

impl IngestReport {
    pub fn summary(&self) -> String {
        let mut s = format!("ingested {} sample(s), rejected {}\n", self.scenes.len(), self.rejected.len());
        for (p, r) in &self.rejected {
            s += &format!("rejected {}: {r}\n", p.display());
        }
        s
    }
}

/// Ingests every subdirectory of `root` in name order.
pub fn ingest_dir(root: impl AsRef<Path>, default_scale: usize) -> Result<IngestReport> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut report = IngestReport::default();
    for d in dirs {
        match ingest_sample(&d, default_scale) {
            Ok(s) => report.scenes.push(s),
            Err(e) => {
                log::warn!("{e}");
                let reason = match e {
                    Error::Ingest { reason, .. } => reason,
                    other => other.to_string(),
                };
                report.rejected.push((d, reason));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SynthConfig};

    fn cfg() -> SynthConfig {
        SynthConfig {
            seed: 4,
            height: 32,
            width: 32,
            ..Default::default()
        }
    }

    fn export(root: &Path, n: u64) -> Vec<Scene> {
        let c = cfg();
        (0..n)
            .map(|i| {
                let s = generate_scene(&c, i).unwrap();
                write_scene(root.join(format!("{i:06}")), &s, c.scale, c.max_objects).unwrap();
                s
            })
            .collect()
    }

    fn same(a: &Scene, b: &Scene) {
        assert_eq!(a.index, b.index);
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth_gt, b.depth_gt);
        assert_eq!(a.normal, b.normal);
        assert_eq!(a.semantic, b.semantic);
        assert_eq!(a.depth_lr, b.depth_lr);
        assert_eq!(a.valid, b.valid);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn synthetic_exports_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let orig = export(dir.path(), 3);
        let rep = ingest_dir(dir.path(), 4).unwrap();
        assert!(rep.rejected.is_empty(), "{}", rep.summary());
        for (a, b) in orig.iter().zip(&rep.scenes) {
            same(a, b);
        }
    }

    #[test]
    fn missing_modality_is_reported_and_others_kept() {
        let dir = tempfile::tempdir().unwrap();
        export(dir.path(), 3);
        std::fs::remove_file(dir.path().join("000001/normal.pfm")).unwrap();
        let rep = ingest_dir(dir.path(), 4).unwrap();
        assert_eq!(rep.scenes.len(), 2);
        assert_eq!(rep.rejected.len(), 1);
        assert!(rep.rejected[0].0.ends_with("000001"));
        assert!(rep.rejected[0].1.contains("normal.pfm"));
    }

    #[test]
    fn zero_depth_pixels_leave_the_valid_set() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("s");
        let (h, w) = (10, 10);
        // 12 of 100 pixels carry no depth
        let depth = Tensor::<f32>::from_fn(vec![1, 1, h, w], |i| if i % 25 < 3 { 0.0 } else { 150.0 });
        let n = Tensor::<f32>::from_fn(vec![1, 3, h, w], |i| if i >= 2 * h * w { 1.0 } else { 0.0 });
        save_pfm(d.join("depth.pfm"), &depth).unwrap();
        save_pfm(d.join("rgb.pfm"), &Tensor::zeros(vec![1, 3, h, w])).unwrap();
        save_pfm(d.join("normal.pfm"), &n).unwrap();
        save_pfm(d.join("semantic.pfm"), &Tensor::zeros(vec![1, 1, h, w])).unwrap();
        write_text(d.join("meta.txt"), "depth_unit m\nscale 2\n").unwrap();
        let s = ingest_sample(&d, 4).unwrap();
        assert_eq!(s.valid.iter().filter(|&&q| q).count(), 88);
        assert_eq!(s.depth_gt.data()[3], 15000.0);
        assert_eq!(s.depth_lr.shape(), &[1, 1, 5, 5]);
    }

    #[test]
    fn normals_and_units_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("s");
        let (h, w) = (4, 4);
        save_pfm(d.join("depth.pfm"), &Tensor::full(vec![1, 1, h, w], 100.0)).unwrap();
        save_pfm(d.join("rgb.pfm"), &Tensor::zeros(vec![1, 3, h, w])).unwrap();
        save_pfm(d.join("semantic.pfm"), &Tensor::zeros(vec![1, 1, h, w])).unwrap();
        let normals = |z: f32| Tensor::<f32>::from_fn(vec![1, 3, h, w], move |i| if i >= 2 * h * w { z } else { 0.0 });
        save_pfm(d.join("normal.pfm"), &normals(1.005)).unwrap();
        write_text(d.join("meta.txt"), "depth_unit cm\nscale 2\n").unwrap();
        let s = ingest_sample(&d, 4).unwrap();
        assert_eq!(s.normal.data()[2 * h * w], 1.0);
        save_pfm(d.join("normal.pfm"), &normals(1.05)).unwrap();
        assert!(matches!(ingest_sample(&d, 4), Err(Error::Ingest { .. })));
        save_pfm(d.join("normal.pfm"), &normals(1.0)).unwrap();
        write_text(d.join("meta.txt"), "depth_unit ft\n").unwrap();
        assert!(ingest_sample(&d, 4).unwrap_err().to_string().contains("unit"));
        write_text(d.join("meta.txt"), "scale 2\n").unwrap();
        assert!(ingest_sample(&d, 4).is_err());
    }
}
