//! Command-line front end.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::embedding::summarize_gradients;
use crate::error::{Error, Result};
use crate::io::checkpoint::{load_checkpoint, save_checkpoint};
use crate::io::scene::{ingest_sample, write_scene};
use crate::io::spft::Container;
use crate::io::{read_text, save_pfm, write_text};
use crate::model::{parse_order, Model, Variant};
use crate::propagation::Modality;
use crate::synth::{make_split, manifest_text, parse_manifest, scene_for, test_ids, Scene, SceneId};
use crate::tensor::Tensor;
use crate::train::ablate::{ablate_with, test_scenes, Suite};
use crate::train::data::load_scenes;
use crate::train::diagnostics::scene_kernels;
use crate::train::eval::{evaluate, predict_scene};
use crate::train::{train_on, TrainConfig, TrainLog};
use crate::verify::{gradcheck_suite, max_error, GRADCHECK_TOLERANCE};

#[derive(Debug, Parser)]
#[command(name = "spfnet", version, about = "Guided depth super-resolution with scene priors")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for scenes, weights and batch order.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Upsampling factor.
    #[arg(long, global = true)]
    pub scale: Option<usize>,
    /// spfnet or spfnet-t.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    #[arg(long, global = true)]
    pub stages: Option<usize>,
    /// Embedding order, e.g. `nsr`.
    #[arg(long, global = true)]
    pub order: Option<String>,
    /// LR depth noise on the 0-255 scale.
    #[arg(long, global = true)]
    pub noise_std: Option<f64>,
    /// JSON training config; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Single-threaded numerics.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Args, Default)]
pub struct TrainOpts {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub crop: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    /// Scene height and width.
    #[arg(long)]
    pub size: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenes and split manifests.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Training scenes.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        val: Option<usize>,
        #[arg(long, default_value_t = 40)]
        test: usize,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train and write checkpoints and the epoch log.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Directory written by `synth`; scenes are generated in memory otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Per-scene RMSE of a checkpoint on held-out scenes.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 40)]
        n_test: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write |pred - gt| maps.
        #[arg(long)]
        error_maps: bool,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Super-resolve one sample directory.
    Infer {
        /// Untrained model from the config when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per variant of a suite and tabulate held-out RMSE.
    Ablate {
        /// priors, mgf, stages, order or noise.
        #[arg(long)]
        suite: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        n_test: usize,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Kernel fields and their gradient histograms on held-out scenes.
    InspectKernels {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        n_test: usize,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Finite-difference check of every differentiable operation.
    Gradcheck,
}

/// Exit status of a finished command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Ran, but the checked property does not hold.
    Failed,
}

fn model_flags_given(c: &Common) -> bool {
    c.config.is_some() || c.variant.is_some() || c.stages.is_some() || c.order.is_some() || c.scale.is_some()
}

/// Base config from `--config` with the common flags applied.
pub fn resolve_config(c: &Common, opts: Option<&TrainOpts>, size: Option<usize>) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &c.config {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = &c.variant {
        let v = Variant::parse(v).ok_or_else(|| Error::Unknown {
            kind: "variant",
            name: v.clone(),
        })?;
        cfg.model.variant = v;
        cfg.model.channels = v.channels();
    }
    if let Some(s) = c.scale {
        cfg.model.scale = s;
        cfg.synth.scale = s;
    }
    if let Some(s) = c.stages {
        cfg.model.stages = s;
    }
    if let Some(o) = &c.order {
        cfg.model.order = parse_order(o)?;
    }
    if let Some(n) = c.noise_std {
        cfg.synth.noise_std = n;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(o) = opts {
        cfg.epochs = o.epochs.unwrap_or(cfg.epochs);
        cfg.lr = o.lr.unwrap_or(cfg.lr);
        cfg.batch = o.batch.unwrap_or(cfg.batch);
        cfg.crop = o.crop.unwrap_or(cfg.crop);
        cfg.n_train = o.n_train.unwrap_or(cfg.n_train);
        cfg.n_val = o.n_val.unwrap_or(cfg.n_val);
    }
    if let Some(s) = size.or(opts.and_then(|o| o.size)) {
        cfg.synth.height = s;
        cfg.synth.width = s;
    }
    Ok(cfg)
}

fn scene_dir(root: &Path, id: SceneId) -> PathBuf {
    root.join("scenes").join(format!("{}-{}", id.seed, id.index))
}

fn load_split(data: &Path, name: &str, scale: usize) -> Result<Vec<Scene>> {
    let ids = parse_manifest(&read_text(data.join(format!("{name}.txt")))?)?;
    ids.iter().map(|&id| ingest_sample(scene_dir(data, id), scale)).collect()
}

fn cmd_synth(cfg: &TrainConfig, out: &Path, count: Option<usize>, val: Option<usize>, test: usize) -> Result<()> {
    let synth = &cfg.synth;
    let split = make_split(synth, count.unwrap_or(cfg.n_train), val.unwrap_or(cfg.n_val))?;
    let tests = test_ids(synth, test);
    write_text(out.join("synth.json"), &serde_json::to_string_pretty(synth)?)?;
    for (name, ids) in [("train", &split.train), ("val", &split.val), ("test", &tests)] {
        write_text(out.join(format!("{name}.txt")), &manifest_text(ids))?;
        for &id in ids.iter() {
            write_scene(scene_dir(out, id), &scene_for(synth, id)?, synth.scale, synth.max_objects)?;
        }
    }
    println!(
        "wrote {} train, {} val, {} test scenes to {}",
        split.train.len(),
        split.val.len(),
        tests.len(),
        out.display()
    );
    Ok(())
}

fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

fn cmd_train(cfg: &TrainConfig, out: &Path, data: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let (tr, va) = match data {
        Some(d) => (load_split(d, "train", cfg.model.scale)?, load_split(d, "val", cfg.model.scale)?),
        None => {
            let split = make_split(&cfg.synth, cfg.n_train, cfg.n_val)?;
            (load_scenes(&cfg.synth, &split.train)?, load_scenes(&cfg.synth, &split.val)?)
        }
    };
    write_text(out.join("train_config.json"), &serde_json::to_string_pretty(cfg)?)?;
    let log_path = out.join("log.csv");
    write_text(&log_path, &format!("{}\n", TrainLog::HEADER))?;
    let mut io_err = None;
    let outcome = train_on(cfg, &tr, &va, |r| {
        if let Err(e) = append_line(&log_path, &TrainLog::row(r)) {
            io_err.get_or_insert(e);
        }
        println!("epoch {} train_l1 {:.4} val_rmse_cm {:.4}", r.epoch, r.train_l1, r.val_rmse_cm);
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    save_checkpoint(out.join("best.spft"), &outcome.best)?;
    save_checkpoint(out.join("last.spft"), &outcome.last)?;
    println!("best val_rmse_cm {} at epoch {}", outcome.best.val_rmse_cm, outcome.best.epoch);
    outcome.into_result().map(|_| ())
}

fn held_out(cfg: &TrainConfig, data: Option<&Path>, n: usize, scale: usize) -> Result<Vec<Scene>> {
    match data {
        Some(d) => load_split(d, "test", scale),
        None => test_scenes(&cfg.synth, n),
    }
}

fn cmd_eval(
    common: &Common,
    cfg: &TrainConfig,
    ck_path: &Path,
    data: Option<&Path>,
    n_test: usize,
    out: Option<&Path>,
    error_maps: bool,
) -> Result<()> {
    let expect = model_flags_given(common).then_some(&cfg.model);
    let ck = load_checkpoint(ck_path, expect)?;
    let model = ck.model()?;
    let mut synth = cfg.synth.clone();
    synth.scale = model.config.scale;
    let scenes = held_out(&TrainConfig { synth, ..cfg.clone() }, data, n_test, model.config.scale)?;
    let table = evaluate(&model, &scenes)?;
    let csv = table.to_csv();
    match out {
        Some(o) => {
            write_text(o.join("metrics.csv"), &csv)?;
            if error_maps {
                for s in &scenes {
                    let (pred, _, _) = predict_scene(&model, s)?;
                    save_pfm(o.join(format!("error_{}.pfm", s.index)), &error_map(&pred, s))?;
                }
            }
        }
        None => print!("{csv}"),
    }
    println!(
        "mean_rmse_cm {} bicubic_rmse_cm {} ratio {:.4}",
        table.mean_rmse_cm,
        table.mean_bicubic_rmse_cm,
        table.ratio()
    );
    Ok(())
}

fn error_map(pred: &Tensor<f32>, s: &Scene) -> Tensor<f32> {
    let mut e = pred.clone();
    for ((v, &g), &q) in e.data_mut().iter_mut().zip(s.depth_gt.data()).zip(&s.valid) {
        *v = if q { (*v - g).abs() } else { 0.0 };
    }
    e
}

fn cmd_infer(cfg: &TrainConfig, ck: Option<&Path>, input: &Path, out: &Path) -> Result<()> {
    let model = match ck {
        Some(p) => load_checkpoint(p, None)?.model()?,
        None => Model::<f32>::build(&cfg.model, cfg.seed)?,
    };
    let scene = ingest_sample(input, model.config.scale)?;
    let (pred, bicubic, _) = predict_scene(&model, &scene)?;
    save_pfm(out.join("depth_hr.pfm"), &pred)?;
    save_pfm(out.join("bicubic.pfm"), &bicubic)?;
    save_pfm(out.join("error.pfm"), &error_map(&pred, &scene))?;
    println!("max_abs_diff_vs_bicubic {}", pred.max_abs_diff(&bicubic));
    Ok(())
}

fn cmd_ablate(cfg: &TrainConfig, suite: &str, out: &Path, n_test: usize) -> Result<()> {
    let suite = Suite::parse(suite)?;
    let table = ablate_with(cfg, suite, n_test, |_, r| {
        println!("{} rmse_cm {:.4} best_val {:.4}", r.variant, r.rmse_cm, r.best_val_rmse_cm);
    })?;
    write_text(out.join(format!("ablate_{}.csv", suite.name())), &table.to_csv())?;
    write_text(out.join(format!("ablate_{}.txt", suite.name())), &table.to_text())?;
    print!("{}", table.to_text());
    Ok(())
}

/// Fraction of scenes on which normal and semantic kernel fields vary no
/// more than RGB kernel fields.
fn cmd_inspect(cfg: &TrainConfig, ck: &Path, out: &Path, n_test: usize) -> Result<()> {
    let model = load_checkpoint(ck, None)?.model()?;
    let mut synth = cfg.synth.clone();
    synth.scale = model.config.scale;
    let scenes = test_scenes(&synth, n_test)?;
    let mut means = String::from("index,normal,semantic,rgb,pass\n");
    let mut pooled: Vec<(Modality, Vec<f64>)> = Vec::new();
    let (mut pass, mut counted) = (0usize, 0usize);
    for s in &scenes {
        let (report, fields, samples) = scene_kernels(&model, s)?;
        let mut c = Container::new();
        for (m, stage, k) in &fields {
            c.insert_f32(format!("{}/stage{stage}", m.name()), k)?;
        }
        c.save(out.join("kernels").join(format!("{}.spft", s.index)))?;
        for (m, g) in samples {
            match pooled.iter_mut().find(|x| x.0 == m) {
                Some(e) => e.1.extend(g),
                None => pooled.push((m, g)),
            }
        }
        let v = |m| report.mean(m).map_or(String::new(), |x| x.to_string());
        let ok = report.priors_smoother_than_rgb();
        if let Some(ok) = ok {
            counted += 1;
            pass += usize::from(ok);
        }
        means += &format!(
            "{},{},{},{},{}\n",
            s.index,
            v(Modality::Normal),
            v(Modality::Semantic),
            v(Modality::Rgb),
            ok.map_or("", |b| if b { "1" } else { "0" })
        );
    }
    let mut hist = String::from("modality,bin_center,mass\n");
    let mut stats = String::from("modality,mean,variance,count\n");
    for (m, g) in &pooled {
        let st = summarize_gradients(g);
        for (c, h) in st.bin_centers.iter().zip(&st.hist) {
            hist += &format!("{},{c},{h}\n", m.name());
        }
        stats += &format!("{},{},{},{}\n", m.name(), st.mean, st.variance, st.count);
    }
    write_text(out.join("kernel_means.csv"), &means)?;
    write_text(out.join("kernel_hist.csv"), &hist)?;
    write_text(out.join("kernel_stats.csv"), &stats)?;
    print!("{stats}");
    let frac = if counted == 0 { 0.0 } else { pass as f64 / counted as f64 };
    println!("smoother_fraction {frac:.4} ({pass}/{counted})");
    Ok(())
}

fn cmd_gradcheck() -> Result<Status> {
    let results = gradcheck_suite(|r| println!("{:<24} {:.3e} ({} coords)", r.name, r.max_rel_error, r.checked))?;
    let max = max_error(&results);
    println!("max_rel_error {max:.3e}");
    Ok(if max < GRADCHECK_TOLERANCE { Status::Ok } else { Status::Failed })
}

/// Runs a parsed command.
pub fn execute(cli: &Cli) -> Result<Status> {
    let c = &cli.common;
    if c.deterministic {
        log::info!("deterministic mode: single-threaded numerics, fixed reduction order");
    }
    match &cli.command {
        Command::Synth {
            out,
            count,
            val,
            test,
            size,
        } => cmd_synth(&resolve_config(c, None, *size)?, out, *count, *val, *test)?,
        Command::Train { out, data, opts } => cmd_train(&resolve_config(c, Some(opts), None)?, out, data.as_deref())?,
        Command::Eval {
            checkpoint,
            data,
            n_test,
            out,
            error_maps,
            size,
        } => cmd_eval(
            c,
            &resolve_config(c, None, *size)?,
            checkpoint,
            data.as_deref(),
            *n_test,
            out.as_deref(),
            *error_maps,
        )?,
        Command::Infer { checkpoint, input, out } => {
            cmd_infer(&resolve_config(c, None, None)?, checkpoint.as_deref(), input, out)?
        }
        Command::Ablate {
            suite,
            out,
            n_test,
            opts,
        } => cmd_ablate(&resolve_config(c, Some(opts), None)?, suite, out, *n_test)?,
        Command::InspectKernels {
            checkpoint,
            out,
            n_test,
            size,
        } => cmd_inspect(&resolve_config(c, None, *size)?, checkpoint, out, *n_test)?,
        Command::Gradcheck => return cmd_gradcheck(),
    }
    Ok(Status::Ok)
}

/// Parses `args` and runs; returns the process exit code
/// (0 success, 1 failure, 2 usage error).
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(Status::Ok) => 0,
        Ok(Status::Failed) => 1,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), e.to_string().replace('\n', " "));
            1
        }
    }
}

