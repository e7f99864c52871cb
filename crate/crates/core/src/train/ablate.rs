//! Ablation suites: one training run per variant on shared data.

use serde::{Deserialize, Serialize};

use crate::embedding::MgfMode;
use crate::error::{Error, Result};
use crate::model::parse_order;
use crate::propagation::Modality;
use crate::synth::{make_split, test_ids, Scene, SynthConfig};
use crate::train::data::load_scenes;
use crate::train::eval::evaluate;
use crate::train::trainer::{train_on, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// RGB only, +normal, +semantic, +both.
    Priors,
    /// Filtering directions (a)-(f).
    Mgf,
    /// One to four stages.
    Stages,
    /// Every embedding order of the three priors.
    Order,
    /// Clean-trained vs noise-trained, both tested on noisy inputs.
    Noise,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Priors, Suite::Mgf, Suite::Stages, Suite::Order, Suite::Noise];

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "priors" => Suite::Priors,
            "mgf" => Suite::Mgf,
            "stages" => Suite::Stages,
            "order" => Suite::Order,
            "noise" => Suite::Noise,
            _ => {
                return Err(Error::Unknown {
                    kind: "suite",
                    name: s.into(),
                })
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Priors => "priors",
            Suite::Mgf => "mgf",
            Suite::Stages => "stages",
            Suite::Order => "order",
            Suite::Noise => "noise",
        }
    }
}

/// Noise level used by the noise suite when the base config is clean.
pub const DEFAULT_TEST_NOISE: f64 = 5.0;

/// Named variant configs of `suite` derived from `base`.
pub fn variants(base: &TrainConfig, suite: Suite) -> Vec<(String, TrainConfig)> {
    let with = |f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match suite {
        Suite::Priors => vec![
            ("rgb".into(), with(&|c| {
                c.model.use_normal = false;
                c.model.use_semantic = false;
            })),
            ("rgb+normal".into(), with(&|c| {
                c.model.use_normal = true;
                c.model.use_semantic = false;
            })),
            ("rgb+semantic".into(), with(&|c| {
                c.model.use_normal = false;
                c.model.use_semantic = true;
            })),
            ("rgb+normal+semantic".into(), with(&|c| {
                c.model.use_normal = true;
                c.model.use_semantic = true;
            })),
        ],
        Suite::Mgf => {
            let rows = [
                ("a:none", MgfMode::None, false),
                ("b:d2p", MgfMode::D2p, false),
                ("c:p2d", MgfMode::P2d, false),
                ("d:d2p>p2d", MgfMode::D2pThenP2d, false),
                ("e:p2d>d2p", MgfMode::P2dThenD2p, false),
                ("f:p2d>d2p+similarity", MgfMode::P2dThenD2p, true),
            ];
            rows.iter()
                .map(|&(n, mode, sim)| {
                    (n.to_string(), with(&|c| {
                        c.model.use_ope = true;
                        c.model.mgf_mode = mode;
                        c.model.similarity_guidance = sim;
                    }))
                })
                .collect()
        }
        Suite::Stages => (1..=4)
            .map(|i| (format!("app&ope-{i}"), with(&|c| c.model.stages = i)))
            .collect(),
        Suite::Order => ["nsr", "nrs", "snr", "srn", "rns", "rsn"]
            .iter()
            .map(|o| {
                let order: Vec<Modality> = parse_order(o).expect("static order");
                (o.to_string(), with(&|c| c.model.order = order.clone()))
            })
            .collect(),
        Suite::Noise => {
            let sigma = if base.synth.noise_std > 0.0 { base.synth.noise_std } else { DEFAULT_TEST_NOISE };
            vec![
                ("clean-trained".into(), with(&|c| c.synth.noise_std = 0.0)),
                ("noise-trained".into(), with(&|c| c.synth.noise_std = sigma)),
            ]
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub rmse_cm: f64,
    pub bicubic_rmse_cm: f64,
    pub best_val_rmse_cm: f64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub suite: Suite,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("suite,variant,rmse_cm,bicubic_rmse_cm,best_val_rmse_cm,params\n");
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{},{}\n",
                self.suite.name(),
                r.variant,
                r.rmse_cm,
                r.bicubic_rmse_cm,
                r.best_val_rmse_cm,
                r.params
            );
        }
        s
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        let mut s = format!(
            "{:<w$}  {:>10}  {:>10}  {:>10}  {:>8}\n",
            "variant", "rmse_cm", "bicubic", "best_val", "params"
        );
        for r in &self.rows {
            s += &format!(
                "{:<w$}  {:>10.4}  {:>10.4}  {:>10.4}  {:>8}\n",
                r.variant, r.rmse_cm, r.bicubic_rmse_cm, r.best_val_rmse_cm, r.params
            );
        }
        s
    }
}

/// Held-out scenes of `cfg`'s family.
pub fn test_scenes(cfg: &SynthConfig, n: usize) -> Result<Vec<Scene>> {
    load_scenes(cfg, &test_ids(cfg, n))
}

/// Trains every variant of `suite` with the base seed and budget and scores
/// the best-val checkpoint on `n_test` held-out scenes.
pub fn ablate(base: &TrainConfig, suite: Suite, n_test: usize) -> Result<AblationTable> {
    ablate_with(base, suite, n_test, |_, _| {})
}

/// [`ablate`] with a callback per finished row.
pub fn ablate_with(
    base: &TrainConfig,
    suite: Suite,
    n_test: usize,
    mut on_row: impl FnMut(&TrainConfig, &AblationRow),
) -> Result<AblationTable> {
    base.validate()?;
    let vars = variants(base, suite);
    // the noise suite tests everyone on the noisy family
    let test_synth = match suite {
        Suite::Noise => vars.last().map(|v| v.1.synth.clone()).unwrap_or_else(|| base.synth.clone()),
        _ => base.synth.clone(),
    };
    let test = test_scenes(&test_synth, n_test)?;
    let mut cache: Vec<(SynthConfig, Vec<Scene>, Vec<Scene>)> = Vec::new();
    let mut rows = Vec::new();
    for (name, cfg) in vars {
        cfg.validate()?;
        if !cache.iter().any(|c| c.0 == cfg.synth) {
            let split = make_split(&cfg.synth, cfg.n_train, cfg.n_val)?;
            cache.push((
                cfg.synth.clone(),
                load_scenes(&cfg.synth, &split.train)?,
                load_scenes(&cfg.synth, &split.val)?,
            ));
        }
        let (_, tr, va) = cache.iter().find(|c| c.0 == cfg.synth).expect("cached");
        log::info!("ablation {}: training {name}", suite.name());
        let out = train_on(&cfg, tr, va, |_| {})?.into_result()?;
        let model = out.best.model()?;
        let table = evaluate(&model, &test)?;
        let row = AblationRow {
            variant: name,
            rmse_cm: table.mean_rmse_cm,
            bicubic_rmse_cm: table.mean_bicubic_rmse_cm,
            best_val_rmse_cm: out.best.val_rmse_cm,
            params: model.count_params(),
        };
        on_row(&cfg, &row);
        rows.push(row);
    }
    Ok(AblationTable { suite, rows })
}
