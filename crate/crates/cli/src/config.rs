//! Run configuration: a TOML file with (data, net, degrade, train, dlnet,
//! eval) sections, merged with command-line overrides and validated before
//! any work starts. The effective config is echoed into the run directory.

use serde::{Deserialize, Serialize};

use dln_core::degrade::{Kind, SpecRanges};
use dln_core::dlnet::{BiasCorrection, InnerHyper};
use dln_core::error::{Error, Result};
use dln_core::train::{Strategy, TrainCfg};

fn default_one() -> usize {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub net: NetSection,
    #[serde(default)]
    pub degrade: DegradeSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub dlnet: DlnetSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// "synthetic" or "directory"
    pub kind: String,
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub path: String,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { kind: "synthetic".into(), n: 2000, size: 32, seed: 7, path: String::new() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    /// "autoencoder" or "sisr"
    pub arch: String,
    pub base_ch: usize,
    pub depth: usize,
    pub seed: u64,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection { arch: "autoencoder".into(), base_ch: 6, depth: 6, seed: 1 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeSection {
    pub task: String,
    pub s_min: usize,
    pub s_max: usize,
    pub offset_max: i64,
    pub r_max: f64,
    pub u_max: f64,
    pub t: usize,
    pub sigma: f64,
    /// spec record for the reference strategy
    pub reference: String,
}

impl Default for DegradeSection {
    fn default() -> Self {
        DegradeSection {
            task: "inpaint".into(),
            s_min: 1,
            s_max: 12,
            offset_max: 10,
            r_max: 0.75,
            u_max: 3.0,
            t: 2,
            sigma: 0.0,
            reference: String::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub strategy: String,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr_drop_every: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// checkpoint to fine-tune from (empty = from scratch)
    pub init: String,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            strategy: "joint".into(),
            lambda: 1.0,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch: 25,
            epochs: 40,
            lr_drop_every: 100,
            lr_drop_factor: 10.0,
            seed: 0,
            init: String::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlnetSection {
    pub k: usize,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// "paper" (constant denominators) or "stepwise"
    pub bias_correction: String,
}

impl Default for DlnetSection {
    fn default() -> Self {
        DlnetSection { k: 5, gamma: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, bias_correction: "paper".into() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// validation pairs carved per epoch (0 disables validation)
    pub val_n: usize,
    pub val_seed: u64,
    #[serde(default = "default_one")]
    pub threads: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { val_n: 32, val_seed: 99, threads: 1 }
    }
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Parse(format!("config {}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn task(&self) -> Result<Kind> {
        Kind::parse(&self.degrade.task)
    }

    pub fn ranges(&self) -> SpecRanges {
        SpecRanges {
            s_min: self.degrade.s_min,
            s_max: self.degrade.s_max,
            offset_max: self.degrade.offset_max,
            r_max: self.degrade.r_max,
            u_max: self.degrade.u_max,
            t: self.degrade.t,
            sigma: self.degrade.sigma,
        }
    }

    pub fn inner_hyper(&self) -> Result<InnerHyper> {
        let bias_correction = match self.dlnet.bias_correction.as_str() {
            "paper" => BiasCorrection::PaperConstant,
            "stepwise" => BiasCorrection::StepwisePower,
            other => return Err(Error::invalid(format!("bias_correction '{}' (paper|stepwise)", other))),
        };
        let hyper = InnerHyper {
            k_steps: self.dlnet.k,
            gamma: self.dlnet.gamma,
            beta1: self.dlnet.beta1,
            beta2: self.dlnet.beta2,
            eps: self.dlnet.eps,
            bias_correction,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn strategy(&self) -> Result<Strategy> {
        Ok(match self.train.strategy.as_str() {
            "reference" => Strategy::Reference,
            "joint" => Strategy::Joint,
            "naive" => Strategy::Naive { lambda: self.train.lambda },
            "dlnet" => Strategy::DlNet { hyper: self.inner_hyper()? },
            other => {
                return Err(Error::invalid(format!(
                    "strategy '{}' (reference|joint|naive|dlnet)",
                    other
                )))
            }
        })
    }

    pub fn train_cfg(&self) -> Result<TrainCfg> {
        Ok(TrainCfg {
            strategy: self.strategy()?,
            task: self.task()?,
            ranges: self.ranges(),
            reference_record: if self.degrade.reference.is_empty() {
                None
            } else {
                Some(self.degrade.reference.clone())
            },
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            batch: self.train.batch,
            epochs: self.train.epochs,
            lr_drop: if self.train.lr_drop_every > 0 {
                Some((self.train.lr_drop_every, self.train.lr_drop_factor))
            } else {
                None
            },
            seed: self.train.seed,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::invalid("config name must be a non-empty path-safe string"));
        }
        match self.data.kind.as_str() {
            "synthetic" => {
                if ![16, 32, 64].contains(&self.data.size) {
                    return Err(Error::invalid("data.size must be 16, 32 or 64"));
                }
                if self.data.n == 0 {
                    return Err(Error::invalid("data.n must be >= 1"));
                }
            }
            "directory" => {
                if self.data.path.is_empty() {
                    return Err(Error::invalid("data.kind = directory needs data.path"));
                }
            }
            other => return Err(Error::invalid(format!("data.kind '{}' (synthetic|directory)", other))),
        }
        match self.net.arch.as_str() {
            "autoencoder" | "sisr" => {}
            other => return Err(Error::invalid(format!("net.arch '{}' (autoencoder|sisr)", other))),
        }
        self.task()?;
        self.strategy()?;
        self.inner_hyper()?;
        self.train_cfg()?;
        Ok(())
    }
}
