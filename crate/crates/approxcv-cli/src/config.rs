//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use approxcv::counterexamples::{build, Case};
use approxcv::cv::FoldKind;
use approxcv::dataset::Dataset;
use approxcv::error::{Error, Result};
use approxcv::model::{Link, Loss, Model, Reg};
use approxcv::solver::SolverConfig;
use approxcv::synthetic;
use approxcv::Method;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    pub lambda_grid: GridSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub folds: FoldSpec,
    #[serde(default)]
    pub solver: SolverOverrides,
    #[serde(default)]
    pub seed: u64,
}

fn default_methods() -> Vec<String> {
    vec!["cv".into(), "acv".into(), "acv_ij".into()]
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    /// Built-in adversarial instance.
    Builtin {
        case: String,
        n: usize,
        #[serde(default)]
        delta: Option<f64>,
    },
    /// Standard-normal logistic design with sparse ground truth.
    SyntheticLogistic {
        n: usize,
        d: usize,
        sparsity: usize,
        #[serde(default)]
        intercept: bool,
    },
    /// Numeric CSV, one row per point (label last for GLM losses).
    Csv { path: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub loss: LossSpec,
    pub reg: RegSpec,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    Quadratic {
        #[serde(default = "default_half")]
        scale: f64,
        #[serde(default)]
        diag_weight: Option<Vec<f64>>,
    },
    Logistic,
    Exponential,
}

fn default_half() -> f64 {
    0.5
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegSpec {
    Ridge {
        #[serde(default = "default_one")]
        scale: f64,
    },
    L1,
    ElasticNet {
        l1: f64,
        l2: f64,
    },
    PseudoHuber {
        delta: f64,
    },
    PatchedLasso {
        delta: f64,
    },
}

fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Log {
        log_min: f64,
        log_max: f64,
        count: usize,
    },
    Explicit {
        values: Vec<f64>,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FoldSpec {
    #[default]
    Loo,
    Kfold {
        k: usize,
    },
    LeavePairOut,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOverrides {
    pub tol_fit: Option<f64>,
    pub max_iter: Option<usize>,
    pub inner_tol: Option<f64>,
    pub inner_max_iter: Option<usize>,
    pub warm_start: Option<bool>,
    pub support_eps: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if grid.is_empty() {
            return Err(Error::InvalidConfig("lambda grid is empty".into()));
        }
        if grid.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig(
                "lambda grid must be sorted ascending".into(),
            ));
        }
        for m in &self.methods {
            parse_method(m)?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Vec<f64>> {
        match &self.lambda_grid {
            GridSpec::Log {
                log_min,
                log_max,
                count,
            } => {
                if *count < 1 || *log_min <= 0.0 || log_max < log_min {
                    return Err(Error::InvalidConfig(
                        "log grid requires 0 < log_min <= log_max and count >= 1".into(),
                    ));
                }
                let (a, b) = (log_min.log10(), log_max.log10());
                if *count == 1 {
                    return Ok(vec![*log_min]);
                }
                Ok((0..*count)
                    .map(|k| 10f64.powf(a + (b - a) * k as f64 / (*count - 1) as f64))
                    .collect())
            }
            GridSpec::Explicit { values } => Ok(values.clone()),
        }
    }

    pub fn fold_kind(&self) -> FoldKind {
        match self.folds {
            FoldSpec::Loo => FoldKind::LeaveOneOut,
            FoldSpec::Kfold { k } => FoldKind::KFold { k },
            FoldSpec::LeavePairOut => FoldKind::LeavePairOut,
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(v) = self.solver.tol_fit {
            cfg.tol_fit = v;
        }
        if let Some(v) = self.solver.max_iter {
            cfg.max_iter = v;
        }
        if let Some(v) = self.solver.inner_tol {
            cfg.inner_tol = v;
        }
        if let Some(v) = self.solver.inner_max_iter {
            cfg.inner_max_iter = v;
        }
        if let Some(v) = self.solver.warm_start {
            cfg.warm_start = v;
        }
        if let Some(v) = self.solver.support_eps {
            cfg.support_eps = v;
        }
        cfg
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        self.methods.iter().map(|m| parse_method(m)).collect()
    }

    /// Materialize the dataset and model. Built-in instances carry their own
    /// model; an explicit `model` section overrides it.
    pub fn instantiate(&self, seed_override: Option<u64>) -> Result<(Dataset, Model, String)> {
        let seed = seed_override.unwrap_or(self.seed);
        let (dataset, builtin_model, desc) = match &self.instance {
            InstanceSpec::Builtin { case, n, delta } => {
                let case = parse_case(case, *delta)?;
                let built = build(case, *n)?;
                (built.dataset, Some(built.model), built.description)
            }
            InstanceSpec::SyntheticLogistic {
                n,
                d,
                sparsity,
                intercept,
            } => {
                let n_features = if *intercept {
                    d.checked_sub(1).ok_or_else(|| {
                        Error::InvalidConfig("d must be >= 1 with an intercept".into())
                    })?
                } else {
                    *d
                };
                let ds = synthetic::logistic_dataset(*n, n_features, *sparsity, *intercept, seed)?;
                (
                    ds,
                    None,
                    format!("synthetic logistic n={n} d={d} sparsity={sparsity} seed={seed}"),
                )
            }
            InstanceSpec::Csv { path } => (
                Dataset::from_csv(path)?,
                None,
                format!("csv {}", path.display()),
            ),
        };
        let model = match (&self.model, builtin_model) {
            (Some(spec), _) => spec.build()?,
            (None, Some(m)) => m,
            (None, None) => {
                return Err(Error::InvalidConfig(
                    "a model section is required for non-builtin instances".into(),
                ))
            }
        };
        if let Loss::Glm {
            link: Link::Logistic,
        } = &model.loss
        {
            for i in 0..dataset.n() {
                let y = dataset.point(i)[dataset.dim() - 1];
                if y != 0.0 && y != 1.0 {
                    return Err(Error::InvalidConfig(format!(
                        "logistic labels must be 0/1; row {} has label {y}",
                        i + 1
                    )));
                }
            }
        }
        Ok((dataset, model, desc))
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<Model> {
        let loss = match &self.loss {
            LossSpec::Quadratic { scale, diag_weight } => Loss::Quadratic {
                scale: *scale,
                weight: diag_weight
                    .as_ref()
                    .map(|d| DMatrix::from_diagonal(&DVector::from_vec(d.clone()))),
            },
            LossSpec::Logistic => Loss::Glm {
                link: Link::Logistic,
            },
            LossSpec::Exponential => Loss::Glm {
                link: Link::Exponential,
            },
        };
        let reg = match &self.reg {
            RegSpec::Ridge { scale } => Reg::Ridge { scale: *scale },
            RegSpec::L1 => Reg::L1,
            RegSpec::ElasticNet { l1, l2 } => Reg::ElasticNet { l1: *l1, l2: *l2 },
            RegSpec::PseudoHuber { delta } => Reg::PseudoHuber { delta: *delta },
            RegSpec::PatchedLasso { delta } => Reg::PatchedLasso { delta: *delta },
        };
        Ok(Model::new(loss, reg))
    }
}

pub fn parse_case(name: &str, delta: Option<f64>) -> Result<Case> {
    match name {
        "prop5" => Ok(Case::Prop5),
        "prop6" => Ok(Case::Prop6 {
            delta: delta.unwrap_or(0.05),
        }),
        "prop7" => Ok(Case::Prop7),
        "fig1a" => Ok(Case::Fig1a),
        "fig1b" => Ok(Case::Fig1b),
        other => Err(Error::InvalidConfig(format!(
            "unknown counterexample case '{other}' (prop5|prop6|prop7|fig1a|fig1b)"
        ))),
    }
}

pub fn parse_method(name: &str) -> Result<Method> {
    match name {
        "cv" => Ok(Method::Cv),
        "acv" => Ok(Method::Acv),
        "acv_ij" => Ok(Method::AcvIj),
        "acv_p2" => Ok(Method::AcvP {
            p: 2,
            regularized: true,
        }),
        "acv_p3" => Ok(Method::AcvP {
            p: 3,
            regularized: true,
        }),
        "acv_p2_ho" => Ok(Method::AcvP {
            p: 2,
            regularized: false,
        }),
        "acv_p3_ho" => Ok(Method::AcvP {
            p: 3,
            regularized: false,
        }),
        "acv_sr" => Ok(Method::AcvSr),
        "acv_ij_sr" => Ok(Method::AcvIjSr),
        "proxacv" => Ok(Method::ProxAcv),
        "proxacv_ij" => Ok(Method::ProxAcvIj),
        "proxacv_p2" => Ok(Method::ProxAcvP {
            p: 2,
            regularized: true,
        }),
        "proxacv_p3" => Ok(Method::ProxAcvP {
            p: 3,
            regularized: true,
        }),
        "proxacv_p2_ho" => Ok(Method::ProxAcvP {
            p: 2,
            regularized: false,
        }),
        "proxacv_p3_ho" => Ok(Method::ProxAcvP {
            p: 3,
            regularized: false,
        }),
        other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
    }
}
