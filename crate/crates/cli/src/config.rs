//! Experiment configuration: TOML with one section per concern, layered over
//! a named preset.

use std::path::PathBuf;

use num_complex::Complex64;
use rarpinn::net::{Activation, InputMap, NetworkShape};
use rarpinn::optim::{AdamConfig, LbfgsConfig};
use rarpinn::oracle::{GridSpec, OneSoliton, OneSolitonSpec, Oracle, TwoSoliton, TwoSolitonSpec};
use rarpinn::physics::{CGNLSCoefficients, LambdaVector};
use rarpinn::sampling::RARConfig;
use rarpinn::training::{BoundaryMode, SampleCounts};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    OneSoliton,
    TwoSolitonElastic,
    TwoSolitonInelastic,
    ThreeSolitonIngest,
}

impl Preset {
    pub const ALL: [Preset; 4] =
        [Preset::OneSoliton, Preset::TwoSolitonElastic, Preset::TwoSolitonInelastic, Preset::ThreeSolitonIngest];

    pub fn name(self) -> &'static str {
        match self {
            Preset::OneSoliton => "one-soliton",
            Preset::TwoSolitonElastic => "two-soliton-elastic",
            Preset::TwoSolitonInelastic => "two-soliton-inelastic",
            Preset::ThreeSolitonIngest => "three-soliton-ingest",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, CliError> {
        Self::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
            let known: Vec<_> = Self::ALL.iter().map(|p| p.name()).collect();
            CliError::Config(format!("unknown preset `{name}` (known: {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub x_min: f64,
    pub x_max: f64,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub nt: usize,
    /// Snapshot spacing quoted alongside the grid, if any; only used to flag
    /// disagreement with the spacing implied by nt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stated_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: String,
    /// Map the domain onto [-1, 1]^2 before the first layer.
    pub normalize_inputs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    OneSoliton,
    TwoSoliton,
    /// Reference fields come from `paths.dataset`.
    Dataset,
}

/// Complex numbers are written as `[re, im]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub kind: OracleKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<[f64; 2]>,
    /// ξ_m^(j) as [[ξ1⁽¹⁾, ξ1⁽²⁾], [ξ2⁽¹⁾, ξ2⁽²⁾]].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<[[[f64; 2]; 2]; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n0: usize,
    pub nb: usize,
    pub nf: usize,
    pub boundary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RarSection {
    pub m: usize,
    pub epsilon0: f64,
    pub max_rounds: usize,
    pub candidate_pool: usize,
    pub refit_iterations: usize,
    /// Baseline: no refinement, Nf enlarged by m * max_rounds.
    pub tpinn: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamSection {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfgsSection {
    pub memory: usize,
    pub grad_tol: f64,
    pub f_rel_tol: f64,
    pub max_iters: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseSection {
    pub n_u: usize,
    pub noise_level: f64,
    pub lambda_init: [f64; 4],
    pub truth: [f64; 4],
    /// Refine with samples from the unused part of the grid.
    pub refine: bool,
    pub m: usize,
    pub epsilon0: f64,
    pub max_rounds: usize,
    pub candidate_pool: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Reference dataset for ingest presets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Predicted fields for `evaluate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<PathBuf>,
    /// Reference fields for `evaluate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    pub seed: u64,
    pub domain: DomainSection,
    pub grid: GridSection,
    pub network: NetworkSection,
    pub oracle: OracleSection,
    pub sampling: SamplingSection,
    pub rar: RarSection,
    pub adam: AdamSection,
    pub lbfgs: LbfgsSection,
    pub inverse: InverseSection,
    #[serde(default)]
    pub paths: PathsSection,
}

fn c(v: [f64; 2]) -> Complex64 {
    Complex64::new(v[0], v[1])
}

impl ExperimentConfig {
    pub fn preset(p: Preset) -> Self {
        let adam = AdamConfig::default();
        let lbfgs = LbfgsConfig::default();
        let mut cfg = ExperimentConfig {
            preset: Some(p),
            seed: 1,
            domain: DomainSection { x_min: -10.0, x_max: 10.0, t_min: -2.0, t_max: 2.0 },
            grid: GridSection { nx: 300, nt: 201, stated_dt: Some(0.02) },
            network: NetworkSection {
                hidden_layers: 6,
                hidden_width: 32,
                activation: Activation::Tanh.name().into(),
                normalize_inputs: true,
            },
            oracle: OracleSection {
                kind: OracleKind::OneSoliton,
                alpha: 1.0,
                beta: 1.0,
                gamma: [1.0, 0.0],
                a: Some([1.0, 0.0]),
                b: Some([2.0, 0.0]),
                k: Some([1.5, 1.0]),
                k1: None,
                k2: None,
                xi: None,
            },
            sampling: SamplingSection { n0: 50, nb: 50, nf: 4000, boundary: BoundaryMode::Periodic.name().into() },
            rar: RarSection {
                m: 5,
                epsilon0: 0.01,
                max_rounds: 2,
                candidate_pool: 10_000,
                refit_iterations: 1000,
                tpinn: false,
            },
            adam: AdamSection {
                learning_rate: adam.learning_rate,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
                iterations: 10_000,
            },
            lbfgs: LbfgsSection {
                memory: lbfgs.memory,
                grad_tol: lbfgs.grad_tol,
                f_rel_tol: lbfgs.f_rel_tol,
                max_iters: 20_000,
                c1: lbfgs.c1,
                c2: lbfgs.c2,
                max_line_search: lbfgs.max_line_search,
            },
            inverse: InverseSection {
                n_u: 5000,
                noise_level: 0.0,
                lambda_init: [0.0; 4],
                truth: [1.0, 2.0, 1.0, 2.0],
                refine: true,
                m: 5,
                epsilon0: 0.15,
                max_rounds: 2,
                candidate_pool: 10_000,
            },
            paths: PathsSection::default(),
        };
        let two = |cfg: &mut ExperimentConfig| {
            cfg.oracle = OracleSection {
                kind: OracleKind::TwoSoliton,
                alpha: 2.0,
                beta: 2.0,
                gamma: [0.5, 0.5],
                a: None,
                b: None,
                k: None,
                k1: Some([1.0, 1.0]),
                k2: Some([2.0, -1.0]),
                xi: Some([[[1.0, 0.0]; 2]; 2]),
            };
        };
        match p {
            Preset::OneSoliton => {}
            Preset::TwoSolitonElastic => {
                two(&mut cfg);
                cfg.domain = DomainSection { x_min: -7.0, x_max: 7.0, t_min: -1.0, t_max: 1.0 };
                cfg.grid = GridSection { nx: 300, nt: 201, stated_dt: Some(0.01) };
                cfg.sampling.n0 = 100;
                cfg.sampling.nb = 100;
                cfg.rar.m = 3;
                cfg.rar.epsilon0 = 0.055;
                cfg.rar.max_rounds = 5;
            }
            Preset::TwoSolitonInelastic => {
                two(&mut cfg);
                if let Some(xi) = cfg.oracle.xi.as_mut() {
                    xi[1][0] = [39.0 / 89.0, 80.0 / 89.0];
                }
                cfg.domain = DomainSection { x_min: -4.0, x_max: 4.0, t_min: -0.3, t_max: 0.3 };
                cfg.grid = GridSection { nx: 400, nt: 301, stated_dt: None };
                cfg.sampling.n0 = 150;
                cfg.sampling.nb = 150;
                cfg.sampling.nf = 15_000;
                cfg.rar.m = 10;
                cfg.rar.epsilon0 = 0.13;
                cfg.rar.max_rounds = 10;
                cfg.adam.iterations = 20_000;
            }
            Preset::ThreeSolitonIngest => {
                two(&mut cfg);
                cfg.oracle = OracleSection { kind: OracleKind::Dataset, k1: None, k2: None, xi: None, ..cfg.oracle };
                cfg.domain = DomainSection { x_min: -6.0, x_max: 6.0, t_min: -0.8, t_max: 0.8 };
                cfg.grid = GridSection { nx: 400, nt: 301, stated_dt: Some(0.005) };
                cfg.sampling.n0 = 120;
                cfg.sampling.nb = 100;
                cfg.sampling.nf = 6000;
                cfg.rar.m = 3;
                cfg.rar.epsilon0 = 0.07;
                cfg.rar.max_rounds = 6;
                cfg.adam.iterations = 20_000;
            }
        }
        cfg
    }

    /// Parses TOML text layered over the preset it names (or `fallback`).
    pub fn from_toml(text: &str, fallback: Preset) -> Result<Self, CliError> {
        let overlay: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        let preset = match overlay.get("preset") {
            Some(toml::Value::String(s)) => Preset::from_name(s)?,
            Some(other) => return Err(CliError::Config(format!("config: `preset` must be a string, got {other}"))),
            None => fallback,
        };
        Self::layered(preset, overlay)
    }

    pub fn layered(preset: Preset, overlay: toml::Table) -> Result<Self, CliError> {
        let base = toml::Table::try_from(Self::preset(preset)).map_err(|e| CliError::Config(e.to_string()))?;
        let merged = merge(base, overlay);
        let text = toml::to_string(&merged).map_err(|e| CliError::Config(e.to_string()))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        let d = &self.domain;
        Ok(GridSpec::new(d.x_min, d.x_max, d.t_min, d.t_max, self.grid.nx, self.grid.nt)?)
    }

    /// Note on a grid whose snapshot spacing disagrees with the quoted one.
    pub fn grid_note(&self) -> Option<String> {
        let stated = self.grid.stated_dt?;
        let dt = (self.domain.t_max - self.domain.t_min) / (self.grid.nt as f64 - 1.0);
        ((dt - stated).abs() > 1e-9 * stated.abs().max(1.0)).then(|| {
            format!(
                "{} snapshots on [{}, {}] give dt = {dt}, not the quoted {stated}; the snapshot count is kept",
                self.grid.nt, self.domain.t_min, self.domain.t_max
            )
        })
    }

    pub fn coefficients(&self) -> CGNLSCoefficients {
        let o = &self.oracle;
        CGNLSCoefficients::new(o.alpha, o.beta, o.gamma[0], o.gamma[1])
    }

    /// Closed-form reference, or `None` for dataset-driven configs.
    pub fn oracle(&self) -> Result<Option<Oracle>, CliError> {
        let o = &self.oracle;
        let need = |v: Option<[f64; 2]>, name: &str| {
            v.map(c).ok_or_else(|| CliError::Config(format!("config: oracle.{name} is required for {:?}", o.kind)))
        };
        let coeffs = self.coefficients();
        Ok(match o.kind {
            OracleKind::Dataset => None,
            OracleKind::OneSoliton => Some(Oracle::One(OneSoliton::new(OneSolitonSpec {
                a: need(o.a, "a")?,
                b: need(o.b, "b")?,
                k: need(o.k, "k")?,
                coeffs,
            })?)),
            OracleKind::TwoSoliton => {
                let xi =
                    o.xi.ok_or_else(|| CliError::Config("config: oracle.xi is required for two-soliton".into()))?;
                Some(Oracle::Two(TwoSoliton::new(TwoSolitonSpec {
                    k1: need(o.k1, "k1")?,
                    k2: need(o.k2, "k2")?,
                    xi: xi.map(|row| row.map(c)),
                    coeffs,
                })?))
            }
        })
    }

    pub fn shape(&self) -> Result<NetworkShape, CliError> {
        let act = Activation::from_name(&self.network.activation)
            .ok_or_else(|| CliError::Config(format!("config: unknown activation `{}`", self.network.activation)))?;
        let mut shape =
            NetworkShape::new(self.network.hidden_layers, self.network.hidden_width, 4)?.with_activation(act);
        if self.network.normalize_inputs {
            let d = &self.domain;
            shape = shape.with_input_map(InputMap::unit_box(d.x_min, d.x_max, d.t_min, d.t_max));
        }
        Ok(shape)
    }

    pub fn counts(&self) -> SampleCounts {
        SampleCounts { n0: self.sampling.n0, nb: self.sampling.nb, nf: self.sampling.nf }
    }

    pub fn boundary(&self) -> Result<BoundaryMode, CliError> {
        BoundaryMode::from_name(&self.sampling.boundary).ok_or_else(|| {
            CliError::Config(format!(
                "config: sampling.boundary must be `periodic` or `supervised`, got `{}`",
                self.sampling.boundary
            ))
        })
    }

    pub fn rar(&self) -> RARConfig {
        RARConfig {
            m: self.rar.m,
            epsilon0: self.rar.epsilon0,
            max_rounds: self.rar.max_rounds,
            candidate_pool: self.rar.candidate_pool,
        }
    }

    pub fn inverse_rar(&self) -> Option<RARConfig> {
        let i = &self.inverse;
        i.refine.then_some(RARConfig {
            m: i.m,
            epsilon0: i.epsilon0,
            max_rounds: i.max_rounds,
            candidate_pool: i.candidate_pool,
        })
    }

    pub fn adam(&self) -> AdamConfig {
        let a = &self.adam;
        AdamConfig {
            learning_rate: a.learning_rate,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            iterations: a.iterations,
        }
    }

    pub fn lbfgs(&self) -> LbfgsConfig {
        let l = &self.lbfgs;
        LbfgsConfig {
            memory: l.memory,
            grad_tol: l.grad_tol,
            f_rel_tol: l.f_rel_tol,
            max_iters: l.max_iters,
            c1: l.c1,
            c2: l.c2,
            max_line_search: l.max_line_search,
        }
    }

    pub fn lambda_init(&self) -> LambdaVector {
        LambdaVector::from_slice(&self.inverse.lambda_init)
    }

    pub fn truth(&self) -> LambdaVector {
        LambdaVector::from_slice(&self.inverse.truth)
    }
}

/// Recursive table merge; `top` wins.
fn merge(mut base: toml::Table, top: toml::Table) -> toml::Table {
    for (k, v) in top {
        match (base.remove(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => {
                base.insert(k, toml::Value::Table(merge(b, t)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for p in Preset::ALL {
            let cfg = ExperimentConfig::preset(p);
            let back = ExperimentConfig::from_toml(&cfg.to_toml(), Preset::OneSoliton).unwrap();
            assert_eq!(back, cfg, "{}", p.name());
        }
    }

    #[test]
    fn overlay_replaces_only_given_keys() {
        let cfg = ExperimentConfig::from_toml(
            "preset = \"two-soliton-elastic\"\nseed = 9\n[rar]\nmax_rounds = 0\n[adam]\niterations = 12\n",
            Preset::OneSoliton,
        )
        .unwrap();
        assert_eq!(cfg.preset, Some(Preset::TwoSolitonElastic));
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.rar.max_rounds, 0);
        assert_eq!(cfg.rar.m, 3);
        assert_eq!(cfg.adam.iterations, 12);
        assert_eq!(cfg.adam.learning_rate, 1e-3);
        assert_eq!(cfg.domain.x_max, 7.0);
    }

    #[test]
    fn errors_carry_location() {
        let e = ExperimentConfig::from_toml("[rar]\nm = \"five\"\n", Preset::OneSoliton).unwrap_err();
        assert!(e.to_string().contains("rar") || e.to_string().contains("m"), "{e}");
        let e = ExperimentConfig::from_toml("[adam]\nlearning_rat = 1.0\n", Preset::OneSoliton).unwrap_err();
        assert!(e.to_string().contains("learning_rat"), "{e}");
        let e = ExperimentConfig::from_toml("seed = \n", Preset::OneSoliton).unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
        assert!(ExperimentConfig::from_toml("preset = \"nope\"", Preset::OneSoliton).is_err());
    }

    #[test]
    fn oracles_and_grid_notes() {
        let one = ExperimentConfig::preset(Preset::OneSoliton);
        assert!(matches!(one.oracle().unwrap(), Some(Oracle::One(_))));
        assert_eq!(one.grid_note(), None);
        assert!(matches!(
            ExperimentConfig::preset(Preset::TwoSolitonInelastic).oracle().unwrap(),
            Some(Oracle::Two(_))
        ));
        let three = ExperimentConfig::preset(Preset::ThreeSolitonIngest);
        assert!(three.oracle().unwrap().is_none());
        assert!(three.grid_note().unwrap().contains("0.005"));
        let s = one.shape().unwrap();
        assert_eq!(s.input_map.apply(rarpinn::net::Point::new(10.0, -2.0)), [1.0, -1.0]);
    }
}
