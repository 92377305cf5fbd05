use std::path::{Path, PathBuf};

use neqfdt_core::junction::{FrequencyPropagators, JunctionParams};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub numerics: NumericsSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub junction: Option<JunctionSection>,
    pub generic: Option<GenericSection>,
}

/// Junction parameters. `gamma` may also be given as `gamma_1`/`gamma_2`, which must agree.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionSection {
    #[serde(default)]
    pub omega_g: f64,
    pub omega_1: f64,
    pub omega_2: f64,
    pub delta: f64,
    pub gamma: Option<f64>,
    pub gamma_1: Option<f64>,
    pub gamma_2: Option<f64>,
    #[serde(default = "default_mu_1")]
    pub mu_1: f64,
    #[serde(default = "default_mu_2")]
    pub mu_2: f64,
    pub temperature: Option<f64>,
    pub t_1: Option<f64>,
    pub t_2: Option<f64>,
    #[serde(default = "unit")]
    pub dipole: f64,
    #[serde(default)]
    pub coulomb_u: f64,
    #[serde(default = "yes")]
    pub strict_paper_rates: bool,
}

fn default_mu_1() -> f64 {
    JunctionParams::default().mu_1
}

fn default_mu_2() -> f64 {
    JunctionParams::default().mu_2
}

fn unit() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// A d-level system: diagonal energies, optional Hermitian couplings and
/// incoherent channels between pairs of levels.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericSection {
    pub labels: Option<Vec<String>>,
    pub energies: Vec<f64>,
    #[serde(default)]
    pub couplings: Vec<Coupling>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    /// Real symmetric probe operator; defaults to ones on every off-diagonal.
    pub dipole: Option<Vec<Vec<f64>>>,
    /// Bath temperature used by `fdr-check`.
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coupling {
    pub from: usize,
    pub to: usize,
    pub value: f64,
}

/// `rate_up` or `temperature` fixes the upward rate.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub lower: usize,
    pub upper: usize,
    pub rate_down: f64,
    pub rate_up: Option<f64>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub omega: OmegaGrid,
    #[serde(default = "unit")]
    pub bias_center: f64,
    #[serde(default)]
    pub delta_mu: Vec<f64>,
    #[serde(default)]
    pub chemical_potentials: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum OmegaGrid {
    Range { start: f64, stop: f64, points: usize },
    Values { values: Vec<f64> },
}

impl OmegaGrid {
    pub fn points(&self) -> Vec<f64> {
        match self {
            OmegaGrid::Range { start, stop, points } => match *points {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..n)
                    .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
                    .collect(),
            },
            OmegaGrid::Values { values } => values.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub directory: PathBuf,
    #[serde(default = "default_prefix")]
    pub prefix: String,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_prefix() -> String {
    "run".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            directory: default_dir(),
            prefix: default_prefix(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    #[serde(default)]
    pub propagators: FrequencyPropagators,
    #[serde(default = "default_fdr_tol")]
    pub fdr_tol: f64,
    #[serde(default = "default_invariant_tol")]
    pub invariant_tol: f64,
}

fn default_fdr_tol() -> f64 {
    1e-8
}

fn default_invariant_tol() -> f64 {
    1e-10
}

impl Default for NumericsSection {
    fn default() -> Self {
        Self {
            propagators: FrequencyPropagators::default(),
            fdr_tol: default_fdr_tol(),
            invariant_tol: default_invariant_tol(),
        }
    }
}

impl JunctionSection {
    pub fn params(&self) -> Result<JunctionParams, CliError> {
        let gamma = match (self.gamma, self.gamma_1, self.gamma_2) {
            (Some(g), None, None) => g,
            (None, Some(g1), Some(g2)) if g1 == g2 => g1,
            (None, Some(g1), Some(g2)) => {
                return Err(CliError::Config(format!(
                    "model.junction: unequal electrode couplings gamma_1 = {g1}, gamma_2 = {g2} are not supported"
                )))
            }
            _ => {
                return Err(CliError::Config(
                    "model.junction: give either `gamma` or both `gamma_1` and `gamma_2`".into(),
                ))
            }
        };
        let (t_1, t_2) = match (self.temperature, self.t_1, self.t_2) {
            (Some(t), None, None) => (t, t),
            (None, Some(a), Some(b)) => (a, b),
            _ => {
                return Err(CliError::Config(
                    "model.junction: give either `temperature` or both `t_1` and `t_2`".into(),
                ))
            }
        };
        Ok(JunctionParams {
            omega_g: self.omega_g,
            omega_1: self.omega_1,
            omega_2: self.omega_2,
            delta: self.delta,
            gamma,
            mu_1: self.mu_1,
            mu_2: self.mu_2,
            t_1,
            t_2,
            dipole: self.dipole,
            coulomb_u: self.coulomb_u,
            strict_paper_rates: self.strict_paper_rates,
        })
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.model.junction, &self.model.generic) {
            (Some(j), None) => j
                .params()?
                .validate()
                .map_err(|e| CliError::Config(format!("model.junction: {e}")))?,
            (None, Some(g)) => g.validate()?,
            _ => {
                return Err(CliError::Config(
                    "model: exactly one of [model.junction] or [model.generic] is required".into(),
                ))
            }
        }
        let grid = self.sweep.omega.points();
        if grid.is_empty() {
            return Err(CliError::Config("sweep.omega: frequency grid is empty".into()));
        }
        if let Some(w) = grid.iter().find(|w| !w.is_finite()) {
            return Err(CliError::Config(format!("sweep.omega: non-finite frequency {w}")));
        }
        let biases = self
            .sweep
            .delta_mu
            .iter()
            .chain(self.sweep.chemical_potentials.iter().flatten());
        if let Some(x) = biases.chain([&self.sweep.bias_center]).find(|x| !x.is_finite()) {
            return Err(CliError::Config(format!("sweep: non-finite bias {x}")));
        }
        if self.model.generic.is_some()
            && (!self.sweep.delta_mu.is_empty() || !self.sweep.chemical_potentials.is_empty())
        {
            return Err(CliError::Config(
                "sweep: delta_mu and chemical_potentials apply to junction models only".into(),
            ));
        }
        if self.output.prefix.is_empty() || self.output.prefix.contains(['/', '\\']) {
            return Err(CliError::Config(format!(
                "output.prefix: invalid prefix {:?}",
                self.output.prefix
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        self.sweep.omega.points()
    }
}

impl GenericSection {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let d = self.dim();
        let bad = |msg: String| Err(CliError::Config(format!("model.generic: {msg}")));
        if d < 2 {
            return bad(format!("need at least two levels, got {d}"));
        }
        if let Some(e) = self.energies.iter().find(|e| !e.is_finite()) {
            return bad(format!("non-finite energy {e}"));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != d {
                return bad(format!("{} labels for {d} levels", labels.len()));
            }
        }
        for (i, c) in self.couplings.iter().enumerate() {
            if c.from >= d || c.to >= d || c.from == c.to || !c.value.is_finite() {
                return bad(format!("couplings[{i}] is invalid"));
            }
        }
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.lower >= d || ch.upper >= d || ch.lower == ch.upper {
                return bad(format!("channels[{i}]: levels out of range"));
            }
            let rates = [Some(ch.rate_down), ch.rate_up];
            if rates.iter().flatten().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return bad(format!("channels[{i}]: rates must be finite and non-negative"));
            }
            if ch.temperature.is_some_and(|t| !(t > 0.0 && t.is_finite())) {
                return bad(format!("channels[{i}]: temperature must be positive"));
            }
            if ch.rate_up.is_some() == ch.temperature.is_some() {
                return bad(format!("channels[{i}]: give exactly one of rate_up or temperature"));
            }
        }
        if let Some(v) = &self.dipole {
            if v.len() != d || v.iter().any(|r| r.len() != d) {
                return bad(format!("dipole must be {d}x{d}"));
            }
        }
        Ok(())
    }
}
