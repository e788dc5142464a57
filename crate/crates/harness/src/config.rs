//! Experiment configuration: a TOML file with a `[common]` table and one
//! table per command, plus `key=value` overrides from the command line.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use dispersal_core::ecology::{construct_alpha_with, AlphaOptions, DispersalProfile, ProfileShape};
use dispersal_core::grid::{ScalarField, SpatialGrid, TraitGrid};
use dispersal_core::hj::HjScheme;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Theta,
    LambdaSurface,
    AlphaBuild,
    CheckH1,
    FloquetTest,
    Hj,
    LaxOleinik,
    Pde,
    Converge,
    Pipeline,
}

impl Command {
    pub const ALL: [Command; 10] = [
        Command::Theta,
        Command::LambdaSurface,
        Command::AlphaBuild,
        Command::CheckH1,
        Command::FloquetTest,
        Command::Hj,
        Command::LaxOleinik,
        Command::Pde,
        Command::Converge,
        Command::Pipeline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Theta => "theta",
            Command::LambdaSurface => "lambda-surface",
            Command::AlphaBuild => "alpha-build",
            Command::CheckH1 => "check-h1",
            Command::FloquetTest => "floquet-test",
            Command::Hj => "hj",
            Command::LaxOleinik => "lax-oleinik",
            Command::Pde => "pde",
            Command::Converge => "converge",
            Command::Pipeline => "pipeline",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| HarnessError::config(format!("unknown command `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// The explicit U-shaped profile built from the invasion-exponent probe.
    LogCosine,
    Quadratic,
    Affine,
    Constant,
}

/// Keys shared by every command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Common {
    pub n_x: usize,
    pub n_z: usize,
    /// Resource `m(x) = m_base + m_amp cos(pi x)`.
    pub m_base: f64,
    pub m_amp: f64,
    pub profile: ProfileKind,
    pub alpha0: f64,
    pub l0: f64,
    pub probe_samples: usize,
    pub profile_curvature: f64,
    pub profile_center: f64,
    pub profile_at_a: f64,
    pub profile_at_b: f64,
}

impl Default for Common {
    fn default() -> Self {
        Self {
            n_x: 64,
            n_z: 128,
            m_base: 1.0,
            m_amp: 0.5,
            profile: ProfileKind::LogCosine,
            alpha0: 0.5,
            l0: 0.5,
            probe_samples: 17,
            profile_curvature: 1.0,
            profile_center: 0.0,
            profile_at_a: 0.5,
            profile_at_b: 1.0,
        }
    }
}

pub const COMMON_KEYS: [&str; 12] = [
    "n_x",
    "n_z",
    "m_base",
    "m_amp",
    "profile",
    "alpha0",
    "l0",
    "probe_samples",
    "profile_curvature",
    "profile_center",
    "profile_at_a",
    "profile_at_b",
];

impl Common {
    pub fn spatial(&self) -> Result<SpatialGrid> {
        Ok(SpatialGrid::new(self.n_x)?)
    }

    pub fn traits(&self) -> Result<TraitGrid> {
        Ok(TraitGrid::centered(self.n_z)?)
    }

    pub fn resource(&self) -> Result<ScalarField> {
        let grid = self.spatial()?;
        let m = dispersal_core::ecology::cosine_resource(grid, self.m_base, self.m_amp);
        if m.min() <= 0.0 {
            return Err(HarnessError::config(
                "resource must be positive: need m_base > |m_amp|",
            ));
        }
        Ok(m)
    }

    /// The dispersal profile on `[-0.5, 0.5]`, and the probe value of the
    /// curvature ratio when the profile is built from it.
    pub fn profile(
        &self,
    ) -> Result<(
        DispersalProfile,
        Option<dispersal_core::ecology::AlphaBuild>,
    )> {
        let (a, b) = (-0.5, 0.5);
        let shape = match self.profile {
            ProfileKind::LogCosine => {
                let opts = AlphaOptions {
                    samples: self.probe_samples,
                    ..Default::default()
                };
                let build = construct_alpha_with(self.alpha0, self.l0, &self.resource()?, &opts)?;
                return Ok((build.profile, Some(build)));
            }
            ProfileKind::Quadratic => ProfileShape::Quadratic {
                min_value: self.alpha0,
                curvature: self.profile_curvature,
                center: self.profile_center,
            },
            ProfileKind::Affine => ProfileShape::Affine {
                at_a: self.profile_at_a,
                at_b: self.profile_at_b,
            },
            ProfileKind::Constant => ProfileShape::Constant { value: self.alpha0 },
        };
        Ok((DispersalProfile::new(shape, a, b)?, None))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaParams {
    pub alpha: f64,
}

impl Default for ThetaParams {
    fn default() -> Self {
        Self { alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceParams {
    pub n_z1: usize,
    pub n_z2: usize,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        Self { n_z1: 21, n_z2: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaParams {
    /// Number of evaluation points written to `alpha.csv`.
    pub points: usize,
}

impl Default for AlphaParams {
    fn default() -> Self {
        Self { points: 257 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct H1Params {
    pub samples: usize,
}

impl Default for H1Params {
    fn default() -> Self {
        Self { samples: 21 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloquetParams {
    /// Resident trait whose equilibrium fixes the static potential.
    pub resident: f64,
    /// Trait whose dispersal rate drives the bundle.
    pub mutant: f64,
    pub tau_end: f64,
    pub max_dtau: f64,
    pub spin_up: Option<f64>,
    pub tolerance: f64,
}

impl Default for FloquetParams {
    fn default() -> Self {
        Self {
            resident: 0.25,
            mutant: 0.0,
            tau_end: 10.0,
            max_dtau: 0.05,
            spin_up: None,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingKind {
    /// `R(z, zbar) = lambda(z, zbar)` from the invasion exponent.
    SelfConsistent,
    /// `R = 0`.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjParams {
    pub forcing: ForcingKind,
    pub scheme: HjScheme,
    pub k0: f64,
    pub zbar0: f64,
    pub t_end: f64,
    /// `None` picks half the initial CFL bound.
    pub dt: Option<f64>,
    pub output_interval: f64,
    pub picard: usize,
    /// Step of the canonical-equation integration; 0 disables it.
    pub canonical_dt: f64,
}

impl Default for HjParams {
    fn default() -> Self {
        Self {
            forcing: ForcingKind::SelfConsistent,
            scheme: HjScheme::Godunov,
            k0: 4.0,
            zbar0: 0.1,
            t_end: 1.0,
            dt: None,
            output_interval: 0.05,
            picard: 0,
            canonical_dt: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LaxParams {
    pub forcing: ForcingKind,
    pub k0: f64,
    pub zbar0: f64,
    pub t_end: f64,
    /// `None` uses four trait cells.
    pub dt: Option<f64>,
    pub reach: Option<f64>,
    pub normalize: bool,
}

impl Default for LaxParams {
    fn default() -> Self {
        Self {
            forcing: ForcingKind::SelfConsistent,
            k0: 4.0,
            zbar0: 0.1,
            t_end: 1.0,
            dt: None,
            reach: None,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeParams {
    pub epsilon: f64,
    pub t_end: f64,
    pub c_t: f64,
    pub k0: f64,
    pub zbar0: f64,
    pub rho_every: usize,
    pub record_every: usize,
    /// Times at which `u` is written.
    pub snapshots: Vec<f64>,
    pub floor: f64,
}

impl Default for PdeParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            t_end: 1.0,
            c_t: 0.1,
            k0: 4.0,
            zbar0: 0.1,
            rho_every: 10,
            record_every: 1,
            snapshots: vec![0.0, 0.5, 1.0],
            floor: 1e-300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeParams {
    pub epsilons: Vec<f64>,
    pub t_end: f64,
    pub c_t: f64,
    pub k0: f64,
    pub zbar0: f64,
    pub hj_dt: Option<f64>,
    pub hj_scheme: HjScheme,
    pub compare_interval: f64,
    pub rho_window: [f64; 2],
    pub h_window: [f64; 2],
    pub bundle_dtau: f64,
    pub hamiltonian: bool,
}

impl Default for ConvergeParams {
    fn default() -> Self {
        let s = crate::converge::ConvergeSpec::default();
        Self {
            epsilons: s.epsilons,
            t_end: s.t_end,
            c_t: s.c_t,
            k0: s.k0,
            zbar0: s.zbar0,
            hj_dt: s.hj_dt,
            hj_scheme: s.hj_scheme,
            compare_interval: s.compare_interval,
            rho_window: [s.rho_window.0, s.rho_window.1],
            h_window: [s.h_window.0, s.h_window.1],
            bundle_dtau: s.bundle_dtau,
            hamiltonian: s.with_hamiltonian,
        }
    }
}

impl ConvergeParams {
    pub fn spec(&self, common: &Common) -> crate::converge::ConvergeSpec {
        crate::converge::ConvergeSpec {
            epsilons: self.epsilons.clone(),
            n_x: common.n_x,
            n_z: common.n_z,
            t_end: self.t_end,
            c_t: self.c_t,
            k0: self.k0,
            zbar0: self.zbar0,
            alpha0: common.alpha0,
            l0: common.l0,
            hj_dt: self.hj_dt,
            hj_scheme: self.hj_scheme,
            compare_interval: self.compare_interval,
            rho_window: (self.rho_window[0], self.rho_window[1]),
            h_window: (self.h_window[0], self.h_window[1]),
            bundle_dtau: self.bundle_dtau,
            with_hamiltonian: self.hamiltonian,
        }
    }
}

/// A fully parsed configuration for one invocation.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub command: Command,
    pub common: Common,
    /// Raw per-command tables after overrides.
    pub sections: Table,
    pub out_dir: PathBuf,
}

fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn typed<T: DeserializeOwned>(section: &str, table: Option<&Value>) -> Result<T> {
    let table = match table {
        None => Table::new(),
        Some(Value::Table(t)) => t.clone(),
        Some(_) => return Err(HarnessError::config(format!("`{section}` must be a table"))),
    };
    T::deserialize(Value::Table(table))
        .map_err(|e| HarnessError::config(format!("[{section}] {}", e.message())))
}

impl ExperimentSpec {
    pub fn from_str(
        command: Command,
        text: &str,
        overrides: &[String],
        out_dir: PathBuf,
    ) -> Result<Self> {
        let mut root: Table = text.parse().map_err(|e: toml::de::Error| {
            HarnessError::config(format!("config is not valid TOML: {}", e.message()))
        })?;
        for key in root.keys() {
            if key != "common" && key.parse::<Command>().is_err() {
                return Err(HarnessError::config(format!("unknown section `{key}`")));
            }
        }
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| {
                HarnessError::config(format!("override `{item}` is not key=value"))
            })?;
            let key = key.trim();
            let (section, field) = match key.split_once('.') {
                Some((s, f)) => (s.to_string(), f.to_string()),
                None if COMMON_KEYS.contains(&key) => ("common".to_string(), key.to_string()),
                None => (command.name().to_string(), key.to_string()),
            };
            if section != "common" && section.parse::<Command>().is_err() {
                return Err(HarnessError::config(format!(
                    "unknown section `{section}` in override `{item}`"
                )));
            }
            let entry = root
                .entry(section.clone())
                .or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(t) => {
                    t.insert(field, parse_value(raw.trim()));
                }
                _ => return Err(HarnessError::config(format!("`{section}` must be a table"))),
            }
        }
        let common: Common = typed("common", root.get("common"))?;
        let spec = Self {
            command,
            common,
            sections: root,
            out_dir,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(
        command: Command,
        path: &Path,
        overrides: &[String],
        out_dir: PathBuf,
    ) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_str(command, &text, overrides, out_dir)
    }

    pub fn params<T: DeserializeOwned>(&self, command: Command) -> Result<T> {
        typed(command.name(), self.sections.get(command.name()))
    }

    /// Every section present is checked against its schema, so a typo in a
    /// table the current command does not use is still reported.
    fn validate(&self) -> Result<()> {
        let c = &self.common;
        if c.n_x < 8 || c.n_z < 16 {
            return Err(HarnessError::config("need n_x >= 8 and n_z >= 16"));
        }
        for command in Command::ALL {
            match command {
                Command::Theta => {
                    self.params::<ThetaParams>(command)?;
                }
                Command::LambdaSurface => {
                    self.params::<SurfaceParams>(command)?;
                }
                Command::AlphaBuild => {
                    self.params::<AlphaParams>(command)?;
                }
                Command::CheckH1 => {
                    self.params::<H1Params>(command)?;
                }
                Command::FloquetTest => {
                    self.params::<FloquetParams>(command)?;
                }
                Command::Hj => {
                    self.params::<HjParams>(command)?;
                }
                Command::LaxOleinik => {
                    self.params::<LaxParams>(command)?;
                }
                Command::Pde => drop(self.params::<PdeParams>(command)?),
                Command::Converge => {
                    let p: ConvergeParams = self.params(command)?;
                    p.spec(c).validate()?;
                }
                Command::Pipeline => {
                    let _: Table = self.params(command)?;
                    if self
                        .sections
                        .get("pipeline")
                        .and_then(Value::as_table)
                        .is_some_and(|t| !t.is_empty())
                    {
                        return Err(HarnessError::config(
                            "[pipeline] takes no keys; configure the stage tables",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// The effective configuration, for metadata sidecars.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "command": self.command.name(),
            "common": self.common,
        });
        if let Some(t) = self.sections.get(self.command.name()) {
            v["params"] = serde_json::to_value(t).unwrap_or_default();
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(command: Command, text: &str, overrides: &[&str]) -> Result<ExperimentSpec> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        ExperimentSpec::from_str(command, text, &o, PathBuf::from("out"))
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = spec(Command::Hj, "[hj]\ndx = 0.1\n", &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dx"), "{err}");
    }

    #[test]
    fn unknown_section_is_rejected() {
        let err = spec(Command::Hj, "[hjj]\n", &[]).unwrap_err();
        assert!(err.to_string().contains("hjj"));
    }

    #[test]
    fn overrides_route_to_sections() {
        let s = spec(
            Command::Pde,
            "[pde]\nepsilon = 0.05\n",
            &["epsilon=0.025", "n_x=32", "hj.k0=2"],
        )
        .unwrap();
        let p: PdeParams = s.params(Command::Pde).unwrap();
        assert_eq!(p.epsilon, 0.025);
        assert_eq!(s.common.n_x, 32);
        let h: HjParams = s.params(Command::Hj).unwrap();
        assert_eq!(h.k0, 2.0);
    }

    #[test]
    fn override_values_are_typed() {
        let s = spec(
            Command::Converge,
            "",
            &["epsilons=[0.1, 0.05, 0.025]", "hj_scheme=\"godunov\""],
        )
        .unwrap();
        let p: ConvergeParams = s.params(Command::Converge).unwrap();
        assert_eq!(p.epsilons, vec![0.1, 0.05, 0.025]);
        assert_eq!(p.hj_scheme, HjScheme::Godunov);
        let bare = spec(Command::Hj, "", &["scheme=eno2"]).unwrap();
        let h: HjParams = bare.params(Command::Hj).unwrap();
        assert_eq!(h.scheme, HjScheme::Eno2);
    }

    #[test]
    fn increasing_epsilons_fail_validation() {
        assert!(spec(
            Command::Converge,
            "[converge]\nepsilons = [0.01, 0.02, 0.04]\n",
            &[]
        )
        .is_err());
    }

    #[test]
    fn commands_round_trip_names() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
    }
}
