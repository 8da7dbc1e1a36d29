//! Experiment configuration: a TOML file layered over a named preset.
//!
//! The user file is merged table by table over the preset's defaults, then
//! deserialized with unknown keys rejected and validated as a whole. A
//! table carrying a `kind` key (densities, controls) is replaced wholesale
//! when the user gives a `kind`, so variant fields never mix.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adjoint::AdjointConfig;
use crate::control::ControlField;
use crate::domain::{PhaseGrid, SpeciesParams, SpeciesParticles, TimeGrid};
use crate::elliptic::PenaltyConfig;
use crate::error::{Error, Result};
use crate::fields::DEFAULT_NEUTRALITY_TOL;
use crate::forward::ForwardConfig;
use crate::gradient::{ControlProblem, GradientConfig};
use crate::optimizer::NcgConfig;
use crate::rng::{Purpose, Streams};
use crate::sampling::{self, InitialDensity};
use crate::tracking::TrackingWeights;

const LANDAU: &str = include_str!("../presets/landau.toml");
const TWO_STREAM: &str = include_str!("../presets/two_stream.toml");
const CONFINEMENT: &str = include_str!("../presets/confinement.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Landau,
    TwoStream,
    Confinement,
    #[default]
    Custom,
}

impl Preset {
    fn defaults(self) -> &'static str {
        match self {
            Preset::Landau => LANDAU,
            Preset::TwoStream => TWO_STREAM,
            Preset::Confinement => CONFINEMENT,
            Preset::Custom => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One forward solve under the initial control.
    #[default]
    Forward,
    /// Minimize the reduced cost starting from the initial control.
    Optimize,
}

/// Initial densities by name. Each carries unit mean density in space except
/// `bump`, whose mass follows from its peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityConfig {
    /// Maxwellian in velocity, uniform in space.
    Maxwellian,
    /// `(1 + amplitude cos(wave_number x))` times the Maxwellian.
    Landau { wave_number: f64, amplitude: f64 },
    /// Beams at `+-v_ts` in `v1`, each `exp(-(v1 -+ v_ts)^2 / (2 sigma_ts))`,
    /// with a Gaussian of standard deviation `sd_v2` in `v2`.
    TwoStream {
        sigma_ts: f64,
        v_ts: f64,
        sd_v2: f64,
    },
    /// Smooth compactly supported bell centred at `(center, 0, 0)`.
    Bump {
        center: f64,
        r_x: f64,
        r_v: f64,
        peak: f64,
    },
}

impl DensityConfig {
    pub fn build(&self, p_max: f64) -> InitialDensity {
        match *self {
            DensityConfig::Maxwellian => sampling::maxwellian_uniform(p_max),
            DensityConfig::Landau {
                wave_number,
                amplitude,
            } => sampling::landau(p_max, wave_number, amplitude),
            DensityConfig::TwoStream {
                sigma_ts,
                v_ts,
                sd_v2,
            } => sampling::two_stream(p_max, sigma_ts.sqrt(), v_ts, sd_v2),
            DensityConfig::Bump {
                center,
                r_x,
                r_v,
                peak,
            } => sampling::bump(center, r_x, r_v, peak),
        }
    }

    fn validate(&self, label: &str, grid: &PhaseGrid) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(format!("{label}.density: {msg}")));
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match *self {
            DensityConfig::Maxwellian => Ok(()),
            DensityConfig::Landau {
                wave_number,
                amplitude,
            } => {
                if !(amplitude.abs() <= 1.0) {
                    return bad(format!("amplitude must lie in [-1, 1], got {amplitude}"));
                }
                let periods = wave_number * grid.p_max / TAU;
                if !(positive(wave_number) && (periods - periods.round()).abs() < 1e-9) {
                    return bad(format!(
                        "wave_number * p_max must be a positive multiple of 2 pi, got {}",
                        wave_number * grid.p_max
                    ));
                }
                Ok(())
            }
            DensityConfig::TwoStream {
                sigma_ts,
                v_ts,
                sd_v2,
            } => {
                if !(positive(sigma_ts) && positive(v_ts) && positive(sd_v2)) {
                    return bad("sigma_ts, v_ts and sd_v2 must be positive".into());
                }
                if sigma_ts >= v_ts {
                    return bad(format!(
                        "sigma_ts ({sigma_ts}) must be smaller than v_ts ({v_ts})"
                    ));
                }
                Ok(())
            }
            DensityConfig::Bump {
                center,
                r_x,
                r_v,
                peak,
            } => {
                if !(positive(r_x) && positive(r_v) && positive(peak)) {
                    return bad("r_x, r_v and peak must be positive".into());
                }
                if center - r_x < 0.0 || center + r_x > grid.p_max {
                    return bad(format!(
                        "support [{}, {}] leaves [0, p_max]",
                        center - r_x,
                        center + r_x
                    ));
                }
                if r_v >= grid.v_max {
                    return bad(format!("r_v ({r_v}) must be below v_max ({})", grid.v_max));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesConfig {
    pub n_particles: usize,
    pub density: DensityConfig,
    /// Ion to electron mass ratio; ignored for electrons.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForwardSection {
    pub static_ions: bool,
    pub escape_limit: f64,
    pub neutrality_tol: f64,
    /// Abort rejection sampling below this acceptance rate.
    pub acceptance_floor: f64,
}

impl Default for ForwardSection {
    fn default() -> Self {
        Self {
            static_ions: false,
            escape_limit: 0.01,
            neutrality_tol: DEFAULT_NEUTRALITY_TOL,
            acceptance_floor: 1e-4,
        }
    }
}

/// Closed-form controls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlInit {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// `mean (1 + amplitude t sin(wave_number x))`.
    Harmonic {
        mean: f64,
        amplitude: f64,
        wave_number: f64,
    },
}

impl ControlInit {
    pub fn build(&self, time: TimeGrid, grid: &PhaseGrid) -> ControlField {
        match *self {
            ControlInit::Zero => ControlField::zeros(time, grid),
            ControlInit::Constant { value } => ControlField::constant(time, grid, value),
            ControlInit::Harmonic {
                mean,
                amplitude,
                wave_number,
            } => ControlField::from_fn(time, grid, |t, x| {
                mean * (1.0 + amplitude * t * (wave_number * x).sin())
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlSection {
    pub initial: ControlInit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Fit a damping rate through the energy maxima in `[t0, t1]`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub damping_window: Option<[f64; 2]>,
    /// Summarize growth to saturation, with envelope blocks of this width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth_block: Option<f64>,
    /// Track how the electrons labelled by the sign of their initial `v1`
    /// mix in phase space; reported at saturation.
    pub mixing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub directions: usize,
    pub epsilon: f64,
    /// Largest accepted relative error of a directional derivative.
    pub tolerance: f64,
    /// Cosine modes per axis in the random directions.
    pub modes: usize,
    pub base_control: ControlInit,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            directions: 3,
            epsilon: 3e-2,
            tolerance: 0.1,
            modes: 4,
            base_control: ControlInit::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub diagnostics: bool,
    /// `t,x,E` at every level.
    pub fields: bool,
    /// Levels at which to write the particle lists.
    pub phase_dumps: Vec<usize>,
    pub adjoint: bool,
    pub gradient: bool,
    pub control: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            diagnostics: true,
            fields: false,
            phase_dumps: Vec::new(),
            adjoint: false,
            gradient: false,
            control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub preset: Preset,
    #[serde(default)]
    pub mode: Mode,
    /// Master seed of the initial sampling and of the gradient-check directions.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Seed of the adjoint particle streams.
    #[serde(default = "default_adjoint_seed")]
    pub adjoint_seed: u64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub grid: PhaseGrid,
    pub time: TimeGrid,
    pub electrons: SpeciesConfig,
    pub ions: SpeciesConfig,
    #[serde(default)]
    pub forward: ForwardSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default = "TrackingWeights::off")]
    pub tracking: TrackingWeights,
    #[serde(default)]
    pub penalty: PenaltyConfig,
    #[serde(default)]
    pub adjoint: AdjointConfig,
    #[serde(default)]
    pub gradient: GradientConfig,
    #[serde(default)]
    pub ncg: NcgConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
    #[serde(default)]
    pub export: ExportConfig,
}

fn default_seed() -> u64 {
    1
}

fn default_adjoint_seed() -> u64 {
    7
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Recursive overlay of `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t))
                if !(t.contains_key("kind") && b.contains_key("kind")) =>
            {
                merge(b, t)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::ConfigInvalid(format!("{origin}: {e}")))
}

impl ExperimentConfig {
    /// Parse a config text, layer it over its preset and validate.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user = parse_table(text, "config")?;
        let preset: Preset = match user.get("preset") {
            None => Preset::Custom,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::ConfigInvalid(format!("preset: {e}")))?,
        };
        let mut table = parse_table(preset.defaults(), "preset")?;
        merge(&mut table, user);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| {
                let path = e.path().to_string();
                if path == "." {
                    Error::ConfigInvalid(e.into_inner().to_string())
                } else {
                    Error::ConfigInvalid(format!("{path}: {}", e.into_inner()))
                }
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Built-in preset with no overrides.
    pub fn preset(preset: Preset) -> Result<Self> {
        let name = toml::Value::try_from(preset).expect("unit variant");
        Self::from_toml_str(&format!("preset = {name}"))
    }

    /// Complete config as TOML; reading it back gives the same config.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self)
            .map_err(|e| Error::ConfigInvalid(format!("cannot serialize config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.time.validate()?;
        for (label, s) in [("electrons", &self.electrons), ("ions", &self.ions)] {
            if s.n_particles == 0 {
                return Err(Error::ConfigInvalid(format!(
                    "{label}.n_particles must be positive"
                )));
            }
            s.density.validate(label, &self.grid)?;
        }
        if let Some(r) = self.electrons.mass_ratio {
            return Err(Error::ConfigInvalid(format!(
                "electrons.mass_ratio is not used (got {r}); set it on the ions"
            )));
        }
        self.ion_params()?;
        let (me, mi) = (
            self.electrons.density.build(self.grid.p_max).total_mass,
            self.ions.density.build(self.grid.p_max).total_mass,
        );
        if (me - mi).abs() > 1e-9 * me.abs().max(mi.abs()) {
            return Err(Error::ConfigInvalid(format!(
                "electron and ion densities must carry the same mass, got {me} and {mi}"
            )));
        }
        let f = &self.forward;
        if !(f.escape_limit >= 0.0 && f.escape_limit <= 1.0) {
            return Err(Error::ConfigInvalid(
                "forward.escape_limit must lie in [0, 1]".into(),
            ));
        }
        if !(f.neutrality_tol > 0.0) {
            return Err(Error::ConfigInvalid(
                "forward.neutrality_tol must be positive".into(),
            ));
        }
        if !(f.acceptance_floor > 0.0 && f.acceptance_floor < 1.0) {
            return Err(Error::ConfigInvalid(
                "forward.acceptance_floor must lie in (0, 1)".into(),
            ));
        }
        self.tracking.validate()?;
        self.penalty.validate()?;
        self.adjoint.validate()?;
        self.ncg.validate()?;
        if let Some([t0, t1]) = self.analysis.damping_window {
            if !(0.0 <= t0 && t0 < t1 && t1 <= self.time.t_final) {
                return Err(Error::ConfigInvalid(format!(
                    "analysis.damping_window [{t0}, {t1}] must be an interval inside [0, t_final]"
                )));
            }
        }
        if let Some(b) = self.analysis.growth_block {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::ConfigInvalid(
                    "analysis.growth_block must be positive".into(),
                ));
            }
        }
        let g = &self.gradcheck;
        if g.directions == 0 || g.modes == 0 {
            return Err(Error::ConfigInvalid(
                "gradcheck.directions and gradcheck.modes must be positive".into(),
            ));
        }
        if !(g.epsilon > 0.0 && g.tolerance > 0.0) {
            return Err(Error::ConfigInvalid(
                "gradcheck.epsilon and gradcheck.tolerance must be positive".into(),
            ));
        }
        if let Some(&k) = self.export.phase_dumps.iter().find(|&&k| k > self.time.n_t) {
            return Err(Error::ConfigInvalid(format!(
                "export.phase_dumps: level {k} exceeds n_t = {}",
                self.time.n_t
            )));
        }
        Ok(())
    }

    fn ion_params(&self) -> Result<SpeciesParams> {
        match self.ions.mass_ratio {
            None => Ok(SpeciesParams::hydrogen_ions()),
            Some(r) if r > 0.0 && r.is_finite() => {
                let mu = (1.0 / r).sqrt();
                SpeciesParams::ions(mu, mu)
            }
            Some(r) => Err(Error::ConfigInvalid(format!(
                "ions.mass_ratio must be positive, got {r}"
            ))),
        }
    }

    pub fn forward_config(&self) -> ForwardConfig {
        ForwardConfig {
            store_particles: self.mode == Mode::Optimize,
            static_ions: self.forward.static_ions,
            escape_limit: self.forward.escape_limit,
            neutrality_tol: self.forward.neutrality_tol,
        }
    }

    pub fn streams(&self) -> Streams {
        Streams::new(self.seed)
    }

    /// Sample both species from the master seed.
    pub fn initial_particles(&self) -> Result<[SpeciesParticles; 2]> {
        let streams = self.streams();
        let p_max = self.grid.p_max;
        let build = |params: SpeciesParams, s: &SpeciesConfig| -> Result<SpeciesParticles> {
            let density = s.density.build(p_max);
            let key = streams.key(Purpose::ForwardInit, Some(params.kind));
            let ps = sampling::sample(
                &density.spec,
                s.n_particles,
                p_max,
                key,
                self.forward.acceptance_floor,
            )?;
            Ok(SpeciesParticles::with_total_mass(
                params,
                ps,
                density.total_mass,
            ))
        };
        Ok([
            build(SpeciesParams::electrons(), &self.electrons)?,
            build(self.ion_params()?, &self.ions)?,
        ])
    }

    pub fn initial_control(&self) -> ControlField {
        self.control.initial.build(self.time, &self.grid)
    }

    /// The control problem with freshly sampled initial data.
    pub fn control_problem(&self) -> Result<ControlProblem> {
        ControlProblem::new(
            self.grid,
            self.time,
            self.initial_particles()?,
            self.tracking.clone(),
            self.penalty,
            self.forward_config(),
            self.adjoint,
            self.gradient,
            Streams::new(self.adjoint_seed),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[grid]
p_max = 8.0
v_max = 6.0
n_x = 8
n_v = 8

[time]
t_final = 1.0
n_t = 10

[electrons]
n_particles = 100
density = { kind = "maxwellian" }

[ions]
n_particles = 100
density = { kind = "maxwellian" }
"#;

    #[test]
    fn presets_load_and_validate() {
        for p in [Preset::Landau, Preset::TwoStream, Preset::Confinement] {
            let cfg = ExperimentConfig::preset(p).unwrap();
            assert_eq!(cfg.preset, p);
        }
        let landau = ExperimentConfig::preset(Preset::Landau).unwrap();
        assert_eq!(landau.grid.p_max, 4.0 * std::f64::consts::PI);
        assert_eq!(landau.analysis.damping_window, Some([0.0, 10.0]));
        assert_eq!(
            landau.electrons.density,
            DensityConfig::Landau {
                wave_number: 0.5,
                amplitude: 1.0
            }
        );
        let ts = ExperimentConfig::preset(Preset::TwoStream).unwrap();
        assert!(ts.forward.static_ions);
        assert_eq!(ts.mode, Mode::Forward);
        assert_eq!(
            ExperimentConfig::preset(Preset::Confinement).unwrap().mode,
            Mode::Optimize
        );
    }

    #[test]
    fn round_trip_is_identity() {
        for p in [Preset::Landau, Preset::TwoStream, Preset::Confinement] {
            let cfg = ExperimentConfig::preset(p).unwrap();
            let text = cfg.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(cfg, back, "{text}");
        }
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn user_keys_override_the_preset() {
        let cfg = ExperimentConfig::from_toml_str(
            "preset = \"landau\"\nseed = 9\n[grid]\nn_x = 32\n[electrons]\ndensity = { kind = \"maxwellian\" }\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.grid.n_x, 32);
        assert_eq!(cfg.grid.n_v, 64);
        assert_eq!(cfg.electrons.density, DensityConfig::Maxwellian);
        assert_eq!(cfg.electrons.n_particles, 200_000);
    }

    #[test]
    fn missing_key_is_named() {
        let text = MINIMAL.replace("n_v = 8\n", "");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::ConfigInvalid(msg)) => {
                assert!(msg.contains("n_v") && msg.contains("grid"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("[time]\nt_final = 1.0\nn_t = 10\n", "");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::ConfigInvalid(msg)) => assert!(msg.contains("time"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_and_invalid_values_are_rejected() {
        let typo = format!("{MINIMAL}\n[penalty]\nalpah = 1.0\n");
        assert!(
            matches!(ExperimentConfig::from_toml_str(&typo), Err(Error::ConfigInvalid(m)) if m.contains("alpah"))
        );
        let bad = MINIMAL.replace("n_x = 8", "n_x = 1");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&bad),
            Err(Error::ConfigInvalid(_))
        ));
        let bad = format!("{MINIMAL}\n[analysis]\ndamping_window = [0.0, 5.0]\n");
        assert!(
            matches!(ExperimentConfig::from_toml_str(&bad), Err(Error::ConfigInvalid(m)) if m.contains("damping_window"))
        );
        let uneven = MINIMAL.replacen(
            "density = { kind = \"maxwellian\" }",
            "density = { kind = \"bump\", center = 4.0, r_x = 2.0, r_v = 2.0, peak = 1.0 }",
            1,
        );
        assert!(
            matches!(ExperimentConfig::from_toml_str(&uneven), Err(Error::ConfigInvalid(m)) if m.contains("same mass"))
        );
        assert!(matches!(
            ExperimentConfig::from_toml_str("preset = \"nope\""),
            Err(Error::ConfigInvalid(m)) if m.contains("preset")
        ));
    }

    #[test]
    fn two_stream_sigma_is_the_exponent_parameter() {
        let d = DensityConfig::TwoStream {
            sigma_ts: 0.5,
            v_ts: 3.0,
            sd_v2: 0.05,
        }
        .build(10.0);
        let p = |v: f64| d.spec.pdf(1.0, v, 0.0);
        // exp(-(v - 3)^2 / (2 * 0.5)) relative to the beam centre
        assert!((p(4.0) / p(3.0) - (-1.0f64).exp()).abs() < 1e-9);
    }
}
