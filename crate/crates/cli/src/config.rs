//! Run configuration: presets, the TOML file format and command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cphase_mps::dynamics::ProtocolParams;
use cphase_mps::state_prep::{gaussian_mode, TemporalMode, WaveguideLayout};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// Bins above which a run counts as full scale and needs `long_run`.
pub const LONG_RUN_BINS: usize = 20_000;

pub const PRESETS: [&str; 4] = ["toy", "scaled", "paper", "fig2c-scaled"];

/// Contents of a config file. Every field is optional; unset fields come
/// from the preset, then from built-in defaults.
#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub long_run: Option<bool>,
    /// Overrides for `ProtocolParams` fields.
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default)]
    pub sweep: SweepAxes,
    pub layout: Option<LayoutSpec>,
    #[serde(default)]
    pub oracle: OracleSettings,
    #[serde(default)]
    pub pi_search: PiSettings,
    #[serde(default)]
    pub semiclassical: SemiclassicalSettings,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    pub g0: Option<Vec<f64>>,
    pub n_rep: Option<Vec<usize>>,
    pub eta: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
}

/// Explicit waveguide for small runs; replaces the half-period protocol layout.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LayoutSpec {
    pub n_bins: usize,
    pub modes: Vec<ModeSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum ModeSpec {
    Gaussian { center: f64, tau: f64 },
    /// Raw amplitudes as `[re, im]` pairs, normalized on load.
    Raw { start_bin: usize, amplitudes: Vec<[f64; 2]> },
}

impl LayoutSpec {
    pub fn build(&self, params: &ProtocolParams) -> Result<WaveguideLayout> {
        let mut layout = WaveguideLayout::new(self.n_bins, params.dt, params.bin_dim)?;
        for m in &self.modes {
            let mode = match m {
                ModeSpec::Gaussian { center, tau } => gaussian_mode(*center, *tau, &layout)?,
                ModeSpec::Raw { start_bin, amplitudes } => TemporalMode::from_amplitudes(
                    *start_bin,
                    amplitudes.iter().map(|&[re, im]| C64::new(re, im)).collect(),
                    params.dt,
                )?,
            };
            layout.push_mode(mode)?;
        }
        Ok(layout)
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSettings {
    pub cases: usize,
    pub max_bins: usize,
    pub half_reps: usize,
    pub tolerance: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self { cases: 20, max_bins: 8, half_reps: 4, tolerance: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhaseModelKind {
    #[default]
    Semiclassical,
    Quantum,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PiSettings {
    pub model: PhaseModelKind,
    pub target: f64,
    pub tolerance: f64,
    pub max_factor: f64,
    pub scan_steps: usize,
}

impl Default for PiSettings {
    fn default() -> Self {
        Self {
            model: PhaseModelKind::Semiclassical,
            target: std::f64::consts::PI,
            tolerance: 1e-6,
            max_factor: 4.0,
            scan_steps: 60,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SemiclassicalSettings {
    pub mc_samples: usize,
}

impl Default for SemiclassicalSettings {
    fn default() -> Self {
        Self { mc_samples: 1_000_000 }
    }
}

/// Values given on the command line; they win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub long_run: bool,
    /// `key=value` pairs applied to the params table, values in TOML syntax.
    pub set: Vec<String>,
    pub g0: Option<Vec<f64>>,
    pub n_rep: Option<Vec<usize>>,
    pub eta: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
}

/// Fully resolved configuration.
#[derive(Clone, Debug, Serialize)]
pub struct Resolved {
    pub preset: Option<String>,
    pub params: ProtocolParams,
    pub layout: Option<LayoutSpec>,
    pub g0: Vec<f64>,
    pub n_rep: Vec<usize>,
    pub eta: Vec<f64>,
    pub sigma: Vec<f64>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
    pub long_run: bool,
    pub oracle: OracleSettings,
    pub pi_search: PiSettings,
    pub semiclassical: SemiclassicalSettings,
}

impl Resolved {
    pub fn build_layout(&self, params: &ProtocolParams) -> Result<WaveguideLayout> {
        match &self.layout {
            Some(spec) => spec.build(params),
            None => Ok(WaveguideLayout::protocol(params)?),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.layout.as_ref().map_or_else(|| self.params.n_bins(), |l| l.n_bins)
    }

    /// Refuse full-scale waveguides unless the long-run flag is set.
    pub fn check_long_run(&self) -> Result<()> {
        if self.n_bins() > LONG_RUN_BINS && !self.long_run {
            bail!(
                "{} bins is a full-scale run; pass --long-run (or long_run = true) to allow it",
                self.n_bins()
            );
        }
        Ok(())
    }
}

struct Preset {
    params: ProtocolParams,
    layout: Option<LayoutSpec>,
    sweep: SweepAxes,
}

fn preset(name: &str) -> Result<Preset> {
    let scaled = ProtocolParams { omega_m: 1e-3, tau: 200.0, g0: 0.05, n_rep: 1, ..ProtocolParams::default() };
    Ok(match name {
        "toy" => Preset {
            params: ProtocolParams {
                g0: 0.1,
                omega_m: 0.2,
                tau: 1.0,
                n_rep: 2,
                d_mech: 4,
                svd_threshold: 0.0,
                ..ProtocolParams::default()
            },
            layout: Some(LayoutSpec {
                n_bins: 8,
                modes: vec![ModeSpec::Gaussian { center: 1.0, tau: 1.0 }, ModeSpec::Gaussian { center: 3.0, tau: 1.0 }],
            }),
            sweep: SweepAxes::default(),
        },
        "scaled" => Preset { params: scaled, layout: None, sweep: SweepAxes::default() },
        "paper" => Preset {
            params: ProtocolParams { omega_m: 1.5e-4, tau: 1000.0, g0: 0.1, n_rep: 1, ..ProtocolParams::default() },
            layout: None,
            sweep: SweepAxes::default(),
        },
        "fig2c-scaled" => Preset {
            params: scaled,
            layout: None,
            sweep: SweepAxes {
                g0: Some(vec![0.01, 0.02, 0.03, 0.05, 0.07, 0.1]),
                n_rep: Some(vec![1]),
                ..SweepAxes::default()
            },
        },
        other => bail!("unknown preset {other:?}; known presets: {}", PRESETS.join(", ")),
    })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_set(item: &str) -> Result<(String, toml::Value)> {
    let (key, value) = item.split_once('=').with_context(|| format!("--set expects key=value, got {item:?}"))?;
    let table: toml::Table =
        toml::from_str(&format!("v = {value}")).with_context(|| format!("value of {key:?} is not valid TOML"))?;
    Ok((key.trim().to_string(), table["v"].clone()))
}

/// Preset, then file, then command line.
pub fn resolve(file: RunConfig, cli: Overrides) -> Result<Resolved> {
    let preset_name = cli.preset.clone().or(file.preset.clone());
    let base = match &preset_name {
        Some(name) => preset(name)?,
        None => Preset { params: ProtocolParams::default(), layout: None, sweep: SweepAxes::default() },
    };

    let mut table = toml::Table::try_from(&base.params).context("serializing preset parameters")?;
    for (k, v) in file.params {
        table.insert(k, v);
    }
    for item in &cli.set {
        let (k, v) = parse_set(item)?;
        table.insert(k, v);
    }
    // `None` fields are simply absent from the table
    let params: ProtocolParams = table.try_into().context("invalid [params]")?;
    params.validate()?;

    let pick = |cli: Option<Vec<f64>>, file: Option<Vec<f64>>, preset: Option<Vec<f64>>, default: Vec<f64>| {
        cli.or(file).or(preset).unwrap_or(default)
    };
    let g0 = pick(cli.g0, file.sweep.g0, base.sweep.g0, vec![params.g0]);
    let eta = pick(cli.eta, file.sweep.eta, base.sweep.eta, vec![1.0, 0.99, 0.96, 0.93]);
    let sigma = pick(cli.sigma, file.sweep.sigma, base.sweep.sigma, vec![0.05, 0.1, 0.2]);
    let n_rep = cli.n_rep.or(file.sweep.n_rep).or(base.sweep.n_rep).unwrap_or_else(|| vec![params.n_rep]);
    if let Some(e) = eta.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        bail!("eta {e} outside [0, 1]");
    }

    Ok(Resolved {
        preset: preset_name,
        layout: file.layout.or(base.layout),
        params,
        g0,
        n_rep,
        eta,
        sigma,
        output_dir: cli.output_dir.or(file.output_dir).unwrap_or_else(|| PathBuf::from("out")),
        seed: cli.seed.or(file.seed).unwrap_or(0),
        threads: cli.threads.or(file.threads).unwrap_or(0),
        long_run: cli.long_run || file.long_run.unwrap_or(false),
        oracle: file.oracle,
        pi_search: file.pi_search,
        semiclassical: file.semiclassical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_preset_file_cli() {
        let file: RunConfig = toml::from_str(
            r#"
            preset = "scaled"
            seed = 4
            [params]
            g0 = 0.02
            d_mech = 10
            [sweep]
            n_rep = [1, 2]
            "#,
        )
        .unwrap();
        let cli = Overrides { set: vec!["d_mech=12".into()], seed: Some(9), ..Overrides::default() };
        let r = resolve(file, cli).unwrap();
        assert_eq!(r.params.omega_m, 1e-3);
        assert_eq!(r.params.g0, 0.02);
        assert_eq!(r.params.d_mech, 12);
        assert_eq!(r.seed, 9);
        assert_eq!(r.g0, vec![0.02]);
        assert_eq!(r.n_rep, vec![1, 2]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        let file: RunConfig = toml::from_str("[params]\nnot_a_param = 1").unwrap();
        assert!(resolve(file, Overrides::default()).is_err());
        assert!(resolve(RunConfig::default(), Overrides { preset: Some("nope".into()), ..Overrides::default() }).is_err());
    }

    #[test]
    fn full_scale_preset_needs_long_run() {
        let cli = Overrides { preset: Some("paper".into()), ..Overrides::default() };
        let r = resolve(RunConfig::default(), cli).unwrap();
        assert_eq!(r.n_bins(), 41_888);
        assert!(r.check_long_run().is_err());
        let cli = Overrides { preset: Some("paper".into()), long_run: true, ..Overrides::default() };
        assert!(resolve(RunConfig::default(), cli).unwrap().check_long_run().is_ok());
    }

    #[test]
    fn toy_layout_builds() {
        let r = resolve(RunConfig::default(), Overrides { preset: Some("toy".into()), ..Overrides::default() }).unwrap();
        let layout = r.build_layout(&r.params).unwrap();
        assert_eq!(layout.n_bins, 8);
        assert_eq!(layout.modes.len(), 2);
        assert_eq!(layout.modes[0].bins(), 1..3);
        assert_eq!(layout.modes[1].bins(), 5..7);
    }
}
