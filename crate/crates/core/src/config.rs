//! Run configuration: the JSON file is the source of truth for runs;
//! flags only select the config and command. Unknown keys are rejected.

use crate::error::{EwError, Result};
use crate::evolve::{plane_wave_state, Polarization, SimOptions, State};
use crate::grid::{Field, Grid3, Rank};
use crate::material::MaterialSpec;
use crate::norms::sobolev_norm;
use crate::random::rough_random_field;
use crate::spectral::helmholtz_decompose;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub box_len: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Rough,
    Plane,
    Mixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    #[serde(default = "default_s")]
    pub s_div: f64,
    #[serde(default = "default_s")]
    pub s_curl: f64,
    #[serde(default)]
    pub amp_div: f64,
    #[serde(default)]
    pub amp_curl: f64,
    #[serde(default)]
    pub seed: u64,
    /// Optional sharp band limit |m|_inf <= band_limit on generated data.
    #[serde(default)]
    pub band_limit: Option<i64>,
    /// Plane-wave parameters (kind = "plane").
    #[serde(default)]
    pub mode: Option<[i64; 3]>,
    #[serde(default)]
    pub polarization: Option<Polarization>,
    #[serde(default = "default_true")]
    pub traveling: bool,
}

fn default_s() -> f64 {
    2.6
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
    /// Snapshot stride in time units; rounded to a whole step multiple.
    pub out_stride: f64,
}

fn default_safety() -> f64 {
    0.4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub material: MaterialSpec,
    pub data: DataConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub checks: Vec<String>,
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub force: bool,
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(json)
            .map_err(|e| EwError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        Grid3::new(self.grid.n, self.grid.box_len)?;
        if !(self.time.t_end > 0.0) {
            return Err(EwError::Config("time.t_end must be positive".into()));
        }
        if !(self.time.cfl_safety > 0.0 && self.time.cfl_safety <= 1.0) {
            return Err(EwError::Config("time.cfl_safety must lie in (0, 1]".into()));
        }
        if !(self.time.out_stride > 0.0) {
            return Err(EwError::Config("time.out_stride must be positive".into()));
        }
        match self.data.kind {
            DataKind::Plane => {
                if self.data.mode.is_none() || self.data.polarization.is_none() {
                    return Err(EwError::Config(
                        "plane data needs 'mode' and 'polarization'".into(),
                    ));
                }
            }
            DataKind::Rough | DataKind::Mixed => {
                if !(self.data.amp_div >= 0.0) || !(self.data.amp_curl >= 0.0) {
                    return Err(EwError::Config("data amplitudes must be nonnegative".into()));
                }
                if self.data.amp_div + self.data.amp_curl == 0.0 {
                    return Err(EwError::Config("data amplitude is zero".into()));
                }
            }
        }
        Ok(())
    }

    pub fn grid3(&self) -> Grid3 {
        Grid3::new(self.grid.n, self.grid.box_len).expect("validated")
    }

    pub fn effective_seed(&self) -> u64 {
        if self.data.seed != 0 {
            self.data.seed
        } else {
            self.seed.unwrap_or(0)
        }
    }

    /// Builds the initial state per the data section. Rough data is a
    /// single rough field rescaled at s_div; mixed data assembles the
    /// divergence and curl parts with independent amplitudes.
    pub fn initial_state(&self) -> Result<State> {
        let grid = self.grid3();
        let seed = self.effective_seed();
        let maybe_band = |f: Field| -> Field {
            match self.data.band_limit {
                Some(b) => crate::suites::lowpass(&f, b),
                None => f,
            }
        };
        match self.data.kind {
            DataKind::Plane => {
                let amp = if self.data.amp_div > 0.0 {
                    self.data.amp_div
                } else {
                    self.data.amp_curl
                };
                plane_wave_state(
                    grid,
                    &self.material,
                    self.data.mode.unwrap(),
                    amp,
                    self.data.polarization.unwrap(),
                    self.data.traveling,
                )
            }
            DataKind::Rough => {
                let mut u = maybe_band(rough_random_field(
                    grid,
                    Rank::Vector3,
                    self.data.s_div,
                    1.0,
                    seed,
                )?);
                let norm = sobolev_norm(&u, self.data.s_div)?;
                let amp = self.data.amp_div.max(self.data.amp_curl);
                if norm > 0.0 {
                    u.scale(amp / norm);
                }
                State::new(u, Field::zeros(grid, Rank::Vector3), 0.0)
            }
            DataKind::Mixed => {
                let raw_div = maybe_band(rough_random_field(
                    grid,
                    Rank::Vector3,
                    self.data.s_div,
                    1.0,
                    seed ^ 0x9E37_79B9,
                )?);
                let raw_curl = maybe_band(rough_random_field(
                    grid,
                    Rank::Vector3,
                    self.data.s_curl,
                    1.0,
                    seed ^ 0x7F4A_7C15,
                )?);
                let (phi, _, _) = helmholtz_decompose(&raw_div)?;
                let (_, psi, _) = helmholtz_decompose(&raw_curl)?;
                let mut u = Field::zeros(grid, Rank::Vector3);
                if self.data.amp_div > 0.0 {
                    let norm = sobolev_norm(&phi, self.data.s_div)?;
                    if norm > 0.0 {
                        u.axpy(self.data.amp_div / norm, &phi);
                    }
                }
                if self.data.amp_curl > 0.0 {
                    let norm = sobolev_norm(&psi, self.data.s_curl)?;
                    if norm > 0.0 {
                        u.axpy(self.data.amp_curl / norm, &psi);
                    }
                }
                State::new(u, Field::zeros(grid, Rank::Vector3), 0.0)
            }
        }
    }

    /// Simulation options with out_stride rounded to whole steps of the
    /// initial CFL-bounded step.
    pub fn sim_options(&self) -> Result<SimOptions> {
        let state = self.initial_state()?;
        let dt = crate::evolve::cfl_dt(&state, &self.material, self.time.cfl_safety)?;
        let out_every = (self.time.out_stride / dt).round().max(1.0) as usize;
        Ok(SimOptions {
            t_end: self.time.t_end,
            cfl_safety: self.time.cfl_safety,
            out_every,
            force: self.force,
            blowup_factor: 10.0,
        })
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "grid": {"n": 16, "box_len": 6.283185307179586},
        "material": {"c1": 1.0, "c2": 0.5, "b_coef": 0.5, "gamma": []},
        "data": {"kind": "plane", "mode": [1, 0, 0], "polarization": "transverse", "amp_curl": 0.01},
        "time": {"t_end": 0.5, "out_stride": 0.1}
    }"#;

    #[test]
    fn minimal_config_parses_and_builds() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let state = cfg.initial_state().unwrap();
        assert!(state.u.max_abs() > 0.0);
        let opts = cfg.sim_options().unwrap();
        assert!(opts.out_every >= 1);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("\"checks\"", "\"zzz\"").replace(
            "\"time\"",
            "\"unknown_key\": 1, \"time\"",
        );
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn malformed_json_rejected() {
        assert!(RunConfig::from_json("{ not json").is_err());
    }

    #[test]
    fn degenerate_speeds_rejected() {
        let bad = MINIMAL.replace("\"c2\": 0.5", "\"c2\": 1.0");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn mixed_data_controls_parts_independently() {
        let json = r#"{
            "grid": {"n": 16, "box_len": 6.283185307179586},
            "material": {"c1": 1.0, "c2": 0.5, "b_coef": 0.5, "gamma": [0.4]},
            "data": {"kind": "mixed", "s_div": 2.6, "s_curl": 3.1,
                     "amp_div": 0.05, "amp_curl": 0.0, "seed": 7},
            "time": {"t_end": 0.5, "out_stride": 0.1}
        }"#;
        let cfg = RunConfig::from_json(json).unwrap();
        let state = cfg.initial_state().unwrap();
        // Pure divergence part: curl-free.
        let curl = crate::spectral::spectral_derivative(
            &state.u,
            crate::spectral::DerivKind::Curl,
        )
        .unwrap();
        assert!(curl.max_abs() <= 1e-10);
        let norm = sobolev_norm(&state.u, 2.6).unwrap();
        assert!((norm - 0.05).abs() <= 1e-9);
    }
}
