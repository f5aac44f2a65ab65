//! Experiment configuration file: flat sectioned TOML with strict key
//! checking. Every run directory receives a fully resolved snapshot that
//! reproduces the run.

use riskshape::agents::{DdpgConfig, DqnConfig, PpoConfig};
use riskshape::env::ObsMode;
use riskshape::reward::{Preset, RewardConfig};
use riskshape::world::WorldConfig;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub reward: RewardSection,
    pub agent: AgentSection,
    pub harness: HarnessSection,
    pub output: OutputSection,
}

/// Either a preset name or all eight explicit constants; mixing is rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_exp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_obs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_out: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_alive: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_eps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_out_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_up: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_down: Option<f64>,
}

impl RewardSection {
    fn explicit_keys(&self) -> usize {
        [
            self.r_exp.is_some(),
            self.r_obs.is_some(),
            self.r_out.is_some(),
            self.r_alive.is_some(),
            self.n_eps.is_some(),
            self.t_out_s.is_some(),
            self.r_up.is_some(),
            self.r_down.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count()
    }

    /// Resolves to a validated config. A `--reward` flag wins over the
    /// section's preset name; explicit keys exclude any preset.
    pub fn resolve(&self, flag: Option<&str>) -> Result<(RewardConfig, Option<Preset>), String> {
        let explicit = self.explicit_keys();
        if explicit > 0 {
            if self.preset.is_some() || flag.is_some() {
                return Err(
                    "reward section mixes a preset with explicit keys; use one or the other"
                        .to_string(),
                );
            }
            if explicit < 8 {
                return Err(format!(
                    "explicit reward config needs all 8 keys (r_exp, r_obs, r_out, r_alive, \
                     n_eps, t_out_s, r_up, r_down); found {explicit}"
                ));
            }
            let config = RewardConfig {
                r_exp: self.r_exp.unwrap(),
                r_obs: self.r_obs.unwrap(),
                r_out: self.r_out.unwrap(),
                r_alive: self.r_alive.unwrap(),
                n_eps: self.n_eps.unwrap(),
                t_out_s: self.t_out_s.unwrap(),
                r_up: self.r_up.unwrap(),
                r_down: self.r_down.unwrap(),
            };
            config.validate().map_err(|e| e.to_string())?;
            return Ok((config, None));
        }
        let name = flag
            .or(self.preset.as_deref())
            .unwrap_or("default");
        let preset = Preset::from_str(name).map_err(|e| e.to_string())?;
        Ok((preset.config(), Some(preset)))
    }

    /// Fully materialized form (all eight keys) for run snapshots.
    pub fn resolved(config: &RewardConfig) -> RewardSection {
        RewardSection {
            preset: None,
            r_exp: Some(config.r_exp),
            r_obs: Some(config.r_obs),
            r_out: Some(config.r_out),
            r_alive: Some(config.r_alive),
            n_eps: Some(config.n_eps),
            t_out_s: Some(config.t_out_s),
            r_up: Some(config.r_up),
            r_down: Some(config.r_down),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub dqn: DqnConfig,
    pub ddpg: DdpgConfig,
    pub ppo: PpoConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessSection {
    pub episodes: usize,
    pub eval_episodes: usize,
    pub eval_base_seed: u64,
    /// "features" or "raster:N" with N a divisor of 96.
    pub observation: String,
    pub trace: bool,
    pub seeds: Vec<u64>,
}

impl Default for HarnessSection {
    fn default() -> Self {
        HarnessSection {
            episodes: 500,
            eval_episodes: 100,
            eval_base_seed: 1_000_000,
            observation: "features".to_string(),
            trace: false,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl HarnessSection {
    pub fn obs_mode(&self) -> Result<ObsMode, String> {
        parse_obs_mode(&self.observation)
    }
}

pub fn parse_obs_mode(s: &str) -> Result<ObsMode, String> {
    if s == "features" {
        return Ok(ObsMode::Features);
    }
    if let Some(size) = s.strip_prefix("raster:") {
        let size: usize = size
            .parse()
            .map_err(|_| format!("bad raster size in observation '{s}'"))?;
        if size == 0 || 96 % size != 0 {
            return Err(format!("raster size {size} must divide 96"));
        }
        return Ok(ObsMode::Raster { size });
    }
    Err(format!(
        "unknown observation '{s}' (expected 'features' or 'raster:N')"
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "runs".to_string(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<ExperimentConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Snapshot with the reward section materialized to explicit keys.
    pub fn resolved_snapshot(&self, reward: &RewardConfig) -> ExperimentConfig {
        let mut resolved = self.clone();
        resolved.reward = RewardSection::resolved(reward);
        resolved
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_resolves_to_defaults() {
        let cfg: ExperimentConfig = toml::from_str("").unwrap();
        let (reward, preset) = cfg.reward.resolve(None).unwrap();
        assert_eq!(preset, Some(Preset::Default));
        assert_eq!(reward, Preset::Default.config());
        assert_eq!(cfg.harness.episodes, 500);
    }

    #[test]
    fn flag_overrides_section_preset() {
        let cfg: ExperimentConfig = toml::from_str("[reward]\npreset = \"default\"\n").unwrap();
        let (reward, preset) = cfg.reward.resolve(Some("reshaped")).unwrap();
        assert_eq!(preset, Some(Preset::Reshaped));
        assert_eq!(reward.r_out, -200.0);
    }

    #[test]
    fn explicit_keys_require_all_eight() {
        let cfg: ExperimentConfig = toml::from_str("[reward]\nr_exp = 2.0\n").unwrap();
        assert!(cfg.reward.resolve(None).is_err());
    }

    #[test]
    fn mixing_preset_and_keys_rejected() {
        let text = "[reward]\npreset = \"default\"\nr_exp = 2.0\n";
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert!(cfg.reward.resolve(None).is_err());
    }

    #[test]
    fn explicit_reward_validates_signs() {
        let text = "[reward]\nr_exp = -2.0\nr_obs = -600.0\nr_out = -1.0\nr_alive = -1.0\n\
                    n_eps = 700\nt_out_s = 5.0\nr_up = 3000.0\nr_down = -400.0\n";
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert!(cfg.reward.resolve(None).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[reward]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[world]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("[nonexistent]\nx = 1\n").is_err());
    }

    #[test]
    fn snapshot_round_trips_and_shows_reshaped_constants() {
        let cfg = ExperimentConfig::default();
        let snapshot = cfg.resolved_snapshot(&Preset::Reshaped.config());
        let text = snapshot.to_toml();
        assert!(text.contains("r_exp = 1.4"));
        assert!(text.contains("r_out = -200"));
        assert!(text.contains("n_eps = 1200"));
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, snapshot);
    }

    #[test]
    fn observation_strings_parse() {
        assert_eq!(parse_obs_mode("features").unwrap(), ObsMode::Features);
        assert_eq!(
            parse_obs_mode("raster:24").unwrap(),
            ObsMode::Raster { size: 24 }
        );
        assert!(parse_obs_mode("raster:25").is_err());
        assert!(parse_obs_mode("pixels").is_err());
    }
}
