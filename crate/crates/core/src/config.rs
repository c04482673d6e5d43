//! System configuration.
//!
//! Every field defaults to the reference setup (20 users, at most 10
//! simultaneous streams, 8x2 UPA at 28 GHz, 32x8 grid of beams). Files are
//! TOML and may name a base file through a top-level `extends` key; keys in
//! the extending file override the base table by table.

use crate::error::ConfigError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of users `I`.
    pub num_users: usize,
    /// Maximum number of simultaneously served users.
    pub n_max: usize,
    /// RF chains at the base station.
    pub n_rf: usize,
    /// Transmit power budget in watts.
    pub power_w: f64,
    /// Receiver noise variance in watts, identical for every user.
    pub noise_w: f64,
    /// EMA weight of the cumulative rate.
    pub delta: f64,
    /// Short blocks per long block.
    pub n_s: usize,
    /// Short blocks per episode.
    pub steps: usize,
    /// Master seed.
    pub seed: u64,
    pub array: ArrayConfig,
    pub codebook: CodebookConfig,
    pub geometry: GeometryConfig,
    pub channel: ChannelConfig,
    pub scheduler: SchedulerConfig,
    pub ml: MlConfig,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArrayConfig {
    pub n_x: usize,
    pub n_y: usize,
    pub spacing_wavelengths: f64,
    pub downtilt_deg: f64,
    pub carrier_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodebookConfig {
    pub n_az: usize,
    pub n_el: usize,
    pub az_range_deg: [f64; 2],
    pub el_range_deg: [f64; 2],
    /// Upper bound on stored complex beam entries.
    pub max_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub bs_height_m: f64,
    pub user_height_m: f64,
    pub cell_radius_m: f64,
    pub min_distance_m: f64,
    pub speed_kmh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub clusters: usize,
    pub subpaths: usize,
    /// RMS angular spread of the sub-paths around their cluster centre.
    pub angular_spread_deg: f64,
    /// Cluster power decay parameters: `U^(r-1) * 10^(-Z/10)`, `Z ~ N(0, zeta^2)`.
    pub cluster_power_r: f64,
    pub cluster_power_zeta_db: f64,
    /// Path loss in dB is `intercept + 10 * exponent * log10(d)`.
    pub pathloss_intercept_db: f64,
    pub pathloss_exponent: f64,
    pub block_duration_s: f64,
    /// When false, path gains stay frozen across short blocks.
    pub gain_evolution: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Upper bound on subsets one exhaustive search may evaluate; the CLI
    /// applies it to the total over all slots of an episode.
    pub exhaustive_cap: u64,
    /// Reject ZF over sets whose effective channel matrix is worse conditioned.
    pub max_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlConfig {
    pub hidden: Vec<usize>,
    pub input_mode: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_episodes: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Relabel users randomly in each training sample.
    pub permute_users: bool,
    /// Log-compress the weight and channel-magnitude input blocks.
    pub log_inputs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub test_episodes: usize,
    pub out_dir: String,
    pub keep_slots: bool,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_users: 20,
            n_max: 10,
            n_rf: 10,
            power_w: 2.0,
            noise_w: 1e-15,
            delta: 0.1,
            n_s: 40,
            steps: 120,
            seed: 1,
            array: ArrayConfig::default(),
            codebook: CodebookConfig::default(),
            geometry: GeometryConfig::default(),
            channel: ChannelConfig::default(),
            scheduler: SchedulerConfig::default(),
            ml: MlConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_x: 8,
            n_y: 2,
            spacing_wavelengths: 0.5,
            downtilt_deg: 10.0,
            carrier_hz: 28e9,
        }
    }
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            n_az: 32,
            n_el: 8,
            az_range_deg: [-180.0, 180.0],
            el_range_deg: [-30.0, 30.0],
            max_entries: 1 << 26,
        }
    }
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            bs_height_m: 7.0,
            user_height_m: 1.5,
            cell_radius_m: 100.0,
            min_distance_m: 10.0,
            speed_kmh: 4.0,
        }
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            clusters: 3,
            subpaths: 5,
            angular_spread_deg: 5.0,
            cluster_power_r: 2.8,
            cluster_power_zeta_db: 4.0,
            pathloss_intercept_db: 72.0,
            pathloss_exponent: 2.9,
            block_duration_s: 1e-3,
            gain_evolution: true,
        }
    }
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            exhaustive_cap: 2_000_000,
            max_condition: 1e12,
        }
    }
}

impl Default for MlConfig {
    fn default() -> Self {
        Self {
            hidden: vec![500, 200],
            input_mode: "W+C(W)".to_string(),
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            epochs: 50,
            train_episodes: 500,
            holdout_fraction: 0.05,
            seed: 17,
            permute_users: true,
            log_inputs: true,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            test_episodes: 200,
            out_dir: "out".to_string(),
            keep_slots: false,
        }
    }
}

impl SystemConfig {
    pub fn n_bs(&self) -> usize {
        self.array.n_x * self.array.n_y
    }

    pub fn wavelength_m(&self) -> f64 {
        299_792_458.0 / self.array.carrier_hz
    }

    pub fn speed_mps(&self) -> f64 {
        self.geometry.speed_kmh / 3.6
    }

    /// Loads a config file, resolving `extends` chains relative to each file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let table = load_table(path.as_ref(), &mut Vec::new())?;
        let cfg: SystemConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse {
                    path: path.as_ref().display().to_string(),
                    message: e.to_string(),
                })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: SystemConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.num_users == 0 {
            return bad("num_users must be at least 1");
        }
        if self.n_max == 0 {
            return bad("n_max must be at least 1");
        }
        if self.n_max > self.n_rf {
            return bad("n_max must not exceed n_rf");
        }
        if !(self.power_w > 0.0) || !(self.noise_w > 0.0) {
            return bad("power_w and noise_w must be positive");
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad("delta must lie in [0, 1]");
        }
        if self.n_s == 0 || self.steps == 0 {
            return bad("n_s and steps must be at least 1");
        }
        if self.array.n_x == 0 || self.array.n_y == 0 {
            return bad("array dimensions must be at least 1");
        }
        if !(self.array.spacing_wavelengths > 0.0) || !(self.array.carrier_hz > 0.0) {
            return bad("element spacing and carrier frequency must be positive");
        }
        if self.codebook.n_az == 0 || self.codebook.n_el == 0 {
            return bad("codebook grid must be at least 1x1");
        }
        let g = &self.geometry;
        if !(g.cell_radius_m > 0.0) {
            return bad("cell_radius_m must be positive");
        }
        if !(g.min_distance_m >= 0.0 && g.min_distance_m < g.cell_radius_m) {
            return bad("min_distance_m must lie in [0, cell_radius_m)");
        }
        if !(g.speed_kmh >= 0.0) {
            return bad("speed_kmh must be non-negative");
        }
        let c = &self.channel;
        if c.clusters == 0 || c.subpaths == 0 {
            return bad("clusters and subpaths must be at least 1");
        }
        if !(c.block_duration_s >= 0.0) || !(c.angular_spread_deg >= 0.0) {
            return bad("block duration and angular spread must be non-negative");
        }
        if self.ml.hidden.is_empty() || self.ml.hidden.contains(&0) {
            return bad("ml.hidden needs at least one non-empty layer");
        }
        if self.ml.input_mode.parse::<crate::ml::InputMode>().is_err() {
            return Err(ConfigError::Invalid(format!(
                "ml.input_mode `{}` is not a `+`-joined list of W, C(D), C(W), C(R/I), B",
                self.ml.input_mode
            )));
        }
        if self.ml.batch_size == 0 {
            return bad("ml.batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.ml.holdout_fraction) {
            return bad("ml.holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

fn load_table(path: &Path, chain: &mut Vec<PathBuf>) -> Result<toml::Table, ConfigError> {
    let canonical = path.canonicalize().map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if chain.contains(&canonical) {
        return Err(ConfigError::Invalid(format!(
            "extends cycle through {}",
            path.display()
        )));
    }
    chain.push(canonical);
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
    match table.remove("extends") {
        None => Ok(table),
        Some(toml::Value::String(base)) => {
            let base_path = path.parent().unwrap_or(Path::new(".")).join(base);
            let mut merged = load_table(&base_path, chain)?;
            merge_tables(&mut merged, table);
            Ok(merged)
        }
        Some(_) => Err(ConfigError::Invalid(
            "`extends` must be a string path".into(),
        )),
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_match_reference_setup() {
        let c = SystemConfig::default();
        assert_eq!((c.num_users, c.n_max, c.n_bs()), (20, 10, 16));
        assert_eq!(c.codebook.n_az * c.codebook.n_el, 256);
        assert_eq!((c.power_w, c.noise_w, c.delta), (2.0, 1e-15, 0.1));
        assert_eq!((c.n_s, c.steps), (40, 120));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn extends_overrides_nested_keys() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("base.toml");
        let child = dir.path().join("child.toml");
        std::fs::File::create(&base)
            .unwrap()
            .write_all(b"num_users = 8\n[geometry]\ncell_radius_m = 50.0\nspeed_kmh = 3.0\n")
            .unwrap();
        std::fs::File::create(&child)
            .unwrap()
            .write_all(
                b"extends = \"base.toml\"\nn_max = 4\nn_rf = 4\n[geometry]\nspeed_kmh = 30.0\n",
            )
            .unwrap();
        let c = SystemConfig::load(&child).unwrap();
        assert_eq!(c.num_users, 8);
        assert_eq!(c.n_max, 4);
        assert_eq!(c.geometry.cell_radius_m, 50.0);
        assert_eq!(c.geometry.speed_kmh, 30.0);
    }

    #[test]
    fn extends_cycle_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.toml");
        let b = dir.path().join("b.toml");
        std::fs::write(&a, "extends = \"b.toml\"\n").unwrap();
        std::fs::write(&b, "extends = \"a.toml\"\n").unwrap();
        assert!(matches!(
            SystemConfig::load(&a),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(SystemConfig::from_toml_str("num_users = 0").is_err());
        assert!(SystemConfig::from_toml_str("[geometry]\ncell_radius_m = -1.0").is_err());
        assert!(SystemConfig::from_toml_str("n_max = 12").is_err());
        assert!(SystemConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn serialisation_round_trips() {
        let c = SystemConfig::default();
        assert_eq!(SystemConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}
