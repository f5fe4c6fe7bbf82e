use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_CASCADES: usize = 2;
pub const MAX_CASCADES: usize = 5;

/// The four concatenative skip connections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipFlags {
    /// Early depth-encoder features into the output block.
    pub d_input: bool,
    /// Early color-encoder features (which carry the future frame) into
    /// the output block.
    pub cnext_input: bool,
    /// Encoder → decoder at half resolution.
    pub enc_dec_level1: bool,
    /// Encoder → decoder at quarter resolution. Inert at 2 cascades, where
    /// quarter resolution is the bottleneck itself.
    pub enc_dec_level2: bool,
}

impl SkipFlags {
    pub const ALL: SkipFlags = SkipFlags {
        d_input: true,
        cnext_input: true,
        enc_dec_level1: true,
        enc_dec_level2: true,
    };
    pub const NONE: SkipFlags = SkipFlags {
        d_input: false,
        cnext_input: false,
        enc_dec_level1: false,
        enc_dec_level2: false,
    };

    pub fn get(&self, id: SkipConnection) -> bool {
        match id {
            SkipConnection::DInput => self.d_input,
            SkipConnection::CnextInput => self.cnext_input,
            SkipConnection::EncDecLevel1 => self.enc_dec_level1,
            SkipConnection::EncDecLevel2 => self.enc_dec_level2,
        }
    }

    pub fn set(&mut self, id: SkipConnection, on: bool) {
        match id {
            SkipConnection::DInput => self.d_input = on,
            SkipConnection::CnextInput => self.cnext_input = on,
            SkipConnection::EncDecLevel1 => self.enc_dec_level1 = on,
            SkipConnection::EncDecLevel2 => self.enc_dec_level2 = on,
        }
    }
}

impl Default for SkipFlags {
    fn default() -> Self {
        SkipFlags::ALL
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SkipConnection {
    DInput,
    CnextInput,
    EncDecLevel1,
    EncDecLevel2,
}

impl SkipConnection {
    pub const ALL: [SkipConnection; 4] = [
        SkipConnection::DInput,
        SkipConnection::CnextInput,
        SkipConnection::EncDecLevel1,
        SkipConnection::EncDecLevel2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SkipConnection::DInput => "skip_D_input",
            SkipConnection::CnextInput => "skip_Cnext_input",
            SkipConnection::EncDecLevel1 => "skip_enc_dec_level1",
            SkipConnection::EncDecLevel2 => "skip_enc_dec_level2",
        }
    }
}

impl fmt::Display for SkipConnection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<SkipConnection> for String {
    fn from(id: SkipConnection) -> String {
        id.as_str().to_string()
    }
}

impl TryFrom<String> for SkipConnection {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for SkipConnection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SkipConnection::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s) || id.as_str()[5..].eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown skip connection {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub cascades: usize,
    pub base_filters: usize,
    pub input_h: usize,
    pub input_w: usize,
    #[serde(default)]
    pub skips: SkipFlags,
    #[serde(default)]
    pub separable: bool,
    #[serde(default = "default_bottleneck_convs")]
    pub bottleneck_convs: usize,
}

fn default_bottleneck_convs() -> usize {
    2
}

impl NetworkConfig {
    /// Desk-scale defaults: 3 cascades on the 96×54 center crop of a
    /// 192×108 frame.
    pub fn desk_default() -> Self {
        NetworkConfig {
            cascades: 3,
            base_filters: 8,
            input_h: 54,
            input_w: 96,
            skips: SkipFlags::ALL,
            separable: false,
            bottleneck_convs: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(MIN_CASCADES..=MAX_CASCADES).contains(&self.cascades) {
            return Err(Error::config(format!(
                "cascades must be in [{MIN_CASCADES}, {MAX_CASCADES}], got {}",
                self.cascades
            )));
        }
        if self.base_filters < 4 {
            return Err(Error::config(format!(
                "base_filters must be at least 4, got {}",
                self.base_filters
            )));
        }
        if self.bottleneck_convs == 0 {
            return Err(Error::config("bottleneck_convs must be at least 1"));
        }
        let min = 1usize << self.cascades;
        if self.input_h < min || self.input_w < min {
            return Err(Error::config(format!(
                "input {}x{} too small for {} cascades (need >= {min} per axis)",
                self.input_w, self.input_h, self.cascades
            )));
        }
        Ok(())
    }

    /// Filters at encoder/decoder level `k` (level `cascades` is the bottleneck).
    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    /// `(h, w)` after `level` floor-halvings.
    pub fn level_dims(&self, level: usize) -> (usize, usize) {
        (self.input_h >> level, self.input_w >> level)
    }

    pub fn bottleneck_dims(&self) -> (usize, usize) {
        self.level_dims(self.cascades)
    }

    pub fn with_input(self, input_h: usize, input_w: usize) -> Self {
        NetworkConfig {
            input_h,
            input_w,
            ..self
        }
    }

    /// Whether a decoder level receives encoder features from both encoders.
    pub(crate) fn enc_dec_skip(&self, level: usize) -> bool {
        match level {
            1 => self.skips.enc_dec_level1,
            2 => self.skips.enc_dec_level2,
            _ => false,
        }
    }

    /// Same config with one skip connection removed.
    pub fn ablate(&self, drop: &str) -> Result<Self> {
        let id: SkipConnection = drop.parse()?;
        let mut out = *self;
        out.skips.set(id, false);
        Ok(out)
    }

    pub(crate) fn diff(&self, other: &NetworkConfig) -> Vec<String> {
        let mut out = Vec::new();
        let mut cmp = |name: &str, a: String, b: String| {
            if a != b {
                out.push(format!("{name} (file {a}, expected {b})"));
            }
        };
        cmp("cascades", self.cascades.to_string(), other.cascades.to_string());
        cmp("base_filters", self.base_filters.to_string(), other.base_filters.to_string());
        cmp("input_h", self.input_h.to_string(), other.input_h.to_string());
        cmp("input_w", self.input_w.to_string(), other.input_w.to_string());
        for id in SkipConnection::ALL {
            cmp(id.as_str(), self.skips.get(id).to_string(), other.skips.get(id).to_string());
        }
        cmp("separable", self.separable.to_string(), other.separable.to_string());
        cmp(
            "bottleneck_convs",
            self.bottleneck_convs.to_string(),
            other.bottleneck_convs.to_string(),
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_hd_bottleneck() {
        let cfg = NetworkConfig {
            cascades: 5,
            input_h: 540,
            input_w: 960,
            ..NetworkConfig::desk_default()
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.bottleneck_dims(), (16, 30));
        let small = NetworkConfig {
            cascades: 2,
            input_h: 64,
            input_w: 64,
            ..cfg
        };
        assert_eq!(small.bottleneck_dims(), (16, 16));
    }

    #[test]
    fn invalid_configs() {
        let base = NetworkConfig::desk_default();
        assert!(NetworkConfig { cascades: 6, ..base }.validate().is_err());
        assert!(NetworkConfig { cascades: 1, ..base }.validate().is_err());
        assert!(NetworkConfig { input_h: 7, ..base }.validate().is_err());
        assert!(NetworkConfig { base_filters: 3, ..base }.validate().is_err());
    }

    #[test]
    fn ablate_and_restore() {
        let base = NetworkConfig::desk_default();
        let a = base.ablate("skip_D_input").unwrap();
        assert!(!a.skips.d_input);
        assert_eq!(a.skips.cnext_input, base.skips.cnext_input);
        let mut back = a;
        back.skips.set(SkipConnection::DInput, true);
        assert_eq!(back, base);
        assert!(matches!(base.ablate("skip_nowhere"), Err(Error::Config(_))));
        assert!(base.ablate("enc_dec_level2").is_ok());
    }
}
