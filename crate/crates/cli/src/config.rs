use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fnsteg::codec::{CapacityPlan, DEFAULT_WARNING_FLOOR_DB};
use fnsteg::cover::CoverProvider;
use fnsteg::distort::Channel;
use fnsteg::nn::DecoderSpec;
use fnsteg::sps::SpsConfig;
use fnsteg::{Error, Result};

/// Where the cover comes from. The procedural variant takes its seed from
/// the key file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoverSource {
    Procedural { height: usize, width: usize },
    File { path: PathBuf },
}

impl CoverSource {
    pub fn provider(&self, cover_seed: u64) -> CoverProvider {
        match self {
            CoverSource::Procedural { height, width } => CoverProvider::procedural(cover_seed, *height, *width),
            CoverSource::File { path } => CoverProvider::FileBacked(path.clone()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    /// Per-receiver diagnostics of `embed`.
    pub diagnostics_csv: Option<PathBuf>,
    /// Per-iteration loss trace of `embed`.
    pub trace_csv: Option<PathBuf>,
}

/// Everything a run needs besides keys and images. Every field has a default
/// and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sps: SpsConfig,
    /// Bits per cover pixel: 6.0 or 1.5.
    pub capacity_bpp: CapacityPlan,
    /// Decoder architecture; `null` means the standard decoder for the plan.
    pub decoder: Option<DecoderSpec>,
    /// Adds the built-in high-frequency critic to the objective.
    pub critic: bool,
    pub robustness: Channel,
    pub cover: CoverSource,
    pub warning_floor_db: f64,
    pub outputs: OutputPaths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            sps: SpsConfig::default(),
            capacity_bpp: CapacityPlan::default(),
            decoder: None,
            critic: true,
            robustness: Channel::Lossless,
            cover: CoverSource::Procedural {
                height: 256,
                width: 256,
            },
            warning_floor_db: DEFAULT_WARNING_FLOOR_DB,
            outputs: OutputPaths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn decoder_spec(&self) -> DecoderSpec {
        self.decoder.clone().unwrap_or_else(|| self.capacity_bpp.decoder_spec())
    }

    pub fn validate(&self) -> Result<()> {
        self.sps.validate()?;
        self.capacity_bpp.check_decoder(&self.decoder_spec())?;
        if let Channel::JpegProxy { quality } = self.robustness {
            fnsteg::distort::JpegProxyConfig::new(quality)?;
        }
        if self.warning_floor_db.is_nan() {
            return Err(Error::Config("warning_floor_db is NaN".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_json() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.sps, SpsConfig::default());
        assert_eq!(c.capacity_bpp.bpp(), 6.0);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_json(r#"{"capacity_bpp": 1.5, "robustness": {"kind": "jpeg_proxy", "quality": 90}}"#)
            .unwrap();
        assert_eq!(c.capacity_bpp.strides(), [1, 2, 2]);
        assert_eq!(c.decoder_spec().stride_product(), 4);
        assert_eq!(c.sps.total_iters, 1500);
    }

    #[test]
    fn bad_files_rejected() {
        for text in [
            r#"{"unknown": 1}"#,
            r#"{"sps": {"epsilon": 2.0}}"#,
            r#"{"capacity_bpp": 3.0}"#,
            r#"{"robustness": {"kind": "jpeg_proxy", "quality": 0}}"#,
            r#"{"cover": {"kind": "procedural", "height": 64}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn decoder_must_match_capacity() {
        let mut c = RunConfig {
            decoder: Some(DecoderSpec::standard([1, 2, 2])),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        c.capacity_bpp = fnsteg::codec::plan_capacity(1.5).unwrap();
        c.validate().unwrap();
    }
}
