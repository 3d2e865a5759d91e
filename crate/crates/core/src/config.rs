//! The flat detector configuration shared by the CLI and host bindings:
//!
//! ```json
//! {"construction": "average", "g": "neglog", "gamma": 0.5, "lambda": 0.5,
//!  "variant": "ea2", "alpha": 0.05, "beta": 0.0, "horizon": null}
//! ```

use serde::{Deserialize, Serialize};

use crate::calibrators::{FixedKind, OgVariant};
use crate::eprocess::{Construction, EProcessState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructionKind {
    Nonadaptive,
    WeightAdaptive,
    Og,
    Average,
}

impl std::str::FromStr for ConstructionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonadaptive" => Ok(Self::Nonadaptive),
            "weight-adaptive" => Ok(Self::WeightAdaptive),
            "og" => Ok(Self::Og),
            "average" => Ok(Self::Average),
            other => Err(Error::param(
                "construction",
                format!("unknown detector `{other}` (expected nonadaptive|weight-adaptive|og|average)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub construction: ConstructionKind,
    pub g: FixedKind,
    pub gamma: f64,
    pub lambda: f64,
    pub variant: OgVariant,
    pub range: Option<(f64, f64)>,
    pub alpha: f64,
    pub beta: f64,
    pub horizon: Option<u64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            construction: ConstructionKind::Average,
            g: FixedKind::NegLog,
            gamma: 0.5,
            lambda: 0.5,
            variant: OgVariant::Ea2,
            range: None,
            alpha: 0.05,
            beta: 0.0,
            horizon: None,
        }
    }
}

impl DetectorConfig {
    pub fn construction(&self) -> Construction {
        let wa = Construction::WeightAdaptive {
            g: self.g,
            gamma: self.gamma,
        };
        let og = Construction::Og {
            variant: self.variant,
            range: self.range,
        };
        match self.construction {
            ConstructionKind::Nonadaptive => Construction::Nonadaptive {
                g: self.g,
                lambda: self.lambda,
            },
            ConstructionKind::WeightAdaptive => wa,
            ConstructionKind::Og => og,
            ConstructionKind::Average => Construction::Average {
                components: vec![(0.5, wa), (0.5, og)],
            },
        }
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::param("beta", format!("must lie in [0, 1), got {}", self.beta)));
        }
        if self.horizon == Some(0) {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::param("lambda", format!("must lie in [0, 1], got {}", self.lambda)));
        }
        self.construction().validate()
    }

    pub fn build(&self) -> Result<EProcessState> {
        self.validate()?;
        EProcessState::new(self.construction(), self.alpha, self.beta, self.horizon)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_recommended_average() {
        let cfg = DetectorConfig::default();
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.construction(), Construction::recommended_average());
        let d = cfg.build().unwrap();
        assert_eq!(d.t(), 0);
    }

    #[test]
    fn json_defaults_and_errors_name_fields() {
        let cfg = DetectorConfig::from_json(r#"{"construction":"og","variant":"ea"}"#).unwrap();
        assert_eq!(cfg.variant, OgVariant::Ea);
        let err = DetectorConfig::from_json(r#"{"alpha":2}"#).unwrap_err();
        assert!(err.to_string().contains("alpha"), "{err}");
        let err = DetectorConfig::from_json(r#"{"gamma":0}"#).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        let err = DetectorConfig::from_json(r#"{"range":[2.0,3.0]}"#).unwrap_err();
        assert!(err.to_string().contains("range"), "{err}");
        assert!(DetectorConfig::from_json(r#"{"bogus":1}"#).is_err());
    }
}
