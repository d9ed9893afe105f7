use std::fmt;
use std::str::FromStr;

use crate::env::EnvError;

/// Which built-in environment a modification applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvFamily {
    LaneRacer,
    Dodge,
}

impl fmt::Display for EnvFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvFamily::LaneRacer => "lane-racer",
            EnvFamily::Dodge => "dodge",
        })
    }
}

/// Rendering-only change to an environment. Dynamics and rewards never depend
/// on these.
#[derive(Clone, Debug, PartialEq)]
pub enum EnvModification {
    /// Per-episode offsets drawn from `U[-max_offset, max_offset]`, added to
    /// the lane and grass base colors.
    ColorPerturb { max_offset: f64 },
    /// Black bars on both sides, each covering `width_fraction` of the frame.
    VerticalBars { width_fraction: f64 },
    /// A red disc at a fixed screen position up and to the right of the car.
    BackgroundBlob { radius: f64 },
    /// Walls drawn to the top of the frame.
    HigherWalls,
    /// Different floor checkerboard.
    FloorTexture,
    /// Opaque labeled box in the top band.
    HoverText { text: String },
}

impl EnvModification {
    pub const NAMES: [&'static str; 6] = [
        "color-perturb",
        "vertical-bars",
        "background-blob",
        "higher-walls",
        "floor-texture",
        "hover-text",
    ];

    pub fn color_perturb() -> Self {
        EnvModification::ColorPerturb { max_offset: 0.2 }
    }

    pub fn vertical_bars() -> Self {
        EnvModification::VerticalBars { width_fraction: 0.075 }
    }

    pub fn background_blob() -> Self {
        EnvModification::BackgroundBlob { radius: 6.0 }
    }

    pub fn hover_text() -> Self {
        EnvModification::HoverText { text: "HELLO".to_string() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvModification::ColorPerturb { .. } => "color-perturb",
            EnvModification::VerticalBars { .. } => "vertical-bars",
            EnvModification::BackgroundBlob { .. } => "background-blob",
            EnvModification::HigherWalls => "higher-walls",
            EnvModification::FloorTexture => "floor-texture",
            EnvModification::HoverText { .. } => "hover-text",
        }
    }

    pub fn family(&self) -> EnvFamily {
        match self {
            EnvModification::ColorPerturb { .. }
            | EnvModification::VerticalBars { .. }
            | EnvModification::BackgroundBlob { .. } => EnvFamily::LaneRacer,
            EnvModification::HigherWalls
            | EnvModification::FloorTexture
            | EnvModification::HoverText { .. } => EnvFamily::Dodge,
        }
    }

    /// Default modifications for a family, in table order.
    pub fn defaults_for(family: EnvFamily) -> Vec<EnvModification> {
        match family {
            EnvFamily::LaneRacer => vec![
                Self::color_perturb(),
                Self::vertical_bars(),
                Self::background_blob(),
            ],
            EnvFamily::Dodge => vec![
                EnvModification::HigherWalls,
                EnvModification::FloorTexture,
                Self::hover_text(),
            ],
        }
    }

    pub(crate) fn check_family(&self, family: EnvFamily) -> Result<(), EnvError> {
        if self.family() != family {
            return Err(EnvError::Config(format!(
                "modification {} applies to {}, not {}",
                self.name(),
                self.family(),
                family
            )));
        }
        match self {
            EnvModification::ColorPerturb { max_offset } if !(0.0..=1.0).contains(max_offset) => {
                Err(EnvError::Config(format!("color offset {max_offset} outside [0, 1]")))
            }
            EnvModification::VerticalBars { width_fraction } if !(0.0..0.5).contains(width_fraction) => {
                Err(EnvError::Config(format!("bar width fraction {width_fraction} outside [0, 0.5)")))
            }
            EnvModification::BackgroundBlob { radius } if !(*radius > 0.0 && radius.is_finite()) => {
                Err(EnvError::Config(format!("blob radius {radius} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for EnvModification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvModification {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "color-perturb" | "colorperturb" => Self::color_perturb(),
            "vertical-bars" | "verticalbars" => Self::vertical_bars(),
            "background-blob" | "backgroundblob" => Self::background_blob(),
            "higher-walls" | "higherwalls" => EnvModification::HigherWalls,
            "floor-texture" | "floortexture" => EnvModification::FloorTexture,
            "hover-text" | "hovertext" => Self::hover_text(),
            _ => {
                return Err(EnvError::Config(format!(
                    "unknown modification {s:?}; expected one of {}",
                    Self::NAMES.join(", ")
                )))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for name in EnvModification::NAMES {
            let m: EnvModification = name.parse().unwrap();
            assert_eq!(m.name(), name);
        }
        assert!("bogus".parse::<EnvModification>().is_err());
    }

    #[test]
    fn family_mismatch_is_config_error() {
        let err = EnvModification::HigherWalls.check_family(EnvFamily::LaneRacer).unwrap_err();
        assert!(matches!(err, EnvError::Config(_)));
        assert!(EnvModification::vertical_bars().check_family(EnvFamily::LaneRacer).is_ok());
    }
}
