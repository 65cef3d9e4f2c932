use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CsclError;

/// The five stains. `HE` is the anchor modality; the rest are IHC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StainId {
    HE,
    HER2,
    KI67,
    ER,
    PGR,
}

impl StainId {
    pub const ALL: [StainId; 5] = [
        StainId::HE,
        StainId::HER2,
        StainId::KI67,
        StainId::ER,
        StainId::PGR,
    ];

    pub const IHC: [StainId; 4] = [StainId::HER2, StainId::KI67, StainId::ER, StainId::PGR];

    /// Wire code used by the bag format.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn is_anchor(self) -> bool {
        self == StainId::HE
    }

    pub fn name(self) -> &'static str {
        match self {
            StainId::HE => "HE",
            StainId::HER2 => "HER2",
            StainId::KI67 => "KI67",
            StainId::ER => "ER",
            StainId::PGR => "PGR",
        }
    }

    /// Position among the IHC stains (`None` for HE).
    pub fn ihc_index(self) -> Option<usize> {
        (self.code() as usize).checked_sub(1)
    }
}

impl fmt::Display for StainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StainId {
    type Err = CsclError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "HE" | "H&E" => Ok(StainId::HE),
            "HER2" => Ok(StainId::HER2),
            "KI67" => Ok(StainId::KI67),
            "ER" => Ok(StainId::ER),
            "PGR" | "PR" => Ok(StainId::PGR),
            _ => Err(CsclError::invalid(format!("unknown stain {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_round_trip() {
        for s in StainId::ALL {
            assert_eq!(StainId::from_code(s.code()), Some(s));
            assert_eq!(s.name().parse::<StainId>().unwrap(), s);
        }
        assert_eq!(StainId::from_code(5), None);
        assert_eq!("PR".parse::<StainId>().unwrap(), StainId::PGR);
        assert_eq!(StainId::HE.ihc_index(), None);
        assert_eq!(StainId::PGR.ihc_index(), Some(3));
    }
}
