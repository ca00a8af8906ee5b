//! Class labels and their encodings.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tissue type of an imaged core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CoreType {
    /// Adjacent (non-tumour) tissue, encoded 0.
    #[serde(rename = "AT")]
    Adjacent,
    /// Cancer, encoded 1.
    #[serde(rename = "CA")]
    Cancer,
}

impl CoreType {
    pub fn code(self) -> u8 {
        match self {
            CoreType::Adjacent => 0,
            CoreType::Cancer => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(CoreType::Adjacent),
            1 => Ok(CoreType::Cancer),
            other => Err(Error::Label(format!("unknown core type code {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CoreType::Adjacent => "AT",
            CoreType::Cancer => "CA",
        }
    }
}

impl fmt::Display for CoreType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Molecular subtype; the discriminant is the one-hot position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subtype {
    #[serde(rename = "LA")]
    LuminalA = 0,
    #[serde(rename = "LB")]
    LuminalB = 1,
    #[serde(rename = "HER2")]
    Her2 = 2,
    #[serde(rename = "TNBC")]
    TripleNegative = 3,
}

/// On-disk code for "no subtype" (adjacent tissue).
pub const SUBTYPE_NONE: u8 = 255;

impl Subtype {
    pub const ALL: [Subtype; 4] = [
        Subtype::LuminalA,
        Subtype::LuminalB,
        Subtype::Her2,
        Subtype::TripleNegative,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::Label(format!("subtype index {index} out of range")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Subtype::LuminalA => "LA",
            Subtype::LuminalB => "LB",
            Subtype::Her2 => "HER2",
            Subtype::TripleNegative => "TNBC",
        }
    }

    pub fn one_hot(self) -> [f32; 4] {
        let mut v = [0.0; 4];
        v[self.index()] = 1.0;
        v
    }
}

impl fmt::Display for Subtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LA" => Ok(Subtype::LuminalA),
            "LB" => Ok(Subtype::LuminalB),
            "HER2" => Ok(Subtype::Her2),
            "TNBC" => Ok(Subtype::TripleNegative),
            other => Err(Error::Label(format!("unknown subtype `{other}`"))),
        }
    }
}

pub fn subtype_code(subtype: Option<Subtype>) -> u8 {
    subtype.map(|s| s as u8).unwrap_or(SUBTYPE_NONE)
}

pub fn subtype_from_code(code: u8) -> Result<Option<Subtype>> {
    if code == SUBTYPE_NONE {
        Ok(None)
    } else {
        Subtype::from_index(code as usize).map(Some)
    }
}

/// Binary type label plus the subtype one-hot row (cancer cores only).
///
/// A cancer core must carry a subtype and an adjacent core must not.
pub fn encode_labels(
    core_type: CoreType,
    subtype: Option<Subtype>,
) -> Result<(u8, Option<[f32; 4]>)> {
    match (core_type, subtype) {
        (CoreType::Cancer, Some(s)) => Ok((1, Some(s.one_hot()))),
        (CoreType::Adjacent, None) => Ok((0, None)),
        (CoreType::Cancer, None) => Err(Error::Label("cancer core without a subtype".into())),
        (CoreType::Adjacent, Some(s)) => Err(Error::Label(format!(
            "adjacent-tissue core labelled with subtype {s}"
        ))),
    }
}
