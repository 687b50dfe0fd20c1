//! The fifteen canonical body regions.

use std::fmt;

use crate::error::{Error, Result};

pub const NUM_PARTS: usize = 15;

/// A per-part probability vector.
pub type Semantic = [f64; NUM_PARTS];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Part {
    Head = 0,
    Neck = 1,
    Torso = 2,
    LeftUpperArm = 3,
    RightUpperArm = 4,
    LeftForearm = 5,
    RightForearm = 6,
    LeftHand = 7,
    RightHand = 8,
    LeftThigh = 9,
    RightThigh = 10,
    LeftCalf = 11,
    RightCalf = 12,
    LeftFoot = 13,
    RightFoot = 14,
}

impl Part {
    pub const ALL: [Part; NUM_PARTS] = [
        Part::Head,
        Part::Neck,
        Part::Torso,
        Part::LeftUpperArm,
        Part::RightUpperArm,
        Part::LeftForearm,
        Part::RightForearm,
        Part::LeftHand,
        Part::RightHand,
        Part::LeftThigh,
        Part::RightThigh,
        Part::LeftCalf,
        Part::RightCalf,
        Part::LeftFoot,
        Part::RightFoot,
    ];

    pub fn from_index(index: usize) -> Result<Part> {
        Part::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("part id {index} outside [0, 14]")))
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Part::Head => "head",
            Part::Neck => "neck",
            Part::Torso => "torso",
            Part::LeftUpperArm => "left-upper-arm",
            Part::RightUpperArm => "right-upper-arm",
            Part::LeftForearm => "left-forearm",
            Part::RightForearm => "right-forearm",
            Part::LeftHand => "left-hand",
            Part::RightHand => "right-hand",
            Part::LeftThigh => "left-thigh",
            Part::RightThigh => "right-thigh",
            Part::LeftCalf => "left-calf",
            Part::RightCalf => "right-calf",
            Part::LeftFoot => "left-foot",
            Part::RightFoot => "right-foot",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn one_hot(part: usize) -> Semantic {
    let mut v = [0.0; NUM_PARTS];
    v[part] = 1.0;
    v
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
