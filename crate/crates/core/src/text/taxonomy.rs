//! The fixed grouping of the 32 ED context labels into 8 coarse emotions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseEmotion {
    Excited,
    Afraid,
    Disgusted,
    Annoyed,
    Grateful,
    Disappointed,
    Impressed,
    Prepared,
}

pub const NUM_EMOTIONS: usize = 8;

impl CoarseEmotion {
    pub const ALL: [CoarseEmotion; NUM_EMOTIONS] = [
        CoarseEmotion::Excited,
        CoarseEmotion::Afraid,
        CoarseEmotion::Disgusted,
        CoarseEmotion::Annoyed,
        CoarseEmotion::Grateful,
        CoarseEmotion::Disappointed,
        CoarseEmotion::Impressed,
        CoarseEmotion::Prepared,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            CoarseEmotion::Excited => "excited",
            CoarseEmotion::Afraid => "afraid",
            CoarseEmotion::Disgusted => "disgusted",
            CoarseEmotion::Annoyed => "annoyed",
            CoarseEmotion::Grateful => "grateful",
            CoarseEmotion::Disappointed => "disappointed",
            CoarseEmotion::Impressed => "impressed",
            CoarseEmotion::Prepared => "prepared",
        }
    }

    pub fn labels() -> [&'static str; NUM_EMOTIONS] {
        Self::ALL.map(Self::label)
    }
}

impl fmt::Display for CoarseEmotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CoarseEmotion {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.label() == s)
            .ok_or_else(|| DataError::UnknownLabel(s.to_string()))
    }
}

/// `(coarse group, fine labels)` in group order.
const GROUPS: [(CoarseEmotion, &[&str]); NUM_EMOTIONS] = [
    (CoarseEmotion::Excited, &["excited", "surprised", "joyful"]),
    (CoarseEmotion::Afraid, &["afraid", "terrified", "anxious", "apprehensive"]),
    (CoarseEmotion::Disgusted, &["disgusted", "embarrassed", "guilty", "ashamed"]),
    (CoarseEmotion::Annoyed, &["angry", "annoyed", "jealous", "furious"]),
    (CoarseEmotion::Grateful, &["faithful", "trusting", "grateful", "caring", "hopeful"]),
    (
        CoarseEmotion::Disappointed,
        &["sad", "disappointed", "devastated", "lonely", "nostalgic", "sentimental"],
    ),
    (CoarseEmotion::Impressed, &["proud", "impressed", "content"]),
    (CoarseEmotion::Prepared, &["anticipating", "prepared", "confident"]),
];

/// Total map from the 32 fine labels onto [`CoarseEmotion`].
#[derive(Clone, Copy, Debug, Default)]
pub struct EmotionTaxonomy;

impl EmotionTaxonomy {
    pub fn fine_labels(&self) -> impl Iterator<Item = &'static str> {
        GROUPS.iter().flat_map(|(_, fine)| fine.iter().copied())
    }

    pub fn coarse_labels(&self) -> [&'static str; NUM_EMOTIONS] {
        CoarseEmotion::labels()
    }

    pub fn group(&self, coarse: CoarseEmotion) -> &'static [&'static str] {
        GROUPS[coarse.id()].1
    }

    pub fn coarse_of(&self, fine: &str) -> Result<CoarseEmotion, DataError> {
        GROUPS
            .iter()
            .find(|(_, members)| members.contains(&fine))
            .map(|(coarse, _)| *coarse)
            .ok_or_else(|| DataError::UnknownLabel(fine.to_string()))
    }

    pub fn is_fine_label(&self, label: &str) -> bool {
        self.coarse_of(label).is_ok()
    }
}

/// Coarse group of a fine ED label.
pub fn coarse_emotion(fine: &str, tax: &EmotionTaxonomy) -> Result<CoarseEmotion, DataError> {
    tax.coarse_of(fine)
}
