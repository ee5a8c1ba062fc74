//! The label space: eighteen persuasion techniques plus the "no technique"
//! class used by the token-level classifier.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Number of output classes per token (18 techniques + `NoTechnique`).
pub const NUM_CLASSES: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TechniqueLabel {
    NoTechnique,
    LoadedLanguage,
    NameCalling,
    Repetition,
    Exaggeration,
    Doubt,
    AppealToFear,
    FlagWaving,
    CausalOversimplification,
    Slogans,
    AppealToAuthority,
    BlackAndWhiteFallacy,
    Obfuscation,
    ThoughtTerminatingCliches,
    Whataboutism,
    ReductioAdHitlerum,
    RedHerring,
    Bandwagon,
    StrawMan,
}

use TechniqueLabel::*;

impl TechniqueLabel {
    /// All 19 labels in class-index order.
    pub const ALL: [TechniqueLabel; NUM_CLASSES] = [
        NoTechnique,
        LoadedLanguage,
        NameCalling,
        Repetition,
        Exaggeration,
        Doubt,
        AppealToFear,
        FlagWaving,
        CausalOversimplification,
        Slogans,
        AppealToAuthority,
        BlackAndWhiteFallacy,
        Obfuscation,
        ThoughtTerminatingCliches,
        Whataboutism,
        ReductioAdHitlerum,
        RedHerring,
        Bandwagon,
        StrawMan,
    ];

    /// Iterator over the 18 real techniques (everything except `NoTechnique`).
    pub fn techniques() -> impl Iterator<Item = TechniqueLabel> {
        Self::ALL[1..].iter().copied()
    }

    /// Position of this label in the classifier's output vector.
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn is_technique(self) -> bool {
        self != NoTechnique
    }

    /// Stable identifier used in files and on the wire.
    pub fn id(self) -> &'static str {
        match self {
            NoTechnique => "no_technique",
            LoadedLanguage => "loaded_language",
            NameCalling => "name_calling",
            Repetition => "repetition",
            Exaggeration => "exaggeration",
            Doubt => "doubt",
            AppealToFear => "appeal_to_fear",
            FlagWaving => "flag_waving",
            CausalOversimplification => "causal_oversimplification",
            Slogans => "slogans",
            AppealToAuthority => "appeal_to_authority",
            BlackAndWhiteFallacy => "black_and_white_fallacy",
            Obfuscation => "obfuscation",
            ThoughtTerminatingCliches => "thought_terminating_cliches",
            Whataboutism => "whataboutism",
            ReductioAdHitlerum => "reductio_ad_hitlerum",
            RedHerring => "red_herring",
            Bandwagon => "bandwagon",
            StrawMan => "straw_man",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            NoTechnique => "No technique",
            LoadedLanguage => "Loaded language",
            NameCalling => "Name calling, labeling",
            Repetition => "Repetition",
            Exaggeration => "Exaggeration, minimization",
            Doubt => "Doubt",
            AppealToFear => "Appeal to fear/prejudice",
            FlagWaving => "Flag-waving",
            CausalOversimplification => "Causal oversimplification",
            Slogans => "Slogans",
            AppealToAuthority => "Appeal to authority",
            BlackAndWhiteFallacy => "Black-and-white fallacy",
            Obfuscation => "Obfuscation, intentional vagueness, confusion",
            ThoughtTerminatingCliches => "Thought-terminating clichés",
            Whataboutism => "Whataboutism",
            ReductioAdHitlerum => "Reductio ad hitlerum",
            RedHerring => "Red herring",
            Bandwagon => "Bandwagon",
            StrawMan => "Straw man",
        }
    }

    /// One-line explanation shown when hovering a highlighted span.
    pub fn description(self) -> &'static str {
        match self {
            NoTechnique => "No persuasion technique detected.",
            LoadedLanguage => "Words with strong emotional connotations used to sway the reader.",
            NameCalling => "Attaching a loaded label to a person or group the audience fears, hates or admires.",
            Repetition => "Hammering the same message again and again until the audience accepts it.",
            Exaggeration => "Making something look far better, worse or smaller than it really is.",
            Doubt => "Questioning the credibility of someone or something without substance.",
            AppealToFear => "Building support by stoking anxiety or prejudice against an alternative.",
            FlagWaving => "Justifying an idea by invoking patriotism or group identity.",
            CausalOversimplification => "Pinning a complex outcome on a single cause.",
            Slogans => "A brief, punchy phrase standing in for an argument.",
            AppealToAuthority => "Claiming something is true because an authority says so.",
            BlackAndWhiteFallacy => "Presenting two options as the only possibilities.",
            Obfuscation => "Deliberately unclear wording that lets the audience read in what it wants.",
            ThoughtTerminatingCliches => "A stock phrase that shuts down critical thinking and discussion.",
            Whataboutism => "Deflecting criticism by pointing at an opponent's alleged hypocrisy.",
            ReductioAdHitlerum => "Discrediting an idea by associating it with a hated group such as the Nazis.",
            RedHerring => "Pulling attention away from the issue with irrelevant material.",
            Bandwagon => "Urging agreement because everyone else supposedly agrees.",
            StrawMan => "Rebutting a distorted version of an opponent's position.",
        }
    }
}

impl fmt::Display for TechniqueLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown technique identifier `{0}`")]
pub struct UnknownTechnique(pub String);

impl FromStr for TechniqueLabel {
    type Err = UnknownTechnique;

    /// Accepts the canonical ids plus the label spellings used by the
    /// fragment-level annotation corpus (e.g. `Name_Calling,Labeling`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if let Some(label) = Self::ALL.iter().find(|l| l.id() == trimmed) {
            return Ok(*label);
        }
        let label = match trimmed.to_ascii_lowercase().as_str() {
            "o" | "none" => NoTechnique,
            "name_calling,labeling" | "labeling" => NameCalling,
            "exaggeration,minimisation" | "exaggeration,minimization" => Exaggeration,
            "appeal_to_fear-prejudice" => AppealToFear,
            "flag-waving" => FlagWaving,
            "black-and-white_fallacy" => BlackAndWhiteFallacy,
            "obfuscation,intentional_vagueness,confusion" => Obfuscation,
            "thought-terminating_cliches" => ThoughtTerminatingCliches,
            "straw_men" => StrawMan,
            other => {
                return Self::ALL
                    .iter()
                    .find(|l| l.id() == other)
                    .copied()
                    .ok_or_else(|| UnknownTechnique(s.to_string()))
            }
        };
        Ok(label)
    }
}

impl Serialize for TechniqueLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for TechniqueLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
