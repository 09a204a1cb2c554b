use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

/// Scoring unit: words give WER, characters give CER.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    #[default]
    Word,
    Character,
}

impl Unit {
    pub fn metric_name(self) -> &'static str {
        match self {
            Unit::Word => "WER",
            Unit::Character => "CER",
        }
    }
}

impl std::str::FromStr for Unit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "word" => Ok(Unit::Word),
            "character" | "char" => Ok(Unit::Character),
            other => Err(format!("unknown unit `{other}` (expected word|character)")),
        }
    }
}

/// Text normalization applied before tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalization {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

impl Normalization {
    pub const NONE: Normalization = Normalization {
        lowercase: false,
        strip_punctuation: false,
    };

    /// Punctuation is anything that is neither alphanumeric nor whitespace;
    /// stripped characters are replaced by a space so that `a,b` splits.
    pub fn apply(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        for c in text.chars() {
            if self.strip_punctuation && !c.is_alphanumeric() && !c.is_whitespace() {
                out.push(' ');
            } else if self.lowercase {
                out.extend(c.to_lowercase());
            } else {
                out.push(c);
            }
        }
        out
    }
}

/// Split `text` into scoring tokens.
///
/// Word unit splits on whitespace runs. Character unit yields one token per
/// extended grapheme cluster, skipping whitespace. Returns `None` when no
/// token survives.
pub fn tokenize(text: &str, unit: Unit) -> Option<Vec<String>> {
    let tokens: Vec<String> = match unit {
        Unit::Word => text.split_whitespace().map(str::to_owned).collect(),
        Unit::Character => text
            .graphemes(true)
            .filter(|g| !g.chars().all(char::is_whitespace))
            .map(str::to_owned)
            .collect(),
    };
    if tokens.is_empty() {
        None
    } else {
        Some(tokens)
    }
}
