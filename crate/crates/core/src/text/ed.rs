//! Reader and writer for the EmpatheticDialogues CSV layout.
//!
//! The files are plain comma-separated rows without quoting; commas inside
//! text fields are written as the literal token `_comma_`.

use serde::{Deserialize, Serialize};

use crate::error::DataError;
use crate::text::taxonomy::EmotionTaxonomy;

pub const COLUMNS: [&str; 8] = [
    "conv_id",
    "utterance_idx",
    "context",
    "prompt",
    "speaker_idx",
    "utterance",
    "selfeval",
    "tags",
];

const COMMA_ESCAPE: &str = "_comma_";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub conv_id: String,
    pub utterance_idx: u32,
    /// Fine ED label of the conversation.
    pub context_emotion: String,
    pub prompt: String,
    pub speaker_idx: i64,
    pub utterance: String,
    pub selfeval: String,
    pub tags: String,
}

fn unescape(field: &str) -> String {
    field.replace(COMMA_ESCAPE, ",")
}

fn escape(field: &str) -> String {
    field.replace(',', COMMA_ESCAPE)
}

/// Parses a whole CSV file. Row numbers in errors are 1-based file lines, so
/// the first data row is row 2.
pub fn parse_ed_csv(bytes: &[u8]) -> Result<Vec<DialogueRecord>, DataError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DataError::Invalid(format!("input is not UTF-8: {e}")))?;
    let tax = EmotionTaxonomy;
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));

    let header = lines.next().unwrap_or_default();
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() != COLUMNS.len() {
        return Err(DataError::Arity {
            row: 1,
            found: names.len(),
        });
    }
    if names != COLUMNS {
        return Err(DataError::Malformed {
            row: 1,
            message: format!("unexpected header {header:?}"),
        });
    }

    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(DataError::Arity {
                row,
                found: fields.len(),
            });
        }
        let utterance_idx = fields[1]
            .trim()
            .parse::<u32>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| DataError::Malformed {
                row,
                message: format!("utterance_idx {:?} is not a positive integer", fields[1]),
            })?;
        let speaker_idx = fields[4].trim().parse::<i64>().map_err(|_| DataError::Malformed {
            row,
            message: format!("speaker_idx {:?} is not an integer", fields[4]),
        })?;
        let context = fields[2].trim();
        if !tax.is_fine_label(context) {
            return Err(DataError::UnknownEmotion {
                row,
                label: context.to_string(),
            });
        }
        let utterance = unescape(fields[5]);
        if utterance.trim().is_empty() {
            return Err(DataError::EmptyUtterance { row });
        }
        records.push(DialogueRecord {
            conv_id: fields[0].to_string(),
            utterance_idx,
            context_emotion: context.to_string(),
            prompt: unescape(fields[3]),
            speaker_idx,
            utterance,
            selfeval: unescape(fields[6]),
            tags: unescape(fields[7]),
        });
    }
    Ok(records)
}

/// Writes records in the same layout [`parse_ed_csv`] reads, escaping commas.
pub fn serialize_ed_csv(records: &[DialogueRecord]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let fields = [
            escape(&r.conv_id),
            r.utterance_idx.to_string(),
            escape(&r.context_emotion),
            escape(&r.prompt),
            r.speaker_idx.to_string(),
            escape(&r.utterance),
            escape(&r.selfeval),
            escape(&r.tags),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
