//! Text codec for generator output.
//!
//! Mentions are written as `[(name, surface), (name, surface)]` using display
//! names. The explanation variant prefixes that list with `Entity: ` and adds
//! an `Explanation: ...` line. Parsing is total: arbitrary model output is
//! accepted and problems are reported as warnings.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TonerError};
use crate::types::{EntityMention, TypeSchema};

pub const ENTITY_MARKER: &str = "Entity:";
pub const EXPLANATION_MARKER: &str = "Explanation:";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub mentions: Vec<EntityMention>,
    pub explanation: Option<String>,
    pub warnings: Vec<String>,
    pub malformed: bool,
}

pub fn serialize_mentions(mentions: &[EntityMention], schema: &TypeSchema) -> Result<String> {
    let mut out = String::from("[");
    for (i, m) in mentions.iter().enumerate() {
        let ty = schema.get(m.type_tag())?;
        if split_items(m.surface()).len() > 1 {
            return Err(TonerError::invalid(
                "surface",
                format!("{:?} contains the item separator and cannot be written", m.surface()),
            ));
        }
        if i > 0 {
            out.push_str(", ");
        }
        out.push('(');
        out.push_str(ty.display_name());
        out.push_str(", ");
        out.push_str(m.surface());
        out.push(')');
    }
    out.push(']');
    Ok(out)
}

pub fn serialize_exp(mentions: &[EntityMention], explanation: &str, schema: &TypeSchema) -> Result<String> {
    if explanation.trim().is_empty() {
        return Err(TonerError::invalid("explanation", "must be nonempty"));
    }
    Ok(format!(
        "{ENTITY_MARKER} {}\n{EXPLANATION_MARKER} {explanation}",
        serialize_mentions(mentions, schema)?
    ))
}

/// Splits the inside of the list on `)` `,` `(` with optional whitespace
/// around the comma. Returns the raw item bodies without their parentheses.
fn split_items(inner: &str) -> Vec<&str> {
    let bytes = inner.as_bytes();
    let mut items = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b')' {
            let mut j = i + 1;
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b',' {
                j += 1;
                while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                    j += 1;
                }
                if j < bytes.len() && bytes[j] == b'(' {
                    items.push(&inner[start..i]);
                    start = j + 1;
                    i = j + 1;
                    continue;
                }
            }
        }
        i += 1;
    }
    items.push(&inner[start..]);
    items
}

pub fn parse_mentions(text: &str, schema: &TypeSchema) -> ParseOutcome {
    let mut outcome = ParseOutcome::default();
    let trimmed = text.trim();
    let Some(inner) = trimmed.strip_prefix('[').and_then(|t| t.strip_suffix(']')) else {
        outcome.malformed = true;
        outcome
            .warnings
            .push(format!("output is not a bracketed list: {:?}", truncate(trimmed)));
        return outcome;
    };
    let inner = inner.trim();
    if inner.is_empty() {
        return outcome;
    }

    let body = match inner.strip_prefix('(') {
        Some(b) => b,
        None => {
            outcome.warnings.push("list does not open with `(`".into());
            inner
        }
    };
    let body = match body.strip_suffix(')') {
        Some(b) => b,
        None => {
            outcome.warnings.push("list does not close with `)`".into());
            body
        }
    };

    for item in split_items(body) {
        let Some((name, surface)) = item.split_once(',') else {
            outcome
                .warnings
                .push(format!("dropped item without type/entity separator: {:?}", truncate(item)));
            continue;
        };
        let Some(ty) = schema.by_display_name(name) else {
            outcome
                .warnings
                .push(format!("dropped item with unknown type {:?}", name.trim()));
            continue;
        };
        match EntityMention::new(ty.tag(), surface) {
            Ok(m) => outcome.mentions.push(m),
            Err(_) => outcome
                .warnings
                .push(format!("dropped item with invalid surface {:?}", truncate(surface))),
        }
    }
    outcome
}

pub fn parse_exp(text: &str, schema: &TypeSchema) -> ParseOutcome {
    // byte offset of the first line that starts with the entity marker
    let mut entity_at = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let lead = line.len() - line.trim_start().len();
        if line.trim_start().starts_with(ENTITY_MARKER) {
            entity_at = Some(offset + lead);
            break;
        }
        offset += line.len();
    }

    let Some(entity_at) = entity_at else {
        let mut outcome = parse_mentions(text, schema);
        outcome
            .warnings
            .insert(0, format!("missing `{ENTITY_MARKER}` marker; parsed whole output"));
        if let Some((_, expl)) = text.split_once(EXPLANATION_MARKER) {
            let expl = expl.trim();
            if !expl.is_empty() {
                outcome.explanation = Some(expl.to_owned());
            }
        }
        return outcome;
    };

    let after = &text[entity_at + ENTITY_MARKER.len()..];
    let line_end = after.find('\n').unwrap_or(after.len());
    let mut entity_part = &after[..line_end];
    if let Some(pos) = entity_part.find(EXPLANATION_MARKER) {
        entity_part = &entity_part[..pos];
    }
    let mut outcome = parse_mentions(entity_part, schema);

    match after.find(EXPLANATION_MARKER) {
        Some(pos) => {
            let expl = after[pos + EXPLANATION_MARKER.len()..].trim();
            if expl.is_empty() {
                outcome.warnings.push("empty explanation".into());
            } else {
                outcome.explanation = Some(expl.to_owned());
            }
        }
        None => outcome
            .warnings
            .push(format!("missing `{EXPLANATION_MARKER}` marker")),
    }
    outcome
}

fn truncate(s: &str) -> String {
    s.chars().take(60).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const WELLINGTON_EXPL: &str = "'Wellington' is labeled as 'location' because it refers to a specific location, which is the capital city of New Zealand.";
    const NO_ENTITY_EXPL: &str = "No entity in the text belongs to any pre-defined entity type.";

    fn m(tag: &str, s: &str) -> EntityMention {
        EntityMention::new(tag, s).unwrap()
    }

    #[test]
    fn separator_in_surface_is_rejected() {
        let schema = TypeSchema::conll2003();
        let err = serialize_mentions(&[m("ORG", "a) , (b")], &schema).unwrap_err();
        assert!(err.to_string().contains("separator"));
        assert!(serialize_mentions(&[m("ORG", "a), b (c")], &schema).is_ok());
    }

    #[test]
    fn serializes_china_taiwan() {
        let schema = TypeSchema::conll2003();
        let out = serialize_mentions(&[m("LOC", "China"), m("LOC", "Taiwan")], &schema).unwrap();
        assert_eq!(out, "[(location, China), (location, Taiwan)]");
        assert_eq!(serialize_mentions(&[], &schema).unwrap(), "[]");
        assert!(serialize_mentions(&[m("GPE", "x")], &schema).is_err());
    }

    #[test]
    fn parses_clean_list() {
        let schema = TypeSchema::conll2003();
        let out = parse_mentions("[(location, China), (location, Taiwan)]", &schema);
        assert_eq!(out.mentions, vec![m("LOC", "China"), m("LOC", "Taiwan")]);
        assert!(out.warnings.is_empty());
        assert!(!out.malformed);

        let empty = parse_mentions("  []\n", &schema);
        assert!(empty.mentions.is_empty() && !empty.malformed && empty.warnings.is_empty());
    }

    #[test]
    fn first_comma_splits_type_from_surface() {
        let out = parse_mentions("[(location, Wellington, NZ)]", &TypeSchema::conll2003());
        assert_eq!(out.mentions, vec![m("LOC", "Wellington, NZ")]);
    }

    #[test]
    fn unstructured_text_is_malformed() {
        let out = parse_mentions("no entities here", &TypeSchema::conll2003());
        assert!(out.malformed);
        assert!(out.mentions.is_empty());
    }

    #[test]
    fn recovers_from_casing_spacing_and_bad_items() {
        let schema = TypeSchema::conll2003();
        let out = parse_mentions("[(LOCATION, China),(person,Ann), (weapon, gun), (location, ), (junk)]", &schema);
        assert_eq!(out.mentions, vec![m("LOC", "China"), m("PER", "Ann")]);
        assert_eq!(out.warnings.len(), 3);
        assert!(!out.malformed);
    }

    #[test]
    fn keeps_duplicates() {
        let out = parse_mentions("[(location, China), (location, China)]", &TypeSchema::conll2003());
        assert_eq!(out.mentions.len(), 2);
    }

    #[test]
    fn exp_serialization_matches_published_samples() {
        let schema = TypeSchema::conll2003();
        let s = serialize_exp(&[m("LOC", "Wellington")], WELLINGTON_EXPL, &schema).unwrap();
        assert_eq!(s, format!("Entity: [(location, Wellington)]\nExplanation: {WELLINGTON_EXPL}"));
        let s = serialize_exp(&[], NO_ENTITY_EXPL, &schema).unwrap();
        assert_eq!(
            s,
            "Entity: []\nExplanation: No entity in the text belongs to any pre-defined entity type."
        );
        assert!(serialize_exp(&[], " ", &schema).is_err());
    }

    #[test]
    fn parses_exp_block() {
        let schema = TypeSchema::conll2003();
        let text = format!("Entity: [(location, Wellington)]\nExplanation: {WELLINGTON_EXPL}\n");
        let out = parse_exp(&text, &schema);
        assert_eq!(out.mentions, vec![m("LOC", "Wellington")]);
        assert_eq!(out.explanation.as_deref(), Some(WELLINGTON_EXPL));
        assert!(out.warnings.is_empty());
        assert!(!out.malformed);
    }

    #[test]
    fn exp_without_markers_falls_back() {
        let out = parse_exp("[(location, China)]", &TypeSchema::conll2003());
        assert_eq!(out.mentions, vec![m("LOC", "China")]);
        assert_eq!(out.warnings.len(), 1);
        assert!(!out.malformed);
    }

    #[test]
    fn exp_on_one_line() {
        let out = parse_exp("Entity: [(person, Ann)] Explanation: because", &TypeSchema::conll2003());
        assert_eq!(out.mentions, vec![m("PER", "Ann")]);
        assert_eq!(out.explanation.as_deref(), Some("because"));
    }

    #[test]
    fn multibyte_input_does_not_panic() {
        let schema = TypeSchema::conll2003();
        for s in ["[(位置, 北京)]", "[é", "é]", "[)", "[(", "Entity:é", "Entity:", "Explanation:Entity:[]"] {
            let _ = parse_mentions(s, &schema);
            let _ = parse_exp(s, &schema);
        }
    }
}
