//! Shared domain types: entity types and schemas, mentions, annotated
//! examples, similarity scores and the logit/log-probability vectors that
//! flow between backends and objectives.
//!
//! Everything here is an immutable value object. Constructors validate the
//! invariants so downstream code can rely on them.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TonerError};
use crate::num::Real;

/// Set of entity type tags. Ordered so that serialized output is stable.
pub type TagSet = BTreeSet<String>;

const FORBIDDEN_NAME_CHARS: &[char] = &['[', ']', '(', ')', ',', '\n', '\r'];

fn check_name(what: &'static str, value: &str) -> Result<()> {
    if value.trim().is_empty() {
        return Err(TonerError::invalid(what, "must be nonempty"));
    }
    if value.trim() != value {
        return Err(TonerError::invalid(
            what,
            format!("`{value}` has surrounding whitespace"),
        ));
    }
    if let Some(c) = value.chars().find(|c| FORBIDDEN_NAME_CHARS.contains(c)) {
        return Err(TonerError::invalid(
            what,
            format!("`{value}` contains forbidden character {c:?}"),
        ));
    }
    Ok(())
}

/// One candidate entity type: canonical tag, prompt-facing name, and the
/// description text embedded by the type matcher.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawEntityType")]
pub struct EntityType {
    tag: String,
    display_name: String,
    description: String,
}

#[derive(Deserialize)]
struct RawEntityType {
    tag: String,
    display_name: String,
    description: String,
}

impl TryFrom<RawEntityType> for EntityType {
    type Error = TonerError;

    fn try_from(raw: RawEntityType) -> Result<Self> {
        EntityType::new(raw.tag, raw.display_name, raw.description)
    }
}

impl EntityType {
    pub fn new(
        tag: impl Into<String>,
        display_name: impl Into<String>,
        description: impl Into<String>,
    ) -> Result<Self> {
        let (tag, display_name, description) = (tag.into(), display_name.into(), description.into());
        check_name("entity type tag", &tag)?;
        check_name("entity type display name", &display_name)?;
        if description.trim().is_empty() {
            return Err(TonerError::invalid(
                "entity type description",
                format!("description of `{tag}` is empty"),
            ));
        }
        Ok(EntityType {
            tag,
            display_name,
            description,
        })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn display_name(&self) -> &str {
        &self.display_name
    }

    pub fn description(&self) -> &str {
        &self.description
    }
}

/// Ordered candidate type list. Index `i` is the logit index of type `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<EntityType>", into = "Vec<EntityType>")]
pub struct TypeSchema {
    types: Vec<EntityType>,
    #[serde(skip)]
    by_tag: HashMap<String, usize>,
    #[serde(skip)]
    by_name: HashMap<String, usize>,
}

impl TryFrom<Vec<EntityType>> for TypeSchema {
    type Error = TonerError;

    fn try_from(types: Vec<EntityType>) -> Result<Self> {
        TypeSchema::new(types)
    }
}

impl From<TypeSchema> for Vec<EntityType> {
    fn from(schema: TypeSchema) -> Self {
        schema.types
    }
}

impl TypeSchema {
    pub fn new(types: Vec<EntityType>) -> Result<Self> {
        if types.is_empty() {
            return Err(TonerError::invalid("schema", "needs at least one type"));
        }
        let mut by_tag = HashMap::with_capacity(types.len());
        let mut by_name = HashMap::with_capacity(types.len());
        for (i, t) in types.iter().enumerate() {
            if by_tag.insert(t.tag.clone(), i).is_some() {
                return Err(TonerError::invalid(
                    "schema",
                    format!("duplicate tag `{}`", t.tag),
                ));
            }
            // display names are matched case-insensitively by the output codec
            if by_name.insert(t.display_name.to_lowercase(), i).is_some() {
                return Err(TonerError::invalid(
                    "schema",
                    format!("duplicate display name `{}`", t.display_name),
                ));
            }
        }
        Ok(TypeSchema {
            types,
            by_tag,
            by_name,
        })
    }

    /// The four CoNLL-2003 types with their published descriptions.
    pub fn conll2003() -> Self {
        let types = [
            ("LOC", "location", "location: Names that are locations."),
            ("PER", "person", "person: Names of people."),
            (
                "ORG",
                "organization",
                "organization: Companies, agencies, institutions, etc.",
            ),
            (
                "MISC",
                "miscellaneous",
                "miscellaneous: Names of miscellaneous entities that do not belong to person, organization and location.",
            ),
        ]
        .into_iter()
        .map(|(t, n, d)| EntityType::new(t, n, d).expect("static schema entry"))
        .collect();
        TypeSchema::new(types).expect("static schema")
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn types(&self) -> &[EntityType] {
        &self.types
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntityType> {
        self.types.iter()
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.by_tag.get(tag).copied()
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.by_tag.contains_key(tag)
    }

    pub fn get(&self, tag: &str) -> Result<&EntityType> {
        self.index_of(tag)
            .map(|i| &self.types[i])
            .ok_or_else(|| TonerError::unknown_tag(tag))
    }

    /// Resolves a display name, ignoring case and surrounding whitespace.
    pub fn by_display_name(&self, name: &str) -> Option<&EntityType> {
        self.by_name
            .get(&name.trim().to_lowercase())
            .map(|&i| &self.types[i])
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.types.iter().map(|t| t.tag.as_str())
    }

    pub fn display_names(&self) -> Vec<&str> {
        self.types.iter().map(|t| t.display_name.as_str()).collect()
    }

    pub fn all_tags(&self) -> TagSet {
        self.tags().map(str::to_owned).collect()
    }

    /// Display names of `tags`, in schema order.
    pub fn display_names_of(&self, tags: &TagSet) -> Vec<&str> {
        self.types
            .iter()
            .filter(|t| tags.contains(&t.tag))
            .map(|t| t.display_name.as_str())
            .collect()
    }
}

/// A gold or predicted entity: type tag plus surface string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "RawMention")]
pub struct EntityMention {
    type_tag: String,
    surface: String,
}

#[derive(Deserialize)]
struct RawMention {
    type_tag: String,
    surface: String,
}

impl TryFrom<RawMention> for EntityMention {
    type Error = TonerError;

    fn try_from(raw: RawMention) -> Result<Self> {
        EntityMention::new(raw.type_tag, raw.surface)
    }
}

impl EntityMention {
    /// The surface is stored trimmed. Line breaks are rejected because the
    /// generative output format is line oriented.
    pub fn new(type_tag: impl Into<String>, surface: impl AsRef<str>) -> Result<Self> {
        let type_tag = type_tag.into();
        let surface = surface.as_ref().trim();
        if surface.is_empty() {
            return Err(TonerError::invalid(
                "mention surface",
                format!("empty surface for type `{type_tag}`"),
            ));
        }
        if surface.contains(['\n', '\r']) {
            return Err(TonerError::invalid(
                "mention surface",
                format!("surface {surface:?} spans lines"),
            ));
        }
        Ok(EntityMention {
            type_tag,
            surface: surface.to_owned(),
        })
    }

    pub fn type_tag(&self) -> &str {
        &self.type_tag
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }
}

/// Splits the schema into the types mentioned in `mentions` (`P_x`) and the
/// rest (`N_x`).
pub fn derive_type_sets(mentions: &[EntityMention], schema: &TypeSchema) -> Result<(TagSet, TagSet)> {
    let mut positive = TagSet::new();
    for m in mentions {
        if !schema.contains(&m.type_tag) {
            return Err(TonerError::unknown_tag(&m.type_tag));
        }
        positive.insert(m.type_tag.clone());
    }
    let negative = schema
        .tags()
        .filter(|t| !positive.contains(*t))
        .map(str::to_owned)
        .collect();
    Ok((positive, negative))
}

/// A sentence with its gold mentions and the derived type partition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    id: String,
    sentence: String,
    mentions: Vec<EntityMention>,
    positive_types: TagSet,
    negative_types: TagSet,
    explanation: Option<String>,
}

impl AnnotatedExample {
    pub fn new(
        id: impl Into<String>,
        sentence: impl Into<String>,
        mentions: Vec<EntityMention>,
        schema: &TypeSchema,
    ) -> Result<Self> {
        let sentence = sentence.into();
        if sentence.trim().is_empty() {
            return Err(TonerError::invalid("example", "sentence is empty"));
        }
        let (positive_types, negative_types) = derive_type_sets(&mentions, schema)?;
        Ok(AnnotatedExample {
            id: id.into(),
            sentence,
            mentions,
            positive_types,
            negative_types,
            explanation: None,
        })
    }

    pub fn with_explanation(mut self, explanation: impl Into<String>) -> Self {
        self.explanation = Some(explanation.into());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sentence(&self) -> &str {
        &self.sentence
    }

    pub fn mentions(&self) -> &[EntityMention] {
        &self.mentions
    }

    pub fn positive_types(&self) -> &TagSet {
        &self.positive_types
    }

    pub fn negative_types(&self) -> &TagSet {
        &self.negative_types
    }

    pub fn explanation(&self) -> Option<&str> {
        self.explanation.as_deref()
    }
}

/// Sentence/type affinity in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct MatchScore<F> {
    pub type_tag: String,
    pub score: F,
}

/// Types retained by the matcher for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct FilteredSchema<F> {
    /// Retained tags, highest score first.
    pub retained: Vec<String>,
    pub threshold: F,
    pub scores: Vec<MatchScore<F>>,
}

/// Classifier head output, index-aligned with the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct ClassifierLogits<F> {
    values: Vec<F>,
}

impl<F: Real> ClassifierLogits<F> {
    pub fn new(values: Vec<F>, schema: &TypeSchema) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(TonerError::DimensionMismatch {
                expected: schema.len(),
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(TonerError::invalid("logits", format!("non-finite value {v}")));
        }
        Ok(ClassifierLogits { values })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }
}

/// Teacher-forced per-token log-probabilities of a target sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct TokenLogProbs<F> {
    values: Vec<F>,
}

impl<F: Real> TokenLogProbs<F> {
    pub fn new(values: Vec<F>) -> Result<Self> {
        if values.is_empty() {
            return Err(TonerError::invalid("token log-probs", "empty target sequence"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v > F::zero()) {
            return Err(TonerError::invalid(
                "token log-probs",
                format!("{v} is not a finite non-positive log-probability"),
            ));
        }
        Ok(TokenLogProbs { values })
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(tag: &str, s: &str) -> EntityMention {
        EntityMention::new(tag, s).unwrap()
    }

    fn set(tags: &[&str]) -> TagSet {
        tags.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn type_sets_for_china_taiwan() {
        let schema = TypeSchema::conll2003();
        let (p, n) = derive_type_sets(&[m("LOC", "China"), m("LOC", "Taiwan")], &schema).unwrap();
        assert_eq!(p, set(&["LOC"]));
        assert_eq!(n, set(&["PER", "ORG", "MISC"]));
    }

    #[test]
    fn type_sets_without_mentions() {
        let schema = TypeSchema::new(vec![EntityType::new("LOC", "location", "d").unwrap()]).unwrap();
        let (p, n) = derive_type_sets(&[], &schema).unwrap();
        assert!(p.is_empty());
        assert_eq!(n, set(&["LOC"]));
    }

    #[test]
    fn unknown_tag_is_named() {
        let err = derive_type_sets(&[m("GPE", "Paris")], &TypeSchema::conll2003()).unwrap_err();
        assert!(matches!(err, TonerError::SchemaMismatch { ref tag, .. } if tag == "GPE"));
    }

    #[test]
    fn schema_rejects_bad_entries() {
        assert!(EntityType::new("", "x", "d").is_err());
        assert!(EntityType::new("A", "a,b", "d").is_err());
        assert!(EntityType::new("A", "a[b", "d").is_err());
        assert!(EntityType::new("A", "a\nb", "d").is_err());
        assert!(EntityType::new("A", "a", " ").is_err());
        assert!(TypeSchema::new(vec![]).is_err());
        let a = EntityType::new("A", "alpha", "d").unwrap();
        let b = EntityType::new("A", "beta", "d").unwrap();
        assert!(TypeSchema::new(vec![a.clone(), b]).is_err());
        let c = EntityType::new("C", "Alpha", "d").unwrap();
        assert!(TypeSchema::new(vec![a, c]).is_err());
    }

    #[test]
    fn schema_json_round_trip_keeps_order() {
        let schema = TypeSchema::conll2003();
        let json = serde_json::to_string(&schema).unwrap();
        let back: TypeSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, schema);
        assert_eq!(back.index_of("ORG"), Some(2));
        assert_eq!(back.by_display_name(" Location ").unwrap().tag(), "LOC");
        let bad = r#"[{"tag":"A","display_name":"a","description":"x"},{"tag":"A","display_name":"b","description":"y"}]"#;
        assert!(serde_json::from_str::<TypeSchema>(bad).is_err());
    }

    #[test]
    fn mention_surface_is_trimmed_and_validated() {
        assert_eq!(m("LOC", "  New York ").surface(), "New York");
        assert!(EntityMention::new("LOC", "   ").is_err());
        assert!(EntityMention::new("LOC", "a\nb").is_err());
    }

    #[test]
    fn logprobs_and_logits_validate() {
        assert!(TokenLogProbs::<f64>::new(vec![]).is_err());
        assert!(TokenLogProbs::new(vec![0.1_f64]).is_err());
        assert!(TokenLogProbs::new(vec![f64::NEG_INFINITY]).is_err());
        assert!(TokenLogProbs::new(vec![0.0_f64, -2.0]).is_ok());
        let schema = TypeSchema::conll2003();
        assert!(ClassifierLogits::new(vec![0.0_f32; 3], &schema).is_err());
        assert!(ClassifierLogits::new(vec![0.0, f64::NAN, 0.0, 0.0], &schema).is_err());
        assert!(ClassifierLogits::new(vec![0.0_f64; 4], &schema).is_ok());
    }

    fn seven_tag_schema() -> TypeSchema {
        let types = ["PER", "ORG", "LOC", "GPE", "WEA", "FAC", "VEH"]
            .iter()
            .map(|t| EntityType::new(*t, t.to_lowercase(), format!("{t} things")).unwrap())
            .collect();
        TypeSchema::new(types).unwrap()
    }

    proptest! {
        #[test]
        fn type_sets_match_brute_force(idx in proptest::collection::vec(0usize..7, 0..12)) {
            let schema = seven_tag_schema();
            let tags: Vec<&str> = schema.tags().collect();
            let mentions: Vec<_> = idx.iter().enumerate()
                .map(|(j, &i)| m(tags[i], &format!("e{j}")))
                .collect();
            let (p, n) = derive_type_sets(&mentions, &schema).unwrap();
            // brute force: scan every schema tag against every mention
            for t in &tags {
                let present = mentions.iter().any(|x| x.type_tag() == *t);
                prop_assert_eq!(p.contains(*t), present);
                prop_assert_eq!(n.contains(*t), !present);
            }
            prop_assert_eq!(p.len() + n.len(), tags.len());
            let mut rev = mentions.clone();
            rev.reverse();
            rev.extend(mentions.iter().cloned());
            prop_assert_eq!(derive_type_sets(&rev, &schema).unwrap(), (p, n));
        }
    }
}
