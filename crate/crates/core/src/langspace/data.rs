//! Loaders for the bundled language data files.
//!
//! `languages.jsonl`, `typology/<attribute>.tsv`, and `related_tables.json`
//! are compiled into the binary so the stock configuration needs no runtime
//! paths; the same parsers accept external files for custom pools.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{Attribute, LangError, LanguageCode, LanguageProfile, RelatednessMode, Tier, TypologyProfile};

const LANGUAGES_JSONL: &str = include_str!("../../data/languages.jsonl");
const RELATED_TABLES_JSON: &str = include_str!("../../data/related_tables.json");

const TYPOLOGY_TSV: [(Attribute, &str); 6] = [
    (Attribute::Syntactic, include_str!("../../data/typology/syntactic.tsv")),
    (Attribute::Geographic, include_str!("../../data/typology/geographic.tsv")),
    (Attribute::Phonological, include_str!("../../data/typology/phonological.tsv")),
    (Attribute::Genetic, include_str!("../../data/typology/genetic.tsv")),
    (Attribute::Inventory, include_str!("../../data/typology/inventory.tsv")),
    (Attribute::Featural, include_str!("../../data/typology/featural.tsv")),
];

#[derive(Debug, Deserialize)]
struct LanguageRow {
    code: LanguageCode,
    name: String,
    tier: Tier,
    speaker_count: u64,
    culture_cluster: String,
}

/// The nine bundled mapping tables plus the alias map that fixes the
/// spelling variants they contain.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct RelatedTables {
    #[serde(default)]
    aliases: BTreeMap<String, String>,
    #[serde(default)]
    modes: BTreeMap<String, BTreeMap<LanguageCode, Vec<String>>>,
}

impl RelatedTables {
    pub fn parse(json: &str) -> Result<Self, LangError> {
        serde_json::from_str(json).map_err(|e| LangError::Data(format!("related tables: {e}")))
    }

    /// Raw table row as printed, if the mode is table-backed and the
    /// language is bundled.
    pub fn row(&self, mode: RelatednessMode, lang: LanguageCode) -> Option<&[String]> {
        self.modes
            .get(mode.as_str())
            .and_then(|m| m.get(&lang))
            .map(|v| v.as_slice())
    }

    /// Canonical display name for a possibly-misspelled table entry.
    pub fn normalize(&self, name: &str) -> String {
        self.aliases.get(name).cloned().unwrap_or_else(|| name.to_string())
    }

    pub fn mode_names(&self) -> impl Iterator<Item = &str> {
        self.modes.keys().map(|s| s.as_str())
    }
}

pub(super) fn bundled_tables() -> Result<RelatedTables, LangError> {
    RelatedTables::parse(RELATED_TABLES_JSON)
}

pub(super) fn bundled_profiles() -> Result<Vec<LanguageProfile>, LangError> {
    let mut typology: BTreeMap<LanguageCode, TypologyProfile> = BTreeMap::new();
    for (attr, tsv) in TYPOLOGY_TSV {
        for (code, vector) in parse_typology_tsv(tsv)? {
            typology.entry(code).or_default().vectors.insert(attr, vector);
        }
    }

    let mut profiles = Vec::new();
    for (idx, line) in LANGUAGES_JSONL.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: LanguageRow = serde_json::from_str(line)
            .map_err(|e| LangError::Data(format!("languages.jsonl line {}: {e}", idx + 1)))?;
        let typ = typology
            .remove(&row.code)
            .ok_or_else(|| LangError::Data(format!("{}: no typology vectors", row.code)))?;
        profiles.push(LanguageProfile {
            code: row.code,
            display_name: row.name,
            resource_tier: row.tier,
            speaker_count: row.speaker_count,
            culture_cluster: row.culture_cluster,
            typology: typ,
        });
    }
    if let Some(orphan) = typology.keys().next() {
        return Err(LangError::Data(format!("{orphan}: typology row without profile")));
    }
    Ok(profiles)
}

/// One parsed typology row: language code plus its (possibly masked) vector.
pub type TypologyRow = (LanguageCode, Vec<Option<f64>>);

/// Parses one typology TSV: `code<TAB>v1<TAB>v2...`, `?` marking missing
/// entries, `#` prefixing comment lines.
pub fn parse_typology_tsv(tsv: &str) -> Result<Vec<TypologyRow>, LangError> {
    let mut rows = Vec::new();
    let mut dim: Option<usize> = None;
    for (idx, line) in tsv.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let code_str = fields
            .next()
            .ok_or_else(|| LangError::Data(format!("typology line {}: empty", idx + 1)))?;
        let code = LanguageCode::parse(code_str)?;
        let vector: Vec<Option<f64>> = fields
            .map(|f| {
                if f == "?" {
                    Ok(None)
                } else {
                    f.parse::<f64>()
                        .map(Some)
                        .map_err(|e| LangError::Data(format!("typology line {}: {e}", idx + 1)))
                }
            })
            .collect::<Result<_, _>>()?;
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(LangError::Data(format!(
                    "typology line {}: dimension {} != {d}",
                    idx + 1,
                    vector.len()
                )));
            }
            Some(_) => {}
        }
        rows.push((code, vector));
    }
    Ok(rows)
}
