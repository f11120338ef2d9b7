//! Language metadata and relatedness selection.
//!
//! Holds the 27 bundled language profiles (typology vectors, resource tier,
//! speaker counts, culture cluster) and implements every mode for picking
//! feedback languages: the bundled mapping tables for the stock languages,
//! and cosine-distance selection over typology vectors for user-registered
//! pools.

mod data;

pub use data::RelatedTables;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// ISO 639-1 code: exactly two lowercase ASCII letters.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LanguageCode([u8; 2]);

impl LanguageCode {
    pub fn parse(s: &str) -> Result<Self, LangError> {
        let bytes = s.as_bytes();
        if bytes.len() == 2 && bytes.iter().all(|b| b.is_ascii_lowercase()) {
            Ok(Self([bytes[0], bytes[1]]))
        } else {
            Err(LangError::InvalidCode(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("two ascii letters")
    }
}

impl fmt::Display for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for LanguageCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LanguageCode({})", self.as_str())
    }
}

impl FromStr for LanguageCode {
    type Err = LangError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse(s)
    }
}

impl Serialize for LanguageCode {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LanguageCode {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Resource tier by share of pretraining data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Mid,
    Low,
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::High => "high",
            Tier::Mid => "mid",
            Tier::Low => "low",
        })
    }
}

/// Typology attribute families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Syntactic,
    Geographic,
    Phonological,
    Genetic,
    Inventory,
    Featural,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::Syntactic,
        Attribute::Geographic,
        Attribute::Phonological,
        Attribute::Genetic,
        Attribute::Inventory,
        Attribute::Featural,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Attribute::Syntactic => "syntactic",
            Attribute::Geographic => "geographic",
            Attribute::Phonological => "phonological",
            Attribute::Genetic => "genetic",
            Attribute::Inventory => "inventory",
            Attribute::Featural => "featural",
        }
    }
}

impl FromStr for Attribute {
    type Err = LangError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| LangError::UnknownAttribute(s.to_string()))
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-attribute feature vectors; `None` marks a missing entry.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TypologyProfile {
    pub vectors: BTreeMap<Attribute, Vec<Option<f64>>>,
}

impl TypologyProfile {
    pub fn get(&self, attr: Attribute) -> Option<&[Option<f64>]> {
        self.vectors.get(&attr).map(|v| v.as_slice())
    }
}

/// Everything the harness knows about one language.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub code: LanguageCode,
    pub display_name: String,
    pub resource_tier: Tier,
    pub speaker_count: u64,
    pub culture_cluster: String,
    #[serde(default)]
    pub typology: TypologyProfile,
}

/// How feedback languages are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelatednessMode {
    Default,
    Syntactic,
    Geographic,
    Phonological,
    Genetic,
    Inventory,
    Featural,
    LlmGenerated,
    CultureWvs,
    Reverse,
    SelfIncluded,
}

impl RelatednessMode {
    /// Modes whose bundled-language output is read from the mapping tables.
    pub const TABLE_BACKED: [RelatednessMode; 9] = [
        RelatednessMode::Default,
        RelatednessMode::Syntactic,
        RelatednessMode::Geographic,
        RelatednessMode::Phonological,
        RelatednessMode::Genetic,
        RelatednessMode::Inventory,
        RelatednessMode::Featural,
        RelatednessMode::LlmGenerated,
        RelatednessMode::CultureWvs,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RelatednessMode::Default => "default",
            RelatednessMode::Syntactic => "syntactic",
            RelatednessMode::Geographic => "geographic",
            RelatednessMode::Phonological => "phonological",
            RelatednessMode::Genetic => "genetic",
            RelatednessMode::Inventory => "inventory",
            RelatednessMode::Featural => "featural",
            RelatednessMode::LlmGenerated => "llm_generated",
            RelatednessMode::CultureWvs => "culture_wvs",
            RelatednessMode::Reverse => "reverse",
            RelatednessMode::SelfIncluded => "self_included",
        }
    }

    /// Attributes entering the distance mean for computed selection.
    fn attributes(&self) -> &'static [Attribute] {
        match self {
            RelatednessMode::Syntactic => &[Attribute::Syntactic],
            RelatednessMode::Geographic => &[Attribute::Geographic],
            RelatednessMode::Phonological => &[Attribute::Phonological],
            RelatednessMode::Genetic => &[Attribute::Genetic],
            RelatednessMode::Inventory => &[Attribute::Inventory],
            RelatednessMode::Featural => &[Attribute::Featural],
            _ => &Attribute::ALL,
        }
    }
}

impl FromStr for RelatednessMode {
    type Err = LangError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        use RelatednessMode::*;
        let all = [
            Default,
            Syntactic,
            Geographic,
            Phonological,
            Genetic,
            Inventory,
            Featural,
            LlmGenerated,
            CultureWvs,
            Reverse,
            SelfIncluded,
        ];
        all.into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| LangError::UnknownMode(s.to_string()))
    }
}

impl fmt::Display for RelatednessMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One selected feedback language.
///
/// Table rows can name languages outside the supported pool (the
/// LLM-generated mapping lists e.g. Frisian), so the display name is the
/// primary payload and the code is resolved when possible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedLanguage {
    pub name: String,
    pub code: Option<LanguageCode>,
}

impl SelectedLanguage {
    pub fn resolved(name: impl Into<String>, code: LanguageCode) -> Self {
        Self {
            name: name.into(),
            code: Some(code),
        }
    }
}

/// Result of averaging attribute distances for one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageDistance {
    pub value: f64,
    /// Attributes that had to be skipped (no shared dimensions).
    pub skipped: Vec<Attribute>,
}

#[derive(Debug, Error)]
pub enum LangError {
    #[error("invalid language code {0:?}: expected two lowercase ASCII letters")]
    InvalidCode(String),
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("unknown relatedness mode {0}")]
    UnknownMode(String),
    #[error("unknown attribute {0}")]
    UnknownAttribute(String),
    #[error("no shared dimensions for attribute {attr} between {a} and {b}")]
    NoSharedDimensions {
        attr: Attribute,
        a: LanguageCode,
        b: LanguageCode,
    },
    #[error("no computable attributes between {a} and {b}")]
    NoComputableAttributes { a: LanguageCode, b: LanguageCode },
    #[error("mode {mode} has no bundled table entry for {lang}")]
    NoTableEntry {
        mode: RelatednessMode,
        lang: LanguageCode,
    },
    #[error("k = {k} exceeds candidate pool size {pool}")]
    KTooLarge { k: usize, pool: usize },
    #[error("language data error: {0}")]
    Data(String),
}

/// Immutable store of language profiles and mapping tables.
///
/// Built once at startup; all queries are read-only afterwards.
#[derive(Debug, Clone)]
pub struct LanguageSpace {
    profiles: BTreeMap<LanguageCode, LanguageProfile>,
    tables: RelatedTables,
    name_index: BTreeMap<String, LanguageCode>,
}

impl LanguageSpace {
    /// Loads the 27 bundled languages, their typology vectors, and the
    /// relatedness mapping tables shipped with this crate.
    pub fn bundled() -> Result<Self, LangError> {
        let profiles = data::bundled_profiles()?;
        let tables = data::bundled_tables()?;
        Self::from_parts(profiles, tables)
    }

    /// Assembles a space from explicit parts, validating invariants.
    pub fn from_parts(
        profiles: Vec<LanguageProfile>,
        tables: RelatedTables,
    ) -> Result<Self, LangError> {
        let mut map = BTreeMap::new();
        let mut name_index = BTreeMap::new();
        let mut dims: BTreeMap<Attribute, usize> = BTreeMap::new();
        for profile in profiles {
            validate_profile(&profile, &mut dims)?;
            name_index.insert(profile.display_name.to_lowercase(), profile.code);
            if map.insert(profile.code, profile).is_some() {
                return Err(LangError::Data("duplicate language code".into()));
            }
        }
        Ok(Self {
            profiles: map,
            tables,
            name_index,
        })
    }

    /// Registers one extra language (custom pools on top of the bundle).
    pub fn register_language(&mut self, profile: LanguageProfile) -> Result<(), LangError> {
        let mut dims: BTreeMap<Attribute, usize> = BTreeMap::new();
        for (attr, vec) in self.profiles.values().flat_map(|p| &p.typology.vectors) {
            dims.insert(*attr, vec.len());
        }
        validate_profile(&profile, &mut dims)?;
        self.name_index
            .insert(profile.display_name.to_lowercase(), profile.code);
        self.profiles.insert(profile.code, profile);
        Ok(())
    }

    pub fn profile(&self, code: LanguageCode) -> Result<&LanguageProfile, LangError> {
        self.profiles
            .get(&code)
            .ok_or_else(|| LangError::UnknownLanguage(code.to_string()))
    }

    pub fn codes(&self) -> impl Iterator<Item = LanguageCode> + '_ {
        self.profiles.keys().copied()
    }

    pub fn profiles(&self) -> impl Iterator<Item = &LanguageProfile> {
        self.profiles.values()
    }

    pub fn tables(&self) -> &RelatedTables {
        &self.tables
    }

    /// Resolves an English display name (alias-normalized) to a code.
    pub fn code_for_name(&self, name: &str) -> Option<LanguageCode> {
        let normalized = self.tables.normalize(name);
        self.name_index.get(&normalized.to_lowercase()).copied()
    }

    /// Distance for one attribute: 1 - cosine over dimensions present in
    /// both vectors. Symmetric; zero for identical vectors.
    pub fn attribute_distance(
        &self,
        attr: Attribute,
        a: LanguageCode,
        b: LanguageCode,
    ) -> Result<f64, LangError> {
        let va = self.profile(a)?.typology.get(attr);
        let vb = self.profile(b)?.typology.get(attr);
        let (va, vb) = match (va, vb) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(LangError::NoSharedDimensions { attr, a, b }),
        };
        masked_cosine_distance(va, vb).ok_or(LangError::NoSharedDimensions { attr, a, b })
    }

    /// Mean of attribute distances over the computable subset of `attrs`.
    pub fn language_distance(
        &self,
        a: LanguageCode,
        b: LanguageCode,
        attrs: &[Attribute],
    ) -> Result<LanguageDistance, LangError> {
        let mut total = 0.0;
        let mut used = 0usize;
        let mut skipped = Vec::new();
        for &attr in attrs {
            match self.attribute_distance(attr, a, b) {
                Ok(d) => {
                    total += d;
                    used += 1;
                }
                Err(LangError::NoSharedDimensions { .. }) => skipped.push(attr),
                Err(other) => return Err(other),
            }
        }
        if used == 0 {
            return Err(LangError::NoComputableAttributes { a, b });
        }
        Ok(LanguageDistance {
            value: total / used as f64,
            skipped,
        })
    }

    /// All distances from `from`, ascending, with deterministic tie-breaks.
    pub fn distances_from(
        &self,
        from: LanguageCode,
        attrs: &[Attribute],
    ) -> Result<Vec<(LanguageCode, LanguageDistance)>, LangError> {
        self.profile(from)?;
        let mut out = Vec::new();
        for &code in self.profiles.keys() {
            if code == from {
                continue;
            }
            match self.language_distance(from, code, attrs) {
                Ok(d) => out.push((code, d)),
                Err(LangError::NoComputableAttributes { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        out.sort_by(|(ca, da), (cb, db)| {
            da.value
                .total_cmp(&db.value)
                .then_with(|| ca.cmp(cb))
        });
        Ok(out)
    }

    /// Picks the k feedback languages for `lang` under `mode`.
    ///
    /// Bundled languages use the mapping tables for the nine table-backed
    /// modes (rows returned as printed, alias-normalized). Everything else
    /// is computed from typology distances: argmin-k, ties broken by
    /// ascending code; `reverse` takes argmax-k; `self_included` prepends
    /// the language itself.
    pub fn select_feedback_languages(
        &self,
        lang: LanguageCode,
        mode: RelatednessMode,
        k: usize,
    ) -> Result<Vec<SelectedLanguage>, LangError> {
        if k == 0 {
            return Err(LangError::KTooLarge { k, pool: 0 });
        }
        self.profile(lang)?;
        match mode {
            RelatednessMode::Reverse => self.select_computed(lang, mode, k, true),
            RelatednessMode::SelfIncluded => {
                let own = SelectedLanguage::resolved(
                    self.profile(lang)?.display_name.clone(),
                    lang,
                );
                let mut rest = if self.tables.row(RelatednessMode::Default, lang).is_some() {
                    self.table_row(lang, RelatednessMode::Default, k.saturating_sub(1))?
                } else {
                    self.select_computed(lang, RelatednessMode::Default, k - 1, false)?
                };
                let mut out = vec![own];
                out.append(&mut rest);
                out.truncate(k);
                Ok(out)
            }
            table_mode if self.tables.row(table_mode, lang).is_some() => {
                self.table_row(lang, table_mode, k)
            }
            RelatednessMode::LlmGenerated | RelatednessMode::CultureWvs => {
                Err(LangError::NoTableEntry { mode, lang })
            }
            computed => self.select_computed(lang, computed, k, false),
        }
    }

    fn table_row(
        &self,
        lang: LanguageCode,
        mode: RelatednessMode,
        k: usize,
    ) -> Result<Vec<SelectedLanguage>, LangError> {
        let row = self
            .tables
            .row(mode, lang)
            .ok_or(LangError::NoTableEntry { mode, lang })?;
        if k > row.len() {
            return Err(LangError::KTooLarge { k, pool: row.len() });
        }
        Ok(row
            .iter()
            .take(k)
            .map(|raw| {
                let name = self.tables.normalize(raw);
                let code = self.name_index.get(&name.to_lowercase()).copied();
                SelectedLanguage { name, code }
            })
            .collect())
    }

    fn select_computed(
        &self,
        lang: LanguageCode,
        mode: RelatednessMode,
        k: usize,
        farthest: bool,
    ) -> Result<Vec<SelectedLanguage>, LangError> {
        let mut ranked = self.distances_from(lang, mode.attributes())?;
        if farthest {
            ranked.sort_by(|(ca, da), (cb, db)| {
                db.value
                    .total_cmp(&da.value)
                    .then_with(|| ca.cmp(cb))
            });
        }
        if k > ranked.len() {
            return Err(LangError::KTooLarge {
                k,
                pool: ranked.len(),
            });
        }
        Ok(ranked
            .into_iter()
            .take(k)
            .map(|(code, _)| {
                SelectedLanguage::resolved(
                    self.profiles[&code].display_name.clone(),
                    code,
                )
            })
            .collect())
    }
}

fn validate_profile(
    profile: &LanguageProfile,
    dims: &mut BTreeMap<Attribute, usize>,
) -> Result<(), LangError> {
    if profile.display_name.is_empty() {
        return Err(LangError::Data(format!("{}: empty display name", profile.code)));
    }
    if profile.speaker_count == 0 {
        return Err(LangError::Data(format!("{}: zero speaker count", profile.code)));
    }
    if profile.culture_cluster.is_empty() {
        return Err(LangError::Data(format!("{}: empty culture cluster", profile.code)));
    }
    if profile.typology.vectors.is_empty() {
        return Err(LangError::Data(format!("{}: no typology attributes", profile.code)));
    }
    for (attr, vec) in &profile.typology.vectors {
        if vec.iter().all(Option::is_none) {
            return Err(LangError::Data(format!(
                "{}: attribute {attr} is all-missing",
                profile.code
            )));
        }
        match dims.get(attr) {
            Some(&d) if d != vec.len() => {
                return Err(LangError::Data(format!(
                    "{}: attribute {attr} has dimension {} but expected {d}",
                    profile.code,
                    vec.len()
                )));
            }
            Some(_) => {}
            None => {
                dims.insert(*attr, vec.len());
            }
        }
    }
    Ok(())
}

/// 1 - cosine over dimensions where both entries are present.
/// `None` when the overlap is empty or either masked vector has zero norm.
fn masked_cosine_distance(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    let mut shared = 0usize;
    for (x, y) in a.iter().zip(b.iter()) {
        if let (Some(x), Some(y)) = (x, y) {
            dot += x * y;
            na += x * x;
            nb += y * y;
            shared += 1;
        }
    }
    if shared == 0 || na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(1.0 - dot / (na.sqrt() * nb.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lc(s: &str) -> LanguageCode {
        LanguageCode::parse(s).unwrap()
    }

    fn profile_with(code: &str, name: &str, vectors: Vec<(Attribute, Vec<Option<f64>>)>) -> LanguageProfile {
        LanguageProfile {
            code: lc(code),
            display_name: name.into(),
            resource_tier: Tier::Mid,
            speaker_count: 1_000_000,
            culture_cluster: "Test".into(),
            typology: TypologyProfile {
                vectors: vectors.into_iter().collect(),
            },
        }
    }

    fn tiny_space() -> LanguageSpace {
        // aa=(1,1), bb=(1,0), cc=(0,1) on a single attribute
        let profiles = vec![
            profile_with("aa", "Alpha", vec![(Attribute::Syntactic, vec![Some(1.0), Some(1.0)])]),
            profile_with("bb", "Beta", vec![(Attribute::Syntactic, vec![Some(1.0), Some(0.0)])]),
            profile_with("cc", "Gamma", vec![(Attribute::Syntactic, vec![Some(0.0), Some(1.0)])]),
        ];
        LanguageSpace::from_parts(profiles, RelatedTables::default()).unwrap()
    }

    #[test]
    fn code_parsing() {
        assert!(LanguageCode::parse("bn").is_ok());
        assert!(LanguageCode::parse("BN").is_err());
        assert!(LanguageCode::parse("ben").is_err());
        assert!(LanguageCode::parse("b1").is_err());
    }

    #[test]
    fn attribute_distance_examples() {
        let space = tiny_space();
        // identical vectors
        let d = space.attribute_distance(Attribute::Syntactic, lc("bb"), lc("bb")).unwrap();
        assert!(d.abs() < 1e-12);
        // orthogonal binary vectors
        let d = space.attribute_distance(Attribute::Syntactic, lc("bb"), lc("cc")).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        // (1,1) vs (1,0): 1 - 1/sqrt(2)
        let d = space.attribute_distance(Attribute::Syntactic, lc("aa"), lc("bb")).unwrap();
        assert!((d - (1.0 - 1.0 / 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn masked_overlap_empty_is_error() {
        let profiles = vec![
            profile_with("aa", "Alpha", vec![(Attribute::Syntactic, vec![Some(1.0), None])]),
            profile_with("bb", "Beta", vec![(Attribute::Syntactic, vec![None, Some(1.0)])]),
        ];
        let space = LanguageSpace::from_parts(profiles, RelatedTables::default()).unwrap();
        assert!(matches!(
            space.attribute_distance(Attribute::Syntactic, lc("aa"), lc("bb")),
            Err(LangError::NoSharedDimensions { .. })
        ));
        assert!(matches!(
            space.language_distance(lc("aa"), lc("bb"), &[Attribute::Syntactic]),
            Err(LangError::NoComputableAttributes { .. })
        ));
    }

    #[test]
    fn language_distance_is_mean_over_computable() {
        // distances 0.2 and 0.4 from exact cosines 0.8 and 0.6
        let profiles = vec![
            profile_with(
                "aa",
                "Alpha",
                vec![
                    (Attribute::Syntactic, vec![Some(1.0), Some(0.0)]),
                    (Attribute::Phonological, vec![Some(1.0), Some(0.0)]),
                ],
            ),
            profile_with(
                "bb",
                "Beta",
                vec![
                    (Attribute::Syntactic, vec![Some(0.8), Some(0.6)]),
                    (Attribute::Phonological, vec![Some(0.6), Some(0.8)]),
                ],
            ),
        ];
        let space = LanguageSpace::from_parts(profiles, RelatedTables::default()).unwrap();
        let d = space
            .language_distance(lc("aa"), lc("bb"), &[Attribute::Syntactic, Attribute::Phonological])
            .unwrap();
        assert!((d.value - 0.3).abs() < 1e-12);
        assert!(d.skipped.is_empty());
    }

    #[test]
    fn bundled_space_loads_and_validates() {
        let space = LanguageSpace::bundled().unwrap();
        assert_eq!(space.codes().count(), 27);
        let high = space.profiles().filter(|p| p.resource_tier == Tier::High).count();
        let mid = space.profiles().filter(|p| p.resource_tier == Tier::Mid).count();
        let low = space.profiles().filter(|p| p.resource_tier == Tier::Low).count();
        assert_eq!((high, mid, low), (9, 11, 7));
    }

    #[test]
    fn bundled_table_rows_match_published_mappings() {
        let space = LanguageSpace::bundled().unwrap();
        let named = |v: &[SelectedLanguage]| v.iter().map(|s| s.name.clone()).collect::<Vec<_>>();

        let fr = space
            .select_feedback_languages(lc("fr"), RelatednessMode::Default, 3)
            .unwrap();
        assert_eq!(named(&fr), ["Catalan", "German", "Spanish"]);

        let ta = space
            .select_feedback_languages(lc("ta"), RelatednessMode::Default, 3)
            .unwrap();
        assert_eq!(named(&ta), ["Malayalam", "Marathi", "Kannada"]);

        let kn = space
            .select_feedback_languages(lc("kn"), RelatednessMode::CultureWvs, 3)
            .unwrap();
        assert_eq!(named(&kn), ["Arabic", "Hindi", "Bengali"]);

        // typo'd rows normalize through the alias map
        let ne = space
            .select_feedback_languages(lc("ne"), RelatednessMode::Default, 3)
            .unwrap();
        assert_eq!(named(&ne), ["Kannada", "Telugu", "Hindi"]);
        assert!(ne.iter().all(|s| s.code.is_some()));
    }

    #[test]
    fn self_included_prepends_source() {
        let space = LanguageSpace::bundled().unwrap();
        let got = space
            .select_feedback_languages(lc("ta"), RelatednessMode::SelfIncluded, 3)
            .unwrap();
        let names: Vec<_> = got.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["Tamil", "Malayalam", "Marathi"]);
    }

    #[test]
    fn symmetry_and_identity_hold_everywhere() {
        let space = LanguageSpace::bundled().unwrap();
        let codes: Vec<_> = space.codes().collect();
        for &a in &codes {
            let d = space.language_distance(a, a, &Attribute::ALL).unwrap();
            assert!(d.value.abs() < 1e-12, "{a}: self-distance {}", d.value);
            for &b in &codes {
                let ab = space.language_distance(a, b, &Attribute::ALL).unwrap();
                let ba = space.language_distance(b, a, &Attribute::ALL).unwrap();
                assert!((ab.value - ba.value).abs() < 1e-12, "{a}/{b} asymmetric");
            }
        }
    }

    #[test]
    fn computed_selection_breaks_ties_by_code() {
        // bb and cc are equidistant from aa
        let profiles = vec![
            profile_with("aa", "Alpha", vec![(Attribute::Syntactic, vec![Some(1.0), Some(1.0)])]),
            profile_with("cc", "Gamma", vec![(Attribute::Syntactic, vec![Some(1.0), Some(0.0)])]),
            profile_with("bb", "Beta", vec![(Attribute::Syntactic, vec![Some(0.0), Some(1.0)])]),
        ];
        let space = LanguageSpace::from_parts(profiles, RelatedTables::default()).unwrap();
        let got = space
            .select_feedback_languages(lc("aa"), RelatednessMode::Syntactic, 2)
            .unwrap();
        let codes: Vec<_> = got.iter().map(|s| s.code.unwrap().to_string()).collect();
        assert_eq!(codes, ["bb", "cc"]);
    }

    #[test]
    fn reverse_selects_farthest() {
        let space = tiny_space();
        let near = space
            .select_feedback_languages(lc("bb"), RelatednessMode::Syntactic, 1)
            .unwrap();
        let far = space
            .select_feedback_languages(lc("bb"), RelatednessMode::Reverse, 1)
            .unwrap();
        assert_eq!(near[0].code.unwrap().to_string(), "aa");
        assert_eq!(far[0].code.unwrap().to_string(), "cc");
    }

    #[test]
    fn k_larger_than_pool_errors() {
        let space = tiny_space();
        assert!(matches!(
            space.select_feedback_languages(lc("aa"), RelatednessMode::Syntactic, 3),
            Err(LangError::KTooLarge { .. })
        ));
    }

    #[test]
    fn reverse_disjoint_from_nearest_on_bundled_pool() {
        let space = LanguageSpace::bundled().unwrap();
        for code in space.codes().collect::<Vec<_>>() {
            let nearest: Vec<_> = space
                .distances_from(code, &Attribute::ALL)
                .unwrap()
                .into_iter()
                .take(3)
                .map(|(c, _)| c)
                .collect();
            let farthest: Vec<_> = space
                .select_feedback_languages(code, RelatednessMode::Reverse, 3)
                .unwrap()
                .into_iter()
                .filter_map(|s| s.code)
                .collect();
            assert!(
                nearest.iter().all(|c| !farthest.contains(c)),
                "{code}: nearest {nearest:?} overlaps farthest {farthest:?}"
            );
        }
    }

    #[test]
    fn registered_language_uses_computed_selection_consistently() {
        let mut space = LanguageSpace::bundled().unwrap();
        // vector dimensions must match the bundled syntactic table (24)
        let vector: Vec<Option<f64>> = (0..24).map(|i| Some(if i % 3 == 0 { 1.0 } else { 0.0 })).collect();
        space
            .register_language(LanguageProfile {
                code: lc("xx"),
                display_name: "Xenolect".into(),
                resource_tier: Tier::Low,
                speaker_count: 1000,
                culture_cluster: "Test".into(),
                typology: TypologyProfile {
                    vectors: [(Attribute::Syntactic, vector)].into(),
                },
            })
            .unwrap();

        let selected = space
            .select_feedback_languages(lc("xx"), RelatednessMode::Syntactic, 3)
            .unwrap();
        let ranked = space.distances_from(lc("xx"), &[Attribute::Syntactic]).unwrap();
        let cutoff = ranked[2].1.value;
        for (code, distance) in &ranked[3..] {
            assert!(
                distance.value >= cutoff,
                "excluded {code} closer than selected cutoff"
            );
        }
        assert_eq!(selected.len(), 3);
        // table-only modes stay unavailable for unregistered rows
        assert!(matches!(
            space.select_feedback_languages(lc("xx"), RelatednessMode::CultureWvs, 3),
            Err(LangError::NoTableEntry { .. })
        ));
    }

    #[test]
    fn unknown_language_and_mode() {
        let space = tiny_space();
        assert!(matches!(
            space.select_feedback_languages(lc("zz"), RelatednessMode::Default, 1),
            Err(LangError::UnknownLanguage(_))
        ));
        assert!(matches!("nonsense".parse::<RelatednessMode>(), Err(LangError::UnknownMode(_))));
     }
}
