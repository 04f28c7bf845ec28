//! Dictionary-based content scanning: the labeler that produces ground truth
//! for training.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stopwords::is_stop_word;

pub const EMAIL: &str = "Email address";
pub const PHONE: &str = "Phone number";
pub const SSN: &str = "Social Security Number";
pub const CREDIT_CARD: &str = "Credit card number";
pub const KEYWORDS: &str = "Keywords";

pub const EMAIL_PATTERN: &str = r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b";
pub const PHONE_PATTERN: &str =
    r"(?:\+1[-. ]?|\b1[-. ])?(?:\(\d{3}\)[-. ]?|\b\d{3}[-. ]?)\d{3}[-. ]\d{4}\b";
pub const SSN_PATTERN: &str = r"\b\d{3}-\d{2}-\d{4}\b";
pub const CREDIT_CARD_PATTERN: &str = r"\b(?:\d[ -]?){12,18}\d\b";
pub const DEFAULT_KEYWORDS: &[&str] = &["confidential", "proprietary", "ssn", "salary", "password"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CategoryKind {
    Pattern,
    KeywordList,
}

/// Post-match check applied to every regex hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Validator {
    Luhn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryConfig {
    pub name: String,
    pub kind: CategoryKind,
    #[serde(default)]
    pub patterns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate: Option<Validator>,
}

/// On-disk dictionary description; `[[category]]` tables in TOML.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DictionaryConfig {
    #[serde(default)]
    pub category: Vec<CategoryConfig>,
}

impl DictionaryConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::Dictionary(format!("{}: {e}", path.display())))
        }
    }

    pub fn default_categories() -> Self {
        let pat = |name: &str, p: &str, validate| CategoryConfig {
            name: name.into(),
            kind: CategoryKind::Pattern,
            patterns: vec![p.into()],
            validate,
        };
        DictionaryConfig {
            category: vec![
                pat(EMAIL, EMAIL_PATTERN, None),
                pat(PHONE, PHONE_PATTERN, None),
                pat(SSN, SSN_PATTERN, None),
                pat(CREDIT_CARD, CREDIT_CARD_PATTERN, Some(Validator::Luhn)),
                CategoryConfig {
                    name: KEYWORDS.into(),
                    kind: CategoryKind::KeywordList,
                    patterns: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
                    validate: None,
                },
            ],
        }
    }
}

#[derive(Debug, Clone)]
enum Matcher {
    Patterns(Vec<Regex>, Option<Validator>),
    Keywords(HashSet<String>),
}

#[derive(Debug, Clone)]
pub struct Category {
    pub name: String,
    pub kind: CategoryKind,
    pub patterns: Vec<String>,
    matcher: Matcher,
}

/// Compiled, immutable set of sensitive-information categories.
#[derive(Debug, Clone)]
pub struct Dictionary {
    categories: Vec<Category>,
}

/// Compile a dictionary; `None` or a config without categories yields the
/// default five-category dictionary.
pub fn compile_dictionary(config: Option<&DictionaryConfig>) -> Result<Dictionary> {
    let default;
    let config = match config {
        Some(c) if !c.category.is_empty() => c,
        _ => {
            default = DictionaryConfig::default_categories();
            &default
        }
    };
    let mut names = HashSet::new();
    let mut categories = Vec::with_capacity(config.category.len());
    for c in &config.category {
        if c.name.trim().is_empty() {
            return Err(Error::Dictionary("category with empty name".into()));
        }
        if !names.insert(c.name.clone()) {
            return Err(Error::Dictionary(format!("duplicate category `{}`", c.name)));
        }
        let matcher = match c.kind {
            CategoryKind::Pattern => {
                let mut compiled = Vec::with_capacity(c.patterns.len());
                for p in &c.patterns {
                    let re = Regex::new(p).map_err(|e| Error::Pattern {
                        category: c.name.clone(),
                        pattern: p.clone(),
                        message: e.to_string(),
                    })?;
                    compiled.push(re);
                }
                Matcher::Patterns(compiled, c.validate)
            }
            CategoryKind::KeywordList => {
                let mut set = HashSet::new();
                for k in &c.patterns {
                    let k = k.trim().to_lowercase();
                    if k.is_empty() || !k.chars().all(char::is_alphanumeric) {
                        return Err(Error::Dictionary(format!(
                            "category `{}`: keyword `{k}` must be a single nonempty alphanumeric token",
                            c.name
                        )));
                    }
                    set.insert(k);
                }
                Matcher::Keywords(set)
            }
        };
        categories.push(Category {
            name: c.name.clone(),
            kind: c.kind,
            patterns: c.patterns.clone(),
            matcher,
        });
    }
    Ok(Dictionary { categories })
}

impl Dictionary {
    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category_names(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|c| c.name.as_str())
    }

    fn zero_matches(&self) -> BTreeMap<String, u64> {
        self.category_names().map(|n| (n.to_string(), 0)).collect()
    }
}

/// Lowercased alphanumeric tokens with stop words removed.
pub fn content_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !is_stop_word(t))
}

pub fn luhn_valid(candidate: &str) -> bool {
    let digits: Vec<u32> = candidate.chars().filter_map(|c| c.to_digit(10)).collect();
    if !(13..=19).contains(&digits.len()) {
        return false;
    }
    let sum: u32 = digits
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 1 {
                let dd = d * 2;
                if dd > 9 {
                    dd - 9
                } else {
                    dd
                }
            } else {
                d
            }
        })
        .sum();
    sum % 10 == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentScanResult {
    pub file: String,
    pub crawled: bool,
    pub total_tokens: u64,
    pub matches: BTreeMap<String, u64>,
}

impl ContentScanResult {
    pub fn total_matches(&self) -> u64 {
        self.matches.values().sum()
    }

    pub fn not_crawled(file: impl Into<String>, dict: &Dictionary) -> Self {
        ContentScanResult {
            file: file.into(),
            crawled: false,
            total_tokens: 0,
            matches: dict.zero_matches(),
        }
    }
}

/// Count dictionary hits in already-extracted text.
pub fn scan_content(text: &str, dict: &Dictionary) -> ContentScanResult {
    let tokens: Vec<String> = content_tokens(text).collect();
    let mut matches = BTreeMap::new();
    for cat in &dict.categories {
        let n = match &cat.matcher {
            Matcher::Patterns(res, validator) => res
                .iter()
                .map(|re| {
                    re.find_iter(text)
                        .filter(|m| match validator {
                            Some(Validator::Luhn) => luhn_valid(m.as_str()),
                            None => true,
                        })
                        .count() as u64
                })
                .sum(),
            Matcher::Keywords(set) => tokens.iter().filter(|t| set.contains(t.as_str())).count() as u64,
        };
        matches.insert(cat.name.clone(), n);
    }
    ContentScanResult {
        file: String::new(),
        crawled: true,
        total_tokens: tokens.len() as u64,
        matches,
    }
}

/// Pluggable text extractor for a binary document format.
pub trait TextExtractor: Send + Sync {
    fn extract(&self, bytes: &[u8]) -> Option<String>;
}

const PLAIN_EXTENSIONS: &[&str] = &[
    ".txt", ".text", ".log", ".md", ".csv", ".tsv", ".json", ".jsonl", ".yaml", ".yml", ".ini",
    ".cfg", ".conf", ".properties", ".sql", ".eml",
];
const MARKUP_EXTENSIONS: &[&str] = &[".html", ".htm", ".xhtml", ".xml"];

/// Built-in plain-text and markup extraction plus registered plugins.
#[derive(Default)]
pub struct Extractors {
    plugins: HashMap<String, Box<dyn TextExtractor>>,
}

impl fmt::Debug for Extractors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut keys: Vec<_> = self.plugins.keys().collect();
        keys.sort();
        f.debug_struct("Extractors").field("plugins", &keys).finish()
    }
}

impl Extractors {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register `extractor` for `extension` (with leading dot), replacing any
    /// built-in handling.
    pub fn register(&mut self, extension: &str, extractor: Box<dyn TextExtractor>) {
        self.plugins.insert(extension.to_lowercase(), extractor);
    }

    pub fn supports(&self, extension: &str) -> bool {
        let ext = extension.to_lowercase();
        self.plugins.contains_key(&ext)
            || PLAIN_EXTENSIONS.contains(&ext.as_str())
            || MARKUP_EXTENSIONS.contains(&ext.as_str())
    }

    /// Returns the text and whether it could be crawled at all.
    pub fn extract_text(&self, bytes: &[u8], extension: &str) -> (String, bool) {
        let ext = extension.to_lowercase();
        if let Some(p) = self.plugins.get(&ext) {
            return match p.extract(bytes) {
                Some(t) => (t, true),
                None => (String::new(), false),
            };
        }
        let markup = MARKUP_EXTENSIONS.contains(&ext.as_str());
        if !markup && !PLAIN_EXTENSIONS.contains(&ext.as_str()) {
            return (String::new(), false);
        }
        let text = match decode_text(bytes) {
            Some(t) => t,
            None => return (String::new(), false),
        };
        if markup {
            (strip_markup(text), true)
        } else {
            (text.to_string(), true)
        }
    }
}

fn decode_text(bytes: &[u8]) -> Option<&str> {
    let bytes = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    let text = std::str::from_utf8(bytes).ok()?;
    if text.contains('\0') {
        return None;
    }
    Some(text)
}

fn strip_markup(text: &str) -> String {
    static TAG: OnceLock<Regex> = OnceLock::new();
    let tag = TAG.get_or_init(|| Regex::new(r"<[^>]*>").unwrap());
    tag.replace_all(text, " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

/// Read, extract and scan one file; read failures count as not crawled.
pub fn scan_file(path: &Path, file_ref: &str, extension: &str, dict: &Dictionary, extractors: &Extractors) -> ContentScanResult {
    if !extractors.supports(extension) {
        return ContentScanResult::not_crawled(file_ref, dict);
    }
    let bytes = match crate::scan::read_content(path) {
        Ok(b) => b,
        Err(_) => return ContentScanResult::not_crawled(file_ref, dict),
    };
    let (text, crawled) = extractors.extract_text(&bytes, extension);
    if !crawled {
        return ContentScanResult::not_crawled(file_ref, dict);
    }
    let mut result = scan_content(&text, dict);
    result.file = file_ref.to_string();
    result
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityLabel {
    Sensitive,
    NonSensitive,
    Unknown,
}

impl SensitivityLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SensitivityLabel::Sensitive => "sensitive",
            SensitivityLabel::NonSensitive => "non-sensitive",
            SensitivityLabel::Unknown => "unknown",
        }
    }

    /// Binary training target; `None` for unknown.
    pub fn as_bool(self) -> Option<bool> {
        match self {
            SensitivityLabel::Sensitive => Some(true),
            SensitivityLabel::NonSensitive => Some(false),
            SensitivityLabel::Unknown => None,
        }
    }

    pub fn from_bool(sensitive: bool) -> Self {
        if sensitive {
            SensitivityLabel::Sensitive
        } else {
            SensitivityLabel::NonSensitive
        }
    }
}

impl fmt::Display for SensitivityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SensitivityLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sensitive" => Ok(SensitivityLabel::Sensitive),
            "non-sensitive" => Ok(SensitivityLabel::NonSensitive),
            "unknown" => Ok(SensitivityLabel::Unknown),
            other => Err(Error::invalid(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    #[default]
    AnyMatch,
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRule {
    #[serde(default)]
    pub mode: LabelMode,
    /// Minimum `matches / total_tokens`; only used in threshold mode.
    #[serde(default)]
    pub threshold: f64,
}

impl LabelRule {
    pub fn any_match() -> Self {
        LabelRule::default()
    }

    pub fn threshold(threshold: f64) -> Self {
        LabelRule {
            mode: LabelMode::Threshold,
            threshold,
        }
    }
}

pub fn label_file(result: &ContentScanResult, rule: &LabelRule) -> SensitivityLabel {
    if !result.crawled {
        return SensitivityLabel::Unknown;
    }
    let total = result.total_matches();
    let sensitive = match rule.mode {
        LabelMode::AnyMatch => total > 0,
        LabelMode::Threshold => total as f64 / result.total_tokens.max(1) as f64 >= rule.threshold,
    };
    SensitivityLabel::from_bool(sensitive)
}

pub fn write_scan_results<W: Write>(results: &[ContentScanResult], mut w: W) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn default_dict() -> Dictionary {
        compile_dictionary(None).unwrap()
    }

    #[test]
    fn empty_spec_gives_default_dictionary() {
        let d = compile_dictionary(Some(&DictionaryConfig::default())).unwrap();
        let names: Vec<_> = d.category_names().collect();
        assert_eq!(names, vec![EMAIL, PHONE, SSN, CREDIT_CARD, KEYWORDS]);
    }

    #[test]
    fn two_category_toml_spec() {
        let text = r#"
            [[category]]
            name = "email"
            kind = "pattern"
            patterns = ['\b\S+@\S+\.\w+\b']

            [[category]]
            name = "words"
            kind = "keyword-list"
            patterns = ["confidential"]
        "#;
        let cfg: DictionaryConfig = toml::from_str(text).unwrap();
        let d = compile_dictionary(Some(&cfg)).unwrap();
        assert_eq!(d.categories().len(), 2);
        let r = scan_content("CONFIDENTIAL memo to x@y.com", &d);
        assert_eq!(r.matches["email"], 1);
        assert_eq!(r.matches["words"], 1);
    }

    #[test]
    fn bad_pattern_names_category() {
        let cfg = DictionaryConfig {
            category: vec![CategoryConfig {
                name: "broken".into(),
                kind: CategoryKind::Pattern,
                patterns: vec!["([".into()],
                validate: None,
            }],
        };
        match compile_dictionary(Some(&cfg)).unwrap_err() {
            Error::Pattern { category, pattern, .. } => {
                assert_eq!(category, "broken");
                assert_eq!(pattern, "([");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_and_bad_keyword_rejected() {
        let mut cfg = DictionaryConfig::default_categories();
        cfg.category.push(cfg.category[0].clone());
        assert!(compile_dictionary(Some(&cfg)).is_err());
        let cfg = DictionaryConfig {
            category: vec![CategoryConfig {
                name: "k".into(),
                kind: CategoryKind::KeywordList,
                patterns: vec!["".into()],
                validate: None,
            }],
        };
        assert!(compile_dictionary(Some(&cfg)).is_err());
    }

    #[test]
    fn empty_text() {
        let r = scan_content("", &default_dict());
        assert_eq!(r.total_tokens, 0);
        assert_eq!(r.total_matches(), 0);
        assert_eq!(r.matches.len(), 5);
    }

    #[test]
    fn two_emails() {
        // by hand: "a@b.com" and "c@d.org" each match local@domain.tld
        let r = scan_content("contact a@b.com or c@d.org", &default_dict());
        assert_eq!(r.matches[EMAIL], 2);
        assert_eq!(r.total_matches(), 2);
    }

    #[test]
    fn one_ssn() {
        let r = scan_content("SSN: 123-45-6789", &default_dict());
        assert_eq!(r.matches[SSN], 1);
        assert_eq!(r.matches[PHONE], 0);
        assert_eq!(r.matches[CREDIT_CARD], 0);
        // "ssn" is also a default keyword
        assert_eq!(r.matches[KEYWORDS], 1);
    }

    #[test]
    fn phone_formats() {
        let d = default_dict();
        for p in ["555-123-4567", "(555) 123-4567", "+1 555 123 4567", "1-555-123-4567", "555.123.4567"] {
            let r = scan_content(&format!("call {p} today"), &d);
            assert_eq!(r.matches[PHONE], 1, "{p}");
        }
        assert_eq!(scan_content("order 12345678901234", &d).matches[PHONE], 0);
    }

    #[test]
    fn credit_cards_require_luhn() {
        let d = default_dict();
        assert!(luhn_valid("4111 1111 1111 1111"));
        assert!(!luhn_valid("4111 1111 1111 1112"));
        assert_eq!(scan_content("card 4111-1111-1111-1111 ok", &d).matches[CREDIT_CARD], 1);
        assert_eq!(scan_content("card 4111111111111112 no", &d).matches[CREDIT_CARD], 0);
    }

    #[test]
    fn stop_words_are_not_counted() {
        let r = scan_content("the password is in the safe", &default_dict());
        assert_eq!(r.total_tokens, 2);
        assert_eq!(r.matches[KEYWORDS], 1);
    }

    struct FakeDocx;
    impl TextExtractor for FakeDocx {
        fn extract(&self, bytes: &[u8]) -> Option<String> {
            bytes.strip_prefix(b"DOCX:").map(|b| String::from_utf8_lossy(b).into_owned())
        }
    }

    #[test]
    fn extraction_families() {
        let mut ex = Extractors::new();
        assert_eq!(ex.extract_text(b"hello world", ".txt"), ("hello world".to_string(), true));
        assert_eq!(ex.extract_text(&[0xff, 0x00, 0x13, 0x37], ".bin"), (String::new(), false));
        assert_eq!(ex.extract_text(&[0xff, 0xfe, 0x00], ".txt"), (String::new(), false));
        assert_eq!(ex.extract_text(b"DOCX:body text", ".docx"), (String::new(), false));
        let (html, ok) = ex.extract_text(b"<p>a&amp;b</p>", ".HTML");
        assert!(ok);
        assert_eq!(html.trim(), "a&b");
        ex.register(".docx", Box::new(FakeDocx));
        assert_eq!(ex.extract_text(b"DOCX:body text", ".docx"), ("body text".to_string(), true));
        assert_eq!(ex.extract_text(b"garbage", ".docx"), (String::new(), false));
    }

    #[test]
    fn labels() {
        let d = default_dict();
        let nc = ContentScanResult::not_crawled("f", &d);
        assert_eq!(label_file(&nc, &LabelRule::any_match()), SensitivityLabel::Unknown);
        let clean = scan_content("nothing here", &d);
        assert_eq!(label_file(&clean, &LabelRule::any_match()), SensitivityLabel::NonSensitive);

        let mut r = clean.clone();
        r.total_tokens = 100;
        r.matches.insert(EMAIL.into(), 3);
        assert_eq!(label_file(&r, &LabelRule::threshold(0.05)), SensitivityLabel::NonSensitive);
        assert_eq!(label_file(&r, &LabelRule::threshold(0.02)), SensitivityLabel::Sensitive);
        assert_eq!(label_file(&r, &LabelRule::any_match()), SensitivityLabel::Sensitive);
    }

    #[test]
    fn scan_file_reads_disk() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        std::fs::write(&p, "name,email\nbob,bob@example.com\n").unwrap();
        let d = default_dict();
        let r = scan_file(&p, "x.csv", ".csv", &d, &Extractors::new());
        assert!(r.crawled);
        assert_eq!(r.file, "x.csv");
        assert_eq!(r.matches[EMAIL], 1);
        let missing = scan_file(&dir.path().join("gone.txt"), "gone.txt", ".txt", &d, &Extractors::new());
        assert!(!missing.crawled);
    }

    #[test]
    fn label_round_trips_through_str() {
        for l in [SensitivityLabel::Sensitive, SensitivityLabel::NonSensitive, SensitivityLabel::Unknown] {
            assert_eq!(l.as_str().parse::<SensitivityLabel>().unwrap(), l);
        }
    }

    fn text_piece() -> impl Strategy<Value = String> {
        prop_oneof![
            "[a-zA-Z ,.]{0,30}",
            Just("mail me: x.y@corp.example.com".to_string()),
            Just("ssn 078-05-1120".to_string()),
            Just("tel (212) 555-0187".to_string()),
            Just("cc 4012 8888 8888 1881".to_string()),
            Just("Confidential salary data".to_string()),
            "[0-9 -]{0,24}",
        ]
    }

    proptest! {
        // appending a new line of text never lowers a count
        #[test]
        fn counts_monotone_under_append(a in text_piece(), b in text_piece()) {
            let d = default_dict();
            let before = scan_content(&a, &d);
            let after = scan_content(&format!("{a}\n{b}"), &d);
            for (k, v) in &before.matches {
                prop_assert!(after.matches[k] >= *v, "{k}: {v} -> {}", after.matches[k]);
            }
            prop_assert!(after.total_tokens >= before.total_tokens);
            let la = label_file(&before, &LabelRule::any_match());
            let lb = label_file(&after, &LabelRule::any_match());
            prop_assert!(!(la == SensitivityLabel::Sensitive && lb == SensitivityLabel::NonSensitive));
        }

        #[test]
        fn unknown_iff_not_crawled(crawled in any::<bool>(), text in text_piece()) {
            let d = default_dict();
            let r = if crawled { scan_content(&text, &d) } else { ContentScanResult::not_crawled("f", &d) };
            let l = label_file(&r, &LabelRule::any_match());
            prop_assert_eq!(l == SensitivityLabel::Unknown, !crawled);
            prop_assert_eq!(scan_content(&text, &d), scan_content(&text, &d));
        }
    }
}
