//! Part-of-speech keyword extraction.
//!
//! Keywords are the words of a text whose tag falls in the requested word
//! class. Taggers are pluggable; the bundled ones are deterministic and need
//! no model files.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tokenizer::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Noun,
    Verb,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordClasses {
    Nouns,
    Verbs,
    NounsAndVerbs,
}

impl WordClasses {
    pub const ALL: [WordClasses; 3] = [Self::Nouns, Self::Verbs, Self::NounsAndVerbs];

    pub fn accepts(self, tag: Tag) -> bool {
        matches!(
            (self, tag),
            (Self::Nouns, Tag::Noun)
                | (Self::Verbs, Tag::Verb)
                | (Self::NounsAndVerbs, Tag::Noun | Tag::Verb)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nouns => "nouns",
            Self::Verbs => "verbs",
            Self::NounsAndVerbs => "nouns_and_verbs",
        }
    }
}

impl fmt::Display for WordClasses {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WordClasses {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().replace(['-', '+'], "_").as_str() {
            "nouns" | "noun" | "n" => Ok(Self::Nouns),
            "verbs" | "verb" | "v" => Ok(Self::Verbs),
            "nouns_and_verbs" | "both" | "nv" | "nouns_verbs" => Ok(Self::NounsAndVerbs),
            other => Err(Error::config(format!("unknown keyword class `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub words: Vec<String>,
    pub classes: WordClasses,
    /// Fraction of source sentences the keywords were drawn from.
    pub source_ratio: f64,
}

impl KeywordSet {
    pub fn new(words: Vec<String>, classes: WordClasses) -> Self {
        Self {
            words,
            classes,
            source_ratio: 1.0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn joined(&self) -> String {
        self.words.join(" ")
    }
}

pub trait PosTagger: Send + Sync {
    fn name(&self) -> &str;

    /// Tags one normalized (case-folded, punctuation-free) word.
    fn tag(&self, word: &str) -> Tag;
}

/// Suffix rules only: `-s`, `-tion`, `-ity` are nouns; `-ize`, `-ed`, `-ing`
/// are verbs; anything else alphabetic is a noun. Non-alphabetic tokens
/// (numbers, punctuation) are `Other`.
#[derive(Debug, Default, Clone)]
pub struct SuffixTagger;

impl SuffixTagger {
    fn rule(word: &str) -> Tag {
        if !word.chars().any(char::is_alphabetic) {
            return Tag::Other;
        }
        if ["tion", "ity", "s"].iter().any(|s| word.ends_with(s)) {
            Tag::Noun
        } else if ["ize", "ed", "ing"].iter().any(|s| word.ends_with(s)) {
            Tag::Verb
        } else {
            Tag::Noun
        }
    }
}

impl PosTagger for SuffixTagger {
    fn name(&self) -> &str {
        "suffix"
    }

    fn tag(&self, word: &str) -> Tag {
        Self::rule(word)
    }
}

/// Word→tag table with the suffix rules as fallback.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    table: HashMap<String, Tag>,
}

const FUNCTION_WORDS: &str = "a an the this that these those there here it its they them their \
    he she him his her we our us you your i me my one ones some any all each every both either \
    neither no not nor none other others such same own more most less least many much few several \
    and or but if then than so as because while although though whereas since unless until whether \
    of in on at by for with without within into onto from to toward towards about above below over \
    under between among through throughout during before after against along across around upon via \
    per versus vs also only even just very too quite rather often usually however thus therefore \
    hence moreover furthermore yet still already again further well not which who whom whose what \
    when where why how can could may might must shall should will would do does did done doing \
    et al etc ie eg";

const VERBS: &str = "is are was were be been being am has have had having causes cause caused \
    include includes included including remains remain show shows showed shown suggest suggests \
    suggested indicate indicates indicated reveal reveals revealed report reported present \
    presents presented associate associates associated find finds found identify identifies \
    identified observe observes observed develop develops developed use uses used using require \
    requires required increase increases increased decrease decreases decreased reduce reduces \
    reduced induce induces induced inhibit inhibits inhibited encode encodes encoded bind binds bound \
    affect affects affected provide provides provided lead leads led make makes made take takes took \
    taken give gives gave given describe describes described discuss discusses discussed review \
    reviews reviewed consider considers considered evaluate evaluates evaluated analyze analyzes \
    analyzed compare compares compared determine determines determined demonstrate demonstrates \
    demonstrated detect detects detected spread spreads infect infects infected replicate replicates \
    replicated emerge emerges emerged transmit transmits transmitted occur occurs occurred exhibit \
    exhibits exhibited result resulted contribute contributes contributed prevent prevents \
    prevented treat treats treated protect protects protected target targeted suppress \
    suppresses suppressed trigger triggers triggered confirm confirms confirmed produce produces \
    produced appear appears appeared become becomes became seem seems seemed";

const ADJECTIVES: &str = "acute chronic severe mild novel new common rare viral bacterial clinical \
    human animal respiratory high low large small early late major minor important significant \
    specific several different similar various potential possible effective positive negative \
    normal natural experimental systemic local global primary secondary frequent recent available \
    current previous first second third main key good better best poor strong weak rapid slow \
    infectious immune antiviral structural nonstructural conserved";

impl LexiconTagger {
    /// The bundled lexicon: closed-class function words, common verbs, and
    /// common adjectives.
    pub fn bundled() -> Self {
        let mut table = HashMap::new();
        for (list, tag) in [
            (FUNCTION_WORDS, Tag::Other),
            (ADJECTIVES, Tag::Other),
            (VERBS, Tag::Verb),
        ] {
            for w in list.split_whitespace() {
                table.insert(w.to_string(), tag);
            }
        }
        Self { table }
    }

    pub fn from_table(table: HashMap<String, Tag>) -> Self {
        Self { table }
    }

    /// Loads `word<TAB>N|V|O` lines on top of the bundled lexicon.
    pub fn with_file(path: &Path) -> Result<Self> {
        let mut tagger = Self::bundled();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(word), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("line {}: expected `word TAG`", lineno + 1),
                });
            };
            let tag = match tag {
                "N" | "n" => Tag::Noun,
                "V" | "v" => Tag::Verb,
                "O" | "o" => Tag::Other,
                other => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        reason: format!("line {}: unknown tag `{other}`", lineno + 1),
                    })
                }
            };
            tagger.table.insert(word.to_lowercase(), tag);
        }
        Ok(tagger)
    }
}

impl PosTagger for LexiconTagger {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn tag(&self, word: &str) -> Tag {
        self.table
            .get(word)
            .copied()
            .unwrap_or_else(|| SuffixTagger::rule(word))
    }
}

#[derive(Debug, Clone, Default)]
pub struct TaggerArgs {
    pub lexicon: Option<PathBuf>,
}

pub fn taggers() -> Registry<dyn PosTagger, TaggerArgs> {
    let mut reg: Registry<dyn PosTagger, TaggerArgs> = Registry::new("tagger");
    reg.register("lexicon", |args: &TaggerArgs| {
        Ok(match &args.lexicon {
            Some(path) => Box::new(LexiconTagger::with_file(path)?),
            None => Box::new(LexiconTagger::bundled()),
        })
    });
    reg.register("suffix", |_: &TaggerArgs| Ok(Box::new(SuffixTagger)));
    reg
}

/// Words of `text` whose tag matches `classes`, in source order with
/// duplicates kept.
pub fn extract_keywords(text: &str, classes: WordClasses, tagger: &dyn PosTagger) -> KeywordSet {
    let words = normalize(text)
        .into_iter()
        .filter(|w| classes.accepts(tagger.tag(w)))
        .collect();
    KeywordSet::new(words, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_lexicon() -> LexiconTagger {
        LexiconTagger::from_table(HashMap::from([
            ("virus".to_string(), Tag::Noun),
            ("causes".to_string(), Tag::Verb),
            ("failure".to_string(), Tag::Noun),
        ]))
    }

    #[test]
    fn filters_by_class() {
        let t = toy_lexicon();
        let text = "virus causes failure";
        assert_eq!(extract_keywords(text, WordClasses::Nouns, &t).words, ["virus", "failure"]);
        assert_eq!(extract_keywords(text, WordClasses::Verbs, &t).words, ["causes"]);
        assert_eq!(
            extract_keywords(text, WordClasses::NounsAndVerbs, &t).words,
            ["virus", "causes", "failure"]
        );
        assert!(extract_keywords("", WordClasses::Nouns, &t).is_empty());
    }

    #[test]
    fn duplicates_and_order_are_kept() {
        let t = LexiconTagger::bundled();
        let ks = extract_keywords(
            "Rhabdomyolysis is associated with parainfluenza virus. The virus causes rhabdomyolysis.",
            WordClasses::Nouns,
            &t,
        );
        assert_eq!(
            ks.words,
            ["rhabdomyolysis", "parainfluenza", "virus", "virus", "rhabdomyolysis"]
        );
    }

    #[test]
    fn suffix_rules() {
        let t = SuffixTagger;
        assert_eq!(t.tag("infections"), Tag::Noun);
        assert_eq!(t.tag("mutation"), Tag::Noun);
        assert_eq!(t.tag("immunity"), Tag::Noun);
        assert_eq!(t.tag("characterize"), Tag::Verb);
        assert_eq!(t.tag("infected"), Tag::Verb);
        assert_eq!(t.tag("binding"), Tag::Verb);
        assert_eq!(t.tag("host"), Tag::Noun);
        assert_eq!(t.tag("2"), Tag::Other);
        assert_eq!(t.tag(","), Tag::Other);
    }

    #[test]
    fn lexicon_overrides_suffix_rules() {
        let t = LexiconTagger::bundled();
        assert_eq!(t.tag("causes"), Tag::Verb);
        assert_eq!(t.tag("is"), Tag::Verb);
        assert_eq!(t.tag("the"), Tag::Other);
        assert_eq!(t.tag("virus"), Tag::Noun);
    }

    #[test]
    fn lexicon_file_extends_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.tsv");
        std::fs::write(&path, "# custom\nvirus\tV\nHost O\n").unwrap();
        let t = LexiconTagger::with_file(&path).unwrap();
        assert_eq!(t.tag("virus"), Tag::Verb);
        assert_eq!(t.tag("host"), Tag::Other);
        assert_eq!(t.tag("the"), Tag::Other);

        std::fs::write(&path, "virus X\n").unwrap();
        assert!(LexiconTagger::with_file(&path).is_err());
    }

    #[test]
    fn registry_knows_both_taggers() {
        let reg = taggers();
        assert_eq!(reg.names().collect::<Vec<_>>(), ["lexicon", "suffix"]);
        assert_eq!(reg.build("suffix", &TaggerArgs::default()).unwrap().name(), "suffix");
        assert!(reg.build("nltk", &TaggerArgs::default()).is_err());
    }

    #[test]
    fn class_names_parse() {
        for c in WordClasses::ALL {
            assert_eq!(c.as_str().parse::<WordClasses>().unwrap(), c);
        }
        assert!("adjectives".parse::<WordClasses>().is_err());
    }
}
