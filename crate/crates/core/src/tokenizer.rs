//! Vocabulary, greedy tokenizer, and the filler-token registry.
//!
//! The experiments need exact control over which id a filler kind maps to,
//! so the vocabulary is a small explicit table rather than a trained
//! subword model. Encoding is greedy longest-match; the standard table
//! contains every printable ASCII character as a single-char entry, which
//! makes encode/decode a round trip over that alphabet.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::TokenId;

/// Reserved surface forms that every vocabulary must contain.
const RESERVED: [&str; 4] = ["<pad>", "<eos>", "<eot>", "<unk>"];

/// The six filler kinds an experiment can insert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillerKind {
    Space,
    Enter,
    Tab,
    Period,
    Pad,
    Dash,
}

impl FillerKind {
    pub const ALL: [FillerKind; 6] = [
        FillerKind::Space,
        FillerKind::Enter,
        FillerKind::Tab,
        FillerKind::Period,
        FillerKind::Pad,
        FillerKind::Dash,
    ];

    /// The text form a run of this filler kind is built from.
    pub fn surface(self) -> &'static str {
        match self {
            FillerKind::Space => " ",
            FillerKind::Enter => "\n",
            FillerKind::Tab => "\t",
            FillerKind::Period => ".",
            FillerKind::Pad => "<pad>",
            FillerKind::Dash => "-",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FillerKind::Space => "space",
            FillerKind::Enter => "enter",
            FillerKind::Tab => "tab",
            FillerKind::Period => "period",
            FillerKind::Pad => "pad",
            FillerKind::Dash => "dash",
        }
    }
}

impl fmt::Display for FillerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FillerKind {
    type Err = VocabError;

    fn from_str(s: &str) -> Result<Self, VocabError> {
        FillerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| VocabError::InvalidEntry(format!("unknown filler kind `{s}`")))
    }
}

/// Role a vocabulary entry plays, as written in the table file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryClass {
    Normal,
    Special,
    Filler(FillerKind),
    OptionLetter(char),
    AnswerCue,
}

impl EntryClass {
    fn as_string(self) -> String {
        match self {
            EntryClass::Normal => "normal".into(),
            EntryClass::Special => "special".into(),
            EntryClass::Filler(kind) => format!("filler:{kind}"),
            EntryClass::OptionLetter(letter) => format!("option:{letter}"),
            EntryClass::AnswerCue => "answer_cue".into(),
        }
    }

    fn parse(s: &str) -> Result<Self, VocabError> {
        if s == "normal" {
            return Ok(EntryClass::Normal);
        }
        if s == "special" {
            return Ok(EntryClass::Special);
        }
        if s == "answer_cue" {
            return Ok(EntryClass::AnswerCue);
        }
        if let Some(kind) = s.strip_prefix("filler:") {
            return Ok(EntryClass::Filler(kind.parse()?));
        }
        if let Some(letter) = s.strip_prefix("option:") {
            let mut chars = letter.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if c.is_ascii_uppercase() => {
                    return Ok(EntryClass::OptionLetter(c))
                }
                _ => {
                    return Err(VocabError::InvalidEntry(format!(
                        "option class needs a single uppercase letter, got `{letter}`"
                    )))
                }
            }
        }
        Err(VocabError::InvalidEntry(format!("unknown class `{s}`")))
    }
}

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("vocabulary file {path}, line {line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("invalid vocabulary entry: {0}")]
    InvalidEntry(String),
    #[error("duplicate surface form {0:?}")]
    DuplicateSurface(String),
    #[error("duplicate class {0}")]
    DuplicateClass(String),
    #[error("vocabulary is missing the reserved entry {0:?}")]
    MissingSpecial(&'static str),
    #[error("no token registered for filler kind `{0}`")]
    MissingFiller(FillerKind),
    #[error("no token registered for option letter `{0}`")]
    MissingOption(char),
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("alias target id {0} is outside the vocabulary")]
    InvalidAlias(u32),
}

/// Bidirectional token table plus the filler/option/cue registries.
///
/// Surfaces are stored by id; classes live only in the registries, so an
/// alias (say pad pointing at eos) is a registry edit, not a table edit.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    entries: Vec<String>,
    lookup: HashMap<String, TokenId>,
    max_entry_bytes: usize,
    pad: TokenId,
    eos: TokenId,
    eot: TokenId,
    unknown: TokenId,
    fillers: BTreeMap<FillerKind, TokenId>,
    options: BTreeMap<char, TokenId>,
    answer_cue: Option<TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from `(surface, class)` pairs; the pair index is
    /// the token id. All four reserved entries must be present and surfaces
    /// must be unique and non-empty.
    pub fn from_entries(pairs: Vec<(String, EntryClass)>) -> Result<Self, VocabError> {
        let mut lookup = HashMap::with_capacity(pairs.len());
        let mut fillers = BTreeMap::new();
        let mut options = BTreeMap::new();
        let mut answer_cue = None;
        let mut max_entry_bytes = 0;
        let mut entries = Vec::with_capacity(pairs.len());
        for (i, (text, class)) in pairs.into_iter().enumerate() {
            let id = TokenId(i as u32);
            if text.is_empty() {
                return Err(VocabError::InvalidEntry(format!("entry {i} is empty")));
            }
            if lookup.insert(text.clone(), id).is_some() {
                return Err(VocabError::DuplicateSurface(text));
            }
            match class {
                EntryClass::Filler(kind) => {
                    if fillers.insert(kind, id).is_some() {
                        return Err(VocabError::DuplicateClass(format!("filler:{kind}")));
                    }
                }
                EntryClass::OptionLetter(letter) => {
                    if !('A'..='E').contains(&letter) {
                        return Err(VocabError::InvalidEntry(format!(
                            "option letter `{letter}` is outside A-E"
                        )));
                    }
                    if options.insert(letter, id).is_some() {
                        return Err(VocabError::DuplicateClass(format!("option:{letter}")));
                    }
                }
                EntryClass::AnswerCue => {
                    if answer_cue.replace(id).is_some() {
                        return Err(VocabError::DuplicateClass("answer_cue".into()));
                    }
                }
                EntryClass::Normal | EntryClass::Special => {}
            }
            max_entry_bytes = max_entry_bytes.max(text.len());
            entries.push(text);
        }
        let find = |surface: &'static str| {
            lookup
                .get(surface)
                .copied()
                .ok_or(VocabError::MissingSpecial(surface))
        };
        Ok(Vocabulary {
            pad: find("<pad>")?,
            eos: find("<eos>")?,
            eot: find("<eot>")?,
            unknown: find("<unk>")?,
            entries,
            lookup,
            max_entry_bytes,
            fillers,
            options,
            answer_cue,
        })
    }

    /// The standard experiment vocabulary: reserved entries, the six filler
    /// tokens, option letters A-E, the answer cue, every printable ASCII
    /// character, and the words the templates and synthetic tasks use.
    pub fn standard() -> Self {
        let mut pairs: Vec<(String, EntryClass)> = vec![
            ("<pad>".into(), EntryClass::Filler(FillerKind::Pad)),
            ("<eos>".into(), EntryClass::Special),
            ("<eot>".into(), EntryClass::Special),
            ("<unk>".into(), EntryClass::Special),
            (" ".into(), EntryClass::Filler(FillerKind::Space)),
            ("\n".into(), EntryClass::Filler(FillerKind::Enter)),
            ("\t".into(), EntryClass::Filler(FillerKind::Tab)),
            (".".into(), EntryClass::Filler(FillerKind::Period)),
            ("-".into(), EntryClass::Filler(FillerKind::Dash)),
        ];
        for letter in 'A'..='E' {
            pairs.push((letter.to_string(), EntryClass::OptionLetter(letter)));
        }
        pairs.push(("Answer:".into(), EntryClass::AnswerCue));
        for byte in 0x20u8..0x7f {
            let ch = byte as char;
            if matches!(ch, ' ' | '.' | '-' | 'A'..='E') {
                continue;
            }
            pairs.push((ch.to_string(), EntryClass::Normal));
        }
        for word in [
            "Question:",
            "Context:",
            "Options:",
            "Which",
            "What",
            "The",
            "the",
            "answer",
            "option",
            "equals",
            "plus",
            "minus",
            "times",
            "is",
            "of",
            "to",
            "and",
            "gives",
            "Adding",
            "Choose",
            "correct",
            "You",
            "are",
            "helpful",
            "assistant",
            "number",
            "value",
            "Respond",
            "with",
            "letter",
            "only",
        ] {
            pairs.push((word.into(), EntryClass::Normal));
        }
        Vocabulary::from_entries(pairs).expect("standard vocabulary table is well-formed")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Surface form of `id`, if it is in range.
    pub fn token_text(&self, id: TokenId) -> Option<&str> {
        self.entries.get(id.index()).map(String::as_str)
    }

    /// Id of an exact surface form.
    pub fn token_id(&self, text: &str) -> Option<TokenId> {
        self.lookup.get(text).copied()
    }

    pub fn pad_id(&self) -> TokenId {
        self.pad
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos
    }

    pub fn eot_id(&self) -> TokenId {
        self.eot
    }

    pub fn unknown_id(&self) -> TokenId {
        self.unknown
    }

    /// The single-token answer cue, when the table declares one.
    pub fn answer_cue_id(&self) -> Option<TokenId> {
        self.answer_cue
    }

    pub fn option_id(&self, letter: char) -> Option<TokenId> {
        self.options.get(&letter).copied()
    }

    /// Ids for the first `count` option letters, in letter order.
    pub fn option_ids(&self, count: usize) -> Result<Vec<(char, TokenId)>, VocabError> {
        ('A'..)
            .take(count)
            .map(|letter| {
                self.option_id(letter)
                    .map(|id| (letter, id))
                    .ok_or(VocabError::MissingOption(letter))
            })
            .collect()
    }

    /// Id currently registered for a filler kind (follows aliases).
    pub fn filler_id(&self, kind: FillerKind) -> Result<TokenId, VocabError> {
        self.fillers
            .get(&kind)
            .copied()
            .ok_or(VocabError::MissingFiller(kind))
    }

    /// A run of `count` copies of the filler token for `kind`.
    pub fn filler_ids(&self, kind: FillerKind, count: usize) -> Result<Vec<TokenId>, VocabError> {
        Ok(vec![self.filler_id(kind)?; count])
    }

    /// Points a filler kind at a different token id, e.g. pad at the eos
    /// token for models whose tokenizer folds pad into eos.
    pub fn set_filler_alias(&mut self, kind: FillerKind, target: TokenId) -> Result<(), VocabError> {
        if target.index() >= self.entries.len() {
            return Err(VocabError::InvalidAlias(target.0));
        }
        self.fillers.insert(kind, target);
        Ok(())
    }

    /// Greedy longest-match encoding. Text with no matching entry advances
    /// one character and emits the unknown id.
    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < text.len() {
            let mut end = (pos + self.max_entry_bytes).min(text.len());
            let mut matched = None;
            while end > pos {
                if text.is_char_boundary(end) {
                    if let Some(&id) = self.lookup.get(&text[pos..end]) {
                        matched = Some((id, end));
                        break;
                    }
                }
                end -= 1;
            }
            match matched {
                Some((id, next)) => {
                    out.push(id);
                    pos = next;
                }
                None => {
                    out.push(self.unknown);
                    let ch = text[pos..].chars().next().expect("pos is a char boundary");
                    pos += ch.len_utf8();
                }
            }
        }
        out
    }

    /// Concatenates surface forms. Fails on out-of-range ids.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, VocabError> {
        let mut out = String::new();
        for &id in ids {
            out.push_str(self.token_text(id).ok_or(VocabError::UnknownId(id.0))?);
        }
        Ok(out)
    }

    /// Like [`Vocabulary::decode`], but ids outside the table render as the
    /// unknown token's surface. A model's embedding can be wider than the
    /// table, so generation may emit ids the table never names; scoring
    /// treats those as noise rather than failing the run.
    pub fn decode_lossy(&self, ids: &[TokenId]) -> String {
        let unk = self
            .token_text(self.unknown)
            .expect("unknown token is always in the table");
        ids.iter()
            .map(|&id| self.token_text(id).unwrap_or(unk))
            .collect()
    }

    /// Writes the table as `<id>\t<escaped-surface>\t<class>` lines. Classes
    /// are derived from the live registries, so filler aliases survive a
    /// round trip; an id holding several roles keeps only the
    /// highest-precedence one (cue, then option, then filler).
    pub fn save(&self, path: &Path) -> Result<(), VocabError> {
        let mut filler_of: HashMap<TokenId, FillerKind> = HashMap::new();
        for kind in FillerKind::ALL {
            if let Some(&id) = self.fillers.get(&kind) {
                filler_of.entry(id).or_insert(kind);
            }
        }
        let option_of: HashMap<TokenId, char> =
            self.options.iter().map(|(&l, &id)| (id, l)).collect();
        let mut out = String::new();
        for (i, entry) in self.entries.iter().enumerate() {
            let id = TokenId(i as u32);
            let class = if self.answer_cue == Some(id) {
                EntryClass::AnswerCue
            } else if let Some(&letter) = option_of.get(&id) {
                EntryClass::OptionLetter(letter)
            } else if let Some(&kind) = filler_of.get(&id) {
                EntryClass::Filler(kind)
            } else if RESERVED.contains(&entry.as_str()) {
                EntryClass::Special
            } else {
                EntryClass::Normal
            };
            out.push_str(&format!("{i}\t{}\t{}\n", escape(entry), class.as_string()));
        }
        fs::write(path, out).map_err(|source| VocabError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Loads a table written by [`Vocabulary::save`]. Ids must be dense
    /// `0..n` (any line order).
    pub fn load(path: &Path) -> Result<Self, VocabError> {
        let text = fs::read_to_string(path).map_err(|source| VocabError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let parse_err = |line: usize, detail: String| VocabError::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut rows: Vec<(usize, String, EntryClass)> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let mut fields = line.splitn(3, '\t');
            let (id, surface, class) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(parse_err(line_no, "expected 3 tab-separated fields".into())),
            };
            let id: usize = id
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad id `{id}`")))?;
            let surface = unescape(surface)
                .map_err(|detail| parse_err(line_no, detail))?;
            let class = EntryClass::parse(class)
                .map_err(|e| parse_err(line_no, e.to_string()))?;
            rows.push((id, surface, class));
        }
        rows.sort_by_key(|(id, _, _)| *id);
        for (expected, (id, _, _)) in rows.iter().enumerate() {
            if *id != expected {
                return Err(VocabError::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    detail: format!("ids are not dense: expected {expected}, found {id}"),
                });
            }
        }
        Vocabulary::from_entries(rows.into_iter().map(|(_, s, c)| (s, c)).collect())
    }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            other => out.push(other),
        }
    }
    out
}

fn unescape(text: &str) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some(other) => return Err(format!("unknown escape `\\{other}`")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_table_covers_the_experiment_surface() {
        let vocab = Vocabulary::standard();
        assert!(vocab.len() <= 512, "vocab has {} entries", vocab.len());
        for kind in FillerKind::ALL {
            let id = vocab.filler_id(kind).unwrap();
            assert_eq!(vocab.token_text(id).unwrap(), kind.surface());
        }
        let specials = [
            vocab.pad_id(),
            vocab.eos_id(),
            vocab.eot_id(),
            vocab.unknown_id(),
        ];
        for (i, a) in specials.iter().enumerate() {
            for b in &specials[i + 1..] {
                assert_ne!(a, b);
            }
        }
        assert_eq!(vocab.encode("Answer:"), vec![vocab.answer_cue_id().unwrap()]);
        let options = vocab.option_ids(5).unwrap();
        assert_eq!(options.len(), 5);
        assert_eq!(vocab.token_text(options[3].1).unwrap(), "D");
        assert!(matches!(
            vocab.option_ids(6),
            Err(VocabError::MissingOption('F'))
        ));
    }

    #[test]
    fn encode_decode_round_trips_plain_text() {
        let vocab = Vocabulary::standard();
        for text in [
            "",
            "Question: What is 2 plus 3?\nA. 4\nB. 5\nAnswer:",
            "tabs\tand\nnewlines",
            "x{?}[|]~`^ 0123456789",
        ] {
            let ids = vocab.encode(text);
            assert_eq!(vocab.decode(&ids).unwrap(), text);
        }
        assert!(vocab.encode("").is_empty());
    }

    #[test]
    fn unknown_characters_map_to_the_unknown_token() {
        let vocab = Vocabulary::standard();
        let ids = vocab.encode("caf\u{e9}");
        assert_eq!(ids.last(), Some(&vocab.unknown_id()));
        assert_eq!(vocab.decode(&ids).unwrap(), "caf<unk>");
    }

    #[test]
    fn lossy_decode_substitutes_out_of_table_ids() {
        let vocab = Vocabulary::standard();
        let beyond = TokenId(vocab.len() as u32 + 7);
        let ids = vec![vocab.encode("A")[0], beyond];
        assert!(matches!(
            vocab.decode(&ids),
            Err(VocabError::UnknownId(_))
        ));
        assert_eq!(vocab.decode_lossy(&ids), "A<unk>");
    }

    #[test]
    fn filler_runs_have_exact_counts() {
        let vocab = Vocabulary::standard();
        assert!(vocab.filler_ids(FillerKind::Space, 0).unwrap().is_empty());
        let run = vocab.filler_ids(FillerKind::Tab, 8192).unwrap();
        assert_eq!(run.len(), 8192);
        let id = vocab.filler_id(FillerKind::Tab).unwrap();
        assert!(run.iter().all(|&t| t == id));
    }

    #[test]
    fn pad_alias_redirects_to_eos() {
        let mut vocab = Vocabulary::standard();
        let pad_own = vocab.filler_id(FillerKind::Pad).unwrap();
        assert_eq!(pad_own, vocab.pad_id());
        vocab.set_filler_alias(FillerKind::Pad, vocab.eos_id()).unwrap();
        let run = vocab.filler_ids(FillerKind::Pad, 2).unwrap();
        assert_eq!(run, vec![vocab.eos_id(), vocab.eos_id()]);
        assert_eq!(vocab.decode(&run).unwrap(), "<eos><eos>");
        // Other kinds are untouched.
        assert_eq!(
            vocab.filler_id(FillerKind::Space).unwrap(),
            vocab.token_id(" ").unwrap()
        );
        assert!(matches!(
            vocab.set_filler_alias(FillerKind::Pad, TokenId(9999)),
            Err(VocabError::InvalidAlias(9999))
        ));
    }

    #[test]
    fn save_load_round_trips_including_aliases() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let mut vocab = Vocabulary::standard();
        vocab.set_filler_alias(FillerKind::Pad, vocab.eos_id()).unwrap();
        vocab.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(loaded.len(), vocab.len());
        assert_eq!(loaded.filler_id(FillerKind::Pad).unwrap(), vocab.eos_id());
        for kind in FillerKind::ALL {
            assert_eq!(
                loaded.filler_id(kind).unwrap(),
                vocab.filler_id(kind).unwrap()
            );
        }
        assert_eq!(loaded.answer_cue_id(), vocab.answer_cue_id());
        let text = "escape check: back\\slash \t tab \n newline";
        assert_eq!(loaded.decode(&loaded.encode(text)).unwrap(), text);
    }

    #[test]
    fn small_tables_report_missing_roles() {
        let pairs = vec![
            ("<pad>".to_string(), EntryClass::Special),
            ("<eos>".to_string(), EntryClass::Special),
            ("<eot>".to_string(), EntryClass::Special),
            ("<unk>".to_string(), EntryClass::Special),
            ("x".to_string(), EntryClass::Normal),
        ];
        let vocab = Vocabulary::from_entries(pairs).unwrap();
        assert!(matches!(
            vocab.filler_id(FillerKind::Dash),
            Err(VocabError::MissingFiller(FillerKind::Dash))
        ));
        assert!(vocab.answer_cue_id().is_none());
        assert!(matches!(
            vocab.option_ids(3),
            Err(VocabError::MissingOption('A'))
        ));
    }

    #[test]
    fn table_construction_rejects_malformed_input() {
        let base = || {
            vec![
                ("<pad>".to_string(), EntryClass::Special),
                ("<eos>".to_string(), EntryClass::Special),
                ("<eot>".to_string(), EntryClass::Special),
                ("<unk>".to_string(), EntryClass::Special),
            ]
        };
        let mut dup = base();
        dup.push(("x".into(), EntryClass::Normal));
        dup.push(("x".into(), EntryClass::Normal));
        assert!(matches!(
            Vocabulary::from_entries(dup),
            Err(VocabError::DuplicateSurface(_))
        ));

        let mut two_cues = base();
        two_cues.push(("Answer:".into(), EntryClass::AnswerCue));
        two_cues.push(("Cue:".into(), EntryClass::AnswerCue));
        assert!(matches!(
            Vocabulary::from_entries(two_cues),
            Err(VocabError::DuplicateClass(_))
        ));

        let no_eot = vec![
            ("<pad>".to_string(), EntryClass::Special),
            ("<eos>".to_string(), EntryClass::Special),
            ("<unk>".to_string(), EntryClass::Special),
        ];
        assert!(matches!(
            Vocabulary::from_entries(no_eot),
            Err(VocabError::MissingSpecial("<eot>"))
        ));

        let mut bad_letter = base();
        bad_letter.push(("F".into(), EntryClass::OptionLetter('F')));
        assert!(matches!(
            Vocabulary::from_entries(bad_letter),
            Err(VocabError::InvalidEntry(_))
        ));
    }

    #[test]
    fn load_rejects_malformed_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");

        fs::write(&path, "0\t<pad>\n").unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(VocabError::Parse { line: 1, .. })
        ));

        fs::write(
            &path,
            "0\t<pad>\tspecial\n1\t<eos>\tspecial\n2\t<eot>\tspecial\n5\t<unk>\tspecial\n",
        )
        .unwrap();
        let err = Vocabulary::load(&path).unwrap_err();
        assert!(err.to_string().contains("not dense"), "{err}");

        fs::write(&path, "0\t<pad>\tmystery\n").unwrap();
        assert!(matches!(
            Vocabulary::load(&path),
            Err(VocabError::Parse { line: 1, .. })
        ));

        assert!(matches!(
            Vocabulary::load(&dir.path().join("missing.tsv")),
            Err(VocabError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_over_printable_ascii(text in "[ -~\n\t]{0,64}") {
            let vocab = Vocabulary::standard();
            let ids = vocab.encode(&text);
            prop_assert_eq!(vocab.decode(&ids).unwrap(), text);
        }
    }
}
