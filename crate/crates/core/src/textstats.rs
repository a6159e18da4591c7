//! Spanish text statistics: sentence segmentation, word tokenization,
//! rule-based syllable counting and the Fernández Huerta readability index.
//!
//! ```text
//! FH = 206.84 - 0.60 * P - 1.02 * F
//!   P = syllables per 100 words
//!   F = words per sentence
//! ```
//!
//! Higher values mean easier text. Values are not clamped: very short texts
//! routinely score above 100.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FH_BASE: f64 = 206.84;
pub const FH_SYLLABLE_WEIGHT: f64 = 0.60;
pub const FH_SENTENCE_WEIGHT: f64 = 1.02;

/// Lowercased abbreviations (without their trailing period) that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "sr", "sra", "srta", "srs", "dr", "dra", "núm", "núms", "art", "arts", "etc", "ud", "uds",
    "pág", "págs", "avda", "av", "tel", "aprox", "ej", "vol", "cap", "dña", "d",
];

const TERMINATORS: &[char] = &['.', '!', '?', '…'];
const CLOSERS: &[char] = &['"', '\'', '”', '’', '»', ')', ']'];
const OPENERS: &[char] = &['"', '\'', '“', '‘', '«', '(', '[', '¿', '¡'];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextStats {
    pub sentence_count: usize,
    pub word_count: usize,
    pub syllable_count: usize,
}

impl TextStats {
    pub fn merge(self, other: TextStats) -> TextStats {
        TextStats {
            sentence_count: self.sentence_count + other.sentence_count,
            word_count: self.word_count + other.word_count,
            syllable_count: self.syllable_count + other.syllable_count,
        }
    }

    /// Readability of these counts, or `NoWords` when nothing was counted.
    pub fn fh(&self) -> Result<FhBreakdown> {
        if self.word_count == 0 || self.sentence_count == 0 {
            return Err(Error::NoWords);
        }
        Ok(FhBreakdown::from_rates(
            100.0 * self.syllable_count as f64 / self.word_count as f64,
            self.word_count as f64 / self.sentence_count as f64,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FhBreakdown {
    pub p_syllables_per_100_words: f64,
    pub f_words_per_sentence: f64,
    pub fh: f64,
}

impl FhBreakdown {
    pub fn from_rates(p: f64, f: f64) -> Self {
        FhBreakdown {
            p_syllables_per_100_words: p,
            f_words_per_sentence: f,
            fh: FH_BASE - FH_SYLLABLE_WEIGHT * p - FH_SENTENCE_WEIGHT * f,
        }
    }
}

/// Splits `text` into sentences.
///
/// Splits happen after a run of `. ! ? …` (plus any closing quotes or
/// brackets) that is followed by whitespace or the end of input, and at blank
/// lines. A single period after a known abbreviation does not split.
/// Fragments without any word token are glued onto a neighbouring sentence, so
/// every returned sentence holds at least one word unless the whole input has none.
pub fn segment_sentences(text: &str) -> Result<Vec<&str>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }

    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c == '\n' {
            // blank line: newline, optional horizontal whitespace, newline
            let mut j = i + 1;
            while j < chars.len() && chars[j].1 != '\n' && chars[j].1.is_whitespace() {
                j += 1;
            }
            if j < chars.len() && chars[j].1 == '\n' {
                spans.push((start, pos));
                while j < chars.len() && chars[j].1.is_whitespace() {
                    j += 1;
                }
                start = chars.get(j).map_or(text.len(), |&(p, _)| p);
                i = j;
                continue;
            }
        } else if TERMINATORS.contains(&c) {
            let mut j = i;
            while j < chars.len() && TERMINATORS.contains(&chars[j].1) {
                j += 1;
            }
            let single_period = j == i + 1 && c == '.';
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            let at_boundary = j == chars.len() || chars[j].1.is_whitespace();
            if at_boundary && !(single_period && ends_with_abbreviation(&text[start..pos])) {
                let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
                spans.push((start, end));
                start = end;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    spans.push((start, text.len()));

    // Drop whitespace-only spans, then fold word-less fragments into neighbours.
    let mut merged: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<usize> = None;
    for (s, e) in spans {
        if text[s..e].trim().is_empty() {
            continue;
        }
        if has_word(&text[s..e]) {
            let s = pending.take().unwrap_or(s);
            merged.push((s, e));
        } else if let Some(last) = merged.last_mut() {
            last.1 = e;
        } else if pending.is_none() {
            pending = Some(s);
        }
    }
    if let Some(s) = pending {
        // Input without a single word: keep it as one fragment.
        merged.push((s, text.len()));
    }

    Ok(merged.into_iter().map(|(s, e)| text[s..e].trim()).collect())
}

fn ends_with_abbreviation(prefix: &str) -> bool {
    let last = prefix
        .split_whitespace()
        .next_back()
        .unwrap_or("")
        .trim_start_matches(OPENERS);
    let last = last.to_lowercase();
    ABBREVIATIONS.contains(&last.as_str())
}

fn has_word(s: &str) -> bool {
    s.chars().any(|c| c.is_alphabetic() || c.is_numeric())
}

/// Maximal runs of letters, or of digits. Everything else separates tokens.
pub fn tokenize_words(sentence: &str) -> Vec<&str> {
    #[derive(PartialEq, Clone, Copy)]
    enum Run {
        Letters,
        Digits,
    }
    let class = |c: char| {
        if c.is_alphabetic() {
            Some(Run::Letters)
        } else if c.is_numeric() {
            Some(Run::Digits)
        } else {
            None
        }
    };

    let mut tokens = Vec::new();
    let mut current: Option<(usize, Run)> = None;
    for (pos, c) in sentence.char_indices() {
        let kind = class(c);
        match (current, kind) {
            (Some((_, run)), Some(k)) if run == k => {}
            (Some((s, _)), k) => {
                tokens.push(&sentence[s..pos]);
                current = k.map(|k| (pos, k));
            }
            (None, k) => current = k.map(|k| (pos, k)),
        }
    }
    if let Some((s, _)) = current {
        tokens.push(&sentence[s..]);
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phone {
    Strong,
    Weak,
    Consonant,
    Digit,
}

fn is_strong(c: char) -> bool {
    // accented i/u carry their own nucleus and behave like strong vowels
    matches!(
        c,
        'a' | 'e' | 'o' | 'á' | 'é' | 'ó' | 'à' | 'è' | 'ò' | 'â' | 'ê' | 'ô' | 'ä' | 'ë' | 'ö'
            | 'í' | 'ú' | 'ì' | 'ù'
    )
}

fn is_weak(c: char) -> bool {
    matches!(c, 'i' | 'u' | 'ü' | 'ï' | 'î' | 'û')
}

/// Number of syllables in a single word token.
///
/// Each maximal vowel group contributes one syllable per strong vowel
/// (a, e, o, or an accented í/ú), or a single syllable when it holds only
/// weak vowels. `y` is a vowel only at the end of the word, and the `u` of
/// `que/qui/gue/gui` is silent. Digits count one syllable each.
pub fn count_syllables(word: &str) -> Result<usize> {
    if word.is_empty() {
        return Err(Error::EmptyToken);
    }
    let chars: Vec<char> = word.chars().flat_map(char::to_lowercase).collect();
    let phones: Vec<Phone> = chars
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if c.is_numeric() {
                Phone::Digit
            } else if is_strong(c) {
                Phone::Strong
            } else if c == 'u' && is_silent_u(&chars, i) {
                Phone::Consonant
            } else if is_weak(c) || (c == 'y' && i + 1 == chars.len()) {
                Phone::Weak
            } else {
                Phone::Consonant
            }
        })
        .collect();

    let mut total = 0;
    let mut strong_in_group = 0;
    let mut in_group = false;
    for phone in phones {
        match phone {
            Phone::Strong => {
                strong_in_group += 1;
                in_group = true;
            }
            Phone::Weak => in_group = true,
            Phone::Consonant | Phone::Digit => {
                if in_group {
                    total += strong_in_group.max(1);
                }
                in_group = false;
                strong_in_group = 0;
                if phone == Phone::Digit {
                    total += 1;
                }
            }
        }
    }
    if in_group {
        total += strong_in_group.max(1);
    }
    Ok(total.max(1))
}

fn is_silent_u(chars: &[char], i: usize) -> bool {
    i > 0
        && matches!(chars[i - 1], 'q' | 'g')
        && matches!(chars.get(i + 1), Some('e' | 'i' | 'é' | 'í'))
}

/// Sentence, word and syllable counts. Sentences without words are not counted.
pub fn text_stats(text: &str) -> TextStats {
    let Ok(sentences) = segment_sentences(text) else {
        return TextStats::default();
    };
    let mut stats = TextStats::default();
    for sentence in sentences {
        let words = tokenize_words(sentence);
        if words.is_empty() {
            continue;
        }
        stats.sentence_count += 1;
        stats.word_count += words.len();
        stats.syllable_count += words
            .iter()
            .map(|w| count_syllables(w).expect("tokens are non-empty"))
            .sum::<usize>();
    }
    stats
}

pub fn fh_index(text: &str) -> Result<FhBreakdown> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    text_stats(text).fh()
}
