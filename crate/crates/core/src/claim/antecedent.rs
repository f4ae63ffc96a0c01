use serde::{Deserialize, Serialize};

/// Longest noun phrase (in words) taken after an article.
const MAX_PHRASE_WORDS: usize = 4;

/// Closed-class words that end a noun phrase. This is not verb detection,
/// just the auxiliaries, prepositions and connectives that routinely follow
/// a claimed element.
const PHRASE_STOPS: &[&str] = &[
    "a", "an", "the", "said", "is", "are", "was", "were", "be", "been", "being", "has", "have",
    "had", "does", "do", "can", "may", "will", "shall", "should", "must", "and", "or", "but",
    "nor", "of", "to", "in", "on", "at", "by", "for", "from", "with", "within", "into", "onto",
    "over", "under", "between", "through", "which", "that", "wherein", "whereby", "when",
    "where", "comprising", "comprises", "including", "includes", "consisting", "consists",
    "having", "configured", "adapted", "operable", "coupled", "connected", "attached", "disposed",
    "mounted", "positioned", "located", "arranged",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    /// "the X" / "said X" with no earlier "a X".
    MissingAntecedent,
    /// "a X" when X was already introduced.
    DuplicateIndefinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub phrase: String,
    /// Offset of the phrase's first character, counted in chars.
    pub char_offset: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntecedentReport {
    pub violations: Vec<Violation>,
}

impl AntecedentReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn missing(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.kind == ViolationKind::MissingAntecedent)
    }
}

#[derive(Debug)]
enum Tok<'a> {
    Word { text: &'a str, offset: usize },
    Space,
    Other,
}

fn tokenize(text: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let mut chars = text.char_indices().enumerate().peekable();
    while let Some((char_idx, (byte_idx, ch))) = chars.next() {
        if ch.is_alphabetic() {
            let mut end = byte_idx + ch.len_utf8();
            while let Some(&(_, (b, c))) = chars.peek() {
                if !c.is_alphabetic() {
                    break;
                }
                end = b + c.len_utf8();
                chars.next();
            }
            toks.push(Tok::Word {
                text: &text[byte_idx..end],
                offset: char_idx,
            });
        } else if ch.is_whitespace() {
            while chars.peek().is_some_and(|&(_, (_, c))| c.is_whitespace()) {
                chars.next();
            }
            toks.push(Tok::Space);
        } else {
            toks.push(Tok::Other);
        }
    }
    toks
}

fn is_phrase_word(word: &str) -> bool {
    word.chars().all(|c| c.is_lowercase()) && !PHRASE_STOPS.contains(&word)
}

/// Collects the noun phrase following the article at `toks[article]`.
fn phrase_after(toks: &[Tok<'_>], article: usize) -> Option<(Vec<String>, usize)> {
    let mut words = Vec::new();
    let mut offset = None;
    let mut i = article + 1;
    while words.len() < MAX_PHRASE_WORDS {
        let (Some(Tok::Space), Some(Tok::Word { text, offset: off })) = (toks.get(i), toks.get(i + 1))
        else {
            break;
        };
        if !is_phrase_word(text) {
            break;
        }
        offset.get_or_insert(*off);
        words.push(text.to_lowercase());
        i += 2;
    }
    offset.map(|o| (words, o))
}

fn is_word_prefix(short: &[String], long: &[String]) -> bool {
    short.len() <= long.len() && long[..short.len()] == *short
}

fn is_word_suffix(short: &[String], long: &[String]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

/// Reports definite references without an earlier indefinite introduction and
/// indefinite re-introductions of an already introduced element.
///
/// A reference "the X" is satisfied by an introduction "a Y" when one phrase
/// is a word-prefix of the other, or when X drops leading modifiers of Y
/// ("a sterile cuff" ... "the cuff"); re-introductions must match exactly.
pub fn check_antecedent_basis(claim_text: &str) -> AntecedentReport {
    let toks = tokenize(claim_text);
    let mut introduced: Vec<Vec<String>> = Vec::new();
    let mut violations = Vec::new();

    for (idx, tok) in toks.iter().enumerate() {
        let Tok::Word { text, .. } = tok else { continue };
        let article = text.to_lowercase();
        let definite = match article.as_str() {
            "a" | "an" => false,
            "the" | "said" => true,
            _ => continue,
        };
        let Some((words, char_offset)) = phrase_after(&toks, idx) else {
            continue;
        };
        if definite {
            let resolved = introduced
                .iter()
                .any(|intro| {
                    is_word_prefix(intro, &words) || is_word_prefix(&words, intro) || is_word_suffix(&words, intro)
                });
            if !resolved {
                violations.push(Violation {
                    phrase: words.join(" "),
                    char_offset,
                    kind: ViolationKind::MissingAntecedent,
                });
            }
        } else if introduced.contains(&words) {
            violations.push(Violation {
                phrase: words.join(" "),
                char_offset,
                kind: ViolationKind::DuplicateIndefinite,
            });
        } else {
            introduced.push(words);
        }
    }
    AntecedentReport { violations }
}
