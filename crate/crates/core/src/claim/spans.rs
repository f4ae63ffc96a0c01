use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Claim, ClaimError};

static TRANSITION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(?:comprising|consisting\s+of|including)\b:?").expect("valid regex")
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpanRole {
    Preamble,
    Element,
    Wherein,
    /// Trailing text after the claim's terminal period.
    Closing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSpan {
    pub ordinal: usize,
    pub text: String,
    pub role: SpanRole,
    /// Exact characters between this span and the next (usually whitespace).
    pub trailing_separator: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedClaim {
    pub claim: Claim,
    pub spans: Vec<ClaimSpan>,
}

impl ParsedClaim {
    /// Reassembles the claim text from its spans.
    pub fn reassemble(&self) -> String {
        self.spans
            .iter()
            .flat_map(|s| [s.text.as_str(), s.trailing_separator.as_str()])
            .collect()
    }
}

struct Piece {
    start: usize,
    text_end: usize,
    sep_end: usize,
    closing: bool,
}

/// Decomposes a claim into preamble, element and wherein spans.
///
/// The preamble runs through the first transitional phrase; the body is then
/// split on semicolons outside brackets. Concatenating every span's text and
/// trailing separator reproduces `claim.text` exactly.
pub fn split_spans(claim: &Claim) -> Result<ParsedClaim, ClaimError> {
    let text = claim.text.as_str();
    if text.trim().is_empty() {
        return Err(ClaimError::EmptyClaim(claim.number));
    }

    let mut pieces = Vec::new();
    let mut cursor = 0;
    let has_preamble = match TRANSITION.find(text) {
        Some(m) => {
            let sep_end = skip_whitespace(text, m.end());
            pieces.push(Piece {
                start: 0,
                text_end: m.end(),
                sep_end,
                closing: false,
            });
            cursor = sep_end;
            true
        }
        None => false,
    };

    let mut depth = 0usize;
    let mut closing = false;
    let mut start = cursor;
    for (rel, ch) in text[cursor..].char_indices() {
        let at = cursor + rel;
        match ch {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth = depth.saturating_sub(1),
            ';' if depth == 0 => {
                let text_end = at + 1;
                let sep_end = skip_whitespace(text, text_end);
                if sep_end < text.len() {
                    pieces.push(Piece { start, text_end, sep_end, closing });
                    start = sep_end;
                }
            }
            '.' if depth == 0 => {
                // A period followed by whitespace and more text ends the claim
                // proper; whatever follows is closing material.
                let text_end = at + 1;
                let sep_end = skip_whitespace(text, text_end);
                if sep_end > text_end && sep_end < text.len() {
                    pieces.push(Piece { start, text_end, sep_end, closing });
                    start = sep_end;
                    closing = true;
                }
            }
            _ => {}
        }
    }
    if start < text.len() {
        let text_end = trim_end_index(text, start);
        pieces.push(Piece {
            start,
            text_end,
            sep_end: text.len(),
            closing,
        });
    }

    // A lone "." is folded into the span before it.
    let last_is_period = pieces
        .last()
        .is_some_and(|p| &text[p.start..p.text_end] == ".");
    if pieces.len() >= 2 && last_is_period {
        let last = pieces.pop().expect("len checked");
        let prev = pieces.last_mut().expect("len checked");
        prev.text_end = last.text_end;
        prev.sep_end = last.sep_end;
    }

    let spans = pieces
        .iter()
        .enumerate()
        .map(|(ordinal, p)| {
            let span_text = &text[p.start..p.text_end];
            let role = if ordinal == 0 && has_preamble {
                SpanRole::Preamble
            } else if p.closing {
                SpanRole::Closing
            } else if starts_with_wherein(span_text) {
                SpanRole::Wherein
            } else if ordinal == 0 {
                SpanRole::Preamble
            } else {
                SpanRole::Element
            };
            ClaimSpan {
                ordinal,
                text: span_text.to_string(),
                role,
                trailing_separator: text[p.text_end..p.sep_end].to_string(),
            }
        })
        .collect();

    Ok(ParsedClaim {
        claim: claim.clone(),
        spans,
    })
}

fn skip_whitespace(text: &str, from: usize) -> usize {
    text[from..]
        .char_indices()
        .find(|(_, c)| !c.is_whitespace())
        .map_or(text.len(), |(i, _)| from + i)
}

fn trim_end_index(text: &str, start: usize) -> usize {
    start + text[start..].trim_end().len()
}

fn starts_with_wherein(span: &str) -> bool {
    let lower = span.trim_start().to_ascii_lowercase();
    ["wherein", "whereby"].iter().any(|kw| {
        lower.starts_with(kw)
            && lower[kw.len()..]
                .chars()
                .next()
                .is_none_or(|c| !c.is_alphanumeric())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spans_of(text: &str) -> Vec<(SpanRole, String, String)> {
        split_spans(&Claim::new("", 1, text))
            .unwrap()
            .spans
            .into_iter()
            .map(|s| (s.role, s.text, s.trailing_separator))
            .collect()
    }

    #[test]
    fn method_claim_with_elements() {
        let spans = spans_of("A method comprising: receiving a signal; decoding the signal.");
        assert_eq!(
            spans,
            vec![
                (SpanRole::Preamble, "A method comprising:".into(), " ".into()),
                (SpanRole::Element, "receiving a signal;".into(), " ".into()),
                (SpanRole::Element, "decoding the signal.".into(), "".into()),
            ]
        );
    }

    #[test]
    fn claim_without_delimiters_is_one_preamble() {
        assert_eq!(
            spans_of("A widget."),
            vec![(SpanRole::Preamble, "A widget.".into(), "".into())]
        );
    }

    #[test]
    fn wherein_clause_role() {
        let spans = spans_of("A device comprising: a sensor; wherein the signal is optical.");
        assert_eq!(spans.last().unwrap().0, SpanRole::Wherein);
        let spans = spans_of("A device comprising: a sensor; whereby the signal is optical.");
        assert_eq!(spans.last().unwrap().0, SpanRole::Wherein);
        // "whereinafter" is not the keyword
        let spans = spans_of("A device comprising: a sensor; whereinafter x.");
        assert_eq!(spans.last().unwrap().0, SpanRole::Element);
    }

    #[test]
    fn semicolons_inside_brackets_do_not_split() {
        let spans = spans_of("A kit comprising: a part (steel; coated); a tool.");
        assert_eq!(spans.len(), 3);
        assert_eq!(spans[1].1, "a part (steel; coated);");
    }

    #[test]
    fn longest_transition_and_colon() {
        let spans = spans_of("A system consisting of: a; b.");
        assert_eq!(spans[0].1, "A system consisting of:");
        let spans = spans_of("An apparatus including a frame; a wheel.");
        assert_eq!(spans[0].1, "An apparatus including");
        assert_eq!(spans[1].1, "a frame;");
    }

    #[test]
    fn lone_period_merges_into_previous() {
        let spans = spans_of("A method comprising: receiving a signal; .");
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[1].1, "receiving a signal; .");
    }

    #[test]
    fn text_after_terminal_period_is_closing() {
        let spans = spans_of("A widget comprising a frame. As amended.");
        assert_eq!(spans.last().unwrap().0, SpanRole::Closing);
        assert_eq!(spans.last().unwrap().1, "As amended.");
    }

    #[test]
    fn newlines_are_preserved_as_separators() {
        let text = "A method comprising:\n  receiving a signal;\n  decoding it.  ";
        let parsed = split_spans(&Claim::new("", 1, text)).unwrap();
        assert_eq!(parsed.reassemble(), text);
        assert_eq!(parsed.spans[0].trailing_separator, "\n  ");
        assert_eq!(parsed.spans[2].trailing_separator, "  ");
    }

    #[test]
    fn empty_claim_rejected() {
        assert_eq!(
            split_spans(&Claim::new("", 4, "   ")),
            Err(ClaimError::EmptyClaim(4))
        );
    }

    #[test]
    fn at_most_one_preamble_at_ordinal_zero() {
        let parsed = split_spans(&Claim::new("", 1, "A comprising: b; c including d; e.")).unwrap();
        let preambles: Vec<_> = parsed
            .spans
            .iter()
            .filter(|s| s.role == SpanRole::Preamble)
            .collect();
        assert_eq!(preambles.len(), 1);
        assert_eq!(preambles[0].ordinal, 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn spans_reassemble_byte_exact(text in "[ a-zA-Z;:,.()\n\t\u{e9}\u{4e2d}]{1,80}") {
                prop_assume!(!text.trim().is_empty());
                let parsed = split_spans(&Claim::new("", 1, text.clone())).unwrap();
                prop_assert_eq!(parsed.reassemble(), text);
                for (i, s) in parsed.spans.iter().enumerate() {
                    prop_assert_eq!(s.ordinal, i);
                    if s.role == SpanRole::Preamble {
                        prop_assert_eq!(i, 0);
                    }
                }
            }

            #[test]
            fn splitting_is_deterministic(text in "[ a-z;:.]{1,60}") {
                prop_assume!(!text.trim().is_empty());
                let c = Claim::new("", 1, text);
                prop_assert_eq!(split_spans(&c).unwrap(), split_spans(&c).unwrap());
            }
        }
    }
}
