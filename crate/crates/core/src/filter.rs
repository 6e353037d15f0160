//! Short-document and quality-percentile filters.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::config::Stage;
use crate::document::Document;
use crate::error::{CurateError, Result};

/// True for characters in the Unicode punctuation categories (Pc, Pd, Pe, Pf, Pi, Po, Ps).
#[inline]
pub fn is_punctuation(c: char) -> bool {
    if c.is_ascii() {
        return matches!(
            c,
            '!' | '"'
                | '#'
                | '%'
                | '&'
                | '\''
                | '('
                | ')'
                | '*'
                | ','
                | '-'
                | '.'
                | '/'
                | ':'
                | ';'
                | '?'
                | '@'
                | '['
                | '\\'
                | ']'
                | '_'
                | '{'
                | '}'
        );
    }
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::OtherPunctuation
            | GeneralCategory::OpenPunctuation
    )
}

#[inline]
fn is_stripped(c: char) -> bool {
    c.is_whitespace() || is_punctuation(c)
}

/// Removes punctuation and every White_Space character, keeping the rest in order.
pub fn strip_for_length(text: &str) -> String {
    text.chars().filter(|&c| !is_stripped(c)).collect()
}

/// Scalar-value count of [`strip_for_length`] without building the string.
pub fn stripped_len(text: &str) -> usize {
    text.chars().filter(|&c| !is_stripped(c)).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterDecision {
    pub verdict: Verdict,
    pub stage: Stage,
    pub detail: String,
}

impl FilterDecision {
    pub fn is_drop(&self) -> bool {
        self.verdict == Verdict::Drop
    }
}

/// Drops a document whose stripped text has fewer than `threshold` characters.
pub fn length_filter(doc: &Document, threshold: usize) -> FilterDecision {
    let len = stripped_len(&doc.text);
    if len < threshold {
        FilterDecision {
            verdict: Verdict::Drop,
            stage: Stage::Length,
            detail: format!("stripped length {len} < {threshold}"),
        }
    } else {
        FilterDecision {
            verdict: Verdict::Keep,
            stage: Stage::Length,
            detail: format!("stripped length {len}"),
        }
    }
}

/// Number of documents the percentile cut keeps out of `n`.
pub fn quality_keep_count(n: usize, percentile: f64) -> usize {
    if n == 0 {
        return 0;
    }
    // The epsilon absorbs binary rounding in p*n (0.07 * 100 = 7.000000000000001).
    let k = (percentile * n as f64 - 1e-9).ceil();
    (k.max(1.0) as usize).min(n)
}

fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Positions of `docs` in rank order (highest score first, ties by ascending id).
pub(crate) fn quality_ranking(docs: &[&Document]) -> Result<Vec<usize>> {
    let mut keyed = Vec::with_capacity(docs.len());
    for (i, d) in docs.iter().enumerate() {
        let score = d.score.ok_or_else(|| CurateError::MissingScore { id: d.id.clone() })?;
        keyed.push((score, d.id.as_str(), i));
    }
    keyed.par_sort_unstable_by(|a, b| rank_order((a.0, a.1), (b.0, b.1)));
    Ok(keyed.into_iter().map(|(_, _, i)| i).collect())
}

/// Ids of the top `percentile` fraction of documents by score.
///
/// Keeps exactly `ceil(p * N)` documents. Equal scores are ordered by
/// ascending id so the cut is deterministic.
pub fn quality_filter(docs: &[Document], percentile: f64) -> Result<BTreeSet<String>> {
    let refs: Vec<&Document> = docs.iter().collect();
    let ranked = quality_ranking(&refs)?;
    let keep = quality_keep_count(docs.len(), percentile);
    Ok(ranked[..keep].iter().map(|&i| docs[i].id.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_with_stripped_len(n: usize) -> Document {
        // Interleave removable characters so only letters count.
        let mut text = String::new();
        for i in 0..n {
            text.push('x');
            text.push(if i % 2 == 0 { ' ' } else { ',' });
        }
        text.push_str("\n\t!?");
        Document::new("d", "s", text)
    }

    #[test]
    fn ascii_table_matches_unicode_categories() {
        for b in 0u8..=127 {
            let c = b as char;
            let by_category = matches!(
                get_general_category(c),
                GeneralCategory::ConnectorPunctuation
                    | GeneralCategory::DashPunctuation
                    | GeneralCategory::ClosePunctuation
                    | GeneralCategory::FinalPunctuation
                    | GeneralCategory::InitialPunctuation
                    | GeneralCategory::OtherPunctuation
                    | GeneralCategory::OpenPunctuation
            );
            assert_eq!(is_punctuation(c), by_category, "{c:?}");
        }
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_for_length("Hi!\n\t there"), "Hithere");
        assert_eq!(strip_for_length(""), "");
        // Symbols are not punctuation.
        assert_eq!(strip_for_length("$5 + 3 = 8"), "$5+3=8");
        assert_eq!(strip_for_length("«¿Qué?» — dijo\u{00A0}él…"), "Quédijoél");
    }

    #[test]
    fn strip_letters_and_commas() {
        let text: String = (0..150).map(|_| "a,").collect();
        assert_eq!(text.chars().count(), 300);
        assert_eq!(strip_for_length(&text).chars().count(), 150);
    }

    #[test]
    fn length_boundary() {
        assert!(length_filter(&doc_with_stripped_len(199), 200).is_drop());
        assert!(!length_filter(&doc_with_stripped_len(200), 200).is_drop());
        assert!(!length_filter(&Document::new("e", "s", ""), 0).is_drop());
    }

    #[test]
    fn length_counts_scalars_not_bytes() {
        let text = "é".repeat(200);
        assert_eq!(text.len(), 400);
        assert!(!length_filter(&Document::new("e", "s", text), 200).is_drop());
        assert!(length_filter(&Document::new("e", "s", "é".repeat(199)), 200).is_drop());
    }

    fn scored(n: usize, score: impl Fn(usize) -> f64) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("d{i:02}"), "s", "t").with_score(score(i)))
            .collect()
    }

    #[test]
    fn quality_top_ten_percent() {
        let docs = scored(10, |i| (i + 1) as f64);
        let kept = quality_filter(&docs, 0.10).unwrap();
        assert_eq!(kept.into_iter().collect::<Vec<_>>(), ["d09"]);
    }

    #[test]
    fn quality_keep_all() {
        let docs = scored(7, |i| i as f64);
        assert_eq!(quality_filter(&docs, 1.0).unwrap().len(), 7);
    }

    #[test]
    fn quality_ties_by_id() {
        let docs = scored(10, |_| 5.0);
        let kept = quality_filter(&docs, 0.30).unwrap();
        assert_eq!(kept.into_iter().collect::<Vec<_>>(), ["d00", "d01", "d02"]);
    }

    #[test]
    fn quality_missing_score_names_doc() {
        let mut docs = scored(3, |i| i as f64);
        docs[1].score = None;
        match quality_filter(&docs, 0.5).unwrap_err() {
            CurateError::MissingScore { id } => assert_eq!(id, "d01"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn keep_count_rounding() {
        assert_eq!(quality_keep_count(100, 0.07), 7);
        assert_eq!(quality_keep_count(1000, 0.10), 100);
        assert_eq!(quality_keep_count(10, 0.25), 3);
        assert_eq!(quality_keep_count(3, 0.01), 1);
        assert_eq!(quality_keep_count(0, 0.5), 0);
    }

    proptest! {
        #[test]
        fn strip_is_idempotent(s in "\\PC{0,64}") {
            let once = strip_for_length(&s);
            prop_assert_eq!(strip_for_length(&once), once.clone());
            prop_assert!(once.chars().count() <= s.chars().count());
        }

        #[test]
        fn quality_cut_separates_scores(
            scores in proptest::collection::vec(0u8..20, 1..60),
            p in 0.01f64..=1.0,
        ) {
            let docs = scored(scores.len(), |i| scores[i] as f64);
            let kept = quality_filter(&docs, p).unwrap();
            prop_assert_eq!(kept.len(), quality_keep_count(docs.len(), p));
            let min_kept = docs.iter().filter(|d| kept.contains(&d.id)).map(|d| d.score.unwrap()).fold(f64::INFINITY, f64::min);
            let max_dropped = docs.iter().filter(|d| !kept.contains(&d.id)).map(|d| d.score.unwrap()).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(min_kept >= max_dropped);
        }
    }
}
