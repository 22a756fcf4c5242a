//! Two-stage aural retrieval over subtitle text.
//!
//! Stage one takes the semantic top-K subtitles by text-embedding similarity
//! and extends that list with every subtitle sharing at least one word with
//! the query. Stage two hands the extended list to a pluggable [`Reranker`]
//! and keeps the first `k_final` ids of its ordering. Scores attached to the
//! final items are always the text-encoder similarities, never a reranker
//! score, so fusion can average like with like.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{self, EmbeddingError, EmbeddingVector, IntervalMap, ScoredItem};
use crate::timeline::Clip;

/// Upper bound on the candidate list handed to a reranker.
pub const DEFAULT_CANDIDATE_CAP: usize = 100;

#[derive(Debug, Error)]
pub enum AuralError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("lexical candidate {0} has no text similarity")]
    MissingScore(String),
    #[error("no subtitle text for {0}")]
    MissingText(String),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("reranker failed: {0}")]
    Rerank(#[source] RerankError),
}

impl AuralError {
    /// True when the failure came from reranker transport and the caller may
    /// retry with the identity ordering.
    pub fn fallback_allowed(&self) -> bool {
        matches!(self, AuralError::Rerank(e) if e.fallback_allowed)
    }
}

#[derive(Debug, Error, Clone)]
#[error("{message}")]
pub struct RerankError {
    pub message: String,
    pub fallback_allowed: bool,
}

impl RerankError {
    pub fn transport(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            fallback_allowed: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            fallback_allowed: false,
        }
    }
}

/// One entry of a rerank request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankCandidate {
    pub id: String,
    pub text: String,
}

/// Orders candidate subtitles by relevance to a query.
///
/// Implementations may return any list of strings; [`rerank_candidates`]
/// repairs unknown, duplicate and missing ids.
pub trait Reranker: Send + Sync {
    fn rerank(&self, query: &str, candidates: &[RerankCandidate]) -> Result<Vec<String>, RerankError>;
}

/// Keeps the candidate order unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityReranker;

impl Reranker for IdentityReranker {
    fn rerank(&self, _query: &str, candidates: &[RerankCandidate]) -> Result<Vec<String>, RerankError> {
        Ok(candidates.iter().map(|c| c.id.clone()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Semantic,
    Lexical,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub clip_id: String,
    pub subtitle_text: String,
    pub text_similarity: f64,
    pub origin: Origin,
}

/// Extended top-K subtitle list: semantic hits first, then lexical-only hits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    entries: Vec<Candidate>,
}

impl CandidateSet {
    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Drops lexical-only entries from the tail until at most `cap` entries
    /// remain. Semantic entries are never dropped.
    pub fn cap_lexical(&mut self, cap: usize) {
        while self.entries.len() > cap {
            match self.entries.last() {
                Some(c) if c.origin == Origin::Lexical => {
                    self.entries.pop();
                }
                _ => break,
            }
        }
    }
}

/// Word-level tokenization filter for the lexical heuristic.
#[derive(Debug, Clone, Default)]
pub struct LexicalOptions {
    /// Lowercase words ignored on both sides. `None` disables filtering.
    pub stopwords: Option<HashSet<String>>,
}

const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "has", "in", "into", "is",
    "it", "its", "of", "on", "or", "that", "the", "then", "to", "was", "were", "will", "with",
];

impl LexicalOptions {
    pub fn english_stopwords() -> Self {
        Self {
            stopwords: Some(ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect()),
        }
    }

    fn keeps(&self, token: &str) -> bool {
        self.stopwords.as_ref().is_none_or(|sw| !sw.contains(token))
    }
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn token_set(text: &str, opts: &LexicalOptions) -> HashSet<String> {
    tokenize(text).filter(|t| opts.keeps(t)).collect()
}

/// Semantic stage: top `k_semantic` subtitles by text-embedding similarity.
pub fn aural_semantic_top_k(
    subtitle_embeddings: &[(&str, &EmbeddingVector)],
    query_embedding: &EmbeddingVector,
    k_semantic: usize,
    intervals: &IntervalMap,
) -> Result<Vec<ScoredItem>, EmbeddingError> {
    embedding::top_k(subtitle_embeddings, query_embedding, k_semantic, intervals)
}

/// Ids of clips whose subtitle shares at least one word with the query.
pub fn lexical_candidates(clips: &[Clip], query_text: &str, opts: &LexicalOptions) -> BTreeSet<String> {
    let query = token_set(query_text, opts);
    if query.is_empty() {
        return BTreeSet::new();
    }
    clips
        .iter()
        .filter(|clip| {
            tokenize(&clip.subtitle_text).any(|t| opts.keeps(&t) && query.contains(&t))
        })
        .map(|clip| clip.clip_id.clone())
        .collect()
}

/// Union of the semantic list and the lexical matches.
///
/// `all_scores` must hold the text similarity of every subtitle, since
/// lexical-only entries still carry a score.
pub fn extend_candidates(
    semantic: &[ScoredItem],
    lexical: &BTreeSet<String>,
    all_scores: &HashMap<String, f64>,
    texts: &HashMap<String, String>,
    intervals: &IntervalMap,
) -> Result<CandidateSet, AuralError> {
    let text_of = |id: &str| {
        texts
            .get(id)
            .cloned()
            .ok_or_else(|| AuralError::MissingText(id.to_string()))
    };

    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(semantic.len() + lexical.len());
    for item in semantic {
        if !seen.insert(item.clip_id.as_str()) {
            continue;
        }
        let origin = if lexical.contains(&item.clip_id) {
            Origin::Both
        } else {
            Origin::Semantic
        };
        entries.push(Candidate {
            clip_id: item.clip_id.clone(),
            subtitle_text: text_of(&item.clip_id)?,
            text_similarity: item.score,
            origin,
        });
    }

    let mut tail = Vec::new();
    for id in lexical {
        if seen.contains(id.as_str()) {
            continue;
        }
        let score = *all_scores
            .get(id)
            .ok_or_else(|| AuralError::MissingScore(id.clone()))?;
        tail.push(ScoredItem::new(id.clone(), score));
    }
    embedding::sort_ranked(&mut tail, intervals)?;
    for item in tail {
        entries.push(Candidate {
            subtitle_text: text_of(&item.clip_id)?,
            clip_id: item.clip_id,
            text_similarity: item.score,
            origin: Origin::Lexical,
        });
    }
    Ok(CandidateSet { entries })
}

/// Reorders candidates with `reranker` and keeps the first `k_final`.
///
/// The reranker's output is repaired before truncation: unknown and repeated
/// ids are dropped, and candidates it omitted are appended in their original
/// order. An empty candidate set returns empty without calling the reranker.
pub fn rerank_candidates(
    candidates: &CandidateSet,
    query_text: &str,
    reranker: &dyn Reranker,
    k_final: usize,
) -> Result<Vec<ScoredItem>, AuralError> {
    if k_final == 0 {
        return Err(AuralError::InvalidK);
    }
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let request: Vec<RerankCandidate> = candidates
        .entries
        .iter()
        .map(|c| RerankCandidate {
            id: c.clip_id.clone(),
            text: c.subtitle_text.clone(),
        })
        .collect();
    let ranking = reranker
        .rerank(query_text, &request)
        .map_err(AuralError::Rerank)?;

    let by_id: HashMap<&str, &Candidate> = candidates
        .entries
        .iter()
        .map(|c| (c.clip_id.as_str(), c))
        .collect();
    let mut placed: HashSet<&str> = HashSet::with_capacity(by_id.len());
    let mut ordered: Vec<&Candidate> = Vec::with_capacity(by_id.len());
    let mut unknown = 0usize;
    for id in &ranking {
        match by_id.get_key_value(id.as_str()) {
            Some((&key, &cand)) => {
                if placed.insert(key) {
                    ordered.push(cand);
                }
            }
            None => unknown += 1,
        }
    }
    if unknown > 0 {
        tracing::warn!(unknown, "reranker returned ids outside the candidate set; dropped");
    }
    if ordered.len() < candidates.len() {
        for cand in &candidates.entries {
            if placed.insert(cand.clip_id.as_str()) {
                ordered.push(cand);
            }
        }
    }
    Ok(ordered
        .into_iter()
        .take(k_final)
        .map(|c| ScoredItem::new(c.clip_id.clone(), c.text_similarity))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::TimeInterval;
    use proptest::prelude::*;

    fn clip(id: &str, start: f64, text: &str) -> Clip {
        Clip {
            clip_id: id.into(),
            video_id: "v".into(),
            interval: TimeInterval::new(start, start + 1.0).unwrap(),
            subtitle_text: text.into(),
        }
    }

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    struct Fixed(Vec<&'static str>);

    impl Reranker for Fixed {
        fn rerank(&self, _: &str, _: &[RerankCandidate]) -> Result<Vec<String>, RerankError> {
            Ok(self.0.iter().map(|s| s.to_string()).collect())
        }
    }

    struct Down;

    impl Reranker for Down {
        fn rerank(&self, _: &str, _: &[RerankCandidate]) -> Result<Vec<String>, RerankError> {
            Err(RerankError::transport("connection refused"))
        }
    }

    fn candidates(ids: &[(&str, f64)]) -> CandidateSet {
        CandidateSet {
            entries: ids
                .iter()
                .map(|(id, s)| Candidate {
                    clip_id: id.to_string(),
                    subtitle_text: format!("text {id}"),
                    text_similarity: *s,
                    origin: Origin::Semantic,
                })
                .collect(),
        }
    }

    fn ids(items: &[ScoredItem]) -> Vec<&str> {
        items.iter().map(|s| s.clip_id.as_str()).collect()
    }

    #[test]
    fn tokenizer_lowercases_and_splits_on_punctuation() {
        let toks: Vec<_> = tokenize("Heat the OIL, then add—squid! Crème brûlée").collect();
        assert_eq!(toks, ["heat", "the", "oil", "then", "add", "squid", "crème", "brûlée"]);
    }

    #[test]
    fn lexical_matching_examples() {
        let clips = [
            clip("c0", 0.0, "heat the oil in a pot"),
            clip("c1", 1.0, "preheat your oven"),
            clip("c2", 2.0, ""),
        ];
        let opts = LexicalOptions::default();
        assert_eq!(
            lexical_candidates(&clips, "Add the squid into a pot of hot oil", &opts),
            set(&["c0"])
        );
        assert!(lexical_candidates(&clips[1..2], "sear tuna", &opts).is_empty());
        assert!(lexical_candidates(&clips, "", &opts).is_empty());
        assert!(lexical_candidates(&clips, " ,.! ", &opts).is_empty());
    }

    #[test]
    fn stopword_filtering_is_opt_in() {
        let clips = [clip("c0", 0.0, "the end")];
        assert_eq!(
            lexical_candidates(&clips, "the squid", &LexicalOptions::default()),
            set(&["c0"])
        );
        assert!(lexical_candidates(&clips, "the squid", &LexicalOptions::english_stopwords()).is_empty());
    }

    fn scores(entries: &[(&str, f64)]) -> HashMap<String, f64> {
        entries.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn fixture_maps() -> (HashMap<String, f64>, HashMap<String, String>, IntervalMap) {
        let all = scores(&[("c1", 0.9), ("c2", 0.1), ("c3", 0.8), ("c7", 0.3)]);
        let texts = all.keys().map(|k| (k.clone(), format!("t {k}"))).collect();
        let ivs = all
            .keys()
            .map(|k| {
                let n: f64 = k[1..].parse().unwrap();
                (k.clone(), TimeInterval::new(n, n + 1.0).unwrap())
            })
            .collect();
        (all, texts, ivs)
    }

    #[test]
    fn extension_unions_and_marks_origin() {
        let (all, texts, ivs) = fixture_maps();
        let semantic = [ScoredItem::new("c1", 0.9), ScoredItem::new("c3", 0.8)];
        let out = extend_candidates(&semantic, &set(&["c3", "c7"]), &all, &texts, &ivs).unwrap();
        let got: Vec<_> = out.entries().iter().map(|c| (c.clip_id.as_str(), c.origin)).collect();
        assert_eq!(
            got,
            [("c1", Origin::Semantic), ("c3", Origin::Both), ("c7", Origin::Lexical)]
        );
        assert_eq!(out.entries()[2].text_similarity, 0.3);

        let only_lex = extend_candidates(&[], &set(&["c2"]), &all, &texts, &ivs).unwrap();
        assert_eq!(only_lex.entries()[0].origin, Origin::Lexical);

        let subset = extend_candidates(&semantic, &set(&["c1", "c3"]), &all, &texts, &ivs).unwrap();
        assert!(subset.entries().iter().all(|c| c.origin == Origin::Both));
        assert_eq!(subset.len(), 2);
    }

    #[test]
    fn lexical_tail_sorted_by_similarity() {
        let (all, texts, ivs) = fixture_maps();
        let out = extend_candidates(&[], &set(&["c2", "c7", "c3"]), &all, &texts, &ivs).unwrap();
        let got: Vec<_> = out.entries().iter().map(|c| c.clip_id.as_str()).collect();
        assert_eq!(got, ["c3", "c7", "c2"]);
    }

    #[test]
    fn extension_requires_scores_for_lexical_ids() {
        let (all, texts, ivs) = fixture_maps();
        let err = extend_candidates(&[], &set(&["c99"]), &all, &texts, &ivs).unwrap_err();
        assert!(matches!(err, AuralError::MissingScore(id) if id == "c99"));
    }

    #[test]
    fn cap_drops_lexical_tail_only() {
        let (all, texts, ivs) = fixture_maps();
        let semantic = [ScoredItem::new("c1", 0.9)];
        let mut out = extend_candidates(&semantic, &set(&["c2", "c7", "c3"]), &all, &texts, &ivs).unwrap();
        out.cap_lexical(2);
        assert_eq!(out.len(), 2);
        out.cap_lexical(0);
        assert_eq!(out.entries()[0].clip_id, "c1");
    }

    #[test]
    fn rerank_permutes_and_truncates() {
        let c = candidates(&[("c1", 0.5), ("c2", 0.4), ("c3", 0.3)]);
        let out = rerank_candidates(&c, "q", &Fixed(vec!["c3", "c1", "c2"]), 2).unwrap();
        assert_eq!(out, [ScoredItem::new("c3", 0.3), ScoredItem::new("c1", 0.5)]);
    }

    #[test]
    fn rerank_repairs_unknown_and_missing_ids() {
        let c = candidates(&[("c1", 0.5), ("c2", 0.4), ("c3", 0.3)]);
        let out = rerank_candidates(&c, "q", &Fixed(vec!["c9", "c2"]), 10).unwrap();
        assert_eq!(ids(&out), ["c2", "c1", "c3"]);
        let out = rerank_candidates(&c, "q", &Fixed(vec!["c9", "c2"]), 2).unwrap();
        assert_eq!(ids(&out), ["c2", "c1"]);
        let out = rerank_candidates(&c, "q", &Fixed(vec!["c3", "c3", "c3"]), 10).unwrap();
        assert_eq!(ids(&out), ["c3", "c1", "c2"]);
    }

    #[test]
    fn identity_reranker_keeps_order() {
        let c = candidates(&[("c1", 0.5), ("c2", 0.4), ("c3", 0.3)]);
        let out = rerank_candidates(&c, "q", &IdentityReranker, 2).unwrap();
        assert_eq!(ids(&out), ["c1", "c2"]);
    }

    #[test]
    fn empty_candidates_skip_the_reranker() {
        let out = rerank_candidates(&CandidateSet::default(), "q", &Down, 10).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn transport_failure_is_flagged_for_fallback() {
        let c = candidates(&[("c1", 0.5)]);
        let err = rerank_candidates(&c, "q", &Down, 10).unwrap_err();
        assert!(err.fallback_allowed());
        assert!(!AuralError::InvalidK.fallback_allowed());
    }

    struct Echo(Vec<String>);

    impl Reranker for Echo {
        fn rerank(&self, _: &str, _: &[RerankCandidate]) -> Result<Vec<String>, RerankError> {
            Ok(self.0.clone())
        }
    }

    proptest! {
        #[test]
        fn rerank_output_is_always_valid(
            n in 0usize..20,
            noise in prop::collection::vec("c[0-9]{1,2}|[a-z ]{0,12}", 0..60),
            k in 1usize..25,
        ) {
            let entries: Vec<(String, f64)> = (0..n).map(|i| (format!("c{i}"), i as f64 / 20.0)).collect();
            let refs: Vec<(&str, f64)> = entries.iter().map(|(a, b)| (a.as_str(), *b)).collect();
            let c = candidates(&refs);
            let out = rerank_candidates(&c, "q", &Echo(noise), k).unwrap();
            prop_assert_eq!(out.len(), n.min(k));
            let mut seen = HashSet::new();
            for item in &out {
                prop_assert!(seen.insert(item.clip_id.clone()));
                let expected = c.entries().iter().find(|e| e.clip_id == item.clip_id);
                prop_assert_eq!(expected.map(|e| e.text_similarity), Some(item.score));
            }
        }

        #[test]
        fn lexical_match_set_is_monotone(
            texts in prop::collection::vec("[a-d ]{0,12}", 0..15),
            query in "[a-d ]{0,8}",
            extra in "[a-d]{1,3}",
        ) {
            let clips: Vec<Clip> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| clip(&format!("c{i}"), i as f64, t))
                .collect();
            let opts = LexicalOptions::default();
            let base = lexical_candidates(&clips, &query, &opts);
            let grown = lexical_candidates(&clips, &format!("{query} {extra}"), &opts);
            prop_assert!(base.is_subset(&grown));
        }
    }
}
