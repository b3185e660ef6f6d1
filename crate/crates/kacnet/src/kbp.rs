//! Knowledge-based pooling: score each proposal by the word similarity
//! between its most probable class name and the query's noun words, then
//! turn the scores into a hard or soft gate.
//!
//! Knowledge is external and constant during optimization: it carries no
//! gradient, and each (query, image) pair's scores are computed once and
//! cached by the trainer.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingTable, ProposalSet, Query};
use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    Hard,
    Soft,
    /// Gate pinned to 1 everywhere; the ungated reconstruction baseline.
    None,
}

impl std::str::FromStr for GateMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(GateMode::Hard),
            "soft" => Ok(GateMode::Soft),
            "none" => Ok(GateMode::None),
            other => Err(Error::Config(format!(
                "gate mode must be hard|soft|none, got `{}`",
                other
            ))),
        }
    }
}

impl std::fmt::Display for GateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GateMode::Hard => write!(f, "hard"),
            GateMode::Soft => write!(f, "soft"),
            GateMode::None => write!(f, "none"),
        }
    }
}

/// Where a gate is consumed. The hard gate's all-ones fallback applies to
/// reconstruction and inference, never to the consistency loss.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum GateContext {
    Consistency,
    Reconstruction,
    Inference,
}

#[derive(Clone, Copy, Debug)]
pub struct GateConfig {
    pub mode: GateMode,
    /// Hard-mode threshold on the raw averaged similarity.
    pub threshold: f64,
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mode == GateMode::Hard && !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "hard gate threshold must lie in [0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// External resources backing knowledge computation.
pub struct KnowledgeBase {
    pub class_names: Vec<String>,
    pub embeddings: EmbeddingTable,
    pub lexicon: BTreeSet<String>,
}

/// Raw scores plus the gate actually multiplied into the losses.
#[derive(Clone, Debug)]
pub struct KnowledgeScores {
    pub raw: Vec<f64>,
    pub gate: Vec<f64>,
    pub fallback_applied: bool,
}

/// Cosine similarity between two (possibly multi-word) names. Multi-word
/// names embed as the mean of their constituent word vectors; a name with no
/// in-vocabulary word scores 0.
pub fn word_similarity(a: &str, b: &str, embeddings: &EmbeddingTable) -> Result<f64> {
    let va = match mean_vector(a, embeddings)? {
        Some(v) => v,
        None => return Ok(0.0),
    };
    let vb = match mean_vector(b, embeddings)? {
        Some(v) => v,
        None => return Ok(0.0),
    };
    let dot: f64 = va.iter().zip(&vb).map(|(x, y)| x * y).sum();
    let na: f64 = va.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = vb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Numeric(format!(
            "zero-norm embedding when comparing `{}` and `{}`",
            a, b
        )));
    }
    Ok(dot / (na * nb))
}

fn mean_vector(name: &str, embeddings: &EmbeddingTable) -> Result<Option<Vec<f64>>> {
    let mut acc = vec![0.0; embeddings.dim()];
    let mut count = 0usize;
    for word in name.split_whitespace() {
        if let Some(v) = embeddings.get(word) {
            for (a, x) in acc.iter_mut().zip(v) {
                *a += x;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    for a in acc.iter_mut() {
        *a /= count as f64;
    }
    Ok(Some(acc))
}

/// Positions of tokens found in the noun lexicon. Used only when a query
/// record lacks precomputed noun annotations.
pub fn extract_nouns(tokens: &[String], lexicon: &BTreeSet<String>) -> Result<Vec<usize>> {
    if tokens.is_empty() {
        return Err(Error::Contract("extract_nouns on an empty token list".into()));
    }
    Ok(tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| lexicon.contains(t.as_str()))
        .map(|(i, _)| i)
        .collect())
}

/// Raw knowledge score per proposal: the mean similarity between the
/// proposal's argmax class name (ties break to the lowest index) and the
/// query's noun words. No nouns means all-zero scores.
pub fn compute_knowledge(
    query: &Query,
    proposals: &ProposalSet,
    kb: &KnowledgeBase,
) -> Result<Vec<f64>> {
    let noun_positions: Vec<usize> = match &query.noun_positions {
        Some(positions) => positions.clone(),
        None => extract_nouns(&query.words, &kb.lexicon)?,
    };
    let nouns: Vec<&str> = noun_positions
        .iter()
        .map(|&p| query.words[p].as_str())
        .collect();

    let mut raw = Vec::with_capacity(proposals.proposals.len());
    for (i, proposal) in proposals.proposals.iter().enumerate() {
        if proposal.class_probs.len() != kb.class_names.len() {
            return Err(Error::Format {
                path: format!("image `{}` proposal {}", proposals.image_id, i),
                line: None,
                detail: format!(
                    "class distribution has {} entries, class-name file has {}",
                    proposal.class_probs.len(),
                    kb.class_names.len()
                ),
            });
        }
        if nouns.is_empty() {
            raw.push(0.0);
            continue;
        }
        let best = argmax_lowest(&proposal.class_probs);
        let class_name = &kb.class_names[best];
        let mut total = 0.0;
        for noun in &nouns {
            total += word_similarity(class_name, noun, &kb.embeddings)?;
        }
        raw.push(total / nouns.len() as f64);
    }
    Ok(raw)
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Turn raw scores into the gate multiplier. Soft mode applies a sigmoid;
/// hard mode thresholds the raw score, falling back to all ones for
/// reconstruction and inference when every proposal is gated out.
pub fn apply_gate(raw: Vec<f64>, cfg: &GateConfig, ctx: GateContext) -> KnowledgeScores {
    match cfg.mode {
        GateMode::Soft => {
            let gate = raw.iter().map(|&k| 1.0 / (1.0 + (-k).exp())).collect();
            KnowledgeScores {
                raw,
                gate,
                fallback_applied: false,
            }
        }
        GateMode::None => {
            let gate = vec![1.0; raw.len()];
            KnowledgeScores {
                raw,
                gate,
                fallback_applied: false,
            }
        }
        GateMode::Hard => {
            let mut gate: Vec<f64> = raw
                .iter()
                .map(|&k| if k >= cfg.threshold { 1.0 } else { 0.0 })
                .collect();
            let all_zero = gate.iter().all(|&g| g == 0.0);
            let fallback = all_zero && ctx != GateContext::Consistency && !gate.is_empty();
            if fallback {
                gate.fill(1.0);
            }
            KnowledgeScores {
                raw,
                gate,
                fallback_applied: fallback,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Proposal;

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        let dim = entries[0].1.len();
        EmbeddingTable::from_vectors(
            dim,
            entries
                .iter()
                .map(|(w, v)| (w.to_string(), v.to_vec())),
        )
        .unwrap()
    }

    fn kb(entries: &[(&str, &[f64])], class_names: &[&str], lexicon: &[&str]) -> KnowledgeBase {
        KnowledgeBase {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            embeddings: table(entries),
            lexicon: lexicon.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn image(class_probs: Vec<Vec<f64>>) -> ProposalSet {
        let proposals = class_probs
            .into_iter()
            .map(|probs| Proposal {
                bbox: [0.0, 0.0, 1.0, 1.0],
                feature: vec![0.0],
                class_probs: probs,
            })
            .collect();
        ProposalSet {
            image_id: "img".into(),
            width: 10.0,
            height: 10.0,
            global_feature: vec![0.0],
            proposals,
        }
    }

    fn query(words: &[&str], nouns: Option<Vec<usize>>) -> Query {
        Query {
            query_id: "q".into(),
            image_id: "img".into(),
            words: words.iter().map(|s| s.to_string()).collect(),
            noun_positions: nouns,
            gt_box: None,
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let t = table(&[("dog", &[0.2, 0.9, -0.1])]);
        assert!((word_similarity("dog", "dog", &t).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_embeddings_score_zero() {
        let t = table(&[("dog", &[1.0, 0.0]), ("sky", &[0.0, 1.0])]);
        assert_eq!(word_similarity("dog", "sky", &t).unwrap(), 0.0);
    }

    #[test]
    fn out_of_vocabulary_scores_zero() {
        let t = table(&[("dog", &[1.0, 0.0])]);
        assert_eq!(word_similarity("dog", "xylograph", &t).unwrap(), 0.0);
        assert_eq!(word_similarity("xylograph", "dog", &t).unwrap(), 0.0);
    }

    #[test]
    fn multi_word_names_use_mean_vectors() {
        let t = table(&[
            ("traffic", &[1.0, 0.0]),
            ("light", &[0.0, 1.0]),
            ("lamp", &[0.0, 1.0]),
        ]);
        let sim = word_similarity("traffic light", "lamp", &t).unwrap();
        assert!((sim - (0.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn opposite_constituents_are_a_numeric_error() {
        let t = table(&[("up", &[1.0, 0.0]), ("down", &[-1.0, 0.0]), ("dog", &[0.0, 1.0])]);
        assert!(matches!(
            word_similarity("up down", "dog", &t),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn single_noun_matching_class_scores_one() {
        let kb = kb(&[("dog", &[1.0, 0.0])], &["dog", "cat"], &[]);
        let img = image(vec![vec![0.9, 0.1]]);
        let q = query(&["a", "dog"], Some(vec![1]));
        assert_eq!(compute_knowledge(&q, &img, &kb).unwrap(), vec![1.0]);
    }

    #[test]
    fn two_nouns_average() {
        let kb = kb(
            &[("dog", &[1.0, 0.0]), ("sky", &[0.0, 1.0])],
            &["dog"],
            &[],
        );
        let img = image(vec![vec![1.0]]);
        let q = query(&["dog", "sky"], Some(vec![0, 1]));
        // similarities 1.0 and 0.0 average to 0.5
        assert_eq!(compute_knowledge(&q, &img, &kb).unwrap(), vec![0.5]);
    }

    #[test]
    fn per_proposal_scores_follow_argmax_class() {
        let v3 = (3.0f64).sqrt() / 3.0;
        let kb = kb(
            &[
                ("alpha", &[1.0, 0.0, 0.0]),
                ("beta", &[0.0, 1.0, 0.0]),
                ("gamma", &[v3, v3, v3]),
                ("noun", &[1.0, 0.0, 0.0]),
            ],
            &["alpha", "beta", "gamma"],
            &[],
        );
        let img = image(vec![
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.2, 0.6],
        ]);
        let q = query(&["the", "noun"], Some(vec![1]));
        let raw = compute_knowledge(&q, &img, &kb).unwrap();
        assert!((raw[0] - 1.0).abs() < 1e-12);
        assert!(raw[1].abs() < 1e-12);
        assert!((raw[2] - v3).abs() < 1e-12);
    }

    #[test]
    fn no_nouns_means_zero_scores() {
        let kb = kb(&[("dog", &[1.0, 0.0])], &["dog"], &[]);
        let img = image(vec![vec![1.0], vec![1.0]]);
        let q = query(&["nothing", "here"], Some(vec![]));
        assert_eq!(compute_knowledge(&q, &img, &kb).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        assert_eq!(argmax_lowest(&[0.4, 0.4, 0.2]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.4, 0.4]), 1);
    }

    #[test]
    fn knowledge_invariant_to_distribution_rescaling() {
        let kb = kb(&[("dog", &[1.0, 0.0]), ("cat", &[0.0, 1.0])], &["dog", "cat"], &[]);
        let q = query(&["a", "dog"], Some(vec![1]));
        let img1 = image(vec![vec![0.7, 0.3]]);
        let mut img2 = image(vec![vec![0.7, 0.3]]);
        for v in &mut img2.proposals[0].class_probs {
            *v *= 3.5;
        }
        // Rescaled distributions no longer sum to 1 but argmax is unchanged;
        // compute_knowledge only reads the argmax.
        assert_eq!(
            compute_knowledge(&q, &img1, &kb).unwrap(),
            compute_knowledge(&q, &img2, &kb).unwrap()
        );
    }

    #[test]
    fn distribution_length_mismatch_is_a_format_error() {
        let kb = kb(&[("dog", &[1.0, 0.0])], &["dog", "cat", "bird"], &[]);
        let img = image(vec![vec![0.5, 0.5]]);
        let q = query(&["a", "dog"], Some(vec![1]));
        assert!(matches!(
            compute_knowledge(&q, &img, &kb),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn lexicon_fallback_finds_noun_positions() {
        let lex: BTreeSet<String> = ["man", "football"].iter().map(|s| s.to_string()).collect();
        let tokens: Vec<String> = ["a", "man", "playing", "football"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(extract_nouns(&tokens, &lex).unwrap(), vec![1, 3]);
    }

    #[test]
    fn lexicon_misses_give_empty_positions() {
        let lex: BTreeSet<String> = ["dog"].iter().map(|s| s.to_string()).collect();
        let tokens: Vec<String> = ["blue", "sky"].iter().map(|s| s.to_string()).collect();
        assert_eq!(extract_nouns(&tokens, &lex).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn duplicated_noun_returns_both_positions() {
        let lex: BTreeSet<String> = ["dog"].iter().map(|s| s.to_string()).collect();
        let tokens: Vec<String> = ["dog", "chases", "dog"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(extract_nouns(&tokens, &lex).unwrap(), vec![0, 2]);
    }

    #[test]
    fn empty_token_list_is_a_contract_error() {
        let lex = BTreeSet::new();
        assert!(matches!(
            extract_nouns(&[], &lex),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn hard_gate_thresholds_raw_scores() {
        let cfg = GateConfig {
            mode: GateMode::Hard,
            threshold: 0.3,
        };
        let scores = apply_gate(vec![0.4, 0.2], &cfg, GateContext::Consistency);
        assert_eq!(scores.gate, vec![1.0, 0.0]);
        assert!(!scores.fallback_applied);
    }

    #[test]
    fn hard_gate_all_zero_falls_back_for_reconstruction() {
        let cfg = GateConfig {
            mode: GateMode::Hard,
            threshold: 0.3,
        };
        let scores = apply_gate(vec![0.1, 0.2], &cfg, GateContext::Reconstruction);
        assert_eq!(scores.gate, vec![1.0, 1.0]);
        assert!(scores.fallback_applied);
    }

    #[test]
    fn hard_gate_all_zero_stays_zero_for_consistency() {
        let cfg = GateConfig {
            mode: GateMode::Hard,
            threshold: 0.3,
        };
        let scores = apply_gate(vec![0.1, 0.2], &cfg, GateContext::Consistency);
        assert_eq!(scores.gate, vec![0.0, 0.0]);
        assert!(!scores.fallback_applied);
    }

    #[test]
    fn soft_gate_is_sigmoid() {
        let cfg = GateConfig {
            mode: GateMode::Soft,
            threshold: 0.3,
        };
        let scores = apply_gate(vec![0.0], &cfg, GateContext::Reconstruction);
        assert_eq!(scores.gate, vec![0.5]);
        assert!(!scores.fallback_applied);
    }

    #[test]
    fn soft_gate_stays_strictly_inside_unit_interval() {
        let cfg = GateConfig {
            mode: GateMode::Soft,
            threshold: 0.3,
        };
        let scores = apply_gate(vec![-1.0, -0.5, 0.0, 0.5, 1.0], &cfg, GateContext::Consistency);
        assert!(scores.gate.iter().all(|&g| g > 0.0 && g < 1.0));
        assert!(!scores.fallback_applied);
    }

    #[test]
    fn permuting_proposals_permutes_scores() {
        let kb = kb(
            &[("dog", &[1.0, 0.0]), ("cat", &[0.0, 1.0])],
            &["dog", "cat"],
            &[],
        );
        let q = query(&["a", "dog"], Some(vec![1]));
        let img = image(vec![vec![0.9, 0.1], vec![0.1, 0.9]]);
        let img_swapped = image(vec![vec![0.1, 0.9], vec![0.9, 0.1]]);
        let raw = compute_knowledge(&q, &img, &kb).unwrap();
        let raw_swapped = compute_knowledge(&q, &img_swapped, &kb).unwrap();
        assert_eq!(raw[0], raw_swapped[1]);
        assert_eq!(raw[1], raw_swapped[0]);
    }

    #[test]
    fn gate_mode_none_pins_ones_without_fallback() {
        let cfg = GateConfig {
            mode: GateMode::None,
            threshold: 0.3,
        };
        let scores = apply_gate(vec![-5.0, 5.0], &cfg, GateContext::Inference);
        assert_eq!(scores.gate, vec![1.0, 1.0]);
        assert!(!scores.fallback_applied);
    }
}
