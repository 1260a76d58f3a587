use std::collections::HashMap;

use super::ConsensusError;
use crate::dispatch::ExpertResponse;

/// Pulls a short comparable answer out of a free-text response.
pub trait AnswerExtractor: Send + Sync {
    fn extract(&self, response: &ExpertResponse) -> Result<String, ConsensusError>;
}

/// Uses the text after an `Answer:` prefix when present, otherwise the last
/// non-empty line. Answers are compared after lowercasing and trimming
/// trailing punctuation.
#[derive(Debug, Clone, Copy, Default)]
pub struct FinalAnswerExtractor;

impl AnswerExtractor for FinalAnswerExtractor {
    fn extract(&self, response: &ExpertResponse) -> Result<String, ConsensusError> {
        let lines: Vec<&str> = response.text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let tagged = lines.iter().rev().find_map(|l| {
            let lower = l.to_ascii_lowercase();
            lower.starts_with("answer:").then(|| l["answer:".len()..].trim())
        });
        let answer = tagged.or_else(|| lines.last().copied()).unwrap_or("");
        let answer = answer.trim_end_matches(['.', '!']).trim().to_lowercase();
        if answer.is_empty() {
            return Err(ConsensusError::Vote(format!("no answer in response from {}", response.expert_id)));
        }
        Ok(answer)
    }
}

/// Modal extracted answer across responses. Ties go to the answer whose
/// first supporter has the lowest expert index. Responses whose answer
/// cannot be extracted are skipped.
pub fn majority_vote_baseline(responses: &[ExpertResponse], extractor: &dyn AnswerExtractor) -> Result<String, ConsensusError> {
    if responses.len() < 2 {
        return Err(ConsensusError::InvalidInput("majority vote needs at least two responses".into()));
    }
    let mut tally: HashMap<String, (usize, usize)> = HashMap::new();
    for (idx, response) in responses.iter().enumerate() {
        let Ok(answer) = extractor.extract(response) else { continue };
        tally.entry(answer).or_insert((0, idx)).0 += 1;
    }
    tally
        .into_iter()
        .max_by(|(_, (ca, ia)), (_, (cb, ib))| ca.cmp(cb).then(ib.cmp(ia)))
        .map(|(answer, _)| answer)
        .ok_or_else(|| ConsensusError::Vote("no response yielded an answer".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn r(i: usize, text: &str) -> ExpertResponse {
        ExpertResponse { expert_id: format!("e{i}"), text: text.into() }
    }

    fn responses(answers: &[&str]) -> Vec<ExpertResponse> {
        answers.iter().enumerate().map(|(i, a)| r(i, &format!("Reasoning...\nAnswer: {a}"))).collect()
    }

    #[test]
    fn mode_and_tie_break() {
        assert_eq!(majority_vote_baseline(&responses(&["A", "A", "B"]), &FinalAnswerExtractor).unwrap(), "a");
        assert_eq!(majority_vote_baseline(&responses(&["A", "B"]), &FinalAnswerExtractor).unwrap(), "a");
        assert_eq!(majority_vote_baseline(&responses(&["B", "A", "A"]), &FinalAnswerExtractor).unwrap(), "a");
        assert_eq!(majority_vote_baseline(&responses(&["B", "A", "C"]), &FinalAnswerExtractor).unwrap(), "b");
    }

    #[test]
    fn failures() {
        assert!(majority_vote_baseline(&responses(&["A"]), &FinalAnswerExtractor).is_err());
        let blank = vec![r(0, "  "), r(1, "\n")];
        assert!(matches!(majority_vote_baseline(&blank, &FinalAnswerExtractor), Err(ConsensusError::Vote(_))));
        let partial = vec![r(0, ""), r(1, "Lima.")];
        assert_eq!(majority_vote_baseline(&partial, &FinalAnswerExtractor).unwrap(), "lima");
    }

    #[test]
    fn random_triples_match_frequency_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let alphabet = ["A", "B", "C"];
        for _ in 0..100 {
            let picks: Vec<&str> = (0..3).map(|_| alphabet[rng.random_range(0..3)]).collect();
            // Oracle: count occurrences, highest count wins, earliest index on ties.
            let mut best = (0usize, usize::MAX, "");
            for (i, a) in picks.iter().enumerate() {
                let count = picks.iter().filter(|b| *b == a).count();
                let first = picks.iter().position(|b| b == a).unwrap();
                if count > best.0 || (count == best.0 && first < best.1) {
                    best = (count, first, picks[i]);
                }
            }
            let got = majority_vote_baseline(&responses(&picks), &FinalAnswerExtractor).unwrap();
            assert_eq!(got, best.2.to_lowercase());
        }
    }
}
