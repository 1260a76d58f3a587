use serde::{Deserialize, Serialize};

use super::prompt::SynthesisPromptTemplate;
use super::ConsensusError;
use crate::dispatch::{AgentRequest, DeltaFn, ExpertAgent};

/// The synthesizer's output split into its five sections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub consensus_section: String,
    pub partial_section: String,
    pub disagreement_section: String,
    pub unique_section: String,
    pub analysis_section: String,
    /// At least one required header was missing from the raw output.
    pub degraded_structure: bool,
}

fn header_index(line: &str, headers: &[String; 5]) -> Option<usize> {
    let trimmed = line.trim();
    if !trimmed.starts_with('#') {
        return None;
    }
    let label = trimmed.trim_start_matches('#').trim().trim_end_matches(':').trim();
    headers.iter().position(|h| h.eq_ignore_ascii_case(label))
}

/// Splits raw synthesizer output on markdown headers matching the template.
///
/// Text before the first recognized header, and everything when no header is
/// found, is treated as unattributed. If any header is missing the report is
/// flagged degraded and unattributed text is appended to the analysis
/// section.
pub fn parse_synthesis(raw: &str, headers: &[String; 5]) -> SynthesisReport {
    let mut sections: [Vec<&str>; 5] = Default::default();
    let mut seen = [false; 5];
    let mut unattributed: Vec<&str> = Vec::new();
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        if let Some(idx) = header_index(line, headers) {
            seen[idx] = true;
            current = Some(idx);
            continue;
        }
        match current {
            Some(idx) => sections[idx].push(line),
            None => unattributed.push(line),
        }
    }
    let degraded = !seen.iter().all(|s| *s);
    let join = |lines: &[&str]| lines.join("\n").trim().to_string();
    let mut analysis = join(&sections[4]);
    let stray = join(&unattributed);
    if degraded && !stray.is_empty() {
        analysis = if analysis.is_empty() { stray } else { format!("{stray}\n\n{analysis}") };
    }
    SynthesisReport {
        consensus_section: join(&sections[0]),
        partial_section: join(&sections[1]),
        disagreement_section: join(&sections[2]),
        unique_section: join(&sections[3]),
        analysis_section: analysis,
        degraded_structure: degraded,
    }
}

/// Sends the prompt to the synthesizer and parses its reply. Returns the
/// parsed report together with the raw text.
pub async fn synthesize_structured(
    prompt: &str,
    synthesizer: &dyn ExpertAgent,
    template: &SynthesisPromptTemplate,
    on_delta: Option<DeltaFn<'_>>,
) -> Result<(SynthesisReport, String), ConsensusError> {
    let request = AgentRequest::single(prompt, synthesizer.spec().generation.clone());
    let raw = synthesizer.generate(&request, on_delta).await.map_err(ConsensusError::Synthesis)?;
    Ok((parse_synthesis(&raw, &template.section_headers), raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{ExpertSpec, ScriptEntry, ScriptStatus, ScriptedExpert};

    fn headers() -> [String; 5] {
        SynthesisPromptTemplate::default().section_headers
    }

    const FULL: &str = "## Consensus\n- Water is wet.\n\n## Partial Agreement\n(none)\n## Disagreements\n- A says 5, B says 7\n## Unique Findings\n- Only C: ice floats.\n## Comprehensive Analysis\nWater is wet and ice floats.\n";

    #[tokio::test]
    async fn complete_output_parses() {
        let agent = ScriptedExpert::lenient(ExpertSpec::new("synth", "mock", "s"), ScriptEntry::ok(FULL, 0.0));
        let (report, raw) = synthesize_structured("prompt", &agent, &SynthesisPromptTemplate::default(), None).await.unwrap();
        assert_eq!(raw, FULL);
        assert!(!report.degraded_structure);
        assert_eq!(report.consensus_section, "- Water is wet.");
        assert_eq!(report.partial_section, "(none)");
        assert_eq!(report.disagreement_section, "- A says 5, B says 7");
        assert_eq!(report.unique_section, "- Only C: ice floats.");
        assert_eq!(report.analysis_section, "Water is wet and ice floats.");
    }

    #[test]
    fn missing_unique_header_is_degraded() {
        let raw = FULL.replace("## Unique Findings\n", "");
        let report = parse_synthesis(&raw, &headers());
        assert!(report.degraded_structure);
        assert_eq!(report.unique_section, "");
        assert!(report.disagreement_section.contains("Only C"));
    }

    #[test]
    fn headerless_output_goes_to_analysis() {
        let report = parse_synthesis("Just an answer.\nSecond line.", &headers());
        assert!(report.degraded_structure);
        assert_eq!(report.analysis_section, "Just an answer.\nSecond line.");
        assert_eq!(report.consensus_section, "");
    }

    #[test]
    fn header_variants_accepted() {
        let raw = "# consensus:\nA\n### PARTIAL AGREEMENT\nB\n## Disagreements\nC\n## Unique Findings\nD\n## Comprehensive Analysis:\nE";
        let report = parse_synthesis(raw, &headers());
        assert!(!report.degraded_structure);
        assert_eq!(
            [report.consensus_section, report.partial_section, report.disagreement_section, report.unique_section, report.analysis_section],
            ["A", "B", "C", "D", "E"].map(String::from)
        );
    }

    #[tokio::test]
    async fn synthesizer_failure_surfaces() {
        let agent = ScriptedExpert::lenient(
            ExpertSpec::new("synth", "mock", "s"),
            ScriptEntry { text: String::new(), latency_secs: 0.0, status: ScriptStatus::ProviderError },
        );
        let err = synthesize_structured("p", &agent, &SynthesisPromptTemplate::default(), None).await.unwrap_err();
        assert!(matches!(err, ConsensusError::Synthesis(_)));
    }
}
