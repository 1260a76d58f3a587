//! Council configuration document and named presets.
//!
//! A config is one TOML document: triage settings, the expert roster, the
//! synthesizer (plus alternates for swap ablations), the triage classifier
//! model, quorum, timeout and seed. [`CouncilConfig::build_council`] turns it
//! into a runnable [`Council`] backed either by remote chat-completion
//! endpoints or by the deterministic offline mocks.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::council::Council;
use crate::consensus::prompt::SynthesisPromptTemplate;
use crate::dispatch::mock::{EchoSynthesizer, MockExpert, MockSettings};
use crate::dispatch::remote::ChatCompletionAgent;
use crate::dispatch::{ExpertAgent, ExpertSpec, GenerationParams, ReasoningLevel, DEFAULT_MIN_SUCCESS};
use crate::triage::{AgentClassifier, KeywordClassifier, ServerClassifier, TriageConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("preset {0} is not implemented")]
    Unimplemented(String),
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesisMode {
    /// Claim partition plus five-section synthesis.
    #[default]
    Structured,
    /// Ablation: pick the modal final answer, no synthesizer call.
    MajorityVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouncilMode {
    #[default]
    Council,
    /// Baseline: the first expert answers alone.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    CouncilNoWeb,
    CouncilWeb,
    SingleNoWeb,
    SingleWeb,
    /// Retrieval-augmented setting. Recognized, but has no retrieval index.
    Rag,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::CouncilNoWeb => "council-noweb",
            Preset::CouncilWeb => "council-web",
            Preset::SingleNoWeb => "single-noweb",
            Preset::SingleWeb => "single-web",
            Preset::Rag => "rag",
        }
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "council-noweb" => Ok(Preset::CouncilNoWeb),
            "council-web" => Ok(Preset::CouncilWeb),
            "single-noweb" => Ok(Preset::SingleNoWeb),
            "single-web" => Ok(Preset::SingleWeb),
            "rag" => Ok(Preset::Rag),
            other => Err(ConfigError::UnknownPreset(other.to_string())),
        }
    }
}

/// Which agents `build_council` instantiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Remote,
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouncilConfig {
    pub seed: u64,
    pub mode: CouncilMode,
    pub synthesis_mode: SynthesisMode,
    pub triage_enabled: bool,
    /// Number of experts taken from the front of `experts`.
    pub expert_count: usize,
    pub quorum: usize,
    pub expert_timeout_secs: f64,
    pub triage: TriageConfig,
    pub experts: Vec<ExpertSpec>,
    pub synthesizer: ExpertSpec,
    pub alternate_synthesizers: Vec<ExpertSpec>,
    pub classifier: ExpertSpec,
    pub template: SynthesisPromptTemplate,
    pub mock: MockSettings,
}

fn spec(id: &str, provider: &str, endpoint: &str, budget: u64, generation: GenerationParams) -> ExpertSpec {
    ExpertSpec {
        context_budget: budget,
        generation,
        endpoint: Some(endpoint.to_string()),
        ..ExpertSpec::new(id, provider, id)
    }
}

const OPENAI_URL: &str = "https://api.openai.com/v1/chat/completions";
const ANTHROPIC_URL: &str = "https://api.anthropic.com/v1/chat/completions";
const GOOGLE_URL: &str = "https://generativelanguage.googleapis.com/v1beta/openai/chat/completions";
const DEEPSEEK_URL: &str = "https://api.deepseek.com/chat/completions";
const BYTEDANCE_URL: &str = "https://ark.cn-beijing.volces.com/api/v3/chat/completions";

impl Default for CouncilConfig {
    fn default() -> Self {
        let expert = GenerationParams::default();
        let synth = GenerationParams { temperature: 0.3, top_p: 0.9, max_new_tokens: 8192, reasoning_level: ReasoningLevel::Maximum };
        let light = GenerationParams { temperature: 0.3, top_p: 0.9, max_new_tokens: 8192, reasoning_level: ReasoningLevel::Default };
        let classifier = GenerationParams { temperature: 0.3, top_p: 1.0, max_new_tokens: 256, reasoning_level: ReasoningLevel::Minimal };
        Self {
            seed: 42,
            mode: CouncilMode::Council,
            synthesis_mode: SynthesisMode::Structured,
            triage_enabled: true,
            expert_count: 3,
            quorum: DEFAULT_MIN_SUCCESS,
            expert_timeout_secs: 60.0,
            triage: TriageConfig::default(),
            experts: vec![
                spec("gpt-5.4", "openai", OPENAI_URL, 272_000, expert.clone()),
                spec("claude-opus-4-6", "anthropic", ANTHROPIC_URL, 200_000, expert.clone()),
                spec("gemini-3.1-pro-preview", "google", GOOGLE_URL, 1_048_000, expert.clone()),
                spec("deepseek-v3.2-pro", "deepseek", DEEPSEEK_URL, 128_000, expert),
            ],
            synthesizer: spec("doubao-seed-2-0-pro", "bytedance", BYTEDANCE_URL, 256_000, synth),
            alternate_synthesizers: vec![spec("gpt-4.1-mini", "openai", OPENAI_URL, 1_000_000, light)],
            classifier: ExpertSpec { expert_id: "triage-classifier".into(), ..spec("gpt-4.1-mini", "openai", OPENAI_URL, 1_000_000, classifier) },
            template: SynthesisPromptTemplate::default(),
            mock: MockSettings::default(),
        }
    }
}

type Agents = (Vec<Arc<dyn ExpertAgent>>, Arc<dyn ExpertAgent>, Arc<dyn ServerClassifier>);

impl CouncilConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn expert_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.expert_timeout_secs)
    }

    /// Experts that take part in a run under the current mode.
    pub fn active_experts(&self) -> &[ExpertSpec] {
        match self.mode {
            CouncilMode::Council => &self.experts[..self.expert_count.min(self.experts.len())],
            CouncilMode::Single => &self.experts[..1.min(self.experts.len())],
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.experts.is_empty() {
            return invalid("expert roster is empty".into());
        }
        if self.expert_count == 0 || self.expert_count > self.experts.len() {
            return invalid(format!("expert_count {} outside 1..={}", self.expert_count, self.experts.len()));
        }
        let mut ids = BTreeSet::new();
        for e in &self.experts {
            if !ids.insert(e.expert_id.as_str()) {
                return invalid(format!("duplicate expert id {}", e.expert_id));
            }
        }
        for e in self.experts.iter().chain([&self.synthesizer, &self.classifier]).chain(&self.alternate_synthesizers) {
            e.validate().map_err(|err| ConfigError::Invalid(format!("{}: {err}", e.expert_id)))?;
        }
        if !(self.expert_timeout_secs.is_finite() && self.expert_timeout_secs > 0.0) {
            return invalid("expert_timeout_secs must be positive".into());
        }
        if self.mode == CouncilMode::Council {
            if self.expert_count < 2 {
                return invalid("council mode needs at least two experts".into());
            }
            if self.quorum < 2 || self.quorum > self.expert_count {
                return invalid(format!("quorum {} outside 2..={}", self.quorum, self.expert_count));
            }
        }
        let m = &self.mock;
        let rates_ok = [m.omission_rate, m.deviation_rate].iter().all(|r| (0.0..=1.0).contains(r));
        let latencies_ok = [m.latency_min_secs, m.latency_max_secs, m.synthesis_latency_secs].iter().all(|l| l.is_finite() && *l >= 0.0);
        if !rates_ok || !latencies_ok || m.latency_min_secs > m.latency_max_secs {
            return invalid("mock settings out of range".into());
        }
        self.triage.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.template.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn apply_preset(&mut self, preset: Preset) -> Result<(), ConfigError> {
        let (mode, web) = match preset {
            Preset::CouncilNoWeb => (CouncilMode::Council, false),
            Preset::CouncilWeb => (CouncilMode::Council, true),
            Preset::SingleNoWeb => (CouncilMode::Single, false),
            Preset::SingleWeb => (CouncilMode::Single, true),
            Preset::Rag => return Err(ConfigError::Unimplemented(preset.name().into())),
        };
        self.mode = mode;
        for e in &mut self.experts {
            e.web_enabled = web;
        }
        Ok(())
    }

    /// Replaces the synthesizer with the alternate named `id`; the previous
    /// synthesizer becomes an alternate.
    pub fn swap_synthesizer(&mut self, id: &str) -> Result<(), ConfigError> {
        let idx = self
            .alternate_synthesizers
            .iter()
            .position(|s| s.expert_id == id)
            .ok_or_else(|| ConfigError::Invalid(format!("no alternate synthesizer {id}")))?;
        std::mem::swap(&mut self.synthesizer, &mut self.alternate_synthesizers[idx]);
        Ok(())
    }

    pub fn build_council(&self, backend: Backend) -> Result<Council, ConfigError> {
        self.validate()?;
        let (experts, synthesizer, classifier): Agents = match backend {
            Backend::Mock => (
                self.experts.iter().map(|s| Arc::new(MockExpert::new(s.clone(), self.seed, self.mock.clone())) as Arc<dyn ExpertAgent>).collect(),
                Arc::new(EchoSynthesizer::new(self.synthesizer.clone(), self.template.section_headers.clone(), self.mock.synthesis_latency_secs)),
                Arc::new(KeywordClassifier),
            ),
            Backend::Remote => {
                let remote = |s: &ExpertSpec| -> Result<Arc<dyn ExpertAgent>, ConfigError> {
                    Ok(Arc::new(ChatCompletionAgent::from_spec(s.clone()).map_err(|e| ConfigError::Invalid(e.to_string()))?))
                };
                let experts = self.experts.iter().map(remote).collect::<Result<Vec<_>, _>>()?;
                let classifier = Arc::new(AgentClassifier::new(remote(&self.classifier)?, &self.triage));
                (experts, remote(&self.synthesizer)?, classifier)
            }
        };
        Ok(Council::new(self.clone(), experts, synthesizer, classifier))
    }
}
