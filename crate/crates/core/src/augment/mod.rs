//! Two-stage dialogue augmentation.
//!
//! Stage 1 asks a text provider to rephrase or summarize the dialogue. Stage 2
//! applies one word-level or utterance-level augmenter. Each stage may also
//! leave its input untouched; choices are uniform.

mod ops;
pub mod provider;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{serialize_utterances, Speaker, Utterance};
use crate::error::{Error, Result};

pub use ops::{utterance_augment, word_augment, UtteranceMode, WordMode};
pub use provider::{
    prompt_hash, FixtureStore, HttpChatProvider, RecordingProvider, RewriteProvider,
    REPHRASE_TEMPLATE, SUMMARIZE_TEMPLATE,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage1Choice {
    Rephrase,
    Summarize,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Choice {
    WordDelete,
    WordSwap,
    WordCrop,
    UttDelete,
    UttSwap,
    None,
}

impl Stage2Choice {
    pub fn is_utterance_level(self) -> bool {
        matches!(self, Stage2Choice::UttDelete | Stage2Choice::UttSwap)
    }
}

const STAGE1: [Stage1Choice; 3] = [Stage1Choice::Rephrase, Stage1Choice::Summarize, Stage1Choice::None];
const STAGE2_STRUCTURED: [Stage2Choice; 6] = [
    Stage2Choice::WordDelete,
    Stage2Choice::WordSwap,
    Stage2Choice::WordCrop,
    Stage2Choice::UttDelete,
    Stage2Choice::UttSwap,
    Stage2Choice::None,
];
const STAGE2_FLAT: [Stage2Choice; 4] = [
    Stage2Choice::WordDelete,
    Stage2Choice::WordSwap,
    Stage2Choice::WordCrop,
    Stage2Choice::None,
];

/// A dialogue as text: speaker-tagged utterances, or a flat summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextForm {
    Utterances(Vec<(Speaker, String)>),
    Flat(String),
}

impl TextForm {
    pub fn from_utterances(utterances: &[Utterance]) -> Self {
        TextForm::Utterances(utterances.iter().map(|u| (u.speaker, u.text.clone())).collect())
    }

    /// Same layout as [`serialize_utterances`] for the structured form.
    pub fn serialize(&self) -> String {
        match self {
            TextForm::Flat(s) => s.clone(),
            TextForm::Utterances(us) => us
                .iter()
                .map(|(s, t)| format!("{}: {}", s.label(), t))
                .collect::<Vec<_>>()
                .join("\n"),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            TextForm::Flat(s) => s.trim().is_empty(),
            TextForm::Utterances(us) => us.is_empty(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedDialogue {
    pub text_form: TextForm,
    pub stage1_choice: Stage1Choice,
    pub stage2_choice: Stage2Choice,
    /// Stage 1 was drawn but the provider failed, so it fell back to `None`.
    pub stage1_failed: bool,
}

impl AugmentedDialogue {
    pub fn serialize(&self) -> String {
        self.text_form.serialize()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Shared stage-2 rate in `[0, 1]`. Zero disables stage 2.
    pub rate: f64,
    pub stage1_enabled: bool,
    pub seed: u64,
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::Config(format!("augmentation rate {} outside [0, 1]", self.rate)));
        }
        Ok(())
    }
}

fn parse_speaker_line(line: &str) -> Option<(Speaker, &str)> {
    let (head, rest) = line.split_once(':')?;
    let speaker = match head.trim().to_ascii_lowercase().as_str() {
        "user" | "seeker" => Speaker::User,
        "recommender" | "system" | "assistant" => Speaker::Recommender,
        _ => return None,
    };
    Some((speaker, rest.trim()))
}

/// Splits a rephrased dialogue back into speaker-tagged utterances. Lines
/// without a speaker prefix continue the previous utterance.
pub fn parse_rephrased(text: &str) -> Vec<(Speaker, String)> {
    let mut out: Vec<(Speaker, String)> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        match parse_speaker_line(line) {
            Some((s, rest)) => out.push((s, rest.to_string())),
            None => match out.last_mut() {
                Some((_, t)) => {
                    if !t.is_empty() {
                        t.push(' ');
                    }
                    t.push_str(line);
                }
                None => out.push((Speaker::User, line.to_string())),
            },
        }
    }
    out
}

pub fn build_prompt(mode: Stage1Choice, dialogue: &str) -> Option<String> {
    let template = match mode {
        Stage1Choice::Rephrase => REPHRASE_TEMPLATE,
        Stage1Choice::Summarize => SUMMARIZE_TEMPLATE,
        Stage1Choice::None => return None,
    };
    Some(template.replace("{dialogue}", dialogue))
}

/// Stage 1 on its own. `None` returns the serialized input unchanged.
pub fn stage1_rewrite(
    utterances: &[Utterance],
    mode: Stage1Choice,
    provider: &dyn RewriteProvider,
) -> Result<TextForm> {
    if utterances.is_empty() {
        return Err(Error::Argument("cannot rewrite an empty dialogue".into()));
    }
    let serialized = serialize_utterances(utterances);
    let Some(prompt) = build_prompt(mode, &serialized) else {
        return Ok(TextForm::from_utterances(utterances));
    };
    let text = provider.complete(&prompt)?;
    let fail = |message: &str| Error::Provider {
        prompt_hash: prompt_hash(&prompt),
        message: message.to_string(),
    };
    if text.trim().is_empty() {
        return Err(fail("empty completion"));
    }
    match mode {
        Stage1Choice::Summarize => Ok(TextForm::Flat(text.trim().to_string())),
        _ => {
            let parsed = parse_rephrased(&text);
            if parsed.is_empty() {
                return Err(fail("rephrasing has no utterances"));
            }
            Ok(TextForm::Utterances(parsed))
        }
    }
}

fn word_level(form: TextForm, mode: WordMode, rate: f64, rng: &mut (impl Rng + ?Sized)) -> TextForm {
    match form {
        TextForm::Flat(text) => {
            let toks: Vec<&str> = text.split_whitespace().collect();
            if toks.is_empty() {
                return TextForm::Flat(text);
            }
            TextForm::Flat(word_augment(&toks, mode, rate, rng).join(" "))
        }
        TextForm::Utterances(us) => {
            // words keep the utterance they came from
            let tagged: Vec<(usize, &str)> = us
                .iter()
                .enumerate()
                .flat_map(|(i, (_, t))| t.split_whitespace().map(move |w| (i, w)))
                .collect();
            if tagged.is_empty() {
                return TextForm::Utterances(us);
            }
            let out = word_augment(&tagged, mode, rate, rng);
            let mut words: Vec<Vec<&str>> = vec![Vec::new(); us.len()];
            for (i, w) in out {
                words[i].push(w);
            }
            TextForm::Utterances(
                us.iter()
                    .zip(words)
                    .filter(|(_, w)| !w.is_empty())
                    .map(|((s, _), w)| (*s, w.join(" ")))
                    .collect(),
            )
        }
    }
}

/// Applies one stage-2 augmenter.
pub fn apply_stage2(form: TextForm, choice: Stage2Choice, rate: f64, rng: &mut (impl Rng + ?Sized)) -> TextForm {
    match choice {
        Stage2Choice::None => form,
        Stage2Choice::WordDelete => word_level(form, WordMode::Delete, rate, rng),
        Stage2Choice::WordSwap => word_level(form, WordMode::Swap, rate, rng),
        Stage2Choice::WordCrop => word_level(form, WordMode::Crop, rate, rng),
        Stage2Choice::UttDelete | Stage2Choice::UttSwap => match form {
            TextForm::Utterances(us) => {
                let mode = if choice == Stage2Choice::UttDelete {
                    UtteranceMode::Delete
                } else {
                    UtteranceMode::Swap
                };
                TextForm::Utterances(utterance_augment(&us, mode, rate, rng))
            }
            flat => flat,
        },
    }
}

/// Draws the stage-1 branch (uniform over rephrase, summarize, none).
pub fn draw_stage1(rng: &mut (impl Rng + ?Sized)) -> Stage1Choice {
    STAGE1[rng.random_range(0..STAGE1.len())]
}

/// Draws the stage-2 branch; only word-level choices follow a summary.
pub fn draw_stage2(after: Stage1Choice, rng: &mut (impl Rng + ?Sized)) -> Stage2Choice {
    if after == Stage1Choice::Summarize {
        STAGE2_FLAT[rng.random_range(0..STAGE2_FLAT.len())]
    } else {
        STAGE2_STRUCTURED[rng.random_range(0..STAGE2_STRUCTURED.len())]
    }
}

/// Full training-time pipeline. Provider failures fall back to no stage-1
/// rewrite and set `stage1_failed`.
pub fn run_pipeline(
    utterances: &[Utterance],
    config: &AugmentConfig,
    provider: Option<&dyn RewriteProvider>,
    rng: &mut (impl Rng + ?Sized),
) -> AugmentedDialogue {
    let original = TextForm::from_utterances(utterances);
    if utterances.is_empty() {
        return AugmentedDialogue {
            text_form: original,
            stage1_choice: Stage1Choice::None,
            stage2_choice: Stage2Choice::None,
            stage1_failed: false,
        };
    }
    let mut stage1 = if config.stage1_enabled {
        draw_stage1(rng)
    } else {
        Stage1Choice::None
    };
    let mut failed = false;
    let form = match (stage1, provider) {
        (Stage1Choice::None, _) => original,
        (mode, Some(p)) => match stage1_rewrite(utterances, mode, p) {
            Ok(f) => f,
            Err(e) => {
                log::debug!("stage-1 {mode:?} failed: {e}");
                failed = true;
                stage1 = Stage1Choice::None;
                original
            }
        },
        (_, None) => {
            failed = true;
            stage1 = Stage1Choice::None;
            original
        }
    };
    let stage2 = if config.rate > 0.0 {
        draw_stage2(stage1, rng)
    } else {
        Stage2Choice::None
    };
    AugmentedDialogue {
        text_form: apply_stage2(form, stage2, config.rate, rng),
        stage1_choice: stage1,
        stage2_choice: stage2,
        stage1_failed: failed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dialogue() -> Vec<Utterance> {
        vec![
            Utterance { speaker: Speaker::User, text: "I want a movie with giant robots".into(), entities: vec![] },
            Utterance { speaker: Speaker::Recommender, text: "Have you seen Pacific Rim?".into(), entities: vec![] },
            Utterance { speaker: Speaker::User, text: "Yes, something like Transformers too".into(), entities: vec![] },
        ]
    }

    struct Fixed(&'static str);
    impl RewriteProvider for Fixed {
        fn complete(&self, _: &str) -> Result<String> {
            Ok(self.0.to_string())
        }
        fn provider_id(&self) -> String {
            "fixed".into()
        }
    }

    #[test]
    fn stage1_none_is_identity() {
        let d = dialogue();
        let out = stage1_rewrite(&d, Stage1Choice::None, &Fixed("ignored")).unwrap();
        assert_eq!(out.serialize(), serialize_utterances(&d));
    }

    #[test]
    fn prompts_embed_the_serialized_dialogue() {
        let p = build_prompt(Stage1Choice::Summarize, "User: hi").unwrap();
        assert!(p.contains("Here is the dialogue: User: hi. Summarize the user's preference"));
        assert!(p.ends_with("in a compact and informative manner."));
        let p = build_prompt(Stage1Choice::Rephrase, "User: hi").unwrap();
        assert!(p.ends_with("Output ONLY the rephrased content."));
    }

    #[test]
    fn replayed_fixture_used_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path());
        let d = dialogue();
        let prompt = build_prompt(Stage1Choice::Summarize, &serialize_utterances(&d)).unwrap();
        store.record(&prompt, "the user prefers sci-fi movies with giant robots").unwrap();
        let out = stage1_rewrite(&d, Stage1Choice::Summarize, &store).unwrap();
        assert_eq!(out, TextForm::Flat("the user prefers sci-fi movies with giant robots".into()));
    }

    #[test]
    fn rephrase_keeps_speaker_structure() {
        let out = stage1_rewrite(
            &dialogue(),
            Stage1Choice::Rephrase,
            &Fixed("User: robots please\ncontinued\nRecommender: try this"),
        )
        .unwrap();
        assert_eq!(
            out,
            TextForm::Utterances(vec![
                (Speaker::User, "robots please continued".into()),
                (Speaker::Recommender, "try this".into()),
            ])
        );
    }

    #[test]
    fn blank_completion_is_an_error() {
        let err = stage1_rewrite(&dialogue(), Stage1Choice::Summarize, &Fixed("  ")).unwrap_err();
        assert!(matches!(err, Error::Provider { .. }));
    }

    #[test]
    fn disabled_zero_rate_is_identity() {
        let d = dialogue();
        let cfg = AugmentConfig { rate: 0.0, stage1_enabled: false, seed: 0 };
        for seed in 0..50 {
            let out = run_pipeline(&d, &cfg, None, &mut ChaCha8Rng::seed_from_u64(seed));
            assert_eq!(out.serialize(), serialize_utterances(&d));
        }
    }

    #[test]
    fn provider_failure_falls_back() {
        let d = dialogue();
        let dir = tempfile::tempdir().unwrap();
        let empty = FixtureStore::open(dir.path());
        let cfg = AugmentConfig { rate: 0.0, stage1_enabled: true, seed: 0 };
        let mut failures = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let out = run_pipeline(&d, &cfg, Some(&empty), &mut rng);
            assert_eq!(out.stage1_choice, Stage1Choice::None);
            assert_eq!(out.serialize(), serialize_utterances(&d));
            failures += usize::from(out.stage1_failed);
        }
        assert!(failures > 40 && failures < 90, "{failures}");
    }

    #[test]
    fn summary_never_followed_by_utterance_ops() {
        let d = dialogue();
        let cfg = AugmentConfig { rate: 0.3, stage1_enabled: true, seed: 0 };
        let provider = Fixed("the user likes robots and big battles");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let out = run_pipeline(&d, &cfg, Some(&provider), &mut rng);
            if out.stage1_choice == Stage1Choice::Summarize {
                assert!(!out.stage2_choice.is_utterance_level());
                assert!(matches!(out.text_form, TextForm::Flat(_)));
            }
        }
    }

    #[test]
    fn word_level_on_structured_keeps_speakers() {
        let form = TextForm::from_utterances(&dialogue());
        let out = apply_stage2(form, Stage2Choice::WordDelete, 0.5, &mut ChaCha8Rng::seed_from_u64(1));
        let TextForm::Utterances(us) = out else { panic!() };
        let words: usize = us.iter().map(|(_, t)| t.split_whitespace().count()).sum();
        assert_eq!(words, 18 - 9);
    }

    #[test]
    fn replay_determinism() {
        let d = dialogue();
        let cfg = AugmentConfig { rate: 0.4, stage1_enabled: true, seed: 3 };
        let provider = Fixed("User: a b c d\nRecommender: e f");
        let run = |seed| run_pipeline(&d, &cfg, Some(&provider), &mut ChaCha8Rng::seed_from_u64(seed));
        for seed in 0..30 {
            assert_eq!(run(seed), run(seed));
        }
    }
}
