//! Criteria augmentation under a privacy guard, plus baseline augmenters.

pub mod baselines;
pub mod llm;
pub mod pipeline;
pub mod privacy;

pub use baselines::{
    back_translate, context_word_augment, swap_word_augment, ConstantFiller, DictionaryFiller,
    HttpTranslator, IdentityTranslator, MaskFiller, PhraseTableTranslator, Pivot, Translator,
};
pub use llm::{LlmClient, LlmError, LlmRequest, MockLlm, OpenAiCompatibleClient, ReplayLlm};
pub use pipeline::{
    assemble_augmented_set, augment_criterion, augment_trials, augmentation_map, build_prompt,
    propagate_labels, AugmentError, AugmentSummary, AugmentationRecord, Augmenter, LlmOptions,
    PromptTemplate, DEFAULT_PREFIX,
};
pub use privacy::{
    screen_prompt, AuditLog, Decision, PolicyMode, PrivacyAuditEntry, PrivacyPolicy, ScreenOutcome,
};
