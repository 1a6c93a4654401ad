//! The suite and prompt files shipped with the library.

use crate::config::{self, SuiteConfig};

use super::{Registry, RegistryError};

pub const SUITE_JSON: &str = include_str!("../../assets/suite.json");

/// `(category, benchmark_key, file contents)` for every shipped prompt file.
pub const PROMPT_FILES: &[(&str, &str, &str)] = &[
    ("code", "humaneval", include_str!("../../assets/prompts/code/humaneval.json")),
    ("math", "gsm8k", include_str!("../../assets/prompts/math/gsm8k.json")),
    ("reading_comprehension", "squad", include_str!("../../assets/prompts/reading_comprehension/squad.json")),
    ("reading_comprehension", "boolq", include_str!("../../assets/prompts/reading_comprehension/boolq.json")),
    ("reading_comprehension", "quac", include_str!("../../assets/prompts/reading_comprehension/quac.json")),
    ("commonsense", "piqa", include_str!("../../assets/prompts/commonsense/piqa.json")),
    ("world_knowledge", "triviaqa", include_str!("../../assets/prompts/world_knowledge/triviaqa.json")),
    ("long_context", "zero_scrolls", include_str!("../../assets/prompts/long_context/zero_scrolls.json")),
    ("general", "mmlu", include_str!("../../assets/prompts/general/mmlu.json")),
    ("tool_use", "api_bank", include_str!("../../assets/prompts/tool_use/api_bank.json")),
    ("indic", "arc_c_in", include_str!("../../assets/prompts/indic/arc_c_in.json")),
    ("indic", "flores_in", include_str!("../../assets/prompts/indic/flores_in.json")),
];

pub fn builtin_prompt(category: &str, benchmark_key: &str) -> Option<&'static str> {
    PROMPT_FILES.iter().find(|(c, k, _)| *c == category && *k == benchmark_key).map(|(_, _, text)| *text)
}

pub fn builtin_suite() -> SuiteConfig {
    config::from_json_str(SUITE_JSON).expect("shipped suite is valid")
}

pub fn builtin_registry() -> Result<Registry, RegistryError> {
    Registry::from_config(&builtin_suite())
}
