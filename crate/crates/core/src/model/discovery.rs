//! Finds local checkpoints and lists configured provider models.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use super::mock::MOCK_SCRIPT_FILE;
use super::{ModelDescriptor, Provider};
use crate::spec::Finding;

/// Files whose presence marks a directory as a checkpoint.
pub const WEIGHT_MANIFESTS: &[&str] = &[
    "model.safetensors",
    "model.safetensors.index.json",
    "pytorch_model.bin",
    "pytorch_model.bin.index.json",
    "model.gguf",
    MOCK_SCRIPT_FILE,
];

/// Model names offered per provider.
pub type ProviderCatalog = IndexMap<String, Vec<String>>;

pub fn default_catalog() -> ProviderCatalog {
    let mut catalog = ProviderCatalog::new();
    catalog.insert("openai".into(), vec!["gpt-4o".into(), "gpt-4o-mini".into()]);
    catalog.insert("gemini".into(), vec!["gemini-1.5-pro".into(), "gemini-1.5-flash".into()]);
    catalog.insert("anthropic".into(), vec!["claude-3-5-sonnet-latest".into()]);
    catalog
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Discovery {
    pub models: Vec<ModelDescriptor>,
    pub findings: Vec<Finding>,
}

pub fn discover_models(roots: &[PathBuf], providers: &[String]) -> Discovery {
    discover_models_with(roots, providers, &default_catalog())
}

/// Local checkpoints first (sorted by path, deduplicated), then provider
/// models in the order requested.
pub fn discover_models_with(roots: &[PathBuf], providers: &[String], catalog: &ProviderCatalog) -> Discovery {
    let mut out = Discovery::default();
    let mut dirs: Vec<PathBuf> = Vec::new();
    for root in roots {
        if is_checkpoint(root) {
            dirs.push(root.clone());
        }
        match std::fs::read_dir(root) {
            Ok(entries) => {
                for entry in entries.flatten() {
                    let path = entry.path();
                    if path.is_dir() && is_checkpoint(&path) {
                        dirs.push(path);
                    }
                }
            }
            Err(err) => {
                if !is_checkpoint(root) {
                    out.findings.push(Finding::new(root.display().to_string(), format!("unreadable root: {err}")));
                }
            }
        }
    }
    dirs.sort();
    dirs.dedup();
    out.models.extend(dirs.iter().map(|d| ModelDescriptor::local(d.to_string_lossy())));

    for name in providers {
        let Some(provider) = Provider::from_name(name) else {
            out.findings.push(Finding::new(format!("providers.{name}"), "unknown provider"));
            continue;
        };
        let models = catalog.get(provider.name()).cloned().unwrap_or_default();
        out.models.extend(models.iter().map(|m| ModelDescriptor::api(format!("{}/{m}", provider.name()))));
    }
    out
}

fn is_checkpoint(dir: &Path) -> bool {
    WEIGHT_MANIFESTS.iter().any(|f| dir.join(f).is_file())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SourceKind;

    #[test]
    fn finds_checkpoint_dirs_in_sorted_order() {
        let root = tempfile::tempdir().unwrap();
        for name in ["zeta", "alpha"] {
            let d = root.path().join(name);
            std::fs::create_dir(&d).unwrap();
            std::fs::write(d.join("model.safetensors"), b"").unwrap();
        }
        std::fs::create_dir(root.path().join("not-a-model")).unwrap();
        let found = discover_models(&[root.path().to_path_buf()], &[]);
        assert!(found.findings.is_empty());
        let ids: Vec<_> = found.models.iter().map(|m| m.identifier.clone()).collect();
        assert_eq!(ids.len(), 2);
        assert!(ids[0].ends_with("alpha") && ids[1].ends_with("zeta"));
    }

    #[test]
    fn providers_only_and_empty() {
        let found = discover_models(&[], &["openai".into()]);
        assert!(!found.models.is_empty());
        assert!(found.models.iter().all(|m| m.source_kind == SourceKind::ApiProvider));
        assert_eq!(discover_models(&[], &[]), Discovery::default());
    }

    #[test]
    fn unreadable_root_is_a_finding() {
        let found = discover_models(&[PathBuf::from("/definitely/not/here")], &[]);
        assert!(found.models.is_empty());
        assert_eq!(found.findings.len(), 1);
    }
}
