//! Tokenization and text embedding.
//!
//! The tokenizer is shared by the inverted index and BM25 so both see the
//! same term statistics. Text embedders are pluggable behind [`TextEmbedder`];
//! [`HashedTrigramEmbedder`] is the built-in default.

mod embedding;
mod trigram;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use embedding::{dot, Embedding};
pub use trigram::HashedTrigramEmbedder;

use crate::error::{Error, Result};

/// Lowercases `text` and splits it on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Distinct tokens of `text` in first-occurrence order.
pub fn distinct_tokens(text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    tokenize(text).into_iter().filter(|t| seen.insert(t.clone())).collect()
}

/// Maps text to a fixed-dimension unit vector.
///
/// Implementations must be deterministic: the same text always yields a
/// bitwise-identical embedding.
pub trait TextEmbedder: Send + Sync {
    fn id(&self) -> &str;

    fn dim(&self) -> usize;

    fn embed(&self, text: &str) -> Embedding;
}

pub fn embed_text(text: &str, embedder: &dyn TextEmbedder) -> Embedding {
    embedder.embed(text)
}

type EmbedderFactory = Box<dyn Fn(usize, u64) -> Arc<dyn TextEmbedder> + Send + Sync>;

/// Embedders selectable by name from the engine config.
pub struct EmbedderRegistry {
    factories: BTreeMap<String, EmbedderFactory>,
}

impl Default for EmbedderRegistry {
    fn default() -> Self {
        let mut registry = EmbedderRegistry {
            factories: BTreeMap::new(),
        };
        registry.register(HashedTrigramEmbedder::NAME, |dim, seed| {
            Arc::new(HashedTrigramEmbedder::new(dim, seed))
        });
        registry
    }
}

impl EmbedderRegistry {
    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(usize, u64) -> Arc<dyn TextEmbedder> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn build(&self, name: &str, dim: usize, seed: u64) -> Result<Arc<dyn TextEmbedder>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownEmbedder(name.to_string()))?;
        Ok(factory(dim, seed))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("how to ask for a raise?"), ["how", "to", "ask", "for", "a", "raise"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Dropout in AI"), ["dropout", "in", "ai"]);
    }

    #[test]
    fn tokenize_unicode() {
        assert_eq!(tokenize("Über--GRÖSSE,  naïve_café"), ["über", "grösse", "naïve", "café"]);
        assert!(tokenize("?!  ...").is_empty());
    }

    #[test]
    fn distinct_keeps_first_occurrence() {
        assert_eq!(distinct_tokens("b a B c a"), ["b", "a", "c"]);
    }

    #[test]
    fn registry_builds_default_and_rejects_unknown() {
        let reg = EmbedderRegistry::default();
        let e = reg.build("hashed-trigram", 16, 7).unwrap();
        assert_eq!(e.dim(), 16);
        assert_eq!(e.id(), "hashed-trigram");
        assert!(matches!(reg.build("e5", 16, 7), Err(Error::UnknownEmbedder(_))));
    }

    #[test]
    fn registry_accepts_external_embedders() {
        struct Constant;
        impl TextEmbedder for Constant {
            fn id(&self) -> &str {
                "constant"
            }
            fn dim(&self) -> usize {
                2
            }
            fn embed(&self, _: &str) -> Embedding {
                Embedding::normalized(vec![1.0, 1.0]).unwrap()
            }
        }
        let mut reg = EmbedderRegistry::default();
        reg.register("constant", |_, _| Arc::new(Constant));
        let e = reg.build("constant", 0, 0).unwrap();
        assert_eq!(embed_text("x", e.as_ref()).dim(), 2);
        assert_eq!(reg.names().collect::<Vec<_>>(), ["constant", "hashed-trigram"]);
    }
}
