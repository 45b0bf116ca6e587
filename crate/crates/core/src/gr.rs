//! Generative retrieval backends and DocID resolution. A backend turns a
//! query into raw title strings; resolution maps them onto the catalog by
//! exact normalized match, so every hallucinated string stays visible.

use std::collections::HashSet;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{normalize_docid, Catalog, Document};
use crate::gateway::client::split_title_list;
use crate::gateway::{GatewayError, LlmClient, PromptTemplate};
use crate::sparse::{Bm25Params, InvertedIndex};

/// Split a raw model completion into candidate DocID strings: one per line
/// or separated by semicolons, trimmed, empties dropped.
pub fn parse_generation(text: &str) -> Vec<String> {
    split_title_list(text)
}

/// How one generated string fared against the catalog.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationResult {
    pub query: String,
    /// Distinct generated strings in generation order (normalized-form
    /// duplicates keep the first occurrence).
    pub raw_outputs: Vec<String>,
    pub duplicates_dropped: usize,
    /// Catalog documents the outputs resolved to, in generation order.
    pub resolved: Vec<Document>,
    /// Outputs that matched no catalog entry: hallucinated DocID strings.
    pub invalid: Vec<String>,
}

impl GenerationResult {
    pub fn from_raw(catalog: &Catalog, query: impl Into<String>, raw: Vec<String>) -> Self {
        let mut seen: HashSet<String> = HashSet::new();
        let mut raw_outputs = Vec::new();
        let mut duplicates_dropped = 0usize;
        let mut resolved = Vec::new();
        let mut invalid = Vec::new();
        for piece in raw {
            let norm = normalize_docid(&piece);
            if norm.is_empty() {
                continue;
            }
            if !seen.insert(norm) {
                duplicates_dropped += 1;
                continue;
            }
            match catalog.resolve(&piece) {
                Some(doc) => resolved.push(doc.clone()),
                None => invalid.push(piece.clone()),
            }
            raw_outputs.push(piece);
        }
        GenerationResult {
            query: query.into(),
            raw_outputs,
            duplicates_dropped,
            resolved,
            invalid,
        }
    }
}

/// A model that proposes DocIDs for a query. Implementations must be
/// deterministic for a fixed configuration.
#[async_trait]
pub trait GenerativeBackend: Send + Sync {
    /// Up to `k` raw DocID strings in generation order.
    async fn generate(&self, query: &str, k: usize) -> Result<Vec<String>, GatewayError>;
}

/// Backend that asks a live endpoint for titles.
pub struct RemoteBackend {
    client: LlmClient,
    template: PromptTemplate,
}

impl RemoteBackend {
    pub fn new(client: LlmClient, template: PromptTemplate) -> Self {
        RemoteBackend { client, template }
    }
}

#[async_trait]
impl GenerativeBackend for RemoteBackend {
    async fn generate(&self, query: &str, k: usize) -> Result<Vec<String>, GatewayError> {
        let bindings = [("q", query.to_string())].into_iter().collect();
        let prompt = self.template.render(&bindings)?;
        let reply = self.client.complete(&prompt).await?;
        let mut outputs = parse_generation(&reply);
        outputs.truncate(k);
        Ok(outputs)
    }
}

/// Which failure a perturbed slot simulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HallucinationSpecies {
    /// The output string matches no catalog entry.
    InvalidString,
    /// The output is a real catalog title drawn far outside the query's
    /// relevance neighborhood.
    ValidIrrelevant,
}

/// Per-slot record of what the stub did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotTrace {
    /// The retrieval-ranked title this slot started from.
    pub original: String,
    pub perturbed: Option<HallucinationSpecies>,
}

/// Deterministic stand-in for a trained generative model: BM25 rankings
/// perturbed with seeded hallucinations at a fixed rate. Each slot's
/// randomness derives from (seed, query, slot) alone, so results do not
/// depend on call order or concurrency.
pub struct StubBackend {
    catalog: Catalog,
    index: InvertedIndex,
    params: Bm25Params,
    hallucination_rate: f64,
    seed: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(hash: u64, bytes: &[u8]) -> u64 {
    let mut h = hash;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Stable across platforms and releases; the whole stub contract depends
/// on this function never changing.
fn slot_seed(seed: u64, query: &str, slot: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    let h = fnv1a(h, query.as_bytes());
    fnv1a(h, &slot.to_le_bytes())
}

impl StubBackend {
    /// `hallucination_rate` is the per-slot perturbation probability in
    /// [0, 1].
    pub fn new(
        catalog: Catalog,
        index: InvertedIndex,
        params: Bm25Params,
        hallucination_rate: f64,
        seed: u64,
    ) -> Self {
        assert!(
            (0.0..=1.0).contains(&hallucination_rate),
            "hallucination_rate must be in [0, 1]"
        );
        StubBackend {
            catalog,
            index,
            params,
            hallucination_rate,
            seed,
        }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    /// As `generate`, plus the per-slot provenance.
    pub fn generate_with_trace(&self, query: &str, k: usize) -> (Vec<String>, Vec<SlotTrace>) {
        if k == 0 {
            return (Vec::new(), Vec::new());
        }
        let ranked = self
            .index
            .retrieve(&self.params, query, 3 * k)
            .expect("stub retrieval cannot fail for k > 0");
        let base: Vec<usize> = ranked.iter().take(k).map(|&(doc, _)| doc).collect();
        // Species (b) draws from outside the whole retrieved neighborhood,
        // never just outside the returned top k.
        let neighborhood: HashSet<usize> = ranked.iter().map(|&(doc, _)| doc).collect();
        let pool: Vec<usize> = (0..self.catalog.len())
            .filter(|i| !neighborhood.contains(i))
            .collect();

        let mut used: HashSet<String> = base
            .iter()
            .map(|&doc| normalize_docid(&self.catalog.documents()[doc].title))
            .collect();
        let mut outputs = Vec::with_capacity(base.len());
        let mut traces = Vec::with_capacity(base.len());
        for (slot, &doc) in base.iter().enumerate() {
            let original = self.catalog.documents()[doc].title.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(slot_seed(self.seed, query, slot as u64));
            if rng.random::<f64>() >= self.hallucination_rate {
                outputs.push(original.clone());
                traces.push(SlotTrace {
                    original,
                    perturbed: None,
                });
                continue;
            }
            let species = if rng.random::<bool>() {
                HallucinationSpecies::InvalidString
            } else {
                HallucinationSpecies::ValidIrrelevant
            };
            let (output, species) = match species {
                HallucinationSpecies::ValidIrrelevant => {
                    match self.draw_valid_irrelevant(&mut rng, &pool, &used) {
                        Some(title) => (title, HallucinationSpecies::ValidIrrelevant),
                        // Tiny catalogs can leave no doc outside the
                        // neighborhood; degrade to species (a).
                        None => (
                            self.corrupt_title(&mut rng, &original, &used),
                            HallucinationSpecies::InvalidString,
                        ),
                    }
                }
                HallucinationSpecies::InvalidString => (
                    self.corrupt_title(&mut rng, &original, &used),
                    HallucinationSpecies::InvalidString,
                ),
            };
            used.insert(normalize_docid(&output));
            outputs.push(output);
            traces.push(SlotTrace {
                original,
                perturbed: Some(species),
            });
        }
        (outputs, traces)
    }

    fn draw_valid_irrelevant(
        &self,
        rng: &mut ChaCha8Rng,
        pool: &[usize],
        used: &HashSet<String>,
    ) -> Option<String> {
        let candidates: Vec<&str> = pool
            .iter()
            .map(|&doc| self.catalog.documents()[doc].title.as_str())
            .filter(|title| !used.contains(&normalize_docid(title)))
            .collect();
        if candidates.is_empty() {
            return None;
        }
        Some(candidates[rng.random_range(0..candidates.len())].to_string())
    }

    /// Near-miss string: the original title plus random digits, re-drawn
    /// until it matches no catalog entry and no output already emitted.
    fn corrupt_title(&self, rng: &mut ChaCha8Rng, original: &str, used: &HashSet<String>) -> String {
        let mut suffix_len = 4u32;
        loop {
            for _ in 0..16 {
                let bound = 10u64.pow(suffix_len);
                let digits = rng.random_range(0..bound);
                let candidate = format!("{original}{digits:0width$}", width = suffix_len as usize);
                let norm = normalize_docid(&candidate);
                if self.catalog.resolve(&norm).is_none() && !used.contains(&norm) {
                    return candidate;
                }
            }
            suffix_len += 1;
        }
    }
}

#[async_trait]
impl GenerativeBackend for StubBackend {
    async fn generate(&self, query: &str, k: usize) -> Result<Vec<String>, GatewayError> {
        Ok(self.generate_with_trace(query, k).0)
    }
}
