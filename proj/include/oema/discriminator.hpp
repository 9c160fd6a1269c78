#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "oema/corpus.hpp"
#include "oema/llm_gateway.hpp"
#include "oema/prompt_forge.hpp"
#include "oema/run_log.hpp"

namespace oema {

struct DiscriminatorConfig {
    int K = 12;  // candidate pool retrieved by cosine similarity
    int k = 3;   // examples kept after helpfulness scoring
    double ontology_temperature = 0.0;
    double scoring_temperature = 0.0;
    int max_tokens = 1024;
    // Escape hatch for context-window limits: when > 0, candidates are
    // scored in chunks of at most this many per prompt and the parsed
    // scores merged; 0 scores all K in one call.
    int score_batch_size = 0;
    std::string embed_model;  // empty = embedder backend default
    std::vector<OntologyExemplar> extra_exemplars;

    void validate() const;
};

struct VectorIndex {
    struct Entry {
        std::string sentence_id;
        EmbeddingVector vector;
    };
    std::vector<Entry> entries;  // corpus order
    std::string model;
};

struct OntologyPair {
    std::string category;
    std::string concept_name;
    std::string fragment;

    bool operator==(const OntologyPair&) const = default;
};

struct OntologyExtraction {
    std::vector<OntologyPair> pairs;  // order of appearance in raw
    std::string raw;
};

struct ScoredCandidate {
    AnnotatedExample example;
    double similarity = 0.0;
    int similarity_rank = 0;  // 1 = nearest
    OntologyExtraction ontology;
    int helpfulness = 1;  // in [1, 5]
    std::string reason;
};

struct KnnHit {
    std::string sentence_id;
    double similarity = 0.0;
    int rank = 0;
};

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

VectorIndex build_index(const Corpus& corpus, Gateway& gateway, const std::string& embed_model);
void save_index(const VectorIndex& index, const std::filesystem::path& path);
VectorIndex load_index(const std::filesystem::path& path);

// Exact top-K by cosine similarity, descending; ties broken by insertion
// order.
std::vector<KnnHit> retrieve_knn(const VectorIndex& index, const EmbeddingVector& query, int K);

OntologyExtraction extract_ontology(const std::string& sentence_text, Gateway& gateway,
                                    const PromptForge& forge,
                                    const std::vector<OntologyExemplar>& exemplars,
                                    double temperature = 0.0, int max_tokens = 1024);

// Parses an ontology answer of the form
// {"(category, concept)": "fragment", ...}; unparseable input yields empty
// pairs with raw preserved.
OntologyExtraction parse_ontology_answer(const std::string& raw);

struct CandidateInput {
    AnnotatedExample example;
    double similarity = 0.0;
    int similarity_rank = 0;
    OntologyExtraction ontology;
};

std::vector<ScoredCandidate> score_candidates(const Sentence& target,
                                              const OntologyExtraction& target_ontology,
                                              const std::vector<CandidateInput>& candidates,
                                              const LabelSet& label_set, Gateway& gateway,
                                              const PromptForge& forge,
                                              const DiscriminatorConfig& config,
                                              RunLog* log = nullptr);

// Sorts by (helpfulness desc, similarity_rank asc) and keeps the first
// min(k, |scored|); the returned order is the prompt order.
std::vector<AnnotatedExample> select_examples(const std::vector<ScoredCandidate>& scored, int k);

struct DiscriminationResult {
    std::vector<AnnotatedExample> selected;
    std::vector<ScoredCandidate> scored;  // candidate order (KNN rank order)
    OntologyExtraction target_ontology;
    std::vector<KnnHit> hits;
};

// Full pipeline: embed target, retrieve K, extract ontology for the K
// candidates plus the target, score helpfulness, keep top k.
DiscriminationResult discriminate(const Sentence& target, const Corpus& corpus,
                                  const VectorIndex& index, const DiscriminatorConfig& config,
                                  Gateway& chat_gateway, Gateway& embed_gateway,
                                  const PromptForge& forge, RunLog* log = nullptr);

}  // namespace oema
