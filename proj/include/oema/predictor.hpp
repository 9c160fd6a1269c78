#pragma once

#include <string>
#include <vector>

#include "oema/corpus.hpp"
#include "oema/llm_gateway.hpp"
#include "oema/prompt_forge.hpp"
#include "oema/run_log.hpp"

namespace oema {

struct PredictorConfig {
    double temperature = 0.0;
    int n_samples = 1;  // > 1 reuses the annotator's voting rule
    int max_tokens = 1024;
    AblationFlags flags;
};

// Total, lenient parse of an LLM entity answer into (surface, label) pairs.
// Handles code fences, prose wrappers, single/curly quotes, unquoted keys,
// multi-entry objects (flattened in key order) and truncated output.
// Never throws; unusable input yields an empty list.
std::vector<RawMention> parse_llm_entities(const std::string& raw);

struct PredictionTrace {
    std::string prompt;
    std::string prompt_hash;
    std::vector<std::string> completions;
    std::vector<RawMention> parsed;
    std::vector<DroppedMention> dropped;
};

AnnotatedExample predict(const Sentence& target, const std::vector<AnnotatedExample>& examples,
                         const LabelSet& label_set, const PredictorConfig& config,
                         Gateway& gateway, const PromptForge& forge, RunLog* log = nullptr,
                         PredictionTrace* trace = nullptr);

}  // namespace oema
