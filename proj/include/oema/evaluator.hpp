#pragma once

#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "oema/corpus.hpp"

namespace oema {

enum class MatchRegime { exact, relaxed };

const char* regime_name(MatchRegime regime);

// Exact: identical boundaries and type.
bool match_exact(const EntityMention& gold, const EntityMention& pred);

// Relaxed: same type with span overlap (half-open intervals; touching
// spans do not overlap).
bool match_relaxed(const EntityMention& gold, const EntityMention& pred);

struct Metrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct TypeMetrics {
    Metrics metrics;
    long gold_count = 0;
    long pred_count = 0;
    long matched_count = 0;
};

struct EvalReport {
    MatchRegime regime = MatchRegime::exact;
    Metrics micro;
    Metrics macro_avg;  // unweighted mean over active labels
    std::vector<std::pair<std::string, TypeMetrics>> per_type;  // label-set order
    long gold_total = 0;
    long pred_total = 0;
    long matched_total = 0;

    nlohmann::ordered_json to_json() const;
    std::string to_text() const;
};

// Micro and per-type precision/recall/F1 under one regime. Matching is
// maximum one-to-one per sentence (each gold and each prediction credited
// at most once). Requires equal sentence id sets.
EvalReport evaluate(const Corpus& gold_corpus, const Corpus& pred_corpus, MatchRegime regime);

// Size of the maximum one-to-one matching between gold and predicted
// mentions of one sentence under the regime's predicate.
long max_matching_count(const std::vector<EntityMention>& gold,
                        const std::vector<EntityMention>& pred, MatchRegime regime);

}  // namespace oema
