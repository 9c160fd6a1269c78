#pragma once

#include <map>
#include <string>
#include <vector>

#include "oema/corpus.hpp"
#include "oema/llm_gateway.hpp"
#include "oema/prompt_forge.hpp"
#include "oema/run_log.hpp"

namespace oema {

struct AnnotatorConfig {
    int n_samples = 5;
    double temperature = 0.7;
    int pool_size = 500;
    int max_tokens = 1024;
};

struct RetainedVote {
    std::string surface;  // most frequent raw form among the votes
    std::string key;      // normalized surface key
    std::string label;    // stage-2 winner
    int mention_count = 0;
    std::map<std::string, int> type_histogram;

    bool operator==(const RetainedVote&) const = default;
};

struct DiscardedVote {
    std::string key;
    int mention_count = 0;

    bool operator==(const DiscardedVote&) const = default;
};

struct VoteOutcome {
    std::vector<RetainedVote> retained;    // sorted by key
    std::vector<DiscardedVote> discarded;  // sorted by key
};

// Two-stage majority voting over sampled responses. Stage 1 keeps a
// mention key iff it appears in strictly more than half of the responses;
// stage 2 assigns the majority label among the responses proposing it,
// ties broken by label-set order. A surface counts once per response, and
// a response's vote for a key is its first label for that key.
VoteOutcome two_stage_vote(const std::vector<std::vector<RawMention>>& responses,
                           int n_samples, const LabelSet& label_set);

AnnotatedExample annotate_sentence(const Sentence& sentence, const LabelSet& label_set,
                                   const AnnotatorConfig& config, Gateway& gateway,
                                   const PromptForge& forge, RunLog* log = nullptr);

// take_head(pool_size) then annotate every sentence; output order equals
// input order regardless of completion order.
Corpus build_self_annotated_corpus(const Corpus& unlabeled, const LabelSet& label_set,
                                   const AnnotatorConfig& config, Gateway& gateway,
                                   const PromptForge& forge, RunLog* log = nullptr);

}  // namespace oema
