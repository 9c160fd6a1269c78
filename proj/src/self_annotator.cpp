#include "oema/self_annotator.hpp"

#include <algorithm>
#include <set>

#include "oema/concurrency.hpp"
#include "oema/predictor.hpp"
#include "oema/text.hpp"

namespace oema {

VoteOutcome two_stage_vote(const std::vector<std::vector<RawMention>>& responses,
                           int n_samples, const LabelSet& label_set) {
    if (static_cast<int>(responses.size()) != n_samples)
        throw CorpusError("two_stage_vote: got " + std::to_string(responses.size()) +
                          " responses for n_samples=" + std::to_string(n_samples));

    struct KeyTally {
        int response_count = 0;
        std::map<std::string, int> label_votes;
        // raw form -> (occurrences, first-seen order) for surface emission
        std::map<std::string, std::pair<int, int>> raw_forms;
    };
    std::map<std::string, KeyTally> tallies;
    int seen_order = 0;

    for (const auto& response : responses) {
        std::set<std::string> voted;  // keys this response already voted on
        for (const auto& pair : response) {
            const std::string key = text::normalize_key(pair.surface);
            if (key.empty()) continue;
            auto& tally = tallies[key];
            auto& form = tally.raw_forms[text::trim(pair.surface)];
            if (form.first == 0) form.second = seen_order++;
            form.first += 1;
            if (voted.insert(key).second) {
                tally.response_count += 1;
                tally.label_votes[pair.label] += 1;
            }
        }
    }

    VoteOutcome outcome;
    for (const auto& [key, tally] : tallies) {
        if (2 * tally.response_count <= n_samples) {
            outcome.discarded.push_back({key, tally.response_count});
            continue;
        }
        // Stage 2: majority label; ties by label-set order, unknown labels
        // after known ones in lexicographic order.
        std::string winner;
        int best_votes = -1;
        std::size_t best_rank = 0;
        for (const auto& [label, votes] : tally.label_votes) {
            const std::size_t rank = label_set.rank(label);
            const bool better =
                votes > best_votes ||
                (votes == best_votes &&
                 (rank < best_rank || (rank == best_rank && label < winner)));
            if (better) {
                winner = label;
                best_votes = votes;
                best_rank = rank;
            }
        }
        // Most frequent raw form; ties to the earliest seen.
        std::string surface;
        int best_count = -1;
        int best_order = 0;
        for (const auto& [form, stat] : tally.raw_forms) {
            if (stat.first > best_count ||
                (stat.first == best_count && stat.second < best_order)) {
                surface = form;
                best_count = stat.first;
                best_order = stat.second;
            }
        }
        outcome.retained.push_back(
            {surface, key, winner, tally.response_count, tally.label_votes});
    }
    return outcome;
}

namespace {

std::vector<RawMention> dedupe_pairs(const std::vector<RawMention>& pairs) {
    std::vector<RawMention> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : pairs)
        if (seen.insert({p.surface, p.label}).second) out.push_back(p);
    return out;
}

struct AnnotationOutput {
    AnnotatedExample example;
    nlohmann::ordered_json log_entry;
};

AnnotationOutput annotate_sentence_impl(const Sentence& sentence, const LabelSet& label_set,
                                        const AnnotatorConfig& config, Gateway& gateway,
                                        const PromptForge& forge) {
    ChatRequest request;
    request.user = forge.render_self_annotation(label_set, sentence.text);
    request.temperature = config.temperature;
    request.n_samples = config.n_samples;
    request.max_tokens = config.max_tokens;
    request.tag = template_tag(TemplateKind::self_annotation);

    const std::vector<Completion> completions = gateway.complete(request);

    std::vector<std::vector<RawMention>> responses;
    responses.reserve(completions.size());
    for (const auto& c : completions)
        responses.push_back(dedupe_pairs(parse_llm_entities(c.text)));

    const VoteOutcome outcome = two_stage_vote(responses, config.n_samples, label_set);

    std::vector<RawMention> to_ground;
    to_ground.reserve(outcome.retained.size());
    for (const auto& r : outcome.retained) to_ground.push_back({r.surface, r.label});
    const GroundingResult grounded = ground_mentions(sentence, to_ground, label_set);

    AnnotationOutput out;
    out.example.sentence = sentence;
    out.example.mentions = grounded.mentions;
    out.example.provenance = Provenance::self_annotated;
    std::map<std::string, VoteStat> stats;
    for (const auto& r : outcome.retained)
        stats[r.key] = {r.mention_count, r.type_histogram};
    out.example.vote_stats = std::move(stats);

    nlohmann::ordered_json& entry = out.log_entry;
    entry["stage"] = "self_annotation";
    entry["sentence_id"] = sentence.id;
    entry["prompt"] = request.user;
    entry["prompt_hash"] = text::stable_hash_hex(request.system + "\x1f" + request.user);
    nlohmann::ordered_json raw = nlohmann::ordered_json::array();
    for (const auto& c : completions) raw.push_back(c.text);
    entry["completions"] = std::move(raw);
    nlohmann::ordered_json retained = nlohmann::ordered_json::array();
    for (const auto& r : outcome.retained)
        retained.push_back({{"surface", r.surface},
                            {"label", r.label},
                            {"mention_count", r.mention_count}});
    entry["retained"] = std::move(retained);
    nlohmann::ordered_json discarded = nlohmann::ordered_json::array();
    for (const auto& d : outcome.discarded)
        discarded.push_back({{"key", d.key}, {"mention_count", d.mention_count}});
    entry["discarded"] = std::move(discarded);
    nlohmann::ordered_json drops = nlohmann::ordered_json::array();
    for (const auto& d : grounded.dropped)
        drops.push_back({{"surface", d.surface}, {"label", d.label}, {"reason", d.reason}});
    entry["grounding_drops"] = std::move(drops);
    return out;
}

}  // namespace

AnnotatedExample annotate_sentence(const Sentence& sentence, const LabelSet& label_set,
                                   const AnnotatorConfig& config, Gateway& gateway,
                                   const PromptForge& forge, RunLog* log) {
    AnnotationOutput out = annotate_sentence_impl(sentence, label_set, config, gateway, forge);
    if (log && log->is_open()) log->write(out.log_entry);
    return out.example;
}

Corpus build_self_annotated_corpus(const Corpus& unlabeled, const LabelSet& label_set,
                                   const AnnotatorConfig& config, Gateway& gateway,
                                   const PromptForge& forge, RunLog* log) {
    const Corpus pool = unlabeled.examples.empty()
                            ? unlabeled
                            : take_head(unlabeled, static_cast<std::size_t>(config.pool_size));

    Corpus out;
    out.name = unlabeled.name;
    out.label_set = label_set;

    // Annotate concurrently; assemble results and log entries in input order.
    std::vector<AnnotationOutput> slots(pool.examples.size());
    parallel_for(pool.examples.size(), static_cast<std::size_t>(gateway.config().max_parallel),
                 [&](std::size_t i) {
                     const Sentence& s = pool.examples[i].sentence;
                     try {
                         slots[i] = annotate_sentence_impl(s, label_set, config, gateway, forge);
                     } catch (const std::exception& e) {
                         throw GatewayError("annotation failed for sentence '" + s.id +
                                            "': " + e.what());
                     }
                 });

    out.examples.reserve(slots.size());
    for (auto& slot : slots) {
        if (log && log->is_open()) log->write(slot.log_entry);
        out.examples.push_back(std::move(slot.example));
    }
    return out;
}

}  // namespace oema
