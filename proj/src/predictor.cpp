#include "oema/predictor.hpp"

#include <set>

#include "oema/lenient_json.hpp"
#include "oema/self_annotator.hpp"
#include "oema/text.hpp"

namespace oema {

namespace {

// First '[' that opens an entity-array shape (next token '{' or ']'),
// falling back to the first '[' at all. Keeps prose brackets like
// "[note]" from shadowing the answer.
std::size_t find_entity_array(const std::string& region) {
    for (std::size_t pos = region.find('['); pos != std::string::npos;
         pos = region.find('[', pos + 1)) {
        std::size_t j = pos + 1;
        while (j < region.size() && (region[j] == ' ' || region[j] == '\t' ||
                                     region[j] == '\r' || region[j] == '\n'))
            ++j;
        if (j < region.size() && (region[j] == '{' || region[j] == ']')) return pos;
    }
    return region.find('[');
}

}  // namespace

std::vector<RawMention> parse_llm_entities(const std::string& raw) {
    const std::string region = lenient::strip_code_fences(raw);
    std::vector<lenient::Object> objects;
    if (const std::size_t pos = find_entity_array(region); pos != std::string::npos) {
        objects = lenient::read_object_array_at(region, pos);
    } else if (auto single = lenient::read_object_at(region, 0)) {
        objects.push_back(std::move(*single));
    }
    std::vector<RawMention> pairs;
    for (const auto& obj : objects) {
        for (const auto& entry : obj.entries) {
            const std::string surface = text::trim(entry.key);
            const std::string label = text::trim(entry.value.value);
            if (surface.empty() || label.empty()) continue;
            pairs.push_back({surface, label});
        }
    }
    return pairs;
}

namespace {

std::vector<RawMention> dedupe_pairs(const std::vector<RawMention>& pairs) {
    std::vector<RawMention> out;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : pairs)
        if (seen.insert({p.surface, p.label}).second) out.push_back(p);
    return out;
}

}  // namespace

AnnotatedExample predict(const Sentence& target, const std::vector<AnnotatedExample>& examples,
                         const LabelSet& label_set, const PredictorConfig& config,
                         Gateway& gateway, const PromptForge& forge, RunLog* log,
                         PredictionTrace* trace) {
    ChatRequest request;
    request.user = forge.render_final_prediction(label_set, examples, target.text, config.flags);
    request.temperature = config.temperature;
    request.n_samples = config.n_samples;
    request.max_tokens = config.max_tokens;
    request.tag = template_tag(TemplateKind::final_prediction);

    const std::vector<Completion> completions = gateway.complete(request);

    AnnotatedExample out;
    out.sentence = target;
    out.provenance = Provenance::self_annotated;

    std::vector<RawMention> to_ground;
    if (config.n_samples > 1) {
        std::vector<std::vector<RawMention>> responses;
        responses.reserve(completions.size());
        for (const auto& c : completions)
            responses.push_back(dedupe_pairs(parse_llm_entities(c.text)));
        const VoteOutcome outcome = two_stage_vote(responses, config.n_samples, label_set);
        std::map<std::string, VoteStat> stats;
        for (const auto& r : outcome.retained) {
            to_ground.push_back({r.surface, r.label});
            stats[r.key] = {r.mention_count, r.type_histogram};
        }
        out.vote_stats = std::move(stats);
    } else {
        to_ground = dedupe_pairs(parse_llm_entities(completions.front().text));
        out.vote_stats = std::map<std::string, VoteStat>{};
    }

    const GroundingResult grounded = ground_mentions(target, to_ground, label_set);
    out.mentions = grounded.mentions;

    if (trace) {
        trace->prompt = request.user;
        trace->prompt_hash = text::stable_hash_hex(request.system + "\x1f" + request.user);
        trace->completions.clear();
        for (const auto& c : completions) trace->completions.push_back(c.text);
        trace->parsed = to_ground;
        trace->dropped = grounded.dropped;
    }
    if (log && log->is_open()) {
        nlohmann::ordered_json entry;
        entry["stage"] = "final_prediction";
        entry["sentence_id"] = target.id;
        entry["prompt"] = request.user;
        entry["prompt_hash"] = text::stable_hash_hex(request.system + "\x1f" + request.user);
        nlohmann::ordered_json raw = nlohmann::ordered_json::array();
        for (const auto& c : completions) raw.push_back(c.text);
        entry["completions"] = std::move(raw);
        nlohmann::ordered_json parsed = nlohmann::ordered_json::array();
        for (const auto& p : to_ground)
            parsed.push_back({{"surface", p.surface}, {"label", p.label}});
        entry["parsed"] = std::move(parsed);
        nlohmann::ordered_json drops = nlohmann::ordered_json::array();
        for (const auto& d : grounded.dropped)
            drops.push_back({{"surface", d.surface}, {"label", d.label}, {"reason", d.reason}});
        entry["drops"] = std::move(drops);
        log->write(entry);
    }
    return out;
}

}  // namespace oema
