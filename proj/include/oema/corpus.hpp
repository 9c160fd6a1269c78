#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace oema {

class CorpusError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Sentence {
    std::string id;
    std::string text;

    bool operator==(const Sentence&) const = default;
};

// Character offsets are Unicode scalar values, half-open [start, end).
struct EntityMention {
    std::string surface;
    int start = 0;
    int end = 0;
    std::string label;

    bool operator==(const EntityMention&) const = default;
};

struct LabelSet {
    std::string name;
    std::vector<std::string> labels;
    std::map<std::string, std::string> descriptions;

    bool contains(const std::string& label) const;
    // Position in `labels`, or labels.size() when absent. Used as the
    // deterministic tie-break order for vote winners.
    std::size_t rank(const std::string& label) const;
    void validate() const;

    bool operator==(const LabelSet&) const = default;
};

enum class Provenance { gold, self_annotated };

struct VoteStat {
    int mention_count = 0;
    std::map<std::string, int> type_histogram;

    bool operator==(const VoteStat&) const = default;
};

struct AnnotatedExample {
    Sentence sentence;
    std::vector<EntityMention> mentions;
    Provenance provenance = Provenance::gold;
    // Engaged (possibly empty) whenever provenance == self_annotated.
    std::optional<std::map<std::string, VoteStat>> vote_stats;

    bool operator==(const AnnotatedExample&) const = default;
};

struct Corpus {
    std::string name;
    LabelSet label_set;
    std::vector<AnnotatedExample> examples;

    bool operator==(const Corpus&) const = default;
};

struct RawMention {
    std::string surface;
    std::string label;

    bool operator==(const RawMention&) const = default;
};

struct DroppedMention {
    std::string surface;
    std::string label;
    std::string reason;  // "label_not_in_set" | "not_found" | "duplicate_span"

    bool operator==(const DroppedMention&) const = default;
};

struct GroundingResult {
    std::vector<EntityMention> mentions;  // sorted by (start, end, label)
    std::vector<DroppedMention> dropped;
};

// Maps string/label pairs emitted by an LLM onto character spans.
// Repeated identical surfaces ground to successive non-overlapping
// occurrences; exact match first, then a case-insensitive fallback that
// stores the sentence's own casing. Ungroundable pairs are reported in
// `dropped`, never fatal.
GroundingResult ground_mentions(const Sentence& sentence,
                                const std::vector<RawMention>& raw,
                                const LabelSet& label_set);

Corpus load_corpus(const std::filesystem::path& path, const LabelSet& label_set);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);

// Serialization of one example as a single JSONL line (stable field order).
std::string example_to_jsonl(const AnnotatedExample& ex);

Corpus take_head(const Corpus& corpus, std::size_t n);

}  // namespace oema
