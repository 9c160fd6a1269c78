#include "oema/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "oema/text.hpp"

namespace oema {

using ordered_json = nlohmann::ordered_json;

bool LabelSet::contains(const std::string& label) const {
    return std::find(labels.begin(), labels.end(), label) != labels.end();
}

std::size_t LabelSet::rank(const std::string& label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    return static_cast<std::size_t>(it - labels.begin());
}

void LabelSet::validate() const {
    if (labels.empty()) throw CorpusError("label set '" + name + "' has no labels");
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (!seen.insert(l).second)
            throw CorpusError("label set '" + name + "' has duplicate label '" + l + "'");
    }
    for (const auto& [key, _] : descriptions) {
        if (!contains(key))
            throw CorpusError("description key '" + key + "' is not a label of set '" + name + "'");
    }
}

namespace {

// Leftmost occurrence of needle in hay at position >= from, or npos.
std::size_t find_cp(const std::u32string& hay, const std::u32string& needle, std::size_t from) {
    if (needle.empty() || needle.size() > hay.size()) return std::u32string::npos;
    for (std::size_t i = from; i + needle.size() <= hay.size(); ++i) {
        if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<long>(i)))
            return i;
    }
    return std::u32string::npos;
}

}  // namespace

GroundingResult ground_mentions(const Sentence& sentence,
                                const std::vector<RawMention>& raw,
                                const LabelSet& label_set) {
    GroundingResult result;
    const std::u32string hay = text::decode_utf8(sentence.text);
    const std::u32string folded_hay = text::fold(hay);

    // Per identical surface string: first unused position for the next repeat.
    std::map<std::string, std::size_t> cursors;

    for (const auto& pair : raw) {
        if (!label_set.contains(pair.label)) {
            result.dropped.push_back({pair.surface, pair.label, "label_not_in_set"});
            continue;
        }
        const std::u32string needle = text::decode_utf8(pair.surface);
        if (needle.empty()) {
            result.dropped.push_back({pair.surface, pair.label, "not_found"});
            continue;
        }
        const std::size_t from = cursors.count(pair.surface) ? cursors[pair.surface] : 0;
        std::size_t pos = find_cp(hay, needle, from);
        if (pos == std::u32string::npos) {
            pos = find_cp(folded_hay, text::fold(needle), from);
        }
        if (pos == std::u32string::npos) {
            result.dropped.push_back({pair.surface, pair.label, "not_found"});
            continue;
        }
        const std::size_t end = pos + needle.size();
        cursors[pair.surface] = end;
        EntityMention m;
        m.surface = text::encode_utf8(std::u32string_view(hay).substr(pos, needle.size()));
        m.start = static_cast<int>(pos);
        m.end = static_cast<int>(end);
        m.label = pair.label;
        result.mentions.push_back(std::move(m));
    }

    std::stable_sort(result.mentions.begin(), result.mentions.end(),
                     [](const EntityMention& a, const EntityMention& b) {
                         return std::tie(a.start, a.end, a.label) <
                                std::tie(b.start, b.end, b.label);
                     });
    // The invariant forbids two mentions with identical (start, end, label).
    std::vector<EntityMention> unique;
    unique.reserve(result.mentions.size());
    for (auto& m : result.mentions) {
        if (!unique.empty() && unique.back().start == m.start &&
            unique.back().end == m.end && unique.back().label == m.label) {
            result.dropped.push_back({m.surface, m.label, "duplicate_span"});
            continue;
        }
        unique.push_back(std::move(m));
    }
    result.mentions = std::move(unique);
    return result;
}

namespace {

const char* provenance_name(Provenance p) {
    return p == Provenance::gold ? "gold" : "self_annotated";
}

Provenance provenance_from(const std::string& s, const std::string& where) {
    if (s == "gold") return Provenance::gold;
    if (s == "self_annotated") return Provenance::self_annotated;
    throw CorpusError("unknown provenance '" + s + "' in " + where);
}

void validate_example(const AnnotatedExample& ex, const LabelSet& label_set) {
    if (text::trim(ex.sentence.text).empty())
        throw CorpusError("sentence '" + ex.sentence.id + "' has empty text");
    const std::size_t len = text::cp_length(ex.sentence.text);
    std::set<std::tuple<int, int, std::string>> spans;
    for (const auto& m : ex.mentions) {
        if (!(0 <= m.start && m.start < m.end && static_cast<std::size_t>(m.end) <= len))
            throw CorpusError("sentence '" + ex.sentence.id + "': span [" +
                              std::to_string(m.start) + "," + std::to_string(m.end) +
                              ") out of range");
        if (text::cp_substr(ex.sentence.text, static_cast<std::size_t>(m.start),
                            static_cast<std::size_t>(m.end)) != m.surface)
            throw CorpusError("sentence '" + ex.sentence.id + "': surface '" + m.surface +
                              "' does not match text at [" + std::to_string(m.start) + "," +
                              std::to_string(m.end) + ")");
        if (!label_set.contains(m.label))
            throw CorpusError("sentence '" + ex.sentence.id + "': label '" + m.label +
                              "' is not in label set '" + label_set.name + "'");
        if (!spans.insert({m.start, m.end, m.label}).second)
            throw CorpusError("sentence '" + ex.sentence.id + "': duplicate mention [" +
                              std::to_string(m.start) + "," + std::to_string(m.end) + "," +
                              m.label + ")");
    }
}

}  // namespace

std::string example_to_jsonl(const AnnotatedExample& ex) {
    ordered_json j;
    j["id"] = ex.sentence.id;
    j["text"] = ex.sentence.text;
    ordered_json mentions = ordered_json::array();
    for (const auto& m : ex.mentions) {
        ordered_json jm;
        jm["surface"] = m.surface;
        jm["start"] = m.start;
        jm["end"] = m.end;
        jm["label"] = m.label;
        mentions.push_back(std::move(jm));
    }
    j["mentions"] = std::move(mentions);
    j["provenance"] = provenance_name(ex.provenance);
    if (ex.provenance == Provenance::self_annotated) {
        ordered_json vs = ordered_json::object();
        if (ex.vote_stats) {
            for (const auto& [key, stat] : *ex.vote_stats) {
                ordered_json js;
                js["mention_count"] = stat.mention_count;
                ordered_json hist = ordered_json::object();
                for (const auto& [label, count] : stat.type_histogram) hist[label] = count;
                js["type_histogram"] = std::move(hist);
                vs[key] = std::move(js);
            }
        }
        j["vote_stats"] = std::move(vs);
    }
    return j.dump();
}

Corpus load_corpus(const std::filesystem::path& path, const LabelSet& label_set) {
    label_set.validate();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open corpus file: " + path.string());

    Corpus corpus;
    corpus.name = path.stem().string();
    corpus.label_set = label_set;

    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim(line).empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw CorpusError(path.string() + ":" + std::to_string(line_no) +
                              ": malformed JSON line (" + e.what() + ")");
        }
        const std::string where = path.string() + ":" + std::to_string(line_no);
        try {
            AnnotatedExample ex;
            ex.sentence.id = j.at("id").get<std::string>();
            ex.sentence.text = j.at("text").get<std::string>();
            if (j.contains("mentions")) {
                for (const auto& jm : j.at("mentions")) {
                    EntityMention m;
                    m.surface = jm.at("surface").get<std::string>();
                    m.start = jm.at("start").get<int>();
                    m.end = jm.at("end").get<int>();
                    m.label = jm.at("label").get<std::string>();
                    ex.mentions.push_back(std::move(m));
                }
            }
            ex.provenance = j.contains("provenance")
                                ? provenance_from(j.at("provenance").get<std::string>(), where)
                                : Provenance::gold;
            if (ex.provenance == Provenance::self_annotated) {
                std::map<std::string, VoteStat> stats;
                if (j.contains("vote_stats")) {
                    for (const auto& [key, js] : j.at("vote_stats").items()) {
                        VoteStat stat;
                        stat.mention_count = js.at("mention_count").get<int>();
                        if (js.contains("type_histogram")) {
                            for (const auto& [label, count] : js.at("type_histogram").items())
                                stat.type_histogram[label] = count.get<int>();
                        }
                        stats[key] = std::move(stat);
                    }
                }
                ex.vote_stats = std::move(stats);
            }
            validate_example(ex, label_set);
            if (!ids.insert(ex.sentence.id).second)
                throw CorpusError("duplicate sentence id '" + ex.sentence.id + "'");
            corpus.examples.push_back(std::move(ex));
        } catch (const CorpusError&) {
            throw;
        } catch (const std::exception& e) {
            throw CorpusError(where + ": " + e.what());
        }
    }
    return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError("cannot write corpus file: " + path.string());
    for (const auto& ex : corpus.examples) {
        out << example_to_jsonl(ex) << '\n';
    }
    out.flush();
    if (!out) throw CorpusError("I/O failure while writing " + path.string());
}

Corpus take_head(const Corpus& corpus, std::size_t n) {
    if (n < 1) throw CorpusError("take_head requires n >= 1");
    Corpus head;
    head.name = corpus.name;
    head.label_set = corpus.label_set;
    const std::size_t count = std::min(n, corpus.examples.size());
    head.examples.assign(corpus.examples.begin(),
                         corpus.examples.begin() + static_cast<long>(count));
    return head;
}

}  // namespace oema
