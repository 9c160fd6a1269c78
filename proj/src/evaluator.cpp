#include "oema/evaluator.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace oema {

using ordered_json = nlohmann::ordered_json;

const char* regime_name(MatchRegime regime) {
    return regime == MatchRegime::exact ? "exact" : "relaxed";
}

bool match_exact(const EntityMention& gold, const EntityMention& pred) {
    return gold.start == pred.start && gold.end == pred.end && gold.label == pred.label;
}

bool match_relaxed(const EntityMention& gold, const EntityMention& pred) {
    return gold.label == pred.label &&
           std::max(gold.start, pred.start) < std::min(gold.end, pred.end);
}

namespace {

bool matches(const EntityMention& gold, const EntityMention& pred, MatchRegime regime) {
    return regime == MatchRegime::exact ? match_exact(gold, pred) : match_relaxed(gold, pred);
}

// Kuhn's augmenting-path algorithm; mention lists per sentence are small.
class BipartiteMatcher {
public:
    BipartiteMatcher(std::size_t n_gold, std::size_t n_pred)
        : adjacency_(n_gold), match_of_pred_(n_pred, -1) {}

    void add_edge(std::size_t g, std::size_t p) { adjacency_[g].push_back(p); }

    long solve() {
        long matched = 0;
        for (std::size_t g = 0; g < adjacency_.size(); ++g) {
            visited_.assign(match_of_pred_.size(), false);
            if (augment(g)) ++matched;
        }
        return matched;
    }

private:
    bool augment(std::size_t g) {
        for (std::size_t p : adjacency_[g]) {
            if (visited_[p]) continue;
            visited_[p] = true;
            if (match_of_pred_[p] < 0 || augment(static_cast<std::size_t>(match_of_pred_[p]))) {
                match_of_pred_[p] = static_cast<long>(g);
                return true;
            }
        }
        return false;
    }

    std::vector<std::vector<std::size_t>> adjacency_;
    std::vector<long> match_of_pred_;
    std::vector<bool> visited_;
};

Metrics compute_metrics(long matched, long pred, long gold) {
    Metrics m;
    m.precision = pred > 0 ? static_cast<double>(matched) / static_cast<double>(pred) : 0.0;
    m.recall = gold > 0 ? static_cast<double>(matched) / static_cast<double>(gold) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    return m;
}

std::vector<EntityMention> mentions_with_label(const std::vector<EntityMention>& mentions,
                                               const std::string& label) {
    std::vector<EntityMention> out;
    for (const auto& m : mentions)
        if (m.label == label) out.push_back(m);
    return out;
}

}  // namespace

long max_matching_count(const std::vector<EntityMention>& gold,
                        const std::vector<EntityMention>& pred, MatchRegime regime) {
    if (gold.empty() || pred.empty()) return 0;
    BipartiteMatcher matcher(gold.size(), pred.size());
    for (std::size_t g = 0; g < gold.size(); ++g)
        for (std::size_t p = 0; p < pred.size(); ++p)
            if (matches(gold[g], pred[p], regime)) matcher.add_edge(g, p);
    return matcher.solve();
}

EvalReport evaluate(const Corpus& gold_corpus, const Corpus& pred_corpus, MatchRegime regime) {
    std::map<std::string, const AnnotatedExample*> preds;
    for (const auto& ex : pred_corpus.examples) preds[ex.sentence.id] = &ex;
    if (preds.size() != gold_corpus.examples.size() ||
        pred_corpus.examples.size() != gold_corpus.examples.size())
        throw CorpusError("evaluate: sentence id sets differ (gold " +
                          std::to_string(gold_corpus.examples.size()) + ", pred " +
                          std::to_string(pred_corpus.examples.size()) + ")");
    for (const auto& ex : gold_corpus.examples)
        if (!preds.count(ex.sentence.id))
            throw CorpusError("evaluate: prediction corpus is missing sentence '" +
                              ex.sentence.id + "'");

    struct Tally {
        long gold = 0;
        long pred = 0;
        long matched = 0;
    };
    std::map<std::string, Tally> by_label;
    for (const auto& label : gold_corpus.label_set.labels) by_label[label];

    // The match predicates require equal labels, so the matching problem
    // decomposes per label within each sentence.
    for (const auto& gold_ex : gold_corpus.examples) {
        const AnnotatedExample& pred_ex = *preds.at(gold_ex.sentence.id);
        std::set<std::string> labels;
        for (const auto& m : gold_ex.mentions) labels.insert(m.label);
        for (const auto& m : pred_ex.mentions) labels.insert(m.label);
        for (const auto& label : labels) {
            const auto gold_mentions = mentions_with_label(gold_ex.mentions, label);
            const auto pred_mentions = mentions_with_label(pred_ex.mentions, label);
            auto& tally = by_label[label];
            tally.gold += static_cast<long>(gold_mentions.size());
            tally.pred += static_cast<long>(pred_mentions.size());
            tally.matched += max_matching_count(gold_mentions, pred_mentions, regime);
        }
    }

    EvalReport report;
    report.regime = regime;
    double macro_p = 0.0, macro_r = 0.0, macro_f = 0.0;
    long active = 0;
    for (const auto& label : gold_corpus.label_set.labels) {
        const Tally& tally = by_label[label];
        TypeMetrics tm;
        tm.gold_count = tally.gold;
        tm.pred_count = tally.pred;
        tm.matched_count = tally.matched;
        tm.metrics = compute_metrics(tally.matched, tally.pred, tally.gold);
        report.per_type.emplace_back(label, tm);
        report.gold_total += tally.gold;
        report.pred_total += tally.pred;
        report.matched_total += tally.matched;
        if (tally.gold + tally.pred > 0) {
            macro_p += tm.metrics.precision;
            macro_r += tm.metrics.recall;
            macro_f += tm.metrics.f1;
            ++active;
        }
    }
    // Labels outside the configured set still count toward the micro totals.
    for (const auto& [label, tally] : by_label) {
        if (gold_corpus.label_set.contains(label)) continue;
        report.gold_total += tally.gold;
        report.pred_total += tally.pred;
        report.matched_total += tally.matched;
    }
    report.micro = compute_metrics(report.matched_total, report.pred_total, report.gold_total);
    if (active > 0) {
        report.macro_avg.precision = macro_p / static_cast<double>(active);
        report.macro_avg.recall = macro_r / static_cast<double>(active);
        report.macro_avg.f1 = macro_f / static_cast<double>(active);
    }
    return report;
}

namespace {

ordered_json metrics_json(const Metrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

}  // namespace

ordered_json EvalReport::to_json() const {
    ordered_json j;
    j["regime"] = regime_name(regime);
    j["micro"] = metrics_json(micro);
    j["macro"] = metrics_json(macro_avg);
    ordered_json types = ordered_json::object();
    for (const auto& [label, tm] : per_type) {
        ordered_json t = metrics_json(tm.metrics);
        t["gold_count"] = tm.gold_count;
        t["pred_count"] = tm.pred_count;
        t["matched_count"] = tm.matched_count;
        types[label] = std::move(t);
    }
    j["per_type"] = std::move(types);
    j["gold_total"] = gold_total;
    j["pred_total"] = pred_total;
    j["matched_total"] = matched_total;
    return j;
}

std::string EvalReport::to_text() const {
    std::string out;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "regime: %s\n", regime_name(regime));
    out += buf;
    std::snprintf(buf, sizeof(buf), "micro  P=%.4f R=%.4f F1=%.4f  (gold=%ld pred=%ld matched=%ld)\n",
                  micro.precision, micro.recall, micro.f1, gold_total, pred_total, matched_total);
    out += buf;
    std::snprintf(buf, sizeof(buf), "macro  P=%.4f R=%.4f F1=%.4f\n", macro_avg.precision,
                  macro_avg.recall, macro_avg.f1);
    out += buf;
    std::snprintf(buf, sizeof(buf), "%-28s %8s %8s %8s %6s %6s %6s\n", "label", "P", "R", "F1",
                  "gold", "pred", "match");
    out += buf;
    for (const auto& [label, tm] : per_type) {
        std::snprintf(buf, sizeof(buf), "%-28s %8.4f %8.4f %8.4f %6ld %6ld %6ld\n", label.c_str(),
                      tm.metrics.precision, tm.metrics.recall, tm.metrics.f1, tm.gold_count,
                      tm.pred_count, tm.matched_count);
        out += buf;
    }
    return out;
}

}  // namespace oema
