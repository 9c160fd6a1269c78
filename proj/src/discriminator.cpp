#include "oema/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "json.hpp"
#include "oema/concurrency.hpp"
#include "oema/lenient_json.hpp"
#include "oema/text.hpp"

namespace oema {

using ordered_json = nlohmann::ordered_json;

void DiscriminatorConfig::validate() const {
    if (K < 1) throw CorpusError("discriminator K must be >= 1");
    if (k < 1) throw CorpusError("discriminator k must be >= 1");
    if (k > K) throw CorpusError("discriminator requires k <= K (got k=" + std::to_string(k) +
                                 ", K=" + std::to_string(K) + ")");
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
    if (a.values.size() != b.values.size())
        throw CorpusError("cosine_similarity: dimension mismatch (" +
                          std::to_string(a.values.size()) + " vs " +
                          std::to_string(b.values.size()) + ")");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        dot += a.values[i] * b.values[i];
        na += a.values[i] * a.values[i];
        nb += b.values[i] * b.values[i];
    }
    if (na == 0.0 || nb == 0.0) throw CorpusError("cosine_similarity: zero vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

VectorIndex build_index(const Corpus& corpus, Gateway& gateway, const std::string& embed_model) {
    if (corpus.examples.empty()) throw CorpusError("cannot index an empty corpus");
    std::vector<std::string> texts;
    texts.reserve(corpus.examples.size());
    for (const auto& ex : corpus.examples) texts.push_back(ex.sentence.text);
    const std::vector<EmbeddingVector> vectors = gateway.embed(embed_model, texts);

    VectorIndex index;
    index.model = vectors.front().model;
    index.entries.reserve(corpus.examples.size());
    for (std::size_t i = 0; i < corpus.examples.size(); ++i)
        index.entries.push_back({corpus.examples[i].sentence.id, vectors[i]});
    return index;
}

void save_index(const VectorIndex& index, const std::filesystem::path& path) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CorpusError("cannot write index file: " + path.string());
    for (const auto& entry : index.entries) {
        ordered_json j;
        j["id"] = entry.sentence_id;
        j["model"] = entry.vector.model;
        j["values"] = entry.vector.values;
        out << j.dump() << '\n';
    }
}

VectorIndex load_index(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open index file: " + path.string());
    VectorIndex index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            VectorIndex::Entry entry;
            entry.sentence_id = j.at("id").get<std::string>();
            entry.vector.model = j.at("model").get<std::string>();
            entry.vector.values = j.at("values").get<std::vector<double>>();
            entry.vector.source_text_hash.clear();
            index.entries.push_back(std::move(entry));
        } catch (const std::exception& e) {
            throw CorpusError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!index.entries.empty()) index.model = index.entries.front().vector.model;
    return index;
}

std::vector<KnnHit> retrieve_knn(const VectorIndex& index, const EmbeddingVector& query, int K) {
    if (K < 1) throw CorpusError("retrieve_knn requires K >= 1");
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(index.entries.size());
    for (std::size_t i = 0; i < index.entries.size(); ++i)
        scored.emplace_back(cosine_similarity(index.entries[i].vector, query), i);
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(K), scored.size());
    std::vector<KnnHit> hits;
    hits.reserve(count);
    for (std::size_t r = 0; r < count; ++r)
        hits.push_back({index.entries[scored[r].second].sentence_id, scored[r].first,
                        static_cast<int>(r + 1)});
    return hits;
}

OntologyExtraction parse_ontology_answer(const std::string& raw) {
    OntologyExtraction result;
    result.raw = raw;
    const std::string region = lenient::strip_code_fences(raw);
    const auto object = lenient::read_object_at(region, 0);
    if (!object) return result;
    for (const auto& entry : object->entries) {
        std::string key = text::trim(entry.key);
        if (!key.empty() && key.front() == '(') {
            const std::size_t close = key.rfind(')');
            key = key.substr(1, close == std::string::npos ? std::string::npos : close - 1);
        }
        OntologyPair pair;
        const std::size_t comma = key.find(',');
        if (comma == std::string::npos) {
            pair.category = text::trim(key);
        } else {
            pair.category = text::trim(key.substr(0, comma));
            pair.concept_name = text::trim(key.substr(comma + 1));
        }
        pair.fragment = entry.value.value;
        result.pairs.push_back(std::move(pair));
    }
    return result;
}

OntologyExtraction extract_ontology(const std::string& sentence_text, Gateway& gateway,
                                    const PromptForge& forge,
                                    const std::vector<OntologyExemplar>& exemplars,
                                    double temperature, int max_tokens) {
    ChatRequest request;
    request.user = forge.render_ontology_extraction(exemplars, sentence_text);
    request.temperature = temperature;
    request.max_tokens = max_tokens;
    request.n_samples = 1;
    request.tag = template_tag(TemplateKind::ontology_extraction);
    const auto completions = gateway.complete(request);
    return parse_ontology_answer(completions.front().text);
}

namespace {

struct ParsedScore {
    int score = 0;
    std::string reason;
};

int round_and_clamp_score(double value) {
    int score = static_cast<int>(std::floor(value + 0.5));
    if (score < 1) score = 1;
    if (score > 5) score = 5;
    return score;
}

// idx -> (score, reason); first occurrence of an idx wins.
std::map<int, ParsedScore> parse_score_answer(const std::string& raw) {
    std::map<int, ParsedScore> scores;
    const std::string region = lenient::strip_code_fences(raw);
    for (const auto& obj : lenient::read_object_array_at(region, 0)) {
        std::optional<int> idx;
        std::optional<double> score;
        std::string reason;
        for (const auto& entry : obj.entries) {
            const std::string key = text::trim(entry.key);
            const std::string value = text::trim(entry.value.value);
            if (key == "idx") {
                try {
                    idx = std::stoi(value);
                } catch (...) {
                }
            } else if (key == "score") {
                try {
                    std::size_t used = 0;
                    const double parsed = std::stod(value, &used);
                    if (used > 0) score = parsed;
                } catch (...) {
                }
            } else if (key == "reason") {
                reason = value;
            }
        }
        if (idx && score && !scores.count(*idx))
            scores[*idx] = {round_and_clamp_score(*score), reason};
    }
    return scores;
}

}  // namespace

std::vector<ScoredCandidate> score_candidates(const Sentence& target,
                                              const OntologyExtraction& target_ontology,
                                              const std::vector<CandidateInput>& candidates,
                                              const LabelSet& label_set, Gateway& gateway,
                                              const PromptForge& forge,
                                              const DiscriminatorConfig& config, RunLog* log) {
    if (candidates.empty()) throw CorpusError("score_candidates requires candidates");

    ScoringTarget scoring_target{target.text, text::trim(target_ontology.raw)};
    std::vector<ScoringCandidate> prompt_candidates;
    prompt_candidates.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
        prompt_candidates.push_back({static_cast<int>(i), candidates[i].example.sentence.text,
                                     text::trim(candidates[i].ontology.raw)});

    // One prompt carrying all candidates by default; chunked when the
    // batch-size escape hatch is set. Indices stay global either way.
    const std::size_t batch = config.score_batch_size > 0
                                  ? static_cast<std::size_t>(config.score_batch_size)
                                  : prompt_candidates.size();
    std::map<int, ParsedScore> scores;
    for (std::size_t begin = 0; begin < prompt_candidates.size(); begin += batch) {
        const std::size_t end = std::min(begin + batch, prompt_candidates.size());
        const std::vector<ScoringCandidate> chunk(
            prompt_candidates.begin() + static_cast<long>(begin),
            prompt_candidates.begin() + static_cast<long>(end));
        ChatRequest request;
        request.user = forge.render_example_scoring(label_set, scoring_target, chunk);
        request.temperature = config.scoring_temperature;
        request.max_tokens = config.max_tokens;
        request.n_samples = 1;
        request.tag = template_tag(TemplateKind::example_scoring);
        const auto completions = gateway.complete(request);
        const std::string answer = completions.front().text;

        const std::map<int, ParsedScore> parsed = parse_score_answer(answer);
        if (parsed.empty() && log && log->is_open()) {
            log->write({{"stage", "example_scoring"},
                        {"sentence_id", target.id},
                        {"event", "unparseable_scores"},
                        {"answer", answer}});
        }
        scores.insert(parsed.begin(), parsed.end());
    }

    std::vector<ScoredCandidate> out;
    out.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        ScoredCandidate sc;
        sc.example = candidates[i].example;
        sc.similarity = candidates[i].similarity;
        sc.similarity_rank = candidates[i].similarity_rank;
        sc.ontology = candidates[i].ontology;
        const auto it = scores.find(static_cast<int>(i));
        if (it != scores.end()) {
            sc.helpfulness = it->second.score;
            sc.reason = it->second.reason;
        } else {
            sc.helpfulness = 1;  // fail-safe: never promote an unscored example
        }
        out.push_back(std::move(sc));
    }
    return out;
}

std::vector<AnnotatedExample> select_examples(const std::vector<ScoredCandidate>& scored, int k) {
    if (k < 1) throw CorpusError("select_examples requires k >= 1");
    std::vector<const ScoredCandidate*> order;
    order.reserve(scored.size());
    for (const auto& sc : scored) order.push_back(&sc);
    std::stable_sort(order.begin(), order.end(), [](const auto* a, const auto* b) {
        if (a->helpfulness != b->helpfulness) return a->helpfulness > b->helpfulness;
        return a->similarity_rank < b->similarity_rank;
    });
    const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    std::vector<AnnotatedExample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(order[i]->example);
    return out;
}

DiscriminationResult discriminate(const Sentence& target, const Corpus& corpus,
                                  const VectorIndex& index, const DiscriminatorConfig& config,
                                  Gateway& chat_gateway, Gateway& embed_gateway,
                                  const PromptForge& forge, RunLog* log) {
    config.validate();
    if (index.entries.size() != corpus.examples.size())
        throw CorpusError("index size " + std::to_string(index.entries.size()) +
                          " does not match corpus size " +
                          std::to_string(corpus.examples.size()));

    std::map<std::string, const AnnotatedExample*> by_id;
    for (const auto& ex : corpus.examples) by_id[ex.sentence.id] = &ex;

    const EmbeddingVector query =
        embed_gateway.embed(config.embed_model, {target.text}).front();
    const std::vector<KnnHit> hits = retrieve_knn(index, query, config.K);

    // Ontology extraction over the K candidates plus the target.
    std::vector<CandidateInput> candidates(hits.size());
    OntologyExtraction target_ontology;
    parallel_for(hits.size() + 1,
                 static_cast<std::size_t>(chat_gateway.config().max_parallel),
                 [&](std::size_t i) {
                     if (i == hits.size()) {
                         target_ontology = extract_ontology(
                             target.text, chat_gateway, forge, config.extra_exemplars,
                             config.ontology_temperature, config.max_tokens);
                         return;
                     }
                     const auto it = by_id.find(hits[i].sentence_id);
                     if (it == by_id.end())
                         throw CorpusError("index refers to unknown sentence id '" +
                                           hits[i].sentence_id + "'");
                     candidates[i].example = *it->second;
                     candidates[i].similarity = hits[i].similarity;
                     candidates[i].similarity_rank = hits[i].rank;
                     candidates[i].ontology = extract_ontology(
                         it->second->sentence.text, chat_gateway, forge,
                         config.extra_exemplars, config.ontology_temperature,
                         config.max_tokens);
                 });

    DiscriminationResult result;
    result.hits = hits;
    result.target_ontology = target_ontology;
    result.scored = score_candidates(target, target_ontology, candidates, corpus.label_set,
                                     chat_gateway, forge, config, log);
    result.selected = select_examples(result.scored, config.k);

    if (log && log->is_open()) {
        ordered_json entry;
        entry["stage"] = "discrimination";
        entry["sentence_id"] = target.id;
        entry["target_ontology"] = text::trim(target_ontology.raw);
        ordered_json jc = ordered_json::array();
        for (const auto& sc : result.scored)
            jc.push_back({{"id", sc.example.sentence.id},
                          {"similarity", sc.similarity},
                          {"rank", sc.similarity_rank},
                          {"helpfulness", sc.helpfulness},
                          {"reason", sc.reason},
                          {"ontology", text::trim(sc.ontology.raw)}});
        entry["candidates"] = std::move(jc);
        ordered_json sel = ordered_json::array();
        for (const auto& ex : result.selected) sel.push_back(ex.sentence.id);
        entry["selected"] = std::move(sel);
        log->write(entry);
    }
    return result;
}

}  // namespace oema
