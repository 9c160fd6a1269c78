#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include "doctest.h"
#include "oema/discriminator.hpp"

using namespace oema;

namespace {

LabelSet mtsamples_labels() {
    return {"MTSamples", {"Medical problem", "Treatment", "Test"}, {}};
}

EmbeddingVector vec(std::vector<double> values) {
    return {std::move(values), "m", ""};
}

}  // namespace

TEST_CASE("cosine similarity basics") {
    CHECK(cosine_similarity(vec({1, 2, 3}), vec({1, 2, 3})) == doctest::Approx(1.0));
    CHECK(cosine_similarity(vec({1, 0}), vec({0, 1})) == doctest::Approx(0.0));
    CHECK(cosine_similarity(vec({1, 1}), vec({1, 0})) ==
          doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
    CHECK_THROWS_AS(cosine_similarity(vec({1, 0}), vec({1, 0, 0})), CorpusError);
    CHECK_THROWS_AS(cosine_similarity(vec({0, 0}), vec({1, 0})), CorpusError);
}

TEST_CASE("build_index embeds in corpus order and caches") {
    const LabelSet labels = mtsamples_labels();
    Corpus corpus;
    corpus.label_set = labels;
    for (int i = 0; i < 6; ++i)
        corpus.examples.push_back(
            {{"s" + std::to_string(i), "text " + std::to_string(i)}, {}, Provenance::gold,
             std::nullopt});

    const auto cache = std::filesystem::temp_directory_path() / "oema_index_cache";
    std::filesystem::remove_all(cache);
    BackendConfig backend;
    backend.cache_dir = cache;
    backend.embed_fallback_dim = 4;
    Gateway gateway(backend);

    const VectorIndex index = build_index(corpus, gateway, "emb-model");
    REQUIRE(index.entries.size() == 6);
    for (int i = 0; i < 6; ++i)
        CHECK(index.entries[static_cast<std::size_t>(i)].sentence_id == "s" + std::to_string(i));
    const long calls = gateway.stats().backend_calls.load();

    const VectorIndex rebuilt = build_index(corpus, gateway, "emb-model");
    CHECK(gateway.stats().backend_calls.load() == calls);
    for (std::size_t i = 0; i < 6; ++i)
        CHECK(rebuilt.entries[i].vector.values == index.entries[i].vector.values);

    Corpus empty;
    empty.label_set = labels;
    CHECK_THROWS_AS(build_index(empty, gateway, "emb-model"), CorpusError);
}

TEST_CASE("index survives a save/load round trip") {
    VectorIndex index;
    index.model = "m";
    index.entries.push_back({"a", vec({0.25, -1.5})});
    index.entries.push_back({"b", vec({0.125, 3.0})});
    const auto path =
        std::filesystem::temp_directory_path() / "oema_index_tests" / "index.jsonl";
    save_index(index, path);
    const VectorIndex loaded = load_index(path);
    REQUIRE(loaded.entries.size() == 2);
    CHECK(loaded.entries[0].sentence_id == "a");
    CHECK(loaded.entries[0].vector.values == index.entries[0].vector.values);
    CHECK(loaded.model == "m");
}

TEST_CASE("retrieve_knn: clamp, identity hit and tie order") {
    VectorIndex index;
    index.model = "m";
    index.entries.push_back({"a", vec({1, 0})});
    index.entries.push_back({"b", vec({0, 1})});
    index.entries.push_back({"c", vec({1, 0})});  // duplicate of a

    const auto clamped = retrieve_knn(index, vec({1, 0}), 10);
    REQUIRE(clamped.size() == 3);
    CHECK(clamped[0].sentence_id == "a");  // insertion order breaks the tie
    CHECK(clamped[0].similarity == doctest::Approx(1.0));
    CHECK(clamped[0].rank == 1);
    CHECK(clamped[1].sentence_id == "c");
    CHECK(clamped[2].sentence_id == "b");
    CHECK_THROWS_AS(retrieve_knn(index, vec({1, 0}), 0), CorpusError);
}

TEST_CASE("retrieve_knn equals the exhaustive scan on random instances") {
    std::mt19937 rng(23);
    for (int iter = 0; iter < 60; ++iter) {
        const int dim = std::uniform_int_distribution<int>(4, 64)(rng);
        const int size = std::uniform_int_distribution<int>(5, 200)(rng);
        const int K = std::uniform_int_distribution<int>(1, size)(rng);
        std::uniform_real_distribution<double> value(-1.0, 1.0);

        VectorIndex index;
        index.model = "m";
        for (int i = 0; i < size; ++i) {
            std::vector<double> values(static_cast<std::size_t>(dim));
            double norm = 0;
            do {
                norm = 0;
                for (auto& x : values) {
                    x = value(rng);
                    norm += x * x;
                }
            } while (norm == 0);
            index.entries.push_back({"s" + std::to_string(i), vec(std::move(values))});
        }
        std::vector<double> query_values(static_cast<std::size_t>(dim));
        for (auto& x : query_values) x = value(rng);
        query_values[0] += 1e-3;  // avoid the zero vector
        const EmbeddingVector query = vec(query_values);

        const auto hits = retrieve_knn(index, query, K);
        REQUIRE(static_cast<int>(hits.size()) == K);

        std::vector<std::pair<double, std::size_t>> brute;
        for (std::size_t i = 0; i < index.entries.size(); ++i)
            brute.emplace_back(cosine_similarity(index.entries[i].vector, query), i);
        std::stable_sort(brute.begin(), brute.end(),
                         [](const auto& a, const auto& b) { return a.first > b.first; });
        for (int r = 0; r < K; ++r) {
            CHECK(hits[static_cast<std::size_t>(r)].sentence_id ==
                  index.entries[brute[static_cast<std::size_t>(r)].second].sentence_id);
            CHECK(hits[static_cast<std::size_t>(r)].similarity ==
                  doctest::Approx(brute[static_cast<std::size_t>(r)].first).epsilon(1e-9));
        }
    }
}

TEST_CASE("parse_ontology_answer reads the demonstration answer shape in order") {
    const auto result = parse_ontology_answer(
        R"x({"(Clinical finding, Pustule)": "pimple", "(Body structure, Buttock)": "buttock"})x");
    REQUIRE(result.pairs.size() == 2);
    CHECK(result.pairs[0].category == "Clinical finding");
    CHECK(result.pairs[0].concept_name == "Pustule");
    CHECK(result.pairs[0].fragment == "pimple");
    CHECK(result.pairs[1].category == "Body structure");
    CHECK(result.pairs[1].concept_name == "Buttock");
}

TEST_CASE("parse_ontology_answer: prose yields empty pairs with raw preserved") {
    const std::string prose = "I could not find any ontologies, sorry.";
    const auto result = parse_ontology_answer(prose);
    CHECK(result.pairs.empty());
    CHECK(result.raw == prose);
}

TEST_CASE("parse_ontology_answer normalizes single quotes") {
    const auto result = parse_ontology_answer(
        "{'(Clinical finding, Pustule)': 'pimple', '(Body structure, Buttock)': 'buttock'}");
    REQUIRE(result.pairs.size() == 2);
    CHECK(result.pairs[0].concept_name == "Pustule");
    CHECK(result.pairs[1].fragment == "buttock");
}

namespace {

CandidateInput candidate(const std::string& id, const std::string& text, double sim, int rank) {
    CandidateInput c;
    c.example.sentence = {id, text};
    c.similarity = sim;
    c.similarity_rank = rank;
    c.ontology.raw = "{}";
    return c;
}

}  // namespace

TEST_CASE("score_candidates maps answered scores, clamps and defaults") {
    const LabelSet labels = mtsamples_labels();
    const Sentence target{"t", "target sentence"};
    OntologyExtraction target_ontology;
    target_ontology.raw = "{}";
    const std::vector<CandidateInput> candidates{candidate("a", "first", 0.9, 1),
                                                 candidate("b", "second", 0.8, 2),
                                                 candidate("c", "third", 0.7, 3)};
    PromptForge forge;
    DiscriminatorConfig config;

    SUBCASE("echoed scores preserved in order") {
        Gateway gateway(BackendConfig{});
        gateway.register_fixture(
            "example_scoring", "'sentence': 'target sentence'",
            {R"([{"idx": "0", "score": "5", "reason": "r0"}, {"idx": "1", "score": "3", "reason": "r1"}, {"idx": "2", "score": "1", "reason": "r2"}])"});
        const auto scored = score_candidates(target, target_ontology, candidates, labels,
                                             gateway, forge, config);
        REQUIRE(scored.size() == 3);
        CHECK(scored[0].helpfulness == 5);
        CHECK(scored[1].helpfulness == 3);
        CHECK(scored[2].helpfulness == 1);
        CHECK(scored[0].reason == "r0");
        CHECK(scored[0].example.sentence.id == "a");
    }

    SUBCASE("out-of-range and fractional scores clamp after rounding") {
        Gateway gateway(BackendConfig{});
        gateway.register_fixture(
            "example_scoring", "'sentence': 'target sentence'",
            {R"([{"idx": 0, "score": 7}, {"idx": 1, "score": 4.5}, {"idx": 2, "score": -2}])"});
        const auto scored = score_candidates(target, target_ontology, candidates, labels,
                                             gateway, forge, config);
        CHECK(scored[0].helpfulness == 5);
        CHECK(scored[1].helpfulness == 5);  // 4.5 rounds half-up
        CHECK(scored[2].helpfulness == 1);
    }

    SUBCASE("candidates missing from the answer get the default score 1") {
        Gateway gateway(BackendConfig{});
        gateway.register_fixture(
            "example_scoring", "'sentence': 'target sentence'",
            {R"([{"idx": 0, "score": 4}, {"idx": 1, "score": 2}])"});
        const auto scored = score_candidates(target, target_ontology, candidates, labels,
                                             gateway, forge, config);
        CHECK(scored[0].helpfulness == 4);
        CHECK(scored[1].helpfulness == 2);
        CHECK(scored[2].helpfulness == 1);
    }

    SUBCASE("a fully unparseable answer defaults every candidate to 1") {
        Gateway gateway(BackendConfig{});
        gateway.register_fixture("example_scoring", "'sentence': 'target sentence'",
                                 {"cannot comply"});
        const auto scored = score_candidates(target, target_ontology, candidates, labels,
                                             gateway, forge, config);
        REQUIRE(scored.size() == 3);
        for (const auto& sc : scored) CHECK(sc.helpfulness == 1);
    }

    SUBCASE("batch splitting keeps global indices and merges the chunks") {
        Gateway gateway(BackendConfig{});
        // Chunks of 2: first prompt lists idx 0 and 1, second lists idx 2.
        gateway.register_fixture("example_scoring", "{'idx': '0'",
                                 {R"([{"idx": 0, "score": 4}, {"idx": 1, "score": 2}])"});
        gateway.register_fixture("example_scoring", "{'idx': '2'",
                                 {R"([{"idx": 2, "score": 5}])"});
        DiscriminatorConfig batched = config;
        batched.score_batch_size = 2;
        const auto scored = score_candidates(target, target_ontology, candidates, labels,
                                             gateway, forge, batched);
        REQUIRE(scored.size() == 3);
        CHECK(scored[0].helpfulness == 4);
        CHECK(scored[1].helpfulness == 2);
        CHECK(scored[2].helpfulness == 5);
        CHECK(gateway.stats().backend_calls.load() == 2);
    }
}

TEST_CASE("select_examples sorts by score then nearness and clamps k") {
    std::vector<ScoredCandidate> scored(4);
    for (int i = 0; i < 4; ++i) {
        scored[static_cast<std::size_t>(i)].example.sentence = {"s" + std::to_string(i), "t"};
        scored[static_cast<std::size_t>(i)].similarity_rank = i + 1;
    }
    scored[0].helpfulness = 3;
    scored[1].helpfulness = 5;
    scored[2].helpfulness = 5;
    scored[3].helpfulness = 1;

    const auto top3 = select_examples(scored, 3);
    REQUIRE(top3.size() == 3);
    CHECK(top3[0].sentence.id == "s1");  // score 5, rank 2
    CHECK(top3[1].sentence.id == "s2");  // score 5, rank 3
    CHECK(top3[2].sentence.id == "s0");  // score 3

    // All scores equal degenerates to pure KNN order.
    for (auto& sc : scored) sc.helpfulness = 2;
    const auto knn_order = select_examples(scored, 2);
    CHECK(knn_order[0].sentence.id == "s0");
    CHECK(knn_order[1].sentence.id == "s1");

    CHECK(select_examples(scored, 10).size() == 4);
    CHECK(select_examples(scored, 1).size() == 1);
    CHECK_THROWS_AS(select_examples(scored, 0), CorpusError);
}

namespace {

// Small corpus + scripted gateways wired for a full discriminate() run.
struct DiscriminateFixture {
    LabelSet labels = mtsamples_labels();
    Corpus corpus;
    VectorIndex index;
    BackendConfig chat_backend;
    BackendConfig embed_backend;

    DiscriminateFixture() {
        corpus.label_set = labels;
        const std::vector<std::string> texts{
            "Chest pain after exercise.",     "An MRI of the brain was ordered.",
            "Aspirin relieved the headache.", "The biopsy confirmed a tumor.",
            "Blood pressure was elevated.",   "Physical therapy helped the back pain.",
        };
        for (std::size_t i = 0; i < texts.size(); ++i) {
            AnnotatedExample ex;
            ex.sentence = {"s" + std::to_string(i), texts[i]};
            ex.provenance = Provenance::self_annotated;
            ex.vote_stats = std::map<std::string, VoteStat>{};
            corpus.examples.push_back(ex);
            std::vector<double> v(6, 0.05);
            v[i] = 1.0;
            index.entries.push_back({ex.sentence.id, {v, "m", ""}});
        }
        index.model = "m";
    }

    void register_fixtures(Gateway& chat, Gateway& embed_gw, const std::string& target_text,
                           const std::string& scores) const {
        for (const auto& ex : corpus.examples)
            chat.register_fixture("ontology_extraction", "Text: " + ex.sentence.text,
                                  {R"x({"(Clinical finding, X)": "x"})x"});
        chat.register_fixture("ontology_extraction", "Text: " + target_text,
                              {R"x({"(Clinical finding, Target)": "target"})x"});
        chat.register_fixture("example_scoring", "'sentence': '" + target_text + "'", {scores});
        std::vector<double> query(6, 0.05);
        query[0] = 0.9;
        query[1] = 0.6;
        embed_gw.register_embedding_fixture(target_text, query);
    }
};

}  // namespace

TEST_CASE("discriminate composes retrieval, ontology extraction, scoring and selection") {
    DiscriminateFixture fixture;
    Gateway chat(fixture.chat_backend);
    Gateway embed_gw(fixture.embed_backend);
    const std::string target_text = "New chest pain this morning.";
    fixture.register_fixtures(
        chat, embed_gw, target_text,
        R"([{"idx": 0, "score": 2}, {"idx": 1, "score": 5}, {"idx": 2, "score": 4}, {"idx": 3, "score": 1}])");

    DiscriminatorConfig config;
    config.K = 4;
    config.k = 2;
    const Sentence target{"t1", target_text};
    const DiscriminationResult result = discriminate(target, fixture.corpus, fixture.index,
                                                     config, chat, embed_gw, PromptForge{});

    REQUIRE(result.hits.size() == 4);
    CHECK(result.hits[0].sentence_id == "s0");  // strongest query component
    CHECK(result.hits[1].sentence_id == "s1");
    REQUIRE(result.scored.size() == 4);
    // K+1 ontology extractions: 4 candidates + the target.
    CHECK(chat.stats().backend_calls.load() == 4 + 1 + 1);  // + 1 scoring call
    CHECK(result.target_ontology.pairs.size() == 1);

    REQUIRE(result.selected.size() == 2);
    CHECK(result.selected[0].sentence.id == result.scored[1].example.sentence.id);  // score 5
    // Selected examples are a subset of the retrieved candidates.
    for (const auto& ex : result.selected) {
        bool found = false;
        for (const auto& hit : result.hits)
            if (hit.sentence_id == ex.sentence.id) found = true;
        CHECK(found);
    }
}

TEST_CASE("discriminate with K larger than the corpus uses every example") {
    DiscriminateFixture fixture;
    Gateway chat(fixture.chat_backend);
    Gateway embed_gw(fixture.embed_backend);
    const std::string target_text = "Follow-up for back pain.";
    fixture.register_fixtures(chat, embed_gw, target_text,
                              R"([{"idx": 0, "score": 3}])");

    DiscriminatorConfig config;
    config.K = 50;
    config.k = 3;
    const DiscriminationResult result =
        discriminate({"t2", target_text}, fixture.corpus, fixture.index, config, chat, embed_gw,
                     PromptForge{});
    CHECK(result.hits.size() == 6);
    CHECK(result.scored.size() == 6);
    CHECK(result.selected.size() == 3);
}

TEST_CASE("K == k degenerates to the plain KNN set") {
    DiscriminateFixture fixture;
    Gateway chat(fixture.chat_backend);
    Gateway embed_gw(fixture.embed_backend);
    const std::string target_text = "Scheduled MRI today.";
    // Scores deliberately reorder the candidates.
    fixture.register_fixtures(
        chat, embed_gw, target_text,
        R"([{"idx": 0, "score": 1}, {"idx": 1, "score": 5}, {"idx": 2, "score": 3}])");

    DiscriminatorConfig config;
    config.K = 3;
    config.k = 3;
    const DiscriminationResult result =
        discriminate({"t3", target_text}, fixture.corpus, fixture.index, config, chat, embed_gw,
                     PromptForge{});

    std::set<std::string> knn_ids;
    for (const auto& hit : result.hits) knn_ids.insert(hit.sentence_id);
    std::set<std::string> selected_ids;
    for (const auto& ex : result.selected) selected_ids.insert(ex.sentence.id);
    CHECK(selected_ids == knn_ids);
}

TEST_CASE("discriminate validates k <= K and index alignment") {
    DiscriminateFixture fixture;
    Gateway chat(fixture.chat_backend);
    Gateway embed_gw(fixture.embed_backend);
    DiscriminatorConfig bad;
    bad.K = 2;
    bad.k = 3;
    CHECK_THROWS_AS(discriminate({"t", "x"}, fixture.corpus, fixture.index, bad, chat, embed_gw,
                                 PromptForge{}),
                    CorpusError);

    DiscriminatorConfig config;
    VectorIndex misaligned = fixture.index;
    misaligned.entries.pop_back();
    CHECK_THROWS_AS(discriminate({"t", "x"}, fixture.corpus, misaligned, config, chat, embed_gw,
                                 PromptForge{}),
                    CorpusError);
}
