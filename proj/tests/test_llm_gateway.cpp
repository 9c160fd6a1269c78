#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <thread>

#include "doctest.h"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"
#include "oema/llm_gateway.hpp"
#include "oema/text.hpp"

using namespace oema;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "oema_gateway_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

BackendConfig scripted_config() {
    BackendConfig config;
    config.kind = BackendKind::scripted;
    config.model = "fixture-model";
    return config;
}

ChatRequest simple_request(const std::string& prompt, int n = 1) {
    ChatRequest request;
    request.user = prompt;
    request.n_samples = n;
    request.tag = "self_annotation";
    return request;
}

}  // namespace

TEST_CASE("scripted backend echoes fixtures; cyclic across sample indices") {
    Gateway gateway(scripted_config());
    gateway.register_fixture("self_annotation", "prompt-a", {"[]", "[]", "[]", "[]", "[]"});
    const auto five = gateway.complete(simple_request("prompt-a", 5));
    REQUIRE(five.size() == 5);
    for (const auto& c : five) CHECK(c.text == "[]");

    gateway.register_fixture("self_annotation", "prompt-b", {"one"});
    const auto cycled = gateway.complete(simple_request("prompt-b", 5));
    REQUIRE(cycled.size() == 5);
    for (const auto& c : cycled) CHECK(c.text == "one");

    gateway.register_fixture("self_annotation", "prompt-c", {"r0", "r1", "r2", "r3", "r4"});
    const auto distinct = gateway.complete(simple_request("prompt-c", 5));
    for (int i = 0; i < 5; ++i) {
        CHECK(distinct[static_cast<std::size_t>(i)].text == "r" + std::to_string(i));
        CHECK(distinct[static_cast<std::size_t>(i)].sample_index == i);
    }
}

TEST_CASE("duplicate fixture registration is rejected") {
    Gateway gateway(scripted_config());
    gateway.register_fixture("self_annotation", "key", {"x"});
    CHECK_THROWS_AS(gateway.register_fixture("self_annotation", "key", {"y"}), GatewayError);
}

TEST_CASE("fixture matching: exact beats hash beats longest substring") {
    Gateway gateway(scripted_config());
    gateway.register_fixture("*", "pimple", {"substring-short"});
    gateway.register_fixture("*", "little pimple on the buttock", {"substring-long"});
    const std::string prompt = "Text: \"She started off with a little pimple on the buttock.\"";
    CHECK(gateway.complete(simple_request(prompt)).front().text == "substring-long");

    ChatRequest request = simple_request(prompt);
    gateway.register_fixture("self_annotation", "hash:" + text::stable_hash_hex("\x1f" + prompt),
                             {"by-hash"});
    CHECK(gateway.complete(request).front().text == "by-hash");

    gateway.register_fixture("self_annotation", prompt, {"exact"});
    CHECK(gateway.complete(request).front().text == "exact");
}

TEST_CASE("fixtures are tag scoped") {
    Gateway gateway(scripted_config());
    gateway.register_fixture("self_annotation", "shared text", {"annotate-answer"});
    gateway.register_fixture("ontology_extraction", "shared text", {"ontology-answer"});
    ChatRequest request = simple_request("Text: shared text");
    CHECK(gateway.complete(request).front().text == "annotate-answer");
    request.tag = "ontology_extraction";
    CHECK(gateway.complete(request).front().text == "ontology-answer");
    request.tag = "example_scoring";
    CHECK_THROWS_AS(gateway.complete(request), GatewayError);
}

TEST_CASE("chat cache: second identical call is served with zero backend calls") {
    BackendConfig config = scripted_config();
    config.cache_dir = fresh_dir("chat_cache");
    Gateway gateway(config);
    gateway.register_fixture("self_annotation", "prompt", {"a", "b", "c"});

    const auto first = gateway.complete(simple_request("prompt", 3));
    CHECK(gateway.stats().backend_calls.load() == 1);
    for (const auto& c : first) CHECK_FALSE(c.cached);

    const auto second = gateway.complete(simple_request("prompt", 3));
    CHECK(gateway.stats().backend_calls.load() == 1);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(second[i].cached);
        CHECK(second[i].text == first[i].text);
    }

    // A fresh gateway over the same cache dir also hits.
    Gateway warm(config);
    const auto third = warm.complete(simple_request("prompt", 3));
    CHECK(warm.stats().backend_calls.load() == 0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(third[i].text == first[i].text);
}

TEST_CASE("cache keys separate temperature, sample index, tag and model") {
    BackendConfig config = scripted_config();
    config.cache_dir = fresh_dir("key_cache");
    Gateway gateway(config);
    gateway.register_fixture("*", "p", {"r"});
    ChatRequest request = simple_request("p");
    const std::string base_key = Gateway::chat_cache_key(request, 0);
    CHECK(Gateway::chat_cache_key(request, 1) != base_key);
    request.temperature = 0.7;
    CHECK(Gateway::chat_cache_key(request, 0) != base_key);
    request.temperature = 0.0;
    request.tag = "final_prediction";
    CHECK(Gateway::chat_cache_key(request, 0) != base_key);
    request.tag = "self_annotation";
    request.model = "other-model";
    CHECK(Gateway::chat_cache_key(request, 0) != base_key);
}

TEST_CASE("embeddings: fixtures honor input order; cache serves bitwise-identical vectors") {
    BackendConfig config = scripted_config();
    config.cache_dir = fresh_dir("emb_cache");
    Gateway gateway(config);
    gateway.register_embedding_fixture("a", {1.0, 0.0});
    gateway.register_embedding_fixture("b", {0.0, 1.0});

    const auto vectors = gateway.embed("", {"a", "b"});
    REQUIRE(vectors.size() == 2);
    CHECK(vectors[0].values == std::vector<double>{1.0, 0.0});
    CHECK(vectors[1].values == std::vector<double>{0.0, 1.0});
    CHECK(vectors[0].model == "fixture-model");
    CHECK(gateway.stats().backend_calls.load() == 1);

    const auto again = gateway.embed("", {"a", "b"});
    CHECK(gateway.stats().backend_calls.load() == 1);
    CHECK(again[0].values == vectors[0].values);
    CHECK(again[1].values == vectors[1].values);

    CHECK_THROWS_AS(gateway.embed("", {}), GatewayError);
    CHECK_THROWS_WITH_AS(gateway.embed("", {"a", ""}), doctest::Contains("1"), GatewayError);
    CHECK_THROWS_AS(gateway.embed("", {"unknown text"}), GatewayError);
}

TEST_CASE("scripted embedding fallback generates deterministic unit vectors") {
    BackendConfig config = scripted_config();
    config.embed_fallback_dim = 8;
    Gateway gateway(config);
    const auto v1 = gateway.embed("", {"anything"});
    const auto v2 = gateway.embed("", {"anything"});
    REQUIRE(v1[0].values.size() == 8);
    CHECK(v1[0].values == v2[0].values);
    double norm = 0.0;
    for (double x : v1[0].values) norm += x * x;
    CHECK(std::abs(norm - 1.0) < 1e-12);
}

TEST_CASE("parallelism stays within max_parallel") {
    BackendConfig config = scripted_config();
    config.max_parallel = 2;
    config.scripted_latency_ms = 20;
    Gateway gateway(config);
    for (int i = 0; i < 8; ++i)
        gateway.register_fixture("*", "prompt-" + std::to_string(i), {"r"});

    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i)
        threads.emplace_back([&gateway, i] {
            gateway.complete(simple_request("prompt-" + std::to_string(i)));
        });
    for (auto& t : threads) t.join();
    CHECK(gateway.stats().backend_calls.load() == 8);
    CHECK(gateway.stats().max_concurrent.load() <= 2);
}

TEST_CASE("request validation") {
    Gateway gateway(scripted_config());
    ChatRequest request = simple_request("p");
    request.temperature = 3.0;
    CHECK_THROWS_AS(gateway.complete(request), GatewayError);
    request.temperature = 0.5;
    request.n_samples = 0;
    CHECK_THROWS_AS(gateway.complete(request), GatewayError);
}

TEST_CASE("http backend speaks the chat/completions and embeddings protocol with retries") {
    httplib::Server server;
    std::atomic<int> chat_hits{0};
    std::atomic<int> embed_hits{0};
    std::string seen_auth;
    nlohmann::json seen_chat_body;

    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const int hit = ++chat_hits;
        seen_auth = req.get_header_value("Authorization");
        seen_chat_body = nlohmann::json::parse(req.body);
        if (hit <= 2) {  // two transient failures, then success
            res.status = 429;
            return;
        }
        const int n = seen_chat_body.value("n", 1);
        nlohmann::json choices = nlohmann::json::array();
        for (int i = 0; i < n; ++i)
            choices.push_back({{"index", i},
                               {"message", {{"role", "assistant"}, {"content", "reply-" +
                                                                                std::to_string(i)}}}});
        res.set_content(nlohmann::json{{"choices", choices}}.dump(), "application/json");
    });
    server.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        ++embed_hits;
        const auto body = nlohmann::json::parse(req.body);
        nlohmann::json data = nlohmann::json::array();
        int index = 0;
        for (const auto& input : body.at("input"))
            data.push_back({{"index", index++},
                            {"embedding", {static_cast<double>(input.get<std::string>().size()), 1.0}}});
        res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();

    setenv("OEMA_TEST_API_KEY", "sekrit", 1);
    BackendConfig config;
    config.kind = BackendKind::http_openai_compatible;
    config.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    config.api_key_env = "OEMA_TEST_API_KEY";
    config.model = "test-model";
    config.max_retries = 3;
    config.retry_backoff_ms = 0;
    Gateway gateway(config);

    ChatRequest request = simple_request("hello", 2);
    request.temperature = 0.7;
    const auto completions = gateway.complete(request);
    REQUIRE(completions.size() == 2);
    CHECK(completions[0].text == "reply-0");
    CHECK(completions[1].text == "reply-1");
    CHECK(chat_hits.load() == 3);  // retried through two 429s
    CHECK(seen_auth == "Bearer sekrit");
    CHECK(seen_chat_body.at("model") == "test-model");
    CHECK(seen_chat_body.at("temperature").get<double>() == doctest::Approx(0.7));
    CHECK(seen_chat_body.at("n") == 2);
    CHECK(seen_chat_body.at("messages").size() == 1);  // no system message by default

    ChatRequest with_system = simple_request("hello again");
    with_system.system = "You are terse.";
    gateway.complete(with_system);
    REQUIRE(seen_chat_body.at("messages").size() == 2);
    CHECK(seen_chat_body.at("messages")[0].at("role") == "system");
    CHECK(seen_chat_body.at("messages")[0].at("content") == "You are terse.");
    CHECK(seen_chat_body.at("messages")[1].at("role") == "user");

    const auto vectors = gateway.embed("embed-model", {"abc", "de"});
    REQUIRE(vectors.size() == 2);
    CHECK(vectors[0].values == std::vector<double>{3.0, 1.0});
    CHECK(vectors[1].values == std::vector<double>{2.0, 1.0});
    CHECK(embed_hits.load() == 1);

    // Missing API key is an authentication error, not a retry loop.
    unsetenv("OEMA_TEST_API_KEY");
    CHECK_THROWS_WITH_AS(gateway.complete(simple_request("x")),
                         doctest::Contains("authentication"), GatewayError);

    server.stop();
    server_thread.join();
}

TEST_CASE("retry budget exhausts into an error") {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++hits;
        res.status = 503;
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread server_thread([&server] { server.listen_after_bind(); });
    server.wait_until_ready();

    setenv("OEMA_TEST_API_KEY", "k", 1);
    BackendConfig config;
    config.kind = BackendKind::http_openai_compatible;
    config.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
    config.api_key_env = "OEMA_TEST_API_KEY";
    config.max_retries = 2;
    config.retry_backoff_ms = 0;
    Gateway gateway(config);
    CHECK_THROWS_AS(gateway.complete(simple_request("x")), TransientGatewayError);
    CHECK(hits.load() == 3);  // initial try + 2 retries

    server.stop();
    server_thread.join();
}

TEST_CASE("fixtures file loads tagged chat and embedding entries") {
    const fs::path dir = fresh_dir("fixture_file");
    const fs::path path = dir / "fixtures.json";
    {
        std::ofstream out(path);
        out << R"({
            "chat": {
                "self_annotation": {"alpha": ["resp-1", "resp-2"]},
                "*": {"beta": ["any-tag"]}
            },
            "embeddings": {"gamma": [0.5, 0.5]}
        })";
    }
    BackendConfig config = scripted_config();
    config.fixtures_path = path;
    Gateway gateway(config);
    CHECK(gateway.complete(simple_request("contains alpha inside", 2))[1].text == "resp-2");
    ChatRequest any = simple_request("beta");
    any.tag = "final_prediction";
    CHECK(gateway.complete(any).front().text == "any-tag");
    CHECK(gateway.embed("", {"gamma"})[0].values == std::vector<double>{0.5, 0.5});
}
