#include "oema/llm_gateway.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>
#include <thread>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"
#include "json.hpp"
#include "oema/text.hpp"

namespace oema {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

void BackendConfig::validate() const {
    if (kind == BackendKind::http_openai_compatible && base_url.empty())
        throw GatewayError("http backend requires base_url");
    if (max_parallel < 1) throw GatewayError("max_parallel must be >= 1");
    if (max_retries < 0) throw GatewayError("max_retries must be >= 0");
}

void ChatRequest::validate() const {
    if (temperature < 0.0 || temperature > 2.0)
        throw GatewayError("temperature must be in [0, 2]");
    if (n_samples < 1) throw GatewayError("n_samples must be >= 1");
    if (max_tokens < 1) throw GatewayError("max_tokens must be >= 1");
}

class Backend {
public:
    virtual ~Backend() = default;
    virtual std::vector<std::string> complete(const ChatRequest& request) = 0;
    virtual std::vector<std::vector<double>> embed(const std::string& model,
                                                   const std::vector<std::string>& texts) = 0;
    virtual std::string id() const = 0;
};

namespace {

std::string format_temperature(double t) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", t);
    return buf;
}

std::string prompt_hash(const ChatRequest& request) {
    return text::stable_hash_hex(request.system + "\x1f" + request.user);
}

// ---------------------------------------------------------------------------
// Scripted backend: deterministic fixture playback for offline runs.

class ScriptedBackend : public Backend {
public:
    explicit ScriptedBackend(const BackendConfig& config) : config_(config) {
        if (config.fixtures_path) load_fixtures(*config.fixtures_path);
    }

    void register_fixture(const std::string& tag, const std::string& key,
                          std::vector<std::string> responses) {
        std::lock_guard<std::mutex> lock(mutex_);
        auto& group = chat_fixtures_[tag];
        if (group.index.count(key))
            throw GatewayError("duplicate fixture key '" + key + "' for tag '" + tag + "'");
        group.index[key] = group.ordered.size();
        group.ordered.push_back({key, std::move(responses)});
    }

    void register_embedding_fixture(const std::string& text, std::vector<double> values) {
        std::lock_guard<std::mutex> lock(mutex_);
        if (embedding_fixtures_.count(text))
            throw GatewayError("duplicate embedding fixture for text '" + text + "'");
        embedding_fixtures_[text] = std::move(values);
    }

    std::vector<std::string> complete(const ChatRequest& request) override {
        simulate_latency();
        std::vector<std::string> responses;
        {
            std::lock_guard<std::mutex> lock(mutex_);
            const std::vector<std::string>* found = match(request);
            if (!found)
                throw GatewayError("scripted backend has no fixture for tag '" + request.tag +
                                   "', prompt hash " + prompt_hash(request));
            responses = *found;
        }
        std::vector<std::string> out;
        out.reserve(static_cast<std::size_t>(request.n_samples));
        for (int i = 0; i < request.n_samples; ++i)
            out.push_back(responses[static_cast<std::size_t>(i) % responses.size()]);
        return out;
    }

    std::vector<std::vector<double>> embed(const std::string& model,
                                           const std::vector<std::string>& texts) override {
        simulate_latency();
        (void)model;
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        std::lock_guard<std::mutex> lock(mutex_);
        for (const auto& t : texts) {
            const auto it = embedding_fixtures_.find(t);
            if (it != embedding_fixtures_.end()) {
                out.push_back(it->second);
            } else if (config_.embed_fallback_dim) {
                out.push_back(pseudo_embedding(t, *config_.embed_fallback_dim));
            } else {
                throw GatewayError("scripted backend has no embedding fixture for text '" + t + "'");
            }
        }
        return out;
    }

    std::string id() const override { return "scripted"; }

private:
    struct FixtureGroup {
        std::vector<std::pair<std::string, std::vector<std::string>>> ordered;
        std::map<std::string, std::size_t> index;
    };

    void simulate_latency() const {
        if (config_.scripted_latency_ms > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(config_.scripted_latency_ms));
    }

    // Match precedence: exact prompt, prompt hash, then the longest key that
    // is a substring of the prompt (ties: first registered).
    const std::vector<std::string>* match(const ChatRequest& request) const {
        const std::string hash_key = "hash:" + prompt_hash(request);
        const FixtureGroup* groups[2] = {find_group(request.tag), find_group("*")};
        for (const auto* group : groups) {
            if (!group) continue;
            if (auto it = group->index.find(request.user); it != group->index.end())
                return &group->ordered[it->second].second;
        }
        for (const auto* group : groups) {
            if (!group) continue;
            if (auto it = group->index.find(hash_key); it != group->index.end())
                return &group->ordered[it->second].second;
        }
        const std::vector<std::string>* best = nullptr;
        std::size_t best_len = 0;
        for (const auto* group : groups) {
            if (!group) continue;
            for (const auto& [key, responses] : group->ordered) {
                if (key.size() > best_len && request.user.find(key) != std::string::npos) {
                    best = &responses;
                    best_len = key.size();
                }
            }
        }
        return best;
    }

    const FixtureGroup* find_group(const std::string& tag) const {
        const auto it = chat_fixtures_.find(tag);
        return it == chat_fixtures_.end() ? nullptr : &it->second;
    }

    static std::vector<double> pseudo_embedding(const std::string& text, int dim) {
        std::vector<double> v(static_cast<std::size_t>(dim));
        std::mt19937_64 rng(text::fnv1a64(text));
        double norm = 0.0;
        for (auto& x : v) {
            // Uniform in [-1, 1) built directly from the raw stream so the
            // values do not depend on library distribution internals.
            x = static_cast<double>(rng() >> 11) / 4503599627370496.0 - 1.0;
            norm += x * x;
        }
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            v[0] = 1.0;
            return v;
        }
        for (auto& x : v) x /= norm;
        return v;
    }

    void load_fixtures(const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw GatewayError("cannot open fixtures file: " + path.string());
        json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw GatewayError("malformed fixtures file " + path.string() + ": " + e.what());
        }
        if (j.contains("chat")) {
            for (const auto& [tag, group] : j.at("chat").items()) {
                for (const auto& [key, responses] : group.items()) {
                    std::vector<std::string> list;
                    for (const auto& r : responses) list.push_back(r.get<std::string>());
                    register_fixture(tag, key, std::move(list));
                }
            }
        }
        if (j.contains("embeddings")) {
            for (const auto& [txt, values] : j.at("embeddings").items()) {
                std::vector<double> v;
                for (const auto& x : values) v.push_back(x.get<double>());
                register_embedding_fixture(txt, std::move(v));
            }
        }
    }

    BackendConfig config_;
    mutable std::mutex mutex_;
    std::map<std::string, FixtureGroup> chat_fixtures_;
    std::map<std::string, std::vector<double>> embedding_fixtures_;
};

// ---------------------------------------------------------------------------
// HTTP backend: OpenAI-compatible chat completions and embeddings.

class HttpBackend : public Backend {
public:
    explicit HttpBackend(const BackendConfig& config) : config_(config) {
        split_base_url(config.base_url, host_, path_prefix_);
    }

    std::vector<std::string> complete(const ChatRequest& request) override {
        json body;
        body["model"] = request.model;
        json messages = json::array();
        if (!request.system.empty())
            messages.push_back({{"role", "system"}, {"content", request.system}});
        messages.push_back({{"role", "user"}, {"content", request.user}});
        body["messages"] = std::move(messages);
        body["temperature"] = request.temperature;
        body["n"] = request.n_samples;
        body["max_tokens"] = request.max_tokens;

        const json response = post_json("/chat/completions", body);
        std::vector<std::string> out;
        try {
            const auto& choices = response.at("choices");
            out.resize(choices.size());
            std::size_t pos = 0;
            for (const auto& choice : choices) {
                const std::size_t idx =
                    choice.contains("index") ? choice.at("index").get<std::size_t>() : pos;
                if (idx < out.size()) out[idx] = choice.at("message").at("content").get<std::string>();
                ++pos;
            }
        } catch (const std::exception& e) {
            throw GatewayError(std::string("malformed chat completion response: ") + e.what());
        }
        if (out.size() != static_cast<std::size_t>(request.n_samples))
            throw GatewayError("backend returned " + std::to_string(out.size()) +
                               " choices for n_samples=" + std::to_string(request.n_samples));
        return out;
    }

    std::vector<std::vector<double>> embed(const std::string& model,
                                           const std::vector<std::string>& texts) override {
        json body;
        body["model"] = model;
        body["input"] = texts;
        const json response = post_json("/embeddings", body);
        std::vector<std::vector<double>> out(texts.size());
        try {
            std::size_t pos = 0;
            for (const auto& item : response.at("data")) {
                const std::size_t idx =
                    item.contains("index") ? item.at("index").get<std::size_t>() : pos;
                if (idx < out.size()) out[idx] = item.at("embedding").get<std::vector<double>>();
                ++pos;
            }
        } catch (const std::exception& e) {
            throw GatewayError(std::string("malformed embeddings response: ") + e.what());
        }
        for (std::size_t i = 0; i < out.size(); ++i)
            if (out[i].empty())
                throw GatewayError("embeddings response missing vector for input " +
                                   std::to_string(i));
        return out;
    }

    std::string id() const override { return "http:" + config_.base_url; }

private:
    static void split_base_url(const std::string& url, std::string& host, std::string& prefix) {
        const std::size_t scheme = url.find("://");
        const std::size_t path_start =
            scheme == std::string::npos ? url.find('/') : url.find('/', scheme + 3);
        if (path_start == std::string::npos) {
            host = url;
            prefix.clear();
        } else {
            host = url.substr(0, path_start);
            prefix = url.substr(path_start);
            while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
        }
    }

    std::string api_key() const {
        if (config_.api_key_env.empty())
            throw GatewayError("http backend has no api_key_env configured");
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key || !*key)
            throw GatewayError("authentication failure: environment variable '" +
                               config_.api_key_env + "' is not set");
        return key;
    }

    json post_json(const std::string& endpoint, const json& body) {
        httplib::Client client(host_);
        client.set_connection_timeout(30, 0);
        client.set_read_timeout(120, 0);
        httplib::Headers headers{{"Authorization", "Bearer " + api_key()}};
        const auto result =
            client.Post(path_prefix_ + endpoint, headers, body.dump(), "application/json");
        if (!result)
            throw TransientGatewayError("connection failure to " + host_ + ": " +
                                        httplib::to_string(result.error()));
        if (result->status == 401 || result->status == 403)
            throw GatewayError("authentication failure (status " +
                               std::to_string(result->status) + ")");
        if (result->status == 429 || result->status >= 500)
            throw TransientGatewayError("backend status " + std::to_string(result->status));
        if (result->status != 200)
            throw GatewayError("backend status " + std::to_string(result->status) + ": " +
                               result->body);
        try {
            return json::parse(result->body);
        } catch (const std::exception& e) {
            throw GatewayError(std::string("malformed wire response: ") + e.what());
        }
    }

    BackendConfig config_;
    std::string host_;
    std::string path_prefix_;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
    if (config.kind == BackendKind::scripted)
        return std::make_unique<ScriptedBackend>(config);
    return std::make_unique<HttpBackend>(config);
}

}  // namespace

// ---------------------------------------------------------------------------
// Gateway

Gateway::Gateway(BackendConfig config)
    : config_(std::move(config)), semaphore_(std::max(1, config_.max_parallel)) {
    config_.validate();
    backend_ = make_backend(config_);
    if (config_.cache_dir) {
        std::filesystem::create_directories(*config_.cache_dir / "chat");
        std::filesystem::create_directories(*config_.cache_dir / "emb");
    }
}

Gateway::~Gateway() = default;

std::string Gateway::chat_cache_key(const ChatRequest& request, int sample_index) {
    return text::stable_hash_hex(request.model + "\x1f" + request.tag + "\x1f" +
                                 request.system + "\x1f" + request.user + "\x1f" +
                                 format_temperature(request.temperature) + "\x1f" +
                                 std::to_string(sample_index));
}

std::vector<Completion> Gateway::complete(ChatRequest request) {
    if (request.model.empty()) request.model = config_.model.empty() ? "default" : config_.model;
    request.validate();

    std::vector<Completion> out(static_cast<std::size_t>(request.n_samples));
    bool all_cached = config_.cache_dir.has_value();
    if (config_.cache_dir) {
        for (int i = 0; i < request.n_samples; ++i) {
            const auto cached = cache_read("chat", chat_cache_key(request, i), "text");
            if (!cached) {
                all_cached = false;
                break;
            }
            out[static_cast<std::size_t>(i)] = {*cached, i, backend_->id(), true};
        }
    }
    if (all_cached) {
        stats_.cache_hits.fetch_add(1);
        return out;
    }

    std::vector<std::string> texts;
    {
        SemaphoreGuard permit(semaphore_);
        const int now = stats_.concurrent.fetch_add(1) + 1;
        int prev = stats_.max_concurrent.load();
        while (now > prev && !stats_.max_concurrent.compare_exchange_weak(prev, now)) {
        }
        run_with_retries([&] { texts = backend_->complete(request); });
        stats_.concurrent.fetch_sub(1);
    }
    stats_.backend_calls.fetch_add(1);

    for (int i = 0; i < request.n_samples; ++i) {
        const auto& text = texts[static_cast<std::size_t>(i)];
        if (config_.cache_dir) cache_write_text(chat_cache_key(request, i), request, i, text);
        out[static_cast<std::size_t>(i)] = {text, i, backend_->id(), false};
    }
    return out;
}

std::vector<EmbeddingVector> Gateway::embed(const std::string& model_in,
                                            const std::vector<std::string>& texts) {
    const std::string model =
        model_in.empty() ? (config_.model.empty() ? "default" : config_.model) : model_in;
    if (texts.empty()) throw GatewayError("embed requires a non-empty list of texts");
    for (std::size_t i = 0; i < texts.size(); ++i)
        if (texts[i].empty())
            throw GatewayError("embed input " + std::to_string(i) + " is empty");

    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        const std::string key = text::stable_hash_hex("embed\x1f" + model + "\x1f" + texts[i]);
        if (config_.cache_dir) {
            if (auto values = cache_read_vector(key)) {
                out[i] = {std::move(*values), model, text::stable_hash_hex(texts[i])};
                continue;
            }
        }
        missing.push_back(i);
    }
    if (missing.empty()) {
        stats_.cache_hits.fetch_add(1);
        return out;
    }

    std::vector<std::string> batch;
    batch.reserve(missing.size());
    for (std::size_t i : missing) batch.push_back(texts[i]);

    std::vector<std::vector<double>> vectors;
    {
        SemaphoreGuard permit(semaphore_);
        const int now = stats_.concurrent.fetch_add(1) + 1;
        int prev = stats_.max_concurrent.load();
        while (now > prev && !stats_.max_concurrent.compare_exchange_weak(prev, now)) {
        }
        run_with_retries([&] { vectors = backend_->embed(model, batch); });
        stats_.concurrent.fetch_sub(1);
    }
    stats_.backend_calls.fetch_add(1);

    for (std::size_t j = 0; j < missing.size(); ++j) {
        const std::size_t i = missing[j];
        const std::string key = text::stable_hash_hex("embed\x1f" + model + "\x1f" + texts[i]);
        if (config_.cache_dir) cache_write_vector(key, model, vectors[j]);
        out[i] = {std::move(vectors[j]), model, text::stable_hash_hex(texts[i])};
    }
    return out;
}

void Gateway::run_with_retries(const std::function<void()>& call) {
    int attempt = 0;
    while (true) {
        try {
            call();
            return;
        } catch (const TransientGatewayError&) {
            if (attempt >= config_.max_retries) throw;
            std::this_thread::sleep_for(std::chrono::milliseconds(
                config_.retry_backoff_ms > 0 ? (config_.retry_backoff_ms << attempt) : 0));
            ++attempt;
        }
    }
}

void Gateway::register_fixture(const std::string& tag, const std::string& key,
                               std::vector<std::string> responses) {
    auto* scripted = dynamic_cast<ScriptedBackend*>(backend_.get());
    if (!scripted) throw GatewayError("register_fixture requires a scripted backend");
    if (responses.empty()) throw GatewayError("fixture must have at least one response");
    scripted->register_fixture(tag, key, std::move(responses));
}

void Gateway::register_embedding_fixture(const std::string& text, std::vector<double> values) {
    auto* scripted = dynamic_cast<ScriptedBackend*>(backend_.get());
    if (!scripted) throw GatewayError("register_embedding_fixture requires a scripted backend");
    scripted->register_embedding_fixture(text, std::move(values));
}

std::optional<std::string> Gateway::cache_read(const std::string& subdir, const std::string& key,
                                               const std::string& field) {
    const auto path = *config_.cache_dir / subdir / (key + ".json");
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        json j;
        in >> j;
        return j.at(field).get<std::string>();
    } catch (...) {
        return std::nullopt;  // corrupt record: treat as a miss
    }
}

std::optional<std::vector<double>> Gateway::cache_read_vector(const std::string& key) {
    const auto path = *config_.cache_dir / "emb" / (key + ".json");
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    try {
        json j;
        in >> j;
        return j.at("values").get<std::vector<double>>();
    } catch (...) {
        return std::nullopt;
    }
}

namespace {

void atomic_write(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = path.string() + ".tmp" + std::to_string(
        std::hash<std::thread::id>{}(std::this_thread::get_id()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

void Gateway::cache_write_text(const std::string& key, const ChatRequest& request,
                               int sample_index, const std::string& completion_text) {
    ordered_json j;
    j["model"] = request.model;
    j["tag"] = request.tag;
    j["temperature"] = request.temperature;
    j["sample_index"] = sample_index;
    j["prompt_hash"] = prompt_hash(request);
    j["text"] = completion_text;
    std::lock_guard<std::mutex> lock(cache_write_mutex_);
    atomic_write(*config_.cache_dir / "chat" / (key + ".json"), j.dump());
}

void Gateway::cache_write_vector(const std::string& key, const std::string& model,
                                 const std::vector<double>& values) {
    ordered_json j;
    j["model"] = model;
    j["values"] = values;
    std::lock_guard<std::mutex> lock(cache_write_mutex_);
    atomic_write(*config_.cache_dir / "emb" / (key + ".json"), j.dump());
}

}  // namespace oema
