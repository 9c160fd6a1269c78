#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "oema/concurrency.hpp"

namespace oema {

class GatewayError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Transport-level failure worth retrying (connect error, 429, 5xx).
class TransientGatewayError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

enum class BackendKind { http_openai_compatible, scripted };

struct BackendConfig {
    BackendKind kind = BackendKind::scripted;
    std::string base_url;      // http only, e.g. "https://api.openai.com/v1"
    std::string api_key_env;   // name of the env var holding the key
    std::string model;         // default model for requests on this backend
    int max_retries = 3;
    int max_parallel = 4;
    int retry_backoff_ms = 250;
    std::optional<std::filesystem::path> cache_dir;
    std::optional<std::filesystem::path> fixtures_path;  // scripted
    // Scripted embeddings: when set, unknown texts get a deterministic
    // pseudo-embedding of this dimension instead of an error.
    std::optional<int> embed_fallback_dim;
    int scripted_latency_ms = 0;  // test instrumentation

    void validate() const;
};

struct ChatRequest {
    std::string model;
    std::string system;  // empty = no system message
    std::string user;    // fully rendered prompt
    double temperature = 0.0;
    int max_tokens = 1024;
    int n_samples = 1;
    // Template kind issuing this request: "self_annotation",
    // "ontology_extraction", "example_scoring" or "final_prediction".
    std::string tag;

    void validate() const;
};

struct Completion {
    std::string text;
    int sample_index = 0;
    std::string backend_id;
    bool cached = false;
};

struct EmbeddingVector {
    std::vector<double> values;
    std::string model;
    std::string source_text_hash;

    bool operator==(const EmbeddingVector&) const = default;
};

struct GatewayStats {
    std::atomic<long> backend_calls{0};   // actual backend invocations
    std::atomic<long> cache_hits{0};      // fully cache-served requests
    std::atomic<int> concurrent{0};
    std::atomic<int> max_concurrent{0};
};

class Backend;

// Uniform chat/embedding access over one configured backend, with disk
// caching, retry with exponential backoff, and a concurrency bound.
class Gateway {
public:
    explicit Gateway(BackendConfig config);
    ~Gateway();

    std::vector<Completion> complete(ChatRequest request);
    std::vector<EmbeddingVector> embed(const std::string& model,
                                       const std::vector<std::string>& texts);

    // Scripted backends only. `tag` may be "*" to match any request tag.
    // Re-registering an existing (tag, key) is an error.
    void register_fixture(const std::string& tag, const std::string& key,
                          std::vector<std::string> responses);
    void register_embedding_fixture(const std::string& text, std::vector<double> values);

    const BackendConfig& config() const { return config_; }
    const GatewayStats& stats() const { return stats_; }

    // Cache key for one sample of a chat request.
    static std::string chat_cache_key(const ChatRequest& request, int sample_index);

private:
    void run_with_retries(const std::function<void()>& call);

    std::optional<std::string> cache_read(const std::string& subdir, const std::string& key,
                                          const std::string& field);
    std::optional<std::vector<double>> cache_read_vector(const std::string& key);
    void cache_write_text(const std::string& key, const ChatRequest& request, int sample_index,
                          const std::string& text);
    void cache_write_vector(const std::string& key, const std::string& model,
                            const std::vector<double>& values);

    BackendConfig config_;
    std::unique_ptr<Backend> backend_;
    Semaphore semaphore_;
    GatewayStats stats_;
    std::mutex cache_write_mutex_;
};

}  // namespace oema
