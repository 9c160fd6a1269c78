#include "oema/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "oema/text.hpp"

namespace oema {

namespace toml {

const std::string& Value::as_string() const {
    if (!is_string()) throw ConfigError("expected a string value");
    return std::get<std::string>(data);
}

long long Value::as_int() const {
    if (auto* i = std::get_if<long long>(&data)) return *i;
    throw ConfigError("expected an integer value");
}

double Value::as_double() const {
    if (auto* d = std::get_if<double>(&data)) return *d;
    if (auto* i = std::get_if<long long>(&data)) return static_cast<double>(*i);
    throw ConfigError("expected a numeric value");
}

bool Value::as_bool() const {
    if (auto* b = std::get_if<bool>(&data)) return *b;
    throw ConfigError("expected a boolean value");
}

const Array& Value::as_array() const {
    if (auto* a = std::get_if<Array>(&data)) return *a;
    throw ConfigError("expected an array value");
}

const Table& Value::as_table() const {
    if (auto* t = std::get_if<std::shared_ptr<Table>>(&data)) return **t;
    throw ConfigError("expected a table value");
}

namespace {

class Parser {
public:
    Parser(const std::string& content, std::string origin)
        : content_(content), origin_(std::move(origin)) {}

    Table parse() {
        Table root;
        Table* current = &root;
        std::istringstream stream(content_);
        std::string line;
        while (std::getline(stream, line)) {
            ++line_no_;
            const std::string stripped = strip_comment(line);
            const std::string trimmed = text::trim(stripped);
            if (trimmed.empty()) continue;
            if (trimmed.front() == '[') {
                if (trimmed.back() != ']') fail("unterminated table header");
                const std::string path = text::trim(trimmed.substr(1, trimmed.size() - 2));
                if (path.empty()) fail("empty table header");
                current = descend(root, path);
                continue;
            }
            parse_key_value(trimmed, *current);
        }
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& message) const {
        throw ConfigError(origin_ + ":" + std::to_string(line_no_) + ": " + message);
    }

    static std::string strip_comment(const std::string& line) {
        bool in_string = false;
        char quote = 0;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (in_string) {
                if (c == '\\') {
                    ++i;
                } else if (c == quote) {
                    in_string = false;
                }
            } else if (c == '"' || c == '\'') {
                in_string = true;
                quote = c;
            } else if (c == '#') {
                return line.substr(0, i);
            }
        }
        return line;
    }

    Table* descend(Table& root, const std::string& path) {
        Table* current = &root;
        for (const auto& part : text::split(path, '.')) {
            const std::string key = unquote_key(text::trim(part));
            auto it = current->find(key);
            if (it == current->end()) {
                auto table = std::make_shared<Table>();
                (*current)[key] = Value{table};
                current = table.get();
            } else if (it->second.is_table()) {
                current = std::get<std::shared_ptr<Table>>(it->second.data).get();
            } else {
                fail("key '" + key + "' is not a table");
            }
        }
        return current;
    }

    std::string unquote_key(const std::string& key) {
        if (key.size() >= 2 && (key.front() == '"' || key.front() == '\'') &&
            key.back() == key.front())
            return key.substr(1, key.size() - 2);
        return key;
    }

    void parse_key_value(const std::string& line, Table& table) {
        const std::size_t eq = find_equals(line);
        if (eq == std::string::npos) fail("expected key = value");
        const std::string key = unquote_key(text::trim(line.substr(0, eq)));
        if (key.empty()) fail("empty key");
        if (table.count(key)) fail("duplicate key '" + key + "'");
        std::size_t pos = eq + 1;
        const Value value = parse_value(line, pos);
        if (!text::trim(line.substr(pos)).empty()) fail("trailing content after value");
        table[key] = value;
    }

    std::size_t find_equals(const std::string& line) const {
        bool in_string = false;
        char quote = 0;
        for (std::size_t i = 0; i < line.size(); ++i) {
            const char c = line[i];
            if (in_string) {
                if (c == '\\') {
                    ++i;
                } else if (c == quote) {
                    in_string = false;
                }
            } else if (c == '"' || c == '\'') {
                in_string = true;
                quote = c;
            } else if (c == '=') {
                return i;
            }
        }
        return std::string::npos;
    }

    Value parse_value(const std::string& line, std::size_t& pos) {
        while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
        if (pos >= line.size()) fail("missing value");
        const char c = line[pos];
        if (c == '"' || c == '\'') return Value{parse_string_value(line, pos)};
        if (c == '[') return parse_array(line, pos);
        return parse_scalar(line, pos);
    }

    std::string parse_string_value(const std::string& line, std::size_t& pos) {
        const char quote = line[pos];
        ++pos;
        std::string out;
        while (pos < line.size() && line[pos] != quote) {
            char c = line[pos];
            if (c == '\\' && quote == '"' && pos + 1 < line.size()) {
                const char e = line[pos + 1];
                pos += 2;
                switch (e) {
                    case 'n': out += '\n'; break;
                    case 't': out += '\t'; break;
                    case 'r': out += '\r'; break;
                    case '"': out += '"'; break;
                    case '\\': out += '\\'; break;
                    case '$': out += '$'; break;
                    default: out += e;
                }
                continue;
            }
            out += c;
            ++pos;
        }
        if (pos >= line.size()) fail("unterminated string");
        ++pos;  // closing quote
        return quote == '"' ? interpolate_env(out) : out;  // literal strings skip interpolation
    }

    std::string interpolate_env(const std::string& s) const {
        std::string out;
        std::size_t i = 0;
        while (i < s.size()) {
            if (s[i] == '$' && i + 1 < s.size() && s[i + 1] == '{') {
                const std::size_t close = s.find('}', i + 2);
                if (close != std::string::npos) {
                    const std::string name = s.substr(i + 2, close - i - 2);
                    const char* value = std::getenv(name.c_str());
                    if (value) out += value;
                    i = close + 1;
                    continue;
                }
            }
            out += s[i];
            ++i;
        }
        return out;
    }

    Value parse_array(const std::string& line, std::size_t& pos) {
        ++pos;  // '['
        Array items;
        while (true) {
            while (pos < line.size() && (std::isspace(static_cast<unsigned char>(line[pos])) ||
                                         line[pos] == ','))
                ++pos;
            if (pos >= line.size()) fail("unterminated array");
            if (line[pos] == ']') {
                ++pos;
                return Value{items};
            }
            items.push_back(parse_value(line, pos));
        }
    }

    Value parse_scalar(const std::string& line, std::size_t& pos) {
        std::size_t end = pos;
        while (end < line.size() && line[end] != ',' && line[end] != ']') ++end;
        const std::string token = text::trim(line.substr(pos, end - pos));
        pos = end;
        if (token == "true") return Value{true};
        if (token == "false") return Value{false};
        if (token.empty()) fail("missing value");
        // Integer, then float.
        {
            char* endp = nullptr;
            const long long i = std::strtoll(token.c_str(), &endp, 10);
            if (endp && *endp == '\0') return Value{i};
        }
        {
            char* endp = nullptr;
            const double d = std::strtod(token.c_str(), &endp);
            if (endp && *endp == '\0') return Value{d};
        }
        fail("cannot parse value '" + token + "'");
    }

    const std::string& content_;
    std::string origin_;
    std::size_t line_no_ = 0;
};

}  // namespace

Table parse_string(const std::string& content, const std::string& origin) {
    return Parser(content, origin).parse();
}

Table parse_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str(), path.string());
}

}  // namespace toml

void RunConfig::validate() const {
    if (dataset.label_set.labels.empty())
        throw ConfigError("dataset.labels must list at least one entity type");
    dataset.label_set.validate();
    if (discriminator.k > discriminator.K)
        throw ConfigError("discriminator requires k <= K");
    if (!backends.count("annotator"))
        throw ConfigError("config must define [backends.annotator]");
}

const BackendConfig& RunConfig::backend_for(const std::string& role) const {
    const auto it = backends.find(role);
    if (it != backends.end()) return it->second;
    return backends.at("annotator");
}

namespace {

using toml::Table;
using toml::Value;

const Value* find(const Table& table, const std::string& key) {
    const auto it = table.find(key);
    return it == table.end() ? nullptr : &it->second;
}

std::string get_string(const Table& table, const std::string& key, const std::string& fallback) {
    const Value* v = find(table, key);
    return v ? v->as_string() : fallback;
}

long long get_int(const Table& table, const std::string& key, long long fallback) {
    const Value* v = find(table, key);
    return v ? v->as_int() : fallback;
}

double get_double(const Table& table, const std::string& key, double fallback) {
    const Value* v = find(table, key);
    return v ? v->as_double() : fallback;
}

bool get_bool(const Table& table, const std::string& key, bool fallback) {
    const Value* v = find(table, key);
    return v ? v->as_bool() : fallback;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty()) return {};
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

BackendConfig parse_backend(const Table& table, const std::filesystem::path& base) {
    BackendConfig backend;
    const std::string kind = get_string(table, "kind", "scripted");
    if (kind == "scripted") {
        backend.kind = BackendKind::scripted;
    } else if (kind == "http" || kind == "http_openai_compatible") {
        backend.kind = BackendKind::http_openai_compatible;
    } else {
        throw ConfigError("unknown backend kind '" + kind + "'");
    }
    backend.base_url = get_string(table, "base_url", "");
    backend.api_key_env = get_string(table, "api_key_env", "");
    backend.model = get_string(table, "model", "");
    backend.max_retries = static_cast<int>(get_int(table, "max_retries", backend.max_retries));
    backend.max_parallel = static_cast<int>(get_int(table, "max_parallel", backend.max_parallel));
    backend.retry_backoff_ms =
        static_cast<int>(get_int(table, "retry_backoff_ms", backend.retry_backoff_ms));
    if (const Value* v = find(table, "cache")) backend.cache_dir = resolve(base, v->as_string());
    if (const Value* v = find(table, "fixtures"))
        backend.fixtures_path = resolve(base, v->as_string());
    if (const Value* v = find(table, "embed_fallback_dim"))
        backend.embed_fallback_dim = static_cast<int>(v->as_int());
    backend.validate();
    return backend;
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& path) {
    const Table root = toml::parse_file(path);
    const std::filesystem::path base = std::filesystem::absolute(path).parent_path();

    RunConfig config;
    try {
        const Value* dataset = find(root, "dataset");
        if (!dataset) throw ConfigError("config must define a [dataset] section");
        const Table& ds = dataset->as_table();
        config.dataset.name = get_string(ds, "name", "dataset");
        config.dataset.label_set.name = config.dataset.name;
        if (const Value* labels = find(ds, "labels")) {
            for (const auto& label : labels->as_array())
                config.dataset.label_set.labels.push_back(label.as_string());
        }
        if (const Value* desc = find(ds, "descriptions")) {
            for (const auto& [label, value] : desc->as_table())
                config.dataset.label_set.descriptions[label] = value.as_string();
        }
        config.dataset.train = resolve(base, get_string(ds, "train", ""));
        config.dataset.test = resolve(base, get_string(ds, "test", ""));
        config.dataset.gold = resolve(base, get_string(ds, "gold", get_string(ds, "test", "")));

        if (const Value* v = find(root, "annotator")) {
            const Table& t = v->as_table();
            config.annotator.n_samples =
                static_cast<int>(get_int(t, "n_samples", config.annotator.n_samples));
            config.annotator.temperature =
                get_double(t, "temperature", config.annotator.temperature);
            config.annotator.pool_size =
                static_cast<int>(get_int(t, "pool_size", config.annotator.pool_size));
            config.annotator.max_tokens =
                static_cast<int>(get_int(t, "max_tokens", config.annotator.max_tokens));
        }
        if (const Value* v = find(root, "discriminator")) {
            const Table& t = v->as_table();
            config.discriminator.K = static_cast<int>(get_int(t, "K", config.discriminator.K));
            config.discriminator.k = static_cast<int>(get_int(t, "k", config.discriminator.k));
            config.discriminator.ontology_temperature =
                get_double(t, "ontology_temperature", config.discriminator.ontology_temperature);
            config.discriminator.scoring_temperature =
                get_double(t, "scoring_temperature", config.discriminator.scoring_temperature);
            config.discriminator.max_tokens =
                static_cast<int>(get_int(t, "max_tokens", config.discriminator.max_tokens));
            config.discriminator.score_batch_size = static_cast<int>(
                get_int(t, "score_batch_size", config.discriminator.score_batch_size));
            config.discriminator.embed_model = get_string(t, "embed_model", "");
        }
        if (const Value* v = find(root, "predictor")) {
            const Table& t = v->as_table();
            config.predictor.temperature =
                get_double(t, "temperature", config.predictor.temperature);
            config.predictor.n_samples =
                static_cast<int>(get_int(t, "n_samples", config.predictor.n_samples));
            config.predictor.max_tokens =
                static_cast<int>(get_int(t, "max_tokens", config.predictor.max_tokens));
            config.predictor.flags.include_type_descriptions =
                get_bool(t, "include_type_descriptions", true);
            config.predictor.flags.include_examples = get_bool(t, "include_examples", true);
        }
        if (const Value* v = find(root, "backends")) {
            for (const auto& [role, backend] : v->as_table())
                config.backends[role] = parse_backend(backend.as_table(), base);
        }
        if (const Value* v = find(root, "ontology")) {
            const Table& t = v->as_table();
            if (const Value* cats = find(t, "categories"))
                for (const auto& c : cats->as_array())
                    config.snomed_categories.push_back(c.as_string());
            if (const Value* file = find(t, "exemplars")) {
                // JSONL of {"text": ..., "answer": ...} demonstration pairs
                // appended to the extraction prompt.
                const auto path = resolve(base, file->as_string());
                std::ifstream in(path, std::ios::binary);
                if (!in) throw ConfigError("cannot open ontology exemplars: " + path.string());
                std::string line;
                while (std::getline(in, line)) {
                    if (line.empty()) continue;
                    const auto j = nlohmann::json::parse(line);
                    config.discriminator.extra_exemplars.push_back(
                        {j.at("text").get<std::string>(), j.at("answer").get<std::string>()});
                }
            }
        }
        if (const Value* v = find(root, "templates")) {
            const std::map<std::string, TemplateKind> kinds = {
                {"self_annotation", TemplateKind::self_annotation},
                {"ontology_extraction", TemplateKind::ontology_extraction},
                {"example_scoring", TemplateKind::example_scoring},
                {"final_prediction", TemplateKind::final_prediction},
            };
            for (const auto& [name, file] : v->as_table()) {
                const auto it = kinds.find(name);
                if (it == kinds.end()) throw ConfigError("unknown template name '" + name + "'");
                config.template_files[it->second] = resolve(base, file.as_string());
            }
        }
        if (const Value* v = find(root, "output")) {
            config.output_dir = resolve(base, v->as_table().at("dir").as_string());
        } else if (const Value* dir = find(root, "output_dir")) {
            config.output_dir = resolve(base, dir->as_string());
        }
        config.seed = get_int(root, "seed", 0);
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }

    config.validate();
    return config;
}

}  // namespace oema
