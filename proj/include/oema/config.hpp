#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "oema/corpus.hpp"
#include "oema/discriminator.hpp"
#include "oema/llm_gateway.hpp"
#include "oema/predictor.hpp"
#include "oema/prompt_forge.hpp"
#include "oema/self_annotator.hpp"

namespace oema {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Minimal TOML reader covering the flat, diffable subset this project
// uses: [section] and [a.b] tables, bare or quoted keys, strings with
// ${ENV} interpolation, integers, floats, booleans and single-line arrays.
namespace toml {

struct Value;
using Table = std::map<std::string, Value>;
using Array = std::vector<Value>;

struct Value {
    std::variant<std::string, long long, double, bool, Array, std::shared_ptr<Table>> data;

    bool is_string() const { return std::holds_alternative<std::string>(data); }
    bool is_table() const { return std::holds_alternative<std::shared_ptr<Table>>(data); }

    const std::string& as_string() const;
    long long as_int() const;
    double as_double() const;
    bool as_bool() const;
    const Array& as_array() const;
    const Table& as_table() const;
};

Table parse_file(const std::filesystem::path& path);
Table parse_string(const std::string& content, const std::string& origin = "<string>");

}  // namespace toml

struct DatasetConfig {
    std::string name;
    LabelSet label_set;
    std::filesystem::path train;  // unlabeled pool (mentions may be empty)
    std::filesystem::path test;   // sentences to predict on
    std::filesystem::path gold;   // reference for evaluation (often == test)
};

struct RunConfig {
    DatasetConfig dataset;
    AnnotatorConfig annotator;
    DiscriminatorConfig discriminator;
    PredictorConfig predictor;
    std::map<std::string, BackendConfig> backends;  // annotator/discriminator/predictor/embedder
    std::filesystem::path output_dir = "out";
    long seed = 0;
    std::vector<std::string> snomed_categories;  // empty = built-in default
    std::map<TemplateKind, std::filesystem::path> template_files;

    void validate() const;
    // Backend for a role, falling back to the annotator's backend.
    const BackendConfig& backend_for(const std::string& role) const;
};

// Loads a TOML run configuration; relative paths resolve against the
// config file's directory.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace oema
