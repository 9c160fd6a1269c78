#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "oema/corpus.hpp"

namespace oema {

class PromptError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class TemplateKind {
    self_annotation,
    ontology_extraction,
    example_scoring,
    final_prediction,
};

// Request tag for a template kind, e.g. "self_annotation".
const char* template_tag(TemplateKind kind);

struct PromptTemplate {
    TemplateKind kind;
    std::string body;  // text with {{placeholder}} markers
};

struct AblationFlags {
    bool include_type_descriptions = true;
    bool include_examples = true;
};

struct OntologyExemplar {
    std::string text;
    std::string answer;
};

struct ScoringTarget {
    std::string sentence_text;
    std::string ontology_answer;
};

struct ScoringCandidate {
    int index = 0;
    std::string sentence_text;
    std::string ontology_answer;
};

// Renders "['A', 'B', 'C']" in label-set order.
std::string format_label_list(const LabelSet& label_set);

// Mentions as a JSON array of one {"surface": "label"} object each.
std::string format_mention_answer(const std::vector<EntityMention>& mentions);

// Deterministic rendering of the four prompt templates, with the ablation
// switches for type descriptions and few-shot examples.
class PromptForge {
public:
    PromptForge();

    void override_template(TemplateKind kind, std::string body);
    void load_template_file(TemplateKind kind, const std::filesystem::path& path);
    void set_snomed_categories(std::vector<std::string> categories);
    const std::vector<std::string>& snomed_categories() const { return categories_; }

    std::string render_self_annotation(const LabelSet& label_set, const std::string& text) const;

    std::string render_ontology_extraction(const std::vector<OntologyExemplar>& exemplars,
                                           const std::string& text) const;

    std::string render_example_scoring(const LabelSet& label_set, const ScoringTarget& target,
                                       const std::vector<ScoringCandidate>& candidates) const;

    std::string render_final_prediction(const LabelSet& label_set,
                                        const std::vector<AnnotatedExample>& examples,
                                        const std::string& text, AblationFlags flags) const;

private:
    const std::string& body(TemplateKind kind) const;

    std::map<TemplateKind, std::string> bodies_;
    std::vector<std::string> categories_;
};

// Single pass expansion of {{name}} placeholders; values are inserted
// verbatim and never rescanned. Unknown placeholders are an error.
std::string expand_template(const std::string& body,
                            const std::map<std::string, std::string>& bindings);

}  // namespace oema
