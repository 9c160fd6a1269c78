#include "oema/prompt_forge.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace oema {

const char* template_tag(TemplateKind kind) {
    switch (kind) {
        case TemplateKind::self_annotation: return "self_annotation";
        case TemplateKind::ontology_extraction: return "ontology_extraction";
        case TemplateKind::example_scoring: return "example_scoring";
        case TemplateKind::final_prediction: return "final_prediction";
    }
    return "unknown";
}

namespace {

// The recognition prompt doubles as the zero-shot shape: with no type
// descriptions and no examples it degenerates to the plain self-annotation
// prompt, byte for byte.
constexpr const char* kRecognitionBody =
    "You are an expert in medical named entity recognition. You're very good at extracting "
    "information.{{descriptions_block}}Given entity label set: {{label_set}}\n"
    "\n"
    "Please recognize the named entities in the given text. Based on the given entity label "
    "set, provide answer in the following JSON format: [{'Entity Name': 'Entity Label'}]. If "
    "there is no entity in the text, return the following empty list: []. Only return answer, "
    "not explanations.\n"
    "\n"
    "{{examples_block}}Text: \"{{text}}\"\n"
    "Answer:";

constexpr const char* kOntologyBody =
    "Please refer to the 18 top-level categories defined in the Concept Hierarchy of SNOMED "
    "CT, and explicitly extract the clinical medical ontologies mentioned in the text in the "
    "order of their appearance. The top-level categories are: {{categories}}.\n"
    "\n"
    "Provide answer in the format: {\"(top-level category, ontology)\": \"original text "
    "fragment\", ...}. Only a dictionary string should be returned, without any Markdown "
    "formatting, code blocks, or additional content.\n"
    "\n"
    "Text: \"She started off with a little pimple on the buttock.\"\n"
    "Answer: {\"(Clinical finding, Pustule)\": \"pimple\", \"(Body structure, Buttock)\": "
    "\"buttock\"}\n"
    "{{exemplars}}Text: {{text}}\n"
    "Answer:";

constexpr const char* kScoringBody =
    "### Example Scoring for Entity Recognition Tasks\n"
    "Given entity label set: {{label_set}} and target sentence: {\n"
    "'sentence': '{{target_sentence}}',\n"
    "'ontology': '{{target_ontology}}'\n"
    "}\n"
    "\n"
    "### Scoring Guidelines\n"
    "Based on the target sentence has learned SNOMED CT medical ontology and may involve "
    "entity type, please predict the helpfulness scores and give reasons of each sentence, "
    "which indicates the degree to which providing the current sentence can aid in extracting "
    "named entities from the target_sentence. The score ranges from 1 to 5, with 1 being the "
    "least helpful and 5 being the most helpful.\n"
    "\n"
    "Provide answer in the following JSON format: [{\"idx\": \"sentence identifier\", "
    "\"score\": \"be strict and reflect the differences in scores, not all 1 or all 5\", "
    "\"reason\": \"combined with the characteristics of the target sentence\"}, ...]\n"
    "Make sure that the output is a complete string, do not use newline characters, Markdown "
    "format, ```json, or any additional instructions, and only return formatted string "
    "results.\n"
    "\n"
    "{{candidates}}";

// SNOMED CT top-level hierarchy names. Configurable; the built-in list
// carries the standard names including the two used by the ontology
// extraction demonstration.
const std::vector<std::string> kDefaultCategories = {
    "Clinical finding",
    "Procedure",
    "Observable entity",
    "Body structure",
    "Organism",
    "Substance",
    "Pharmaceutical / biologic product",
    "Specimen",
    "Physical object",
    "Physical force",
    "Event",
    "Environment or geographical location",
    "Social context",
    "Situation with explicit context",
    "Staging and scales",
    "Qualifier value",
    "Record artifact",
    "Linkage concept",
};

std::string escape_json_string(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

}  // namespace

std::string format_label_list(const LabelSet& label_set) {
    std::string out = "[";
    for (std::size_t i = 0; i < label_set.labels.size(); ++i) {
        if (i > 0) out += ", ";
        out += "'" + label_set.labels[i] + "'";
    }
    out += "]";
    return out;
}

std::string format_mention_answer(const std::vector<EntityMention>& mentions) {
    if (mentions.empty()) return "[]";
    std::string out = "[";
    for (std::size_t i = 0; i < mentions.size(); ++i) {
        if (i > 0) out += ", ";
        out += "{\"" + escape_json_string(mentions[i].surface) + "\": \"" +
               escape_json_string(mentions[i].label) + "\"}";
    }
    out += "]";
    return out;
}

std::string expand_template(const std::string& body,
                            const std::map<std::string, std::string>& bindings) {
    std::string out;
    out.reserve(body.size());
    std::size_t i = 0;
    while (i < body.size()) {
        const std::size_t open = body.find("{{", i);
        if (open == std::string::npos) {
            out.append(body, i, body.size() - i);
            break;
        }
        const std::size_t close = body.find("}}", open + 2);
        if (close == std::string::npos) {
            out.append(body, i, body.size() - i);
            break;
        }
        const std::string name = body.substr(open + 2, close - open - 2);
        const bool ident = !name.empty() &&
                           name.find_first_not_of(
                               "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_") ==
                               std::string::npos;
        out.append(body, i, open - i);
        if (!ident) {
            // Not a placeholder; emit the braces literally and move on.
            out += "{{";
            i = open + 2;
            continue;
        }
        const auto it = bindings.find(name);
        if (it == bindings.end())
            throw PromptError("template placeholder '{{" + name + "}}' has no binding");
        out += it->second;
        i = close + 2;
    }
    return out;
}

PromptForge::PromptForge() : categories_(kDefaultCategories) {
    bodies_[TemplateKind::self_annotation] = kRecognitionBody;
    bodies_[TemplateKind::final_prediction] = kRecognitionBody;
    bodies_[TemplateKind::ontology_extraction] = kOntologyBody;
    bodies_[TemplateKind::example_scoring] = kScoringBody;
}

void PromptForge::override_template(TemplateKind kind, std::string body) {
    bodies_[kind] = std::move(body);
}

void PromptForge::load_template_file(TemplateKind kind, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PromptError("cannot open template file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    bodies_[kind] = ss.str();
}

void PromptForge::set_snomed_categories(std::vector<std::string> categories) {
    if (categories.empty()) throw PromptError("category list must not be empty");
    categories_ = std::move(categories);
}

const std::string& PromptForge::body(TemplateKind kind) const {
    return bodies_.at(kind);
}

std::string PromptForge::render_self_annotation(const LabelSet& label_set,
                                                const std::string& text) const {
    label_set.validate();
    return expand_template(body(TemplateKind::self_annotation),
                           {{"descriptions_block", " "},
                            {"label_set", format_label_list(label_set)},
                            {"examples_block", ""},
                            {"text", text}});
}

std::string PromptForge::render_ontology_extraction(
    const std::vector<OntologyExemplar>& exemplars, const std::string& text) const {
    std::string categories;
    for (std::size_t i = 0; i < categories_.size(); ++i) {
        if (i > 0) categories += "; ";
        categories += categories_[i];
    }
    std::string block;
    for (const auto& ex : exemplars)
        block += "Text: \"" + ex.text + "\"\nAnswer: " + ex.answer + "\n";
    return expand_template(body(TemplateKind::ontology_extraction),
                           {{"categories", categories},
                            {"exemplars", block},
                            {"text", text}});
}

std::string PromptForge::render_example_scoring(
    const LabelSet& label_set, const ScoringTarget& target,
    const std::vector<ScoringCandidate>& candidates) const {
    if (candidates.empty()) throw PromptError("example scoring requires at least one candidate");
    std::set<int> seen;
    for (const auto& c : candidates)
        if (!seen.insert(c.index).second)
            throw PromptError("duplicate candidate index " + std::to_string(c.index));

    std::string block;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (i > 0) block += "\n";
        block += "{'idx': '" + std::to_string(candidates[i].index) + "', 'sentence': '" +
                 candidates[i].sentence_text + "', 'ontology': '" +
                 candidates[i].ontology_answer + "'}";
    }
    return expand_template(body(TemplateKind::example_scoring),
                           {{"label_set", format_label_list(label_set)},
                            {"target_sentence", target.sentence_text},
                            {"target_ontology", target.ontology_answer},
                            {"candidates", block}});
}

std::string PromptForge::render_final_prediction(const LabelSet& label_set,
                                                 const std::vector<AnnotatedExample>& examples,
                                                 const std::string& text,
                                                 AblationFlags flags) const {
    label_set.validate();
    std::string descriptions = " ";
    if (flags.include_type_descriptions && !label_set.descriptions.empty()) {
        descriptions = "\n\nEntity type descriptions:\n";
        for (const auto& label : label_set.labels) {
            const auto it = label_set.descriptions.find(label);
            if (it != label_set.descriptions.end())
                descriptions += "- " + label + ": " + it->second + "\n";
        }
        descriptions += "\n";
    }
    std::string example_block;
    if (flags.include_examples) {
        for (const auto& ex : examples)
            example_block += "Text: \"" + ex.sentence.text + "\"\nAnswer: " +
                             format_mention_answer(ex.mentions) + "\n\n";
    }
    return expand_template(body(TemplateKind::final_prediction),
                           {{"descriptions_block", descriptions},
                            {"label_set", format_label_list(label_set)},
                            {"examples_block", example_block},
                            {"text", text}});
}

}  // namespace oema
