#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "alarm/model.hpp"

namespace alm {

struct BenchmarkItem {
    std::string id;
    AudioRef audio;
    std::string question;
    std::vector<std::string> choices;
    int answer_index = 0;
    std::string category;

    void validate() const;
};

void to_json(nlohmann::json& j, const BenchmarkItem& item);
void from_json(const nlohmann::json& j, BenchmarkItem& item);

/// JSONL, one item per line; malformed lines, bad answer indices and duplicate ids are parse-errors.
std::vector<BenchmarkItem> load_benchmark(const std::filesystem::path& path);
void write_benchmark(const std::filesystem::path& path, const std::vector<BenchmarkItem>& items);

enum class ExtractionMethod { Letter, Exact, Fallback, Abstain };
std::string to_string(ExtractionMethod m);

struct Extraction {
    std::optional<int> index;
    ExtractionMethod method = ExtractionMethod::Abstain;
};

inline constexpr double kOverlapThreshold = 0.6;

/// Cascade: drop the thinking trace, then choice letter, exact normalized text, token overlap, abstain.
Extraction extract_choice(const std::string& text, const std::vector<std::string>& choices);
/// The text the cascade actually reads: everything after the final "</think>".
std::string strip_thinking(const std::string& text);

/// "(A) ..." letter label for choice i.
std::string choice_label(int index);
std::string format_question(const BenchmarkItem& item, bool include_choices = true);

struct Response {
    std::string text;
    bool truncated = false;
};

/// Produces the generation for one item; throwing marks the item errored.
using Responder = std::function<Response(const BenchmarkItem&, const std::string& prompt)>;

Responder model_responder(const SequenceModel& model, FeatureProvider& features, int max_new_tokens);

struct EvalOptions {
    bool strict = false;
    bool include_choices = true;
};

struct ItemAudit {
    std::string id;
    std::string category;
    std::string raw;
    std::optional<int> extracted;
    ExtractionMethod method = ExtractionMethod::Abstain;
    int answer_index = 0;
    bool correct = false;
    bool truncated = false;
    bool errored = false;
    std::string error;
};

struct CategoryResult {
    int correct = 0;
    int total = 0;
    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

struct EvalReport {
    std::map<std::string, CategoryResult> categories;
    int correct = 0;
    int total = 0;
    int errored = 0;
    int truncated = 0;
    bool strict = false;
    std::vector<ItemAudit> audit;

    double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
    nlohmann::json to_json() const;
};

EvalReport evaluate(const std::vector<BenchmarkItem>& items, const Responder& respond, const EvalOptions& options = {});

} // namespace alm
