#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "alarm/encoder_bank.hpp"
#include "alarm/error.hpp"
#include "alarm/llm.hpp"
#include "alarm/trainer.hpp"

namespace alm {

enum class Domain { Speech, Sound, Music, Instruction };

std::string to_string(Domain d);
Domain parse_domain(const std::string& text);

struct MetadataRecord {
    std::string id;
    AudioRef audio;
    std::string a_text;
    Domain domain = Domain::Sound;
    /// Optional context; instruction records may carry "transcription" (the spoken query) and "context".
    nlohmann::json extras = nlohmann::json::object();
    /// Explicit partition ("train" or "val") that overrides random splitting.
    std::optional<std::string> split;

    void validate() const;
};

struct Provenance {
    std::string generator;
    std::string rephraser;
    int budget = 0;
    int budget_used = 0;
    std::uint64_t seed = 0;
};

struct CorpusRecord {
    std::string id;
    AudioRef audio;
    Domain domain = Domain::Sound;
    std::string prompt;
    std::string r0;
    std::string r_text;
    bool rephrase_skipped = false;
    int candidates_kept = 0;
    std::optional<std::string> split;
    Provenance provenance;

    void validate() const;
};

void to_json(nlohmann::json& j, const MetadataRecord& r);
void from_json(const nlohmann::json& j, MetadataRecord& r);
void to_json(nlohmann::json& j, const CorpusRecord& r);
void from_json(const nlohmann::json& j, CorpusRecord& r);

/// Manifest JSONL lines {id, audio, duration, a_text, domain, extras?, split?, seed?}.
std::vector<MetadataRecord> load_manifest(const std::filesystem::path& path);
std::vector<CorpusRecord> load_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const std::vector<CorpusRecord>& records);

struct FilterRules {
    std::vector<std::string> banned_phrases = {"provided metadata", "given description"};
    std::string candidate_instruction =
        "Write one question or instruction a listener could ask about this audio. Vary the style and language.";
    std::string answerability_instruction =
        "For each candidate, answer keep if it can be answered from the description and does not reveal that the "
        "input is text; otherwise drop. Reply with a JSON array of keep/drop.";
    std::string response_instruction = "Answer the question about the audio.";
    std::string rephrase_instruction =
        "Rewrite the response, including its reasoning, as if you heard the audio yourself. Never mention text, "
        "metadata or descriptions.";
    int budget = 1536;
    double temperature = 0.7;
    /// Decoding temperature for the answerability check.
    double filter_temperature = 0.0;

    /// Lower-cases the banned list and checks the budget.
    void normalize();
};

void to_json(nlohmann::json& j, const FilterRules& r);
void from_json(const nlohmann::json& j, FilterRules& r);
FilterRules load_rules(const std::filesystem::path& path);

/// Exactly n prompts conditioned on (a_text, I); empty generations are redrawn up to retry_cap times.
std::vector<std::string> generate_candidates(const MetadataRecord& rec, const LlmClient& q, const FilterRules& rules,
                                             int n, std::uint64_t seed, int retry_cap = 3);

bool contains_banned_phrase(const std::string& text, const FilterRules& rules);

/// Banned-phrase removal first, then one structured answerability request for the survivors.
std::vector<std::string> filter_candidates(const std::vector<std::string>& candidates, const MetadataRecord& rec,
                                           const LlmClient& q, const FilterRules& rules, std::uint64_t seed);

std::size_t select_index(std::size_t count, const std::string& record_id, std::uint64_t seed);
std::string select_prompt(const std::vector<std::string>& filtered, const std::string& record_id, std::uint64_t seed);

std::string generate_initial_response(const MetadataRecord& rec, const std::string& prompt, const LlmClient& qr,
                                      const FilterRules& rules, std::uint64_t seed);

struct RephraseResult {
    std::string r_text;
    bool skipped = false;
    int budget_used = 0;
};

/// The prompt is the exact transcription of an instruction record's spoken query.
bool is_transcription_prompt(const MetadataRecord& rec, const std::string& prompt);

RephraseResult rephrase_response(const MetadataRecord& rec, const std::string& prompt, const std::string& r0,
                                 const FilterRules& rules, const LlmClient& qr, std::uint64_t seed);

struct BuildOptions {
    int candidates = 20;
    int concurrency = 1;
    std::uint64_t seed = 0;
    int retry_cap = 3;
    bool resume = true;
};

CorpusRecord process_record(const MetadataRecord& rec, const LlmClient& q, const LlmClient& qr,
                            const FilterRules& rules, const BuildOptions& options);

struct ParkedRecord {
    std::string id;
    ErrorKind reason = ErrorKind::PipelineError;
    std::string message;
};

struct BuildReport {
    std::size_t total = 0;
    std::size_t written = 0;
    std::size_t resumed = 0;
    std::vector<ParkedRecord> parked;

    nlohmann::json to_json() const;
};

/// Processes records concurrently and commits them to `out` in manifest order; an existing output is
/// resumed (a torn final line is discarded).
BuildReport build_corpus(const std::vector<MetadataRecord>& manifest, const LlmClient& q, const LlmClient& qr,
                         const FilterRules& rules, const BuildOptions& options, const std::filesystem::path& out);

struct CorpusSplit {
    std::vector<CorpusRecord> train;
    std::vector<CorpusRecord> validation;
};

/// Per-domain stratified split; explicit split fields are honored as-is.
CorpusSplit split_corpus(const std::vector<CorpusRecord>& corpus, double val_frac, std::uint64_t seed);

std::vector<TrainExample> to_train_examples(const std::vector<CorpusRecord>& records);

} // namespace alm
