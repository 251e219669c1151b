#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "alarm/llm.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <thread>

#include "alarm/error.hpp"
#include "alarm/rng.hpp"

// After Eigen: the resolver headers pulled in here define a `_res` macro.
#include <httplib.h>

namespace alm {

std::string to_string(LlmRole role) { return role == LlmRole::Instruct ? "instruct" : "reasoning"; }

std::string to_string(LlmTask task) {
    switch (task) {
    case LlmTask::Candidate: return "candidate";
    case LlmTask::Answerability: return "answerability";
    case LlmTask::Response: return "response";
    case LlmTask::Rephrase: return "rephrase";
    }
    return "unknown";
}

LlmTask parse_task(const std::string& text) {
    for (auto t : {LlmTask::Candidate, LlmTask::Answerability, LlmTask::Response, LlmTask::Rephrase})
        if (to_string(t) == text) return t;
    throw Error(ErrorKind::InvalidInput, "unknown LLM task '" + text + "'");
}

const std::string& ChatRequest::user_text() const {
    static const std::string empty;
    for (auto it = messages.rbegin(); it != messages.rend(); ++it)
        if (it->role == "user") return it->content;
    return empty;
}

int count_tokens(const std::string& text) {
    std::istringstream in(text);
    std::string word;
    int n = 0;
    while (in >> word) ++n;
    return n;
}

std::string truncate_tokens(const std::string& text, int budget) {
    std::istringstream in(text);
    std::string word, out;
    for (int n = 0; n < budget && in >> word; ++n) {
        if (!out.empty()) out += ' ';
        out += word;
    }
    return out;
}

// ---------------------------------------------------------------- mock

std::vector<MockEntry> parse_mock_table(const nlohmann::json& j) {
    const nlohmann::json& entries = j.is_array() ? j : j.at("entries");
    std::vector<MockEntry> out;
    for (const auto& e : entries) {
        MockEntry m;
        m.task = parse_task(e.at("task").get<std::string>());
        m.contains = e.value("contains", "");
        if (e.contains("responses"))
            m.responses = e["responses"].get<std::vector<std::string>>();
        else if (e.contains("response"))
            m.responses = {e["response"].get<std::string>()};
        m.reasoning = e.value("reasoning", "");
        m.fail = e.value("fail", false);
        if (m.responses.empty() && !m.fail)
            throw Error(ErrorKind::FormatError, "mock entry for task " + to_string(m.task) + " has no response");
        out.push_back(std::move(m));
    }
    return out;
}

MockLlmClient::MockLlmClient(LlmRole role, std::string model_id, std::vector<MockEntry> table)
    : role_(role), model_id_(std::move(model_id)), table_(std::move(table)) {}

MockLlmClient MockLlmClient::from_file(const std::filesystem::path& path, LlmRole role) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot read mock table " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::ParseError, "mock table " + path.string() + ": " + e.what());
    }
    const std::string id = j.is_object() ? j.value("model", "mock-" + to_string(role)) : "mock-" + to_string(role);
    return MockLlmClient(role, id, parse_mock_table(j));
}

namespace {

std::string field(const std::string& text, const std::string& label) {
    const std::string key = label + ": ";
    const auto pos = text.find(key);
    if (pos == std::string::npos) return {};
    const auto start = pos + key.size();
    const auto end = text.find('\n', start);
    return text.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

std::string last_word(const std::string& text) {
    std::string word, last;
    std::istringstream in(text);
    while (in >> word) {
        word.erase(std::remove_if(word.begin(), word.end(), [](unsigned char c) { return std::ispunct(c); }), word.end());
        if (word.size() > 2) last = word;
    }
    return last.empty() ? "sound" : last;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
        s.replace(pos, from.size(), to);
}

std::string mock_candidate(const ChatRequest& r) {
    const std::string desc = field(r.user_text(), "Description");
    const std::string kw = last_word(desc);
    const std::vector<std::string> templates = {
        "What can you hear in this recording?",
        "Describe the main sound events in the clip.",
        "Based on the provided metadata, what is happening in the audio?",
        "What is the overall mood of this audio?",
        "Going by the given description, what stands out in this sound?",
        "Summarize the audio in one sentence.",
        "Which sound source is most prominent?",
        "What is the exact recording date of this clip?",
        "How would you characterize the acoustic environment?",
        "Tell me about the " + kw + " in this audio.",
        "What brand of microphone was used for this recording?",
        "What would a listener notice first about the " + kw + "?",
    };
    const auto h = derive_seed(r.seed, {desc, std::to_string(r.sample)});
    return templates[h % templates.size()];
}

std::string mock_answerability(const ChatRequest& r) {
    nlohmann::json verdicts = nlohmann::json::array();
    std::istringstream in(r.user_text());
    std::string line;
    bool listing = false;
    while (std::getline(in, line)) {
        if (line.rfind("Candidates:", 0) == 0) {
            listing = true;
            continue;
        }
        if (!listing || line.empty()) continue;
        const std::string l = lower(line);
        const bool unanswerable = l.find("recording date") != std::string::npos || l.find("brand") != std::string::npos;
        verdicts.push_back(unanswerable ? "drop" : "keep");
    }
    return verdicts.dump();
}

std::string mock_response(const ChatRequest& r) {
    const std::string desc = field(r.user_text(), "Description");
    const std::string question = field(r.user_text(), "Question");
    return "<think>We are given an audio snippet with metadata: " + desc + " The question is: " + question +
           " The metadata says " + desc + " So the answer follows directly.</think>\nFrom the metadata provided, " +
           desc;
}

const std::vector<std::pair<std::string, std::string>>& rephrase_rules() {
    static const std::vector<std::pair<std::string, std::string>> rules = {
        {"We are given an audio snippet with metadata:", "I hear an audio clip:"},
        {"From the metadata provided,", "From what I hear,"},
        {"The metadata says", "I can hear that"},
        {"provided metadata", "audio"},
        {"given description", "audio"},
        {"metadata", "audio"},
        {"description", "sound"},
    };
    return rules;
}

constexpr int kRephraseNoteTokens = 8;

ChatResponse mock_rephrase(const ChatRequest& r) {
    std::string text = r.user_text();
    std::string reasoning = "Rewriting the response so it describes what is heard.";
    const int budget = r.thinking_budget.value_or(1 << 30);
    const int affordable = std::max(0, (budget - count_tokens(reasoning)) / kRephraseNoteTokens);
    int applied = 0;
    for (const auto& [from, to] : rephrase_rules()) {
        if (text.find(from) == std::string::npos) continue;
        if (applied == affordable) break;
        replace_all(text, from, to);
        reasoning += " Replace the phrase that exposes text input here.";
        ++applied;
    }
    return {text, truncate_tokens(reasoning, budget)};
}

} // namespace

ChatResponse MockLlmClient::complete(const ChatRequest& request) const {
    for (const auto& e : table_) {
        if (e.task != request.task) continue;
        if (!e.contains.empty() && request.user_text().find(e.contains) == std::string::npos) continue;
        if (e.fail) throw Error(ErrorKind::PipelineError, "mock endpoint failure for task " + to_string(request.task));
        const auto idx = static_cast<std::size_t>(request.sample) % e.responses.size();
        std::string reasoning = e.reasoning;
        if (request.thinking_budget) reasoning = truncate_tokens(reasoning, *request.thinking_budget);
        return {e.responses[idx], reasoning};
    }
    switch (request.task) {
    case LlmTask::Candidate: return {mock_candidate(request), {}};
    case LlmTask::Answerability: return {mock_answerability(request), {}};
    case LlmTask::Response: return {mock_response(request), {}};
    case LlmTask::Rephrase: return mock_rephrase(request);
    }
    return {};
}

// ---------------------------------------------------------------- http

HttpLlmClient::HttpLlmClient(LlmRole role, HttpClientOptions options) : role_(role), options_(std::move(options)) {
    const auto scheme_end = options_.endpoint.find("://");
    if (scheme_end == std::string::npos)
        throw Error(ErrorKind::InvalidInput, "endpoint must be an http(s) URL: " + options_.endpoint);
    const auto path_start = options_.endpoint.find('/', scheme_end + 3);
    host_ = options_.endpoint.substr(0, path_start);
    path_ = path_start == std::string::npos ? "" : options_.endpoint.substr(path_start);
    if (path_.empty() || path_ == "/") path_ = "/v1/chat/completions";
    if (options_.model.empty()) options_.model = "default";
}

nlohmann::json HttpLlmClient::request_body(const ChatRequest& request) const {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
    nlohmann::json body = {{"model", options_.model},
                           {"messages", messages},
                           {"temperature", request.temperature},
                           {"seed", request.seed}};
    if (request.thinking_budget) body["thinking_budget"] = *request.thinking_budget;
    return body;
}

ChatResponse HttpLlmClient::complete(const ChatRequest& request) const {
    const std::string body = request_body(request).dump();
    httplib::Headers headers;
    if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);
    auto backoff = options_.initial_backoff;
    std::string last_error;
    for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff *= 2;
        }
        httplib::Client client(host_);
        client.set_read_timeout(options_.timeout);
        client.set_connection_timeout(std::chrono::seconds(10));
        auto res = client.Post(path_, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw Error(ErrorKind::PipelineError, "endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
        try {
            const auto j = nlohmann::json::parse(res->body);
            const auto& message = j.at("choices").at(0).at("message");
            ChatResponse out;
            out.content = message.value("content", "");
            if (message.contains("reasoning_content") && message["reasoning_content"].is_string())
                out.reasoning = message["reasoning_content"].get<std::string>();
            else if (message.contains("reasoning") && message["reasoning"].is_string())
                out.reasoning = message["reasoning"].get<std::string>();
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::PipelineError, std::string("malformed completion: ") + e.what());
        }
    }
    throw Error(ErrorKind::PipelineError,
                "endpoint failed after " + std::to_string(options_.max_retries + 1) + " attempts (" + last_error + ")");
}

} // namespace alm
