#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace alm {

enum class LlmRole { Instruct, Reasoning };

/// What a request is for; mock tables and procedural fallbacks key on it.
enum class LlmTask { Candidate, Answerability, Response, Rephrase };

std::string to_string(LlmRole role);
std::string to_string(LlmTask task);
LlmTask parse_task(const std::string& text);

struct ChatMessage {
    std::string role;
    std::string content;
};

struct ChatRequest {
    LlmTask task = LlmTask::Candidate;
    std::vector<ChatMessage> messages;
    double temperature = 0.7;
    std::uint64_t seed = 0;
    /// Draw index within a repeated sampling loop (candidate j, retry attempt).
    int sample = 0;
    std::optional<int> thinking_budget;

    const std::string& user_text() const;
};

struct ChatResponse {
    std::string content;
    /// The model's own thinking trace when the endpoint returns it separately.
    std::string reasoning;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;
    virtual LlmRole role() const = 0;
    virtual std::string model_id() const = 0;
    /// Throws pipeline-error when the endpoint cannot produce a response.
    virtual ChatResponse complete(const ChatRequest& request) const = 0;
};

struct MockEntry {
    LlmTask task = LlmTask::Candidate;
    /// Matches when the user message contains this substring (empty matches everything).
    std::string contains;
    /// Picked by request.sample modulo size.
    std::vector<std::string> responses;
    std::string reasoning;
    /// Simulates an endpoint outage for matching requests.
    bool fail = false;
};

/// Deterministic stand-in: table entries first (in file order), otherwise a procedural reply
/// derived only from the request contents.
class MockLlmClient : public LlmClient {
public:
    MockLlmClient(LlmRole role, std::string model_id, std::vector<MockEntry> table = {});
    static MockLlmClient from_file(const std::filesystem::path& path, LlmRole role);

    LlmRole role() const override { return role_; }
    std::string model_id() const override { return model_id_; }
    ChatResponse complete(const ChatRequest& request) const override;

private:
    LlmRole role_;
    std::string model_id_;
    std::vector<MockEntry> table_;
};

std::vector<MockEntry> parse_mock_table(const nlohmann::json& j);

struct HttpClientOptions {
    std::string endpoint;
    std::string model;
    std::string api_key;
    int max_retries = 4;
    std::chrono::milliseconds initial_backoff{200};
    std::chrono::seconds timeout{120};
};

/// OpenAI-style chat completion endpoint; the thinking budget travels as "thinking_budget".
class HttpLlmClient : public LlmClient {
public:
    HttpLlmClient(LlmRole role, HttpClientOptions options);

    LlmRole role() const override { return role_; }
    std::string model_id() const override { return options_.model; }
    ChatResponse complete(const ChatRequest& request) const override;

    nlohmann::json request_body(const ChatRequest& request) const;

private:
    LlmRole role_;
    HttpClientOptions options_;
    std::string host_;
    std::string path_;
};

/// Whitespace-delimited token count used for thinking budgets.
int count_tokens(const std::string& text);
/// First `budget` whitespace tokens of `text`, single-space joined.
std::string truncate_tokens(const std::string& text, int budget);

} // namespace alm
