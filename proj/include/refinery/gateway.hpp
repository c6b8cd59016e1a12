#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "refinery/errors.hpp"

namespace refinery {

struct ChatMessage {
    std::string role; // "system" | "user" | "assistant"
    std::string content;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::optional<int> max_tokens;
};

struct TokenUsage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct ChatResponse {
    std::string content;
    std::string finish_reason = "stop";
    std::optional<TokenUsage> usage;
};

enum class BackendKind {
    Live,
    Scripted,
    Replay,
};

// messages nonempty, first role system or user, temperature >= 0
void validate_request(const ChatRequest& request);

nlohmann::json request_to_json(const ChatRequest& request);
ChatRequest request_from_json(const nlohmann::json& j);
nlohmann::json response_to_json(const ChatResponse& response);
ChatResponse response_from_json(const nlohmann::json& j);

// SHA-256 hex digest over the canonical (key-sorted) JSON serialization of
// (model, messages, temperature, max_tokens).
std::string fingerprint(const ChatRequest& request);

std::string sha256_hex(const std::string& data); // exposed for tests

// Chat-completion backend. complete() must be safe to call concurrently.
class Backend {
public:
    virtual ~Backend() = default;
    virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// Deterministic backend for tests and desk runs. Responses are registered per
// agent tag (extracted from the "[agent:<tag>]" stamp in the system message)
// and consumed FIFO within a tag; a tag may also carry a default handler used
// once its queue is empty. Untagged pushes land in a global fallback queue.
class ScriptedBackend : public Backend {
public:
    using Handler = std::function<std::string(const ChatRequest&)>;

    void push_response(const std::string& content);                         // global queue
    void push_response(const std::string& tag, const std::string& content); // per-tag queue
    void push_handler(const std::string& tag, Handler handler);             // per-tag queue
    void set_default_handler(const std::string& tag, Handler handler);

    ChatResponse complete(const ChatRequest& request) override;

    // observed requests and the tags they resolved to, in arrival order
    std::vector<ChatRequest> requests() const;
    std::vector<std::string> call_tags() const;
    int call_count() const;
    void clear_log();

    static std::string extract_tag(const ChatRequest& request);

private:
    mutable std::mutex mutex_;
    std::unordered_map<std::string, std::vector<Handler>> queues_;
    std::unordered_map<std::string, Handler> defaults_;
    std::vector<Handler> global_queue_;
    std::vector<ChatRequest> log_;
    std::vector<std::string> tag_log_;
};

// Append-only JSONL store of {"fp", "request", "response"} records.
class CacheStore {
public:
    CacheStore() = default;
    // Loads every record in the file; a missing file yields an empty store.
    explicit CacheStore(const std::filesystem::path& path);

    bool contains(const std::string& fp) const;
    std::optional<ChatResponse> find(const std::string& fp) const;
    std::size_t size() const;

    // Appends one record and flushes before returning.
    void append(const std::filesystem::path& path, const std::string& fp,
                const ChatRequest& request, const ChatResponse& response);

private:
    mutable std::mutex mutex_;
    std::unordered_map<std::string, nlohmann::json> records_;
};

// Strict replay: an unseen fingerprint is an error, never a fallthrough.
class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(const std::filesystem::path& cache_path);
    ChatResponse complete(const ChatRequest& request) override;

private:
    CacheStore cache_;
};

// Write-through recorder layered over any inner backend.
class RecordBackend : public Backend {
public:
    RecordBackend(Backend& inner, std::filesystem::path cache_path);
    ChatResponse complete(const ChatRequest& request) override;

private:
    Backend& inner_;
    std::filesystem::path cache_path_;
    CacheStore cache_;
};

struct HttpResult {
    int status = 0;
    std::string body;
    std::string error; // nonempty = transport-level failure (no HTTP response)
};

// (path, body, bearer_token) -> result
using HttpPostFn =
    std::function<HttpResult(const std::string&, const std::string&, const std::string&)>;

using SleepFn = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds base_delay{1000}; // doubled per retry, +/-20% jitter
    double jitter = 0.2;
};

struct LiveConfig {
    std::string base_url; // e.g. "http://localhost:8080"
    std::string api_key;
    RetryPolicy retry;
};

// OpenAI-compatible chat-completions client. Retries timeouts, 429 and 5xx
// with exponential backoff; other 4xx fail immediately (401/403 as AuthError).
class LiveBackend : public Backend {
public:
    explicit LiveBackend(LiveConfig config);
    // Transport and sleep are injectable for tests.
    LiveBackend(LiveConfig config, HttpPostFn transport, SleepFn sleep);

    ChatResponse complete(const ChatRequest& request) override;

private:
    LiveConfig config_;
    HttpPostFn transport_;
    SleepFn sleep_;
};

} // namespace refinery
