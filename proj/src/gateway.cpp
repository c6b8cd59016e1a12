#include "refinery/gateway.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace refinery {

// --- SHA-256 (FIPS 180-4) ----------------------------------------------------

namespace {

constexpr std::array<uint32_t, 64> kSha256K = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1,
    0x923f82a4, 0xab1c5ed5, 0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3,
    0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174, 0xe49b69c1, 0xefbe4786,
    0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147,
    0x06ca6351, 0x14292967, 0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13,
    0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85, 0xa2bfe8a1, 0xa81a664b,
    0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a,
    0x5b9cca4f, 0x682e6ff3, 0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208,
    0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

inline uint32_t rotr(uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

void sha256_block(std::array<uint32_t, 8>& state, const unsigned char* block) {
    uint32_t w[64];
    for (int i = 0; i < 16; ++i) {
        w[i] = (uint32_t(block[i * 4]) << 24) | (uint32_t(block[i * 4 + 1]) << 16) |
               (uint32_t(block[i * 4 + 2]) << 8) | uint32_t(block[i * 4 + 3]);
    }
    for (int i = 16; i < 64; ++i) {
        const uint32_t s0 = rotr(w[i - 15], 7) ^ rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
        const uint32_t s1 = rotr(w[i - 2], 17) ^ rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
        w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    auto [a, b, c, d, e, f, g, h] = state;
    for (int i = 0; i < 64; ++i) {
        const uint32_t s1 = rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25);
        const uint32_t ch = (e & f) ^ (~e & g);
        const uint32_t t1 = h + s1 + ch + kSha256K[i] + w[i];
        const uint32_t s0 = rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22);
        const uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
        const uint32_t t2 = s0 + maj;
        h = g; g = f; f = e; e = d + t1;
        d = c; c = b; b = a; a = t1 + t2;
    }
    state[0] += a; state[1] += b; state[2] += c; state[3] += d;
    state[4] += e; state[5] += f; state[6] += g; state[7] += h;
}

} // namespace

std::string sha256_hex(const std::string& data) {
    std::array<uint32_t, 8> state = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                                     0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
    const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
    std::size_t n = data.size();
    std::size_t pos = 0;
    while (n - pos >= 64) {
        sha256_block(state, bytes + pos);
        pos += 64;
    }
    unsigned char tail[128] = {0};
    const std::size_t rest = n - pos;
    std::memcpy(tail, bytes + pos, rest);
    tail[rest] = 0x80;
    const std::size_t tail_len = rest + 9 <= 64 ? 64 : 128;
    const uint64_t bit_len = uint64_t(n) * 8;
    for (int i = 0; i < 8; ++i) {
        tail[tail_len - 1 - i] = static_cast<unsigned char>(bit_len >> (8 * i));
    }
    sha256_block(state, tail);
    if (tail_len == 128) sha256_block(state, tail + 64);

    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (uint32_t word : state) {
        for (int shift = 28; shift >= 0; shift -= 4) {
            out.push_back(hex[(word >> shift) & 0xf]);
        }
    }
    return out;
}

// --- request/response wire forms ---------------------------------------------

void validate_request(const ChatRequest& request) {
    if (request.messages.empty())
        throw Error(ErrorKind::Precondition, "request has no messages");
    const std::string& first = request.messages.front().role;
    if (first != "system" && first != "user")
        throw Error(ErrorKind::Precondition,
                    "first message role must be system or user, got '" + first + "'");
    if (request.temperature < 0.0)
        throw Error(ErrorKind::Precondition, "temperature must be >= 0");
}

nlohmann::json request_to_json(const ChatRequest& request) {
    nlohmann::json messages = nlohmann::json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    nlohmann::json j{{"model", request.model},
                     {"messages", std::move(messages)},
                     {"temperature", request.temperature}};
    if (request.max_tokens) j["max_tokens"] = *request.max_tokens;
    return j;
}

ChatRequest request_from_json(const nlohmann::json& j) {
    ChatRequest r;
    r.model = j.at("model").get<std::string>();
    for (const auto& m : j.at("messages")) {
        r.messages.push_back({m.at("role").get<std::string>(),
                              m.at("content").get<std::string>()});
    }
    r.temperature = j.value("temperature", 0.0);
    if (j.contains("max_tokens")) r.max_tokens = j.at("max_tokens").get<int>();
    return r;
}

nlohmann::json response_to_json(const ChatResponse& response) {
    nlohmann::json j{{"content", response.content},
                     {"finish_reason", response.finish_reason}};
    if (response.usage) {
        j["usage"] = {{"prompt_tokens", response.usage->prompt_tokens},
                      {"completion_tokens", response.usage->completion_tokens}};
    }
    return j;
}

ChatResponse response_from_json(const nlohmann::json& j) {
    ChatResponse r;
    r.content = j.at("content").get<std::string>();
    r.finish_reason = j.value("finish_reason", "stop");
    if (j.contains("usage")) {
        r.usage = TokenUsage{j["usage"].value("prompt_tokens", 0),
                             j["usage"].value("completion_tokens", 0)};
    }
    return r;
}

std::string fingerprint(const ChatRequest& request) {
    // nlohmann keeps object keys sorted, so dump() is canonical.
    return sha256_hex(request_to_json(request).dump());
}

// --- scripted backend ---------------------------------------------------------

std::string ScriptedBackend::extract_tag(const ChatRequest& request) {
    for (const auto& m : request.messages) {
        if (m.role != "system") continue;
        const auto start = m.content.find("[agent:");
        if (start == std::string::npos) continue;
        const auto end = m.content.find(']', start);
        if (end == std::string::npos) continue;
        return m.content.substr(start + 7, end - start - 7);
    }
    return "";
}

void ScriptedBackend::push_response(const std::string& content) {
    std::lock_guard lock(mutex_);
    global_queue_.push_back([content](const ChatRequest&) { return content; });
}

void ScriptedBackend::push_response(const std::string& tag, const std::string& content) {
    std::lock_guard lock(mutex_);
    queues_[tag].push_back([content](const ChatRequest&) { return content; });
}

void ScriptedBackend::push_handler(const std::string& tag, Handler handler) {
    std::lock_guard lock(mutex_);
    queues_[tag].push_back(std::move(handler));
}

void ScriptedBackend::set_default_handler(const std::string& tag, Handler handler) {
    std::lock_guard lock(mutex_);
    defaults_[tag] = std::move(handler);
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
    validate_request(request);
    Handler handler;
    const std::string tag = extract_tag(request);
    {
        std::lock_guard lock(mutex_);
        log_.push_back(request);
        tag_log_.push_back(tag);
        if (auto it = queues_.find(tag); it != queues_.end() && !it->second.empty()) {
            handler = std::move(it->second.front());
            it->second.erase(it->second.begin());
        } else if (auto dit = defaults_.find(tag); dit != defaults_.end()) {
            handler = dit->second;
        } else if (!global_queue_.empty()) {
            handler = std::move(global_queue_.front());
            global_queue_.erase(global_queue_.begin());
        }
    }
    if (!handler)
        throw Error(ErrorKind::ScriptExhausted,
                    "no scripted response for tag '" + tag + "'");
    ChatResponse r;
    r.content = handler(request);
    r.finish_reason = "stop";
    return r;
}

std::vector<ChatRequest> ScriptedBackend::requests() const {
    std::lock_guard lock(mutex_);
    return log_;
}

std::vector<std::string> ScriptedBackend::call_tags() const {
    std::lock_guard lock(mutex_);
    return tag_log_;
}

int ScriptedBackend::call_count() const {
    std::lock_guard lock(mutex_);
    return static_cast<int>(log_.size());
}

void ScriptedBackend::clear_log() {
    std::lock_guard lock(mutex_);
    log_.clear();
    tag_log_.clear();
}

// --- record/replay cache -------------------------------------------------------

CacheStore::CacheStore(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::ParseError,
                        path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        records_[j.at("fp").get<std::string>()] = j;
    }
}

bool CacheStore::contains(const std::string& fp) const {
    std::lock_guard lock(mutex_);
    return records_.count(fp) > 0;
}

std::optional<ChatResponse> CacheStore::find(const std::string& fp) const {
    std::lock_guard lock(mutex_);
    const auto it = records_.find(fp);
    if (it == records_.end()) return std::nullopt;
    return response_from_json(it->second.at("response"));
}

std::size_t CacheStore::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

void CacheStore::append(const std::filesystem::path& path, const std::string& fp,
                        const ChatRequest& request, const ChatResponse& response) {
    nlohmann::json record{{"fp", fp},
                          {"request", request_to_json(request)},
                          {"response", response_to_json(response)}};
    std::lock_guard lock(mutex_);
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error(ErrorKind::IoError, "cannot open cache file " + path.string());
    out << record.dump() << '\n';
    out.flush();
    records_[fp] = std::move(record);
}

ReplayBackend::ReplayBackend(const std::filesystem::path& cache_path)
    : cache_(cache_path) {}

ChatResponse ReplayBackend::complete(const ChatRequest& request) {
    validate_request(request);
    const std::string fp = fingerprint(request);
    if (auto r = cache_.find(fp)) return *r;
    throw Error(ErrorKind::CacheMiss, "no cached response for fingerprint " + fp);
}

RecordBackend::RecordBackend(Backend& inner, std::filesystem::path cache_path)
    : inner_(inner), cache_path_(std::move(cache_path)), cache_(cache_path_) {}

ChatResponse RecordBackend::complete(const ChatRequest& request) {
    validate_request(request);
    const ChatResponse response = inner_.complete(request);
    cache_.append(cache_path_, fingerprint(request), request, response);
    return response;
}

// --- live backend ----------------------------------------------------------------

namespace {

HttpPostFn make_httplib_transport(const std::string& base_url) {
    return [base_url](const std::string& path, const std::string& body,
                      const std::string& token) -> HttpResult {
        // one client per call; cpp-httplib clients are not safe to share
        httplib::Client client(base_url);
        client.set_connection_timeout(30, 0);
        client.set_read_timeout(120, 0);
        httplib::Headers headers;
        if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) return {0, "", httplib::to_string(res.error())};
        return {res->status, res->body, ""};
    };
}

std::chrono::milliseconds jittered_delay(const RetryPolicy& policy, int retry_index) {
    const double base =
        static_cast<double>(policy.base_delay.count()) * std::pow(2.0, retry_index);
    thread_local std::mt19937 rng{std::random_device{}()};
    std::uniform_real_distribution<double> dist(1.0 - policy.jitter, 1.0 + policy.jitter);
    return std::chrono::milliseconds(static_cast<long>(base * dist(rng)));
}

bool retryable_status(int status) {
    return status == 429 || (status >= 500 && status < 600);
}

} // namespace

LiveBackend::LiveBackend(LiveConfig config)
    : LiveBackend(config, make_httplib_transport(config.base_url),
                  [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

LiveBackend::LiveBackend(LiveConfig config, HttpPostFn transport, SleepFn sleep)
    : config_(std::move(config)), transport_(std::move(transport)),
      sleep_(std::move(sleep)) {}

ChatResponse LiveBackend::complete(const ChatRequest& request) {
    validate_request(request);
    const std::string body = request_to_json(request).dump();
    std::string last_failure;
    for (int attempt = 0; attempt < config_.retry.attempts; ++attempt) {
        if (attempt > 0) sleep_(jittered_delay(config_.retry, attempt - 1));

        const HttpResult res = transport_("/v1/chat/completions", body, config_.api_key);
        if (!res.error.empty()) {
            last_failure = "transport: " + res.error;
            continue;
        }
        if (res.status == 401 || res.status == 403)
            throw Error(ErrorKind::AuthError,
                        "credential rejected (HTTP " + std::to_string(res.status) + ")");
        if (retryable_status(res.status)) {
            last_failure = "HTTP " + std::to_string(res.status);
            continue;
        }
        if (res.status != 200)
            throw Error(ErrorKind::TransportError,
                        "HTTP " + std::to_string(res.status) + ": " + res.body);

        try {
            const nlohmann::json j = nlohmann::json::parse(res.body);
            const auto& choice = j.at("choices").at(0);
            ChatResponse out;
            out.content = choice.at("message").value("content", "");
            out.finish_reason = choice.value("finish_reason", "stop");
            if (j.contains("usage")) {
                out.usage = TokenUsage{j["usage"].value("prompt_tokens", 0),
                                       j["usage"].value("completion_tokens", 0)};
            }
            return out;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::TransportError,
                        std::string("unparseable completion response: ") + e.what());
        }
    }
    throw Error(ErrorKind::TransportError,
                "retries exhausted after " + std::to_string(config_.retry.attempts) +
                    " attempts (" + last_failure + ")");
}

} // namespace refinery
