#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "refinery/gateway.hpp"

using namespace refinery;

namespace {

ChatRequest sample_request() {
    ChatRequest r;
    r.model = "gpt-5.2";
    r.messages = {{"system", "[agent:conversion]\nrewrite the problem"},
                  {"user", "do it"}};
    r.temperature = 0.0;
    return r;
}

std::filesystem::path temp_file(const std::string& name) {
    const auto path = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove(path);
    return path;
}

} // namespace

TEST_CASE("sha256 matches the published test vectors") {
    CHECK(sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    // block-boundary lengths
    CHECK(sha256_hex(std::string(55, 'a')) == sha256_hex(std::string(55, 'a')));
    CHECK(sha256_hex(std::string(56, 'a')) != sha256_hex(std::string(55, 'a')));
    CHECK(sha256_hex(std::string(64, 'a')) != sha256_hex(std::string(63, 'a')));
}

TEST_CASE("fingerprint is deterministic and sensitive") {
    const ChatRequest r = sample_request();
    ChatRequest copy = r;
    CHECK(fingerprint(r) == fingerprint(copy));
    CHECK(fingerprint(r).size() == 64);

    SUBCASE("one message edit changes the digest") {
        copy.messages[1].content += "!";
        CHECK(fingerprint(copy) != fingerprint(r));
    }
    SUBCASE("temperature changes the digest") {
        copy.temperature = 0.5;
        CHECK(fingerprint(copy) != fingerprint(r));
    }
    SUBCASE("max_tokens changes the digest") {
        copy.max_tokens = 512;
        CHECK(fingerprint(copy) != fingerprint(r));
    }
    SUBCASE("model changes the digest") {
        copy.model = "other";
        CHECK(fingerprint(copy) != fingerprint(r));
    }
}

TEST_CASE("backends reject requests violating the message invariants") {
    ScriptedBackend backend;
    backend.push_response("x");
    ChatRequest empty;
    empty.model = "m";
    CHECK_THROWS_AS(backend.complete(empty), Error);

    ChatRequest assistant_first = sample_request();
    assistant_first.messages[0].role = "assistant";
    CHECK_THROWS_AS(backend.complete(assistant_first), Error);

    ChatRequest cold = sample_request();
    cold.temperature = -0.1;
    CHECK_THROWS_AS(backend.complete(cold), Error);
    CHECK_NOTHROW(validate_request(sample_request()));
}

TEST_CASE("scripted backend serves the global queue to any request") {
    ScriptedBackend backend;
    backend.push_response("hello");
    const ChatResponse r = backend.complete(sample_request());
    CHECK(r.content == "hello");
    CHECK(r.finish_reason == "stop");
    CHECK_THROWS_AS(backend.complete(sample_request()), Error);
}

TEST_CASE("scripted backend routes by agent tag, FIFO within a tag") {
    ScriptedBackend backend;
    backend.push_response("validator.realism", "first");
    backend.push_response("validator.realism", "second");
    backend.push_response("conversion", "converted");

    ChatRequest realism = sample_request();
    realism.messages[0].content = "[agent:validator.realism]\njudge";
    CHECK(backend.complete(realism).content == "first");
    CHECK(backend.complete(sample_request()).content == "converted");
    CHECK(backend.complete(realism).content == "second");

    CHECK(backend.call_count() == 3);
    const auto tags = backend.call_tags();
    CHECK(tags == std::vector<std::string>{"validator.realism", "conversion",
                                           "validator.realism"});
    try {
        backend.complete(realism);
        FAIL("expected ScriptExhausted");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ScriptExhausted);
    }
}

TEST_CASE("scripted backend default handler fires when the queue drains") {
    ScriptedBackend backend;
    backend.push_response("conversion", "queued");
    backend.set_default_handler("conversion", [](const ChatRequest& r) {
        return "echo:" + r.messages.back().content;
    });
    ChatRequest req = sample_request();
    CHECK(backend.complete(req).content == "queued");
    CHECK(backend.complete(req).content == "echo:do it");
    CHECK(backend.complete(req).content == "echo:do it");
}

TEST_CASE("record then replay returns identical responses; unseen misses") {
    const auto cache = temp_file("refinery_gateway_cache.jsonl");

    ScriptedBackend inner;
    inner.push_response("one");
    inner.push_response("two");
    RecordBackend recorder(inner, cache);

    ChatRequest r1 = sample_request();
    ChatRequest r2 = sample_request();
    r2.messages[1].content = "something else";

    const ChatResponse a = recorder.complete(r1);
    const ChatResponse b = recorder.complete(r2);
    CHECK(a.content == "one");
    CHECK(b.content == "two");

    ReplayBackend replay(cache);
    CHECK(replay.complete(r1).content == "one");
    CHECK(replay.complete(r2).content == "two");
    CHECK(response_to_json(replay.complete(r1)) == response_to_json(a));

    ChatRequest unseen = sample_request();
    unseen.messages[1].content = "never recorded";
    try {
        replay.complete(unseen);
        FAIL("expected CacheMiss");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::CacheMiss);
    }

    // cache file is one JSON record per line
    std::ifstream in(cache);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        ++lines;
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("fp"));
        CHECK(j.contains("request"));
        CHECK(j.contains("response"));
    }
    CHECK(lines == 2);
    std::filesystem::remove(cache);
}

TEST_CASE("replay of a missing cache file is empty, not an error") {
    ReplayBackend replay(temp_file("refinery_definitely_missing.jsonl"));
    CHECK_THROWS_AS(replay.complete(sample_request()), Error);
}

TEST_CASE("live backend retries 5xx and timeouts, then succeeds") {
    int calls = 0;
    int sleeps = 0;
    const std::string ok_body = nlohmann::json{
        {"choices",
         nlohmann::json::array(
             {{{"message", {{"role", "assistant"}, {"content", "fine"}}},
               {"finish_reason", "stop"}}})},
        {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}}.dump();

    LiveConfig config;
    config.base_url = "http://unused";
    config.api_key = "k";
    LiveBackend backend(
        config,
        [&](const std::string& path, const std::string&, const std::string& token) {
            CHECK(path == "/v1/chat/completions");
            CHECK(token == "k");
            ++calls;
            if (calls == 1) return HttpResult{0, "", "timeout"};
            if (calls == 2) return HttpResult{503, "oops", ""};
            return HttpResult{200, ok_body, ""};
        },
        [&](std::chrono::milliseconds) { ++sleeps; });

    const ChatResponse r = backend.complete(sample_request());
    CHECK(r.content == "fine");
    CHECK(r.finish_reason == "stop");
    REQUIRE(r.usage.has_value());
    CHECK(r.usage->prompt_tokens == 12);
    CHECK(calls == 3);
    CHECK(sleeps == 2);
}

TEST_CASE("live backend gives up after the retry budget") {
    int calls = 0;
    LiveConfig config;
    config.base_url = "http://unused";
    config.api_key = "k";
    config.retry.attempts = 3;
    LiveBackend backend(
        config,
        [&](const std::string&, const std::string&, const std::string&) {
            ++calls;
            return HttpResult{429, "slow down", ""};
        },
        [](std::chrono::milliseconds) {});
    try {
        backend.complete(sample_request());
        FAIL("expected TransportError");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::TransportError);
    }
    CHECK(calls == 3);
}

TEST_CASE("live backend never retries non-429 4xx") {
    int calls = 0;
    LiveConfig config;
    config.base_url = "http://unused";
    config.api_key = "k";
    SUBCASE("400 fails immediately") {
        LiveBackend backend(
            config,
            [&](const std::string&, const std::string&, const std::string&) {
                ++calls;
                return HttpResult{400, "bad request", ""};
            },
            [](std::chrono::milliseconds) {});
        CHECK_THROWS_AS(backend.complete(sample_request()), Error);
        CHECK(calls == 1);
    }
    SUBCASE("401 raises AuthError immediately") {
        LiveBackend backend(
            config,
            [&](const std::string&, const std::string&, const std::string&) {
                ++calls;
                return HttpResult{401, "nope", ""};
            },
            [](std::chrono::milliseconds) {});
        try {
            backend.complete(sample_request());
            FAIL("expected AuthError");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::AuthError);
        }
        CHECK(calls == 1);
    }
}

TEST_CASE("live backend sends the wire-format body") {
    std::string seen_body;
    LiveConfig config;
    config.base_url = "http://unused";
    config.api_key = "secret";
    LiveBackend backend(
        config,
        [&](const std::string&, const std::string& body, const std::string&) {
            seen_body = body;
            return HttpResult{200,
                              R"({"choices":[{"message":{"content":"x"},"finish_reason":"stop"}]})",
                              ""};
        },
        [](std::chrono::milliseconds) {});
    ChatRequest r = sample_request();
    r.max_tokens = 256;
    backend.complete(r);

    const auto j = nlohmann::json::parse(seen_body);
    CHECK(j["model"] == "gpt-5.2");
    CHECK(j["temperature"] == 0.0);
    CHECK(j["max_tokens"] == 256);
    REQUIRE(j["messages"].size() == 2);
    CHECK(j["messages"][0]["role"] == "system");
    CHECK(j["messages"][1]["content"] == "do it");
}

TEST_CASE("live backend speaks the chat-completions wire protocol over a socket") {
    httplib::Server server;
    std::string seen_auth, seen_path, seen_body;
    server.Post("/v1/chat/completions",
                [&](const httplib::Request& req, httplib::Response& res) {
                    seen_auth = req.get_header_value("Authorization");
                    seen_path = req.path;
                    seen_body = req.body;
                    if (seen_auth != "Bearer good-key") {
                        res.status = 401;
                        res.set_content("{}", "application/json");
                        return;
                    }
                    const nlohmann::json reply{
                        {"choices",
                         nlohmann::json::array(
                             {{{"message", {{"role", "assistant"}, {"content", "served"}}},
                               {"finish_reason", "stop"}}})},
                        {"usage", {{"prompt_tokens", 5}, {"completion_tokens", 2}}}};
                    res.set_content(reply.dump(), "application/json");
                });
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    const std::string base_url = "http://127.0.0.1:" + std::to_string(port);

    SUBCASE("success path") {
        LiveConfig config;
        config.base_url = base_url;
        config.api_key = "good-key";
        LiveBackend backend(config);
        const ChatResponse r = backend.complete(sample_request());
        CHECK(r.content == "served");
        REQUIRE(r.usage.has_value());
        CHECK(r.usage->completion_tokens == 2);
        CHECK(seen_path == "/v1/chat/completions");
        CHECK(seen_auth == "Bearer good-key");
        const auto body = nlohmann::json::parse(seen_body);
        CHECK(body["model"] == "gpt-5.2");
        CHECK(body["messages"].size() == 2);
        CHECK(body["temperature"] == 0.0);
    }
    SUBCASE("rejected credential") {
        LiveConfig config;
        config.base_url = base_url;
        config.api_key = "bad-key";
        LiveBackend backend(config);
        try {
            backend.complete(sample_request());
            FAIL("expected AuthError");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::AuthError);
        }
    }

    server.stop();
    listener.join();
}

TEST_CASE("scripted backend is safe under concurrent completion") {
    ScriptedBackend backend;
    backend.set_default_handler("conversion", [](const ChatRequest&) { return "ok"; });
    std::vector<std::thread> threads;
    std::atomic<int> successes{0};
    for (int t = 0; t < 8; ++t) {
        threads.emplace_back([&] {
            for (int i = 0; i < 200; ++i) {
                if (backend.complete(sample_request()).content == "ok") ++successes;
            }
        });
    }
    for (auto& t : threads) t.join();
    CHECK(successes == 1600);
    CHECK(backend.call_count() == 1600);
}
