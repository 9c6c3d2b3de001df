#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <chrono>
#include <condition_variable>
#include <regex>
#include <thread>

#include "speckernel/engine.hpp"
#include "speckernel/errors.hpp"

namespace speckernel {

using nlohmann::json;

// in-flight cap plus a token bucket refilled at requests_per_second
struct HttpBackend::Limits {
    std::mutex mu;
    std::condition_variable cv;
    int in_flight = 0;
    int max_in_flight = 4;
    double rate = 0;
    double tokens = 1;
    std::chrono::steady_clock::time_point last = std::chrono::steady_clock::now();

    void acquire() {
        std::unique_lock lock(mu);
        cv.wait(lock, [&] { return in_flight < max_in_flight; });
        ++in_flight;
        if (rate <= 0) return;
        for (;;) {
            auto now = std::chrono::steady_clock::now();
            tokens = std::min(1.0, tokens + std::chrono::duration<double>(now - last).count() * rate);
            last = now;
            if (tokens >= 1) {
                tokens -= 1;
                return;
            }
            auto wait = std::chrono::duration<double>((1 - tokens) / rate);
            lock.unlock();
            std::this_thread::sleep_for(wait);
            lock.lock();
        }
    }
    void release() {
        {
            std::lock_guard lock(mu);
            --in_flight;
        }
        cv.notify_one();
    }
};

HttpBackend::HttpBackend(const BackendConfig& cfg) : cfg_(cfg), limits_(std::make_unique<Limits>()) {
    limits_->max_in_flight = std::max(1, cfg.max_in_flight);
    limits_->rate = cfg.requests_per_second;
}

HttpBackend::~HttpBackend() = default;

std::string HttpBackend::complete(Stage, const std::vector<Message>& messages, const std::string&) {
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(cfg_.endpoint_url, m, url_re)) {
        throw BackendUnavailable("bad endpoint_url '" + cfg_.endpoint_url + "'");
    }
    std::string host = m[1].str();
    std::string path = m[2].matched ? m[2].str() : "/";

    json body{{"model", cfg_.model_name}, {"temperature", cfg_.temperature}, {"messages", json::array()}};
    for (const auto& msg : messages) body["messages"].push_back({{"role", msg.role}, {"content", msg.content}});

    httplib::Headers headers;
    if (const char* key = std::getenv("SPECKERNEL_API_KEY"); key && *key) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
    }

    limits_->acquire();
    httplib::Result res;
    try {
        httplib::Client client(host);
        client.set_connection_timeout(30);
        client.set_read_timeout(300);
        res = client.Post(path, headers, body.dump(), "application/json");
    } catch (...) {
        limits_->release();
        throw;
    }
    limits_->release();

    if (!res) throw BackendUnavailable(host + ": " + httplib::to_string(res.error()));
    if (res->status != 200) {
        throw BackendUnavailable(host + " answered HTTP " + std::to_string(res->status));
    }
    try {
        json reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw BackendUnavailable(std::string("unexpected completion payload: ") + e.what());
    }
}

}  // namespace speckernel
