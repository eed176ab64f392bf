#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include <httplib.h>

#include "scenekg/error.hpp"
#include "scenekg/json_io.hpp"
#include "scenekg/session.hpp"

namespace scenekg {

/// The first fenced code block or FINAL(...) line of a completion, whichever
/// comes first. Falls back to the whole trimmed reply.
inline std::string extract_action(std::string_view completion) {
    const auto fence = completion.find("```");
    std::size_t final_pos = std::string_view::npos;
    for (std::size_t p = completion.find("FINAL("); p != std::string_view::npos; p = completion.find("FINAL(", p + 1)) {
        if (p == 0 || completion[p - 1] == '\n' || completion[p - 1] == ' ' || completion[p - 1] == '\t') {
            final_pos = p;
            break;
        }
    }
    if (final_pos != std::string_view::npos && (fence == std::string_view::npos || final_pos < fence)) {
        const auto eol = completion.find('\n', final_pos);
        return detail::trim(completion.substr(final_pos, eol == std::string_view::npos ? eol : eol - final_pos));
    }
    if (fence != std::string_view::npos) {
        // Skip an optional language tag on the opening fence line.
        auto body = completion.find('\n', fence + 3);
        if (body != std::string_view::npos) {
            const auto close = completion.find("```", body + 1);
            return detail::trim(completion.substr(body + 1, close == std::string_view::npos ? close : close - body - 1));
        }
    }
    return detail::trim(completion);
}

/// Sends {"prompt": ...} to an HTTP endpoint and reads {"completion": ...}.
/// One request per step, retried on transport failure.
class RemotePlanner : public Planner {
public:
    RemotePlanner(std::string url, double timeout_s, int retries)
        : timeout_s_(timeout_s), retries_(retries) {
        const auto scheme_end = url.find("://");
        const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
        base_ = path_start == std::string::npos ? url : url.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
    }

    std::string next_action(const std::string& prompt) override {
        httplib::Client client(base_);
        const auto secs = std::chrono::duration<double>(timeout_s_);
        const auto us = std::chrono::duration_cast<std::chrono::microseconds>(secs);
        client.set_connection_timeout(us);
        client.set_read_timeout(us);
        client.set_write_timeout(us);
        const std::string body = ObjectWriter().field("prompt", prompt).str();
        std::string last_error = "no attempt made";
        for (int attempt = 0; attempt <= retries_; ++attempt) {
            auto res = client.Post(path_, body, "application/json");
            if (!res) {
                last_error = "request to " + base_ + path_ + " failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_error = "planner endpoint returned HTTP " + std::to_string(res->status);
                continue;
            }
            try {
                const auto doc = json::parse(res->body);
                if (!doc.is_object() || !doc.contains("completion") || !doc["completion"].is_string())
                    fail(ErrorKind::transport, "planner reply lacks a string 'completion' field");
                return extract_action(doc["completion"].get<std::string>());
            } catch (const json::exception& e) {
                last_error = std::string("planner reply is not JSON: ") + e.what();
            }
        }
        fail(ErrorKind::transport, last_error + " (after " + std::to_string(retries_ + 1) + " attempts)");
    }

private:
    std::string base_;
    std::string path_;
    double timeout_s_;
    int retries_;
};

}  // namespace scenekg
