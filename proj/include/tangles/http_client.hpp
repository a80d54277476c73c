#pragma once

// cpp-httplib backed HttpPost. Kept apart from transport.hpp so only the
// binaries that reach the network pull in httplib.

#include <chrono>
#include <string>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "tangles/transport.hpp"

namespace tangles {

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;    // starts with '/'
};

inline ParsedUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ProviderError("invalid endpoint URL '" + url + "'", false);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline HttpPost make_http_post(std::chrono::seconds timeout = std::chrono::seconds(60)) {
    return [timeout](const HttpRequest& req) {
        const auto url = split_url(req.url);
        httplib::Client client(url.origin);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers headers;
        for (const auto& [k, v] : req.headers) headers.emplace(k, v);
        HttpResponse out;
        auto res = client.Post(url.path, headers, req.body, "application/json");
        if (!res) {
            out.error = httplib::to_string(res.error());
            return out;
        }
        out.status = res->status;
        out.body = res->body;
        return out;
    };
}

}  // namespace tangles
