#pragma once

// Provider plumbing shared by the embedding, NER and chat clients: error
// kinds, exponential backoff with full jitter, an in-flight limiter and a
// minimal JSON-over-HTTP POST.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tangles/random.hpp"

namespace tangles {

/// A provider could not deliver a usable answer. `retryable` separates
/// transient failures (connection, 429, 5xx, unparseable payload) from
/// permanent ones (bad credentials, malformed request).
class ProviderError : public std::runtime_error {
  public:
    ProviderError(const std::string& what, bool retryable) : std::runtime_error(what), retryable_(retryable) {}
    bool retryable() const { return retryable_; }

  private:
    bool retryable_;
};

struct BackoffPolicy {
    int max_attempts = 5;
    std::chrono::milliseconds base{1000};
    double factor = 2.0;
    std::chrono::milliseconds cap{30000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper thread_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// Full jitter: uniform in [0, min(cap, base * factor^(attempt-1))].
inline std::chrono::milliseconds backoff_delay(const BackoffPolicy& p, int attempt, Rng& rng) {
    const double ceiling = std::min(static_cast<double>(p.cap.count()),
                                    static_cast<double>(p.base.count()) * std::pow(p.factor, attempt - 1));
    return std::chrono::milliseconds(static_cast<long long>(std::floor(rng.unit() * (ceiling + 1.0))));
}

/// Runs `fn(attempt)` until it succeeds, a non-retryable error escapes, or
/// the attempt budget is spent (then the last error is rethrown). Sleeps
/// between attempts only.
template <typename Fn>
auto with_retry(const BackoffPolicy& policy, const Sleeper& sleep, Rng& rng, Fn&& fn) -> decltype(fn(1)) {
    for (int attempt = 1;; ++attempt) {
        try {
            return fn(attempt);
        } catch (const ProviderError& e) {
            if (!e.retryable() || attempt >= policy.max_attempts) throw;
        }
        sleep(backoff_delay(policy, attempt, rng));
    }
}

/// Caps concurrent provider calls.
class InFlightLimiter {
  public:
    explicit InFlightLimiter(size_t max_in_flight) : max_(std::max<size_t>(1, max_in_flight)) {}

    class Slot {
      public:
        explicit Slot(InFlightLimiter& l) : l_(l) { l_.acquire(); }
        ~Slot() { l_.release(); }
        Slot(const Slot&) = delete;
        Slot& operator=(const Slot&) = delete;

      private:
        InFlightLimiter& l_;
    };

    size_t peak() const {
        std::lock_guard lock(m_);
        return peak_;
    }

  private:
    void acquire() {
        std::unique_lock lock(m_);
        cv_.wait(lock, [&] { return used_ < max_; });
        ++used_;
        peak_ = std::max(peak_, used_);
    }
    void release() {
        {
            std::lock_guard lock(m_);
            --used_;
        }
        cv_.notify_one();
    }

    size_t max_;
    size_t used_ = 0;
    size_t peak_ = 0;
    mutable std::mutex m_;
    std::condition_variable cv_;
};

// ---------------------------------------------------------------------------
// HTTP

struct HttpRequest {
    std::string url;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
};

struct HttpResponse {
    int status = 0;  // 0: no response (connection failure, timeout)
    std::string body;
    std::string error;
};

using HttpPost = std::function<HttpResponse(const HttpRequest&)>;

/// Maps a response to success or a ProviderError of the right kind.
inline std::string expect_ok(const HttpResponse& r, const std::string& what) {
    if (r.status == 0) throw ProviderError(what + ": no response (" + r.error + ")", true);
    if (r.status == 429 || r.status >= 500) {
        throw ProviderError(what + ": HTTP " + std::to_string(r.status), true);
    }
    if (r.status < 200 || r.status >= 300) {
        throw ProviderError(what + ": HTTP " + std::to_string(r.status) + ": " + r.body.substr(0, 200), false);
    }
    return r.body;
}

inline std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
}

}  // namespace tangles
