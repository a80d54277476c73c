#pragma once

// HTTP front end for AnnotationStore. Every request carries a token, either
// "Authorization: Bearer <token>" or "?token=<token>"; the token decides the
// identity and role, so a client cannot claim someone else's id.
//
//   GET  /tasks/next              annotator   next blinded task (204 when done)
//   POST /labels                  annotator   {"task_id","biased","categories",...}
//   GET  /tasks/conflicted        adjudicator conflicted tasks with both labels
//   POST /adjudications           adjudicator {"task_id","biased","categories",...}
//   GET  /export/gold             adjudicator gold rows (409 while unresolved)
//   GET  /progress                any         counts per status
//   GET  /whoami                  any         {"id","role"}

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tangles/annotation.hpp"
#include "tangles/config.hpp"

namespace tangles {

enum class Role { annotator, adjudicator };

struct Identity {
    std::string id;
    Role role;
};

/// token -> identity, read from `[annotators]` and `[adjudicators]` tables
/// mapping id = "token".
class TokenTable {
  public:
    void add(const std::string& id, const std::string& token, Role role) {
        if (token.empty()) throw config::ConfigError("empty token for '" + id + "'");
        if (!by_token_.emplace(token, Identity{id, role}).second) {
            throw config::ConfigError("token for '" + id + "' is not unique");
        }
        if (role == Role::adjudicator) adjudicators_.insert(id);
        else annotators_.insert(id);
        if (annotators_.count(id) && adjudicators_.count(id)) {
            throw config::ConfigError("'" + id + "' cannot be both annotator and adjudicator");
        }
    }

    static TokenTable from_toml(const nlohmann::json& root) {
        TokenTable t;
        for (auto [table, role] : {std::pair{"annotators", Role::annotator}, std::pair{"adjudicators", Role::adjudicator}}) {
            if (!root.contains(table)) continue;
            const auto& tbl = root.at(table);
            if (!tbl.is_object()) throw config::ConfigError(std::string("[") + table + "] must be a table");
            for (const auto& [id, tok] : tbl.items()) {
                if (!tok.is_string()) throw config::ConfigError("token for '" + id + "' must be a string");
                t.add(id, tok.get<std::string>(), role);
            }
        }
        if (t.adjudicators_.empty()) throw config::ConfigError("token file defines no adjudicators");
        if (t.annotators_.size() < 2) throw config::ConfigError("token file needs at least two annotators");
        return t;
    }

    std::optional<Identity> find(const std::string& token) const {
        auto it = by_token_.find(token);
        if (it == by_token_.end()) return std::nullopt;
        return it->second;
    }

    const std::set<std::string>& adjudicators() const { return adjudicators_; }

  private:
    std::map<std::string, Identity> by_token_;
    std::set<std::string> annotators_, adjudicators_;
};

inline int http_status(AnnotationError::Kind k) {
    switch (k) {
        case AnnotationError::Kind::invalid: return 400;
        case AnnotationError::Kind::forbidden: return 403;
        case AnnotationError::Kind::not_found: return 404;
        case AnnotationError::Kind::conflict: return 409;
    }
    return 500;
}

class AnnotationServer {
  public:
    AnnotationServer(AnnotationStore& store, TokenTable tokens, std::optional<std::filesystem::path> ui_dir = {})
        : store_(store), tokens_(std::move(tokens)) {
        if (ui_dir && !server_.set_mount_point("/", ui_dir->string())) {
            throw config::ConfigError("UI directory " + ui_dir->string() + " does not exist");
        }
        routes();
    }

    /// Binds to `port` (0 picks a free one) and returns the bound port.
    int bind(const std::string& host, int port) {
        const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
        return bound;
    }

    /// Blocks until stop().
    void listen() { server_.listen_after_bind(); }
    void stop() { server_.stop(); }
    void wait_until_ready() { server_.wait_until_ready(); }

  private:
    using Handler = std::function<void(const Identity&, const httplib::Request&, httplib::Response&)>;

    static void send(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, int status, const std::string& msg) {
        nlohmann::ordered_json j;
        j["error"] = msg;
        send(res, status, j);
    }

    std::optional<Identity> authenticate(const httplib::Request& req) const {
        std::string token;
        const auto auth = req.get_header_value("Authorization");
        if (auth.rfind("Bearer ", 0) == 0) token = auth.substr(7);
        else if (req.has_param("token")) token = req.get_param_value("token");
        if (token.empty()) return std::nullopt;
        return tokens_.find(token);
    }

    httplib::Server::Handler wrap(std::optional<Role> need, Handler h) {
        return [this, need, h](const httplib::Request& req, httplib::Response& res) {
            const auto who = authenticate(req);
            if (!who) return send_error(res, 401, "missing or unknown token");
            if (need && who->role != *need) {
                return send_error(res, 403, std::string("requires the ") +
                                                (*need == Role::adjudicator ? "adjudicator" : "annotator") + " role");
            }
            // Optional ?role= and ?annotator_id= must match the token.
            if (req.has_param("role") &&
                req.get_param_value("role") != (who->role == Role::adjudicator ? "adjudicator" : "annotator")) {
                return send_error(res, 403, "role does not match token");
            }
            for (const char* key : {"annotator_id", "adjudicator_id"}) {
                if (req.has_param(key) && req.get_param_value(key) != who->id) {
                    return send_error(res, 403, std::string(key) + " does not match token");
                }
            }
            try {
                h(*who, req, res);
            } catch (const AnnotationError& e) {
                send_error(res, http_status(e.kind()), e.what());
            } catch (const nlohmann::json::exception& e) {
                send_error(res, 400, std::string("malformed request: ") + e.what());
            } catch (const std::exception& e) {
                spdlog::error("{} {}: {}", req.method, req.path, e.what());
                send_error(res, 500, e.what());
            }
        };
    }

    static nlohmann::json body_json(const httplib::Request& req) {
        auto j = nlohmann::json::parse(req.body);
        if (!j.is_object()) throw AnnotationError(AnnotationError::Kind::invalid, "body must be a JSON object");
        return j;
    }

    void routes() {
        server_.Get("/whoami", wrap(std::nullopt, [](const Identity& who, const httplib::Request&, httplib::Response& res) {
            nlohmann::ordered_json j;
            j["id"] = who.id;
            j["role"] = who.role == Role::adjudicator ? "adjudicator" : "annotator";
            send(res, 200, j);
        }));
        server_.Get("/tasks/next", wrap(Role::annotator, [this](const Identity& who, const httplib::Request&, httplib::Response& res) {
            auto t = store_.next_task(who.id);
            if (!t) {
                res.status = 204;
                return;
            }
            send(res, 200, *t);
        }));
        server_.Post("/labels", wrap(Role::annotator, [this](const Identity& who, const httplib::Request& req, httplib::Response& res) {
            const auto j = body_json(req);
            const auto status = store_.submit_label(j.at("task_id").get<std::string>(), who.id, decision_from_json(j));
            nlohmann::ordered_json out;
            out["task_id"] = j.at("task_id");
            out["status"] = to_string(status);
            send(res, 201, out);
        }));
        server_.Get("/tasks/conflicted", wrap(Role::adjudicator, [this](const Identity& who, const httplib::Request&, httplib::Response& res) {
            nlohmann::ordered_json out = nlohmann::ordered_json::array();
            for (auto& t : store_.conflicted(who.id)) out.push_back(std::move(t));
            send(res, 200, out);
        }));
        server_.Post("/adjudications", wrap(Role::adjudicator, [this](const Identity& who, const httplib::Request& req, httplib::Response& res) {
            const auto j = body_json(req);
            const auto gold = store_.adjudicate(j.at("task_id").get<std::string>(), who.id, decision_from_json(j));
            send(res, 201, gold_json(gold));
        }));
        server_.Get("/export/gold", wrap(Role::adjudicator, [this](const Identity&, const httplib::Request&, httplib::Response& res) {
            const auto g = store_.export_gold();
            nlohmann::ordered_json out = nlohmann::ordered_json::array();
            for (const auto& row : g.rows) out.push_back(row);
            send(res, 200, out);
        }));
        server_.Get("/progress", wrap(std::nullopt, [this](const Identity&, const httplib::Request&, httplib::Response& res) {
            const auto p = store_.progress();
            nlohmann::ordered_json j;
            j["total"] = p.total;
            j["gold"] = p.gold;
            for (const auto& [s, n] : p.by_status) j["by_status"][std::string(to_string(s))] = n;
            send(res, 200, j);
        }));
    }

    AnnotationStore& store_;
    TokenTable tokens_;
    httplib::Server server_;
};

}  // namespace tangles
