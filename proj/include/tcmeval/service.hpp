#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <httplib.h>
#include <sys/socket.h>

#include <nlohmann/json.hpp>

#include "tcmeval/analytics.hpp"
#include "tcmeval/config.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/event_log.hpp"
#include "tcmeval/herb_lexicon.hpp"
#include "tcmeval/http_transport.hpp"
#include "tcmeval/human_eval.hpp"
#include "tcmeval/judge_gateway.hpp"

namespace tcmeval {

inline int http_status_for(std::string_view kind) {
    if (kind == "UnknownSession" || kind == "UnknownBenchmark") return 404;
    if (kind == "Duplicate" || kind == "SessionClosed" || kind == "Conflict") return 409;
    if (kind == "Unauthorized") return 401;
    if (kind == "IoError" || kind == "CorruptLog") return 500;
    return 400;
}

// Rater-identity salt: from the configured environment variable, otherwise a
// random value kept in the data directory.
inline std::string load_or_create_salt(const ServiceConfig& cfg, const std::filesystem::path& data_dir) {
    if (auto env = read_secret(cfg.rater_salt_env); !env.empty()) return env;
    const auto path = data_dir / "rater_salt";
    if (std::ifstream in(path); in) {
        std::string salt;
        std::getline(in, salt);
        if (!salt.empty()) return salt;
    }
    std::random_device rd;
    std::string salt;
    static constexpr char hex[] = "0123456789abcdef";
    for (int i = 0; i < 32; ++i) salt += hex[rd() & 0xF];
    std::ofstream out(path, std::ios::trunc);
    out << salt << '\n';
    if (!out) throw io_error("cannot write " + path.string());
    return salt;
}

struct JudgeRunStatus {
    std::string id;
    std::string state = "running";  // running, done, failed
    std::size_t total = 0;
    std::size_t done = 0;
    EvaluationSummary summary;
    std::string error;
};

// HTTP front end over a Repository. Handlers run concurrently; every mutation
// goes through the repository's single writer and is logged before the reply.
class EvalService {
public:
    EvalService(RunConfig config, Lexicon lexicon, std::shared_ptr<ChatTransport> transport = nullptr)
        : config_(std::move(config)),
          lexicon_(std::move(lexicon)),
          transport_(transport ? std::move(transport) : std::make_shared<HttpChatTransport>()),
          repo_(config_.data_dir, config_.service.snapshot_every),
          salt_(load_or_create_salt(config_.service, config_.data_dir)) {
        if (auto tokens = read_secret(config_.service.token_env); !tokens.empty()) {
            std::stringstream ss(tokens);
            for (std::string t; std::getline(ss, t, ',');) {
                if (!text::is_blank(t)) tokens_.insert(std::string(text::trim(t)));
            }
        }
        routes();
    }

    ~EvalService() { stop(); }

    EvalService(const EvalService&) = delete;
    EvalService& operator=(const EvalService&) = delete;

    // Binds and starts serving on a background thread; returns the bound port
    // (useful with port 0).
    int start() {
        // Plain SO_REUSEADDR: with SO_REUSEPORT a second server could share the port.
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
        });
        int port = config_.service.port;
        if (port == 0) {
            port = server_.bind_to_any_port(config_.service.host);
            if (port < 0) throw bind_error("cannot bind " + config_.service.host + " on any port");
        } else if (!server_.bind_to_port(config_.service.host, port)) {
            throw bind_error("cannot bind " + config_.service.host + ":" + std::to_string(port));
        }
        port_ = port;
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port_;
    }

    // Stops accepting requests, waits for judge runs, snapshots and flushes.
    void stop() {
        if (stopped_.exchange(true)) return;
        cancel_ = true;
        server_.stop();
        if (listener_.joinable()) listener_.join();
        std::vector<std::thread> runs;
        {
            std::lock_guard lock(runs_mutex_);
            runs.swap(run_threads_);
        }
        for (auto& t : runs) t.join();
        repo_.snapshot();
        repo_.flush();
    }

    // Blocks until the listener exits.
    void wait() {
        if (listener_.joinable()) listener_.join();
    }

    int port() const { return port_; }
    Repository& repository() { return repo_; }
    const std::string& salt() const { return salt_; }

    std::optional<JudgeRunStatus> run_status(const std::string& id) const {
        std::lock_guard lock(runs_mutex_);
        const auto it = runs_.find(id);
        if (it == runs_.end()) return std::nullopt;
        return it->second;
    }

private:
    using Json = nlohmann::ordered_json;

    static void send_json(httplib::Response& res, const Json& body, int status = 200) {
        res.status = status;
        res.set_content(body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace), "application/json");
    }

    static void send_error(httplib::Response& res, std::string_view kind, const std::string& message) {
        send_json(res, Json{{"error", kind}, {"message", message}}, http_status_for(kind));
    }

    static nlohmann::json parse_body(const httplib::Request& req) {
        try {
            return nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error& e) {
            throw parse_error(std::string("request body is not JSON: ") + e.what());
        }
    }

    static bool wants_csv(const httplib::Request& req) {
        return req.has_param("format") && req.get_param_value("format") == "csv";
    }

    template <typename F>
    httplib::Server::Handler guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const error& e) {
                send_error(res, e.kind(), e.what());
            } catch (const nlohmann::json::exception& e) {
                send_error(res, "ParseError", e.what());
            } catch (const std::exception& e) {
                send_error(res, "InternalError", e.what());
            }
        };
    }

    std::vector<Axis> axes_param(const httplib::Request& req) const {
        std::vector<Axis> axes;
        const std::string spec = req.has_param("group_by") ? req.get_param_value("group_by") : "doctor,model,judge";
        std::stringstream ss(spec);
        for (std::string a; std::getline(ss, a, ',');) axes.push_back(axis_from_string(text::trim(a)));
        return axes;
    }

    template <typename F>
    auto with_session(const std::string& id, F f) const {
        return repo_.read([&](const EvalState& st) {
            const auto it = st.sessions.find(id);
            if (it == st.sessions.end()) throw unknown_session("no session " + id);
            return f(it->second);
        });
    }

    void routes() {
        server_.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            if (tokens_.empty() || req.path == "/healthz") return httplib::Server::HandlerResponse::Unhandled;
            const auto auth = req.get_header_value("Authorization");
            const std::string prefix = "Bearer ";
            if (text::starts_with(auth, prefix) && tokens_.count(auth.substr(prefix.size()))) {
                return httplib::Server::HandlerResponse::Unhandled;
            }
            send_error(res, "Unauthorized", "missing or unknown bearer token");
            return httplib::Server::HandlerResponse::Handled;
        });

        server_.Get("/healthz", guarded([](const httplib::Request&, httplib::Response& res) {
            send_json(res, Json{{"status", "ok"}, {"version", kVersion}});
        }));

        server_.Post("/cases", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto c = case_from_json(parse_body(req));
            const auto seq = repo_.ingest_case(c);
            send_json(res, Json{{"id", c.id}, {"sequence", seq}}, 201);
        }));

        server_.Post("/responses", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto r = model_response_from_json(parse_body(req));
            const auto seq = repo_.ingest_response(r);
            send_json(res, Json{{"case_id", r.case_id}, {"sequence", seq}}, 201);
        }));

        server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
            create_session(parse_body(req), res);
        }));

        server_.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto id = req.matches[1].str();
            send_json(res, with_session(id, [](const RatingSession& s) { return blinded_view(s); }));
        }));

        server_.Get(R"(/sessions/([^/]+)/next-item)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        send_json(res, next_item_view(req.matches[1].str()));
                    }));

        server_.Post(R"(/sessions/([^/]+)/ratings)",
                     guarded([this](const httplib::Request& req, httplib::Response& res) {
                         submit(req.matches[1].str(), parse_body(req), res);
                     }));

        server_.Get(R"(/sessions/([^/]+)/export)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const auto id = req.matches[1].str();
                        const auto body = with_session(
                            id, [this](const RatingSession& s) { return export_session_jsonl(s, config_.weights); });
                        res.set_content(body, "application/x-ndjson");
                    }));

        server_.Post("/judge-runs", guarded([this](const httplib::Request& req, httplib::Response& res) {
            start_run(req.body.empty() ? nlohmann::json::object() : parse_body(req), res);
        }));

        server_.Get(R"(/judge-runs/([^/]+)/status)",
                    guarded([this](const httplib::Request& req, httplib::Response& res) {
                        const auto status = run_status(req.matches[1].str());
                        if (!status) throw precondition_violation("no judge run " + req.matches[1].str());
                        send_json(res, status_json(*status));
                    }));

        server_.Get("/reports/scores", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto records = repo_.read([](const EvalState& st) { return st.verdicts.snapshot(); });
            const auto table = score_table(records, axes_param(req));
            if (wants_csv(req)) res.set_content(to_csv(table), "text/csv");
            else send_json(res, to_json(table));
        }));

        server_.Get("/reports/delta", guarded([this](const httplib::Request& req, httplib::Response& res) {
            if (!req.has_param("benchmark")) throw precondition_violation("benchmark parameter is required");
            const auto records = repo_.read([](const EvalState& st) { return st.verdicts.snapshot(); });
            const auto delta = delta_table(score_table(records, axes_param(req)), req.get_param_value("benchmark"));
            if (wants_csv(req)) res.set_content(to_csv(delta), "text/csv");
            else send_json(res, to_json(delta));
        }));

        server_.Get("/reports/human", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto sessions = repo_.read([](const EvalState& st) {
                std::vector<RatingSession> out;
                for (const auto& [id, s] : st.sessions) out.push_back(s);
                return out;
            });
            const auto report = unblind_report(sessions, config_.weights);
            if (wants_csv(req)) res.set_content(to_csv(report), "text/csv");
            else send_json(res, to_json(report));
        }));

        server_.Get("/reports/trial", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto [cases, responses] = repo_.read(
                [](const EvalState& st) { return std::make_pair(st.cases, st.responses); });
            const auto report = trial_report(cases, responses, lexicon_);
            if (wants_csv(req)) res.set_content(to_csv(report), "text/csv");
            else send_json(res, to_json(report));
        }));
    }

    void create_session(const nlohmann::json& body, httplib::Response& res) {
        if (!body.is_object() || !body.contains("doctor") || !body.at("doctor").is_string()) {
            throw parse_error("doctor is required");
        }
        const auto doctor = body.at("doctor").get<std::string>();
        const auto rater = body.value("rater", nlohmann::json::object());
        const auto identity = rater.value("id", rater.value("name", std::string()));
        if (text::is_blank(identity)) throw parse_error("rater.id or rater.name is required");
        RaterInfo info{hash_rater_identity(identity, salt_), rater.value("title", ""), rater.value("group", "")};

        std::vector<std::string> cases;
        std::vector<std::string> models;
        if (body.contains("cases")) cases = body.at("cases").get<std::vector<std::string>>();
        if (body.contains("models")) models = body.at("models").get<std::vector<std::string>>();
        repo_.read([&](const EvalState& st) {
            if (cases.empty()) {
                for (const auto& c : st.cases) {
                    if (c.doctor != doctor) continue;
                    const bool has_response = std::any_of(st.responses.begin(), st.responses.end(),
                                                          [&](const ModelResponse& r) { return r.case_id == c.id; });
                    if (has_response) cases.push_back(c.id);
                }
            }
            if (models.empty()) {
                std::set<std::string> all;
                for (const auto& r : st.responses) all.insert(r.model);
                for (const auto& m : all) {
                    const bool everywhere = std::all_of(cases.begin(), cases.end(), [&](const std::string& c) {
                        return st.find_response(c, m) != nullptr;
                    });
                    if (everywhere) models.push_back(m);
                }
            }
            for (const auto& c : cases) {
                if (!st.find_case(c)) throw precondition_violation("unknown case " + c);
                for (const auto& m : models) {
                    if (!st.find_response(c, m)) {
                        throw precondition_violation("case " + c + " has no response from one of the models");
                    }
                }
            }
            return 0;
        });
        std::uint64_t seed = 0;
        if (body.contains("seed")) {
            seed = body.at("seed").get<std::uint64_t>();
        } else {
            std::random_device rd;
            seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
        }
        const auto session = repo_.create_session(info, doctor, cases, models, seed);
        send_json(res, blinded_view(session), 201);
    }

    Json next_item_view(const std::string& id) const {
        return repo_.read([&](const EvalState& st) {
            const auto it = st.sessions.find(id);
            if (it == st.sessions.end()) throw unknown_session("no session " + id);
            const auto& s = it->second;
            Json j;
            j["session_id"] = s.id;
            j["status"] = to_string(s.status);
            j["progress"] = {{"rated", s.active_ratings().size()}, {"total", s.required_ratings()}};
            const auto item = next_item(s);
            if (!item) {
                j["item"] = nullptr;
                return j;
            }
            const auto model = *s.model_for_label(item->label);
            const auto* c = st.find_case(item->case_id);
            const auto* r = st.find_response(item->case_id, model);
            Json out;
            out["case_id"] = item->case_id;
            out["instruction"] = c ? c->instruction : "";
            out["gold_answer"] = c ? Json(tcmeval::to_json(c->label)) : Json();
            out["label"] = item->label;
            out["response"] = r ? Json(tcmeval::to_json(parse_structured_response(r->text))) : Json();
            j["item"] = std::move(out);
            return j;
        });
    }

    void submit(const std::string& id, const nlohmann::json& body, httplib::Response& res) {
        if (!body.is_object()) throw parse_error("rating body must be an object");
        RatingInput input;
        input.case_id = body.at("case_id").get<std::string>();
        input.label = body.at("label").get<std::string>();
        input.scores = scores_from_json(body.at("scores"));
        input.supersede = body.value("supersede", false);
        repo_.submit_rating(id, input);
        send_json(res,
                  with_session(id,
                               [](const RatingSession& s) {
                                   return Json{{"accepted", true},
                                               {"rated", s.active_ratings().size()},
                                               {"total", s.required_ratings()},
                                               {"status", to_string(s.status)}};
                               }),
                  201);
    }

    static Json status_json(const JudgeRunStatus& s) {
        return Json{{"run_id", s.id},         {"state", s.state},
                    {"done", s.done},         {"total", s.total},
                    {"skipped", s.summary.skipped}, {"verdicts", s.summary.verdicts},
                    {"failures", s.summary.failures}, {"interrupted", s.summary.interrupted},
                    {"error", s.error}};
    }

    void start_run(const nlohmann::json& body, httplib::Response& res) {
        std::vector<JudgeConfig> judges;
        if (body.contains("judges")) {
            for (const auto& name : body.at("judges").get<std::vector<std::string>>()) {
                const auto it = std::find_if(config_.judges.begin(), config_.judges.end(),
                                             [&](const JudgeConfig& j) { return j.name == name; });
                if (it == config_.judges.end()) throw precondition_violation("unknown judge " + name);
                judges.push_back(*it);
            }
        } else {
            judges = config_.judges;
        }
        if (judges.empty()) throw precondition_violation("no judges configured");
        EvaluationOptions options;
        if (body.contains("max_triples")) options.max_triples = body.at("max_triples").get<std::size_t>();

        std::lock_guard lock(runs_mutex_);
        for (const auto& [rid, status] : runs_) {
            if (status.state == "running") {
                send_error(res, "Conflict", "judge run " + rid + " is still running");
                return;
            }
        }
        nlohmann::json details;
        details["judges"] = nlohmann::json::array();
        for (const auto& j : judges) details["judges"].push_back(j.name);
        const auto id = repo_.start_judge_run(details);
        runs_[id].id = id;
        run_threads_.emplace_back([this, id, judges, options]() mutable { execute_run(id, judges, options); });
        send_json(res, Json{{"run_id", id}, {"state", "running"}}, 202);
    }

    void execute_run(const std::string& id, const std::vector<JudgeConfig>& judges, EvaluationOptions options) {
        try {
            auto [cases, responses, store] = repo_.read([](const EvalState& st) {
                return std::make_tuple(st.cases, st.responses, st.verdicts);
            });
            store.set_sink([this](const VerdictRecord& r) { repo_.store_verdict(r); });
            options.cancel = &cancel_;
            options.progress = [this, id](std::size_t done, std::size_t total) {
                std::lock_guard lock(runs_mutex_);
                runs_[id].done = done;
                runs_[id].total = total;
            };
            const auto summary = run_evaluation(cases, responses, judges, *transport_, store, options);
            std::lock_guard lock(runs_mutex_);
            auto& status = runs_[id];
            status.summary = summary;
            status.total = summary.total;
            status.done = summary.skipped + summary.verdicts + summary.failures;
            status.state = "done";
        } catch (const std::exception& e) {
            std::lock_guard lock(runs_mutex_);
            runs_[id].state = "failed";
            runs_[id].error = e.what();
        }
    }

    RunConfig config_;
    Lexicon lexicon_;
    std::shared_ptr<ChatTransport> transport_;
    Repository repo_;
    std::string salt_;
    std::set<std::string> tokens_;
    httplib::Server server_;
    std::thread listener_;
    int port_ = 0;
    std::atomic<bool> cancel_{false};
    std::atomic<bool> stopped_{false};
    mutable std::mutex runs_mutex_;
    std::map<std::string, JudgeRunStatus> runs_;
    std::vector<std::thread> run_threads_;
};

} // namespace tcmeval
