#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcmeval/case_record.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/prompts.hpp"
#include "tcmeval/rubric.hpp"

namespace tcmeval {

enum class SchemaMode { StructuredOutput, PromptEmbedded };

inline std::string to_string(SchemaMode m) {
    return m == SchemaMode::StructuredOutput ? "structured-output" : "prompt-embedded";
}

inline SchemaMode schema_mode_from_string(std::string_view s) {
    if (s == "structured-output") return SchemaMode::StructuredOutput;
    if (s == "prompt-embedded") return SchemaMode::PromptEmbedded;
    throw config_error("schema_mode: expected structured-output or prompt-embedded, got '" +
                       std::string(s) + "'");
}

struct JudgeConfig {
    std::string name;
    std::string endpoint;  // full chat-completions URL
    std::string model;     // model id sent on the wire; defaults to name
    std::string api_key_env;
    SchemaMode schema_mode = SchemaMode::PromptEmbedded;
    int max_retries = 2;
    int max_in_flight = 4;
    double timeout_seconds = 120;
    double temperature = 0;
    std::optional<int> max_tokens;
    bool strict = false;  // strict schema validation instead of lenient
    int backoff_ms = 500;
    int max_backoff_ms = 30000;

    bool operator==(const JudgeConfig&) const = default;
    std::string wire_model() const { return model.empty() ? name : model; }
};

// Transport result. status 0 means the request never produced an HTTP reply.
struct HttpReply {
    int status = 0;
    std::string body;
    std::string error;
    std::optional<double> retry_after_seconds;
};

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    // Must be safe to call from several threads at once.
    virtual HttpReply post(const JudgeConfig& judge, const std::string& body) = 0;
};

inline nlohmann::json build_chat_body(const JudgeConfig& judge, const PromptPair& prompt) {
    nlohmann::json body = {{"model", judge.wire_model()},
                           {"messages",
                            {{{"role", "system"}, {"content", prompt.system}},
                             {{"role", "user"}, {"content", prompt.user}}}},
                           {"temperature", judge.temperature}};
    if (judge.max_tokens) body["max_tokens"] = *judge.max_tokens;
    if (judge.schema_mode == SchemaMode::StructuredOutput) {
        body["response_format"] = structured_output_format();
    }
    return body;
}

// Pulls the verdict document out of a chat-completions reply: the assistant
// message content, minus any code fence or chatter around the JSON object.
inline std::string extract_verdict_text(const std::string& reply_body) {
    nlohmann::json reply;
    try {
        reply = nlohmann::json::parse(reply_body);
    } catch (const nlohmann::json::parse_error& e) {
        throw parse_error(std::string("reply is not JSON: ") + e.what());
    }
    const auto* content = &reply;
    try {
        content = &reply.at("choices").at(0).at("message").at("content");
    } catch (const nlohmann::json::exception&) {
        throw parse_error("reply has no choices[0].message.content");
    }
    if (content->is_object()) return content->dump();
    if (!content->is_string()) throw parse_error("message content is not text");
    const auto& s = content->get_ref<const std::string&>();
    const auto open = s.find('{');
    const auto close = s.rfind('}');
    if (open == std::string::npos || close == std::string::npos || close < open) {
        throw parse_error("message content holds no JSON object");
    }
    return s.substr(open, close - open + 1);
}

struct VerdictOutcome {
    JudgeVerdict verdict;
    std::vector<std::string> warnings;
    int attempts = 0;
    std::vector<transcript_entry> transcripts;
};

namespace detail {

inline void sleep_ms(long long ms) {
    if (ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
}

} // namespace detail

// Sends the prompt until a reply validates, at most max_retries + 1 times.
// After a reply that fails parsing or validation the next attempt carries a
// corrective suffix. Transport failures back off exponentially, honouring
// Retry-After on 429.
inline VerdictOutcome request_verdict(const JudgeConfig& judge, const PromptPair& prompt,
                                      ChatTransport& transport) {
    if (judge.max_retries < 0) throw precondition_violation("max_retries must be >= 0");
    VerdictOutcome out;
    bool any_reply = false;
    bool corrective = false;
    long long backoff = judge.backoff_ms;
    for (int attempt = 1; attempt <= judge.max_retries + 1; ++attempt) {
        PromptPair sent = prompt;
        if (corrective) sent.user += kCorrectiveSuffix;
        const auto body = build_chat_body(judge, sent).dump();
        const auto reply = transport.post(judge, body);
        transcript_entry t{attempt, body, reply.body, {}};
        out.attempts = attempt;

        if (reply.status != 200) {
            t.failure = reply.status == 0 ? "transport: " + reply.error
                                          : "http status " + std::to_string(reply.status);
            out.transcripts.push_back(std::move(t));
            if (attempt <= judge.max_retries) {
                long long wait = backoff;
                if (reply.status == 429 && reply.retry_after_seconds) {
                    wait = static_cast<long long>(*reply.retry_after_seconds * 1000.0);
                }
                detail::sleep_ms(std::min<long long>(wait, judge.max_backoff_ms));
                backoff = std::min<long long>(backoff * 2, judge.max_backoff_ms);
            }
            continue;
        }

        any_reply = true;
        try {
            auto validated = validate_verdict(extract_verdict_text(reply.body), judge.strict);
            out.transcripts.push_back(std::move(t));
            out.verdict = std::move(validated.verdict);
            out.warnings = std::move(validated.warnings);
            return out;
        } catch (const error& e) {
            t.failure = std::string(e.kind()) + ": " + e.what();
            out.transcripts.push_back(std::move(t));
            corrective = true;
        }
    }
    const auto what = "judge " + judge.name + " gave no valid verdict in " +
                      std::to_string(out.attempts) + " attempts";
    if (any_reply) throw verdict_rejected(what, std::move(out.transcripts));
    throw judge_unavailable(what, std::move(out.transcripts));
}

// ---------------------------------------------------------------------------
// Batch evaluation

struct ModelResponse {
    std::string case_id;
    std::string model;
    std::string text;
    bool operator==(const ModelResponse&) const = default;
};

inline nlohmann::json to_json(const ModelResponse& r) {
    return {{"case_id", r.case_id}, {"model", r.model}, {"response", r.text}};
}

inline ModelResponse model_response_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw parse_error("response record must be a JSON object");
    for (const char* key : {"case_id", "model", "response"}) {
        if (!j.contains(key) || !j.at(key).is_string()) {
            throw parse_error(std::string("response record field '") + key + "' must be a string");
        }
    }
    ModelResponse r{j.at("case_id").get<std::string>(), j.at("model").get<std::string>(),
                    j.at("response").get<std::string>()};
    if (text::is_blank(r.case_id) || text::is_blank(r.model)) {
        throw parse_error("response record has a blank case_id or model");
    }
    return r;
}

struct TripleKey {
    std::string case_id;
    std::string model;
    std::string judge;
    auto operator<=>(const TripleKey&) const = default;
};

struct VerdictRecord {
    std::string case_id;
    std::string model;
    std::string judge;
    std::string doctor;
    bool ok = false;
    JudgeVerdict verdict;  // meaningful only when ok
    std::vector<std::string> warnings;
    int attempts = 0;
    std::string error_kind;
    std::string error_message;
    std::vector<transcript_entry> transcripts;  // kept for failures only
    std::string recorded_at;

    TripleKey key() const { return {case_id, model, judge}; }
    bool operator==(const VerdictRecord&) const = default;
};

inline nlohmann::ordered_json to_json(const VerdictRecord& r) {
    nlohmann::ordered_json j;
    j["case_id"] = r.case_id;
    j["model"] = r.model;
    j["judge"] = r.judge;
    j["doctor"] = r.doctor;
    j["status"] = r.ok ? "ok" : "failed";
    j["attempts"] = r.attempts;
    if (r.ok) j["verdict"] = to_json(r.verdict);
    j["warnings"] = r.warnings;
    if (!r.ok) {
        j["error"] = {{"kind", r.error_kind}, {"message", r.error_message}};
        auto ts = nlohmann::ordered_json::array();
        for (const auto& t : r.transcripts) {
            ts.push_back({{"attempt", t.attempt},
                          {"request", t.request},
                          {"response", t.response},
                          {"failure", t.failure}});
        }
        j["transcripts"] = ts;
    }
    j["recorded_at"] = r.recorded_at;
    return j;
}

inline VerdictRecord verdict_record_from_json(const nlohmann::json& j) {
    VerdictRecord r;
    try {
        r.case_id = j.at("case_id").get<std::string>();
        r.model = j.at("model").get<std::string>();
        r.judge = j.at("judge").get<std::string>();
        r.doctor = j.value("doctor", "");
        r.ok = j.at("status").get<std::string>() == "ok";
        r.attempts = j.value("attempts", 0);
        if (r.ok) r.verdict = verdict_from_json(j.at("verdict"));
        r.warnings = j.value("warnings", std::vector<std::string>{});
        if (!r.ok && j.contains("error")) {
            r.error_kind = j.at("error").value("kind", "");
            r.error_message = j.at("error").value("message", "");
        }
        if (j.contains("transcripts")) {
            for (const auto& t : j.at("transcripts")) {
                r.transcripts.push_back({t.value("attempt", 0), t.value("request", ""),
                                         t.value("response", ""), t.value("failure", "")});
            }
        }
        r.recorded_at = j.value("recorded_at", "");
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("malformed verdict record: ") + e.what());
    }
    return r;
}

// Append-only record of judge outcomes, one per (case, model, judge).
class VerdictStore {
public:
    using Sink = std::function<void(const VerdictRecord&)>;

    VerdictStore() = default;
    VerdictStore(const VerdictStore& o) : records_(o.snapshot()) { reindex(); }
    VerdictStore& operator=(const VerdictStore& o) {
        if (this != &o) {
            auto copy = o.snapshot();
            std::lock_guard lock(mutex_);
            records_ = std::move(copy);
            reindex();
        }
        return *this;
    }

    // Called under the store lock for every appended record, in append order.
    void set_sink(Sink sink) {
        std::lock_guard lock(mutex_);
        sink_ = std::move(sink);
    }

    bool contains(const TripleKey& key) const {
        std::lock_guard lock(mutex_);
        return index_.count(key) > 0;
    }

    void append(VerdictRecord record) {
        std::lock_guard lock(mutex_);
        if (index_.count(record.key())) {
            throw precondition_violation("triple already recorded: " + record.case_id + "/" +
                                         record.model + "/" + record.judge);
        }
        if (sink_) sink_(record);
        index_.insert(record.key());
        records_.push_back(std::move(record));
    }

    std::vector<VerdictRecord> snapshot() const {
        std::lock_guard lock(mutex_);
        return records_;
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return records_.size();
    }

    bool empty() const { return size() == 0; }

private:
    void reindex() {
        index_.clear();
        for (const auto& r : records_) index_.insert(r.key());
    }

    mutable std::mutex mutex_;
    std::vector<VerdictRecord> records_;
    std::set<TripleKey> index_;
    Sink sink_;
};

struct EvaluationOptions {
    // Stop after this many new triples have been attempted (simulated interrupt).
    std::optional<std::size_t> max_triples;
    const std::atomic<bool>* cancel = nullptr;
    std::function<void(std::size_t done, std::size_t total)> progress;
};

struct EvaluationSummary {
    std::size_t total = 0;     // |cases x models x judges| with a response
    std::size_t skipped = 0;   // already in the store
    std::size_t verdicts = 0;  // new successful verdicts
    std::size_t failures = 0;  // new failure records
    bool interrupted = false;
};

// Judges every (case, model) response with every judge. Work is spread over a
// per-judge pool of max_in_flight threads; triples already in the store are
// skipped, so a rerun resumes where the last one stopped.
inline EvaluationSummary run_evaluation(const std::vector<CaseRecord>& cases,
                                        const std::vector<ModelResponse>& responses,
                                        const std::vector<JudgeConfig>& judges, ChatTransport& transport,
                                        VerdictStore& store, const EvaluationOptions& options = {},
                                        const PromptTemplate& tmpl = {}) {
    if (judges.empty()) throw precondition_violation("at least one judge is required");
    std::set<std::string> names;
    for (const auto& j : judges) {
        if (j.name.empty()) throw precondition_violation("judge name is empty");
        if (!names.insert(j.name).second) throw precondition_violation("duplicate judge name " + j.name);
        if (j.max_in_flight < 1) throw precondition_violation("max_in_flight must be >= 1 for " + j.name);
    }
    std::map<std::string, const CaseRecord*> case_by_id;
    for (const auto& c : cases) case_by_id[c.id] = &c;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& r : responses) {
        if (!case_by_id.count(r.case_id)) {
            throw precondition_violation("response for unknown case " + r.case_id);
        }
        if (!seen.emplace(r.case_id, r.model).second) {
            throw precondition_violation("duplicate response for " + r.case_id + "/" + r.model);
        }
    }

    EvaluationSummary summary;
    std::vector<std::vector<const ModelResponse*>> pending(judges.size());
    for (std::size_t j = 0; j < judges.size(); ++j) {
        for (const auto& r : responses) {
            ++summary.total;
            if (store.contains({r.case_id, r.model, judges[j].name})) ++summary.skipped;
            else pending[j].push_back(&r);
        }
    }

    std::atomic<std::size_t> budget_used{0};
    std::atomic<std::size_t> done{summary.skipped};
    std::atomic<std::size_t> verdicts{0};
    std::atomic<std::size_t> failures{0};
    std::atomic<bool> interrupted{false};
    std::mutex progress_mutex;
    std::exception_ptr worker_error;

    auto take_budget = [&]() {
        if (options.cancel && options.cancel->load()) {
            interrupted = true;
            return false;
        }
        if (!options.max_triples) return true;
        if (budget_used.fetch_add(1) < *options.max_triples) return true;
        interrupted = true;
        return false;
    };

    auto judge_one = [&](const JudgeConfig& judge, const ModelResponse& response) {
        const CaseRecord& c = *case_by_id.at(response.case_id);
        VerdictRecord rec;
        rec.case_id = response.case_id;
        rec.model = response.model;
        rec.judge = judge.name;
        rec.doctor = c.doctor;
        try {
            const auto prompt = build_judge_prompt(c.label.raw, response.text, tmpl);
            auto outcome = request_verdict(judge, prompt, transport);
            rec.ok = true;
            rec.verdict = std::move(outcome.verdict);
            rec.warnings = std::move(outcome.warnings);
            rec.attempts = outcome.attempts;
            ++verdicts;
        } catch (const judge_failure& e) {
            rec.error_kind = e.kind();
            rec.error_message = e.what();
            rec.transcripts = e.transcripts();
            rec.attempts = static_cast<int>(e.transcripts().size());
            ++failures;
        } catch (const error& e) {
            rec.error_kind = e.kind();
            rec.error_message = e.what();
            ++failures;
        }
        rec.recorded_at = text::utc_timestamp();
        store.append(std::move(rec));
        const auto n = ++done;
        if (options.progress) {
            std::lock_guard lock(progress_mutex);
            options.progress(n, summary.total);
        }
    };

    std::vector<std::thread> workers;
    std::vector<std::unique_ptr<std::atomic<std::size_t>>> cursors;
    for (std::size_t j = 0; j < judges.size(); ++j) {
        cursors.push_back(std::make_unique<std::atomic<std::size_t>>(0));
        const auto threads = std::min<std::size_t>(static_cast<std::size_t>(judges[j].max_in_flight),
                                                   pending[j].size());
        for (std::size_t t = 0; t < threads; ++t) {
            workers.emplace_back([&, j] {
                try {
                    for (;;) {
                        const auto i = cursors[j]->fetch_add(1);
                        if (i >= pending[j].size()) return;
                        if (!take_budget()) return;
                        judge_one(judges[j], *pending[j][i]);
                    }
                } catch (...) {
                    // Persistence failures stop this worker; the first one is rethrown.
                    std::lock_guard lock(progress_mutex);
                    if (!worker_error) worker_error = std::current_exception();
                }
            });
        }
    }
    for (auto& w : workers) w.join();
    if (worker_error) std::rethrow_exception(worker_error);

    summary.verdicts = verdicts;
    summary.failures = failures;
    summary.interrupted = interrupted;
    return summary;
}

} // namespace tcmeval
