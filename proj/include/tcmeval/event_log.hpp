#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcmeval/case_record.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/human_eval.hpp"
#include "tcmeval/judge_gateway.hpp"
#include "tcmeval/text.hpp"

namespace tcmeval {

namespace event_type {
inline constexpr std::string_view case_ingested = "case_ingested";
inline constexpr std::string_view response_ingested = "response_ingested";
inline constexpr std::string_view verdict_stored = "verdict_stored";
inline constexpr std::string_view session_created = "session_created";
inline constexpr std::string_view rating_submitted = "rating_submitted";
inline constexpr std::string_view judge_run_started = "judge_run_started";
} // namespace event_type

struct Event {
    std::uint64_t sequence = 0;
    std::string type;
    std::string timestamp;
    nlohmann::json payload;
    bool operator==(const Event&) const = default;
};

inline nlohmann::ordered_json to_json(const Event& e) {
    nlohmann::ordered_json j;
    j["seq"] = e.sequence;
    j["type"] = e.type;
    j["ts"] = e.timestamp;
    j["payload"] = e.payload;
    return j;
}

inline Event event_from_json(const nlohmann::json& j, std::uint64_t expected) {
    try {
        return {j.at("seq").get<std::uint64_t>(), j.at("type").get<std::string>(),
                j.at("ts").get<std::string>(), j.at("payload")};
    } catch (const nlohmann::json::exception& e) {
        throw corrupt_log(expected, std::string("malformed event: ") + e.what());
    }
}

// Everything the service persists. Only apply() mutates it, so live updates
// and replay share one code path.
class EvalState {
public:
    std::vector<CaseRecord> cases;
    std::vector<ModelResponse> responses;
    VerdictStore verdicts;
    std::map<std::string, RatingSession> sessions;
    std::vector<std::string> judge_runs;
    std::uint64_t last_sequence = 0;

    const CaseRecord* find_case(const std::string& id) const {
        const auto it = case_index_.find(id);
        return it == case_index_.end() ? nullptr : &cases[it->second];
    }

    const ModelResponse* find_response(const std::string& case_id, const std::string& model) const {
        const auto it = response_index_.find({case_id, model});
        return it == response_index_.end() ? nullptr : &responses[it->second];
    }

    std::string next_session_id() const { return "session-" + std::to_string(sessions.size() + 1); }
    std::string next_run_id() const { return "run-" + std::to_string(judge_runs.size() + 1); }

    // Throws precondition_violation for an event that does not fit the
    // current state; replay turns that into CorruptLog.
    void apply(const Event& e) {
        if (e.sequence != last_sequence + 1) {
            throw corrupt_log(e.sequence, "expected sequence " + std::to_string(last_sequence + 1));
        }
        if (e.type == event_type::case_ingested) {
            auto c = case_from_json(e.payload);
            if (find_case(c.id)) throw precondition_violation("duplicate case id " + c.id);
            case_index_[c.id] = cases.size();
            cases.push_back(std::move(c));
        } else if (e.type == event_type::response_ingested) {
            auto r = model_response_from_json(e.payload);
            if (!find_case(r.case_id)) throw precondition_violation("response for unknown case " + r.case_id);
            if (find_response(r.case_id, r.model)) {
                throw precondition_violation("duplicate response " + r.case_id + "/" + r.model);
            }
            response_index_[{r.case_id, r.model}] = responses.size();
            responses.push_back(std::move(r));
        } else if (e.type == event_type::verdict_stored) {
            verdicts.append(verdict_record_from_json(e.payload));
        } else if (e.type == event_type::session_created) {
            auto s = session_from_json(e.payload);
            if (!s.ratings.empty()) throw precondition_violation("new session carries ratings");
            if (sessions.count(s.id)) throw precondition_violation("duplicate session id " + s.id);
            sessions.emplace(s.id, std::move(s));
        } else if (e.type == event_type::rating_submitted) {
            const auto r = rating_from_json(e.payload);
            const auto it = sessions.find(r.session_id);
            if (it == sessions.end()) throw precondition_violation("rating for unknown session " + r.session_id);
            submit_rating(it->second, {r.case_id, r.label, r.scores, r.supersedes}, r.timestamp);
        } else if (e.type == event_type::judge_run_started) {
            judge_runs.push_back(e.payload.at("run_id").get<std::string>());
        } else {
            throw precondition_violation("unknown event type " + e.type);
        }
        last_sequence = e.sequence;
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["last_sequence"] = last_sequence;
        auto cs = nlohmann::ordered_json::array();
        for (const auto& c : cases) cs.push_back(nlohmann::ordered_json(tcmeval::to_json(c)));
        j["cases"] = cs;
        auto rs = nlohmann::ordered_json::array();
        for (const auto& r : responses) rs.push_back(nlohmann::ordered_json(tcmeval::to_json(r)));
        j["responses"] = rs;
        auto vs = nlohmann::ordered_json::array();
        for (const auto& v : verdicts.snapshot()) vs.push_back(tcmeval::to_json(v));
        j["verdicts"] = vs;
        auto ss = nlohmann::ordered_json::array();
        for (const auto& [id, s] : sessions) ss.push_back(tcmeval::to_json(s));
        j["sessions"] = ss;
        j["judge_runs"] = judge_runs;
        return j;
    }

    static EvalState from_json(const nlohmann::json& j) {
        EvalState st;
        try {
            for (const auto& c : j.at("cases")) {
                auto rec = case_from_json(c);
                st.case_index_[rec.id] = st.cases.size();
                st.cases.push_back(std::move(rec));
            }
            for (const auto& r : j.at("responses")) {
                auto rec = model_response_from_json(r);
                st.response_index_[{rec.case_id, rec.model}] = st.responses.size();
                st.responses.push_back(std::move(rec));
            }
            for (const auto& v : j.at("verdicts")) st.verdicts.append(verdict_record_from_json(v));
            for (const auto& s : j.at("sessions")) {
                auto session = session_from_json(s);
                st.sessions.emplace(session.id, std::move(session));
            }
            st.judge_runs = j.at("judge_runs").get<std::vector<std::string>>();
            st.last_sequence = j.at("last_sequence").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            throw parse_error(std::string("malformed snapshot: ") + e.what());
        }
        return st;
    }

private:
    std::map<std::string, std::size_t> case_index_;
    std::map<std::pair<std::string, std::string>, std::size_t> response_index_;
};

// Parses JSONL events, checking that sequence numbers run 1, 2, 3, ...
// A final line without a newline that does not parse is a torn write and is
// dropped; truncated_at reports where it began.
struct LogContents {
    std::vector<Event> events;
    std::optional<std::uintmax_t> truncated_at;
};

inline LogContents read_event_log(const std::filesystem::path& path, std::uint64_t first_sequence = 1) {
    LogContents out;
    std::ifstream in(path, std::ios::binary);
    if (!in) return out;
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::uint64_t expected = first_sequence;
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto nl = content.find('\n', pos);
        const bool complete = nl != std::string::npos;
        if (!complete) nl = content.size();
        const auto line = std::string_view(content).substr(pos, nl - pos);
        if (!text::is_blank(line)) {
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error&) {
                if (!complete) {
                    out.truncated_at = pos;
                    break;
                }
                throw corrupt_log(expected, "unparseable line");
            }
            auto e = event_from_json(j, expected);
            if (e.sequence != expected) {
                throw corrupt_log(e.sequence, "expected sequence " + std::to_string(expected));
            }
            out.events.push_back(std::move(e));
            ++expected;
        }
        pos = nl + 1;
    }
    return out;
}

// Reconstructs state from a snapshot (optional) and the events after it.
inline EvalState replay(const std::vector<Event>& events, std::optional<EvalState> base = std::nullopt) {
    EvalState st = base ? std::move(*base) : EvalState{};
    for (const auto& e : events) {
        if (e.sequence <= st.last_sequence) continue;
        try {
            st.apply(e);
        } catch (const corrupt_log&) {
            throw;
        } catch (const error& err) {
            throw corrupt_log(e.sequence, err.what());
        } catch (const nlohmann::json::exception& err) {
            throw corrupt_log(e.sequence, err.what());
        }
    }
    return st;
}

// Event log plus the state it produces. Writers are serialized: an event is
// validated against a copy of the affected state, written and flushed, and
// only then applied.
class Repository {
public:
    explicit Repository(std::filesystem::path data_dir, std::uint64_t snapshot_every = 0)
        : dir_(std::move(data_dir)), snapshot_every_(snapshot_every) {
        std::error_code ec;
        std::filesystem::create_directories(dir_, ec);
        if (ec) throw io_error("cannot create data directory " + dir_.string() + ": " + ec.message());
        std::optional<EvalState> base;
        if (std::filesystem::exists(snapshot_path())) {
            std::ifstream in(snapshot_path());
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(in);
            } catch (const nlohmann::json::parse_error& e) {
                throw io_error("unreadable snapshot " + snapshot_path().string() + ": " + e.what());
            }
            base = EvalState::from_json(j);
        }
        auto contents = read_event_log(log_path());
        if (contents.truncated_at) std::filesystem::resize_file(log_path(), *contents.truncated_at);
        if (base && !contents.events.empty() && contents.events.back().sequence < base->last_sequence) {
            throw corrupt_log(contents.events.back().sequence, "log is older than the snapshot");
        }
        state_ = replay(contents.events, std::move(base));
        out_.open(log_path(), std::ios::binary | std::ios::app);
        if (!out_) throw io_error("cannot open event log " + log_path().string());
    }

    ~Repository() { flush(); }

    std::filesystem::path log_path() const { return dir_ / "events.jsonl"; }
    std::filesystem::path snapshot_path() const { return dir_ / "snapshot.json"; }
    const std::filesystem::path& data_dir() const { return dir_; }

    // Read access under a shared lock.
    template <typename F>
    auto read(F&& f) const {
        std::shared_lock lock(mutex_);
        return f(static_cast<const EvalState&>(state_));
    }

    std::uint64_t ingest_case(const CaseRecord& c) {
        return commit(event_type::case_ingested, tcmeval::to_json(c), [&](const EvalState& st) {
            if (st.find_case(c.id)) throw precondition_violation("duplicate case id " + c.id);
        });
    }

    std::uint64_t ingest_response(const ModelResponse& r) {
        return commit(event_type::response_ingested, tcmeval::to_json(r), [&](const EvalState& st) {
            if (!st.find_case(r.case_id)) throw precondition_violation("response for unknown case " + r.case_id);
            if (st.find_response(r.case_id, r.model)) {
                throw precondition_violation("duplicate response " + r.case_id + "/" + r.model);
            }
        });
    }

    std::uint64_t store_verdict(const VerdictRecord& v) {
        return commit(event_type::verdict_stored, tcmeval::to_json(v), [&](const EvalState& st) {
            if (st.verdicts.contains(v.key())) throw precondition_violation("triple already recorded");
        });
    }

    // The session id is assigned here so it follows from the log alone.
    RatingSession create_session(RaterInfo rater, std::string doctor, std::vector<std::string> cases,
                                 std::vector<std::string> models, std::uint64_t seed) {
        std::unique_lock lock(mutex_);
        auto s = tcmeval::create_session(state_.next_session_id(), std::move(rater), std::move(doctor),
                                         std::move(cases), std::move(models), seed);
        s.created_at = text::utc_timestamp();
        append_locked(event_type::session_created, tcmeval::to_json(s));
        return state_.sessions.at(s.id);
    }

    Rating submit_rating(const std::string& session_id, const RatingInput& input) {
        std::unique_lock lock(mutex_);
        const auto it = state_.sessions.find(session_id);
        if (it == state_.sessions.end()) throw unknown_session("no session " + session_id);
        auto trial = it->second;
        const auto rating = tcmeval::submit_rating(trial, input);
        append_locked(event_type::rating_submitted, tcmeval::to_json(rating));
        return rating;
    }

    std::string start_judge_run(const nlohmann::json& details) {
        std::unique_lock lock(mutex_);
        const auto id = state_.next_run_id();
        auto payload = details;
        payload["run_id"] = id;
        append_locked(event_type::judge_run_started, payload);
        return id;
    }

    // Writes snapshot.json atomically; the log is kept whole for audit.
    void snapshot() {
        std::shared_lock lock(mutex_);
        write_snapshot_locked();
    }

    void flush() {
        std::lock_guard lock(write_mutex_);
        if (out_.is_open()) out_.flush();
    }

private:
    template <typename Check>
    std::uint64_t commit(std::string_view type, const nlohmann::ordered_json& payload, Check&& check) {
        std::unique_lock lock(mutex_);
        check(static_cast<const EvalState&>(state_));
        return append_locked(type, payload);
    }

    std::uint64_t append_locked(std::string_view type, const nlohmann::ordered_json& payload) {
        Event e{state_.last_sequence + 1, std::string(type), text::utc_timestamp(),
                nlohmann::json::parse(
                    payload.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace))};
        {
            std::lock_guard wlock(write_mutex_);
            out_ << to_json(e).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
            out_.flush();
            if (!out_) throw io_error("cannot append to event log " + log_path().string());
        }
        state_.apply(e);
        if (snapshot_every_ > 0 && e.sequence % snapshot_every_ == 0) write_snapshot_locked();
        return e.sequence;
    }

    void write_snapshot_locked() const {
        const auto tmp = dir_ / "snapshot.json.tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            out << state_.to_json().dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
            if (!out) throw io_error("cannot write snapshot " + tmp.string());
        }
        std::filesystem::rename(tmp, snapshot_path());
    }

    std::filesystem::path dir_;
    std::uint64_t snapshot_every_;
    mutable std::shared_mutex mutex_;
    std::mutex write_mutex_;
    std::ofstream out_;
    EvalState state_;
};

} // namespace tcmeval
