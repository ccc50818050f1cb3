#pragma once

// In-process stand-ins for judge endpoints: a scripted ChatTransport and a
// small verdict factory whose scores are known to the test.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <regex>
#include <set>
#include <string>
#include <thread>

#include "tcmeval/tcmeval.hpp"

namespace mock {

// Scores for one triple, derived from a string key so every run agrees.
inline tcmeval::JudgeVerdict verdict_for(const std::string& key) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : key) {
        h ^= c;
        h *= 1099511628211ull;
    }
    auto pick = [&](int n) {
        const int x = static_cast<int>(h % static_cast<std::uint64_t>(n));
        h /= static_cast<std::uint64_t>(n);
        return x;
    };
    tcmeval::JudgeVerdict v;
    v.completeness.answered = pick(6);
    v.completeness.score = v.completeness.answered;
    v.completeness.required = 5;

    v.etiology.etiology_recognition = pick(5);
    v.etiology.pathogenesis = pick(5);
    v.etiology.coherence = pick(3);
    v.etiology.score = v.etiology.etiology_recognition + v.etiology.pathogenesis + v.etiology.coherence;

    v.syndrome.accuracy = pick(7);
    v.syndrome.location_nature = pick(5);
    v.syndrome.score = v.syndrome.accuracy + v.syndrome.location_nature;

    v.principle.accuracy = pick(6);
    v.principle.specificity = pick(4);
    v.principle.specialized = pick(3);
    v.principle.score = v.principle.accuracy + v.principle.specificity + v.principle.specialized;

    auto& p = v.prescription;
    p.n_label = 12;
    p.n_generated = 10;
    p.n_matched = pick(11);
    p.match_score = tcmeval::herb_match_component(static_cast<std::size_t>(p.n_matched), 12);
    p.score = p.match_score + 0.5 * pick(3);
    p.rate = tcmeval::format_rate_percent(static_cast<std::size_t>(p.n_matched), 12);

    v.theory.accuracy = pick(6);
    v.theory.pervasiveness = pick(4);
    v.theory.completeness = pick(3);
    v.theory.score = v.theory.accuracy + v.theory.pervasiveness + v.theory.completeness;

    v.total = v.item_sum();
    return v;
}

inline std::string chat_reply(const std::string& content) {
    return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

inline std::string verdict_reply(const tcmeval::JudgeVerdict& v) { return chat_reply(tcmeval::to_json(v).dump()); }

// Response texts carry a marker "[[case|model]]" so the mock can tell which
// triple a request belongs to.
inline std::string marker(const std::string& case_id, const std::string& model) {
    return "[[" + case_id + "|" + model + "]]";
}

inline std::string marker_in(const std::string& body) {
    static const std::regex re(R"(\[\[([^\]|]+)\|([^\]]+)\]\])");
    std::smatch m;
    const auto user = nlohmann::json::parse(body).at("messages").at(1).at("content").get<std::string>();
    if (!std::regex_search(user, m, re)) return "";
    return m[1].str() + "|" + m[2].str();
}

// Answers every request with verdict_for(case|model|judge); counts requests
// per triple and the peak number in flight per judge.
class ScoringTransport : public tcmeval::ChatTransport {
public:
    explicit ScoringTransport(std::chrono::milliseconds delay = std::chrono::milliseconds(0)) : delay_(delay) {}

    tcmeval::HttpReply post(const tcmeval::JudgeConfig& judge, const std::string& body) override {
        const auto key = marker_in(body) + "|" + judge.name;
        int now = 0;
        {
            std::lock_guard lock(mutex_);
            ++requests_[key];
            now = ++in_flight_[judge.name];
            peak_[judge.name] = std::max(peak_[judge.name], now);
        }
        if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
        {
            std::lock_guard lock(mutex_);
            --in_flight_[judge.name];
        }
        return {200, verdict_reply(verdict_for(key)), "", std::nullopt};
    }

    std::map<std::string, int> requests() const {
        std::lock_guard lock(mutex_);
        return requests_;
    }
    int peak(const std::string& judge) const {
        std::lock_guard lock(mutex_);
        const auto it = peak_.find(judge);
        return it == peak_.end() ? 0 : it->second;
    }
    std::size_t total_requests() const {
        std::lock_guard lock(mutex_);
        std::size_t n = 0;
        for (const auto& [k, c] : requests_) n += static_cast<std::size_t>(c);
        return n;
    }

private:
    std::chrono::milliseconds delay_;
    mutable std::mutex mutex_;
    std::map<std::string, int> requests_;
    std::map<std::string, int> in_flight_;
    std::map<std::string, int> peak_;
};

// Replays a fixed list of replies, the last one repeating.
class SequenceTransport : public tcmeval::ChatTransport {
public:
    explicit SequenceTransport(std::vector<tcmeval::HttpReply> replies) : replies_(std::move(replies)) {}

    tcmeval::HttpReply post(const tcmeval::JudgeConfig&, const std::string& body) override {
        std::lock_guard lock(mutex_);
        bodies.push_back(body);
        const auto i = std::min(calls_++, replies_.size() - 1);
        return replies_[i];
    }
    std::size_t calls() const { return calls_; }
    std::vector<std::string> bodies;

private:
    std::vector<tcmeval::HttpReply> replies_;
    std::size_t calls_ = 0;
    std::mutex mutex_;
};

inline tcmeval::JudgeConfig judge(const std::string& name, int max_in_flight = 2) {
    tcmeval::JudgeConfig j;
    j.name = name;
    j.model = name;
    j.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    j.max_in_flight = max_in_flight;
    j.backoff_ms = 1;
    j.max_backoff_ms = 5;
    return j;
}

// Gold answer whose prescription section lists the given herbs.
inline std::string label_text(const std::string& herbs) {
    return "Analysis of Etiology and Pathogenesis\n湿热内蕴。\n\nSyndrome Differentiation\n湿热证。\n\n"
           "Treatment Principle\n清热利湿。\n\nTCM Prescription\n" +
           herbs + "\n\nDistinguished Theory application\n从脾胃论治。";
}

inline tcmeval::CaseRecord make_case(const std::string& id, const std::string& doctor,
                                     const std::string& herbs = "黄芩10g、黄连6g、甘草3g") {
    tcmeval::CaseRecord c;
    c.id = id;
    c.doctor = doctor;
    c.instruction = "患者主诉 " + id;
    c.label = tcmeval::parse_structured_response(label_text(herbs));
    return c;
}

inline tcmeval::ModelResponse make_response(const std::string& case_id, const std::string& model,
                                            const std::string& herbs = "黄芩10g、甘草3g") {
    return {case_id, model, label_text(herbs) + "\n" + marker(case_id, model)};
}

} // namespace mock
