#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "tcmeval/analytics.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/text.hpp"

namespace tcmeval {

enum class Dimension { Similarity, Philosophy, Safety, Completeness, Fluency };

inline constexpr std::array<Dimension, 5> kDimensions = {
    Dimension::Similarity, Dimension::Philosophy, Dimension::Safety, Dimension::Completeness,
    Dimension::Fluency};

inline std::string to_string(Dimension d) {
    switch (d) {
    case Dimension::Similarity: return "similarity";
    case Dimension::Philosophy: return "philosophy";
    case Dimension::Safety: return "safety";
    case Dimension::Completeness: return "completeness";
    case Dimension::Fluency: return "fluency";
    }
    return "?";
}

struct DimensionWeights {
    int similarity = 50;
    int philosophy = 20;
    int safety = 10;
    int completeness = 10;
    int fluency = 10;

    int of(Dimension d) const {
        switch (d) {
        case Dimension::Similarity: return similarity;
        case Dimension::Philosophy: return philosophy;
        case Dimension::Safety: return safety;
        case Dimension::Completeness: return completeness;
        case Dimension::Fluency: return fluency;
        }
        return 0;
    }
    int sum() const { return similarity + philosophy + safety + completeness + fluency; }
    bool operator==(const DimensionWeights&) const = default;
};

struct RaterInfo {
    std::string name_hash;  // salted SHA-256, hex
    std::string title;
    std::string group;
    bool operator==(const RaterInfo&) const = default;
};

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
        throw precondition_violation("SHA-256 digest failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < length; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

inline std::string hash_rater_identity(std::string_view identity, std::string_view salt) {
    std::string material(salt);
    material += '\0';
    material.append(identity);
    return sha256_hex(material);
}

inline std::string blinded_label(std::size_t index) { return "Model" + std::to_string(index + 1); }

namespace detail {

// Unbiased draw from [0, bound) by rejection; fixed across standard libraries,
// unlike std::uniform_int_distribution.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound);
    for (;;) {
        const std::uint64_t x = rng();
        if (x < limit) return x % bound;
    }
}

} // namespace detail

// Seeded Fisher-Yates: permutation[i] is the label index given to model i.
inline std::vector<std::size_t> blinding_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(detail::bounded(rng, i));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

struct Rating {
    std::string session_id;
    std::string case_id;
    std::string label;
    std::array<int, 5> scores{};  // indexed like kDimensions
    bool supersedes = false;
    std::string timestamp;

    int score(Dimension d) const { return scores[static_cast<std::size_t>(d)]; }
    bool operator==(const Rating&) const = default;
};

enum class SessionStatus { Open, Complete };

struct RatingSession {
    std::string id;
    RaterInfo rater;
    std::string doctor;
    std::vector<std::string> cases;
    std::vector<std::string> models;            // true names, as given
    std::map<std::string, std::string> blinding;  // true model -> label
    std::uint64_t seed = 0;
    SessionStatus status = SessionStatus::Open;
    std::vector<Rating> ratings;  // append-only, amendments included
    std::string created_at;

    std::vector<std::string> labels() const {
        std::vector<std::string> out;
        for (std::size_t i = 0; i < models.size(); ++i) out.push_back(blinded_label(i));
        return out;
    }

    std::optional<std::string> model_for_label(const std::string& label) const {
        for (const auto& [model, l] : blinding) {
            if (l == label) return model;
        }
        return std::nullopt;
    }

    // Latest rating per (case, label).
    std::map<std::pair<std::string, std::string>, const Rating*> active_ratings() const {
        std::map<std::pair<std::string, std::string>, const Rating*> out;
        for (const auto& r : ratings) out[{r.case_id, r.label}] = &r;
        return out;
    }

    std::size_t required_ratings() const { return cases.size() * models.size(); }
    bool operator==(const RatingSession&) const = default;
};

inline std::string to_string(SessionStatus s) { return s == SessionStatus::Open ? "open" : "complete"; }

inline RatingSession create_session(std::string id, RaterInfo rater, std::string doctor,
                                    std::vector<std::string> cases, std::vector<std::string> models,
                                    std::uint64_t seed) {
    if (cases.empty()) throw invalid_panel("a session needs at least one case");
    if (models.size() < 2) throw invalid_panel("a session needs at least two models");
    if (std::set<std::string>(cases.begin(), cases.end()).size() != cases.size()) {
        throw invalid_panel("case ids repeat");
    }
    if (std::set<std::string>(models.begin(), models.end()).size() != models.size()) {
        throw invalid_panel("model names repeat");
    }
    RatingSession s;
    s.id = std::move(id);
    s.rater = std::move(rater);
    s.doctor = std::move(doctor);
    s.cases = std::move(cases);
    s.models = std::move(models);
    s.seed = seed;
    const auto perm = blinding_permutation(s.models.size(), seed);
    for (std::size_t i = 0; i < s.models.size(); ++i) s.blinding[s.models[i]] = blinded_label(perm[i]);
    return s;
}

struct RatingInput {
    std::string case_id;
    std::string label;
    std::array<int, 5> scores{};
    bool supersede = false;
};

// Validates and appends a rating; closes the session once every
// (case, label) pair has one.
inline const Rating& submit_rating(RatingSession& session, const RatingInput& input,
                                   std::string timestamp = text::utc_timestamp()) {
    if (session.status != SessionStatus::Open) throw session_closed("session " + session.id + " is complete");
    if (std::find(session.cases.begin(), session.cases.end(), input.case_id) == session.cases.end()) {
        throw unknown_label("case " + input.case_id + " is not part of session " + session.id);
    }
    if (!session.model_for_label(input.label)) {
        throw unknown_label("label " + input.label + " is not part of session " + session.id);
    }
    for (std::size_t i = 0; i < input.scores.size(); ++i) {
        if (input.scores[i] < 1 || input.scores[i] > 10) {
            throw rating_out_of_range(to_string(kDimensions[i]) + " must be within 1..10, got " +
                                      std::to_string(input.scores[i]));
        }
    }
    const auto active = session.active_ratings();
    const bool exists = active.count({input.case_id, input.label}) > 0;
    if (exists && !input.supersede) {
        throw duplicate_rating("case " + input.case_id + " / " + input.label +
                               " already rated; resubmit with supersede to amend");
    }
    session.ratings.push_back({session.id, input.case_id, input.label, input.scores,
                               exists && input.supersede, std::move(timestamp)});
    if (session.active_ratings().size() == session.required_ratings()) {
        session.status = SessionStatus::Complete;
    }
    return session.ratings.back();
}

struct NextItem {
    std::string case_id;
    std::string label;
    std::size_t rated = 0;
    std::size_t total = 0;
};

// First unrated (case, label) pair in case order, then label order.
inline std::optional<NextItem> next_item(const RatingSession& session) {
    const auto active = session.active_ratings();
    for (const auto& c : session.cases) {
        for (const auto& label : session.labels()) {
            if (!active.count({c, label})) {
                return NextItem{c, label, active.size(), session.required_ratings()};
            }
        }
    }
    return std::nullopt;
}

// Σ score/10 × weight, in integer arithmetic until the final division.
inline double weighted_total(const Rating& rating, const DimensionWeights& weights = {}) {
    long long sum = 0;
    for (auto d : kDimensions) {
        const int s = rating.score(d);
        if (s < 1 || s > 10) throw rating_out_of_range(to_string(d) + " must be within 1..10");
        sum += static_cast<long long>(s) * weights.of(d);
    }
    return static_cast<double>(sum) / 10.0;
}

struct HumanReportRow {
    std::string doctor;
    std::string model;
    std::string dimension;  // the five dimensions plus "weighted_total"
    Stats stats;
};

struct HumanReport {
    std::vector<HumanReportRow> rows;
    std::vector<std::string> warnings;

    const HumanReportRow* find(const std::string& doctor, const std::string& model,
                               const std::string& dimension) const {
        for (const auto& r : rows) {
            if (r.doctor == doctor && r.model == model && r.dimension == dimension) return &r;
        }
        return nullptr;
    }
};

// Pools the active ratings of complete sessions per (doctor, true model).
// The weighted total is computed per rating, then averaged.
inline HumanReport unblind_report(const std::vector<RatingSession>& sessions,
                                  const DimensionWeights& weights = {}) {
    HumanReport report;
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> values;
    for (const auto& s : sessions) {
        if (s.status != SessionStatus::Complete) {
            report.warnings.push_back("session " + s.id + " is not complete; excluded");
            continue;
        }
        for (const auto& [pair, rating] : s.active_ratings()) {
            const auto model = s.model_for_label(pair.second);
            if (!model) continue;
            for (auto d : kDimensions) {
                values[{s.doctor, *model, to_string(d)}].push_back(rating->score(d));
            }
            values[{s.doctor, *model, "weighted_total"}].push_back(weighted_total(*rating, weights));
        }
    }
    for (const auto& [key, v] : values) {
        report.rows.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), aggregate_stats(v)});
    }
    return report;
}

inline std::string to_csv(const HumanReport& r) {
    std::string out = "doctor,model,dimension,mean,std,n\n";
    for (const auto& row : r.rows) {
        out += csv_field(row.doctor) + "," + csv_field(row.model) + "," + row.dimension + "," +
               format_number(row.stats.mean) + "," + format_number(row.stats.std) + "," +
               std::to_string(row.stats.n) + "\n";
    }
    return out;
}

inline nlohmann::ordered_json to_json(const HumanReport& r) {
    nlohmann::ordered_json j;
    auto rows = nlohmann::ordered_json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"doctor", row.doctor},
                        {"model", row.model},
                        {"dimension", row.dimension},
                        {"mean", row.stats.mean},
                        {"std", row.stats.std},
                        {"n", row.stats.n},
                        {"rendered", format_stats(row.stats)}});
    }
    j["rows"] = rows;
    j["warnings"] = r.warnings;
    j["notes"] = {"weighted_total = sum(score / 10 * weight), weighted per rating then averaged",
                  "std is the sample standard deviation (n-1)"};
    return j;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json to_json(const Rating& r) {
    nlohmann::ordered_json scores;
    for (auto d : kDimensions) scores[to_string(d)] = r.score(d);
    return {{"session_id", r.session_id}, {"case_id", r.case_id},     {"label", r.label},
            {"scores", scores},           {"supersedes", r.supersedes}, {"timestamp", r.timestamp}};
}

inline std::array<int, 5> scores_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw parse_error("scores must be an object");
    std::array<int, 5> out{};
    for (std::size_t i = 0; i < kDimensions.size(); ++i) {
        const auto name = to_string(kDimensions[i]);
        if (!j.contains(name)) throw parse_error("scores." + name + " is missing");
        const auto& v = j.at(name);
        if (!v.is_number_integer()) {
            if (v.is_number() && v.get<double>() == static_cast<double>(static_cast<long long>(v.get<double>()))) {
                out[i] = static_cast<int>(v.get<double>());
                continue;
            }
            throw parse_error("scores." + name + " must be an integer");
        }
        const auto x = v.get<long long>();
        out[i] = x < -1000 || x > 1000 ? -1 : static_cast<int>(x);
    }
    return out;
}

inline Rating rating_from_json(const nlohmann::json& j) {
    try {
        return {j.at("session_id").get<std::string>(), j.at("case_id").get<std::string>(),
                j.at("label").get<std::string>(),      scores_from_json(j.at("scores")),
                j.value("supersedes", false),          j.value("timestamp", "")};
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("malformed rating: ") + e.what());
    }
}

// Full session state for storage. Contains true model names; never send it
// to a client while the session is open.
inline nlohmann::ordered_json to_json(const RatingSession& s) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["rater"] = {{"name_hash", s.rater.name_hash}, {"title", s.rater.title}, {"group", s.rater.group}};
    j["doctor"] = s.doctor;
    j["cases"] = s.cases;
    j["models"] = s.models;
    nlohmann::ordered_json blinding;
    for (const auto& m : s.models) blinding[m] = s.blinding.at(m);
    j["blinding"] = blinding;
    j["seed"] = s.seed;
    j["status"] = to_string(s.status);
    auto ratings = nlohmann::ordered_json::array();
    for (const auto& r : s.ratings) ratings.push_back(to_json(r));
    j["ratings"] = ratings;
    j["created_at"] = s.created_at;
    return j;
}

inline RatingSession session_from_json(const nlohmann::json& j) {
    RatingSession s;
    try {
        s.id = j.at("id").get<std::string>();
        s.rater = {j.at("rater").at("name_hash").get<std::string>(), j.at("rater").value("title", ""),
                   j.at("rater").value("group", "")};
        s.doctor = j.at("doctor").get<std::string>();
        s.cases = j.at("cases").get<std::vector<std::string>>();
        s.models = j.at("models").get<std::vector<std::string>>();
        s.blinding = j.at("blinding").get<std::map<std::string, std::string>>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.status = j.at("status").get<std::string>() == "complete" ? SessionStatus::Complete
                                                                   : SessionStatus::Open;
        for (const auto& r : j.at("ratings")) s.ratings.push_back(rating_from_json(r));
        s.created_at = j.value("created_at", "");
    } catch (const nlohmann::json::exception& e) {
        throw parse_error(std::string("malformed session: ") + e.what());
    }
    return s;
}

// What a rater's client may see: labels only.
inline nlohmann::ordered_json blinded_view(const RatingSession& s) {
    nlohmann::ordered_json j;
    j["id"] = s.id;
    j["doctor"] = s.doctor;
    j["cases"] = s.cases;
    j["labels"] = s.labels();
    j["status"] = to_string(s.status);
    j["rated"] = s.active_ratings().size();
    j["total"] = s.required_ratings();
    return j;
}

// JSONL export of the active ratings. Open sessions stay blinded; complete
// ones carry the true model name next to each label.
inline std::string export_session_jsonl(const RatingSession& s, const DimensionWeights& weights = {}) {
    std::string out;
    for (const auto& [pair, rating] : s.active_ratings()) {
        auto j = to_json(*rating);
        j["doctor"] = s.doctor;
        if (s.status == SessionStatus::Complete) j["model"] = *s.model_for_label(rating->label);
        j["weighted_total"] = weighted_total(*rating, weights);
        out += j.dump() + "\n";
    }
    return out;
}

} // namespace tcmeval
