#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <limits>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcmeval/case_record.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/herb_lexicon.hpp"
#include "tcmeval/response_parser.hpp"
#include "tcmeval/text.hpp"

namespace tcmeval {

// Item maxima of the judge rubric: completeness 5, five items of 10 each.
inline constexpr double kCompletenessMax = 5.0;
inline constexpr double kItemMax = 10.0;
inline constexpr double kMaximumScore = 55.0;
inline constexpr int kRequiredItems = 5;

struct CompletenessItem {
    double score = 0;
    int answered = 0;
    int required = kRequiredItems;
    std::vector<std::string> missing;
    bool operator==(const CompletenessItem&) const = default;
};

struct EtiologyItem {
    double score = 0;
    double etiology_recognition = 0;  // 0..4
    double pathogenesis = 0;          // 0..4
    double coherence = 0;             // 0..2
    bool operator==(const EtiologyItem&) const = default;
};

struct SyndromeItem {
    double score = 0;
    double accuracy = 0;         // 0..6
    double location_nature = 0;  // 0..4
    bool operator==(const SyndromeItem&) const = default;
};

struct PrincipleItem {
    double score = 0;
    double accuracy = 0;     // 0..5
    double specificity = 0;  // 0..3
    double specialized = 0;  // 0..2
    bool operator==(const PrincipleItem&) const = default;
};

struct PrescriptionItem {
    double score = 0;
    double match_score = 0;  // 0..9; score - match_score is the composition-logic point
    int n_matched = 0;
    int n_label = 0;
    int n_generated = 0;
    std::vector<std::string> overlapped;
    std::string rate = "0%";
    bool operator==(const PrescriptionItem&) const = default;
};

struct TheoryItem {
    double score = 0;
    double accuracy = 0;       // 0..5
    double pervasiveness = 0;  // 0..3
    double completeness = 0;   // 0..2
    bool operator==(const TheoryItem&) const = default;
};

struct JudgeVerdict {
    CompletenessItem completeness;
    EtiologyItem etiology;
    SyndromeItem syndrome;
    PrincipleItem principle;
    PrescriptionItem prescription;
    TheoryItem theory;
    double total = 0;
    double max_score = kMaximumScore;

    double item_sum() const {
        return completeness.score + etiology.score + syndrome.score + principle.score +
               prescription.score + theory.score;
    }
    bool operator==(const JudgeVerdict&) const = default;
};

struct ValidatedVerdict {
    JudgeVerdict verdict;
    std::vector<std::string> warnings;
};

// Judge JSON key names, spelled exactly as the published schema spells them
// (stray spaces included). Input keys are matched after trimming and case
// folding, so either schema variant is accepted.
namespace keys {
inline constexpr std::string_view completeness = "Completeness";
inline constexpr std::string_view answered = "Number of Items Actually Answered ";
inline constexpr std::string_view required = "Total Number of Items Requiring Responses ";
inline constexpr std::string_view missing = "Missing Item";
inline constexpr std::string_view etiology = "Analysis of Etiology and Pathogenesis";
inline constexpr std::string_view recognition = "Recognition of Etiology";
inline constexpr std::string_view pathogenesis = "Description of Pathogenesis";
inline constexpr std::string_view coherence = "Logical Coherence ";
inline constexpr std::string_view syndrome = "Syndrome Differentiation";
inline constexpr std::string_view syndrome_accuracy = "Accuracy of Syndrome";
inline constexpr std::string_view location_nature = "Disease Location and Nature ";
inline constexpr std::string_view principle = "Treatment Principle";
inline constexpr std::string_view principle_accuracy = "Accuracy of Treatment Principle";
inline constexpr std::string_view specificity = " Specificity of Treatment Method ";
inline constexpr std::string_view specialized = " Application of Specialized Methods ";
inline constexpr std::string_view prescription = "TCM Prescription";
inline constexpr std::string_view match_score = " Medicinal Match Score ";
inline constexpr std::string_view n_matched = "Number of matched herbs";
inline constexpr std::string_view n_label = "Number of Herbs in Label Prescription";
inline constexpr std::string_view n_generated = "Number of Herbs in Model-Generated Prescription";
inline constexpr std::string_view overlapped = "The List of Overlapped Herbs in both TCM Prescriptions ";
inline constexpr std::string_view rate = "Matching rates";
inline constexpr std::string_view theory = "Distinguished Theory application";
inline constexpr std::string_view theory_accuracy = "Accuracy of Academic Thought";
inline constexpr std::string_view pervasiveness = "Pervasiveness of Thought";
inline constexpr std::string_view elaboration = "Completeness of Elaboration";
inline constexpr std::string_view score = "score";
inline constexpr std::string_view total = "Total Score";
inline constexpr std::string_view maximum = "Maximum Score";
} // namespace keys

// ---------------------------------------------------------------------------
// Locally computable scores

// Completeness points equal the number of answered items (answered / 5 * 5).
inline double completeness_score(int answered) {
    if (answered < 0 || answered > kRequiredItems) {
        throw range_error("answered items must be within 0..5, got " + std::to_string(answered));
    }
    return static_cast<double>(answered);
}

namespace detail {

// round_half_up(numerator / denominator) for non-negative integers.
inline long long div_round_half_up(long long numerator, long long denominator) {
    return (2 * numerator + denominator) / (2 * denominator);
}

inline long long logic_cents(double logic_points) {
    if (logic_points == 0.0) return 0;
    if (logic_points == 0.5) return 50;
    if (logic_points == 1.0) return 100;
    throw invalid_logic_points("composition logic points must be 0, 0.5 or 1");
}

} // namespace detail

// matched / label * 9, rounded half-up to 2 decimals. Computed in integer
// hundredths so 5/12 * 9 is exactly 3.75.
inline double herb_match_component(std::size_t n_matched, std::size_t n_label) {
    if (n_label == 0) throw empty_label("label prescription has no herbs");
    if (n_matched > n_label) throw range_error("matched herbs exceed label herbs");
    const auto cents = detail::div_round_half_up(static_cast<long long>(n_matched) * 900,
                                                 static_cast<long long>(n_label));
    return static_cast<double>(cents) / 100.0;
}

inline double herb_match_score(const MatchResult& match, double logic_points) {
    if (match.n_label == 0) throw empty_label("label prescription has no herbs");
    const auto logic = detail::logic_cents(logic_points);
    if (match.n_matched > match.n_label) throw range_error("matched herbs exceed label herbs");
    const auto cents = detail::div_round_half_up(static_cast<long long>(match.n_matched) * 900,
                                                 static_cast<long long>(match.n_label));
    return static_cast<double>(cents + logic) / 100.0;
}

// "41.67%" style rendering of matched / label.
inline std::string format_rate_percent(std::size_t n_matched, std::size_t n_label) {
    if (n_label == 0) return "0%";
    const auto hundredths = detail::div_round_half_up(static_cast<long long>(n_matched) * 10000,
                                                      static_cast<long long>(n_label));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%lld.%02lld", hundredths / 100, hundredths % 100);
    std::string s = buf;
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    return s + "%";
}

// ---------------------------------------------------------------------------
// Schema validation

namespace detail {

class verdict_reader {
public:
    explicit verdict_reader(bool strict) : strict_(strict) {}

    std::vector<std::string> errors;
    std::vector<std::string> warnings;

    // Indexes an object's keys by folded spelling and tracks which were used.
    struct object_view {
        const nlohmann::json* object = nullptr;
        std::unordered_map<std::string, std::string> by_folded;  // folded -> original
        std::unordered_set<std::string> used;
    };

    object_view view(const nlohmann::json& object, const std::string& path) {
        object_view v;
        v.object = &object;
        for (const auto& [key, value] : object.items()) {
            const auto folded = text::fold(key);
            if (!v.by_folded.emplace(folded, key).second) {
                report(path + "/" + std::string(text::trim(key)), "duplicate key");
            }
        }
        return v;
    }

    const nlohmann::json* find(object_view& v, std::string_view canonical,
                               std::initializer_list<std::string_view> aliases = {}) {
        auto lookup = [&](std::string_view name) -> const nlohmann::json* {
            const auto it = v.by_folded.find(text::fold(name));
            if (it == v.by_folded.end()) return nullptr;
            v.used.insert(it->first);
            return &v.object->at(it->second);
        };
        if (auto* hit = lookup(canonical)) return hit;
        for (auto alias : aliases) {
            if (auto* hit = lookup(alias)) return hit;
        }
        return nullptr;
    }

    void reject_unknown(const object_view& v, const std::string& path) {
        for (const auto& [folded, original] : v.by_folded) {
            if (v.used.count(folded)) continue;
            if (strict_) errors.push_back(path + "/" + std::string(text::trim(original)) + ": unexpected key");
            else warnings.push_back(path + "/" + std::string(text::trim(original)) + ": unexpected key ignored");
        }
    }

    // Numeric field clamped to [0, max].
    double number(object_view& v, const std::string& item_path, std::string_view key, double max,
                  std::initializer_list<std::string_view> aliases = {}) {
        const auto path = item_path + "/" + std::string(text::trim(key));
        const auto* value = find(v, key, aliases);
        if (!value) {
            errors.push_back(path + ": missing");
            return 0;
        }
        auto parsed = as_number(*value, path);
        if (!parsed) return 0;
        return clamp(*parsed, max, path);
    }

    int count(object_view& v, const std::string& item_path, std::string_view key,
              std::optional<int> max = std::nullopt) {
        const auto path = item_path + "/" + std::string(text::trim(key));
        const auto* value = find(v, key);
        if (!value) {
            errors.push_back(path + ": missing");
            return 0;
        }
        auto parsed = as_number(*value, path);
        if (!parsed) return 0;
        double x = *parsed;
        if (x != std::floor(x)) {
            report(path, "expected an integer count");
            x = std::floor(x + 0.5);
        }
        if (x < 0 || (max && x > *max)) {
            const double hi = max ? *max : x;
            report(path, "count out of range");
            x = std::clamp(x, 0.0, hi);
        }
        return static_cast<int>(x);
    }

    std::vector<std::string> strings(object_view& v, const std::string& item_path,
                                     std::string_view key) {
        const auto path = item_path + "/" + std::string(text::trim(key));
        const auto* value = find(v, key);
        std::vector<std::string> out;
        if (!value) {
            errors.push_back(path + ": missing");
            return out;
        }
        if (value->is_null()) {
            report(path, "null list");
            return out;
        }
        if (!value->is_array()) {
            if (!strict_ && value->is_string()) {
                warnings.push_back(path + ": single string wrapped into a list");
                return {value->get<std::string>()};
            }
            errors.push_back(path + ": expected an array of strings");
            return out;
        }
        for (const auto& element : *value) {
            if (!element.is_string()) {
                report(path, "non-string list element dropped");
                continue;
            }
            out.push_back(element.get<std::string>());
        }
        return out;
    }

    std::string percent(object_view& v, const std::string& item_path, std::string_view key,
                        const std::string& fallback) {
        const auto path = item_path + "/" + std::string(text::trim(key));
        const auto* value = find(v, key, {"Matching rate"});
        if (!value) {
            errors.push_back(path + ": missing");
            return fallback;
        }
        if (value->is_string()) {
            const auto s = std::string(text::trim(value->get<std::string>()));
            if (is_percent_text(s)) return s;
            report(path, "expected percent text such as \"41.67%\"");
            return fallback;
        }
        if (value->is_number() && !strict_) {
            warnings.push_back(path + ": numeric rate rendered as percent text");
            return fallback;
        }
        errors.push_back(path + ": expected percent text");
        return fallback;
    }

    void report(const std::string& path, const std::string& what) {
        if (strict_) errors.push_back(path + ": " + what);
        else warnings.push_back(path + ": " + what);
    }

    bool strict() const { return strict_; }

private:
    static bool is_percent_text(std::string_view s) {
        if (s.size() < 2 || s.back() != '%') return false;
        s.remove_suffix(1);
        char* end = nullptr;
        const std::string body(s);
        const double x = std::strtod(body.c_str(), &end);
        return end == body.c_str() + body.size() && x >= 0 && x <= 100;
    }

    std::optional<double> as_number(const nlohmann::json& value, const std::string& path) {
        if (value.is_number()) return value.get<double>();
        if (value.is_null()) {
            report(path, "null treated as 0");
            return strict_ ? std::nullopt : std::optional<double>(0.0);
        }
        if (value.is_string() && !strict_) {
            const auto s = std::string(text::trim(value.get<std::string>()));
            char* end = nullptr;
            const double x = std::strtod(s.c_str(), &end);
            if (!s.empty() && end == s.c_str() + s.size() && std::isfinite(x)) {
                warnings.push_back(path + ": numeric string coerced");
                return x;
            }
        }
        errors.push_back(path + ": expected a number");
        return std::nullopt;
    }

    double clamp(double x, double max, const std::string& path) {
        if (x >= 0 && x <= max) return x;
        const double clamped = std::max(0.0, std::min(x, max));
        report(path, "value " + std::to_string(x) + " outside [0, " + std::to_string(max) + "]" +
                         (strict_ ? "" : ", clamped"));
        return clamped;
    }

    bool strict_;
};

inline bool near(double a, double b) { return std::fabs(a - b) <= 1e-9; }

} // namespace detail

// Checks a judge document against the rubric schema. Strict mode turns every
// violation into a SchemaError; lenient mode clamps scores into range and
// repairs totals, recording a warning for each repair. Missing keys and
// non-numeric values are errors in both modes. An item given as null or {} is
// scored 0.
inline ValidatedVerdict validate_verdict_json(const nlohmann::json& doc, bool strict) {
    detail::verdict_reader r(strict);
    ValidatedVerdict out;
    JudgeVerdict& v = out.verdict;
    if (!doc.is_object()) throw schema_error({"/: verdict must be a JSON object"});
    auto root = r.view(doc, "");

    // Returns the item view, or nullopt when the item is absent or null/empty.
    auto open_item = [&](std::string_view key, std::initializer_list<std::string_view> aliases)
        -> std::optional<detail::verdict_reader::object_view> {
        const auto path = std::string(text::trim(key));
        const auto* value = r.find(root, key, aliases);
        if (!value) {
            r.errors.push_back(path + ": missing");
            return std::nullopt;
        }
        if (value->is_null() || (value->is_object() && value->empty())) {
            r.warnings.push_back(path + ": empty item scored 0");
            return std::nullopt;
        }
        if (!value->is_object()) {
            r.errors.push_back(path + ": expected an object");
            return std::nullopt;
        }
        return r.view(*value, path);
    };

    auto check_sum = [&](const std::string& path, double score, double sub_sum) {
        if (!detail::near(score, sub_sum)) {
            out.warnings.push_back(path + "/score: sub-scores sum to " + std::to_string(sub_sum) +
                                   ", item score " + std::to_string(score) + " kept");
        }
    };

    {
        const std::string path(keys::completeness);
        if (auto item = open_item(keys::completeness, {"Response Completeness"})) {
            v.completeness.score = r.number(*item, path, keys::score, kCompletenessMax);
            v.completeness.answered = r.count(*item, path, keys::answered, kRequiredItems);
            v.completeness.required = r.count(*item, path, keys::required);
            if (v.completeness.required != kRequiredItems) {
                r.report(path + "/" + std::string(text::trim(keys::required)), "must be 5");
                v.completeness.required = kRequiredItems;
            }
            v.completeness.missing = r.strings(*item, path, keys::missing);
            r.reject_unknown(*item, path);
            check_sum(path, v.completeness.score, v.completeness.answered);
        }
    }
    {
        const std::string path(keys::etiology);
        if (auto item = open_item(keys::etiology, {"Etiology and Pathogenesis Analysis",
                                                   "Etiology and Pathogenesis"})) {
            v.etiology.score = r.number(*item, path, keys::score, kItemMax);
            v.etiology.etiology_recognition = r.number(*item, path, keys::recognition, 4);
            v.etiology.pathogenesis = r.number(*item, path, keys::pathogenesis, 4,
                                               {"Completeness of Pathogenesis Elaboration"});
            v.etiology.coherence = r.number(*item, path, keys::coherence, 2);
            r.reject_unknown(*item, path);
            check_sum(path, v.etiology.score,
                      v.etiology.etiology_recognition + v.etiology.pathogenesis + v.etiology.coherence);
        }
    }
    {
        const std::string path(keys::syndrome);
        if (auto item = open_item(keys::syndrome, {})) {
            v.syndrome.score = r.number(*item, path, keys::score, kItemMax);
            v.syndrome.accuracy = r.number(*item, path, keys::syndrome_accuracy, 6);
            v.syndrome.location_nature = r.number(*item, path, keys::location_nature, 4);
            r.reject_unknown(*item, path);
            check_sum(path, v.syndrome.score, v.syndrome.accuracy + v.syndrome.location_nature);
        }
    }
    {
        const std::string path(keys::principle);
        if (auto item = open_item(keys::principle, {"Treatment Principles"})) {
            v.principle.score = r.number(*item, path, keys::score, kItemMax);
            v.principle.accuracy = r.number(*item, path, keys::principle_accuracy, 5);
            v.principle.specificity = r.number(*item, path, keys::specificity, 3);
            v.principle.specialized = r.number(*item, path, keys::specialized, 2,
                                               {"Application of Characteristic Methods"});
            r.reject_unknown(*item, path);
            check_sum(path, v.principle.score,
                      v.principle.accuracy + v.principle.specificity + v.principle.specialized);
        }
    }
    {
        const std::string path(keys::prescription);
        if (auto item = open_item(keys::prescription, {"Prescription"})) {
            auto& p = v.prescription;
            p.score = r.number(*item, path, keys::score, kItemMax);
            p.match_score = r.number(*item, path, keys::match_score, 9);
            p.n_matched = r.count(*item, path, keys::n_matched);
            p.n_label = r.count(*item, path, keys::n_label);
            p.n_generated = r.count(*item, path, keys::n_generated);
            p.overlapped = r.strings(*item, path, keys::overlapped);
            p.rate = r.percent(*item, path, keys::rate,
                               format_rate_percent(static_cast<std::size_t>(p.n_matched),
                                                   static_cast<std::size_t>(p.n_label)));
            r.reject_unknown(*item, path);
            if (p.n_matched > std::min(p.n_label, p.n_generated)) {
                out.warnings.push_back(path + ": matched herbs exceed a prescription size");
            }
            const double logic = p.score - p.match_score;
            if (logic < -1e-9 || logic > 1 + 1e-9) {
                out.warnings.push_back(path + "/score: differs from match score by " +
                                       std::to_string(logic) + ", item score kept");
            }
        }
    }
    {
        const std::string path(keys::theory);
        if (auto item = open_item(keys::theory, {"Distinguished Theory Application",
                                                 "Application of Specialized TCM knowledge System"})) {
            v.theory.score = r.number(*item, path, keys::score, kItemMax);
            v.theory.accuracy = r.number(*item, path, keys::theory_accuracy, 5);
            v.theory.pervasiveness = r.number(*item, path, keys::pervasiveness, 3);
            v.theory.completeness = r.number(*item, path, keys::elaboration, 2);
            r.reject_unknown(*item, path);
            check_sum(path, v.theory.score,
                      v.theory.accuracy + v.theory.pervasiveness + v.theory.completeness);
        }
    }

    const auto* total = r.find(root, keys::total);
    const auto* maximum = r.find(root, keys::maximum);
    if (!total) r.errors.push_back(std::string(keys::total) + ": missing");
    else if (!total->is_number()) r.report(std::string(keys::total), "expected a number");
    if (!maximum) r.errors.push_back(std::string(keys::maximum) + ": missing");
    else if (!maximum->is_number() || maximum->get<double>() != kMaximumScore) {
        r.report(std::string(keys::maximum), "must be 55");
    }
    r.reject_unknown(root, "");

    v.total = v.item_sum();
    v.max_score = kMaximumScore;
    if (total && total->is_number() && !detail::near(total->get<double>(), v.total)) {
        r.report(std::string(keys::total), "reported " + std::to_string(total->get<double>()) +
                                               ", item scores sum to " + std::to_string(v.total) +
                                               (strict ? "" : "; recomputed"));
    }

    if (!r.errors.empty()) throw schema_error(r.errors);
    out.warnings.insert(out.warnings.begin(), r.warnings.begin(), r.warnings.end());
    return out;
}

inline ValidatedVerdict validate_verdict(std::string_view document, bool strict) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(document);
    } catch (const nlohmann::json::parse_error& e) {
        throw parse_error(std::string("malformed verdict JSON: ") + e.what());
    }
    return validate_verdict_json(doc, strict);
}

// Canonical JSON using the schema's key spelling, in schema order.
inline nlohmann::ordered_json to_json(const JudgeVerdict& v) {
    using oj = nlohmann::ordered_json;
    auto k = [](std::string_view s) { return std::string(s); };
    oj out;
    out[k(keys::completeness)] = oj{{k(keys::score), v.completeness.score},
                                    {k(keys::answered), v.completeness.answered},
                                    {k(keys::required), v.completeness.required},
                                    {k(keys::missing), v.completeness.missing}};
    out[k(keys::etiology)] = oj{{k(keys::score), v.etiology.score},
                                {k(keys::recognition), v.etiology.etiology_recognition},
                                {k(keys::pathogenesis), v.etiology.pathogenesis},
                                {k(keys::coherence), v.etiology.coherence}};
    out[k(keys::syndrome)] = oj{{k(keys::score), v.syndrome.score},
                                {k(keys::syndrome_accuracy), v.syndrome.accuracy},
                                {k(keys::location_nature), v.syndrome.location_nature}};
    out[k(keys::principle)] = oj{{k(keys::score), v.principle.score},
                                 {k(keys::principle_accuracy), v.principle.accuracy},
                                 {k(keys::specificity), v.principle.specificity},
                                 {k(keys::specialized), v.principle.specialized}};
    out[k(keys::prescription)] = oj{{k(keys::score), v.prescription.score},
                                    {k(keys::match_score), v.prescription.match_score},
                                    {k(keys::n_matched), v.prescription.n_matched},
                                    {k(keys::n_label), v.prescription.n_label},
                                    {k(keys::n_generated), v.prescription.n_generated},
                                    {k(keys::overlapped), v.prescription.overlapped},
                                    {k(keys::rate), v.prescription.rate}};
    out[k(keys::theory)] = oj{{k(keys::score), v.theory.score},
                              {k(keys::theory_accuracy), v.theory.accuracy},
                              {k(keys::pervasiveness), v.theory.pervasiveness},
                              {k(keys::elaboration), v.theory.completeness}};
    out[k(keys::total)] = v.total;
    out[k(keys::maximum)] = v.max_score;
    return out;
}

inline JudgeVerdict verdict_from_json(const nlohmann::json& j) {
    return validate_verdict_json(j, false).verdict;
}

// ---------------------------------------------------------------------------
// Normalized score card

inline constexpr std::array<std::string_view, 6> kScoreItems = {
    "completeness", "etiology", "syndrome", "principle", "prescription", "theory"};

inline double item_max(std::string_view item) {
    return item == "completeness" ? kCompletenessMax : kItemMax;
}

inline double item_score(const JudgeVerdict& v, std::string_view item) {
    if (item == "completeness") return v.completeness.score;
    if (item == "etiology") return v.etiology.score;
    if (item == "syndrome") return v.syndrome.score;
    if (item == "principle") return v.principle.score;
    if (item == "prescription") return v.prescription.score;
    if (item == "theory") return v.theory.score;
    if (item == "total") return v.total;
    throw precondition_violation("unknown score item '" + std::string(item) + "'");
}

struct ScoreCard {
    std::map<std::string, double> raw;         // six items plus "total"
    std::map<std::string, double> normalized;  // item score / item max
    double normalized_mean = 0;
    bool includes_completeness = true;
};

// Each scored entry divided by its maximum; the mean runs over the six schema
// entries (five without completeness when excluded).
inline ScoreCard scorecard(const JudgeVerdict& v, bool include_completeness = true) {
    ScoreCard card;
    card.includes_completeness = include_completeness;
    double sum = 0;
    int n = 0;
    for (auto item : kScoreItems) {
        const auto key = std::string(item);
        const double raw = item_score(v, item);
        card.raw[key] = raw;
        card.normalized[key] = raw / item_max(item);
        if (item == "completeness" && !include_completeness) continue;
        sum += card.normalized[key];
        ++n;
    }
    card.raw["total"] = v.total;
    card.normalized_mean = sum / n;
    return card;
}

// Inverse of normalization. Division by 5 or 10 can send two neighbouring
// doubles to the same quotient (1.7 and the next double up both give 0.17),
// so among the few preimages near n * max the one with the shortest decimal
// form wins. Scores written with up to 15 significant digits come back exactly.
inline double denormalize(double normalized, double max) {
    const double candidate = normalized * max;
    auto digits = [](double x) {
        char buf[32];
        const auto r = std::to_chars(buf, buf + sizeof buf, x);
        return static_cast<std::size_t>(r.ptr - buf);
    };
    double best = candidate;
    std::size_t best_digits = SIZE_MAX;
    bool found = false;
    auto consider = [&](double x) {
        if (x / max != normalized) return;
        const auto d = digits(x);
        if (!found || d < best_digits) {
            best = x;
            best_digits = d;
            found = true;
        }
    };
    consider(candidate);
    double up = candidate;
    double down = candidate;
    for (int i = 0; i < 8; ++i) {
        up = std::nextafter(up, std::numeric_limits<double>::infinity());
        down = std::nextafter(down, -std::numeric_limits<double>::infinity());
        consider(up);
        consider(down);
    }
    return best;
}

inline std::map<std::string, double> denormalize(const ScoreCard& card) {
    std::map<std::string, double> out;
    for (const auto& [item, value] : card.normalized) out[item] = denormalize(value, item_max(item));
    return out;
}

// ---------------------------------------------------------------------------
// Audit of judge-reported counts against local parsing and matching

struct Discrepancy {
    std::string field;
    double judge_value = 0;
    double local_value = 0;
};

struct AuditReport {
    std::vector<Discrepancy> discrepancies;
    std::vector<std::string> notes;
};

inline AuditReport recompute_local_fields(const JudgeVerdict& verdict, const StructuredResponse& parsed,
                                          const CaseRecord& label, const Lexicon& lexicon) {
    AuditReport report;
    report.notes.push_back(
        "normalized mean covers the six schema entries; the rubric text mentions seven scores");

    auto compare = [&](std::string field, double judge, double local) {
        if (!detail::near(judge, local)) report.discrepancies.push_back({std::move(field), judge, local});
    };

    compare(std::string(keys::completeness) + "/" + std::string(text::trim(keys::answered)),
            verdict.completeness.answered, count_answered_items(parsed));

    const auto gold = extract_prescription(label.label.section(SectionKind::TcmPrescription), lexicon);
    if (gold.prescription.empty()) {
        report.notes.push_back("case " + label.id + " has no gold prescription; herb counts not audited");
        return report;
    }
    const auto generated = extract_prescription(parsed.section(SectionKind::TcmPrescription), lexicon);
    const auto match = match_prescriptions(generated.prescription, gold.prescription, lexicon);
    const std::string path(keys::prescription);
    compare(path + "/" + std::string(keys::n_matched), verdict.prescription.n_matched,
            static_cast<double>(match.n_matched));
    compare(path + "/" + std::string(keys::n_label), verdict.prescription.n_label,
            static_cast<double>(match.n_label));
    compare(path + "/" + std::string(keys::n_generated), verdict.prescription.n_generated,
            static_cast<double>(match.n_generated));
    return report;
}

} // namespace tcmeval
