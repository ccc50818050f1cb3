#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcmeval/case_record.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/herb_lexicon.hpp"
#include "tcmeval/judge_gateway.hpp"
#include "tcmeval/response_parser.hpp"
#include "tcmeval/rubric.hpp"

namespace tcmeval {

// ---------------------------------------------------------------------------
// Summary statistics

struct Stats {
    double mean = 0;
    double std = 0;  // sample standard deviation, 0 when n == 1
    std::size_t n = 0;
};

inline Stats aggregate_stats(std::span<const double> values) {
    if (values.empty()) throw empty_input("cannot aggregate an empty list");
    Stats s;
    s.n = values.size();
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

inline Stats aggregate_stats(const std::vector<double>& values) {
    return aggregate_stats(std::span<const double>(values));
}

inline std::string format_fixed(double x, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, x);
    std::string s = buf;
    // "-0.00" is still zero
    if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

// "7.33 ± 0.98"
inline std::string format_stats(const Stats& s) {
    return format_fixed(s.mean, 2) + " \xC2\xB1 " + format_fixed(s.std, 2);
}

// Difference rendering: up to five decimals with trailing zeros dropped,
// negatives in parentheses without a minus sign.
inline std::string format_delta(double delta) {
    std::string s = format_fixed(std::fabs(delta), 5);
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
    if (s == "0") return s;
    return delta < 0 ? "(" + s + ")" : s;
}

inline std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::string format_number(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

// ---------------------------------------------------------------------------
// Score tables

enum class Axis { Doctor, Model, Judge };

inline std::string to_string(Axis a) {
    switch (a) {
    case Axis::Doctor: return "doctor";
    case Axis::Model: return "model";
    case Axis::Judge: return "judge";
    }
    return "?";
}

inline Axis axis_from_string(std::string_view s) {
    if (s == "doctor") return Axis::Doctor;
    if (s == "model") return Axis::Model;
    if (s == "judge") return Axis::Judge;
    throw precondition_violation("unknown axis '" + std::string(s) + "'");
}

inline std::vector<std::string> score_table_items() {
    std::vector<std::string> items(kScoreItems.begin(), kScoreItems.end());
    items.push_back("total");
    return items;
}

struct ScoreCell {
    std::map<std::string, double> mean;  // item -> mean over completed verdicts
    std::size_t n_cases = 0;
    std::size_t n_failed = 0;
    bool empty() const { return n_cases == 0; }
};

struct ScoreTable {
    std::vector<Axis> axes;
    std::vector<std::string> items;
    std::map<std::vector<std::string>, ScoreCell> cells;
    std::vector<std::string> warnings;
    std::size_t excluded_failures = 0;

    std::size_t axis_index(Axis a) const {
        for (std::size_t i = 0; i < axes.size(); ++i) {
            if (axes[i] == a) return i;
        }
        throw precondition_violation("table is not grouped by " + to_string(a));
    }
};

namespace detail {

inline const std::string& axis_value(const VerdictRecord& r, Axis a) {
    switch (a) {
    case Axis::Doctor: return r.doctor;
    case Axis::Model: return r.model;
    case Axis::Judge: return r.judge;
    }
    return r.model;
}

} // namespace detail

// Per-cell arithmetic means of the six item scores and the total. Failed
// triples do not enter the means; they are counted per cell, and a cell with
// only failures is kept but flagged empty.
inline ScoreTable score_table(const std::vector<VerdictRecord>& records, std::vector<Axis> group_by) {
    if (group_by.empty()) throw precondition_violation("group_by needs at least one axis");
    std::set<Axis> distinct(group_by.begin(), group_by.end());
    if (distinct.size() != group_by.size()) throw precondition_violation("group_by repeats an axis");
    ScoreTable table;
    table.axes = std::move(group_by);
    table.items = score_table_items();
    std::map<std::vector<std::string>, std::map<std::string, double>> sums;
    for (const auto& r : records) {
        std::vector<std::string> key;
        for (auto a : table.axes) key.push_back(detail::axis_value(r, a));
        auto& cell = table.cells[key];
        if (!r.ok) {
            ++cell.n_failed;
            ++table.excluded_failures;
            continue;
        }
        ++cell.n_cases;
        auto& sum = sums[key];
        for (const auto& item : table.items) sum[item] += item_score(r.verdict, item);
    }
    for (auto& [key, cell] : table.cells) {
        if (cell.empty()) {
            std::string name;
            for (const auto& k : key) name += (name.empty() ? "" : "/") + k;
            table.warnings.push_back("EmptyCell: " + name + " has no completed verdicts");
            continue;
        }
        for (const auto& item : table.items) {
            cell.mean[item] = sums[key][item] / static_cast<double>(cell.n_cases);
        }
    }
    return table;
}

inline ScoreTable score_table(const VerdictStore& store, std::vector<Axis> group_by) {
    return score_table(store.snapshot(), std::move(group_by));
}

inline std::string to_csv(const ScoreTable& t) {
    std::string out;
    for (auto a : t.axes) out += to_string(a) + ",";
    for (const auto& item : t.items) out += csv_field(item) + ",";
    out += "n_cases,n_failed\n";
    for (const auto& [key, cell] : t.cells) {
        for (const auto& k : key) out += csv_field(k) + ",";
        for (const auto& item : t.items) {
            const auto it = cell.mean.find(item);
            out += (it == cell.mean.end() ? std::string() : format_number(it->second)) + ",";
        }
        out += std::to_string(cell.n_cases) + "," + std::to_string(cell.n_failed) + "\n";
    }
    return out;
}

inline nlohmann::ordered_json to_json(const ScoreTable& t) {
    nlohmann::ordered_json j;
    auto axes = nlohmann::ordered_json::array();
    for (auto a : t.axes) axes.push_back(to_string(a));
    j["axes"] = axes;
    j["items"] = t.items;
    auto cells = nlohmann::ordered_json::array();
    for (const auto& [key, cell] : t.cells) {
        nlohmann::ordered_json c;
        for (std::size_t i = 0; i < t.axes.size(); ++i) c[to_string(t.axes[i])] = key[i];
        nlohmann::ordered_json means = nlohmann::ordered_json::object();
        for (const auto& item : t.items) {
            if (auto it = cell.mean.find(item); it != cell.mean.end()) means[item] = it->second;
        }
        c["mean"] = means;
        c["n_cases"] = cell.n_cases;
        c["n_failed"] = cell.n_failed;
        c["empty"] = cell.empty();
        cells.push_back(c);
    }
    j["cells"] = cells;
    j["excluded_failures"] = t.excluded_failures;
    j["warnings"] = t.warnings;
    j["notes"] = {"means are arithmetic over completed verdicts; failed triples are excluded and counted"};
    return j;
}

// ---------------------------------------------------------------------------
// Delta tables

struct DeltaEntry {
    std::vector<std::string> group;  // values of the non-model axes
    std::string item;
    std::string model;
    double delta = 0;
};

struct DeltaTable {
    std::string benchmark;
    std::vector<Axis> group_axes;
    std::vector<DeltaEntry> entries;
    std::vector<std::string> warnings;

    std::optional<double> value(const std::vector<std::string>& group, const std::string& item,
                                const std::string& model) const {
        for (const auto& e : entries) {
            if (e.group == group && e.item == item && e.model == model) return e.delta;
        }
        return std::nullopt;
    }
};

// Δ[item][model] = mean(model) − mean(benchmark) within each combination of
// the remaining axes (e.g. per doctor and judge).
inline DeltaTable delta_table(const ScoreTable& table, const std::string& benchmark) {
    const auto model_axis = table.axis_index(Axis::Model);
    DeltaTable out;
    out.benchmark = benchmark;
    for (std::size_t i = 0; i < table.axes.size(); ++i) {
        if (i != model_axis) out.group_axes.push_back(table.axes[i]);
    }
    auto group_of = [&](const std::vector<std::string>& key) {
        std::vector<std::string> g;
        for (std::size_t i = 0; i < key.size(); ++i) {
            if (i != model_axis) g.push_back(key[i]);
        }
        return g;
    };

    bool benchmark_seen = false;
    std::map<std::vector<std::string>, const ScoreCell*> benchmark_cells;
    for (const auto& [key, cell] : table.cells) {
        if (key[model_axis] != benchmark) continue;
        benchmark_seen = true;
        if (!cell.empty()) benchmark_cells[group_of(key)] = &cell;
    }
    if (!benchmark_seen) throw unknown_benchmark("benchmark model '" + benchmark + "' is not in the table");

    for (const auto& [key, cell] : table.cells) {
        const auto group = group_of(key);
        const auto bench = benchmark_cells.find(group);
        if (bench == benchmark_cells.end() || cell.empty()) {
            out.warnings.push_back("no delta for " + key[model_axis] + ": empty cell or benchmark cell");
            continue;
        }
        for (const auto& item : table.items) {
            const auto m = cell.mean.find(item);
            const auto b = bench->second->mean.find(item);
            if (m == cell.mean.end() || b == bench->second->mean.end()) continue;
            out.entries.push_back({group, item, key[model_axis],
                                   key[model_axis] == benchmark ? 0.0 : m->second - b->second});
        }
    }
    return out;
}

inline std::string to_csv(const DeltaTable& t) {
    std::string out;
    for (auto a : t.group_axes) out += to_string(a) + ",";
    out += "item,model,delta,rendered\n";
    for (const auto& e : t.entries) {
        for (const auto& g : e.group) out += csv_field(g) + ",";
        out += csv_field(e.item) + "," + csv_field(e.model) + "," + format_number(e.delta) + "," +
               csv_field(format_delta(e.delta)) + "\n";
    }
    return out;
}

inline nlohmann::ordered_json to_json(const DeltaTable& t) {
    nlohmann::ordered_json j;
    j["benchmark"] = t.benchmark;
    auto axes = nlohmann::ordered_json::array();
    for (auto a : t.group_axes) axes.push_back(to_string(a));
    j["group_axes"] = axes;
    auto entries = nlohmann::ordered_json::array();
    for (const auto& e : t.entries) {
        entries.push_back({{"group", e.group},
                           {"item", e.item},
                           {"model", e.model},
                           {"delta", e.delta},
                           {"rendered", format_delta(e.delta)}});
    }
    j["entries"] = entries;
    j["warnings"] = t.warnings;
    j["notes"] = {"delta = model mean - benchmark mean; negatives shown in parentheses"};
    return j;
}

// ---------------------------------------------------------------------------
// Clinical-trial overlap

// Percentage of gold-prescription herbs present in the generated prescription.
inline double trial_overlap_score(const Prescription& generated, const Prescription& label,
                                  const Lexicon& lexicon) {
    const auto match = match_prescriptions(generated, label, lexicon);
    return 100.0 * *match.rate;
}

struct TrialResult {
    std::string model;
    std::vector<std::string> case_ids;
    std::vector<double> percents;
    Stats stats;
};

struct TrialReport {
    std::vector<TrialResult> models;
    std::vector<std::string> warnings;
};

// Overlap of every response's prescription with its case's gold prescription,
// summarized per model. Cases without a gold prescription are skipped.
inline TrialReport trial_report(const std::vector<CaseRecord>& cases,
                                const std::vector<ModelResponse>& responses, const Lexicon& lexicon) {
    std::map<std::string, const CaseRecord*> by_id;
    for (const auto& c : cases) by_id[c.id] = &c;
    std::map<std::string, Prescription> gold;
    TrialReport report;
    for (const auto& c : cases) {
        auto p = extract_prescription(c.label.section(SectionKind::TcmPrescription), lexicon).prescription;
        if (p.empty()) report.warnings.push_back("case " + c.id + " has no gold prescription; skipped");
        else gold.emplace(c.id, std::move(p));
    }
    std::map<std::string, TrialResult> per_model;
    for (const auto& r : responses) {
        const auto g = gold.find(r.case_id);
        if (g == gold.end()) continue;
        const auto parsed = parse_structured_response(r.text);
        const auto generated =
            extract_prescription(parsed.section(SectionKind::TcmPrescription), lexicon).prescription;
        auto& result = per_model[r.model];
        result.model = r.model;
        result.case_ids.push_back(r.case_id);
        result.percents.push_back(trial_overlap_score(generated, g->second, lexicon));
    }
    for (auto& [model, result] : per_model) {
        result.stats = aggregate_stats(result.percents);
        report.models.push_back(std::move(result));
    }
    return report;
}

inline std::string to_csv(const TrialReport& t) {
    std::string out = "model,mean,std,n,rendered\n";
    for (const auto& m : t.models) {
        out += csv_field(m.model) + "," + format_number(m.stats.mean) + "," + format_number(m.stats.std) +
               "," + std::to_string(m.stats.n) + "," + csv_field(format_stats(m.stats)) + "\n";
    }
    return out;
}

inline nlohmann::ordered_json to_json(const TrialReport& t) {
    nlohmann::ordered_json j;
    auto models = nlohmann::ordered_json::array();
    for (const auto& m : t.models) {
        nlohmann::ordered_json samples = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < m.percents.size(); ++i) {
            samples.push_back({{"case_id", m.case_ids[i]}, {"percent", m.percents[i]}});
        }
        models.push_back({{"model", m.model},
                          {"mean", m.stats.mean},
                          {"std", m.stats.std},
                          {"n", m.stats.n},
                          {"rendered", format_stats(m.stats)},
                          {"samples", samples}});
    }
    j["models"] = models;
    j["warnings"] = t.warnings;
    j["notes"] = {"score = percent of gold herbs present in the generated prescription",
                  "std is the sample standard deviation (n-1)"};
    return j;
}

} // namespace tcmeval
