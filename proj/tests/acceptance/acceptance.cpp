// Acceptance run: one PASS/FAIL line per top-level criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <string>

#include "mock_judge.hpp"
#include "oracles.hpp"
#include "tcmeval/tcmeval.hpp"

using namespace tcmeval;

namespace {

int failures = 0;

// The body returns an empty string on success, otherwise what went wrong.
void criterion(const std::string& name, const std::function<std::string()>& body) {
    std::string why;
    try {
        why = body();
    } catch (const std::exception& e) {
        why = std::string("exception: ") + e.what();
    }
    if (why.empty()) {
        std::cout << "PASS " << name << "\n";
    } else {
        ++failures;
        std::cout << "FAIL " << name << " (" << why << ")\n";
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string herb_match_example() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto lex = Lexicon::load(oracle::fixture_path("lexicon.tsv"));
    const auto fx = oracle::load_fixture("appendix_b_prescription.json");
    for (auto [l, m] : {std::pair{"label", "model"}, std::pair{"label_zh", "model_zh"}}) {
        const auto label = extract_prescription(fx[l].get<std::string>(), lex).prescription;
        const auto gen = extract_prescription(fx[m].get<std::string>(), lex).prescription;
        const auto r = match_prescriptions(gen, label, lex);
        if (r.n_matched != 5) return std::string(l) + ": n_matched " + std::to_string(r.n_matched);
        if (herb_match_component(r.n_matched, r.n_label) != 3.75) return "match score is not 3.75";
        if (herb_match_score(r, 1) != 4.75) return "total is not 4.75";
    }
    const double secs = seconds_since(t0);
    if (secs >= 1.0) return "took " + std::to_string(secs) + " s";
    return "";
}

std::string completeness_table() {
    for (int answered = 0; answered <= 5; ++answered) {
        if (completeness_score(answered) != static_cast<double>(answered)) {
            return "answered " + std::to_string(answered);
        }
    }
    return "";
}

std::string schema_conformance() {
    const auto fixtures = oracle::load_fixture("verdicts.json");
    if (fixtures.size() != 20) return "expected 20 fixtures";
    for (const auto& fx : fixtures) {
        const auto name = fx["name"].get<std::string>();
        const auto& doc = fx["doc"];
        bool strict_ok = true;
        try {
            validate_verdict_json(doc, true);
        } catch (const schema_error&) {
            strict_ok = false;
        }
        if (strict_ok != (fx["strict"] == "valid")) return name + ": strict classification";

        if (fx["lenient"] != "valid") {
            try {
                validate_verdict_json(doc, false);
                return name + ": lenient accepted";
            } catch (const schema_error&) {
                continue;
            }
        }
        const auto v = validate_verdict_json(doc, false);
        const auto got = oracle::numeric_fields(nlohmann::json::parse(to_json(v.verdict).dump()));
        for (const auto& [key, value] : oracle::clamped_fields(doc)) {
            if (!got.count(key) || got.at(key) != value) return name + ": " + key.first + "/" + key.second;
        }
    }
    return "";
}

std::string delta_table_check() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 10);
    ScoreTable t;
    t.axes = {Axis::Model};
    t.items = {"i1", "i2", "i3", "i4", "i5"};
    const std::vector<std::string> models = {"bench", "m1", "m2", "m3", "m4"};
    for (const auto& m : models) {
        auto& cell = t.cells[{m}];
        cell.n_cases = 1;
        for (const auto& i : t.items) cell.mean[i] = u(rng);
    }
    const auto d = delta_table(t, "bench");
    for (const auto& m : models) {
        for (const auto& i : t.items) {
            const auto got = d.value({}, i, m);
            if (!got) return "missing " + m + "/" + i;
            const double expected = t.cells.at({m}).mean.at(i) - t.cells.at({"bench"}).mean.at(i);
            if (std::fabs(*got - expected) > 1e-12) return m + "/" + i;
            if (m == "bench" && *got != 0.0) return "benchmark column not zero";
        }
    }
    if (format_delta(-0.59125) != "(0.59125)") return "rendered " + format_delta(-0.59125);
    return "";
}

std::string trial_metric() {
    const Lexicon plain;
    std::mt19937_64 rng(11);
    std::vector<std::string> pool;
    for (int i = 0; i < 40; ++i) pool.push_back("herb" + std::to_string(i));
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::string> g, l;
        for (const auto& h : pool) {
            if (rng() % 3 == 0) g.push_back(h);
            if (rng() % 4 == 0) l.push_back(h);
        }
        if (l.empty()) l.push_back(pool[rng() % pool.size()]);
        const auto gp = make_prescription(g, plain);
        const auto lp = make_prescription(l, plain);
        const double got = trial_overlap_score(gp, lp, plain);
        const double rate = *match_prescriptions(gp, lp, plain).rate;
        if (got != 100.0 * rate) return "trial " + std::to_string(trial) + " vs rate";
        if (std::fabs(got - 100.0 * oracle::overlap_fraction(g, l)) > 1e-12) return "trial " + std::to_string(trial);
    }
    const auto lex = Lexicon::load(oracle::fixture_path("lexicon.tsv"));
    const auto fx = oracle::load_fixture("appendix_b_prescription.json");
    const auto c = mock::make_case("c1", "dr", fx["label_zh"].get<std::string>());
    const auto report = trial_report({c}, {mock::make_response("c1", "m", fx["model_zh"].get<std::string>())}, lex);
    if (report.models.size() != 1) return "trial report rows";
    const double mean = report.models[0].stats.mean;
    if (std::fabs(mean - 5.0 / 12.0 * 100.0) > 1e-9 || std::fabs(mean - 41.67) > 0.01) {
        return "fixture gives " + std::to_string(mean);
    }
    return "";
}

std::string dataset_invariants() {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 500; ++trial) {
        const auto src = oracle::random_text(rng);
        const auto r = chunk_text(src, {512, 0});
        std::string joined;
        for (const auto& ch : r.chunks) {
            if (ch.token_count > 512) return "chunk over 512 tokens";
            joined += ch.text;
        }
        if (joined != src) return "text " + std::to_string(trial) + " not reconstructed";
    }
    for (int i = 0; i <= 100000; ++i) {
        const double s = i / 100000.0;
        const long long micro = std::llround(s * 1e6);
        const auto expected = micro > 900000 ? KtoLabel::True : (micro < 600000 ? KtoLabel::False : KtoLabel::Discard);
        if (kto_label(s) != expected) return "kto label at " + std::to_string(s);
    }
    if (kto_label(0.90) != KtoLabel::Discard || kto_label(0.60) != KtoLabel::Discard) return "kto boundaries";
    const std::vector<ScoredResponse> rs = {{"a", "", 8.5}, {"b", "", 8.500001}, {"c", "", 8.4}, {"d", "", 9.0}};
    const auto kept = rejection_filter(rs);
    if (kept.size() != 2 || kept[0].sample_id != "b" || kept[1].sample_id != "d") return "rejection filter";
    return "";
}

std::string end_to_end() {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<CaseRecord> cases = {mock::make_case("case-1", "dr-li"), mock::make_case("case-2", "dr-wang")};
    const std::vector<std::string> models = {"model-a", "model-b", "model-c"};
    std::vector<ModelResponse> responses;
    for (const auto& c : cases) {
        for (const auto& m : models) responses.push_back(mock::make_response(c.id, m));
    }
    const std::vector<JudgeConfig> judges = {mock::judge("judge-a"), mock::judge("judge-b")};

    // interrupted after a few triples, then resumed
    mock::ScoringTransport transport(std::chrono::milliseconds(2));
    VerdictStore store;
    EvaluationOptions first;
    first.max_triples = 7;
    const auto s1 = run_evaluation(cases, responses, judges, transport, store, first);
    if (!s1.interrupted) return "first run was not interrupted";
    const auto s2 = run_evaluation(cases, responses, judges, transport, store);
    if (store.size() != 12) return std::to_string(store.size()) + " verdicts";
    if (s2.failures != 0 || s1.failures != 0) return "judge failures";
    if (transport.total_requests() != 12) return std::to_string(transport.total_requests()) + " requests";
    for (const auto& [key, n] : transport.requests()) {
        if (n != 1) return key + " requested " + std::to_string(n) + " times";
    }

    const auto table = score_table(store, {Axis::Model, Axis::Judge});
    for (const auto& m : models) {
        for (const auto& j : judges) {
            std::map<std::string, double> sum;
            for (const auto& c : cases) {
                const auto v = mock::verdict_for(c.id + "|" + m + "|" + j.name);
                for (auto item : kScoreItems) sum[std::string(item)] += item_score(v, item);
                sum["total"] += v.total;
            }
            const auto& cell = table.cells.at({m, j.name});
            for (const auto& [item, s] : sum) {
                if (std::fabs(cell.mean.at(item) - s / 2) > 1e-12) return m + "/" + j.name + "/" + item;
            }
        }
    }
    const double secs = seconds_since(t0);
    if (secs >= 30.0) return "took " + std::to_string(secs) + " s";
    return "";
}

std::string human_eval_math() {
    Rating r;
    r.scores = {1, 1, 1, 1, 1};
    if (weighted_total(r) != 10.0) return "all ones";
    r.scores = {10, 10, 10, 10, 10};
    if (weighted_total(r) != 100.0) return "all tens";
    r.scores = {6, 8, 10, 7, 9};
    if (weighted_total(r) != 72.0 || oracle::weighted_total(r.scores) != 72.0) return "example is not 72";

    const std::vector<std::string> models = {"ours", "base", "other"};
    const std::vector<std::string> cases = {"c1", "c2", "c3"};
    std::mt19937_64 rng(19);
    std::vector<RatingSession> sessions;
    for (int rater = 0; rater < 3; ++rater) {
        auto s = create_session("s" + std::to_string(rater), {"h" + std::to_string(rater), "t", "g"}, "dr", cases,
                                models, 77 + rater);
        while (auto item = next_item(s)) {
            RatingInput in{item->case_id, item->label, {}, false};
            for (auto& x : in.scores) x = 1 + static_cast<int>(rng() % 10);
            submit_rating(s, in);
        }
        sessions.push_back(s);
    }
    const auto report = unblind_report(sessions);
    for (const auto& m : models) {
        std::array<std::vector<double>, 5> dims;
        std::vector<double> totals;
        for (const auto& s : sessions) {
            const auto label = s.blinding.at(m);
            for (const auto& rating : s.ratings) {
                if (rating.label != label) continue;
                for (std::size_t d = 0; d < 5; ++d) dims[d].push_back(rating.scores[d]);
                totals.push_back(oracle::weighted_total(rating.scores));
            }
        }
        auto close = [&](const std::string& dim, const std::vector<double>& xs) {
            const auto* row = report.find("dr", m, dim);
            if (!row) return false;
            const auto o = oracle::mean_std(xs);
            return std::fabs(row->stats.mean - o.mean) <= 1e-9 && std::fabs(row->stats.std - o.std) <= 1e-9;
        };
        for (std::size_t d = 0; d < 5; ++d) {
            if (!close(std::string(to_string(kDimensions[d])), dims[d])) return m + " " + std::string(to_string(kDimensions[d]));
        }
        if (!close("weighted_total", totals)) return m + " weighted_total";
    }
    return "";
}

// Report rendering against the published number formats; the scores
// themselves need the real models and raters.
std::string report_rendering() {
    if (failures > 0) return "a property criterion above failed";
    if (format_stats({7.33, 0.98, 15}) != "7.33 \xC2\xB1 0.98") return format_stats({7.33, 0.98, 15});
    if (format_stats({44.5, 10.22, 10}) != "44.50 \xC2\xB1 10.22") return format_stats({44.5, 10.22, 10});
    // two values a half-gap h apart have sample std h * sqrt(2)
    const double h = 10.22 / std::sqrt(2.0);
    const auto s = aggregate_stats(std::vector<double>{44.5 - h, 44.5 + h});
    if (format_stats(s) != "44.50 \xC2\xB1 10.22") return "aggregated " + format_stats(s);
    if (format_delta(-0.59125) != "(0.59125)" || format_delta(1.5) != "1.5") return "delta rendering";
    return "";
}

} // namespace

int main() {
    criterion("herb-match worked example: 5 matched, 3.75, 4.75, under 1 s", herb_match_example);
    criterion("completeness table 0..5", completeness_table);
    criterion("verdict schema: 20 fixtures strict and lenient", schema_conformance);
    criterion("delta table 5x5 vs subtraction, benchmark zeros, (0.59125)", delta_table_check);
    criterion("trial metric: 1000 pairs equal 100 x rate, fixture 41.67", trial_metric);
    criterion("dataset: 500 chunked texts, kto partition, rejection at 8.5", dataset_invariants);
    criterion("end-to-end mocked judges: 12 verdicts, resume without duplicates, means", end_to_end);
    criterion("human-eval: weighted totals 10/100/72, unblinded report vs brute force", human_eval_math);
    criterion("published figures not reproducible here: property suites plus report rendering", report_rendering);
    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << "\n";
    return failures == 0 ? 0 : 1;
}
