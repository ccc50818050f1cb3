#include <gtest/gtest.h>

#include <httplib.h>

#include <numeric>
#include <random>

#include "mock_judge.hpp"
#include "oracles.hpp"
#include "tcmeval/tcmeval.hpp"

using namespace tcmeval;

namespace {

std::vector<CaseRecord> two_cases() { return {mock::make_case("case-1", "dr-li"), mock::make_case("case-2", "dr-wang")}; }

std::vector<ModelResponse> responses_for(const std::vector<CaseRecord>& cases, const std::vector<std::string>& models) {
    std::vector<ModelResponse> out;
    for (const auto& c : cases) {
        for (const auto& m : models) out.push_back(mock::make_response(c.id, m));
    }
    return out;
}

const std::vector<std::string> kModels = {"model-a", "model-b", "model-c"};

} // namespace

// ---------------------------------------------------------------------------
// judge gateway

TEST(JudgeGateway, ChatBodyPerSchemaMode) {
    auto j = mock::judge("judge-a");
    const auto prompt = build_judge_prompt("L", "R");
    auto body = build_chat_body(j, prompt);
    EXPECT_EQ(body["model"], "judge-a");
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["messages"][1]["content"], prompt.user);
    EXPECT_FALSE(body.contains("response_format"));
    j.schema_mode = SchemaMode::StructuredOutput;
    body = build_chat_body(j, prompt);
    EXPECT_EQ(body["response_format"]["type"], "json_schema");
}

TEST(JudgeGateway, ExtractsVerdictFromFencedContent) {
    const auto v = mock::verdict_for("x");
    const auto fenced = mock::chat_reply("Here you go:\n```json\n" + to_json(v).dump(2) + "\n```\nDone.");
    EXPECT_EQ(validate_verdict(extract_verdict_text(fenced), true).verdict, v);
    EXPECT_THROW(extract_verdict_text("not json"), parse_error);
    EXPECT_THROW(extract_verdict_text(mock::chat_reply("no braces here")), parse_error);
}

TEST(JudgeGateway, MalformedThenValidTakesTwoAttempts) {
    const auto v = mock::verdict_for("k");
    mock::SequenceTransport t({{200, mock::chat_reply("{broken"), "", {}}, {200, mock::verdict_reply(v), "", {}}});
    const auto out = request_verdict(mock::judge("j"), build_judge_prompt("L", "R"), t);
    EXPECT_EQ(out.attempts, 2);
    EXPECT_EQ(out.verdict, v);
    ASSERT_EQ(t.bodies.size(), 2u);
    // the retry carries the corrective instruction
    const auto second = nlohmann::json::parse(t.bodies[1])["messages"][1]["content"].get<std::string>();
    EXPECT_NE(second.find(std::string(text::trim(kCorrectiveSuffix))), std::string::npos);
}

TEST(JudgeGateway, AlwaysInvalidIsRejectedAfterThreeAttempts) {
    mock::SequenceTransport t({{200, mock::chat_reply("{\"Total Score\": 1}"), "", {}}});
    auto j = mock::judge("j");
    j.max_retries = 2;
    try {
        request_verdict(j, build_judge_prompt("L", "R"), t);
        FAIL() << "expected VerdictRejected";
    } catch (const verdict_rejected& e) {
        EXPECT_EQ(e.transcripts().size(), 3u);
        EXPECT_STREQ(e.kind(), "VerdictRejected");
    }
    EXPECT_EQ(t.calls(), 3u);
}

TEST(JudgeGateway, TransportFailuresAreUnavailable) {
    mock::SequenceTransport t({{0, "", "connection refused", {}}, {503, "busy", "", {}}});
    try {
        request_verdict(mock::judge("j"), build_judge_prompt("L", "R"), t);
        FAIL() << "expected JudgeUnavailable";
    } catch (const judge_unavailable& e) {
        EXPECT_EQ(e.transcripts().size(), 3u);
        EXPECT_NE(e.transcripts()[0].failure.find("connection refused"), std::string::npos);
    }
}

TEST(JudgeGateway, RecoversAfterRateLimit) {
    const auto v = mock::verdict_for("r");
    mock::SequenceTransport t({{429, "", "", 0.001}, {200, mock::verdict_reply(v), "", {}}});
    const auto out = request_verdict(mock::judge("j"), build_judge_prompt("L", "R"), t);
    EXPECT_EQ(out.attempts, 2);
}

// Same sequences through a real HTTP round trip against a local server.
TEST(JudgeGateway, HttpTransportAgainstLocalServer) {
    httplib::Server server;
    std::atomic<int> hits{0};
    const auto good = mock::verdict_reply(mock::verdict_for("http"));
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        const int n = ++hits;
        EXPECT_EQ(req.get_header_value("Authorization"), "Bearer sk-test");
        if (n == 1) res.set_content(mock::chat_reply("{oops"), "application/json");
        else res.set_content(good, "application/json");
    });
    server.Post("/bad", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(mock::chat_reply("[]"), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    ::setenv("TCMEVAL_TEST_KEY", "sk-test", 1);

    auto j = mock::judge("http-judge");
    j.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    j.api_key_env = "TCMEVAL_TEST_KEY";
    j.timeout_seconds = 5;
    HttpChatTransport transport;
    const auto out = request_verdict(j, build_judge_prompt("L", "R"), transport);
    EXPECT_EQ(out.attempts, 2);
    EXPECT_EQ(out.verdict, mock::verdict_for("http"));

    j.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/bad";
    j.api_key_env.clear();
    EXPECT_THROW(request_verdict(j, build_judge_prompt("L", "R"), transport), verdict_rejected);

    server.stop();
    th.join();
    j.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
    EXPECT_THROW(request_verdict(j, build_judge_prompt("L", "R"), transport), judge_unavailable);
}

TEST(Evaluation, TwelveVerdictsAndFlatLoopMeans) {
    const auto cases = two_cases();
    const auto responses = responses_for(cases, kModels);
    const std::vector<JudgeConfig> judges = {mock::judge("judge-a"), mock::judge("judge-b")};
    mock::ScoringTransport transport;
    VerdictStore store;
    const auto summary = run_evaluation(cases, responses, judges, transport, store);
    EXPECT_EQ(summary.total, 12u);
    EXPECT_EQ(summary.verdicts, 12u);
    EXPECT_EQ(summary.failures, 0u);
    EXPECT_EQ(store.size(), 12u);
    for (const auto& [key, n] : transport.requests()) EXPECT_EQ(n, 1) << key;

    // oracle: plain loops over the scores the mock was told to return
    const auto table = score_table(store, {Axis::Model, Axis::Judge});
    for (const auto& m : kModels) {
        for (const auto& j : judges) {
            std::map<std::string, double> sum;
            int n = 0;
            for (const auto& c : cases) {
                const auto v = mock::verdict_for(c.id + "|" + m + "|" + j.name);
                for (auto item : kScoreItems) sum[std::string(item)] += item_score(v, item);
                sum["total"] += v.total;
                ++n;
            }
            const auto& cell = table.cells.at({m, j.name});
            EXPECT_EQ(cell.n_cases, 2u);
            for (const auto& [item, s] : sum) EXPECT_NEAR(cell.mean.at(item), s / n, 1e-12) << m << j.name << item;
        }
    }
}

TEST(Evaluation, InterruptedRunResumesWithoutDuplicates) {
    const auto cases = two_cases();
    const auto responses = responses_for(cases, kModels);
    const std::vector<JudgeConfig> judges = {mock::judge("judge-a"), mock::judge("judge-b")};
    mock::ScoringTransport transport;
    VerdictStore store;
    EvaluationOptions first;
    first.max_triples = 5;
    const auto s1 = run_evaluation(cases, responses, judges, transport, store, first);
    EXPECT_TRUE(s1.interrupted);
    EXPECT_EQ(store.size(), 5u);
    const auto s2 = run_evaluation(cases, responses, judges, transport, store);
    EXPECT_FALSE(s2.interrupted);
    EXPECT_EQ(s2.skipped, 5u);
    EXPECT_EQ(store.size(), 12u);
    EXPECT_EQ(transport.total_requests(), 12u);
    for (const auto& [key, n] : transport.requests()) EXPECT_EQ(n, 1) << key;
}

TEST(Evaluation, CancelFlagStopsBeforeAnyRequest) {
    const auto cases = two_cases();
    mock::ScoringTransport transport;
    VerdictStore store;
    std::atomic<bool> cancel{true};
    EvaluationOptions opts;
    opts.cancel = &cancel;
    const auto s = run_evaluation(cases, responses_for(cases, kModels), {mock::judge("j")}, transport, store, opts);
    EXPECT_TRUE(s.interrupted);
    EXPECT_EQ(transport.total_requests(), 0u);
}

TEST(Evaluation, InFlightCapPerJudge) {
    std::vector<CaseRecord> cases;
    for (int i = 0; i < 8; ++i) cases.push_back(mock::make_case("c" + std::to_string(i), "dr"));
    const auto responses = responses_for(cases, kModels);
    const std::vector<JudgeConfig> judges = {mock::judge("narrow", 1), mock::judge("wide", 3)};
    mock::ScoringTransport transport(std::chrono::milliseconds(3));
    VerdictStore store;
    run_evaluation(cases, responses, judges, transport, store);
    EXPECT_EQ(transport.peak("narrow"), 1);
    EXPECT_LE(transport.peak("wide"), 3);
    EXPECT_GE(transport.peak("wide"), 1);
    EXPECT_EQ(store.size(), 48u);
}

TEST(Evaluation, FailuresAreRecordedNotFatal) {
    const auto cases = two_cases();
    mock::SequenceTransport transport({{500, "", "", {}}});
    VerdictStore store;
    auto j = mock::judge("down");
    j.max_retries = 0;
    const auto s = run_evaluation(cases, responses_for(cases, {"m1", "m2"}), {j}, transport, store);
    EXPECT_EQ(s.failures, 4u);
    for (const auto& r : store.snapshot()) {
        EXPECT_FALSE(r.ok);
        EXPECT_EQ(r.error_kind, "JudgeUnavailable");
        EXPECT_EQ(r.transcripts.size(), 1u);
    }
    const auto table = score_table(store, {Axis::Model});
    EXPECT_EQ(table.excluded_failures, 4u);
    EXPECT_EQ(table.warnings.size(), 2u);
}

TEST(Evaluation, RejectsInconsistentInput) {
    const auto cases = two_cases();
    mock::ScoringTransport transport;
    VerdictStore store;
    EXPECT_THROW(run_evaluation(cases, {}, {}, transport, store), precondition_violation);
    EXPECT_THROW(run_evaluation(cases, {mock::make_response("nope", "m")}, {mock::judge("j")}, transport, store),
                 precondition_violation);
    EXPECT_THROW(run_evaluation(cases, {}, {mock::judge("j"), mock::judge("j")}, transport, store),
                 precondition_violation);
}

TEST(Evaluation, VerdictRecordJsonRoundTrip) {
    VerdictRecord r;
    r.case_id = "c";
    r.model = "m";
    r.judge = "j";
    r.doctor = "d";
    r.ok = true;
    r.verdict = mock::verdict_for("rt");
    r.attempts = 1;
    r.recorded_at = "2026-01-01T00:00:00Z";
    const auto back = verdict_record_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(back.verdict, r.verdict);
    EXPECT_EQ(back.doctor, "d");
}

// ---------------------------------------------------------------------------
// analytics

TEST(Analytics, AggregateStatsKnownValues) {
    const auto s = aggregate_stats(std::vector<double>{2, 4, 4, 4, 5, 5, 7, 9});
    EXPECT_EQ(s.mean, 5.0);
    EXPECT_NEAR(s.std, 2.138089935, 1e-9);
    EXPECT_EQ(s.n, 8u);
    EXPECT_EQ(aggregate_stats(std::vector<double>{3}).std, 0.0);
    EXPECT_THROW(aggregate_stats(std::vector<double>{}), empty_input);
    EXPECT_EQ(format_stats({7.333333, 0.9763, 3}), "7.33 \xC2\xB1 0.98");
}

TEST(Analytics, AggregateStatsMatchesLongDoubleOracle) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 100);
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<double> v(1 + rng() % 50);
        for (auto& x : v) x = u(rng);
        const auto s = aggregate_stats(v);
        const auto o = oracle::mean_std(v);
        EXPECT_NEAR(s.mean, o.mean, 1e-9);
        EXPECT_NEAR(s.std, o.std, 1e-9);
        EXPECT_GE(s.std, 0.0);
    }
}

TEST(Analytics, DeltaFormatting) {
    EXPECT_EQ(format_delta(-0.59125), "(0.59125)");
    EXPECT_EQ(format_delta(0.5), "0.5");
    EXPECT_EQ(format_delta(0.0), "0");
    EXPECT_EQ(format_delta(-1e-9), "0");
    EXPECT_EQ(format_delta(1.234567), "1.23457");
}

TEST(Analytics, DeltaTableAgainstSubtraction) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0, 10);
    ScoreTable t;
    t.axes = {Axis::Model};
    t.items = {"i1", "i2", "i3", "i4", "i5"};
    const std::vector<std::string> models = {"bench", "m1", "m2", "m3", "m4"};
    for (const auto& m : models) {
        auto& cell = t.cells[{m}];
        cell.n_cases = 3;
        for (const auto& i : t.items) cell.mean[i] = u(rng);
    }
    const auto d = delta_table(t, "bench");
    EXPECT_EQ(d.entries.size(), 25u);
    for (const auto& m : models) {
        for (const auto& i : t.items) {
            const double expected = t.cells.at({m}).mean.at(i) - t.cells.at({"bench"}).mean.at(i);
            EXPECT_NEAR(*d.value({}, i, m), expected, 1e-12);
            if (m == "bench") EXPECT_EQ(*d.value({}, i, m), 0.0);
        }
    }
    EXPECT_THROW(delta_table(t, "absent"), unknown_benchmark);
}

TEST(Analytics, DeltaTableWithinGroups) {
    ScoreTable t;
    t.axes = {Axis::Doctor, Axis::Model};
    t.items = {"x"};
    auto set = [&](std::string d, std::string m, double v) {
        auto& c = t.cells[{d, m}];
        c.n_cases = 1;
        c.mean["x"] = v;
    };
    set("d1", "b", 1);
    set("d1", "m", 3);
    set("d2", "b", 10);
    set("d2", "m", 4);
    const auto d = delta_table(t, "b");
    EXPECT_EQ(*d.value({"d1"}, "x", "m"), 2.0);
    EXPECT_EQ(*d.value({"d2"}, "x", "m"), -6.0);
    EXPECT_EQ(format_delta(*d.value({"d2"}, "x", "m")), "(6)");
}

TEST(Analytics, TrialOverlapIsHundredTimesRate) {
    const Lexicon lex;
    std::mt19937_64 rng(23);
    std::vector<std::string> pool;
    for (int i = 0; i < 40; ++i) pool.push_back("herb" + std::to_string(i));
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::string> g, l;
        for (const auto& h : pool) {
            if (rng() % 4 == 0) g.push_back(h);
            if (rng() % 5 == 0) l.push_back(h);
        }
        if (l.empty()) l.push_back(pool[rng() % pool.size()]);
        const double expected = 100.0 * oracle::overlap_fraction(g, l);
        const double got = trial_overlap_score(make_prescription(g, lex), make_prescription(l, lex), lex);
        EXPECT_NEAR(got, expected, 1e-12);
        const double rate = *match_prescriptions(make_prescription(g, lex), make_prescription(l, lex), lex).rate;
        EXPECT_EQ(got, 100.0 * rate);
    }
}

TEST(Analytics, TrialReportOnAppendixPrescriptions) {
    const auto fx = oracle::load_fixture("appendix_b_prescription.json");
    const auto lex = Lexicon::load(oracle::fixture_path("lexicon.tsv"));
    const auto c = mock::make_case("c1", "dr", fx["label_zh"].get<std::string>());
    const std::vector<ModelResponse> rs = {mock::make_response("c1", "m", fx["model_zh"].get<std::string>())};
    const auto report = trial_report({c}, rs, lex);
    ASSERT_EQ(report.models.size(), 1u);
    EXPECT_NEAR(report.models[0].stats.mean, 41.67, 0.01);
    EXPECT_EQ(format_stats(report.models[0].stats), "41.67 \xC2\xB1 0.00");
}

TEST(Analytics, ScoreTableCsvAndJson) {
    VerdictStore store;
    VerdictRecord r{"c", "m,1", "j", "d", true, mock::verdict_for("csv"), {}, 1, "", "", {}, ""};
    store.append(r);
    const auto t = score_table(store, {Axis::Model});
    const auto csv = to_csv(t);
    EXPECT_NE(csv.find("\"m,1\""), std::string::npos);
    const auto j = to_json(t);
    EXPECT_EQ(j["cells"].size(), 1u);
    EXPECT_THROW(score_table(store, {}), precondition_violation);
}

// ---------------------------------------------------------------------------
// human evaluation

TEST(HumanEval, WeightedTotals) {
    Rating r;
    r.scores = {1, 1, 1, 1, 1};
    EXPECT_EQ(weighted_total(r), 10.0);
    r.scores = {10, 10, 10, 10, 10};
    EXPECT_EQ(weighted_total(r), 100.0);
    r.scores = {6, 8, 10, 7, 9};
    EXPECT_EQ(weighted_total(r), 72.0);
    EXPECT_EQ(weighted_total(r), oracle::weighted_total(r.scores));
    std::mt19937_64 rng(2);
    for (int i = 0; i < 2000; ++i) {
        for (auto& s : r.scores) s = 1 + static_cast<int>(rng() % 10);
        EXPECT_NEAR(weighted_total(r), oracle::weighted_total(r.scores), 1e-12);
        EXPECT_GE(weighted_total(r), 10.0);
        EXPECT_LE(weighted_total(r), 100.0);
    }
}

TEST(HumanEval, SubmissionRules) {
    auto s = create_session("s1", {"h", "attending", "g1"}, "dr", {"c1", "c2"}, {"ma", "mb"}, 42);
    EXPECT_THROW(submit_rating(s, {"c1", "Model1", {7, 8, 0, 6, 9}}), rating_out_of_range);
    EXPECT_THROW(submit_rating(s, {"c1", "Model9", {7, 8, 5, 6, 9}}), unknown_label);
    EXPECT_THROW(submit_rating(s, {"c9", "Model1", {7, 8, 5, 6, 9}}), unknown_label);
    submit_rating(s, {"c1", "Model1", {7, 8, 5, 6, 9}});
    EXPECT_THROW(submit_rating(s, {"c1", "Model1", {7, 8, 5, 6, 9}}), duplicate_rating);
    submit_rating(s, {"c1", "Model1", {8, 8, 5, 6, 9}, true});
    EXPECT_EQ(s.ratings.size(), 2u);
    EXPECT_TRUE(s.ratings.back().supersedes);
    EXPECT_EQ(s.active_ratings().size(), 1u);
    auto next = next_item(s);
    ASSERT_TRUE(next);
    EXPECT_EQ(next->case_id, "c1");
    EXPECT_EQ(next->label, "Model2");
    submit_rating(s, {"c1", "Model2", {5, 5, 5, 5, 5}});
    submit_rating(s, {"c2", "Model1", {5, 5, 5, 5, 5}});
    EXPECT_EQ(s.status, SessionStatus::Open);
    submit_rating(s, {"c2", "Model2", {5, 5, 5, 5, 5}});
    EXPECT_EQ(s.status, SessionStatus::Complete);
    EXPECT_FALSE(next_item(s));
    EXPECT_THROW(submit_rating(s, {"c2", "Model2", {5, 5, 5, 5, 5}, true}), session_closed);
    EXPECT_THROW(create_session("s", {}, "d", {"c"}, {"only"}, 1), invalid_panel);
}

TEST(HumanEval, BlindingIsDeterministicAndHidesNames) {
    const std::vector<std::string> models = {"gpt-secret", "qwen-secret", "ours-secret"};
    const auto a = create_session("a", {}, "dr", {"c"}, models, 99);
    const auto b = create_session("b", {}, "dr", {"c"}, models, 99);
    EXPECT_EQ(a.blinding, b.blinding);
    const auto view = blinded_view(a).dump();
    for (const auto& m : models) EXPECT_EQ(view.find(m), std::string::npos);
    std::set<std::string> labels;
    for (const auto& [m, l] : a.blinding) labels.insert(l);
    EXPECT_EQ(labels, std::set<std::string>({"Model1", "Model2", "Model3"}));
}

// With 3 models each model lands on each label about a third of the time.
TEST(HumanEval, BlindingChiSquare) {
    const std::size_t n = 3, seeds = 1000;
    std::vector<std::vector<double>> counts(n, std::vector<double>(n, 0));
    for (std::uint64_t seed = 0; seed < seeds; ++seed) {
        const auto p = blinding_permutation(n, seed);
        std::vector<std::size_t> sorted = p;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < n; ++i) EXPECT_EQ(sorted[i], i);
        for (std::size_t i = 0; i < n; ++i) counts[i][p[i]] += 1;
    }
    const double expected = static_cast<double>(seeds) / n;
    for (std::size_t i = 0; i < n; ++i) {
        double chi = 0;
        for (std::size_t l = 0; l < n; ++l) chi += (counts[i][l] - expected) * (counts[i][l] - expected) / expected;
        // 2 degrees of freedom, p = 0.001
        EXPECT_LT(chi, 13.816) << "model " << i;
    }
}

TEST(HumanEval, UnblindReportMatchesBruteForce) {
    const std::vector<std::string> models = {"ours", "base", "other"};
    const std::vector<std::string> cases = {"c1", "c2", "c3", "c4"};
    std::mt19937_64 rng(8);
    std::vector<RatingSession> sessions;
    for (int rater = 0; rater < 3; ++rater) {
        auto s = create_session("s" + std::to_string(rater), {"h" + std::to_string(rater), "t", "g"}, "dr-li", cases,
                                models, 1000 + rater);
        while (auto item = next_item(s)) {
            RatingInput in{item->case_id, item->label, {}, false};
            for (auto& x : in.scores) x = 1 + static_cast<int>(rng() % 10);
            submit_rating(s, in);
        }
        sessions.push_back(s);
    }
    auto open = create_session("open", {}, "dr-li", cases, models, 5);
    submit_rating(open, {"c1", "Model1", {1, 1, 1, 1, 1}});
    sessions.push_back(open);

    const auto report = unblind_report(sessions);
    EXPECT_EQ(report.warnings.size(), 1u);
    for (const auto& m : models) {
        std::array<std::vector<double>, 5> dims;
        std::vector<double> totals;
        for (int rater = 0; rater < 3; ++rater) {
            const auto& s = sessions[static_cast<std::size_t>(rater)];
            const auto label = s.blinding.at(m);
            for (const auto& r : s.ratings) {
                if (r.label != label) continue;
                for (std::size_t d = 0; d < 5; ++d) dims[d].push_back(r.scores[d]);
                totals.push_back(oracle::weighted_total(r.scores));
            }
        }
        for (std::size_t d = 0; d < 5; ++d) {
            const auto o = oracle::mean_std(dims[d]);
            const auto* row = report.find("dr-li", m, to_string(kDimensions[d]));
            ASSERT_NE(row, nullptr);
            EXPECT_NEAR(row->stats.mean, o.mean, 1e-9);
            EXPECT_NEAR(row->stats.std, o.std, 1e-9);
            EXPECT_EQ(row->stats.n, 12u);
        }
        const auto o = oracle::mean_std(totals);
        const auto* row = report.find("dr-li", m, "weighted_total");
        ASSERT_NE(row, nullptr);
        EXPECT_NEAR(row->stats.mean, o.mean, 1e-9);
        EXPECT_NEAR(row->stats.std, o.std, 1e-9);
    }
}

TEST(HumanEval, ExportStaysBlindedUntilComplete) {
    auto s = create_session("s", {}, "dr", {"c1"}, {"hidden-a", "hidden-b"}, 3);
    submit_rating(s, {"c1", "Model1", {5, 5, 5, 5, 5}});
    auto out = export_session_jsonl(s);
    EXPECT_EQ(out.find("hidden-"), std::string::npos);
    submit_rating(s, {"c1", "Model2", {6, 6, 6, 6, 6}});
    out = export_session_jsonl(s);
    EXPECT_NE(out.find("hidden-a"), std::string::npos);
    EXPECT_EQ(std::count(out.begin(), out.end(), '\n'), 2);
}

TEST(HumanEval, RaterIdentityHash) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_NE(hash_rater_identity("Dr Zhang", "salt1"), hash_rater_identity("Dr Zhang", "salt2"));
    EXPECT_EQ(hash_rater_identity("Dr Zhang", "s").size(), 64u);
}

// ---------------------------------------------------------------------------
// dataset tools

TEST(Dataset, ChunksReconstructSource) {
    std::mt19937_64 rng(31);
    const CharClassTokenizer tok;
    for (int trial = 0; trial < 500; ++trial) {
        const auto src = oracle::random_text(rng);
        const auto r = chunk_text(src, {512, 0});
        std::string joined;
        for (const auto& c : r.chunks) {
            joined += c.text;
            EXPECT_LE(c.token_count, 512u);
            EXPECT_EQ(c.token_count, tok.count(c.text));
        }
        ASSERT_EQ(joined, src) << "trial " << trial;
    }
}

TEST(Dataset, OverlappingChunksKeepCoresContiguous) {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 200; ++trial) {
        const auto src = oracle::random_text(rng, 3000);
        const auto r = chunk_text(src, {64, 16});
        std::string cores;
        std::size_t expected_core = 0;
        for (const auto& c : r.chunks) {
            EXPECT_EQ(c.core_begin, expected_core);
            EXPECT_LE(c.begin, c.core_begin);
            EXPECT_LE(c.token_count, 64u);
            EXPECT_EQ(c.text, src.substr(c.begin, c.end - c.begin));
            cores += src.substr(c.core_begin, c.end - c.core_begin);
            expected_core = c.end;
        }
        ASSERT_EQ(cores, src);
    }
}

TEST(Dataset, ShortAndOverlongSentences) {
    std::string hundred;
    for (int i = 0; i < 99; ++i) hundred += "脉";
    hundred += "。";
    const auto one = chunk_text(hundred);
    ASSERT_EQ(one.chunks.size(), 1u);
    EXPECT_EQ(one.chunks[0].token_count, 100u);
    EXPECT_TRUE(one.warnings.empty());

    std::string long_sentence;
    for (int i = 0; i < 700; ++i) long_sentence += "痛";
    const auto two = chunk_text(long_sentence);
    ASSERT_EQ(two.chunks.size(), 2u);
    EXPECT_EQ(two.chunks[0].token_count, 512u);
    EXPECT_EQ(two.chunks[1].token_count, 188u);
    EXPECT_EQ(two.warnings.size(), 1u);

    EXPECT_THROW(chunk_text("   "), empty_text);
    EXPECT_THROW(chunk_text("x", {4, 4}), precondition_violation);
}

TEST(Dataset, SentenceBoundariesCoverMarks) {
    const std::string s = "头痛。发热！Fever? Yes. 3.5g";
    const auto b = sentence_boundaries(s);
    ASSERT_FALSE(b.empty());
    EXPECT_EQ(b.back(), s.size());
    EXPECT_TRUE(std::is_sorted(b.begin(), b.end()));
    EXPECT_NE(std::find(b.begin(), b.end(), std::string("头痛。").size()), b.end());
}

TEST(Dataset, TopKMatchesBruteForce) {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> g(0, 1);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::vector<double>> vs(50, std::vector<double>(16));
        for (auto& v : vs)
            for (auto& x : v) x = g(rng);
        std::vector<double> q(16);
        for (auto& x : q) x = g(rng);
        std::vector<std::pair<double, std::size_t>> brute;
        for (std::size_t i = 0; i < vs.size(); ++i) {
            double dot = 0, a = 0, b = 0;
            for (std::size_t k = 0; k < q.size(); ++k) {
                dot += q[k] * vs[i][k];
                a += q[k] * q[k];
                b += vs[i][k] * vs[i][k];
            }
            brute.emplace_back(dot / std::sqrt(a * b), i);
        }
        std::sort(brute.begin(), brute.end(), [](auto& x, auto& y) { return x.first > y.first; });
        const auto top = select_top_k(q, vs, 3);
        ASSERT_EQ(top.size(), 3u);
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(top[i], brute[i].second);
    }
    EXPECT_THROW(cosine_similarity({1, 2}, {1}), dimension_mismatch);
    EXPECT_EQ(select_top_k({1, 0}, {{1, 0}}, 3).size(), 1u);
}

TEST(Dataset, RagInputPutsCaseFirst) {
    const auto s = assemble_rag_input("患者头痛", {"知识一", "知识二", "知识三"});
    EXPECT_EQ(s.rfind("患者头痛", 0), 0u);
    EXPECT_LT(s.find("知识一"), s.find("知识二"));
    EXPECT_LT(s.find("知识二"), s.find("知识三"));
    EXPECT_EQ(assemble_rag_input("只有病例", {}), "只有病例");
}

TEST(Dataset, KtoLabelsPartitionUnitInterval) {
    for (int i = 0; i <= 100000; ++i) {
        const double s = i / 100000.0;
        const auto l = kto_label(s);
        const long long micro = std::llround(s * 1e6);
        const auto expected = micro > 900000 ? KtoLabel::True : (micro < 600000 ? KtoLabel::False : KtoLabel::Discard);
        ASSERT_EQ(l, expected) << s;
    }
    EXPECT_EQ(kto_label(0.90), KtoLabel::Discard);
    EXPECT_EQ(kto_label(0.60), KtoLabel::Discard);
    EXPECT_EQ(kto_label(0.900001), KtoLabel::True);
    EXPECT_EQ(kto_label(0.599999), KtoLabel::False);
    EXPECT_THROW(kto_label(1.0000001), range_error);
    EXPECT_THROW(kto_label(std::nan("")), range_error);
    EXPECT_FALSE(make_kto_sample("i", "", "o", 0.75));
    EXPECT_TRUE(make_kto_sample("i", "", "o", std::nullopt)->label);
    EXPECT_FALSE(make_kto_sample("i", "", "o", 0.2)->label);
}

TEST(Dataset, RejectionFilterDropsTheThreshold) {
    const std::vector<ScoredResponse> rs = {
        {"a", "", 8.5}, {"b", "", 8.500001}, {"c", "", 8.499999}, {"d", "", 9.0}, {"e", "", 0.1 + 8.4}};
    const auto kept = rejection_filter(rs);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].sample_id, "b");
    EXPECT_EQ(kept[1].sample_id, "d");
    std::mt19937_64 rng(43);
    std::vector<ScoredResponse> many;
    for (int i = 0; i < 1000; ++i) many.push_back({std::to_string(i), "", (rng() % 1001) / 100.0});
    const auto k = rejection_filter(many);
    for (const auto& r : k) EXPECT_GT(std::llround(r.judge_score * 1e6), 8500000);
    const auto n_expected = std::count_if(many.begin(), many.end(),
                                          [](const auto& r) { return std::llround(r.judge_score * 1e6) > 8500000; });
    EXPECT_EQ(static_cast<long>(k.size()), n_expected);
}

TEST(Dataset, HashedEmbeddingSimilarity) {
    HashedNgramEmbedding e;
    EmbeddingSimilarity sim(e);
    EXPECT_NEAR(sim.similarity("黄芩清热燥湿", "黄芩清热燥湿"), 1.0, 1e-12);
    EXPECT_LT(sim.similarity("黄芩清热燥湿", "桂枝温通经脉"), 0.5);
}
