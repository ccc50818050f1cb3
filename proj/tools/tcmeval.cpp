#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tcmeval/tcmeval.hpp"

using namespace tcmeval;

#ifndef TCMEVAL_DEFAULT_LEXICON
#define TCMEVAL_DEFAULT_LEXICON "data/lexicon.tsv"
#endif

namespace {

struct Globals {
    std::string config_path;
    std::string data_dir;
    std::string lexicon;
    std::string judges;
};

std::atomic<bool> g_cancel{false};

void on_signal(int) { g_cancel = true; }

RunConfig load_run_config(const Globals& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
    if (!g.data_dir.empty()) cfg.data_dir = g.data_dir;
    if (!g.lexicon.empty()) cfg.lexicon_path = g.lexicon;
    if (!g.judges.empty()) {
        std::vector<JudgeConfig> picked;
        std::stringstream ss(g.judges);
        for (std::string name; std::getline(ss, name, ',');) {
            const auto it = std::find_if(cfg.judges.begin(), cfg.judges.end(),
                                         [&](const JudgeConfig& j) { return j.name == name; });
            if (it == cfg.judges.end()) throw config_error("judges: no judge named '" + name + "' in config");
            picked.push_back(*it);
        }
        cfg.judges = std::move(picked);
    }
    validate_config(cfg);
    return cfg;
}

Lexicon load_lexicon(const RunConfig& cfg) {
    if (!cfg.lexicon_path.empty()) return Lexicon::load(cfg.lexicon_path);
    if (std::filesystem::exists(TCMEVAL_DEFAULT_LEXICON)) return Lexicon::load(TCMEVAL_DEFAULT_LEXICON);
    std::cerr << "warning: no lexicon configured, herb names are matched verbatim\n";
    return Lexicon{};
}

std::vector<nlohmann::json> read_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read " + path);
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (text::is_blank(line)) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw parse_error(path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Writes to the named file, or stdout for "" and "-".
class Output {
public:
    explicit Output(const std::string& path) {
        if (!path.empty() && path != "-") {
            file_.open(path, std::ios::binary | std::ios::trunc);
            if (!file_) throw io_error("cannot write " + path);
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

private:
    std::ofstream file_;
};

void line(std::ostream& out, const nlohmann::ordered_json& j) {
    out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
}

std::unique_ptr<EmbeddingProvider> make_embedding(const RunConfig& cfg) {
    if (cfg.embedding.endpoint.empty()) return std::make_unique<HashedNgramEmbedding>();
    return std::make_unique<HttpEmbedding>(cfg.embedding.endpoint, cfg.embedding.model, cfg.embedding.api_key_env);
}

std::vector<Axis> parse_axes(const std::string& spec) {
    std::vector<Axis> axes;
    std::stringstream ss(spec);
    for (std::string a; std::getline(ss, a, ',');) axes.push_back(axis_from_string(text::trim(a)));
    return axes;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tcmeval: judge, rate and report on clinical TCM model answers"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));
    Globals g;
    app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_option("--data-dir", g.data_dir, "event log and snapshot directory");
    app.add_option("--lexicon", g.lexicon, "herb alias table (alias<TAB>canonical)");
    app.add_option("--judges", g.judges, "comma-separated judge names from the config");

    auto* ingest = app.add_subcommand("ingest", "load cases and model responses (JSONL)");
    std::string cases_path, responses_path;
    ingest->add_option("--cases", cases_path, "cases JSONL");
    ingest->add_option("--responses", responses_path, "responses JSONL");

    auto* judge = app.add_subcommand("judge", "run every judge over every stored response");
    std::optional<std::size_t> max_triples;
    judge->add_option("--max-triples", max_triples, "stop after this many new triples");

    auto* report = app.add_subcommand("report", "score, delta, human or trial report");
    std::string report_kind = "scores", group_by = "doctor,model,judge", benchmark, format = "csv", out_path;
    report->add_option("kind", report_kind, "scores|delta|human|trial")
        ->check(CLI::IsMember({"scores", "delta", "human", "trial"}));
    report->add_option("--group-by", group_by, "axes among doctor,model,judge");
    report->add_option("--benchmark", benchmark, "benchmark model for the delta report");
    report->add_option("--format", format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
    report->add_option("-o,--out", out_path, "output file (default stdout)");

    auto* human = app.add_subcommand("human", "human evaluation sessions");
    human->require_subcommand(1);
    auto* human_export = human->add_subcommand("export", "export a session as JSONL");
    std::string session_id;
    human_export->add_option("--session", session_id, "session id")->required();
    human_export->add_option("-o,--out", out_path, "output file (default stdout)");

    auto* dataset = app.add_subcommand("dataset", "training data preparation");
    dataset->require_subcommand(1);
    std::string in_path;
    std::optional<std::size_t> max_tokens, overlap, top_k;
    auto* chunk = dataset->add_subcommand("chunk", "split texts into token-bounded chunks");
    chunk->add_option("--in", in_path, "JSONL with id and text, or a plain text file")->required();
    chunk->add_option("--max-tokens", max_tokens);
    chunk->add_option("--overlap", overlap);
    chunk->add_option("-o,--out", out_path);
    auto* rag = dataset->add_subcommand("rag", "append top-k knowledge chunks to each case");
    std::string knowledge_path;
    rag->add_option("--in", in_path, "JSONL with id and instruction")->required();
    rag->add_option("--knowledge", knowledge_path, "plain text knowledge base")->required()->check(CLI::ExistingFile);
    rag->add_option("--top-k", top_k);
    rag->add_option("--max-tokens", max_tokens);
    rag->add_option("-o,--out", out_path);
    auto* kto = dataset->add_subcommand("kto", "label samples for KTO by similarity to the original answer");
    kto->add_option("--in", in_path, "JSONL with instruction, input, output and candidates")->required();
    kto->add_option("-o,--out", out_path);
    auto* filter = dataset->add_subcommand("filter", "keep responses scoring above the rejection threshold");
    filter->add_option("--in", in_path, "JSONL with sample_id, response, judge_score")->required();
    filter->add_option("-o,--out", out_path);

    auto* serve = app.add_subcommand("serve", "run the HTTP service");
    std::string host;
    std::optional<int> port;
    serve->add_option("--host", host);
    serve->add_option("--port", port);

    CLI11_PARSE(app, argc, argv);

    try {
        auto cfg = load_run_config(g);

        if (*ingest) {
            if (cases_path.empty() && responses_path.empty()) {
                throw precondition_violation("ingest needs --cases and/or --responses");
            }
            Repository repo(cfg.data_dir, cfg.service.snapshot_every);
            auto show = [](const char* what, const IngestResult& r) {
                std::cout << what << ": " << r.count << " stored, " << r.warnings.size() << " rejected\n";
                for (const auto& w : r.warnings) std::cerr << "  " << what << " " << w << '\n';
            };
            if (!cases_path.empty()) show("cases", ingest_cases(repo, cases_path));
            if (!responses_path.empty()) show("responses", ingest_responses(repo, responses_path));
            repo.snapshot();
            return 0;
        }

        if (*judge) {
            if (cfg.judges.empty()) throw config_error("judges: none configured");
            Repository repo(cfg.data_dir, cfg.service.snapshot_every);
            std::signal(SIGINT, on_signal);
            auto [cases, responses, store] = repo.read(
                [](const EvalState& st) { return std::make_tuple(st.cases, st.responses, st.verdicts); });
            nlohmann::json details;
            details["judges"] = nlohmann::json::array();
            for (const auto& j : cfg.judges) details["judges"].push_back(j.name);
            std::cerr << "judge run " << repo.start_judge_run(details) << '\n';
            store.set_sink([&](const VerdictRecord& r) { repo.store_verdict(r); });
            HttpChatTransport transport;
            EvaluationOptions options;
            options.max_triples = max_triples;
            options.cancel = &g_cancel;
            options.progress = [](std::size_t done, std::size_t total) {
                std::cerr << "\r" << done << "/" << total << std::flush;
            };
            const auto s = run_evaluation(cases, responses, cfg.judges, transport, store, options);
            std::cerr << '\n';
            repo.snapshot();
            std::cout << "total " << s.total << ", skipped " << s.skipped << ", verdicts " << s.verdicts
                      << ", failures " << s.failures << (s.interrupted ? ", interrupted" : "") << '\n';
            return s.interrupted ? 3 : 0;
        }

        if (*report) {
            Repository repo(cfg.data_dir, cfg.service.snapshot_every);
            Output out(out_path);
            const bool csv = format == "csv";
            auto emit = [&](const auto& table) {
                if (csv) out.stream() << to_csv(table);
                else out.stream() << to_json(table).dump(2) << '\n';
            };
            if (report_kind == "scores" || report_kind == "delta") {
                const auto table = score_table(repo.read([](const EvalState& st) { return st.verdicts.snapshot(); }),
                                               parse_axes(group_by));
                for (const auto& w : table.warnings) std::cerr << "warning: " << w << '\n';
                if (report_kind == "scores") {
                    emit(table);
                } else {
                    if (benchmark.empty()) throw precondition_violation("delta report needs --benchmark");
                    emit(delta_table(table, benchmark));
                }
            } else if (report_kind == "human") {
                const auto sessions = repo.read([](const EvalState& st) {
                    std::vector<RatingSession> v;
                    for (const auto& [id, s] : st.sessions) v.push_back(s);
                    return v;
                });
                emit(unblind_report(sessions, cfg.weights));
            } else {
                const auto lexicon = load_lexicon(cfg);
                const auto [cases, responses] =
                    repo.read([](const EvalState& st) { return std::make_pair(st.cases, st.responses); });
                emit(trial_report(cases, responses, lexicon));
            }
            return 0;
        }

        if (*human_export) {
            Repository repo(cfg.data_dir, cfg.service.snapshot_every);
            Output out(out_path);
            out.stream() << repo.read([&](const EvalState& st) {
                const auto it = st.sessions.find(session_id);
                if (it == st.sessions.end()) throw unknown_session("no session " + session_id);
                return export_session_jsonl(it->second, cfg.weights);
            });
            return 0;
        }

        if (*chunk) {
            ChunkOptions opts{max_tokens.value_or(cfg.max_tokens), overlap.value_or(cfg.chunk_overlap)};
            Output out(out_path);
            auto emit_chunks = [&](const std::string& id, const std::string& body) {
                const auto r = chunk_text(body, opts);
                for (const auto& w : r.warnings) std::cerr << "warning: " << id << ": " << w << '\n';
                for (const auto& c : r.chunks) {
                    line(out.stream(), {{"id", id}, {"chunk", c.index}, {"tokens", c.token_count},
                                        {"begin", c.begin}, {"end", c.end}, {"text", c.text}});
                }
            };
            if (in_path.size() > 6 && in_path.substr(in_path.size() - 6) == ".jsonl") {
                for (const auto& j : read_jsonl(in_path)) emit_chunks(j.value("id", ""), j.at("text").get<std::string>());
            } else {
                emit_chunks(std::filesystem::path(in_path).filename().string(), read_file(in_path));
            }
            return 0;
        }

        if (*rag) {
            const auto chunks = chunk_text(read_file(knowledge_path), {max_tokens.value_or(cfg.max_tokens), 0}).chunks;
            std::vector<std::string> texts;
            for (const auto& c : chunks) texts.push_back(c.text);
            auto embedder = make_embedding(cfg);
            const auto vectors = embedder->embed(texts);
            Output out(out_path);
            for (const auto& j : read_jsonl(in_path)) {
                const auto instruction = j.at("instruction").get<std::string>();
                std::vector<std::string> picked;
                for (auto i : select_top_k(embedder->embed({instruction}).at(0), vectors, top_k.value_or(cfg.top_k))) {
                    picked.push_back(texts[i]);
                }
                auto o = nlohmann::ordered_json::object();
                o["id"] = j.value("id", "");
                o["input"] = assemble_rag_input(instruction, picked);
                line(out.stream(), o);
            }
            return 0;
        }

        if (*kto) {
            auto embedder = make_embedding(cfg);
            EmbeddingSimilarity sim(*embedder);
            Output out(out_path);
            std::size_t kept = 0, discarded = 0;
            for (const auto& j : read_jsonl(in_path)) {
                const auto instruction = j.value("instruction", "");
                const auto input = j.value("input", "");
                const auto output = j.at("output").get<std::string>();
                line(out.stream(), to_json(*make_kto_sample(instruction, input, output, std::nullopt, cfg.kto())));
                ++kept;
                for (const auto& cand : j.value("candidates", std::vector<std::string>{})) {
                    const auto s = make_kto_sample(instruction, input, cand, sim.similarity(cand, output), cfg.kto());
                    if (!s) {
                        ++discarded;
                        continue;
                    }
                    line(out.stream(), to_json(*s));
                    ++kept;
                }
            }
            std::cerr << kept << " samples, " << discarded << " discarded\n";
            return 0;
        }

        if (*filter) {
            std::vector<ScoredResponse> rows;
            for (const auto& j : read_jsonl(in_path)) rows.push_back(scored_response_from_json(j));
            Output out(out_path);
            const auto kept = rejection_filter(rows, cfg.rejection);
            for (const auto& r : kept) line(out.stream(), to_json(r));
            std::cerr << kept.size() << " of " << rows.size() << " kept\n";
            return 0;
        }

        if (*serve) {
            if (!host.empty()) cfg.service.host = host;
            if (port) cfg.service.port = *port;
            EvalService service(cfg, load_lexicon(cfg));
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            const auto bound = service.start();
            std::cerr << "listening on " << cfg.service.host << ":" << bound << '\n';
            while (!g_cancel) std::this_thread::sleep_for(std::chrono::milliseconds(200));
            service.stop();
            return 0;
        }
    } catch (const error& e) {
        std::cerr << e.kind() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
