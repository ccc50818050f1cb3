#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcmeval/case_record.hpp"
#include "tcmeval/error.hpp"
#include "tcmeval/event_log.hpp"
#include "tcmeval/judge_gateway.hpp"

namespace tcmeval {

struct IngestResult {
    std::size_t count = 0;
    std::vector<std::string> warnings;  // "line N: reason"
};

namespace detail {

// One JSON object per line. A bad line becomes a warning; only an unreadable
// file is an error.
template <typename Store>
IngestResult ingest_jsonl(const std::filesystem::path& path, Store&& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot read " + path.string());
    IngestResult result;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::is_blank(line)) continue;
        try {
            store(nlohmann::json::parse(line));
            ++result.count;
        } catch (const nlohmann::json::exception& e) {
            result.warnings.push_back("line " + std::to_string(line_no) + ": " + e.what());
        } catch (const error& e) {
            result.warnings.push_back("line " + std::to_string(line_no) + ": " + e.kind() + ": " + e.what());
        }
    }
    return result;
}

} // namespace detail

inline IngestResult ingest_cases(Repository& repo, const std::filesystem::path& path) {
    return detail::ingest_jsonl(path, [&](const nlohmann::json& j) { repo.ingest_case(case_from_json(j)); });
}

inline IngestResult ingest_responses(Repository& repo, const std::filesystem::path& path) {
    return detail::ingest_jsonl(path,
                                [&](const nlohmann::json& j) { repo.ingest_response(model_response_from_json(j)); });
}

} // namespace tcmeval
