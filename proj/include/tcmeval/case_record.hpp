#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "tcmeval/error.hpp"
#include "tcmeval/response_parser.hpp"

namespace tcmeval {

// A test case: patient presentation plus the physician's gold answer.
struct CaseRecord {
    std::string id;
    std::string doctor;
    std::string instruction;
    StructuredResponse label;
    std::string source;

    bool operator==(const CaseRecord&) const = default;
};

inline nlohmann::json to_json(const CaseRecord& c) {
    return {{"id", c.id},
            {"doctor", c.doctor},
            {"instruction", c.instruction},
            {"label", c.label.raw},
            {"source", c.source}};
}

// Accepts {"id", "doctor", "instruction", "label", "source"?}; the label is the
// gold answer text and is parsed into sections here.
inline CaseRecord case_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw parse_error("case record must be a JSON object");
    for (const char* key : {"id", "instruction", "label"}) {
        if (!j.contains(key) || !j.at(key).is_string()) {
            throw parse_error(std::string("case record field '") + key + "' must be a string");
        }
    }
    CaseRecord c;
    c.id = j.at("id").get<std::string>();
    if (text::is_blank(c.id)) throw parse_error("case record id is blank");
    c.doctor = j.value("doctor", "");
    c.instruction = j.at("instruction").get<std::string>();
    c.label = parse_structured_response(j.at("label").get<std::string>());
    c.source = j.value("source", "");
    return c;
}

} // namespace tcmeval
