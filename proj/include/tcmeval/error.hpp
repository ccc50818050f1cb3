#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tcmeval {

// Every failure raised by the library derives from this type so callers can
// catch the whole family at a process boundary (CLI, HTTP handler).
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "Error"; }
};

#define TCMEVAL_DEFINE_ERROR(Name, Kind)                                  \
    class Name : public error {                                           \
    public:                                                               \
        using error::error;                                               \
        const char* kind() const noexcept override { return Kind; }       \
    }

TCMEVAL_DEFINE_ERROR(precondition_violation, "PreconditionViolation");
TCMEVAL_DEFINE_ERROR(range_error, "RangeError");
TCMEVAL_DEFINE_ERROR(empty_name, "EmptyName");
TCMEVAL_DEFINE_ERROR(empty_label, "EmptyLabel");
TCMEVAL_DEFINE_ERROR(invalid_logic_points, "InvalidLogicPoints");
TCMEVAL_DEFINE_ERROR(parse_error, "ParseError");
TCMEVAL_DEFINE_ERROR(template_error, "TemplateError");
TCMEVAL_DEFINE_ERROR(unknown_benchmark, "UnknownBenchmark");
TCMEVAL_DEFINE_ERROR(empty_input, "EmptyInput");
TCMEVAL_DEFINE_ERROR(empty_text, "EmptyText");
TCMEVAL_DEFINE_ERROR(dimension_mismatch, "DimensionMismatch");
TCMEVAL_DEFINE_ERROR(invalid_panel, "InvalidPanel");
TCMEVAL_DEFINE_ERROR(rating_out_of_range, "OutOfRange");
TCMEVAL_DEFINE_ERROR(duplicate_rating, "Duplicate");
TCMEVAL_DEFINE_ERROR(unknown_label, "UnknownLabel");
TCMEVAL_DEFINE_ERROR(unknown_session, "UnknownSession");
TCMEVAL_DEFINE_ERROR(session_closed, "SessionClosed");
TCMEVAL_DEFINE_ERROR(io_error, "IoError");
TCMEVAL_DEFINE_ERROR(bind_error, "BindError");
TCMEVAL_DEFINE_ERROR(config_error, "ConfigError");
TCMEVAL_DEFINE_ERROR(lexicon_error, "LexiconError");

#undef TCMEVAL_DEFINE_ERROR

// Strict-mode verdict validation failure; carries every offending field path.
class schema_error : public error {
public:
    explicit schema_error(std::vector<std::string> paths)
        : error(join(paths)), paths_(std::move(paths)) {}
    const char* kind() const noexcept override { return "SchemaError"; }
    const std::vector<std::string>& paths() const noexcept { return paths_; }

private:
    static std::string join(const std::vector<std::string>& paths) {
        std::string out = "verdict violates schema at:";
        for (const auto& p : paths) {
            out += " [";
            out += p;
            out += "]";
        }
        return out;
    }
    std::vector<std::string> paths_;
};

class corrupt_log : public error {
public:
    corrupt_log(std::uint64_t sequence, const std::string& what)
        : error("corrupt event log at sequence " + std::to_string(sequence) + ": " + what),
          sequence_(sequence) {}
    const char* kind() const noexcept override { return "CorruptLog"; }
    std::uint64_t sequence() const noexcept { return sequence_; }

private:
    std::uint64_t sequence_;
};

// One request/response exchange with a judge, kept for audit.
struct transcript_entry {
    int attempt = 0;
    std::string request;
    std::string response;
    std::string failure;
    bool operator==(const transcript_entry&) const = default;
};

class judge_failure : public error {
public:
    judge_failure(const std::string& what, std::vector<transcript_entry> transcripts)
        : error(what), transcripts_(std::move(transcripts)) {}
    const std::vector<transcript_entry>& transcripts() const noexcept { return transcripts_; }

private:
    std::vector<transcript_entry> transcripts_;
};

class judge_unavailable : public judge_failure {
public:
    using judge_failure::judge_failure;
    const char* kind() const noexcept override { return "JudgeUnavailable"; }
};

class verdict_rejected : public judge_failure {
public:
    using judge_failure::judge_failure;
    const char* kind() const noexcept override { return "VerdictRejected"; }
};

} // namespace tcmeval
