#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcmeval/error.hpp"
#include "tcmeval/herb_lexicon.hpp"
#include "tcmeval/text.hpp"

namespace tcmeval {

enum class SectionKind {
    EtiologyPathogenesis,
    SyndromeDifferentiation,
    TreatmentPrinciple,
    TcmPrescription,
    PrescriptionExplanation,
    DistinguishedTheoryApplication,
    HerbModification,
    MedicalAdvice,
};

inline constexpr std::array<SectionKind, 8> kAllSections = {
    SectionKind::EtiologyPathogenesis,     SectionKind::SyndromeDifferentiation,
    SectionKind::TreatmentPrinciple,       SectionKind::TcmPrescription,
    SectionKind::PrescriptionExplanation,  SectionKind::DistinguishedTheoryApplication,
    SectionKind::HerbModification,         SectionKind::MedicalAdvice,
};

// The five items a judge scores; the remaining three template sections are
// generated but not scored.
inline constexpr std::array<SectionKind, 5> kScoredSections = {
    SectionKind::EtiologyPathogenesis, SectionKind::SyndromeDifferentiation,
    SectionKind::TreatmentPrinciple,   SectionKind::TcmPrescription,
    SectionKind::DistinguishedTheoryApplication,
};

inline std::string_view canonical_header(SectionKind kind) {
    switch (kind) {
    case SectionKind::EtiologyPathogenesis: return "Etiology and Pathogenesis Analysis (in TCM)";
    case SectionKind::SyndromeDifferentiation: return "Syndrome Differentiation";
    case SectionKind::TreatmentPrinciple: return "Treatment Principle";
    case SectionKind::TcmPrescription: return "TCM Prescription";
    case SectionKind::PrescriptionExplanation: return "Prescription Explanation";
    case SectionKind::DistinguishedTheoryApplication:
        return "Application of Distinguished or Specialized Differentiation and Treatment theory";
    case SectionKind::HerbModification: return "Modification of Herbs Based on Symptom Changes";
    case SectionKind::MedicalAdvice: return "Medical Advice and Precautions";
    }
    return {};
}

// Stable identifier used as the JSON key.
inline std::string_view section_key(SectionKind kind) {
    switch (kind) {
    case SectionKind::EtiologyPathogenesis: return "etiology_pathogenesis";
    case SectionKind::SyndromeDifferentiation: return "syndrome_differentiation";
    case SectionKind::TreatmentPrinciple: return "treatment_principle";
    case SectionKind::TcmPrescription: return "tcm_prescription";
    case SectionKind::PrescriptionExplanation: return "prescription_explanation";
    case SectionKind::DistinguishedTheoryApplication: return "distinguished_theory_application";
    case SectionKind::HerbModification: return "herb_modification";
    case SectionKind::MedicalAdvice: return "medical_advice";
    }
    return {};
}

inline std::optional<SectionKind> section_from_key(std::string_view key) {
    for (auto kind : kAllSections) {
        if (section_key(kind) == key) return kind;
    }
    return std::nullopt;
}

// Canonical header strings plus aliases, matched after stripping numbering,
// markdown emphasis and bracket decoration.
class HeaderTable {
public:
    HeaderTable() {
        for (auto kind : kAllSections) add_alias(kind, canonical_header(kind));
    }

    static const HeaderTable& defaults() {
        static const HeaderTable table = [] {
            HeaderTable t;
            const std::vector<std::pair<SectionKind, std::vector<std::string_view>>> aliases = {
                {SectionKind::EtiologyPathogenesis,
                 {"Etiology and Pathogenesis Analysis", "Etiology and Pathogenesis",
                  "Analysis of Etiology and Pathogenesis", "病因病机分析", "病因病机",
                  "中医病因病机分析"}},
                {SectionKind::SyndromeDifferentiation,
                 {"Pattern Differentiation", "辨证", "辨证分析", "证候诊断", "证型"}},
                {SectionKind::TreatmentPrinciple,
                 {"Treatment Principles", "治则", "治法", "治则治法", "治疗原则"}},
                {SectionKind::TcmPrescription,
                 {"Prescription", "处方", "方药", "中药处方", "方剂"}},
                {SectionKind::PrescriptionExplanation,
                 {"Formula Explanation", "方解", "处方解释", "方药解析"}},
                {SectionKind::DistinguishedTheoryApplication,
                 {"Application of Distinguished Theory", "Distinguished Theory Application",
                  "Application of Distinguished or Specialized Differentiation and Treatment Theory",
                  "名医学术思想应用", "学术思想应用", "特色辨治理论应用"}},
                {SectionKind::HerbModification,
                 {"Herb Modification", "Modification of Herbs", "随症加减", "加减"}},
                {SectionKind::MedicalAdvice,
                 {"Medical Advice", "Precautions", "医嘱", "医嘱及注意事项", "注意事项"}},
            };
            for (const auto& [kind, names] : aliases) {
                for (auto name : names) t.add_alias(kind, name);
            }
            return t;
        }();
        return table;
    }

    void add_alias(SectionKind kind, std::string_view alias) {
        by_name_[text::fold(alias)] = kind;
    }

    std::optional<SectionKind> find(std::string_view candidate) const {
        const auto it = by_name_.find(text::fold(candidate));
        if (it == by_name_.end()) return std::nullopt;
        return it->second;
    }

private:
    std::unordered_map<std::string, SectionKind> by_name_;
};

struct StructuredResponse {
    std::string reasoning;
    std::map<SectionKind, std::string> sections;
    std::string raw;

    bool has(SectionKind kind) const { return sections.count(kind) != 0; }
    std::string_view section(SectionKind kind) const {
        const auto it = sections.find(kind);
        return it == sections.end() ? std::string_view{} : std::string_view(it->second);
    }
    bool operator==(const StructuredResponse&) const = default;
};

namespace detail {

inline std::string remove_all(std::string s, std::string_view token) {
    for (auto pos = s.find(token); pos != std::string::npos; pos = s.find(token, pos)) {
        s.erase(pos, token.size());
    }
    return s;
}

inline std::string_view strip_prefix_any(std::string_view s,
                                         std::initializer_list<std::string_view> prefixes) {
    for (auto p : prefixes) {
        if (text::starts_with(s, p)) return s.substr(p.size());
    }
    return s;
}

inline std::string_view strip_suffix_any(std::string_view s,
                                         std::initializer_list<std::string_view> suffixes) {
    for (auto p : suffixes) {
        if (s.size() >= p.size() && s.substr(s.size() - p.size()) == p) {
            return s.substr(0, s.size() - p.size());
        }
    }
    return s;
}

// Drops "1.", "2)", "(3)", "（4）", "一、", "Step 5:" style enumeration.
inline std::string_view strip_numbering(std::string_view s) {
    s = text::trim(s);
    std::size_t i = 0;
    bool open_paren = false;
    if (text::starts_with(s, "(")) { i = 1; open_paren = true; }
    else if (text::starts_with(s, "（")) { i = 3; open_paren = true; }
    std::size_t digits_begin = i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    if (i > digits_begin) {
        auto rest = s.substr(i);
        if (open_paren) {
            if (text::starts_with(rest, ")")) return text::trim(rest.substr(1));
            if (text::starts_with(rest, "）")) return text::trim(rest.substr(3));
            return s;
        }
        for (std::string_view sep : {".", ")", "、", "）", "．"}) {
            if (text::starts_with(rest, sep)) return text::trim(rest.substr(sep.size()));
        }
        return s;
    }
    static constexpr std::array<std::string_view, 10> numerals = {
        "一", "二", "三", "四", "五", "六", "七", "八", "九", "十"};
    for (auto n : numerals) {
        if (text::starts_with(s, n)) {
            auto rest = s.substr(n.size());
            for (std::string_view sep : {"、", ".", "．"}) {
                if (text::starts_with(rest, sep)) return text::trim(rest.substr(sep.size()));
            }
        }
    }
    return s;
}

struct header_match {
    SectionKind kind;
    std::string inline_content;
};

inline std::optional<SectionKind> match_header_name(std::string_view candidate,
                                                    const HeaderTable& table) {
    auto name = text::trim(candidate);
    name = text::trim(strip_numbering(name));
    if (text::starts_with(name, "【") && name.size() >= 6 &&
        name.substr(name.size() - 3) == "】") {
        name = text::trim(name.substr(3, name.size() - 6));
    } else if (text::starts_with(name, "[") && !name.empty() && name.back() == ']') {
        name = text::trim(name.substr(1, name.size() - 2));
    }
    name = text::trim(strip_numbering(name));
    if (name.empty()) return std::nullopt;
    return table.find(name);
}

inline std::optional<header_match> match_header(std::string_view line, const HeaderTable& table) {
    std::string cleaned = remove_all(remove_all(std::string(line), "**"), "__");
    std::string_view view = text::trim(cleaned);
    while (text::starts_with(view, "#")) view.remove_prefix(1);
    view = text::trim(view);
    view = text::trim(strip_prefix_any(view, {"- ", "* ", "• "}));
    if (view.empty()) return std::nullopt;

    // "Header", "Header:" or "Header: inline content".
    std::size_t colon = std::string_view::npos;
    std::size_t colon_len = 0;
    if (const auto a = view.find(':'); a != std::string_view::npos) { colon = a; colon_len = 1; }
    if (const auto b = view.find("："); b != std::string_view::npos && b < colon) {
        colon = b;
        colon_len = 3;
    }
    if (auto kind = match_header_name(view, table)) return header_match{*kind, {}};
    if (colon == std::string_view::npos) return std::nullopt;
    auto kind = match_header_name(view.substr(0, colon), table);
    if (!kind) return std::nullopt;
    auto inline_content = text::trim(view.substr(colon + colon_len));
    // A line whose payload is itself a header is content, not a header; this
    // keeps parse(serialize(r)) stable.
    if (!inline_content.empty() && match_header_name(inline_content, table)) return std::nullopt;
    {
        auto payload = strip_suffix_any(inline_content, {":", "："});
        if (!payload.empty() && match_header_name(payload, table)) return std::nullopt;
    }
    return header_match{*kind, std::string(inline_content)};
}

} // namespace detail

// Splits a templated answer into its optional reasoning block and the eight
// sections. Parsing is total: unknown text is kept only in `raw`.
inline StructuredResponse parse_structured_response(std::string_view input,
                                                    const HeaderTable& table = HeaderTable::defaults()) {
    StructuredResponse out;
    out.raw = std::string(input);

    std::string_view rest = input;
    constexpr std::string_view think_open = "<think>";
    constexpr std::string_view think_close = "</think>";
    if (const auto open = input.find(think_open); open != std::string_view::npos) {
        const auto body_begin = open + think_open.size();
        const auto close = input.find(think_close, body_begin);
        if (close == std::string_view::npos) {
            // Truncated generation: everything after the opener is reasoning.
            out.reasoning = std::string(input.substr(body_begin));
            return out;
        }
        out.reasoning = std::string(input.substr(body_begin, close - body_begin));
        rest = input.substr(close + think_close.size());
    }

    constexpr std::string_view output_open = "<output>";
    constexpr std::string_view output_close = "</output>";
    if (const auto open = rest.find(output_open); open != std::string_view::npos) {
        rest = rest.substr(open + output_open.size());
        if (const auto close = rest.find(output_close); close != std::string_view::npos) {
            rest = rest.substr(0, close);
        }
    }

    std::optional<SectionKind> current;
    std::string buffer;
    auto flush = [&] {
        if (!current) return;
        const auto body = std::string(text::trim(buffer));
        auto [it, inserted] = out.sections.emplace(*current, body);
        if (!inserted && !body.empty()) {
            it->second = it->second.empty() ? body : it->second + "\n" + body;
        }
        buffer.clear();
    };
    for (auto line : text::lines(rest)) {
        if (auto header = detail::match_header(line, table)) {
            flush();
            current = header->kind;
            buffer = header->inline_content;
            continue;
        }
        if (current) {
            buffer += '\n';
            buffer.append(line);
        }
    }
    flush();
    return out;
}

// Canonical text form; parse_structured_response(serialize(r)) reproduces the
// reasoning and sections of r.
inline std::string serialize_response(const StructuredResponse& r) {
    std::string out = "<think>";
    out += r.reasoning;
    out += "</think>\n<output>\n";
    for (auto kind : kAllSections) {
        const auto it = r.sections.find(kind);
        if (it == r.sections.end()) continue;
        out += canonical_header(kind);
        out += '\n';
        if (!it->second.empty()) {
            out += it->second;
            out += '\n';
        }
        out += '\n';
    }
    out += "</output>";
    return out;
}

inline nlohmann::json to_json(const StructuredResponse& r) {
    nlohmann::json sections = nlohmann::json::object();
    for (const auto& [kind, body] : r.sections) sections[std::string(section_key(kind))] = body;
    return {{"raw", r.raw}, {"reasoning", r.reasoning}, {"sections", sections}};
}

inline StructuredResponse structured_response_from_json(const nlohmann::json& j) {
    StructuredResponse r;
    r.raw = j.value("raw", "");
    r.reasoning = j.value("reasoning", "");
    if (j.contains("sections")) {
        for (const auto& [key, value] : j.at("sections").items()) {
            const auto kind = section_from_key(key);
            if (!kind) throw parse_error("unknown section key '" + key + "'");
            r.sections[*kind] = value.get<std::string>();
        }
    }
    return r;
}

// Compact JSON with sorted keys; invalid UTF-8 is replaced rather than thrown.
inline std::string canonical_dump(const nlohmann::json& j) {
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

// ---------------------------------------------------------------------------
// Answered-item detection

inline const std::vector<std::string>& default_invalid_phrases() {
    static const std::vector<std::string> phrases = {"unknown", "无法回答", "不知道",
                                                     "cannot answer"};
    return phrases;
}

namespace detail {

inline std::string deny_key(std::string_view s) {
    auto v = text::trim(s);
    bool changed = true;
    while (changed && !v.empty()) {
        changed = false;
        for (std::string_view p : {".", "。", "!", "！", "\"", "'", "“", "”", "…"}) {
            if (v.size() >= p.size() && v.substr(v.size() - p.size()) == p) {
                v = text::trim(v.substr(0, v.size() - p.size()));
                changed = true;
            }
            if (text::starts_with(v, p)) {
                v = text::trim(v.substr(p.size()));
                changed = true;
            }
        }
    }
    return text::fold(v);
}

} // namespace detail

inline bool is_answered(const StructuredResponse& resp, SectionKind kind,
                        const std::vector<std::string>& invalid_phrases = default_invalid_phrases()) {
    const auto it = resp.sections.find(kind);
    if (it == resp.sections.end() || text::is_blank(it->second)) return false;
    const auto key = detail::deny_key(it->second);
    if (key.empty()) return false;
    for (const auto& phrase : invalid_phrases) {
        if (key == detail::deny_key(phrase)) return false;
    }
    return true;
}

// Number of the required (scored) items that carry a valid answer.
inline int count_answered_items(const StructuredResponse& resp, std::span<const SectionKind> required,
                                const std::vector<std::string>& invalid_phrases = default_invalid_phrases()) {
    if (required.size() != 5) {
        throw precondition_violation("count_answered_items requires exactly 5 kinds, got " +
                                     std::to_string(required.size()));
    }
    std::unordered_set<int> distinct;
    for (auto kind : required) distinct.insert(static_cast<int>(kind));
    if (distinct.size() != 5) throw precondition_violation("required kinds must be distinct");
    int answered = 0;
    for (auto kind : required) {
        if (is_answered(resp, kind, invalid_phrases)) ++answered;
    }
    return answered;
}

inline int count_answered_items(const StructuredResponse& resp) {
    return count_answered_items(resp, kScoredSections);
}

inline std::vector<SectionKind> missing_items(const StructuredResponse& resp) {
    std::vector<SectionKind> out;
    for (auto kind : kScoredSections) {
        if (!is_answered(resp, kind)) out.push_back(kind);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prescription extraction

struct PrescriptionExtraction {
    Prescription prescription;
    std::vector<std::string> warnings;
};

namespace detail {

inline const std::vector<std::string_view>& dose_units() {
    // Longest first so "slices" wins over "slice" and "mg" over "g".
    static const std::vector<std::string_view> units = [] {
        std::vector<std::string_view> u = {
            "grams", "gram", "slices", "slice", "pieces", "piece", "pcs", "pc", "mg", "kg",
            "ml", "g", "克", "毫升", "片", "枚", "个", "只", "条", "粒", "钱", "两", "分", "包",
            "袋", "丸", "克(先煎)"};
        std::stable_sort(u.begin(), u.end(),
                         [](std::string_view a, std::string_view b) { return a.size() > b.size(); });
        return u;
    }();
    return units;
}

inline std::size_t skip_number(std::string_view s, std::size_t i) {
    const auto start = i;
    while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    if (i == start) return start;
    if (i + 1 < s.size() && s[i] == '.' && s[i + 1] >= '0' && s[i + 1] <= '9') {
        ++i;
        while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
    }
    return i;
}

inline std::size_t skip_spaces(std::string_view s, std::size_t i) {
    while (i < s.size()) {
        const auto cp = text::decode(s, i);
        if (!text::is_space(cp.value)) break;
        i += cp.length;
    }
    return i;
}

// True when `tail` is number [range] unit [parenthetical note].
inline bool is_dose(std::string_view tail) {
    std::size_t i = skip_number(tail, 0);
    if (i == 0) return false;
    i = skip_spaces(tail, i);
    for (std::string_view sep : {"-", "~", "～", "–"}) {
        if (text::starts_with(tail.substr(i), sep)) {
            const auto after = skip_spaces(tail, i + sep.size());
            const auto end = skip_number(tail, after);
            if (end == after) return false;
            i = skip_spaces(tail, end);
            break;
        }
    }
    const auto rest = tail.substr(i);
    std::string lowered;
    for (char c : rest) lowered += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    for (auto unit : dose_units()) {
        if (!text::starts_with(lowered, unit)) continue;
        auto after = text::trim(std::string_view(rest).substr(unit.size()));
        if (after.empty()) return true;
        if ((text::starts_with(after, "(") && after.back() == ')') ||
            (text::starts_with(after, "（") && after.size() >= 3 &&
             after.substr(after.size() - 3) == "）")) {
            return true;
        }
    }
    return false;
}

inline std::string_view strip_trailing_note(std::string_view name) {
    name = text::trim(name);
    for (;;) {
        if (!name.empty() && name.back() == ')') {
            const auto open = name.rfind('(');
            if (open == std::string_view::npos || open == 0) break;
            name = text::trim(name.substr(0, open));
        } else if (name.size() >= 3 && name.substr(name.size() - 3) == "）") {
            const auto open = name.rfind("（");
            if (open == std::string_view::npos || open == 0) break;
            name = text::trim(name.substr(0, open));
        } else {
            break;
        }
    }
    return name;
}

inline bool has_name_characters(std::string_view s) {
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto cp = text::decode(s, pos);
        const auto c = cp.value;
        if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
            (c >= 0x3400 && c <= 0x9FFF) || (c >= 0x20000 && c <= 0x2FA1F)) {
            return true;
        }
        pos += cp.length;
    }
    return false;
}

inline std::vector<std::string_view> split_herb_list(std::string_view s) {
    static constexpr std::array<std::string_view, 7> delimiters = {"、", "，", ",", "\n",
                                                                   "；", ";", "。"};
    std::vector<std::string_view> out;
    std::size_t begin = 0;
    std::size_t i = 0;
    while (i < s.size()) {
        bool split = false;
        for (auto d : delimiters) {
            if (s.substr(i, d.size()) == d) {
                out.push_back(s.substr(begin, i - begin));
                i += d.size();
                begin = i;
                split = true;
                break;
            }
        }
        if (!split) i += text::decode(s, i).length;
    }
    out.push_back(s.substr(begin));
    return out;
}

// "黄芩10g 黄连10g" and "Huang Qin 10g Gui Zhi 9g": a space ends an entry
// once the words so far end in a dose. A bracketed note stays with its entry.
inline std::vector<std::string_view> split_after_doses(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t begin = 0;
    std::size_t pos = 0;
    auto ends_with_dose = [&](std::string_view piece) {
        for (std::size_t i = 0; i < piece.size(); ++i) {
            if (piece[i] < '0' || piece[i] > '9') continue;
            if (i > 0 && ((piece[i - 1] >= '0' && piece[i - 1] <= '9') || piece[i - 1] == '.')) continue;
            if (is_dose(piece.substr(i))) return true;
        }
        return false;
    };
    while (pos < s.size()) {
        const auto cp = text::decode(s, pos);
        if (text::is_space(cp.value) && pos > begin) {
            const auto piece = text::trim(s.substr(begin, pos - begin));
            std::size_t next = pos;
            while (next < s.size() && text::is_space(text::decode(s, next).value)) next += text::decode(s, next).length;
            const auto rest = s.substr(next);
            const bool note = text::starts_with(rest, "(") || text::starts_with(rest, "（");
            if (!piece.empty() && !note && ends_with_dose(piece)) {
                out.push_back(piece);
                begin = next;
                pos = next;
                continue;
            }
        }
        pos += cp.length;
    }
    out.push_back(s.substr(begin));
    return out;
}

} // namespace detail

// Herb list of a prescription section. Fragments are split on list
// delimiters; a trailing number+unit is the dose, the rest the name.
inline PrescriptionExtraction extract_prescription(std::string_view section_text,
                                                   const Lexicon& lexicon) {
    PrescriptionExtraction out;
    std::unordered_set<std::string> seen;
    std::vector<std::string_view> fragments;
    for (auto part : detail::split_herb_list(section_text)) {
        for (auto f : detail::split_after_doses(text::trim(part))) fragments.push_back(f);
    }
    for (auto fragment : fragments) {
        auto piece = text::trim(fragment);
        if (piece.empty()) continue;
        const auto original = piece;
        // "组成：黄芩10g" / "Composition: Huang Qin 10g"
        for (std::string_view colon : {"：", ":"}) {
            if (const auto at = piece.rfind(colon); at != std::string_view::npos) {
                piece = text::trim(piece.substr(at + colon.size()));
            }
        }
        piece = text::trim(detail::strip_prefix_any(piece, {"- ", "* ", "• ", "·"}));
        piece = detail::strip_numbering(piece);

        std::string_view name = piece;
        std::string_view dose;
        for (std::size_t i = 0; i < piece.size(); ++i) {
            const char c = piece[i];
            if (c < '0' || c > '9') continue;
            if (i > 0 && ((piece[i - 1] >= '0' && piece[i - 1] <= '9') || piece[i - 1] == '.')) {
                continue;
            }
            if (detail::is_dose(piece.substr(i))) {
                name = piece.substr(0, i);
                dose = text::trim(piece.substr(i));
                break;
            }
        }
        name = detail::strip_trailing_note(name);
        if (!detail::has_name_characters(name)) {
            out.warnings.push_back("skipped fragment without a herb name: '" +
                                   std::string(original) + "'");
            continue;
        }
        auto canonical = normalize_herb(name, lexicon);
        if (!seen.insert(canonical).second) {
            out.warnings.push_back("duplicate herb '" + std::string(name) + "' collapsed into '" +
                                   canonical + "'");
            continue;
        }
        out.prescription.entries.push_back(
            {std::string(name), std::move(canonical), std::string(dose)});
    }
    return out;
}

} // namespace tcmeval
