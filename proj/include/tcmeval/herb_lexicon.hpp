#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tcmeval/error.hpp"
#include "tcmeval/text.hpp"

namespace tcmeval {

struct HerbEntry {
    std::string raw_name;
    std::string canonical_name;
    std::string dose_text;

    bool operator==(const HerbEntry&) const = default;
};

// Ordered herb list; canonical names are unique.
struct Prescription {
    std::vector<HerbEntry> entries;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
    bool operator==(const Prescription&) const = default;
};

struct MatchResult {
    std::vector<std::string> matched;  // canonical names, label order
    std::size_t n_matched = 0;
    std::size_t n_label = 0;
    std::size_t n_generated = 0;
    std::optional<double> rate;  // empty when n_label == 0
};

// Markers for processing methods (honey-fried, dry-fried, wine-processed ...)
// that do not change the identity of a medicinal. Multi-character markers come
// first so the longest one is stripped.
inline const std::vector<std::string>& default_processing_prefixes() {
    static const std::vector<std::string> prefixes = {
        "蜜炙", "酒炙", "醋炙", "盐炙", "姜炙", "酒炒", "醋炒", "盐炒", "麸炒", "土炒",
        "姜制", "酒制", "醋制", "炒焦", "炙", "炒", "焦", "煅", "制", "酒", "醋", "盐", "蜜",
        "生", "熟", "净", "法",
        "honey-fried ", "dry-fried ", "stir-fried ", "processed ", "fried ", "raw ",
        "prepared ", "zhi ", "chao ", "jiao ", "sheng ", "shu ", "jiu ", "cu ", "duan "};
    return prefixes;
}

// Surface form -> canonical name. Immutable once built; every canonical name
// maps to itself.
class Lexicon {
public:
    Lexicon() : prefixes_(default_processing_prefixes()) { sort_prefixes(); }

    explicit Lexicon(std::vector<std::pair<std::string, std::string>> aliases,
                     std::vector<std::string> processing_prefixes = default_processing_prefixes())
        : prefixes_(std::move(processing_prefixes)) {
        sort_prefixes();
        build(aliases, "<memory>");
    }

    // UTF-8, one `alias<TAB>canonical` per line, `#` starts a comment line.
    static Lexicon parse(std::istream& in, const std::string& source = "<stream>") {
        std::vector<std::pair<std::string, std::string>> aliases;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line_no == 1 && text::starts_with(line, "\xEF\xBB\xBF")) line.erase(0, 3);
            const auto body = text::trim(line);
            if (body.empty() || body.front() == '#') continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) {
                throw lexicon_error(source + ":" + std::to_string(line_no) +
                                    ": expected `alias<TAB>canonical`");
            }
            const auto alias = text::trim(std::string_view(line).substr(0, tab));
            const auto canonical = text::trim(std::string_view(line).substr(tab + 1));
            if (alias.empty() || canonical.empty()) {
                throw lexicon_error(source + ":" + std::to_string(line_no) + ": empty column");
            }
            aliases.emplace_back(std::string(alias), std::string(canonical));
        }
        Lexicon lex;
        lex.build(aliases, source);
        return lex;
    }

    static Lexicon load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw io_error("cannot open lexicon file " + path.string());
        return parse(in, path.string());
    }

    // Exact folded match first, then with spaces removed so "Huang Qin"
    // finds "huangqin".
    std::optional<std::string> lookup(std::string_view surface) const {
        const auto key = text::fold(surface);
        if (const auto it = canonical_of_.find(key); it != canonical_of_.end()) return it->second;
        if (const auto it = compact_of_.find(compact(key)); it != compact_of_.end()) return it->second;
        return std::nullopt;
    }

    const std::vector<std::string>& processing_prefixes() const { return prefixes_; }
    std::size_t size() const { return canonical_of_.size(); }

private:
    void sort_prefixes() {
        std::stable_sort(prefixes_.begin(), prefixes_.end(),
                         [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
    }

    void build(const std::vector<std::pair<std::string, std::string>>& aliases,
               const std::string& source) {
        std::unordered_map<std::string, std::string> direct;
        for (const auto& [alias, canonical] : aliases) {
            const auto key = text::fold(alias);
            const auto [it, inserted] = direct.emplace(key, canonical);
            if (!inserted && text::fold(it->second) != text::fold(canonical)) {
                throw lexicon_error(source + ": alias '" + alias + "' maps to both '" +
                                    it->second + "' and '" + canonical + "'");
            }
        }
        // Resolve alias chains (a -> b, b -> c) so lookups are one hop.
        for (const auto& [key, target] : direct) {
            std::string current = target;
            std::unordered_set<std::string> seen{key};
            for (;;) {
                const auto folded = text::fold(current);
                const auto next = direct.find(folded);
                if (next == direct.end() || text::fold(next->second) == folded) break;
                if (!seen.insert(folded).second) {
                    throw lexicon_error(source + ": alias cycle through '" + current + "'");
                }
                current = next->second;
            }
            canonical_of_[key] = current;
        }
        std::vector<std::string> canonicals;
        for (const auto& [key, canonical] : canonical_of_) canonicals.push_back(canonical);
        for (const auto& c : canonicals) canonical_of_[text::fold(c)] = c;
        // A compact form shared by two different herbs is ambiguous and dropped.
        std::unordered_set<std::string> ambiguous;
        for (const auto& [key, canonical] : canonical_of_) {
            const auto [it, inserted] = compact_of_.emplace(compact(key), canonical);
            if (!inserted && it->second != canonical) ambiguous.insert(it->first);
        }
        for (const auto& k : ambiguous) compact_of_.erase(k);
    }

    static std::string compact(std::string_view folded) {
        std::string out;
        for (char c : folded) {
            if (c != ' ' && c != '-') out += c;
        }
        return out;
    }

    std::unordered_map<std::string, std::string> canonical_of_;
    std::unordered_map<std::string, std::string> compact_of_;
    std::vector<std::string> prefixes_;
};

// Canonical name of a herb: exact alias lookup first, then processing markers
// are stripped one at a time with a lookup after each. Unknown names come back
// trimmed, case-folded and stripped.
inline std::string normalize_herb(std::string_view raw, const Lexicon& lexicon) {
    const auto trimmed = text::trim(raw);
    if (trimmed.empty()) throw empty_name("herb name is blank");
    std::string key = text::fold(trimmed);
    if (auto hit = lexicon.lookup(key)) return *hit;
    bool stripped = true;
    while (stripped) {
        stripped = false;
        for (const auto& prefix : lexicon.processing_prefixes()) {
            if (key.size() <= prefix.size() || !text::starts_with(key, prefix)) continue;
            const auto rest = text::trim(std::string_view(key).substr(prefix.size()));
            if (rest.empty()) continue;
            key = std::string(rest);
            if (auto hit = lexicon.lookup(key)) return *hit;
            stripped = true;
            break;
        }
    }
    return key;
}

namespace detail {

inline std::vector<std::string> canonical_set(const Prescription& p, const Lexicon& lexicon) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& entry : p.entries) {
        const auto& source = entry.raw_name.empty() ? entry.canonical_name : entry.raw_name;
        if (text::is_blank(source)) continue;
        auto canonical = normalize_herb(source, lexicon);
        if (seen.insert(canonical).second) out.push_back(std::move(canonical));
    }
    return out;
}

} // namespace detail

// Herb overlap between a generated and a gold prescription. Dosage plays no
// part; names are compared after canonicalization with set semantics.
inline MatchResult match_prescriptions(const Prescription& generated, const Prescription& label,
                                       const Lexicon& lexicon) {
    const auto label_names = detail::canonical_set(label, lexicon);
    if (label_names.empty()) throw empty_label("label prescription has no herbs");
    const auto generated_names = detail::canonical_set(generated, lexicon);
    const std::unordered_set<std::string> generated_set(generated_names.begin(),
                                                        generated_names.end());
    MatchResult result;
    for (const auto& name : label_names) {
        if (generated_set.count(name)) result.matched.push_back(name);
    }
    result.n_matched = result.matched.size();
    result.n_label = label_names.size();
    result.n_generated = generated_names.size();
    result.rate = static_cast<double>(result.n_matched) / static_cast<double>(result.n_label);
    return result;
}

// Builds a prescription from bare names (no dose text).
inline Prescription make_prescription(const std::vector<std::string>& names,
                                      const Lexicon& lexicon) {
    Prescription p;
    std::unordered_set<std::string> seen;
    for (const auto& name : names) {
        auto canonical = normalize_herb(name, lexicon);
        if (!seen.insert(canonical).second) continue;
        p.entries.push_back({std::string(text::trim(name)), std::move(canonical), {}});
    }
    return p;
}

} // namespace tcmeval
