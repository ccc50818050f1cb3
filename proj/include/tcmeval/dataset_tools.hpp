#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tcmeval/error.hpp"
#include "tcmeval/text.hpp"

namespace tcmeval {

// ---------------------------------------------------------------------------
// Tokenizers

struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual std::vector<TokenSpan> tokenize(std::string_view text) const = 0;
    virtual std::size_t count(std::string_view text) const { return tokenize(text).size(); }
};

// One token per CJK character or CJK punctuation mark; any other run of
// non-space characters is one token.
class CharClassTokenizer : public Tokenizer {
public:
    std::vector<TokenSpan> tokenize(std::string_view s) const override {
        std::vector<TokenSpan> out;
        std::size_t pos = 0;
        std::optional<std::size_t> run;
        auto close_run = [&](std::size_t at) {
            if (run) out.push_back({*run, at});
            run.reset();
        };
        while (pos < s.size()) {
            const auto cp = text::decode(s, pos);
            if (text::is_space(cp.value)) {
                close_run(pos);
            } else if (text::is_cjk(cp.value)) {
                close_run(pos);
                out.push_back({pos, pos + cp.length});
            } else if (!run) {
                run = pos;
            }
            pos += cp.length;
        }
        close_run(s.size());
        return out;
    }
};

// ---------------------------------------------------------------------------
// Chunking

struct Chunk {
    std::size_t index = 0;
    std::string text;  // source.substr(begin, end - begin)
    std::size_t token_count = 0;
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t core_begin = 0;  // where the non-overlapping part starts
    bool operator==(const Chunk&) const = default;
};

struct ChunkResult {
    std::vector<Chunk> chunks;
    std::vector<std::string> warnings;
};

struct ChunkOptions {
    std::size_t max_tokens = 512;
    std::size_t overlap = 0;  // tokens repeated from the previous chunk
};

inline bool is_sentence_final(char32_t cp) {
    return cp == U'。' || cp == U'！' || cp == U'？' || cp == U'；';
}

// Byte offsets just past each sentence-final mark, plus the end of text.
// ASCII marks count only when followed by whitespace or the end of text, so
// decimals like "3.5g" never split.
inline std::vector<std::size_t> sentence_boundaries(std::string_view s) {
    std::vector<std::size_t> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        const auto cp = text::decode(s, pos);
        const auto next = pos + cp.length;
        bool boundary = is_sentence_final(cp.value);
        if (!boundary && (cp.value == '.' || cp.value == '!' || cp.value == '?' || cp.value == ';')) {
            boundary = next == s.size() || text::is_space(text::decode(s, next).value);
        }
        if (boundary) out.push_back(next);
        pos = next;
    }
    if (out.empty() || out.back() != s.size()) out.push_back(s.size());
    return out;
}

// Greedy packing: each chunk runs to the last sentence boundary that keeps it
// within max_tokens. A sentence longer than the budget is cut right before
// token max_tokens. Without overlap the chunks partition the text exactly.
inline ChunkResult chunk_text(std::string_view source, const ChunkOptions& options = {},
                              const Tokenizer& tokenizer = CharClassTokenizer{}) {
    if (text::is_blank(source)) throw empty_text("cannot chunk empty text");
    if (options.max_tokens < 1) throw precondition_violation("max_tokens must be >= 1");
    if (options.overlap >= options.max_tokens) {
        throw precondition_violation("overlap must be smaller than max_tokens");
    }
    const auto boundaries = sentence_boundaries(source);
    ChunkResult result;
    std::size_t core = 0;
    std::size_t window = 0;  // start including overlap
    auto count = [&](std::size_t from, std::size_t to) { return tokenizer.count(source.substr(from, to - from)); };

    while (core < source.size()) {
        auto first = std::upper_bound(boundaries.begin(), boundaries.end(), core);
        // Binary search for the last boundary that fits; token counts grow
        // with the end offset.
        auto lo = first;
        auto hi = boundaries.end();
        while (lo < hi) {
            auto mid = lo + (hi - lo) / 2;
            if (count(window, *mid) <= options.max_tokens) lo = mid + 1;
            else hi = mid;
        }
        std::size_t end = 0;
        if (lo != first) {
            end = *(lo - 1);
        } else {
            const auto tokens = tokenizer.tokenize(source.substr(window, *first - window));
            end = window + tokens[options.max_tokens].begin;
            result.warnings.push_back("sentence at byte " + std::to_string(core) + " exceeds " +
                                      std::to_string(options.max_tokens) + " tokens; hard split at byte " +
                                      std::to_string(end));
        }
        Chunk c;
        c.index = result.chunks.size();
        c.begin = window;
        c.core_begin = core;
        c.end = end;
        c.text = std::string(source.substr(window, end - window));
        c.token_count = tokenizer.count(c.text);
        result.chunks.push_back(std::move(c));

        core = end;
        window = end;
        if (options.overlap > 0 && core < source.size()) {
            const auto& prev = result.chunks.back();
            const auto tokens = tokenizer.tokenize(prev.text);
            if (tokens.size() > options.overlap) {
                window = prev.begin + tokens[tokens.size() - options.overlap].begin;
            } else {
                window = prev.begin;
            }
            if (window < prev.core_begin) window = prev.core_begin;
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Retrieval

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) {
        throw dimension_mismatch("vectors have dimensions " + std::to_string(a.size()) + " and " +
                                 std::to_string(b.size()));
    }
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0 || nb == 0) return 0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Indices of the k most similar chunks, best first; ties go to the lower index.
inline std::vector<std::size_t> select_top_k(const std::vector<double>& query,
                                             const std::vector<std::vector<double>>& chunks,
                                             std::size_t k = 3) {
    if (k < 1) throw precondition_violation("k must be >= 1");
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(chunks.size());
    for (std::size_t i = 0; i < chunks.size(); ++i) scored.emplace_back(cosine_similarity(query, chunks[i]), i);
    const auto n = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                      [](const auto& x, const auto& y) {
                          return x.first != y.first ? x.first > y.first : x.second < y.second;
                      });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(scored[i].second);
    return out;
}

inline std::string assemble_rag_input(std::string_view case_text, const std::vector<std::string>& chunks) {
    std::string out(case_text);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        out += "\n【Knowledge Base " + std::to_string(i + 1) + "】";
        out += chunks[i];
    }
    return out;
}

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) = 0;
};

// Offline embedding: hashed character unigrams and bigrams (FNV-1a buckets).
class HashedNgramEmbedding : public EmbeddingProvider {
public:
    explicit HashedNgramEmbedding(std::size_t dimension = 512) : dimension_(dimension) {
        if (dimension_ == 0) throw precondition_violation("embedding dimension must be >= 1");
    }

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
        std::vector<std::vector<double>> out;
        for (const auto& t : texts) out.push_back(embed_one(t));
        return out;
    }

    std::vector<double> embed_one(std::string_view s) const {
        std::vector<double> v(dimension_, 0.0);
        std::vector<std::string_view> units;
        for (std::size_t pos = 0; pos < s.size();) {
            const auto cp = text::decode(s, pos);
            if (!text::is_space(cp.value)) units.push_back(s.substr(pos, cp.length));
            pos += cp.length;
        }
        for (std::size_t i = 0; i < units.size(); ++i) {
            v[bucket(units[i], {})] += 1.0;
            if (i + 1 < units.size()) v[bucket(units[i], units[i + 1])] += 1.0;
        }
        return v;
    }

private:
    std::size_t bucket(std::string_view a, std::string_view b) const {
        std::uint64_t h = 1469598103934665603ull;
        auto mix = [&](std::string_view s) {
            for (unsigned char c : s) {
                h ^= c;
                h *= 1099511628211ull;
            }
        };
        mix(a);
        h ^= 0xFF;
        h *= 1099511628211ull;
        mix(b);
        return static_cast<std::size_t>(h % dimension_);
    }

    std::size_t dimension_;
};

// Semantic similarity in [0, 1] between a generated answer and the reference.
class SimilarityProvider {
public:
    virtual ~SimilarityProvider() = default;
    virtual double similarity(const std::string& a, const std::string& b) = 0;
};

class EmbeddingSimilarity : public SimilarityProvider {
public:
    explicit EmbeddingSimilarity(EmbeddingProvider& embeddings) : embeddings_(embeddings) {}
    double similarity(const std::string& a, const std::string& b) override {
        const auto v = embeddings_.embed({a, b});
        return std::clamp(cosine_similarity(v.at(0), v.at(1)), 0.0, 1.0);
    }

private:
    EmbeddingProvider& embeddings_;
};

// ---------------------------------------------------------------------------
// Thresholds, compared in integer millionths so decimal boundaries are exact

inline constexpr double kDecimalScale = 1e6;

inline long long to_micro(double x) { return std::llround(x * kDecimalScale); }

enum class KtoLabel { True, False, Discard };

inline std::string to_string(KtoLabel l) {
    switch (l) {
    case KtoLabel::True: return "true";
    case KtoLabel::False: return "false";
    case KtoLabel::Discard: return "discard";
    }
    return "?";
}

struct KtoThresholds {
    double true_above = 0.90;
    double false_below = 0.60;
};

inline KtoLabel kto_label(double similarity, const KtoThresholds& t = {}) {
    if (!(similarity >= 0.0 && similarity <= 1.0)) {
        throw range_error("similarity must be within [0, 1], got " + std::to_string(similarity));
    }
    const auto s = to_micro(similarity);
    if (s > to_micro(t.true_above)) return KtoLabel::True;
    if (s < to_micro(t.false_below)) return KtoLabel::False;
    return KtoLabel::Discard;
}

enum class Provenance { Original, ModelGenerated };

struct KtoSample {
    std::string instruction;
    std::string input;
    std::string output;
    bool label = true;
    Provenance provenance = Provenance::Original;
    std::optional<double> similarity;
    bool operator==(const KtoSample&) const = default;
};

inline nlohmann::ordered_json to_json(const KtoSample& s) {
    nlohmann::ordered_json j;
    j["instruction"] = s.instruction;
    j["input"] = s.input;
    j["output"] = s.output;
    j["label"] = s.label;
    j["provenance"] = s.provenance == Provenance::Original ? "original" : "model-generated";
    if (s.similarity) j["similarity"] = *s.similarity;
    return j;
}

// Original answers are positive samples; model answers are labeled by their
// similarity to the original, or dropped in the unlabeled band.
inline std::optional<KtoSample> make_kto_sample(std::string instruction, std::string input, std::string output,
                                                std::optional<double> similarity,
                                                const KtoThresholds& t = {}) {
    KtoSample s{std::move(instruction), std::move(input), std::move(output), true, Provenance::Original,
                std::nullopt};
    if (!similarity) return s;
    s.provenance = Provenance::ModelGenerated;
    s.similarity = similarity;
    const auto label = kto_label(*similarity, t);
    if (label == KtoLabel::Discard) return std::nullopt;
    s.label = label == KtoLabel::True;
    return s;
}

struct ScoredResponse {
    std::string sample_id;
    std::string response;
    double judge_score = 0;
    bool operator==(const ScoredResponse&) const = default;
};

inline ScoredResponse scored_response_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("judge_score") || !j.at("judge_score").is_number()) {
        throw parse_error("scored response needs a numeric judge_score");
    }
    ScoredResponse r{j.value("sample_id", ""), j.value("response", ""), j.at("judge_score").get<double>()};
    if (!(r.judge_score >= 0 && r.judge_score <= 10)) {
        throw range_error("judge_score must be within [0, 10]");
    }
    return r;
}

inline nlohmann::ordered_json to_json(const ScoredResponse& r) {
    return {{"sample_id", r.sample_id}, {"response", r.response}, {"judge_score", r.judge_score}};
}

// Keeps responses scoring strictly above the threshold, in input order.
inline std::vector<ScoredResponse> rejection_filter(const std::vector<ScoredResponse>& responses,
                                                    double threshold = 8.5) {
    const auto t = to_micro(threshold);
    std::vector<ScoredResponse> kept;
    for (const auto& r : responses) {
        if (to_micro(r.judge_score) > t) kept.push_back(r);
    }
    return kept;
}

} // namespace tcmeval
