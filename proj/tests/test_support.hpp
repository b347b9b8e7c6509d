#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pipert/pipert.hpp"

namespace testing_support {

using namespace pipert;

/// Small hand-checkable collection used across suites.
inline std::vector<CorpusDocument> tiny_corpus()
{
    return {
        {"d1", "The quick brown fox jumps over the lazy dog"},
        {"d2", "A quick movement of the enemy will jeopardize six gunboats"},
        {"d3", "The fox and the hound are friends; the fox runs quickly"},
        {"d4", "Lazy afternoons with a good book and a cup of tea"},
        {"d5", "Foxes are quick and clever animals that hunt at night"},
        {"d6", "Dogs and foxes are both canines"},
    };
}

inline IndexRef tiny_index(IndexOptions options = {})
{
    return IndexRef{"ix", std::shared_ptr<const Index>(build_index(tiny_corpus(), options))};
}

inline QueryFrame queries(std::initializer_list<std::pair<const char*, const char*>> items)
{
    QueryFrame q;
    for (const auto& [qid, text] : items) {
        q.queries.push_back(Query{qid, text, std::nullopt});
    }
    return q;
}

/// Zipf-distributed synthetic collection; term `tN` has rank N (t0 most frequent).
struct ZipfCorpus {
    std::shared_ptr<const Index> index;
    std::size_t vocabulary = 0;
};

inline ZipfCorpus zipf_corpus(std::size_t docs, std::size_t vocabulary, std::size_t min_len, std::size_t max_len,
                              std::uint64_t seed, double exponent = 1.0, bool direct = false)
{
    std::mt19937_64 rng(seed);
    std::vector<double> weights(vocabulary);
    for (std::size_t r = 0; r < vocabulary; ++r) {
        weights[r] = 1.0 / std::pow(static_cast<double>(r + 1), exponent);
    }
    std::discrete_distribution<std::size_t> term(weights.begin(), weights.end());
    std::uniform_int_distribution<std::size_t> length(min_len, max_len);
    IndexOptions options;
    options.stem = false;
    options.stopwords = {};
    options.build_direct = direct;
    IndexBuilder builder(options);
    std::vector<std::string> names(vocabulary);
    for (std::size_t r = 0; r < vocabulary; ++r) {
        names[r] = "t" + std::to_string(r);
    }
    std::vector<std::string> terms;
    char docno[32];
    for (std::size_t d = 0; d < docs; ++d) {
        terms.clear();
        auto len = length(rng);
        for (std::size_t i = 0; i < len; ++i) {
            terms.push_back(names[term(rng)]);
        }
        std::snprintf(docno, sizeof(docno), "doc%07zu", d);
        builder.add_terms(docno, terms);
    }
    return ZipfCorpus{std::shared_ptr<const Index>(builder.build()), vocabulary};
}

/// Random natural-language-ish corpus over a small vocabulary (words survive tokenization).
inline std::vector<CorpusDocument> random_corpus(std::size_t docs, std::uint64_t seed, std::size_t vocabulary = 300)
{
    static const char* syllables[] = {"ka", "lo", "mi", "ne", "ru", "sa", "to", "vi", "ze", "po", "qu", "de"};
    std::mt19937_64 rng(seed);
    std::vector<std::string> words;
    std::set<std::string> seen;
    while (words.size() < vocabulary) {
        std::string w;
        auto parts = 2 + rng() % 3;
        for (std::size_t i = 0; i < parts; ++i) {
            w += syllables[rng() % 12];
        }
        if (seen.insert(w).second) {
            words.push_back(w);
        }
    }
    std::vector<double> weights(vocabulary);
    for (std::size_t r = 0; r < vocabulary; ++r) {
        weights[r] = 1.0 / static_cast<double>(r + 1);
    }
    std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
    std::vector<CorpusDocument> out;
    for (std::size_t d = 0; d < docs; ++d) {
        std::string text;
        auto len = 5 + rng() % 40;
        for (std::size_t i = 0; i < len; ++i) {
            if (i) {
                text += ' ';
            }
            text += words[pick(rng)];
        }
        out.push_back({"D" + std::to_string(1000 + d), text});
    }
    return out;
}

/// Word list that random_corpus draws from (same seed, same vocabulary).
inline std::vector<std::string> corpus_words(const std::vector<CorpusDocument>& docs)
{
    std::map<std::string, int> counts;
    for (const auto& d : docs) {
        for (const auto& t : tokenize(d.text, IndexOptions{false, {}, false})) {
            ++counts[t];
        }
    }
    std::vector<std::string> out;
    for (const auto& [w, c] : counts) {
        out.push_back(w);
    }
    return out;
}

/// Row-level comparison helpers for frames that should be identical.
inline bool same_keys_and_ranks(const ResultFrame& a, const ResultFrame& b)
{
    if (a.rows.size() != b.rows.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        if (a.rows[i].qid != b.rows[i].qid || a.rows[i].docno != b.rows[i].docno || a.rows[i].rank != b.rows[i].rank) {
            return false;
        }
    }
    return true;
}

inline double max_score_delta(const ResultFrame& a, const ResultFrame& b)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < std::min(a.rows.size(), b.rows.size()); ++i) {
        const auto& x = a.rows[i].score;
        const auto& y = b.rows[i].score;
        if (x.defined() != y.defined()) {
            return INFINITY;
        }
        if (x.defined()) {
            worst = std::max(worst, std::abs(x.value() - y.value()));
        }
        if (a.rows[i].features.size() != b.rows[i].features.size()) {
            return INFINITY;
        }
        for (std::size_t f = 0; f < a.rows[i].features.size(); ++f) {
            worst = std::max(worst, std::abs(a.rows[i].features[f] - b.rows[i].features[f]));
        }
    }
    return worst;
}

/// A transformer that ignores its input and emits a fixed frame.
inline TransformerPtr constant(std::string name, ResultFrame frame)
{
    return make_generic(std::move(name), [frame](const Frames& in) { return Frames{in.queries, frame}; });
}

inline ResultFrame frame_of(std::initializer_list<std::tuple<const char*, const char*, double>> rows)
{
    ResultFrame r;
    for (const auto& [q, d, s] : rows) {
        r.rows.push_back(ResultRow{q, d, s, std::nullopt, {}});
    }
    return r;
}

/// Random executable pipelines over one index. Every generated tree yields
/// defined scores; `printable` restricts to shapes the DSL can express.
class PipelineGenerator {
  public:
    PipelineGenerator(IndexRef index, std::uint64_t seed, bool printable = false)
        : m_index(std::move(index)), m_rng(seed), m_printable(printable)
    {
    }

    NodePtr ranker(int depth)
    {
        if (depth <= 0 || pick(4) == 0) {
            return retrieve(pick_k());
        }
        switch (pick(10)) {
        case 0: return rank_cutoff(ranker(depth - 1), std::vector<long long>{3, 5, 10, 25}[pick(4)]);
        case 1: return scalar_product(alpha(), ranker(depth - 1));
        case 2: return linear_combine(ranker(depth - 1), ranker(depth - 1), !m_printable && pick(3) == 0);
        case 3: return concatenate(ranker(depth - 1), ranker(depth - 1));
        case 4: {
            auto set = pick(2) ? set_union(ranker(depth - 1), ranker(depth - 1))
                               : set_intersect(ranker(depth - 1), ranker(depth - 1));
            return then(set, retrieve(1000));
        }
        case 5: return then(ranker(depth - 1), retrieve(1000));
        case 6: return features(depth);
        case 7: {
            RM3Params p;
            p.fb_docs = static_cast<int>(1 + pick(5));
            p.fb_terms = static_cast<int>(pick(8));
            p.lambda = std::vector<double>{0.0, 0.3, 0.5, 1.0}[pick(4)];
            return then(then(ranker(depth - 1), leaf(make_expand(m_index, p))), retrieve(pick_k()));
        }
        case 8: return rank_cutoff(retrieve(1000), std::vector<long long>{1, 10, 100, 1000}[pick(4)]);
        default: return then(leaf(make_rewrite()), ranker(depth - 1));
        }
    }

    /// `retrieve >> (retrieve ** retrieve ...)`, optionally reranked, the shape feature fusion targets.
    NodePtr features(int depth)
    {
        std::vector<WeightingModel> pool = models();
        std::shuffle(pool.begin(), pool.end(), m_rng);
        std::size_t n = 2 + pick(2);
        NodePtr fu = retrieve_model(pool[0], 1000);
        for (std::size_t i = 1; i < n; ++i) {
            fu = feature_union(fu, retrieve_model(pool[i], 1000));
        }
        NodePtr first = depth > 1 && pick(3) == 0 ? ranker(depth - 1) : retrieve(pick_k());
        NodePtr out = then(first, fu);
        if (!m_printable && pick(2) == 0) {
            auto rr = make_rerank_linear();
            std::vector<double> w;
            for (std::size_t i = 0; i < n; ++i) {
                w.push_back(std::vector<double>{-1.0, 0.25, 0.5, 2.0}[pick(4)]);
            }
            rr->set_weights(w);
            out = then(out, leaf(rr));
        }
        return out;
    }

    QueryFrame queries(std::size_t count, const std::vector<std::string>& words)
    {
        QueryFrame q;
        for (std::size_t i = 0; i < count; ++i) {
            std::string text;
            auto len = 1 + pick(3);
            for (std::size_t j = 0; j < len; ++j) {
                text += (j ? " " : "") + words[pick(std::min<std::size_t>(words.size(), 120))];
            }
            q.queries.push_back(Query{"Q" + std::to_string(i), text, std::nullopt});
        }
        return q;
    }

    std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(m_rng); }

  private:
    static std::vector<WeightingModel> models()
    {
        return {BM25{}, TFIDF{}, QLDirichlet{}, BM25{0.9, 0.4}, QLDirichlet{1000.0}};
    }

    NodePtr retrieve_model(const WeightingModel& m, long long k) { return leaf(make_retrieve(m_index, m, k)); }
    NodePtr retrieve(long long k) { return retrieve_model(models()[pick(5)], k); }
    long long pick_k() { return std::vector<long long>{5, 20, 50, 1000}[pick(4)]; }
    double alpha() { return std::vector<double>{0.5, 2.0, -1.0, 1.0, 0.25}[pick(5)]; }

    IndexRef m_index;
    std::mt19937_64 m_rng;
    bool m_printable;
};

}  // namespace testing_support
