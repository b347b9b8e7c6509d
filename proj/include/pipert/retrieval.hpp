#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pipert/errors.hpp"
#include "pipert/frames.hpp"
#include "pipert/index.hpp"
#include "pipert/tokenizer.hpp"
#include "pipert/weighting.hpp"

namespace pipert {

/// Posting traversal counters, summed over every query a strategy processes.
struct PruningStats {
    std::uint64_t queries = 0;
    std::uint64_t postings_total = 0;
    std::uint64_t postings_evaluated = 0;
    std::uint64_t postings_skipped = 0;
    std::uint64_t docs_scored = 0;
    std::uint64_t docs_pruned = 0;

    PruningStats& operator+=(const PruningStats& o)
    {
        queries += o.queries;
        postings_total += o.postings_total;
        postings_evaluated += o.postings_evaluated;
        postings_skipped += o.postings_skipped;
        docs_scored += o.docs_scored;
        docs_pruned += o.docs_pruned;
        return *this;
    }
};

/// Weighted terms of a query in first-occurrence order; repeated terms have their weights summed.
inline TermWeights query_term_weights(const Query& query, const IndexOptions& options)
{
    TermWeights out;
    std::unordered_map<std::string, std::size_t> slot;
    auto add = [&](const std::string& term, double weight) {
        auto [it, inserted] = slot.emplace(term, out.size());
        if (inserted) {
            out.emplace_back(term, weight);
        } else {
            out[it->second].second += weight;
        }
    };
    if (query.terms) {
        for (const auto& [term, weight] : *query.terms) {
            add(term, weight);
        }
    } else {
        for (const auto& term : tokenize(query.text, options)) {
            add(term, 1.0);
        }
    }
    return out;
}

struct QueryTerm {
    std::string term;
    std::uint32_t termid;
    double weight;
};

/// Query terms present in the index with positive weight.
inline std::vector<QueryTerm> resolve_query(const Index& index, const Query& query)
{
    std::vector<QueryTerm> out;
    for (auto& [term, weight] : query_term_weights(query, index.options())) {
        if (!(weight > 0.0)) {
            continue;
        }
        if (auto id = index.term_id(term)) {
            out.push_back(QueryTerm{term, *id, weight});
        }
    }
    return out;
}

/// A retrieved document with the per-query-term frequencies seen while scoring
/// it (the fat posting). `tfs` is aligned with the resolved query terms.
struct Candidate {
    std::uint32_t docid;
    double score;
    std::vector<std::uint32_t> tfs;
};

enum class TopKStrategy { exhaustive, maxscore };

namespace detail {

class Cursor {
  public:
    explicit Cursor(std::span<const Posting> list) : m_list(list) {}

    [[nodiscard]] bool valid() const noexcept { return m_pos < m_list.size(); }
    [[nodiscard]] std::uint32_t docid() const noexcept
    {
        return valid() ? m_list[m_pos].docid : std::numeric_limits<std::uint32_t>::max();
    }
    [[nodiscard]] std::uint32_t tf() const noexcept { return m_list[m_pos].tf; }
    [[nodiscard]] std::size_t position() const noexcept { return m_pos; }
    [[nodiscard]] std::size_t size() const noexcept { return m_list.size(); }

    void next() noexcept { ++m_pos; }

    /// Gallops forward to the first posting with docid >= target.
    void next_geq(std::uint32_t target) noexcept
    {
        if (!valid() || m_list[m_pos].docid >= target) {
            return;
        }
        std::size_t step = 1;
        std::size_t lo = m_pos;
        std::size_t hi = m_pos + 1;
        while (hi < m_list.size() && m_list[hi].docid < target) {
            lo = hi;
            step *= 2;
            hi = lo + step;
        }
        hi = std::min(hi, m_list.size());
        auto it = std::lower_bound(m_list.begin() + static_cast<std::ptrdiff_t>(lo + 1),
                                   m_list.begin() + static_cast<std::ptrdiff_t>(hi), target,
                                   [](const Posting& p, std::uint32_t t) { return p.docid < t; });
        m_pos = static_cast<std::size_t>(it - m_list.begin());
    }

  private:
    std::span<const Posting> m_list;
    std::size_t m_pos = 0;
};

/// Bounded heap ordered by (score desc, docno asc); the front is the weakest entry.
class TopKHeap {
  public:
    TopKHeap(const Index& index, std::size_t k) : m_index(index), m_k(k) { m_heap.reserve(std::min<std::size_t>(k, 1U << 16)); }

    [[nodiscard]] bool full() const noexcept { return m_heap.size() >= m_k; }
    [[nodiscard]] double threshold() const noexcept
    {
        return full() ? m_heap.front().score : -std::numeric_limits<double>::infinity();
    }

    /// Conservative test used for pruning: may a document whose score is at most `bound` enter?
    [[nodiscard]] bool may_enter(double bound) const noexcept
    {
        if (!full()) {
            return true;
        }
        double t = threshold();
        return bound >= t - 1e-10 * std::max(1.0, std::abs(t));
    }

    [[nodiscard]] bool would_enter(double score, std::uint32_t docid) const
    {
        return !full() || better(score, docid, m_heap.front().score, m_heap.front().docid);
    }

    void push(Candidate c)
    {
        auto cmp = [this](const Candidate& a, const Candidate& b) { return better(a.score, a.docid, b.score, b.docid); };
        if (full()) {
            std::pop_heap(m_heap.begin(), m_heap.end(), cmp);
            m_heap.back() = std::move(c);
        } else {
            m_heap.push_back(std::move(c));
        }
        std::push_heap(m_heap.begin(), m_heap.end(), cmp);
    }

    [[nodiscard]] std::vector<Candidate> take_sorted()
    {
        std::sort(m_heap.begin(), m_heap.end(), [this](const Candidate& a, const Candidate& b) {
            return better(a.score, a.docid, b.score, b.docid);
        });
        return std::move(m_heap);
    }

  private:
    [[nodiscard]] bool better(double sa, std::uint32_t da, double sb, std::uint32_t db) const
    {
        if (sa != sb) {
            return sa > sb;
        }
        return m_index.docno(da) < m_index.docno(db);
    }

    const Index& m_index;
    std::size_t m_k;
    std::vector<Candidate> m_heap;
};

struct PreparedQuery {
    std::vector<QueryTerm> terms;
    std::vector<TermScorer> scorers;
    bool scores_absent = false;  // query likelihood adds a length term for missing query terms
};

inline PreparedQuery prepare(const Index& index, const Query& query, const WeightingModel& model)
{
    PreparedQuery pq;
    pq.terms = resolve_query(index, query);
    pq.scorers.reserve(pq.terms.size());
    for (const auto& t : pq.terms) {
        const auto& e = index.lexicon()[t.termid];
        pq.scorers.emplace_back(model, e.df, e.cf, index.stats(), t.weight);
    }
    pq.scores_absent = model.is_ql();
    return pq;
}

/// Sums contributions in query-term order. All strategies finish with this
/// so that their scores agree bit for bit.
inline double canonical_score(const PreparedQuery& pq, std::span<const std::uint32_t> tfs, std::uint32_t doclen)
{
    double score = 0.0;
    for (std::size_t i = 0; i < pq.scorers.size(); ++i) {
        if (tfs[i] > 0 || pq.scores_absent) {
            score += pq.scorers[i](tfs[i], doclen);
        }
    }
    return score;
}

inline std::vector<Candidate> exhaustive_daat(const Index& index, const PreparedQuery& pq, std::size_t k,
                                              bool keep_tfs, PruningStats& stats)
{
    std::vector<Cursor> cursors;
    cursors.reserve(pq.terms.size());
    for (const auto& t : pq.terms) {
        cursors.emplace_back(index.postings(t.termid));
        stats.postings_total += cursors.back().size();
    }
    TopKHeap heap(index, k);
    std::vector<std::uint32_t> tfs(cursors.size());
    for (;;) {
        std::uint32_t doc = std::numeric_limits<std::uint32_t>::max();
        for (const auto& c : cursors) {
            doc = std::min(doc, c.docid());
        }
        if (doc == std::numeric_limits<std::uint32_t>::max()) {
            break;
        }
        for (std::size_t i = 0; i < cursors.size(); ++i) {
            if (cursors[i].docid() == doc) {
                tfs[i] = cursors[i].tf();
                cursors[i].next();
                ++stats.postings_evaluated;
            } else {
                tfs[i] = 0;
            }
        }
        double score = canonical_score(pq, tfs, index.doclen(doc));
        ++stats.docs_scored;
        if (heap.would_enter(score, doc)) {
            heap.push(Candidate{doc, score, keep_tfs ? tfs : std::vector<std::uint32_t>{}});
        }
    }
    return heap.take_sorted();
}

/// Document-at-a-time MaxScore with exact per-term upper bounds. Terms are
/// split into essential lists (which drive candidate generation) and
/// non-essential ones (probed only while the document can still enter the
/// top k). Final scores come from canonical_score, so the output equals the
/// exhaustive traversal exactly.
inline std::vector<Candidate> maxscore_daat(const Index& index, const PreparedQuery& pq, const WeightingModel& model,
                                            std::size_t k, bool keep_tfs, PruningStats& stats)
{
    const std::size_t n = pq.terms.size();
    std::vector<Cursor> cursors;
    std::vector<double> upper(n);
    cursors.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        cursors.emplace_back(index.postings(pq.terms[i].termid));
        stats.postings_total += cursors.back().size();
        upper[i] = pq.scorers[i].qweight() * term_upper_bound(index, model, pq.terms[i].termid);
    }
    // order: terms by ascending upper bound; prefix[m] = sum of the m smallest bounds
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return upper[a] < upper[b]; });
    std::vector<double> prefix(n + 1, 0.0);
    for (std::size_t m = 0; m < n; ++m) {
        prefix[m + 1] = prefix[m] + upper[order[m]];
    }

    TopKHeap heap(index, k);
    std::size_t first_essential = 0;
    std::vector<std::uint32_t> tfs(n);
    std::vector<std::size_t> evaluated_before(n);

    while (first_essential < n) {
        std::uint32_t doc = std::numeric_limits<std::uint32_t>::max();
        for (std::size_t m = first_essential; m < n; ++m) {
            doc = std::min(doc, cursors[order[m]].docid());
        }
        if (doc == std::numeric_limits<std::uint32_t>::max()) {
            break;
        }
        auto doclen = index.doclen(doc);
        std::fill(tfs.begin(), tfs.end(), 0U);
        double partial = 0.0;
        for (std::size_t m = first_essential; m < n; ++m) {
            auto t = order[m];
            if (cursors[t].docid() == doc) {
                tfs[t] = cursors[t].tf();
                cursors[t].next();
                ++stats.postings_evaluated;
            }
            if (tfs[t] > 0 || pq.scores_absent) {
                partial += pq.scorers[t](tfs[t], doclen);
            }
        }
        bool pruned = false;
        for (std::size_t m = first_essential; m-- > 0;) {
            if (!heap.may_enter(partial + prefix[m + 1])) {
                pruned = true;
                break;
            }
            auto t = order[m];
            cursors[t].next_geq(doc);
            if (cursors[t].docid() == doc) {
                tfs[t] = cursors[t].tf();
                ++stats.postings_evaluated;
            }
            if (tfs[t] > 0 || pq.scores_absent) {
                partial += pq.scorers[t](tfs[t], doclen);
            }
        }
        if (pruned) {
            ++stats.docs_pruned;
            continue;
        }
        double score = canonical_score(pq, tfs, doclen);
        ++stats.docs_scored;
        if (heap.would_enter(score, doc)) {
            heap.push(Candidate{doc, score, keep_tfs ? tfs : std::vector<std::uint32_t>{}});
            while (first_essential < n && !heap.may_enter(prefix[first_essential + 1])) {
                ++first_essential;
            }
        }
    }
    return heap.take_sorted();
}

inline std::vector<Candidate> topk_candidates(const Index& index, const PreparedQuery& pq, const WeightingModel& model,
                                              std::size_t k, TopKStrategy strategy, bool keep_tfs,
                                              PruningStats* stats)
{
    PruningStats local;
    local.queries = 1;
    std::vector<Candidate> out;
    if (!pq.terms.empty() && k > 0) {
        out = strategy == TopKStrategy::maxscore ? maxscore_daat(index, pq, model, k, keep_tfs, local)
                                                 : exhaustive_daat(index, pq, k, keep_tfs, local);
    }
    local.postings_skipped = local.postings_total - local.postings_evaluated;
    if (stats != nullptr) {
        *stats += local;
    }
    return out;
}

inline void append_ranked(ResultFrame& frame, const std::string& qid, const Index& index,
                          const std::vector<Candidate>& candidates)
{
    std::uint32_t rank = 0;
    for (const auto& c : candidates) {
        frame.rows.push_back(ResultRow{qid, index.docno(c.docid), c.score, rank++, {}});
    }
}

inline void check_k(long long k)
{
    if (k < 1) {
        throw InvalidK("k must be at least 1, got " + std::to_string(k));
    }
}

}  // namespace detail

/// Exact top-k by document-at-a-time traversal of every query-term posting list.
inline ResultFrame exhaustive_topk(const Index& index, const Query& query, const WeightingModel& model, long long k,
                                   PruningStats* stats = nullptr)
{
    detail::check_k(k);
    auto pq = detail::prepare(index, query, model);
    ResultFrame frame;
    detail::append_ranked(frame, query.qid, index,
                          detail::topk_candidates(index, pq, model, static_cast<std::size_t>(k),
                                                  TopKStrategy::exhaustive, false, stats));
    return frame;
}

/// Rank-safe MaxScore top-k; output is identical to exhaustive_topk.
inline ResultFrame maxscore_topk(const Index& index, const Query& query, const WeightingModel& model, long long k,
                                 PruningStats* stats = nullptr)
{
    detail::check_k(k);
    auto pq = detail::prepare(index, query, model);
    ResultFrame frame;
    detail::append_ranked(frame, query.qid, index,
                          detail::topk_candidates(index, pq, model, static_cast<std::size_t>(k),
                                                  TopKStrategy::maxscore, false, stats));
    return frame;
}

namespace detail {

/// Term frequencies of each (sorted, unique) docid for every query term, read
/// by galloping through the posting lists.
inline std::vector<std::vector<std::uint32_t>> lookup_tfs(const Index& index, const std::vector<QueryTerm>& terms,
                                                          const std::vector<std::uint32_t>& sorted_docids)
{
    std::vector<std::vector<std::uint32_t>> tfs(sorted_docids.size(), std::vector<std::uint32_t>(terms.size(), 0));
    for (std::size_t t = 0; t < terms.size(); ++t) {
        Cursor cursor(index.postings(terms[t].termid));
        for (std::size_t d = 0; d < sorted_docids.size() && cursor.valid(); ++d) {
            cursor.next_geq(sorted_docids[d]);
            if (cursor.docid() == sorted_docids[d]) {
                tfs[d][t] = cursor.tf();
            }
        }
    }
    return tfs;
}

inline std::vector<std::uint32_t> docids_of(const Index& index, std::span<const ResultRow> rows)
{
    std::vector<std::uint32_t> ids;
    ids.reserve(rows.size());
    for (const auto& row : rows) {
        auto id = index.docid(row.docno);
        if (!id) {
            throw UnknownDocno("document '" + row.docno + "' is not in the index");
        }
        ids.push_back(*id);
    }
    return ids;
}

/// Scores every candidate row of one query under each model, one index pass per model.
inline std::vector<std::vector<double>> score_candidates(const Index& index, const Query& query,
                                                         const std::vector<WeightingModel>& models,
                                                         std::span<const ResultRow> rows)
{
    auto ids = docids_of(index, rows);
    std::vector<std::uint32_t> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    std::vector<std::vector<double>> scores(models.size(), std::vector<double>(rows.size(), 0.0));
    for (std::size_t m = 0; m < models.size(); ++m) {
        auto pq = prepare(index, query, models[m]);
        auto tfs = lookup_tfs(index, pq.terms, sorted);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            auto slot = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), ids[r]) - sorted.begin());
            scores[m][r] = canonical_score(pq, tfs[slot], index.doclen(ids[r]));
        }
    }
    return scores;
}

}  // namespace detail

/// Replaces the scores of one query's candidate rows with model scores and re-sorts.
/// Features are dropped: the output is a fresh ranking of the same keys.
inline ResultFrame rescore(const Index& index, const Query& query, const WeightingModel& model,
                           const ResultFrame& candidates)
{
    ResultFrame out;
    for (const auto& row : candidates.rows) {
        if (row.qid != query.qid) {
            throw ContractViolation("rescore: row (" + row.qid + ", " + row.docno + ") does not belong to query '"
                                    + query.qid + "'");
        }
    }
    auto scores = detail::score_candidates(index, query, {model}, candidates.rows);
    out.rows.reserve(candidates.rows.size());
    for (std::size_t r = 0; r < candidates.rows.size(); ++r) {
        out.rows.push_back(ResultRow{query.qid, candidates.rows[r].docno, scores[0][r], std::nullopt, {}});
    }
    return group_sort(std::move(out));
}

/// Top-k under `first_model` plus one feature per `feature_models` entry,
/// computed from the term frequencies captured during the single traversal.
inline ResultFrame feature_retrieve(const Index& index, const Query& query, const WeightingModel& first_model,
                                    long long k, const std::vector<WeightingModel>& feature_models,
                                    PruningStats* stats = nullptr, long long maxscore_threshold = 1000)
{
    detail::check_k(k);
    if (feature_models.empty()) {
        throw ContractViolation("feature_retrieve needs at least one feature model");
    }
    auto first = detail::prepare(index, query, first_model);
    auto strategy = k <= maxscore_threshold ? TopKStrategy::maxscore : TopKStrategy::exhaustive;
    auto candidates = detail::topk_candidates(index, first, first_model, static_cast<std::size_t>(k), strategy, true, stats);

    std::vector<detail::PreparedQuery> feature_queries;
    feature_queries.reserve(feature_models.size());
    for (const auto& m : feature_models) {
        feature_queries.push_back(detail::prepare(index, query, m));
    }

    ResultFrame frame;
    for (const auto& m : feature_models) {
        frame.feature_names.push_back(m.name());
    }
    frame.rows.reserve(candidates.size());
    std::uint32_t rank = 0;
    for (const auto& c : candidates) {
        ResultRow row{query.qid, index.docno(c.docid), c.score, rank++, {}};
        row.features.reserve(feature_models.size());
        auto doclen = index.doclen(c.docid);
        for (const auto& fq : feature_queries) {
            row.features.push_back(detail::canonical_score(fq, c.tfs, doclen));
        }
        frame.rows.push_back(std::move(row));
    }
    return frame;
}

struct RM3Params {
    int fb_docs = 3;
    int fb_terms = 10;
    double lambda = 0.6;

    friend bool operator==(const RM3Params&, const RM3Params&) = default;
};

/// RM3 query expansion: mixes the query's maximum-likelihood model with a
/// relevance model estimated from the top `fb_docs` results, whose weights
/// are the softmax of their first-pass scores. Keeps the original terms plus
/// the `fb_terms` most probable feedback terms; weights sum to one.
inline Query rm3_expand(const Index& index, const Query& query, const ResultFrame& results, const RM3Params& params = {})
{
    if (!index.has_direct()) {
        throw DirectIndexMissing("query expansion needs a direct index");
    }
    if (params.fb_docs < 1 || params.fb_terms < 0 || !(params.lambda >= 0.0 && params.lambda <= 1.0)) {
        throw ContractViolation("RM3 needs fb_docs >= 1, fb_terms >= 0 and lambda in [0, 1]");
    }
    ResultFrame own;
    for (const auto& row : results.rows) {
        if (row.qid == query.qid) {
            own.rows.push_back(row);
        }
    }
    if (own.rows.empty()) {
        throw EmptyFeedback("no feedback documents for query '" + query.qid + "'");
    }
    own = group_sort(std::move(own));
    auto n_fb = std::min<std::size_t>(own.rows.size(), static_cast<std::size_t>(params.fb_docs));

    std::vector<double> doc_weight(n_fb);
    double max_score = own.rows[0].score.value();
    double norm = 0.0;
    for (std::size_t i = 0; i < n_fb; ++i) {
        doc_weight[i] = std::exp(own.rows[i].score.value() - max_score);
        norm += doc_weight[i];
    }

    std::unordered_map<std::uint32_t, double> feedback;
    for (std::size_t i = 0; i < n_fb; ++i) {
        auto id = index.docid(own.rows[i].docno);
        if (!id) {
            throw UnknownDocno("document '" + own.rows[i].docno + "' is not in the index");
        }
        auto dl = static_cast<double>(index.doclen(*id));
        if (dl == 0.0) {
            continue;
        }
        double w = doc_weight[i] / norm;
        for (const auto& p : index.doc_vector(*id)) {
            feedback[p.termid] += (static_cast<double>(p.tf) / dl) * w;
        }
    }

    auto original = query_term_weights(query, index.options());
    double original_mass = 0.0;
    for (const auto& [term, weight] : original) {
        original_mass += weight;
    }

    std::vector<std::pair<std::string, double>> ranked;  // feedback terms by p_fb desc, term asc
    ranked.reserve(feedback.size());
    for (const auto& [termid, p] : feedback) {
        ranked.emplace_back(index.term(termid), p);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    if (ranked.size() > static_cast<std::size_t>(params.fb_terms)) {
        ranked.resize(static_cast<std::size_t>(params.fb_terms));
    }

    auto p_fb = [&](const std::string& term) {
        auto id = index.term_id(term);
        if (!id) {
            return 0.0;
        }
        auto it = feedback.find(*id);
        return it == feedback.end() ? 0.0 : it->second;
    };

    TermWeights mixed;
    std::unordered_map<std::string, bool> seen;
    for (const auto& [term, weight] : original) {
        double p_orig = original_mass > 0.0 ? weight / original_mass : 0.0;
        mixed.emplace_back(term, (1.0 - params.lambda) * p_orig + params.lambda * p_fb(term));
        seen[term] = true;
    }
    for (const auto& [term, p] : ranked) {
        if (!seen.count(term)) {
            mixed.emplace_back(term, params.lambda * p);
        }
    }
    std::erase_if(mixed, [](const auto& tw) { return !(tw.second > 0.0); });
    double total = 0.0;
    for (const auto& [term, w] : mixed) {
        total += w;
    }
    for (auto& [term, w] : mixed) {
        w /= total;
    }

    Query out = query;
    out.terms = std::move(mixed);
    return out;
}

}  // namespace pipert
