#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pipert/errors.hpp"

namespace pipert {

/// A query-document score, or the undefined marker produced by set operators.
///
/// Reading the value of an undefined score raises UndefinedScore, so that a
/// set union fed straight into arithmetic fails loudly instead of producing NaN.
class Score {
  public:
    Score() = default;
    Score(double value) : m_value(value), m_defined(true) {}  // NOLINT(google-explicit-constructor)

    [[nodiscard]] static Score undefined() { return Score{}; }

    [[nodiscard]] bool defined() const noexcept { return m_defined; }
    [[nodiscard]] double value() const
    {
        if (!m_defined) {
            throw UndefinedScore("score is undefined (set operator output must be re-scored)");
        }
        return m_value;
    }

    friend bool operator==(const Score& lhs, const Score& rhs)
    {
        return lhs.m_defined == rhs.m_defined && (!lhs.m_defined || lhs.m_value == rhs.m_value);
    }

  private:
    double m_value = 0.0;
    bool m_defined = false;
};

using TermWeights = std::vector<std::pair<std::string, double>>;

struct Query {
    std::string qid;
    std::string text;
    /// Weighted terms in index form; present once a query has been rewritten or expanded.
    std::optional<TermWeights> terms;

    friend bool operator==(const Query&, const Query&) = default;
};

struct QueryFrame {
    std::vector<Query> queries;

    [[nodiscard]] std::size_t size() const noexcept { return queries.size(); }
    [[nodiscard]] bool empty() const noexcept { return queries.empty(); }

    void validate() const
    {
        std::unordered_set<std::string> seen;
        for (const auto& q : queries) {
            if (q.qid.empty()) {
                throw ContractViolation("query with empty qid");
            }
            if (!seen.insert(q.qid).second) {
                throw ContractViolation("duplicate qid '" + q.qid + "' in query frame");
            }
            if (q.text.empty() && (!q.terms || q.terms->empty())) {
                throw ContractViolation("query '" + q.qid + "' has neither text nor terms");
            }
            if (q.terms) {
                for (const auto& [term, weight] : *q.terms) {
                    if (!std::isfinite(weight) || weight < 0.0) {
                        throw ContractViolation("query '" + q.qid + "' term '" + term
                                                + "' has invalid weight");
                    }
                }
            }
        }
    }

    friend bool operator==(const QueryFrame&, const QueryFrame&) = default;
};

struct ResultRow {
    std::string qid;
    std::string docno;
    Score score;
    std::optional<std::uint32_t> rank;
    std::vector<double> features;

    friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct ResultFrame {
    std::vector<ResultRow> rows;
    std::vector<std::string> feature_names;

    [[nodiscard]] std::size_t size() const noexcept { return rows.size(); }
    [[nodiscard]] bool empty() const noexcept { return rows.empty(); }

    /// Checks primary-key uniqueness, feature vector lengths and score finiteness.
    void validate() const
    {
        std::unordered_set<std::string> keys;
        keys.reserve(rows.size());
        for (const auto& row : rows) {
            std::string key = row.qid;
            key.push_back('\0');
            key += row.docno;
            if (!keys.insert(std::move(key)).second) {
                throw ContractViolation("duplicate result key (" + row.qid + ", " + row.docno + ")");
            }
            if (!row.features.empty() || !feature_names.empty()) {
                if (row.features.size() != feature_names.size()) {
                    throw ContractViolation("row (" + row.qid + ", " + row.docno + ") has "
                                            + std::to_string(row.features.size())
                                            + " features, frame declares "
                                            + std::to_string(feature_names.size()));
                }
            }
            if (row.score.defined() && !std::isfinite(row.score.value())) {
                throw ContractViolation("row (" + row.qid + ", " + row.docno
                                        + ") has a non-finite score");
            }
        }
    }

    friend bool operator==(const ResultFrame&, const ResultFrame&) = default;
};

/// Queries and optional results flowing along a pipeline edge.
struct Frames {
    QueryFrame queries;
    std::optional<ResultFrame> results;
};

struct Qrel {
    std::string qid;
    std::string docno;
    int label = 0;
};

/// Relevance assessments keyed by (qid, docno).
class QrelSet {
  public:
    using Judgments = std::map<std::string, int>;

    QrelSet() = default;
    explicit QrelSet(const std::vector<Qrel>& qrels)
    {
        for (const auto& q : qrels) {
            add(q);
        }
    }

    void add(const Qrel& q)
    {
        if (q.label < 0) {
            throw ContractViolation("negative relevance label for (" + q.qid + ", " + q.docno + ")");
        }
        auto [it, inserted] = m_by_query[q.qid].emplace(q.docno, q.label);
        if (!inserted) {
            throw ContractViolation("duplicate qrel (" + q.qid + ", " + q.docno + ")");
        }
    }

    /// Judgments for one query, or nullptr when the query has none.
    [[nodiscard]] const Judgments* for_query(const std::string& qid) const
    {
        auto it = m_by_query.find(qid);
        return it == m_by_query.end() ? nullptr : &it->second;
    }

    [[nodiscard]] int label(const std::string& qid, const std::string& docno) const
    {
        const auto* j = for_query(qid);
        if (j == nullptr) {
            return 0;
        }
        auto it = j->find(docno);
        return it == j->end() ? 0 : it->second;
    }

    [[nodiscard]] const std::map<std::string, Judgments>& queries() const noexcept { return m_by_query; }
    [[nodiscard]] bool empty() const noexcept { return m_by_query.empty(); }

  private:
    std::map<std::string, Judgments> m_by_query;
};

// ---------------------------------------------------------------------------
// Relational primitives

namespace detail {

struct KeyHash {
    std::size_t operator()(const std::pair<std::string_view, std::string_view>& k) const noexcept
    {
        std::size_t h = std::hash<std::string_view>{}(k.first);
        return h ^ (std::hash<std::string_view>{}(k.second) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    }
};

using KeyIndex = std::unordered_map<std::pair<std::string_view, std::string_view>, std::size_t, KeyHash>;

inline KeyIndex key_index(const ResultFrame& r)
{
    KeyIndex index;
    index.reserve(r.rows.size());
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        index.emplace(std::pair<std::string_view, std::string_view>{r.rows[i].qid, r.rows[i].docno}, i);
    }
    return index;
}

/// Row indices grouped by qid, groups in order of first appearance.
inline std::vector<std::vector<std::size_t>> groups_by_qid(const ResultFrame& r)
{
    std::unordered_map<std::string_view, std::size_t> slot;
    std::vector<std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        auto [it, inserted] = slot.emplace(r.rows[i].qid, groups.size());
        if (inserted) {
            groups.emplace_back();
        }
        groups[it->second].push_back(i);
    }
    return groups;
}

}  // namespace detail

/// Index pair of a row present in both operands of a natural join.
struct JoinedRow {
    std::size_t left;
    std::size_t right;
};

/// Inner join on (qid, docno); output follows the left operand's row order.
inline std::vector<JoinedRow> natural_join(const ResultFrame& r1, const ResultFrame& r2)
{
    auto index = detail::key_index(r2);
    std::vector<JoinedRow> out;
    for (std::size_t i = 0; i < r1.rows.size(); ++i) {
        auto it = index.find({r1.rows[i].qid, r1.rows[i].docno});
        if (it != index.end()) {
            out.push_back({i, it->second});
        }
    }
    return out;
}

enum class SortOrder { ascending, descending };

/// Sort attribute: the score column, or a feature column.
struct SortKey {
    std::optional<std::size_t> feature;

    [[nodiscard]] static SortKey score() { return {}; }
    [[nodiscard]] static SortKey feature_at(std::size_t i) { return SortKey{i}; }
};

/// Sorts rows within each qid group, breaking ties by docno ascending, and
/// reassigns ranks 0..n-1. Groups keep their order of first appearance.
inline ResultFrame group_sort(ResultFrame r, SortKey key = SortKey::score(),
                              SortOrder order = SortOrder::descending)
{
    auto value_of = [&](const ResultRow& row) -> double {
        if (key.feature) {
            if (*key.feature >= row.features.size()) {
                throw FeatureLengthMismatch("sort key feature " + std::to_string(*key.feature)
                                            + " out of range for (" + row.qid + ", " + row.docno + ")");
            }
            return row.features[*key.feature];
        }
        return row.score.value();
    };
    struct Keyed {
        double value;
        std::size_t row;
    };
    auto groups = detail::groups_by_qid(r);
    std::vector<ResultRow> sorted;
    sorted.reserve(r.rows.size());
    for (const auto& group : groups) {
        std::vector<Keyed> keyed;
        keyed.reserve(group.size());
        for (auto i : group) {
            try {
                keyed.push_back({value_of(r.rows[i]), i});
            } catch (UndefinedScore&) {
                throw UndefinedScore("cannot sort (" + r.rows[i].qid + ", " + r.rows[i].docno
                                     + "): score is undefined");
            }
        }
        std::sort(keyed.begin(), keyed.end(), [&](const Keyed& a, const Keyed& b) {
            if (a.value != b.value) {
                return order == SortOrder::descending ? a.value > b.value : a.value < b.value;
            }
            return r.rows[a.row].docno < r.rows[b.row].docno;
        });
        std::uint32_t rank = 0;
        for (const auto& k : keyed) {
            sorted.push_back(std::move(r.rows[k.row]));
            sorted.back().rank = rank++;
        }
    }
    r.rows = std::move(sorted);
    return r;
}

/// Keeps the k highest-scoring rows of each qid group (sorting first).
inline ResultFrame select_topk(ResultFrame r, long long k)
{
    if (k <= 0) {
        throw InvalidK("rank cutoff k must be positive, got " + std::to_string(k));
    }
    r = group_sort(std::move(r));
    std::vector<ResultRow> kept;
    kept.reserve(r.rows.size());
    for (auto& row : r.rows) {
        if (*row.rank < static_cast<unsigned long long>(k)) {
            kept.push_back(std::move(row));
        }
    }
    r.rows = std::move(kept);
    return r;
}

/// Replaces one attribute of every row with fn(row). Keys and order unchanged.
template <typename Fn>
ResultFrame map_attr(ResultFrame r, Fn&& fn, SortKey target = SortKey::score())
{
    for (auto& row : r.rows) {
        double value = 0.0;
        try {
            value = fn(static_cast<const ResultRow&>(row));
        } catch (Error& e) {
            e.prepend_stage("row(" + row.qid + "," + row.docno + ")");
            throw;
        }
        if (target.feature) {
            if (*target.feature >= row.features.size()) {
                throw FeatureLengthMismatch("target feature out of range for (" + row.qid + ", "
                                            + row.docno + ")");
            }
            row.features[*target.feature] = value;
        } else {
            row.score = value;
        }
    }
    return r;
}

enum class Aggregate { min, max };

/// One aggregate score per qid, in order of first appearance.
inline std::vector<std::pair<std::string, double>> group_aggregate(const ResultFrame& r, Aggregate agg)
{
    std::vector<std::pair<std::string, double>> out;
    for (const auto& group : detail::groups_by_qid(r)) {
        double acc = r.rows[group.front()].score.value();
        for (auto i : group) {
            double s = r.rows[i].score.value();
            acc = agg == Aggregate::min ? std::min(acc, s) : std::max(acc, s);
        }
        out.emplace_back(r.rows[group.front()].qid, acc);
    }
    return out;
}

}  // namespace pipert
