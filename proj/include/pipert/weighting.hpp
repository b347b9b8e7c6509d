#pragma once

#include <cmath>
#include <cstdint>
#include <charconv>
#include <string>
#include <variant>

#include "pipert/errors.hpp"
#include "pipert/index.hpp"

namespace pipert {

struct BM25 {
    double k1 = 1.2;
    double b = 0.75;

    friend bool operator==(const BM25&, const BM25&) = default;
};

/// Saturated tf times log2 idf; k1 and b are fixed at 1.2 and 0.75.
struct TFIDF {
    friend bool operator==(const TFIDF&, const TFIDF&) = default;
};

/// Dirichlet-smoothed query likelihood in its rank-equivalent summed form.
struct QLDirichlet {
    double mu = 2500.0;

    friend bool operator==(const QLDirichlet&, const QLDirichlet&) = default;
};

namespace detail {

inline std::string format_number(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

class WeightingModel {
  public:
    using Variant = std::variant<BM25, TFIDF, QLDirichlet>;

    WeightingModel() : m_model(BM25{}) {}
    WeightingModel(BM25 m) : m_model(m) { validate(); }         // NOLINT(google-explicit-constructor)
    WeightingModel(TFIDF m) : m_model(m) {}                     // NOLINT(google-explicit-constructor)
    WeightingModel(QLDirichlet m) : m_model(m) { validate(); }  // NOLINT(google-explicit-constructor)

    [[nodiscard]] const Variant& variant() const noexcept { return m_model; }
    [[nodiscard]] bool is_ql() const noexcept { return std::holds_alternative<QLDirichlet>(m_model); }

    /// Short name with non-default parameters, e.g. `BM25` or `BM25(k1=0.9,b=0.4)`.
    [[nodiscard]] std::string name() const
    {
        if (const auto* m = std::get_if<BM25>(&m_model)) {
            if (*m == BM25{}) {
                return "BM25";
            }
            return "BM25(k1=" + detail::format_number(m->k1) + ",b=" + detail::format_number(m->b) + ")";
        }
        if (std::holds_alternative<TFIDF>(m_model)) {
            return "TFIDF";
        }
        const auto& ql = std::get<QLDirichlet>(m_model);
        if (ql == QLDirichlet{}) {
            return "QL";
        }
        return "QL(mu=" + detail::format_number(ql.mu) + ")";
    }

    /// Fully parameterized key used for caching.
    [[nodiscard]] std::string key() const
    {
        if (const auto* m = std::get_if<BM25>(&m_model)) {
            return "BM25(k1=" + detail::format_number(m->k1) + ",b=" + detail::format_number(m->b) + ")";
        }
        if (std::holds_alternative<TFIDF>(m_model)) {
            return "TFIDF";
        }
        return "QL(mu=" + detail::format_number(std::get<QLDirichlet>(m_model).mu) + ")";
    }

    friend bool operator==(const WeightingModel&, const WeightingModel&) = default;

  private:
    void validate() const
    {
        if (const auto* m = std::get_if<BM25>(&m_model)) {
            if (!(m->k1 > 0.0) || !(m->b >= 0.0 && m->b <= 1.0)) {
                throw InvalidModel("BM25 requires k1 > 0 and 0 <= b <= 1");
            }
        } else if (const auto* q = std::get_if<QLDirichlet>(&m_model)) {
            if (!(q->mu > 0.0)) {
                throw InvalidModel("QL requires mu > 0");
            }
        }
    }

    Variant m_model;
};

/// Per-term scoring function with the term's collection statistics folded in.
///
/// Every retrieval path (exhaustive, MaxScore, rescoring, fat features) scores
/// through this class, so equal inputs give bit-identical contributions. The
/// contribution is `qweight * base(tf, doclen)`; upper bounds are taken over
/// `base` and scaled by the same multiplication.
class TermScorer {
  public:
    TermScorer(const WeightingModel& model, std::uint32_t df, std::uint64_t cf, const CollectionStats& stats,
               double qweight)
        : m_kind(model.variant().index()), m_qweight(qweight)
    {
        if (stats.num_docs == 0 || !(stats.avg_doclen > 0.0)) {
            throw DegenerateStats("collection has no documents or zero average document length");
        }
        auto n = static_cast<double>(stats.num_docs);
        auto dfd = static_cast<double>(df);
        m_avdl = stats.avg_doclen;
        std::visit(
            [&](const auto& m) {
                using M = std::decay_t<decltype(m)>;
                if constexpr (std::is_same_v<M, BM25>) {
                    m_k1 = m.k1;
                    m_b = m.b;
                    m_idf = std::log(1.0 + (n - dfd + 0.5) / (dfd + 0.5));
                } else if constexpr (std::is_same_v<M, TFIDF>) {
                    m_k1 = 1.2;
                    m_b = 0.75;
                    m_idf = std::log2(n / dfd);
                } else {
                    m_mu = m.mu;
                    m_background = m.mu * static_cast<double>(cf) / static_cast<double>(stats.total_tokens);
                }
            },
            model.variant());
    }

    [[nodiscard]] double qweight() const noexcept { return m_qweight; }

    /// Whether a document lacking the term still receives a (length-only) contribution.
    [[nodiscard]] bool scores_absent_terms() const noexcept { return m_kind == 2; }

    [[nodiscard]] double base(std::uint32_t tf, std::uint32_t doclen) const
    {
        auto dl = static_cast<double>(doclen);
        auto tfd = static_cast<double>(tf);
        switch (m_kind) {
        case 0:
            if (tf == 0) {
                return 0.0;
            }
            return m_idf * (tfd * (m_k1 + 1.0) / (tfd + m_k1 * (1.0 - m_b + m_b * dl / m_avdl)));
        case 1:
            if (tf == 0) {
                return 0.0;
            }
            return m_idf * (tfd / (tfd + m_k1 * (1.0 - m_b + m_b * dl / m_avdl)));
        default:
            return std::log(1.0 + tfd / m_background) + std::log(m_mu / (dl + m_mu));
        }
    }

    [[nodiscard]] double operator()(std::uint32_t tf, std::uint32_t doclen) const
    {
        return m_qweight * base(tf, doclen);
    }

  private:
    std::size_t m_kind;
    double m_qweight;
    double m_avdl = 1.0;
    double m_k1 = 0.0;
    double m_b = 0.0;
    double m_idf = 0.0;
    double m_mu = 0.0;
    double m_background = 1.0;
};

/// Score contribution of one query term to one document.
inline double wmodel_score(const WeightingModel& model, std::uint32_t tf, std::uint32_t df, std::uint64_t cf,
                           std::uint32_t doclen, const CollectionStats& stats, double qweight = 1.0)
{
    return TermScorer(model, df, cf, stats, qweight)(tf, doclen);
}

/// Exact maximum of a term's unweighted contribution over its postings, memoized
/// on the index. Query likelihood is clamped at zero so that the bound also
/// covers documents missing the term (whose contribution is negative).
inline double term_upper_bound(const Index& index, const WeightingModel& model, std::uint32_t termid)
{
    return index.cached_upper_bound(model.key(), termid, [&] {
        const auto& entry = index.lexicon()[termid];
        TermScorer scorer(model, entry.df, entry.cf, index.stats(), 1.0);
        double best = scorer.scores_absent_terms() ? 0.0 : -std::numeric_limits<double>::infinity();
        for (const auto& p : index.postings(termid)) {
            best = std::max(best, scorer.base(p.tf, index.doclen(p.docid)));
        }
        return best;
    });
}

}  // namespace pipert
