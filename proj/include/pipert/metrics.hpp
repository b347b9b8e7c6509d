#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pipert/errors.hpp"
#include "pipert/frames.hpp"

namespace pipert {

enum class MetricKind { map, ndcg, ndcg_cut, precision, recip_rank };

/// A parsed metric name: `map`, `ndcg`, `ndcg_cut_K`, `P_K` or `recip_rank`.
struct Metric {
    MetricKind kind = MetricKind::map;
    std::size_t cutoff = 0;
    std::string name;

    [[nodiscard]] static Metric parse(const std::string& name)
    {
        auto suffix_number = [&](std::string_view prefix) -> std::optional<std::size_t> {
            if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) {
                return std::nullopt;
            }
            std::size_t value = 0;
            for (char c : std::string_view(name).substr(prefix.size())) {
                if (c < '0' || c > '9') {
                    return std::nullopt;
                }
                value = value * 10 + static_cast<std::size_t>(c - '0');
            }
            if (value == 0) {
                return std::nullopt;
            }
            return value;
        };
        if (name == "map") {
            return {MetricKind::map, 0, name};
        }
        if (name == "ndcg") {
            return {MetricKind::ndcg, 0, name};
        }
        if (name == "recip_rank") {
            return {MetricKind::recip_rank, 0, name};
        }
        if (auto k = suffix_number("ndcg_cut_")) {
            return {MetricKind::ndcg_cut, *k, name};
        }
        if (auto k = suffix_number("P_")) {
            return {MetricKind::precision, *k, name};
        }
        throw UnknownMetric("unknown metric '" + name + "'");
    }
};

namespace detail {

inline double average_precision(const std::vector<std::string>& ranking, const QrelSet::Judgments& qrels)
{
    std::size_t relevant = 0;
    for (const auto& [docno, label] : qrels) {
        relevant += label > 0 ? 1 : 0;
    }
    if (relevant == 0) {
        return 0.0;
    }
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < ranking.size(); ++i) {
        auto it = qrels.find(ranking[i]);
        if (it != qrels.end() && it->second > 0) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
    }
    return sum / static_cast<double>(relevant);
}

inline double ndcg(const std::vector<std::string>& ranking, const QrelSet::Judgments& qrels, std::size_t depth)
{
    auto discount = [](std::size_t rank) { return 1.0 / std::log2(static_cast<double>(rank) + 2.0); };
    double dcg = 0.0;
    for (std::size_t i = 0; i < std::min(depth, ranking.size()); ++i) {
        auto it = qrels.find(ranking[i]);
        if (it != qrels.end() && it->second > 0) {
            dcg += static_cast<double>(it->second) * discount(i);
        }
    }
    std::vector<int> ideal;
    for (const auto& [docno, label] : qrels) {
        if (label > 0) {
            ideal.push_back(label);
        }
    }
    std::sort(ideal.begin(), ideal.end(), std::greater<>());
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(depth, ideal.size()); ++i) {
        idcg += static_cast<double>(ideal[i]) * discount(i);
    }
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

}  // namespace detail

/// Evaluates one query's ranking (docnos in rank order, no duplicates).
/// Unjudged documents count as non-relevant.
inline double evaluate_metric(const Metric& metric, const std::vector<std::string>& ranking,
                              const QrelSet::Judgments* qrels)
{
    if (qrels == nullptr || qrels->empty()) {
        throw NoJudgments("query has no relevance judgments");
    }
    switch (metric.kind) {
    case MetricKind::map:
        return detail::average_precision(ranking, *qrels);
    case MetricKind::ndcg:
        return detail::ndcg(ranking, *qrels, ranking.size() + qrels->size());
    case MetricKind::ndcg_cut:
        return detail::ndcg(ranking, *qrels, metric.cutoff);
    case MetricKind::precision: {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < std::min(metric.cutoff, ranking.size()); ++i) {
            auto it = qrels->find(ranking[i]);
            hits += (it != qrels->end() && it->second > 0) ? 1 : 0;
        }
        return static_cast<double>(hits) / static_cast<double>(metric.cutoff);
    }
    case MetricKind::recip_rank:
        for (std::size_t i = 0; i < ranking.size(); ++i) {
            auto it = qrels->find(ranking[i]);
            if (it != qrels->end() && it->second > 0) {
                return 1.0 / static_cast<double>(i + 1);
            }
        }
        return 0.0;
    }
    return 0.0;
}

inline double evaluate_metric(const std::string& name, const std::vector<std::string>& ranking,
                              const QrelSet::Judgments& qrels)
{
    return evaluate_metric(Metric::parse(name), ranking, &qrels);
}

/// Docnos per qid in rank order; unranked rows follow in frame order.
inline std::map<std::string, std::vector<std::string>> rankings_by_query(const ResultFrame& results)
{
    std::map<std::string, std::vector<const ResultRow*>> grouped;
    for (const auto& row : results.rows) {
        grouped[row.qid].push_back(&row);
    }
    std::map<std::string, std::vector<std::string>> out;
    for (auto& [qid, rows] : grouped) {
        std::stable_sort(rows.begin(), rows.end(), [](const ResultRow* a, const ResultRow* b) {
            if (a->rank && b->rank) {
                return *a->rank < *b->rank;
            }
            return a->rank.has_value() && !b->rank.has_value();
        });
        auto& docs = out[qid];
        for (const auto* r : rows) {
            docs.push_back(r->docno);
        }
    }
    return out;
}

}  // namespace pipert
