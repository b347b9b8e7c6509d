#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pipert/compiler.hpp"
#include "pipert/errors.hpp"
#include "pipert/frames.hpp"
#include "pipert/metrics.hpp"
#include "pipert/pipeline.hpp"

namespace pipert {

struct ExperimentReport {
    struct Row {
        std::string name;
        std::vector<double> means;  // aligned with metrics
        std::optional<double> mrt_ms;
    };

    std::vector<std::string> metrics;
    std::vector<Row> rows;
    std::vector<std::string> evaluated_qids;
    std::vector<std::string> excluded_qids;  // queries without judgments
    /// per_query[pipeline][metric][query], queries aligned with evaluated_qids
    std::vector<std::vector<std::vector<double>>> per_query;

    [[nodiscard]] std::string to_text() const
    {
        std::vector<std::vector<std::string>> cells;
        std::vector<std::string> header{"name"};
        header.insert(header.end(), metrics.begin(), metrics.end());
        bool timed = std::any_of(rows.begin(), rows.end(), [](const Row& r) { return r.mrt_ms.has_value(); });
        if (timed) {
            header.emplace_back("mrt_ms");
        }
        cells.push_back(header);
        for (const auto& r : rows) {
            std::vector<std::string> line{r.name};
            for (double m : r.means) {
                line.push_back(fixed(m, 4));
            }
            if (timed) {
                line.push_back(r.mrt_ms ? fixed(*r.mrt_ms, 3) : "-");
            }
            cells.push_back(std::move(line));
        }
        std::vector<std::size_t> width(header.size(), 0);
        for (const auto& line : cells) {
            for (std::size_t c = 0; c < line.size(); ++c) {
                width[c] = std::max(width[c], line[c].size());
            }
        }
        std::string out;
        for (const auto& line : cells) {
            for (std::size_t c = 0; c < line.size(); ++c) {
                if (c == 0) {
                    out += line[c] + std::string(width[c] - line[c].size(), ' ');
                } else {
                    out += "  " + std::string(width[c] - line[c].size(), ' ') + line[c];
                }
            }
            out += "\n";
        }
        out += "queries evaluated: " + std::to_string(evaluated_qids.size())
               + ", excluded without judgments: " + std::to_string(excluded_qids.size()) + "\n";
        return out;
    }

    [[nodiscard]] std::string to_csv() const
    {
        std::string out = "name";
        for (const auto& m : metrics) {
            out += "," + m;
        }
        bool timed = std::any_of(rows.begin(), rows.end(), [](const Row& r) { return r.mrt_ms.has_value(); });
        if (timed) {
            out += ",mrt_ms";
        }
        out += "\n";
        for (const auto& r : rows) {
            out += r.name;
            for (double m : r.means) {
                out += "," + fixed(m, 6);
            }
            if (timed) {
                out += "," + (r.mrt_ms ? fixed(*r.mrt_ms, 3) : std::string());
            }
            out += "\n";
        }
        return out;
    }

  private:
    static std::string fixed(double v, int digits)
    {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
        return buf;
    }
};

/// Runs every pipeline on the same queries and tabulates mean metrics over
/// the queries that have judgments.
inline ExperimentReport experiment(const std::vector<NodePtr>& pipelines, const std::vector<std::string>& names,
                                   const QueryFrame& queries, const QrelSet& qrels,
                                   const std::vector<std::string>& metric_names, bool optimize = true)
{
    if (pipelines.size() != names.size()) {
        throw ContractViolation("experiment needs one name per pipeline");
    }
    std::vector<Metric> metrics;
    for (const auto& m : metric_names) {
        metrics.push_back(Metric::parse(m));
    }
    ExperimentReport report;
    report.metrics = metric_names;
    for (const auto& q : queries.queries) {
        const auto* judged = qrels.for_query(q.qid);
        (judged != nullptr && !judged->empty() ? report.evaluated_qids : report.excluded_qids).push_back(q.qid);
    }
    for (std::size_t p = 0; p < pipelines.size(); ++p) {
        Frames out;
        try {
            auto plan = optimize ? compile(pipelines[p]) : pipelines[p];
            out = execute(plan, queries);
        } catch (Error& e) {
            e.prepend_stage(names[p]);
            throw;
        }
        auto rankings = out.results ? rankings_by_query(*out.results) : decltype(rankings_by_query({})){};
        ExperimentReport::Row row{names[p], {}, std::nullopt};
        std::vector<std::vector<double>> table(metrics.size());
        static const std::vector<std::string> none;
        for (std::size_t m = 0; m < metrics.size(); ++m) {
            double total = 0.0;
            for (const auto& qid : report.evaluated_qids) {
                auto it = rankings.find(qid);
                double v = evaluate_metric(metrics[m], it == rankings.end() ? none : it->second, qrels.for_query(qid));
                table[m].push_back(v);
                total += v;
            }
            row.means.push_back(report.evaluated_qids.empty() ? 0.0
                                                              : total / static_cast<double>(report.evaluated_qids.size()));
        }
        report.rows.push_back(std::move(row));
        report.per_query.push_back(std::move(table));
    }
    return report;
}

struct BenchResult {
    double mrt_ms = 0.0;
    std::vector<double> per_query_ms;
    PruningStats pruning;
};

/// Mean response time: each query runs alone, sequentially, timed with a
/// monotonic clock; the first `warmup` queries are run but not measured.
inline BenchResult bench_mrt(const NodePtr& pipeline, const QueryFrame& queries, std::size_t warmup = 3,
                             int repetitions = 1)
{
    if (const char* threads = std::getenv("PIPERT_THREADS"); threads != nullptr && std::string(threads) != "1") {
        throw ContractViolation("benchmarks run single-threaded; PIPERT_THREADS must be 1");
    }
    if (queries.size() <= warmup) {
        throw ContractViolation("benchmark needs more queries than the " + std::to_string(warmup) + " warmup queries");
    }
    if (repetitions < 1) {
        throw ContractViolation("repetitions must be at least 1");
    }
    BenchResult result;
    for (std::size_t i = 0; i < queries.size(); ++i) {
        Frames single{QueryFrame{{queries.queries[i]}}, std::nullopt};
        double elapsed = 0.0;
        for (int r = 0; r < repetitions; ++r) {
            ExecContext ctx;
            auto start = std::chrono::steady_clock::now();
            auto out = execute(pipeline, single, ctx);
            auto stop = std::chrono::steady_clock::now();
            elapsed += std::chrono::duration<double, std::milli>(stop - start).count();
            if (i >= warmup && r == 0) {
                result.pruning += ctx.pruning;
            }
        }
        if (i >= warmup) {
            result.per_query_ms.push_back(elapsed / repetitions);
        }
    }
    double total = 0.0;
    for (double ms : result.per_query_ms) {
        total += ms;
    }
    result.mrt_ms = total / static_cast<double>(result.per_query_ms.size());
    return result;
}

}  // namespace pipert
