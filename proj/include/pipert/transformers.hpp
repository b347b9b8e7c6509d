#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipert/errors.hpp"
#include "pipert/frames.hpp"
#include "pipert/index.hpp"
#include "pipert/metrics.hpp"
#include "pipert/retrieval.hpp"
#include "pipert/tokenizer.hpp"
#include "pipert/weighting.hpp"

namespace pipert {

/// An index together with the name pipelines refer to it by.
struct IndexRef {
    std::string name = "ix";
    std::shared_ptr<const Index> index;

    [[nodiscard]] const Index& get() const { return *index; }
    friend bool operator==(const IndexRef& a, const IndexRef& b) { return a.index == b.index && a.name == b.name; }
};

/// Per-execution scratch shared by every stage of one pipeline run.
struct ExecContext {
    PruningStats pruning;
};

enum class TransformerKind { retrieve, rewrite, expand, extract, rerank, generic };

/// A function object mapping (queries, optional results) to (queries, optional results).
///
/// Outputs a transformer does not produce are verbatim copies of its inputs.
class Transformer {
  public:
    virtual ~Transformer() = default;

    [[nodiscard]] virtual TransformerKind kind() const noexcept = 0;

    /// Constructor expression in pipeline-DSL syntax.
    [[nodiscard]] virtual std::string describe() const = 0;

    /// Column name used when this transformer's score becomes a feature.
    [[nodiscard]] virtual std::string feature_label() const { return describe(); }

    [[nodiscard]] virtual Frames transform(const Frames& input, ExecContext& ctx) const = 0;

    [[nodiscard]] Frames transform(const Frames& input) const
    {
        ExecContext ctx;
        return transform(input, ctx);
    }

    [[nodiscard]] virtual bool trainable() const noexcept { return false; }

    virtual void fit(const Frames& /*train*/, const QrelSet& /*train_qrels*/, const Frames& /*valid*/,
                     const QrelSet& /*valid_qrels*/)
    {
        throw NoTrainableStage(describe() + " is not trainable");
    }

    /// Structural equality used by the compiler and the DSL round trip.
    [[nodiscard]] virtual bool same_as(const Transformer& other) const
    {
        return kind() == other.kind() && describe() == other.describe();
    }
};

using TransformerPtr = std::shared_ptr<Transformer>;

namespace detail {

inline std::string dsl_number(double v) { return format_number(v); }

/// Row indices of a result frame grouped by qid, in the order of `queries`.
/// Rows whose qid is not in `queries` violate the transformer contract.
inline std::vector<std::vector<std::size_t>> rows_per_query(const QueryFrame& queries, const ResultFrame& results,
                                                            const std::string& stage)
{
    std::unordered_map<std::string_view, std::size_t> slot;
    for (std::size_t i = 0; i < queries.queries.size(); ++i) {
        slot.emplace(queries.queries[i].qid, i);
    }
    std::vector<std::vector<std::size_t>> groups(queries.queries.size());
    for (std::size_t r = 0; r < results.rows.size(); ++r) {
        auto it = slot.find(results.rows[r].qid);
        if (it == slot.end()) {
            throw ContractViolation(stage + ": result row for unknown query '" + results.rows[r].qid + "'");
        }
        groups[it->second].push_back(r);
    }
    return groups;
}

inline std::vector<ResultRow> take_rows(const ResultFrame& results, const std::vector<std::size_t>& rows)
{
    std::vector<ResultRow> out;
    out.reserve(rows.size());
    for (auto r : rows) {
        out.push_back(results.rows[r]);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// Basic retrieval. Without input results it retrieves the top k per query
/// (exhaustively); with input results it re-scores exactly those candidates.
class Retrieve : public Transformer {
  public:
    using Transformer::transform;

    Retrieve(IndexRef index, WeightingModel model, long long k = 1000)
        : m_index(std::move(index)), m_model(std::move(model)), m_k(k)
    {
        if (k < 1) {
            throw InvalidK("retrieve k must be at least 1, got " + std::to_string(k));
        }
    }

    [[nodiscard]] TransformerKind kind() const noexcept override { return TransformerKind::retrieve; }
    [[nodiscard]] std::string describe() const override
    {
        return "retrieve(" + m_index.name + ", " + m_model.name() + ", k=" + std::to_string(m_k) + ")";
    }
    [[nodiscard]] std::string feature_label() const override { return m_model.name(); }

    [[nodiscard]] const IndexRef& index() const noexcept { return m_index; }
    [[nodiscard]] const WeightingModel& model() const noexcept { return m_model; }
    [[nodiscard]] long long k() const noexcept { return m_k; }

    [[nodiscard]] Frames transform(const Frames& input, ExecContext& ctx) const override
    {
        Frames out{input.queries, ResultFrame{}};
        auto& results = *out.results;
        const auto& index = m_index.get();
        if (!input.results) {
            for (const auto& q : input.queries.queries) {
                auto r = exhaustive_topk(index, q, m_model, m_k, &ctx.pruning);
                std::move(r.rows.begin(), r.rows.end(), std::back_inserter(results.rows));
            }
            return out;
        }
        auto groups = detail::rows_per_query(input.queries, *input.results, describe());
        for (std::size_t i = 0; i < groups.size(); ++i) {
            ResultFrame candidates{detail::take_rows(*input.results, groups[i]), {}};
            auto r = rescore(index, input.queries.queries[i], m_model, candidates);
            std::move(r.rows.begin(), r.rows.end(), std::back_inserter(results.rows));
        }
        return out;
    }

    [[nodiscard]] bool same_as(const Transformer& other) const override
    {
        const auto* o = dynamic_cast<const Retrieve*>(&other);
        return o != nullptr && o->m_index == m_index && o->m_model == m_model && o->m_k == m_k;
    }

  private:
    IndexRef m_index;
    WeightingModel m_model;
    long long m_k;
};

/// Tokenizes query text into weighted terms (weight 1 per occurrence).
/// Queries that already carry terms pass through unchanged.
class Rewrite : public Transformer {
  public:
    using Transformer::transform;

    Rewrite() = default;
    explicit Rewrite(const IndexRef& index)
        : m_options(index.index ? index.get().options() : IndexOptions{}), m_index_name(index.name)
    {
    }

    [[nodiscard]] TransformerKind kind() const noexcept override { return TransformerKind::rewrite; }
    [[nodiscard]] std::string describe() const override
    {
        return m_index_name ? "rewrite(" + *m_index_name + ")" : "rewrite()";
    }

    [[nodiscard]] Frames transform(const Frames& input, ExecContext& /*ctx*/) const override
    {
        Frames out = input;
        for (auto& q : out.queries.queries) {
            if (!q.terms) {
                q.terms = query_term_weights(q, m_options);
            }
        }
        return out;
    }

  private:
    IndexOptions m_options;
    std::optional<std::string> m_index_name;
};

/// RM3 pseudo-relevance feedback: Q x R -> Q', with R passed through.
class Expand : public Transformer {
  public:
    using Transformer::transform;

    Expand(IndexRef index, RM3Params params = {}) : m_index(std::move(index)), m_params(params) {}

    [[nodiscard]] TransformerKind kind() const noexcept override { return TransformerKind::expand; }
    [[nodiscard]] std::string describe() const override
    {
        std::string s = "expand(" + m_index.name;
        RM3Params defaults;
        if (m_params.fb_docs != defaults.fb_docs) {
            s += ", fb_docs=" + std::to_string(m_params.fb_docs);
        }
        if (m_params.fb_terms != defaults.fb_terms) {
            s += ", fb_terms=" + std::to_string(m_params.fb_terms);
        }
        if (m_params.lambda != defaults.lambda) {
            s += ", lambda=" + detail::dsl_number(m_params.lambda);
        }
        return s + ")";
    }

    [[nodiscard]] const RM3Params& params() const noexcept { return m_params; }

    [[nodiscard]] Frames transform(const Frames& input, ExecContext& /*ctx*/) const override
    {
        if (!input.results) {
            throw MissingResults(describe() + " needs results from an upstream retrieval");
        }
        // Only the rewritten queries flow on, so a following Retrieve searches the whole index.
        Frames out{input.queries, std::nullopt};
        auto groups = detail::rows_per_query(input.queries, *input.results, describe());
        for (std::size_t i = 0; i < groups.size(); ++i) {
            auto& q = out.queries.queries[i];
            if (groups[i].empty()) {
                continue;  // nothing retrieved, keep the query as is
            }
            ResultFrame feedback{detail::take_rows(*input.results, groups[i]), {}};
            q = rm3_expand(m_index.get(), q, feedback, m_params);
        }
        return out;
    }

    [[nodiscard]] bool same_as(const Transformer& other) const override
    {
        const auto* o = dynamic_cast<const Expand*>(&other);
        return o != nullptr && o->m_index == m_index && o->m_params == m_params;
    }

  private:
    IndexRef m_index;
    RM3Params m_params;
};

/// A feature computed by Extract: a weighting model, or the document length.
struct FeatureSpec {
    std::optional<WeightingModel> model;  // nullopt = document length

    [[nodiscard]] static FeatureSpec doclen() { return {}; }
    [[nodiscard]] std::string name() const { return model ? model->name() : "doclen"; }
    friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Appends one feature column per spec to the incoming results.
class Extract : public Transformer {
  public:
    using Transformer::transform;

    Extract(IndexRef index, std::vector<FeatureSpec> features) : m_index(std::move(index)), m_features(std::move(features)) {}

    [[nodiscard]] TransformerKind kind() const noexcept override { return TransformerKind::extract; }
    [[nodiscard]] std::string describe() const override
    {
        std::string s = "extract(" + m_index.name + ", [";
        for (std::size_t i = 0; i < m_features.size(); ++i) {
            s += (i ? ", " : "") + m_features[i].name();
        }
        return s + "])";
    }

    [[nodiscard]] Frames transform(const Frames& input, ExecContext& /*ctx*/) const override
    {
        if (!input.results) {
            throw MissingResults(describe() + " needs results to extract features for");
        }
        Frames out = input;
        if (m_features.empty()) {
            return out;
        }
        auto& results = *out.results;
        std::unordered_set<std::string> names(results.feature_names.begin(), results.feature_names.end());
        for (const auto& f : m_features) {
            if (!names.insert(f.name()).second) {
                throw FeatureNameCollision("feature '" + f.name() + "' already present");
            }
            results.feature_names.push_back(f.name());
        }
        const auto& index = m_index.get();
        std::vector<WeightingModel> models;
        for (const auto& f : m_features) {
            if (f.model) {
                models.push_back(*f.model);
            }
        }
        auto groups = detail::rows_per_query(input.queries, *input.results, describe());
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (groups[g].empty()) {
                continue;
            }
            auto rows = detail::take_rows(*input.results, groups[g]);
            auto scores = detail::score_candidates(index, input.queries.queries[g], models, rows);
            auto ids = detail::docids_of(index, rows);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                auto& row = results.rows[groups[g][r]];
                std::size_t m = 0;
                for (const auto& f : m_features) {
                    row.features.push_back(f.model ? scores[m++][r] : static_cast<double>(index.doclen(ids[r])));
                }
            }
        }
        return out;
    }

    [[nodiscard]] bool same_as(const Transformer& other) const override
    {
        const auto* o = dynamic_cast<const Extract*>(&other);
        return o != nullptr && o->m_index == m_index && o->m_features == m_features;
    }

  private:
    IndexRef m_index;
    std::vector<FeatureSpec> m_features;
};

struct TrainingLog {
    int sweeps = 0;
    double best_validation = 0.0;
    double final_training = 0.0;
    int skipped_queries = 0;  // training queries without any relevant label
};

/// Linear re-ranker: score = weights . features, trained by coordinate ascent on MAP.
class LinearRerank : public Transformer {
  public:
    using Transformer::transform;

    LinearRerank() = default;

    [[nodiscard]] TransformerKind kind() const noexcept override { return TransformerKind::rerank; }
    [[nodiscard]] std::string describe() const override
    {
        return m_source ? "rerank_linear(\"" + *m_source + "\")" : "rerank_linear()";
    }
    [[nodiscard]] bool trainable() const noexcept override { return true; }

    [[nodiscard]] bool trained() const noexcept { return m_trained; }
    [[nodiscard]] const std::vector<double>& weights() const noexcept { return m_weights; }
    [[nodiscard]] const std::vector<std::string>& feature_names() const noexcept { return m_feature_names; }
    [[nodiscard]] const TrainingLog& log() const noexcept { return m_log; }

    void set_weights(std::vector<double> weights, std::vector<std::string> names = {})
    {
        if (!names.empty() && names.size() != weights.size()) {
            throw FeatureLengthMismatch("weights and feature names differ in length");
        }
        m_weights = std::move(weights);
        m_feature_names = std::move(names);
        m_trained = true;
    }

    [[nodiscard]] nlohmann::json to_json() const
    {
        if (!m_trained) {
            throw NotTrained("linear re-ranker has not been trained");
        }
        return {{"feature_names", m_feature_names}, {"weights", m_weights}};
    }

    void load_json(const nlohmann::json& j)
    {
        try {
            set_weights(j.at("weights").get<std::vector<double>>(),
                        j.at("feature_names").get<std::vector<std::string>>());
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("bad re-ranker weights: ") + e.what());
        }
    }

    /// Loads weights from a JSON file and remembers its path for describe().
    void load_file(const std::string& path)
    {
        std::ifstream in(path);
        if (!in) {
            throw ParseError("cannot open weights file '" + path + "'");
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("weights file '" + path + "': " + e.what());
        }
        load_json(j);
        m_source = path;
    }

    void set_source(std::string path) { m_source = std::move(path); }

    [[nodiscard]] Frames transform(const Frames& input, ExecContext& /*ctx*/) const override
    {
        if (!input.results) {
            throw MissingResults("rerank_linear needs results with features");
        }
        if (!m_trained) {
            throw NotTrained("linear re-ranker has not been trained");
        }
        Frames out = input;
        for (auto& row : out.results->rows) {
            row.score = score_row(row);
        }
        out.results = group_sort(std::move(*out.results));
        return out;
    }

    void fit(const Frames& train, const QrelSet& train_qrels, const Frames& valid, const QrelSet& valid_qrels) override;

    [[nodiscard]] bool same_as(const Transformer& other) const override
    {
        // trained state is shared through the pointer; only the configuration is compared
        return other.kind() == TransformerKind::rerank && other.describe() == describe();
    }

  private:
    [[nodiscard]] double score_row(const ResultRow& row) const
    {
        if (row.features.size() != m_weights.size()) {
            throw FeatureLengthMismatch("row (" + row.qid + ", " + row.docno + ") has "
                                        + std::to_string(row.features.size()) + " features, model expects "
                                        + std::to_string(m_weights.size()));
        }
        double s = 0.0;
        for (std::size_t i = 0; i < m_weights.size(); ++i) {
            s += m_weights[i] * row.features[i];
        }
        return s;
    }

    std::vector<double> m_weights;
    std::vector<std::string> m_feature_names;
    bool m_trained = false;
    TrainingLog m_log;
    std::optional<std::string> m_source;
};

namespace detail {

/// Feature rows of the queries that have at least one relevant document.
struct RankingTask {
    struct QueryRows {
        std::vector<const ResultRow*> rows;
        std::vector<bool> relevant;
        std::size_t total_relevant = 0;
    };
    std::vector<QueryRows> queries;
    int skipped = 0;

    RankingTask(const ResultFrame& results, const QrelSet& qrels)
    {
        std::map<std::string, QueryRows> grouped;
        for (const auto& row : results.rows) {
            grouped[row.qid].rows.push_back(&row);
        }
        for (auto& [qid, q] : grouped) {
            const auto* judged = qrels.for_query(qid);
            if (judged != nullptr) {
                for (const auto& [docno, label] : *judged) {
                    q.total_relevant += label > 0 ? 1 : 0;
                }
            }
            if (q.total_relevant == 0) {
                ++skipped;
                continue;
            }
            for (const auto* r : q.rows) {
                q.relevant.push_back(qrels.label(qid, r->docno) > 0);
            }
            queries.push_back(std::move(q));
        }
    }

    [[nodiscard]] double mean_ap(const std::vector<double>& w) const
    {
        if (queries.empty()) {
            return 0.0;
        }
        double total = 0.0;
        std::vector<std::pair<double, std::size_t>> scored;
        for (const auto& q : queries) {
            scored.clear();
            for (std::size_t i = 0; i < q.rows.size(); ++i) {
                double s = 0.0;
                for (std::size_t f = 0; f < w.size(); ++f) {
                    s += w[f] * q.rows[i]->features[f];
                }
                scored.emplace_back(s, i);
            }
            std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
                if (a.first != b.first) {
                    return a.first > b.first;
                }
                return q.rows[a.second]->docno < q.rows[b.second]->docno;
            });
            double sum = 0.0;
            std::size_t hits = 0;
            for (std::size_t rank = 0; rank < scored.size(); ++rank) {
                if (q.relevant[scored[rank].second]) {
                    ++hits;
                    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
                }
            }
            total += sum / static_cast<double>(q.total_relevant);
        }
        return total / static_cast<double>(queries.size());
    }
};

}  // namespace detail

inline void LinearRerank::fit(const Frames& train, const QrelSet& train_qrels, const Frames& valid,
                              const QrelSet& valid_qrels)
{
    if (!train.results || train.results->rows.empty()) {
        throw EmptyTrainingSet("no training results reached the re-ranker");
    }
    const auto& frame = *train.results;
    std::size_t n = frame.feature_names.size();
    if (n == 0) {
        throw FeatureLengthMismatch("training results carry no features");
    }
    for (const auto& row : frame.rows) {
        if (row.features.size() != n) {
            throw FeatureLengthMismatch("training row (" + row.qid + ", " + row.docno + ") has wrong feature count");
        }
    }
    detail::RankingTask train_task(frame, train_qrels);
    if (train_task.queries.empty()) {
        throw EmptyTrainingSet("no training query has a relevant document");
    }
    std::optional<detail::RankingTask> valid_task;
    if (valid.results && !valid.results->rows.empty()) {
        valid_task.emplace(*valid.results, valid_qrels);
        if (valid_task->queries.empty()) {
            valid_task.reset();
        }
    }
    auto validate = [&](const std::vector<double>& w) {
        return valid_task ? valid_task->mean_ap(w) : train_task.mean_ap(w);
    };

    std::vector<double> grid = {0.0};
    for (int i = -3; i <= 3; ++i) {
        grid.push_back(std::ldexp(1.0, i));
        grid.push_back(-std::ldexp(1.0, i));
    }

    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    double train_metric = train_task.mean_ap(w);
    std::vector<double> best_w = w;
    double best_valid = validate(w);
    int stale = 0;
    int sweeps = 0;
    constexpr int kMaxSweeps = 25;
    constexpr int kPatience = 3;
    while (sweeps < kMaxSweeps && stale < kPatience) {
        ++sweeps;
        for (std::size_t f = 0; f < n; ++f) {
            double keep = w[f];
            for (double candidate : grid) {
                if (candidate == keep) {
                    continue;
                }
                w[f] = candidate;
                double m = train_task.mean_ap(w);
                if (m > train_metric) {
                    train_metric = m;
                    keep = candidate;
                }
            }
            w[f] = keep;
        }
        double v = validate(w);
        if (v > best_valid) {
            best_valid = v;
            best_w = w;
            stale = 0;
        } else {
            ++stale;
        }
    }
    m_log = TrainingLog{sweeps, best_valid, train_task.mean_ap(best_w), train_task.skipped};
    set_weights(best_w, frame.feature_names);
}

/// Wraps an arbitrary function as a transformer; its output is validated after every call.
class Generic : public Transformer {
  public:
    using Transformer::transform;

    using Fn = std::function<Frames(const Frames&)>;

    Generic(std::string name, Fn fn) : m_name(std::move(name)), m_fn(std::move(fn)) {}

    [[nodiscard]] TransformerKind kind() const noexcept override { return TransformerKind::generic; }
    [[nodiscard]] std::string describe() const override { return m_name; }

    [[nodiscard]] Frames transform(const Frames& input, ExecContext& /*ctx*/) const override
    {
        Frames out = m_fn(input);
        out.queries.validate();
        std::unordered_set<std::string> in_ids;
        for (const auto& q : input.queries.queries) {
            in_ids.insert(q.qid);
        }
        bool same = in_ids.size() == out.queries.size();
        for (const auto& q : out.queries.queries) {
            same = same && in_ids.count(q.qid) != 0;
        }
        if (!same) {
            throw ContractViolation(m_name + " changed the set of queries");
        }
        if (out.results) {
            out.results->validate();
        }
        return out;
    }

    [[nodiscard]] bool same_as(const Transformer& other) const override { return this == &other; }

  private:
    std::string m_name;
    Fn m_fn;
};

inline TransformerPtr make_retrieve(IndexRef index, WeightingModel model, long long k = 1000)
{
    return std::make_shared<Retrieve>(std::move(index), std::move(model), k);
}

inline TransformerPtr make_rewrite() { return std::make_shared<Rewrite>(); }
inline TransformerPtr make_rewrite(IndexRef index) { return std::make_shared<Rewrite>(std::move(index)); }

inline TransformerPtr make_expand(IndexRef index, RM3Params params = {})
{
    return std::make_shared<Expand>(std::move(index), params);
}

inline TransformerPtr make_extract(IndexRef index, std::vector<FeatureSpec> features)
{
    return std::make_shared<Extract>(std::move(index), std::move(features));
}

inline std::shared_ptr<LinearRerank> make_rerank_linear() { return std::make_shared<LinearRerank>(); }

inline TransformerPtr make_generic(std::string name, Generic::Fn fn)
{
    return std::make_shared<Generic>(std::move(name), std::move(fn));
}

}  // namespace pipert
