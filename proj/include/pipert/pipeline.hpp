#pragma once

#include <algorithm>
#include <initializer_list>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pipert/errors.hpp"
#include "pipert/frames.hpp"
#include "pipert/retrieval.hpp"
#include "pipert/transformers.hpp"
#include "pipert/weighting.hpp"

namespace pipert {

enum class NodeKind {
    leaf,
    then,
    plus,
    scalar,
    feat_union,
    set_union,
    set_intersect,
    cutoff,
    concat,
    fused_retrieve_topk,
    fused_feature_retrieve,
};

inline const char* kind_name(NodeKind kind) noexcept
{
    switch (kind) {
    case NodeKind::leaf: return "Leaf";
    case NodeKind::then: return "Then";
    case NodeKind::plus: return "Plus";
    case NodeKind::scalar: return "Scalar";
    case NodeKind::feat_union: return "FeatUnion";
    case NodeKind::set_union: return "SetUnion";
    case NodeKind::set_intersect: return "SetIntersect";
    case NodeKind::cutoff: return "Cutoff";
    case NodeKind::concat: return "Concat";
    case NodeKind::fused_retrieve_topk: return "FusedRetrieveTopK";
    case NodeKind::fused_feature_retrieve: return "FusedFeatureRetrieve";
    }
    return "?";
}

inline bool is_nary(NodeKind kind) noexcept
{
    return kind == NodeKind::then || kind == NodeKind::plus || kind == NodeKind::feat_union
           || kind == NodeKind::set_union || kind == NodeKind::set_intersect;
}

struct Node;
using NodePtr = std::shared_ptr<const Node>;

/// Immutable pipeline expression tree.
struct Node {
    NodeKind kind = NodeKind::leaf;
    std::vector<NodePtr> children;
    TransformerPtr transformer;  // leaf
    double alpha = 1.0;          // scalar
    long long k = 0;             // cutoff and fused nodes
    bool lenient = false;        // plus: outer join with missing scores taken as 0

    // fused nodes
    IndexRef index;
    WeightingModel model;
    std::vector<WeightingModel> feature_models;
};

// --- construction ----------------------------------------------------------

inline NodePtr make_node(NodeKind kind, std::vector<NodePtr> children)
{
    if (is_nary(kind) && children.size() < 2) {
        throw BadArity(std::string(kind_name(kind)) + " needs at least two operands");
    }
    if (kind == NodeKind::concat && children.size() != 2) {
        throw BadArity("Concat takes exactly two operands");
    }
    for (const auto& c : children) {
        if (!c) {
            throw BadArity(std::string(kind_name(kind)) + " given an empty operand");
        }
    }
    auto n = std::make_shared<Node>();
    n->kind = kind;
    n->children = std::move(children);
    return n;
}

inline NodePtr leaf(TransformerPtr t)
{
    if (!t) {
        throw BadArity("leaf needs a transformer");
    }
    auto n = std::make_shared<Node>();
    n->transformer = std::move(t);
    return n;
}

namespace detail {

/// Binary builder that splices operands already of the same kind.
inline NodePtr flat_binary(NodeKind kind, const NodePtr& a, const NodePtr& b, bool lenient = false)
{
    std::vector<NodePtr> children;
    for (const auto& x : {a, b}) {
        if (x && x->kind == kind && x->lenient == lenient) {
            children.insert(children.end(), x->children.begin(), x->children.end());
        } else {
            children.push_back(x);
        }
    }
    auto n = make_node(kind, std::move(children));
    std::const_pointer_cast<Node>(n)->lenient = lenient;
    return n;
}

}  // namespace detail

inline NodePtr then(const NodePtr& a, const NodePtr& b) { return detail::flat_binary(NodeKind::then, a, b); }
inline NodePtr linear_combine(const NodePtr& a, const NodePtr& b, bool lenient = false)
{
    return detail::flat_binary(NodeKind::plus, a, b, lenient);
}
inline NodePtr feature_union(const NodePtr& a, const NodePtr& b) { return detail::flat_binary(NodeKind::feat_union, a, b); }
inline NodePtr set_union(const NodePtr& a, const NodePtr& b) { return detail::flat_binary(NodeKind::set_union, a, b); }
inline NodePtr set_intersect(const NodePtr& a, const NodePtr& b)
{
    return detail::flat_binary(NodeKind::set_intersect, a, b);
}
inline NodePtr concatenate(const NodePtr& a, const NodePtr& b) { return make_node(NodeKind::concat, {a, b}); }

inline NodePtr scalar_product(double alpha, const NodePtr& t)
{
    if (!std::isfinite(alpha)) {
        throw BadArity("scalar factor must be finite");
    }
    auto n = std::const_pointer_cast<Node>(make_node(NodeKind::scalar, {t}));
    n->alpha = alpha;
    return n;
}

inline NodePtr rank_cutoff(const NodePtr& t, long long k)
{
    if (k < 1) {
        throw InvalidK("rank cutoff k must be at least 1, got " + std::to_string(k));
    }
    auto n = std::const_pointer_cast<Node>(make_node(NodeKind::cutoff, {t}));
    n->k = k;
    return n;
}

inline NodePtr fused_retrieve_topk(IndexRef index, WeightingModel model, long long k)
{
    detail::check_k(k);
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::fused_retrieve_topk;
    n->index = std::move(index);
    n->model = std::move(model);
    n->k = k;
    return n;
}

inline NodePtr fused_feature_retrieve(IndexRef index, WeightingModel model, long long k,
                                      std::vector<WeightingModel> features)
{
    detail::check_k(k);
    if (features.empty()) {
        throw BadArity("fused feature retrieval needs at least one feature model");
    }
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::fused_feature_retrieve;
    n->index = std::move(index);
    n->model = std::move(model);
    n->k = k;
    n->feature_models = std::move(features);
    return n;
}

// --- structure -------------------------------------------------------------

inline bool structurally_equal(const NodePtr& a, const NodePtr& b)
{
    if (a == b) {
        return true;
    }
    if (!a || !b || a->kind != b->kind || a->children.size() != b->children.size()) {
        return false;
    }
    switch (a->kind) {
    case NodeKind::leaf:
        return a->transformer->same_as(*b->transformer);
    case NodeKind::scalar:
        if (a->alpha != b->alpha) {
            return false;
        }
        break;
    case NodeKind::cutoff:
        if (a->k != b->k) {
            return false;
        }
        break;
    case NodeKind::plus:
        if (a->lenient != b->lenient) {
            return false;
        }
        break;
    case NodeKind::fused_retrieve_topk:
    case NodeKind::fused_feature_retrieve:
        return a->index == b->index && a->model == b->model && a->k == b->k && a->feature_models == b->feature_models;
    default:
        break;
    }
    for (std::size_t i = 0; i < a->children.size(); ++i) {
        if (!structurally_equal(a->children[i], b->children[i])) {
            return false;
        }
    }
    return true;
}

inline std::size_t node_count(const NodePtr& n)
{
    std::size_t c = 1;
    for (const auto& child : n->children) {
        c += node_count(child);
    }
    return c;
}

template <typename Fn>
void for_each_leaf(const NodePtr& n, Fn&& fn)
{
    if (n->kind == NodeKind::leaf) {
        fn(*n->transformer);
    }
    for (const auto& c : n->children) {
        for_each_leaf(c, fn);
    }
}

inline bool has_trainable_stage(const NodePtr& n)
{
    bool found = false;
    for_each_leaf(n, [&](const Transformer& t) { found = found || t.trainable(); });
    return found;
}

// --- DSL printing ------------------------------------------------------------

namespace dsl {

/// Binding strength of each operator glyph, loosest first.
inline int precedence(NodeKind kind) noexcept
{
    switch (kind) {
    case NodeKind::set_union: return 1;
    case NodeKind::concat: return 2;
    case NodeKind::set_intersect: return 3;
    case NodeKind::then: return 4;
    case NodeKind::plus: return 5;
    case NodeKind::scalar:
    case NodeKind::cutoff: return 6;
    case NodeKind::feat_union: return 7;
    default: return 100;
    }
}

inline const char* glyph(NodeKind kind) noexcept
{
    switch (kind) {
    case NodeKind::set_union: return " | ";
    case NodeKind::concat: return " ^ ";
    case NodeKind::set_intersect: return " & ";
    case NodeKind::then: return " >> ";
    case NodeKind::plus: return " + ";
    case NodeKind::feat_union: return " ** ";
    default: return " ? ";
    }
}

inline std::string model_list(const std::vector<WeightingModel>& models)
{
    std::string s = "[";
    for (std::size_t i = 0; i < models.size(); ++i) {
        s += (i ? ", " : "") + models[i].name();
    }
    return s + "]";
}

inline std::string print(const NodePtr& n);

inline std::string print_operand(const NodePtr& child, int parent_prec, bool loose_ok)
{
    auto text = print(child);
    int p = precedence(child->kind);
    bool wrap = loose_ok ? p < parent_prec : p <= parent_prec;
    return wrap ? "(" + text + ")" : text;
}

/// Renders a tree in pipeline-DSL syntax with minimal parentheses.
inline std::string print(const NodePtr& n)
{
    int p = precedence(n->kind);
    switch (n->kind) {
    case NodeKind::leaf:
        return n->transformer->describe();
    case NodeKind::fused_retrieve_topk:
        return "fused_retrieve_topk(" + n->index.name + ", " + n->model.name() + ", k=" + std::to_string(n->k) + ")";
    case NodeKind::fused_feature_retrieve:
        return "fused_feature_retrieve(" + n->index.name + ", " + n->model.name() + ", " + model_list(n->feature_models)
               + ", k=" + std::to_string(n->k) + ")";
    case NodeKind::scalar:
        return detail::format_number(n->alpha) + " * " + print_operand(n->children[0], p, false);
    case NodeKind::cutoff:
        return print_operand(n->children[0], p, true) + " % " + std::to_string(n->k);
    case NodeKind::concat:
        return print_operand(n->children[0], p, true) + glyph(n->kind) + print_operand(n->children[1], p, false);
    default: {
        std::string s;
        for (std::size_t i = 0; i < n->children.size(); ++i) {
            if (i) {
                s += glyph(n->kind);
            }
            s += print_operand(n->children[i], p, false);
        }
        return s;
    }
    }
}

}  // namespace dsl

/// Column name a subtree contributes to a feature union when it carries no features of its own.
inline std::string feature_label(const NodePtr& n)
{
    switch (n->kind) {
    case NodeKind::leaf: return n->transformer->feature_label();
    case NodeKind::fused_retrieve_topk: return n->model.name();
    default: return dsl::print(n);
    }
}

// --- execution -------------------------------------------------------------

namespace detail {

inline const ResultFrame& require_results(const Frames& f, const NodePtr& child, std::size_t i, NodeKind parent)
{
    if (!f.results) {
        throw MissingResults(std::string(kind_name(parent)) + " operand " + std::to_string(i) + " ("
                             + dsl::print(child) + ") produced no results");
    }
    return *f.results;
}

/// Canonical output order of the set operators: qid groups in query order, docnos ascending.
inline ResultFrame ordered_key_frame(const QueryFrame& queries,
                                     std::map<std::string, std::vector<std::string>>& docs_by_qid)
{
    ResultFrame out;
    std::unordered_set<std::string> done;
    auto emit = [&](const std::string& qid) {
        auto it = docs_by_qid.find(qid);
        if (it == docs_by_qid.end() || !done.insert(qid).second) {
            return;
        }
        std::sort(it->second.begin(), it->second.end());
        for (auto& d : it->second) {
            out.rows.push_back(ResultRow{qid, std::move(d), Score::undefined(), std::nullopt, {}});
        }
    };
    for (const auto& q : queries.queries) {
        emit(q.qid);
    }
    for (const auto& [qid, docs] : docs_by_qid) {
        emit(qid);
    }
    return out;
}

inline std::vector<std::string> feature_columns(const ResultFrame& r, const NodePtr& operand)
{
    if (!r.feature_names.empty()) {
        return r.feature_names;
    }
    return {feature_label(operand)};
}

}  // namespace detail

Frames execute(const NodePtr& node, const Frames& input, ExecContext& ctx);

namespace detail {

inline Frames execute_child(const NodePtr& parent, std::size_t i, const Frames& input, ExecContext& ctx)
{
    try {
        return execute(parent->children[i], input, ctx);
    } catch (Error& e) {
        e.prepend_stage(std::string(kind_name(parent->kind)) + "[" + std::to_string(i) + "]");
        throw;
    }
}

inline Frames exec_plus(const NodePtr& n, const Frames& input, ExecContext& ctx)
{
    std::vector<Frames> outs;
    for (std::size_t i = 0; i < n->children.size(); ++i) {
        outs.push_back(execute_child(n, i, input, ctx));
        require_results(outs.back(), n->children[i], i, n->kind);
    }
    // per key: one value slot per operand
    std::vector<std::pair<std::string, std::string>> keys;
    std::unordered_map<std::string, std::size_t> slot;
    std::vector<std::vector<std::optional<double>>> values;
    auto key_of = [](const ResultRow& r) { return r.qid + '\0' + r.docno; };
    for (std::size_t i = 0; i < outs.size(); ++i) {
        for (const auto& row : outs[i].results->rows) {
            auto key = key_of(row);
            auto it = slot.find(key);
            if (it == slot.end()) {
                if (i > 0 && !n->lenient) {
                    continue;
                }
                it = slot.emplace(key, keys.size()).first;
                keys.emplace_back(row.qid, row.docno);
                values.emplace_back(outs.size());
            }
            try {
                values[it->second][i] = row.score.value();
            } catch (UndefinedScore&) {
                throw UndefinedScore("Plus operand " + std::to_string(i) + " has an undefined score for (" + row.qid
                                     + ", " + row.docno + ")");
            }
        }
    }
    ResultFrame r;
    std::vector<double> parts;
    for (std::size_t k = 0; k < keys.size(); ++k) {
        parts.clear();
        bool complete = true;
        for (const auto& v : values[k]) {
            if (v) {
                parts.push_back(*v);
            } else if (n->lenient) {
                parts.push_back(0.0);
            } else {
                complete = false;
            }
        }
        if (!complete) {
            continue;
        }
        // summing in sorted order makes the result independent of operand order
        std::sort(parts.begin(), parts.end());
        double s = 0.0;
        for (double p : parts) {
            s += p;
        }
        r.rows.push_back(ResultRow{keys[k].first, keys[k].second, s, std::nullopt, {}});
    }
    return Frames{input.queries, group_sort(std::move(r))};
}

inline Frames exec_feat_union(const NodePtr& n, const Frames& input, ExecContext& ctx)
{
    std::vector<Frames> outs;
    for (std::size_t i = 0; i < n->children.size(); ++i) {
        outs.push_back(execute_child(n, i, input, ctx));
        require_results(outs.back(), n->children[i], i, n->kind);
    }
    ResultFrame r;
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < outs.size(); ++i) {
        for (auto& name : feature_columns(*outs[i].results, n->children[i])) {
            if (!seen.insert(name).second) {
                throw FeatureNameCollision("FeatUnion: feature '" + name + "' produced by more than one operand");
            }
            r.feature_names.push_back(std::move(name));
        }
    }
    std::vector<KeyIndex> lookups;
    for (std::size_t i = 1; i < outs.size(); ++i) {
        lookups.push_back(detail::key_index(*outs[i].results));
    }
    bool all_defined = true;
    for (const auto& left : outs[0].results->rows) {
        std::vector<const ResultRow*> parts{&left};
        for (const auto& lookup : lookups) {
            auto it = lookup.find({left.qid, left.docno});
            if (it == lookup.end()) {
                break;
            }
            parts.push_back(&outs[parts.size()].results->rows[it->second]);
        }
        if (parts.size() != outs.size()) {
            continue;
        }
        ResultRow row{left.qid, left.docno, left.score, std::nullopt, {}};
        for (std::size_t i = 0; i < parts.size(); ++i) {
            if (outs[i].results->feature_names.empty()) {
                row.features.push_back(parts[i]->score.value());
            } else {
                row.features.insert(row.features.end(), parts[i]->features.begin(), parts[i]->features.end());
            }
        }
        all_defined = all_defined && row.score.defined();
        r.rows.push_back(std::move(row));
    }
    if (all_defined) {
        r = group_sort(std::move(r));
    }
    return Frames{input.queries, std::move(r)};
}

inline Frames exec_set(const NodePtr& n, const Frames& input, ExecContext& ctx)
{
    bool intersect = n->kind == NodeKind::set_intersect;
    std::map<std::string, std::map<std::string, std::size_t>> counts;  // qid -> docno -> operands containing it
    for (std::size_t i = 0; i < n->children.size(); ++i) {
        auto out = execute_child(n, i, input, ctx);
        const auto& r = require_results(out, n->children[i], i, n->kind);
        std::unordered_set<std::string> own;
        for (const auto& row : r.rows) {
            if (own.insert(row.qid + '\0' + row.docno).second) {
                ++counts[row.qid][row.docno];
            }
        }
    }
    std::map<std::string, std::vector<std::string>> docs;
    for (const auto& [qid, per_doc] : counts) {
        for (const auto& [docno, c] : per_doc) {
            if (!intersect || c == n->children.size()) {
                docs[qid].push_back(docno);
            }
        }
    }
    return Frames{input.queries, ordered_key_frame(input.queries, docs)};
}

inline Frames exec_concat(const NodePtr& n, const Frames& input, ExecContext& ctx)
{
    auto first = execute_child(n, 0, input, ctx);
    auto second = execute_child(n, 1, input, ctx);
    auto r1 = group_sort(require_results(first, n->children[0], 0, n->kind));
    auto r2 = group_sort(require_results(second, n->children[1], 1, n->kind));
    constexpr double epsilon = 0.001;

    std::vector<std::string> qids;
    std::map<std::string, std::pair<std::vector<const ResultRow*>, std::vector<const ResultRow*>>> by_qid;
    for (const auto& row : r1.rows) {
        auto& g = by_qid[row.qid];
        if (g.first.empty() && g.second.empty()) {
            qids.push_back(row.qid);
        }
        g.first.push_back(&row);
    }
    for (const auto& row : r2.rows) {
        auto& g = by_qid[row.qid];
        if (g.first.empty() && g.second.empty()) {
            qids.push_back(row.qid);
        }
        g.second.push_back(&row);
    }

    ResultFrame out;
    for (const auto& qid : qids) {
        auto& [head, tail] = by_qid[qid];
        std::unordered_set<std::string_view> present;
        for (const auto* row : head) {
            present.insert(row->docno);
        }
        std::vector<const ResultRow*> rest;
        for (const auto* row : tail) {
            if (!present.count(row->docno)) {
                rest.push_back(row);
            }
        }
        std::uint32_t rank = 0;
        for (const auto* row : head) {
            out.rows.push_back(ResultRow{row->qid, row->docno, row->score, rank++, {}});
        }
        if (rest.empty()) {
            continue;
        }
        if (head.empty()) {
            for (const auto* row : rest) {
                out.rows.push_back(ResultRow{row->qid, row->docno, row->score, rank++, {}});
            }
            continue;
        }
        double low = head.back()->score.value();
        double high = rest.front()->score.value();
        for (const auto* row : rest) {
            double s = ((row->score.value() - high) + low) - epsilon;
            out.rows.push_back(ResultRow{row->qid, row->docno, s, rank++, {}});
        }
    }
    return Frames{input.queries, std::move(out)};
}

inline Frames exec_fused_topk(const NodePtr& n, const Frames& input, ExecContext& ctx)
{
    const auto& index = n->index.get();
    Frames out{input.queries, ResultFrame{}};
    if (input.results) {
        // candidates given: rescore them, then cut
        auto groups = rows_per_query(input.queries, *input.results, dsl::print(n));
        for (std::size_t i = 0; i < groups.size(); ++i) {
            ResultFrame candidates{take_rows(*input.results, groups[i]), {}};
            auto r = select_topk(rescore(index, input.queries.queries[i], n->model, candidates), n->k);
            std::move(r.rows.begin(), r.rows.end(), std::back_inserter(out.results->rows));
        }
        return out;
    }
    for (const auto& q : input.queries.queries) {
        auto r = maxscore_topk(index, q, n->model, n->k, &ctx.pruning);
        std::move(r.rows.begin(), r.rows.end(), std::back_inserter(out.results->rows));
    }
    return out;
}

inline Frames exec_fused_features(const NodePtr& n, const Frames& input, ExecContext& ctx)
{
    const auto& index = n->index.get();
    ResultFrame results;
    std::unordered_set<std::string> names;
    for (const auto& m : n->feature_models) {
        if (!names.insert(m.name()).second) {
            throw FeatureNameCollision("FeatUnion: feature '" + m.name() + "' produced by more than one operand");
        }
        results.feature_names.push_back(m.name());
    }
    if (input.results) {
        auto groups = rows_per_query(input.queries, *input.results, dsl::print(n));
        for (std::size_t i = 0; i < groups.size(); ++i) {
            if (groups[i].empty()) {
                continue;
            }
            auto rows = take_rows(*input.results, groups[i]);
            auto scores = score_candidates(index, input.queries.queries[i], n->feature_models, rows);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                ResultRow row{rows[r].qid, rows[r].docno, 0.0, std::nullopt, {}};
                for (const auto& column : scores) {
                    row.features.push_back(column[r]);
                }
                results.rows.push_back(std::move(row));
            }
        }
    } else {
        for (const auto& q : input.queries.queries) {
            auto r = feature_retrieve(index, q, n->model, n->k, n->feature_models, &ctx.pruning);
            std::move(r.rows.begin(), r.rows.end(), std::back_inserter(results.rows));
        }
    }
    // the joined score is the first feature operand's score
    for (auto& row : results.rows) {
        row.score = row.features.front();
    }
    return Frames{input.queries, group_sort(std::move(results))};
}

}  // namespace detail

/// Evaluates a pipeline tree bottom-up. Both operands of a binary operator
/// receive the same input; errors carry the path of the failing stage.
inline Frames execute(const NodePtr& node, const Frames& input, ExecContext& ctx)
{
    switch (node->kind) {
    case NodeKind::leaf:
        return node->transformer->transform(input, ctx);
    case NodeKind::then: {
        Frames current = detail::execute_child(node, 0, input, ctx);
        for (std::size_t i = 1; i < node->children.size(); ++i) {
            current = detail::execute_child(node, i, current, ctx);
        }
        return current;
    }
    case NodeKind::plus:
        return detail::exec_plus(node, input, ctx);
    case NodeKind::scalar: {
        auto out = detail::execute_child(node, 0, input, ctx);
        const auto& r = detail::require_results(out, node->children[0], 0, node->kind);
        double alpha = node->alpha;
        out.results = group_sort(map_attr(r, [alpha](const ResultRow& row) { return alpha * row.score.value(); }));
        return out;
    }
    case NodeKind::feat_union:
        return detail::exec_feat_union(node, input, ctx);
    case NodeKind::set_union:
    case NodeKind::set_intersect:
        return detail::exec_set(node, input, ctx);
    case NodeKind::cutoff: {
        auto out = detail::execute_child(node, 0, input, ctx);
        out.results = select_topk(detail::require_results(out, node->children[0], 0, node->kind), node->k);
        return out;
    }
    case NodeKind::concat:
        return detail::exec_concat(node, input, ctx);
    case NodeKind::fused_retrieve_topk:
        return detail::exec_fused_topk(node, input, ctx);
    case NodeKind::fused_feature_retrieve:
        return detail::exec_fused_features(node, input, ctx);
    }
    throw ContractViolation("unknown node kind");
}

inline Frames execute(const NodePtr& node, const Frames& input)
{
    ExecContext ctx;
    return execute(node, input, ctx);
}

inline Frames execute(const NodePtr& node, const QueryFrame& queries)
{
    return execute(node, Frames{queries, std::nullopt});
}

// --- training --------------------------------------------------------------

namespace detail {

inline void fit_node(const NodePtr& n, const Frames& train, const QrelSet& train_qrels, const Frames& valid,
                     const QrelSet& valid_qrels)
{
    switch (n->kind) {
    case NodeKind::leaf:
        if (n->transformer->trainable()) {
            n->transformer->fit(train, train_qrels, valid, valid_qrels);
        }
        return;
    case NodeKind::then: {
        Frames t = train;
        Frames v = valid;
        for (std::size_t i = 0; i < n->children.size(); ++i) {
            const auto& child = n->children[i];
            if (has_trainable_stage(child)) {
                fit_node(child, t, train_qrels, v, valid_qrels);
            }
            if (i + 1 < n->children.size()) {
                t = execute(child, t);
                if (!v.queries.empty()) {
                    v = execute(child, v);
                }
            }
        }
        return;
    }
    default:
        for (const auto& child : n->children) {
            if (has_trainable_stage(child)) {
                fit_node(child, train, train_qrels, valid, valid_qrels);
            }
        }
        return;
    }
}

}  // namespace detail

/// Trains every trainable stage, feeding each one the frames its upstream
/// stages produce on the training and validation queries.
inline void fit_pipeline(const NodePtr& pipeline, const QueryFrame& train_queries, const QrelSet& train_qrels,
                         const QueryFrame& valid_queries = {}, const QrelSet& valid_qrels = {})
{
    if (!has_trainable_stage(pipeline)) {
        throw NoTrainableStage("pipeline has no trainable stage");
    }
    if (train_queries.empty()) {
        throw EmptyTrainingSet("no training queries");
    }
    detail::fit_node(pipeline, Frames{train_queries, std::nullopt}, train_qrels, Frames{valid_queries, std::nullopt},
                     valid_qrels);
}

// --- operator syntax ---------------------------------------------------------

/// Value wrapper giving pipelines the operator glyphs of the algebra.
/// C++ has no `**`, so feature union is spelled `feature_union(a, b)`.
class Pipeline {
  public:
    Pipeline(NodePtr node) : m_node(std::move(node)) {}                              // NOLINT(google-explicit-constructor)
    Pipeline(TransformerPtr t) : m_node(leaf(std::move(t))) {}                       // NOLINT(google-explicit-constructor)
    template <typename T>
        requires std::is_base_of_v<Transformer, T>
    Pipeline(std::shared_ptr<T> t) : m_node(leaf(std::static_pointer_cast<Transformer>(std::move(t))))  // NOLINT
    {
    }

    [[nodiscard]] const NodePtr& node() const noexcept { return m_node; }
    operator NodePtr() const { return m_node; }  // NOLINT(google-explicit-constructor)

    [[nodiscard]] Frames transform(const QueryFrame& q) const { return execute(m_node, q); }
    [[nodiscard]] Frames transform(const Frames& f, ExecContext& ctx) const { return execute(m_node, f, ctx); }

    void fit(const QueryFrame& train, const QrelSet& train_qrels, const QueryFrame& valid = {},
             const QrelSet& valid_qrels = {}) const
    {
        fit_pipeline(m_node, train, train_qrels, valid, valid_qrels);
    }

    friend Pipeline operator>>(const Pipeline& a, const Pipeline& b) { return then(a.m_node, b.m_node); }
    friend Pipeline operator+(const Pipeline& a, const Pipeline& b) { return linear_combine(a.m_node, b.m_node); }
    friend Pipeline operator*(double alpha, const Pipeline& t) { return scalar_product(alpha, t.m_node); }
    friend Pipeline operator*(const Pipeline& t, double alpha) { return scalar_product(alpha, t.m_node); }
    friend Pipeline operator|(const Pipeline& a, const Pipeline& b) { return set_union(a.m_node, b.m_node); }
    friend Pipeline operator&(const Pipeline& a, const Pipeline& b) { return set_intersect(a.m_node, b.m_node); }
    friend Pipeline operator^(const Pipeline& a, const Pipeline& b) { return concatenate(a.m_node, b.m_node); }
    friend Pipeline operator%(const Pipeline& t, long long k) { return rank_cutoff(t.m_node, k); }

  private:
    NodePtr m_node;
};

inline Pipeline feature_union(const Pipeline& a, const Pipeline& b) { return feature_union(a.node(), b.node()); }

}  // namespace pipert
