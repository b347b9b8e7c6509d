#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pipert/errors.hpp"
#include "pipert/pipeline.hpp"
#include "pipert/transformers.hpp"

namespace pipert {

/// Indented plan rendering, two spaces per level.
inline std::string explain(const NodePtr& n, int depth = 0)
{
    std::string pad(static_cast<std::size_t>(depth) * 2, ' ');
    std::string line;
    switch (n->kind) {
    case NodeKind::leaf:
        line = n->transformer->describe();
        break;
    case NodeKind::scalar:
        line = "Scalar[" + detail::format_number(n->alpha) + "]";
        break;
    case NodeKind::cutoff:
        line = "Cutoff[" + std::to_string(n->k) + "]";
        break;
    case NodeKind::plus:
        line = n->lenient ? "Plus[lenient]" : "Plus";
        break;
    case NodeKind::fused_retrieve_topk:
        line = "FusedRetrieveTopK[" + n->model.name() + ",k=" + std::to_string(n->k) + "]";
        break;
    case NodeKind::fused_feature_retrieve: {
        line = "FusedFeatureRetrieve[" + n->model.name() + ",k=" + std::to_string(n->k) + ",features=";
        for (std::size_t i = 0; i < n->feature_models.size(); ++i) {
            line += (i ? ";" : "") + n->feature_models[i].name();
        }
        line += "]";
        break;
    }
    default:
        line = kind_name(n->kind);
    }
    std::string out = pad + line + "\n";
    for (const auto& c : n->children) {
        out += explain(c, depth + 1);
    }
    return out;
}

/// A local rewrite: returns the replacement for `n`, or nullptr when it does not apply.
struct RewriteRule {
    std::string name;
    std::function<NodePtr(const NodePtr&)> apply;
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view s)
{
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline bool commutative(NodeKind kind)
{
    return kind == NodeKind::plus || kind == NodeKind::set_union || kind == NodeKind::set_intersect;
}

inline NodePtr with_children(const NodePtr& n, std::vector<NodePtr> children)
{
    auto copy = std::make_shared<Node>(*n);
    copy->children = std::move(children);
    return copy;
}

/// One canonicalization step at `n`, assuming its children are canonical.
inline NodePtr canonicalize_local(const NodePtr& n)
{
    if (n->kind == NodeKind::scalar) {
        const auto& child = n->children[0];
        if (child->kind == NodeKind::scalar) {
            return scalar_product(n->alpha * child->alpha, child->children[0]);
        }
        if (n->alpha == 1.0) {
            return child;
        }
        return nullptr;
    }
    if (!is_nary(n->kind)) {
        return nullptr;
    }
    bool changed = false;
    std::vector<NodePtr> children;
    for (const auto& c : n->children) {
        if (c->kind == n->kind && c->lenient == n->lenient) {
            children.insert(children.end(), c->children.begin(), c->children.end());
            changed = true;
        } else {
            children.push_back(c);
        }
    }
    if (commutative(n->kind)) {
        std::vector<std::pair<std::uint64_t, std::string>> keys;
        std::vector<std::size_t> order(children.size());
        for (std::size_t i = 0; i < children.size(); ++i) {
            auto text = explain(children[i]);
            keys.emplace_back(fnv1a(text), std::move(text));
            order[i] = i;
        }
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
        std::vector<NodePtr> sorted;
        for (std::size_t i = 0; i < order.size(); ++i) {
            changed = changed || order[i] != i;
            sorted.push_back(children[order[i]]);
        }
        children = std::move(sorted);
    }
    return changed ? with_children(n, std::move(children)) : nullptr;
}

inline const Retrieve* as_retrieve(const NodePtr& n)
{
    if (n->kind != NodeKind::leaf) {
        return nullptr;
    }
    return dynamic_cast<const Retrieve*>(n->transformer.get());
}

}  // namespace detail

/// Flattens associative operators, folds nested scalars and orders the operands
/// of commutative operators, over the whole tree. Idempotent.
inline NodePtr canonicalize(const NodePtr& n)
{
    std::vector<NodePtr> children;
    bool changed = false;
    for (const auto& c : n->children) {
        children.push_back(canonicalize(c));
        changed = changed || children.back() != c;
    }
    NodePtr current = changed ? detail::with_children(n, std::move(children)) : n;
    while (auto next = detail::canonicalize_local(current)) {
        current = next;
    }
    return current;
}

/// `retrieve(ix, m, k0) % k` with k <= k0 becomes a single pruned top-k retrieval.
inline RewriteRule rule_cutoff_pushdown()
{
    return {"cutoff_pushdown", [](const NodePtr& n) -> NodePtr {
                if (n->kind != NodeKind::cutoff) {
                    return nullptr;
                }
                const auto* r = detail::as_retrieve(n->children[0]);
                if (r == nullptr || n->k > r->k()) {
                    return nullptr;
                }
                return fused_retrieve_topk(r->index(), r->model(), n->k);
            }};
}

/// `retrieve(ix, m0, k) >> (retrieve(ix, m1) ** ... ** retrieve(ix, mn))` becomes
/// one retrieval that computes the features from the candidates' postings.
inline RewriteRule rule_feature_fusion()
{
    return {"feature_fusion", [](const NodePtr& n) -> NodePtr {
                if (n->kind != NodeKind::then) {
                    return nullptr;
                }
                for (std::size_t i = 0; i + 1 < n->children.size(); ++i) {
                    const auto* first = detail::as_retrieve(n->children[i]);
                    const auto& features = n->children[i + 1];
                    if (first == nullptr || features->kind != NodeKind::feat_union) {
                        continue;
                    }
                    std::vector<WeightingModel> models;
                    for (const auto& c : features->children) {
                        const auto* r = detail::as_retrieve(c);
                        if (r == nullptr || !(r->index() == first->index())) {
                            models.clear();
                            break;
                        }
                        models.push_back(r->model());
                    }
                    if (models.empty()) {
                        continue;
                    }
                    auto fused = fused_feature_retrieve(first->index(), first->model(), first->k(), std::move(models));
                    std::vector<NodePtr> children(n->children.begin(), n->children.begin() + static_cast<long>(i));
                    children.push_back(fused);
                    children.insert(children.end(), n->children.begin() + static_cast<long>(i) + 2, n->children.end());
                    if (children.size() == 1) {
                        return children.front();
                    }
                    return detail::with_children(n, std::move(children));
                }
                return nullptr;
            }};
}

inline RewriteRule rule_canonicalize() { return {"canonicalize", detail::canonicalize_local}; }

inline std::vector<RewriteRule> default_rules()
{
    return {rule_canonicalize(), rule_cutoff_pushdown(), rule_feature_fusion()};
}

namespace detail {

/// One innermost-first pass: children first, then the first applicable rule at this node.
inline NodePtr rewrite_pass(const NodePtr& n, const std::vector<RewriteRule>& rules, std::vector<std::string>& fired)
{
    std::vector<NodePtr> children;
    bool changed = false;
    for (const auto& c : n->children) {
        children.push_back(rewrite_pass(c, rules, fired));
        changed = changed || children.back() != c;
    }
    NodePtr current = changed ? with_children(n, std::move(children)) : n;
    for (const auto& rule : rules) {
        if (auto next = rule.apply(current)) {
            fired.push_back(rule.name);
            return next;
        }
    }
    return current;
}

}  // namespace detail

struct CompileResult {
    NodePtr plan;
    std::vector<std::string> fired;  // rule names in firing order
    int passes = 0;
};

inline constexpr int kMaxRewritePasses = 100;

/// Applies the rules to a fixpoint and reports which fired.
inline CompileResult compile_traced(const NodePtr& node, const std::vector<RewriteRule>& rules = default_rules())
{
    CompileResult result{node, {}, 0};
    while (true) {
        if (result.passes >= kMaxRewritePasses) {
            throw RuleNonTermination("rewriting did not reach a fixpoint after " + std::to_string(kMaxRewritePasses)
                                     + " passes");
        }
        ++result.passes;
        auto before = result.fired.size();
        result.plan = detail::rewrite_pass(result.plan, rules, result.fired);
        if (result.fired.size() == before) {
            return result;
        }
    }
}

inline NodePtr compile(const NodePtr& node, const std::vector<RewriteRule>& rules = default_rules())
{
    return compile_traced(node, rules).plan;
}

}  // namespace pipert
