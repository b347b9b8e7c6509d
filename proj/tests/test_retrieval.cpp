#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "test_support.hpp"

using namespace pipert;

namespace {

/// Independent per-document scorer written straight from the model formulas.
double oracle_score(const Index& ix, const std::string& model, const std::vector<std::pair<std::string, double>>& q,
                    std::uint32_t docid)
{
    double n = ix.stats().num_docs;
    double avdl = ix.stats().avg_doclen;
    double dl = ix.doclen(docid);
    double total = 0.0;
    for (const auto& [term, w] : q) {
        auto id = ix.term_id(term);
        if (!id) {
            continue;
        }
        double tf = 0.0;
        for (const auto& p : ix.postings(*id)) {
            if (p.docid == docid) {
                tf = p.tf;
            }
        }
        double df = ix.lexicon()[*id].df;
        double cf = static_cast<double>(ix.lexicon()[*id].cf);
        double norm = 1.2 * (1.0 - 0.75 + 0.75 * dl / avdl);
        if (model == "BM25") {
            if (tf > 0) {
                total += w * std::log(1.0 + (n - df + 0.5) / (df + 0.5)) * tf * 2.2 / (tf + norm);
            }
        } else if (model == "TFIDF") {
            if (tf > 0) {
                total += w * std::log2(n / df) * tf / (tf + norm);
            }
        } else {
            double mu = 2500.0;
            double t = static_cast<double>(ix.stats().total_tokens);
            total += w * (std::log(1.0 + tf / (mu * cf / t)) + std::log(mu / (dl + mu)));
        }
    }
    return total;
}

WeightingModel model_of(const std::string& name)
{
    if (name == "BM25") {
        return BM25{};
    }
    if (name == "TFIDF") {
        return TFIDF{};
    }
    return QLDirichlet{};
}

Query weighted(const std::string& qid, std::vector<std::pair<std::string, double>> terms)
{
    return Query{qid, "", TermWeights(terms.begin(), terms.end())};
}

}  // namespace

TEST(WeightingModel, Bm25HandValue)
{
    CollectionStats s{4, 16, 4.0};
    // ln(1 + 2.5/2.5) * 2*2.2 / (2 + 1.2) = ln 2 * 1.375
    EXPECT_NEAR(wmodel_score(BM25{}, 2, 2, 5, 4, s), std::log(2.0) * 4.4 / 3.2, 1e-15);
    EXPECT_NEAR(wmodel_score(BM25{}, 2, 2, 5, 4, s), 0.9530773, 1e-7);
}

TEST(WeightingModel, ZeroQueryWeight)
{
    CollectionStats s{10, 100, 10.0};
    for (const auto& m : {WeightingModel(BM25{}), WeightingModel(TFIDF{}), WeightingModel(QLDirichlet{})}) {
        EXPECT_EQ(wmodel_score(m, 3, 2, 7, 12, s, 0.0), 0.0) << m.name();
    }
}

TEST(WeightingModel, QlBackgroundTermForAbsentTerm)
{
    CollectionStats s{10, 100, 10.0};
    EXPECT_DOUBLE_EQ(wmodel_score(QLDirichlet{}, 0, 2, 7, 12, s), std::log(2500.0 / (12.0 + 2500.0)));
}

TEST(WeightingModel, MonotoneInTf)
{
    CollectionStats s{100, 2000, 20.0};
    for (const auto& m : {WeightingModel(BM25{}), WeightingModel(TFIDF{}), WeightingModel(QLDirichlet{})}) {
        for (std::uint32_t dl : {5U, 20U, 80U}) {
            double prev = wmodel_score(m, 1, 10, 40, dl, s);
            for (std::uint32_t tf = 2; tf < 30; ++tf) {
                double cur = wmodel_score(m, tf, 10, 40, dl, s);
                EXPECT_GT(cur, prev) << m.name() << " tf=" << tf;
                prev = cur;
            }
        }
    }
}

TEST(WeightingModel, Validation)
{
    EXPECT_THROW(WeightingModel(BM25{0.0, 0.5}), InvalidModel);
    EXPECT_THROW(WeightingModel(BM25{1.2, 1.5}), InvalidModel);
    EXPECT_THROW(WeightingModel(QLDirichlet{0.0}), InvalidModel);
    EXPECT_THROW((void)wmodel_score(BM25{}, 1, 1, 1, 1, CollectionStats{0, 0, 0.0}), DegenerateStats);
    EXPECT_EQ(WeightingModel(BM25{}).name(), "BM25");
    EXPECT_EQ(WeightingModel(BM25{0.9, 0.4}).name(), "BM25(k1=0.9,b=0.4)");
    EXPECT_EQ(WeightingModel(QLDirichlet{1000}).name(), "QL(mu=1000)");
}

TEST(Exhaustive, MatchesBruteForceOracle)
{
    auto ref = testing_support::tiny_index();
    const auto& ix = ref.get();
    for (const std::string model : {"BM25", "TFIDF", "QL"}) {
        auto q = weighted("q", {{"fox", 1.0}, {"quick", 1.0}, {"lazi", 0.5}});
        auto r = exhaustive_topk(ix, q, model_of(model), 100);
        std::map<std::string, double> got;
        for (const auto& row : r.rows) {
            got[row.docno] = row.score.value();
        }
        std::size_t matching = 0;
        for (std::uint32_t d = 0; d < ix.num_docs(); ++d) {
            bool any = false;
            for (const auto* t : {"fox", "quick", "lazi"}) {
                for (const auto& p : ix.postings(*ix.term_id(t))) {
                    any = any || p.docid == d;
                }
            }
            if (!any) {
                EXPECT_EQ(got.count(ix.docno(d)), 0U);
                continue;
            }
            ++matching;
            ASSERT_EQ(got.count(ix.docno(d)), 1U) << model << " " << ix.docno(d);
            EXPECT_NEAR(got[ix.docno(d)], oracle_score(ix, model, *q.terms, d), 1e-12) << model;
        }
        EXPECT_EQ(r.rows.size(), matching);
    }
}

TEST(Exhaustive, UnknownTermsAndArgmax)
{
    auto ref = testing_support::tiny_index();
    auto none = exhaustive_topk(ref.get(), Query{"q", "zebra unicorn", std::nullopt}, BM25{}, 10);
    EXPECT_TRUE(none.rows.empty());
    auto all = exhaustive_topk(ref.get(), Query{"q", "fox quick", std::nullopt}, BM25{}, 100);
    auto top = exhaustive_topk(ref.get(), Query{"q", "fox quick", std::nullopt}, BM25{}, 1);
    ASSERT_EQ(top.rows.size(), 1U);
    EXPECT_EQ(top.rows[0].docno, all.rows[0].docno);
    EXPECT_THROW((void)exhaustive_topk(ref.get(), Query{"q", "fox", std::nullopt}, BM25{}, 0), InvalidK);
}

TEST(Exhaustive, EmptyIndexGivesEmptyResult)
{
    std::shared_ptr<const Index> ix(IndexBuilder().build());
    auto r = exhaustive_topk(*ix, Query{"q", "anything", std::nullopt}, BM25{}, 10);
    EXPECT_TRUE(r.rows.empty());
}

TEST(MaxScore, IdenticalToExhaustive)
{
    auto corpus = testing_support::zipf_corpus(3000, 400, 5, 60, 7);
    const auto& ix = *corpus.index;
    std::mt19937_64 rng(11);
    for (int i = 0; i < 60; ++i) {
        TermWeights terms;
        auto n = 1 + rng() % 4;
        for (std::size_t t = 0; t < n; ++t) {
            terms.emplace_back("t" + std::to_string(rng() % 400), 1.0 + static_cast<double>(rng() % 3));
        }
        Query q{"q" + std::to_string(i), "", terms};
        for (const auto& model : {WeightingModel(BM25{}), WeightingModel(TFIDF{}), WeightingModel(QLDirichlet{})}) {
            for (long long k : {1LL, 10LL, 100LL}) {
                auto a = exhaustive_topk(ix, q, model, k);
                auto b = maxscore_topk(ix, q, model, k);
                ASSERT_EQ(a, b) << model.name() << " k=" << k << " query " << i;
            }
        }
    }
}

TEST(MaxScore, SkipsPostingsOnFrequentTerms)
{
    auto corpus = testing_support::zipf_corpus(5000, 500, 10, 80, 3);
    PruningStats exhaustive;
    PruningStats pruned;
    Query q{"q", "", TermWeights{{"t0", 1.0}, {"t150", 1.0}}};
    auto a = exhaustive_topk(*corpus.index, q, BM25{}, 10, &exhaustive);
    auto b = maxscore_topk(*corpus.index, q, BM25{}, 10, &pruned);
    EXPECT_EQ(a, b);
    EXPECT_EQ(exhaustive.postings_skipped, 0U);
    EXPECT_GT(pruned.postings_skipped, 0U);
    EXPECT_EQ(pruned.postings_total, exhaustive.postings_total);
    EXPECT_EQ(pruned.postings_evaluated + pruned.postings_skipped, pruned.postings_total);
}

TEST(Rescore, SameModelIsIdempotentAndKeysPreserved)
{
    auto ref = testing_support::tiny_index();
    Query q{"q", "quick fox dog", std::nullopt};
    auto first = exhaustive_topk(ref.get(), q, BM25{}, 100);
    auto again = rescore(ref.get(), q, BM25{}, first);
    EXPECT_EQ(again, first);
    auto ql = rescore(ref.get(), q, QLDirichlet{}, first);
    ASSERT_EQ(ql.rows.size(), first.rows.size());
    auto terms = query_term_weights(q, ref.get().options());
    for (const auto& row : ql.rows) {
        EXPECT_NEAR(row.score.value(), oracle_score(ref.get(), "QL", terms, *ref.get().docid(row.docno)), 1e-12);
    }
    EXPECT_TRUE(rescore(ref.get(), q, BM25{}, ResultFrame{}).rows.empty());
}

TEST(Rescore, UnknownDocno)
{
    auto ref = testing_support::tiny_index();
    Query q{"q", "fox", std::nullopt};
    EXPECT_THROW((void)rescore(ref.get(), q, BM25{}, testing_support::frame_of({{"q", "nope", 1.0}})), UnknownDocno);
}

TEST(FeatureRetrieve, FeaturesEqualRescore)
{
    auto corpus = testing_support::zipf_corpus(2000, 300, 5, 50, 5);
    const auto& ix = *corpus.index;
    std::vector<WeightingModel> features{TFIDF{}, QLDirichlet{}, BM25{0.9, 0.4}};
    for (int i = 0; i < 20; ++i) {
        Query q{"q", "", TermWeights{{"t" + std::to_string(i), 1.0}, {"t" + std::to_string(20 + i * 7), 1.0}}};
        auto fat = feature_retrieve(ix, q, BM25{}, 50, features);
        auto plain = exhaustive_topk(ix, q, BM25{}, 50);
        ASSERT_EQ(fat.rows.size(), plain.rows.size());
        EXPECT_EQ(fat.feature_names, (std::vector<std::string>{"TFIDF", "QL", "BM25(k1=0.9,b=0.4)"}));
        for (std::size_t m = 0; m < features.size(); ++m) {
            auto expected = rescore(ix, q, features[m], plain);
            std::map<std::string, double> by_doc;
            for (const auto& row : expected.rows) {
                by_doc[row.docno] = row.score.value();
            }
            for (const auto& row : fat.rows) {
                EXPECT_NEAR(row.features[m], by_doc[row.docno], 1e-9);
            }
        }
        for (std::size_t r = 0; r < fat.rows.size(); ++r) {
            EXPECT_EQ(fat.rows[r].docno, plain.rows[r].docno);
            EXPECT_EQ(fat.rows[r].score, plain.rows[r].score);
        }
    }
}

TEST(FeatureRetrieve, SelfFeatureEqualsScore)
{
    auto ref = testing_support::tiny_index();
    auto r = feature_retrieve(ref.get(), Query{"q", "quick fox", std::nullopt}, BM25{}, 3, {BM25{}});
    for (const auto& row : r.rows) {
        EXPECT_EQ(row.features.at(0), row.score.value());
    }
    EXPECT_THROW((void)feature_retrieve(ref.get(), Query{"q", "fox", std::nullopt}, BM25{}, 3, {}), ContractViolation);
}

TEST(Rm3, LambdaZeroKeepsOriginalTermsUniform)
{
    auto ref = testing_support::tiny_index();
    Query q{"q", "quick fox", std::nullopt};
    auto first = exhaustive_topk(ref.get(), q, BM25{}, 10);
    auto out = rm3_expand(ref.get(), q, first, RM3Params{3, 10, 0.0});
    ASSERT_TRUE(out.terms.has_value());
    EXPECT_EQ(*out.terms, (TermWeights{{"quick", 0.5}, {"fox", 0.5}}));
}

TEST(Rm3, HandComputedMixture)
{
    IndexOptions o;
    o.stem = false;
    o.stopwords = {};
    std::shared_ptr<const Index> ix(build_index(std::vector<CorpusDocument>{{"a", "x y y"}, {"b", "x z"}, {"c", "w"}}, o));
    Query q{"q", "x", std::nullopt};
    ResultFrame fb = testing_support::frame_of({{"q", "a", 1.0}, {"q", "b", 0.0}});
    auto out = rm3_expand(*ix, q, fb, RM3Params{2, 10, 0.5});
    // softmax weights over scores (1, 0)
    double wa = std::exp(1.0) / (std::exp(1.0) + 1.0);
    double wb = 1.0 / (std::exp(1.0) + 1.0);
    double px = wa / 3.0 + wb / 2.0;
    double py = wa * 2.0 / 3.0;
    double pz = wb / 2.0;
    std::map<std::string, double> expected{{"x", 0.5 + 0.5 * px}, {"y", 0.5 * py}, {"z", 0.5 * pz}};
    double total = 0.0;
    for (const auto& [t, w] : expected) {
        total += w;
    }
    std::map<std::string, double> got(out.terms->begin(), out.terms->end());
    ASSERT_EQ(got.size(), 3U);
    for (const auto& [t, w] : expected) {
        EXPECT_NEAR(got[t], w / total, 1e-12) << t;
    }
}

TEST(Rm3, WeightsNormalizedAndBounded)
{
    auto ref = testing_support::tiny_index();
    Query q{"q", "fox dog", std::nullopt};
    auto first = exhaustive_topk(ref.get(), q, BM25{}, 10);
    for (int fb_terms : {0, 1, 3, 10}) {
        auto out = rm3_expand(ref.get(), q, first, RM3Params{3, fb_terms, 0.6});
        double sum = 0.0;
        for (const auto& [t, w] : *out.terms) {
            EXPECT_GT(w, 0.0);
            sum += w;
        }
        EXPECT_NEAR(sum, 1.0, 1e-9);
        EXPECT_LE(out.terms->size(), 2U + static_cast<std::size_t>(fb_terms));
        std::map<std::string, double> got(out.terms->begin(), out.terms->end());
        EXPECT_GE(got["fox"], 0.4 * 0.5 - 1e-12);
        EXPECT_GE(got["dog"], 0.4 * 0.5 - 1e-12);
    }
}

TEST(Rm3, Errors)
{
    auto ref = testing_support::tiny_index();
    Query q{"q", "fox", std::nullopt};
    EXPECT_THROW((void)rm3_expand(ref.get(), q, ResultFrame{}), EmptyFeedback);
    IndexOptions o;
    o.build_direct = false;
    auto nodirect = testing_support::tiny_index(o);
    auto first = exhaustive_topk(nodirect.get(), q, BM25{}, 10);
    EXPECT_THROW((void)rm3_expand(nodirect.get(), q, first), DirectIndexMissing);
}
