#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "test_support.hpp"

using namespace pipert;
using testing_support::queries;

TEST(Retrieve, TopKSortedPerQuery)
{
    auto ix = testing_support::tiny_index();
    auto q = queries({{"q1", "quick fox"}, {"q2", "lazy dog"}});
    auto out = make_retrieve(ix, BM25{}, 2)->transform(Frames{q, std::nullopt});
    EXPECT_EQ(out.queries, q);
    ASSERT_TRUE(out.results);
    std::map<std::string, int> per;
    for (const auto& row : out.results->rows) {
        ++per[row.qid];
    }
    EXPECT_EQ(per["q1"], 2);
    EXPECT_EQ(per["q2"], 2);
    EXPECT_THROW(make_retrieve(ix, BM25{}, 0), InvalidK);
}

TEST(Retrieve, RescoreModeKeepsKeys)
{
    auto ix = testing_support::tiny_index();
    auto q = queries({{"q1", "quick fox"}});
    auto first = make_retrieve(ix, BM25{}, 3)->transform(Frames{q, std::nullopt});
    auto second = make_retrieve(ix, QLDirichlet{}, 1)->transform(first);
    std::set<std::string> a;
    std::set<std::string> b;
    for (const auto& r : first.results->rows) {
        a.insert(r.docno);
    }
    for (const auto& r : second.results->rows) {
        b.insert(r.docno);
    }
    EXPECT_EQ(a, b);
}

TEST(Retrieve, ForeignQidIsContractViolation)
{
    auto ix = testing_support::tiny_index();
    Frames in{queries({{"q1", "fox"}}), testing_support::frame_of({{"q9", "d1", 1.0}})};
    EXPECT_THROW((void)make_retrieve(ix, BM25{})->transform(in), ContractViolation);
}

TEST(Rewrite, TokenizesText)
{
    auto out = make_rewrite()->transform(Frames{queries({{"q", "The quick fox"}, {"r", "run running"}}), std::nullopt});
    EXPECT_EQ(*out.queries.queries[0].terms, (TermWeights{{"quick", 1.0}, {"fox", 1.0}}));
    EXPECT_EQ(*out.queries.queries[1].terms, (TermWeights{{"run", 2.0}}));
    EXPECT_EQ(out.queries.queries[0].text, "The quick fox");
    EXPECT_FALSE(out.results.has_value());
}

TEST(Rewrite, WeightedQueriesUnchangedAndResultsPassThrough)
{
    QueryFrame q{{Query{"q", "ignored", TermWeights{{"x", 0.3}}}}};
    auto r = testing_support::frame_of({{"q", "d1", 1.0}});
    auto out = make_rewrite()->transform(Frames{q, r});
    EXPECT_EQ(out.queries, q);
    EXPECT_EQ(*out.results, r);
}

TEST(Expand, NeedsResults)
{
    auto ix = testing_support::tiny_index();
    EXPECT_THROW((void)make_expand(ix)->transform(Frames{queries({{"q", "fox"}}), std::nullopt}), MissingResults);
}

TEST(Expand, DropsResultsAndBoundsTerms)
{
    auto ix = testing_support::tiny_index();
    auto first = make_retrieve(ix, BM25{})->transform(Frames{queries({{"q", "quick fox"}}), std::nullopt});
    auto out = make_expand(ix, RM3Params{3, 2, 0.6})->transform(first);
    EXPECT_FALSE(out.results.has_value());
    EXPECT_LE(out.queries.queries[0].terms->size(), 2U + 2U);
}

TEST(Extract, DoclenAndIdentity)
{
    auto ix = testing_support::tiny_index();
    auto first = make_retrieve(ix, BM25{})->transform(Frames{queries({{"q", "fox"}}), std::nullopt});
    auto same = make_extract(ix, {})->transform(first);
    EXPECT_EQ(*same.results, *first.results);
    auto out = make_extract(ix, {FeatureSpec::doclen()})->transform(first);
    EXPECT_EQ(out.results->feature_names, (std::vector<std::string>{"doclen"}));
    for (const auto& row : out.results->rows) {
        EXPECT_EQ(row.features.at(0), ix.get().doclen(*ix.get().docid(row.docno)));
    }
    EXPECT_THROW((void)make_extract(ix, {FeatureSpec::doclen()})->transform(out), FeatureNameCollision);
}

TEST(Extract, MatchesFatFeatures)
{
    auto ix = testing_support::tiny_index();
    Query q{"q", "quick fox dog", std::nullopt};
    auto fat = feature_retrieve(ix.get(), q, BM25{}, 10, {TFIDF{}, QLDirichlet{}});
    auto first = make_retrieve(ix, BM25{}, 10)->transform(Frames{QueryFrame{{q}}, std::nullopt});
    auto out = make_extract(ix, {FeatureSpec{TFIDF{}}, FeatureSpec{QLDirichlet{}}})->transform(first);
    ASSERT_EQ(out.results->rows.size(), fat.rows.size());
    for (std::size_t i = 0; i < fat.rows.size(); ++i) {
        EXPECT_EQ(out.results->rows[i].docno, fat.rows[i].docno);
        for (std::size_t f = 0; f < 2; ++f) {
            EXPECT_NEAR(out.results->rows[i].features[f], fat.rows[i].features[f], 1e-9);
        }
    }
}

namespace {

ResultFrame feature_frame(std::initializer_list<std::tuple<const char*, const char*, std::vector<double>>> rows,
                          std::vector<std::string> names)
{
    ResultFrame r;
    r.feature_names = std::move(names);
    for (const auto& [q, d, f] : rows) {
        r.rows.push_back(ResultRow{q, d, 0.0, std::nullopt, f});
    }
    return r;
}

}  // namespace

TEST(LinearRerank, ProjectionAndZeroWeights)
{
    auto r = feature_frame({{"q", "a", {1.0, 9.0}}, {"q", "b", {3.0, 0.0}}, {"q", "c", {2.0, 5.0}}}, {"f1", "f2"});
    auto rr = make_rerank_linear();
    rr->set_weights({1.0, 0.0});
    auto out = rr->transform(Frames{queries({{"q", "x"}}), r});
    EXPECT_EQ(out.results->rows[0].docno, "b");
    EXPECT_EQ(out.results->rows[1].docno, "c");
    EXPECT_EQ(out.results->rows[2].docno, "a");
    EXPECT_EQ(out.results->rows[0].features, (std::vector<double>{3.0, 0.0}));

    rr->set_weights({0.0, 0.0});
    out = rr->transform(Frames{queries({{"q", "x"}}), r});
    EXPECT_EQ(out.results->rows[0].docno, "a");
    EXPECT_EQ(out.results->rows[2].docno, "c");
    EXPECT_EQ(out.results->rows[1].score.value(), 0.0);
}

TEST(LinearRerank, InvariantToRowOrder)
{
    auto r = feature_frame({{"q", "a", {1.0, 2.0}}, {"q", "b", {3.0, -1.0}}, {"q", "c", {2.0, 0.5}}, {"q", "d", {0.0, 4.0}}},
                           {"f1", "f2"});
    auto rr = make_rerank_linear();
    rr->set_weights({0.5, 0.25});
    auto base = rr->transform(Frames{queries({{"q", "x"}}), r});
    std::mt19937 rng(3);
    for (int i = 0; i < 5; ++i) {
        auto shuffled = r;
        std::shuffle(shuffled.rows.begin(), shuffled.rows.end(), rng);
        EXPECT_EQ(*rr->transform(Frames{queries({{"q", "x"}}), shuffled}).results, *base.results);
    }
}

TEST(LinearRerank, Errors)
{
    auto r = feature_frame({{"q", "a", {1.0, 2.0}}}, {"f1", "f2"});
    auto rr = make_rerank_linear();
    EXPECT_THROW((void)rr->transform(Frames{queries({{"q", "x"}}), r}), NotTrained);
    rr->set_weights({1.0, 2.0, 3.0});
    EXPECT_THROW((void)rr->transform(Frames{queries({{"q", "x"}}), r}), FeatureLengthMismatch);
    EXPECT_THROW((void)rr->transform(Frames{queries({{"q", "x"}}), std::nullopt}), MissingResults);
}

TEST(LinearRerank, JsonRoundTrip)
{
    auto rr = make_rerank_linear();
    EXPECT_THROW((void)rr->to_json(), NotTrained);
    rr->set_weights({0.25, -2.0}, {"BM25", "doclen"});
    auto j = rr->to_json();
    EXPECT_EQ(j.dump(), R"({"feature_names":["BM25","doclen"],"weights":[0.25,-2.0]})");
    auto other = make_rerank_linear();
    other->load_json(j);
    EXPECT_EQ(other->weights(), rr->weights());
    EXPECT_EQ(other->feature_names(), rr->feature_names());
    EXPECT_THROW(other->load_json(nlohmann::json{{"weights", {1.0}}}), ParseError);
}

TEST(LinearRerank, SeparableTaskReachesPerfectMap)
{
    // feature 1 equals the label; feature 0 is anti-correlated noise
    ResultFrame train;
    train.feature_names = {"noise", "label"};
    QrelSet qrels;
    QueryFrame q;
    std::mt19937 rng(5);
    for (int qi = 0; qi < 8; ++qi) {
        auto qid = "q" + std::to_string(qi);
        q.queries.push_back(Query{qid, "x", std::nullopt});
        for (int d = 0; d < 12; ++d) {
            int label = d % 4 == 0 ? 1 : 0;
            auto docno = qid + "d" + std::to_string(d);
            double noise = (label ? -1.0 : 1.0) * (1.0 + static_cast<double>(rng() % 100) / 50.0);
            train.rows.push_back(ResultRow{qid, docno, 0.0, std::nullopt, {noise, static_cast<double>(label)}});
            qrels.add(Qrel{qid, docno, label});
        }
    }
    auto rr = make_rerank_linear();
    Frames in{q, train};
    rr->fit(in, qrels, in, qrels);
    ASSERT_TRUE(rr->trained());
    EXPECT_DOUBLE_EQ(rr->log().final_training, 1.0);
    auto out = rr->transform(in);
    double total = 0.0;
    for (const auto& [qid, ranking] : rankings_by_query(*out.results)) {
        total += evaluate_metric("map", ranking, *qrels.for_query(qid));
    }
    EXPECT_DOUBLE_EQ(total / 8.0, 1.0);
}

TEST(LinearRerank, TrainingNeverWorseThanUniform)
{
    ResultFrame train;
    train.feature_names = {"a", "b", "c"};
    QrelSet qrels;
    QueryFrame q;
    std::mt19937 rng(9);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int qi = 0; qi < 10; ++qi) {
        auto qid = "q" + std::to_string(qi);
        q.queries.push_back(Query{qid, "x", std::nullopt});
        for (int d = 0; d < 15; ++d) {
            auto docno = "d" + std::to_string(d);
            int label = u(rng) < 0.3 ? 1 : 0;
            train.rows.push_back(ResultRow{qid, docno, 0.0, std::nullopt, {u(rng) + label * 0.3, u(rng), u(rng) - label * 0.2}});
            qrels.add(Qrel{qid, docno, label});
        }
    }
    auto mean_map = [&](const std::vector<double>& w) {
        auto rr = make_rerank_linear();
        rr->set_weights(w);
        auto out = rr->transform(Frames{q, train});
        double total = 0.0;
        int n = 0;
        for (const auto& [qid, ranking] : rankings_by_query(*out.results)) {
            const auto* j = qrels.for_query(qid);
            if (j && std::any_of(j->begin(), j->end(), [](const auto& kv) { return kv.second > 0; })) {
                total += evaluate_metric("map", ranking, *j);
                ++n;
            }
        }
        return total / n;
    };
    auto rr = make_rerank_linear();
    rr->fit(Frames{q, train}, qrels, Frames{}, QrelSet{});
    EXPECT_GE(mean_map(rr->weights()), mean_map({1.0 / 3, 1.0 / 3, 1.0 / 3}));
    EXPECT_LE(rr->log().sweeps, 25);
}

TEST(LinearRerank, DegenerateQueriesSkipped)
{
    ResultFrame train;
    train.feature_names = {"f"};
    train.rows = {ResultRow{"q1", "a", 0.0, std::nullopt, {1.0}}, ResultRow{"q1", "b", 0.0, std::nullopt, {0.0}},
                  ResultRow{"q2", "c", 0.0, std::nullopt, {1.0}}};
    QrelSet qrels({{"q1", "a", 1}, {"q2", "c", 0}});
    auto rr = make_rerank_linear();
    rr->fit(Frames{queries({{"q1", "x"}, {"q2", "y"}}), train}, qrels, Frames{}, QrelSet{});
    EXPECT_EQ(rr->log().skipped_queries, 1);

    auto none = make_rerank_linear();
    EXPECT_THROW(none->fit(Frames{queries({{"q2", "y"}}), train}, QrelSet({{"q2", "c", 0}}), Frames{}, QrelSet{}),
                 EmptyTrainingSet);
    EXPECT_THROW(none->fit(Frames{queries({{"q2", "y"}}), ResultFrame{}}, qrels, Frames{}, QrelSet{}), EmptyTrainingSet);
}

TEST(Generic, IdentityAndEmpty)
{
    auto id = make_generic("id", [](const Frames& f) { return f; });
    Frames in{queries({{"q", "x"}}), testing_support::frame_of({{"q", "d", 1.0}})};
    auto out = id->transform(in);
    EXPECT_EQ(out.queries, in.queries);
    EXPECT_EQ(*out.results, *in.results);
    auto drop = make_generic("drop", [](const Frames& f) { return Frames{f.queries, ResultFrame{}}; });
    EXPECT_TRUE(drop->transform(in).results->rows.empty());
}

TEST(Generic, ContractViolations)
{
    Frames in{queries({{"q", "x"}}), testing_support::frame_of({{"q", "d", 1.0}})};
    auto dup = make_generic("dup", [](const Frames& f) {
        auto out = f;
        out.results->rows.push_back(out.results->rows[0]);
        return out;
    });
    EXPECT_THROW((void)dup->transform(in), ContractViolation);
    auto invent = make_generic("invent", [](const Frames& f) {
        auto out = f;
        out.queries.queries.push_back(Query{"new", "", std::nullopt});
        return out;
    });
    EXPECT_THROW((void)invent->transform(in), ContractViolation);
    auto bad_features = make_generic("bad", [](const Frames& f) {
        auto out = f;
        out.results->feature_names = {"x"};
        return out;
    });
    EXPECT_THROW((void)bad_features->transform(in), ContractViolation);
}

TEST(Fit, NoTrainableStage)
{
    auto ix = testing_support::tiny_index();
    Pipeline p = make_retrieve(ix, BM25{});
    EXPECT_THROW(p.fit(queries({{"q", "fox"}}), QrelSet({{"q", "d1", 1}})), NoTrainableStage);
}

TEST(Fit, ComposedPipelineTrainsTerminalStage)
{
    auto ix = testing_support::tiny_index();
    auto rr = make_rerank_linear();
    Pipeline bm25 = make_retrieve(ix, BM25{});
    Pipeline pipe = bm25 >> feature_union(Pipeline(make_retrieve(ix, TFIDF{})), Pipeline(make_extract(ix, {FeatureSpec::doclen()}))) >> rr;
    auto q = queries({{"q1", "fox"}, {"q2", "quick"}, {"q3", "lazy dog"}});
    QrelSet qrels({{"q1", "d5", 1}, {"q2", "d2", 1}, {"q3", "d4", 1}});
    EXPECT_FALSE(rr->trained());
    pipe.fit(q, qrels, q, qrels);
    ASSERT_TRUE(rr->trained());
    // extract contributes only its own feature; the TFIDF operand has no features, so its score is used
    EXPECT_EQ(rr->feature_names(), (std::vector<std::string>{"TFIDF", "doclen"}));
    auto out = pipe.transform(q);
    EXPECT_EQ(out.results->feature_names.size(), 2U);
}
