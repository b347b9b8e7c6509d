#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace pipert;
using testing_support::frame_of;

TEST(Score, UndefinedValueThrows)
{
    Score s = Score::undefined();
    EXPECT_FALSE(s.defined());
    EXPECT_THROW((void)s.value(), UndefinedScore);
    EXPECT_EQ(Score(1.5).value(), 1.5);
    EXPECT_EQ(Score::undefined(), Score::undefined());
    EXPECT_NE(Score(0.0), Score::undefined());
}

TEST(QueryFrame, RejectsDuplicateQid)
{
    QueryFrame q{{Query{"q1", "a", std::nullopt}, Query{"q1", "b", std::nullopt}}};
    EXPECT_THROW(q.validate(), ContractViolation);
}

TEST(ResultFrame, ValidateChecksKeysAndFeatureLengths)
{
    auto r = frame_of({{"q1", "d1", 1.0}, {"q1", "d1", 2.0}});
    EXPECT_THROW(r.validate(), ContractViolation);

    ResultFrame f;
    f.feature_names = {"a", "b"};
    f.rows.push_back(ResultRow{"q1", "d1", 1.0, std::nullopt, {1.0}});
    EXPECT_THROW(f.validate(), ContractViolation);
    f.rows[0].features.push_back(2.0);
    EXPECT_NO_THROW(f.validate());
}

TEST(NaturalJoin, InnerJoinInLeftOrder)
{
    auto r1 = frame_of({{"q1", "d2", 0.5}, {"q1", "d1", 1.0}, {"q2", "d1", 3.0}});
    auto r2 = frame_of({{"q1", "d1", 0.25}, {"q1", "d3", 0.9}, {"q1", "d2", 0.1}});
    auto joined = natural_join(r1, r2);
    ASSERT_EQ(joined.size(), 2U);
    EXPECT_EQ(joined[0].left, 0U);
    EXPECT_EQ(joined[0].right, 2U);
    EXPECT_EQ(joined[1].left, 1U);
    EXPECT_EQ(joined[1].right, 0U);
}

TEST(GroupSort, DescendingWithDocnoTieBreak)
{
    auto r = group_sort(frame_of({{"q2", "b", 1.0}, {"q1", "z", 2.0}, {"q1", "a", 2.0}, {"q1", "m", 3.0}, {"q2", "a", 1.0}}));
    std::vector<std::string> order;
    for (const auto& row : r.rows) {
        order.push_back(row.qid + ":" + row.docno + ":" + std::to_string(*row.rank));
    }
    EXPECT_EQ(order, (std::vector<std::string>{"q2:a:0", "q2:b:1", "q1:m:0", "q1:a:1", "q1:z:2"}));
}

TEST(GroupSort, ByFeatureAscending)
{
    ResultFrame r;
    r.feature_names = {"f"};
    r.rows = {ResultRow{"q", "a", 0.0, std::nullopt, {3.0}}, ResultRow{"q", "b", 0.0, std::nullopt, {1.0}}};
    auto s = group_sort(r, SortKey::feature_at(0), SortOrder::ascending);
    EXPECT_EQ(s.rows[0].docno, "b");
    EXPECT_THROW((void)group_sort(r, SortKey::feature_at(4)), FeatureLengthMismatch);
}

TEST(GroupSort, UndefinedScoreIsAnError)
{
    ResultFrame r;
    r.rows.push_back(ResultRow{"q", "a", Score::undefined(), std::nullopt, {}});
    EXPECT_THROW((void)group_sort(r), UndefinedScore);
}

TEST(SelectTopK, KeepsKPerQuery)
{
    auto r = select_topk(frame_of({{"q1", "a", 1.0}, {"q1", "b", 3.0}, {"q1", "c", 2.0}, {"q2", "x", 1.0}}), 2);
    ASSERT_EQ(r.rows.size(), 3U);
    EXPECT_EQ(r.rows[0].docno, "b");
    EXPECT_EQ(r.rows[1].docno, "c");
    EXPECT_EQ(r.rows[2].docno, "x");
    EXPECT_THROW((void)select_topk(r, 0), InvalidK);
    EXPECT_THROW((void)select_topk(r, -3), InvalidK);
}

TEST(MapAttr, ErrorsNameTheRow)
{
    ResultFrame r;
    r.rows.push_back(ResultRow{"q1", "d9", Score::undefined(), std::nullopt, {}});
    try {
        (void)map_attr(r, [](const ResultRow& row) { return row.score.value() * 2.0; });
        FAIL() << "expected UndefinedScore";
    } catch (const UndefinedScore& e) {
        EXPECT_EQ(e.stage_path(), "row(q1,d9)");
    }
    auto doubled = map_attr(frame_of({{"q", "d", 1.5}}), [](const ResultRow& row) { return row.score.value() * 2.0; });
    EXPECT_EQ(doubled.rows[0].score.value(), 3.0);
}

TEST(GroupAggregate, MinAndMaxPerQuery)
{
    auto r = frame_of({{"q1", "a", 1.0}, {"q1", "b", -2.0}, {"q2", "c", 4.0}});
    auto mins = group_aggregate(r, Aggregate::min);
    auto maxs = group_aggregate(r, Aggregate::max);
    EXPECT_EQ(mins, (std::vector<std::pair<std::string, double>>{{"q1", -2.0}, {"q2", 4.0}}));
    EXPECT_EQ(maxs, (std::vector<std::pair<std::string, double>>{{"q1", 1.0}, {"q2", 4.0}}));
}

TEST(QrelSet, LabelsDefaultToZero)
{
    QrelSet q({{"q1", "d1", 2}, {"q1", "d2", 0}});
    EXPECT_EQ(q.label("q1", "d1"), 2);
    EXPECT_EQ(q.label("q1", "d9"), 0);
    EXPECT_EQ(q.label("q7", "d1"), 0);
    EXPECT_EQ(q.for_query("q7"), nullptr);
}
