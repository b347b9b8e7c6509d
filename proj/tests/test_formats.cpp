#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace pipert;

TEST(Topics, TabSeparated)
{
    std::istringstream in("301\tinternational organized crime\r\n\n302\tpoliomyelitis and post-polio\n");
    auto q = read_topics(in);
    ASSERT_EQ(q.size(), 2U);
    EXPECT_EQ(q.queries[0].qid, "301");
    EXPECT_EQ(q.queries[0].text, "international organized crime");
    EXPECT_EQ(q.queries[1].text, "poliomyelitis and post-polio");
}

TEST(Topics, MalformedLineReportsLine)
{
    std::istringstream in("1\tok\nno tab here\n");
    try {
        (void)read_topics(in);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
    }
}

TEST(Qrels, FourColumns)
{
    std::istringstream in("q1 0 d1 1\nq1 0 d2 0\nq2 0 d3 2\n\n");
    auto q = read_qrels(in);
    EXPECT_EQ(q.label("q1", "d1"), 1);
    EXPECT_EQ(q.label("q2", "d3"), 2);
    std::istringstream bad("q1 0 d1\n");
    EXPECT_THROW((void)read_qrels(bad), ParseError);
}

TEST(Run, WriteThenReadBack)
{
    ResultFrame r;
    r.rows = {ResultRow{"q1", "d2", 2.5, 0, {}}, ResultRow{"q1", "d1", 1.25, 1, {}}};
    std::ostringstream out;
    write_run(out, r, "tag");
    EXPECT_EQ(out.str(), "q1 Q0 d2 0 2.500000 tag\nq1 Q0 d1 1 1.250000 tag\n");
    std::istringstream in(out.str());
    auto back = read_run(in);
    ASSERT_EQ(back.rows.size(), 2U);
    EXPECT_EQ(back.rows[1].docno, "d1");
    EXPECT_EQ(*back.rows[1].rank, 1U);
    EXPECT_DOUBLE_EQ(back.rows[0].score.value(), 2.5);
}

TEST(Run, UnrankedRowsCannotBeWritten)
{
    ResultFrame r;
    r.rows = {ResultRow{"q1", "d2", 2.5, std::nullopt, {}}};
    std::ostringstream out;
    EXPECT_THROW(write_run(out, r, "t"), ContractViolation);
}

TEST(Run, ColumnCountValidated)
{
    std::istringstream in("q1 Q0 d1 0 1.0\n");
    EXPECT_THROW((void)read_run(in), ParseError);
}

TEST(Corpus, JsonLines)
{
    std::istringstream in(R"({"docno": "a", "text": "hello world"}
{"docno": "b", "text": "café au lait"}
)");
    std::vector<CorpusDocument> docs;
    for_each_jsonl_document(in, [&](CorpusDocument d) { docs.push_back(std::move(d)); });
    ASSERT_EQ(docs.size(), 2U);
    EXPECT_EQ(docs[1].text, "caf\xc3\xa9 au lait");
    std::istringstream bad(R"({"docno": 3, "text": "x"})");
    EXPECT_THROW(for_each_jsonl_document(bad, [](const CorpusDocument&) {}), ParseError);
}
