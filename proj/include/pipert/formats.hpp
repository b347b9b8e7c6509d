#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pipert/errors.hpp"
#include "pipert/frames.hpp"

namespace pipert {

namespace detail {

inline std::ifstream open_input(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open '" + path + "'");
    }
    return in;
}

inline void strip_cr(std::string& line)
{
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
}

}  // namespace detail

/// Topics: one `qid<TAB>query text` per line. Blank lines are skipped.
inline QueryFrame read_topics(std::istream& in)
{
    QueryFrame frame;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        detail::strip_cr(line);
        if (line.empty()) {
            continue;
        }
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw ParseError("topics line " + std::to_string(lineno) + ": expected qid<TAB>text");
        }
        frame.queries.push_back(Query{line.substr(0, tab), line.substr(tab + 1), std::nullopt});
    }
    frame.validate();
    return frame;
}

inline QueryFrame read_topics(const std::string& path)
{
    auto in = detail::open_input(path);
    return read_topics(in);
}

/// TREC qrels: `qid 0 docno label` per line.
inline QrelSet read_qrels(std::istream& in)
{
    QrelSet qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream fields(line);
        std::string qid;
        std::string iter;
        std::string docno;
        int label = 0;
        if (!(fields >> qid)) {
            continue;
        }
        if (!(fields >> iter >> docno >> label)) {
            throw ParseError("qrels line " + std::to_string(lineno) + ": expected 'qid 0 docno label'");
        }
        qrels.add(Qrel{qid, docno, label});
    }
    return qrels;
}

inline QrelSet read_qrels(const std::string& path)
{
    auto in = detail::open_input(path);
    return read_qrels(in);
}

/// TREC run: `qid Q0 docno rank score tag`, 0-based ranks, six decimals.
inline void write_run(std::ostream& out, const ResultFrame& results, const std::string& tag)
{
    char buf[64];
    for (const auto& row : results.rows) {
        if (!row.rank) {
            throw ContractViolation("cannot write unranked row (" + row.qid + ", " + row.docno + ")");
        }
        std::snprintf(buf, sizeof(buf), "%.6f", row.score.value());
        out << row.qid << " Q0 " << row.docno << ' ' << *row.rank << ' ' << buf << ' ' << tag << '\n';
    }
}

/// Reads a TREC run back into a frame; validates the six-column layout.
inline ResultFrame read_run(std::istream& in)
{
    ResultFrame frame;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        detail::strip_cr(line);
        if (line.empty()) {
            continue;
        }
        std::istringstream fields(line);
        std::vector<std::string> cols;
        for (std::string col; fields >> col;) {
            cols.push_back(col);
        }
        if (cols.size() != 6) {
            throw ParseError("run line " + std::to_string(lineno) + ": expected 6 columns, got "
                             + std::to_string(cols.size()));
        }
        ResultRow row;
        row.qid = cols[0];
        row.docno = cols[2];
        try {
            row.rank = static_cast<std::uint32_t>(std::stoul(cols[3]));
            row.score = std::stod(cols[4]);
        } catch (const std::exception&) {
            throw ParseError("run line " + std::to_string(lineno) + ": bad rank or score");
        }
        frame.rows.push_back(std::move(row));
    }
    frame.validate();
    return frame;
}

struct CorpusDocument {
    std::string docno;
    std::string text;
};

/// Corpus: JSON lines with string fields `docno` and `text`.
template <typename Sink>
void for_each_jsonl_document(std::istream& in, Sink&& sink)
{
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        detail::strip_cr(line);
        if (line.find_first_not_of(" \t") == std::string::npos) {
            continue;
        }
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("corpus line " + std::to_string(lineno) + ": " + e.what());
        }
        if (!obj.is_object() || !obj.contains("docno") || !obj["docno"].is_string()
            || !obj.contains("text") || !obj["text"].is_string()) {
            throw ParseError("corpus line " + std::to_string(lineno)
                             + ": expected string fields 'docno' and 'text'");
        }
        sink(CorpusDocument{obj["docno"].get<std::string>(), obj["text"].get<std::string>()});
    }
}

inline std::vector<CorpusDocument> read_corpus_jsonl(const std::string& path)
{
    auto in = detail::open_input(path);
    std::vector<CorpusDocument> docs;
    for_each_jsonl_document(in, [&](CorpusDocument d) { docs.push_back(std::move(d)); });
    return docs;
}

}  // namespace pipert
