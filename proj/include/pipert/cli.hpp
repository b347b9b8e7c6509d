#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pipert/compiler.hpp"
#include "pipert/dsl.hpp"
#include "pipert/errors.hpp"
#include "pipert/experiment.hpp"
#include "pipert/formats.hpp"
#include "pipert/index.hpp"
#include "pipert/pipeline.hpp"

namespace pipert::cli {

namespace detail {

inline std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open '" + path + "'");
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

/// The index is visible to programs as both `ix` and `index`.
inline dsl::Environment environment(const std::shared_ptr<const Index>& index, const std::string& program_path)
{
    dsl::Environment env;
    env.indexes.emplace("ix", IndexRef{"ix", index});
    env.indexes.emplace("index", IndexRef{"index", index});
    auto dir = std::filesystem::path(program_path).parent_path();
    env.base_dir = dir.empty() ? std::filesystem::path(".") : dir;
    return env;
}

inline std::shared_ptr<const Index> load_index(const std::string& dir)
{
    return std::shared_ptr<const Index>(read_index(dir));
}

inline std::vector<std::string> split_commas(const std::string& s)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

}  // namespace detail

struct IndexCommand {
    std::string corpus;
    std::string out;
    bool no_stem = false;
    bool no_direct = false;
};

inline void cmd_index(const IndexCommand& c, std::ostream& out)
{
    IndexOptions options;
    options.stem = !c.no_stem;
    options.build_direct = !c.no_direct;
    IndexBuilder builder(options);
    auto in = pipert::detail::open_input(c.corpus);
    for_each_jsonl_document(in, [&](const CorpusDocument& d) { builder.add(d.docno, d.text); });
    auto index = builder.build();
    write_index(*index, c.out);
    out << "documents: " << index->num_docs() << "\n"
        << "terms: " << index->num_terms() << "\n"
        << "tokens: " << index->stats().total_tokens << "\n";
}

struct RunCommand {
    std::string index;
    std::string topics;
    std::string pipeline;
    std::string out;
    long long k = 0;
    bool no_optimize = false;
    std::string tag = "pipert";
};

inline void cmd_run(const RunCommand& c, std::ostream& out)
{
    auto index = detail::load_index(c.index);
    auto node = dsl::parse_pipeline(detail::read_file(c.pipeline), detail::environment(index, c.pipeline));
    if (!c.no_optimize) {
        node = compile(node);
    }
    auto queries = read_topics(c.topics);
    auto result = execute(node, queries);
    if (!result.results) {
        throw MissingResults("pipeline produced no results to write");
    }
    auto frame = c.k > 0 ? select_topk(*result.results, c.k) : group_sort(*result.results);
    std::ofstream file(c.out, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw ParseError("cannot open '" + c.out + "' for writing");
    }
    write_run(file, frame, c.tag);
    out << "wrote " << frame.rows.size() << " rows for " << queries.size() << " queries to " << c.out << "\n";
}

struct ExperimentCommand {
    std::string index;
    std::string topics;
    std::string qrels;
    std::string pipelines;
    std::string metrics = "map,ndcg_cut_10";
    std::string csv;
    bool no_optimize = false;
};

inline void cmd_experiment(const ExperimentCommand& c, std::ostream& out)
{
    auto index = detail::load_index(c.index);
    auto program = dsl::parse_program(detail::read_file(c.pipelines), detail::environment(index, c.pipelines));
    std::vector<NodePtr> nodes;
    std::vector<std::string> names;
    for (const auto& [name, node] : program.comparisons()) {
        names.push_back(name);
        nodes.push_back(node);
    }
    auto report = experiment(nodes, names, read_topics(c.topics), read_qrels(c.qrels), detail::split_commas(c.metrics),
                             !c.no_optimize);
    out << report.to_text();
    if (!c.csv.empty()) {
        std::ofstream file(c.csv, std::ios::binary | std::ios::trunc);
        if (!file) {
            throw ParseError("cannot open '" + c.csv + "' for writing");
        }
        file << report.to_csv();
    }
}

struct OptimizeCommand {
    std::string pipeline;
    std::string index;  // optional; plans only need the index name
};

inline void cmd_optimize(const OptimizeCommand& c, std::ostream& out)
{
    std::shared_ptr<const Index> index;
    if (!c.index.empty()) {
        index = detail::load_index(c.index);
    }
    auto node = dsl::parse_pipeline(detail::read_file(c.pipeline), detail::environment(index, c.pipeline));
    auto compiled = compile_traced(node);
    std::string fired;
    for (const auto& r : compiled.fired) {
        if (r != "canonicalize") {
            fired += " " + r;
        }
    }
    out << "before:\n" << explain(node) << "after:\n" << explain(compiled.plan)
        << "rules fired:" << (fired.empty() ? " none" : fired) << "\n";
}

struct BenchCommand {
    std::string index;
    std::string topics;
    std::string pipeline;
    std::size_t warmup = 3;
    int repetitions = 1;
    bool no_optimize = false;
};

inline void cmd_bench(const BenchCommand& c, std::ostream& out)
{
    auto index = detail::load_index(c.index);
    auto node = dsl::parse_pipeline(detail::read_file(c.pipeline), detail::environment(index, c.pipeline));
    if (!c.no_optimize) {
        node = compile(node);
    }
    auto result = bench_mrt(node, read_topics(c.topics), c.warmup, c.repetitions);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", result.mrt_ms);
    out << "plan:\n" << explain(node) << "mrt_ms: " << buf << "\n"
        << "queries measured: " << result.per_query_ms.size() << "\n"
        << "postings total: " << result.pruning.postings_total << "\n"
        << "postings evaluated: " << result.pruning.postings_evaluated << "\n"
        << "postings skipped: " << result.pruning.postings_skipped << "\n"
        << "documents scored: " << result.pruning.docs_scored << "\n";
}

/// Command-line entry point. Returns 0 on success, 1 on library errors and 2 on usage errors.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr)
{
    CLI::App app{"pipert: declarative retrieval pipelines"};
    app.require_subcommand(1);

    IndexCommand ic;
    auto* index = app.add_subcommand("index", "build an index from a JSON-lines corpus");
    index->add_option("--corpus", ic.corpus, "corpus file, one {docno, text} object per line")->required();
    index->add_option("--out", ic.out, "output directory")->required();
    index->add_flag("--no-stem", ic.no_stem, "disable Porter stemming");
    index->add_flag("--no-direct", ic.no_direct, "skip the direct index (disables query expansion)");

    RunCommand rc;
    auto* run = app.add_subcommand("run", "run a pipeline and write a TREC run file");
    run->add_option("--index", rc.index)->required();
    run->add_option("--topics", rc.topics)->required();
    run->add_option("--pipeline", rc.pipeline)->required();
    run->add_option("--out", rc.out)->required();
    run->add_option("--k", rc.k, "keep at most k results per query");
    run->add_option("--tag", rc.tag, "run tag column");
    run->add_flag("--no-optimize", rc.no_optimize);

    ExperimentCommand ec;
    auto* exp = app.add_subcommand("experiment", "evaluate the pipelines of a program side by side");
    exp->add_option("--index", ec.index)->required();
    exp->add_option("--topics", ec.topics)->required();
    exp->add_option("--qrels", ec.qrels)->required();
    exp->add_option("--pipelines", ec.pipelines)->required();
    exp->add_option("--metrics", ec.metrics, "comma-separated metric names")->capture_default_str();
    exp->add_option("--csv", ec.csv, "also write the table as CSV");
    exp->add_flag("--no-optimize", ec.no_optimize);

    OptimizeCommand oc;
    auto* opt = app.add_subcommand("optimize", "print the plan before and after compilation");
    opt->add_option("--pipeline", oc.pipeline)->required();
    opt->add_option("--index", oc.index);

    BenchCommand bc;
    auto* bench = app.add_subcommand("bench", "mean response time of a pipeline");
    bench->add_option("--index", bc.index)->required();
    bench->add_option("--topics", bc.topics)->required();
    bench->add_option("--pipeline", bc.pipeline)->required();
    bench->add_option("--warmup", bc.warmup)->capture_default_str();
    bench->add_option("--repetitions", bc.repetitions)->capture_default_str();
    bench->add_flag("--no-optimize", bc.no_optimize);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return 0;
        }
        err << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (index->parsed()) {
            cmd_index(ic, out);
        } else if (run->parsed()) {
            cmd_run(rc, out);
        } else if (exp->parsed()) {
            cmd_experiment(ec, out);
        } else if (opt->parsed()) {
            cmd_optimize(oc, out);
        } else if (bench->parsed()) {
            cmd_bench(bc, out);
        }
    } catch (const Error& e) {
        err << "error: " << e.kind() << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace pipert::cli
