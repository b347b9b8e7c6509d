#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pipert/errors.hpp"
#include "pipert/formats.hpp"
#include "pipert/tokenizer.hpp"

namespace pipert {

struct Posting {
    std::uint32_t docid;
    std::uint32_t tf;

    friend bool operator==(const Posting&, const Posting&) = default;
};

/// Entry of a document's term vector in the direct index.
struct DirectPosting {
    std::uint32_t termid;
    std::uint32_t tf;

    friend bool operator==(const DirectPosting&, const DirectPosting&) = default;
};

struct LexiconEntry {
    std::string term;
    std::uint32_t df = 0;
    std::uint64_t cf = 0;
    std::uint64_t offset = 0;  // in postings, not bytes; bytes = offset * 8

    friend bool operator==(const LexiconEntry&, const LexiconEntry&) = default;
};

struct DocumentEntry {
    std::string docno;
    std::uint32_t doclen = 0;

    friend bool operator==(const DocumentEntry&, const DocumentEntry&) = default;
};

struct CollectionStats {
    std::uint32_t num_docs = 0;
    std::uint64_t total_tokens = 0;
    double avg_doclen = 0.0;

    friend bool operator==(const CollectionStats&, const CollectionStats&) = default;
};

struct TermStats {
    std::uint32_t df;
    std::uint64_t cf;

    friend bool operator==(const TermStats&, const TermStats&) = default;
};

inline constexpr std::uint32_t kIndexFormatVersion = 1;
inline constexpr char kIndexMagic[4] = {'P', 'T', 'I', 'R'};
inline constexpr const char* kIndexFileName = "index.ptir";

class IndexBuilder;

/// Immutable inverted index with collection statistics and an optional
/// direct index. Shared between pipeline stages through shared_ptr<const Index>.
///
/// The only mutable state is the upper-bound memo used by MaxScore; it is
/// guarded by a mutex and stores values that are a pure function of the key.
class Index {
  public:
    Index() = default;
    Index(const Index&) = delete;
    Index& operator=(const Index&) = delete;

    [[nodiscard]] const IndexOptions& options() const noexcept { return m_options; }
    [[nodiscard]] const CollectionStats& stats() const noexcept { return m_stats; }
    [[nodiscard]] std::uint32_t num_docs() const noexcept { return m_stats.num_docs; }
    [[nodiscard]] std::size_t num_terms() const noexcept { return m_lexicon.size(); }
    [[nodiscard]] bool has_direct() const noexcept { return m_options.build_direct; }

    [[nodiscard]] const std::vector<LexiconEntry>& lexicon() const noexcept { return m_lexicon; }
    [[nodiscard]] const std::vector<DocumentEntry>& documents() const noexcept { return m_docs; }

    [[nodiscard]] std::optional<std::uint32_t> term_id(std::string_view term) const
    {
        auto it = m_term_ids.find(std::string(term));
        if (it == m_term_ids.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    [[nodiscard]] const std::string& term(std::uint32_t termid) const { return m_lexicon.at(termid).term; }

    [[nodiscard]] std::optional<TermStats> term_stats(std::string_view term) const
    {
        auto id = term_id(term);
        if (!id) {
            return std::nullopt;
        }
        const auto& e = m_lexicon[*id];
        return TermStats{e.df, e.cf};
    }

    [[nodiscard]] std::span<const Posting> postings(std::uint32_t termid) const
    {
        const auto& e = m_lexicon.at(termid);
        return {m_postings.data() + e.offset, e.df};
    }

    [[nodiscard]] std::optional<std::uint32_t> docid(std::string_view docno) const
    {
        auto it = m_docids.find(std::string(docno));
        if (it == m_docids.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    [[nodiscard]] const std::string& docno(std::uint32_t docid) const { return m_docs[docid].docno; }
    [[nodiscard]] std::uint32_t doclen(std::uint32_t docid) const { return m_docs[docid].doclen; }

    /// Term vector of a document, ordered by term id.
    [[nodiscard]] std::span<const DirectPosting> doc_vector(std::uint32_t docid) const
    {
        if (!has_direct()) {
            throw DirectIndexMissing("index was built without a direct index");
        }
        if (docid >= m_docs.size()) {
            throw UnknownDocno("docid " + std::to_string(docid) + " out of range");
        }
        auto begin = m_direct_offsets[docid];
        auto end = m_direct_offsets[docid + 1];
        return {m_direct.data() + begin, end - begin};
    }

    /// Memoized per-(model, term) maximum score contribution.
    template <typename Compute>
    double cached_upper_bound(const std::string& model_key, std::uint32_t termid, Compute&& compute) const
    {
        std::string key = model_key;
        key.push_back('\x1f');
        key += std::to_string(termid);
        {
            std::lock_guard lock(m_ub_mutex);
            auto it = m_upper_bounds.find(key);
            if (it != m_upper_bounds.end()) {
                return it->second;
            }
        }
        double value = compute();
        std::lock_guard lock(m_ub_mutex);
        m_upper_bounds.emplace(std::move(key), value);
        return value;
    }

    [[nodiscard]] std::size_t cached_upper_bound_count() const
    {
        std::lock_guard lock(m_ub_mutex);
        return m_upper_bounds.size();
    }

    /// Compares everything except the upper-bound memo.
    friend bool operator==(const Index& a, const Index& b)
    {
        return a.m_options.stem == b.m_options.stem
            && stopword_hash(a.m_options.stopwords) == stopword_hash(b.m_options.stopwords)
            && a.m_options.build_direct == b.m_options.build_direct && a.m_stats == b.m_stats
            && a.m_docs == b.m_docs && a.m_lexicon == b.m_lexicon && a.m_postings == b.m_postings
            && a.m_direct_offsets == b.m_direct_offsets && a.m_direct == b.m_direct;
    }

    void write(std::ostream& out) const;
    [[nodiscard]] static std::unique_ptr<Index> read(std::string_view bytes,
                                                     const std::set<std::string>* custom_stopwords = nullptr);

  private:
    friend class IndexBuilder;

    void finish_lookup_tables()
    {
        m_term_ids.clear();
        m_term_ids.reserve(m_lexicon.size());
        for (std::uint32_t i = 0; i < m_lexicon.size(); ++i) {
            m_term_ids.emplace(m_lexicon[i].term, i);
        }
        m_docids.clear();
        m_docids.reserve(m_docs.size());
        for (std::uint32_t i = 0; i < m_docs.size(); ++i) {
            m_docids.emplace(m_docs[i].docno, i);
        }
    }

    IndexOptions m_options;
    CollectionStats m_stats;
    std::vector<DocumentEntry> m_docs;
    std::vector<LexiconEntry> m_lexicon;
    std::vector<Posting> m_postings;
    std::vector<std::uint64_t> m_direct_offsets;  // num_docs + 1 entries when direct is built
    std::vector<DirectPosting> m_direct;

    std::unordered_map<std::string, std::uint32_t> m_term_ids;
    std::unordered_map<std::string, std::uint32_t> m_docids;

    mutable std::mutex m_ub_mutex;
    mutable std::unordered_map<std::string, double> m_upper_bounds;
};

/// Accumulates documents in stream order (docid = insertion order).
class IndexBuilder {
  public:
    explicit IndexBuilder(IndexOptions options = {}) : m_options(std::move(options)) {}

    void add(std::string_view docno, std::string_view text)
    {
        add_terms(docno, tokenize(text, m_options));
    }

    /// Adds a document whose terms are already in index form.
    template <typename Terms>
    void add_terms(std::string_view docno, const Terms& terms)
    {
        auto docid = static_cast<std::uint32_t>(m_docs.size());
        if (!m_docnos.emplace(std::string(docno), docid).second) {
            throw DuplicateDocno("duplicate docno '" + std::string(docno) + "'");
        }
        m_scratch.clear();
        for (const auto& t : terms) {
            std::string_view term(t);
            auto [it, inserted] = m_term_slots.try_emplace(std::string(term), static_cast<std::uint32_t>(m_terms.size()));
            if (inserted) {
                m_terms.emplace_back(term);
                m_term_postings.emplace_back();
            }
            m_scratch.push_back(it->second);
        }
        std::sort(m_scratch.begin(), m_scratch.end());
        for (std::size_t i = 0; i < m_scratch.size();) {
            std::size_t j = i;
            while (j < m_scratch.size() && m_scratch[j] == m_scratch[i]) {
                ++j;
            }
            m_term_postings[m_scratch[i]].push_back(Posting{docid, static_cast<std::uint32_t>(j - i)});
            i = j;
        }
        m_docs.push_back(DocumentEntry{std::string(docno), static_cast<std::uint32_t>(terms.size())});
    }

    [[nodiscard]] std::unique_ptr<Index> build()
    {
        auto index = std::make_unique<Index>();
        index->m_options = m_options;
        index->m_docs = std::move(m_docs);

        std::vector<std::uint32_t> order(m_terms.size());
        for (std::uint32_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        std::sort(order.begin(), order.end(), [&](auto a, auto b) { return m_terms[a] < m_terms[b]; });
        std::vector<std::uint32_t> final_id(m_terms.size());

        std::size_t total_postings = 0;
        for (const auto& p : m_term_postings) {
            total_postings += p.size();
        }
        index->m_postings.reserve(total_postings);
        index->m_lexicon.reserve(order.size());
        for (std::uint32_t rank = 0; rank < order.size(); ++rank) {
            auto slot = order[rank];
            final_id[slot] = rank;
            LexiconEntry e;
            e.term = m_terms[slot];
            e.offset = index->m_postings.size();
            e.df = static_cast<std::uint32_t>(m_term_postings[slot].size());
            for (const auto& p : m_term_postings[slot]) {
                e.cf += p.tf;
                index->m_postings.push_back(p);
            }
            index->m_lexicon.push_back(std::move(e));
        }

        auto& stats = index->m_stats;
        stats.num_docs = static_cast<std::uint32_t>(index->m_docs.size());
        for (const auto& d : index->m_docs) {
            stats.total_tokens += d.doclen;
        }
        stats.avg_doclen = stats.num_docs == 0
            ? 0.0
            : static_cast<double>(stats.total_tokens) / static_cast<double>(stats.num_docs);

        if (m_options.build_direct) {
            std::vector<std::vector<DirectPosting>> vectors(stats.num_docs);
            for (std::uint32_t termid = 0; termid < index->m_lexicon.size(); ++termid) {
                for (const auto& p : index->postings(termid)) {
                    vectors[p.docid].push_back(DirectPosting{termid, p.tf});
                }
            }
            index->m_direct_offsets.reserve(stats.num_docs + 1);
            index->m_direct_offsets.push_back(0);
            for (auto& v : vectors) {
                index->m_direct.insert(index->m_direct.end(), v.begin(), v.end());
                index->m_direct_offsets.push_back(index->m_direct.size());
            }
        }
        index->finish_lookup_tables();

        m_terms.clear();
        m_term_slots.clear();
        m_term_postings.clear();
        m_docnos.clear();
        return index;
    }

  private:
    IndexOptions m_options;
    std::vector<DocumentEntry> m_docs;
    std::unordered_map<std::string, std::uint32_t> m_docnos;
    std::unordered_map<std::string, std::uint32_t> m_term_slots;
    std::vector<std::string> m_terms;
    std::vector<std::vector<Posting>> m_term_postings;
    std::vector<std::uint32_t> m_scratch;
};

/// Builds an index from any range of objects exposing `docno` and `text`.
template <typename Documents>
std::unique_ptr<Index> build_index(const Documents& docs, const IndexOptions& options = {})
{
    IndexBuilder builder(options);
    for (const auto& d : docs) {
        builder.add(d.docno, d.text);
    }
    return builder.build();
}

// ---------------------------------------------------------------------------
// Serialization: little-endian, uncompressed.

namespace detail {

class ByteWriter {
  public:
    explicit ByteWriter(std::ostream& out) : m_out(out) {}

    void u8(std::uint8_t v) { m_out.put(static_cast<char>(v)); }
    void u32(std::uint32_t v) { le(v); }
    void u64(std::uint64_t v) { le(v); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
    void bytes(std::string_view s) { m_out.write(s.data(), static_cast<std::streamsize>(s.size())); }
    void str(std::string_view s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

  private:
    template <typename T>
    void le(T v)
    {
        char buf[sizeof(T)];
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        }
        m_out.write(buf, sizeof(T));
    }

    std::ostream& m_out;
};

class ByteReader {
  public:
    explicit ByteReader(std::string_view data) : m_data(data) {}

    [[nodiscard]] std::size_t offset() const noexcept { return m_pos; }
    [[nodiscard]] bool at_end() const noexcept { return m_pos == m_data.size(); }

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() { return le<std::uint32_t>(); }
    std::uint64_t u64() { return le<std::uint64_t>(); }
    double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
    std::string_view bytes(std::size_t n) { return take(n); }
    std::string str() { return std::string(take(u32())); }

  private:
    std::string_view take(std::size_t n)
    {
        if (n > m_data.size() - m_pos) {
            throw FormatError("truncated index file: need " + std::to_string(n) + " bytes at offset "
                              + std::to_string(m_pos) + ", file has " + std::to_string(m_data.size()));
        }
        auto out = m_data.substr(m_pos, n);
        m_pos += n;
        return out;
    }

    template <typename T>
    T le()
    {
        auto raw = take(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(raw[i])) << (8 * i);
        }
        return v;
    }

    std::string_view m_data;
    std::size_t m_pos = 0;
};

}  // namespace detail

inline void Index::write(std::ostream& out) const
{
    detail::ByteWriter w(out);
    w.bytes(std::string_view(kIndexMagic, 4));
    w.u32(kIndexFormatVersion);
    w.u8(m_options.stem ? 1 : 0);
    w.u64(stopword_hash(m_options.stopwords));
    w.u8(m_options.build_direct ? 1 : 0);

    w.u32(m_stats.num_docs);
    w.u64(m_stats.total_tokens);
    w.f64(m_stats.avg_doclen);

    for (const auto& d : m_docs) {
        w.str(d.docno);
        w.u32(d.doclen);
    }

    w.u32(static_cast<std::uint32_t>(m_lexicon.size()));
    for (const auto& e : m_lexicon) {
        w.str(e.term);
        w.u32(e.df);
        w.u64(e.cf);
        w.u64(e.offset * sizeof(std::uint32_t) * 2);
    }

    w.u64(m_postings.size() * sizeof(std::uint32_t) * 2);
    for (const auto& p : m_postings) {
        w.u32(p.docid);
        w.u32(p.tf);
    }

    if (m_options.build_direct) {
        for (std::uint32_t d = 0; d < m_docs.size(); ++d) {
            auto begin = m_direct_offsets[d];
            auto end = m_direct_offsets[d + 1];
            w.u32(static_cast<std::uint32_t>(end - begin));
            for (auto i = begin; i < end; ++i) {
                w.u32(m_direct[i].termid);
                w.u32(m_direct[i].tf);
            }
        }
    }
}

inline std::unique_ptr<Index> Index::read(std::string_view bytes, const std::set<std::string>* custom_stopwords)
{
    detail::ByteReader r(bytes);
    auto fail = [&](const std::string& what) {
        throw FormatError(what + " (at offset " + std::to_string(r.offset()) + ")");
    };

    if (r.bytes(4) != std::string_view(kIndexMagic, 4)) {
        throw FormatError("bad magic at offset 0: not a PTIR index");
    }
    auto version = r.u32();
    if (version != kIndexFormatVersion) {
        throw FormatError("unsupported index format version " + std::to_string(version) + " (expected "
                          + std::to_string(kIndexFormatVersion) + ")");
    }

    auto index = std::make_unique<Index>();
    auto& opts = index->m_options;
    opts.stem = r.u8() != 0;
    auto stop_hash = r.u64();
    opts.build_direct = r.u8() != 0;
    if (stop_hash == stopword_hash(default_stopwords())) {
        opts.stopwords = default_stopwords();
    } else if (stop_hash == stopword_hash({})) {
        opts.stopwords = {};
    } else if (custom_stopwords != nullptr && stop_hash == stopword_hash(*custom_stopwords)) {
        opts.stopwords = *custom_stopwords;
    } else {
        fail("index uses an unknown stopword list");
    }

    auto& stats = index->m_stats;
    stats.num_docs = r.u32();
    stats.total_tokens = r.u64();
    stats.avg_doclen = r.f64();

    std::uint64_t token_sum = 0;
    index->m_docs.reserve(stats.num_docs);
    for (std::uint32_t d = 0; d < stats.num_docs; ++d) {
        DocumentEntry e;
        e.docno = r.str();
        e.doclen = r.u32();
        token_sum += e.doclen;
        index->m_docs.push_back(std::move(e));
    }
    if (token_sum != stats.total_tokens) {
        fail("document lengths do not sum to total_tokens");
    }

    auto num_terms = r.u32();
    index->m_lexicon.reserve(num_terms);
    std::uint64_t expected_offset = 0;
    for (std::uint32_t t = 0; t < num_terms; ++t) {
        LexiconEntry e;
        e.term = r.str();
        e.df = r.u32();
        e.cf = r.u64();
        auto byte_offset = r.u64();
        if (byte_offset != expected_offset * 8) {
            fail("lexicon entry '" + e.term + "' has inconsistent postings offset");
        }
        if (!index->m_lexicon.empty() && !(index->m_lexicon.back().term < e.term)) {
            fail("lexicon is not strictly sorted");
        }
        e.offset = expected_offset;
        expected_offset += e.df;
        index->m_lexicon.push_back(std::move(e));
    }

    auto postings_bytes = r.u64();
    if (postings_bytes != expected_offset * 8) {
        fail("postings section size does not match lexicon");
    }
    index->m_postings.reserve(expected_offset);
    for (const auto& e : index->m_lexicon) {
        std::uint64_t cf = 0;
        for (std::uint32_t i = 0; i < e.df; ++i) {
            Posting p{r.u32(), r.u32()};
            if (p.docid >= stats.num_docs || p.tf == 0) {
                fail("posting for '" + e.term + "' references an invalid document or zero tf");
            }
            if (i > 0 && index->m_postings.back().docid >= p.docid) {
                fail("postings for '" + e.term + "' are not strictly ascending");
            }
            cf += p.tf;
            index->m_postings.push_back(p);
        }
        if (cf != e.cf) {
            fail("postings for '" + e.term + "' do not sum to cf");
        }
    }

    if (opts.build_direct) {
        index->m_direct_offsets.reserve(stats.num_docs + 1);
        index->m_direct_offsets.push_back(0);
        for (std::uint32_t d = 0; d < stats.num_docs; ++d) {
            auto count = r.u32();
            for (std::uint32_t i = 0; i < count; ++i) {
                DirectPosting p{r.u32(), r.u32()};
                if (p.termid >= num_terms) {
                    fail("direct index references unknown term id");
                }
                index->m_direct.push_back(p);
            }
            index->m_direct_offsets.push_back(index->m_direct.size());
        }
    }
    if (!r.at_end()) {
        fail("trailing bytes after index");
    }
    index->finish_lookup_tables();
    return index;
}

inline std::string serialize_index(const Index& index)
{
    std::ostringstream out(std::ios::binary);
    index.write(out);
    return std::move(out).str();
}

namespace detail {

inline std::filesystem::path index_file(const std::filesystem::path& path)
{
    if (path.extension() == ".ptir") {
        return path;
    }
    return path / kIndexFileName;
}

}  // namespace detail

/// Writes `DIR/index.ptir` (or the given .ptir file), creating DIR if needed.
inline void write_index(const Index& index, const std::filesystem::path& path)
{
    auto file = detail::index_file(path);
    if (file.has_parent_path()) {
        std::filesystem::create_directories(file.parent_path());
    }
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw FormatError("cannot open '" + file.string() + "' for writing");
    }
    index.write(out);
    if (!out) {
        throw FormatError("failed writing '" + file.string() + "'");
    }
}

inline std::unique_ptr<Index> read_index(const std::filesystem::path& path,
                                         const std::set<std::string>* custom_stopwords = nullptr)
{
    auto file = detail::index_file(path);
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open index '" + file.string() + "'");
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return Index::read(bytes, custom_stopwords);
}

}  // namespace pipert
