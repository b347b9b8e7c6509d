#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace pipert {

/// Porter's suffix-stripping stemmer, original 1980 rule set (no later
/// departures such as `logi -> log` or `bli -> ble`). Input must be lowercase
/// ASCII letters; words of length two or less are returned unchanged.
class PorterStemmer {
  public:
    [[nodiscard]] std::string operator()(std::string_view word) const
    {
        if (word.size() <= 2) {
            return std::string(word);
        }
        State s{std::string(word), static_cast<int>(word.size()) - 1, 0};
        step1ab(s);
        if (s.k > 0) {
            step1c(s);
            step2(s);
            step3(s);
            step4(s);
            step5(s);
        }
        s.b.resize(static_cast<std::size_t>(s.k + 1));
        return std::move(s.b);
    }

  private:
    struct State {
        std::string b;
        int k;  // end of the current stem (inclusive)
        int j;  // end of the stem preceding a matched suffix
    };

    static bool cons(const State& s, int i)
    {
        switch (s.b[static_cast<std::size_t>(i)]) {
        case 'a':
        case 'e':
        case 'i':
        case 'o':
        case 'u':
            return false;
        case 'y':
            return i == 0 ? true : !cons(s, i - 1);
        default:
            return true;
        }
    }

    // Number of VC sequences in b[0..j].
    static int measure(const State& s)
    {
        int n = 0;
        int i = 0;
        for (;;) {
            if (i > s.j) {
                return n;
            }
            if (!cons(s, i)) {
                break;
            }
            ++i;
        }
        ++i;
        for (;;) {
            for (;;) {
                if (i > s.j) {
                    return n;
                }
                if (cons(s, i)) {
                    break;
                }
                ++i;
            }
            ++i;
            ++n;
            for (;;) {
                if (i > s.j) {
                    return n;
                }
                if (!cons(s, i)) {
                    break;
                }
                ++i;
            }
            ++i;
        }
    }

    static bool vowel_in_stem(const State& s)
    {
        for (int i = 0; i <= s.j; ++i) {
            if (!cons(s, i)) {
                return true;
            }
        }
        return false;
    }

    static bool double_cons(const State& s, int i)
    {
        if (i < 1) {
            return false;
        }
        if (s.b[static_cast<std::size_t>(i)] != s.b[static_cast<std::size_t>(i - 1)]) {
            return false;
        }
        return cons(s, i);
    }

    // consonant-vowel-consonant ending at i, where the last consonant is not w, x or y
    static bool cvc(const State& s, int i)
    {
        if (i < 2 || !cons(s, i) || cons(s, i - 1) || !cons(s, i - 2)) {
            return false;
        }
        char ch = s.b[static_cast<std::size_t>(i)];
        return ch != 'w' && ch != 'x' && ch != 'y';
    }

    static bool ends(State& s, std::string_view suffix)
    {
        auto len = static_cast<int>(suffix.size());
        if (len > s.k + 1) {
            return false;
        }
        if (std::string_view(s.b).substr(static_cast<std::size_t>(s.k - len + 1),
                                         static_cast<std::size_t>(len))
            != suffix) {
            return false;
        }
        s.j = s.k - len;
        return true;
    }

    static void set_to(State& s, std::string_view replacement)
    {
        s.b.replace(static_cast<std::size_t>(s.j + 1), std::string::npos, replacement);
        s.k = s.j + static_cast<int>(replacement.size());
    }

    static void replace_if_measured(State& s, std::string_view replacement)
    {
        if (measure(s) > 0) {
            set_to(s, replacement);
        }
    }

    static void step1ab(State& s)
    {
        if (s.b[static_cast<std::size_t>(s.k)] == 's') {
            if (ends(s, "sses")) {
                s.k -= 2;
            } else if (ends(s, "ies")) {
                set_to(s, "i");
            } else if (s.b[static_cast<std::size_t>(s.k - 1)] != 's') {
                --s.k;
            }
        }
        if (ends(s, "eed")) {
            if (measure(s) > 0) {
                --s.k;
            }
        } else if ((ends(s, "ed") || ends(s, "ing")) && vowel_in_stem(s)) {
            s.k = s.j;
            if (ends(s, "at")) {
                set_to(s, "ate");
            } else if (ends(s, "bl")) {
                set_to(s, "ble");
            } else if (ends(s, "iz")) {
                set_to(s, "ize");
            } else if (double_cons(s, s.k)) {
                --s.k;
                char ch = s.b[static_cast<std::size_t>(s.k)];
                if (ch == 'l' || ch == 's' || ch == 'z') {
                    ++s.k;
                }
            } else {
                s.j = s.k;
                if (measure(s) == 1 && cvc(s, s.k)) {
                    set_to(s, "e");
                }
            }
        }
    }

    static void step1c(State& s)
    {
        if (ends(s, "y") && vowel_in_stem(s)) {
            s.b[static_cast<std::size_t>(s.k)] = 'i';
        }
    }

    struct Rule {
        std::string_view suffix;
        std::string_view replacement;
    };

    // The first rule whose suffix matches decides; its condition is checked once.
    template <std::size_t N>
    static void apply_first(State& s, const Rule (&rules)[N])
    {
        for (const auto& rule : rules) {
            if (ends(s, rule.suffix)) {
                replace_if_measured(s, rule.replacement);
                return;
            }
        }
    }

    static void step2(State& s)
    {
        static constexpr Rule rules[] = {
            {"ational", "ate"}, {"tional", "tion"}, {"enci", "ence"},   {"anci", "ance"},
            {"izer", "ize"},    {"abli", "able"},   {"alli", "al"},     {"entli", "ent"},
            {"eli", "e"},       {"ousli", "ous"},   {"ization", "ize"}, {"ation", "ate"},
            {"ator", "ate"},    {"alism", "al"},    {"iveness", "ive"}, {"fulness", "ful"},
            {"ousness", "ous"}, {"aliti", "al"},    {"iviti", "ive"},   {"biliti", "ble"},
        };
        if (s.k < 1) {
            return;
        }
        // Suffix sets are disjoint per penultimate letter, so a linear scan
        // honours the longest-match rule as long as longer suffixes come first.
        apply_first(s, rules);
    }

    static void step3(State& s)
    {
        static constexpr Rule rules[] = {
            {"icate", "ic"}, {"ative", ""}, {"alize", "al"}, {"iciti", "ic"},
            {"ical", "ic"},  {"ful", ""},   {"ness", ""},
        };
        apply_first(s, rules);
    }

    static void step4(State& s)
    {
        static constexpr std::string_view suffixes[] = {
            "al",  "ance", "ence", "er",  "ic",  "able", "ible", "ant", "ement", "ment",
            "ent", "ion",  "ou",   "ism", "ate", "iti",  "ous",  "ive", "ize",
        };
        if (s.k < 1) {
            return;
        }
        for (auto suffix : suffixes) {
            if (!ends(s, suffix)) {
                continue;
            }
            if (suffix == "ion") {
                if (s.j < 0 || (s.b[static_cast<std::size_t>(s.j)] != 's'
                                && s.b[static_cast<std::size_t>(s.j)] != 't')) {
                    continue;
                }
            }
            if (measure(s) > 1) {
                s.k = s.j;
            }
            return;
        }
    }

    static void step5(State& s)
    {
        s.j = s.k;
        if (s.b[static_cast<std::size_t>(s.k)] == 'e') {
            int m = measure(s);
            if (m > 1 || (m == 1 && !cvc(s, s.k - 1))) {
                --s.k;
            }
        }
        if (s.b[static_cast<std::size_t>(s.k)] == 'l' && double_cons(s, s.k)) {
            s.j = s.k;
            if (measure(s) > 1) {
                --s.k;
            }
        }
    }
};

/// The default stopword list, version 1: the classic 33-word English short list.
inline const std::set<std::string>& default_stopwords()
{
    static const std::set<std::string> words = {
        "a",    "an",    "and",   "are",  "as",   "at",    "be",   "but",  "by",
        "for",  "if",    "in",    "into", "is",   "it",    "no",   "not",  "of",
        "on",   "or",    "such",  "that", "the",  "their", "then", "there", "these",
        "they", "this",  "to",    "was",  "will", "with",
    };
    return words;
}

/// FNV-1a over the sorted words, newline-terminated. Identifies a stopword list.
inline std::uint64_t stopword_hash(const std::set<std::string>& words)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& w : words) {
        for (unsigned char c : w) {
            h = (h ^ c) * 0x100000001b3ULL;
        }
        h = (h ^ static_cast<unsigned char>('\n')) * 0x100000001b3ULL;
    }
    return h;
}

struct IndexOptions {
    bool stem = true;
    std::set<std::string> stopwords = default_stopwords();
    bool build_direct = true;

    friend bool operator==(const IndexOptions&, const IndexOptions&) = default;
};

namespace detail {

inline bool is_token_byte(unsigned char c)
{
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c >= 0x80;
}

inline bool all_lower_alpha(std::string_view s)
{
    for (char c : s) {
        if (c < 'a' || c > 'z') {
            return false;
        }
    }
    return true;
}

}  // namespace detail

/// Lowercases, splits on runs of non-alphanumeric ASCII, drops stopwords and
/// (optionally) Porter-stems purely alphabetic tokens. Non-ASCII bytes are kept
/// inside tokens so UTF-8 words survive intact.
inline std::vector<std::string> tokenize(std::string_view text, const IndexOptions& opts = {})
{
    static const PorterStemmer stemmer;
    std::vector<std::string> terms;
    std::string current;
    auto flush = [&] {
        if (current.empty()) {
            return;
        }
        if (opts.stopwords.count(current) == 0) {
            if (opts.stem && detail::all_lower_alpha(current)) {
                terms.push_back(stemmer(current));
            } else {
                terms.push_back(current);
            }
        }
        current.clear();
    };
    for (char ch : text) {
        auto c = static_cast<unsigned char>(ch);
        if (detail::is_token_byte(c)) {
            current.push_back((c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : ch);
        } else {
            flush();
        }
    }
    flush();
    return terms;
}

}  // namespace pipert
