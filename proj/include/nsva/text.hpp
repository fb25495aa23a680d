#pragma once

// Caption text utilities: the deterministic tokenizer and a Porter stemmer.
//
// Tokenization lowercases and splits on whitespace and punctuation, with one
// carve-out: an apostrophe directly after digits stays attached, so distance
// tokens like 26' survive as single tokens.

#include <cctype>
#include <string>
#include <vector>

namespace nsva {

struct TokenizedSentence {
    std::vector<std::string> tokens;
    std::string source;
};

inline bool is_distance_token(const std::string& tok) {
    if (tok.size() < 2 || tok.back() != '\'') return false;
    for (std::size_t i = 0; i + 1 < tok.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(tok[i]))) return false;
    }
    return true;
}

inline TokenizedSentence tokenize(const std::string& text) {
    TokenizedSentence out;
    out.source = text;
    std::string cur;
    bool cur_numeric = true;
    auto flush = [&]() {
        if (!cur.empty()) out.tokens.push_back(cur);
        cur.clear();
        cur_numeric = true;
    };
    for (char raw : text) {
        unsigned char ch = static_cast<unsigned char>(raw);
        if (std::isalnum(ch)) {
            cur.push_back(static_cast<char>(std::tolower(ch)));
            if (!std::isdigit(ch)) cur_numeric = false;
        } else if (raw == '\'' && !cur.empty() && cur_numeric) {
            cur.push_back('\'');
            flush();
        } else {
            flush();
        }
    }
    flush();
    return out;
}

// --- Porter stemmer ----------------------------------------------------------

namespace porter {

inline bool is_consonant(const std::string& w, std::size_t i) {
    char c = w[i];
    if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') return false;
    if (c == 'y') return i == 0 ? true : !is_consonant(w, i - 1);
    return true;
}

// The measure m of the [C](VC)^m[V] decomposition of w[0, len).
inline std::size_t measure(const std::string& w, std::size_t len) {
    std::size_t m = 0;
    std::size_t i = 0;
    while (i < len && is_consonant(w, i)) ++i;
    while (i < len) {
        while (i < len && !is_consonant(w, i)) ++i;
        if (i >= len) break;
        ++m;
        while (i < len && is_consonant(w, i)) ++i;
    }
    return m;
}

inline bool has_vowel(const std::string& w, std::size_t len) {
    for (std::size_t i = 0; i < len; ++i)
        if (!is_consonant(w, i)) return true;
    return false;
}

inline bool double_consonant(const std::string& w, std::size_t len) {
    if (len < 2) return false;
    return w[len - 1] == w[len - 2] && is_consonant(w, len - 1);
}

// consonant-vowel-consonant ending where the final consonant is not w, x or y
inline bool cvc(const std::string& w, std::size_t len) {
    if (len < 3) return false;
    if (!is_consonant(w, len - 3) || is_consonant(w, len - 2) || !is_consonant(w, len - 1))
        return false;
    char c = w[len - 1];
    return c != 'w' && c != 'x' && c != 'y';
}

inline bool ends_with(const std::string& w, const char* suffix) {
    std::size_t n = std::char_traits<char>::length(suffix);
    return w.size() >= n && w.compare(w.size() - n, n, suffix) == 0;
}

// Replaces `suffix` by `repl` when the remaining stem has measure > threshold.
inline bool replace_m(std::string& w, const char* suffix, const char* repl,
                      std::size_t m_threshold) {
    if (!ends_with(w, suffix)) return false;
    std::size_t stem_len = w.size() - std::char_traits<char>::length(suffix);
    if (measure(w, stem_len) > m_threshold) {
        w.resize(stem_len);
        w += repl;
    }
    return true;  // suffix matched, stop scanning this rule group
}

}  // namespace porter

// Porter (1980) stemming algorithm.
inline std::string porter_stem(const std::string& input) {
    using namespace porter;
    std::string w;
    w.reserve(input.size());
    for (char c : input) w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    if (w.size() <= 2) return w;

    // step 1a
    if (ends_with(w, "sses")) {
        w.resize(w.size() - 2);
    } else if (ends_with(w, "ies")) {
        w.resize(w.size() - 2);
    } else if (!ends_with(w, "ss") && ends_with(w, "s")) {
        w.resize(w.size() - 1);
    }

    // step 1b
    bool cleanup = false;
    if (ends_with(w, "eed")) {
        if (measure(w, w.size() - 3) > 0) w.resize(w.size() - 1);
    } else if (ends_with(w, "ed") && has_vowel(w, w.size() - 2)) {
        w.resize(w.size() - 2);
        cleanup = true;
    } else if (ends_with(w, "ing") && has_vowel(w, w.size() - 3)) {
        w.resize(w.size() - 3);
        cleanup = true;
    }
    if (cleanup) {
        if (ends_with(w, "at") || ends_with(w, "bl") || ends_with(w, "iz")) {
            w += 'e';
        } else if (double_consonant(w, w.size()) && !ends_with(w, "l") && !ends_with(w, "s") &&
                   !ends_with(w, "z")) {
            w.resize(w.size() - 1);
        } else if (measure(w, w.size()) == 1 && cvc(w, w.size())) {
            w += 'e';
        }
    }

    // step 1c
    if (ends_with(w, "y") && has_vowel(w, w.size() - 1)) w.back() = 'i';

    // step 2
    do {
        if (replace_m(w, "ational", "ate", 0)) break;
        if (replace_m(w, "tional", "tion", 0)) break;
        if (replace_m(w, "enci", "ence", 0)) break;
        if (replace_m(w, "anci", "ance", 0)) break;
        if (replace_m(w, "izer", "ize", 0)) break;
        if (replace_m(w, "abli", "able", 0)) break;
        if (replace_m(w, "alli", "al", 0)) break;
        if (replace_m(w, "entli", "ent", 0)) break;
        if (replace_m(w, "eli", "e", 0)) break;
        if (replace_m(w, "ousli", "ous", 0)) break;
        if (replace_m(w, "ization", "ize", 0)) break;
        if (replace_m(w, "ation", "ate", 0)) break;
        if (replace_m(w, "ator", "ate", 0)) break;
        if (replace_m(w, "alism", "al", 0)) break;
        if (replace_m(w, "iveness", "ive", 0)) break;
        if (replace_m(w, "fulness", "ful", 0)) break;
        if (replace_m(w, "ousness", "ous", 0)) break;
        if (replace_m(w, "aliti", "al", 0)) break;
        if (replace_m(w, "iviti", "ive", 0)) break;
        if (replace_m(w, "biliti", "ble", 0)) break;
    } while (false);

    // step 3
    do {
        if (replace_m(w, "icate", "ic", 0)) break;
        if (replace_m(w, "ative", "", 0)) break;
        if (replace_m(w, "alize", "al", 0)) break;
        if (replace_m(w, "iciti", "ic", 0)) break;
        if (replace_m(w, "ical", "ic", 0)) break;
        if (replace_m(w, "ful", "", 0)) break;
        if (replace_m(w, "ness", "", 0)) break;
    } while (false);

    // step 4
    do {
        if (replace_m(w, "al", "", 1)) break;
        if (replace_m(w, "ance", "", 1)) break;
        if (replace_m(w, "ence", "", 1)) break;
        if (replace_m(w, "er", "", 1)) break;
        if (replace_m(w, "ic", "", 1)) break;
        if (replace_m(w, "able", "", 1)) break;
        if (replace_m(w, "ible", "", 1)) break;
        if (replace_m(w, "ant", "", 1)) break;
        if (replace_m(w, "ement", "", 1)) break;
        if (replace_m(w, "ment", "", 1)) break;
        if (replace_m(w, "ent", "", 1)) break;
        if (porter::ends_with(w, "ion") && w.size() >= 4 &&
            (w[w.size() - 4] == 's' || w[w.size() - 4] == 't')) {
            if (measure(w, w.size() - 3) > 1) w.resize(w.size() - 3);
            break;
        }
        if (replace_m(w, "ou", "", 1)) break;
        if (replace_m(w, "ism", "", 1)) break;
        if (replace_m(w, "ate", "", 1)) break;
        if (replace_m(w, "iti", "", 1)) break;
        if (replace_m(w, "ous", "", 1)) break;
        if (replace_m(w, "ive", "", 1)) break;
        if (replace_m(w, "ize", "", 1)) break;
    } while (false);

    // step 5a
    if (ends_with(w, "e")) {
        std::size_t m = measure(w, w.size() - 1);
        if (m > 1 || (m == 1 && !cvc(w, w.size() - 1))) w.resize(w.size() - 1);
    }
    // step 5b
    if (measure(w, w.size()) > 1 && double_consonant(w, w.size()) && ends_with(w, "l")) {
        w.resize(w.size() - 1);
    }
    return w;
}

}  // namespace nsva
