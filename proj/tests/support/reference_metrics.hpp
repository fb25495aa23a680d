#pragma once

// Independent reference implementations of the caption metrics, written as
// direct formula transcriptions over std::map n-gram tables. These exist to
// cross-check the library implementations and to pin the golden values; they
// deliberately share no code with nsva/metrics.hpp beyond the tokenizer and
// stemmer (which have their own oracle tests).

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "nsva/text.hpp"

namespace nsva::testing {

using Toks = std::vector<std::string>;
using Ngram = std::vector<std::string>;

inline std::map<Ngram, int> ref_ngrams(const Toks& t, std::size_t n) {
    std::map<Ngram, int> m;
    for (std::size_t i = 0; i + n <= t.size(); ++i) {
        m[Ngram(t.begin() + i, t.begin() + i + n)] += 1;
    }
    return m;
}

inline double ref_bleu(const std::vector<Toks>& cands,
                       const std::vector<std::vector<Toks>>& refs, std::size_t n) {
    double c_len = 0, r_len = 0;
    std::vector<double> num(n, 0), den(n, 0);
    for (std::size_t s = 0; s < cands.size(); ++s) {
        c_len += static_cast<double>(cands[s].size());
        // closest reference length, shorter wins ties
        long best_diff = -1;
        std::size_t best_len = 0;
        for (const Toks& r : refs[s]) {
            long diff = std::labs(static_cast<long>(r.size()) -
                                  static_cast<long>(cands[s].size()));
            if (best_diff < 0 || diff < best_diff ||
                (diff == best_diff && r.size() < best_len)) {
                best_diff = diff;
                best_len = r.size();
            }
        }
        r_len += static_cast<double>(best_len);
        for (std::size_t k = 1; k <= n; ++k) {
            std::map<Ngram, int> cand_counts = ref_ngrams(cands[s], k);
            std::map<Ngram, int> clip;
            for (const Toks& r : refs[s]) {
                for (const auto& [g, c] : ref_ngrams(r, k)) {
                    clip[g] = std::max(clip[g], c);
                }
            }
            for (const auto& [g, c] : cand_counts) {
                den[k - 1] += c;
                auto it = clip.find(g);
                if (it != clip.end()) num[k - 1] += std::min(c, it->second);
            }
        }
    }
    double logp = 0;
    for (std::size_t k = 0; k < n; ++k) {
        if (den[k] == 0 || num[k] == 0) return 0.0;
        logp += std::log(num[k] / den[k]) / static_cast<double>(n);
    }
    double bp = (c_len > 0 && c_len < r_len) ? std::exp(1.0 - r_len / c_len) : 1.0;
    return c_len > 0 ? bp * std::exp(logp) : 0.0;
}

// Full-table quadratic DP, kept separate from the rolling-array production one.
inline std::size_t ref_lcs(const Toks& a, const Toks& b) {
    std::vector<std::vector<std::size_t>> dp(a.size() + 1,
                                             std::vector<std::size_t>(b.size() + 1, 0));
    for (std::size_t i = 1; i <= a.size(); ++i)
        for (std::size_t j = 1; j <= b.size(); ++j)
            dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1
                                            : std::max(dp[i - 1][j], dp[i][j - 1]);
    return dp[a.size()][b.size()];
}

inline double ref_rouge_l(const std::vector<Toks>& cands,
                          const std::vector<std::vector<Toks>>& refs, double beta = 1.2) {
    double total = 0;
    for (std::size_t s = 0; s < cands.size(); ++s) {
        double best = 0;
        for (const Toks& r : refs[s]) {
            if (cands[s].empty() || r.empty()) continue;
            double l = static_cast<double>(ref_lcs(cands[s], r));
            if (l == 0) continue;
            double prec = l / static_cast<double>(cands[s].size());
            double rec = l / static_cast<double>(r.size());
            best = std::max(best, (1 + beta * beta) * rec * prec / (rec + beta * beta * prec));
        }
        total += best;
    }
    return total / static_cast<double>(cands.size());
}

inline double ref_cider_d(const std::vector<Toks>& cands,
                          const std::vector<std::vector<Toks>>& refs, double sigma = 6.0) {
    std::size_t n_docs = refs.size();
    // document frequencies per order
    std::array<std::map<Ngram, double>, 4> df;
    for (const auto& rs : refs) {
        for (std::size_t k = 1; k <= 4; ++k) {
            std::set<Ngram> seen;
            for (const Toks& r : rs)
                for (const auto& [g, c] : ref_ngrams(r, k)) seen.insert(g);
            for (const auto& g : seen) df[k - 1][g] += 1.0;
        }
    }
    auto weights = [&](const Toks& t, std::size_t k) {
        std::map<Ngram, double> w;
        for (const auto& [g, c] : ref_ngrams(t, k)) {
            auto it = df[k - 1].find(g);
            double d = it == df[k - 1].end() ? 1.0 : std::max(1.0, it->second);
            w[g] = c * std::log(static_cast<double>(n_docs) / d);
        }
        return w;
    };
    auto norm = [](const std::map<Ngram, double>& w) {
        double s = 0;
        for (const auto& [g, v] : w) s += v * v;
        return std::sqrt(s);
    };
    double corpus = 0;
    for (std::size_t s = 0; s < cands.size(); ++s) {
        double sample = 0;
        for (std::size_t k = 1; k <= 4; ++k) {
            auto cw = weights(cands[s], k);
            double cn = norm(cw);
            double order = 0;
            for (const Toks& r : refs[s]) {
                auto rw = weights(r, k);
                double rn = norm(rw);
                if (cn == 0 || rn == 0) continue;
                double dot = 0;
                for (const auto& [g, v] : cw) {
                    auto it = rw.find(g);
                    if (it != rw.end()) dot += std::min(v, it->second) * it->second;
                }
                double delta = static_cast<double>(cands[s].size()) -
                               static_cast<double>(r.size());
                order += dot / (cn * rn) * std::exp(-delta * delta / (2 * sigma * sigma));
            }
            sample += order / static_cast<double>(refs[s].size());
        }
        corpus += 10.0 * sample / 4.0;
    }
    return corpus / static_cast<double>(cands.size());
}

inline double ref_meteor(const Toks& cand, const Toks& ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    // match list: (cand index, ref index); exact stage then stem stage
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<bool> cu(cand.size(), false), ru(ref.size(), false);
    for (int stage = 0; stage < 2; ++stage) {
        for (std::size_t i = 0; i < cand.size(); ++i) {
            if (cu[i]) continue;
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (ru[j]) continue;
                bool hit = stage == 0 ? cand[i] == ref[j]
                                      : porter_stem(cand[i]) == porter_stem(ref[j]);
                if (hit) {
                    pairs.emplace_back(i, j);
                    cu[i] = true;
                    ru[j] = true;
                    break;
                }
            }
        }
    }
    if (pairs.empty()) return 0.0;
    std::sort(pairs.begin(), pairs.end());
    std::size_t chunks = 1;
    for (std::size_t k = 1; k < pairs.size(); ++k) {
        if (pairs[k].first != pairs[k - 1].first + 1 ||
            pairs[k].second != pairs[k - 1].second + 1)
            ++chunks;
    }
    double m = static_cast<double>(pairs.size());
    double p = m / static_cast<double>(cand.size());
    double r = m / static_cast<double>(ref.size());
    double f = p * r / (0.9 * p + 0.1 * r);
    double pen = 0.5 * std::pow(static_cast<double>(chunks) / m, 3.0);
    return f * (1.0 - pen);
}

inline double ref_meteor_corpus(const std::vector<Toks>& cands,
                                const std::vector<std::vector<Toks>>& refs) {
    double total = 0;
    for (std::size_t s = 0; s < cands.size(); ++s) {
        double best = 0;
        for (const Toks& r : refs[s]) best = std::max(best, ref_meteor(cands[s], r));
        total += best;
    }
    return total / static_cast<double>(cands.size());
}

}  // namespace nsva::testing
