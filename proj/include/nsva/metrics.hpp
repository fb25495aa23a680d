#pragma once

// Caption evaluation metrics (BLEU@1-4, ROUGE-L, CIDEr-D, METEOR-lite) and
// the sequence-task metrics (SR / Acc / mIoU).
//
// Conventions pinned here and exercised by the golden tests:
//  - BLEU is corpus-level clipped n-gram precision with the geometric mean
//    over orders 1..n and the closest-reference brevity penalty. An order
//    with zero candidate n-grams or zero matches makes the score 0.
//  - ROUGE-L is the LCS F-measure with beta = 1.2 (recall-weighted), maximum
//    over references, mean over the corpus.
//  - CIDEr-D uses sigma = 6, orders 1..4, a final scale of 10 and
//    idf = log(num_docs / max(1, df)).
//  - METEOR-lite aligns unigrams exactly and then by Porter stem, with
//    F_mean = PR / (0.9 P + 0.1 R) and penalty 0.5 (chunks/matches)^3.
//    No synonym dictionary.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "nsva/text.hpp"

namespace nsva {

using Tokens = std::vector<std::string>;

namespace detail {

// n-gram key: tokens joined with an unprintable separator
inline std::string ngram_key(const Tokens& toks, std::size_t start, std::size_t n) {
    std::string key;
    for (std::size_t i = 0; i < n; ++i) {
        if (i) key.push_back('\x1f');
        key += toks[start + i];
    }
    return key;
}

inline std::unordered_map<std::string, std::size_t> ngram_counts(const Tokens& toks,
                                                                 std::size_t n) {
    std::unordered_map<std::string, std::size_t> counts;
    if (toks.size() >= n && n > 0) {
        for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[ngram_key(toks, i, n)];
    }
    return counts;
}

}  // namespace detail

// --- BLEU --------------------------------------------------------------------

inline double bleu(const std::vector<Tokens>& candidates,
                   const std::vector<std::vector<Tokens>>& references, std::size_t n) {
    if (n < 1 || n > 4) throw std::invalid_argument("bleu: order must be in 1..4");
    if (candidates.empty() || candidates.size() != references.size()) {
        throw std::invalid_argument("bleu: empty corpus or candidate/reference count mismatch");
    }
    std::vector<double> matched(n, 0.0), total(n, 0.0);
    double cand_len = 0.0, ref_len = 0.0;
    for (std::size_t s = 0; s < candidates.size(); ++s) {
        const Tokens& cand = candidates[s];
        const auto& refs = references[s];
        if (refs.empty()) throw std::invalid_argument("bleu: sample without references");
        cand_len += static_cast<double>(cand.size());
        // closest reference length; ties resolved toward the shorter one
        std::size_t best = refs[0].size();
        for (const Tokens& r : refs) {
            auto diff = [&](std::size_t len) {
                return len > cand.size() ? len - cand.size() : cand.size() - len;
            };
            if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best))
                best = r.size();
        }
        ref_len += static_cast<double>(best);

        for (std::size_t k = 1; k <= n; ++k) {
            auto cc = detail::ngram_counts(cand, k);
            std::unordered_map<std::string, std::size_t> max_ref;
            for (const Tokens& r : refs) {
                for (const auto& [key, cnt] : detail::ngram_counts(r, k)) {
                    max_ref[key] = std::max(max_ref[key], cnt);
                }
            }
            for (const auto& [key, cnt] : cc) {
                total[k - 1] += static_cast<double>(cnt);
                auto it = max_ref.find(key);
                if (it != max_ref.end())
                    matched[k - 1] += static_cast<double>(std::min(cnt, it->second));
            }
        }
    }
    double log_sum = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        if (total[k] <= 0.0 || matched[k] <= 0.0) return 0.0;
        log_sum += std::log(matched[k] / total[k]);
    }
    double bp = cand_len < ref_len && cand_len > 0.0 ? std::exp(1.0 - ref_len / cand_len) : 1.0;
    if (cand_len == 0.0) return 0.0;
    return bp * std::exp(log_sum / static_cast<double>(n));
}

// --- ROUGE-L -----------------------------------------------------------------

inline std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    if (a.empty() || b.empty()) return 0;
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1]) {
                cur[j] = prev[j - 1] + 1;
            } else {
                cur[j] = std::max(prev[j], cur[j - 1]);
            }
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

inline double rouge_l_single(const Tokens& cand, const std::vector<Tokens>& refs,
                             double beta = 1.2) {
    if (cand.empty()) return 0.0;
    double best = 0.0;
    for (const Tokens& ref : refs) {
        if (ref.empty()) continue;
        double l = static_cast<double>(lcs_length(cand, ref));
        double p = l / static_cast<double>(cand.size());
        double r = l / static_cast<double>(ref.size());
        if (p <= 0.0 || r <= 0.0) continue;
        double f = (1.0 + beta * beta) * r * p / (r + beta * beta * p);
        best = std::max(best, f);
    }
    return best;
}

inline double rouge_l(const std::vector<Tokens>& candidates,
                      const std::vector<std::vector<Tokens>>& references) {
    if (candidates.empty() || candidates.size() != references.size()) {
        throw std::invalid_argument("rouge_l: empty corpus or count mismatch");
    }
    double acc = 0.0;
    for (std::size_t s = 0; s < candidates.size(); ++s)
        acc += rouge_l_single(candidates[s], references[s]);
    return acc / static_cast<double>(candidates.size());
}

// --- CIDEr-D -----------------------------------------------------------------

// n-gram document frequencies over the reference corpus (n = 1..4). One
// document = the reference set of one sample.
struct CorpusStats {
    std::array<std::unordered_map<std::string, double>, 4> doc_freq;
    std::size_t num_docs = 0;

    void validate() const {
        if (num_docs == 0) throw std::invalid_argument("CorpusStats: empty corpus");
        for (const auto& m : doc_freq) {
            for (const auto& [key, df] : m) {
                if (df > static_cast<double>(num_docs)) {
                    throw std::invalid_argument("CorpusStats: document frequency exceeds corpus");
                }
            }
        }
    }
};

inline CorpusStats build_corpus_stats(const std::vector<std::vector<Tokens>>& references) {
    CorpusStats stats;
    stats.num_docs = references.size();
    for (const auto& refs : references) {
        for (std::size_t k = 1; k <= 4; ++k) {
            std::set<std::string> seen;
            for (const Tokens& r : refs) {
                for (const auto& [key, cnt] : detail::ngram_counts(r, k)) seen.insert(key);
            }
            for (const auto& key : seen) stats.doc_freq[k - 1][key] += 1.0;
        }
    }
    return stats;
}

namespace detail {

struct TfidfVec {
    std::unordered_map<std::string, double> weights;
    double norm = 0.0;
    double length = 0.0;
};

inline TfidfVec tfidf(const Tokens& toks, std::size_t k, const CorpusStats& stats) {
    TfidfVec v;
    v.length = static_cast<double>(toks.size());
    double log_n = std::log(static_cast<double>(stats.num_docs));
    for (const auto& [key, cnt] : ngram_counts(toks, k)) {
        auto it = stats.doc_freq[k - 1].find(key);
        double df = it == stats.doc_freq[k - 1].end() ? 1.0 : std::max(1.0, it->second);
        double w = static_cast<double>(cnt) * (log_n - std::log(df));
        v.weights[key] = w;
        v.norm += w * w;
    }
    v.norm = std::sqrt(v.norm);
    return v;
}

}  // namespace detail

inline double cider_d_single(const Tokens& cand, const std::vector<Tokens>& refs,
                             const CorpusStats& stats, double sigma = 6.0) {
    stats.validate();
    if (refs.empty()) return 0.0;
    double score = 0.0;
    for (std::size_t k = 1; k <= 4; ++k) {
        auto cvec = detail::tfidf(cand, k, stats);
        double order_score = 0.0;
        for (const Tokens& ref : refs) {
            auto rvec = detail::tfidf(ref, k, stats);
            if (cvec.norm <= 0.0 || rvec.norm <= 0.0) continue;
            double sim = 0.0;
            for (const auto& [key, cw] : cvec.weights) {
                auto it = rvec.weights.find(key);
                if (it != rvec.weights.end()) sim += std::min(cw, it->second) * it->second;
            }
            sim /= cvec.norm * rvec.norm;
            double delta = cvec.length - rvec.length;
            sim *= std::exp(-delta * delta / (2.0 * sigma * sigma));
            order_score += sim;
        }
        score += order_score / static_cast<double>(refs.size());
    }
    return 10.0 * score / 4.0;
}

inline double cider_d(const std::vector<Tokens>& candidates,
                      const std::vector<std::vector<Tokens>>& references,
                      const CorpusStats& stats) {
    if (candidates.empty() || candidates.size() != references.size()) {
        throw std::invalid_argument("cider_d: empty corpus or count mismatch");
    }
    double acc = 0.0;
    for (std::size_t s = 0; s < candidates.size(); ++s)
        acc += cider_d_single(candidates[s], references[s], stats);
    return acc / static_cast<double>(candidates.size());
}

// --- METEOR-lite -------------------------------------------------------------

struct MeteorAlignment {
    std::size_t matches = 0;
    std::size_t chunks = 0;
};

// Two-stage unigram alignment: exact matches first, then Porter-stem matches
// on what remains; each token participates in at most one match. Chunks are
// maximal runs that are contiguous in both sentences.
inline MeteorAlignment meteor_align(const Tokens& cand, const Tokens& ref) {
    std::vector<int> cand_to_ref(cand.size(), -1);
    std::vector<bool> ref_used(ref.size(), false);

    for (std::size_t i = 0; i < cand.size(); ++i) {
        for (std::size_t j = 0; j < ref.size(); ++j) {
            if (!ref_used[j] && cand[i] == ref[j]) {
                cand_to_ref[i] = static_cast<int>(j);
                ref_used[j] = true;
                break;
            }
        }
    }
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (cand_to_ref[i] != -1) continue;
        std::string cs = porter_stem(cand[i]);
        for (std::size_t j = 0; j < ref.size(); ++j) {
            if (!ref_used[j] && cs == porter_stem(ref[j])) {
                cand_to_ref[i] = static_cast<int>(j);
                ref_used[j] = true;
                break;
            }
        }
    }

    MeteorAlignment a;
    int prev_ref = -2;
    for (std::size_t i = 0; i < cand.size(); ++i) {
        if (cand_to_ref[i] == -1) {
            prev_ref = -2;
            continue;
        }
        ++a.matches;
        if (cand_to_ref[i] != prev_ref + 1) ++a.chunks;
        prev_ref = cand_to_ref[i];
    }
    return a;
}

inline double meteor_lite(const Tokens& cand, const Tokens& ref, double alpha = 0.9,
                          double gamma = 0.5, double beta = 3.0) {
    if (cand.empty() || ref.empty()) return 0.0;
    MeteorAlignment a = meteor_align(cand, ref);
    if (a.matches == 0) return 0.0;
    double m = static_cast<double>(a.matches);
    double p = m / static_cast<double>(cand.size());
    double r = m / static_cast<double>(ref.size());
    double f_mean = p * r / (alpha * p + (1.0 - alpha) * r);
    double penalty = gamma * std::pow(static_cast<double>(a.chunks) / m, beta);
    return f_mean * (1.0 - penalty);
}

inline double meteor_lite_multi(const Tokens& cand, const std::vector<Tokens>& refs) {
    double best = 0.0;
    for (const Tokens& r : refs) best = std::max(best, meteor_lite(cand, r));
    return best;
}

inline double meteor_lite_corpus(const std::vector<Tokens>& candidates,
                                 const std::vector<std::vector<Tokens>>& references) {
    if (candidates.empty() || candidates.size() != references.size()) {
        throw std::invalid_argument("meteor: empty corpus or count mismatch");
    }
    double acc = 0.0;
    for (std::size_t s = 0; s < candidates.size(); ++s)
        acc += meteor_lite_multi(candidates[s], references[s]);
    return acc / static_cast<double>(candidates.size());
}

// --- sequence-task metrics (SR / Acc / mIoU) -----------------------------------

struct SequenceScores {
    double sr = 0.0;
    double acc = 0.0;
    double iou = 0.0;
};

// SR: exact order-sensitive match. Acc: positionwise agreement over the
// shorter length, denominated by the longer. IoU: set overlap. Two empty
// sequences score (1, 1, 1) by convention.
inline SequenceScores sequence_metrics(const Tokens& pred, const Tokens& gt) {
    SequenceScores s;
    if (pred.empty() && gt.empty()) return {1.0, 1.0, 1.0};
    s.sr = pred == gt ? 1.0 : 0.0;
    std::size_t shorter = std::min(pred.size(), gt.size());
    std::size_t longer = std::max(pred.size(), gt.size());
    std::size_t hits = 0;
    for (std::size_t i = 0; i < shorter; ++i)
        if (pred[i] == gt[i]) ++hits;
    s.acc = longer == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(longer);
    std::set<std::string> ps(pred.begin(), pred.end()), gs(gt.begin(), gt.end());
    std::size_t inter = 0;
    for (const auto& t : ps) inter += gs.count(t);
    std::size_t uni = ps.size() + gs.size() - inter;
    s.iou = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    return s;
}

inline SequenceScores sequence_metrics_corpus(const std::vector<Tokens>& preds,
                                              const std::vector<Tokens>& gts) {
    if (preds.empty() || preds.size() != gts.size()) {
        throw std::invalid_argument("sequence_metrics: empty corpus or count mismatch");
    }
    SequenceScores acc;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        SequenceScores s = sequence_metrics(preds[i], gts[i]);
        acc.sr += s.sr;
        acc.acc += s.acc;
        acc.iou += s.iou;
    }
    double n = static_cast<double>(preds.size());
    return {acc.sr / n, acc.acc / n, acc.iou / n};
}

// --- bundled caption metric report --------------------------------------------

inline std::map<std::string, double> caption_metrics(
    const std::vector<Tokens>& candidates, const std::vector<std::vector<Tokens>>& references) {
    CorpusStats stats = build_corpus_stats(references);
    std::map<std::string, double> out;
    out["BLEU@1"] = bleu(candidates, references, 1);
    out["BLEU@2"] = bleu(candidates, references, 2);
    out["BLEU@3"] = bleu(candidates, references, 3);
    out["BLEU@4"] = bleu(candidates, references, 4);
    out["ROUGE_L"] = rouge_l(candidates, references);
    out["CIDEr-D"] = cider_d(candidates, references, stats);
    out["METEOR"] = meteor_lite_corpus(candidates, references);
    return out;
}

}  // namespace nsva
