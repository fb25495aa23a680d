#pragma once

// Generic length-normalized beam search over any autoregressive scorer.
//
// The scorer maps a token prefix to (token id, log-prob) continuations.
// Candidates are ranked by cumulative raw log-prob during the search with a
// deterministic tie-break (token id, then parent order); the final hypothesis
// is chosen by normalized score (cumulative log-prob / token count) among
// finished hypotheses, falling back to the best unfinished one. Width 1
// reduces to greedy decoding token for token.

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <vector>

namespace nsva {

struct BeamHypothesis {
    std::vector<int> tokens;  // EOS-terminated when finished
    std::vector<double> token_logprobs;
    double logprob = 0.0;
    bool finished = false;

    double normalized() const {
        return tokens.empty() ? logprob : logprob / static_cast<double>(tokens.size());
    }
};

struct BeamParams {
    std::size_t width = 5;
    std::size_t max_len = 30;
    int eos_id = 2;
};

using NextLogprobsFn =
    std::function<std::vector<std::pair<int, double>>(const std::vector<int>& prefix)>;

inline BeamHypothesis beam_search_core(const NextLogprobsFn& next_logprobs,
                                       const BeamParams& params) {
    if (params.width < 1) throw std::invalid_argument("beam_search: width must be >= 1");
    std::vector<BeamHypothesis> beam{BeamHypothesis{}};
    std::vector<BeamHypothesis> finished;

    for (std::size_t step = 0; step < params.max_len && !beam.empty(); ++step) {
        struct Candidate {
            double logprob;
            int token;
            std::size_t parent;
            double step_lp;
        };
        std::vector<Candidate> candidates;
        for (std::size_t b = 0; b < beam.size(); ++b) {
            for (const auto& [tok, lp] : next_logprobs(beam[b].tokens)) {
                candidates.push_back({beam[b].logprob + lp, tok, b, lp});
            }
        }
        std::sort(candidates.begin(), candidates.end(),
                  [](const Candidate& a, const Candidate& b) {
                      if (a.logprob != b.logprob) return a.logprob > b.logprob;
                      if (a.token != b.token) return a.token < b.token;
                      return a.parent < b.parent;
                  });
        // top `width` candidates survive; EOS extensions retire to the pool
        std::vector<BeamHypothesis> next;
        std::size_t selected = 0;
        for (const Candidate& c : candidates) {
            if (selected >= params.width) break;
            ++selected;
            BeamHypothesis hyp = beam[c.parent];
            hyp.tokens.push_back(c.token);
            hyp.token_logprobs.push_back(c.step_lp);
            hyp.logprob = c.logprob;
            if (c.token == params.eos_id) {
                hyp.finished = true;
                finished.push_back(std::move(hyp));
            } else {
                next.push_back(std::move(hyp));
            }
        }
        beam = std::move(next);
    }
    for (BeamHypothesis& hyp : beam) finished.push_back(hyp);  // unfinished leftovers

    auto better = [](const BeamHypothesis& a, const BeamHypothesis& b) {
        if (a.finished != b.finished) return a.finished;
        if (a.normalized() != b.normalized()) return a.normalized() > b.normalized();
        if (a.logprob != b.logprob) return a.logprob > b.logprob;
        return a.tokens < b.tokens;
    };
    std::sort(finished.begin(), finished.end(), better);
    if (finished.empty()) return BeamHypothesis{};
    return finished.front();
}

}  // namespace nsva
