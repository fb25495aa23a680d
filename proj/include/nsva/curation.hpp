#pragma once

// Corpus curation: merging events that share a clip, stripping out-of-scope
// caption fragments, matchup-constrained split assignment, vocabulary
// building and corpus statistics.

#include <algorithm>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsva/records.hpp"
#include "nsva/tensor.hpp"
#include "nsva/text.hpp"
#include "nsva/vocab.hpp"

namespace nsva {

inline constexpr const char* kCaptionJoinSeparator = " . ";

// One record per clip id: captions joined in event-timestamp order, action
// and player sequences concatenated in the same order. Conflicting game ids
// under one clip id are a corpus error. Idempotent.
inline std::vector<PlayByPlayRecord> merge_same_clip(std::vector<PlayByPlayRecord> records) {
    std::map<std::string, std::vector<PlayByPlayRecord>> by_clip;
    std::vector<std::string> clip_order;
    for (PlayByPlayRecord& r : records) {
        r.validate();
        if (!by_clip.count(r.clip_id)) clip_order.push_back(r.clip_id);
        by_clip[r.clip_id].push_back(std::move(r));
    }
    std::vector<PlayByPlayRecord> out;
    out.reserve(clip_order.size());
    for (const std::string& clip : clip_order) {
        auto& group = by_clip[clip];
        std::stable_sort(group.begin(), group.end(),
                         [](const PlayByPlayRecord& a, const PlayByPlayRecord& b) {
                             return a.event_ts < b.event_ts;
                         });
        PlayByPlayRecord merged = group.front();
        for (std::size_t i = 1; i < group.size(); ++i) {
            const PlayByPlayRecord& r = group[i];
            if (r.game_id != merged.game_id) {
                throw std::runtime_error("merge_same_clip: clip " + clip +
                                         " spans games " + merged.game_id + " and " + r.game_id);
            }
            if (!r.caption.empty()) {
                if (!merged.caption.empty()) merged.caption += kCaptionJoinSeparator;
                merged.caption += r.caption;
            }
            auto append = [](std::vector<std::string>& dst, const std::vector<std::string>& src) {
                dst.insert(dst.end(), src.begin(), src.end());
            };
            append(merged.action_coarse, r.action_coarse);
            append(merged.action_fine, r.action_fine);
            append(merged.action_event, r.action_event);
            append(merged.players, r.players);
            if (!merged.distance_ft && r.distance_ft) merged.distance_ft = r.distance_ft;
        }
        out.push_back(std::move(merged));
    }
    return out;
}

// --- out-of-scope caption filtering -------------------------------------------

// Cumulative-statistic patterns shipped as data so the list can grow without
// rebuilds. Each entry is an ECMAScript regex applied case-insensitively.
inline std::vector<std::string> default_cumulative_patterns() {
    return {
        R"(\(\s*\d+\s*PTS\s*\))",
        R"(\(\s*\d+\s*AST\s*\))",
        R"(\(\s*\d+\s*REB\s*\))",
        R"(\(\s*\d+\s*BLK\s*\))",
        R"(\(\s*\d+\s*STL\s*\))",
        R"(\(\s*\d+\s*of\s*\d+\s*\))",
        R"(scores?\s+\d+\s+points?\s+this\s+game)",
        R"(season\s+high\s+\d+)",
    };
}

inline std::vector<std::string> load_patterns(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_patterns: cannot open " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line[0] != '#') out.push_back(line);
    }
    return out;
}

class OutOfScopeFilter {
public:
    explicit OutOfScopeFilter(std::vector<std::string> patterns = default_cumulative_patterns()) {
        for (const std::string& p : patterns) {
            regexes_.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
        }
    }

    std::string strip(const std::string& caption, std::size_t* removed = nullptr) const {
        std::string cur = caption;
        for (const std::regex& re : regexes_) {
            std::string next;
            std::size_t hits = 0;
            std::sregex_iterator it(cur.begin(), cur.end(), re), end;
            std::size_t pos = 0;
            for (; it != end; ++it) {
                next += cur.substr(pos, static_cast<std::size_t>(it->position()) - pos);
                pos = static_cast<std::size_t>(it->position() + it->length());
                ++hits;
            }
            next += cur.substr(pos);
            cur = std::move(next);
            if (removed) *removed += hits;
        }
        // collapse doubled whitespace left by removals
        std::string tidy;
        bool prev_space = false;
        for (char c : cur) {
            bool space = c == ' ' || c == '\t';
            if (space && prev_space) continue;
            tidy.push_back(space ? ' ' : c);
            prev_space = space;
        }
        while (!tidy.empty() && tidy.back() == ' ') tidy.pop_back();
        while (!tidy.empty() && tidy.front() == ' ') tidy.erase(tidy.begin());
        return tidy;
    }

    // Strips cumulative-statistic fragments; records whose caption becomes
    // empty are dropped (nullopt).
    std::optional<PlayByPlayRecord> filter(const PlayByPlayRecord& record,
                                           std::size_t* removed = nullptr) const {
        PlayByPlayRecord out = record;
        out.caption = strip(record.caption, removed);
        if (out.caption.empty()) return std::nullopt;
        return out;
    }

private:
    std::vector<std::regex> regexes_;
};

// --- split assignment ----------------------------------------------------------

enum class Split { Train = 0, Val = 1, Test = 2 };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

struct GameInfo {
    std::string game_id;
    std::string team_a;
    std::string team_b;

    std::pair<std::string, std::string> matchup() const {
        return team_a < team_b ? std::make_pair(team_a, team_b)
                               : std::make_pair(team_b, team_a);
    }
};

struct SplitAssignment {
    std::map<std::string, Split> by_game;
    std::vector<std::string> forced_train_notes;  // matchups satisfiable only by train

    Split of(const std::string& game_id) const {
        auto it = by_game.find(game_id);
        if (it == by_game.end()) {
            throw std::out_of_range("SplitAssignment: unknown game " + game_id);
        }
        return it->second;
    }

    std::size_t count(Split s) const {
        std::size_t n = 0;
        for (const auto& [g, sp] : by_game)
            if (sp == s) ++n;
        return n;
    }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [g, s] : by_game) j[g] = split_name(s);
        return j;
    }
};

struct SplitRatios {
    double train = 100.0 / 132.0;
    double val = 16.0 / 132.0;
    double test = 16.0 / 132.0;
};

// Greedy constraint-first assignment: one game of every matchup goes to train
// first, then val and test fill to their quotas, the remainder lands in
// train. Deterministic under the seed; the matchup constraint is re-verified
// post hoc.
inline SplitAssignment assign_splits(const std::vector<GameInfo>& games,
                                     const SplitRatios& ratios = {},
                                     std::uint64_t seed = 0) {
    if (games.empty()) throw std::invalid_argument("assign_splits: no games");
    SplitAssignment out;
    Rng rng(seed ^ 0x5b7a2f93c1d4e8ull);

    std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> by_matchup;
    for (std::size_t i = 0; i < games.size(); ++i) {
        by_matchup[games[i].matchup()].push_back(i);
    }

    std::vector<bool> assigned(games.size(), false);
    // constraint first: every matchup contributes one train game
    for (auto& [matchup, idxs] : by_matchup) {
        std::size_t pick = idxs[rng.uniform_index(idxs.size())];
        out.by_game[games[pick].game_id] = Split::Train;
        assigned[pick] = true;
        if (idxs.size() == 1) {
            out.forced_train_notes.push_back(matchup.first + " vs " + matchup.second);
        }
    }

    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < games.size(); ++i)
        if (!assigned[i]) rest.push_back(i);
    rng.shuffle(rest);

    auto quota = [&](double ratio) {
        return static_cast<std::size_t>(
            std::llround(ratio * static_cast<double>(games.size())));
    };
    std::size_t val_quota = quota(ratios.val);
    std::size_t test_quota = quota(ratios.test);
    std::size_t vi = 0, ti = 0;
    for (std::size_t i : rest) {
        if (vi < val_quota) {
            out.by_game[games[i].game_id] = Split::Val;
            ++vi;
        } else if (ti < test_quota) {
            out.by_game[games[i].game_id] = Split::Test;
            ++ti;
        } else {
            out.by_game[games[i].game_id] = Split::Train;
        }
    }

    // post-hoc verification of the matchup constraint
    for (const auto& [matchup, idxs] : by_matchup) {
        bool covered = false;
        for (std::size_t i : idxs)
            covered = covered || out.of(games[i].game_id) == Split::Train;
        if (!covered) {
            throw std::logic_error("assign_splits: matchup " + matchup.first + " vs " +
                                   matchup.second + " missing from train");
        }
    }
    return out;
}

// --- vocabulary building --------------------------------------------------------

// Word tokens from every caption plus one atomic augmented token per distinct
// action label (all three levels) and per player name.
inline Vocabulary build_vocabulary(const std::vector<PlayByPlayRecord>& records,
                                   const ActionTaxonomy* taxonomy = nullptr) {
    Vocabulary v;
    for (const PlayByPlayRecord& r : records) {
        for (const std::string& tok : tokenize(r.caption).tokens) v.add_token(tok, false);
    }
    std::set<std::string> actions;
    std::set<std::string> names;
    if (taxonomy != nullptr) {
        for (const std::string& l : taxonomy->all_labels()) actions.insert(l);
    }
    for (const PlayByPlayRecord& r : records) {
        for (const std::string& a : r.action_coarse) actions.insert(a);
        for (const std::string& a : r.action_fine) actions.insert(a);
        for (const std::string& a : r.action_event) actions.insert(a);
        for (const std::string& p : r.players) names.insert(p);
    }
    for (const std::string& a : actions) v.add_token(a, true);
    for (const std::string& n : names) v.add_token(n, true);
    return v;
}

// --- corpus statistics ------------------------------------------------------------

struct CorpusReport {
    std::size_t videos = 0;
    std::size_t sentences = 0;
    double hours = 0.0;
    double avg_words = 0.0;
    std::size_t games = 0;
    std::size_t teams = 0;
    std::size_t actions = 0;
    std::size_t identities = 0;
    // per split: videos, sentences, games
    std::map<std::string, std::array<std::size_t, 3>> per_split;

    nlohmann::json to_json() const {
        nlohmann::json j{{"videos", videos},     {"sentences", sentences},
                         {"hours", hours},       {"avg_words", avg_words},
                         {"games", games},       {"teams", teams},
                         {"actions", actions},   {"identities", identities}};
        for (const auto& [name, counts] : per_split) {
            j["splits"][name] = {{"videos", counts[0]},
                                 {"sentences", counts[1]},
                                 {"games", counts[2]}};
        }
        return j;
    }

    std::string to_table() const {
        std::ostringstream os;
        os.setf(std::ios::fixed);
        os.precision(1);
        os << "videos     " << videos << "\n"
           << "sentences  " << sentences << "\n"
           << "hours      " << hours << "\n"
           << "avg words  " << avg_words << "\n"
           << "games      " << games << "\n"
           << "teams      " << teams << "\n"
           << "actions    " << actions << "\n"
           << "identities " << identities << "\n";
        for (const auto& [name, counts] : per_split) {
            os << name << "  videos " << counts[0] << "  sentences " << counts[1] << "  games "
               << counts[2] << "\n";
        }
        return os.str();
    }
};

inline CorpusReport corpus_stats(const std::vector<PlayByPlayRecord>& records,
                                 const SplitAssignment* splits = nullptr) {
    CorpusReport rep;
    std::set<std::string> games, teams, actions, identities;
    std::size_t total_words = 0;
    for (const PlayByPlayRecord& r : records) {
        ++rep.videos;
        rep.sentences += std::max<std::size_t>(1, r.event_count());
        rep.hours += r.clip_seconds / 3600.0;
        total_words += tokenize(r.caption).tokens.size();
        games.insert(r.game_id);
        teams.insert(r.teams.first);
        teams.insert(r.teams.second);
        for (const std::string& a : r.action_coarse) actions.insert(a);
        for (const std::string& a : r.action_fine) actions.insert(a);
        for (const std::string& a : r.action_event) actions.insert(a);
        for (const std::string& p : r.players) identities.insert(p);
        if (splits != nullptr) {
            const char* name = split_name(splits->of(r.game_id));
            auto& row = rep.per_split[name];
            row[0] += 1;
            row[1] += std::max<std::size_t>(1, r.event_count());
        }
    }
    if (splits != nullptr) {
        for (const auto& [g, s] : splits->by_game) rep.per_split[split_name(s)][2] += 1;
    }
    rep.games = games.size();
    rep.teams = teams.size();
    rep.actions = actions.size();
    rep.identities = identities.size();
    rep.avg_words = rep.sentences == 0
                        ? 0.0
                        : static_cast<double>(total_words) / static_cast<double>(rep.sentences);
    return rep;
}

}  // namespace nsva
