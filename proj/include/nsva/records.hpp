#pragma once

// Play-by-play records, the three-level action taxonomy and their file
// formats.
//
// Record JSONL schema (one object per line):
//   game_id      string
//   clip_id      string, non-empty
//   event_ts     number, seconds from game start
//   caption      string
//   action_coarse / action_fine / action_event   arrays of labels, one entry
//                per event carried by the record (single entry before merging)
//   players      array of names ordered by involvement
//   teams        [home, away]
//   distance_ft  number or null
//   clip_seconds number, duration of the referenced clip (0 when unknown)
//
// Taxonomy text format: one label per line, two spaces of indent per level,
// children follow their parent. Example:
//   Shot
//     Shot Jump Shot
//       3-pt Jump-Shot Missed

#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace nsva {

struct PlayByPlayRecord {
    std::string game_id;
    std::string clip_id;
    double event_ts = 0.0;
    std::string caption;
    std::vector<std::string> action_coarse;
    std::vector<std::string> action_fine;
    std::vector<std::string> action_event;
    std::vector<std::string> players;
    std::pair<std::string, std::string> teams;
    std::optional<double> distance_ft;
    double clip_seconds = 0.0;

    std::size_t event_count() const { return action_event.size(); }

    void validate() const {
        if (clip_id.empty()) throw std::invalid_argument("PlayByPlayRecord: empty clip id");
        if (action_coarse.size() != action_fine.size() ||
            action_fine.size() != action_event.size()) {
            throw std::invalid_argument("PlayByPlayRecord: label levels disagree for clip " +
                                        clip_id);
        }
    }
};

inline nlohmann::json record_to_json(const PlayByPlayRecord& r) {
    nlohmann::json j{{"game_id", r.game_id},
                     {"clip_id", r.clip_id},
                     {"event_ts", r.event_ts},
                     {"caption", r.caption},
                     {"action_coarse", r.action_coarse},
                     {"action_fine", r.action_fine},
                     {"action_event", r.action_event},
                     {"players", r.players},
                     {"teams", {r.teams.first, r.teams.second}},
                     {"clip_seconds", r.clip_seconds}};
    if (r.distance_ft) {
        j["distance_ft"] = *r.distance_ft;
    } else {
        j["distance_ft"] = nullptr;
    }
    return j;
}

inline PlayByPlayRecord record_from_json(const nlohmann::json& j) {
    PlayByPlayRecord r;
    r.game_id = j.at("game_id").get<std::string>();
    r.clip_id = j.at("clip_id").get<std::string>();
    r.event_ts = j.at("event_ts").get<double>();
    r.caption = j.at("caption").get<std::string>();
    r.action_coarse = j.at("action_coarse").get<std::vector<std::string>>();
    r.action_fine = j.at("action_fine").get<std::vector<std::string>>();
    r.action_event = j.at("action_event").get<std::vector<std::string>>();
    r.players = j.at("players").get<std::vector<std::string>>();
    auto teams = j.at("teams");
    r.teams = {teams.at(0).get<std::string>(), teams.at(1).get<std::string>()};
    if (j.contains("distance_ft") && !j.at("distance_ft").is_null()) {
        r.distance_ft = j.at("distance_ft").get<double>();
    }
    if (j.contains("clip_seconds")) r.clip_seconds = j.at("clip_seconds").get<double>();
    r.validate();
    return r;
}

inline void save_records(const std::string& path, const std::vector<PlayByPlayRecord>& records) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_records: cannot open " + path);
    for (const PlayByPlayRecord& r : records) f << record_to_json(r).dump() << "\n";
}

inline std::vector<PlayByPlayRecord> load_records(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_records: cannot open " + path);
    std::vector<PlayByPlayRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_json(nlohmann::json::parse(line)));
    }
    return out;
}

// --- action taxonomy ----------------------------------------------------------

enum class ActionLevel { Coarse = 0, Fine = 1, Event = 2 };

// Three-level label tree. Every non-root label has exactly one parent;
// solitary coarse labels (no descendants) are allowed.
class ActionTaxonomy {
public:
    void add(const std::string& label, ActionLevel level, const std::string& parent = "") {
        if (label.empty()) throw std::invalid_argument("ActionTaxonomy: empty label");
        if (nodes_.count(label)) {
            throw std::invalid_argument("ActionTaxonomy: duplicate label " + label);
        }
        if (level == ActionLevel::Coarse) {
            if (!parent.empty()) {
                throw std::invalid_argument("ActionTaxonomy: coarse label with parent: " + label);
            }
        } else {
            auto it = nodes_.find(parent);
            if (it == nodes_.end()) {
                throw std::invalid_argument("ActionTaxonomy: unknown parent " + parent + " of " +
                                            label);
            }
            if (static_cast<int>(it->second.level) != static_cast<int>(level) - 1) {
                throw std::invalid_argument("ActionTaxonomy: level mismatch for " + label +
                                            " under " + parent);
            }
        }
        nodes_[label] = {level, parent};
        ordered_.push_back(label);
    }

    bool contains(const std::string& label) const { return nodes_.count(label) > 0; }

    ActionLevel level(const std::string& label) const { return node(label).level; }

    const std::string& parent(const std::string& label) const { return node(label).parent; }

    std::size_t size(ActionLevel level) const {
        std::size_t n = 0;
        for (const auto& [l, nd] : nodes_)
            if (nd.level == level) ++n;
        return n;
    }

    std::size_t total() const { return nodes_.size(); }

    std::vector<std::string> labels(ActionLevel level) const {
        std::vector<std::string> out;
        for (const std::string& l : ordered_)
            if (nodes_.at(l).level == level) out.push_back(l);
        return out;
    }

    std::vector<std::string> all_labels() const { return ordered_; }

    // event label's path passes through the given fine and coarse labels
    bool consistent_path(const std::string& coarse, const std::string& fine,
                         const std::string& event) const {
        if (!contains(coarse) || !contains(fine) || !contains(event)) return false;
        if (level(event) != ActionLevel::Event || level(fine) != ActionLevel::Fine ||
            level(coarse) != ActionLevel::Coarse)
            return false;
        return parent(event) == fine && parent(fine) == coarse;
    }

    void validate_record(const PlayByPlayRecord& r) const {
        r.validate();
        for (std::size_t i = 0; i < r.action_event.size(); ++i) {
            if (!consistent_path(r.action_coarse[i], r.action_fine[i], r.action_event[i])) {
                throw std::invalid_argument("ActionTaxonomy: record " + r.clip_id + " event " +
                                            std::to_string(i) + " violates label ancestry");
            }
        }
    }

    std::string to_text() const {
        std::ostringstream os;
        auto children_of = [&](const std::string& parent) {
            std::vector<std::string> out;
            for (const std::string& l : ordered_) {
                if (nodes_.at(l).parent == parent && !l.empty() && !parent.empty()) {
                    out.push_back(l);
                }
            }
            return out;
        };
        for (const std::string& coarse : ordered_) {
            if (nodes_.at(coarse).level != ActionLevel::Coarse) continue;
            os << coarse << "\n";
            for (const std::string& fine : children_of(coarse)) {
                os << "  " << fine << "\n";
                for (const std::string& event : children_of(fine)) {
                    os << "    " << event << "\n";
                }
            }
        }
        return os.str();
    }

    static ActionTaxonomy from_text(const std::string& text) {
        ActionTaxonomy t;
        std::istringstream is(text);
        std::string line;
        std::vector<std::string> stack;  // parent at each depth
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::size_t indent = 0;
            while (indent < line.size() && line[indent] == ' ') ++indent;
            if (indent % 2 != 0) {
                throw std::invalid_argument("ActionTaxonomy: odd indentation in '" + line + "'");
            }
            std::size_t depth = indent / 2;
            if (depth > 2) throw std::invalid_argument("ActionTaxonomy: depth beyond event level");
            std::string label = line.substr(indent);
            std::string parent = depth == 0 ? "" : stack.at(depth - 1);
            t.add(label, static_cast<ActionLevel>(depth), parent);
            stack.resize(depth);
            stack.push_back(label);
        }
        return t;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("ActionTaxonomy::save: cannot open " + path);
        f << to_text();
    }

    static ActionTaxonomy load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("ActionTaxonomy::load: cannot open " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return from_text(ss.str());
    }

private:
    struct Node {
        ActionLevel level = ActionLevel::Coarse;
        std::string parent;
    };

    const Node& node(const std::string& label) const {
        auto it = nodes_.find(label);
        if (it == nodes_.end()) {
            throw std::out_of_range("ActionTaxonomy: unknown label " + label);
        }
        return it->second;
    }

    std::map<std::string, Node> nodes_;
    std::vector<std::string> ordered_;
};

}  // namespace nsva
