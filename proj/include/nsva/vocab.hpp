#pragma once

// Token vocabulary with reserved specials and augmented task tokens.
//
// Augmented tokens (action labels, player names) are atomic: they enter and
// leave the vocabulary as whole units and are never split by tokenization,
// which only ever applies to raw caption text before encoding.

#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace nsva {

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;

    Vocabulary() {
        add_token("<pad>", false);
        add_token("<bos>", false);
        add_token("<eos>", false);
        add_token("<unk>", false);
    }

    int add_token(const std::string& token, bool augmented = false) {
        auto it = ids_.find(token);
        if (it != ids_.end()) return it->second;
        int id = static_cast<int>(tokens_.size());
        tokens_.push_back(token);
        augmented_.push_back(augmented);
        ids_.emplace(token, id);
        if (augmented) ++augmented_count_;
        return id;
    }

    int id_of(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? -1 : it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
            throw std::out_of_range("Vocabulary: id " + std::to_string(id) + " out of range");
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    bool is_augmented(int id) const { return augmented_.at(static_cast<std::size_t>(id)); }
    bool is_special(int id) const { return id >= 0 && id <= kUnk; }

    std::size_t size() const { return tokens_.size(); }
    std::size_t augmented_count() const { return augmented_count_; }

    // Encodes already-tokenized units; unknown units become <unk> and are
    // counted rather than failing.
    std::vector<int> encode(const std::vector<std::string>& units,
                            std::size_t* unk_count = nullptr) const {
        std::vector<int> out;
        out.reserve(units.size());
        for (const std::string& u : units) {
            int id = id_of(u);
            if (id < 0) {
                id = kUnk;
                if (unk_count) ++*unk_count;
            }
            out.push_back(id);
        }
        return out;
    }

    std::vector<std::string> decode(const std::vector<int>& ids,
                                    bool strip_specials = true) const {
        std::vector<std::string> out;
        for (int id : ids) {
            if (strip_specials && is_special(id)) continue;
            out.push_back(token(id));
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream f(path);
        if (!f) throw std::runtime_error("Vocabulary::save: cannot open " + path);
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            f << (augmented_[i] ? "A" : "W") << "\t" << tokens_[i] << "\n";
        }
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("Vocabulary::load: cannot open " + path);
        Vocabulary v;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            if (line.empty()) continue;
            if (line.size() < 2 || (line[0] != 'A' && line[0] != 'W') || line[1] != '\t') {
                throw std::runtime_error("Vocabulary::load: malformed line " +
                                         std::to_string(lineno) + " in " + path);
            }
            std::string tok = line.substr(2);
            if (lineno <= 4) continue;  // specials are pre-seeded
            v.add_token(tok, line[0] == 'A');
        }
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::vector<bool> augmented_;
    std::unordered_map<std::string, int> ids_;
    std::size_t augmented_count_ = 0;
};

}  // namespace nsva
