#pragma once

// Deterministic synthetic-game generator. Renders low-res clips (court
// rectangle, courtline strokes, ball disc, basket box, jersey-glyph players),
// emits detection tracks consistent with the rendering, a courtline mask per
// clip, and ground-truth play-by-play records whose captions are a
// deterministic function of the rendered evidence.
//
// Corpus layout under the output directory:
//   manifest.json            seed, config echo, config hash, counts
//   records.jsonl            one record per event (same clip id for shot and
//                            rebound of a missed shot; curation merges them)
//   schedule.json            [{game_id, team_a, team_b}, ...]
//   taxonomy.txt             three-level action tree
//   clips/<id>/frames.bin    named-array file: "frames" [N, H, W, 3]
//   clips/<id>/track.jsonl   per-frame detections
//   clips/<id>/courtline.bin named-array file: "courtline" [H, W]

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsva/boxes.hpp"
#include "nsva/checkpoint.hpp"
#include "nsva/config.hpp"
#include "nsva/curation.hpp"
#include "nsva/records.hpp"
#include "nsva/tensor.hpp"

namespace nsva {

struct SynthConfig {
    std::uint64_t seed = 1;
    std::size_t teams = 4;
    std::size_t players_per_team = 5;
    std::size_t games = 4;
    std::size_t events_per_game = 8;
    std::size_t frame_size = 32;
    std::size_t source_fps = 24;
    double clip_seconds = 1.0;
    std::vector<double> distance_spots_ft = {2, 5, 9, 14, 20, 26};
    double detection_jitter = 0.008;
    double detection_dropout = 0.03;
    double miss_probability = 0.45;
    std::size_t cumulative_phrases = 0;  // planted "(N PTS)" pollution

    void validate() const {
        if (teams < 2) throw std::invalid_argument("SynthConfig: need at least two teams");
        if (frame_size < 16) throw std::invalid_argument("SynthConfig: frame too small");
        if (clip_seconds <= 0 || source_fps == 0) {
            throw std::invalid_argument("SynthConfig: degenerate clip geometry");
        }
        for (double d : distance_spots_ft) {
            if (d < 0.0 || d > 40.0) {
                throw std::invalid_argument("SynthConfig: distance spot outside [0, 40] feet");
            }
        }
    }

    std::size_t frames_per_clip() const {
        return static_cast<std::size_t>(clip_seconds * static_cast<double>(source_fps));
    }

    nlohmann::json to_json() const {
        return {{"seed", seed},
                {"teams", teams},
                {"players_per_team", players_per_team},
                {"games", games},
                {"events_per_game", events_per_game},
                {"frame_size", frame_size},
                {"source_fps", source_fps},
                {"clip_seconds", clip_seconds},
                {"distance_spots_ft", distance_spots_ft},
                {"detection_jitter", detection_jitter},
                {"detection_dropout", detection_dropout},
                {"miss_probability", miss_probability},
                {"cumulative_phrases", cumulative_phrases}};
    }

    static SynthConfig from_config(const KeyValueConfig& cfg) {
        SynthConfig s;
        cfg.require_known({"synth.seed", "synth.teams", "synth.players_per_team", "synth.games",
                           "synth.events_per_game", "synth.frame_size", "synth.source_fps",
                           "synth.clip_seconds", "synth.detection_jitter",
                           "synth.detection_dropout", "synth.miss_probability",
                           "synth.cumulative_phrases", "synth.distance_spots_ft"});
        s.seed = cfg.get_u64("synth.seed", s.seed);
        s.teams = cfg.get_size("synth.teams", s.teams);
        s.players_per_team = cfg.get_size("synth.players_per_team", s.players_per_team);
        s.games = cfg.get_size("synth.games", s.games);
        s.events_per_game = cfg.get_size("synth.events_per_game", s.events_per_game);
        s.frame_size = cfg.get_size("synth.frame_size", s.frame_size);
        s.source_fps = cfg.get_size("synth.source_fps", s.source_fps);
        s.clip_seconds = cfg.get_double("synth.clip_seconds", s.clip_seconds);
        s.detection_jitter = cfg.get_double("synth.detection_jitter", s.detection_jitter);
        s.detection_dropout = cfg.get_double("synth.detection_dropout", s.detection_dropout);
        s.miss_probability = cfg.get_double("synth.miss_probability", s.miss_probability);
        s.cumulative_phrases = cfg.get_size("synth.cumulative_phrases", s.cumulative_phrases);
        if (cfg.has("synth.distance_spots_ft")) {
            s.distance_spots_ft.clear();
            std::stringstream ss(cfg.get_string("synth.distance_spots_ft", ""));
            std::string part;
            while (std::getline(ss, part, ',')) s.distance_spots_ft.push_back(std::stod(part));
        }
        return s;
    }
};

// 64-bit FNV-1a over a string; used for config hashes in manifests.
inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace synth {

inline const char* kConsonants = "bdfgklmnprstvz";
inline const char* kVowels = "aeiou";

// Pronounceable deterministic roster name for a global player index.
inline std::string player_name(std::size_t index) {
    std::string name;
    std::size_t x = index;
    for (int i = 0; i < 2; ++i) {
        name += kConsonants[x % 14];
        x /= 14;
        name += kVowels[x % 5];
        x /= 5;
    }
    return name;
}

inline std::string team_name(std::size_t index) {
    return "team" + std::string(1, static_cast<char>('a' + index));
}

struct ShotAction {
    std::string caption_phrase;   // as it appears in captions
    std::string fine_label;       // taxonomy fine level
    std::string event_stub;       // event label without Made/Missed suffix
    bool three_point;
    double min_ft, max_ft;        // admissible spot range
    std::array<double, 3> marker; // rendered action marker colour
};

inline const std::vector<ShotAction>& shot_actions() {
    static const std::vector<ShotAction> kActions = {
        {"3pt jump shot", "Shot Jump Shot", "3-pt Jump-Shot", true, 20, 40,
         {1.0, 1.0, 1.0}},
        {"3pt pullup jump shot", "Shot Pullup Jump Shot", "3-pt Pullup-Jump-Shot", true, 20, 40,
         {1.0, 0.0, 1.0}},
        {"jump shot", "Shot Jump Shot", "2-pt Jump-Shot", false, 6, 19,
         {0.0, 1.0, 1.0}},
        {"pullup jump shot", "Shot Pullup Jump Shot", "2-pt Pullup-Jump-Shot", false, 6, 19,
         {1.0, 1.0, 0.0}},
        {"driving layup", "Shot Layup", "2-pt Layup", false, 0, 5,
         {0.0, 1.0, 0.0}},
        {"cutting dunk", "Shot Dunk", "2-pt Dunk", false, 0, 3,
         {1.0, 0.0, 0.0}},
    };
    return kActions;
}

inline ActionTaxonomy build_taxonomy() {
    ActionTaxonomy t;
    t.add("Shot", ActionLevel::Coarse);
    t.add("Rebound", ActionLevel::Coarse);
    t.add("Jump Ball", ActionLevel::Coarse);  // solitary labels
    t.add("Block", ActionLevel::Coarse);
    std::set<std::string> fines;
    for (const ShotAction& a : shot_actions()) {
        if (!fines.count(a.fine_label)) {
            t.add(a.fine_label, ActionLevel::Fine, "Shot");
            fines.insert(a.fine_label);
        }
    }
    for (const ShotAction& a : shot_actions()) {
        t.add(a.event_stub + " Made", ActionLevel::Event, a.fine_label);
        t.add(a.event_stub + " Missed", ActionLevel::Event, a.fine_label);
    }
    t.add("Rebound Defensive", ActionLevel::Fine, "Rebound");
    t.add("Defensive Rebound", ActionLevel::Event, "Rebound Defensive");
    return t;
}

// --- court geometry (normalized coordinates) -----------------------------------

inline constexpr double kCourtLeft = 0.06;
inline constexpr double kCourtRight = 0.94;
inline constexpr double kCourtTop = 0.12;
inline constexpr double kCourtBottom = 0.88;
inline constexpr double kBasketX = 0.86;
inline constexpr double kBasketY = 0.5;
inline constexpr double kUnitsPerFoot = (kBasketX - kCourtLeft - 0.04) / 40.0;

inline BoundingBox basket_box() { return {kBasketX - 0.03, kBasketY - 0.05, 0.09, 0.10}; }

inline std::pair<double, double> spot_position(double feet, double side) {
    // shooting spots fan out to the left of the basket
    double x = kBasketX - feet * kUnitsPerFoot;
    double y = kBasketY + side * std::min(0.25, feet * kUnitsPerFoot * 0.45);
    return {x, y};
}

// --- rendering -------------------------------------------------------------------

struct Renderer {
    std::size_t side;

    std::size_t px(double v) const {
        double p = v * static_cast<double>(side);
        if (p < 0) p = 0;
        if (p > static_cast<double>(side - 1)) p = static_cast<double>(side - 1);
        return static_cast<std::size_t>(p);
    }

    void fill(Tensor& img, double x0, double y0, double x1, double y1, double r, double g,
              double b) const {
        std::size_t ix0 = px(x0), ix1 = px(x1), iy0 = px(y0), iy1 = px(y1);
        for (std::size_t y = iy0; y <= iy1; ++y)
            for (std::size_t x = ix0; x <= ix1; ++x) {
                double* p = img.data().data() + (y * side + x) * 3;
                p[0] = r;
                p[1] = g;
                p[2] = b;
            }
    }

    void mask_fill(Tensor& mask, double x0, double y0, double x1, double y1) const {
        std::size_t ix0 = px(x0), ix1 = px(x1), iy0 = px(y0), iy1 = px(y1);
        for (std::size_t y = iy0; y <= iy1; ++y)
            for (std::size_t x = ix0; x <= ix1; ++x) mask.data()[y * side + x] = 1.0;
    }
};

// Static courtline raster shared by every frame of a clip.
inline Tensor render_courtline_mask(std::size_t side) {
    Tensor mask({side, side});
    Renderer r{side};
    double t = 1.0 / static_cast<double>(side);  // one-pixel stroke
    r.mask_fill(mask, kCourtLeft, kCourtTop, kCourtRight, kCourtTop + t);
    r.mask_fill(mask, kCourtLeft, kCourtBottom - t, kCourtRight, kCourtBottom);
    r.mask_fill(mask, kCourtLeft, kCourtTop, kCourtLeft + t, kCourtBottom);
    r.mask_fill(mask, kCourtRight - t, kCourtTop, kCourtRight, kCourtBottom);
    r.mask_fill(mask, 0.5, kCourtTop, 0.5 + t, kCourtBottom);  // half-court line
    // key box in front of the basket
    r.mask_fill(mask, kBasketX - 14 * kUnitsPerFoot, kBasketY - 0.14,
                kBasketX - 14 * kUnitsPerFoot + t, kBasketY + 0.14);
    r.mask_fill(mask, kBasketX - 14 * kUnitsPerFoot, kBasketY - 0.14, kBasketX,
                kBasketY - 0.14 + t);
    r.mask_fill(mask, kBasketX - 14 * kUnitsPerFoot, kBasketY + 0.14 - t, kBasketX,
                kBasketY + 0.14);
    // three-point arc approximated by a vertical stroke at 22 feet
    r.mask_fill(mask, kBasketX - 22 * kUnitsPerFoot, kCourtTop + 0.1,
                kBasketX - 22 * kUnitsPerFoot + t, kCourtBottom - 0.1);
    return mask;
}

struct PlayerSprite {
    std::size_t team;          // 0 or 1 within the game
    std::size_t code;          // roster index within the team, rendered as bits
    double x, y;               // centre position
    bool marker = false;       // action marker above the block (the shooter)
    std::array<double, 3> marker_color{1, 1, 1};
};

inline std::array<double, 3> team_color(std::size_t team) {
    return team == 0 ? std::array<double, 3>{0.15, 0.35, 0.9}
                     : std::array<double, 3>{0.9, 0.75, 0.15};
}

inline constexpr double kPlayerHalf = 0.045;  // half extent of the 3x3-ish block
inline constexpr double kBallHalf = 0.03;

inline BoundingBox player_bounds(const PlayerSprite& p) {
    return {p.x - kPlayerHalf, p.y - kPlayerHalf, 2 * kPlayerHalf, 2 * kPlayerHalf};
}

inline void render_player(Tensor& img, const Renderer& r, const PlayerSprite& p) {
    auto col = team_color(p.team);
    double x0 = p.x - kPlayerHalf, y0 = p.y - kPlayerHalf;
    double x1 = p.x + kPlayerHalf, y1 = p.y + kPlayerHalf;
    r.fill(img, x0, y0, x1, y1, col[0], col[1], col[2]);
    // the action marker paints the block's top band so player crops carry it
    if (p.marker) {
        r.fill(img, x0, y0, x1, p.y - kPlayerHalf / 3.0, p.marker_color[0], p.marker_color[1],
               p.marker_color[2]);
    }
    // identity strip: three code pixels across the middle row
    std::size_t cy = r.px(p.y);
    std::size_t cx = r.px(p.x);
    for (std::size_t bit = 0; bit < 3; ++bit) {
        double on = (p.code >> bit) & 1 ? 1.0 : 0.05;
        std::size_t x = cx + bit - 1;
        if (x >= r.side) continue;
        double* pix = img.data().data() + (cy * r.side + x) * 3;
        pix[0] = on;
        pix[1] = on;
        pix[2] = on;
    }
}

}  // namespace synth

// --- generator --------------------------------------------------------------------

struct GeneratedClip {
    std::string clip_id;
    std::vector<PlayByPlayRecord> events;
    std::size_t frame_count = 0;
};

struct GeneratedCorpus {
    std::filesystem::path dir;
    std::vector<GameInfo> schedule;
    std::vector<GeneratedClip> clips;
    std::size_t event_count = 0;
};

// Emits the full fixture corpus; byte-identical for identical configs.
inline GeneratedCorpus generate_corpus(const SynthConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    GeneratedCorpus corpus;
    corpus.dir = out_dir;
    fs::create_directories(corpus.dir / "clips");

    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ull + 0xC0FFEE);
    const std::size_t side = cfg.frame_size;
    const std::size_t n_frames = cfg.frames_per_clip();
    const synth::Renderer rend{side};
    Tensor courtline = synth::render_courtline_mask(side);

    ActionTaxonomy taxonomy = synth::build_taxonomy();
    taxonomy.save((corpus.dir / "taxonomy.txt").string());

    // schedule: round-robin pairings until `games` entries exist
    std::vector<std::pair<std::size_t, std::size_t>> pairings;
    for (std::size_t a = 0; a < cfg.teams; ++a)
        for (std::size_t b = a + 1; b < cfg.teams; ++b) pairings.emplace_back(a, b);
    for (std::size_t g = 0; g < cfg.games; ++g) {
        auto [ta, tb] = pairings[g % pairings.size()];
        char gid[16];
        std::snprintf(gid, sizeof gid, "game%03zu", g);
        corpus.schedule.push_back({gid, synth::team_name(ta), synth::team_name(tb)});
    }

    std::vector<PlayByPlayRecord> all_records;
    std::size_t planted = 0;
    const auto& actions = synth::shot_actions();

    for (std::size_t g = 0; g < cfg.games; ++g) {
        auto [ta, tb] = pairings[g % pairings.size()];
        std::size_t team_ids[2] = {ta, tb};
        for (std::size_t e = 0; e < cfg.events_per_game; ++e) {
            char cid[32];
            std::snprintf(cid, sizeof cid, "%s_clip%03zu", corpus.schedule[g].game_id.c_str(),
                          e);
            std::string clip_id = cid;
            fs::create_directories(corpus.dir / "clips" / clip_id);

            // --- event parameters, all drawn deterministically
            std::size_t off_team = rng.uniform_index(2);
            std::size_t shooter_code = rng.uniform_index(cfg.players_per_team);
            std::size_t rebounder_code = rng.uniform_index(cfg.players_per_team);
            double feet = cfg.distance_spots_ft[rng.uniform_index(cfg.distance_spots_ft.size())];
            std::vector<std::size_t> admissible;
            for (std::size_t a = 0; a < actions.size(); ++a) {
                if (feet >= actions[a].min_ft && feet <= actions[a].max_ft) admissible.push_back(a);
            }
            const synth::ShotAction& action = actions[admissible[rng.uniform_index(admissible.size())]];
            bool missed = rng.uniform() < cfg.miss_probability;
            double spot_side = rng.uniform() < 0.5 ? -1.0 : 1.0;
            auto [sx, sy] = synth::spot_position(feet, spot_side);

            std::string shooter = synth::player_name(team_ids[off_team] * cfg.players_per_team +
                                                     shooter_code);
            std::string rebounder = synth::player_name(
                team_ids[1 - off_team] * cfg.players_per_team + rebounder_code);

            // --- clutter players: seeded random walks
            struct Walker {
                synth::PlayerSprite sprite;
                double vx, vy;
            };
            std::vector<Walker> walkers;
            for (std::size_t team = 0; team < 2; ++team) {
                for (std::size_t p = 0; p < cfg.players_per_team; ++p) {
                    if (team == off_team && p == shooter_code) continue;
                    bool is_rebounder = missed && team == 1 - off_team && p == rebounder_code;
                    Walker w;
                    w.sprite.team = team;
                    w.sprite.code = p;
                    if (is_rebounder) {
                        w.sprite.x = synth::kBasketX - 0.08;
                        w.sprite.y = synth::kBasketY + (rng.uniform() - 0.5) * 0.1;
                        w.vx = w.vy = 0.0;
                    } else {
                        w.sprite.x = rng.uniform(synth::kCourtLeft + 0.1, 0.5);
                        w.sprite.y = rng.uniform(synth::kCourtTop + 0.1,
                                                 synth::kCourtBottom - 0.1);
                        w.vx = rng.uniform(-0.004, 0.004);
                        w.vy = rng.uniform(-0.004, 0.004);
                    }
                    w.sprite.marker = false;
                    walkers.push_back(w);
                }
            }
            synth::PlayerSprite shooter_sprite;
            shooter_sprite.team = off_team;
            shooter_sprite.code = shooter_code;
            shooter_sprite.x = sx;
            shooter_sprite.y = sy;
            shooter_sprite.marker = true;
            shooter_sprite.marker_color = action.marker;

            // --- timeline: hold, flight, result
            std::size_t t_release = n_frames * 3 / 10;
            std::size_t t_arrive = n_frames * 6 / 10;
            std::size_t t_settle = n_frames * 8 / 10;

            std::vector<Tensor> frames;
            std::vector<DetectionFrame> track;
            frames.reserve(n_frames);
            std::string mask_rel = "clips/" + clip_id + "/courtline.bin";

            for (std::size_t t = 0; t < n_frames; ++t) {
                Tensor frame({side, side, 3});
                // courtlines in gray
                for (std::size_t i = 0; i < side * side; ++i) {
                    if (courtline.data()[i] != 0.0) {
                        frame.data()[i * 3] = 0.55;
                        frame.data()[i * 3 + 1] = 0.55;
                        frame.data()[i * 3 + 2] = 0.55;
                    }
                }
                // basket
                BoundingBox bb = synth::basket_box();
                rend.fill(frame, bb.x, bb.y, bb.x + bb.w, bb.y + bb.h, 0.9, 0.1, 0.12);

                // players
                for (Walker& w : walkers) {
                    w.sprite.x = std::clamp(w.sprite.x + w.vx, synth::kCourtLeft + 0.05,
                                            synth::kCourtRight - 0.05);
                    w.sprite.y = std::clamp(w.sprite.y + w.vy, synth::kCourtTop + 0.05,
                                            synth::kCourtBottom - 0.05);
                    synth::render_player(frame, rend, w.sprite);
                }
                synth::render_player(frame, rend, shooter_sprite);

                // ball
                double bx, by;
                bool ball_with_shooter = t < t_release;
                if (ball_with_shooter) {
                    bx = sx + synth::kPlayerHalf * 0.5;
                    by = sy - synth::kPlayerHalf * 0.5;
                } else if (t <= t_arrive) {
                    double a = static_cast<double>(t - t_release) /
                               static_cast<double>(std::max<std::size_t>(1, t_arrive - t_release));
                    bx = sx + (synth::kBasketX - sx) * a;
                    by = sy + (synth::kBasketY - sy) * a - 0.12 * std::sin(a * 3.14159265);
                } else if (missed) {
                    double a = static_cast<double>(std::min(t, t_settle) - t_arrive) /
                               static_cast<double>(std::max<std::size_t>(1, t_settle - t_arrive));
                    bx = synth::kBasketX + (-0.08) * a;
                    by = synth::kBasketY + 0.06 * a;
                } else {
                    bx = synth::kBasketX;
                    by = synth::kBasketY + 0.04;
                }
                BoundingBox ball{bx - synth::kBallHalf, by - synth::kBallHalf,
                                 2 * synth::kBallHalf, 2 * synth::kBallHalf};
                rend.fill(frame, ball.x, ball.y, ball.x + ball.w, ball.y + ball.h, 1.0, 0.55,
                          0.08);
                frames.push_back(frame);

                // --- detections consistent with the rendering
                DetectionFrame det;
                det.frame_index = t;
                det.courtline_mask_path = mask_rel;
                auto jitter = [&](BoundingBox b) {
                    b.x = std::clamp(b.x + rng.uniform(-cfg.detection_jitter,
                                                       cfg.detection_jitter),
                                     0.0, 1.0 - b.w);
                    b.y = std::clamp(b.y + rng.uniform(-cfg.detection_jitter,
                                                       cfg.detection_jitter),
                                     0.0, 1.0 - b.h);
                    return b;
                };
                for (const Walker& w : walkers) {
                    if (rng.uniform() < cfg.detection_dropout) continue;
                    det.players.push_back({jitter(synth::player_bounds(w.sprite)),
                                           0.75 + 0.2 * rng.uniform()});
                }
                det.players.push_back({jitter(synth::player_bounds(shooter_sprite)),
                                       0.8 + 0.19 * rng.uniform()});
                if (rng.uniform() >= cfg.detection_dropout) {
                    det.balls.push_back({jitter(ball), 0.85 + 0.14 * rng.uniform()});
                    if (rng.uniform() < 0.05) {
                        // spurious low-confidence duplicate ball
                        BoundingBox fake{rng.uniform(0.1, 0.8), rng.uniform(0.1, 0.8),
                                         2 * synth::kBallHalf, 2 * synth::kBallHalf};
                        det.balls.push_back({fake, 0.2 + 0.2 * rng.uniform()});
                    }
                }
                if (rng.uniform() >= cfg.detection_dropout) {
                    det.baskets.push_back({jitter(bb), 0.9 + 0.09 * rng.uniform()});
                }
                track.push_back(det);
            }

            // --- records
            double clip_secs = static_cast<double>(n_frames) /
                               static_cast<double>(cfg.source_fps);
            char dist_tok[16];
            std::snprintf(dist_tok, sizeof dist_tok, "%d'", static_cast<int>(feet));
            std::string caption = missed ? "miss " : "";
            caption += shooter;
            caption += " ";
            caption += dist_tok;
            caption += " ";
            caption += action.caption_phrase;
            if (cfg.cumulative_phrases > 0 && planted < cfg.cumulative_phrases) {
                caption += " (" + std::to_string(2 + planted % 30) + " PTS)";
                ++planted;
            }

            PlayByPlayRecord shot;
            shot.game_id = corpus.schedule[g].game_id;
            shot.clip_id = clip_id;
            shot.event_ts = static_cast<double>(e) * 30.0;
            shot.caption = caption;
            shot.action_coarse = {"Shot"};
            shot.action_fine = {action.fine_label};
            shot.action_event = {action.event_stub + (missed ? " Missed" : " Made")};
            shot.players = {shooter};
            shot.teams = {corpus.schedule[g].team_a, corpus.schedule[g].team_b};
            shot.distance_ft = feet;
            shot.clip_seconds = clip_secs;
            all_records.push_back(shot);

            GeneratedClip gen;
            gen.clip_id = clip_id;
            gen.frame_count = n_frames;
            gen.events.push_back(shot);

            if (missed) {
                PlayByPlayRecord reb;
                reb.game_id = shot.game_id;
                reb.clip_id = clip_id;
                reb.event_ts = shot.event_ts + 2.0;
                reb.caption = rebounder + " defensive rebound";
                reb.action_coarse = {"Rebound"};
                reb.action_fine = {"Rebound Defensive"};
                reb.action_event = {"Defensive Rebound"};
                reb.players = {rebounder};
                reb.teams = shot.teams;
                reb.clip_seconds = clip_secs;
                all_records.push_back(reb);
                gen.events.push_back(reb);
            }

            // --- write clip artifacts
            std::vector<double> flat;
            flat.reserve(n_frames * side * side * 3);
            for (const Tensor& f : frames)
                flat.insert(flat.end(), f.data().begin(), f.data().end());
            save_arrays((corpus.dir / "clips" / clip_id / "frames.bin").string(),
                        {{"frames", Tensor({n_frames, side, side, 3}, std::move(flat))}});
            save_arrays((corpus.dir / "clips" / clip_id / "courtline.bin").string(),
                        {{"courtline", courtline}});
            save_track((corpus.dir / "clips" / clip_id / "track.jsonl").string(), track);
            corpus.clips.push_back(std::move(gen));
        }
    }

    save_records((corpus.dir / "records.jsonl").string(), all_records);
    corpus.event_count = all_records.size();

    nlohmann::json sched = nlohmann::json::array();
    for (const GameInfo& g : corpus.schedule) {
        sched.push_back({{"game_id", g.game_id}, {"team_a", g.team_a}, {"team_b", g.team_b}});
    }
    {
        std::ofstream f(corpus.dir / "schedule.json");
        f << sched.dump(2) << "\n";
    }
    nlohmann::json manifest{{"kind", "corpus"},
                            {"seed", cfg.seed},
                            {"config", cfg.to_json()},
                            {"config_hash", fnv1a_hex(cfg.to_json().dump())},
                            {"clips", corpus.clips.size()},
                            {"events", corpus.event_count},
                            {"frames_per_clip", n_frames}};
    {
        std::ofstream f(corpus.dir / "manifest.json");
        f << manifest.dump(2) << "\n";
    }
    return corpus;
}

}  // namespace nsva
