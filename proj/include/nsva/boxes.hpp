#pragma once

// Bounding boxes, per-frame detections and the JSON-lines track fixture
// format: one object per frame with [x,y,w,h,confidence] arrays per class
// (player / ball / basket) and a courtline mask file path.

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace nsva {

// Normalized coordinates: top-left (x, y), extents (w, h), all within [0,1].
struct BoundingBox {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double area() const { return w * h; }

    bool valid() const {
        return x >= 0.0 && y >= 0.0 && w >= 0.0 && h >= 0.0 && x + w <= 1.0 + 1e-9 &&
               y + h <= 1.0 + 1e-9;
    }

    void validate() const {
        if (!valid()) {
            std::ostringstream os;
            os << "BoundingBox: invalid box (" << x << "," << y << "," << w << "," << h << ")";
            throw std::invalid_argument(os.str());
        }
    }
};

// area(intersection) / area(union); 0 by convention when the union is empty.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
    if (a.x == b.x && a.y == b.y && a.w == b.w && a.h == b.h) {
        return a.area() > 0.0 ? 1.0 : 0.0;
    }
    double ix = std::max(a.x, b.x);
    double iy = std::max(a.y, b.y);
    double ix2 = std::min(a.x + a.w, b.x + b.w);
    double iy2 = std::min(a.y + a.h, b.y + b.h);
    double iw = std::max(0.0, ix2 - ix);
    double ih = std::max(0.0, iy2 - iy);
    double inter = iw * ih;
    double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

struct Detection {
    BoundingBox box;
    double confidence = 1.0;
};

struct DetectionFrame {
    std::size_t frame_index = 0;
    std::vector<Detection> players;
    std::vector<Detection> balls;    // fixtures may carry several; highest confidence wins
    std::vector<Detection> baskets;
    std::string courtline_mask_path;

    // Highest-confidence detection of a class, ties broken by input order.
    static std::optional<Detection> best(const std::vector<Detection>& ds) {
        if (ds.empty()) return std::nullopt;
        std::size_t bi = 0;
        for (std::size_t i = 1; i < ds.size(); ++i)
            if (ds[i].confidence > ds[bi].confidence) bi = i;
        return ds[bi];
    }

    std::optional<Detection> ball() const { return best(balls); }
    std::optional<Detection> basket() const { return best(baskets); }
};

// Exactly the player boxes whose IoU with the detected ball is positive;
// empty when no ball was detected. Input order is preserved.
inline std::vector<Detection> filter_players_with_ball(const DetectionFrame& frame) {
    std::vector<Detection> out;
    auto ball = frame.ball();
    if (!ball) return out;
    for (const Detection& p : frame.players) {
        if (iou(p.box, ball->box) > 0.0) out.push_back(p);
    }
    return out;
}

// --- JSONL track I/O --------------------------------------------------------

namespace detail {

inline nlohmann::json detections_to_json(const std::vector<Detection>& ds) {
    nlohmann::json arr = nlohmann::json::array();
    for (const Detection& d : ds) {
        arr.push_back({d.box.x, d.box.y, d.box.w, d.box.h, d.confidence});
    }
    return arr;
}

inline std::vector<Detection> detections_from_json(const nlohmann::json& arr) {
    std::vector<Detection> ds;
    for (const auto& e : arr) {
        if (!e.is_array() || e.size() != 5) {
            throw std::runtime_error("track: detection entry must be [x,y,w,h,confidence]");
        }
        Detection d;
        d.box = {e[0].get<double>(), e[1].get<double>(), e[2].get<double>(), e[3].get<double>()};
        d.confidence = e[4].get<double>();
        d.box.validate();
        ds.push_back(d);
    }
    return ds;
}

}  // namespace detail

inline nlohmann::json track_frame_to_json(const DetectionFrame& f) {
    return nlohmann::json{{"frame", f.frame_index},
                          {"players", detail::detections_to_json(f.players)},
                          {"ball", detail::detections_to_json(f.balls)},
                          {"basket", detail::detections_to_json(f.baskets)},
                          {"courtline_mask", f.courtline_mask_path}};
}

inline DetectionFrame track_frame_from_json(const nlohmann::json& j) {
    DetectionFrame f;
    f.frame_index = j.at("frame").get<std::size_t>();
    f.players = detail::detections_from_json(j.at("players"));
    f.balls = detail::detections_from_json(j.at("ball"));
    f.baskets = detail::detections_from_json(j.at("basket"));
    f.courtline_mask_path = j.at("courtline_mask").get<std::string>();
    return f;
}

inline void save_track(const std::string& path, const std::vector<DetectionFrame>& track) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("save_track: cannot open " + path);
    for (const DetectionFrame& fr : track) f << track_frame_to_json(fr).dump() << "\n";
}

inline std::vector<DetectionFrame> load_track(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_track: cannot open " + path);
    std::vector<DetectionFrame> track;
    std::string line;
    std::size_t prev = 0;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        track.push_back(track_frame_from_json(nlohmann::json::parse(line)));
        if (!first && track.back().frame_index <= prev) {
            throw std::runtime_error("load_track: frame indices must strictly increase in " +
                                     path);
        }
        prev = track.back().frame_index;
        first = false;
    }
    return track;
}

}  // namespace nsva
