#pragma once

// The fine-feature pipeline: position-aware image composition, per-second
// regrouping, stream fusion and the adaptive frame sampler.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nsva/boxes.hpp"
#include "nsva/tensor.hpp"

namespace nsva {

enum class Granularity { PerFrame, PerSecond };
enum class StreamKind { Coarse, Ball, Basket, PlayerWithBall, PositionAware, Fused };

// Time-ordered feature rows; `rows` is an [m, d] tensor (graph-connected when
// produced by the encoders, plain data otherwise).
struct FeatureTrack {
    Tensor rows;
    Granularity granularity = Granularity::PerFrame;
    StreamKind stream = StreamKind::Coarse;

    std::size_t length() const { return rows.rows(); }
    std::size_t dim() const { return rows.cols(); }
};

// Pixel rectangle [y0, y1) x [x0, x1) covered by a normalized box.
struct PixelRect {
    std::size_t y0 = 0, y1 = 0, x0 = 0, x1 = 0;
    bool empty() const { return y0 >= y1 || x0 >= x1; }
    bool contains(std::size_t y, std::size_t x) const {
        return y >= y0 && y < y1 && x >= x0 && x < x1;
    }
};

inline PixelRect box_to_rect(const BoundingBox& b, std::size_t h, std::size_t w) {
    PixelRect r;
    auto clamp = [](double v, std::size_t hi) {
        if (v < 0.0) return std::size_t{0};
        if (v > static_cast<double>(hi)) return hi;
        return static_cast<std::size_t>(v);
    };
    r.x0 = clamp(std::floor(b.x * static_cast<double>(w)), w);
    r.x1 = clamp(std::ceil((b.x + b.w) * static_cast<double>(w)), w);
    r.y0 = clamp(std::floor(b.y * static_cast<double>(h)), h);
    r.y1 = clamp(std::ceil((b.y + b.h) * static_cast<double>(h)), h);
    return r;
}

// Extracts the pixels under a normalized box; empty boxes yield a 0x0 image.
inline Tensor crop_image(const Tensor& img, const BoundingBox& box) {
    img.require_rank(3, "crop_image");
    std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    PixelRect r = box_to_rect(box, h, w);
    if (r.empty()) return Tensor({0, 0, c});
    Tensor out({r.y1 - r.y0, r.x1 - r.x0, c});
    for (std::size_t y = r.y0; y < r.y1; ++y)
        for (std::size_t x = r.x0; x < r.x1; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
                out.at(((y - r.y0) * (r.x1 - r.x0) + (x - r.x0)) * c + ch) =
                    img.at((y * w + x) * c + ch);
    return out;
}

// Position-aware image: the courtline segmentation everywhere, raw pixels
// inside the player-with-ball and basket boxes, zero elsewhere.
//
// raw: [H, W, 3]; courtline: [H, W] binary raster.
inline Tensor compose_position_aware(const Tensor& raw, const Tensor& courtline,
                                     const std::vector<BoundingBox>& player_with_ball_boxes,
                                     const std::optional<BoundingBox>& basket_box) {
    raw.require_rank(3, "compose_position_aware raw");
    if (courtline.rank() != 2 || courtline.numel() == 0) {
        throw std::invalid_argument("compose_position_aware: missing courtline mask (shape " +
                                    shape_str(courtline.shape()) + ")");
    }
    std::size_t h = raw.shape()[0], w = raw.shape()[1], c = raw.shape()[2];
    if (courtline.shape()[0] != h || courtline.shape()[1] != w) {
        throw std::invalid_argument("compose_position_aware: courtline " +
                                    shape_str(courtline.shape()) + " does not match frame " +
                                    shape_str(raw.shape()));
    }
    std::vector<PixelRect> rects;
    for (const BoundingBox& b : player_with_ball_boxes) rects.push_back(box_to_rect(b, h, w));
    if (basket_box) rects.push_back(box_to_rect(*basket_box, h, w));

    Tensor out({h, w, c});
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            bool in_box = false;
            for (const PixelRect& r : rects) {
                if (r.contains(y, x)) {
                    in_box = true;
                    break;
                }
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
                double v;
                if (in_box) {
                    v = raw.at((y * w + x) * c + ch);
                } else {
                    v = courtline.at(y * w + x) != 0.0 ? 1.0 : 0.0;
                }
                out.at((y * w + x) * c + ch) = v;
            }
        }
    }
    return out;
}

// Buckets per-frame vectors by whole second and mean-pools each bucket.
// Seconds without any vector emit a zero row (documented sentinel), so the
// output length m = ceil(total_frames / fps) always matches the clip span.
inline FeatureTrack regroup_per_second(const std::vector<std::size_t>& frame_indices,
                                       const std::vector<Tensor>& rows, std::size_t fps,
                                       std::size_t total_frames, StreamKind stream) {
    if (fps < 1) throw std::invalid_argument("regroup_per_second: fps must be >= 1");
    if (frame_indices.size() != rows.size()) {
        throw std::invalid_argument("regroup_per_second: " + std::to_string(frame_indices.size()) +
                                    " indices for " + std::to_string(rows.size()) + " rows");
    }
    std::size_t dim = rows.empty() ? 0 : rows.front().numel();
    std::size_t m = (total_frames + fps - 1) / fps;
    std::vector<std::vector<std::size_t>> buckets(m);
    for (std::size_t i = 0; i < frame_indices.size(); ++i) {
        std::size_t b = frame_indices[i] / fps;
        if (b >= m) {
            throw std::out_of_range("regroup_per_second: frame " +
                                    std::to_string(frame_indices[i]) + " beyond clip span " +
                                    std::to_string(total_frames));
        }
        if (rows[i].numel() != dim) {
            throw std::invalid_argument("regroup_per_second: inconsistent row dim");
        }
        buckets[b].push_back(i);
    }
    std::vector<Tensor> pooled;
    pooled.reserve(m);
    for (std::size_t b = 0; b < m; ++b) {
        if (buckets[b].empty()) {
            pooled.push_back(Tensor::zeros({1, dim}));
            continue;
        }
        std::vector<Tensor> members;
        members.reserve(buckets[b].size());
        for (std::size_t i : buckets[b]) members.push_back(reshape(rows[i], {1, dim}));
        Tensor sum_row = members.size() == 1 ? members[0] : concat_rows(members);
        pooled.push_back(members.size() == 1
                             ? members[0]
                             : reshape(mean_rows(sum_row), {1, dim}));
    }
    FeatureTrack track;
    track.rows = m == 1 ? pooled[0] : concat_rows(pooled);
    track.granularity = Granularity::PerSecond;
    track.stream = stream;
    return track;
}

// Row t of the result is CONCAT(ball[t] + basket[t] + pb[t], pa[t]): the three
// object streams are summed and the position-aware stream concatenated,
// doubling the feature dimension.
inline FeatureTrack fuse(const FeatureTrack& ball, const FeatureTrack& basket,
                         const FeatureTrack& pb, const FeatureTrack& pa) {
    const FeatureTrack* all[] = {&ball, &basket, &pb, &pa};
    std::size_t m = ball.length(), d = ball.dim();
    for (const FeatureTrack* t : all) {
        if (t->length() != m || t->dim() != d) {
            throw std::invalid_argument("fuse: track shape " + shape_str(t->rows.shape()) +
                                        " does not match " + shape_str(ball.rows.shape()));
        }
    }
    FeatureTrack out;
    out.rows = concat_cols({add(add(ball.rows, basket.rows), pb.rows), pa.rows});
    out.granularity = Granularity::PerSecond;
    out.stream = StreamKind::Fused;
    return out;
}

// --- adaptive frame sampling -------------------------------------------------

struct SamplerParams {
    std::size_t base_fps = 8;   // coarse stream rate
    std::size_t high_fps = 12;  // fine rate inside the event window
    std::size_t low_fps = 4;    // fine rate outside
    std::size_t window = 100;   // frames kept before/after the first flag
};

// Per-frame timeline of ball-in-basket-area flags at a given source rate.
struct DetectionTimeline {
    std::size_t frame_count = 0;
    std::size_t source_fps = 24;
    std::vector<bool> ball_in_basket;  // size == frame_count

    std::optional<std::size_t> first_flag() const {
        for (std::size_t i = 0; i < ball_in_basket.size(); ++i)
            if (ball_in_basket[i]) return i;
        return std::nullopt;
    }
};

// Flags from a detection track: the ball box intersecting the basket box.
inline DetectionTimeline timeline_from_track(const std::vector<DetectionFrame>& track,
                                             std::size_t frame_count, std::size_t source_fps) {
    DetectionTimeline t;
    t.frame_count = frame_count;
    t.source_fps = source_fps;
    t.ball_in_basket.assign(frame_count, false);
    for (const DetectionFrame& f : track) {
        if (f.frame_index >= frame_count) continue;
        auto ball = f.ball();
        auto basket = f.basket();
        if (ball && basket && iou(ball->box, basket->box) > 0.0) {
            t.ball_in_basket[f.frame_index] = true;
        }
    }
    return t;
}

struct AdaptiveSample {
    std::vector<std::size_t> coarse;    // uniform base_fps stream
    std::vector<std::size_t> fine;      // high_fps inside the window, low_fps outside
    std::vector<std::size_t> retained;  // fine indices inside the storage window
    std::optional<std::size_t> first_flag;
};

namespace detail {

inline std::size_t fps_stride(std::size_t source_fps, std::size_t target_fps) {
    if (target_fps == 0) throw std::invalid_argument("adaptive_sample: fps must be >= 1");
    double s = static_cast<double>(source_fps) / static_cast<double>(target_fps);
    auto stride = static_cast<std::size_t>(std::llround(s));
    return std::max<std::size_t>(1, stride);
}

// Samples [begin, end) at `stride` starting from the region's own origin.
inline void sample_region(std::size_t begin, std::size_t end, std::size_t stride,
                          std::vector<std::size_t>& out) {
    for (std::size_t i = begin; i < end; i += stride) out.push_back(i);
}

}  // namespace detail

// Coarse indices: uniform base_fps over the whole timeline. Fine indices:
// high_fps inside [first_flag - window, first_flag + window], low_fps outside
// (everything at low_fps when no frame is flagged). Indices are strictly
// increasing with no duplicates. `retained` additionally restricts the fine
// stream to the storage window around the first flag, mirroring the keep-100-
// frames-before-and-after storage rule; with no flag every fine index is
// retained.
inline AdaptiveSample adaptive_sample(const DetectionTimeline& timeline,
                                      const SamplerParams& params = {}) {
    AdaptiveSample out;
    std::size_t n = timeline.frame_count;
    if (n == 0) return out;
    std::size_t s = timeline.source_fps;
    std::size_t stride_base = detail::fps_stride(s, params.base_fps);
    std::size_t stride_high = detail::fps_stride(s, params.high_fps);
    std::size_t stride_low = detail::fps_stride(s, params.low_fps);

    detail::sample_region(0, n, stride_base, out.coarse);

    out.first_flag = timeline.first_flag();
    if (!out.first_flag) {
        detail::sample_region(0, n, stride_low, out.fine);
        out.retained = out.fine;
        return out;
    }
    std::size_t flag = *out.first_flag;
    std::size_t a = flag >= params.window ? flag - params.window : 0;
    std::size_t b = std::min(n - 1, flag + params.window);
    detail::sample_region(0, a, stride_low, out.fine);
    detail::sample_region(a, b + 1, stride_high, out.fine);
    detail::sample_region(b + 1, n, stride_low, out.fine);
    for (std::size_t i : out.fine) {
        if (i >= a && i <= b) out.retained.push_back(i);
    }
    return out;
}

}  // namespace nsva
