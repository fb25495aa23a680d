#pragma once

// Visual feature extraction: patch embedding, a ViT-style crop encoder that
// yields one class-token vector per image, and a divided space-time clip
// encoder that yields one vector per frame.

#include <stdexcept>
#include <string>
#include <vector>

#include "nsva/attention.hpp"
#include "nsva/tensor.hpp"

namespace nsva {

struct PatchGrid {
    std::size_t frame_height = 32;
    std::size_t frame_width = 32;
    std::size_t channels = 3;
    std::size_t patch_size = 8;

    std::size_t patch_count() const {
        return (frame_height / patch_size) * (frame_width / patch_size);
    }
    std::size_t patch_dim() const { return channels * patch_size * patch_size; }

    void validate() const {
        if (patch_size == 0 || frame_height % patch_size != 0 ||
            frame_width % patch_size != 0) {
            throw std::invalid_argument(
                "PatchGrid: frame " + std::to_string(frame_height) + "x" +
                std::to_string(frame_width) + " not divisible by patch size " +
                std::to_string(patch_size));
        }
    }
};

// Raw clip: N frames of [H, W, 3] pixels in [0, 1].
struct ClipTensor {
    std::vector<Tensor> frames;

    std::size_t frame_count() const { return frames.size(); }

    void validate(std::size_t max_frames = 30) const {
        if (frames.empty()) throw std::invalid_argument("ClipTensor: no frames");
        if (frames.size() > max_frames) {
            throw std::invalid_argument("ClipTensor: " + std::to_string(frames.size()) +
                                        " frames exceed maximum " + std::to_string(max_frames));
        }
        const Shape& s = frames.front().shape();
        for (const Tensor& f : frames) {
            if (f.rank() != 3 || f.shape() != s) {
                throw std::invalid_argument("ClipTensor: inconsistent frame shape " +
                                            shape_str(f.shape()));
            }
            for (double v : f.data()) {
                if (v < 0.0 || v > 1.0) {
                    throw std::invalid_argument("ClipTensor: pixel value " + std::to_string(v) +
                                                " outside [0,1]");
                }
            }
        }
    }
};

// Splits an [H, W, 3] frame into F = HW/P^2 non-overlapping patches, row-major
// over the patch grid. Within a patch, pixels flatten row-major with channels
// innermost: element (yy, xx, c) lands at (yy*P + xx)*3 + c. Lossless.
inline Tensor patchify(const Tensor& frame, std::size_t patch) {
    frame.require_rank(3, "patchify");
    std::size_t h = frame.shape()[0], w = frame.shape()[1], c = frame.shape()[2];
    if (patch == 0 || h % patch != 0 || w % patch != 0) {
        throw std::invalid_argument("patchify: frame " + shape_str(frame.shape()) +
                                    " not divisible by patch size " + std::to_string(patch));
    }
    std::size_t gy = h / patch, gx = w / patch;
    std::size_t f = gy * gx, pd = c * patch * patch;
    std::vector<double> out(f * pd);
    for (std::size_t py = 0; py < gy; ++py) {
        for (std::size_t px = 0; px < gx; ++px) {
            std::size_t pi = py * gx + px;
            for (std::size_t yy = 0; yy < patch; ++yy) {
                const double* src =
                    frame.data().data() + ((py * patch + yy) * w + px * patch) * c;
                double* dst = out.data() + pi * pd + yy * patch * c;
                std::copy_n(src, patch * c, dst);
            }
        }
    }
    auto fn = frame.node();
    return make_op("patchify", {f, pd}, std::move(out), {frame},
                   [fn, h, w, c, patch, gx, pd](detail::TensorNode& r) {
                       fn->ensure_grad();
                       std::size_t gy2 = h / patch;
                       for (std::size_t py = 0; py < gy2; ++py)
                           for (std::size_t px = 0; px < gx; ++px) {
                               std::size_t pi = py * gx + px;
                               for (std::size_t yy = 0; yy < patch; ++yy) {
                                   const double* src = r.grad.data() + pi * pd + yy * patch * c;
                                   double* dst = fn->grad.data() +
                                                 ((py * patch + yy) * w + px * patch) * c;
                                   for (std::size_t i = 0; i < patch * c; ++i) dst[i] += src[i];
                               }
                           }
                   });
}

// Exact inverse of patchify.
inline Tensor unpatchify(const Tensor& patches, std::size_t h, std::size_t w, std::size_t patch,
                         std::size_t channels = 3) {
    patches.require_rank(2, "unpatchify");
    std::size_t gy = h / patch, gx = w / patch;
    std::size_t pd = channels * patch * patch;
    if (patches.shape()[0] != gy * gx || patches.shape()[1] != pd) {
        throw std::invalid_argument("unpatchify: patches " + shape_str(patches.shape()) +
                                    " do not reassemble a " + std::to_string(h) + "x" +
                                    std::to_string(w) + " frame with P=" + std::to_string(patch));
    }
    Tensor frame({h, w, channels});
    for (std::size_t py = 0; py < gy; ++py)
        for (std::size_t px = 0; px < gx; ++px) {
            std::size_t pi = py * gx + px;
            for (std::size_t yy = 0; yy < patch; ++yy) {
                const double* src = patches.data().data() + pi * pd + yy * patch * channels;
                double* dst =
                    frame.data().data() + ((py * patch + yy) * w + px * patch) * channels;
                std::copy_n(src, patch * channels, dst);
            }
        }
    return frame;
}

// Nearest-neighbour resize to a square side; deterministic.
inline Tensor resize_nearest(const Tensor& img, std::size_t side) {
    img.require_rank(3, "resize_nearest");
    std::size_t h = img.shape()[0], w = img.shape()[1], c = img.shape()[2];
    if (h == 0 || w == 0) throw std::invalid_argument("resize_nearest: empty image");
    Tensor out({side, side, c});
    for (std::size_t i = 0; i < side; ++i) {
        std::size_t si = std::min(h - 1, static_cast<std::size_t>(
                                             (static_cast<double>(i) + 0.5) *
                                             static_cast<double>(h) / static_cast<double>(side)));
        for (std::size_t j = 0; j < side; ++j) {
            std::size_t sj = std::min(
                w - 1, static_cast<std::size_t>((static_cast<double>(j) + 0.5) *
                                                static_cast<double>(w) /
                                                static_cast<double>(side)));
            for (std::size_t ch = 0; ch < c; ++ch)
                out.at((i * side + j) * c + ch) = img.at((si * w + sj) * c + ch);
        }
    }
    return out;
}

// ViT-style crop encoder: patch embedding + learned positions + class token,
// encoder layers, class-token output.
class ViTEncoder {
public:
    ViTEncoder() = default;

    ViTEncoder(const AttentionConfig& cfg, const PatchGrid& grid, Rng& rng)
        : cfg_(cfg), grid_(grid), patch_embed_(grid.patch_dim(), cfg.model_dim, rng),
          encoder_(cfg, rng) {
        grid_.validate();
        cls_token_ = Tensor::randn({1, cfg.model_dim}, rng, 0.02);
        pos_embed_ = Tensor::randn({grid_.patch_count() + 1, cfg.model_dim}, rng, 0.02);
        cls_token_.set_requires_grad(true);
        pos_embed_.set_requires_grad(true);
    }

    std::size_t input_size() const { return grid_.frame_height; }
    std::size_t dim() const { return cfg_.model_dim; }

    // crop: [S, S, 3] already resized to the encoder input size.
    Tensor encode(const Tensor& crop, Rng* train_rng = nullptr) const {
        if (crop.rank() != 3 || crop.shape()[0] == 0 || crop.shape()[1] == 0) {
            throw std::invalid_argument("ViTEncoder: degenerate crop " + shape_str(crop.shape()));
        }
        if (crop.shape()[0] != grid_.frame_height || crop.shape()[1] != grid_.frame_width) {
            throw std::invalid_argument("ViTEncoder: crop " + shape_str(crop.shape()) +
                                        " must be resized to " +
                                        std::to_string(grid_.frame_height) + "x" +
                                        std::to_string(grid_.frame_width));
        }
        Tensor tokens = patch_embed_.forward(patchify(crop, grid_.patch_size));
        Tensor x = add(concat_rows({cls_token_, tokens}), pos_embed_);
        Tensor encoded = encoder_.forward(x, nullptr, train_rng);
        return reshape(slice_rows(encoded, 0, 1), {cfg_.model_dim});
    }

    // Encodes a batch of same-size crops in one pass: shared projections and
    // feed-forward run over the stacked tokens, attention stays per crop.
    // Returns one row per crop.
    Tensor encode_batch(const std::vector<Tensor>& crops, Rng* train_rng = nullptr) const {
        if (crops.empty()) throw std::invalid_argument("ViTEncoder: empty batch");
        std::size_t f = grid_.patch_count();
        std::size_t len = f + 1;  // class token + patches
        std::vector<Tensor> rows;
        rows.reserve(2 * crops.size());
        for (const Tensor& crop : crops) {
            if (crop.rank() != 3 || crop.shape()[0] != grid_.frame_height ||
                crop.shape()[1] != grid_.frame_width) {
                throw std::invalid_argument("ViTEncoder: bad crop " + shape_str(crop.shape()));
            }
            rows.push_back(cls_token_);
            rows.push_back(patch_embed_.forward(patchify(crop, grid_.patch_size)));
        }
        Tensor x = concat_rows(rows);
        std::vector<std::size_t> pos_idx(crops.size() * len);
        for (std::size_t i = 0; i < crops.size(); ++i)
            for (std::size_t j = 0; j < len; ++j) pos_idx[i * len + j] = j;
        x = add(x, gather_rows(pos_embed_, pos_idx));
        for (std::size_t l = 0; l < encoder_const().layer_count(); ++l) {
            x = encoder_const().layer_const(l).forward_grouped(x, len, train_rng);
        }
        x = encoder_const().final_norm().forward(x);
        std::vector<std::size_t> cls_idx(crops.size());
        for (std::size_t i = 0; i < crops.size(); ++i) cls_idx[i] = i * len;
        return gather_rows(x, cls_idx);
    }

    Tensor& position_embedding() { return pos_embed_; }

    void register_params(const std::string& prefix, ParamList& out) {
        patch_embed_.register_params(prefix + ".patch_embed", out);
        out.emplace_back(prefix + ".cls_token", cls_token_);
        out.emplace_back(prefix + ".pos_embed", pos_embed_);
        encoder_.register_params(prefix + ".encoder", out);
    }

private:
    const TransformerEncoder& encoder_const() const { return encoder_; }

private:
    AttentionConfig cfg_;
    PatchGrid grid_;
    Linear patch_embed_;
    Tensor cls_token_, pos_embed_;
    TransformerEncoder encoder_;
};

// One divided space-time block: temporal self-attention across frames at the
// same patch index, spatial self-attention within each frame, feed-forward.
class TimeSformerBlock {
public:
    TimeSformerBlock() = default;

    TimeSformerBlock(const AttentionConfig& cfg, Rng& rng)
        : ln_time_(cfg.model_dim),
          ln_space_(cfg.model_dim),
          ln_ff_(cfg.model_dim),
          time_attn_(cfg.model_dim, cfg.head_count, rng),
          space_attn_(cfg.model_dim, cfg.head_count, rng),
          ff_(cfg.model_dim, cfg.ff_dim, rng) {}

    // x: [N*F, d] frame-major tokens (frame f patch p at row f*F + p).
    Tensor forward(const Tensor& x, std::size_t n_frames, std::size_t n_patches,
                   bool temporal_identity, Rng* train_rng = nullptr) const {
        Tensor h = x;
        // temporal sub-block: regroup patch-major so frames of one patch index
        // are contiguous, attend within each patch group, regroup back
        {
            Tensor normed = ln_time_.forward(h);
            std::vector<std::size_t> to_patch_major(n_frames * n_patches);
            std::vector<std::size_t> to_frame_major(n_frames * n_patches);
            for (std::size_t f = 0; f < n_frames; ++f)
                for (std::size_t p = 0; p < n_patches; ++p) {
                    to_patch_major[p * n_frames + f] = f * n_patches + p;
                    to_frame_major[f * n_patches + p] = p * n_frames + f;
                }
            Tensor patch_major = gather_rows(normed, to_patch_major);
            Tensor attended =
                time_attn_.forward_grouped(patch_major, n_frames, temporal_identity);
            h = add(h, gather_rows(attended, to_frame_major));
        }
        // spatial sub-block: frame-major rows are already grouped by frame
        h = add(h, space_attn_.forward_grouped(ln_space_.forward(h), n_patches));
        return add(h, dropout(ff_.forward(ln_ff_.forward(h)), 0.0, train_rng));
    }

    void register_params(const std::string& prefix, ParamList& out) {
        ln_time_.register_params(prefix + ".ln_time", out);
        ln_space_.register_params(prefix + ".ln_space", out);
        ln_ff_.register_params(prefix + ".ln_ff", out);
        time_attn_.register_params(prefix + ".time_attn", out);
        space_attn_.register_params(prefix + ".space_attn", out);
        ff_.register_params(prefix + ".ff", out);
    }

private:
    LayerNorm ln_time_, ln_space_, ln_ff_;
    MultiHeadAttention time_attn_, space_attn_;
    FeedForward ff_;
};

// Divided space-time clip encoder; emits one d-vector per frame (mean over
// the frame's patch tokens after the final norm).
class TimeSformerEncoder {
public:
    TimeSformerEncoder() = default;

    TimeSformerEncoder(const AttentionConfig& cfg, const PatchGrid& grid, std::size_t max_frames,
                       Rng& rng)
        : cfg_(cfg),
          grid_(grid),
          max_frames_(max_frames),
          patch_embed_(grid.patch_dim(), cfg.model_dim, rng),
          final_ln_(cfg.model_dim) {
        grid_.validate();
        space_pos_ = Tensor::randn({grid_.patch_count(), cfg.model_dim}, rng, 0.02);
        time_pos_ = Tensor::randn({max_frames, cfg.model_dim}, rng, 0.02);
        space_pos_.set_requires_grad(true);
        time_pos_.set_requires_grad(true);
        blocks_.reserve(cfg.layer_count);
        for (std::size_t i = 0; i < cfg.layer_count; ++i) blocks_.emplace_back(cfg, rng);
    }

    std::size_t dim() const { return cfg_.model_dim; }
    std::size_t max_frames() const { return max_frames_; }
    Tensor& time_position_embedding() { return time_pos_; }

    // clip frames: [S, S, 3] each; returns [N, d].
    Tensor encode(const std::vector<Tensor>& frames, bool temporal_identity = false,
                  Rng* train_rng = nullptr) const {
        if (frames.empty()) throw std::invalid_argument("TimeSformerEncoder: empty clip");
        if (frames.size() > max_frames_) {
            throw std::invalid_argument("TimeSformerEncoder: " + std::to_string(frames.size()) +
                                        " frames exceed maximum " + std::to_string(max_frames_));
        }
        std::size_t n = frames.size();
        std::size_t f = grid_.patch_count();
        std::vector<Tensor> per_frame;
        per_frame.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            Tensor tokens = patch_embed_.forward(patchify(frames[i], grid_.patch_size));
            tokens = add(tokens, space_pos_);
            Tensor tpos = reshape(gather_rows(time_pos_, {i}), {cfg_.model_dim});
            per_frame.push_back(add_rowvec(tokens, tpos));
        }
        Tensor x = n == 1 ? per_frame[0] : concat_rows(per_frame);
        for (const TimeSformerBlock& b : blocks_)
            x = b.forward(x, n, f, temporal_identity, train_rng);
        x = final_ln_.forward(x);
        std::vector<Tensor> rows;
        rows.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            rows.push_back(reshape(mean_rows(slice_rows(x, i * f, (i + 1) * f)), {1, cfg_.model_dim}));
        return n == 1 ? rows[0] : concat_rows(rows);
    }

    void register_params(const std::string& prefix, ParamList& out) {
        patch_embed_.register_params(prefix + ".patch_embed", out);
        out.emplace_back(prefix + ".space_pos", space_pos_);
        out.emplace_back(prefix + ".time_pos", time_pos_);
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].register_params(prefix + ".blocks." + std::to_string(i), out);
        final_ln_.register_params(prefix + ".final_ln", out);
    }

private:
    AttentionConfig cfg_;
    PatchGrid grid_;
    std::size_t max_frames_ = 30;
    Linear patch_embed_;
    Tensor space_pos_, time_pos_;
    std::vector<TimeSformerBlock> blocks_;
    LayerNorm final_ln_;
};

}  // namespace nsva
