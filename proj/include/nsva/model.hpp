#pragma once

// The cross-modal encoder-decoder: visual backbones feeding a coarse encoder,
// a fine encoder over fused object streams, a cross encoder over their
// concatenation, and an autoregressive decoder with swappable task heads
// (caption / action / identity) plus beam-search inference.

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "nsva/attention.hpp"
#include "nsva/beam.hpp"
#include "nsva/checkpoint.hpp"
#include "nsva/features.hpp"
#include "nsva/tensor.hpp"
#include "nsva/visual.hpp"
#include "nsva/vocab.hpp"

namespace nsva {

struct ModelConfig {
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t ff_dim = 256;
    std::size_t feature_layers = 2;  // coarse and fine encoders
    std::size_t cross_layers = 1;
    std::size_t decoder_layers = 1;
    std::size_t vit_layers = 2;
    std::size_t tsf_layers = 2;
    std::size_t image_size = 32;
    std::size_t patch = 8;
    std::size_t max_frames = 30;
    std::size_t max_output_len = 30;
    double dropout = 0.0;

    AttentionConfig attention(std::size_t layers, bool causal = false) const {
        AttentionConfig a;
        a.model_dim = dim;
        a.head_count = heads;
        a.ff_dim = ff_dim;
        a.layer_count = layers;
        a.dropout = dropout;
        a.causal = causal;
        return a;
    }

    PatchGrid grid() const { return PatchGrid{image_size, image_size, 3, patch}; }
};

struct StreamToggles {
    bool coarse = true;
    bool ball = true;
    bool basket = true;
    bool player_ball = true;
    bool position_aware = true;

    bool any_fine() const { return ball || basket || player_ball || position_aware; }
    bool any() const { return coarse || any_fine(); }

    std::string label() const {
        std::string s;
        auto app = [&](bool on, const char* name) {
            if (on) {
                if (!s.empty()) s += "+";
                s += name;
            }
        };
        app(coarse, "T");
        app(ball, "BAL");
        app(basket, "BAS");
        app(player_ball, "PB");
        app(position_aware, "PA");
        return s.empty() ? "none" : s;
    }
};

// Crops for one sampled fine frame, already resized to the model input size.
struct FineFrameInputs {
    std::size_t frame_index = 0;
    std::optional<Tensor> ball_crop;
    std::optional<Tensor> basket_crop;
    std::vector<Tensor> player_ball_crops;
    std::optional<Tensor> position_aware;
};

struct ClipInputs {
    std::vector<Tensor> coarse_frames;
    std::vector<FineFrameInputs> fine_frames;
    std::size_t source_fps = 24;
    std::size_t total_frames = 0;
    StreamToggles toggles;
};

// Concatenated encoder output plus row provenance.
struct EncodedMemory {
    Tensor m;                  // (n + m_fine) x d
    std::vector<int> segment;  // 0 = coarse row, 1 = fine row
    std::vector<bool> valid;   // false marks padding rows

    std::size_t length() const { return m.rows(); }
};

struct TaskHead {
    std::string tag;
    Linear proj;                               // d -> local label space
    std::vector<int> local_to_global;          // local index -> vocabulary id
    std::unordered_map<int, int> global_to_local;

    int local_of(int global_id) const {
        auto it = global_to_local.find(global_id);
        return it == global_to_local.end() ? -1 : it->second;
    }
};

class CrossModel {
public:
    CrossModel(const ModelConfig& cfg, Vocabulary vocab,
               const std::map<std::string, std::vector<int>>& head_spaces, Rng& rng)
        : cfg_(cfg),
          vocab_(std::move(vocab)),
          coarse_backbone_(cfg.attention(cfg.tsf_layers), cfg.grid(), cfg.max_frames, rng),
          crop_encoder_(cfg.attention(cfg.vit_layers), cfg.grid(), rng),
          fine_proj_(2 * cfg.dim, cfg.dim, rng),
          coarse_enc_(cfg.attention(cfg.feature_layers), rng),
          fine_enc_(cfg.attention(cfg.feature_layers), rng),
          cross_enc_(cfg.attention(cfg.cross_layers), rng),
          decoder_(cfg.attention(cfg.decoder_layers, true), rng) {
        tok_embed_ = Tensor::randn({vocab_.size(), cfg.dim}, rng, 0.02);
        dec_pos_ = Tensor::randn({cfg.max_output_len + 2, cfg.dim}, rng, 0.02);
        tok_embed_.set_requires_grad(true);
        dec_pos_.set_requires_grad(true);
        for (const auto& [tag, label_ids] : head_spaces) {
            TaskHead head;
            head.tag = tag;
            head.local_to_global.push_back(Vocabulary::kEos);
            head.local_to_global.push_back(Vocabulary::kUnk);
            for (int id : label_ids) {
                if (id <= Vocabulary::kUnk) {
                    throw std::invalid_argument("CrossModel: head '" + tag +
                                                "' label space overlaps special tokens");
                }
                head.local_to_global.push_back(id);
            }
            for (std::size_t i = 0; i < head.local_to_global.size(); ++i) {
                head.global_to_local[head.local_to_global[i]] = static_cast<int>(i);
            }
            head.proj = Linear(cfg.dim, head.local_to_global.size(), rng);
            heads_.emplace(tag, std::move(head));
        }
    }

    const ModelConfig& config() const { return cfg_; }
    const Vocabulary& vocab() const { return vocab_; }
    TimeSformerEncoder& coarse_backbone() { return coarse_backbone_; }
    ViTEncoder& crop_encoder() { return crop_encoder_; }
    std::size_t truncation_warnings() const { return truncation_warnings_; }
    std::size_t unk_substitutions() const { return unk_substitutions_; }

    const TaskHead& head(const std::string& tag) const {
        auto it = heads_.find(tag);
        if (it == heads_.end()) {
            throw std::invalid_argument("CrossModel: unknown task tag '" + tag + "'");
        }
        return it->second;
    }

    // --- encoding ------------------------------------------------------------

    // Over-length tracks are truncated (with a counted warning), not rejected.
    Tensor encode_coarse(const Tensor& f_c, Rng* train_rng = nullptr) const {
        Tensor x = truncate_rows(f_c);
        return coarse_enc_.forward(x, nullptr, train_rng);
    }

    Tensor encode_fine(const Tensor& f_f, Rng* train_rng = nullptr) const {
        if (f_f.cols() != 2 * cfg_.dim) {
            throw std::invalid_argument("encode_fine: expected width " +
                                        std::to_string(2 * cfg_.dim) + ", got " +
                                        shape_str(f_f.shape()));
        }
        Tensor x = truncate_rows(f_f);
        return fine_enc_.forward(fine_proj_.forward(x), nullptr, train_rng);
    }

    // Attention spans both segments: no cross-segment masking.
    EncodedMemory cross_encode(const std::optional<Tensor>& v_c, const std::optional<Tensor>& v_f,
                               Rng* train_rng = nullptr) const {
        EncodedMemory mem;
        std::vector<Tensor> parts;
        if (v_c && v_c->rows() > 0) {
            parts.push_back(*v_c);
            for (std::size_t i = 0; i < v_c->rows(); ++i) mem.segment.push_back(0);
        }
        if (v_f && v_f->rows() > 0) {
            parts.push_back(*v_f);
            for (std::size_t i = 0; i < v_f->rows(); ++i) mem.segment.push_back(1);
        }
        if (parts.empty()) {
            throw std::invalid_argument("cross_encode: no encoder rows; enable a stream");
        }
        Tensor joint = parts.size() == 1 ? parts[0] : concat_rows(parts);
        mem.m = cross_enc_.forward(joint, nullptr, train_rng);
        mem.valid.assign(mem.m.rows(), true);
        return mem;
    }

    // Backbone outputs for one clip; the split point for feature caching when
    // the visual backbones are frozen.
    struct ClipFeatures {
        std::optional<Tensor> f_c;  // N x d coarse track
        std::optional<Tensor> f_f;  // m x 2d fused fine track

        ClipFeatures detach() const {
            ClipFeatures out;
            if (f_c) out.f_c = f_c->detach();
            if (f_f) out.f_f = f_f->detach();
            return out;
        }
    };

    ClipFeatures backbone_features(const ClipInputs& in, Rng* train_rng = nullptr) const {
        if (!in.toggles.any()) {
            throw std::invalid_argument("encode_clip: all feature streams disabled");
        }
        ClipFeatures feats;
        if (in.toggles.coarse && !in.coarse_frames.empty()) {
            feats.f_c = coarse_backbone_.encode(truncate_frames(in.coarse_frames), false,
                                                train_rng);
        }
        if (in.toggles.any_fine() && in.total_frames > 0) {
            feats.f_f = fine_features(in, train_rng);
        }
        return feats;
    }

    EncodedMemory encode_features(const ClipFeatures& feats, Rng* train_rng = nullptr) const {
        std::optional<Tensor> v_c, v_f;
        if (feats.f_c) v_c = encode_coarse(*feats.f_c, train_rng);
        if (feats.f_f) v_f = encode_fine(*feats.f_f, train_rng);
        return cross_encode(v_c, v_f, train_rng);
    }

    // Full pipeline from sampled pixels to memory.
    EncodedMemory encode_clip(const ClipInputs& in, Rng* train_rng = nullptr) const {
        return encode_features(backbone_features(in, train_rng), train_rng);
    }

    // The four per-second streams fused to m x 2d. Every crop of the clip
    // rides through one batched ViT pass.
    Tensor fine_features(const ClipInputs& in, Rng* train_rng = nullptr) const {
        std::size_t m = (in.total_frames + in.source_fps - 1) / in.source_fps;
        std::vector<Tensor> crops;
        std::vector<StreamKind> tags;
        std::vector<std::size_t> frames;
        auto push = [&](const Tensor& crop, StreamKind kind, std::size_t frame) {
            crops.push_back(crop);
            tags.push_back(kind);
            frames.push_back(frame);
        };
        for (const FineFrameInputs& f : in.fine_frames) {
            if (in.toggles.ball && f.ball_crop) push(*f.ball_crop, StreamKind::Ball, f.frame_index);
            if (in.toggles.basket && f.basket_crop)
                push(*f.basket_crop, StreamKind::Basket, f.frame_index);
            if (in.toggles.player_ball) {
                for (const Tensor& crop : f.player_ball_crops)
                    push(crop, StreamKind::PlayerWithBall, f.frame_index);
            }
            if (in.toggles.position_aware && f.position_aware)
                push(*f.position_aware, StreamKind::PositionAware, f.frame_index);
        }
        std::optional<Tensor> encoded;
        if (!crops.empty()) encoded = crop_encoder_.encode_batch(crops, train_rng);

        auto track = [&](StreamKind kind) {
            std::vector<std::size_t> idx;
            std::vector<Tensor> rows;
            for (std::size_t i = 0; i < tags.size(); ++i) {
                if (tags[i] != kind) continue;
                idx.push_back(frames[i]);
                rows.push_back(slice_rows(*encoded, i, i + 1));
            }
            if (rows.empty()) {
                FeatureTrack t;
                t.rows = Tensor::zeros({m, cfg_.dim});
                t.granularity = Granularity::PerSecond;
                t.stream = kind;
                return t;
            }
            return regroup_per_second(idx, rows, in.source_fps, in.total_frames, kind);
        };
        FeatureTrack ball = track(StreamKind::Ball);
        FeatureTrack basket = track(StreamKind::Basket);
        FeatureTrack pb = track(StreamKind::PlayerWithBall);
        FeatureTrack pa = track(StreamKind::PositionAware);
        return fuse(ball, basket, pb, pa).rows;
    }

    // --- training --------------------------------------------------------------

    // target: global token ids beginning with BOS and ending with EOS (PAD
    // afterwards allowed). Returns the summed negative log likelihood.
    Tensor decode_train(const EncodedMemory& memory, const std::vector<int>& target,
                        const std::string& task, Rng* train_rng = nullptr) {
        const TaskHead& h = head(task);
        validate_target(target);
        std::size_t len = target.size();

        std::vector<std::size_t> in_ids;
        for (std::size_t i = 0; i + 1 < len; ++i) {
            in_ids.push_back(static_cast<std::size_t>(target[i]));
        }
        Tensor h_out = decode_hidden(in_ids, memory, train_rng);
        Tensor logits = h.proj.forward(h_out);

        std::vector<int> local_targets;
        for (std::size_t i = 1; i < len; ++i) {
            if (target[i] == Vocabulary::kPad) {
                local_targets.push_back(-1);
                continue;
            }
            int local = h.local_of(target[i]);
            if (local < 0) {
                local = h.local_of(Vocabulary::kUnk);
                ++unk_substitutions_;
            }
            local_targets.push_back(local);
        }
        return cross_entropy(logits, local_targets, -1);
    }

    // --- inference ---------------------------------------------------------------

    // Length-normalized beam search over the task head (see beam.hpp for the
    // ranking rules). Hypothesis tokens are global vocabulary ids.
    BeamHypothesis beam_search(const EncodedMemory& memory, const std::string& task,
                               std::size_t width = 5, std::size_t max_len = 0) const {
        if (max_len == 0) max_len = cfg_.max_output_len;
        const TaskHead& h = head(task);
        NoGradGuard ng;
        BeamParams params{width, max_len, Vocabulary::kEos};
        return beam_search_core(
            [&](const std::vector<int>& prefix) {
                std::vector<double> lp = next_token_logprobs(prefix, memory, task);
                std::vector<std::pair<int, double>> out;
                out.reserve(lp.size());
                for (std::size_t local = 0; local < lp.size(); ++local) {
                    out.emplace_back(h.local_to_global[local], lp[local]);
                }
                return out;
            },
            params);
    }

    // Log softmax over the task head's local space given a global-id prefix.
    std::vector<double> next_token_logprobs(const std::vector<int>& prefix,
                                            const EncodedMemory& memory,
                                            const std::string& task) const {
        NoGradGuard ng;
        const TaskHead& h = head(task);
        std::vector<std::size_t> input_ids{Vocabulary::kBos};
        for (int id : prefix) input_ids.push_back(static_cast<std::size_t>(id));
        Tensor hidden = decode_hidden(input_ids, memory, nullptr);
        Tensor logits = h.proj.forward(slice_rows(hidden, hidden.rows() - 1, hidden.rows()));
        const std::vector<double>& row = logits.data();
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double sum = 0.0;
        for (double v : row) sum += std::exp(v - mx);
        double lse = mx + std::log(sum);
        std::vector<double> out(row.size());
        for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
        return out;
    }

    BeamHypothesis run_task(const ClipInputs& inputs, const std::string& task,
                            std::size_t width = 5) const {
        NoGradGuard ng;
        EncodedMemory memory = encode_clip(inputs);
        return beam_search(memory, task, width);
    }

    // Decoded tokens without specials (EOS stripped).
    std::vector<std::string> tokens_of(const BeamHypothesis& hyp) const {
        return vocab_.decode(hyp.tokens);
    }

    // --- parameters ----------------------------------------------------------------

    ParamList named_parameters() {
        ParamList out;
        coarse_backbone_.register_params("coarse_backbone", out);
        crop_encoder_.register_params("crop_encoder", out);
        fine_proj_.register_params("fine_proj", out);
        coarse_enc_.register_params("coarse_enc", out);
        fine_enc_.register_params("fine_enc", out);
        cross_enc_.register_params("cross_enc", out);
        decoder_.register_params("decoder", out);
        out.emplace_back("tok_embed", tok_embed_);
        out.emplace_back("dec_pos", dec_pos_);
        for (auto& [tag, h] : heads_) h.proj.register_params("head." + tag, out);
        return out;
    }

    ParamList backbone_parameters() {
        ParamList out;
        coarse_backbone_.register_params("coarse_backbone", out);
        crop_encoder_.register_params("crop_encoder", out);
        return out;
    }

    std::size_t parameter_count() {
        return nsva::parameter_count(named_parameters());
    }

    void save_checkpoint(const std::string& path) {
        save_arrays(path, named_parameters());
    }

    void load_checkpoint(const std::string& path) {
        NamedArrays stored = load_arrays(path);
        std::unordered_map<std::string, Tensor> by_name;
        for (auto& [name, t] : stored) by_name.emplace(name, t);
        for (auto& [name, param] : named_parameters()) {
            auto it = by_name.find(name);
            if (it == by_name.end()) {
                throw std::runtime_error("load_checkpoint: missing array " + name);
            }
            if (it->second.shape() != param.shape()) {
                throw std::runtime_error("load_checkpoint: shape mismatch for " + name + ": " +
                                         shape_str(it->second.shape()) + " vs " +
                                         shape_str(param.shape()));
            }
            param.data() = it->second.data();
        }
    }

private:
    Tensor truncate_rows(const Tensor& x) const {
        if (x.rows() <= cfg_.max_frames) return x;
        ++truncation_warnings_;
        return slice_rows(x, 0, cfg_.max_frames);
    }

    std::vector<Tensor> truncate_frames(const std::vector<Tensor>& frames) const {
        if (frames.size() <= cfg_.max_frames) return frames;
        ++truncation_warnings_;
        return std::vector<Tensor>(frames.begin(),
                                   frames.begin() + static_cast<long>(cfg_.max_frames));
    }

    void validate_target(const std::vector<int>& target) const {
        if (target.size() < 2 || target.front() != Vocabulary::kBos) {
            throw std::invalid_argument("decode_train: target must begin with BOS");
        }
        if (target.size() > cfg_.max_output_len + 2) {
            throw std::invalid_argument("decode_train: target length " +
                                        std::to_string(target.size()) + " exceeds maximum " +
                                        std::to_string(cfg_.max_output_len + 2));
        }
        bool saw_eos = false;
        for (std::size_t i = 1; i < target.size(); ++i) {
            if (target[i] == Vocabulary::kEos) saw_eos = true;
            if (target[i] == Vocabulary::kPad && !saw_eos) {
                throw std::invalid_argument("decode_train: PAD before EOS in target");
            }
        }
        if (!saw_eos) throw std::invalid_argument("decode_train: target must contain EOS");
    }

    Tensor decode_hidden(const std::vector<std::size_t>& input_ids, const EncodedMemory& memory,
                         Rng* train_rng) const {
        Tensor x = gather_rows(tok_embed_, input_ids);
        std::vector<std::size_t> pos(input_ids.size());
        for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
        x = add(x, gather_rows(dec_pos_, pos));
        bool any_pad = false;
        for (bool v : memory.valid) any_pad = any_pad || !v;
        if (any_pad) {
            Tensor mask = key_padding_mask(x.rows(), memory.valid);
            return decoder_.forward(x, memory.m, &mask, train_rng);
        }
        return decoder_.forward(x, memory.m, nullptr, train_rng);
    }

    ModelConfig cfg_;
    Vocabulary vocab_;
    TimeSformerEncoder coarse_backbone_;
    ViTEncoder crop_encoder_;
    Linear fine_proj_;
    TransformerEncoder coarse_enc_, fine_enc_, cross_enc_;
    TransformerDecoder decoder_;
    Tensor tok_embed_, dec_pos_;
    std::map<std::string, TaskHead> heads_;
    mutable std::size_t truncation_warnings_ = 0;
    std::size_t unk_substitutions_ = 0;
};

}  // namespace nsva
