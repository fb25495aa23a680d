#pragma once

// Transformer building blocks: linear / layer-norm modules, multi-head
// attention, pre-norm encoder and decoder layers, and whole stacks.
//
// Masks are additive score matrices: 0 where attention is allowed and -inf
// where it is forbidden. With max-subtracted softmax a -inf score yields an
// exactly zero attention weight.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "nsva/tensor.hpp"

namespace nsva {

using ParamList = std::vector<std::pair<std::string, Tensor>>;

struct AttentionConfig {
    std::size_t model_dim = 64;
    std::size_t head_count = 4;
    std::size_t ff_dim = 256;
    std::size_t layer_count = 2;
    double dropout = 0.0;
    bool causal = false;

    void validate() const {
        if (model_dim == 0 || head_count == 0 || model_dim % head_count != 0) {
            throw std::invalid_argument("AttentionConfig: model_dim " +
                                        std::to_string(model_dim) +
                                        " must be divisible by head_count " +
                                        std::to_string(head_count));
        }
        if (layer_count < 1) {
            throw std::invalid_argument("AttentionConfig: layer_count must be >= 1");
        }
        if (dropout < 0.0 || dropout >= 1.0) {
            throw std::invalid_argument("AttentionConfig: dropout must be in [0, 1)");
        }
    }
};

inline double neg_inf() { return -std::numeric_limits<double>::infinity(); }

// [t, t] additive mask forbidding attention to positions > row index.
inline Tensor causal_mask(std::size_t t) {
    Tensor m({t, t});
    for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = i + 1; j < t; ++j) m.at(i, j) = neg_inf();
    return m;
}

// [rows, keys] additive mask forbidding attention onto invalid key positions.
inline Tensor key_padding_mask(std::size_t rows, const std::vector<bool>& key_valid) {
    Tensor m({rows, key_valid.size()});
    for (std::size_t j = 0; j < key_valid.size(); ++j) {
        if (!key_valid[j]) {
            for (std::size_t i = 0; i < rows; ++i) m.at(i, j) = neg_inf();
        }
    }
    return m;
}

inline Tensor combine_masks(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "combine_masks");
    Tensor m = a.detach();
    for (std::size_t i = 0; i < m.numel(); ++i) m.data()[i] += b.data()[i];
    return m;
}

// Inverted dropout; identity when rng is null or rate is zero.
inline Tensor dropout(const Tensor& x, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) return x;
    Tensor mask(x.shape());
    double keep = 1.0 - rate;
    for (double& v : mask.data()) v = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
    return mul(x, mask);
}

class Linear {
public:
    Linear() = default;

    Linear(std::size_t in_dim, std::size_t out_dim, Rng& rng) {
        double stddev = std::sqrt(2.0 / static_cast<double>(in_dim + out_dim));
        w_ = Tensor::randn({in_dim, out_dim}, rng, stddev);
        b_ = Tensor::zeros({out_dim});
        w_.set_requires_grad(true);
        b_.set_requires_grad(true);
    }

    Tensor forward(const Tensor& x) const {
        if (x.rank() == 1) {
            Tensor r = forward(reshape(x, {1, x.numel()}));
            return reshape(r, {r.numel()});
        }
        return add_rowvec(matmul(x, w_), b_);
    }

    Tensor& weight() { return w_; }
    Tensor& bias() { return b_; }

    void register_params(const std::string& prefix, ParamList& out) {
        out.emplace_back(prefix + ".w", w_);
        out.emplace_back(prefix + ".b", b_);
    }

private:
    Tensor w_, b_;
};

class LayerNorm {
public:
    LayerNorm() = default;

    explicit LayerNorm(std::size_t dim, double eps = 1e-5) : eps_(eps) {
        gain_ = Tensor::ones({dim});
        bias_ = Tensor::zeros({dim});
        gain_.set_requires_grad(true);
        bias_.set_requires_grad(true);
    }

    Tensor forward(const Tensor& x) const { return layer_norm(x, gain_, bias_, eps_); }

    Tensor& gain() { return gain_; }
    Tensor& bias() { return bias_; }

    void register_params(const std::string& prefix, ParamList& out) {
        out.emplace_back(prefix + ".gain", gain_);
        out.emplace_back(prefix + ".bias", bias_);
    }

private:
    Tensor gain_, bias_;
    double eps_ = 1e-5;
};

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;

    MultiHeadAttention(std::size_t model_dim, std::size_t head_count, Rng& rng)
        : dim_(model_dim),
          heads_(head_count),
          wq_(model_dim, model_dim, rng),
          wk_(model_dim, model_dim, rng),
          wv_(model_dim, model_dim, rng),
          wo_(model_dim, model_dim, rng) {
        if (model_dim % head_count != 0) {
            throw std::invalid_argument("MultiHeadAttention: dim not divisible by heads");
        }
    }

    // query [mq, d], keyvalue [mk, d], mask empty or [mq, mk].
    // identity_weights replaces the attention matrix with the identity
    // (requires mq == mk); value and output projections still apply.
    Tensor forward(const Tensor& query, const Tensor& keyvalue, const Tensor* mask = nullptr,
                   bool identity_weights = false) const {
        std::size_t mq = query.rows(), mk = keyvalue.rows();
        if (query.cols() != dim_ || keyvalue.cols() != dim_) {
            throw std::invalid_argument("MultiHeadAttention: feature dim mismatch, got " +
                                        shape_str(query.shape()) + " and " +
                                        shape_str(keyvalue.shape()) + " for dim " +
                                        std::to_string(dim_));
        }
        if (mask != nullptr && (mask->rows() != mq || mask->cols() != mk)) {
            throw std::invalid_argument("MultiHeadAttention: mask " + shape_str(mask->shape()) +
                                        " does not cover " + std::to_string(mq) + "x" +
                                        std::to_string(mk) + " scores");
        }
        if (identity_weights && mq != mk) {
            throw std::invalid_argument("MultiHeadAttention: identity weights need mq == mk");
        }
        Tensor q = wq_.forward(query);
        Tensor k = wk_.forward(keyvalue);
        Tensor v = wv_.forward(keyvalue);
        std::size_t hd = dim_ / heads_;
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
        std::vector<Tensor> ctx;
        ctx.reserve(heads_);
        for (std::size_t h = 0; h < heads_; ++h) {
            Tensor vh = slice_cols(v, h * hd, (h + 1) * hd);
            if (identity_weights) {
                ctx.push_back(vh);
                continue;
            }
            Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
            Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (mask != nullptr) scores = add(scores, *mask);
            Tensor attn = softmax(scores, 1);
            ctx.push_back(matmul(attn, vh));
        }
        return wo_.forward(heads_ == 1 ? ctx[0] : concat_cols(ctx));
    }

    // Self-attention over G independent groups of `group_len` rows sharing
    // these weights; one fused score/softmax/context node for all groups.
    Tensor forward_grouped(const Tensor& x, std::size_t group_len,
                           bool identity_weights = false) const {
        Tensor v = wv_.forward(x);
        if (identity_weights) return wo_.forward(v);
        Tensor q = wq_.forward(x);
        Tensor k = wk_.forward(x);
        return wo_.forward(grouped_attention(q, k, v, group_len, heads_));
    }

    // Attention weight matrices of the last layer for inspection in tests.
    std::vector<Tensor> attention_maps(const Tensor& query, const Tensor& keyvalue,
                                       const Tensor* mask = nullptr) const {
        std::size_t hd = dim_ / heads_;
        double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
        Tensor q = wq_.forward(query);
        Tensor k = wk_.forward(keyvalue);
        std::vector<Tensor> maps;
        for (std::size_t h = 0; h < heads_; ++h) {
            Tensor qh = slice_cols(q, h * hd, (h + 1) * hd);
            Tensor kh = slice_cols(k, h * hd, (h + 1) * hd);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            if (mask != nullptr) scores = add(scores, *mask);
            maps.push_back(softmax(scores, 1));
        }
        return maps;
    }

    Linear& wq() { return wq_; }
    Linear& wk() { return wk_; }
    Linear& wv() { return wv_; }
    Linear& wo() { return wo_; }

    void register_params(const std::string& prefix, ParamList& out) {
        wq_.register_params(prefix + ".wq", out);
        wk_.register_params(prefix + ".wk", out);
        wv_.register_params(prefix + ".wv", out);
        wo_.register_params(prefix + ".wo", out);
    }

private:
    std::size_t dim_ = 0;
    std::size_t heads_ = 0;
    Linear wq_, wk_, wv_, wo_;
};

class FeedForward {
public:
    FeedForward() = default;

    FeedForward(std::size_t dim, std::size_t hidden, Rng& rng)
        : fc1_(dim, hidden, rng), fc2_(hidden, dim, rng) {}

    Tensor forward(const Tensor& x) const { return fc2_.forward(gelu(fc1_.forward(x))); }

    Linear& fc1() { return fc1_; }
    Linear& fc2() { return fc2_; }

    void register_params(const std::string& prefix, ParamList& out) {
        fc1_.register_params(prefix + ".fc1", out);
        fc2_.register_params(prefix + ".fc2", out);
    }

private:
    Linear fc1_, fc2_;
};

// Pre-norm residual encoder layer: x + Attn(LN(x)), then x + FFN(LN(x)).
class EncoderLayer {
public:
    EncoderLayer() = default;

    EncoderLayer(const AttentionConfig& cfg, Rng& rng)
        : ln1_(cfg.model_dim),
          ln2_(cfg.model_dim),
          attn_(cfg.model_dim, cfg.head_count, rng),
          ff_(cfg.model_dim, cfg.ff_dim, rng),
          dropout_(cfg.dropout) {}

    Tensor forward(const Tensor& x, const Tensor* mask = nullptr, Rng* train_rng = nullptr,
                   bool identity_attention = false) const {
        Tensor n1 = ln1_.forward(x);
        Tensor h = add(x, dropout(attn_.forward(n1, n1, mask, identity_attention), dropout_,
                                  train_rng));
        return add(h, dropout(ff_.forward(ln2_.forward(h)), dropout_, train_rng));
    }

    // Batched variant: rows form independent groups of `group_len`; attention
    // never crosses group boundaries, norms and feed-forward are row-local.
    Tensor forward_grouped(const Tensor& x, std::size_t group_len,
                           Rng* train_rng = nullptr) const {
        Tensor h = add(x, dropout(attn_.forward_grouped(ln1_.forward(x), group_len), dropout_,
                                  train_rng));
        return add(h, dropout(ff_.forward(ln2_.forward(h)), dropout_, train_rng));
    }

    MultiHeadAttention& attention() { return attn_; }
    LayerNorm& norm1() { return ln1_; }
    LayerNorm& norm2() { return ln2_; }
    FeedForward& feed_forward() { return ff_; }

    void register_params(const std::string& prefix, ParamList& out) {
        ln1_.register_params(prefix + ".ln1", out);
        ln2_.register_params(prefix + ".ln2", out);
        attn_.register_params(prefix + ".attn", out);
        ff_.register_params(prefix + ".ff", out);
    }

private:
    LayerNorm ln1_, ln2_;
    MultiHeadAttention attn_;
    FeedForward ff_;
    double dropout_ = 0.0;
};

// Pre-norm residual decoder layer: causal self-attention, cross-attention
// over the encoder memory, feed-forward.
class DecoderLayer {
public:
    DecoderLayer() = default;

    DecoderLayer(const AttentionConfig& cfg, Rng& rng)
        : ln1_(cfg.model_dim),
          ln2_(cfg.model_dim),
          ln3_(cfg.model_dim),
          self_attn_(cfg.model_dim, cfg.head_count, rng),
          cross_attn_(cfg.model_dim, cfg.head_count, rng),
          ff_(cfg.model_dim, cfg.ff_dim, rng),
          dropout_(cfg.dropout) {}

    Tensor forward(const Tensor& x, const Tensor& memory, const Tensor& self_mask,
                   const Tensor* memory_mask = nullptr, Rng* train_rng = nullptr) const {
        Tensor n1 = ln1_.forward(x);
        Tensor h = add(x, dropout(self_attn_.forward(n1, n1, &self_mask), dropout_, train_rng));
        Tensor h2 = add(h, dropout(cross_attn_.forward(ln2_.forward(h), memory, memory_mask),
                                   dropout_, train_rng));
        return add(h2, dropout(ff_.forward(ln3_.forward(h2)), dropout_, train_rng));
    }

    void register_params(const std::string& prefix, ParamList& out) {
        ln1_.register_params(prefix + ".ln1", out);
        ln2_.register_params(prefix + ".ln2", out);
        ln3_.register_params(prefix + ".ln3", out);
        self_attn_.register_params(prefix + ".self_attn", out);
        cross_attn_.register_params(prefix + ".cross_attn", out);
        ff_.register_params(prefix + ".ff", out);
    }

private:
    LayerNorm ln1_, ln2_, ln3_;
    MultiHeadAttention self_attn_, cross_attn_;
    FeedForward ff_;
    double dropout_ = 0.0;
};

class TransformerEncoder {
public:
    TransformerEncoder() = default;

    TransformerEncoder(const AttentionConfig& cfg, Rng& rng) : final_ln_(cfg.model_dim) {
        cfg.validate();
        layers_.reserve(cfg.layer_count);
        for (std::size_t i = 0; i < cfg.layer_count; ++i) layers_.emplace_back(cfg, rng);
    }

    Tensor forward(const Tensor& x, const Tensor* mask = nullptr,
                   Rng* train_rng = nullptr) const {
        Tensor h = x;
        for (const EncoderLayer& l : layers_) h = l.forward(h, mask, train_rng);
        return final_ln_.forward(h);
    }

    std::size_t layer_count() const { return layers_.size(); }
    EncoderLayer& layer(std::size_t i) { return layers_.at(i); }
    const EncoderLayer& layer_const(std::size_t i) const { return layers_.at(i); }
    const LayerNorm& final_norm() const { return final_ln_; }

    void register_params(const std::string& prefix, ParamList& out) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            layers_[i].register_params(prefix + ".layers." + std::to_string(i), out);
        }
        final_ln_.register_params(prefix + ".final_ln", out);
    }

private:
    std::vector<EncoderLayer> layers_;
    LayerNorm final_ln_;
};

class TransformerDecoder {
public:
    TransformerDecoder() = default;

    TransformerDecoder(const AttentionConfig& cfg, Rng& rng) : final_ln_(cfg.model_dim) {
        cfg.validate();
        layers_.reserve(cfg.layer_count);
        for (std::size_t i = 0; i < cfg.layer_count; ++i) layers_.emplace_back(cfg, rng);
    }

    // Applies a causal self-attention mask; memory_mask hides padded memory rows.
    Tensor forward(const Tensor& x, const Tensor& memory, const Tensor* memory_mask = nullptr,
                   Rng* train_rng = nullptr) const {
        Tensor self_mask = causal_mask(x.rows());
        Tensor h = x;
        for (const DecoderLayer& l : layers_)
            h = l.forward(h, memory, self_mask, memory_mask, train_rng);
        return final_ln_.forward(h);
    }

    std::size_t layer_count() const { return layers_.size(); }

    void register_params(const std::string& prefix, ParamList& out) {
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            layers_[i].register_params(prefix + ".layers." + std::to_string(i), out);
        }
        final_ln_.register_params(prefix + ".final_ln", out);
    }

private:
    std::vector<DecoderLayer> layers_;
    LayerNorm final_ln_;
};

inline std::size_t parameter_count(const ParamList& params) {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

inline std::vector<Tensor> parameter_tensors(const ParamList& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) out.push_back(t);
    return out;
}

}  // namespace nsva
