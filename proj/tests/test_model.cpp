#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <map>

#include "nsva/model.hpp"
#include "nsva/optim.hpp"
#include "support/finite_diff.hpp"

using namespace nsva;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.dim = 16;
    cfg.heads = 2;
    cfg.ff_dim = 32;
    cfg.feature_layers = 1;
    cfg.cross_layers = 1;
    cfg.decoder_layers = 1;
    cfg.vit_layers = 1;
    cfg.tsf_layers = 1;
    cfg.image_size = 16;
    cfg.patch = 8;
    cfg.max_frames = 8;
    cfg.max_output_len = 12;
    return cfg;
}

// vocabulary with a few caption words and augmented labels
Vocabulary demo_vocab() {
    Vocabulary v;
    for (const char* w : {"curry", "green", "26'", "3pt", "jump", "shot", "rebound", "miss"})
        v.add_token(w, false);
    v.add_token("3-pt Jump-Shot Missed", true);
    v.add_token("Defensive Rebound", true);
    v.add_token("stephen curry", true);
    v.add_token("draymond green", true);
    return v;
}

std::map<std::string, std::vector<int>> demo_heads(const Vocabulary& v) {
    std::map<std::string, std::vector<int>> heads;
    std::vector<int> words;
    for (int id = 4; id < static_cast<int>(v.size()); ++id) {
        if (!v.is_augmented(id)) words.push_back(id);
    }
    heads["caption"] = words;
    heads["action"] = {v.id_of("3-pt Jump-Shot Missed"), v.id_of("Defensive Rebound")};
    heads["identity"] = {v.id_of("stephen curry"), v.id_of("draymond green")};
    return heads;
}

Tensor random_image(Rng& rng, std::size_t side) {
    Tensor img({side, side, 3});
    for (double& v : img.data()) v = rng.uniform();
    return img;
}

ClipInputs demo_clip(Rng& rng, const ModelConfig& cfg, std::size_t coarse_n = 4,
                     std::size_t fine_n = 3) {
    ClipInputs in;
    in.source_fps = 4;
    in.total_frames = 8;
    for (std::size_t i = 0; i < coarse_n; ++i)
        in.coarse_frames.push_back(random_image(rng, cfg.image_size));
    for (std::size_t i = 0; i < fine_n; ++i) {
        FineFrameInputs f;
        f.frame_index = i * 3;
        f.ball_crop = random_image(rng, cfg.image_size);
        if (i % 2 == 0) f.basket_crop = random_image(rng, cfg.image_size);
        f.player_ball_crops.push_back(random_image(rng, cfg.image_size));
        f.position_aware = random_image(rng, cfg.image_size);
        in.fine_frames.push_back(std::move(f));
    }
    return in;
}

}  // namespace

TEST_CASE("encoder shape contracts and truncation") {
    Rng rng(1);
    ModelConfig cfg = tiny_config();
    CrossModel model(cfg, demo_vocab(), demo_heads(demo_vocab()), rng);

    SECTION("length-1 track stays length-1 with dim d") {
        Tensor one = Tensor::randn({1, cfg.dim}, rng);
        Tensor out = model.encode_coarse(one);
        CHECK(out.shape() == Shape{1, cfg.dim});
    }

    SECTION("over-length input truncates with a counted warning") {
        Tensor big = Tensor::randn({cfg.max_frames + 5, cfg.dim}, rng);
        std::size_t before = model.truncation_warnings();
        Tensor out = model.encode_coarse(big);
        CHECK(out.shape() == Shape{cfg.max_frames, cfg.dim});
        CHECK(model.truncation_warnings() == before + 1);
    }

    SECTION("fine encoder expects doubled width") {
        Tensor wrong = Tensor::randn({3, cfg.dim}, rng);
        CHECK_THROWS_AS(model.encode_fine(wrong), std::invalid_argument);
        Tensor right = Tensor::randn({3, 2 * cfg.dim}, rng);
        CHECK(model.encode_fine(right).shape() == Shape{3, cfg.dim});
    }
}

TEST_CASE("cross_encode degenerate and shape cases") {
    Rng rng(2);
    ModelConfig cfg = tiny_config();
    CrossModel model(cfg, demo_vocab(), demo_heads(demo_vocab()), rng);

    Tensor v_c = Tensor::randn({4, cfg.dim}, rng);
    Tensor v_f = Tensor::randn({3, cfg.dim}, rng);

    SECTION("memory length is n + m and segments are tagged") {
        EncodedMemory mem = model.cross_encode(v_c, v_f);
        CHECK(mem.length() == 7);
        CHECK(std::count(mem.segment.begin(), mem.segment.end(), 0) == 4);
        CHECK(std::count(mem.segment.begin(), mem.segment.end(), 1) == 3);
    }

    SECTION("no coarse rows: memory equals the cross transformer over V_f alone") {
        EncodedMemory mem = model.cross_encode(std::nullopt, v_f);
        CHECK(mem.length() == 3);
        EncodedMemory manual = model.cross_encode(std::optional<Tensor>(), v_f);
        for (std::size_t i = 0; i < mem.m.numel(); ++i)
            CHECK(mem.m.data()[i] == manual.m.data()[i]);
    }

    SECTION("no rows at all is an error") {
        CHECK_THROWS_AS(model.cross_encode(std::nullopt, std::nullopt),
                        std::invalid_argument);
    }
}

TEST_CASE("decode_train analytic and error cases") {
    Rng rng(3);
    ModelConfig cfg = tiny_config();
    Vocabulary vocab = demo_vocab();
    CrossModel model(cfg, vocab, demo_heads(vocab), rng);
    Tensor v_c = Tensor::randn({4, cfg.dim}, rng);
    EncodedMemory mem = model.cross_encode(v_c, std::nullopt);

    SECTION("uniform head gives T * ln(V_local)") {
        // zero the caption head so logits are uniform over its local space
        ParamList params = model.named_parameters();
        for (auto& [name, t] : params) {
            if (name.rfind("head.caption", 0) == 0) {
                std::fill(t.data().begin(), t.data().end(), 0.0);
            }
        }
        std::vector<int> target{Vocabulary::kBos, vocab.id_of("curry"), vocab.id_of("jump"),
                                vocab.id_of("shot"), Vocabulary::kEos};
        Tensor loss = model.decode_train(mem, target, "caption");
        std::size_t v_local = model.head("caption").local_to_global.size();
        CHECK(loss.value() ==
              Catch::Approx(4.0 * std::log(static_cast<double>(v_local))).margin(1e-9));
    }

    SECTION("PAD positions are excluded from the loss") {
        ParamList params = model.named_parameters();
        for (auto& [name, t] : params) {
            if (name.rfind("head.caption", 0) == 0)
                std::fill(t.data().begin(), t.data().end(), 0.0);
        }
        std::vector<int> padded{Vocabulary::kBos, vocab.id_of("curry"), Vocabulary::kEos,
                                Vocabulary::kPad, Vocabulary::kPad};
        Tensor loss = model.decode_train(mem, padded, "caption");
        std::size_t v_local = model.head("caption").local_to_global.size();
        CHECK(loss.value() ==
              Catch::Approx(2.0 * std::log(static_cast<double>(v_local))).margin(1e-9));
    }

    SECTION("shuffling target tokens changes the loss") {
        std::vector<int> target{Vocabulary::kBos, vocab.id_of("curry"), vocab.id_of("jump"),
                                vocab.id_of("shot"), Vocabulary::kEos};
        std::vector<int> shuffled{Vocabulary::kBos, vocab.id_of("shot"), vocab.id_of("curry"),
                                  vocab.id_of("jump"), Vocabulary::kEos};
        double a = model.decode_train(mem, target, "caption").value();
        double b = model.decode_train(mem, shuffled, "caption").value();
        CHECK(std::abs(a - b) > 1e-9);
    }

    SECTION("unknown tokens substitute UNK and count") {
        // action-head target containing a caption word: not in head space
        std::vector<int> target{Vocabulary::kBos, vocab.id_of("curry"), Vocabulary::kEos};
        std::size_t before = model.unk_substitutions();
        model.decode_train(mem, target, "action");
        CHECK(model.unk_substitutions() == before + 1);
    }

    SECTION("malformed targets are rejected") {
        CHECK_THROWS_AS(model.decode_train(mem, {Vocabulary::kEos}, "caption"),
                        std::invalid_argument);
        CHECK_THROWS_AS(
            model.decode_train(mem, {Vocabulary::kBos, vocab.id_of("curry")}, "caption"),
            std::invalid_argument);
        std::vector<int> too_long{Vocabulary::kBos};
        for (std::size_t i = 0; i < cfg.max_output_len + 2; ++i)
            too_long.push_back(vocab.id_of("jump"));
        too_long.push_back(Vocabulary::kEos);
        CHECK_THROWS_AS(model.decode_train(mem, too_long, "caption"), std::invalid_argument);
    }

    SECTION("unknown task tag") {
        CHECK_THROWS_AS(model.decode_train(mem, {Vocabulary::kBos, Vocabulary::kEos}, "nope"),
                        std::invalid_argument);
    }
}

TEST_CASE("gradients flow through the composed encoder-decoder") {
    Rng rng(4);
    ModelConfig cfg = tiny_config();
    cfg.dim = 8;
    cfg.heads = 2;
    cfg.ff_dim = 16;
    Vocabulary vocab = demo_vocab();
    CrossModel model(cfg, vocab, demo_heads(vocab), rng);

    Tensor f_c = Tensor::randn({3, cfg.dim}, rng);
    Tensor f_f = Tensor::randn({2, 2 * cfg.dim}, rng);
    std::vector<int> target{Vocabulary::kBos, vocab.id_of("curry"), vocab.id_of("shot"),
                            Vocabulary::kEos};

    auto forward = [&]() {
        EncodedMemory mem = model.cross_encode(model.encode_coarse(f_c), model.encode_fine(f_f));
        return model.decode_train(mem, target, "caption");
    };
    backward(forward());

    // check a representative subset of parameters end to end
    ParamList all = model.named_parameters();
    std::vector<Tensor> checked;
    for (auto& [name, t] : all) {
        if (name.rfind("coarse_backbone", 0) == 0 || name.rfind("crop_encoder", 0) == 0)
            continue;  // not part of this graph
        if (name.find("cross_enc") != std::string::npos ||
            name.find("decoder.layers.0.self_attn.wq") != std::string::npos ||
            name.find("fine_proj") != std::string::npos || name == "tok_embed" ||
            name.find("head.caption") != std::string::npos) {
            checked.push_back(t);
        }
    }
    REQUIRE(checked.size() > 4);
    auto loss_fn = [&]() { return forward().value(); };
    auto res = nsva::testing::finite_diff_check(checked, loss_fn);
    CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("beam search core on hand-built tables") {
    // hand-built 3-step model: P(token | step) independent of prefix except a
    // designed trap where greedy's first choice leads to poor continuations
    const int eos = 99;
    const std::size_t v = 4;
    auto table = [&](const std::vector<int>& prefix) {
        std::vector<std::pair<int, double>> out;
        if (prefix.size() >= 3) {
            out.emplace_back(eos, 0.0);  // forced EOS after 3 tokens
            return out;
        }
        std::vector<double> probs;
        if (prefix.empty()) {
            probs = {0.40, 0.35, 0.15, 0.10};
        } else if (prefix[0] == 0) {
            probs = {0.25, 0.25, 0.25, 0.25};  // greedy's branch flattens out
        } else {
            probs = {0.70, 0.10, 0.10, 0.10};  // runner-up branch stays peaked
        }
        for (std::size_t i = 0; i < v; ++i)
            out.emplace_back(static_cast<int>(i), std::log(probs[i]));
        return out;
    };

    SECTION("beam-5 equals the exhaustive argmax over all V^3 sequences") {
        BeamHypothesis best = beam_search_core(table, {5, 8, eos});
        // exhaustive enumeration
        std::vector<int> argmax;
        double best_lp = -1e300;
        for (std::size_t a = 0; a < v; ++a)
            for (std::size_t b = 0; b < v; ++b)
                for (std::size_t c = 0; c < v; ++c) {
                    std::vector<int> seq{static_cast<int>(a), static_cast<int>(b),
                                         static_cast<int>(c)};
                    double lp = 0;
                    std::vector<int> prefix;
                    for (int tok : seq) {
                        for (const auto& [t, l] : table(prefix))
                            if (t == tok) lp += l;
                        prefix.push_back(tok);
                    }
                    if (lp > best_lp) {
                        best_lp = lp;
                        argmax = seq;
                    }
                }
        argmax.push_back(eos);
        CHECK(best.tokens == argmax);
        CHECK(best.logprob == Catch::Approx(best_lp).margin(1e-12));
        // and the designed trap is real: greedy picks the flat branch
        BeamHypothesis greedy = beam_search_core(table, {1, 8, eos});
        CHECK(greedy.tokens[0] == 0);
        CHECK(best.tokens[0] == 1);
    }

    SECTION("width 1 is greedy token for token") {
        BeamHypothesis greedy = beam_search_core(table, {1, 8, eos});
        // manual stepwise argmax
        std::vector<int> manual;
        std::vector<int> prefix;
        for (int step = 0; step < 4; ++step) {
            auto opts = table(prefix);
            auto best = std::max_element(opts.begin(), opts.end(),
                                         [](const auto& a, const auto& b) {
                                             if (a.second != b.second)
                                                 return a.second < b.second;
                                             return a.first > b.first;
                                         });
            manual.push_back(best->first);
            if (best->first == eos) break;
            prefix.push_back(best->first);
        }
        CHECK(greedy.tokens == manual);
    }
}

TEST_CASE("beam search properties over 100 random fixed-horizon toy models") {
    // random per-prefix distributions, EOS forced at the horizon
    const int eos = 999;
    auto make_model = [&](std::uint64_t seed, std::size_t v, int horizon) {
        return [seed, v, horizon, eos](const std::vector<int>& prefix) {
            std::vector<std::pair<int, double>> out;
            if (static_cast<int>(prefix.size()) >= horizon) {
                out.emplace_back(eos, 0.0);
                return out;
            }
            std::uint64_t h = seed * 0x9e3779b97f4a7c15ull + 0x1234;
            for (int t : prefix) h = (h ^ static_cast<std::uint64_t>(t + 17)) * 0x100000001b3ull;
            Rng rng(h);
            std::vector<double> logits(v);
            for (double& x : logits) x = rng.normal() * 2.0;
            double mx = logits[0];
            for (double x : logits) mx = std::max(mx, x);
            double s = 0;
            for (double x : logits) s += std::exp(x - mx);
            double lse = mx + std::log(s);
            for (std::size_t i = 0; i < v; ++i)
                out.emplace_back(static_cast<int>(i), logits[i] - lse);
            return out;
        };
    };

    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        auto fn = make_model(seed, 5, 4);
        BeamHypothesis g = beam_search_core(fn, {1, 8, eos});
        BeamHypothesis b2 = beam_search_core(fn, {2, 8, eos});
        BeamHypothesis b5 = beam_search_core(fn, {5, 8, eos});
        INFO("seed " << seed);
        CHECK(b5.logprob >= g.logprob - 1e-9);
        CHECK(b2.logprob >= g.logprob - 1e-9);
        CHECK(b5.logprob >= b2.logprob - 1e-9);
    }
}

TEST_CASE("model beam search decodes and terminates") {
    Rng rng(5);
    ModelConfig cfg = tiny_config();
    Vocabulary vocab = demo_vocab();
    CrossModel model(cfg, vocab, demo_heads(vocab), rng);
    Tensor v_c = Tensor::randn({4, cfg.dim}, rng);
    EncodedMemory mem = model.cross_encode(v_c, std::nullopt);

    BeamHypothesis hyp = model.beam_search(mem, "caption", 5);
    CHECK(hyp.tokens.size() <= cfg.max_output_len);
    CHECK(hyp.token_logprobs.size() == hyp.tokens.size());
    if (hyp.finished) CHECK(hyp.tokens.back() == Vocabulary::kEos);
    // logprobs accumulate
    double sum = 0;
    for (double lp : hyp.token_logprobs) sum += lp;
    CHECK(hyp.logprob == Catch::Approx(sum).margin(1e-9));

    SECTION("width 1 equals stepwise greedy via the public distribution") {
        BeamHypothesis greedy = model.beam_search(mem, "caption", 1);
        std::vector<int> manual;
        std::vector<int> prefix;
        const TaskHead& head = model.head("caption");
        for (std::size_t step = 0; step < cfg.max_output_len; ++step) {
            std::vector<double> lp = model.next_token_logprobs(prefix, mem, "caption");
            std::size_t best = 0;
            for (std::size_t i = 1; i < lp.size(); ++i) {
                int gi = head.local_to_global[i], gb = head.local_to_global[best];
                if (lp[i] > lp[best] || (lp[i] == lp[best] && gi < gb)) best = i;
            }
            int tok = head.local_to_global[best];
            manual.push_back(tok);
            if (tok == Vocabulary::kEos) break;
            prefix.push_back(tok);
        }
        CHECK(greedy.tokens == manual);
    }
}

TEST_CASE("full pipeline encode_clip and run_task on an untrained model") {
    Rng rng(6);
    ModelConfig cfg = tiny_config();
    Vocabulary vocab = demo_vocab();
    CrossModel model(cfg, vocab, demo_heads(vocab), rng);
    ClipInputs in = demo_clip(rng, cfg);

    EncodedMemory mem = model.encode_clip(in);
    // coarse rows = 4 frames; fine rows = ceil(8/4) = 2 seconds
    CHECK(mem.length() == 6);

    BeamHypothesis caption = model.run_task(in, "caption", 2);
    CHECK(caption.tokens.size() <= cfg.max_output_len);
    BeamHypothesis action = model.run_task(in, "action", 2);
    for (int id : action.tokens) {
        if (id != Vocabulary::kEos) CHECK(model.vocab().is_augmented(id));
    }

    SECTION("toggles drop segments") {
        ClipInputs coarse_only = in;
        coarse_only.toggles = StreamToggles{true, false, false, false, false};
        CHECK(model.encode_clip(coarse_only).length() == 4);

        ClipInputs fine_only = in;
        fine_only.toggles = StreamToggles{false, true, true, true, true};
        CHECK(model.encode_clip(fine_only).length() == 2);

        ClipInputs none = in;
        none.toggles = StreamToggles{false, false, false, false, false};
        CHECK_THROWS_AS(model.encode_clip(none), std::invalid_argument);
    }

    SECTION("toggle labels mirror the ablation row names") {
        CHECK(StreamToggles{}.label() == "T+BAL+BAS+PB+PA");
        CHECK((StreamToggles{true, false, false, false, false}).label() == "T");
        CHECK((StreamToggles{true, false, false, false, true}).label() == "T+PA");
    }
}

TEST_CASE("mini overfit: decoder learns four sequences and greedy reproduces them") {
    Rng rng(7);
    ModelConfig cfg = tiny_config();
    Vocabulary vocab = demo_vocab();
    CrossModel model(cfg, vocab, demo_heads(vocab), rng);

    // four fixed random memories standing in for encoded clips
    std::vector<Tensor> memories;
    std::vector<std::vector<int>> targets;
    std::vector<std::vector<std::string>> sentences{
        {"curry", "26'", "3pt", "jump", "shot"},
        {"green", "rebound"},
        {"miss", "jump", "shot"},
        {"curry", "shot", "rebound", "green"},
    };
    for (const auto& s : sentences) {
        memories.push_back(Tensor::randn({3, cfg.dim}, rng));
        std::vector<int> t{Vocabulary::kBos};
        for (const auto& w : s) t.push_back(vocab.id_of(w));
        t.push_back(Vocabulary::kEos);
        targets.push_back(t);
    }

    ParamList params = model.named_parameters();
    AdamState opt(parameter_tensors(params));
    LrSchedule sched = LrSchedule::with_warmup_fraction(400, 3e-3);
    double loss_val = 1e30;
    for (std::size_t step = 0; step < 400 && loss_val > 0.01; ++step) {
        opt.zero_grad();
        Tensor total = Tensor::scalar(0.0);
        for (std::size_t i = 0; i < memories.size(); ++i) {
            EncodedMemory mem;
            mem.m = memories[i];
            mem.valid.assign(3, true);
            mem.segment.assign(3, 0);
            total = add(total, model.decode_train(mem, targets[i], "caption"));
        }
        Tensor loss = scale(total, 1.0 / static_cast<double>(memories.size()));
        backward(loss);
        opt.step(sched, step);
        loss_val = loss.value();
    }
    CHECK(loss_val < 0.05);

    // teacher-forcing consistency: greedy decode reproduces every target
    for (std::size_t i = 0; i < memories.size(); ++i) {
        EncodedMemory mem;
        mem.m = memories[i];
        mem.valid.assign(3, true);
        mem.segment.assign(3, 0);
        BeamHypothesis hyp = model.beam_search(mem, "caption", 1);
        std::vector<int> expect(targets[i].begin() + 1, targets[i].end());
        CHECK(hyp.tokens == expect);
    }
}

TEST_CASE("checkpoint round-trip restores behaviour exactly") {
    Rng rng_a(8), rng_b(908);
    ModelConfig cfg = tiny_config();
    Vocabulary vocab = demo_vocab();
    CrossModel a(cfg, vocab, demo_heads(vocab), rng_a);
    CrossModel b(cfg, vocab, demo_heads(vocab), rng_b);  // different init

    auto path = std::filesystem::temp_directory_path() / "nsva_model_ckpt.bin";
    a.save_checkpoint(path.string());
    b.load_checkpoint(path.string());

    Rng data_rng(9);
    Tensor v_c = Tensor::randn({4, cfg.dim}, data_rng);
    EncodedMemory ma = a.cross_encode(v_c, std::nullopt);
    EncodedMemory mb = b.cross_encode(v_c, std::nullopt);
    REQUIRE(ma.m.numel() == mb.m.numel());
    for (std::size_t i = 0; i < ma.m.numel(); ++i)
        CHECK(ma.m.data()[i] == mb.m.data()[i]);
    std::filesystem::remove(path);
}

TEST_CASE("parameter count is a pure function of the config") {
    Rng rng(10);
    ModelConfig cfg = tiny_config();
    Vocabulary vocab = demo_vocab();
    auto heads = demo_heads(vocab);
    CrossModel model(cfg, vocab, heads, rng);

    // independent arithmetic
    std::size_t d = cfg.dim, ff = cfg.ff_dim;
    std::size_t pd = 3 * cfg.patch * cfg.patch;
    std::size_t f_patches = (cfg.image_size / cfg.patch) * (cfg.image_size / cfg.patch);
    auto linear = [](std::size_t i, std::size_t o) { return i * o + o; };
    std::size_t ln = 2 * d;
    std::size_t mha = 4 * linear(d, d);
    std::size_t ffn = linear(d, ff) + linear(ff, d);
    std::size_t enc_layer = 2 * ln + mha + ffn;
    std::size_t dec_layer = 3 * ln + 2 * mha + ffn;
    std::size_t tsf_block = 3 * ln + 2 * mha + ffn;

    std::size_t tsf = linear(pd, d) + f_patches * d + cfg.max_frames * d +
                      cfg.tsf_layers * tsf_block + ln;
    std::size_t vit = linear(pd, d) + d + (f_patches + 1) * d +
                      cfg.vit_layers * enc_layer + ln;
    std::size_t encoders = 2 * (cfg.feature_layers * enc_layer + ln) +
                           (cfg.cross_layers * enc_layer + ln);
    std::size_t decoder = cfg.decoder_layers * dec_layer + ln;
    std::size_t embeds = vocab.size() * d + (cfg.max_output_len + 2) * d;
    std::size_t head_params = 0;
    for (const auto& [tag, space] : heads) head_params += linear(d, space.size() + 2);
    std::size_t expected = tsf + vit + linear(2 * d, d) + encoders + decoder + embeds +
                           head_params;
    CHECK(model.parameter_count() == expected);
}
