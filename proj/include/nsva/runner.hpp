#pragma once

// End-to-end drivers: corpus loading, clip preparation, curation, training,
// evaluation and the ablation runner. Every artifact lands in a run directory
// with a manifest recording config hash and seed.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "nsva/checkpoint.hpp"
#include "nsva/config.hpp"
#include "nsva/curation.hpp"
#include "nsva/features.hpp"
#include "nsva/metrics.hpp"
#include "nsva/model.hpp"
#include "nsva/optim.hpp"
#include "nsva/records.hpp"
#include "nsva/synth.hpp"

namespace nsva {

namespace fs = std::filesystem;

struct RunConfig {
    ModelConfig model;
    StreamToggles toggles;
    SamplerParams sampler;
    std::uint64_t seed = 1;
    std::string task = "caption";
    std::size_t epochs = 300;
    std::size_t batch_size = 8;
    double base_lr = 3e-3;
    double warmup_fraction = 0.1;
    double early_stop_loss = 0.02;  // 0 disables early stopping
    bool train_backbones = true;
    std::size_t beam_width = 5;
    std::size_t eval_every = 0;  // epochs between val-loss probes; 0 = final only

    void validate() const {
        if (!toggles.any()) {
            throw std::invalid_argument("RunConfig: at least one feature stream must be enabled");
        }
        if (batch_size == 0 || epochs == 0) {
            throw std::invalid_argument("RunConfig: epochs and batch size must be positive");
        }
    }

    nlohmann::json to_json() const {
        return {{"model",
                 {{"dim", model.dim},
                  {"heads", model.heads},
                  {"ff_dim", model.ff_dim},
                  {"feature_layers", model.feature_layers},
                  {"cross_layers", model.cross_layers},
                  {"decoder_layers", model.decoder_layers},
                  {"vit_layers", model.vit_layers},
                  {"tsf_layers", model.tsf_layers},
                  {"image_size", model.image_size},
                  {"patch", model.patch},
                  {"max_frames", model.max_frames},
                  {"max_output_len", model.max_output_len},
                  {"dropout", model.dropout}}},
                {"toggles",
                 {{"coarse", toggles.coarse},
                  {"ball", toggles.ball},
                  {"basket", toggles.basket},
                  {"player_ball", toggles.player_ball},
                  {"position_aware", toggles.position_aware}}},
                {"sampler",
                 {{"base_fps", sampler.base_fps},
                  {"high_fps", sampler.high_fps},
                  {"low_fps", sampler.low_fps},
                  {"window", sampler.window}}},
                {"seed", seed},
                {"task", task},
                {"epochs", epochs},
                {"batch_size", batch_size},
                {"base_lr", base_lr},
                {"warmup_fraction", warmup_fraction},
                {"early_stop_loss", early_stop_loss},
                {"train_backbones", train_backbones},
                {"beam_width", beam_width},
                {"eval_every", eval_every}};
    }

    static RunConfig from_json(const nlohmann::json& j) {
        RunConfig r;
        const auto& m = j.at("model");
        r.model.dim = m.at("dim");
        r.model.heads = m.at("heads");
        r.model.ff_dim = m.at("ff_dim");
        r.model.feature_layers = m.at("feature_layers");
        r.model.cross_layers = m.at("cross_layers");
        r.model.decoder_layers = m.at("decoder_layers");
        r.model.vit_layers = m.at("vit_layers");
        r.model.tsf_layers = m.at("tsf_layers");
        r.model.image_size = m.at("image_size");
        r.model.patch = m.at("patch");
        r.model.max_frames = m.at("max_frames");
        r.model.max_output_len = m.at("max_output_len");
        r.model.dropout = m.at("dropout");
        const auto& t = j.at("toggles");
        r.toggles = {t.at("coarse"), t.at("ball"), t.at("basket"), t.at("player_ball"),
                     t.at("position_aware")};
        const auto& s = j.at("sampler");
        r.sampler = {s.at("base_fps"), s.at("high_fps"), s.at("low_fps"), s.at("window")};
        r.seed = j.at("seed");
        r.task = j.at("task");
        r.epochs = j.at("epochs");
        r.batch_size = j.at("batch_size");
        r.base_lr = j.at("base_lr");
        r.warmup_fraction = j.at("warmup_fraction");
        r.early_stop_loss = j.at("early_stop_loss");
        r.train_backbones = j.at("train_backbones");
        r.beam_width = j.at("beam_width");
        r.eval_every = j.at("eval_every");
        return r;
    }

    // keys of the documented `key = value` config grammar
    static RunConfig from_config(const KeyValueConfig& cfg) {
        RunConfig r;
        cfg.require_known({"model.dim", "model.heads", "model.ff_dim", "model.feature_layers",
                           "model.cross_layers", "model.decoder_layers", "model.vit_layers",
                           "model.tsf_layers", "model.image_size", "model.patch",
                           "model.max_frames", "model.max_output_len", "model.dropout",
                           "streams", "sampler.base_fps", "sampler.high_fps", "sampler.low_fps",
                           "sampler.window", "seed", "task", "train.epochs", "train.batch_size",
                           "train.base_lr", "train.warmup_fraction", "train.early_stop_loss",
                           "train.backbones", "beam.width", "eval.every"});
        r.model.dim = cfg.get_size("model.dim", r.model.dim);
        r.model.heads = cfg.get_size("model.heads", r.model.heads);
        r.model.ff_dim = cfg.get_size("model.ff_dim", r.model.ff_dim);
        r.model.feature_layers = cfg.get_size("model.feature_layers", r.model.feature_layers);
        r.model.cross_layers = cfg.get_size("model.cross_layers", r.model.cross_layers);
        r.model.decoder_layers = cfg.get_size("model.decoder_layers", r.model.decoder_layers);
        r.model.vit_layers = cfg.get_size("model.vit_layers", r.model.vit_layers);
        r.model.tsf_layers = cfg.get_size("model.tsf_layers", r.model.tsf_layers);
        r.model.image_size = cfg.get_size("model.image_size", r.model.image_size);
        r.model.patch = cfg.get_size("model.patch", r.model.patch);
        r.model.max_frames = cfg.get_size("model.max_frames", r.model.max_frames);
        r.model.max_output_len = cfg.get_size("model.max_output_len", r.model.max_output_len);
        r.model.dropout = cfg.get_double("model.dropout", r.model.dropout);
        if (cfg.has("streams")) r.toggles = parse_toggles(cfg.get_string("streams", ""));
        r.sampler.base_fps = cfg.get_size("sampler.base_fps", r.sampler.base_fps);
        r.sampler.high_fps = cfg.get_size("sampler.high_fps", r.sampler.high_fps);
        r.sampler.low_fps = cfg.get_size("sampler.low_fps", r.sampler.low_fps);
        r.sampler.window = cfg.get_size("sampler.window", r.sampler.window);
        r.seed = cfg.get_u64("seed", r.seed);
        r.task = cfg.get_string("task", r.task);
        r.epochs = cfg.get_size("train.epochs", r.epochs);
        r.batch_size = cfg.get_size("train.batch_size", r.batch_size);
        r.base_lr = cfg.get_double("train.base_lr", r.base_lr);
        r.warmup_fraction = cfg.get_double("train.warmup_fraction", r.warmup_fraction);
        r.early_stop_loss = cfg.get_double("train.early_stop_loss", r.early_stop_loss);
        r.train_backbones = cfg.get_bool("train.backbones", r.train_backbones);
        r.beam_width = cfg.get_size("beam.width", r.beam_width);
        r.eval_every = cfg.get_size("eval.every", r.eval_every);
        return r;
    }

    // "T+BAL+BAS+PB+PA" style stream lists, matching the ablation row labels
    static StreamToggles parse_toggles(const std::string& label) {
        StreamToggles t{false, false, false, false, false};
        std::stringstream ss(label);
        std::string part;
        while (std::getline(ss, part, '+')) {
            if (part == "T") t.coarse = true;
            else if (part == "BAL") t.ball = true;
            else if (part == "BAS") t.basket = true;
            else if (part == "PB") t.player_ball = true;
            else if (part == "PA") t.position_aware = true;
            else throw std::runtime_error("unknown stream '" + part + "' in '" + label + "'");
        }
        return t;
    }
};

// --- corpus on disk ---------------------------------------------------------------

struct LoadedClip {
    std::string clip_id;
    std::vector<Tensor> frames;   // H x W x 3 each
    std::vector<DetectionFrame> track;
    Tensor courtline;             // H x W
    std::size_t source_fps = 24;
};

class Corpus {
public:
    explicit Corpus(const std::string& dir) : dir_(dir) {
        std::ifstream mf(dir_ / "manifest.json");
        if (!mf) throw std::runtime_error("Corpus: no manifest.json under " + dir);
        manifest_ = nlohmann::json::parse(mf);
        source_fps_ = manifest_.at("config").at("source_fps").get<std::size_t>();
        std::ifstream sf(dir_ / "schedule.json");
        if (sf) {
            for (const auto& g : nlohmann::json::parse(sf)) {
                schedule_.push_back({g.at("game_id"), g.at("team_a"), g.at("team_b")});
            }
        }
    }

    const fs::path& dir() const { return dir_; }
    const nlohmann::json& manifest() const { return manifest_; }
    std::size_t source_fps() const { return source_fps_; }
    const std::vector<GameInfo>& schedule() const { return schedule_; }

    std::vector<PlayByPlayRecord> raw_records() const {
        return load_records((dir_ / "records.jsonl").string());
    }

    bool curated() const { return fs::exists(dir_ / "curated" / "curated.jsonl"); }

    std::vector<PlayByPlayRecord> curated_records() const {
        return load_records((dir_ / "curated" / "curated.jsonl").string());
    }

    ActionTaxonomy taxonomy() const {
        return ActionTaxonomy::load((dir_ / "taxonomy.txt").string());
    }

    SplitAssignment splits() const {
        std::ifstream f(dir_ / "curated" / "splits.json");
        if (!f) throw std::runtime_error("Corpus: curated splits missing; run curate first");
        SplitAssignment out;
        nlohmann::json parsed = nlohmann::json::parse(f);
        for (const auto& [game, name] : parsed.items()) {
            Split s = Split::Train;
            if (name == "val") s = Split::Val;
            else if (name == "test") s = Split::Test;
            out.by_game[game] = s;
        }
        return out;
    }

    LoadedClip load_clip(const std::string& clip_id) const {
        LoadedClip clip;
        clip.clip_id = clip_id;
        clip.source_fps = source_fps_;
        fs::path cdir = dir_ / "clips" / clip_id;
        NamedArrays frames = load_arrays((cdir / "frames.bin").string());
        if (frames.empty() || frames[0].second.rank() != 4) {
            throw std::runtime_error("Corpus: malformed frames for clip " + clip_id);
        }
        const Tensor& all = frames[0].second;
        std::size_t n = all.shape()[0], h = all.shape()[1], w = all.shape()[2],
                    c = all.shape()[3];
        std::size_t per = h * w * c;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> data(all.data().begin() + i * per,
                                     all.data().begin() + (i + 1) * per);
            clip.frames.emplace_back(Shape{h, w, c}, std::move(data));
        }
        clip.track = load_track((cdir / "track.jsonl").string());
        NamedArrays mask = load_arrays((cdir / "courtline.bin").string());
        clip.courtline = mask.at(0).second;
        return clip;
    }

private:
    fs::path dir_;
    nlohmann::json manifest_;
    std::size_t source_fps_ = 24;
    std::vector<GameInfo> schedule_;
};

// --- curation driver ----------------------------------------------------------------

struct CurateOptions {
    SplitRatios ratios;
    std::uint64_t seed = 0;
    std::vector<std::string> patterns = default_cumulative_patterns();
};

// merge -> strip out-of-scope -> splits -> vocabulary -> stats, all written
// under <corpus>/curated/.
inline CorpusReport curate_corpus(const std::string& corpus_dir,
                                  const CurateOptions& opts = {}) {
    Corpus corpus(corpus_dir);
    fs::path out = corpus.dir() / "curated";
    fs::create_directories(out);

    std::vector<PlayByPlayRecord> records = corpus.raw_records();
    records = merge_same_clip(records);
    OutOfScopeFilter filter(opts.patterns);
    std::vector<PlayByPlayRecord> kept;
    std::size_t removed = 0;
    for (const PlayByPlayRecord& r : records) {
        auto out_rec = filter.filter(r, &removed);
        if (out_rec) kept.push_back(*out_rec);
    }
    ActionTaxonomy taxonomy = corpus.taxonomy();
    for (const PlayByPlayRecord& r : kept) taxonomy.validate_record(r);

    SplitAssignment splits = assign_splits(corpus.schedule(), opts.ratios, opts.seed);
    Vocabulary vocab = build_vocabulary(kept, &taxonomy);

    save_records((out / "curated.jsonl").string(), kept);
    {
        std::ofstream f(out / "splits.json");
        f << splits.to_json().dump(2) << "\n";
    }
    vocab.save((out / "vocab.txt").string());
    CorpusReport report = corpus_stats(kept, &splits);
    {
        std::ofstream f(out / "stats.json");
        nlohmann::json j = report.to_json();
        j["stripped_fragments"] = removed;
        f << j.dump(2) << "\n";
    }
    {
        std::ofstream f(out / "stats.txt");
        f << report.to_table();
    }
    return report;
}

// --- clip preparation -----------------------------------------------------------------

// Applies the adaptive sampler and turns raw fixtures into model inputs:
// coarse frames at base_fps, fine crops from the storage-retained sample.
inline ClipInputs prepare_clip(const LoadedClip& clip, const ModelConfig& model,
                               const StreamToggles& toggles, const SamplerParams& sampler) {
    ClipInputs in;
    in.toggles = toggles;
    in.source_fps = clip.source_fps;
    in.total_frames = clip.frames.size();

    DetectionTimeline timeline = timeline_from_track(clip.track, clip.frames.size(),
                                                     clip.source_fps);
    AdaptiveSample sample = adaptive_sample(timeline, sampler);

    std::map<std::size_t, const DetectionFrame*> by_index;
    for (const DetectionFrame& f : clip.track) by_index[f.frame_index] = &f;

    for (std::size_t idx : sample.coarse) {
        if (idx >= clip.frames.size()) continue;
        const Tensor& frame = clip.frames[idx];
        in.coarse_frames.push_back(frame.shape()[0] == model.image_size
                                       ? frame
                                       : resize_nearest(frame, model.image_size));
        if (in.coarse_frames.size() >= model.max_frames) break;
    }

    for (std::size_t idx : sample.retained) {
        if (idx >= clip.frames.size()) continue;
        auto it = by_index.find(idx);
        if (it == by_index.end()) continue;
        const DetectionFrame& det = *it->second;
        const Tensor& frame = clip.frames[idx];
        FineFrameInputs fine;
        fine.frame_index = idx;
        auto crop_resized = [&](const BoundingBox& box) -> std::optional<Tensor> {
            Tensor crop = crop_image(frame, box);
            if (crop.numel() == 0) return std::nullopt;
            return resize_nearest(crop, model.image_size);
        };
        if (auto ball = det.ball()) fine.ball_crop = crop_resized(ball->box);
        if (auto basket = det.basket()) fine.basket_crop = crop_resized(basket->box);
        std::vector<BoundingBox> pb_boxes;
        for (const Detection& d : filter_players_with_ball(det)) {
            pb_boxes.push_back(d.box);
            if (auto crop = crop_resized(d.box)) fine.player_ball_crops.push_back(*crop);
        }
        std::optional<BoundingBox> basket_box;
        if (auto basket = det.basket()) basket_box = basket->box;
        Tensor pa = compose_position_aware(frame, clip.courtline, pb_boxes, basket_box);
        fine.position_aware = pa.shape()[0] == model.image_size
                                  ? pa
                                  : resize_nearest(pa, model.image_size);
        in.fine_frames.push_back(std::move(fine));
    }
    return in;
}

// --- training ----------------------------------------------------------------------------

struct PreparedSample {
    std::string clip_id;
    std::string game_id;
    ClipInputs inputs;
    std::vector<int> target;                // BOS ... EOS
    std::vector<std::string> target_units;  // tokens before encoding
    std::optional<double> distance_ft;
    std::string caption;
};

inline std::vector<std::string> target_units_for(const PlayByPlayRecord& r,
                                                 const std::string& task) {
    if (task == "caption") return tokenize(r.caption).tokens;
    if (task == "action") return r.action_event;
    if (task == "identity") return r.players;
    throw std::invalid_argument("unknown task '" + task + "'");
}

inline std::vector<int> encode_target(const Vocabulary& vocab,
                                      const std::vector<std::string>& units,
                                      std::size_t max_len) {
    std::vector<int> ids{Vocabulary::kBos};
    std::size_t unk = 0;
    for (int id : vocab.encode(units, &unk)) {
        if (ids.size() >= max_len + 1) break;  // leave room for EOS
        ids.push_back(id);
    }
    ids.push_back(Vocabulary::kEos);
    return ids;
}

inline std::map<std::string, std::vector<int>> head_spaces_from(
    const Vocabulary& vocab, const std::vector<PlayByPlayRecord>& records,
    const ActionTaxonomy& taxonomy) {
    std::map<std::string, std::vector<int>> spaces;
    std::set<int> words, actions, names;
    for (int id = Vocabulary::kUnk + 1; id < static_cast<int>(vocab.size()); ++id) {
        if (!vocab.is_augmented(id)) words.insert(id);
    }
    for (const std::string& label : taxonomy.all_labels()) {
        int id = vocab.id_of(label);
        if (id >= 0) actions.insert(id);
    }
    for (const PlayByPlayRecord& r : records) {
        for (const std::string& p : r.players) {
            int id = vocab.id_of(p);
            if (id >= 0) names.insert(id);
        }
    }
    spaces["caption"] = std::vector<int>(words.begin(), words.end());
    spaces["action"] = std::vector<int>(actions.begin(), actions.end());
    spaces["identity"] = std::vector<int>(names.begin(), names.end());
    return spaces;
}

struct TrainResult {
    fs::path run_dir;
    std::vector<double> train_losses;  // per epoch
    std::vector<double> val_losses;    // per probe (last entry = final)
    double final_train_loss = 0.0;
    double final_val_loss = 0.0;
    std::size_t epochs_run = 0;
};

// Full training driver. Writes checkpoint.bin, vocab.txt, heads.json,
// config.json, log.jsonl and manifest.json into out_dir.
inline TrainResult train(const RunConfig& run, const std::string& corpus_dir,
                         const std::string& out_dir) {
    run.validate();
    Corpus corpus(corpus_dir);
    if (!corpus.curated()) curate_corpus(corpus_dir);

    std::vector<PlayByPlayRecord> records = corpus.curated_records();
    ActionTaxonomy taxonomy = corpus.taxonomy();
    SplitAssignment splits = corpus.splits();
    Vocabulary vocab = Vocabulary::load((corpus.dir() / "curated" / "vocab.txt").string());
    auto spaces = head_spaces_from(vocab, records, taxonomy);

    Rng rng(run.seed);
    CrossModel model(run.model, vocab, spaces, rng);

    // prepare samples
    std::vector<PreparedSample> train_set, val_set;
    for (const PlayByPlayRecord& r : records) {
        PreparedSample s;
        s.clip_id = r.clip_id;
        s.game_id = r.game_id;
        LoadedClip clip = corpus.load_clip(r.clip_id);
        s.inputs = prepare_clip(clip, run.model, run.toggles, run.sampler);
        s.target_units = target_units_for(r, run.task);
        s.target = encode_target(vocab, s.target_units, run.model.max_output_len);
        s.distance_ft = r.distance_ft;
        s.caption = r.caption;
        Split sp = splits.of(r.game_id);
        if (sp == Split::Train) train_set.push_back(std::move(s));
        else if (sp == Split::Val) val_set.push_back(std::move(s));
    }
    if (train_set.empty()) throw std::runtime_error("train: no training clips");

    // optimizer over trainable parameters
    ParamList all_params = model.named_parameters();
    std::vector<Tensor> trainable;
    for (auto& [name, t] : all_params) {
        bool backbone = name.rfind("coarse_backbone", 0) == 0 ||
                        name.rfind("crop_encoder", 0) == 0;
        if (backbone && !run.train_backbones) {
            t.set_requires_grad(false);
            continue;
        }
        trainable.push_back(t);
    }
    AdamState opt(trainable);

    // frozen backbones: extract features once per clip
    std::map<std::string, CrossModel::ClipFeatures> feature_cache;
    if (!run.train_backbones) {
        NoGradGuard ng;
        for (const PreparedSample& s : train_set)
            feature_cache[s.clip_id] = model.backbone_features(s.inputs).detach();
        for (const PreparedSample& s : val_set)
            feature_cache[s.clip_id] = model.backbone_features(s.inputs).detach();
    }

    auto memory_for = [&](const PreparedSample& s, Rng* train_rng) {
        if (!run.train_backbones) {
            return model.encode_features(feature_cache.at(s.clip_id), train_rng);
        }
        return model.encode_clip(s.inputs, train_rng);
    };

    auto split_loss = [&](const std::vector<PreparedSample>& set) {
        NoGradGuard ng;
        double total = 0.0;
        for (const PreparedSample& s : set) {
            total += model.decode_train(memory_for(s, nullptr), s.target, run.task).value();
        }
        return set.empty() ? 0.0 : total / static_cast<double>(set.size());
    };

    fs::create_directories(out_dir);
    std::ofstream log(fs::path(out_dir) / "log.jsonl");
    std::size_t steps_per_epoch = (train_set.size() + run.batch_size - 1) / run.batch_size;
    LrSchedule schedule = LrSchedule::with_warmup_fraction(run.epochs * steps_per_epoch,
                                                           run.base_lr, run.warmup_fraction);

    TrainResult result;
    result.run_dir = out_dir;
    Rng shuffle_rng(run.seed ^ 0xABCDEF);
    Rng* dropout_rng = run.model.dropout > 0.0 ? &shuffle_rng : nullptr;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < run.epochs; ++epoch) {
        std::vector<std::size_t> order(train_set.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += run.batch_size) {
            std::size_t b1 = std::min(order.size(), b0 + run.batch_size);
            opt.zero_grad();
            Tensor total = Tensor::scalar(0.0);
            for (std::size_t i = b0; i < b1; ++i) {
                const PreparedSample& s = train_set[order[i]];
                total = add(total,
                            model.decode_train(memory_for(s, dropout_rng), s.target, run.task));
            }
            Tensor loss = scale(total, 1.0 / static_cast<double>(b1 - b0));
            double lv = loss.value();
            if (!(lv == lv)) {  // NaN: dump the offending batch and abort
                nlohmann::json dump{{"epoch", epoch}, {"batch_start", b0}};
                for (std::size_t i = b0; i < b1; ++i)
                    dump["clips"].push_back(train_set[order[i]].clip_id);
                std::ofstream df(fs::path(out_dir) / "nan_dump.json");
                df << dump.dump(2) << "\n";
                throw std::runtime_error("train: NaN loss; diagnostic dump written to " +
                                         (fs::path(out_dir) / "nan_dump.json").string());
            }
            backward(loss);
            opt.step(schedule, step++);
            epoch_loss += lv * static_cast<double>(b1 - b0);
        }
        epoch_loss /= static_cast<double>(train_set.size());
        result.train_losses.push_back(epoch_loss);
        result.epochs_run = epoch + 1;

        nlohmann::json line{{"epoch", epoch}, {"train_loss", epoch_loss}};
        if (run.eval_every > 0 && (epoch + 1) % run.eval_every == 0) {
            double vl = split_loss(val_set);
            result.val_losses.push_back(vl);
            line["val_loss"] = vl;
        }
        log << line.dump() << "\n";
        if (run.early_stop_loss > 0.0 && epoch_loss < run.early_stop_loss) break;
    }
    result.final_train_loss = result.train_losses.back();
    result.final_val_loss = split_loss(val_set);
    result.val_losses.push_back(result.final_val_loss);
    log << nlohmann::json{{"final_val_loss", result.final_val_loss}}.dump() << "\n";

    // artifacts
    model.save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string());
    vocab.save((fs::path(out_dir) / "vocab.txt").string());
    {
        nlohmann::json heads;
        for (const auto& [tag, ids] : spaces) heads[tag] = ids;
        std::ofstream f(fs::path(out_dir) / "heads.json");
        f << heads.dump(2) << "\n";
    }
    {
        std::ofstream f(fs::path(out_dir) / "config.json");
        f << run.to_json().dump(2) << "\n";
    }
    {
        nlohmann::json manifest{
            {"kind", "run"},
            {"seed", run.seed},
            {"config_hash", fnv1a_hex(run.to_json().dump())},
            {"corpus_hash", corpus.manifest().at("config_hash")},
            {"epochs_run", result.epochs_run},
            {"final_train_loss", result.final_train_loss},
            {"final_val_loss", result.final_val_loss},
            {"artifacts",
             {"checkpoint.bin", "vocab.txt", "heads.json", "config.json", "log.jsonl"}}};
        std::ofstream f(fs::path(out_dir) / "manifest.json");
        f << manifest.dump(2) << "\n";
    }
    return result;
}

// --- evaluation ----------------------------------------------------------------------------

// Loads a trained run directory back into a model.
struct LoadedRun {
    RunConfig config;
    Vocabulary vocab;
    std::map<std::string, std::vector<int>> spaces;
    std::unique_ptr<CrossModel> model;
};

inline LoadedRun load_run(const std::string& run_dir) {
    LoadedRun lr;
    std::ifstream cf(fs::path(run_dir) / "config.json");
    if (!cf) throw std::runtime_error("load_run: missing config.json in " + run_dir);
    lr.config = RunConfig::from_json(nlohmann::json::parse(cf));
    lr.vocab = Vocabulary::load((fs::path(run_dir) / "vocab.txt").string());
    std::ifstream hf(fs::path(run_dir) / "heads.json");
    if (!hf) throw std::runtime_error("load_run: missing heads.json in " + run_dir);
    nlohmann::json heads = nlohmann::json::parse(hf);
    for (const auto& [tag, ids] : heads.items()) {
        lr.spaces[tag] = ids.get<std::vector<int>>();
    }
    Rng rng(lr.config.seed);
    lr.model = std::make_unique<CrossModel>(lr.config.model, lr.vocab, lr.spaces, rng);
    lr.model->load_checkpoint((fs::path(run_dir) / "checkpoint.bin").string());
    return lr;
}

// Fraction of samples whose reference carries a distance token that the
// prediction reproduces exactly.
inline double distance_token_accuracy(const std::vector<Tokens>& preds,
                                      const std::vector<Tokens>& refs) {
    std::size_t with_distance = 0, correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        std::string ref_distance;
        for (const std::string& t : refs[i]) {
            if (is_distance_token(t)) {
                ref_distance = t;
                break;
            }
        }
        if (ref_distance.empty()) continue;
        ++with_distance;
        for (const std::string& t : preds[i]) {
            if (t == ref_distance) {
                ++correct;
                break;
            }
        }
    }
    return with_distance == 0 ? 0.0
                              : static_cast<double>(correct) / static_cast<double>(with_distance);
}

struct EvalResult {
    nlohmann::json report;
    std::string table;
};

// Decodes every clip of the split with beam search, writes decode JSONL and a
// metric report (JSON + aligned table).
inline EvalResult evaluate(const std::string& run_dir, const std::string& corpus_dir,
                           const std::string& task, const std::string& split_name = "val",
                           std::size_t beam_width_override = 0,
                           const std::string& out_path = "") {
    LoadedRun run = load_run(run_dir);
    if (!run.spaces.count(task)) {
        throw std::invalid_argument("evaluate: run has no head for task '" + task + "'");
    }
    Corpus corpus(corpus_dir);
    if (!corpus.curated()) throw std::runtime_error("evaluate: corpus not curated");
    SplitAssignment splits = corpus.splits();
    Split want = Split::Val;
    if (split_name == "train") want = Split::Train;
    else if (split_name == "test") want = Split::Test;
    else if (split_name != "val") throw std::invalid_argument("evaluate: bad split name");

    std::size_t width = beam_width_override ? beam_width_override : run.config.beam_width;

    std::vector<Tokens> preds, refs;
    nlohmann::json decodes = nlohmann::json::array();
    for (const PlayByPlayRecord& r : corpus.curated_records()) {
        if (splits.of(r.game_id) != want) continue;
        LoadedClip clip = corpus.load_clip(r.clip_id);
        ClipInputs inputs = prepare_clip(clip, run.config.model, run.config.toggles,
                                         run.config.sampler);
        BeamHypothesis hyp = run.model->run_task(inputs, task, width);
        Tokens pred = run.model->tokens_of(hyp);
        Tokens ref = target_units_for(r, task);
        preds.push_back(pred);
        refs.push_back(ref);
        decodes.push_back({{"clip_id", r.clip_id},
                           {"task", task},
                           {"tokens", pred},
                           {"token_logprobs", hyp.token_logprobs},
                           {"score", hyp.logprob}});
    }
    if (preds.empty()) throw std::runtime_error("evaluate: split '" + split_name + "' is empty");

    nlohmann::json metrics;
    if (task == "caption") {
        std::vector<std::vector<Tokens>> ref_sets;
        for (const Tokens& r : refs) ref_sets.push_back({r});
        for (const auto& [name, value] : caption_metrics(preds, ref_sets)) metrics[name] = value;
        metrics["distance_token_acc"] = distance_token_accuracy(preds, refs);
    } else {
        SequenceScores s = sequence_metrics_corpus(preds, refs);
        metrics["SR"] = s.sr;
        metrics["Acc"] = s.acc;
        metrics["mIoU"] = s.iou;
    }

    EvalResult out;
    out.report = {{"kind", "eval_report"},
                  {"task", task},
                  {"split", split_name},
                  {"beam_width", width},
                  {"samples", preds.size()},
                  {"metrics", metrics}};
    std::ostringstream table;
    table << "task " << task << "  split " << split_name << "  samples " << preds.size()
          << "\n";
    for (const auto& [name, value] : metrics.items()) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "  %-18s %.4f", name.c_str(), value.get<double>());
        table << buf << "\n";
    }
    out.table = table.str();

    if (!out_path.empty()) {
        fs::create_directories(out_path);
        {
            std::ofstream f(fs::path(out_path) / "decode.jsonl");
            for (const auto& d : decodes) f << d.dump() << "\n";
        }
        {
            std::ofstream f(fs::path(out_path) / "report.json");
            f << out.report.dump(2) << "\n";
        }
        {
            std::ofstream f(fs::path(out_path) / "report.txt");
            f << out.table;
        }
    }
    return out;
}

// --- ablation runner -------------------------------------------------------------------------

struct AblationRow {
    std::string label;
    double mean_val_loss = 0.0;
    double std_val_loss = 0.0;
    double mean_distance_acc = 0.0;
    std::vector<double> val_losses;
    std::vector<double> distance_accs;
};

struct AblationResult {
    std::vector<AblationRow> rows;
    bool full_dominates_coarse = false;
    nlohmann::json to_json() const {
        nlohmann::json rows_json = nlohmann::json::array();
        for (const AblationRow& r : rows) {
            rows_json.push_back({{"streams", r.label},
                                 {"val_loss_mean", r.mean_val_loss},
                                 {"val_loss_std", r.std_val_loss},
                                 {"distance_acc_mean", r.mean_distance_acc},
                                 {"val_losses", r.val_losses},
                                 {"distance_accs", r.distance_accs}});
        }
        return {{"kind", "ablation_report"},
                {"rows", rows_json},
                {"full_dominates_coarse", full_dominates_coarse}};
    }

    std::string to_table() const {
        std::ostringstream os;
        os << "streams             val_loss (mean+/-std)   distance_acc\n";
        for (const AblationRow& r : rows) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%-18s  %8.4f +/- %6.4f     %6.3f", r.label.c_str(),
                          r.mean_val_loss, r.std_val_loss, r.mean_distance_acc);
            os << buf << "\n";
        }
        return os.str();
    }
};

// Trains and evaluates one run per toggle set per seed; rows render in the
// requested order.
inline AblationResult ablate(const RunConfig& base, const std::string& corpus_dir,
                             const std::vector<std::string>& toggle_labels,
                             const std::vector<std::uint64_t>& seeds,
                             const std::string& out_dir) {
    AblationResult result;
    fs::create_directories(out_dir);
    for (const std::string& label : toggle_labels) {
        AblationRow row;
        row.label = label;
        for (std::uint64_t seed : seeds) {
            RunConfig run = base;
            run.toggles = RunConfig::parse_toggles(label);
            run.seed = seed;
            std::string safe = label;
            for (char& c : safe)
                if (c == '+') c = '_';
            fs::path run_dir = fs::path(out_dir) / (safe + "_seed" + std::to_string(seed));
            TrainResult tr = train(run, corpus_dir, run_dir.string());
            row.val_losses.push_back(tr.final_val_loss);

            EvalResult ev = evaluate(run_dir.string(), corpus_dir, run.task, "val",
                                     run.beam_width, (run_dir / "eval").string());
            double dacc = ev.report["metrics"].contains("distance_token_acc")
                              ? ev.report["metrics"]["distance_token_acc"].get<double>()
                              : 0.0;
            row.distance_accs.push_back(dacc);
        }
        double n = static_cast<double>(row.val_losses.size());
        for (double v : row.val_losses) row.mean_val_loss += v / n;
        for (double v : row.val_losses) {
            row.std_val_loss += (v - row.mean_val_loss) * (v - row.mean_val_loss) / n;
        }
        row.std_val_loss = std::sqrt(row.std_val_loss);
        for (double v : row.distance_accs) row.mean_distance_acc += v / n;
        result.rows.push_back(std::move(row));
    }

    const AblationRow* full = nullptr;
    const AblationRow* coarse = nullptr;
    for (const AblationRow& r : result.rows) {
        if (r.label == "T+BAL+BAS+PB+PA") full = &r;
        if (r.label == "T") coarse = &r;
    }
    if (full && coarse) {
        result.full_dominates_coarse = full->mean_val_loss <= coarse->mean_val_loss;
    }
    {
        std::ofstream f(fs::path(out_dir) / "ablation.json");
        f << result.to_json().dump(2) << "\n";
    }
    {
        std::ofstream f(fs::path(out_dir) / "ablation.txt");
        f << result.to_table();
    }
    return result;
}

}  // namespace nsva
