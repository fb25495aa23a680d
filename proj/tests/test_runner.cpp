#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "nsva/runner.hpp"

using namespace nsva;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SynthConfig small_synth(std::uint64_t seed = 11) {
    SynthConfig cfg;
    cfg.seed = seed;
    cfg.teams = 3;
    cfg.games = 4;
    cfg.events_per_game = 3;
    cfg.clip_seconds = 0.5;
    cfg.source_fps = 16;
    return cfg;
}

RunConfig small_run() {
    RunConfig run;
    run.model.dim = 16;
    run.model.heads = 2;
    run.model.ff_dim = 32;
    run.model.feature_layers = 1;
    run.model.cross_layers = 1;
    run.model.decoder_layers = 1;
    run.model.vit_layers = 1;
    run.model.tsf_layers = 1;
    run.model.max_frames = 10;
    run.epochs = 4;
    run.batch_size = 4;
    run.base_lr = 2e-3;
    run.early_stop_loss = 0.0;
    run.train_backbones = false;
    run.beam_width = 2;
    run.eval_every = 2;
    return run;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return std::vector<char>((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
}

// minimal structural validator for the shipped JSON schema: checks required
// keys, primitive types and enums (the subset the schema uses)
bool validate_against_schema(const nlohmann::json& doc, const nlohmann::json& schema) {
    if (schema.contains("required")) {
        for (const auto& key : schema["required"]) {
            if (!doc.contains(key.get<std::string>())) return false;
        }
    }
    if (schema.contains("properties")) {
        for (const auto& [key, sub] : schema["properties"].items()) {
            if (!doc.contains(key)) continue;
            const auto& v = doc[key];
            std::string type = sub.value("type", "");
            if (type == "string" && !v.is_string()) return false;
            if (type == "integer" && !v.is_number_integer() && !v.is_number_unsigned())
                return false;
            if (type == "number" && !v.is_number()) return false;
            if (type == "object" && !v.is_object()) return false;
            if (sub.contains("enum")) {
                bool hit = false;
                for (const auto& e : sub["enum"]) hit = hit || e == v;
                if (!hit) return false;
            }
            if (sub.contains("minimum") && v.is_number() &&
                v.get<double>() < sub["minimum"].get<double>())
                return false;
            if (type == "object" && sub.contains("additionalProperties")) {
                std::string vt = sub["additionalProperties"].value("type", "");
                if (vt == "number") {
                    for (const auto& [mk, mv] : v.items()) {
                        if (!mv.is_number()) return false;
                    }
                }
            }
        }
    }
    return true;
}

}  // namespace

TEST_CASE("generator determinism: same seed, byte-identical corpora") {
    fs::path a = fresh_dir("nsva_synth_a");
    fs::path b = fresh_dir("nsva_synth_b");
    SynthConfig cfg = small_synth(77);
    generate_corpus(cfg, a.string());
    generate_corpus(cfg, b.string());

    std::size_t compared = 0;
    for (auto& entry : fs::recursive_directory_iterator(a)) {
        if (!entry.is_regular_file()) continue;
        fs::path rel = fs::relative(entry.path(), a);
        INFO(rel.string());
        CHECK(slurp(entry.path()) == slurp(b / rel));
        ++compared;
    }
    CHECK(compared > 10);
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST_CASE("generator construction invariants") {
    fs::path dir = fresh_dir("nsva_synth_c");
    SynthConfig cfg = small_synth(5);
    GeneratedCorpus corpus = generate_corpus(cfg, dir.string());

    SECTION("clip count equals events_per_game x games") {
        CHECK(corpus.clips.size() == cfg.games * cfg.events_per_game);
        // event records >= clips (missed shots add a rebound record)
        CHECK(corpus.event_count >= corpus.clips.size());
    }

    SECTION("records validate against the taxonomy") {
        ActionTaxonomy taxonomy = ActionTaxonomy::load((dir / "taxonomy.txt").string());
        for (const PlayByPlayRecord& r : load_records((dir / "records.jsonl").string())) {
            CHECK_NOTHROW(taxonomy.validate_record(r));
        }
    }

    SECTION("caption is a deterministic function of the event fields") {
        for (const PlayByPlayRecord& r : load_records((dir / "records.jsonl").string())) {
            if (r.action_coarse[0] != "Shot") continue;
            REQUIRE(r.distance_ft.has_value());
            auto toks = tokenize(r.caption).tokens;
            // distance token present and matching the annotation
            std::string want = std::to_string(static_cast<int>(*r.distance_ft)) + "'";
            CHECK(std::find(toks.begin(), toks.end(), want) != toks.end());
            // player present
            CHECK(std::find(toks.begin(), toks.end(), r.players[0]) != toks.end());
            bool missed = r.action_event[0].find("Missed") != std::string::npos;
            CHECK((toks[0] == "miss") == missed);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("render-vs-track consistency: detected ball overlaps the rendered disc") {
    fs::path dir = fresh_dir("nsva_synth_d");
    SynthConfig cfg = small_synth(9);
    cfg.frame_size = 64;  // fine pixel grid so the rendered disc box is sharp
    cfg.detection_jitter = 0.004;
    cfg.games = 1;
    cfg.events_per_game = 2;
    generate_corpus(cfg, dir.string());
    Corpus corpus(dir.string());

    std::size_t checked = 0;
    for (const auto& entry : fs::directory_iterator(dir / "clips")) {
        LoadedClip clip = corpus.load_clip(entry.path().filename().string());
        for (const DetectionFrame& det : clip.track) {
            auto ball = det.ball();
            if (!ball) continue;
            // bounding box of rendered orange pixels
            const Tensor& frame = clip.frames[det.frame_index];
            std::size_t side = frame.shape()[0];
            double x0 = 2, y0 = 2, x1 = -1, y1 = -1;
            for (std::size_t y = 0; y < side; ++y)
                for (std::size_t x = 0; x < side; ++x) {
                    const double* p = frame.data().data() + (y * side + x) * 3;
                    if (p[0] == 1.0 && p[1] == 0.55 && p[2] == 0.08) {
                        double nx = static_cast<double>(x) / static_cast<double>(side);
                        double ny = static_cast<double>(y) / static_cast<double>(side);
                        x0 = std::min(x0, nx);
                        y0 = std::min(y0, ny);
                        x1 = std::max(x1, nx + 1.0 / static_cast<double>(side));
                        y1 = std::max(y1, ny + 1.0 / static_cast<double>(side));
                    }
                }
            if (x1 < 0) continue;  // ball occluded by a player block this frame
            BoundingBox rendered{x0, y0, x1 - x0, y1 - y0};
            INFO("frame " << det.frame_index);
            CHECK(iou(rendered, ball->box) > 0.5);
            ++checked;
        }
    }
    CHECK(checked > 10);
    fs::remove_all(dir);
}

TEST_CASE("curation pipeline over a generated corpus") {
    fs::path dir = fresh_dir("nsva_synth_e");
    SynthConfig cfg = small_synth(13);
    cfg.cumulative_phrases = 3;
    generate_corpus(cfg, dir.string());

    CorpusReport report = curate_corpus(dir.string());
    CHECK(report.videos == cfg.games * cfg.events_per_game);

    Corpus corpus(dir.string());
    REQUIRE(corpus.curated());
    auto records = corpus.curated_records();
    CHECK(records.size() == cfg.games * cfg.events_per_game);

    // merged records carry full event sequences and no cumulative fragments
    for (const PlayByPlayRecord& r : records) {
        CHECK(r.caption.find("PTS") == std::string::npos);
        CHECK(r.action_event.size() == r.players.size());
    }

    // split assignment covers every matchup in train
    SplitAssignment splits = corpus.splits();
    for (const GameInfo& g : corpus.schedule()) CHECK_NOTHROW(splits.of(g.game_id));

    // stats JSON exists and counts stripped fragments
    std::ifstream sf(dir / "curated" / "stats.json");
    REQUIRE(sf.good());
    auto stats = nlohmann::json::parse(sf);
    CHECK(stats["stripped_fragments"].get<std::size_t>() == 3);
    fs::remove_all(dir);
}

TEST_CASE("solvability: oracle predictions from generator ground truth score perfectly") {
    fs::path dir = fresh_dir("nsva_synth_f");
    generate_corpus(small_synth(21), dir.string());
    curate_corpus(dir.string());
    Corpus corpus(dir.string());

    std::vector<Tokens> preds;
    std::vector<std::vector<Tokens>> refs;
    std::vector<Tokens> action_preds, action_refs;
    for (const PlayByPlayRecord& r : corpus.curated_records()) {
        Tokens t = tokenize(r.caption).tokens;
        preds.push_back(t);
        refs.push_back({t});
        action_preds.push_back(r.action_event);
        action_refs.push_back(r.action_event);
    }
    auto metrics = caption_metrics(preds, refs);
    CHECK(metrics["BLEU@4"] == Catch::Approx(1.0).margin(1e-9));
    CHECK(metrics["ROUGE_L"] == Catch::Approx(1.0).margin(1e-9));
    CHECK(metrics["METEOR"] > 0.9);
    SequenceScores s = sequence_metrics_corpus(action_preds, action_refs);
    CHECK(s.sr == 1.0);
    CHECK(s.acc == 1.0);
    CHECK(s.iou == 1.0);
    fs::remove_all(dir);
}

TEST_CASE("training run produces artifacts and decreasing loss") {
    fs::path dir = fresh_dir("nsva_synth_g");
    generate_corpus(small_synth(31), dir.string());
    CurateOptions opts;
    opts.ratios = {0.5, 0.25, 0.25};  // small corpus needs a non-empty val split
    curate_corpus(dir.string(), opts);
    fs::path run_dir = fresh_dir("nsva_run_g");

    RunConfig run = small_run();
    run.epochs = 12;
    TrainResult result = train(run, dir.string(), run_dir.string());

    CHECK(result.epochs_run == 12);
    CHECK(result.train_losses.front() > result.train_losses.back());
    CHECK(fs::exists(run_dir / "checkpoint.bin"));
    CHECK(fs::exists(run_dir / "vocab.txt"));
    CHECK(fs::exists(run_dir / "heads.json"));
    CHECK(fs::exists(run_dir / "config.json"));
    CHECK(fs::exists(run_dir / "log.jsonl"));
    CHECK(fs::exists(run_dir / "manifest.json"));

    std::ifstream mf(run_dir / "manifest.json");
    auto manifest = nlohmann::json::parse(mf);
    CHECK(manifest["kind"] == "run");
    CHECK(manifest["seed"] == run.seed);
    CHECK(manifest["config_hash"].get<std::string>().size() == 16);

    SECTION("evaluation emits a schema-valid report and decode lines") {
        fs::path eval_dir = run_dir / "eval";
        EvalResult ev = evaluate(run_dir.string(), dir.string(), "caption", "val",
                                 run.beam_width, eval_dir.string());
        std::ifstream schema_f(std::string(NSVA_SOURCE_DIR) + "/docs/report.schema.json");
        REQUIRE(schema_f.good());
        auto schema = nlohmann::json::parse(schema_f);
        CHECK(validate_against_schema(ev.report, schema));
        CHECK(fs::exists(eval_dir / "decode.jsonl"));

        // decode lines carry the documented fields
        std::ifstream df(eval_dir / "decode.jsonl");
        std::string line;
        REQUIRE(std::getline(df, line));
        auto d = nlohmann::json::parse(line);
        CHECK(d.contains("clip_id"));
        CHECK(d.contains("task"));
        CHECK(d.contains("tokens"));
        CHECK(d.contains("token_logprobs"));
        CHECK(d.contains("score"));
    }

    SECTION("loading the run restores the model for inference") {
        LoadedRun loaded = load_run(run_dir.string());
        CHECK(loaded.config.seed == run.seed);
        CHECK(loaded.spaces.count("caption") == 1);
        CHECK(loaded.spaces.count("action") == 1);
        CHECK(loaded.spaces.count("identity") == 1);
    }
    fs::remove_all(dir);
    fs::remove_all(run_dir);
}

TEST_CASE("training determinism: identical seed and config give identical loss curves") {
    fs::path dir = fresh_dir("nsva_synth_h");
    generate_corpus(small_synth(41), dir.string());
    RunConfig run = small_run();
    run.epochs = 5;

    fs::path r1 = fresh_dir("nsva_run_h1");
    fs::path r2 = fresh_dir("nsva_run_h2");
    TrainResult a = train(run, dir.string(), r1.string());
    TrainResult b = train(run, dir.string(), r2.string());
    REQUIRE(a.train_losses.size() == b.train_losses.size());
    for (std::size_t i = 0; i < a.train_losses.size(); ++i)
        CHECK(a.train_losses[i] == b.train_losses[i]);

    // checkpoints byte-identical
    CHECK(slurp(r1 / "checkpoint.bin") == slurp(r2 / "checkpoint.bin"));
    CHECK(slurp(r1 / "manifest.json") == slurp(r2 / "manifest.json"));
    fs::remove_all(dir);
    fs::remove_all(r1);
    fs::remove_all(r2);
}

TEST_CASE("config file grammar round-trips into a run config") {
    std::string text = R"(
# desk-scale run
model.dim = 32
model.heads = 4
streams = T+BAL+PA
train.epochs = 7
train.base_lr = 0.001
train.backbones = false
beam.width = 3
seed = 99
task = action
)";
    RunConfig run = RunConfig::from_config(KeyValueConfig::parse(text));
    CHECK(run.model.dim == 32);
    CHECK(run.model.heads == 4);
    CHECK(run.toggles.coarse);
    CHECK(run.toggles.ball);
    CHECK_FALSE(run.toggles.basket);
    CHECK(run.toggles.position_aware);
    CHECK(run.epochs == 7);
    CHECK(run.base_lr == Catch::Approx(0.001));
    CHECK_FALSE(run.train_backbones);
    CHECK(run.beam_width == 3);
    CHECK(run.seed == 99);
    CHECK(run.task == "action");

    CHECK_THROWS_AS(RunConfig::from_config(KeyValueConfig::parse("bogus.key = 1")),
                    std::runtime_error);
    CHECK_THROWS_AS(KeyValueConfig::parse("not a key value line"), std::runtime_error);

    // JSON round-trip preserves every field
    RunConfig back = RunConfig::from_json(run.to_json());
    CHECK(back.to_json() == run.to_json());
}
