// nsva — synthetic sports-video captioning pipeline CLI.
//
// Subcommands: generate, curate, train, eval, caption, ablate. Every run
// writes its artifacts under the --out directory together with a manifest
// recording the config hash and seed. Exit code 0 only when every invoked
// check passes.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "nsva/metrics.hpp"
#include "nsva/runner.hpp"
#include "nsva/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

nsva::KeyValueConfig load_config_or_empty(const std::string& path) {
    if (path.empty()) return nsva::KeyValueConfig::parse("");
    return nsva::KeyValueConfig::load(path);
}

// JSONL helpers for the metric-mode eval inputs. Candidate lines:
//   {"id": "...", "text": "..."}            (caption metrics)
//   {"id": "...", "labels": ["...", ...]}   (sequence metrics)
// Reference lines additionally allow {"texts": [...]} for multi-reference.
struct MetricInputs {
    std::vector<std::string> ids;
    std::vector<nsva::Tokens> candidates;
    std::vector<std::vector<nsva::Tokens>> references;
    std::vector<nsva::Tokens> candidate_labels;
    std::vector<nsva::Tokens> reference_labels;
};

MetricInputs load_metric_inputs(const std::string& cand_path, const std::string& ref_path) {
    auto read_lines = [](const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open " + path);
        std::map<std::string, json> by_id;
        std::vector<std::string> order;
        std::string line;
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            json j = json::parse(line);
            std::string id = j.at("id").get<std::string>();
            if (!by_id.count(id)) order.push_back(id);
            by_id[id] = j;
        }
        return std::make_pair(order, by_id);
    };
    auto [cand_order, cands] = read_lines(cand_path);
    auto [ref_order, refs] = read_lines(ref_path);

    MetricInputs in;
    for (const std::string& id : cand_order) {
        auto rit = refs.find(id);
        if (rit == refs.end()) {
            throw std::runtime_error("candidate id '" + id + "' has no reference line");
        }
        const json& c = cands[id];
        const json& r = rit->second;
        in.ids.push_back(id);
        if (c.contains("text")) {
            in.candidates.push_back(nsva::tokenize(c["text"].get<std::string>()).tokens);
            std::vector<nsva::Tokens> rs;
            if (r.contains("texts")) {
                for (const auto& t : r["texts"])
                    rs.push_back(nsva::tokenize(t.get<std::string>()).tokens);
            } else {
                rs.push_back(nsva::tokenize(r.at("text").get<std::string>()).tokens);
            }
            in.references.push_back(rs);
        }
        if (c.contains("labels")) {
            in.candidate_labels.push_back(c["labels"].get<nsva::Tokens>());
            in.reference_labels.push_back(r.at("labels").get<nsva::Tokens>());
        }
    }
    return in;
}

void print_metric_table(const std::map<std::string, double>& metrics) {
    for (const auto& [name, value] : metrics) {
        std::printf("  %-18s %.6f\n", name.c_str(), value);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic sports-video captioning pipeline"};
    app.require_subcommand(1);

    std::string config_path, out_dir, corpus_dir, run_dir;
    std::uint64_t seed_flag = 0;
    bool seed_given = false;

    // --- generate ---------------------------------------------------------
    auto* gen = app.add_subcommand("generate", "render a synthetic fixture corpus");
    gen->add_option("--config", config_path, "key = value config file");
    gen->add_option("--out", out_dir, "corpus output directory")->required();
    gen->add_option("--seed", seed_flag, "override synth.seed")->each([&](const std::string&) {
        seed_given = true;
    });

    // --- curate ------------------------------------------------------------
    auto* cur = app.add_subcommand("curate", "merge, filter, split and build vocabulary");
    std::string patterns_path, ratios_str;
    cur->add_option("--in", corpus_dir, "corpus directory")->required();
    cur->add_option("--patterns", patterns_path, "cumulative-stat pattern file");
    cur->add_option("--ratios", ratios_str, "train,val,test ratios (e.g. 0.76,0.12,0.12)");
    cur->add_option("--seed", seed_flag, "split assignment seed")->each([&](const std::string&) {
        seed_given = true;
    });

    // --- train ----------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a model on a curated corpus");
    tr->add_option("--config", config_path, "key = value run config");
    tr->add_option("--corpus", corpus_dir, "corpus directory")->required();
    tr->add_option("--out", out_dir, "run output directory")->required();
    tr->add_option("--seed", seed_flag, "override config seed")->each([&](const std::string&) {
        seed_given = true;
    });

    // --- eval --------------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "evaluate a trained run or score prediction files");
    std::string task = "caption", split = "val", cand_path, ref_path, metrics_list;
    std::size_t beam_width = 0;
    ev->add_option("--checkpoint", run_dir, "run directory of a trained model");
    ev->add_option("--corpus", corpus_dir, "corpus directory");
    ev->add_option("--task", task, "caption | action | identity");
    ev->add_option("--split", split, "train | val | test");
    ev->add_option("--beam", beam_width, "beam width override");
    ev->add_option("--out", out_dir, "report output directory");
    ev->add_option("--candidates", cand_path, "JSONL candidate file (metric mode)");
    ev->add_option("--references", ref_path, "JSONL reference file (metric mode)");
    ev->add_option("--metrics", metrics_list, "bleu,rouge,cider,meteor,seq");

    // --- caption --------------------------------------------------------------------
    auto* cap = app.add_subcommand("caption", "beam-decode captions for a corpus split");
    cap->add_option("--checkpoint", run_dir, "run directory")->required();
    cap->add_option("--corpus", corpus_dir, "corpus directory")->required();
    cap->add_option("--split", split, "train | val | test");
    cap->add_option("--beam", beam_width, "beam width override");
    cap->add_option("--out", out_dir, "output directory")->required();
    cap->add_option("--task", task, "decode head to use");

    // --- ablate -----------------------------------------------------------------------
    auto* ab = app.add_subcommand("ablate", "train/evaluate a feature-toggle comparison table");
    std::string rows_str = "T;T+BAL;T+BAS;T+PB;T+PA;T+BAL+BAS;T+BAL+BAS+PB;T+BAL+BAS+PB+PA";
    std::string seeds_str = "1,2,3";
    ab->add_option("--config", config_path, "base run config");
    ab->add_option("--corpus", corpus_dir, "corpus directory")->required();
    ab->add_option("--out", out_dir, "output directory")->required();
    ab->add_option("--rows", rows_str, "semicolon-separated stream rows");
    ab->add_option("--seeds", seeds_str, "comma-separated seeds");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            nsva::SynthConfig cfg = nsva::SynthConfig::from_config(
                load_config_or_empty(config_path));
            if (seed_given) cfg.seed = seed_flag;
            nsva::GeneratedCorpus corpus = nsva::generate_corpus(cfg, out_dir);
            std::cout << "generated " << corpus.clips.size() << " clips / "
                      << corpus.event_count << " events under " << out_dir << "\n";
            return 0;
        }

        if (cur->parsed()) {
            nsva::CurateOptions opts;
            if (seed_given) opts.seed = seed_flag;
            if (!patterns_path.empty()) opts.patterns = nsva::load_patterns(patterns_path);
            if (!ratios_str.empty()) {
                std::stringstream ss(ratios_str);
                std::string part;
                std::vector<double> vals;
                while (std::getline(ss, part, ',')) vals.push_back(std::stod(part));
                if (vals.size() != 3) throw std::runtime_error("--ratios needs three values");
                opts.ratios = {vals[0], vals[1], vals[2]};
            }
            nsva::CorpusReport report = nsva::curate_corpus(corpus_dir, opts);
            std::cout << report.to_table();
            return 0;
        }

        if (tr->parsed()) {
            nsva::RunConfig run = nsva::RunConfig::from_config(
                load_config_or_empty(config_path));
            if (seed_given) run.seed = seed_flag;
            nsva::TrainResult result = nsva::train(run, corpus_dir, out_dir);
            std::cout << "trained " << result.epochs_run << " epochs, final train loss "
                      << result.final_train_loss << ", val loss " << result.final_val_loss
                      << "\n";
            return 0;
        }

        if (ev->parsed()) {
            if (!cand_path.empty() || !ref_path.empty()) {
                // metric mode: score prediction files directly
                if (cand_path.empty() || ref_path.empty()) {
                    throw std::runtime_error("metric mode needs --candidates and --references");
                }
                std::string wanted = metrics_list.empty() ? "bleu,rouge,cider,meteor" : metrics_list;
                MetricInputs in = load_metric_inputs(cand_path, ref_path);
                std::map<std::string, double> out;
                auto has = [&](const char* m) {
                    return wanted.find(m) != std::string::npos;
                };
                if (!in.candidates.empty()) {
                    if (has("bleu")) {
                        for (std::size_t n = 1; n <= 4; ++n)
                            out["BLEU@" + std::to_string(n)] =
                                nsva::bleu(in.candidates, in.references, n);
                    }
                    if (has("rouge")) out["ROUGE_L"] = nsva::rouge_l(in.candidates, in.references);
                    if (has("cider")) {
                        nsva::CorpusStats stats = nsva::build_corpus_stats(in.references);
                        out["CIDEr-D"] = nsva::cider_d(in.candidates, in.references, stats);
                    }
                    if (has("meteor"))
                        out["METEOR"] = nsva::meteor_lite_corpus(in.candidates, in.references);
                }
                if (has("seq") && !in.candidate_labels.empty()) {
                    nsva::SequenceScores s = nsva::sequence_metrics_corpus(in.candidate_labels,
                                                                           in.reference_labels);
                    out["SR"] = s.sr;
                    out["Acc"] = s.acc;
                    out["mIoU"] = s.iou;
                }
                if (out.empty()) throw std::runtime_error("no metrics computed; check inputs");
                print_metric_table(out);
                json report{{"kind", "metric_report"}, {"samples", in.ids.size()}};
                for (const auto& [k, v] : out) report["metrics"][k] = v;
                if (!out_dir.empty()) {
                    fs::create_directories(out_dir);
                    std::ofstream f(fs::path(out_dir) / "metrics.json");
                    f << report.dump(2) << "\n";
                } else {
                    std::cout << report.dump(2) << "\n";
                }
                return 0;
            }
            if (run_dir.empty() || corpus_dir.empty()) {
                throw std::runtime_error("model mode needs --checkpoint and --corpus");
            }
            nsva::EvalResult result = nsva::evaluate(run_dir, corpus_dir, task, split,
                                                     beam_width, out_dir);
            std::cout << result.table;
            return 0;
        }

        if (cap->parsed()) {
            nsva::EvalResult result = nsva::evaluate(run_dir, corpus_dir, task, split,
                                                     beam_width, out_dir);
            std::cout << result.table;
            std::cout << "decodes written to " << (fs::path(out_dir) / "decode.jsonl").string()
                      << "\n";
            return 0;
        }

        if (ab->parsed()) {
            nsva::RunConfig base = nsva::RunConfig::from_config(
                load_config_or_empty(config_path));
            std::vector<std::string> rows;
            {
                std::stringstream ss(rows_str);
                std::string part;
                while (std::getline(ss, part, ';'))
                    if (!part.empty()) rows.push_back(part);
            }
            std::vector<std::uint64_t> seeds;
            {
                std::stringstream ss(seeds_str);
                std::string part;
                while (std::getline(ss, part, ','))
                    if (!part.empty()) seeds.push_back(std::stoull(part));
            }
            nsva::AblationResult result = nsva::ablate(base, corpus_dir, rows, seeds, out_dir);
            std::cout << result.to_table();
            std::cout << (result.full_dominates_coarse
                              ? "full feature set dominates the coarse-only row\n"
                              : "warning: coarse-only row beat the full feature set\n");
            return result.full_dominates_coarse ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
