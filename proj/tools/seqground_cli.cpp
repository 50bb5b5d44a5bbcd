// seqground: data generation, pretraining, training, grounding, evaluation
// and ablation runs from one JSON config plus dotted-key overrides.
//
// Exit codes: 0 ok, 1 other failure, 2 missing/unreadable file, 3 malformed
// file, 4 non-finite values during training, 5 invalid config, 6 invalid
// input data. Usage errors use CLI11's codes.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seqground/seqground.hpp"

namespace fs = std::filesystem;
using namespace seqground;

namespace {

struct Options {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> overrides;
    std::string out = ".";
    std::string data;
    std::string init;
    std::string model;
    std::string checkpoints;
    std::string split = "test";
    std::optional<int> stage;
    std::optional<std::string> order;
    std::vector<std::string> presets;
    bool unguided = false;
    std::optional<double> threshold;
    std::optional<double> nms_iou;
};

RunConfig resolve(const Options& o) {
    nlohmann::json file = nlohmann::json::object();
    if (!o.config_path.empty()) file = load_json_file(o.config_path);
    auto overrides = o.overrides;
    if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
    if (o.order) overrides.push_back("model.ablation.order=\"" + *o.order + "\"");
    if (o.unguided) overrides.push_back("eval.unguided=true");
    if (o.threshold) overrides.push_back("eval.threshold=" + nlohmann::json(*o.threshold).dump());
    if (o.nms_iou) overrides.push_back("eval.nms_iou=" + nlohmann::json(*o.nms_iou).dump());
    auto cfg = resolve_config(file, overrides);
    cfg.apply_seed();
    if (o.presets.size() == 1) {
        auto order = cfg.model.ablation.order;
        auto order_seed = cfg.model.ablation.order_seed;
        cfg.model.ablation = AblationConfig::preset(o.presets.front());
        cfg.model.ablation.order = order;
        cfg.model.ablation.order_seed = order_seed;
    }
    if (!o.presets.empty()) {
        cfg.presets.clear();
        for (const auto& p : o.presets) cfg.presets.push_back(AblationConfig::preset(p).name);
    }
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write '" + path.string() + "'");
    os << text;
}

fs::path prepare_out(const Options& o, const std::string& command, const RunConfig& cfg) {
    fs::path out(o.out);
    fs::create_directories(out);
    nlohmann::json echo = cfg;
    echo["command"] = command;
    if (!o.data.empty()) echo["data"] = o.data;
    if (!o.init.empty()) echo["init"] = o.init;
    if (!o.model.empty()) echo["model_checkpoint"] = o.model;
    if (o.stage) echo["only_stage"] = *o.stage;
    save_json_file((out / (command + ".config.json")).string(), echo);
    return out;
}

Dataset need_data(const Options& o) {
    if (o.data.empty()) throw ConfigError("--data is required");
    return read_dataset(o.data);
}

int cmd_gen_data(const Options& o) {
    auto cfg = resolve(o);
    auto out = prepare_out(o, "gen-data", cfg);
    auto ds = World(cfg.world).generate();
    write_dataset(out.string(), ds);
    std::printf("wrote %zu/%zu/%zu scenes to %s\n", ds.train.size(), ds.val.size(), ds.test.size(),
                out.string().c_str());
    return 0;
}

int cmd_pretrain(const Options& o) {
    auto cfg = resolve(o);
    auto ds = need_data(o);
    auto out = prepare_out(o, "pretrain", cfg);
    auto enc = make_encoders(ds, cfg.model, cfg.seed);
    std::string csv = "epoch,loss\n";
    pretrain_encoders(enc, ds, cfg.pretrain, [&](std::size_t epoch, double loss) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%zu,%.10g\n", epoch, loss);
        csv += buf;
        std::printf("epoch %zu loss %.6f\n", epoch, loss);
    });
    save_encoders((out / "encoders.ckpt").string(), enc, cfg.model);
    write_text(out / "pretrain_loss.csv", csv);
    std::printf("val recall@1 %.4f\n", recall_at_1(enc, recall_queries(ds.val)));
    return 0;
}

GroundingModel initial_model(const Options& o, const Dataset& ds, const RunConfig& cfg) {
    if (!o.model.empty()) return load_model(o.model, ds);
    if (o.init.empty()) return model_from_encoders(ds, cfg.model, cfg.seed, nullptr);
    auto enc = load_encoders(o.init, ds);
    return model_from_encoders(ds, cfg.model, cfg.seed, &enc);
}

void print_epoch(const EpochLog& e) {
    std::printf("stage %d %s epoch %zu loss %.6f", e.stage, e.phase.c_str(), e.epoch, e.loss);
    if (e.val_accuracy >= 0.0) std::printf(" val %.4f", e.val_accuracy);
    std::printf("\n");
    std::fflush(stdout);
}

int cmd_train(const Options& o) {
    auto cfg = resolve(o);
    auto ds = need_data(o);
    auto out = prepare_out(o, "train", cfg);
    auto model = initial_model(o, ds, cfg);
    auto log = train_grounding(model, ds, cfg, true, print_epoch, o.stage);
    save_model((out / "model.ckpt").string(), model, nlohmann::json(cfg));
    write_text(out / "training_log.csv", training_log_csv(log));
    return 0;
}

GroundingModel need_model(const Options& o, const Dataset& ds) {
    if (o.model.empty()) throw ConfigError("--model is required");
    return load_model(o.model, ds);
}

int cmd_ground(const Options& o) {
    auto cfg = resolve(o);
    auto ds = need_data(o);
    auto model = need_model(o, ds);
    auto out = prepare_out(o, "ground", cfg);
    auto opt = cfg.eval.options();
    std::string lines;
    for (const auto& s : ds.split(o.split)) {
        auto r = ground_scene(model, s, opt);
        lines += grounding_to_json(r, s, source_boxes(s, opt.source)).dump() + "\n";
    }
    write_text(out / "groundings.jsonl", lines);
    return 0;
}

int cmd_eval(const Options& o) {
    auto cfg = resolve(o);
    auto ds = need_data(o);
    auto model = need_model(o, ds);
    auto out = prepare_out(o, "eval", cfg);
    auto report = evaluate(model, ds.split(o.split), cfg.eval.options());
    save_json_file((out / "report.json").string(), report.to_json());
    AblationRow row{model.ablation().name, model.ablation(), true, report, ""};
    write_text(out / "positions.csv", position_csv({row}));
    std::printf("accuracy %.4f (%zu phrases), ambiguous %.4f (%zu)\n", report.accuracy(), report.overall.total,
                report.ambiguous.accuracy(), report.ambiguous.total);
    return 0;
}

int cmd_ablate(const Options& o) {
    auto cfg = resolve(o);
    auto ds = need_data(o);
    auto out = prepare_out(o, "ablate", cfg);
    if (o.init.empty()) throw ConfigError("--init (pretrained encoders) is required");
    auto enc = load_encoders(o.init, ds);
    ModelProvider provider = [&](const AblationConfig& a) -> std::optional<GroundingModel> {
        if (!o.checkpoints.empty()) {
            auto path = fs::path(o.checkpoints) / (a.name + ".ckpt");
            if (!fs::exists(path)) return std::nullopt;
            return load_model(path.string(), ds);
        }
        auto mc = cfg.model;
        mc.ablation = a;
        auto model = model_from_encoders(ds, mc, cfg.seed, &enc);
        std::printf("training %s\n", a.name.c_str());
        auto log = train_grounding(model, ds, cfg, true, print_epoch);
        save_model((out / (a.name + ".ckpt")).string(), model, nlohmann::json(cfg));
        write_text(out / (a.name + ".training_log.csv"), training_log_csv(log));
        return model;
    };
    auto suite = run_ablation_suite(ds, cfg, enc, provider, o.split, [](const AblationRow& r) {
        if (r.present)
            std::printf("%s accuracy %.4f ambiguous %.4f %s\n", r.name.c_str(), r.report.accuracy(),
                        r.report.ambiguous.accuracy(), r.note.c_str());
        else
            std::printf("%s absent (%s)\n", r.name.c_str(), r.note.c_str());
        std::fflush(stdout);
    });
    write_text(out / "ablation.md", ablation_markdown(suite.rows));
    write_text(out / "ablation.csv", ablation_csv(suite.rows));
    write_text(out / "positions.csv", position_csv(suite.rows));
    nlohmann::json j;
    j["msbs_slack"] = suite.msbs_slack;
    for (const auto& r : suite.rows) {
        nlohmann::json row = {{"name", r.name}, {"config", r.config}, {"present", r.present}, {"note", r.note}};
        if (r.present) row["report"] = r.report.to_json();
        j["rows"].push_back(row);
    }
    save_json_file((out / "ablation.json").string(), j);
    std::cout << ablation_markdown(suite.rows);
    return 0;
}

int cmd_gradcheck(const Options&) {
    auto r = gradient_fidelity();
    std::printf("pretraining loss: max relative error %.3e over %zu entries\n", r.pretrain.max_rel_error,
                r.pretrain.checked);
    std::printf("grounding loss:   max relative error %.3e over %zu entries\n", r.grounding.max_rel_error,
                r.grounding.checked);
    std::printf("%s (tol %.0e)\n", r.passed() ? "PASS" : "FAIL", r.grounding.tol);
    return r.passed() ? 0 : 1;
}

int run_guarded(const std::function<int()>& f) {
    try {
        return f();
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 4;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 5;
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 6;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sequential phrase grounding on synthetic scenes"};
    app.require_subcommand(1);
    Options o;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "JSON run config");
        sub->add_option("--seed", o.seed, "Run seed; every component seed derives from it");
        sub->add_option("--set", o.overrides, "Dotted-key override, e.g. stage1.epochs=3");
        sub->add_option("--out", o.out, "Output directory");
    };
    auto with_data = [&](CLI::App* sub) { sub->add_option("--data", o.data, "Dataset directory")->required(); };
    auto with_eval = [&](CLI::App* sub) {
        sub->add_option("--model", o.model, "Grounding model checkpoint")->required();
        sub->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
        sub->add_flag("--unguided", o.unguided, "Decide over every phrase, intermediate words included");
        sub->add_option("--threshold", o.threshold, "Decision threshold");
        sub->add_option("--nms-iou", o.nms_iou, "NMS IoU threshold");
    };
    auto with_order = [&](CLI::App* sub) {
        sub->add_option("--order", o.order, "Phrase order")->check(CLI::IsMember({"l2r", "r2l", "random"}));
    };

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    common(gen);
    auto* pre = app.add_subcommand("pretrain", "Pretrain the phrase and visual encoders");
    common(pre);
    with_data(pre);
    auto* train = app.add_subcommand("train", "Train a grounding model (stage 1, stage 2 or both)");
    common(train);
    with_data(train);
    with_order(train);
    train->add_option("--init", o.init, "Pretrained encoder checkpoint");
    train->add_option("--model", o.model, "Grounding checkpoint to continue from");
    train->add_option("--stage", o.stage, "Run only this stage")->check(CLI::Range(1, 2));
    train->add_option("--preset", o.presets, "Ablation preset")->expected(1);
    auto* ground = app.add_subcommand("ground", "Write groundings for a split");
    common(ground);
    with_data(ground);
    with_eval(ground);
    auto* eval = app.add_subcommand("eval", "Score a model on a split");
    common(eval);
    with_data(eval);
    with_eval(eval);
    auto* ablate = app.add_subcommand("ablate", "Train and score the ablation presets");
    common(ablate);
    with_data(ablate);
    with_order(ablate);
    ablate->add_option("--init", o.init, "Pretrained encoder checkpoint")->required();
    ablate->add_option("--preset", o.presets, "Preset to include (repeatable; default all)");
    ablate->add_option("--checkpoints", o.checkpoints, "Score existing <preset>.ckpt files instead of training");
    ablate->add_option("--split", o.split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    ablate->add_flag("--unguided", o.unguided, "Decide over every phrase, intermediate words included");
    ablate->add_option("--threshold", o.threshold, "Decision threshold");
    ablate->add_option("--nms-iou", o.nms_iou, "NMS IoU threshold");
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of both training losses");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (*gen) return run_guarded([&] { return cmd_gen_data(o); });
    if (*pre) return run_guarded([&] { return cmd_pretrain(o); });
    if (*train) return run_guarded([&] { return cmd_train(o); });
    if (*ground) return run_guarded([&] { return cmd_ground(o); });
    if (*eval) return run_guarded([&] { return cmd_eval(o); });
    if (*ablate) return run_guarded([&] { return cmd_ablate(o); });
    if (*grad) return run_guarded([&] { return cmd_gradcheck(o); });
    return 1;
}
