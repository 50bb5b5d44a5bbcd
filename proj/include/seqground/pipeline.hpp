#pragma once

// End-to-end runs shared by the command-line tool and the acceptance suite.

#include <functional>
#include <optional>
#include <string>

#include "seqground/baselines.hpp"
#include "seqground/checkpoint.hpp"
#include "seqground/config.hpp"

namespace seqground {

inline Encoders make_encoders(const Dataset& ds, const ModelConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return Encoders(ds.embeddings, ds.visual_dim(), cfg.encoder, rng);
}

inline PretrainResult pretrain_encoders(Encoders& enc, const Dataset& ds, const PretrainConfig& cfg,
                                        const std::function<void(std::size_t, double)>& on_epoch = {}) {
    return pretrain(enc, pretrain_pairs(ds.train), cfg, on_epoch);
}

inline void save_encoders(const std::string& path, const Encoders& enc, const ModelConfig& cfg) {
    save_checkpoint(path, enc.parameters(),
                    {{"kind", "encoders"}, {"model", cfg}, {"visual_dim", enc.visual_dim()}});
}

inline Encoders load_encoders(const std::string& path, const Dataset& ds) {
    auto ck = load_checkpoint(path);
    auto cfg = ck.metadata.at("model").get<ModelConfig>();
    std::mt19937_64 rng(0);
    Encoders enc(ds.embeddings, ck.metadata.at("visual_dim").get<std::size_t>(), cfg.encoder, rng);
    auto ps = enc.parameters();
    restore_parameters(ps, ck);
    return enc;
}

/// A grounding model whose encoders start from the given pretrained ones.
inline GroundingModel model_from_encoders(const Dataset& ds, const ModelConfig& cfg, std::uint64_t seed,
                                          const Encoders* pretrained) {
    GroundingModel model(ds.embeddings, ds.visual_dim(), cfg, seed);
    if (pretrained) {
        auto ps = model.encoders().parameters();
        ps.copy_values_from(pretrained->parameters());
    }
    return model;
}

inline void save_model(const std::string& path, const GroundingModel& model, const nlohmann::json& extra = {}) {
    auto meta = model.metadata();
    meta["kind"] = "grounding-model";
    if (!extra.is_null()) meta["run"] = extra;
    save_checkpoint(path, model.parameters(), meta);
}

inline GroundingModel load_model(const std::string& path, const Dataset& ds) {
    auto ck = load_checkpoint(path);
    if (ck.metadata.value("kind", "") != "grounding-model")
        throw InputError("'" + path + "' is not a grounding-model checkpoint");
    auto cfg = ck.metadata.at("model").get<ModelConfig>();
    GroundingModel model(ds.embeddings, ck.metadata.at("visual_dim").get<std::size_t>(), cfg, 0);
    auto ps = model.parameters();
    restore_parameters(ps, ck);
    return model;
}

/// Stage 1 on gt boxes, then stage 2 on proposals (with hard-negative
/// fine-tuning when enabled). Validation accuracy is logged when
/// `validate` is set.
inline std::vector<EpochLog> train_grounding(GroundingModel& model, const Dataset& ds, const RunConfig& cfg,
                                             bool validate = true,
                                             const std::function<void(const EpochLog&)>& on_epoch = {},
                                             std::optional<int> only_stage = std::nullopt) {
    std::vector<EpochLog> log;
    static const std::vector<SceneRecord> none;
    const auto& val = validate ? ds.val : none;
    for (const auto* tc : {&cfg.stage1, &cfg.stage2}) {
        if (only_stage && *only_stage != tc->stage) continue;
        if (tc->epochs == 0) continue;
        auto r = train_stage(model, ds.train, val, *tc, on_epoch);
        log.insert(log.end(), r.log.begin(), r.log.end());
    }
    return log;
}

/// Trained model (or nothing, when unavailable) for an ablation preset.
using ModelProvider = std::function<std::optional<GroundingModel>(const AblationConfig&)>;

struct SuiteResult {
    std::vector<AblationRow> rows;
    double msbs_slack = 0.0;
};

/// Evaluates the similarity baselines and every trained preset on `split`.
inline SuiteResult run_ablation_suite(const Dataset& ds, const RunConfig& cfg, const Encoders& pretrained,
                                      const ModelProvider& provider, const std::string& split = "test",
                                      const std::function<void(const AblationRow&)>& on_row = {}) {
    SuiteResult out;
    const auto& scenes = ds.split(split);
    auto opt = cfg.eval.options();
    for (const auto& name : cfg.presets) {
        AblationRow row;
        row.config = AblationConfig::preset(name);
        row.config.order = cfg.model.ablation.order;
        row.config.order_seed = cfg.model.ablation.order_seed;
        row.name = row.config.name;
        if (row.config.is_similarity_baseline()) {
            bool multi = row.name == "MSBs";
            if (multi) out.msbs_slack = tune_msbs_slack(pretrained, ds.val, opt.source, cfg.slack_grid, opt.nms_iou);
            row.report = evaluate_msb(pretrained, scenes, opt.source, multi, multi ? out.msbs_slack : 0.0, opt.nms_iou);
            row.present = true;
            if (multi) row.note = "slack " + std::to_string(out.msbs_slack);
        } else if (auto model = provider(row.config)) {
            row.report = evaluate(*model, scenes, opt);
            row.present = true;
        } else {
            row.note = "no checkpoint";
        }
        if (on_row) on_row(row);
        out.rows.push_back(std::move(row));
    }
    return out;
}

}  // namespace seqground
