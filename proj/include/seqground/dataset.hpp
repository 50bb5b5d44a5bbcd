#pragma once

// Scene records and their JSON-lines interchange format.
//
// One scene per line:
//   {"scene_id", "width", "height", "image_feature": [...],
//    "gt_boxes": [{"box": [x1,y1,x2,y2], "concept", "feature": [...]}],
//    "proposals": [{"box": [...], "feature": [...]}],
//    "phrases": [{"tokens": [...], "groundable", "gt": [indices], "category", "ambiguous"}]}
//
// A dataset directory holds manifest.json, embeddings.jsonl and one
// <split>.jsonl per split.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqground/encoders.hpp"
#include "seqground/geometry.hpp"

namespace seqground {

struct GtObject {
    Box box;
    std::string concept_name;
    std::vector<double> feature;
    bool operator==(const GtObject&) const = default;
};

struct Proposal {
    Box box;
    std::vector<double> feature;
    bool operator==(const Proposal&) const = default;
};

struct PhraseEntry {
    std::vector<std::string> tokens;
    bool groundable = false;
    // Indices into SceneRecord::gt_boxes; several phrases may share a box.
    std::vector<std::size_t> gt;
    std::string category;
    // Set when the referent is only identifiable through a relation to another phrase.
    bool ambiguous = false;

    std::string text() const {
        std::string s;
        for (const auto& t : tokens) s += (s.empty() ? "" : " ") + t;
        return s;
    }
    bool operator==(const PhraseEntry&) const = default;
};

struct SceneRecord {
    std::string scene_id;
    double width = 0.0;
    double height = 0.0;
    std::vector<double> image_feature;
    std::vector<GtObject> gt_boxes;
    std::vector<Proposal> proposals;
    std::vector<PhraseEntry> phrases;

    bool operator==(const SceneRecord&) const = default;

    std::vector<Box> gt_geometry() const {
        std::vector<Box> out;
        for (const auto& g : gt_boxes) out.push_back(g.box);
        return out;
    }

    std::vector<Box> proposal_geometry() const {
        std::vector<Box> out;
        for (const auto& p : proposals) out.push_back(p.box);
        return out;
    }

    std::vector<Box> phrase_gt_boxes(std::size_t phrase) const {
        std::vector<Box> out;
        for (auto i : phrases.at(phrase).gt) out.push_back(gt_boxes.at(i).box);
        return out;
    }

    std::vector<std::vector<std::string>> phrase_tokens() const {
        std::vector<std::vector<std::string>> out;
        for (const auto& p : phrases) out.push_back(p.tokens);
        return out;
    }

    /// Throws InputError describing the first violated invariant.
    void validate() const {
        auto fail = [&](const std::string& what) { throw InputError("scene '" + scene_id + "': " + what); };
        if (scene_id.empty()) throw InputError("scene without an id");
        if (!(width > 0.0) || !(height > 0.0)) fail("image size must be positive");
        if (image_feature.empty()) fail("empty image feature");
        std::size_t dv = image_feature.size();
        auto check_box = [&](const Box& b, const char* kind) {
            if (!b.valid()) fail(std::string(kind) + " box with reversed or degenerate corners");
            if (b.x1 < 0.0 || b.y1 < 0.0 || b.x2 > width || b.y2 > height) fail(std::string(kind) + " box outside the image");
        };
        for (const auto& g : gt_boxes) {
            check_box(g.box, "gt");
            if (g.feature.size() != dv) fail("gt feature dimension differs from the image feature");
        }
        for (const auto& p : proposals) {
            check_box(p.box, "proposal");
            if (p.feature.size() != dv) fail("proposal feature dimension differs from the image feature");
        }
        if (phrases.empty()) fail("sentence has no phrases");
        for (const auto& p : phrases) {
            if (p.tokens.empty()) fail("phrase without tokens");
            for (auto i : p.gt)
                if (i >= gt_boxes.size()) fail("phrase references a missing gt box");
            if (p.groundable && p.gt.empty()) fail("groundable phrase '" + p.text() + "' has no gt box");
        }
    }
};

inline nlohmann::json box_to_json(const Box& b) { return nlohmann::json::array({b.x1, b.y1, b.x2, b.y2}); }

inline Box box_from_json(const nlohmann::json& j) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != 4) throw InputError("box must have four coordinates");
    return {v[0], v[1], v[2], v[3]};
}

inline nlohmann::json to_json(const SceneRecord& s) {
    nlohmann::json j;
    j["scene_id"] = s.scene_id;
    j["width"] = s.width;
    j["height"] = s.height;
    j["image_feature"] = s.image_feature;
    auto& gts = j["gt_boxes"] = nlohmann::json::array();
    for (const auto& g : s.gt_boxes)
        gts.push_back({{"box", box_to_json(g.box)}, {"concept", g.concept_name}, {"feature", g.feature}});
    auto& props = j["proposals"] = nlohmann::json::array();
    for (const auto& p : s.proposals) props.push_back({{"box", box_to_json(p.box)}, {"feature", p.feature}});
    auto& phrases = j["phrases"] = nlohmann::json::array();
    for (const auto& p : s.phrases)
        phrases.push_back({{"tokens", p.tokens},
                           {"groundable", p.groundable},
                           {"gt", p.gt},
                           {"category", p.category},
                           {"ambiguous", p.ambiguous}});
    return j;
}

inline SceneRecord scene_from_json(const nlohmann::json& j) {
    SceneRecord s;
    s.scene_id = j.at("scene_id").get<std::string>();
    s.width = j.at("width").get<double>();
    s.height = j.at("height").get<double>();
    s.image_feature = j.at("image_feature").get<std::vector<double>>();
    for (const auto& g : j.at("gt_boxes"))
        s.gt_boxes.push_back({box_from_json(g.at("box")), g.at("concept").get<std::string>(),
                              g.at("feature").get<std::vector<double>>()});
    for (const auto& p : j.at("proposals"))
        s.proposals.push_back({box_from_json(p.at("box")), p.at("feature").get<std::vector<double>>()});
    for (const auto& p : j.at("phrases")) {
        PhraseEntry e;
        e.tokens = p.at("tokens").get<std::vector<std::string>>();
        e.groundable = p.at("groundable").get<bool>();
        e.gt = p.at("gt").get<std::vector<std::size_t>>();
        e.category = p.value("category", "");
        e.ambiguous = p.value("ambiguous", false);
        s.phrases.push_back(std::move(e));
    }
    s.validate();
    return s;
}

inline void write_scenes(const std::string& path, const std::vector<SceneRecord>& scenes) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path + "'");
    for (const auto& s : scenes) os << to_json(s).dump() << '\n';
    if (!os) throw IoError("failed writing '" + path + "'");
}

/// Reads and validates a scene file. Any malformed or invariant-violating
/// line raises ParseError naming that line.
inline std::vector<SceneRecord> read_scenes(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::vector<SceneRecord> scenes;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            scenes.push_back(scene_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ": " + e.what(), lineno);
        } catch (const InputError& e) {
            throw ParseError(path + ": " + e.what(), lineno);
        }
    }
    return scenes;
}

struct Dataset {
    nlohmann::json spec = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::shared_ptr<EmbeddingTable> embeddings;
    std::vector<SceneRecord> train, val, test;

    const std::vector<SceneRecord>& split(const std::string& name) const {
        if (name == "train") return train;
        if (name == "val") return val;
        if (name == "test") return test;
        throw InputError("unknown split '" + name + "'");
    }

    std::size_t visual_dim() const {
        for (const auto* s : {&train, &val, &test})
            if (!s->empty()) return s->front().image_feature.size();
        throw InputError("dataset has no scenes");
    }
};

inline void write_dataset(const std::string& dir, const Dataset& ds) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["seed"] = ds.seed;
    manifest["spec"] = ds.spec;
    manifest["splits"] = {{"train", ds.train.size()}, {"val", ds.val.size()}, {"test", ds.test.size()}};
    std::ofstream os(std::filesystem::path(dir) / "manifest.json");
    if (!os) throw IoError("cannot write manifest in '" + dir + "'");
    os << manifest.dump(2) << '\n';
    if (ds.embeddings) ds.embeddings->save_jsonl((std::filesystem::path(dir) / "embeddings.jsonl").string());
    write_scenes((std::filesystem::path(dir) / "train.jsonl").string(), ds.train);
    write_scenes((std::filesystem::path(dir) / "val.jsonl").string(), ds.val);
    write_scenes((std::filesystem::path(dir) / "test.jsonl").string(), ds.test);
}

inline Dataset read_dataset(const std::string& dir) {
    auto root = std::filesystem::path(dir);
    std::ifstream is(root / "manifest.json");
    if (!is) throw IoError("no manifest.json in '" + dir + "'");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("manifest.json: " + std::string(e.what()));
    }
    Dataset ds;
    ds.spec = manifest.value("spec", nlohmann::json::object());
    ds.seed = manifest.value("seed", std::uint64_t{0});
    ds.embeddings = std::make_shared<EmbeddingTable>(EmbeddingTable::load_jsonl((root / "embeddings.jsonl").string()));
    ds.train = read_scenes((root / "train.jsonl").string());
    ds.val = read_scenes((root / "val.jsonl").string());
    ds.test = read_scenes((root / "test.jsonl").string());
    const auto& splits = manifest.at("splits");
    if (splits.value("train", std::size_t{0}) != ds.train.size() || splits.value("val", std::size_t{0}) != ds.val.size() ||
        splits.value("test", std::size_t{0}) != ds.test.size())
        throw ParseError("split sizes in manifest.json do not match the scene files");
    return ds;
}

}  // namespace seqground
