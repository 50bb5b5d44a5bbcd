#pragma once

// Feature-level synthetic grounding worlds.
//
// Every object has a concept and an attribute. Its visual feature is a fixed
// random linear map of the two word vectors plus Gaussian noise. Proposals
// are shifted copies of the objects with a controlled IoU, and their features
// blend the object's feature with the scene background by that IoU.
//
// In an ambiguous scene two objects share concept and attribute. The phrase
// naming them carries a relation word ("left"/"right") and is followed by an
// anchor phrase; the referent is the twin directly on that side of the
// anchor. The other twin sits on the same side of an unmentioned object, so
// local layout alone cannot tell them apart.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqground/dataset.hpp"
#include "seqground/order_embed.hpp"

namespace seqground {

struct WorldSpec {
    std::size_t n_concepts = 12;
    std::size_t n_attributes = 6;
    std::size_t n_categories = 4;
    std::size_t word_dim = 32;
    std::size_t visual_dim = 64;
    std::size_t min_objects = 3;
    std::size_t max_objects = 5;
    std::size_t min_mentions = 2;
    std::size_t max_mentions = 3;
    double ambiguity_rate = 0.0;
    double plural_rate = 0.1;
    double attribute_mention_rate = 0.5;
    double feature_noise = 0.15;
    double image_noise = 0.05;
    std::size_t proposals_per_object = 3;
    std::size_t background_proposals = 2;
    // Fraction of all proposals with IoU >= 0.7 against their object.
    double positive_proposal_fraction = 0.4;
    double width = 640.0;
    double height = 480.0;
    std::size_t train_scenes = 1000;
    std::size_t val_scenes = 200;
    std::size_t test_scenes = 300;
    std::uint64_t seed = 7;

    void validate() const {
        if (n_concepts < 2 || n_attributes < 2 || word_dim < 2 || visual_dim < 2 || n_categories < 1)
            throw ConfigError("world dimensions must be at least 2");
        if (min_objects < 2 || min_objects > max_objects) throw ConfigError("need 2 <= min_objects <= max_objects");
        if (min_mentions < 1 || min_mentions > max_mentions || max_mentions > min_objects)
            throw ConfigError("need 1 <= min_mentions <= max_mentions <= min_objects");
        if (max_objects > n_concepts) throw ConfigError("scenes need distinct concepts: max_objects <= n_concepts");
        for (double r : {ambiguity_rate, plural_rate, attribute_mention_rate, positive_proposal_fraction})
            if (r < 0.0 || r > 1.0) throw ConfigError("rates must lie in [0, 1]");
        if (ambiguity_rate > 0.0 && max_objects < 4)
            throw ConfigError("ambiguous scenes need at least 4 objects (two twins, an anchor and a decoy)");
        if (feature_noise < 0.0 || image_noise < 0.0) throw ConfigError("noise levels must be non-negative");
        if (proposals_per_object == 0) throw ConfigError("proposals_per_object must be positive");
        if (!(width > 0.0) || !(height > 0.0)) throw ConfigError("image size must be positive");
    }
};

inline void to_json(nlohmann::json& j, const WorldSpec& s) {
    j = {{"n_concepts", s.n_concepts},
         {"n_attributes", s.n_attributes},
         {"n_categories", s.n_categories},
         {"word_dim", s.word_dim},
         {"visual_dim", s.visual_dim},
         {"min_objects", s.min_objects},
         {"max_objects", s.max_objects},
         {"min_mentions", s.min_mentions},
         {"max_mentions", s.max_mentions},
         {"ambiguity_rate", s.ambiguity_rate},
         {"plural_rate", s.plural_rate},
         {"attribute_mention_rate", s.attribute_mention_rate},
         {"feature_noise", s.feature_noise},
         {"image_noise", s.image_noise},
         {"proposals_per_object", s.proposals_per_object},
         {"background_proposals", s.background_proposals},
         {"positive_proposal_fraction", s.positive_proposal_fraction},
         {"width", s.width},
         {"height", s.height},
         {"train_scenes", s.train_scenes},
         {"val_scenes", s.val_scenes},
         {"test_scenes", s.test_scenes},
         {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, WorldSpec& s) {
    WorldSpec d;
#define SEQGROUND_FIELD(f) s.f = j.value(#f, d.f)
    SEQGROUND_FIELD(n_concepts);
    SEQGROUND_FIELD(n_attributes);
    SEQGROUND_FIELD(n_categories);
    SEQGROUND_FIELD(word_dim);
    SEQGROUND_FIELD(visual_dim);
    SEQGROUND_FIELD(min_objects);
    SEQGROUND_FIELD(max_objects);
    SEQGROUND_FIELD(min_mentions);
    SEQGROUND_FIELD(max_mentions);
    SEQGROUND_FIELD(ambiguity_rate);
    SEQGROUND_FIELD(plural_rate);
    SEQGROUND_FIELD(attribute_mention_rate);
    SEQGROUND_FIELD(feature_noise);
    SEQGROUND_FIELD(image_noise);
    SEQGROUND_FIELD(proposals_per_object);
    SEQGROUND_FIELD(background_proposals);
    SEQGROUND_FIELD(positive_proposal_fraction);
    SEQGROUND_FIELD(width);
    SEQGROUND_FIELD(height);
    SEQGROUND_FIELD(train_scenes);
    SEQGROUND_FIELD(val_scenes);
    SEQGROUND_FIELD(test_scenes);
    SEQGROUND_FIELD(seed);
#undef SEQGROUND_FIELD
}

namespace synth_detail {

inline const std::vector<std::string>& concept_words() {
    static const std::vector<std::string> w{"man",   "woman", "dog",  "cat",  "car",   "bike",  "shirt", "hat",
                                            "tree",  "ball",  "horse", "boat", "child", "bus",   "chair", "bag",
                                            "table", "bird",  "cup",  "lamp"};
    return w;
}

inline const std::vector<std::string>& attribute_words() {
    static const std::vector<std::string> w{"red", "blue", "green", "white", "black", "small", "large", "striped"};
    return w;
}

inline const std::vector<std::string>& category_words() {
    static const std::vector<std::string> w{"people", "animals", "vehicles", "clothing", "scene", "other"};
    return w;
}

inline const std::vector<std::string>& connective_words() {
    static const std::vector<std::string> w{"and", "with", "near", "beside"};
    return w;
}

inline std::string indexed_word(const std::vector<std::string>& base, const std::string& stem, std::size_t i) {
    return i < base.size() ? base[i] : stem + std::to_string(i);
}

// Distinct stream per (seed, split, scene index).
inline std::mt19937_64 scene_rng(std::uint64_t seed, std::uint32_t split, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), split,
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

}  // namespace synth_detail

/// Fixed vocabulary, embeddings and visual map shared by every scene.
class World {
  public:
    explicit World(WorldSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        using namespace synth_detail;
        for (std::size_t c = 0; c < spec_.n_concepts; ++c) concepts_.push_back(indexed_word(concept_words(), "thing", c));
        for (std::size_t a = 0; a < spec_.n_attributes; ++a)
            attributes_.push_back(indexed_word(attribute_words(), "shade", a));
        for (std::size_t k = 0; k < spec_.n_categories; ++k)
            categories_.push_back(indexed_word(category_words(), "group", k));
        std::vector<std::string> words = concepts_;
        words.insert(words.end(), attributes_.begin(), attributes_.end());
        for (const char* w : {"a", "the", "two", "of", "left", "right"}) words.emplace_back(w);
        for (const auto& w : connective_words()) words.push_back(w);

        std::mt19937_64 rng(spec_.seed);
        std::normal_distribution<double> n(0.0, 1.0);
        std::vector<std::vector<double>> vecs;
        for (std::size_t i = 0; i < words.size(); ++i) {
            std::vector<double> v(spec_.word_dim);
            for (auto& x : v) x = n(rng);
            vecs.push_back(std::move(v));
        }
        table_ = std::make_shared<EmbeddingTable>(words, vecs);
        std::size_t in = 2 * spec_.word_dim;
        double s = 1.0 / std::sqrt(static_cast<double>(in));
        map_.resize(spec_.visual_dim * in);
        for (auto& x : map_) x = s * n(rng);
    }

    const WorldSpec& spec() const { return spec_; }
    std::shared_ptr<EmbeddingTable> embeddings() const { return table_; }
    const std::string& concept_name(std::size_t c) const { return concepts_.at(c); }
    const std::string& attribute(std::size_t a) const { return attributes_.at(a); }
    const std::string& category(std::size_t c) const { return categories_.at(c % categories_.size()); }

    /// Noise-free visual feature of a (concept, attribute) object.
    std::vector<double> object_feature(std::size_t c, std::size_t a) const {
        auto ec = table_->vector(*table_->index(concepts_.at(c)));
        auto ea = table_->vector(*table_->index(attributes_.at(a)));
        std::size_t d = spec_.word_dim;
        std::vector<double> f(spec_.visual_dim, 0.0);
        for (std::size_t r = 0; r < f.size(); ++r) {
            const double* row = map_.data() + r * 2 * d;
            for (std::size_t k = 0; k < d; ++k) f[r] += row[k] * ec[k] + row[d + k] * ea[k];
        }
        return f;
    }

    SceneRecord generate_scene(const std::string& id, std::mt19937_64& rng, bool ambiguous) const;

    Dataset generate() const {
        Dataset ds;
        ds.spec = spec_;
        ds.seed = spec_.seed;
        ds.embeddings = table_;
        auto fill = [&](std::vector<SceneRecord>& out, const std::string& name, std::uint32_t split, std::size_t n) {
            for (std::size_t i = 0; i < n; ++i) {
                auto rng = synth_detail::scene_rng(spec_.seed, split, i);
                std::bernoulli_distribution amb(spec_.ambiguity_rate);
                bool a = amb(rng);
                out.push_back(generate_scene(name + "-" + std::to_string(i), rng, a));
            }
        };
        fill(ds.train, "train", 0, spec_.train_scenes);
        fill(ds.val, "val", 1, spec_.val_scenes);
        fill(ds.test, "test", 2, spec_.test_scenes);
        return ds;
    }

  private:
    WorldSpec spec_;
    std::vector<std::string> concepts_, attributes_, categories_;
    std::shared_ptr<EmbeddingTable> table_;
    std::vector<double> map_;  // visual_dim x 2*word_dim, row major
};

/// Box with the same size as `b`, shifted along one axis so that its IoU with
/// `b` equals tau, and lying inside the image. Falls back to the smallest
/// shift direction that fits.
inline Box shifted_box(const Box& b, double tau, double width, double height, std::mt19937_64& rng) {
    double w = b.width(), h = b.height();
    double dx = w * (1.0 - tau) / (1.0 + tau), dy = h * (1.0 - tau) / (1.0 + tau);
    std::vector<Box> options{{b.x1 + dx, b.y1, b.x2 + dx, b.y2},
                             {b.x1 - dx, b.y1, b.x2 - dx, b.y2},
                             {b.x1, b.y1 + dy, b.x2, b.y2 + dy},
                             {b.x1, b.y1 - dy, b.x2, b.y2 - dy}};
    std::shuffle(options.begin(), options.end(), rng);
    for (const auto& o : options)
        if (o.x1 >= 0.0 && o.y1 >= 0.0 && o.x2 <= width && o.y2 <= height) return o;
    // Cannot happen for objects placed by the generator; clamp as a last resort.
    return options.front().clamped(width, height);
}

inline SceneRecord World::generate_scene(const std::string& id, std::mt19937_64& rng, bool ambiguous) const {
    using namespace synth_detail;
    const auto& sp = spec_;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    auto noisy = [&](std::vector<double> f, double sigma) {
        for (auto& x : f) x += sigma * gauss(rng);
        return f;
    };

    std::size_t k = pick(ambiguous ? std::max<std::size_t>(4, sp.min_objects) : sp.min_objects, sp.max_objects);
    // Concepts: distinct, except for ambiguous twins or a plural pair.
    std::vector<std::size_t> concept_pool(sp.n_concepts);
    std::iota(concept_pool.begin(), concept_pool.end(), 0);
    std::shuffle(concept_pool.begin(), concept_pool.end(), rng);
    std::vector<std::size_t> obj_concept(k), obj_attr(k);
    for (std::size_t i = 0; i < k; ++i) {
        obj_concept[i] = concept_pool[i];
        obj_attr[i] = pick(0, sp.n_attributes - 1);
    }
    // Slot assignment: slot[i] is the horizontal slot of object i.
    std::vector<std::size_t> slot(k);
    bool plural = false;
    std::string rel;
    if (ambiguous) {
        // Objects 0/1 are the twins, 2 the anchor, 3 the unmentioned decoy.
        obj_concept[1] = obj_concept[0];
        obj_attr[1] = obj_attr[0];
        rel = unit(rng) < 0.5 ? "left" : "right";
        // Two adjacent slot pairs: (twin, anchor) and (twin, decoy).
        // Choose two disjoint adjacent pairs among k slots.
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t a = 0; a + 1 < k; ++a)
            for (std::size_t b = a + 2; b + 1 < k; ++b) pairs.emplace_back(a, b);
        auto [p, q] = pairs[pick(0, pairs.size() - 1)];
        if (unit(rng) < 0.5) std::swap(p, q);
        // Pair at p holds twin 0 and the anchor; pair at q twin 1 and the decoy.
        auto place = [&](std::size_t twin, std::size_t other, std::size_t s0) {
            if (rel == "left") {
                slot[twin] = s0;
                slot[other] = s0 + 1;
            } else {
                slot[other] = s0;
                slot[twin] = s0 + 1;
            }
        };
        place(0, 2, p);
        place(1, 3, q);
        std::vector<std::size_t> rest;
        for (std::size_t s = 0; s < k; ++s)
            if (s != p && s != p + 1 && s != q && s != q + 1) rest.push_back(s);
        std::shuffle(rest.begin(), rest.end(), rng);
        for (std::size_t i = 4; i < k; ++i) slot[i] = rest[i - 4];
    } else {
        std::iota(slot.begin(), slot.end(), 0);
        std::shuffle(slot.begin(), slot.end(), rng);
        if (k >= 3 && unit(rng) < sp.plural_rate) {
            plural = true;
            obj_concept[1] = obj_concept[0];
        }
    }

    SceneRecord s;
    s.scene_id = id;
    s.width = sp.width;
    s.height = sp.height;
    double slot_w = sp.width / static_cast<double>(k);
    std::vector<std::vector<double>> clean(k);
    for (std::size_t i = 0; i < k; ++i) {
        double w = slot_w * (0.45 + 0.4 * unit(rng));
        double h = sp.height * (0.3 + 0.5 * unit(rng));
        double x1 = slot_w * static_cast<double>(slot[i]) + (slot_w - w) * unit(rng);
        double y1 = (sp.height - h) * unit(rng);
        Box b{x1, y1, x1 + w, y1 + h};
        clean[i] = object_feature(obj_concept[i], obj_attr[i]);
        s.gt_boxes.push_back({b, concept_name(obj_concept[i]), noisy(clean[i], sp.feature_noise)});
    }
    std::vector<double> background(sp.visual_dim);
    for (auto& x : background) x = gauss(rng);
    s.image_feature.assign(sp.visual_dim, 0.0);
    for (const auto& g : s.gt_boxes)
        for (std::size_t d = 0; d < sp.visual_dim; ++d) s.image_feature[d] += g.feature[d] / static_cast<double>(k);
    s.image_feature = noisy(s.image_feature, sp.image_noise);

    // Proposals: a fixed number of high-IoU ones spread round-robin over the objects.
    std::size_t object_props = k * sp.proposals_per_object;
    std::size_t total = object_props + sp.background_proposals;
    auto n_pos = std::min<std::size_t>(
        object_props, static_cast<std::size_t>(std::llround(sp.positive_proposal_fraction * static_cast<double>(total))));
    for (std::size_t r = 0; r < sp.proposals_per_object; ++r)
        for (std::size_t i = 0; i < k; ++i) {
            bool positive = r * k + i < n_pos;
            double tau = positive ? 0.72 + 0.23 * unit(rng) : 0.05 + 0.6 * unit(rng);
            Box pb = shifted_box(s.gt_boxes[i].box, tau, sp.width, sp.height, rng);
            double overlap = iou(pb, s.gt_boxes[i].box);
            std::vector<double> f(sp.visual_dim);
            for (std::size_t d = 0; d < sp.visual_dim; ++d)
                f[d] = overlap * clean[i][d] + (1.0 - overlap) * background[d];
            s.proposals.push_back({pb, noisy(f, sp.feature_noise)});
        }
    for (std::size_t r = 0; r < sp.background_proposals; ++r) {
        Box best{0, 0, 1, 1};
        double best_overlap = 2.0;
        for (int tries = 0; tries < 50; ++tries) {
            double w = sp.width * (0.05 + 0.2 * unit(rng)), h = sp.height * (0.05 + 0.2 * unit(rng));
            double x = (sp.width - w) * unit(rng), y = (sp.height - h) * unit(rng);
            Box b{x, y, x + w, y + h};
            double m = 0.0;
            for (const auto& g : s.gt_boxes) m = std::max(m, iou(b, g.box));
            if (m < best_overlap) {
                best = b;
                best_overlap = m;
            }
            if (m < 0.3) break;
        }
        s.proposals.push_back({best, noisy(background, sp.feature_noise)});
    }

    // Sentence.
    auto article = [&] { return std::string(unit(rng) < 0.5 ? "a" : "the"); };
    auto noun_phrase = [&](std::size_t obj) {
        std::vector<std::string> t{article()};
        if (unit(rng) < sp.attribute_mention_rate) t.push_back(attribute(obj_attr[obj]));
        t.push_back(concept_name(obj_concept[obj]));
        return t;
    };
    auto connective = [&] { return std::vector<std::string>{connective_words()[pick(0, connective_words().size() - 1)]}; };
    auto entry = [&](std::vector<std::string> tokens, std::vector<std::size_t> gt, std::size_t cat_obj, bool amb) {
        PhraseEntry e;
        e.tokens = std::move(tokens);
        e.groundable = true;
        e.gt = std::move(gt);
        e.category = category(obj_concept[cat_obj]);
        e.ambiguous = amb;
        return e;
    };
    auto filler = [&](std::vector<std::string> tokens) {
        PhraseEntry e;
        e.tokens = std::move(tokens);
        return e;
    };

    std::size_t mentions = pick(sp.min_mentions, std::min(sp.max_mentions, k));
    if (ambiguous) {
        std::vector<std::string> t{"the", rel};
        if (unit(rng) < sp.attribute_mention_rate) t.push_back(attribute(obj_attr[0]));
        t.push_back(concept_name(obj_concept[0]));
        s.phrases.push_back(entry(t, {0}, 0, true));
        s.phrases.push_back(filler({"of"}));
        s.phrases.push_back(entry(noun_phrase(2), {2}, 2, false));
        std::vector<std::size_t> others;
        for (std::size_t i = 4; i < k; ++i) others.push_back(i);
        std::shuffle(others.begin(), others.end(), rng);
        for (std::size_t m = 2; m < mentions && m - 2 < others.size(); ++m) {
            s.phrases.push_back(filler(connective()));
            s.phrases.push_back(entry(noun_phrase(others[m - 2]), {others[m - 2]}, others[m - 2], false));
        }
    } else {
        // Mentioned objects; the plural pair (objects 0 and 1) is one phrase.
        std::vector<std::size_t> objs;
        for (std::size_t i = plural ? 2 : 0; i < k; ++i) objs.push_back(i);
        std::shuffle(objs.begin(), objs.end(), rng);
        std::vector<std::vector<std::size_t>> referents;
        if (plural) referents.push_back({0, 1});
        for (std::size_t i = 0; referents.size() < mentions && i < objs.size(); ++i) referents.push_back({objs[i]});
        std::shuffle(referents.begin(), referents.end(), rng);
        for (std::size_t m = 0; m < referents.size(); ++m) {
            if (m > 0) s.phrases.push_back(filler(connective()));
            const auto& r = referents[m];
            if (r.size() == 2)
                s.phrases.push_back(entry({"the", "two", concept_name(obj_concept[0])}, r, 0, false));
            else
                s.phrases.push_back(entry(noun_phrase(r[0]), r, r[0], false));
        }
    }
    s.validate();
    return s;
}

/// Resolves an ambiguous phrase the way its relation word describes: the
/// object of the same concept nearest to the anchor (the next groundable
/// phrase) on the named side. Returns the gt index, or none when the phrase
/// carries no relation or no anchor.
inline std::optional<std::size_t> relational_oracle(const SceneRecord& s, std::size_t phrase) {
    const auto& ph = s.phrases.at(phrase);
    if (ph.tokens.size() < 3) return std::nullopt;
    const auto& rel = ph.tokens[1];
    if (rel != "left" && rel != "right") return std::nullopt;
    const auto& concept_word = ph.tokens.back();
    std::optional<std::size_t> anchor;
    for (std::size_t j = phrase + 1; j < s.phrases.size(); ++j)
        if (s.phrases[j].groundable) {
            anchor = s.phrases[j].gt.at(0);
            break;
        }
    if (!anchor) return std::nullopt;
    double ax = s.gt_boxes[*anchor].box.center_x();
    std::optional<std::size_t> best;
    double best_d = 0.0;
    for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
        if (s.gt_boxes[i].concept_name != concept_word) continue;
        double d = rel == "left" ? ax - s.gt_boxes[i].box.center_x() : s.gt_boxes[i].box.center_x() - ax;
        if (d > 0.0 && (!best || d < best_d)) {
            best = i;
            best_d = d;
        }
    }
    return best;
}

/// Ground-truth phrase/box feature pairs of a split, one per gt box of every
/// groundable phrase.
inline std::vector<PretrainPair> pretrain_pairs(const std::vector<SceneRecord>& scenes) {
    std::vector<PretrainPair> out;
    for (const auto& s : scenes)
        for (const auto& ph : s.phrases)
            if (ph.groundable)
                for (auto i : ph.gt) out.push_back({ph.tokens, s.gt_boxes[i].feature});
    return out;
}

/// Retrieval queries: each single-referent, unambiguous phrase against all gt
/// boxes of its scene.
inline std::vector<RecallQuery> recall_queries(const std::vector<SceneRecord>& scenes) {
    std::vector<RecallQuery> out;
    for (const auto& s : scenes)
        for (const auto& ph : s.phrases) {
            if (!ph.groundable || ph.ambiguous || ph.gt.size() != 1) continue;
            RecallQuery q;
            q.tokens = ph.tokens;
            for (const auto& g : s.gt_boxes) q.candidates.push_back(g.feature);
            q.truth = ph.gt[0];
            out.push_back(std::move(q));
        }
    return out;
}

}  // namespace seqground
