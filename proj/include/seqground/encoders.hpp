#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "seqground/nn.hpp"

namespace seqground {

/// Fixed word vectors plus a learned row for tokens outside the vocabulary.
class EmbeddingTable {
  public:
    EmbeddingTable(std::vector<std::string> tokens, std::vector<std::vector<double>> vectors) {
        if (tokens.size() != vectors.size()) throw InputError("one vector per token is required");
        if (tokens.empty()) throw InputError("embedding table is empty");
        dim_ = vectors.front().size();
        if (dim_ == 0) throw InputError("embedding vectors are empty");
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            if (vectors[i].size() != dim_)
                throw InputError("embedding for '" + tokens[i] + "' has dimension " + std::to_string(vectors[i].size()) +
                                 ", expected " + std::to_string(dim_));
            if (!detail::all_finite(vectors[i])) throw NumericError("embedding for '" + tokens[i] + "' is not finite");
            if (!index_.emplace(tokens[i], i).second) throw InputError("duplicate token '" + tokens[i] + "'");
            rows_.insert(rows_.end(), vectors[i].begin(), vectors[i].end());
        }
        tokens_ = std::move(tokens);
        unk_ = Tensor::zeros({1, dim_}, true);
    }

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return tokens_.size(); }
    const std::vector<std::string>& tokens() const { return tokens_; }

    std::optional<std::size_t> index(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::span<const double> vector(std::size_t i) const { return {rows_.data() + i * dim_, dim_}; }

    // Trainable row used for every unknown token.
    const Tensor& unk() const { return unk_; }

    /// Copy whose unknown-token row is a separate parameter.
    EmbeddingTable with_own_unk() const {
        EmbeddingTable t = *this;
        t.unk_ = unk_.clone();
        return t;
    }

    /// Unweighted mean of the token vectors, 1 x dim.
    Tensor pooled(std::span<const std::string> tokens) const {
        if (tokens.empty()) throw InputError("cannot pool an empty token list");
        std::vector<double> mean(dim_, 0.0);
        std::size_t unknown = 0;
        for (const auto& tok : tokens) {
            auto i = index(tok);
            if (!i) {
                ++unknown;
                continue;
            }
            auto v = vector(*i);
            for (std::size_t c = 0; c < dim_; ++c) mean[c] += v[c];
        }
        double n = static_cast<double>(tokens.size());
        for (auto& v : mean) v /= n;
        Tensor known({1, dim_}, std::move(mean));
        if (unknown == 0) return known;
        return add(known, scale(unk_, static_cast<double>(unknown) / n));
    }

    static EmbeddingTable load_jsonl(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open embedding table '" + path + "'");
        std::vector<std::string> tokens;
        std::vector<std::vector<double>> vectors;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            try {
                auto j = nlohmann::json::parse(line);
                tokens.push_back(j.at("token").get<std::string>());
                vectors.push_back(j.at("vector").get<std::vector<double>>());
            } catch (const nlohmann::json::exception& e) {
                throw ParseError("bad embedding record: " + std::string(e.what()), lineno);
            }
            if (vectors.back().size() != vectors.front().size())
                throw ParseError("embedding dimension differs from the first record", lineno);
        }
        return EmbeddingTable(std::move(tokens), std::move(vectors));
    }

    void save_jsonl(const std::string& path) const {
        std::ofstream os(path);
        if (!os) throw IoError("cannot write embedding table '" + path + "'");
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            auto v = vector(i);
            nlohmann::json j{{"token", tokens_[i]}, {"vector", std::vector<double>(v.begin(), v.end())}};
            os << j.dump() << '\n';
        }
    }

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<double> rows_;
    std::size_t dim_ = 0;
    Tensor unk_;
};

enum class Normalization { l2, none };

struct EncoderConfig {
    std::vector<std::size_t> widths{1500, 1000, 500};
    double dropout = 0.4;
    Normalization normalization = Normalization::l2;
};

/// Dropout on the input, dense layers with ReLU after each, then the
/// normalization layer. Works on a batch of rows.
class FeatureEncoder {
  public:
    FeatureEncoder() = default;
    FeatureEncoder(std::size_t input_dim, const EncoderConfig& cfg, std::mt19937_64& rng)
        : mlp_(input_dim, cfg.widths, true, rng), input_dim_(input_dim), dropout_(cfg.dropout),
          normalization_(cfg.normalization) {}

    std::size_t input_dim() const { return input_dim_; }
    std::size_t output_dim() const { return mlp_.out_dim(); }
    const Mlp& mlp() const { return mlp_; }

    Tensor forward(const Tensor& x, const Mode& mode) const {
        if (x.cols() != input_dim_)
            throw InputError("encoder input has dimension " + std::to_string(x.cols()) + ", expected " +
                             std::to_string(input_dim_));
        auto h = mlp_.forward(dropout(x, dropout_, mode.training, mode.rng));
        return normalization_ == Normalization::l2 ? l2_normalize_rows(h) : h;
    }

    ParameterSet parameters() const { return mlp_.parameters(); }

  private:
    Mlp mlp_;
    std::size_t input_dim_ = 0;
    double dropout_ = 0.0;
    Normalization normalization_ = Normalization::l2;
};

/// Phrase and visual encoders mapping into one joint space. The visual
/// encoder is shared by boxes and the full image.
struct Encoders {
    std::shared_ptr<const EmbeddingTable> table;
    FeatureEncoder phrase;
    FeatureEncoder visual;

    Encoders() = default;
    Encoders(std::shared_ptr<const EmbeddingTable> tbl, std::size_t visual_dim, const EncoderConfig& cfg,
             std::mt19937_64& rng)
        : table(std::make_shared<const EmbeddingTable>(tbl->with_own_unk())), phrase(table->dim(), cfg, rng), visual(visual_dim, cfg, rng) {
        if (phrase.output_dim() != visual.output_dim())
            throw ConfigError("phrase and visual encoders must share an output dimension");
    }

    std::size_t embed_dim() const { return phrase.output_dim(); }
    std::size_t visual_dim() const { return visual.input_dim(); }

    ParameterSet parameters() const {
        ParameterSet ps;
        ps.extend("phrase_fc.", phrase.parameters());
        ps.extend("visual_fc.", visual.parameters());
        ps.add("embedding.unk", table->unk());
        return ps;
    }
};

inline Tensor encode_phrase(const Encoders& enc, std::span<const std::string> tokens, const Mode& mode = {}) {
    if (tokens.empty()) throw InputError("phrase has no tokens");
    return enc.phrase.forward(enc.table->pooled(tokens), mode);
}

/// Encodes several phrases as the rows of one matrix.
inline Tensor encode_phrases(const Encoders& enc, const std::vector<std::vector<std::string>>& phrases,
                             const Mode& mode = {}) {
    if (phrases.empty()) throw InputError("no phrases to encode");
    std::vector<Tensor> pooled;
    for (const auto& p : phrases) {
        if (p.empty()) throw InputError("phrase has no tokens");
        pooled.push_back(enc.table->pooled(p));
    }
    return enc.phrase.forward(concat_rows(pooled), mode);
}

inline Tensor encode_box(const Encoders& enc, std::span<const double> feature, const Mode& mode = {}) {
    if (feature.size() != enc.visual_dim())
        throw InputError("box feature has dimension " + std::to_string(feature.size()) + ", expected " +
                         std::to_string(enc.visual_dim()));
    return enc.visual.forward(Tensor::row(feature), mode);
}

inline Tensor encode_image(const Encoders& enc, std::span<const double> feature, const Mode& mode = {}) {
    return encode_box(enc, feature, mode);
}

/// Encodes a matrix of box features (one per row).
inline Tensor encode_boxes(const Encoders& enc, const Tensor& features, const Mode& mode = {}) {
    return enc.visual.forward(features, mode);
}

}  // namespace seqground
