// Flat parameter storage with named dense layers, plus JSON checkpoints.
#pragma once

#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hstcl/common.hpp"
#include "hstcl/tensor.hpp"

namespace hstcl {

// All parameters of one network live in a single flat vector, so Adam,
// EMA and finite differences can treat the model as one array. Layers are
// named views into that vector.
class ParamStore {
public:
    struct Layer {
        std::string name;
        size_t w_off = 0;
        size_t b_off = 0; // == npos when no bias
        size_t out = 0, in = 0;
        bool bias = true;
        static constexpr size_t npos = size_t(-1);
    };

    int add_dense(const std::string& name, size_t in, size_t out, bool bias = true) {
        Layer l;
        l.name = name;
        l.in = in;
        l.out = out;
        l.bias = bias;
        l.w_off = data_.size();
        data_.resize(data_.size() + out * in, 0.0);
        l.b_off = bias ? data_.size() : Layer::npos;
        if (bias) data_.resize(data_.size() + out, 0.0);
        layers_.push_back(l);
        return int(layers_.size()) - 1;
    }

    size_t size() const { return data_.size(); }
    std::vector<double>& flat() { return data_; }
    const std::vector<double>& flat() const { return data_; }
    const std::vector<Layer>& layers() const { return layers_; }
    const Layer& layer(int id) const { return layers_[size_t(id)]; }

    std::span<double> W(int id) {
        const Layer& l = layers_[size_t(id)];
        return {data_.data() + l.w_off, l.out * l.in};
    }
    std::span<const double> W(int id) const {
        const Layer& l = layers_[size_t(id)];
        return {data_.data() + l.w_off, l.out * l.in};
    }
    std::span<double> b(int id) {
        const Layer& l = layers_[size_t(id)];
        return l.bias ? std::span<double>{data_.data() + l.b_off, l.out} : std::span<double>{};
    }
    std::span<const double> b(int id) const {
        const Layer& l = layers_[size_t(id)];
        return l.bias ? std::span<const double>{data_.data() + l.b_off, l.out}
                      : std::span<const double>{};
    }

    // y = W x + b for layer `id`
    void apply(int id, const double* x, double* y) const {
        const Layer& l = layers_[size_t(id)];
        dense_apply_raw(data_.data() + l.w_off, l.bias ? data_.data() + l.b_off : nullptr, l.out,
                        l.in, x, y);
    }

    // Glorot-uniform weights; small nonzero biases so that exactly-zero
    // inputs still map away from the origin (cosine needs nonzero vectors).
    void init_random(Rng& rng, double bias_range = 0.1) {
        for (const Layer& l : layers_) {
            const double s = std::sqrt(6.0 / double(l.in + l.out));
            for (size_t i = 0; i < l.out * l.in; ++i) data_[l.w_off + i] = rng.uniform(-s, s);
            if (l.bias)
                for (size_t i = 0; i < l.out; ++i)
                    data_[l.b_off + i] = rng.uniform(-bias_range, bias_range);
        }
    }

    nlohmann::json to_json() const {
        nlohmann::json layers = nlohmann::json::object();
        for (const Layer& l : layers_) {
            nlohmann::json jl;
            jl["shape"] = {l.out, l.in};
            jl["values"] = std::vector<double>(data_.begin() + long(l.w_off),
                                               data_.begin() + long(l.w_off + l.out * l.in));
            if (l.bias) {
                jl["bias_shape"] = {l.out};
                jl["bias_values"] = std::vector<double>(data_.begin() + long(l.b_off),
                                                        data_.begin() + long(l.b_off + l.out));
            }
            layers[l.name] = std::move(jl);
        }
        return layers;
    }

    // Layout must already match (constructed by the same model builder).
    void from_json(const nlohmann::json& layers) {
        for (const Layer& l : layers_) {
            if (!layers.contains(l.name)) throw IoError("checkpoint missing layer " + l.name);
            const auto& jl = layers.at(l.name);
            auto vals = jl.at("values").get<std::vector<double>>();
            if (vals.size() != l.out * l.in)
                throw IoError("checkpoint layer " + l.name + " has wrong size");
            std::copy(vals.begin(), vals.end(), data_.begin() + long(l.w_off));
            if (l.bias) {
                auto bvals = jl.at("bias_values").get<std::vector<double>>();
                if (bvals.size() != l.out) throw IoError("checkpoint bias " + l.name + " wrong size");
                std::copy(bvals.begin(), bvals.end(), data_.begin() + long(l.b_off));
            }
        }
    }

private:
    std::vector<double> data_;
    std::vector<Layer> layers_;
};

// Metadata block written alongside every checkpoint.
struct CheckpointMeta {
    size_t D = 0;
    size_t w = 0;
    uint64_t seed = 0;
    std::string version = "hstcl-0.1";
};

inline void save_checkpoint(const std::string& path, const ParamStore& online,
                            const ParamStore& target, const CheckpointMeta& meta) {
    nlohmann::json j;
    j["meta"] = {{"D", meta.D}, {"w", meta.w}, {"seed", meta.seed}, {"version", meta.version}};
    j["online"] = online.to_json();
    j["target"] = target.to_json();
    std::ofstream f(path);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f << j.dump() << "\n";
}

inline CheckpointMeta load_checkpoint(const std::string& path, ParamStore& online,
                                      ParamStore& target) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read checkpoint " + path);
    nlohmann::json j;
    f >> j;
    online.from_json(j.at("online"));
    target.from_json(j.at("target"));
    CheckpointMeta meta;
    meta.D = j.at("meta").at("D").get<size_t>();
    meta.w = j.at("meta").at("w").get<size_t>();
    meta.seed = j.at("meta").at("seed").get<uint64_t>();
    meta.version = j.at("meta").value("version", "");
    return meta;
}

} // namespace hstcl
