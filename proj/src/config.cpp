#include "maskclu/config.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "maskclu/errors.hpp"

namespace maskclu {

using nlohmann::json;

void TrainConfig::validate() const {
    auto positive = [](std::size_t v, const char* name) {
        if (v == 0) {
            throw ParameterError(std::string("config: ") + name + " must be positive");
        }
    };
    positive(points_per_cloud, "points_per_cloud");
    positive(patches, "patches");
    positive(k_patch, "k_patch");
    positive(k_graph, "k_graph");
    positive(embed_dim, "embed_dim");
    positive(encoder_depth, "encoder_depth");
    positive(decoder_depth, "decoder_depth");
    positive(heads, "heads");
    positive(sinkhorn_iters, "sinkhorn_iters");
    positive(batch_size, "batch_size");
    positive(clouds_per_class, "clouds_per_class");
    if (max_steps == 0) {
        positive(epochs, "epochs");
    }
    if (clusters < 2 || clusters > patches) {
        throw ParameterError("config: clusters must lie in [2, patches]");
    }
    if (patches > points_per_cloud || k_patch > points_per_cloud) {
        throw ParameterError("config: patches and k_patch cannot exceed points_per_cloud");
    }
    if (k_graph >= patches) {
        throw ParameterError("config: k_graph must be smaller than patches");
    }
    if (embed_dim % heads != 0) {
        throw ParameterError("config: embed_dim must be divisible by heads");
    }
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) {
        throw ParameterError("config: mask_ratio must lie in (0, 1)");
    }
    if (!(temperature > 0.0) || !(epsilon > 0.0) || !(marginal_tol > 0.0)) {
        throw ParameterError("config: temperature, epsilon and marginal_tol must be positive");
    }
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0) || !(noise >= 0.0)) {
        throw ParameterError("config: learning_rate, weight_decay and noise must be nonnegative");
    }
}

std::size_t TrainConfig::total_steps(std::size_t dataset_size) const {
    if (max_steps > 0) {
        return max_steps;
    }
    return epochs * ((dataset_size + batch_size - 1) / batch_size);
}

namespace {

json to_object(const TrainConfig& c) {
    return json{{"points_per_cloud", c.points_per_cloud},
                {"patches", c.patches},
                {"k_patch", c.k_patch},
                {"k_graph", c.k_graph},
                {"embed_dim", c.embed_dim},
                {"encoder_depth", c.encoder_depth},
                {"decoder_depth", c.decoder_depth},
                {"heads", c.heads},
                {"clusters", c.clusters},
                {"temperature", c.temperature},
                {"mask_ratio", c.mask_ratio},
                {"epsilon", c.epsilon},
                {"sinkhorn_iters", c.sinkhorn_iters},
                {"marginal_tol", c.marginal_tol},
                {"sinkhorn_scaling", c.sinkhorn_scaling},
                {"learning_rate", c.learning_rate},
                {"weight_decay", c.weight_decay},
                {"batch_size", c.batch_size},
                {"epochs", c.epochs},
                {"max_steps", c.max_steps},
                {"seed", c.seed},
                {"precision", c.precision == Precision::f64 ? "f64" : "f32"},
                {"clouds_per_class", c.clouds_per_class},
                {"noise", c.noise}};
}

template <typename T>
void read_field(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) {
        return;
    }
    const json& v = obj.at(key);
    if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) {
            throw ConfigError(std::string("config: '") + key + "' must be true or false");
        }
    } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) {
            throw ConfigError(std::string("config: '") + key + "' must be a number");
        }
    } else {
        if (!v.is_number_unsigned()) {
            throw ConfigError(std::string("config: '") + key + "' must be a nonnegative integer");
        }
    }
    out = v.get<T>();
}

}  // namespace

std::string to_json(const TrainConfig& cfg) { return to_object(cfg).dump(2); }

TrainConfig config_from_json(std::string_view text) {
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) {
        throw ConfigError("config: top level must be a JSON object");
    }
    TrainConfig cfg;
    const json known = to_object(cfg);
    for (const auto& [key, value] : obj.items()) {
        if (!known.contains(key)) {
            throw ConfigError("config: unknown key '" + key + "'");
        }
    }
    read_field(obj, "points_per_cloud", cfg.points_per_cloud);
    read_field(obj, "patches", cfg.patches);
    read_field(obj, "k_patch", cfg.k_patch);
    read_field(obj, "k_graph", cfg.k_graph);
    read_field(obj, "embed_dim", cfg.embed_dim);
    read_field(obj, "encoder_depth", cfg.encoder_depth);
    read_field(obj, "decoder_depth", cfg.decoder_depth);
    read_field(obj, "heads", cfg.heads);
    read_field(obj, "clusters", cfg.clusters);
    read_field(obj, "temperature", cfg.temperature);
    read_field(obj, "mask_ratio", cfg.mask_ratio);
    read_field(obj, "epsilon", cfg.epsilon);
    read_field(obj, "sinkhorn_iters", cfg.sinkhorn_iters);
    read_field(obj, "marginal_tol", cfg.marginal_tol);
    read_field(obj, "sinkhorn_scaling", cfg.sinkhorn_scaling);
    read_field(obj, "learning_rate", cfg.learning_rate);
    read_field(obj, "weight_decay", cfg.weight_decay);
    read_field(obj, "batch_size", cfg.batch_size);
    read_field(obj, "epochs", cfg.epochs);
    read_field(obj, "max_steps", cfg.max_steps);
    read_field(obj, "seed", cfg.seed);
    read_field(obj, "clouds_per_class", cfg.clouds_per_class);
    read_field(obj, "noise", cfg.noise);
    if (obj.contains("precision")) {
        const json& p = obj.at("precision");
        if (p == "f64") {
            cfg.precision = Precision::f64;
        } else if (p == "f32") {
            cfg.precision = Precision::f32;
        } else {
            throw ConfigError("config: 'precision' must be \"f64\" or \"f32\"");
        }
    }
    cfg.validate();
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return config_from_json(ss.str());
}

void save_config(const std::filesystem::path& path, const TrainConfig& cfg) {
    std::ofstream out(path);
    if (!out) {
        throw ConfigError("cannot write config " + path.string());
    }
    out << to_json(cfg) << '\n';
}

}  // namespace maskclu
