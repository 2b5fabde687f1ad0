#include "maskclu/probe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "maskclu/errors.hpp"
#include "maskclu/optim.hpp"
#include "maskclu/trainer.hpp"

namespace maskclu {

std::vector<std::vector<double>> extract_descriptors(const Model& model, const TrainConfig& cfg,
                                                     std::span<const PointCloud> clouds) {
    NoGradGuard no_grad;
    set_matmul_precision(cfg.precision);
    std::vector<std::vector<double>> out;
    out.reserve(clouds.size());
    for (std::size_t i = 0; i < clouds.size(); ++i) {
        const PatchSet patches = build_patches(clouds[i], cfg.patches, cfg.k_patch, patch_seed(cfg, i));
        out.push_back(global_descriptor(model, patches).values());
    }
    return out;
}

ProbeResult fit_linear_probe(const std::vector<std::vector<double>>& features, std::span<const int> raw_labels,
                             const ProbeOptions& options) {
    if (features.size() != raw_labels.size() || features.empty()) {
        throw ContractError("linear_probe: need one label per sample");
    }
    std::map<int, std::size_t> class_index;
    for (int l : raw_labels) {
        class_index.emplace(l, 0);
    }
    if (class_index.size() < 2) {
        throw ContractError("linear_probe: dataset has a single class");
    }
    std::size_t next = 0;
    for (auto& [label, idx] : class_index) {
        idx = next++;
    }
    std::vector<std::size_t> labels(raw_labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        labels[i] = class_index.at(raw_labels[i]);
    }
    if (options.shuffle_labels) {
        Rng rng(mix_seed(options.seed, 0x7368756666ULL));
        rng.shuffle(labels);
    }

    const std::size_t width = features.front().size();
    const std::size_t classes = class_index.size();
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < features.size(); ++i) {
        (i % 5 == 4 ? test : train).push_back(i);
    }
    if (train.empty() || test.empty()) {
        throw ContractError("linear_probe: need at least five samples for the 80/20 split");
    }

    std::vector<double> mu(width, 0.0), sigma(width, 0.0);
    for (std::size_t i : train) {
        for (std::size_t j = 0; j < width; ++j) {
            mu[j] += features[i][j];
        }
    }
    for (double& m : mu) {
        m /= static_cast<double>(train.size());
    }
    for (std::size_t i : train) {
        for (std::size_t j = 0; j < width; ++j) {
            sigma[j] += (features[i][j] - mu[j]) * (features[i][j] - mu[j]);
        }
    }
    for (double& s : sigma) {
        s = std::sqrt(s / static_cast<double>(train.size()));
        s = s > 1e-12 ? s : 1.0;
    }
    auto design = [&](const std::vector<std::size_t>& idx) {
        std::vector<double> v;
        v.reserve(idx.size() * width);
        for (std::size_t i : idx) {
            for (std::size_t j = 0; j < width; ++j) {
                v.push_back((features[i][j] - mu[j]) / sigma[j]);
            }
        }
        return Tensor::from({idx.size(), width}, std::move(v));
    };
    auto one_hot = [&](const std::vector<std::size_t>& idx) {
        std::vector<double> v(idx.size() * classes, 0.0);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            v[r * classes + labels[idx[r]]] = 1.0;
        }
        return Tensor::from({idx.size(), classes}, std::move(v));
    };
    const Tensor x_train = design(train);
    const Tensor y_train = one_hot(train);
    const Tensor x_test = design(test);

    Rng rng(mix_seed(options.seed, 0x70726f6265ULL));
    Linear layer(width, classes, rng);
    AdamW optimizer(layer.parameters(), AdamW::Options{0.9, 0.999, 1e-8, 0.0});
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
        optimizer.zero_grad();
        const Tensor probs = softmax(layer(x_train));
        const Tensor loss = scale(sum(mul(y_train, log(add_scalar(probs, 1e-300)))),
                                  -1.0 / static_cast<double>(train.size()));
        loss.backward();
        optimizer.step(options.learning_rate);
    }

    NoGradGuard no_grad;
    auto accuracy = [&](const Tensor& x, const std::vector<std::size_t>& idx) {
        const Tensor logits = layer(x);
        std::size_t hits = 0;
        for (std::size_t r = 0; r < idx.size(); ++r) {
            const auto row = logits.data().subspan(r * classes, classes);
            const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
            hits += pred == labels[idx[r]];
        }
        return static_cast<double>(hits) / static_cast<double>(idx.size());
    };
    ProbeResult result;
    result.accuracy = accuracy(x_test, test);
    result.train_accuracy = accuracy(x_train, train);
    result.train_count = train.size();
    result.test_count = test.size();
    result.classes = classes;
    return result;
}

ProbeResult linear_probe(const Model& model, const TrainConfig& cfg, std::span<const PointCloud> clouds,
                         const ProbeOptions& options) {
    std::vector<int> labels;
    labels.reserve(clouds.size());
    for (const PointCloud& c : clouds) {
        if (!c.label) {
            throw ContractError("linear_probe: every cloud needs a class label");
        }
        labels.push_back(*c.label);
    }
    if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels.front(); })) {
        throw ContractError("linear_probe: dataset has a single class");
    }
    return fit_linear_probe(extract_descriptors(model, cfg, clouds), labels, options);
}

}  // namespace maskclu
