#include "maskclu/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <numbers>
#include <sstream>

#include "maskclu/errors.hpp"
#include "maskclu/rng.hpp"

namespace maskclu {

ShapeKind shape_kind_from_name(std::string_view name) {
    if (name == "sphere") return ShapeKind::sphere;
    if (name == "plane") return ShapeKind::plane;
    if (name == "box") return ShapeKind::box;
    if (name == "cylinder") return ShapeKind::cylinder;
    throw ConfigError("unknown shape generator '" + std::string(name) + "'");
}

std::string_view shape_kind_name(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::sphere:
            return "sphere";
        case ShapeKind::plane:
            return "plane";
        case ShapeKind::box:
            return "box";
        case ShapeKind::cylinder:
            return "cylinder";
    }
    return "unknown";
}

namespace {

using Mat3 = std::array<Vec3, 3>;

// Uniform random rotation from a normalized Gaussian quaternion.
Mat3 random_rotation(Rng& rng) {
    double q[4];
    double norm = 0.0;
    for (double& c : q) {
        c = rng.normal();
        norm += c * c;
    }
    norm = std::sqrt(norm);
    const double w = q[0] / norm, x = q[1] / norm, y = q[2] / norm, z = q[3] / norm;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
             {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
             {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

Vec3 rotate(const Mat3& r, const Vec3& p) {
    return {r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2], r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2]};
}

Vec3 unit_sphere_point(Rng& rng) {
    for (;;) {
        Vec3 p{rng.normal(), rng.normal(), rng.normal()};
        const double n = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        if (n > 1e-12) {
            return {p[0] / n, p[1] / n, p[2] / n};
        }
    }
}

// One surface sample of a centrally symmetric shape (its antipode is also on it).
struct Surface {
    ShapeKind kind;
    double a = 1.0;  // box half-extent y, or cylinder half-height
    double b = 1.0;  // box half-extent z

    Vec3 sample(Rng& rng) const {
        switch (kind) {
            case ShapeKind::sphere:
                return unit_sphere_point(rng);
            case ShapeKind::plane:
                return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), 0.0};
            case ShapeKind::box: {
                // Face pair chosen with probability proportional to its area.
                const double ax = a * b, ay = b, az = a;
                const double u = rng.uniform() * (ax + ay + az);
                const double s = rng.uniform() < 0.5 ? -1.0 : 1.0;
                if (u < ax) return {s, rng.uniform(-a, a), rng.uniform(-b, b)};
                if (u < ax + ay) return {rng.uniform(-1.0, 1.0), s * a, rng.uniform(-b, b)};
                return {rng.uniform(-1.0, 1.0), rng.uniform(-a, a), s * b};
            }
            case ShapeKind::cylinder: {
                const double side = 2.0 * std::numbers::pi * 2.0 * a;  // radius 1, height 2a
                const double caps = 2.0 * std::numbers::pi;
                const double theta = rng.uniform(0.0, 2.0 * std::numbers::pi);
                if (rng.uniform() * (side + caps) < side) {
                    return {std::cos(theta), std::sin(theta), rng.uniform(-a, a)};
                }
                const double r = std::sqrt(rng.uniform());
                return {r * std::cos(theta), r * std::sin(theta), rng.uniform() < 0.5 ? -a : a};
            }
        }
        return {0.0, 0.0, 0.0};
    }
};

PointCloud sample_shape(ShapeKind kind, double noise, std::size_t points, Rng& rng) {
    Surface surface{kind};
    if (kind == ShapeKind::box) {
        surface.a = rng.uniform(0.5, 1.0);
        surface.b = rng.uniform(0.5, 1.0);
    } else if (kind == ShapeKind::cylinder) {
        surface.a = rng.uniform(0.5, 1.5);
    }
    const Mat3 rot = random_rotation(rng);
    PointCloud cloud;
    cloud.label = static_cast<int>(kind);
    cloud.points.reserve(points);
    while (cloud.points.size() < points) {
        const Vec3 p = rotate(rot, surface.sample(rng));
        cloud.points.push_back(p);
        if (cloud.points.size() < points) {
            cloud.points.push_back({-p[0], -p[1], -p[2]});
        }
    }
    if (noise > 0.0) {
        for (Vec3& p : cloud.points) {
            for (double& c : p) {
                c += rng.normal(0.0, noise);
            }
        }
    }
    Vec3 mean{0.0, 0.0, 0.0};
    for (const Vec3& p : cloud.points) {
        for (int c = 0; c < 3; ++c) {
            mean[c] += p[c];
        }
    }
    for (double& c : mean) {
        c /= static_cast<double>(points);
    }
    double radius = 0.0;
    for (Vec3& p : cloud.points) {
        for (int c = 0; c < 3; ++c) {
            p[c] -= mean[c];
        }
        radius = std::max(radius, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    }
    if (radius > 0.0) {
        for (Vec3& p : cloud.points) {
            for (double& c : p) {
                c /= radius;
            }
        }
    }
    return cloud;
}

}  // namespace

std::vector<SyntheticShape> generate_dataset(const std::vector<DatasetRequest>& requests, double noise,
                                             std::uint64_t seed, std::size_t points_per_cloud) {
    if (!(noise >= 0.0)) {
        throw ParameterError("generate_dataset: noise must be nonnegative");
    }
    if (points_per_cloud == 0) {
        throw ParameterError("generate_dataset: points_per_cloud must be positive");
    }
    std::vector<ShapeKind> kinds;
    for (const auto& r : requests) {
        kinds.push_back(shape_kind_from_name(r.generator));
        if (r.count == 0) {
            throw ParameterError("generate_dataset: count for '" + r.generator + "' must be positive");
        }
    }
    std::vector<SyntheticShape> out;
    std::size_t index = 0;
    for (std::size_t r = 0; r < requests.size(); ++r) {
        for (std::size_t i = 0; i < requests[r].count; ++i, ++index) {
            Rng rng(mix_seed(seed, index, 0x73686170ULL));
            out.push_back({kinds[r], static_cast<int>(kinds[r]), sample_shape(kinds[r], noise, points_per_cloud, rng)});
        }
    }
    return out;
}

std::vector<SyntheticShape> four_class_dataset(std::size_t per_class, double noise, std::uint64_t seed,
                                               std::size_t points_per_cloud) {
    return generate_dataset(
        {{"sphere", per_class}, {"plane", per_class}, {"box", per_class}, {"cylinder", per_class}}, noise, seed,
        points_per_cloud);
}

std::vector<PointCloud> clouds_of(const std::vector<SyntheticShape>& shapes) {
    std::vector<PointCloud> out;
    out.reserve(shapes.size());
    for (const auto& s : shapes) {
        out.push_back(s.cloud);
    }
    return out;
}

DatasetSpec dataset_spec_from_json(std::string_view text) {
    using nlohmann::json;
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("dataset spec: invalid JSON: ") + e.what());
    }
    if (!obj.is_object() || !obj.contains("shapes") || !obj["shapes"].is_array()) {
        throw ConfigError("dataset spec: expected an object with a 'shapes' array");
    }
    for (const auto& [key, value] : obj.items()) {
        if (key != "shapes" && key != "noise" && key != "seed" && key != "points") {
            throw ConfigError("dataset spec: unknown key '" + key + "'");
        }
    }
    DatasetSpec spec;
    try {
        for (const auto& entry : obj["shapes"]) {
            spec.requests.push_back({entry.at("generator").get<std::string>(), entry.at("count").get<std::size_t>()});
        }
        spec.noise = obj.value("noise", spec.noise);
        spec.seed = obj.value("seed", spec.seed);
        spec.points = obj.value("points", spec.points);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dataset spec: ") + e.what());
    }
    return spec;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<SyntheticShape>& shapes) {
    std::filesystem::create_directories(dir);
    char name[64];
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        std::snprintf(name, sizeof name, "%05zu_%s.xyz", i, std::string(shape_kind_name(shapes[i].kind)).c_str());
        write_cloud(dir / name, shapes[i].cloud);
    }
}

std::vector<PointCloud> read_dataset(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".xyz") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<PointCloud> clouds;
    clouds.reserve(files.size());
    for (const auto& f : files) {
        clouds.push_back(read_cloud(f));
    }
    return clouds;
}

}  // namespace maskclu
