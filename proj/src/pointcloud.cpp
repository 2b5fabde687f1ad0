#include "maskclu/pointcloud.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "maskclu/errors.hpp"

namespace maskclu {

void validate_cloud(const PointCloud& cloud) {
    if (cloud.points.empty()) {
        throw ContractError("point cloud is empty");
    }
    for (const Vec3& p : cloud.points) {
        if (!std::isfinite(p[0]) || !std::isfinite(p[1]) || !std::isfinite(p[2])) {
            throw DomainError("point cloud contains a non-finite coordinate");
        }
    }
}

Tensor PatchSet::neighborhood_tensor() const {
    std::vector<double> v;
    v.reserve(neighborhoods.size() * 3);
    for (const Vec3& p : neighborhoods) {
        v.insert(v.end(), p.begin(), p.end());
    }
    return Tensor::from({neighborhoods.size(), 3}, std::move(v));
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
    const std::size_t h = cloud.size();
    if (n > h) {
        throw SizeError("farthest_point_sample: requested " + std::to_string(n) + " samples from " +
                        std::to_string(h) + " points");
    }
    std::vector<std::size_t> picked;
    if (n == 0) {
        return picked;
    }
    picked.reserve(n);
    Rng rng(seed);
    std::vector<double> min_dist(h, std::numeric_limits<double>::infinity());
    std::vector<bool> taken(h, false);
    std::size_t current = rng.index(h);
    for (std::size_t step = 0; step < n; ++step) {
        picked.push_back(current);
        taken[current] = true;
        if (step + 1 == n) {
            break;
        }
        const Vec3& c = cloud.points[current];
        std::size_t best = h;
        double best_dist = -1.0;
        for (std::size_t i = 0; i < h; ++i) {
            if (taken[i]) {
                continue;
            }
            min_dist[i] = std::min(min_dist[i], squared_distance(cloud.points[i], c));
            if (min_dist[i] > best_dist) {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
    }
    return picked;
}

std::vector<std::size_t> knn(std::span<const Vec3> queries, std::span<const Vec3> reference, std::size_t k) {
    const std::size_t h = reference.size();
    if (k > h) {
        throw SizeError("knn: k=" + std::to_string(k) + " exceeds reference size " + std::to_string(h));
    }
    std::vector<std::size_t> out(queries.size() * k);
    std::vector<std::size_t> order(h);
    std::vector<double> dist(h);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        for (std::size_t i = 0; i < h; ++i) {
            dist[i] = squared_distance(queries[q], reference[i]);
        }
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                          [&](std::size_t a, std::size_t b) {
                              return dist[a] < dist[b] || (dist[a] == dist[b] && a < b);
                          });
        std::copy_n(order.begin(), k, out.begin() + static_cast<std::ptrdiff_t>(q * k));
    }
    return out;
}

PatchSet build_patches(const PointCloud& cloud, std::size_t n, std::size_t k_patch, std::uint64_t seed) {
    validate_cloud(cloud);
    if (n == 0 || k_patch == 0) {
        throw ParameterError("build_patches: patch count and patch size must be positive");
    }
    PatchSet patches;
    patches.k_patch = k_patch;
    patches.center_indices = farthest_point_sample(cloud, n, seed);
    patches.centers.reserve(n);
    for (std::size_t idx : patches.center_indices) {
        patches.centers.push_back(cloud.points[idx]);
    }
    patches.neighbor_indices = knn(patches.centers, cloud.points, k_patch);
    patches.neighborhoods.resize(n * k_patch);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& c = patches.centers[i];
        for (std::size_t j = 0; j < k_patch; ++j) {
            const Vec3& p = cloud.points[patches.neighbor_indices[i * k_patch + j]];
            patches.neighborhoods[i * k_patch + j] = {p[0] - c[0], p[1] - c[1], p[2] - c[2]};
        }
    }
    return patches;
}

MiniPointNet::MiniPointNet(std::size_t out_dim, Rng& rng)
    : first_in(3, 64, rng), first_out(64, 128, rng), second_in(256, 256, rng), second_out(256, out_dim, rng) {}

NamedParameters MiniPointNet::parameters() const {
    NamedParameters p;
    append_prefixed(p, "first_in", first_in.parameters());
    append_prefixed(p, "first_out", first_out.parameters());
    append_prefixed(p, "second_in", second_in.parameters());
    append_prefixed(p, "second_out", second_out.parameters());
    return p;
}

Tensor embed_patches(const PatchSet& patches, const MiniPointNet& encoder) {
    const std::size_t k = patches.k_patch;
    if (k == 0 || patches.neighborhoods.size() != patches.count() * k) {
        throw ConfigError("embed_patches: neighborhoods do not match " + std::to_string(patches.count()) +
                          " patches of " + std::to_string(k) + " points");
    }
    if (encoder.first_in.in_features() != 3 ||
        encoder.first_out.in_features() != encoder.first_in.out_features() ||
        encoder.second_in.in_features() != 2 * encoder.first_out.out_features() ||
        encoder.second_out.in_features() != encoder.second_in.out_features()) {
        throw ConfigError("embed_patches: point encoder layer widths are inconsistent");
    }
    const Tensor points = patches.neighborhood_tensor();
    Tensor local = encoder.first_out(relu(encoder.first_in(points)));  // [N*k, 128]
    Tensor pooled = segment_max_rows(local, k);                          // [N, 128]
    Tensor joined = concat_cols({repeat_rows(pooled, k), local});       // [N*k, 256]
    Tensor feat = encoder.second_out(relu(encoder.second_in(joined)));  // [N*k, d]
    return segment_max_rows(feat, k);
}

// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
    const auto ws = " \t\r\n\v\f";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) {
        return {};
    }
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) {
            ++i;
        }
        std::size_t j = i;
        while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) {
            ++j;
        }
        if (j > i) {
            out.push_back(s.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

}  // namespace

XyzData parse_xyz(std::string_view text) {
    XyzData data;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    bool any_label = false;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        const std::string_view line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') {
            if (end == text.size()) {
                break;
            }
            continue;
        }
        const auto fields = split_ws(line);
        if (fields.size() != 3 && fields.size() != 4) {
            throw FormatError("xyz line " + std::to_string(line_no) + ": expected 3 or 4 fields, got " +
                              std::to_string(fields.size()));
        }
        Vec3 p{};
        for (std::size_t c = 0; c < 3; ++c) {
            const auto f = fields[c];
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), p[c]);
            if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(p[c])) {
                throw FormatError("xyz line " + std::to_string(line_no) + ": bad coordinate '" + std::string(f) + "'");
            }
        }
        const bool has_label = fields.size() == 4;
        if (!data.points.empty() && has_label != any_label) {
            throw FormatError("xyz line " + std::to_string(line_no) + ": label column present on some lines only");
        }
        any_label = has_label;
        if (has_label) {
            long label = 0;
            const auto f = fields[3];
            auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), label);
            if (ec != std::errc() || ptr != f.data() + f.size()) {
                throw FormatError("xyz line " + std::to_string(line_no) + ": bad label '" + std::string(f) + "'");
            }
            data.labels.push_back(label);
        }
        data.points.push_back(p);
        if (end == text.size()) {
            break;
        }
    }
    return data;
}

XyzData read_xyz(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_xyz(ss.str());
}

std::string format_xyz(std::span<const Vec3> points, std::span<const long> labels) {
    if (!labels.empty() && labels.size() != points.size()) {
        throw ContractError("format_xyz: label count does not match point count");
    }
    std::string out;
    out.reserve(points.size() * 72);
    char buf[128];
    for (std::size_t i = 0; i < points.size(); ++i) {
        int len = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", points[i][0], points[i][1], points[i][2]);
        out.append(buf, static_cast<std::size_t>(len));
        if (!labels.empty()) {
            len = std::snprintf(buf, sizeof buf, " %ld", labels[i]);
            out.append(buf, static_cast<std::size_t>(len));
        }
        out.push_back('\n');
    }
    return out;
}

void write_xyz(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const long> labels) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write " + path.string());
    }
    out << format_xyz(points, labels);
}

PointCloud read_cloud(const std::filesystem::path& path) {
    XyzData data = read_xyz(path);
    PointCloud cloud{std::move(data.points), std::nullopt};
    if (!data.labels.empty()) {
        const long first = data.labels.front();
        if (!std::all_of(data.labels.begin(), data.labels.end(), [first](long l) { return l == first; })) {
            throw FormatError(path.string() + ": per-point labels differ; expected one class label per cloud");
        }
        cloud.label = static_cast<int>(first);
    }
    return cloud;
}

void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
    if (cloud.label) {
        std::vector<long> labels(cloud.size(), *cloud.label);
        write_xyz(path, cloud.points, labels);
    } else {
        write_xyz(path, cloud.points);
    }
}

}  // namespace maskclu
