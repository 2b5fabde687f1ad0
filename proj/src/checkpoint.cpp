#include "maskclu/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "maskclu/errors.hpp"

namespace maskclu {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <typename T>
void put(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
  public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) {
            throw FormatError("checkpoint: unexpected end of data");
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_parameters(const NamedParameters& params) {
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape()) {
            put<std::uint64_t>(out, e);
        }
        const auto d = t.data();
        out.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
    }
    return out;
}

void deserialize_parameters(std::string_view bytes, const NamedParameters& params) {
    Reader in(bytes);
    if (in.take(sizeof kCheckpointMagic) != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic)) {
        throw FormatError("checkpoint: bad magic");
    }
    if (const auto v = in.get<std::uint32_t>(); v != kCheckpointVersion) {
        throw FormatError("checkpoint: unsupported version " + std::to_string(v));
    }
    const auto count = in.get<std::uint32_t>();
    if (count != params.size()) {
        throw ConfigError("checkpoint: holds " + std::to_string(count) + " parameters, architecture has " +
                          std::to_string(params.size()));
    }
    // Parse fully before touching any destination tensor.
    std::vector<std::string_view> payloads;
    payloads.reserve(count);
    for (const auto& [name, t] : params) {
        const auto len = in.get<std::uint32_t>();
        const std::string_view stored = in.take(len);
        if (stored != name) {
            throw ConfigError("checkpoint: expected parameter '" + name + "', found '" + std::string(stored) + "'");
        }
        const auto rank = in.get<std::uint32_t>();
        Shape shape(rank);
        for (auto& e : shape) {
            e = static_cast<std::size_t>(in.get<std::uint64_t>());
        }
        if (shape != t.shape()) {
            throw ConfigError("checkpoint: parameter '" + name + "' has shape " + shape_str(shape) +
                              ", architecture expects " + shape_str(t.shape()));
        }
        payloads.push_back(in.take(t.numel() * sizeof(double)));
    }
    if (!in.done()) {
        throw FormatError("checkpoint: trailing bytes after last parameter");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor target = params[i].second;
        std::memcpy(target.mutable_data().data(), payloads[i].data(), payloads[i].size());
    }
}

void save_checkpoint(const std::filesystem::path& path, const NamedParameters& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw FormatError("cannot write checkpoint " + path.string());
    }
    const std::string bytes = serialize_parameters(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void load_checkpoint(const std::filesystem::path& path, const NamedParameters& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError("cannot open checkpoint " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    deserialize_parameters(ss.str(), params);
}

}  // namespace maskclu
