#include "magn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace magn {

namespace {

static_assert(sizeof(float) == 4);

// Checkpoints are little-endian on disk.
void write_floats(std::ostream& out, const std::vector<float>& v) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * 4));
    } else {
        for (float f : v) {
            uint32_t u;
            std::memcpy(&u, &f, 4);
            char b[4] = {static_cast<char>(u), static_cast<char>(u >> 8),
                         static_cast<char>(u >> 16), static_cast<char>(u >> 24)};
            out.write(b, 4);
        }
    }
}

std::vector<float> read_floats(std::istream& in, size_t n, const std::string& path) {
    std::vector<float> v(n);
    if constexpr (std::endian::native == std::endian::little) {
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * 4));
    } else {
        for (size_t i = 0; i < n; ++i) {
            unsigned char b[4];
            in.read(reinterpret_cast<char*>(b), 4);
            const uint32_t u = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                               (static_cast<uint32_t>(b[2]) << 16) |
                               (static_cast<uint32_t>(b[3]) << 24);
            std::memcpy(&v[i], &u, 4);
        }
    }
    if (!in) throw DataError("checkpoint " + path + ": truncated data section");
    return v;
}

std::string shape_field(const Shape& s) {
    std::string out;
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += 'x';
        out += std::to_string(s[i]);
    }
    return out;
}

Shape parse_shape_field(const std::string& s, const std::string& path) {
    Shape shape;
    std::istringstream in(s);
    std::string part;
    while (std::getline(in, part, 'x')) {
        try {
            shape.push_back(std::stoi(part));
        } catch (const std::exception&) {
            throw DataError("checkpoint " + path + ": bad shape field '" + s + "'");
        }
    }
    if (shape.empty()) throw DataError("checkpoint " + path + ": empty shape field");
    return shape;
}

std::string expect_line(std::istream& in, const std::string& path) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("checkpoint " + path + ": unexpected end of header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

size_t parse_count(const std::string& line, const std::string& tag, const std::string& path) {
    if (line.rfind(tag + " ", 0) != 0)
        throw DataError("checkpoint " + path + ": expected '" + tag + " <n>', got '" + line + "'");
    try {
        return std::stoull(line.substr(tag.size() + 1));
    } catch (const std::exception&) {
        throw DataError("checkpoint " + path + ": bad count in '" + line + "'");
    }
}

} // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw DataError("cannot create " + tmp);
        out << kCheckpointMagic << '\n';
        out << "config " << data.config.size() << '\n';
        for (const auto& [k, v] : data.config) out << k << '=' << v << '\n';
        out << "manifest " << data.manifest.size() << '\n';
        int64_t offset = 0;
        for (const auto& [name, shape] : data.manifest) {
            out << name << ' ' << shape_field(shape) << ' ' << offset << '\n';
            offset += numel(shape);
        }
        if (offset != static_cast<int64_t>(data.params.size()))
            throw std::invalid_argument("checkpoint: manifest covers " + std::to_string(offset) +
                                        " values, params hold " +
                                        std::to_string(data.params.size()));
        out << "data " << data.params.size() << '\n';
        write_floats(out, data.params);
        out << "opt " << data.opt.size() << '\n';
        write_floats(out, data.opt);
        if (!out) throw DataError("failed writing " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path);
    if (expect_line(in, path) != kCheckpointMagic)
        throw DataError("checkpoint " + path + ": bad magic (expected " +
                        std::string(kCheckpointMagic) + ")");
    CheckpointData d;
    const size_t n_config = parse_count(expect_line(in, path), "config", path);
    for (size_t i = 0; i < n_config; ++i) {
        const std::string line = expect_line(in, path);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError("checkpoint " + path + ": bad config line '" + line + "'");
        d.config[line.substr(0, eq)] = line.substr(eq + 1);
    }
    const size_t n_manifest = parse_count(expect_line(in, path), "manifest", path);
    int64_t expect_offset = 0;
    for (size_t i = 0; i < n_manifest; ++i) {
        const std::string line = expect_line(in, path);
        std::istringstream ls(line);
        std::string name, shape_s, offset_s;
        if (!(ls >> name >> shape_s >> offset_s))
            throw DataError("checkpoint " + path + ": bad manifest line '" + line + "'");
        const Shape shape = parse_shape_field(shape_s, path);
        if (std::stoll(offset_s) != expect_offset)
            throw DataError("checkpoint " + path + ": non-contiguous manifest offset in '" + line +
                            "'");
        expect_offset += numel(shape);
        d.manifest.emplace_back(name, shape);
    }
    const size_t n_data = parse_count(expect_line(in, path), "data", path);
    if (static_cast<int64_t>(n_data) != expect_offset)
        throw DataError("checkpoint " + path + ": data count does not match manifest");
    d.params = read_floats(in, n_data, path);
    const size_t n_opt = parse_count(expect_line(in, path), "opt", path);
    d.opt = read_floats(in, n_opt, path);
    return d;
}

} // namespace magn
