#include "ibt/checkpoint.hpp"

#include "ibt/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ibt {

namespace {

constexpr std::size_t kMagicLen = 8;

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64(const unsigned char* bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

std::string shape_field(const Shape& s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(s[i]);
    }
    return out;
}

Shape parse_shape_field(const std::string& field) {
    Shape s;
    if (field.empty()) return s;
    std::stringstream ss(field);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            throw DataError("checkpoint manifest: bad shape '" + field + "'");
        }
        s.push_back(std::stoull(part));
    }
    return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<Parameter>& state) {
    std::string manifest;
    for (const auto& p : state) {
        if (p.name.find_first_of("\t\n") != std::string::npos) {
            throw ContractError("parameter name contains a tab or newline: " + p.name);
        }
        manifest += p.name + "\tf64\t" + shape_field(p.tensor.shape()) + "\n";
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open checkpoint for writing: " + path.string());
    out.write(kCheckpointMagic, kMagicLen);
    put_u64(out, manifest.size());
    out.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
    for (const auto& p : state) {
        for (double v : p.tensor.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    if (!out) throw DataError("write failed: " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() < kMagicLen + 8 || std::memcmp(bytes.data(), kCheckpointMagic, kMagicLen) != 0) {
        throw DataError("not an IBT checkpoint (bad magic): " + path.string());
    }
    const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
    const std::uint64_t manifest_len = get_u64(raw + kMagicLen);
    std::size_t offset = kMagicLen + 8;
    if (manifest_len > bytes.size() - offset) throw DataError("checkpoint manifest truncated: " + path.string());

    std::vector<CheckpointEntry> entries;
    std::stringstream manifest(bytes.substr(offset, manifest_len));
    offset += manifest_len;
    std::string line;
    while (std::getline(manifest, line)) {
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) throw DataError("checkpoint manifest: malformed line '" + line + "'");
        if (line.substr(t1 + 1, t2 - t1 - 1) != "f64") {
            throw DataError("checkpoint manifest: unsupported dtype in '" + line + "'");
        }
        entries.push_back({line.substr(0, t1), parse_shape_field(line.substr(t2 + 1)), {}});
    }
    for (auto& e : entries) {
        const std::size_t n = shape_numel(e.shape);
        if (n > (bytes.size() - offset) / 8) throw DataError("checkpoint payload truncated at " + e.name);
        e.data.resize(n);
        for (std::size_t i = 0; i < n; ++i, offset += 8) e.data[i] = std::bit_cast<double>(get_u64(raw + offset));
    }
    if (offset != bytes.size()) throw DataError("checkpoint has trailing bytes: " + path.string());
    return entries;
}

void load_checkpoint(const std::filesystem::path& path, const std::vector<Parameter>& state) {
    auto entries = read_checkpoint(path);
    if (entries.size() != state.size()) {
        throw DataError("checkpoint holds " + std::to_string(entries.size()) + " tensors, model expects " +
                        std::to_string(state.size()));
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        const auto& p = state[i];
        if (e.name != p.name) throw DataError("checkpoint tensor '" + e.name + "' where model expects '" + p.name + "'");
        if (e.shape != p.tensor.shape()) {
            throw DataError("checkpoint tensor '" + e.name + "' has shape " + shape_str(e.shape) + ", model expects " +
                            shape_str(p.tensor.shape()));
        }
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
        Tensor t = state[i].tensor;
        auto dst = t.mutable_data();
        std::copy(entries[i].data.begin(), entries[i].data.end(), dst.begin());
    }
}

}  // namespace ibt
