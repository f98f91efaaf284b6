// SPDX-License-Identifier: Apache-2.0

#include "aliif/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace aliif {

namespace {

constexpr char kMagic[4] = {'A', 'L', 'I', 'F'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<uint8_t>& buf, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    const std::string& path;
    size_t at = 0;

    void need(size_t n) const {
        if (at + n > buf.size()) throw std::runtime_error(path + ": truncated checkpoint");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[at + i]) << (8 * i);
        at += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[at + i]) << (8 * i);
        at += 8;
        return v;
    }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open file");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

uint64_t fnv1a_bytes(const uint8_t* data, size_t len) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= data[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

void save_checkpoint(ModelT<float>& model, const std::string& path,
                     const std::vector<std::pair<std::string, std::string>>& manifest_extra) {
    const ModelSpec& s = model.spec;
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), kMagic, kMagic + 4);
    put_u32(buf, kVersion);
    put_u32(buf, s.mode == Mode::liif ? 0u : 1u);
    put_u32(buf, static_cast<uint32_t>(s.k));
    put_u32(buf, static_cast<uint32_t>(s.d));
    put_u32(buf, static_cast<uint32_t>(s.b));
    put_u32(buf, 4u);
    put_u32(buf, static_cast<uint32_t>(s.mlp_layers));
    put_u32(buf, static_cast<uint32_t>(s.mlp_hidden));
    put_u32(buf, static_cast<uint32_t>(s.expansion_layers));
    put_u32(buf, static_cast<uint32_t>(s.expansion_hidden));
    for (auto& p : model.parameters())
        for (float v : p.tensor.data()) put_f32(buf, v);
    const uint64_t sum = fnv1a_bytes(buf.data(), buf.size());
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(sum >> (8 * i)));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open file for writing");
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
    out.close();

    std::ofstream mf(path + ".manifest", std::ios::trunc);
    if (!mf) throw std::runtime_error(path + ".manifest: cannot open file for writing");
    mf << "format_version = " << kVersion << "\n";
    mf << "mode = " << mode_name(s.mode) << "\n";
    mf << "k = " << s.k << "\n";
    mf << "d = " << s.d << "\n";
    mf << "b = " << s.b << "\n";
    mf << "mlp_layers = " << s.mlp_layers << "\n";
    mf << "mlp_hidden = " << s.mlp_hidden << "\n";
    mf << "expansion_layers = " << s.expansion_layers << "\n";
    mf << "expansion_hidden = " << s.expansion_hidden << "\n";
    mf << "outer_relu = " << (s.outer_relu ? "true" : "false") << "\n";
    mf << "share_ensemble_weights = " << (s.share_ensemble_weights ? "true" : "false") << "\n";
    for (const auto& [key, value] : manifest_extra) mf << key << " = " << value << "\n";
}

ModelT<float> load_checkpoint(const std::string& path) {
    const std::vector<uint8_t> buf = read_file(path);
    Reader r{buf, path};
    r.need(4);
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw std::runtime_error(path + ": not a checkpoint file (bad magic)");
    r.at = 4;
    const uint32_t version = r.u32();
    if (version != kVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    const uint32_t mode = r.u32();
    if (mode > 1) throw std::runtime_error(path + ": invalid mode field");
    ModelSpec spec;
    spec.mode = mode == 0 ? Mode::liif : Mode::aliif;
    spec.k = static_cast<int>(r.u32());
    spec.d = static_cast<int>(r.u32());
    spec.b = static_cast<int>(r.u32());
    const uint32_t n_widths = r.u32();
    if (n_widths != 4)
        throw std::runtime_error(path + ": unexpected width count " + std::to_string(n_widths));
    spec.mlp_layers = static_cast<int>(r.u32());
    spec.mlp_hidden = static_cast<int>(r.u32());
    spec.expansion_layers = static_cast<int>(r.u32());
    spec.expansion_hidden = static_cast<int>(r.u32());
    if (spec.k < 1 || spec.d < 1 || spec.b < 1 || spec.mlp_layers < 1 || spec.mlp_hidden < 1 ||
        spec.expansion_layers < 1 || spec.expansion_hidden < 1)
        throw std::runtime_error(path + ": invalid architecture fields");

    ModelT<float> model = ModelT<float>::make(spec);
    for (auto& p : model.parameters())
        for (float& v : p.tensor.data()) v = r.f32();
    const size_t payload_end = r.at;
    const uint64_t stored = r.u64();
    if (r.at != buf.size())
        throw std::runtime_error(path + ": trailing bytes after checksum");
    const uint64_t computed = fnv1a_bytes(buf.data(), payload_end);
    if (stored != computed)
        throw std::runtime_error(path + ": checksum mismatch (file corrupt)");

    // Behavior flags live in the manifest; the binary header is exactly the
    // declared format.
    std::ifstream mf(path + ".manifest");
    if (mf) {
        std::string line;
        while (std::getline(mf, line)) {
            const size_t eq = line.find('=');
            if (eq == std::string::npos) continue;
            auto trim = [](std::string s) {
                const size_t b = s.find_first_not_of(" \t");
                const size_t e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key == "outer_relu") model.spec.outer_relu = value == "true" || value == "1";
            if (key == "share_ensemble_weights")
                model.spec.share_ensemble_weights = value == "true" || value == "1";
        }
    }
    return model;
}

uint64_t checkpoint_checksum(const std::string& path) {
    const std::vector<uint8_t> buf = read_file(path);
    if (buf.size() < 8) throw std::runtime_error(path + ": truncated checkpoint");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<uint64_t>(buf[buf.size() - 8 + i]) << (8 * i);
    return v;
}

}  // namespace aliif
