#include "mpn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include "mpn/io.hpp"

namespace mpn {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    bool done() const { return pos == bytes.size(); }

    void need(std::size_t n) const {
        if (bytes.size() - pos < n) throw std::runtime_error("checkpoint: truncated file");
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }

    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelParams& params) {
    std::vector<std::uint8_t> out{'M', 'P', 'N', 'C'};
    put_u32(out, kCheckpointVersion);
    const nlohmann::json header{
        {"arch", params.config}, {"epochs_trained", params.epochs_trained}, {"seed", params.seed}};
    const std::string text = header.dump();
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());

    for (const auto& t : params.tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out.insert(out.end(), t.name.begin(), t.name.end());
        put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (double v : t.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    return out;
}

ModelParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    if (r.str(4) != "MPNC") throw std::runtime_error("checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::string text = r.str(r.u32());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: malformed header: ") + e.what());
    }

    // The layout (names, shapes, order) is fixed by the config; the stored
    // tensors must match it exactly.
    ModelParams p = init_model(header.at("arch").get<ArchConfig>(), 0);
    p.seed = header.at("seed").get<std::uint64_t>();
    p.epochs_trained = header.at("epochs_trained").get<int>();

    std::size_t next = 0;
    while (!r.done()) {
        if (next == p.tensors.size()) throw std::runtime_error("checkpoint: more tensors than the architecture has");
        ParamTensor& t = p.tensors[next++];
        const std::string name = r.str(r.u32());
        if (name != t.name) throw std::runtime_error("checkpoint: expected tensor " + t.name + ", found " + name);
        const std::uint32_t rank = r.u32();
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(r.u32());
        if (shape != t.shape) throw std::runtime_error("checkpoint: shape mismatch for " + name);
        r.need(4 * t.values.size());
        for (double& v : t.values) v = std::bit_cast<float>(r.u32());
    }
    if (next != p.tensors.size()) throw std::runtime_error("checkpoint: missing tensors");
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
    write_file_bytes(path, encode_checkpoint(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

void round_to_float(ModelParams& params) {
    for (auto& t : params.tensors) {
        for (double& v : t.values) v = static_cast<float>(v);
    }
}

}  // namespace mpn
