#include "tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "lnm/common.hpp"

namespace lnm::detail {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& buf, size_t& pos) {
    if (pos + 4 > buf.size()) throw DataError("model file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
}

std::map<std::string, torch::Tensor> named_state(torch::nn::Module& module) {
    std::map<std::string, torch::Tensor> out;
    for (const auto& p : module.named_parameters(true)) out[p.key()] = p.value();
    for (const auto& b : module.named_buffers(true)) out[b.key()] = b.value();
    return out;
}

}  // namespace

void write_model_file(const std::filesystem::path& path, const char (&magic)[9], std::uint32_t version,
                      const nlohmann::json& meta, torch::nn::Module& module) {
    std::string buf(magic, 8);
    put_u32(buf, version);
    const std::string meta_text = meta.dump();
    put_u32(buf, std::uint32_t(meta_text.size()));
    buf += meta_text;

    const auto state = named_state(module);
    put_u32(buf, std::uint32_t(state.size()));
    for (const auto& [name, tensor] : state) {
        put_u32(buf, std::uint32_t(name.size()));
        buf += name;
        const auto t = tensor.detach().to(torch::kCPU).contiguous();
        put_u32(buf, std::uint32_t(t.dim()));
        for (auto d : t.sizes()) put_u32(buf, std::uint32_t(d));
        put_u32(buf, t.scalar_type() == torch::kLong ? 1u : 0u);
        if (t.scalar_type() == torch::kLong) {
            const auto* data = t.data_ptr<int64_t>();
            for (int64_t i = 0; i < t.numel(); ++i) {
                const auto v = std::uint64_t(data[i]);
                put_u32(buf, std::uint32_t(v & 0xffffffffu));
                put_u32(buf, std::uint32_t(v >> 32));
            }
        } else {
            const auto f = t.to(torch::kFloat32);
            const auto* data = f.data_ptr<float>();
            for (int64_t i = 0; i < f.numel(); ++i) put_u32(buf, std::bit_cast<std::uint32_t>(data[i]));
        }
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(buf.data(), std::streamsize(buf.size()));
}

nlohmann::json read_model_meta(const std::filesystem::path& path, const char (&magic)[9],
                               std::uint32_t version, std::string& bytes, size_t& payload_offset) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open model file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    bytes = ss.str();
    if (bytes.size() < 16 || std::memcmp(bytes.data(), magic, 8) != 0) {
        throw DataError(path.string() + ": not a recognised model file");
    }
    size_t pos = 8;
    const auto found_version = get_u32(bytes, pos);
    if (found_version != version) {
        throw DataError(path.string() + ": unsupported model file version " + std::to_string(found_version));
    }
    const auto meta_len = get_u32(bytes, pos);
    if (pos + meta_len > bytes.size()) throw DataError(path.string() + ": truncated metadata");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(bytes.substr(pos, meta_len));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed metadata: " + e.what());
    }
    payload_offset = pos + meta_len;
    return meta;
}

void load_model_tensors(const std::string& bytes, size_t payload_offset, torch::nn::Module& module,
                        const std::string& what) {
    auto state = named_state(module);
    size_t pos = payload_offset;
    const auto count = get_u32(bytes, pos);
    if (count != state.size()) throw DataError(what + ": tensor count does not match the architecture");
    torch::NoGradGuard no_grad;
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto name_len = get_u32(bytes, pos);
        if (pos + name_len > bytes.size()) throw DataError(what + ": truncated tensor name");
        const std::string name = bytes.substr(pos, name_len);
        pos += name_len;
        auto it = state.find(name);
        if (it == state.end()) throw DataError(what + ": unexpected tensor '" + name + "'");
        const auto ndim = get_u32(bytes, pos);
        std::vector<int64_t> dims(ndim);
        for (auto& d : dims) d = get_u32(bytes, pos);
        const bool is_long = get_u32(bytes, pos) == 1;
        auto& target = it->second;
        if (target.sizes() != torch::IntArrayRef(dims)) throw DataError(what + ": shape mismatch for '" + name + "'");
        if (is_long) {
            auto t = torch::empty(dims, torch::kLong);
            auto* data = t.data_ptr<int64_t>();
            for (int64_t i = 0; i < t.numel(); ++i) {
                const std::uint64_t lo = get_u32(bytes, pos);
                const std::uint64_t hi = get_u32(bytes, pos);
                data[i] = int64_t(lo | (hi << 32));
            }
            target.copy_(t);
        } else {
            auto t = torch::empty(dims, torch::kFloat32);
            auto* data = t.data_ptr<float>();
            for (int64_t i = 0; i < t.numel(); ++i) data[i] = std::bit_cast<float>(get_u32(bytes, pos));
            target.copy_(t.to(target.scalar_type()));
        }
    }
}

}  // namespace lnm::detail
