#include "pgcn/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "pgcn/error.hpp"

namespace pgcn {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'C', 'N'};
constexpr uint8_t kVersion = 1;

uint32_t payload_crc(const std::vector<char>& payload) {
    return static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Parsed {
    nlohmann::json manifest;
    std::vector<char> payload;
};

Parsed read_and_verify(const std::string& path, bool verify_payload) {
    if (!std::filesystem::exists(path)) throw MissingArtifactError("no checkpoint at " + path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("cannot open checkpoint " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < 13 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw CheckpointError("bad magic in " + path);
    if (static_cast<uint8_t>(bytes[4]) != kVersion)
        throw CheckpointError("unsupported checkpoint version " +
                              std::to_string(static_cast<uint8_t>(bytes[4])) + " in " + path);
    uint64_t hlen = 0;
    for (int i = 0; i < 8; ++i) hlen |= static_cast<uint64_t>(static_cast<uint8_t>(bytes[5 + i])) << (8 * i);
    if (13 + hlen > bytes.size()) throw CheckpointError("truncated manifest in " + path);

    Parsed p;
    try {
        p.manifest = nlohmann::json::parse(bytes.begin() + 13, bytes.begin() + 13 + hlen);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("unparseable manifest in " + path + ": " + e.what());
    }
    if (!p.manifest.is_array()) throw CheckpointError("manifest is not an array in " + path);

    if (verify_payload) {
        uint64_t total = 0;
        for (const auto& e : p.manifest) {
            uint64_t numel = 1;
            for (const auto& d : e.at("shape")) numel *= d.get<uint64_t>();
            total += numel * 4;
        }
        const size_t body = static_cast<size_t>(13 + hlen);
        if (bytes.size() != body + total + 4)
            throw CheckpointError("truncated payload in " + path + " (" +
                                  std::to_string(bytes.size()) + " bytes, expected " +
                                  std::to_string(body + total + 4) + ")");
        p.payload.assign(bytes.begin() + body, bytes.end() - 4);
        uint32_t stored = 0;
        for (int i = 0; i < 4; ++i)
            stored |= static_cast<uint32_t>(static_cast<uint8_t>(bytes[bytes.size() - 4 + i]))
                      << (8 * i);
        if (stored != payload_crc(p.payload))
            throw CheckpointError("payload CRC mismatch in " + path);
    }
    return p;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamList& tensors) {
    nlohmann::json manifest = nlohmann::json::array();
    std::vector<char> payload;
    uint64_t offset = 0;
    for (const auto& t : tensors) {
        if (!t.tensor.defined()) throw ContractError("undefined tensor '" + t.name + "' in checkpoint");
        nlohmann::json e;
        e["name"] = t.name;
        e["dtype"] = "f32";
        e["shape"] = t.tensor.shape();
        e["offset"] = offset;
        manifest.push_back(std::move(e));
        const size_t nbytes = static_cast<size_t>(t.tensor.size()) * 4;
        payload.resize(payload.size() + nbytes);
        std::memcpy(payload.data() + offset, t.tensor.data(), nbytes);
        offset += nbytes;
    }

    std::string head;
    const std::string mbytes = manifest.dump();
    head.append(kMagic, 4);
    head.push_back(static_cast<char>(kVersion));
    put_u64(head, mbytes.size());

    const uint32_t crc = payload_crc(payload);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IngestionError("cannot write checkpoint " + path);
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(mbytes.data(), static_cast<std::streamsize>(mbytes.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((crc >> (8 * i)) & 0xff));
    if (!out) throw IngestionError("short write on checkpoint " + path);
}

void load_checkpoint(const std::string& path, ParamList& tensors) {
    Parsed p = read_and_verify(path, /*verify_payload=*/true);
    if (p.manifest.size() != tensors.size())
        throw CheckpointError(path + " holds " + std::to_string(p.manifest.size()) +
                              " tensors, model expects " + std::to_string(tensors.size()));

    // Full dry pass: every entry must bind to a tensor of the same shape.
    std::vector<std::pair<Tensor*, const nlohmann::json*>> plan;
    for (const auto& e : p.manifest) {
        const std::string name = e.at("name").get<std::string>();
        if (e.at("dtype").get<std::string>() != "f32")
            throw CheckpointError("tensor '" + name + "' has unsupported dtype");
        Tensor* target = nullptr;
        for (auto& t : tensors)
            if (t.name == name) target = &t.tensor;
        if (!target) throw CheckpointError("checkpoint tensor '" + name + "' not in the model");
        const Shape shape = e.at("shape").get<Shape>();
        if (shape != target->shape())
            throw CheckpointError("tensor '" + name + "' is " + shape_str(shape) +
                                  " in the checkpoint but " + shape_str(target->shape()) +
                                  " in the model");
        const uint64_t offset = e.at("offset").get<uint64_t>();
        if (offset + static_cast<size_t>(target->size()) * 4 > p.payload.size())
            throw CheckpointError("tensor '" + name + "' overruns the payload");
        plan.emplace_back(target, &e);
    }
    for (auto& [target, e] : plan)
        std::memcpy(target->data(), p.payload.data() + e->at("offset").get<uint64_t>(),
                    static_cast<size_t>(target->size()) * 4);
}

std::vector<CheckpointEntry> peek_checkpoint(const std::string& path) {
    Parsed p = read_and_verify(path, /*verify_payload=*/false);
    std::vector<CheckpointEntry> out;
    for (const auto& e : p.manifest)
        out.push_back({e.at("name").get<std::string>(), e.at("shape").get<Shape>()});
    return out;
}

}  // namespace pgcn
