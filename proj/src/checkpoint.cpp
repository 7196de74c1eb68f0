#include "frism/checkpoint.hpp"

#include "frism/error.hpp"

#include <openssl/evp.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace frism {

using nlohmann::json;

static constexpr char k_magic[8] = {'F', 'R', 'I', 'S', 'M', 'C', 'K', '1'};

static void put_u32(std::string & out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

static std::uint32_t get_u32(const unsigned char * p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string encode_container(const container & c) {
    json manifest = c.meta;
    json list = json::array();
    std::string payload;
    for (const auto & [name, t] : c.tensors) {
        list.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
        for (float v : t.data()) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, sizeof(bits));
            put_u32(payload, bits);
        }
    }
    manifest["tensors"] = std::move(list);
    const std::string text = manifest.dump();
    if (text.size() > 0xffffffffu) {
        throw format_error("manifest too large");
    }
    std::string out(k_magic, sizeof(k_magic));
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out += text;
    out += payload;
    return out;
}

container decode_container(const std::string & bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), k_magic, sizeof(k_magic)) != 0) {
        throw format_error("bad magic: not a FRISMCK1 container");
    }
    const auto * raw = reinterpret_cast<const unsigned char *>(bytes.data());
    const std::uint64_t mlen = get_u32(raw + 8);
    if (12 + mlen > bytes.size()) {
        throw format_error("truncated manifest: header declares " + std::to_string(mlen) + " bytes, file has " +
                           std::to_string(bytes.size() - 12));
    }
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(mlen));
    } catch (const json::exception & e) {
        throw format_error(std::string("manifest is not valid JSON: ") + e.what());
    }
    if (!manifest.is_object() || !manifest.contains("tensors") || !manifest["tensors"].is_array()) {
        throw format_error("manifest lacks a tensor list");
    }
    const std::size_t payload_start = 12 + mlen;
    const std::size_t payload_size = bytes.size() - payload_start;

    container c;
    std::uint64_t expected_offset = 0;
    std::string prev_name;
    for (const auto & entry : manifest["tensors"]) {
        std::string name = "?";
        try {
            name = entry.at("name").get<std::string>();
            const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            if (!prev_name.empty() && name <= prev_name) {
                throw format_error("tensor '" + name + "': manifest not sorted by name");
            }
            if (shape.empty() || shape.size() > 2) {
                throw format_error("tensor '" + name + "': invalid shape " + shape_str(shape));
            }
            std::uint64_t count = 1;
            for (std::size_t d : shape) {
                if (d == 0) throw format_error("tensor '" + name + "': zero dimension in shape " + shape_str(shape));
                count *= d;
            }
            if (offset != expected_offset) {
                throw format_error("tensor '" + name + "': offset " + std::to_string(offset) + " inconsistent, expected " +
                                   std::to_string(expected_offset));
            }
            const std::uint64_t nbytes = count * 4;
            if (offset + nbytes > payload_size) {
                throw format_error("tensor '" + name + "': shape " + shape_str(shape) + " needs " + std::to_string(nbytes) +
                                   " bytes at offset " + std::to_string(offset) + " but payload has " +
                                   std::to_string(payload_size) + " (truncated payload)");
            }
            std::vector<float> data(count);
            const unsigned char * p = raw + payload_start + offset;
            for (std::uint64_t i = 0; i < count; ++i) {
                const std::uint32_t bits = get_u32(p + 4 * i);
                std::memcpy(&data[i], &bits, sizeof(float));
            }
            c.tensors.emplace(name, tensor(shape, std::move(data)));
            expected_offset += nbytes;
            prev_name = name;
        } catch (const json::exception & e) {
            throw format_error("tensor '" + name + "': malformed manifest entry: " + e.what());
        }
    }
    if (expected_offset != payload_size) {
        throw format_error("payload has " + std::to_string(payload_size - expected_offset) + " trailing bytes");
    }
    manifest.erase("tensors");
    c.meta = std::move(manifest);
    return c;
}

std::string read_file(const std::string & path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw io_error("cannot open '" + path + "' for reading");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string & path, const std::string & bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw io_error("cannot open '" + path + "' for writing");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw io_error("write to '" + path + "' failed");
    }
}

void write_container(const container & c, const std::string & path) {
    write_file(path, encode_container(c));
}

container read_container(const std::string & path) {
    const std::string bytes = read_file(path);
    try {
        return decode_container(bytes);
    } catch (const format_error & e) {
        throw format_error(path + ": " + e.what());
    }
}

json arch_to_json(const arch_spec & arch) {
    return {
        {"input_dim", arch.input_dim},
        {"hidden_dim", arch.hidden_dim},
        {"num_hidden_layers", arch.num_hidden_layers},
        {"output_classes", arch.output_classes},
        {"activation", arch.activation},
        {"frozen_layers", arch.frozen_layers},
    };
}

arch_spec arch_from_json(const json & j) {
    arch_spec a;
    try {
        a.input_dim = j.at("input_dim").get<std::size_t>();
        a.hidden_dim = j.at("hidden_dim").get<std::size_t>();
        a.num_hidden_layers = j.at("num_hidden_layers").get<std::size_t>();
        a.output_classes = j.at("output_classes").get<std::size_t>();
        a.activation = j.at("activation").get<std::string>();
        a.frozen_layers = j.at("frozen_layers").get<std::vector<std::string>>();
    } catch (const json::exception & e) {
        throw format_error(std::string("invalid arch block: ") + e.what());
    }
    return a;
}

std::string encode_checkpoint(const model_params & m) {
    container c;
    c.meta["arch"] = arch_to_json(m.arch);
    c.meta["provenance"] = provenance_name(m.prov);
    c.tensors = m.tensors;
    return encode_container(c);
}

model_params decode_checkpoint(const std::string & bytes) {
    container c = decode_container(bytes);
    if (!c.meta.contains("arch") || !c.meta.contains("provenance")) {
        throw format_error("checkpoint manifest needs 'arch' and 'provenance'");
    }
    model_params m;
    m.arch = arch_from_json(c.meta["arch"]);
    m.prov = parse_provenance(c.meta["provenance"].get<std::string>());
    m.tensors = std::move(c.tensors);
    try {
        m.validate();
    } catch (const error & e) {
        throw format_error(std::string("checkpoint does not match its arch: ") + e.what());
    }
    return m;
}

void save_checkpoint(const model_params & m, const std::string & path) {
    write_file(path, encode_checkpoint(m));
}

model_params load_checkpoint(const std::string & path) {
    const std::string bytes = read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const format_error & e) {
        throw format_error(path + ": " + e.what());
    }
}

std::string sha256_hex(const std::string & bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr);
    static const char * hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 15];
    }
    return out;
}

} // namespace frism
