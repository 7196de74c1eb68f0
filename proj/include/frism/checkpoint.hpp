#pragma once

#include "frism/model.hpp"
#include "frism/tensor.hpp"

#include <json.hpp>

#include <map>
#include <string>

namespace frism {

// Container layout shared by checkpoints, decomposition archives and gate files:
//   bytes 0..7   ASCII "FRISMCK1"
//   bytes 8..11  u32 little-endian manifest length M
//   next M bytes UTF-8 JSON manifest; "tensors" lists {name, shape, offset} sorted by name,
//                offsets in bytes relative to the payload start
//   remainder    float32 little-endian payloads in manifest order
struct container {
    nlohmann::json meta = nlohmann::json::object();   // manifest fields other than "tensors"
    std::map<std::string, tensor> tensors;
};

std::string encode_container(const container & c);
container   decode_container(const std::string & bytes);

void      write_container(const container & c, const std::string & path);
container read_container(const std::string & path);

nlohmann::json arch_to_json(const arch_spec & arch);
arch_spec      arch_from_json(const nlohmann::json & j);

void         save_checkpoint(const model_params & m, const std::string & path);
model_params load_checkpoint(const std::string & path);

std::string encode_checkpoint(const model_params & m);
model_params decode_checkpoint(const std::string & bytes);

// file helpers shared by the pipeline; both throw io_error
std::string read_file(const std::string & path);
void        write_file(const std::string & path, const std::string & bytes);

std::string sha256_hex(const std::string & bytes);

} // namespace frism
