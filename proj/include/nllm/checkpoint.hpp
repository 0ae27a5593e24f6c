#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>

#include "nllm/model.hpp"

namespace nllm {

// File layout:
//   "NLLMCKPT" | u32 version | u64 manifest bytes | JSON manifest | f64 payload
// Integers and floats are little-endian. The manifest lists every array with
// its name, shape and offset (in values) into the payload.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, std::ostream& out);
void save_checkpoint(const Model& model, const std::string& path);

std::unique_ptr<Model> load_checkpoint(std::istream& in);
std::unique_ptr<Model> load_checkpoint(const std::string& path);

}  // namespace nllm
