#pragma once

#include <filesystem>
#include <string>

#include "mmpcqa/clouds.hpp"
#include "mmpcqa/error.hpp"

namespace mmpcqa {

// Malformed, truncated or incomplete PLY input. The message carries the
// header line or byte offset where parsing stopped.
class PlyError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

enum class PlyFormat { ascii, binary_little_endian };

struct PlyWriteOptions {
  PlyFormat format = PlyFormat::binary_little_endian;
  // float64 keeps geometry bit-exact; float32 halves the file size.
  bool double_precision = true;
};

ColoredPointCloud read_ply(const std::filesystem::path& path);
ColoredPointCloud parse_ply(const std::string& bytes, const std::string& source_name = "<memory>");

void write_ply(const std::filesystem::path& path, const ColoredPointCloud& cloud,
               const PlyWriteOptions& options = {});
std::string serialize_ply(const ColoredPointCloud& cloud, const PlyWriteOptions& options = {});

}  // namespace mmpcqa
