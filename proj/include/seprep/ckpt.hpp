#pragma once

// Checkpoint file format (all integers little-endian):
//
//   bytes 0..3   magic "SPRN"
//   bytes 4..7   u32 format version
//   bytes 8..11  u32 metadata length L
//   next L bytes UTF-8 JSON metadata: kind, form, precision, architecture,
//                unit layout and a tensor manifest {name, dtype, shape, offset}
//   payload      tensors concatenated in manifest order; offsets are relative
//                to the payload start, contiguous and strictly increasing.
//
// Model tensors use dtype "f32" (or "f64" for 64-bit verification models);
// dataset labels use "i32".

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "seprep/data.hpp"
#include "seprep/error.hpp"
#include "seprep/nn.hpp"

namespace seprep::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

enum class Errc { io, bad_magic, version_mismatch, truncated_payload, manifest_mismatch, bad_metadata };

std::string_view errc_name(Errc code) noexcept;

class CkptError : public Error {
 public:
  CkptError(Errc code, const std::string& detail);
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

enum class Precision { f32, f64 };
std::string_view precision_name(Precision p) noexcept;
Precision parse_precision(std::string_view name);

// Summary read from the header and metadata without decoding the payload.
struct FileInfo {
  std::uint32_t version = 0;
  std::string kind;  // "model" or "dataset"
  std::string metadata_json;
  // Models only.
  Form form = Form::source;
  Precision precision = Precision::f32;
  std::size_t k = 0;
};

template <typename T>
std::string encode_model(const ModelBundle<T>& model);
template <typename T>
ModelBundle<T> decode_model(std::string_view bytes);

std::string encode_dataset(const data::LabeledSet& set, std::string_view domain_label = {});
data::LabeledSet decode_dataset(std::string_view bytes);

FileInfo inspect(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

template <typename T>
void save_model(const ModelBundle<T>& model, const std::filesystem::path& path) {
  write_file(path, encode_model(model));
}
template <typename T>
ModelBundle<T> load_model(const std::filesystem::path& path) {
  return decode_model<T>(read_file(path));
}
inline void save_dataset(const data::LabeledSet& set, const std::filesystem::path& path,
                         std::string_view domain_label = {}) {
  write_file(path, encode_dataset(set, domain_label));
}
inline data::LabeledSet load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file(path)); }
inline FileInfo inspect_file(const std::filesystem::path& path) { return inspect(read_file(path)); }

}  // namespace seprep::ckpt
