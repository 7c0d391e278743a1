#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "metadro/autodiff.hpp"
#include "metadro/dataset.hpp"

namespace metadro {

/// On-disk embedding store encodings.
///
///  csv:    header `id,patient_id,label,group,v0,...,v{d-1}`
///  jsonl:  {"id", "patient_id" (nullable), "label", "group", "vector": [...]}
///  binary: "MSHF", version byte, u32 count, u32 dim, then per record four
///          u32-length-prefixed UTF-8 strings (id, patient_id, label, group)
///          followed by dim little-endian f64. An absent patient id is written
///          as the empty string.
enum class StoreFormat { Csv, Jsonl, Binary };

StoreFormat parse_store_format(std::string_view name);  // csv | jsonl | bin | binary
std::string_view to_string(StoreFormat format);
/// Guess from the file extension (.csv, .jsonl, anything else is binary).
StoreFormat format_from_path(const std::filesystem::path& path);

EmbeddingStore read_store(std::istream& in, StoreFormat format);
void write_store(std::ostream& out, const EmbeddingStore& store, StoreFormat format);

EmbeddingStore load_store(const std::filesystem::path& path, StoreFormat format);
void write_store(const std::filesystem::path& path, const EmbeddingStore& store,
                 StoreFormat format);

struct NamedTensor {
  std::string name;
  ad::Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

/// Named tensor container using the binary store layout with magic "MSHP":
/// version byte, u32 count, then per tensor a length-prefixed name, u32 rows,
/// u32 cols and rows*cols little-endian f64 in row-major order.
void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(std::istream& in);
void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& path);

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace metadro
