#include "metadro/store_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "metadro/error.hpp"

namespace metadro {

namespace {

constexpr std::uint8_t kVersion = 1;
constexpr std::array<char, 4> kStoreMagic = {'M', 'S', 'H', 'F'};
constexpr std::array<char, 4> kTensorMagic = {'M', 'S', 'H', 'P'};

// ---- little-endian primitives

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes;
  if (!in.read(bytes.data(), bytes.size())) throw IngestError("binary: unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

void put_string(std::ostream& out, std::string_view s) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get_le<std::uint32_t>(in);
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw IngestError("binary: truncated string");
  return s;
}

void expect_magic(std::istream& in, const std::array<char, 4>& magic) {
  std::array<char, 4> got{};
  if (!in.read(got.data(), 4) || got != magic)
    throw IngestError("binary: bad magic, expected " + std::string(magic.data(), 4));
  const auto version = get_le<std::uint8_t>(in);
  if (version != kVersion)
    throw IngestError("binary: unsupported version " + std::to_string(version));
}

// ---- csv

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw IngestError("csv: unterminated quote");
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

EmbeddingStore read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("csv: missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv(line);
  const std::array<const char*, 4> fixed = {"id", "patient_id", "label", "group"};
  if (header.size() < fixed.size()) throw IngestError("csv: header too short");
  for (std::size_t i = 0; i < fixed.size(); ++i)
    if (header[i] != fixed[i])
      throw IngestError("csv: header column " + std::to_string(i) + " must be '" + fixed[i] + "'");
  const auto dim = static_cast<Eigen::Index>(header.size() - fixed.size());
  for (Eigen::Index j = 0; j < dim; ++j)
    if (header[4 + j] != "v" + std::to_string(j))
      throw IngestError("csv: expected column v" + std::to_string(j));

  std::vector<EmbeddingRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv(line);
    const std::string id = fields.empty() ? "" : fields[0];
    if (fields.size() != header.size())
      throw IngestError("record '" + id + "' (line " + std::to_string(line_no) + ") has " +
                        std::to_string(fields.size() - std::min<std::size_t>(4, fields.size())) +
                        " vector values, expected " + std::to_string(dim));
    EmbeddingRecord r;
    r.id = fields[0];
    if (!fields[1].empty()) r.patient_id = fields[1];
    r.label = fields[2];
    r.group = fields[3];
    r.vector.resize(dim);
    for (Eigen::Index j = 0; j < dim; ++j) {
      try {
        r.vector[j] = parse_double(fields[4 + j]);
      } catch (const ValidationError&) {
        throw IngestError("record '" + r.id + "': bad number '" + fields[4 + j] + "'");
      }
    }
    records.push_back(std::move(r));
  }
  return EmbeddingStore(std::move(records), dim);
}

void write_csv(std::ostream& out, const EmbeddingStore& store) {
  out << "id,patient_id,label,group";
  for (Eigen::Index j = 0; j < store.dim(); ++j) out << ",v" << j;
  out << '\n';
  for (const auto& r : store.records()) {
    out << csv_field(r.id) << ',' << csv_field(r.patient_id.value_or("")) << ','
        << csv_field(r.label) << ',' << csv_field(r.group);
    for (Eigen::Index j = 0; j < r.vector.size(); ++j) out << ',' << format_double(r.vector[j]);
    out << '\n';
  }
}

// ---- jsonl

EmbeddingStore read_jsonl(std::istream& in) {
  std::vector<EmbeddingRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EmbeddingRecord r;
      r.id = j.at("id").get<std::string>();
      if (j.contains("patient_id") && !j.at("patient_id").is_null())
        r.patient_id = j.at("patient_id").get<std::string>();
      r.label = j.at("label").get<std::string>();
      r.group = j.value("group", std::string{});
      const auto& v = j.at("vector");
      r.vector.resize(static_cast<Eigen::Index>(v.size()));
      for (std::size_t k = 0; k < v.size(); ++k) r.vector[static_cast<Eigen::Index>(k)] = v[k].get<double>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IngestError("jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return EmbeddingStore(std::move(records));
}

void write_jsonl(std::ostream& out, const EmbeddingStore& store) {
  for (const auto& r : store.records()) {
    nlohmann::json j;
    j["id"] = r.id;
    j["patient_id"] = r.patient_id ? nlohmann::json(*r.patient_id) : nlohmann::json(nullptr);
    j["label"] = r.label;
    j["group"] = r.group;
    j["vector"] = std::vector<double>(r.vector.data(), r.vector.data() + r.vector.size());
    out << j.dump() << '\n';
  }
}

// ---- binary

EmbeddingStore read_binary(std::istream& in) {
  expect_magic(in, kStoreMagic);
  const auto count = get_le<std::uint32_t>(in);
  const auto dim = get_le<std::uint32_t>(in);
  std::vector<EmbeddingRecord> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    EmbeddingRecord r;
    r.id = get_string(in);
    auto pid = get_string(in);
    if (!pid.empty()) r.patient_id = std::move(pid);
    r.label = get_string(in);
    r.group = get_string(in);
    r.vector.resize(dim);
    for (std::uint32_t k = 0; k < dim; ++k) r.vector[k] = get_le<double>(in);
    records.push_back(std::move(r));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IngestError("binary: trailing bytes");
  return EmbeddingStore(std::move(records), dim);
}

void write_binary(std::ostream& out, const EmbeddingStore& store) {
  out.write(kStoreMagic.data(), 4);
  put_le<std::uint8_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.dim()));
  for (const auto& r : store.records()) {
    put_string(out, r.id);
    put_string(out, r.patient_id.value_or(""));
    put_string(out, r.label);
    put_string(out, r.group);
    for (Eigen::Index k = 0; k < r.vector.size(); ++k) put_le<double>(out, r.vector[k]);
  }
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 32> buf;
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

double parse_double(std::string_view text) {
  double v = 0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size())
    throw ValidationError("not a number: '" + std::string(text) + "'");
  return v;
}

StoreFormat parse_store_format(std::string_view name) {
  if (name == "csv") return StoreFormat::Csv;
  if (name == "jsonl") return StoreFormat::Jsonl;
  if (name == "bin" || name == "binary") return StoreFormat::Binary;
  throw ValidationError("unknown store format '" + std::string(name) + "'");
}

std::string_view to_string(StoreFormat format) {
  switch (format) {
    case StoreFormat::Csv: return "csv";
    case StoreFormat::Jsonl: return "jsonl";
    case StoreFormat::Binary: return "bin";
  }
  return "?";
}

StoreFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return StoreFormat::Csv;
  if (ext == ".jsonl") return StoreFormat::Jsonl;
  return StoreFormat::Binary;
}

EmbeddingStore read_store(std::istream& in, StoreFormat format) {
  switch (format) {
    case StoreFormat::Csv: return read_csv(in);
    case StoreFormat::Jsonl: return read_jsonl(in);
    case StoreFormat::Binary: return read_binary(in);
  }
  throw ValidationError("unknown store format");
}

void write_store(std::ostream& out, const EmbeddingStore& store, StoreFormat format) {
  switch (format) {
    case StoreFormat::Csv: write_csv(out, store); break;
    case StoreFormat::Jsonl: write_jsonl(out, store); break;
    case StoreFormat::Binary: write_binary(out, store); break;
  }
}

EmbeddingStore load_store(const std::filesystem::path& path, StoreFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open store '" + path.string() + "'");
  return read_store(in, format);
}

void write_store(const std::filesystem::path& path, const EmbeddingStore& store,
                 StoreFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write store '" + path.string() + "'");
  write_store(out, store, format);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_tensors(std::ostream& out, const std::vector<NamedTensor>& tensors) {
  out.write(kTensorMagic.data(), 4);
  put_le<std::uint8_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_string(out, t.name);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index i = 0; i < t.value.size(); ++i) put_le<double>(out, t.value.data()[i]);
  }
}

std::vector<NamedTensor> read_tensors(std::istream& in) {
  expect_magic(in, kTensorMagic);
  const auto count = get_le<std::uint32_t>(in);
  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    t.name = get_string(in);
    const auto rows = get_le<std::uint32_t>(in);
    const auto cols = get_le<std::uint32_t>(in);
    t.value.resize(rows, cols);
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = get_le<double>(in);
    out.push_back(std::move(t));
  }
  return out;
}

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  write_tensors(out, tensors);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<NamedTensor> read_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  return read_tensors(in);
}

}  // namespace metadro
