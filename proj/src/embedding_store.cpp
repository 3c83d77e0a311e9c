#include "xalign/embedding_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <system_error>

namespace xalign {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[offset + i]) << (8 * i);
  return v;
}

template <typename T>
std::optional<T> optional_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sidecar key '") + key + "': " + e.what());
  }
}

}  // namespace

bool DatasetMeta::empty() const {
  return !model_id && !dataset_id && !labels && !class_names && !normalized &&
         (extra.is_null() || extra.empty());
}

nlohmann::json DatasetMeta::to_json() const {
  nlohmann::json j = extra.is_object() ? extra : nlohmann::json::object();
  if (model_id) j["model_id"] = *model_id;
  if (dataset_id) j["dataset_id"] = *dataset_id;
  if (labels) j["labels"] = *labels;
  if (class_names) j["class_names"] = *class_names;
  if (normalized) j["normalized"] = *normalized;
  return j;
}

DatasetMeta DatasetMeta::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw FormatError("sidecar metadata must be a JSON object");
  DatasetMeta meta;
  meta.model_id = optional_field<std::string>(j, "model_id");
  meta.dataset_id = optional_field<std::string>(j, "dataset_id");
  meta.labels = optional_field<Labels>(j, "labels");
  meta.class_names = optional_field<std::vector<std::string>>(j, "class_names");
  meta.normalized = optional_field<bool>(j, "normalized");
  for (const auto& [key, value] : j.items()) {
    if (key == "model_id" || key == "dataset_id" || key == "labels" || key == "class_names" ||
        key == "normalized")
      continue;
    meta.extra[key] = value;
  }
  return meta;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".meta.json");
}

std::vector<std::uint8_t> encode_emb1(const EmbeddingMatrix& matrix) {
  const auto n = static_cast<std::uint64_t>(matrix.rows());
  const auto d = static_cast<std::uint64_t>(matrix.cols());
  if (n > UINT32_MAX || d > UINT32_MAX) throw DataError("matrix too large for EMB1");
  std::vector<std::uint8_t> out(kEmb1HeaderSize + n * d * 4, 0);
  std::memcpy(out.data(), kMagic, 4);
  put_u32(out, 4, static_cast<std::uint32_t>(n));
  put_u32(out, 8, static_cast<std::uint32_t>(d));
  out[12] = kDtypeFloat32;
  std::uint8_t* payload = out.data() + kEmb1HeaderSize;
  // EmbeddingMatrix is row-major, so data() is already in file order.
  const float* src = matrix.data();
  for (std::uint64_t i = 0; i < n * d; ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(src[i]);
    for (int b = 0; b < 4; ++b) payload[4 * i + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

EmbeddingMatrix decode_emb1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kEmb1HeaderSize) throw FormatError("EMB1: file shorter than header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("EMB1: bad magic");
  const std::uint32_t n = get_u32(bytes, 4);
  const std::uint32_t d = get_u32(bytes, 8);
  if (bytes[12] != kDtypeFloat32) throw FormatError("EMB1: unsupported dtype code");
  if (bytes[13] != 0 || bytes[14] != 0 || bytes[15] != 0)
    throw FormatError("EMB1: reserved header bytes must be zero");
  if (n == 0 || d == 0) throw FormatError("EMB1: empty matrix");
  const std::uint64_t expected = kEmb1HeaderSize + std::uint64_t{n} * d * 4;
  if (bytes.size() != expected) throw FormatError("EMB1: payload size does not match header");

  EmbeddingMatrix matrix(n, d);
  float* dst = matrix.data();
  const std::uint8_t* payload = bytes.data() + kEmb1HeaderSize;
  for (std::uint64_t i = 0; i < std::uint64_t{n} * d; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(payload[4 * i + b]) << (8 * b);
    dst[i] = std::bit_cast<float>(bits);
  }
  return matrix;
}

void validate(const EmbeddingMatrix& matrix, const DatasetMeta& meta) {
  if (matrix.rows() < 1 || matrix.cols() < 1) throw DataError("embedding matrix is empty");
  if (!matrix.allFinite()) throw DataError("embedding matrix contains non-finite values");
  if (meta.labels) {
    if (static_cast<Index>(meta.labels->size()) != matrix.rows())
      throw DataError("labels length does not match row count");
    for (auto label : *meta.labels) {
      if (label < 0) throw DataError("labels must be non-negative");
      if (meta.class_names && label >= static_cast<std::int64_t>(meta.class_names->size()))
        throw DataError("label exceeds class_names");
    }
  }
}

Embeddings read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  Embeddings out{decode_emb1(bytes), {}};

  const auto meta_path = sidecar_path(path);
  if (std::filesystem::exists(meta_path)) {
    std::ifstream meta_in(meta_path);
    if (!meta_in) throw IoError("cannot open " + meta_path.string());
    nlohmann::json j;
    try {
      meta_in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("sidecar " + meta_path.string() + ": " + e.what());
    }
    out.meta = DatasetMeta::from_json(j);
  }
  validate(out.data, out.meta);
  return out;
}

void write_embeddings(const EmbeddingMatrix& matrix, const DatasetMeta& meta,
                      const std::filesystem::path& path) {
  validate(matrix, meta);
  const auto bytes = encode_emb1(matrix);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
  }
  const auto meta_path = sidecar_path(path);
  if (meta.empty()) {
    std::error_code ec;
    std::filesystem::remove(meta_path, ec);
    return;
  }
  std::ofstream meta_out(meta_path, std::ios::trunc);
  if (!meta_out) throw IoError("cannot write " + meta_path.string());
  meta_out << meta.to_json().dump(2) << '\n';
  if (!meta_out) throw IoError("short write to " + meta_path.string());
}

}  // namespace xalign
