#pragma once

// Dataset-on-disk contract: the TIVG binary matrix format, validated feature
// stores, and per-node metadata records.
//
// TIVG layout (all little-endian):
//   bytes 0..3   magic "TIVG"
//   u32          version (1)
//   u64          rows n
//   u32          cols d
//   n*d f32      row-major values

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "json.hpp"
#include "transvis/error.hpp"
#include "transvis/matrix.hpp"

namespace transvis {

using NodeId = std::uint32_t;

inline constexpr std::array<char, 4> kTivgMagic = {'T', 'I', 'V', 'G'};
inline constexpr std::uint32_t kTivgVersion = 1;
inline constexpr std::size_t kTivgHeaderBytes = 4 + 4 + 8 + 4;

namespace detail {

template <class U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

}  // namespace detail

inline std::string encode_tivg(const Matrix<float>& m) {
  std::string out;
  out.reserve(kTivgHeaderBytes + m.data().size() * 4);
  out.append(kTivgMagic.data(), kTivgMagic.size());
  detail::put_le<std::uint32_t>(out, kTivgVersion);
  detail::put_le<std::uint64_t>(out, m.rows());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.cols()));
  for (float v : m.data()) detail::put_le(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

/// Decodes a TIVG buffer without value checks (weights may be zero).
inline Matrix<float> decode_tivg(std::string_view bytes) {
  if (bytes.size() < kTivgHeaderBytes)
    throw ParseError("TIVG: truncated header", 0);
  if (std::memcmp(bytes.data(), kTivgMagic.data(), 4) != 0)
    throw ParseError("TIVG: bad magic", 0);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const auto version = detail::get_le<std::uint32_t>(p + 4);
  if (version != kTivgVersion)
    throw ParseError("TIVG: unsupported version " + std::to_string(version), 0);
  const auto rows = detail::get_le<std::uint64_t>(p + 8);
  const auto cols = detail::get_le<std::uint32_t>(p + 16);
  const std::size_t payload = bytes.size() - kTivgHeaderBytes;
  if (cols == 0 ? payload != 0
                : payload % (4ULL * cols) != 0 || payload / (4ULL * cols) != rows)
    throw ValidationError("TIVG: dimension mismatch: header says " +
                          std::to_string(rows) + "x" + std::to_string(cols) +
                          " but payload holds " + std::to_string(payload) + " bytes");
  std::vector<float> values(static_cast<std::size_t>(rows) * cols);
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + kTivgHeaderBytes + 4 * i));
  return Matrix<float>(rows, cols, std::move(values));
}

inline void save_matrix(const Matrix<float>& m, const std::filesystem::path& path) {
  detail::write_file(path, encode_tivg(m));
}

inline Matrix<float> load_matrix(const std::filesystem::path& path) {
  return decode_tivg(detail::read_file(path));
}

/// Immutable n x d feature matrix with finite entries and nonzero rows.
class FeatureStore {
 public:
  FeatureStore() = default;

  /// Validates `m`; throws ValidationError naming the first bad row.
  explicit FeatureStore(Matrix<float> m) : m_(std::move(m)) {
    for (std::size_t i = 0; i < m_.rows(); ++i) {
      const auto r = m_.row(i);
      for (float v : r)
        if (!std::isfinite(v))
          throw ValidationError("non-finite value in row " + std::to_string(i), i);
      if (squared_norm(r) == 0.0)
        throw ValidationError("zero-norm row " + std::to_string(i), i);
    }
  }

  std::size_t size() const noexcept { return m_.rows(); }
  std::size_t dim() const noexcept { return m_.cols(); }
  std::span<const float> row(std::size_t i) const { return m_.row(i); }
  const Matrix<float>& matrix() const noexcept { return m_; }

  friend bool operator==(const FeatureStore&, const FeatureStore&) = default;

 private:
  Matrix<float> m_;
};

inline void save_features(const FeatureStore& store, const std::filesystem::path& path) {
  save_matrix(store.matrix(), path);
}

/// Loads and validates a feature file. `expected_dim` of 0 accepts any d.
inline FeatureStore load_features(const std::filesystem::path& path,
                                  std::size_t expected_dim = 0) {
  auto m = load_matrix(path);
  if (expected_dim != 0 && m.rows() != 0 && m.cols() != expected_dim)
    throw ValidationError("feature dimension " + std::to_string(m.cols()) +
                          " does not match expected " + std::to_string(expected_dim));
  return FeatureStore(std::move(m));
}

/// Rescales every row to unit Euclidean norm.
inline FeatureStore l2_normalize(const FeatureStore& store) {
  Matrix<float> out(store.size(), store.dim());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto r = store.row(i);
    const double norm = std::sqrt(squared_norm(r));
    if (!(norm > 0.0)) throw ValidationError("zero-norm row " + std::to_string(i), i);
    auto o = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j)
      o[j] = static_cast<float>(static_cast<double>(r[j]) / norm);
  }
  return FeatureStore(std::move(out));
}

// ---------------------------------------------------------------------------
// Node metadata

struct NodeRecord {
  std::string video;
  std::string track;
  std::uint32_t frame = 0;

  friend bool operator==(const NodeRecord&, const NodeRecord&) = default;
};

using NodeMeta = std::vector<NodeRecord>;

inline nlohmann::ordered_json node_record_json(NodeId id, const NodeRecord& r) {
  nlohmann::ordered_json j;
  j["node"] = id;
  j["video"] = r.video;
  j["track"] = r.track;
  j["frame"] = r.frame;
  return j;
}

/// Parses one JSON-lines record; throws ParseError tagged with `line`.
inline nlohmann::json parse_jsonl_line(const std::string& text, std::size_t line) {
  try {
    auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ParseError("expected a JSON object", line);
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), line);
  }
}

/// Reads a required field with a type check, reporting `line` on failure.
template <class T>
T jsonl_field(const nlohmann::json& j, const char* key, std::size_t line) {
  const auto it = j.find(key);
  if (it == j.end()) throw ParseError(std::string("missing field \"") + key + "\"", line);
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!it->is_number_unsigned())
        throw ParseError(std::string("field \"") + key + "\" must be a non-negative integer", line);
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer())
        throw ParseError(std::string("field \"") + key + "\" must be an integer", line);
    }
    return it->get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("field \"") + key + "\": " + e.what(), line);
  }
}

/// Calls fn(json, line_number) for every non-blank line.
template <class Fn>
void for_each_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(parse_jsonl_line(text, line), line);
  }
}

inline void save_meta(const NodeMeta& meta, const std::filesystem::path& path) {
  std::string out;
  for (std::size_t i = 0; i < meta.size(); ++i)
    out += node_record_json(static_cast<NodeId>(i), meta[i]).dump() + "\n";
  detail::write_file(path, out);
}

/// Node ids must appear densely as 0..n-1 in file order.
inline NodeMeta load_meta(const std::filesystem::path& path) {
  NodeMeta meta;
  for_each_jsonl(path, [&](const nlohmann::json& j, std::size_t line) {
    const auto id = jsonl_field<std::uint64_t>(j, "node", line);
    if (id != meta.size())
      throw ParseError("node id " + std::to_string(id) + " out of order (expected " +
                           std::to_string(meta.size()) + ")",
                       line);
    meta.push_back({jsonl_field<std::string>(j, "video", line),
                    jsonl_field<std::string>(j, "track", line),
                    jsonl_field<std::uint32_t>(j, "frame", line)});
  });
  return meta;
}

}  // namespace transvis
