#pragma once

// Portable activation traces.
//
// File layout (all integers little-endian, floats IEEE-754 binary32):
//
//   magic        8 bytes   "IPTRACE1"
//   version      u32       1
//   meta_len     u32       byte length of the metadata block
//   metadata     meta_len  UTF-8 JSON object (see TraceHeader)
//   chunk*       epoch u32 | layer_index u16 | rows u32 | cols u32 |
//                rows*cols f32 row-major
//
// A chunk's fixed fields are exactly 14 bytes; there is no padding anywhere.

#include "infoplane/matrix.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace infoplane {

static_assert(std::endian::native == std::endian::little,
              "trace I/O assumes a little-endian host");

inline constexpr std::array<char, 8> kTraceMagic = {'I', 'P', 'T', 'R', 'A', 'C', 'E', '1'};
inline constexpr std::uint32_t kTraceVersion = 1;
inline constexpr std::size_t kChunkFixedBytes = 14;

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TraceHeader {
  std::string dataset_name;
  std::vector<std::string> layer_names;
  std::vector<std::uint32_t> layer_dims;
  std::uint32_t num_classes = 0;
  std::uint32_t num_nodes = 0;
  std::string activation_name;
  std::int64_t seed = 0;
  std::vector<std::int32_t> labels;

  bool operator==(const TraceHeader&) const = default;
};

struct ActivationChunk {
  std::uint32_t epoch = 0;
  std::uint16_t layer_index = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;  // rows*cols, row-major

  float at(std::uint32_t r, std::uint32_t c) const { return values[std::size_t(r) * cols + c]; }

  Matrix to_matrix() const {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = values[i];
    return m;
  }
};

struct ActivationTrace {
  TraceHeader header;
  std::vector<ActivationChunk> chunks;

  std::size_t num_layers() const { return header.layer_names.size(); }

  std::vector<std::uint32_t> epochs() const {
    std::vector<std::uint32_t> out;
    for (const auto& c : chunks)
      if (out.empty() || out.back() != c.epoch) out.push_back(c.epoch);
    return out;
  }
};

struct ValidationReport {
  std::vector<std::string> findings;
  bool ok() const { return findings.empty(); }
};

// ---------------------------------------------------------------------------
// Header metadata

inline nlohmann::ordered_json header_to_json(const TraceHeader& h) {
  nlohmann::ordered_json j;
  j["dataset_name"] = h.dataset_name;
  j["layer_names"] = h.layer_names;
  j["layer_dims"] = h.layer_dims;
  j["num_classes"] = h.num_classes;
  j["num_nodes"] = h.num_nodes;
  j["activation_name"] = h.activation_name;
  j["seed"] = h.seed;
  j["labels"] = h.labels;
  return j;
}

inline TraceHeader header_from_json(const nlohmann::json& j) {
  TraceHeader h;
  try {
    h.dataset_name = j.at("dataset_name").get<std::string>();
    h.layer_names = j.at("layer_names").get<std::vector<std::string>>();
    h.layer_dims = j.at("layer_dims").get<std::vector<std::uint32_t>>();
    h.num_classes = j.at("num_classes").get<std::uint32_t>();
    h.num_nodes = j.at("num_nodes").get<std::uint32_t>();
    h.activation_name = j.at("activation_name").get<std::string>();
    h.seed = j.at("seed").get<std::int64_t>();
    h.labels = j.at("labels").get<std::vector<std::int32_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("malformed trace metadata: ") + e.what());
  }
  return h;
}

inline std::vector<std::string> header_findings(const TraceHeader& h) {
  std::vector<std::string> out;
  if (h.layer_names.empty()) out.emplace_back("no layers");
  if (h.layer_names.size() != h.layer_dims.size())
    out.emplace_back("layer_names and layer_dims differ in length");
  if (h.layer_names.size() > 0xFFFF) out.emplace_back("layer_names: too many layers");
  for (std::size_t i = 0; i < h.layer_dims.size(); ++i)
    if (h.layer_dims[i] == 0) out.push_back("layer_dims: layer " + std::to_string(i) + " has zero width");
  if (h.num_classes < 1) out.emplace_back("num_classes: must be >= 1");
  if (h.num_nodes < 1) out.emplace_back("num_nodes: must be >= 1");
  if (h.labels.size() != h.num_nodes)
    out.push_back("labels: length " + std::to_string(h.labels.size()) + " != num_nodes " +
                  std::to_string(h.num_nodes));
  for (std::size_t i = 0; i < h.labels.size(); ++i) {
    if (h.labels[i] < 0 || std::uint32_t(h.labels[i]) >= h.num_classes) {
      out.push_back("labels: label out of range at node " + std::to_string(i) + " (value " +
                    std::to_string(h.labels[i]) + ")");
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

inline ValidationReport validate_trace(const ActivationTrace& trace) {
  ValidationReport report;
  report.findings = header_findings(trace.header);
  const auto& h = trace.header;
  const std::size_t num_layers = h.layer_names.size();

  std::map<std::uint32_t, std::set<std::uint16_t>> seen;
  std::set<std::uint32_t> reported_dup;
  for (std::size_t k = 0; k < trace.chunks.size(); ++k) {
    const auto& c = trace.chunks[k];
    const std::string where =
        " (chunk " + std::to_string(k) + ", epoch " + std::to_string(c.epoch) + ", layer " +
        std::to_string(c.layer_index) + ")";
    if (k > 0) {
      const auto& p = trace.chunks[k - 1];
      if (std::tie(p.epoch, p.layer_index) > std::tie(c.epoch, c.layer_index))
        report.findings.push_back("chunks out of order" + where);
    }
    if (c.layer_index >= num_layers) {
      report.findings.push_back("layer index out of range" + where);
    } else if (c.cols != h.layer_dims[c.layer_index]) {
      report.findings.push_back("column count mismatch" + where);
    }
    if (c.rows != h.num_nodes) report.findings.push_back("row count mismatch" + where);
    if (c.values.size() != std::size_t(c.rows) * c.cols)
      report.findings.push_back("payload size mismatch" + where);
    for (std::size_t i = 0; i < c.values.size(); ++i) {
      if (!std::isfinite(c.values[i])) {
        report.findings.push_back("non-finite value at row " + std::to_string(i / std::max(c.cols, 1u)) +
                                  ", col " + std::to_string(i % std::max(c.cols, 1u)) + where);
        break;
      }
    }
    if (!seen[c.epoch].insert(c.layer_index).second && reported_dup.insert(c.epoch).second)
      report.findings.push_back("duplicate epoch " + std::to_string(c.epoch) + " (layer " +
                                std::to_string(c.layer_index) + " repeated)");
  }
  for (const auto& [epoch, layers] : seen) {
    if (layers.size() < num_layers) report.findings.push_back("partial epoch " + std::to_string(epoch));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Byte-level helpers

namespace detail {

template <typename T>
void put_le(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline std::string encode_header(const TraceHeader& h) {
  const std::string meta = header_to_json(h).dump();
  std::string buf(kTraceMagic.data(), kTraceMagic.size());
  put_le<std::uint32_t>(buf, kTraceVersion);
  put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(meta.size()));
  buf += meta;
  return buf;
}

inline std::string encode_chunk_fixed(std::uint32_t epoch, std::uint16_t layer, std::uint32_t rows,
                                      std::uint32_t cols) {
  std::string buf;
  buf.reserve(kChunkFixedBytes);
  put_le(buf, epoch);
  put_le(buf, layer);
  put_le(buf, rows);
  put_le(buf, cols);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Writing

// Receives per-epoch, per-layer activations during training.
class ActivationSink {
 public:
  virtual ~ActivationSink() = default;
  virtual void append_snapshot(std::uint32_t epoch, std::uint16_t layer_index, const Matrix& z) = 0;
};

namespace detail {

// Shared append-order bookkeeping for the file writer and the in-memory recorder.
class SnapshotOrder {
 public:
  explicit SnapshotOrder(const TraceHeader& h) : header_(&h) {}

  std::vector<float> check_and_convert(std::uint32_t epoch, std::uint16_t layer, const Matrix& z) {
    const auto& h = *header_;
    if (layer >= h.layer_names.size())
      throw TraceError("layer index " + std::to_string(layer) + " out of range");
    if (z.rows() != Eigen::Index(h.num_nodes) || z.cols() != Eigen::Index(h.layer_dims[layer]))
      throw TraceError("dimension mismatch for layer " + std::to_string(layer) + ": expected " +
                       std::to_string(h.num_nodes) + "x" + std::to_string(h.layer_dims[layer]) +
                       ", got " + std::to_string(z.rows()) + "x" + std::to_string(z.cols()));
    if (current_ && epoch < *current_)
      throw TraceError("non-monotonic epoch: " + std::to_string(epoch) + " after " +
                       std::to_string(*current_));
    if (current_ && epoch > *current_) finish_group();
    if (!current_ || epoch != *current_) {
      current_ = epoch;
      layers_.clear();
    }
    if (layers_.count(layer))
      throw TraceError("duplicate layer " + std::to_string(layer) + " in epoch " + std::to_string(epoch));

    std::vector<float> out(std::size_t(z.size()));
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        const float v = static_cast<float>(z(r, c));
        if (!std::isfinite(v))
          throw TraceError("non-finite value at (row " + std::to_string(r) + ", col " + std::to_string(c) +
                           ") in epoch " + std::to_string(epoch) + " layer " + std::to_string(layer));
        out[std::size_t(r * z.cols() + c)] = v;
      }
    }
    layers_.insert(layer);
    return out;
  }

  void finish_group() const {
    if (current_ && layers_.size() != header_->layer_names.size())
      throw TraceError("partial epoch " + std::to_string(*current_));
  }

 private:
  const TraceHeader* header_;
  std::optional<std::uint32_t> current_;
  std::set<std::uint16_t> layers_;
};

inline void require_valid_header(const TraceHeader& h) {
  auto findings = header_findings(h);
  if (!findings.empty()) throw TraceError("invalid trace header: " + findings.front());
}

}  // namespace detail

// Append-only trace file writer. Single owner; close() checks that the last
// epoch group is complete.
class TraceWriter : public ActivationSink {
 public:
  TraceWriter(const std::filesystem::path& path, TraceHeader header)
      : header_(std::move(header)), order_(header_), path_(path) {
    detail::require_valid_header(header_);
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw TraceError("cannot open trace file for writing: " + path.string());
    write(detail::encode_header(header_));
  }

  TraceWriter(const TraceWriter&) = delete;
  TraceWriter& operator=(const TraceWriter&) = delete;

  ~TraceWriter() override {
    if (out_.is_open()) out_.close();
  }

  void append_snapshot(std::uint32_t epoch, std::uint16_t layer_index, const Matrix& z) override {
    auto values = order_.check_and_convert(epoch, layer_index, z);
    write(detail::encode_chunk_fixed(epoch, layer_index, std::uint32_t(z.rows()), std::uint32_t(z.cols())));
    write(std::string_view(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(float)));
  }

  // Writes an already-converted chunk (used when re-serializing a loaded trace).
  void append_chunk(const ActivationChunk& c) {
    append_snapshot(c.epoch, c.layer_index, c.to_matrix());
  }

  void close() {
    if (!out_.is_open()) return;
    order_.finish_group();
    out_.flush();
    if (!out_) throw TraceError("write failure on " + path_.string());
    out_.close();
  }

  const TraceHeader& header() const { return header_; }

 private:
  void write(std::string_view bytes) {
    out_.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out_) throw TraceError("write failure on " + path_.string());
  }

  TraceHeader header_;
  detail::SnapshotOrder order_;
  std::filesystem::path path_;
  std::ofstream out_;
};

inline TraceWriter open_writer(const std::filesystem::path& path, TraceHeader header) {
  return TraceWriter(path, std::move(header));
}

// Collects snapshots into an in-memory trace with the same checks and float
// conversion as the file writer.
class TraceRecorder : public ActivationSink {
 public:
  explicit TraceRecorder(TraceHeader header) : order_(trace_.header) {
    detail::require_valid_header(header);
    trace_.header = std::move(header);
  }
  TraceRecorder(const TraceRecorder&) = delete;
  TraceRecorder& operator=(const TraceRecorder&) = delete;

  void append_snapshot(std::uint32_t epoch, std::uint16_t layer_index, const Matrix& z) override {
    ActivationChunk c;
    c.values = order_.check_and_convert(epoch, layer_index, z);
    c.epoch = epoch;
    c.layer_index = layer_index;
    c.rows = std::uint32_t(z.rows());
    c.cols = std::uint32_t(z.cols());
    trace_.chunks.push_back(std::move(c));
  }

  ActivationTrace finish() {
    order_.finish_group();
    std::stable_sort(trace_.chunks.begin(), trace_.chunks.end(), [](const auto& a, const auto& b) {
      return std::tie(a.epoch, a.layer_index) < std::tie(b.epoch, b.layer_index);
    });
    return std::move(trace_);
  }

 private:
  ActivationTrace trace_;
  detail::SnapshotOrder order_;
};

// Fans one snapshot out to several sinks.
class TeeSink : public ActivationSink {
 public:
  explicit TeeSink(std::vector<ActivationSink*> sinks) : sinks_(std::move(sinks)) {}
  void append_snapshot(std::uint32_t epoch, std::uint16_t layer_index, const Matrix& z) override {
    for (auto* s : sinks_) s->append_snapshot(epoch, layer_index, z);
  }

 private:
  std::vector<ActivationSink*> sinks_;
};

inline void write_trace(const std::filesystem::path& path, const ActivationTrace& trace) {
  TraceWriter w(path, trace.header);
  for (const auto& c : trace.chunks) w.append_chunk(c);
  w.close();
}

inline std::uint64_t expected_file_size(const ActivationTrace& trace) {
  std::uint64_t size = detail::encode_header(trace.header).size();
  for (const auto& c : trace.chunks) size += kChunkFixedBytes + std::uint64_t(c.rows) * c.cols * 4;
  return size;
}

// ---------------------------------------------------------------------------
// Reading

// Sequential chunk reader. Performs framing checks only; semantic checks
// (partial epochs, dimensions) are done by load_trace / validate_trace.
class TraceReader {
 public:
  explicit TraceReader(const std::filesystem::path& path) : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) throw TraceError("cannot open trace file: " + path.string());
    char fixed[16];
    if (!read_exact(fixed, sizeof fixed)) throw TraceError("truncated header in " + path.string());
    const auto version = detail::get_le<std::uint32_t>(fixed + 8);
    if (std::memcmp(fixed, kTraceMagic.data(), kTraceMagic.size()) != 0 || version != kTraceVersion)
      throw TraceError("unsupported magic/version in " + path.string());
    const auto meta_len = detail::get_le<std::uint32_t>(fixed + 12);
    std::string meta(meta_len, '\0');
    if (!read_exact(meta.data(), meta_len)) throw TraceError("truncated header in " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
      throw TraceError(std::string("malformed trace metadata: ") + e.what());
    }
    header_ = header_from_json(j);
    detail::require_valid_header(header_);
    offset_ = 16 + std::uint64_t(meta_len);
  }

  const TraceHeader& header() const { return header_; }

  // Returns nullopt at a clean end of file.
  std::optional<ActivationChunk> next_chunk() {
    char fixed[kChunkFixedBytes];
    in_.read(fixed, kChunkFixedBytes);
    const auto got = std::size_t(in_.gcount());
    if (got == 0) return std::nullopt;
    if (got != kChunkFixedBytes) throw truncated();
    ActivationChunk c;
    c.epoch = detail::get_le<std::uint32_t>(fixed);
    c.layer_index = detail::get_le<std::uint16_t>(fixed + 4);
    c.rows = detail::get_le<std::uint32_t>(fixed + 6);
    c.cols = detail::get_le<std::uint32_t>(fixed + 10);
    if (c.layer_index >= header_.layer_dims.size() || c.rows != header_.num_nodes ||
        c.cols != header_.layer_dims[c.layer_index]) {
      throw TraceError("chunk at offset " + std::to_string(offset_) + " (epoch " + std::to_string(c.epoch) +
                       ", layer " + std::to_string(c.layer_index) + ") does not match header dimensions");
    }
    c.values.resize(std::size_t(c.rows) * c.cols);
    if (!read_exact(reinterpret_cast<char*>(c.values.data()), c.values.size() * sizeof(float)))
      throw truncated();
    offset_ += kChunkFixedBytes + c.values.size() * sizeof(float);
    return c;
  }

  // Reads one complete epoch group (all layers, sorted by layer index).
  // Requires chunks of one epoch to be contiguous on disk.
  std::optional<std::vector<ActivationChunk>> next_epoch() {
    std::vector<ActivationChunk> group;
    if (pending_) {
      group.push_back(std::move(*pending_));
      pending_.reset();
    }
    while (true) {
      auto c = next_chunk();
      if (!c) break;
      if (!group.empty() && c->epoch != group.front().epoch) {
        pending_ = std::move(c);
        break;
      }
      group.push_back(std::move(*c));
    }
    if (group.empty()) return std::nullopt;
    std::sort(group.begin(), group.end(),
              [](const auto& a, const auto& b) { return a.layer_index < b.layer_index; });
    const auto epoch = group.front().epoch;
    if (last_epoch_ && epoch <= *last_epoch_)
      throw TraceError("non-monotonic epoch " + std::to_string(epoch) + " in " + path_.string());
    last_epoch_ = epoch;
    std::set<std::uint16_t> layers;
    for (const auto& c : group)
      if (!layers.insert(c.layer_index).second) throw TraceError("duplicate epoch " + std::to_string(epoch));
    if (layers.size() != header_.layer_names.size()) throw TraceError("partial epoch " + std::to_string(epoch));
    return group;
  }

 private:
  bool read_exact(char* dst, std::size_t n) {
    in_.read(dst, std::streamsize(n));
    return std::size_t(in_.gcount()) == n;
  }

  TraceError truncated() const {
    return TraceError("truncated chunk at offset " + std::to_string(offset_) + " in " + path_.string());
  }

  std::filesystem::path path_;
  std::ifstream in_;
  TraceHeader header_;
  std::uint64_t offset_ = 0;
  std::optional<ActivationChunk> pending_;
  std::optional<std::uint32_t> last_epoch_;
};

inline ActivationTrace load_trace(const std::filesystem::path& path) {
  TraceReader reader(path);
  ActivationTrace trace;
  trace.header = reader.header();
  while (auto c = reader.next_chunk()) trace.chunks.push_back(std::move(*c));
  std::stable_sort(trace.chunks.begin(), trace.chunks.end(), [](const auto& a, const auto& b) {
    return std::tie(a.epoch, a.layer_index) < std::tie(b.epoch, b.layer_index);
  });
  auto report = validate_trace(trace);
  if (!report.ok()) throw TraceError(report.findings.front());
  return trace;
}

// Summary used by `trace info`.
inline nlohmann::ordered_json trace_info_json(const std::filesystem::path& path) {
  TraceReader reader(path);
  auto j = header_to_json(reader.header());
  std::set<std::uint32_t> epochs;
  std::uint64_t chunks = 0;
  while (auto c = reader.next_chunk()) {
    epochs.insert(c->epoch);
    ++chunks;
  }
  j["num_chunks"] = chunks;
  j["num_epochs"] = epochs.size();
  if (!epochs.empty()) {
    j["first_epoch"] = *epochs.begin();
    j["last_epoch"] = *epochs.rbegin();
  }
  return j;
}

}  // namespace infoplane
