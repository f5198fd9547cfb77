#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pmx/bags.hpp"
#include "pmx/errors.hpp"
#include "pmx/matrix.hpp"
#include "pmx/reduce.hpp"

namespace pmx {

namespace fs = std::filesystem;

/// Shortest round-trip decimal text for a double (deterministic).
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void put_f64_le(std::string& out, double d) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError("read failed on '" + path.string() + "'");
  return bytes;
}

inline void write_file_bytes(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw DataError("write failed on '" + path.string() + "'");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Binary matrix format: magic "PMB1", rows and cols as unsigned 32-bit
// little-endian, then rows*cols doubles, little-endian, row-major. Exact file
// length is 12 + rows*cols*8 bytes.
// ---------------------------------------------------------------------------

inline std::string encode_matrix(const Matrix& m) {
  if (m.rows() > std::numeric_limits<std::uint32_t>::max() ||
      m.cols() > std::numeric_limits<std::uint32_t>::max()) {
    throw ParamError("encode_matrix: dimensions exceed 32-bit range");
  }
  std::string out;
  out.reserve(12 + m.size() * 8);
  out += "PMB1";
  detail::put_u32_le(out, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32_le(out, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.size(); ++i) detail::put_f64_le(out, m.data()[i]);
  return out;
}

/// Decode a matrix from raw bytes. With widen_f32, a file whose payload holds
/// 32-bit floats (length 12 + rows*cols*4) is accepted and widened to double.
inline Matrix decode_matrix(std::string_view bytes, bool widen_f32 = false) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PMB1", 4) != 0) {
    throw FormatError("bad magic, expected \"PMB1\"", 0);
  }
  if (bytes.size() < 12) throw FormatError("truncated header", bytes.size());
  const std::uint64_t rows = detail::get_u32_le(p + 4);
  const std::uint64_t cols = detail::get_u32_le(p + 8);
  const std::uint64_t count = rows * cols;
  if (cols != 0 && count / cols != rows) throw FormatError("dimension overflow", 4);
  const std::uint64_t expect64 = 12 + count * 8;
  const std::uint64_t expect32 = 12 + count * 4;

  std::size_t word = 8;
  if (bytes.size() != expect64) {
    if (widen_f32 && bytes.size() == expect32) {
      word = 4;
    } else {
      throw FormatError("length mismatch: header implies " +
                            std::to_string(expect64) + " bytes, file has " +
                            std::to_string(bytes.size()),
                        std::min<std::uint64_t>(expect64, bytes.size()));
    }
  }

  Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  const unsigned char* q = p + 12;
  for (std::uint64_t i = 0; i < count; ++i, q += word) {
    if (word == 8) {
      m.data()[i] = std::bit_cast<double>(detail::get_u64_le(q));
    } else {
      const std::uint32_t bits = detail::get_u32_le(q);
      m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return m;
}

inline void write_matrix(const fs::path& path, const Matrix& m) {
  detail::write_file_bytes(path, encode_matrix(m));
}

inline Matrix read_matrix(const fs::path& path, bool widen_f32 = false) {
  return decode_matrix(detail::read_file_bytes(path), widen_f32);
}

// ---------------------------------------------------------------------------
// Manifest: line-oriented, tab-separated. '#' lines and blank lines are
// ignored. Header block gives dataset_name, num_classes and kind
// ("embeddings" or "prototypes"), then a column-header line, then one entry
// per line. Paths are relative to the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string slide_id;
  std::size_t class_label = 0;
  std::size_t domain_id = 0;
  std::string path;
};

struct Manifest {
  std::string dataset_name;
  std::size_t num_classes = 0;
  std::string kind = "embeddings";  // or "prototypes"
  std::vector<ManifestEntry> entries;
};

namespace detail {

inline std::size_t parse_count(std::string_view text, const std::string& what,
                               std::size_t line_no) {
  std::size_t value = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DataError("manifest line " + std::to_string(line_no) + ": bad " + what +
                    " '" + std::string(text) + "'");
  }
  return value;
}

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

}  // namespace detail

inline constexpr const char* kManifestColumns = "slide_id\tclass_label\tdomain_id\tpath";

inline Manifest parse_manifest(std::string_view text) {
  Manifest man;
  std::size_t line_no = 0, header_state = 0;
  std::size_t pos = 0;
  std::vector<std::string> seen_ids;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    std::string_view line = text.substr(
        pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    const auto fields = detail::split_tabs(line);
    switch (header_state) {
      case 0:
        if (fields.size() != 2 || fields[0] != "dataset_name") {
          throw DataError("manifest line " + std::to_string(line_no) +
                          ": expected 'dataset_name<TAB><name>'");
        }
        man.dataset_name = std::string(fields[1]);
        header_state = 1;
        break;
      case 1:
        if (fields.size() != 2 || fields[0] != "num_classes") {
          throw DataError("manifest line " + std::to_string(line_no) +
                          ": expected 'num_classes<TAB><count>'");
        }
        man.num_classes = detail::parse_count(fields[1], "num_classes", line_no);
        if (man.num_classes == 0) {
          throw DataError("manifest line " + std::to_string(line_no) +
                          ": num_classes must be >= 1");
        }
        header_state = 2;
        break;
      case 2:
        if (fields.size() != 2 || fields[0] != "kind") {
          throw DataError("manifest line " + std::to_string(line_no) +
                          ": expected 'kind<TAB>embeddings|prototypes'");
        }
        if (fields[1] != "embeddings" && fields[1] != "prototypes") {
          throw DataError("manifest line " + std::to_string(line_no) +
                          ": unknown kind '" + std::string(fields[1]) + "'");
        }
        man.kind = std::string(fields[1]);
        header_state = 3;
        break;
      case 3:
        if (line != kManifestColumns) {
          throw DataError("manifest line " + std::to_string(line_no) +
                          ": expected column header '" +
                          std::string(kManifestColumns) + "'");
        }
        header_state = 4;
        break;
      default: {
        if (fields.size() != 4) {
          throw DataError("manifest line " + std::to_string(line_no) +
                          ": expected 4 tab-separated fields, got " +
                          std::to_string(fields.size()));
        }
        ManifestEntry e;
        e.slide_id = std::string(fields[0]);
        e.class_label = detail::parse_count(fields[1], "class_label", line_no);
        e.domain_id = detail::parse_count(fields[2], "domain_id", line_no);
        e.path = std::string(fields[3]);
        if (e.slide_id.empty() || e.path.empty()) {
          throw DataError("manifest line " + std::to_string(line_no) +
                          ": empty slide_id or path");
        }
        if (e.class_label >= man.num_classes) {
          throw DataError("manifest: slide '" + e.slide_id + "' has class_label " +
                          std::to_string(e.class_label) + " outside [0, " +
                          std::to_string(man.num_classes) + ")");
        }
        for (const std::string& id : seen_ids) {
          if (id == e.slide_id) {
            throw DataError("manifest: duplicate slide_id '" + e.slide_id + "'");
          }
        }
        seen_ids.push_back(e.slide_id);
        man.entries.push_back(std::move(e));
        break;
      }
    }
  }
  if (header_state < 4) throw DataError("manifest: incomplete header block");
  return man;
}

inline std::string encode_manifest(const Manifest& man) {
  std::string out;
  out += "dataset_name\t" + man.dataset_name + "\n";
  out += "num_classes\t" + std::to_string(man.num_classes) + "\n";
  out += "kind\t" + man.kind + "\n";
  out += std::string(kManifestColumns) + "\n";
  for (const ManifestEntry& e : man.entries) {
    out += e.slide_id + "\t" + std::to_string(e.class_label) + "\t" +
           std::to_string(e.domain_id) + "\t" + e.path + "\n";
  }
  return out;
}

inline Manifest read_manifest(const fs::path& path) {
  return parse_manifest(detail::read_file_bytes(path));
}

inline void write_manifest(const fs::path& path, const Manifest& man) {
  detail::write_file_bytes(path, encode_manifest(man));
}

// ---------------------------------------------------------------------------
// Dataset loading. Prototype bags keep their per-cluster sizes in a sidecar
// "<path>.sizes" (a 1×k matrix in the same binary format).
// ---------------------------------------------------------------------------

inline fs::path sizes_sidecar(const fs::path& bag_path) {
  fs::path p = bag_path;
  p += ".sizes";
  return p;
}

struct LoadedDataset {
  Manifest manifest;
  std::vector<EmbeddingBag> embeddings;  // filled when kind == "embeddings"
  std::vector<PrototypeBag> prototypes;  // filled when kind == "prototypes"
  std::size_t feature_dim = 0;           // common N across bags
  bool is_prototype() const { return manifest.kind == "prototypes"; }
  std::size_t size() const {
    return is_prototype() ? prototypes.size() : embeddings.size();
  }
};

inline LoadedDataset load_dataset(const fs::path& manifest_path,
                                  bool widen_f32 = false) {
  LoadedDataset ds;
  ds.manifest = read_manifest(manifest_path);
  const fs::path base = manifest_path.has_parent_path()
                            ? manifest_path.parent_path()
                            : fs::path(".");
  std::size_t common_rows = 0;  // prototype bags must also agree on k
  for (const ManifestEntry& e : ds.manifest.entries) {
    const fs::path bag_path = base / e.path;
    if (!fs::exists(bag_path)) {
      throw DataError("slide '" + e.slide_id + "': missing bag file '" +
                      bag_path.string() + "'");
    }
    Matrix m = read_matrix(bag_path, widen_f32);
    if (m.rows() == 0 || m.cols() == 0) {
      throw DataError("slide '" + e.slide_id + "': empty matrix");
    }
    if (!m.all_finite()) {
      throw DataError("slide '" + e.slide_id + "': non-finite values");
    }
    if (ds.feature_dim == 0) {
      ds.feature_dim = m.cols();
    } else if (m.cols() != ds.feature_dim) {
      throw DataError("slide '" + e.slide_id + "': feature dim " +
                      std::to_string(m.cols()) + " does not match dataset dim " +
                      std::to_string(ds.feature_dim));
    }
    if (ds.is_prototype()) {
      if (common_rows == 0) {
        common_rows = m.rows();
      } else if (m.rows() != common_rows) {
        throw DataError("slide '" + e.slide_id + "': prototype count " +
                        std::to_string(m.rows()) + " does not match dataset k " +
                        std::to_string(common_rows));
      }
      const fs::path sp = sizes_sidecar(bag_path);
      if (!fs::exists(sp)) {
        throw DataError("slide '" + e.slide_id + "': missing sizes sidecar '" +
                        sp.string() + "'");
      }
      Matrix sz = read_matrix(sp);
      if (sz.rows() != 1 || sz.cols() != m.rows()) {
        throw DataError("slide '" + e.slide_id + "': sizes sidecar is " +
                        sz.shape_str() + ", expected 1x" +
                        std::to_string(m.rows()));
      }
      PrototypeBag bag;
      bag.slide_id = e.slide_id;
      bag.class_label = e.class_label;
      bag.domain_id = e.domain_id;
      bag.prototypes = std::move(m);
      bag.cluster_sizes.resize(sz.cols());
      for (std::size_t j = 0; j < sz.cols(); ++j) {
        const double v = sz(0, j);
        if (!(v >= 0.0) || v != std::floor(v) ||
            v > static_cast<double>(std::numeric_limits<std::uint32_t>::max())) {
          throw DataError("slide '" + e.slide_id +
                          "': sizes sidecar holds a non-count value " +
                          format_double(v));
        }
        bag.cluster_sizes[j] = static_cast<std::uint32_t>(v);
      }
      ds.prototypes.push_back(std::move(bag));
    } else {
      EmbeddingBag bag;
      bag.slide_id = e.slide_id;
      bag.class_label = e.class_label;
      bag.domain_id = e.domain_id;
      bag.features = std::move(m);
      ds.embeddings.push_back(std::move(bag));
    }
  }
  return ds;
}

/// Largest domain_id + 1 across entries (0 for an empty manifest).
inline std::size_t infer_num_domains(const Manifest& man) {
  std::size_t top = 0;
  for (const ManifestEntry& e : man.entries) top = std::max(top, e.domain_id + 1);
  return top;
}

// ---------------------------------------------------------------------------
// Dataset writing: out_dir/manifest.tsv plus out_dir/bags/<slide_id>.pmb
// (and .pmb.sizes for prototypes).
// ---------------------------------------------------------------------------

inline Manifest write_embedding_dataset(const fs::path& out_dir,
                                        const std::string& dataset_name,
                                        std::size_t num_classes,
                                        const std::vector<EmbeddingBag>& bags) {
  fs::create_directories(out_dir / "bags");
  Manifest man;
  man.dataset_name = dataset_name;
  man.num_classes = num_classes;
  man.kind = "embeddings";
  for (const EmbeddingBag& bag : bags) {
    const std::string rel = "bags/" + bag.slide_id + ".pmb";
    write_matrix(out_dir / rel, bag.features);
    man.entries.push_back({bag.slide_id, bag.class_label, bag.domain_id, rel});
  }
  write_manifest(out_dir / "manifest.tsv", man);
  return man;
}

inline Manifest write_prototype_dataset(const fs::path& out_dir,
                                        const std::string& dataset_name,
                                        std::size_t num_classes,
                                        const std::vector<PrototypeBag>& bags) {
  fs::create_directories(out_dir / "bags");
  Manifest man;
  man.dataset_name = dataset_name;
  man.num_classes = num_classes;
  man.kind = "prototypes";
  for (const PrototypeBag& bag : bags) {
    const std::string rel = "bags/" + bag.slide_id + ".pmb";
    write_matrix(out_dir / rel, bag.prototypes);
    Matrix sz(1, bag.cluster_sizes.size());
    for (std::size_t j = 0; j < bag.cluster_sizes.size(); ++j) {
      sz(0, j) = static_cast<double>(bag.cluster_sizes[j]);
    }
    write_matrix(sizes_sidecar(out_dir / rel), sz);
    man.entries.push_back({bag.slide_id, bag.class_label, bag.domain_id, rel});
  }
  write_manifest(out_dir / "manifest.tsv", man);
  return man;
}

// ---------------------------------------------------------------------------
// File-level reduction: read each bag listed in the manifest, reduce it, and
// persist prototypes + sizes + a fresh manifest + a CSV report under out_dir.
// Unreadable bags are recorded in the report and skipped; if every bag fails
// the whole run fails.
// ---------------------------------------------------------------------------

inline std::string encode_reduce_report(const std::vector<ReduceReportRow>& rows) {
  std::string out = "slide_id,instances,k,inertia,iterations,degenerate,note\n";
  for (const ReduceReportRow& r : rows) {
    std::string note = r.note;
    for (char& c : note) {
      if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    out += r.slide_id + "," + std::to_string(r.instance_count) + "," +
           std::to_string(r.k) + "," + format_double(r.inertia) + "," +
           std::to_string(r.iterations) + "," + (r.degenerate ? "1" : "0") + "," +
           note + "\n";
  }
  return out;
}

struct ReduceDatasetResult {
  Manifest manifest;  // manifest of the written prototype dataset
  std::vector<ReduceReportRow> report;
  std::size_t failed = 0;
};

inline ReduceDatasetResult reduce_dataset(const fs::path& manifest_path,
                                          std::size_t k, std::uint64_t seed,
                                          const fs::path& out_dir,
                                          std::size_t restarts = 5,
                                          bool widen_f32 = false) {
  const Manifest in_man = read_manifest(manifest_path);
  if (in_man.entries.empty()) throw DataError("reduce_dataset: no bags");
  if (in_man.kind != "embeddings") {
    throw DataError("reduce_dataset: manifest kind is '" + in_man.kind +
                    "', expected 'embeddings'");
  }
  const fs::path base = manifest_path.has_parent_path()
                            ? manifest_path.parent_path()
                            : fs::path(".");
  fs::create_directories(out_dir / "bags");

  ReduceDatasetResult out;
  out.manifest.dataset_name = in_man.dataset_name;
  out.manifest.num_classes = in_man.num_classes;
  out.manifest.kind = "prototypes";

  for (const ManifestEntry& e : in_man.entries) {
    ReduceReportRow row;
    row.slide_id = e.slide_id;
    row.k = k;
    try {
      EmbeddingBag bag;
      bag.slide_id = e.slide_id;
      bag.class_label = e.class_label;
      bag.domain_id = e.domain_id;
      bag.features = read_matrix(base / e.path, widen_f32);
      row.instance_count = bag.features.rows();
      ReduceOutcome one = reduce_bag(bag, k, seed, restarts);
      row.inertia = one.inertia;
      row.iterations = one.iterations;
      row.degenerate = one.degenerate;

      const std::string rel = "bags/" + e.slide_id + ".pmb";
      write_matrix(out_dir / rel, one.bag.prototypes);
      Matrix sz(1, one.bag.cluster_sizes.size());
      for (std::size_t j = 0; j < one.bag.cluster_sizes.size(); ++j) {
        sz(0, j) = static_cast<double>(one.bag.cluster_sizes[j]);
      }
      write_matrix(sizes_sidecar(out_dir / rel), sz);
      out.manifest.entries.push_back({e.slide_id, e.class_label, e.domain_id, rel});
    } catch (const std::exception& ex) {
      row.note = ex.what();
      ++out.failed;
    }
    out.report.push_back(std::move(row));
  }

  if (out.failed == in_man.entries.size()) {
    throw DataError("reduce_dataset: all " + std::to_string(out.failed) +
                    " bags failed; first failure: " + out.report.front().note);
  }
  write_manifest(out_dir / "manifest.tsv", out.manifest);
  detail::write_file_bytes(out_dir / "report.csv", encode_reduce_report(out.report));
  return out;
}

}  // namespace pmx
