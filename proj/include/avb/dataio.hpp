#pragma once

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "task.hpp"

namespace avb {

static_assert(std::endian::native == std::endian::little,
              "binary feature I/O assumes a little-endian host");

/// Utterance ids mapped to fixed-length embedding vectors.
struct FeatureTable {
  std::string feature_name;
  std::size_t dims = 0;
  std::vector<std::string> ids;
  Matrix<double> values;  // ids.size() x dims

  std::size_t size() const noexcept { return ids.size(); }
  std::span<const double> vector(std::size_t i) const { return values.row(i); }
};

struct LabelRow {
  std::string id;
  Split split = Split::Train;
  bool has_targets = true;
  std::vector<double> targets;  // regression tasks
  int class_index = -1;         // Type task
};

struct LabelTable {
  Task task = Task::Two;
  std::vector<std::string> target_names;
  std::vector<LabelRow> rows;

  std::size_t size() const noexcept { return rows.size(); }
};

/// One split of a joined dataset. Row order follows the label file.
struct Partition {
  std::vector<std::string> ids;
  Matrix<double> features;
  Matrix<double> targets;   // regression: rows x K
  std::vector<int> classes; // Type: one class index per row
  bool labeled = true;

  std::size_t size() const noexcept { return ids.size(); }
};

struct Dataset {
  Task task = Task::Two;
  std::string feature_name;
  std::size_t dims = 0;
  std::vector<std::string> target_names;
  Partition train, val, test;
  std::size_t dropped_features = 0;  // feature ids with no label row
  std::size_t dropped_labels = 0;    // label ids with no feature vector
};

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::ifstream open_in(const std::filesystem::path& path, bool binary = false) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::filesystem::path& path, bool binary = false) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  return out;
}

inline Split parse_split(std::string_view s, const std::string& path, std::size_t row) {
  s = trim(s);
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw FormatError(path, row, "unknown split token '" + std::string(s) + "'");
}

template <class T>
T read_le(std::istream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError(path, 0, "truncated binary feature file");
  return v;
}

template <class T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline constexpr char kBinaryMagic[4] = {'A', 'V', 'B', 'F'};

}  // namespace detail

// ---- features ---------------------------------------------------------------

inline FeatureTable load_features_csv(const std::filesystem::path& path) {
  const std::string p = path.string();
  auto in = detail::open_in(path);
  FeatureTable table;
  table.feature_name = path.stem().string();

  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw FormatError(p, 1, "empty file, expected header");
  ++lineno;
  {
    auto cols = detail::split_csv(detail::trim(line));
    if (cols.size() < 2 || detail::trim(cols[0]) != "file_id")
      throw FormatError(p, lineno, "malformed header, expected 'file_id,f0,...'");
    for (std::size_t j = 1; j < cols.size(); ++j)
      if (detail::trim(cols[j]) != "f" + std::to_string(j - 1))
        throw FormatError(p, lineno, "malformed header: column " + std::to_string(j) +
                                         " should be 'f" + std::to_string(j - 1) + "'");
    table.dims = cols.size() - 1;
  }

  std::vector<double> flat;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    auto trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    auto cols = detail::split_csv(trimmed);
    if (cols.size() != table.dims + 1)
      throw FormatError(p, lineno, "expected " + std::to_string(table.dims) + " values, found " +
                                       std::to_string(cols.size() - 1));
    std::string id(detail::trim(cols[0]));
    if (id.empty()) throw FormatError(p, lineno, "empty file_id");
    if (!seen.insert(id).second) throw FormatError(p, lineno, "duplicate file_id '" + id + "'");
    for (std::size_t j = 1; j < cols.size(); ++j) {
      double v;
      if (!detail::parse_double(cols[j], v))
        throw FormatError(p, lineno, "cannot parse value '" + std::string(cols[j]) + "'");
      if (!std::isfinite(v)) throw FormatError(p, lineno, "non-finite value in column f" + std::to_string(j - 1));
      flat.push_back(v);
    }
    table.ids.push_back(std::move(id));
  }
  table.values = Matrix<double>(table.ids.size(), table.dims);
  table.values.data() = std::move(flat);
  return table;
}

/// Reads the AVBF binary layout: magic, u32 version, u32 N, u32 D, then N
/// records of (u16 id length, id bytes, D float32), all little-endian.
inline FeatureTable load_features_binary(const std::filesystem::path& path) {
  const std::string p = path.string();
  auto in = detail::open_in(path, true);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kBinaryMagic, 4) != 0) throw FormatError(p, 0, "bad magic, expected AVBF");
  const auto version = detail::read_le<std::uint32_t>(in, p);
  if (version != 1) throw FormatError(p, 0, "unsupported version " + std::to_string(version));
  const auto n = detail::read_le<std::uint32_t>(in, p);
  const auto d = detail::read_le<std::uint32_t>(in, p);
  if (d == 0) throw FormatError(p, 0, "dims must be positive");

  FeatureTable table;
  table.feature_name = path.stem().string();
  table.dims = d;
  table.values = Matrix<double>(n, d);
  table.ids.reserve(n);
  std::unordered_set<std::string> seen;
  std::vector<float> buf(d);
  for (std::uint32_t r = 0; r < n; ++r) {
    const auto len = detail::read_le<std::uint16_t>(in, p);
    std::string id(len, '\0');
    in.read(id.data(), len);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(d * sizeof(float)));
    if (!in) throw FormatError(p, r + 1, "truncated record");
    if (id.empty()) throw FormatError(p, r + 1, "empty file_id");
    if (!seen.insert(id).second) throw FormatError(p, r + 1, "duplicate file_id '" + id + "'");
    auto row = table.values.row(r);
    for (std::uint32_t j = 0; j < d; ++j) {
      if (!std::isfinite(buf[j])) throw FormatError(p, r + 1, "non-finite value in column f" + std::to_string(j));
      row[j] = buf[j];
    }
    table.ids.push_back(std::move(id));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(p, 0, "trailing bytes after last record");
  return table;
}

/// Loads a feature table, choosing the binary reader when the file starts
/// with the AVBF magic and the CSV reader otherwise. The feature name
/// defaults to the file stem.
inline FeatureTable load_features(const std::filesystem::path& path) {
  char magic[4] = {};
  {
    auto in = detail::open_in(path, true);
    in.read(magic, 4);
  }
  if (std::memcmp(magic, detail::kBinaryMagic, 4) == 0) return load_features_binary(path);
  return load_features_csv(path);
}

inline void write_features_csv(const FeatureTable& table, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "file_id";
  for (std::size_t j = 0; j < table.dims; ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.ids[i];
    for (double v : table.vector(i)) out << ',' << detail::format_double(v);
    out << '\n';
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

/// Values are narrowed to float32 on disk.
inline void write_features_binary(const FeatureTable& table, const std::filesystem::path& path) {
  auto out = detail::open_out(path, true);
  out.write(detail::kBinaryMagic, 4);
  detail::write_le<std::uint32_t>(out, 1);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(table.dims));
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& id = table.ids[i];
    if (id.size() > 0xffff) throw Error("file_id too long for binary format: " + id);
    detail::write_le<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    out.write(id.data(), static_cast<std::streamsize>(id.size()));
    for (double v : table.vector(i)) detail::write_le<float>(out, static_cast<float>(v));
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

// ---- labels -----------------------------------------------------------------

/// Maps an integer score in [1, 100] onto [0, 1] with (v - 1) / 99.
inline double scale_label(double raw) {
  if (!(raw >= 1.0 && raw <= 100.0) || raw != std::floor(raw))
    throw Error("raw label " + detail::format_double(raw) + " is not an integer in [1, 100]");
  return (raw - 1.0) / 99.0;
}

inline std::vector<double> scale_labels(std::span<const double> raw) {
  std::vector<double> out;
  out.reserve(raw.size());
  for (double v : raw) out.push_back(scale_label(v));
  return out;
}

/// Loads a label CSV with header `file_id,split,<targets>`. Regression
/// files must carry exactly output_dim(task) target columns; Type files a
/// single `voc_type` column of class tokens. Test rows may leave every
/// target empty. With `scale`, regression values are raw 1..100 integers.
inline LabelTable load_labels(const std::filesystem::path& path, Task task, bool scale = false) {
  const std::string p = path.string();
  auto in = detail::open_in(path);
  LabelTable table;
  table.task = task;

  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw FormatError(p, 1, "empty file, expected header");
  auto header = detail::split_csv(detail::trim(line));
  if (header.size() < 3 || detail::trim(header[0]) != "file_id" || detail::trim(header[1]) != "split")
    throw FormatError(p, 1, "malformed header, expected 'file_id,split,<targets>'");
  for (std::size_t j = 2; j < header.size(); ++j) table.target_names.emplace_back(detail::trim(header[j]));

  const std::size_t k = table.target_names.size();
  if (task == Task::Type) {
    if (k != 1 || table.target_names[0] != "voc_type")
      throw FormatError(p, 1, "type labels need exactly one 'voc_type' column");
  } else if (k != output_dim(task)) {
    throw FormatError(p, 1, "task " + std::string(to_string(task)) + " needs " +
                                std::to_string(output_dim(task)) + " target columns, header has " +
                                std::to_string(k));
  }

  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    auto trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    auto cols = detail::split_csv(trimmed);
    if (cols.size() != k + 2)
      throw FormatError(p, lineno, "expected " + std::to_string(k + 2) + " fields, found " + std::to_string(cols.size()));
    LabelRow row;
    row.id = std::string(detail::trim(cols[0]));
    if (row.id.empty()) throw FormatError(p, lineno, "empty file_id");
    if (!seen.insert(row.id).second) throw FormatError(p, lineno, "duplicate file_id '" + row.id + "'");
    row.split = detail::parse_split(cols[1], p, lineno);

    std::size_t empty = 0;
    for (std::size_t j = 2; j < cols.size(); ++j) empty += detail::trim(cols[j]).empty();
    if (empty == k) {
      if (row.split != Split::Test) throw FormatError(p, lineno, "missing targets outside the test split");
      row.has_targets = false;
    } else if (empty != 0) {
      throw FormatError(p, lineno, "partially empty target fields");
    } else if (task == Task::Type) {
      auto token = detail::trim(cols[2]);
      row.class_index = parse_type_class(token);
      if (row.class_index < 0) throw FormatError(p, lineno, "unknown class token '" + std::string(token) + "'");
    } else {
      row.targets.reserve(k);
      for (std::size_t j = 2; j < cols.size(); ++j) {
        double v;
        if (!detail::parse_double(cols[j], v))
          throw FormatError(p, lineno, "cannot parse target '" + std::string(cols[j]) + "'");
        if (scale) {
          try {
            v = scale_label(v);
          } catch (const Error& e) {
            throw FormatError(p, lineno, e.what());
          }
        }
        if (!(v >= 0.0 && v <= 1.0))
          throw FormatError(p, lineno, "target " + table.target_names[j - 2] + " = " +
                                           detail::format_double(v) + " outside [0, 1]");
        row.targets.push_back(v);
      }
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline void write_labels(const LabelTable& table, const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "file_id,split";
  for (const auto& n : table.target_names) out << ',' << n;
  out << '\n';
  for (const auto& row : table.rows) {
    out << row.id << ',' << to_string(row.split);
    if (table.task == Task::Type) {
      out << ',';
      if (row.has_targets) out << kTypeClasses.at(static_cast<std::size_t>(row.class_index));
    } else {
      for (std::size_t j = 0; j < table.target_names.size(); ++j) {
        out << ',';
        if (row.has_targets) out << detail::format_double(row.targets[j]);
      }
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

// ---- join -------------------------------------------------------------------

/// Inner join on utterance id, partitioned by split. Throws if the train or
/// val partition comes out empty.
inline Dataset join_split(const FeatureTable& features, const LabelTable& labels) {
  Dataset ds;
  ds.task = labels.task;
  ds.feature_name = features.feature_name;
  ds.dims = features.dims;
  ds.target_names = labels.target_names;

  std::unordered_map<std::string_view, std::size_t> index;
  index.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) index.emplace(features.ids[i], i);

  const bool regression = is_regression(labels.task);
  const std::size_t k = regression ? labels.target_names.size() : 0;
  struct Pending {
    std::vector<std::size_t> feature_rows;
    std::vector<const LabelRow*> label_rows;
  } pending[3];

  std::size_t matched = 0;
  for (const auto& row : labels.rows) {
    auto it = index.find(row.id);
    if (it == index.end()) {
      ++ds.dropped_labels;
      continue;
    }
    ++matched;
    auto& bucket = pending[static_cast<int>(row.split)];
    bucket.feature_rows.push_back(it->second);
    bucket.label_rows.push_back(&row);
  }
  ds.dropped_features = features.size() - matched;

  Partition* parts[3] = {&ds.train, &ds.val, &ds.test};
  for (int s = 0; s < 3; ++s) {
    auto& part = *parts[s];
    const auto& bucket = pending[s];
    part.features = gather_rows<double>(features.values, bucket.feature_rows);
    if (regression) part.targets = Matrix<double>(bucket.label_rows.size(), k);
    for (std::size_t i = 0; i < bucket.label_rows.size(); ++i) {
      const LabelRow& lr = *bucket.label_rows[i];
      part.ids.push_back(lr.id);
      if (!lr.has_targets) {
        part.labeled = false;
        part.classes.push_back(-1);
        continue;
      }
      if (regression)
        std::copy(lr.targets.begin(), lr.targets.end(), part.targets.row(i).begin());
      else
        part.classes.push_back(lr.class_index);
    }
    if (!regression && part.classes.size() != part.size()) part.classes.resize(part.size(), -1);
  }
  if (ds.train.size() == 0) throw Error("join produced an empty train partition");
  if (ds.val.size() == 0) throw Error("join produced an empty val partition");
  return ds;
}

// ---- synthetic data ---------------------------------------------------------

struct SyntheticData {
  FeatureTable features;
  LabelTable labels;
};

/// Deterministic toy dataset: standard-normal features; regression targets
/// are logistic(W x + b) and Type targets argmax(V x) for hidden seeded
/// W, b, V. The first 80% of rows are train, the rest val.
inline SyntheticData make_synthetic(std::uint64_t seed, std::size_t n, std::size_t dims, Task task) {
  if (n < 20) throw Error("make_synthetic needs n >= 20");
  if (dims < 2) throw Error("make_synthetic needs dims >= 2");

  SplitMix64 root(seed);
  SplitMix64 feature_rng = root.split(1);
  SplitMix64 hidden_rng = root.split(2);

  SyntheticData out;
  auto& ft = out.features;
  ft.feature_name = "synthetic";
  ft.dims = dims;
  ft.values = Matrix<double>(n, dims);
  for (double& v : ft.values.data()) v = feature_rng.normal();

  const std::size_t width = std::to_string(n - 1).size();
  for (std::size_t i = 0; i < n; ++i) {
    std::string num = std::to_string(i);
    ft.ids.push_back("syn_" + std::string(width - num.size(), '0') + num);
  }

  const std::size_t k = output_dim(task);
  Matrix<double> w(k, dims);
  std::vector<double> b(k, 0.0);
  const double gain = is_regression(task) ? 2.0 / std::sqrt(static_cast<double>(dims)) : 1.0;
  for (double& v : w.data()) v = gain * hidden_rng.normal();
  if (is_regression(task))
    for (double& v : b) v = 0.5 * hidden_rng.normal();

  auto& lt = out.labels;
  lt.task = task;
  lt.target_names = default_target_names(task);
  const std::size_t n_train = n * 4 / 5;
  for (std::size_t i = 0; i < n; ++i) {
    LabelRow row;
    row.id = ft.ids[i];
    row.split = i < n_train ? Split::Train : Split::Val;
    auto x = ft.vector(i);
    std::vector<double> z(k);
    for (std::size_t r = 0; r < k; ++r) {
      double acc = b[r];
      for (std::size_t j = 0; j < dims; ++j) acc += w(r, j) * x[j];
      z[r] = acc;
    }
    if (is_regression(task)) {
      for (double v : z) row.targets.push_back(1.0 / (1.0 + std::exp(-v)));
    } else {
      row.class_index = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    }
    lt.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace avb
