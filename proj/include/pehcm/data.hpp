#pragma once

// Synthetic coarse/fine/instance datasets, two-view augmentation, dataset
// files (CSV and binary), and epoch batching.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pehcm/errors.hpp"
#include "pehcm/geometry.hpp"
#include "pehcm/hcm_loss.hpp"
#include "pehcm/io.hpp"

namespace pehcm {

struct SyntheticSpec {
  int n_coarse = 5;
  int fines_per_coarse = 4;
  int instances_per_fine = 200;
  int eval_instances_per_fine = 40;
  int dim = 32;
  double spread_coarse = 1.0;
  double spread_fine = 0.25;
  double spread_instance = 0.05;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_coarse < 1 || fines_per_coarse < 1 || instances_per_fine < 1 || eval_instances_per_fine < 0 || dim < 1) {
      throw ConfigError("synthetic spec: counts must be at least 1");
    }
    if (!(spread_coarse > spread_fine && spread_fine > spread_instance && spread_instance >= 0.0)) {
      throw ConfigError("synthetic spec: spreads must satisfy coarse > fine > instance >= 0");
    }
  }
};

/// One example. `fine_true` is hidden from training and only read by evaluation.
struct Sample {
  Vector features;
  int coarse = 0;
  std::optional<int> fine_true;
  std::int64_t instance_id = 0;

  friend bool operator==(const Sample& a, const Sample& b) {
    return a.coarse == b.coarse && a.fine_true == b.fine_true && a.instance_id == b.instance_id &&
           a.features.size() == b.features.size() && a.features == b.features;
  }
};

struct Dataset {
  int dim = 0;
  std::vector<Sample> samples;

  bool has_fine() const {
    return !samples.empty() &&
           std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.fine_true.has_value(); });
  }
  int num_coarse() const {
    int mx = -1;
    for (const auto& s : samples) mx = std::max(mx, s.coarse);
    return mx + 1;
  }
};

struct SyntheticData {
  Dataset train;
  Dataset eval;
};

inline Vector gaussian_vector(int dim, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = scale * g(rng);
  return v;
}

/// Coarse prototypes ~ N(0, spread_coarse²), fine prototypes around them with
/// spread_fine, instances around fine prototypes with spread_instance. Train
/// and evaluation pools are drawn separately and get disjoint instance ids.
inline SyntheticData generate(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<Vector> coarse_proto;
  std::vector<Vector> fine_proto;
  for (int c = 0; c < spec.n_coarse; ++c) coarse_proto.push_back(gaussian_vector(spec.dim, spec.spread_coarse, rng));
  for (int c = 0; c < spec.n_coarse; ++c) {
    for (int f = 0; f < spec.fines_per_coarse; ++f) {
      fine_proto.push_back(coarse_proto[static_cast<std::size_t>(c)] + gaussian_vector(spec.dim, spec.spread_fine, rng));
    }
  }
  SyntheticData out;
  out.train.dim = spec.dim;
  out.eval.dim = spec.dim;
  std::int64_t next_id = 0;
  auto fill = [&](Dataset& ds, int per_fine) {
    for (int c = 0; c < spec.n_coarse; ++c) {
      for (int f = 0; f < spec.fines_per_coarse; ++f) {
        const int fine = c * spec.fines_per_coarse + f;
        for (int i = 0; i < per_fine; ++i) {
          Sample s;
          s.features = fine_proto[static_cast<std::size_t>(fine)] + gaussian_vector(spec.dim, spec.spread_instance, rng);
          s.coarse = c;
          s.fine_true = fine;
          s.instance_id = next_id++;
          ds.samples.push_back(std::move(s));
        }
      }
    }
  };
  fill(out.train, spec.instances_per_fine);
  fill(out.eval, spec.eval_instances_per_fine);
  return out;
}

struct ViewPair {
  Vector view_q;
  Vector view_k;
  LabelTriple labels;
};

struct AugmentOptions {
  double sigma = 0.05;
  double scale_min = 0.8;
  double scale_max = 1.2;
};

/// Two independent views: features + N(0, σ²) noise, then a random positive
/// scale. The pseudo-label is left empty.
inline ViewPair augment_pair(const Sample& s, const AugmentOptions& opt, std::mt19937_64& rng) {
  if (!(opt.sigma >= 0.0)) throw ContractError("augment_pair: sigma must be non-negative");
  if (!(opt.scale_min > 0.0 && opt.scale_max >= opt.scale_min)) {
    throw ContractError("augment_pair: scale range must be positive and ordered");
  }
  const int dim = static_cast<int>(s.features.size());
  auto view = [&] {
    Vector v = s.features + gaussian_vector(dim, opt.sigma, rng);
    if (opt.scale_max > opt.scale_min) {
      std::uniform_real_distribution<double> scale(opt.scale_min, opt.scale_max);
      v *= scale(rng);
    } else {
      v *= opt.scale_min;
    }
    return v;
  };
  ViewPair p;
  p.view_q = view();
  p.view_k = view();
  p.labels.instance_id = s.instance_id;
  p.labels.coarse = s.coarse;
  return p;
}

/// Shuffled full batches for one epoch; the trailing partial batch is dropped.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::mt19937_64& rng) {
  if (batch_size == 0) throw ContractError("epoch_batches: batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + batch_size <= n; start += batch_size) {
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files.
//
// CSV: header `dim=<n>,has_fine=<0|1>`, then one row per sample:
//   coarse[,fine],f_1,...,f_n
// Binary: magic "PEHCM1-DATA", u32 dim, u8 has_fine, u64 count, then per row
//   i32 coarse, i32 fine (−1 when absent), dim × f64. Little-endian.
// Instance ids are assigned from the row index plus `id_offset`.
// ---------------------------------------------------------------------------

inline constexpr std::string_view kDataMagic = "PEHCM1-DATA";

inline void write_dataset_csv(const Dataset& ds, const std::string& path) {
  const bool has_fine = ds.has_fine();
  std::ostringstream out;
  out << "dim=" << ds.dim << ",has_fine=" << (has_fine ? 1 : 0) << '\n';
  for (const auto& s : ds.samples) {
    out << s.coarse;
    if (has_fine) out << ',' << *s.fine_true;
    for (Eigen::Index j = 0; j < s.features.size(); ++j) out << ',' << io::format_double(s.features(j));
    out << '\n';
  }
  io::write_file_atomic(path, out.str());
}

inline void write_dataset_binary(const Dataset& ds, const std::string& path) {
  const bool has_fine = ds.has_fine();
  io::ByteWriter w;
  w.bytes(kDataMagic);
  w.u32(static_cast<std::uint32_t>(ds.dim));
  w.u8(has_fine ? 1 : 0);
  w.u64(ds.samples.size());
  for (const auto& s : ds.samples) {
    w.i32(s.coarse);
    w.i32(s.fine_true ? *s.fine_true : -1);
    for (Eigen::Index j = 0; j < s.features.size(); ++j) w.f64(s.features(j));
  }
  io::write_file_atomic(path, w.str());
}

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
T parse_field(std::string_view field, std::size_t line, const char* what) {
  while (!field.empty() && (field.front() == ' ')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError(std::string("cannot parse ") + what + " '" + std::string(field) + "'", line);
  }
  return value;
}

inline Dataset parse_dataset_csv(const std::string& text, std::int64_t id_offset, std::optional<int> expected_dim) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1);
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  int dim = 0;
  bool has_fine = false;
  {
    const auto parts = split_commas(line);
    if (parts.size() != 2 || !parts[0].starts_with("dim=") || !parts[1].starts_with("has_fine=")) {
      throw ParseError("malformed header, expected 'dim=<n>,has_fine=<0|1>'", lineno);
    }
    dim = parse_field<int>(parts[0].substr(4), lineno, "dim");
    const int hf = parse_field<int>(parts[1].substr(9), lineno, "has_fine");
    if (dim < 1 || (hf != 0 && hf != 1)) throw ParseError("malformed header values", lineno);
    has_fine = hf == 1;
  }
  if (expected_dim && *expected_dim != dim) {
    throw ContractError("dataset dim " + std::to_string(dim) + " does not match expected " +
                        std::to_string(*expected_dim));
  }
  Dataset ds;
  ds.dim = dim;
  const std::size_t columns = static_cast<std::size_t>(dim) + (has_fine ? 2 : 1);
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto parts = split_commas(line);
    if (parts.size() != columns) {
      throw ParseError("row has " + std::to_string(parts.size()) + " columns, expected " + std::to_string(columns),
                       lineno);
    }
    Sample s;
    s.coarse = parse_field<int>(parts[0], lineno, "coarse label");
    if (s.coarse < 0) throw ParseError("negative coarse label", lineno);
    std::size_t first = 1;
    if (has_fine) {
      s.fine_true = parse_field<int>(parts[1], lineno, "fine label");
      first = 2;
    }
    s.features.resize(dim);
    for (int j = 0; j < dim; ++j) {
      s.features(j) = parse_field<double>(parts[first + static_cast<std::size_t>(j)], lineno, "feature");
    }
    if (!s.features.allFinite()) throw ParseError("non-finite feature", lineno);
    s.instance_id = id_offset + static_cast<std::int64_t>(ds.samples.size());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset parse_dataset_binary(const std::string& bytes, std::int64_t id_offset, std::optional<int> expected_dim) {
  io::ByteReader r(bytes);
  if (r.bytes(kDataMagic.size()) != kDataMagic) throw ParseError("bad binary dataset magic", 0);
  Dataset ds;
  ds.dim = static_cast<int>(r.u32());
  const bool has_fine = r.u8() != 0;
  const std::uint64_t count = r.u64();
  if (expected_dim && *expected_dim != ds.dim) {
    throw ContractError("dataset dim " + std::to_string(ds.dim) + " does not match expected " +
                        std::to_string(*expected_dim));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    Sample s;
    s.coarse = r.i32();
    const int fine = r.i32();
    if (has_fine) s.fine_true = fine;
    s.features.resize(ds.dim);
    for (int j = 0; j < ds.dim; ++j) s.features(j) = r.f64();
    s.instance_id = id_offset + static_cast<std::int64_t>(i);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace detail

/// Reads a CSV or binary dataset file, detected by the binary magic.
inline Dataset ingest_features(const std::string& path, std::int64_t id_offset = 0,
                               std::optional<int> expected_dim = std::nullopt) {
  const std::string content = io::read_file(path);
  if (content.starts_with(kDataMagic)) return detail::parse_dataset_binary(content, id_offset, expected_dim);
  return detail::parse_dataset_csv(content, id_offset, expected_dim);
}

}  // namespace pehcm
