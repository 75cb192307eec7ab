#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace voxbayes {

using Coord = std::array<int, 3>;

// Regular voxel lattice of rank 1..3. Flat indices are C-order (last axis fastest).
struct Grid {
  int rank = 1;
  Coord dims{1, 1, 1};

  Grid() = default;
  explicit Grid(std::vector<int> d)
  {
    if (d.empty() || d.size() > 3) throw data_error("bad-dims", "grid rank must be 1, 2 or 3");
    rank = static_cast<int>(d.size());
    for (int a = 0; a < rank; ++a) {
      if (d[a] <= 0) throw data_error("bad-dims", "grid dimensions must be positive");
      dims[a] = d[a];
    }
  }

  std::size_t size() const
  {
    std::size_t n = 1;
    for (int a = 0; a < rank; ++a) n *= static_cast<std::size_t>(dims[a]);
    return n;
  }

  std::vector<int> shape() const { return {dims.begin(), dims.begin() + rank}; }

  std::size_t index(const Coord& c) const
  {
    std::size_t k = 0;
    for (int a = 0; a < rank; ++a) k = k * dims[a] + c[a];
    return k;
  }

  Coord coord(std::size_t k) const
  {
    Coord c{0, 0, 0};
    for (int a = rank - 1; a >= 0; --a) {
      c[a] = static_cast<int>(k % dims[a]);
      k /= dims[a];
    }
    return c;
  }

  bool contains(const Coord& c) const
  {
    for (int a = 0; a < rank; ++a)
      if (c[a] < 0 || c[a] >= dims[a]) return false;
    return true;
  }

  // stride of axis a in flat indexing
  std::size_t stride(int a) const
  {
    std::size_t s = 1;
    for (int b = rank - 1; b > a; --b) s *= dims[b];
    return s;
  }

  bool operator==(const Grid& o) const { return shape() == o.shape(); }
};

struct ScalarMap {
  Grid grid;
  std::vector<double> values;

  ScalarMap() = default;
  explicit ScalarMap(Grid g, double fill = 0.0) : grid(g), values(g.size(), fill) {}
  ScalarMap(Grid g, std::vector<double> v) : grid(g), values(std::move(v))
  {
    if (values.size() != grid.size()) throw data_error("payload-size-mismatch", "value count does not match grid");
  }

  double& operator[](std::size_t k) { return values[k]; }
  double operator[](std::size_t k) const { return values[k]; }
};

// Labels 0..region_count-1, one per voxel.
struct Parcellation {
  Grid grid;
  std::vector<std::uint32_t> labels;
  std::size_t region_count = 0;

  Parcellation() = default;
  Parcellation(Grid g, std::vector<std::uint32_t> l, std::size_t n) : grid(g), labels(std::move(l)), region_count(n)
  {
    if (labels.size() != grid.size()) throw data_error("payload-size-mismatch", "label count does not match grid");
    for (auto v : labels)
      if (v >= region_count) throw data_error("label-out-of-range", "label " + std::to_string(v) + " >= region count");
  }

  static Parcellation single(Grid g) { return Parcellation(g, std::vector<std::uint32_t>(g.size(), 0), 1); }

  std::vector<std::size_t> sizes() const
  {
    std::vector<std::size_t> s(region_count, 0);
    for (auto v : labels) ++s[v];
    return s;
  }

  std::vector<std::vector<std::size_t>> members() const
  {
    std::vector<std::vector<std::size_t>> m(region_count);
    for (std::size_t k = 0; k < labels.size(); ++k) m[labels[k]].push_back(k);
    return m;
  }
};

// One subject's effect map y_i and within-subject variance map s_i^2.
struct SubjectData {
  ScalarMap effects;
  ScalarMap variances;
};

struct Dataset {
  Grid grid;
  std::vector<SubjectData> subjects;

  std::size_t n() const { return subjects.size(); }

  void validate() const
  {
    for (const auto& s : subjects) {
      if (!(s.effects.grid == grid) || !(s.variances.grid == grid))
        throw data_error("grid-mismatch", "subject maps do not share the dataset grid");
      for (double v : s.effects.values)
        if (!std::isfinite(v)) throw data_error("non-finite", "non-finite effect value");
      for (double v : s.variances.values)
        if (!std::isfinite(v) || v < 0) throw data_error("non-finite", "variance must be finite and non-negative");
    }
  }
};

// ---------------------------------------------------------------------------
// container format: one JSON header line, '\n', raw little-endian payload

struct VolumeHeader {
  std::vector<int> dims;
  std::string dtype;  // "f64" | "u32"
  std::string kind;   // "scalar" | "labels" | "weights"
  std::size_t regions = 0;
};

namespace detail {

inline std::size_t product(const std::vector<int>& d)
{
  std::size_t n = 1;
  for (int v : d) n *= static_cast<std::size_t>(v);
  return n;
}

inline VolumeHeader parse_header(const std::string& line)
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw data_error("malformed-header", std::string("header is not valid JSON: ") + e.what());
  }
  VolumeHeader h;
  try {
    h.dims = j.at("dims").get<std::vector<int>>();
    h.dtype = j.at("dtype").get<std::string>();
    h.kind = j.at("kind").get<std::string>();
    if (j.contains("regions")) h.regions = j["regions"].get<std::size_t>();
  } catch (const std::exception& e) {
    throw data_error("malformed-header", std::string("header missing or mistyped field: ") + e.what());
  }
  if (h.dims.empty() || h.dims.size() > 4)
    throw data_error("malformed-header", "dims must list 1 to 3 axes (4 for weights)");
  for (int v : h.dims)
    if (v <= 0) throw data_error("malformed-header", "dims must be positive");
  if (h.dtype != "f64" && h.dtype != "u32") throw data_error("malformed-header", "dtype must be f64 or u32");
  if (h.kind != "scalar" && h.kind != "labels" && h.kind != "weights")
    throw data_error("malformed-header", "kind must be scalar, labels or weights");
  if (h.kind == "labels" && h.dtype != "u32") throw data_error("malformed-header", "labels must be u32");
  if (h.kind != "labels" && h.dtype != "f64") throw data_error("malformed-header", "scalar data must be f64");
  if (h.kind != "weights" && h.dims.size() > 3) throw data_error("malformed-header", "volumes have at most 3 axes");
  return h;
}

inline bool host_little_endian()
{
  const std::uint16_t one = 1;
  unsigned char b;
  std::memcpy(&b, &one, 1);
  return b == 1;
}

template<typename T>
void swap_bytes(std::vector<T>& v)
{
  for (auto& x : v) {
    auto* p = reinterpret_cast<unsigned char*>(&x);
    std::reverse(p, p + sizeof(T));
  }
}

template<typename T>
std::string encode(const VolumeHeader& h, std::vector<T> payload)
{
  nlohmann::json j;
  j["dims"] = h.dims;
  j["dtype"] = h.dtype;
  j["kind"] = h.kind;
  if (h.kind == "labels") j["regions"] = h.regions;
  if (!host_little_endian()) swap_bytes(payload);
  std::string out = j.dump();
  out.push_back('\n');
  out.append(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(T));
  return out;
}

inline std::pair<VolumeHeader, std::string> split(const std::string& bytes)
{
  auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw data_error("malformed-header", "missing header terminator");
  return {parse_header(bytes.substr(0, nl)), bytes.substr(nl + 1)};
}

template<typename T>
std::vector<T> decode_payload(const std::string& raw, std::size_t count)
{
  if (raw.size() != count * sizeof(T))
    throw data_error("payload-size-mismatch", "payload has " + std::to_string(raw.size()) + " bytes, expected " +
                                                  std::to_string(count * sizeof(T)));
  std::vector<T> v(count);
  if (count) std::memcpy(v.data(), raw.data(), raw.size());
  if (!host_little_endian()) swap_bytes(v);
  return v;
}

inline std::string slurp(const std::filesystem::path& p)
{
  std::ifstream in(p, std::ios::binary);
  if (!in) throw data_error("io", "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spill(const std::filesystem::path& p, const std::string& bytes)
{
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw data_error("io", "cannot write " + p.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace detail

inline std::string encode_volume(const ScalarMap& m)
{
  return detail::encode<double>({m.grid.shape(), "f64", "scalar", 0}, m.values);
}

inline std::string encode_volume(const Parcellation& p)
{
  return detail::encode<std::uint32_t>({p.grid.shape(), "u32", "labels", p.region_count}, p.labels);
}

using Volume = std::variant<ScalarMap, Parcellation>;

inline Volume decode_volume(const std::string& bytes)
{
  auto [h, raw] = detail::split(bytes);
  if (h.kind == "weights") throw data_error("malformed-header", "weights file given where a volume was expected");
  Grid g(h.dims);
  if (h.kind == "labels") {
    auto labels = detail::decode_payload<std::uint32_t>(raw, g.size());
    std::size_t n = h.regions;
    if (n == 0)
      for (auto v : labels) n = std::max<std::size_t>(n, v + 1);
    return Parcellation(g, std::move(labels), n);
  }
  auto vals = detail::decode_payload<double>(raw, g.size());
  for (double v : vals)
    if (!std::isfinite(v)) throw data_error("non-finite", "scalar volume contains NaN or Inf");
  return ScalarMap(g, std::move(vals));
}

inline void write_volume(const std::filesystem::path& p, const ScalarMap& m) { detail::spill(p, encode_volume(m)); }
inline void write_volume(const std::filesystem::path& p, const Parcellation& m) { detail::spill(p, encode_volume(m)); }

inline Volume read_volume(const std::filesystem::path& p) { return decode_volume(detail::slurp(p)); }

inline ScalarMap read_scalar_map(const std::filesystem::path& p)
{
  auto v = read_volume(p);
  if (!std::holds_alternative<ScalarMap>(v)) throw data_error("wrong-kind", p.string() + " is not a scalar volume");
  return std::get<ScalarMap>(std::move(v));
}

inline Parcellation read_parcellation(const std::filesystem::path& p)
{
  auto v = read_volume(p);
  if (!std::holds_alternative<Parcellation>(v)) throw data_error("wrong-kind", p.string() + " is not a label volume");
  return std::get<Parcellation>(std::move(v));
}

// Raw weights block of shape [n, B, rank]; control points and bandwidth go to a sidecar.
inline std::string encode_weights(std::size_t n, std::size_t B, int rank, const std::vector<double>& w)
{
  return detail::encode<double>({{(int)n, (int)B, rank}, "f64", "weights", 0}, w);
}

inline std::vector<double> decode_weights(const std::string& bytes, std::vector<int>& dims)
{
  auto [h, raw] = detail::split(bytes);
  if (h.kind != "weights" || h.dims.size() != 3) throw data_error("malformed-header", "expected a [n,B,rank] weights block");
  dims = h.dims;
  return detail::decode_payload<double>(raw, detail::product(h.dims));
}

// Manifest: {"grid":[..], "subjects":[{"effects":..,"variances":..}], "parcellation": optional path}
struct Manifest {
  std::filesystem::path base;
  std::vector<std::pair<std::string, std::string>> subjects;
  std::string parcellation;
  nlohmann::json extra;
};

inline Manifest read_manifest(const std::filesystem::path& p)
{
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::slurp(p));
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw data_error("malformed-manifest", e.what());
  }
  Manifest m;
  m.base = p.parent_path();
  try {
    for (const auto& s : j.at("subjects"))
      m.subjects.emplace_back(s.at("effects").get<std::string>(), s.at("variances").get<std::string>());
    if (j.contains("parcellation")) m.parcellation = j["parcellation"].get<std::string>();
  } catch (const std::exception& e) {
    throw data_error("malformed-manifest", e.what());
  }
  if (m.subjects.empty()) throw data_error("malformed-manifest", "manifest lists no subjects");
  m.extra = j;
  return m;
}

inline Dataset load_dataset(const Manifest& m)
{
  Dataset d;
  for (std::size_t i = 0; i < m.subjects.size(); ++i) {
    SubjectData s{read_scalar_map(m.base / m.subjects[i].first), read_scalar_map(m.base / m.subjects[i].second)};
    if (i == 0) d.grid = s.effects.grid;
    d.subjects.push_back(std::move(s));
  }
  d.validate();
  return d;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& d, const std::string& parcellation_file = {},
                          nlohmann::json extra = nlohmann::json::object())
{
  std::filesystem::create_directories(dir);
  nlohmann::json j = std::move(extra);
  j["grid"] = d.grid.shape();
  j["subjects"] = nlohmann::json::array();
  for (std::size_t i = 0; i < d.n(); ++i) {
    std::string e = "subject" + std::to_string(i) + "_effects.vol";
    std::string v = "subject" + std::to_string(i) + "_variances.vol";
    write_volume(dir / e, d.subjects[i].effects);
    write_volume(dir / v, d.subjects[i].variances);
    j["subjects"].push_back({{"effects", e}, {"variances", v}});
  }
  if (!parcellation_file.empty()) j["parcellation"] = parcellation_file;
  detail::spill(dir / "manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------

// Face neighbours of voxel k (2, 4 or 6 of them away from borders).
template<typename F>
void for_each_face_neighbour(const Grid& g, std::size_t k, F&& f)
{
  Coord c = g.coord(k);
  for (int a = 0; a < g.rank; ++a) {
    std::size_t st = g.stride(a);
    if (c[a] > 0) f(k - st);
    if (c[a] + 1 < g.dims[a]) f(k + st);
  }
}

// Clusters of voxels with value > threshold under face adjacency.
// Each cluster lists its voxel indices in increasing order; clusters are ordered by first voxel.
inline std::vector<std::vector<std::size_t>> connected_components(const ScalarMap& m, double threshold)
{
  const Grid& g = m.grid;
  std::vector<int> seen(g.size(), 0);
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> stack;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (seen[k] || !(m.values[k] > threshold)) continue;
    std::vector<std::size_t> comp;
    stack.assign(1, k);
    seen[k] = 1;
    while (!stack.empty()) {
      std::size_t v = stack.back();
      stack.pop_back();
      comp.push_back(v);
      for_each_face_neighbour(g, v, [&](std::size_t u) {
        if (!seen[u] && m.values[u] > threshold) {
          seen[u] = 1;
          stack.push_back(u);
        }
      });
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

} // namespace voxbayes
