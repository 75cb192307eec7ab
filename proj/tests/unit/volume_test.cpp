#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>

#include <voxbayes/rng.hpp>
#include <voxbayes/volume.hpp>

using namespace voxbayes;

namespace {

std::filesystem::path scratch_dir(const std::string& name)
{
  auto p = std::filesystem::temp_directory_path() / ("voxbayes_volume_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Union-find over face-adjacent suprathreshold pairs; labels each voxel by its root.
std::vector<std::size_t> union_find_labels(const ScalarMap& m, double u)
{
  const Grid& g = m.grid;
  std::vector<std::size_t> parent(g.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  };
  for (std::size_t a = 0; a < g.size(); ++a)
    for (std::size_t b = a + 1; b < g.size(); ++b) {
      if (!(m[a] > u && m[b] > u)) continue;
      Coord ca = g.coord(a), cb = g.coord(b);
      int dist = 0;
      for (int q = 0; q < 3; ++q) dist += std::abs(ca[q] - cb[q]);
      if (dist == 1) parent[find(a)] = find(b);
    }
  std::vector<std::size_t> lab(g.size(), SIZE_MAX);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (m[k] > u) lab[k] = find(k);
  return lab;
}

}  // namespace

TEST(Grid, IndexAndCoordAreInverse)
{
  Grid g({3, 4, 5});
  EXPECT_EQ(g.size(), 60u);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(g.index(g.coord(k)), k);
  // last axis fastest
  EXPECT_EQ(g.index({0, 0, 1}), 1u);
  EXPECT_EQ(g.index({0, 1, 0}), 5u);
  EXPECT_EQ(g.index({1, 0, 0}), 20u);
}

TEST(Grid, RejectsBadDims)
{
  EXPECT_THROW(Grid({0}), Error);
  EXPECT_THROW(Grid({1, 2, 3, 4}), Error);
}

TEST(VolumeIo, ScalarRoundTrip)
{
  auto dir = scratch_dir("scalar");
  ScalarMap m(Grid({2, 2}), {1.0, 2.0, 3.0, 4.0});
  write_volume(dir / "m.vol", m);
  auto back = read_scalar_map(dir / "m.vol");
  EXPECT_EQ(back.grid.shape(), m.grid.shape());
  EXPECT_EQ(back.values, m.values);
}

TEST(VolumeIo, RandomRoundTripIsBitExact)
{
  Rng rng(5);
  for (int rank = 1; rank <= 3; ++rank) {
    std::vector<int> dims;
    for (int a = 0; a < rank; ++a) dims.push_back(2 + int(rng.below(5)));
    ScalarMap m{Grid(dims)};
    for (auto& v : m.values) v = rng.normal() * 1e6;
    auto back = std::get<ScalarMap>(decode_volume(encode_volume(m)));
    EXPECT_EQ(0, std::memcmp(back.values.data(), m.values.data(), m.values.size() * sizeof(double)));

    std::vector<std::uint32_t> lab(m.grid.size());
    for (auto& v : lab) v = static_cast<std::uint32_t>(rng.below(4));
    lab[0] = 3;
    Parcellation p(m.grid, lab, 4);
    auto pb = std::get<Parcellation>(decode_volume(encode_volume(p)));
    EXPECT_EQ(pb.labels, p.labels);
    EXPECT_EQ(pb.region_count, 4u);
  }
}

TEST(VolumeIo, PayloadMismatch)
{
  std::string bytes = "{\"dims\":[6],\"dtype\":\"f64\",\"kind\":\"scalar\"}\n" + std::string(5 * sizeof(double), '\0');
  try {
    decode_volume(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "payload-size-mismatch");
    EXPECT_EQ(e.exit_code(), 3);
  }
}

TEST(VolumeIo, MalformedHeader)
{
  for (std::string h : {"not json\n", "{\"dims\":[2]}\n", "{\"dims\":[2],\"dtype\":\"f32\",\"kind\":\"scalar\"}\n", "no newline"}) {
    try {
      decode_volume(h + std::string(16, '\0'));
      FAIL() << h;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), "malformed-header") << h;
    }
  }
}

TEST(VolumeIo, NonFiniteRejected)
{
  ScalarMap m(Grid({3}), {1.0, 2.0, 3.0});
  std::string bytes = encode_volume(m);
  double nan = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(bytes.data() + bytes.size() - sizeof(double), &nan, sizeof(double));
  try {
    decode_volume(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "non-finite");
  }
}

TEST(VolumeIo, LabelOutOfRange)
{
  std::string bytes = "{\"dims\":[2],\"dtype\":\"u32\",\"kind\":\"labels\",\"regions\":2}\n";
  std::uint32_t lab[2] = {0, 2};
  bytes.append(reinterpret_cast<const char*>(lab), sizeof(lab));
  try {
    decode_volume(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "label-out-of-range");
  }
}

TEST(VolumeIo, DatasetManifestRoundTrip)
{
  auto dir = scratch_dir("dataset");
  Dataset d;
  d.grid = Grid({3, 2});
  Rng rng(2);
  for (int i = 0; i < 3; ++i) {
    SubjectData s{ScalarMap(d.grid), ScalarMap(d.grid)};
    for (auto& v : s.effects.values) v = rng.normal();
    for (auto& v : s.variances.values) v = rng.uniform();
    d.subjects.push_back(s);
  }
  write_volume(dir / "parc.vol", Parcellation::single(d.grid));
  write_dataset(dir, d, "parc.vol");
  auto m = read_manifest(dir / "manifest.json");
  auto back = load_dataset(m);
  ASSERT_EQ(back.n(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back.subjects[i].effects.values, d.subjects[i].effects.values);
    EXPECT_EQ(back.subjects[i].variances.values, d.subjects[i].variances.values);
  }
  EXPECT_EQ(read_parcellation(m.base / m.parcellation).region_count, 1u);
}

TEST(VolumeIo, MissingFileIsDataError)
{
  try {
    read_volume("/nonexistent/file.vol");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.exit_code(), 3);
  }
}

TEST(ConnectedComponents, Trivial)
{
  ScalarMap low(Grid({4}), {0, 0.1, 0.2, 0.3});
  EXPECT_TRUE(connected_components(low, 0.5).empty());
  ScalarMap m(Grid({3}), {1, 0, 1});
  auto cc = connected_components(m, 0.5);
  ASSERT_EQ(cc.size(), 2u);
  EXPECT_EQ(cc[0], std::vector<std::size_t>{0});
  EXPECT_EQ(cc[1], std::vector<std::size_t>{2});
}

TEST(ConnectedComponents, DiagonalIsNotAdjacent)
{
  ScalarMap m(Grid({2, 2}), {1, 0, 0, 1});
  EXPECT_EQ(connected_components(m, 0.5).size(), 2u);
}

TEST(ConnectedComponents, MatchesUnionFindOracle)
{
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    Grid g = trial % 3 == 0 ? Grid({8, 8}) : trial % 3 == 1 ? Grid({4, 4, 4}) : Grid({20});
    ScalarMap m(g);
    for (auto& v : m.values) v = rng.normal();
    double u = 0.3 * rng.normal();
    auto cc = connected_components(m, u);
    auto oracle = union_find_labels(m, u);
    std::vector<int> seen(g.size(), 0);
    std::size_t covered = 0;
    for (const auto& c : cc) {
      for (std::size_t k : c) {
        EXPECT_EQ(oracle[k], oracle[c[0]]);
        EXPECT_FALSE(seen[k]);
        seen[k] = 1;
      }
      covered += c.size();
    }
    std::size_t supra = 0, roots = 0;
    for (std::size_t k = 0; k < g.size(); ++k) {
      supra += m[k] > u;
      roots += m[k] > u && oracle[k] == k;
    }
    EXPECT_EQ(covered, supra);
    EXPECT_EQ(cc.size(), roots);
  }
}

TEST(ConnectedComponents, SupraSetShrinksWithThreshold)
{
  Rng rng(3);
  ScalarMap m(Grid({6, 6}));
  for (auto& v : m.values) v = rng.normal();
  std::size_t prev = SIZE_MAX;
  for (double u = -2; u <= 2; u += 0.25) {
    std::size_t tot = 0;
    for (const auto& c : connected_components(m, u)) tot += c.size();
    EXPECT_LE(tot, prev);
    prev = tot;
  }
}
