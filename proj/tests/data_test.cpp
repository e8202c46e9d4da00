#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "dacca/data.hpp"
#include "dacca/errors.hpp"

using namespace dacca;
namespace fs = std::filesystem;

namespace {

DomainStyle source_style() {
  DomainStyle s;
  s.background = 0.15;
  s.texture = 0.03;
  s.lane_brightness = 0.9;
  s.noise_sigma = 0.01;
  return s;
}

DomainStyle target_style() {
  DomainStyle s;
  s.background = 0.45;
  s.texture = 0.12;
  s.lane_brightness = 0.7;
  s.noise_sigma = 0.05;
  s.brightness_shift = 0.05;
  s.blur = true;
  return s;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Dataset small_dataset(int n, std::uint64_t seed, const DomainStyle& style) {
  Dataset d;
  d.num_lanes = 2;
  d.height = 32;
  d.width = 32;
  d.stroke_width = 4;
  d.config_hash = "cafe";
  Rng rng(seed);
  for (int i = 0; i < n; ++i)
    d.scenes.push_back(generate_scene(rng, 2, 32, 32, style));
  return d;
}

}  // namespace

TEST_CASE("generate_scene determinism") {
  Rng a(5), b(5);
  LaneScene s1 = generate_scene(a, 2, 64, 64, source_style());
  LaneScene s2 = generate_scene(b, 2, 64, 64, source_style());
  CHECK(s1.image == s2.image);
  CHECK(s1.label == s2.label);
  REQUIRE(s1.lanes.size() == s2.lanes.size());
  for (std::size_t i = 0; i < s1.lanes.size(); ++i) {
    REQUIRE(s1.lanes[i].size() == s2.lanes[i].size());
    for (std::size_t j = 0; j < s1.lanes[i].size(); ++j) {
      CHECK(s1.lanes[i][j].x == s2.lanes[i][j].x);
      CHECK(s1.lanes[i][j].y == s2.lanes[i][j].y);
    }
  }
}

TEST_CASE("rasterize_lane straight vertical stroke") {
  const int h = 32, w = 32, stroke = 4;
  std::vector<int> label(h * w, 2);  // background for C=1
  std::vector<LanePoint> points;
  rasterize_lane(label, h, w, 1, 16.0, 0.0, 0.0, stroke, &points);
  CHECK(points.size() == h);
  for (int y = 0; y < h; ++y) {
    int covered = 0;
    for (int x = 0; x < w; ++x)
      if (label[y * w + x] == 1) ++covered;
    CHECK(covered == stroke);
  }
  // bottom-to-top ordering
  CHECK(points.front().y == h - 1);
  CHECK(points.back().y == 0);
}

TEST_CASE("labeled pixels stay within the stroke width of the polyline") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    LaneScene s = generate_scene(rng, 2, 64, 64, source_style());
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        const int c = s.label[y * s.width + x];
        if (c == s.num_lanes + 1) continue;
        // find this lane's point on the same row
        double cx = -1.0;
        for (const LanePoint& p : s.lanes[c - 1])
          if (p.y == y) cx = p.x;
        REQUIRE(cx >= 0.0);
        CHECK(std::fabs(x - cx) <= 4.0);
      }
    }
  }
}

TEST_CASE("identical geometry seeds with different styles give identical masks") {
  // jitter is zero in both styles, so only photometrics differ
  Rng a(21), b(21);
  LaneScene s = generate_scene(a, 2, 64, 64, source_style());
  LaneScene t = generate_scene(b, 2, 64, 64, target_style());
  CHECK(s.label == t.label);
  CHECK(s.image != t.image);
}

TEST_CASE("ppm round trip is within quantization error") {
  TempDir dir("dacca_data_ppm");
  fs::create_directories(dir.path);
  Rng rng(31);
  LaneScene s = generate_scene(rng, 2, 32, 32, target_style());
  const std::string path = (dir.path / "img.ppm").string();
  write_ppm(path, s.image, 32, 32);
  int h = 0, w = 0;
  std::vector<double> back = read_ppm(path, &h, &w);
  CHECK(h == 32);
  CHECK(w == 32);
  double max_err = 0.0;
  for (std::size_t i = 0; i < back.size(); ++i)
    max_err = std::max(max_err, std::fabs(back[i] - s.image[i]));
  CHECK(max_err <= 1.0 / 255.0);
  // second write of the read-back values is a fixed point
  const std::string path2 = (dir.path / "img2.ppm").string();
  write_ppm(path2, back, 32, 32);
  std::vector<double> back2 = read_ppm(path2, &h, &w);
  CHECK(back2 == back);
}

TEST_CASE("pgm rejects malformed headers") {
  TempDir dir("dacca_data_pgm");
  fs::create_directories(dir.path);
  const std::string path = (dir.path / "bad.pgm").string();
  std::FILE* f = std::fopen(path.c_str(), "wb");
  std::fputs("P5\nnot numbers\n", f);
  std::fclose(f);
  CHECK_THROWS_AS(read_pgm(path, nullptr, nullptr), data_error);
}

TEST_CASE("dataset round trip") {
  TempDir dir("dacca_data_rt");
  Dataset d = small_dataset(3, 7, source_style());

  SUBCASE("labels and lane points are lossless") {
    write_dataset(dir.path.string(), d, false, false);
    Dataset back = read_dataset(dir.path.string());
    CHECK(back.count() == 3);
    CHECK(back.num_lanes == 2);
    CHECK(back.domain == "source");
    CHECK(back.config_hash == "cafe");
    CHECK(!back.labels_hidden);
    for (int i = 0; i < 3; ++i) {
      CHECK(back.scenes[i].label == d.scenes[i].label);
      REQUIRE(back.scenes[i].lanes.size() == d.scenes[i].lanes.size());
      for (std::size_t l = 0; l < d.scenes[i].lanes.size(); ++l) {
        REQUIRE(back.scenes[i].lanes[l].size() == d.scenes[i].lanes[l].size());
        for (std::size_t p = 0; p < d.scenes[i].lanes[l].size(); ++p) {
          CHECK(back.scenes[i].lanes[l][p].x == d.scenes[i].lanes[l][p].x);
          CHECK(back.scenes[i].lanes[l][p].y == d.scenes[i].lanes[l][p].y);
        }
      }
    }
  }
  SUBCASE("hidden labels write 255 everywhere and guard access") {
    write_dataset(dir.path.string(), d, true, false);
    Dataset back = read_dataset(dir.path.string());
    CHECK(back.labels_hidden);
    for (int v : back.scenes[0].label) CHECK(v == 255);
    CHECK_THROWS_AS(back.labels(0), contract_error);
    // lane files are retained for evaluation
    CHECK(back.scenes[0].lanes.size() == 2);
    CHECK(!back.scenes[0].lanes[0].empty());
  }
  SUBCASE("refuses to overwrite a non-empty directory without force") {
    write_dataset(dir.path.string(), d, false, false);
    CHECK_THROWS_AS(write_dataset(dir.path.string(), d, false, false),
                    data_error);
    write_dataset(dir.path.string(), d, false, true);  // force succeeds
  }
  SUBCASE("count mismatch against the manifest is detected") {
    write_dataset(dir.path.string(), d, false, false);
    fs::remove(dir.path / "images" / "0002.ppm");
    CHECK_THROWS_AS(read_dataset(dir.path.string()), data_error);
  }
}

TEST_CASE("flip_scene") {
  Rng rng(41);
  LaneScene s = generate_scene(rng, 2, 32, 32, source_style());
  LaneScene f = flip_scene(s);
  SUBCASE("label mask equals the column-reversed original") {
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        CHECK(f.label[y * 32 + x] == s.label[y * 32 + (31 - x)]);
  }
  SUBCASE("flipping twice restores the scene") {
    LaneScene ff = flip_scene(f);
    CHECK(ff.image == s.image);  // pixel data restored exactly
    CHECK(ff.label == s.label);
    for (std::size_t l = 0; l < s.lanes.size(); ++l)
      for (std::size_t p = 0; p < s.lanes[l].size(); ++p)
        CHECK(std::fabs(ff.lanes[l][p].x - s.lanes[l][p].x) <= 1e-12);
  }
}

TEST_CASE("make_batches") {
  Rng rng(51);
  SUBCASE("full-dataset batch contains every scene once") {
    auto batches = make_batches(10, 10, false, rng);
    REQUIRE(batches.size() == 1);
    std::set<int> seen(batches[0].scene.begin(), batches[0].scene.end());
    CHECK(seen.size() == 10);
  }
  SUBCASE("epoch covers all scenes across batches") {
    auto batches = make_batches(10, 3, true, rng);
    CHECK(batches.size() == 4);
    std::set<int> seen;
    for (const auto& b : batches)
      seen.insert(b.scene.begin(), b.scene.end());
    CHECK(seen.size() == 10);
  }
}

TEST_CASE("batch_for_iteration is stateless and epoch-complete") {
  const int count = 7, bs = 2;
  // identical calls agree
  for (int it : {0, 3, 10}) {
    BatchIndices a = batch_for_iteration(count, bs, true, 9, it);
    BatchIndices b = batch_for_iteration(count, bs, true, 9, it);
    CHECK(a.scene == b.scene);
    CHECK(a.flip == b.flip);
  }
  // one epoch (ceil(7/2)=4 iterations) covers scenes 0..6 with one wrap
  std::multiset<int> seen;
  for (int it = 0; it < 4; ++it) {
    BatchIndices b = batch_for_iteration(count, bs, false, 9, it);
    seen.insert(b.scene.begin(), b.scene.end());
  }
  std::set<int> unique(seen.begin(), seen.end());
  CHECK(unique.size() == count);
}
