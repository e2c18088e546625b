#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>

#include "doctest.h"
#include "json.hpp"

#include "cirtf/data.hpp"
#include "cirtf/sim.hpp"

using namespace cirtf;
namespace fs = std::filesystem;

namespace {

// Tiny synthetic dataset: `n_traj` trajectories of `per_traj` fingerprints
// each, 2 anchors x 4 taps, deterministic tap values, all labeled.
Dataset toy_dataset(int n_traj, int per_traj) {
  Dataset ds;
  ds.manifest.n_an = 2;
  ds.manifest.l_s = 4;
  ds.manifest.width = 10.0;
  ds.manifest.height = 8.0;
  ds.manifest.anchors = {{1.0, 1.0}, {9.0, 7.0}};
  ds.manifest.carrier_freq = 3.75e9;
  ds.manifest.bandwidth = 100e6;
  ds.manifest.reflection_coeff = 0.5;
  ds.manifest.snr_db = 15.0;
  ds.manifest.pulse_halfwidth = 2;
  ds.manifest.master_seed = 99;
  int64_t idx = 0;
  for (int t = 0; t < n_traj; ++t) {
    ds.manifest.waypoint_seeds.push_back(static_cast<uint64_t>(t) + 100);
    for (int i = 0; i < per_traj; ++i) {
      Fingerprint fp;
      fp.taps.resize(8);
      for (int k = 0; k < 8; ++k) {
        fp.taps[k] = std::complex<float>(static_cast<float>(idx), static_cast<float>(k) * 0.5f);
      }
      fp.position = Vec2{static_cast<double>(t), static_cast<double>(i)};
      fp.trajectory_id = t;
      fp.index = idx++;
      ds.fingerprints.push_back(std::move(fp));
    }
  }
  return ds;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("cirtf_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static inline int counter = 0;
};

Errc thrown_code(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::usage;  // sentinel: nothing thrown
}

}  // namespace

TEST_CASE("flatten/unflatten round-trips the tap sequence") {
  auto ds = toy_dataset(1, 1);
  const auto& fp = ds.fingerprints[0];
  auto seq = flatten_fingerprint<float>(fp);
  REQUIRE_EQ(seq.rows(), 2);
  REQUIRE_EQ(seq.cols(), 8);
  CHECK_EQ(seq(0, 3), fp.taps[3].real());
  CHECK_EQ(seq(1, 3), fp.taps[3].imag());
  auto back = unflatten_fingerprint<float>(seq);
  CHECK_EQ(back.taps, fp.taps);

  auto seqd = flatten_fingerprint<double>(fp);
  CHECK_EQ(seqd(0, 5), static_cast<double>(fp.taps[5].real()));
}

TEST_CASE("split keeps trajectories whole and partitions every fingerprint") {
  auto ds = toy_dataset(10, 7);
  auto splits = split_dataset(ds, {0.8, 0.1, 0.1}, 5);

  std::set<int64_t> seen;
  std::map<int32_t, int> traj_to_split;
  for (int k = 0; k < 3; ++k) {
    for (const auto& fp : splits[k].fingerprints) {
      CHECK(seen.insert(fp.index).second);  // no fingerprint in two splits
      auto [it, fresh] = traj_to_split.emplace(fp.trajectory_id, k);
      if (!fresh) CHECK_EQ(it->second, k);  // trajectory never straddles splits
    }
  }
  CHECK_EQ(seen.size(), 70u);
  CHECK_EQ(splits[0].size(), 56u);  // 8 : 1 : 1 trajectories
  CHECK_EQ(splits[1].size(), 7u);
  CHECK_EQ(splits[2].size(), 7u);
  CHECK_EQ(splits[0].manifest.n_an, ds.manifest.n_an);

  auto again = split_dataset(ds, {0.8, 0.1, 0.1}, 5);
  for (int k = 0; k < 3; ++k) CHECK(datasets_equal(splits[k], again[k]));

  auto other = split_dataset(ds, {0.8, 0.1, 0.1}, 6);
  bool any_diff = false;
  for (int k = 0; k < 3; ++k) any_diff = any_diff || !datasets_equal(splits[k], other[k]);
  CHECK(any_diff);
}

TEST_CASE("split gives every nonzero-ratio bucket at least one trajectory") {
  auto ds = toy_dataset(3, 2);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto splits = split_dataset(ds, {0.98, 0.01, 0.01}, seed);
    CHECK(splits[0].size() > 0);
    CHECK(splits[1].size() > 0);
    CHECK(splits[2].size() > 0);
  }
  // Zero-ratio buckets stay empty.
  auto splits = split_dataset(ds, {1.0, 0.0, 0.0}, 1);
  CHECK_EQ(splits[0].size(), 6u);
  CHECK_EQ(splits[1].size(), 0u);
  CHECK_EQ(splits[2].size(), 0u);
}

TEST_CASE("split validates ratios and trajectory count") {
  auto ds = toy_dataset(2, 3);
  CHECK_EQ(thrown_code([&] { split_dataset(ds, {0.5, 0.4, 0.2}, 1); }), Errc::config);
  CHECK_EQ(thrown_code([&] { split_dataset(ds, {1.2, -0.1, -0.1}, 1); }), Errc::config);
  // 2 trajectories cannot feed 3 nonzero buckets.
  CHECK_EQ(thrown_code([&] { split_dataset(ds, {0.8, 0.1, 0.1}, 1); }), Errc::config);
  CHECK_NOTHROW(split_dataset(ds, {0.5, 0.5, 0.0}, 1));
}

TEST_CASE("split assignment frequencies are close to the requested ratios") {
  auto ds = toy_dataset(40, 1);
  int val_total = 0;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto splits = split_dataset(ds, {0.8, 0.1, 0.1}, seed);
    CHECK_EQ(splits[0].size(), 32u);
    CHECK_EQ(splits[1].size(), 4u);
    CHECK_EQ(splits[2].size(), 4u);
    val_total += static_cast<int>(splits[1].size());
    // Different seeds shuffle different trajectories into the buckets.
  }
  CHECK_EQ(val_total, 200);
}

TEST_CASE("subsample keeps exactly n labeled fingerprints in original order") {
  auto ds = toy_dataset(4, 5);  // 20 labeled
  auto sub = subsample_labeled(ds, 8, 3);
  REQUIRE_EQ(sub.size(), 8u);
  CHECK_EQ(sub.labeled_count(), 8u);
  for (size_t i = 1; i < sub.size(); ++i) CHECK(sub.fingerprints[i - 1].index < sub.fingerprints[i].index);
  // Sampled fingerprints are bit-identical copies.
  for (const auto& fp : sub.fingerprints) {
    CHECK_EQ(fp.taps, ds.fingerprints[static_cast<size_t>(fp.index)].taps);
  }

  auto again = subsample_labeled(ds, 8, 3);
  CHECK(datasets_equal(sub, again));

  CHECK_EQ(thrown_code([&] { subsample_labeled(ds, 21, 3); }), Errc::config);
  CHECK_EQ(subsample_labeled(ds, 0, 3).size(), 0u);
  CHECK_EQ(subsample_labeled(ds, 20, 3).size(), 20u);
}

TEST_CASE("subsample draws uniformly across the labeled pool") {
  auto ds = toy_dataset(1, 30);
  std::vector<int> hits(30, 0);
  const int rounds = 600;
  for (int s = 0; s < rounds; ++s) {
    auto sub = subsample_labeled(ds, 10, static_cast<uint64_t>(s));
    for (const auto& fp : sub.fingerprints) ++hits[static_cast<size_t>(fp.index)];
  }
  // Each index is chosen with p = 1/3: expect 200 +- ~12 (sd). 6 sigma band.
  for (int h : hits) {
    CHECK(h > 200 - 72);
    CHECK(h < 200 + 72);
  }
}

TEST_CASE("save/load round-trips datasets including unlabeled samples") {
  auto ds = toy_dataset(3, 4);
  ds.fingerprints[2].position.reset();
  ds.fingerprints[7].position.reset();
  TempDir tmp;
  save_dataset(ds, tmp.path);

  CHECK(fs::exists(tmp.path / "manifest.json"));
  CHECK(fs::exists(tmp.path / "cirs.bin"));
  CHECK(fs::exists(tmp.path / "positions.bin"));
  CHECK(fs::exists(tmp.path / "traj.bin"));

  auto back = load_dataset(tmp.path);
  CHECK(datasets_equal(ds, back));
  CHECK_FALSE(back.fingerprints[2].labeled());
  CHECK_FALSE(back.fingerprints[7].labeled());
  CHECK(back.fingerprints[0].labeled());
  CHECK_EQ(back.manifest.master_seed, 99u);
  CHECK_EQ(back.manifest.snr_db.value(), 15.0);
  CHECK_EQ(back.manifest.anchors.size(), 2u);
  CHECK_EQ(back.manifest.anchors[1], Vec2{9.0, 7.0});
  CHECK_EQ(back.manifest.waypoint_seeds, ds.manifest.waypoint_seeds);
  CHECK_EQ(back.fingerprints[5].index, 5);

  // Noiseless manifests keep snr_db = null.
  ds.manifest.snr_db.reset();
  TempDir tmp2;
  save_dataset(ds, tmp2.path);
  CHECK_FALSE(load_dataset(tmp2.path).manifest.snr_db.has_value());
}

TEST_CASE("simulated datasets survive a save/load round-trip bit-exactly") {
  SimEnvironment env;
  env.width = 30.0;
  env.height = 20.0;
  env.anchors = {{3.0, 3.0}, {27.0, 17.0}};
  env.l_s = 32;
  std::vector<TrajectoryConfig> trajs(2);
  trajs[0].duration = 0.5;
  trajs[0].waypoint_seed = 8;
  trajs[1].duration = 0.3;
  trajs[1].waypoint_seed = 9;
  auto ds = generate_dataset(env, trajs, 2024);
  TempDir tmp;
  save_dataset(ds, tmp.path);
  CHECK(datasets_equal(ds, load_dataset(tmp.path)));
}

TEST_CASE("loader distinguishes corruption modes by error code") {
  auto ds = toy_dataset(2, 3);

  SUBCASE("missing directory") {
    CHECK_EQ(thrown_code([] { load_dataset("/nonexistent/cirtf"); }), Errc::not_found);
  }
  SUBCASE("missing payload file") {
    TempDir tmp;
    save_dataset(ds, tmp.path);
    fs::remove(tmp.path / "cirs.bin");
    CHECK_EQ(thrown_code([&] { load_dataset(tmp.path); }), Errc::not_found);
  }
  SUBCASE("bad magic") {
    TempDir tmp;
    save_dataset(ds, tmp.path);
    std::fstream f(tmp.path / "cirs.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXXXXXX", 8);
    f.close();
    CHECK_EQ(thrown_code([&] { load_dataset(tmp.path); }), Errc::bad_magic);
  }
  SUBCASE("unsupported binary version") {
    TempDir tmp;
    save_dataset(ds, tmp.path);
    std::fstream f(tmp.path / "traj.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    uint32_t v = 2;
    f.write(reinterpret_cast<const char*>(&v), 4);
    f.close();
    CHECK_EQ(thrown_code([&] { load_dataset(tmp.path); }), Errc::version_mismatch);
  }
  SUBCASE("truncated payload") {
    TempDir tmp;
    save_dataset(ds, tmp.path);
    auto size = fs::file_size(tmp.path / "cirs.bin");
    fs::resize_file(tmp.path / "cirs.bin", size - 12);
    CHECK_EQ(thrown_code([&] { load_dataset(tmp.path); }), Errc::truncated_file);
  }
  SUBCASE("shape disagreement between header and manifest") {
    TempDir tmp;
    save_dataset(ds, tmp.path);
    std::fstream f(tmp.path / "cirs.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(12);
    uint64_t num = 999;
    f.write(reinterpret_cast<const char*>(&num), 8);
    f.close();
    CHECK_EQ(thrown_code([&] { load_dataset(tmp.path); }), Errc::shape_mismatch);
  }
  SUBCASE("malformed manifest JSON") {
    TempDir tmp;
    save_dataset(ds, tmp.path);
    std::ofstream f(tmp.path / "manifest.json");
    f << "{ not json";
    f.close();
    CHECK_EQ(thrown_code([&] { load_dataset(tmp.path); }), Errc::config);
  }
  SUBCASE("unsupported manifest format_version") {
    TempDir tmp;
    save_dataset(ds, tmp.path);
    auto j = nlohmann::json::parse(std::ifstream(tmp.path / "manifest.json"));
    j["format_version"] = 2;
    std::ofstream f(tmp.path / "manifest.json");
    f << j.dump(2);
    f.close();
    CHECK_EQ(thrown_code([&] { load_dataset(tmp.path); }), Errc::version_mismatch);
  }
}

TEST_CASE("trajectory_ids preserves first-appearance order") {
  Dataset ds = toy_dataset(3, 2);
  auto ids = ds.trajectory_ids();
  CHECK_EQ(ids, std::vector<int32_t>{0, 1, 2});
}
