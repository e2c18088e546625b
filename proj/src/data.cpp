#include "cirtf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

#include "cirtf/rng.hpp"

namespace cirtf {

using nlohmann::json;

size_t Dataset::labeled_count() const {
  return static_cast<size_t>(
      std::count_if(fingerprints.begin(), fingerprints.end(), [](const Fingerprint& f) { return f.labeled(); }));
}

std::vector<int32_t> Dataset::trajectory_ids() const {
  std::vector<int32_t> ids;
  for (const auto& fp : fingerprints) {
    if (ids.empty() || ids.back() != fp.trajectory_id) ids.push_back(fp.trajectory_id);
  }
  return ids;
}

std::array<Dataset, 3> split_dataset(const Dataset& ds, const std::array<double, 3>& ratios,
                                     uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  for (double r : ratios) {
    if (r < 0.0) throw Error(Errc::config, "split ratios must be nonnegative");
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(Errc::config, "split ratios must sum to 1");

  std::vector<int32_t> ids = ds.trajectory_ids();
  size_t n_traj = ids.size();
  int nonzero = 0;
  for (double r : ratios) nonzero += (r > 0.0) ? 1 : 0;
  if (static_cast<int>(n_traj) < nonzero) {
    throw Error(Errc::config, "fewer trajectories than nonzero splits");
  }

  Rng rng(mix_seed({seed, seed_tag::split}));
  for (size_t i = n_traj; i > 1; --i) {
    size_t j = rng.uniform_int(i);
    std::swap(ids[i - 1], ids[j]);
  }

  // Largest-remainder allocation of whole trajectories, then force one
  // trajectory into any nonzero split that came up empty.
  std::array<size_t, 3> counts{};
  std::array<double, 3> frac{};
  size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    double target = ratios[k] * static_cast<double>(n_traj);
    counts[k] = static_cast<size_t>(target);
    frac[k] = target - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  while (assigned < n_traj) {
    int best = 0;
    for (int k = 1; k < 3; ++k) {
      if (frac[k] > frac[best]) best = k;
    }
    ++counts[best];
    frac[best] = -1.0;
    ++assigned;
  }
  for (int k = 0; k < 3; ++k) {
    if (ratios[k] > 0.0 && counts[k] == 0) {
      int donor = 0;
      for (int j = 1; j < 3; ++j) {
        if (counts[j] > counts[donor]) donor = j;
      }
      --counts[donor];
      ++counts[k];
    }
  }

  std::array<std::vector<int32_t>, 3> groups;
  size_t pos = 0;
  for (int k = 0; k < 3; ++k) {
    for (size_t i = 0; i < counts[k]; ++i) groups[k].push_back(ids[pos++]);
  }

  std::array<Dataset, 3> out;
  for (int k = 0; k < 3; ++k) {
    out[k].manifest = ds.manifest;
    for (const auto& fp : ds.fingerprints) {
      if (std::find(groups[k].begin(), groups[k].end(), fp.trajectory_id) != groups[k].end()) {
        out[k].fingerprints.push_back(fp);
      }
    }
  }
  return out;
}

Dataset subsample_labeled(const Dataset& ds, size_t n, uint64_t seed) {
  std::vector<size_t> labeled;
  for (size_t i = 0; i < ds.fingerprints.size(); ++i) {
    if (ds.fingerprints[i].labeled()) labeled.push_back(i);
  }
  if (n > labeled.size()) {
    throw Error(Errc::config, "requested " + std::to_string(n) + " labeled samples but only " +
                                  std::to_string(labeled.size()) + " available");
  }
  Rng rng(mix_seed({seed, seed_tag::subsample}));
  // Partial Fisher-Yates: the first n entries are the sample.
  for (size_t i = 0; i < n; ++i) {
    size_t j = i + rng.uniform_int(labeled.size() - i);
    std::swap(labeled[i], labeled[j]);
  }
  std::vector<size_t> chosen(labeled.begin(), labeled.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(chosen.begin(), chosen.end());

  Dataset out;
  out.manifest = ds.manifest;
  out.fingerprints.reserve(n);
  for (size_t i : chosen) out.fingerprints.push_back(ds.fingerprints[i]);
  return out;
}

namespace {

constexpr uint32_t kBinVersion = 1;

void write_u32(std::ofstream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }

struct BinHeader {
  uint64_t num = 0;
  uint32_t n_an = 0;
  uint32_t l_s = 0;
};

void write_bin_header(std::ofstream& f, const char magic[8], const BinHeader& h) {
  f.write(magic, 8);
  write_u32(f, kBinVersion);
  write_u64(f, h.num);
  write_u32(f, h.n_an);
  write_u32(f, h.l_s);
}

// Reads and checks magic + version, returns the declared shape. Distinct
// error codes let callers tell corruption modes apart.
BinHeader read_bin_header(std::ifstream& f, const char magic[8], const std::string& name) {
  char got[8] = {};
  f.read(got, 8);
  if (!f || std::memcmp(got, magic, 8) != 0) {
    throw Error(Errc::bad_magic, name + ": bad magic");
  }
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (!f || version != kBinVersion) {
    throw Error(Errc::version_mismatch, name + ": unsupported version");
  }
  BinHeader h;
  f.read(reinterpret_cast<char*>(&h.num), 8);
  f.read(reinterpret_cast<char*>(&h.n_an), 4);
  f.read(reinterpret_cast<char*>(&h.l_s), 4);
  if (!f) throw Error(Errc::truncated_file, name + ": truncated header");
  return h;
}

void read_payload(std::ifstream& f, void* dst, size_t bytes, const std::string& name) {
  f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (static_cast<size_t>(f.gcount()) != bytes) {
    throw Error(Errc::truncated_file, name + ": truncated payload");
  }
}

json manifest_to_json(const Manifest& m, uint64_t num_fp) {
  json anchors = json::array();
  for (const auto& a : m.anchors) anchors.push_back({a.x, a.y});
  json j{
      {"format_version", m.format_version},
      {"n_an", m.n_an},
      {"l_s", m.l_s},
      {"width", m.width},
      {"height", m.height},
      {"anchors", anchors},
      {"carrier_freq", m.carrier_freq},
      {"bandwidth", m.bandwidth},
      {"reflection_coeff", m.reflection_coeff},
      {"pulse_halfwidth", m.pulse_halfwidth},
      {"master_seed", m.master_seed},
      {"waypoint_seeds", m.waypoint_seeds},
      {"num_fingerprints", num_fp},
  };
  if (m.snr_db.has_value()) {
    j["snr_db"] = *m.snr_db;
  } else {
    j["snr_db"] = nullptr;
  }
  return j;
}

Manifest manifest_from_json(const json& j, uint64_t& num_fp) {
  Manifest m;
  m.format_version = j.at("format_version").get<int>();
  if (m.format_version != 1) {
    throw Error(Errc::version_mismatch, "manifest.json: unsupported format_version");
  }
  m.n_an = j.at("n_an").get<int>();
  m.l_s = j.at("l_s").get<int>();
  m.width = j.at("width").get<double>();
  m.height = j.at("height").get<double>();
  for (const auto& a : j.at("anchors")) m.anchors.push_back({a.at(0).get<double>(), a.at(1).get<double>()});
  m.carrier_freq = j.at("carrier_freq").get<double>();
  m.bandwidth = j.at("bandwidth").get<double>();
  m.reflection_coeff = j.at("reflection_coeff").get<double>();
  if (!j.at("snr_db").is_null()) m.snr_db = j.at("snr_db").get<double>();
  m.pulse_halfwidth = j.at("pulse_halfwidth").get<int>();
  m.master_seed = j.at("master_seed").get<uint64_t>();
  m.waypoint_seeds = j.at("waypoint_seeds").get<std::vector<uint64_t>>();
  num_fp = j.at("num_fingerprints").get<uint64_t>();
  if (m.n_an <= 0 || m.l_s <= 0) throw Error(Errc::shape_mismatch, "manifest.json: invalid shapes");
  return m;
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const Manifest& m = ds.manifest;
  const uint64_t num = ds.fingerprints.size();
  const size_t n_taps = static_cast<size_t>(m.n_an) * static_cast<size_t>(m.l_s);

  {
    std::ofstream f(dir / "manifest.json");
    if (!f) throw Error(Errc::runtime, "cannot write manifest.json");
    f << manifest_to_json(m, num).dump(2) << "\n";
  }
  {
    std::ofstream f(dir / "cirs.bin", std::ios::binary);
    if (!f) throw Error(Errc::runtime, "cannot write cirs.bin");
    write_bin_header(f, "CIRBIN01", {num, static_cast<uint32_t>(m.n_an), static_cast<uint32_t>(m.l_s)});
    for (const auto& fp : ds.fingerprints) {
      if (static_cast<size_t>(fp.taps.size()) != n_taps) {
        throw Error(Errc::shape_mismatch, "fingerprint tap count does not match manifest");
      }
      f.write(reinterpret_cast<const char*>(fp.taps.data()),
              static_cast<std::streamsize>(n_taps * sizeof(std::complex<float>)));
    }
  }
  {
    std::ofstream f(dir / "positions.bin", std::ios::binary);
    if (!f) throw Error(Errc::runtime, "cannot write positions.bin");
    write_bin_header(f, "POSBIN01", {num, 0, 0});
    for (const auto& fp : ds.fingerprints) {
      float xy[2];
      if (fp.position.has_value()) {
        xy[0] = static_cast<float>(fp.position->x);
        xy[1] = static_cast<float>(fp.position->y);
      } else {
        xy[0] = xy[1] = std::numeric_limits<float>::quiet_NaN();
      }
      f.write(reinterpret_cast<const char*>(xy), 8);
    }
  }
  {
    std::ofstream f(dir / "traj.bin", std::ios::binary);
    if (!f) throw Error(Errc::runtime, "cannot write traj.bin");
    write_bin_header(f, "TRJBIN01", {num, 0, 0});
    for (const auto& fp : ds.fingerprints) {
      f.write(reinterpret_cast<const char*>(&fp.trajectory_id), 4);
    }
  }
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  uint64_t num = 0;
  {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw Error(Errc::not_found, "manifest.json not found in " + dir.string());
    json j;
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw Error(Errc::config, std::string("manifest.json: ") + e.what());
    }
    ds.manifest = manifest_from_json(j, num);
  }
  const Manifest& m = ds.manifest;
  const size_t n_taps = static_cast<size_t>(m.n_an) * static_cast<size_t>(m.l_s);

  ds.fingerprints.resize(num);

  {
    std::ifstream f(dir / "cirs.bin", std::ios::binary);
    if (!f) throw Error(Errc::not_found, "cirs.bin not found");
    BinHeader h = read_bin_header(f, "CIRBIN01", "cirs.bin");
    if (h.num != num || h.n_an != static_cast<uint32_t>(m.n_an) || h.l_s != static_cast<uint32_t>(m.l_s)) {
      throw Error(Errc::shape_mismatch, "cirs.bin shape does not match manifest");
    }
    for (uint64_t i = 0; i < num; ++i) {
      auto& fp = ds.fingerprints[i];
      fp.index = static_cast<int64_t>(i);
      fp.taps.resize(static_cast<Eigen::Index>(n_taps));
      read_payload(f, fp.taps.data(), n_taps * sizeof(std::complex<float>), "cirs.bin");
    }
  }
  {
    std::ifstream f(dir / "positions.bin", std::ios::binary);
    if (!f) throw Error(Errc::not_found, "positions.bin not found");
    BinHeader h = read_bin_header(f, "POSBIN01", "positions.bin");
    if (h.num != num) throw Error(Errc::shape_mismatch, "positions.bin count does not match manifest");
    for (uint64_t i = 0; i < num; ++i) {
      float xy[2];
      read_payload(f, xy, 8, "positions.bin");
      if (!std::isnan(xy[0]) || !std::isnan(xy[1])) {
        ds.fingerprints[i].position = Vec2{xy[0], xy[1]};
      }
    }
  }
  {
    std::ifstream f(dir / "traj.bin", std::ios::binary);
    if (!f) throw Error(Errc::not_found, "traj.bin not found");
    BinHeader h = read_bin_header(f, "TRJBIN01", "traj.bin");
    if (h.num != num) throw Error(Errc::shape_mismatch, "traj.bin count does not match manifest");
    for (uint64_t i = 0; i < num; ++i) {
      read_payload(f, &ds.fingerprints[i].trajectory_id, 4, "traj.bin");
    }
  }
  return ds;
}

bool datasets_equal(const Dataset& a, const Dataset& b) {
  if (a.size() != b.size()) return false;
  if (a.manifest.n_an != b.manifest.n_an || a.manifest.l_s != b.manifest.l_s) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    const auto& fa = a.fingerprints[i];
    const auto& fb = b.fingerprints[i];
    if (fa.trajectory_id != fb.trajectory_id) return false;
    if (fa.position.has_value() != fb.position.has_value()) return false;
    if (fa.position.has_value() && !(*fa.position == *fb.position)) return false;
    if (fa.taps.size() != fb.taps.size()) return false;
    if (std::memcmp(fa.taps.data(), fb.taps.data(), sizeof(std::complex<float>) * fa.taps.size()) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace cirtf
