#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ganinc/errors.hpp"
#include "ganinc/registry.hpp"
#include "ganinc/rng.hpp"
#include "ganinc/tensor.hpp"
#include "ganinc/tensor_io.hpp"

namespace ganinc {

enum class Split : uint8_t { train, val, test };

inline const char* split_token(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_token(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw format_error("unknown split token '" + s + "'");
}

// Planted periodic artifact standing in for a generator's upsampling
// fingerprint: a 2-D sinusoid with architecture-specific frequency, mixed
// unevenly into the color channels.
struct FingerprintSpec {
  double freq_x = 4.0;  // cycles per image
  double freq_y = 6.0;
  double phase = 0.9;
  double amplitude = 0.5;
  std::array<double, 3> channel_weights = {1.0, 0.55, 0.3};

  double pattern(int x, int y, int width, int height) const {
    return std::sin(2.0 * M_PI * (freq_x * x / width + freq_y * y / height) + phase);
  }
};

// One synthetic source: a "real" texture process (smoothed noise with
// per-channel gains) and its GAN twin that adds the fingerprint.
struct ArchitectureSpec {
  int index = 0;
  int smooth_radius = 1;
  std::array<double, 3> channel_gain = {0.95, 0.72, 0.85};
  FingerprintSpec fingerprint;

  static ArchitectureSpec standard(int index, double amplitude) {
    ArchitectureSpec s;
    s.index = index;
    s.smooth_radius = 1 + index % 3;
    for (int c = 0; c < 3; ++c)
      s.channel_gain[static_cast<size_t>(c)] = 0.6 + 0.35 / (1.0 + 0.2 * index + 0.1 * c);
    s.fingerprint.freq_x = 2.0 + 1.7 * index;
    s.fingerprint.freq_y = 3.0 + 1.3 * index;
    s.fingerprint.phase = 0.9 + 0.7 * index;
    s.fingerprint.amplitude = amplitude;
    int rot = index % 3;
    std::array<double, 3> base = {1.0, 0.55, 0.3};
    for (int c = 0; c < 3; ++c)
      s.fingerprint.channel_weights[static_cast<size_t>(c)] = base[static_cast<size_t>((c + rot) % 3)];
    return s;
  }
};

struct SplitCounts {
  int train = 600;
  int val = 200;
  int test = 200;

  int of(Split s) const {
    switch (s) {
      case Split::train: return train;
      case Split::val: return val;
      case Split::test: return test;
    }
    return 0;
  }
  int total() const { return train + val + test; }
};

struct ImageShape {
  int channels = 3;
  int size = 32;
};

struct Sample {
  TensorValue image;  // (C,H,W), values in [-1,1]
  int architecture = 0;
  Origin origin = Origin::real;
  Split split = Split::train;
  int index = 0;  // per-class index, global across splits
  std::string rel_path;
};

namespace datagen_detail {

// Separable box blur with clamp-to-edge padding, one channel plane.
inline void box_blur(std::vector<double>& plane, int size, int radius) {
  if (radius < 1) return;
  std::vector<double> tmp(plane.size());
  double inv = 1.0 / (2 * radius + 1);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0;
      for (int k = -radius; k <= radius; ++k) {
        int xx = std::min(std::max(x + k, 0), size - 1);
        acc += plane[static_cast<size_t>(y * size + xx)];
      }
      tmp[static_cast<size_t>(y * size + x)] = acc * inv;
    }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double acc = 0;
      for (int k = -radius; k <= radius; ++k) {
        int yy = std::min(std::max(y + k, 0), size - 1);
        acc += tmp[static_cast<size_t>(yy * size + x)];
      }
      plane[static_cast<size_t>(y * size + x)] = acc * inv;
    }
}

inline uint64_t sample_seed(uint64_t run_seed, int architecture, Origin origin, Split split,
                            int index) {
  uint64_t h = splitmix64(run_seed);
  h = hash_combine(h, static_cast<uint64_t>(architecture));
  h = hash_combine(h, static_cast<uint64_t>(origin_token(origin)) * 8 +
                          static_cast<uint64_t>(split));
  h = hash_combine(h, static_cast<uint64_t>(index));
  return h;
}

}  // namespace datagen_detail

// Every sample is derived from hash(run_seed, architecture, origin/split,
// index) alone, so any single image is reproducible in isolation.
inline TensorValue render_sample(const ArchitectureSpec& spec, const ImageShape& shape,
                                 Origin origin, Split split, int index, uint64_t run_seed) {
  Rng rng(datagen_detail::sample_seed(run_seed, spec.index, origin, split, index));
  const int c = shape.channels, hw = shape.size;
  TensorValue img({c, hw, hw});
  std::vector<double> plane(static_cast<size_t>(hw) * hw);
  for (int ch = 0; ch < c; ++ch) {
    for (auto& v : plane) v = rng.uniform(-1.0, 1.0);
    datagen_detail::box_blur(plane, hw, spec.smooth_radius);
    double gain = spec.channel_gain[static_cast<size_t>(ch % 3)];
    double fw = spec.fingerprint.channel_weights[static_cast<size_t>(ch % 3)];
    for (int y = 0; y < hw; ++y)
      for (int x = 0; x < hw; ++x) {
        double v = plane[static_cast<size_t>(y * hw + x)] * gain;
        if (origin == Origin::gan)
          v += spec.fingerprint.amplitude * fw * spec.fingerprint.pattern(x, y, hw, hw);
        v = std::min(1.0, std::max(-1.0, v));
        img[(static_cast<int64_t>(ch) * hw + y) * hw + x] = static_cast<float>(v);
      }
  }
  return img;
}

class DatasetContainer {
 public:
  void add(Sample s) {
    key_index_[key(s.architecture, s.origin, s.split)].push_back(static_cast<int>(samples_.size()));
    path_index_[s.rel_path] = static_cast<int>(samples_.size());
    samples_.push_back(std::move(s));
  }

  int size() const { return static_cast<int>(samples_.size()); }
  const Sample& sample(int i) const { return samples_.at(static_cast<size_t>(i)); }

  const std::vector<int>& indices(int architecture, Origin origin, Split split) const {
    static const std::vector<int> empty;
    auto it = key_index_.find(key(architecture, origin, split));
    return it == key_index_.end() ? empty : it->second;
  }

  int find_by_path(const std::string& rel_path) const {
    auto it = path_index_.find(rel_path);
    if (it == path_index_.end()) throw format_error("sample not in dataset: " + rel_path);
    return it->second;
  }

  std::vector<int> architectures() const {
    std::vector<int> out;
    for (const auto& s : samples_)
      if (std::find(out.begin(), out.end(), s.architecture) == out.end())
        out.push_back(s.architecture);
    std::sort(out.begin(), out.end());
    return out;
  }

  // (N,C,H,W) batch of the given samples, in order.
  TensorValue make_batch(const std::vector<int>& ids) const {
    if (ids.empty()) throw usage_error("make_batch: empty id list");
    const auto& first = sample(ids[0]).image;
    TensorValue out({static_cast<int64_t>(ids.size()), first.dim(0), first.dim(1), first.dim(2)});
    int64_t per = first.numel();
    for (size_t i = 0; i < ids.size(); ++i) {
      const auto& img = sample(ids[static_cast<size_t>(i)]).image;
      if (img.numel() != per) throw usage_error("make_batch: inconsistent image shapes");
      std::copy(img.data.begin(), img.data.end(),
                out.data.begin() + static_cast<int64_t>(i) * per);
    }
    return out;
  }

 private:
  static int64_t key(int architecture, Origin origin, Split split) {
    return (static_cast<int64_t>(architecture) << 4) | (static_cast<int64_t>(origin) << 2) |
           static_cast<int64_t>(split);
  }

  std::vector<Sample> samples_;
  std::map<int64_t, std::vector<int>> key_index_;
  std::map<std::string, int> path_index_;
};

// Generates one architecture's G and R sets across all splits. Per-class
// sample indices run through train, then val, then test, so no index appears
// in two splits.
inline void generate_architecture(DatasetContainer& out, const ArchitectureSpec& spec,
                                  const ImageShape& shape, const SplitCounts& counts,
                                  uint64_t run_seed) {
  if (counts.train < 1 || counts.val < 1 || counts.test < 1)
    throw config_error("per-split sample counts must be >= 1");
  for (Origin origin : {Origin::gan, Origin::real}) {
    int index = 0;
    for (Split split : {Split::train, Split::val, Split::test}) {
      for (int i = 0; i < counts.of(split); ++i, ++index) {
        Sample s;
        s.image = render_sample(spec, shape, origin, split, index, run_seed);
        s.architecture = spec.index;
        s.origin = origin;
        s.split = split;
        s.index = index;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "arch%d/%c_%04d.iltf", spec.index,
                      origin == Origin::gan ? 'g' : 'r', index);
        s.rel_path = buf;
        out.add(std::move(s));
      }
    }
  }
}

inline DatasetContainer generate_dataset(const std::vector<ArchitectureSpec>& specs,
                                         const ImageShape& shape, const SplitCounts& counts,
                                         uint64_t run_seed) {
  DatasetContainer out;
  for (const auto& spec : specs) generate_architecture(out, spec, shape, counts, run_seed);
  return out;
}

// ---- on-disk container ----

inline void write_container(const std::filesystem::path& dir, const DatasetContainer& data) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw format_error("cannot write manifest in " + dir.string());
  manifest << "# relative_path,architecture_index,origin{G|R},split{train|val|test}\n";
  for (int i = 0; i < data.size(); ++i) {
    const Sample& s = data.sample(i);
    std::filesystem::path p = dir / s.rel_path;
    std::filesystem::create_directories(p.parent_path());
    write_tensor(p, s.image);
    manifest << s.rel_path << ',' << s.architecture << ',' << origin_token(s.origin) << ','
             << split_token(s.split) << '\n';
  }
}

inline DatasetContainer read_container(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw format_error("missing manifest: " + (dir / "manifest.txt").string());
  DatasetContainer out;
  std::map<std::pair<int, char>, int> class_counters;
  std::string line;
  int line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string path, arch_str, origin_str, split_str;
    if (!std::getline(ls, path, ',') || !std::getline(ls, arch_str, ',') ||
        !std::getline(ls, origin_str, ',') || !std::getline(ls, split_str))
      throw format_error("manifest line " + std::to_string(line_no) + ": expected 4 fields");
    Sample s;
    try {
      s.architecture = std::stoi(arch_str);
    } catch (const std::exception&) {
      throw format_error("manifest line " + std::to_string(line_no) + ": bad architecture index '" +
                         arch_str + "'");
    }
    if (origin_str.size() != 1)
      throw format_error("manifest line " + std::to_string(line_no) + ": bad origin '" +
                         origin_str + "'");
    try {
      s.origin = origin_from_token(origin_str[0]);
      s.split = split_from_token(split_str);
    } catch (const format_error& e) {
      throw format_error("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    s.rel_path = path;
    s.index = class_counters[{s.architecture, origin_str[0]}]++;
    s.image = read_tensor(dir / path);
    out.add(std::move(s));
  }
  return out;
}

}  // namespace ganinc
