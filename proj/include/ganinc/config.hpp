#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ganinc/datagen.hpp"
#include "ganinc/errors.hpp"
#include "ganinc/learner.hpp"
#include "ganinc/memory.hpp"
#include "ganinc/model.hpp"

namespace ganinc {

namespace config_detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("config: bad numeric value for " + key + ": '" + v + "'");
  }
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("config: bad integer value for " + key + ": '" + v + "'");
  }
}

inline uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    uint64_t x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("config: bad seed value for " + key + ": '" + v + "'");
  }
}

// shortest round-trip decimal form
inline std::string real_str(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace config_detail

// Full run configuration; `key = value` text format with '#' comments.
// Unknown keys are rejected so typos cannot silently change a run.
struct ExperimentConfig {
  Variant variant = Variant::mt_sc;
  Budget memory_budget = Budget::of(128);
  double lambda = -1.0;  // negative = resolve from variant (1.0 mt_mc, 0.5 mt_sc)
  double temperature = 2.0;
  double gamma = 0.5;
  double lr = 0.001;
  int batch_size = 64;
  int patience = 5;
  int max_epochs = 100;
  int feature_dim = 64;
  int image_size = 32;
  int channels = 3;
  uint64_t seed = 0;
  int architectures = 5;
  int train_per_class = 600;
  int val_per_class = 200;
  int test_per_class = 200;
  double amplitude = 0.5;
  std::string output_dir = "out";

  void set(const std::string& key, const std::string& value) {
    using namespace config_detail;
    if (key == "variant") variant = variant_from_name(value);
    else if (key == "memory_budget")
      memory_budget = value == "inf" ? Budget::infinite()
                                     : Budget::of(parse_int(key, value));
    else if (key == "lambda") lambda = parse_real(key, value);
    else if (key == "temperature") temperature = parse_real(key, value);
    else if (key == "gamma") gamma = parse_real(key, value);
    else if (key == "lr") lr = parse_real(key, value);
    else if (key == "batch_size") batch_size = int(parse_int(key, value));
    else if (key == "patience") patience = int(parse_int(key, value));
    else if (key == "max_epochs") max_epochs = int(parse_int(key, value));
    else if (key == "feature_dim") feature_dim = int(parse_int(key, value));
    else if (key == "image_size") image_size = int(parse_int(key, value));
    else if (key == "channels") channels = int(parse_int(key, value));
    else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "architectures") architectures = int(parse_int(key, value));
    else if (key == "train_per_class") train_per_class = int(parse_int(key, value));
    else if (key == "val_per_class") val_per_class = int(parse_int(key, value));
    else if (key == "test_per_class") test_per_class = int(parse_int(key, value));
    else if (key == "amplitude") amplitude = parse_real(key, value);
    else if (key == "output_dir") output_dir = value;
    else throw config_error("config: unknown key '" + key + "'");
  }

  // Pin the variant-dependent default so the serialized form is complete.
  void resolve() {
    if (lambda < 0) {
      switch (variant) {
        case Variant::mt_mc: lambda = 1.0; break;
        case Variant::mt_sc: lambda = 0.5; break;
        default: lambda = 0.0; break;
      }
    }
  }

  void validate() const {
    if (lambda < 0) throw config_error("config: lambda unresolved");
    if (amplitude < 0 || amplitude > 1) throw config_error("config: amplitude must be in [0,1]");
    if (architectures < 1) throw config_error("config: architectures must be >= 1");
    if (train_per_class < 1 || val_per_class < 1 || test_per_class < 1)
      throw config_error("config: per-split sample counts must be >= 1");
    if (batch_size < 1) throw config_error("config: batch_size must be >= 1");
    if (patience < 1) throw config_error("config: patience must be >= 1");
    if (max_epochs < 0) throw config_error("config: max_epochs must be >= 0");
    if (!(lr > 0)) throw config_error("config: lr must be > 0");
    if (output_dir.empty()) throw config_error("config: output_dir must be set");
    net_config().validate();
    loss_config().validate();
  }

  NetworkConfig net_config() const {
    NetworkConfig net;
    net.input_size = image_size;
    net.channels = channels;
    net.feature_dim = feature_dim;
    net.conv_stages = 2;
    net.variant = variant;
    return net;
  }

  LossConfig loss_config() const {
    LossConfig l;
    l.gamma = gamma;
    l.temperature = temperature;
    l.lambda = lambda < 0 ? 0.0 : lambda;
    return l;
  }

  LearnerConfig learner_config() const {
    LearnerConfig cfg;
    cfg.net = net_config();
    cfg.loss = loss_config();
    cfg.train.lr = lr;
    cfg.train.batch_size = batch_size;
    cfg.train.patience = patience;
    cfg.train.max_epochs = max_epochs;
    cfg.budget = memory_budget;
    cfg.seed = seed;
    return cfg;
  }

  SplitCounts split_counts() const { return SplitCounts{train_per_class, val_per_class, test_per_class}; }
  ImageShape image_shape() const { return ImageShape{channels, image_size}; }

  std::vector<ArchitectureSpec> architecture_specs() const {
    std::vector<ArchitectureSpec> specs;
    for (int i = 0; i < architectures; ++i)
      specs.push_back(ArchitectureSpec::standard(i, amplitude));
    return specs;
  }

  std::string serialize() const {
    using config_detail::real_str;
    std::ostringstream os;
    os << "# resolved experiment configuration\n";
    os << "variant = " << variant_name(variant) << '\n';
    os << "memory_budget = " << memory_budget.str() << '\n';
    os << "lambda = " << real_str(lambda) << '\n';
    os << "temperature = " << real_str(temperature) << '\n';
    os << "gamma = " << real_str(gamma) << '\n';
    os << "lr = " << real_str(lr) << '\n';
    os << "batch_size = " << batch_size << '\n';
    os << "patience = " << patience << '\n';
    os << "max_epochs = " << max_epochs << '\n';
    os << "feature_dim = " << feature_dim << '\n';
    os << "image_size = " << image_size << '\n';
    os << "channels = " << channels << '\n';
    os << "seed = " << seed << '\n';
    os << "architectures = " << architectures << '\n';
    os << "train_per_class = " << train_per_class << '\n';
    os << "val_per_class = " << val_per_class << '\n';
    os << "test_per_class = " << test_per_class << '\n';
    os << "amplitude = " << real_str(amplitude) << '\n';
    os << "output_dir = " << output_dir << '\n';
    return os.str();
  }

  static ExperimentConfig parse(std::istream& is, const std::string& name) {
    ExperimentConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      std::string t = config_detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      size_t eq = t.find('=');
      if (eq == std::string::npos)
        throw config_error(name + " line " + std::to_string(line_no) + ": expected key = value");
      cfg.set(config_detail::trim(t.substr(0, eq)), config_detail::trim(t.substr(eq + 1)));
    }
    return cfg;
  }

  static ExperimentConfig from_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config file: " + path.string());
    return parse(is, path.filename().string());
  }
};

}  // namespace ganinc
