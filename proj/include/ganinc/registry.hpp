#pragma once

#include <string>
#include <vector>

#include "ganinc/errors.hpp"

namespace ganinc {

enum class Origin : uint8_t { gan, real };

inline char origin_token(Origin o) { return o == Origin::gan ? 'G' : 'R'; }
inline Origin origin_from_token(char c) {
  if (c == 'G') return Origin::gan;
  if (c == 'R') return Origin::real;
  throw format_error(std::string("unknown origin token: ") + c);
}

// Bijection between (architecture, origin) pairs and dense class indices.
// Every architecture contributes one GAN class and one real class, in that
// order, so class ids are 0..2a-1 after `a` architectures.
class ClassRegistry {
 public:
  struct ClassInfo {
    int architecture;
    Origin origin;
  };

  // Returns the id of the new GAN class; the real class is the next id.
  int add_architecture(int architecture) {
    for (const auto& c : classes_)
      if (c.architecture == architecture)
        throw usage_error("architecture already registered: " + std::to_string(architecture));
    int id = static_cast<int>(classes_.size());
    classes_.push_back({architecture, Origin::gan});
    classes_.push_back({architecture, Origin::real});
    return id;
  }

  int size() const { return static_cast<int>(classes_.size()); }
  int architecture_count() const { return size() / 2; }

  const ClassInfo& info(int class_id) const {
    if (class_id < 0 || class_id >= size()) throw usage_error("class id out of range");
    return classes_[static_cast<size_t>(class_id)];
  }
  Origin origin_of(int class_id) const { return info(class_id).origin; }
  int architecture_of(int class_id) const { return info(class_id).architecture; }

  int class_of(int architecture, Origin origin) const {
    for (int i = 0; i < size(); ++i)
      if (classes_[static_cast<size_t>(i)].architecture == architecture &&
          classes_[static_cast<size_t>(i)].origin == origin)
        return i;
    throw usage_error("architecture not registered: " + std::to_string(architecture));
  }

  bool has_architecture(int architecture) const {
    for (const auto& c : classes_)
      if (c.architecture == architecture) return true;
    return false;
  }

  std::vector<int> classes_with_origin(Origin o) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i)
      if (classes_[static_cast<size_t>(i)].origin == o) out.push_back(i);
    return out;
  }

  std::vector<int> architectures() const {
    std::vector<int> out;
    for (const auto& c : classes_)
      if (c.origin == Origin::gan) out.push_back(c.architecture);
    return out;
  }

 private:
  std::vector<ClassInfo> classes_;
};

}  // namespace ganinc
