#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "acl/errors.hpp"
#include "acl/model.hpp"
#include "acl/numerics.hpp"

namespace acl {

struct Sample {
  Vector x;
  ClassId y = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::string split;           // "train", "test", ...
  std::uint64_t spec_hash = 0;  // hash of the generator spec, 0 for loaded files

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  std::size_t dim() const { return samples.empty() ? 0 : samples.front().x.size(); }

  std::vector<ClassId> classes() const {
    std::set<ClassId> ids;
    for (const auto& s : samples) ids.insert(s.y);
    return {ids.begin(), ids.end()};
  }

  void validate() const {
    const std::size_t d = dim();
    for (const auto& s : samples) {
      if (s.x.size() != d) throw DimInconsistent("samples do not share a single input dimension");
    }
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct Task {
  std::vector<ClassId> classes;  // sorted
  LabeledDataset train;
  LabeledDataset test;
};

struct TaskStream {
  std::vector<Task> tasks;

  std::size_t size() const noexcept { return tasks.size(); }

  void validate() const {
    if (tasks.empty()) throw InvalidSpec("task stream has no tasks");
    std::set<ClassId> seen;
    for (std::size_t k = 0; k < tasks.size(); ++k) {
      const auto& t = tasks[k];
      if (t.classes.empty() || t.train.empty() || t.test.empty()) {
        throw InvalidSpec("task " + std::to_string(k + 1) + " is empty");
      }
      for (ClassId c : t.classes) {
        if (!seen.insert(c).second) throw InvalidSpec("class " + std::to_string(c) + " appears in two tasks");
      }
      for (const auto* split : {&t.train, &t.test}) {
        for (const auto& s : split->samples) {
          if (!std::binary_search(t.classes.begin(), t.classes.end(), s.y)) {
            throw InvalidSpec("task " + std::to_string(k + 1) + " has a sample of undeclared class " +
                              std::to_string(s.y));
          }
        }
      }
    }
  }
};

}  // namespace acl
