#pragma once

#include <cstdint>
#include <vector>

namespace psdn {

// Deterministic 50/50 batch composition: every batch holds exactly
// batch_size/2 target-accent and batch_size/2 other-accent items. Each group
// is sampled uniformly with a seeded reshuffle per epoch, so the scarce
// group is oversampled by cycling faster.
class BatchComposer {
 public:
  BatchComposer(std::vector<int> target_indices, std::vector<int> other_indices,
                int batch_size, std::uint64_t seed);

  // Dataset indices; slots [0, B/2) are target-accent, the rest other.
  const std::vector<int>& next();

 private:
  struct Group {
    std::vector<int> items;
    std::size_t cursor = 0;
    std::uint64_t epoch = 0;
  };
  void reshuffle(Group& group, std::uint64_t group_tag);
  int draw(Group& group, std::uint64_t group_tag);

  Group target_, other_;
  int batch_size_;
  std::uint64_t seed_;
  std::vector<int> batch_;
};

}  // namespace psdn
