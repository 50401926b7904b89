#include "psdn/batching.hpp"

#include "psdn/errors.hpp"
#include "psdn/rng.hpp"

namespace psdn {

BatchComposer::BatchComposer(std::vector<int> target_indices,
                             std::vector<int> other_indices, int batch_size,
                             std::uint64_t seed)
    : batch_size_(batch_size), seed_(seed) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw UsageError("batch_size must be even and >= 2, got " +
                     std::to_string(batch_size));
  if (target_indices.empty()) throw DataError("no target-accent training data");
  if (other_indices.empty()) throw DataError("no other-accent training data");
  target_.items = std::move(target_indices);
  other_.items = std::move(other_indices);
  reshuffle(target_, 0);
  reshuffle(other_, 1);
}

void BatchComposer::reshuffle(Group& group, std::uint64_t group_tag) {
  Rng rng(derive_seed(seed_, "batch", group_tag, group.epoch));
  // Fisher-Yates
  for (std::size_t i = group.items.size(); i > 1; --i) {
    const std::size_t j =
        static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(group.items[i - 1], group.items[j]);
  }
  group.cursor = 0;
}

int BatchComposer::draw(Group& group, std::uint64_t group_tag) {
  if (group.cursor >= group.items.size()) {
    ++group.epoch;
    reshuffle(group, group_tag);
  }
  return group.items[group.cursor++];
}

const std::vector<int>& BatchComposer::next() {
  batch_.clear();
  batch_.reserve(batch_size_);
  for (int i = 0; i < batch_size_ / 2; ++i) batch_.push_back(draw(target_, 0));
  for (int i = 0; i < batch_size_ / 2; ++i) batch_.push_back(draw(other_, 1));
  return batch_;
}

}  // namespace psdn
