#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "psdn/adam.hpp"
#include "psdn/model.hpp"
#include "psdn/types.hpp"

namespace psdn {

// Small fixed-budget sequence classifier: two temporal convolutions, mean
// pool, linear head. Used both as the representation probe and as the
// accentedness reference classifier; capacity stays fixed so accuracy
// measures the representation, not the probe.
class SeqClassifier {
 public:
  struct Config {
    int channels = 32;
    int kernel = 5;
    int steps = 2000;
    double lr = 1e-3;
    int batch_size = 32;
  };

  SeqClassifier(int in_dim, int classes, Config cfg, std::uint64_t seed);
  SeqClassifier(SeqClassifier&&) noexcept;
  ~SeqClassifier();

  // feats[i] are [T_i x in_dim]; labels in [0, classes).
  void fit(const std::vector<const MatF*>& feats,
           const std::vector<int>& labels, const std::vector<int>& train_idx,
           int workers = 0);

  int predict(const MatF& feat) const;
  double accuracy(const std::vector<const MatF*>& feats,
                  const std::vector<int>& labels,
                  const std::vector<int>& idx) const;
  int classes() const { return classes_; }

 private:
  struct Net;
  int in_dim_, classes_;
  Config cfg_;
  std::uint64_t seed_;
  std::unique_ptr<Net> net_;
};

// Deterministic 80/20 split of [0, n) by seeded shuffle.
std::pair<std::vector<int>, std::vector<int>> split_train_heldout(
    int n, std::uint64_t seed);

}  // namespace psdn
