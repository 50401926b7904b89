#include "psdn/probe.hpp"

#include <numeric>

#include "psdn/errors.hpp"
#include "psdn/graph.hpp"
#include "psdn/nn.hpp"
#include "psdn/parallel.hpp"
#include "psdn/rng.hpp"

namespace psdn {

struct SeqClassifier::Net {
  ad::ParamStore<float> store;
  ad::Conv1d<float> conv1, conv2;
  ad::Linear<float> head;

  ad::Graph<float>::Var forward(ad::Graph<float>& g,
                                ad::Graph<float>::Var x) const {
    x = g.relu(conv1.forward(g, x));
    x = g.relu(conv2.forward(g, x));
    return head.forward(g, g.row_mean(x));
  }
};

SeqClassifier::SeqClassifier(int in_dim, int classes, Config cfg,
                             std::uint64_t seed)
    : in_dim_(in_dim), classes_(classes), cfg_(cfg), seed_(seed),
      net_(std::make_unique<Net>()) {
  if (classes < 2) throw UsageError("classifier needs >= 2 classes");
  Rng rng(derive_seed(seed, "probe_init"));
  const int pad = (cfg.kernel - 1) / 2;
  net_->conv1 = ad::Conv1d<float>::create(net_->store, "conv1", in_dim,
                                          cfg.channels, cfg.kernel, 1, pad,
                                          rng);
  net_->conv2 = ad::Conv1d<float>::create(net_->store, "conv2", cfg.channels,
                                          cfg.channels, cfg.kernel, 1, pad,
                                          rng);
  net_->head =
      ad::Linear<float>::create(net_->store, "head", cfg.channels, classes, rng);
}

SeqClassifier::SeqClassifier(SeqClassifier&&) noexcept = default;
SeqClassifier::~SeqClassifier() = default;

void SeqClassifier::fit(const std::vector<const MatF*>& feats,
                        const std::vector<int>& labels,
                        const std::vector<int>& train_idx, int workers) {
  if (feats.size() != labels.size())
    throw DataError("probe: feature/label count mismatch");
  if (train_idx.empty()) throw DataError("probe: empty training set");

  Adam<float> adam(cfg_.lr);
  std::vector<int> order = train_idx;
  std::size_t cursor = order.size();  // trigger shuffle on first use
  std::uint64_t epoch = 0;

  struct ItemResult {
    std::unordered_map<const ad::Parameter<float>*, MatF> grads;
  };

  for (int s = 0; s < cfg_.steps; ++s) {
    const int b = std::min<int>(cfg_.batch_size,
                                static_cast<int>(order.size()));
    std::vector<int> batch(b);
    for (int i = 0; i < b; ++i) {
      if (cursor >= order.size()) {
        Rng rng(derive_seed(seed_, "probe_epoch", epoch++));
        for (std::size_t k = order.size(); k > 1; --k)
          std::swap(order[k - 1],
                    order[rng.uniform_int(0, static_cast<std::int64_t>(k) - 1)]);
        cursor = 0;
      }
      batch[i] = order[cursor++];
    }

    std::vector<ItemResult> results(b);
    parallel_for(b, workers, [&](int slot) {
      ad::Graph<float> g(true);
      auto logits = net_->forward(g, g.input(*feats[batch[slot]]));
      auto loss = g.scale(
          g.cross_entropy_logits(logits, labels[batch[slot]]), 1.0 / b);
      g.backward(loss);
      results[slot].grads = g.take_param_grads();
    });

    std::unordered_map<const ad::Parameter<float>*, MatF> merged;
    for (int slot = 0; slot < b; ++slot) {
      for (const auto& p : net_->store.all()) {
        auto it = results[slot].grads.find(p.get());
        if (it == results[slot].grads.end()) continue;
        auto [mit, fresh] = merged.try_emplace(p.get());
        if (fresh)
          mit->second = std::move(it->second);
        else
          mit->second += it->second;
      }
    }
    adam.step(net_->store, merged);
  }
}

int SeqClassifier::predict(const MatF& feat) const {
  ad::Graph<float> g(false);
  auto logits = net_->forward(g, g.input(feat));
  const MatF& l = g.value(logits);
  int best = 0;
  for (int c = 1; c < classes_; ++c)
    if (l(0, c) > l(0, best)) best = c;
  return best;
}

double SeqClassifier::accuracy(const std::vector<const MatF*>& feats,
                               const std::vector<int>& labels,
                               const std::vector<int>& idx) const {
  if (idx.empty()) throw DataError("probe: empty evaluation set");
  std::vector<int> hits(idx.size(), 0);
  parallel_for(static_cast<int>(idx.size()), 0, [&](int i) {
    hits[i] = predict(*feats[idx[i]]) == labels[idx[i]] ? 1 : 0;
  });
  const int sum = std::accumulate(hits.begin(), hits.end(), 0);
  return static_cast<double>(sum) / static_cast<double>(idx.size());
}

std::pair<std::vector<int>, std::vector<int>> split_train_heldout(
    int n, std::uint64_t seed) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t k = order.size(); k > 1; --k)
    std::swap(order[k - 1],
              order[rng.uniform_int(0, static_cast<std::int64_t>(k) - 1)]);
  const int held = std::max(1, n / 5);
  std::vector<int> heldout(order.begin(), order.begin() + held);
  std::vector<int> train(order.begin() + held, order.end());
  return {train, heldout};
}

}  // namespace psdn
