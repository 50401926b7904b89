#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "psdn/nn.hpp"

namespace psdn {

// Adam with standard bias correction. Parameters without a gradient entry
// are treated as zero-gradient (their moments still decay).
template <class S>
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ad::ParamStore<S>& store,
            const std::unordered_map<const ad::Parameter<S>*, ad::Mat<S>>& grads) {
    ensure_state(store);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    const S b1 = static_cast<S>(beta1_), b2 = static_cast<S>(beta2_);
    const S one_m_b1 = static_cast<S>(1.0 - beta1_);
    const S one_m_b2 = static_cast<S>(1.0 - beta2_);
    const S alpha = static_cast<S>(lr_ / bc1);
    const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
    const S eps = static_cast<S>(eps_);

    for (const auto& p : store.all()) {
      if (!p->trainable) continue;
      ad::Mat<S>& m = m_[p->index];
      ad::Mat<S>& v = v_[p->index];
      const auto it = grads.find(p.get());
      if (it != grads.end()) {
        const ad::Mat<S>& g = it->second;
        m = b1 * m + one_m_b1 * g;
        v = (b2 * v.array() + one_m_b2 * g.array().square()).matrix();
      } else {
        m *= b1;
        v *= b2;
      }
      p->value.array() -=
          alpha * m.array() /
          (v.array().sqrt() * inv_sqrt_bc2 + eps);
    }
  }

  std::int64_t step_count() const { return t_; }
  const ad::Mat<S>& moment1(int index) const { return m_[index]; }
  const ad::Mat<S>& moment2(int index) const { return v_[index]; }

  void restore(std::int64_t t, std::vector<ad::Mat<S>> m,
               std::vector<ad::Mat<S>> v) {
    t_ = t;
    m_ = std::move(m);
    v_ = std::move(v);
  }

  void ensure_state(const ad::ParamStore<S>& store) {
    if (m_.size() == store.all().size()) return;
    m_.resize(store.all().size());
    v_.resize(store.all().size());
    for (const auto& p : store.all()) {
      if (m_[p->index].size() == 0) {
        m_[p->index] = ad::Mat<S>::Zero(p->value.rows(), p->value.cols());
        v_[p->index] = ad::Mat<S>::Zero(p->value.rows(), p->value.cols());
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<ad::Mat<S>> m_, v_;
};

}  // namespace psdn
