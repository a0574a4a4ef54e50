#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cvlnm/tensor.hpp"

namespace cvlnm {

struct AdamConfig {
  Scalar lr = 5e-4;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar eps = 1e-8;
};

/// Adam with bias-corrected moments. Throws NumericsError naming the
/// offending parameter if a gradient is non-finite; no parameter is touched
/// in that case.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, Tensor>> params, AdamConfig config = {});

  void step();
  void zero_grad();

  Scalar lr() const { return config_.lr; }
  void set_lr(Scalar lr) { config_.lr = lr; }
  std::int64_t steps_taken() const { return t_; }

  struct State {
    std::int64_t t = 0;
    std::vector<std::vector<Scalar>> m;
    std::vector<std::vector<Scalar>> v;
  };
  State state() const;
  void restore(const State& state);

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<Scalar>> m_;
  std::vector<std::vector<Scalar>> v_;
  std::int64_t t_ = 0;
  AdamConfig config_;
};

}  // namespace cvlnm
