#pragma once

#include <Eigen/Dense>

#include "distalign/toymodel.hpp"

namespace distalign {

struct AdamWConfig {
  double learning_rate = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  AdamW(long parameter_count, AdamWConfig config);

  // Applies one update in place. Throws on non-finite gradients without
  // touching the parameters.
  void step(ParamView params, const ParamView& grads);

  long step_count() const { return step_; }

 private:
  AdamWConfig config_;
  Eigen::VectorXd first_moment_;
  Eigen::VectorXd second_moment_;
  long step_ = 0;
};

}  // namespace distalign
