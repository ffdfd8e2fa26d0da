#include "distalign/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace distalign {

AdamW::AdamW(long parameter_count, AdamWConfig config)
    : config_(config),
      first_moment_(Eigen::VectorXd::Zero(parameter_count)),
      second_moment_(Eigen::VectorXd::Zero(parameter_count)) {}

void AdamW::step(ParamView params, const ParamView& grads) {
  if (params.size() != first_moment_.size() || grads.size() != first_moment_.size()) {
    throw std::invalid_argument("optimizer state does not match parameter count");
  }
  for (long i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads.get(i))) {
      throw std::runtime_error("non-finite gradient at parameter " + std::to_string(i) +
                               "; optimizer step aborted");
    }
  }
  ++step_;
  const double bias1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bias2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (long i = 0; i < params.size(); ++i) {
    const double g = grads.get(i);
    first_moment_(i) = config_.beta1 * first_moment_(i) + (1.0 - config_.beta1) * g;
    second_moment_(i) = config_.beta2 * second_moment_(i) + (1.0 - config_.beta2) * g * g;
    const double m_hat = first_moment_(i) / bias1;
    const double v_hat = second_moment_(i) / bias2;
    const double current = params.get(i);
    // Decoupled decay: the regulariser never passes through the moments.
    params.set(i, current - config_.learning_rate *
                                (m_hat / (std::sqrt(v_hat) + config_.epsilon) +
                                 config_.weight_decay * current));
  }
}

}  // namespace distalign
