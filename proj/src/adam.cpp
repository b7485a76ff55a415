#include "scriptseq/adam.hpp"

#include <cmath>

#include "scriptseq/errors.hpp"

namespace scriptseq {

void AdamConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
}

nlohmann::json AdamConfig::to_json() const {
  return {{"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"decay", decay == DecayMode::kDecoupled ? "decoupled" : "l2"}};
}

template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const AdamConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size())
    throw ConfigError("Adam: parameter, gradient and state shapes disagree");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].rows() != params.tensors[i].value.rows() ||
        grads[i].cols() != params.tensors[i].value.cols())
      throw ConfigError("Adam: gradient shape mismatch for '" + params.tensors[i].name + "'");
    if (!grads[i].allFinite())
      throw NonFiniteGradient("non-finite gradient in '" + params.tensors[i].name + "'");
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const T lr = static_cast<T>(config.learning_rate);
  const T wd = static_cast<T>(config.weight_decay);
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  const T eps = static_cast<T>(config.eps);
  const T correction1 = static_cast<T>(1.0 - std::pow(config.beta1, t));
  const T correction2 = static_cast<T>(1.0 - std::pow(config.beta2, t));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.tensors[i].value;
    auto& m = state.m[i];
    auto& v = state.v[i];
    Mat<T> g = grads[i];
    if (config.decay == DecayMode::kL2) {
      g += wd * p;
    } else {
      p *= T(1) - lr * wd;
    }
    m = b1 * m + (T(1) - b1) * g;
    v = b2 * v + (T(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (m.array() / correction1) /
                 ((v.array() / correction2).sqrt() + eps);
  }
}

template void adam_step<float>(ModelParams<float>&, const Gradients<float>&,
                               AdamState<float>&, const AdamConfig&);
template void adam_step<double>(ModelParams<double>&, const Gradients<double>&,
                                AdamState<double>&, const AdamConfig&);

}  // namespace scriptseq
