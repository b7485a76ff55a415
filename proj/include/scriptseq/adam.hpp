#pragma once

#include <cstdint>

#include "json.hpp"
#include "scriptseq/model.hpp"

namespace scriptseq {

enum class DecayMode {
  kDecoupled,  // params *= 1 - lr * wd before the Adam update
  kL2,         // grad += wd * params
};

struct AdamConfig {
  double learning_rate = 1e-5;
  double weight_decay = 1e-6;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  DecayMode decay = DecayMode::kDecoupled;

  void validate() const;
  nlohmann::json to_json() const;
};

template <typename T>
struct AdamState {
  std::vector<Mat<T>> m;
  std::vector<Mat<T>> v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ModelParams<T>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

// One bias-corrected Adam update in place. Throws NonFiniteGradient before
// touching anything if a gradient entry is NaN or infinite.
template <typename T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const AdamConfig& config);

}  // namespace scriptseq
