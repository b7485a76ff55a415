#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "scriptseq/autodiff.hpp"
#include "scriptseq/verbalizer.hpp"

namespace scriptseq {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_heads = 4;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int d_ffn = 128;
  int max_len = 160;
  double dropout = 0.1;
  std::uint64_t seed = 0;
  // Width of the optional linear classifier head; 0 means no head.
  int classifier_classes = 0;

  void validate() const;  // throws ConfigError
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
using Mat = ad::Matrix<T>;

template <typename T>
struct NamedTensor {
  std::string name;
  Mat<T> value;
};

template <typename T>
using Gradients = std::vector<Mat<T>>;

template <typename T>
struct ModelParams {
  std::vector<NamedTensor<T>> tensors;

  std::size_t size() const { return tensors.size(); }
  std::size_t scalar_count() const;
  std::size_t index_of(const std::string& name) const;  // throws std::out_of_range
  Mat<T>& at(const std::string& name) { return tensors[index_of(name)].value; }
  const Mat<T>& at(const std::string& name) const { return tensors[index_of(name)].value; }
  Gradients<T> zeros_like() const;
  bool all_finite() const;
};

// Canonical tensor names and shapes for a configuration, in storage order.
struct TensorSpec {
  std::string name;
  int rows;
  int cols;
  bool is_bias;
};
std::vector<TensorSpec> tensor_layout(const ModelConfig& config);

// Weights ~ N(0, 0.02^2), biases 0, layer-norm gains 1.
template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng);

// Anything that yields teacher-forced log-probabilities of a target given a
// source. Entry n of the result is log P(target[n+1] | source, target[0..n]),
// so a target of N tokens yields N - 1 values; the leading <s> is never
// scored.
class SequenceScorer {
 public:
  virtual ~SequenceScorer() = default;
  virtual std::vector<double> target_logprobs(const TokenIds& source,
                                              const TokenIds& target) const = 0;
  // Scores several targets against one source.
  virtual std::vector<std::vector<double>> target_logprobs_batch(
      const TokenIds& source, std::span<const TokenIds> targets) const;
};

template <typename T>
class Transformer;

// One forward graph over a model. Parameters are bound lazily as tape leaves;
// with `grads` set, backward() accumulates into it.
template <typename T>
class ForwardPass {
 public:
  ForwardPass(const Transformer<T>& model, Gradients<T>* grads,
              const ad::DropoutContext* dropout = nullptr);

  ad::Tape<T>& tape() { return tape_; }

  // Final encoder states, L x d.
  ad::Var encode(const TokenIds& source);
  // Log-probabilities (N - 1) x V for target positions 1..N-1.
  ad::Var decode_logprobs(ad::Var memory, const TokenIds& target);
  // (N - 1) x 1 column of the target tokens' log-probabilities.
  ad::Var target_logprobs(ad::Var memory, const TokenIds& target);
  // 1 x classes logits from the encoder state at <s>.
  ad::Var classifier_logits(ad::Var memory);

 private:
  ad::Var param(std::size_t index);
  ad::Var embed(const TokenIds& ids);
  ad::Var norm(ad::Var x, std::size_t gain);
  ad::Var attend(ad::Var query_in, ad::Var kv_in, std::size_t base, bool causal);
  ad::Var feed_forward(ad::Var x, std::size_t base);

  const Transformer<T>& model_;
  Gradients<T>* grads_;
  const ad::DropoutContext* dropout_;
  ad::Tape<T> tape_;
  std::vector<ad::Var> bound_;
};

template <typename T>
class Transformer : public SequenceScorer {
 public:
  Transformer(ModelConfig config, ModelParams<T> params);
  // Fresh parameters drawn from config.seed.
  static Transformer initialize(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& params() { return params_; }
  bool has_classifier() const { return config_.classifier_classes > 0; }

  // Row n holds log P(. | source, target[0..n]) for n in 0..N-2.
  Mat<T> forward_logprobs(const TokenIds& source, const TokenIds& target) const;
  std::vector<double> target_logprobs(const TokenIds& source,
                                      const TokenIds& target) const override;
  std::vector<std::vector<double>> target_logprobs_batch(
      const TokenIds& source, std::span<const TokenIds> targets) const override;
  std::vector<double> classifier_logits(const TokenIds& source) const;

  void check_lengths(const TokenIds& source, const TokenIds& target) const;

 private:
  friend class ForwardPass<T>;
  ModelConfig config_;
  ModelParams<T> params_;
};

// Entry n is L[n][target[n+1]].
template <typename T>
std::vector<double> gather_target_logprobs(const Mat<T>& logprobs, const TokenIds& target);

// Gradient of a scalar loss built on a fresh ForwardPass. Throws
// NonFiniteLoss when the loss is NaN or infinite.
template <typename T>
using LossBuilder = std::function<ad::Var(ForwardPass<T>&)>;

template <typename T>
Gradients<T> grad(const Transformer<T>& model, const LossBuilder<T>& loss,
                  double* loss_value = nullptr,
                  const ad::DropoutContext* dropout = nullptr);

}  // namespace scriptseq
