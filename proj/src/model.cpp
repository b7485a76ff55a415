#include "scriptseq/model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "scriptseq/errors.hpp"

namespace scriptseq {
namespace {

// Tensors per layer, in tensor_layout order.
constexpr std::size_t kEncLayerSize = 16;
constexpr std::size_t kDecLayerSize = 26;

// Offsets of the attention block: wq bq wk bk wv bv wo bo.
enum AttnOffset : std::size_t { kWq = 0, kBq, kWk, kBk, kWv, kBv, kWo, kBo };

struct Layout {
  std::size_t tokens = 0;
  std::size_t positions = 1;
  std::size_t enc_base(std::size_t l) const { return 2 + l * kEncLayerSize; }
  std::size_t enc_final;
  std::size_t dec_base(std::size_t l) const { return dec_start + l * kDecLayerSize; }
  std::size_t dec_start;
  std::size_t dec_final;
  std::size_t head;
};

Layout layout_of(const ModelConfig& c) {
  Layout l;
  l.enc_final = 2 + static_cast<std::size_t>(c.n_enc_layers) * kEncLayerSize;
  l.dec_start = l.enc_final + 2;
  l.dec_final = l.dec_start + static_cast<std::size_t>(c.n_dec_layers) * kDecLayerSize;
  l.head = l.dec_final + 2;
  return l;
}

void add_norm(std::vector<TensorSpec>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".g", 1, d, false});
  out.push_back({prefix + ".b", 1, d, true});
}

void add_attention(std::vector<TensorSpec>& out, const std::string& prefix, int d) {
  for (const char* p : {"q", "k", "v", "o"}) {
    out.push_back({prefix + ".w" + p, d, d, false});
    out.push_back({prefix + ".b" + p, 1, d, true});
  }
}

void add_ffn(std::vector<TensorSpec>& out, const std::string& prefix, int d, int f) {
  out.push_back({prefix + ".w1", d, f, false});
  out.push_back({prefix + ".b1", 1, f, true});
  out.push_back({prefix + ".w2", f, d, false});
  out.push_back({prefix + ".b2", 1, d, true});
}

}  // namespace

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  need(vocab_size > special::kCount, "vocab_size must exceed the special tokens");
  need(d_model > 0 && n_heads > 0, "d_model and n_heads must be positive");
  need(d_model % n_heads == 0, "d_model (" + std::to_string(d_model) +
                                   ") must be divisible by n_heads (" +
                                   std::to_string(n_heads) + ")");
  need(n_enc_layers >= 0 && n_dec_layers >= 0, "layer counts must be nonnegative");
  need(d_ffn > 0, "d_ffn must be positive");
  need(max_len >= 2, "max_len must be at least 2");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  need(classifier_classes >= 0, "classifier_classes must be nonnegative");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size},     {"d_model", d_model},
          {"n_heads", n_heads},           {"n_enc_layers", n_enc_layers},
          {"n_dec_layers", n_dec_layers}, {"d_ffn", d_ffn},
          {"max_len", max_len},           {"dropout", dropout},
          {"seed", seed},                 {"classifier_classes", classifier_classes}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<int>();
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
  c.n_dec_layers = j.value("n_dec_layers", c.n_dec_layers);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  c.max_len = j.value("max_len", c.max_len);
  c.dropout = j.value("dropout", c.dropout);
  c.seed = j.value("seed", c.seed);
  c.classifier_classes = j.value("classifier_classes", c.classifier_classes);
  return c;
}

std::vector<TensorSpec> tensor_layout(const ModelConfig& c) {
  std::vector<TensorSpec> out;
  const int d = c.d_model;
  out.push_back({"embed.tokens", c.vocab_size, d, false});
  out.push_back({"embed.positions", c.max_len, d, false});
  for (int l = 0; l < c.n_enc_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    add_norm(out, p + ".self_ln", d);
    add_attention(out, p + ".self", d);
    add_norm(out, p + ".ffn_ln", d);
    add_ffn(out, p + ".ffn", d, c.d_ffn);
  }
  add_norm(out, "enc.ln_f", d);
  for (int l = 0; l < c.n_dec_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    add_norm(out, p + ".self_ln", d);
    add_attention(out, p + ".self", d);
    add_norm(out, p + ".cross_ln", d);
    add_attention(out, p + ".cross", d);
    add_norm(out, p + ".ffn_ln", d);
    add_ffn(out, p + ".ffn", d, c.d_ffn);
  }
  add_norm(out, "dec.ln_f", d);
  if (c.classifier_classes > 0) {
    out.push_back({"head.w", d, c.classifier_classes, false});
    out.push_back({"head.b", 1, c.classifier_classes, true});
  }
  return out;
}

template <typename T>
std::size_t ModelParams<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += static_cast<std::size_t>(t.value.size());
  return n;
}

template <typename T>
std::size_t ModelParams<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < tensors.size(); ++i)
    if (tensors[i].name == name) return i;
  throw std::out_of_range("no parameter tensor named '" + name + "'");
}

template <typename T>
Gradients<T> ModelParams<T>::zeros_like() const {
  Gradients<T> g;
  g.reserve(tensors.size());
  for (const auto& t : tensors) g.push_back(Mat<T>::Zero(t.value.rows(), t.value.cols()));
  return g;
}

template <typename T>
bool ModelParams<T>::all_finite() const {
  for (const auto& t : tensors)
    if (!t.value.allFinite()) return false;
  return true;
}

template <typename T>
ModelParams<T> init_params(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelParams<T> p;
  for (const auto& spec : tensor_layout(config)) {
    Mat<T> m(spec.rows, spec.cols);
    const bool gain = spec.name.ends_with("_ln.g") || spec.name.ends_with("ln_f.g");
    if (spec.is_bias) {
      m.setZero();
    } else if (gain) {
      m.setOnes();
    } else {
      for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = static_cast<T>(0.02 * standard_normal(rng));
    }
    p.tensors.push_back({spec.name, std::move(m)});
  }
  return p;
}

std::vector<std::vector<double>> SequenceScorer::target_logprobs_batch(
    const TokenIds& source, std::span<const TokenIds> targets) const {
  std::vector<std::vector<double>> out;
  out.reserve(targets.size());
  for (const auto& t : targets) out.push_back(target_logprobs(source, t));
  return out;
}

// ---------------------------------------------------------------------------
// ForwardPass

template <typename T>
ForwardPass<T>::ForwardPass(const Transformer<T>& model, Gradients<T>* grads,
                            const ad::DropoutContext* dropout)
    : model_(model), grads_(grads), dropout_(dropout), bound_(model.params_.size()) {
  tape_.set_grad_enabled(grads != nullptr);
}

template <typename T>
ad::Var ForwardPass<T>::param(std::size_t index) {
  if (!bound_[index].valid())
    bound_[index] = tape_.leaf(model_.params_.tensors[index].value,
                               grads_ ? &(*grads_)[index] : nullptr);
  return bound_[index];
}

template <typename T>
ad::Var ForwardPass<T>::embed(const TokenIds& ids) {
  const Layout lay = layout_of(model_.config_);
  std::vector<int> tok(ids.begin(), ids.end());
  std::vector<int> pos(ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  ad::Var x = ad::add(tape_, ad::embedding(tape_, param(lay.tokens), std::move(tok)),
                      ad::embedding(tape_, param(lay.positions), std::move(pos)));
  return ad::dropout(tape_, x, dropout_);
}

template <typename T>
ad::Var ForwardPass<T>::norm(ad::Var x, std::size_t gain) {
  return ad::layer_norm(tape_, x, param(gain), param(gain + 1));
}

template <typename T>
ad::Var ForwardPass<T>::attend(ad::Var query_in, ad::Var kv_in, std::size_t base,
                               bool causal) {
  ad::Var q = ad::linear(tape_, query_in, param(base + kWq), param(base + kBq));
  ad::Var k = ad::linear(tape_, kv_in, param(base + kWk), param(base + kBk));
  ad::Var v = ad::linear(tape_, kv_in, param(base + kWv), param(base + kBv));
  ad::Var a = ad::attention(tape_, q, k, v, model_.config_.n_heads, causal);
  return ad::linear(tape_, a, param(base + kWo), param(base + kBo));
}

template <typename T>
ad::Var ForwardPass<T>::feed_forward(ad::Var x, std::size_t base) {
  ad::Var h = ad::gelu(tape_, ad::linear(tape_, x, param(base), param(base + 1)));
  return ad::linear(tape_, h, param(base + 2), param(base + 3));
}

template <typename T>
ad::Var ForwardPass<T>::encode(const TokenIds& source) {
  const auto& c = model_.config_;
  if (source.empty()) throw DataError("empty source sequence");
  if (static_cast<int>(source.size()) > c.max_len)
    throw SequenceTooLong("source of " + std::to_string(source.size()) +
                          " tokens exceeds max_len " + std::to_string(c.max_len));
  const Layout lay = layout_of(c);
  ad::Var x = embed(source);
  for (int l = 0; l < c.n_enc_layers; ++l) {
    const std::size_t b = lay.enc_base(static_cast<std::size_t>(l));
    ad::Var h = norm(x, b);
    x = ad::add(tape_, x, ad::dropout(tape_, attend(h, h, b + 2, false), dropout_));
    h = norm(x, b + 10);
    x = ad::add(tape_, x, ad::dropout(tape_, feed_forward(h, b + 12), dropout_));
  }
  return norm(x, lay.enc_final);
}

template <typename T>
ad::Var ForwardPass<T>::decode_logprobs(ad::Var memory, const TokenIds& target) {
  const auto& c = model_.config_;
  if (static_cast<int>(target.size()) > c.max_len)
    throw SequenceTooLong("target of " + std::to_string(target.size()) +
                          " tokens exceeds max_len " + std::to_string(c.max_len));
  if (target.size() < 2) return tape_.constant(Mat<T>(0, c.vocab_size));
  const Layout lay = layout_of(c);
  const TokenIds inputs(target.begin(), target.end() - 1);
  ad::Var y = embed(inputs);
  for (int l = 0; l < c.n_dec_layers; ++l) {
    const std::size_t b = lay.dec_base(static_cast<std::size_t>(l));
    ad::Var h = norm(y, b);
    y = ad::add(tape_, y, ad::dropout(tape_, attend(h, h, b + 2, true), dropout_));
    h = norm(y, b + 10);
    y = ad::add(tape_, y, ad::dropout(tape_, attend(h, memory, b + 12, false), dropout_));
    h = norm(y, b + 20);
    y = ad::add(tape_, y, ad::dropout(tape_, feed_forward(h, b + 22), dropout_));
  }
  y = norm(y, lay.dec_final);
  return ad::log_softmax(tape_, ad::matmul_nt(tape_, y, param(lay.tokens)));
}

template <typename T>
ad::Var ForwardPass<T>::target_logprobs(ad::Var memory, const TokenIds& target) {
  ad::Var lp = decode_logprobs(memory, target);
  std::vector<int> next(target.begin() + (target.empty() ? 0 : 1), target.end());
  return ad::pick(tape_, lp, std::move(next));
}

template <typename T>
ad::Var ForwardPass<T>::classifier_logits(ad::Var memory) {
  if (!model_.has_classifier()) throw HeadMissing();
  const Layout lay = layout_of(model_.config_);
  return ad::linear(tape_, ad::row(tape_, memory, 0), param(lay.head), param(lay.head + 1));
}

// ---------------------------------------------------------------------------
// Transformer

template <typename T>
Transformer<T>::Transformer(ModelConfig config, ModelParams<T> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto layout = tensor_layout(config_);
  if (layout.size() != params_.size())
    throw ConfigError("parameter count " + std::to_string(params_.size()) +
                      " does not match configuration (" + std::to_string(layout.size()) +
                      ")");
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& t = params_.tensors[i];
    if (t.name != layout[i].name || t.value.rows() != layout[i].rows ||
        t.value.cols() != layout[i].cols)
      throw ConfigError("parameter '" + t.name + "' does not match expected '" +
                        layout[i].name + "' " + std::to_string(layout[i].rows) + "x" +
                        std::to_string(layout[i].cols));
  }
}

template <typename T>
Transformer<T> Transformer<T>::initialize(const ModelConfig& config) {
  Rng rng(config.seed);
  return Transformer(config, init_params<T>(config, rng));
}

template <typename T>
void Transformer<T>::check_lengths(const TokenIds& source, const TokenIds& target) const {
  if (static_cast<int>(source.size()) > config_.max_len ||
      static_cast<int>(target.size()) > config_.max_len)
    throw SequenceTooLong("sequence exceeds max_len " + std::to_string(config_.max_len));
  if (!target.empty() && target.front() != special::kBos)
    throw DataError("target must begin with <s>");
}

template <typename T>
Mat<T> Transformer<T>::forward_logprobs(const TokenIds& source, const TokenIds& target) const {
  check_lengths(source, target);
  ForwardPass<T> fp(*this, nullptr);
  ad::Var memory = fp.encode(source);
  return fp.tape().value(fp.decode_logprobs(memory, target));
}

template <typename T>
std::vector<double> Transformer<T>::target_logprobs(const TokenIds& source,
                                                    const TokenIds& target) const {
  check_lengths(source, target);
  ForwardPass<T> fp(*this, nullptr);
  ad::Var memory = fp.encode(source);
  const Mat<T>& col = fp.tape().value(fp.target_logprobs(memory, target));
  return std::vector<double>(col.data(), col.data() + col.size());
}

template <typename T>
std::vector<std::vector<double>> Transformer<T>::target_logprobs_batch(
    const TokenIds& source, std::span<const TokenIds> targets) const {
  for (const auto& t : targets) check_lengths(source, t);
  ForwardPass<T> fp(*this, nullptr);
  ad::Var memory = fp.encode(source);
  std::vector<std::vector<double>> out;
  out.reserve(targets.size());
  for (const auto& t : targets) {
    const Mat<T>& col = fp.tape().value(fp.target_logprobs(memory, t));
    out.emplace_back(col.data(), col.data() + col.size());
  }
  return out;
}

template <typename T>
std::vector<double> Transformer<T>::classifier_logits(const TokenIds& source) const {
  if (!has_classifier()) throw HeadMissing();
  ForwardPass<T> fp(*this, nullptr);
  const Mat<T>& logits = fp.tape().value(fp.classifier_logits(fp.encode(source)));
  return std::vector<double>(logits.data(), logits.data() + logits.size());
}

template <typename T>
std::vector<double> gather_target_logprobs(const Mat<T>& logprobs, const TokenIds& target) {
  std::vector<double> out;
  if (target.size() < 2) return out;
  if (logprobs.rows() != static_cast<Eigen::Index>(target.size() - 1))
    throw DataError("log-probability rows do not match the target length");
  out.reserve(target.size() - 1);
  for (std::size_t n = 0; n + 1 < target.size(); ++n)
    out.push_back(static_cast<double>(logprobs(static_cast<Eigen::Index>(n), target[n + 1])));
  return out;
}

template <typename T>
Gradients<T> grad(const Transformer<T>& model, const LossBuilder<T>& loss,
                  double* loss_value, const ad::DropoutContext* dropout) {
  Gradients<T> g = model.params().zeros_like();
  ForwardPass<T> fp(model, &g, dropout);
  ad::Var l = loss(fp);
  const double value = static_cast<double>(fp.tape().value(l)(0, 0));
  if (!std::isfinite(value)) throw NonFiniteLoss("loss evaluated to " + std::to_string(value));
  if (loss_value) *loss_value = value;
  if (fp.tape().requires_grad(l)) fp.tape().backward(l);
  return g;
}

#define SCRIPTSEQ_INSTANTIATE(T)                                                         \
  template struct ModelParams<T>;                                                        \
  template ModelParams<T> init_params<T>(const ModelConfig&, Rng&);                      \
  template class ForwardPass<T>;                                                         \
  template class Transformer<T>;                                                         \
  template std::vector<double> gather_target_logprobs<T>(const Mat<T>&, const TokenIds&); \
  template Gradients<T> grad<T>(const Transformer<T>&, const LossBuilder<T>&, double*,    \
                                const ad::DropoutContext*);

SCRIPTSEQ_INSTANTIATE(float)
SCRIPTSEQ_INSTANTIATE(double)

#undef SCRIPTSEQ_INSTANTIATE

}  // namespace scriptseq
