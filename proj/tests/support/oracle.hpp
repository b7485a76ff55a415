#pragma once

// Test-only references: a loop-based re-implementation of the network, a
// central-difference gradient checker and small fixtures.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "scriptseq/corpus.hpp"
#include "scriptseq/events.hpp"
#include "scriptseq/model.hpp"
#include "scriptseq/verbalizer.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Grid = std::vector<Vec>;

class NaiveTransformer {
 public:
  NaiveTransformer(const scriptseq::ModelConfig& c, const scriptseq::ModelParams<double>& p)
      : c_(c), p_(p) {}

  // log P(target[n+1] | source, target[0..n]) for n = 0..N-2.
  Vec target_logprobs(const scriptseq::TokenIds& source,
                      const scriptseq::TokenIds& target) const {
    const Grid memory = encode(source);
    Grid y = embed(scriptseq::TokenIds(target.begin(), target.end() - 1));
    for (int l = 0; l < c_.n_dec_layers; ++l) {
      const std::string p = "dec." + std::to_string(l);
      add_into(y, attention(norm(y, p + ".self_ln"), norm(y, p + ".self_ln"), p + ".self", true));
      add_into(y, attention(norm(y, p + ".cross_ln"), memory, p + ".cross", false));
      add_into(y, ffn(norm(y, p + ".ffn_ln"), p + ".ffn"));
    }
    y = norm(y, "dec.ln_f");
    const auto& emb = p_.at("embed.tokens");
    Vec out;
    for (std::size_t n = 0; n < y.size(); ++n) {
      Vec logits(static_cast<std::size_t>(c_.vocab_size), 0.0);
      for (int v = 0; v < c_.vocab_size; ++v)
        for (int k = 0; k < c_.d_model; ++k) logits[v] += y[n][k] * emb(v, k);
      double mx = logits[0];
      for (double z : logits) mx = std::max(mx, z);
      double s = 0.0;
      for (double z : logits) s += std::exp(z - mx);
      out.push_back(logits[target[n + 1]] - mx - std::log(s));
    }
    return out;
  }

  Grid encode(const scriptseq::TokenIds& source) const {
    Grid x = embed(source);
    for (int l = 0; l < c_.n_enc_layers; ++l) {
      const std::string p = "enc." + std::to_string(l);
      add_into(x, attention(norm(x, p + ".self_ln"), norm(x, p + ".self_ln"), p + ".self",
                            false));
      add_into(x, ffn(norm(x, p + ".ffn_ln"), p + ".ffn"));
    }
    return norm(x, "enc.ln_f");
  }

 private:
  Grid embed(const scriptseq::TokenIds& ids) const {
    const auto& tok = p_.at("embed.tokens");
    const auto& pos = p_.at("embed.positions");
    Grid x(ids.size(), Vec(static_cast<std::size_t>(c_.d_model)));
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (int k = 0; k < c_.d_model; ++k) x[i][k] = tok(ids[i], k) + pos(i, k);
    return x;
  }

  static void add_into(Grid& a, const Grid& b) {
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t k = 0; k < a[i].size(); ++k) a[i][k] += b[i][k];
  }

  Grid norm(const Grid& x, const std::string& name) const {
    const auto& g = p_.at(name + ".g");
    const auto& b = p_.at(name + ".b");
    Grid out = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
      double mean = 0.0;
      for (double v : x[i]) mean += v;
      mean /= static_cast<double>(x[i].size());
      double var = 0.0;
      for (double v : x[i]) var += (v - mean) * (v - mean);
      var /= static_cast<double>(x[i].size());
      for (std::size_t k = 0; k < x[i].size(); ++k)
        out[i][k] = (x[i][k] - mean) / std::sqrt(var + 1e-5) * g(0, k) + b(0, k);
    }
    return out;
  }

  Grid affine(const Grid& x, const std::string& w, const std::string& b) const {
    const auto& W = p_.at(w);
    const auto& B = p_.at(b);
    Grid out(x.size(), Vec(static_cast<std::size_t>(W.cols()), 0.0));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (int j = 0; j < W.cols(); ++j) {
        double s = B(0, j);
        for (int k = 0; k < W.rows(); ++k) s += x[i][k] * W(k, j);
        out[i][j] = s;
      }
    return out;
  }

  Grid attention(const Grid& xq, const Grid& xkv, const std::string& p, bool causal) const {
    const Grid q = affine(xq, p + ".wq", p + ".bq");
    const Grid k = affine(xkv, p + ".wk", p + ".bk");
    const Grid v = affine(xkv, p + ".wv", p + ".bv");
    const int dh = c_.d_model / c_.n_heads;
    Grid out(xq.size(), Vec(static_cast<std::size_t>(c_.d_model), 0.0));
    for (int h = 0; h < c_.n_heads; ++h) {
      for (std::size_t i = 0; i < q.size(); ++i) {
        const std::size_t visible = causal ? std::min(i + 1, k.size()) : k.size();
        Vec w(visible);
        double mx = -1e300;
        for (std::size_t j = 0; j < visible; ++j) {
          double s = 0.0;
          for (int d = 0; d < dh; ++d) s += q[i][h * dh + d] * k[j][h * dh + d];
          w[j] = s / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (double& x : w) z += x = std::exp(x - mx);
        for (std::size_t j = 0; j < visible; ++j)
          for (int d = 0; d < dh; ++d) out[i][h * dh + d] += w[j] / z * v[j][h * dh + d];
      }
    }
    return affine(out, p + ".wo", p + ".bo");
  }

  Grid ffn(const Grid& x, const std::string& p) const {
    Grid h = affine(x, p + ".w1", p + ".b1");
    for (auto& row : h)
      for (double& a : row)
        a = 0.5 * a * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (a + 0.044715 * a * a * a)));
    return affine(h, p + ".w2", p + ".b2");
  }

  scriptseq::ModelConfig c_;
  const scriptseq::ModelParams<double>& p_;
};

// Worst relative error between analytic gradients and central differences
// over up to `per_tensor` coordinates of each tensor. The relative error of a
// coordinate is |a - n| / max(|a| + |n|, floor).
struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

inline GradCheck check_gradients(
    scriptseq::ModelParams<double>& params, const scriptseq::Gradients<double>& analytic,
    const std::function<double()>& loss, std::size_t per_tensor, scriptseq::Rng& rng,
    double h = 1e-4, double floor = 1e-6) {
  GradCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto& w = params.tensors[t].value;
    const auto n = static_cast<std::size_t>(w.size());
    for (std::size_t s = 0; s < std::min(n, per_tensor); ++s) {
      const std::size_t idx = n <= per_tensor ? s : scriptseq::uniform_index(rng, n);
      const double orig = w.data()[idx];
      w.data()[idx] = orig + h;
      const double up = loss();
      w.data()[idx] = orig - h;
      const double down = loss();
      w.data()[idx] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t].data()[idx];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
      ++out.checked;
      if (rel > out.max_rel_err) {
        out.max_rel_err = rel;
        out.worst = params.tensors[t].name + "[" + std::to_string(idx) + "] analytic=" +
                    std::to_string(a) + " numeric=" + std::to_string(numeric);
      }
    }
  }
  return out;
}

// Central differences of f: R^n -> R.
inline Vec numeric_gradient(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-6) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

// All-zero parameters: every next-token distribution is uniform over V.
template <typename T>
scriptseq::Transformer<T> uniform_model(int vocab_size, int d_model = 8) {
  scriptseq::ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = d_model;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ffn = 16;
  c.max_len = 64;
  c.dropout = 0.0;
  auto m = scriptseq::Transformer<T>::initialize(c);
  for (auto& t : m.params().tensors) t.value.setZero();
  return m;
}

inline scriptseq::ModelConfig tiny_config(int vocab_size, std::uint64_t seed = 1) {
  scriptseq::ModelConfig c;
  c.vocab_size = vocab_size;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_ffn = 16;
  c.max_len = 96;
  c.dropout = 0.0;
  c.seed = seed;
  return c;
}

// Fills layer-norm gains and biases with random values too, so that gradient
// checks exercise every parameter path.
template <typename T>
void perturb_all(scriptseq::ModelParams<T>& params, std::uint64_t seed, double scale = 0.3) {
  scriptseq::Rng rng(seed);
  for (auto& t : params.tensors)
    for (Eigen::Index i = 0; i < t.value.size(); ++i)
      t.value.data()[i] += static_cast<T>(scale * scriptseq::standard_normal(rng));
}

inline std::string grammar_path() { return std::string(SCRIPTSEQ_SOURCE_DIR) + "/grammars/deterministic.json"; }

}  // namespace oracle
