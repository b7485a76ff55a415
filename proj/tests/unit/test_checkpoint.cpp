#include <cstring>
#include <fstream>

#include "doctest.h"
#include "scriptseq/checkpoint.hpp"
#include "scriptseq/errors.hpp"
#include "support/oracle.hpp"
#include "support/scratch.hpp"

using namespace scriptseq;

namespace {

Checkpoint<float> sample_checkpoint() {
  ModelConfig c = oracle::tiny_config(15, 2);
  c.classifier_classes = 4;
  auto m = Transformer<float>::initialize(c);
  auto state = AdamState<float>::zeros_like(m.params());
  Rng rng(4);
  for (auto* group : {&state.m, &state.v})
    for (auto& t : *group)
      for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(uniform01(rng));
  state.step = 17;
  return {c, m.params(), state, {{"note", "x"}}};
}

bool bit_equal(const Mat<float>& a, const Mat<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
  scratch::Dir dir("ckpt");
  const auto ck = sample_checkpoint();
  save_checkpoint(dir / "a.ckpt", ck);
  const auto back = load_checkpoint<float>(dir / "a.ckpt");
  CHECK(back.config == ck.config);
  CHECK(back.meta == ck.meta);
  REQUIRE(back.params.size() == ck.params.size());
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    CHECK(back.params.tensors[i].name == ck.params.tensors[i].name);
    CHECK(bit_equal(back.params.tensors[i].value, ck.params.tensors[i].value));
  }
  REQUIRE(back.optimizer.has_value());
  CHECK(back.optimizer->step == 17);
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    CHECK(bit_equal(back.optimizer->m[i], ck.optimizer->m[i]));
    CHECK(bit_equal(back.optimizer->v[i], ck.optimizer->v[i]));
  }
  CHECK(serialize_checkpoint(back) == serialize_checkpoint(ck));
}

TEST_CASE("restored model computes the same log-probabilities") {
  const auto ck = sample_checkpoint();
  const auto back = deserialize_checkpoint<float>(serialize_checkpoint(ck));
  const Transformer<float> a(ck.config, ck.params), b(back.config, back.params);
  const TokenIds src = {0, 6, 7, 8, 1}, tgt = {0, 9, 10, 1};
  CHECK(a.forward_logprobs(src, tgt) == b.forward_logprobs(src, tgt));
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto bytes = serialize_checkpoint(sample_checkpoint());
  SUBCASE("every truncation") {
    for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, std::size_t{40},
                            bytes.size() / 2, bytes.size() - 1}) {
      const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(deserialize_checkpoint<float>(part), CorruptCheckpoint);
    }
  }
  SUBCASE("flipped payload byte") {
    auto bad = bytes;
    bad[bad.size() - 20] ^= 0x10;
    CHECK_THROWS_AS(deserialize_checkpoint<float>(bad), CorruptCheckpoint);
  }
  SUBCASE("bad magic") {
    auto bad = bytes;
    bad[0] = 'X';
    try {
      deserialize_checkpoint<float>(bad);
      FAIL("expected CorruptCheckpoint");
    } catch (const CorruptCheckpoint& e) {
      CHECK(e.offset() == 0);
    }
  }
  SUBCASE("wrong element type") { CHECK_THROWS_AS(deserialize_checkpoint<double>(bytes), CorruptCheckpoint); }
}

TEST_CASE("missing checkpoint file") {
  CHECK_THROWS_AS(load_checkpoint<float>("/nonexistent/x.ckpt"), CheckpointError);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64(nullptr, 0) == 0xcbf29ce484222325ULL);
  const std::uint8_t a[] = {'a'};
  CHECK(fnv1a64(a, 1) == 0xaf63dc4c8601ec8cULL);
}
