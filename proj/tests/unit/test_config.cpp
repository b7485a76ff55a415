#include "doctest.h"
#include "scriptseq/config.hpp"
#include "scriptseq/errors.hpp"

using namespace scriptseq;

TEST_CASE("parse_config reads sections, scalars and comments") {
  const auto t = parse_config(
      "seed = 13  # run seed\n"
      "[model]\n"
      "d_model = 32\n"
      "dropout = 0.25\n"
      "[data]\n"
      "grammar = \"g#1.json\"\n");
  CHECK(t.at("").at("seed") == 13);
  CHECK(t.at("model").at("dropout") == 0.25);
  CHECK(t.at("data").at("grammar") == "g#1.json");
}

TEST_CASE("parse_config errors carry the line") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("a = 1\na = 2\n").find("line 2") != std::string::npos);
  CHECK(message("[model\n").find("line 1") != std::string::npos);
  CHECK(message("x\n").find("expected key") != std::string::npos);
  CHECK_FALSE(message("k = [1, 2]\n").empty());
  CHECK_FALSE(message("k = bare\n").empty());
}

TEST_CASE("RunConfig applies stage sections over shared train keys") {
  RunConfig rc;
  rc.apply(parse_config(
      "seed = 7\nthreads = 2\n"
      "[model]\nd_model = 32\n"
      "[train]\nlearning_rate = 0.001\nmax_epochs = 3\n"
      "[finetune]\nlearning_rate = 0.002\nloss = \"margin\"\norientation = \"paper-literal\"\n"
      "[data]\ntrain = 10\n"));
  rc.propagate();
  CHECK(rc.seed == 7);
  CHECK(rc.model.seed == 7);
  CHECK(rc.finetune.threads == 2);
  CHECK(rc.model.d_model == 32);
  CHECK(rc.pretrain.adam.learning_rate == 0.001);
  CHECK(rc.finetune.adam.learning_rate == 0.002);
  CHECK(rc.pretrain.max_epochs == 3);
  CHECK(rc.finetune.max_epochs == 3);
  CHECK(rc.finetune.loss.kind == LossKind::kMargin);
  CHECK(rc.finetune.loss.orientation == MarginOrientation::kPaperLiteral);
  CHECK(rc.pretrain.batch_size == 32);
  CHECK(rc.finetune.batch_size == 8);
  CHECK(rc.data.train == 10);
  CHECK_NOTHROW(rc.validate());
  CHECK(rc.fingerprint()["finetune"]["loss"] == "margin");
}

TEST_CASE("RunConfig rejects unknown or mistyped settings") {
  RunConfig rc;
  CHECK_THROWS_AS(rc.apply(parse_config("[nope]\nx = 1\n")), ConfigError);
  CHECK_THROWS_AS(rc.apply(parse_config("[model]\nwidth = 1\n")), ConfigError);
  CHECK_THROWS_AS(rc.apply(parse_config("[model]\nd_model = \"big\"\n")), ConfigError);
  CHECK_THROWS_AS(rc.apply(parse_config("[train]\nloss = \"hinge\"\n")), ConfigError);
  RunConfig bad;
  bad.data.train = -5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("the shipped config files load") {
  for (const char* name : {"default.toml", "desk.toml"}) {
    RunConfig rc;
    CHECK_NOTHROW(rc.apply(load_config(std::string(SCRIPTSEQ_SOURCE_DIR) + "/configs/" + name)));
    rc.propagate();
    CHECK_NOTHROW(rc.validate());
  }
  RunConfig rc;
  rc.apply(load_config(std::string(SCRIPTSEQ_SOURCE_DIR) + "/configs/default.toml"));
  CHECK(rc.pretrain.adam.learning_rate == 1e-5);
  CHECK(rc.finetune.adam.weight_decay == 1e-6);
  CHECK(rc.finetune.patience == 5);
  CHECK_THROWS_AS(load_config("/nonexistent.toml"), ConfigError);
}
