#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedsm/config.hpp"

#include <filesystem>
#include <fstream>

using namespace fedsm;
namespace fs = std::filesystem;

TEST_CASE("kv parsing: comments, blanks, trimming") {
  const KvMap kv = parse_kv_text(
      "# a comment\n"
      "\n"
      "  seed =  42  \n"
      "data.classes = 7\n"
      "train.distill = mse   # trailing comment\n");
  CHECK(kv.at("seed") == "42");
  CHECK(kv.at("data.classes") == "7");
  CHECK(kv.at("train.distill") == "mse");
  CHECK(kv.size() == 3);
}

TEST_CASE("malformed lines are rejected") {
  CHECK_THROWS_AS(parse_kv_text("no equals sign here\n"), ParseError);
  CHECK_THROWS_AS(parse_kv_text(" = value\n"), ParseError);
}

TEST_CASE("unknown keys are rejected with the key named") {
  const KvMap kv = parse_kv_text("data.classez = 10\n");
  try {
    config_from_kv(kv);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("data.classez") != std::string::npos);
  }
}

TEST_CASE("typed fields parse and bad values name the field") {
  const KvMap kv = parse_kv_text(
      "seed = 9\n"
      "data.imbalance_factor = 25.5\n"
      "model.hidden = 32,16\n"
      "fed.rounds = 12\n"
      "fed.retrain_rounds = 4\n");
  const ExperimentConfig cfg = config_from_kv(kv);
  CHECK(cfg.seed == 9);
  CHECK(cfg.imbalance_factor == doctest::Approx(25.5));
  CHECK(cfg.hidden_dims == std::vector<int>{32, 16});
  CHECK(cfg.rounds == 12);

  try {
    config_from_kv(parse_kv_text("fed.rounds = soon\n"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("fed.rounds") != std::string::npos);
  }
}

TEST_CASE("serialization round trip is a fixed point") {
  ExperimentConfig cfg = preset_config("desk");
  cfg.seed = 31;
  cfg.similarity = "l2";
  cfg.hidden_dims = {48, 24};
  const std::string text = serialize_config(cfg);
  const ExperimentConfig back = config_from_kv(parse_kv_text(text));
  CHECK(serialize_config(back) == text);
  CHECK(back.seed == 31);
  CHECK(back.similarity == "l2");
  CHECK(back.hidden_dims == cfg.hidden_dims);
}

TEST_CASE("serialized keys come out sorted") {
  const std::string text = serialize_config(ExperimentConfig{});
  std::istringstream in(text);
  std::string line, prev;
  while (std::getline(in, line)) {
    const std::string key = line.substr(0, line.find(" ="));
    CHECK(prev < key);
    prev = key;
  }
}

TEST_CASE("config file loading layers over a base") {
  const std::string path =
      (fs::temp_directory_path() / "fedsm_cfg_layer.txt").string();
  {
    std::ofstream out(path);
    out << "fed.rounds = 3\nfed.retrain_rounds = 1\nmixup.pseudo_per_class = 5\n";
  }
  ExperimentConfig base = preset_config("desk");
  const ExperimentConfig cfg = load_config(path, base);
  CHECK(cfg.rounds == 3);
  CHECK(cfg.pseudo_per_class == 5);
  CHECK(cfg.epochs_per_round == base.epochs_per_round);  // untouched keys keep base values
  fs::remove(path);
}

TEST_CASE("presets") {
  const ExperimentConfig paper = preset_config("paper");
  CHECK(paper.rounds == 200);
  CHECK(paper.retrain_rounds == 50);
  CHECK(paper.epochs_per_round == 10);
  CHECK(paper.retrain_epochs == 50);
  CHECK(paper.pseudo_per_class == 100);
  CHECK(paper.participation == doctest::Approx(0.4));

  const ExperimentConfig desk = preset_config("desk");
  CHECK(desk.rounds == 60);
  CHECK(desk.retrain_rounds == 15);
  CHECK(desk.epochs_per_round == 5);
  CHECK(desk.retrain_epochs == 20);

  CHECK_THROWS_AS(preset_config("imaginary"), ConfigError);
}

TEST_CASE("validation catches inconsistent settings") {
  auto expect_mentions = [](ExperimentConfig cfg, const std::string& needle) {
    try {
      cfg.validate();
      FAIL_CHECK("expected ConfigError mentioning ", needle);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };

  ExperimentConfig cfg = preset_config("desk");
  cfg.validate();  // baseline is fine

  ExperimentConfig bad = cfg;
  bad.retrain_rounds = bad.rounds + 1;
  expect_mentions(bad, "retrain_rounds");

  bad = cfg;
  bad.lambda_lo = 0.9;
  bad.lambda_hi = 0.2;
  expect_mentions(bad, "lambda");

  bad = cfg;
  bad.participation = 0.0;
  expect_mentions(bad, "participation");

  bad = cfg;
  bad.distill = "kl";
  bad.feature_dim = cfg.emb_dim + 1;
  expect_mentions(bad, "feature_dim");

  bad = cfg;
  bad.method = "fedprox";
  expect_mentions(bad, "method");

  bad = cfg;
  bad.imbalance_factor = 0.5;
  expect_mentions(bad, "imbalance_factor");
}
