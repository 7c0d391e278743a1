#include <sstream>

#include "doctest.h"
#include "metadro/error.hpp"
#include "metadro/run_config.hpp"

using namespace metadro;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_run_config(in);
}

std::string message_of(const std::string& text) {
  try {
    parse(text).validate();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parse a flat config") {
  const auto c = parse(
      "# comment\n"
      "\n"
      "seed = 9\n"
      "model = maml\n"
      "n_way=5\n"
      "  k_shot =  3  \n"
      "hidden = 32, 16\n"
      "mode = adjusted\n"
      "adjust_scale = 0.5\n"
      "order = first\n"
      "split = records\n"
      "minority_fraction = 0.25\n");
  CHECK(c.train.seed == 9);
  CHECK(c.synth.seed == 9);
  CHECK(c.train.model == ModelKind::Maml);
  CHECK(c.train.task.n_way == 5);
  CHECK(c.train.task.k_shot == 3);
  CHECK(c.train.hidden == std::vector<int>{32, 16});
  CHECK(c.train.dro.mode == DroMode::GroupAdjusted);
  CHECK(c.train.dro.adjust_scale == 0.5);
  CHECK(c.train.maml.order == MamlOrder::First);
  CHECK(c.train.split == SplitMode::Records);
  CHECK(c.synth.minority_fraction == 0.25);
  CHECK_NOTHROW(c.validate());

  CHECK(parse("hidden = none\n").train.hidden.empty());
  CHECK(parse("hidden =\n").train.hidden.empty());
}

TEST_CASE("rejections name the key") {
  CHECK(message_of("learning_rate = 0.1\n").find("learning_rate") != std::string::npos);
  CHECK(message_of("n_way = two\n").find("n_way") != std::string::npos);
  CHECK(message_of("outer_lr = fast\n").find("outer_lr") != std::string::npos);
  CHECK(message_of("mode = max\n").find("mode") != std::string::npos);
  CHECK(message_of("minority_fraction = 1.5\n").find("minority_fraction") != std::string::npos);
  CHECK(message_of("just words\n").find("line 1") != std::string::npos);
  CHECK(message_of("n_way = 1\n").find("n_way") != std::string::npos);
  CHECK(message_of("eval_tasks = 1\n").find("eval_tasks") != std::string::npos);
}

TEST_CASE("to_text round trips") {
  auto c = parse("seed = 4\nmodel = maml\nhidden = 8,4\nl2 = 0.001\nstratum = semi_rare\ntop_count = 7\n");
  const auto back = parse(to_text(c));
  CHECK(to_text(back) == to_text(c));
  CHECK(back.train.hidden == c.train.hidden);
  CHECK(back.train.dro.l2 == 0.001);
  REQUIRE(back.train.stratum.has_value());
  CHECK(back.train.stratum->kind == StratumKind::SemiRare);
  CHECK(back.train.stratum->top_count == 7);

  // Every key to_text writes is a known key.
  std::istringstream lines(to_text(RunConfig{}));
  const auto& keys = run_config_keys();
  for (std::string line; std::getline(lines, line);) {
    const auto key = line.substr(0, line.find(' '));
    CHECK(std::find(keys.begin(), keys.end(), key) != keys.end());
  }
}

TEST_CASE("set_option overrides") {
  RunConfig c;
  set_option(c, "l2", "0.5");
  set_option(c, "mode", "dro");
  CHECK(c.train.dro.l2 == 0.5);
  CHECK(c.train.dro.mode == DroMode::Dro);
  CHECK_THROWS_AS(set_option(c, "bogus", "1"), ValidationError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.cfg"), IoError);
}
