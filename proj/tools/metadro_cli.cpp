#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "metadro/dataset.hpp"
#include "metadro/error.hpp"
#include "metadro/metrics.hpp"
#include "metadro/run_config.hpp"
#include "metadro/store_io.hpp"
#include "metadro/synth.hpp"
#include "metadro/trainer.hpp"

using namespace metadro;

namespace {

struct Options {
  std::string config;
  std::string store;
  std::string out;
  std::string format;
  std::string metrics;
  std::string metrics_format;
  std::string checkpoint;
  std::string input;
  std::string stopwords;
  std::optional<std::uint64_t> seed;
  std::optional<int> tasks;
  std::optional<std::string> mode;
  std::optional<double> l2;
  std::optional<std::string> order;
  std::vector<std::string> sets;
  std::size_t max_tokens = 512;
  bool groups = false;
};

RunConfig resolve_config(const Options& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ValidationError("--set expects key=value, got '" + kv + "'");
    set_option(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) set_option(c, "seed", std::to_string(*o.seed));
  if (o.tasks) set_option(c, "eval_tasks", std::to_string(*o.tasks));
  if (o.mode) set_option(c, "mode", *o.mode);
  if (o.l2) set_option(c, "l2", format_double(*o.l2));
  if (o.order) set_option(c, "order", *o.order);
  c.validate();
  return c;
}

StoreFormat store_format(const Options& o, const std::string& path) {
  return o.format.empty() ? format_from_path(path) : parse_store_format(o.format);
}

MetricsFormat metrics_format(const Options& o, const std::string& path) {
  if (!o.metrics_format.empty()) return parse_metrics_format(o.metrics_format);
  return path.ends_with(".json") ? MetricsFormat::Json : MetricsFormat::Csv;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw ValidationError(std::string(flag) + " is required");
}

int cmd_gen_synth(const Options& o) {
  require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  const EmbeddingStore store = generate(c.synth);
  write_store(o.out, store, store_format(o, o.out));
  std::cout << "wrote " << store.size() << " records (" << store.class_index().size() << " classes, dim "
            << store.dim() << ") to " << o.out << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  require(o.store, "--store");
  require(o.out, "--out");
  const RunConfig c = resolve_config(o);
  const EmbeddingStore store = load_store(o.store, store_format(o, o.store));
  const bool selects = c.train.dro.mode != DroMode::Erm;

  std::cout << "model " << to_string(c.train.model) << ", mode " << to_string(c.train.dro.mode) << ", "
            << c.train.iterations << " iterations\n";
  auto report = [&](const MetricsRecord& r, const IterationLog& log) {
    std::cout << "iter " << r.iteration << ": objective " << format_double(log.objective);
    if (selects && log.selected) std::cout << ", selected group " << *log.selected;
    std::cout << ", eval " << format_table_row(r) << ", worst-case group " << r.worst_group << '\n';
  };
  const TrainResult result = meta_train(c.train, store, report);

  save_checkpoint(o.out, {result.params, result.stats});
  if (!o.metrics.empty()) export_metrics(result.history, o.metrics, metrics_format(o, o.metrics));
  const MetricsRecord& last = result.history.back();
  std::cout << "avg, worst, best, middle\n" << format_table_row(last) << '\n';
  std::cout << "groups: worst " << last.worst_group << ", best " << last.best_group << ", middle "
            << last.middle_group << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.store, "--store");
  const RunConfig c = resolve_config(o);
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  const EmbeddingStore store = load_store(o.store, store_format(o, o.store));
  const MetricsRecord r = evaluate_checkpoint(ck.params, c.train, store, c.train.eval_tasks);
  const std::vector<MetricsRecord> one = {r};
  write_metrics_csv(std::cout, one);
  if (!o.out.empty()) export_metrics(one, o.out, metrics_format(o, o.out));
  return 0;
}

int cmd_inspect(const Options& o) {
  require(o.store, "--store");
  const EmbeddingStore store = load_store(o.store, store_format(o, o.store));
  if (store.empty()) throw ValidationError("store " + o.store + " is empty");
  const auto& index = o.groups ? store.group_index() : store.class_index();
  std::cout << (o.groups ? "group" : "class") << ",count\n";
  for (const auto& [name, idx] : index) std::cout << name << ',' << idx.size() << '\n';
  std::cout << "total," << store.size() << '\n';
  return 0;
}

int cmd_clean_text(const Options& o) {
  require(o.input, "--in");
  require(o.out, "--out");
  std::set<std::string> stop;
  if (!o.stopwords.empty()) {
    std::ifstream sw(o.stopwords);
    if (!sw) throw IoError("cannot read " + o.stopwords);
    for (std::string w; sw >> w;) stop.insert(clean_text(w, {}, 1));
  }
  std::ifstream in(o.input);
  if (!in) throw IoError("cannot read " + o.input);
  std::ofstream out(o.out);
  if (!out) throw IoError("cannot write " + o.out);
  for (std::string line; std::getline(in, line);) out << clean_text(line, stop, o.max_tokens) << '\n';
  if (!out) throw IoError("write failed: " + o.out);
  return 0;
}

int cmd_dump_groups(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  const Checkpoint ck = load_checkpoint(o.checkpoint);
  if (o.out.empty()) {
    write_group_stats_csv(std::cout, ck.stats);
    return 0;
  }
  std::ofstream out(o.out);
  if (!out) throw IoError("cannot write " + o.out);
  write_group_stats_csv(out, ck.stats);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot meta-learning with group-robust objectives over embedding stores"};
  app.require_subcommand(1);
  Options o;

  auto config_flags = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "key = value run config");
    sub->add_option("--set", o.sets, "override one config key (key=value), repeatable");
    sub->add_option("--seed", o.seed, "random seed");
  };
  auto train_flags = [&](CLI::App* sub) {
    sub->add_option("--tasks", o.tasks, "evaluation tasks T (>= 2)");
    sub->add_option("--mode", o.mode, "objective")->check(CLI::IsMember({"erm", "dro", "adjusted"}));
    sub->add_option("--l2", o.l2, "L2 penalty on parameters");
    sub->add_option("--order", o.order, "MAML order")->check(CLI::IsMember({"first", "second"}));
  };
  auto format_flag = [&](CLI::App* sub) {
    sub->add_option("--format", o.format, "store format")->check(CLI::IsMember({"csv", "jsonl", "bin"}));
  };

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic grouped store");
  config_flags(gen);
  format_flag(gen);
  gen->add_option("--out", o.out, "output store path");

  auto* train = app.add_subcommand("train", "meta-train and write a checkpoint");
  config_flags(train);
  train_flags(train);
  format_flag(train);
  train->add_option("--store", o.store, "embedding store");
  train->add_option("--out", o.out, "checkpoint path");
  train->add_option("--metrics", o.metrics, "metrics history path (.csv or .json)");
  train->add_option("--metrics-format", o.metrics_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  config_flags(eval);
  train_flags(eval);
  format_flag(eval);
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  eval->add_option("--store", o.store, "embedding store");
  eval->add_option("--out", o.out, "also write the record here (.csv or .json)");
  eval->add_option("--metrics-format", o.metrics_format, "csv or json")->check(CLI::IsMember({"csv", "json"}));

  auto* inspect = app.add_subcommand("inspect", "per-class (or per-group) record counts");
  format_flag(inspect);
  inspect->add_option("--store", o.store, "embedding store");
  inspect->add_flag("--groups", o.groups, "count by group instead of class");

  auto* clean = app.add_subcommand("clean-text", "normalize a text file line by line");
  clean->add_option("--in", o.input, "input text");
  clean->add_option("--stopwords", o.stopwords, "whitespace-separated stopword list");
  clean->add_option("--max-tokens", o.max_tokens, "tokens kept per line");
  clean->add_option("--out", o.out, "output text");

  auto* dump = app.add_subcommand("dump-groups", "print running group stats from a checkpoint");
  dump->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  dump->add_option("--out", o.out, "write CSV here instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_gen_synth(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*inspect) return cmd_inspect(o);
    if (*clean) return cmd_clean_text(o);
    if (*dump) return cmd_dump_groups(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 2;
}
