#include "metadro/run_config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

#include "metadro/error.hpp"
#include "metadro/store_io.hpp"

namespace metadro {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename Int>
Int to_int(std::string_view key, std::string_view value) {
  Int v{};
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || end != value.data() + value.size())
    throw ValidationError(std::string(key) + ": expected an integer, got '" + std::string(value) + "'");
  return v;
}

double to_real(std::string_view key, std::string_view value) {
  try {
    return parse_double(value);
  } catch (const ValidationError&) {
    throw ValidationError(std::string(key) + ": expected a number, got '" + std::string(value) + "'");
  }
}

std::vector<int> to_widths(std::string_view key, std::string_view value) {
  std::vector<int> out;
  if (value.empty() || value == "none") return out;
  std::size_t start = 0;
  while (start <= value.size()) {
    const auto comma = value.find(',', start);
    const auto piece = trim(value.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    out.push_back(to_int<int>(key, piece));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename F>
auto named(std::string_view key, F&& parse) {
  try {
    return parse();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string(key) + ": " + e.what());
  }
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = {
      "seed",          "n_way",        "k_shot",        "q_query",       "model",
      "meta_batch",    "outer_lr",     "momentum",      "iterations",    "eval_interval",
      "eval_tasks",    "hidden",       "inner_lr",      "inner_steps",   "order",
      "mode",          "l2",           "adjust_scale",  "counts",        "split",
      "val_fraction",  "test_fraction", "dim",          "classes",       "groups_per_class",
      "records_per_class", "mean_scale", "noise",       "shift",         "minority_fraction",
      "stratum",       "top_count",    "min_notes"};
  return keys;
}

void set_option(RunConfig& c, std::string_view key, std::string_view value) {
  value = trim(value);
  TrainConfig& t = c.train;
  SynthSpec& s = c.synth;
  if (key == "seed") {
    t.seed = s.seed = to_int<std::uint64_t>(key, value);
  } else if (key == "n_way") {
    t.task.n_way = to_int<int>(key, value);
  } else if (key == "k_shot") {
    t.task.k_shot = to_int<int>(key, value);
  } else if (key == "q_query") {
    t.task.q_query = to_int<int>(key, value);
  } else if (key == "model") {
    t.model = named(key, [&] { return parse_model_kind(value); });
  } else if (key == "meta_batch") {
    t.meta_batch = to_int<int>(key, value);
  } else if (key == "outer_lr") {
    t.outer_lr = to_real(key, value);
  } else if (key == "momentum") {
    t.momentum = to_real(key, value);
  } else if (key == "iterations") {
    t.iterations = to_int<int>(key, value);
  } else if (key == "eval_interval") {
    t.eval_interval = to_int<int>(key, value);
  } else if (key == "eval_tasks") {
    t.eval_tasks = to_int<int>(key, value);
  } else if (key == "hidden") {
    t.hidden = to_widths(key, value);
  } else if (key == "inner_lr") {
    t.maml.inner_lr = to_real(key, value);
  } else if (key == "inner_steps") {
    t.maml.inner_steps = to_int<int>(key, value);
  } else if (key == "order") {
    t.maml.order = named(key, [&] { return parse_maml_order(value); });
  } else if (key == "mode") {
    t.dro.mode = named(key, [&] { return parse_dro_mode(value); });
  } else if (key == "l2") {
    t.dro.l2 = to_real(key, value);
  } else if (key == "adjust_scale") {
    t.dro.adjust_scale = to_real(key, value);
  } else if (key == "counts") {
    t.dro.counts = named(key, [&] { return parse_count_source(value); });
  } else if (key == "split") {
    t.split = named(key, [&] { return parse_split_mode(value); });
  } else if (key == "val_fraction") {
    t.val_fraction = to_real(key, value);
  } else if (key == "test_fraction") {
    t.test_fraction = to_real(key, value);
  } else if (key == "dim") {
    s.dim = to_int<int>(key, value);
  } else if (key == "classes") {
    s.classes = to_int<int>(key, value);
  } else if (key == "groups_per_class") {
    s.groups_per_class = to_int<int>(key, value);
  } else if (key == "records_per_class") {
    s.records_per_class = to_int<int>(key, value);
  } else if (key == "mean_scale") {
    s.mean_scale = to_real(key, value);
  } else if (key == "noise") {
    s.noise = to_real(key, value);
  } else if (key == "shift") {
    s.shift = to_real(key, value);
  } else if (key == "minority_fraction") {
    s.minority_fraction = to_real(key, value);
  } else if (key == "stratum") {
    if (value == "none") {
      t.stratum.reset();
    } else {
      const auto kind = named(key, [&] { return parse_stratum(value); });
      t.stratum = StratumSpec{kind, t.stratum ? t.stratum->top_count : 50, t.stratum ? t.stratum->min_notes : 10};
    }
  } else if (key == "top_count") {
    if (!t.stratum) t.stratum = StratumSpec{};
    t.stratum->top_count = to_int<int>(key, value);
  } else if (key == "min_notes") {
    if (!t.stratum) t.stratum = StratumSpec{};
    t.stratum->min_notes = to_int<int>(key, value);
  } else {
    throw ValidationError("unknown config key '" + std::string(key) + "'");
  }
}

void RunConfig::validate() const {
  train.validate();
  synth.validate();
}

RunConfig parse_run_config(std::istream& in) {
  RunConfig c;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos)
      throw ValidationError("config line " + std::to_string(line_no) + ": expected key = value");
    set_option(c, trim(text.substr(0, eq)), text.substr(eq + 1));
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  return parse_run_config(in);
}

std::string to_text(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const SynthSpec& s = c.synth;
  std::string hidden;
  for (std::size_t i = 0; i < t.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(t.hidden[i]);
  if (hidden.empty()) hidden = "none";
  std::ostringstream out;
  out << "seed = " << t.seed << '\n'
      << "n_way = " << t.task.n_way << '\n'
      << "k_shot = " << t.task.k_shot << '\n'
      << "q_query = " << t.task.q_query << '\n'
      << "model = " << to_string(t.model) << '\n'
      << "meta_batch = " << t.meta_batch << '\n'
      << "outer_lr = " << format_double(t.outer_lr) << '\n'
      << "momentum = " << format_double(t.momentum) << '\n'
      << "iterations = " << t.iterations << '\n'
      << "eval_interval = " << t.eval_interval << '\n'
      << "eval_tasks = " << t.eval_tasks << '\n'
      << "hidden = " << hidden << '\n'
      << "inner_lr = " << format_double(t.maml.inner_lr) << '\n'
      << "inner_steps = " << t.maml.inner_steps << '\n'
      << "order = " << to_string(t.maml.order) << '\n'
      << "mode = " << to_string(t.dro.mode) << '\n'
      << "l2 = " << format_double(t.dro.l2) << '\n'
      << "adjust_scale = " << format_double(t.dro.adjust_scale) << '\n'
      << "counts = " << to_string(t.dro.counts) << '\n'
      << "split = " << to_string(t.split) << '\n'
      << "val_fraction = " << format_double(t.val_fraction) << '\n'
      << "test_fraction = " << format_double(t.test_fraction) << '\n'
      << "dim = " << s.dim << '\n'
      << "classes = " << s.classes << '\n'
      << "groups_per_class = " << s.groups_per_class << '\n'
      << "records_per_class = " << s.records_per_class << '\n'
      << "mean_scale = " << format_double(s.mean_scale) << '\n'
      << "noise = " << format_double(s.noise) << '\n'
      << "shift = " << format_double(s.shift) << '\n'
      << "minority_fraction = " << format_double(s.minority_fraction) << '\n'
      << "stratum = " << (t.stratum ? to_string(t.stratum->kind) : "none") << '\n';
  if (t.stratum) out << "top_count = " << t.stratum->top_count << '\n' << "min_notes = " << t.stratum->min_notes << '\n';
  return out.str();
}

}  // namespace metadro
