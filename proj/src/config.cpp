#include "nona/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "nona/errors.hpp"

namespace nona {

namespace {

using nlohmann::json;

// Walks one JSON object, remembering which keys were consumed so leftovers
// can be reported.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key '" + label() + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& get(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  Section section(const std::string& key) { return Section(get(key), qualified(key)); }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = get(key);
    if (!v.is_string()) throw ConfigError("config key '" + qualified(key) + "' must be a string");
    return v.get<std::string>();
  }

  std::string required_string(const std::string& key) {
    if (!has(key)) throw ConfigError("config is missing required key '" + qualified(key) + "'");
    return string(key, "");
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = get(key);
    if (!v.is_number()) throw ConfigError("config key '" + qualified(key) + "' must be a number");
    return v.get<double>();
  }

  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) {
    if (!has(key)) return fallback;
    const json& v = get(key);
    if (!v.is_number_unsigned()) throw ConfigError("config key '" + qualified(key) + "' must be a non-negative integer");
    return v.get<std::uint64_t>();
  }

  template <class Parse>
  auto choice(const std::string& key, decltype(std::declval<Parse>()(std::string_view{})) fallback, Parse parse) {
    if (!has(key)) return fallback;
    const std::string v = string(key, "");
    try {
      return parse(v);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + qualified(key) + "': " + e.what());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown config key '" + qualified(it.key()) + "'");
    }
  }

 private:
  std::string label() const { return path_.empty() ? "<root>" : path_; }
  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Section root(j, "");
  if (root.has("format_version")) {
    const std::uint64_t v = root.unsigned_integer("format_version", kFormatVersion);
    if (v != static_cast<std::uint64_t>(kFormatVersion)) {
      throw ConfigError("unsupported config format_version " + std::to_string(v));
    }
  }
  c.seed = root.unsigned_integer("seed", c.seed);
  c.output_dir = root.string("output_dir", c.output_dir);

  if (!root.has("dataset")) throw ConfigError("config is missing required key 'dataset.target'");
  {
    Section d = root.section("dataset");
    c.dataset.target = parse_target(d.required_string("target"));
    c.dataset.n_points = d.unsigned_integer("n_points", c.dataset.n_points);
    c.dataset.noise_std = d.number("noise_std", c.dataset.noise_std);
    d.finish();
  }
  if (root.has("model")) {
    Section m = root.section("model");
    c.model.head = m.choice("head", c.model.head, parse_head_kind);
    c.model.mlp.hidden_dim = m.unsigned_integer("hidden_dim", c.model.mlp.hidden_dim);
    c.model.mlp.embedding_dim = m.unsigned_integer("embedding_dim", c.model.mlp.embedding_dim);
    c.model.mlp.depth = m.unsigned_integer("depth", c.model.mlp.depth);
    m.finish();
  }
  c.model.similarity = root.choice("similarity", c.model.similarity, parse_similarity);
  if (root.has("softstep")) {
    Section s = root.section("softstep");
    c.model.softstep.family = s.choice("family", c.model.softstep.family, parse_softstep_family);
    c.model.softstep.param_mode = s.choice("param_mode", c.model.softstep.param_mode, parse_param_mode);
    c.model.softstep.epsilon = s.number("epsilon", c.model.softstep.epsilon);
    c.model.softstep.t_clamp = s.number("t_clamp", c.model.softstep.t_clamp);
    s.finish();
  }
  if (root.has("train")) {
    Section t = root.section("train");
    c.train.batch_size = t.unsigned_integer("batch_size", c.train.batch_size);
    c.train.learning_rate = t.number("learning_rate", c.train.learning_rate);
    c.train.max_epochs = t.unsigned_integer("max_epochs", c.train.max_epochs);
    c.train.patience = t.unsigned_integer("patience", c.train.patience);
    c.train.optimizer = t.choice("optimizer", c.train.optimizer, parse_optimizer);
    c.train.min_improvement = t.number("min_improvement", c.train.min_improvement);
    if (t.has("adam")) {
      Section a = t.section("adam");
      c.train.adam.beta1 = a.number("beta1", c.train.adam.beta1);
      c.train.adam.beta2 = a.number("beta2", c.train.adam.beta2);
      c.train.adam.epsilon = a.number("epsilon", c.train.adam.epsilon);
      a.finish();
    }
    t.finish();
  }
  root.finish();
  validate(c);
  return c;
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const std::size_t pos = e.byte == 0 ? 0 : std::min<std::size_t>(e.byte - 1, text.size());
    std::size_t line = 1, column = 1;
    for (std::size_t i = 0; i < pos; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": malformed JSON");
  }
  try {
    return config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

json config_to_json(const ExperimentConfig& c) {
  return json{
      {"format_version", kFormatVersion},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"dataset", {{"target", to_string(c.dataset.target)}, {"n_points", c.dataset.n_points}, {"noise_std", c.dataset.noise_std}}},
      {"model",
       {{"head", to_string(c.model.head)},
        {"hidden_dim", c.model.mlp.hidden_dim},
        {"embedding_dim", c.model.mlp.embedding_dim},
        {"depth", c.model.mlp.depth}}},
      {"similarity", to_string(c.model.similarity)},
      {"softstep",
       {{"family", to_string(c.model.softstep.family)},
        {"param_mode", to_string(c.model.softstep.param_mode)},
        {"epsilon", c.model.softstep.epsilon},
        {"t_clamp", c.model.softstep.t_clamp}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"optimizer", to_string(c.train.optimizer)},
        {"min_improvement", c.train.min_improvement},
        {"adam", {{"beta1", c.train.adam.beta1}, {"beta2", c.train.adam.beta2}, {"epsilon", c.train.adam.epsilon}}}}},
  };
}

std::string config_echo(const ExperimentConfig& config) { return config_to_json(config).dump(); }

}  // namespace nona
