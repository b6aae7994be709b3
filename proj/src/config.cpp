#include "sheafalign/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "sheafalign/error.hpp"
#include "sheafalign/rng.hpp"

namespace sheafalign {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Reads an object's keys with locators and rejects the ones never asked for.
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) {
    used_.insert(key);
    return obj_.contains(key);
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return obj_.at(key);
  }

  Section child(const std::string& key) {
    static const json empty = json::object();
    return Section(has(key) ? obj_.at(key) : empty, at(key));
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t def) {
    return has(key) ? as_uint(obj_.at(key), at(key)) : def;
  }

  double get_double(const std::string& key, double def) {
    if (!has(key)) return def;
    const json& v = obj_.at(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    return v.get<double>();
  }

  bool get_bool(const std::string& key, bool def) {
    if (!has(key)) return def;
    const json& v = obj_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    return v.get<bool>();
  }

  std::string get_string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const json& v = obj_.at(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    return v.get<std::string>();
  }

  std::vector<std::size_t> get_uint_list(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array");
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < v.size(); ++k)
      out.push_back(as_uint(v[k], at(key) + "[" + std::to_string(k) + "]"));
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) {
    const json& v = raw(key);
    if (!v.is_array()) throw ConfigError(at(key), "expected an array");
    std::vector<double> out;
    for (std::size_t k = 0; k < v.size(); ++k) {
      if (!v[k].is_number()) throw ConfigError(at(key) + "[" + std::to_string(k) + "]", "expected a number");
      out.push_back(v[k].get<double>());
    }
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items())
      if (!used_.contains(key)) throw ConfigError(at(key), "unknown key");
  }

  static std::uint64_t as_uint(const json& v, const std::string& locator) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(locator, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& locator, const std::string& what) {
  if (!ok) throw ConfigError(locator, what);
}

void parse_graph(Section s, RunConfig& c) {
  require(s.has("nodes"), s.at("nodes"), "required");
  c.nodes = s.get_uint("nodes", 0);
  require(c.nodes >= 1, s.at("nodes"), "must be >= 1");
  if (s.has("edges")) {
    const json& edges = s.raw("edges");
    require(edges.is_array(), s.at("edges"), "expected an array of [i, j] pairs");
    std::set<Edge> seen;
    for (std::size_t k = 0; k < edges.size(); ++k) {
      const std::string loc = s.at("edges") + "[" + std::to_string(k) + "]";
      require(edges[k].is_array() && edges[k].size() == 2, loc, "expected [i, j]");
      const auto a = Section::as_uint(edges[k][0], loc);
      const auto b = Section::as_uint(edges[k][1], loc);
      require(a < c.nodes && b < c.nodes, loc,
              "edge (" + std::to_string(a) + ", " + std::to_string(b) + ") references a node outside 0.." +
                  std::to_string(c.nodes - 1));
      require(a != b, loc, "self-loop");
      const Edge e{std::min<NodeId>(a, b), std::max<NodeId>(a, b)};
      require(seen.insert(e).second, loc, "duplicate edge");
      c.edges.push_back(e);
    }
  } else {
    for (NodeId a = 0; a < c.nodes; ++a)
      for (NodeId b = a + 1; b < c.nodes; ++b) c.edges.push_back({a, b});
  }
  if (s.has("modalities")) {
    const json& m = s.raw("modalities");
    require(m.is_array() && m.size() == c.nodes, s.at("modalities"), "expected one string per node");
    for (std::size_t k = 0; k < m.size(); ++k) {
      require(m[k].is_string(), s.at("modalities") + "[" + std::to_string(k) + "]", "expected a string");
      c.modalities.push_back(m[k].get<std::string>());
    }
  }
  s.finish();
  try {
    (void)c.graph();
  } catch (const ConnectivityError& e) {
    throw ConfigError(s.at("edges"), e.what());
  }
}

void parse_sheaf(Section s, RunConfig& c) {
  const bool list = s.has("stalk_dims");
  const bool single = s.has("stalk_dim");
  require(list != single, s.at("stalk_dims"), "give exactly one of stalk_dims or stalk_dim");
  if (list) {
    c.stalk_dims = s.get_uint_list("stalk_dims");
    require(c.stalk_dims.size() == c.nodes, s.at("stalk_dims"),
            "expected " + std::to_string(c.nodes) + " entries, got " + std::to_string(c.stalk_dims.size()));
  } else {
    c.stalk_dims.assign(c.nodes, s.get_uint("stalk_dim", 0));
  }
  for (std::size_t k = 0; k < c.stalk_dims.size(); ++k)
    require(c.stalk_dims[k] >= 1, s.at(list ? "stalk_dims[" + std::to_string(k) + "]" : "stalk_dim"), "must be >= 1");

  const bool elist = s.has("edge_dims");
  const bool esingle = s.has("edge_dim");
  require(!(elist && esingle), s.at("edge_dims"), "give at most one of edge_dims or edge_dim");
  if (elist) {
    c.edge_dims = s.get_uint_list("edge_dims");
    require(c.edge_dims->size() == c.edges.size(), s.at("edge_dims"), "expected one entry per listed edge");
  } else if (esingle) {
    c.edge_dims = std::vector<std::size_t>(c.edges.size(), s.get_uint("edge_dim", 0));
  }
  if (c.edge_dims)
    for (std::size_t k = 0; k < c.edge_dims->size(); ++k)
      require((*c.edge_dims)[k] >= 1, s.at(elist ? "edge_dims[" + std::to_string(k) + "]" : "edge_dim"),
              "must be >= 1");
  s.finish();
}

void parse_encoder(Section s, RunConfig& c) {
  if (s.has("hidden_widths")) {
    c.hidden_widths = s.get_uint_list("hidden_widths");
    for (std::size_t k = 0; k < c.hidden_widths->size(); ++k)
      require((*c.hidden_widths)[k] >= 1, s.at("hidden_widths[" + std::to_string(k) + "]"), "must be >= 1");
  }
  const std::string nl = s.get_string("nonlinearity", to_string(c.nonlinearity));
  try {
    c.nonlinearity = parse_nonlinearity(nl);
  } catch (const Error& e) {
    throw ConfigError(s.at("nonlinearity"), e.what());
  }
  s.finish();
}

void parse_train(Section s, RunConfig& c) {
  TrainConfig& t = c.train;
  t.epochs = s.get_uint("epochs", t.epochs);
  require(t.epochs >= 1, s.at("epochs"), "must be >= 1");
  t.batch_size = s.get_uint("batch_size", t.batch_size);
  require(t.batch_size >= 1, s.at("batch_size"), "must be >= 1");
  t.learning_rate = s.get_double("learning_rate", t.learning_rate);
  require(t.learning_rate > 0.0, s.at("learning_rate"), "must be > 0");
  t.weights.lambda = s.get_double("lambda", t.weights.lambda);
  t.weights.beta = s.get_double("beta", t.weights.beta);
  t.weights.gamma = s.get_double("gamma", t.weights.gamma);
  require(t.weights.lambda >= 0.0, s.at("lambda"), "must be >= 0");
  require(t.weights.beta >= 0.0, s.at("beta"), "must be >= 0");
  require(t.weights.gamma >= 0.0, s.at("gamma"), "must be >= 0");
  t.weights.tau = s.get_double("tau", t.weights.tau);
  require(t.weights.tau > 0.0, s.at("tau"), "temperature must be strictly positive");
  t.weights.symmetric_contrastive = s.get_bool("symmetric_contrastive", t.weights.symmetric_contrastive);
  t.shuffle = s.get_bool("shuffle", t.shuffle);
  const std::string opt = s.get_string("optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd");
  require(opt == "adam" || opt == "sgd", s.at("optimizer"), "expected \"adam\" or \"sgd\"");
  t.optimizer = opt == "adam" ? OptimizerKind::adam : OptimizerKind::sgd;
  t.count_gradient_messages = s.get_bool("count_gradient_messages", t.count_gradient_messages);
  t.threads = s.get_uint("threads", t.threads);
  require(t.threads >= 1, s.at("threads"), "must be >= 1");
  s.finish();
}

void parse_data(Section s, RunConfig& c) {
  DataConfig& d = c.data;
  d.path = s.get_string("path", "");
  d.train_per_class = s.get_uint("train_per_class", 0);
  Section g = s.child("generator");
  GeneratorConfig& gen = d.generator;
  gen.num_classes = static_cast<std::uint32_t>(g.get_uint("num_classes", gen.num_classes));
  require(gen.num_classes >= 1, g.at("num_classes"), "must be >= 1");
  gen.samples_per_class = g.get_uint("samples_per_class", gen.samples_per_class);
  require(gen.samples_per_class >= 1, g.at("samples_per_class"), "must be >= 1");
  RedundancyControl& rc = gen.control;
  rc.shared_dim = g.get_uint("shared_dim", rc.shared_dim);
  rc.unique_dim = g.get_uint("unique_dim", rc.unique_dim);
  require(rc.latent_dim() >= 1, g.at("shared_dim"), "shared_dim + unique_dim must be >= 1");
  rc.noise_sigma = g.get_double("noise_sigma", rc.noise_sigma);
  require(rc.noise_sigma >= 0.0, g.at("noise_sigma"), "must be >= 0");
  rc.obs_dim = g.get_uint("obs_dim", rc.obs_dim);
  rc.class_separation = g.get_double("class_separation", rc.class_separation);
  require(rc.class_separation >= 0.0, g.at("class_separation"), "must be >= 0");
  rc.identity_transforms = g.get_bool("identity_transforms", rc.identity_transforms);
  require(!rc.identity_transforms || rc.observation_dim() == rc.latent_dim(), g.at("identity_transforms"),
          "needs obs_dim equal to shared_dim + unique_dim");
  gen.p_drop = g.get_double("p_drop", gen.p_drop);
  require(gen.p_drop >= 0.0 && gen.p_drop < 1.0, g.at("p_drop"), "must lie in [0, 1)");
  g.finish();
  s.finish();
}

void parse_eval(Section s, RunConfig& c) {
  EvalConfig& e = c.eval;
  if (s.has("ks")) e.ks = s.get_uint_list("ks");
  require(!e.ks.empty(), s.at("ks"), "must not be empty");
  for (std::size_t k = 0; k < e.ks.size(); ++k) require(e.ks[k] >= 1, s.at("ks[" + std::to_string(k) + "]"), "must be >= 1");
  if (s.has("shots")) e.shots = s.get_uint_list("shots");
  for (std::size_t k = 0; k < e.shots.size(); ++k)
    require(e.shots[k] >= 1, s.at("shots[" + std::to_string(k) + "]"), "must be >= 1");
  if (s.has("p_drop")) e.p_drop = s.get_double_list("p_drop");
  for (std::size_t k = 0; k < e.p_drop.size(); ++k)
    require(e.p_drop[k] >= 0.0 && e.p_drop[k] < 1.0, s.at("p_drop[" + std::to_string(k) + "]"), "must lie in [0, 1)");
  e.reference_node = s.get_uint("reference_node", e.reference_node);
  require(e.reference_node < c.nodes, s.at("reference_node"), "not a node");
  e.task_node = s.get_uint("task_node", e.task_node);
  require(e.task_node < c.nodes, s.at("task_node"), "not a node");
  const std::string sel = s.get_string("neighbor_selection", "lowest_index");
  require(sel == "lowest_index" || sel == "best_reconstruction", s.at("neighbor_selection"),
          "expected \"lowest_index\" or \"best_reconstruction\"");
  e.neighbor_selection =
      sel == "lowest_index" ? NeighborSelection::lowest_index : NeighborSelection::best_reconstruction;
  s.finish();
}

}  // namespace

CommGraph RunConfig::graph() const {
  // Modality names become tags in order of first appearance.
  std::vector<std::uint32_t> tags;
  std::vector<std::string> names;
  for (const auto& m : modalities) {
    const auto it = std::ranges::find(names, m);
    tags.push_back(static_cast<std::uint32_t>(it - names.begin()));
    if (it == names.end()) names.push_back(m);
  }
  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (const auto& e : edges) pairs.emplace_back(e.first, e.second);
  return build_graph(nodes, pairs, tags);
}

std::optional<std::vector<std::size_t>> RunConfig::sorted_edge_dims() const {
  if (!edge_dims) return std::nullopt;
  const CommGraph g = graph();
  std::vector<std::size_t> out(g.edge_count());
  for (std::size_t k = 0; k < edges.size(); ++k) out[*g.edge_index(edges[k].first, edges[k].second)] = (*edge_dims)[k];
  return out;
}

ModelSpec RunConfig::model_spec(const std::vector<std::size_t>& input_dims) const {
  ModelSpec spec;
  spec.input_dims = input_dims;
  spec.stalk_dims = stalk_dims;
  spec.edge_dims = sorted_edge_dims();
  spec.hidden_widths = hidden_widths;
  spec.nonlinearity = nonlinearity;
  return spec;
}

ordered_json RunConfig::resolved() const {
  ordered_json j;
  j["seed"] = seed;
  ordered_json edge_list = ordered_json::array();
  for (const auto& e : edges) edge_list.push_back({e.first, e.second});
  j["graph"] = {{"nodes", nodes}, {"edges", edge_list}};
  if (!modalities.empty()) j["graph"]["modalities"] = modalities;
  j["sheaf"] = {{"stalk_dims", stalk_dims}};
  if (edge_dims) j["sheaf"]["edge_dims"] = *edge_dims;
  j["encoder"] = ordered_json::object();
  if (hidden_widths) j["encoder"]["hidden_widths"] = *hidden_widths;
  j["encoder"]["nonlinearity"] = to_string(nonlinearity);
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"learning_rate", train.learning_rate},
                {"lambda", train.weights.lambda},
                {"beta", train.weights.beta},
                {"gamma", train.weights.gamma},
                {"tau", train.weights.tau},
                {"symmetric_contrastive", train.weights.symmetric_contrastive},
                {"shuffle", train.shuffle},
                {"optimizer", train.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
                {"count_gradient_messages", train.count_gradient_messages},
                {"threads", train.threads}};
  const auto& g = data.generator;
  j["data"] = ordered_json::object();
  if (!data.path.empty()) j["data"]["path"] = data.path.string();
  j["data"]["train_per_class"] = data.train_per_class;
  j["data"]["generator"] = {{"num_classes", g.num_classes},
                            {"samples_per_class", g.samples_per_class},
                            {"shared_dim", g.control.shared_dim},
                            {"unique_dim", g.control.unique_dim},
                            {"noise_sigma", g.control.noise_sigma},
                            {"obs_dim", g.control.obs_dim},
                            {"class_separation", g.control.class_separation},
                            {"identity_transforms", g.control.identity_transforms},
                            {"p_drop", g.p_drop}};
  j["eval"] = {{"ks", eval.ks},
               {"shots", eval.shots},
               {"p_drop", eval.p_drop},
               {"reference_node", eval.reference_node},
               {"task_node", eval.task_node},
               {"neighbor_selection",
                eval.neighbor_selection == NeighborSelection::lowest_index ? "lowest_index" : "best_reconstruction"}};
  return j;
}

RunConfig parse_config(const json& doc) {
  Section root(doc, "");
  RunConfig c;
  c.seed = root.get_uint("seed", 0);
  for (const char* required : {"graph", "sheaf", "data"})
    require(root.has(required), required, "missing required section");
  parse_graph(root.child("graph"), c);
  parse_sheaf(root.child("sheaf"), c);
  parse_encoder(root.child("encoder"), c);
  parse_train(root.child("train"), c);
  parse_data(root.child("data"), c);
  parse_eval(root.child("eval"), c);
  root.finish();
  c.train.seed = c.seed;
  return c;
}

RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::stringstream parts(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(parts, key, '.')) {
    if (key.empty()) throw ConfigError(path, "empty path component");
    keys.push_back(key);
  }
  for (std::size_t k = 0; k + 1 < keys.size(); ++k) {
    if (!node->is_object()) throw ConfigError(path, "cannot descend into a non-object");
    node = &(*node)[keys[k]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError(path, "cannot descend into a non-object");
  (*node)[keys.back()] = std::move(value);
}

std::pair<MultiViewDataset, MultiViewDataset> load_data(const RunConfig& cfg) {
  MultiViewDataset ds;
  if (!cfg.data.path.empty()) {
    ds = read_dataset(cfg.data.path);
  } else {
    const auto& g = cfg.data.generator;
    ds = generate_multiview(g.num_classes, g.samples_per_class, g.control, cfg.nodes, derive_seed(cfg.seed, "run.data"));
    ds = apply_presence_dropout(ds, g.p_drop, derive_seed(cfg.seed, "run.data.dropout"));
  }
  if (ds.node_count() != cfg.nodes) {
    throw ConfigError("data", "dataset has " + std::to_string(ds.node_count()) + " views but the graph has " +
                                  std::to_string(cfg.nodes) + " nodes");
  }
  if (cfg.data.train_per_class == 0) return {ds, ds};
  if (!ds.labeled()) throw ConfigError("data.train_per_class", "a split needs a labeled dataset");
  return split_per_class(ds, cfg.data.train_per_class);
}

}  // namespace sheafalign
