// sheafalign: generate data, train, evaluate and run the dropout experiment.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "sheafalign/config.hpp"
#include "sheafalign/datagen.hpp"
#include "sheafalign/error.hpp"
#include "sheafalign/eval.hpp"
#include "sheafalign/rng.hpp"
#include "sheafalign/selfcheck.hpp"
#include "sheafalign/trainer.hpp"

namespace fs = std::filesystem;
using namespace sheafalign;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opt) {
  cmd->add_option("-c,--config", opt.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", opt.seed, "Master seed, overrides the config");
  cmd->add_option("--set", opt.overrides, "Override a config value, e.g. train.epochs=5")->take_all();
}

RunConfig resolve(const CommonOptions& opt) {
  std::ifstream in(opt.config);
  if (!in) throw ConfigError(opt.config, "cannot open config file");
  nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(opt.config, "invalid JSON");
  for (const auto& o : opt.overrides) apply_override(doc, o);
  if (opt.seed) doc["seed"] = *opt.seed;
  RunConfig cfg = parse_config(doc);
  if (const char* env = std::getenv("SHEAF_THREADS"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long n = std::strtoul(env, &end, 10);
    if (*end != '\0' || n == 0) throw ConfigError("SHEAF_THREADS", "expected a positive integer");
    cfg.train.threads = n;
  }
  return cfg;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_snapshot(const RunConfig& cfg, const fs::path& path) { write_json(path, cfg.resolved()); }

std::vector<std::size_t> input_dims(const MultiViewDataset& ds) {
  std::vector<std::size_t> dims;
  for (const auto& v : ds.views) dims.push_back(v.cols());
  return dims;
}

TrainState load_model(const RunConfig& cfg, const fs::path& checkpoint) {
  const CommGraph g = cfg.graph();
  return load_checkpoint(checkpoint, &g);
}

int run_gen(const CommonOptions& opt, const fs::path& out) {
  const RunConfig cfg = resolve(opt);
  if (!cfg.data.path.empty()) throw ConfigError("data.path", "gen needs generator settings, not a dataset path");
  RunConfig whole = cfg;
  whole.data.train_per_class = 0;
  write_dataset(load_data(whole).first, out);
  write_snapshot(cfg, fs::path(out.string() + ".config.json"));
  std::cout << "wrote " << out.string() << '\n';
  return 0;
}

int run_train(const CommonOptions& opt, const fs::path& out, bool resume) {
  RunConfig cfg = resolve(opt);
  const auto [train_set, test_set] = load_data(cfg);
  fs::create_directories(out);
  const fs::path ckpt = out / "checkpoint.bin";
  TrainState state = resume ? load_model(cfg, ckpt)
                            : init_train_state(init_model(cfg.graph(), cfg.model_spec(input_dims(train_set)),
                                                          derive_seed(cfg.seed, "run.model")));
  write_snapshot(cfg, out / "config.resolved.json");
  cfg.train.checkpoint_path = ckpt;
  const TrainResult result = train(train_set, std::move(state), cfg.train);
  std::ofstream metrics(out / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  for (const auto& m : result.metrics) metrics << metrics_json_line(m) << '\n';
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << '\n';
  if (!result.metrics.empty()) std::cout << metrics_json_line(result.metrics.back()) << '\n';
  return 0;
}

int run_eval(const CommonOptions& opt, const fs::path& checkpoint, const fs::path& out) {
  const RunConfig cfg = resolve(opt);
  const TrainState state = load_model(cfg, checkpoint);
  const Model& model = state.model;
  const auto [train_set, test_set] = load_data(cfg);
  const auto train_h = embed_dataset(model, train_set);
  const auto test_h = embed_dataset(model, test_set);

  nlohmann::ordered_json report;
  report["retrieval"] = to_json(cross_modal_retrieval(model.sheaf, test_h, test_set.mask, cfg.eval.ks));
  if (test_set.labeled()) {
    nlohmann::ordered_json probe;
    for (NodeId i = 0; i < model.encoders.size(); ++i) {
      nlohmann::ordered_json per_node;
      for (auto k : cfg.eval.shots)
        per_node[std::to_string(k)] = few_shot_probe(train_h[i], train_set.labels, test_h[i], test_set.labels,
                                                     test_set.num_classes, k, derive_seed(cfg.seed, "run.probe", i));
      probe[std::to_string(i)] = per_node;
    }
    report["probe"] = probe;
    nlohmann::ordered_json zero_shot;
    const NodeId ref = cfg.eval.reference_node;
    for (NodeId t : model.graph().neighbors(ref))
      zero_shot[std::to_string(t)] = zero_shot_prototype(model.sheaf, ref, t, train_h[ref], train_set.labels,
                                                          test_h[t], test_set.labels, test_set.num_classes);
    report["zero_shot"] = {{"reference_node", ref}, {"targets", zero_shot}};
  }
  write_json(out, report);
  write_snapshot(cfg, fs::path(out.string() + ".config.json"));
  std::cout << report.dump(2) << '\n';
  return 0;
}

int run_infer(const CommonOptions& opt, const fs::path& checkpoint, const fs::path& out) {
  const RunConfig cfg = resolve(opt);
  const TrainState state = load_model(cfg, checkpoint);
  const auto [train_set, test_set] = load_data(cfg);
  if (!train_set.labeled()) throw ConfigError("data", "infer needs a labeled dataset");
  const NodeId task = cfg.eval.task_node;
  const auto train_h = embed_dataset(state.model, train_set);
  LinearProbe probe;
  probe.fit(train_h[task], train_set.labels, train_set.num_classes);
  nlohmann::ordered_json reports = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < cfg.eval.p_drop.size(); ++k) {
    const InferenceReport r = dropout_inference_experiment(state.model, test_set, task, probe, cfg.eval.p_drop[k],
                                                           derive_seed(cfg.seed, "run.infer", k),
                                                           cfg.eval.neighbor_selection);
    reports.push_back(to_json(r));
  }
  write_json(out, reports);
  write_snapshot(cfg, fs::path(out.string() + ".config.json"));
  std::cout << reports.dump(2) << '\n';
  return 0;
}

int run_check(std::uint64_t seed) {
  bool ok = true;
  for (const auto& r : run_selfcheck(seed)) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
    ok = ok && r.passed;
  }
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralized multimodal alignment with learned sheaf maps"};
  app.require_subcommand(1);

  CommonOptions gen_opt, train_opt, eval_opt, infer_opt;
  std::string gen_out, train_out, eval_out, infer_out, eval_ckpt, infer_ckpt;
  bool resume = false;
  std::uint64_t check_seed = 0;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic multi-view dataset (SHAF1)");
  add_common(gen, gen_opt);
  gen->add_option("-o,--out", gen_out, "Output dataset file")->required();

  auto* tr = app.add_subcommand("train", "Train all nodes; writes checkpoint.bin and metrics.jsonl");
  add_common(tr, train_opt);
  tr->add_option("-o,--out", train_out, "Output directory")->required();
  tr->add_flag("--resume", resume, "Continue from <out>/checkpoint.bin");

  auto* ev = app.add_subcommand("eval", "Retrieval, few-shot and zero-shot report");
  add_common(ev, eval_opt);
  ev->add_option("--checkpoint", eval_ckpt, "Trained checkpoint")->required();
  ev->add_option("-o,--out", eval_out, "Report file (JSON)")->required();

  auto* inf = app.add_subcommand("infer", "Missing-modality inference under dropout");
  add_common(inf, infer_opt);
  inf->add_option("--checkpoint", infer_ckpt, "Trained checkpoint")->required();
  inf->add_option("-o,--out", infer_out, "Report file (JSON)")->required();

  auto* chk = app.add_subcommand("check", "Run the invariant suite");
  chk->add_option("--seed", check_seed, "Seed for the random configurations");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return run_gen(gen_opt, gen_out);
    if (*tr) return run_train(train_opt, train_out, resume);
    if (*ev) return run_eval(eval_opt, eval_ckpt, eval_out);
    if (*inf) return run_infer(infer_opt, infer_ckpt, infer_out);
    if (*chk) return run_check(check_seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
