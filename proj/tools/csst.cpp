// csst: data generation, training, counterfactual dumps, evaluation,
// gradient checks and run reports.
//
//   csst gen-data   --out data/
//   csst train      --data data/ --out run/ --css on --cr g
//   csst eval       --data data/ --model run/model.ckpt --out run/
//   csst synth-dump --data data/ --model run/model.ckpt --out run/
//   csst gradcheck
//   csst report     --runs base/ css/ csst/ --labels base,css,csst --out cmp/ --svg
//
// Exit codes: 0 ok, 1 runtime failure (missing files, failed checks), 2 bad
// configuration or usage.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "csst/config.hpp"
#include "csst/css.hpp"
#include "csst/cst.hpp"
#include "csst/dataset.hpp"
#include "csst/eval.hpp"
#include "csst/gradcheck.hpp"
#include "csst/model.hpp"
#include "csst/report.hpp"
#include "csst/rng.hpp"

namespace fs = std::filesystem;
using namespace csst;

namespace {

constexpr int kExitConfig = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::string> fusion, css, cr;
  std::optional<double> delta, eta;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for data, training and rephrasings");
  cmd->add_option("--threads", c.threads, "worker cap");
  cmd->add_option("--fusion", c.fusion, "none, sigmoid_product or logit_sum");
  cmd->add_option("--css", c.css, "counterfactual synthesis on/off");
  cmd->add_option("--cr", c.cr, "contrastive loss: none, g or l");
  cmd->add_option("--delta", c.delta, "probability of Q-CSS");
  cmd->add_option("--eta", c.eta, "dynamic-K share threshold");
  cmd->add_option("--set", c.sets, "extra key=value override (repeatable)");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// defaults < file < --set < named flags
RunConfig resolve(const Common& c) {
  RunConfig cfg;
  if (!c.config.empty()) cfg.load_file(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "--set expects key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.set("seed", std::to_string(*c.seed));
  if (c.threads) cfg.set("threads", std::to_string(*c.threads));
  if (c.fusion) cfg.set("train.fusion", *c.fusion);
  if (c.css) cfg.set("train.css", *c.css);
  if (c.cr) cfg.set("train.cr", *c.cr);
  if (c.delta) cfg.set("css.delta", num(*c.delta));
  if (c.eta) cfg.set("css.eta", num(*c.eta));
  cfg.validate();
  cfg.eval.threads = cfg.threads;
  return cfg;
}

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << body;
}

void require(const fs::path& path) {
  if (!fs::exists(path)) throw std::runtime_error("missing file: " + path.string());
}

struct Data {
  std::vector<Sample> train, test;
  VocabSpec vocab;
};

Data load_data(const fs::path& dir) {
  for (const char* f : {"train.jsonl", "train.f32", "test.jsonl", "test.f32", "vocab.json"}) require(dir / f);
  return {load_split(dir / "train"), load_split(dir / "test"), load_vocab(dir / "vocab.json")};
}

ModelParams load_model(const fs::path& path) {
  require(path);
  return load_checkpoint(path);
}

int cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  const Benchmark b = generate_benchmark(cfg.data);
  fs::create_directories(out);
  save_split(out / "train", b.train);
  save_split(out / "test", b.test);
  save_vocab(out / "vocab.json", b.vocab);
  write_text(out / "config.txt", cfg.to_text());
  std::cout << "wrote " << b.train.size() << " train / " << b.test.size() << " test samples to " << out.string()
            << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out, const std::string& init) {
  const Data data = load_data(data_dir);
  std::optional<Trainer> trainer;
  if (init.empty()) {
    trainer.emplace(data.train, data.vocab, cfg.train, cfg.css);
  } else {
    ModelParams start = load_model(init);
    start.set_fusion_mode(cfg.train.fusion);
    trainer.emplace(std::move(start), data.train, data.vocab, cfg.train, cfg.css);
  }
  std::vector<EpochStats> stats;
  for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
    stats.push_back(trainer->run_epoch());
    const auto& s = stats.back();
    std::printf("epoch %3zu  xe %.4f  xe_cf %.4f  cr %.4f  total %.4f  train_acc %.2f\n", s.epoch, s.xe_orig,
                s.xe_cf, s.cr, s.total, s.train_acc);
  }
  fs::create_directories(out);
  save_checkpoint(out / "model.ckpt", trainer->params());
  write_training_csv(out / "training.csv", stats);
  write_text(out / "config.txt", cfg.to_text());
  return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& data_dir, const fs::path& model, const fs::path& out) {
  const Data data = load_data(data_dir);
  const ModelParams params = load_model(model);
  const MetricsReport report = evaluate(params, data.train, data.test, data.vocab, cfg.eval);
  fs::create_directories(out);
  write_metrics(out, report);
  std::printf("accuracy %.2f  ci %.4f\n", report.accuracy.overall, report.ci);
  return 0;
}

int cmd_synth_dump(const RunConfig& cfg, const fs::path& data_dir, const fs::path& model, const fs::path& out,
                   const std::string& split, std::size_t limit) {
  if (split != "train" && split != "test") throw ConfigError("--split", "must be train or test");
  const Data data = load_data(data_dir);
  const ModelParams params = load_model(model);
  const auto& samples = split == "train" ? data.train : data.test;
  const std::size_t n = limit ? std::min(limit, samples.size()) : samples.size();

  fs::create_directories(out);
  std::ofstream f(out / "counterfactuals.jsonl", std::ios::trunc | std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + (out / "counterfactuals.jsonl").string());
  Rng rng(cfg.train.seed, 202);
  for (std::size_t i = 0; i < n; ++i) {
    const CounterfactualSample cf = synthesize(params, samples[i], data.vocab, cfg.css, rng);
    nlohmann::ordered_json j;
    j["origin_id"] = cf.origin_id;
    j["kind"] = to_string(cf.kind);
    j["masked"] = cf.masked;
    j["kept"] = cf.kept;
    auto answers = nlohmann::ordered_json::array();
    for (const auto& [id, t] : cf.answers) answers.push_back({id, t});
    j["answers"] = answers;
    j["fell_back"] = cf.fell_back;
    j["scores"] = {{"anchor", cf.scores.anchor}, {"units", cf.scores.units}, {"scores", cf.scores.scores}};
    f << j.dump() << '\n';
  }
  std::cout << "wrote " << n << " counterfactuals\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int points, double tol, const std::string& out) {
  const auto results = run_gradcheck_suite(seed, points, tol);
  bool ok = true;
  std::printf("%-40s %6s %12s  %s\n", "check", "points", "max_error", "result");
  for (const auto& r : results) {
    std::printf("%-40s %6d %12.3e  %s\n", r.name.c_str(), r.points, r.max_error, r.passed() ? "pass" : "FAIL");
    ok = ok && r.passed();
  }
  if (!out.empty()) {
    std::string csv = "check,points,max_error,tolerance,passed\n";
    for (const auto& r : results)
      csv += r.name + "," + std::to_string(r.points) + "," + num(r.max_error) + "," + num(r.tolerance) + "," +
             (r.passed() ? "1" : "0") + "\n";
    const fs::path p(out);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    write_text(p, csv);
  }
  std::printf("%zu checks, %s\n", results.size(), ok ? "all passed" : "FAILURES");
  return ok ? 0 : 1;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& labels_arg, const fs::path& out, bool svg) {
  std::vector<std::string> labels;
  if (!labels_arg.empty()) {
    std::size_t start = 0;
    while (true) {
      const auto comma = labels_arg.find(',', start);
      labels.push_back(labels_arg.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (labels.size() != dirs.size()) throw ConfigError("--labels", "need one label per run directory");
  }
  std::vector<RunMetrics> runs;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const fs::path dir(dirs[i]);
    runs.push_back(load_run_metrics(dir, labels.empty() ? dir.filename().string() : labels[i]));
  }
  write_report(out, runs, svg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"counterfactual synthesis and contrastive training on a synthetic VQA benchmark"};
  app.require_subcommand(1);

  Common common;
  std::string out, data_dir, model, init, split = "test", labels, gc_out;
  std::size_t limit = 0;
  std::uint64_t gc_seed = 7;
  int gc_points = 10;
  double gc_tol = 1e-4;
  std::vector<std::string> runs;
  bool svg = false, list_keys = false;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic benchmark");
  add_common(gen, common);
  gen->add_option("--out", out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train, common);
  train->add_option("--data", data_dir, "directory written by gen-data")->required();
  train->add_option("--out", out, "output directory")->required();
  train->add_option("--init", init, "checkpoint to continue from");

  auto* synth = app.add_subcommand("synth-dump", "write one counterfactual per sample as JSONL");
  add_common(synth, common);
  synth->add_option("--data", data_dir, "directory written by gen-data")->required();
  synth->add_option("--model", model, "checkpoint")->required();
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--split", split, "train or test");
  synth->add_option("--limit", limit, "first N samples only (0 = all)");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, common);
  eval->add_option("--data", data_dir, "directory written by gen-data")->required();
  eval->add_option("--model", model, "checkpoint")->required();
  eval->add_option("--out", out, "output directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every primitive and the model");
  grad->add_option("--seed", gc_seed, "seed for the check points");
  grad->add_option("--points", gc_points, "random points per check")->check(CLI::PositiveNumber);
  grad->add_option("--tol", gc_tol, "relative error tolerance");
  grad->add_option("--out", gc_out, "also write the table as CSV");

  auto* report = app.add_subcommand("report", "combine metrics of several runs");
  report->add_option("--runs", runs, "run directories containing metrics.csv")->required();
  report->add_option("--labels", labels, "comma-separated labels, one per run");
  report->add_option("--out", out, "output directory")->required();
  report->add_flag("--svg", svg, "also emit a bar chart");

  auto* keys = app.add_subcommand("config-keys", "list configuration keys");
  keys->callback([&] { list_keys = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (list_keys) {
      for (const auto& k : config_keys()) std::printf("%-24s %s\n", k.name.c_str(), k.help.c_str());
      return 0;
    }
    if (*grad) return cmd_gradcheck(gc_seed, gc_points, gc_tol, gc_out);
    if (*report) return cmd_report(runs, labels, out, svg);

    const RunConfig cfg = resolve(common);
    if (*gen) return cmd_gen_data(cfg, out);
    if (*train) return cmd_train(cfg, data_dir, out, init);
    if (*synth) return cmd_synth_dump(cfg, data_dir, model, out, split, limit);
    if (*eval) return cmd_eval(cfg, data_dir, model, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
