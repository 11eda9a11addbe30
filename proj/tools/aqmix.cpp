// aqmix command-line driver: train / eval / oracle / analyze / verify.
//
// Exit codes: 0 success, 1 a verify property failed, 2 bad input
// (config, suite, checkpoint, flags), 3 training fault.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "aqmix/analysis.hpp"
#include "aqmix/checkpoint.hpp"
#include "aqmix/config.hpp"
#include "aqmix/verify.hpp"

namespace fs = std::filesystem;
using namespace aqmix;

namespace {

constexpr int kOk = 0, kVerifyFailed = 1, kBadInput = 2, kTrainingFault = 3;

std::vector<TaskSpec> load_suite(const std::string& path) {
  if (path.empty()) throw ConfigError("no task suite given (use --suite or the config's suite key)");
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open suite '" + path + "'");
  auto tasks = parse_suite(in);
  if (tasks.empty()) throw ConfigError("suite '" + path + "' holds no tasks");
  return tasks;
}

// Writes to --out when given, else stdout.
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw ConfigError("cannot write '" + path + "'");
    }
  }
  std::ostream& get() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

struct Options {
  std::string config, out, checkpoint, suite;
  std::optional<std::uint64_t> seed;
  bool adversary = false;
};

int cmd_train(const Options& o) {
  if (o.out.empty()) throw ConfigError("train needs --out");
  std::optional<Trainer> trainer;
  std::vector<TaskSpec> suite;
  if (!o.checkpoint.empty()) {
    TrainerState state = load_checkpoint(o.checkpoint);
    suite = load_suite(o.suite.empty() ? state.config.suite : o.suite);
    trainer.emplace(std::move(state), suite);
  } else {
    if (o.config.empty()) throw ConfigError("train needs --config (or --checkpoint to resume)");
    RunConfig cfg = load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (!o.suite.empty()) cfg.suite = o.suite;
    suite = load_suite(cfg.suite);
    trainer.emplace(cfg, suite);
  }
  const RunConfig& cfg = trainer->config();
  fs::create_directories(o.out);
  const fs::path metrics_path = fs::path(o.out) / "metrics.csv";
  const bool resuming = trainer->state().episodes_done > 0 && fs::exists(metrics_path);
  if (resuming) {
    // rows written after the checkpoint was taken are replayed, so drop them
    std::ifstream old(metrics_path);
    std::string kept, line;
    for (std::uint64_t k = 0; k <= trainer->state().episodes_done && std::getline(old, line); ++k)
      kept += line + '\n';
    old.close();
    std::ofstream(metrics_path, std::ios::trunc) << kept;
  }
  std::ofstream metrics(metrics_path, resuming ? std::ios::app : std::ios::trunc);
  if (!metrics) throw ConfigError("cannot write '" + metrics_path.string() + "'");
  if (!resuming) metrics << metrics_header() << '\n';

  while (trainer->state().episodes_done < cfg.episodes) {
    const MetricsRecord m = trainer->train_episode();
    metrics << metrics_row(m) << '\n';
    metrics.flush();
    const std::uint64_t done = trainer->state().episodes_done;
    if (cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 && done < cfg.episodes)
      save_checkpoint(trainer->state(), fs::path(o.out) / ("checkpoint_" + std::to_string(done) + ".aqmx"));
  }
  save_checkpoint(trainer->state(), fs::path(o.out) / "final.aqmx");
  std::cout << "trained " << trainer->state().episodes_done << " episodes, "
            << trainer->state().gradient_steps << " gradient steps -> " << o.out << '\n';
  return kOk;
}

struct LoadedPolicy {
  TrainerState state;
  QMixModel model;
};

LoadedPolicy load_policy(const Options& o) {
  if (o.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  LoadedPolicy lp;
  lp.state = load_checkpoint(o.checkpoint);
  ParameterStore layout;
  lp.model = QMixModel(layout, ModelDims::from(lp.state.config));
  return lp;
}

std::vector<TaskSpec> policy_suite(const Options& o, const RunConfig& cfg) {
  auto suite = load_suite(o.suite);
  for (const auto& t : suite)
    if (t.n_agents() != cfg.n_agents)
      throw ConfigError("suite has " + std::to_string(t.n_agents()) + "-agent tasks, checkpoint expects " +
                        std::to_string(cfg.n_agents));
  return suite;
}

int cmd_eval(const Options& o) {
  LoadedPolicy lp = load_policy(o);
  const RunConfig& cfg = lp.state.config;
  const auto suite = policy_suite(o, cfg);
  const EvalReport rep = evaluate_policy(greedy_policy(lp.model, lp.state.online), cfg, suite,
                                         o.seed.value_or(0), o.adversary);
  Output out(o.out);
  std::ostream& os = out.get();
  os << "metric,value\n"
     << "tasks," << rep.clean.tasks << '\n'
     << "accuracy," << num(rep.clean.accuracy) << '\n'
     << "tokens," << num(rep.clean.tokens) << '\n'
     << "reward," << num(rep.clean.reward) << '\n'
     << "solo_share," << num(solo_share(rep.clean)) << '\n';
  if (rep.adversary) {
    const auto& a = *rep.adversary;
    os << "adversarial_accuracy," << num(a.attacked.accuracy) << '\n'
       << "adversarial_tokens," << num(a.attacked.tokens) << '\n'
       << "adversarial_reward," << num(a.attacked.reward) << '\n'
       << "delta," << num(a.delta) << '\n'
       << "adversary_out_edges," << num(a.adversary_out_edges) << '\n'
       << "clean_slot_out_edges," << num(a.clean_slot_out_edges) << '\n';
  }
  os << "\ntask,mode,accuracy,tokens,reward,actions\n";
  for (std::size_t k = 0; k < rep.clean_episodes.size(); ++k) {
    const Episode& ep = rep.clean_episodes[k];
    os << k << ",clean," << num(ep.accuracy) << ',' << num(ep.tokens) << ',' << num(ep.reward) << ','
       << actions_string(ep) << '\n';
    if (k < rep.attacked_episodes.size()) {
      const Episode& aep = rep.attacked_episodes[k];
      os << k << ",adversary_" << rep.adversary_slots[k] << ',' << num(aep.accuracy) << ','
         << num(aep.tokens) << ',' << num(aep.reward) << ',' << actions_string(aep) << '\n';
    }
  }
  return kOk;
}

int cmd_oracle(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  const auto suite = load_suite(o.suite.empty() ? cfg.suite : o.suite);
  const OracleTable tab = oracle_table(cfg, suite);
  Output out(o.out);
  write_oracle_csv(out.get(), tab);
  return kOk;
}

int cmd_analyze(const Options& o) {
  LoadedPolicy lp = load_policy(o);
  const RunConfig& cfg = lp.state.config;
  const auto suite = policy_suite(o, cfg);
  const EvalReport rep = evaluate_policy(greedy_policy(lp.model, lp.state.online), cfg, suite,
                                         o.seed.value_or(0), false);
  Output out(o.out);
  std::ostream& os = out.get();
  write_topology_csv(os, analyze_topology(rep.clean_episodes, cfg.n_agents));
  os << "\n# summary\nmetric,value\n"
     << "solo_share," << num(solo_share(rep.clean)) << '\n'
     << "tokens," << num(rep.clean.tokens) << '\n'
     << "accuracy," << num(rep.clean.accuracy) << '\n';
  return kOk;
}

int cmd_verify(const Options&) {
  bool ok = true;
  for (const CheckResult& r : run_verify_suite()) {
    std::cout << r.name << ": " << (r.passed ? "PASS" : "FAIL") << " worst=" << r.worst << " (" << r.detail
              << ")\n";
    if (!r.passed) {
      std::cerr << "property violated: " << r.name << '\n';
      ok = false;
    }
  }
  return ok ? kOk : kVerifyFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QMIX communication-topology learning on the ClueRelay environment"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto seed_opt = [&](CLI::App* sub) {
    sub->add_option("--seed", seed, "Random seed (overrides the config)");
  };
  auto* train = app.add_subcommand("train", "Train and write metrics.csv plus checkpoints to --out");
  train->add_option("--config", o.config, "Run configuration file");
  train->add_option("--out", o.out, "Output directory");
  train->add_option("--checkpoint", o.checkpoint, "Resume from this checkpoint");
  train->add_option("--suite", o.suite, "Training suite (overrides the config)");
  seed_opt(train);

  auto* eval = app.add_subcommand("eval", "Greedy evaluation of a checkpoint on a suite");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  eval->add_option("--suite", o.suite, "Task suite")->required();
  eval->add_flag("--adversary", o.adversary, "Also evaluate with one injected adversary per task");
  eval->add_option("--out", o.out, "Write the report here instead of stdout");
  seed_opt(eval);

  auto* oracle = app.add_subcommand("oracle", "Exhaustive open-loop optimum per task");
  oracle->add_option("--config", o.config, "Run configuration (reward weights, costs, rounds)");
  oracle->add_option("--suite", o.suite, "Task suite (defaults to the config's)");
  oracle->add_option("--out", o.out, "Write the table here instead of stdout");

  auto* analyze = app.add_subcommand("analyze", "Per-round action and topology statistics");
  analyze->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  analyze->add_option("--suite", o.suite, "Task suite")->required();
  analyze->add_option("--out", o.out, "Write the tables here instead of stdout");
  seed_opt(analyze);

  auto* verify = app.add_subcommand("verify", "Run the property checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }
  for (auto* sub : {train, eval, analyze})
    if (sub->parsed() && sub->count("--seed")) o.seed = seed;

  try {
    if (train->parsed()) return cmd_train(o);
    if (eval->parsed()) return cmd_eval(o);
    if (oracle->parsed()) return cmd_oracle(o);
    if (analyze->parsed()) return cmd_analyze(o);
    if (verify->parsed()) return cmd_verify(o);
  } catch (const TrainingFault& e) {
    std::cerr << "training fault: " << e.what() << '\n';
    return kTrainingFault;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  }
  return kBadInput;
}
