// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "aqmix/analysis.hpp"
#include "aqmix/checkpoint.hpp"
#include "aqmix/config.hpp"
#include "aqmix/verify.hpp"

using namespace aqmix;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

std::string fmt(double v, int digits = 6) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::vector<TaskSpec> load_suite(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  return parse_suite(in);
}

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  std::cout << "criterion " << id << " [" << name << "]: " << (pass ? "PASS" : "FAIL") << "  " << detail
            << std::endl;
  if (!pass) ++failures;
}

struct TrainedRun {
  std::uint64_t seed = 0;
  double seconds = 0.0;
  TrainerState state;
};

TrainedRun train(const RunConfig& base, const std::vector<TaskSpec>& suite, std::uint64_t seed) {
  RunConfig cfg = base;
  cfg.seed = seed;
  const auto t0 = Clock::now();
  Trainer tr(cfg, suite);
  while (tr.state().episodes_done < cfg.episodes) tr.train_episode();
  return {seed, seconds_since(t0), tr.state()};
}

EvalReport greedy_eval(const TrainerState& s, const std::vector<TaskSpec>& suite, bool adversary) {
  ParameterStore layout;
  const QMixModel model(layout, ModelDims::from(s.config));
  return evaluate_policy(greedy_policy(model, s.online), s.config, suite, 0, adversary);
}

// Smallest gap between a task's best open-loop return and the next distinct
// return, over the suite.
double min_action_gap(const RunConfig& cfg, const std::vector<TaskSpec>& suite) {
  const RewardWeights w = RewardWeights::from(cfg);
  double gap = 1e300;
  for (const TaskSpec& t : suite) {
    std::vector<double> returns;
    const std::uint64_t per_round = 216;
    for (std::uint64_t a = 0; a < per_round; ++a)
      for (std::uint64_t b = 0; b < per_round; ++b) {
        const std::vector<JointAction> seq{decode_joint(a, 3), decode_joint(b, 3)};
        const EpisodeScore s = evaluate_sequence(t, seq, cfg.env);
        returns.push_back(reward(s.accuracy, s.tokens, w));
      }
    std::sort(returns.begin(), returns.end());
    const double best = returns.back();
    for (auto it = returns.rbegin(); it != returns.rend(); ++it)
      if (*it < best) {
        gap = std::min(gap, best - *it);
        break;
      }
  }
  return gap;
}

}  // namespace

int main() {
  const std::string data = AQMIX_DATA_DIR;
  try {
    // 1. IGM equivalence.
    {
      const auto t0 = Clock::now();
      MixerDrawOptions o;
      const CheckResult r = check_igm(o);
      const double secs = seconds_since(t0);
      report(1, "igm", r.passed && secs < 30.0, r.detail + ", " + fmt(secs, 3) + " s (limit 30 s)");
    }

    // 2. Monotonicity, plus the signed-mixing counterexample.
    {
      MixerDrawOptions o;
      const CheckResult mono = check_monotonicity(o);
      MixerDrawOptions signed_opts = o;
      signed_opts.monotone = false;
      const CheckResult witness = check_igm(signed_opts);
      report(2, "monotonicity", mono.passed && !witness.passed,
             mono.detail + "; without abs(): " + witness.detail);
    }

    // 3. Full-stack gradient check.
    {
      const auto t0 = Clock::now();
      const CheckResult r = check_gradients(1e-4);
      const double secs = seconds_since(t0);
      report(3, "gradient", r.passed && secs < 120.0, r.detail + ", " + fmt(secs, 3) + " s (limit 120 s)");
    }

    // 4 and 6 share the hard-suite runs; 5 trains on the easy suite.
    const RunConfig hard_cfg = load_config(data + "/hard.cfg");
    const RunConfig easy_cfg = load_config(data + "/easy.cfg");
    const auto hard = load_suite(hard_cfg.suite);
    const auto easy = load_suite(easy_cfg.suite);
    const std::vector<std::uint64_t> seeds{1, 2, 3};

    const OracleTable oracle = oracle_table(hard_cfg, hard);
    std::cout << "info: hard-suite oracle mean return " << fmt(oracle.mean_return, 10)
              << ", smallest action gap " << fmt(min_action_gap(hard_cfg, hard)) << std::endl;

    std::vector<TrainedRun> hard_runs;
    for (auto seed : seeds) {
      hard_runs.push_back(train(hard_cfg, hard, seed));
      std::cout << "info: hard seed " << seed << " trained " << hard_cfg.episodes << " episodes in "
                << fmt(hard_runs.back().seconds, 4) << " s" << std::endl;
    }

    // 4. Learning against the oracle.
    {
      std::vector<double> ratios;
      std::string detail;
      double slowest = 0.0;
      for (const auto& run : hard_runs) {
        const double ret = greedy_eval(run.state, hard, false).clean.reward;
        ratios.push_back(ret / oracle.mean_return);
        slowest = std::max(slowest, run.seconds);
        detail += "seed " + std::to_string(run.seed) + " " + fmt(ret) + " (" + fmt(100 * ratios.back(), 4) + "%); ";
      }
      const double med = median3(ratios);
      report(4, "learning", med >= 0.9 && slowest < 300.0,
             detail + "median " + fmt(100 * med, 4) + "% of oracle " + fmt(oracle.mean_return) +
                 " (need 90%), slowest seed " + fmt(slowest, 4) + " s (limit 300 s)");
    }

    // 6. Adversary isolation, against a frozen all-broadcast topology.
    {
      const EvalReport bc = evaluate_policy(fixed_policy(JointAction(3, CommAction::broadcast_all)), hard_cfg,
                                            hard, 0, true);
      const double bc_delta = bc.adversary->delta;
      std::vector<double> out_margin, delta_margin;
      std::string detail;
      for (const auto& run : hard_runs) {
        const EvalReport rep = greedy_eval(run.state, hard, true);
        const AdversaryReport& a = *rep.adversary;
        out_margin.push_back(a.clean_slot_out_edges - a.adversary_out_edges);
        delta_margin.push_back(bc_delta - a.delta);
        detail += "seed " + std::to_string(run.seed) + " adversary out-edges " + fmt(a.adversary_out_edges, 4) +
                  " vs clean slot " + fmt(a.clean_slot_out_edges, 4) + ", delta " + fmt(a.delta, 4) + "; ";
      }
      const bool pass = median3(out_margin) > 0.0 && median3(delta_margin) > 0.0;
      report(6, "adversary", pass,
             detail + "all-broadcast delta " + fmt(bc_delta, 4) + " (median over seeds must be strictly better on both)");
    }

    // 5. Easy-suite sparsity.
    {
      const EvalReport bc = evaluate_policy(fixed_policy(JointAction(3, CommAction::broadcast_all)), easy_cfg,
                                            easy, 0, false);
      std::vector<double> solo, tokens;
      std::string detail;
      for (auto seed : seeds) {
        const TrainedRun run = train(easy_cfg, easy, seed);
        const EvalReport rep = greedy_eval(run.state, easy, false);
        solo.push_back(solo_share(rep.clean));
        tokens.push_back(rep.clean.tokens);
        detail += "seed " + std::to_string(seed) + " solo " + fmt(100 * solo.back(), 4) + "% tokens " +
                  fmt(tokens.back(), 5) + "; ";
        std::cout << "info: easy seed " << seed << " trained in " << fmt(run.seconds, 4) << " s" << std::endl;
      }
      const double med_solo = median3(solo), med_tokens = median3(tokens);
      report(5, "sparsity", med_solo >= 0.7 && med_tokens < 0.5 * bc.clean.tokens,
             detail + "median solo " + fmt(100 * med_solo, 4) + "% (need 70%), median tokens " +
                 fmt(med_tokens, 5) + " vs all-broadcast " + fmt(bc.clean.tokens, 5) + " (need < 50%)");
    }

    // 7. Reward arithmetic.
    {
      const RewardWeights w = RewardWeights::from(hard_cfg);
      const double r0 = reward(1.0, 0.0, w);
      const double r1 = reward(1.0, 10000.0, w);
      const double r2 = reward(1.0, 25000.0, w);
      const bool pass = std::abs(r0 - 1.25) <= 1e-12 && std::abs(r1 - 1.15) <= 1e-12 && std::abs(r2 - r1) <= 1e-12;
      report(7, "reward", pass,
             "R(1,0)=" + fmt(r0, 17) + " R(1,10000)=" + fmt(r1, 17) + " R(1,25000)=" + fmt(r2, 17));
    }

    // 8. Determinism and persistence, at full network width.
    {
      RunConfig cfg = hard_cfg;
      cfg.episodes = 40;
      cfg.target_interval = 10;
      const RunTrace a = trace_run(cfg, hard);
      const RunTrace b = trace_run(cfg, hard);
      const bool same = a.metrics == b.metrics && a.checkpoint == b.checkpoint;
      const bool round_trip = serialize_checkpoint(deserialize_checkpoint(a.checkpoint)) == a.checkpoint;

      Trainer first(cfg, hard);
      for (int k = 0; k < 20; ++k) first.train_episode();
      const std::string mid = serialize_checkpoint(first.state());
      std::vector<std::string> straight;
      for (int k = 20; k < 40; ++k) straight.push_back(num(first.train_episode().td_loss));
      Trainer resumed(deserialize_checkpoint(mid), hard);
      std::size_t diverged = 0;
      for (int k = 20; k < 40; ++k) diverged += num(resumed.train_episode().td_loss) != straight[k - 20];
      const bool resume_ok = diverged == 0 && serialize_checkpoint(resumed.state()) == serialize_checkpoint(first.state());

      const CheckResult small = check_determinism();
      report(8, "determinism", same && round_trip && resume_ok && small.passed,
             std::string("repeat run ") + (same ? "identical" : "differs") + ", save/load/save " +
                 (round_trip ? "identical" : "differs") + ", resume " + std::to_string(diverged) +
                 " of 20 losses differ; " + small.detail);
    }
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
