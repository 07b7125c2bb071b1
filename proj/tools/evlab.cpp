// Command-line driver: corpus generation, donor extraction, detector and
// agent training, evaluation and reporting.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "evlab/error.hpp"
#include "evlab/pipeline.hpp"

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2, kInvariant = 3 };

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> detector;
  std::optional<std::string> agent;
  std::optional<int> episodes;
  std::optional<std::string> access;
  std::optional<std::string> reward_mode;
  std::optional<std::string> sign;
  std::optional<int> max_steps;
  std::optional<double> terminal_reward;
  std::optional<int> train_malicious, test_malicious, donor_benign, detector_malicious, detector_benign;
};

evlab::RunConfig build_config(const std::string& config_path, const Overrides& o) {
  evlab::RunConfig c = config_path.empty() ? evlab::RunConfig{} : evlab::load_config(config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.detector) c.detector.kind = *o.detector;
  if (o.agent) c.agent.kind = *o.agent;
  if (o.episodes) c.agent.episodes = *o.episodes;
  if (o.access) c.env.detector_access = *o.access;
  if (o.reward_mode) c.env.reward_mode = *o.reward_mode;
  if (o.sign) c.env.sign = *o.sign;
  if (o.max_steps) c.env.max_steps = *o.max_steps;
  if (o.terminal_reward) c.env.terminal_reward = *o.terminal_reward;
  if (o.train_malicious) c.corpus.train_malicious = *o.train_malicious;
  if (o.test_malicious) c.corpus.test_malicious = *o.test_malicious;
  if (o.donor_benign) c.corpus.donor_benign = *o.donor_benign;
  if (o.detector_malicious) c.corpus.detector_malicious = *o.detector_malicious;
  if (o.detector_benign) c.corpus.detector_benign = *o.detector_benign;
  c.validate();
  return c;
}

void print_metrics_line(const char* what, const evlab::RunMetrics& m) {
  std::printf("%s: %llu episodes, %llu evaded, %llu corrupted, %llu skipped, evasion rate %.4f, avg steps %.2f\n",
              what, static_cast<unsigned long long>(m.episodes), static_cast<unsigned long long>(m.evaded),
              static_cast<unsigned long long>(m.corrupted), static_cast<unsigned long long>(m.skipped),
              m.evasion_rate, m.avg_steps_to_evade);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"evlab: reinforcement-learning evasion lab over synthetic binaries"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string out = ".";
  Overrides o;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "global seed (overrides the config)");
  app.add_option("--out", out, "output directory; relative config paths resolve against it");

  auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic corpus and its manifest");
  gen->add_option("--train-malicious", o.train_malicious);
  gen->add_option("--test-malicious", o.test_malicious);
  gen->add_option("--donor-benign", o.donor_benign);
  gen->add_option("--detector-malicious", o.detector_malicious);
  gen->add_option("--detector-benign", o.detector_benign);

  auto* donors = app.add_subcommand("build-donors", "extract the donor database from the benign split");

  auto* det = app.add_subcommand("train-detector", "train a surrogate detector");
  det->add_option("--detector", o.detector, "feature | byte | image");

  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("--detector", o.detector, "feature | byte | image");
    sub->add_option("--agent", o.agent, "dqn | reinforce | random");
    sub->add_option("--access", o.access, "score | label (hard-label environment)");
    sub->add_option("--reward-mode", o.reward_mode, "score | hard-label");
    sub->add_option("--sign", o.sign, "score-decrease | score-increase");
    sub->add_option("--max-steps", o.max_steps);
    sub->add_option("--terminal-reward", o.terminal_reward);
  };
  auto* train = app.add_subcommand("train-agent", "train an agent against a detector");
  add_run_flags(train);
  train->add_option("--episodes", o.episodes);
  auto* eval = app.add_subcommand("evaluate", "evaluate a frozen agent on the test split");
  add_run_flags(eval);
  auto* report = app.add_subcommand("report", "rebuild the vulnerability report from saved traces");
  add_run_flags(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    const auto config = build_config(config_path, o);
    const std::filesystem::path dir(out);

    if (gen->parsed()) {
      const auto s = evlab::cmd_gen_corpus(config, dir);
      std::printf("corpus: %zu train, %zu test, %zu donor, %zu detector samples\n", s.train, s.test, s.donor,
                  s.detector);
    } else if (donors->parsed()) {
      const auto d = evlab::cmd_build_donors(config, dir);
      std::printf("donors: %zu section names, %zu imports, %zu strings, %zu blobs, %zu binaries\n",
                  d.section_names.size(), d.imports.size(), d.strings.size(), d.data_blobs.size(),
                  d.benign_binaries.size());
    } else if (det->parsed()) {
      const auto r = evlab::cmd_train_detector(config, dir);
      std::printf("detector %s: threshold %.4f, held-out AUC %.4f (%zu train, %zu held out)\n",
                  config.detector.kind.c_str(), r.detector.threshold(), r.holdout_auc, r.train_count,
                  r.holdout_count);
    } else if (train->parsed()) {
      print_metrics_line("training", evlab::cmd_train_agent(config, dir).metrics);
    } else if (eval->parsed()) {
      const auto s = evlab::cmd_evaluate(config, dir);
      std::cout << s.table;
    } else if (report->parsed()) {
      const auto r = evlab::cmd_report(config, dir);
      std::printf("report: %zu evaded traces\n", r.evaded.size());
    }
  } catch (const evlab::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const evlab::InvariantViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
