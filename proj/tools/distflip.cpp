// distflip: train a source classifier, generate flip data, distill a learned
// attacker, benchmark attackers and run black-box transfer, one stage per
// subcommand. Outputs land in out_dir and each embeds the run config.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "distflip/cli/pipeline.hpp"

namespace {

using namespace distflip;
using cli::RunConfig;

constexpr int kOk = 0, kConfig = 2, kMissing = 3, kRuntime = 4;

int fail(int code, const std::string& kind, const std::string& message) {
  std::cerr << nlohmann::json{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}}.dump() << std::endl;
  return code;
}

struct Overrides {
  std::string config_file;
  std::string profile;
  std::vector<std::string> sets;   // --set key=value
  std::vector<std::string> flags;  // dedicated flags as key=value, applied after --set
};

/// A flag that writes one config key; unset flags leave the key alone.
void bind_key(CLI::App* app, std::vector<std::string>& sets, const std::string& flag, const std::string& key,
          const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&sets, key](const std::string& v) { sets.push_back(key + "=" + v); }, help + " [" + key + "]");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  if (!o.config_file.empty()) cli::load_config_file(c, o.config_file);
  if (!o.profile.empty()) cli::apply_profile(c, o.profile);
  for (const auto& kv : o.sets) cli::set_assignment(c, kv);
  for (const auto& kv : o.flags) cli::set_assignment(c, kv);
  cli::validate(c);
  try {
    distill::GeneratorSpec{c.attack.generator}.beam();
  } catch (const std::invalid_argument& e) {
    throw cli::ConfigError(std::string("attack.generator: ") + e.what());
  }
  return c;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Character-flip adversarial attacks: white-box search, a distilled learned attacker, "
               "benchmarks and black-box transfer."};
  app.require_subcommand(0, 1);
  app.footer(
      "Settings resolve as: built-in defaults, then --config FILE (its profile line first), then --profile, "
      "then --set and the dedicated flags, which win. Exit codes: 0 ok, 2 config error, 3 missing artifact, "
      "4 runtime failure; errors are printed to stderr as JSON.");

  Overrides o;
  bool print_config = false;
  app.add_option("--config", o.config_file, "Key-value config file ([section] headers, key = value, # comments)");
  app.add_option("--profile", o.profile, "Model dimensions: desk (default) or paper");
  app.add_option("--set", o.sets, "Override any config key, e.g. --set attack.tau=0.2 (repeatable)");
  bind_key(&app, o.flags, "--seed", "seed", "Master seed for every random choice");
  bind_key(&app, o.flags, "--out-dir", "out_dir", "Directory for all artifacts");
  bind_key(&app, o.flags, "--threads", "threads", "Worker threads, 0 = all cores");
  app.add_flag("--print-config", print_config, "Print the resolved config as a config file and exit");

  auto* synth = app.add_subcommand("synth-corpus", "Write the training corpus and the synthetic held-out set");
  bind_key(synth, o.flags, "--n", "corpus.n", "Synthetic corpus size");
  bind_key(synth, o.flags, "--toxic-fraction", "corpus.toxic_fraction", "Share of toxic sentences");
  bind_key(synth, o.flags, "--heldout-n", "corpus.heldout_n", "Held-out set size");
  bind_key(synth, o.flags, "--csv", "corpus.csv", "Ingest this id,comment_text,toxic CSV instead of synthesizing");

  bool independent = false;
  auto* train_src = app.add_subcommand("train-source", "Train the source classifier on the corpus");
  bind_key(train_src, o.flags, "--epochs", "source.epochs", "Training epochs");
  train_src->add_flag("--independent", independent,
                      "Train the mock endpoint's model (seed + mock.seed_offset) into mock_source.ckpt");

  auto* gen = app.add_subcommand("gen-data", "Attack toxic training sentences and emit flip pairs");
  bind_key(gen, o.flags, "--generator", "attack.generator", "hotflip-K or hotflip-plus");
  bind_key(gen, o.flags, "--tau", "attack.tau", "Stop once the toxicity is below this");
  bind_key(gen, o.flags, "--limit", "attack.gen_limit", "Attack at most this many sentences, 0 = all");

  auto* train_att = app.add_subcommand("train-attacker", "Distill the flip pairs into the learned attacker");
  bind_key(train_att, o.flags, "--epochs", "attacker.epochs", "Training epochs");
  bind_key(train_att, o.flags, "--embeddings", "attacker.embeddings", "Pretrained character vectors (char v1 v2 ...)");

  std::string attacker = "distflip", text;
  auto* attack = app.add_subcommand("attack", "Attack one text and print the trace as JSON");
  attack->add_option("--attacker", attacker, "distflip, hotflip-K, hotflip-plus, random or attention");
  attack->add_option("--text", text, "Text to attack")->required();

  auto* bench = app.add_subcommand("bench", "Compare attackers on held-out toxic sentences");
  bind_key(bench, o.flags, "--attackers", "bench.attackers", "Comma-separated attacker names");
  bind_key(bench, o.flags, "--n", "bench.n", "Number of held-out toxic sentences");
  bind_key(bench, o.flags, "--timing-repeats", "bench.timing_repeats", "Timed repetitions for wall-clock figures");

  auto* bb = app.add_subcommand("blackbox", "Transfer attack against a remote toxicity endpoint");
  bind_key(bb, o.flags, "--endpoint", "endpoint.url", "Scoring endpoint URL");
  bind_key(bb, o.flags, "--token", "endpoint.token", "Auth token (never written to outputs)");
  bind_key(bb, o.flags, "--protocol", "endpoint.protocol", "local or perspective");
  bind_key(bb, o.flags, "--rate", "endpoint.rate", "Requests per second, 0 = unlimited");
  bind_key(bb, o.flags, "--concurrency", "endpoint.concurrency", "Requests in flight");
  bind_key(bb, o.flags, "--attacker", "blackbox.attacker", "Local attacker");
  bind_key(bb, o.flags, "--n", "blackbox.n", "Number of held-out toxic sentences");

  auto* serve = app.add_subcommand("serve-mock", "Serve a source checkpoint as a toxicity endpoint");
  bind_key(serve, o.flags, "--checkpoint", "mock.checkpoint", "Checkpoint to serve (default mock_source.ckpt)");
  bind_key(serve, o.flags, "--host", "mock.host", "Bind address");
  bind_key(serve, o.flags, "--port", "mock.port", "Port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, "usage", e.what());
  }
  if (app.get_subcommands().empty() && !print_config)
    return fail(kConfig, "usage", "a subcommand is required; see --help");

  try {
    const RunConfig c = resolve(o);
    if (print_config) {
      std::cout << cli::to_config_text(c);
      return kOk;
    }
    if (synth->parsed()) print(cli::synth_corpus_stage(c));
    if (train_src->parsed()) print(cli::train_source_stage(c, independent));
    if (gen->parsed()) {
      auto m = cli::gen_data_stage(c);
      m.erase("failures");
      print(m);
    }
    if (train_att->parsed()) {
      auto m = cli::train_attacker_stage(c);
      m.erase("history");
      print(m);
    }
    if (attack->parsed()) print(cli::attack_text_stage(c, attacker, text));
    if (bench->parsed()) print(evalbench::report_to_json(cli::bench_stage(c)));
    if (bb->parsed()) {
      const auto r = cli::blackbox_stage(c);
      print({{"attack", blackbox::summary_json(r.attack)}, {"random_equal_budget", blackbox::summary_json(r.random)}});
    }
    if (serve->parsed()) {
      blackbox::MockServer server(cli::mock_scorer(c));
      std::cerr << "serving " << cli::mock_checkpoint(c) << " on http://" << c.mock.host << ":" << c.mock.port
                << "/score" << std::endl;
      server.run(c.mock.host, c.mock.port);
    }
    return kOk;
  } catch (const cli::ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const evalbench::UnknownAttacker& e) {
    return fail(kConfig, "config", e.what());
  } catch (const cli::MissingArtifact& e) {
    return fail(kMissing, "missing_artifact", e.what());
  } catch (const std::exception& e) {
    return fail(kRuntime, "runtime", e.what());
  }
}
