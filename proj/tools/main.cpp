// Command-line entry point. One binary, one subcommand per pipeline stage;
// flag values override the config file, which overrides built-in defaults.
// Exit codes: 0 ok, 1 user error (bad flags, bad config, missing inputs),
// 2 internal error.
#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cadence/pipeline.hpp"

namespace {

cadence::SystemVariant pick_variant(bool baseline, bool no_pitch, bool no_masking,
                                    bool duration_external) {
  int chosen = int(baseline) + int(no_pitch) + int(no_masking) + int(duration_external);
  if (chosen > 1)
    throw cadence::ConfigError(
        "unknown flag combination: at most one of --baseline, --no-pitch, --no-masking, "
        "--duration-external");
  if (baseline) return cadence::SystemVariant::Baseline;
  if (no_pitch) return cadence::SystemVariant::NoPitch;
  if (no_masking) return cadence::SystemVariant::NoMasking;
  if (duration_external) return cadence::SystemVariant::DurationExternal;
  return cadence::SystemVariant::Full;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy codec language model: corpus, training, synthesis, evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir;
  app.add_option("--config", config_path, "configuration file (sectioned key=value)");
  app.add_option("--out", out_dir, "output root; overrides CADENCE_OUT and the config file");

  CLI::App* gen = app.add_subcommand("gen", "generate the synthetic corpus and hard suite");

  CLI::App* train = app.add_subcommand("train", "train the models for one system variant");
  bool t_baseline = false, t_no_pitch = false, t_no_masking = false, t_dur_ext = false;
  std::string t_name;
  int t_window = 0;
  uint64_t t_seed = 0;
  train->add_flag("--baseline", t_baseline, "no prosody plan, full attention, stop on EOS");
  train->add_flag("--no-pitch", t_no_pitch, "prosody plan without pitch tokens");
  train->add_flag("--no-masking", t_no_masking, "no attention window, no head grouping");
  train->add_flag("--duration-external", t_dur_ext,
                  "durations from a separately trained predictor instead of the plan");
  CLI::Option* t_window_opt =
      train->add_option("--window", t_window, "phoneme window half-width; -1 removes the bound")
          ->check(CLI::Range(-1, 1 << 20));
  CLI::Option* t_seed_opt = train->add_option("--seed", t_seed, "training seed");
  train->add_option("--name", t_name, "run name (defaults to the variant label)");

  CLI::App* synth = app.add_subcommand("synth", "sample candidates for a data split");
  std::string s_name = "full", s_split = "test";
  double s_rho_p = 0, s_rho_d = 0, s_rho_c = 0;
  uint64_t s_seed = 0;
  int s_rerank = 0;
  bool s_no_stop = false;
  synth->add_option("--name", s_name, "run to load checkpoints from");
  synth->add_option("--split", s_split, "data split")
      ->check(CLI::IsMember({"test", "hard"}));
  CLI::Option* s_rho_p_opt = synth->add_option("--rho-p", s_rho_p, "nucleus mass for pitch");
  CLI::Option* s_rho_d_opt = synth->add_option("--rho-d", s_rho_d, "nucleus mass for duration");
  CLI::Option* s_rho_c_opt = synth->add_option("--rho-c", s_rho_c, "nucleus mass for speech");
  CLI::Option* s_seed_opt = synth->add_option("--seed", s_seed, "sampling seed");
  CLI::Option* s_rerank_opt =
      synth->add_option("--rerank", s_rerank, "candidates per utterance")->check(CLI::Range(1, 64));
  synth->add_flag("--no-duration-stop", s_no_stop, "stop on EOS instead of the planned length");

  CLI::App* eval = app.add_subcommand("eval", "score synth outputs for a run");
  std::string e_name = "full";
  eval->add_option("--name", e_name, "run to evaluate");

  CLI::App* mask_dump = app.add_subcommand("mask-dump", "render attention masks as PGM images");
  bool m_baseline = false, m_no_pitch = false, m_no_masking = false, m_dur_ext = false;
  int m_window = 0;
  mask_dump->add_flag("--baseline", m_baseline, "plain layout and mask");
  mask_dump->add_flag("--no-pitch", m_no_pitch, "prosody plan without pitch tokens");
  mask_dump->add_flag("--no-masking", m_no_masking, "no attention window, no head grouping");
  mask_dump->add_flag("--duration-external", m_dur_ext, "plan without duration tokens");
  CLI::Option* m_window_opt =
      mask_dump->add_option("--window", m_window, "phoneme window half-width; -1 removes the bound")
          ->check(CLI::Range(-1, 1 << 20));

  CLI::App* sweep = app.add_subcommand("sweep-k", "WER grid over window sizes and nucleus mass");
  std::string w_prefix = "sweep";
  int w_jobs = 0;
  sweep->add_option("--prefix", w_prefix, "run-name prefix of the trained window variants");
  CLI::Option* w_jobs_opt =
      sweep->add_option("--jobs", w_jobs, "worker threads")->check(CLI::Range(1, 256));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    cadence::RunConfig cfg;
    if (!config_path.empty()) cfg = cadence::load_run_config(config_path);
    if (const char* env = std::getenv("CADENCE_OUT"); env && *env) cfg.out_dir = env;
    if (!out_dir.empty()) cfg.out_dir = out_dir;

    if (gen->parsed()) {
      cadence::cmd_gen(cfg, &std::cout);
    } else if (train->parsed()) {
      cadence::SystemVariant variant =
          pick_variant(t_baseline, t_no_pitch, t_no_masking, t_dur_ext);
      if (t_window_opt->count()) cfg.mask.window_k = t_window;
      if (t_seed_opt->count()) cfg.train.seed = t_seed;
      std::string name = t_name.empty() ? cadence::variant_label(variant) : t_name;
      cadence::cmd_train(cfg, variant, name, &std::cout);
    } else if (synth->parsed()) {
      if (s_rho_p_opt->count()) cfg.sampling.rho_p = s_rho_p;
      if (s_rho_d_opt->count()) cfg.sampling.rho_d = s_rho_d;
      if (s_rho_c_opt->count()) cfg.sampling.rho_c = s_rho_c;
      if (s_seed_opt->count()) cfg.sampling.seed = s_seed;
      if (s_rerank_opt->count()) cfg.sampling.rerank_n = s_rerank;
      if (s_no_stop) cfg.sampling.duration_guided = false;
      cadence::cmd_synth(cfg, s_name, s_split, &std::cout);
    } else if (eval->parsed()) {
      cadence::cmd_eval(cfg, e_name, &std::cout);
    } else if (mask_dump->parsed()) {
      cadence::SystemVariant variant =
          pick_variant(m_baseline, m_no_pitch, m_no_masking, m_dur_ext);
      if (m_window_opt->count()) cfg.mask.window_k = m_window;
      cadence::cmd_mask_dump(cfg, variant, &std::cout);
    } else if (sweep->parsed()) {
      if (w_jobs_opt->count()) cfg.jobs = w_jobs;
      cadence::cmd_sweep_k(cfg, w_prefix, &std::cout);
    }
    return 0;
  } catch (const cadence::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
