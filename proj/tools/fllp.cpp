// SPDX-License-Identifier: Apache-2.0
//
// fllp: benchmark driver, parent-chain and EWA tools, property self-test.

#include "fllp/bench1d.hpp"
#include "fllp/check.hpp"
#include "fllp/io.hpp"
#include "fllp/parent_search.hpp"
#include "fllp/weight_space.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using namespace fllp;

namespace {

// Single-line failure surfaced to main.
struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Shared {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string format = "json";
  std::string config;
};

void add_shared(CLI::App* sub, Shared& s) {
  sub->add_option("--seed", s.seed, "Random seed");
  sub->add_option("--out", s.out, "Output directory (created if absent)")->capture_default_str();
  sub->add_option("--format", s.format, "Report format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  sub->add_option("--config", s.config, "Flat key=value file; command-line flags take precedence");
}

// Config values are spliced in front of the real arguments so that, with
// last-wins option policy, explicit flags override them.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw CommandError("cannot read config file '" + path + "'");
  std::map<std::string, std::string> kv;
  try {
    kv = read_key_values(in);
  } catch (const ParseError& e) {
    throw CommandError("config " + path + ": " + e.what());
  }
  // args[0] is the subcommand.
  std::vector<std::string> out{args.front()};
  for (const auto& [k, v] : kv) {
    if (k == "config") throw CommandError("config " + path + ": nested 'config' key");
    out.push_back("--" + k + "=" + v);
  }
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  auto to_u64 = [&](const std::string& s) -> std::uint64_t {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (s.empty() || pos != s.size() || s.front() == '-') throw CommandError("invalid seed '" + s + "'");
    return v;
  };
  const auto range = text.find("..");
  if (range != std::string::npos) {
    const auto lo = to_u64(text.substr(0, range)), hi = to_u64(text.substr(range + 2));
    if (hi < lo) throw CommandError("empty seed range '" + text + "'");
    if (hi - lo > 100000) throw CommandError("seed range too large");
    for (auto s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) seeds.push_back(to_u64(item));
  if (seeds.empty()) throw CommandError("no seeds given");
  return seeds;
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw CommandError("cannot create output directory '" + dir + "'");
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  f << content;
  f.close();
  if (!f) throw CommandError("cannot write '" + path.string() + "'");
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string modes = "baseline,subspace,fllp";
  std::string seeds;
  std::string task_means;
  bool learn_curvature = true;
  unsigned threads = 0;
};

int run_bench(const Shared& sh, const BenchArgs& args, BenchConfig cfg, bool seed_given) {
  if (!args.task_means.empty()) {
    try {
      cfg.task_means = parse_real_list(args.task_means);
    } catch (const std::invalid_argument& e) {
      throw CommandError(std::string("--task-means: ") + e.what());
    }
  }
  cfg.learn_curvature = args.learn_curvature;
  std::vector<Mode> modes;
  {
    std::stringstream ss(args.modes);
    std::string m;
    while (std::getline(ss, m, ',')) {
      try {
        modes.push_back(parse_mode(m));
      } catch (const std::invalid_argument& e) {
        throw CommandError(e.what());
      }
    }
    if (modes.empty()) throw CommandError("--modes is empty");
  }
  const std::vector<std::uint64_t> seeds =
      !args.seeds.empty() ? parse_seeds(args.seeds) : seed_given ? std::vector<std::uint64_t>{sh.seed}
                                                                 : parse_seeds("0..4");
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(e.what());
  }
  prepare_out_dir(sh.out);

  std::vector<std::vector<ForgettingReport>> results(seeds.size());
  std::vector<std::string> errors(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < seeds.size();) {
      try {
        results[i] = run_experiment(cfg, seeds[i], modes);
      } catch (const std::exception& e) {
        errors[i] = "seed=" + std::to_string(seeds[i]) + " " + e.what();
      }
    }
  };
  unsigned n_threads = args.threads ? args.threads : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min<unsigned>(n_threads, static_cast<unsigned>(seeds.size()));
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (!e.empty()) throw CommandError(e);

  std::vector<ForgettingReport> flat;
  for (const auto& per_seed : results) flat.insert(flat.end(), per_seed.begin(), per_seed.end());
  if (sh.format == "csv") {
    write_file(fs::path(sh.out) / "bench1d.csv", reports_csv(flat));
  } else {
    for (const auto& r : flat) {
      write_file(fs::path(sh.out) / ("bench1d_" + to_string(r.mode) + "_seed" + std::to_string(r.seed) + ".json"),
                 report_json(r, cfg));
    }
  }

  std::cout << std::left << std::setw(10) << "mode" << std::right << std::setw(10) << "median"
            << "  per-seed forgetting rate\n";
  for (Mode m : modes) {
    std::vector<double> rates;
    for (const auto& r : flat)
      if (r.mode == m) rates.push_back(r.forgetting_rate);
    std::cout << std::left << std::setw(10) << to_string(m) << std::right << std::setw(10)
              << format_sig9(round_sig9(median(rates)));
    std::cout << " ";
    for (double v : rates) std::cout << ' ' << format_sig9(v);
    std::cout << '\n';
  }
  std::cout << "wrote " << flat.size() << " report" << (flat.size() == 1 ? "" : "s") << " to " << sh.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct ParentsArgs {
  std::string embeddings;
  std::string query;
  double curvature = 1.0;
  std::string tree;
};

int run_parents(const Shared& sh, const ParentsArgs& args) {
  if (!(args.curvature > 0.0) || !std::isfinite(args.curvature)) {
    throw CommandError("--curvature must be a finite positive number");
  }
  VectorXd query;
  try {
    query = parse_vector(args.query);
  } catch (const std::invalid_argument& e) {
    throw CommandError(std::string("--query: ") + e.what());
  }
  std::ifstream in(args.embeddings);
  if (!in) throw CommandError("cannot read '" + args.embeddings + "'");
  std::vector<ConceptLine> lines;
  try {
    lines = read_concepts(in);
  } catch (const ParseError& e) {
    throw CommandError(args.embeddings + ": " + e.what());
  }
  const Eigen::Index attn_dim = lines.empty() ? 1 : lines.front().summary.size();
  ParentChain chain;
  try {
    const auto registry = build_registry(lines, query.size(), attn_dim);
    chain = parent_search(query, registry, Curvature<double>(args.curvature));
  } catch (const std::exception& e) {
    throw CommandError(e.what());
  }
  if (sh.format == "csv") {
    std::cout << "rank,parent_id\n";
    for (std::size_t i = 0; i < chain.size(); ++i) std::cout << i + 1 << ',' << chain.parents[i] << '\n';
  } else {
    std::cout << format_chain(chain) << '\n';
  }
  if (!args.tree.empty()) {
    std::ostringstream tree;
    write_chain_tree(tree, chain, static_cast<int>(lines.size()));
    write_file(args.tree, tree.str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EwaArgs {
  std::vector<std::string> weights;
  std::vector<std::string> tokens;
  std::string prompt;
  std::string output;
};

std::vector<MatrixXd> load_matrices(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CommandError("cannot read '" + path + "'");
  try {
    auto m = read_matrices(in);
    if (m.empty()) throw CommandError(path + ": no matrices");
    return m;
  } catch (const ParseError& e) {
    throw CommandError(path + ": " + e.what());
  }
}

int run_ewa(const Shared& sh, const EwaArgs& args) {
  if (args.weights.size() != args.tokens.size()) {
    throw CommandError("ewa: " + std::to_string(args.weights.size()) + " weight files but " +
                       std::to_string(args.tokens.size()) + " token files");
  }
  TaskWeights<double> weights;
  std::vector<MatrixXd> tokens;
  for (std::size_t i = 0; i < args.weights.size(); ++i) {
    weights.push_back(load_matrices(args.weights[i]));
    auto tok = load_matrices(args.tokens[i]);
    if (tok.size() != 1) throw CommandError(args.tokens[i] + ": expected a single token matrix");
    tokens.push_back(std::move(tok.front()));
  }
  auto prompt = load_matrices(args.prompt);
  if (prompt.size() != 1) throw CommandError(args.prompt + ": expected a single prompt matrix");
  std::vector<MatrixXd> merged;
  try {
    merged = ewa_aggregate(weights, tokens, prompt.front());
  } catch (const WeightSpaceError& e) {
    throw CommandError(e.what());
  }
  const fs::path out = args.output.empty() ? fs::path(sh.out) / "ewa_merged.txt" : fs::path(args.output);
  if (out.has_parent_path()) prepare_out_dir(out.parent_path().string());
  std::ostringstream text;
  write_matrices(text, merged);
  write_file(out, text.str());
  std::cout << "merged " << weights.size() << " concept" << (weights.size() == 1 ? "" : "s") << " into "
            << merged.size() << " layer" << (merged.size() == 1 ? "" : "s") << ": " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

int run_check(const Shared& sh, bool json, const std::string& suite, double curvature, int trials) {
  CheckOptions opts{curvature, sh.seed, trials};
  try {
    opts.validate();
  } catch (const std::invalid_argument& e) {
    throw CommandError(std::string("check: ") + e.what());
  }
  const auto results = run_checks(suite, opts);
  bool ok = true;
  if (json) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : results) arr.push_back({{"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
    std::cout << arr.dump(2) << '\n';
  }
  for (const auto& r : results) {
    ok = ok && r.passed;
    if (!json) std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << "  " << r.detail << '\n';
  }
  if (!ok) throw CommandError("check: property failures");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical continual concept learning toolkit", "fllp"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);

  Shared shared;
  BenchConfig cfg;
  BenchArgs bench;
  ParentsArgs parents;
  EwaArgs ewa;
  std::string suite = "all";
  double check_curvature = 1.0;
  int check_trials = 1000;

  auto* b = app.add_subcommand("bench1d", "Run the sequential 1D Gaussian benchmark");
  add_shared(b, shared);
  b->add_option("--modes", bench.modes, "Comma list of baseline, subspace, fllp")->capture_default_str();
  b->add_option("--seeds", bench.seeds, "Seed range 'a..b' or comma list (default 0..4)");
  b->add_option("--task-means", bench.task_means, "Comma list of task means (default 3,6,9,12,15)");
  b->add_option("--samples", cfg.samples, "Training samples per task")->capture_default_str();
  b->add_option("--timesteps", cfg.timesteps, "Diffusion steps T")->capture_default_str();
  b->add_option("--steps", cfg.steps, "Gradient steps per task")->capture_default_str();
  b->add_option("--batch", cfg.batch, "Minibatch size")->capture_default_str();
  b->add_option("--beta", cfg.beta, "Entailment threshold")->capture_default_str();
  b->add_option("--gamma1", cfg.gamma1, "Entailment loss weight")->capture_default_str();
  b->add_option("--gamma2", cfg.gamma2, "Subspace loss weight")->capture_default_str();
  b->add_option("--curvature", cfg.curvature, "Initial curvature k")->capture_default_str();
  b->add_flag("--learn-curvature,!--fixed-curvature", bench.learn_curvature, "Train the curvature");
  b->add_option("--token-lr", cfg.token_lr)->capture_default_str();
  b->add_option("--adapter-lr", cfg.adapter_lr)->capture_default_str();
  b->add_option("--pretrain-steps", cfg.pretrain_steps)->capture_default_str();
  b->add_option("--eval-samples", cfg.eval_samples, "Samples drawn per task at evaluation")->capture_default_str();
  b->add_option("--threads", bench.threads, "Worker threads (default: hardware concurrency)");

  auto* p = app.add_subcommand("parents", "Build the parent chain of a query embedding");
  add_shared(p, shared);
  p->add_option("embeddings", parents.embeddings, "Concept file, one 'id;token;summary' record per line")
      ->required();
  p->add_option("--query", parents.query, "Comma-separated query feature")->required();
  p->add_option("--curvature", parents.curvature)->capture_default_str();
  p->add_option("--tree", parents.tree, "Write a child_id,parent_id edge list here");

  auto* e = app.add_subcommand("ewa", "Merge per-concept weight deltas by prompt relevance");
  add_shared(e, shared);
  e->add_option("--weights", ewa.weights, "Per-concept matrix files (one matrix per layer)")
      ->required()
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  e->add_option("--tokens", ewa.tokens, "Per-concept token matrices, rows are embeddings")
      ->required()
      ->delimiter(',')
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  e->add_option("--prompt", ewa.prompt, "Prompt embedding matrix")->required();
  e->add_option("--output", ewa.output, "Merged matrices file (default <out>/ewa_merged.txt)");

  auto* c = app.add_subcommand("check", "Run geometry property suites");
  add_shared(c, shared);
  c->add_option("--suite", suite)->check(CLI::IsMember({"manifold", "entailment", "all"}))->capture_default_str();
  c->add_option("--curvature", check_curvature)->capture_default_str();
  c->add_option("--trials", check_trials)->capture_default_str();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    if (!args.empty()) args = expand_config(args);
    std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
    app.parse(args);

    const bool seed_given = b->count("--seed") > 0;
    if (*b) return run_bench(shared, bench, cfg, seed_given);
    if (*p) return run_parents(shared, parents);
    if (*e) return run_ewa(shared, ewa);
    if (*c) return run_check(shared, c->count("--format") > 0 && shared.format == "json", suite, check_curvature, check_trials);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);  // --help
    std::cerr << "error: " << err.what() << '\n';
    return err.get_exit_code();
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
