// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance [--only N]...
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedlgt/camle.hpp"
#include "fedlgt/checkpoint.hpp"
#include "fedlgt/experiment.hpp"
#include "fedlgt/util.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace fedlgt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path source_path(const std::string& rel) { return fs::path(FEDLGT_SOURCE_DIR) / rel; }

ModelConfig small_model(LabelTokens tokens) {
  ModelConfig c;
  c.num_classes = 4;
  c.embed_dim = 8;
  c.feature_dim = 6;
  c.num_feature_tokens = 2;
  c.transformer_layers = 1;
  c.attention_heads = 2;
  c.label_tokens = tokens;
  return c;
}

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  double worst_err = 0.0;
  std::string worst_name;
  std::size_t tensors = 0;
  for (auto tokens : {LabelTokens::frozen, LabelTokens::learned}) {
    const auto cfg = small_model(tokens);
    // Random values everywhere so no gradient path is trivially zero.
    ParameterSet params;
    std::uint64_t s = 40;
    for (auto& [name, shape] : parameter_layout(cfg)) params.set(name, testing::uniform_tensor(shape, ++s, -0.8, 0.8));
    const auto labels = synth_embeddings(4, 8, 3);
    const auto states = make_state_embeddings_synthetic(8, 4);
    const auto buffers = ModelBuffers::from(cfg, &labels, &states);
    const Tensor x = testing::uniform_tensor({3, cfg.feature_dim}, 9);
    const Tensor y = Tensor::matrix({{1, 0, 0, 1}, {0, 1, 0, 0}, {1, 1, 0, 1}});
    const LabelState U = LabelState::unknown, P = LabelState::positive, N = LabelState::negative;
    const LabelStateVector st = {U, N, U, P, U, U, N, U, P, U, U, U};
    testing::Inputs in(params.begin(), params.end());
    tensors += in.size();
    auto f = [&](Tape& t, const testing::Vars& v) {
      return masked_bce_loss(t, forward_states(t, v, cfg, buffers, x, st), y, st).loss;
    };
    std::string name;
    const double err = testing::gradient_error(in, f, 1e-5, &name);
    if (err > worst_err) {
      worst_err = err;
      worst_name = to_string(tokens) + ":" + name;
    }
  }
  const double secs = seconds_since(t0);
  return {worst_err < 1e-4 && secs < 30.0, std::to_string(tensors) + " tensors, worst rel err " + fmt(worst_err) +
                                               " (" + worst_name + "), " + fmt(secs, 2) + " s"};
}

Verdict camle_exactness() {
  const CalibrationConfig cfg{0.5, 0.02};
  Rng rng(2);
  const std::vector<double> edges = {0.48, 0.52, std::nextafter(0.48, 0.0), std::nextafter(0.52, 1.0),
                                     std::nextafter(0.48, 1.0), std::nextafter(0.52, 0.0), 0.5};
  std::size_t mismatches = 0, unknowns = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t C = 16;
    std::vector<double> p(C), y(C);
    for (std::size_t c = 0; c < C; ++c) {
      p[c] = uniform01(rng) < 0.3 ? 0.46 + 0.08 * uniform01(rng) : uniform01(rng);
      y[c] = uniform01(rng) < 0.3;
    }
    for (std::size_t e = 0; e < edges.size(); ++e) p[(trial + e) % C] = edges[e];
    const auto out = calibrate_states(p, states_from_targets(y), cfg);
    for (std::size_t c = 0; c < C; ++c) {
      const bool expect = 0.48 <= p[c] && p[c] <= 0.52;
      const bool got = out[c] == LabelState::unknown;
      unknowns += got;
      mismatches += expect != got;
      if (!got && out[c] != (y[c] == 1.0 ? LabelState::positive : LabelState::negative)) ++mismatches;
    }
  }
  return {mismatches == 0, "1000 vectors, " + std::to_string(unknowns) + " unknown entries, " +
                               std::to_string(mismatches) + " mismatches"};
}

Verdict masked_loss_scoping() {
  Rng rng(3);
  std::size_t nonzero = 0, checked = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t B = 1 + rng() % 6, C = 1 + rng() % 8;
    const Tensor z = testing::uniform_tensor({B, C}, 500 + trial, -6, 6);
    Tensor y({B, C});
    LabelStateVector s(B * C), all_unknown(B * C, LabelState::unknown);
    for (std::size_t i = 0; i < B * C; ++i) {
      y[i] = uniform01(rng) < 0.4;
      s[i] = uniform01(rng) < 0.5 ? LabelState::unknown : (y[i] == 1.0 ? LabelState::positive : LabelState::negative);
    }
    Tape tape;
    const Var zl = tape.parameter("z", z);
    const auto loss = masked_bce_loss(tape, zl, y, s);
    if (!loss.no_signal) {
      const auto g = tape.gradients(loss.loss).at("z");
      for (std::size_t i = 0; i < B * C; ++i) {
        if (s[i] == LabelState::unknown) continue;
        ++checked;
        nonzero += g[i] != 0.0;
      }
    }
    double oracle = 0.0;
    for (std::size_t i = 0; i < B * C; ++i) oracle += testing::bce_oracle(1.0 / (1.0 + std::exp(-z[i])), y[i]);
    oracle /= static_cast<double>(B);
    worst = std::max(worst, std::abs(masked_bce_loss(z, y, all_unknown).value - oracle));
  }
  return {nonzero == 0 && checked > 0 && worst <= 1e-12,
          std::to_string(checked) + " known-state logits, " + std::to_string(nonzero) +
              " nonzero gradients; full-BCE max diff " + fmt(worst)};
}

DatasetSpec small_spec(std::size_t K, std::uint64_t seed) {
  DatasetSpec s;
  s.num_clients = K;
  s.num_classes = 4;
  s.feature_dim = 8;
  s.min_samples = 6;
  s.max_samples = 30;
  s.client_cliques = round_robin_cliques(K, 4, 2);
  s.background = 0.05;
  s.test_samples = 40;
  s.seed = seed;
  return s;
}

ModelContext small_context(TrainingMode mode) {
  ModelContext ctx;
  ctx.config.num_classes = 4;
  ctx.config.feature_dim = 8;
  ctx.config.embed_dim = 8;
  ctx.config.num_feature_tokens = 2;
  ctx.config.transformer_layers = 1;
  ctx.config.attention_heads = 2;
  ctx.config.label_tokens = label_tokens_for(mode);
  const auto labels = synth_embeddings(4, 8, 7);
  const auto states = make_state_embeddings_synthetic(8, 7);
  ctx.buffers = ModelBuffers::from(ctx.config, &labels, &states);
  return ctx;
}

ParameterSet scalar(double v) {
  ParameterSet p;
  p.set("w", Tensor({1}, {v}));
  return p;
}

Verdict aggregation() {
  bool ok = true;
  std::string why;
  const auto ctx = small_context(TrainingMode::fedlgt);
  const auto p = init_params(ctx.config, 3);
  std::vector<ParameterSet> same(3, p);
  if (!bitwise_equal(aggregate(same, std::vector<std::size_t>{4, 9, 1}), p)) ok = false, why += " identical";
  std::vector<ParameterSet> a = {scalar(0), scalar(4)};
  const double r1 = aggregate(a, std::vector<std::size_t>{1, 3}).at("w")[0];
  std::vector<ParameterSet> b = {scalar(1), scalar(2), scalar(3)};
  const double r2 = aggregate(b, std::vector<std::size_t>{2, 3, 5}).at("w")[0];
  if (r1 != 3.0) ok = false, why += " [1,3]";
  if (r2 != 2.3) ok = false, why += " [2,3,5]";

  FederationConfig cfg;
  cfg.rounds = 10;
  cfg.local_epochs = 1;
  cfg.adam.lr = 1e-2;
  cfg.eval_every = 0;
  cfg.seed = 4;
  const auto ds = generate(small_spec(12, 4));
  const auto res = run_training(cfg, ds, ctx);
  double worst = 0.0;
  for (const auto& r : res.reports) {
    worst = std::max(worst, std::abs(std::accumulate(r.weights.begin(), r.weights.end(), 0.0) - 1.0));
  }
  if (worst > 1e-12) ok = false, why += " weights";
  return {ok, "examples " + format_double(r1) + ", " + format_double(r2) + "; " + std::to_string(res.reports.size()) +
                  " rounds, max |sum w - 1| " + fmt(worst) + (why.empty() ? "" : "; failed:" + why)};
}

Verdict metrics_oracle() {
  Rng rng(5);
  std::size_t bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 10, C = 1 + rng() % 5;
    Tensor p({n, C}), y({n, C});
    for (std::size_t i = 0; i < n * C; ++i) {
      p[i] = static_cast<double>(rng() % 11) / 10.0;
      y[i] = uniform01(rng) < 0.4;
    }
    y[rng() % (n * C)] = 1;
    const auto r = prf1(confusion_counts(p, y));
    const auto o = testing::prf_oracle(p, y);
    bad += r.c_p != o.cp || r.c_r != o.cr || r.c_f1 != o.cf1 || r.o_p != o.op || r.o_r != o.orr || r.o_f1 != o.of1;
    double sum = 0.0;
    std::size_t classes = 0;
    for (std::size_t c = 0; c < C; ++c) {
      std::vector<double> s(n), t(n);
      for (std::size_t i = 0; i < n; ++i) s[i] = p[i * C + c], t[i] = y[i * C + c];
      if (std::count(t.begin(), t.end(), 1.0) == 0) continue;
      sum += testing::ap_oracle(s, t);
      ++classes;
    }
    const auto [c_ap, o_ap] = average_precision(p, y);
    bad += c_ap != sum / static_cast<double>(classes) || o_ap != testing::ap_oracle(p.values(), y.values());
  }
  const auto hand = prf1(confusion_counts(Tensor::matrix({{1, 1}, {0, 1}, {0, 1}}), Tensor::matrix({{1, 0}, {1, 1}, {0, 1}})));
  const bool hand_ok = std::round(hand.c_p * 1e4) == 8333 && std::round(hand.o_f1 * 1e4) == 7500;
  return {bad == 0 && hand_ok, "100 instances, " + std::to_string(bad) + " disagreements; hand C-P " +
                                   fmt(hand.c_p, 4) + " O-F1 " + fmt(hand.o_f1, 4)};
}

Verdict sampling_distribution() {
  const std::vector<std::size_t> sizes = {80, 10, 10};
  Rng rng(6);
  int prop = 0;
  std::vector<int> uni(3, 0);
  for (int i = 0; i < 10000; ++i) prop += sample_clients(sizes, 1, SamplingStrategy::data_proportional, rng)[0] == 0;
  for (int i = 0; i < 10000; ++i) ++uni[sample_clients(sizes, 1, SamplingStrategy::uniform, rng)[0]];
  const double fp = prop / 10000.0;
  bool ok = std::abs(fp - 0.8) <= 0.02;
  std::string u;
  for (int h : uni) {
    ok = ok && std::abs(h / 10000.0 - 1.0 / 3.0) <= 0.02;
    u += " " + fmt(h / 10000.0, 4);
  }
  return {ok, "data-proportional client 0: " + fmt(fp, 4) + "; uniform:" + u};
}

Verdict ule_frozen() {
  const auto ds = generate(small_spec(8, 7));
  FederationConfig cfg;
  cfg.rounds = 10;
  cfg.local_epochs = 1;
  cfg.adam.lr = 1e-2;
  cfg.eval_every = 0;
  cfg.seed = 7;

  cfg.mode = TrainingMode::fedlgt;
  const auto frozen = small_context(TrainingMode::fedlgt);
  const Tensor before = frozen.buffers.label_embeddings;
  const auto res = run_training(cfg, ds, frozen);
  const Checkpoint ck{frozen.config, res.params, frozen.buffers};
  const auto back = decode_checkpoint(encode_checkpoint(ck));
  const auto& after = back.buffers.label_embeddings;
  const bool same = before.shape() == after.shape() &&
                    std::memcmp(before.data().data(), after.data().data(), before.size() * sizeof(double)) == 0 &&
                    !res.params.contains("label_embeddings");

  cfg.mode = TrainingMode::fedctran;
  const auto learned = small_context(TrainingMode::fedctran);
  const auto init = init_params(learned.config, init_seed(cfg.seed));
  const auto res2 = run_training(cfg, ds, learned, init);
  const auto& e0 = init.at("label_embeddings");
  const auto& e1 = res2.params.at("label_embeddings");
  double moved = 0.0;
  for (std::size_t i = 0; i < e0.size(); ++i) moved = std::max(moved, std::abs(e0[i] - e1[i]));
  return {same && moved > 1e-6, std::string("fedlgt embeddings ") + (same ? "byte-identical" : "CHANGED") +
                                    " after 10 rounds; fedctran max change " + fmt(moved)};
}

Verdict trend() {
  const auto t0 = Clock::now();
  auto cfg = load_experiment_config(source_path("configs/desk.ini"));
  cfg.ablation_seeds = 5;
  cfg.output_dir = testing::scratch("acceptance_trend");
  std::ostringstream log;
  const auto arms = run_ablation(cfg, log);
  const double secs = seconds_since(t0);
  auto find = [&](TrainingMode m) -> const AblationArmResult& {
    for (const auto& a : arms) {
      if (a.mode == m) return a;
    }
    throw std::logic_error("missing arm");
  };
  const auto& base = find(TrainingMode::fedctran);
  const auto& ule = find(TrainingMode::fedctran_ule);
  const auto& lgt = find(TrainingMode::fedlgt);
  int lgt_wins = 0, ule_wins = 0;
  for (std::size_t i = 0; i < base.per_seed.size(); ++i) {
    lgt_wins += lgt.per_seed[i].c_ap > base.per_seed[i].c_ap;
    ule_wins += ule.per_seed[i].c_ap > base.per_seed[i].c_ap;
  }
  std::string means;
  for (const auto& a : arms) means += " " + display_name(a.mode) + "=" + fmt(100.0 * a.mean.c_ap, 3);
  const bool ok = lgt_wins >= 4 && ule_wins >= 4 && secs < 1800.0;
  return {ok, "FedLGT>FedC-Tran " + std::to_string(lgt_wins) + "/5, +ULE>FedC-Tran " + std::to_string(ule_wins) +
                  "/5; mean C-AP" + means + "; " + fmt(secs, 3) + " s"};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FEDLGT_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict determinism() {
  const auto a = testing::scratch("acceptance_det_a"), b = testing::scratch("acceptance_det_b");
  const std::string config = source_path("configs/desk.ini").string();
  const int ca = run_cli("train --config " + config + " --out " + a.string());
  const int cb = run_cli("train --config " + config + " --out " + b.string());
  if (ca != 0 || cb != 0) return {false, "train exited " + std::to_string(ca) + "/" + std::to_string(cb)};
  std::string differ;
  for (const char* f : {"checkpoint.bin", "rounds.jsonl", "metrics.json"}) {
    if (read_text_file(a / f) != read_text_file(b / f)) differ += std::string(" ") + f;
  }
  return {differ.empty(), differ.empty() ? "checkpoint.bin, rounds.jsonl, metrics.json byte-identical"
                                         : "differing:" + differ};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--only" && i + 1 < argc) only.insert(std::atoi(argv[++i]));
  }
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "CA-MLE exactness", camle_exactness},
      {3, "masked-loss scoping", masked_loss_scoping},
      {4, "aggregation", aggregation},
      {5, "metrics oracle", metrics_oracle},
      {6, "sampling distribution", sampling_distribution},
      {7, "ULE frozen-ness", ule_frozen},
      {8, "ablation trend", trend},
      {9, "end-to-end determinism", determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << "criterion " << c.id << " " << (v.pass ? "PASS" : "FAIL") << "  " << c.name << ": " << v.detail
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
