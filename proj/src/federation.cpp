#include "fedlgt/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fedlgt/util.hpp"

namespace fedlgt {
namespace {

constexpr std::size_t kEvalChunk = 256;

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng() % i)]);
  return v;
}

}  // namespace

std::string to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::fedavg_plain: return "fedavg-plain";
    case TrainingMode::fedctran: return "fedctran";
    case TrainingMode::fedctran_camle: return "fedctran+camle";
    case TrainingMode::fedctran_ule: return "fedctran+ule";
    case TrainingMode::fedlgt: return "fedlgt";
  }
  return "?";
}

std::string to_string(SamplingStrategy s) {
  return s == SamplingStrategy::uniform ? "uniform" : "data-proportional";
}

std::string to_string(CalibrationRefresh r) { return r == CalibrationRefresh::per_batch ? "per-batch" : "per-epoch"; }

TrainingMode parse_training_mode(std::string_view s) {
  for (auto m : {TrainingMode::fedavg_plain, TrainingMode::fedctran, TrainingMode::fedctran_camle,
                 TrainingMode::fedctran_ule, TrainingMode::fedlgt}) {
    if (s == to_string(m)) return m;
  }
  throw std::invalid_argument("unknown training mode '" + std::string(s) + "'");
}

SamplingStrategy parse_sampling(std::string_view s) {
  if (s == "uniform") return SamplingStrategy::uniform;
  if (s == "data-proportional") return SamplingStrategy::data_proportional;
  throw std::invalid_argument("unknown sampling strategy '" + std::string(s) + "'");
}

CalibrationRefresh parse_refresh(std::string_view s) {
  if (s == "per-batch") return CalibrationRefresh::per_batch;
  if (s == "per-epoch") return CalibrationRefresh::per_epoch;
  throw std::invalid_argument("unknown calibration refresh '" + std::string(s) + "'");
}

LabelTokens label_tokens_for(TrainingMode m) {
  switch (m) {
    case TrainingMode::fedavg_plain: return LabelTokens::none;
    case TrainingMode::fedctran:
    case TrainingMode::fedctran_camle: return LabelTokens::learned;
    case TrainingMode::fedctran_ule:
    case TrainingMode::fedlgt: return LabelTokens::frozen;
  }
  return LabelTokens::none;
}

bool uses_camle(TrainingMode m) { return m == TrainingMode::fedctran_camle || m == TrainingMode::fedlgt; }

std::string display_name(TrainingMode m) {
  switch (m) {
    case TrainingMode::fedavg_plain: return "FedAvg";
    case TrainingMode::fedctran: return "FedC-Tran";
    case TrainingMode::fedctran_camle: return "FedC-Tran + CA-MLE";
    case TrainingMode::fedctran_ule: return "FedC-Tran + ULE";
    case TrainingMode::fedlgt: return "FedLGT";
  }
  return "?";
}

void FederationConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("federation config: " + m); };
  if (local_epochs < 1) fail("local_epochs must be >= 1");
  if (!(active_fraction > 0.0 && active_fraction <= 1.0)) fail("active_fraction must lie in (0, 1]");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(adam.lr >= 0.0)) fail("learning rate must be >= 0");
  if (parallel < 1) fail("parallel must be >= 1");
  calibration.validate();
  if (!(mask.lo >= 0.0 && mask.hi <= 1.0 && mask.lo <= mask.hi)) fail("mask fraction range must lie in [0, 1]");
}

std::size_t FederationConfig::clients_per_round(std::size_t total_clients) const {
  const double r = std::ceil(active_fraction * static_cast<double>(total_clients) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(r), 1, total_clients);
}

std::vector<std::size_t> sample_clients(std::span<const std::size_t> sizes, std::size_t count,
                                        SamplingStrategy strategy, Rng& rng) {
  const std::size_t K = sizes.size();
  if (count > K) {
    throw std::invalid_argument("sample_clients: cannot sample " + std::to_string(count) + " of " +
                                std::to_string(K) + " clients");
  }
  for (auto s : sizes) {
    if (s == 0) throw std::invalid_argument("sample_clients: client sizes must be positive");
  }
  std::vector<std::size_t> ids(K);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::vector<std::size_t> out;
  out.reserve(count);
  if (strategy == SamplingStrategy::uniform) {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng() % (K - i));
      std::swap(ids[i], ids[j]);
      out.push_back(ids[i]);
    }
    return out;
  }
  std::vector<double> w(sizes.begin(), sizes.end());
  for (std::size_t i = 0; i < count; ++i) {
    double total = 0.0;
    for (std::size_t k = i; k < K; ++k) total += w[ids[k]];
    const double u = uniform01(rng) * total;
    double cum = 0.0;
    std::size_t pick = K - 1;
    for (std::size_t k = i; k < K; ++k) {
      cum += w[ids[k]];
      if (u < cum) {
        pick = k;
        break;
      }
    }
    std::swap(ids[i], ids[pick]);
    out.push_back(ids[i]);
  }
  return out;
}

std::vector<std::size_t> sample_clients(std::span<const std::size_t> sizes, std::size_t count,
                                        SamplingStrategy strategy, std::uint64_t seed) {
  Rng rng(seed);
  return sample_clients(sizes, count, strategy, rng);
}

LabelStateVector batch_states(const ParameterSet& global, const ModelContext& model, const Tensor& features,
                              const Tensor& targets, const FederationConfig& cfg, Rng& rng) {
  const std::size_t B = targets.dim(0), C = targets.dim(1);
  LabelStateVector states;
  states.reserve(B * C);
  if (cfg.mode == TrainingMode::fedavg_plain) return LabelStateVector(B * C, LabelState::unknown);
  if (uses_camle(cfg.mode)) {
    const Tensor probs = predict(global, model.config, model.buffers, features);
    for (std::size_t b = 0; b < B; ++b) {
      const auto y = targets.data().subspan(b * C, C);
      const auto s = calibrate_states(probs.data().subspan(b * C, C), states_from_targets(y), cfg.calibration);
      states.insert(states.end(), s.begin(), s.end());
    }
    return states;
  }
  for (std::size_t b = 0; b < B; ++b) {
    const auto s = random_label_mask(targets.data().subspan(b * C, C), cfg.mask, rng());
    states.insert(states.end(), s.begin(), s.end());
  }
  return states;
}

LocalUpdateResult local_update(const ParameterSet& global, const ModelContext& model,
                               const std::vector<Sample>& data, const FederationConfig& cfg, std::uint64_t seed) {
  if (data.empty()) throw std::invalid_argument("local_update: client dataset is empty");
  if (label_tokens_for(cfg.mode) != model.config.label_tokens) {
    throw std::invalid_argument("local_update: mode " + to_string(cfg.mode) + " needs label tokens '" +
                                to_string(label_tokens_for(cfg.mode)) + "', model has '" +
                                to_string(model.config.label_tokens) + "'");
  }
  const std::size_t C = model.config.num_classes;
  LocalUpdateResult res;
  res.params = global;
  AdamState opt;
  Rng rng(seed);
  const bool camle_epoch = uses_camle(cfg.mode) && cfg.refresh == CalibrationRefresh::per_epoch;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    const auto order = shuffled(data.size(), rng);
    LabelStateVector epoch_states;
    if (camle_epoch) {
      std::vector<std::size_t> idx(data.size());
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      epoch_states = batch_states(global, model, stack_features(data, idx), stack_labels(data, idx), cfg, rng);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const Tensor x = stack_features(data, idx);
      const Tensor y = stack_labels(data, idx);
      LabelStateVector states;
      if (camle_epoch) {
        for (auto i : idx) states.insert(states.end(), epoch_states.begin() + static_cast<std::ptrdiff_t>(i * C),
                                         epoch_states.begin() + static_cast<std::ptrdiff_t>((i + 1) * C));
      } else {
        states = batch_states(global, model, x, y, cfg, rng);
      }
      Tape tape;
      const ParamVars vars = bind_parameters(tape, res.params);
      const Var logits = forward_states(tape, vars, model.config, model.buffers, x, states);
      const MaskedLoss loss = masked_bce_loss(tape, logits, y, states);
      const auto grads = tape.gradients(loss.loss);
      adam_step(res.params, grads, opt, cfg.adam);
      ++res.steps;
      loss_sum += tape.value(loss.loss).item();
      ++batches;
    }
    res.final_epoch_loss = loss_sum / static_cast<double>(batches);
  }
  return res;
}

std::vector<double> aggregation_weights(std::span<const std::size_t> sizes) {
  double total = 0.0;
  for (auto s : sizes) total += static_cast<double>(s);
  std::vector<double> w;
  for (auto s : sizes) w.push_back(static_cast<double>(s) / total);
  return w;
}

ParameterSet aggregate(std::span<const ParameterSet> locals, std::span<const std::size_t> sizes) {
  if (locals.empty()) throw std::invalid_argument("aggregate: no local models");
  if (locals.size() != sizes.size()) throw std::invalid_argument("aggregate: one size per local model required");
  for (auto s : sizes) {
    if (s == 0) throw std::invalid_argument("aggregate: client sizes must be positive");
  }
  for (std::size_t k = 1; k < locals.size(); ++k) locals[0].require_same_layout(locals[k], "aggregate");
  ParameterSet out = locals[0];
  double seen = static_cast<double>(sizes[0]);
  for (std::size_t k = 1; k < locals.size(); ++k) {
    seen += static_cast<double>(sizes[k]);
    const double w = static_cast<double>(sizes[k]) / seen;
    for (auto& [name, acc] : out) {
      const Tensor& t = locals[k].at(name);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * (t[i] - acc[i]);
    }
  }
  return out;
}

MetricsReport evaluate(const ParameterSet& params, const ModelContext& model, const std::vector<Sample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  const std::size_t C = model.config.num_classes;
  Tensor probs({samples.size(), C});
  for (std::size_t start = 0; start < samples.size(); start += kEvalChunk) {
    std::vector<std::size_t> idx(std::min(kEvalChunk, samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor p = predict(params, model.config, model.buffers, stack_features(samples, idx));
    std::copy(p.data().begin(), p.data().end(), probs.data().begin() + static_cast<std::ptrdiff_t>(start * C));
  }
  return evaluate_metrics(probs, stack_labels(samples));
}

std::uint64_t init_seed(std::uint64_t federation_seed) { return mix_seed(federation_seed, {0x696e6974}); }

TrainingResult run_training(const FederationConfig& cfg, const FederatedDataset& data, const ModelContext& model,
                            const RoundObserver& observer) {
  return run_training(cfg, data, model, init_params(model.config, init_seed(cfg.seed)), observer);
}

TrainingResult run_training(const FederationConfig& cfg, const FederatedDataset& data, const ModelContext& model,
                            const ParameterSet& initial, const RoundObserver& observer) {
  cfg.validate();
  model.config.validate();
  if (data.num_classes != model.config.num_classes || data.feature_dim != model.config.feature_dim) {
    throw std::invalid_argument("run_training: dataset (C=" + std::to_string(data.num_classes) + ", F=" +
                                std::to_string(data.feature_dim) + ") does not match model config");
  }
  if (data.num_clients() == 0) throw std::invalid_argument("run_training: dataset has no clients");
  const auto sizes = data.client_sizes();
  const std::size_t R = cfg.clients_per_round(data.num_clients());
  Rng sampler(mix_seed(cfg.seed, {0x73616d706c65}));

  TrainingResult result;
  result.params = initial;
  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundReport report;
    report.round = t;
    report.clients = sample_clients(sizes, R, cfg.sampling, sampler);
    std::sort(report.clients.begin(), report.clients.end());
    for (auto k : report.clients) report.sizes.push_back(sizes[k]);

    const ParameterSet& global = result.params;
    std::vector<LocalUpdateResult> locals(R);
    std::vector<std::exception_ptr> errors(R);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < R; i = next++) {
        try {
          const std::size_t k = report.clients[i];
          locals[i] = local_update(global, model, data.clients[k], cfg, mix_seed(cfg.seed, {t, k}));
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    const std::size_t threads = std::min(cfg.parallel, R);
    if (threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }

    std::vector<ParameterSet> params;
    params.reserve(R);
    for (auto& l : locals) {
      report.losses.push_back(l.final_epoch_loss);
      params.push_back(std::move(l.params));
    }
    report.weights = aggregation_weights(report.sizes);
    result.params = aggregate(params, report.sizes);
    if (cfg.eval_every > 0 && !data.test.empty() && (t % cfg.eval_every == 0 || t == cfg.rounds)) {
      report.metrics = evaluate(result.params, model, data.test);
    }
    report.wall_time_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (observer) observer(report, result.params);
    result.reports.push_back(std::move(report));
  }
  return result;
}

}  // namespace fedlgt
