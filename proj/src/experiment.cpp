#include "fedlgt/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include "json.hpp"

#include "fedlgt/checkpoint.hpp"
#include "fedlgt/util.hpp"

namespace fedlgt {
namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string to_string(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::synthetic: return "synthetic";
    case EmbeddingSource::file: return "file";
    case EmbeddingSource::averaged: return "averaged";
  }
  return "?";
}

std::string to_string(StateSource s) { return s == StateSource::file ? "file" : "synthetic"; }

// Pulls keys out of one section; anything left over is a typo.
class Section {
 public:
  Section(const pt::ptree& root, std::string name) : name_(std::move(name)) {
    if (auto child = root.get_child_optional(name_)) {
      for (auto& [k, v] : *child) {
        if (!v.empty()) throw ConfigError("[" + name_ + "] " + k + ": nested keys are not supported");
        values_[k] = v.data();
      }
    }
  }

  std::optional<std::string> take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    std::string v(trim(it->second));
    values_.erase(it);
    return v;
  }

  void str(const std::string& key, std::string& out) {
    if (auto v = take(key)) out = *v;
  }
  void path(const std::string& key, fs::path& out, const fs::path& base) {
    if (auto v = take(key)) out = v->empty() ? fs::path{} : resolve(*v, base);
  }
  template <class T>
  void integer(const std::string& key, T& out) {
    if (auto v = take(key)) {
      long long x = wrap(key, [&] { return parse_int(*v); });
      if (x < 0) throw ConfigError(where(key) + ": must be non-negative");
      out = static_cast<T>(x);
    }
  }
  void real(const std::string& key, double& out) {
    if (auto v = take(key)) out = wrap(key, [&] { return parse_double(*v); });
  }
  void boolean(const std::string& key, bool& out) {
    if (auto v = take(key)) {
      if (*v == "true") out = true;
      else if (*v == "false") out = false;
      else throw ConfigError(where(key) + ": expected true or false, got '" + *v + "'");
    }
  }
  template <class T, class Parse>
  void choice(const std::string& key, T& out, Parse parse) {
    if (auto v = take(key)) out = wrap(key, [&] { return parse(*v); });
  }

  void finish() const {
    if (!values_.empty()) throw ConfigError(where(values_.begin()->first) + ": unknown key");
  }

  std::string where(const std::string& key) const { return "[" + name_ + "] " + key; }

  static fs::path resolve(const std::string& v, const fs::path& base) {
    fs::path p(v);
    if (p.is_relative() && !base.empty()) p = base / p;
    return p.lexically_normal();
  }

 private:
  template <class F>
  auto wrap(const std::string& key, F f) -> decltype(f()) {
    try {
      return f();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  std::string name_;
  std::map<std::string, std::string> values_;
};

EmbeddingSource parse_embedding_source(std::string_view s) {
  if (s == "synthetic") return EmbeddingSource::synthetic;
  if (s == "file") return EmbeddingSource::file;
  if (s == "averaged") return EmbeddingSource::averaged;
  throw std::invalid_argument("unknown embedding source '" + std::string(s) + "'");
}

StateSource parse_state_source(std::string_view s) {
  if (s == "synthetic") return StateSource::synthetic;
  if (s == "file") return StateSource::file;
  throw std::invalid_argument("unknown state source '" + std::string(s) + "'");
}

void require_file(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " is required");
  if (!fs::is_regular_file(p)) throw ConfigError(what + " '" + p.string() + "' does not exist");
}

std::string num(double v) { return format_double(v); }

nlohmann::ordered_json metrics_json(const MetricsReport& m) {
  nlohmann::ordered_json j;
  auto names = MetricsReport::names();
  auto vals = m.values();
  for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = vals[i];
  return j;
}

std::string histogram(const std::vector<std::size_t>& sizes) {
  if (sizes.empty()) return "";
  std::size_t lo = *std::min_element(sizes.begin(), sizes.end());
  std::size_t hi = *std::max_element(sizes.begin(), sizes.end());
  const std::size_t bins = std::min<std::size_t>(8, hi - lo + 1);
  double width = static_cast<double>(hi - lo + 1) / static_cast<double>(bins);
  std::vector<std::size_t> count(bins, 0);
  for (auto s : sizes) {
    auto b = static_cast<std::size_t>(static_cast<double>(s - lo) / width);
    ++count[std::min(b, bins - 1)];
  }
  std::ostringstream os;
  for (std::size_t b = 0; b < bins; ++b) {
    auto from = lo + static_cast<std::size_t>(std::ceil(b * width));
    auto to = lo + static_cast<std::size_t>(std::ceil((b + 1) * width)) - 1;
    os << "  " << std::setw(5) << from << "-" << std::left << std::setw(5) << to << std::right << " "
       << std::setw(4) << count[b] << " " << std::string(count[b], '#') << "\n";
  }
  return os.str();
}

void write_metrics_file(const fs::path& path, const MetricsReport& m) {
  write_text_file(path, metrics_record(m) + "\n");
}

}  // namespace

ModelConfig ExperimentConfig::model_for(TrainingMode mode, std::size_t num_classes, std::size_t feature_dim) const {
  ModelConfig m = model;
  m.num_classes = num_classes;
  m.feature_dim = feature_dim;
  m.label_tokens = label_tokens_for(mode);
  return m;
}

void ExperimentConfig::validate() const {
  if (!dataset_path) {
    try {
      dataset.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  } else if (!fs::is_regular_file(*dataset_path / "spec")) {
    throw ConfigError("[dataset] path '" + dataset_path->string() + "' is not a dataset directory");
  }
  try {
    federation.validate();
    std::size_t c = dataset_path ? 1 : dataset.num_classes;
    std::size_t f = dataset_path ? model.num_feature_tokens : dataset.feature_dim;
    model_for(federation.mode, c, f).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  switch (embeddings.source) {
    case EmbeddingSource::synthetic:
      if (!embeddings.path.empty() || !embeddings.mapping.empty())
        throw ConfigError("[embeddings] synthetic source takes no path or mapping");
      if (embeddings.states == StateSource::file) throw ConfigError("[embeddings] states = file needs a file source");
      break;
    case EmbeddingSource::file:
      require_file(embeddings.path, "[embeddings] path");
      if (!embeddings.mapping.empty()) throw ConfigError("[embeddings] mapping is only used by the averaged source");
      break;
    case EmbeddingSource::averaged:
      require_file(embeddings.path, "[embeddings] path");
      require_file(embeddings.mapping, "[embeddings] mapping");
      break;
  }
  if (ablation_seeds < 1) throw ConfigError("[ablation] seeds must be >= 1");
}

ExperimentConfig parse_experiment_config(const std::string& text, const fs::path& base_dir) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  static const std::set<std::string> known = {"dataset",    "model",  "federation", "calibration",
                                              "embeddings", "output", "ablation"};
  for (auto& [name, child] : tree) {
    if (child.empty()) throw ConfigError("config: key '" + name + "' outside any section");
    if (!known.count(name)) throw ConfigError("config: unknown section [" + name + "]");
  }

  ExperimentConfig cfg;
  {
    Section s(tree, "dataset");
    fs::path p;
    s.path("path", p, base_dir);
    if (!p.empty()) cfg.dataset_path = p;
    auto& d = cfg.dataset;
    s.integer("clients", d.num_clients);
    s.integer("classes", d.num_classes);
    s.integer("feature_dim", d.feature_dim);
    s.real("power_exponent", d.power_exponent);
    s.integer("min_samples", d.min_samples);
    s.integer("max_samples", d.max_samples);
    std::size_t clique_size = 0;
    s.integer("clique_size", clique_size);
    auto cliques = s.take("cliques");
    if (cliques && clique_size) throw ConfigError("[dataset] give either cliques or clique_size, not both");
    if (cliques) {
      try {
        d.client_cliques = parse_cliques(*cliques);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("[dataset] cliques: ") + e.what());
      }
    } else {
      if (!clique_size) clique_size = 4;
      if (clique_size > d.num_classes) throw ConfigError("[dataset] clique_size exceeds classes");
      d.client_cliques = round_robin_cliques(d.num_clients, d.num_classes, clique_size);
    }
    s.real("cooccurrence", d.cooccurrence);
    s.real("background", d.background);
    s.real("noise", d.noise);
    s.integer("test_samples", d.test_samples);
    s.integer("seed", d.seed);
    s.finish();
  }
  {
    Section s(tree, "model");
    auto& m = cfg.model;
    s.integer("embed_dim", m.embed_dim);
    s.integer("feature_tokens", m.num_feature_tokens);
    s.integer("layers", m.transformer_layers);
    s.integer("heads", m.attention_heads);
    s.integer("ffn_dim", m.ffn_dim);
    s.choice("backbone", m.backbone, parse_backbone);
    s.boolean("positional_encoding", m.feature_positional_encoding);
    s.finish();
  }
  {
    Section s(tree, "federation");
    auto& f = cfg.federation;
    s.integer("rounds", f.rounds);
    s.integer("local_epochs", f.local_epochs);
    s.real("active_fraction", f.active_fraction);
    s.choice("sampling", f.sampling, parse_sampling);
    s.choice("mode", f.mode, parse_training_mode);
    s.integer("seed", f.seed);
    s.integer("batch_size", f.batch_size);
    s.real("learning_rate", f.adam.lr);
    s.real("beta1", f.adam.beta1);
    s.real("beta2", f.adam.beta2);
    s.real("adam_eps", f.adam.eps);
    s.real("mask_min", f.mask.lo);
    s.real("mask_max", f.mask.hi);
    s.integer("parallel", f.parallel);
    s.finish();
  }
  {
    Section s(tree, "calibration");
    s.real("tau", cfg.federation.calibration.tau);
    s.real("epsilon", cfg.federation.calibration.epsilon);
    s.choice("refresh", cfg.federation.refresh, parse_refresh);
    s.finish();
  }
  {
    Section s(tree, "embeddings");
    auto& e = cfg.embeddings;
    s.choice("source", e.source, parse_embedding_source);
    s.path("path", e.path, base_dir);
    s.path("mapping", e.mapping, base_dir);
    s.choice("states", e.states, parse_state_source);
    s.integer("dim", e.dim);
    s.integer("seed", e.seed);
    s.integer("projection_seed", e.projection_seed);
    s.finish();
  }
  {
    Section s(tree, "output");
    std::string dir;
    s.str("dir", dir);
    if (!dir.empty()) cfg.output_dir = Section::resolve(dir, base_dir);
    s.integer("eval_every", cfg.federation.eval_every);
    s.integer("checkpoint_every", cfg.checkpoint_every);
    s.finish();
  }
  {
    Section s(tree, "ablation");
    s.integer("seeds", cfg.ablation_seeds);
    s.finish();
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError("cannot read config '" + path.string() + "'");
  }
  auto cfg = parse_experiment_config(text, path.parent_path());
  cfg.validate();
  return cfg;
}

std::string format_experiment_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << "\n"; };
  const auto& d = cfg.dataset;
  os << "[dataset]\n";
  if (cfg.dataset_path) kv("path", cfg.dataset_path->string());
  kv("clients", std::to_string(d.num_clients));
  kv("classes", std::to_string(d.num_classes));
  kv("feature_dim", std::to_string(d.feature_dim));
  kv("power_exponent", num(d.power_exponent));
  kv("min_samples", std::to_string(d.min_samples));
  kv("max_samples", std::to_string(d.max_samples));
  kv("cliques", format_cliques(d.client_cliques));
  kv("cooccurrence", num(d.cooccurrence));
  kv("background", num(d.background));
  kv("noise", num(d.noise));
  kv("test_samples", std::to_string(d.test_samples));
  kv("seed", std::to_string(d.seed));

  const auto& m = cfg.model;
  os << "\n[model]\n";
  kv("embed_dim", std::to_string(m.embed_dim));
  kv("feature_tokens", std::to_string(m.num_feature_tokens));
  kv("layers", std::to_string(m.transformer_layers));
  kv("heads", std::to_string(m.attention_heads));
  kv("ffn_dim", std::to_string(m.ffn_dim));
  kv("backbone", to_string(m.backbone));
  kv("positional_encoding", m.feature_positional_encoding ? "true" : "false");

  const auto& f = cfg.federation;
  os << "\n[federation]\n";
  kv("rounds", std::to_string(f.rounds));
  kv("local_epochs", std::to_string(f.local_epochs));
  kv("active_fraction", num(f.active_fraction));
  kv("sampling", to_string(f.sampling));
  kv("mode", to_string(f.mode));
  kv("seed", std::to_string(f.seed));
  kv("batch_size", std::to_string(f.batch_size));
  kv("learning_rate", num(f.adam.lr));
  kv("beta1", num(f.adam.beta1));
  kv("beta2", num(f.adam.beta2));
  kv("adam_eps", num(f.adam.eps));
  kv("mask_min", num(f.mask.lo));
  kv("mask_max", num(f.mask.hi));
  kv("parallel", std::to_string(f.parallel));

  os << "\n[calibration]\n";
  kv("tau", num(f.calibration.tau));
  kv("epsilon", num(f.calibration.epsilon));
  kv("refresh", to_string(f.refresh));

  const auto& e = cfg.embeddings;
  os << "\n[embeddings]\n";
  kv("source", to_string(e.source));
  if (!e.path.empty()) kv("path", e.path.string());
  if (!e.mapping.empty()) kv("mapping", e.mapping.string());
  kv("states", to_string(e.states));
  kv("dim", std::to_string(e.dim));
  kv("seed", std::to_string(e.seed));
  kv("projection_seed", std::to_string(e.projection_seed));

  os << "\n[output]\n";
  kv("dir", cfg.output_dir.string());
  kv("eval_every", std::to_string(f.eval_every));
  kv("checkpoint_every", std::to_string(cfg.checkpoint_every));

  os << "\n[ablation]\n";
  kv("seeds", std::to_string(cfg.ablation_seeds));
  return os.str();
}

void override_seed(ExperimentConfig& cfg, std::uint64_t seed) {
  cfg.dataset.seed = seed;
  cfg.federation.seed = seed;
}

EmbeddingBundle build_embeddings(const EmbeddingSettings& s, std::size_t num_classes, std::size_t width) {
  EmbeddingMatrix labels;
  StateEmbeddings states;
  switch (s.source) {
    case EmbeddingSource::synthetic: {
      std::size_t dim = s.dim ? s.dim : width;
      labels = synth_embeddings(num_classes, dim, s.seed);
      states = make_state_embeddings_synthetic(dim, mix_seed(s.seed, {1}));
      break;
    }
    case EmbeddingSource::file: {
      labels = read_embedding_file(s.path).labels;
      states = s.states == StateSource::file ? make_state_embeddings_from_file(labels.dim(), s.path)
                                             : make_state_embeddings_synthetic(labels.dim(), mix_seed(s.seed, {1}));
      break;
    }
    case EmbeddingSource::averaged: {
      auto fine = read_embedding_file(s.path).labels;
      auto mapping = read_coarse_mapping(s.mapping, fine);
      labels = coarse_from_fine(fine, mapping.fine_ids, mapping.coarse_names);
      states = s.states == StateSource::file ? make_state_embeddings_from_file(fine.dim(), s.path)
                                             : make_state_embeddings_synthetic(fine.dim(), mix_seed(s.seed, {1}));
      break;
    }
  }
  if (labels.num_classes() != num_classes) {
    throw std::invalid_argument("embeddings have " + std::to_string(labels.num_classes()) +
                                " classes, dataset has " + std::to_string(num_classes));
  }
  return {project_to_width(labels, width, s.projection_seed), project_to_width(states, width, s.projection_seed)};
}

FederatedDataset obtain_dataset(const ExperimentConfig& cfg) {
  return cfg.dataset_path ? load_dataset(*cfg.dataset_path) : generate(cfg.dataset);
}

ModelContext make_model_context(const ExperimentConfig& cfg, TrainingMode mode, const FederatedDataset& data,
                                const EmbeddingBundle& emb) {
  ModelContext ctx;
  ctx.config = cfg.model_for(mode, data.num_classes, data.feature_dim);
  ctx.config.validate();
  ctx.buffers = ModelBuffers::from(ctx.config, &emb.labels, &emb.states);
  return ctx;
}

std::string round_record(const RoundReport& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["clients"] = r.clients;
  j["sizes"] = r.sizes;
  j["weights"] = r.weights;
  j["losses"] = r.losses;
  j["metrics"] = r.metrics ? metrics_json(*r.metrics) : nlohmann::ordered_json(nullptr);
  return j.dump();
}

std::string metrics_record(const MetricsReport& m) { return metrics_json(m).dump(); }

int cmd_gen_data(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.dataset_path) {
    err << "gen-data: config points at an existing dataset; remove [dataset] path to generate\n";
    return 1;
  }
  try {
    auto ds = generate(cfg.dataset);
    fs::path dir = cfg.output_dir / "dataset";
    save_dataset(ds, dir);
    auto sizes = ds.client_sizes();
    std::size_t total = 0;
    for (auto s : sizes) total += s;
    out << "dataset " << dir.string() << "\n";
    out << "K " << ds.num_clients() << "\n";
    out << "C " << ds.num_classes << "\n";
    out << "feature_dim " << ds.feature_dim << "\n";
    out << "train_samples " << total << "\n";
    out << "test_samples " << ds.test.size() << "\n";
    out << "client sizes:\n" << histogram(sizes);
    return 0;
  } catch (const std::exception& e) {
    err << "gen-data: " << e.what() << "\n";
    return 1;
  }
}

TrainOutcome run_train(const ExperimentConfig& cfg, std::ostream& out) {
  auto data = obtain_dataset(cfg);
  auto emb = build_embeddings(cfg.embeddings, data.num_classes, cfg.model.embed_dim);
  auto ctx = make_model_context(cfg, cfg.federation.mode, data, emb);

  fs::create_directories(cfg.output_dir);
  const fs::path round_log = cfg.output_dir / "rounds.jsonl";
  const fs::path timings = cfg.output_dir / "timings.log";
  std::ofstream log(round_log, std::ios::binary | std::ios::trunc);
  std::ofstream tlog(timings, std::ios::binary | std::ios::trunc);
  if (!log || !tlog) throw std::runtime_error("cannot write logs in " + cfg.output_dir.string());

  auto observer = [&](const RoundReport& r, const ParameterSet& params) {
    log << round_record(r) << "\n";
    log.flush();
    tlog << "round " << r.round << " " << std::fixed << std::setprecision(1) << r.wall_time_ms << " ms\n";
    double mean_loss = 0.0;
    for (double l : r.losses) mean_loss += l;
    if (!r.losses.empty()) mean_loss /= static_cast<double>(r.losses.size());
    out << "round " << r.round << "/" << cfg.federation.rounds << " loss " << format_double(mean_loss);
    if (r.metrics) out << " C-AP " << std::fixed << std::setprecision(2) << 100.0 * r.metrics->c_ap
                       << std::defaultfloat;
    out << "\n";
    if (cfg.checkpoint_every && r.round % cfg.checkpoint_every == 0 && r.round != cfg.federation.rounds) {
      save_checkpoint(cfg.output_dir / ("checkpoint_round" + std::to_string(r.round) + ".bin"),
                      {ctx.config, params, ctx.buffers});
    }
  };

  TrainOutcome o;
  o.result = run_training(cfg.federation, data, ctx, observer);
  o.checkpoint = cfg.output_dir / "checkpoint.bin";
  save_checkpoint(o.checkpoint, {ctx.config, o.result.params, ctx.buffers});
  if (!data.test.empty()) {
    o.final_metrics = !o.result.reports.empty() && o.result.reports.back().metrics
                          ? *o.result.reports.back().metrics
                          : evaluate(o.result.params, ctx, data.test);
    write_metrics_file(cfg.output_dir / "metrics.json", *o.final_metrics);
  }
  return o;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    out << "mode " << to_string(cfg.federation.mode) << "\n";
    auto o = run_train(cfg, out);
    out << "checkpoint " << o.checkpoint.string() << "\n";
    if (o.final_metrics) out << format_metrics_table({{display_name(cfg.federation.mode), *o.final_metrics}});
    return 0;
  } catch (const std::exception& e) {
    err << "train: " << e.what() << "\n";
    return 1;
  }
}

MetricsReport run_eval(const fs::path& checkpoint, const fs::path& dataset_dir) {
  auto ckpt = load_checkpoint(checkpoint);
  auto data = load_dataset(dataset_dir);
  if (ckpt.config.num_classes != data.num_classes || ckpt.config.feature_dim != data.feature_dim) {
    throw std::invalid_argument("checkpoint expects C=" + std::to_string(ckpt.config.num_classes) +
                                " feature_dim=" + std::to_string(ckpt.config.feature_dim) + ", dataset has C=" +
                                std::to_string(data.num_classes) + " feature_dim=" +
                                std::to_string(data.feature_dim));
  }
  if (data.test.empty()) throw std::invalid_argument("dataset has no test split");
  return evaluate(ckpt.params, ModelContext{ckpt.config, ckpt.buffers}, data.test);
}

int cmd_eval(const fs::path& checkpoint, const fs::path& dataset_dir, std::ostream& out, std::ostream& err) {
  try {
    auto m = run_eval(checkpoint, dataset_dir);
    out << format_metrics_table({{checkpoint.filename().string(), m}});
    return 0;
  } catch (const std::exception& e) {
    err << "eval: " << e.what() << "\n";
    return 1;
  }
}

std::vector<TrainingMode> ablation_arms() {
  return {TrainingMode::fedctran, TrainingMode::fedctran_camle, TrainingMode::fedctran_ule, TrainingMode::fedlgt};
}

std::vector<AblationArmResult> run_ablation(const ExperimentConfig& cfg, std::ostream& out) {
  auto arms = ablation_arms();
  std::vector<AblationArmResult> results;
  for (auto m : arms) results.push_back({m, {}, {}, {}});

  const fs::path dir = cfg.output_dir / "ablation";
  fs::create_directories(dir);
  std::ofstream log(dir / "runs.jsonl", std::ios::binary | std::ios::trunc);

  for (std::size_t i = 0; i < cfg.ablation_seeds; ++i) {
    ExperimentConfig run = cfg;
    run.dataset.seed = cfg.dataset.seed + i;
    run.federation.seed = cfg.federation.seed + i;
    run.federation.eval_every = run.federation.rounds;  // final round only
    auto data = obtain_dataset(run);
    auto emb = build_embeddings(run.embeddings, data.num_classes, run.model.embed_dim);
    for (std::size_t a = 0; a < arms.size(); ++a) {
      run.federation.mode = arms[a];
      auto ctx = make_model_context(run, arms[a], data, emb);
      auto res = run_training(run.federation, data, ctx);
      MetricsReport m = res.reports.empty() || !res.reports.back().metrics ? evaluate(res.params, ctx, data.test)
                                                                           : *res.reports.back().metrics;
      std::vector<std::vector<std::size_t>> seq;
      for (auto& r : res.reports) seq.push_back(r.clients);
      results[a].per_seed.push_back(m);
      results[a].sampled.push_back(std::move(seq));

      fs::path arm_dir = dir / (to_string(arms[a]) + "_seed" + std::to_string(run.federation.seed));
      fs::create_directories(arm_dir);
      save_checkpoint(arm_dir / "checkpoint.bin", {ctx.config, res.params, ctx.buffers});

      nlohmann::ordered_json j;
      j["arm"] = to_string(arms[a]);
      j["seed"] = run.federation.seed;
      j["dataset_seed"] = run.dataset.seed;
      j["metrics"] = metrics_json(m);
      log << j.dump() << "\n";
      log.flush();
      out << "seed " << run.federation.seed << " " << std::left << std::setw(20) << display_name(arms[a])
          << std::right << " C-AP " << std::fixed << std::setprecision(2) << 100.0 * m.c_ap << std::defaultfloat
          << "\n";
    }
  }

  for (auto& r : results) {
    std::vector<double> acc(8, 0.0);
    for (auto& m : r.per_seed) {
      auto v = m.values();
      for (std::size_t k = 0; k < 8; ++k) acc[k] += v[k];
    }
    double n = static_cast<double>(r.per_seed.size());
    r.mean = {acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n, acc[4] / n, acc[5] / n, acc[6] / n, acc[7] / n};
  }
  return results;
}

std::string format_ablation(const std::vector<AblationArmResult>& arms) {
  std::vector<std::pair<std::string, MetricsReport>> rows;
  for (auto& a : arms) rows.emplace_back(display_name(a.mode), a.mean);
  std::ostringstream os;
  std::size_t seeds = arms.empty() ? 0 : arms.front().per_seed.size();
  os << "mean over " << seeds << " seed" << (seeds == 1 ? "" : "s") << "\n";
  os << format_metrics_table(rows);
  os << "\nC-AP per seed\n";
  for (auto& a : arms) {
    os << std::left << std::setw(20) << display_name(a.mode) << std::right;
    double mean = a.mean.c_ap, var = 0.0;
    for (auto& m : a.per_seed) {
      os << " " << std::fixed << std::setprecision(2) << std::setw(6) << 100.0 * m.c_ap;
      var += (m.c_ap - mean) * (m.c_ap - mean);
    }
    double sd = a.per_seed.size() > 1 ? std::sqrt(var / static_cast<double>(a.per_seed.size() - 1)) : 0.0;
    os << "  mean " << std::setw(6) << 100.0 * mean << " sd " << std::setw(5) << 100.0 * sd << std::defaultfloat
       << "\n";
  }
  return os.str();
}

int cmd_ablate(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    auto arms = run_ablation(cfg, out);
    auto table = format_ablation(arms);
    write_text_file(cfg.output_dir / "ablation" / "table.txt", table);
    out << "\n" << table;
    return 0;
  } catch (const std::exception& e) {
    err << "ablate: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace fedlgt
