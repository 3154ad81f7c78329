#include "fedlgt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fedlgt/util.hpp"

namespace fedlgt {
namespace {

constexpr std::string_view kFormat = "FDS1";

std::string echo_get(const SpecEcho& echo, const std::string& key) {
  for (const auto& [k, v] : echo) {
    if (k == key) return v;
  }
  throw DatasetFormatError("dataset spec: missing '" + key + "'");
}

std::size_t to_size(const std::string& v) {
  const long long x = parse_int(v);
  if (x < 0) throw std::invalid_argument("negative count '" + v + "'");
  return static_cast<std::size_t>(x);
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

Sample draw_sample(const std::vector<std::vector<std::size_t>>& cliques, const DatasetSpec& spec,
                   const Tensor& protos, Rng& rng) {
  const std::size_t C = spec.num_classes, F = spec.feature_dim;
  Sample s;
  s.labels.assign(C, 0);
  std::vector<bool> in_clique(C, false);
  if (!cliques.empty()) {
    const auto& clique = cliques[static_cast<std::size_t>(rng() % cliques.size())];
    if (!clique.empty()) {
      const std::size_t anchor = clique[static_cast<std::size_t>(rng() % clique.size())];
      for (auto c : clique) {
        in_clique[c] = true;
        if (c == anchor || uniform01(rng) < spec.cooccurrence) s.labels[c] = 1;
      }
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    if (!in_clique[c] && uniform01(rng) < spec.background) s.labels[c] = 1;
  }
  s.features.assign(F, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    if (!s.labels[c]) continue;
    for (std::size_t j = 0; j < F; ++j) s.features[j] += protos[c * F + j];
  }
  if (spec.noise > 0.0) {
    std::normal_distribution<double> normal(0.0, spec.noise);
    for (auto& x : s.features) x += normal(rng);
  }
  return s;
}

std::string format_shard(const std::vector<Sample>& shard, std::size_t F, std::size_t C) {
  std::ostringstream os;
  os << kFormat << ' ' << shard.size() << ' ' << F << ' ' << C << '\n';
  for (const auto& s : shard) {
    for (std::size_t j = 0; j < s.features.size(); ++j) {
      if (j) os << ',';
      os << format_double(s.features[j]);
    }
    os << '|';
    for (std::size_t c = 0; c < s.labels.size(); ++c) {
      if (c) os << ',';
      os << static_cast<int>(s.labels[c]);
    }
    os << '\n';
  }
  return os.str();
}

std::vector<Sample> parse_shard(const std::filesystem::path& path, std::size_t F, std::size_t C) {
  if (!std::filesystem::exists(path)) throw DatasetFormatError("dataset: missing file '" + path.string() + "'");
  const std::string text = read_text_file(path);
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  const std::string where = path.filename().string();
  if (lines.empty()) throw DatasetFormatError(where + ": empty file");
  auto header = split(trim(lines[0]), ' ');
  if (header.size() != 4 || header[0] != kFormat) {
    throw DatasetFormatError(where + ": bad header (version mismatch or not an FDS1 file)");
  }
  std::size_t n = 0;
  try {
    n = to_size(std::string(header[1]));
    if (to_size(std::string(header[2])) != F || to_size(std::string(header[3])) != C) {
      throw DatasetFormatError(where + ": header dimensions disagree with spec");
    }
  } catch (const std::invalid_argument& e) {
    throw DatasetFormatError(where + ": " + e.what());
  }
  if (lines.size() - 1 != n) {
    throw DatasetFormatError(where + ": truncated, header declares " + std::to_string(n) + " samples, found " +
                             std::to_string(lines.size() - 1));
  }
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string at = where + ": sample " + std::to_string(i);
    auto parts = split(lines[i + 1], '|');
    if (parts.size() != 2) throw DatasetFormatError(at + ": expected '<features>|<labels>'");
    auto fs = split(parts[0], ',');
    auto ys = split(parts[1], ',');
    if (fs.size() != F || ys.size() != C) throw DatasetFormatError(at + ": wrong field count");
    Sample s;
    try {
      for (auto f : fs) s.features.push_back(parse_double(f));
    } catch (const std::invalid_argument& e) {
      throw DatasetFormatError(at + ": " + e.what());
    }
    for (auto y : ys) {
      y = trim(y);
      if (y != "0" && y != "1") throw DatasetFormatError(at + ": label must be 0 or 1");
      s.labels.push_back(y == "1" ? 1 : 0);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace

std::vector<std::size_t> FederatedDataset::client_sizes() const {
  std::vector<std::size_t> s;
  for (const auto& c : clients) s.push_back(c.size());
  return s;
}

Tensor stack_features(const std::vector<Sample>& samples, std::span<const std::size_t> idx) {
  const std::size_t F = samples.empty() ? 0 : samples[idx.empty() ? 0 : idx[0]].features.size();
  Tensor t({idx.size(), F});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& f = samples.at(idx[i]).features;
    if (f.size() != F) throw ShapeError("stack_features: ragged feature vectors");
    std::copy(f.begin(), f.end(), t.data().begin() + static_cast<std::ptrdiff_t>(i * F));
  }
  return t;
}

Tensor stack_labels(const std::vector<Sample>& samples, std::span<const std::size_t> idx) {
  const std::size_t C = samples.empty() ? 0 : samples[idx.empty() ? 0 : idx[0]].labels.size();
  Tensor t({idx.size(), C});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& y = samples.at(idx[i]).labels;
    if (y.size() != C) throw ShapeError("stack_labels: ragged label vectors");
    for (std::size_t c = 0; c < C; ++c) t[i * C + c] = y[c];
  }
  return t;
}

namespace {
std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}
}  // namespace

Tensor stack_features(const std::vector<Sample>& samples) { return stack_features(samples, all_indices(samples.size())); }
Tensor stack_labels(const std::vector<Sample>& samples) { return stack_labels(samples, all_indices(samples.size())); }

void DatasetSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("dataset spec: " + m); };
  if (num_clients < 1) fail("K must be >= 1");
  if (num_classes < 1) fail("C must be >= 1");
  if (feature_dim < 1) fail("feature_dim must be >= 1");
  if (min_samples < 1) fail("min_samples must be >= 1");
  if (max_samples < min_samples) fail("max_samples must be >= min_samples");
  if (!(power_exponent >= 0.0)) fail("power_exponent must be >= 0");
  for (double p : {cooccurrence, background}) {
    if (!(p >= 0.0 && p <= 1.0)) fail("probabilities must lie in [0, 1]");
  }
  if (!(noise >= 0.0)) fail("noise must be >= 0");
  if (client_cliques.size() != num_clients) {
    fail("clique assignment lists " + std::to_string(client_cliques.size()) + " clients, expected " +
         std::to_string(num_clients));
  }
  for (std::size_t k = 0; k < client_cliques.size(); ++k) {
    for (const auto& g : client_cliques[k]) {
      for (auto c : g) {
        if (c >= num_classes) {
          fail("client " + std::to_string(k) + " clique references class " + std::to_string(c) +
               " >= C=" + std::to_string(num_classes));
        }
      }
    }
  }
}

SpecEcho DatasetSpec::to_echo() const {
  return {
      {"source", "generate"},
      {"num_clients", std::to_string(num_clients)},
      {"num_classes", std::to_string(num_classes)},
      {"feature_dim", std::to_string(feature_dim)},
      {"power_exponent", format_double(power_exponent)},
      {"min_samples", std::to_string(min_samples)},
      {"max_samples", std::to_string(max_samples)},
      {"client_cliques", format_cliques(client_cliques)},
      {"cooccurrence", format_double(cooccurrence)},
      {"background", format_double(background)},
      {"noise", format_double(noise)},
      {"test_samples", std::to_string(test_samples)},
      {"seed", std::to_string(seed)},
  };
}

DatasetSpec DatasetSpec::from_echo(const SpecEcho& e) {
  DatasetSpec s;
  try {
    s.num_clients = to_size(echo_get(e, "num_clients"));
    s.num_classes = to_size(echo_get(e, "num_classes"));
    s.feature_dim = to_size(echo_get(e, "feature_dim"));
    s.power_exponent = parse_double(echo_get(e, "power_exponent"));
    s.min_samples = to_size(echo_get(e, "min_samples"));
    s.max_samples = to_size(echo_get(e, "max_samples"));
    s.client_cliques = parse_cliques(echo_get(e, "client_cliques"));
    s.cooccurrence = parse_double(echo_get(e, "cooccurrence"));
    s.background = parse_double(echo_get(e, "background"));
    s.noise = parse_double(echo_get(e, "noise"));
    s.test_samples = to_size(echo_get(e, "test_samples"));
    s.seed = static_cast<std::uint64_t>(std::stoull(echo_get(e, "seed")));
  } catch (const std::invalid_argument& ex) {
    throw DatasetFormatError(std::string("dataset spec: ") + ex.what());
  }
  return s;
}

std::vector<std::vector<std::vector<std::size_t>>> round_robin_cliques(std::size_t num_clients,
                                                                       std::size_t num_classes,
                                                                       std::size_t clique_size) {
  if (clique_size < 1) throw std::invalid_argument("round_robin_cliques: clique size must be >= 1");
  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < num_classes; start += clique_size) {
    std::vector<std::size_t> g;
    for (std::size_t c = start; c < std::min(num_classes, start + clique_size); ++c) g.push_back(c);
    groups.push_back(std::move(g));
  }
  std::vector<std::vector<std::vector<std::size_t>>> out(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) out[k].push_back(groups[k % groups.size()]);
  return out;
}

// Clients separated by ';', a client's cliques by '/', classes by ','.
std::string format_cliques(const std::vector<std::vector<std::vector<std::size_t>>>& cliques) {
  std::string s;
  for (std::size_t k = 0; k < cliques.size(); ++k) {
    if (k) s += ';';
    for (std::size_t g = 0; g < cliques[k].size(); ++g) {
      if (g) s += '/';
      for (std::size_t i = 0; i < cliques[k][g].size(); ++i) {
        if (i) s += ',';
        s += std::to_string(cliques[k][g][i]);
      }
    }
  }
  return s;
}

std::vector<std::vector<std::vector<std::size_t>>> parse_cliques(std::string_view text) {
  std::vector<std::vector<std::vector<std::size_t>>> out;
  text = trim(text);
  if (text.empty()) return out;
  for (auto client : split(text, ';')) {
    std::vector<std::vector<std::size_t>> groups;
    client = trim(client);
    if (!client.empty()) {
      for (auto g : split(client, '/')) {
        std::vector<std::size_t> ids;
        for (auto c : split(g, ',')) {
          if (trim(c).empty()) continue;
          const long long v = parse_int(c);
          if (v < 0) throw std::invalid_argument("negative class id in clique list");
          ids.push_back(static_cast<std::size_t>(v));
        }
        groups.push_back(std::move(ids));
      }
    }
    out.push_back(std::move(groups));
  }
  return out;
}

Tensor class_prototypes(std::size_t num_classes, std::size_t feature_dim, std::uint64_t seed) {
  Rng rng(mix_seed(seed, {0x70726f746f}));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor p({num_classes, feature_dim});
  for (std::size_t c = 0; c < num_classes; ++c) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < feature_dim; ++j) {
      p[c * feature_dim + j] = normal(rng);
      n2 += p[c * feature_dim + j] * p[c * feature_dim + j];
    }
    const double inv = 1.0 / std::sqrt(n2);
    for (std::size_t j = 0; j < feature_dim; ++j) p[c * feature_dim + j] *= inv;
  }
  return p;
}

std::vector<std::size_t> draw_client_sizes(const DatasetSpec& spec) {
  const std::size_t K = spec.num_clients;
  Rng rng(mix_seed(spec.seed, {0x73697a65}));
  std::vector<std::size_t> strata(K);
  std::iota(strata.begin(), strata.end(), std::size_t{0});
  shuffle(strata, rng);
  std::vector<std::size_t> sizes(K);
  for (std::size_t k = 0; k < K; ++k) {
    // u in (stratum/K, (stratum+1)/K]
    const double u = (static_cast<double>(strata[k]) + 1.0 - uniform01(rng)) / static_cast<double>(K);
    const double raw = static_cast<double>(spec.min_samples) * std::pow(u, -spec.power_exponent);
    const double clamped = std::min(std::round(raw), static_cast<double>(spec.max_samples));
    sizes[k] = std::max(spec.min_samples, static_cast<std::size_t>(clamped));
  }
  return sizes;
}

FederatedDataset generate(const DatasetSpec& spec) {
  spec.validate();
  FederatedDataset ds;
  ds.feature_dim = spec.feature_dim;
  ds.num_classes = spec.num_classes;
  ds.spec = spec.to_echo();
  const Tensor protos = class_prototypes(spec.num_classes, spec.feature_dim, spec.seed);
  const auto sizes = draw_client_sizes(spec);
  Rng rng(mix_seed(spec.seed, {0x73616d70}));
  ds.clients.resize(spec.num_clients);
  for (std::size_t k = 0; k < spec.num_clients; ++k) {
    for (std::size_t i = 0; i < sizes[k]; ++i) {
      ds.clients[k].push_back(draw_sample(spec.client_cliques[k], spec, protos, rng));
    }
  }
  // Test samples mix all clients' label distributions equally.
  for (std::size_t i = 0; i < spec.test_samples; ++i) {
    const auto k = static_cast<std::size_t>(rng() % spec.num_clients);
    ds.test.push_back(draw_sample(spec.client_cliques[k], spec, protos, rng));
  }
  return ds;
}

FederatedDataset partition_existing(const std::vector<Sample>& samples, std::size_t num_clients,
                                    PartitionSkew skew, std::uint64_t seed, double test_fraction,
                                    int max_retries) {
  if (num_clients < 1) throw std::invalid_argument("partition: K must be >= 1");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("partition: test fraction must lie in [0, 1)");
  }
  if (samples.empty()) throw std::invalid_argument("partition: no samples");
  const std::size_t F = samples[0].features.size(), C = samples[0].labels.size();
  Rng rng(mix_seed(seed, {0x70617274}));
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle(order, rng);
  const auto n_test = static_cast<std::size_t>(std::round(test_fraction * static_cast<double>(samples.size())));
  const std::vector<std::size_t> test_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  const std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  if (num_clients > train_idx.size()) {
    throw std::invalid_argument("partition: K=" + std::to_string(num_clients) + " exceeds " +
                                std::to_string(train_idx.size()) + " training samples");
  }

  FederatedDataset ds;
  ds.feature_dim = F;
  ds.num_classes = C;
  ds.spec = {{"source", "partition"},
             {"num_clients", std::to_string(num_clients)},
             {"skew", skew.kind == SkewKind::iid ? "iid" : "label-dirichlet"},
             {"alpha", format_double(skew.alpha)},
             {"test_fraction", format_double(test_fraction)},
             {"seed", std::to_string(seed)}};
  for (auto i : test_idx) ds.test.push_back(samples[i]);

  std::vector<std::vector<std::size_t>> shards(num_clients);
  if (skew.kind == SkewKind::iid) {
    const std::size_t base = train_idx.size() / num_clients, extra = train_idx.size() % num_clients;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      const std::size_t n = base + (k < extra ? 1 : 0);
      shards[k].assign(train_idx.begin() + static_cast<std::ptrdiff_t>(pos),
                       train_idx.begin() + static_cast<std::ptrdiff_t>(pos + n));
      pos += n;
    }
  } else {
    if (!(skew.alpha > 0.0)) throw std::invalid_argument("partition: Dirichlet alpha must be > 0");
    // Group by first positive class; unlabeled samples form group C.
    std::vector<std::vector<std::size_t>> groups(C + 1);
    for (auto i : train_idx) {
      const auto& y = samples[i].labels;
      const auto it = std::find(y.begin(), y.end(), std::uint8_t{1});
      groups[static_cast<std::size_t>(it - y.begin())].push_back(i);
    }
    std::gamma_distribution<double> gamma(skew.alpha, 1.0);
    bool ok = false;
    for (int attempt = 0; attempt <= max_retries && !ok; ++attempt) {
      for (auto& s : shards) s.clear();
      for (const auto& g : groups) {
        if (g.empty()) continue;
        std::vector<double> w(num_clients);
        double total = 0.0;
        for (auto& x : w) {
          x = gamma(rng);
          total += x;
        }
        double cum = 0.0;
        std::size_t prev = 0;
        for (std::size_t k = 0; k < num_clients; ++k) {
          cum += w[k] / total;
          const std::size_t end = k + 1 == num_clients
                                      ? g.size()
                                      : std::min(g.size(), static_cast<std::size_t>(std::round(cum * static_cast<double>(g.size()))));
          for (std::size_t j = prev; j < std::max(prev, end); ++j) shards[k].push_back(g[j]);
          prev = std::max(prev, end);
        }
      }
      ok = std::none_of(shards.begin(), shards.end(), [](const auto& s) { return s.empty(); });
    }
    if (!ok) {
      throw std::runtime_error("partition: could not produce " + std::to_string(num_clients) +
                               " non-empty shards after " + std::to_string(max_retries) + " retries");
    }
  }
  for (const auto& s : shards) {
    std::vector<Sample> shard;
    for (auto i : s) shard.push_back(samples[i]);
    ds.clients.push_back(std::move(shard));
  }
  return ds;
}

void save_dataset(const FederatedDataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream spec;
  spec << "format = " << kFormat << '\n';
  spec << "clients = " << ds.num_clients() << '\n';
  spec << "feature_dim = " << ds.feature_dim << '\n';
  spec << "num_classes = " << ds.num_classes << '\n';
  for (const auto& [k, v] : ds.spec) spec << "spec." << k << " = " << v << '\n';
  write_text_file(dir / "spec", spec.str());
  for (std::size_t k = 0; k < ds.num_clients(); ++k) {
    write_text_file(dir / ("client_" + std::to_string(k)), format_shard(ds.clients[k], ds.feature_dim, ds.num_classes));
  }
  write_text_file(dir / "test", format_shard(ds.test, ds.feature_dim, ds.num_classes));
}

FederatedDataset load_dataset(const std::filesystem::path& dir) {
  const auto spec_path = dir / "spec";
  if (!std::filesystem::exists(spec_path)) {
    throw DatasetFormatError("dataset: no spec file in '" + dir.string() + "'");
  }
  std::map<std::string, std::string> top;
  FederatedDataset ds;
  const std::string spec_text = read_text_file(spec_path);
  for (auto line : split(spec_text, '\n')) {
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw DatasetFormatError("dataset spec: malformed line");
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.rfind("spec.", 0) == 0) ds.spec.emplace_back(key.substr(5), value);
    else top[key] = value;
  }
  if (top["format"] != kFormat) {
    throw DatasetFormatError("dataset: version mismatch, expected " + std::string(kFormat) + ", found '" +
                             top["format"] + "'");
  }
  std::size_t K = 0;
  try {
    K = to_size(top.at("clients"));
    ds.feature_dim = to_size(top.at("feature_dim"));
    ds.num_classes = to_size(top.at("num_classes"));
  } catch (const std::exception& e) {
    throw DatasetFormatError(std::string("dataset spec: ") + e.what());
  }
  for (std::size_t k = 0; k < K; ++k) {
    ds.clients.push_back(parse_shard(dir / ("client_" + std::to_string(k)), ds.feature_dim, ds.num_classes));
  }
  ds.test = parse_shard(dir / "test", ds.feature_dim, ds.num_classes);
  return ds;
}

}  // namespace fedlgt
