#include "fedlgt/label_embeddings.hpp"

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "fedlgt/label_state.hpp"
#include "fedlgt/util.hpp"

namespace fedlgt {
namespace {

constexpr std::string_view kMagic = "ULE1";

std::vector<double> parse_row(const std::vector<std::string_view>& fields, std::size_t dim,
                              const std::string& where) {
  if (fields.size() != dim + 1) {
    throw EmbeddingFormatError(where + ": expected " + std::to_string(dim) + " values, found " +
                               std::to_string(fields.size() - 1));
  }
  std::vector<double> values(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    try {
      values[j] = parse_double(fields[j + 1]);
    } catch (const std::invalid_argument& e) {
      throw EmbeddingFormatError(where + ": " + e.what());
    }
    if (!std::isfinite(values[j])) {
      throw EmbeddingFormatError(where + ": non-finite value in column " + std::to_string(j + 1));
    }
  }
  return values;
}

void append_row(std::ostringstream& os, std::string_view name, std::span<const double> values) {
  os << name;
  for (double v : values) os << ',' << format_double(v);
  os << '\n';
}

Tensor normal_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal(rng);
  return t;
}

void normalize_row(Tensor& t, std::size_t r, std::size_t d) {
  double n2 = 0.0;
  for (std::size_t j = 0; j < d; ++j) n2 += t[r * d + j] * t[r * d + j];
  const double inv = 1.0 / std::sqrt(n2);
  for (std::size_t j = 0; j < d; ++j) t[r * d + j] *= inv;
}

Tensor unit_vector(std::size_t d, Rng& rng) {
  Tensor t = normal_rows(1, d, rng);
  normalize_row(t, 0, d);
  return t.reshaped({d});
}

}  // namespace

std::string to_string(EmbeddingProvenance p) {
  switch (p) {
    case EmbeddingProvenance::file: return "file";
    case EmbeddingProvenance::synthetic: return "synthetic";
    case EmbeddingProvenance::averaged: return "averaged";
  }
  return "?";
}

Tensor StateEmbeddings::table() const {
  const std::size_t d = dim();
  Tensor t({3, d});
  auto put = [&](LabelState s, const Tensor& v) {
    std::copy_n(v.data().data(), d, t.data().data() + state_row(s) * d);
  };
  put(LabelState::unknown, unknown);
  put(LabelState::negative, negative);
  put(LabelState::positive, positive);
  return t;
}

EmbeddingFile parse_embedding_file(const std::string& text, const std::string& origin) {
  std::vector<std::string_view> lines;
  for (auto line : split(text, '\n')) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
  }
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw EmbeddingFormatError(origin + ": empty embedding file");

  auto header = split(trim(lines[0]), ' ');
  if (header.size() != 3 || header[0] != kMagic) {
    throw EmbeddingFormatError(origin + ": malformed header, expected 'ULE1 <C> <d>'");
  }
  long long c = 0, d = 0;
  try {
    c = parse_int(header[1]);
    d = parse_int(header[2]);
  } catch (const std::invalid_argument& e) {
    throw EmbeddingFormatError(origin + ": malformed header: " + e.what());
  }
  if (c < 1) throw EmbeddingFormatError(origin + ": header class count must be >= 1");
  if (d < 1) throw EmbeddingFormatError(origin + ": header dimension must be >= 1");
  const auto C = static_cast<std::size_t>(c);
  const auto D = static_cast<std::size_t>(d);

  std::size_t states_at = lines.size();
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]) == "STATES") {
      states_at = i;
      break;
    }
  }
  const std::size_t row_count = states_at - 1;
  if (row_count != C) {
    throw EmbeddingFormatError(origin + ": header declares " + std::to_string(C) +
                               " classes but file has " + std::to_string(row_count) + " rows");
  }

  EmbeddingFile out;
  out.labels.provenance = EmbeddingProvenance::file;
  std::vector<double> data;
  data.reserve(C * D);
  std::set<std::string, std::less<>> seen;
  for (std::size_t r = 0; r < C; ++r) {
    auto fields = split(lines[r + 1], ',');
    const std::string name(trim(fields[0]));
    const std::string where = origin + ": row " + std::to_string(r) + " ('" + name + "')";
    if (name.empty()) throw EmbeddingFormatError(where + ": empty class name");
    if (!seen.insert(name).second) throw EmbeddingFormatError(where + ": duplicate class name");
    auto values = parse_row(fields, D, where);
    data.insert(data.end(), values.begin(), values.end());
    out.labels.class_names.push_back(name);
  }
  out.labels.rows = Tensor({C, D}, std::move(data));

  if (states_at < lines.size()) {
    if (lines.size() - states_at - 1 != 2) {
      throw EmbeddingFormatError(origin + ": STATES section must have exactly two rows");
    }
    for (std::size_t i = states_at + 1; i < lines.size(); ++i) {
      auto fields = split(lines[i], ',');
      const auto name = trim(fields[0]);
      const std::string where = origin + ": state row '" + std::string(name) + "'";
      auto values = parse_row(fields, D, where);
      std::optional<Tensor>* slot = nullptr;
      if (name == "positive") slot = &out.positive;
      else if (name == "negative") slot = &out.negative;
      else throw EmbeddingFormatError(where + ": expected 'positive' or 'negative'");
      if (slot->has_value()) throw EmbeddingFormatError(where + ": duplicate state row");
      *slot = Tensor({D}, std::move(values));
    }
  }
  return out;
}

EmbeddingFile read_embedding_file(const std::filesystem::path& path) {
  return parse_embedding_file(read_text_file(path), path.string());
}

std::string format_embedding_file(const EmbeddingMatrix& labels, const StateEmbeddings* states) {
  const std::size_t C = labels.num_classes(), D = labels.dim();
  if (labels.class_names.size() != C) {
    throw std::invalid_argument("format_embedding_file: " + std::to_string(labels.class_names.size()) +
                                " names for " + std::to_string(C) + " rows");
  }
  std::ostringstream os;
  os << kMagic << ' ' << C << ' ' << D << '\n';
  for (std::size_t c = 0; c < C; ++c) append_row(os, labels.class_names[c], labels.row(c));
  if (states) {
    if (states->dim() != D) throw std::invalid_argument("format_embedding_file: state width mismatch");
    os << "STATES\n";
    append_row(os, "positive", states->positive.data());
    append_row(os, "negative", states->negative.data());
  }
  return os.str();
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingMatrix& labels,
                          const StateEmbeddings* states) {
  write_text_file(path, format_embedding_file(labels, states));
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  return read_embedding_file(path).labels;
}

EmbeddingMatrix synth_embeddings(std::size_t num_classes, std::size_t dim, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1) throw std::invalid_argument("synth_embeddings: C and d must be >= 1");
  Rng rng(mix_seed(seed, {0x756c65}));
  Tensor rows = normal_rows(num_classes, dim, rng);
  const std::size_t d = dim;
  if (dim >= num_classes) {
    // Modified Gram-Schmidt, two passes for orthogonality to ~1e-16.
    for (std::size_t i = 0; i < num_classes; ++i) {
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += rows[i * d + k] * rows[j * d + k];
          for (std::size_t k = 0; k < d; ++k) rows[i * d + k] -= dot * rows[j * d + k];
        }
      }
      normalize_row(rows, i, d);
    }
  } else {
    for (std::size_t i = 0; i < num_classes; ++i) normalize_row(rows, i, d);
  }
  EmbeddingMatrix m;
  m.rows = std::move(rows);
  m.provenance = EmbeddingProvenance::synthetic;
  for (std::size_t c = 0; c < num_classes; ++c) m.class_names.push_back("class_" + std::to_string(c));
  return m;
}

EmbeddingMatrix coarse_from_fine(const EmbeddingMatrix& fine,
                                 const std::vector<std::vector<std::size_t>>& mapping,
                                 std::vector<std::string> coarse_names) {
  const std::size_t D = fine.dim();
  if (mapping.empty()) throw std::invalid_argument("coarse_from_fine: empty mapping");
  if (!coarse_names.empty() && coarse_names.size() != mapping.size()) {
    throw std::invalid_argument("coarse_from_fine: name count does not match mapping");
  }
  Tensor rows({mapping.size(), D});
  for (std::size_t c = 0; c < mapping.size(); ++c) {
    if (mapping[c].empty()) {
      throw std::invalid_argument("coarse_from_fine: coarse class " + std::to_string(c) +
                                  " has no fine classes");
    }
    for (auto f : mapping[c]) {
      if (f >= fine.num_classes()) {
        throw std::invalid_argument("coarse_from_fine: fine id " + std::to_string(f) + " out of range");
      }
      for (std::size_t j = 0; j < D; ++j) rows[c * D + j] += fine.rows[f * D + j];
    }
    const double inv = static_cast<double>(mapping[c].size());
    for (std::size_t j = 0; j < D; ++j) rows[c * D + j] /= inv;
  }
  EmbeddingMatrix m;
  m.rows = std::move(rows);
  m.provenance = EmbeddingProvenance::averaged;
  if (coarse_names.empty()) {
    for (std::size_t c = 0; c < mapping.size(); ++c) coarse_names.push_back("coarse_" + std::to_string(c));
  }
  m.class_names = std::move(coarse_names);
  return m;
}

CoarseMapping read_coarse_mapping(const std::filesystem::path& path, const EmbeddingMatrix& fine) {
  std::map<std::string, std::size_t, std::less<>> index;
  for (std::size_t i = 0; i < fine.class_names.size(); ++i) index.emplace(fine.class_names[i], i);
  CoarseMapping out;
  std::size_t line_no = 0;
  const std::string text = read_text_file(path);
  for (auto line : split(text, '\n')) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    auto fields = split(line, ',');
    std::vector<std::size_t> ids;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      auto name = trim(fields[i]);
      if (name.empty()) continue;
      auto it = index.find(name);
      if (it == index.end()) {
        throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": unknown fine class '" +
                                    std::string(name) + "'");
      }
      ids.push_back(it->second);
    }
    out.coarse_names.emplace_back(trim(fields[0]));
    out.fine_ids.push_back(std::move(ids));
  }
  return out;
}

StateEmbeddings make_state_embeddings_from_file(std::size_t dim, const std::filesystem::path& path) {
  auto file = read_embedding_file(path);
  if (!file.positive || !file.negative) {
    throw EmbeddingFormatError(path.string() + ": no STATES section with positive/negative rows");
  }
  if (file.positive->size() != dim) {
    throw std::invalid_argument("state embeddings: file width " + std::to_string(file.positive->size()) +
                                " does not match " + std::to_string(dim));
  }
  return StateEmbeddings{Tensor::zeros({dim}), *file.positive, *file.negative};
}

StateEmbeddings make_state_embeddings_synthetic(std::size_t dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("state embeddings: width must be >= 1");
  Rng rng(mix_seed(seed, {0x7374617465}));
  Tensor pos = unit_vector(dim, rng);
  Tensor neg = unit_vector(dim, rng);
  return StateEmbeddings{Tensor::zeros({dim}), std::move(pos), std::move(neg)};
}

Tensor projection_matrix(std::size_t from, std::size_t to, std::uint64_t seed) {
  Rng rng(mix_seed(seed, {0x70726f6a, from, to}));
  Tensor p = normal_rows(from, to, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(to));
  for (std::size_t i = 0; i < p.size(); ++i) p[i] *= s;
  return p;
}

namespace {
Tensor project_rows(const Tensor& rows, std::size_t width, std::uint64_t seed) {
  const std::size_t n = rows.dim(0), d = rows.dim(1);
  Tensor p = projection_matrix(d, width, seed);
  Tensor out({n, width});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double x = rows[i * d + k];
      for (std::size_t j = 0; j < width; ++j) out[i * width + j] += x * p[k * width + j];
    }
  }
  return out;
}
}  // namespace

EmbeddingMatrix project_to_width(const EmbeddingMatrix& m, std::size_t width, std::uint64_t seed) {
  if (m.dim() == width) return m;
  EmbeddingMatrix out = m;
  out.rows = project_rows(m.rows, width, seed);
  return out;
}

StateEmbeddings project_to_width(const StateEmbeddings& s, std::size_t width, std::uint64_t seed) {
  const std::size_t d = s.dim();
  if (d == width) return s;
  Tensor rows = project_rows(s.table(), width, seed);
  auto row = [&](LabelState st) {
    return Tensor({width}, std::vector<double>(rows.data().begin() + state_row(st) * width,
                                               rows.data().begin() + (state_row(st) + 1) * width));
  };
  return StateEmbeddings{Tensor::zeros({width}), row(LabelState::positive), row(LabelState::negative)};
}

}  // namespace fedlgt
