#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlgt/tensor.hpp"

namespace fedlgt {

enum class EmbeddingProvenance { file, synthetic, averaged };

std::string to_string(EmbeddingProvenance p);

// Fixed label embeddings L, one row per class. Never touched by training.
struct EmbeddingMatrix {
  std::vector<std::string> class_names;
  Tensor rows;  // [C, d]
  EmbeddingProvenance provenance = EmbeddingProvenance::synthetic;

  std::size_t num_classes() const { return rows.rank() == 2 ? rows.dim(0) : 0; }
  std::size_t dim() const { return rows.rank() == 2 ? rows.dim(1) : 0; }
  std::span<const double> row(std::size_t c) const {
    return rows.data().subspan(c * dim(), dim());
  }
};

// The three state embeddings; `unknown` is always all zeros.
struct StateEmbeddings {
  Tensor unknown;   // [d]
  Tensor positive;  // [d]
  Tensor negative;  // [d]

  std::size_t dim() const { return unknown.size(); }
  // [3, d] table in state_row() order.
  Tensor table() const;
};

class EmbeddingFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parsed `ULE1` file: class rows plus the optional STATES section.
struct EmbeddingFile {
  EmbeddingMatrix labels;
  std::optional<Tensor> positive;
  std::optional<Tensor> negative;
};

EmbeddingFile read_embedding_file(const std::filesystem::path& path);
EmbeddingFile parse_embedding_file(const std::string& text, const std::string& origin = "<memory>");
void write_embedding_file(const std::filesystem::path& path, const EmbeddingMatrix& labels,
                          const StateEmbeddings* states = nullptr);
std::string format_embedding_file(const EmbeddingMatrix& labels, const StateEmbeddings* states = nullptr);

EmbeddingMatrix load_embeddings(const std::filesystem::path& path);

// Seeded unit-norm rows; orthonormal when dim >= num_classes.
EmbeddingMatrix synth_embeddings(std::size_t num_classes, std::size_t dim, std::uint64_t seed);

// Row c is the mean of the fine rows listed in mapping[c].
EmbeddingMatrix coarse_from_fine(const EmbeddingMatrix& fine,
                                 const std::vector<std::vector<std::size_t>>& mapping,
                                 std::vector<std::string> coarse_names = {});

// Reads `<coarse-name>,<fine-name>,...` lines, resolving names against `fine`.
struct CoarseMapping {
  std::vector<std::string> coarse_names;
  std::vector<std::vector<std::size_t>> fine_ids;
};
CoarseMapping read_coarse_mapping(const std::filesystem::path& path, const EmbeddingMatrix& fine);

StateEmbeddings make_state_embeddings_from_file(std::size_t dim, const std::filesystem::path& path);
StateEmbeddings make_state_embeddings_synthetic(std::size_t dim, std::uint64_t seed);

// Fixed seeded Gaussian map to `width` columns, scaled to preserve norms in
// expectation. Identity when the widths already agree. Linear, so unknown
// stays zero and l + s projects to P(l) + P(s).
Tensor projection_matrix(std::size_t from, std::size_t to, std::uint64_t seed);
EmbeddingMatrix project_to_width(const EmbeddingMatrix& m, std::size_t width, std::uint64_t seed);
StateEmbeddings project_to_width(const StateEmbeddings& s, std::size_t width, std::uint64_t seed);

}  // namespace fedlgt
