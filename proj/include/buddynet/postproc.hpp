#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "buddynet/evaluation.hpp"
#include "buddynet/retrieval.hpp"

namespace buddynet {

enum class HeatLaplacian {
  // h = D^{1/2} exp(-t L_sym) D^{-1/2} e_q, L_sym = I - D^{-1/2} W D^{-1/2}
  kNormalized,
  // h = exp(-t (D - W)) e_q
  kUnnormalized,
};

struct DiffusionConfig {
  double alpha = 0.9;
  std::size_t graph_k = 10;
  std::size_t truncation_n = 500;  // clamped to the database size
  double heat_t = 1.0;
  std::size_t aqe_top_k = 5;
  std::size_t rerank_depth = 50;
  HeatLaplacian laplacian = HeatLaplacian::kNormalized;

  void validate() const;
  bool operator==(const DiffusionConfig&) const = default;
};

// Re-queries with the normalized mean of the unit query and the unit vectors
// of the first top_k entries of `initial`.
RankedList aqe(std::span<const double> query, const RankedList& initial, const RetrievalIndex& index,
               std::size_t top_k);

// Mutual k-nearest-neighbour affinity max(sim, 0) with zero diagonal.
Eigen::MatrixXd mutual_knn_affinity(const Eigen::MatrixXd& similarities, std::size_t k);
// D^{-1/2} A D^{-1/2}; rows of zero degree stay zero.
Eigen::MatrixXd symmetric_normalize(const Eigen::MatrixXd& affinity);

enum class DiffusionSolver { kDirect, kNeumann };

struct DiffusionTable {
  Eigen::MatrixXd transition;  // S
  Eigen::MatrixXd table;       // (I - alpha S)^{-1}, column i answers e_i
  double alpha = 0.0;

  // Frobenius norm of (I - alpha S) table - I.
  double residual() const;
};

DiffusionTable offline_diffusion_prepare(const Eigen::MatrixXd& similarities, const DiffusionConfig& config,
                                         DiffusionSolver solver = DiffusionSolver::kDirect,
                                         std::size_t neumann_terms = 400);
DiffusionTable diffusion_from_transition(Eigen::MatrixXd transition, double alpha,
                                         DiffusionSolver solver = DiffusionSolver::kDirect,
                                         std::size_t neumann_terms = 400);

// y = max(sims, 0), L2-normalized, then all but the top truncation_n entries
// zeroed; scores = table * y over every database id.
RankedList offline_diffusion_query(std::span<const double> query_similarities, const DiffusionTable& diffusion,
                                   const RetrievalIndex& index, const DiffusionConfig& config);

// Heat kernel scores of a diffusion started at `source` over affinity `w`.
Eigen::VectorXd heat_kernel_scores(const Eigen::MatrixXd& w, std::size_t source, double t, HeatLaplacian laplacian);

struct HeatScores {
  std::vector<std::size_t> members;  // database positions of the top-R entries
  Eigen::VectorXd heat;              // one score per member
  bool degenerate = false;
};

// Affinity subgraph over the first rerank_depth entries plus a virtual node
// for `query`, and the heat reaching each entry from it.
HeatScores heat_scores(std::span<const double> query, const RankedList& initial, const RetrievalIndex& index,
                       const DiffusionConfig& config);

// Reorders the first rerank_depth entries by heat score (ties by id); they
// are scored 2 + h so the whole list stays non-increasing. The remainder is
// kept as is.
RankedList heat_diffusion_rerank(std::span<const double> query, const RankedList& initial,
                                 const RetrievalIndex& index, const DiffusionConfig& config);

// Query expansion weighted by heat: the top aqe_top_k entries by heat score,
// each weighted h / max h, are averaged with the unit query.
RankedList heat_weighted_aqe(std::span<const double> query, const RankedList& initial, const RetrievalIndex& index,
                             const DiffusionConfig& config);

enum class PostProcessing { kNone, kQueryExpansion, kHeatWeighted, kOfflineDiffusion };

PostProcessing parse_postprocessing(const std::string& name);
std::string postprocessing_name(PostProcessing pp);

// Full-database similarity function for the chosen pipeline. kOfflineDiffusion
// needs `diffusion`, prepared over the same index.
SimilarityFunc compose(PostProcessing pp, const RetrievalIndex& index, const DiffusionConfig& config,
                       const DiffusionTable* diffusion = nullptr);

// "BDIF", u32 version, u64 n, then the table as n*n f64 in column-major order.
inline constexpr std::uint32_t kDiffusionFileVersion = 1;
std::vector<std::uint8_t> serialize_diffusion_table(const Eigen::MatrixXd& table);
Eigen::MatrixXd deserialize_diffusion_table(std::span<const std::uint8_t> bytes,
                                            const std::string& context = "diffusion table");
void write_diffusion_table(const std::filesystem::path& path, const Eigen::MatrixXd& table);
// Loads the table and checks (I - alpha S) column = e_i on sampled columns
// against the transition matrix rebuilt by the caller.
DiffusionTable read_diffusion_table(const std::filesystem::path& path, const Eigen::MatrixXd& transition,
                                    double alpha, std::size_t sampled_columns = 8);

}  // namespace buddynet
