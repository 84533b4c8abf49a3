#include "buddynet/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "buddynet/binary_io.hpp"
#include "buddynet/errors.hpp"

namespace buddynet {

namespace {

// Heat scores are compared at this resolution so that values equal up to
// eigensolver round-off fall back to id order.
constexpr double kHeatQuantum = 1e12;

std::vector<double> expand_query(std::span<const double> query, std::span<const std::size_t> members,
                                 std::span<const double> weights, const RetrievalIndex& index) {
  std::vector<double> sum = unit_vector(query);
  for (std::size_t k = 0; k < members.size(); ++k) {
    std::span<const double> u = index.unit(members[k]);
    for (std::size_t d = 0; d < sum.size(); ++d) sum[d] += weights[k] * u[d];
  }
  return unit_vector(sum);
}

std::size_t position_of(const RetrievalIndex& index, const std::string& id) {
  auto pos = index.find(id);
  if (!pos) throw ValidationError("ranked id '" + id + "' is not in the index");
  return *pos;
}

// Member order: quantized heat descending, then id ascending.
std::vector<std::size_t> heat_order(const HeatScores& hs, const RetrievalIndex& index) {
  std::vector<std::size_t> order(hs.members.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<long long> q(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) q[i] = std::llround(hs.heat(static_cast<Eigen::Index>(i)) * kHeatQuantum);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (q[a] != q[b]) return q[a] > q[b];
    return index.record(hs.members[a]).id < index.record(hs.members[b]).id;
  });
  return order;
}

}  // namespace

void DiffusionConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("diffusion alpha must lie in (0, 1)");
  if (graph_k < 1) throw ValidationError("diffusion graph_k must be at least 1");
  if (truncation_n < 1) throw ValidationError("diffusion truncation_n must be at least 1");
  if (!(heat_t > 0.0)) throw ValidationError("heat_t must be positive");
  if (rerank_depth < 2) throw ValidationError("rerank_depth must be at least 2");
}

RankedList aqe(std::span<const double> query, const RankedList& initial, const RetrievalIndex& index,
               std::size_t top_k) {
  if (top_k > initial.size()) {
    throw ValidationError("aqe: top_k " + std::to_string(top_k) + " exceeds the " +
                          std::to_string(initial.size()) + " initial results");
  }
  const std::size_t k = std::max<std::size_t>(1, initial.size());
  if (top_k == 0) return knn_query(index, query, k);
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < top_k; ++i) members.push_back(position_of(index, initial.entries[i].id));
  std::vector<double> weights(top_k, 1.0);
  return knn_query(index, expand_query(query, members, weights, index), k);
}

Eigen::MatrixXd mutual_knn_affinity(const Eigen::MatrixXd& s, std::size_t k) {
  const Eigen::Index n = s.rows();
  std::vector<std::vector<char>> neighbour(n, std::vector<char>(n, 0));
  std::vector<Eigen::Index> order(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    order.resize(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::erase(order, i);
    const std::size_t keep = std::min<std::size_t>(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](Eigen::Index a, Eigen::Index b) {
                        if (s(i, a) != s(i, b)) return s(i, a) > s(i, b);
                        return a < b;
                      });
    for (std::size_t r = 0; r < keep; ++r) neighbour[i][order[r]] = 1;
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i != j && neighbour[i][j] && neighbour[j][i]) a(i, j) = std::max(s(i, j), 0.0);
    }
  }
  return a;
}

Eigen::MatrixXd symmetric_normalize(const Eigen::MatrixXd& a) {
  Eigen::VectorXd d = a.rowwise().sum();
  Eigen::VectorXd inv(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) inv(i) = d(i) > 0.0 ? 1.0 / std::sqrt(d(i)) : 0.0;
  return inv.asDiagonal() * a * inv.asDiagonal();
}

double DiffusionTable::residual() const {
  const Eigen::Index n = table.rows();
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - alpha * transition;
  return (system * table - Eigen::MatrixXd::Identity(n, n)).norm();
}

DiffusionTable diffusion_from_transition(Eigen::MatrixXd transition, double alpha, DiffusionSolver solver,
                                         std::size_t neumann_terms) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("diffusion alpha must lie in (0, 1)");
  if (transition.rows() != transition.cols()) throw ShapeError("diffusion transition matrix must be square");
  const Eigen::Index n = transition.rows();
  DiffusionTable out;
  out.alpha = alpha;
  Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);
  if (solver == DiffusionSolver::kDirect) {
    Eigen::MatrixXd system = identity - alpha * transition;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw DomainError("diffusion system is singular or indefinite");
    }
    out.table = ldlt.solve(identity);
  } else {
    Eigen::MatrixXd term = identity;
    out.table = identity;
    Eigen::MatrixXd step = alpha * transition;
    for (std::size_t t = 1; t <= neumann_terms; ++t) {
      term = step * term;
      out.table += term;
    }
  }
  out.transition = std::move(transition);
  return out;
}

DiffusionTable offline_diffusion_prepare(const Eigen::MatrixXd& s, const DiffusionConfig& config,
                                         DiffusionSolver solver, std::size_t neumann_terms) {
  config.validate();
  if (s.rows() != s.cols() || s.rows() == 0) throw ShapeError("similarity matrix must be square and non-empty");
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    if (std::abs(s(i, i) - 1.0) > 1e-9) throw ValidationError("similarity matrix must have a unit diagonal");
    for (Eigen::Index j = i + 1; j < s.cols(); ++j) {
      if (std::abs(s(i, j) - s(j, i)) > 1e-9) throw ValidationError("similarity matrix must be symmetric");
    }
  }
  return diffusion_from_transition(symmetric_normalize(mutual_knn_affinity(s, config.graph_k)), config.alpha, solver,
                                   neumann_terms);
}

RankedList offline_diffusion_query(std::span<const double> sims, const DiffusionTable& diffusion,
                                   const RetrievalIndex& index, const DiffusionConfig& config) {
  const std::size_t n = index.size();
  if (sims.size() != n || static_cast<std::size_t>(diffusion.table.rows()) != n) {
    throw ShapeError("offline diffusion: " + std::to_string(sims.size()) + " similarities, table of " +
                     std::to_string(diffusion.table.rows()) + ", index of " + std::to_string(n));
  }
  Eigen::VectorXd y(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) y(static_cast<Eigen::Index>(i)) = std::max(sims[i], 0.0);
  const double norm = y.norm();
  if (norm > 0.0) y /= norm;

  const std::size_t keep = std::min(config.truncation_n, n);
  if (keep < n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                     [&](std::size_t a, std::size_t b) {
                       const double ya = y(static_cast<Eigen::Index>(a)), yb = y(static_cast<Eigen::Index>(b));
                       if (ya != yb) return ya > yb;
                       return index.record(a).id < index.record(b).id;
                     });
    for (std::size_t r = keep; r < n; ++r) y(static_cast<Eigen::Index>(order[r])) = 0.0;
  }
  Eigen::VectorXd scores = diffusion.table * y;

  RankedList out;
  out.entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.entries.push_back({index.record(i).id, scores(static_cast<Eigen::Index>(i))});
  sort_ranked(out.entries);
  return out;
}

Eigen::VectorXd heat_kernel_scores(const Eigen::MatrixXd& w, std::size_t source, double t, HeatLaplacian laplacian) {
  const Eigen::Index n = w.rows();
  if (w.cols() != n || static_cast<Eigen::Index>(source) >= n) throw ShapeError("heat kernel: bad affinity shape");
  if (!(t > 0.0)) throw ValidationError("heat kernel: t must be positive");
  Eigen::VectorXd d = w.rowwise().sum();
  const auto s = static_cast<Eigen::Index>(source);
  Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
  e(s) = 1.0;
  if (laplacian == HeatLaplacian::kUnnormalized) {
    Eigen::MatrixXd l = Eigen::MatrixXd(d.asDiagonal()) - w;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(l);
    Eigen::VectorXd decay = (-t * eig.eigenvalues().array()).exp();
    return eig.eigenvectors() * (decay.asDiagonal() * (eig.eigenvectors().transpose() * e));
  }
  if (!(d(s) > 0.0)) return e;
  Eigen::VectorXd root(n), inv_root(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    root(i) = std::sqrt(std::max(d(i), 0.0));
    inv_root(i) = d(i) > 0.0 ? 1.0 / root(i) : 0.0;
  }
  Eigen::MatrixXd l = Eigen::MatrixXd::Identity(n, n) - inv_root.asDiagonal() * w * inv_root.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(l);
  Eigen::VectorXd decay = (-t * eig.eigenvalues().array()).exp();
  Eigen::VectorXd start = inv_root.cwiseProduct(e);
  Eigen::VectorXd h = eig.eigenvectors() * (decay.asDiagonal() * (eig.eigenvectors().transpose() * start));
  return root.cwiseProduct(h);
}

HeatScores heat_scores(std::span<const double> query, const RankedList& initial, const RetrievalIndex& index,
                       const DiffusionConfig& config) {
  config.validate();
  if (initial.size() < 2) throw ValidationError("heat re-ranking needs at least two initial results");
  HeatScores out;
  const std::size_t r = std::min(config.rerank_depth, initial.size());
  for (std::size_t i = 0; i < r; ++i) out.members.push_back(position_of(index, initial.entries[i].id));

  std::vector<double> q = unit_vector(query);
  const auto n = static_cast<Eigen::Index>(r + 1);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
  auto cos_q = [&](std::size_t m) {
    std::span<const double> u = index.unit(m);
    double s = 0.0;
    for (std::size_t d = 0; d < q.size(); ++d) s += q[d] * u[d];
    return s;
  };
  for (std::size_t i = 0; i < r; ++i) {
    const double sq = std::max(cos_q(out.members[i]), 0.0);
    w(0, static_cast<Eigen::Index>(i + 1)) = sq;
    w(static_cast<Eigen::Index>(i + 1), 0) = sq;
    std::span<const double> ui = index.unit(out.members[i]);
    for (std::size_t j = i + 1; j < r; ++j) {
      std::span<const double> uj = index.unit(out.members[j]);
      double s = 0.0;
      for (std::size_t d = 0; d < ui.size(); ++d) s += ui[d] * uj[d];
      s = std::max(s, 0.0);
      w(static_cast<Eigen::Index>(i + 1), static_cast<Eigen::Index>(j + 1)) = s;
      w(static_cast<Eigen::Index>(j + 1), static_cast<Eigen::Index>(i + 1)) = s;
    }
  }
  if (!(w.row(0).sum() > 0.0)) {
    out.degenerate = true;
    out.heat = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(r));
    return out;
  }
  Eigen::VectorXd h = heat_kernel_scores(w, 0, config.heat_t, config.laplacian);
  out.heat = h.tail(static_cast<Eigen::Index>(r));
  return out;
}

RankedList heat_diffusion_rerank(std::span<const double> query, const RankedList& initial,
                                 const RetrievalIndex& index, const DiffusionConfig& config) {
  HeatScores hs = heat_scores(query, initial, index, config);
  if (hs.degenerate) {
    RankedList out = initial;
    out.degenerate = true;
    return out;
  }
  RankedList out;
  out.query_id = initial.query_id;
  std::vector<std::size_t> order = heat_order(hs, index);
  for (std::size_t k : order) {
    const double q = static_cast<double>(std::llround(hs.heat(static_cast<Eigen::Index>(k)) * kHeatQuantum));
    out.entries.push_back({index.record(hs.members[k]).id, 2.0 + q / kHeatQuantum});
  }
  for (std::size_t i = hs.members.size(); i < initial.size(); ++i) out.entries.push_back(initial.entries[i]);
  return out;
}

RankedList heat_weighted_aqe(std::span<const double> query, const RankedList& initial, const RetrievalIndex& index,
                             const DiffusionConfig& config) {
  HeatScores hs = heat_scores(query, initial, index, config);
  if (hs.degenerate) {
    RankedList out = aqe(query, initial, index, std::min(config.aqe_top_k, initial.size()));
    out.degenerate = true;
    return out;
  }
  std::vector<std::size_t> order = heat_order(hs, index);
  const std::size_t k = std::min(config.aqe_top_k, order.size());
  const double top = hs.heat(static_cast<Eigen::Index>(order.front()));
  std::vector<std::size_t> members;
  std::vector<double> weights;
  for (std::size_t i = 0; i < k; ++i) {
    const double h = hs.heat(static_cast<Eigen::Index>(order[i]));
    members.push_back(hs.members[order[i]]);
    weights.push_back(top > 0.0 ? std::max(h, 0.0) / top : 0.0);
  }
  return knn_query(index, expand_query(query, members, weights, index), initial.size());
}

PostProcessing parse_postprocessing(const std::string& name) {
  if (name == "none") return PostProcessing::kNone;
  if (name == "Q") return PostProcessing::kQueryExpansion;
  if (name == "WQR") return PostProcessing::kHeatWeighted;
  if (name == "O") return PostProcessing::kOfflineDiffusion;
  throw ValidationError("unknown post-processing '" + name + "' (expected none, Q, WQR or O)");
}

std::string postprocessing_name(PostProcessing pp) {
  switch (pp) {
    case PostProcessing::kNone: return "none";
    case PostProcessing::kQueryExpansion: return "Q";
    case PostProcessing::kHeatWeighted: return "WQR";
    case PostProcessing::kOfflineDiffusion: return "O";
  }
  return "none";
}

SimilarityFunc compose(PostProcessing pp, const RetrievalIndex& index, const DiffusionConfig& config,
                       const DiffusionTable* diffusion) {
  if (index.empty()) throw ValidationError("compose: empty index");
  const std::size_t n = index.size();
  const RetrievalIndex* idx = &index;
  switch (pp) {
    case PostProcessing::kNone:
      return [idx, n](std::span<const double> q) { return knn_query(*idx, q, n); };
    case PostProcessing::kQueryExpansion:
      return [idx, n, config](std::span<const double> q) {
        return aqe(q, knn_query(*idx, q, n), *idx, std::min(config.aqe_top_k, n));
      };
    case PostProcessing::kHeatWeighted:
      config.validate();
      if (n < 2) throw ValidationError("WQR needs at least two database records");
      return [idx, n, config](std::span<const double> q) {
        RankedList expanded = heat_weighted_aqe(q, knn_query(*idx, q, n), *idx, config);
        return heat_diffusion_rerank(q, expanded, *idx, config);
      };
    case PostProcessing::kOfflineDiffusion:
      if (!diffusion) throw ValidationError("offline diffusion needs a prepared table");
      if (static_cast<std::size_t>(diffusion->table.rows()) != n) {
        throw ShapeError("diffusion table size does not match the index");
      }
      return [idx, diffusion, config](std::span<const double> q) {
        return offline_diffusion_query(idx->similarities(q), *diffusion, *idx, config);
      };
  }
  throw ValidationError("unknown post-processing");
}

std::vector<std::uint8_t> serialize_diffusion_table(const Eigen::MatrixXd& table) {
  if (table.rows() != table.cols()) throw ShapeError("diffusion table must be square");
  BinaryWriter out;
  out.raw("BDIF");
  out.u32(kDiffusionFileVersion);
  out.u64(static_cast<std::uint64_t>(table.rows()));
  for (Eigen::Index c = 0; c < table.cols(); ++c) {
    for (Eigen::Index r = 0; r < table.rows(); ++r) out.f64(table(r, c));
  }
  return out.bytes();
}

Eigen::MatrixXd deserialize_diffusion_table(std::span<const std::uint8_t> bytes, const std::string& context) {
  BinaryReader in(bytes, context);
  in.expect_magic("BDIF");
  const std::uint32_t version = in.u32();
  if (version != kDiffusionFileVersion) {
    throw FormatError(context + ": unsupported diffusion table version " + std::to_string(version));
  }
  const std::uint64_t n = in.u64();
  if (n == 0 || n > (std::uint64_t{1} << 24)) {
    throw FormatError(context + ": implausible table size " + std::to_string(n));
  }
  in.require(static_cast<std::size_t>(n * n * 8));
  const auto size = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd table(size, size);
  for (Eigen::Index c = 0; c < size; ++c) {
    for (Eigen::Index r = 0; r < size; ++r) table(r, c) = in.f64();
  }
  in.expect_end();
  return table;
}

void write_diffusion_table(const std::filesystem::path& path, const Eigen::MatrixXd& table) {
  write_file(path, serialize_diffusion_table(table));
}

DiffusionTable read_diffusion_table(const std::filesystem::path& path, const Eigen::MatrixXd& transition,
                                    double alpha, std::size_t sampled_columns) {
  DiffusionTable out;
  out.table = deserialize_diffusion_table(read_file(path), path.string());
  const Eigen::Index n = out.table.rows();
  if (transition.rows() != n || transition.cols() != n) {
    throw FormatError(path.string() + ": table of size " + std::to_string(n) + " does not match the database");
  }
  out.transition = transition;
  out.alpha = alpha;
  const std::size_t samples = std::min<std::size_t>(std::max<std::size_t>(sampled_columns, 1), n);
  for (std::size_t k = 0; k < samples; ++k) {
    const auto c = static_cast<Eigen::Index>(k * static_cast<std::size_t>(n) / samples);
    Eigen::VectorXd col = out.table.col(c) - alpha * (transition * out.table.col(c));
    col(c) -= 1.0;
    if (col.norm() > 1e-8) {
      throw FormatError(path.string() + ": column " + std::to_string(c) + " fails the residual check (" +
                        std::to_string(col.norm()) + ")");
    }
  }
  return out;
}

}  // namespace buddynet
