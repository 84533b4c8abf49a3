#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "buddynet/retrieval.hpp"

namespace buddynet {

struct GroundTruthEntry {
  std::set<std::string> positives;
  std::set<std::string> junk;
  bool operator==(const GroundTruthEntry&) const = default;
};

struct GroundTruth {
  std::map<std::string, GroundTruthEntry> queries;

  // positives and junk disjoint, query id not among its positives
  void validate() const;
  const GroundTruthEntry& at(const std::string& query_id) const;
  bool operator==(const GroundTruth&) const = default;
};

// One line per query: id, TAB, "P:" comma-separated ids, TAB, "J:" ids.
GroundTruth parse_ground_truth(const std::string& text, const std::string& context = "ground truth");
std::string format_ground_truth(const GroundTruth& gt);
GroundTruth read_ground_truth(const std::filesystem::path& path);
void write_ground_truth(const std::filesystem::path& path, const GroundTruth& gt);

enum class Difficulty { kEasy, kMedium, kHard };

// Positive/junk partition for one difficulty level of a query annotated
// with easy, hard and junk sets.
GroundTruthEntry difficulty_variant(const std::set<std::string>& easy, const std::set<std::string>& hard,
                                    const std::set<std::string>& junk, Difficulty level);

// Junk ids are removed and ranks close up; AP is the mean of precision at
// each positive hit, positives missing from the list contributing zero.
double average_precision(const RankedList& ranked, const GroundTruthEntry& gt);

// Full-database ranking for one query vector.
using SimilarityFunc = std::function<RankedList(std::span<const double> query)>;

struct QueryResult {
  std::string id;
  double ap = 0.0;
};

struct EvalReport {
  std::vector<QueryResult> per_query;  // in query-id order
  double map = 0.0;
  std::string similarity;
  std::map<std::string, std::string> config;

  std::string to_tsv() const;
  std::string to_json() const;
};

// Each query's own id is dropped from its ranking before scoring.
EvalReport evaluate(std::span<const EmbeddingRecord> queries, const GroundTruth& gt, const SimilarityFunc& similarity,
                    const std::string& similarity_name = "none");

}  // namespace buddynet
