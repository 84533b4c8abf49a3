#include "buddynet/evaluation.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "buddynet/errors.hpp"
#include "buddynet/parallel.hpp"

namespace buddynet {

namespace {

std::set<std::string> parse_ids(const std::string& field, const std::string& prefix, const std::string& where) {
  if (field.rfind(prefix, 0) != 0) throw FormatError(where + ": expected field starting with '" + prefix + "'");
  std::set<std::string> ids;
  std::stringstream list(field.substr(prefix.size()));
  std::string id;
  while (std::getline(list, id, ',')) {
    if (id.empty()) continue;
    if (!ids.insert(id).second) throw FormatError(where + ": duplicate id '" + id + "'");
  }
  return ids;
}

std::string join(const std::set<std::string>& ids) {
  std::string out;
  for (const std::string& id : ids) {
    if (!out.empty()) out += ',';
    out += id;
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

void GroundTruth::validate() const {
  for (const auto& [id, entry] : queries) {
    if (entry.positives.count(id)) throw ValidationError("query '" + id + "' lists itself as a positive");
    for (const std::string& p : entry.positives) {
      if (entry.junk.count(p)) throw ValidationError("query '" + id + "': '" + p + "' is both positive and junk");
    }
  }
}

const GroundTruthEntry& GroundTruth::at(const std::string& query_id) const {
  auto it = queries.find(query_id);
  if (it == queries.end()) throw ValidationError("no ground truth for query '" + query_id + "'");
  return it->second;
}

GroundTruth parse_ground_truth(const std::string& text, const std::string& context) {
  GroundTruth gt;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = context + ":" + std::to_string(line_no);
    std::vector<std::string> fields;
    std::stringstream row(line);
    std::string f;
    while (std::getline(row, f, '\t')) fields.push_back(f);
    if (fields.size() != 3) throw FormatError(where + ": expected 3 tab-separated fields");
    if (fields[0].empty()) throw FormatError(where + ": empty query id");
    GroundTruthEntry entry{parse_ids(fields[1], "P:", where), parse_ids(fields[2], "J:", where)};
    if (!gt.queries.emplace(fields[0], std::move(entry)).second) {
      throw FormatError(where + ": duplicate query '" + fields[0] + "'");
    }
  }
  gt.validate();
  return gt;
}

std::string format_ground_truth(const GroundTruth& gt) {
  std::string out;
  for (const auto& [id, entry] : gt.queries) {
    out += id + "\tP:" + join(entry.positives) + "\tJ:" + join(entry.junk) + "\n";
  }
  return out;
}

GroundTruth read_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_ground_truth(buffer.str(), path.string());
}

void write_ground_truth(const std::filesystem::path& path, const GroundTruth& gt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_ground_truth(gt);
}

GroundTruthEntry difficulty_variant(const std::set<std::string>& easy, const std::set<std::string>& hard,
                                    const std::set<std::string>& junk, Difficulty level) {
  GroundTruthEntry e;
  switch (level) {
    case Difficulty::kEasy:
      e.positives = easy;
      e.junk = junk;
      e.junk.insert(hard.begin(), hard.end());
      break;
    case Difficulty::kMedium:
      e.positives = easy;
      e.positives.insert(hard.begin(), hard.end());
      e.junk = junk;
      break;
    case Difficulty::kHard:
      e.positives = hard;
      e.junk = junk;
      e.junk.insert(easy.begin(), easy.end());
      break;
  }
  return e;
}

double average_precision(const RankedList& ranked, const GroundTruthEntry& gt) {
  if (gt.positives.empty()) throw ValidationError("average_precision: empty positive set");
  std::size_t rank = 0;
  std::size_t hits = 0;
  double total = 0.0;
  for (const RankedEntry& e : ranked.entries) {
    if (gt.junk.count(e.id)) continue;
    ++rank;
    if (gt.positives.count(e.id)) {
      ++hits;
      total += static_cast<double>(hits) / static_cast<double>(rank);
    }
  }
  return total / static_cast<double>(gt.positives.size());
}

EvalReport evaluate(std::span<const EmbeddingRecord> queries, const GroundTruth& gt, const SimilarityFunc& similarity,
                    const std::string& similarity_name) {
  if (queries.empty()) throw ValidationError("evaluate: no queries");
  std::vector<const EmbeddingRecord*> ordered;
  for (const EmbeddingRecord& q : queries) {
    gt.at(q.id);
    ordered.push_back(&q);
  }
  std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (std::size_t i = 1; i < ordered.size(); ++i) {
    if (ordered[i]->id == ordered[i - 1]->id) throw ValidationError("duplicate query id '" + ordered[i]->id + "'");
  }

  EvalReport report;
  report.similarity = similarity_name;
  report.per_query.resize(ordered.size());
  parallel_for(ordered.size(), [&](std::size_t i) {
    const EmbeddingRecord& q = *ordered[i];
    RankedList ranked = similarity(q.vector);
    std::erase_if(ranked.entries, [&](const RankedEntry& e) { return e.id == q.id; });
    report.per_query[i] = QueryResult{q.id, average_precision(ranked, gt.at(q.id))};
  });
  double sum = 0.0;
  for (const QueryResult& r : report.per_query) sum += r.ap;
  report.map = sum / static_cast<double>(report.per_query.size());
  return report;
}

std::string EvalReport::to_tsv() const {
  std::string out = "query\tap\n";
  for (const QueryResult& r : per_query) out += r.id + "\t" + format_double(r.ap) + "\n";
  out += "mAP\t" + format_double(map) + "\n";
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["similarity"] = similarity;
  j["mAP"] = map;
  j["config"] = config;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const QueryResult& r : per_query) rows.push_back({{"query", r.id}, {"ap", r.ap}});
  j["queries"] = rows;
  return j.dump(2) + "\n";
}

}  // namespace buddynet
