#include "buddynet/ablation.hpp"

#include <cmath>

#include "buddynet/config.hpp"
#include "buddynet/errors.hpp"
#include "buddynet/parallel.hpp"

namespace buddynet {

std::vector<EmbeddingRecord> embed_images(const std::vector<LabeledImage>& images, const BlockParams& master,
                                          const ChannelStats& stats, const CropConfig& crops,
                                          const RetrievalOptions& options, const BlockParams* assistant) {
  std::vector<EmbeddingRecord> out(images.size());
  parallel_for(images.size(), [&](std::size_t i) {
    out[i] = embed_record(images[i].id, normalize(images[i].image, stats), master, crops, options, assistant);
  });
  return out;
}

EvalReport evaluate_state(const TrainState& state, const TrainingConfig& config, const Dataset& data,
                          const EvaluationSetup& setup) {
  const BlockParams* assistant = setup.concat_assistant ? &state.assistant : nullptr;
  std::vector<EmbeddingRecord> db =
      embed_images(data.database, state.master, state.normalization, config.crops, setup.retrieval, assistant);
  std::vector<EmbeddingRecord> queries =
      embed_images(data.queries, state.master, state.normalization, config.crops, setup.retrieval, assistant);
  RetrievalIndex index = build_index(db);
  DiffusionTable table;
  const DiffusionTable* table_ptr = nullptr;
  if (setup.postprocessing == PostProcessing::kOfflineDiffusion) {
    table = offline_diffusion_prepare(pairwise_similarities(index), setup.diffusion);
    table_ptr = &table;
  }
  SimilarityFunc sim = compose(setup.postprocessing, index, setup.diffusion, table_ptr);
  return evaluate(queries, data.ground_truth, sim, postprocessing_name(setup.postprocessing));
}

EvalReport train_and_evaluate(const TrainingConfig& config, const Dataset& data, const EvaluationSetup& setup) {
  TrainState state = train(config, data.train, data.num_classes);
  return evaluate_state(state, config, data, setup);
}

std::vector<TrainingConfig> lambda_grid(const TrainingConfig& base, double from, double to, double step) {
  if (!(step > 0.0)) throw ValidationError("lambda grid step must be positive");
  if (!(from >= 0.0 && to <= 1.0 && from <= to)) throw ValidationError("lambda grid must satisfy 0 <= from <= to <= 1");
  const auto count = static_cast<std::size_t>(std::llround((to - from) / step)) + 1;
  std::vector<TrainingConfig> out;
  for (std::size_t i = 0; i < count; ++i) {
    TrainingConfig c = base;
    c.lambda = std::round((from + static_cast<double>(i) * step) * 1e12) / 1e12;
    if (c.lambda > 1.0) break;
    c.wt_direction = TransferDirection::kUp;
    if (c.kl_direction == KlDirection::kOff) c.kl_direction = KlDirection::kMasterReference;
    out.push_back(c);
  }
  return out;
}

std::vector<TrainingConfig> combination_grid(const TrainingConfig& base) {
  using CS = CropSelection;
  const std::pair<CS, CS> pairings[] = {
      {CS::kGlobalAndLocal, CS::kGlobal}, {CS::kGlobalAndLocal, CS::kLocal}, {CS::kGlobal, CS::kGlobalAndLocal},
      {CS::kGlobal, CS::kLocal},          {CS::kLocal, CS::kGlobalAndLocal}, {CS::kLocal, CS::kGlobal},
  };
  const std::pair<KlDirection, TransferDirection> mechanisms[] = {
      {KlDirection::kOff, TransferDirection::kUp},
      {KlDirection::kMasterReference, TransferDirection::kUp},
      {KlDirection::kAssistantReference, TransferDirection::kOff},
      {KlDirection::kAssistantReference, TransferDirection::kDown},
      {KlDirection::kAssistantReference, TransferDirection::kUp},
  };
  std::vector<TrainingConfig> out;
  for (const auto& [master, assistant] : pairings) {
    for (const auto& [kl, wt] : mechanisms) {
      TrainingConfig c = base;
      c.master_crops = master;
      c.assistant_crops = assistant;
      c.kl_direction = kl;
      c.wt_direction = wt;
      out.push_back(c);
    }
  }
  return out;
}

std::vector<AblationRow> ablate(const std::vector<TrainingConfig>& cells, const Dataset& data,
                                const EvaluationSetup& setup) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    try {
      cells[i].validate();
    } catch (const ValidationError& e) {
      throw ValidationError("ablation cell " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  std::vector<AblationRow> rows;
  for (const TrainingConfig& c : cells) {
    const EvalReport report = train_and_evaluate(c, data, setup);
    rows.push_back(AblationRow{to_string(c.master_crops), to_string(c.assistant_crops), to_string(c.kl_direction),
                               to_string(c.wt_direction), c.lambda, report.map});
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::string out = "master_crops\tassistant_crops\tkl\twt\tlambda\tmAP\n";
  for (const AblationRow& r : rows) {
    out += r.master_crops + "\t" + r.assistant_crops + "\t" + r.kl + "\t" + r.wt + "\t" + format_real(r.lambda) + "\t" +
           format_real(r.map) + "\n";
  }
  return out;
}

}  // namespace buddynet
