#pragma once

#include <string>
#include <vector>

#include "buddynet/dataset.hpp"
#include "buddynet/evaluation.hpp"
#include "buddynet/postproc.hpp"
#include "buddynet/retrieval.hpp"
#include "buddynet/trainer.hpp"

namespace buddynet {

// Concatenated inference embeddings of raw [0, 1] images, normalized with
// `stats` first. Runs in parallel over images.
std::vector<EmbeddingRecord> embed_images(const std::vector<LabeledImage>& images, const BlockParams& master,
                                          const ChannelStats& stats, const CropConfig& crops,
                                          const RetrievalOptions& options = {},
                                          const BlockParams* assistant = nullptr);

struct EvaluationSetup {
  RetrievalOptions retrieval;
  PostProcessing postprocessing = PostProcessing::kNone;
  DiffusionConfig diffusion;
  bool concat_assistant = false;
};

// Embeds database and queries with a trained state and scores them.
EvalReport evaluate_state(const TrainState& state, const TrainingConfig& config, const Dataset& data,
                          const EvaluationSetup& setup = {});

// Trains on data.train, then evaluates on the database and queries.
EvalReport train_and_evaluate(const TrainingConfig& config, const Dataset& data, const EvaluationSetup& setup = {});

// from, from + step, ... up to `to` inclusive; weight transfer up, KL on.
std::vector<TrainingConfig> lambda_grid(const TrainingConfig& base, double from, double to, double step);
// Six master/assistant crop pairings, each with the KL/WT combinations
// (off, up), (down, up), (up, off), (up, down), (up, up).
std::vector<TrainingConfig> combination_grid(const TrainingConfig& base);

struct AblationRow {
  std::string master_crops;
  std::string assistant_crops;
  std::string kl;
  std::string wt;
  double lambda = 0.0;
  double map = 0.0;
};

// One full train and evaluation per cell. Every cell is validated before any
// training starts.
std::vector<AblationRow> ablate(const std::vector<TrainingConfig>& cells, const Dataset& data,
                                const EvaluationSetup& setup = {});

// Header plus one tab-separated row per cell.
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace buddynet
