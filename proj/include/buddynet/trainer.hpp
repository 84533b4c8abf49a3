#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "buddynet/backbone.hpp"
#include "buddynet/cropper.hpp"
#include "buddynet/dataset.hpp"
#include "buddynet/image.hpp"
#include "buddynet/losses.hpp"
#include "buddynet/optimizer.hpp"
#include "buddynet/rng.hpp"

namespace buddynet {

// Which crops a block embeds during training.
enum class CropSelection { kGlobalAndLocal, kGlobal, kLocal };

// Which block receives the weight-transfer update.
enum class TransferDirection {
  kUp,    // master <- lambda * master + (1 - lambda) * assistant, the default
  kDown,  // assistant <- lambda * assistant + (1 - lambda) * master
  kOff,
};

enum class TransferCadence { kPerEpoch, kPerStep };

struct TrainingConfig {
  double lambda = 0.5;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  double learning_rate = 5e-4;
  double min_learning_rate = 0.0;
  std::size_t warmup_epochs = 10;
  AdamWConfig optimizer;
  std::uint64_t seed = 0;
  CropConfig crops;
  BackboneConfig backbone;  // image_side follows crops.global_side
  HeadInit head;
  double kl_temperature = 0.1;
  KlDirection kl_direction = KlDirection::kMasterReference;
  TransferDirection wt_direction = TransferDirection::kUp;
  TransferCadence wt_cadence = TransferCadence::kPerEpoch;
  CropSelection master_crops = CropSelection::kGlobalAndLocal;
  CropSelection assistant_crops = CropSelection::kGlobal;
  // Per-epoch checkpoints are written here when set.
  std::optional<std::filesystem::path> checkpoint_dir;

  void validate() const;
  // Backbone config with the positional table laid out for global crops.
  BackboneConfig block_config() const;
  bool operator==(const TrainingConfig&) const = default;
};

std::string to_string(CropSelection s);
std::string to_string(TransferDirection d);
std::string to_string(TransferCadence c);
std::string to_string(KlDirection d);
CropSelection parse_crop_selection(const std::string& text);
TransferDirection parse_transfer_direction(const std::string& text);
TransferCadence parse_transfer_cadence(const std::string& text);
KlDirection parse_kl_direction(const std::string& text);

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  LossValues loss;        // mean per image over the epoch
  double learning_rate = 0.0;
  double wall_ms = 0.0;
};

struct TrainState {
  BlockParams master;
  BlockParams assistant;
  AdamW optimizer;
  ChannelStats normalization;
  std::size_t epoch = 0;
  std::size_t step = 0;
  Rng rng;
  std::vector<EpochMetrics> log;

  // Independent seeded draws for master then assistant.
  static TrainState initialize(const TrainingConfig& config, std::size_t num_classes);
};

// Learning rate for a 0-based optimizer step: linear warm-up over the first
// warmup_epochs, then cosine decay to min_learning_rate.
double scheduled_learning_rate(const TrainingConfig& config, std::size_t step, std::size_t steps_per_epoch);

struct TrainExample {
  const Image* image;  // normalized
  std::size_t label;
  std::uint64_t crop_seed;
};

// Forward losses of one image under the config's crop selection.
LossBreakdown image_loss(const TrainExample& example, const BlockParams& master, const BlockParams& assistant,
                         const TrainingConfig& config);

// One summed backward over the batch and one optimizer update of both
// blocks. Weight transfer is applied here only under the per-step cadence.
LossValues train_step(TrainState& state, std::span<const TrainExample> batch, const TrainingConfig& config,
                      double learning_rate);

// In place: target <- lambda * target + (1 - lambda) * source.
void weight_transfer(BlockParams& target, const BlockParams& source, double lambda);
void apply_transfer(TrainState& state, const TrainingConfig& config);

// Normalizes with training-set statistics, then runs the epochs over
// shuffled batches (last partial batch kept).
TrainState train(const TrainingConfig& config, const std::vector<LabeledImage>& images, std::size_t num_classes);

// Tab-separated: epoch, kl, arc_master, arc_assistant, total, lr, wall_ms.
std::string format_metrics(const std::vector<EpochMetrics>& log, bool include_wall_time = true);

std::vector<Image> normalize_images(const std::vector<LabeledImage>& images, const ChannelStats& stats);

}  // namespace buddynet
