#include "buddynet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "buddynet/checkpoint.hpp"
#include "buddynet/config.hpp"
#include "buddynet/errors.hpp"
#include "buddynet/ops.hpp"

namespace buddynet {

namespace {

std::vector<const Image*> select_crops(const CropSet& set, CropSelection selection) {
  std::vector<const Image*> out;
  if (selection != CropSelection::kLocal) {
    for (const Crop& c : set.globals) out.push_back(&c.image);
  }
  if (selection != CropSelection::kGlobal) {
    for (const Crop& c : set.locals) out.push_back(&c.image);
  }
  return out;
}

std::size_t selected_count(const CropConfig& crops, CropSelection selection) {
  switch (selection) {
    case CropSelection::kGlobalAndLocal: return crops.n_global + crops.n_local;
    case CropSelection::kGlobal: return crops.n_global;
    case CropSelection::kLocal: return crops.n_local;
  }
  return 0;
}

Tensor block_arcface(const std::vector<Tensor>& embeddings, std::size_t label, const BlockParams& params) {
  std::vector<Tensor> logits_in;
  logits_in.reserve(embeddings.size());
  for (const Tensor& e : embeddings) logits_in.push_back(classify(e, params));
  std::vector<std::size_t> labels(embeddings.size(), label);
  return arcface_loss(logits_in, labels, params.arcface);
}

}  // namespace

void TrainingConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("lambda must lie in [0, 1]");
  if (batch_size < 1) throw ValidationError("batch size must be at least 1");
  if (epochs > 0 && warmup_epochs > epochs) throw ValidationError("warm-up epochs exceed total epochs");
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
  if (!(min_learning_rate >= 0.0 && min_learning_rate <= learning_rate)) {
    throw ValidationError("minimum learning rate must lie in [0, learning_rate]");
  }
  if (!(kl_temperature > 0.0)) throw ValidationError("KL temperature must be positive");
  if (kl_direction == KlDirection::kOff && wt_direction == TransferDirection::kOff) {
    throw ValidationError("KL off together with weight transfer off leaves no learning path from the assistant");
  }
  optimizer.validate();
  crops.validate();
  block_config().validate();
  if (crops.local_side % backbone.patch_side != 0) {
    throw ValidationError("local crop side " + std::to_string(crops.local_side) + " is not divisible by patch side " +
                          std::to_string(backbone.patch_side));
  }
  if (selected_count(crops, master_crops) == 0 || selected_count(crops, assistant_crops) == 0) {
    throw ValidationError("crop selection leaves a block without crops");
  }
  if (!(head.scale > 0.0)) throw ValidationError("ArcFace initial scale must be positive");
  if (!(head.margin > 0.0 && head.margin < head.margin_max)) {
    throw ValidationError("ArcFace initial margin must lie in (0, margin_max)");
  }
  if (!(head.gem_p >= kGemMinExponent)) throw ValidationError("GEM exponent below its minimum");
}

BackboneConfig TrainingConfig::block_config() const {
  BackboneConfig c = backbone;
  c.image_side = crops.global_side;
  return c;
}

std::string to_string(CropSelection s) {
  switch (s) {
    case CropSelection::kGlobalAndLocal: return "G+L";
    case CropSelection::kGlobal: return "G";
    case CropSelection::kLocal: return "L";
  }
  return "?";
}

std::string to_string(TransferDirection d) {
  switch (d) {
    case TransferDirection::kUp: return "up";
    case TransferDirection::kDown: return "down";
    case TransferDirection::kOff: return "off";
  }
  return "?";
}

std::string to_string(TransferCadence c) { return c == TransferCadence::kPerEpoch ? "per-epoch" : "per-step"; }

std::string to_string(KlDirection d) {
  switch (d) {
    case KlDirection::kMasterReference: return "down";
    case KlDirection::kAssistantReference: return "up";
    case KlDirection::kOff: return "off";
  }
  return "?";
}

CropSelection parse_crop_selection(const std::string& text) {
  if (text == "G+L") return CropSelection::kGlobalAndLocal;
  if (text == "G") return CropSelection::kGlobal;
  if (text == "L") return CropSelection::kLocal;
  throw ValidationError("unknown crop selection '" + text + "' (expected G+L, G or L)");
}

TransferDirection parse_transfer_direction(const std::string& text) {
  if (text == "up") return TransferDirection::kUp;
  if (text == "down") return TransferDirection::kDown;
  if (text == "off") return TransferDirection::kOff;
  throw ValidationError("unknown weight-transfer direction '" + text + "' (expected up, down or off)");
}

TransferCadence parse_transfer_cadence(const std::string& text) {
  if (text == "per-epoch") return TransferCadence::kPerEpoch;
  if (text == "per-step") return TransferCadence::kPerStep;
  throw ValidationError("unknown weight-transfer cadence '" + text + "' (expected per-epoch or per-step)");
}

KlDirection parse_kl_direction(const std::string& text) {
  if (text == "down") return KlDirection::kMasterReference;
  if (text == "up") return KlDirection::kAssistantReference;
  if (text == "off") return KlDirection::kOff;
  throw ValidationError("unknown KL direction '" + text + "' (expected down, up or off)");
}

TrainState TrainState::initialize(const TrainingConfig& config, std::size_t num_classes) {
  Rng init(config.seed);
  BlockParams master = BlockParams::initialize(config.block_config(), num_classes, init, config.head);
  BlockParams assistant = BlockParams::initialize(config.block_config(), num_classes, init, config.head);
  std::vector<Tensor> params = master.tensors();
  for (const Tensor& t : assistant.tensors()) params.push_back(t);
  AdamW optimizer(std::move(params), config.optimizer);
  return TrainState{std::move(master), std::move(assistant), std::move(optimizer), {}, 0, 0,
                    Rng(mix_seed(config.seed, 0x747261696e696e67ULL)), {}};
}

double scheduled_learning_rate(const TrainingConfig& config, std::size_t step, std::size_t steps_per_epoch) {
  const std::size_t total = config.epochs * steps_per_epoch;
  const std::size_t warm = config.warmup_epochs * steps_per_epoch;
  if (step < warm) return config.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (total <= warm) return config.learning_rate;
  const double progress =
      std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(total - warm));
  return config.min_learning_rate +
         0.5 * (config.learning_rate - config.min_learning_rate) * (1.0 + std::cos(std::numbers::pi * progress));
}

LossBreakdown image_loss(const TrainExample& example, const BlockParams& master, const BlockParams& assistant,
                         const TrainingConfig& config) {
  CropSet set = multi_crop(*example.image, config.crops, example.crop_seed);
  std::vector<Tensor> em, ea;
  for (const Image* crop : select_crops(set, config.master_crops)) em.push_back(embed(*crop, master));
  for (const Image* crop : select_crops(set, config.assistant_crops)) ea.push_back(embed(*crop, assistant));
  Tensor kl = kl_embedding_loss(ea, em, config.kl_temperature, config.kl_direction);
  return LossBreakdown::combine(kl, block_arcface(em, example.label, master),
                                block_arcface(ea, example.label, assistant));
}

LossValues train_step(TrainState& state, std::span<const TrainExample> batch, const TrainingConfig& config,
                      double learning_rate) {
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  if (batch.size() > config.batch_size) {
    throw ValidationError("train_step: batch of " + std::to_string(batch.size()) + " exceeds batch size " +
                          std::to_string(config.batch_size));
  }
  const std::size_t classes = state.master.num_classes();
  for (const TrainExample& ex : batch) {
    if (ex.label >= classes) {
      throw ValidationError("train_step: label " + std::to_string(ex.label) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
  }
  Graph graph;
  LossBreakdown total;
  {
    GraphScope scope(graph);
    std::vector<LossBreakdown> per_image;
    per_image.reserve(batch.size());
    for (const TrainExample& ex : batch) per_image.push_back(image_loss(ex, state.master, state.assistant, config));
    total = total_loss(per_image);
  }
  const LossValues values = LossValues::of(total);
  if (!std::isfinite(values.total)) {
    auto where = graph.first_non_finite();
    graph.clear();
    throw std::runtime_error("non-finite training loss at step " + std::to_string(state.step) + "; first at " +
                             where.value_or("the loss itself"));
  }
  state.optimizer.zero_grad();
  graph.backward(total.total);
  state.optimizer.step(learning_rate);
  graph.clear();
  state.optimizer.zero_grad();
  ++state.step;
  if (config.wt_cadence == TransferCadence::kPerStep) apply_transfer(state, config);
  return values;
}

void weight_transfer(BlockParams& target, const BlockParams& source, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError("weight transfer lambda must lie in [0, 1]");
  if (!target.congruent(source)) throw ShapeError("weight transfer between blocks of different shapes");
  if (lambda == 1.0) return;
  std::vector<Tensor> to = target.tensors();
  std::vector<Tensor> from = source.tensors();
  for (std::size_t k = 0; k < to.size(); ++k) {
    std::span<double> t = to[k].mutable_data();
    std::span<const double> s = from[k].data();
    if (lambda == 0.0) {
      std::copy(s.begin(), s.end(), t.begin());
    } else {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = lambda * t[i] + (1.0 - lambda) * s[i];
    }
  }
}

void apply_transfer(TrainState& state, const TrainingConfig& config) {
  switch (config.wt_direction) {
    case TransferDirection::kUp: weight_transfer(state.master, state.assistant, config.lambda); break;
    case TransferDirection::kDown: weight_transfer(state.assistant, state.master, config.lambda); break;
    case TransferDirection::kOff: break;
  }
}

std::vector<Image> normalize_images(const std::vector<LabeledImage>& images, const ChannelStats& stats) {
  std::vector<Image> out;
  out.reserve(images.size());
  for (const LabeledImage& img : images) out.push_back(normalize(img.image, stats));
  return out;
}

TrainState train(const TrainingConfig& config, const std::vector<LabeledImage>& images, std::size_t num_classes) {
  config.validate();
  if (images.empty()) throw ValidationError("training set is empty");
  if (num_classes < 2) throw ValidationError("training needs at least 2 classes");
  for (const LabeledImage& img : images) {
    if (img.label >= num_classes) {
      throw ValidationError("image '" + img.id + "' has label " + std::to_string(img.label) + " but only " +
                            std::to_string(num_classes) + " classes");
    }
  }
  std::vector<const Image*> raw;
  for (const LabeledImage& img : images) raw.push_back(&img.image);
  TrainState state = TrainState::initialize(config, num_classes);
  state.normalization = compute_channel_stats(raw);
  const std::vector<Image> prepared = normalize_images(images, state.normalization);

  if (config.checkpoint_dir) std::filesystem::create_directories(*config.checkpoint_dir);
  const std::size_t n = images.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), 0);
    state.rng.shuffle(order);
    LossValues sum;
    double lr = 0.0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      std::vector<TrainExample> batch;
      for (std::size_t i = begin; i < std::min(n, begin + config.batch_size); ++i) {
        batch.push_back(TrainExample{&prepared[order[i]], images[order[i]].label, state.rng.next()});
      }
      lr = scheduled_learning_rate(config, state.step, steps_per_epoch);
      const LossValues v = train_step(state, batch, config, lr);
      sum.kl += v.kl;
      sum.arc_master += v.arc_master;
      sum.arc_assistant += v.arc_assistant;
      sum.total += v.total;
    }
    if (config.wt_cadence == TransferCadence::kPerEpoch) apply_transfer(state, config);
    if (!state.master.congruent(state.assistant)) throw std::logic_error("master and assistant lost congruence");
    state.epoch = epoch;

    const double count = static_cast<double>(n);
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = LossValues{sum.kl / count, sum.arc_master / count, sum.arc_assistant / count, sum.total / count};
    m.learning_rate = lr;
    m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    state.log.push_back(m);

    if (config.checkpoint_dir) {
      char name[64];
      std::snprintf(name, sizeof name, "master_epoch%03zu.bnet", epoch);
      write_checkpoint(*config.checkpoint_dir / name, state.master, state.normalization);
      std::snprintf(name, sizeof name, "assistant_epoch%03zu.bnet", epoch);
      write_checkpoint(*config.checkpoint_dir / name, state.assistant, state.normalization);
    }
  }
  return state;
}

std::string format_metrics(const std::vector<EpochMetrics>& log, bool include_wall_time) {
  std::string out = "epoch\tkl\tarc_master\tarc_assistant\ttotal\tlr";
  out += include_wall_time ? "\twall_ms\n" : "\n";
  for (const EpochMetrics& m : log) {
    out += std::to_string(m.epoch) + "\t" + format_real(m.loss.kl) + "\t" + format_real(m.loss.arc_master) + "\t" +
           format_real(m.loss.arc_assistant) + "\t" + format_real(m.loss.total) + "\t" + format_real(m.learning_rate);
    if (include_wall_time) out += "\t" + std::to_string(static_cast<long long>(std::llround(m.wall_ms)));
    out += "\n";
  }
  return out;
}

}  // namespace buddynet
