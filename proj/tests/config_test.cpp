#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "buddynet/config.hpp"
#include "buddynet/errors.hpp"

using namespace buddynet;

namespace {

Settings varied_settings() {
  Settings s;
  s.training.lambda = 0.35;
  s.training.batch_size = 7;
  s.training.epochs = 3;
  s.training.learning_rate = 1.0 / 3.0;
  s.training.min_learning_rate = 1e-7;
  s.training.warmup_epochs = 1;
  s.training.optimizer.weight_decay = 0.1 + 0.2;
  s.training.seed = 18446744073709551615ULL;
  s.training.kl_temperature = 0.7;
  s.training.kl_direction = KlDirection::kAssistantReference;
  s.training.wt_direction = TransferDirection::kDown;
  s.training.wt_cadence = TransferCadence::kPerStep;
  s.training.master_crops = CropSelection::kLocal;
  s.training.assistant_crops = CropSelection::kGlobalAndLocal;
  s.training.checkpoint_dir = "runs/ckpt";
  s.training.crops.n_local = 3;
  s.training.crops.local_scale = {0.1, 0.45};
  s.training.backbone.embed_dim = 32;
  s.training.head.margin = 0.25;
  s.diffusion.alpha = 0.85;
  s.diffusion.graph_k = 4;
  s.diffusion.heat_t = 2.5;
  s.diffusion.laplacian = HeatLaplacian::kUnnormalized;
  s.retrieval.per_segment_normalize = true;
  s.retrieval.crop_seed = 99;
  s.concat_assistant = true;
  return s;
}

}  // namespace

TEST(Config, ParseSkipsCommentsAndTrims) {
  ConfigMap m = parse_config("# comment\n\n  lambda =  0.25 \nepochs=4\n");
  EXPECT_EQ(m.size(), 2u);
  EXPECT_EQ(m["lambda"], "0.25");
  EXPECT_EQ(m["epochs"], "4");
}

TEST(Config, ParseErrors) {
  EXPECT_THROW(parse_config("lambda 0.3\n"), ValidationError);
  EXPECT_THROW(parse_config("= 3\n"), ValidationError);
  EXPECT_THROW(parse_config("a = 1\na = 2\n"), ValidationError);
}

TEST(Config, EveryKeyRoundTripsLosslessly) {
  const Settings s = varied_settings();
  ConfigMap printed = to_config(s);
  EXPECT_EQ(printed.size(), config_keys().size());
  ConfigMap reparsed = parse_config(print_config(printed));
  EXPECT_EQ(reparsed, printed);
  Settings back;
  apply_config(reparsed, back);
  EXPECT_TRUE(back == s);
  EXPECT_EQ(to_config(back), printed);
}

TEST(Config, DefaultsRoundTrip) {
  Settings back;
  back.training.lambda = 0.9;
  apply_config(to_config(Settings{}), back);
  EXPECT_TRUE(back == Settings{});
}

TEST(Config, RealsUseShortestExactText) {
  for (double v : {0.1, 1.0 / 3.0, 5e-4, 1e-300, 123456789.125, -0.0}) {
    EXPECT_EQ(parse_real(format_real(v), "x"), v);
  }
  EXPECT_EQ(format_real(0.5), "0.5");
  EXPECT_EQ(format_real(5e-4), "5e-04");
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  Settings s;
  EXPECT_THROW(apply_config({{"lamda", "0.5"}}, s), ValidationError);
  EXPECT_THROW(apply_config({{"lambda", "half"}}, s), ValidationError);
  EXPECT_THROW(apply_config({{"epochs", "-3"}}, s), ValidationError);
  EXPECT_THROW(apply_config({{"kl_direction", "sideways"}}, s), ValidationError);
  EXPECT_THROW(apply_config({{"heat_laplacian", "x"}}, s), ValidationError);
  EXPECT_THROW(apply_config({{"concat_assistant", "yes"}}, s), ValidationError);
}

TEST(Config, ReadsFromFile) {
  const auto path = std::filesystem::temp_directory_path() / "buddynet_config_test.cfg";
  {
    std::ofstream out(path);
    out << "epochs = 2\nwt_direction = off\n";
  }
  Settings s;
  apply_config(read_config(path), s);
  EXPECT_EQ(s.training.epochs, 2u);
  EXPECT_EQ(s.training.wt_direction, TransferDirection::kOff);
  EXPECT_THROW(read_config("/nonexistent/buddynet.cfg"), ValidationError);
}
